//! Property tests for the library's invariants.

use std::collections::BTreeMap;

use coldbench::calibrate::{fit_platt, fit_temperature, PlattParams, TemperatureParam};
use coldbench::dataset::{eligible_targets, BinarisationScheme, Cohort, Combinator, E3Ligase, EligibilityRule, Record};
use coldbench::decompose::{expected_max, factorial_marginals, noise_calibration, power_grid, CellSummary, LevelUnit, NoiseCurve, NoisePoint};
use coldbench::features::{featurize_cohort, hashed_ngram_fingerprint, tanimoto, Fingerprint, NgramParams};
use coldbench::metrics::{auroc, ece10, pooled_auroc, FoldPredictions};
use coldbench::model::{train_forest, ForestConfig};
use coldbench::stats::{bootstrap_clusters, nested_anova, oneway_anova, twoway_type2_anova};
use coldbench::synth::{generate_cohort, generate_observation_table, ObservationSpec, SynthSpec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(i: usize, target: &str, doi: &str, label: bool) -> Record {
    Record {
        compound_id: format!("C{i}"),
        structure: format!("S{i}"),
        target_id: target.into(),
        family_id: None,
        e3: E3Ligase::Crbn,
        doi: doi.into(),
        year: 2020,
        dc50_nm: None,
        dmax_pct: None,
        cell_line: None,
        label,
        explicit_label: true,
    }
}

fn scores_labels(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    n.prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, y)| y.iter().any(|&l| l) && y.iter().any(|&l| !l))
}

fn fingerprint(width: usize) -> impl Strategy<Value = Fingerprint> {
    prop::collection::vec(any::<bool>(), width)
        .prop_map(move |bits| Fingerprint::from_indices(width, bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binarisation_is_monotone(dc50 in 0.1f64..1e5, dmax in 0.0f64..100.0, t in 1.0f64..1e4, d in 1.0f64..99.0, dt in 0.0f64..1e3, dd in 0.0f64..20.0) {
        for comb in [Combinator::Or, Combinator::And] {
            let base = BinarisationScheme::new("base", t, d, comb).unwrap();
            let stricter = BinarisationScheme::new("strict", (t - dt).max(0.5), (d + dd).min(99.5), comb).unwrap();
            let b = base.label(Some(dc50), Some(dmax)).unwrap();
            let s = stricter.label(Some(dc50), Some(dmax)).unwrap();
            prop_assert!(!s || b, "tightening produced a new positive");
        }
    }

    #[test]
    fn loto_eligibility_ignores_record_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut recs: Vec<Record> = (0..120)
            .map(|i| record(i, &format!("T{}", i % 7), "d", rng.random_bool(if i % 7 == 0 { 0.97 } else { 0.5 })))
            .collect();
        let a = eligible_targets(&Cohort::new(recs.clone()), EligibilityRule::Loto);
        recs.shuffle(&mut rng);
        prop_assert_eq!(a, eligible_targets(&Cohort::new(recs), EligibilityRule::Loto));
    }

    #[test]
    fn tanimoto_symmetric_and_identity(a in fingerprint(96), b in fingerprint(96)) {
        let ab = tanimoto(&a, &b).unwrap();
        prop_assert_eq!(ab, tanimoto(&b, &a).unwrap());
        if a.popcount() > 0 && b.popcount() > 0 {
            prop_assert_eq!(ab == 1.0, a == b);
        }
    }

    #[test]
    fn auroc_invariant_to_monotone_maps((s, y) in scores_labels(2..80), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let base = auroc(&s, &y).unwrap();
        let mapped: Vec<f64> = s.iter().map(|v| (scale * v + shift).exp()).collect();
        prop_assert_eq!(auroc(&mapped, &y).unwrap(), base);
        let cubed: Vec<f64> = s.iter().map(|v| v.powi(3)).collect();
        prop_assert_eq!(auroc(&cubed, &y).unwrap(), base);
    }

    #[test]
    fn auroc_complement_sums_to_one((s, y) in scores_labels(2..80)) {
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] < w[1]));
        let neg: Vec<bool> = y.iter().map(|l| !l).collect();
        prop_assert!((auroc(&s, &y).unwrap() + auroc(&s, &neg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pooled_single_fold_equals_fold((s, y) in scores_labels(2..60)) {
        let f = FoldPredictions { fold_key: "f".into(), probs: s.clone(), labels: y.clone() };
        prop_assert_eq!(pooled_auroc(&[f]).unwrap(), auroc(&s, &y).unwrap());
    }

    #[test]
    fn ece_invariant_to_order((s, y) in scores_labels(2..60), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let s2: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let y2: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
        prop_assert!((ece10(&s, &y) - ece10(&s2, &y2)).abs() < 1e-12);
    }

    #[test]
    fn calibration_preserves_auroc((s, y) in scores_labels(10..80)) {
        let base = auroc(&s, &y).unwrap();
        let platt = fit_platt(&s, &y, false).unwrap();
        if platt.params.a > 0.0 {
            prop_assert_eq!(auroc(&platt.params.apply_all(&s), &y).unwrap(), base);
        }
        let t = fit_temperature(&s, &y).unwrap();
        prop_assert_eq!(auroc(&t.apply_all(&s), &y).unwrap(), base);
    }

    #[test]
    fn identity_calibrators(p in 1e-6f64..(1.0 - 1e-6)) {
        prop_assert!((PlattParams::IDENTITY.apply(p) - p).abs() < 1e-9);
        let unit = TemperatureParam { t: 1.0 };
        prop_assert!((unit.apply(p) - p).abs() < 1e-9);
    }

    #[test]
    fn anova_ss_additive_and_shares_bounded(seed in any::<u64>(), shift in -10.0f64..10.0, scale in 0.2f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut a, mut b, mut t, mut p, mut y) = (vec![], vec![], vec![], vec![], vec![]);
        for ti in 0..4 {
            for pi in 0..rng.random_range(2..4) {
                for _ in 0..rng.random_range(2..5) {
                    a.push(format!("a{ti}"));
                    b.push(format!("b{}", pi % 2));
                    t.push(format!("T{ti}"));
                    p.push(format!("T{ti}/P{pi}"));
                    y.push(rng.random_range(-1.0..1.0) + 0.3 * ti as f64);
                }
            }
        }
        prop_assume!(twoway_type2_anova(&y, &a, &b).is_ok());
        let rel = |sum: f64, tot: f64| (sum - tot).abs() <= 1e-9 * tot.max(1e-300);
        let y2: Vec<f64> = y.iter().map(|v| v * scale + shift).collect();

        let one = oneway_anova(&y, &t).unwrap();
        prop_assert!(rel(one.ss_between + one.ss_within, one.ss_total));
        prop_assert!(one.omega_sq <= one.eta_sq);
        let one2 = oneway_anova(&y2, &t).unwrap();
        prop_assert!((one.eta_sq - one2.eta_sq).abs() < 1e-9);

        let two = twoway_type2_anova(&y, &a, &b).unwrap();
        for term in &two.terms[..3] {
            prop_assert!(term.omega_sq <= term.eta_sq + 1e-12);
        }
        if two.balanced {
            prop_assert!(rel(two.terms.iter().map(|x| x.ss).sum(), two.ss_total));
        }

        let nest = nested_anova(&y, &t, &p).unwrap();
        prop_assert!(rel(nest.terms.iter().map(|x| x.ss).sum(), nest.ss_total));
        let shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let nest2 = nested_anova(&shifted, &t, &p).unwrap();
        prop_assert!((nest.lab().omega_sq - nest2.lab().omega_sq).abs() < 1e-9);
        for term in &nest.terms[..2] {
            prop_assert!(term.omega_sq <= term.eta_sq + 1e-12);
        }
    }

    #[test]
    fn factorial_marginals_are_linear(means in prop::collection::vec(0.5f64..0.8, 16), c in 0.1f64..3.0, k in -0.5f64..0.5) {
        let cells = |f: &dyn Fn(f64) -> f64| -> BTreeMap<String, CellSummary> {
            means.iter().enumerate().map(|(i, &m)| (format!("{i:04b}"), CellSummary::from_mean(f(m)))).collect()
        };
        let base = factorial_marginals(&cells(&|m| m), 0, 100, 0).unwrap();
        let scaled = factorial_marginals(&cells(&|m| c * m), 0, 100, 0).unwrap();
        let shifted = factorial_marginals(&cells(&|m| m + k), 0, 100, 0).unwrap();
        for ((b, s), h) in base.iter().zip(&scaled).zip(&shifted) {
            prop_assert!((s.marginal - c * b.marginal).abs() < 1e-12);
            prop_assert!((h.marginal - b.marginal).abs() < 1e-12);
        }
    }

    #[test]
    fn power_mde_monotone(r1 in 0.0f64..0.9, dr in 0.01f64..0.09, n in 5usize..200, sd in 0.01f64..0.5) {
        let rows = power_grid(n, 10, 4, &[r1, r1 + dr], sd, 0.05, 0.8).unwrap();
        prop_assert!(rows[1].mde > rows[0].mde);
        let more = power_grid(n + 1, 10, 4, &[r1], sd, 0.05, 0.8).unwrap();
        prop_assert!(more[0].mde < rows[0].mde);
    }

    #[test]
    fn expected_max_increasing(n in 2usize..100_000, sigma in 0.001f64..1.0) {
        prop_assert!(expected_max(n + 1, sigma) > expected_max(n, sigma));
        prop_assert!(expected_max(n, sigma * 1.01) > expected_max(n, sigma));
    }

    #[test]
    fn noise_projection_affine_equivariant(noise in prop::collection::vec(-0.004f64..0.004, 5), alpha in 0.1f64..10.0, beta in -5.0f64..5.0) {
        // The projection is a distance on the level axis, so an offset drops
        // out and a scale carries through. The band is anchored at the
        // projection abscissa and is only checked under pure scaling.
        let levels = [0.0, 5.0, 10.0, 20.0, 30.0];
        let pts = |f: &dyn Fn(f64) -> f64| -> Vec<NoisePoint> {
            levels.iter().zip(&noise).map(|(&l, e)| NoisePoint { level: f(l), auroc_mean: 0.66 - 0.005 * l + e, auroc_sd: 0.0, n_seeds: 1 }).collect()
        };
        let a = noise_calibration(&NoiseCurve::fit(pts(&|l| l), LevelUnit::Sigma).unwrap(), 0.05).unwrap();
        let b = noise_calibration(&NoiseCurve::fit(pts(&|l| alpha * l + beta), LevelUnit::Sigma).unwrap(), 0.05).unwrap();
        prop_assert!((b.projection - alpha * a.projection).abs() < 1e-9 * b.projection.abs().max(1.0));
        let b = noise_calibration(&NoiseCurve::fit(pts(&|l| alpha * l), LevelUnit::Sigma).unwrap(), 0.05).unwrap();
        let (al, ah) = a.band80.unwrap();
        let (bl, bh) = b.band80.unwrap();
        prop_assert!(((bh - bl) - alpha * (ah - al)).abs() < 1e-8 * (bh - bl).abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn forest_invariant_to_row_permutation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Fingerprint> = (0..60).map(|_| Fingerprint::from_indices(64, (0..64).filter(|_| rng.random_bool(0.3)))).collect();
        let y: Vec<bool> = x.iter().map(|f| f.get(3) ^ rng.random_bool(0.2)).collect();
        prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
        let cfg = ForestConfig { n_trees: 15, seed, ..Default::default() };
        let m1 = train_forest(&x, &y, &cfg).unwrap();
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.shuffle(&mut rng);
        let xs: Vec<Fingerprint> = idx.iter().map(|&i| x[i].clone()).collect();
        let ys: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
        let m2 = train_forest(&xs, &ys, &cfg).unwrap();
        prop_assert_eq!(m1.predict_proba(&x).unwrap(), m2.predict_proba(&x).unwrap());
    }

    #[test]
    fn featurisation_and_generators_are_pure(seed in 0u64..1000) {
        let spec = SynthSpec { n_targets: 3, compounds_per_paper: (6, 6), compound_reuse_rate: 0.2, seed, ..Default::default() };
        let a = generate_cohort(&spec).unwrap();
        let b = generate_cohort(&spec).unwrap();
        prop_assert_eq!(a.records(), b.records());
        let p = NgramParams::default();
        prop_assert_eq!(featurize_cohort(&a, &p).unwrap(), featurize_cohort(&b, &p).unwrap());
        let os = ObservationSpec { n_targets: 4, papers_per_target: (2, 3), reps: 3, mu: 0.6, sigma_target: 0.05, sigma_lab: 0.1, sigma_eps: 0.1, seed };
        prop_assert_eq!(generate_observation_table(&os).unwrap(), generate_observation_table(&os).unwrap());
    }

    #[test]
    fn bootstrap_independent_of_pool_size(seed in any::<u64>()) {
        let vals: Vec<f64> = (0..25).map(|i| ((i * 37 + 11) % 17) as f64).collect();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                bootstrap_clusters(vals.len(), 300, seed, |s| Some(s.iter().map(|&i| vals[i]).sum::<f64>() / s.len() as f64)).unwrap()
            })
        };
        prop_assert_eq!(run(1), run(4));
    }
}

#[test]
fn tanimoto_distance_triangle_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut fp = || Fingerprint::from_indices(64, (0..64).filter(|_| rng.random_bool(0.25)));
    for _ in 0..1000 {
        let (a, b, c) = (fp(), fp(), fp());
        let d = |x: &Fingerprint, y: &Fingerprint| 1.0 - tanimoto(x, y).unwrap();
        assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }
}

#[test]
fn one_character_change_lowers_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let alphabet = b"CNOS=#()";
    for _ in 0..100 {
        let s: Vec<u8> = (0..30).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        let mut t = s.clone();
        let pos = rng.random_range(0..t.len());
        t[pos] = if t[pos] == b'C' { b'N' } else { b'C' };
        let a = hashed_ngram_fingerprint(std::str::from_utf8(&s).unwrap(), 2, 4, 2048).unwrap();
        let b = hashed_ngram_fingerprint(std::str::from_utf8(&t).unwrap(), 2, 4, 2048).unwrap();
        assert!(tanimoto(&a, &b).unwrap() < 1.0);
    }
}

/// Mean prediction of balanced and unbalanced forests on a 90/10 set whose
/// features are `bits` independent fair coins.
fn no_signal_means(bits: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fp = || Fingerprint::from_indices(64, (0..bits).filter(|_| rng.random_bool(0.5)).collect::<Vec<_>>());
    let x: Vec<Fingerprint> = (0..300).map(|_| fp()).collect();
    let test: Vec<Fingerprint> = (0..200).map(|_| fp()).collect();
    let y: Vec<bool> = (0..300).map(|i| i % 10 != 0).collect();
    let mean_pred = |balanced: bool| {
        let cfg = ForestConfig { n_trees: 50, class_balanced: balanced, seed: 1, ..Default::default() };
        let p = train_forest(&x, &y, &cfg).unwrap().predict_proba(&test).unwrap();
        p.iter().sum::<f64>() / p.len() as f64
    };
    (mean_pred(true), mean_pred(false))
}

#[test]
fn balanced_weights_centre_no_signal_predictions() {
    // Coarse features: leaves hold many rows of both classes.
    let (bal, unbal) = no_signal_means(2);
    assert!((0.4..=0.6).contains(&bal), "balanced mean {bal}");
    assert!((unbal - 0.9).abs() < 0.05, "unbalanced mean {unbal}");
    // High-dimensional noise lets leaves isolate rows; weighting still pulls
    // the mean down.
    let (bal, unbal) = no_signal_means(64);
    assert!(bal < unbal - 0.05, "balanced {bal} unbalanced {unbal}");
}

#[test]
fn ensemble_variance_shrinks_with_trees() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x: Vec<Fingerprint> = (0..200).map(|_| Fingerprint::from_indices(64, (0..64).filter(|_| rng.random_bool(0.3)))).collect();
        let y: Vec<bool> = x.iter().map(|f| (f.get(1) || f.get(2)) ^ rng.random_bool(0.15)).collect();
        let test: Vec<Fingerprint> = (0..100).map(|_| Fingerprint::from_indices(64, (0..64).filter(|_| rng.random_bool(0.3)))).collect();
        // Mean squared gap between two independent forests of the same size.
        let half_gap = |n: usize| {
            let p = |s: u64| train_forest(&x, &y, &ForestConfig { n_trees: n, seed: s, ..Default::default() }).unwrap().predict_proba(&test).unwrap();
            let (a, b) = (p(seed * 1000 + 1), p(seed * 1000 + 2));
            a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / a.len() as f64
        };
        let gaps: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| half_gap(n)).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "seed {seed}: {gaps:?}");
    }
}
