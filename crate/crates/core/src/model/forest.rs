//! Class-balanced random forest over binary features.
//!
//! - Rows are first put in a canonical order (sorted by bits, then label), so
//!   the fitted model does not depend on input row order.
//! - Tree `t` draws everything from stream `(seed, t)`: a bootstrap of size
//!   `n` over the canonical rows (unless disabled), then feature subsets per
//!   node.
//! - Sample weight = class weight x bootstrap multiplicity, with class
//!   weights `w_c = n / (2 n_c)` computed on the full training labels when
//!   `class_balanced`, else 1.
//! - Node impurity is weighted Gini `W (1 - p^2 - (1-p)^2)` with `p` the
//!   positive weight fraction. A split is admissible when both children hold
//!   at least `min_samples_leaf` distinct rows; the lowest child impurity sum
//!   wins, ties going to the lower bit index.
//! - `mtry = max(1, floor(sqrt(B)))` bits are examined per node, drawn from
//!   the bits that are not constant on the node; if none of them admits a
//!   split the search continues through the remaining candidates.
//! - Leaves store the positive weight fraction; prediction is the mean
//!   over trees.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Fingerprint;
use crate::rng;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub class_balanced: bool,
    pub max_features: MaxFeatures,
    /// Draw a bootstrap sample per tree; when false every row enters once.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            min_samples_leaf: 3,
            class_balanced: true,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::invalid("n_trees", "must be >= 1"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::invalid("min_samples_leaf", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split { bit: u32, zero: u32, one: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &Fingerprint) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { bit, zero, one } => {
                    i = if x.get(bit as usize) { one } else { zero } as usize;
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub width: usize,
    pub config: ForestConfig,
    pub class_prior: f64,
    pub trees: Vec<Tree>,
}

struct Grower<'a> {
    rows: Vec<&'a Fingerprint>,
    w_pos: Vec<f64>,
    w_neg: Vec<f64>,
    width: usize,
    mtry: usize,
    min_leaf: usize,
}

fn gini(pos: f64, neg: f64) -> f64 {
    let w = pos + neg;
    if w <= 0.0 {
        return 0.0;
    }
    let p = pos / w;
    w * (1.0 - p * p - (1.0 - p) * (1.0 - p))
}

impl Grower<'_> {
    fn grow(&self, root: Vec<u32>, rng: &mut impl Rng) -> Tree {
        let mut nodes = Vec::new();
        let mut stack = vec![(root, 0usize)];
        nodes.push(Node::Leaf(0.0));
        while let Some((members, slot)) = stack.pop() {
            let (pos, neg) = members.iter().fold((0.0, 0.0), |(p, q), &i| {
                (p + self.w_pos[i as usize], q + self.w_neg[i as usize])
            });
            let leaf = Node::Leaf(pos / (pos + neg));
            if pos == 0.0 || neg == 0.0 || members.len() < 2 * self.min_leaf {
                nodes[slot] = leaf;
                continue;
            }
            match self.best_split(&members, rng) {
                None => nodes[slot] = leaf,
                Some(bit) => {
                    let (one, zero): (Vec<u32>, Vec<u32>) =
                        members.iter().partition(|&&i| self.rows[i as usize].get(bit));
                    let z = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[slot] = Node::Split {
                        bit: bit as u32,
                        zero: z as u32,
                        one: z as u32 + 1,
                    };
                    stack.push((one, z + 1));
                    stack.push((zero, z));
                }
            }
        }
        Tree { nodes }
    }

    fn best_split(&self, members: &[u32], rng: &mut impl Rng) -> Option<usize> {
        let words = self.rows[0].words().len();
        let mut any = vec![0u64; words];
        let mut all = vec![u64::MAX; words];
        for &i in members {
            for (k, w) in self.rows[i as usize].words().iter().enumerate() {
                any[k] |= w;
                all[k] &= w;
            }
        }
        let mut candidates: Vec<usize> = (0..self.width)
            .filter(|&b| (any[b / 64] & !all[b / 64]) >> (b % 64) & 1 == 1)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        candidates.shuffle(rng);
        let (tot_pos, tot_neg) = members.iter().fold((0.0, 0.0), |(p, q), &i| {
            (p + self.w_pos[i as usize], q + self.w_neg[i as usize])
        });
        let mut best: Option<(f64, usize)> = None;
        for (examined, &bit) in candidates.iter().enumerate() {
            if examined >= self.mtry && best.is_some() {
                break;
            }
            let (mut n1, mut p1, mut q1) = (0usize, 0.0, 0.0);
            for &i in members {
                if self.rows[i as usize].get(bit) {
                    n1 += 1;
                    p1 += self.w_pos[i as usize];
                    q1 += self.w_neg[i as usize];
                }
            }
            let n0 = members.len() - n1;
            if n1 < self.min_leaf || n0 < self.min_leaf {
                continue;
            }
            let score = gini(p1, q1) + gini(tot_pos - p1, tot_neg - q1);
            let better = match best {
                None => true,
                Some((s, b)) => score < s || (score == s && bit < b),
            };
            if better {
                best = Some((score, bit));
            }
        }
        best.map(|(_, b)| b)
    }
}

pub fn train_forest(x: &[Fingerprint], y: &[bool], config: &ForestConfig) -> Result<ForestModel> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(Error::invalid("y", "length differs from X"));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("X", "need at least two rows"));
    }
    let n_pos = y.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }
    let width = x[0].width();
    if let Some(bad) = x.iter().find(|f| f.width() != width) {
        return Err(Error::WidthMismatch {
            expected: width,
            found: bad.width(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].words().cmp(x[b].words()).then(y[a].cmp(&y[b])));
    let rows: Vec<&Fingerprint> = order.iter().map(|&i| &x[i]).collect();
    let labels: Vec<bool> = order.iter().map(|&i| y[i]).collect();
    let (wp, wn) = if config.class_balanced {
        (n as f64 / (2.0 * n_pos as f64), n as f64 / (2.0 * (n - n_pos) as f64))
    } else {
        (1.0, 1.0)
    };
    let mtry = match config.max_features {
        MaxFeatures::Sqrt => ((width as f64).sqrt().floor() as usize).max(1),
        MaxFeatures::All => width,
    };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(config.seed, t as u64);
            let mut counts = vec![u32::from(!config.bootstrap); n];
            if config.bootstrap {
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
            }
            let grower = Grower {
                rows: rows.clone(),
                w_pos: (0..n).map(|i| if labels[i] { wp * counts[i] as f64 } else { 0.0 }).collect(),
                w_neg: (0..n).map(|i| if labels[i] { 0.0 } else { wn * counts[i] as f64 }).collect(),
                width,
                mtry,
                min_leaf: config.min_samples_leaf,
            };
            let root: Vec<u32> = (0..n as u32).filter(|&i| counts[i as usize] > 0).collect();
            grower.grow(root, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        format_version: FORMAT_VERSION,
        width,
        config: config.clone(),
        class_prior: n_pos as f64 / n as f64,
        trees,
    })
}

impl ForestModel {
    pub fn predict_proba(&self, x: &[Fingerprint]) -> Result<Vec<f64>> {
        if let Some(bad) = x.iter().find(|f| f.width() != self.width) {
            return Err(Error::WidthMismatch {
                expected: self.width,
                found: bad.width(),
            });
        }
        let k = self.trees.len() as f64;
        Ok(x
            .par_iter()
            .map(|row| self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / k)
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ForestModel = serde_json::from_str(s)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::invalid(
                "format_version",
                format!("unsupported model format {}", m.format_version),
            ));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod unit {
    use super::*;

    fn fp(bits: &[usize]) -> Fingerprint {
        Fingerprint::from_indices(64, bits.iter().copied())
    }

    #[test]
    fn separable_pair() {
        let x = [fp(&[1]), fp(&[2])];
        let y = [true, false];
        let cfg = ForestConfig {
            n_trees: 25,
            min_samples_leaf: 1,
            ..Default::default()
        };
        let m = train_forest(&x, &y, &cfg).unwrap();
        let p = m.predict_proba(&x).unwrap();
        assert!(p[0] > 0.5 && p[1] < 0.5);
    }

    #[test]
    fn single_tree_memorises() {
        let x: Vec<Fingerprint> = (0..12).map(|i| fp(&[i, 20 + i % 3])).collect();
        let y: Vec<bool> = (0..12).map(|i| i % 2 == 0).collect();
        let cfg = ForestConfig {
            n_trees: 1,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            bootstrap: false,
            ..Default::default()
        };
        let m = train_forest(&x, &y, &cfg).unwrap();
        let p = m.predict_proba(&x).unwrap();
        for (pi, yi) in p.iter().zip(&y) {
            assert_eq!(*pi, if *yi { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn errors() {
        let x = [fp(&[1]), fp(&[2])];
        assert!(matches!(
            train_forest(&x, &[true, true], &ForestConfig::default()),
            Err(Error::SingleClass)
        ));
        let m = train_forest(&x, &[true, false], &ForestConfig::default()).unwrap();
        assert!(m.predict_proba(&[Fingerprint::zeros(128)]).is_err());
        let json = m.to_json().unwrap();
        assert_eq!(ForestModel::from_json(&json).unwrap(), m);
    }
}
