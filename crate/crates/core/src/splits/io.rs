//! Fold-assignment files: CSV `protocol,fold_key,role,record_index`.

use std::io::{Read, Write};

use super::{Fold, FoldSet, Protocol};
use crate::error::{Error, Result};

pub fn write_foldset<W: Write>(out: W, fs: &FoldSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["protocol", "fold_key", "role", "record_index"])?;
    for fold in &fs.folds {
        for (role, idx) in [("train", &fold.train), ("test", &fold.test)] {
            for i in idx {
                w.write_record([fs.protocol.as_str(), &fold.key, role, &i.to_string()])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Folds come back in order of first appearance. Provenance parameters are
/// not part of the file.
pub fn read_foldset<R: Read>(input: R) -> Result<FoldSet> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["protocol", "fold_key", "role", "record_index"] {
        return Err(Error::invalid("folds", "header must be protocol,fold_key,role,record_index"));
    }
    let mut protocol = None;
    let mut folds: Vec<Fold> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let p = Protocol::parse(&row[0]).ok_or_else(|| Error::invalid("protocol", row[0].to_string()))?;
        if *protocol.get_or_insert(p) != p {
            return Err(Error::invalid("protocol", "mixed protocols in one file"));
        }
        let idx: usize = row[3]
            .parse()
            .map_err(|_| Error::invalid("record_index", row[3].to_string()))?;
        let pos = match folds.iter().position(|f| f.key == row[1]) {
            Some(p) => p,
            None => {
                folds.push(Fold {
                    key: row[1].to_string(),
                    train: Vec::new(),
                    test: Vec::new(),
                });
                folds.len() - 1
            }
        };
        match &row[2] {
            "train" => folds[pos].train.push(idx),
            "test" => folds[pos].test.push(idx),
            other => return Err(Error::invalid("role", other.to_string())),
        }
    }
    for f in &mut folds {
        f.train.sort_unstable();
        f.test.sort_unstable();
    }
    Ok(FoldSet {
        protocol: protocol.ok_or_else(|| Error::invalid("folds", "no fold rows"))?,
        folds,
        params: Default::default(),
        dropped: Vec::new(),
    })
}
