use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Pairwise-disjoint train/val/test id lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

const SECTIONS: [&str; 3] = ["train", "val", "test"];

impl DatasetSplit {
    /// Plain-text form: a `[section]` header per split followed by one id per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, ids) in SECTIONS.iter().zip([&self.train, &self.val, &self.test]) {
            let _ = writeln!(out, "[{name}]");
            for id in ids {
                let _ = writeln!(out, "{id}");
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut split = Self::default();
        let mut current: Option<&mut Vec<String>> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(match name {
                    "train" => &mut split.train,
                    "val" => &mut split.val,
                    "test" => &mut split.test,
                    other => {
                        return Err(Error::Dataset(format!("line {}: unknown split `{other}`", lineno + 1)))
                    }
                });
                continue;
            }
            match current.as_deref_mut() {
                Some(ids) => ids.push(line.to_owned()),
                None => {
                    return Err(Error::Dataset(format!(
                        "line {}: sample id before any [section]",
                        lineno + 1
                    )))
                }
            }
        }
        split.check_disjoint()?;
        Ok(split)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::Dataset(format!("sample `{id}` appears in more than one split")));
            }
        }
        Ok(())
    }
}

/// Seeded shuffle of `ids`, then the first `train`, next `val` and next `test`.
pub fn split_dataset(ids: &[String], counts: (usize, usize, usize), seed: u64) -> Result<DatasetSplit> {
    let (train, val, test) = counts;
    let requested = train + val + test;
    if requested > ids.len() {
        return Err(Error::InsufficientSamples {
            requested,
            available: ids.len(),
        });
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let split = DatasetSplit {
        train: shuffled[..train].to_vec(),
        val: shuffled[train..train + val].to_vec(),
        test: shuffled[train + val..requested].to_vec(),
    };
    split.check_disjoint()?;
    Ok(split)
}
