use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles `ids` with `seed` and puts the first `train_count` in the
/// training set.
pub fn make_split(ids: &[String], train_count: usize, seed: u64) -> Result<Split> {
    if train_count > ids.len() {
        return Err(Error::Data(format!("train_count {train_count} exceeds the {} available records", ids.len())));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(train_count);
    Ok(Split { train: shuffled, test })
}

/// Splits of several datasets under one seed.
///
/// Text form: a `seed = N` line, then `[name.train]` and `[name.test]`
/// sections holding one id per line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub seed: u64,
    pub datasets: BTreeMap<String, Split>,
}

impl SplitManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("seed = {}\n", self.seed);
        for (name, split) in &self.datasets {
            for (section, ids) in [("train", &split.train), ("test", &split.test)] {
                let _ = writeln!(out, "\n[{name}.{section}]");
                for id in ids {
                    let _ = writeln!(out, "{id}");
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut manifest = SplitManifest::default();
        let mut current: Option<(String, bool)> = None;
        let mut seen_seed = false;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Data(format!("split manifest line {}: `{line}`", no + 1));
            if let Some(section) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let (name, part) = section.rsplit_once('.').ok_or_else(bad)?;
                let train = match part {
                    "train" => true,
                    "test" => false,
                    _ => return Err(bad()),
                };
                manifest.datasets.entry(name.to_string()).or_default();
                current = Some((name.to_string(), train));
            } else if let Some((key, value)) = line.split_once('=').filter(|_| current.is_none()) {
                if key.trim() != "seed" {
                    return Err(bad());
                }
                manifest.seed = value.trim().parse().map_err(|_| bad())?;
                seen_seed = true;
            } else {
                let (name, train) = current.as_ref().ok_or_else(bad)?;
                let split = manifest.datasets.get_mut(name).expect("section registered");
                if *train { &mut split.train } else { &mut split.test }.push(line.to_string());
            }
        }
        if !seen_seed {
            return Err(Error::Data("split manifest has no seed line".into()));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
