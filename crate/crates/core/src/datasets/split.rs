use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};

/// Disjoint underwater and clean id sets drawn from a paired manifest, so
/// that no scene contributes both its degraded and its clean version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnpairedSplit {
    pub seed: u64,
    pub underwater_ids: BTreeSet<String>,
    pub clean_ids: BTreeSet<String>,
}

impl UnpairedSplit {
    /// Picks `floor(X/2)` underwater ids uniformly without replacement; the
    /// remaining ids form the clean side.
    pub fn from_ids(ids: &[String], seed: u64) -> Result<Self> {
        let x = ids.len();
        if x < 2 {
            return Err(Error::Split(format!("need at least 2 records to form both sides, got {x}")));
        }
        let distinct: BTreeSet<&String> = ids.iter().collect();
        if distinct.len() != x {
            return Err(Error::Split("ids are not unique".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked: BTreeSet<usize> = rand::seq::index::sample(&mut rng, x, x / 2).into_iter().collect();
        let mut underwater_ids = BTreeSet::new();
        let mut clean_ids = BTreeSet::new();
        for (i, id) in ids.iter().enumerate() {
            if picked.contains(&i) {
                underwater_ids.insert(id.clone());
            } else {
                clean_ids.insert(id.clone());
            }
        }
        Ok(Self {
            seed,
            underwater_ids,
            clean_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.underwater_ids.len() + self.clean_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(id) = self.underwater_ids.intersection(&self.clean_ids).next() {
            return Err(Error::Split(format!("id '{id}' is on both sides")));
        }
        if self.underwater_ids.is_empty() || self.clean_ids.is_empty() {
            return Err(Error::Split("both sides must be non-empty".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: UnpairedSplit =
            serde_json::from_str(&text).map_err(|e| Error::Split(format!("{}: {e}", path.display())))?;
        split.validate()?;
        Ok(split)
    }
}

pub fn unpaired_split(manifest: &DatasetManifest, seed: u64) -> Result<UnpairedSplit> {
    let ids: Vec<String> = manifest.ids().map(str::to_string).collect();
    UnpairedSplit::from_ids(&ids, seed)
}
