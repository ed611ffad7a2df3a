//! Corpus manifest: the family configuration and the seed of every shape.
//! Shapes are regenerated from their seeds, never stored.

use std::collections::HashSet;

use nfsdf_core::shape::{make_shape, FamilyConfig, ProceduralShape};
use serde::{Deserialize, Serialize};

use crate::config::CorpusConfig;
use crate::seed::derive_seed;
use crate::{Error, Result};

pub const FORMAT: &str = "nfsdf-corpus";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: String,
    pub version: u32,
    pub master_seed: u64,
    pub family: FamilyConfig,
    pub train: Vec<ShapeEntry>,
    pub heldout: Vec<ShapeEntry>,
}

impl CorpusManifest {
    /// Shape seeds come from the `corpus/train` and `corpus/heldout` seed
    /// domains. A seed already taken by an earlier shape is skipped, so the
    /// splits are disjoint by construction.
    pub fn generate(master_seed: u64, cfg: &CorpusConfig) -> Result<Self> {
        cfg.family.validate()?;
        let mut taken = HashSet::new();
        let mut draw = |domain: &str, prefix: &str, count: usize| {
            let mut out = Vec::with_capacity(count);
            let mut index = 0u64;
            while out.len() < count {
                let seed = derive_seed(master_seed, domain, index);
                index += 1;
                if taken.insert(seed) {
                    out.push(ShapeEntry {
                        id: format!("{prefix}-{:04}", out.len()),
                        seed,
                    });
                }
            }
            out
        };
        let train = draw("corpus/train", "train", cfg.train_count);
        let heldout = draw("corpus/heldout", "heldout", cfg.heldout_count);
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION,
            master_seed,
            family: cfg.family.clone(),
            train,
            heldout,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Data(format!(
                "not a {FORMAT} v{VERSION} manifest: {} v{}",
                self.format, self.version
            )));
        }
        let mut ids = HashSet::new();
        let mut seeds = HashSet::new();
        for e in self.train.iter().chain(&self.heldout) {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Data(format!("duplicate shape id {}", e.id)));
            }
            if !seeds.insert(e.seed) {
                return Err(Error::Data(format!(
                    "seed {} appears twice; the splits must be disjoint",
                    e.seed
                )));
            }
        }
        Ok(self.family.validate()?)
    }

    pub fn shape(&self, e: &ShapeEntry) -> Result<ProceduralShape> {
        Ok(make_shape(e.seed, &self.family)?)
    }

    pub fn heldout_entry(&self, id: &str) -> Option<&ShapeEntry> {
        self.heldout.iter().find(|e| e.id == id)
    }
}
