//! Codebook construction strategies.
//!
//! Each algorithm implements [`CodebookBuilder`] and is registered under a
//! name in the [`BuilderRegistry`], so callers pick the algorithm at runtime
//! (`binning`, `density`, `kmedoids`).

mod binning;
mod density;
mod kmedoids;

use std::collections::BTreeMap;

pub use binning::{binning_codes, binning_level, binning_level_index, binning_levels, BinningBuilder};
pub use density::{density_codes, DensityBuilder, DensityConfig, Kernel};
pub use kmedoids::{
    kmedoids_codes, kmedoids_cost, kmedoids_run, KMedoidsBuilder, KMedoidsConfig, KMedoidsOutcome,
};

use crate::error::{Error, Result};
use crate::ingest::PixelHistogram;
use crate::pixel::{Codebook, DistanceMetric};

pub trait CodebookBuilder: Send + Sync {
    fn name(&self) -> &'static str;

    fn build(&self, hist: &PixelHistogram) -> Result<Codebook>;
}

/// Union of knobs accepted by the registered builders. Each builder reads
/// only the fields it needs.
#[derive(Clone, Debug)]
pub struct BuilderParams {
    pub k: usize,
    pub r: f64,
    pub metric: DistanceMetric,
    pub seed: u64,
    pub max_iterations: usize,
    pub candidate_cap: usize,
}

impl Default for BuilderParams {
    fn default() -> Self {
        BuilderParams {
            k: 2,
            r: 0.0,
            metric: DistanceMetric::L1,
            seed: 0,
            max_iterations: 10,
            candidate_cap: 4096,
        }
    }
}

pub type BuilderFactory = fn(&BuilderParams) -> Result<Box<dyn CodebookBuilder>>;

pub struct BuilderRegistry {
    factories: BTreeMap<&'static str, BuilderFactory>,
}

impl BuilderRegistry {
    pub fn empty() -> Self {
        BuilderRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: BuilderFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, params: &BuilderParams) -> Result<Box<dyn CodebookBuilder>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::config(format!(
                "unknown codebook algorithm {name:?}; available: {}",
                self.names().join(", ")
            ))
        })?;
        factory(params)
    }
}

impl Default for BuilderRegistry {
    fn default() -> Self {
        let mut reg = BuilderRegistry::empty();
        reg.register("binning", |p| Ok(Box::new(BinningBuilder::new(p.k)?)));
        reg.register("density", |p| {
            Ok(Box::new(DensityBuilder(DensityConfig::new(p.k, p.r)?)))
        });
        reg.register("kmedoids", |p| {
            Ok(Box::new(KMedoidsBuilder(KMedoidsConfig {
                k: p.k,
                max_iterations: p.max_iterations,
                metric: p.metric,
                seed: p.seed,
                candidate_cap: p.candidate_cap,
            })))
        });
        reg
    }
}
