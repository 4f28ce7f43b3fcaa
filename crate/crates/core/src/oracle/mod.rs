//! Known joint distributions used to simulate data and score synthesizers.

mod bayesnet;
mod bif;
mod gmm;

use rand::Rng;

pub use bayesnet::{BayesNet, BnNode, LOG_ZERO, REFIT_SMOOTHING};
pub use bif::{parse_bif, write_bif, BifDocument, BifProbability, BifVariable};
pub use gmm::{Gaussian2, GmmKind, GmmOracle};

use crate::data::{Schema, Table};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Oracle {
    Gmm(GmmOracle),
    Bn(BayesNet),
}

impl Oracle {
    /// `grid`, `gridr`, `ring` or `bif:PATH`.
    pub fn from_spec(spec: &str, seed: u64) -> Result<Self> {
        if let Some(path) = spec.strip_prefix("bif:") {
            return Ok(Oracle::Bn(BayesNet::load(path)?));
        }
        match spec.parse::<GmmKind>() {
            Ok(kind) => Ok(Oracle::Gmm(GmmOracle::new(kind, seed))),
            Err(_) => Err(Error::InvalidArgument(format!(
                "unknown oracle `{spec}` (expected grid, gridr, ring or bif:PATH)"
            ))),
        }
    }

    pub fn schema(&self) -> Schema {
        match self {
            Oracle::Gmm(_) => GmmOracle::schema(),
            Oracle::Bn(b) => b.schema(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Table {
        match self {
            Oracle::Gmm(g) => g.sample(n, rng),
            Oracle::Bn(b) => b.sample(n, rng),
        }
    }

    pub fn log_likelihood(&self, table: &Table) -> Result<f64> {
        match self {
            Oracle::Gmm(g) => g.log_likelihood(table),
            Oracle::Bn(b) => b.log_likelihood(table),
        }
    }

    /// Same structure, parameters re-estimated from `table`.
    pub fn refit<R: Rng + ?Sized>(&self, table: &Table, rng: &mut R) -> Result<Oracle> {
        match self {
            Oracle::Gmm(g) => Ok(Oracle::Gmm(g.refit(table, rng)?)),
            Oracle::Bn(b) => Ok(Oracle::Bn(b.refit(table, REFIT_SMOOTHING)?)),
        }
    }
}
