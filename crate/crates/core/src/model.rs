//! A trained synthesizer of any supported kind.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clbn::ClbnModel;
use crate::ctgan::CtganModel;
use crate::data::{Schema, Table};
use crate::error::{Error, Result};
use crate::tensor::nn::Params;
use crate::tvae::TvaeModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum Model {
    Ctgan(CtganModel),
    Tvae(TvaeModel),
    Clbn(ClbnModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Ctgan(_) => "ctgan",
            Model::Tvae(_) => "tvae",
            Model::Clbn(_) => "clbn",
        }
    }

    pub fn schema(&self) -> &Schema {
        match self {
            Model::Ctgan(m) => m.transformer.schema(),
            Model::Tvae(m) => m.transformer.schema(),
            Model::Clbn(m) => &m.schema,
        }
    }

    /// `condition` is a (column, category) pair; only CTGAN supports it.
    pub fn sample<R: Rng>(&self, n: usize, condition: Option<(&str, &str)>, rng: &mut R) -> Result<Table> {
        match (self, condition) {
            (Model::Ctgan(m), c) => {
                let mask = c.map(|(col, cat)| m.condition(col, cat)).transpose()?;
                m.sample(n, mask, rng)
            }
            (_, Some(_)) => Err(Error::Unsupported(format!(
                "conditional sampling is not available for {} models",
                self.kind()
            ))),
            (Model::Tvae(m), None) => m.sample(n, rng),
            (Model::Clbn(m), None) => m.sample(n, rng),
        }
    }

    /// Parameter sets whose values live in the binary payload, in file order.
    pub fn param_sets(&self) -> Vec<&Params> {
        match self {
            Model::Ctgan(m) => vec![&m.generator.params],
            Model::Tvae(m) => vec![&m.encoder.params, &m.decoder.params],
            Model::Clbn(_) => Vec::new(),
        }
    }

    pub fn param_sets_mut(&mut self) -> Vec<&mut Params> {
        match self {
            Model::Ctgan(m) => vec![&mut m.generator.params],
            Model::Tvae(m) => vec![&mut m.encoder.params, &mut m.decoder.params],
            Model::Clbn(_) => Vec::new(),
        }
    }
}
