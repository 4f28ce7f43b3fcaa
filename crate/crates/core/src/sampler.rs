//! Condition vectors and training-by-sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Table;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::transform::DataTransformer;

/// How the training-time condition category is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CondMode {
    /// PMF ∝ log(1 + count).
    #[default]
    LogFreq,
    /// PMF ∝ count.
    RawFreq,
    /// No condition vector at all.
    None,
}

impl std::str::FromStr for CondMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logfreq" | "log_freq" => Ok(CondMode::LogFreq),
            "rawfreq" | "raw_freq" => Ok(CondMode::RawFreq),
            "none" => Ok(CondMode::None),
            _ => Err(Error::InvalidArgument(format!("unknown condition mode `{s}`"))),
        }
    }
}

/// Selected (discrete column, category); `slot` counts discrete columns only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskSet {
    pub slot: usize,
    pub category: usize,
}

/// Geometry of the condition vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondLayout {
    /// Table column index of each discrete slot.
    pub columns: Vec<usize>,
    /// Start of each slot in the condition vector.
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
    pub width: usize,
}

impl CondLayout {
    pub fn from_sizes(columns: Vec<usize>, sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut width = 0;
        for s in &sizes {
            offsets.push(width);
            width += s;
        }
        CondLayout {
            columns,
            offsets,
            sizes,
            width,
        }
    }

    pub fn empty() -> Self {
        Self::from_sizes(Vec::new(), Vec::new())
    }

    pub fn slots(&self) -> usize {
        self.sizes.len()
    }

    pub fn check(&self, m: MaskSet) -> Result<()> {
        if m.slot >= self.slots() || m.category >= self.sizes[m.slot] {
            return Err(Error::InvalidArgument(format!(
                "condition ({}, {}) is outside the discrete layout",
                m.slot, m.category
            )));
        }
        Ok(())
    }

    /// cond = m_1 ⊕ … ⊕ m_{N_d} with a single one at the selected position.
    pub fn cond_vector(&self, m: MaskSet) -> Result<Vec<f64>> {
        self.check(m)?;
        let mut v = vec![0.0; self.width];
        v[self.offsets[m.slot] + m.category] = 1.0;
        Ok(v)
    }

    pub fn cond_matrix(&self, masks: &[MaskSet]) -> Result<Matrix> {
        let mut out = Matrix::zeros(masks.len(), self.width);
        for (r, m) in masks.iter().enumerate() {
            self.check(*m)?;
            out.set(r, self.offsets[m.slot] + m.category, 1.0);
        }
        Ok(out)
    }
}

fn draw<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            if u < *w {
                return i;
            }
            last = i;
        }
        u -= w;
    }
    last
}

/// Per-category row lists of a training table plus the category counts.
#[derive(Clone, Debug)]
pub struct CategoryIndex {
    rows: Vec<Vec<Vec<usize>>>,
}

impl CategoryIndex {
    pub fn build(table: &Table, layout: &CondLayout) -> Result<Self> {
        let mut rows = Vec::with_capacity(layout.slots());
        for (slot, &col) in layout.columns.iter().enumerate() {
            let mut lists = vec![Vec::new(); layout.sizes[slot]];
            for (r, &c) in table.discrete(col)?.iter().enumerate() {
                lists[c as usize].push(r);
            }
            rows.push(lists);
        }
        Ok(CategoryIndex { rows })
    }

    pub fn counts(&self, slot: usize) -> Vec<usize> {
        self.rows[slot].iter().map(Vec::len).collect()
    }

    pub fn rows(&self, m: MaskSet) -> &[usize] {
        &self.rows[m.slot][m.category]
    }

    /// Uniform row among those holding the selected category.
    pub fn sample_row<R: Rng + ?Sized>(&self, m: MaskSet, rng: &mut R) -> Result<usize> {
        let list = self
            .rows
            .get(m.slot)
            .and_then(|s| s.get(m.category))
            .ok_or_else(|| Error::InvalidArgument("condition refers to an unknown column or category".into()))?;
        if list.is_empty() {
            return Err(Error::InvalidArgument("no training rows hold the requested category".into()));
        }
        Ok(list[rng.gen_range(0..list.len())])
    }
}

/// Draws training and generation conditions from category counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondSampler {
    pub layout: CondLayout,
    pub counts: Vec<Vec<usize>>,
    pub mode: CondMode,
}

impl CondSampler {
    pub fn new(layout: CondLayout, counts: Vec<Vec<usize>>, mode: CondMode) -> Result<Self> {
        if counts.len() != layout.slots() || counts.iter().zip(&layout.sizes).any(|(c, &s)| c.len() != s) {
            return Err(Error::Shape("category counts do not match the layout".into()));
        }
        Ok(CondSampler { layout, counts, mode })
    }

    /// Layout over every discrete column of a fitted transformer; empty when
    /// conditioning is disabled.
    pub fn from_transformer(t: &DataTransformer, mode: CondMode) -> Result<Self> {
        if mode == CondMode::None {
            return Self::new(CondLayout::empty(), Vec::new(), mode);
        }
        let d = t.discrete();
        let layout = CondLayout::from_sizes(
            d.iter().map(|c| c.column).collect(),
            d.iter().map(|c| c.categories.len()).collect(),
        );
        Self::new(layout, d.iter().map(|c| c.counts.clone()).collect(), mode)
    }

    pub fn is_active(&self) -> bool {
        self.layout.slots() > 0
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    fn pick<R: Rng + ?Sized>(&self, log: bool, rng: &mut R) -> Result<MaskSet> {
        if !self.is_active() {
            return Err(Error::InvalidArgument("table has no discrete columns to condition on".into()));
        }
        let slot = rng.gen_range(0..self.layout.slots());
        let weights: Vec<f64> = self.counts[slot]
            .iter()
            .map(|&c| if log { (1.0 + c as f64).ln() } else { c as f64 })
            .collect();
        if weights.iter().all(|&w| w <= 0.0) {
            return Err(Error::InvalidArgument("discrete column has no observed categories".into()));
        }
        Ok(MaskSet {
            slot,
            category: draw(&weights, rng),
        })
    }

    /// Training-time condition; log-frequency unless the mode says raw.
    pub fn sample_training<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MaskSet> {
        self.pick(self.mode == CondMode::LogFreq, rng)
    }

    /// Generation-time condition following the raw category frequencies.
    pub fn sample_generation<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MaskSet> {
        self.pick(false, rng)
    }

    /// Resolves `column` (table index) and category index into a mask set.
    pub fn mask_for(&self, column: usize, category: usize) -> Result<MaskSet> {
        let slot = self
            .layout
            .columns
            .iter()
            .position(|&c| c == column)
            .ok_or_else(|| Error::InvalidArgument(format!("column {column} cannot be conditioned on")))?;
        let m = MaskSet { slot, category };
        self.layout.check(m)?;
        Ok(m)
    }
}
