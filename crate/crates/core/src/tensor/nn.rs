//! Named parameter sets and the two layer kinds the models are built from.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Ordered collection of trainable matrices.
///
/// The serde form holds names and shapes only, and deserializes to zeros.
/// Values travel separately through [`Params::export`] and [`Params::import`]
/// so that model files can keep them in a binary payload.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, i: usize) -> &Matrix {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.values[i]
    }

    pub fn values(&self) -> impl Iterator<Item = &Matrix> {
        self.values.iter()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    /// Places every parameter on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.values.iter().map(|v| tape.param(v.clone())).collect()
    }

    /// Places every parameter on the tape as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.values.iter().map(|v| tape.constant(v.clone())).collect()
    }

    /// All values, flattened in parameter order.
    pub fn export(&self) -> Vec<f64> {
        self.values.iter().flat_map(|m| m.data().iter().copied()).collect()
    }

    /// Overwrites values from the front of `data`; returns how many were read.
    pub fn import(&mut self, data: &[f64]) -> Result<usize> {
        let need = self.scalar_count();
        if data.len() < need {
            return Err(Error::Shape(format!("{} values for {need} parameters", data.len())));
        }
        let mut at = 0;
        for m in &mut self.values {
            let k = m.data().len();
            m.data_mut().copy_from_slice(&data[at..at + k]);
            at += k;
        }
        Ok(at)
    }

    pub fn collect_grads(&self, vars: &[Var], grads: &mut Gradients) -> Vec<Option<Matrix>> {
        vars.iter().map(|v| grads.take(*v)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsLayout {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
}

impl Serialize for Params {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsLayout {
            names: self.names.clone(),
            shapes: self.values.iter().map(Matrix::shape).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Params {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let l = ParamsLayout::deserialize(d)?;
        if l.names.len() != l.shapes.len() {
            return Err(serde::de::Error::custom("parameter names and shapes differ in length"));
        }
        Ok(Params {
            names: l.names,
            values: l.shapes.into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect(),
        })
    }
}

/// Fully connected layer `x W + b`, initialised uniformly in ±1/√fan_in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound);
        let w = (0..fan_in * fan_out).map(|_| u.sample(rng)).collect();
        let b = (0..fan_out).map(|_| u.sample(rng)).collect();
        let weight = params.add(
            format!("{name}.weight"),
            Matrix::from_vec(fan_in, fan_out, w).expect("sized above"),
        );
        let bias = params.add(
            format!("{name}.bias"),
            Matrix::from_vec(1, fan_out, b).expect("sized above"),
        );
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        if tape.shape(x).1 != self.fan_in {
            return Err(Error::Shape(format!(
                "linear layer expects {} inputs, got {}",
                self.fan_in,
                tape.shape(x).1
            )));
        }
        tape.affine(x, vars[self.weight], vars[self.bias])
    }
}

/// Batch normalization with learnable scale/shift and running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(params: &mut Params, name: &str, width: usize) -> Self {
        let gamma = params.add(format!("{name}.gamma"), Matrix::filled(1, width, 1.0));
        let beta = params.add(format!("{name}.beta"), Matrix::zeros(1, width));
        BatchNorm {
            gamma,
            beta,
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    /// Batch statistics; folds them into the running estimates.
    pub fn forward_train(&mut self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let (y, stats) = tape.batch_norm(x, vars[self.gamma], vars[self.beta], BN_EPS)?;
        for (r, m) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(&stats.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
        Ok(y)
    }

    /// Normalizes with the running statistics (inference).
    pub fn forward_eval(&self, tape: &mut Tape, params: &Params, x: Var) -> Result<Var> {
        let (n, c) = tape.shape(x);
        if c != self.running_mean.len() {
            return Err(Error::Shape("batch norm width".into()));
        }
        let gamma = params.value(self.gamma).data();
        let beta = params.value(self.beta).data();
        let scale: Vec<f64> = (0..c)
            .map(|j| gamma[j] / (self.running_var[j] + BN_EPS).sqrt())
            .collect();
        let shift: Vec<f64> = (0..c)
            .map(|j| beta[j] - self.running_mean[j] * scale[j])
            .collect();
        let mut sm = Matrix::zeros(n, c);
        let mut bm = Matrix::zeros(n, c);
        for r in 0..n {
            sm.row_mut(r).copy_from_slice(&scale);
            bm.row_mut(r).copy_from_slice(&shift);
        }
        let scaled = tape.mul_const(x, sm)?;
        tape.add_const(scaled, &bm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = Params::new();
        let l = Linear::new(&mut p, "fc", 16, 8, &mut rng);
        assert_eq!(p.value(l.weight).shape(), (16, 8));
        assert!(p.value(l.weight).max_abs() <= 0.25);
        assert!(p.value(l.bias).max_abs() <= 0.25);
    }

    #[test]
    fn eval_batch_norm_matches_train_after_convergence() {
        let mut p = Params::new();
        let mut bn = BatchNorm::new(&mut p, "bn", 2);
        let x = Matrix::from_rows(&[vec![1.0, 10.0], vec![3.0, 14.0], vec![5.0, 18.0]]);
        let mut out_train = None;
        for _ in 0..400 {
            let mut tape = Tape::new();
            let vars = p.bind(&mut tape).unwrap();
            let xv = tape.constant(x.clone()).unwrap();
            let y = bn.forward_train(&mut tape, &vars, xv).unwrap();
            out_train = Some(tape.value(y).clone());
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone()).unwrap();
        let y = bn.forward_eval(&mut tape, &p, xv).unwrap();
        // Running variance is unbiased (n-1), so eval output is scaled by sqrt((n-1)/n).
        let k = (2.0f64 / 3.0).sqrt();
        for (a, b) in tape.value(y).data().iter().zip(out_train.unwrap().data()) {
            assert!((a - b * k).abs() < 1e-3, "{a} vs {b}");
        }
    }
}
