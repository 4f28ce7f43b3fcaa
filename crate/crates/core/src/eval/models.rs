//! Gradient-trained predictors: multinomial logistic, linear, one-hidden-layer MLP.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::Labels;
use crate::error::{Error, Result};
use crate::tensor::nn::{Linear, Params};
use crate::tensor::{argmax, Adam, AdamConfig, Matrix, Tape, Var};

const FULL_BATCH_LR: f64 = 0.05;
const FULL_BATCH_ITERS: usize = 2000;
const FULL_BATCH_TOL: f64 = 1e-6;
const STALL_WINDOW: usize = 20;
const STALL_TOL: f64 = 1e-5;
const L2: f64 = 1e-4;

/// Standardization of a regression target; identity for classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    fn fit(v: &[f64]) -> Self {
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        TargetScale {
            mean,
            std: if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 },
        }
    }
}

/// Loss head shared by all gradient-trained predictors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Head {
    Softmax { classes: usize },
    Gaussian(TargetScale),
}

impl Head {
    fn for_labels(y: &Labels) -> Self {
        match y {
            Labels::Classes { labels, names } => Head::Softmax {
                classes: names.len().max(labels.iter().max().map_or(0, |m| m + 1)),
            },
            Labels::Values(v) => Head::Gaussian(TargetScale::fit(v)),
        }
    }

    fn width(&self) -> usize {
        match self {
            Head::Softmax { classes } => *classes,
            Head::Gaussian(_) => 1,
        }
    }

    /// One-hot classes or the standardized value column.
    fn target_matrix(&self, y: &Labels, idx: &[usize]) -> Matrix {
        let mut t = Matrix::zeros(idx.len(), self.width());
        match (self, y) {
            (Head::Softmax { .. }, Labels::Classes { labels, .. }) => {
                for (r, &i) in idx.iter().enumerate() {
                    t.set(r, labels[i], 1.0);
                }
            }
            (Head::Gaussian(s), Labels::Values(v)) => {
                for (r, &i) in idx.iter().enumerate() {
                    t.set(r, 0, (v[i] - s.mean) / s.std);
                }
            }
            _ => unreachable!("head built from these labels"),
        }
        t
    }

    /// Mean cross-entropy, or half mean squared error.
    fn loss(&self, tape: &mut Tape, out: Var, target: Matrix) -> Result<Var> {
        let n = target.rows() as f64;
        match self {
            Head::Softmax { .. } => {
                let lp = tape.log_softmax(out)?;
                let picked = tape.mul_const(lp, target)?;
                let s = tape.sum(picked)?;
                tape.scale(s, -1.0 / n)
            }
            Head::Gaussian(_) => {
                let t = tape.constant(target)?;
                let d = tape.sub(out, t)?;
                let sq = tape.square(d)?;
                let s = tape.sum(sq)?;
                tape.scale(s, 0.5 / n)
            }
        }
    }

    fn decode(&self, out: &Matrix) -> Vec<f64> {
        (0..out.rows())
            .map(|r| match self {
                Head::Softmax { .. } => argmax(out.row(r)) as f64,
                Head::Gaussian(s) => out.get(r, 0) * s.std + s.mean,
            })
            .collect()
    }
}

fn check_rows(x: &Matrix, y: &Labels) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Shape(format!("{} rows for {} labels", x.rows(), y.len())));
    }
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("cannot fit on zero rows".into()));
    }
    Ok(())
}

/// `x W + b` with a softmax or Gaussian head, trained full-batch with Adam.
/// Stops when the gradient or the loss change becomes negligible and keeps
/// the lowest-loss iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub params: Params,
    pub layer: Linear,
    pub head: Head,
}

impl LinearModel {
    pub fn fit(x: &Matrix, y: &Labels) -> Result<Self> {
        check_rows(x, y)?;
        let head = Head::for_labels(y);
        let mut params = Params::new();
        let weight = params.add("weight", Matrix::zeros(x.cols(), head.width()));
        let bias = params.add("bias", Matrix::zeros(1, head.width()));
        let layer = Linear {
            weight,
            bias,
            fan_in: x.cols(),
            fan_out: head.width(),
        };
        let all: Vec<usize> = (0..x.rows()).collect();
        let target = head.target_matrix(y, &all);
        let mut opt = Adam::new(AdamConfig::standard(FULL_BATCH_LR), &params);
        let mut trace: Vec<f64> = Vec::new();
        let mut best_params = params.clone();
        for _ in 0..FULL_BATCH_ITERS {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape)?;
            let xv = tape.constant(x.clone())?;
            let out = layer.forward(&mut tape, &vars, xv)?;
            let data = head.loss(&mut tape, out, target.clone())?;
            let sq = tape.square(vars[weight])?;
            let reg = tape.sum(sq)?;
            let reg = tape.scale(reg, 0.5 * L2)?;
            let loss = tape.add(data, reg)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite("linear model loss".into()));
            }
            let mut g = tape.backward(loss)?;
            let grads = params.collect_grads(&vars, &mut g);
            let gmax = grads.iter().flatten().map(Matrix::max_abs).fold(0.0, f64::max);
            // Adam is not monotone, so progress is judged on the running best
            // over a window of steps
            let best = trace.last().map_or(value, |&b: &f64| b.min(value));
            let stalled = trace.len() >= STALL_WINDOW
                && trace[trace.len() - STALL_WINDOW] - best < STALL_TOL * (1.0 + best.abs());
            if gmax < FULL_BATCH_TOL || stalled {
                break;
            }
            if best == value {
                best_params = params.clone();
            }
            trace.push(best);
            opt.step(&mut params, &grads)?;
        }
        Ok(LinearModel {
            params: best_params,
            layer,
            head,
        })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape)?;
        let xv = tape.constant(x.clone())?;
        let out = self.layer.forward(&mut tape, &vars, xv)?;
        Ok(self.head.decode(tape.value(out)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
}

impl MlpConfig {
    pub fn new(hidden: usize) -> Self {
        MlpConfig {
            hidden,
            lr: 1e-3,
            batch_size: 200,
            max_epochs: 100,
            patience: 5,
            validation_fraction: 0.1,
        }
    }
}

/// One ReLU hidden layer; minibatch Adam with early stopping on a held-out
/// slice of the training rows. The best validation snapshot is kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub params: Params,
    pub hidden: Linear,
    pub out: Linear,
    pub head: Head,
}

impl Mlp {
    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, vars, x)?;
        let h = tape.relu(h)?;
        self.out.forward(tape, vars, h)
    }

    fn eval_loss(&self, x: &Matrix, y: &Labels, idx: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape)?;
        let xv = tape.constant(x.select_rows(idx))?;
        let out = self.forward(&mut tape, &vars, xv)?;
        let l = self.head.loss(&mut tape, out, self.head.target_matrix(y, idx))?;
        Ok(tape.value(l).item())
    }

    pub fn fit<R: Rng + ?Sized>(x: &Matrix, y: &Labels, config: MlpConfig, rng: &mut R) -> Result<Self> {
        check_rows(x, y)?;
        if config.hidden == 0 || config.batch_size == 0 {
            return Err(Error::InvalidArgument("mlp needs a hidden width and batch size".into()));
        }
        let head = Head::for_labels(y);
        let mut params = Params::new();
        let hidden = Linear::new(&mut params, "hidden", x.cols(), config.hidden, rng);
        let out = Linear::new(&mut params, "out", config.hidden, head.width(), rng);
        let mut model = Mlp {
            params,
            hidden,
            out,
            head,
        };
        let mut rows: Vec<usize> = (0..x.rows()).collect();
        rows.shuffle(rng);
        let n_val = if x.rows() >= 50 {
            ((x.rows() as f64) * config.validation_fraction).round() as usize
        } else {
            0
        };
        let (val, train) = rows.split_at(n_val);
        let mut train = train.to_vec();
        let mut opt = Adam::new(AdamConfig::standard(config.lr), &model.params);
        let mut best = (f64::INFINITY, model.params.clone());
        let mut stale = 0;
        for _ in 0..config.max_epochs {
            train.shuffle(rng);
            for chunk in train.chunks(config.batch_size) {
                let mut tape = Tape::new();
                let vars = model.params.bind(&mut tape)?;
                let xv = tape.constant(x.select_rows(chunk))?;
                let o = model.forward(&mut tape, &vars, xv)?;
                let loss = model.head.loss(&mut tape, o, model.head.target_matrix(y, chunk))?;
                if !tape.value(loss).is_finite() {
                    return Err(Error::NonFinite("mlp loss".into()));
                }
                let mut g = tape.backward(loss)?;
                let grads = model.params.collect_grads(&vars, &mut g);
                opt.step(&mut model.params, &grads)?;
            }
            if val.is_empty() {
                continue;
            }
            let v = model.eval_loss(x, y, val)?;
            if v < best.0 - 1e-6 {
                best = (v, model.params.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
        if !val.is_empty() {
            model.params = best.1;
        }
        Ok(model)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape)?;
        let xv = tape.constant(x.clone())?;
        let out = self.forward(&mut tape, &vars, xv)?;
        Ok(self.head.decode(tape.value(out)))
    }
}
