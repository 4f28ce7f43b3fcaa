//! Variational autoencoder for tables.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Table;
use crate::error::{Error, Result};
use crate::tensor::nn::{Linear, Params};
use crate::tensor::{Adam, AdamConfig, Matrix, Tape, Var};
use crate::transform::{Activation, DataTransformer, Normalization, Span};

pub const LOG_STD_INIT: f64 = -2.302_585_092_994_046; // ln 0.1
pub const LOG_STD_MIN: f64 = -6.907_755_278_982_137; // ln 1e-3
pub const LOG_STD_MAX: f64 = 0.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvaeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub adam: AdamConfig,
    pub normalization: Normalization,
}

impl Default for TvaeConfig {
    fn default() -> Self {
        TvaeConfig {
            epochs: 300,
            batch_size: 500,
            latent_dim: 128,
            hidden_dims: vec![128, 128],
            adam: AdamConfig::standard(1e-3),
            normalization: Normalization::Vgm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub params: Params,
    pub hidden: Vec<Linear>,
    pub mu: Linear,
    pub log_var: Linear,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(input: usize, dims: &[usize], latent: usize, rng: &mut R) -> Self {
        let mut params = Params::new();
        let mut hidden = Vec::new();
        let mut w = input;
        for (i, &d) in dims.iter().enumerate() {
            hidden.push(Linear::new(&mut params, &format!("enc.fc{i}"), w, d, rng));
            w = d;
        }
        let mu = Linear::new(&mut params, "enc.mu", w, latent, rng);
        let log_var = Linear::new(&mut params, "enc.log_var", w, latent, rng);
        Encoder {
            params,
            hidden,
            mu,
            log_var,
        }
    }

    /// Returns (μ, log σ²).
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for fc in &self.hidden {
            let a = fc.forward(tape, vars, h)?;
            h = tape.relu(a)?;
        }
        Ok((self.mu.forward(tape, vars, h)?, self.log_var.forward(tape, vars, h)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub params: Params,
    pub hidden: Vec<Linear>,
    pub head: Linear,
    /// Index of the `1 x N_c` log-std parameter.
    pub log_std: usize,
    pub spans: Vec<Span>,
    pub latent_dim: usize,
}

/// Decoder heads for one batch.
pub struct DecoderOutput {
    /// `n x N_c` tanh means, one per continuous column.
    pub alpha_mean: Option<Var>,
    /// Log-probabilities of every softmax block, concatenated.
    pub log_probs: Option<Var>,
    pub raw: Var,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(latent: usize, dims: &[usize], spans: Vec<Span>, rng: &mut R) -> Self {
        let mut params = Params::new();
        let mut hidden = Vec::new();
        let mut w = latent;
        for (i, &d) in dims.iter().rev().enumerate() {
            hidden.push(Linear::new(&mut params, &format!("dec.fc{i}"), w, d, rng));
            w = d;
        }
        let out: usize = spans.iter().map(|s| s.width).sum();
        let head = Linear::new(&mut params, "dec.head", w, out, rng);
        let n_alpha = spans.iter().filter(|s| s.activation == Activation::Tanh).count();
        let log_std = params.add("dec.log_std", Matrix::filled(1, n_alpha, LOG_STD_INIT));
        Decoder {
            params,
            hidden,
            head,
            log_std,
            spans,
            latent_dim: latent,
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<DecoderOutput> {
        if tape.shape(z).1 != self.latent_dim {
            return Err(Error::Shape("latent width".into()));
        }
        let mut h = z;
        for fc in &self.hidden {
            let a = fc.forward(tape, vars, h)?;
            h = tape.relu(a)?;
        }
        let raw = self.head.forward(tape, vars, h)?;
        let mut alphas = Vec::new();
        let mut lps = Vec::new();
        for s in &self.spans {
            let block = tape.slice_cols(raw, s.start, s.end())?;
            match s.activation {
                Activation::Tanh => alphas.push(tape.tanh(block)?),
                Activation::Softmax => lps.push(tape.log_softmax(block)?),
            }
        }
        let alpha_mean = if alphas.is_empty() { None } else { Some(tape.concat(&alphas)?) };
        let log_probs = if lps.is_empty() { None } else { Some(tape.concat(&lps)?) };
        Ok(DecoderOutput {
            alpha_mean,
            log_probs,
            raw,
        })
    }

    /// Splits an encoded batch into α targets and the one-hot blocks.
    fn targets(&self, batch: &Matrix) -> (Matrix, Matrix) {
        let n = batch.rows();
        let na: usize = self.spans.iter().filter(|s| s.activation == Activation::Tanh).count();
        let nb: usize = self
            .spans
            .iter()
            .filter(|s| s.activation == Activation::Softmax)
            .map(|s| s.width)
            .sum();
        let mut a = Matrix::zeros(n, na);
        let mut b = Matrix::zeros(n, nb);
        for r in 0..n {
            let row = batch.row(r);
            let (mut ia, mut ib) = (0, 0);
            for s in &self.spans {
                match s.activation {
                    Activation::Tanh => {
                        a.set(r, ia, row[s.start]);
                        ia += 1;
                    }
                    Activation::Softmax => {
                        for k in 0..s.width {
                            b.set(r, ib + k, row[s.start + k]);
                        }
                        ib += s.width;
                    }
                }
            }
        }
        (a, b)
    }

    /// −log p(r | z) averaged over the batch rows.
    pub fn neg_log_likelihood(&self, tape: &mut Tape, vars: &[Var], z: Var, batch: &Matrix) -> Result<Var> {
        let expected: usize = self.spans.iter().map(|s| s.width).sum();
        if batch.cols() != expected {
            return Err(Error::Shape(format!("row width {} != {expected}", batch.cols())));
        }
        let n = batch.rows();
        let out = self.forward(tape, vars, z)?;
        let (alpha_t, onehot) = self.targets(batch);
        let mut total: Option<Var> = None;
        let mut push = |tape: &mut Tape, v: Var| -> Result<()> {
            total = Some(match total {
                Some(t) => tape.add(t, v)?,
                None => v,
            });
            Ok(())
        };
        if let Some(am) = out.alpha_mean {
            let na = alpha_t.cols();
            let tv = tape.constant(alpha_t)?;
            let diff = tape.sub(tv, am)?;
            let sq = tape.square(diff)?;
            let ls = vars[self.log_std];
            let m2 = tape.scale(ls, -2.0)?;
            let inv_var = tape.exp(m2)?;
            let inv_var = tape.broadcast_rows(inv_var, n)?;
            let w = tape.mul(sq, inv_var)?;
            let w = tape.sum(w)?;
            let w = tape.scale(w, 0.5 / n as f64)?;
            let lsum = tape.sum(ls)?;
            let g = tape.add(w, lsum)?;
            let g = tape.add_scalar(g, na as f64 * HALF_LN_2PI)?;
            push(tape, g)?;
        }
        if let Some(lp) = out.log_probs {
            let picked = tape.mul_const(lp, onehot)?;
            let s = tape.sum(picked)?;
            let ce = tape.scale(s, -1.0 / n as f64)?;
            push(tape, ce)?;
        }
        total.ok_or_else(|| Error::InvalidArgument("decoder has no outputs".into()))
    }

    pub fn clamp_log_std(&mut self) {
        for v in self.params.value_mut(self.log_std).data_mut() {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

/// KL(N(μ, σ²) ‖ N(0, I)) summed over latent dims, averaged over rows.
pub fn kl_divergence(tape: &mut Tape, mu: Var, log_var: Var) -> Result<Var> {
    let n = tape.shape(mu).0 as f64;
    let m2 = tape.square(mu)?;
    let v = tape.exp(log_var)?;
    let a = tape.add(m2, v)?;
    let b = tape.sub(a, log_var)?;
    let b = tape.add_scalar(b, -1.0)?;
    let s = tape.sum(b)?;
    tape.scale(s, 0.5 / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvaeModel {
    pub config: TvaeConfig,
    pub transformer: DataTransformer,
    pub decoder: Decoder,
    pub encoder: Encoder,
    /// Negative ELBO per training step.
    pub history: Vec<f64>,
    pub seed: u64,
}

fn gaussian<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).expect("sized")
}

pub struct TvaeTrainer {
    pub model: TvaeModel,
    encoded: Matrix,
    opt: Adam,
    pub rng: ChaCha8Rng,
}

impl TvaeTrainer {
    pub fn new(table: &Table, config: TvaeConfig, seed: u64) -> Result<Self> {
        if table.n_rows() == 0 {
            return Err(Error::InvalidArgument("cannot fit on an empty table".into()));
        }
        if config.batch_size == 0 || config.batch_size > table.n_rows() {
            return Err(Error::InvalidArgument(format!(
                "batch size {} must be in 1..={}",
                config.batch_size,
                table.n_rows()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let transformer = DataTransformer::fit(table, config.normalization, &mut rng)?;
        let encoded = transformer.encode_table(table, &mut rng)?;
        let encoder = Encoder::new(transformer.width(), &config.hidden_dims, config.latent_dim, &mut rng);
        let decoder = Decoder::new(config.latent_dim, &config.hidden_dims, transformer.spans(), &mut rng);
        // One optimizer over encoder then decoder parameters.
        let mut joint = encoder.params.clone();
        for (name, v) in decoder.params.names().iter().zip(decoder.params.values()) {
            joint.add(name.clone(), v.clone());
        }
        let opt = Adam::new(config.adam, &joint);
        Ok(TvaeTrainer {
            model: TvaeModel {
                config,
                transformer,
                decoder,
                encoder,
                history: Vec::new(),
                seed,
            },
            encoded,
            opt,
            rng,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.encoded.rows() / self.model.config.batch_size).max(1)
    }

    /// Negative ELBO of `batch` with a fresh reparameterization draw; also
    /// returns the gradients for encoder and decoder parameters.
    pub fn loss_and_grads(&mut self, batch: &Matrix) -> Result<(f64, Vec<Option<Matrix>>)> {
        let m = &self.model;
        let mut tape = Tape::new();
        let ev = m.encoder.params.bind(&mut tape)?;
        let dv = m.decoder.params.bind(&mut tape)?;
        let x = tape.constant(batch.clone())?;
        let (mu, lv) = m.encoder.forward(&mut tape, &ev, x)?;
        let half = tape.scale(lv, 0.5)?;
        let sigma = tape.exp(half)?;
        let eps = gaussian(batch.rows(), m.config.latent_dim, &mut self.rng);
        let noise = tape.mul_const(sigma, eps)?;
        let z = tape.add(mu, noise)?;
        let nll = m.decoder.neg_log_likelihood(&mut tape, &dv, z, batch)?;
        let kl = kl_divergence(&mut tape, mu, lv)?;
        let loss = tape.add(nll, kl)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("ELBO at step {}", m.history.len())));
        }
        let mut grads = tape.backward(loss)?;
        let mut all = m.encoder.params.collect_grads(&ev, &mut grads);
        all.extend(m.decoder.params.collect_grads(&dv, &mut grads));
        Ok((value, all))
    }

    fn apply(&mut self, grads: &[Option<Matrix>]) -> Result<()> {
        let m = &mut self.model;
        let mut joint = std::mem::take(&mut m.encoder.params);
        let n_enc = joint.len();
        let dec = std::mem::take(&mut m.decoder.params);
        let dec_names = dec.names().to_vec();
        for (name, v) in dec_names.iter().zip(dec.values()) {
            joint.add(name.clone(), v.clone());
        }
        let res = self.opt.step(&mut joint, grads);
        let mut enc = Params::new();
        let mut dec = Params::new();
        for (i, (name, v)) in joint.names().iter().zip(joint.values()).enumerate() {
            if i < n_enc {
                enc.add(name.clone(), v.clone());
            } else {
                dec.add(name.clone(), v.clone());
            }
        }
        m.encoder.params = enc;
        m.decoder.params = dec;
        m.decoder.clamp_log_std();
        res
    }

    pub fn run_epoch(&mut self) -> Result<()> {
        let n = self.encoded.rows();
        let b = self.model.config.batch_size;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut self.rng);
        for s in 0..self.steps_per_epoch() {
            let idx = &perm[s * b..((s + 1) * b).min(n)];
            let batch = self.encoded.select_rows(idx);
            let (loss, grads) = self.loss_and_grads(&batch)?;
            self.apply(&grads)?;
            self.model.history.push(loss);
        }
        Ok(())
    }
}

impl TvaeModel {
    pub fn fit(table: &Table, config: TvaeConfig, seed: u64) -> Result<Self> {
        let epochs = config.epochs;
        let mut t = TvaeTrainer::new(table, config, seed)?;
        for _ in 0..epochs {
            t.run_epoch()?;
        }
        Ok(t.model)
    }

    /// Decodes `n` latent draws, taking the mean α and the argmax categories.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Table> {
        let width = self.transformer.width();
        let mut out = Matrix::zeros(n, width);
        let batch = self.config.batch_size.max(1);
        let mut start = 0;
        while start < n {
            let b = batch.min(n - start);
            let mut tape = Tape::new();
            let vars = self.decoder.params.bind_frozen(&mut tape)?;
            let z = tape.constant(gaussian(b, self.config.latent_dim, rng))?;
            let o = self.decoder.forward(&mut tape, &vars, z)?;
            let raw = tape.value(o.raw);
            for r in 0..b {
                let dst = out.row_mut(start + r);
                let src = raw.row(r);
                for s in &self.decoder.spans {
                    match s.activation {
                        Activation::Tanh => dst[s.start] = src[s.start].tanh(),
                        Activation::Softmax => dst[s.start..s.end()].copy_from_slice(&src[s.start..s.end()]),
                    }
                }
            }
            start += b;
        }
        self.transformer.decode_matrix(&out)
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("step,neg_elbo\n");
        for (i, l) in self.history.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}
