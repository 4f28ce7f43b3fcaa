//! Conditional tabular GAN: generator, packed critic and the training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Table;
use crate::error::{Error, Result};
use crate::sampler::{CategoryIndex, CondMode, CondSampler, MaskSet};
use crate::tensor::nn::{BatchNorm, Linear, Params};
use crate::tensor::{Adam, AdamConfig, Matrix, Tape, Var};
use crate::transform::{Activation, DataTransformer, Normalization, Span};

pub const GUMBEL_TAU: f64 = 0.2;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    WganGp,
    Vanilla,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wgangp" | "wgan_gp" => Ok(LossKind::WganGp),
            "vanilla" => Ok(LossKind::Vanilla),
            _ => Err(Error::InvalidArgument(format!("unknown loss `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtganConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub pac: usize,
    pub z_dim: usize,
    pub generator_dims: Vec<usize>,
    pub critic_dims: Vec<usize>,
    pub gp_weight: f64,
    pub dropout: f64,
    pub adam: AdamConfig,
    pub loss: LossKind,
    pub normalization: Normalization,
    pub cond: CondMode,
}

impl Default for CtganConfig {
    fn default() -> Self {
        CtganConfig {
            epochs: 300,
            batch_size: 500,
            pac: 10,
            z_dim: 128,
            generator_dims: vec![256, 256],
            critic_dims: vec![256, 256],
            gp_weight: 10.0,
            dropout: 0.5,
            adam: AdamConfig::gan(),
            loss: LossKind::WganGp,
            normalization: Normalization::Vgm,
            cond: CondMode::LogFreq,
        }
    }
}

impl CtganConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pac == 0 || self.batch_size == 0 || self.batch_size % self.pac != 0 {
            return Err(Error::InvalidArgument(format!(
                "batch size {} must be a positive multiple of pac {}",
                self.batch_size, self.pac
            )));
        }
        if self.gp_weight < 0.0 || !self.gp_weight.is_finite() {
            return Err(Error::InvalidArgument("gradient penalty weight must be non-negative".into()));
        }
        if self.z_dim == 0 {
            return Err(Error::InvalidArgument("noise dimension must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Generator output for one batch.
pub struct GeneratorOutput {
    /// Activated row representation (tanh / gumbel-softmax blocks).
    pub rows: Var,
    /// Log-probabilities of the discrete blocks, laid out like the condition vector.
    pub cond_log_probs: Option<Var>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub params: Params,
    pub hidden: Vec<Linear>,
    pub norms: Vec<BatchNorm>,
    pub head: Linear,
    pub spans: Vec<Span>,
    /// Spans of discrete columns, in condition-vector order.
    pub cond_spans: Vec<Span>,
    pub z_dim: usize,
    pub cond_dim: usize,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        z_dim: usize,
        cond_dim: usize,
        dims: &[usize],
        spans: Vec<Span>,
        cond_spans: Vec<Span>,
        rng: &mut R,
    ) -> Self {
        let mut params = Params::new();
        let mut hidden = Vec::new();
        let mut norms = Vec::new();
        let mut width = z_dim + cond_dim;
        for (i, &d) in dims.iter().enumerate() {
            hidden.push(Linear::new(&mut params, &format!("gen.fc{i}"), width, d, rng));
            norms.push(BatchNorm::new(&mut params, &format!("gen.bn{i}"), d));
            width += d;
        }
        let out: usize = spans.iter().map(|s| s.width).sum();
        let head = Linear::new(&mut params, "gen.head", width, out, rng);
        Generator {
            params,
            hidden,
            norms,
            head,
            spans,
            cond_spans,
            z_dim,
            cond_dim,
        }
    }

    pub fn output_width(&self) -> usize {
        self.head.fan_out
    }

    /// Runs the generator. `vars` binds `self.params`; in training mode batch
    /// statistics are used and folded into the running estimates.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        vars: &[Var],
        z: Var,
        cond: Option<&Matrix>,
        train: bool,
        rng: &mut R,
    ) -> Result<GeneratorOutput> {
        if tape.shape(z).1 != self.z_dim {
            return Err(Error::Shape(format!("noise width {} != {}", tape.shape(z).1, self.z_dim)));
        }
        let mut h = match cond {
            Some(c) if self.cond_dim > 0 => {
                if c.cols() != self.cond_dim || c.rows() != tape.shape(z).0 {
                    return Err(Error::Shape("condition matrix shape".into()));
                }
                let cv = tape.constant(c.clone())?;
                tape.concat(&[z, cv])?
            }
            None if self.cond_dim == 0 => z,
            _ => return Err(Error::Shape("condition presence does not match the generator".into())),
        };
        for (fc, bn) in self.hidden.iter().zip(self.norms.iter_mut()) {
            let a = fc.forward(tape, vars, h)?;
            let b = if train {
                bn.forward_train(tape, vars, a)?
            } else {
                bn.forward_eval(tape, &self.params, a)?
            };
            let r = tape.relu(b)?;
            h = tape.concat(&[h, r])?;
        }
        let raw = self.head.forward(tape, vars, h)?;
        let mut parts = Vec::with_capacity(self.spans.len());
        let mut logp_by_start = std::collections::HashMap::new();
        for s in &self.spans {
            let block = tape.slice_cols(raw, s.start, s.end())?;
            parts.push(match s.activation {
                Activation::Tanh => tape.tanh(block)?,
                Activation::Softmax => {
                    let g = tape.gumbel_logits(block, GUMBEL_TAU, rng)?;
                    if self.cond_spans.iter().any(|c| c.start == s.start) {
                        let lp = tape.log_softmax(g)?;
                        logp_by_start.insert(s.start, lp);
                    }
                    tape.softmax(g)?
                }
            });
        }
        let rows = tape.concat(&parts)?;
        let cond_log_probs = if self.cond_spans.is_empty() {
            None
        } else {
            let lps: Vec<Var> = self.cond_spans.iter().map(|s| logp_by_start[&s.start]).collect();
            Some(tape.concat(&lps)?)
        };
        Ok(GeneratorOutput { rows, cond_log_probs })
    }
}

/// Critic over pacs of `pac` rows, each with its condition vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub params: Params,
    pub hidden: Vec<Linear>,
    pub out: Linear,
    pub pac: usize,
    pub row_width: usize,
    pub cond_width: usize,
    pub dropout: f64,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        row_width: usize,
        cond_width: usize,
        pac: usize,
        dims: &[usize],
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let mut params = Params::new();
        let mut hidden = Vec::new();
        let mut width = pac * (row_width + cond_width);
        for (i, &d) in dims.iter().enumerate() {
            hidden.push(Linear::new(&mut params, &format!("critic.fc{i}"), width, d, rng));
            width = d;
        }
        let out = Linear::new(&mut params, "critic.out", width, 1, rng);
        Critic {
            params,
            hidden,
            out,
            pac,
            row_width,
            cond_width,
            dropout,
        }
    }

    pub fn input_width(&self) -> usize {
        self.pac * (self.row_width + self.cond_width)
    }

    /// Packs `n` rows into `n / pac` groups.
    pub fn pack(&self, tape: &mut Tape, rows: Var) -> Result<Var> {
        let (n, w) = tape.shape(rows);
        if w != self.row_width {
            return Err(Error::Shape(format!("critic expects rows of width {}, got {w}", self.row_width)));
        }
        if n % self.pac != 0 {
            return Err(Error::Shape(format!("{n} rows do not divide into pacs of {}", self.pac)));
        }
        tape.reshape(rows, n / self.pac, self.pac * w)
    }

    pub fn pack_matrix(&self, m: &Matrix) -> Result<Matrix> {
        if m.rows() % self.pac != 0 {
            return Err(Error::Shape(format!("{} rows do not divide into pacs of {}", m.rows(), self.pac)));
        }
        m.reshape(m.rows() / self.pac, self.pac * m.cols())
    }

    /// One score per pac. `packed_rows` is `(n/pac) x pac·row_width`;
    /// `packed_cond` is the matching packed condition matrix, if any.
    /// With `rng` present dropout is applied, otherwise the pass is deterministic.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        packed_rows: Var,
        packed_cond: Option<&Matrix>,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<Var> {
        let (g, w) = tape.shape(packed_rows);
        if w != self.pac * self.row_width {
            return Err(Error::Shape(format!(
                "critic input width {w} != {}",
                self.pac * self.row_width
            )));
        }
        let h0 = match packed_cond {
            Some(c) if self.cond_width > 0 => {
                if c.shape() != (g, self.pac * self.cond_width) {
                    return Err(Error::Shape("packed condition shape".into()));
                }
                let cv = tape.constant(c.clone())?;
                tape.concat(&[packed_rows, cv])?
            }
            None if self.cond_width == 0 => packed_rows,
            _ => return Err(Error::Shape("condition presence does not match the critic".into())),
        };
        let mut h = h0;
        let mut rng = rng;
        for fc in &self.hidden {
            let a = fc.forward(tape, vars, h)?;
            h = tape.leaky_relu(a, LEAKY_SLOPE)?;
            if let Some(r) = rng.as_deref_mut() {
                if self.dropout > 0.0 {
                    h = tape.dropout(h, self.dropout, r)?;
                }
            }
        }
        self.out.forward(tape, vars, h)
    }

    /// Mean over pacs of (‖∇ C(r̃)‖₂ − 1)² at r̃ = ρ·fake + (1−ρ)·real, one ρ
    /// per pac. Inputs are packed; the result is differentiable in the critic
    /// parameters bound in `vars`.
    pub fn gradient_penalty<R: Rng>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        real: &Matrix,
        fake: &Matrix,
        cond: Option<&Matrix>,
        rng: &mut R,
    ) -> Result<Var> {
        if real.shape() != fake.shape() {
            return Err(Error::Shape("real and fake pacs differ in shape".into()));
        }
        let mut mixed = real.clone();
        for r in 0..real.rows() {
            let rho: f64 = rng.gen();
            for (m, (&a, &b)) in mixed.row_mut(r).iter_mut().zip(fake.row(r).iter().zip(real.row(r))) {
                *m = rho * a + (1.0 - rho) * b;
            }
        }
        self.penalty_at(tape, vars, mixed, cond, Some(rng))
    }

    /// Penalty term evaluated at fixed packed inputs.
    pub fn penalty_at(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        points: Matrix,
        cond: Option<&Matrix>,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<Var> {
        let x = tape.param(points)?;
        let scores = self.forward(tape, vars, x, cond, rng)?;
        let total = tape.sum(scores)?;
        let g = tape.grad_recorded(total, x, None)?;
        let sq = tape.square(g)?;
        let norms2 = tape.row_sums(sq)?;
        let norms2 = tape.add_scalar(norms2, 1e-12)?;
        let norms = tape.sqrt(norms2)?;
        let dev = tape.add_scalar(norms, -1.0)?;
        let dev2 = tape.square(dev)?;
        tape.mean(dev2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub critic: f64,
    pub generator: f64,
}

/// A trained conditional GAN ready for sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtganModel {
    pub config: CtganConfig,
    pub transformer: DataTransformer,
    pub sampler: CondSampler,
    pub generator: Generator,
    pub history: Vec<StepLoss>,
    pub seed: u64,
}

fn noise<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Matrix {
    let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(n, d, data).expect("sized")
}

/// Everything that lives for the duration of one fit.
pub struct Trainer {
    pub config: CtganConfig,
    pub transformer: DataTransformer,
    pub sampler: CondSampler,
    pub generator: Generator,
    pub critic: Critic,
    index: Option<CategoryIndex>,
    encoded: Matrix,
    gen_opt: Adam,
    critic_opt: Adam,
    pub rng: ChaCha8Rng,
    pub history: Vec<StepLoss>,
}

impl Trainer {
    pub fn new(table: &Table, config: CtganConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if table.n_rows() == 0 {
            return Err(Error::InvalidArgument("cannot fit on an empty table".into()));
        }
        if config.batch_size > table.n_rows() {
            return Err(Error::InvalidArgument(format!(
                "batch size {} exceeds the {} training rows",
                config.batch_size,
                table.n_rows()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let transformer = DataTransformer::fit(table, config.normalization, &mut rng)?;
        let encoded = transformer.encode_table(table, &mut rng)?;
        let sampler = CondSampler::from_transformer(&transformer, config.cond)?;
        let index = if sampler.is_active() {
            Some(CategoryIndex::build(table, &sampler.layout)?)
        } else {
            None
        };
        let spans = transformer.spans();
        let cond_spans: Vec<Span> = if sampler.is_active() {
            sampler
                .layout
                .columns
                .iter()
                .map(|&c| *spans.iter().find(|s| s.column == c).expect("discrete span"))
                .collect()
        } else {
            Vec::new()
        };
        let generator = Generator::new(
            config.z_dim,
            sampler.width(),
            &config.generator_dims,
            spans,
            cond_spans,
            &mut rng,
        );
        let critic = Critic::new(
            transformer.width(),
            sampler.width(),
            config.pac,
            &config.critic_dims,
            config.dropout,
            &mut rng,
        );
        let gen_opt = Adam::new(config.adam, &generator.params);
        let critic_opt = Adam::new(config.adam, &critic.params);
        Ok(Trainer {
            config,
            transformer,
            sampler,
            generator,
            critic,
            index,
            encoded,
            gen_opt,
            critic_opt,
            rng,
            history: Vec::new(),
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.encoded.rows() / self.config.batch_size).max(1)
    }

    /// Conditions for a batch and, optionally, matching real rows.
    fn draw_conditions(&mut self, m: usize, with_real: bool) -> Result<(Option<Matrix>, Vec<usize>)> {
        let mut masks = Vec::with_capacity(m);
        let mut real = Vec::new();
        for _ in 0..m {
            if self.sampler.is_active() {
                let mask = self.sampler.sample_training(&mut self.rng)?;
                if with_real {
                    let idx = self.index.as_ref().expect("index exists when conditioning");
                    real.push(idx.sample_row(mask, &mut self.rng)?);
                }
                masks.push(mask);
            } else if with_real {
                real.push(self.rng.gen_range(0..self.encoded.rows()));
            }
        }
        let cond = if self.sampler.is_active() {
            Some(self.sampler.layout.cond_matrix(&masks)?)
        } else {
            None
        };
        Ok((cond, real))
    }

    /// One critic update followed by one generator update.
    pub fn step(&mut self) -> Result<StepLoss> {
        let m = self.config.batch_size;
        let z_dim = self.config.z_dim;

        // critic
        let (cond, real_idx) = self.draw_conditions(m, true)?;
        let z = noise(m, z_dim, &mut self.rng);
        let fake = {
            let mut tape = Tape::new();
            let gv = self.generator.params.bind_frozen(&mut tape)?;
            let zv = tape.constant(z)?;
            let out = self
                .generator
                .forward(&mut tape, &gv, zv, cond.as_ref(), true, &mut self.rng)?;
            tape.value(out.rows).clone()
        };
        let real = self.encoded.select_rows(&real_idx);
        let fake_p = self.critic.pack_matrix(&fake)?;
        let real_p = self.critic.pack_matrix(&real)?;
        let cond_p = cond.as_ref().map(|c| self.critic.pack_matrix(c)).transpose()?;
        let mut tape = Tape::new();
        let cv = self.critic.params.bind(&mut tape)?;
        let fv = tape.constant(fake_p.clone())?;
        let rv = tape.constant(real_p.clone())?;
        let c_fake = self.critic.forward(&mut tape, &cv, fv, cond_p.as_ref(), Some(&mut self.rng))?;
        let c_real = self.critic.forward(&mut tape, &cv, rv, cond_p.as_ref(), Some(&mut self.rng))?;
        let critic_loss = match self.config.loss {
            LossKind::WganGp => {
                let mf = tape.mean(c_fake)?;
                let mr = tape.mean(c_real)?;
                let lc = tape.sub(mf, mr)?;
                if self.config.gp_weight > 0.0 {
                    let gp = self.critic.gradient_penalty(
                        &mut tape,
                        &cv,
                        &real_p,
                        &fake_p,
                        cond_p.as_ref(),
                        &mut self.rng,
                    )?;
                    let gp = tape.scale(gp, self.config.gp_weight)?;
                    tape.add(lc, gp)?
                } else {
                    lc
                }
            }
            LossKind::Vanilla => {
                // -log(1 - D(fake)) - log D(real) with D = sigmoid(C)
                let sf = tape.softplus(c_fake)?;
                let neg = tape.scale(c_real, -1.0)?;
                let sr = tape.softplus(neg)?;
                let a = tape.mean(sf)?;
                let b = tape.mean(sr)?;
                tape.add(a, b)?
            }
        };
        let critic_value = tape.value(critic_loss).item();
        let mut grads = tape.backward(critic_loss)?;
        let cg = self.critic.params.collect_grads(&cv, &mut grads);
        self.critic_opt.step(&mut self.critic.params, &cg)?;
        drop(tape);

        // generator
        let (cond, _) = self.draw_conditions(m, false)?;
        let z = noise(m, z_dim, &mut self.rng);
        let cond_p = cond.as_ref().map(|c| self.critic.pack_matrix(c)).transpose()?;
        let mut tape = Tape::new();
        let gv = self.generator.params.bind(&mut tape)?;
        let cv = self.critic.params.bind_frozen(&mut tape)?;
        let zv = tape.constant(z)?;
        let out = self
            .generator
            .forward(&mut tape, &gv, zv, cond.as_ref(), true, &mut self.rng)?;
        let packed = self.critic.pack(&mut tape, out.rows)?;
        let score = self.critic.forward(&mut tape, &cv, packed, cond_p.as_ref(), Some(&mut self.rng))?;
        let adv = match self.config.loss {
            LossKind::WganGp => {
                let ms = tape.mean(score)?;
                tape.scale(ms, -1.0)?
            }
            LossKind::Vanilla => {
                let neg = tape.scale(score, -1.0)?;
                let sp = tape.softplus(neg)?;
                tape.mean(sp)?
            }
        };
        let gen_loss = match (out.cond_log_probs, cond) {
            (Some(lp), Some(c)) => {
                let ce = cross_entropy(&mut tape, lp, c)?;
                tape.add(adv, ce)?
            }
            _ => adv,
        };
        let gen_value = tape.value(gen_loss).item();
        let mut grads = tape.backward(gen_loss)?;
        let gg = self.generator.params.collect_grads(&gv, &mut grads);
        self.gen_opt.step(&mut self.generator.params, &gg)?;

        let loss = StepLoss {
            critic: critic_value,
            generator: gen_value,
        };
        if !critic_value.is_finite() || !gen_value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training diverged at step {}: critic {critic_value}, generator {gen_value}",
                self.history.len()
            )));
        }
        self.history.push(loss);
        Ok(loss)
    }

    pub fn run_epoch(&mut self) -> Result<()> {
        for _ in 0..self.steps_per_epoch() {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(self, seed: u64) -> CtganModel {
        CtganModel {
            config: self.config,
            transformer: self.transformer,
            sampler: self.sampler,
            generator: self.generator,
            history: self.history,
            seed,
        }
    }
}

/// Mean over rows of −Σ cond ⊙ log d̂.
pub fn cross_entropy(tape: &mut Tape, log_probs: Var, cond: Matrix) -> Result<Var> {
    let n = cond.rows().max(1) as f64;
    let picked = tape.mul_const(log_probs, cond)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / n)
}

impl CtganModel {
    pub fn fit(table: &Table, config: CtganConfig, seed: u64) -> Result<Self> {
        let epochs = config.epochs;
        let mut t = Trainer::new(table, config, seed)?;
        for _ in 0..epochs {
            t.run_epoch()?;
        }
        Ok(t.finish(seed))
    }

    /// Draws `n` rows. With `condition = Some(mask)` every row is generated
    /// under that condition; otherwise conditions follow the category
    /// frequencies of the training data.
    pub fn sample<R: Rng>(&self, n: usize, condition: Option<MaskSet>, rng: &mut R) -> Result<Table> {
        if let Some(m) = condition {
            if !self.sampler.is_active() {
                return Err(Error::InvalidArgument("model was trained without conditions".into()));
            }
            self.sampler.layout.check(m)?;
        }
        let mut generator = self.generator.clone();
        let batch = self.config.batch_size.max(1);
        let mut blocks = Vec::new();
        let mut left = n;
        while left > 0 {
            let b = left.min(batch);
            let z = noise(b, self.config.z_dim, rng);
            let cond = if self.sampler.is_active() {
                let masks = (0..b)
                    .map(|_| match condition {
                        Some(m) => Ok(m),
                        None => self.sampler.sample_generation(rng),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(self.sampler.layout.cond_matrix(&masks)?)
            } else {
                None
            };
            let mut tape = Tape::new();
            let vars = generator.params.bind_frozen(&mut tape)?;
            let zv = tape.constant(z)?;
            let out = generator.forward(&mut tape, &vars, zv, cond.as_ref(), false, rng)?;
            blocks.push(tape.value(out.rows).clone());
            left -= b;
        }
        let all = if blocks.is_empty() {
            Matrix::zeros(0, self.transformer.width())
        } else {
            Matrix::vstack(&blocks.iter().collect::<Vec<_>>())?
        };
        self.transformer.decode_matrix(&all)
    }

    /// Mask for `column = category`, looked up by name.
    pub fn condition(&self, column: &str, category: &str) -> Result<MaskSet> {
        let schema = self.transformer.schema();
        let j = schema
            .index_of(column)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown column `{column}`")))?;
        let k = schema.columns[j]
            .categories()
            .iter()
            .position(|c| c == category)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown category `{category}` for column `{column}`")))?;
        self.sampler.mask_for(j, k)
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("step,critic_loss,generator_loss\n");
        for (i, l) in self.history.iter().enumerate() {
            s.push_str(&format!("{i},{},{}\n", l.critic, l.generator));
        }
        s
    }
}
