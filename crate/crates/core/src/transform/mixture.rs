//! One-dimensional Gaussian mixture fitting: variational Bayes and plain EM.

use rand::Rng;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Smallest standard deviation a fitted mode may have.
pub const STD_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mode {
    pub mean: f64,
    pub std: f64,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VgmConfig {
    pub max_components: usize,
    /// Dirichlet concentration of the weight prior.
    pub concentration: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub prune_threshold: f64,
}

impl Default for VgmConfig {
    fn default() -> Self {
        VgmConfig {
            max_components: 10,
            concentration: 1e-3,
            tol: 1e-3,
            max_iter: 100,
            prune_threshold: 0.005,
        }
    }
}

pub(crate) fn check_column(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a mixture to an empty column".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("column value".into()));
    }
    Ok(())
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn distinct_count(values: &[f64], cap: usize) -> usize {
    let mut seen: Vec<f64> = Vec::new();
    for &v in values {
        if !seen.contains(&v) {
            seen.push(v);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

/// Single mode at the column mean used for columns without spread.
pub(crate) fn degenerate(values: &[f64]) -> Vec<Mode> {
    let (mean, var) = mean_var(values);
    vec![Mode {
        mean,
        std: var.sqrt().max(STD_FLOOR),
        weight: 1.0,
    }]
}

fn is_degenerate(values: &[f64]) -> bool {
    let (mean, var) = mean_var(values);
    distinct_count(values, 2) < 2 || var <= 1e-24 * mean.abs().max(1.0).powi(2)
}

/// k-means++ seeding followed by Lloyd iterations; returns hard labels.
fn kmeans<R: Rng + ?Sized>(values: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let n = values.len();
    let mut centers = vec![values[rng.gen_range(0..n)]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            values[rng.gen_range(0..n)]
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            values[pick]
        };
        centers.push(next);
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
    }
    let mut labels = vec![0; n];
    for _ in 0..50 {
        let mut changed = false;
        for (l, v) in labels.iter_mut().zip(values) {
            let best = (0..k)
                .min_by(|&a, &b| (v - centers[a]).abs().total_cmp(&(v - centers[b]).abs()))
                .unwrap();
            if *l != best {
                *l = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (l, v) in labels.iter().zip(values) {
            sums[*l] += v;
            counts[*l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

fn hard_resp(labels: &[usize], k: usize) -> Vec<f64> {
    let mut r = vec![0.0; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        r[i * k + l] = 1.0;
    }
    r
}

/// Row-wise softmax of `logits` (n×k) into `resp`; returns Σ r ln r.
fn normalize(logits: &[f64], resp: &mut [f64], k: usize) -> f64 {
    let mut ent = 0.0;
    for (lr, rr) in logits.chunks_exact(k).zip(resp.chunks_exact_mut(k)) {
        let m = lr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (r, l) in rr.iter_mut().zip(lr) {
            *r = (l - m).exp();
            s += *r;
        }
        let ls = s.ln();
        for (r, l) in rr.iter_mut().zip(lr) {
            *r /= s;
            if *r > 0.0 {
                ent += *r * (l - m - ls);
            }
        }
    }
    ent
}

struct Prior {
    alpha: f64,
    beta: f64,
    mean: f64,
    /// Inverse of the Wishart scale.
    w_inv: f64,
    nu: f64,
}

/// Posterior hyperparameters of each component.
struct Posterior {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    mean: Vec<f64>,
    w: Vec<f64>,
    nu: Vec<f64>,
    // sufficient statistics
    nk: Vec<f64>,
    xbar: Vec<f64>,
    sk: Vec<f64>,
}

impl Posterior {
    fn e_ln_pi(&self, k: usize) -> f64 {
        digamma(self.alpha[k]) - digamma(self.alpha.iter().sum())
    }

    fn e_ln_lambda(&self, k: usize) -> f64 {
        digamma(self.nu[k] / 2.0) + std::f64::consts::LN_2 + self.w[k].ln()
    }
}

fn ln_wishart_norm(w: f64, nu: f64) -> f64 {
    -(nu / 2.0) * w.ln() - (nu / 2.0) * std::f64::consts::LN_2 - ln_gamma(nu / 2.0)
}

fn m_step(values: &[f64], resp: &[f64], k: usize, prior: &Prior) -> Posterior {
    let mut nk = vec![0.0; k];
    let mut sx = vec![0.0; k];
    for (rr, &x) in resp.chunks_exact(k).zip(values) {
        for c in 0..k {
            nk[c] += rr[c];
            sx[c] += rr[c] * x;
        }
    }
    let xbar: Vec<f64> = (0..k)
        .map(|c| if nk[c] > 0.0 { sx[c] / nk[c] } else { prior.mean })
        .collect();
    let mut sk = vec![0.0; k];
    for (rr, &x) in resp.chunks_exact(k).zip(values) {
        for c in 0..k {
            sk[c] += rr[c] * (x - xbar[c]).powi(2);
        }
    }
    for c in 0..k {
        sk[c] = if nk[c] > 0.0 { sk[c] / nk[c] } else { 0.0 } + 1e-6 * prior.w_inv;
    }
    let mut post = Posterior {
        alpha: vec![0.0; k],
        beta: vec![0.0; k],
        mean: vec![0.0; k],
        w: vec![0.0; k],
        nu: vec![0.0; k],
        nk,
        xbar,
        sk,
    };
    for c in 0..k {
        let n = post.nk[c];
        post.alpha[c] = prior.alpha + n;
        post.beta[c] = prior.beta + n;
        post.mean[c] = (prior.beta * prior.mean + n * post.xbar[c]) / post.beta[c];
        let w_inv = prior.w_inv
            + n * post.sk[c]
            + prior.beta * n / (prior.beta + n) * (post.xbar[c] - prior.mean).powi(2);
        post.w[c] = 1.0 / w_inv;
        post.nu[c] = prior.nu + n;
    }
    post
}

fn e_step_logits(values: &[f64], post: &Posterior, logits: &mut [f64]) {
    let k = post.alpha.len();
    let consts: Vec<f64> = (0..k)
        .map(|c| post.e_ln_pi(c) + 0.5 * post.e_ln_lambda(c) - 0.5 * LN_2PI - 0.5 / post.beta[c])
        .collect();
    let prec: Vec<f64> = (0..k).map(|c| post.nu[c] * post.w[c]).collect();
    for (lr, &x) in logits.chunks_exact_mut(k).zip(values) {
        for c in 0..k {
            lr[c] = consts[c] - 0.5 * prec[c] * (x - post.mean[c]).powi(2);
        }
    }
}

/// Variational lower bound given the posterior and Σ r ln r.
fn elbo(post: &Posterior, prior: &Prior, resp_entropy: f64) -> f64 {
    let k = post.alpha.len();
    let kf = k as f64;
    let alpha_hat: f64 = post.alpha.iter().sum();
    let mut lb = 0.0;
    // E[ln p(X|Z,μ,Λ)] + E[ln p(Z|π)]
    for c in 0..k {
        let el = post.e_ln_lambda(c);
        let n = post.nk[c];
        lb += 0.5
            * n
            * (el
                - 1.0 / post.beta[c]
                - post.nu[c] * post.w[c] * (post.sk[c] + (post.xbar[c] - post.mean[c]).powi(2))
                - LN_2PI);
        lb += n * post.e_ln_pi(c);
    }
    // E[ln p(π)] − E[ln q(π)]
    let sum_e_ln_pi: f64 = (0..k).map(|c| post.e_ln_pi(c)).sum();
    lb += ln_gamma(kf * prior.alpha) - kf * ln_gamma(prior.alpha) + (prior.alpha - 1.0) * sum_e_ln_pi;
    lb -= ln_gamma(alpha_hat) - post.alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
    lb -= (0..k).map(|c| (post.alpha[c] - 1.0) * post.e_ln_pi(c)).sum::<f64>();
    // E[ln p(μ,Λ)] − E[ln q(μ,Λ)]
    let ln_b0 = ln_wishart_norm(1.0 / prior.w_inv, prior.nu);
    for c in 0..k {
        let el = post.e_ln_lambda(c);
        lb += 0.5
            * ((prior.beta / (2.0 * std::f64::consts::PI)).ln() + el
                - prior.beta / post.beta[c]
                - prior.beta * post.nu[c] * post.w[c] * (post.mean[c] - prior.mean).powi(2));
        lb += ln_b0 + (prior.nu - 2.0) / 2.0 * el - 0.5 * post.nu[c] * prior.w_inv * post.w[c];
        let entropy_lambda =
            -ln_wishart_norm(post.w[c], post.nu[c]) - (post.nu[c] - 2.0) / 2.0 * el + post.nu[c] / 2.0;
        lb -= 0.5 * el + 0.5 * (post.beta[c] / (2.0 * std::f64::consts::PI)).ln() - 0.5 - entropy_lambda;
    }
    lb - resp_entropy
}

struct VbState {
    post: Posterior,
    logits: Vec<f64>,
    bound: f64,
}

/// Runs variational iterations from the given responsibilities.
fn run_vb(values: &[f64], mut resp: Vec<f64>, k: usize, prior: &Prior, cfg: &VgmConfig) -> VbState {
    let mut logits = vec![0.0; resp.len()];
    let mut last = f64::NEG_INFINITY;
    let mut post = m_step(values, &resp, k, prior);
    let mut bound = last;
    for _ in 0..cfg.max_iter {
        e_step_logits(values, &post, &mut logits);
        let ent = normalize(&logits, &mut resp, k);
        post = m_step(values, &resp, k, prior);
        bound = elbo(&post, prior, ent);
        if (bound - last).abs() < cfg.tol {
            break;
        }
        last = bound;
    }
    VbState { post, logits, bound }
}

/// Variational Bayesian Gaussian mixture. After convergence, components are
/// removed one at a time whenever dropping them does not lower the bound;
/// survivors whose weight falls below the threshold are pruned.
pub fn fit_vgm<R: Rng + ?Sized>(values: &[f64], cfg: &VgmConfig, rng: &mut R) -> Result<Vec<Mode>> {
    check_column(values)?;
    if cfg.max_components == 0 {
        return Err(Error::InvalidArgument("max_components must be at least 1".into()));
    }
    if is_degenerate(values) {
        return Ok(degenerate(values));
    }
    let (mean, var) = mean_var(values);
    let prior = Prior {
        alpha: cfg.concentration,
        beta: 1.0,
        mean,
        w_inv: var,
        nu: 1.0,
    };
    let k = cfg.max_components.min(distinct_count(values, cfg.max_components));
    let labels = kmeans(values, k, rng);
    let mut state = run_vb(values, hard_resp(&labels, k), k, &prior, cfg);

    let mut dead = vec![false; k];
    loop {
        let mut order: Vec<usize> = (0..k).filter(|&c| !dead[c]).collect();
        if order.len() <= 1 {
            break;
        }
        order.sort_by(|&a, &b| state.post.nk[a].total_cmp(&state.post.nk[b]));
        let mut accepted = false;
        for c in order {
            let mut logits = state.logits.clone();
            for row in logits.chunks_exact_mut(k) {
                for (j, l) in row.iter_mut().enumerate() {
                    if dead[j] || j == c {
                        *l = f64::NEG_INFINITY;
                    }
                }
            }
            let mut resp = vec![0.0; logits.len()];
            normalize(&logits, &mut resp, k);
            let trial = run_vb(values, resp, k, &prior, cfg);
            if trial.bound >= state.bound {
                dead[c] = true;
                state = trial;
                accepted = true;
                break;
            }
        }
        if !accepted {
            break;
        }
    }

    let alpha_hat: f64 = state.post.alpha.iter().sum();
    let mut modes: Vec<Mode> = (0..k)
        .map(|c| Mode {
            mean: state.post.mean[c],
            std: (1.0 / (state.post.nu[c] * state.post.w[c])).sqrt().max(STD_FLOOR),
            weight: state.post.alpha[c] / alpha_hat,
        })
        .filter(|m| m.weight >= cfg.prune_threshold)
        .collect();
    if modes.is_empty() {
        return Ok(degenerate(values));
    }
    let total: f64 = modes.iter().map(|m| m.weight).sum();
    for m in &mut modes {
        m.weight /= total;
    }
    Ok(modes)
}

/// Maximum-likelihood Gaussian mixture with a fixed number of components.
pub fn fit_em<R: Rng + ?Sized>(values: &[f64], k: usize, rng: &mut R) -> Result<Vec<Mode>> {
    check_column(values)?;
    if k == 0 {
        return Err(Error::InvalidArgument("component count must be at least 1".into()));
    }
    if is_degenerate(values) {
        return Ok(degenerate(values));
    }
    let (_, var) = mean_var(values);
    let reg = 1e-6 * var;
    let labels = kmeans(values, k, rng);
    let mut resp = hard_resp(&labels, k);
    let mut logits = vec![0.0; resp.len()];
    let mut modes = vec![
        Mode {
            mean: 0.0,
            std: 1.0,
            weight: 0.0
        };
        k
    ];
    let n = values.len() as f64;
    let mut last = f64::NEG_INFINITY;
    for _ in 0..100 {
        let mut nk = vec![0.0; k];
        let mut sx = vec![0.0; k];
        for (rr, &x) in resp.chunks_exact(k).zip(values) {
            for c in 0..k {
                nk[c] += rr[c];
                sx[c] += rr[c] * x;
            }
        }
        let means: Vec<f64> = (0..k)
            .map(|c| if nk[c] > 0.0 { sx[c] / nk[c] } else { values[0] })
            .collect();
        let mut sv = vec![0.0; k];
        for (rr, &x) in resp.chunks_exact(k).zip(values) {
            for c in 0..k {
                sv[c] += rr[c] * (x - means[c]).powi(2);
            }
        }
        for c in 0..k {
            let v = if nk[c] > 0.0 { sv[c] / nk[c] } else { var } + reg;
            modes[c] = Mode {
                mean: means[c],
                std: v.sqrt().max(STD_FLOOR),
                weight: (nk[c] / n).max(1e-300),
            };
        }
        let mut ll = 0.0;
        for (lr, &x) in logits.chunks_exact_mut(k).zip(values) {
            for (l, m) in lr.iter_mut().zip(&modes) {
                *l = log_normal(x, m.mean, m.std) + m.weight.ln();
            }
            ll += crate::tensor::log_sum_exp(lr);
        }
        normalize(&logits, &mut resp, k);
        let avg = ll / n;
        if (avg - last).abs() < 1e-3 {
            break;
        }
        last = avg;
    }
    let total: f64 = modes.iter().map(|m| m.weight).sum();
    for m in &mut modes {
        m.weight /= total;
    }
    Ok(modes)
}

pub(crate) fn log_normal(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * LN_2PI
}
