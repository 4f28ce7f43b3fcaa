//! Two-dimensional Gaussian mixture oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, ColumnSpec, Schema, Table};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Variance of every grid mode.
pub const GRID_VARIANCE: f64 = 0.05;
pub const GRID_SPACING: f64 = 2.0;
pub const GRIDR_OFFSET: f64 = 0.2;
pub const RING_RADIUS: f64 = 2.0;
pub const RING_MODES: usize = 8;
pub const RING_STD: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GmmKind {
    Grid,
    GridR,
    Ring,
}

impl std::str::FromStr for GmmKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(GmmKind::Grid),
            "gridr" => Ok(GmmKind::GridR),
            "ring" => Ok(GmmKind::Ring),
            _ => Err(Error::InvalidArgument(format!("unknown mixture oracle `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2 {
    pub mean: [f64; 2],
    /// Covariance `[[a, b], [b, d]]` stored as `[a, b, d]`.
    pub cov: [f64; 3],
    pub weight: f64,
}

impl Gaussian2 {
    pub fn isotropic(mean: [f64; 2], var: f64, weight: f64) -> Self {
        Gaussian2 {
            mean,
            cov: [var, 0.0, var],
            weight,
        }
    }

    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let [a, b, d] = self.cov;
        let det = a * d - b * b;
        let dx = x[0] - self.mean[0];
        let dy = x[1] - self.mean[1];
        let q = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        -LN_2PI - 0.5 * det.ln() - 0.5 * q
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        // Cholesky of the 2x2 covariance.
        let [a, b, d] = self.cov;
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (d - l21 * l21).max(0.0).sqrt();
        let u: f64 = rng.sample(StandardNormal);
        let v: f64 = rng.sample(StandardNormal);
        [self.mean[0] + l11 * u, self.mean[1] + l21 * u + l22 * v]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmOracle {
    pub components: Vec<Gaussian2>,
}

fn points(table: &Table) -> Result<Vec<[f64; 2]>> {
    if table.n_cols() != 2 {
        return Err(Error::Schema(format!("expected 2 continuous columns, found {}", table.n_cols())));
    }
    let x = table.continuous(0)?;
    let y = table.continuous(1)?;
    Ok(x.iter().zip(y).map(|(&a, &b)| [a, b]).collect())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    crate::tensor::log_sum_exp(v)
}

impl GmmOracle {
    /// Uniformly weighted oracle; `seed` only affects the GridR offsets.
    pub fn new(kind: GmmKind, seed: u64) -> Self {
        let mut comps = Vec::new();
        match kind {
            GmmKind::Grid | GmmKind::GridR => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for i in 0..5 {
                    for j in 0..5 {
                        let mut m = [(i as f64 - 2.0) * GRID_SPACING, (j as f64 - 2.0) * GRID_SPACING];
                        if kind == GmmKind::GridR {
                            m[0] += rng.gen_range(-GRIDR_OFFSET..=GRIDR_OFFSET);
                            m[1] += rng.gen_range(-GRIDR_OFFSET..=GRIDR_OFFSET);
                        }
                        comps.push(Gaussian2::isotropic(m, GRID_VARIANCE, 1.0 / 25.0));
                    }
                }
            }
            GmmKind::Ring => {
                for k in 0..RING_MODES {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / RING_MODES as f64;
                    comps.push(Gaussian2::isotropic(
                        [RING_RADIUS * t.cos(), RING_RADIUS * t.sin()],
                        RING_STD * RING_STD,
                        1.0 / RING_MODES as f64,
                    ));
                }
            }
        }
        GmmOracle { components: comps }
    }

    pub fn schema() -> Schema {
        Schema {
            columns: vec![ColumnSpec::continuous("x"), ColumnSpec::continuous("y")],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Table {
        let weights: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
        let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let mut u: f64 = rng.gen();
            let mut k = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    k = i;
                    break;
                }
                u -= w;
            }
            let p = self.components[k].sample(rng);
            xs.push(p[0]);
            ys.push(p[1]);
        }
        Table::new(Self::schema(), vec![ColumnData::Continuous(xs), ColumnData::Continuous(ys)])
            .expect("finite samples")
    }

    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect();
        log_sum_exp(&terms)
    }

    /// Mean log-density over the rows of a two-column table.
    pub fn log_likelihood(&self, table: &Table) -> Result<f64> {
        let pts = points(table)?;
        if pts.is_empty() {
            return Err(Error::InvalidArgument("log-likelihood of an empty table".into()));
        }
        let total: f64 = pts.iter().map(|&p| self.log_density(p).max(super::LOG_ZERO)).sum();
        Ok(total / pts.len() as f64)
    }

    /// Refits a mixture with the same number of components to `table` by EM
    /// with full covariances. Several k-means++ starts; the best is kept.
    pub fn refit<R: Rng + ?Sized>(&self, table: &Table, rng: &mut R) -> Result<GmmOracle> {
        let pts = points(table)?;
        if pts.is_empty() {
            return Err(Error::InvalidArgument("cannot refit on an empty table".into()));
        }
        let k = self.components.len();
        let mut best: Option<(f64, GmmOracle)> = None;
        for _ in 0..3 {
            let (ll, g) = em(&pts, k, rng);
            if best.as_ref().is_none_or(|(b, _)| ll > *b) {
                best = Some((ll, g));
            }
        }
        Ok(best.expect("at least one start").1)
    }
}

fn kmeans_pp<R: Rng + ?Sized>(pts: &[[f64; 2]], k: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let d2 = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let mut centers = vec![pts[rng.gen_range(0..pts.len())]];
    let mut dist: Vec<f64> = pts.iter().map(|&p| d2(p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let c = if total <= 0.0 {
            pts[rng.gen_range(0..pts.len())]
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = pts.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pts[pick]
        };
        centers.push(c);
        for (d, &p) in dist.iter_mut().zip(pts) {
            *d = d.min(d2(p, c));
        }
    }
    // A few Lloyd iterations sharpen the start.
    for _ in 0..20 {
        let mut sums = vec![[0.0; 3]; k];
        for &p in pts {
            let j = (0..k)
                .min_by(|&a, &b| d2(p, centers[a]).total_cmp(&d2(p, centers[b])))
                .expect("k > 0");
            sums[j][0] += p[0];
            sums[j][1] += p[1];
            sums[j][2] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
    }
    centers
}

fn em<R: Rng + ?Sized>(pts: &[[f64; 2]], k: usize, rng: &mut R) -> (f64, GmmOracle) {
    let n = pts.len() as f64;
    let reg = 1e-6;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p[0] / n, a.1 + p[1] / n));
    let var = pts.iter().map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2)).sum::<f64>() / (2.0 * n);
    let init_var = (var / k as f64).max(reg);
    let mut comps: Vec<Gaussian2> = kmeans_pp(pts, k, rng)
        .into_iter()
        .map(|m| Gaussian2::isotropic(m, init_var, 1.0 / k as f64))
        .collect();
    let mut resp = vec![0.0; pts.len() * k];
    let mut last = f64::NEG_INFINITY;
    let mut ll = last;
    for _ in 0..200 {
        // E step
        let mut total = 0.0;
        let mut terms = vec![0.0; k];
        for (i, &p) in pts.iter().enumerate() {
            for (t, c) in terms.iter_mut().zip(&comps) {
                *t = c.weight.ln() + c.log_density(p);
            }
            let lse = log_sum_exp(&terms);
            total += lse;
            for j in 0..k {
                resp[i * k + j] = (terms[j] - lse).exp();
            }
        }
        ll = total / n;
        // M step
        for (j, c) in comps.iter_mut().enumerate() {
            let mut nk = 0.0;
            let (mut sx, mut sy) = (0.0, 0.0);
            for (i, p) in pts.iter().enumerate() {
                let r = resp[i * k + j];
                nk += r;
                sx += r * p[0];
                sy += r * p[1];
            }
            if nk < 1e-10 {
                // Dead component: restart it on a random point.
                *c = Gaussian2::isotropic(pts[rng.gen_range(0..pts.len())], init_var, 1e-10);
                continue;
            }
            let m = [sx / nk, sy / nk];
            let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
            for (i, p) in pts.iter().enumerate() {
                let r = resp[i * k + j];
                let dx = p[0] - m[0];
                let dy = p[1] - m[1];
                a += r * dx * dx;
                b += r * dx * dy;
                d += r * dy * dy;
            }
            *c = Gaussian2 {
                mean: m,
                cov: [a / nk + reg, b / nk, d / nk + reg],
                weight: nk / n,
            };
        }
        let wsum: f64 = comps.iter().map(|c| c.weight).sum();
        comps.iter_mut().for_each(|c| c.weight /= wsum);
        if (ll - last).abs() < 1e-6 {
            break;
        }
        last = ll;
    }
    (ll, GmmOracle { components: comps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction() {
        assert_eq!(GmmOracle::new(GmmKind::Grid, 0).components.len(), 25);
        let ring = GmmOracle::new(GmmKind::Ring, 0);
        for c in &ring.components {
            assert!((c.mean[0].hypot(c.mean[1]) - RING_RADIUS).abs() < 1e-12);
        }
        assert_eq!(GmmOracle::new(GmmKind::GridR, 4), GmmOracle::new(GmmKind::GridR, 4));
        assert_ne!(GmmOracle::new(GmmKind::GridR, 4), GmmOracle::new(GmmKind::GridR, 5));
        let w: f64 = ring.components.iter().map(|c| c.weight).sum();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_density_at_mean() {
        let g = Gaussian2::isotropic([0.0, 0.0], 1.0, 1.0);
        assert!((g.log_density([0.0, 0.0]) - (1.0 / (2.0 * std::f64::consts::PI)).ln()).abs() < 1e-12);
    }

    #[test]
    fn unknown_kind() {
        assert!("spiral".parse::<GmmKind>().is_err());
    }
}
