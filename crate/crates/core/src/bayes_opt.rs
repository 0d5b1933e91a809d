//! Bayesian optimization of black-box costs with a Gaussian-process surrogate
//! and expected improvement.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{MapError, Result};
use crate::sim::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    /// Search uniformly in `ln x` instead of `x`.
    #[serde(default)]
    pub log_scale: bool,
}

impl Dimension {
    pub fn linear(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
            log_scale: false,
        }
    }

    pub fn log(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
            log_scale: true,
        }
    }

    fn to_unit(&self, x: f64) -> f64 {
        if self.log_scale {
            (x.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln())
        } else {
            (x - self.lower) / (self.upper - self.lower)
        }
    }

    fn value_at(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let x = if self.log_scale {
            (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp()
        } else {
            self.lower + u * (self.upper - self.lower)
        };
        x.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        let s = Self { dims };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(MapError::InvalidConfig("search space has no dimensions".into()));
        }
        for d in &self.dims {
            let ok = d.lower.is_finite() && d.upper.is_finite() && d.lower < d.upper && (!d.log_scale || d.lower > 0.0);
            if !ok {
                return Err(MapError::InvalidConfig(format!(
                    "bad bounds [{}, {}] for '{}'",
                    d.lower, d.upper, d.name
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(x).map(|(d, v)| d.to_unit(*v)).collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(u).map(|(d, v)| d.value_at(*v)).collect()
    }
}

/// Latin-hypercube sample of `n` points in the unit box.
pub fn latin_hypercube(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Jitter on the standardized scale. Posterior variances below it are
/// treated as zero.
const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Hyper {
    log_len: [f64; 8],
    log_signal: f64,
}

/// Zero-mean GP with a squared-exponential ARD kernel on standardized
/// targets.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    lengths: Vec<f64>,
    signal: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn kernel(a: &[f64], b: &[f64], lengths: &[f64], signal: f64) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(lengths).map(|((p, q), l)| ((p - q) / l).powi(2)).sum();
    signal * (-0.5 * r2).exp()
}

fn gram(x: &[Vec<f64>], lengths: &[f64], signal: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        kernel(&x[i], &x[j], lengths, signal) + if i == j { JITTER * signal.max(1.0) } else { 0.0 }
    })
}

/// Log marginal likelihood of standardized targets `z`.
fn log_marginal(x: &[Vec<f64>], z: &DVector<f64>, lengths: &[f64], signal: f64) -> Option<f64> {
    let chol = gram(x, lengths, signal).cholesky()?;
    let alpha = chol.solve(z);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Some(-0.5 * z.dot(&alpha) - 0.5 * log_det - 0.5 * z.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

const LOG_LEN_RANGE: (f64, f64) = (-4.0, 1.6);
const LOG_SIGNAL_RANGE: (f64, f64) = (-3.0, 3.0);

impl GaussianProcess {
    /// Fits kernel hyperparameters by maximizing the marginal likelihood over
    /// seeded random starts followed by a compass search.
    pub fn fit(x: &[Vec<f64>], y: &[f64], rng: &mut ChaCha8Rng) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(MapError::InsufficientData {
                needed: 1,
                got: x.len().min(y.len()),
            });
        }
        let dim = x[0].len();
        if dim > 8 {
            return Err(MapError::InvalidConfig("at most 8 search dimensions".into()));
        }
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        let y_scale = if sd > 1e-12 * y_mean.abs().max(1.0) { sd } else { 1.0 };
        let z = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_scale));

        let score = |h: &Hyper| {
            let lengths: Vec<f64> = h.log_len[..dim].iter().map(|v| v.exp()).collect();
            log_marginal(x, &z, &lengths, h.log_signal.exp()).unwrap_or(f64::NEG_INFINITY)
        };
        let random_hyper = |rng: &mut ChaCha8Rng| {
            let mut log_len = [0.0; 8];
            for v in log_len.iter_mut().take(dim) {
                *v = rng.random_range(LOG_LEN_RANGE.0..LOG_LEN_RANGE.1);
            }
            Hyper {
                log_len,
                log_signal: rng.random_range(LOG_SIGNAL_RANGE.0..LOG_SIGNAL_RANGE.1),
            }
        };
        let mut starts: Vec<(f64, Hyper)> = (0..48)
            .map(|_| {
                let h = random_hyper(rng);
                (score(&h), h)
            })
            .collect();
        let mut default = Hyper {
            log_len: [(0.3f64).ln(); 8],
            log_signal: 0.0,
        };
        default.log_len[dim..].fill(0.0);
        starts.push((score(&default), default));
        starts.sort_by(|a, b| b.0.total_cmp(&a.0));

        let mut best = starts[0];
        for &(s0, h0) in starts.iter().take(3) {
            let (mut s, mut h) = (s0, h0);
            let mut step = 0.5;
            while step > 1e-3 {
                let mut moved = false;
                for p in 0..=dim {
                    for sign in [-1.0, 1.0] {
                        let mut c = h;
                        let (v, range) = if p < dim {
                            (&mut c.log_len[p], LOG_LEN_RANGE)
                        } else {
                            (&mut c.log_signal, LOG_SIGNAL_RANGE)
                        };
                        *v = (*v + sign * step).clamp(range.0, range.1);
                        let sc = score(&c);
                        if sc > s {
                            (s, h, moved) = (sc, c, true);
                        }
                    }
                }
                if !moved {
                    step /= 2.0;
                }
            }
            if s > best.0 {
                best = (s, h);
            }
        }
        let lengths: Vec<f64> = best.1.log_len[..dim].iter().map(|v| v.exp()).collect();
        let signal = best.1.log_signal.exp();
        let chol = gram(x, &lengths, signal).cholesky().ok_or(MapError::SingularSystem)?;
        let alpha = chol.solve(&z);
        Ok(Self {
            x: x.to_vec(),
            y_mean,
            y_scale,
            lengths,
            signal,
            chol,
            alpha,
        })
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.lengths
    }

    /// Posterior mean and standard deviation in cost units.
    pub fn predict(&self, p: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(xi, p, &self.lengths, self.signal)));
        let mean = ks.dot(&self.alpha);
        let v = self.chol.solve(&ks);
        let mut var = self.signal - ks.dot(&v);
        if var < 10.0 * JITTER * self.signal.max(1.0) {
            var = 0.0;
        }
        (self.y_mean + self.y_scale * mean, self.y_scale * var.sqrt())
    }
}

/// Expected improvement below `best` for a Gaussian prediction.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let gap = best - mean;
    if sd <= 0.0 {
        return gap.max(0.0);
    }
    let n = Normal::standard();
    let z = gap / sd;
    (gap * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub budget: usize,
    pub initial: usize,
    pub candidates: usize,
    pub local_starts: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            budget: 30,
            initial: 5,
            candidates: 1000,
            local_starts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub cost: f64,
    pub incumbent_cost: f64,
    /// The evaluation failed and `cost` is a penalty.
    pub penalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoResult {
    pub best: Vec<f64>,
    pub best_cost: f64,
    pub trace: Vec<TraceRow>,
}

/// Penalty for a failed evaluation: ten times the worst finite cost so far
/// for positive costs, pushed above it by `9·max(|worst|, 1)` in general, or
/// 1e6 before any finite cost.
pub fn penalty(worst: Option<f64>) -> f64 {
    match worst {
        Some(w) => w + 9.0 * w.abs().max(1.0),
        None => 1e6,
    }
}

fn maximize_ei(gp: &GaussianProcess, best: f64, dim: usize, cfg: &BoConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let ei = |p: &[f64]| {
        let (m, s) = gp.predict(p);
        expected_improvement(m, s, best)
    };
    let mut cands: Vec<(f64, Vec<f64>)> = (0..cfg.candidates.max(1))
        .map(|_| {
            let p: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            (ei(&p), p)
        })
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut winner = cands[0].clone();
    for (v0, p0) in cands.into_iter().take(cfg.local_starts.max(1)) {
        let (mut v, mut p) = (v0, p0);
        let mut step = 0.05;
        while step > 1e-4 {
            let mut moved = false;
            for d in 0..dim {
                for sign in [-1.0, 1.0] {
                    let mut c = p.clone();
                    c[d] = (c[d] + sign * step).clamp(0.0, 1.0);
                    let vc = ei(&c);
                    if vc > v {
                        (v, p, moved) = (vc, c, true);
                    }
                }
            }
            if !moved {
                step /= 2.0;
            }
        }
        if v > winner.0 {
            winner = (v, p);
        }
    }
    winner.1
}

/// Minimizes `cost` over `space`. `seeds` are evaluated first (in original
/// units), then a Latin-hypercube design fills up to `cfg.initial` points,
/// then each further evaluation maximizes expected improvement.
pub fn bo_minimize<F>(mut cost: F, space: &SearchSpace, cfg: &BoConfig, seed: u64, seeds: &[Vec<f64>]) -> Result<BoResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    space.validate()?;
    if cfg.budget < cfg.initial.max(seeds.len()) || cfg.budget == 0 {
        return Err(MapError::InvalidConfig(format!(
            "budget {} is smaller than the initial design",
            cfg.budget
        )));
    }
    let dim = space.len();
    let mut rng = seeded_rng(seed);
    let mut design: Vec<Vec<f64>> = seeds
        .iter()
        .map(|s| {
            if s.len() != dim {
                return Err(MapError::LengthMismatch(format!("seed point has {} of {dim} coordinates", s.len())));
            }
            Ok(space.to_unit(s).into_iter().map(|u| u.clamp(0.0, 1.0)).collect())
        })
        .collect::<Result<_>>()?;
    let fill = cfg.initial.saturating_sub(design.len());
    design.extend(latin_hypercube(fill, dim, &mut rng));

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut worst: Option<f64> = None;
    let mut trace = Vec::new();
    let mut incumbent = (f64::INFINITY, 0usize);

    for iter in 0..cfg.budget {
        let unit = if iter < design.len() {
            design[iter].clone()
        } else {
            let gp = GaussianProcess::fit(&xs, &ys, &mut rng)?;
            maximize_ei(&gp, incumbent.0, dim, cfg, &mut rng)
        };
        let theta = space.from_unit(&unit);
        let (value, penalized) = match cost(&theta) {
            Ok(v) if v.is_finite() => {
                worst = Some(worst.map_or(v, |w: f64| w.max(v)));
                (v, false)
            }
            Ok(_) | Err(_) => (penalty(worst), true),
        };
        if value < incumbent.0 {
            incumbent = (value, iter);
        }
        xs.push(space.to_unit(&theta));
        ys.push(value);
        trace.push(TraceRow {
            iter,
            theta,
            cost: value,
            incumbent_cost: incumbent.0,
            penalized,
        });
    }
    let best = trace[incumbent.1].theta.clone();
    Ok(BoResult {
        best,
        best_cost: incumbent.0,
        trace,
    })
}
