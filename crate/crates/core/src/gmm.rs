//! One-dimensional Gaussian mixtures fitted by EM.

use std::f64::consts::PI;

use log::warn;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};
use crate::sim::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmFile", into = "GmmFile")]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
struct GmmFile {
    k: usize,
    #[serde(rename = "weights")]
    weights: Vec<f64>,
    #[serde(rename = "means")]
    means: Vec<f64>,
    #[serde(rename = "variances")]
    variances: Vec<f64>,
}

impl From<GmmModel> for GmmFile {
    fn from(m: GmmModel) -> Self {
        GmmFile {
            k: m.k(),
            weights: m.weights,
            means: m.means,
            variances: m.variances,
        }
    }
}

impl TryFrom<GmmFile> for GmmModel {
    type Error = MapError;

    fn try_from(f: GmmFile) -> Result<Self> {
        if f.k != f.weights.len() {
            return Err(MapError::LengthMismatch(format!("K = {} but {} weights", f.k, f.weights.len())));
        }
        GmmModel::new(f.weights, f.means, f.variances)
    }
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(MapError::LengthMismatch("mixture parameter lists differ in length".into()));
        }
        let total: f64 = weights.iter().sum();
        let ok = weights.iter().all(|w| *w > 0.0 && w.is_finite())
            && (total - 1.0).abs() <= 1e-9
            && means.iter().all(|m| m.is_finite())
            && variances.iter().all(|v| *v > 0.0 && v.is_finite());
        if !ok {
            return Err(MapError::InvalidConfig("invalid mixture parameters".into()));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `ln(π_k N(x | μ_k, Σ_k))` for every component.
    fn log_terms(&self, x: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let v = self.variances[k];
            *o = self.weights[k].ln() - 0.5 * (2.0 * PI * v).ln() - 0.5 * (x - self.means[k]).powi(2) / v;
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let mut terms = vec![0.0; self.k()];
        self.log_terms(x, &mut terms);
        log_sum_exp(&terms)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `−Σ ln p(x_i)`. Empty data gives 0.
pub fn nll(model: &GmmModel, data: &[f64]) -> f64 {
    if data.is_empty() {
        warn!("negative log likelihood of an empty data set taken as 0");
        return 0.0;
    }
    -data.iter().map(|x| model.log_density(*x)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub variance_floor: f64,
    pub restarts: usize,
    pub max_iters: usize,
    /// EM stops once an iteration lowers the NLL by less than this.
    pub tol: f64,
    /// Model selection stops when adding a component improves the NLL by
    /// less than this fraction.
    pub rel_tol: f64,
    /// An extra component must also lower the NLL by `penalty · ln n`.
    /// 1.5 matches BIC for the three parameters a component adds.
    pub penalty: f64,
    pub k_max: usize,
    /// All restarts run this many iterations; only the best `keep` continue.
    #[serde(default = "default_screen_iters")]
    pub screen_iters: usize,
    #[serde(default = "default_keep")]
    pub keep: usize,
    /// Tie all components to one variance.
    pub shared_variance: bool,
}

fn default_screen_iters() -> usize {
    20
}

fn default_keep() -> usize {
    3
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            variance_floor: 1e-4,
            restarts: 10,
            max_iters: 500,
            tol: 1e-10,
            rel_tol: 1e-3,
            penalty: 1.5,
            k_max: 8,
            screen_iters: default_screen_iters(),
            keep: default_keep(),
            shared_variance: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    pub nll: f64,
    /// NLL after every EM iteration, per restart.
    pub restart_histories: Vec<Vec<f64>>,
}

fn sample_variance(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Runs EM from `start` until the NLL stalls.
fn run_em(data: &[f64], start: GmmModel, cfg: &EmConfig, max_iters: usize) -> (GmmModel, Vec<f64>, bool) {
    let (n, k) = (data.len(), start.k());
    let mut model = start;
    let mut resp = vec![0.0; n * k];
    let mut terms = vec![0.0; k];
    let mut history = Vec::new();
    let mut last = f64::INFINITY;
    for _ in 0..max_iters {
        // E-step, which also yields the NLL of the current model
        let mut total = 0.0;
        for (i, x) in data.iter().enumerate() {
            model.log_terms(*x, &mut terms);
            let lse = log_sum_exp(&terms);
            total -= lse;
            for c in 0..k {
                resp[i * k + c] = (terms[c] - lse).exp();
            }
        }
        history.push(total);
        if last - total < cfg.tol * total.abs().max(1.0) {
            return (model, history, true);
        }
        last = total;
        // M-step
        let mut next = model.clone();
        let mut scatter = 0.0;
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            if nk <= f64::MIN_POSITIVE * 1e3 {
                continue;
            }
            let mean = (0..n).map(|i| resp[i * k + c] * data[i]).sum::<f64>() / nk;
            let ss = (0..n).map(|i| resp[i * k + c] * (data[i] - mean).powi(2)).sum::<f64>();
            scatter += ss;
            next.weights[c] = nk / n as f64;
            next.means[c] = mean;
            next.variances[c] = (ss / nk).max(cfg.variance_floor);
        }
        if cfg.shared_variance {
            next.variances.fill((scatter / n as f64).max(cfg.variance_floor));
        }
        let total_w: f64 = next.weights.iter().sum();
        next.weights.iter_mut().for_each(|w| *w /= total_w);
        model = next;
    }
    (model, history, false)
}

/// Initial model from `k` distinct random data points as means, with one
/// nearest-mean assignment for weights and variances.
fn random_start(data: &[f64], k: usize, rng: &mut rand_chacha::ChaCha8Rng, cfg: &EmConfig) -> GmmModel {
    let floor = cfg.variance_floor;
    // k-means++ seeding
    let mut means = vec![data[rng.random_range(0..data.len())]];
    while means.len() < k {
        let d2: Vec<f64> = data
            .iter()
            .map(|x| means.iter().map(|m| (x - m).powi(2)).fold(f64::INFINITY, f64::min))
            .collect();
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => data[dist.sample(rng)],
            Err(_) => data[rng.random_range(0..data.len())],
        };
        means.push(next);
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); k];
    for x in data {
        let c = (0..k)
            .min_by(|a, b| (x - means[*a]).abs().total_cmp(&(x - means[*b]).abs()))
            .unwrap();
        groups[c].push(*x);
    }
    let fallback = sample_variance(data).max(floor);
    let weights: Vec<f64> = groups.iter().map(|g| (g.len().max(1)) as f64).collect();
    let wsum: f64 = weights.iter().sum();
    let mut variances: Vec<f64> = groups
        .iter()
        .map(|g| if g.len() > 1 { sample_variance(g).max(floor) } else { fallback })
        .collect();
    if cfg.shared_variance {
        let pooled = groups.iter().zip(&variances).map(|(g, v)| g.len() as f64 * v).sum::<f64>() / data.len() as f64;
        variances.fill(pooled.max(floor));
    }
    GmmModel {
        weights: weights.into_iter().map(|w| w / wsum).collect(),
        means,
        variances,
    }
}

/// EM from every start. The first `forced` starts always run to the end; of
/// the others only the `keep` best after screening do.
fn fit_from_starts(data: &[f64], starts: Vec<GmmModel>, forced: usize, cfg: &EmConfig) -> EmFit {
    let screen = cfg.screen_iters.min(cfg.max_iters);
    let mut runs: Vec<(GmmModel, Vec<f64>, bool)> = starts.into_iter().map(|s| run_em(data, s, cfg, screen)).collect();
    let mut order: Vec<usize> = (forced..runs.len()).filter(|&r| !runs[r].2).collect();
    order.sort_by(|&a, &b| runs[a].1[runs[a].1.len() - 1].total_cmp(&runs[b].1[runs[b].1.len() - 1]));
    order.truncate(cfg.keep.max(1));
    order.extend((0..forced.min(runs.len())).filter(|&r| !runs[r].2));
    for r in order {
        let (model, more, _) = run_em(data, runs[r].0.clone(), cfg, cfg.max_iters - screen);
        runs[r].0 = model;
        runs[r].1.extend(more);
    }
    let mut best: Option<(GmmModel, f64)> = None;
    let mut histories = Vec::with_capacity(runs.len());
    for (model, history, _) in runs {
        let value = nll(&model, data);
        histories.push(history);
        if best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((model, value));
        }
    }
    let (model, nll) = best.expect("at least one start");
    EmFit {
        model,
        nll,
        restart_histories: histories,
    }
}

/// Best of `cfg.restarts` EM runs with `k` components.
pub fn em_fit(data: &[f64], k: usize, seed: u64, cfg: &EmConfig) -> Result<EmFit> {
    if k == 0 || data.len() < k {
        return Err(MapError::InsufficientData {
            needed: k.max(1),
            got: data.len(),
        });
    }
    let mut rng = seeded_rng(seed);
    let starts = (0..cfg.restarts.max(1))
        .map(|_| random_start(data, k, &mut rng, cfg))
        .collect();
    Ok(fit_from_starts(data, starts, 0, cfg))
}

/// Adds one component by halving the widest one. With `offset` false the
/// copy is exact and the likelihood is unchanged; otherwise the two halves
/// move half a standard deviation apart.
fn split_widest(m: &GmmModel, offset: bool) -> GmmModel {
    let w = (0..m.k())
        .max_by(|a, b| m.variances[*a].total_cmp(&m.variances[*b]))
        .unwrap();
    let half = if offset { 0.5 * m.variances[w].sqrt() } else { 0.0 };
    let mut out = m.clone();
    out.weights[w] /= 2.0;
    out.means[w] -= half;
    out.weights.push(out.weights[w]);
    out.means.push(m.means[w] + half);
    out.variances.push(m.variances[w]);
    out
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub model: GmmModel,
    /// `(K, NLL)` for every component count that was fitted.
    pub history: Vec<(usize, f64)>,
}

/// Fits `K = 1..=min(k_max, n)` and returns the model with the lowest
/// penalised score `NLL_K + K · max(rel_tol · |NLL_1|, penalty · ln n)`.
///
/// Every `K` also starts EM from the previous fit with its widest component
/// split in two, so the recorded NLL never increases with `K`.
pub fn select_model(data: &[f64], seed: u64, cfg: &EmConfig) -> Result<Selection> {
    if data.is_empty() {
        return Err(MapError::InsufficientData { needed: 1, got: 0 });
    }
    let first = em_fit(data, 1, seed, cfg)?;
    let per_component = (cfg.rel_tol * first.nll.abs()).max(cfg.penalty * (data.len() as f64).ln());
    let mut history = vec![(1, first.nll)];
    let mut best = (first.nll + per_component, first.model.clone());
    let mut prev = first;
    for k in 2..=cfg.k_max.min(data.len()) {
        let mut rng = seeded_rng(seed.wrapping_add(k as u64));
        let mut starts = vec![split_widest(&prev.model, false), split_widest(&prev.model, true)];
        starts.extend((0..cfg.restarts.max(1)).map(|_| random_start(data, k, &mut rng, cfg)));
        let fit = fit_from_starts(data, starts, 2, cfg);
        history.push((k, fit.nll));
        let score = fit.nll + k as f64 * per_component;
        if score < best.0 {
            best = (score, fit.model.clone());
        }
        prev = fit;
    }
    Ok(Selection { model: best.1, history })
}

/// Circumference from a mixture over loop-closure path distances.
///
/// Components with weight at least `weight_floor` are assigned the multiple
/// `n_k = round(μ_k / μ_min)`; the result is the weighted least-squares
/// `U = Σ n_k μ_k π_k / Σ n_k² π_k`. Components wider than a quarter of the
/// base period (`σ_k > μ_min / 4`) span several multiples and are left out
/// unless nothing else remains.
pub fn estimate_circumference(model: &GmmModel, weight_floor: f64) -> Result<f64> {
    let kept: Vec<(f64, f64, f64)> = (0..model.k())
        .filter(|&k| model.weights[k] >= weight_floor && model.means[k] > 0.0)
        .map(|k| (model.weights[k], model.means[k], model.variances[k].sqrt()))
        .collect();
    if kept.is_empty() {
        return Err(MapError::NoComponentAboveFloor { floor: weight_floor });
    }
    let is_peak = |sd: f64, period: f64| sd <= 0.25 * period;
    let base = kept
        .iter()
        .filter(|k| is_peak(k.2, k.1))
        .map(|k| k.1)
        .fold(f64::INFINITY, f64::min);
    let peaks: Vec<(f64, f64, f64)> = kept.iter().copied().filter(|k| is_peak(k.2, base)).collect();
    let used = if peaks.is_empty() { kept } else { peaks };
    let mu_min = used.iter().map(|k| k.1).fold(f64::INFINITY, f64::min);
    let (mut num, mut den) = (0.0, 0.0);
    for (w, m, _) in used {
        let n = (m / mu_min).round();
        num += n * m * w;
        den += n * n * w;
    }
    Ok(num / den)
}
