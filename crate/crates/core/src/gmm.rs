//! Diagonal-covariance Gaussian mixture countermeasure.
//!
//! Two mixtures (bona fide, spoof) are trained by EM; a trial's score is the
//! mean per-frame log-likelihood ratio `log p(o|bona) - log p(o|spoof)`, so
//! higher scores mean "more bona fide".

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Frames per E-step chunk. Partial sums are combined in chunk order so the
/// result does not depend on thread scheduling.
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub components: usize,
    pub max_iter: usize,
    /// Stop when the average log-likelihood improves by less than this
    /// fraction of its magnitude.
    pub rel_tol: f64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub var_floor_rel: f64,
    pub kmeans_iter: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            components: 64,
            max_iter: 50,
            rel_tol: 1e-4,
            var_floor_rel: 1e-3,
            kmeans_iter: 10,
        }
    }
}

/// Pooled training frames of one class, row-major.
#[derive(Debug, Clone, Default)]
pub struct FramePool {
    data: Vec<f64>,
    dim: usize,
}

impl FramePool {
    pub fn new(dim: usize) -> Self {
        FramePool {
            data: Vec::new(),
            dim,
        }
    }

    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        Ok(FramePool { data, dim })
    }

    pub fn push_matrix(&mut self, m: &FeatureMatrix) -> Result<()> {
        if m.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: m.dim(),
            });
        }
        self.data.extend_from_slice(m.as_flat());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn flat(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    // per component: ln w - 0.5 (D ln 2pi + sum ln var)
    log_consts: Vec<f64>,
    inv_vars: Vec<Vec<f64>>,
}

/// Outcome of EM training.
#[derive(Debug, Clone)]
pub struct TrainedGmm {
    pub model: GmmModel,
    /// Average per-frame log-likelihood of the training data, evaluated at
    /// the initial parameters and after every EM update.
    pub log_likelihoods: Vec<f64>,
    pub variance_floor: Vec<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let m = weights.len();
        if m == 0 || means.len() != m || variances.len() != m {
            return Err(Error::InvalidParameter(
                "GMM needs matching, non-empty weight/mean/variance lists".into(),
            ));
        }
        let dim = means[0].len();
        for (mu, var) in means.iter().zip(&variances) {
            if mu.len() != dim || var.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: mu.len().max(var.len()),
                });
            }
        }
        let all_finite = weights.iter().chain(means.iter().flatten()).chain(variances.iter().flatten()).all(|v| v.is_finite());
        if !all_finite
            || weights.iter().any(|&w| w <= 0.0)
            || variances.iter().flatten().any(|&v| v <= 0.0)
        {
            return Err(Error::InvalidParameter(
                "GMM weights and variances must be positive and finite".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("GMM weights sum to {total}")));
        }
        let log_consts = weights
            .iter()
            .zip(&variances)
            .map(|(w, var)| {
                w.ln() - 0.5 * (dim as f64 * LN_2PI + var.iter().map(|v| v.ln()).sum::<f64>())
            })
            .collect();
        let inv_vars = variances
            .iter()
            .map(|var| var.iter().map(|v| 1.0 / v).collect())
            .collect();
        Ok(GmmModel {
            weights,
            means,
            variances,
            log_consts,
            inv_vars,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Per-component joint log densities `ln w_k + ln N(x | k)`.
    fn component_log_probs(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mu = &self.means[k];
            let iv = &self.inv_vars[k];
            // four independent accumulators break the add dependency chain
            let mut acc = [0.0f64; 4];
            let split = x.len() / 4 * 4;
            for ((xs, ms), vs) in x[..split]
                .chunks_exact(4)
                .zip(mu[..split].chunks_exact(4))
                .zip(iv[..split].chunks_exact(4))
            {
                for l in 0..4 {
                    let diff = xs[l] - ms[l];
                    acc[l] += diff * diff * vs[l];
                }
            }
            for d in split..x.len() {
                let diff = x[d] - mu[d];
                acc[0] += diff * diff * iv[d];
            }
            let q = (acc[0] + acc[1]) + (acc[2] + acc[3]);
            *o = self.log_consts[k] - 0.5 * q;
        }
    }

    /// `ln p(x)`, log-sum-exp stabilized.
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.components()];
        self.component_log_probs(x, &mut buf);
        log_sum_exp(&buf)
    }

    /// Mean log-likelihood over the rows of a frame pool.
    pub fn average_log_likelihood(&self, pool: &FramePool) -> f64 {
        let chunks: Vec<f64> = pool
            .flat()
            .par_chunks(CHUNK * pool.dim())
            .map(|chunk| {
                let mut buf = vec![0.0; self.components()];
                chunk
                    .chunks_exact(pool.dim())
                    .map(|x| {
                        self.component_log_probs(x, &mut buf);
                        log_sum_exp(&buf)
                    })
                    .sum::<f64>()
            })
            .collect();
        chunks.iter().sum::<f64>() / pool.len() as f64
    }

    /// Draw `n` frames from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        use rand::distr::{weighted::WeightedIndex, Distribution};
        use rand_distr::StandardNormal;
        let pick = WeightedIndex::new(&self.weights).expect("weights are positive");
        (0..n)
            .map(|_| {
                let k = pick.sample(rng);
                self.means[k]
                    .iter()
                    .zip(&self.variances[k])
                    .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    /// Plain-text serialization:
    ///
    /// ```text
    /// hansaudit-gmm v1
    /// components <M> dim <D>
    /// <weight> | <mean_1> .. <mean_D> | <var_1> .. <var_D>     (M lines)
    /// ```
    ///
    /// Numbers use Rust's shortest round-trip formatting, so a
    /// write/read cycle is exact.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "hansaudit-gmm v1\ncomponents {} dim {}\n",
            self.components(),
            self.dim()
        );
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        for k in 0..self.components() {
            let _ = writeln!(
                s,
                "{:?} | {} | {}",
                self.weights[k],
                join(&self.means[k]),
                join(&self.variances[k])
            );
        }
        s
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let bad = |reason: String| Error::ModelFormat {
            path: source.to_string(),
            reason,
        };
        let mut lines = text.lines();
        if lines.next() != Some("hansaudit-gmm v1") {
            return Err(bad("missing `hansaudit-gmm v1` header".into()));
        }
        let dims: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("missing size line".into()))?
            .split_whitespace()
            .collect();
        let (m, d) = match dims.as_slice() {
            ["components", m, "dim", d] => (
                m.parse::<usize>().map_err(|e| bad(e.to_string()))?,
                d.parse::<usize>().map_err(|e| bad(e.to_string()))?,
            ),
            _ => return Err(bad("malformed size line".into())),
        };
        let parse_vec = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| bad(format!("`{t}`: {e}"))))
                .collect()
        };
        let (mut weights, mut means, mut vars) = (Vec::new(), Vec::new(), Vec::new());
        for k in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing component {k}")))?;
            let parts: Vec<&str> = line.split('|').collect();
            if parts.len() != 3 {
                return Err(bad(format!("component {k}: expected 3 `|`-separated fields")));
            }
            let w = parse_vec(parts[0])?;
            let mu = parse_vec(parts[1])?;
            let var = parse_vec(parts[2])?;
            if w.len() != 1 || mu.len() != d || var.len() != d {
                return Err(bad(format!("component {k}: wrong field lengths")));
            }
            weights.push(w[0]);
            means.push(mu);
            vars.push(var);
        }
        GmmModel::new(weights, means, vars).map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GmmModel::from_text(&text, &path.display().to_string())
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by a few Lloyd iterations.
fn kmeans<R: Rng + ?Sized>(pool: &FramePool, k: usize, iters: usize, rng: &mut R) -> Vec<usize> {
    let n = pool.len();
    let mut centers: Vec<Vec<f64>> = vec![pool.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(pool.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = pool.row(next).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(pool.row(i), &c));
        }
        centers.push(c);
    }
    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let x = pool.row(i);
                let mut best = (0, f64::INFINITY);
                for (j, c) in centers.iter().enumerate() {
                    let d = sq_dist(x, c);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best.0
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; pool.dim()]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(pool.row(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Sufficient statistics of one E-step.
struct Stats {
    n: Vec<f64>,
    sx: Vec<Vec<f64>>,
    sxx: Vec<Vec<f64>>,
    ll: f64,
}

impl Stats {
    fn zero(m: usize, d: usize) -> Self {
        Stats {
            n: vec![0.0; m],
            sx: vec![vec![0.0; d]; m],
            sxx: vec![vec![0.0; d]; m],
            ll: 0.0,
        }
    }

    fn add(&mut self, other: &Stats) {
        self.ll += other.ll;
        for k in 0..self.n.len() {
            self.n[k] += other.n[k];
            for d in 0..self.sx[k].len() {
                self.sx[k][d] += other.sx[k][d];
                self.sxx[k][d] += other.sxx[k][d];
            }
        }
    }
}

fn e_step(model: &GmmModel, pool: &FramePool) -> Stats {
    let (m, d) = (model.components(), pool.dim());
    let partial: Vec<Stats> = pool
        .flat()
        .par_chunks(CHUNK * d)
        .map(|chunk| {
            let mut st = Stats::zero(m, d);
            let mut lp = vec![0.0; m];
            for x in chunk.chunks_exact(d) {
                model.component_log_probs(x, &mut lp);
                let total = log_sum_exp(&lp);
                st.ll += total;
                for k in 0..m {
                    let r = (lp[k] - total).exp();
                    if r == 0.0 {
                        continue;
                    }
                    st.n[k] += r;
                    for ((a, b), &xj) in st.sx[k].iter_mut().zip(st.sxx[k].iter_mut()).zip(x) {
                        let rx = r * xj;
                        *a += rx;
                        *b += rx * xj;
                    }
                }
            }
            st
        })
        .collect();
    let mut total = Stats::zero(m, d);
    for p in &partial {
        total.add(p);
    }
    total
}

fn m_step(st: &Stats, prev: &GmmModel, floor: &[f64], n_frames: usize) -> Result<GmmModel> {
    let m = st.n.len();
    let mut weights = Vec::with_capacity(m);
    let mut means = Vec::with_capacity(m);
    let mut vars = Vec::with_capacity(m);
    for k in 0..m {
        let nk = st.n[k];
        weights.push((nk / n_frames as f64).max(1e-300));
        if nk < 1e-10 {
            // starved component: keep its shape, weight goes to ~0
            means.push(prev.means[k].clone());
            vars.push(prev.variances[k].clone());
            continue;
        }
        let mu: Vec<f64> = st.sx[k].iter().map(|s| s / nk).collect();
        let var: Vec<f64> = st.sxx[k]
            .iter()
            .zip(&mu)
            .zip(floor)
            .map(|((s, mu), fl)| (s / nk - mu * mu).max(*fl))
            .collect();
        means.push(mu);
        vars.push(var);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GmmModel::new(weights, means, vars)
}

/// Per-dimension mean and population variance.
fn global_moments(pool: &FramePool) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (pool.len() as f64, pool.dim());
    let mut mean = vec![0.0; d];
    for i in 0..pool.len() {
        for (m, x) in mean.iter_mut().zip(pool.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for i in 0..pool.len() {
        for ((v, x), m) in var.iter_mut().zip(pool.row(i)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Train a diagonal GMM by EM from a k-means++ start.
pub fn train_gmm<R: Rng + ?Sized>(pool: &FramePool, cfg: &GmmConfig, rng: &mut R) -> Result<TrainedGmm> {
    let m = cfg.components;
    if m == 0 {
        return Err(Error::InvalidParameter("GMM needs at least one component".into()));
    }
    if pool.len() < 2 * m {
        return Err(Error::InvalidParameter(format!(
            "{} training frames for {m} components",
            pool.len()
        )));
    }
    let (_, global_var) = global_moments(pool);
    if let Some(dim) = global_var.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateDimension { dim });
    }
    let floor: Vec<f64> = global_var.iter().map(|v| v * cfg.var_floor_rel).collect();

    let labels = if m == 1 {
        vec![0; pool.len()]
    } else {
        kmeans(pool, m, cfg.kmeans_iter, rng)
    };
    // hard-assignment statistics give the starting model
    let mut st = Stats::zero(m, pool.dim());
    for (i, &l) in labels.iter().enumerate() {
        st.n[l] += 1.0;
        for (j, x) in pool.row(i).iter().enumerate() {
            st.sx[l][j] += x;
            st.sxx[l][j] += x * x;
        }
    }
    let (gm, gv) = global_moments(pool);
    let fallback = GmmModel::new(vec![1.0 / m as f64; m], vec![gm; m], vec![gv; m])?;
    let mut model = m_step(&st, &fallback, &floor, pool.len())?;

    let mut lls = Vec::new();
    for _ in 0..cfg.max_iter {
        let st = e_step(&model, pool);
        let ll = st.ll / pool.len() as f64;
        if let Some(&prev) = lls.last() {
            let prev: f64 = prev;
            if (ll - prev) / prev.abs().max(1e-12) < cfg.rel_tol {
                lls.push(ll);
                break;
            }
        }
        lls.push(ll);
        model = m_step(&st, &model, &floor, pool.len())?;
    }
    if lls.len() == cfg.max_iter || lls.is_empty() {
        lls.push(model.average_log_likelihood(pool));
    }
    Ok(TrainedGmm {
        model,
        log_likelihoods: lls,
        variance_floor: floor,
    })
}

/// Detection score of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmScore {
    pub utt_id: String,
    pub score: f64,
}

/// Mean per-frame log-likelihood ratio, bona fide over spoof.
pub fn score_frames(features: &FeatureMatrix, bona: &GmmModel, spoof: &GmmModel) -> Result<f64> {
    for model in [bona, spoof] {
        if model.dim() != features.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: features.dim(),
            });
        }
    }
    if features.n_frames() == 0 {
        return Err(Error::TooShort("no frames to score".into()));
    }
    let mut b = vec![0.0; bona.components()];
    let mut s = vec![0.0; spoof.components()];
    let total: f64 = features
        .rows()
        .map(|x| {
            bona.component_log_probs(x, &mut b);
            spoof.component_log_probs(x, &mut s);
            log_sum_exp(&b) - log_sum_exp(&s)
        })
        .sum();
    Ok(total / features.n_frames() as f64)
}

pub fn score(
    utt_id: &str,
    features: &FeatureMatrix,
    bona: &GmmModel,
    spoof: &GmmModel,
) -> Result<CmScore> {
    Ok(CmScore {
        utt_id: utt_id.to_string(),
        score: score_frames(features, bona, spoof)?,
    })
}
