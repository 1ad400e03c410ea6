//! K-means centroids and diagonal Gaussian mixtures fitted by EM.

use std::path::Path;

use rand::Rng;

use crate::dataio::{read_matrix, write_matrix, Precision};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::seeded;

pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub vectors: Matrix,
    /// Set when every input point was identical.
    pub degenerate: bool,
}

impl Centroids {
    pub fn count(&self) -> usize {
        self.vectors.rows()
    }

    /// Index of the nearest centroid and its squared distance.
    pub fn nearest(&self, point: &[f64]) -> (usize, f64) {
        nearest(&self.vectors, point)
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Centroids,
    /// Sum of squared distances to the nearest centroid, one entry per
    /// assignment step.
    pub objective: Vec<f64>,
    pub assignments: Vec<usize>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &Matrix, point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centers.row_iter().enumerate() {
        let d = sq_dist(row, point);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_seed(points: &Matrix, k: usize, seed: u64) -> Matrix {
    let mut rng = seeded(seed);
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = points
        .row_iter()
        .map(|p| sq_dist(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, p) in points.row_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

/// Lloyd's algorithm from k-means++ seeding. Stops after `max_iters`
/// assignment steps or when assignments stop changing.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, max_iters: usize) -> Result<KMeansFit> {
    if k == 0 || points.rows() < k {
        return Err(Error::Config(format!(
            "k-means needs 1 <= C_h <= points ({} points, C_h = {k})",
            points.rows()
        )));
    }
    let first = points.row(0);
    if points.row_iter().all(|p| p == first) {
        let vectors = Matrix::from_fn(k, points.cols(), |_, j| first[j]);
        return Ok(KMeansFit {
            centroids: Centroids {
                vectors,
                degenerate: true,
            },
            objective: vec![0.0],
            assignments: vec![0; points.rows()],
        });
    }

    let mut centers = kmeans_pp_seed(points, k, seed);
    let mut assignments: Vec<usize> = vec![usize::MAX; points.rows()];
    let mut objective = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut total = 0.0;
        for (i, p) in points.row_iter().enumerate() {
            let (c, d) = nearest(&centers, p);
            total += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        objective.push(total);
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, points.cols());
        let mut counts = vec![0usize; k];
        for (i, p) in points.row_iter().enumerate() {
            counts[assignments[i]] += 1;
            for (s, v) in sums.row_mut(assignments[i]).iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    Ok(KMeansFit {
        centroids: Centroids {
            vectors: centers,
            degenerate: false,
        },
        objective,
        assignments,
    })
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Matrix,
    pub variances: Matrix,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Matrix, variances: Matrix) -> Result<Self> {
        let m = Self {
            weights,
            means,
            variances,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.rows() != k || self.variances.shape() != self.means.shape() {
            return Err(Error::Dimension {
                op: "gmm",
                left: (k, self.means.cols()),
                right: self.variances.shape(),
            });
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| w.is_nan() || w < 0.0) {
            return Err(Error::Config(format!(
                "mixture weights must form a simplex (sum {total})"
            )));
        }
        if self
            .variances
            .as_slice()
            .iter()
            .any(|&v| v.is_nan() || v < VARIANCE_FLOOR)
        {
            return Err(Error::Config("variance below floor".into()));
        }
        Ok(())
    }

    /// `log π_c + log N(x; μ_c, Σ_c)` for every component.
    fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let mu = self.means.row(c);
            let var = self.variances.row(c);
            let mut acc = 0.0;
            for j in 0..x.len() {
                let diff = x[j] - mu[j];
                acc += LN_2PI + var[j].ln() + diff * diff / var[j];
            }
            *o = self.weights[c].ln() - 0.5 * acc;
        }
    }

    /// Rows `[π_c, μ_c…, σ²_c…]`, one per component.
    pub fn to_matrix(&self) -> Matrix {
        let d = self.dim();
        Matrix::from_fn(self.components(), 1 + 2 * d, |c, j| {
            if j == 0 {
                self.weights[c]
            } else if j <= d {
                self.means[(c, j - 1)]
            } else {
                self.variances[(c, j - 1 - d)]
            }
        })
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.cols() < 3 || !(m.cols() - 1).is_multiple_of(2) {
            return Err(Error::load(
                "gmm",
                format!("bad packed shape {:?}", m.shape()),
            ));
        }
        let d = (m.cols() - 1) / 2;
        let k = m.rows();
        Self::new(
            (0..k).map(|c| m[(c, 0)]).collect(),
            Matrix::from_fn(k, d, |c, j| m[(c, 1 + j)]),
            Matrix::from_fn(k, d, |c, j| m[(c, 1 + d + j)]),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_matrix(path, &self.to_matrix(), Precision::F64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_matrix(&read_matrix(path)?)
    }
}

fn check_dim(points: &Matrix, model: &GmmModel) -> Result<()> {
    if points.cols() != model.dim() {
        return Err(Error::Dimension {
            op: "gmm",
            left: points.shape(),
            right: model.means.shape(),
        });
    }
    Ok(())
}

/// Per-dimension variance of `points` around their mean.
fn global_variance(points: &Matrix) -> Vec<f64> {
    let mean = points.mean_rows();
    let n = points.rows().max(1) as f64;
    let mut var = vec![0.0; points.cols()];
    for p in points.row_iter() {
        for (j, v) in var.iter_mut().enumerate() {
            let diff = p[j] - mean.as_slice()[j];
            *v += diff * diff;
        }
    }
    var.into_iter()
        .map(|v| (v / n).max(VARIANCE_FLOOR))
        .collect()
}

/// M-step applied to the hard nearest-centroid assignment: `μ` = centroids,
/// `π` = assignment frequencies, `Σ` = per-dimension spread of assigned
/// points around their centroid. Empty clusters get weight `1/(10·C_h)`
/// and the global variance before the weights are renormalised.
pub fn gmm_from_centroids(points: &Matrix, centroids: &Centroids) -> Result<GmmModel> {
    let k = centroids.count();
    let d = points.cols();
    if centroids.vectors.cols() != d || points.rows() == 0 {
        return Err(Error::Dimension {
            op: "gmm_from_centroids",
            left: points.shape(),
            right: centroids.vectors.shape(),
        });
    }
    let mut counts = vec![0usize; k];
    let mut sq = Matrix::zeros(k, d);
    for p in points.row_iter() {
        let (c, _) = centroids.nearest(p);
        counts[c] += 1;
        let mu = centroids.vectors.row(c);
        for (j, s) in sq.row_mut(c).iter_mut().enumerate() {
            let diff = p[j] - mu[j];
            *s += diff * diff;
        }
    }
    let n = points.rows() as f64;
    let global = global_variance(points);
    let mut weights = Vec::with_capacity(k);
    let mut variances = Matrix::zeros(k, d);
    for c in 0..k {
        if counts[c] == 0 {
            weights.push(1.0 / (10.0 * k as f64));
            variances.row_mut(c).copy_from_slice(&global);
        } else {
            weights.push(counts[c] as f64 / n);
            let inv = 1.0 / counts[c] as f64;
            for (v, s) in variances.row_mut(c).iter_mut().zip(sq.row(c)) {
                *v = (s * inv).max(VARIANCE_FLOOR);
            }
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GmmModel::new(weights, centroids.vectors.clone(), variances)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    /// `N_p x C_h` posterior class probabilities.
    pub gamma: Matrix,
    /// Most probable class per patch.
    pub class: Vec<usize>,
    /// Posterior of that class.
    pub max_posterior: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// E-step posteriors computed in log space, plus the data log-likelihood.
fn e_step(points: &Matrix, model: &GmmModel) -> (Matrix, f64) {
    let k = model.components();
    let mut gamma = Matrix::zeros(points.rows(), k);
    let mut buf = vec![0.0; k];
    let mut ll = 0.0;
    for (i, x) in points.row_iter().enumerate() {
        model.log_joint(x, &mut buf);
        let max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row = gamma.row_mut(i);
        let mut total = 0.0;
        for (g, l) in row.iter_mut().zip(&buf) {
            *g = (l - max).exp();
            total += *g;
        }
        row.iter_mut().for_each(|g| *g /= total);
        ll += max + total.ln();
    }
    (gamma, ll)
}

pub fn responsibilities(points: &Matrix, model: &GmmModel) -> Result<Responsibilities> {
    check_dim(points, model)?;
    let (gamma, _) = e_step(points, model);
    let mut class = Vec::with_capacity(points.rows());
    let mut max_posterior = Vec::with_capacity(points.rows());
    for row in gamma.row_iter() {
        let (c, v) =
            row.iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, v)| {
                    if v > best.1 {
                        (c, v)
                    } else {
                        best
                    }
                });
        class.push(c);
        max_posterior.push(v);
    }
    Ok(Responsibilities {
        gamma,
        class,
        max_posterior,
    })
}

/// Observed-data log-likelihood `Σ_i log Σ_c π_c N(x_i; μ_c, Σ_c)`.
pub fn log_likelihood(points: &Matrix, model: &GmmModel) -> Result<f64> {
    check_dim(points, model)?;
    let mut buf = vec![0.0; model.components()];
    Ok(points
        .row_iter()
        .map(|x| {
            model.log_joint(x, &mut buf);
            log_sum_exp(&buf)
        })
        .sum())
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    /// Log-likelihood before each iteration and after the last one.
    pub log_likelihood: Vec<f64>,
}

/// Runs `iters` EM iterations. A component whose total responsibility
/// vanishes keeps its previous mean and variance.
pub fn em_fit(points: &Matrix, model: &GmmModel, iters: usize) -> Result<EmFit> {
    check_dim(points, model)?;
    model.validate()?;
    let n = points.rows() as f64;
    let k = model.components();
    let d = model.dim();
    let mut current = model.clone();
    let mut history = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let (gamma, ll) = e_step(points, &current);
        history.push(ll);
        let mut mass = vec![0.0; k];
        let mut sums = Matrix::zeros(k, d);
        for (i, x) in points.row_iter().enumerate() {
            for c in 0..k {
                let g = gamma[(i, c)];
                mass[c] += g;
                for (s, v) in sums.row_mut(c).iter_mut().zip(x) {
                    *s += g * v;
                }
            }
        }
        let mut means = current.means.clone();
        for c in 0..k {
            if mass[c] > 1e-300 {
                for (m, s) in means.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *m = s / mass[c];
                }
            }
        }
        let mut sq = Matrix::zeros(k, d);
        for (i, x) in points.row_iter().enumerate() {
            for c in 0..k {
                let g = gamma[(i, c)];
                let mu = means.row(c);
                for (j, s) in sq.row_mut(c).iter_mut().enumerate() {
                    let diff = x[j] - mu[j];
                    *s += g * diff * diff;
                }
            }
        }
        let mut variances = current.variances.clone();
        for c in 0..k {
            if mass[c] > 1e-300 {
                for (v, s) in variances.row_mut(c).iter_mut().zip(sq.row(c)) {
                    *v = (s / mass[c]).max(VARIANCE_FLOOR);
                }
            }
        }
        let mut weights: Vec<f64> = mass.iter().map(|m| m / n).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        current = GmmModel {
            weights,
            means,
            variances,
        };
    }
    history.push(log_likelihood(points, &current)?);
    Ok(EmFit {
        model: current,
        log_likelihood: history,
    })
}

/// Uniform sample (without replacement) of at most `cap` rows drawn from
/// the given bags, in a seed-determined order.
pub fn sample_patches<'a>(
    bags: impl IntoIterator<Item = &'a Matrix>,
    cap: usize,
    seed: u64,
) -> Result<Matrix> {
    let bags: Vec<&Matrix> = bags.into_iter().collect();
    let d = bags.first().map_or(0, |b| b.cols());
    let total: usize = bags.iter().map(|b| b.rows()).sum();
    let refs: Vec<(usize, usize)> = bags
        .iter()
        .enumerate()
        .flat_map(|(b, m)| (0..m.rows()).map(move |r| (b, r)))
        .collect();
    let picked: Vec<usize> = if total <= cap {
        (0..total).collect()
    } else {
        let mut idx = rand::seq::index::sample(&mut seeded(seed), total, cap).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut data = Vec::with_capacity(picked.len() * d);
    for i in picked {
        let (b, r) = refs[i];
        data.extend_from_slice(bags[b].row(r));
    }
    Matrix::from_vec(data.len() / d.max(1), d, data)
}
