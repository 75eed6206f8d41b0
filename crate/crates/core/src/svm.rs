//! Two-class soft-margin support vector machines.
//!
//! Labels are `true` for the +1 class. Decision values are signed margins,
//! positive on the +1 side.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            c: 1.0,
            tolerance: 1e-3,
            max_iterations: 10_000_000,
        }
    }
}

fn check_problem(data: &[f32], dim: usize, labels: &[bool], c: f64) -> Result<usize> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(shape_err(dim, data.len()));
    }
    let n = data.len() / dim;
    if n != labels.len() {
        return Err(shape_err(n, labels.len()));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig(format!("C must be positive, got {c}")));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFeatures("non-finite feature".into()));
    }
    let first = &data[..dim];
    if data.chunks_exact(dim).all(|row| row == first) {
        return Err(Error::DegenerateFeatures(format!("all {n} feature rows are identical")));
    }
    Ok(n)
}

fn sign(l: bool) -> f64 {
    if l {
        1.0
    } else {
        -1.0
    }
}

/// Linear SVM `f(x) = w.x + b`, hinge loss, bias regularized as an extra
/// constant feature.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    /// Dual coordinate descent in random order.
    pub fn fit<R: Rng + ?Sized>(
        data: &[f32],
        dim: usize,
        labels: &[bool],
        config: &SolverConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let n = check_problem(data, dim, labels, config.c)?;
        let c = config.c;
        let row = |i: usize| &data[i * dim..(i + 1) * dim];
        let diag: Vec<f64> = (0..n)
            .map(|i| row(i).iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() + 1.0)
            .collect();
        let mut w = vec![0.0f64; dim];
        let mut b = 0.0f64;
        let mut alpha = vec![0.0f64; n];
        let mut order: Vec<usize> = (0..n).collect();
        let passes = (config.max_iterations / n).max(1);
        for _ in 0..passes {
            order.shuffle(rng);
            let mut pg_max = f64::NEG_INFINITY;
            let mut pg_min = f64::INFINITY;
            for &i in &order {
                let y = sign(labels[i]);
                let x = row(i);
                let margin: f64 = x.iter().zip(&w).map(|(&a, &b)| a as f64 * b).sum::<f64>() + b;
                let g = y * margin - 1.0;
                let pg = if alpha[i] == 0.0 {
                    g.min(0.0)
                } else if alpha[i] == c {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg != 0.0 {
                    let old = alpha[i];
                    alpha[i] = (old - g / diag[i]).clamp(0.0, c);
                    let step = (alpha[i] - old) * y;
                    for (wk, &xk) in w.iter_mut().zip(x) {
                        *wk += step * xk as f64;
                    }
                    b += step;
                }
            }
            if pg_max - pg_min < config.tolerance {
                break;
            }
        }
        Ok(LinearSvm { weights: w, bias: b })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &[f32]) -> f64 {
        x.iter().zip(&self.weights).map(|(&a, &w)| a as f64 * w).sum::<f64>() + self.bias
    }
}

/// Kernel SVM with `k(x, y) = exp(-gamma |x - y|^2)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RbfSvm {
    pub dim: usize,
    pub gamma: f64,
    /// Support vectors, row-major.
    pub support: Vec<f32>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
}

/// `1 / (2 sigma^2)` with `sigma` the median pairwise distance over at most
/// `max_points` evenly strided rows.
pub fn median_heuristic_gamma(data: &[f32], dim: usize, max_points: usize) -> Result<f64> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(shape_err(dim, data.len()));
    }
    let n = data.len() / dim;
    let stride = n.div_ceil(max_points.max(2)).max(1);
    let rows: Vec<&[f32]> = data.chunks_exact(dim).step_by(stride).collect();
    let mut d2 = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d2.push(sq_dist(rows[i], rows[j]));
        }
    }
    if d2.is_empty() {
        return Err(Error::DegenerateFeatures("fewer than two points".into()));
    }
    let mid = d2.len() / 2;
    let (_, &mut median, _) = d2.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if !(median > 0.0) {
        return Err(Error::DegenerateFeatures("median pairwise distance is zero".into()));
    }
    Ok(1.0 / (2.0 * median))
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

struct KernelRows<'a> {
    data: &'a [f32],
    dim: usize,
    n: usize,
    gamma: f64,
    rows: Vec<Option<Vec<f32>>>,
    lru: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(data: &'a [f32], dim: usize, gamma: f64, cache_bytes: usize) -> Self {
        let n = data.len() / dim;
        let capacity = (cache_bytes / (n * 4).max(1)).max(2);
        KernelRows {
            data,
            dim,
            n,
            gamma,
            rows: vec![None; n],
            lru: VecDeque::new(),
            capacity,
        }
    }

    fn get(&mut self, i: usize) -> &[f32] {
        if self.rows[i].is_none() {
            if self.lru.len() >= self.capacity {
                if let Some(old) = self.lru.pop_front() {
                    self.rows[old] = None;
                }
            }
            let xi = &self.data[i * self.dim..(i + 1) * self.dim];
            let row: Vec<f32> = (0..self.n)
                .map(|j| {
                    let xj = &self.data[j * self.dim..(j + 1) * self.dim];
                    libm::exp(-self.gamma * sq_dist(xi, xj)) as f32
                })
                .collect();
            self.rows[i] = Some(row);
            self.lru.push_back(i);
        }
        self.rows[i].as_deref().unwrap_or(&[])
    }
}

/// Kernel rows kept in memory while solving.
pub const DEFAULT_CACHE_BYTES: usize = 256 << 20;

impl RbfSvm {
    /// Sequential minimal optimization with second-order working-set
    /// selection.
    pub fn fit(
        data: &[f32],
        dim: usize,
        labels: &[bool],
        gamma: f64,
        config: &SolverConfig,
        cache_bytes: usize,
    ) -> Result<Self> {
        let n = check_problem(data, dim, labels, config.c)?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")));
        }
        let c = config.c;
        let y: Vec<f64> = labels.iter().map(|&l| sign(l)).collect();
        let mut alpha = vec![0.0f64; n];
        // gradient of 1/2 a'Qa - e'a with Q_ij = y_i y_j K_ij
        let mut grad = vec![-1.0f64; n];
        let mut kernel = KernelRows::new(data, dim, gamma, cache_bytes);
        const TAU: f64 = 1e-12;
        let up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
        let low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);

        for _ in 0..config.max_iterations {
            let mut gmax = f64::NEG_INFINITY;
            let mut i = usize::MAX;
            for t in 0..n {
                if up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                    gmax = -y[t] * grad[t];
                    i = t;
                }
            }
            if i == usize::MAX {
                break;
            }
            let ki: Vec<f32> = kernel.get(i).to_vec();
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j = usize::MAX;
            let mut best = f64::INFINITY;
            for t in 0..n {
                if !low(alpha[t], y[t]) {
                    continue;
                }
                let yg = y[t] * grad[t];
                gmax2 = gmax2.max(yg);
                let diff = gmax + yg;
                if diff > 0.0 {
                    // K_ii = K_tt = 1
                    let quad = (2.0 - 2.0 * ki[t] as f64).max(TAU);
                    let obj = -diff * diff / quad;
                    if obj <= best {
                        best = obj;
                        j = t;
                    }
                }
            }
            if gmax + gmax2 < config.tolerance || j == usize::MAX {
                break;
            }
            let kj: Vec<f32> = kernel.get(j).to_vec();
            let qij = y[i] * y[j] * ki[j] as f64;
            let (old_i, old_j) = (alpha[i], alpha[j]);
            if y[i] != y[j] {
                let quad = (2.0 + 2.0 * qij).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = old_i - old_j;
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (2.0 - 2.0 * qij).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = old_i + old_j;
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let di = (alpha[i] - old_i) * y[i];
            let dj = (alpha[j] - old_j) * y[j];
            for t in 0..n {
                grad[t] += y[t] * (ki[t] as f64 * di + kj[t] as f64 * dj);
            }
        }

        let mut upper = f64::INFINITY;
        let mut lower = f64::NEG_INFINITY;
        let mut free_sum = 0.0;
        let mut free = 0usize;
        for t in 0..n {
            let yg = y[t] * grad[t];
            if alpha[t] >= c {
                if y[t] < 0.0 {
                    upper = upper.min(yg);
                } else {
                    lower = lower.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if y[t] > 0.0 {
                    upper = upper.min(yg);
                } else {
                    lower = lower.max(yg);
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        let rho = if free > 0 {
            free_sum / free as f64
        } else {
            (upper + lower) / 2.0
        };

        let mut support = Vec::new();
        let mut coef = Vec::new();
        for t in 0..n {
            if alpha[t] > 0.0 {
                support.extend_from_slice(&data[t * dim..(t + 1) * dim]);
                coef.push(alpha[t] * y[t]);
            }
        }
        Ok(RbfSvm {
            dim,
            gamma,
            support,
            coef,
            rho,
        })
    }

    pub fn support_count(&self) -> usize {
        self.coef.len()
    }

    pub fn decision(&self, x: &[f32]) -> f64 {
        self.support
            .chunks_exact(self.dim)
            .zip(&self.coef)
            .map(|(s, &a)| a * libm::exp(-self.gamma * sq_dist(s, x)))
            .sum::<f64>()
            - self.rho
    }
}
