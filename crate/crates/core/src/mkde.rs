//! Multivariate kernel density estimation over `(features, PCL-M)`.
//!
//! The joint density of the standardized features and label is a product
//! kernel: one Gaussian factor per continuous dimension and for the label,
//! one Bernoulli factor per binary dimension, all tied to a single
//! bandwidth `sigma` in `(0, 0.5)`. The Bernoulli agreement probability is
//! `0.5 + sqrt(0.25 - sigma^2)`, so both kernel families sharpen together
//! as `sigma` shrinks.
//!
//! For a query `x` the model evaluates
//! `P(y | x) = 1/M * sum_m K_y(y, y_m) * K_X(x, x_m)` on the integer grid
//! 17..=85 and reports it normalized over that grid. `sigma` maximizes the
//! leave-one-out log-likelihood of the training pairs on a fixed grid.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PCLM_MIN: u8 = 17;
pub const PCLM_MAX: u8 = 85;
pub const PCLM_GRID_LEN: usize = (PCLM_MAX - PCLM_MIN + 1) as usize;
pub const PTSD_THRESHOLD: u8 = 36;

/// Number of interior points of the default bandwidth grid: 0.005, 0.010, ..., 0.495.
pub const DEFAULT_SIGMA_STEPS: usize = 99;

/// Below this total the grid values are renormalized in log space.
const DIRECT_NORMALIZE_MIN: f64 = 1e-200;

/// Floor applied to likelihood terms before taking logs.
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum MkdeError {
    #[error("need at least {required} training samples, got {found}")]
    TooFewSamples { found: usize, required: usize },
    #[error("continuous feature {0} has zero variance")]
    ZeroVarianceFeature(usize),
    #[error("binary feature {index} has value {value}")]
    NonBinaryInput { index: usize, value: f64 },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("bandwidth {0} outside (0, 0.5)")]
    BadBandwidth(f64),
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("continuous features must precede binary ones")]
    UnorderedKinds,
    #[error("PCL-M {0} outside 17..=85")]
    OutOfRange(i64),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Continuous,
    Binary,
}

/// Kernel layout of the static fear features `(slope, initial_fr, sex)`.
pub const STATIC_KINDS: [KernelKind; 3] = [KernelKind::Continuous, KernelKind::Continuous, KernelKind::Binary];

/// Gaussian density with standard deviation `nu`, centred on `v`.
pub fn rbf(u: f64, v: f64, nu: f64) -> f64 {
    let d = (u - v) / nu;
    (-0.5 * d * d).exp() / (nu * (2.0 * PI).sqrt())
}

/// `p` when `a == b`, `1 - p` otherwise.
pub fn bernoulli_k(a: f64, b: f64, p: f64) -> Result<f64, MkdeError> {
    for (index, value) in [(0, a), (1, b)] {
        if value != 0.0 && value != 1.0 {
            return Err(MkdeError::NonBinaryInput { index, value });
        }
    }
    Ok(if a == b { p } else { 1.0 - p })
}

/// Bernoulli agreement probability paired with bandwidth `sigma`.
pub fn bernoulli_p(sigma: f64) -> f64 {
    0.5 + (0.25 - sigma * sigma).sqrt()
}

/// `steps` evenly spaced interior points of `(0, 0.5)`.
pub fn sigma_grid(steps: usize) -> Vec<f64> {
    (1..=steps).map(|i| 0.5 * i as f64 / (steps + 1) as f64).collect()
}

/// Integer PCL-M values 17..=85.
pub fn pclm_grid() -> impl Iterator<Item = u8> {
    PCLM_MIN..=PCLM_MAX
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    /// Population mean and std; `None` when the std is zero.
    fn fit(values: &[f64]) -> Option<Self> {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = var.sqrt();
        (scale > 0.0).then_some(Self { mean, scale })
    }

    fn identity_around(values: &[f64]) -> Self {
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            scale: 1.0,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MkdeModel {
    pub kinds: Vec<KernelKind>,
    /// Training rows with continuous columns standardized.
    pub x: Vec<Vec<f64>>,
    /// Standardized training labels.
    pub y: Vec<f64>,
    /// Per-feature standardizer; `None` for binary columns.
    pub x_stats: Vec<Option<Standardizer>>,
    pub y_stats: Standardizer,
    pub sigma: f64,
}

fn validate_kinds(kinds: &[KernelKind]) -> Result<(), MkdeError> {
    let first_binary = kinds.iter().position(|k| *k == KernelKind::Binary).unwrap_or(kinds.len());
    if kinds[first_binary..].contains(&KernelKind::Continuous) {
        return Err(MkdeError::UnorderedKinds);
    }
    Ok(())
}

fn validate_row(row: &[f64], kinds: &[KernelKind]) -> Result<(), MkdeError> {
    if row.len() != kinds.len() {
        return Err(MkdeError::DimensionMismatch {
            expected: kinds.len(),
            found: row.len(),
        });
    }
    for (index, (&v, kind)) in row.iter().zip(kinds).enumerate() {
        if !v.is_finite() {
            return Err(MkdeError::NonFiniteInput);
        }
        if *kind == KernelKind::Binary && v != 0.0 && v != 1.0 {
            return Err(MkdeError::NonBinaryInput { index, value: v });
        }
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<(), MkdeError> {
    if sigma > 0.0 && sigma < 0.5 {
        Ok(())
    } else {
        Err(MkdeError::BadBandwidth(sigma))
    }
}

/// Picks the grid value with the highest score; exact ties go to the larger sigma.
pub fn select_bandwidth(grid: &[f64], mut score: impl FnMut(f64) -> f64) -> (f64, f64) {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for &s in grid {
        let v = score(s);
        if best.0.is_nan() || v > best.1 || (v == best.1 && s > best.0) {
            best = (s, v);
        }
    }
    best
}

impl MkdeModel {
    /// Standardizes the training data and searches the default sigma grid.
    pub fn fit(x_raw: &[Vec<f64>], y_raw: &[f64], kinds: &[KernelKind]) -> Result<Self, MkdeError> {
        Self::fit_with_grid(x_raw, y_raw, kinds, &sigma_grid(DEFAULT_SIGMA_STEPS))
    }

    pub fn fit_with_grid(
        x_raw: &[Vec<f64>],
        y_raw: &[f64],
        kinds: &[KernelKind],
        grid: &[f64],
    ) -> Result<Self, MkdeError> {
        if x_raw.len() < 2 {
            return Err(MkdeError::TooFewSamples {
                found: x_raw.len(),
                required: 2,
            });
        }
        let mut model = Self::build(x_raw, y_raw, kinds, grid.first().copied().unwrap_or(0.25), true)?;
        let (sigma, _) = select_bandwidth(grid, |s| model.loo_log_likelihood(s));
        check_sigma(sigma)?;
        model.sigma = sigma;
        Ok(model)
    }

    /// A model with a fixed bandwidth. Accepts a single sample; columns with
    /// zero variance are centred but not rescaled.
    pub fn with_bandwidth(
        x_raw: &[Vec<f64>],
        y_raw: &[f64],
        kinds: &[KernelKind],
        sigma: f64,
    ) -> Result<Self, MkdeError> {
        if x_raw.is_empty() {
            return Err(MkdeError::TooFewSamples { found: 0, required: 1 });
        }
        Self::build(x_raw, y_raw, kinds, sigma, false)
    }

    fn build(
        x_raw: &[Vec<f64>],
        y_raw: &[f64],
        kinds: &[KernelKind],
        sigma: f64,
        strict: bool,
    ) -> Result<Self, MkdeError> {
        check_sigma(sigma)?;
        validate_kinds(kinds)?;
        if x_raw.len() != y_raw.len() {
            return Err(MkdeError::DimensionMismatch {
                expected: x_raw.len(),
                found: y_raw.len(),
            });
        }
        for row in x_raw {
            validate_row(row, kinds)?;
        }
        if y_raw.iter().any(|v| !v.is_finite()) {
            return Err(MkdeError::NonFiniteInput);
        }
        let mut x_stats = Vec::with_capacity(kinds.len());
        for (j, kind) in kinds.iter().enumerate() {
            if *kind == KernelKind::Binary {
                x_stats.push(None);
                continue;
            }
            let col: Vec<f64> = x_raw.iter().map(|r| r[j]).collect();
            match Standardizer::fit(&col) {
                Some(s) => x_stats.push(Some(s)),
                None if strict => return Err(MkdeError::ZeroVarianceFeature(j)),
                None => x_stats.push(Some(Standardizer::identity_around(&col))),
            }
        }
        // A constant label column is centred only; the label is not a feature.
        let y_stats = Standardizer::fit(y_raw).unwrap_or_else(|| Standardizer::identity_around(y_raw));
        let x = x_raw
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&x_stats)
                    .map(|(&v, s)| s.map_or(v, |s| s.apply(v)))
                    .collect()
            })
            .collect();
        let y = y_raw.iter().map(|&v| y_stats.apply(v)).collect();
        Ok(Self {
            kinds: kinds.to_vec(),
            x,
            y,
            x_stats,
            y_stats,
            sigma,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    /// Product of the feature factors between a standardized query and
    /// training row `m`; `None` entries are marginalized out.
    fn feature_kernel(&self, query: &[Option<f64>], m: usize, sigma: f64, p: f64) -> f64 {
        let mut k = 1.0;
        for ((q, &xm), kind) in query.iter().zip(&self.x[m]).zip(&self.kinds) {
            let Some(q) = q else { continue };
            k *= match kind {
                KernelKind::Continuous => rbf(*q, xm, sigma),
                KernelKind::Binary => {
                    if *q == xm {
                        p
                    } else {
                        1.0 - p
                    }
                }
            };
        }
        k
    }

    /// Sum of log leave-one-out likelihoods of the training pairs.
    pub fn loo_log_likelihood(&self, sigma: f64) -> f64 {
        let m_total = self.n_samples();
        let p = bernoulli_p(sigma);
        let query: Vec<Vec<Option<f64>>> = self
            .x
            .iter()
            .map(|r| r.iter().map(|&v| Some(v)).collect())
            .collect();
        (0..m_total)
            .map(|m| {
                let sum: f64 = (0..m_total)
                    .filter(|&j| j != m)
                    .map(|j| rbf(self.y[m], self.y[j], sigma) * self.feature_kernel(&query[m], j, sigma, p))
                    .sum();
                (sum / (m_total - 1) as f64).max(LOG_FLOOR).ln()
            })
            .sum()
    }

    fn standardize_query(&self, x: &[Option<f64>]) -> Result<Vec<Option<f64>>, MkdeError> {
        if x.len() != self.kinds.len() {
            return Err(MkdeError::DimensionMismatch {
                expected: self.kinds.len(),
                found: x.len(),
            });
        }
        x.iter()
            .zip(&self.kinds)
            .zip(&self.x_stats)
            .enumerate()
            .map(|(index, ((v, kind), stats))| {
                let Some(v) = *v else { return Ok(None) };
                if !v.is_finite() {
                    return Err(MkdeError::NonFiniteInput);
                }
                if *kind == KernelKind::Binary && v != 0.0 && v != 1.0 {
                    return Err(MkdeError::NonBinaryInput { index, value: v });
                }
                Ok(Some(stats.map_or(v, |s| s.apply(v))))
            })
            .collect()
    }

    /// Log of the feature factors for each training row, shifted so the
    /// largest is zero. Used when direct products underflow.
    fn shifted_log_feature_kernel(&self, query: &[Option<f64>]) -> Vec<f64> {
        let p = bernoulli_p(self.sigma);
        let s = self.sigma;
        let log_norm = -(s * (2.0 * PI).sqrt()).ln();
        let logs: Vec<f64> = self
            .x
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                for ((q, &xm), kind) in query.iter().zip(row).zip(&self.kinds) {
                    let Some(q) = q else { continue };
                    acc += match kind {
                        KernelKind::Continuous => log_norm - 0.5 * ((q - xm) / s).powi(2),
                        KernelKind::Binary => {
                            if *q == xm {
                                p.ln()
                            } else {
                                (1.0 - p).ln()
                            }
                        }
                    };
                }
                acc
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        logs.iter().map(|v| v - max).collect()
    }

    /// `P(y | x)` at every grid value before normalization. Missing entries
    /// (`None`) are marginalized out.
    pub fn marginal_unnormalized(&self, x: &[Option<f64>]) -> Result<Vec<f64>, MkdeError> {
        let query = self.standardize_query(x)?;
        let p = bernoulli_p(self.sigma);
        let kx: Vec<f64> = (0..self.n_samples())
            .map(|m| self.feature_kernel(&query, m, self.sigma, p))
            .collect();
        let inv_m = 1.0 / self.n_samples() as f64;
        Ok(pclm_grid()
            .map(|g| {
                let yg = self.y_stats.apply(f64::from(g));
                self.y
                    .iter()
                    .zip(&kx)
                    .map(|(&ym, &k)| rbf(yg, ym, self.sigma) * k)
                    .sum::<f64>()
                    * inv_m
            })
            .collect())
    }

    pub fn density_unnormalized(&self, x: &[f64]) -> Result<Vec<f64>, MkdeError> {
        let partial: Vec<Option<f64>> = x.iter().map(|&v| Some(v)).collect();
        self.marginal_unnormalized(&partial)
    }

    pub fn predict_marginal(&self, x: &[Option<f64>]) -> Result<PclmDensity, MkdeError> {
        let raw = self.marginal_unnormalized(x)?;
        let total: f64 = raw.iter().sum();
        if total > DIRECT_NORMALIZE_MIN && total.is_finite() {
            return Ok(PclmDensity {
                probs: raw.iter().map(|v| v / total).collect(),
            });
        }
        // Terms underflowed or went subnormal: normalize in log space instead.
        let query = self.standardize_query(x)?;
        let lx = self.shifted_log_feature_kernel(&query);
        let s = self.sigma;
        let log_vals: Vec<f64> = pclm_grid()
            .map(|g| {
                let yg = self.y_stats.apply(f64::from(g));
                let terms: Vec<f64> = lx
                    .iter()
                    .zip(&self.y)
                    .map(|(l, ym)| l - 0.5 * ((yg - ym) / s).powi(2))
                    .collect();
                log_sum_exp(&terms)
            })
            .collect();
        let log_total = log_sum_exp(&log_vals);
        Ok(PclmDensity {
            probs: log_vals.iter().map(|v| (v - log_total).exp()).collect(),
        })
    }

    pub fn predict_density(&self, x: &[f64]) -> Result<PclmDensity, MkdeError> {
        let partial: Vec<Option<f64>> = x.iter().map(|&v| Some(v)).collect();
        self.predict_marginal(&partial)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Probabilities over PCL-M values 17..=85.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PclmDensity {
    pub probs: Vec<f64>,
}

impl PclmDensity {
    pub fn uniform() -> Self {
        Self {
            probs: vec![1.0 / PCLM_GRID_LEN as f64; PCLM_GRID_LEN],
        }
    }

    pub fn prob(&self, pclm: u8) -> f64 {
        self.probs[(pclm - PCLM_MIN) as usize]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `pclm,probability` rows.
    pub fn write_csv(&self, path: &Path) -> Result<(), MkdeError> {
        let io = |e: csv::Error| MkdeError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["pclm", "probability"]).map_err(io)?;
        for (g, p) in pclm_grid().zip(&self.probs) {
            w.write_record([g.to_string(), p.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| MkdeError::Io(e.to_string()))
    }
}

/// Grid argmax; ties go to the smallest PCL-M.
pub fn to_pclm(density: &PclmDensity) -> u8 {
    argmax_first(&density.probs) as u8 + PCLM_MIN
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PtsdStatus {
    Ptsd,
    NoPtsd,
}

impl PtsdStatus {
    pub fn is_ptsd(self) -> bool {
        self == PtsdStatus::Ptsd
    }
}

/// PTSD iff the score reaches 36.
pub fn to_binary(pclm: i64) -> Result<PtsdStatus, MkdeError> {
    if !(i64::from(PCLM_MIN)..=i64::from(PCLM_MAX)).contains(&pclm) {
        return Err(MkdeError::OutOfRange(pclm));
    }
    Ok(if pclm >= i64::from(PTSD_THRESHOLD) {
        PtsdStatus::Ptsd
    } else {
        PtsdStatus::NoPtsd
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn rbf_peak_and_symmetry() {
        assert!((rbf(0.3, 0.3, 1.0) - 0.3989422804014327).abs() < 1e-15);
        assert_eq!(rbf(0.1, 2.7, 0.4), rbf(2.7, 0.1, 0.4));
        for nu in [0.005, 0.1, 0.495, 2.0] {
            let mass = simpson(|u| rbf(u, 0.0, nu), -10.0 * nu, 10.0 * nu, 4000);
            assert!((mass - 1.0).abs() < 1e-6, "nu={nu} mass={mass}");
        }
    }

    #[test]
    fn bernoulli_cases() {
        assert_eq!(bernoulli_k(1.0, 1.0, 0.9).unwrap(), 0.9);
        assert!((bernoulli_k(0.0, 1.0, 0.9).unwrap() - 0.1).abs() < 1e-15);
        for a in [0.0, 1.0] {
            let total = bernoulli_k(a, 0.0, 0.73).unwrap() + bernoulli_k(a, 1.0, 0.73).unwrap();
            assert_eq!(total, 1.0);
        }
        assert!(matches!(bernoulli_k(0.5, 1.0, 0.9), Err(MkdeError::NonBinaryInput { .. })));
    }

    #[test]
    fn default_grid() {
        let g = sigma_grid(DEFAULT_SIGMA_STEPS);
        assert_eq!(g.len(), 99);
        assert!((g[0] - 0.005).abs() < 1e-15);
        assert!((g[98] - 0.495).abs() < 1e-15);
        assert!(g.iter().enumerate().all(|(i, s)| (s - 0.005 * (i + 1) as f64).abs() < 1e-15));
    }

    #[test]
    fn ties_prefer_larger_bandwidth() {
        let grid = sigma_grid(DEFAULT_SIGMA_STEPS);
        let (s, _) = select_bandwidth(&grid, |_| -3.0);
        assert!((s - 0.495).abs() < 1e-15);
        let (s, _) = select_bandwidth(&grid, |s| if s < 0.1 { 1.0 } else { 0.0 });
        assert!((s - 0.095).abs() < 1e-12);
    }

    #[test]
    fn too_few_and_zero_variance() {
        let kinds = [KernelKind::Continuous];
        assert_eq!(
            MkdeModel::fit(&[vec![1.0]], &[30.0], &kinds).unwrap_err(),
            MkdeError::TooFewSamples { found: 1, required: 2 }
        );
        // Two identical samples leave the feature without variance.
        assert_eq!(
            MkdeModel::fit(&[vec![1.0], vec![1.0]], &[30.0, 30.0], &kinds).unwrap_err(),
            MkdeError::ZeroVarianceFeature(0)
        );
    }

    #[test]
    fn binary_before_continuous_is_rejected() {
        let kinds = [KernelKind::Binary, KernelKind::Continuous];
        let err = MkdeModel::fit(&[vec![0.0, 1.0], vec![1.0, 2.0]], &[20.0, 40.0], &kinds).unwrap_err();
        assert_eq!(err, MkdeError::UnorderedKinds);
    }

    /// Brute-force LOO criterion from raw data.
    fn oracle_loo(x: &[Vec<f64>], y: &[f64], kinds: &[KernelKind], sigma: f64) -> f64 {
        let std = |v: &[f64]| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let s = (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n).sqrt();
            v.iter().map(|a| (a - m) / s).collect::<Vec<f64>>()
        };
        let d = kinds.len();
        let cols: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let c: Vec<f64> = x.iter().map(|r| r[j]).collect();
                if kinds[j] == KernelKind::Continuous { std(&c) } else { c }
            })
            .collect();
        let ys = std(y);
        let p = 0.5 + (0.25 - sigma * sigma).sqrt();
        let g = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt());
        let n = y.len();
        let mut total = 0.0;
        for m in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                if j == m {
                    continue;
                }
                let mut k = g(ys[m], ys[j]);
                for c in 0..d {
                    k *= match kinds[c] {
                        KernelKind::Continuous => g(cols[c][m], cols[c][j]),
                        KernelKind::Binary => if cols[c][m] == cols[c][j] { p } else { 1.0 - p },
                    };
                }
                acc += k;
            }
            total += (acc / (n - 1) as f64).max(1e-300).ln();
        }
        total
    }

    #[test]
    fn tight_clusters_prefer_small_bandwidth() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let (cx, cy) = if i % 2 == 0 { (-2.0, 20.0) } else { (2.0, 70.0) };
            x.push(vec![cx + 0.01 * rng.random::<f64>()]);
            y.push(cy + 0.5 * rng.random::<f64>());
        }
        let kinds = [KernelKind::Continuous];
        let model = MkdeModel::fit(&x, &y, &kinds).unwrap();
        let grid = sigma_grid(DEFAULT_SIGMA_STEPS);
        let (oracle_sigma, _) = select_bandwidth(&grid, |s| oracle_loo(&x, &y, &kinds, s));
        assert_eq!(model.sigma, oracle_sigma);
        assert!(model.sigma < 0.25, "sigma {}", model.sigma);
        for &s in &[0.01, 0.1, 0.3] {
            let a = model.loo_log_likelihood(s);
            let b = oracle_loo(&x, &y, &kinds, s);
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn single_training_point_peaks_at_its_label() {
        let kinds = STATIC_KINDS;
        let model = MkdeModel::with_bandwidth(&[vec![0.2, 0.5, 1.0]], &[40.0], &kinds, 0.2).unwrap();
        let d = model.predict_density(&[0.2, 0.5, 1.0]).unwrap();
        assert_eq!(to_pclm(&d), 40);
    }

    /// Independent double loop over grid values and training rows.
    fn oracle_density(x: &[Vec<f64>], y: &[f64], sigma: f64, q: &[f64]) -> Vec<f64> {
        let n = y.len() as f64;
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / n;
            (m, (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n).sqrt())
        };
        let c0: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let c1: Vec<f64> = x.iter().map(|r| r[1]).collect();
        let (m0, s0) = stats(&c0);
        let (m1, s1) = stats(&c1);
        let (my, sy) = stats(y);
        let p = 0.5 + (0.25 - sigma * sigma).sqrt();
        let g = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt());
        let mut out = Vec::new();
        for pclm in 17..=85 {
            let yq = (pclm as f64 - my) / sy;
            let mut acc = 0.0;
            for i in 0..y.len() {
                let kb = if x[i][2] == q[2] { p } else { 1.0 - p };
                acc += g(yq, (y[i] - my) / sy)
                    * g((q[0] - m0) / s0, (x[i][0] - m0) / s0)
                    * g((q[1] - m1) / s1, (x[i][1] - m1) / s1)
                    * kb;
            }
            out.push(acc / n);
        }
        out
    }

    fn random_cohort(rng: &mut ChaCha8Rng, m: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x = (0..m)
            .map(|_| {
                vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.0..1.0),
                    f64::from(rng.random_range(0..2u8)),
                ]
            })
            .collect();
        let y = (0..m).map(|_| f64::from(rng.random_range(17..=85u8))).collect();
        (x, y)
    }

    #[test]
    fn density_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = random_cohort(&mut rng, 5);
        let model = MkdeModel::fit(&x, &y, &STATIC_KINDS).unwrap();
        let q = [0.1, 0.6, 1.0];
        let fast = model.density_unnormalized(&q).unwrap();
        let slow = oracle_density(&x, &y, model.sigma, &q);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300) + 1e-300, "{a} vs {b}");
        }
        let d = model.predict_density(&q).unwrap();
        assert!((d.total() - 1.0).abs() < 1e-9);
        assert!(d.probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn marginalizing_nothing_is_the_full_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y) = random_cohort(&mut rng, 12);
        let model = MkdeModel::fit(&x, &y, &STATIC_KINDS).unwrap();
        let full = model.predict_density(&[0.3, 0.2, 0.0]).unwrap();
        let marg = model.predict_marginal(&[Some(0.3), Some(0.2), Some(0.0)]).unwrap();
        assert_eq!(full, marg);
    }

    #[test]
    fn marginalizing_sex_sums_the_bernoulli_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, y) = random_cohort(&mut rng, 15);
        let model = MkdeModel::fit(&x, &y, &STATIC_KINDS).unwrap();
        let omitted = model.marginal_unnormalized(&[Some(0.4), Some(0.5), None]).unwrap();
        let a = oracle_density(&x, &y, model.sigma, &[0.4, 0.5, 0.0]);
        let b = oracle_density(&x, &y, model.sigma, &[0.4, 0.5, 1.0]);
        for i in 0..PCLM_GRID_LEN {
            assert!((omitted[i] - (a[i] + b[i])).abs() <= 1e-9 * omitted[i].abs().max(1e-12));
        }
    }

    #[test]
    fn all_missing_gives_label_prior() {
        let x = vec![vec![0.0, 0.1, 0.0], vec![1.0, 0.4, 1.0], vec![2.0, 0.9, 0.0]];
        let model = MkdeModel::with_bandwidth(&x, &[30.0; 3], &STATIC_KINDS, 0.3).unwrap();
        let d = model.predict_marginal(&[None, None, None]).unwrap();
        assert_eq!(to_pclm(&d), 30);
    }

    #[test]
    fn far_query_still_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = random_cohort(&mut rng, 10);
        let model = MkdeModel::with_bandwidth(&x, &y, &STATIC_KINDS, 0.01).unwrap();
        let d = model.predict_density(&[500.0, -300.0, 1.0]).unwrap();
        assert!((d.total() - 1.0).abs() < 1e-9, "{:?}", d.probs);
        assert!(d.probs.iter().all(|p| p.is_finite() && *p >= 0.0));
    }

    #[test]
    fn bad_query_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y) = random_cohort(&mut rng, 6);
        let model = MkdeModel::fit(&x, &y, &STATIC_KINDS).unwrap();
        assert_eq!(model.predict_density(&[f64::NAN, 0.0, 0.0]).unwrap_err(), MkdeError::NonFiniteInput);
        assert!(matches!(model.predict_density(&[0.0, 0.0, 0.5]), Err(MkdeError::NonBinaryInput { .. })));
    }

    #[test]
    fn argmax_readout() {
        let mut d = PclmDensity { probs: vec![0.0; PCLM_GRID_LEN] };
        d.probs[(29 - 17) as usize] = 1.0;
        assert_eq!(to_pclm(&d), 29);
        d.probs = vec![0.0; PCLM_GRID_LEN];
        d.probs[(22 - 17) as usize] = 0.5;
        d.probs[(44 - 17) as usize] = 0.5;
        assert_eq!(to_pclm(&d), 22);
        assert_eq!(to_pclm(&PclmDensity::uniform()), 17);
    }

    #[test]
    fn threshold_readout() {
        assert_eq!(to_binary(36).unwrap(), PtsdStatus::Ptsd);
        assert_eq!(to_binary(35).unwrap(), PtsdStatus::NoPtsd);
        assert_eq!(to_binary(17).unwrap(), PtsdStatus::NoPtsd);
        assert_eq!(to_binary(85).unwrap(), PtsdStatus::Ptsd);
        assert_eq!(to_binary(16).unwrap_err(), MkdeError::OutOfRange(16));
        assert!(to_binary(86).is_err());
    }

    proptest! {
        #[test]
        fn row_order_and_duplication_do_not_matter(seed in 0u64..500, m in 3usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y) = random_cohort(&mut rng, m);
            prop_assume!(y.iter().any(|v| *v != y[0]));
            let sigma = 0.2;
            let q = [0.2, 0.5, 1.0];
            let Ok(base) = MkdeModel::with_bandwidth(&x, &y, &STATIC_KINDS, sigma) else { return Ok(()) };
            let d0 = base.density_unnormalized(&q).unwrap();

            let mut idx: Vec<usize> = (0..m).collect();
            idx.reverse();
            idx.rotate_left(seed as usize % m);
            let xp: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
            let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let d1 = MkdeModel::with_bandwidth(&xp, &yp, &STATIC_KINDS, sigma).unwrap().density_unnormalized(&q).unwrap();

            let xd: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
            let yd: Vec<f64> = y.iter().chain(&y).copied().collect();
            let d2 = MkdeModel::with_bandwidth(&xd, &yd, &STATIC_KINDS, sigma).unwrap().density_unnormalized(&q).unwrap();
            for i in 0..PCLM_GRID_LEN {
                let tol = 1e-12 * d0[i].abs() + 1e-300;
                prop_assert!((d0[i] - d1[i]).abs() <= tol);
                prop_assert!((d0[i] - d2[i]).abs() <= tol);
            }
        }

        #[test]
        fn argmax_ignores_positive_scaling(values in proptest::collection::vec(0.0f64..1.0, PCLM_GRID_LEN), c in 1e-6f64..1e6) {
            let a = PclmDensity { probs: values.clone() };
            let b = PclmDensity { probs: values.iter().map(|v| v * c).collect() };
            prop_assert_eq!(to_pclm(&a), to_pclm(&b));
        }
    }
}
