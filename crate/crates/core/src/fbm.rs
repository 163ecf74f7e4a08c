//! Fractional Brownian motion and the pathwise statistics built on it.
//!
//! Paths are sampled exactly in law on a uniform grid: circulant embedding
//! of the fractional Gaussian noise when the embedding is nonnegative
//! definite, dense Cholesky otherwise. [`PointSampler`] handles arbitrary
//! time sets and [`RefinedFbm`] extends an exact grid path below the grid
//! by conditional midpoint displacement for the adaptive solver.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dynamics::DyadicSignal;
use crate::error::{Error, Result};
use crate::parallel::{map_replications, mix64};
use crate::signals::GridSignal;
use crate::skorokhod::skorokhod_map;

/// Negative embedding eigenvalues above this are clipped to zero.
pub const CLIP_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    Circulant,
    Cholesky,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbmConfig {
    pub hurst: f64,
    /// Number of grid steps, a power of two.
    pub grid_size: usize,
    #[serde(default = "unit_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_method")]
    pub method: SamplingMethod,
    /// Fall back to Cholesky when the circulant embedding is indefinite.
    #[serde(default = "default_true")]
    pub cholesky_fallback: bool,
}

fn unit_horizon() -> f64 {
    1.0
}

fn default_method() -> SamplingMethod {
    SamplingMethod::Circulant
}

fn default_true() -> bool {
    true
}

impl FbmConfig {
    pub fn new(hurst: f64, grid_size: usize, seed: u64) -> Self {
        Self { hurst, grid_size, horizon: 1.0, seed, method: SamplingMethod::Circulant, cholesky_fallback: true }
    }

    pub fn with_method(mut self, method: SamplingMethod) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::config(format!("H must lie in (0, 1), got {}", self.hurst)));
        }
        if self.grid_size < 2 || !self.grid_size.is_power_of_two() {
            return Err(Error::config(format!("grid_size must be a power of two >= 2, got {}", self.grid_size)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.grid_size as f64
    }
}

/// `R(s, t) = ½ (s^{2H} + t^{2H} - |t - s|^{2H})`.
pub fn fbm_covariance(hurst: f64, s: f64, t: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (s.abs().powf(h2) + t.abs().powf(h2) - (t - s).abs().powf(h2))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

enum Backend {
    Circulant { scale: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Cholesky { lower: DMatrix<f64> },
}

/// Reusable grid sampler; the embedding or factorization is computed once.
pub struct FbmSampler {
    config: FbmConfig,
    backend: Backend,
    notes: Vec<String>,
}

impl FbmSampler {
    pub fn new(config: &FbmConfig) -> Result<Self> {
        config.validate()?;
        let n = config.grid_size;
        let mut notes = Vec::new();
        let backend = match config.method {
            SamplingMethod::Cholesky => cholesky_backend(config.hurst, n)?,
            SamplingMethod::Circulant => match circulant_backend(config.hurst, n)? {
                Ok((b, clipped)) => {
                    if clipped > 0 {
                        notes.push(format!("{clipped} embedding eigenvalues clipped to 0"));
                    }
                    b
                }
                Err(min_eig) if config.cholesky_fallback => {
                    notes.push(format!("circulant embedding indefinite (eigenvalue {min_eig:e}); using Cholesky"));
                    cholesky_backend(config.hurst, n)?
                }
                Err(min_eig) => {
                    return Err(Error::Method(format!(
                        "circulant embedding has eigenvalue {min_eig:e} and the Cholesky fallback is disabled"
                    )))
                }
            },
        };
        Ok(Self { config: config.clone(), backend, notes })
    }

    pub fn config(&self) -> &FbmConfig {
        &self.config
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn method(&self) -> SamplingMethod {
        match self.backend {
            Backend::Circulant { .. } => SamplingMethod::Circulant,
            Backend::Cholesky { .. } => SamplingMethod::Cholesky,
        }
    }

    /// Fractional Gaussian noise for the configured grid step.
    pub fn increments<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.config.grid_size;
        let step_scale = self.config.dt().powf(self.config.hurst);
        match &self.backend {
            Backend::Circulant { scale, fft } => {
                let mut buf: Vec<Complex<f64>> = scale
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                buf[..n].iter().map(|c| c.re * step_scale).collect()
            }
            Backend::Cholesky { lower } => {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                (lower * z).iter().map(|v| v * step_scale).collect()
            }
        }
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> GridSignal {
        let inc = self.increments(rng);
        let mut values = Vec::with_capacity(inc.len() + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for d in inc {
            acc += d;
            values.push(acc);
        }
        GridSignal { t0: 0.0, dt: self.config.dt(), values }
    }

    /// The path for `seed`, identical across calls.
    pub fn sample_seeded(&self, seed: u64) -> GridSignal {
        self.sample_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Square-root eigenvalue scales of the minimal circulant embedding, or the
/// most negative eigenvalue when it is below `-CLIP_TOLERANCE`.
fn circulant_backend(hurst: f64, n: usize) -> Result<std::result::Result<(Backend, usize), f64>> {
    let m = 2 * n;
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let lag = if j <= n { j } else { m - j };
            Complex::new(fgn_autocovariance(hurst, lag), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let min = row.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
    if min < -CLIP_TOLERANCE {
        return Ok(Err(min));
    }
    let mut clipped = 0;
    let scale = row
        .iter()
        .map(|c| {
            if c.re < 0.0 {
                clipped += 1;
                0.0
            } else {
                (c.re / m as f64).sqrt()
            }
        })
        .collect();
    if clipped > 0 {
        log::warn!("clipped {clipped} negative circulant eigenvalues (min {min:e}) for H = {hurst}");
    }
    Ok(Ok((Backend::Circulant { scale, fft }, clipped)))
}

fn cholesky_backend(hurst: f64, n: usize) -> Result<Backend> {
    let acf: Vec<f64> = (0..n).map(|k| fgn_autocovariance(hurst, k)).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| acf[i.abs_diff(j)]);
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Method(format!("increment covariance is not positive definite for H = {hurst}")))?;
    Ok(Backend::Cholesky { lower: chol.l() })
}

/// One path for `config.seed`.
pub fn sample_fbm(config: &FbmConfig) -> Result<GridSignal> {
    Ok(FbmSampler::new(config)?.sample_seeded(config.seed))
}

/// Exact joint sampling of `B` at arbitrary positive increasing times.
pub struct PointSampler {
    times: Vec<f64>,
    lower: DMatrix<f64>,
}

impl PointSampler {
    pub fn new(times: &[f64], hurst: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::config(format!("H must lie in (0, 1), got {hurst}")));
        }
        if times.is_empty() || !(times[0] > 0.0) || times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("times must be positive and strictly increasing"));
        }
        let n = times.len();
        let cov = DMatrix::from_fn(n, n, |i, j| fbm_covariance(hurst, times[i], times[j]));
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Method("covariance at the requested times is not positive definite".into()))?;
        Ok(Self { times: times.to_vec(), lower: chol.l() })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.times.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.lower * z).iter().copied().collect()
    }
}

/// How `E[S_N]` is obtained for the centered sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Centering {
    None,
    /// `E[δ_k²] = (t_k - t_{k+1})^{2H} E[δ*²]`.
    Scaling {
        hurst: f64,
        unit_moment: f64,
    },
    /// Per-index means supplied by the caller.
    Empirical {
        means: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStatistics {
    pub deltas: Vec<f64>,
    /// `S_N = Σ_{k≤N} δ_k²`.
    #[serde(rename = "S")]
    pub s_partial: Vec<f64>,
    #[serde(rename = "S_centered", skip_serializing_if = "Option::is_none")]
    pub s_centered: Option<Vec<f64>>,
    pub centering: Centering,
    /// Largest distance from a schedule time to its grid point.
    pub max_snap: f64,
    pub snapped: usize,
}

/// `δ_k = B(t_k) - min_{[t_{k+1}, t_k]} B` on a decreasing schedule, with
/// times snapped to the nearest grid point.
pub fn delta_statistics(path: &GridSignal, schedule: &[f64], centering: Centering) -> Result<PathStatistics> {
    if schedule.len() < 2 {
        return Err(Error::domain("the schedule needs at least two times"));
    }
    if schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::domain("schedule times must be strictly decreasing"));
    }
    let mut idx = Vec::with_capacity(schedule.len());
    let (mut max_snap, mut snapped) = (0.0f64, 0);
    for &t in schedule {
        let i = path.index_of(t)?;
        let err = (path.time(i) - t).abs();
        if err > 0.0 {
            snapped += 1;
            max_snap = max_snap.max(err);
        }
        idx.push(i);
    }
    let n = schedule.len() - 1;
    let mut deltas = Vec::with_capacity(n);
    for k in 0..n {
        deltas.push(path.values[idx[k]] - path.running_min_index(idx[k + 1], idx[k])?);
    }
    let mut s_partial = Vec::with_capacity(n);
    let mut acc = 0.0;
    for d in &deltas {
        acc += d * d;
        s_partial.push(acc);
    }
    let means = expected_squares(schedule, &centering)?;
    let s_centered = means.map(|m| {
        let mut e = 0.0;
        s_partial
            .iter()
            .zip(m)
            .map(|(s, mk)| {
                e += mk;
                s - e
            })
            .collect()
    });
    Ok(PathStatistics { deltas, s_partial, s_centered, centering, max_snap, snapped })
}

/// `E[δ_k²]` for each interval, or `None` without centering.
pub fn expected_squares(schedule: &[f64], centering: &Centering) -> Result<Option<Vec<f64>>> {
    let n = schedule.len().saturating_sub(1);
    match centering {
        Centering::None => Ok(None),
        Centering::Scaling { hurst, unit_moment } => {
            Ok(Some((0..n).map(|k| (schedule[k] - schedule[k + 1]).powf(2.0 * hurst) * unit_moment).collect()))
        }
        Centering::Empirical { means } => {
            if means.len() < n {
                return Err(Error::domain(format!("need {n} means, got {}", means.len())));
            }
            Ok(Some(means[..n].to_vec()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
    pub grid_size: usize,
    pub seed: u64,
}

/// `E[(B(1) - min_{[0,1]} B)²]` by Monte Carlo on a grid of `grid_size` steps.
pub fn unit_reflected_moment(hurst: f64, grid_size: usize, replications: usize, seed: u64) -> Result<MomentEstimate> {
    if replications < 2 {
        return Err(Error::config("need at least two replications"));
    }
    let sampler = FbmSampler::new(&FbmConfig::new(hurst, grid_size, seed))?;
    let draws = map_replications(replications, seed, |_, s| {
        let p = sampler.sample_seeded(s);
        let m = p.values.iter().copied().fold(f64::INFINITY, f64::min);
        (p.values[grid_size] - m).powi(2)
    });
    let (mean, se) = mean_and_error(&draws);
    Ok(MomentEstimate { mean, std_error: se, replications, grid_size, seed })
}

/// Sample mean and its standard error.
pub fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Event frequency with a 95% Wilson interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEstimate {
    pub hits: usize,
    pub replications: usize,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
}

impl FrequencyEstimate {
    pub fn from_counts(hits: usize, replications: usize, seed: u64) -> Self {
        let (lo, hi) = wilson_interval(hits, replications, 1.96);
        Self { hits, replications, frequency: hits as f64 / replications as f64, ci_low: lo, ci_high: hi, seed }
    }
}

pub fn wilson_interval(hits: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Frequency of `event(path)` over seeded replications.
pub fn event_frequency(
    config: &FbmConfig,
    replications: usize,
    event: impl Fn(&GridSignal) -> bool + Sync + Send,
) -> Result<FrequencyEstimate> {
    if replications == 0 {
        return Err(Error::config("need at least one replication"));
    }
    let sampler = FbmSampler::new(config)?;
    let hits =
        map_replications(replications, config.seed, |_, s| event(&sampler.sample_seeded(s)) as usize).into_iter().sum();
    Ok(FrequencyEstimate::from_counts(hits, replications, config.seed))
}

fn reflected(path: &GridSignal) -> Vec<f64> {
    skorokhod_map(path, 0).expect("nonempty path").reflected.values
}

/// `P(max_t (B(t) - min_{s≤t} B(s)) <= x)`.
pub fn small_ball_frequency(config: &FbmConfig, x: f64, replications: usize) -> Result<FrequencyEstimate> {
    if !(x > 0.0) {
        return Err(Error::domain(format!("x must be positive, got {x}")));
    }
    event_frequency(config, replications, |p| reflected(p).iter().all(|&r| r <= x))
}

/// Lebesgue measure of `{t : reflected(t) >= x}` on the grid.
pub fn occupation_time(path: &GridSignal, x: f64) -> f64 {
    let r = reflected(path);
    r[1..].iter().filter(|&&v| v >= x).count() as f64 * path.dt
}

/// `P(μ{t : reflected(t) >= x} <= y)`.
pub fn occupation_event_frequency(
    config: &FbmConfig,
    x: f64,
    y: f64,
    replications: usize,
) -> Result<FrequencyEstimate> {
    if !(x >= 0.0) || !(y >= 0.0) {
        return Err(Error::domain("x and y must be nonnegative"));
    }
    event_frequency(config, replications, |p| occupation_time(p, x) <= y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
}

/// Two-sample Kolmogorov-Smirnov test at the 1% level.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let critical = 1.628 * ((n + m) / (n * m)).sqrt();
    KsResult { statistic: d, critical, reject: d > critical }
}

/// A grid path extended to every dyadic level below its grid.
///
/// Levels up to the grid level read the exact sample. A point at a finer
/// level is the midpoint of its two parents plus an independent Gaussian of
/// variance `h^{2H} (1 - 2^{2H-2})`, `h` the distance to either parent,
/// which is the law of the midpoint conditional on the parents alone. The
/// Gaussian is keyed by `(seed, level, index)`, so values do not depend on
/// the order of queries.
pub struct RefinedFbm {
    base: GridSignal,
    base_level: u32,
    hurst: f64,
    seed: u64,
    sigma: Vec<f64>,
    cache: HashMap<(u32, u64), f64>,
}

const CACHE_LIMIT: usize = 1 << 16;

impl RefinedFbm {
    pub fn new(base: GridSignal, hurst: f64, seed: u64) -> Result<Self> {
        let n = base.len() - 1;
        if n < 1 || !n.is_power_of_two() || base.t0 != 0.0 || (base.end() - 1.0).abs() > 1e-12 {
            return Err(Error::domain("the base path must cover [0, 1] with a power-of-two grid"));
        }
        let base_level = n.trailing_zeros();
        let sigma = (0..=64)
            .map(|l: i32| {
                let h = 2f64.powi(-l);
                (h.powf(2.0 * hurst) * (1.0 - 2f64.powf(2.0 * hurst - 2.0))).sqrt()
            })
            .collect();
        Ok(Self { base, base_level, hurst, seed, sigma, cache: HashMap::new() })
    }

    fn noise(&self, level: u32, index: u64) -> f64 {
        let key = mix64(self.seed ^ mix64(((level as u64) << 58) ^ index));
        ChaCha8Rng::seed_from_u64(key).sample(StandardNormal)
    }
}

impl DyadicSignal for RefinedFbm {
    fn base_level(&self) -> u32 {
        self.base_level
    }

    fn roughness(&self) -> f64 {
        self.hurst
    }

    fn value(&mut self, level: u32, index: u64) -> f64 {
        if level <= self.base_level {
            return self.base.values[(index << (self.base_level - level)) as usize];
        }
        if index.is_multiple_of(2) {
            return self.value(level - 1, index / 2);
        }
        if let Some(&v) = self.cache.get(&(level, index)) {
            return v;
        }
        let left = self.value(level - 1, index / 2);
        let right = self.value(level - 1, index / 2 + 1);
        let v = 0.5 * (left + right) + self.sigma[level as usize] * self.noise(level, index);
        if self.cache.len() >= CACHE_LIMIT {
            self.cache.clear();
        }
        self.cache.insert((level, index), v);
        v
    }
}
