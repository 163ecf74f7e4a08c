//! Driving signals and the path functionals used by every other module.
//!
//! Two carriers are provided. [`PiecewisePath`] is a continuous piecewise
//! affine path plus an optional nondecreasing jump part, with breakpoints
//! stored as exact [`Time`] values. [`GridSignal`] is a path sampled on a
//! uniform grid, used for fractional Brownian paths and the Euler backends.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{fmt_f64, Time};

/// Continuous piecewise-affine path with an optional right-continuous jump part.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewisePath {
    breakpoints: Vec<Time>,
    increments: Vec<f64>,
    values: Vec<f64>,
    jumps: Vec<(Time, f64)>,
    jump_prefix: Vec<f64>,
}

impl PiecewisePath {
    /// Builds a path from its breakpoints, the values of the continuous part
    /// at those breakpoints and a list of `(time, size)` jumps.
    pub fn new(breakpoints: Vec<Time>, values: Vec<f64>, jumps: Vec<(Time, f64)>) -> Result<Self> {
        if breakpoints.len() != values.len() || values.is_empty() {
            return Err(Error::domain("breakpoints and values differ in length"));
        }
        let increments = values.windows(2).map(|w| w[1] - w[0]).collect();
        Self::from_increments(breakpoints, values[0], increments, jumps)
    }

    /// Builds a path from an anchor value and the exact increment of the
    /// continuous part over each segment.
    pub fn from_increments(
        breakpoints: Vec<Time>,
        origin: f64,
        increments: Vec<f64>,
        mut jumps: Vec<(Time, f64)>,
    ) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::domain("a piecewise path needs at least two breakpoints"));
        }
        if breakpoints.len() != increments.len() + 1 {
            return Err(Error::domain("need exactly one increment per segment"));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("breakpoints must be strictly increasing"));
        }
        if *breakpoints.last().unwrap() > Time::ONE {
            return Err(Error::domain("breakpoints must lie in [0, 1]"));
        }
        let mut values = Vec::with_capacity(breakpoints.len());
        values.push(origin);
        for (i, d) in increments.iter().enumerate() {
            values.push(values[i] + d);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("path values must be finite"));
        }
        jumps.sort_by_key(|j| j.0);
        let (start, end) = (breakpoints[0], *breakpoints.last().unwrap());
        for &(t, size) in &jumps {
            if !(size > 0.0) || !size.is_finite() {
                return Err(Error::domain(format!("jump sizes must be strictly positive, got {size}")));
            }
            if t <= start || t > end {
                return Err(Error::domain(format!("jump at {t} outside ({start}, {end}]")));
            }
        }
        if jumps.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::domain("duplicate jump time"));
        }
        let mut acc = 0.0;
        let jump_prefix = jumps
            .iter()
            .map(|&(_, s)| {
                acc += s;
                acc
            })
            .collect();
        Ok(Self { breakpoints, increments, values, jumps, jump_prefix })
    }

    /// Builds a continuous path from an anchor value and one slope per segment.
    pub fn from_slopes(breakpoints: Vec<Time>, slopes: &[f64], origin: f64) -> Result<Self> {
        if slopes.len() + 1 != breakpoints.len() {
            return Err(Error::domain("need exactly one slope per segment"));
        }
        let increments = slopes
            .iter()
            .enumerate()
            .map(|(i, s)| Ok(s * breakpoints[i + 1].sub(breakpoints[i])?.to_f64()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_increments(breakpoints, origin, increments, Vec::new())
    }

    /// The path equal to `v` on `[start, end]`.
    pub fn constant(start: Time, end: Time, v: f64) -> Result<Self> {
        Self::new(vec![start, end], vec![v, v], Vec::new())
    }

    /// A pure-jump path, zero before the first jump.
    pub fn jumps_only(start: Time, end: Time, jumps: Vec<(Time, f64)>) -> Result<Self> {
        Self::new(vec![start, end], vec![0.0, 0.0], jumps)
    }

    /// Linear interpolation of plain `f64` samples.
    pub fn from_samples(times: &[f64], values: &[f64]) -> Result<Self> {
        let bps = times.iter().map(|&t| Time::from_f64(t)).collect::<Result<Vec<_>>>()?;
        Self::new(bps, values.to_vec(), Vec::new())
    }

    pub fn breakpoints(&self) -> &[Time] {
        &self.breakpoints
    }

    /// Values of the continuous part at the breakpoints.
    pub fn node_values(&self) -> &[f64] {
        &self.values
    }

    pub fn jumps(&self) -> &[(Time, f64)] {
        &self.jumps
    }

    pub fn has_jumps(&self) -> bool {
        !self.jumps.is_empty()
    }

    pub fn start(&self) -> Time {
        self.breakpoints[0]
    }

    pub fn end(&self) -> Time {
        *self.breakpoints.last().unwrap()
    }

    pub fn value_at_origin(&self) -> f64 {
        self.values[0]
    }

    /// Exact increment of the continuous part over each segment.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn segment_count(&self) -> usize {
        self.increments.len()
    }

    /// Slope of segment `i`; may be infinite when the segment is shorter
    /// than the smallest `f64`.
    pub fn slope(&self, i: usize) -> f64 {
        let dt = self.breakpoints[i + 1].sub(self.breakpoints[i]).expect("sorted");
        self.increments[i] / dt.to_f64()
    }

    /// Increment of the continuous part over `[a, b]`.
    ///
    /// Whole segments contribute their stored increment, so an interval
    /// spanning one segment exactly reproduces it bit for bit.
    pub fn continuous_increment(&self, a: Time, b: Time) -> Result<f64> {
        if a > b {
            return Err(Error::domain(format!("increment needs a <= b, got {a} > {b}")));
        }
        self.check_span(a)?;
        self.check_span(b)?;
        if a == b {
            return Ok(0.0);
        }
        let last = self.increments.len() - 1;
        let i = (self.breakpoints.partition_point(|&p| p <= a) - 1).min(last);
        let j = (self.breakpoints.partition_point(|&p| p < b) - 1).min(last);
        let part = |k: usize, lo: Time, hi: Time| -> f64 {
            let (s, e) = (self.breakpoints[k], self.breakpoints[k + 1]);
            if lo == s && hi == e {
                self.increments[k]
            } else {
                let len = e.sub(s).expect("sorted");
                self.increments[k] * hi.sub(lo).expect("ordered").ratio(len)
            }
        };
        if i == j {
            return Ok(part(i, a, b));
        }
        let mut acc = part(i, a, self.breakpoints[i + 1]);
        for k in i + 1..j {
            acc += self.increments[k];
        }
        acc += part(j, self.breakpoints[j], b);
        Ok(acc)
    }

    fn check_span(&self, t: Time) -> Result<()> {
        if t < self.start() || t > self.end() {
            return Err(Error::domain(format!("t = {t} outside [{}, {}]", self.start(), self.end())));
        }
        Ok(())
    }

    /// Continuous part at `t` (no span check).
    fn continuous(&self, t: Time) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= t);
        if i == 0 {
            return self.values[0];
        }
        let i = i - 1;
        if self.breakpoints[i] == t || i + 1 == self.breakpoints.len() {
            return self.values[i];
        }
        let a = self.breakpoints[i];
        let b = self.breakpoints[i + 1];
        let frac = t.sub(a).expect("sorted").ratio(b.sub(a).expect("sorted"));
        self.values[i] + (self.values[i + 1] - self.values[i]) * frac
    }

    fn jump_sum(&self, t: Time, inclusive: bool) -> f64 {
        let n =
            if inclusive { self.jumps.partition_point(|j| j.0 <= t) } else { self.jumps.partition_point(|j| j.0 < t) };
        if n == 0 {
            0.0
        } else {
            self.jump_prefix[n - 1]
        }
    }

    /// Right-continuous evaluation.
    pub fn evaluate(&self, t: Time) -> Result<f64> {
        self.check_span(t)?;
        Ok(self.continuous(t) + self.jump_sum(t, true))
    }

    /// Left limit at `t`.
    pub fn left_limit(&self, t: Time) -> Result<f64> {
        self.check_span(t)?;
        Ok(self.continuous(t) + self.jump_sum(t, false))
    }

    /// Size of the jump at exactly `t` (zero if none).
    pub fn jump_at(&self, t: Time) -> f64 {
        match self.jumps.binary_search_by(|j| j.0.cmp(&t)) {
            Ok(i) => self.jumps[i].1,
            Err(_) => 0.0,
        }
    }

    /// Exact infimum over `[s, t]`, including left limits at jump times.
    pub fn running_min(&self, s: Time, t: Time) -> Result<f64> {
        if s > t {
            return Err(Error::domain(format!("running_min needs s <= t, got s = {s}, t = {t}")));
        }
        self.check_span(s)?;
        self.check_span(t)?;
        let mut m = self.evaluate(s)?.min(self.evaluate(t)?);
        if s < t {
            m = m.min(self.left_limit(t)?);
        }
        let lo = self.breakpoints.partition_point(|&b| b <= s);
        let hi = self.breakpoints.partition_point(|&b| b < t);
        for &b in &self.breakpoints[lo..hi] {
            m = m.min(self.evaluate(b)?).min(self.left_limit(b)?);
        }
        let jlo = self.jumps.partition_point(|j| j.0 <= s);
        let jhi = self.jumps.partition_point(|j| j.0 < t);
        for &(u, _) in &self.jumps[jlo..jhi] {
            m = m.min(self.left_limit(u)?);
        }
        Ok(m)
    }

    /// Breakpoints together with jump times, sorted and deduplicated.
    pub fn event_times(&self) -> Vec<Time> {
        let mut all: Vec<Time> = self.breakpoints.iter().copied().chain(self.jumps.iter().map(|j| j.0)).collect();
        all.sort();
        all.dedup();
        all
    }

    pub fn to_document(&self) -> PathDocument {
        let slopes = (0..self.breakpoints.len() - 1)
            .map(|i| {
                let s = self.slope(i);
                s.is_finite().then_some(s)
            })
            .collect();
        PathDocument {
            breakpoints: self.breakpoints.clone(),
            increments: self.increments.clone(),
            slopes,
            jumps: self.jumps.iter().map(|&(t, s)| (t.to_string(), s)).collect(),
            origin: self.values[0],
        }
    }

    pub fn from_document(doc: &PathDocument) -> Result<Self> {
        let jumps = doc.jumps.iter().map(|(t, &s)| Ok((t.parse::<Time>()?, s))).collect::<Result<Vec<_>>>()?;
        Self::from_increments(doc.breakpoints.clone(), doc.origin, doc.increments.clone(), jumps)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PathDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    /// CSV `time,value` on `resolution + 1` uniformly spaced times.
    pub fn to_csv(&self, resolution: usize) -> Result<String> {
        if resolution == 0 {
            return Err(Error::domain("resolution must be positive"));
        }
        let len = self.end().sub(self.start())?;
        let mut out = String::from("time,value\n");
        for i in 0..=resolution {
            let t =
                if i == resolution { self.end() } else { self.start().add(len.scale(i as f64 / resolution as f64)?) };
            writeln!(out, "{t},{}", fmt_f64(self.evaluate(t)?)).unwrap();
        }
        Ok(out)
    }

    /// CSV `time,value` at every breakpoint and jump time.
    pub fn breakpoint_csv(&self) -> Result<String> {
        let mut out = String::from("time,value\n");
        for t in self.event_times() {
            writeln!(out, "{t},{}", fmt_f64(self.evaluate(t)?)).unwrap();
        }
        Ok(out)
    }
}

/// JSON form of a [`PiecewisePath`].
///
/// `increments` holds the exact rise of the continuous part over each
/// segment and is what the reader uses; `slopes` is informational and `null`
/// where a segment is too short for its slope to be a finite `f64`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PathDocument {
    pub breakpoints: Vec<Time>,
    pub increments: Vec<f64>,
    #[serde(default)]
    pub slopes: Vec<Option<f64>>,
    #[serde(default)]
    pub jumps: BTreeMap<String, f64>,
    pub origin: f64,
}

/// Path sampled on the uniform grid `t0 + i * dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSignal {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl GridSignal {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::domain(format!("grid step must be positive, got {dt}")));
        }
        if values.is_empty() {
            return Err(Error::domain("grid signal needs at least one value"));
        }
        Ok(Self { t0, dt, values })
    }

    /// Samples `f` at `n + 1` points covering `[t0, t0 + n*dt]`.
    pub fn from_fn(t0: f64, dt: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(t0, dt, (0..=n).map(|i| f(t0 + i as f64 * dt)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.values.len() - 1)
    }

    /// Nearest grid index to `t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = (t - self.t0) / self.dt;
        let last = (self.values.len() - 1) as f64;
        if !(x >= -0.5 && x <= last + 0.5) {
            return Err(Error::domain(format!("t = {t} outside grid span [{}, {}]", self.t0, self.end())));
        }
        Ok(x.round().clamp(0.0, last) as usize)
    }

    /// Linear interpolation between grid values.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        let x = (t - self.t0) / self.dt;
        let last = self.values.len() - 1;
        if !(x >= -1e-9 && x <= last as f64 + 1e-9) {
            return Err(Error::domain(format!("t = {t} outside grid span")));
        }
        let x = x.clamp(0.0, last as f64);
        let i = (x.floor() as usize).min(last);
        if i == last {
            return Ok(self.values[last]);
        }
        let f = x - i as f64;
        Ok(self.values[i] + (self.values[i + 1] - self.values[i]) * f)
    }

    /// Minimum of the grid values with index in `i..=j`.
    pub fn running_min_index(&self, i: usize, j: usize) -> Result<f64> {
        if i > j {
            return Err(Error::domain(format!("running_min needs i <= j, got {i} > {j}")));
        }
        if j >= self.values.len() {
            return Err(Error::domain(format!("index {j} outside grid of {} points", self.values.len())));
        }
        Ok(self.values[i..=j].iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Grid minimum over `[s, t]` after snapping both ends to the grid.
    pub fn running_min(&self, s: f64, t: f64) -> Result<f64> {
        if s > t {
            return Err(Error::domain(format!("running_min needs s <= t, got s = {s}, t = {t}")));
        }
        self.running_min_index(self.index_of(s)?, self.index_of(t)?)
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// The signal restricted to indices `from..`.
    pub fn tail_from(&self, from: usize) -> Result<GridSignal> {
        if from >= self.values.len() {
            return Err(Error::domain(format!("start index {from} outside grid")));
        }
        GridSignal::new(self.time(from), self.dt, self.values[from..].to_vec())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,value\n");
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", fmt_f64(self.time(i)), fmt_f64(*v)).unwrap();
        }
        out
    }
}

/// `sum_k deltas[k]^p` over the given prefix.
pub fn variation_sum(deltas: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::domain(format!("variation exponent must be >= 1, got {p}")));
    }
    let mut acc = 0.0;
    for (k, &d) in deltas.iter().enumerate() {
        if !(d >= 0.0) {
            return Err(Error::domain(format!("negative or NaN entry {d} at index {k}")));
        }
        acc += d.powf(p);
    }
    Ok(acc)
}

/// Total variation of a nondecreasing path: affine rise plus every jump.
pub fn gamma_total_variation(path: &PiecewisePath) -> Result<f64> {
    if let Some((i, d)) = path.increments().iter().enumerate().find(|(_, &d)| d < 0.0) {
        return Err(Error::domain(format!("path decreases by {} on segment {i}", -d)));
    }
    let rise: f64 = path.increments().iter().sum();
    Ok(rise + path.jumps().iter().map(|j| j.1).sum::<f64>())
}
