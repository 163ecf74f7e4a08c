//! One-dimensional Skorokhod reflection at zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{GridSignal, PiecewisePath};
use crate::time::Time;

/// Output of [`skorokhod_map`]: `reflected = input + local_time` on the grid
/// tail starting at the reflection index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectedScalarPath {
    pub input: GridSignal,
    pub reflected: GridSignal,
    pub local_time: GridSignal,
}

impl ReflectedScalarPath {
    pub fn max_reflected(&self) -> f64 {
        self.reflected.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `Γ_s(f)(t) = f(t) - min(inf_{[s,t]} f, 0)` for grid times `t >= s`.
///
/// The returned signals start at `s_index`.
pub fn skorokhod_map(f: &GridSignal, s_index: usize) -> Result<ReflectedScalarPath> {
    if s_index >= f.len() {
        return Err(Error::domain(format!("start index {s_index} outside grid of {} points", f.len())));
    }
    let input = f.tail_from(s_index)?;
    let n = input.len();
    let mut reflected = Vec::with_capacity(n);
    let mut local = Vec::with_capacity(n);
    let mut m = f64::INFINITY;
    for &v in &input.values {
        m = m.min(v);
        let push = -m.min(0.0);
        local.push(push);
        reflected.push(v + push);
    }
    let t0 = input.t0;
    let dt = input.dt;
    Ok(ReflectedScalarPath {
        input,
        reflected: GridSignal::new(t0, dt, reflected)?,
        local_time: GridSignal::new(t0, dt, local)?,
    })
}

/// Smallest nondecreasing `k` with `f + k >= 0`, by the forward recursion
/// `k(t) = max(k(t-), -f(t))`.
pub fn minimal_pushing_oracle(f: &GridSignal) -> GridSignal {
    let mut k = 0.0f64;
    let values = f
        .values
        .iter()
        .map(|&v| {
            k = k.max(-v);
            k
        })
        .collect();
    GridSignal { t0: f.t0, dt: f.dt, values }
}

/// Samples a piecewise path on a uniform grid of `segments * refine` steps.
pub fn sample_to_grid(path: &PiecewisePath, segments: usize, refine: usize) -> Result<GridSignal> {
    let n = segments.checked_mul(refine).filter(|&n| n > 0).ok_or_else(|| Error::domain("empty sampling grid"))?;
    let (a, b) = (path.start().to_f64(), path.end().to_f64());
    let dt = (b - a) / n as f64;
    let values = (0..=n)
        .map(|i| {
            let t = if i == n { path.end() } else { Time::from_f64(a + i as f64 * dt)? };
            path.evaluate(t)
        })
        .collect::<Result<Vec<_>>>()?;
    GridSignal::new(a, dt, values)
}
