//! Solvers for the reflected equation `dZ = A Z dλ - e1 dγ + e1 dK`.
//!
//! Three backends share the same small kernels:
//!
//! * [`solve_exact_piecewise`] walks the breakpoints of a piecewise-affine
//!   `λ` and a nondecreasing `γ` and evaluates each piece in closed form;
//! * [`solve_euler_hyperbolic`] steps the `(ℓ, δ)` system on a grid;
//! * [`solve_reflected_euler`] steps `Z` directly with the matrix
//!   exponential and projects back onto `x >= 0`.
//!
//! [`solve_euler_hyperbolic_adaptive`] is a variant of the hyperbolic Euler
//! scheme for signals that can be refined on demand at dyadic times; it
//! shrinks the step whenever the drift `cosh(δ)/ℓ` becomes stiff.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{GridSignal, PiecewisePath};
use crate::time::{fmt_f64, Time};

/// Largest `|δ|` for which `cosh δ` is evaluated.
pub const MAX_EXPONENT: f64 = 700.0;

pub type Mat2 = [[f64; 2]; 2];

/// `exp(δA) = [[cosh δ, sinh δ], [sinh δ, cosh δ]]`.
pub fn mat_exp_a(delta: f64) -> Result<Mat2> {
    check_exponent(delta)?;
    let (c, s) = (delta.cosh(), delta.sinh());
    Ok([[c, s], [s, c]])
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn check_exponent(delta: f64) -> Result<()> {
    if !(delta.abs() <= MAX_EXPONENT) {
        return Err(Error::Overflow(format!("|δ| = {} exceeds {MAX_EXPONENT}", delta.abs())));
    }
    Ok(())
}

/// `Ψ(x, y) = (sqrt(y² - x²), atanh(x / y))` on `0 <= x < y`.
pub fn psi_forward(x: f64, y: f64) -> Result<(f64, f64)> {
    if !(x >= 0.0 && x < y) {
        return Err(Error::domain(format!("({x}, {y}) is not in the wedge 0 <= x < y")));
    }
    if x == 0.0 {
        return Ok((y, 0.0));
    }
    let ell = ((y - x) * (y + x)).sqrt();
    Ok((ell, (x / y).atanh()))
}

/// `Ψ⁻¹(ℓ, δ) = (ℓ sinh δ, ℓ cosh δ)`.
pub fn psi_inverse(ell: f64, delta: f64) -> Result<(f64, f64)> {
    if !(ell > 0.0) {
        return Err(Error::domain(format!("ℓ must be positive, got {ell}")));
    }
    if !(delta >= 0.0) {
        return Err(Error::domain(format!("δ must be nonnegative, got {delta}")));
    }
    check_exponent(delta)?;
    if delta == 0.0 {
        return Ok((0.0, ell));
    }
    Ok((ell * delta.sinh(), ell * delta.cosh()))
}

/// A point of the reflected equation together with the boundary push `K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectedState {
    pub x: f64,
    pub y: f64,
    pub k_accum: f64,
}

impl ReflectedState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, k_accum: 0.0 }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn wedge(&self) -> Result<Wedge> {
        classify(self.x, self.y)
    }

    /// The same point with `x`, `y` and `K` multiplied by `eta`.
    pub fn scaled(&self, eta: f64) -> Self {
        Self { x: eta * self.x, y: eta * self.y, k_accum: eta * self.k_accum }
    }
}

/// Which invariant region a point lies in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wedge {
    Origin,
    /// `0 <= x < y`
    Upper,
    /// `0 <= x < -y`
    Lower,
}

pub fn classify(x: f64, y: f64) -> Result<Wedge> {
    if !(x >= 0.0) || !y.is_finite() || !x.is_finite() {
        return Err(Error::domain(format!("({x}, {y}) violates x >= 0")));
    }
    if x == 0.0 && y == 0.0 {
        Ok(Wedge::Origin)
    } else if x < y {
        Ok(Wedge::Upper)
    } else if x < -y {
        Ok(Wedge::Lower)
    } else {
        Err(Error::domain(format!("({x}, {y}) lies in the region x >= |y| outside both wedges")))
    }
}

/// State of the transformed system: `ℓ`, `δ`, the reflection `k` of `δ`
/// and the push `K` of the original coordinates (`dK = ℓ dk`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicState {
    pub ell: f64,
    pub delta: f64,
    pub k_accum: f64,
    pub push: f64,
}

impl HyperbolicState {
    pub fn new(ell: f64, delta: f64) -> Self {
        Self { ell, delta, k_accum: 0.0, push: 0.0 }
    }

    /// Point in the upper wedge; the trivial state `ℓ = 0` maps to the origin.
    pub fn to_reflected(&self) -> Result<ReflectedState> {
        if self.ell == 0.0 {
            return Ok(ReflectedState { x: 0.0, y: 0.0, k_accum: self.push });
        }
        let (x, y) = psi_inverse(self.ell, self.delta)?;
        Ok(ReflectedState { x, y, k_accum: self.push })
    }
}

/// Applies a `λ` increment `dl` with `γ` flat, in closed form.
///
/// Inside a wedge, `ℓ` is frozen and `δ` follows the Skorokhod map of
/// `δ + λ`; in the lower wedge the mirror `(x, -y)` is driven by `-dl`.
pub fn flow_lambda(z: ReflectedState, dl: f64) -> Result<ReflectedState> {
    let (y_abs, dl, sign) = match z.wedge()? {
        Wedge::Origin => return Ok(z),
        Wedge::Upper => (z.y, dl, 1.0),
        Wedge::Lower => (-z.y, -dl, -1.0),
    };
    let (ell, delta) = psi_forward(z.x, y_abs)?;
    let mut next = delta + dl;
    let mut k_accum = z.k_accum;
    if next < 0.0 {
        k_accum += ell * -next;
        next = 0.0;
    }
    let (x, y) = psi_inverse(ell, next)?;
    Ok(ReflectedState { x, y: sign * y, k_accum })
}

/// Applies a `γ` increment `dg >= 0` with `λ` flat: `z ← Π(z - dg e1)`.
pub fn push_gamma(z: ReflectedState, dg: f64) -> ReflectedState {
    let x = z.x - dg;
    if x < 0.0 {
        ReflectedState { x: 0.0, y: z.y, k_accum: z.k_accum - x }
    } else {
        ReflectedState { x, ..z }
    }
}

/// Time series of states with backend metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S> {
    pub times: Vec<Time>,
    pub states: Vec<S>,
    pub meta: TrajectoryMeta,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub backend: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_taken: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl TrajectoryMeta {
    fn tagged(backend: &str) -> Self {
        Self { backend: backend.to_string(), ..Self::default() }
    }
}

/// CSV row layout for a state type.
pub trait StateRow {
    const HEADER: &'static str;
    fn write_row(&self, out: &mut String);
}

impl StateRow for ReflectedState {
    const HEADER: &'static str = "time,x,y,K";
    fn write_row(&self, out: &mut String) {
        write!(out, "{},{},{}", fmt_f64(self.x), fmt_f64(self.y), fmt_f64(self.k_accum)).unwrap();
    }
}

impl StateRow for HyperbolicState {
    const HEADER: &'static str = "time,ell,delta,k";
    fn write_row(&self, out: &mut String) {
        write!(out, "{},{},{}", fmt_f64(self.ell), fmt_f64(self.delta), fmt_f64(self.k_accum)).unwrap();
    }
}

impl<S> Trajectory<S> {
    fn with_meta(meta: TrajectoryMeta) -> Self {
        Self { times: Vec::new(), states: Vec::new(), meta }
    }

    fn record(&mut self, t: Time, s: S) {
        self.times.push(t);
        self.states.push(s);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// State recorded at exactly `t` (the post-jump state at jump times).
    pub fn state_at(&self, t: Time) -> Option<&S> {
        let i = self.times.partition_point(|&u| u <= t);
        (i > 0 && self.times[i - 1] == t).then(|| &self.states[i - 1])
    }

    pub fn last(&self) -> Option<&S> {
        self.states.last()
    }
}

impl<S: StateRow> Trajectory<S> {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(48 * self.len());
        out.push_str(S::HEADER);
        out.push('\n');
        for (t, s) in self.times.iter().zip(&self.states) {
            write!(out, "{t},").unwrap();
            s.write_row(&mut out);
            out.push('\n');
        }
        out
    }
}

impl Trajectory<HyperbolicState> {
    pub fn to_reflected(&self) -> Result<Trajectory<ReflectedState>> {
        Ok(Trajectory {
            times: self.times.clone(),
            states: self.states.iter().map(HyperbolicState::to_reflected).collect::<Result<_>>()?,
            meta: self.meta.clone(),
        })
    }
}

/// Options for [`solve_exact_piecewise`].
#[derive(Clone, Copy, Debug)]
pub struct ExactOptions {
    /// Extra samples per piece; `1` records piece endpoints only.
    pub refine: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self { refine: 1 }
    }
}

/// Closed-form solution for piecewise-affine `λ` and nondecreasing `γ`.
///
/// On every piece between consecutive breakpoints of either path, at most
/// one of the two may vary: an affine `λ` piece is solved by
/// [`flow_lambda`], an affine `γ` piece by [`push_gamma`]. Jumps of `γ` are
/// applied as `Π(z - x e1)` and the post-jump state is recorded.
pub fn solve_exact_piecewise(
    lambda: &PiecewisePath,
    gamma: &PiecewisePath,
    z0: ReflectedState,
    span: (Time, Time),
    opts: ExactOptions,
) -> Result<Trajectory<ReflectedState>> {
    let (s, t) = span;
    if s > t {
        return Err(Error::domain(format!("empty span [{s}, {t}]")));
    }
    if lambda.has_jumps() {
        return Err(Error::Backend("the exact backend needs a continuous λ".into()));
    }
    if opts.refine == 0 {
        return Err(Error::domain("refine must be at least 1"));
    }
    for (name, p) in [("λ", lambda), ("γ", gamma)] {
        if s < p.start() || t > p.end() {
            return Err(Error::domain(format!("{name} does not cover [{s}, {t}]")));
        }
    }
    if let Some((i, _)) = gamma.increments().iter().enumerate().find(|(_, &d)| d < 0.0) {
        return Err(Error::domain(format!("γ decreases on segment {i}")));
    }
    let start_wedge = z0.wedge()?;

    let mut events: Vec<Time> =
        lambda.event_times().into_iter().chain(gamma.event_times()).filter(|&u| u > s && u < t).collect();
    events.push(s);
    events.push(t);
    events.sort();
    events.dedup();

    let mut traj = Trajectory::with_meta(TrajectoryMeta::tagged("exact"));
    traj.record(s, z0);
    let mut z = z0;
    for w in events.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dl = lambda.continuous_increment(a, b)?;
        let dg = gamma.continuous_increment(a, b)?;
        if dl != 0.0 && dg != 0.0 {
            return Err(Error::Backend(format!("λ and γ both vary on [{a}, {b}]; use an Euler backend")));
        }
        let start = z;
        let piece = |f: f64| -> Result<ReflectedState> {
            if dg != 0.0 {
                Ok(push_gamma(start, f * dg))
            } else {
                flow_lambda(start, f * dl)
            }
        };
        if opts.refine > 1 {
            let len = b.sub(a)?;
            for i in 1..opts.refine {
                let f = i as f64 / opts.refine as f64;
                traj.record(a.add(len.scale(f)?), piece(f)?);
            }
        }
        z = piece(1.0)?;
        let jump = gamma.jump_at(b);
        if jump > 0.0 {
            z = push_gamma(z, jump);
        }
        check_wedge(&z, start_wedge, b)?;
        traj.record(b, z);
    }
    Ok(traj)
}

fn check_wedge(z: &ReflectedState, start: Wedge, t: Time) -> Result<()> {
    let ok = match start {
        Wedge::Origin => z.x == 0.0 && z.y == 0.0,
        Wedge::Upper => z.x >= 0.0 && z.x <= z.y && z.y > 0.0,
        Wedge::Lower => z.x >= 0.0 && z.x <= -z.y && z.y < 0.0,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Invariant(format!("trajectory left its wedge at t = {t}: ({}, {})", z.x, z.y)))
    }
}

/// Options shared by the hyperbolic Euler schemes.
#[derive(Clone, Copy, Debug)]
pub struct EulerOptions {
    pub substeps: usize,
    pub ell_floor: f64,
    /// Check the a-priori bounds on every step, with tolerance `sqrt(h)`.
    pub check_bounds: bool,
}

impl Default for EulerOptions {
    fn default() -> Self {
        Self { substeps: 4, ell_floor: 1e-300, check_bounds: true }
    }
}

/// One explicit step of the `(ℓ, δ)` system over `substeps` equal pieces,
/// with `dl` the `λ` increment and `dg` the `γ` increment of the step.
pub fn hyperbolic_step(u: HyperbolicState, dl: f64, dg: f64, substeps: usize) -> Result<HyperbolicState> {
    let m = substeps as f64;
    let (dl, dg) = (dl / m, dg / m);
    let mut u = u;
    for _ in 0..substeps {
        check_exponent(u.delta)?;
        let ell = u.ell + dg * u.delta.sinh();
        let pre = u.delta + dl - dg * u.delta.cosh() / u.ell;
        if pre < 0.0 {
            u.k_accum += -pre;
            u.push += u.ell * -pre;
            u.delta = 0.0;
        } else {
            u.delta = pre;
        }
        u.ell = ell;
    }
    Ok(u)
}

/// Checks the a-priori bounds on one step from `a` to `b` when `λ` is
/// linear on the step, so `sup_u |λ_{u,t}| = |dl|`.
fn check_step_bounds(a: &HyperbolicState, b: &HyperbolicState, dl: f64, dg: f64, tol: f64) -> Result<()> {
    let top = a.delta + dl.abs();
    let delta_lo = a.delta + dl - dg * top.cosh() / a.ell;
    let ell_hi = a.ell + dg * top.sinh();
    let scale = a.ell.max(1.0);
    if b.delta > top + tol {
        return Err(Error::Integrator(format!("δ = {} above its bound {top}", b.delta)));
    }
    if b.delta < delta_lo - tol {
        return Err(Error::Integrator(format!("δ = {} below its bound {delta_lo}", b.delta)));
    }
    if b.ell < a.ell * (1.0 - f64::EPSILON) || b.ell > ell_hi + tol * scale {
        return Err(Error::Integrator(format!("ℓ = {} outside [{}, {ell_hi}]", b.ell, a.ell)));
    }
    Ok(())
}

fn trivial_hyperbolic(
    times: impl Iterator<Item = f64>,
    density: f64,
    backend: &str,
) -> Result<Trajectory<HyperbolicState>> {
    let mut meta = TrajectoryMeta::tagged(backend);
    meta.notes.push("ℓ₀ = 0: trivial solution Z ≡ 0, K = γ".into());
    let mut traj = Trajectory::with_meta(meta);
    let mut t0 = None;
    for t in times {
        let t0 = *t0.get_or_insert(t);
        let mut u = HyperbolicState::new(0.0, 0.0);
        u.push = density * (t - t0);
        traj.record(Time::from_f64(t)?, u);
    }
    Ok(traj)
}

fn check_start(u0: &HyperbolicState, opts: &EulerOptions, density: f64) -> Result<()> {
    if !(density >= 0.0) {
        return Err(Error::domain(format!("γ density must be nonnegative, got {density}")));
    }
    if !(u0.delta >= 0.0) {
        return Err(Error::domain(format!("δ₀ must be nonnegative, got {}", u0.delta)));
    }
    if opts.substeps == 0 {
        return Err(Error::domain("substeps must be positive"));
    }
    if u0.ell < 0.0 {
        return Err(Error::domain(format!("ℓ₀ must be nonnegative, got {}", u0.ell)));
    }
    if u0.ell > 0.0 && u0.ell < opts.ell_floor {
        return Err(Error::Singularity(format!("ℓ₀ = {} below floor {}", u0.ell, opts.ell_floor)));
    }
    Ok(())
}

/// Explicit Euler scheme for `dℓ = sinh δ dγ`, `dδ = dλ - cosh δ / ℓ dγ + dk`
/// with `dγ = density dt`, reflecting `δ` at zero after every substep.
pub fn solve_euler_hyperbolic(
    lambda: &GridSignal,
    gamma_density: f64,
    u0: HyperbolicState,
    opts: &EulerOptions,
) -> Result<Trajectory<HyperbolicState>> {
    check_start(&u0, opts, gamma_density)?;
    if u0.ell == 0.0 {
        return trivial_hyperbolic((0..lambda.len()).map(|i| lambda.time(i)), gamma_density, "euler_hyperbolic");
    }
    let h = lambda.dt;
    let dg = gamma_density * h;
    let tol = h.sqrt();
    let mut meta = TrajectoryMeta::tagged("euler_hyperbolic");
    meta.step = Some(h);
    meta.substeps = Some(opts.substeps);
    let mut traj = Trajectory::with_meta(meta);
    traj.record(Time::from_f64(lambda.t0)?, u0);
    let mut u = u0;
    for i in 1..lambda.len() {
        let dl = lambda.values[i] - lambda.values[i - 1];
        let next = hyperbolic_step(u, dl, dg, opts.substeps)?;
        if opts.check_bounds {
            check_step_bounds(&u, &next, dl, dg, tol)?;
        }
        if next.ell < opts.ell_floor {
            return Err(Error::Singularity(format!("ℓ fell below {} at step {i}", opts.ell_floor)));
        }
        u = next;
        traj.record(Time::from_f64(lambda.time(i))?, u);
    }
    Ok(traj)
}

/// One-step Duhamel scheme: `z ← exp(A Δλ) z - e1 Δγ`, then projection
/// onto `x >= 0` with the deficit added to `K`.
pub fn solve_reflected_euler(
    lambda: &GridSignal,
    gamma: &PiecewisePath,
    z0: ReflectedState,
) -> Result<Trajectory<ReflectedState>> {
    if !(z0.x >= 0.0) {
        return Err(Error::domain(format!("x₀ must be nonnegative, got {}", z0.x)));
    }
    let grid_time = |i: usize| -> Result<Time> {
        let t = Time::from_f64(lambda.time(i).max(0.0))?;
        // absorb rounding of t0 + i dt at the ends of γ's span
        if t > gamma.end() && lambda.time(i) - gamma.end().to_f64() < 1e-12 {
            Ok(gamma.end())
        } else if t < gamma.start() && gamma.start().to_f64() - lambda.time(i) < 1e-12 {
            Ok(gamma.start())
        } else {
            Ok(t)
        }
    };
    let mut meta = TrajectoryMeta::tagged("euler_reflected");
    meta.step = Some(lambda.dt);
    let mut traj = Trajectory::with_meta(meta);
    let t0 = grid_time(0)?;
    let mut g_prev = gamma.evaluate(t0)?;
    traj.record(t0, z0);
    let mut z = z0;
    for i in 1..lambda.len() {
        let t = grid_time(i)?;
        let g = gamma.evaluate(t)?;
        let dg = g - g_prev;
        let e = mat_exp_a(lambda.values[i] - lambda.values[i - 1])?;
        let x = e[0][0] * z.x + e[0][1] * z.y - dg;
        let y = e[1][0] * z.x + e[1][1] * z.y;
        z = if x < 0.0 {
            ReflectedState { x: 0.0, y, k_accum: z.k_accum - x }
        } else {
            ReflectedState { x, y, k_accum: z.k_accum }
        };
        traj.record(t, z);
        g_prev = g;
    }
    Ok(traj)
}

/// A signal on `[0, 1]` that can be evaluated at any dyadic time
/// `index · 2^-level`, consistently across levels.
pub trait DyadicSignal {
    /// Level of the coarsest grid the solver records on.
    fn base_level(&self) -> u32;
    /// Hölder exponent used to balance the drift against the increments.
    fn roughness(&self) -> f64;
    fn value(&mut self, level: u32, index: u64) -> f64;
}

/// Options for [`solve_euler_hyperbolic_adaptive`].
#[derive(Clone, Copy, Debug)]
pub struct AdaptiveOptions {
    pub euler: EulerOptions,
    /// Target ratio of drift per step to the typical increment `h^H`.
    pub kappa: f64,
    pub max_level: u32,
    pub max_steps: u64,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            euler: EulerOptions { substeps: 1, ..EulerOptions::default() },
            kappa: 0.1,
            max_level: 60,
            max_steps: 200_000_000,
        }
    }
}

/// Hyperbolic Euler scheme on a dyadic grid that refines where the drift is
/// stiff: the step `h = 2^-L` is the largest with
/// `density · cosh δ / ℓ · h^{1-H} <= kappa`, never coarser than the base
/// grid. States are recorded on the base grid only.
pub fn solve_euler_hyperbolic_adaptive<S: DyadicSignal>(
    signal: &mut S,
    gamma_density: f64,
    u0: HyperbolicState,
    opts: &AdaptiveOptions,
) -> Result<Trajectory<HyperbolicState>> {
    check_start(&u0, &opts.euler, gamma_density)?;
    let base = signal.base_level();
    if opts.max_level > 62 || opts.max_level < base {
        return Err(Error::config(format!("max_level must lie in [{base}, 62]")));
    }
    let record_step = 2f64.powi(-(base as i32));
    let n_base = 1u64 << base;
    if u0.ell == 0.0 {
        return trivial_hyperbolic((0..=n_base).map(|i| i as f64 * record_step), gamma_density, "euler_adaptive");
    }
    let lmax = opts.max_level;
    let end = 1u64 << lmax;
    let stride = 1u64 << (lmax - base);
    let h_exp = 1.0 - signal.roughness();
    let mut meta = TrajectoryMeta::tagged("euler_adaptive");
    meta.step = Some(record_step);
    meta.substeps = Some(opts.euler.substeps);
    let mut traj = Trajectory::with_meta(meta);
    traj.record(Time::ZERO, u0);
    let mut u = u0;
    let mut now = 0u64;
    let mut steps = 0u64;
    let mut clamped = 0u64;
    let mut finest = base;
    while now < end {
        let stiff = gamma_density * u.delta.min(MAX_EXPONENT).cosh() / u.ell;
        let mut level = if stiff > 0.0 {
            let need = (stiff / opts.kappa).ln() / (h_exp * std::f64::consts::LN_2);
            need.ceil().max(base as f64)
        } else {
            base as f64
        };
        if level > lmax as f64 {
            clamped += 1;
            level = lmax as f64;
        }
        let mut level = level as u32;
        let align = if now == 0 { 0 } else { lmax - now.trailing_zeros().min(lmax) };
        level = level.max(align);
        finest = finest.max(level);
        let width = 1u64 << (lmax - level);
        let i = now >> (lmax - level);
        let dl = signal.value(level, i + 1) - signal.value(level, i);
        let h = 2f64.powi(-(level as i32));
        let dg = gamma_density * h;
        let next = hyperbolic_step(u, dl, dg, opts.euler.substeps)?;
        if opts.euler.check_bounds {
            check_step_bounds(&u, &next, dl, dg, h.sqrt())?;
        }
        if next.ell < opts.euler.ell_floor {
            return Err(Error::Singularity(format!("ℓ fell below {}", opts.euler.ell_floor)));
        }
        u = next;
        now += width;
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Integrator(format!("more than {} adaptive steps", opts.max_steps)));
        }
        if now.is_multiple_of(stride) {
            traj.record(Time::from_f64((now / stride) as f64 * record_step)?, u);
        }
    }
    traj.meta.steps_taken = Some(steps);
    traj.meta.notes.push(format!("finest level {finest}"));
    if clamped > 0 {
        traj.meta.notes.push(format!("{clamped} steps clamped at level {lmax}"));
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: f64) -> Time {
        Time::from_f64(v).unwrap()
    }

    #[test]
    fn matrix_exponential_values() {
        assert_eq!(mat_exp_a(0.0).unwrap(), [[1.0, 0.0], [0.0, 1.0]]);
        let m = mat_exp_a(2f64.ln()).unwrap();
        let want = [[1.25, 0.75], [0.75, 1.25]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m[i][j] - want[i][j]).abs() < 1e-15);
            }
        }
        assert!(matches!(mat_exp_a(700.5), Err(Error::Overflow(_))));
        assert!(mat_exp_a(-700.0).is_ok());
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi_forward(0.0, 1.0).unwrap(), (1.0, 0.0));
        let (l, d) = psi_forward(1f64.sinh(), 1f64.cosh()).unwrap();
        assert!((l - 1.0).abs() < 1e-14 && (d - 1.0).abs() < 1e-14);
        assert!(psi_forward(1.0, 1.0).is_err());
        assert!(psi_forward(-0.1, 1.0).is_err());
        assert_eq!(psi_inverse(1.0, 0.0).unwrap(), (0.0, 1.0));
        assert_eq!(psi_inverse(2.0, 0.0).unwrap(), (0.0, 2.0));
        assert!(psi_inverse(0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn semigroup(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let p = mat_mul(&mat_exp_a(a).unwrap(), &mat_exp_a(b).unwrap());
            let q = mat_exp_a(a + b).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    // relative to the size of the factors, which bounds the cancellation
                    let scale = a.cosh() * b.cosh() * 2.0;
                    prop_assert!((p[i][j] - q[i][j]).abs() <= 1e-12 * scale);
                }
            }
        }

        #[test]
        fn psi_round_trip(y in 1e-3f64..10.0, r in 0.0f64..0.99) {
            let x = r * y;
            let (l, d) = psi_forward(x, y).unwrap();
            let (x2, y2) = psi_inverse(l, d).unwrap();
            prop_assert!((x2 - x).abs() <= 1e-12 * y);
            prop_assert!((y2 - y).abs() <= 1e-12 * y);
        }

        #[test]
        fn hyperbola_identity(l in 1e-3f64..10.0, d in 0.0f64..5.0) {
            let (x, y) = psi_inverse(l, d).unwrap();
            prop_assert!(x >= 0.0 && x < y);
            prop_assert!(((y * y - x * x) - l * l).abs() <= 1e-12 * y * y);
        }
    }

    #[test]
    fn exact_backend_constant_inputs() {
        let zero = PiecewisePath::constant(Time::ZERO, Time::ONE, 0.0).unwrap();
        let z0 = ReflectedState::new(0.0, 1.0);
        let tr = solve_exact_piecewise(&zero, &zero, z0, (Time::ZERO, Time::ONE), ExactOptions { refine: 4 }).unwrap();
        assert!(tr.states.iter().all(|s| *s == z0));
        assert_eq!(tr.len(), 5);
    }

    #[test]
    fn exact_backend_single_tooth_and_jump() {
        // λ falls by ln 2 then rises by ln 2; γ jumps by 0.6 at the end.
        let d = 2f64.ln();
        let bps = vec![Time::ZERO, t(0.25), t(0.5), Time::ONE];
        let lambda = PiecewisePath::from_increments(bps, 0.0, vec![-d, d, 0.0], vec![]).unwrap();
        let gamma = PiecewisePath::jumps_only(Time::ZERO, Time::ONE, vec![(Time::ONE, 0.6)]).unwrap();
        let z0 = ReflectedState::new(0.0, 0.8);
        let tr = solve_exact_piecewise(&lambda, &gamma, z0, (Time::ZERO, Time::ONE), ExactOptions::default()).unwrap();
        let top = tr.state_at(t(0.5)).unwrap();
        assert!((top.x - 0.6).abs() < 1e-15 && (top.y - 1.0).abs() < 1e-15);
        let fin = tr.state_at(Time::ONE).unwrap();
        assert!(fin.x.abs() < 1e-15 && (fin.y - 1.0).abs() < 1e-15);
        // K picks up ℓ · ln 2 while δ is held at zero on the descent
        assert!((tr.state_at(t(0.25)).unwrap().k_accum - 0.8 * d).abs() < 1e-15);
    }

    #[test]
    fn exact_backend_mirrors_the_lower_wedge() {
        let lambda = PiecewisePath::from_increments(vec![Time::ZERO, Time::ONE], 0.0, vec![0.5], vec![]).unwrap();
        let gamma = PiecewisePath::constant(Time::ZERO, Time::ONE, 0.0).unwrap();
        let up = solve_exact_piecewise(
            &lambda,
            &gamma,
            ReflectedState::new(0.1, 1.0),
            (Time::ZERO, Time::ONE),
            ExactOptions::default(),
        )
        .unwrap();
        let neg = PiecewisePath::from_increments(vec![Time::ZERO, Time::ONE], 0.0, vec![-0.5], vec![]).unwrap();
        let down = solve_exact_piecewise(
            &neg,
            &gamma,
            ReflectedState::new(0.1, -1.0),
            (Time::ZERO, Time::ONE),
            ExactOptions::default(),
        )
        .unwrap();
        let (a, b) = (up.last().unwrap(), down.last().unwrap());
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, -b.y);
    }

    #[test]
    fn exact_backend_rejects_bad_inputs() {
        let lambda = PiecewisePath::from_slopes(vec![Time::ZERO, Time::ONE], &[1.0], 0.0).unwrap();
        let gamma = PiecewisePath::from_slopes(vec![Time::ZERO, Time::ONE], &[1.0], 0.0).unwrap();
        let span = (Time::ZERO, Time::ONE);
        let r = solve_exact_piecewise(&lambda, &gamma, ReflectedState::new(0.0, 1.0), span, ExactOptions::default());
        assert!(matches!(r, Err(Error::Backend(_))));
        let flat = PiecewisePath::constant(Time::ZERO, Time::ONE, 0.0).unwrap();
        let r = solve_exact_piecewise(&lambda, &flat, ReflectedState::new(2.0, 1.0), span, ExactOptions::default());
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn exact_backend_origin_stays_put_and_pushes_gamma() {
        let lambda =
            PiecewisePath::from_increments(vec![Time::ZERO, t(0.5), Time::ONE], 0.0, vec![0.3, 0.0], vec![]).unwrap();
        let gamma = PiecewisePath::from_increments(
            vec![Time::ZERO, t(0.5), Time::ONE],
            0.0,
            vec![0.0, 0.25],
            vec![(t(0.75), 0.5)],
        )
        .unwrap();
        let tr = solve_exact_piecewise(
            &lambda,
            &gamma,
            ReflectedState::origin(),
            (Time::ZERO, Time::ONE),
            ExactOptions::default(),
        )
        .unwrap();
        let fin = tr.last().unwrap();
        assert_eq!((fin.x, fin.y), (0.0, 0.0));
        assert!((fin.k_accum - 0.75).abs() < 1e-15);
    }

    #[test]
    fn euler_hyperbolic_trivial_inputs() {
        let zero = GridSignal::from_fn(0.0, 1.0 / 256.0, 256, |_| 0.0).unwrap();
        let tr = solve_euler_hyperbolic(&zero, 1.0, HyperbolicState::new(1.0, 0.0), &EulerOptions::default()).unwrap();
        assert!(tr.states.iter().all(|u| u.delta == 0.0 && u.ell == 1.0));

        let line = GridSignal::from_fn(0.0, 1.0 / 256.0, 256, |s| s).unwrap();
        let tr = solve_euler_hyperbolic(&line, 0.0, HyperbolicState::new(1.0, 0.0), &EulerOptions::default()).unwrap();
        for (i, u) in tr.states.iter().enumerate() {
            assert!((u.delta - line.values[i]).abs() < 1e-12);
            assert_eq!(u.ell, 1.0);
        }
    }

    #[test]
    fn euler_hyperbolic_zero_start_is_trivial_solution() {
        let line = GridSignal::from_fn(0.0, 0.25, 4, |s| s).unwrap();
        let tr = solve_euler_hyperbolic(&line, 1.0, HyperbolicState::new(0.0, 0.0), &EulerOptions::default()).unwrap();
        assert!(tr.states.iter().all(|u| u.ell == 0.0));
        assert_eq!(tr.last().unwrap().push, 1.0);
        let tiny = solve_euler_hyperbolic(&line, 1.0, HyperbolicState::new(1e-310, 0.0), &EulerOptions::default());
        assert!(matches!(tiny, Err(Error::Singularity(_))));
    }

    #[test]
    fn reflected_euler_pure_drift() {
        let zero = GridSignal::from_fn(0.0, 1.0 / 64.0, 64, |_| 0.0).unwrap();
        let gamma = PiecewisePath::from_slopes(vec![Time::ZERO, Time::ONE], &[2.0], 0.0).unwrap();
        let tr = solve_reflected_euler(&zero, &gamma, ReflectedState::new(1.0, 0.0)).unwrap();
        for (tt, z) in tr.times.iter().zip(&tr.states) {
            let s = tt.to_f64();
            assert!((z.x - (1.0 - 2.0 * s).max(0.0)).abs() < 1e-12);
            assert!((z.k_accum - (2.0 * s - 1.0).max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn reflected_euler_origin_is_trivial_solution() {
        let wiggle = GridSignal::from_fn(0.0, 1.0 / 128.0, 128, |s| (20.0 * s).sin()).unwrap();
        let gamma = PiecewisePath::from_slopes(vec![Time::ZERO, Time::ONE], &[1.0], 0.0).unwrap();
        let tr = solve_reflected_euler(&wiggle, &gamma, ReflectedState::origin()).unwrap();
        for (tt, z) in tr.times.iter().zip(&tr.states) {
            assert_eq!((z.x, z.y), (0.0, 0.0));
            assert!((z.k_accum - gamma.evaluate(*tt).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn reflected_euler_pushes_only_on_the_boundary() {
        let wiggle = GridSignal::from_fn(0.0, 1.0 / 512.0, 512, |s| (9.0 * s).sin() - s).unwrap();
        let gamma = PiecewisePath::from_slopes(vec![Time::ZERO, Time::ONE], &[1.0], 0.0).unwrap();
        let tr = solve_reflected_euler(&wiggle, &gamma, ReflectedState::new(0.2, 0.5)).unwrap();
        for w in tr.states.windows(2) {
            assert!(w[1].x >= 0.0);
            if w[1].k_accum > w[0].k_accum {
                assert_eq!(w[1].x, 0.0);
            }
        }
    }

    #[test]
    fn euler_backends_agree_on_interior_trajectories() {
        let mut errs = Vec::new();
        for n in [256usize, 512, 1024] {
            let lam = GridSignal::from_fn(0.0, 1.0 / n as f64, n, |s| 0.3 * (6.0 * s).sin()).unwrap();
            let gamma = PiecewisePath::from_slopes(vec![Time::ZERO, Time::ONE], &[0.2], 0.0).unwrap();
            let (x0, y0) = psi_inverse(1.0, 0.5).unwrap();
            let refl = solve_reflected_euler(&lam, &gamma, ReflectedState::new(x0, y0)).unwrap();
            let opts = EulerOptions { substeps: 1, ..EulerOptions::default() };
            let hyp = solve_euler_hyperbolic(&lam, 0.2, HyperbolicState::new(1.0, 0.5), &opts).unwrap();
            let hyp = hyp.to_reflected().unwrap();
            let e = refl
                .states
                .iter()
                .zip(&hyp.states)
                .map(|(a, b)| (a.x - b.x).abs().max((a.y - b.y).abs()))
                .fold(0.0, f64::max);
            errs.push(e);
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
        assert!(errs[2] < 0.01);
    }

    struct Line;
    impl DyadicSignal for Line {
        fn base_level(&self) -> u32 {
            6
        }
        fn roughness(&self) -> f64 {
            0.5
        }
        fn value(&mut self, level: u32, index: u64) -> f64 {
            index as f64 * 2f64.powi(-(level as i32))
        }
    }

    #[test]
    fn adaptive_scheme_refines_when_stiff() {
        let opts = AdaptiveOptions::default();
        let tr = solve_euler_hyperbolic_adaptive(&mut Line, 0.0, HyperbolicState::new(1.0, 0.0), &opts).unwrap();
        assert_eq!(tr.len(), 65);
        assert!((tr.last().unwrap().delta - 1.0).abs() < 1e-12);
        assert_eq!(tr.meta.steps_taken, Some(64));
        let tr = solve_euler_hyperbolic_adaptive(&mut Line, 1.0, HyperbolicState::new(0.05, 0.0), &opts).unwrap();
        assert_eq!(tr.len(), 65);
        assert!(tr.meta.steps_taken.unwrap() > 64);
        assert!(tr.states.windows(2).all(|w| w[1].ell >= w[0].ell));
    }

    #[test]
    fn trajectory_csv_layout() {
        let zero = PiecewisePath::constant(Time::ZERO, Time::ONE, 0.0).unwrap();
        let tr = solve_exact_piecewise(
            &zero,
            &zero,
            ReflectedState::new(0.0, 1.0),
            (Time::ZERO, Time::ONE),
            ExactOptions::default(),
        )
        .unwrap();
        assert_eq!(tr.to_csv(), "time,x,y,K\n0,0,1,0\n1,0,1,0\n");
    }
}
