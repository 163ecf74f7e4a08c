//! Explicit driving signals under which the reflected equation has many
//! solutions, each with the analytic data the dynamics can be checked
//! against.
//!
//! * [`build_thm1`]: an oscillating `λ` with a continuous `γ` pushing back
//!   to the axis after every tooth; [`reference_solution_thm1`] is the
//!   breakpoint table of the escaping solution family.
//! * [`build_prop1`]: the same mechanism for an arbitrary `λ` and a jump `γ`.
//! * [`build_thm2`]: an `ω`-shaped sawtooth for a non-Osgood modulus `ω`.
//! * [`build_fbm_drift`]: the time schedule and jump drift used with a
//!   fractional Brownian `λ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{flow_lambda, push_gamma, ReflectedState, Trajectory, TrajectoryMeta};
use crate::error::{Error, Result};
use crate::moduli::{
    osgood_classify, series_report, theta_omega, Classification, ModulusSpec, OsgoodOptions, SeriesFlag, SeriesReport,
};
use crate::signals::PiecewisePath;
use crate::time::Time;

/// Default truncation depth of the infinite constructions.
pub const DEFAULT_DEPTH: usize = 2000;

/// Decreasing times `1 = t_0 > t_1 > ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeSchedule {
    /// `t_k = 2^{-step k}`.
    Dyadic { step: u32 },
    /// Explicit list starting at `1`.
    Explicit { times: Vec<Time> },
}

impl Default for TimeSchedule {
    fn default() -> Self {
        TimeSchedule::Dyadic { step: 1 }
    }
}

impl TimeSchedule {
    /// `t_0, ..., t_n`.
    pub fn times(&self, n: usize) -> Result<Vec<Time>> {
        match self {
            TimeSchedule::Dyadic { step } => {
                if *step == 0 {
                    return Err(Error::config("dyadic schedule step must be positive"));
                }
                (0..=n)
                    .map(|k| {
                        let e = (k as u64) * (*step as u64);
                        i32::try_from(e)
                            .map(|e| Time::pow2(-e))
                            .map_err(|_| Error::config(format!("t_{k} = 2^-{e} is out of range")))
                    })
                    .collect()
            }
            TimeSchedule::Explicit { times } => {
                if times.len() < n + 1 {
                    return Err(Error::config(format!("schedule has {} times, need {}", times.len(), n + 1)));
                }
                if times[0] != Time::ONE {
                    return Err(Error::config("an explicit schedule must start at t_0 = 1"));
                }
                if times.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::config("schedule times must be strictly decreasing"));
                }
                if times[n].is_zero() && n > 0 {
                    return Err(Error::config("schedule times must stay positive"));
                }
                Ok(times[..=n].to_vec())
            }
        }
    }
}

/// Finite-depth evidence for the three series conditions on `δ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thm1Evidence {
    /// `Σ δ_k²`, should diverge.
    pub squares: SeriesReport,
    /// `Σ δ_k exp(-½ Σ_{j≤k} δ_j²)`, should converge.
    pub damped: SeriesReport,
    /// `Σ δ_k³`, a representative `p > 2`.
    pub cubes: SeriesReport,
    /// `Σ x_k`, the total variation of `γ`.
    pub gamma_variation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Thm1Construction {
    pub deltas: Vec<f64>,
    /// `t_0, ..., t_{3D}`.
    pub times: Vec<Time>,
    /// `y_0, ..., y_D`.
    pub ys: Vec<f64>,
    /// `x_0, ..., x_{D-1}`.
    pub xs: Vec<f64>,
    pub lambda: PiecewisePath,
    pub gamma: PiecewisePath,
    pub truncation_depth: usize,
    pub evidence: Thm1Evidence,
}

impl Thm1Construction {
    /// `t_{3k}`, where the escaping solutions touch the axis.
    pub fn axis_time(&self, k: usize) -> Time {
        self.times[3 * k]
    }

    /// Where the depth-`D` solution starts.
    pub fn start_time(&self) -> Time {
        self.times[3 * self.truncation_depth]
    }
}

/// `δ_k = C (k+1)^{-1/2}` on the given schedule.
pub fn build_thm1(c: f64, schedule: &TimeSchedule, depth: usize) -> Result<Thm1Construction> {
    if !(c > 1.0) || !c.is_finite() {
        return Err(Error::config(format!("C must exceed 1, got {c}")));
    }
    if depth == 0 {
        return Err(Error::config("depth must be at least 1"));
    }
    let deltas: Vec<f64> = (0..depth).map(|k| c / ((k + 1) as f64).sqrt()).collect();
    build_thm1_from_deltas(&deltas, schedule, 1.0)
}

/// The same construction for arbitrary nonnegative `δ_k` and `y_0`.
pub fn build_thm1_from_deltas(deltas: &[f64], schedule: &TimeSchedule, y0: f64) -> Result<Thm1Construction> {
    let depth = deltas.len();
    if depth == 0 {
        return Err(Error::config("depth must be at least 1"));
    }
    if let Some((k, d)) = deltas.iter().enumerate().find(|(_, d)| !(**d >= 0.0 && d.is_finite())) {
        return Err(Error::config(format!("δ_{k} = {d} must be finite and nonnegative")));
    }
    if !(y0 > 0.0 && y0.is_finite()) {
        return Err(Error::config(format!("y_0 must be positive, got {y0}")));
    }
    let times = schedule.times(3 * depth)?;

    let mut ys = Vec::with_capacity(depth + 1);
    let mut xs = Vec::with_capacity(depth);
    ys.push(y0);
    for (k, &d) in deltas.iter().enumerate() {
        let next = ys[k] / d.cosh();
        ys.push(next);
        xs.push(d.sinh() * next);
    }

    // Ascending breakpoints: the segment [t_{i+1}, t_i] sits at position
    // 3D - 1 - i, preceded by a flat piece on [0, t_{3D}].
    let mut bps: Vec<Time> = times.iter().rev().copied().collect();
    let mut dl = Vec::with_capacity(3 * depth + 1);
    let mut dg = Vec::with_capacity(3 * depth + 1);
    if !bps[0].is_zero() {
        bps.insert(0, Time::ZERO);
        dl.push(0.0);
        dg.push(0.0);
    }
    for i in (0..3 * depth).rev() {
        let k = i / 3;
        match i % 3 {
            2 => {
                dl.push(-deltas[k]);
                dg.push(0.0);
            }
            1 => {
                dl.push(deltas[k]);
                dg.push(0.0);
            }
            _ => {
                dl.push(0.0);
                dg.push(xs[k]);
            }
        }
    }
    let lambda = PiecewisePath::from_increments(bps.clone(), 0.0, dl, vec![])?;
    let gamma = PiecewisePath::from_increments(bps, 0.0, dg, vec![])?;

    let mut acc = 0.0;
    let damped = deltas.iter().map(|&d| {
        acc += d * d;
        d * (-0.5 * acc).exp()
    });
    let evidence = Thm1Evidence {
        squares: series_report("squares", deltas.iter().map(|d| d * d)),
        damped: series_report("damped", damped),
        cubes: series_report("cubes", deltas.iter().map(|d| d.powi(3))),
        gamma_variation: xs.iter().sum(),
    };
    Ok(Thm1Construction { deltas: deltas.to_vec(), times, ys, xs, lambda, gamma, truncation_depth: depth, evidence })
}

/// Breakpoint table of the solution started at `(0, η y_D)` at `t_{3D}`.
///
/// The table is produced by the same kernels the exact backend applies,
/// segment by segment from the bottom of the schedule up, so it is the
/// floating-point ground truth for that backend. Rows are ascending in time.
pub fn reference_solution_thm1(c: &Thm1Construction, eta: f64) -> Result<Trajectory<ReflectedState>> {
    check_eta(eta)?;
    let d = c.truncation_depth;
    let mut traj = Trajectory {
        times: Vec::with_capacity(3 * d + 1),
        states: Vec::with_capacity(3 * d + 1),
        meta: TrajectoryMeta { backend: "reference".into(), truncation_depth: Some(d), ..Default::default() },
    };
    let mut z = ReflectedState::new(0.0, eta * c.ys[d]);
    traj.times.push(c.times[3 * d]);
    traj.states.push(z);
    for j in (0..d).rev() {
        z = flow_lambda(z, -c.deltas[j])?;
        traj.times.push(c.times[3 * j + 2]);
        traj.states.push(z);
        z = flow_lambda(z, c.deltas[j])?;
        traj.times.push(c.times[3 * j + 1]);
        traj.states.push(z);
        z = push_gamma(z, c.xs[j]);
        traj.times.push(c.times[3 * j]);
        traj.states.push(z);
    }
    Ok(traj)
}

/// The same table from the closed-form values `(η x_j, η y_j)`.
///
/// `K` collects `η y_{j+1} δ_j` on every descending tooth and the excess
/// `(1 - η) x_j` of each push of `γ` past the axis.
pub fn analytic_table_thm1(c: &Thm1Construction, eta: f64) -> Result<Trajectory<ReflectedState>> {
    check_eta(eta)?;
    let d = c.truncation_depth;
    let mut traj = Trajectory {
        times: Vec::with_capacity(3 * d + 1),
        states: Vec::with_capacity(3 * d + 1),
        meta: TrajectoryMeta { backend: "analytic".into(), truncation_depth: Some(d), ..Default::default() },
    };
    let mut k_accum = 0.0;
    let row = |x: f64, y: f64, k: f64| ReflectedState { x: eta * x, y: eta * y, k_accum: k };
    traj.times.push(c.times[3 * d]);
    traj.states.push(row(0.0, c.ys[d], 0.0));
    for j in (0..d).rev() {
        k_accum += eta * c.ys[j + 1] * c.deltas[j];
        traj.times.push(c.times[3 * j + 2]);
        traj.states.push(row(0.0, c.ys[j + 1], k_accum));
        traj.times.push(c.times[3 * j + 1]);
        traj.states.push(row(c.xs[j], c.ys[j], k_accum));
        k_accum += (1.0 - eta) * c.xs[j];
        traj.times.push(c.times[3 * j]);
        traj.states.push(row(0.0, c.ys[j], k_accum));
    }
    Ok(traj)
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::config(format!("η must lie in [0, 1], got {eta}")));
    }
    Ok(())
}

/// A jump `γ` making `λ` admit a family of escaping solutions.
#[derive(Clone, Debug, PartialEq)]
pub struct Prop1Construction {
    /// `s_0 = 1 > s_1 > ... > s_n`.
    pub times: Vec<Time>,
    /// `δ_k = λ(s_k) - min_{[s_{k+1}, s_k]} λ`.
    pub deltas: Vec<f64>,
    /// `δ_k Π_{j≤k} cosh(δ_j)^{-1}`.
    pub bounds: Vec<f64>,
    pub xs: Vec<f64>,
    /// Jumps of size `x_k` at `s_k`.
    pub gamma: PiecewisePath,
    pub squares: SeriesReport,
    pub damped: SeriesReport,
    pub xs_report: SeriesReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Rejection {
    /// `x_lower_bound`, `infinite_2_variation`, `damped_summable` or `xs_summable`.
    pub condition: String,
    pub index: Option<usize>,
    pub detail: String,
    pub deltas: Vec<f64>,
    pub sum_squares: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prop1Outcome {
    Accepted(Box<Prop1Construction>),
    Rejected(Prop1Rejection),
}

impl Prop1Outcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Prop1Outcome::Accepted(_))
    }
}

/// Checks the jump sizes `xs` against the oscillations of `λ` on `schedule`.
///
/// `xs[k]` is the jump at `s_k`, `k < n`; the bound comparison is exact.
/// The series conditions are judged from the dyadic tail of the computed
/// prefix.
pub fn build_prop1(lambda: &PiecewisePath, schedule: &[Time], xs: &[f64]) -> Result<Prop1Outcome> {
    if lambda.has_jumps() {
        return Err(Error::domain("λ must be continuous"));
    }
    if schedule.len() < 2 {
        return Err(Error::config("the schedule needs at least two times"));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("schedule times must be strictly decreasing"));
    }
    let n = schedule.len() - 1;
    if xs.len() != n {
        return Err(Error::config(format!("need {n} jump sizes, got {}", xs.len())));
    }
    if let Some((k, x)) = xs.iter().enumerate().find(|(_, x)| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::config(format!("x_{k} = {x} must be finite and nonnegative")));
    }
    let mut deltas = Vec::with_capacity(n);
    for k in 0..n {
        let m = lambda.running_min(schedule[k + 1], schedule[k])?;
        deltas.push(lambda.evaluate(schedule[k])? - m);
    }
    let mut bounds = Vec::with_capacity(n);
    let mut prod = 1.0;
    for &d in &deltas {
        prod /= d.cosh();
        bounds.push(d * prod);
    }
    let sum_squares: f64 = deltas.iter().map(|d| d * d).sum();
    let reject = |condition: &str, index: Option<usize>, detail: String| {
        Ok(Prop1Outcome::Rejected(Prop1Rejection {
            condition: condition.into(),
            index,
            detail,
            deltas: deltas.clone(),
            sum_squares,
        }))
    };

    if let Some(k) = (0..n).find(|&k| xs[k] < bounds[k]) {
        return reject("x_lower_bound", Some(k), format!("x_{k} = {} < {}", xs[k], bounds[k]));
    }
    let squares = series_report("squares", deltas.iter().map(|d| d * d));
    if sum_squares == 0.0 || squares.flag == SeriesFlag::Convergent {
        return reject("infinite_2_variation", None, format!("Σ δ² = {sum_squares} reads as convergent"));
    }
    let mut acc = 0.0;
    let damped = series_report(
        "damped",
        deltas.iter().map(|&d| {
            acc += d * d;
            d * (-0.5 * acc).exp()
        }),
    );
    if damped.flag == SeriesFlag::Divergent {
        return reject("damped_summable", None, format!("damped series total {} reads as divergent", damped.total));
    }
    let xs_report = series_report("xs", xs.iter().copied());
    if xs_report.flag == SeriesFlag::Divergent {
        return reject("xs_summable", None, format!("Σ x_k = {} reads as divergent", xs_report.total));
    }

    let jumps: Vec<(Time, f64)> =
        (0..n).filter(|&k| xs[k] > 0.0 && schedule[k] > lambda.start()).map(|k| (schedule[k], xs[k])).collect();
    let gamma = PiecewisePath::jumps_only(lambda.start(), lambda.end(), jumps)?;
    Ok(Prop1Outcome::Accepted(Box::new(Prop1Construction {
        times: schedule.to_vec(),
        deltas,
        bounds,
        xs: xs.to_vec(),
        gamma,
        squares,
        damped,
        xs_report,
    })))
}

/// Settings of [`build_thm2`]; `None` selects automatically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thm2Options {
    pub k_const: Option<f64>,
    pub eps0: Option<f64>,
    pub depth: usize,
    /// Interpolation nodes per half tooth, at quadratic spacing.
    pub nodes_per_half: usize,
    pub membership_pairs: usize,
    pub seed: u64,
}

impl Default for Thm2Options {
    fn default() -> Self {
        Self { k_const: None, eps0: None, depth: DEFAULT_DEPTH, nodes_per_half: 8, membership_pairs: 10_000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Thm2Construction {
    pub omega: ModulusSpec,
    pub k_const: f64,
    /// `ε_0, ..., ε_D`.
    pub eps: Vec<f64>,
    /// `η_k = θ(ε_k) ε_k` for `k = 0..=D`; `η_0` only sets the scale.
    pub eta: Vec<f64>,
    /// `t_0, ..., t_D` with `t_D = 0` and `t_k - t_{k+1} = 2 η_{k+1}`.
    pub times: Vec<f64>,
    pub lambda: PiecewisePath,
    /// `ε θ(ε)² / ∫_0^{εθ(ε)} (ω(r) - 2r/ε)_+ dr` at every `ε_k`: the
    /// inequality needs this at most `K`.
    pub required_k: Vec<f64>,
    /// Root-finder iterations per step.
    pub root_iterations: Vec<u32>,
    /// `Σ_{k=1}^{D} η_k`.
    pub eta_sum: f64,
    /// Bound `2K ∫_0^{ε_D} dx / θ(x)` on the truncated tail.
    pub eta_tail_bound: f64,
    /// First `k_0` from which `ε_{k+1} + η_{k+1} θ(ε_{k+1}) / K >= ε_k` holds
    /// to the truncation depth.
    pub chain_k0: Option<usize>,
    /// Largest `|λ(t) - λ(s)| / ω(|t - s|)` over the sampled pairs.
    pub membership_ratio: f64,
    pub notes: Vec<String>,
}

impl Thm2Construction {
    pub fn depth(&self) -> usize {
        self.eps.len() - 1
    }
}

const K_STEPS: usize = 50;
const ROOT_TOL: f64 = 1e-12;

/// Sawtooth built from `ω` so that the reflected equation escapes from the
/// origin.
///
/// Refuses moduli satisfying Osgood's condition. `K` defaults to the
/// smallest power of two meeting the quadrature inequality over the first
/// 50 steps, and `ε_0` to the largest `2^{-m}/4` with `2K ∫_0^{ε_0} dx/θ ≤ ½`,
/// which bounds `Σ η_k` by `½`.
pub fn build_thm2(omega: &ModulusSpec, opts: &Thm2Options) -> Result<Thm2Construction> {
    omega.validate()?;
    if opts.depth == 0 {
        return Err(Error::config("depth must be at least 1"));
    }
    if opts.nodes_per_half == 0 {
        return Err(Error::config("nodes_per_half must be at least 1"));
    }
    if let Some(k) = opts.k_const {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::config(format!("K must be positive, got {k}")));
        }
    }
    if let Some(e) = opts.eps0 {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::config(format!("ε_0 must lie in (0, 1), got {e}")));
        }
    }
    let verdict = osgood_classify(omega, &OsgoodOptions::default())?;
    match verdict.classification {
        Classification::NonUnique => {}
        Classification::Unique => {
            return Err(Error::Refused(format!(
                "{} satisfies Osgood's condition, so the solution from the origin is unique",
                omega.family()
            )))
        }
        Classification::Inconclusive => {
            return Err(Error::Refused(format!("{}: the Osgood test is inconclusive", omega.family())))
        }
    }
    let theta = |e: f64| theta_omega(omega, e);

    let mut notes = Vec::new();
    let mut k_const = opts.k_const.unwrap_or(1.0);
    let mut eps0 = opts.eps0.unwrap_or(0.25);
    for _ in 0..16 {
        if opts.eps0.is_none() {
            eps0 = reanchor(&theta, k_const)?;
        }
        if opts.k_const.is_some() {
            break;
        }
        let (eps, _) = eps_sequence(&theta, eps0, k_const, K_STEPS.min(opts.depth))?;
        let mut need: f64 = 0.0;
        for (k, &e) in eps.iter().enumerate() {
            need = need.max(required_k(omega, e, theta(e)?, k)?);
        }
        let next = 2f64.powi(need.log2().ceil().max(0.0) as i32);
        if next == k_const {
            break;
        }
        k_const = next;
    }
    notes.push(format!("K = {k_const}, ε_0 = {eps0:e}"));

    let (eps, root_iterations) = eps_sequence(&theta, eps0, k_const, opts.depth)?;
    let thetas: Vec<f64> = eps.iter().map(|&e| theta(e)).collect::<Result<_>>()?;
    let mut req = Vec::with_capacity(eps.len());
    for (k, (&e, &th)) in eps.iter().zip(&thetas).enumerate() {
        let r = required_k(omega, e, th, k)?;
        if r > k_const {
            return Err(Error::Construction {
                step: k,
                reason: format!("the quadrature inequality needs K >= {r}, have {k_const}"),
            });
        }
        req.push(r);
    }
    let eta: Vec<f64> = eps.iter().zip(&thetas).map(|(e, t)| e * t).collect();
    let d = opts.depth;
    let mut times = vec![0.0; d + 1];
    for k in (0..d).rev() {
        times[k] = times[k + 1] + 2.0 * eta[k + 1];
    }
    let eta_sum: f64 = eta[1..].iter().sum();
    let eta_tail_bound = 2.0 * k_const * inverse_theta_integral(&theta, eps[d])?;
    if eta_sum + eta_tail_bound > 0.5 {
        return Err(Error::Construction {
            step: d,
            reason: format!("Σ η = {eta_sum} with tail bound {eta_tail_bound} exceeds 1/2"),
        });
    }
    let chain_ok: Vec<bool> = (0..d).map(|k| eps[k + 1] + eta[k + 1] * thetas[k + 1] / k_const >= eps[k]).collect();
    let chain_k0 = match chain_ok.iter().rposition(|ok| !ok) {
        None => Some(0),
        Some(i) if i + 1 < d => Some(i + 1),
        Some(_) => None,
    };

    let lambda = sawtooth(omega, &times, &eta, opts.nodes_per_half)?;
    let membership_ratio = membership(omega, &lambda, times[0], eta[d], opts.membership_pairs, opts.seed)?;
    if membership_ratio > 1.0 + 1e-9 {
        return Err(Error::Construction {
            step: d,
            reason: format!("sawtooth leaves the modulus class: ratio {membership_ratio}"),
        });
    }
    Ok(Thm2Construction {
        omega: omega.clone(),
        k_const,
        eps,
        eta,
        times,
        lambda,
        required_k: req,
        root_iterations,
        eta_sum,
        eta_tail_bound,
        chain_k0,
        membership_ratio,
        notes,
    })
}

/// `ε_0, ..., ε_n` with root-finder iteration counts.
fn eps_sequence(
    theta: &impl Fn(f64) -> Result<f64>,
    eps0: f64,
    k_const: f64,
    n: usize,
) -> Result<(Vec<f64>, Vec<u32>)> {
    let mut eps = Vec::with_capacity(n + 1);
    let mut iters = Vec::with_capacity(n);
    eps.push(eps0);
    for k in 0..n {
        let e = eps[k];
        let c = theta(e)? / (2.0 * k_const);
        let (next, it) = solve_step(theta, e, c).map_err(|reason| Error::Construction { step: k, reason })?;
        if !(next < e && next > 0.0) {
            return Err(Error::Construction { step: k, reason: format!("ε_{} = {next} does not decrease", k + 1) });
        }
        eps.push(next);
        iters.push(it);
    }
    Ok((eps, iters))
}

/// Root of `x + c θ(x) x = ε` in `(0, ε)`: secant iterates kept inside a
/// bracket, bisecting whenever a secant step leaves it.
fn solve_step(theta: &impl Fn(f64) -> Result<f64>, e: f64, c: f64) -> std::result::Result<(f64, u32), String> {
    let f = |x: f64| -> std::result::Result<f64, String> {
        let th = theta(x).map_err(|err| err.to_string())?;
        Ok(x + c * th * x - e)
    };
    let (mut lo, mut hi): (f64, f64) = (0.0, e);
    let mut x0 = e;
    let mut f0 = f(x0)?;
    let mut x1 = e / (1.0 + c * theta(e).map_err(|err| err.to_string())?);
    let mut f1 = f(x1)?;
    for it in 1..=200u32 {
        if f1 == 0.0 {
            return Ok((x1, it));
        }
        if f1 < 0.0 {
            lo = lo.max(x1);
        } else {
            hi = hi.min(x1);
        }
        let secant = x1 - f1 * (x1 - x0) / (f1 - f0);
        let x2 = if secant.is_finite() && secant > lo && secant < hi { secant } else { 0.5 * (lo + hi) };
        if (x2 - x1).abs() <= ROOT_TOL * x2 {
            return Ok((x2, it));
        }
        x0 = x1;
        f0 = f1;
        x1 = x2;
        f1 = f(x1)?;
    }
    Err(format!("root finder did not converge near ε = {e}"))
}

/// `ε θ² / ∫_0^{εθ} (ω(r) - 2r/ε)_+ dr`.
fn required_k(omega: &ModulusSpec, e: f64, th: f64, step: usize) -> Result<f64> {
    let upper = e * th;
    let q = positive_part_integral(omega, e, upper);
    if !(q > 0.0) {
        return Err(Error::Construction { step, reason: format!("the quadrature integral vanishes at ε = {e:e}") });
    }
    Ok(e * th * th / q)
}

/// Composite Simpson over the geometric pieces `[u 2^{-i-1}, u 2^{-i}]`.
fn positive_part_integral(omega: &ModulusSpec, e: f64, upper: f64) -> f64 {
    let g = |r: f64| (omega.eval(r) - 2.0 * r / e).max(0.0);
    let mut total = 0.0;
    let mut b = upper;
    for _ in 0..200 {
        let a = 0.5 * b;
        let piece = simpson(&g, a, b, 8);
        total += piece;
        b = a;
        if piece <= 1e-17 * total {
            break;
        }
    }
    total + 0.5 * b * g(b)
}

fn simpson(g: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = g(a) + g(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * g(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `∫_0^ε dx / θ(x)`, with a geometric extrapolation of the last pieces;
/// infinite when the pieces stop shrinking.
fn inverse_theta_integral(theta: &impl Fn(f64) -> Result<f64>, e: f64) -> Result<f64> {
    let inv = |x: f64| -> f64 {
        match theta(x) {
            Ok(t) if t > 0.0 => 1.0 / t,
            _ => f64::INFINITY,
        }
    };
    let mut total = 0.0;
    let mut b = e;
    let mut prev = f64::INFINITY;
    let mut ratio = 1.0;
    while b > 1e-290 {
        let a = 0.5 * b;
        let piece = simpson(&inv, a, b, 8);
        if !piece.is_finite() {
            return Ok(f64::INFINITY);
        }
        total += piece;
        ratio = piece / prev;
        prev = piece;
        b = a;
        if piece <= 1e-17 * total && ratio < 1.0 {
            return Ok(total);
        }
    }
    if ratio < 1.0 {
        Ok(total + prev * ratio / (1.0 - ratio))
    } else {
        Ok(f64::INFINITY)
    }
}

fn reanchor(theta: &impl Fn(f64) -> Result<f64>, k_const: f64) -> Result<f64> {
    let mut e: f64 = 0.25;
    while e > 1e-280 {
        if 2.0 * k_const * inverse_theta_integral(theta, e)? <= 0.5 {
            return Ok(e);
        }
        e *= 0.5;
    }
    Err(Error::Construction { step: 0, reason: "no representable ε_0 keeps Σ η below 1/2".into() })
}

/// Teeth `λ(t_{k+1} + r) = ω(r)`, `λ(t_k - r) = ω(r)`, `r ∈ [0, η_{k+1}]`,
/// interpolated at `r_i = η (i/m)²`, then zero on `[t_0, 1]`.
fn sawtooth(omega: &ModulusSpec, times: &[f64], eta: &[f64], m: usize) -> Result<PiecewisePath> {
    let d = times.len() - 1;
    let mut bps = Vec::with_capacity(2 * m * d + 2);
    let mut vals = Vec::with_capacity(2 * m * d + 2);
    for k in (0..d).rev() {
        let (a, b, h) = (times[k + 1], times[k], eta[k + 1]);
        for i in 0..m {
            let r = h * (i as f64 / m as f64).powi(2);
            bps.push(a + r);
            vals.push(omega.eval(r));
        }
        bps.push(a + h);
        vals.push(omega.eval(h));
        for i in (1..m).rev() {
            let r = h * (i as f64 / m as f64).powi(2);
            bps.push(b - r);
            vals.push(omega.eval(r));
        }
    }
    bps.push(times[0]);
    vals.push(0.0);
    if times[0] < 1.0 {
        bps.push(1.0);
        vals.push(0.0);
    }
    if let Some(i) = bps.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(Error::Construction {
            step: i / (2 * m),
            reason: "tooth nodes collapse in double precision".into(),
        });
    }
    let bps: Vec<Time> = bps.into_iter().map(Time::from_f64).collect::<Result<_>>()?;
    PiecewisePath::new(bps, vals, vec![])
}

/// Largest `|λ(t) - λ(s)| / ω(|t - s|)` over random pairs with
/// log-uniform separations between the smallest tooth and the whole span.
fn membership(
    omega: &ModulusSpec,
    lambda: &PiecewisePath,
    span: f64,
    min_eta: f64,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = (min_eta * 1e-3).ln();
    let hi = span.ln();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let gap = rng.random_range(lo..hi).exp().min(span);
        let s = rng.random_range(0.0..=span - gap);
        let t = (s + gap).min(span);
        let w = omega.eval(t - s);
        if w <= 0.0 {
            continue;
        }
        let dv = (lambda.evaluate(Time::from_f64(t)?)? - lambda.evaluate(Time::from_f64(s)?)?).abs();
        worst = worst.max(dv / w);
    }
    Ok(worst)
}

/// Time schedule and jump drift for a fractional Brownian `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FbmDriftSchedule {
    pub hurst: f64,
    pub alpha: f64,
    pub theta: f64,
    /// `t_0 = 1 > ... > t_D`, with `t_k - t_{k+1} = (k+1)^{-α} / ζ(α)`.
    pub times: Vec<f64>,
    /// `x_k = exp(-k^θ)`.
    pub xs: Vec<f64>,
    /// Jumps `x_k` at `t_k`, `k < D`, on `[0, 1]`.
    pub gamma: PiecewisePath,
    pub xs_partial_sum: f64,
}

impl FbmDriftSchedule {
    pub fn depth(&self) -> usize {
        self.times.len() - 1
    }

    /// The schedule with `per_interval - 1` equally spaced points added
    /// inside each `[t_{k+1}, t_k]`, ascending.
    pub fn refined_times(&self, per_interval: usize) -> Vec<f64> {
        let n = per_interval.max(1);
        let mut out = Vec::with_capacity(self.depth() * n + 1);
        for k in (0..self.depth()).rev() {
            let (a, b) = (self.times[k + 1], self.times[k]);
            for i in 0..n {
                out.push(a + (b - a) * i as f64 / n as f64);
            }
        }
        out.push(self.times[0]);
        out
    }
}

pub fn build_fbm_drift(hurst: f64, alpha: f64, theta: f64, depth: usize) -> Result<FbmDriftSchedule> {
    if !(hurst > 0.0 && hurst < 0.5) {
        return Err(Error::config(format!("need 0 < H < 1/2, got H = {hurst}")));
    }
    let lower = (5.0 / (12.0 * hurst)).max(1.0);
    if !(alpha > lower) {
        return Err(Error::config(format!("need α > max(5/(12H), 1) = {lower}, got α = {alpha}")));
    }
    if !(alpha < 1.0 / (2.0 * hurst)) {
        return Err(Error::config(format!("need α < 1/(2H) = {}, got α = {alpha}", 1.0 / (2.0 * hurst))));
    }
    if !(theta > 0.0) {
        return Err(Error::config(format!("need θ > 0, got θ = {theta}")));
    }
    if !(theta < 1.0 - 2.0 * alpha * hurst) {
        return Err(Error::config(format!("need θ < 1 - 2αH = {}, got θ = {theta}", 1.0 - 2.0 * alpha * hurst)));
    }
    if depth == 0 {
        return Err(Error::config("depth must be at least 1"));
    }
    let zeta = hurwitz_zeta(alpha, 1.0);
    let times: Vec<f64> = (0..=depth).map(|k| hurwitz_zeta(alpha, (k + 1) as f64) / zeta).collect();
    let xs: Vec<f64> = (0..=depth).map(|k| (-(k as f64).powf(theta)).exp()).collect();
    let jumps: Vec<(Time, f64)> =
        (0..depth).rev().map(|k| Ok((Time::from_f64(times[k])?, xs[k]))).collect::<Result<_>>()?;
    let gamma = PiecewisePath::jumps_only(Time::ZERO, Time::ONE, jumps)?;
    let xs_partial_sum = xs.iter().sum();
    Ok(FbmDriftSchedule { hurst, alpha, theta, times, xs, gamma, xs_partial_sum })
}

/// `Σ_{n≥0} (n + a)^{-s}` for `s > 1`, `a > 0`, by Euler-Maclaurin after
/// 16 direct terms.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    const N: usize = 16;
    // B_2 / 2!, B_4 / 4!, ...
    const B: [f64; 5] = [1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0, -1.0 / 1209600.0, 1.0 / 47900160.0];
    let mut sum: f64 = (0..N).map(|n| (n as f64 + a).powf(-s)).sum();
    let x = a + N as f64;
    sum += x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    // Derivative factor s (s+1) ... (s + 2j - 2) times x^{-s-2j+1}.
    let mut fac = s;
    let mut pw = x.powf(-s - 1.0);
    for (j, b) in B.iter().enumerate() {
        sum += b * fac * pw;
        let m = 2.0 * j as f64;
        fac *= (s + m + 1.0) * (s + m + 2.0);
        pw /= x * x;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{solve_exact_piecewise, ExactOptions};

    #[test]
    fn forced_ln2_step() {
        let c = build_thm1_from_deltas(&[2f64.ln()], &TimeSchedule::default(), 1.0).unwrap();
        assert!((c.ys[1] - 0.8).abs() < 1e-15);
        assert!((c.xs[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn zero_deltas_are_degenerate() {
        let c = build_thm1_from_deltas(&[0.0; 10], &TimeSchedule::default(), 1.0).unwrap();
        assert!(c.ys.iter().all(|&y| y == 1.0));
        assert!(c.xs.iter().all(|&x| x == 0.0));
        assert!(c.gamma.node_values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn rejects_small_c() {
        assert!(matches!(build_thm1(1.0, &TimeSchedule::default(), 5), Err(Error::Config(_))));
        assert!(matches!(build_thm1(1.5, &TimeSchedule::default(), 0), Err(Error::Config(_))));
    }

    #[test]
    fn increments_follow_the_triples() {
        let c = build_thm1(1.5, &TimeSchedule::default(), 4).unwrap();
        for k in 0..4 {
            let t = |i: usize| c.times[i];
            let dl = |a, b| c.lambda.continuous_increment(t(a), t(b)).unwrap();
            let dg = |a, b| c.gamma.continuous_increment(t(a), t(b)).unwrap();
            assert_eq!(dl(3 * k + 3, 3 * k + 2), -c.deltas[k]);
            assert_eq!(dl(3 * k + 2, 3 * k + 1), c.deltas[k]);
            assert_eq!(dl(3 * k + 1, 3 * k), 0.0);
            assert_eq!(dg(3 * k + 3, 3 * k + 1), 0.0);
            assert_eq!(dg(3 * k + 1, 3 * k), c.xs[k]);
        }
        assert_eq!(c.lambda.start(), Time::ZERO);
        assert_eq!(c.lambda.end(), Time::ONE);
    }

    #[test]
    fn evidence_flags_at_depth_2000() {
        let c = build_thm1(1.5, &TimeSchedule::default(), 2000).unwrap();
        let e = &c.evidence;
        assert_eq!(e.squares.flag, SeriesFlag::Divergent);
        assert_eq!(e.damped.flag, SeriesFlag::Convergent);
        assert_eq!(e.cubes.flag, SeriesFlag::Convergent);
        // Σ_{k<2000} 2.25 / (k+1) is 2.25 times the harmonic number.
        let harmonic: f64 = (1..=2000).map(|k| 1.0 / k as f64).sum();
        assert!((e.squares.total - 2.25 * harmonic).abs() < 1e-9);
        // x_k ~ 1.5 k^{-1.625}: the dyadic blocks of Σ x_k shrink.
        let b = &series_report("xs", c.xs.iter().copied()).block_sums;
        assert!(b.windows(2).skip(3).all(|w| w[1] < w[0]));
    }

    #[test]
    fn reference_matches_exact_backend() {
        let c = build_thm1(1.5, &TimeSchedule::default(), 60).unwrap();
        let z0 = ReflectedState::new(0.0, c.ys[60]);
        let traj = solve_exact_piecewise(&c.lambda, &c.gamma, z0, (c.start_time(), Time::ONE), ExactOptions::default())
            .unwrap();
        let reference = reference_solution_thm1(&c, 1.0).unwrap();
        for (t, z) in reference.times.iter().zip(&reference.states) {
            assert_eq!(traj.state_at(*t), Some(z));
        }
    }

    #[test]
    fn reference_agrees_with_closed_form() {
        let c = build_thm1(1.5, &TimeSchedule::default(), 200).unwrap();
        let a = reference_solution_thm1(&c, 1.0).unwrap();
        let b = analytic_table_thm1(&c, 1.0).unwrap();
        assert_eq!(a.times, b.times);
        for (p, q) in a.states.iter().zip(&b.states) {
            assert!((p.x - q.x).abs() <= 1e-12 && (p.y - q.y).abs() <= 1e-12);
            assert!((p.k_accum - q.k_accum).abs() <= 1e-10);
        }
        for j in 0..=200 {
            assert!((b.state_at(c.axis_time(j)).unwrap().y - c.ys[j]).abs() == 0.0);
        }
    }

    #[test]
    fn reference_scales_linearly() {
        let c = build_thm1(1.5, &TimeSchedule::default(), 100).unwrap();
        let zero = reference_solution_thm1(&c, 0.0).unwrap();
        assert!(zero.states.iter().all(|z| z.x == 0.0 && z.y == 0.0));
        // The trivial solution absorbs all of γ into K.
        assert!((zero.last().unwrap().k_accum - c.xs.iter().sum::<f64>()).abs() < 1e-12);
        let one = reference_solution_thm1(&c, 1.0).unwrap();
        let half = reference_solution_thm1(&c, 0.5).unwrap();
        for (h, o) in half.states.iter().zip(&one.states) {
            assert_eq!((h.x, h.y), (0.5 * o.x, 0.5 * o.y));
        }
        let analytic = analytic_table_thm1(&c, 0.5).unwrap();
        for (h, a) in half.states.iter().zip(&analytic.states) {
            assert!((h.k_accum - a.k_accum).abs() < 1e-12);
        }
        assert!(reference_solution_thm1(&c, 1.5).is_err());
    }

    #[test]
    fn prop1_round_trip() {
        let c = build_thm1(1.5, &TimeSchedule::default(), 500).unwrap();
        let sched: Vec<Time> = (0..=500).map(|k| c.axis_time(k)).collect();
        let out = build_prop1(&c.lambda, &sched, &c.xs).unwrap();
        let Prop1Outcome::Accepted(p) = out else { panic!("rejected: {out:?}") };
        for (d, e) in p.deltas.iter().zip(&c.deltas) {
            assert!((d - e).abs() <= 1e-14, "{d} vs {e}");
        }
        assert_eq!(p.gamma.jumps().len(), 500);
    }

    #[test]
    fn prop1_rejects_flat_lambda() {
        let flat = PiecewisePath::constant(Time::ZERO, Time::ONE, 0.0).unwrap();
        let sched: Vec<Time> = (0..=20).map(|k| Time::pow2(-k)).collect();
        match build_prop1(&flat, &sched, &[0.1; 20]).unwrap() {
            Prop1Outcome::Rejected(r) => {
                assert_eq!(r.condition, "infinite_2_variation");
                assert_eq!(r.sum_squares, 0.0);
            }
            other => panic!("accepted {other:?}"),
        }
    }

    #[test]
    fn prop1_rejects_halved_jumps() {
        let c = build_thm1(1.5, &TimeSchedule::default(), 300).unwrap();
        let sched: Vec<Time> = (0..=300).map(|k| c.axis_time(k)).collect();
        let mut xs = c.xs.clone();
        for x in &mut xs[7..] {
            *x *= 0.5;
        }
        // sinh(δ)/2 < δ for the δ_k in play.
        match build_prop1(&c.lambda, &sched, &xs).unwrap() {
            Prop1Outcome::Rejected(r) => {
                assert_eq!(r.condition, "x_lower_bound");
                assert_eq!(r.index, Some(7));
            }
            other => panic!("accepted {other:?}"),
        }
    }

    #[test]
    fn thm2_refuses_osgood_moduli() {
        let opts = Thm2Options { depth: 10, ..Default::default() };
        let err = build_thm2(&ModulusSpec::holder(0.5).unwrap(), &opts).unwrap_err();
        assert!(matches!(err, Error::Refused(ref m) if m.contains("unique")), "{err}");
    }

    #[test]
    fn thm2_holder_sequence() {
        let omega = ModulusSpec::holder(0.4).unwrap();
        let opts = Thm2Options { depth: 300, membership_pairs: 2000, ..Default::default() };
        let c = build_thm2(&omega, &opts).unwrap();
        assert!(c.eps.windows(2).all(|w| w[1] < w[0]));
        assert!(c.eta_sum <= 0.5);
        assert!(c.required_k.iter().all(|&r| r <= c.k_const));
        assert!(c.membership_ratio <= 1.0 + 1e-9);
        for k in 0..c.depth() {
            let lhs = c.eps[k];
            let th = |e| theta_omega(&omega, e).unwrap();
            let rhs = c.eps[k + 1] + th(c.eps[k]) * th(c.eps[k + 1]) * c.eps[k + 1] / (2.0 * c.k_const);
            assert!((lhs - rhs).abs() <= 1e-11 * lhs);
            assert!((c.times[k] - c.times[k + 1] - 2.0 * c.eta[k + 1]).abs() <= 1e-15 * c.times[k]);
        }
        // The tooth over [t_{k+1}, t_k] peaks at ω(η_{k+1}).
        let k = 17;
        let top = Time::from_f64(c.times[k + 1] + c.eta[k + 1]).unwrap();
        assert!((c.lambda.evaluate(top).unwrap() - omega.eval(c.eta[k + 1])).abs() < 1e-15);
    }

    #[test]
    fn fbm_drift_window() {
        assert!(build_fbm_drift(0.2, 2.2, 0.1, 50).is_ok());
        assert!(build_fbm_drift(0.45, 1.05, 0.05, 50).is_ok());
        let err = build_fbm_drift(0.2, 3.0, 0.1, 50).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("1/(2H)")), "{err}");
        let err = build_fbm_drift(0.2, 2.0, 0.1, 50).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("5/(12H)")), "{err}");
        let err = build_fbm_drift(0.2, 2.2, 0.2, 50).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("1 - 2αH")), "{err}");
    }

    #[test]
    fn fbm_drift_times() {
        let s = build_fbm_drift(0.2, 2.2, 0.1, 300).unwrap();
        assert_eq!(s.times[0], 1.0);
        let z = hurwitz_zeta(2.2, 1.0);
        for k in 0..300 {
            let d = s.times[k] - s.times[k + 1];
            assert!((d - ((k + 1) as f64).powf(-2.2) / z).abs() <= 1e-13);
        }
        assert_eq!(s.xs[0], 1.0);
        assert_eq!(s.gamma.jumps().len(), 300);
    }

    #[test]
    fn zeta_values() {
        let pi = std::f64::consts::PI;
        assert!((hurwitz_zeta(2.0, 1.0) - pi * pi / 6.0).abs() < 1e-14);
        assert!((hurwitz_zeta(4.0, 1.0) - pi.powi(4) / 90.0).abs() < 1e-14);
        // ζ(2, 1/2) = 3 ζ(2).
        assert!((hurwitz_zeta(2.0, 0.5) - pi * pi / 2.0).abs() < 1e-13);
        // ζ(s, a) = a^{-s} + ζ(s, a + 1).
        assert!((hurwitz_zeta(2.2, 3.0) - 3f64.powf(-2.2) - hurwitz_zeta(2.2, 4.0)).abs() < 1e-15);
    }
}
