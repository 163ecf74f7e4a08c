//! Moduli of continuity, the transform `θ_ω(ε) = sup_r (ω(r) - r/ε)` and
//! the Osgood dichotomy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A modulus of continuity `ω` with `ω(0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModulusSpec {
    Zero,
    /// `ω(r) = r^α`, `0 < α <= 1`.
    Holder {
        alpha: f64,
    },
    /// `ω(r) = sqrt(r) · ln(1/r)^β` up to its maximum at `r = e^{-2β}`,
    /// constant beyond.
    SqrtLog {
        beta: f64,
    },
    /// Piecewise-linear through `(0, 0)` and the given `(r, ω(r))` nodes,
    /// constant beyond the last node.
    Tabulated {
        points: Vec<[f64; 2]>,
    },
}

impl ModulusSpec {
    pub fn holder(alpha: f64) -> Result<Self> {
        let m = ModulusSpec::Holder { alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn sqrt_log(beta: f64) -> Result<Self> {
        let m = ModulusSpec::SqrtLog { beta };
        m.validate()?;
        Ok(m)
    }

    pub fn tabulated(points: Vec<[f64; 2]>) -> Result<Self> {
        let m = ModulusSpec::Tabulated { points };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModulusSpec::Zero => Ok(()),
            ModulusSpec::Holder { alpha } => {
                if *alpha > 0.0 && *alpha <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::config(format!("Hölder exponent must lie in (0, 1], got {alpha}")))
                }
            }
            ModulusSpec::SqrtLog { beta } => {
                if *beta > 0.0 && beta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config(format!("log exponent must be positive, got {beta}")))
                }
            }
            ModulusSpec::Tabulated { points } => {
                if points.is_empty() {
                    return Err(Error::config("tabulated modulus needs at least one node"));
                }
                if points.iter().any(|p| !(p[0] >= 0.0) || !(p[1] >= 0.0) || !p[0].is_finite() || !p[1].is_finite()) {
                    return Err(Error::config("tabulated nodes must be finite and nonnegative"));
                }
                if points[0][0] == 0.0 && points[0][1] != 0.0 {
                    return Err(Error::config("a tabulated modulus must vanish at 0"));
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::config("tabulated abscissae must be strictly increasing"));
                }
                if points.windows(2).any(|w| w[1][1] < w[0][1]) {
                    return Err(Error::config("tabulated values must be nondecreasing"));
                }
                Ok(())
            }
        }
    }

    /// Family tag used in reports.
    pub fn family(&self) -> &'static str {
        match self {
            ModulusSpec::Zero => "zero",
            ModulusSpec::Holder { .. } => "holder",
            ModulusSpec::SqrtLog { .. } => "sqrt_log",
            ModulusSpec::Tabulated { .. } => "tabulated",
        }
    }

    pub fn params(&self) -> serde_json::Value {
        match self {
            ModulusSpec::Zero => serde_json::json!({}),
            ModulusSpec::Holder { alpha } => serde_json::json!({ "alpha": alpha }),
            ModulusSpec::SqrtLog { beta } => serde_json::json!({ "beta": beta }),
            ModulusSpec::Tabulated { points } => serde_json::json!({ "nodes": points.len() }),
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        if !(r > 0.0) {
            return 0.0;
        }
        match self {
            ModulusSpec::Zero => 0.0,
            ModulusSpec::Holder { alpha } => r.powf(*alpha),
            ModulusSpec::SqrtLog { beta } => {
                let r = r.min((-2.0 * beta).exp());
                r.sqrt() * (-r.ln()).powf(*beta)
            }
            ModulusSpec::Tabulated { points } => interpolate(points, r),
        }
    }

    /// Smallest positive node of a tabulated modulus.
    fn first_node(&self) -> Option<f64> {
        match self {
            ModulusSpec::Tabulated { points } => points.iter().map(|p| p[0]).find(|&r| r > 0.0),
            _ => None,
        }
    }
}

fn interpolate(points: &[[f64; 2]], r: f64) -> f64 {
    let i = points.partition_point(|p| p[0] <= r);
    if i == points.len() {
        return points[i - 1][1];
    }
    let (r0, w0) = if i == 0 { (0.0, 0.0) } else { (points[i - 1][0], points[i - 1][1]) };
    let (r1, w1) = (points[i][0], points[i][1]);
    w0 + (w1 - w0) * (r - r0) / (r1 - r0)
}

/// Samples `omega` at `per_decade` geometric nodes per decade on
/// `[r_min, r_max]`.
pub fn tabulate(omega: &ModulusSpec, r_min: f64, r_max: f64, per_decade: usize) -> Result<ModulusSpec> {
    if !(r_min > 0.0 && r_max > r_min) || per_decade == 0 {
        return Err(Error::config("tabulation needs 0 < r_min < r_max and a positive density"));
    }
    let decades = (r_max / r_min).log10();
    let n = (decades * per_decade as f64).ceil() as usize;
    let points = (0..=n)
        .map(|i| {
            let r = r_min * 10f64.powf(decades * i as f64 / n as f64);
            [r, omega.eval(r)]
        })
        .collect();
    ModulusSpec::tabulated(points)
}

/// `(1 - α) α^{α/(1-α)}`, the constant in `θ(ε) = C_α ε^{α/(1-α)}` for `r^α`.
pub fn holder_constant(alpha: f64) -> f64 {
    (1.0 - alpha) * alpha.powf(alpha / (1.0 - alpha))
}

/// `θ_ω(ε)`: closed form for Hölder moduli, bracketed maximization otherwise.
pub fn theta_omega(omega: &ModulusSpec, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("ε must be positive, got {eps}")));
    }
    match omega {
        ModulusSpec::Zero => Ok(0.0),
        ModulusSpec::Holder { alpha } if *alpha == 1.0 => {
            if eps <= 1.0 {
                Ok(0.0)
            } else {
                Err(Error::Unbounded(format!("r - r/ε is unbounded for ε = {eps} > 1")))
            }
        }
        ModulusSpec::Holder { alpha } => Ok(holder_constant(*alpha) * eps.powf(alpha / (1.0 - alpha))),
        _ => Ok(theta_numeric(omega, eps)?.0),
    }
}

const LOG_R_MIN: f64 = -300.0;
const LOG_R_MAX: f64 = 300.0;
const GRID_PER_DECADE: f64 = 20.0;

/// Numeric `θ_ω(ε)` and the maximizing `r` (0 when the supremum is the
/// value at the origin).
pub fn theta_numeric(omega: &ModulusSpec, eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("ε must be positive, got {eps}")));
    }
    let g = |log_r: f64| {
        let r = 10f64.powf(log_r);
        omega.eval(r) - r / eps
    };
    let n = ((LOG_R_MAX - LOG_R_MIN) * GRID_PER_DECADE) as usize;
    let step = (LOG_R_MAX - LOG_R_MIN) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| g(LOG_R_MIN + i as f64 * step)).collect();
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if vals[n] >= top && vals[n] > vals[n - 1] {
        return Err(Error::Unbounded(format!("ω(r) - r/ε still increasing at r = 1e{LOG_R_MAX}")));
    }
    let mut best = (0.0, 0.0);
    for i in 1..n {
        let v = vals[i];
        let local = v >= vals[i - 1] && v >= vals[i + 1];
        if !local || v <= 0.0 || v < 0.5 * top {
            continue;
        }
        let x = golden_max(&g, LOG_R_MIN + (i - 1) as f64 * step, LOG_R_MIN + (i + 1) as f64 * step);
        let gx = g(x).max(v);
        if gx > best.0 {
            best = (gx, 10f64.powf(x));
        }
    }
    Ok(best)
}

fn golden_max(g: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + phi * (b - a);
            gd = g(d);
        }
    }
    0.5 * (a + b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Unique,
    NonUnique,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    Numeric,
}

/// Settings of the numeric Osgood test.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OsgoodOptions {
    /// Smallest `ε` the partial integrals reach.
    pub eps_floor: f64,
    /// Upper limit of the integrals.
    pub x0: f64,
    pub points_per_decade: usize,
    /// Growth per decade above which the integral is read as divergent.
    pub threshold: f64,
    pub fit_decades: usize,
}

impl Default for OsgoodOptions {
    fn default() -> Self {
        Self { eps_floor: 1e-16, x0: 1e-2, points_per_decade: 10, threshold: 0.1, fit_decades: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OsgoodVerdict {
    pub family: String,
    pub params: serde_json::Value,
    pub classification: Classification,
    pub method: Method,
    pub doubling_ok: bool,
    pub doubling_max_ratio: f64,
    /// `(ε, ∫_ε^{x0} dx / θ_ω(x))` at every decade.
    pub evidence: Vec<[f64; 2]>,
    pub slope_per_decade: f64,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Largest sampled `ω(2δ) / (2ω(δ))` over `δ` between `1e-40` and `1e-4`.
pub fn doubling_ratio(omega: &ModulusSpec) -> f64 {
    (0..=720)
        .map(|i| 10f64.powf(-40.0 + i as f64 / 20.0))
        .filter_map(|d| {
            let w = omega.eval(d);
            (w > 0.0).then(|| omega.eval(2.0 * d) / (2.0 * w))
        })
        .fold(0.0, f64::max)
}

fn analytic_class(omega: &ModulusSpec) -> Option<Classification> {
    match omega {
        ModulusSpec::Zero => Some(Classification::Unique),
        ModulusSpec::Holder { alpha } => {
            Some(if *alpha >= 0.5 { Classification::Unique } else { Classification::NonUnique })
        }
        ModulusSpec::SqrtLog { beta } => {
            Some(if *beta <= 0.5 { Classification::Unique } else { Classification::NonUnique })
        }
        ModulusSpec::Tabulated { .. } => None,
    }
}

/// Evidence, slope per decade, notes and whether the grid was too coarse.
type NumericOsgood = (Vec<[f64; 2]>, f64, Vec<String>, bool);

/// Numeric partial integrals and their growth per decade at the small end.
fn osgood_numeric(omega: &ModulusSpec, opts: &OsgoodOptions) -> Result<NumericOsgood> {
    if !(opts.eps_floor > 0.0 && opts.x0 > opts.eps_floor) || opts.points_per_decade == 0 {
        return Err(Error::config("Osgood test needs 0 < eps_floor < x0"));
    }
    let decades = (opts.x0 / opts.eps_floor).log10();
    let p = opts.points_per_decade;
    let n = (decades * p as f64).round() as usize;
    if n < opts.fit_decades * p || opts.fit_decades == 0 {
        return Err(Error::config("integration range shorter than the fit window"));
    }
    let du = decades * std::f64::consts::LN_10 / n as f64;
    let first_node = omega.first_node();
    let mut notes = Vec::new();
    let mut coarse = false;
    let mut f = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let x = opts.x0 * 10f64.powf(-decades * j as f64 / n as f64);
        let (theta, argmax) = match omega {
            ModulusSpec::Tabulated { .. } | ModulusSpec::SqrtLog { .. } => theta_numeric(omega, x)?,
            _ => (theta_omega(omega, x)?, f64::NAN),
        };
        if let Some(r1) = first_node {
            if !(argmax > r1) && !coarse {
                coarse = true;
                notes.push(format!("maximizer at ε = {x:e} falls below the first node {r1:e}"));
            }
        }
        f.push((x, if theta > 0.0 { x / theta } else { f64::INFINITY }));
    }
    let mut integral = vec![0.0; n + 1];
    for j in 1..=n {
        integral[j] = integral[j - 1] + 0.5 * du * (f[j - 1].1 + f[j].1);
    }
    let evidence = (0..=n).step_by(p).map(|j| [f[j].0, integral[j]]).collect();
    let back = opts.fit_decades * p;
    let slope = (integral[n] - integral[n - back]) / opts.fit_decades as f64;
    Ok((evidence, slope, notes, coarse))
}

/// Classifies `omega` by the Osgood condition on `θ_ω`.
///
/// Built-in families get their analytic verdict together with numeric
/// evidence; tabulated moduli are classified from the growth of the
/// partial integrals. A counterexample verdict also needs the doubling
/// condition `limsup ω(2δ)/(2ω(δ)) < 1`.
pub fn osgood_classify(omega: &ModulusSpec, opts: &OsgoodOptions) -> Result<OsgoodVerdict> {
    omega.validate()?;
    let ratio = doubling_ratio(omega);
    let doubling_ok = ratio < 1.0;
    let (evidence, slope, mut notes, coarse) = osgood_numeric(omega, opts)?;
    let numeric = if coarse {
        Classification::Inconclusive
    } else if slope > opts.threshold {
        Classification::Unique
    } else {
        Classification::NonUnique
    };
    let (mut classification, method) = match analytic_class(omega) {
        Some(c) => (c, Method::Analytic),
        None => (numeric, Method::Numeric),
    };
    if classification == Classification::NonUnique && !doubling_ok {
        notes.push(format!("doubling ratio {ratio} is not below 1"));
        classification = Classification::Inconclusive;
    }
    Ok(OsgoodVerdict {
        family: omega.family().to_string(),
        params: omega.params(),
        classification,
        method,
        doubling_ok,
        doubling_max_ratio: ratio,
        evidence,
        slope_per_decade: slope,
        threshold: opts.threshold,
        notes,
    })
}

/// Largest `ω(a + b) - ω(a) - ω(b)` over the given pairs; positive values
/// are subadditivity violations.
pub fn subadditivity_violation(omega: &ModulusSpec, pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|&(a, b)| omega.eval(a + b) - omega.eval(a) - omega.eval(b)).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesFlag {
    Convergent,
    Divergent,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub name: String,
    pub total: f64,
    /// Sums over the dyadic blocks `[2^j - 1, 2^{j+1} - 1)`.
    pub block_sums: Vec<f64>,
    pub tail_ratio: f64,
    pub flag: SeriesFlag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiVariationReport {
    pub log_weighted: SeriesReport,
    pub damped: SeriesReport,
    pub squares: SeriesReport,
}

impl PsiVariationReport {
    pub fn flags(&self) -> [SeriesFlag; 3] {
        [self.log_weighted.flag, self.damped.flag, self.squares.flag]
    }
}

/// Dyadic block sums of a series with a tail-ratio verdict: last block over
/// the previous one at most 0.75 reads as convergent, at least 0.9 as
/// divergent.
pub fn series_report(name: &str, terms: impl Iterator<Item = f64>) -> SeriesReport {
    let mut blocks = Vec::new();
    let mut total = 0.0;
    let mut block = 0.0;
    let mut edge = 1usize;
    for (k, a) in terms.enumerate() {
        if k + 1 == 2 * edge {
            blocks.push(block);
            block = 0.0;
            edge *= 2;
        }
        block += a;
        total += a;
    }
    // only complete blocks are used for the tail ratio
    let (ratio, flag) = if total == 0.0 {
        (0.0, SeriesFlag::Convergent)
    } else if blocks.len() < 4 {
        (f64::NAN, SeriesFlag::Inconclusive)
    } else {
        let last = blocks[blocks.len() - 1];
        let prev = blocks[blocks.len() - 2];
        let r = if prev > 0.0 { last / prev } else { 0.0 };
        let flag = if last <= 1e-12 * total || r <= 0.75 {
            SeriesFlag::Convergent
        } else if r >= 0.9 {
            SeriesFlag::Divergent
        } else {
            SeriesFlag::Inconclusive
        };
        (r, flag)
    };
    SeriesReport { name: name.to_string(), total, block_sums: blocks, tail_ratio: ratio, flag }
}

/// Partial sums of `δ²/ln(1/δ)`, `δ_k exp(-½ Σ_{j<=k} δ_j²)` and `δ²`, with
/// a dyadic tail-ratio verdict for each. The verdicts are heuristics.
pub fn psi_variation_diagnostic(deltas: &[f64]) -> Result<PsiVariationReport> {
    if let Some((k, d)) = deltas.iter().enumerate().find(|(_, &d)| !(d > 0.0 && d < 1.0)) {
        return Err(Error::domain(format!("entry {d} at index {k} is outside (0, 1)")));
    }
    let log_weighted = series_report("delta^2/log(1/delta)", deltas.iter().map(|d| d * d / -d.ln()));
    let mut s = 0.0;
    let damped = series_report(
        "delta*exp(-sum delta^2/2)",
        deltas.iter().map(|d| {
            s += d * d;
            d * (-0.5 * s).exp()
        }),
    );
    let squares = series_report("delta^2", deltas.iter().map(|d| d * d));
    Ok(PsiVariationReport { log_weighted, damped, squares })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn theta_zero_and_sqrt() {
        assert_eq!(theta_omega(&ModulusSpec::Zero, 0.3).unwrap(), 0.0);
        let sq = ModulusSpec::holder(0.5).unwrap();
        for eps in [1e-3, 0.1, 1.0, 7.0] {
            assert!((theta_omega(&sq, eps).unwrap() - eps / 4.0).abs() <= 1e-15 * eps);
        }
        let (num, arg) = theta_numeric(&sq, 0.2).unwrap();
        assert!((num - 0.05).abs() < 1e-10);
        assert!((arg - 0.01).abs() < 1e-6);
    }

    #[test]
    fn theta_two_thirds_at_one() {
        let m = ModulusSpec::holder(2.0 / 3.0).unwrap();
        assert!((holder_constant(2.0 / 3.0) - 4.0 / 27.0).abs() < 1e-15);
        let num = theta_numeric(&m, 1.0).unwrap().0;
        assert!((num - 4.0 / 27.0).abs() < 1e-6 * 4.0 / 27.0);
    }

    #[test]
    fn lipschitz_theta_is_unbounded_for_large_eps() {
        let m = ModulusSpec::holder(1.0).unwrap();
        assert_eq!(theta_omega(&m, 0.5).unwrap(), 0.0);
        assert!(matches!(theta_omega(&m, 2.0), Err(Error::Unbounded(_))));
        let lin = ModulusSpec::tabulated(vec![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        // held constant beyond the last node, so bounded
        assert!(theta_numeric(&lin, 2.0).unwrap().0 > 0.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ModulusSpec::holder(0.0).is_err());
        assert!(ModulusSpec::holder(1.5).is_err());
        assert!(ModulusSpec::sqrt_log(-1.0).is_err());
        assert!(ModulusSpec::tabulated(vec![[0.0, 1.0]]).is_err());
        assert!(ModulusSpec::tabulated(vec![[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(theta_omega(&ModulusSpec::Zero, 0.0).is_err());
    }

    #[test]
    fn tabulated_interpolation() {
        let m = ModulusSpec::tabulated(vec![[1.0, 2.0], [3.0, 3.0]]).unwrap();
        assert_eq!(m.eval(0.5), 1.0);
        assert_eq!(m.eval(2.0), 2.5);
        assert_eq!(m.eval(10.0), 3.0);
        assert_eq!(m.eval(0.0), 0.0);
    }

    #[test]
    fn sqrt_log_is_monotone_and_capped() {
        let m = ModulusSpec::sqrt_log(0.8).unwrap();
        let mut prev = 0.0;
        for i in 0..400 {
            let r = 10f64.powf(-30.0 + i as f64 * 0.1);
            let w = m.eval(r);
            assert!(w >= prev);
            prev = w;
        }
        assert_eq!(m.eval(10.0), m.eval(1.0));
    }

    #[test]
    fn analytic_verdicts() {
        let opts = OsgoodOptions::default();
        let v = osgood_classify(&ModulusSpec::holder(0.5).unwrap(), &opts).unwrap();
        assert_eq!(v.classification, Classification::Unique);
        let v = osgood_classify(&ModulusSpec::holder(0.4).unwrap(), &opts).unwrap();
        assert_eq!(v.classification, Classification::NonUnique);
        assert!(v.doubling_ok);
        assert!((v.doubling_max_ratio - 2f64.powf(-0.6)).abs() < 1e-12);
        let v = osgood_classify(&ModulusSpec::sqrt_log(0.5).unwrap(), &opts).unwrap();
        assert_eq!(v.classification, Classification::Unique);
        let v = osgood_classify(&ModulusSpec::sqrt_log(0.6).unwrap(), &opts).unwrap();
        assert_eq!(v.classification, Classification::NonUnique);
        let v = osgood_classify(&ModulusSpec::Zero, &opts).unwrap();
        assert_eq!(v.classification, Classification::Unique);
    }

    #[test]
    fn coarse_tabulation_is_inconclusive() {
        let m = tabulate(&ModulusSpec::holder(0.4).unwrap(), 1e-6, 1.0, 10).unwrap();
        let v = osgood_classify(&m, &OsgoodOptions::default()).unwrap();
        assert_eq!(v.classification, Classification::Inconclusive);
        assert!(!v.notes.is_empty());
    }

    #[test]
    fn psi_diagnostic_geometric() {
        let d: Vec<f64> = (1..60).map(|k| 2f64.powi(-k)).collect();
        let r = psi_variation_diagnostic(&d).unwrap();
        assert_eq!(r.flags(), [SeriesFlag::Convergent; 3]);
        assert!(psi_variation_diagnostic(&[0.5, 1.0]).is_err());
        assert!(psi_variation_diagnostic(&[0.0]).is_err());
    }

    fn holder_strategy() -> impl Strategy<Value = f64> {
        prop::sample::select(vec![0.3, 0.4, 0.45, 0.6, 0.75])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn theta_is_monotone_in_eps(beta in 0.2f64..1.0, e in -8.0f64..-1.0) {
            let m = ModulusSpec::sqrt_log(beta).unwrap();
            let a = theta_omega(&m, 10f64.powf(e)).unwrap();
            let b = theta_omega(&m, 10f64.powf(e + 0.3)).unwrap();
            prop_assert!(a <= b);
        }

        #[test]
        fn theta_dominates_every_witness(alpha in holder_strategy(), e in -4.0f64..0.0, r in 1e-12f64..1.0) {
            let m = ModulusSpec::holder(alpha).unwrap();
            let eps = 10f64.powf(e);
            let th = theta_omega(&m, eps).unwrap();
            prop_assert!(th >= m.eval(r) - r / eps - 1e-15);
        }

        #[test]
        fn theta_monotone_in_omega(e in -6.0f64..0.0) {
            let eps = 10f64.powf(e);
            let small = ModulusSpec::sqrt_log(0.6).unwrap();
            let doubled = tabulate(&small, 1e-40, 1.0, 40).unwrap();
            let scaled = match &doubled {
                ModulusSpec::Tabulated { points } => ModulusSpec::tabulated(points.iter().map(|p| [p[0], 2.0 * p[1]]).collect()).unwrap(),
                _ => unreachable!(),
            };
            prop_assert!(theta_omega(&doubled, eps).unwrap() <= theta_omega(&scaled, eps).unwrap());
        }

        #[test]
        fn builtin_families_are_subadditive(a in 1e-9f64..0.5, b in 1e-9f64..0.5, alpha in holder_strategy(), beta in 0.1f64..1.0) {
            let h = ModulusSpec::holder(alpha).unwrap();
            let s = ModulusSpec::sqrt_log(beta).unwrap();
            prop_assert!(subadditivity_violation(&h, &[(a, b)]) <= 1e-15);
            prop_assert!(subadditivity_violation(&s, &[(a, b)]) <= 1e-12);
        }
    }
}
