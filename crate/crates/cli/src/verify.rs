use std::time::Instant;

use serde::Serialize;

use rrde::constructions::{
    build_prop1, build_thm1, build_thm2, reference_solution_thm1, Prop1Outcome, Thm2Options, TimeSchedule,
};
use rrde::dynamics::{solve_exact_piecewise, ExactOptions, ReflectedState};
use rrde::fbm::{ks_two_sample, mean_and_error, FbmConfig, FbmSampler, SamplingMethod};
use rrde::moduli::{
    holder_constant, osgood_classify, tabulate, theta_numeric, theta_omega, Classification, ModulusSpec, OsgoodOptions,
};
use rrde::parallel::{map_replications, mix64, try_map_replications};
use rrde::signals::GridSignal;
use rrde::skorokhod::{minimal_pushing_oracle, skorokhod_map};
use rrde::Time;

use crate::failure::Failure;
use crate::output::Output;

const SEED: u64 = 20_240_601;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Skorokhod,
    Thm1,
    Thm2,
    Fbm,
    Moduli,
    All,
}

#[derive(Debug, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn() -> Result<(bool, String), Failure>;

fn checks(suite: Suite) -> Vec<(&'static str, &'static str, CheckFn)> {
    let all: [(&'static str, &'static str, CheckFn); 10] = [
        ("skorokhod", "oracle_equivalence", skorokhod_oracle),
        ("skorokhod", "monotonicity", skorokhod_monotone),
        ("thm1", "exact_breakpoint_equality", thm1_exact),
        ("thm1", "jump_drift_accepted", thm1_prop1),
        ("thm2", "holder_0_4_sawtooth", thm2_sawtooth),
        ("thm2", "holder_0_5_refused", thm2_refused),
        ("fbm", "unit_variance", fbm_variance),
        ("fbm", "circulant_matches_cholesky", fbm_ks),
        ("moduli", "theta_closed_forms", moduli_theta),
        ("moduli", "osgood_table", moduli_osgood),
    ];
    let name = match suite {
        Suite::All => None,
        Suite::Skorokhod => Some("skorokhod"),
        Suite::Thm1 => Some("thm1"),
        Suite::Thm2 => Some("thm2"),
        Suite::Fbm => Some("fbm"),
        Suite::Moduli => Some("moduli"),
    };
    all.into_iter().filter(|(s, _, _)| name.is_none_or(|n| n == *s)).collect()
}

pub fn run(suite: Suite, out: &mut Output) -> Result<(), Failure> {
    out.seeds = serde_json::json!({ "base": SEED });
    let mut report = Vec::new();
    for (s, name, f) in checks(suite) {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, e.to_string()),
        };
        let check = Check { suite: s, name, pass, detail, seconds: start.elapsed().as_secs_f64() };
        println!("{} {}/{}: {}", if pass { "PASS" } else { "FAIL" }, s, name, check.detail);
        report.push(check);
    }
    let failed = report.iter().filter(|c| !c.pass).count();
    out.write_json("report.json", &serde_json::json!({ "suite": suite, "pass": failed == 0, "checks": report }))?;
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("{failed} of {} checks failed", report.len())))
    }
}

fn unit_float(seed: u64) -> f64 {
    (mix64(seed) >> 11) as f64 / (1u64 << 53) as f64
}

/// Brownian walk of 1025 points started uniformly in `[-1, 1)`.
fn walk(sampler: &FbmSampler, seed: u64) -> GridSignal {
    let mut g = sampler.sample_seeded(seed);
    let shift = 2.0 * unit_float(seed) - 1.0;
    g.values.iter_mut().for_each(|v| *v += shift);
    g
}

fn skorokhod_oracle() -> Result<(bool, String), Failure> {
    let sampler = FbmSampler::new(&FbmConfig::new(0.5, 1024, SEED))?;
    let hits = map_replications(10_000, SEED, |_, seed| {
        let f = walk(&sampler, seed);
        let (r, k) = match skorokhod_map(&f, 0) {
            Ok(r) => (r, minimal_pushing_oracle(&f)),
            Err(_) => return false,
        };
        r.local_time.values == k.values
            && r.reflected.values.iter().zip(&f.values).zip(&k.values).all(|((r, f), k)| *r == f + k)
    });
    let n = hits.iter().filter(|&&ok| ok).count();
    Ok((n == hits.len(), format!("{n}/{} signals agree with the minimal pushing oracle", hits.len())))
}

fn skorokhod_monotone() -> Result<(bool, String), Failure> {
    let sampler = FbmSampler::new(&FbmConfig::new(0.5, 1024, SEED + 1))?;
    let ok = try_map_replications(1000, SEED + 1, |_, seed| {
        let f = walk(&sampler, seed);
        let mut g = f.clone();
        g.values.iter_mut().enumerate().for_each(|(i, v)| *v += 0.2 * unit_float(seed ^ mix64(i as u64)));
        let (kf, kg) = (skorokhod_map(&f, 0)?.local_time, skorokhod_map(&g, 0)?.local_time);
        Ok(kg.values.iter().zip(&kf.values).all(|(g, f)| g <= f))
    })?;
    let n = ok.iter().filter(|&&b| b).count();
    Ok((n == ok.len(), format!("{n}/{} raised signals need no more pushing", ok.len())))
}

fn thm1_exact() -> Result<(bool, String), Failure> {
    let c = build_thm1(1.5, &TimeSchedule::default(), 500)?;
    let reference = reference_solution_thm1(&c, 1.0)?;
    let z0 = ReflectedState::new(0.0, c.ys[500]);
    let traj = solve_exact_piecewise(&c.lambda, &c.gamma, z0, (c.start_time(), Time::ONE), ExactOptions::default())?;
    let mismatched =
        reference.times.iter().zip(&reference.states).filter(|(t, z)| traj.state_at(**t) != Some(*z)).count();
    Ok((mismatched == 0, format!("{} breakpoints, {mismatched} differ", reference.len())))
}

fn thm1_prop1() -> Result<(bool, String), Failure> {
    let c = build_thm1(1.5, &TimeSchedule::default(), 200)?;
    let sched: Vec<Time> = (0..=200).map(|k| c.axis_time(k)).collect();
    Ok(match build_prop1(&c.lambda, &sched, &c.xs)? {
        Prop1Outcome::Accepted(p) => (true, format!("accepted, Σx = {:.6}", p.xs_report.total)),
        Prop1Outcome::Rejected(r) => (false, format!("rejected by {}: {}", r.condition, r.detail)),
    })
}

fn thm2_sawtooth() -> Result<(bool, String), Failure> {
    let omega = ModulusSpec::holder(0.4)?;
    let c = build_thm2(&omega, &Thm2Options { depth: 200, membership_pairs: 2000, seed: SEED, ..Default::default() })?;
    let fits = c.times[0] <= 1.0;
    let inside = c.membership_ratio <= 1.0;
    let k_ok = c.required_k.iter().all(|&k| k <= c.k_const);
    Ok((
        fits && inside && k_ok,
        format!(
            "K = {}, t_0 = {:.6}, membership ratio {:.4}, max required K {:.4}",
            c.k_const,
            c.times[0],
            c.membership_ratio,
            c.required_k.iter().copied().fold(0.0, f64::max)
        ),
    ))
}

fn thm2_refused() -> Result<(bool, String), Failure> {
    let omega = ModulusSpec::holder(0.5)?;
    Ok(match build_thm2(&omega, &Thm2Options { depth: 10, ..Default::default() }) {
        Err(rrde::Error::Refused(m)) => (m.contains("unique"), m),
        Err(e) => (false, format!("unexpected error {e}")),
        Ok(_) => (false, "built a sawtooth for a unique modulus".into()),
    })
}

fn fbm_variance() -> Result<(bool, String), Failure> {
    let n = 256;
    let s = FbmSampler::new(&FbmConfig::new(0.3, n, SEED))?;
    let sq = map_replications(10_000, SEED, |_, r| s.sample_seeded(r).values[n].powi(2));
    let (m, se) = mean_and_error(&sq);
    Ok(((m - 1.0).abs() <= 3.0 * se, format!("E[B(1)²] = {m:.4} ± {se:.4}")))
}

fn fbm_ks() -> Result<(bool, String), Failure> {
    let n = 64;
    let draw = |method: SamplingMethod, seed: u64| -> Result<Vec<f64>, Failure> {
        let s = FbmSampler::new(&FbmConfig::new(0.3, n, seed).with_method(method))?;
        Ok(map_replications(10_000, seed, |_, r| s.sample_seeded(r).values[n]))
    };
    let ks = ks_two_sample(&draw(SamplingMethod::Circulant, SEED)?, &draw(SamplingMethod::Cholesky, SEED + 7)?);
    Ok((!ks.reject, format!("KS statistic {:.4}, 1% critical value {:.4}", ks.statistic, ks.critical)))
}

fn moduli_theta() -> Result<(bool, String), Failure> {
    let mut worst = 0.0f64;
    for alpha in [0.3, 0.4, 0.45, 0.6, 0.75] {
        let omega = ModulusSpec::holder(alpha)?;
        for e in [1e-4f64, 1e-3, 1e-2, 1e-1, 1.0] {
            let closed = holder_constant(alpha) * e.powf(alpha / (1.0 - alpha));
            worst = worst.max((theta_numeric(&omega, e)?.0 - closed).abs() / closed);
        }
    }
    let sqrt = ModulusSpec::holder(0.5)?;
    for e in [1e-4, 1e-2, 1.0] {
        worst = worst.max((theta_omega(&sqrt, e)? - e / 4.0).abs() / (e / 4.0));
    }
    Ok((worst <= 1e-6, format!("largest relative error {worst:.2e}")))
}

fn moduli_osgood() -> Result<(bool, String), Failure> {
    use Classification::*;
    let table = [
        (ModulusSpec::holder(0.3)?, NonUnique),
        (ModulusSpec::holder(0.45)?, NonUnique),
        (ModulusSpec::holder(0.5)?, Unique),
        (ModulusSpec::holder(0.75)?, Unique),
        (ModulusSpec::sqrt_log(0.5)?, Unique),
        (ModulusSpec::sqrt_log(0.8)?, NonUnique),
    ];
    let opts = OsgoodOptions::default();
    let got = try_map_replications(table.len(), 0, |i, _| {
        let omega = &table[i as usize].0;
        Ok((
            osgood_classify(omega, &opts)?.classification,
            osgood_classify(&tabulate(omega, 1e-300, 1.0, 20)?, &opts)?.classification,
        ))
    })?;
    let bad: Vec<String> = table
        .iter()
        .zip(&got)
        .filter(|((_, want), (a, n))| a != want || n != want)
        .map(|((o, want), (a, n))| {
            format!("{} {}: want {want:?}, analytic {a:?}, numeric {n:?}", o.family(), o.params())
        })
        .collect();
    Ok((bad.is_empty(), if bad.is_empty() { format!("{} moduli classified", table.len()) } else { bad.join("; ") }))
}
