use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use rrde::constructions::{
    build_fbm_drift, build_prop1, build_thm1, build_thm2, reference_solution_thm1, Prop1Outcome, Thm2Options,
    TimeSchedule, DEFAULT_DEPTH,
};
use rrde::moduli::{osgood_classify, ModulusSpec, OsgoodOptions};
use rrde::signals::PiecewisePath;
use rrde::time::fmt_f64;
use rrde::Time;

use crate::config::Loaded;
use crate::failure::Failure;
use crate::output::Output;

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstructConfig {
    Thm1(Thm1Params),
    Prop1(Prop1Params),
    Thm2(Thm2Params),
    FbmDrift(FbmDriftParams),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thm1Params {
    #[serde(rename = "C", alias = "c")]
    pub c: f64,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default)]
    pub schedule: TimeSchedule,
    /// Extra members of the family to tabulate besides `η = 1`.
    #[serde(default)]
    pub etas: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop1Params {
    /// Path JSON of `λ`, relative to the config file.
    pub lambda: PathBuf,
    /// `1 = s_0 > s_1 > ... > s_n`.
    pub times: Vec<Time>,
    /// `x_0, ..., x_{n-1}`.
    pub xs: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thm2Params {
    pub omega: ModulusSpec,
    #[serde(default, rename = "K", alias = "k_const")]
    pub k_const: Option<f64>,
    #[serde(default)]
    pub eps0: Option<f64>,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_nodes")]
    pub nodes_per_half: usize,
    #[serde(default = "default_pairs")]
    pub membership_pairs: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbmDriftParams {
    #[serde(rename = "H", alias = "hurst")]
    pub hurst: f64,
    pub alpha: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_drift_depth")]
    pub depth: usize,
}

fn default_depth() -> usize {
    DEFAULT_DEPTH
}

fn default_nodes() -> usize {
    Thm2Options::default().nodes_per_half
}

fn default_pairs() -> usize {
    Thm2Options::default().membership_pairs
}

fn default_theta() -> f64 {
    0.1
}

fn default_drift_depth() -> usize {
    300
}

/// Summary of a `thm1` construction, read back by `simulate`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Thm1Summary {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(rename = "C")]
    pub c: f64,
    pub depth: usize,
    pub start_time: Time,
    pub y_start: f64,
    pub axis_times: Vec<Time>,
    pub deltas: Vec<f64>,
    pub ys: Vec<f64>,
    pub xs: Vec<f64>,
    pub evidence: rrde::constructions::Thm1Evidence,
}

pub fn run(cfg: Loaded<ConstructConfig>, out: &mut Output) -> Result<(), Failure> {
    out.seeds = json!({ "base": cfg.seed });
    match &cfg.body {
        ConstructConfig::Thm1(p) => thm1(p, out),
        ConstructConfig::Prop1(p) => prop1(p, &cfg, out),
        ConstructConfig::Thm2(p) => thm2(p, cfg.seed, out),
        ConstructConfig::FbmDrift(p) => fbm_drift(p, out),
    }
}

fn write_path(out: &mut Output, stem: &str, path: &PiecewisePath) -> Result<(), Failure> {
    out.write(&format!("{stem}.json"), path.to_json()?.as_bytes())?;
    let csv = path.breakpoint_csv()?;
    out.write_table(&format!("{stem}_samples"), || csv, || path.to_document())
}

fn thm1(p: &Thm1Params, out: &mut Output) -> Result<(), Failure> {
    let c = build_thm1(p.c, &p.schedule, p.depth)?;
    write_path(out, "lambda", &c.lambda)?;
    write_path(out, "gamma", &c.gamma)?;
    let reference = reference_solution_thm1(&c, 1.0)?;
    out.write_table("reference", || reference.to_csv(), || &reference)?;
    for &eta in &p.etas {
        let t = reference_solution_thm1(&c, eta)?;
        out.write_table(&format!("reference_eta_{}", fmt_f64(eta)), || t.to_csv(), || &t)?;
    }
    let summary = Thm1Summary {
        kind: "thm1".into(),
        c: p.c,
        depth: c.truncation_depth,
        start_time: c.start_time(),
        y_start: c.ys[c.truncation_depth],
        axis_times: (0..=c.truncation_depth).map(|k| c.axis_time(k)).collect(),
        deltas: c.deltas.clone(),
        ys: c.ys.clone(),
        xs: c.xs.clone(),
        evidence: c.evidence.clone(),
    };
    out.write_json("construction.json", &summary)
}

fn prop1(p: &Prop1Params, cfg: &Loaded<ConstructConfig>, out: &mut Output) -> Result<(), Failure> {
    let file = cfg.resolve(&p.lambda);
    let text = std::fs::read_to_string(&file)
        .map_err(|e| Failure::Config(format!("lambda: cannot read {}: {e}", file.display())))?;
    let lambda = PiecewisePath::from_json(&text).map_err(|e| Failure::Config(format!("lambda: {e}")))?;
    match build_prop1(&lambda, &p.times, &p.xs)? {
        Prop1Outcome::Accepted(c) => {
            write_path(out, "gamma", &c.gamma)?;
            out.write_json(
                "construction.json",
                &json!({
                    "type": "prop1",
                    "times": c.times,
                    "deltas": c.deltas,
                    "bounds": c.bounds,
                    "xs": c.xs,
                    "squares": c.squares,
                    "damped": c.damped,
                    "xs_report": c.xs_report,
                }),
            )
        }
        Prop1Outcome::Rejected(r) => {
            out.write_json("rejection.json", &r)?;
            let at = r.index.map(|i| format!(" at index {i}")).unwrap_or_default();
            Err(Failure::Refused(format!("condition {} fails{at}: {}", r.condition, r.detail)))
        }
    }
}

fn thm2(p: &Thm2Params, seed: u64, out: &mut Output) -> Result<(), Failure> {
    let opts = Thm2Options {
        k_const: p.k_const,
        eps0: p.eps0,
        depth: p.depth,
        nodes_per_half: p.nodes_per_half,
        membership_pairs: p.membership_pairs,
        seed,
    };
    let verdict = osgood_classify(&p.omega, &OsgoodOptions::default())?;
    out.write_json("verdict.json", &verdict)?;
    let c = build_thm2(&p.omega, &opts)?;
    write_path(out, "lambda", &c.lambda)?;
    out.write_json(
        "construction.json",
        &json!({
            "type": "thm2",
            "omega": c.omega,
            "K": c.k_const,
            "depth": c.depth(),
            "eps": c.eps,
            "eta": c.eta,
            "times": c.times,
            "required_k": c.required_k,
            "root_iterations": c.root_iterations,
            "eta_sum": c.eta_sum,
            "eta_tail_bound": c.eta_tail_bound,
            "chain_k0": c.chain_k0,
            "membership_ratio": c.membership_ratio,
            "notes": c.notes,
        }),
    )
}

fn fbm_drift(p: &FbmDriftParams, out: &mut Output) -> Result<(), Failure> {
    let s = build_fbm_drift(p.hurst, p.alpha, p.theta, p.depth)?;
    out.write("gamma.json", s.gamma.to_json()?.as_bytes())?;
    let rows = || {
        let mut csv = String::from("k,t,x\n");
        for k in 0..=s.depth() {
            let x = s.xs.get(k).map(|&x| fmt_f64(x)).unwrap_or_default();
            writeln!(csv, "{k},{},{x}", fmt_f64(s.times[k])).unwrap();
        }
        csv
    };
    out.write_table("schedule", rows, || json!({ "times": s.times, "xs": s.xs }))?;
    out.write_json(
        "construction.json",
        &json!({
            "type": "fbm_drift",
            "H": s.hurst,
            "alpha": s.alpha,
            "theta": s.theta,
            "depth": s.depth(),
            "xs_partial_sum": s.xs_partial_sum,
        }),
    )
}
