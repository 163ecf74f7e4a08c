use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::json;

use rrde::dynamics::{
    solve_euler_hyperbolic_adaptive, solve_exact_piecewise, solve_reflected_euler, AdaptiveOptions, ExactOptions,
    HyperbolicState, ReflectedState, Trajectory,
};
use rrde::fbm::{sample_fbm, FbmConfig, RefinedFbm, SamplingMethod};
use rrde::parallel::try_map_replications;
use rrde::signals::{GridSignal, PiecewisePath};
use rrde::time::fmt_f64;
use rrde::Time;

use crate::config::Loaded;
use crate::construct::Thm1Summary;
use crate::failure::Failure;
use crate::output::Output;

#[derive(Debug, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SimulateConfig {
    Paths(PathsParams),
    Figure2(Figure2Params),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Exact,
    Euler,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaSource {
    /// Path JSON written by `construct`.
    File(PathBuf),
    Constant(f64),
    Fbm(FbmLambda),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbmLambda {
    #[serde(rename = "H", alias = "hurst")]
    pub hurst: f64,
    pub grid_size: usize,
    #[serde(default)]
    pub method: Option<SamplingMethod>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaSource {
    File(PathBuf),
    /// `γ(t) = density · t`.
    Density(f64),
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Initial {
    Point {
        x: f64,
        y: f64,
    },
    /// `(0, η y_D)` at the start time of a `thm1` construction summary.
    Construction {
        file: PathBuf,
        #[serde(default = "unit")]
        eta: f64,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsParams {
    pub backend: Backend,
    pub lambda: LambdaSource,
    pub gamma: GammaSource,
    pub initial: Initial,
    #[serde(default)]
    pub start: Option<Time>,
    #[serde(default)]
    pub end: Option<Time>,
    /// Euler grid steps over `[start, end]`.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Exact backend samples per piece.
    #[serde(default = "default_refine")]
    pub refine: usize,
}

fn default_steps() -> usize {
    1000
}

fn default_refine() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure2Params {
    #[serde(rename = "H", alias = "hurst", default = "default_hurst")]
    pub hurst: f64,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_ladder")]
    pub ell0: Vec<f64>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_max_level")]
    pub max_level: u32,
}

fn default_hurst() -> f64 {
    0.2
}

fn default_grid() -> usize {
    1 << 14
}

fn default_ladder() -> Vec<f64> {
    vec![1e-3, 1e-6, 1e-9]
}

fn default_kappa() -> f64 {
    AdaptiveOptions::default().kappa
}

fn default_max_level() -> u32 {
    AdaptiveOptions::default().max_level
}

pub fn run(cfg: Loaded<SimulateConfig>, out: &mut Output) -> Result<(), Failure> {
    match &cfg.body {
        SimulateConfig::Paths(p) => paths(p, &cfg, out),
        SimulateConfig::Figure2(p) => figure2(p, cfg.seed, out),
    }
}

fn read_path(cfg: &Loaded<SimulateConfig>, field: &str, file: &Path) -> Result<PiecewisePath, Failure> {
    let f = cfg.resolve(file);
    let text = std::fs::read_to_string(&f)
        .map_err(|e| Failure::Config(format!("{field}: cannot read {}: {e}", f.display())))?;
    PiecewisePath::from_json(&text).map_err(|e| Failure::Config(format!("{field}: {e}")))
}

fn paths(p: &PathsParams, cfg: &Loaded<SimulateConfig>, out: &mut Output) -> Result<(), Failure> {
    out.seeds = json!({ "base": cfg.seed });
    let (z0, initial_start) = match &p.initial {
        Initial::Point { x, y } => (ReflectedState::new(*x, *y), None),
        Initial::Construction { file, eta } => {
            let f = cfg.resolve(file);
            let text = std::fs::read_to_string(&f)
                .map_err(|e| Failure::Config(format!("initial.construction.file: cannot read {}: {e}", f.display())))?;
            let s: Thm1Summary = serde_json::from_str(&text)
                .map_err(|e| Failure::Config(format!("initial.construction.file: not a thm1 summary: {e}")))?;
            (ReflectedState::new(0.0, eta * s.y_start), Some(s.start_time))
        }
    };
    let start = p.start.or(initial_start).unwrap_or(Time::ZERO);
    let end = p.end.unwrap_or(Time::ONE);
    if start >= end {
        return Err(Failure::Config(format!("start {start} must precede end {end}")));
    }
    let gamma = match &p.gamma {
        GammaSource::File(f) => read_path(cfg, "gamma.file", f)?,
        GammaSource::Density(d) => {
            if !(*d >= 0.0) {
                return Err(Failure::Config(format!("gamma.density must be nonnegative, got {d}")));
            }
            PiecewisePath::from_slopes(vec![start, end], &[*d], d * start.to_f64())?
        }
    };
    let traj = match p.backend {
        Backend::Exact => {
            let lambda = match &p.lambda {
                LambdaSource::File(f) => read_path(cfg, "lambda.file", f)?,
                LambdaSource::Constant(v) => PiecewisePath::constant(start, end, *v)?,
                LambdaSource::Fbm(_) => {
                    return Err(Failure::Config(
                        "backend exact is incompatible with an fBm λ; use backend euler".into(),
                    ))
                }
            };
            solve_exact_piecewise(&lambda, &gamma, z0, (start, end), ExactOptions { refine: p.refine })?
        }
        Backend::Euler => {
            if p.steps == 0 {
                return Err(Failure::Config("steps must be positive".into()));
            }
            let (a, b) = (start.to_f64(), end.to_f64());
            let dt = (b - a) / p.steps as f64;
            let grid = match &p.lambda {
                LambdaSource::File(f) => {
                    let lambda = read_path(cfg, "lambda.file", f)?;
                    let values = (0..=p.steps)
                        .map(|i| {
                            let t = if i == p.steps { end } else { Time::from_f64(a + i as f64 * dt)?.max(start) };
                            lambda.evaluate(t)
                        })
                        .collect::<rrde::Result<Vec<_>>>()?;
                    GridSignal::new(a, dt, values)?
                }
                LambdaSource::Constant(v) => GridSignal::from_fn(a, dt, p.steps, |_| *v)?,
                LambdaSource::Fbm(f) => {
                    if a != 0.0 {
                        return Err(Failure::Config("an fBm λ starts at time 0".into()));
                    }
                    let mut fc = FbmConfig::new(f.hurst, f.grid_size, cfg.seed);
                    fc.horizon = b;
                    if let Some(m) = f.method {
                        fc = fc.with_method(m);
                    }
                    let g = sample_fbm(&fc)?;
                    out.write_table("lambda", || g.to_csv(), || &g)?;
                    g
                }
            };
            solve_reflected_euler(&grid, &gamma, z0)?
        }
    };
    out.write_table("trajectory", || traj.to_csv(), || &traj)?;
    out.write_json("trajectory_meta.json", &traj.meta)
}

fn figure2(p: &Figure2Params, seed: u64, out: &mut Output) -> Result<(), Failure> {
    out.seeds = json!({ "base": seed, "fbm": seed, "refinement": seed });
    if p.ell0.iter().any(|&l| !(l > 0.0)) {
        return Err(Failure::Config("ell0: every starting ℓ must be positive".into()));
    }
    let base = sample_fbm(&FbmConfig::new(p.hurst, p.grid_size, seed))?;
    out.write_table("lambda", || base.to_csv(), || &base)?;
    let opts = AdaptiveOptions { kappa: p.kappa, max_level: p.max_level, ..AdaptiveOptions::default() };
    let runs = try_map_replications(p.ell0.len(), seed, |i, _| {
        let mut signal = RefinedFbm::new(base.clone(), p.hurst, seed)?;
        let u0 = HyperbolicState::new(p.ell0[i as usize], 0.0);
        solve_euler_hyperbolic_adaptive(&mut signal, 1.0, u0, &opts)?.to_reflected()
    })?;
    let mut summary = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        check_nonnegative(run)?;
        out.write_table(&format!("figure2_run{i}"), || run.to_csv(), || run)?;
        let last = run.last().expect("trajectory has a start state");
        summary.push(json!({
            "ell0": p.ell0[i],
            "terminal": { "x": last.x, "y": last.y, "K": last.k_accum, "norm": (last.y * last.y - last.x * last.x).max(0.0).sqrt() },
            "steps_taken": run.meta.steps_taken,
            "notes": run.meta.notes,
        }));
    }
    let mut index = String::from("run,ell0,file\n");
    for (i, l) in p.ell0.iter().enumerate() {
        writeln!(index, "{i},{},figure2_run{i}", fmt_f64(*l)).unwrap();
    }
    out.write("figure2_index.csv", index.as_bytes())?;
    out.write_json(
        "figure2_summary.json",
        &json!({ "H": p.hurst, "grid_size": p.grid_size, "seed": seed, "runs": summary }),
    )
}

fn check_nonnegative(t: &Trajectory<ReflectedState>) -> Result<(), Failure> {
    match t.times.iter().zip(&t.states).find(|(_, z)| !(z.x >= 0.0)) {
        None => Ok(()),
        Some((time, z)) => Err(Failure::Numeric(format!("x = {} < 0 at t = {time}", z.x))),
    }
}
