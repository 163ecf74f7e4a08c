use serde::Deserialize;
use serde_json::json;

use rrde::constructions::build_fbm_drift;
use rrde::fbm::{
    delta_statistics, occupation_event_frequency, small_ball_frequency, unit_reflected_moment, Centering, FbmConfig,
    FbmSampler, SamplingMethod,
};
use rrde::parallel::{replication_seed, try_map_replications};

use crate::config::Loaded;
use crate::failure::Failure;
use crate::output::Output;

#[derive(Debug, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum FbmTask {
    Sample(SampleParams),
    SmallBall(SmallBallParams),
    Occupation(OccupationParams),
    UnitMoment(MomentParams),
    Statistics(StatisticsParams),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleParams {
    #[serde(rename = "H", alias = "hurst")]
    pub hurst: f64,
    pub grid_size: usize,
    #[serde(default)]
    pub method: Option<SamplingMethod>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "one")]
    pub paths: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallBallParams {
    #[serde(rename = "H", alias = "hurst")]
    pub hurst: f64,
    pub grid_size: usize,
    /// Levels `x` of the events `sup_{[0,1]} B^* <= x`.
    pub x: Vec<f64>,
    pub replications: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationParams {
    #[serde(rename = "H", alias = "hurst")]
    pub hurst: f64,
    pub grid_size: usize,
    pub x: f64,
    pub y: f64,
    pub replications: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentParams {
    #[serde(rename = "H", alias = "hurst")]
    pub hurst: f64,
    pub grid_size: usize,
    pub replications: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticsParams {
    #[serde(rename = "H", alias = "hurst")]
    pub hurst: f64,
    pub alpha: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    pub depth: usize,
    pub grid_size: usize,
    #[serde(default = "one")]
    pub paths: usize,
    #[serde(default = "default_moment_grid")]
    pub moment_grid: usize,
    #[serde(default = "default_moment_reps")]
    pub moment_replications: usize,
}

fn one() -> usize {
    1
}

fn default_theta() -> f64 {
    0.1
}

fn default_moment_grid() -> usize {
    1024
}

fn default_moment_reps() -> usize {
    20_000
}

pub fn run(cfg: Loaded<FbmTask>, out: &mut Output) -> Result<(), Failure> {
    let seed = cfg.seed;
    out.seeds = json!({ "base": seed, "replications": "replication_seed(base, index)" });
    match &cfg.body {
        FbmTask::Sample(p) => {
            let mut fc = FbmConfig::new(p.hurst, p.grid_size, seed);
            if let Some(m) = p.method {
                fc = fc.with_method(m);
            }
            if let Some(h) = p.horizon {
                fc.horizon = h;
            }
            let sampler = FbmSampler::new(&fc)?;
            for i in 0..p.paths {
                let path = sampler.sample_seeded(replication_seed(seed, i as u64));
                out.write_table(&format!("fbm_path{i}"), || path.to_csv(), || &path)?;
            }
            out.write_json(
                "sample_meta.json",
                &json!({ "config": fc, "method": sampler.method(), "notes": sampler.notes(), "paths": p.paths }),
            )
        }
        FbmTask::SmallBall(p) => {
            let fc = FbmConfig::new(p.hurst, p.grid_size, seed);
            let rows =
                p.x.iter()
                    .map(|&x| Ok(json!({ "x": x, "estimate": small_ball_frequency(&fc, x, p.replications)? })))
                    .collect::<Result<Vec<_>, Failure>>()?;
            out.write_json(
                "report.json",
                &json!({ "task": "small_ball", "H": p.hurst, "grid_size": p.grid_size, "results": rows }),
            )
        }
        FbmTask::Occupation(p) => {
            let fc = FbmConfig::new(p.hurst, p.grid_size, seed);
            let est = occupation_event_frequency(&fc, p.x, p.y, p.replications)?;
            out.write_json(
                "report.json",
                &json!({ "task": "occupation", "H": p.hurst, "grid_size": p.grid_size, "x": p.x, "y": p.y, "estimate": est }),
            )
        }
        FbmTask::UnitMoment(p) => {
            let est = unit_reflected_moment(p.hurst, p.grid_size, p.replications, seed)?;
            out.write_json("report.json", &json!({ "task": "unit_moment", "H": p.hurst, "estimate": est }))
        }
        FbmTask::Statistics(p) => statistics(p, seed, out),
    }
}

fn statistics(p: &StatisticsParams, seed: u64, out: &mut Output) -> Result<(), Failure> {
    let sched = build_fbm_drift(p.hurst, p.alpha, p.theta, p.depth)?;
    let moment = unit_reflected_moment(p.hurst, p.moment_grid, p.moment_replications, seed)?;
    let centering = Centering::Scaling { hurst: p.hurst, unit_moment: moment.mean };
    let sampler = FbmSampler::new(&FbmConfig::new(p.hurst, p.grid_size, seed))?;
    let stats = try_map_replications(p.paths, seed, |_, s| {
        delta_statistics(&sampler.sample_seeded(s), &sched.times, centering.clone())
    })?;
    out.write_json(
        "statistics.json",
        &json!({
            "paths": stats,
            "meta": {
                "H": p.hurst,
                "alpha": p.alpha,
                "theta": p.theta,
                "depth": p.depth,
                "grid_size": p.grid_size,
                "schedule": sched.times,
                "unit_moment": moment,
                "seed": seed,
            },
        }),
    )
}
