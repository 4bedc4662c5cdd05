//! Episodes of a scripted operator driving a unit point mass, with or without guidance.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use vguide_core::session::{GuidanceFrame, ReplanMode, Session, SessionState};
use vguide_core::{GuideError, GuideMixture, Result, Scenario};

use crate::operator::{Operator, OperatorScript};

pub const DEFAULT_TIMEOUT_S: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Guided,
    GuidedNoReplan,
    Unguided,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Guided, Mode::GuidedNoReplan, Mode::Unguided];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Guided => "guided",
            Mode::GuidedNoReplan => "guided-no-replan",
            Mode::Unguided => "unguided",
        })
    }
}

impl FromStr for Mode {
    type Err = GuideError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guided" => Ok(Mode::Guided),
            "guided-no-replan" => Ok(Mode::GuidedNoReplan),
            "unguided" => Ok(Mode::Unguided),
            _ => Err(GuideError::Domain(format!("unknown mode {s}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeConfig {
    pub timeout_s: f64,
    pub record_frames: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { timeout_s: DEFAULT_TIMEOUT_S, record_frames: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub mode: Mode,
    /// Number of times the pose entered penetration.
    pub collisions: u32,
    /// Seconds until the completion radius was reached; infinite on timeout.
    pub completion_time: f64,
    pub replans: u32,
    pub path: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub metrics: EpisodeMetrics,
    pub frames: Vec<GuidanceFrame>,
}

/// Simulates one episode at the scenario's control rate.
pub fn run_episode(
    scenario: &Scenario,
    mixture: &GuideMixture,
    script: &OperatorScript,
    mode: Mode,
    seed: u64,
    cfg: &EpisodeConfig,
) -> Result<Episode> {
    let dt = 1.0 / scenario.guidance.control_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut operator = Operator::new(script.clone(), scenario, mixture.components())?;
    let mass = script.mass();
    let mut session = match mode {
        Mode::Unguided => None,
        _ => {
            let mut state = SessionState::new(scenario.clone(), mixture.clone())?;
            state.defect_replan_enabled = mode == Mode::Guided;
            Some(Session::new(state, ReplanMode::Inline))
        }
    };
    let mut x = DVector::from_vec(script.initial_pose(scenario));
    let mut v = DVector::zeros(x.len());
    let mut prev_d = scenario.signed_distance(x.as_slice())?;
    let mut collisions = 0;
    let mut replans = 0;
    let mut completion_time = f64::INFINITY;
    let mut path = vec![x.as_slice().to_vec()];
    let mut frames = Vec::new();
    let ticks = (cfg.timeout_s / dt).round() as u64;
    for k in 0..ticks {
        let t = k as f64 * dt;
        let mut force = operator.force(t, dt, &x, &v, &mut rng)?;
        if let Some(s) = session.as_mut() {
            let frame = s.tick(x.as_slice(), v.as_slice())?;
            force += DVector::from_column_slice(&frame.wrench);
            replans += frame
                .events
                .iter()
                .filter(|e| matches!(e, vguide_core::session::SessionEvent::ReplanTriggered { .. }))
                .count() as u32;
            if cfg.record_frames {
                frames.push(frame);
            }
        }
        // semi-implicit Euler
        v += force * (dt / mass);
        x += &v * dt;
        if !x.iter().all(|c| c.is_finite()) {
            return Err(GuideError::Domain("simulation diverged".into()));
        }
        path.push(x.as_slice().to_vec());
        let d = scenario.signed_distance(x.as_slice())?;
        if prev_d >= 0.0 && d < 0.0 {
            collisions += 1;
        }
        prev_d = d;
        let (_, dist) = scenario.closest_target(x.as_slice());
        if dist <= scenario.completion_radius {
            completion_time = (k + 1) as f64 * dt;
            break;
        }
    }
    Ok(Episode {
        metrics: EpisodeMetrics { seed, mode, collisions, completion_time, replans, path },
        frames,
    })
}

/// One row of a batch comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRow {
    pub seed: u64,
    pub mode: Mode,
    pub collisions: u32,
    pub time: f64,
}

/// Runs every (seed, mode) pair; rows come out ordered by mode, then seed.
pub fn batch_compare(
    scenario: &Scenario,
    mixture: &GuideMixture,
    script: &OperatorScript,
    modes: &[Mode],
    seeds: &[u64],
    cfg: &EpisodeConfig,
) -> Result<Vec<BatchRow>> {
    if seeds.is_empty() {
        return Err(GuideError::Domain("need at least one seed".into()));
    }
    let jobs: Vec<(Mode, u64)> = modes.iter().flat_map(|m| seeds.iter().map(move |s| (*m, *s))).collect();
    let cfg = EpisodeConfig { record_frames: false, ..cfg.clone() };
    jobs.par_iter()
        .map(|(mode, seed)| {
            let ep = run_episode(scenario, mixture, script, *mode, *seed, &cfg)?;
            Ok(BatchRow {
                seed: *seed,
                mode: *mode,
                collisions: ep.metrics.collisions,
                time: ep.metrics.completion_time,
            })
        })
        .collect()
}

pub fn rows_to_csv(rows: &[BatchRow]) -> String {
    let mut out = String::from("seed,mode,collisions,time\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.seed, r.mode, r.collisions, format_time(r.time)));
    }
    out
}

fn format_time(t: f64) -> String {
    if t.is_finite() {
        format!("{t}")
    } else {
        "inf".into()
    }
}
