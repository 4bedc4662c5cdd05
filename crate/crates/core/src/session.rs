//! The control-rate loop: filter update, guidance wrench, replanning triggers
//! and the blending of newly planned guides into a running session.

use std::io::{BufRead, Write};
use std::sync::mpsc::{channel, Receiver, Sender};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GuideError, Result};
use crate::field::{damp_and_clip, Ellipse, GuidanceParams, GuideGeometry, PoseFieldGMM};
use crate::filter::{BeliefState, FilterParams};
use crate::learner::{initial_mixture, learn_mixture, LearnerConfig};
use crate::math::log_normalize;
use crate::scenario::{EnvEdit, Scenario};
use crate::trajectory::{GuideMixture, PhaseGrid, ProMP};

/// Freelance belief above which the operator is taken to have left every plan.
pub const DEFECT_THRESHOLD: f64 = 0.5;
/// Identifier reported for the freelance plan.
pub const FREELANCE_ID: u64 = 0;

fn default_epsilon() -> f64 {
    1e-3
}

/// How replanning is run and blended in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplanConfig {
    /// Initial weight of each newly planned guide.
    pub epsilon_weight: f64,
    /// Learner iterations for a replan; the scenario's learner setting when absent.
    pub max_iterations: Option<usize>,
    /// Guides learned per replan; the scenario's learner setting when absent.
    pub n_components: Option<usize>,
    /// Ticks between launching an inline replan and integrating its result.
    pub latency_ticks: u64,
    /// Ticks after an integration before another defection can trigger a replan.
    pub integrate_timeout_ticks: u64,
    /// Oldest plans beyond this count are dropped on integration.
    pub max_plans: usize,
}

impl Default for ReplanConfig {
    fn default() -> Self {
        Self {
            epsilon_weight: default_epsilon(),
            max_iterations: None,
            n_components: None,
            latency_ticks: 10,
            integrate_timeout_ticks: 200,
            max_plans: 12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReplanTrigger {
    ReplanDefect,
    ReplanEnv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ReplanStatus {
    Idle,
    Pending { job: u64, trigger: ReplanTrigger, since: u64 },
    Integrating { since: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    ReplanTriggered { trigger: ReplanTrigger, job: u64 },
    ReplanIntegrated { trigger: ReplanTrigger, job: u64, added: Vec<u64>, removed: Vec<u64> },
    ReplanFailed { job: u64, message: String },
    EnvEdited { edit: EnvEdit },
    PhaseReset { plan: u64 },
    PlanReset,
    InvalidObservation { message: String },
}

/// One responsibility entry of the pose field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Responsibility {
    pub plan: u64,
    pub phase: usize,
    pub value: f64,
}

/// Guide geometry as sent to clients and written to frame logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuideSnapshot {
    pub version: u64,
    pub plan_ids: Vec<u64>,
    /// One chain of `T_o` ellipses per plan, freelance excluded.
    pub chains: Vec<Vec<Ellipse>>,
}

/// Per-tick output of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceFrame {
    pub tick: u64,
    /// As observed; non-finite entries serialize as null.
    #[serde(deserialize_with = "nan_vec_if_null")]
    pub pose: Vec<f64>,
    pub wrench: Vec<f64>,
    /// NaN (serialized as null) when the observation was invalid.
    #[serde(deserialize_with = "nan_if_null")]
    pub energy: f64,
    /// Plan ids in belief order, freelance last.
    pub plan_ids: Vec<u64>,
    pub plan_belief: Vec<f64>,
    pub phase_beliefs: Vec<Vec<f64>>,
    pub responsibilities: Vec<Responsibility>,
    pub guide_version: u64,
    /// Present on the first frame and whenever the guides change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guide: Option<GuideSnapshot>,
    pub events: Vec<SessionEvent>,
}

/// Everything one session owns between ticks.
#[derive(Clone, Debug)]
pub struct SessionState {
    pub scenario: Scenario,
    mixture: GuideMixture,
    geometry: GuideGeometry,
    grid: PhaseGrid,
    pub beliefs: BeliefState,
    pub filter: FilterParams,
    pub guidance: GuidanceParams,
    pub replan: ReplanConfig,
    pub defect_replan_enabled: bool,
    pub tick: u64,
    pub status: ReplanStatus,
    pub env_dirty: bool,
    plan_ids: Vec<u64>,
    next_plan_id: u64,
    guide_version: u64,
    guide_sent: bool,
    pub top_k: usize,
    pub last_pose: Option<Vec<f64>>,
    /// Events not yet attached to a frame.
    pending_events: Vec<SessionEvent>,
    pub event_log: Vec<(u64, SessionEvent)>,
}

impl SessionState {
    pub fn new(scenario: Scenario, mixture: GuideMixture) -> Result<Self> {
        scenario.validate()?;
        check_dim(scenario.pose_dim(), mixture.basis().n)?;
        let grid = scenario.grid();
        let geometry = GuideGeometry::new(&mixture, &grid)?;
        let beliefs = BeliefState::from_mixture(&mixture, &grid);
        let n = mixture.n_plans() as u64;
        Ok(Self {
            filter: scenario.filter,
            guidance: scenario.guidance,
            replan: scenario.replan.clone(),
            scenario,
            geometry,
            grid,
            beliefs,
            defect_replan_enabled: true,
            tick: 0,
            status: ReplanStatus::Idle,
            env_dirty: false,
            plan_ids: (1..=n).collect(),
            next_plan_id: n + 1,
            guide_version: 0,
            guide_sent: false,
            top_k: 5,
            last_pose: None,
            pending_events: Vec::new(),
            event_log: Vec::new(),
            mixture,
        })
    }

    pub fn mixture(&self) -> &GuideMixture {
        &self.mixture
    }

    pub fn geometry(&self) -> &GuideGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    /// Plan ids in belief order with the freelance id last.
    pub fn plan_ids(&self) -> Vec<u64> {
        let mut ids = self.plan_ids.clone();
        ids.push(FREELANCE_ID);
        ids
    }

    pub fn guide_version(&self) -> u64 {
        self.guide_version
    }

    pub fn guide_snapshot(&self) -> GuideSnapshot {
        let w = self.mixture.weights();
        GuideSnapshot {
            version: self.guide_version,
            plan_ids: self.plan_ids.clone(),
            chains: self
                .geometry
                .ellipse_chains(&w)
                .into_iter()
                .zip(&self.plan_ids)
                .map(|(chain, id)| {
                    chain
                        .into_iter()
                        .map(|mut e| {
                            e.plan = *id as usize;
                            e
                        })
                        .collect()
                })
                .collect(),
        }
    }

    fn push_event(&mut self, e: SessionEvent) {
        self.event_log.push((self.tick, e.clone()));
        self.pending_events.push(e);
    }

    /// Field under the next-step phase prior of the current beliefs.
    pub fn cue_field(&self) -> Result<PoseFieldGMM> {
        let cue = self.beliefs.cue_belief(&self.filter)?;
        self.geometry.field(&self.beliefs.plan_belief, &cue)
    }

    /// Guidance wrench at `x` without advancing the filter.
    pub fn wrench_at(&self, x: &[f64], xdot: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.geometry.dim(), x.len())?;
        check_dim(self.geometry.dim(), xdot.len())?;
        let field = self.cue_field()?;
        let (_, grad) = field.log_density_and_grad(&DVector::from_column_slice(x))?;
        Ok(damp_and_clip(grad, &DVector::from_column_slice(xdot), &self.guidance))
    }

    /// One control tick.
    pub fn step(&mut self, pose: &[f64], velocity: &[f64]) -> Result<GuidanceFrame> {
        let n = self.geometry.dim();
        check_dim(n, pose.len())?;
        check_dim(n, velocity.len())?;
        self.tick += 1;
        let finite = pose.iter().chain(velocity).all(|v| v.is_finite());
        let (wrench, energy, responsibilities) = if !finite {
            self.push_event(SessionEvent::InvalidObservation {
                message: "pose or velocity is not finite".into(),
            });
            (vec![0.0; n], f64::NAN, Vec::new())
        } else {
            let x = DVector::from_column_slice(pose);
            let reset = self.mixture.weights();
            let ev = self.beliefs.update(&self.geometry, &x, &self.filter, &reset)?;
            for o in ev.phase_resets {
                let plan = self.plan_ids().get(o).copied().unwrap_or(FREELANCE_ID);
                self.push_event(SessionEvent::PhaseReset { plan });
            }
            if ev.plan_reset {
                self.push_event(SessionEvent::PlanReset);
            }
            let field = self.cue_field()?;
            let (log_p, grad) = field.log_density_and_grad(&x)?;
            let wrench = damp_and_clip(grad, &DVector::from_column_slice(velocity), &self.guidance);
            self.last_pose = Some(pose.to_vec());
            (wrench.as_slice().to_vec(), -log_p, self.top_responsibilities(&field, &x)?)
        };
        let guide = if self.guide_sent { None } else { Some(self.guide_snapshot()) };
        self.guide_sent = true;
        Ok(GuidanceFrame {
            tick: self.tick,
            pose: pose.to_vec(),
            wrench,
            energy,
            plan_ids: self.plan_ids(),
            plan_belief: self.beliefs.plan_belief.clone(),
            phase_beliefs: self.beliefs.phase_beliefs.clone(),
            responsibilities,
            guide_version: self.guide_version,
            guide,
            events: std::mem::take(&mut self.pending_events),
        })
    }

    fn top_responsibilities(&self, field: &PoseFieldGMM, x: &DVector<f64>) -> Result<Vec<Responsibility>> {
        let r = field.responsibilities(x)?;
        let ids = self.plan_ids();
        let mut entries: Vec<Responsibility> = field
            .components()
            .iter()
            .zip(r)
            .map(|(c, value)| Responsibility { plan: ids[c.plan], phase: c.phase, value })
            .collect();
        entries.sort_by(|a, b| b.value.total_cmp(&a.value));
        entries.truncate(self.top_k);
        Ok(entries)
    }

    /// Applies an environment edit and flags the session for replanning.
    pub fn apply_edit(&mut self, edit: EnvEdit) -> Result<()> {
        self.scenario.apply_edit(&edit)?;
        self.env_dirty = true;
        self.push_event(SessionEvent::EnvEdited { edit });
        Ok(())
    }

    /// Adds `new` plans with weight `epsilon` each, after removing every old
    /// plan when the trigger is an environment change.
    pub fn integrate_new_plans(&mut self, new: Vec<ProMP>, trigger: ReplanTrigger, epsilon: f64) -> Result<Vec<u64>> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(GuideError::Domain("epsilon weight must lie in (0, 1)".into()));
        }
        for p in &new {
            if p.basis() != self.mixture.basis() {
                return Err(GuideError::Domain("new plan basis differs from the mixture".into()));
            }
        }
        let old_n = self.mixture.n_plans();
        let mut keep: Vec<usize> = match trigger {
            ReplanTrigger::ReplanEnv => Vec::new(),
            ReplanTrigger::ReplanDefect => (0..old_n).collect(),
        };
        let overflow = (keep.len() + new.len()).saturating_sub(self.replan.max_plans.max(new.len()));
        keep.drain(..overflow.min(keep.len()));
        if new.is_empty() && keep.len() == old_n {
            return Ok(Vec::new());
        }

        let lw = self.mixture.log_weights();
        let free = old_n;
        let eps_ln = epsilon.ln();
        let mut comps: Vec<ProMP> = keep.iter().map(|&o| self.mixture.components()[o].clone()).collect();
        let mut log_w: Vec<f64> = keep.iter().map(|&o| lw[o]).collect();
        let mut belief: Vec<f64> = keep.iter().map(|&o| self.beliefs.plan_belief[o]).collect();
        let mut phases: Vec<Vec<f64>> = keep.iter().map(|&o| self.beliefs.phase_beliefs[o].clone()).collect();
        let mut ids: Vec<u64> = keep.iter().map(|&o| self.plan_ids[o]).collect();
        // renormalize what survives before adding the new plans
        log_w.push(lw[free]);
        belief.push(self.beliefs.plan_belief[free]);
        log_normalize(&mut log_w);
        crate::math::normalize(&mut belief).ok_or(GuideError::Domain("empty plan belief".into()))?;
        let free_lw = log_w.pop().expect("freelance weight");
        let free_b = belief.pop().expect("freelance belief");
        let t = self.grid.len();
        let mut added = Vec::with_capacity(new.len());
        for p in new {
            comps.push(p);
            log_w.push(eps_ln);
            belief.push(epsilon);
            phases.push(vec![1.0 / t as f64; t]);
            ids.push(self.next_plan_id);
            added.push(self.next_plan_id);
            self.next_plan_id += 1;
        }
        log_w.push(free_lw);
        belief.push(free_b);
        phases.push(vec![1.0]);
        let total = log_w.iter().map(|l| l.exp()).sum::<f64>().ln();
        log_w.iter_mut().for_each(|l| *l -= total);
        let bt: f64 = belief.iter().sum();
        belief.iter_mut().for_each(|b| *b /= bt);

        let mixture = GuideMixture::new(*self.mixture.basis(), comps, log_w, self.mixture.freelance().clone())?;
        self.geometry = GuideGeometry::new(&mixture, &self.grid)?;
        self.mixture = mixture;
        self.beliefs = BeliefState { plan_belief: belief, phase_beliefs: phases };
        self.plan_ids = ids;
        self.guide_version += 1;
        self.guide_sent = false;
        Ok(added)
    }
}

/// Replan trigger for the current state, environment edits first.
pub fn check_replan(state: &SessionState) -> Option<ReplanTrigger> {
    if state.env_dirty {
        Some(ReplanTrigger::ReplanEnv)
    } else if state.beliefs.freelance_belief() > DEFECT_THRESHOLD {
        Some(ReplanTrigger::ReplanDefect)
    } else {
        None
    }
}

/// Learns new guides from `anchor` to the scenario's targets.
pub fn replan(scenario: &Scenario, anchor: &[f64], cfg: &ReplanConfig, seed: u64) -> Result<Vec<ProMP>> {
    let s = scenario.with_start(anchor)?;
    let learner = LearnerConfig {
        max_iterations: cfg.max_iterations.unwrap_or(s.learner.max_iterations),
        n_components: cfg.n_components.unwrap_or(s.learner.n_components),
        seed,
        ..s.learner.clone()
    };
    let init = initial_mixture(&s, &learner)?;
    let (mix, _) = learn_mixture(|w: &[f64]| s.episodic_reward(w).unwrap_or(f64::NAN), &init, &learner)?;
    Ok(mix.components().to_vec())
}

/// Where replan jobs run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplanMode {
    /// Computed when triggered and integrated `latency_ticks` later; fully deterministic.
    Inline,
    /// Computed on the shared worker pool and integrated on the first tick after completion.
    Threaded,
}

struct JobResult {
    job: u64,
    trigger: ReplanTrigger,
    plans: Result<Vec<ProMP>>,
}

/// A session plus the machinery that runs its replan jobs.
pub struct Session {
    pub state: SessionState,
    mode: ReplanMode,
    next_job: u64,
    inline: Option<(u64, JobResult)>,
    tx: Sender<JobResult>,
    rx: Receiver<JobResult>,
}

impl Session {
    pub fn new(state: SessionState, mode: ReplanMode) -> Self {
        let (tx, rx) = channel();
        Self { state, mode, next_job: 1, inline: None, tx, rx }
    }

    pub fn apply_edit(&mut self, edit: EnvEdit) -> Result<()> {
        self.state.apply_edit(edit)
    }

    /// Integrates finished replans, runs one tick and launches new replans.
    pub fn tick(&mut self, pose: &[f64], velocity: &[f64]) -> Result<GuidanceFrame> {
        self.collect_results()?;
        let mut frame = self.state.step(pose, velocity)?;
        self.update_status();
        if let Some(trigger) = check_replan(&self.state) {
            let launch = match (trigger, self.state.status) {
                (ReplanTrigger::ReplanEnv, _) => true,
                (ReplanTrigger::ReplanDefect, ReplanStatus::Idle) => self.state.defect_replan_enabled,
                _ => false,
            };
            if launch {
                self.launch(trigger, pose);
            }
        }
        frame.events.append(&mut self.state.pending_events);
        Ok(frame)
    }

    /// Blocks until a pending threaded replan finishes and integrates it.
    pub fn wait_for_replan(&mut self) -> Result<()> {
        if let ReplanStatus::Pending { job, .. } = self.state.status {
            while let Ok(res) = self.rx.recv() {
                let done = res.job == job;
                self.integrate(res)?;
                if done {
                    break;
                }
            }
        }
        Ok(())
    }

    fn update_status(&mut self) {
        if let ReplanStatus::Integrating { since } = self.state.status {
            let calm = self.state.beliefs.freelance_belief() <= DEFECT_THRESHOLD;
            if calm || self.state.tick.saturating_sub(since) >= self.state.replan.integrate_timeout_ticks {
                self.state.status = ReplanStatus::Idle;
            }
        }
    }

    fn launch(&mut self, trigger: ReplanTrigger, pose: &[f64]) {
        let job = self.next_job;
        self.next_job += 1;
        if trigger == ReplanTrigger::ReplanEnv {
            self.state.env_dirty = false;
        }
        let tick = self.state.tick;
        self.state.status = ReplanStatus::Pending { job, trigger, since: tick };
        self.state.push_event(SessionEvent::ReplanTriggered { trigger, job });
        let scenario = self.state.scenario.clone();
        let cfg = self.state.replan.clone();
        let seed = scenario.learner.seed.wrapping_add(job);
        let anchor = pose.to_vec();
        match self.mode {
            ReplanMode::Inline => {
                let plans = replan(&scenario, &anchor, &cfg, seed);
                self.inline = Some((tick + cfg.latency_ticks, JobResult { job, trigger, plans }));
            }
            ReplanMode::Threaded => {
                let tx = self.tx.clone();
                rayon::spawn(move || {
                    let plans = replan(&scenario, &anchor, &cfg, seed);
                    let _ = tx.send(JobResult { job, trigger, plans });
                });
            }
        }
    }

    fn collect_results(&mut self) -> Result<()> {
        if let Some((due, _)) = &self.inline {
            if self.state.tick >= *due {
                let (_, res) = self.inline.take().expect("checked above");
                self.integrate(res)?;
            }
        }
        while let Ok(res) = self.rx.try_recv() {
            self.integrate(res)?;
        }
        Ok(())
    }

    fn integrate(&mut self, res: JobResult) -> Result<()> {
        let current = matches!(self.state.status, ReplanStatus::Pending { job, .. } if job == res.job);
        if !current {
            return Ok(());
        }
        let tick = self.state.tick;
        match res.plans {
            Ok(plans) => {
                let before = self.state.plan_ids.clone();
                let eps = self.state.replan.epsilon_weight;
                let added = self.state.integrate_new_plans(plans, res.trigger, eps)?;
                let removed = before.into_iter().filter(|id| !self.state.plan_ids.contains(id)).collect();
                self.state.push_event(SessionEvent::ReplanIntegrated {
                    trigger: res.trigger,
                    job: res.job,
                    added,
                    removed,
                });
            }
            Err(e) => {
                self.state.push_event(SessionEvent::ReplanFailed { job: res.job, message: e.to_string() });
            }
        }
        self.state.status = ReplanStatus::Integrating { since: tick };
        Ok(())
    }
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nan_vec_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
}

/// Writes one frame as a single JSON line.
pub fn write_frame<W: Write>(out: &mut W, frame: &GuidanceFrame) -> Result<()> {
    serde_json::to_writer(&mut *out, frame)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads a newline-delimited frame log.
pub fn read_frames<R: BufRead>(input: R) -> Result<Vec<GuidanceFrame>> {
    let mut frames = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            frames.push(serde_json::from_str(&line)?);
        }
    }
    Ok(frames)
}
