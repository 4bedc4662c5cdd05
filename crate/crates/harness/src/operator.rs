//! Scripted operators standing in for a human at the handle.

use std::fmt;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vguide_core::{GuideError, ProMP, Result, Scenario};

/// Proportional gain of the operator's tracking controller.
pub const TRACK_KP: f64 = 20.0;
/// Derivative gain, close to critical damping for `TRACK_KP` on a unit mass.
pub const TRACK_KD: f64 = 9.0;
/// Correlation time of the operator's aiming error, in seconds.
pub const AIM_TAU: f64 = 1.0;
/// Rotational aiming noise per meter of translational noise.
pub const ROT_NOISE_PER_M: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub enum OperatorScript {
    /// Tracks the mean of plan `plan` at `speed` phase units per second with
    /// correlated aiming noise of standard deviation `noise`, then heads to
    /// the closest target.
    PlanFollower { plan: usize, noise: f64, speed: f64 },
    /// Follows plan `plan` until `defect_phase`, then moves straight to `alternate`.
    Defector { plan: usize, defect_phase: f64, alternate: Vec<f64>, speed: f64 },
    /// Applies no force of its own.
    PassiveMass { mass: f64, initial: Option<Vec<f64>> },
    /// Random walk in velocity with diffusion `sigma`.
    Wanderer { sigma: f64 },
}

impl OperatorScript {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            OperatorScript::PlanFollower { noise, speed, .. } => *noise >= 0.0 && *speed > 0.0,
            OperatorScript::Defector { defect_phase, speed, .. } => {
                *defect_phase > 0.0 && *defect_phase < 1.0 && *speed > 0.0
            }
            OperatorScript::PassiveMass { mass, .. } => *mass > 0.0,
            OperatorScript::Wanderer { sigma } => *sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(GuideError::Domain(format!("invalid operator script {self:?}")))
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            OperatorScript::PassiveMass { mass, .. } => *mass,
            _ => 1.0,
        }
    }

    pub fn initial_pose(&self, scenario: &Scenario) -> Vec<f64> {
        match self {
            OperatorScript::PassiveMass { initial: Some(p), .. } => p.clone(),
            _ => scenario.start_pose.clone(),
        }
    }
}

impl fmt::Display for OperatorScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorScript::PlanFollower { .. } => write!(f, "follower"),
            OperatorScript::Defector { .. } => write!(f, "defector"),
            OperatorScript::PassiveMass { .. } => write!(f, "passive"),
            OperatorScript::Wanderer { .. } => write!(f, "wanderer"),
        }
    }
}

/// Running state of a scripted operator.
pub struct Operator {
    script: OperatorScript,
    plan: Option<ProMP>,
    aim: DVector<f64>,
    target: DVector<f64>,
    /// Reference pose when defection started and the time it happened.
    defect_from: Option<(DVector<f64>, f64)>,
    ref_speed: f64,
}

impl Operator {
    pub fn new(script: OperatorScript, scenario: &Scenario, plans: &[ProMP]) -> Result<Self> {
        script.validate()?;
        let n = scenario.pose_dim();
        let plan = match &script {
            OperatorScript::PlanFollower { plan, .. } | OperatorScript::Defector { plan, .. } => {
                Some(plans.get(*plan).cloned().ok_or_else(|| {
                    GuideError::Domain(format!("plan {plan} not in mixture of {}", plans.len()))
                })?)
            }
            _ => None,
        };
        let end = match &plan {
            Some(p) => p.pose_at_phase(1.0)?.mean,
            None => DVector::from_column_slice(&scenario.start_pose),
        };
        let (idx, _) = scenario.closest_target(end.as_slice());
        let target = DVector::from_column_slice(&scenario.target_poses[idx]);
        // average speed of the reference along the plan, reused after defection
        let ref_speed = match (&plan, &script) {
            (Some(p), OperatorScript::Defector { speed, .. }) => {
                let grid = scenario.grid();
                let traj = p.mean_trajectory(&grid)?;
                let len: f64 = traj.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum();
                len * speed
            }
            _ => 0.0,
        };
        Ok(Self { script, plan, aim: DVector::zeros(n), target, defect_from: None, ref_speed })
    }

    pub fn script(&self) -> &OperatorScript {
        &self.script
    }

    fn plan_ref(&self, nu: f64) -> Result<DVector<f64>> {
        let p = self.plan.as_ref().expect("plan-based script");
        Ok(p.pose_at_phase(nu.clamp(0.0, 1.0))?.mean)
    }

    /// Operator force at time `t` for pose `x` and velocity `v`.
    pub fn force(
        &mut self,
        t: f64,
        dt: f64,
        x: &DVector<f64>,
        v: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<DVector<f64>> {
        let n = x.len();
        match self.script.clone() {
            OperatorScript::PlanFollower { noise, speed, .. } => {
                self.step_aim(noise, dt, rng);
                let nu = t * speed;
                let reference = if nu < 1.0 { self.plan_ref(nu)? } else { self.target.clone() };
                Ok((reference + &self.aim - x) * TRACK_KP - v * TRACK_KD)
            }
            OperatorScript::Defector { defect_phase, alternate, speed, .. } => {
                let nu = t * speed;
                let reference = if nu < defect_phase {
                    self.plan_ref(nu)?
                } else {
                    let (from, t0) = match &self.defect_from {
                        Some(d) => d.clone(),
                        None => {
                            let d = (self.plan_ref(defect_phase)?, t);
                            self.defect_from = Some(d.clone());
                            d
                        }
                    };
                    let goal = DVector::from_column_slice(&alternate);
                    let delta = &goal - &from;
                    let dist = delta.norm();
                    let travelled = (self.ref_speed * (t - t0)).min(dist);
                    if dist > 0.0 {
                        from + delta * (travelled / dist)
                    } else {
                        goal
                    }
                };
                Ok((reference - x) * TRACK_KP - v * TRACK_KD)
            }
            OperatorScript::PassiveMass { .. } => Ok(DVector::zeros(n)),
            OperatorScript::Wanderer { sigma } => {
                let kick = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                Ok(kick * (sigma / dt.sqrt()) - v * 0.5)
            }
        }
    }

    /// Ornstein-Uhlenbeck update of the aiming error with stationary std `noise`
    /// on positions and `ROT_NOISE_PER_M * noise` on angles.
    fn step_aim(&mut self, noise: f64, dt: f64, rng: &mut ChaCha8Rng) {
        let n = self.aim.len();
        let decay = dt / AIM_TAU;
        for k in 0..n {
            let sd = if k >= 3 { noise * ROT_NOISE_PER_M } else { noise };
            let z: f64 = rng.sample(StandardNormal);
            self.aim[k] += -decay * self.aim[k] + sd * (2.0 * decay).sqrt() * z;
        }
    }
}
