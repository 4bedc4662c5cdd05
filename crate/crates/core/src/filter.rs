//! Bayes filter over the operator's plan and per-plan phase.
//!
//! The hidden state is a plan `o` (freelance included, always last) and a
//! discretized phase per plan. Each tick the phase prior is the shifted
//! posterior mixed with a uniform reset, plans switch with probability
//! `p_switch`, and emissions are the plan Gaussians with their covariance
//! inflated by `emission_scale`. All products are taken in log space.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GuideError, Result};
use crate::field::GuideGeometry;
use crate::math::logsumexp;
use crate::trajectory::{GuideMixture, PhaseGrid};

/// Entries are floored to this value before every renormalization.
pub const BELIEF_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub p_progress: f64,
    /// Forward shift per tick in phase-index units.
    pub delta_nu: f64,
    pub p_switch: f64,
    /// Covariance multiplier for emissions.
    pub emission_scale: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { p_progress: 0.8, delta_nu: 0.0, p_switch: 1e-20, emission_scale: 25.0 }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.p_progress)
            && self.delta_nu >= 0.0
            && self.delta_nu.is_finite()
            && (0.0..=1.0).contains(&self.p_switch)
            && self.emission_scale >= 1.0
            && self.emission_scale.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GuideError::Domain(format!("invalid filter parameters {self:?}")))
        }
    }
}

/// Moves mass forward by `delta_nu` indices without renormalizing.
///
/// Mass at index `j` splits between `j + floor(delta_nu)` and
/// `j + ceil(delta_nu)` with fractions `1 - frac` and `frac`; anything that
/// would land past the last index stays on the last index.
pub fn shift_mass(p: &[f64], delta_nu: f64) -> Result<Vec<f64>> {
    if !(delta_nu >= 0.0 && delta_nu.is_finite()) {
        return Err(GuideError::Domain(format!("shift must be finite and >= 0, got {delta_nu}")));
    }
    let len = p.len();
    if len == 0 {
        return Ok(Vec::new());
    }
    let last = len - 1;
    let whole = delta_nu.floor();
    let frac = delta_nu - whole;
    let step = if whole >= len as f64 { len } else { whole as usize };
    let mut out = vec![0.0; len];
    for (j, &mass) in p.iter().enumerate() {
        let lo = (j + step).min(last);
        if frac == 0.0 {
            out[lo] += mass;
        } else {
            let hi = (j + step + 1).min(last);
            let ahead = mass * frac;
            out[lo] += mass - ahead;
            out[hi] += ahead;
        }
    }
    Ok(out)
}

/// Shifting operator: [`shift_mass`] followed by renormalization.
pub fn shift(p: &[f64], delta_nu: f64) -> Result<Vec<f64>> {
    let mut out = shift_mass(p, delta_nu)?;
    crate::math::normalize(&mut out)
        .ok_or_else(|| GuideError::Domain("cannot shift an empty or zero distribution".into()))?;
    Ok(out)
}

/// Phase prior: progress by `delta_nu` with probability `p_progress`, otherwise a uniform reset.
pub fn phase_prior(post_prev: &[f64], params: &FilterParams) -> Result<Vec<f64>> {
    let shifted = shift(post_prev, params.delta_nu)?;
    let reset = (1.0 - params.p_progress) / post_prev.len() as f64;
    Ok(shifted.iter().map(|s| params.p_progress * s + reset).collect())
}

/// Outcome of a Bayes update that may have to fall back to a reset.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub belief: Vec<f64>,
    /// True when the evidence vanished and the belief was reset.
    pub reset: bool,
}

fn floor_and_normalize(p: &mut [f64]) {
    for v in p.iter_mut() {
        *v = v.max(BELIEF_FLOOR);
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
}

fn posterior_from_log(log_prior: &[f64], log_lik: &[f64], fallback: &[f64]) -> (Posterior, f64) {
    let joint: Vec<f64> = log_prior.iter().zip(log_lik).map(|(a, b)| a + b).collect();
    let z = logsumexp(&joint);
    if !z.is_finite() {
        return (Posterior { belief: fallback.to_vec(), reset: true }, z);
    }
    let mut belief: Vec<f64> = joint.iter().map(|j| (j - z).exp()).collect();
    floor_and_normalize(&mut belief);
    (Posterior { belief, reset: false }, z)
}

/// Phase posterior `prior * emission`, renormalized; vanishing evidence resets to uniform.
pub fn phase_posterior(prior: &[f64], emissions: &[f64]) -> Result<Posterior> {
    check_dim(prior.len(), emissions.len())?;
    if emissions.iter().any(|e| !(*e >= 0.0)) {
        return Err(GuideError::Domain("emissions must be non-negative".into()));
    }
    let lp: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
    let le: Vec<f64> = emissions.iter().map(|e| e.ln()).collect();
    let uniform = vec![1.0 / prior.len() as f64; prior.len()];
    Ok(posterior_from_log(&lp, &le, &uniform).0)
}

/// Plan transition: stay with probability `1 - p_switch`, otherwise move uniformly to another plan.
pub fn plan_transition(p: &[f64], p_switch: f64) -> Result<Vec<f64>> {
    let n = p.len();
    if p_switch == 0.0 {
        return Ok(p.to_vec());
    }
    if n < 2 {
        return Err(GuideError::Domain("plan switching needs at least two plans".into()));
    }
    let total: f64 = p.iter().sum();
    let other = p_switch / (n - 1) as f64;
    Ok(p.iter().map(|&po| (1.0 - p_switch) * po + other * (total - po)).collect())
}

/// Plan posterior `prior * evidence`; vanishing evidence resets to `fallback`.
pub fn plan_posterior(prior: &[f64], evidence: &[f64], fallback: &[f64]) -> Result<Posterior> {
    check_dim(prior.len(), evidence.len())?;
    check_dim(prior.len(), fallback.len())?;
    if evidence.iter().any(|e| !(*e >= 0.0)) {
        return Err(GuideError::Domain("evidence must be non-negative".into()));
    }
    let lp: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
    let le: Vec<f64> = evidence.iter().map(|e| e.ln()).collect();
    Ok(posterior_from_log(&lp, &le, fallback).0)
}

/// Emission density of `x` at (plan, phase): the pose Gaussian with
/// covariance scaled by `scale`. The freelance plan is never rescaled.
pub fn emission_likelihood(
    x: &DVector<f64>,
    plan: usize,
    nu: f64,
    mix: &GuideMixture,
    scale: f64,
) -> Result<f64> {
    if !(scale >= 1.0) {
        return Err(GuideError::Domain(format!("emission scale must be >= 1, got {scale}")));
    }
    check_dim(mix.basis().n, x.len())?;
    let g = if plan == mix.freelance_index() {
        mix.freelance().prepare(1.0)?
    } else {
        mix.components()
            .get(plan)
            .ok_or_else(|| GuideError::Domain(format!("no plan {plan}")))?
            .pose_at_phase(nu)?
            .prepare(scale)?
    };
    Ok(g.ln_pdf(x).exp())
}

fn log_emission(geo: &GuideGeometry, plan: usize, phase: usize, x: &DVector<f64>, scale: f64) -> f64 {
    let g = geo.prepared(plan, phase);
    if plan + 1 == geo.n_plans() {
        return g.ln_pdf(x);
    }
    let n = x.len() as f64;
    g.log_norm - 0.5 * n * scale.ln() - 0.5 * g.mahalanobis_sq(x) / scale
}

/// Belief over plans (freelance last) and, per plan, over its phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub plan_belief: Vec<f64>,
    pub phase_beliefs: Vec<Vec<f64>>,
}

/// Resets that happened during one filter update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterEvents {
    pub phase_resets: Vec<usize>,
    pub plan_reset: bool,
}

impl BeliefState {
    /// Plan belief from the mixture weights, uniform phase beliefs.
    pub fn from_mixture(mix: &GuideMixture, grid: &PhaseGrid) -> Self {
        let mut phase_beliefs: Vec<Vec<f64>> =
            (0..mix.n_plans()).map(|_| vec![1.0 / grid.len() as f64; grid.len()]).collect();
        phase_beliefs.push(vec![1.0]);
        Self { plan_belief: mix.weights(), phase_beliefs }
    }

    pub fn n_plans(&self) -> usize {
        self.plan_belief.len()
    }

    pub fn freelance_belief(&self) -> f64 {
        *self.plan_belief.last().expect("belief always holds the freelance plan")
    }

    /// One filter tick: transition, phase priors, emissions at `x`, posteriors.
    pub fn update(
        &mut self,
        geo: &GuideGeometry,
        x: &DVector<f64>,
        params: &FilterParams,
        reset_weights: &[f64],
    ) -> Result<FilterEvents> {
        check_dim(geo.n_plans(), self.n_plans())?;
        check_dim(geo.dim(), x.len())?;
        let mut events = FilterEvents::default();
        // a lone freelance plan has nowhere to switch to
        let prior_plans = if self.n_plans() == 1 {
            self.plan_belief.clone()
        } else {
            plan_transition(&self.plan_belief, params.p_switch)?
        };
        let mut log_evidence = Vec::with_capacity(self.n_plans());
        for o in 0..self.n_plans() {
            let prior = phase_prior(&self.phase_beliefs[o], params)?;
            let lp: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
            let le: Vec<f64> = (0..prior.len())
                .map(|i| log_emission(geo, o, i, x, params.emission_scale))
                .collect();
            let uniform = vec![1.0 / prior.len() as f64; prior.len()];
            let (post, z) = posterior_from_log(&lp, &le, &uniform);
            if post.reset {
                events.phase_resets.push(o);
            }
            self.phase_beliefs[o] = post.belief;
            log_evidence.push(z);
        }
        let lp: Vec<f64> = prior_plans.iter().map(|p| p.ln()).collect();
        let (post, _) = posterior_from_log(&lp, &log_evidence, reset_weights);
        events.plan_reset = post.reset;
        self.plan_belief = post.belief;
        Ok(events)
    }

    /// Next-step phase prior per plan, used for the haptic cues instead of the posterior.
    pub fn cue_belief(&self, params: &FilterParams) -> Result<Vec<Vec<f64>>> {
        self.phase_beliefs.iter().map(|p| phase_prior(p, params)).collect()
    }
}

/// Free-function form of [`BeliefState::cue_belief`].
pub fn cue_belief(state: &BeliefState, params: &FilterParams) -> Result<Vec<Vec<f64>>> {
    state.cue_belief(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn worked_shift_examples() {
        assert_eq!(shift(&[1.0, 0.0, 0.0], 1.5).unwrap(), vec![0.0, 0.5, 0.5]);
        assert_eq!(shift(&[1.0, 0.0, 0.0], 2.0).unwrap(), vec![0.0, 0.0, 1.0]);
        // the last two phases both collapse onto the final one
        assert_eq!(shift(&[0.0, 1.0, 0.0], 1.5).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_shift_is_identity() {
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(shift(&p, 0.0).unwrap(), p.to_vec());
    }

    #[test]
    fn negative_shift_rejected() {
        assert!(shift(&[1.0], -0.5).is_err());
        assert!(shift(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn huge_shift_saturates() {
        assert_eq!(shift(&[0.25, 0.25, 0.5], 1e300).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn phase_prior_examples() {
        let reset = FilterParams { p_progress: 0.0, ..Default::default() };
        assert_eq!(phase_prior(&[1.0, 0.0, 0.0, 0.0], &reset).unwrap(), vec![0.25; 4]);

        let keep = FilterParams { p_progress: 1.0, delta_nu: 0.0, ..Default::default() };
        assert_eq!(phase_prior(&[0.2, 0.8], &keep).unwrap(), vec![0.2, 0.8]);

        let p = FilterParams { p_progress: 0.8, delta_nu: 0.5, ..Default::default() };
        let out = phase_prior(&[1.0, 0.0, 0.0], &p).unwrap();
        let third = 0.2 / 3.0;
        assert_relative_eq!(out[0], 0.4 + third, epsilon = 1e-15);
        assert_relative_eq!(out[1], 0.4 + third, epsilon = 1e-15);
        assert_relative_eq!(out[2], third, epsilon = 1e-15);
    }

    #[test]
    fn phase_posterior_examples() {
        let prior = [0.2, 0.3, 0.5];
        let post = phase_posterior(&prior, &[0.7, 0.7, 0.7]).unwrap();
        for (a, b) in post.belief.iter().zip(prior) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        let post = phase_posterior(&prior, &[0.0, 1.0, 0.0]).unwrap();
        assert!(post.belief[1] > 1.0 - 1e-11);

        let post = phase_posterior(&[0.5, 0.5], &[2.0, 1.0]).unwrap();
        assert_relative_eq!(post.belief[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(post.belief[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn all_zero_emission_resets_to_uniform() {
        let post = phase_posterior(&[0.9, 0.1], &[0.0, 0.0]).unwrap();
        assert!(post.reset);
        assert_eq!(post.belief, vec![0.5, 0.5]);
    }

    #[test]
    fn plan_transition_examples() {
        assert_eq!(plan_transition(&[0.3, 0.7], 0.0).unwrap(), vec![0.3, 0.7]);
        let p = plan_transition(&[1.0, 0.0], 0.1).unwrap();
        assert_relative_eq!(p[0], 0.9, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.1, epsilon = 1e-15);
        let u = plan_transition(&[0.25; 4], 0.37).unwrap();
        for v in u {
            assert_relative_eq!(v, 0.25, epsilon = 1e-15);
        }
        assert!(plan_transition(&[1.0], 0.1).is_err());
    }

    #[test]
    fn plan_posterior_examples() {
        let post = plan_posterior(&[0.5, 0.5], &[3.0, 1.0], &[0.5, 0.5]).unwrap();
        assert_relative_eq!(post.belief[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(post.belief[1], 0.25, epsilon = 1e-12);

        let prior = [0.1, 0.6, 0.3];
        let same = plan_posterior(&prior, &[2.0; 3], &prior).unwrap();
        for (a, b) in same.belief.iter().zip(prior) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }

        let hot = plan_posterior(&prior, &[0.0, 0.0, 1.0], &prior).unwrap();
        assert!(hot.belief[2] > 1.0 - 1e-11);

        let reset = plan_posterior(&prior, &[0.0; 3], &[0.2, 0.2, 0.6]).unwrap();
        assert!(reset.reset);
        assert_eq!(reset.belief, vec![0.2, 0.2, 0.6]);
    }

    #[test]
    fn cue_belief_rules() {
        let state = BeliefState {
            plan_belief: vec![0.7, 0.3],
            phase_beliefs: vec![vec![0.0, 1.0, 0.0, 0.0, 0.0], vec![1.0]],
        };
        let still = FilterParams { p_progress: 0.8, delta_nu: 0.0, ..Default::default() };
        let cue = state.cue_belief(&still).unwrap();
        for (c, p) in cue[0].iter().zip(&state.phase_beliefs[0]) {
            assert_relative_eq!(*c, 0.8 * p + 0.2 / 5.0, epsilon = 1e-15);
        }
        assert_eq!(cue[1], vec![1.0]);

        let moving = FilterParams { p_progress: 0.8, delta_nu: 1.5, ..Default::default() };
        let cue = state.cue_belief(&moving).unwrap();
        let centre: f64 = cue[0].iter().enumerate().map(|(i, p)| i as f64 * p).sum();
        assert!(centre > 1.0);
    }
}
