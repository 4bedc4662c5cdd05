//! Maximum-entropy learning of a mixture of ProMPs.
//!
//! Each iteration samples every component, fits a diagonal quadratic model of
//! `r(w) + log q(o|w)` to those samples and moves the component towards the
//! Gaussian that model induces, under a KL trust region. Component weights are
//! a softmax of the per-component evidence.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GuideError, Result};
use crate::math::{entropy_diag_gaussian, kl_diag_gaussian, ln_diag_gaussian, log_normalize, logsumexp};
use crate::scenario::Scenario;
use crate::trajectory::{fit_weights, BasisConfig, GuideMixture, ProMP};

/// Smallest plan weight kept after a weight update, so that no plan becomes
/// unreachable for the intent filter.
pub const MIN_PLAN_WEIGHT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub n_components: usize,
    pub samples_per_component: usize,
    pub max_iterations: usize,
    /// Bound on KL(new || old) for each component update.
    pub kl_trust_region: f64,
    /// Ridge strength for the surrogate regression, relative to the sample count.
    pub ridge: f64,
    pub var_floor: f64,
    pub var_cap: f64,
    pub weight_temperature: f64,
    pub seed: u64,
    /// Initial weight variance as a fraction of `var_cap`.
    pub init_var_fraction: f64,
    /// Standard deviation of the noise added to the straight-line initial means.
    /// Defaults to the initial standard deviation when absent.
    pub init_mean_std: Option<f64>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            n_components: 3,
            samples_per_component: 100,
            max_iterations: 100,
            kl_trust_region: 0.5,
            ridge: 1e-6,
            var_floor: 1e-6,
            var_cap: 100.0,
            weight_temperature: 1.0,
            seed: 0,
            init_var_fraction: 0.1,
            init_mean_std: None,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self, basis: &BasisConfig) -> Result<()> {
        let need = 2 * basis.weight_len() + 1;
        if self.samples_per_component < need {
            return Err(GuideError::Domain(format!(
                "samples_per_component must be at least {need} for {} weights",
                basis.weight_len()
            )));
        }
        if !(self.kl_trust_region >= 0.0) {
            return Err(GuideError::Domain("kl_trust_region must be nonnegative".into()));
        }
        if !(self.var_floor > 0.0 && self.var_cap > self.var_floor) {
            return Err(GuideError::Domain("need 0 < var_floor < var_cap".into()));
        }
        if !(self.ridge >= 0.0 && self.weight_temperature >= 0.0) {
            return Err(GuideError::Domain("ridge and temperature must be nonnegative".into()));
        }
        if !(self.init_var_fraction > 0.0 && self.init_var_fraction <= 1.0) {
            return Err(GuideError::Domain("init_var_fraction must lie in (0, 1]".into()));
        }
        if self.n_components == 0 {
            return Err(GuideError::Domain("n_components must be positive".into()));
        }
        Ok(())
    }
}

/// Diagnostics of one learner iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean reward of each component's samples.
    pub expected_reward: Vec<f64>,
    /// Monte-Carlo entropy of the weight-space mixture.
    pub entropy: f64,
    /// Plan weights after the update.
    pub weights: Vec<f64>,
    /// KL(new || old) of each component update.
    pub kl_steps: Vec<f64>,
    /// Expected reward plus entropy, before the update.
    pub objective: f64,
    /// Components that used the weighted-moment fallback.
    pub fallbacks: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnerReport {
    pub records: Vec<IterationRecord>,
}

impl LearnerReport {
    /// One row per iteration and component.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,component,expected_reward,entropy,weight,kl_step\n");
        for r in &self.records {
            for o in 0..r.expected_reward.len() {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.iteration, o, r.expected_reward[o], r.entropy, r.weights[o], r.kl_steps[o]
                ));
            }
        }
        out
    }
}

/// Diagonal quadratic model `-1/2 sum a_j w_j^2 + sum b_j w_j + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Ridge regression of `targets` on `[z^2, z]` with `z = (w - mean) / sd`.
/// Returns `None` when the fit is singular or non-finite.
pub fn fit_surrogate(
    samples: &[Vec<f64>],
    targets: &[f64],
    mean: &[f64],
    var: &[f64],
    ridge: f64,
) -> Option<Surrogate> {
    let d = mean.len();
    let s = samples.len();
    if s == 0 || targets.len() != s {
        return None;
    }
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let mut x = DMatrix::zeros(s, 2 * d);
    for (i, w) in samples.iter().enumerate() {
        for j in 0..d {
            let z = (w[j] - mean[j]) / sd[j];
            x[(i, j)] = z * z;
            x[(i, d + j)] = z;
        }
    }
    // centering removes the intercept from the regression
    for c in 0..2 * d {
        let m = x.column(c).mean();
        x.column_mut(c).add_scalar_mut(-m);
    }
    let y_mean = targets.iter().sum::<f64>() / s as f64;
    let y_sd = (targets.iter().map(|t| (t - y_mean).powi(2)).sum::<f64>() / s as f64).sqrt();
    if !y_sd.is_finite() {
        return None;
    }
    if y_sd == 0.0 {
        return Some(Surrogate { a: vec![0.0; d], b: vec![0.0; d] });
    }
    let y = DVector::from_iterator(s, targets.iter().map(|t| (t - y_mean) / y_sd));
    let mut gram = x.transpose() * &x;
    for c in 0..2 * d {
        gram[(c, c)] += ridge * s as f64;
    }
    let coef = Cholesky::new(gram)?.solve(&(x.transpose() * y));
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for j in 0..d {
        let alpha = y_sd * coef[j];
        let beta = y_sd * coef[d + j];
        a[j] = -2.0 * alpha / var[j];
        b[j] = -2.0 * alpha * mean[j] / var[j] + beta / sd[j];
    }
    if a.iter().chain(&b).all(|v| v.is_finite()) {
        Some(Surrogate { a, b })
    } else {
        None
    }
}

/// Result of a single component update.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentStep {
    pub promp: ProMP,
    pub kl: f64,
    pub fallback: bool,
}

fn trust_region_candidate(
    s: &Surrogate,
    mean: &[f64],
    var: &[f64],
    eta: f64,
    floor: f64,
    cap: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut m = Vec::with_capacity(mean.len());
    let mut v = Vec::with_capacity(mean.len());
    for j in 0..mean.len() {
        let lam = 1.0 / var[j];
        let p = s.a[j] + eta * lam;
        m.push((s.b[j] + eta * lam * mean[j]) / p);
        v.push(((1.0 + eta) / p).clamp(floor, cap));
    }
    (m, v)
}

/// Trust-region Gaussian update towards `exp(surrogate)` with unit entropy bonus.
fn trust_region_step(
    s: &Surrogate,
    mean: &[f64],
    var: &[f64],
    eps: f64,
    floor: f64,
    cap: f64,
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let kl_at = |eta: f64| {
        let (m, v) = trust_region_candidate(s, mean, var, eta, floor, cap);
        let kl = kl_diag_gaussian(&m, &v, mean, var);
        (m, v, if kl.is_finite() { kl } else { f64::INFINITY })
    };
    // precision a + eta/var must stay positive in every coordinate
    let eta_min = s.a.iter().zip(var).map(|(a, v)| (-a * v).max(0.0)).fold(0.0, f64::max);
    let mut lo = if eta_min > 0.0 { eta_min * (1.0 + 1e-9) + 1e-300 } else { 0.0 };
    let first = kl_at(lo);
    if first.2 <= eps {
        return Some(first);
    }
    let mut hi = (lo * 2.0).max(1e-3);
    while kl_at(hi).2 > eps {
        lo = hi;
        hi *= 4.0;
        if hi > 1e18 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if kl_at(mid).2 > eps {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Some(kl_at(hi))
}

/// Moves towards the exponentially weighted sample moments, shrinking the
/// step until the KL bound holds.
pub(crate) fn weighted_moment_step(
    samples: &[Vec<f64>],
    targets: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
    floor: f64,
    cap: f64,
) -> (Vec<f64>, Vec<f64>, f64) {
    let d = mean.len();
    let mut lw: Vec<f64> = targets.iter().map(|t| if t.is_finite() { *t } else { f64::NEG_INFINITY }).collect();
    // temper so that the weights are not dominated by a single sample
    let finite: Vec<f64> = lw.iter().copied().filter(|v| v.is_finite()).collect();
    let mu = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    let sd = (finite.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / finite.len().max(1) as f64).sqrt();
    if sd > 0.0 {
        lw.iter_mut().for_each(|v| *v /= sd);
    }
    log_normalize(&mut lw);
    let wts: Vec<f64> = lw.iter().map(|l| if l.is_finite() { l.exp() } else { 0.0 }).collect();
    let mut tm = vec![0.0; d];
    let mut tv = vec![0.0; d];
    for (w, s) in wts.iter().zip(samples) {
        for j in 0..d {
            tm[j] += w * s[j];
        }
    }
    for (w, s) in wts.iter().zip(samples) {
        for j in 0..d {
            tv[j] += w * (s[j] - tm[j]).powi(2);
        }
    }
    let at = |t: f64| {
        let m: Vec<f64> = (0..d).map(|j| mean[j] + t * (tm[j] - mean[j])).collect();
        let v: Vec<f64> = (0..d).map(|j| (var[j] + t * (tv[j] - var[j])).clamp(floor, cap)).collect();
        let kl = kl_diag_gaussian(&m, &v, mean, var);
        (m, v, kl)
    };
    let full = at(1.0);
    if full.2 <= eps {
        return full;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if at(mid).2 <= eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo)
}

/// Updates one component from its samples.
///
/// `rewards` are episodic rewards and `log_resp` the log responsibilities
/// `log q(o|w)` of this component for each sample.
pub fn component_update(
    component: &ProMP,
    samples: &[Vec<f64>],
    rewards: &[f64],
    log_resp: &[f64],
    cfg: &LearnerConfig,
) -> Result<ComponentStep> {
    let d = component.mean_w().len();
    check_dim(samples.len(), rewards.len())?;
    check_dim(samples.len(), log_resp.len())?;
    if samples.len() < 2 * d + 1 {
        return Err(GuideError::Learner(format!(
            "{} samples are too few for {d} weights",
            samples.len()
        )));
    }
    for s in samples {
        check_dim(d, s.len())?;
    }
    if cfg.kl_trust_region == 0.0 {
        return Ok(ComponentStep { promp: component.clone(), kl: 0.0, fallback: false });
    }
    let targets: Vec<f64> = rewards.iter().zip(log_resp).map(|(r, l)| r + l).collect();
    let (mean, var) = (component.mean_w(), component.var_w());
    let (floor, cap) = (cfg.var_floor, cfg.var_cap);
    let old_var: Vec<f64> = var.to_vec();
    let tr = fit_surrogate(samples, &targets, mean, var, cfg.ridge)
        .and_then(|s| trust_region_step(&s, mean, &old_var, cfg.kl_trust_region, floor, cap));
    let (m, v, kl, fallback) = match tr {
        Some((m, v, kl)) => (m, v, kl, false),
        None => {
            let (m, v, kl) =
                weighted_moment_step(samples, &targets, mean, var, cfg.kl_trust_region, floor, cap);
            (m, v, kl, true)
        }
    };
    Ok(ComponentStep { promp: ProMP::new(*component.basis(), m, v)?, kl, fallback })
}

/// Softmax of `temperature * evidence` over the plans, leaving the freelance
/// weight of `mixture` in place. Returns the full log-weight vector.
pub fn weight_update(mixture: &GuideMixture, evidence: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_dim(mixture.n_plans(), evidence.len())?;
    if evidence.iter().any(|e| !e.is_finite()) {
        return Err(GuideError::Domain("evidence must be finite".into()));
    }
    let mut plan: Vec<f64> = evidence.iter().map(|e| temperature * e).collect();
    log_normalize(&mut plan);
    let floor = MIN_PLAN_WEIGHT.ln();
    plan.iter_mut().for_each(|l| *l = l.max(floor));
    log_normalize(&mut plan);
    let free = *mixture.log_weights().last().expect("freelance weight");
    let rest = (-free.exp()).ln_1p();
    let mut out: Vec<f64> = plan.iter().map(|l| l + rest).collect();
    out.push(free);
    Ok(out)
}

/// Log density of the weight-space mixture of plans (freelance excluded).
fn plan_log_densities(components: &[ProMP], plan_log_w: &[f64], w: &[f64]) -> Vec<f64> {
    components
        .iter()
        .zip(plan_log_w)
        .map(|(c, lw)| lw + ln_diag_gaussian(w, c.mean_w(), c.var_w()))
        .collect()
}

fn plan_log_weights(mixture: &GuideMixture) -> Vec<f64> {
    let mut lw = mixture.log_weights()[..mixture.n_plans()].to_vec();
    log_normalize(&mut lw);
    lw
}

/// Monte-Carlo entropy of the weight-space mixture of plans.
pub fn entropy_estimate<R: Rng + ?Sized>(mixture: &GuideMixture, n_samples: usize, rng: &mut R) -> Result<f64> {
    if n_samples == 0 || mixture.n_plans() == 0 {
        return Err(GuideError::Domain("need at least one sample and one plan".into()));
    }
    let lw = plan_log_weights(mixture);
    let w: Vec<f64> = lw.iter().map(|l| l.exp()).collect();
    let comps = mixture.components();
    let mut acc = 0.0;
    for _ in 0..n_samples {
        let u: f64 = rng.random();
        let mut o = 0;
        let mut c = w[0];
        while u > c && o + 1 < w.len() {
            o += 1;
            c += w[o];
        }
        let x = comps[o].sample_weights(rng);
        acc += logsumexp(&plan_log_densities(comps, &lw, &x));
    }
    Ok(-acc / n_samples as f64)
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `n` samples with finite reward, redrawing rejected ones.
fn draw_batch<F>(component: &ProMP, n: usize, reward: &F, rng: &mut ChaCha8Rng) -> Result<(Vec<Vec<f64>>, Vec<f64>)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut samples = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut attempts = 0;
    while samples.len() < n {
        let need = n - samples.len();
        let batch: Vec<Vec<f64>> = (0..need).map(|_| component.sample_weights(rng)).collect();
        let vals: Vec<f64> = batch.par_iter().map(|w| reward(w)).collect();
        for (w, r) in batch.into_iter().zip(vals) {
            if r.is_finite() {
                samples.push(w);
                rewards.push(r);
            }
        }
        attempts += 1;
        if attempts > 20 {
            return Err(GuideError::Learner(format!(
                "reward was non-finite for too many samples ({} of {n} usable)",
                samples.len()
            )));
        }
    }
    Ok((samples, rewards))
}

/// Learns a mixture of plans starting from `init`. The freelance component
/// and its weight are carried over unchanged.
pub fn learn_mixture<F>(reward: F, init: &GuideMixture, cfg: &LearnerConfig) -> Result<(GuideMixture, LearnerReport)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate(init.basis())?;
    if init.n_plans() == 0 {
        return Err(GuideError::Learner("initial mixture has no plans".into()));
    }
    let mut mix = init.clone();
    let mut report = LearnerReport::default();
    for it in 0..cfg.max_iterations {
        let comps = mix.components().to_vec();
        let lw = plan_log_weights(&mix);
        let mut batches = Vec::with_capacity(comps.len());
        for (o, c) in comps.iter().enumerate() {
            let mut rng = substream(cfg.seed, ((it as u64) << 20) | o as u64);
            batches.push(draw_batch(c, cfg.samples_per_component, &reward, &mut rng)?);
        }
        let mut new_comps = Vec::with_capacity(comps.len());
        let mut evidence = Vec::with_capacity(comps.len());
        let mut expected = Vec::with_capacity(comps.len());
        let mut kls = Vec::with_capacity(comps.len());
        let mut fallbacks = Vec::new();
        let mut entropy = 0.0;
        for (o, (samples, rewards)) in batches.iter().enumerate() {
            let mut log_resp = Vec::with_capacity(samples.len());
            let mut log_q = 0.0;
            for w in samples {
                let dens = plan_log_densities(&comps, &lw, w);
                let total = logsumexp(&dens);
                log_resp.push(dens[o] - total);
                log_q += total;
            }
            let n = samples.len() as f64;
            entropy -= lw[o].exp() * log_q / n;
            let mean_r = rewards.iter().sum::<f64>() / n;
            let mean_resp = log_resp.iter().sum::<f64>() / n;
            expected.push(mean_r);
            evidence.push(mean_r + mean_resp + entropy_diag_gaussian(comps[o].var_w()));
            let step = component_update(&comps[o], samples, rewards, &log_resp, cfg)?;
            if step.fallback {
                fallbacks.push(o);
            }
            kls.push(step.kl);
            new_comps.push(step.promp);
        }
        let objective = lw.iter().zip(&expected).map(|(l, r)| l.exp() * r).sum::<f64>() + entropy;
        let log_weights = weight_update(&mix, &evidence, cfg.weight_temperature)?;
        mix = GuideMixture::new(*mix.basis(), new_comps, log_weights, mix.freelance().clone())?;
        report.records.push(IterationRecord {
            iteration: it,
            expected_reward: expected,
            entropy,
            weights: mix.weights()[..mix.n_plans()].to_vec(),
            kl_steps: kls,
            objective,
            fallbacks,
        });
    }
    Ok((mix, report))
}

/// Straight lines from the start to each target (cycling through targets),
/// perturbed by seeded noise, with variances at `init_var_fraction * var_cap`.
pub fn initial_mixture(scenario: &Scenario, cfg: &LearnerConfig) -> Result<GuideMixture> {
    cfg.validate(&scenario.basis)?;
    let grid = scenario.grid();
    let basis = scenario.basis;
    let var0 = cfg.init_var_fraction * cfg.var_cap;
    let noise = cfg.init_mean_std.unwrap_or(var0.sqrt());
    let mut rng = substream(cfg.seed, u64::MAX);
    let mut comps = Vec::with_capacity(cfg.n_components);
    for o in 0..cfg.n_components {
        let target = &scenario.target_poses[o % scenario.target_poses.len()];
        let line: Vec<DVector<f64>> = grid
            .values()
            .iter()
            .map(|&nu| {
                DVector::from_fn(basis.n, |d, _| scenario.start_pose[d] + nu * (target[d] - scenario.start_pose[d]))
            })
            .collect();
        let w0 = if grid.len() >= basis.m {
            fit_weights(&line, &grid, &basis, 1e-8)?
        } else {
            fit_weights(&line, &grid, &basis, 1e-3)?
        };
        let mean: Vec<f64> = w0
            .iter()
            .map(|w| {
                let z: f64 = rng.sample(StandardNormal);
                w + noise * z
            })
            .collect();
        comps.push(ProMP::new(basis, mean, vec![var0; basis.weight_len()])?);
    }
    let weights = vec![1.0; comps.len()];
    GuideMixture::from_plans(basis, comps, &weights, scenario.freelance()?, scenario.freelance_weight)
}

/// Initial mixture plus learning against the scenario's episodic reward.
pub fn plan_scenario(scenario: &Scenario) -> Result<(GuideMixture, LearnerReport)> {
    let init = initial_mixture(scenario, &scenario.learner)?;
    learn_mixture(
        |w: &[f64]| scenario.episodic_reward(w).unwrap_or(f64::NAN),
        &init,
        &scenario.learner,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::PoseGaussian;
    use approx::assert_relative_eq;

    fn single(mean: Vec<f64>, var: Vec<f64>) -> GuideMixture {
        let d = mean.len();
        let basis = BasisConfig::new(1, d, 1.0).unwrap();
        let free = PoseGaussian::isotropic(DVector::zeros(d), 100.0).unwrap();
        GuideMixture::from_plans(basis, vec![ProMP::new(basis, mean, var).unwrap()], &[1.0], free, 0.05).unwrap()
    }

    #[test]
    fn surrogate_recovers_exact_quadratic() {
        let mean = vec![0.3, -0.2];
        let var: Vec<f64> = vec![0.5, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = [1.5, 0.25];
        let b = [0.7, -0.4];
        let samples: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..2).map(|j| mean[j] + var[j].sqrt() * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let targets: Vec<f64> = samples
            .iter()
            .map(|w| (0..2).map(|j| -0.5 * a[j] * w[j] * w[j] + b[j] * w[j]).sum::<f64>() + 3.0)
            .collect();
        let s = fit_surrogate(&samples, &targets, &mean, &var, 0.0).unwrap();
        for j in 0..2 {
            assert_relative_eq!(s.a[j], a[j], epsilon = 1e-9);
            assert_relative_eq!(s.b[j], b[j], epsilon = 1e-9);
        }
    }

    #[test]
    fn weight_update_softmax_example() {
        let basis = BasisConfig::new(1, 1, 1.0).unwrap();
        let c = ProMP::new(basis, vec![0.0], vec![1.0]).unwrap();
        let free = PoseGaussian::isotropic(DVector::zeros(1), 100.0).unwrap();
        let mix = GuideMixture::from_plans(basis, vec![c.clone(), c], &[1.0, 1.0], free, 0.05).unwrap();
        let lw = weight_update(&mix, &[1.0, 0.0], 1.0).unwrap();
        let plan = [lw[0].exp() / 0.95, lw[1].exp() / 0.95];
        let e = std::f64::consts::E;
        assert_relative_eq!(plan[0], e / (e + 1.0), epsilon = 1e-12);
        assert_relative_eq!(plan[1], 1.0 / (e + 1.0), epsilon = 1e-12);
        assert_relative_eq!(lw[2].exp(), 0.05, epsilon = 1e-12);
        let lw = weight_update(&mix, &[3.0, 3.0], 1.0).unwrap();
        assert_relative_eq!(lw[0], lw[1]);
        let lw = weight_update(&mix, &[5.0, -2.0], 0.0).unwrap();
        assert_relative_eq!(lw[0], lw[1]);
    }

    #[test]
    fn zero_iterations_is_identity() {
        let mix = single(vec![1.0, 2.0, 3.0, 4.0], vec![1.0; 4]);
        let cfg = LearnerConfig { max_iterations: 0, samples_per_component: 9, ..Default::default() };
        let (out, report) = learn_mixture(|_w: &[f64]| 0.0, &mix, &cfg).unwrap();
        assert_eq!(out, mix);
        assert!(report.records.is_empty());
    }

    #[test]
    fn zero_trust_region_keeps_component() {
        let basis = BasisConfig::new(1, 2, 1.0).unwrap();
        let c = ProMP::new(basis, vec![0.5, 0.5], vec![1.0, 2.0]).unwrap();
        let samples: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, -(i as f64)]).collect();
        let cfg = LearnerConfig { kl_trust_region: 0.0, ..Default::default() };
        let step = component_update(&c, &samples, &[1.0; 5], &[0.0; 5], &cfg).unwrap();
        assert_eq!(step.promp, c);
    }

    #[test]
    fn flat_reward_grows_variance_only() {
        let basis = BasisConfig::new(1, 2, 1.0).unwrap();
        let c = ProMP::new(basis, vec![0.5, -1.5], vec![1.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<Vec<f64>> = (0..20).map(|_| c.sample_weights(&mut rng)).collect();
        let cfg = LearnerConfig { var_cap: 10.0, ..Default::default() };
        let step = component_update(&c, &samples, &[4.0; 20], &[0.0; 20], &cfg).unwrap();
        assert!(!step.fallback);
        assert_relative_eq!(step.promp.mean_w()[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(step.promp.mean_w()[1], -1.5, epsilon = 1e-12);
        assert!(step.promp.var_w()[0] > 1.0 && step.promp.var_w()[1] > 2.0);
        assert!(step.kl <= cfg.kl_trust_region + 1e-8);
    }

    #[test]
    fn unbounded_trust_region_reaches_surrogate_gaussian() {
        let basis = BasisConfig::new(1, 2, 1.0).unwrap();
        let c = ProMP::new(basis, vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<Vec<f64>> = (0..20).map(|_| c.sample_weights(&mut rng)).collect();
        // -1/2 * 4 (w0 - 1)^2 - 1/2 * 0.5 (w1 + 2)^2
        let rewards: Vec<f64> =
            samples.iter().map(|w| -2.0 * (w[0] - 1.0).powi(2) - 0.25 * (w[1] + 2.0).powi(2)).collect();
        let cfg = LearnerConfig { kl_trust_region: 1e9, ridge: 0.0, var_cap: 1e6, ..Default::default() };
        let step = component_update(&c, &samples, &rewards, &[0.0; 20], &cfg).unwrap();
        assert_relative_eq!(step.promp.mean_w()[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(step.promp.mean_w()[1], -2.0, epsilon = 1e-8);
        assert_relative_eq!(step.promp.var_w()[0], 0.25, epsilon = 1e-8);
        assert_relative_eq!(step.promp.var_w()[1], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn moment_fallback_respects_bound() {
        let mean = vec![0.0, 0.0];
        let var = vec![1.0, 1.0];
        let samples: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        let targets: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let (m, v, kl) = weighted_moment_step(&samples, &targets, &mean, &var, 0.1, 1e-6, 10.0);
        assert!(kl <= 0.1 + 1e-12);
        assert!(m[0] > 0.0);
        assert_relative_eq!(kl, kl_diag_gaussian(&m, &v, &mean, &var));
    }

    #[test]
    fn identical_components_share_entropy() {
        let basis = BasisConfig::new(1, 2, 1.0).unwrap();
        let c = ProMP::new(basis, vec![0.0, 0.0], vec![1.0, 4.0]).unwrap();
        let free = PoseGaussian::isotropic(DVector::zeros(2), 100.0).unwrap();
        let one = GuideMixture::from_plans(basis, vec![c.clone()], &[1.0], free.clone(), 0.05).unwrap();
        let two = GuideMixture::from_plans(basis, vec![c.clone(), c], &[1.0, 1.0], free, 0.05).unwrap();
        let h1 = entropy_estimate(&one, 20_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let h2 = entropy_estimate(&two, 20_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!((h1 - h2).abs() < 0.05);
    }

    #[test]
    fn report_csv_rows() {
        let mix = single(vec![0.0; 2], vec![1.0; 2]);
        let cfg = LearnerConfig { max_iterations: 3, samples_per_component: 10, ..Default::default() };
        let (_, report) = learn_mixture(|w: &[f64]| -w[0] * w[0], &mix, &cfg).unwrap();
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3);
        assert!(csv.starts_with("iteration,component,"));
    }

    #[test]
    fn all_rejected_is_an_error() {
        let mix = single(vec![0.0; 2], vec![1.0; 2]);
        let cfg = LearnerConfig { max_iterations: 1, samples_per_component: 10, ..Default::default() };
        assert!(matches!(learn_mixture(|_w: &[f64]| f64::NAN, &mix, &cfg), Err(GuideError::Learner(_))));
    }
}
