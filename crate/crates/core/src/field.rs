//! Pose-space potential field built from the guide mixture and the current
//! beliefs: energy, score, responsibilities and the damped guidance wrench.

use std::sync::Arc;

use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GuideError, Result};
use crate::math::logsumexp;
use crate::trajectory::{GuideMixture, PhaseGrid, PoseGaussian, PreparedGaussian};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceParams {
    /// Damping gain, force per unit velocity.
    pub k_damp: f64,
    /// Magnitude cap on the total wrench.
    pub tau_max: f64,
    /// Ticks per simulated second.
    pub control_rate: f64,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        Self { k_damp: 2.0, tau_max: 50.0, control_rate: 100.0 }
    }
}

impl GuidanceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_damp >= 0.0) || !(self.tau_max > 0.0) || !(self.control_rate > 0.0) {
            return Err(GuideError::Domain(format!("invalid guidance parameters {self:?}")));
        }
        Ok(())
    }
}

/// One Gaussian of the pose-space field, tagged with its plan and phase index.
#[derive(Clone, Debug)]
pub struct FieldComponent {
    pub plan: usize,
    pub phase: usize,
    pub log_weight: f64,
    pub gaussian: Arc<PreparedGaussian>,
    pub cov: Arc<PoseGaussian>,
}

/// Principal-axes summary of one field component, for plotting and the UI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub plan: usize,
    pub phase: usize,
    pub weight: f64,
    pub mean: Vec<f64>,
    /// One semi-axis per row: unit eigenvector scaled by the standard deviation.
    pub axes: Vec<Vec<f64>>,
}

impl Ellipse {
    pub fn from_gaussian(plan: usize, phase: usize, weight: f64, g: &PoseGaussian) -> Self {
        let eig = SymmetricEigen::new(g.cov.clone());
        let n = g.dim();
        let axes = (0..n)
            .map(|k| {
                let s = eig.eigenvalues[k].max(0.0).sqrt();
                eig.eigenvectors.column(k).iter().map(|v| v * s).collect()
            })
            .collect();
        Self { plan, phase, weight, mean: g.mean.iter().copied().collect(), axes }
    }
}

/// Marginal GMM over poses: one component per (plan, phase) plus the freelance component.
#[derive(Clone, Debug)]
pub struct PoseFieldGMM {
    dim: usize,
    components: Vec<FieldComponent>,
}

impl PoseFieldGMM {
    /// Builds a field from explicit `(weight, gaussian, plan, phase)` entries.
    pub fn from_gaussians(entries: Vec<(f64, PoseGaussian, usize, usize)>) -> Result<Self> {
        let dim = entries
            .first()
            .map(|e| e.1.dim())
            .ok_or_else(|| GuideError::Domain("field needs at least one component".into()))?;
        let mut components = Vec::with_capacity(entries.len());
        for (w, g, plan, phase) in entries {
            check_dim(dim, g.dim())?;
            if !(w >= 0.0) {
                return Err(GuideError::Domain(format!("negative field weight {w}")));
            }
            components.push(FieldComponent {
                plan,
                phase,
                log_weight: w.ln(),
                gaussian: Arc::new(g.prepare(1.0)?),
                cov: Arc::new(g),
            });
        }
        Self::from_components(dim, components)
    }

    fn from_components(dim: usize, components: Vec<FieldComponent>) -> Result<Self> {
        let lw: Vec<f64> = components.iter().map(|c| c.log_weight).collect();
        let total = logsumexp(&lw).exp();
        if !((total - 1.0).abs() <= 1e-10) {
            return Err(GuideError::Domain(format!("field weights sum to {total}")));
        }
        Ok(Self { dim, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[FieldComponent] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.log_weight.exp()).collect()
    }

    fn joint_log(&self, x: &DVector<f64>) -> Vec<f64> {
        self.components.iter().map(|c| c.log_weight + c.gaussian.ln_pdf(x)).collect()
    }

    fn check_pose(&self, x: &DVector<f64>) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GuideError::Domain("pose is not finite".into()));
        }
        Ok(())
    }

    /// `log p(x)` and its gradient, the responsibility-weighted sum of component scores.
    pub fn log_density_and_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check_pose(x)?;
        let joint = self.joint_log(x);
        let log_p = logsumexp(&joint);
        let mut grad = DVector::zeros(self.dim);
        for (c, lj) in self.components.iter().zip(&joint) {
            let r = (lj - log_p).exp();
            if r > 0.0 {
                grad += c.gaussian.score(x) * r;
            }
        }
        Ok((log_p, grad))
    }

    /// Potential energy `-log p(x)`.
    pub fn energy(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_pose(x)?;
        Ok(-logsumexp(&self.joint_log(x)))
    }

    /// Posterior over components given the pose; sums to one.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_pose(x)?;
        let joint = self.joint_log(x);
        let log_p = logsumexp(&joint);
        Ok(joint.iter().map(|l| (l - log_p).exp()).collect())
    }

    pub fn ellipses(&self) -> Vec<Ellipse> {
        self.components
            .iter()
            .map(|c| Ellipse::from_gaussian(c.plan, c.phase, c.log_weight.exp(), &c.cov))
            .collect()
    }
}

/// Per-(plan, phase) pose Gaussians of a mixture, prepared once and reused every tick.
#[derive(Clone, Debug)]
pub struct GuideGeometry {
    dim: usize,
    /// `plans[o][i]`; the freelance plan is last with a single phase.
    plans: Vec<Vec<(Arc<PoseGaussian>, Arc<PreparedGaussian>)>>,
}

impl GuideGeometry {
    pub fn new(mix: &GuideMixture, grid: &PhaseGrid) -> Result<Self> {
        let mut plans = Vec::with_capacity(mix.n_plans() + 1);
        for c in mix.components() {
            let chain = grid
                .values()
                .iter()
                .map(|&nu| {
                    let g = c.pose_at_phase(nu)?;
                    let p = g.prepare(1.0)?;
                    Ok((Arc::new(g), Arc::new(p)))
                })
                .collect::<Result<Vec<_>>>()?;
            plans.push(chain);
        }
        let f = mix.freelance().clone();
        let pf = f.prepare(1.0)?;
        plans.push(vec![(Arc::new(f), Arc::new(pf))]);
        Ok(Self { dim: mix.basis().n, plans })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of plans including the freelance plan.
    pub fn n_plans(&self) -> usize {
        self.plans.len()
    }

    pub fn phase_count(&self, plan: usize) -> usize {
        self.plans[plan].len()
    }

    pub fn gaussian(&self, plan: usize, phase: usize) -> &PoseGaussian {
        &self.plans[plan][phase].0
    }

    pub fn prepared(&self, plan: usize, phase: usize) -> &PreparedGaussian {
        &self.plans[plan][phase].1
    }

    /// Weights each (plan, phase) Gaussian by `p(o) p(nu_i | o)`.
    pub fn field(&self, plan_belief: &[f64], phase_beliefs: &[Vec<f64>]) -> Result<PoseFieldGMM> {
        check_dim(self.plans.len(), plan_belief.len())?;
        check_dim(self.plans.len(), phase_beliefs.len())?;
        let mut components = Vec::new();
        for (o, chain) in self.plans.iter().enumerate() {
            check_dim(chain.len(), phase_beliefs[o].len())?;
            let lo = plan_belief[o].ln();
            for (i, (g, p)) in chain.iter().enumerate() {
                components.push(FieldComponent {
                    plan: o,
                    phase: i,
                    log_weight: lo + phase_beliefs[o][i].ln(),
                    gaussian: Arc::clone(p),
                    cov: Arc::clone(g),
                });
            }
        }
        PoseFieldGMM::from_components(self.dim, components)
    }

    /// Ellipse chains per plan (freelance excluded), weighted by the mixture weights.
    pub fn ellipse_chains(&self, plan_weights: &[f64]) -> Vec<Vec<Ellipse>> {
        self.plans[..self.plans.len() - 1]
            .iter()
            .enumerate()
            .map(|(o, chain)| {
                let w = plan_weights.get(o).copied().unwrap_or(0.0) / chain.len() as f64;
                chain.iter().enumerate().map(|(i, (g, _))| Ellipse::from_gaussian(o, i, w, g)).collect()
            })
            .collect()
    }
}

/// Marginal pose field of `mix` under the given plan and per-plan phase beliefs.
pub fn build_pose_field(
    mix: &GuideMixture,
    plan_belief: &[f64],
    phase_beliefs: &[Vec<f64>],
    grid: &PhaseGrid,
) -> Result<PoseFieldGMM> {
    GuideGeometry::new(mix, grid)?.field(plan_belief, phase_beliefs)
}

/// Field score minus damping, clipped to `tau_max` in magnitude.
pub fn total_wrench(
    field: &PoseFieldGMM,
    x: &DVector<f64>,
    xdot: &DVector<f64>,
    params: &GuidanceParams,
) -> Result<DVector<f64>> {
    check_dim(field.dim(), xdot.len())?;
    let (_, grad) = field.log_density_and_grad(x)?;
    Ok(damp_and_clip(grad, xdot, params))
}

pub(crate) fn damp_and_clip(
    grad: DVector<f64>,
    xdot: &DVector<f64>,
    params: &GuidanceParams,
) -> DVector<f64> {
    let tau = grad - xdot * params.k_damp;
    let norm = tau.norm();
    if norm > params.tau_max {
        tau * (params.tau_max / norm)
    } else {
        tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{BasisConfig, ProMP};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn iso(mean: &[f64], var: f64) -> PoseGaussian {
        PoseGaussian::isotropic(DVector::from_column_slice(mean), var).unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn single_unit_gaussian_score() {
        let f = PoseFieldGMM::from_gaussians(vec![(1.0, iso(&[1.0, 0.0], 1.0), 0, 0)]).unwrap();
        let (_, g) = f.log_density_and_grad(&v(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(g, v(&[1.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn symmetric_pair_has_zero_gradient_at_midpoint() {
        let f = PoseFieldGMM::from_gaussians(vec![
            (0.5, iso(&[-1.0, 2.0], 0.3), 0, 0),
            (0.5, iso(&[1.0, 2.0], 0.3), 0, 1),
        ])
        .unwrap();
        let (_, g) = f.log_density_and_grad(&v(&[0.0, 2.0])).unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn dominant_component_takes_responsibility() {
        let f = PoseFieldGMM::from_gaussians(vec![
            (0.2, iso(&[0.0, 0.0], 1.0), 0, 0),
            (0.4, iso(&[10.0, 0.0], 1.0), 0, 1),
            (0.4, iso(&[0.0, 12.0], 1.0), 1, 0),
        ])
        .unwrap();
        let r = f.responsibilities(&v(&[0.0, 0.0])).unwrap();
        assert!(r[0] > 0.999);
        assert_relative_eq!(r.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_components_share_responsibility() {
        let f = PoseFieldGMM::from_gaussians(vec![
            (0.5, iso(&[1.0, 1.0], 0.5), 0, 0),
            (0.5, iso(&[1.0, 1.0], 0.5), 1, 0),
        ])
        .unwrap();
        let r = f.responsibilities(&v(&[3.0, -2.0])).unwrap();
        assert_relative_eq!(r[0], r[1], epsilon = 1e-15);
    }

    #[test]
    fn far_queries_do_not_underflow() {
        let f = PoseFieldGMM::from_gaussians(vec![
            (0.5, iso(&[0.0, 0.0], 1e-3), 0, 0),
            (0.5, iso(&[1.0, 0.0], 1e-3), 0, 1),
        ])
        .unwrap();
        let (lp, g) = f.log_density_and_grad(&v(&[500.0, 0.0])).unwrap();
        assert!(lp.is_finite() && g.iter().all(|x| x.is_finite()));
        assert!(g[0] < 0.0);
    }

    #[test]
    fn wrench_damping_and_cap() {
        let params = GuidanceParams { k_damp: 2.0, tau_max: 1.0, control_rate: 100.0 };
        let f = PoseFieldGMM::from_gaussians(vec![(1.0, iso(&[0.3, 0.0], 1.0), 0, 0)]).unwrap();
        let w = total_wrench(&f, &v(&[0.0, 0.0]), &v(&[0.0, 0.0]), &params).unwrap();
        assert_relative_eq!(w, v(&[0.3, 0.0]), epsilon = 1e-15);

        let at_mode = total_wrench(&f, &v(&[0.3, 0.0]), &v(&[0.1, -0.2]), &params).unwrap();
        assert_relative_eq!(at_mode, v(&[-0.2, 0.4]), epsilon = 1e-15);

        let far = total_wrench(&f, &v(&[-9.7, 0.0]), &v(&[0.0, 0.0]), &params).unwrap();
        assert_relative_eq!(far.norm(), 1.0, epsilon = 1e-15);
        assert!(far[0] > 0.0 && far[1].abs() < 1e-15);
    }

    #[test]
    fn built_field_weights() {
        let basis = BasisConfig::new(3, 2, 0.3).unwrap();
        let p = ProMP::new(basis, vec![0.0, 1.0, 2.0, 0.0, 0.0, 0.0], vec![0.05; 6]).unwrap();
        let free = GuideMixture::freelance_for_workspace(&[-1.0, -1.0], &[3.0, 3.0]).unwrap();
        let mix = GuideMixture::from_plans(basis, vec![p], &[1.0], free, 0.1).unwrap();
        let grid = PhaseGrid::new(2).unwrap();
        let field = build_pose_field(&mix, &[1.0, 0.0], &[vec![0.5, 0.5], vec![1.0]], &grid).unwrap();
        let w = field.weights();
        assert_eq!(w.len(), 3);
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(w[1], 0.5, epsilon = 1e-15);
        assert_eq!(w[2], 0.0);

        let broad = build_pose_field(&mix, &[0.0, 1.0], &[vec![0.5, 0.5], vec![1.0]], &grid).unwrap();
        assert_eq!(broad.weights(), vec![0.0, 0.0, 1.0]);
        let (_, g) = broad.log_density_and_grad(&v(&[1.0, 1.0])).unwrap();
        assert!(g.norm() < 1e-15);

        assert!(build_pose_field(&mix, &[1.0], &[vec![1.0]], &grid).is_err());
    }

    #[test]
    fn ellipse_axes_follow_covariance() {
        let g = PoseGaussian::new(v(&[0.0, 0.0]), DMatrix::from_diagonal(&v(&[4.0, 1.0]))).unwrap();
        let e = Ellipse::from_gaussian(0, 0, 1.0, &g);
        let mut lens: Vec<f64> =
            e.axes.iter().map(|a| a.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        lens.sort_by(f64::total_cmp);
        assert_relative_eq!(lens[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(lens[1], 2.0, epsilon = 1e-12);
    }
}
