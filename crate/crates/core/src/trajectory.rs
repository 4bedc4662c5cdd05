//! Phase-indexed basis-function trajectories (ProMPs) and the Gaussian
//! machinery that maps weight-space distributions to pose space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GuideError, Result};
use crate::math::LN_2PI;

fn default_bandwidth() -> f64 {
    1.0
}

/// Shape of the normalized radial basis: `m` functions per degree of freedom,
/// `n` degrees of freedom, bandwidth `h` in phase units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub m: usize,
    pub n: usize,
    #[serde(default = "default_bandwidth")]
    pub h: f64,
}

impl BasisConfig {
    pub fn new(m: usize, n: usize, h: f64) -> Result<Self> {
        let cfg = Self { m, n, h };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(GuideError::Domain("basis needs m >= 1 and n >= 1".into()));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(GuideError::Domain(format!("bandwidth must be positive, got {}", self.h)));
        }
        Ok(())
    }

    /// Length of a weight vector, `m * n`.
    pub fn weight_len(&self) -> usize {
        self.m * self.n
    }
}

fn check_phase(nu: f64) -> Result<()> {
    if (0.0..=1.0).contains(&nu) {
        Ok(())
    } else {
        Err(GuideError::Domain(format!("phase {nu} outside [0, 1]")))
    }
}

/// Normalized Gaussian radial basis evaluated at phase `nu`, centers evenly
/// spaced on `[0, 1]`. A single basis function is the constant `[1]`.
pub fn basis_vector(nu: f64, cfg: &BasisConfig) -> Result<Vec<f64>> {
    check_phase(nu)?;
    cfg.validate()?;
    if cfg.m == 1 {
        return Ok(vec![1.0]);
    }
    let denom = (cfg.m - 1) as f64;
    // exponents are shifted by their max before exponentiating
    let logits: Vec<f64> = (0..cfg.m)
        .map(|c| {
            let d = (nu - c as f64 / denom) / cfg.h;
            -0.5 * d * d
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut phi: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = phi.iter().sum();
    phi.iter_mut().for_each(|v| *v /= s);
    Ok(phi)
}

/// Block-diagonal `n x (m n)` basis matrix: row `d` carries the basis vector in block `d`.
pub fn block_basis(nu: f64, cfg: &BasisConfig) -> Result<DMatrix<f64>> {
    let phi = basis_vector(nu, cfg)?;
    let mut out = DMatrix::zeros(cfg.n, cfg.weight_len());
    for d in 0..cfg.n {
        for (c, v) in phi.iter().enumerate() {
            out[(d, d * cfg.m + c)] = *v;
        }
    }
    Ok(out)
}

/// Evenly spaced phase discretization including both endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseGrid {
    values: Vec<f64>,
}

impl PhaseGrid {
    pub const DEFAULT_LEN: usize = 20;

    pub fn new(len: usize) -> Result<Self> {
        match len {
            0 => Err(GuideError::Domain("phase grid needs at least one value".into())),
            1 => Ok(Self { values: vec![1.0] }),
            _ => {
                let last = (len - 1) as f64;
                let values = (0..len).map(|i| i as f64 / last).collect();
                Ok(Self { values })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Pose-space Gaussian with a dense covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl PoseGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        check_dim(n, cov.nrows())?;
        check_dim(n, cov.ncols())?;
        for i in 0..n {
            for j in 0..i {
                let scale = cov[(i, j)].abs().max(cov[(j, i)].abs()).max(1.0);
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(GuideError::Domain("covariance is not symmetric".into()));
                }
            }
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(GuideError::NotPositiveDefinite);
        }
        Ok(Self { mean, cov })
    }

    pub fn isotropic(mean: DVector<f64>, var: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::from_diagonal_element(n, n, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Precomputes the precision and normalizer of `N(mean, scale * cov)`.
    pub fn prepare(&self, scale: f64) -> Result<PreparedGaussian> {
        PreparedGaussian::new(&self.mean, &(&self.cov * scale))
    }
}

/// A Gaussian ready for repeated density and score evaluation.
#[derive(Clone, Debug)]
pub struct PreparedGaussian {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    /// `-0.5 * (n ln 2pi + ln det cov)`
    pub log_norm: f64,
}

impl PreparedGaussian {
    pub fn new(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        let chol: Cholesky<f64, Dyn> =
            Cholesky::new(cov.clone()).ok_or(GuideError::NotPositiveDefinite)?;
        let ln_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(Self {
            mean: mean.clone(),
            precision,
            log_norm: -0.5 * (n as f64 * LN_2PI + ln_det),
        })
    }

    /// Squared Mahalanobis distance.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        d.dot(&(&self.precision * &d))
    }

    pub fn ln_pdf(&self, x: &DVector<f64>) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(x)
    }

    /// `precision * (mean - x)`, the gradient of `ln_pdf`.
    pub fn score(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.precision * (&self.mean - x)
    }
}

/// A Gaussian over basis weights with diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct ProMP {
    basis: BasisConfig,
    mean_w: Vec<f64>,
    var_w: Vec<f64>,
}

impl ProMP {
    pub fn new(basis: BasisConfig, mean_w: Vec<f64>, var_w: Vec<f64>) -> Result<Self> {
        basis.validate()?;
        check_dim(basis.weight_len(), mean_w.len())?;
        check_dim(basis.weight_len(), var_w.len())?;
        if let Some(v) = var_w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(GuideError::Domain(format!("weight variance must be positive, got {v}")));
        }
        if mean_w.iter().any(|v| !v.is_finite()) {
            return Err(GuideError::Domain("weight mean must be finite".into()));
        }
        Ok(Self { basis, mean_w, var_w })
    }

    pub fn basis(&self) -> &BasisConfig {
        &self.basis
    }

    pub fn mean_w(&self) -> &[f64] {
        &self.mean_w
    }

    pub fn var_w(&self) -> &[f64] {
        &self.var_w
    }

    /// Pose distribution induced at phase `nu`: `N(Phi mu, Phi Sigma Phi^T)`.
    pub fn pose_at_phase(&self, nu: f64) -> Result<PoseGaussian> {
        let phi = basis_vector(nu, &self.basis)?;
        let (m, n) = (self.basis.m, self.basis.n);
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        for d in 0..n {
            let block = d * m..(d + 1) * m;
            let w = &self.mean_w[block.clone()];
            let v = &self.var_w[block];
            mean[d] = phi.iter().zip(w).map(|(p, w)| p * w).sum();
            cov[(d, d)] = phi.iter().zip(v).map(|(p, v)| p * p * v).sum();
        }
        Ok(PoseGaussian { mean, cov })
    }

    /// Mean pose at every phase of `grid`.
    pub fn mean_trajectory(&self, grid: &PhaseGrid) -> Result<Vec<DVector<f64>>> {
        trajectory_from_weights(&self.mean_w, grid, &self.basis)
    }

    /// Draws a weight vector from `N(mean_w, diag(var_w))`.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean_w
            .iter()
            .zip(&self.var_w)
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }
}

/// Poses `Phi(nu_i) w` for every phase of the grid.
pub fn trajectory_from_weights(
    w: &[f64],
    grid: &PhaseGrid,
    cfg: &BasisConfig,
) -> Result<Vec<DVector<f64>>> {
    check_dim(cfg.weight_len(), w.len())?;
    grid.values()
        .iter()
        .map(|&nu| {
            let phi = basis_vector(nu, cfg)?;
            Ok(DVector::from_fn(cfg.n, |d, _| {
                phi.iter().zip(&w[d * cfg.m..(d + 1) * cfg.m]).map(|(p, w)| p * w).sum()
            }))
        })
        .collect()
}

/// Least-squares weights whose trajectory best matches `poses` at the grid phases.
pub fn fit_weights(
    poses: &[DVector<f64>],
    grid: &PhaseGrid,
    cfg: &BasisConfig,
    ridge: f64,
) -> Result<Vec<f64>> {
    check_dim(grid.len(), poses.len())?;
    let rows: Vec<Vec<f64>> =
        grid.values().iter().map(|&nu| basis_vector(nu, cfg)).collect::<Result<_>>()?;
    let a = DMatrix::from_fn(grid.len(), cfg.m, |i, c| rows[i][c]);
    let mut gram = a.transpose() * &a;
    for c in 0..cfg.m {
        gram[(c, c)] += ridge;
    }
    let chol = Cholesky::new(gram).ok_or(GuideError::NotPositiveDefinite)?;
    let mut w = vec![0.0; cfg.weight_len()];
    for d in 0..cfg.n {
        check_dim(cfg.n, poses[0].len())?;
        let y = DVector::from_fn(grid.len(), |i, _| poses[i][d]);
        let sol = chol.solve(&(a.transpose() * y));
        w[d * cfg.m..(d + 1) * cfg.m].copy_from_slice(sol.as_slice());
    }
    Ok(w)
}

/// Weighted set of ProMPs plus a broad single-phase freelance component.
///
/// `log_weights` has one entry per component followed by the freelance entry.
#[derive(Clone, Debug, PartialEq)]
pub struct GuideMixture {
    basis: BasisConfig,
    components: Vec<ProMP>,
    log_weights: Vec<f64>,
    freelance: PoseGaussian,
}

impl GuideMixture {
    pub fn new(
        basis: BasisConfig,
        components: Vec<ProMP>,
        log_weights: Vec<f64>,
        freelance: PoseGaussian,
    ) -> Result<Self> {
        basis.validate()?;
        check_dim(components.len() + 1, log_weights.len())?;
        check_dim(basis.n, freelance.dim())?;
        if let Some(c) = components.iter().find(|c| *c.basis() != basis) {
            return Err(GuideError::Domain(format!(
                "component basis {:?} differs from mixture basis {:?}",
                c.basis(),
                basis
            )));
        }
        let total: f64 = log_weights.iter().map(|l| l.exp()).sum();
        if !((total - 1.0).abs() <= 1e-10) {
            return Err(GuideError::Domain(format!("mixture weights sum to {total}")));
        }
        Ok(Self { basis, components, log_weights, freelance })
    }

    /// Builds a mixture from unnormalized plan weights, giving the freelance
    /// component probability `freelance_weight`.
    pub fn from_plans(
        basis: BasisConfig,
        components: Vec<ProMP>,
        plan_weights: &[f64],
        freelance: PoseGaussian,
        freelance_weight: f64,
    ) -> Result<Self> {
        check_dim(components.len(), plan_weights.len())?;
        if !(0.0 < freelance_weight && freelance_weight <= 1.0) {
            return Err(GuideError::Domain("freelance weight must lie in (0, 1]".into()));
        }
        let total: f64 = plan_weights.iter().sum();
        let mut log_weights: Vec<f64> = if components.is_empty() {
            Vec::new()
        } else {
            plan_weights
                .iter()
                .map(|w| (w / total).ln() + (1.0 - freelance_weight).ln())
                .collect()
        };
        log_weights.push(if components.is_empty() { 0.0 } else { freelance_weight.ln() });
        crate::math::log_normalize(&mut log_weights);
        Self::new(basis, components, log_weights, freelance)
    }

    /// Broad Gaussian centered on the workspace box with per-axis variance
    /// equal to the squared workspace diameter.
    pub fn freelance_for_workspace(min: &[f64], max: &[f64]) -> Result<PoseGaussian> {
        check_dim(min.len(), max.len())?;
        let center = DVector::from_fn(min.len(), |i, _| 0.5 * (min[i] + max[i]));
        let diam_sq: f64 = min.iter().zip(max).map(|(a, b)| (b - a) * (b - a)).sum();
        if !(diam_sq > 0.0) {
            return Err(GuideError::Domain("workspace has zero extent".into()));
        }
        PoseGaussian::isotropic(center, diam_sq)
    }

    pub fn basis(&self) -> &BasisConfig {
        &self.basis
    }

    pub fn components(&self) -> &[ProMP] {
        &self.components
    }

    pub fn n_plans(&self) -> usize {
        self.components.len()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn freelance(&self) -> &PoseGaussian {
        &self.freelance
    }

    pub fn freelance_index(&self) -> usize {
        self.components.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MixtureDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<MixtureDoc>(text)?.try_into()
    }
}

/// On-disk form of a single ProMP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProMPDoc {
    pub m: usize,
    pub n: usize,
    pub h: f64,
    pub mean_w: Vec<f64>,
    pub var_w: Vec<f64>,
}

impl From<&ProMP> for ProMPDoc {
    fn from(p: &ProMP) -> Self {
        Self {
            m: p.basis.m,
            n: p.basis.n,
            h: p.basis.h,
            mean_w: p.mean_w.clone(),
            var_w: p.var_w.clone(),
        }
    }
}

impl TryFrom<ProMPDoc> for ProMP {
    type Error = GuideError;

    fn try_from(doc: ProMPDoc) -> Result<Self> {
        ProMP::new(BasisConfig::new(doc.m, doc.n, doc.h)?, doc.mean_w, doc.var_w)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FreelanceDoc {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub mean_w: Vec<f64>,
    pub var_w: Vec<f64>,
}

/// On-disk form of a [`GuideMixture`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureDoc {
    pub m: usize,
    pub n: usize,
    pub h: f64,
    pub components: Vec<ComponentDoc>,
    pub log_weights: Vec<f64>,
    pub freelance: FreelanceDoc,
}

impl From<&GuideMixture> for MixtureDoc {
    fn from(mix: &GuideMixture) -> Self {
        let f = &mix.freelance;
        Self {
            m: mix.basis.m,
            n: mix.basis.n,
            h: mix.basis.h,
            components: mix
                .components
                .iter()
                .map(|c| ComponentDoc { mean_w: c.mean_w.clone(), var_w: c.var_w.clone() })
                .collect(),
            log_weights: mix.log_weights.clone(),
            freelance: FreelanceDoc {
                mean: f.mean.iter().copied().collect(),
                cov: (0..f.dim()).map(|i| f.cov.row(i).iter().copied().collect()).collect(),
            },
        }
    }
}

impl TryFrom<MixtureDoc> for GuideMixture {
    type Error = GuideError;

    fn try_from(doc: MixtureDoc) -> Result<Self> {
        let basis = BasisConfig::new(doc.m, doc.n, doc.h)?;
        let components = doc
            .components
            .into_iter()
            .map(|c| ProMP::new(basis, c.mean_w, c.var_w))
            .collect::<Result<Vec<_>>>()?;
        let n = doc.freelance.mean.len();
        if doc.freelance.cov.len() != n || doc.freelance.cov.iter().any(|r| r.len() != n) {
            return Err(GuideError::Domain("freelance covariance must be n x n".into()));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| doc.freelance.cov[i][j]);
        let freelance = PoseGaussian::new(DVector::from_vec(doc.freelance.mean), cov)?;
        GuideMixture::new(basis, components, doc.log_weights, freelance)
    }
}
