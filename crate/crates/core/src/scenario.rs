//! Task scenarios: geometry, signed distances, trajectory features and the
//! episodic reward `r(w) = psi(x_w) . theta`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GuideError, Result};
use crate::field::GuidanceParams;
use crate::filter::FilterParams;
use crate::learner::LearnerConfig;
use crate::math::ln_normal_1d;
use crate::session::ReplanConfig;
use crate::trajectory::{trajectory_from_weights, BasisConfig, GuideMixture, PhaseGrid, PoseGaussian};

/// Reward weights used by the robot-arm pick-and-place task.
pub const PICK_PLACE_THETA: [f64; 7] = [-5000.0, -5000.0, 5000.0, 5000.0, -500.0, -50000.0, 50.0];
/// Reward weights used by the pole-through-windows task.
pub const POLE_THETA: [f64; 6] = [-2.5, -5.0, 1000.0, -5.0, -5.0, -5.0];

/// Axis-aligned box in any dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Aabb {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        check_dim(min.len(), max.len())?;
        if min.iter().zip(&max).any(|(a, b)| !(a <= b)) {
            return Err(GuideError::Domain("box min must not exceed max".into()));
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(&self.min).zip(&self.max).all(|((x, a), b)| a <= x && x <= b)
    }

    /// Euclidean distance from `p` to the box; zero inside.
    pub fn distance(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(&self.min)
            .zip(&self.max)
            .map(|((x, a), b)| {
                let d = (a - x).max(x - b).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Signed distance, positive inside the box and negative outside.
    pub fn signed_inside(&self, p: &[f64]) -> f64 {
        if self.contains(p) {
            p.iter()
                .zip(&self.min)
                .zip(&self.max)
                .map(|((x, a), b)| (x - a).min(b - x))
                .fold(f64::INFINITY, f64::min)
        } else {
            -self.distance(p)
        }
    }

    /// Signed distance, positive outside the box and negative inside.
    pub fn signed_outside(&self, p: &[f64]) -> f64 {
        -self.signed_inside(p)
    }

    pub fn diameter(&self) -> f64 {
        self.min.iter().zip(&self.max).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

/// Infinite vertical cylinder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Cylinder {
    /// Positive outside the cylinder, negative inside.
    pub fn signed_distance(&self, p: &[f64]) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        (dx * dx + dy * dy).sqrt() - self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MazeGeometry {
    /// Thick axis-aligned wall pieces; gaps are the space between pieces.
    pub walls: Vec<Aabb>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PickPlaceGeometry {
    pub workspace_box: Aabb,
    pub obstacles: Vec<Cylinder>,
    pub basket: [f64; 3],
}

/// Square window cut through the wall along y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center_x: f64,
    pub center_z: f64,
    pub side: f64,
}

impl Window {
    fn rect(&self) -> [f64; 4] {
        let h = 0.5 * self.side;
        [self.center_x - h, self.center_x + h, self.center_z - h, self.center_z + h]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleGeometry {
    pub wall_center: [f64; 3],
    /// Wall extents along x, y (thickness) and z.
    pub wall_size: [f64; 3],
    pub windows: Vec<Window>,
    pub pole_length: f64,
    #[serde(default = "default_pole_samples")]
    pub pole_samples: usize,
}

fn default_pole_samples() -> usize {
    32
}

impl PoleGeometry {
    fn bounds(&self) -> [f64; 6] {
        let [cx, cy, cz] = self.wall_center;
        let [sx, sy, sz] = self.wall_size;
        [cx - sx / 2.0, cx + sx / 2.0, cy - sy / 2.0, cy + sy / 2.0, cz - sz / 2.0, cz + sz / 2.0]
    }

    /// The wall minus its windows as a union of boxes.
    pub fn solid_boxes(&self) -> Vec<Aabb> {
        let [x0, x1, y0, y1, z0, z1] = self.bounds();
        let mut xs = vec![x0, x1];
        let mut zs = vec![z0, z1];
        for w in &self.windows {
            let [a, b, c, d] = w.rect();
            xs.extend([a.clamp(x0, x1), b.clamp(x0, x1)]);
            zs.extend([c.clamp(z0, z1), d.clamp(z0, z1)]);
        }
        for v in [&mut xs, &mut zs] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let mut boxes = Vec::new();
        for xw in xs.windows(2) {
            for zw in zs.windows(2) {
                let (mx, mz) = (0.5 * (xw[0] + xw[1]), 0.5 * (zw[0] + zw[1]));
                let in_window = self.windows.iter().any(|w| {
                    let [a, b, c, d] = w.rect();
                    a < mx && mx < b && c < mz && mz < d
                });
                if !in_window {
                    boxes.push(Aabb { min: vec![xw[0], y0, zw[0]], max: vec![xw[1], y1, zw[1]] });
                }
            }
        }
        boxes
    }

    /// Signed distance of a point to the wall solid, negative inside.
    pub fn point_distance(&self, boxes: &[Aabb], p: &[f64]) -> f64 {
        if boxes.iter().any(|b| b.contains(p)) {
            let [x0, x1, y0, y1, z0, z1] = self.bounds();
            let (x, y, z) = (p[0], p[1], p[2]);
            let mut depth = (y - y0).min(y1 - y).min(x - x0).min(x1 - x).min(z - z0).min(z1 - z);
            for w in &self.windows {
                let [a, b, c, d] = w.rect();
                let dx = (a - x).max(x - b).max(0.0);
                let dz = (c - z).max(z - d).max(0.0);
                depth = depth.min((dx * dx + dz * dz).sqrt());
            }
            -depth
        } else {
            boxes.iter().map(|b| b.distance(p)).fold(f64::INFINITY, f64::min)
        }
    }

    /// `min(0, point_distance)`, skipping the exact outside distance.
    pub fn penetration(&self, boxes: &[Aabb], p: &[f64]) -> f64 {
        let [_, _, y0, y1, _, _] = self.bounds();
        if p[1] <= y0 || p[1] >= y1 || !boxes.iter().any(|b| b.contains(p)) {
            0.0
        } else {
            self.point_distance(boxes, p).min(0.0)
        }
    }

    /// Points sampled uniformly along the pole at pose `(x, y, z, alpha, beta, gamma)`.
    pub fn pole_points(&self, pose: &[f64]) -> Vec<[f64; 3]> {
        let dir = pole_direction(pose[3], pose[4]);
        let k = self.pole_samples.max(2);
        (0..k)
            .map(|i| {
                let s = self.pole_length * (i as f64 / (k - 1) as f64 - 0.5);
                [pose[0] + s * dir[0], pose[1] + s * dir[1], pose[2] + s * dir[2]]
            })
            .collect()
    }
}

/// Body x-axis after intrinsic Z-Y-X rotation by yaw `alpha`, pitch `beta`
/// (roll does not move the pole axis).
pub fn pole_direction(alpha: f64, beta: f64) -> [f64; 3] {
    [alpha.cos() * beta.cos(), alpha.sin() * beta.cos(), -beta.sin()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Geometry {
    PointMaze2d(MazeGeometry),
    PickPlace3d(PickPlaceGeometry),
    PoleWindows6d(PoleGeometry),
}

impl Geometry {
    pub fn pose_dim(&self) -> usize {
        match self {
            Geometry::PointMaze2d(_) => 2,
            Geometry::PickPlace3d(_) => 3,
            Geometry::PoleWindows6d(_) => 6,
        }
    }

    pub fn feature_count(&self) -> usize {
        match self {
            Geometry::PointMaze2d(_) => 6,
            Geometry::PickPlace3d(_) => 7,
            Geometry::PoleWindows6d(_) => 6,
        }
    }
}

/// Per-feature signed distances for a single pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseDistances {
    /// Positive inside the workspace box, when the variant has one.
    pub workspace: Option<f64>,
    /// Positive outside every obstacle.
    pub obstacle: f64,
}

fn default_sigma_sq() -> f64 {
    2.0
}
fn default_phase_count() -> usize {
    PhaseGrid::DEFAULT_LEN
}
fn default_one() -> f64 {
    1.0
}
fn default_freelance_weight() -> f64 {
    0.05
}
fn default_substeps() -> usize {
    1
}

/// Everything that defines one task, loadable from a JSON scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub geometry: Geometry,
    pub feature_weights: Vec<f64>,
    #[serde(default = "default_sigma_sq")]
    pub sigma_sq: f64,
    pub basis: BasisConfig,
    #[serde(default = "default_phase_count")]
    pub phase_count: usize,
    pub start_pose: Vec<f64>,
    pub target_poses: Vec<Vec<f64>>,
    /// Bounds of the reachable pose space; sizes the freelance component.
    pub workspace: Aabb,
    pub completion_radius: f64,
    /// Weight of angle differences against meters in pose distances.
    #[serde(default = "default_one")]
    pub angle_weight: f64,
    /// Extra interpolated points between consecutive phases for collision checks.
    #[serde(default = "default_substeps")]
    pub collision_substeps: usize,
    #[serde(default = "default_freelance_weight")]
    pub freelance_weight: f64,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub guidance: GuidanceParams,
    #[serde(default)]
    pub replan: ReplanConfig,
}

const MAZE_JSON: &str = include_str!("../../../scenarios/maze2d.json");
const PICK_PLACE_JSON: &str = include_str!("../../../scenarios/pickplace3d.json");
const POLE_JSON: &str = include_str!("../../../scenarios/pole6d.json");

/// Built-in scenario files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Maze2d,
    PickPlace3d,
    Pole6d,
}

impl Preset {
    pub fn scenario(self) -> Scenario {
        let text = match self {
            Preset::Maze2d => MAZE_JSON,
            Preset::PickPlace3d => PICK_PLACE_JSON,
            Preset::Pole6d => POLE_JSON,
        };
        Scenario::from_json(text).expect("shipped scenario files are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Maze2d => "maze2d",
            Preset::PickPlace3d => "pickplace3d",
            Preset::Pole6d => "pole6d",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = GuideError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maze2d" => Ok(Preset::Maze2d),
            "pickplace3d" => Ok(Preset::PickPlace3d),
            "pole6d" => Ok(Preset::Pole6d),
            _ => Err(GuideError::Domain(format!("unknown preset {s}"))),
        }
    }
}

/// Edits to the environment that invalidate the current plans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EnvEdit {
    /// Translate obstacle `index` by `offset` (maze walls, pick-and-place cylinders, pole windows).
    MoveObstacle { index: usize, offset: Vec<f64> },
    AddWall { wall: Aabb },
    AddCylinder { cylinder: Cylinder },
    RemoveObstacle { index: usize },
    MoveTarget { index: usize, pose: Vec<f64> },
    AddTarget { pose: Vec<f64> },
    RemoveTarget { index: usize },
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.geometry.pose_dim();
        check_dim(self.geometry.feature_count(), self.feature_weights.len())?;
        check_dim(n, self.basis.n)?;
        check_dim(n, self.start_pose.len())?;
        check_dim(n, self.workspace.dim())?;
        self.basis.validate()?;
        if !(self.sigma_sq > 0.0) {
            return Err(GuideError::Domain("sigma_sq must be positive".into()));
        }
        if self.target_poses.is_empty() {
            return Err(GuideError::Domain("scenario needs at least one target".into()));
        }
        for t in &self.target_poses {
            check_dim(n, t.len())?;
        }
        if self.phase_count == 0 || self.collision_substeps == 0 {
            return Err(GuideError::Domain("phase_count and collision_substeps must be >= 1".into()));
        }
        if !(0.0 < self.freelance_weight && self.freelance_weight < 1.0) {
            return Err(GuideError::Domain("freelance_weight must lie in (0, 1)".into()));
        }
        match &self.geometry {
            Geometry::PickPlace3d(g) => {
                if g.obstacles.iter().any(|c| !(c.radius > 0.0)) {
                    return Err(GuideError::Domain("cylinder radius must be positive".into()));
                }
                if self.target_poses.iter().any(|t| !g.workspace_box.contains(t)) {
                    return Err(GuideError::Domain("targets must lie inside the workspace box".into()));
                }
            }
            Geometry::PoleWindows6d(g) => {
                if !(g.pole_length > 0.0) {
                    return Err(GuideError::Domain("pole length must be positive".into()));
                }
                let [x0, x1, _, _, z0, z1] = g.bounds();
                for w in &g.windows {
                    let [a, b, c, d] = w.rect();
                    if a < x0 || b > x1 || c < z0 || d > z1 || !(w.side > 0.0) {
                        return Err(GuideError::Domain("window outside the wall".into()));
                    }
                }
            }
            Geometry::PointMaze2d(g) => {
                if g.walls.iter().any(|w| w.dim() != 2) {
                    return Err(GuideError::Domain("maze walls must be 2-D boxes".into()));
                }
            }
        }
        self.filter.validate()?;
        self.guidance.validate()?;
        self.learner.validate(&self.basis)?;
        Ok(())
    }

    pub fn pose_dim(&self) -> usize {
        self.geometry.pose_dim()
    }

    pub fn grid(&self) -> PhaseGrid {
        PhaseGrid::new(self.phase_count).expect("validated phase count")
    }

    /// Same scenario with the desired start replaced, used when replanning from the current pose.
    pub fn with_start(&self, start: &[f64]) -> Result<Self> {
        check_dim(self.pose_dim(), start.len())?;
        let mut s = self.clone();
        s.start_pose = start.to_vec();
        Ok(s)
    }

    pub fn freelance(&self) -> Result<PoseGaussian> {
        GuideMixture::freelance_for_workspace(&self.workspace.min, &self.workspace.max)
    }

    /// Signed distances of a single pose, per feature.
    pub fn pose_distances(&self, pose: &[f64]) -> Result<PoseDistances> {
        check_dim(self.pose_dim(), pose.len())?;
        Ok(match &self.geometry {
            Geometry::PointMaze2d(g) => PoseDistances {
                workspace: Some(self.workspace.signed_inside(pose)),
                obstacle: g.walls.iter().map(|w| w.signed_outside(pose)).fold(f64::INFINITY, f64::min),
            },
            Geometry::PickPlace3d(g) => PoseDistances {
                workspace: Some(g.workspace_box.signed_inside(pose)),
                obstacle: g.obstacles.iter().map(|c| c.signed_distance(pose)).fold(f64::INFINITY, f64::min),
            },
            Geometry::PoleWindows6d(g) => {
                let boxes = g.solid_boxes();
                let d = g
                    .pole_points(pose)
                    .iter()
                    .map(|p| g.point_distance(&boxes, p))
                    .fold(f64::INFINITY, f64::min);
                PoseDistances { workspace: None, obstacle: d }
            }
        })
    }

    /// Clearance to the task's obstacles, negative when penetrating.
    pub fn signed_distance(&self, pose: &[f64]) -> Result<f64> {
        Ok(self.pose_distances(pose)?.obstacle)
    }

    /// Pose distance with angles weighted by `angle_weight` (6-D only).
    pub fn pose_distance_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(k, (x, y))| {
                let w = if k >= 3 && self.pose_dim() == 6 { self.angle_weight } else { 1.0 };
                let d = w * (x - y);
                d * d
            })
            .sum()
    }

    /// Distance between the positional parts, used for task completion.
    pub fn position_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let k = self.pose_dim().min(3);
        a[..k].iter().zip(&b[..k]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    /// Index and positional distance of the closest target.
    pub fn closest_target(&self, pose: &[f64]) -> (usize, f64) {
        self.target_poses
            .iter()
            .enumerate()
            .map(|(i, t)| (i, self.position_distance(pose, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one target")
    }

    /// Minimum distances over the trajectory, including interpolated sub-steps.
    /// Positive clearances of the pole are reported as zero, which the
    /// collision likelihood cannot distinguish from the exact value.
    fn min_distances(&self, traj: &[DVector<f64>]) -> Result<PoseDistances> {
        let mut out = PoseDistances { workspace: None, obstacle: f64::INFINITY };
        let pole = match &self.geometry {
            Geometry::PoleWindows6d(g) => Some((g, g.solid_boxes())),
            _ => None,
        };
        let mut visit = |p: &[f64]| -> Result<()> {
            let d = match &pole {
                Some((g, boxes)) => PoseDistances {
                    workspace: None,
                    obstacle: g
                        .pole_points(p)
                        .iter()
                        .map(|q| g.penetration(boxes, q))
                        .fold(0.0, f64::min),
                },
                None => self.pose_distances(p)?,
            };
            out.obstacle = out.obstacle.min(d.obstacle);
            if let Some(w) = d.workspace {
                out.workspace = Some(out.workspace.map_or(w, |o: f64| o.min(w)));
            }
            Ok(())
        };
        for (i, pose) in traj.iter().enumerate() {
            visit(pose.as_slice())?;
            if i + 1 < traj.len() {
                for k in 1..self.collision_substeps {
                    let t = k as f64 / self.collision_substeps as f64;
                    let p = pose * (1.0 - t) + &traj[i + 1] * t;
                    visit(p.as_slice())?;
                }
            }
        }
        Ok(out)
    }

    fn endpoint_features(&self, traj: &[DVector<f64>]) -> (f64, f64) {
        let first = traj[0].as_slice();
        let last = traj[traj.len() - 1].as_slice();
        let d_start = self.pose_distance_sq(first, &self.start_pose);
        let d_end = self
            .target_poses
            .iter()
            .map(|t| self.pose_distance_sq(last, t))
            .fold(f64::INFINITY, f64::min);
        (d_start, d_end)
    }

    /// Feature vector of the pick-and-place task.
    pub fn features_3d(&self, traj: &[DVector<f64>]) -> Result<Vec<f64>> {
        if !matches!(self.geometry, Geometry::PickPlace3d(_)) {
            return Err(GuideError::Domain("features_3d needs a pick-and-place scenario".into()));
        }
        self.check_traj(traj)?;
        let (d_start, d_end) = self.endpoint_features(traj);
        let dist = self.min_distances(traj)?;
        let (vel, acc) = motion_energy(traj);
        let height: f64 = traj.iter().map(|p| p[2].min(0.5)).sum();
        Ok(vec![
            d_start,
            d_end,
            collision_loglik(dist.workspace.unwrap_or(f64::INFINITY), self.sigma_sq),
            collision_loglik(dist.obstacle, self.sigma_sq),
            vel,
            acc,
            height,
        ])
    }

    /// Feature vector of the 2-D maze: the pick-and-place template without the height term.
    pub fn features_2d(&self, traj: &[DVector<f64>]) -> Result<Vec<f64>> {
        if !matches!(self.geometry, Geometry::PointMaze2d(_)) {
            return Err(GuideError::Domain("features_2d needs a maze scenario".into()));
        }
        self.check_traj(traj)?;
        let (d_start, d_end) = self.endpoint_features(traj);
        let dist = self.min_distances(traj)?;
        let (vel, acc) = motion_energy(traj);
        Ok(vec![
            d_start,
            d_end,
            collision_loglik(dist.workspace.unwrap_or(f64::INFINITY), self.sigma_sq),
            collision_loglik(dist.obstacle, self.sigma_sq),
            vel,
            acc,
        ])
    }

    /// Feature vector of the pole task.
    pub fn features_6d(&self, traj: &[DVector<f64>]) -> Result<Vec<f64>> {
        if !matches!(self.geometry, Geometry::PoleWindows6d(_)) {
            return Err(GuideError::Domain("features_6d needs a pole scenario".into()));
        }
        self.check_traj(traj)?;
        let (d_start, d_end) = self.endpoint_features(traj);
        let dist = self.min_distances(traj)?;
        let (vel, acc) = motion_energy(traj);
        let rot: f64 = traj.iter().map(|p| p[3] * p[3] + p[4] * p[4] + p[5] * p[5]).sum();
        Ok(vec![d_start, d_end, collision_loglik(dist.obstacle, self.sigma_sq), vel, acc, rot])
    }

    fn check_traj(&self, traj: &[DVector<f64>]) -> Result<()> {
        if traj.is_empty() {
            return Err(GuideError::Domain("empty trajectory".into()));
        }
        for p in traj {
            check_dim(self.pose_dim(), p.len())?;
        }
        Ok(())
    }

    pub fn features(&self, traj: &[DVector<f64>]) -> Result<Vec<f64>> {
        match self.geometry {
            Geometry::PointMaze2d(_) => self.features_2d(traj),
            Geometry::PickPlace3d(_) => self.features_3d(traj),
            Geometry::PoleWindows6d(_) => self.features_6d(traj),
        }
    }

    /// `psi(trajectory(w)) . theta` over the scenario's phase grid.
    pub fn episodic_reward(&self, w: &[f64]) -> Result<f64> {
        let traj = trajectory_from_weights(w, &self.grid(), &self.basis)?;
        let psi = self.features(&traj)?;
        Ok(psi.iter().zip(&self.feature_weights).map(|(f, t)| f * t).sum())
    }

    pub fn apply_edit(&mut self, edit: &EnvEdit) -> Result<()> {
        let n = self.pose_dim();
        match (edit, &mut self.geometry) {
            (EnvEdit::MoveObstacle { index, offset }, Geometry::PointMaze2d(g)) => {
                check_dim(2, offset.len())?;
                let w = g.walls.get_mut(*index).ok_or_else(|| missing("wall", *index))?;
                for k in 0..2 {
                    w.min[k] += offset[k];
                    w.max[k] += offset[k];
                }
            }
            (EnvEdit::MoveObstacle { index, offset }, Geometry::PickPlace3d(g)) => {
                check_dim(2, offset.len())?;
                let c = g.obstacles.get_mut(*index).ok_or_else(|| missing("cylinder", *index))?;
                c.center[0] += offset[0];
                c.center[1] += offset[1];
            }
            (EnvEdit::MoveObstacle { index, offset }, Geometry::PoleWindows6d(g)) => {
                check_dim(2, offset.len())?;
                let w = g.windows.get_mut(*index).ok_or_else(|| missing("window", *index))?;
                w.center_x += offset[0];
                w.center_z += offset[1];
            }
            (EnvEdit::AddWall { wall }, Geometry::PointMaze2d(g)) => {
                check_dim(2, wall.dim())?;
                g.walls.push(wall.clone());
            }
            (EnvEdit::AddCylinder { cylinder }, Geometry::PickPlace3d(g)) => {
                g.obstacles.push(cylinder.clone());
            }
            (EnvEdit::RemoveObstacle { index }, Geometry::PointMaze2d(g)) => {
                remove_at(&mut g.walls, *index, "wall")?;
            }
            (EnvEdit::RemoveObstacle { index }, Geometry::PickPlace3d(g)) => {
                remove_at(&mut g.obstacles, *index, "cylinder")?;
            }
            (EnvEdit::RemoveObstacle { index }, Geometry::PoleWindows6d(g)) => {
                remove_at(&mut g.windows, *index, "window")?;
            }
            (EnvEdit::MoveTarget { index, pose }, _) => {
                check_dim(n, pose.len())?;
                *self.target_poses.get_mut(*index).ok_or_else(|| missing("target", *index))? =
                    pose.clone();
            }
            (EnvEdit::AddTarget { pose }, _) => {
                check_dim(n, pose.len())?;
                self.target_poses.push(pose.clone());
            }
            (EnvEdit::RemoveTarget { index }, _) => {
                if self.target_poses.len() == 1 {
                    return Err(GuideError::Domain("cannot remove the last target".into()));
                }
                remove_at(&mut self.target_poses, *index, "target")?;
            }
            (edit, _) => {
                return Err(GuideError::Domain(format!(
                    "edit {edit:?} does not apply to scenario {}",
                    self.name
                )))
            }
        }
        self.validate()
    }
}

fn missing(what: &str, index: usize) -> GuideError {
    GuideError::Domain(format!("no {what} with index {index}"))
}

fn remove_at<T>(v: &mut Vec<T>, index: usize, what: &str) -> Result<()> {
    if index >= v.len() {
        return Err(missing(what, index));
    }
    v.remove(index);
    Ok(())
}

/// Log-likelihood of the minimum signed distance: flat at `log N(0; 0, s2)`
/// for `d >= 0`, Gaussian falloff for penetration.
pub fn collision_loglik(d_min: f64, sigma_sq: f64) -> f64 {
    ln_normal_1d(d_min.min(0.0), 0.0, sigma_sq)
}

/// Sums of squared velocities and accelerations over the phase grid, in
/// per-index units: central differences inside, one-sided at the ends.
pub fn motion_energy(traj: &[DVector<f64>]) -> (f64, f64) {
    let t = traj.len();
    if t < 2 {
        return (0.0, 0.0);
    }
    let mut vel = 0.0;
    for i in 0..t {
        let v = if i == 0 {
            &traj[1] - &traj[0]
        } else if i == t - 1 {
            &traj[t - 1] - &traj[t - 2]
        } else {
            (&traj[i + 1] - &traj[i - 1]) * 0.5
        };
        vel += v.norm_squared();
    }
    let mut acc = 0.0;
    if t >= 3 {
        for i in 0..t {
            let c = i.clamp(1, t - 2);
            acc += (&traj[c + 1] - &traj[c] * 2.0 + &traj[c - 1]).norm_squared();
        }
    }
    (vel, acc)
}
