//! Shared-autonomy guidance: learned trajectory mixtures, a potential field
//! over poses, an intent filter over plans and phases, and a per-tick session
//! that ties them together with online replanning.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod field;
pub mod filter;
pub mod learner;
pub mod math;
pub mod scenario;
pub mod session;
pub mod trajectory;

pub use error::{GuideError, Result};
pub use field::{build_pose_field, total_wrench, Ellipse, GuidanceParams, GuideGeometry, PoseFieldGMM};
pub use filter::{cue_belief, BeliefState, FilterParams};
pub use learner::{initial_mixture, learn_mixture, plan_scenario, LearnerConfig, LearnerReport};
pub use scenario::{EnvEdit, Geometry, Preset, Scenario};
pub use trajectory::{BasisConfig, GuideMixture, PhaseGrid, PoseGaussian, ProMP};
