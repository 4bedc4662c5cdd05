use nalgebra::DVector;
use vguide_core::trajectory::fit_weights;
use vguide_core::{plan_scenario, GuideMixture, Preset, ProMP, Scenario};
use vguide_harness::report::{ellipse_csv, guide_snapshots, summarize};
use vguide_harness::{batch_compare, rows_to_csv, run_episode, EpisodeConfig, Mode, OperatorScript};

fn maze() -> (Scenario, GuideMixture) {
    let s = Preset::Maze2d.scenario();
    let (mix, _) = plan_scenario(&s).unwrap();
    (s, mix)
}

fn straight(s: &Scenario, from: [f64; 2], to: [f64; 2]) -> GuideMixture {
    let grid = s.grid();
    let traj: Vec<DVector<f64>> = grid
        .values()
        .iter()
        .map(|&u| DVector::from_vec(vec![from[0] + u * (to[0] - from[0]), from[1] + u * (to[1] - from[1])]))
        .collect();
    let w = fit_weights(&traj, &grid, &s.basis, 1e-9).unwrap();
    let plan = ProMP::new(s.basis, w, vec![0.01; s.basis.weight_len()]).unwrap();
    GuideMixture::from_plans(s.basis, vec![plan], &[1.0], s.freelance().unwrap(), 0.05).unwrap()
}

#[test]
fn passive_mass_is_carried_to_the_target() {
    let s = Preset::Maze2d.scenario();
    // start to target through the lower gap, evenly spaced phases about 2.5 sd apart
    let grid = s.grid();
    let traj: Vec<DVector<f64>> = grid
        .values()
        .iter()
        .map(|&u| DVector::from_vec(vec![1.0 + 8.0 * u, 2.5 + 2.5 * (2.0 * u - 1.0).abs()]))
        .collect();
    let w = fit_weights(&traj, &grid, &s.basis, 1e-9).unwrap();
    let plan = ProMP::new(s.basis, w, vec![0.1; s.basis.weight_len()]).unwrap();
    let mix = GuideMixture::from_plans(s.basis, vec![plan], &[1.0], s.freelance().unwrap(), 0.05).unwrap();
    let start: Vec<f64> = mix.components()[0].pose_at_phase(0.0).unwrap().mean.iter().copied().collect();
    let script = OperatorScript::PassiveMass { mass: 1.0, initial: Some(start) };
    let ep = run_episode(&s, &mix, &script, Mode::GuidedNoReplan, 0, &EpisodeConfig::default()).unwrap();
    assert!(ep.metrics.completion_time.is_finite(), "guided passive mass never arrived");
    assert_eq!(ep.metrics.collisions, 0);
    let still = run_episode(&s, &mix, &script, Mode::Unguided, 0, &EpisodeConfig::default()).unwrap();
    assert!(still.metrics.completion_time.is_infinite(), "unguided passive mass should not move");
}

#[test]
fn small_wanderer_rarely_finishes() {
    let (s, mix) = maze();
    let script = OperatorScript::Wanderer { sigma: 0.05 };
    let cfg = EpisodeConfig { timeout_s: 30.0, record_frames: false };
    let seeds: Vec<u64> = (0..20).collect();
    let rows = batch_compare(&s, &mix, &script, &[Mode::Unguided], &seeds, &cfg).unwrap();
    let timeouts = rows.iter().filter(|r| r.time.is_infinite()).count();
    assert!(timeouts >= 18, "only {timeouts}/20 timed out");
}

#[test]
fn shipped_scenarios_never_start_finished() {
    for p in [Preset::Maze2d, Preset::PickPlace3d, Preset::Pole6d] {
        let s = p.scenario();
        let (_, d) = s.closest_target(&s.start_pose);
        assert!(d > s.completion_radius, "{}", p.name());
    }
    let (s, mix) = maze();
    let script = OperatorScript::PlanFollower { plan: 0, noise: 0.0, speed: 0.2 };
    for mode in Mode::ALL {
        let ep = run_episode(&s, &mix, &script, mode, 1, &EpisodeConfig::default()).unwrap();
        assert!(ep.metrics.completion_time > 0.0);
    }
}

#[test]
fn batches_are_deterministic_and_sized() {
    let (s, mix) = maze();
    let script = OperatorScript::PlanFollower { plan: 0, noise: 0.3, speed: 0.1 };
    let cfg = EpisodeConfig { timeout_s: 20.0, record_frames: false };
    let one = batch_compare(&s, &mix, &script, &[Mode::Guided], &[7], &cfg).unwrap();
    assert_eq!(one.len(), 1);
    let a = batch_compare(&s, &mix, &script, &Mode::ALL, &[0, 1, 2], &cfg).unwrap();
    let b = batch_compare(&s, &mix, &script, &Mode::ALL, &[0, 1, 2], &cfg).unwrap();
    assert_eq!(rows_to_csv(&a), rows_to_csv(&b));
    assert_eq!(a.len(), 9);
    assert!(batch_compare(&s, &mix, &script, &Mode::ALL, &[], &cfg).is_err());
    let ep1 = run_episode(&s, &mix, &script, Mode::Guided, 2, &cfg).unwrap();
    let ep2 = run_episode(&s, &mix, &script, Mode::Guided, 2, &cfg).unwrap();
    assert_eq!(ep1.metrics, ep2.metrics);
}

#[test]
fn crossing_a_wall_counts_once() {
    let s = Preset::Maze2d.scenario();
    // straight through the middle wall, which is a full meter thick
    let mix = straight(&s, [1.0, 5.0], [9.0, 5.0]);
    let script = OperatorScript::PlanFollower { plan: 0, noise: 0.0, speed: 0.1 };
    let ep = run_episode(&s, &mix, &script, Mode::Unguided, 0, &EpisodeConfig::default()).unwrap();
    let inside = ep.metrics.path.iter().filter(|p| s.signed_distance(p).unwrap() < 0.0).count();
    assert!(inside > 10, "path spent only {inside} ticks in the wall");
    assert_eq!(ep.metrics.collisions, 1);

    // a mass resting inside a wall is not a new collision each tick
    let stuck = OperatorScript::PassiveMass { mass: 1.0, initial: Some(vec![5.0, 5.0]) };
    let ep = run_episode(&s, &mix, &stuck, Mode::Unguided, 0, &EpisodeConfig { timeout_s: 2.0, record_frames: false })
        .unwrap();
    assert_eq!(ep.metrics.collisions, 0);
}

#[test]
fn recorded_frames_export_full_ellipse_chains() {
    let s = Preset::Maze2d.scenario();
    let mix = straight(&s, [1.0, 2.5], [9.0, 2.5]);
    let script = OperatorScript::PlanFollower { plan: 0, noise: 0.0, speed: 0.1 };
    let cfg = EpisodeConfig { timeout_s: 5.0, record_frames: true };
    let ep = run_episode(&s, &mix, &script, Mode::GuidedNoReplan, 0, &cfg).unwrap();
    assert_eq!(ep.frames.len(), 500);
    let snaps = guide_snapshots(&ep.frames).unwrap();
    assert_eq!(snaps.len(), 1);
    assert_eq!(snaps[0].chains.len(), 1);
    assert_eq!(snaps[0].chains[0].len(), s.phase_count);
    let csv = ellipse_csv(&snaps);
    assert_eq!(csv.lines().count(), 1 + s.phase_count);
}

#[test]
fn summaries_cover_every_mode() {
    let (s, mix) = maze();
    let script = OperatorScript::PlanFollower { plan: 0, noise: 0.2, speed: 0.1 };
    let cfg = EpisodeConfig { timeout_s: 20.0, record_frames: false };
    let rows = batch_compare(&s, &mix, &script, &Mode::ALL, &[0, 1], &cfg).unwrap();
    let sums = summarize(&rows).unwrap();
    assert_eq!(sums.iter().map(|m| m.mode).collect::<Vec<_>>(), Mode::ALL.to_vec());
    assert!(sums.iter().all(|m| m.n == 2));
}
