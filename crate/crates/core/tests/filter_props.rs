use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vguide_core::filter::{shift, shift_mass};
use vguide_core::{BasisConfig, BeliefState, FilterParams, GuideGeometry, GuideMixture, PhaseGrid, PoseGaussian, ProMP};

/// Splits every cell's mass into `K` atoms and walks each atom forward on its
/// own: an atom whose slot falls in the fractional part goes one cell further.
fn atom_oracle(p: &[f64], delta_nu: f64) -> Vec<f64> {
    const K: usize = 1000;
    let last = p.len() - 1;
    let whole = delta_nu.floor() as usize;
    let ahead = ((delta_nu - delta_nu.floor()) * K as f64).round() as usize;
    let mut out = vec![0.0; p.len()];
    for (j, &mass) in p.iter().enumerate() {
        let atom = mass / K as f64;
        for a in 0..K {
            let dest = j + whole + usize::from(a < ahead);
            out[dest.min(last)] += atom;
        }
    }
    out
}

#[test]
fn shift_matches_atom_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for t in 1..=6 {
        for &dn in &[0.0, 0.5, 1.0, 1.5, 2.0, 3.2] {
            let mut cases: Vec<Vec<f64>> = (0..t)
                .map(|k| (0..t).map(|i| if i == k { 1.0 } else { 0.0 }).collect())
                .collect();
            for _ in 0..20 {
                let raw: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum();
                cases.push(raw.iter().map(|v| v / s).collect());
            }
            for p in cases {
                let got = shift_mass(&p, dn).unwrap();
                let want = atom_oracle(&p, dn);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() <= 1e-12, "T={t} dn={dn} p={p:?}: {got:?} vs {want:?}");
                }
                let before: f64 = p.iter().sum();
                assert!((got.iter().sum::<f64>() - before).abs() <= 1e-15, "mass not conserved");
                assert_eq!(got.len(), t);
            }
        }
    }
}

#[test]
fn shift_examples_from_the_worked_figure() {
    assert_eq!(shift(&[1.0, 0.0, 0.0], 1.5).unwrap(), vec![0.0, 0.5, 0.5]);
    assert_eq!(shift(&[1.0, 0.0, 0.0], 2.0).unwrap(), vec![0.0, 0.0, 1.0]);
}

proptest! {
    #[test]
    fn shift_conserves_mass(raw in prop::collection::vec(0.0..1.0f64, 1..12), dn in 0.0..15.0f64) {
        let s: f64 = raw.iter().sum();
        prop_assume!(s > 0.0);
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let out = shift_mass(&p, dn).unwrap();
        prop_assert_eq!(out.len(), p.len());
        prop_assert!((out.iter().sum::<f64>() - p.iter().sum::<f64>()).abs() <= 1e-15);
        prop_assert!(out.iter().all(|v| *v >= 0.0));
    }
}

/// Three straight-line plans from the origin toward distinct targets.
fn three_plans() -> GuideMixture {
    let basis = BasisConfig::new(5, 2, 0.2).unwrap();
    let targets = [[10.0, 0.0], [0.0, 10.0], [7.0, 7.0]];
    let plans = targets
        .iter()
        .map(|t| {
            let mut mean = Vec::new();
            for d in 0..2 {
                mean.extend((0..5).map(|c| t[d] * c as f64 / 4.0));
            }
            ProMP::new(basis, mean, vec![0.05; 10]).unwrap()
        })
        .collect();
    let free = GuideMixture::freelance_for_workspace(&[-1.0, -1.0], &[11.0, 11.0]).unwrap();
    GuideMixture::from_plans(basis, plans, &[1.0, 1.0, 1.0], free, 0.05).unwrap()
}

fn sample(g: &PoseGaussian, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let l = g.cov.clone().cholesky().unwrap().l();
    let z = DVector::from_fn(g.dim(), |_, _| StandardNormal.sample(rng));
    &g.mean + l * z
}

#[test]
fn simplices_survive_random_update_sequences() {
    let mix = three_plans();
    let grid = PhaseGrid::new(8).unwrap();
    let geo = GuideGeometry::new(&mix, &grid).unwrap();
    let weights = mix.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut ticks = 0;
    for _ in 0..1000 {
        let params = FilterParams {
            p_progress: rng.random_range(0.0..=1.0),
            delta_nu: rng.random_range(0.0..3.0),
            p_switch: [0.0, 1e-20, 0.01, 0.5][rng.random_range(0..4)],
            emission_scale: rng.random_range(1.0..50.0),
        };
        let mut b = BeliefState::from_mixture(&mix, &grid);
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-30.0..30.0));
            b.update(&geo, &x, &params, &weights).unwrap();
            ticks += 1;
            assert!((b.plan_belief.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            assert!(b.plan_belief.iter().all(|v| *v >= 0.0));
            for p in &b.phase_beliefs {
                assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
                assert!(p.iter().all(|v| *v >= 0.0));
            }
        }
    }
    assert_eq!(ticks, 100_000);
}

#[test]
fn filter_locks_onto_the_followed_plan() {
    let mix = three_plans();
    let grid = PhaseGrid::new(20).unwrap();
    let geo = GuideGeometry::new(&mix, &grid).unwrap();
    let weights = mix.weights();
    for kappa in [1.0, 5.0, 25.0] {
        let params = FilterParams { p_progress: 0.8, delta_nu: 0.1, p_switch: 1e-20, emission_scale: kappa };
        for k in 0..3 {
            for seed in 0..20 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut b = BeliefState::from_mixture(&mix, &grid);
                let hit = (0..200).find(|t| {
                    let phase = ((*t as f64 * params.delta_nu).round() as usize).min(grid.len() - 1);
                    let x = sample(geo.gaussian(k, phase), &mut rng);
                    b.update(&geo, &x, &params, &weights).unwrap();
                    b.plan_belief[k] > 0.9
                });
                assert!(hit.is_some(), "kappa {kappa} plan {k} seed {seed}: {:?}", b.plan_belief);
            }
        }
    }
}

#[test]
fn far_observations_raise_freelance_belief() {
    let mix = three_plans();
    let grid = PhaseGrid::new(20).unwrap();
    let geo = GuideGeometry::new(&mix, &grid).unwrap();
    let weights = mix.weights();
    let params = FilterParams { p_progress: 0.8, delta_nu: 0.5, p_switch: 1e-20, emission_scale: 25.0 };
    // nearest plan sd is about 0.2 here, so this point sits more than 25 sd away
    let center = DVector::from_vec(vec![9.0, 9.0]);
    let min_sd = (0..3)
        .flat_map(|o| (0..grid.len()).map(move |i| (o, i)))
        .map(|(o, i)| {
            let g = geo.gaussian(o, i);
            (&g.mean - &center).norm() / g.cov.symmetric_eigenvalues().max().sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(min_sd > 10.0, "probe only {min_sd} sd away");
    let mut mean_curve = vec![0.0; 200];
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = BeliefState::from_mixture(&mix, &grid);
        let mut crossed = None;
        for (t, slot) in mean_curve.iter_mut().enumerate() {
            let x = &center + DVector::from_fn(2, |_, _| rng.random_range(-0.2..0.2));
            b.update(&geo, &x, &params, &weights).unwrap();
            *slot += b.freelance_belief() / 20.0;
            if crossed.is_none() && b.freelance_belief() > 0.5 {
                crossed = Some(t);
            }
        }
        assert!(crossed.is_some(), "seed {seed}");
    }
    for w in mean_curve.windows(2) {
        assert!(w[1] >= w[0] - 1e-12);
    }
}
