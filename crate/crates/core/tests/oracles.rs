use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synthpanel_core::scm::{solve_weights_fixed_v, PredictorWeights};
use synthpanel_core::sdid::weighted_twfe_effect;
use synthpanel_core::simplex::SimplexLsq;
use synthpanel_core::{
    build_panel, did_estimate, sdid_estimate, sdid_estimate_with, OutcomeKind, PanelDataset, QpOptions, Record,
    SdidOptions, WeightVector,
};

fn random_panel(rng: &mut ChaCha8Rng, donors: usize, pre: usize, post: usize) -> PanelDataset {
    let mut recs = Vec::new();
    for i in 0..=donors {
        let unit = if i == donors { "treated".to_string() } else { format!("u{i:02}") };
        let base: f64 = rng.random_range(-5.0..5.0);
        for t in 0..pre + post {
            recs.push(Record::new(unit.clone(), 2000 + t as i32, base + rng.random_range(-3.0..3.0)));
        }
    }
    build_panel(&recs, "treated", 2000 + pre as i32, OutcomeKind::Level).unwrap()
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.random_range(1e-9f64..1.0).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|r| r / s).collect()
}

fn renormalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Exhaustive search over the three-donor simplex on a grid of `1 / steps`.
fn grid_minimum(problem: &SimplexLsq, steps: usize) -> f64 {
    let h = 1.0 / steps as f64;
    let mut best = f64::INFINITY;
    for a in 0..=steps {
        for b in 0..=steps - a {
            let w = [a as f64 * h, b as f64 * h, (steps - a - b) as f64 * h];
            best = best.min(problem.objective(&w));
        }
    }
    best
}

#[test]
fn inner_solver_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..10 {
        let k = rng.random_range(1..=4);
        let donors = DMatrix::from_fn(k, 3, |_, _| rng.random_range(-2.0..2.0));
        let treated = DVector::from_fn(k, |_, _| rng.random_range(-2.0..2.0));
        let v = PredictorWeights::new(random_simplex(&mut rng, k)).unwrap();
        let sol = solve_weights_fixed_v(&treated, &donors, &v, &QpOptions::default());
        let problem = SimplexLsq {
            design: &donors,
            target: &treated,
            row_weights: Some(v.as_slice()),
            ridge: 0.0,
        };
        let grid = grid_minimum(&problem, 400);
        assert!(sol.objective <= grid + 1e-12, "{} > {}", sol.objective, grid);
        assert!(grid - sol.objective < 1e-3);
    }
}

/// `(Ybar_T,post - sum_t l_t Y_T,t) - sum_i w_i (Ybar_i,post - sum_t l_t Y_i,t)`
fn double_difference(panel: &PanelDataset, w: &[f64], l: &[f64]) -> f64 {
    let y = panel.outcomes();
    let (t_pre, t) = (panel.n_pre(), panel.n_periods());
    let contrast = |i: usize| {
        let post = (t_pre..t).map(|s| y[(i, s)]).sum::<f64>() / (t - t_pre) as f64;
        let pre: f64 = (0..t_pre).map(|s| l[s] * y[(i, s)]).sum();
        post - pre
    };
    contrast(panel.treated_index()) - (0..panel.n_donors()).map(|i| w[i] * contrast(i)).sum::<f64>()
}

#[test]
fn weighted_regression_matches_double_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let (n, pre, post) = (rng.random_range(2..7), rng.random_range(2..6), rng.random_range(1..4));
        let panel = random_panel(&mut rng, n, pre, post);
        let mut w = random_simplex(&mut rng, n);
        let mut l = random_simplex(&mut rng, pre);
        // exact zeros exercise the dropped rows
        if n > 2 {
            w[0] = 0.0;
        }
        if pre > 2 {
            l[1] = 0.0;
        }
        let w = WeightVector::new(renormalize(w)).unwrap();
        let l = WeightVector::new(renormalize(l)).unwrap();
        let tau = weighted_twfe_effect(&panel, w.as_slice(), l.as_slice()).unwrap();
        let oracle = double_difference(&panel, w.as_slice(), l.as_slice());
        assert!((tau - oracle).abs() < 1e-9, "{tau} vs {oracle}");
    }
}

#[test]
fn optimized_fit_agrees_with_double_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let panel = random_panel(&mut rng, 5, 4, 2);
        let fit = sdid_estimate(&panel).unwrap();
        let l = fit.time_weights.as_ref().unwrap();
        let oracle = double_difference(&panel, fit.unit_weights.as_slice(), l.as_slice());
        assert!((fit.tau_hat - oracle).abs() < 1e-9);
    }
}

#[test]
fn uniform_weights_reduce_to_did() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let (n, pre, post) = (rng.random_range(2..8), rng.random_range(2..7), rng.random_range(1..4));
        let panel = random_panel(&mut rng, n, pre, post);
        let fit = sdid_estimate_with(&panel, &SdidOptions::did()).unwrap();
        assert!((fit.tau_hat - did_estimate(&panel)).abs() < 1e-10);
    }
}

#[test]
fn unit_weights_beat_every_vertex() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..30 {
        let panel = random_panel(&mut rng, 4, 5, 2);
        let zeta = synthpanel_core::sdid::regularization_zeta(&panel).unwrap();
        let qp = QpOptions::default();
        let opt = synthpanel_core::sdid::solve_unit_weights(&panel, zeta, true, &qp);
        for j in 0..4 {
            let y = panel.outcomes();
            let pre = panel.n_pre();
            let treated: Vec<f64> = (0..pre).map(|t| y[(4, t)]).collect();
            let resid: Vec<f64> = (0..pre).map(|t| y[(j, t)] - treated[t]).collect();
            let m = resid.iter().sum::<f64>() / pre as f64;
            let vertex_obj = resid.iter().map(|r| (r - m) * (r - m)).sum::<f64>() + zeta * zeta * pre as f64;
            assert!(opt.objective <= vertex_obj + 1e-9);
        }
    }
}
