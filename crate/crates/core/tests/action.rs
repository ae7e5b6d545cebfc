use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use qg2_core::action::{
    action, energy, minimize_action, read_control, skeleton_solve, write_control, ActionProblem, Budget, ControlPath,
    Direction, Observable, Target,
};
use qg2_core::forcing::{apply_sigma, random_field, sample_normals, ModeCount, NoiseSpec, SigmaKind};
use qg2_core::model::{apply_blocks, ModelParams, QgModel, Scheme};
use qg2_core::spectral::{Dealias, GridSpec, LayeredField};
use qg2_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOP: [bool; 2] = [true, false];
const BOTH: [bool; 2] = [true, true];

fn grid(n: usize) -> GridSpec<f64> {
    GridSpec::new(n, PI, Dealias::THREE_HALVES).unwrap()
}

/// One forced mode `(1,1)` with `λ = 2`, `ν = 0.5` (so `a = 1`) and `q_k = 1`.
fn ou() -> (QgModel<f64>, NoiseSpec<f64>) {
    let g = grid(2);
    let model = QgModel::from_grid(g, ModelParams::barotropic(0.0, 0.5, 0.0)).unwrap();
    let noise = NoiseSpec::new(g, 2.0, 1.0, ModeCount::Count(1), SigmaKind::Additive, TOP).unwrap();
    (model, noise)
}

fn ou_target(b: f64) -> Target<f64> {
    Target::Level {
        observable: Observable::ModeAmplitude { layer: 0, j: 1, k: 1 },
        threshold: b,
        direction: Direction::Above,
    }
}

fn ou_closed_form(a: f64, b: f64, t: f64) -> f64 {
    a * b * b / (1.0 - (-2.0 * a * t).exp())
}

/// Minimum of the discretized problem by a dense KKT solve: the terminal
/// amplitude is `cᵀh` with `x_{n+1} = (x_n + dt·h̄_n)/(1 + a dt)`.
fn ou_dense_qp(a: f64, b: f64, t: f64, n_t: usize) -> f64 {
    let steps = n_t - 1;
    let dt = t / steps as f64;
    let damp = 1.0 / (1.0 + a * dt);
    let mut c = DVector::<f64>::zeros(n_t);
    for n in 0..steps {
        let reach = damp.powi((steps - n) as i32) * dt * 0.5;
        c[n] += reach;
        c[n + 1] += reach;
    }
    let mut kkt = DMatrix::<f64>::zeros(n_t + 1, n_t + 1);
    for i in 0..n_t {
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        kkt[(i, i)] = w * dt;
        kkt[(i, n_t)] = c[i];
        kkt[(n_t, i)] = c[i];
    }
    let mut rhs = DVector::<f64>::zeros(n_t + 1);
    rhs[n_t] = b;
    let sol = kkt.lu().solve(&rhs).unwrap();
    let h = sol.rows(0, n_t);
    0.5 * (0..n_t)
        .map(|i| {
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            w * dt * h[i] * h[i]
        })
        .sum::<f64>()
}

fn random_control(noise: &NoiseSpec<f64>, t: f64, n_t: usize, scale: f64, seed: u64) -> ControlPath<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs: Vec<f64> = sample_normals(n_t * noise.dim(), &mut rng);
    coeffs.iter_mut().for_each(|v| *v *= scale);
    let mut h = ControlPath::from_coeffs(t, n_t, noise.dim(), coeffs).unwrap();
    for n in 0..n_t {
        noise.mask(h.at_mut(n));
    }
    h
}

#[test]
fn action_examples() {
    let g = grid(4);
    let unit = NoiseSpec::new(g, 1.0, 0.0, ModeCount::Count(1), SigmaKind::Additive, TOP).unwrap();
    let zero = ControlPath::zeros(1.0, 11, unit.dim()).unwrap();
    assert_eq!(action(&unit, &zero).unwrap(), 0.0);

    let mut h = vec![0.0; unit.dim()];
    h[0] = 2.0;
    let two = ControlPath::constant(1.0, 11, &h).unwrap();
    assert!((action(&unit, &two).unwrap() - 2.0).abs() < 1e-14);
    assert!((energy(&unit, &two).unwrap() - 4.0).abs() < 1e-14);

    // q_k = 0.5: c = 1, s = 1, λ(1,1) = 2
    let half = NoiseSpec::new(g, 1.0, 1.0, ModeCount::Count(1), SigmaKind::Additive, TOP).unwrap();
    assert_eq!(half.eigenvalue(0, 0), 0.5);
    h[0] = 1.0;
    let path = ControlPath::constant(2.0, 41, &h).unwrap();
    // ½ ∫₀² h²/q dt evaluated by Simpson's rule on a separate grid
    let f = |_: f64| 1.0 / 0.5;
    let m = 200;
    let simpson = (2.0 / m as f64 / 3.0)
        * (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * f(2.0 * i as f64 / m as f64)
            })
            .sum::<f64>();
    assert!((action(&half, &path).unwrap() - 0.5 * simpson).abs() < 1e-13);
    assert!((0.5 * simpson - 2.0).abs() < 1e-13);
}

#[test]
fn zero_control_from_rest_stays_at_rest() {
    let g = grid(8);
    let model = QgModel::from_grid(g, ModelParams::new(1.0, 1.0, 0.5, 0.01, 0.1)).unwrap();
    let noise = NoiseSpec::new(g, 1.0, 1.5, ModeCount::Default, SigmaKind::Additive, BOTH).unwrap();
    let h = ControlPath::zeros(1.0, 21, noise.dim()).unwrap();
    let traj = skeleton_solve(&model, &noise, &h, &LayeredField::zeros(g)).unwrap();
    assert_eq!(traj.states.len(), 21);
    assert!(traj.states.iter().all(|q| q.coeffs().iter().all(|&v| v == 0.0)));
}

#[test]
fn constant_control_matches_scalar_ode() {
    let (model, noise) = ou();
    let hk = 0.8;
    let a = 1.0;
    let exact = |t: f64| hk / a * (1.0 - (-a * t).exp());
    let amp = Observable::ModeAmplitude { layer: 0, j: 1, k: 1 };
    let mut errors = Vec::new();
    for n_t in [201, 401] {
        let mut h = vec![0.0; noise.dim()];
        h[0] = hk;
        let path = ControlPath::constant(2.0, n_t, &h).unwrap();
        let traj = skeleton_solve(&model, &noise, &path, &LayeredField::zeros(*model.grid())).unwrap();
        let mut worst: f64 = 0.0;
        for (i, q) in traj.states.iter().enumerate() {
            let t = i as f64 * path.dt();
            worst = worst.max((amp.evaluate(q, 0.0) - exact(t)).abs());
        }
        errors.push(worst);
    }
    assert!(errors[0] < 2e-3 * hk / a, "{errors:?}");
    let ratio = errors[0] / errors[1];
    assert!((ratio - 2.0).abs() < 0.1, "first-order convergence, ratio {ratio}");
}

#[test]
fn pure_action_gradient_is_weighted_control() {
    let g = grid(4);
    let model = QgModel::from_grid(g, ModelParams::new(1.0, 1.0, 0.0, 0.05, 0.1)).unwrap();
    let noise = NoiseSpec::new(g, 1.0, 1.0, ModeCount::Default, SigmaKind::Additive, BOTH).unwrap();
    // an inactive target contributes nothing
    let target = Target::Level {
        observable: Observable::TerminalL2,
        threshold: 1e30,
        direction: Direction::Below,
    };
    let problem = ActionProblem::new(&model, &noise, LayeredField::zeros(g), 1.0, 17, target).unwrap();
    let h = random_control(&noise, 1.0, 17, 0.3, 5);
    let (f, grad) = problem.gradient(&h).unwrap();
    assert!((f - action(&noise, &h).unwrap()).abs() < 1e-15 * f);
    let eig = noise.eigenvalues();
    for n in 0..17 {
        for c in 0..noise.dim() {
            let want = h.weight(n) * h.dt() * h.at(n)[c] / eig[c];
            assert!((grad.at(n)[c] - want).abs() <= 1e-14 * want.abs().max(1e-300));
        }
    }
}

#[test]
fn linear_gradient_matches_dense_transpose() {
    let g = grid(4);
    let d = 2 * g.modes();
    let model = QgModel::from_grid(g, ModelParams::new(1.5, 0.7, 0.9, 0.05, 0.2))
        .unwrap()
        .with_nonlinear(false);
    let noise = NoiseSpec::new(g, 1.0, 1.0, ModeCount::Count(5), SigmaKind::Additive, BOTH).unwrap();
    let (t, n_t) = (0.5, 9);
    let tau = 0.7;
    let mu = 3.0;
    let target = Target::Level {
        observable: Observable::ModeAmplitude { layer: 1, j: 2, k: 1 },
        threshold: tau,
        direction: Direction::Above,
    };
    let problem = ActionProblem::new(&model, &noise, LayeredField::zeros(g), t, n_t, target)
        .unwrap()
        .with_mu(mu)
        .unwrap();
    let h = ControlPath::zeros(t, n_t, noise.dim()).unwrap();
    let (_, grad) = problem.gradient(&h).unwrap();

    // dense operators from unit-vector application
    let dt = h.dt();
    let stepper = model.stepper(dt, Scheme::Imex1).unwrap();
    let unit = |i: usize| {
        let mut c = vec![0.0; d];
        c[i] = 1.0;
        LayeredField::from_coeffs(g, c).unwrap()
    };
    let b = DMatrix::from_fn(d, d, |r, c| apply_blocks(stepper.implicit_blocks(), &unit(c), false).coeffs()[r]);
    let e = DMatrix::from_fn(d, d, |r, c| model.explicit_tendency(&unit(c)).unwrap().coeffs()[r]);
    let p = noise.dim();
    let sigma = DMatrix::from_fn(d, p, |r, c| {
        let mut w = vec![0.0; p];
        w[c] = 1.0;
        apply_sigma(model.spectral(), &noise, SigmaKind::Additive, &LayeredField::zeros(g), &w)
            .unwrap()
            .coeffs()[r]
    });
    let s = &b * (DMatrix::identity(d, d) + &e * dt);
    let drive = &b * &sigma * (0.5 * dt);
    let steps = n_t - 1;
    let mut gmat = DMatrix::<f64>::zeros(d, n_t * p);
    let mut prop = DMatrix::<f64>::identity(d, d);
    for n in (0..steps).rev() {
        let block = &prop * &drive;
        for node in [n, n + 1] {
            let mut view = gmat.columns_mut(node * p, p);
            view += &block;
        }
        prop = &prop * &s;
    }
    let mut dp = DVector::<f64>::zeros(d);
    dp[g.modes() + g.index(2, 1)] = -2.0 * mu * tau * g.length() / 2.0;
    let oracle = gmat.transpose() * dp;
    let scale = oracle.amax();
    assert!(scale > 0.0);
    for (i, (&a, &o)) in grad.coeffs().iter().zip(oracle.iter()).enumerate() {
        assert!((a - o).abs() <= 1e-11 * scale, "entry {i}: {a} vs {o}");
    }
}

fn fd_check(problem: &ActionProblem<'_, f64>, h: &ControlPath<f64>, directions: usize, seed: u64) -> f64 {
    let (_, grad) = problem.gradient(h).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..directions {
        let dir = random_control(problem.noise(), h.t_final(), h.n_t(), 1.0, seed + i as u64);
        let norm = dir.coeffs().iter().map(|v| v * v).sum::<f64>().sqrt();
        let hn = h.coeffs().iter().map(|v| v * v).sum::<f64>().sqrt();
        let delta = 1e-5 * hn.max(1.0) / norm;
        let shifted = |s: f64| {
            let c = h.coeffs().iter().zip(dir.coeffs()).map(|(a, b)| a + s * b).collect();
            ControlPath::from_coeffs(h.t_final(), h.n_t(), h.dim(), c).unwrap()
        };
        let fd = (problem.objective(&shifted(delta)).unwrap() - problem.objective(&shifted(-delta)).unwrap())
            / (2.0 * delta);
        let ad: f64 = grad.coeffs().iter().zip(dir.coeffs()).map(|(a, b)| a * b).sum();
        worst = worst.max((fd - ad).abs() / ad.abs());
    }
    worst
}

#[test]
fn nonlinear_gradient_matches_finite_differences() {
    let g = grid(8);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let forcing = random_field(&g, 0.5, &mut rng).layer(0).to_vec();
    let model = QgModel::from_grid(g, ModelParams::new(2.0, 1.0, 0.8, 0.02, 0.1).with_forcing(forcing)).unwrap();
    let xi = random_field(&g, 2.0, &mut rng);
    let center = random_field(&g, 4.0, &mut rng);
    let kinds = [
        (SigmaKind::Additive, SigmaKind::Additive),
        (
            SigmaKind::Multiplicative { a: 1.0, b: 0.5 },
            SigmaKind::Multiplicative { a: 1.2, b: 0.4 },
        ),
    ];
    for (kind, tilde) in kinds {
        let noise = NoiseSpec::new(g, 1.0, 1.5, ModeCount::Default, kind, BOTH)
            .unwrap()
            .with_tilde(tilde)
            .unwrap();
        let target = Target::Ball {
            center: center.clone(),
            radius: 0.5,
        };
        let problem = ActionProblem::new(&model, &noise, xi.clone(), 0.5, 32, target)
            .unwrap()
            .with_mu(5.0)
            .unwrap();
        let h = random_control(&noise, 0.5, 32, 0.7, 99);
        let err = fd_check(&problem, &h, 10, 1000);
        assert!(err <= 1e-5, "{kind:?}: relative error {err}");
    }
}

#[test]
fn level_target_gradient_matches_finite_differences() {
    let g = grid(8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = QgModel::from_grid(g, ModelParams::new(1.0, 3.0, 0.4, 0.02, 0.05)).unwrap();
    let xi = random_field(&g, 1.0, &mut rng);
    let noise = NoiseSpec::new(g, 1.0, 1.0, ModeCount::Count(6), SigmaKind::Additive, TOP).unwrap();
    for observable in [Observable::TerminalL2, Observable::ModeAmplitude { layer: 0, j: 1, k: 2 }] {
        let target = Target::Level {
            observable,
            threshold: 10.0,
            direction: Direction::Above,
        };
        let problem = ActionProblem::new(&model, &noise, xi.clone(), 0.4, 20, target).unwrap();
        let h = random_control(&noise, 0.4, 20, 0.5, 7);
        let err = fd_check(&problem, &h, 10, 50);
        assert!(err <= 1e-5, "{observable:?}: relative error {err}");
    }
}

#[test]
fn running_max_cannot_be_targeted() {
    let (model, noise) = ou();
    let target = Target::Level {
        observable: Observable::RunningMaxL2,
        threshold: 1.0,
        direction: Direction::Above,
    };
    assert!(ActionProblem::new(&model, &noise, LayeredField::zeros(*model.grid()), 1.0, 11, target).is_err());
}

#[test]
fn closed_form_agrees_with_dense_qp() {
    for (a, t) in [(1.0, 1.0), (1.0, 0.5), (2.0, 1.0)] {
        let qp = ou_dense_qp(a, 1.0, t, 257);
        let cf = ou_closed_form(a, 1.0, t);
        assert!((qp - cf).abs() < 5e-3 * cf, "a={a} T={t}: {qp} vs {cf}");
    }
}

#[test]
fn ou_instanton_matches_oracle_and_scales_quadratically() {
    let (model, noise) = ou();
    let xi = LayeredField::zeros(*model.grid());
    let (t, n_t) = (1.0, 129);
    let solve = |b: f64| {
        let p = ActionProblem::new(&model, &noise, xi.clone(), t, n_t, ou_target(b)).unwrap();
        minimize_action(&p).unwrap()
    };
    let r1 = solve(1.0);
    let r2 = solve(2.0);
    assert!(r1.feasible && r2.feasible);
    let oracle = ou_closed_form(1.0, 1.0, t);
    assert!((r1.action - oracle).abs() < 0.02 * oracle, "I* {} vs {oracle}", r1.action);
    let qp = ou_dense_qp(1.0, 1.0, t, n_t);
    assert!((r1.action - qp).abs() < 3e-3 * qp, "I* {} vs discrete {qp}", r1.action);
    let ratio = r2.action / r1.action;
    assert!((ratio - 4.0).abs() < 0.08, "ratio {ratio}");
    assert!((r1.action - action(&noise, &r1.control).unwrap()).abs() <= 1e-10 * r1.action);
}

#[test]
fn optimizer_log_is_monotone_within_stages() {
    let (model, noise) = ou();
    let p = ActionProblem::new(&model, &noise, LayeredField::zeros(*model.grid()), 1.0, 65, ou_target(1.5)).unwrap();
    let r = minimize_action(&p).unwrap();
    assert!(!r.log.is_empty());
    for rec in &r.log {
        assert_eq!(rec.mu, p.mu() * 2f64.powi(rec.stage as i32));
    }
    for w in r.log.windows(2) {
        if w[0].stage == w[1].stage {
            assert!(w[1].objective <= w[0].objective);
        }
    }
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("iterate,stage,mu,objective,action,violation,step\n"));
    assert_eq!(text.lines().count(), r.log.len() + 1);
}

#[test]
fn reachable_targets_cost_nothing() {
    let g = grid(8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = QgModel::from_grid(g, ModelParams::new(1.0, 1.0, 0.5, 0.02, 0.1)).unwrap();
    let noise = NoiseSpec::new(g, 1.0, 1.5, ModeCount::Default, SigmaKind::Additive, BOTH).unwrap();
    let xi = random_field(&g, 1.0, &mut rng);
    let free = model.integrate(&xi, 0.5, 0.5 / 16.0, Scheme::Imex1).unwrap();
    let target = Target::Ball {
        center: free.final_state().clone(),
        radius: 0.0,
    };
    let p = ActionProblem::new(&model, &noise, xi, 0.5, 17, target).unwrap();
    let r = minimize_action(&p).unwrap();
    assert!(r.feasible);
    assert_eq!(r.action, 0.0);
    assert!(r.control.coeffs().iter().all(|&v| v == 0.0));
}

#[test]
fn instanton_is_stable_under_time_refinement() {
    let (model, noise) = ou();
    let xi = LayeredField::zeros(*model.grid());
    let solve = |n_t: usize| {
        let p = ActionProblem::new(&model, &noise, xi.clone(), 1.0, n_t, ou_target(1.0)).unwrap();
        minimize_action(&p).unwrap().action
    };
    let (coarse, fine) = (solve(65), solve(129));
    assert!((coarse - fine).abs() <= 0.01 * fine, "{coarse} vs {fine}");
}

#[test]
fn nonlinear_instanton_refines_consistently() {
    let g = grid(6);
    let model = QgModel::from_grid(g, ModelParams::new(1.0, 1.0, 0.5, 0.05, 0.1)).unwrap();
    let noise = NoiseSpec::new(g, 1.0, 1.0, ModeCount::Count(4), SigmaKind::Additive, TOP).unwrap();
    let xi = LayeredField::single_mode(g, 0, 1, 2, 1.0);
    let target = Target::Level {
        observable: Observable::ModeAmplitude { layer: 0, j: 1, k: 1 },
        threshold: 0.8,
        direction: Direction::Above,
    };
    let solve = |n_t: usize| {
        let p = ActionProblem::new(&model, &noise, xi.clone(), 0.5, n_t, target.clone()).unwrap();
        let r = minimize_action(&p).unwrap();
        assert!(r.feasible);
        assert!(r.action > 0.0);
        r.action
    };
    let (coarse, fine) = (solve(33), solve(65));
    assert!((coarse - fine).abs() <= 0.01 * fine, "{coarse} vs {fine}");
}

#[test]
fn cap_keeps_controls_in_s_m() {
    let (model, noise) = ou();
    let cap = 0.5;
    let p = ActionProblem::new(&model, &noise, LayeredField::zeros(*model.grid()), 1.0, 33, ou_target(1.0))
        .unwrap()
        .with_cap(cap)
        .unwrap()
        .with_budget(Budget {
            max_stages: 6,
            ..Budget::default()
        });
    let r = minimize_action(&p).unwrap();
    assert!(energy(&noise, &r.control).unwrap() <= cap * (1.0 + 1e-12));
    // the unconstrained minimum needs ∫h² ≈ 2.3
    assert!(!r.feasible);
    assert!(r.violation > 0.0);
}

#[test]
fn level_sets_have_uniformly_bounded_paths() {
    let g = grid(8);
    let model = QgModel::from_grid(g, ModelParams::new(1.0, 1.0, 0.5, 0.02, 0.1)).unwrap();
    let noise = NoiseSpec::new(g, 1.0, 1.5, ModeCount::Default, SigmaKind::Additive, BOTH).unwrap();
    let xi = LayeredField::single_mode(g, 0, 1, 1, 0.5);
    let m_cap = 2.0;
    let bound = |n_t: usize| {
        (0..100)
            .map(|i| {
                let h = random_control(&noise, 1.0, n_t, 1.0, 500 + i);
                let h = h.scaled((m_cap / energy(&noise, &h).unwrap()).sqrt());
                skeleton_solve(&model, &noise, &h, &xi).unwrap().x_norm().unwrap()
            })
            .fold(0.0f64, f64::max)
    };
    let (b1, b2) = (bound(17), bound(33));
    assert!(b1.is_finite() && b2.is_finite());
    assert!(b2 <= 1.05 * b1, "{b1} then {b2}");
}

#[test]
fn control_snapshot_round_trips() {
    let g = grid(4);
    let noise = NoiseSpec::new(g, 1.0, 1.0, ModeCount::Count(3), SigmaKind::Additive, BOTH).unwrap();
    let h = random_control(&noise, 0.75, 5, 1.0, 2);
    let mut bytes = Vec::new();
    write_control(&mut bytes, &noise, &h).unwrap();
    let header = b"qg2 field v1 N=4 L=3.141592653589793 layers=2 kind=control nt=5 T=0.75\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 5 * 32 * 8);
    let back = read_control(&mut bytes.as_slice(), &noise).unwrap();
    assert_eq!(back.n_t(), 5);
    for (a, b) in back.coeffs().iter().zip(h.coeffs()) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
    }
}

#[test]
fn mismatched_inputs_rejected() {
    let (model, noise) = ou();
    let other = NoiseSpec::new(grid(4), 1.0, 1.0, ModeCount::Count(1), SigmaKind::Additive, TOP).unwrap();
    let xi = LayeredField::zeros(*model.grid());
    assert!(matches!(
        ActionProblem::new(&model, &other, xi.clone(), 1.0, 5, ou_target(1.0)),
        Err(Error::GridMismatch)
    ));
    let p = ActionProblem::new(&model, &noise, xi, 1.0, 5, ou_target(1.0)).unwrap();
    let wrong = ControlPath::zeros(1.0, 9, noise.dim()).unwrap();
    assert!(p.gradient(&wrong).is_err());
    assert!(p.clone().with_mu(0.0).is_err());
}
