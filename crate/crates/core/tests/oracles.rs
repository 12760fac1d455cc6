//! Closed-form and independently computed reference values, checked
//! through the public API.

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};

use contraction_lpv::casestudy;
use contraction_lpv::certify::{self, ClosedLoop, Goal, SymbolicMatrixFn, Verdict};
use contraction_lpv::expr::{self, ExprMatrix, VarRole, VarSpace};
use contraction_lpv::geometry::{self, GeodesicSettings, Metric};
use contraction_lpv::grid::{Axis, Grid};
use contraction_lpv::linalg;
use contraction_lpv::lpv::{EquilibriumFamily, SchedulingMode};
use contraction_lpv::model::SystemModel;
use contraction_lpv::realization::{self, CcmController};
use contraction_lpv::sim::{self, Controller, ReferenceSignal, SimOptions, Target};

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol)
}

/// `sup_ω |1/(jω + 1)|` on a log grid.
fn lag_hinf_sweep() -> f64 {
    (0..=4000)
        .map(|k| 10f64.powf(-4.0 + 8.0 * k as f64 / 4000.0))
        .chain([0.0])
        .map(|w| 1.0 / (1.0 + w * w).sqrt())
        .fold(0.0, f64::max)
}

// frozen: ∫₀¹ √(1 + 3x²) dx
const BUMP_LENGTH: f64 = 1.380_172_998_150_473;

#[test]
fn quadrature_oracle_matches_frozen_length() {
    let q = simpson(&|x| (1.0 + 3.0 * x * x).sqrt(), 0.0, 1.0, 1e-14);
    assert!((q - BUMP_LENGTH).abs() < 1e-12, "{q}");
    let closed = 1.0 + (3f64.sqrt()).asinh() / (2.0 * 3f64.sqrt());
    assert!((closed - BUMP_LENGTH).abs() < 1e-14);
}

#[test]
fn expression_examples() {
    let s = VarSpace::from_names(&["x1", "x2", "w"], VarRole::State);
    let e = expr::parse("-x1 - x2 + w", &s).unwrap();
    assert_eq!(e.eval(&[1.0, 2.0, 3.0]).unwrap(), 0.0);

    let s = VarSpace::from_names(&["x2", "u"], VarRole::State);
    let e = expr::parse("1 - exp(-x2) + u", &s).unwrap();
    assert_eq!(e.eval(&[0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(e.diff(0).eval(&[0.0, 0.0]).unwrap(), 1.0);
    let printed = expr::parse(&e.diff(0).display(&s).to_string(), &s).unwrap();
    let expected = expr::parse("exp(-x2)", &s).unwrap();
    for x2 in [-1.0, 0.0, 0.5, 2.0] {
        assert_eq!(printed.eval(&[x2, 0.3]).unwrap(), expected.eval(&[x2, 0.3]).unwrap());
    }

    let s = VarSpace::from_names(&["x"], VarRole::State);
    assert_eq!(expr::parse("x^(", &s).unwrap_err().offset(), 3);
    let cube = expr::parse("x^3", &s).unwrap();
    let d = cube.diff(0).eval(&[2.0]).unwrap();
    let h = 1e-5;
    let fd = (cube.eval(&[2.0 + h]).unwrap() - cube.eval(&[2.0 - h]).unwrap()) / (2.0 * h);
    assert_eq!(d, 12.0);
    assert!((d - fd).abs() < 1e-6);
    assert!(expr::parse("ln(x)", &s).unwrap().eval(&[-1.0]).is_err());

    let s = VarSpace::from_names(&["x1", "w"], VarRole::State);
    assert_eq!(expr::parse("x1 + 2", &s).unwrap().diff(1).eval(&[5.0, 7.0]).unwrap(), 0.0);
    assert_eq!(expr::parse("exp(-w) - 1", &s).unwrap().eval(&[0.0, 0.0]).unwrap(), 0.0);
}

#[test]
fn plant_examples() {
    let m = casestudy::model();
    assert_eq!(m.eval_dynamics(&[0.0, 0.0], &[0.0], &[0.0]).unwrap().as_slice(), &[0.0, 0.0]);
    assert_eq!(m.eval_dynamics(&[1.0, 0.0], &[0.0], &[0.0]).unwrap().as_slice(), &[-1.0, 0.0]);
    let j = m.jacobians(&[0.0, 0.0], &[0.0], &[0.0]).unwrap();
    assert_eq!(j.a, DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 0.0, 1.0]));
    assert_eq!(j.bu, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
    assert_eq!(j.bw, DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
    let j = m.jacobians(&[0.3, 2f64.ln()], &[0.0], &[0.0]).unwrap();
    assert!((j.a[(1, 1)] - 0.5).abs() < 1e-15);
    assert!(m.fd_check(&[0.4, -0.7], &[0.2], &[0.1], 1e-5).unwrap() <= 1e-6);
    assert!(m.fd_check(&[0.0, 0.0], &[0.0], &[0.0], 0.0).is_err());

    let lag = SystemModel::parse("lin", &["x1", "x2"], &[], &[], &["2*x1 - x2", "0.5*x1 + 3*x2"], &["x1"]).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, 0.5, 3.0]);
    for p in [[1.0, -2.0], [0.3, 0.7], [-5.0, 4.0]] {
        assert_eq!(lag.eval_dynamics(&p, &[], &[]).unwrap(), &a * v(&p));
        assert_eq!(lag.jacobians(&p, &[], &[]).unwrap().a, a);
        assert!(lag.fd_check(&p, &[], &[], 1e-5).unwrap() <= 1e-10);
    }
}

#[test]
fn lpv_examples() {
    let m = casestudy::model();
    let f = casestudy::family(&m);
    let j = f.lpv_linearize(&m, &[1.0]).unwrap();
    assert_eq!(j.a, DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 0.0, 1.0]));
    assert_eq!(j.bu, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
    let j = f.lpv_linearize(&m, &[2.0]).unwrap();
    assert!((j.a[(1, 1)] - 2.0).abs() < 1e-15);

    let gsc1 = casestudy::gsc(&f, SchedulingMode::ReferenceScheduled);
    let gsc2 = casestudy::gsc(&f, SchedulingMode::StateScheduled);
    let sigma0 = f.reference_sigma(&[0.0]).unwrap();
    assert_eq!(gsc1.control(&f, &[0.0, 0.0], &[0.0], sigma0.as_slice()).unwrap().u[0], 0.0);
    assert!((gsc1.control(&f, &[1.0, 0.0], &[0.0], sigma0.as_slice()).unwrap().u[0] - 1.0).abs() < 1e-15);
    assert!((gsc2.control(&f, &[1.0, 0.0], &[0.0], sigma0.as_slice()).unwrap().u[0] - 1.0).abs() < 1e-15);

    let fw = casestudy::family_w(&m);
    let r = fw.residual_term(&[0.3], &[0.5]).unwrap();
    assert_eq!(r.as_slice(), &[0.0, 0.5]);
    assert_eq!(fw.residual_term(&[0.3], &[0.0]).unwrap().as_slice(), &[0.0, 0.0]);
}

#[test]
fn hidden_coupling_values() {
    let m = casestudy::model();
    let fw = casestudy::family_w(&m);
    let gsc2 = casestudy::gsc(&fw, SchedulingMode::StateScheduled);
    let gsc1 = casestudy::gsc(&fw, SchedulingMode::ReferenceScheduled);
    for s in [-2.5, -1.0, 0.0, 0.7, 2.9] {
        assert!((gsc2.hidden_coupling(&fw, &[s]).unwrap()[(0, 0)] - 3.0).abs() < 1e-12);
        assert!(gsc1.hidden_coupling(&fw, &[s]).unwrap()[(0, 0)].abs() < 1e-12);
    }
    // the e^{-w} parameterization rescales by dσ/dw = -σ
    let f = casestudy::family(&m);
    let gsc2 = casestudy::gsc(&f, SchedulingMode::StateScheduled);
    for s in [0.1, 1.0, 4.0] {
        assert!((gsc2.hidden_coupling(&f, &[s]).unwrap()[(0, 0)] + 3.0 / s).abs() < 1e-12);
    }
    // numerical route through the generic exactness check
    let gsc2 = casestudy::gsc(&fw, SchedulingMode::StateScheduled);
    let grid = Grid::new(vec![Axis::new(-1.0, 1.0, 5)]);
    let worst = realization::exactness_check(
        &fw,
        |s| gsc2.gain(&fw, s),
        |x, s| gsc2.realized_control(&fw, x, s),
        &grid,
        1e-5,
    )
    .unwrap();
    assert!((worst - 3.0).abs() < 1e-5, "{worst}");
}

#[test]
fn eigen_examples() {
    let d = DMatrix::from_diagonal(&v(&[-2.0, -6.0]));
    assert_eq!(linalg::max_eig_sym(&d).unwrap(), -2.0);
    let a = casestudy::closed_loop_matrix();
    assert_eq!(linalg::he(&DMatrix::identity(2, 2), &a), DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, -6.0]));
    let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    assert!((linalg::max_eig_sym(&swap).unwrap() - 1.0).abs() < 1e-14);
}

fn no_params() -> Arc<VarSpace> {
    Arc::new(VarSpace::new())
}

fn constant_fn(m: DMatrix<f64>) -> SymbolicMatrixFn {
    SymbolicMatrixFn::constant(no_params(), &m, &[]).unwrap()
}

#[test]
fn stability_certificates() {
    let g = Grid::new(vec![]);
    let id = constant_fn(DMatrix::identity(2, 2));
    let acl = casestudy::closed_loop_matrix();
    let r = certify::check_stability_lmi(&id, |_| Ok(acl.clone()), 0.9, &g, &[]).unwrap();
    assert_eq!(r.verdict, Verdict::Certified);
    assert!((r.worst_eig + 0.2).abs() < 1e-12);
    let r = certify::check_stability_lmi(&id, |_| Ok(acl.clone()), 1.1, &g, &[]).unwrap();
    assert_eq!(r.verdict, Verdict::Violated);
    let star = certify::bisect(
        |l| certify::check_stability_lmi(&id, |_| Ok(acl.clone()), l, &g, &[]),
        Goal::Maximize,
        (0.0, 3.0),
        1e-2,
    )
    .unwrap();
    let l = star.certified_scalar.unwrap();
    assert!((0.99..=1.01).contains(&l), "{l}");

    // λ = 0 with a Lyapunov-oracle metric certifies any Hurwitz matrix
    let hurwitz = DMatrix::from_row_slice(3, 3, &[-1.0, 4.0, 0.0, -2.0, -0.5, 1.0, 0.0, 0.0, -3.0]);
    let p = linalg::lyapunov(&hurwitz, &DMatrix::identity(3, 3)).unwrap();
    let r = certify::check_stability_lmi(&constant_fn(p), |_| Ok(hurwitz.clone()), 0.0, &g, &[]).unwrap();
    assert_eq!(r.verdict, Verdict::Certified);

    let err = certify::bisect(
        |l| certify::check_stability_lmi(&id, |_| Ok(acl.clone()), l, &g, &[]),
        Goal::Maximize,
        (2.0, 3.0),
        1e-2,
    )
    .unwrap_err();
    assert!(matches!(err, certify::CertifyError::InvalidBracket { .. }));
}

#[test]
fn convex_synthesis_recovers_the_designed_gain() {
    let m = casestudy::model();
    let f = casestudy::family(&m);
    let sig = f.sigma_space().clone();
    // W = P⁻¹ with P the shifted Lyapunov solution, L = K(σ) W
    let w = casestudy::ccm_metric_matrix().try_inverse().unwrap();
    let w_rows: Vec<Vec<String>> = (0..2).map(|i| (0..2).map(|j| format!("{}", w[(i, j)])).collect()).collect();
    let l_row = vec![vec![
        format!("{} + (-3 - sigma) * {}", w[(0, 0)], w[(1, 0)]),
        format!("{} + (-3 - sigma) * {}", w[(0, 1)], w[(1, 1)]),
    ]];
    let wf = SymbolicMatrixFn::parse(sig.clone(), &w_rows, &[0], true).unwrap();
    let lf = SymbolicMatrixFn::parse(sig, &l_row, &[0], false).unwrap();
    let grid = Grid::uniform(f.bounds(), 11);
    let rep = certify::check_convex_synthesis(&wf, &lf, certify::lpv_plant(&m, &f), 1.899, &grid, f.rate_bounds()).unwrap();
    assert_eq!(rep.report.verdict, Verdict::Certified);
    for (s, k) in &rep.gains {
        assert!((k[(0, 0)] - 1.0).abs() < 1e-10);
        assert!((k[(0, 1)] + 3.0 + s[0]).abs() < 1e-10);
    }
    // no feedback on an unstable plant
    let zero = SymbolicMatrixFn::constant(f.sigma_space().clone(), &DMatrix::zeros(1, 2), &[0]).unwrap();
    let rep = certify::check_convex_synthesis(&wf, &zero, certify::lpv_plant(&m, &f), 0.0, &grid, f.rate_bounds()).unwrap();
    assert_eq!(rep.report.verdict, Verdict::Violated);
}

fn lag_loop() -> ClosedLoop {
    let one = |x: f64| DMatrix::from_element(1, 1, x);
    ClosedLoop {
        a: one(-1.0),
        b: one(1.0),
        c: one(1.0),
        d: one(0.0),
    }
}

#[test]
fn performance_matches_the_frequency_sweep() {
    let hinf = lag_hinf_sweep();
    assert!((hinf - 1.0).abs() < 1e-12);
    let g = Grid::new(vec![]);
    let m1 = constant_fn(DMatrix::identity(1, 1));
    let r = certify::check_performance_lmi(&m1, |_| Ok(lag_loop()), 1.05, &g, &[]).unwrap();
    assert_eq!(r.verdict, Verdict::Certified);
    let r = certify::check_performance_lmi(&m1, |_| Ok(lag_loop()), 0.9, &g, &[]).unwrap();
    assert_eq!(r.verdict, Verdict::Violated);
    // scan a constant metric m ∈ [0.5, 2]
    let best = (0..=30)
        .map(|k| 0.5 + 1.5 * k as f64 / 30.0)
        .filter_map(|mv| {
            let m = constant_fn(DMatrix::from_element(1, 1, mv));
            certify::bisect(
                |a| certify::check_performance_lmi(&m, |_| Ok(lag_loop()), a, &g, &[]),
                Goal::Minimize,
                (0.5, 4.0),
                1e-4,
            )
            .ok()
            .and_then(|r| r.certified_scalar)
        })
        .fold(f64::INFINITY, f64::min);
    assert!(best <= 1.02 && (best - hinf).abs() / hinf < 0.02, "{best}");
}

#[test]
fn ccm_certificates() {
    let cubic = SystemModel::builtin("cubic_decay").unwrap();
    let m = SymbolicMatrixFn::parse(cubic.space().clone(), &[vec!["1 + 3*x^2"]], &[0], true).unwrap();
    let k = ExprMatrix::new(cubic.space().clone(), 0, 1, vec![]);
    let g = Grid::new(vec![Axis::new(-3.0, 3.0, 61)]);
    let r = certify::check_ccm(&m, &cubic, &k, 0.5, &g).unwrap();
    assert_eq!(r.verdict, Verdict::Certified);
    assert!((r.worst_eig + 1.0).abs() < 1e-12);

    let model = casestudy::model();
    let id = SymbolicMatrixFn::constant(model.space().clone(), &DMatrix::identity(2, 2), &[0, 1]).unwrap();
    let k = ExprMatrix::parse(model.space().clone(), &[casestudy::CCM_GAIN.to_vec()]).unwrap();
    let grid = Grid::new(vec![
        Axis::new(-2.0, 2.0, 5),
        Axis::new(-3.0, 3.0, 13),
        Axis::fixed(0.0),
        Axis::fixed(0.0),
    ]);
    // He{𝒜} = diag(-2, -6): decay 1 for M = I, the shifted metric reaches 1.9
    assert_eq!(certify::check_ccm(&id, &model, &k, 0.9, &grid).unwrap().verdict, Verdict::Certified);
    assert_eq!(certify::check_ccm(&id, &model, &k, 2.5, &grid).unwrap().verdict, Verdict::Violated);
    let p = casestudy::ccm_metric().to_model_field(&model).unwrap();
    assert_eq!(certify::check_ccm(&p, &model, &k, 1.9, &grid).unwrap().verdict, Verdict::Certified);
    assert_eq!(certify::check_ccm(&p, &model, &k, 2.1, &grid).unwrap().verdict, Verdict::Violated);

    let lag = SystemModel::builtin("first_order_lag").unwrap();
    let one = SymbolicMatrixFn::constant(lag.space().clone(), &DMatrix::identity(1, 1), &[0]).unwrap();
    let k0 = ExprMatrix::new(lag.space().clone(), 0, 1, vec![]);
    let g2 = Grid::new(vec![Axis::fixed(0.0), Axis::fixed(0.0)]);
    assert_eq!(certify::check_ccm_performance(&one, &lag, &k0, 1.05, &g2).unwrap().verdict, Verdict::Certified);
    assert_eq!(certify::check_ccm_performance(&one, &lag, &k0, 0.95, &g2).unwrap().verdict, Verdict::Violated);
}

#[test]
fn geodesic_examples() {
    let id = Metric::constant(&DMatrix::identity(2, 2)).unwrap();
    let p = geometry::straight_path(&v(&[0.0, 0.0]), &v(&[3.0, 4.0]), 10);
    assert!((geometry::path_length(&id, &p).unwrap() - 5.0).abs() < 1e-12);
    assert!((geometry::path_energy(&id, &p).unwrap() - 25.0).abs() < 1e-12);
    let four = Metric::constant(&(4.0 * DMatrix::<f64>::identity(2, 2))).unwrap();
    assert!((geometry::path_length(&four, &p).unwrap() - 10.0).abs() < 1e-12);
    assert!((geometry::path_energy(&four, &p).unwrap() - 100.0).abs() < 1e-12);

    let bump = Metric::parse(&["x"], &[vec!["1 + 3*x^2"]], None).unwrap();
    let chord = geometry::straight_path(&v(&[0.0]), &v(&[1.0]), 200);
    assert!((geometry::path_length(&bump, &chord).unwrap() - BUMP_LENGTH).abs() < 1e-4);

    let settings = GeodesicSettings {
        nodes: 200,
        ..Default::default()
    };
    let g = geometry::solve_geodesic(&bump, &v(&[0.0]), &v(&[1.0]), &settings).unwrap();
    assert!(g.converged);
    assert!(g.energy <= geometry::path_energy(&bump, &chord).unwrap());
    // Cauchy–Schwarz holds exactly for the discrete sums; against the
    // continuum length the midpoint rule leaves an O(N⁻²) gap of ~6e-6
    assert!(g.energy >= g.length * g.length - 1e-12);
    assert!(g.energy >= BUMP_LENGTH * BUMP_LENGTH - 1e-5, "{} vs {}", g.energy, BUMP_LENGTH * BUMP_LENGTH);
    assert!((g.energy - BUMP_LENGTH * BUMP_LENGTH).abs() < 1e-3);

    let same = geometry::solve_geodesic(&id, &v(&[1.0, 2.0]), &v(&[1.0, 2.0]), &GeodesicSettings::default()).unwrap();
    assert_eq!(same.energy, 0.0);
    let e = geometry::riemann_energy(&id, &v(&[1.0, -1.0]), &v(&[4.0, 3.0]), &GeodesicSettings::default()).unwrap();
    assert!((e.energy - 25.0).abs() < 1e-12);
}

#[test]
fn ccm_control_examples() {
    let model = casestudy::model();
    let ccm = casestudy::ccm_controller(&model);
    let out = ccm.control(&v(&[1.0, 0.0]), &v(&[0.0, 0.0]), &v(&[0.0])).unwrap();
    assert!((out.u[0] - 1.0).abs() < 1e-6);
    let at = ccm.control(&v(&[0.3, -0.4]), &v(&[0.3, -0.4]), &v(&[0.25])).unwrap();
    assert_eq!(at.u[0], 0.25);

    // a constant gain reduces to linear feedback, whatever the path
    let k = ExprMatrix::parse(model.space().clone(), &[vec!["2", "-0.5"]]).unwrap();
    let lin = CcmController::new(&model, k, casestudy::ccm_metric(), GeodesicSettings::default(), 4).unwrap();
    let (x, xs, us) = (v(&[0.7, -1.2]), v(&[0.1, 0.4]), v(&[0.3]));
    let u = lin.control(&x, &xs, &us).unwrap().u[0];
    assert!((u - (0.3 + 2.0 * 0.6 - 0.5 * (-1.6))).abs() < 1e-12);
}

#[test]
fn simulation_examples() {
    // scalar decay: fit λ = 1, R = 1
    let cubic = SystemModel::parse("decay", &["x"], &[], &[], &["-x"], &["x"]).unwrap();
    let opts = SimOptions {
        t_end: 5.0,
        ..Default::default()
    };
    let r = sim::simulate(&cubic, &Controller::Feedforward, &Target::fixed(&[0.0], &[]), &ReferenceSignal::constant(&[]), &[1.0], &opts).unwrap();
    let fit = sim::overshoot_fit(&r, None).unwrap();
    assert!((fit.lambda - 1.0).abs() < 0.01);
    assert!((fit.r - 1.0).abs() < 0.01);

    // starting on the target stays on it
    let m = casestudy::model();
    let opts = SimOptions {
        t_end: 3.0,
        ..Default::default()
    };
    for kind in casestudy::ControllerKind::ALL {
        let r = sim::simulate(
            &m,
            &kind.build(&m),
            &Target::Family(casestudy::family(&m)),
            &ReferenceSignal::constant(&[0.4]),
            &[0.0, 0.4],
            &opts,
        )
        .unwrap();
        assert!(r.error_sup(0.0) <= 1e-6, "{kind}: {}", r.error_sup(0.0));
    }
}

#[test]
fn l2_gain_of_the_lag() {
    let lag = SystemModel::builtin("first_order_lag").unwrap();
    let target = Target::fixed(&[0.0], &[]);
    let reference = ReferenceSignal::constant(&[0.0]);
    let base = SimOptions {
        t_end: 200.0,
        ..Default::default()
    };
    let nominal = sim::simulate(&lag, &Controller::Feedforward, &target, &reference, &[0.0], &base).unwrap();
    let sine = SimOptions {
        disturbance: Some(ReferenceSignal::Sinusoid {
            amplitude: vec![1.0],
            frequency: 1.0,
            phase: 0.0,
            offset: vec![0.0],
        }),
        ..base.clone()
    };
    let perturbed = sim::simulate(&lag, &Controller::Feedforward, &target, &reference, &[0.0], &sine).unwrap();
    let g = sim::l2_gain_estimate(&nominal, &perturbed).unwrap();
    assert!((g - 0.5f64.sqrt()).abs() / 0.5f64.sqrt() < 0.02, "{g}");
    assert!(matches!(sim::l2_gain_estimate(&nominal, &nominal), Err(sim::SimError::ZeroDisturbance)));
}

#[test]
fn pole_placement_at_minus_two() {
    let m = casestudy::model();
    let f = casestudy::family(&m);
    let two = [Complex::new(-2.0, 0.0), Complex::new(-2.0, 0.0)];
    for s in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let k = f.place_poles(&m, &[s], &two).unwrap();
        assert!((k[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((k[(0, 1)] + 3.0 + s).abs() < 1e-12);
    }
}

#[test]
fn equilibria_are_equilibria() {
    let m = casestudy::model();
    for f in [casestudy::family(&m), casestudy::family_w(&m)] {
        let check = f.verify(&m, 21).unwrap();
        assert!(check.max_equilibrium_residual <= 1e-9);
    }
    let _ = EquilibriumFamily::builtin("nope", &m).unwrap_err();
}
