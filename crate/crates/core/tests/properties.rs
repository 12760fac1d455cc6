//! Randomized invariants.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use contraction_lpv::casestudy::{self, ControllerKind, Scenario};
use contraction_lpv::certify::{self, SymbolicMatrixFn, Verdict, TOL_PD};
use contraction_lpv::expr::{self, BinaryOp, Expr, UnaryOp, VarRole, VarSpace};
use contraction_lpv::geometry::{self, GeodesicPath, GeodesicSettings, Metric};
use contraction_lpv::grid::{Axis, Grid};
use contraction_lpv::linalg;
use contraction_lpv::lpv::{EquilibriumFamily, SchedulingMode};
use contraction_lpv::model::{SystemModel, BUILTIN_MODELS};
use contraction_lpv::sim::{self, Controller, ReferenceSignal, SimOptions, Target, ENERGY_FLOOR};

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

// ---------------------------------------------------------------- expr

const NVARS: usize = 3;

fn space3() -> VarSpace {
    VarSpace::from_names(&["a", "b", "c"], VarRole::Free)
}

fn one_plus_sq(e: Expr) -> Expr {
    Expr::add(Expr::constant(1.0), Expr::mul(e.clone(), e))
}

/// Random trees of up to six nested operations. Arguments of ln, sqrt, division and
/// non-integer powers are wrapped as `1 + e²` so every tree is defined
/// everywhere; exp takes a sine so nesting cannot overflow.
fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0..NVARS).prop_map(Expr::Var),
        (-3.0..3.0f64).prop_map(Expr::Const),
        (-3i32..4).prop_map(|k| Expr::Const(k as f64)),
    ];
    leaf.prop_recursive(6, 64, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Unary(UnaryOp::Neg, Box::new(e))),
            inner.clone().prop_map(|e| Expr::Unary(UnaryOp::Sin, Box::new(e))),
            inner.clone().prop_map(|e| Expr::Unary(UnaryOp::Cos, Box::new(e))),
            inner
                .clone()
                .prop_map(|e| Expr::Unary(UnaryOp::Exp, Box::new(Expr::Unary(UnaryOp::Sin, Box::new(e))))),
            inner.clone().prop_map(|e| Expr::Unary(UnaryOp::Ln, Box::new(one_plus_sq(e)))),
            inner.clone().prop_map(|e| Expr::Unary(UnaryOp::Sqrt, Box::new(one_plus_sq(e)))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(one_plus_sq(b)))),
            (inner.clone(), 1u32..4)
                .prop_map(|(a, k)| Expr::Binary(BinaryOp::Pow, Box::new(a), Box::new(Expr::Const(k as f64)))),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::Binary(
                BinaryOp::Pow,
                Box::new(one_plus_sq(a)),
                Box::new(Expr::Unary(UnaryOp::Sin, Box::new(b)))
            )),
        ]
    })
}

fn arb_point() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0..2.0f64, NVARS)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivative_matches_central_difference(e in arb_expr(), p in arb_point(), var in 0..NVARS) {
        let f0 = e.eval(&p).unwrap();
        // keep to the region where a central difference at h = 1e-5 is
        // itself accurate
        prop_assume!(f0.abs() < 1e4);
        let d = e.diff(var).eval(&p).unwrap();
        let h = 1e-5;
        let at = |s: f64| {
            let mut q = p.clone();
            q[var] += s;
            e.eval(&q).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        prop_assert!((d - fd).abs() <= 1e-5 * (1.0 + d.abs()), "{d} vs {fd} for {:?}", e);
    }

    #[test]
    fn printing_round_trips(e in arb_expr(), points in proptest::collection::vec(arb_point(), 20)) {
        let s = space3();
        let text = e.display(&s).to_string();
        let back = expr::parse(&text, &s).unwrap();
        for p in &points {
            let (a, b) = (e.eval(p).unwrap(), back.eval(p).unwrap());
            prop_assert!(a == b || (a.is_nan() && b.is_nan()), "{a} vs {b}: {text}");
        }
    }

    #[test]
    fn differentiation_is_linear(a in arb_expr(), b in arb_expr(), p in arb_point(), var in 0..NVARS) {
        let lhs = Expr::add(a.clone(), b.clone()).diff(var).eval(&p).unwrap();
        let rhs = a.diff(var).eval(&p).unwrap() + b.diff(var).eval(&p).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }
}

// --------------------------------------------------------------- model

fn arb_unit(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0..1.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn registered_models_pass_the_fd_check(p in arb_unit(4)) {
        for name in BUILTIN_MODELS {
            let m = SystemModel::builtin(name).unwrap();
            let (nx, nu, nw) = (m.n_x(), m.n_u(), m.n_w());
            let scaled: Vec<f64> = p.iter().map(|t| 3.0 * t).collect();
            let x = &scaled[..nx];
            let u = &scaled[nx..nx + nu];
            let w = &scaled[nx + nu..nx + nu + nw];
            let err = m.fd_check(x, u, w, 1e-6).unwrap();
            prop_assert!(err <= 1e-5, "{name}: {err}");
        }
    }

    #[test]
    fn family_points_are_equilibria(t in 0.0..1.0f64) {
        let m = casestudy::model();
        for f in [casestudy::family(&m), casestudy::family_w(&m)] {
            let (lo, hi) = f.bounds()[0];
            let e = f.point(&[lo + (hi - lo) * t]).unwrap();
            let r = m.eval_dynamics(e.x.as_slice(), e.u.as_slice(), e.w.as_slice()).unwrap();
            prop_assert!(r.norm() <= 1e-9);
        }
    }
}

// ----------------------------------------------------------------- lpv

fn families() -> Vec<EquilibriumFamily> {
    let m = casestudy::model();
    vec![casestudy::family(&m), casestudy::family_w(&m)]
}

fn fd_jacobian_x(f: impl Fn(&[f64]) -> DVector<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..x.len())
        .map(|j| {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[j] += h;
            xm[j] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

#[test]
fn realization_consistency_on_the_grid() {
    for f in families() {
        let grid = Grid::uniform(f.bounds(), 21);
        for mode in [SchedulingMode::ReferenceScheduled, SchedulingMode::StateScheduled] {
            let gsc = casestudy::gsc(&f, mode);
            for s in grid.points() {
                let e = f.point(&s).unwrap();
                let out = gsc.control(&f, e.x.as_slice(), e.w.as_slice(), &s).unwrap();
                assert!((&out.u - &e.u).amax() <= 1e-10, "{} {mode:?} σ={s:?}", f.name());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn reference_scheduled_jacobian_is_the_gain(t in 0.0..1.0f64) {
        for f in families() {
            let (lo, hi) = f.bounds()[0];
            let s = [lo + (hi - lo) * t];
            let gsc = casestudy::gsc(&f, SchedulingMode::ReferenceScheduled);
            let e = f.point(&s).unwrap();
            let j = fd_jacobian_x(|x| gsc.control(&f, x, e.w.as_slice(), &s).unwrap().u, e.x.as_slice(), 1e-6);
            let k = gsc.gain(&f, &s).unwrap();
            prop_assert!((j - k).amax() <= 1e-6);
        }
    }

    #[test]
    fn state_scheduled_jacobian_carries_the_hidden_coupling(t in 0.0..1.0f64) {
        for f in families() {
            let (lo, hi) = f.bounds()[0];
            let s = [lo + (hi - lo) * t];
            let gsc = casestudy::gsc(&f, SchedulingMode::StateScheduled);
            let e = f.point(&s).unwrap();
            let w = e.w.clone();
            let j = fd_jacobian_x(|x| gsc.control(&f, x, w.as_slice(), &s).unwrap().u, e.x.as_slice(), 1e-6);
            let dg = fd_jacobian_x(|x| f.schedule(x, w.as_slice()).unwrap(), e.x.as_slice(), 1e-6);
            let expected = gsc.gain(&f, &s).unwrap() + gsc.hidden_coupling(&f, &s).unwrap() * dg;
            let scale = 1.0 + expected.amax();
            prop_assert!((&j - &expected).amax() <= 1e-6 * scale, "{}: {j} vs {expected}", f.name());
        }
    }
}

// ------------------------------------------------------------- certify

fn params(names: &[&str]) -> Arc<VarSpace> {
    Arc::new(VarSpace::from_names(names, VarRole::Scheduling))
}

fn constant_fn(m: &DMatrix<f64>) -> SymbolicMatrixFn {
    SymbolicMatrixFn::constant(params(&[]), m, &[]).unwrap()
}

fn arb_matrix(n: usize, r: f64) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-r..r, n * n).prop_map(move |e| DMatrix::from_row_slice(n, n, &e))
}

fn arb_symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    arb_matrix(n, 1.0).prop_map(|a| (&a + a.transpose()) * 0.5)
}

/// Coefficients `c0..c_{n-1}` of the monic characteristic polynomial
/// `λⁿ + c_{n-1}λ^{n-1} + … + c0` by Faddeev–LeVerrier.
fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + DMatrix::identity(n, n) * c[n + 1 - k];
        c[n - k] = -(a * &m).trace() / k as f64;
    }
    c.truncate(n);
    c
}

fn companion_roots(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        comp[(i, n - 1)] = -c[i];
    }
    let mut r: Vec<f64> = comp.complex_eigenvalues().iter().map(|z| z.re).collect();
    r.sort_by(f64::total_cmp);
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobi_matches_companion_roots(s in arb_symmetric(5)) {
        let jac = linalg::sym_eigenvalues(&s).unwrap();
        // close eigenvalues are ill-conditioned roots of the polynomial;
        // the oracle is only trusted when they are separated
        prop_assume!(jac.windows(2).all(|w| w[1] - w[0] > 1e-3));
        let roots = companion_roots(&char_poly(&s));
        for (a, b) in jac.iter().zip(&roots) {
            prop_assert!((a - b).abs() <= 1e-8, "{jac:?} vs {roots:?}");
        }
    }

    #[test]
    fn identity_metric_reduces_to_the_symmetric_part(a in arb_matrix(3, 2.0)) {
        let direct = linalg::max_eig_sym(&(&a + a.transpose())).unwrap();
        prop_assume!((direct + TOL_PD).abs() > 1e-7);
        let id = constant_fn(&DMatrix::identity(3, 3));
        let r = certify::check_stability_lmi(&id, |_| Ok(a.clone()), 0.0, &Grid::new(vec![]), &[]).unwrap();
        prop_assert_eq!(r.verdict == Verdict::Certified, direct < -TOL_PD);
    }

    #[test]
    fn smaller_rates_stay_certified(a in arb_matrix(2, 2.0), frac in 0.0..1.0f64, shrink in 0.0..1.0f64) {
        let eig = linalg::eigenvalues(&a);
        let decay = eig.iter().map(|z| -z.re).fold(f64::INFINITY, f64::min);
        prop_assume!(decay > 0.05);
        // Lyapunov metric of the shifted matrix certifies any rate below it
        let l1 = frac * decay;
        let shifted = &a + DMatrix::identity(2, 2) * l1;
        let p = linalg::lyapunov(&shifted, &DMatrix::identity(2, 2)).unwrap();
        let m = constant_fn(&p);
        let g = Grid::new(vec![]);
        let r1 = certify::check_stability_lmi(&m, |_| Ok(a.clone()), l1, &g, &[]).unwrap();
        prop_assume!(r1.verdict == Verdict::Certified);
        let r2 = certify::check_stability_lmi(&m, |_| Ok(a.clone()), l1 * shrink, &g, &[]).unwrap();
        prop_assert_eq!(r2.verdict, Verdict::Certified);
        prop_assert!(r2.worst_eig <= r1.worst_eig);
    }
}

fn varying_metric() -> SymbolicMatrixFn {
    SymbolicMatrixFn::parse(
        params(&["s1", "s2"]),
        &[
            vec!["3 + s1 + 0.5*s2^2", "0.4*s1*s2"],
            vec!["0.4*s1*s2", "2 + sin(s2)"],
        ],
        &[0, 1],
        true,
    )
    .unwrap()
}

fn varying_acl(s: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[-1.0 - s[0].abs(), 1.0 + s[1], -0.5, -2.0 + 0.3 * s[0]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn rate_vertices_bound_interior_rates(
        s in proptest::collection::vec(-1.0..1.0f64, 2),
        rho in proptest::collection::vec(-1.0..1.0f64, 2),
        lambda in 0.0..1.5f64,
    ) {
        let m = varying_metric();
        let rates = [(-0.7, 0.4), (-1.5, 2.0)];
        let grid = Grid::new(vec![Axis::fixed(s[0]), Axis::fixed(s[1])]);
        let r = certify::check_stability_lmi(&m, |p| Ok(varying_acl(p)), lambda, &grid, &rates).unwrap();
        let rho: Vec<f64> = rho.iter().zip(&rates).map(|(t, (lo, hi))| lo + (hi - lo) * 0.5 * (t + 1.0)).collect();
        let mv = m.eval(&s).unwrap();
        let mut lmi = linalg::he(&mv, &varying_acl(&s)) + 2.0 * lambda * &mv;
        for (i, r) in rho.iter().enumerate() {
            lmi += m.partial(&s, i).unwrap() * *r;
        }
        let interior = linalg::max_eig_sym(&lmi).unwrap();
        prop_assert!(r.worst_eig >= interior - 1e-12, "{} < {interior}", r.worst_eig);
    }

    #[test]
    fn refining_the_grid_never_improves_the_margin(lambda in 0.0..1.5f64, n in 2usize..6) {
        let m = varying_metric();
        let coarse = Grid::new(vec![Axis::new(-1.0, 1.0, n), Axis::new(-1.0, 1.0, n)]);
        let fine = coarse.refined();
        let rates = [(-0.5, 0.5), (-0.5, 0.5)];
        let rc = certify::check_stability_lmi(&m, |p| Ok(varying_acl(p)), lambda, &coarse, &rates).unwrap();
        let rf = certify::check_stability_lmi(&m, |p| Ok(varying_acl(p)), lambda, &fine, &rates).unwrap();
        prop_assert!(rf.worst_eig >= rc.worst_eig);
    }
}

// ------------------------------------------------------------ geometry

fn bump() -> Metric {
    Metric::parse(&["x"], &[vec!["1 + 3*x^2"]], None).unwrap()
}

fn wavy() -> Metric {
    Metric::parse(
        &["x1", "x2"],
        &[vec!["2 + sin(x1)", "0.5*cos(x2)"], vec!["0.5*cos(x2)", "2 + cos(x1)"]],
        Some((0.5, 3.5)),
    )
    .unwrap()
}

fn energy(m: &Metric, a: &[f64], b: &[f64]) -> f64 {
    let r = geometry::riemann_energy(m, &v(a), &v(b), &GeodesicSettings::default()).unwrap();
    assert!(r.converged);
    r.energy
}

fn arb_spd2() -> impl Strategy<Value = DMatrix<f64>> {
    (arb_matrix(2, 1.0), 0.1..2.0f64).prop_map(|(a, s)| &a * a.transpose() + DMatrix::identity(2, 2) * s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn energy_is_symmetric(
        p in arb_spd2(),
        a in proptest::collection::vec(-2.0..2.0f64, 2),
        b in proptest::collection::vec(-2.0..2.0f64, 2),
        c in -2.0..2.0f64,
        d in -2.0..2.0f64,
    ) {
        let m = Metric::constant(&p).unwrap();
        let (e01, e10) = (energy(&m, &a, &b), energy(&m, &b, &a));
        prop_assert!((e01 - e10).abs() <= 1e-6 * (1.0 + e01));
        let m = bump();
        let (e01, e10) = (energy(&m, &[c], &[d]), energy(&m, &[d], &[c]));
        prop_assert!((e01 - e10).abs() <= 1e-6 * (1.0 + e01), "{e01} vs {e10}");
    }

    #[test]
    fn energy_is_sandwiched_by_the_metric_bounds(
        a in proptest::collection::vec(-3.0..3.0f64, 2),
        b in proptest::collection::vec(-3.0..3.0f64, 2),
    ) {
        let m = wavy();
        let (a1, a2) = m.bounds().unwrap();
        let e = energy(&m, &a, &b);
        let d2 = (v(&a) - v(&b)).norm_squared();
        prop_assert!(a1 * d2 <= e + 1e-12 && e <= a2 * d2 + 1e-12, "{a1}·{d2} ≤ {e} ≤ {a2}·{d2}");
    }

    #[test]
    fn discretization_error_shrinks(a in -1.5..-0.25f64, b in 0.25..1.5f64) {
        let m = bump();
        let eps: Vec<f64> = [25, 50, 100, 200]
            .iter()
            .map(|&n| {
                let s = GeodesicSettings { nodes: n, ..Default::default() };
                geometry::riemann_energy(&m, &v(&[a]), &v(&[b]), &s).unwrap().energy
            })
            .collect();
        let gaps: Vec<f64> = eps.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
        prop_assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }
}

fn bump_geodesic() -> &'static GeodesicPath {
    static PATH: OnceLock<GeodesicPath> = OnceLock::new();
    PATH.get_or_init(|| geometry::solve_geodesic(&bump(), &v(&[-0.8]), &v(&[1.3]), &GeodesicSettings::default()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn geodesic_beats_perturbed_paths(
        bumps in proptest::collection::vec(-0.3..0.3f64, 49),
        scale in 1e-4..1.0f64,
    ) {
        let g = bump_geodesic();
        prop_assert!(g.converged);
        let mut nodes = g.nodes.clone();
        for (node, d) in nodes[1..50].iter_mut().zip(&bumps) {
            node[0] += scale * d;
        }
        let e = geometry::path_energy(&bump(), &nodes).unwrap();
        prop_assert!(g.energy <= e + 1e-12, "{} > {e}", g.energy);
    }
}

// --------------------------------------------------------- realization

fn arb_state() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0..2.0f64, 2)
}

fn arb_reference() -> impl Strategy<Value = f64> {
    -2.5..2.5f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn substep_halving_converges(x in arb_state(), w in arb_reference()) {
        let model = casestudy::model();
        let f = casestudy::family(&model);
        let e = f.point(&[(-w).exp()]).unwrap();
        let u: Vec<f64> = [1, 2, 4, 8]
            .iter()
            .map(|&s| {
                let c = casestudy::ccm_controller(&model).with_substeps(s).unwrap();
                c.control(&v(&x), &e.x, &e.u).unwrap().u[0]
            })
            .collect();
        let d: Vec<f64> = u.windows(2).map(|p| (p[0] - p[1]).abs()).collect();
        prop_assert!(d[2] <= 1e-8, "{d:?}");
        // fourth order until rounding takes over
        for k in 0..2 {
            if d[k + 1] > 1e-12 {
                prop_assert!(d[k] / d[k + 1] >= 8.0, "{d:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn control_at_the_target_is_the_feedforward(xs in arb_state(), us in -3.0..3.0f64) {
        let model = casestudy::model();
        let c = casestudy::ccm_controller(&model);
        let out = c.control(&v(&xs), &v(&xs), &v(&[us])).unwrap();
        prop_assert_eq!(out.u[0], us);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn jacobian_at_the_target_is_the_differential_gain(xs in arb_state(), us in -3.0..3.0f64) {
        let model = casestudy::model();
        let c = casestudy::ccm_controller(&model);
        let j = fd_jacobian_x(|x| c.control(&v(x), &v(&xs), &v(&[us])).unwrap().u, &xs, 1e-6);
        let k = c.gain(&xs, &[us]).unwrap();
        prop_assert!((&j - &k).amax() <= 1e-5, "{j} vs {k}");
    }
}

// ----------------------------------------------------------------- sim

#[test]
fn halving_the_step_barely_moves_the_final_state() {
    let x0 = casestudy::X0;
    let coarse = casestudy::run(Scenario::Step, ControllerKind::Gsc2, &x0, &SimOptions::default()).unwrap();
    let fine = casestudy::run(
        Scenario::Step,
        ControllerKind::Gsc2,
        &x0,
        &SimOptions {
            dt: 5e-4,
            ..Default::default()
        },
    )
    .unwrap();
    let d = (coarse.x.last().unwrap() - fine.x.last().unwrap()).amax();
    assert!(d <= 1e-7, "{d}");
}

#[test]
fn ccm_energy_never_increases() {
    let opts = SimOptions {
        t_end: 4.0,
        ..Default::default()
    };
    let r = casestudy::run(Scenario::Sine, ControllerKind::Ccm, &casestudy::X0, &opts).unwrap();
    assert!(!r.diverged);
    let mut checked = 0;
    for k in 1..r.len() - 1 {
        let (a, b) = (r.energy[k], r.energy[k + 1]);
        if a < ENERGY_FLOOR {
            break;
        }
        assert!(b <= a, "t={}: {a} -> {b}", r.t[k]);
        checked += 1;
    }
    assert!(checked > 1000);
}

/// Independent RK4 for `ė = A e + b(t)`.
fn linear_response(a: &DMatrix<f64>, b: impl Fn(f64) -> DVector<f64>, dt: f64, steps: usize) -> Vec<DVector<f64>> {
    let mut e = DVector::zeros(a.nrows());
    let mut out = vec![e.clone()];
    for k in 0..steps {
        let t = k as f64 * dt;
        let f = |t: f64, e: &DVector<f64>| a * e + b(t);
        let k1 = f(t, &e);
        let k2 = f(t + 0.5 * dt, &(&e + &k1 * (0.5 * dt)));
        let k3 = f(t + 0.5 * dt, &(&e + &k2 * (0.5 * dt)));
        let k4 = f(t + dt, &(&e + &k3 * dt));
        e += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        out.push(e.clone());
    }
    out
}

#[test]
fn slow_reference_error_follows_the_residual_term() {
    let model = casestudy::model();
    let f = casestudy::family(&model);
    let gsc2 = casestudy::gsc(&f, SchedulingMode::StateScheduled);
    // |ẇ| ≤ 0.01
    let reference = ReferenceSignal::Sinusoid {
        amplitude: vec![0.5],
        frequency: 0.02,
        phase: 0.0,
        offset: vec![0.3],
    };
    let opts = SimOptions::default();
    let steps = (opts.t_end / opts.dt).round() as usize;
    let start = f.point(f.reference_sigma(&[0.3]).unwrap().as_slice()).unwrap();
    let controller = Controller::GainScheduled {
        controller: gsc2.clone(),
        family: f.clone(),
    };
    let r = sim::simulate(&model, &controller, &Target::Family(f.clone()), &reference, start.x.as_slice(), &opts).unwrap();

    // actual closed-loop Jacobian at the initial equilibrium
    let sigma0 = f.reference_sigma(&[0.3]).unwrap();
    let closed = |x: &[f64]| {
        let u = gsc2.control(&f, x, &[0.3], sigma0.as_slice()).unwrap().u;
        model.eval_dynamics(x, u.as_slice(), &[0.3]).unwrap()
    };
    let a_act = fd_jacobian_x(closed, start.x.as_slice(), 1e-6);
    let forcing = |t: f64| {
        let w = reference.value(t);
        let s = f.reference_sigma(w.as_slice()).unwrap();
        let rate = f.reference_sigma_rate(w.as_slice(), reference.derivative(t).as_slice()).unwrap();
        -(f.state_sensitivity(s.as_slice()).unwrap() * rate)
    };
    let predicted = linear_response(&a_act, forcing, opts.dt, steps);

    let actual: Vec<DVector<f64>> = r.x.iter().zip(&r.x_star).map(|(x, xs)| x - xs).collect();
    let peak = predicted.iter().map(|e| e.amax()).fold(0.0, f64::max);
    let miss = actual.iter().zip(&predicted).map(|(a, p)| (a - p).amax()).fold(0.0, f64::max);
    assert!(peak > 1e-3, "{peak}");
    assert!(miss <= 0.1 * peak, "{miss} vs peak {peak}");
}
