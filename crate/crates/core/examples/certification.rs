//! Grid-based LMI certificates: decay rate of the benchmark loop, bisection
//! on the rate, a state-dependent metric and an H-infinity bound.

use std::sync::Arc;

use contraction_lpv::casestudy;
use contraction_lpv::certify::{self, ClosedLoop, Goal, SymbolicMatrixFn};
use contraction_lpv::expr::{ExprMatrix, VarSpace};
use contraction_lpv::grid::{Axis, Grid};
use contraction_lpv::model::SystemModel;
use nalgebra::DMatrix;

fn main() {
    let none = Grid::new(vec![]);
    let id = SymbolicMatrixFn::constant(Arc::new(VarSpace::new()), &DMatrix::identity(2, 2), &[]).unwrap();
    let acl = casestudy::closed_loop_matrix();
    for l in [0.5, 0.9, 1.1] {
        let r = certify::check_stability_lmi(&id, |_| Ok(acl.clone()), l, &none, &[]).unwrap();
        println!("M = I, lambda {l}: {:?} (worst eigenvalue {:+.3})", r.verdict, r.worst_eig);
    }
    let best = certify::bisect(
        |l| certify::check_stability_lmi(&id, |_| Ok(acl.clone()), l, &none, &[]),
        Goal::Maximize,
        (0.0, 3.0),
        1e-4,
    )
    .unwrap();
    println!("largest certified rate: {:?}", best.certified_scalar);

    let m = casestudy::ccm_metric();
    let model = casestudy::model();
    let k = ExprMatrix::parse(model.space().clone(), &[vec!["1", "-(3 + exp(-x2))"]]).unwrap();
    // axes over every model slot: x1, x2, u, w
    let grid = Grid::new(vec![
        Axis::new(-3.0, 3.0, 25),
        Axis::new(-3.0, 3.0, 25),
        Axis::new(0.0, 0.0, 1),
        Axis::new(0.0, 0.0, 1),
    ]);
    let r = certify::check_ccm(m.field(), &model, &k, casestudy::CCM_LAMBDA, &grid).unwrap();
    println!("CCM at lambda {}: {:?} on {}", casestudy::CCM_LAMBDA, r.verdict, r.grid);

    let cubic = SystemModel::builtin("cubic_decay").unwrap();
    let mx = SymbolicMatrixFn::parse(cubic.space().clone(), &[vec!["1 + 3*x^2"]], &[0], true).unwrap();
    let zero = ExprMatrix::new(cubic.space().clone(), 0, 1, vec![]);
    let r = certify::check_ccm(&mx, &cubic, &zero, 0.5, &Grid::new(vec![Axis::new(-3.0, 3.0, 61)])).unwrap();
    println!("cubic decay with M(x) = 1 + 3x^2 at lambda 0.5: {:?}", r.verdict);

    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let lag = ClosedLoop {
        a: one(-1.0),
        b: one(1.0),
        c: one(1.0),
        d: one(0.0),
    };
    let mp = SymbolicMatrixFn::constant(Arc::new(VarSpace::new()), &one(1.0), &[]).unwrap();
    let alpha = certify::bisect(
        |a| certify::check_performance_lmi(&mp, |_| Ok(lag.clone()), a, &none, &[]),
        Goal::Minimize,
        (0.5, 4.0),
        1e-4,
    )
    .unwrap();
    println!("first-order lag, L2 gain bound: {:?}", alpha.certified_scalar);
}
