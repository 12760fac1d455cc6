//! Evaluate the geodesic-integrated control law of the benchmark and compare
//! it with its closed form.

use contraction_lpv::casestudy;
use contraction_lpv::grid::Grid;
use nalgebra::DVector;

fn main() {
    let m = casestudy::model();
    let f = casestudy::family(&m);
    let ccm = casestudy::ccm_controller(&m);

    let w: f64 = 0.4;
    let target = f.point(&[(-w).exp()]).unwrap();
    for x in [[1.0, 1.0], [-0.5, 2.0], [0.0, -1.5]] {
        let out = ccm.control(&DVector::from_vec(x.to_vec()), &target.x, &target.u).unwrap();
        let closed = x[0] + (-x[1]).exp() - 1.0 - 3.0 * (x[1] - w);
        println!(
            "x = ({:5.2}, {:5.2})  u = {:+.10}  closed form {:+.10}  energy {:.4}",
            x[0], x[1], out.u[0], closed, out.path.energy
        );
    }

    let err = ccm.exactness_check(&f, &Grid::uniform(f.bounds(), 11), 1e-6).unwrap();
    println!("Jacobian of the law at the family vs K: {err:.2e}");
}
