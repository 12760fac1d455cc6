//! Minimum-energy paths under constant and state-dependent metrics.

use contraction_lpv::geometry::{self, GeodesicSettings, Metric};
use nalgebra::{DMatrix, DVector};

fn main() {
    let settings = GeodesicSettings::default();

    let flat = Metric::constant(&DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
    let (a, b) = (DVector::from_vec(vec![-1.0, 0.0]), DVector::from_vec(vec![2.0, 1.5]));
    let p = geometry::solve_geodesic(&flat, &a, &b, &settings).unwrap();
    println!("constant metric: energy {:.6}, length {:.6}, {} iterations", p.energy, p.length, p.iterations);

    let bump = Metric::parse(&["x"], &[vec!["1 + 3*x^2"]], None).unwrap();
    let e = geometry::riemann_energy(&bump, &DVector::from_vec(vec![0.0]), &DVector::from_vec(vec![1.0]), &settings).unwrap();
    println!("M(x) = 1 + 3x^2 from 0 to 1: energy {:.6} (length squared {:.6})", e.energy, 1.380_172_998_150_473f64.powi(2));

    let wavy = Metric::parse(
        &["x1", "x2"],
        &[vec!["2 + sin(x1)", "0.3*cos(x2)"], vec!["0.3*cos(x2)", "2 + cos(x1*x2)/2"]],
        Some((0.5, 3.5)),
    )
    .unwrap();
    let (a, b) = (DVector::from_vec(vec![-3.0, -3.0]), DVector::from_vec(vec![3.0, 3.0]));
    let straight = geometry::straight_path(&a, &b, settings.nodes);
    let p = geometry::solve_geodesic(&wavy, &a, &b, &settings).unwrap();
    println!(
        "wavy metric: chord energy {:.4}, geodesic energy {:.4}, converged {} after {} iterations",
        geometry::path_energy(&wavy, &straight).unwrap(),
        p.energy,
        p.converged,
        p.iterations
    );
    let mid = &p.nodes[settings.nodes / 2];
    println!("geodesic midpoint ({:.4}, {:.4})", mid[0], mid[1]);
}
