//! Linearization along the equilibrium family of the two-state benchmark and
//! the hidden coupling introduced by scheduling on the state.

use contraction_lpv::casestudy;
use contraction_lpv::lpv::SchedulingMode;
use nalgebra::Complex;

fn main() {
    let m = casestudy::model();
    for (label, family) in [("sigma = exp(-w)", casestudy::family(&m)), ("sigma = w", casestudy::family_w(&m))] {
        println!("family {label}");
        let gsc1 = casestudy::gsc(&family, SchedulingMode::ReferenceScheduled);
        let gsc2 = casestudy::gsc(&family, SchedulingMode::StateScheduled);
        let (lo, hi) = family.bounds()[0];
        for k in 0..5 {
            let s = lo + (hi - lo) * k as f64 / 4.0;
            let j = family.lpv_linearize(&m, &[s]).unwrap();
            let k1 = gsc1.gain(&family, &[s]).unwrap();
            let kh = gsc2.hidden_coupling(&family, &[s]).unwrap();
            println!(
                "  sigma {s:8.4}  A22 {:8.4}  K [{:.4}, {:.4}]  K_h {:9.4}",
                j.a[(1, 1)],
                k1[(0, 0)],
                k1[(0, 1)],
                kh[(0, 0)]
            );
        }
    }

    // pole placement at one operating point
    let f = casestudy::family(&m);
    let two = [Complex::new(-2.0, 0.0), Complex::new(-2.0, 0.0)];
    let k = f.place_poles(&m, &[2.0], &two).unwrap();
    println!("placed gain at sigma = 2: {k}");
    println!("closed loop with the state-scheduled controller:\n{}", casestudy::closed_loop_matrix());
}
