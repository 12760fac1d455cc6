//! Built-in plants and a user-defined one, with Jacobians checked by finite
//! differences.

use contraction_lpv::model::{SystemModel, BUILTIN_MODELS};

fn main() {
    for name in BUILTIN_MODELS {
        let m = SystemModel::builtin(name).unwrap();
        let x = vec![0.3; m.n_x()];
        let u = vec![-0.2; m.n_u()];
        let w = vec![0.5; m.n_w()];
        let err = m.fd_check(&x, &u, &w, 1e-6).unwrap();
        println!("{name:<16} states {:?}  fd mismatch {err:.1e}", m.state_names());
    }

    let pendulum = SystemModel::parse(
        "pendulum",
        &["theta", "omega"],
        &["tau"],
        &[],
        &["omega", "-sin(theta) - 0.1*omega + tau"],
        &["theta"],
    )
    .unwrap();
    let j = pendulum.jacobians(&[0.4, 0.0], &[0.0], &[]).unwrap();
    println!("pendulum A at theta = 0.4:\n{}", j.a);
    println!("pendulum B:\n{}", j.bu);
}
