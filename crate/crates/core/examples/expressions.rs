//! Parse an expression, differentiate it symbolically and compare against a
//! central difference.

use contraction_lpv::expr::{self, VarRole, VarSpace};

fn main() {
    let space = VarSpace::from_names(&["x", "y"], VarRole::State);
    let f = expr::parse("x^2 * sin(y) + exp(-x*y) / (1 + y^2)", &space).unwrap();
    println!("f      = {}", f.display(&space));
    for v in 0..2 {
        let d = f.diff(v);
        println!("df/d{} = {}", space.get(v).unwrap().name, d.display(&space));
    }

    let at = [0.7, -1.3];
    let h = 1e-6;
    for v in 0..2 {
        let (mut p, mut q) = (at, at);
        p[v] += h;
        q[v] -= h;
        let fd = (f.eval(&p).unwrap() - f.eval(&q).unwrap()) / (2.0 * h);
        let exact = f.diff(v).eval(&at).unwrap();
        println!("slot {v}: symbolic {exact:+.10}  central difference {fd:+.10}");
    }

    // unknown names are rejected at parse time
    match expr::parse("x + z", &space) {
        Ok(_) => unreachable!(),
        Err(e) => println!("parse error: {e}"),
    }
}
