use super::{BinaryOp, Expr, UnaryOp};

impl Expr {
    /// Exact partial derivative with respect to variable slot `v`.
    pub fn diff(&self, v: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == v { 1.0 } else { 0.0 }),
            Expr::Unary(op, a) => {
                let da = a.diff(v);
                if da.is_const_zero() {
                    return Expr::Const(0.0);
                }
                let a = (**a).clone();
                let outer = match op {
                    UnaryOp::Neg => return Expr::neg(da),
                    UnaryOp::Exp => Expr::unary(UnaryOp::Exp, a),
                    UnaryOp::Ln => return Expr::div(da, a),
                    UnaryOp::Sin => Expr::unary(UnaryOp::Cos, a),
                    UnaryOp::Cos => Expr::neg(Expr::unary(UnaryOp::Sin, a)),
                    UnaryOp::Sqrt => {
                        let root = Expr::unary(UnaryOp::Sqrt, a);
                        return Expr::div(da, Expr::mul(Expr::Const(2.0), root));
                    }
                };
                Expr::mul(outer, da)
            }
            Expr::Binary(op, a, b) => {
                let da = a.diff(v);
                let db = b.diff(v);
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    BinaryOp::Add => Expr::add(da, db),
                    BinaryOp::Sub => Expr::sub(da, db),
                    BinaryOp::Mul => Expr::add(Expr::mul(da, b), Expr::mul(a, db)),
                    BinaryOp::Div => {
                        if db.is_const_zero() {
                            Expr::div(da, b)
                        } else {
                            // (a'b - ab') / b^2
                            let num = Expr::sub(Expr::mul(da, b.clone()), Expr::mul(a, db));
                            Expr::div(num, Expr::pow(b, Expr::Const(2.0)))
                        }
                    }
                    BinaryOp::Pow => {
                        if db.is_const_zero() {
                            // b * a^(b-1) * a'
                            let reduced = Expr::sub(b.clone(), Expr::Const(1.0));
                            Expr::mul(Expr::mul(b, Expr::pow(a, reduced)), da)
                        } else {
                            // a^b * (b' ln a + b a' / a)
                            let power = Expr::pow(a.clone(), b.clone());
                            let log_term = Expr::mul(db, Expr::unary(UnaryOp::Ln, a.clone()));
                            let base_term = if da.is_const_zero() {
                                Expr::Const(0.0)
                            } else {
                                Expr::div(Expr::mul(b, da), a)
                            };
                            Expr::mul(power, Expr::add(log_term, base_term))
                        }
                    }
                }
            }
        }
    }

    fn is_const_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }
}
