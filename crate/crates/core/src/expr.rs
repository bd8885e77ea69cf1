//! Scalar expression graphs with exact evaluation and reverse-mode gradients.
//!
//! An [`Expr`] is an immutable tree over dense variable indices. Trees are
//! cheap to clone (children are reference counted) and can be shared across
//! threads. For repeated evaluation, [`Expr::compile`] flattens a tree into a
//! [`Tape`]: a post-order instruction list over the expression's *support*
//! (the sorted set of variable indices it references). Tapes evaluate and
//! differentiate into caller-owned [`Workspace`] buffers, so a single tape can
//! be used from many threads at once.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("variable index {index} out of range for a point of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("domain error: {0}")]
    Domain(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Exp,
    Ln,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// A symbolic scalar expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Arc<Expr>),
    Binary(BinaryOp, Arc<Expr>, Arc<Expr>),
    /// Integer power with a fixed exponent.
    Powi(Arc<Expr>, i32),
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    pub fn var(index: usize) -> Self {
        Expr::Var(index)
    }

    pub fn exp(self) -> Self {
        Expr::Unary(UnaryOp::Exp, Arc::new(self))
    }

    pub fn ln(self) -> Self {
        Expr::Unary(UnaryOp::Ln, Arc::new(self))
    }

    pub fn powi(self, exponent: i32) -> Self {
        Expr::Powi(Arc::new(self), exponent)
    }

    pub fn unary(op: UnaryOp, arg: Expr) -> Self {
        Expr::Unary(op, Arc::new(arg))
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary(op, Arc::new(lhs), Arc::new(rhs))
    }

    /// Sum of a sequence of expressions; the empty sum is the constant zero.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Self {
        terms
            .into_iter()
            .reduce(|acc, t| acc + t)
            .unwrap_or(Expr::Const(0.0))
    }

    /// Largest variable index referenced, if any.
    pub fn max_var_index(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) | Expr::Powi(a, _) => a.max_var_index(),
            Expr::Binary(_, a, b) => match (a.max_var_index(), b.max_var_index()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    pub fn is_constant(&self) -> bool {
        self.max_var_index().is_none()
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) | Expr::Powi(a, _) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Rebuilds the tree with every variable replaced by `f(index)`.
    pub fn map_vars<F: FnMut(usize) -> Expr>(&self, f: &mut F) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => f(*i),
            Expr::Unary(op, a) => Expr::Unary(*op, Arc::new(a.map_vars(f))),
            Expr::Powi(a, n) => Expr::Powi(Arc::new(a.map_vars(f)), *n),
            Expr::Binary(op, a, b) => {
                let a = a.map_vars(f);
                let b = b.map_vars(f);
                Expr::Binary(*op, Arc::new(a), Arc::new(b))
            }
        }
    }

    /// Evaluates the expression at `point`.
    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(i) => point.get(*i).copied().ok_or(ExprError::IndexOutOfRange {
                index: *i,
                len: point.len(),
            }),
            Expr::Unary(op, a) => apply_unary(*op, a.eval(point)?),
            Expr::Powi(a, n) => apply_powi(a.eval(point)?, *n),
            Expr::Binary(op, a, b) => apply_binary(*op, a.eval(point)?, b.eval(point)?),
        }
    }

    /// Dense gradient at `point`; the result has `point.len()` entries.
    pub fn gradient(&self, point: &[f64]) -> Result<Vec<f64>, ExprError> {
        let tape = self.compile();
        let mut ws = Workspace::default();
        let mut grad = vec![0.0; point.len()];
        tape.accumulate_gradient(point, 1.0, &mut ws, &mut grad)?;
        Ok(grad)
    }

    /// Flattens the tree into a reusable tape.
    pub fn compile(&self) -> Tape {
        let mut support = Vec::new();
        self.collect_vars(&mut support);
        support.sort_unstable();
        support.dedup();
        let mut ops = Vec::new();
        self.emit(&support, &mut ops);
        let nonlinear = nonlinear_slots(&ops, support.len());
        Tape { ops, support, nonlinear }
    }

    fn collect_vars(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(i) => out.push(*i),
            Expr::Unary(_, a) | Expr::Powi(a, _) => a.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    fn emit(&self, support: &[usize], ops: &mut Vec<Op>) -> u32 {
        let op = match self {
            Expr::Const(c) => Op::Const(*c),
            Expr::Var(i) => {
                let slot = support.binary_search(i).expect("support holds every var");
                Op::Var(slot as u32)
            }
            Expr::Unary(op, a) => {
                let a = a.emit(support, ops);
                match op {
                    UnaryOp::Neg => Op::Neg(a),
                    UnaryOp::Exp => Op::Exp(a),
                    UnaryOp::Ln => Op::Ln(a),
                }
            }
            Expr::Powi(a, n) => {
                let a = a.emit(support, ops);
                Op::Powi(a, *n)
            }
            Expr::Binary(op, a, b) => {
                let a = a.emit(support, ops);
                let b = b.emit(support, ops);
                match op {
                    BinaryOp::Add => Op::Add(a, b),
                    BinaryOp::Sub => Op::Sub(a, b),
                    BinaryOp::Mul => Op::Mul(a, b),
                    BinaryOp::Div => Op::Div(a, b),
                }
            }
        };
        ops.push(op);
        (ops.len() - 1) as u32
    }
}

fn apply_unary(op: UnaryOp, a: f64) -> Result<f64, ExprError> {
    match op {
        UnaryOp::Neg => Ok(-a),
        UnaryOp::Exp => Ok(a.exp()),
        UnaryOp::Ln if a > 0.0 => Ok(a.ln()),
        UnaryOp::Ln => Err(ExprError::Domain("logarithm of a nonpositive value")),
    }
}

fn apply_binary(op: BinaryOp, a: f64, b: f64) -> Result<f64, ExprError> {
    match op {
        BinaryOp::Add => Ok(a + b),
        BinaryOp::Sub => Ok(a - b),
        BinaryOp::Mul => Ok(a * b),
        BinaryOp::Div if b == 0.0 => Err(ExprError::Domain("division by zero")),
        BinaryOp::Div => Ok(a / b),
    }
}

fn apply_powi(a: f64, n: i32) -> Result<f64, ExprError> {
    if n < 0 && a == 0.0 {
        return Err(ExprError::Domain("negative power of zero"));
    }
    Ok(a.powi(n))
}

/// Support slots that appear under a nonlinear operation. The Hessian of a
/// tape vanishes outside these rows and columns.
fn nonlinear_slots(ops: &[Op], n_slots: usize) -> Vec<usize> {
    let mut deps: Vec<Vec<usize>> = Vec::with_capacity(ops.len());
    let mut marked = vec![false; n_slots];
    let union = |a: &[usize], b: &[usize]| {
        let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
        u.sort_unstable();
        u.dedup();
        u
    };
    for op in ops {
        let (d, nonlinear) = match *op {
            Op::Const(_) => (Vec::new(), false),
            Op::Var(s) => (vec![s as usize], false),
            Op::Neg(a) => (deps[a as usize].clone(), false),
            Op::Exp(a) | Op::Ln(a) => (deps[a as usize].clone(), true),
            Op::Powi(a, n) => (deps[a as usize].clone(), n != 0 && n != 1),
            Op::Add(a, b) | Op::Sub(a, b) => (union(&deps[a as usize], &deps[b as usize]), false),
            Op::Mul(a, b) => {
                let both = !deps[a as usize].is_empty() && !deps[b as usize].is_empty();
                (union(&deps[a as usize], &deps[b as usize]), both)
            }
            Op::Div(a, b) => {
                let varying_denominator = !deps[b as usize].is_empty();
                (union(&deps[a as usize], &deps[b as usize]), varying_denominator)
            }
        };
        if nonlinear {
            for &s in &d {
                marked[s] = true;
            }
        }
        deps.push(d);
    }
    (0..n_slots).filter(|&s| marked[s]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    /// Slot into the tape's support.
    Var(u32),
    Neg(u32),
    Exp(u32),
    Ln(u32),
    Powi(u32, i32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
}

/// Scratch buffers for tape evaluation; reuse across calls to avoid allocation.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    values: Vec<f64>,
    adjoints: Vec<f64>,
}

/// A compiled expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    ops: Vec<Op>,
    support: Vec<usize>,
    nonlinear: Vec<usize>,
}

impl Tape {
    /// Sorted, deduplicated variable indices referenced by the expression.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Positions within [`Tape::support`] of the variables that enter the
    /// expression nonlinearly.
    pub fn nonlinear_slots(&self) -> &[usize] {
        &self.nonlinear
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn check_point(&self, point: &[f64]) -> Result<(), ExprError> {
        match self.support.last() {
            Some(&last) if last >= point.len() => Err(ExprError::IndexOutOfRange {
                index: last,
                len: point.len(),
            }),
            _ => Ok(()),
        }
    }

    fn forward(&self, point: &[f64], ws: &mut Workspace) -> Result<f64, ExprError> {
        self.check_point(point)?;
        let values = &mut ws.values;
        values.clear();
        values.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => c,
                Op::Var(s) => point[self.support[s as usize]],
                Op::Neg(a) => -values[a as usize],
                Op::Exp(a) => values[a as usize].exp(),
                Op::Ln(a) => apply_unary(UnaryOp::Ln, values[a as usize])?,
                Op::Powi(a, n) => apply_powi(values[a as usize], n)?,
                Op::Add(a, b) => values[a as usize] + values[b as usize],
                Op::Sub(a, b) => values[a as usize] - values[b as usize],
                Op::Mul(a, b) => values[a as usize] * values[b as usize],
                Op::Div(a, b) => apply_binary(BinaryOp::Div, values[a as usize], values[b as usize])?,
            };
            values.push(v);
        }
        Ok(*values.last().expect("tapes are never empty"))
    }

    pub fn eval(&self, point: &[f64], ws: &mut Workspace) -> Result<f64, ExprError> {
        self.forward(point, ws)
    }

    /// Evaluates and writes the gradient restricted to the support into
    /// `local` (which must have `support().len()` entries). Returns the value.
    pub fn gradient_local(
        &self,
        point: &[f64],
        ws: &mut Workspace,
        local: &mut [f64],
    ) -> Result<f64, ExprError> {
        assert_eq!(local.len(), self.support.len());
        let value = self.forward(point, ws)?;
        local.iter_mut().for_each(|g| *g = 0.0);
        let Workspace { values, adjoints } = ws;
        adjoints.clear();
        adjoints.resize(self.ops.len(), 0.0);
        *adjoints.last_mut().expect("tapes are never empty") = 1.0;
        for (i, op) in self.ops.iter().enumerate().rev() {
            let bar = adjoints[i];
            if bar == 0.0 {
                continue;
            }
            match *op {
                Op::Const(_) => {}
                Op::Var(s) => local[s as usize] += bar,
                Op::Neg(a) => adjoints[a as usize] -= bar,
                Op::Exp(a) => adjoints[a as usize] += bar * values[i],
                Op::Ln(a) => adjoints[a as usize] += bar / values[a as usize],
                Op::Powi(a, n) => {
                    let base = values[a as usize];
                    adjoints[a as usize] += bar * f64::from(n) * base.powi(n - 1);
                }
                Op::Add(a, b) => {
                    adjoints[a as usize] += bar;
                    adjoints[b as usize] += bar;
                }
                Op::Sub(a, b) => {
                    adjoints[a as usize] += bar;
                    adjoints[b as usize] -= bar;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (values[a as usize], values[b as usize]);
                    adjoints[a as usize] += bar * vb;
                    adjoints[b as usize] += bar * va;
                }
                Op::Div(a, b) => {
                    let vb = values[b as usize];
                    adjoints[a as usize] += bar / vb;
                    adjoints[b as usize] -= bar * values[i] / vb;
                }
            }
        }
        Ok(value)
    }

    /// Adds `weight * gradient` into the dense vector `out`. Returns the value.
    pub fn accumulate_gradient(
        &self,
        point: &[f64],
        weight: f64,
        ws: &mut Workspace,
        out: &mut [f64],
    ) -> Result<f64, ExprError> {
        let mut local = vec![0.0; self.support.len()];
        let value = self.gradient_local(point, ws, &mut local)?;
        for (&idx, g) in self.support.iter().zip(&local) {
            out[idx] += weight * g;
        }
        Ok(value)
    }
}

macro_rules! impl_binary_ops {
    ($($trait:ident $method:ident $op:ident),*) => {$(
        impl $trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::binary(BinaryOp::$op, self, rhs)
            }
        }
        impl $trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::binary(BinaryOp::$op, self.clone(), rhs.clone())
            }
        }
        impl $trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::binary(BinaryOp::$op, self, Expr::Const(rhs))
            }
        }
        impl $trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::binary(BinaryOp::$op, Expr::Const(self), rhs)
            }
        }
    )*};
}

impl_binary_ops!(Add add Add, Sub sub Sub, Mul mul Mul, Div div Div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::unary(UnaryOp::Neg, self)
    }
}

impl From<f64> for Expr {
    fn from(value: f64) -> Self {
        Expr::Const(value)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(neg {a})"),
            Expr::Unary(UnaryOp::Exp, a) => write!(f, "(exp {a})"),
            Expr::Unary(UnaryOp::Ln, a) => write!(f, "(ln {a})"),
            Expr::Powi(a, n) => write!(f, "(pow {a} {n})"),
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => "+",
                    BinaryOp::Sub => "-",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                };
                write!(f, "({sym} {a} {b})")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn x(i: usize) -> Expr {
        Expr::var(i)
    }

    #[test]
    fn eval_examples() {
        assert_eq!((x(0) * x(0)).eval(&[3.0]).unwrap(), 9.0);
        let mode1 = (x(0) - 1.0).exp() * -x(0);
        assert_eq!(mode1.eval(&[1.0]).unwrap(), -1.0);
        let mode2 = (x(0).powi(3) * 0.5 + x(1)) / 20.0;
        assert_abs_diff_eq!(mode2.eval(&[2.0, 4.0]).unwrap(), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(x(0).powi(2).gradient(&[3.0]).unwrap(), vec![6.0]);
        assert_eq!((x(0) * x(1)).gradient(&[2.0, 5.0]).unwrap(), vec![5.0, 2.0]);
    }

    #[test]
    fn gradient_matches_central_difference_on_mode_one() {
        let e = -x(0) * (x(0) - 1.0).exp() + x(1);
        let p = [1.0, 0.0];
        let g = e.gradient(&p).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut hi = p;
            let mut lo = p;
            hi[i] += h;
            lo[i] -= h;
            let fd = (e.eval(&hi).unwrap() - e.eval(&lo).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(g[0], -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn errors() {
        assert_eq!(
            x(2).eval(&[1.0]),
            Err(ExprError::IndexOutOfRange { index: 2, len: 1 })
        );
        assert!(matches!(x(2).gradient(&[1.0]), Err(ExprError::IndexOutOfRange { .. })));
        assert!(matches!((1.0 / x(0)).eval(&[0.0]), Err(ExprError::Domain(_))));
        assert!(matches!(x(0).ln().eval(&[0.0]), Err(ExprError::Domain(_))));
        assert!(matches!(x(0).ln().gradient(&[-1.0]), Err(ExprError::Domain(_))));
        assert!(matches!(x(0).powi(-1).eval(&[0.0]), Err(ExprError::Domain(_))));
    }

    #[test]
    fn constant_gradient_is_zero() {
        let e = Expr::constant(3.0) * 2.0 + 1.0;
        assert_eq!(e.gradient(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn tape_support_is_sorted_and_local_gradient_aligns() {
        let e = x(7) * x(2) + x(7);
        let tape = e.compile();
        assert_eq!(tape.support(), &[2, 7]);
        let mut point = vec![0.0; 8];
        point[2] = 3.0;
        point[7] = 4.0;
        let mut ws = Workspace::default();
        let mut local = [0.0; 2];
        let v = tape.gradient_local(&point, &mut ws, &mut local).unwrap();
        assert_eq!(v, 16.0);
        assert_eq!(local, [4.0, 4.0]);
    }

    #[test]
    fn nonlinear_slots_follow_the_operations() {
        let affine = (x(0) * 2.0 - x(1) / 4.0 + 1.0).compile();
        assert!(affine.nonlinear_slots().is_empty());
        let mixed = (x(0) * 3.0 + (x(2) - 1.0).exp() + x(5) / x(4)).compile();
        // support is [0, 2, 4, 5]
        assert_eq!(mixed.nonlinear_slots(), &[1, 2, 3]);
        let product = (x(1) * x(3) + x(2).powi(1)).compile();
        assert_eq!(product.nonlinear_slots(), &[0, 2]);
    }

    #[test]
    fn map_vars_substitutes() {
        let e = x(0) * x(1);
        let s = e.map_vars(&mut |i| if i == 0 { Expr::Const(2.0) } else { x(5) });
        assert_eq!(s.max_var_index(), Some(5));
        let mut p = vec![0.0; 6];
        p[5] = 4.0;
        assert_eq!(s.eval(&p).unwrap(), 8.0);
    }
}
