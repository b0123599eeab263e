//! Minimal scalar reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as a node holding at most two parents
//! and the local partial derivatives with respect to them. [`Tape::gradient`]
//! walks the nodes backwards once.
//!
//! Non-smooth points use the zero subgradient: `relu(0)`, `sqrt(0)`, `abs(0)`
//! and clamped regions all propagate an exact zero.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
    arity: u8,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    val: f64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// A new independent variable.
    pub fn var(&self, val: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [0, 0],
            partials: [0.0, 0.0],
            arity: 0,
        });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    pub fn vars(&self, vals: &[f64]) -> Vec<Var<'_>> {
        vals.iter().map(|&v| self.var(v)).collect()
    }

    /// A constant; identical to a variable whose gradient is never read.
    pub fn constant(&self, val: f64) -> Var<'_> {
        self.var(val)
    }

    fn unary(&self, a: Var<'_>, val: f64, da: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [a.idx, 0],
            partials: [da, 0.0],
            arity: 1,
        });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    fn binary(&self, a: Var<'_>, b: Var<'_>, val: f64, da: f64, db: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [a.idx, b.idx],
            partials: [da, db],
            arity: 2,
        });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adjoints of every node with respect to `output`.
    pub fn gradient(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[output.idx] = 1.0;
        for i in (0..=output.idx).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..node.arity as usize {
                adj[node.parents[k]] += node.partials[k] * g;
            }
        }
        Gradients(adj)
    }
}

pub struct Gradients(Vec<f64>);

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.0[v.idx]
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|v| self.0[v.idx]).collect()
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.val
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn exp(self) -> Self {
        let e = self.val.exp();
        self.tape.unary(self, e, e)
    }

    /// Natural log with the argument clamped from below at `1e-30`.
    pub fn ln(self) -> Self {
        const FLOOR: f64 = 1e-30;
        if self.val < FLOOR {
            self.tape.unary(self, FLOOR.ln(), 0.0)
        } else {
            self.tape.unary(self, self.val.ln(), 1.0 / self.val)
        }
    }

    pub fn sqrt(self) -> Self {
        let s = self.val.max(0.0).sqrt();
        let d = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.tape.unary(self, s, d)
    }

    pub fn square(self) -> Self {
        self.tape.unary(self, self.val * self.val, 2.0 * self.val)
    }

    /// `max(0, x)`.
    pub fn relu(self) -> Self {
        if self.val > 0.0 {
            self.tape.unary(self, self.val, 1.0)
        } else {
            self.tape.unary(self, 0.0, 0.0)
        }
    }

    pub fn abs(self) -> Self {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.tape.unary(self, self.val.abs(), d)
    }

    pub fn cos(self) -> Self {
        self.tape.unary(self, self.val.cos(), -self.val.sin())
    }

    /// `acos` with the argument clamped to `[lo, hi]`; zero slope outside.
    pub fn acos_clamped(self, lo: f64, hi: f64) -> Self {
        if self.val <= lo || self.val >= hi {
            let c = self.val.clamp(lo, hi);
            self.tape.unary(self, c.acos(), 0.0)
        } else {
            let d = -1.0 / (1.0 - self.val * self.val).sqrt();
            self.tape.unary(self, self.val.acos(), d)
        }
    }

    pub fn scale(self, k: f64) -> Self {
        self.tape.unary(self, self.val * k, k)
    }

    pub fn offset(self, k: f64) -> Self {
        self.tape.unary(self, self.val + k, 1.0)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.tape.binary(self, rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.tape.binary(self, rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.tape
            .binary(self, rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        self.tape
            .binary(self, rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.offset(rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.offset(-rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.scale(1.0 / rhs)
    }
}

// Vector helpers over rows of variables.

pub fn sum<'t>(tape: &'t Tape, xs: impl IntoIterator<Item = Var<'t>>) -> Var<'t> {
    let mut it = xs.into_iter();
    match it.next() {
        None => tape.constant(0.0),
        Some(first) => it.fold(first, |acc, x| acc + x),
    }
}

pub fn dot<'t>(a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
    let tape = a[0].tape;
    sum(tape, a.iter().zip(b).map(|(&x, &y)| x * y))
}

pub fn sq_norm<'t>(a: &[Var<'t>]) -> Var<'t> {
    let tape = a[0].tape;
    sum(tape, a.iter().map(|&x| x.square()))
}

pub fn sq_distance<'t>(a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
    let tape = a[0].tape;
    sum(tape, a.iter().zip(b).map(|(&x, &y)| (x - y).square()))
}

/// Euclidean distance with zero subgradient at coincident points.
pub fn distance<'t>(a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
    sq_distance(a, b).sqrt()
}

/// Row scaled to unit norm. Callers guarantee a nonzero norm.
pub fn normalize<'t>(a: &[Var<'t>]) -> Vec<Var<'t>> {
    let norm = sq_norm(a).sqrt();
    a.iter().map(|&x| x / norm).collect()
}

/// `log(sum(exp(x)))`, shifted by the maximum for stability.
pub fn log_sum_exp<'t>(tape: &'t Tape, xs: &[Var<'t>]) -> Var<'t> {
    if xs.is_empty() {
        return tape.constant(f64::NEG_INFINITY);
    }
    let m = xs.iter().map(|x| x.val).fold(f64::NEG_INFINITY, f64::max);
    let s = sum(tape, xs.iter().map(|&x| (x - m).exp()));
    s.ln() + m
}

/// `log(1 + sum(exp(x)))`.
pub fn log1p_sum_exp<'t>(tape: &'t Tape, xs: &[Var<'t>]) -> Var<'t> {
    let m = xs.iter().map(|x| x.val).fold(0.0, f64::max);
    let s = sum(tape, xs.iter().map(|&x| (x - m).exp()));
    (s + (-m).exp()).ln() + m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn composite_expression_matches_finite_differences() {
        let f = |x: &[f64]| ((x[0] * x[1]).exp() + x[2].ln()).sqrt() / (x[0] - x[2]).cos();
        let x = [0.3, 0.7, 1.9];
        let tape = Tape::new();
        let v = tape.vars(&x);
        let out = ((v[0] * v[1]).exp() + v[2].ln()).sqrt() / (v[0] - v[2]).cos();
        assert!((out.value() - f(&x)).abs() < 1e-14);
        let g = tape.gradient(out).wrt_all(&v);
        for (a, b) in g.iter().zip(fd(f, &x)) {
            assert!((a - b).abs() < 1e-7 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn nonsmooth_points_give_zero() {
        let tape = Tape::new();
        let a = tape.vars(&[1.0, 2.0]);
        let b = tape.vars(&[1.0, 2.0]);
        let d = distance(&a, &b);
        let r = tape.var(-0.5).relu();
        let out = d + r;
        let g = tape.gradient(out);
        assert_eq!(g.wrt_all(&a), vec![0.0, 0.0]);
        assert_eq!(out.value(), 0.0);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let tape = Tape::new();
        let xs = tape.vars(&[1000.0, 1000.0]);
        let l = log_sum_exp(&tape, &xs);
        assert!((l.value() - (1000.0 + 2f64.ln())).abs() < 1e-9);
        let g = tape.gradient(l).wrt_all(&xs);
        assert!((g[0] - 0.5).abs() < 1e-12);
        let l1 = log1p_sum_exp(&tape, &[]);
        assert_eq!(l1.value(), 0.0);
    }
}
