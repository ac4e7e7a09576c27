//! Reverse-mode automatic differentiation over a scalar evaluation tape.
//!
//! A [`Tape`] records every elementary operation applied to [`Var`] values,
//! storing the local partial derivatives of each node with respect to its
//! parents. A single reverse sweep from a scalar output then yields the
//! gradient with respect to every input.
//!
//! Supported operations: `+ - * /`, negation, `exp`, `ln`, `sqrt`, `tanh`,
//! `softplus`, `sigmoid`, `powf`/`powi`, n-ary sums and linear combinations,
//! and fused nodes whose local Jacobian the caller provides
//! ([`Tape::custom`]). Anything else is not expressible on a `Var` and is
//! rejected at compile time.
//!
//! A tape is single-use and `!Sync`; independent tapes can run on separate
//! threads.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Elementary operation recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Input,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Softplus,
    Sigmoid,
    Pow,
    Sum,
    LinearCombination,
    Custom(&'static str),
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Custom(name) => write!(f, "custom:{name}"),
            other => write!(f, "{}", format!("{other:?}").to_lowercase()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
    start: u32,
    len: u32,
}

#[derive(Debug, Clone, Copy)]
struct Fault {
    op: Op,
    node: usize,
}

/// Ordered record of elementary operations.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    // (parent index, local partial) pairs, addressed by Node::start/len
    edges: RefCell<Vec<(u32, f64)>>,
    inputs: Cell<usize>,
    recording: bool,
    fault: Cell<Option<Fault>>,
    passive_count: Cell<usize>,
}

const PASSIVE: u32 = u32::MAX;

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_mode(true)
    }

    /// A tape that evaluates values without recording anything. Used for
    /// value-only evaluation where gradients are not needed.
    pub fn passive() -> Self {
        Self::with_mode(false)
    }

    fn with_mode(recording: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            edges: RefCell::new(Vec::new()),
            inputs: Cell::new(0),
            recording,
            fault: Cell::new(None),
            passive_count: Cell::new(0),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of input variables registered so far.
    pub fn input_count(&self) -> usize {
        self.inputs.get()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an input (independent) variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.inputs.set(self.inputs.get() + 1);
        self.push(Op::Input, value, &[])
    }

    /// Registers several input variables at once.
    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// A constant: participates in arithmetic but always has zero gradient.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Constant, value, &[])
    }

    fn push(&self, op: Op, value: f64, partials: &[(u32, f64)]) -> Var<'_> {
        let index = if self.recording {
            let mut nodes = self.nodes.borrow_mut();
            let mut edges = self.edges.borrow_mut();
            let start = edges.len() as u32;
            edges.extend(partials.iter().filter(|(p, _)| *p != PASSIVE));
            let len = edges.len() as u32 - start;
            nodes.push(Node { op, value, start, len });
            (nodes.len() - 1) as u32
        } else {
            self.passive_count.set(self.passive_count.get() + 1);
            PASSIVE
        };
        if cfg!(debug_assertions) || !self.recording {
            self.check(op, value, index);
        }
        Var { tape: self, index, value }
    }

    fn check(&self, op: Op, value: f64, index: u32) {
        if !value.is_finite() && self.fault.get().is_none() {
            let node = if index == PASSIVE {
                self.passive_count.get() - 1
            } else {
                index as usize
            };
            self.fault.set(Some(Fault { op, node }));
        }
    }

    fn fault_error(&self) -> Option<Error> {
        if let Some(f) = self.fault.get() {
            return Some(Error::NonFinite { op: f.op.to_string(), node: f.node });
        }
        if self.recording {
            let nodes = self.nodes.borrow();
            if let Some((i, n)) = nodes.iter().enumerate().find(|(_, n)| !n.value.is_finite()) {
                return Some(Error::NonFinite { op: n.op.to_string(), node: i });
            }
        }
        None
    }

    /// Fails if any operation evaluated so far produced a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        match self.fault_error() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Reverse sweep from `output`, returning d output / d `wrt[i]`.
    pub fn gradient(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<f64>> {
        if !self.recording {
            return Err(Error::Config("gradient requested from a passive tape".into()));
        }
        self.check_finite()?;
        let nodes = self.nodes.borrow();
        let edges = self.edges.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        if output.index == PASSIVE {
            return Ok(vec![0.0; wrt.len()]);
        }
        adjoint[output.index as usize] = 1.0;
        for i in (0..=output.index as usize).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for &(parent, partial) in &edges[node.start as usize..(node.start + node.len) as usize] {
                adjoint[parent as usize] += a * partial;
            }
        }
        let grad: Vec<f64> = wrt.iter().map(|v| adjoint[v.index as usize]).collect();
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: "reverse-sweep".into(), node: wrt[i].index as usize });
        }
        Ok(grad)
    }

    /// Sum of many variables as a single node.
    pub fn sum<'t>(&'t self, terms: &[Var<'t>]) -> Var<'t> {
        let value = terms.iter().map(|v| v.value).sum();
        let partials: Vec<(u32, f64)> = terms.iter().map(|v| (v.index, 1.0)).collect();
        self.push(Op::Sum, value, &partials)
    }

    /// `offset + Σ coef[i] * terms[i]` as a single node.
    pub fn linear_combination<'t>(&'t self, offset: f64, coef: &[f64], terms: &[Var<'t>]) -> Var<'t> {
        debug_assert_eq!(coef.len(), terms.len());
        let value = offset + coef.iter().zip(terms).map(|(c, v)| c * v.value).sum::<f64>();
        let partials: Vec<(u32, f64)> = coef.iter().zip(terms).map(|(&c, v)| (v.index, c)).collect();
        self.push(Op::LinearCombination, value, &partials)
    }

    /// A fused node whose value and local partials (one per input) are
    /// computed by the caller.
    pub fn custom<'t>(&'t self, name: &'static str, inputs: &[Var<'t>], value: f64, partials: &[f64]) -> Var<'t> {
        assert_eq!(inputs.len(), partials.len(), "custom op {name}: one partial per input");
        let edges: Vec<(u32, f64)> = inputs.iter().zip(partials).map(|(v, &p)| (v.index, p)).collect();
        self.push(Op::Custom(name), value, &edges)
    }
}

/// A scalar value tracked on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.value)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op, value: f64, partial: f64) -> Var<'t> {
        self.tape.push(op, value, &[(self.index, partial)])
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value.exp();
        self.unary(Op::Exp, e, e)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln, self.value.ln(), 1.0 / self.value)
    }

    pub fn sqrt(self) -> Var<'t> {
        let s = self.value.sqrt();
        self.unary(Op::Sqrt, s, 0.5 / s)
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.value.tanh();
        self.unary(Op::Tanh, t, 1.0 - t * t)
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus, softplus(self.value), sigmoid(self.value))
    }

    /// Logistic sigmoid `1 / (1 + e^-x)`.
    pub fn sigmoid(self) -> Var<'t> {
        let s = sigmoid(self.value);
        self.unary(Op::Sigmoid, s, s * (1.0 - s))
    }

    /// `log sigmoid(x) = -softplus(-x)`.
    pub fn log_sigmoid(self) -> Var<'t> {
        -(-self).softplus()
    }

    pub fn powf(self, exponent: f64) -> Var<'t> {
        let v = self.value.powf(exponent);
        let d = if exponent == 0.0 { 0.0 } else { exponent * self.value.powf(exponent - 1.0) };
        self.unary(Op::Pow, v, d)
    }

    pub fn powi(self, exponent: i32) -> Var<'t> {
        let v = self.value.powi(exponent);
        let d = if exponent == 0 { 0.0 } else { f64::from(exponent) * self.value.powi(exponent - 1) };
        self.unary(Op::Pow, v, d)
    }

    /// `self ^ other` with both operands tracked; requires `self > 0`.
    pub fn pow(self, other: Var<'t>) -> Var<'t> {
        let v = self.value.powf(other.value);
        self.tape.push(
            Op::Pow,
            v,
            &[(self.index, other.value * self.value.powf(other.value - 1.0)), (other.index, v * self.value.ln())],
        )
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.push(Op::Add, self.value + rhs.value, &[(self.index, 1.0), (rhs.index, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.push(Op::Sub, self.value - rhs.value, &[(self.index, 1.0), (rhs.index, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .push(Op::Mul, self.value * rhs.value, &[(self.index, rhs.value), (rhs.index, self.value)])
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.value / rhs.value;
        self.tape.push(Op::Div, q, &[(self.index, 1.0 / rhs.value), (rhs.index, -q / rhs.value)])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Add, self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Sub, self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Mul, self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Div, self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(Op::Sub, self - rhs.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self / rhs.value;
        rhs.unary(Op::Div, q, -q / rhs.value)
    }
}

/// Value and gradient of `f` at `x`.
///
/// `f` receives one input variable per coordinate of `x`.
pub fn grad<F>(f: F, x: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    try_grad(|v| Ok(f(v)), x)
}

/// Like [`grad`] for functions that can fail while building the expression.
pub fn try_grad<F>(f: F, x: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite input at coordinate {i}")));
    }
    let tape = Tape::new();
    let inputs = tape.vars(x);
    let out = f(&inputs)?;
    let g = tape.gradient(out, &inputs)?;
    Ok((out.value(), g))
}

/// Value of `f` at `x` without recording a tape.
pub fn value<F>(f: F, x: &[f64]) -> Result<f64>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::passive();
    let inputs = tape.vars(x);
    let out = f(&inputs)?;
    tape.check_finite()?;
    Ok(out.value())
}

/// Largest relative discrepancy between the tape gradient and central
/// finite differences with step `h`:
/// `max_i |g_i - fd_i| / (|g_i| + h)`.
pub fn finite_diff_check<F>(f: F, x: &[f64], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    if h <= 0.0 {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {h}")));
    }
    let (_, g) = try_grad(&f, x)?;
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = value(&f, &probe)?;
        probe[i] = x[i] - h;
        let down = value(&f, &probe)?;
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / (g[i].abs() + h));
    }
    Ok(worst)
}
