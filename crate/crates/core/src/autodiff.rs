//! Reverse-mode automatic differentiation over scalars.
//!
//! A [`Tape`] records every scalar operation in evaluation order together with
//! the local partial derivatives of the result with respect to its inputs.
//! [`Tape::backward`] then performs a single reverse sweep. Inputs always refer
//! to earlier entries, so the recording order is a topological order.
//!
//! Hot paths (rasterization, image norms) register a [`FusedOp`]: one node with
//! many inputs and many outputs whose adjoint is hand written.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::scalar::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(u32);

impl VarId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Elementary operations available through [`Tape::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Sigmoid,
    Min,
    Max,
    Relu,
    Powi(i32),
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Min | Op::Max => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Exp => "exp",
            Op::Sqrt => "sqrt",
            Op::Sigmoid => "sigmoid",
            Op::Min => "min",
            Op::Max => "max",
            Op::Relu => "relu",
            Op::Powi(_) => "powi",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: domain error at input {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("div: division by exact zero")]
    DivisionByZero,
    #[error("{op}: expected {expected} arguments, got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(VarId),
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// A vector-valued operation with a hand-written adjoint, recorded as one tape node.
pub trait FusedOp<T>: Send {
    fn name(&self) -> &'static str;

    /// Recomputes the outputs from the input values (used by [`Tape::replay`]).
    fn forward(&self, inputs: &[T]) -> Vec<T>;

    /// Accumulates `d root / d input` into `in_adj` given `d root / d output`.
    fn backward(&self, out_adj: &[T], in_adj: &mut [T]);
}

#[derive(Clone, Copy, Debug)]
enum Code<T> {
    Leaf,
    Elem(Op),
    AddConst(T),
    MulConst(T),
    /// `offset + sum(coef_i * x_i)`; coefficients live in the partials arena.
    Linear(T),
    /// `sum(a_i * b_i)` over two halves of the argument list.
    Dot,
    Fused { entry: u32, slot: u32 },
}

#[derive(Clone, Copy, Debug)]
struct Node<T> {
    code: Code<T>,
    start: u32,
    len: u32,
}

struct FusedEntry<T> {
    op: Box<dyn FusedOp<T>>,
    inputs: Vec<VarId>,
    outputs: Range<usize>,
    adjoint_scale: T,
}

/// Append-only record of a scalar computation.
pub struct Tape<T> {
    values: Vec<T>,
    nodes: Vec<Node<T>>,
    args: Vec<VarId>,
    partials: Vec<T>,
    fused: Vec<FusedEntry<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("fused", &self.fused.len())
            .finish()
    }
}

/// Result of a reverse sweep: `d root / d v` for every recorded variable.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    adjoints: Vec<T>,
}

impl<T: Real> Gradients<T> {
    #[inline]
    pub fn wrt(&self, v: VarId) -> T {
        self.adjoints.get(v.index()).copied().unwrap_or_else(T::zero)
    }

    pub fn len(&self) -> usize {
        self.adjoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjoints.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.adjoints
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            nodes: Vec::new(),
            args: Vec::new(),
            partials: Vec::new(),
            fused: Vec::new(),
        }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            values: Vec::with_capacity(nodes),
            nodes: Vec::with_capacity(nodes),
            args: Vec::with_capacity(nodes * 2),
            partials: Vec::with_capacity(nodes * 2),
            fused: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn value(&self, v: VarId) -> T {
        self.values[v.index()]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    fn push(&mut self, code: Code<T>, value: T, inputs: &[(VarId, T)]) -> VarId {
        let id = VarId(u32::try_from(self.values.len()).expect("tape exceeds u32 nodes"));
        let start = self.args.len() as u32;
        for &(a, d) in inputs {
            debug_assert!(a.index() < self.values.len());
            self.args.push(a);
            self.partials.push(d);
        }
        self.values.push(value);
        self.nodes.push(Node { code, start, len: inputs.len() as u32 });
        id
    }

    /// Records an independent input variable.
    pub fn leaf(&mut self, value: T) -> VarId {
        self.push(Code::Leaf, value, &[])
    }

    /// Records a constant. Identical to a leaf; its gradient is simply never read.
    pub fn constant(&mut self, value: T) -> VarId {
        self.leaf(value)
    }

    fn check(&self, v: VarId) -> Result<(), AutodiffError> {
        if v.index() < self.values.len() {
            Ok(())
        } else {
            Err(AutodiffError::UnknownVar(v))
        }
    }

    /// Applies an elementary operation, validating arity and domain.
    pub fn apply(&mut self, op: Op, args: &[VarId]) -> Result<VarId, AutodiffError> {
        if args.len() != op.arity() {
            return Err(AutodiffError::Arity { op: op.name(), expected: op.arity(), got: args.len() });
        }
        for &a in args {
            self.check(a)?;
        }
        let x = self.value(args[0]);
        let one = T::one();
        let (value, partials): (T, [T; 2]) = match op {
            Op::Add => (x + self.value(args[1]), [one, one]),
            Op::Sub => (x - self.value(args[1]), [one, -one]),
            Op::Mul => {
                let y = self.value(args[1]);
                (x * y, [y, x])
            }
            Op::Div => {
                let y = self.value(args[1]);
                if y == T::zero() {
                    return Err(AutodiffError::DivisionByZero);
                }
                let q = x / y;
                (q, [one / y, -q / y])
            }
            Op::Neg => (-x, [-one, T::zero()]),
            Op::Sin => (x.sin(), [x.cos(), T::zero()]),
            Op::Cos => (x.cos(), [-x.sin(), T::zero()]),
            Op::Exp => {
                let e = x.exp();
                (e, [e, T::zero()])
            }
            Op::Sqrt => {
                if x < T::zero() || x.is_nan() {
                    return Err(AutodiffError::Domain { op: "sqrt", value: x.as_f64() });
                }
                let s = x.sqrt();
                (s, [T::lit(0.5) / s, T::zero()])
            }
            Op::Sigmoid => {
                let s = sigmoid(x);
                (s, [s * (one - s), T::zero()])
            }
            // Ties resolve to the first argument.
            Op::Min => {
                let y = self.value(args[1]);
                if x <= y {
                    (x, [one, T::zero()])
                } else {
                    (y, [T::zero(), one])
                }
            }
            Op::Max => {
                let y = self.value(args[1]);
                if x >= y {
                    (x, [one, T::zero()])
                } else {
                    (y, [T::zero(), one])
                }
            }
            Op::Relu => {
                if x > T::zero() {
                    (x, [one, T::zero()])
                } else {
                    (T::zero(), [T::zero(), T::zero()])
                }
            }
            Op::Powi(n) => {
                let d = if n == 0 { T::zero() } else { T::lit(f64::from(n)) * x.powi(n - 1) };
                (x.powi(n), [d, T::zero()])
            }
        };
        let inputs: Vec<(VarId, T)> = args.iter().copied().zip(partials).collect();
        Ok(self.push(Code::Elem(op), value, &inputs))
    }

    fn unary(&mut self, op: Op, a: VarId) -> VarId {
        self.apply(op, &[a]).expect("infallible unary op")
    }

    fn binary(&mut self, op: Op, a: VarId, b: VarId) -> VarId {
        self.apply(op, &[a, b]).expect("infallible binary op")
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        self.binary(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        self.binary(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        self.binary(Op::Mul, a, b)
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId, AutodiffError> {
        self.apply(Op::Div, &[a, b])
    }

    pub fn neg(&mut self, a: VarId) -> VarId {
        self.unary(Op::Neg, a)
    }

    pub fn sin(&mut self, a: VarId) -> VarId {
        self.unary(Op::Sin, a)
    }

    pub fn cos(&mut self, a: VarId) -> VarId {
        self.unary(Op::Cos, a)
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        self.unary(Op::Exp, a)
    }

    pub fn sqrt(&mut self, a: VarId) -> Result<VarId, AutodiffError> {
        self.apply(Op::Sqrt, &[a])
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        self.unary(Op::Sigmoid, a)
    }

    pub fn min(&mut self, a: VarId, b: VarId) -> VarId {
        self.binary(Op::Min, a, b)
    }

    pub fn max(&mut self, a: VarId, b: VarId) -> VarId {
        self.binary(Op::Max, a, b)
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        self.unary(Op::Relu, a)
    }

    pub fn powi(&mut self, a: VarId, n: i32) -> VarId {
        self.unary(Op::Powi(n), a)
    }

    pub fn add_const(&mut self, a: VarId, c: T) -> VarId {
        let v = self.value(a) + c;
        self.push(Code::AddConst(c), v, &[(a, T::one())])
    }

    pub fn mul_const(&mut self, a: VarId, c: T) -> VarId {
        let v = self.value(a) * c;
        self.push(Code::MulConst(c), v, &[(a, c)])
    }

    /// `offset + sum(coef * x)` as a single node.
    pub fn linear(&mut self, terms: &[(VarId, T)], offset: T) -> VarId {
        let mut v = offset;
        for &(a, c) in terms {
            v += c * self.value(a);
        }
        self.push(Code::Linear(offset), v, terms)
    }

    pub fn sum(&mut self, xs: &[VarId]) -> VarId {
        let terms: Vec<(VarId, T)> = xs.iter().map(|&x| (x, T::one())).collect();
        self.linear(&terms, T::zero())
    }

    /// Inner product of two equally long variable lists as a single node.
    pub fn dot(&mut self, a: &[VarId], b: &[VarId]) -> VarId {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let mut v = T::zero();
        let mut inputs = Vec::with_capacity(a.len() * 2);
        for (&x, &y) in a.iter().zip(b) {
            v += self.value(x) * self.value(y);
        }
        for (&x, &y) in a.iter().zip(b) {
            inputs.push((x, self.value(y)));
        }
        for (&x, &y) in a.iter().zip(b) {
            inputs.push((y, self.value(x)));
        }
        self.push(Code::Dot, v, &inputs)
    }

    /// Records a fused operation whose outputs were computed by the caller.
    ///
    /// Returns the output variables, which are contiguous on the tape.
    pub fn record_fused(
        &mut self,
        op: Box<dyn FusedOp<T>>,
        inputs: Vec<VarId>,
        outputs: &[T],
    ) -> Vec<VarId> {
        assert!(!outputs.is_empty(), "fused op {} has no outputs", op.name());
        debug_assert!(inputs.iter().all(|v| v.index() < self.values.len()));
        let entry = self.fused.len() as u32;
        let first = self.values.len();
        for (slot, &value) in outputs.iter().enumerate() {
            self.push(Code::Fused { entry, slot: slot as u32 }, value, &[]);
        }
        let end = self.values.len();
        self.fused.push(FusedEntry { op, inputs, outputs: first..end, adjoint_scale: T::one() });
        (first..end).map(|i| VarId(i as u32)).collect()
    }

    /// Scales the adjoint of every fused op with the given name. Used only to
    /// inject faults when validating the gradient checker itself.
    pub fn corrupt_fused_adjoint(&mut self, name: &str, scale: T) {
        for e in &mut self.fused {
            if e.op.name() == name {
                e.adjoint_scale = scale;
            }
        }
    }

    /// Single reverse sweep from `root`.
    pub fn backward(&self, root: VarId) -> Gradients<T> {
        let n = root.index() + 1;
        assert!(n <= self.values.len(), "root {root} not on tape");
        let mut adj = vec![T::zero(); n];
        adj[root.index()] = T::one();
        for i in (0..n).rev() {
            let node = self.nodes[i];
            match node.code {
                Code::Leaf => {}
                Code::Fused { entry, slot } => {
                    if slot != 0 {
                        continue;
                    }
                    let e = &self.fused[entry as usize];
                    let out_end = e.outputs.end.min(n);
                    let out_adj: Vec<T> = (e.outputs.start..e.outputs.end)
                        .map(|k| if k < out_end { adj[k] } else { T::zero() })
                        .collect();
                    if out_adj.iter().all(|g| *g == T::zero()) {
                        continue;
                    }
                    let mut in_adj = vec![T::zero(); e.inputs.len()];
                    e.op.backward(&out_adj, &mut in_adj);
                    for (v, g) in e.inputs.iter().zip(in_adj) {
                        adj[v.index()] += g * e.adjoint_scale;
                    }
                }
                _ => {
                    let g = adj[i];
                    if g == T::zero() {
                        continue;
                    }
                    let s = node.start as usize;
                    for k in s..s + node.len as usize {
                        adj[self.args[k].index()] += g * self.partials[k];
                    }
                }
            }
        }
        Gradients { adjoints: adj }
    }

    /// Recomputes every value from the leaves using the recorded opcodes.
    pub fn replay(&self) -> Vec<T> {
        let mut vals: Vec<T> = Vec::with_capacity(self.values.len());
        let mut i = 0;
        while i < self.nodes.len() {
            let node = self.nodes[i];
            let s = node.start as usize;
            let args = &self.args[s..s + node.len as usize];
            let parts = &self.partials[s..s + node.len as usize];
            let arg = |k: usize| vals[args[k].index()];
            let v = match node.code {
                Code::Leaf => self.values[i],
                Code::Elem(op) => {
                    let x = arg(0);
                    match op {
                        Op::Add => x + arg(1),
                        Op::Sub => x - arg(1),
                        Op::Mul => x * arg(1),
                        Op::Div => x / arg(1),
                        Op::Neg => -x,
                        Op::Sin => x.sin(),
                        Op::Cos => x.cos(),
                        Op::Exp => x.exp(),
                        Op::Sqrt => x.sqrt(),
                        Op::Sigmoid => sigmoid(x),
                        Op::Min => {
                            let y = arg(1);
                            if x <= y {
                                x
                            } else {
                                y
                            }
                        }
                        Op::Max => {
                            let y = arg(1);
                            if x >= y {
                                x
                            } else {
                                y
                            }
                        }
                        Op::Relu => {
                            if x > T::zero() {
                                x
                            } else {
                                T::zero()
                            }
                        }
                        Op::Powi(n) => x.powi(n),
                    }
                }
                Code::AddConst(c) => arg(0) + c,
                Code::MulConst(c) => arg(0) * c,
                Code::Linear(offset) => {
                    let mut v = offset;
                    for (k, &c) in parts.iter().enumerate() {
                        v += c * arg(k);
                    }
                    v
                }
                Code::Dot => {
                    let half = args.len() / 2;
                    let mut v = T::zero();
                    for k in 0..half {
                        v += arg(k) * arg(half + k);
                    }
                    v
                }
                Code::Fused { entry, .. } => {
                    let e = &self.fused[entry as usize];
                    let inputs: Vec<T> = e.inputs.iter().map(|v| vals[v.index()]).collect();
                    let outs = e.op.forward(&inputs);
                    assert_eq!(outs.len(), e.outputs.len());
                    let last = *outs.last().expect("non-empty");
                    vals.extend_from_slice(&outs[..outs.len() - 1]);
                    i += outs.len() - 1;
                    last
                }
            };
            vals.push(v);
            i += 1;
        }
        vals
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn leaf_stores_value_and_self_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(3.0);
        assert_eq!(t.value(x), 3.0);
        let z = t.leaf(0.0);
        let g = t.backward(z);
        assert_eq!(g.wrt(z), 1.0);
        assert_eq!(g.wrt(x), 0.0);
    }

    #[test]
    fn square_and_sigmoid() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(3.0);
        let y = t.mul(x, x);
        assert_eq!(t.value(y), 9.0);
        assert_eq!(t.backward(y).wrt(x), 6.0);

        let z = t.leaf(0.0);
        let s = t.sigmoid(z);
        assert_eq!(t.value(s), 0.5);
        assert_eq!(t.backward(s).wrt(z), 0.25);
    }

    #[test]
    fn add_has_unit_partials() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(1.5);
        let y = t.leaf(-2.0);
        let s = t.add(x, y);
        let g = t.backward(s);
        assert_eq!((g.wrt(x), g.wrt(y)), (1.0, 1.0));
    }

    #[test]
    fn sin_times_exp_matches_finite_difference() {
        let x0 = 0.7;
        let mut t = Tape::<f64>::new();
        let x = t.leaf(x0);
        let s = t.sin(x);
        let e = t.exp(x);
        let f = t.mul(s, e);
        let analytic = t.backward(f).wrt(x);
        let fd = central_diff(|x| x.sin() * x.exp(), x0, 1e-6);
        assert!(((analytic - fd) / fd).abs() < 1e-6, "{analytic} vs {fd}");
    }

    #[test]
    fn domain_errors() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(-1.0);
        let zero = t.leaf(0.0);
        assert!(matches!(t.sqrt(x), Err(AutodiffError::Domain { op: "sqrt", .. })));
        assert_eq!(t.div(x, zero), Err(AutodiffError::DivisionByZero));
        assert!(matches!(t.apply(Op::Add, &[x]), Err(AutodiffError::Arity { .. })));
        assert!(matches!(t.apply(Op::Neg, &[VarId(99)]), Err(AutodiffError::UnknownVar(_))));
    }

    #[test]
    fn min_max_ties_take_first_argument() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(2.0);
        let b = t.leaf(2.0);
        let m = t.min(a, b);
        let g = t.backward(m);
        assert_eq!((g.wrt(a), g.wrt(b)), (1.0, 0.0));
        let m = t.max(a, b);
        let g = t.backward(m);
        assert_eq!((g.wrt(a), g.wrt(b)), (1.0, 0.0));
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(1000.0_f64), 1.0);
        assert_eq!(sigmoid(-1000.0_f64), 0.0);
        assert!(sigmoid(-40.0_f64) > 0.0);
        assert!((sigmoid(-40.0_f64) - (-40.0_f64).exp() / (1.0 + (-40.0_f64).exp())).abs() < 1e-30);
    }

    #[test]
    fn powi_and_relu() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(-1.5);
        let p = t.powi(x, 3);
        assert_eq!(t.backward(p).wrt(x), 3.0 * 2.25);
        let r = t.relu(x);
        assert_eq!(t.value(r), 0.0);
        assert_eq!(t.backward(r).wrt(x), 0.0);
        let c = t.powi(x, 0);
        assert_eq!(t.value(c), 1.0);
        assert_eq!(t.backward(c).wrt(x), 0.0);
    }

    struct Square;

    impl FusedOp<f64> for Square {
        fn name(&self) -> &'static str {
            "square"
        }
        fn forward(&self, inputs: &[f64]) -> Vec<f64> {
            inputs.iter().map(|x| x * x).collect()
        }
        fn backward(&self, out_adj: &[f64], in_adj: &mut [f64]) {
            // Inputs are not stored; the test only uses x = 2.
            for (g, a) in in_adj.iter_mut().zip(out_adj) {
                *g += 4.0 * a;
            }
        }
    }

    #[test]
    fn fused_node_backward_and_replay() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(2.0);
        let y = t.leaf(2.0);
        let out = t.record_fused(Box::new(Square), vec![x, y], &[4.0, 4.0]);
        assert_eq!(out[1].index(), out[0].index() + 1);
        let s = t.linear(&[(out[0], 1.0), (out[1], 3.0)], 0.5);
        let g = t.backward(s);
        assert_eq!(g.wrt(x), 4.0);
        assert_eq!(g.wrt(y), 12.0);
        assert_eq!(t.replay(), t.values().to_vec());

        t.corrupt_fused_adjoint("square", 2.0);
        assert_eq!(t.backward(s).wrt(x), 8.0);
    }

    #[test]
    fn works_in_single_precision() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(0.5);
        let c = t.cos(x);
        let y = t.mul(c, x);
        let g = t.backward(y).wrt(x);
        let expected = 0.5f32.cos() - 0.5 * 0.5f32.sin();
        assert!((g - expected).abs() < 1e-6);
    }
}
