//! Reverse-mode automatic differentiation over a small, fixed set of vector
//! primitives.
//!
//! A [`Tape`] records nodes in evaluation order. Each node owns a contiguous
//! slice of a shared value arena, so operands always live at lower offsets
//! than the node that consumes them and the backward sweep is a single pass
//! in reverse. Parameters are never copied onto the tape: `param` and
//! `affine` nodes read straight from the borrowed parameter slice and the
//! backward sweep scatters into a caller-owned gradient buffer.
//!
//! Supported primitives: `param`, `affine`, `add`, `sub`, `mul`, `scale`,
//! `tanh`, `sigmoid`, `concat`, `norm`, `pow_abs`, `sum`, `combine`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Base clamp for `pow_abs` so that `|x|^(beta-1)` stays finite near zero.
pub const POW_ABS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("unsupported primitive `{0}`")]
    UnsupportedPrimitive(String),
    #[error("non-finite value produced by node {node} ({primitive})")]
    NonFinite { node: usize, primitive: &'static str },
    #[error("non-finite entry {index} in {what}")]
    NonFiniteInput { what: &'static str, index: usize },
    #[error("shape error in {primitive}: {detail}")]
    Shape {
        primitive: &'static str,
        detail: String,
    },
    #[error("program output must be a scalar, got length {0}")]
    NotScalar(usize),
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Primitive kinds, addressable by name for data-driven programs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Input,
    Param,
    Affine,
    Add,
    Sub,
    Mul,
    Scale,
    Tanh,
    Sigmoid,
    Concat,
    Norm,
    PowAbs,
    Sum,
    Combine,
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::Input => "input",
            Primitive::Param => "param",
            Primitive::Affine => "affine",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale => "scale",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Concat => "concat",
            Primitive::Norm => "norm",
            Primitive::PowAbs => "pow_abs",
            Primitive::Sum => "sum",
            Primitive::Combine => "combine",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = AdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "input" => Primitive::Input,
            "param" => Primitive::Param,
            "affine" => Primitive::Affine,
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "scale" => Primitive::Scale,
            "tanh" => Primitive::Tanh,
            "sigmoid" => Primitive::Sigmoid,
            "concat" => Primitive::Concat,
            "norm" => Primitive::Norm,
            "pow_abs" => Primitive::PowAbs,
            "sum" => Primitive::Sum,
            "combine" => Primitive::Combine,
            other => return Err(AdError::UnsupportedPrimitive(other.to_string())),
        })
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Input,
    Param { offset: usize },
    Affine { x: Var, w: usize, b: Option<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Var, Var),
    Norm(Var),
    PowAbs(Var, f64),
    Sum(Var),
    Combine { start: usize, count: usize },
}

impl Op {
    fn primitive(&self) -> Primitive {
        match self {
            Op::Input => Primitive::Input,
            Op::Param { .. } => Primitive::Param,
            Op::Affine { .. } => Primitive::Affine,
            Op::Add(..) => Primitive::Add,
            Op::Sub(..) => Primitive::Sub,
            Op::Mul(..) => Primitive::Mul,
            Op::Scale(..) => Primitive::Scale,
            Op::Tanh(_) => Primitive::Tanh,
            Op::Sigmoid(_) => Primitive::Sigmoid,
            Op::Concat(..) => Primitive::Concat,
            Op::Norm(_) => Primitive::Norm,
            Op::PowAbs(..) => Primitive::PowAbs,
            Op::Sum(_) => Primitive::Sum,
            Op::Combine { .. } => Primitive::Combine,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    off: usize,
    len: usize,
}

/// Append-only record of a computation over a borrowed parameter vector.
pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
    vals: Vec<f64>,
    adj: Vec<f64>,
    terms: Vec<(Var, f64)>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            vals: Vec::new(),
            adj: Vec::new(),
            terms: Vec::new(),
        }
    }

    /// Drops all nodes but keeps the arenas' capacity.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.vals.clear();
        self.terms.clear();
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.index()];
        &self.vals[n.off..n.off + n.len]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.index()].len
    }

    /// Appends a node of `len` outputs computed by `fill(operand_values, out)`.
    /// `operand_values` is the arena prefix holding every earlier node.
    fn push<F>(&mut self, op: Op, len: usize, fill: F) -> Result<Var, AdError>
    where
        F: FnOnce(&[f64], &[f64], &mut [f64]),
    {
        let off = self.vals.len();
        self.vals.resize(off + len, 0.0);
        let (lo, hi) = self.vals.split_at_mut(off);
        fill(lo, self.params, hi);
        let id = self.nodes.len();
        if hi.iter().any(|x| !x.is_finite()) {
            self.vals.truncate(off);
            return Err(AdError::NonFinite {
                node: id,
                primitive: op.primitive().name(),
            });
        }
        self.nodes.push(Node { op, off, len });
        Ok(Var(id as u32))
    }

    fn range(&self, v: Var) -> std::ops::Range<usize> {
        let n = &self.nodes[v.index()];
        n.off..n.off + n.len
    }

    fn same_len(&self, p: Primitive, a: Var, b: Var) -> Result<usize, AdError> {
        let (la, lb) = (self.dim(a), self.dim(b));
        if la != lb {
            return Err(AdError::Shape {
                primitive: p.name(),
                detail: format!("operand lengths {la} and {lb} differ"),
            });
        }
        Ok(la)
    }

    pub fn input(&mut self, x: &[f64]) -> Result<Var, AdError> {
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(AdError::NonFiniteInput {
                what: "tape input",
                index,
            });
        }
        self.push(Op::Input, x.len(), |_, _, out| out.copy_from_slice(x))
    }

    /// A view of `params[offset..offset + len]`.
    pub fn param(&mut self, offset: usize, len: usize) -> Result<Var, AdError> {
        if offset + len > self.params.len() {
            return Err(AdError::Shape {
                primitive: "param",
                detail: format!(
                    "range {offset}..{} exceeds parameter count {}",
                    offset + len,
                    self.params.len()
                ),
            });
        }
        self.push(Op::Param { offset }, len, |_, p, out| {
            out.copy_from_slice(&p[offset..offset + len])
        })
    }

    /// `W x + b` with `W` (`rows x dim(x)`, row-major) at `params[w..]` and
    /// the optional bias at `params[b..]`.
    pub fn affine(&mut self, x: Var, w: usize, rows: usize, b: Option<usize>) -> Result<Var, AdError> {
        let cols = self.dim(x);
        let w_end = w + rows * cols;
        let b_end = b.map_or(0, |b| b + rows);
        if w_end > self.params.len() || b_end > self.params.len() {
            return Err(AdError::Shape {
                primitive: "affine",
                detail: format!(
                    "{rows}x{cols} map at offset {w} (bias {b:?}) exceeds parameter count {}",
                    self.params.len()
                ),
            });
        }
        let xr = self.range(x);
        self.push(Op::Affine { x, w, b }, rows, |lo, p, out| {
            let xv = &lo[xr];
            let wm = &p[w..w_end];
            for (i, o) in out.iter_mut().enumerate() {
                let row = &wm[i * cols..(i + 1) * cols];
                *o = b.map_or(0.0, |b| p[b + i]) + dot(row, xv);
            }
        })
    }

    fn zip2(&mut self, op: Op, p: Primitive, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<Var, AdError> {
        let len = self.same_len(p, a, b)?;
        let (ar, br) = (self.range(a), self.range(b));
        self.push(op, len, |lo, _, out| {
            for ((o, x), y) in out.iter_mut().zip(&lo[ar]).zip(&lo[br]) {
                *o = f(*x, *y);
            }
        })
    }

    fn map1(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Result<Var, AdError> {
        let ar = self.range(a);
        self.push(op, ar.len(), |lo, _, out| {
            for (o, x) in out.iter_mut().zip(&lo[ar]) {
                *o = f(*x);
            }
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.zip2(Op::Add(a, b), Primitive::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.zip2(Op::Sub(a, b), Primitive::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.zip2(Op::Mul(a, b), Primitive::Mul, a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        self.map1(Op::Scale(a, c), a, |x| c * x)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AdError> {
        self.map1(Op::Tanh(a), a, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AdError> {
        self.map1(Op::Sigmoid(a), a, sigmoid)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (ar, br) = (self.range(a), self.range(b));
        let la = ar.len();
        self.push(Op::Concat(a, b), la + br.len(), |lo, _, out| {
            out[..la].copy_from_slice(&lo[ar]);
            out[la..].copy_from_slice(&lo[br]);
        })
    }

    /// Euclidean norm; its derivative at the origin is taken to be zero.
    pub fn norm(&mut self, a: Var) -> Result<Var, AdError> {
        let ar = self.range(a);
        self.push(Op::Norm(a), 1, |lo, _, out| {
            out[0] = lo[ar].iter().map(|x| x * x).sum::<f64>().sqrt();
        })
    }

    /// Elementwise `max(|x|, POW_ABS_FLOOR)^beta`.
    pub fn pow_abs(&mut self, a: Var, beta: f64) -> Result<Var, AdError> {
        if !(beta > 0.0 && beta < 2.0) {
            return Err(AdError::Shape {
                primitive: "pow_abs",
                detail: format!("exponent {beta} outside (0, 2)"),
            });
        }
        self.map1(Op::PowAbs(a, beta), a, move |x| x.abs().max(POW_ABS_FLOOR).powf(beta))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        let ar = self.range(a);
        self.push(Op::Sum(a), 1, |lo, _, out| out[0] = lo[ar].iter().sum())
    }

    /// `sum_i c_i * v_i` over equal-length nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Result<Var, AdError> {
        let Some(&(first, _)) = terms.first() else {
            return Err(AdError::Shape {
                primitive: "combine",
                detail: "no terms".into(),
            });
        };
        let len = self.dim(first);
        for &(v, _) in terms {
            self.same_len(Primitive::Combine, first, v)?;
        }
        let start = self.terms.len();
        self.terms.extend_from_slice(terms);
        let ranges: Vec<_> = terms.iter().map(|&(v, c)| (self.range(v), c)).collect();
        let r = self.push(Op::Combine { start, count: terms.len() }, len, |lo, _, out| {
            for (r, c) in &ranges {
                for (o, x) in out.iter_mut().zip(&lo[r.clone()]) {
                    *o += c * x;
                }
            }
        });
        if r.is_err() {
            self.terms.truncate(start);
        }
        r
    }

    /// Applies a primitive by name, as used by data-driven [`Graph`] programs.
    pub fn apply(&mut self, prim: &str, args: &[Var], attr: &Attr) -> Result<Var, AdError> {
        let p: Primitive = prim.parse()?;
        let arity = |n: usize| -> Result<(), AdError> {
            if args.len() != n {
                return Err(AdError::Shape {
                    primitive: p.name(),
                    detail: format!("expected {n} operands, got {}", args.len()),
                });
            }
            Ok(())
        };
        let bad_attr = || AdError::Shape {
            primitive: p.name(),
            detail: format!("attribute {attr:?} does not fit"),
        };
        match p {
            Primitive::Input => Err(AdError::Shape {
                primitive: "input",
                detail: "inputs are bound by the program, not applied".into(),
            }),
            Primitive::Param => {
                arity(0)?;
                match *attr {
                    Attr::Range { offset, len } => self.param(offset, len),
                    _ => Err(bad_attr()),
                }
            }
            Primitive::Affine => {
                arity(1)?;
                match *attr {
                    Attr::Affine { w, rows, bias } => self.affine(args[0], w, rows, bias),
                    _ => Err(bad_attr()),
                }
            }
            Primitive::Add => arity(2).and_then(|_| self.add(args[0], args[1])),
            Primitive::Sub => arity(2).and_then(|_| self.sub(args[0], args[1])),
            Primitive::Mul => arity(2).and_then(|_| self.mul(args[0], args[1])),
            Primitive::Concat => arity(2).and_then(|_| self.concat(args[0], args[1])),
            Primitive::Tanh => arity(1).and_then(|_| self.tanh(args[0])),
            Primitive::Sigmoid => arity(1).and_then(|_| self.sigmoid(args[0])),
            Primitive::Norm => arity(1).and_then(|_| self.norm(args[0])),
            Primitive::Sum => arity(1).and_then(|_| self.sum(args[0])),
            Primitive::Scale => {
                arity(1)?;
                match *attr {
                    Attr::Scalar(c) => self.scale(args[0], c),
                    _ => Err(bad_attr()),
                }
            }
            Primitive::PowAbs => {
                arity(1)?;
                match *attr {
                    Attr::Scalar(beta) => self.pow_abs(args[0], beta),
                    _ => Err(bad_attr()),
                }
            }
            Primitive::Combine => match attr {
                Attr::Coeffs(c) if c.len() == args.len() => {
                    let terms: Vec<_> = args.iter().copied().zip(c.iter().copied()).collect();
                    self.combine(&terms)
                }
                _ => Err(bad_attr()),
            },
        }
    }

    /// Reverse sweep from `out`, seeded with `seed`, adding the parameter
    /// gradient into `grad` (which must have the parameter vector's length).
    pub fn backward_into(&mut self, out: Var, seed: f64, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        let end = self.range(out).end;
        self.adj.clear();
        self.adj.resize(end, 0.0);
        let out_range = self.range(out);
        self.adj[out_range].fill(seed);
        let params = self.params;
        for id in (0..=out.index()).rev() {
            let node = self.nodes[id];
            let (lo, hi) = self.adj.split_at_mut(node.off);
            let gy = &hi[..node.len];
            if gy.iter().all(|g| *g == 0.0) {
                continue;
            }
            let y = &self.vals[node.off..node.off + node.len];
            let vals = &self.vals;
            let nodes = &self.nodes;
            let rng = |v: Var| {
                let n = &nodes[v.index()];
                n.off..n.off + n.len
            };
            match node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    for (g, d) in grad[offset..offset + node.len].iter_mut().zip(gy) {
                        *g += d;
                    }
                }
                Op::Affine { x, w, b } => {
                    let xr = rng(x);
                    let cols = xr.len();
                    let xv = &vals[xr.clone()];
                    let gx = &mut lo[xr];
                    let wm = &params[w..w + node.len * cols];
                    for (i, &d) in gy.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let row = &wm[i * cols..(i + 1) * cols];
                        let grow = &mut grad[w + i * cols..w + (i + 1) * cols];
                        for j in 0..cols {
                            gx[j] += row[j] * d;
                            grow[j] += xv[j] * d;
                        }
                    }
                    if let Some(b) = b {
                        for (g, d) in grad[b..b + node.len].iter_mut().zip(gy) {
                            *g += d;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(lo, rng(a), gy, 1.0);
                    accumulate(lo, rng(b), gy, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(lo, rng(a), gy, 1.0);
                    accumulate(lo, rng(b), gy, -1.0);
                }
                Op::Mul(a, b) => {
                    let (ar, br) = (rng(a), rng(b));
                    for i in 0..node.len {
                        let (va, vb) = (vals[ar.start + i], vals[br.start + i]);
                        lo[ar.start + i] += gy[i] * vb;
                        lo[br.start + i] += gy[i] * va;
                    }
                }
                Op::Scale(a, c) => accumulate(lo, rng(a), gy, c),
                Op::Tanh(a) => {
                    let ar = rng(a);
                    for (i, g) in lo[ar].iter_mut().enumerate() {
                        *g += gy[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let ar = rng(a);
                    for (i, g) in lo[ar].iter_mut().enumerate() {
                        *g += gy[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Concat(a, b) => {
                    let (ar, br) = (rng(a), rng(b));
                    let la = ar.len();
                    accumulate(lo, ar, &gy[..la], 1.0);
                    accumulate(lo, br, &gy[la..], 1.0);
                }
                Op::Norm(a) => {
                    if y[0] > 0.0 {
                        let ar = rng(a);
                        let s = gy[0] / y[0];
                        for i in ar {
                            lo[i] += s * vals[i];
                        }
                    }
                }
                Op::PowAbs(a, beta) => {
                    let ar = rng(a);
                    for (i, k) in ar.enumerate() {
                        let x = vals[k];
                        if x.abs() > POW_ABS_FLOOR {
                            lo[k] += gy[i] * beta * x.abs().powf(beta - 1.0) * x.signum();
                        }
                    }
                }
                Op::Sum(a) => {
                    for g in &mut lo[rng(a)] {
                        *g += gy[0];
                    }
                }
                Op::Combine { start, count } => {
                    for &(v, c) in &self.terms[start..start + count] {
                        accumulate(lo, rng(v), gy, c);
                    }
                }
            }
        }
    }
}

#[inline]
fn accumulate(lo: &mut [f64], r: std::ops::Range<usize>, gy: &[f64], c: f64) {
    for (g, d) in lo[r].iter_mut().zip(gy) {
        *g += c * d;
    }
}

/// Dot product with four independent partial sums, so the additions do not
/// form one serial dependency chain.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A scalar-valued computation that can be recorded on a tape.
pub trait Program {
    fn record(&self, tape: &mut Tape<'_>, inputs: &[&[f64]]) -> Result<Var, AdError>;
}

impl<F> Program for F
where
    F: for<'a> Fn(&mut Tape<'a>, &[&[f64]]) -> Result<Var, AdError>,
{
    fn record(&self, tape: &mut Tape<'_>, inputs: &[&[f64]]) -> Result<Var, AdError> {
        self(tape, inputs)
    }
}

/// Attribute payload of a [`Step`].
#[derive(Clone, Debug, PartialEq)]
pub enum Attr {
    None,
    Range { offset: usize, len: usize },
    Affine { w: usize, rows: usize, bias: Option<usize> },
    Scalar(f64),
    Coeffs(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub prim: String,
    /// Operand slots: `0..n_inputs` are the bound inputs, later slots are
    /// the outputs of earlier steps.
    pub args: Vec<usize>,
    pub attr: Attr,
}

impl Step {
    pub fn new(prim: &str, args: &[usize], attr: Attr) -> Self {
        Step {
            prim: prim.to_string(),
            args: args.to_vec(),
            attr,
        }
    }
}

/// A program described as data: a list of named primitive applications.
/// The last step is the output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Graph {
    pub steps: Vec<Step>,
}

impl Program for Graph {
    fn record(&self, tape: &mut Tape<'_>, inputs: &[&[f64]]) -> Result<Var, AdError> {
        let mut slots: Vec<Var> = inputs.iter().map(|x| tape.input(x)).collect::<Result<_, _>>()?;
        for step in &self.steps {
            let args = step
                .args
                .iter()
                .map(|&i| {
                    slots.get(i).copied().ok_or_else(|| AdError::Shape {
                        primitive: "graph",
                        detail: format!("operand slot {i} is not defined yet"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            slots.push(tape.apply(&step.prim, &args, &step.attr)?);
        }
        if self.steps.is_empty() {
            return Err(AdError::Shape {
                primitive: "graph",
                detail: "empty program".into(),
            });
        }
        Ok(*slots.last().expect("non-empty"))
    }
}

fn check_params(params: &[f64]) -> Result<(), AdError> {
    match params.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(AdError::NonFiniteInput {
            what: "parameter vector",
            index,
        }),
        None => Ok(()),
    }
}

/// Forward evaluation only.
pub fn forward<P: Program + ?Sized>(program: &P, params: &[f64], inputs: &[&[f64]]) -> Result<f64, AdError> {
    check_params(params)?;
    let mut tape = Tape::new(params);
    let out = program.record(&mut tape, inputs)?;
    match tape.dim(out) {
        1 => Ok(tape.scalar(out)),
        n => Err(AdError::NotScalar(n)),
    }
}

/// Value and exact parameter gradient of a scalar program.
pub fn forward_backward<P: Program + ?Sized>(
    program: &P,
    params: &[f64],
    inputs: &[&[f64]],
) -> Result<(f64, Vec<f64>), AdError> {
    check_params(params)?;
    let mut tape = Tape::new(params);
    let out = program.record(&mut tape, inputs)?;
    if tape.dim(out) != 1 {
        return Err(AdError::NotScalar(tape.dim(out)));
    }
    let mut grad = vec![0.0; params.len()];
    tape.backward_into(out, 1.0, &mut grad);
    Ok((tape.scalar(out), grad))
}

/// Largest `|analytic - central difference| / max(1, |analytic|)` over all
/// parameter coordinates.
pub fn grad_check<P: Program + ?Sized>(
    program: &P,
    params: &[f64],
    inputs: &[&[f64]],
    step: f64,
) -> Result<f64, AdError> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let (_, grad) = forward_backward(program, params, inputs)?;
    let mut probe = params.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let up = forward(program, &probe, inputs)?;
        probe[i] = params[i] - step;
        let down = forward(program, &probe, inputs)?;
        probe[i] = params[i];
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(1.0));
    }
    Ok(worst)
}
