use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{ParamId, ParamStore, Precision, Tensor};
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    /// One row of a parameter matrix, gathered without copying the table.
    LookupRow { param: ParamId, row: usize, dim: usize },
    /// out = W x with W: [r,c], x: [c].
    MatVec { w: usize, x: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    /// out = x * s with s scalar-shaped.
    MulScalar { x: usize, s: usize },
    Scale { x: usize, k: f64 },
    Concat { parts: Vec<usize> },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Relu { x: usize },
    SumSet { parts: Vec<usize> },
    SumElements { x: usize },
    /// Inverted dropout; mask entries are 0 or 1/(1-rate).
    Dropout { x: usize, mask: Vec<f64> },
    Softmax { x: usize },
    /// out = -ln(p[class]) with p a probability vector.
    CrossEntropy { p: usize, class: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    tensor: Tensor,
}

/// A Wengert tape: nodes are appended in construction order (inputs always
/// precede their consumers) and `backward` walks them in exact reverse order.
///
/// A tape is confined to a single execution context; it is rebuilt for every
/// instance. Frozen parameters may be shared read-only across tapes.
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
    train: bool,
    rng: ChaCha8Rng,
}

impl Tape {
    /// Tape for inference or loss evaluation (dropout disabled).
    pub fn new(precision: Precision) -> Self {
        Tape::with_seed(precision, false, 0)
    }

    /// Tape with dropout active, drawing masks from the given seed.
    pub fn for_training(precision: Precision, seed: u64) -> Self {
        Tape::with_seed(precision, true, seed)
    }

    pub fn with_seed(precision: Precision, train: bool, seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            precision,
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// One uniform draw in [0,1) from the tape's seeded stream. Model code
    /// uses this for structured dropout so that a fixed seed fixes the run.
    pub fn rand_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    /// Gradient of a node, if any flowed to it during `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad()
    }

    /// Gradient of a node, with zeros standing in for "no gradient flowed".
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        match self.nodes[v.0].tensor.grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.nodes[v.0].tensor.numel()],
        }
    }

    fn push(&mut self, op: Op, mut tensor: Tensor) -> Var {
        self.precision.quantize_all(tensor.values_mut());
        let id = self.nodes.len();
        self.nodes.push(Node { op, tensor });
        Var(id)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes[id].tensor.requires_grad()
    }

    // ── Graph inputs ─────────────────────────────────────────────────

    /// A free input tensor (no gradient unless `requires_grad` is set).
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(Op::Leaf, tensor)
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.leaf(Tensor::vector(values))
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.leaf(Tensor::zeros(vec![len]))
    }

    /// Register a parameter as a leaf. Values are snapshotted from the store;
    /// gradients flow back via [`Tape::export_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let entry = store.get(id);
        let tensor = Tensor::new(entry.shape().to_vec(), entry.values().to_vec())
            .expect("store tensors are shape-consistent")
            .with_requires_grad(entry.requires_grad());
        self.push(Op::Param(id), tensor)
    }

    /// Gather one row of a parameter matrix without copying the whole table.
    pub fn lookup_row(
        &mut self,
        store: &ParamStore,
        id: ParamId,
        row: usize,
    ) -> Result<Var, AutodiffError> {
        let entry = store.get(id);
        let shape = entry.shape();
        if shape.len() != 2 {
            return Err(AutodiffError::BadShape {
                primitive: "lookup_row",
                expected: "a 2-D table",
                got: shape.to_vec(),
            });
        }
        let (rows, dim) = (shape[0], shape[1]);
        if row >= rows {
            return Err(AutodiffError::RowOutOfRange { row, rows });
        }
        let values = entry.values()[row * dim..(row + 1) * dim].to_vec();
        let tensor = Tensor::vector(values).with_requires_grad(entry.requires_grad());
        Ok(self.push(Op::LookupRow { param: id, row, dim }, tensor))
    }

    // ── Primitives ───────────────────────────────────────────────────

    /// Matrix-vector product.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, AutodiffError> {
        let ws = self.shape(w).to_vec();
        let xs = self.shape(x).to_vec();
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(AutodiffError::ShapeMismatch {
                primitive: "matvec",
                lhs: ws,
                rhs: xs,
            });
        }
        let (r, c) = (ws[0], ws[1]);
        let wv = self.value(w);
        let xv = self.value(x);
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &wv[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(xv) {
                acc += a * b;
            }
            out[i] = acc;
        }
        let requires = self.requires(w.0) || self.requires(x.0);
        Ok(self.push(
            Op::MatVec { w: w.0, x: x.0 },
            Tensor::vector(out).with_requires_grad(requires),
        ))
    }

    fn elementwise2(
        &mut self,
        primitive: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                primitive,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let values: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let requires = self.requires(a.0) || self.requires(b.0);
        let tensor = Tensor::new(shape, values)
            .expect("elementwise shape")
            .with_requires_grad(requires);
        Ok(self.push(op, tensor))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise2("add", a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise2("mul", a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    /// Multiply a tensor by a scalar-shaped node.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, AutodiffError> {
        if self.shape(s) != [1] {
            return Err(AutodiffError::BadShape {
                primitive: "mul_scalar",
                expected: "a scalar multiplier of shape [1]",
                got: self.shape(s).to_vec(),
            });
        }
        let k = self.value(s)[0];
        let values: Vec<f64> = self.value(x).iter().map(|v| v * k).collect();
        let shape = self.shape(x).to_vec();
        let requires = self.requires(x.0) || self.requires(s.0);
        let tensor = Tensor::new(shape, values)
            .expect("mul_scalar shape")
            .with_requires_grad(requires);
        Ok(self.push(Op::MulScalar { x: x.0, s: s.0 }, tensor))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let values: Vec<f64> = self.value(x).iter().map(|v| v * k).collect();
        let shape = self.shape(x).to_vec();
        let requires = self.requires(x.0);
        let tensor = Tensor::new(shape, values)
            .expect("scale shape")
            .with_requires_grad(requires);
        self.push(Op::Scale { x: x.0, k }, tensor)
    }

    /// Concatenate 1-D vectors in order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let mut values = Vec::new();
        let mut requires = false;
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(AutodiffError::BadShape {
                    primitive: "concat",
                    expected: "1-D vectors",
                    got: self.shape(p).to_vec(),
                });
            }
            values.extend_from_slice(self.value(p));
            requires |= self.requires(p.0);
        }
        let tensor = Tensor::vector(values).with_requires_grad(requires);
        Ok(self.push(
            Op::Concat {
                parts: parts.iter().map(|v| v.0).collect(),
            },
            tensor,
        ))
    }

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Var {
        let values: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let requires = self.requires(x.0);
        let tensor = Tensor::new(shape, values)
            .expect("unary shape")
            .with_requires_grad(requires);
        self.push(op, tensor)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid { x: x.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh { x: x.0 })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu { x: x.0 })
    }

    /// Sum a non-empty set of same-shaped tensors. Operands are added in the
    /// order given; callers that need order-exact invariance sort first.
    pub fn sum_set(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::EmptySum)?;
        let shape = self.shape(first).to_vec();
        let mut values = self.value(first).to_vec();
        let mut requires = self.requires(first.0);
        for &p in &parts[1..] {
            if self.shape(p) != shape.as_slice() {
                return Err(AutodiffError::ShapeMismatch {
                    primitive: "sum_set",
                    lhs: shape,
                    rhs: self.shape(p).to_vec(),
                });
            }
            for (acc, v) in values.iter_mut().zip(self.value(p)) {
                *acc += v;
            }
            requires |= self.requires(p.0);
        }
        let tensor = Tensor::new(shape, values)
            .expect("sum_set shape")
            .with_requires_grad(requires);
        Ok(self.push(
            Op::SumSet {
                parts: parts.iter().map(|v| v.0).collect(),
            },
            tensor,
        ))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_elements(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).iter().sum();
        let requires = self.requires(x.0);
        let tensor = Tensor::scalar(total).with_requires_grad(requires);
        self.push(Op::SumElements { x: x.0 }, tensor)
    }

    /// Inverted dropout: at train time each element is kept with probability
    /// 1-rate and scaled by 1/(1-rate); outside training this is the
    /// identity and no node is recorded.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidDropoutRate(rate));
        }
        if !self.train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.nodes[x.0].tensor.numel())
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let values: Vec<f64> = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let requires = self.requires(x.0);
        let tensor = Tensor::new(shape, values)
            .expect("dropout shape")
            .with_requires_grad(requires);
        Ok(self.push(Op::Dropout { x: x.0, mask }, tensor))
    }

    /// Numerically stable softmax over a 1-D vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        if self.shape(x).len() != 1 || self.value(x).is_empty() {
            return Err(AutodiffError::BadShape {
                primitive: "softmax",
                expected: "a non-empty 1-D vector",
                got: self.shape(x).to_vec(),
            });
        }
        let xs = self.value(x);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xs.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let values: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        let requires = self.requires(x.0);
        let tensor = Tensor::vector(values).with_requires_grad(requires);
        Ok(self.push(Op::Softmax { x: x.0 }, tensor))
    }

    /// Negative log-likelihood of a class under a probability vector
    /// (typically the output of [`Tape::softmax`]).
    pub fn cross_entropy(&mut self, p: Var, class: usize) -> Result<Var, AutodiffError> {
        let pv = self.value(p);
        if class >= pv.len() {
            return Err(AutodiffError::ClassOutOfRange {
                class,
                len: pv.len(),
            });
        }
        let loss = -pv[class].max(f64::MIN_POSITIVE).ln();
        let requires = self.requires(p.0);
        let tensor = Tensor::scalar(loss).with_requires_grad(requires);
        Ok(self.push(Op::CrossEntropy { p: p.0, class }, tensor))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Every requires-grad tensor reachable
    /// from the loss ends up with a populated gradient buffer; repeated calls
    /// without clearing accumulate one full gradient per call.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.nodes[loss.0].tensor.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        // Propagate in a per-call scratch so earlier calls' buffers are not
        // re-propagated, then fold the scratch into the tensors.
        let mut scratch: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        scratch[loss.0] = Some(vec![1.0]);
        for i in (0..self.nodes.len()).rev() {
            if scratch[i].is_none() || !self.nodes[i].tensor.requires_grad() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let g = scratch[i].clone().unwrap();
            self.backward_op(&mut scratch, i, &op, &g);
        }
        for (i, g) in scratch.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[i].tensor.requires_grad() || i == loss.0 {
                    self.nodes[i].tensor.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn send(&self, scratch: &mut [Option<Vec<f64>>], target: usize, g: &[f64]) {
        if !self.requires(target) {
            return;
        }
        match &mut scratch[target] {
            Some(buf) => {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            }
            None => scratch[target] = Some(g.to_vec()),
        }
    }

    fn backward_op(&self, scratch: &mut [Option<Vec<f64>>], node: usize, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf | Op::Param(_) | Op::LookupRow { .. } => {}
            Op::MatVec { w, x } => {
                let (r, c) = {
                    let ws = self.nodes[*w].tensor.shape();
                    (ws[0], ws[1])
                };
                if self.requires(*w) {
                    // dW = g ⊗ x
                    let xv = self.nodes[*x].tensor.values().to_vec();
                    let mut dw = vec![0.0; r * c];
                    for i in 0..r {
                        let gi = g[i];
                        for j in 0..c {
                            dw[i * c + j] = gi * xv[j];
                        }
                    }
                    self.send(scratch, *w, &dw);
                }
                if self.requires(*x) {
                    // dx = Wᵀ g
                    let wv = self.nodes[*w].tensor.values().to_vec();
                    let mut dx = vec![0.0; c];
                    for i in 0..r {
                        let gi = g[i];
                        for j in 0..c {
                            dx[j] += wv[i * c + j] * gi;
                        }
                    }
                    self.send(scratch, *x, &dx);
                }
            }
            Op::Add { a, b } => {
                self.send(scratch, *a, g);
                self.send(scratch, *b, g);
            }
            Op::Mul { a, b } => {
                if self.requires(*a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[*b].tensor.values())
                        .map(|(gi, bv)| gi * bv)
                        .collect();
                    self.send(scratch, *a, &da);
                }
                if self.requires(*b) {
                    let db: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[*a].tensor.values())
                        .map(|(gi, av)| gi * av)
                        .collect();
                    self.send(scratch, *b, &db);
                }
            }
            Op::MulScalar { x, s } => {
                if self.requires(*x) {
                    let k = self.nodes[*s].tensor.values()[0];
                    let dx: Vec<f64> = g.iter().map(|gi| gi * k).collect();
                    self.send(scratch, *x, &dx);
                }
                if self.requires(*s) {
                    let ds: f64 = g
                        .iter()
                        .zip(self.nodes[*x].tensor.values())
                        .map(|(gi, xv)| gi * xv)
                        .sum();
                    self.send(scratch, *s, &[ds]);
                }
            }
            Op::Scale { x, k } => {
                let dx: Vec<f64> = g.iter().map(|gi| gi * k).collect();
                self.send(scratch, *x, &dx);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].tensor.numel();
                    let slice = g[offset..offset + len].to_vec();
                    self.send(scratch, p, &slice);
                    offset += len;
                }
            }
            Op::Sigmoid { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[node].tensor.values())
                    .map(|(gi, y)| gi * y * (1.0 - y))
                    .collect();
                self.send(scratch, *x, &dx);
            }
            Op::Tanh { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[node].tensor.values())
                    .map(|(gi, y)| gi * (1.0 - y * y))
                    .collect();
                self.send(scratch, *x, &dx);
            }
            Op::Relu { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[*x].tensor.values())
                    .map(|(gi, v)| if *v > 0.0 { *gi } else { 0.0 })
                    .collect();
                self.send(scratch, *x, &dx);
            }
            Op::SumSet { parts } => {
                for &p in parts {
                    self.send(scratch, p, g);
                }
            }
            Op::SumElements { x } => {
                let dx = vec![g[0]; self.nodes[*x].tensor.numel()];
                self.send(scratch, *x, &dx);
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<f64> = g.iter().zip(mask).map(|(gi, m)| gi * m).collect();
                self.send(scratch, *x, &dx);
            }
            Op::Softmax { x } => {
                let y = self.nodes[node].tensor.values();
                let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[node].tensor.values())
                    .map(|(gi, yi)| yi * (gi - dot))
                    .collect();
                self.send(scratch, *x, &dx);
            }
            Op::CrossEntropy { p, class } => {
                if self.requires(*p) {
                    let pv = self.nodes[*p].tensor.values();
                    let mut dp = vec![0.0; pv.len()];
                    dp[*class] = -g[0] / pv[*class].max(f64::MIN_POSITIVE);
                    self.send(scratch, *p, &dp);
                }
            }
        }
    }

    /// Accumulate the gradients of parameter leaves into the store.
    pub fn export_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            let Some(g) = node.tensor.grad() else { continue };
            match &node.op {
                Op::Param(id) => {
                    if store.get(*id).requires_grad() {
                        store.get_mut(*id).accumulate_grad(g);
                    }
                }
                Op::LookupRow { param, row, dim } => {
                    if store.get(*param).requires_grad() {
                        store.get_mut(*param).accumulate_grad_rows(*row, *dim, g);
                    }
                }
                _ => {}
            }
        }
    }
}
