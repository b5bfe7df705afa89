//! Minimal reverse-mode automatic differentiation for fully-connected
//! classifiers.
//!
//! A [`Graph`] is an append-only list of nodes; every op may only reference
//! nodes created before it, so creation order is a topological order and the
//! graph is acyclic by construction. `forward` evaluates nodes front to back,
//! `backward` walks them once in reverse.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure_finite, Error, Result};

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Some((r, c)),
            _ => None,
        }
    }
}

/// `c = op(a) · op(b) + beta · c` where `a` is `m×k` and `b` is `k×n` after
/// the optional transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // Stored a is m×k (row stride k) or, transposed, k×m (row stride m).
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length asserts above bound every index the strided
    // kernel touches: a[i*rsa + p*csa] for i < m, p < k, and likewise for
    // b and c.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    LogSoftmax(NodeId),
    /// Mean negative log-likelihood of integer labels under row-wise
    /// log-probabilities.
    Nll { log_probs: NodeId, labels: NodeId },
    Add(NodeId, NodeId),
    /// `½ Σ x²`.
    HalfSqNorm(NodeId),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Input | Op::Param => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) => vec![a, b],
            Op::Relu(a) | Op::LogSoftmax(a) | Op::HalfSqNorm(a) => vec![a],
            Op::Nll { log_probs, labels } => vec![log_probs, labels],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    name: String,
    value: Option<Tensor>,
    adjoint: Option<Tensor>,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
    loss: Option<NodeId>,
    evaluated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, name: String) -> NodeId {
        let needs_grad = match &op {
            Op::Param => true,
            Op::Input => false,
            other => other
                .inputs()
                .iter()
                .any(|id| self.nodes[id.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            name,
            value: None,
            adjoint: None,
            needs_grad,
        });
        self.evaluated = false;
        NodeId(self.nodes.len() - 1)
    }

    fn check_id(&self, id: NodeId) {
        assert!(id.0 < self.nodes.len(), "node id from a different graph");
    }

    fn auto_name(&self, op: &str) -> String {
        format!("{op}#{}", self.nodes.len())
    }

    /// Placeholder bound at each [`Graph::forward`] call.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input, name.to_string())
    }

    /// Trainable tensor. Parameters flatten in creation order.
    pub fn param(&mut self, name: &str, init: Tensor) -> NodeId {
        let id = self.push(Op::Param, name.to_string());
        self.nodes[id.0].value = Some(init);
        self.params.push(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_id(a);
        self.check_id(b);
        let name = self.auto_name("matmul");
        self.push(Op::MatMul(a, b), name)
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        self.check_id(x);
        self.check_id(bias);
        let name = self.auto_name("add_bias");
        self.push(Op::AddBias(x, bias), name)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.check_id(x);
        let name = self.auto_name("relu");
        self.push(Op::Relu(x), name)
    }

    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        self.check_id(x);
        let name = self.auto_name("log_softmax");
        self.push(Op::LogSoftmax(x), name)
    }

    pub fn nll(&mut self, log_probs: NodeId, labels: NodeId) -> NodeId {
        self.check_id(log_probs);
        self.check_id(labels);
        let name = self.auto_name("nll");
        self.push(Op::Nll { log_probs, labels }, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_id(a);
        self.check_id(b);
        let name = self.auto_name("add");
        self.push(Op::Add(a, b), name)
    }

    pub fn half_sq_norm(&mut self, x: NodeId) -> NodeId {
        self.check_id(x);
        let name = self.auto_name("half_sq_norm");
        self.push(Op::HalfSqNorm(x), name)
    }

    pub fn set_loss(&mut self, id: NodeId) {
        self.check_id(id);
        self.loss = Some(id);
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|n| n.value.as_ref())
    }

    pub fn num_params(&self) -> usize {
        self.params
            .iter()
            .map(|id| self.nodes[id.0].value.as_ref().map_or(0, Tensor::len))
            .sum()
    }

    /// Parameters concatenated in creation order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for id in &self.params {
            out.extend_from_slice(self.nodes[id.0].value.as_ref().unwrap().data());
        }
        out
    }

    pub fn set_params_flat(&mut self, theta: &[f64]) -> Result<()> {
        let total = self.num_params();
        if theta.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                found: theta.len(),
            });
        }
        let mut offset = 0;
        for id in &self.params {
            let t = self.nodes[id.0].value.as_mut().unwrap();
            let n = t.len();
            t.data.copy_from_slice(&theta[offset..offset + n]);
            offset += n;
        }
        self.evaluated = false;
        Ok(())
    }

    fn shape_err(&self, id: NodeId, detail: String) -> Error {
        Error::Shape {
            node: self.nodes[id.0].name.clone(),
            detail,
        }
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("inputs are evaluated before their consumers")
    }

    /// Binds the placeholders and evaluates every node, returning the loss.
    pub fn forward(&mut self, feeds: Vec<(NodeId, Tensor)>) -> Result<f64> {
        let loss = self
            .loss
            .ok_or_else(|| Error::config("graph has no loss node"))?;
        for node in &mut self.nodes {
            if matches!(node.op, Op::Input) {
                node.value = None;
            }
            node.adjoint = None;
        }
        self.evaluated = false;
        for (id, t) in feeds {
            self.check_id(id);
            if !matches!(self.nodes[id.0].op, Op::Input) {
                return Err(Error::config(format!(
                    "`{}` is not an input placeholder",
                    self.nodes[id.0].name
                )));
            }
            self.nodes[id.0].value = Some(t);
        }

        for i in 0..self.nodes.len() {
            let id = NodeId(i);
            let value = match self.nodes[i].op.clone() {
                Op::Input => {
                    if self.nodes[i].value.is_none() {
                        return Err(Error::UnboundInput(self.nodes[i].name.clone()));
                    }
                    continue;
                }
                Op::Param => continue,
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.val(a), self.val(b));
                    let (Some((m, k)), Some((k2, n))) = (ta.dims2(), tb.dims2()) else {
                        return Err(self.shape_err(
                            id,
                            format!("matmul needs 2-D operands, got {:?} and {:?}", ta.shape, tb.shape),
                        ));
                    };
                    if k != k2 {
                        return Err(self.shape_err(
                            id,
                            format!("inner dimensions differ: {:?} x {:?}", ta.shape, tb.shape),
                        ));
                    }
                    let mut out = vec![0.0; m * n];
                    gemm(m, k, n, &ta.data, false, &tb.data, false, 0.0, &mut out);
                    Tensor {
                        shape: vec![m, n],
                        data: out,
                    }
                }
                Op::AddBias(x, b) => {
                    let (tx, tb) = (self.val(x), self.val(b));
                    let Some((_, n)) = tx.dims2() else {
                        return Err(self.shape_err(id, format!("expected 2-D input, got {:?}", tx.shape)));
                    };
                    if tb.shape != [n] {
                        return Err(self.shape_err(
                            id,
                            format!("bias shape {:?} does not match {} columns", tb.shape, n),
                        ));
                    }
                    let mut out = tx.clone();
                    for row in out.data.chunks_exact_mut(n.max(1)) {
                        row.iter_mut().zip(&tb.data).for_each(|(o, b)| *o += b);
                    }
                    out
                }
                Op::Relu(x) => {
                    let mut out = self.val(x).clone();
                    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
                    out
                }
                Op::LogSoftmax(x) => {
                    let tx = self.val(x);
                    let Some((_, n)) = tx.dims2() else {
                        return Err(self.shape_err(id, format!("expected 2-D input, got {:?}", tx.shape)));
                    };
                    let mut out = tx.clone();
                    for row in out.data.chunks_exact_mut(n.max(1)) {
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                        row.iter_mut().for_each(|v| *v -= lse);
                    }
                    out
                }
                Op::Nll { log_probs, labels } => {
                    let (lp, lab) = (self.val(log_probs), self.val(labels));
                    let Some((m, c)) = lp.dims2() else {
                        return Err(self.shape_err(id, format!("expected 2-D log-probabilities, got {:?}", lp.shape)));
                    };
                    if lab.shape != [m] || m == 0 {
                        return Err(self.shape_err(
                            id,
                            format!("labels shape {:?} does not match batch of {}", lab.shape, m),
                        ));
                    }
                    let mut total = 0.0;
                    for (row, &y) in lp.data.chunks_exact(c).zip(&lab.data) {
                        let class = label_index(y, c).ok_or_else(|| {
                            self.shape_err(id, format!("label {y} is not a class index below {c}"))
                        })?;
                        total -= row[class];
                    }
                    Tensor::scalar(total / m as f64)
                }
                Op::Add(a, b) => {
                    let (ta, tb) = (self.val(a), self.val(b));
                    if ta.shape != tb.shape {
                        return Err(self.shape_err(
                            id,
                            format!("operand shapes differ: {:?} vs {:?}", ta.shape, tb.shape),
                        ));
                    }
                    let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
                    Tensor {
                        shape: ta.shape.clone(),
                        data,
                    }
                }
                Op::HalfSqNorm(x) => {
                    Tensor::scalar(0.5 * self.val(x).data.iter().map(|v| v * v).sum::<f64>())
                }
            };
            self.nodes[i].value = Some(value);
        }

        let out = self.val(loss);
        if out.len() != 1 {
            return Err(self.shape_err(loss, format!("loss must be a scalar, got {:?}", out.shape)));
        }
        let loss_value = out.data[0];
        self.evaluated = true;
        Ok(loss_value)
    }

    fn accumulate(&mut self, id: NodeId, grad: Tensor) {
        let node = &mut self.nodes[id.0];
        match &mut node.adjoint {
            Some(acc) => acc.data.iter_mut().zip(&grad.data).for_each(|(a, g)| *a += g),
            slot @ None => *slot = Some(grad),
        }
    }

    /// Gradient of the loss w.r.t. every parameter, flattened like
    /// [`Graph::params_flat`].
    pub fn backward(&mut self) -> Result<Vec<f64>> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        let loss = self.loss.expect("forward checked the loss node");
        for node in &mut self.nodes {
            node.adjoint = None;
        }
        self.nodes[loss.0].adjoint = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad || matches!(self.nodes[i].op, Op::Param) {
                continue;
            }
            // Intermediate adjoints are dropped once propagated; parameter
            // adjoints stay for collection below.
            let Some(upstream) = self.nodes[i].adjoint.take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            let wants = |g: &Graph, id: NodeId| g.nodes[id.0].needs_grad;
            match op {
                Op::Input | Op::Param => unreachable!(),
                Op::MatMul(a, b) => {
                    let (m, k) = self.val(a).dims2().unwrap();
                    let n = self.val(b).shape[1];
                    if wants(self, a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, &upstream.data, false, &self.val(b).data, true, 0.0, &mut da);
                        self.accumulate(a, Tensor { shape: vec![m, k], data: da });
                    }
                    if wants(self, b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, &self.val(a).data, true, &upstream.data, false, 0.0, &mut db);
                        self.accumulate(b, Tensor { shape: vec![k, n], data: db });
                    }
                }
                Op::AddBias(x, b) => {
                    if wants(self, b) {
                        let n = self.val(b).len();
                        let mut db = vec![0.0; n];
                        for row in upstream.data.chunks_exact(n.max(1)) {
                            db.iter_mut().zip(row).for_each(|(d, u)| *d += u);
                        }
                        self.accumulate(b, Tensor::vector(db));
                    }
                    if wants(self, x) {
                        self.accumulate(x, upstream);
                    }
                }
                Op::Relu(x) => {
                    if wants(self, x) {
                        // Subgradient at exactly zero is taken as zero.
                        let mut dx = upstream;
                        for (d, &v) in dx.data.iter_mut().zip(&self.val(x).data) {
                            if v <= 0.0 {
                                *d = 0.0;
                            }
                        }
                        self.accumulate(x, dx);
                    }
                }
                Op::LogSoftmax(x) => {
                    if wants(self, x) {
                        let out = self.nodes[i].value.as_ref().unwrap();
                        let n = out.shape[1];
                        let mut dx = upstream;
                        for (drow, orow) in dx.data.chunks_exact_mut(n.max(1)).zip(out.data.chunks_exact(n.max(1))) {
                            let s: f64 = drow.iter().sum();
                            for (d, o) in drow.iter_mut().zip(orow) {
                                *d -= o.exp() * s;
                            }
                        }
                        self.accumulate(x, dx);
                    }
                }
                Op::Nll { log_probs, labels } => {
                    if wants(self, log_probs) {
                        let lp = self.val(log_probs);
                        let (m, c) = lp.dims2().unwrap();
                        let scale = upstream.data[0] / m as f64;
                        let mut d = Tensor::zeros(vec![m, c]);
                        for (r, &y) in self.val(labels).data.iter().enumerate() {
                            let class = label_index(y, c).expect("validated in forward");
                            d.data[r * c + class] = -scale;
                        }
                        self.accumulate(log_probs, d);
                    }
                }
                Op::Add(a, b) => {
                    if wants(self, a) {
                        self.accumulate(a, upstream.clone());
                    }
                    if wants(self, b) {
                        self.accumulate(b, upstream);
                    }
                }
                Op::HalfSqNorm(x) => {
                    if wants(self, x) {
                        let mut dx = self.val(x).clone();
                        let s = upstream.data[0];
                        dx.data.iter_mut().for_each(|v| *v *= s);
                        self.accumulate(x, dx);
                    }
                }
            }
        }

        let mut grad = Vec::with_capacity(self.num_params());
        for id in &self.params {
            let node = &self.nodes[id.0];
            match node.adjoint.as_ref() {
                Some(a) => grad.extend_from_slice(&a.data),
                None => grad.extend(std::iter::repeat_n(0.0, node.value.as_ref().unwrap().len())),
            }
        }
        Ok(grad)
    }
}

fn label_index(y: f64, classes: usize) -> Option<usize> {
    if y >= 0.0 && y.fract() == 0.0 && (y as usize) < classes {
        Some(y as usize)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// No nonlinearity between layers (a linear classifier when there are
    /// no hidden layers).
    Identity,
}

/// Gaussian initialisation of every weight and bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub mean: f64,
    pub stddev: f64,
    pub seed: u64,
}

/// Fully-connected classifier with mean NLL loss.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub graph: Graph,
    pub input: NodeId,
    pub labels: NodeId,
    pub logits: NodeId,
    pub log_probs: NodeId,
    pub loss: NodeId,
    layer_sizes: Vec<usize>,
}

/// Loss and accuracy count of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEval {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

impl Mlp {
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.graph.num_params()
    }

    fn run(&mut self, theta: &[f64], features: Tensor, labels: Tensor) -> Result<BatchEval> {
        self.graph.set_params_flat(theta)?;
        let count = labels.len();
        let loss = self
            .graph
            .forward(vec![(self.input, features), (self.labels, labels)])?;
        let lp = self.graph.value(self.log_probs).unwrap();
        let c = self.num_classes();
        let labels = self.graph.value(self.labels).unwrap();
        let correct = lp
            .data()
            .chunks_exact(c)
            .zip(labels.data())
            .filter(|(row, &y)| argmax(row) == y as usize)
            .count();
        Ok(BatchEval {
            loss,
            correct,
            count,
        })
    }

    /// Forward pass only.
    pub fn evaluate(&mut self, theta: &[f64], features: Tensor, labels: Tensor) -> Result<BatchEval> {
        self.run(theta, features, labels)
    }

    /// Forward and backward pass; returns the batch evaluation and the
    /// flattened gradient.
    pub fn loss_and_grad(
        &mut self,
        theta: &[f64],
        features: Tensor,
        labels: Tensor,
    ) -> Result<(BatchEval, Vec<f64>)> {
        let eval = self.run(theta, features, labels)?;
        let grad = self.graph.backward()?;
        Ok((eval, grad))
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Builds `input → [Linear → act] × hidden → Linear → log-softmax → NLL`.
///
/// `layer_sizes` lists the input width, every hidden width, and the class
/// count. Weights (`in × out`, row-major) and biases are drawn from
/// `N(mean, stddev²)` in layer order from a ChaCha8 stream seeded by
/// `init.seed`.
pub fn build_mlp(layer_sizes: &[usize], activation: Activation, init: InitSpec) -> Result<Mlp> {
    if layer_sizes.len() < 2 {
        return Err(Error::config("an MLP needs at least an input and an output size"));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::config("layer sizes must be positive"));
    }
    if !(init.stddev >= 0.0 && init.stddev.is_finite() && init.mean.is_finite()) {
        return Err(Error::config(format!(
            "invalid initialisation N({}, {}²)",
            init.mean, init.stddev
        )));
    }
    let normal = Normal::new(init.mean, init.stddev).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut rng)).collect() };

    let mut graph = Graph::new();
    let input = graph.input("features");
    let labels = graph.input("labels");
    let mut h = input;
    let layers = layer_sizes.len() - 1;
    for (l, w) in layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weight = graph.param(
            &format!("w{l}"),
            Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out))?,
        );
        let bias = graph.param(&format!("b{l}"), Tensor::vector(draw(fan_out)));
        let z = graph.matmul(h, weight);
        h = graph.add_bias(z, bias);
        if l + 1 < layers && activation == Activation::Relu {
            h = graph.relu(h);
        }
    }
    let logits = h;
    let log_probs = graph.log_softmax(logits);
    let loss = graph.nll(log_probs, labels);
    graph.set_loss(loss);
    let params = graph.params_flat();
    ensure_finite("initial parameters", &params)?;
    Ok(Mlp {
        graph,
        input,
        labels,
        logits,
        log_probs,
        loss,
        layer_sizes: layer_sizes.to_vec(),
    })
}
