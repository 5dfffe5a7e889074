use super::dense::{self, Broadcast, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Broadcast),
    Sub(Broadcast),
    Mul(Broadcast),
    /// k * x + b elementwise; only the slope matters for the backward pass.
    Affine { k: f64 },
    Matmul,
    Transpose,
    Tanh,
    Relu,
    Exp,
    Softmax1d,
    Logsumexp1d,
    /// parents: (y, mu, sigma); output is the summed joint log-density.
    GaussianLogPdf,
    Concat0 { part_numels: Vec<usize> },
    Slice1d { start: usize },
    ReduceSum,
    ReduceMean,
    Reshape,
}

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by `Var`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Append-only computation tape. Node indices are a topological order by
/// construction, so the backward pass is a single reverse sweep that visits
/// each node exactly once.
pub struct Graph {
    nodes: Vec<Node>,
    trap_nonfinite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), trap_nonfinite: cfg!(debug_assertions) }
    }

    /// Enable or disable the non-finite trap (on by default in debug builds).
    /// The trainer disables it to report divergence as an error instead.
    pub fn set_trap(&mut self, on: bool) {
        self.trap_nonfinite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, op: Op) -> Var {
        if self.trap_nonfinite && !value.is_finite() {
            panic!("non-finite value out of {op:?} at node {}", self.nodes.len());
        }
        let requires_grad = match op {
            Op::Leaf => false,
            _ => parents.iter().any(|&p| self.nodes[p].requires_grad),
        };
        self.nodes.push(Node { value, parents, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant node; gradients do not flow into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], Op::Leaf)
    }

    /// A leaf that participates in `backward`.
    pub fn param(&mut self, t: Tensor) -> Var {
        let v = self.push(t, vec![], Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.input(Tensor::scalar(x))
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(Broadcast) -> Op,
    ) -> Result<Var> {
        let bc = dense::infer_broadcast(op_name, self.value(a), self.value(b))?;
        let out = dense::binary_map(self.value(a), self.value(b), bc, f);
        Ok(self.push(out, vec![a.0, b.0], mk(bc)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn affine(&mut self, a: Var, k: f64, b: f64) -> Var {
        let out = dense::map_unary(self.value(a), |x| k * x + b);
        self.push(out, vec![a.0], Op::Affine { k })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = dense::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, vec![a.0, b.0], Op::Matmul))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = dense::transpose(self.value(a))?;
        Ok(self.push(out, vec![a.0], Op::Transpose))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = dense::map_unary(self.value(a), f64::tanh);
        self.push(out, vec![a.0], Op::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = dense::map_unary(self.value(a), |x| x.max(0.0));
        self.push(out, vec![a.0], Op::Relu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = dense::map_unary(self.value(a), f64::exp);
        self.push(out, vec![a.0], Op::Exp)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = dense::softmax_1d(self.value(a))?;
        Ok(self.push(out, vec![a.0], Op::Softmax1d))
    }

    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let out = dense::logsumexp_1d(self.value(a))?;
        Ok(self.push(out, vec![a.0], Op::Logsumexp1d))
    }

    pub fn gaussian_log_pdf(&mut self, y: Var, mu: Var, sigma: Var) -> Result<Var> {
        let out = dense::gaussian_log_pdf(self.value(y), self.value(mu), self.value(sigma))?;
        Ok(self.push(out, vec![y.0, mu.0, sigma.0], Op::GaussianLogPdf))
    }

    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = dense::concat0(&tensors)?;
        let part_numels = tensors.iter().map(|t| t.numel()).collect();
        Ok(self.push(out, parts.iter().map(|v| v.0).collect(), Op::Concat0 { part_numels }))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = dense::slice_1d(self.value(a), start, len)?;
        Ok(self.push(out, vec![a.0], Op::Slice1d { start }))
    }

    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, vec![a.0], Op::ReduceSum)
    }

    pub fn reduce_mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let out = Tensor::scalar(self.value(a).data().iter().sum::<f64>() / n);
        self.push(out, vec![a.0], Op::ReduceMean)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let src = self.value(a);
        let numel: usize = shape.iter().product();
        if numel != src.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape { op: "reshape", left: src.shape().to_vec(), right: shape });
        }
        let out = Tensor::new(shape, src.data().to_vec())?;
        Ok(self.push(out, vec![a.0], Op::Reshape))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every node
    /// that requires grad; leaves created with [`Graph::param`] are the
    /// intended consumers.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        if !loss_node.requires_grad {
            return Err(Error::invalid("loss is not connected to any parameter"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some({
            let mut t = Tensor::zeros_like(&loss_node.value);
            t.data_mut()[0] = 1.0;
            t
        });

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let parent_grads = self.local_grads(idx, &g);
            for (slot, pg) in parent_grads {
                if !self.nodes[slot].requires_grad {
                    continue;
                }
                match &mut grads[slot] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    empty => *empty = Some(pg),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradient contributions of node `idx` to each of its parents.
    fn local_grads(&self, idx: usize, g: &Tensor) -> Vec<(usize, Tensor)> {
        let node = &self.nodes[idx];
        let pv = |i: usize| &self.nodes[node.parents[i]].value;
        let pid = |i: usize| node.parents[i];
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(bc) => vec![
                (pid(0), reduce_to(g, pv(0), *bc, Side::Lhs)),
                (pid(1), reduce_to(g, pv(1), *bc, Side::Rhs)),
            ],
            Op::Sub(bc) => {
                let neg = dense::map_unary(g, |x| -x);
                vec![
                    (pid(0), reduce_to(g, pv(0), *bc, Side::Lhs)),
                    (pid(1), reduce_to(&neg, pv(1), *bc, Side::Rhs)),
                ]
            }
            Op::Mul(bc) => {
                // d(a∘b)/da = g ∘ b with b expanded to the output shape, then
                // collapsed back onto a (and symmetrically for b).
                let ga_full = match bc {
                    Broadcast::LhsScalar => dense::binary_map(g, pv(1), Broadcast::Same, |x, y| x * y),
                    Broadcast::RhsScalar => dense::binary_map(g, pv(1), Broadcast::RhsScalar, |x, y| x * y),
                    Broadcast::Same => dense::binary_map(g, pv(1), Broadcast::Same, |x, y| x * y),
                    Broadcast::RhsRow => dense::binary_map(g, pv(1), Broadcast::RhsRow, |x, y| x * y),
                };
                let gb_full = match bc {
                    Broadcast::LhsScalar => dense::binary_map(g, pv(0), Broadcast::RhsScalar, |x, y| x * y),
                    _ => dense::binary_map(g, pv(0), Broadcast::Same, |x, y| x * y),
                };
                vec![
                    (pid(0), reduce_to(&ga_full, pv(0), *bc, Side::Lhs)),
                    (pid(1), reduce_to(&gb_full, pv(1), *bc, Side::Rhs)),
                ]
            }
            Op::Affine { k } => {
                let k = *k;
                vec![(pid(0), dense::map_unary(g, |x| k * x))]
            }
            Op::Matmul => {
                let at = dense::transpose(pv(0)).expect("recorded matmul operand");
                let bt = dense::transpose(pv(1)).expect("recorded matmul operand");
                let ga = dense::matmul(g, &bt).expect("matmul backward");
                let gb = dense::matmul(&at, g).expect("matmul backward");
                vec![(pid(0), ga), (pid(1), gb)]
            }
            Op::Transpose => {
                vec![(pid(0), dense::transpose(g).expect("transpose backward"))]
            }
            Op::Tanh => {
                let y = &node.value;
                let ga = dense::binary_map(g, y, Broadcast::Same, |gi, yi| gi * (1.0 - yi * yi));
                vec![(pid(0), ga)]
            }
            Op::Relu => {
                let x = pv(0);
                let ga = dense::binary_map(g, x, Broadcast::Same, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                vec![(pid(0), ga)]
            }
            Op::Exp => {
                let ga = dense::binary_map(g, &node.value, Broadcast::Same, |gi, yi| gi * yi);
                vec![(pid(0), ga)]
            }
            Op::Softmax1d => {
                let y = node.value.data();
                let gd = g.data();
                let dot: f64 = gd.iter().zip(y).map(|(&gi, &yi)| gi * yi).sum();
                let data: Vec<f64> = y.iter().zip(gd).map(|(&yi, &gi)| yi * (gi - dot)).collect();
                vec![(pid(0), Tensor::new(vec![data.len()], data).expect("softmax backward"))]
            }
            Op::Logsumexp1d => {
                let out = node.value.data()[0];
                let gs = g.data()[0];
                let x = pv(0);
                let data: Vec<f64> = x.data().iter().map(|&xi| gs * (xi - out).exp()).collect();
                vec![(pid(0), Tensor::new(vec![data.len()], data).expect("logsumexp backward"))]
            }
            Op::GaussianLogPdf => {
                let gs = g.data()[0];
                let (y, mu, sigma) = (pv(0), pv(1), pv(2));
                let n = y.numel();
                let mut gy = vec![0.0; n];
                let mut gmu = vec![0.0; n];
                let mut gsigma = vec![0.0; n];
                for i in 0..n {
                    let s = sigma.data()[i];
                    let d = y.data()[i] - mu.data()[i];
                    gmu[i] = gs * d / (s * s);
                    gy[i] = -gmu[i];
                    gsigma[i] = gs * (d * d / (s * s * s) - 1.0 / s);
                }
                let shape = y.shape().to_vec();
                vec![
                    (pid(0), Tensor::new(shape.clone(), gy).expect("pdf backward")),
                    (pid(1), Tensor::new(shape.clone(), gmu).expect("pdf backward")),
                    (pid(2), Tensor::new(shape, gsigma).expect("pdf backward")),
                ]
            }
            Op::Concat0 { part_numels } => {
                let mut out = Vec::with_capacity(part_numels.len());
                let mut offset = 0;
                for (i, &n) in part_numels.iter().enumerate() {
                    let shape = pv(i).shape().to_vec();
                    let data = g.data()[offset..offset + n].to_vec();
                    out.push((pid(i), Tensor::new(shape, data).expect("concat backward")));
                    offset += n;
                }
                out
            }
            Op::Slice1d { start } => {
                let mut full = Tensor::zeros_like(pv(0));
                let len = g.numel();
                full.data_mut()[*start..start + len].copy_from_slice(g.data());
                vec![(pid(0), full)]
            }
            Op::ReduceSum => {
                let gs = g.data()[0];
                vec![(pid(0), dense::map_unary(pv(0), |_| gs))]
            }
            Op::ReduceMean => {
                let gs = g.data()[0] / pv(0).numel() as f64;
                vec![(pid(0), dense::map_unary(pv(0), |_| gs))]
            }
            Op::Reshape => {
                let shape = pv(0).shape().to_vec();
                vec![(pid(0), Tensor::new(shape, g.data().to_vec()).expect("reshape backward"))]
            }
        }
    }
}

#[derive(Copy, Clone, PartialEq)]
enum Side {
    Lhs,
    Rhs,
}

/// Collapse an output-shaped gradient back to the shape of a broadcast
/// operand (sum over the broadcast positions).
fn reduce_to(g: &Tensor, operand: &Tensor, bc: Broadcast, side: Side) -> Tensor {
    let broadcasted = match (bc, side) {
        (Broadcast::Same, _) | (Broadcast::RhsScalar, Side::Lhs) | (Broadcast::LhsScalar, Side::Rhs) => {
            return Tensor::new(operand.shape().to_vec(), g.data().to_vec()).expect("same-shape grad")
        }
        (Broadcast::RhsRow, Side::Lhs) => return g.clone(),
        _ => bc,
    };
    match (broadcasted, side) {
        (Broadcast::LhsScalar, Side::Lhs) | (Broadcast::RhsScalar, Side::Rhs) => {
            let s: f64 = g.data().iter().sum();
            let mut t = Tensor::zeros_like(operand);
            t.data_mut()[0] = s;
            t
        }
        (Broadcast::RhsRow, Side::Rhs) => {
            let cols = operand.shape()[1];
            let mut sums = vec![0.0; cols];
            for (i, &v) in g.data().iter().enumerate() {
                sums[i % cols] += v;
            }
            Tensor::new(vec![1, cols], sums).expect("row-broadcast grad")
        }
        _ => unreachable!("unhandled broadcast reduction"),
    }
}
