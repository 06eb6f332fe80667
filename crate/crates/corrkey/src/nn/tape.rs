//! Recorded-tape reverse-mode differentiation over dense tensors.
//!
//! A forward pass appends nodes to a [`Tape`]; `backward` walks the tape in
//! reverse and scatters gradients to every reachable node. Parameters enter a
//! tape as leaves holding `Rc<Tensor>` values, so binding a large parameter
//! store to a fresh tape is cheap.
//!
//! Shape errors in op constructors are programmer errors and panic with the
//! offending shapes; spec-level input validation happens in the public model
//! operations built on top of this module.

use std::rc::Rc;

use super::tensor::{log_sum_exp, sigmoid, softmax_unchecked, NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    OneMinus(NodeId),
    Scale(NodeId, f64),
    /// (m x n) 1 (n) -> (m)
    MatVec(NodeId, NodeId),
    /// (m x n)^T 1 (m) -> (n)
    TMatVec(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// inner product -> scalar
    Dot(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Softmax(NodeId),
    /// -> scalar
    LogSumExp(NodeId),
    Gather(NodeId, Vec<usize>),
    /// vector * scalar node
    ScaleByScalar(NodeId, NodeId),
    /// sum of w_j * x_j over equally shaped vectors
    WeightedSum(Vec<NodeId>, NodeId),
    /// one row of a rank-2 leaf
    EmbedRow(NodeId, usize),
}

struct Node {
    op: Op,
    value: Rc<Tensor>,
}

/// Gradients produced by one backward pass, indexed by `NodeId`.
pub struct Grads {
    g: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient buffer of a node; zeros if the node was not reached.
    pub fn get(&self, id: NodeId, numel: usize) -> Vec<f64> {
        match &self.g[id.0] {
            Some(v) => v.clone(),
            None => vec![0.0; numel],
        }
    }

    pub fn get_ref(&self, id: NodeId) -> Option<&[f64]> {
        self.g[id.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn value_rc(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes[id.0].value)
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.push_rc(op, Rc::new(value))
    }

    fn push_rc(&mut self, op: Op, value: Rc<Tensor>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Insert a shared tensor as a leaf (used for parameters and cached values).
    pub fn leaf(&mut self, value: Rc<Tensor>) -> NodeId {
        self.push_rc(Op::Leaf, value)
    }

    /// Insert an owned tensor as a leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shapes {:?} vs {:?}", va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let shape = va.shape().to_vec();
        self.push(Op::Add(a, b), Tensor::new(shape, data))
    }

    /// Left-folded sum of two or more equally shaped nodes.
    pub fn add_n(&mut self, ids: &[NodeId]) -> NodeId {
        assert!(!ids.is_empty(), "add_n of nothing");
        let mut acc = ids[0];
        for &id in &ids[1..] {
            acc = self.add(acc, id);
        }
        acc
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shapes {:?} vs {:?}", va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let shape = va.shape().to_vec();
        self.push(Op::Sub(a, b), Tensor::new(shape, data))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shapes {:?} vs {:?}", va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let shape = va.shape().to_vec();
        self.push(Op::Mul(a, b), Tensor::new(shape, data))
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|x| 1.0 - x).collect();
        let shape = va.shape().to_vec();
        self.push(Op::OneMinus(a), Tensor::new(shape, data))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|x| c * x).collect();
        let shape = va.shape().to_vec();
        self.push(Op::Scale(a, c), Tensor::new(shape, data))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (vm, vv) = (self.value(m), self.value(v));
        assert_eq!(vm.shape().len(), 2, "matvec lhs must be rank 2");
        assert_eq!(
            vm.cols(),
            vv.numel(),
            "matvec {:?} x {:?}",
            vm.shape(),
            vv.shape()
        );
        let rows = vm.rows();
        let mut out = vec![0.0; rows];
        for (r, o) in out.iter_mut().enumerate() {
            *o = vm
                .row(r)
                .iter()
                .zip(vv.data())
                .map(|(a, b)| a * b)
                .sum();
        }
        self.push(Op::MatVec(m, v), Tensor::vector(out))
    }

    pub fn tmatvec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (vm, vv) = (self.value(m), self.value(v));
        assert_eq!(vm.shape().len(), 2, "tmatvec lhs must be rank 2");
        assert_eq!(
            vm.rows(),
            vv.numel(),
            "tmatvec {:?} x {:?}",
            vm.shape(),
            vv.shape()
        );
        let cols = vm.cols();
        let mut out = vec![0.0; cols];
        for r in 0..vm.rows() {
            let x = vv.data()[r];
            for (c, o) in out.iter_mut().enumerate() {
                *o += vm.row(r)[c] * x;
            }
        }
        self.push(Op::TMatVec(m, v), Tensor::vector(out))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| sigmoid(x)).collect();
        let shape = va.shape().to_vec();
        self.push(Op::Sigmoid(a), Tensor::new(shape, data))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x.tanh()).collect();
        let shape = va.shape().to_vec();
        self.push(Op::Tanh(a), Tensor::new(shape, data))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.numel(), vb.numel(), "dot lengths differ");
        let s: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), Tensor::scalar(s))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(data))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        assert!(va.numel() > 0, "softmax of empty vector");
        let p = softmax_unchecked(va.data());
        self.push(Op::Softmax(a), Tensor::vector(p))
    }

    pub fn log_sum_exp(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        assert!(va.numel() > 0, "log_sum_exp of empty vector");
        let v = log_sum_exp(va.data());
        self.push(Op::LogSumExp(a), Tensor::scalar(v))
    }

    pub fn gather(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        let va = self.value(a);
        let data: Vec<f64> = idx.iter().map(|&i| va.data()[i]).collect();
        self.push(Op::Gather(a, idx), Tensor::vector(data))
    }

    pub fn scale_by_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        let (va, vs) = (self.value(a), self.value(s));
        assert!(vs.is_scalar(), "scale_by_scalar needs scalar rhs");
        let c = vs.item();
        let data = va.data().iter().map(|x| c * x).collect();
        let shape = va.shape().to_vec();
        self.push(Op::ScaleByScalar(a, s), Tensor::new(shape, data))
    }

    pub fn weighted_sum(&mut self, items: &[NodeId], weights: NodeId) -> NodeId {
        let vw = self.value(weights);
        assert_eq!(vw.numel(), items.len(), "weighted_sum arity mismatch");
        assert!(!items.is_empty(), "weighted_sum of nothing");
        let n = self.value(items[0]).numel();
        let mut out = vec![0.0; n];
        for (j, &it) in items.iter().enumerate() {
            let v = self.value(it);
            assert_eq!(v.numel(), n, "weighted_sum item shapes differ");
            let w = vw.data()[j];
            for (o, x) in out.iter_mut().zip(v.data()) {
                *o += w * x;
            }
        }
        self.push(Op::WeightedSum(items.to_vec(), weights), Tensor::vector(out))
    }

    pub fn embed_row(&mut self, table: NodeId, row: usize) -> NodeId {
        let vt = self.value(table);
        assert_eq!(vt.shape().len(), 2, "embed_row table must be rank 2");
        assert!(row < vt.rows(), "embed_row {} out of {} rows", row, vt.rows());
        let data = vt.row(row).to_vec();
        self.push(Op::EmbedRow(table, row), Tensor::vector(data))
    }

    /// Reverse pass from a scalar loss node. Gradients of nodes not on a path
    /// to the loss stay zero.
    pub fn backward(&self, loss: NodeId) -> Result<Grads, NnError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NnError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut g: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let grad = match g[i].take() {
                Some(v) => v,
                None => continue,
            };
            self.scatter(i, &grad, &mut g);
            g[i] = Some(grad);
        }
        Ok(Grads { g })
    }

    fn accumulate(g: &mut [Option<Vec<f64>>], id: NodeId, numel: usize, f: impl FnOnce(&mut [f64])) {
        let slot = g[id.0].get_or_insert_with(|| vec![0.0; numel]);
        f(slot);
    }

    fn scatter(&self, i: usize, grad: &[f64], g: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::accumulate(g, *a, grad.len(), |ga| {
                    for (x, d) in ga.iter_mut().zip(grad) {
                        *x += d;
                    }
                });
                Self::accumulate(g, *b, grad.len(), |gb| {
                    for (x, d) in gb.iter_mut().zip(grad) {
                        *x += d;
                    }
                });
            }
            Op::Sub(a, b) => {
                Self::accumulate(g, *a, grad.len(), |ga| {
                    for (x, d) in ga.iter_mut().zip(grad) {
                        *x += d;
                    }
                });
                Self::accumulate(g, *b, grad.len(), |gb| {
                    for (x, d) in gb.iter_mut().zip(grad) {
                        *x -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                Self::accumulate(g, *a, grad.len(), |ga| {
                    for ((x, d), y) in ga.iter_mut().zip(grad).zip(&vb) {
                        *x += d * y;
                    }
                });
                Self::accumulate(g, *b, grad.len(), |gb| {
                    for ((x, d), y) in gb.iter_mut().zip(grad).zip(&va) {
                        *x += d * y;
                    }
                });
            }
            Op::OneMinus(a) => {
                Self::accumulate(g, *a, grad.len(), |ga| {
                    for (x, d) in ga.iter_mut().zip(grad) {
                        *x -= d;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                Self::accumulate(g, *a, grad.len(), |ga| {
                    for (x, d) in ga.iter_mut().zip(grad) {
                        *x += c * d;
                    }
                });
            }
            Op::MatVec(m, v) => {
                let vm = self.value(*m);
                let vv = self.value(*v).data().to_vec();
                let (rows, cols) = (vm.rows(), vm.cols());
                Self::accumulate(g, *m, rows * cols, |gm| {
                    for r in 0..rows {
                        let d = grad[r];
                        for (c, x) in vv.iter().enumerate() {
                            gm[r * cols + c] += d * x;
                        }
                    }
                });
                let vm_data: Vec<f64> = vm.data().to_vec();
                Self::accumulate(g, *v, cols, |gv| {
                    for r in 0..rows {
                        let d = grad[r];
                        for (c, gvc) in gv.iter_mut().enumerate() {
                            *gvc += d * vm_data[r * cols + c];
                        }
                    }
                });
            }
            Op::TMatVec(m, v) => {
                // y = M^T v: dM[r][c] += v[r] * grad[c]; dv[r] += sum_c M[r][c] grad[c]
                let vm = self.value(*m);
                let vv = self.value(*v).data().to_vec();
                let (rows, cols) = (vm.rows(), vm.cols());
                Self::accumulate(g, *m, rows * cols, |gm| {
                    for r in 0..rows {
                        let x = vv[r];
                        for (c, d) in grad.iter().enumerate() {
                            gm[r * cols + c] += x * d;
                        }
                    }
                });
                let vm_data: Vec<f64> = vm.data().to_vec();
                Self::accumulate(g, *v, rows, |gv| {
                    for (r, gvr) in gv.iter_mut().enumerate() {
                        *gvr += grad
                            .iter()
                            .enumerate()
                            .map(|(c, d)| vm_data[r * cols + c] * d)
                            .sum::<f64>();
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data().to_vec();
                Self::accumulate(g, *a, grad.len(), |ga| {
                    for ((x, d), s) in ga.iter_mut().zip(grad).zip(&y) {
                        *x += d * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data().to_vec();
                Self::accumulate(g, *a, grad.len(), |ga| {
                    for ((x, d), t) in ga.iter_mut().zip(grad).zip(&y) {
                        *x += d * (1.0 - t * t);
                    }
                });
            }
            Op::Dot(a, b) => {
                let d0 = grad[0];
                let (va, vb) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                Self::accumulate(g, *a, va.len(), |ga| {
                    for (x, y) in ga.iter_mut().zip(&vb) {
                        *x += d0 * y;
                    }
                });
                Self::accumulate(g, *b, vb.len(), |gb| {
                    for (x, y) in gb.iter_mut().zip(&va) {
                        *x += d0 * y;
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    let seg = &grad[off..off + n];
                    Self::accumulate(g, p, n, |gp| {
                        for (x, d) in gp.iter_mut().zip(seg) {
                            *x += d;
                        }
                    });
                    off += n;
                }
            }
            Op::Softmax(a) => {
                let p = node.value.data().to_vec();
                let inner: f64 = p.iter().zip(grad).map(|(pi, gi)| pi * gi).sum();
                Self::accumulate(g, *a, grad.len(), |ga| {
                    for ((x, d), pi) in ga.iter_mut().zip(grad).zip(&p) {
                        *x += pi * (d - inner);
                    }
                });
            }
            Op::LogSumExp(a) => {
                let d0 = grad[0];
                let p = softmax_unchecked(self.value(*a).data());
                Self::accumulate(g, *a, p.len(), |ga| {
                    for (x, pi) in ga.iter_mut().zip(&p) {
                        *x += d0 * pi;
                    }
                });
            }
            Op::Gather(a, idx) => {
                let n = self.value(*a).numel();
                Self::accumulate(g, *a, n, |ga| {
                    for (k, &i) in idx.iter().enumerate() {
                        ga[i] += grad[k];
                    }
                });
            }
            Op::ScaleByScalar(a, s) => {
                let c = self.value(*s).item();
                let va = self.value(*a).data().to_vec();
                Self::accumulate(g, *a, grad.len(), |ga| {
                    for (x, d) in ga.iter_mut().zip(grad) {
                        *x += c * d;
                    }
                });
                let ds: f64 = va.iter().zip(grad).map(|(x, d)| x * d).sum();
                Self::accumulate(g, *s, 1, |gs| gs[0] += ds);
            }
            Op::WeightedSum(items, weights) => {
                let vw = self.value(*weights).data().to_vec();
                for (j, &it) in items.iter().enumerate() {
                    let w = vw[j];
                    Self::accumulate(g, it, grad.len(), |gi| {
                        for (x, d) in gi.iter_mut().zip(grad) {
                            *x += w * d;
                        }
                    });
                }
                let dots: Vec<f64> = items
                    .iter()
                    .map(|&it| {
                        self.value(it)
                            .data()
                            .iter()
                            .zip(grad)
                            .map(|(x, d)| x * d)
                            .sum()
                    })
                    .collect();
                Self::accumulate(g, *weights, items.len(), |gw| {
                    for (x, d) in gw.iter_mut().zip(&dots) {
                        *x += d;
                    }
                });
            }
            Op::EmbedRow(table, row) => {
                let vt = self.value(*table);
                let (rows, cols) = (vt.rows(), vt.cols());
                let row = *row;
                Self::accumulate(g, *table, rows * cols, |gt| {
                    for (c, d) in grad.iter().enumerate() {
                        gt[row * cols + c] += d;
                    }
                });
            }
        }
    }
}
