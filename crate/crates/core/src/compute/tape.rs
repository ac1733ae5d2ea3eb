//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s as a node in
//! creation order, so the node list is already topologically sorted and
//! [`Graph::backward`] just walks it from the root down to index 0. Graphs
//! are built per forward pass and dropped after the gradients have been
//! folded into the parameter store.

use std::cell::RefCell;
use std::rc::Rc;

use crate::binarize::Binarizer;
use crate::compute::tensor::{normalize_rows, softmax_in_place, Tensor};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Recorded operation plus whatever its backward rule needs.
enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulConst(usize, Rc<Tensor>),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Binarize(usize, Binarizer),
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Transpose(usize),
    ConcatCols(Vec<usize>),
    StackRows(Vec<usize>),
    Row(usize, usize),
    MeanRows(usize, Option<Rc<[bool]>>),
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    Sum(usize),
    MeanOf(Vec<usize>),
    CrossEntropy {
        logits: usize,
        label: usize,
        probs: Vec<f64>,
    },
}

/// One tape entry: the forward value, the op that produced it, and whether
/// any requires-grad leaf sits upstream.
struct TapeNode {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<TapeNode>>,
}

#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        debug_assert!(value.is_finite(), "non-finite value produced on the tape");
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(TapeNode {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf { param: None }, false)
    }

    /// A free leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf { param: None }, true)
    }

    /// Binds a stored parameter; its gradient lands in the store via
    /// [`Gradients::accumulate_into`].
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.push(
            store.get(id).value.clone(),
            Op::Leaf { param: Some(id) },
            true,
        )
    }

    /// Row lookup into `table` (`ids[i]` selects row `i` of the output).
    /// Row 0 is the padding row and never receives gradient.
    pub fn gather<'g>(&'g self, table: Var<'g>, ids: &[usize]) -> Result<Var<'g>> {
        let t = self.value_of(table.id);
        let c = t.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::Contract(format!(
                    "embedding id {id} out of range for {} rows",
                    t.rows()
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::matrix(ids.len(), c, data)?;
        let ng = self.needs(&[table.id]);
        Ok(self.push(
            out,
            Op::Gather {
                table: table.id,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean_of<'g>(&'g self, items: &[Var<'g>]) -> Result<Var<'g>> {
        if items.is_empty() {
            return Err(Error::Contract("mean of an empty list".into()));
        }
        let ids: Vec<usize> = items.iter().map(|v| v.id).collect();
        let mut total = 0.0;
        for &i in &ids {
            let v = self.value_of(i);
            if !v.is_scalar() {
                return Err(Error::Contract("mean_of expects scalar nodes".into()));
            }
            total += v.item();
        }
        let ng = self.needs(&ids);
        Ok(self.push(
            Tensor::scalar(total / ids.len() as f64),
            Op::MeanOf(ids),
            ng,
        ))
    }

    pub fn concat_cols<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor> = vals.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_cols(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let ng = self.needs(&ids);
        Ok(self.push(out, Op::ConcatCols(ids), ng))
    }

    pub fn stack_rows<'g>(&'g self, rows: &[Var<'g>]) -> Result<Var<'g>> {
        let vals: Vec<Rc<Tensor>> = rows.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor> = vals.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::stack_rows(&refs)?;
        let ids: Vec<usize> = rows.iter().map(|v| v.id).collect();
        let ng = self.needs(&ids);
        Ok(self.push(out, Op::StackRows(ids), ng))
    }

    /// Reverse sweep from a scalar root. Gradients are computed fresh on every
    /// call; accumulation happens when they are folded into a store.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if !nodes[root.id].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor::ones(nodes[root.id].value.shape()));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(up) = grads[id].take() else { continue };
            if let Op::Leaf { .. } = node.op {
                grads[id] = Some(up);
                continue;
            }
            propagate(&nodes, id, &up, &mut grads)?;
        }

        let params = nodes[..=root.id]
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(p) } => Some((p, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn propagate(
    nodes: &[TapeNode],
    id: usize,
    up: &Tensor,
    grads: &mut [Option<Tensor>],
) -> Result<()> {
    let val = |i: usize| nodes[i].value.as_ref();
    let needs = |i: usize| nodes[i].needs_grad;
    match &nodes[id].op {
        Op::Leaf { .. } => {}
        &Op::MatMul(a, b) => {
            if needs(a) {
                accumulate(grads, a, up.matmul(&val(b).transpose())?);
            }
            if needs(b) {
                accumulate(grads, b, val(a).transpose().matmul(up)?);
            }
        }
        &Op::Add(a, b) => {
            if needs(a) {
                accumulate(grads, a, up.clone());
            }
            if needs(b) {
                accumulate(grads, b, up.clone());
            }
        }
        &Op::Mul(a, b) => {
            if needs(a) {
                accumulate(grads, a, up.mul(val(b))?);
            }
            if needs(b) {
                accumulate(grads, b, up.mul(val(a))?);
            }
        }
        &Op::AddRow(a, bias) => {
            if needs(a) {
                accumulate(grads, a, up.clone());
            }
            if needs(bias) {
                let ones = Tensor::ones(&[1, up.rows()]);
                let g = ones.matmul(up)?;
                accumulate(grads, bias, reshape_like(g, val(bias)));
            }
        }
        Op::MulConst(a, m) => accumulate(grads, *a, up.mul(m)?),
        &Op::Scale(a, s) => accumulate(grads, a, up.scale(s)),
        &Op::Tanh(a) => {
            let y = val(id);
            accumulate(grads, a, up.zip_map(y, |g, y| g * (1.0 - y * y))?);
        }
        &Op::Sigmoid(a) => {
            let y = val(id);
            accumulate(grads, a, up.zip_map(y, |g, y| g * y * (1.0 - y))?);
        }
        &Op::Binarize(a, kind) => {
            accumulate(grads, a, up.zip_map(val(a), |g, r| g * kind.derivative(r))?);
        }
        &Op::SoftmaxRows(a) => {
            let y = val(id);
            let c = y.cols();
            let mut out = vec![0.0; y.numel()];
            for r in 0..y.rows() {
                let yr = y.row(r);
                let gr = up.row(r);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    out[r * c + j] = yr[j] * (gr[j] - dot);
                }
            }
            accumulate(grads, a, Tensor::new(y.shape().to_vec(), out)?);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let c = xhat.cols();
            let g = val(*gain);
            if needs(*x) {
                let mut dx = vec![0.0; xhat.numel()];
                for r in 0..xhat.rows() {
                    let dy = up.row(r);
                    let xh = xhat.row(r);
                    let dxh: Vec<f64> = dy.iter().zip(g.data()).map(|(a, b)| a * b).collect();
                    let s1: f64 = dxh.iter().sum();
                    let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                    let k = inv_std[r] / c as f64;
                    for j in 0..c {
                        dx[r * c + j] = k * (c as f64 * dxh[j] - s1 - xh[j] * s2);
                    }
                }
                accumulate(grads, *x, Tensor::new(xhat.shape().to_vec(), dx)?);
            }
            if needs(*gain) {
                let mut dg = vec![0.0; c];
                for r in 0..xhat.rows() {
                    for ((d, a), b) in dg.iter_mut().zip(up.row(r)).zip(xhat.row(r)) {
                        *d += a * b;
                    }
                }
                accumulate(grads, *gain, Tensor::new(g.shape().to_vec(), dg)?);
            }
            if needs(*bias) {
                let ones = Tensor::ones(&[1, up.rows()]);
                let db = ones.matmul(up)?;
                accumulate(grads, *bias, reshape_like(db, val(*bias)));
            }
        }
        &Op::Transpose(a) => accumulate(grads, a, up.transpose()),
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                if needs(p) {
                    let mut data = Vec::with_capacity(up.rows() * w);
                    for r in 0..up.rows() {
                        data.extend_from_slice(&up.row(r)[offset..offset + w]);
                    }
                    accumulate(grads, p, Tensor::new(val(p).shape().to_vec(), data)?);
                }
                offset += w;
            }
        }
        Op::StackRows(rows) => {
            for (r, &p) in rows.iter().enumerate() {
                if needs(p) {
                    let g = Tensor::new(val(p).shape().to_vec(), up.row(r).to_vec())?;
                    accumulate(grads, p, g);
                }
            }
        }
        &Op::Row(a, r) => {
            let src = val(a);
            let mut g = Tensor::zeros(src.shape());
            let c = src.cols();
            g.data_mut()[r * c..(r + 1) * c].copy_from_slice(up.data());
            accumulate(grads, a, g);
        }
        Op::MeanRows(a, mask) => {
            let src = val(*a);
            let masked = |r: usize| mask.as_ref().is_some_and(|m| m[r]);
            let n = (0..src.rows()).filter(|&r| !masked(r)).count() as f64;
            let c = src.cols();
            let mut g = Tensor::zeros(src.shape());
            for r in (0..src.rows()).filter(|&r| !masked(r)) {
                for (d, u) in g.data_mut()[r * c..(r + 1) * c].iter_mut().zip(up.data()) {
                    *d = u / n;
                }
            }
            accumulate(grads, *a, g);
        }
        Op::Gather { table, ids } => {
            let t = val(*table);
            let c = t.cols();
            let mut g = Tensor::zeros(t.shape());
            for (i, &row) in ids.iter().enumerate() {
                if row == 0 {
                    continue;
                }
                for (d, u) in g.data_mut()[row * c..(row + 1) * c]
                    .iter_mut()
                    .zip(up.row(i))
                {
                    *d += u;
                }
            }
            accumulate(grads, *table, g);
        }
        &Op::Sum(a) => {
            let src = val(a);
            accumulate(grads, a, Tensor::full(src.shape(), up.item()));
        }
        Op::MeanOf(items) => {
            let share = up.item() / items.len() as f64;
            for &i in items {
                if needs(i) {
                    accumulate(grads, i, Tensor::full(val(i).shape(), share));
                }
            }
        }
        Op::CrossEntropy {
            logits,
            label,
            probs,
        } => {
            let mut g = probs.clone();
            g[*label] -= 1.0;
            let u = up.item();
            g.iter_mut().for_each(|v| *v *= u);
            accumulate(
                grads,
                *logits,
                Tensor::new(val(*logits).shape().to_vec(), g)?,
            );
        }
    }
    Ok(())
}

fn reshape_like(t: Tensor, like: &Tensor) -> Tensor {
    Tensor::new(like.shape().to_vec(), t.into_data()).expect("same element count")
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    fn unary(self, out: Tensor, op: Op) -> Var<'g> {
        let ng = self.graph.needs(&[self.id]);
        self.graph.push(out, op, ng)
    }

    fn binary(self, other: Var<'g>, out: Tensor, op: Op) -> Var<'g> {
        let ng = self.graph.needs(&[self.id, other.id]);
        self.graph.push(out, op, ng)
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let out = self.value().matmul(&other.value())?;
        Ok(self.binary(other, out, Op::MatMul(self.id, other.id)))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        let out = self.value().add(&other.value())?;
        Ok(self.binary(other, out, Op::Add(self.id, other.id)))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        let out = self.value().mul(&other.value())?;
        Ok(self.binary(other, out, Op::Mul(self.id, other.id)))
    }

    /// Broadcast-adds a `1 × cols` bias row.
    pub fn add_row(self, bias: Var<'g>) -> Result<Var<'g>> {
        let out = self.value().add_row(&bias.value())?;
        Ok(self.binary(bias, out, Op::AddRow(self.id, bias.id)))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(self, m: Tensor) -> Result<Var<'g>> {
        let out = self.value().mul(&m)?;
        Ok(self.unary(out, Op::MulConst(self.id, Rc::new(m))))
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        let out = self.value().scale(s);
        self.unary(out, Op::Scale(self.id, s))
    }

    pub fn tanh(self) -> Var<'g> {
        let out = self.value().tanh();
        self.unary(out, Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'g> {
        let out = self.value().sigmoid();
        self.unary(out, Op::Sigmoid(self.id))
    }

    pub fn binarize(self, kind: Binarizer) -> Var<'g> {
        let out = self.value().map(|r| kind.apply(r));
        self.unary(out, Op::Binarize(self.id, kind))
    }

    pub fn softmax_rows(self, mask: Option<&[bool]>) -> Var<'g> {
        let mut out = (*self.value()).clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row, mask);
        }
        self.unary(out, Op::SoftmaxRows(self.id))
    }

    /// Row-wise layer normalisation with `1 × cols` gain and bias.
    pub fn layer_norm(self, gain: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
        let x = self.value();
        let (g, b) = (gain.value(), bias.value());
        let c = x.cols();
        if g.numel() != c || b.numel() != c {
            return Err(Error::dim("layer_norm", "gain/bias width"));
        }
        let (xhat, inv_std) = normalize_rows(&x);
        let mut out = xhat.clone();
        for row in out.data_mut().chunks_mut(c) {
            for ((v, gj), bj) in row.iter_mut().zip(g.data()).zip(b.data()) {
                *v = *v * gj + bj;
            }
        }
        let ng = self.graph.needs(&[self.id, gain.id, bias.id]);
        Ok(self.graph.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    pub fn transpose(self) -> Var<'g> {
        let out = self.value().transpose();
        self.unary(out, Op::Transpose(self.id))
    }

    /// Row `r` as a `1 × cols` tensor.
    pub fn row(self, r: usize) -> Var<'g> {
        let v = self.value();
        let out = Tensor::row_vector(v.row(r));
        self.unary(out, Op::Row(self.id, r))
    }

    pub fn mean_rows(self, mask: Option<&[bool]>) -> Result<Var<'g>> {
        let out = self.value().mean_rows(mask)?;
        Ok(self.unary(out, Op::MeanRows(self.id, mask.map(Rc::from))))
    }

    pub fn sum(self) -> Var<'g> {
        let out = Tensor::scalar(self.value().sum());
        self.unary(out, Op::Sum(self.id))
    }

    /// Cross-entropy of a single logit row against an integer label.
    pub fn cross_entropy(self, label: usize) -> Result<Var<'g>> {
        let z = self.value();
        if label >= z.numel() {
            return Err(Error::Data(format!(
                "label {label} out of range for {} classes",
                z.numel()
            )));
        }
        let mut probs = z.data().to_vec();
        softmax_in_place(&mut probs, None);
        let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z.data()[label];
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                label,
                probs,
            },
        ))
    }
}

/// Result of one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to a leaf of the same graph.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Adds (`+=`) every parameter gradient into the store.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.accumulate_grad(pid, g);
            }
        }
        store.mark_grads_ready();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central differences of a scalar function of one matrix.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-6;
        let mut g = Tensor::zeros(x.shape());
        for i in 0..x.numel() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Tensor, b: &Tensor, rtol: f64) {
        for (x, y) in a.data().iter().zip(b.data()) {
            let scale = x.abs().max(y.abs()).max(1e-8);
            assert!((x - y).abs() <= rtol * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_grad_is_ones_times_b_transposed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 4, 3);
        let b = random(&mut rng, 3, 2);
        let g = Graph::new();
        let va = g.leaf(a.clone());
        let vb = g.constant(b.clone());
        let root = va.matmul(vb).unwrap().sum();
        let grads = g.backward(root).unwrap();
        let expected = Tensor::ones(&[4, 2]).matmul(&b.transpose()).unwrap();
        assert_close(grads.wrt(va).unwrap(), &expected, 1e-12);
        let fd = numeric_grad(&a, |a| a.matmul(&b).unwrap().sum());
        assert_close(grads.wrt(va).unwrap(), &fd, 1e-6);
    }

    #[test]
    fn sum_of_param_gives_ones_and_accumulates() {
        let mut store = ParamStore::default();
        let w = store.add("w", ParamKind::FullPrecision, Tensor::zeros(&[2, 2]));
        let g = Graph::new();
        let root = g.param(&store, w).sum();
        let grads = g.backward(root).unwrap();
        grads.accumulate_into(&mut store);
        assert_eq!(store.get(w).grad.as_ref().unwrap(), &Tensor::ones(&[2, 2]));
        let again = g.backward(root).unwrap();
        again.accumulate_into(&mut store);
        assert_eq!(
            store.get(w).grad.as_ref().unwrap(),
            &Tensor::full(&[2, 2], 2.0)
        );
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn weight_times_input_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random(&mut rng, 3, 5);
        let x = random(&mut rng, 5, 2);
        let g = Graph::new();
        let vw = g.leaf(w.clone());
        let root = vw.matmul(g.constant(x.clone())).unwrap().sum();
        let grads = g.backward(root).unwrap();
        let fd = numeric_grad(&w, |w| w.matmul(&x).unwrap().sum());
        assert_close(grads.wrt(vw).unwrap(), &fd, 1e-6);
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 3, 4);
        let w = random(&mut rng, 4, 4);
        let gain = random(&mut rng, 1, 4);
        let bias = random(&mut rng, 1, 4);
        let mask = [false, false, true];

        let forward = |x: &Tensor, g: &Graph| -> f64 {
            let vx = g.leaf(x.clone());
            let out = build(g, vx, &w, &gain, &bias, &mask);
            out.value().item()
        };
        fn build<'g>(
            g: &'g Graph,
            vx: Var<'g>,
            w: &Tensor,
            gain: &Tensor,
            bias: &Tensor,
            mask: &[bool],
        ) -> Var<'g> {
            let vw = g.constant(w.clone());
            let h = vx.binarize(Binarizer::SecondOrder).matmul(vw).unwrap();
            let s = h
                .matmul(vx.transpose())
                .unwrap()
                .scale(0.5)
                .softmax_rows(Some(mask));
            let a = s.matmul(vx).unwrap().add(vx).unwrap();
            let n = a
                .layer_norm(g.constant(gain.clone()), g.constant(bias.clone()))
                .unwrap();
            let t = n.tanh().mul(n.sigmoid()).unwrap();
            let pooled = t.mean_rows(Some(mask)).unwrap();
            let r0 = t.row(1);
            let both = g.concat_cols(&[pooled, r0]).unwrap();
            let stacked = g.stack_rows(&[both, both]).unwrap();
            stacked.cross_entropy(3).unwrap()
        }
        let g = Graph::new();
        let vx = g.leaf(x.clone());
        let root = build(&g, vx, &w, &gain, &bias, &mask);
        let grads = g.backward(root).unwrap();
        let fd = numeric_grad(&x, |x| forward(x, &Graph::new()));
        assert_close(grads.wrt(vx).unwrap(), &fd, 1e-5);
    }

    #[test]
    fn gather_skips_padding_row() {
        let table = Tensor::from_rows(&[&[0.0, 0.0], &[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let g = Graph::new();
        let t = g.leaf(table);
        let rows = g.gather(t, &[1, 0, 1]).unwrap();
        let grads = g.backward(rows.sum()).unwrap();
        assert_eq!(
            grads.wrt(t).unwrap().data(),
            &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0]
        );
        assert!(g.gather(t, &[3]).is_err());
    }
}
