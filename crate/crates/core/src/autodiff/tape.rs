//! Operation tape: records primitive applications in execution order and
//! accumulates gradients by visiting them in exact reverse.

use crate::autodiff::tensor::{gemm_acc, gemm_acc_nt, gemm_acc_tn, Tensor};
use crate::autodiff::AutodiffError;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Linear { x: usize, w: usize, b: usize },
    Relu { x: usize },
    MaxReduce { x: usize, axis: usize, argmax: Vec<u32> },
    SumReduce { x: usize, axis: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Narrow { x: usize, axis: usize, start: usize },
    Reshape { x: usize },
    Scale { x: usize, factor: S },
    RepeatRows { x: usize },
    MixRows { x: usize, weights: Vec<S> },
    RowDiv { x: usize, divisors: Vec<S> },
    Dropout { x: usize, mask: Vec<S> },
    SoftmaxCrossEntropy { logits: usize, probs: Vec<S>, targets: Vec<u32> },
    SumAll { x: usize },
    InterpRows { x: usize, k: usize, pairs: Vec<(u32, S)> },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Recorded forward pass. Single-owner; consumed by one `backward` call.
#[derive(Debug)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    consumed: bool,
}

/// Per-node gradients produced by [`Tape::backward`]. Nodes that did not
/// influence the loss have no entry; their gradient is zero.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, materializing zeros for unused nodes.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor<S> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

/// (outer, axis_len, inner) strides for a reduction over `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record a non-differentiable input (data, coordinates).
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Record a differentiable input (a parameter tensor).
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// y = x·W + b, broadcast over the leading dimensions of x.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.rank() != 2 || bv.rank() != 1 {
            return Err(shape_err(
                "linear",
                format!("want W rank 2 and b rank 1, got {:?} and {:?}", wv.shape(), bv.shape()),
            ));
        }
        let (dim_in, dim_out) = (wv.shape()[0], wv.shape()[1]);
        if xv.rank() == 0 || *xv.shape().last().unwrap() != dim_in || bv.shape()[0] != dim_out {
            return Err(shape_err(
                "linear",
                format!(
                    "x {:?} · W {:?} + b {:?}",
                    xv.shape(),
                    wv.shape(),
                    bv.shape()
                ),
            ));
        }
        let rows = xv.len() / dim_in;
        let mut out_shape = xv.shape().to_vec();
        *out_shape.last_mut().unwrap() = dim_out;
        let mut data = Vec::with_capacity(rows * dim_out);
        for _ in 0..rows {
            data.extend_from_slice(bv.data());
        }
        gemm_acc(&mut data, xv.data(), wv.data(), rows, dim_in, dim_out);
        let value = Tensor::new(out_shape, data);
        value.check_finite("linear")?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Linear { x: x.0, w: w.0, b: b.0 }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(S::zero())).collect();
        let value = Tensor::new(xv.shape().to_vec(), data);
        value.check_finite("relu")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Relu { x: x.0 }, rg))
    }

    /// Per-slot maximum over `axis`. Gradient routes to the first maximal
    /// element along the axis.
    pub fn max_reduce(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(shape_err(
                "max_reduce",
                format!("axis {axis} out of range for shape {:?}", xv.shape()),
            ));
        }
        let (outer, axis_len, inner) = axis_split(xv.shape(), axis);
        if axis_len == 0 {
            return Err(AutodiffError::EmptyAxis { op: "max_reduce" });
        }
        let mut out_shape = xv.shape().to_vec();
        out_shape.remove(axis);
        let mut data = vec![S::zero(); outer * inner];
        let mut argmax = vec![0u32; outer * inner];
        let xd = xv.data();
        for o in 0..outer {
            for r in 0..inner {
                let mut best = xd[(o * axis_len) * inner + r];
                let mut best_a = 0u32;
                for a in 1..axis_len {
                    let v = xd[(o * axis_len + a) * inner + r];
                    if v > best {
                        best = v;
                        best_a = a as u32;
                    }
                }
                data[o * inner + r] = best;
                argmax[o * inner + r] = best_a;
            }
        }
        let value = Tensor::new(out_shape, data);
        value.check_finite("max_reduce")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxReduce { x: x.0, axis, argmax }, rg))
    }

    pub fn sum_reduce(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(shape_err(
                "sum_reduce",
                format!("axis {axis} out of range for shape {:?}", xv.shape()),
            ));
        }
        let (outer, axis_len, inner) = axis_split(xv.shape(), axis);
        if axis_len == 0 {
            return Err(AutodiffError::EmptyAxis { op: "sum_reduce" });
        }
        let mut out_shape = xv.shape().to_vec();
        out_shape.remove(axis);
        let mut data = vec![S::zero(); outer * inner];
        let xd = xv.data();
        for o in 0..outer {
            for a in 0..axis_len {
                let base = (o * axis_len + a) * inner;
                for r in 0..inner {
                    data[o * inner + r] += xd[base + r];
                }
            }
        }
        let value = Tensor::new(out_shape, data);
        value.check_finite("sum_reduce")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SumReduce { x: x.0, axis }, rg))
    }

    /// Stack tensors along an existing axis, in argument order.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        if xs.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let first = self.value(xs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(shape_err(
                "concat",
                format!("axis {axis} out of range for shape {first:?}"),
            ));
        }
        let mut axis_total = 0;
        for &v in xs {
            let s = self.value(v).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(shape_err(
                    "concat",
                    format!("incompatible shapes {:?} and {:?} on axis {axis}", first, s),
                ));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let a_len = t.shape()[axis];
                let block = a_len * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(out_shape, data);
        value.check_finite("concat")?;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: xs.iter().map(|v| v.0).collect(),
                axis,
            },
            rg,
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if axis >= xv.rank() || start + len > xv.shape()[axis] || len == 0 {
            return Err(shape_err(
                "narrow",
                format!(
                    "slice [{start}, {}) on axis {axis} of shape {:?}",
                    start + len,
                    xv.shape()
                ),
            ));
        }
        let (outer, axis_len, inner) = axis_split(xv.shape(), axis);
        let mut out_shape = xv.shape().to_vec();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        let xd = xv.data();
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&xd[base..base + len * inner]);
        }
        let value = Tensor::new(out_shape, data);
        let rg = self.rg(x);
        Ok(self.push(value, Op::Narrow { x: x.0, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", xv.shape(), shape),
            ));
        }
        let value = Tensor::new(shape, xv.data().to_vec());
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x: x.0 }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(xv.shape().to_vec(), data);
        value.check_finite("scale")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Scale { x: x.0, factor }, rg))
    }

    /// Tile a rank-1 tensor into `copies` identical rows.
    pub fn repeat_rows(&mut self, x: Var, copies: usize) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.rank() != 1 || copies == 0 {
            return Err(shape_err(
                "repeat_rows",
                format!("want rank 1 and copies >= 1, got {:?} x{copies}", xv.shape()),
            ));
        }
        let d = xv.shape()[0];
        let mut data = Vec::with_capacity(copies * d);
        for _ in 0..copies {
            data.extend_from_slice(xv.data());
        }
        let value = Tensor::new(vec![copies, d], data);
        let rg = self.rg(x);
        Ok(self.push(value, Op::RepeatRows { x: x.0 }, rg))
    }

    /// y = W·x with a constant square weight matrix (no gradient flows
    /// into the weights).
    pub fn mix_rows(&mut self, x: Var, weights: &[S], m: usize) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.rank() != 2 || xv.shape()[0] != m || weights.len() != m * m {
            return Err(shape_err(
                "mix_rows",
                format!("weights {m}x{m} vs x {:?}", xv.shape()),
            ));
        }
        let d = xv.shape()[1];
        let mut data = vec![S::zero(); m * d];
        gemm_acc(&mut data, weights, xv.data(), m, m, d);
        let value = Tensor::new(vec![m, d], data);
        value.check_finite("mix_rows")?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::MixRows {
                x: x.0,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Divide row i by `divisors[i]`.
    pub fn row_div(&mut self, x: Var, divisors: &[S]) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.rank() != 2 || xv.shape()[0] != divisors.len() {
            return Err(shape_err(
                "row_div",
                format!("{} divisors vs x {:?}", divisors.len(), xv.shape()),
            ));
        }
        let d = xv.shape()[1];
        let mut data = Vec::with_capacity(xv.len());
        for (i, &div) in divisors.iter().enumerate() {
            data.extend(xv.data()[i * d..(i + 1) * d].iter().map(|&v| v / div));
        }
        let value = Tensor::new(xv.shape().to_vec(), data);
        value.check_finite("row_div")?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::RowDiv {
                x: x.0,
                divisors: divisors.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout: each element is zeroed with probability `rate`,
    /// survivors are scaled by 1/(1-rate). Call only in training mode.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        rng: &mut SplitMix64,
    ) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(shape_err("dropout", format!("rate {rate} outside [0, 1)")));
        }
        let xv = self.value(x);
        let keep = S::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<S> = (0..xv.len())
            .map(|_| {
                if rng.next_f64() < rate {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data);
        value.check_finite("dropout")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout { x: x.0, mask }, rg))
    }

    /// Mean over rows of -log softmax(logits)[target], computed with
    /// max-subtraction. Logits are [B, C], targets length B.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<Var, AutodiffError> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != targets.len() {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("logits {:?} vs {} targets", lv.shape(), targets.len()),
            ));
        }
        let (b, c) = (lv.shape()[0], lv.shape()[1]);
        if b == 0 {
            return Err(AutodiffError::EmptyAxis {
                op: "softmax_cross_entropy",
            });
        }
        for &t in targets {
            if t >= c {
                return Err(AutodiffError::TargetOutOfRange { target: t, classes: c });
            }
        }
        let ld = lv.data();
        let mut probs = vec![S::zero(); b * c];
        let mut loss = S::zero();
        for i in 0..b {
            let row = &ld[i * c..(i + 1) * c];
            let mut max = row[0];
            for &v in &row[1..] {
                if v > max {
                    max = v;
                }
            }
            let mut denom = S::zero();
            for j in 0..c {
                let e = (row[j] - max).exp();
                probs[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                probs[i * c + j] /= denom;
            }
            loss += denom.ln() - (row[targets[i]] - max);
        }
        loss /= S::from_f64(b as f64);
        let value = Tensor::scalar(loss);
        value.check_finite("softmax_cross_entropy")?;
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                probs,
                targets: targets.iter().map(|&t| t as u32).collect(),
            },
            rg,
        ))
    }

    /// Sum of every element, accumulated in row-major order.
    pub fn sum_all(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let mut total = S::zero();
        for &v in xv.data() {
            total += v;
        }
        let value = Tensor::scalar(total);
        value.check_finite("sum_all")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SumAll { x: x.0 }, rg))
    }

    /// Weighted gather of source rows: output row a is
    /// sum of `weights[a][p].1 * x[weights[a][p].0]`.
    pub fn interp_rows(
        &mut self,
        x: Var,
        weights: &[Vec<(usize, f64)>],
    ) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(shape_err(
                "interp_rows",
                format!("want rank 2 sources, got {:?}", xv.shape()),
            ));
        }
        let (src_rows, d) = (xv.shape()[0], xv.shape()[1]);
        let k = weights.first().map_or(0, |w| w.len());
        if k == 0 {
            return Err(shape_err("interp_rows", "no interpolation pairs".into()));
        }
        let mut pairs = Vec::with_capacity(weights.len() * k);
        for row in weights {
            if row.len() != k {
                return Err(shape_err("interp_rows", "ragged pair lists".into()));
            }
            for &(idx, w) in row {
                if idx >= src_rows {
                    return Err(shape_err(
                        "interp_rows",
                        format!("source index {idx} out of range ({src_rows} rows)"),
                    ));
                }
                pairs.push((idx as u32, S::from_f64(w)));
            }
        }
        let xd = xv.data();
        let mut data = vec![S::zero(); weights.len() * d];
        for (a, out_row) in data.chunks_mut(d).enumerate() {
            for &(idx, w) in &pairs[a * k..(a + 1) * k] {
                let src = &xd[idx as usize * d..(idx as usize + 1) * d];
                for j in 0..d {
                    out_row[j] += w * src[j];
                }
            }
        }
        let value = Tensor::new(vec![weights.len(), d], data);
        value.check_finite("interp_rows")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::InterpRows { x: x.0, k, pairs }, rg))
    }

    /// Reverse-topological gradient accumulation from a scalar loss.
    /// Gradients of unused differentiable leaves are zero. The tape is
    /// consumed; a second call is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<S>, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        self.consumed = true;
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![S::one()]));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue; // keep leaf gradients for retrieval
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.distribute(id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn distribute(&self, id: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let gd = g.data();
        match &self.nodes[id].op {
            Op::Leaf => unreachable!(),
            Op::Linear { x, w, b } => {
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                let (dim_in, dim_out) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / dim_in;
                if self.nodes[*x].requires_grad {
                    let gx = self.slot(grads, *x);
                    gemm_acc_nt(gx, gd, wv.data(), rows, dim_in, dim_out);
                }
                if self.nodes[*w].requires_grad {
                    let gw = self.slot(grads, *w);
                    gemm_acc_tn(gw, xv.data(), gd, rows, dim_in, dim_out);
                }
                if self.nodes[*b].requires_grad {
                    let gb = self.slot(grads, *b);
                    for r in 0..rows {
                        for j in 0..dim_out {
                            gb[j] += gd[r * dim_out + j];
                        }
                    }
                }
            }
            Op::Relu { x } => {
                if self.nodes[*x].requires_grad {
                    let xv = self.nodes[*x].value.data().to_vec();
                    let gx = self.slot(grads, *x);
                    for (i, &v) in xv.iter().enumerate() {
                        if v > S::zero() {
                            gx[i] += gd[i];
                        }
                    }
                }
            }
            Op::MaxReduce { x, axis, argmax } => {
                if self.nodes[*x].requires_grad {
                    let (outer, axis_len, inner) = axis_split(self.nodes[*x].value.shape(), *axis);
                    let gx = self.slot(grads, *x);
                    for o in 0..outer {
                        for r in 0..inner {
                            let a = argmax[o * inner + r] as usize;
                            gx[(o * axis_len + a) * inner + r] += gd[o * inner + r];
                        }
                    }
                }
            }
            Op::SumReduce { x, axis } => {
                if self.nodes[*x].requires_grad {
                    let (outer, axis_len, inner) = axis_split(self.nodes[*x].value.shape(), *axis);
                    let gx = self.slot(grads, *x);
                    for o in 0..outer {
                        for a in 0..axis_len {
                            let base = (o * axis_len + a) * inner;
                            for r in 0..inner {
                                gx[base + r] += gd[o * inner + r];
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let out_shape = self.nodes[id].value.shape();
                let (outer, out_axis, inner) = axis_split(out_shape, *axis);
                let _ = out_axis;
                // Per-input axis lengths and running offsets.
                let lens: Vec<usize> =
                    inputs.iter().map(|&i| self.nodes[i].value.shape()[*axis]).collect();
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                for (&inp, &a_len) in inputs.iter().zip(&lens) {
                    if self.nodes[inp].requires_grad {
                        let gx = self.slot(grads, inp);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * a_len * inner;
                            for t in 0..a_len * inner {
                                gx[dst + t] += gd[src + t];
                            }
                        }
                    }
                    offset += a_len;
                }
            }
            Op::Narrow { x, axis, start } => {
                if self.nodes[*x].requires_grad {
                    let x_shape = self.nodes[*x].value.shape();
                    let (outer, axis_len, inner) = axis_split(x_shape, *axis);
                    let len = self.nodes[id].value.shape()[*axis];
                    let gx = self.slot(grads, *x);
                    for o in 0..outer {
                        let dst = (o * axis_len + start) * inner;
                        let src = o * len * inner;
                        for t in 0..len * inner {
                            gx[dst + t] += gd[src + t];
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if self.nodes[*x].requires_grad {
                    let gx = self.slot(grads, *x);
                    for (slot, &v) in gx.iter_mut().zip(gd) {
                        *slot += v;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if self.nodes[*x].requires_grad {
                    let f = *factor;
                    let gx = self.slot(grads, *x);
                    for (slot, &v) in gx.iter_mut().zip(gd) {
                        *slot += v * f;
                    }
                }
            }
            Op::RepeatRows { x } => {
                if self.nodes[*x].requires_grad {
                    let d = self.nodes[*x].value.len();
                    let copies = gd.len() / d;
                    let gx = self.slot(grads, *x);
                    for r in 0..copies {
                        for j in 0..d {
                            gx[j] += gd[r * d + j];
                        }
                    }
                }
            }
            Op::MixRows { x, weights } => {
                if self.nodes[*x].requires_grad {
                    let m = self.nodes[*x].value.shape()[0];
                    let d = self.nodes[*x].value.shape()[1];
                    let gx = self.slot(grads, *x);
                    gemm_acc_tn(gx, weights, gd, m, m, d);
                }
            }
            Op::RowDiv { x, divisors } => {
                if self.nodes[*x].requires_grad {
                    let d = self.nodes[*x].value.shape()[1];
                    let gx = self.slot(grads, *x);
                    for (i, &div) in divisors.iter().enumerate() {
                        for j in 0..d {
                            gx[i * d + j] += gd[i * d + j] / div;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.nodes[*x].requires_grad {
                    let gx = self.slot(grads, *x);
                    for (i, &m) in mask.iter().enumerate() {
                        gx[i] += gd[i] * m;
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
            } => {
                if self.nodes[*logits].requires_grad {
                    let c = self.nodes[*logits].value.shape()[1];
                    let b = targets.len();
                    let scale = gd[0] / S::from_f64(b as f64);
                    let gx = self.slot(grads, *logits);
                    for i in 0..b {
                        for j in 0..c {
                            let indicator = if j == targets[i] as usize {
                                S::one()
                            } else {
                                S::zero()
                            };
                            gx[i * c + j] += scale * (probs[i * c + j] - indicator);
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if self.nodes[*x].requires_grad {
                    let gx = self.slot(grads, *x);
                    for slot in gx.iter_mut() {
                        *slot += gd[0];
                    }
                }
            }
            Op::InterpRows { x, k, pairs } => {
                if self.nodes[*x].requires_grad {
                    let d = self.nodes[*x].value.shape()[1];
                    let gx = self.slot(grads, *x);
                    for (a, chunk) in pairs.chunks(*k).enumerate() {
                        let grow = &gd[a * d..(a + 1) * d];
                        for &(idx, w) in chunk {
                            let dst = idx as usize * d;
                            for j in 0..d {
                                gx[dst + j] += w * grow[j];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Gradient buffer for node `idx`, created zeroed on first touch.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<S>>], idx: usize) -> &'g mut [S] {
        if grads[idx].is_none() {
            grads[idx] = Some(Tensor::zeros(self.nodes[idx].value.shape().to_vec()));
        }
        grads[idx].as_mut().unwrap().data_mut()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}
