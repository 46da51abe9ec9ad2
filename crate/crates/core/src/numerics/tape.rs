//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints. The op set is closed:
//! matrix products, broadcast add, elementwise multiply/scale, GELU, (causal)
//! softmax and log-softmax, layer normalization, embedding lookup, row pick,
//! sum/mean reductions, and the layout ops reshape/permute. Everything the
//! model needs is composed from these.

use super::tensor::{all_finite, Scalar, Tensor};
use super::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
struct View {
    rs: isize,
    cs: isize,
}

impl View {
    /// Strides of a row-major block with `cols` columns, optionally transposed.
    fn of(cols: usize, transposed: bool) -> View {
        if transposed {
            View {
                rs: 1,
                cs: cols as isize,
            }
        } else {
            View {
                rs: cols as isize,
                cs: 1,
            }
        }
    }

    fn t(self) -> View {
        View {
            rs: self.cs,
            cs: self.rs,
        }
    }
}

#[derive(Clone, Debug)]
struct MatMulMeta {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_view: View,
    b_view: View,
    a_stride: usize,
    b_stride: usize,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, meta: MatMulMeta },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    Gelu { a: Var },
    Softmax { a: Var },
    LogSoftmax { a: Var },
    CrossEntropy { a: Var, targets: Vec<usize>, lse: Vec<T> },
    LayerNorm { x: Var, gain: Var, bias: Var, rstd: Vec<T> },
    Embedding { table: Var, indices: Vec<usize> },
    Pick { a: Var, indices: Vec<usize> },
    Sum { a: Var },
    Mean { a: Var },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Gelu { .. } => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::Pick { .. } => "pick",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording of one computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `var`; zeros if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor<T> {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor<T> {
        let shape = self.shapes[var.0].clone();
        match self.grads[var.0].take() {
            Some(g) => Tensor::new(shape, g).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn shape_err(msg: String) -> NumericsError {
    NumericsError::ShapeMismatch(msg)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var, NumericsError> {
        if !value.all_finite() {
            return Err(NumericsError::NonFinite {
                op: op.name(),
                stage: "forward",
            });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf whose gradient is tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Result<Var, NumericsError> {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Result<Var, NumericsError> {
        self.leaf(tensor.with_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Result<Var, NumericsError> {
        self.leaf(tensor.with_grad(false))
    }

    fn matmul_raw(
        &mut self,
        a: Var,
        b: Var,
        meta: MatMulMeta,
        out_shape: Vec<usize>,
    ) -> Result<Var, NumericsError> {
        let mut out = vec![T::zero(); meta.batch * meta.m * meta.n];
        {
            let av = self.nodes[a.0].value.data();
            let bv = self.nodes[b.0].value.data();
            for bi in 0..meta.batch {
                // SAFETY: offsets and strides stay inside the operand buffers by
                // construction of `meta` in the public constructors.
                unsafe {
                    T::gemm(
                        meta.m,
                        meta.k,
                        meta.n,
                        T::one(),
                        av.as_ptr().add(bi * meta.a_stride),
                        meta.a_view.rs,
                        meta.a_view.cs,
                        bv.as_ptr().add(bi * meta.b_stride),
                        meta.b_view.rs,
                        meta.b_view.cs,
                        T::zero(),
                        out.as_mut_ptr().add(bi * meta.m * meta.n),
                        meta.n as isize,
                        1,
                    );
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(out_shape, out)?, Op::MatMul { a, b, meta }, needs)
    }

    /// `x · w` where `x` is `[..., k]` and `w` is `[k, n]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var, NumericsError> {
        self.linear_impl(x, w, false)
    }

    /// `x · wᵀ` where `x` is `[..., k]` and `w` is `[n, k]`.
    pub fn linear_t(&mut self, x: Var, w: Var) -> Result<Var, NumericsError> {
        self.linear_impl(x, w, true)
    }

    fn linear_impl(&mut self, x: Var, w: Var, trans_w: bool) -> Result<Var, NumericsError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() {
            return Err(shape_err(format!("linear: x {xs:?}, w {ws:?}")));
        }
        let k = *xs.last().unwrap();
        let (wk, n) = if trans_w { (ws[1], ws[0]) } else { (ws[0], ws[1]) };
        if wk != k {
            return Err(shape_err(format!("linear: x {xs:?} incompatible with w {ws:?}")));
        }
        let m = self.value(x).len() / k.max(1);
        let meta = MatMulMeta {
            batch: 1,
            m,
            k,
            n,
            a_view: View::of(k, false),
            b_view: View::of(ws[1], trans_w),
            a_stride: 0,
            b_stride: 0,
        };
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = n;
        self.matmul_raw(x, w, meta, out_shape)
    }

    /// Batched product of 3-D operands, `op(a_i) · op(b_i)`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var, NumericsError> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] {
            return Err(shape_err(format!("bmm: {as_:?} x {bs:?}")));
        }
        let (m, k) = if trans_a { (as_[2], as_[1]) } else { (as_[1], as_[2]) };
        let (kb, n) = if trans_b { (bs[2], bs[1]) } else { (bs[1], bs[2]) };
        if k != kb {
            return Err(shape_err(format!("bmm: inner dims {as_:?} x {bs:?}")));
        }
        let meta = MatMulMeta {
            batch: as_[0],
            m,
            k,
            n,
            a_view: View::of(as_[2], trans_a),
            b_view: View::of(bs[2], trans_b),
            a_stride: as_[1] * as_[2],
            b_stride: bs[1] * bs[2],
        };
        self.matmul_raw(a, b, meta, vec![as_[0], m, n])
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s (bias broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if bs.len() > as_.len() || as_[as_.len() - bs.len()..] != bs[..] {
            return Err(shape_err(format!("add: {as_:?} + {bs:?}")));
        }
        let bv = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        if !bv.is_empty() {
            for chunk in data.chunks_mut(bv.len()) {
                for (x, &y) in chunk.iter_mut().zip(bv) {
                    *x = *x + y;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(as_, data)?, Op::Add { a, b }, needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "mul: {:?} * {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data)?, Op::Mul { a, b }, needs)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericsError> {
        let f = T::from_f64_lossy(factor);
        let data: Vec<T> = self.value(a).data().iter().map(|&x| x * f).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, data)?, Op::Scale { a, factor: f }, needs)
    }

    /// `a - b` for equal shapes, composed from scale and add.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let data: Vec<T> = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, data)?, Op::Gelu { a }, needs)
    }

    /// Softmax over the last axis. With `causal`, the last two axes must be
    /// square and entry `(i, j)` with `j > i` is masked to probability zero.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        let cols = *shape.last().ok_or_else(|| shape_err("softmax of scalar".into()))?;
        let rows_per_mat = if causal {
            if shape.len() < 2 || shape[shape.len() - 2] != cols {
                return Err(shape_err(format!("causal softmax needs square tail, got {shape:?}")));
            }
            cols
        } else {
            usize::MAX
        };
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for (r, (row, orow)) in src.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
            let limit = if causal { r % rows_per_mat + 1 } else { cols };
            let mx = row[..limit].iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut total = T::zero();
            for j in 0..limit {
                let e = (row[j] - mx).fast_exp();
                orow[j] = e;
                total = total + e;
            }
            for v in &mut orow[..limit] {
                *v = *v / total;
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::new(shape, out)?, Op::Softmax { a }, needs)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        let cols = *shape.last().ok_or_else(|| shape_err("log_softmax of scalar".into()))?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for (row, orow) in src.chunks(cols).zip(out.chunks_mut(cols)) {
            let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().fold(T::zero(), |s, &v| s + (v - mx).fast_exp()).ln() + mx;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::new(shape, out)?, Op::LogSoftmax { a }, needs)
    }

    /// Per-row `-log softmax(a)[target]`, shape `[rows]`, without
    /// materializing the log-probabilities.
    pub fn cross_entropy(&mut self, a: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let cols = self.value(a).cols();
        let rows = self.value(a).rows();
        if targets.len() != rows {
            return Err(shape_err(format!("cross_entropy: {} targets for {rows} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(NumericsError::IndexOutOfRange { index: bad, bound: cols });
        }
        let src = self.value(a).data();
        let mut lse = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows);
        for (row, &t) in src.chunks(cols).zip(targets) {
            let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let l = row.iter().fold(T::zero(), |s, &v| s + (v - mx).fast_exp()).ln() + mx;
            lse.push(l);
            out.push(l - row[t]);
        }
        let needs = self.needs(a);
        self.push(
            Tensor::new(vec![rows], out)?,
            Op::CrossEntropy {
                a,
                targets: targets.to_vec(),
                lse,
            },
            needs,
        )
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| shape_err("layer_norm of scalar".into()))?;
        if self.shape(gain) != [cols] || self.shape(bias) != [cols] {
            return Err(shape_err(format!(
                "layer_norm: x {shape:?}, gain {:?}, bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let eps = T::from_f64_lossy(LN_EPS);
        let nf = T::from_usize(cols).unwrap();
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let bb = self.value(bias).data();
        let mut out = vec![T::zero(); src.len()];
        let mut rstds = Vec::with_capacity(src.len() / cols);
        for (row, orow) in src.chunks(cols).zip(out.chunks_mut(cols)) {
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / nf;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / nf;
            let rstd = T::one() / (var + eps).sqrt();
            for j in 0..cols {
                orow[j] = (row[j] - mean) * rstd * g[j] + bb[j];
            }
            rstds.push(rstd);
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                rstd: rstds,
            },
            needs,
        )
    }

    /// Rows of `table` (`[V, N]`) selected by `indices`, shape `[len, N]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(shape_err(format!("embedding table must be 2-D, got {ts:?}")));
        }
        let (v, n) = (ts[0], ts[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(NumericsError::IndexOutOfRange { index: bad, bound: v });
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(&tv[i * n..(i + 1) * n]);
        }
        let needs = self.needs(table);
        self.push(
            Tensor::new(vec![indices.len(), n], out)?,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            needs,
        )
    }

    /// `out[r] = a[r, indices[r]]` for `a` viewed as rows over its last axis.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let cols = self.value(a).cols();
        let rows = self.value(a).rows();
        if indices.len() != rows {
            return Err(shape_err(format!("pick: {} indices for {rows} rows", indices.len())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(NumericsError::IndexOutOfRange { index: bad, bound: cols });
        }
        let av = self.value(a).data();
        let out: Vec<T> = indices.iter().enumerate().map(|(r, &c)| av[r * cols + c]).collect();
        let needs = self.needs(a);
        self.push(
            Tensor::new(vec![rows], out)?,
            Op::Pick {
                a,
                indices: indices.to_vec(),
            },
            needs,
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).data().iter().fold(T::zero(), |s, &v| s + v);
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, needs)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let len = self.value(a).len();
        if len == 0 {
            return Err(shape_err("mean of empty tensor".into()));
        }
        let s = self.value(a).data().iter().fold(T::zero(), |s, &v| s + v);
        let needs = self.needs(a);
        self.push(
            Tensor::scalar(s / T::from_usize(len).unwrap()),
            Op::Mean { a },
            needs,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        let needs = self.needs(a);
        self.push(t.with_grad(false), Op::Reshape { a }, needs)
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err(format!("permute {perm:?} of {shape:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        permute_into(src, &shape, perm, &mut out, false);
        let needs = self.needs(a);
        self.push(
            Tensor::new(out_shape, out)?,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            needs,
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericsError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !all_finite(&g) {
                return Err(NumericsError::NonFinite {
                    op: node.op.name(),
                    stage: "backward",
                });
            }
            self.backprop(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, meta } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.needs(*a) {
                    let ga = slot(grads, *a, av.len());
                    for bi in 0..meta.batch {
                        // d op(A) = dC · op(B)ᵀ, written through op(A)'s view.
                        unsafe {
                            T::gemm(
                                meta.m,
                                meta.n,
                                meta.k,
                                T::one(),
                                g.as_ptr().add(bi * meta.m * meta.n),
                                meta.n as isize,
                                1,
                                bv.as_ptr().add(bi * meta.b_stride),
                                meta.b_view.t().rs,
                                meta.b_view.t().cs,
                                T::one(),
                                ga.as_mut_ptr().add(bi * meta.a_stride),
                                meta.a_view.rs,
                                meta.a_view.cs,
                            );
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, bv.len());
                    for bi in 0..meta.batch {
                        // d op(B) = op(A)ᵀ · dC, written through op(B)'s view.
                        unsafe {
                            T::gemm(
                                meta.k,
                                meta.m,
                                meta.n,
                                T::one(),
                                av.as_ptr().add(bi * meta.a_stride),
                                meta.a_view.t().rs,
                                meta.a_view.t().cs,
                                g.as_ptr().add(bi * meta.m * meta.n),
                                meta.n as isize,
                                1,
                                T::one(),
                                gb.as_mut_ptr().add(bi * meta.b_stride),
                                meta.b_view.rs,
                                meta.b_view.cs,
                            );
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for (x, &d) in ga.iter_mut().zip(g) {
                        *x = *x + d;
                    }
                }
                if self.needs(*b) {
                    let blen = self.value(*b).len();
                    let gb = slot(grads, *b, blen);
                    for chunk in g.chunks(blen.max(1)) {
                        accumulate(gb, chunk);
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((x, &d), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *x = *x + d * y;
                    }
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, g.len());
                    for ((x, &d), &y) in gb.iter_mut().zip(g).zip(av) {
                        *x = *x + d * y;
                    }
                }
            }
            Op::Scale { a, factor } => {
                let ga = slot(grads, *a, g.len());
                for (x, &d) in ga.iter_mut().zip(g) {
                    *x = *x + d * *factor;
                }
            }
            Op::Gelu { a } => {
                let av = self.value(*a).data();
                let ga = slot(grads, *a, g.len());
                for ((x, &d), &v) in ga.iter_mut().zip(g).zip(av) {
                    *x = *x + d * gelu_grad(v);
                }
            }
            Op::Softmax { a, .. } => {
                let cols = node.value.cols();
                let ga = slot(grads, *a, g.len());
                for ((y, gy), gx) in out.chunks(cols).zip(g.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    let dot = y.iter().zip(gy).fold(T::zero(), |s, (&p, &d)| s + p * d);
                    for j in 0..cols {
                        gx[j] = gx[j] + y[j] * (gy[j] - dot);
                    }
                }
            }
            Op::LogSoftmax { a } => {
                let cols = node.value.cols();
                let ga = slot(grads, *a, g.len());
                for ((y, gy), gx) in out.chunks(cols).zip(g.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    let total = gy.iter().fold(T::zero(), |s, &d| s + d);
                    for j in 0..cols {
                        gx[j] = gx[j] + gy[j] - y[j].fast_exp() * total;
                    }
                }
            }
            Op::CrossEntropy { a, targets, lse } => {
                let av = self.value(*a).data();
                let cols = self.value(*a).cols();
                let ga = slot(grads, *a, av.len());
                for (r, ((row, gx), &t)) in av.chunks(cols).zip(ga.chunks_mut(cols)).zip(targets).enumerate() {
                    let (d, l) = (g[r], lse[r]);
                    for (x, &v) in gx.iter_mut().zip(row) {
                        *x = *x + d * (v - l).fast_exp();
                    }
                    gx[t] = gx[t] - d;
                }
            }
            Op::LayerNorm { x, gain, bias, rstd } => {
                // x̂ is recomputed from the input; (y - b) / g breaks down for g ≈ 0.
                let cols = node.value.cols();
                let nf = T::from_usize(cols).unwrap();
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                let rows = xv.len() / cols;
                let mut xhat = vec![T::zero(); cols];
                let mut dxhat = vec![T::zero(); cols];
                let mut dgain = vec![T::zero(); cols];
                let mut dbias = vec![T::zero(); cols];
                let need_x = self.needs(*x);
                let mut dx_all = if need_x { vec![T::zero(); xv.len()] } else { Vec::new() };
                for r in 0..rows {
                    let row = &xv[r * cols..(r + 1) * cols];
                    let gy = &g[r * cols..(r + 1) * cols];
                    let mean = row.iter().fold(T::zero(), |s, &v| s + v) / nf;
                    let rs = rstd[r];
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..cols {
                        xhat[j] = (row[j] - mean) * rs;
                        dxhat[j] = gy[j] * gv[j];
                        dgain[j] = dgain[j] + gy[j] * xhat[j];
                        dbias[j] = dbias[j] + gy[j];
                        m1 = m1 + dxhat[j];
                        m2 = m2 + dxhat[j] * xhat[j];
                    }
                    if need_x {
                        m1 = m1 / nf;
                        m2 = m2 / nf;
                        let dx = &mut dx_all[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dx[j] = rs * (dxhat[j] - m1 - xhat[j] * m2);
                        }
                    }
                }
                if need_x {
                    accumulate(slot(grads, *x, xv.len()), &dx_all);
                }
                if self.needs(*gain) {
                    accumulate(slot(grads, *gain, cols), &dgain);
                }
                if self.needs(*bias) {
                    accumulate(slot(grads, *bias, cols), &dbias);
                }
            }
            Op::Embedding { table, indices } => {
                let tlen = self.value(*table).len();
                let n = self.value(*table).cols();
                let gt = slot(grads, *table, tlen);
                for (r, &i) in indices.iter().enumerate() {
                    let dst = &mut gt[i * n..(i + 1) * n];
                    for (d, &s) in dst.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                        *d = *d + s;
                    }
                }
            }
            Op::Pick { a, indices } => {
                let alen = self.value(*a).len();
                let cols = self.value(*a).cols();
                let ga = slot(grads, *a, alen);
                for (r, &c) in indices.iter().enumerate() {
                    ga[r * cols + c] = ga[r * cols + c] + g[r];
                }
            }
            Op::Sum { a } => {
                let alen = self.value(*a).len();
                let ga = slot(grads, *a, alen);
                for x in ga.iter_mut() {
                    *x = *x + g[0];
                }
            }
            Op::Mean { a } => {
                let alen = self.value(*a).len();
                let d = g[0] / T::from_usize(alen).unwrap();
                let ga = slot(grads, *a, alen);
                for x in ga.iter_mut() {
                    *x = *x + d;
                }
            }
            Op::Reshape { a } => {
                accumulate(slot(grads, *a, g.len()), g);
            }
            Op::Permute { a, perm } => {
                let in_shape = self.shape(*a).to_vec();
                let ga = slot(grads, *a, g.len());
                permute_into(g, &in_shape, perm, ga, true);
            }
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Forward: `out[perm-index] = src[index]`. With `reverse`, `src` is laid out
/// in permuted order and is added back into `out` in the original order.
fn permute_into<T: Scalar>(src: &[T], in_shape: &[usize], perm: &[usize], out: &mut [T], reverse: bool) {
    let nd = in_shape.len();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mut idx = vec![0usize; nd];
    for o in 0..src.len() {
        let i: usize = (0..nd).map(|d| idx[d] * in_strides[perm[d]]).sum();
        if reverse {
            out[i] = out[i] + src[o];
        } else {
            out[o] = src[i];
        }
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

// 0.5·x·(1 + tanh(u)) rewritten as x·σ(2u): one exp instead of a tanh.
fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(2.0 * GELU_C);
    let k = T::from_f64_lossy(GELU_K);
    x / (T::one() + (-(c * (x + k * x * x * x))).fast_exp())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let k = T::from_f64_lossy(GELU_K);
    let two = T::from_f64_lossy(2.0);
    let three = T::from_f64_lossy(3.0);
    let s = T::one() / (T::one() + (-(two * c * (x + k * x * x * x))).fast_exp());
    s + two * x * s * (T::one() - s) * c * (T::one() + three * k * x * x)
}
