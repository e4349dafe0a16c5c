//! Tape-based reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Graph`] records every operation as a node; [`Graph::backward`] walks
//! the tape in reverse and accumulates gradients. Everything is
//! single-threaded and allocation-ordered, so a fixed seed gives
//! bit-identical results across runs.

use crate::{Mat, Real};
use ndarray::{s, Axis};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// 2-D convolution geometry for [`Graph::conv2d`]. The input packs
/// channels into columns as `col = freq * cin + channel`.
#[derive(Debug, Clone, Copy)]
pub struct Conv2dSpec {
    pub cin: usize,
    pub cout: usize,
    /// Number of frequency bins.
    pub f: usize,
    /// Kernel size along time.
    pub kt: usize,
    /// Kernel size along frequency.
    pub kf: usize,
    pub stride_t: usize,
}

impl Conv2dSpec {
    pub fn out_rows(&self, in_rows: usize) -> usize {
        in_rows.div_ceil(self.stride_t)
    }

    pub fn kernel_shape(&self) -> (usize, usize) {
        (self.kt * self.kf * self.cin, self.cout)
    }
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, Real),
    AddScalar(NodeId),
    Recip(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    RowSoftmax(NodeId),
    RowLogSoftmax(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    Reshape(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    GatherRows(NodeId, Vec<usize>),
    Detach,
    Grl(NodeId, Real),
    Conv1dSame { x: NodeId, w: NodeId, k: usize },
    Conv2d { x: NodeId, w: NodeId, spec: Conv2dSpec },
}

struct Node {
    op: Op,
    value: Mat,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`NodeId`].
pub struct Grads {
    g: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&Mat> {
        self.g[id.0].as_ref()
    }
}

/// The autodiff tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid_scalar(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_scalar(x: Real) -> Real {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Mat, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A differentiable leaf (parameters are bound through this).
    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn constant_row(&mut self, row: &[Real]) -> NodeId {
        self.constant(Mat::from_shape_vec((1, row.len()), row.to_vec()).expect("row shape"))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape");
        let v = self.value(a) + self.value(b);
        let rg = self.needs(&[a, b]);
        self.push(Op::Add(a, b), v, rg)
    }

    /// Adds a 1-row matrix to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.value(row).nrows(), 1, "add_row wants a 1-row rhs");
        assert_eq!(self.value(a).ncols(), self.value(row).ncols(), "add_row width");
        let v = self.value(a) + &self.value(row).row(0);
        let rg = self.needs(&[a, row]);
        self.push(Op::AddRow(a, row), v, rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shape");
        let v = self.value(a) - self.value(b);
        let rg = self.needs(&[a, b]);
        self.push(Op::Sub(a, b), v, rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape");
        let v = self.value(a) * self.value(b);
        let rg = self.needs(&[a, b]);
        self.push(Op::Mul(a, b), v, rg)
    }

    pub fn scale(&mut self, a: NodeId, c: Real) -> NodeId {
        let v = self.value(a) * c;
        let rg = self.needs(&[a]);
        self.push(Op::Scale(a, c), v, rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: Real) -> NodeId {
        let v = self.value(a) + c;
        let rg = self.needs(&[a]);
        self.push(Op::AddScalar(a), v, rg)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| 1.0 / x);
        let rg = self.needs(&[a]);
        self.push(Op::Recip(a), v, rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.value(a).ncols(),
            self.value(b).nrows(),
            "matmul inner dims"
        );
        let v = self.value(a).dot(self.value(b));
        let rg = self.needs(&[a, b]);
        self.push(Op::MatMul(a, b), v, rg)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        let rg = self.needs(&[a]);
        self.push(Op::Transpose(a), v, rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(sigmoid_scalar);
        let rg = self.needs(&[a]);
        self.push(Op::Sigmoid(a), v, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(Real::tanh);
        let rg = self.needs(&[a]);
        self.push(Op::Tanh(a), v, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.needs(&[a]);
        self.push(Op::Relu(a), v, rg)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(softplus_scalar);
        let rg = self.needs(&[a]);
        self.push(Op::Softplus(a), v, rg)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(Real::exp);
        let rg = self.needs(&[a]);
        self.push(Op::Exp(a), v, rg)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let rg = self.needs(&[a]);
        self.push(Op::RowSoftmax(a), v, rg)
    }

    pub fn row_log_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            let lse = row.iter().map(|x| (x - m).exp()).sum::<Real>().ln() + m;
            row.mapv_inplace(|x| x - lse);
        }
        let rg = self.needs(&[a]);
        self.push(Op::RowLogSoftmax(a), v, rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).ncols();
        let rows: usize = parts.iter().map(|p| self.value(*p).nrows()).sum();
        let mut v = Mat::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let m = self.value(*p);
            v.slice_mut(s![at..at + m.nrows(), ..]).assign(m);
            at += m.nrows();
        }
        let rg = self.needs(parts);
        self.push(Op::ConcatRows(parts.to_vec()), v, rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut v = Mat::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let m = self.value(*p);
            v.slice_mut(s![.., at..at + m.ncols()]).assign(m);
            at += m.ncols();
        }
        let rg = self.needs(parts);
        self.push(Op::ConcatCols(parts.to_vec()), v, rg)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.needs(&[a]);
        self.push(Op::SliceRows(a, start, len), v, rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.needs(&[a]);
        self.push(Op::SliceCols(a, start, len), v, rg)
    }

    /// Row-major reinterpretation to a new shape with the same element count.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let m = self.value(a);
        assert_eq!(m.len(), rows * cols, "reshape element count");
        let flat: Vec<Real> = m.iter().cloned().collect();
        let v = Mat::from_shape_vec((rows, cols), flat).expect("reshape");
        let rg = self.needs(&[a]);
        self.push(Op::Reshape(a), v, rg)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(Op::SumAll(a), v, rg)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let v = Mat::from_elem((1, 1), m.sum() / m.len() as Real);
        let rg = self.needs(&[a]);
        self.push(Op::MeanAll(a), v, rg)
    }

    /// Selects rows of `table` by index (embedding lookup; repeats allowed).
    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Mat::zeros((idx.len(), t.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).assign(&t.row(i));
        }
        let rg = self.needs(&[table]);
        self.push(Op::GatherRows(table, idx.to_vec()), v, rg)
    }

    /// Stops gradient flow; the forward value passes through unchanged.
    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.push(Op::Detach, v, false)
    }

    /// Gradient reversal: identity forward, upstream gradient multiplied by
    /// `-scale` on the way back.
    pub fn grl(&mut self, a: NodeId, scale: Real) -> NodeId {
        let v = self.value(a).clone();
        let rg = self.needs(&[a]);
        self.push(Op::Grl(a, scale), v, rg)
    }

    fn conv1d_im2col(x: &Mat, k: usize) -> Mat {
        let (t_len, cin) = x.dim();
        let pad_l = (k - 1) / 2;
        let mut cols = Mat::zeros((t_len, k * cin));
        for t in 0..t_len {
            for j in 0..k {
                let src = t as isize - pad_l as isize + j as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                for c in 0..cin {
                    cols[[t, j * cin + c]] = x[[src as usize, c]];
                }
            }
        }
        cols
    }

    /// 1-D convolution along rows with zero padding ("same" length).
    /// `x`: T x Cin, `w`: (k*Cin) x Cout.
    pub fn conv1d_same(&mut self, x: NodeId, w: NodeId, k: usize) -> NodeId {
        let cin = self.value(x).ncols();
        assert_eq!(self.value(w).nrows(), k * cin, "conv1d kernel rows");
        let cols = Self::conv1d_im2col(self.value(x), k);
        let v = cols.dot(self.value(w));
        let rg = self.needs(&[x, w]);
        self.push(Op::Conv1dSame { x, w, k }, v, rg)
    }

    fn conv2d_im2col(x: &Mat, spec: &Conv2dSpec) -> Mat {
        let t_in = x.nrows();
        let t_out = spec.out_rows(t_in);
        let pad_t = (spec.kt - 1) / 2;
        let pad_f = (spec.kf - 1) / 2;
        let mut cols = Mat::zeros((t_out * spec.f, spec.kt * spec.kf * spec.cin));
        for to in 0..t_out {
            for fo in 0..spec.f {
                let row = to * spec.f + fo;
                for dt in 0..spec.kt {
                    let ti = (to * spec.stride_t) as isize - pad_t as isize + dt as isize;
                    if ti < 0 || ti >= t_in as isize {
                        continue;
                    }
                    for df in 0..spec.kf {
                        let fi = fo as isize - pad_f as isize + df as isize;
                        if fi < 0 || fi >= spec.f as isize {
                            continue;
                        }
                        for c in 0..spec.cin {
                            cols[[row, (dt * spec.kf + df) * spec.cin + c]] =
                                x[[ti as usize, fi as usize * spec.cin + c]];
                        }
                    }
                }
            }
        }
        cols
    }

    /// 2-D convolution over (time, frequency) with channels packed into
    /// columns; strided along time, "same" along frequency.
    /// `x`: T x (F*Cin), `w`: (kt*kf*Cin) x Cout, output: ceil(T/stride) x (F*Cout).
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, spec: Conv2dSpec) -> NodeId {
        assert_eq!(self.value(x).ncols(), spec.f * spec.cin, "conv2d input cols");
        assert_eq!(self.value(w).dim(), spec.kernel_shape(), "conv2d kernel");
        let t_out = spec.out_rows(self.value(x).nrows());
        let cols = Self::conv2d_im2col(self.value(x), &spec);
        let flat = cols.dot(self.value(w)); // (t_out*F) x Cout
        let mut v = Mat::zeros((t_out, spec.f * spec.cout));
        for to in 0..t_out {
            for fo in 0..spec.f {
                for c in 0..spec.cout {
                    v[[to, fo * spec.cout + c]] = flat[[to * spec.f + fo, c]];
                }
            }
        }
        let rg = self.needs(&[x, w]);
        self.push(Op::Conv2d { x, w, spec }, v, rg)
    }

    fn accumulate(grads: &mut [Option<Mat>], id: NodeId, delta: Mat) {
        match &mut grads[id.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    /// Reverse pass from a scalar (1x1) loss node.
    pub fn backward(&self, loss: NodeId) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward wants a scalar loss");
        let mut g: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = g[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    g[i] = Some(gout);
                    continue;
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        Self::accumulate(&mut g, *a, gout.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        Self::accumulate(&mut g, *b, gout.clone());
                    }
                }
                Op::AddRow(a, row) => {
                    if self.nodes[a.0].requires_grad {
                        Self::accumulate(&mut g, *a, gout.clone());
                    }
                    if self.nodes[row.0].requires_grad {
                        let summed = gout.sum_axis(Axis(0)).insert_axis(Axis(0));
                        Self::accumulate(&mut g, *row, summed);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        Self::accumulate(&mut g, *a, gout.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        Self::accumulate(&mut g, *b, -&gout);
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        Self::accumulate(&mut g, *a, &gout * self.value(*b));
                    }
                    if self.nodes[b.0].requires_grad {
                        Self::accumulate(&mut g, *b, &gout * self.value(*a));
                    }
                }
                Op::Scale(a, c) => {
                    Self::accumulate(&mut g, *a, &gout * *c);
                }
                Op::AddScalar(a) => {
                    Self::accumulate(&mut g, *a, gout);
                }
                Op::Recip(a) => {
                    let y = &self.nodes[i].value;
                    Self::accumulate(&mut g, *a, -(&gout * y * y));
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        Self::accumulate(&mut g, *a, gout.dot(&self.value(*b).t()));
                    }
                    if self.nodes[b.0].requires_grad {
                        Self::accumulate(&mut g, *b, self.value(*a).t().dot(&gout));
                    }
                }
                Op::Transpose(a) => {
                    Self::accumulate(&mut g, *a, gout.t().to_owned());
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let d = y.mapv(|v| v * (1.0 - v));
                    Self::accumulate(&mut g, *a, &gout * &d);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let d = y.mapv(|v| 1.0 - v * v);
                    Self::accumulate(&mut g, *a, &gout * &d);
                }
                Op::Relu(a) => {
                    let y = &self.nodes[i].value;
                    let d = y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    Self::accumulate(&mut g, *a, &gout * &d);
                }
                Op::Softplus(a) => {
                    let d = self.value(*a).mapv(sigmoid_scalar);
                    Self::accumulate(&mut g, *a, &gout * &d);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[i].value;
                    Self::accumulate(&mut g, *a, &gout * y);
                }
                Op::RowSoftmax(a) => {
                    let y = &self.nodes[i].value;
                    let mut da = Mat::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: Real = (0..y.ncols()).map(|c| gout[[r, c]] * y[[r, c]]).sum();
                        for c in 0..y.ncols() {
                            da[[r, c]] = y[[r, c]] * (gout[[r, c]] - dot);
                        }
                    }
                    Self::accumulate(&mut g, *a, da);
                }
                Op::RowLogSoftmax(a) => {
                    let y = &self.nodes[i].value;
                    let mut da = Mat::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let gsum: Real = (0..y.ncols()).map(|c| gout[[r, c]]).sum();
                        for c in 0..y.ncols() {
                            da[[r, c]] = gout[[r, c]] - y[[r, c]].exp() * gsum;
                        }
                    }
                    Self::accumulate(&mut g, *a, da);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let n = self.value(*p).nrows();
                        if self.nodes[p.0].requires_grad {
                            let piece = gout.slice(s![at..at + n, ..]).to_owned();
                            Self::accumulate(&mut g, *p, piece);
                        }
                        at += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let n = self.value(*p).ncols();
                        if self.nodes[p.0].requires_grad {
                            let piece = gout.slice(s![.., at..at + n]).to_owned();
                            Self::accumulate(&mut g, *p, piece);
                        }
                        at += n;
                    }
                }
                Op::SliceRows(a, start, len) => {
                    let mut da = Mat::zeros(self.value(*a).dim());
                    da.slice_mut(s![*start..*start + *len, ..]).assign(&gout);
                    Self::accumulate(&mut g, *a, da);
                }
                Op::SliceCols(a, start, len) => {
                    let mut da = Mat::zeros(self.value(*a).dim());
                    da.slice_mut(s![.., *start..*start + *len]).assign(&gout);
                    Self::accumulate(&mut g, *a, da);
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).dim();
                    let flat: Vec<Real> = gout.iter().cloned().collect();
                    let da = Mat::from_shape_vec(dim, flat).expect("reshape grad");
                    Self::accumulate(&mut g, *a, da);
                }
                Op::SumAll(a) => {
                    let da = Mat::from_elem(self.value(*a).dim(), gout[[0, 0]]);
                    Self::accumulate(&mut g, *a, da);
                }
                Op::MeanAll(a) => {
                    let m = self.value(*a);
                    let da = Mat::from_elem(m.dim(), gout[[0, 0]] / m.len() as Real);
                    Self::accumulate(&mut g, *a, da);
                }
                Op::GatherRows(table, idx) => {
                    let mut da = Mat::zeros(self.value(*table).dim());
                    for (r, &row) in idx.iter().enumerate() {
                        let mut dst = da.row_mut(row);
                        dst += &gout.row(r);
                    }
                    Self::accumulate(&mut g, *table, da);
                }
                Op::Detach => unreachable!("detach nodes never require grad"),
                Op::Grl(a, scale) => {
                    Self::accumulate(&mut g, *a, &gout * (-*scale));
                }
                Op::Conv1dSame { x, w, k } => {
                    let xv = self.value(*x);
                    let (t_len, cin) = xv.dim();
                    let cols = Self::conv1d_im2col(xv, *k);
                    if self.nodes[w.0].requires_grad {
                        Self::accumulate(&mut g, *w, cols.t().dot(&gout));
                    }
                    if self.nodes[x.0].requires_grad {
                        let dcols = gout.dot(&self.value(*w).t());
                        let pad_l = (*k - 1) / 2;
                        let mut dx = Mat::zeros((t_len, cin));
                        for t in 0..t_len {
                            for j in 0..*k {
                                let src = t as isize - pad_l as isize + j as isize;
                                if src < 0 || src >= t_len as isize {
                                    continue;
                                }
                                for c in 0..cin {
                                    dx[[src as usize, c]] += dcols[[t, j * cin + c]];
                                }
                            }
                        }
                        Self::accumulate(&mut g, *x, dx);
                    }
                }
                Op::Conv2d { x, w, spec } => {
                    let xv = self.value(*x);
                    let t_in = xv.nrows();
                    let t_out = spec.out_rows(t_in);
                    // Regroup upstream grad back to (t_out*F) x Cout.
                    let mut gflat = Mat::zeros((t_out * spec.f, spec.cout));
                    for to in 0..t_out {
                        for fo in 0..spec.f {
                            for c in 0..spec.cout {
                                gflat[[to * spec.f + fo, c]] = gout[[to, fo * spec.cout + c]];
                            }
                        }
                    }
                    let cols = Self::conv2d_im2col(xv, spec);
                    if self.nodes[w.0].requires_grad {
                        Self::accumulate(&mut g, *w, cols.t().dot(&gflat));
                    }
                    if self.nodes[x.0].requires_grad {
                        let dcols = gflat.dot(&self.value(*w).t());
                        let pad_t = (spec.kt - 1) / 2;
                        let pad_f = (spec.kf - 1) / 2;
                        let mut dx = Mat::zeros(xv.dim());
                        for to in 0..t_out {
                            for fo in 0..spec.f {
                                let row = to * spec.f + fo;
                                for dt in 0..spec.kt {
                                    let ti = (to * spec.stride_t) as isize - pad_t as isize
                                        + dt as isize;
                                    if ti < 0 || ti >= t_in as isize {
                                        continue;
                                    }
                                    for df in 0..spec.kf {
                                        let fi = fo as isize - pad_f as isize + df as isize;
                                        if fi < 0 || fi >= spec.f as isize {
                                            continue;
                                        }
                                        for c in 0..spec.cin {
                                            dx[[ti as usize, fi as usize * spec.cin + c]] += dcols
                                                [[row, (dt * spec.kf + df) * spec.cin + c]];
                                        }
                                    }
                                }
                            }
                        }
                        Self::accumulate(&mut g, *x, dx);
                    }
                }
            }
        }
        Grads { g }
    }

    // Composite helpers used across models.

    /// Mean squared difference of two same-shape nodes (scalar node).
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// Weighted cross entropy from logits. `targets[r]` is the class of row
    /// `r`; `weights` are per-row multipliers; the result is the weighted
    /// mean negative log-likelihood.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], weights: &[Real]) -> NodeId {
        let (rows, classes) = self.value(logits).dim();
        assert_eq!(rows, targets.len());
        assert_eq!(rows, weights.len());
        let wsum: Real = weights.iter().sum();
        let mut picks = Mat::zeros((rows, classes));
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            picks[[r, t]] = w;
        }
        let logsm = self.row_log_softmax(logits);
        let picks = self.constant(picks);
        let picked = self.mul(logsm, picks);
        let total = self.sum_all(picked);
        self.scale(total, -1.0 / wsum)
    }

    /// Binary cross entropy from logits against constant 0/1 targets, with
    /// per-element weights; returns the weighted mean.
    pub fn binary_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &Mat,
        weights: &Mat,
    ) -> NodeId {
        assert_eq!(self.value(logits).dim(), targets.dim());
        assert_eq!(targets.dim(), weights.dim());
        let wsum = weights.sum();
        let y = self.constant(targets.clone());
        let w = self.constant(weights.clone());
        let sp = self.softplus(logits);
        let xy = self.mul(logits, y);
        let elems = self.sub(sp, xy);
        let weighted = self.mul(elems, w);
        let total = self.sum_all(weighted);
        self.scale(total, 1.0 / wsum)
    }
}
