//! Reverse-mode automatic differentiation over 2-D row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] rather than copied, and [`Tape::backward`]
//! returns gradients keyed by parameter name. Tapes are single-threaded;
//! data-parallel training builds one tape per sample and sums the gradients
//! in sample order so the reduction is independent of the thread count.

use std::collections::HashMap;
use std::rc::Rc;

use super::{Array, Grads, NumError, ParamStore};

/// Variance floor inside layer normalization.
pub const LN_EPS: f64 = 1e-9;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Owned row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "Mat::new shape mismatch");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Copy)]
struct View<'v> {
    rows: usize,
    cols: usize,
    data: &'v [f64],
}

impl View<'_> {
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Sparse row-combination matrix: output row `r` is the weighted sum of the
/// listed table rows. Rows without entries produce zeros.
#[derive(Clone, Debug, Default)]
pub struct SparseRows {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SparseRows {
    pub fn new() -> Self {
        Self { offsets: vec![0], entries: Vec::new() }
    }

    /// One-hot selection of `index` rows.
    pub fn select(index: &[usize]) -> Self {
        let mut s = Self::new();
        for &i in index {
            s.push_row(&[(i, 1.0)]);
        }
        s
    }

    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        self.entries.extend_from_slice(entries);
        self.offsets.push(self.entries.len());
    }

    pub fn push_empty(&mut self) {
        self.offsets.push(self.entries.len());
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn is_all_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|e| e.0).max()
    }
}

enum Value<'a> {
    Owned(Mat),
    Param(&'a Array),
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    MulConst(Var, Rc<[f64]>),
    Reshape(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Gather { table: Var, index: Rc<SparseRows> },
    ConcatRows(Var, Var),
    AttnProbs { q: Var, k: Var, bias: Option<Var>, heads: usize, scale: f64, key_mask: Rc<[bool]> },
    AttnApply { probs: Var, v: Var, heads: usize },
    HeadMean { probs: Var, heads: usize },
    GaussianBasis { means: Var, log_widths: Var, dist: Rc<[f64]> },
    Equivariant { attn: Var, z: Var, dirs: Rc<[[f64; 3]]>, rows: Rc<[usize]> },
    NormalizeRows { x: Var, norms: Vec<f64> },
    CrossEntropy { logits: Var, targets: Rc<[usize]>, probs: Vec<f64> },
    BceLogits { logits: Var, targets: Rc<[f64]> },
    MeanSqRows { pred: Var, target: Rc<[f64]> },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulBT(..) => "matmul_bt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::AddConst(..) => "add_const",
            Op::Scale(..) => "scale",
            Op::MulConst(..) => "mul_const",
            Op::Reshape(..) => "reshape",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Gather { .. } => "gather",
            Op::ConcatRows(..) => "concat_rows",
            Op::AttnProbs { .. } => "attn_probs",
            Op::AttnApply { .. } => "attn_apply",
            Op::HeadMean { .. } => "head_mean",
            Op::GaussianBasis { .. } => "gaussian_basis",
            Op::Equivariant { .. } => "equivariant",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::BceLogits { .. } => "bce_logits",
            Op::MeanSqRows { .. } => "mean_sq_rows",
            Op::Sum(..) => "sum",
        }
    }
}

struct Node<'a> {
    value: Value<'a>,
    rows: usize,
    cols: usize,
    op: Op,
}

/// Recording of one forward computation.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node<'a>>,
    param_vars: HashMap<String, Var>,
    nonfinite: Option<&'static str>,
}

/// Per-node gradients produced by a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// GELU with the tanh approximation (constants sqrt(2/pi) and 0.044715).
pub fn gelu_scalar(x: f64) -> f64 {
    gelu(x)
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // SAFETY: slice lengths cover the strided extents asserted by callers;
    // c is a dense m×n row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_into(acc: &mut Option<Vec<f64>>, g: &[f64]) {
    match acc {
        Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += *y),
        None => *acc = Some(g.to_vec()),
    }
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store, nodes: Vec::new(), param_vars: HashMap::new(), nonfinite: None }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    fn view(&self, v: Var) -> View<'_> {
        let node = &self.nodes[v.0];
        let data = match &node.value {
            Value::Owned(m) => m.data.as_slice(),
            Value::Param(a) => a.data(),
        };
        View { rows: node.rows, cols: node.cols, data }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.view(v).data
    }

    pub fn value_mat(&self, v: Var) -> Mat {
        let w = self.view(v);
        Mat::new(w.rows, w.cols, w.data.to_vec())
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let w = self.view(v);
        debug_assert_eq!(w.data.len(), 1);
        w.data[0]
    }

    /// Errors if any recorded value was NaN or infinite.
    pub fn check_finite(&self) -> Result<(), NumError> {
        match self.nonfinite {
            Some(op) => Err(NumError::NonFinite(format!("forward op `{op}`"))),
            None => Ok(()),
        }
    }

    fn push(&mut self, m: Mat, op: Op) -> Var {
        if self.nonfinite.is_none() && m.data.iter().any(|x| !x.is_finite()) {
            self.nonfinite = Some(op.name());
        }
        let (rows, cols) = (m.rows, m.cols);
        self.nodes.push(Node { value: Value::Owned(m), rows, cols, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var, NumError> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let arr = self.store.get(name).ok_or_else(|| NumError::UnknownParam(name.to_string()))?;
        let (rows, cols) = (arr.rows(), arr.cols());
        self.nodes.push(Node { value: Value::Param(arr), rows, cols, op: Op::Param });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.view(a), self.view(b));
        assert_eq!(va.cols, vb.rows, "matmul inner dimension");
        let (m, k, n) = (va.rows, va.cols, vb.cols);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data, (k as isize, 1), vb.data, (n as isize, 1), &mut out, 0.0);
        self.push(Mat::new(m, n, out), Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.view(a), self.view(b));
        assert_eq!(va.cols, vb.cols, "matmul_bt inner dimension");
        let (m, k, n) = (va.rows, va.cols, vb.rows);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data, (k as isize, 1), vb.data, (1, k as isize), &mut out, 0.0);
        self.push(Mat::new(m, n, out), Op::MatMulBT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.view(a), self.view(b));
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "add shape");
        let data = va.data.iter().zip(vb.data).map(|(x, y)| x + y).collect();
        let (r, c) = (va.rows, va.cols);
        self.push(Mat::new(r, c, data), Op::Add(a, b))
    }

    /// Adds the 1×c row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.view(a), self.view(b));
        assert_eq!(vb.rows * vb.cols, va.cols, "add_row width");
        let mut data = va.data.to_vec();
        for row in data.chunks_mut(va.cols.max(1)) {
            row.iter_mut().zip(vb.data).for_each(|(x, y)| *x += *y);
        }
        let (r, c) = (va.rows, va.cols);
        self.push(Mat::new(r, c, data), Op::AddRow(a, b))
    }

    /// Adds a constant matrix (no gradient flows to the constant).
    pub fn add_const(&mut self, a: Var, c: &[f64]) -> Var {
        let va = self.view(a);
        assert_eq!(va.data.len(), c.len(), "add_const shape");
        let data = va.data.iter().zip(c).map(|(x, y)| x + y).collect();
        let (r, cc) = (va.rows, va.cols);
        self.push(Mat::new(r, cc, data), Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let va = self.view(a);
        let data = va.data.iter().map(|x| x * s).collect();
        let (r, c) = (va.rows, va.cols);
        self.push(Mat::new(r, c, data), Op::Scale(a, s))
    }

    /// Element-wise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Rc<[f64]>) -> Var {
        let va = self.view(a);
        assert_eq!(va.data.len(), c.len(), "mul_const shape");
        let data = va.data.iter().zip(c.iter()).map(|(x, y)| x * y).collect();
        let (r, cc) = (va.rows, va.cols);
        self.push(Mat::new(r, cc, data), Op::MulConst(a, c))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let va = self.view(a);
        assert_eq!(va.data.len(), rows * cols, "reshape size");
        let data = va.data.to_vec();
        self.push(Mat::new(rows, cols, data), Op::Reshape(a))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (each 1×c).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (vx, vg, vb) = (self.view(x), self.view(gamma), self.view(beta));
        let c = vx.cols;
        assert_eq!(vg.data.len(), c, "layer_norm gamma");
        assert_eq!(vb.data.len(), c, "layer_norm beta");
        let mut xhat = vec![0.0; vx.data.len()];
        let mut inv_std = vec![0.0; vx.rows];
        let mut out = vec![0.0; vx.data.len()];
        for r in 0..vx.rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = h * vg.data[j] + vb.data[j];
            }
        }
        let rows = vx.rows;
        self.push(Mat::new(rows, c, out), Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let va = self.view(a);
        let data = va.data.iter().map(|&x| gelu(x)).collect();
        let (r, c) = (va.rows, va.cols);
        self.push(Mat::new(r, c, data), Op::Gelu(a))
    }

    /// Sparse row combination of `table` (embedding lookups, bias tables).
    pub fn gather(&mut self, table: Var, index: Rc<SparseRows>) -> Var {
        let vt = self.view(table);
        if let Some(mx) = index.max_index() {
            assert!(mx < vt.rows, "gather index {mx} out of {} rows", vt.rows);
        }
        let c = vt.cols;
        let mut out = vec![0.0; index.n_rows() * c];
        for r in 0..index.n_rows() {
            let dst = &mut out[r * c..(r + 1) * c];
            for &(i, w) in index.row(r) {
                dst.iter_mut().zip(vt.row(i)).for_each(|(d, s)| *d += w * s);
            }
        }
        let n = index.n_rows();
        self.push(Mat::new(n, c, out), Op::Gather { table, index })
    }

    pub fn select_rows(&mut self, table: Var, rows: &[usize]) -> Var {
        self.gather(table, Rc::new(SparseRows::select(rows)))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.view(a), self.view(b));
        assert_eq!(va.cols, vb.cols, "concat_rows width");
        let mut data = va.data.to_vec();
        data.extend_from_slice(vb.data);
        let (r, c) = (va.rows + vb.rows, va.cols);
        self.push(Mat::new(r, c, data), Op::ConcatRows(a, b))
    }

    /// Multi-head attention probabilities.
    ///
    /// `q`, `k` are n×d with heads occupying contiguous column blocks; `bias`
    /// is (n·n)×heads with row `i·n + j`. Keys with `key_mask[j] == false`
    /// receive probability exactly 0 and masked query rows are all zero.
    /// Output row `h·n + i` holds head `h`'s distribution for query `i`.
    pub fn attn_probs(&mut self, q: Var, k: Var, bias: Option<Var>, heads: usize, key_mask: Rc<[bool]>) -> Var {
        let (vq, vk) = (self.view(q), self.view(k));
        let (n, d) = (vq.rows, vq.cols);
        assert_eq!((vk.rows, vk.cols), (n, d), "attn q/k shape");
        assert_eq!(d % heads, 0, "hidden not divisible by heads");
        assert_eq!(key_mask.len(), n, "key mask length");
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let vb = bias.map(|b| self.view(b));
        if let Some(vb) = vb {
            assert_eq!((vb.rows, vb.cols), (n * n, heads), "attn bias shape");
        }
        let mut out = vec![0.0; heads * n * n];
        let mut logits = vec![0.0; n];
        for h in 0..heads {
            for i in 0..n {
                if !key_mask[i] {
                    continue;
                }
                let qi = &vq.row(i)[h * dk..(h + 1) * dk];
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    if !key_mask[j] {
                        continue;
                    }
                    let kj = &vk.row(j)[h * dk..(h + 1) * dk];
                    let mut s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    if let Some(vb) = vb {
                        s += vb.data[(i * n + j) * heads + h];
                    }
                    logits[j] = s;
                    mx = mx.max(s);
                }
                let row = &mut out[(h * n + i) * n..(h * n + i + 1) * n];
                let mut z = 0.0;
                for j in 0..n {
                    if key_mask[j] {
                        let e = (logits[j] - mx).exp();
                        row[j] = e;
                        z += e;
                    }
                }
                for j in 0..n {
                    if key_mask[j] {
                        row[j] /= z;
                    }
                }
            }
        }
        self.push(Mat::new(heads * n, n, out), Op::AttnProbs { q, k, bias, heads, scale, key_mask })
    }

    /// Applies (heads·n)×n probabilities to n×d values.
    pub fn attn_apply(&mut self, probs: Var, v: Var, heads: usize) -> Var {
        let (vp, vv) = (self.view(probs), self.view(v));
        let (n, d) = (vv.rows, vv.cols);
        assert_eq!((vp.rows, vp.cols), (heads * n, n), "attn_apply probs shape");
        let dk = d / heads;
        let mut out = vec![0.0; n * d];
        for h in 0..heads {
            for i in 0..n {
                let p = vp.row(h * n + i);
                let dst = &mut out[i * d + h * dk..i * d + (h + 1) * dk];
                for (j, &w) in p.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let src = &vv.row(j)[h * dk..(h + 1) * dk];
                    dst.iter_mut().zip(src).for_each(|(a, b)| *a += w * b);
                }
            }
        }
        self.push(Mat::new(n, d, out), Op::AttnApply { probs, v, heads })
    }

    /// Mean over heads of (heads·n)×n probabilities → n×n.
    pub fn head_mean(&mut self, probs: Var, heads: usize) -> Var {
        let vp = self.view(probs);
        let n = vp.cols;
        let mut out = vec![0.0; n * n];
        for h in 0..heads {
            for (o, p) in out.iter_mut().zip(&vp.data[h * n * n..(h + 1) * n * n]) {
                *o += p;
            }
        }
        let inv = 1.0 / heads as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        self.push(Mat::new(n, n, out), Op::HeadMean { probs, heads })
    }

    /// Gaussian kernels `exp(-((d - mean)/width)² / 2)` with `width = exp(log_width)`.
    /// Output is m×K for m distances.
    pub fn gaussian_basis(&mut self, dist: Rc<[f64]>, means: Var, log_widths: Var) -> Var {
        let (vm, vw) = (self.view(means), self.view(log_widths));
        let k = vm.data.len();
        assert_eq!(vw.data.len(), k, "gaussian basis kernel count");
        let mut out = vec![0.0; dist.len() * k];
        for (r, &d) in dist.iter().enumerate() {
            for c in 0..k {
                let s = vw.data[c].exp();
                let u = (d - vm.data[c]) / s;
                out[r * k + c] = (-0.5 * u * u).exp();
            }
        }
        let m = dist.len();
        self.push(Mat::new(m, k, out), Op::GaussianBasis { means, log_widths, dist })
    }

    /// Equivariant vector readout: for each listed row `i`,
    /// `out[i][c] = Σ_j attn[i][j] · dirs[i·n + j][c] · z[j]`.
    pub fn equivariant(&mut self, attn: Var, z: Var, dirs: Rc<[[f64; 3]]>, rows: Rc<[usize]>) -> Var {
        let (va, vz) = (self.view(attn), self.view(z));
        let n = va.cols;
        assert_eq!(va.rows, n, "equivariant attn must be square");
        assert_eq!(vz.data.len(), n, "equivariant z length");
        assert_eq!(dirs.len(), n * n, "equivariant dirs length");
        let mut out = vec![0.0; rows.len() * 3];
        for (r, &i) in rows.iter().enumerate() {
            let arow = va.row(i);
            let mut acc = [0.0; 3];
            for j in 0..n {
                let w = arow[j] * vz.data[j];
                let dv = dirs[i * n + j];
                acc[0] += w * dv[0];
                acc[1] += w * dv[1];
                acc[2] += w * dv[2];
            }
            out[r * 3..r * 3 + 3].copy_from_slice(&acc);
        }
        let m = rows.len();
        self.push(Mat::new(m, 3, out), Op::Equivariant { attn, z, dirs, rows })
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let vx = self.view(x);
        let mut norms = vec![0.0; vx.rows];
        let mut out = vx.data.to_vec();
        for r in 0..vx.rows {
            let nrm = vx.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms[r] = nrm;
            out[r * vx.cols..(r + 1) * vx.cols].iter_mut().for_each(|v| *v /= nrm);
        }
        let (r, c) = (vx.rows, vx.cols);
        self.push(Mat::new(r, c, out), Op::NormalizeRows { x, norms })
    }

    /// Mean softmax cross-entropy over rows.
    pub fn cross_entropy(&mut self, logits: Var, targets: Rc<[usize]>) -> Var {
        let vl = self.view(logits);
        assert_eq!(vl.rows, targets.len(), "cross_entropy targets");
        let c = vl.cols;
        let mut probs = vec![0.0; vl.data.len()];
        let mut loss = 0.0;
        for r in 0..vl.rows {
            let row = vl.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            loss += lse - row[targets[r]];
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
        }
        let m = vl.rows.max(1) as f64;
        self.push(Mat::new(1, 1, vec![loss / m]), Op::CrossEntropy { logits, targets, probs })
    }

    /// Mean binary cross-entropy on logits (m×1) against 0/1 targets.
    pub fn bce_logits(&mut self, logits: Var, targets: Rc<[f64]>) -> Var {
        let vl = self.view(logits);
        assert_eq!(vl.data.len(), targets.len(), "bce targets");
        let mut loss = 0.0;
        for (&x, &y) in vl.data.iter().zip(targets.iter()) {
            // softplus(x) - y·x, written to avoid overflow
            let sp = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
            loss += sp - y * x;
        }
        let m = targets.len().max(1) as f64;
        self.push(Mat::new(1, 1, vec![loss / m]), Op::BceLogits { logits, targets })
    }

    /// `(1/m) Σ_rows ‖pred_r − target_r‖²` for m rows.
    pub fn mean_sq_rows(&mut self, pred: Var, target: Rc<[f64]>) -> Var {
        let vp = self.view(pred);
        assert_eq!(vp.data.len(), target.len(), "mean_sq_rows shape");
        let s: f64 = vp.data.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
        let m = vp.rows.max(1) as f64;
        self.push(Mat::new(1, 1, vec![s / m]), Op::MeanSqRows { pred, target })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.view(a).data.iter().sum();
        self.push(Mat::new(1, 1, vec![s]), Op::Sum(a))
    }

    /// Backward sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients, NumError> {
        let n = self.view(out).data.len();
        if n != 1 {
            return Err(NumError::ShapeMismatch {
                context: "backward requires a scalar".into(),
                expected: vec![1],
                got: vec![n],
            });
        }
        self.backward_seeded(out, &[1.0])
    }

    /// Backward sweep with an explicit upstream gradient for `out`.
    pub fn backward_seeded(&self, out: Var, seed: &[f64]) -> Result<Gradients, NumError> {
        self.check_finite()?;
        let len = self.view(out).data.len();
        if seed.len() != len {
            return Err(NumError::ShapeMismatch {
                context: "backward seed".into(),
                expected: vec![len],
                got: vec![seed.len()],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed.to_vec());
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        if grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(NumError::NonFinite("backward".into()));
        }
        Ok(Gradients { grads })
    }

    /// Collects gradients of every bound parameter.
    pub fn param_grads(&self, g: &Gradients) -> Grads {
        let mut out = Grads::new();
        for (name, &v) in self.param_vars.iter() {
            let arr = self.store.get(name).expect("bound parameter exists");
            let data = match g.get(v) {
                Some(d) => d.to_vec(),
                None => vec![0.0; arr.len()],
            };
            out.insert(name.clone(), Array::new(arr.shape().to_vec(), data).expect("finite grads"));
        }
        out
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.view(*a), self.view(*b));
                let (m, k, n) = (va.rows, va.cols, vb.cols);
                // dA = G · Bᵀ ; dB = Aᵀ · G
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g, (n as isize, 1), vb.data, (1, n as isize), &mut da, 0.0);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, va.data, (1, k as isize), g, (n as isize, 1), &mut db, 0.0);
                add_into(&mut grads[a.0], &da);
                add_into(&mut grads[b.0], &db);
            }
            Op::MatMulBT(a, b) => {
                let (va, vb) = (self.view(*a), self.view(*b));
                let (m, k, n) = (va.rows, va.cols, vb.rows);
                // C = A·Bᵀ: dA = G·B ; dB = Gᵀ·A
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g, (n as isize, 1), vb.data, (k as isize, 1), &mut da, 0.0);
                let mut db = vec![0.0; n * k];
                gemm(n, m, k, g, (1, n as isize), va.data, (k as isize, 1), &mut db, 0.0);
                add_into(&mut grads[a.0], &da);
                add_into(&mut grads[b.0], &db);
            }
            Op::Add(a, b) => {
                add_into(&mut grads[a.0], g);
                add_into(&mut grads[b.0], g);
            }
            Op::AddRow(a, b) => {
                add_into(&mut grads[a.0], g);
                let c = node.cols;
                let mut db = vec![0.0; c];
                for row in g.chunks(c.max(1)) {
                    db.iter_mut().zip(row).for_each(|(d, x)| *d += *x);
                }
                add_into(&mut grads[b.0], &db);
            }
            Op::AddConst(a) | Op::Reshape(a) => add_into(&mut grads[a.0], g),
            Op::Scale(a, s) => {
                let d: Vec<f64> = g.iter().map(|x| x * s).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::MulConst(a, c) => {
                let d: Vec<f64> = g.iter().zip(c.iter()).map(|(x, y)| x * y).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let vg = self.view(*gamma);
                let c = node.cols;
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                for r in 0..node.rows {
                    let gr = &g[r * c..(r + 1) * c];
                    let hr = &xhat[r * c..(r + 1) * c];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..c {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        dxhat[j] = gr[j] * vg.data[j];
                        mean_dh += dxhat[j];
                        mean_dh_h += dxhat[j] * hr[j];
                    }
                    mean_dh /= c as f64;
                    mean_dh_h /= c as f64;
                    for j in 0..c {
                        dx[r * c + j] = inv_std[r] * (dxhat[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                add_into(&mut grads[x.0], &dx);
                add_into(&mut grads[gamma.0], &dgamma);
                add_into(&mut grads[beta.0], &dbeta);
            }
            Op::Gelu(a) => {
                let va = self.view(*a);
                let d: Vec<f64> = g.iter().zip(va.data).map(|(gg, &x)| gg * gelu_grad(x)).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Gather { table, index } => {
                let vt = self.view(*table);
                let c = vt.cols;
                let mut dt = vec![0.0; vt.data.len()];
                for r in 0..index.n_rows() {
                    let gr = &g[r * c..(r + 1) * c];
                    for &(i, w) in index.row(r) {
                        dt[i * c..(i + 1) * c].iter_mut().zip(gr).for_each(|(d, x)| *d += w * x);
                    }
                }
                add_into(&mut grads[table.0], &dt);
            }
            Op::ConcatRows(a, b) => {
                let na = self.view(*a).data.len();
                add_into(&mut grads[a.0], &g[..na]);
                add_into(&mut grads[b.0], &g[na..]);
            }
            Op::AttnProbs { q, k, bias, heads, scale, key_mask } => {
                let (vq, vk) = (self.view(*q), self.view(*k));
                let p = self.view(Var(idx));
                let (n, d) = (vq.rows, vq.cols);
                let heads = *heads;
                let dk = d / heads;
                let mut dq = vec![0.0; n * d];
                let mut dkm = vec![0.0; n * d];
                let mut dbias = bias.map(|_| vec![0.0; n * n * heads]);
                let mut ds = vec![0.0; n];
                for h in 0..heads {
                    for i in 0..n {
                        if !key_mask[i] {
                            continue;
                        }
                        let r = h * n + i;
                        let pr = p.row(r);
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            ds[j] = pr[j] * (gr[j] - dot);
                        }
                        if let Some(db) = dbias.as_mut() {
                            for j in 0..n {
                                db[(i * n + j) * heads + h] += ds[j];
                            }
                        }
                        let qi = &vq.row(i)[h * dk..(h + 1) * dk];
                        for j in 0..n {
                            let w = ds[j] * scale;
                            if w == 0.0 {
                                continue;
                            }
                            let kj = &vk.row(j)[h * dk..(h + 1) * dk];
                            let dqi = &mut dq[i * d + h * dk..i * d + (h + 1) * dk];
                            dqi.iter_mut().zip(kj).for_each(|(a, b)| *a += w * b);
                            let dkj = &mut dkm[j * d + h * dk..j * d + (h + 1) * dk];
                            dkj.iter_mut().zip(qi).for_each(|(a, b)| *a += w * b);
                        }
                    }
                }
                add_into(&mut grads[q.0], &dq);
                add_into(&mut grads[k.0], &dkm);
                if let (Some(b), Some(db)) = (bias, dbias) {
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::AttnApply { probs, v, heads } => {
                let (vp, vv) = (self.view(*probs), self.view(*v));
                let (n, d) = (vv.rows, vv.cols);
                let heads = *heads;
                let dk = d / heads;
                let mut dp = vec![0.0; heads * n * n];
                let mut dv = vec![0.0; n * d];
                for h in 0..heads {
                    for i in 0..n {
                        let gi = &g[i * d + h * dk..i * d + (h + 1) * dk];
                        let pr = vp.row(h * n + i);
                        for j in 0..n {
                            let vj = &vv.row(j)[h * dk..(h + 1) * dk];
                            dp[(h * n + i) * n + j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                            let w = pr[j];
                            if w != 0.0 {
                                let dvj = &mut dv[j * d + h * dk..j * d + (h + 1) * dk];
                                dvj.iter_mut().zip(gi).for_each(|(a, b)| *a += w * b);
                            }
                        }
                    }
                }
                add_into(&mut grads[probs.0], &dp);
                add_into(&mut grads[v.0], &dv);
            }
            Op::HeadMean { probs, heads } => {
                let inv = 1.0 / *heads as f64;
                let mut dp = Vec::with_capacity(g.len() * heads);
                for _ in 0..*heads {
                    dp.extend(g.iter().map(|x| x * inv));
                }
                add_into(&mut grads[probs.0], &dp);
            }
            Op::GaussianBasis { means, log_widths, dist } => {
                let (vm, vw) = (self.view(*means), self.view(*log_widths));
                let out = self.view(Var(idx));
                let k = vm.data.len();
                let mut dm = vec![0.0; k];
                let mut dw = vec![0.0; k];
                for (r, &d) in dist.iter().enumerate() {
                    for c in 0..k {
                        let s = vw.data[c].exp();
                        let u = (d - vm.data[c]) / s;
                        let f = out.data[r * k + c] * g[r * k + c];
                        dm[c] += f * u / s;
                        dw[c] += f * u * u;
                    }
                }
                add_into(&mut grads[means.0], &dm);
                add_into(&mut grads[log_widths.0], &dw);
            }
            Op::Equivariant { attn, z, dirs, rows } => {
                let (va, vz) = (self.view(*attn), self.view(*z));
                let n = va.cols;
                let mut da = vec![0.0; n * n];
                let mut dz = vec![0.0; n];
                for (r, &i) in rows.iter().enumerate() {
                    let gr = &g[r * 3..r * 3 + 3];
                    let arow = va.row(i);
                    for j in 0..n {
                        let dv = dirs[i * n + j];
                        let proj = gr[0] * dv[0] + gr[1] * dv[1] + gr[2] * dv[2];
                        da[i * n + j] += proj * vz.data[j];
                        dz[j] += proj * arow[j];
                    }
                }
                add_into(&mut grads[attn.0], &da);
                add_into(&mut grads[z.0], &dz);
            }
            Op::NormalizeRows { x, norms } => {
                let y = self.view(Var(idx));
                let c = node.cols;
                let mut dx = vec![0.0; g.len()];
                for r in 0..node.rows {
                    let yr = y.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[r * c + j] = (gr[j] - yr[j] * dot) / norms[r];
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let vl = self.view(*logits);
                let c = vl.cols;
                let s = g[0] / vl.rows.max(1) as f64;
                let mut dl: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dl[r * c + t] -= s;
                }
                add_into(&mut grads[logits.0], &dl);
            }
            Op::BceLogits { logits, targets } => {
                let vl = self.view(*logits);
                let s = g[0] / targets.len().max(1) as f64;
                let dl: Vec<f64> =
                    vl.data.iter().zip(targets.iter()).map(|(&x, &y)| (1.0 / (1.0 + (-x).exp()) - y) * s).collect();
                add_into(&mut grads[logits.0], &dl);
            }
            Op::MeanSqRows { pred, target } => {
                let vp = self.view(*pred);
                let s = 2.0 * g[0] / vp.rows.max(1) as f64;
                let dp: Vec<f64> = vp.data.iter().zip(target.iter()).map(|(p, t)| (p - t) * s).collect();
                add_into(&mut grads[pred.0], &dp);
            }
            Op::Sum(a) => {
                let n = self.view(*a).data.len();
                add_into(&mut grads[a.0], &vec![g[0]; n]);
            }
        }
    }
}
