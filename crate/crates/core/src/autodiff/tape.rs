//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Operations are recorded in execution order, so the node list is already
//! topologically sorted; [`Tape::backward`] walks it once in reverse.
//! Parameter leaves borrow their tensors, so binding a large embedding
//! table costs nothing until a gradient for it is materialized.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::sync::Arc;

use super::tensor::{dot, matmul_nn, matmul_nt, matmul_tn, Real, Tensor};
use super::AutodiffError;

/// Negative slope used by the model's LeakyReLU activations.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Floor applied to row norms in release builds.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Row-to-group assignment for segment operations.
///
/// Groups may be arbitrary (not necessarily contiguous); every group id must
/// be below `num_groups`.
#[derive(Debug, Clone)]
pub struct Segments {
    ids: Arc<[usize]>,
    num_groups: usize,
}

impl Segments {
    pub fn new(ids: Vec<usize>, num_groups: usize) -> Self {
        assert!(
            ids.iter().all(|&g| g < num_groups),
            "segment id out of range (num_groups = {num_groups})"
        );
        Segments {
            ids: ids.into(),
            num_groups,
        }
    }

    /// Contiguous groups with the given sizes.
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(lengths.iter().sum());
        for (g, &len) in lengths.iter().enumerate() {
            ids.extend(std::iter::repeat_n(g, len));
        }
        Self::new(ids, lengths.len())
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_groups];
        for &g in self.ids.iter() {
            sizes[g] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleRows(Var, Var),
    RowDot(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    RowSoftmax(Var),
    RowLogSoftmax(Var),
    MeanRows(Var),
    WeightedSumRows(Var, Var),
    Sum(Var),
    GatherRows(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Segments),
    SegmentWeightedSum(Var, Var, Segments),
    L2NormalizeRows(Var),
    PickWeightedSum(Var, Arc<[(usize, usize, f64)]>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scalar_mul",
            Op::AddScalar(..) => "add_scalar",
            Op::ScaleRows(..) => "scale_rows",
            Op::RowDot(..) => "row_dot",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::RowSoftmax(..) => "row_softmax",
            Op::RowLogSoftmax(..) => "row_log_softmax",
            Op::MeanRows(..) => "mean_rows",
            Op::WeightedSumRows(..) => "weighted_sum_rows",
            Op::Sum(..) => "sum",
            Op::GatherRows(..) => "gather_rows",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::SegmentWeightedSum(..) => "segment_weighted_sum",
            Op::L2NormalizeRows(..) => "l2_normalize_rows",
            Op::PickWeightedSum(..) => "pick_weighted_sum",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ScaleRows(a, b)
            | Op::RowDot(a, b)
            | Op::WeightedSumRows(a, b)
            | Op::SegmentWeightedSum(a, b, _) => vec![*a, *b],
            Op::ConcatCols(v) | Op::ConcatRows(v) => v.clone(),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::SliceRows(a, ..)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::RowSoftmax(a)
            | Op::RowLogSoftmax(a)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::GatherRows(a, _)
            | Op::SegmentSoftmax(a, _)
            | Op::L2NormalizeRows(a)
            | Op::PickWeightedSum(a, _) => vec![*a],
        }
    }
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op,
    needs_grad: bool,
}

/// Records tensor operations for one forward pass.
pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable tensor; its gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: &'a Tensor<T>) -> Var {
        self.push_leaf(Cow::Borrowed(value), true)
    }

    /// Registers an owned trainable tensor.
    pub fn param_owned(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(value), true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(value), false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor<T>>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by {} (node {})",
            op.name(),
            self.nodes.len()
        );
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "{op} shape mismatch: {sa:?} vs {sb:?}");
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_nn(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_nt(self.value(a), self.value(b));
        self.push(v, Op::MatMulNT(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("add", a, b);
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("sub", a, b);
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("mul", a, b);
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds the `1 × c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sb[0] == 1 && sb[1] == sa[1],
            "add_row shape mismatch: {sa:?} vs {sb:?}"
        );
        let bias = self.value(b).data().to_vec();
        let mut v = self.value(a).clone();
        for r in 0..sa[0] {
            for (x, &b) in v.row_mut(r).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, b))
    }

    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Var {
        let st = T::from_f64_lossy(s);
        let v = self.value(a).map(|x| x * st);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let st = T::from_f64_lossy(s);
        let v = self.value(a).map(|x| x + st);
        self.push(v, Op::AddScalar(a))
    }

    /// Multiplies row `r` of `a` by `w[r]`; `w` is `n × 1`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Var {
        let (sa, sw) = (self.shape(a), self.shape(w));
        assert!(
            sw == [sa[0], 1],
            "scale_rows shape mismatch: {sa:?} vs {sw:?}"
        );
        let mut v = self.value(a).clone();
        let wt = self.value(w).data().to_vec();
        for (r, &wr) in wt.iter().enumerate() {
            for x in v.row_mut(r) {
                *x *= wr;
            }
        }
        self.push(v, Op::ScaleRows(a, w))
    }

    /// Per-row inner products, giving an `n × 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("row_dot", a, b);
        let (ta, tb) = (self.value(a), self.value(b));
        let out = (0..ta.rows()).map(|r| dot(ta.row(r), tb.row(r))).collect();
        self.push(Tensor::column(out), Op::RowDot(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0])[0];
        for &p in parts {
            assert_eq!(
                self.shape(p)[0],
                rows,
                "concat_cols shape mismatch: {:?} vs {:?}",
                self.shape(parts[0]),
                self.shape(p)
            );
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.shape(parts[0])[1];
        for &p in parts {
            assert_eq!(
                self.shape(p)[1],
                cols,
                "concat_rows shape mismatch: {:?} vs {:?}",
                self.shape(parts[0]),
                self.shape(p)
            );
        }
        let rows: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let sa = self.shape(a);
        assert!(
            start <= end && end <= sa[0],
            "slice_rows {start}..{end} out of range for {sa:?}"
        );
        let t = self.value(a);
        let data = t.data()[start * sa[1]..end * sa[1]].to_vec();
        self.push(Tensor::from_vec(end - start, sa[1], data), Op::SliceRows(a, start))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::from_f64_lossy(slope);
        let v = self.value(a).map(|x| if x > T::zero() { x } else { x * s });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln());
        self.push(v, Op::Log(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::RowSoftmax(a))
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(v, Op::RowLogSoftmax(a))
    }

    /// Column means, `1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert!(t.rows() > 0, "mean_rows of an empty tensor");
        let n = T::from_usize(t.rows()).unwrap();
        let mut out = vec![T::zero(); t.cols()];
        for r in 0..t.rows() {
            for (o, &x) in out.iter_mut().zip(t.row(r)) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o /= n;
        }
        self.push(Tensor::row_vector(out), Op::MeanRows(a))
    }

    /// `Σ_r w[r] · x[r]` for `w: n × 1`, `x: n × c`, giving `1 × c`.
    pub fn weighted_sum_rows(&mut self, w: Var, x: Var) -> Var {
        let (sw, sx) = (self.shape(w), self.shape(x));
        assert!(
            sw == [sx[0], 1],
            "weighted_sum_rows shape mismatch: {sw:?} vs {sx:?}"
        );
        let (tw, tx) = (self.value(w), self.value(x));
        let mut out = vec![T::zero(); sx[1]];
        for r in 0..sx[0] {
            let wr = tw.data()[r];
            for (o, &v) in out.iter_mut().zip(tx.row(r)) {
                *o += wr * v;
            }
        }
        self.push(Tensor::row_vector(out), Op::WeightedSumRows(w, x))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            assert!(
                i < t.rows(),
                "gather_rows index {i} out of range for {:?}",
                t.shape()
            );
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::from_vec(index.len(), cols, data);
        self.push(v, Op::GatherRows(a, index.into()))
    }

    /// Softmax of an `n × 1` column within each group.
    pub fn segment_softmax(&mut self, a: Var, groups: &Segments) -> Var {
        let sa = self.shape(a);
        assert!(
            sa == [groups.len(), 1],
            "segment_softmax shape mismatch: {sa:?} vs {} segment ids",
            groups.len()
        );
        let x = self.value(a).data();
        let mut max = vec![T::neg_infinity(); groups.num_groups()];
        for (&g, &v) in groups.ids().iter().zip(x) {
            max[g] = max[g].max(v);
        }
        let e: Vec<T> = groups
            .ids()
            .iter()
            .zip(x)
            .map(|(&g, &v)| (v - max[g]).exp())
            .collect();
        let mut denom = vec![T::zero(); groups.num_groups()];
        for (&g, &v) in groups.ids().iter().zip(&e) {
            denom[g] += v;
        }
        let out = groups.ids().iter().zip(e).map(|(&g, v)| v / denom[g]).collect();
        self.push(Tensor::column(out), Op::SegmentSoftmax(a, groups.clone()))
    }

    /// `out[g] = Σ_{r ∈ g} w[r] · x[r]`, giving `num_groups × c`.
    pub fn segment_weighted_sum(&mut self, w: Var, x: Var, groups: &Segments) -> Var {
        let (sw, sx) = (self.shape(w), self.shape(x));
        assert!(
            sw == [sx[0], 1] && sx[0] == groups.len(),
            "segment_weighted_sum shape mismatch: {sw:?} vs {sx:?} ({} segment ids)",
            groups.len()
        );
        let (tw, tx) = (self.value(w), self.value(x));
        let mut out = Tensor::zeros(groups.num_groups(), sx[1]);
        for (r, &g) in groups.ids().iter().enumerate() {
            let wr = tw.data()[r];
            for (o, &v) in out.row_mut(g).iter_mut().zip(tx.row(r)) {
                *o += wr * v;
            }
        }
        self.push(out, Op::SegmentWeightedSum(w, x, groups.clone()))
    }

    /// Per-group mean of the rows of `x`.
    pub fn segment_mean(&mut self, x: Var, groups: &Segments) -> Var {
        let sizes = groups.group_sizes();
        let w = groups
            .ids()
            .iter()
            .map(|&g| T::one() / T::from_usize(sizes[g]).unwrap())
            .collect();
        let w = self.constant(Tensor::column(w));
        self.segment_weighted_sum(w, x, groups)
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let eps = T::from_f64_lossy(NORM_EPS);
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let norm = dot(row, row).sqrt();
            debug_assert!(norm > T::zero(), "l2_normalize_rows: row {r} is zero");
            let norm = norm.max(eps);
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
        self.push(v, Op::L2NormalizeRows(a))
    }

    /// `Σ_k w_k · a[r_k, c_k]` as a `1 × 1` tensor.
    pub fn pick_weighted_sum(&mut self, a: Var, entries: &[(usize, usize, f64)]) -> Var {
        let t = self.value(a);
        let mut s = T::zero();
        for &(r, c, w) in entries {
            assert!(
                r < t.rows() && c < t.cols(),
                "pick ({r}, {c}) out of range for {:?}",
                t.shape()
            );
            s += T::from_f64_lossy(w) * t.get(r, c);
        }
        self.push(Tensor::scalar(s), Op::PickWeightedSum(a, entries.into()))
    }

    /// Text listing of the recorded operations, one per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let inputs: Vec<String> = node.op.inputs().iter().map(|v| format!("%{}", v.0)).collect();
            let _ = writeln!(
                out,
                "%{i} = {}({}) : {:?}{}",
                node.op.name(),
                inputs.join(", "),
                node.value.shape(),
                if node.needs_grad { " grad" } else { "" }
            );
        }
        out
    }

    /// Back-propagates from a `1 × 1` loss. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &*self.nodes[i].value;
        let mut acc = |v: Var, contrib: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        let needs = |v: &Var| self.nodes[v.0].needs_grad;

        match &self.nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                if needs(a) {
                    acc(*a, matmul_nt(g, self.value(*b)));
                }
                if needs(b) {
                    acc(*b, matmul_tn(self.value(*a), g));
                }
            }
            Op::MatMulNT(a, b) => {
                if needs(a) {
                    acc(*a, matmul_nn(g, self.value(*b)));
                }
                if needs(b) {
                    acc(*b, matmul_tn(g, self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    acc(*a, elementwise(g, self.value(*b), |x, y| x * y));
                }
                if needs(b) {
                    acc(*b, elementwise(g, self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                if needs(b) {
                    let mut col = vec![T::zero(); g.cols()];
                    for r in 0..g.rows() {
                        for (c, &x) in col.iter_mut().zip(g.row(r)) {
                            *c += x;
                        }
                    }
                    acc(*b, Tensor::row_vector(col));
                }
            }
            Op::Scale(a, s) => {
                let st = T::from_f64_lossy(*s);
                acc(*a, g.map(|x| x * st));
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ScaleRows(a, w) => {
                let (ta, tw) = (self.value(*a), self.value(*w));
                if needs(a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let wr = tw.data()[r];
                        for x in ga.row_mut(r) {
                            *x *= wr;
                        }
                    }
                    acc(*a, ga);
                }
                if needs(w) {
                    let gw = (0..g.rows()).map(|r| dot(g.row(r), ta.row(r))).collect();
                    acc(*w, Tensor::column(gw));
                }
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let gc = g.data();
                if needs(a) {
                    acc(*a, scale_each_row(tb, gc));
                }
                if needs(b) {
                    acc(*b, scale_each_row(ta, gc));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if needs(p) {
                        let mut gp = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        acc(*p, gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let h = self.shape(*p)[0];
                    if needs(p) {
                        let c = g.cols();
                        let data = g.data()[offset * c..(offset + h) * c].to_vec();
                        acc(*p, Tensor::from_vec(h, c, data));
                    }
                    offset += h;
                }
            }
            Op::SliceRows(a, start) => {
                let sa = self.shape(*a);
                let mut ga = Tensor::zeros(sa[0], sa[1]);
                let c = sa[1];
                ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let s = T::from_f64_lossy(*slope);
                let ga = elementwise(g, self.value(*a), |gx, x| if x > T::zero() { gx } else { gx * s });
                acc(*a, ga);
            }
            Op::Sigmoid(a) => {
                acc(*a, elementwise(g, out, |gx, y| gx * y * (T::one() - y)));
            }
            Op::Log(a) => {
                acc(*a, elementwise(g, self.value(*a), |gx, x| gx / x));
            }
            Op::RowSoftmax(a) => {
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let inner = dot(gr, yr);
                    for ((o, &gx), &y) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = y * (gx - inner);
                    }
                }
                acc(*a, ga);
            }
            Op::RowLogSoftmax(a) => {
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let total: T = gr.iter().copied().sum();
                    for ((o, &gx), &y) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = gx - y.exp() * total;
                    }
                }
                acc(*a, ga);
            }
            Op::MeanRows(a) => {
                let sa = self.shape(*a);
                let n = T::from_usize(sa[0]).unwrap();
                let mut ga = Tensor::zeros(sa[0], sa[1]);
                for r in 0..sa[0] {
                    for (o, &gx) in ga.row_mut(r).iter_mut().zip(g.data()) {
                        *o = gx / n;
                    }
                }
                acc(*a, ga);
            }
            Op::WeightedSumRows(w, x) => {
                let (tw, tx) = (self.value(*w), self.value(*x));
                if needs(w) {
                    let gw = (0..tx.rows()).map(|r| dot(g.data(), tx.row(r))).collect();
                    acc(*w, Tensor::column(gw));
                }
                if needs(x) {
                    let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                    for r in 0..tx.rows() {
                        let wr = tw.data()[r];
                        for (o, &gv) in gx.row_mut(r).iter_mut().zip(g.data()) {
                            *o = wr * gv;
                        }
                    }
                    acc(*x, gx);
                }
            }
            Op::Sum(a) => {
                let sa = self.shape(*a);
                acc(*a, Tensor::filled(sa[0], sa[1], g.item()));
            }
            Op::GatherRows(a, index) => {
                let sa = self.shape(*a);
                let mut ga = Tensor::zeros(sa[0], sa[1]);
                for (k, &src) in index.iter().enumerate() {
                    for (o, &gx) in ga.row_mut(src).iter_mut().zip(g.row(k)) {
                        *o += gx;
                    }
                }
                acc(*a, ga);
            }
            Op::SegmentSoftmax(a, groups) => {
                let y = out.data();
                let mut inner = vec![T::zero(); groups.num_groups()];
                for ((&grp, &gx), &yv) in groups.ids().iter().zip(g.data()).zip(y) {
                    inner[grp] += gx * yv;
                }
                let ga = groups
                    .ids()
                    .iter()
                    .zip(g.data())
                    .zip(y)
                    .map(|((&grp, &gx), &yv)| yv * (gx - inner[grp]))
                    .collect();
                acc(*a, Tensor::column(ga));
            }
            Op::SegmentWeightedSum(w, x, groups) => {
                let (tw, tx) = (self.value(*w), self.value(*x));
                if needs(w) {
                    let gw = groups
                        .ids()
                        .iter()
                        .enumerate()
                        .map(|(r, &grp)| dot(g.row(grp), tx.row(r)))
                        .collect();
                    acc(*w, Tensor::column(gw));
                }
                if needs(x) {
                    let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                    for (r, &grp) in groups.ids().iter().enumerate() {
                        let wr = tw.data()[r];
                        for (o, &gv) in gx.row_mut(r).iter_mut().zip(g.row(grp)) {
                            *o = wr * gv;
                        }
                    }
                    acc(*x, gx);
                }
            }
            Op::L2NormalizeRows(a) => {
                let ta = self.value(*a);
                let eps = T::from_f64_lossy(NORM_EPS);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..ta.rows() {
                    let norm = dot(ta.row(r), ta.row(r)).sqrt().max(eps);
                    let (gr, yr) = (g.row(r), out.row(r));
                    let inner = dot(gr, yr);
                    for ((o, &gx), &y) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = (gx - y * inner) / norm;
                    }
                }
                acc(*a, ga);
            }
            Op::PickWeightedSum(a, entries) => {
                let sa = self.shape(*a);
                let gs = g.item();
                let mut ga = Tensor::zeros(sa[0], sa[1]);
                for &(r, c, w) in entries.iter() {
                    let v = ga.get(r, c) + T::from_f64_lossy(w) * gs;
                    ga.set(r, c, v);
                }
                acc(*a, ga);
            }
        }
    }
}

/// Gradients of the loss with respect to every trainable leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the leaf did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero-filled to `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: [usize; 2]) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn elementwise<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn scale_each_row<T: Real>(t: &Tensor<T>, scale: &[T]) -> Tensor<T> {
    let mut out = t.clone();
    for (r, &s) in scale.iter().enumerate() {
        for x in out.row_mut(r) {
            *x *= s;
        }
    }
    out
}
