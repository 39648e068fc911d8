//! Tape-based reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are read
//! from a borrowed [`ParamStore`]; [`Graph::backward`] returns their gradients
//! without touching the store, so callers decide when to accumulate.

use rand::Rng;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{NnError, ParamGrads, ParamId, ParamStore, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

enum Op {
    Input,
    Param(ParamId),
    Embed { table: ParamId, ids: Vec<usize> },
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols { input: Var, start: usize },
    ReverseSegments(Var, Vec<usize>),
    MeanRows(Var),
    SegmentMean(Var, Vec<usize>),
    LstmSeq { xp: Var, w_h: Var, lens: Vec<usize>, gates: Vec<f64>, cells: Vec<f64> },
    MaxRows { input: Var, argmax: Vec<usize> },
    SegmentMax { input: Var, argmax: Vec<usize> },
    Unfold { input: Var, sources: Vec<Option<usize>> },
    Dropout { input: Var, mask: Vec<f64> },
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Sum(Var),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::ShapeMismatch { op, detail }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self { store, nodes: Vec::new() }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(p) => self.store.value(p),
            _ => node.value.as_ref().expect("non-parameter nodes carry values"),
        }
    }

    fn push(&mut self, name: &'static str, op: Op, value: Tensor) -> Result<Var, NnError> {
        if !value.is_finite() {
            return Err(NnError::NonFiniteValue { op: name });
        }
        self.nodes.push(Node { value: Some(value), op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor) -> Result<Var, NnError> {
        self.push("input", Op::Input, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    /// Rows `ids` of an embedding table, as an `[n x d]` matrix.
    pub fn embed(&mut self, table: ParamId, ids: &[usize]) -> Result<Var, NnError> {
        let t = self.store.value(table);
        let (rows, d) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(NnError::IndexOutOfRange { op: "embed", index: id, bound: rows });
            }
            out.extend_from_slice(t.row(id));
        }
        let value = Tensor::matrix(ids.len(), d, out)?;
        self.push("embed", Op::Embed { table, ids: ids.to_vec() }, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k {
            return Err(shape_err("matmul", format!("[{n}x{k}] * [{}x{m}]", bv.rows())));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(av.data(), bv.data(), &mut out, n, k, m);
        let value = Tensor::matrix(n, m, out)?;
        self.push("matmul", Op::MatMul(a, b), value)
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::matrix(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", Op::Add(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", Op::Mul(a, b), value)
    }

    /// Adds a `[1 x m]` bias to every row of an `[n x m]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.len() != av.cols() {
            return Err(shape_err("add_bias", format!("{:?} + bias {:?}", av.shape(), bv.shape())));
        }
        let mut value = Tensor::matrix(av.rows(), av.cols(), av.data().to_vec())?;
        let b = bv.data().to_vec();
        for r in 0..value.rows() {
            for (x, y) in value.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push("add_bias", Op::AddBias(a, bias), value)
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, NnError> {
        let av = self.value(a);
        let value = Tensor::matrix(av.rows(), av.cols(), av.data().iter().map(|&x| f(x)).collect())?;
        self.push(name, op, value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NnError> {
        self.map("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NnError> {
        self.map("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NnError> {
        self.map("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows =
            parts.first().map(|&p| self.value(p).rows()).ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                if v.rows() != rows {
                    return Err(shape_err("concat_cols", format!("row counts {} and {}", rows, v.rows())));
                }
                out.extend_from_slice(v.row(r));
            }
        }
        let value = Tensor::matrix(rows, total, out)?;
        self.push("concat_cols", Op::ConcatCols(parts.to_vec()), value)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols =
            parts.first().map(|&p| self.value(p).cols()).ok_or_else(|| shape_err("stack_rows", "no inputs".into()))?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(shape_err("stack_rows", format!("column counts {} and {}", cols, v.cols())));
            }
            out.extend_from_slice(v.data());
            rows += v.rows();
        }
        let value = Tensor::matrix(rows, cols, out)?;
        self.push("stack_rows", Op::StackRows(parts.to_vec()), value)
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NnError> {
        let av = self.value(a);
        let mut out = Vec::with_capacity(rows.len() * av.cols());
        for &r in rows {
            if r >= av.rows() {
                return Err(NnError::IndexOutOfRange { op: "gather_rows", index: r, bound: av.rows() });
            }
            out.extend_from_slice(av.row(r));
        }
        let value = Tensor::matrix(rows.len(), av.cols(), out)?;
        self.push("gather_rows", Op::GatherRows(a, rows.to_vec()), value)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(shape_err("slice_cols", format!("cols {start}..{} of {}", start + len, av.cols())));
        }
        let mut out = Vec::with_capacity(av.rows() * len);
        for r in 0..av.rows() {
            out.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let value = Tensor::matrix(av.rows(), len, out)?;
        self.push("slice_cols", Op::SliceCols { input: a, start }, value)
    }

    pub fn reverse_rows(&mut self, a: Var) -> Result<Var, NnError> {
        let n = self.value(a).rows();
        self.reverse_segments(a, &[n])
    }

    /// Reverses the row order inside each consecutive segment.
    pub fn reverse_segments(&mut self, a: Var, lens: &[usize]) -> Result<Var, NnError> {
        let av = self.value(a);
        check_cover("reverse_segments", lens, av.rows())?;
        let mut out = Vec::with_capacity(av.len());
        let mut start = 0;
        for &n in lens {
            for r in (start..start + n).rev() {
                out.extend_from_slice(av.row(r));
            }
            start += n;
        }
        let value = Tensor::matrix(av.rows(), av.cols(), out)?;
        self.push("reverse_segments", Op::ReverseSegments(a, lens.to_vec()), value)
    }

    /// Column-wise mean inside each segment; an empty segment yields a zero row.
    pub fn segment_mean(&mut self, a: Var, lens: &[usize]) -> Result<Var, NnError> {
        let av = self.value(a);
        check_cover("segment_mean", lens, av.rows())?;
        let m = av.cols();
        let mut out = vec![0.0; lens.len() * m];
        let mut start = 0;
        for (s, &n) in lens.iter().enumerate() {
            let o = &mut out[s * m..(s + 1) * m];
            for r in start..start + n {
                for (x, y) in o.iter_mut().zip(av.row(r)) {
                    *x += y;
                }
            }
            if n > 0 {
                o.iter_mut().for_each(|x| *x /= n as f64);
            }
            start += n;
        }
        let value = Tensor::matrix(lens.len(), m, out)?;
        self.push("segment_mean", Op::SegmentMean(a, lens.to_vec()), value)
    }

    /// LSTM recurrence over consecutive segments of pre-projected inputs.
    ///
    /// `xp` is `[n x 4h]` holding `x W_x + b` with gate blocks ordered input,
    /// forget, cell candidate, output. `w_h` is `[h x 4h]`. State is reset to
    /// zero at the start of every segment. Output is `[n x h]`.
    pub fn lstm_recurrence(&mut self, xp: Var, w_h: Var, lens: &[usize]) -> Result<Var, NnError> {
        let (xv, wv) = (self.value(xp), self.value(w_h));
        let h = wv.rows();
        if wv.cols() != 4 * h || xv.cols() != 4 * h {
            return Err(shape_err("lstm", format!("inputs {:?} with recurrent weights {:?}", xv.shape(), wv.shape())));
        }
        check_cover("lstm", lens, xv.rows())?;
        let n = xv.rows();
        let mut gates = vec![0.0; n * 4 * h];
        let mut cells = vec![0.0; n * h];
        let mut out = vec![0.0; n * h];
        let mut start = 0;
        for &len in lens {
            for t in start..start + len {
                let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
                z.copy_from_slice(xv.row(t));
                if t > start {
                    matmul_acc(&out[(t - 1) * h..t * h], wv.data(), z, 1, h, 4 * h);
                }
                for (j, v) in z.iter_mut().enumerate() {
                    *v = if (2 * h..3 * h).contains(&j) { v.tanh() } else { sigmoid(*v) };
                }
                for j in 0..h {
                    let (i, f, g, o) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
                    let prev = if t > start { cells[(t - 1) * h + j] } else { 0.0 };
                    let c = f * prev + i * g;
                    cells[t * h + j] = c;
                    out[t * h + j] = o * c.tanh();
                }
            }
            start += len;
        }
        let value = Tensor::matrix(n, h, out)?;
        self.push("lstm", Op::LstmSeq { xp, w_h, lens: lens.to_vec(), gates, cells }, value)
    }

    /// Column-wise mean over rows: `[n x m] -> [1 x m]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NnError> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(shape_err("mean_rows", "empty input".into()));
        }
        let mut out = vec![0.0; av.cols()];
        for r in 0..av.rows() {
            for (o, x) in out.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let n = av.rows() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        let value = Tensor::row_vector(out);
        self.push("mean_rows", Op::MeanRows(a), value)
    }

    /// Column-wise max over rows: `[n x m] -> [1 x m]`. Ties go to the first row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var, NnError> {
        let av = self.value(a);
        let (out, argmax) = segment_max_values(av, &[av.rows()], "max_rows", false)?;
        let value = Tensor::row_vector(out);
        self.push("max_rows", Op::MaxRows { input: a, argmax }, value)
    }

    /// Column-wise max within consecutive row segments: `[sum(lens) x m] -> [segments x m]`.
    /// An empty segment yields a zero row.
    pub fn segment_max(&mut self, a: Var, lens: &[usize]) -> Result<Var, NnError> {
        let av = self.value(a);
        if lens.iter().sum::<usize>() != av.rows() {
            return Err(shape_err(
                "segment_max",
                format!("segments cover {} of {} rows", lens.iter().sum::<usize>(), av.rows()),
            ));
        }
        let (out, argmax) = segment_max_values(av, lens, "segment_max", true)?;
        let value = Tensor::matrix(lens.len(), av.cols(), out)?;
        self.push("segment_max", Op::SegmentMax { input: a, argmax }, value)
    }

    /// Sliding windows of `kernel` rows over each segment, zero padded so that a
    /// segment of `n` rows yields `n` windows. Output is `[sum(lens) x kernel*d]`,
    /// the input of a 1-D convolution expressed as a matrix product.
    pub fn unfold(&mut self, a: Var, lens: &[usize], kernel: usize) -> Result<Var, NnError> {
        let av = self.value(a);
        let d = av.cols();
        if lens.iter().sum::<usize>() != av.rows() || kernel == 0 {
            return Err(shape_err("unfold", format!("segments {lens:?} over {} rows, kernel {kernel}", av.rows())));
        }
        let pad = (kernel - 1) / 2;
        let mut sources = Vec::with_capacity(av.rows() * kernel);
        let mut start = 0;
        for &n in lens {
            for w in 0..n {
                for tap in 0..kernel {
                    let pos = (w + tap) as isize - pad as isize;
                    sources.push((pos >= 0 && (pos as usize) < n).then(|| start + pos as usize));
                }
            }
            start += n;
        }
        let mut out = vec![0.0; sources.len() * d];
        for (slot, src) in sources.iter().enumerate() {
            if let Some(r) = src {
                out[slot * d..(slot + 1) * d].copy_from_slice(av.row(*r));
            }
        }
        let value = Tensor::matrix(av.rows(), kernel * d, out)?;
        self.push("unfold", Op::Unfold { input: a, sources }, value)
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, a: Var, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var, NnError> {
        if mode == Mode::Infer || rate <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let av = self.value(a);
        let mask: Vec<f64> = (0..av.len()).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::matrix(av.rows(), av.cols(), data)?;
        self.push("dropout", Op::Dropout { input: a, mask }, value)
    }

    /// Mean softmax cross-entropy over the rows of `[batch x classes]` logits.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() || targets.is_empty() {
            return Err(shape_err("softmax_xent", format!("{} rows for {} targets", lv.rows(), targets.len())));
        }
        let mut probs = Vec::with_capacity(lv.len());
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let (l, p) = softmax_xent(lv.row(r), t)?;
            loss += l;
            probs.extend(p);
        }
        let value = Tensor::matrix(1, 1, vec![loss / targets.len() as f64])?;
        self.push("softmax_xent", Op::SoftmaxXent { logits, targets: targets.to_vec(), probs }, value)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let total = self.value(a).data().iter().sum();
        self.push("sum", Op::Sum(a), Tensor::matrix(1, 1, vec![total])?)
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads, NnError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss has shape {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Option<Tensor>> = (0..self.store.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::matrix(1, 1, vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let y = self.nodes[idx].value.as_ref();
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(p) => add_into(&mut param_grads[p.0], g.data(), self.store.value(*p)),
                Op::Embed { table, ids } => {
                    let shape = self.store.value(*table);
                    let slot = param_grads[table.0].get_or_insert_with(|| Tensor::zeros(shape.shape()));
                    let d = shape.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, x) in slot.row_mut(id).iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                            *o += x;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    let ga = grad_slot(&mut grads, *a, av);
                    matmul_bt_acc(g.data(), bv.data(), ga.data_mut(), n, k, m);
                    let gb = grad_slot(&mut grads, *b, bv);
                    matmul_at_acc(av.data(), g.data(), gb.data_mut(), n, k, m);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, self.value(*a), g.data());
                    accumulate(&mut grads, *b, self.value(*b), g.data());
                }
                Op::AddBias(a, bias) => {
                    accumulate(&mut grads, *a, self.value(*a), g.data());
                    let bv = self.value(*bias);
                    let gb = grad_slot(&mut grads, *bias, bv);
                    for r in 0..g.rows() {
                        for (o, x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, av, &da);
                    accumulate(&mut grads, *b, bv, &db);
                }
                Op::Sigmoid(a) => {
                    let y = y.expect("value");
                    let d: Vec<f64> = g.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut grads, *a, self.value(*a), &d);
                }
                Op::Tanh(a) => {
                    let y = y.expect("value");
                    let d: Vec<f64> = g.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut grads, *a, self.value(*a), &d);
                }
                Op::Relu(a) => {
                    let y = y.expect("value");
                    let d: Vec<f64> =
                        g.data().iter().zip(y.data()).map(|(g, &y)| if y > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, self.value(*a), &d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let c = pv.cols();
                        let gp = grad_slot(&mut grads, p, pv);
                        for r in 0..g.rows() {
                            for (o, x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + c]) {
                                *o += x;
                            }
                        }
                        offset += c;
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let n = pv.len();
                        accumulate(&mut grads, p, pv, &g.data()[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let av = self.value(*a);
                    let ga = grad_slot(&mut grads, *a, av);
                    for (i, &r) in rows.iter().enumerate() {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                }
                Op::SliceCols { input, start } => {
                    let av = self.value(*input);
                    let ga = grad_slot(&mut grads, *input, av);
                    let len = g.cols();
                    for r in 0..g.rows() {
                        for (o, x) in ga.row_mut(r)[*start..*start + len].iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
                Op::ReverseSegments(a, lens) => {
                    let av = self.value(*a);
                    let ga = grad_slot(&mut grads, *a, av);
                    let mut start = 0;
                    for &n in lens {
                        for k in 0..n {
                            for (o, x) in ga.row_mut(start + n - 1 - k).iter_mut().zip(g.row(start + k)) {
                                *o += x;
                            }
                        }
                        start += n;
                    }
                }
                Op::SegmentMean(a, lens) => {
                    let av = self.value(*a);
                    let ga = grad_slot(&mut grads, *a, av);
                    let mut start = 0;
                    for (s, &n) in lens.iter().enumerate() {
                        for r in start..start + n {
                            for (o, x) in ga.row_mut(r).iter_mut().zip(g.row(s)) {
                                *o += x / n as f64;
                            }
                        }
                        start += n;
                    }
                }
                Op::LstmSeq { xp, w_h, lens, gates, cells } => {
                    let (xv, wv) = (self.value(*xp), self.value(*w_h));
                    let out = y.expect("value");
                    let h = wv.rows();
                    let mut dxp = vec![0.0; xv.len()];
                    let mut dw = vec![0.0; wv.len()];
                    let mut dh_next = vec![0.0; h];
                    let mut dc_next = vec![0.0; h];
                    let mut dz = vec![0.0; 4 * h];
                    let mut start = 0;
                    for &len in lens {
                        dh_next.fill(0.0);
                        dc_next.fill(0.0);
                        for t in (start..start + len).rev() {
                            let z = &gates[t * 4 * h..(t + 1) * 4 * h];
                            for j in 0..h {
                                let (i, f, gg, o) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
                                let c = cells[t * h + j];
                                let tc = c.tanh();
                                let dh = g.data()[t * h + j] + dh_next[j];
                                let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                                let prev = if t > start { cells[(t - 1) * h + j] } else { 0.0 };
                                dz[j] = dc * gg * i * (1.0 - i);
                                dz[h + j] = dc * prev * f * (1.0 - f);
                                dz[2 * h + j] = dc * i * (1.0 - gg * gg);
                                dz[3 * h + j] = dh * tc * o * (1.0 - o);
                                dc_next[j] = dc * f;
                            }
                            dxp[t * 4 * h..(t + 1) * 4 * h].copy_from_slice(&dz);
                            dh_next.fill(0.0);
                            if t > start {
                                matmul_at_acc(&out.data()[(t - 1) * h..t * h], &dz, &mut dw, 1, h, 4 * h);
                                matmul_bt_acc(&dz, wv.data(), &mut dh_next, 1, h, 4 * h);
                            }
                        }
                        start += len;
                    }
                    accumulate(&mut grads, *xp, xv, &dxp);
                    accumulate(&mut grads, *w_h, wv, &dw);
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let scale = 1.0 / av.rows() as f64;
                    let ga = grad_slot(&mut grads, *a, av);
                    for r in 0..ga.rows() {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                            *o += x * scale;
                        }
                    }
                }
                Op::MaxRows { input, argmax } | Op::SegmentMax { input, argmax } => {
                    let av = self.value(*input);
                    let m = av.cols();
                    let ga = grad_slot(&mut grads, *input, av);
                    for (slot, &src_row) in argmax.iter().enumerate().filter(|(_, &r)| r != NO_SOURCE) {
                        ga.data_mut()[src_row * m + slot % m] += g.data()[slot];
                    }
                }
                Op::Unfold { input, sources } => {
                    let av = self.value(*input);
                    let d = av.cols();
                    let ga = grad_slot(&mut grads, *input, av);
                    for (slot, src) in sources.iter().enumerate() {
                        if let Some(r) = src {
                            for (o, x) in ga.row_mut(*r).iter_mut().zip(&g.data()[slot * d..(slot + 1) * d]) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::Dropout { input, mask } => {
                    let d: Vec<f64> = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                    accumulate(&mut grads, *input, self.value(*input), &d);
                }
                Op::SoftmaxXent { logits, targets, probs } => {
                    let lv = self.value(*logits);
                    let c = lv.cols();
                    let scale = g.data()[0] / targets.len() as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        d[r * c + t] -= scale;
                    }
                    accumulate(&mut grads, *logits, lv, &d);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    let d = vec![g.data()[0]; av.len()];
                    accumulate(&mut grads, *a, av, &d);
                }
            }
        }
        for g in param_grads.iter().flatten() {
            if !g.is_finite() {
                return Err(NnError::NonFiniteValue { op: "backward" });
            }
        }
        Ok(ParamGrads { grads: param_grads })
    }
}

const NO_SOURCE: usize = usize::MAX;

fn grad_slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, like: &Tensor, delta: &[f64]) {
    let slot = grad_slot(grads, v, like);
    for (o, x) in slot.data_mut().iter_mut().zip(delta) {
        *o += x;
    }
}

fn add_into(slot: &mut Option<Tensor>, delta: &[f64], like: &Tensor) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(like.shape()));
    for (o, x) in t.data_mut().iter_mut().zip(delta) {
        *o += x;
    }
}

fn check_cover(op: &'static str, lens: &[usize], rows: usize) -> Result<(), NnError> {
    let total: usize = lens.iter().sum();
    if total != rows {
        return Err(shape_err(op, format!("segments cover {total} of {rows} rows")));
    }
    Ok(())
}

/// Per-segment column max. Returns the values and, for every output slot, the source row.
fn segment_max_values(
    a: &Tensor,
    lens: &[usize],
    op: &'static str,
    allow_empty: bool,
) -> Result<(Vec<f64>, Vec<usize>), NnError> {
    let m = a.cols();
    let mut out = Vec::with_capacity(lens.len() * m);
    let mut argmax = Vec::with_capacity(lens.len() * m);
    let mut start = 0;
    for &n in lens {
        if n == 0 {
            if !allow_empty {
                return Err(shape_err(op, "empty segment".into()));
            }
            out.extend(std::iter::repeat_n(0.0, m));
            argmax.extend(std::iter::repeat_n(NO_SOURCE, m));
            continue;
        }
        for c in 0..m {
            let mut best = start;
            for r in start + 1..start + n {
                if a.data()[r * m + c] > a.data()[best * m + c] {
                    best = r;
                }
            }
            out.push(a.data()[best * m + c]);
            argmax.push(best);
        }
        start += n;
    }
    Ok((out, argmax))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of one logit vector against a target class, with the softmax probabilities.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), NnError> {
    if target >= logits.len() {
        return Err(NnError::IndexOutOfRange { op: "softmax_xent", index: target, bound: logits.len() });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let loss = -(logits[target] - max - log_total);
    Ok((loss, softmax(logits)))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
