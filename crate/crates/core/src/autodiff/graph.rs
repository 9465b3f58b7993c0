use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Gather { table: ParamId, rows: Vec<usize> },
    MatMul(usize, usize),
    AddRowBroadcast(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    OneMinus(usize),
    Tanh(usize),
    Sigmoid(usize),
    Conv1d { seq: usize, filters: usize },
    MaxPool { input: usize, argmax: Vec<usize> },
    SoftmaxRows(usize),
    Transpose(usize),
    HConcat(Vec<usize>),
    VConcat(Vec<usize>),
    SliceRows { input: usize, start: usize },
    SliceCols { input: usize, start: usize },
    RepeatRows(usize),
    ScaleRows { mat: usize, weights: usize },
    MaskMul { input: usize, mask: Vec<f64> },
    Loss { probs: usize, label: usize, target: Option<Vec<f64>>, scale: f64, clamped: bool },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// A computation tape over a borrowed parameter set.
///
/// Nodes are appended in execution order; [`Graph::backward`] visits them
/// in exactly the reverse order, so every consumer of a value has pushed
/// its contribution before that value's gradient is read.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    record: bool,
    fault: Option<&'static str>,
    min_pool_margin: f64,
    clamped_loss: bool,
}

impl<'p> Graph<'p> {
    /// A recording graph (training, gradient checks).
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            record: true,
            fault: None,
            min_pool_margin: f64::INFINITY,
            clamped_loss: false,
        }
    }

    /// A graph that only computes values; [`Graph::backward`] fails on it.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self {
            record: false,
            ..Self::new(params)
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest gap between the winner and runner-up of any max-pool window
    /// seen so far. Gradient checks near a tie are not meaningful.
    pub fn min_pool_margin(&self) -> f64 {
        self.min_pool_margin
    }

    /// True if a loss had to clamp the true-class probability.
    pub fn loss_was_clamped(&self) -> bool {
        self.clamped_loss
    }

    /// Fails with the first op that produced NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.fault {
            Some(op) => Err(Error::NonFinite { op }),
            None => Ok(()),
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(name);
        }
        let op = if self.record { op } else { Op::Constant };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push("constant", t, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.params.get(id);
        let value = Tensor::from_parts(t.rows(), t.cols(), t.data().to_vec());
        self.push("param", value, Op::Param(id))
    }

    /// Rows `rows` of the parameter table `table`, stacked in order.
    pub fn gather(&mut self, table: ParamId, rows: &[usize]) -> Result<Var> {
        let t = self.params.get(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= t.rows() {
                return Err(Error::shape(
                    "gather",
                    format!("row {r} out of {} in `{}`", t.rows(), self.params.name(table)),
                ));
            }
            data.extend_from_slice(t.row_slice(r));
        }
        let value = Tensor::from_parts(rows.len(), cols, data);
        Ok(self.push(
            "gather",
            value,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul", format!("{n}x{k} * {k2}x{m}")));
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for (kk, &x) in av[i * k..(i + 1) * k].iter().enumerate() {
                if x != 0.0 {
                    axpy(orow, x, &bv[kk * m..(kk + 1) * m]);
                }
            }
        }
        Ok(self.push("matmul", Tensor::from_parts(n, m, out), Op::MatMul(a.0, b.0)))
    }

    /// `a` (n x m) plus the row `b` (1 x m) added to every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims(a);
        if self.dims(b) != (1, m) {
            return Err(Error::shape("add_row", format!("{n}x{m} + {:?}", self.dims(b))));
        }
        let bv = self.nodes[b.0].value.data().to_vec();
        let mut out = self.nodes[a.0].value.data().to_vec();
        for row in out.chunks_mut(m.max(1)) {
            add_assign(row, &bv);
        }
        Ok(self.push("add_row", Tensor::from_parts(n, m, out), Op::AddRowBroadcast(a.0, b.0)))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (n, m) = self.dims(a);
        if self.dims(b) != (n, m) {
            return Err(Error::shape(name, format!("{n}x{m} vs {:?}", self.dims(b))));
        }
        let out = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(name, Tensor::from_parts(n, m, out), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (n, m) = self.dims(a);
        let out = self.nodes[a.0].value.data().iter().map(|&x| f(x)).collect();
        self.push(name, Tensor::from_parts(n, m, out), op)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map("one_minus", a, |x| 1.0 - x, Op::OneMinus(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map("tanh", a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map("sigmoid", a, sigmoid, Op::Sigmoid(a.0))
    }

    /// Narrow 1-D convolution over the rows of `seq` (n x d).
    ///
    /// `filters` is `f_k x (k*d)`; filter `f` flattens a window of `k`
    /// consecutive rows, so output row `i` is `f^T (x_i || ... || x_{i+k-1})`.
    /// The sequence is padded with `k-1` zero rows at the end, giving one
    /// output row per input row.
    pub fn conv1d(&mut self, seq: Var, filters: Var) -> Result<Var> {
        let (n, d) = self.dims(seq);
        let (fk, width) = self.dims(filters);
        if n == 0 || d == 0 || width == 0 || width % d != 0 {
            return Err(Error::Config(format!(
                "conv1d: filter length {width} is not a multiple of token width {d} (n = {n})"
            )));
        }
        let x = self.nodes[seq.0].value.data();
        let f = self.nodes[filters.0].value.data();
        let mut out = vec![0.0; n * fk];
        for i in 0..n {
            let len = width.min((n - i) * d);
            let window = &x[i * d..i * d + len];
            let orow = &mut out[i * fk..(i + 1) * fk];
            for (c, o) in orow.iter_mut().enumerate() {
                *o = dot(&f[c * width..c * width + len], window);
            }
        }
        Ok(self.push(
            "conv1d",
            Tensor::from_parts(n, fk, out),
            Op::Conv1d {
                seq: seq.0,
                filters: filters.0,
            },
        ))
    }

    /// Column-wise max over all rows: n x m -> 1 x m. Ties go to the
    /// lowest row index.
    pub fn max_pool(&mut self, a: Var) -> Result<Var> {
        let (n, _) = self.dims(a);
        if n == 0 {
            return Err(Error::shape("max_pool", "empty input"));
        }
        self.pool_segments("max_pool", a, &[(0, n - 1)])
    }

    /// Three column-wise max pools over entity-delimited segments.
    ///
    /// With `first` the span starting earlier and `second` the other one,
    /// the segments are `[0, first.end]`, `[first.start, second.end]` and
    /// `[second.start, n-1]` (inclusive). Output is `1 x 3m`, segment-major.
    pub fn piecewise_max_pool(
        &mut self,
        a: Var,
        e1: (usize, usize),
        e2: (usize, usize),
    ) -> Result<Var> {
        let (n, _) = self.dims(a);
        let segments = piecewise_segments(n, e1, e2)?;
        self.pool_segments("piecewise_max_pool", a, &segments)
    }

    fn pool_segments(
        &mut self,
        name: &'static str,
        a: Var,
        segments: &[(usize, usize)],
    ) -> Result<Var> {
        let (_, m) = self.dims(a);
        let x = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(segments.len() * m);
        let mut argmax = Vec::with_capacity(segments.len() * m);
        let mut margin = self.min_pool_margin;
        for &(lo, hi) in segments {
            for c in 0..m {
                let mut best = lo;
                let mut runner_up = f64::NEG_INFINITY;
                for r in lo + 1..=hi {
                    let v = x[r * m + c];
                    if v > x[best * m + c] {
                        runner_up = x[best * m + c];
                        best = r;
                    } else if v > runner_up {
                        runner_up = v;
                    }
                }
                let top = x[best * m + c];
                margin = margin.min(top - runner_up);
                out.push(top);
                argmax.push(best * m + c);
            }
        }
        if self.record {
            self.min_pool_margin = margin;
        }
        let value = Tensor::from_parts(1, segments.len() * m, out);
        Ok(self.push(name, value, Op::MaxPool { input: a.0, argmax }))
    }

    /// Softmax over each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.dims(a);
        let mut out = self.nodes[a.0].value.data().to_vec();
        for row in out.chunks_mut(m.max(1)) {
            softmax_in_place(row);
        }
        self.push("softmax", Tensor::from_parts(n, m, out), Op::SoftmaxRows(a.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (n, m) = self.dims(a);
        let x = self.nodes[a.0].value.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = x[i * m + j];
            }
        }
        self.push("transpose", Tensor::from_parts(m, n, out), Op::Transpose(a.0))
    }

    /// Concatenates along columns; all parts need the same row count.
    pub fn hconcat(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts.first().map_or(0, |&p| self.dims(p).0);
        if parts.iter().any(|&p| self.dims(p).0 != n) {
            return Err(Error::shape("hconcat", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row_slice(i));
            }
        }
        let ids = parts.iter().map(|p| p.0).collect();
        Ok(self.push("hconcat", Tensor::from_parts(n, total, out), Op::HConcat(ids)))
    }

    /// Stacks along rows; all parts need the same column count.
    pub fn vconcat(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts.first().map_or(0, |&p| self.dims(p).1);
        if parts.iter().any(|&p| self.dims(p).1 != m) {
            return Err(Error::shape("vconcat", "column counts differ"));
        }
        let rows: usize = parts.iter().map(|&p| self.dims(p).0).sum();
        let mut out = Vec::with_capacity(rows * m);
        for &p in parts {
            out.extend_from_slice(self.nodes[p.0].value.data());
        }
        let ids = parts.iter().map(|p| p.0).collect();
        Ok(self.push("vconcat", Tensor::from_parts(rows, m, out), Op::VConcat(ids)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims(a);
        if start + len > n {
            return Err(Error::shape("slice_rows", format!("{start}+{len} > {n}")));
        }
        let out = self.nodes[a.0].value.data()[start * m..(start + len) * m].to_vec();
        Ok(self.push(
            "slice_rows",
            Tensor::from_parts(len, m, out),
            Op::SliceRows { input: a.0, start },
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims(a);
        if start + len > m {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {m}")));
        }
        let x = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&x[i * m + start..i * m + start + len]);
        }
        Ok(self.push(
            "slice_cols",
            Tensor::from_parts(n, len, out),
            Op::SliceCols { input: a.0, start },
        ))
    }

    /// Repeats the single row of `a` `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let (r, m) = self.dims(a);
        if r != 1 {
            return Err(Error::shape("repeat_rows", format!("expected one row, got {r}")));
        }
        let row = self.nodes[a.0].value.data();
        let out = row.repeat(n);
        Ok(self.push("repeat_rows", Tensor::from_parts(n, m, out), Op::RepeatRows(a.0)))
    }

    /// Multiplies row `i` of `mat` (n x m) by `weights[i]` (n x 1).
    pub fn scale_rows(&mut self, mat: Var, weights: Var) -> Result<Var> {
        let (n, m) = self.dims(mat);
        if self.dims(weights) != (n, 1) {
            return Err(Error::shape(
                "scale_rows",
                format!("{n}x{m} by {:?}", self.dims(weights)),
            ));
        }
        let w = self.nodes[weights.0].value.data();
        let mut out = self.nodes[mat.0].value.data().to_vec();
        for (row, &s) in out.chunks_mut(m.max(1)).zip(w) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.push(
            "scale_rows",
            Tensor::from_parts(n, m, out),
            Op::ScaleRows {
                mat: mat.0,
                weights: weights.0,
            },
        ))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let (n, m) = self.dims(a);
        if mask.len() != n * m {
            return Err(Error::shape("mask_mul", format!("mask of {} for {n}x{m}", mask.len())));
        }
        let out = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, k)| x * k)
            .collect();
        Ok(self.push(
            "mask_mul",
            Tensor::from_parts(n, m, out),
            Op::MaskMul { input: a.0, mask },
        ))
    }

    /// `scale * (-ln p[label] + sum_j (p_j - target_j)^2)` for a `1 x C`
    /// probability row. The target is a constant: no gradient reaches it.
    pub fn loss(
        &mut self,
        probs: Var,
        label: usize,
        target: Option<&[f64]>,
        scale: f64,
    ) -> Result<Var> {
        let (r, c) = self.dims(probs);
        if r != 1 || label >= c || target.is_some_and(|t| t.len() != c) {
            return Err(Error::shape("loss", format!("1x{c} probs, label {label}")));
        }
        let p = self.nodes[probs.0].value.data();
        let clamped = p[label] < PROB_FLOOR;
        let mut value = -p[label].max(PROB_FLOOR).ln();
        if let Some(t) = target {
            value += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        self.clamped_loss |= clamped;
        Ok(self.push(
            "loss",
            Tensor::scalar(scale * value),
            Op::Loss {
                probs: probs.0,
                label,
                target: target.map(<[f64]>::to_vec),
                scale,
                clamped,
            },
        ))
    }

    /// Reverse pass from the scalar `out`.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        self.check_finite()?;
        if !self.record {
            return Err(Error::Config("backward called on an inference graph".into()));
        }
        if self.dims(out) != (1, 1) {
            return Err(Error::shape("backward", "output must be a scalar"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);
        let mut pg = Gradients::for_store(self.params);

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let (n, m) = (node.value.rows(), node.value.cols());
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => pg.add_dense(*id, &g),
                Op::Gather { table, rows } => {
                    let frozen = self.params.frozen_row(*table);
                    for (p, &r) in rows.iter().enumerate() {
                        if Some(r) != frozen {
                            pg.add_row(*table, r, &g[p * m..(p + 1) * m]);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let av = self.nodes[*a].value.data();
                    let bv = self.nodes[*b].value.data();
                    let k = self.nodes[*a].value.cols();
                    {
                        let ga = slot(&mut grads, *a, n * k);
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for kk in 0..k {
                                ga[i * k + kk] += dot(grow, &bv[kk * m..(kk + 1) * m]);
                            }
                        }
                    }
                    let gb = slot(&mut grads, *b, k * m);
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for kk in 0..k {
                            let x = av[i * k + kk];
                            if x != 0.0 {
                                axpy(&mut gb[kk * m..(kk + 1) * m], x, grow);
                            }
                        }
                    }
                }
                Op::AddRowBroadcast(a, b) => {
                    add_assign(slot(&mut grads, *a, n * m), &g);
                    let gb = slot(&mut grads, *b, m);
                    for row in g.chunks(m.max(1)) {
                        add_assign(gb, row);
                    }
                }
                Op::Add(a, b) => {
                    add_assign(slot(&mut grads, *a, n * m), &g);
                    add_assign(slot(&mut grads, *b, n * m), &g);
                }
                Op::Sub(a, b) => {
                    add_assign(slot(&mut grads, *a, n * m), &g);
                    axpy(slot(&mut grads, *b, n * m), -1.0, &g);
                }
                Op::Mul(a, b) => {
                    let bv = self.nodes[*b].value.data();
                    let ga = slot(&mut grads, *a, n * m);
                    for ((d, x), y) in ga.iter_mut().zip(&g).zip(bv) {
                        *d += x * y;
                    }
                    let av = self.nodes[*a].value.data();
                    let gb = slot(&mut grads, *b, n * m);
                    for ((d, x), y) in gb.iter_mut().zip(&g).zip(av) {
                        *d += x * y;
                    }
                }
                Op::OneMinus(a) => axpy(slot(&mut grads, *a, n * m), -1.0, &g),
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let ga = slot(&mut grads, *a, n * m);
                    for ((d, x), y) in ga.iter_mut().zip(&g).zip(y) {
                        *d += x * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let ga = slot(&mut grads, *a, n * m);
                    for ((d, x), y) in ga.iter_mut().zip(&g).zip(y) {
                        *d += x * y * (1.0 - y);
                    }
                }
                Op::Conv1d { seq, filters } => {
                    let x = self.nodes[*seq].value.data();
                    let f = self.nodes[*filters].value.data();
                    let (sn, d) = (self.nodes[*seq].value.rows(), self.nodes[*seq].value.cols());
                    let width = self.nodes[*filters].value.cols();
                    {
                        let gf = slot(&mut grads, *filters, m * width);
                        for i in 0..sn {
                            let len = width.min((sn - i) * d);
                            let window = &x[i * d..i * d + len];
                            for c in 0..m {
                                let go = g[i * m + c];
                                if go != 0.0 {
                                    axpy(&mut gf[c * width..c * width + len], go, window);
                                }
                            }
                        }
                    }
                    let gx = slot(&mut grads, *seq, sn * d);
                    for i in 0..sn {
                        let len = width.min((sn - i) * d);
                        for c in 0..m {
                            let go = g[i * m + c];
                            if go != 0.0 {
                                axpy(&mut gx[i * d..i * d + len], go, &f[c * width..c * width + len]);
                            }
                        }
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let len = self.nodes[*input].value.len();
                    let gi = slot(&mut grads, *input, len);
                    for (&pos, &x) in argmax.iter().zip(&g) {
                        gi[pos] += x;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.data();
                    let ga = slot(&mut grads, *a, n * m);
                    for i in 0..n {
                        let yr = &y[i * m..(i + 1) * m];
                        let gr = &g[i * m..(i + 1) * m];
                        let s = dot(yr, gr);
                        for j in 0..m {
                            ga[i * m + j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
                Op::Transpose(a) => {
                    let ga = slot(&mut grads, *a, n * m);
                    // node is n x m, input is m x n
                    for i in 0..n {
                        for j in 0..m {
                            ga[j * n + i] += g[i * m + j];
                        }
                    }
                }
                Op::HConcat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pm = self.nodes[p].value.cols();
                        let gp = slot(&mut grads, p, n * pm);
                        for i in 0..n {
                            add_assign(&mut gp[i * pm..(i + 1) * pm], &g[i * m + off..i * m + off + pm]);
                        }
                        off += pm;
                    }
                }
                Op::VConcat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.len();
                        add_assign(slot(&mut grads, p, len), &g[off..off + len]);
                        off += len;
                    }
                }
                Op::SliceRows { input, start } => {
                    let len = self.nodes[*input].value.len();
                    let gi = slot(&mut grads, *input, len);
                    add_assign(&mut gi[start * m..(start + n) * m], &g);
                }
                Op::SliceCols { input, start } => {
                    let im = self.nodes[*input].value.cols();
                    let gi = slot(&mut grads, *input, n * im);
                    for i in 0..n {
                        add_assign(&mut gi[i * im + start..i * im + start + m], &g[i * m..(i + 1) * m]);
                    }
                }
                Op::RepeatRows(a) => {
                    let ga = slot(&mut grads, *a, m);
                    for row in g.chunks(m.max(1)) {
                        add_assign(ga, row);
                    }
                }
                Op::ScaleRows { mat, weights } => {
                    let w = self.nodes[*weights].value.data();
                    let x = self.nodes[*mat].value.data();
                    {
                        let gm = slot(&mut grads, *mat, n * m);
                        for i in 0..n {
                            axpy(&mut gm[i * m..(i + 1) * m], w[i], &g[i * m..(i + 1) * m]);
                        }
                    }
                    let gw = slot(&mut grads, *weights, n);
                    for i in 0..n {
                        gw[i] += dot(&g[i * m..(i + 1) * m], &x[i * m..(i + 1) * m]);
                    }
                }
                Op::MaskMul { input, mask } => {
                    let gi = slot(&mut grads, *input, n * m);
                    for ((d, x), k) in gi.iter_mut().zip(&g).zip(mask) {
                        *d += x * k;
                    }
                }
                Op::Loss {
                    probs,
                    label,
                    target,
                    scale,
                    clamped,
                } => {
                    let p = self.nodes[*probs].value.data();
                    let c = p.len();
                    let s = g[0] * scale;
                    let gp = slot(&mut grads, *probs, c);
                    if !clamped {
                        gp[*label] -= s / p[*label];
                    }
                    if let Some(t) = target {
                        for j in 0..c {
                            gp[j] += s * 2.0 * (p[j] - t[j]);
                        }
                    }
                }
            }
        }
        if !pg.is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        Ok(pg)
    }
}

/// Inclusive segments used by [`Graph::piecewise_max_pool`].
pub(crate) fn piecewise_segments(
    n: usize,
    e1: (usize, usize),
    e2: (usize, usize),
) -> Result<[(usize, usize); 3]> {
    for (name, (s, e)) in [("e1", e1), ("e2", e2)] {
        if s > e || e >= n {
            return Err(Error::Data {
                id: String::new(),
                msg: format!("{name} span [{s}, {e}] outside a sequence of {n}"),
            });
        }
    }
    let (first, second) = if e2.0 < e1.0 { (e2, e1) } else { (e1, e2) };
    let mid_end = second.1.max(first.1);
    Ok([(0, first.1), (first.0, mid_end), (second.0, n - 1)])
}

fn slot(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorise
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn add_assign(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        ParamStore::new()
    }

    #[test]
    fn conv1d_hand_windows() {
        let s = store();
        let mut g = Graph::new(&s);
        let seq = g.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let f = g.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let c = g.conv1d(seq, f).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 5.0, 3.0]);
        let p = g.max_pool(c).unwrap();
        assert_eq!(g.value(p).data(), &[5.0]);
    }

    #[test]
    fn conv1d_output_shape_and_zero_filter() {
        let s = store();
        let mut g = Graph::new(&s);
        let seq = g.constant(Tensor::matrix(20, 60, (0..1200).map(|i| i as f64 * 0.01).collect()).unwrap());
        let f = g.constant(Tensor::zeros(vec![230, 180]));
        let c = g.conv1d(seq, f).unwrap();
        assert_eq!(g.value(c).shape(), &[20, 230]);
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv1d_rejects_bad_filter_width() {
        let s = store();
        let mut g = Graph::new(&s);
        let seq = g.constant(Tensor::zeros(vec![4, 3]));
        let f = g.constant(Tensor::zeros(vec![2, 7]));
        assert!(matches!(g.conv1d(seq, f), Err(Error::Config(_))));
    }

    #[test]
    fn max_pool_ties_route_to_first_index() {
        let mut s = store();
        let id = s.add("x", Tensor::matrix(4, 1, vec![2.0; 4]).unwrap());
        let mut g = Graph::new(&s);
        let x = g.param(id);
        let p = g.max_pool(x).unwrap();
        let l = g.loss(p, 0, None, 0.0).unwrap();
        let y = g.add(p, l).unwrap();
        assert_eq!(g.value(p).data(), &[2.0]);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.dense(id), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_rejects_empty() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::zeros(vec![0, 3]));
        assert!(g.max_pool(x).is_err());
    }

    #[test]
    fn piecewise_hand_example() {
        let s = store();
        let mut g = Graph::new(&s);
        let c = g.constant(Tensor::matrix(7, 1, vec![1.0, 5.0, 2.0, 7.0, 3.0, 4.0, 6.0]).unwrap());
        let p = g.piecewise_max_pool(c, (1, 1), (4, 4)).unwrap();
        assert_eq!(g.value(p).data(), &[5.0, 7.0, 6.0]);
        // entity order does not matter
        let q = g.piecewise_max_pool(c, (4, 4), (1, 1)).unwrap();
        assert_eq!(g.value(q).data(), &[5.0, 7.0, 6.0]);
    }

    #[test]
    fn piecewise_boundaries() {
        let s = store();
        let mut g = Graph::new(&s);
        let c = g.constant(Tensor::matrix(4, 1, vec![3.0, 9.0, 1.0, 2.0]).unwrap());
        let p = g.piecewise_max_pool(c, (0, 0), (3, 3)).unwrap();
        assert_eq!(g.value(p).data(), &[3.0, 9.0, 2.0]);
        let one = g.constant(Tensor::matrix(1, 1, vec![4.0]).unwrap());
        let q = g.piecewise_max_pool(one, (0, 0), (0, 0)).unwrap();
        assert_eq!(g.value(q).data(), &[4.0, 4.0, 4.0]);
        assert!(g.piecewise_max_pool(c, (0, 0), (4, 4)).is_err());
    }

    #[test]
    fn softmax_is_a_simplex() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::row(vec![1000.0, -3.0, 0.5, 2.0]));
        let y = g.softmax_rows(x);
        let sum: f64 = g.value(y).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(g.value(y).data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn non_finite_values_are_reported() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::row(vec![f64::INFINITY]));
        let y = g.tanh(x);
        let _ = g.one_minus(y);
        assert!(matches!(g.check_finite(), Err(Error::NonFinite { op: "constant" })));
    }

    #[test]
    fn inference_graph_cannot_backprop() {
        let s = store();
        let mut g = Graph::inference(&s);
        let x = g.constant(Tensor::scalar(1.0));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn frozen_rows_get_no_gradient() {
        let mut s = store();
        let id = s.add_with_frozen_row("emb", Tensor::matrix(3, 2, vec![1.0; 6]).unwrap(), 0);
        let mut g = Graph::new(&s);
        let rows = g.gather(id, &[0, 2, 2]).unwrap();
        let w = g.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let col = g.matmul(rows, w).unwrap();
        let t = g.transpose(col);
        let ones = g.constant(Tensor::matrix(3, 1, vec![1.0; 3]).unwrap());
        let total = g.matmul(t, ones).unwrap();
        let grads = g.backward(total).unwrap();
        assert_eq!(grads.dense(id), vec![0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
