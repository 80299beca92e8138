//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every operation appends a node to a [`Tape`] and returns a [`Var`] handle.
//! Nodes are only ever appended, so the recorded graph is acyclic by
//! construction and [`Tape::backward`] can walk it in reverse creation order.

use ndarray::{Array2, Axis, Zip};

use crate::error::{GpnetError, Result};

pub type Matrix = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    DivScalar(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    Maximum(Var, Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    MaxCols(Var, Vec<usize>),
    SumAll(Var),
    MeanAll(Var),
    L2Norm(Var),
    PairwiseSum(Var, Var),
    Gather(Var, Vec<usize>),
    PairDistances(Var, Vec<(usize, usize)>),
}

/// One recorded value together with the rule that produced it.
#[derive(Debug, Clone)]
pub struct Value {
    pub data: Matrix,
    pub grad: Option<Matrix>,
    pub requires_grad: bool,
    op: Op,
}

/// Append-only record of a computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Value>,
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Reduces a gradient of broadcast shape `r×c` down to a `1×c` row.
fn reduce_to(g: &Matrix, target: (usize, usize)) -> Matrix {
    if g.dim() == target {
        g.clone()
    } else {
        g.sum_axis(Axis(0)).insert_axis(Axis(0))
    }
}

fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Value {
            data,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, data: Matrix) -> Var {
        self.push(data, Op::Leaf, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, data: Matrix) -> Var {
        self.push(data, Op::Leaf, true)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Matrix::from_elem((1, 1), v))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].data.dim()
    }

    pub fn node(&self, v: Var) -> &Value {
        &self.nodes[v.0]
    }

    /// Accumulated gradient of a trainable leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(GpnetError::Dimension {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    /// Accepts equal shapes or `b` being a `1×cols` row broadcast over `a`.
    fn check_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || (sb.0 == 1 && sb.1 == sa.1) {
            Ok(())
        } else {
            Err(GpnetError::Dimension {
                op,
                left: sa,
                right: sb,
            })
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(GpnetError::Dimension {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let data = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(data, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("add", a, b)?;
        let data = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(data, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("sub", a, b)?;
        let data = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(data, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("mul", a, b)?;
        let data = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(data, Op::Mul(a, b), rg))
    }

    /// Scales each row `i` of `x` by `col[i]`, where `col` is `rows×1`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (sx, sc) = (self.shape(x), self.shape(col));
        if sc != (sx.0, 1) {
            return Err(GpnetError::Dimension {
                op: "mul_col",
                left: sx,
                right: sc,
            });
        }
        let data = self.value(x) * self.value(col);
        let rg = self.rg(&[x, col]);
        Ok(self.push(data, Op::MulCol(x, col), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let data = self.value(x) * k;
        let rg = self.rg(&[x]);
        self.push(data, Op::Scale(x, k), rg)
    }

    /// Divides every entry of `x` by the `1×1` value `s`.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(GpnetError::Dimension {
                op: "div_scalar",
                left: self.shape(x),
                right: self.shape(s),
            });
        }
        let d = self.value(s)[[0, 0]];
        if d == 0.0 {
            return Err(GpnetError::Domain {
                op: "div_scalar",
                detail: "division by zero".into(),
            });
        }
        let data = self.value(x) / d;
        let rg = self.rg(&[x, s]);
        Ok(self.push(data, Op::DivScalar(x, s), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(data, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let data = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(&[x]);
        self.push(data, Op::LeakyRelu(x, slope), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let data = self.value(x).mapv(f64::exp);
        let rg = self.rg(&[x]);
        self.push(data, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).iter().find(|v| **v <= 0.0) {
            return Err(GpnetError::Domain {
                op: "log",
                detail: format!("non-positive entry {bad}"),
            });
        }
        let data = self.value(x).mapv(f64::ln);
        let rg = self.rg(&[x]);
        Ok(self.push(data, Op::Log(x), rg))
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("maximum", a, b)?;
        let mut data = self.value(a).clone();
        Zip::from(&mut data)
            .and(self.value(b))
            .for_each(|x, &y| *x = x.max(y));
        let rg = self.rg(&[a, b]);
        Ok(self.push(data, Op::Maximum(a, b), rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let data = softmax_rows(self.value(x));
        let rg = self.rg(&[x]);
        self.push(data, Op::SoftmaxRows(x), rg)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let data = log_softmax_rows(self.value(x));
        let rg = self.rg(&[x]);
        self.push(data, Op::LogSoftmaxRows(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let data = self.value(x).t().to_owned();
        let rg = self.rg(&[x]);
        self.push(data, Op::Transpose(x), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|v| self.shape(*v).0)
            .ok_or_else(|| GpnetError::Contract("concat_cols of nothing".into()))?;
        for p in parts {
            if self.shape(*p).0 != rows {
                return Err(GpnetError::Dimension {
                    op: "concat_cols",
                    left: self.shape(parts[0]),
                    right: self.shape(*p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let data = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let rg = self.rg(parts);
        Ok(self.push(data, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|v| self.shape(*v).1)
            .ok_or_else(|| GpnetError::Contract("concat_rows of nothing".into()))?;
        for p in parts {
            if self.shape(*p).1 != cols {
                return Err(GpnetError::Dimension {
                    op: "concat_rows",
                    left: self.shape(parts[0]),
                    right: self.shape(*p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let data = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        let rg = self.rg(parts);
        Ok(self.push(data, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let n = self.shape(x).0;
        if let Some(bad) = rows.iter().find(|r| **r >= n) {
            return Err(GpnetError::Contract(format!(
                "row {bad} out of range for {n} rows"
            )));
        }
        let data = self.value(x).select(Axis(0), rows);
        let rg = self.rg(&[x]);
        Ok(self.push(data, Op::SelectRows(x, rows.to_vec()), rg))
    }

    /// Column-wise mean over all rows, giving `1×cols`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        let rg = self.rg(&[x]);
        self.push(data, Op::MeanRows(x), rg)
    }

    /// Column-wise maximum over all rows, giving `1×cols`. Ties go to the lowest row.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let (r, c) = m.dim();
        let mut arg = vec![0usize; c];
        let mut data = Matrix::zeros((1, c));
        for j in 0..c {
            let mut best = 0;
            for i in 1..r {
                if m[[i, j]] > m[[best, j]] {
                    best = i;
                }
            }
            arg[j] = best;
            data[[0, j]] = m[[best, j]];
        }
        let rg = self.rg(&[x]);
        self.push(data, Op::MaxRows(x, arg), rg)
    }

    /// Row-wise maximum over all columns, giving `rows×1`. Ties go to the lowest column.
    pub fn max_cols(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let (r, c) = m.dim();
        let mut arg = vec![0usize; r];
        let mut data = Matrix::zeros((r, 1));
        for i in 0..r {
            let mut best = 0;
            for j in 1..c {
                if m[[i, j]] > m[[i, best]] {
                    best = j;
                }
            }
            arg[i] = best;
            data[[i, 0]] = m[[i, best]];
        }
        let rg = self.rg(&[x]);
        self.push(data, Op::MaxCols(x, arg), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let data = Matrix::from_elem((1, 1), self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(data, Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let data = Matrix::from_elem((1, 1), m.sum() / m.len() as f64);
        let rg = self.rg(&[x]);
        self.push(data, Op::MeanAll(x), rg)
    }

    /// Frobenius norm as a `1×1` value. The gradient at the origin is taken as zero.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let n = self.value(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.rg(&[x]);
        self.push(Matrix::from_elem((1, 1), n), Op::L2Norm(x), rg)
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors `a` (n×1) and `b` (k×1).
    pub fn pairwise_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != 1 || sb.1 != 1 {
            return Err(GpnetError::Dimension {
                op: "pairwise_sum",
                left: sa,
                right: sb,
            });
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = Matrix::from_shape_fn((sa.0, sb.0), |(i, j)| va[[i, 0]] + vb[[j, 0]]);
        let rg = self.rg(&[a, b]);
        Ok(self.push(data, Op::PairwiseSum(a, b), rg))
    }

    /// Picks `x[i][cols[i]]` for every row, giving `rows×1`.
    pub fn gather(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if cols.len() != r {
            return Err(GpnetError::Dimension {
                op: "gather",
                left: (r, c),
                right: (cols.len(), 1),
            });
        }
        if let Some(bad) = cols.iter().find(|j| **j >= c) {
            return Err(GpnetError::Range {
                label: *bad,
                classes: c,
            });
        }
        let v = self.value(x);
        let data = Matrix::from_shape_fn((r, 1), |(i, _)| v[[i, cols[i]]]);
        let rg = self.rg(&[x]);
        Ok(self.push(data, Op::Gather(x, cols.to_vec()), rg))
    }

    /// Euclidean distances between row pairs of `x`, giving `pairs×1`.
    pub fn pair_distances(&mut self, x: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let (r, _) = self.shape(x);
        if let Some(bad) = pairs.iter().find(|(a, b)| *a >= r || *b >= r) {
            return Err(GpnetError::Contract(format!(
                "pair {bad:?} out of range for {r} rows"
            )));
        }
        let v = self.value(x);
        let data = Matrix::from_shape_fn((pairs.len(), 1), |(k, _)| {
            let (a, b) = pairs[k];
            row_distance(v, a, b)
        });
        let rg = self.rg(&[x]);
        Ok(self.push(data, Op::PairDistances(x, pairs.to_vec()), rg))
    }

    /// Propagates `d loss / d v` to every trainable leaf reachable from `loss`.
    ///
    /// Leaf gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(GpnetError::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut gb = reduce_to(&g, self.shape(*b));
                        if matches!(node.op, Op::Sub(..)) {
                            gb.mapv_inplace(|v| -v);
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = &g * self.value(*a);
                        accumulate(&mut grads, *b, reduce_to(&gb, self.shape(*b)));
                    }
                }
                Op::MulCol(x, c) => {
                    if self.nodes[x.0].requires_grad {
                        accumulate(&mut grads, *x, &g * self.value(*c));
                    }
                    if self.nodes[c.0].requires_grad {
                        let gc = (&g * self.value(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        accumulate(&mut grads, *c, gc);
                    }
                }
                Op::Scale(x, k) => {
                    accumulate(&mut grads, *x, &g * *k);
                }
                Op::DivScalar(x, s) => {
                    let d = self.value(*s)[[0, 0]];
                    if self.nodes[x.0].requires_grad {
                        accumulate(&mut grads, *x, &g / d);
                    }
                    if self.nodes[s.0].requires_grad {
                        let dot = (&g * self.value(*x)).sum();
                        accumulate(&mut grads, *s, Matrix::from_elem((1, 1), -dot / (d * d)));
                    }
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|g, &v| {
                        if v <= 0.0 {
                            *g = 0.0
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::LeakyRelu(x, slope) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|g, &v| {
                        if v <= 0.0 {
                            *g *= slope
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Exp(x) => {
                    accumulate(&mut grads, *x, &g * &node.data);
                }
                Op::Log(x) => {
                    accumulate(&mut grads, *x, &g / self.value(*x));
                }
                Op::Maximum(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    let mut gb = g;
                    Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(va)
                        .and(vb)
                        .for_each(|ga, gb, &x, &y| if x >= y { *gb = 0.0 } else { *ga = 0.0 });
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.data;
                    let gy = &g * y;
                    let dots = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let gx = &gy - &(y * &dots);
                    accumulate(&mut grads, *x, gx);
                }
                Op::LogSoftmaxRows(x) => {
                    let sm = node.data.mapv(f64::exp);
                    let sums = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let gx = &g - &(&sm * &sums);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Transpose(x) => {
                    accumulate(&mut grads, *x, g.t().to_owned());
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.nodes[p.0].requires_grad {
                            let piece = g.slice(ndarray::s![.., off..off + w]).to_owned();
                            accumulate(&mut grads, *p, piece);
                        }
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        if self.nodes[p.0].requires_grad {
                            let piece = g.slice(ndarray::s![off..off + h, ..]).to_owned();
                            accumulate(&mut grads, *p, piece);
                        }
                        off += h;
                    }
                }
                Op::SelectRows(x, rows) => {
                    let mut gx = Matrix::zeros(self.shape(*x));
                    for (k, r) in rows.iter().enumerate() {
                        let mut dst = gx.row_mut(*r);
                        dst += &g.row(k);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows(x) => {
                    let (r, c) = self.shape(*x);
                    let row = &g / r as f64;
                    let gx = row.broadcast((r, c)).expect("1×c row").to_owned();
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxRows(x, arg) => {
                    let mut gx = Matrix::zeros(self.shape(*x));
                    for (j, &i) in arg.iter().enumerate() {
                        gx[[i, j]] += g[[0, j]];
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxCols(x, arg) => {
                    let mut gx = Matrix::zeros(self.shape(*x));
                    for (i, &j) in arg.iter().enumerate() {
                        gx[[i, j]] += g[[i, 0]];
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    accumulate(&mut grads, *x, Matrix::from_elem(self.shape(*x), g[[0, 0]]));
                }
                Op::MeanAll(x) => {
                    let s = self.shape(*x);
                    let k = g[[0, 0]] / (s.0 * s.1) as f64;
                    accumulate(&mut grads, *x, Matrix::from_elem(s, k));
                }
                Op::L2Norm(x) => {
                    let n = node.data[[0, 0]];
                    let gx = if n > 0.0 {
                        self.value(*x) * (g[[0, 0]] / n)
                    } else {
                        Matrix::zeros(self.shape(*x))
                    };
                    accumulate(&mut grads, *x, gx);
                }
                Op::PairwiseSum(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(1)));
                    }
                }
                Op::Gather(x, cols) => {
                    let mut gx = Matrix::zeros(self.shape(*x));
                    for (i, &j) in cols.iter().enumerate() {
                        gx[[i, j]] += g[[i, 0]];
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::PairDistances(x, pairs) => {
                    let v = self.value(*x);
                    let mut gx = Matrix::zeros(v.dim());
                    for (k, &(a, b)) in pairs.iter().enumerate() {
                        let d = node.data[[k, 0]];
                        if d == 0.0 || a == b {
                            continue;
                        }
                        let coef = g[[k, 0]] / d;
                        let diff = (&v.row(a) - &v.row(b)) * coef;
                        let mut ra = gx.row_mut(a);
                        ra += &diff;
                        let mut rb = gx.row_mut(b);
                        rb -= &diff;
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }

        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[i];
            if !matches!(node.op, Op::Leaf) {
                continue;
            }
            match &mut node.grad {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

pub(crate) fn row_distance(m: &Matrix, a: usize, b: usize) -> f64 {
    m.row(a)
        .iter()
        .zip(m.row(b).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
