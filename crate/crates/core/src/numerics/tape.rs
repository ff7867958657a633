//! Eager reverse-mode differentiation over a flat operation tape.
//!
//! Each primitive records a node holding its output value and the indices
//! of its inputs; values are computed at record time so shapes and masks
//! can depend on intermediate results. `backward` walks the tape once in
//! reverse creation order, which is also topological order.

use crate::error::NumericsError;
use crate::numerics::matrix::{matmul_into, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    /// Adds a 1 x c row vector to every row of an n x c matrix.
    AddRowBroadcast(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Elu(usize),
    Exp(usize),
    Log(usize),
    RowSoftmax(usize),
    /// Softmax restricted to `mask`-true entries per row; masked entries are 0.
    MaskedRowSoftmax(usize, Vec<bool>),
    MeanPoolRows(usize),
    ConcatCols(usize, usize),
    ConcatRows(usize, usize),
    Transpose(usize),
    Sum(usize),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Operation tape. Confined to a single thread; independent tapes may run
/// in parallel.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v`.
    /// Zero if the node does not influence the target.
    pub fn grad(&self, v: Var) -> Matrix {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => {
                let (r, c) = self.nodes[v.0].value.shape();
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul: operand shapes {ar}x{ac} and {br}x{bc} are incompatible");
        let mut out = Matrix::zeros(ar, bc);
        matmul_into(&self.nodes[a.0].value, &self.nodes[b.0].value, &mut out);
        self.push(Op::MatMul(a.0, b.0), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary_shape_checked("add", a, b, |x, y| x + y);
        self.push(Op::Add(a.0, b.0), value)
    }

    pub fn add_row_broadcast(&mut self, m: Var, row: Var) -> Var {
        let (mr, mc) = self.shape(m);
        let (rr, rc) = self.shape(row);
        assert!(
            rr == 1 && rc == mc,
            "add_row_broadcast: operand shapes {mr}x{mc} and {rr}x{rc} are incompatible"
        );
        let mut out = self.nodes[m.0].value.clone();
        let row_data: Vec<f64> = self.nodes[row.0].value.data().to_vec();
        for r in 0..mr {
            for c in 0..mc {
                let v = out.get(r, c) + row_data[c];
                out.set(r, c, v);
            }
        }
        self.push(Op::AddRowBroadcast(m.0, row.0), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary_shape_checked("sub", a, b, |x, y| x - y);
        self.push(Op::Sub(a.0, b.0), value)
    }

    /// Entrywise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary_shape_checked("mul", a, b, |x, y| x * y);
        self.push(Op::Mul(a.0, b.0), value)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.nodes[a.0].value.scale(factor);
        self.push(Op::Scale(a.0, factor), value)
    }

    pub fn add_scalar(&mut self, a: Var, addend: f64) -> Var {
        let value = self.map_values(a, |x| x + addend);
        self.push(Op::AddScalar(a.0), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map_values(a, |x| x.max(0.0));
        self.push(Op::Relu(a.0), value)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.map_values(a, |x| if x >= 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a.0, slope), value)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.map_values(a, |x| if x > 0.0 { x } else { x.exp() - 1.0 });
        self.push(Op::Elu(a.0), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.map_values(a, f64::exp);
        self.push(Op::Exp(a.0), value)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.map_values(a, f64::ln);
        self.push(Op::Log(a.0), value)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.row_softmax();
        self.push(Op::RowSoftmax(a.0), value)
    }

    /// Row softmax over `mask`-true entries; masked entries output 0.
    /// Every row must have at least one unmasked entry.
    pub fn masked_row_softmax(&mut self, a: Var, mask: &[bool]) -> Var {
        let (rows, cols) = self.shape(a);
        assert_eq!(mask.len(), rows * cols, "mask length must match matrix size");
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let m_row = &mask[r * cols..(r + 1) * cols];
            assert!(m_row.iter().any(|&b| b), "masked_row_softmax: empty row {r}");
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                if m_row[c] {
                    max = max.max(self.nodes[a.0].value.get(r, c));
                }
            }
            let mut sum = 0.0;
            for c in 0..cols {
                if m_row[c] {
                    let e = (self.nodes[a.0].value.get(r, c) - max).exp();
                    out.set(r, c, e);
                    sum += e;
                }
            }
            for c in 0..cols {
                if m_row[c] {
                    out.set(r, c, out.get(r, c) / sum);
                }
            }
        }
        self.push(Op::MaskedRowSoftmax(a.0, mask.to_vec()), out)
    }

    /// Column-wise mean over rows: n x c -> 1 x c.
    pub fn mean_pool_rows(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.col_mean();
        self.push(Op::MeanPoolRows(a.0), value)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ar, br, "concat_cols: operand shapes {ar}x{ac} and {br}x{bc} are incompatible");
        let mut data = Vec::with_capacity(ar * (ac + bc));
        for r in 0..ar {
            data.extend_from_slice(self.nodes[a.0].value.row_slice(r));
            data.extend_from_slice(self.nodes[b.0].value.row_slice(r));
        }
        let value = Matrix::from_vec_unchecked(ar, ac + bc, data);
        self.push(Op::ConcatCols(a.0, b.0), value)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, bc, "concat_rows: operand shapes {ar}x{ac} and {br}x{bc} are incompatible");
        let mut data = Vec::with_capacity((ar + br) * ac);
        data.extend_from_slice(self.nodes[a.0].value.data());
        data.extend_from_slice(self.nodes[b.0].value.data());
        let value = Matrix::from_vec_unchecked(ar + br, ac, data);
        self.push(Op::ConcatRows(a.0, b.0), value)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.transpose();
        self.push(Op::Transpose(a.0), value)
    }

    /// Sum of all entries as a 1 x 1 matrix. Non-finite sums are kept so
    /// the loss check can detect them.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.sum();
        let value = Matrix::from_vec_unchecked(1, 1, vec![total]);
        self.push(Op::Sum(a.0), value)
    }

    /// Mean of all entries as a 1 x 1 matrix.
    pub fn mean(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.sum(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = &self.nodes[v.0].value;
        assert_eq!(m.shape(), (1, 1), "expected scalar node");
        m.get(0, 0)
    }

    /// Backpropagate from a 1 x 1 node. The gradient of the target with
    /// respect to itself is seeded as 1.
    pub fn backward(&mut self, target: Var) -> Result<(), NumericsError> {
        let (r, c) = self.shape(target);
        assert_eq!((r, c), (1, 1), "backward target must be scalar");
        if !self.nodes[target.0].value.is_finite() {
            return Err(NumericsError::NonFinite {
                what: "backward target".into(),
                index: target.0,
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[target.0] = Some(Matrix::from_vec(1, 1, vec![1.0]).unwrap());

        for i in (0..=target.0).rev() {
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &Matrix) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let bt = self.nodes[b].value.transpose();
                let mut da = Matrix::zeros(self.nodes[a].value.rows(), self.nodes[a].value.cols());
                matmul_into(g, &bt, &mut da);
                self.accum(a, &da);
                let at = self.nodes[a].value.transpose();
                let mut db = Matrix::zeros(self.nodes[b].value.rows(), self.nodes[b].value.cols());
                matmul_into(&at, g, &mut db);
                self.accum(b, &db);
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(a, g);
                self.accum(b, g);
            }
            Op::AddRowBroadcast(m, row) => {
                let (m, row) = (*m, *row);
                self.accum(m, g);
                let mut drow = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        drow.data_mut()[c] += g.get(r, c);
                    }
                }
                self.accum(row, &drow);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(a, g);
                let neg = g.scale(-1.0);
                self.accum(b, &neg);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let da = g.hadamard(&self.nodes[b].value).expect("shape checked");
                self.accum(a, &da);
                let db = g.hadamard(&self.nodes[a].value).expect("shape checked");
                self.accum(b, &db);
            }
            Op::Scale(a, factor) => {
                let (a, factor) = (*a, *factor);
                let da = g.scale(factor);
                self.accum(a, &da);
            }
            Op::AddScalar(a) => {
                let a = *a;
                self.accum(a, g);
            }
            Op::Relu(a) => {
                let a = *a;
                let da = self.elementwise_input_grad(a, g, |x| if x > 0.0 { 1.0 } else { 0.0 });
                self.accum(a, &da);
            }
            Op::LeakyRelu(a, slope) => {
                let (a, slope) = (*a, *slope);
                let da = self.elementwise_input_grad(a, g, |x| if x >= 0.0 { 1.0 } else { slope });
                self.accum(a, &da);
            }
            Op::Elu(a) => {
                let a = *a;
                let da = self.elementwise_input_grad(a, g, |x| if x > 0.0 { 1.0 } else { x.exp() });
                self.accum(a, &da);
            }
            Op::Exp(a) => {
                let a = *a;
                let da = g.hadamard(&self.nodes[i].value).expect("shape checked");
                self.accum(a, &da);
            }
            Op::Log(a) => {
                let a = *a;
                let da = self.elementwise_input_grad(a, g, |x| 1.0 / x);
                self.accum(a, &da);
            }
            Op::RowSoftmax(a) => {
                let a = *a;
                let da = softmax_backward(&self.nodes[i].value, g, None);
                self.accum(a, &da);
            }
            Op::MaskedRowSoftmax(a, mask) => {
                let a = *a;
                let mask = mask.clone();
                let da = softmax_backward(&self.nodes[i].value, g, Some(&mask));
                self.accum(a, &da);
            }
            Op::MeanPoolRows(a) => {
                let a = *a;
                let rows = self.nodes[a].value.rows();
                let mut da = Matrix::zeros(rows, g.cols());
                let inv = 1.0 / rows as f64;
                for r in 0..rows {
                    for c in 0..g.cols() {
                        da.set(r, c, g.get(0, c) * inv);
                    }
                }
                self.accum(a, &da);
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let ac = self.nodes[a].value.cols();
                let rows = g.rows();
                let mut da = Matrix::zeros(rows, ac);
                let mut db = Matrix::zeros(rows, g.cols() - ac);
                for r in 0..rows {
                    for c in 0..g.cols() {
                        if c < ac {
                            da.set(r, c, g.get(r, c));
                        } else {
                            db.set(r, c - ac, g.get(r, c));
                        }
                    }
                }
                self.accum(a, &da);
                self.accum(b, &db);
            }
            Op::ConcatRows(a, b) => {
                let (a, b) = (*a, *b);
                let ar = self.nodes[a].value.rows();
                let cols = g.cols();
                let da = Matrix::from_vec_unchecked(ar, cols, g.data()[..ar * cols].to_vec());
                let db =
                    Matrix::from_vec_unchecked(g.rows() - ar, cols, g.data()[ar * cols..].to_vec());
                self.accum(a, &da);
                self.accum(b, &db);
            }
            Op::Transpose(a) => {
                let a = *a;
                let da = g.transpose();
                self.accum(a, &da);
            }
            Op::Sum(a) => {
                let a = *a;
                let (r, c) = self.nodes[a].value.shape();
                let da = Matrix::filled(r, c, g.get(0, 0));
                self.accum(a, &da);
            }
        }
    }

    fn elementwise_input_grad(&self, input: usize, g: &Matrix, df: impl Fn(f64) -> f64) -> Matrix {
        let x = &self.nodes[input].value;
        let mut out = g.clone();
        for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
            *o *= df(xv);
        }
        out
    }

    fn accum(&mut self, idx: usize, delta: &Matrix) {
        match &mut self.grads[idx] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta.clone()),
        }
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn map_values(&self, a: Var, f: impl Fn(f64) -> f64) -> Matrix {
        let mut out = self.nodes[a.0].value.clone();
        for v in out.data_mut() {
            *v = f(*v);
        }
        out
    }

    fn binary_shape_checked(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Matrix {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(
            (ar, ac),
            (br, bc),
            "{op}: operand shapes {ar}x{ac} and {br}x{bc} are incompatible"
        );
        let mut out = self.nodes[a.0].value.clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o = f(*o, bv);
        }
        out
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }
}

fn softmax_backward(y: &Matrix, g: &Matrix, mask: Option<&[bool]>) -> Matrix {
    let (rows, cols) = y.shape();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let mut inner = 0.0;
        for c in 0..cols {
            if mask.is_none_or(|m| m[r * cols + c]) {
                inner += y.get(r, c) * g.get(r, c);
            }
        }
        for c in 0..cols {
            if mask.is_none_or(|m| m[r * cols + c]) {
                out.set(r, c, y.get(r, c) * (g.get(r, c) - inner));
            }
        }
    }
    out
}
