//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in execution order, so node indices are
//! already a topological order: parents always have smaller indices than
//! their children. [`Tape::backward`] walks the nodes once in reverse and
//! accumulates adjoints; leaves created with `requires_grad` keep their
//! gradient across calls until [`Tape::zero_grad`].
//!
//! Everything is 2-D. Vectors are `n×1` or `1×n`, scalars are `1×1`.

use crate::error::{Error, Result};
use crate::ndmath::linalg::{self, Mat};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    Transpose(Var),
    Solve(Var, Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Diag(Var),
    DiagPart(Var),
    Minimum(Var, Var),
    ConcatCols(Var, Var),
    LogSumExpRows(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Mat>>,
}

fn dim_err(op: &'static str, a: &Mat, b: &Mat) -> Error {
    Error::Dimension {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hyperbolic tangent, a few times cheaper than the libm call and within
/// about one ulp of it. Rational approximation near zero, `exp` elsewhere.
pub fn tanh(x: f64) -> f64 {
    const P: [f64; 3] = [
        -9.643_991_794_250_522_386_28e-1,
        -9.928_772_310_019_185_865_64e1,
        -1.614_687_684_417_084_479_52e3,
    ];
    const Q: [f64; 3] = [
        1.128_116_784_916_329_314_02e2,
        2.235_488_390_601_004_485_83e3,
        4.844_063_053_251_254_860_48e3,
    ];
    let ax = x.abs();
    if ax > 0.625 {
        if ax > 22.0 {
            return x.signum();
        }
        let t = 1.0 - 2.0 / ((2.0 * ax).exp() + 1.0);
        return if x < 0.0 { -t } else { t };
    }
    let z = x * x;
    let p = (P[0] * z + P[1]) * z + P[2];
    let q = ((z + Q[0]) * z + Q[1]) * z + Q[2];
    x + x * z * p / q
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
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

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Mat, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: &Mat) -> Var {
        self.leaf(value.clone(), true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> Var {
        self.constant(Mat::from_element(1, 1, v))
    }

    /// Copy of `v`'s value with no path back to its parents.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a leaf, or zeros of the right shape if nothing reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Mat {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.nodes[v.0].value.shape();
                Mat::zeros(r, c)
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ---- primitive operations ------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(dim_err("matmul", va, vb));
        }
        let out = va * vb;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err(op, va, vb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).component_mul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn check_row(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(dim_err(op, va, vr));
        }
        Ok(())
    }

    /// `a + 1·row`: adds a `1×k` row to every row of an `n×k` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row);
        for mut out_row in out.row_iter_mut() {
            out_row += r;
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// Scales each column of `a` by the matching entry of a `1×k` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row);
        for mut out_row in out.row_iter_mut() {
            out_row.component_mul_assign(r);
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Multiplies every entry of `a` by the `1×1` variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let vs = self.value(s);
        if vs.shape() != (1, 1) {
            return Err(dim_err("scale_by", self.value(a), vs));
        }
        let out = self.value(a) * vs[(0, 0)];
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::ScaleBy(a, s), rg))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).add_scalar(k);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// Clamps into `[lo, hi]`; entries outside the interval pass no gradient.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// `X` with `a·X = b`. The backward pass uses the adjoint system
    /// `aᵀ·λ = dX`, giving `db = λ` and `da = −λ·Xᵀ`.
    pub fn solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = linalg::solve(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Solve(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Mat::from_element(1, 1, self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = (v.nrows() * v.ncols()).max(1) as f64;
        let out = Mat::from_element(1, 1, v.sum() / n);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Row sums: `n×k → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Mat::from_fn(v.nrows(), 1, |i, _| v.row(i).sum());
        let rg = self.rg(a);
        self.push(out, Op::SumCols(a), rg)
    }

    /// Column vector `n×1` → diagonal matrix `n×n`.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.ncols() != 1 {
            return Err(dim_err("diag", v, v));
        }
        let out = Mat::from_diagonal(&v.column(0).into_owned());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Diag(a), rg))
    }

    /// Diagonal of a square matrix as an `n×1` column.
    pub fn diag_part(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.nrows() != v.ncols() {
            return Err(dim_err("diag_part", v, v));
        }
        let out = Mat::from_fn(v.nrows(), 1, |i, _| v[(i, i)]);
        let rg = self.rg(a);
        Ok(self.push(out, Op::DiagPart(a), rg))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("minimum", a, b)?;
        let out = self.value(a).zip_map(self.value(b), f64::min);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Minimum(a, b), rg))
    }

    /// `[a b]` side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.nrows() != vb.nrows() {
            return Err(dim_err("concat_cols", va, vb));
        }
        let (n, ka, kb) = (va.nrows(), va.ncols(), vb.ncols());
        let mut out = Mat::zeros(n, ka + kb);
        out.columns_mut(0, ka).copy_from(va);
        out.columns_mut(ka, kb).copy_from(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// `log Σ_j exp(a_ij)` per row, with max-subtraction.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Mat::from_fn(v.nrows(), 1, |i, _| {
            let row = v.row(i);
            let m = row.max();
            m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        });
        let rg = self.rg(a);
        self.push(out, Op::LogSumExpRows(a), rg)
    }

    // ---- reverse pass ---------------------------------------------------

    /// Propagates d(root)/d(leaf) into every reachable trainable leaf.
    /// Gradients add onto whatever earlier calls left behind.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(Error::usage(format!(
                "backward needs a scalar, got shape {shape:?}"
            )));
        }
        let mut adj: Vec<Option<Mat>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Mat::from_element(1, 1, 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let node = &self.nodes[i];
            let mut send = |v: Var, d: Mat, nodes: &[Node]| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut adj[v.0] {
                    Some(acc) => *acc += d,
                    slot => *slot = Some(d),
                }
            };
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.0].value;
            match node.op {
                Op::Leaf => {
                    match &mut self.grads[i] {
                        Some(acc) => *acc += &g,
                        slot => *slot = Some(g),
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    if nodes[a.0].requires_grad {
                        send(a, &g * val(b).transpose(), nodes);
                    }
                    if nodes[b.0].requires_grad {
                        send(b, val(a).transpose() * &g, nodes);
                    }
                }
                Op::Add(a, b) => {
                    send(a, g.clone(), nodes);
                    send(b, g, nodes);
                }
                Op::Sub(a, b) => {
                    send(a, g.clone(), nodes);
                    send(b, -g, nodes);
                }
                Op::Mul(a, b) => {
                    send(a, g.component_mul(val(b)), nodes);
                    send(b, g.component_mul(val(a)), nodes);
                }
                Op::AddRow(a, r) => {
                    let row_sum = Mat::from_fn(1, g.ncols(), |_, j| g.column(j).sum());
                    send(r, row_sum, nodes);
                    send(a, g, nodes);
                }
                Op::MulRow(a, r) => {
                    let (va, vr) = (val(a), val(r));
                    let dr = Mat::from_fn(1, g.ncols(), |_, j| g.column(j).dot(&va.column(j)));
                    let mut da = g;
                    for mut row in da.row_iter_mut() {
                        row.component_mul_assign(vr);
                    }
                    send(r, dr, nodes);
                    send(a, da, nodes);
                }
                Op::Scale(a, k) => send(a, g * k, nodes),
                Op::ScaleBy(a, s) => {
                    let ds = Mat::from_element(1, 1, g.dot(val(a)));
                    send(s, ds, nodes);
                    send(a, g * val(s)[(0, 0)], nodes);
                }
                Op::AddScalar(a) => send(a, g, nodes),
                Op::Clamp(a, lo, hi) => {
                    let inside = |x: f64| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 };
                    send(a, g.zip_map(val(a), |g, x| g * inside(x)), nodes);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    send(a, g.zip_map(y, |g, y| g * (1.0 - y * y)), nodes);
                }
                Op::Exp(a) => send(a, g.component_mul(&node.value), nodes),
                Op::Log(a) => send(a, g.component_div(val(a)), nodes),
                Op::Softplus(a) => send(a, g.zip_map(val(a), |g, x| g * sigmoid(x)), nodes),
                Op::Square(a) => send(a, g.zip_map(val(a), |g, x| 2.0 * g * x), nodes),
                Op::Transpose(a) => send(a, g.transpose(), nodes),
                Op::Solve(a, b) => {
                    let lambda = linalg::solve(&val(a).transpose(), &g)?;
                    if nodes[a.0].requires_grad {
                        send(a, -(&lambda * node.value.transpose()), nodes);
                    }
                    send(b, lambda, nodes);
                }
                Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    send(a, Mat::from_element(r, c, g[(0, 0)]), nodes);
                }
                Op::Mean(a) => {
                    let (r, c) = val(a).shape();
                    let n = (r * c).max(1) as f64;
                    send(a, Mat::from_element(r, c, g[(0, 0)] / n), nodes);
                }
                Op::SumCols(a) => {
                    let (r, c) = val(a).shape();
                    send(a, Mat::from_fn(r, c, |i, _| g[(i, 0)]), nodes);
                }
                Op::Diag(a) => {
                    let n = g.nrows();
                    send(a, Mat::from_fn(n, 1, |i, _| g[(i, i)]), nodes);
                }
                Op::DiagPart(a) => {
                    let n = g.nrows();
                    let mut d = Mat::zeros(n, n);
                    for k in 0..n {
                        d[(k, k)] = g[(k, 0)];
                    }
                    send(a, d, nodes);
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    let mask_a = va.zip_map(vb, |x, y| if x <= y { 1.0 } else { 0.0 });
                    let da = g.component_mul(&mask_a);
                    let db = g - &da;
                    send(a, da, nodes);
                    send(b, db, nodes);
                }
                Op::ConcatCols(a, b) => {
                    let ka = val(a).ncols();
                    let kb = val(b).ncols();
                    send(a, g.columns(0, ka).into_owned(), nodes);
                    send(b, g.columns(ka, kb).into_owned(), nodes);
                }
                Op::LogSumExpRows(a) => {
                    let x = val(a);
                    let y = &node.value;
                    let d = Mat::from_fn(x.nrows(), x.ncols(), |r, c| {
                        g[(r, 0)] * (x[(r, c)] - y[(r, 0)]).exp()
                    });
                    send(a, d, nodes);
                }
            }
        }
        Ok(())
    }
}
