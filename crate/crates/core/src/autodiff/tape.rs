//! Wengert-list reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends a node holding its forward value; node indices
//! are therefore already in topological order and `backward` walks them in
//! reverse exactly once.

use super::tensor::{gemm, Tensor};
use super::AutodiffError;

/// Probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `x · wᵀ`
    MatMulT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    /// Rows of the first operand where the mask is set, else of the second.
    SelectRows(Var, Var, Vec<bool>),
    Sum(Var),
    Mse(Var, Var),
    Bce(Var, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to the leaves that influenced it.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn mismatch(op: &'static str, expected: &[usize], got: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf whose gradient is tracked (a parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        let t = &self.nodes[v.0].value;
        [t.rows(), t.cols()]
    }

    /// Batched affine map without bias: `x[B×in] · w[out×in]ᵀ -> [B×out]`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var, AutodiffError> {
        let [b, in_x] = self.shape(x);
        let [out, in_w] = self.shape(w);
        if in_x != in_w {
            return Err(mismatch("matmul_t", &[out, in_x], &[out, in_w]));
        }
        let mut y = vec![0.0; b * out];
        gemm(
            self.value(x).data(),
            b,
            in_x,
            false,
            self.value(w).data(),
            out,
            in_w,
            true,
            &mut y,
            false,
        );
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor::new(vec![b, out], y)?, Op::MatMulT(x, w), ng))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let [_, cols] = self.shape(x);
        let bv = self.value(bias);
        if bv.len() != cols {
            return Err(mismatch("add_bias", &[cols], bv.shape()));
        }
        let mut y = self.value(x).clone();
        let bd = bv.data().to_vec();
        for row in y.data_mut().chunks_mut(cols) {
            for (v, b) in row.iter_mut().zip(&bd) {
                *v += b;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(y, Op::AddBias(x, bias), ng))
    }

    /// `x · wᵀ + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xw = self.matmul_t(x, w)?;
        self.add_bias(xw, b)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, &sa, &sb));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("same element count")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let y = self.zip_with(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let y = self.zip_with(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Sub(a, b), ng))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let y = self.zip_with(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let y = self.value(a).map(|v| v * k);
        let ng = self.needs(a);
        self.push(y, Op::Scale(a, k), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(y, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(y, Op::Tanh(a), ng)
    }

    /// Concatenates along columns; all parts need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = parts.first().map_or(0, |&p| self.shape(p)[0]);
        let mut cols = 0;
        for &p in parts {
            let [r, c] = self.shape(p);
            if r != rows {
                return Err(mismatch("concat", &[rows], &[r]));
            }
            cols += c;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::Concat(parts.to_vec()),
            ng,
        ))
    }

    /// Columns `start..start+len` of every row.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let [rows, cols] = self.shape(a);
        if start + len > cols {
            return Err(mismatch("slice", &[cols], &[start + len]));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let ng = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![rows, len], data)?,
            Op::Slice(a, start),
            ng,
        ))
    }

    /// Row `r` comes from `a` when `mask[r]`, otherwise from `b`.
    pub fn select_rows(&mut self, a: Var, b: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        self.same_shape("select_rows", a, b)?;
        let [rows, _] = self.shape(a);
        if mask.len() != rows {
            return Err(mismatch("select_rows", &[rows], &[mask.len()]));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(va.len());
        for (r, &m) in mask.iter().enumerate() {
            data.extend_from_slice(if m { va.row(r) } else { vb.row(r) });
        }
        let y = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::SelectRows(a, b, mask.to_vec()), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mse", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let n = va.len().max(1) as f64;
        let s: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b), ng))
    }

    /// Mean binary cross entropy of probabilities `p` against a constant label.
    pub fn bce(&mut self, p: Var, target: f64) -> Var {
        let vp = self.value(p);
        let n = vp.len().max(1) as f64;
        let s: f64 = vp.data().iter().map(|&x| bce_scalar(x, target)).sum();
        let ng = self.needs(p);
        self.push(Tensor::scalar(s / n), Op::Bce(p, target), ng)
    }

    /// Reverse sweep from a one-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(AutodiffError::Graph(format!(
                "loss node {} is not on this tape ({} nodes)",
                loss.0,
                self.nodes.len()
            )));
        };
        if node.value.len() != 1 {
            return Err(AutodiffError::Graph(format!(
                "loss must be a scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(node.value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            // Interior gradients are released once consumed; leaves and the loss remain.
            if matches!(node.op, Op::Leaf) || i == loss.0 {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => {}
            Op::MatMulT(x, w) => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let (b, inp) = (vx.rows(), vx.cols());
                let outd = vw.rows();
                if self.needs(*x) {
                    // dx = g[B×out] · w[out×in]
                    let mut dx = vec![0.0; b * inp];
                    gemm(g.data(), b, outd, false, vw.data(), outd, inp, false, &mut dx, false);
                    let dx = Tensor::new(vx.shape().to_vec(), dx).expect("shape");
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*w) {
                    // dw = gᵀ[out×B] · x[B×in]
                    let mut dw = vec![0.0; outd * inp];
                    gemm(g.data(), b, outd, true, vx.data(), b, inp, false, &mut dw, false);
                    let dw = Tensor::new(vw.shape().to_vec(), dw).expect("shape");
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::AddBias(x, bias) => {
                if self.needs(*bias) {
                    let cols = g.cols();
                    let mut db = vec![0.0; cols];
                    for row in g.data().chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let db = Tensor::new(self.value(*bias).shape().to_vec(), db).expect("shape");
                    self.accumulate(grads, *bias, db);
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d = hadamard(g, self.value(*b));
                    self.accumulate(grads, *a, d);
                }
                if self.needs(*b) {
                    let d = hadamard(g, self.value(*a));
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|v| v * k)),
            Op::Sigmoid(a) => {
                let d = zip(g, out, |gv, s| gv * s * (1.0 - s));
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = zip(g, out, |gv, t| gv * (1.0 - t * t));
                self.accumulate(grads, *a, d);
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        let d = Tensor::new(self.value(p).shape().to_vec(), d).expect("shape");
                        self.accumulate(grads, p, d);
                    }
                    offset += c;
                }
            }
            Op::Slice(a, start) => {
                let src = self.value(*a);
                let (rows, cols) = (src.rows(), src.cols());
                let len = g.cols();
                let mut d = Tensor::zeros(src.shape());
                for r in 0..rows {
                    d.data_mut()[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SelectRows(a, b, mask) => {
                let cols = g.cols();
                for (var, pick) in [(*a, true), (*b, false)] {
                    if !self.needs(var) {
                        continue;
                    }
                    let mut d = Tensor::zeros(g.shape());
                    for (r, &m) in mask.iter().enumerate() {
                        if m == pick {
                            d.data_mut()[r * cols..(r + 1) * cols]
                                .copy_from_slice(&g.data()[r * cols..(r + 1) * cols]);
                        }
                    }
                    self.accumulate(grads, var, d);
                }
            }
            Op::Sum(a) => {
                let d = Tensor::filled(self.value(*a).shape(), g.item());
                self.accumulate(grads, *a, d);
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let k = 2.0 * g.item() / va.len().max(1) as f64;
                let diff = zip(va, vb, |x, y| k * (x - y));
                if self.needs(*b) {
                    self.accumulate(grads, *b, diff.map(|v| -v));
                }
                self.accumulate(grads, *a, diff);
            }
            Op::Bce(p, target) => {
                let vp = self.value(*p);
                let k = g.item() / vp.len().max(1) as f64;
                let d = vp.map(|x| k * bce_grad(x, *target));
                self.accumulate(grads, *p, d);
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same element count")
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip(a, b, |x, y| x * y)
}

/// `-(t ln p + (1 - t) ln(1 - p))` with `p` clamped away from 0 and 1.
pub fn bce_scalar(p: f64, target: f64) -> f64 {
    let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln())
}

fn bce_grad(p: f64, target: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    -(target / p) + (1.0 - target) / (1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.param(row(&[1.0, -2.0, 3.5]));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(g.get(s).unwrap().data(), &[1.0]);
    }

    #[test]
    fn quadratic_dense_gradient_matches_closed_form() {
        // loss = mse(W x + b, y); dL/dy_hat = 2/N (y_hat - y); dW = dy_hat ⊗ x; db = dy_hat.
        let x_v = [0.5, -1.0, 2.0];
        let w_v = [0.1, 0.2, -0.3, 0.4, -0.5, 0.6];
        let b_v = [0.05, -0.05];
        let y_v = [1.0, -1.0];
        let mut t = Tape::new();
        let x = t.constant(row(&x_v));
        let w = t.param(Tensor::new(vec![2, 3], w_v.to_vec()).unwrap());
        let b = t.param(Tensor::vector(b_v.to_vec()));
        let y = t.constant(row(&y_v));
        let yh = t.affine(x, w, b).unwrap();
        let l = t.mse(yh, y).unwrap();
        let g = t.backward(l).unwrap();

        let yhat: Vec<f64> = (0..2)
            .map(|o| (0..3).map(|i| w_v[o * 3 + i] * x_v[i]).sum::<f64>() + b_v[o])
            .collect();
        let dyh: Vec<f64> = (0..2).map(|o| yhat[o] - y_v[o]).collect();
        for o in 0..2 {
            assert!((g.get(b).unwrap().data()[o] - dyh[o]).abs() < 1e-14);
            for i in 0..3 {
                let want = dyh[o] * x_v[i];
                assert!((g.get(w).unwrap().data()[o * 3 + i] - want).abs() < 1e-14);
            }
        }
        assert!(g.get(x).is_none());
    }

    #[test]
    fn backward_rejects_foreign_or_non_scalar_nodes() {
        let mut t = Tape::new();
        let x = t.param(row(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(AutodiffError::Graph(_))));
        let mut other = Tape::new();
        let a = other.param(row(&[1.0]));
        let b = other.sum(a);
        let _ = b;
        assert!(matches!(t.backward(Var(5)), Err(AutodiffError::Graph(_))));
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut t = Tape::new();
        let a = t.param(row(&[1.0, 2.0]));
        let b = t.param(row(&[1.0, 2.0, 3.0]));
        assert!(matches!(t.add(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(matches!(t.mse(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(matches!(t.matmul_t(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(t.slice(a, 1, 2).is_err());
    }

    #[test]
    fn bce_values() {
        assert!((bce_scalar(1.0, 1.0) + (-BCE_EPS).ln_1p()).abs() < 1e-15);
        assert!((bce_scalar(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_scalar(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_scalar(0.9, 0.0) - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn select_rows_routes_gradient() {
        let mut t = Tape::new();
        let a = t.param(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.param(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let s = t.select_rows(a, b, &[true, false]).unwrap();
        assert_eq!(t.value(s).data(), &[1.0, 2.0, 7.0, 8.0]);
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.get(b).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
    }
}
