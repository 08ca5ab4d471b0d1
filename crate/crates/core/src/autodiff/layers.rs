//! Dense and LSTM layers expressed as tape operations, plus their initializers.

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::AutodiffError;

/// `y = x · Wᵀ + b` for a batch of row vectors `x[B×in]`, `W[out×in]`, `b[out]`.
pub fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    tape.affine(x, w, b)
}

/// Tape handles of one LSTM cell's parameters.
///
/// Gate rows are stacked as `[input, forget, cell, output]`, each `hidden` wide.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
    pub hidden: usize,
}

/// One LSTM step over a batch; returns `(h, c)`.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> Result<(Var, Var), AutodiffError> {
    let hs = p.hidden;
    if tape.shape(p.w_ih)[0] != 4 * hs || tape.shape(h_prev)[1] != hs || tape.shape(c_prev)[1] != hs {
        return Err(AutodiffError::ShapeMismatch {
            op: "lstm_cell",
            expected: vec![4 * hs, hs],
            got: vec![tape.shape(p.w_ih)[0], tape.shape(h_prev)[1]],
        });
    }
    let xi = tape.matmul_t(x, p.w_ih)?;
    let hh = tape.matmul_t(h_prev, p.w_hh)?;
    let pre = tape.add(xi, hh)?;
    let pre = tape.add_bias(pre, p.b)?;

    let i_pre = tape.slice(pre, 0, hs)?;
    let f_pre = tape.slice(pre, hs, hs)?;
    let g_pre = tape.slice(pre, 2 * hs, hs)?;
    let o_pre = tape.slice(pre, 3 * hs, hs)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Runs an LSTM from zero state over `inputs` (each `[B×in]`), returning every hidden output.
pub fn lstm_sequence(
    tape: &mut Tape,
    inputs: &[Var],
    p: &LstmVars,
) -> Result<Vec<Var>, AutodiffError> {
    let rows = inputs.first().map_or(1, |&x| tape.shape(x)[0]);
    let mut h = tape.constant(Tensor::zeros(&[rows, p.hidden]));
    let mut c = tape.constant(Tensor::zeros(&[rows, p.hidden]));
    let mut outs = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let (nh, nc) = lstm_cell(tape, x, h, c, p)?;
        h = nh;
        c = nc;
        outs.push(h);
    }
    Ok(outs)
}

/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` matrix of shape `[rows, fan_in]`.
pub fn init_weight<R: Rng + ?Sized>(rng: &mut R, rows: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * fan_in)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(vec![rows, fan_in], data).expect("shape")
}

/// Zero LSTM bias except the forget-gate block, which starts at +1.
pub fn init_lstm_bias(hidden: usize) -> Tensor {
    let mut b = vec![0.0; 4 * hidden];
    b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
    Tensor::vector(b)
}
