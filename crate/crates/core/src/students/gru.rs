//! Gated recurrent unit built from tape primitives.
//!
//! For input row `x_t` and previous state `h` (zero at the start):
//!
//! ```text
//! z  = sigmoid(x_t W_z + h U_z + b_z)          update gate
//! r  = sigmoid(x_t W_r + h U_r + b_r)          reset gate
//! h~ = tanh(x_t W_h + (r * h) U_h + b_h)       candidate
//! h' = z * h + (1 - z) * h~
//! ```
//!
//! `W = [W_z | W_r | W_h]` is `d x 3h`, `U_zr = [U_z | U_r]` is `h x 2h`.

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::rng::StreamRng;

use super::embedding::uniform;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub w: ParamId,
    pub b: ParamId,
    pub u_zr: ParamId,
    pub u_h: ParamId,
    pub hidden: usize,
}

impl GruParams {
    pub(crate) fn init(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        scale: f64,
        rng: &mut StreamRng,
    ) -> Self {
        Self {
            w: store.add(format!("{prefix}.w"), uniform(input, 3 * hidden, scale, rng)),
            b: store.add(format!("{prefix}.b"), uniform(1, 3 * hidden, scale, rng)),
            u_zr: store.add(format!("{prefix}.u_zr"), uniform(hidden, 2 * hidden, scale, rng)),
            u_h: store.add(format!("{prefix}.u_h"), uniform(hidden, hidden, scale, rng)),
            hidden,
        }
    }
}

/// Runs the GRU over the rows of `seq` (n x d) and returns the n x h hidden
/// states, row `t` holding the state after reading token `t`.
pub fn gru_sequence(g: &mut Graph, seq: Var, p: &GruParams, dir: Direction) -> Result<Var> {
    let n = g.value(seq).rows();
    let h = p.hidden;
    let w = g.param(p.w);
    let b = g.param(p.b);
    let u_zr = g.param(p.u_zr);
    let u_h = g.param(p.u_h);
    let xw = g.matmul(seq, w)?;
    let xw = g.add_row(xw, b)?;

    let mut state = g.constant(Tensor::row(vec![0.0; h]));
    let mut states = vec![state; n];
    let order: Vec<usize> = match dir {
        Direction::Forward => (0..n).collect(),
        Direction::Backward => (0..n).rev().collect(),
    };
    for t in order {
        let xt = g.slice_rows(xw, t, 1)?;
        let x_z = g.slice_cols(xt, 0, h)?;
        let x_r = g.slice_cols(xt, h, h)?;
        let x_h = g.slice_cols(xt, 2 * h, h)?;
        let hu = g.matmul(state, u_zr)?;
        let hu_z = g.slice_cols(hu, 0, h)?;
        let hu_r = g.slice_cols(hu, h, h)?;
        let z = g.add(x_z, hu_z)?;
        let z = g.sigmoid(z);
        let r = g.add(x_r, hu_r)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, state)?;
        let rhu = g.matmul(rh, u_h)?;
        let cand = g.add(x_h, rhu)?;
        let cand = g.tanh(cand);
        let keep = g.mul(z, state)?;
        let one_minus_z = g.one_minus(z);
        let fresh = g.mul(one_minus_z, cand)?;
        state = g.add(keep, fresh)?;
        states[t] = state;
    }
    g.vconcat(&states)
}
