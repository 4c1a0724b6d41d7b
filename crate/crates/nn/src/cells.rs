//! Model cells built on the tape: dense layers, the GRU cell, the Child-Sum
//! Tree-LSTM cell and global dot-product attention.

use rand::Rng;

use crate::error::NnError;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Shape};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.glorot(format!("{name}.w"), Shape::new(input, output), rng),
            b: store.zeros(format!("{name}.b"), Shape::row(output)),
            input,
            output,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, NnError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Two-layer perceptron with a sigmoid output, used as a discriminator and
/// as the pair-scoring head.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, 1, rng),
        }
    }

    /// Probability in `(0, 1)` for each input row.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, NnError> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.tanh(h)?;
        let o = self.out.forward(g, store, h)?;
        g.sigmoid(o)
    }
}

/// Gated recurrent unit (update gate `z`, reset gate `r`, candidate `n`):
///
/// ```text
/// z  = σ(x Wz + h Uz + bz)
/// r  = σ(x Wr + h Ur + br)
/// n  = tanh(x Wn + (r ⊙ h) Un + bn)
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    /// `input x 3h`, gate order z, r, n.
    pub w: ParamId,
    /// `h x 2h`, gate order z, r.
    pub u_zr: ParamId,
    pub u_n: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.glorot(format!("{name}.w"), Shape::new(input, 3 * hidden), rng),
            u_zr: store.glorot(format!("{name}.u_zr"), Shape::new(hidden, 2 * hidden), rng),
            u_n: store.glorot(format!("{name}.u_n"), Shape::new(hidden, hidden), rng),
            b: store.zeros(format!("{name}.b"), Shape::row(3 * hidden)),
            input,
            hidden,
        }
    }

    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        h: Var,
    ) -> Result<Var, NnError> {
        let hs = self.hidden;
        let (w, b, u_zr, u_n) = (
            g.param(store, self.w),
            g.param(store, self.b),
            g.param(store, self.u_zr),
            g.param(store, self.u_n),
        );
        let xw = g.matmul(x, w)?;
        let xw = g.add_row(xw, b)?;
        let hu = g.matmul(h, u_zr)?;
        let xzr = g.slice_cols(xw, 0, 2 * hs)?;
        let zr = g.add(xzr, hu)?;
        let zr = g.sigmoid(zr)?;
        let z = g.slice_cols(zr, 0, hs)?;
        let r = g.slice_cols(zr, hs, hs)?;
        let rh = g.mul(r, h)?;
        let rhu = g.matmul(rh, u_n)?;
        let xn = g.slice_cols(xw, 2 * hs, hs)?;
        let n = g.add(xn, rhu)?;
        let n = g.tanh(n)?;
        let h_minus_n = g.sub(h, n)?;
        let gated = g.mul(z, h_minus_n)?;
        g.add(n, gated)
    }
}

/// Child-Sum Tree-LSTM cell.
///
/// ```text
/// h~  = Σ_k h_k
/// i   = σ(W_i x + U_i h~ + b_i)
/// f_k = σ(W_f x + U_f h_k + b_f)      one forget gate per child
/// o   = σ(W_o x + U_o h~ + b_o)
/// u   = tanh(W_u x + U_u h~ + b_u)
/// c   = i ⊙ u + Σ_k f_k ⊙ c_k
/// h   = o ⊙ tanh(c)
/// ```
///
/// Leaves have no children, so `h~ = 0` and `c = i ⊙ u`.
#[derive(Debug, Clone, Copy)]
pub struct ChildSumTreeLstmCell {
    /// `input x 4h`, gate order i, o, u, f.
    pub w: ParamId,
    /// `h x 3h`, gate order i, o, u.
    pub u_iou: ParamId,
    pub u_f: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Hidden and cell state of one tree node.
#[derive(Debug, Clone, Copy)]
pub struct NodeState {
    pub h: Var,
    pub c: Var,
}

impl ChildSumTreeLstmCell {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.glorot(format!("{name}.w"), Shape::new(input, 4 * hidden), rng),
            u_iou: store.glorot(format!("{name}.u_iou"), Shape::new(hidden, 3 * hidden), rng),
            u_f: store.glorot(format!("{name}.u_f"), Shape::new(hidden, hidden), rng),
            b: store.zeros(format!("{name}.b"), Shape::row(4 * hidden)),
            input,
            hidden,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        children: &[NodeState],
    ) -> Result<NodeState, NnError> {
        let hs = self.hidden;
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        let xw = g.matmul(x, w)?;
        let xw = g.add_row(xw, b)?;
        let x_iou = g.slice_cols(xw, 0, 3 * hs)?;
        let (iou, stacked) = if children.is_empty() {
            (x_iou, None)
        } else {
            let hk: Vec<Var> = children.iter().map(|s| s.h).collect();
            let ck: Vec<Var> = children.iter().map(|s| s.c).collect();
            let hmat = g.stack_rows(&hk)?;
            let cmat = g.stack_rows(&ck)?;
            let h_sum = g.sum_rows(hmat)?;
            let u_iou = g.param(store, self.u_iou);
            let hu = g.matmul(h_sum, u_iou)?;
            (g.add(x_iou, hu)?, Some((hmat, cmat)))
        };
        let io = g.slice_cols(iou, 0, 2 * hs)?;
        let io = g.sigmoid(io)?;
        let i = g.slice_cols(io, 0, hs)?;
        let o = g.slice_cols(io, hs, hs)?;
        let u = g.slice_cols(iou, 2 * hs, hs)?;
        let u = g.tanh(u)?;
        let mut c = g.mul(i, u)?;
        if let Some((hmat, cmat)) = stacked {
            let u_f = g.param(store, self.u_f);
            let hf = g.matmul(hmat, u_f)?;
            let xf = g.slice_cols(xw, 3 * hs, hs)?;
            let f = g.add_row(hf, xf)?;
            let f = g.sigmoid(f)?;
            let fc = g.mul(f, cmat)?;
            let carried = g.sum_rows(fc)?;
            c = g.add(c, carried)?;
        }
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(NodeState { h, c })
    }
}

/// Global dot-product attention: `α = softmax(q Kᵀ)`, `context = α K`.
///
/// Returns `(context, weights)`; `keys` is `n x h`, `query` is `1 x h`.
pub fn dot_attention<T: Scalar>(
    g: &mut Graph<T>,
    query: Var,
    keys: Var,
) -> Result<(Var, Var), NnError> {
    let kt = g.transpose(keys)?;
    let scores = g.matmul(query, kt)?;
    let weights = g.softmax_rows(scores)?;
    let context = g.matmul(weights, keys)?;
    Ok((context, weights))
}

/// Uniform average of the rows of `keys`, the attention-free fallback.
pub fn mean_context<T: Scalar>(g: &mut Graph<T>, keys: Var) -> Result<Var, NnError> {
    let n = g.shape(keys).rows;
    let total = g.sum_rows(keys)?;
    g.scale(total, T::lit(1.0 / n as f64))
}
