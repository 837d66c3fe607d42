use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::{Mat, ParamId, ParamStore, Tape, Var};

/// Affine map `x·W + b` on row vectors.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        std: f64,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add_normal(format!("{name}/w"), d_in, d_out, std, rng);
        let b = bias.then(|| store.add_zeros(format!("{name}/b"), 1, d_out));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Row-wise layer normalisation followed by a learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gamma: store.add_ones(format!("{name}/gamma"), 1, d),
            beta: store.add_zeros(format!("{name}/beta"), 1, d),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let n = tape.layer_norm_rows(x);
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        let y = tape.mul_row(n, g);
        tape.add_row(y, b)
    }
}

/// Multi-head self-attention, residual + norm, ReLU feed-forward, residual
/// + norm.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub heads: usize,
    pub ff: Linear,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
}

/// Intermediate values of one attention pass.
pub struct Attention {
    pub z: Var,
    /// One n×n score matrix per head.
    pub scores: Vec<Var>,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{name}: width {d} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            wq: store.add_normal(format!("{name}/wq"), d, d, std, rng),
            wk: store.add_normal(format!("{name}/wk"), d, d, std, rng),
            wv: store.add_normal(format!("{name}/wv"), d, d, std, rng),
            heads,
            ff: Linear::new(store, &format!("{name}/ff"), d, d, std, true, rng),
            ln1: LayerNorm::new(store, &format!("{name}/ln1"), d),
            ln2: LayerNorm::new(store, &format!("{name}/ln2"), d),
        })
    }

    pub fn attention(&self, tape: &mut Tape<'_>, h: Var) -> Attention {
        let wq = tape.param(self.wq);
        let wk = tape.param(self.wk);
        let wv = tape.param(self.wv);
        let q = tape.matmul(h, wq);
        let k = tape.matmul(h, wk);
        let v = tape.matmul(h, wv);
        let d = tape.value(q).ncols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut scores = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, head * dh, dh),
                    tape.slice_cols(k, head * dh, dh),
                    tape.slice_cols(v, head * dh, dh),
                )
            };
            let logits = tape.matmul_t(qh, kh);
            let logits = tape.scale(logits, scale);
            let s = tape.softmax_rows(logits);
            outs.push(tape.matmul(s, vh));
            scores.push(s);
        }
        let z = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        Attention { z, scores }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, h: Var) -> Var {
        let att = self.attention(tape, h);
        let res = tape.add(h, att.z);
        let hn = self.ln1.forward(tape, res);
        let zf = self.ff.forward(tape, hn);
        let zf = tape.relu(zf);
        let res = tape.add(hn, zf);
        self.ln2.forward(tape, res)
    }
}

pub fn encode(blocks: &[EncoderBlock], tape: &mut Tape<'_>, mut h: Var) -> Var {
    for b in blocks {
        h = b.forward(tape, h);
    }
    h
}

/// Online-offline attention: `softmax(Q Kᵀ / √d) K` with the online rows as
/// queries and the offline rows as keys and values.
pub fn fuse(tape: &mut Tape<'_>, online: Var, offline: Var) -> (Var, Var) {
    let d = tape.value(offline).ncols() as f64;
    let logits = tape.matmul_t(online, offline);
    let logits = tape.scale(logits, 1.0 / d.sqrt());
    let scores = tape.softmax_rows(logits);
    (tape.matmul(scores, offline), scores)
}

/// InfoNCE over a batch of paired rows: row `i` of `online` and row `i` of
/// `offline` form the positive pair.
pub fn info_nce(tape: &mut Tape<'_>, online: Var, offline: Var, temperature: f64) -> Var {
    let n = tape.value(online).nrows();
    let s = tape.matmul_t(online, offline);
    let s = tape.scale(s, 1.0 / temperature);
    let log_p = tape.log_softmax_rows(s);
    let diag: Vec<usize> = (0..n).collect();
    let pos = tape.pick(log_p, &diag);
    let mean = tape.mean_all(pos);
    tape.scale(mean, -1.0)
}

/// InfoNCE of a precomputed similarity matrix.
pub fn info_nce_from_similarity(s: &Mat, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::Config("model.temperature: must be > 0".into()));
    }
    let n = s.nrows();
    if n == 0 || s.ncols() != n {
        return Err(Error::Domain("similarity matrix must be square and non-empty".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let row = s.row(i).mapv(|x| x / temperature);
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[i];
    }
    Ok(total / n as f64)
}
