use std::collections::HashMap;

use ndarray::{concatenate, s, Axis};

use super::params::{Grads, Mat, ParamId, ParamStore};

/// Node handle on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    GatherParam(ParamId, Vec<usize>),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Abs(Var),
    Huber(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        inv_std: Vec<f64>,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    RepeatRows(Var),
    MeanRows(Var),
    Pick(Var, Vec<usize>),
    MeanAll(Var),
    SumAll(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Reverse-mode automatic differentiation over small dense `f64` matrices.
///
/// A tape borrows the parameter store immutably; [`Tape::backward`]
/// returns gradients aligned with that store.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_cache: HashMap<ParamId, Var>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
const L2_EPS: f64 = 1e-12;

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
            param_cache: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_cache.get(&id) {
            return *v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.param_cache.insert(id, v);
        v
    }

    /// Rows of a parameter matrix (embedding lookup) without copying the table.
    pub fn gather(&mut self, id: ParamId, rows: &[usize]) -> Var {
        let table = self.store.get(id);
        let cols = table.ncols();
        let mut out = Mat::zeros((rows.len(), cols));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&table.row(r));
        }
        self.push(out, Op::GatherParam(id, rows.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// `a` (n×m) plus the row vector `b` (1×m) on every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a` (n×m) times the row vector `b` (1×m), elementwise per row.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MulRow(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.push(v, Op::Abs(a))
    }

    /// Elementwise Huber function with knee `delta`; the knee itself takes
    /// the quadratic branch.
    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        let v = self.value(a).mapv(|x| huber_value(x, delta));
        self.push(v, Op::Huber(a, delta))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Per-row standardisation (zero mean, unit variance), no affine part.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / m;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNormRows { x: a, inv_std })
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(out.nrows());
        for mut row in out.rows_mut() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(L2_EPS);
            row.mapv_inplace(|x| x / n);
            norms.push(n);
        }
        self.push(out, Op::L2NormalizeRows { x: a, norms })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start, len))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, len))
    }

    /// Tiles a single-row matrix `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let row = self.value(a);
        assert_eq!(row.nrows(), 1, "repeat_rows expects a row vector");
        let mut v = Mat::zeros((n, row.ncols()));
        for mut r in v.rows_mut() {
            r.assign(&row.row(0));
        }
        self.push(v, Op::RepeatRows(a))
    }

    /// Mean over rows: n×m → 1×m.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.mean_axis(Axis(0)).expect("mean of empty matrix").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Selects column `cols[i]` from row `i`: n×m → n×1.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), cols.len());
        let v = Mat::from_shape_fn((cols.len(), 1), |(i, _)| x[[i, cols[i]]]);
        self.push(v, Op::Pick(a, cols.to_vec()))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(v, Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Mat::ones((1, 1)));
        let mut grads = Grads::zeros_like(self.store);

        fn acc(adj: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut adj[v.0] {
                Some(a) => *a += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(dy) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.accumulate(*id, dy),
                Op::GatherParam(id, rows) => {
                    let table = self.store.get(*id);
                    let mut g = Mat::zeros(table.raw_dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = g.row_mut(r);
                        dst += &dy.row(i);
                    }
                    grads.accumulate(*id, g);
                }
                Op::MatMul(a, b) => {
                    let ga = dy.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&dy);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ ⇒ da = dy b, db = dyᵀ a
                    let ga = dy.dot(self.value(*b));
                    let gb = dy.t().dot(self.value(*a));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, dy.clone());
                    acc(&mut adj, *b, dy);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, dy.clone());
                    acc(&mut adj, *b, -dy);
                }
                Op::AddRow(a, b) => {
                    let gb = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *a, dy);
                    acc(&mut adj, *b, gb);
                }
                Op::Mul(a, b) => {
                    let ga = &dy * self.value(*b);
                    let gb = &dy * self.value(*a);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MulRow(a, b) => {
                    let ga = &dy * self.value(*b);
                    let gb = (&dy * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut adj, *a, dy * *k),
                Op::Relu(a) => {
                    let mut g = dy;
                    g.zip_mut_with(self.value(*a), |g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                    acc(&mut adj, *a, g);
                }
                Op::Exp(a) => acc(&mut adj, *a, dy * &node.value),
                Op::Abs(a) => {
                    let mut g = dy;
                    g.zip_mut_with(self.value(*a), |g, &x| *g *= sign(x));
                    acc(&mut adj, *a, g);
                }
                Op::Huber(a, delta) => {
                    let mut g = dy;
                    g.zip_mut_with(self.value(*a), |g, &x| {
                        *g *= if x.abs() <= *delta { x } else { *delta * sign(x) }
                    });
                    acc(&mut adj, *a, g);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut g = Mat::zeros(y.raw_dim());
                    for ((mut gr, yr), dyr) in g.rows_mut().into_iter().zip(y.rows()).zip(dy.rows()) {
                        let dot: f64 = yr.iter().zip(dyr.iter()).map(|(a, b)| a * b).sum();
                        for ((gv, &yv), &dv) in gr.iter_mut().zip(yr.iter()).zip(dyr.iter()) {
                            *gv = yv * (dv - dot);
                        }
                    }
                    acc(&mut adj, *a, g);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut g = Mat::zeros(y.raw_dim());
                    for ((mut gr, yr), dyr) in g.rows_mut().into_iter().zip(y.rows()).zip(dy.rows()) {
                        let total: f64 = dyr.sum();
                        for ((gv, &yv), &dv) in gr.iter_mut().zip(yr.iter()).zip(dyr.iter()) {
                            *gv = dv - yv.exp() * total;
                        }
                    }
                    acc(&mut adj, *a, g);
                }
                Op::LayerNormRows { x, inv_std } => {
                    let xhat = &node.value;
                    let m = xhat.ncols() as f64;
                    let mut g = Mat::zeros(xhat.raw_dim());
                    for (i, ((mut gr, xr), dyr)) in g.rows_mut().into_iter().zip(xhat.rows()).zip(dy.rows()).enumerate()
                    {
                        let sum_dy = dyr.sum();
                        let sum_dy_x: f64 = dyr.iter().zip(xr.iter()).map(|(a, b)| a * b).sum();
                        let inv = inv_std[i];
                        for ((gv, &xv), &dv) in gr.iter_mut().zip(xr.iter()).zip(dyr.iter()) {
                            *gv = inv / m * (m * dv - sum_dy - xv * sum_dy_x);
                        }
                    }
                    acc(&mut adj, *x, g);
                }
                Op::L2NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let mut g = Mat::zeros(y.raw_dim());
                    for (i, ((mut gr, yr), dyr)) in g.rows_mut().into_iter().zip(y.rows()).zip(dy.rows()).enumerate() {
                        let dot: f64 = yr.iter().zip(dyr.iter()).map(|(a, b)| a * b).sum();
                        for ((gv, &yv), &dv) in gr.iter_mut().zip(yr.iter()).zip(dyr.iter()) {
                            *gv = (dv - yv * dot) / norms[i];
                        }
                    }
                    acc(&mut adj, *x, g);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut adj, p, dy.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut adj, p, dy.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let mut g = Mat::zeros(self.value(*a).raw_dim());
                    g.slice_mut(s![.., *start..*start + *len]).assign(&dy);
                    acc(&mut adj, *a, g);
                }
                Op::SliceRows(a, start, len) => {
                    let mut g = Mat::zeros(self.value(*a).raw_dim());
                    g.slice_mut(s![*start..*start + *len, ..]).assign(&dy);
                    acc(&mut adj, *a, g);
                }
                Op::RepeatRows(a) => {
                    acc(&mut adj, *a, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).nrows();
                    let row = &dy / n as f64;
                    let mut g = Mat::zeros((n, row.ncols()));
                    for mut r in g.rows_mut() {
                        r.assign(&row.row(0));
                    }
                    acc(&mut adj, *a, g);
                }
                Op::Pick(a, cols) => {
                    let mut g = Mat::zeros(self.value(*a).raw_dim());
                    for (i, &c) in cols.iter().enumerate() {
                        g[[i, c]] = dy[[i, 0]];
                    }
                    acc(&mut adj, *a, g);
                }
                Op::MeanAll(a) => {
                    let shape = self.value(*a).raw_dim();
                    let n = self.value(*a).len() as f64;
                    acc(&mut adj, *a, Mat::from_elem(shape, dy[[0, 0]] / n));
                }
                Op::SumAll(a) => {
                    let shape = self.value(*a).raw_dim();
                    acc(&mut adj, *a, Mat::from_elem(shape, dy[[0, 0]]));
                }
            }
        }
        grads
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn huber_value(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        0.5 * x * x
    } else {
        delta * (x.abs() - 0.5 * delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(array![[1.0, 2.0, 3.0], [-5.0, 0.0, 700.0]]);
        let y = tape.softmax_rows(x);
        for row in tape.value(y).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardises() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(array![[1.0, 2.0, 3.0, 10.0], [0.5, -0.5, 2.0, 4.0]]);
        let y = tape.layer_norm_rows(x);
        for row in tape.value(y).rows() {
            let mean = row.sum() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn gather_backward_scatters_into_rows() {
        let mut store = ParamStore::new();
        let id = store.add("emb", array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let mut tape = Tape::new(&store);
        let g = tape.gather(id, &[2, 0, 2]);
        let s = tape.sum_all(g);
        let grads = tape.backward(s);
        assert_eq!(grads.get(id).unwrap(), &array![[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]]);
    }

    #[test]
    fn param_node_is_shared() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[2.0]]);
        let mut tape = Tape::new(&store);
        let a = tape.param(id);
        let b = tape.param(id);
        assert_eq!(a, b);
        let p = tape.mul(a, b);
        let s = tape.sum_all(p);
        let grads = tape.backward(s);
        assert_eq!(grads.get(id).unwrap()[[0, 0]], 4.0);
    }

    #[test]
    fn huber_knee_is_continuous() {
        let d = 1.5;
        assert_eq!(huber_value(d, d), 0.5 * d * d);
        assert!((d * (d - 0.5 * d) - 0.5 * d * d).abs() < 1e-15);
        assert_eq!(huber_value(3.0, 1.0), 2.5);
        assert_eq!(huber_value(0.0, 1.0), 0.0);
    }
}
