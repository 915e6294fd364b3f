//! The autodiff tape.
//!
//! Ops only reference earlier node ids, so creation order is a topological
//! order and the backward pass is a single reverse sweep. Parameter leaves
//! remember their store name; `backward` returns gradients keyed by name.

use crate::mat::Mat;
use crate::neural::params::ParamStore;
use std::collections::{BTreeMap, HashMap};

pub const GN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Id(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(String),
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    /// Broadcast a 1 x n row over every row of a.
    AddRow(Id, Id),
    Scale(Id, f64),
    /// (m x k) times (n x k) transposed -> m x n. Weights live as (out x in).
    MatMulNT(Id, Id),
    Sigmoid(Id),
    Tanh(Id),
    Relu(Id),
    Abs(Id),
    /// T x C -> T x (k*C): tap j of row t reads input row t + j - k/2,
    /// zero outside the signal.
    Unfold { x: Id, k: usize },
    /// Per-group standardization over all rows, then per-channel affine.
    GroupNorm { x: Id, gamma: Id, beta: Id, groups: usize },
    RowRange { x: Id, start: usize },
    ConcatCols(Vec<Id>),
    ConcatRows(Vec<Id>),
    ReverseRows(Id),
    GatherRows { x: Id, idx: Vec<usize> },
    /// Endpoint-aligned two-tap linear resampling of the row axis.
    LinResampleRows { x: Id, taps: Vec<(usize, usize, f64)> },
    MeanAll(Id),
    MeanRows(Id),
    /// c_t from gate preactivations s (1 x 4H: i, f, g, o) and c_{t-1}.
    LstmCell { s: Id, c_prev: Id },
    /// h_t = sigmoid(s_o) * tanh(c_t).
    LstmHidden { s: Id, c: Id },
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<String, Id>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
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

    pub fn rows(&self, id: Id) -> usize {
        self.nodes[id.0].rows
    }

    pub fn cols(&self, id: Id) -> usize {
        self.nodes[id.0].cols
    }

    pub fn value(&self, id: Id) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn value_mat(&self, id: Id) -> Mat {
        let n = &self.nodes[id.0];
        Mat { rows: n.rows, cols: n.cols, data: n.value.clone() }
    }

    pub fn scalar(&self, id: Id) -> f64 {
        let n = &self.nodes[id.0];
        assert!(n.rows == 1 && n.cols == 1, "scalar() on {}x{} node", n.rows, n.cols);
        n.value[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Id {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, op });
        Id(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: &Mat) -> Id {
        self.push(m.rows, m.cols, m.data.clone(), Op::Input)
    }

    pub fn input_zeros(&mut self, rows: usize, cols: usize) -> Id {
        self.push(rows, cols, vec![0.0; rows * cols], Op::Input)
    }

    /// Bind a named parameter, at most once per tape. Reusing the name
    /// returns the same node, which is how layers share weights.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Id {
        if let Some(id) = self.bound.get(name) {
            return *id;
        }
        let t = store.get(name);
        let id = self.push(t.rows, t.cols, t.data.clone(), Op::Param(name.to_string()));
        self.bound.insert(name.to_string(), id);
        id
    }

    fn same_shape(&self, a: Id, b: Id, what: &str) {
        assert!(
            self.rows(a) == self.rows(b) && self.cols(a) == self.cols(b),
            "{what}: {}x{} vs {}x{}",
            self.rows(a),
            self.cols(a),
            self.rows(b),
            self.cols(b)
        );
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        self.same_shape(a, b, "add");
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(self.rows(a), self.cols(a), v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Id, b: Id) -> Id {
        self.same_shape(a, b, "sub");
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        self.push(self.rows(a), self.cols(a), v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Id, b: Id) -> Id {
        self.same_shape(a, b, "mul");
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(self.rows(a), self.cols(a), v, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Id, row: Id) -> Id {
        assert_eq!(self.rows(row), 1, "add_row: row operand must be 1 x n");
        assert_eq!(self.cols(a), self.cols(row), "add_row: width mismatch");
        let (rows, cols) = (self.rows(a), self.cols(a));
        let mut v = self.nodes[a.0].value.clone();
        for r in 0..rows {
            for c in 0..cols {
                v[r * cols + c] += self.nodes[row.0].value[c];
            }
        }
        self.push(rows, cols, v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Id, k: f64) -> Id {
        let v = self.nodes[a.0].value.iter().map(|x| x * k).collect();
        self.push(self.rows(a), self.cols(a), v, Op::Scale(a, k))
    }

    pub fn matmul_nt(&mut self, a: Id, b: Id) -> Id {
        let (m, ka) = (self.rows(a), self.cols(a));
        let (n, kb) = (self.rows(b), self.cols(b));
        assert_eq!(ka, kb, "matmul_nt: inner dims {ka} vs {kb}");
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut v = vec![0.0; m * n];
        for i in 0..m {
            let ra = &va[i * ka..(i + 1) * ka];
            for j in 0..n {
                let rb = &vb[j * kb..(j + 1) * kb];
                let mut acc = 0.0;
                for t in 0..ka {
                    acc += ra[t] * rb[t];
                }
                v[i * n + j] = acc;
            }
        }
        self.push(m, n, v, Op::MatMulNT(a, b))
    }

    fn unary(&mut self, a: Id, f: impl Fn(f64) -> f64, op: Op) -> Id {
        let v = self.nodes[a.0].value.iter().map(|x| f(*x)).collect();
        self.push(self.rows(a), self.cols(a), v, op)
    }

    pub fn sigmoid(&mut self, a: Id) -> Id {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Id) -> Id {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Id) -> Id {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn abs(&mut self, a: Id) -> Id {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn unfold(&mut self, x: Id, k: usize) -> Id {
        assert!(k % 2 == 1, "unfold: kernel must be odd");
        let (t_len, c) = (self.rows(x), self.cols(x));
        let vx = &self.nodes[x.0].value;
        let half = (k / 2) as isize;
        let mut v = vec![0.0; t_len * k * c];
        for t in 0..t_len {
            for j in 0..k {
                let src = t as isize + j as isize - half;
                if src >= 0 && (src as usize) < t_len {
                    let src = src as usize;
                    v[t * k * c + j * c..t * k * c + (j + 1) * c]
                        .copy_from_slice(&vx[src * c..(src + 1) * c]);
                }
            }
        }
        self.push(t_len, k * c, v, Op::Unfold { x, k })
    }

    fn gn_stats(x: &[f64], rows: usize, cols: usize, groups: usize) -> (Vec<f64>, Vec<f64>) {
        let gc = cols / groups;
        let n = (rows * gc) as f64;
        let mut mean = vec![0.0; groups];
        let mut var = vec![0.0; groups];
        for g in 0..groups {
            let mut s = 0.0;
            for r in 0..rows {
                for c in g * gc..(g + 1) * gc {
                    s += x[r * cols + c];
                }
            }
            mean[g] = s / n;
            let mut sq = 0.0;
            for r in 0..rows {
                for c in g * gc..(g + 1) * gc {
                    sq += (x[r * cols + c] - mean[g]).powi(2);
                }
            }
            var[g] = sq / n;
        }
        (mean, var)
    }

    pub fn group_norm(&mut self, x: Id, gamma: Id, beta: Id, groups: usize) -> Id {
        let (rows, cols) = (self.rows(x), self.cols(x));
        assert!(groups >= 1 && cols % groups == 0, "group_norm: {groups} groups over {cols} channels");
        assert!(self.rows(gamma) == 1 && self.cols(gamma) == cols, "group_norm: gamma shape");
        assert!(self.rows(beta) == 1 && self.cols(beta) == cols, "group_norm: beta shape");
        let gc = cols / groups;
        let vx = &self.nodes[x.0].value;
        let (mean, var) = Self::gn_stats(vx, rows, cols, groups);
        let vg = &self.nodes[gamma.0].value;
        let vb = &self.nodes[beta.0].value;
        let mut v = vec![0.0; rows * cols];
        for g in 0..groups {
            let inv = 1.0 / (var[g] + GN_EPS).sqrt();
            for r in 0..rows {
                for c in g * gc..(g + 1) * gc {
                    let xhat = (vx[r * cols + c] - mean[g]) * inv;
                    v[r * cols + c] = vg[c] * xhat + vb[c];
                }
            }
        }
        self.push(rows, cols, v, Op::GroupNorm { x, gamma, beta, groups })
    }

    pub fn row_range(&mut self, x: Id, start: usize, len: usize) -> Id {
        let (rows, cols) = (self.rows(x), self.cols(x));
        assert!(start + len <= rows, "row_range: {start}+{len} > {rows}");
        let v = self.nodes[x.0].value[start * cols..(start + len) * cols].to_vec();
        self.push(len, cols, v, Op::RowRange { x, start })
    }

    pub fn concat_cols(&mut self, ids: &[Id]) -> Id {
        assert!(!ids.is_empty());
        let rows = self.rows(ids[0]);
        let total: usize = ids.iter().map(|i| self.cols(*i)).sum();
        let mut v = vec![0.0; rows * total];
        let mut at = 0;
        for id in ids {
            assert_eq!(self.rows(*id), rows, "concat_cols: row mismatch");
            let w = self.cols(*id);
            let src = &self.nodes[id.0].value;
            for r in 0..rows {
                v[r * total + at..r * total + at + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            at += w;
        }
        self.push(rows, total, v, Op::ConcatCols(ids.to_vec()))
    }

    pub fn concat_rows(&mut self, ids: &[Id]) -> Id {
        assert!(!ids.is_empty());
        let cols = self.cols(ids[0]);
        let total: usize = ids.iter().map(|i| self.rows(*i)).sum();
        let mut v = Vec::with_capacity(total * cols);
        for id in ids {
            assert_eq!(self.cols(*id), cols, "concat_rows: col mismatch");
            v.extend_from_slice(&self.nodes[id.0].value);
        }
        self.push(total, cols, v, Op::ConcatRows(ids.to_vec()))
    }

    pub fn reverse_rows(&mut self, x: Id) -> Id {
        let (rows, cols) = (self.rows(x), self.cols(x));
        let vx = &self.nodes[x.0].value;
        let mut v = vec![0.0; rows * cols];
        for r in 0..rows {
            v[r * cols..(r + 1) * cols].copy_from_slice(&vx[(rows - 1 - r) * cols..(rows - r) * cols]);
        }
        self.push(rows, cols, v, Op::ReverseRows(x))
    }

    pub fn gather_rows(&mut self, x: Id, idx: Vec<usize>) -> Id {
        let (rows, cols) = (self.rows(x), self.cols(x));
        assert!(!idx.is_empty() && idx.iter().all(|i| *i < rows), "gather_rows: index out of range");
        let vx = &self.nodes[x.0].value;
        let mut v = Vec::with_capacity(idx.len() * cols);
        for i in &idx {
            v.extend_from_slice(&vx[i * cols..(i + 1) * cols]);
        }
        self.push(idx.len(), cols, v, Op::GatherRows { x, idx })
    }

    pub fn lin_resample_rows(&mut self, x: Id, dst_len: usize) -> Id {
        let (rows, cols) = (self.rows(x), self.cols(x));
        assert!(rows >= 1 && dst_len >= 1);
        let taps = crate::resample::linear_weights(rows, dst_len);
        let vx = &self.nodes[x.0].value;
        let mut v = vec![0.0; dst_len * cols];
        for (j, (i0, i1, frac)) in taps.iter().enumerate() {
            for c in 0..cols {
                v[j * cols + c] = vx[i0 * cols + c] * (1.0 - frac) + vx[i1 * cols + c] * frac;
            }
        }
        self.push(dst_len, cols, v, Op::LinResampleRows { x, taps })
    }

    pub fn mean_all(&mut self, x: Id) -> Id {
        let n = (self.rows(x) * self.cols(x)) as f64;
        let v = self.nodes[x.0].value.iter().sum::<f64>() / n;
        self.push(1, 1, vec![v], Op::MeanAll(x))
    }

    pub fn mean_rows(&mut self, x: Id) -> Id {
        let (rows, cols) = (self.rows(x), self.cols(x));
        let vx = &self.nodes[x.0].value;
        let mut v = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                v[c] += vx[r * cols + c];
            }
        }
        for c in v.iter_mut() {
            *c /= rows as f64;
        }
        self.push(1, cols, v, Op::MeanRows(x))
    }

    pub fn lstm_cell(&mut self, s: Id, c_prev: Id) -> Id {
        let h = self.cols(c_prev);
        assert!(self.rows(s) == 1 && self.rows(c_prev) == 1 && self.cols(s) == 4 * h, "lstm_cell shapes");
        let vs = &self.nodes[s.0].value;
        let vc = &self.nodes[c_prev.0].value;
        let v = (0..h)
            .map(|j| {
                let i = sigmoid(vs[j]);
                let f = sigmoid(vs[h + j]);
                let g = vs[2 * h + j].tanh();
                f * vc[j] + i * g
            })
            .collect();
        self.push(1, h, v, Op::LstmCell { s, c_prev })
    }

    pub fn lstm_hidden(&mut self, s: Id, c: Id) -> Id {
        let h = self.cols(c);
        assert!(self.rows(s) == 1 && self.rows(c) == 1 && self.cols(s) == 4 * h, "lstm_hidden shapes");
        let vs = &self.nodes[s.0].value;
        let vc = &self.nodes[c.0].value;
        let v = (0..h).map(|j| sigmoid(vs[3 * h + j]) * vc[j].tanh()).collect();
        self.push(1, h, v, Op::LstmHidden { s, c })
    }

    /// Reverse sweep from a scalar node. Returns parameter gradients keyed
    /// by store name.
    pub fn backward(&self, root: Id) -> BTreeMap<String, Vec<f64>> {
        assert!(self.rows(root) == 1 && self.cols(root) == 1, "backward: root must be scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[i];
            let acc = |grads: &mut Vec<Option<Vec<f64>>>, id: Id, add: &dyn Fn(&mut [f64])| {
                let slot = grads[id.0].get_or_insert_with(|| {
                    vec![0.0; self.nodes[id.0].rows * self.nodes[id.0].cols]
                });
                add(slot);
            };
            match &node.op {
                Op::Input => {}
                Op::Param(name) => {
                    let slot = out.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    for (s, gv) in slot.iter_mut().zip(&g) {
                        *s += gv;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &|s| {
                        for (x, gv) in s.iter_mut().zip(&g) {
                            *x += gv;
                        }
                    });
                    acc(&mut grads, *b, &|s| {
                        for (x, gv) in s.iter_mut().zip(&g) {
                            *x += gv;
                        }
                    });
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &|s| {
                        for (x, gv) in s.iter_mut().zip(&g) {
                            *x += gv;
                        }
                    });
                    acc(&mut grads, *b, &|s| {
                        for (x, gv) in s.iter_mut().zip(&g) {
                            *x -= gv;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(&mut grads, *a, &|s| {
                        for ((x, gv), bv) in s.iter_mut().zip(&g).zip(vb) {
                            *x += gv * bv;
                        }
                    });
                    acc(&mut grads, *b, &|s| {
                        for ((x, gv), av) in s.iter_mut().zip(&g).zip(va) {
                            *x += gv * av;
                        }
                    });
                }
                Op::AddRow(a, row) => {
                    let cols = node.cols;
                    acc(&mut grads, *a, &|s| {
                        for (x, gv) in s.iter_mut().zip(&g) {
                            *x += gv;
                        }
                    });
                    acc(&mut grads, *row, &|s| {
                        for (j, gv) in g.iter().enumerate() {
                            s[j % cols] += gv;
                        }
                    });
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(&mut grads, *a, &|s| {
                        for (x, gv) in s.iter_mut().zip(&g) {
                            *x += gv * k;
                        }
                    });
                }
                Op::MatMulNT(a, b) => {
                    let (m, n) = (node.rows, node.cols);
                    let k = self.nodes[a.0].cols;
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(&mut grads, *a, &|s| {
                        // da[i] += sum_j g[i][j] * b[j]
                        for i in 0..m {
                            for j in 0..n {
                                let gv = g[i * n + j];
                                if gv != 0.0 {
                                    let rb = &vb[j * k..(j + 1) * k];
                                    let si = &mut s[i * k..(i + 1) * k];
                                    for t in 0..k {
                                        si[t] += gv * rb[t];
                                    }
                                }
                            }
                        }
                    });
                    acc(&mut grads, *b, &|s| {
                        // db[j] += sum_i g[i][j] * a[i]
                        for i in 0..m {
                            let ra = &va[i * k..(i + 1) * k];
                            for j in 0..n {
                                let gv = g[i * n + j];
                                if gv != 0.0 {
                                    let sj = &mut s[j * k..(j + 1) * k];
                                    for t in 0..k {
                                        sj[t] += gv * ra[t];
                                    }
                                }
                            }
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, &|s| {
                        for ((x, gv), yv) in s.iter_mut().zip(&g).zip(y) {
                            *x += gv * yv * (1.0 - yv);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, &|s| {
                        for ((x, gv), yv) in s.iter_mut().zip(&g).zip(y) {
                            *x += gv * (1.0 - yv * yv);
                        }
                    });
                }
                Op::Relu(a) => {
                    let vx = &self.nodes[a.0].value;
                    acc(&mut grads, *a, &|s| {
                        for ((x, gv), xv) in s.iter_mut().zip(&g).zip(vx) {
                            if *xv > 0.0 {
                                *x += gv;
                            }
                        }
                    });
                }
                Op::Abs(a) => {
                    let vx = &self.nodes[a.0].value;
                    acc(&mut grads, *a, &|s| {
                        for ((x, gv), xv) in s.iter_mut().zip(&g).zip(vx) {
                            *x += gv * if *xv >= 0.0 { 1.0 } else { -1.0 };
                        }
                    });
                }
                Op::Unfold { x, k } => {
                    let t_len = node.rows;
                    let c = self.nodes[x.0].cols;
                    let k = *k;
                    let half = (k / 2) as isize;
                    acc(&mut grads, *x, &|s| {
                        for t in 0..t_len {
                            for j in 0..k {
                                let src = t as isize + j as isize - half;
                                if src >= 0 && (src as usize) < t_len {
                                    let src = src as usize;
                                    let gs = &g[t * k * c + j * c..t * k * c + (j + 1) * c];
                                    let ss = &mut s[src * c..(src + 1) * c];
                                    for (sv, gv) in ss.iter_mut().zip(gs) {
                                        *sv += gv;
                                    }
                                }
                            }
                        }
                    });
                }
                Op::GroupNorm { x, gamma, beta, groups } => {
                    let (rows, cols) = (node.rows, node.cols);
                    let gc = cols / groups;
                    let n = (rows * gc) as f64;
                    let vx = &self.nodes[x.0].value;
                    let vg = &self.nodes[gamma.0].value;
                    let (mean, var) = Self::gn_stats(vx, rows, cols, *groups);
                    // per-group sums of g*gamma and g*gamma*xhat
                    let mut sum_gg = vec![0.0; *groups];
                    let mut sum_ggx = vec![0.0; *groups];
                    let mut xhat = vec![0.0; rows * cols];
                    for grp in 0..*groups {
                        let inv = 1.0 / (var[grp] + GN_EPS).sqrt();
                        for r in 0..rows {
                            for c in grp * gc..(grp + 1) * gc {
                                let at = r * cols + c;
                                xhat[at] = (vx[at] - mean[grp]) * inv;
                                let gg = g[at] * vg[c];
                                sum_gg[grp] += gg;
                                sum_ggx[grp] += gg * xhat[at];
                            }
                        }
                    }
                    acc(&mut grads, *x, &|s| {
                        for grp in 0..*groups {
                            let inv = 1.0 / (var[grp] + GN_EPS).sqrt();
                            for r in 0..rows {
                                for c in grp * gc..(grp + 1) * gc {
                                    let at = r * cols + c;
                                    let gg = g[at] * vg[c];
                                    s[at] += inv * (gg - sum_gg[grp] / n - xhat[at] * sum_ggx[grp] / n);
                                }
                            }
                        }
                    });
                    acc(&mut grads, *gamma, &|s| {
                        for r in 0..rows {
                            for c in 0..cols {
                                s[c] += g[r * cols + c] * xhat[r * cols + c];
                            }
                        }
                    });
                    acc(&mut grads, *beta, &|s| {
                        for r in 0..rows {
                            for c in 0..cols {
                                s[c] += g[r * cols + c];
                            }
                        }
                    });
                }
                Op::RowRange { x, start } => {
                    let cols = node.cols;
                    let start = *start;
                    acc(&mut grads, *x, &|s| {
                        for (j, gv) in g.iter().enumerate() {
                            s[start * cols + j] += gv;
                        }
                    });
                }
                Op::ConcatCols(ids) => {
                    let rows = node.rows;
                    let total = node.cols;
                    let mut at = 0;
                    for id in ids {
                        let w = self.nodes[id.0].cols;
                        let off = at;
                        acc(&mut grads, *id, &|s| {
                            for r in 0..rows {
                                for c in 0..w {
                                    s[r * w + c] += g[r * total + off + c];
                                }
                            }
                        });
                        at += w;
                    }
                }
                Op::ConcatRows(ids) => {
                    let cols = node.cols;
                    let mut at = 0;
                    for id in ids {
                        let r = self.nodes[id.0].rows;
                        let off = at;
                        acc(&mut grads, *id, &|s| {
                            for (sv, gv) in s.iter_mut().zip(&g[off * cols..(off + r) * cols]) {
                                *sv += gv;
                            }
                        });
                        at += r;
                    }
                }
                Op::ReverseRows(x) => {
                    let (rows, cols) = (node.rows, node.cols);
                    acc(&mut grads, *x, &|s| {
                        for r in 0..rows {
                            let src = &g[(rows - 1 - r) * cols..(rows - r) * cols];
                            let dst = &mut s[r * cols..(r + 1) * cols];
                            for (d, gv) in dst.iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    });
                }
                Op::GatherRows { x, idx } => {
                    let cols = node.cols;
                    acc(&mut grads, *x, &|s| {
                        for (j, i) in idx.iter().enumerate() {
                            let src = &g[j * cols..(j + 1) * cols];
                            let dst = &mut s[i * cols..(i + 1) * cols];
                            for (d, gv) in dst.iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    });
                }
                Op::LinResampleRows { x, taps } => {
                    let cols = node.cols;
                    acc(&mut grads, *x, &|s| {
                        for (j, (i0, i1, frac)) in taps.iter().enumerate() {
                            for c in 0..cols {
                                let gv = g[j * cols + c];
                                s[i0 * cols + c] += gv * (1.0 - frac);
                                s[i1 * cols + c] += gv * frac;
                            }
                        }
                    });
                }
                Op::MeanAll(x) => {
                    let n = (self.nodes[x.0].rows * self.nodes[x.0].cols) as f64;
                    let gv = g[0] / n;
                    acc(&mut grads, *x, &|s| {
                        for sv in s.iter_mut() {
                            *sv += gv;
                        }
                    });
                }
                Op::MeanRows(x) => {
                    let rows = self.nodes[x.0].rows;
                    let cols = node.cols;
                    acc(&mut grads, *x, &|s| {
                        for r in 0..rows {
                            for c in 0..cols {
                                s[r * cols + c] += g[c] / rows as f64;
                            }
                        }
                    });
                }
                Op::LstmCell { s, c_prev } => {
                    let h = node.cols;
                    let vs = &self.nodes[s.0].value;
                    let vc = &self.nodes[c_prev.0].value;
                    acc(&mut grads, *s, &|sl| {
                        for j in 0..h {
                            let i = sigmoid(vs[j]);
                            let f = sigmoid(vs[h + j]);
                            let gt = vs[2 * h + j].tanh();
                            let dc = g[j];
                            sl[j] += dc * gt * i * (1.0 - i);
                            sl[h + j] += dc * vc[j] * f * (1.0 - f);
                            sl[2 * h + j] += dc * i * (1.0 - gt * gt);
                        }
                    });
                    acc(&mut grads, *c_prev, &|sl| {
                        for j in 0..h {
                            let f = sigmoid(vs[h + j]);
                            sl[j] += g[j] * f;
                        }
                    });
                }
                Op::LstmHidden { s, c } => {
                    let h = node.cols;
                    let vs = &self.nodes[s.0].value;
                    let vc = &self.nodes[c.0].value;
                    acc(&mut grads, *s, &|sl| {
                        for j in 0..h {
                            let o = sigmoid(vs[3 * h + j]);
                            sl[3 * h + j] += g[j] * vc[j].tanh() * o * (1.0 - o);
                        }
                    });
                    acc(&mut grads, *c, &|sl| {
                        for j in 0..h {
                            let o = sigmoid(vs[3 * h + j]);
                            let tc = vc[j].tanh();
                            sl[j] += g[j] * o * (1.0 - tc * tc);
                        }
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use rand::Rng;

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut r = rng(seed);
        Mat::from_fn(rows, cols, |_, _| r.random_range(-0.9..0.9))
    }

    /// Central-difference check of d(loss)/d(param) for every coordinate of
    /// every parameter the builder uses.
    fn fd_ok(params: ParamStore, build: impl Fn(&mut Tape, &ParamStore) -> Id) -> f64 {
        let mut tape = Tape::new();
        let root = build(&mut tape, &params);
        let grads = tape.backward(root);
        let mut worst: f64 = 0.0;
        let h = 1e-5;
        for (name, g) in &grads {
            for i in 0..g.len() {
                let mut plus = params.clone();
                plus.get_mut(name).data[i] += h;
                let mut minus = params.clone();
                minus.get_mut(name).data[i] -= h;
                let mut tp = Tape::new();
                let rp = build(&mut tp, &plus);
                let mut tm = Tape::new();
                let rm = build(&mut tm, &minus);
                let fd = (tp.scalar(rp) - tm.scalar(rm)) / (2.0 * h);
                let an = g[i];
                let scale = fd.abs().max(an.abs());
                if scale > 1e-10 {
                    worst = worst.max((fd - an).abs() / scale);
                }
            }
        }
        worst
    }

    #[test]
    fn elementwise_and_matmul_grads_match_fd() {
        let mut ps = ParamStore::new();
        ps.add_uniform(1, "w", 4, 6, 6);
        ps.add_uniform(1, "b", 1, 4, 4);
        let x = rand_mat(5, 6, 2);
        let worst = fd_ok(ps, move |t, p| {
            let xi = t.input(&x);
            let w = t.param(p, "w");
            let b = t.param(p, "b");
            let y = t.matmul_nt(xi, w);
            let y = t.add_row(y, b);
            let y = t.tanh(y);
            let z = t.sigmoid(y);
            let y2 = t.mul(y, z);
            let y3 = t.relu(y2);
            let d = t.abs(y3);
            let d = t.scale(d, 1.3);
            t.mean_all(d)
        });
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn structural_op_grads_match_fd() {
        let mut ps = ParamStore::new();
        ps.add_uniform(3, "w", 3, 8, 8);
        let x = rand_mat(7, 8, 4);
        let worst = fd_ok(ps, move |t, p| {
            let xi = t.input(&x);
            let w = t.param(p, "w");
            let y = t.matmul_nt(xi, w); // 7x3
            let a = t.row_range(y, 1, 4);
            let b = t.reverse_rows(a);
            let c = t.concat_rows(&[a, b]);
            let d = t.gather_rows(c, vec![0, 2, 2, 5]);
            let e = t.lin_resample_rows(d, 9);
            let f = t.concat_cols(&[e, e]);
            let m = t.mean_rows(f);
            let sq = t.mul(m, m);
            t.mean_all(sq)
        });
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn unfold_and_group_norm_grads_match_fd() {
        let mut ps = ParamStore::new();
        ps.add_uniform(5, "w", 6, 4 * 3, 12);
        ps.add_const("gamma", 1, 6, 1.0);
        ps.add_const("beta", 1, 6, 0.0);
        // nudge gamma/beta off their fixed points so their grads are generic
        ps.get_mut("gamma").data[2] = 1.3;
        ps.get_mut("beta").data[4] = -0.2;
        let x = rand_mat(5, 4, 6);
        let worst = fd_ok(ps, move |t, p| {
            let xi = t.input(&x);
            let u = t.unfold(xi, 3);
            let w = t.param(p, "w");
            let y = t.matmul_nt(u, w); // 5x6
            let gamma = t.param(p, "gamma");
            let beta = t.param(p, "beta");
            let y = t.group_norm(y, gamma, beta, 3);
            let y = t.relu(y);
            let sq = t.mul(y, y);
            t.mean_all(sq)
        });
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn lstm_ops_grads_match_fd() {
        let mut ps = ParamStore::new();
        ps.add_uniform(7, "w_ih", 12, 5, 5);
        ps.add_uniform(7, "w_hh", 12, 3, 3);
        ps.add_uniform(7, "b", 1, 12, 3);
        let x = rand_mat(4, 5, 8);
        let worst = fd_ok(ps, move |t, p| {
            let xi = t.input(&x);
            let w_ih = t.param(p, "w_ih");
            let w_hh = t.param(p, "w_hh");
            let b = t.param(p, "b");
            let z = t.matmul_nt(xi, w_ih);
            let z = t.add_row(z, b);
            let mut hprev = t.input_zeros(1, 3);
            let mut cprev = t.input_zeros(1, 3);
            let mut hs = Vec::new();
            for step in 0..4 {
                let zt = t.row_range(z, step, 1);
                let rec = t.matmul_nt(hprev, w_hh);
                let s = t.add(zt, rec);
                let c = t.lstm_cell(s, cprev);
                let hh = t.lstm_hidden(s, c);
                hs.push(hh);
                hprev = hh;
                cprev = c;
            }
            let seq = t.concat_rows(&hs);
            let sq = t.mul(seq, seq);
            t.mean_all(sq)
        });
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn lstm_cell_matches_scalar_reference() {
        let mut t = Tape::new();
        let s_vals = [0.3, -0.2, 0.7, 1.1, -0.5, 0.4, 0.9, -1.2];
        let c_vals = [0.25, -0.65];
        let s = t.input(&Mat { rows: 1, cols: 8, data: s_vals.to_vec() });
        let c_prev = t.input(&Mat { rows: 1, cols: 2, data: c_vals.to_vec() });
        let c = t.lstm_cell(s, c_prev);
        let h = t.lstm_hidden(s, c);
        for j in 0..2 {
            let i = sigmoid(s_vals[j]);
            let f = sigmoid(s_vals[2 + j]);
            let g = s_vals[4 + j].tanh();
            let o = sigmoid(s_vals[6 + j]);
            let c_ref = f * c_vals[j] + i * g;
            let h_ref = o * c_ref.tanh();
            assert!((t.value(c)[j] - c_ref).abs() < 1e-15);
            assert!((t.value(h)[j] - h_ref).abs() < 1e-15);
        }
    }

    #[test]
    fn shared_param_grads_accumulate() {
        let mut ps = ParamStore::new();
        ps.add_uniform(9, "w", 3, 3, 3);
        let x = rand_mat(4, 3, 10);
        let worst = fd_ok(ps, move |t, p| {
            let xi = t.input(&x);
            let w1 = t.param(p, "w");
            let w2 = t.param(p, "w");
            assert_eq!(w1, w2);
            let a = t.matmul_nt(xi, w1);
            let a = t.tanh(a);
            let b = t.matmul_nt(a, w2);
            let sq = t.mul(b, b);
            t.mean_all(sq)
        });
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn group_norm_standardizes_each_group() {
        let mut t = Tape::new();
        let x = rand_mat(6, 8, 11);
        let xi = t.input(&x);
        let mut ps = ParamStore::new();
        ps.add_const("gamma", 1, 8, 1.0);
        ps.add_const("beta", 1, 8, 0.0);
        let gamma = t.param(&ps, "gamma");
        let beta = t.param(&ps, "beta");
        let y = t.group_norm(xi, gamma, beta, 4);
        let v = t.value(y);
        for g in 0..4 {
            let cells: Vec<f64> = (0..6)
                .flat_map(|r| (g * 2..(g + 1) * 2).map(move |c| (r, c)))
                .map(|(r, c)| v[r * 8 + c])
                .collect();
            let mean = cells.iter().sum::<f64>() / cells.len() as f64;
            let var = cells.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cells.len() as f64;
            assert!(mean.abs() < 1e-12, "group {g} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "group {g} var {var}");
        }
    }

    #[test]
    fn unfold_zero_pads_edges() {
        let mut t = Tape::new();
        let x = Mat { rows: 3, cols: 2, data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0] };
        let xi = t.input(&x);
        let u = t.unfold(xi, 3);
        assert_eq!(t.rows(u), 3);
        assert_eq!(t.cols(u), 6);
        // row 0: [pad, x0, x1]
        assert_eq!(t.value(u)[0..6], [0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        // row 2: [x1, x2, pad]
        assert_eq!(t.value(u)[12..18], [3.0, 4.0, 5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_nt_matches_direct_product() {
        let mut t = Tape::new();
        let a = rand_mat(3, 4, 12);
        let b = rand_mat(2, 4, 13);
        let ai = t.input(&a);
        let bi = t.input(&b);
        let c = t.matmul_nt(ai, bi);
        for i in 0..3 {
            for j in 0..2 {
                let direct: f64 = (0..4).map(|k| a.get(i, k) * b.get(j, k)).sum();
                assert!((t.value(c)[i * 2 + j] - direct).abs() < 1e-14);
            }
        }
    }
}
