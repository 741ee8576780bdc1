//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records values and the operation that produced each one.
//! [`Tape::backward`] walks the record in reverse and accumulates adjoints.
//! Only the handful of operations the GCN pipeline needs are provided.

use crate::matrix::Matrix;
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + 1·row`, row broadcast over every row of `a`
    AddRow(Var, Var),
    Scale(Var, T),
    Shift(Var),
    Relu(Var),
    Sigmoid(Var),
    MeanRows(Var),
    SumAll(Var),
    /// `D^{-1/2} (W + I) D^{-1/2}` with `D` the row sums of `W + I`; the
    /// loop-free variant drops the `I` from the numerator only, which
    /// leaves the adjoint unchanged
    GcnNorm(Var),
    /// main diagonal as an `n×1` column
    Diag(Var),
    /// `[a | b]`
    HCat(Var, Var),
    LogSoftmax(Var),
    Pick(Var, usize, usize),
    /// forward value supplied externally, adjoint passed through unchanged
    StraightThrough(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
    /// cached per-row degrees for GcnNorm
    aux: Option<Vec<T>>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Grads<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    /// Adjoint of `v`, or zeros of the given shape if nothing reached it.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix<T> {
        self.grads[v.0].clone().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, aux: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[(0, 0)]
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives an adjoint.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ra, ca) = self.value(a).shape();
        assert_eq!(self.value(row).shape(), (1, ca), "add_row shape");
        let r = self.value(row).row(0).to_vec();
        let v = Matrix::from_fn(ra, ca, |i, j| self.value(a)[(i, j)] + r[j]);
        let rg = self.rg(a) || self.rg(row);
        self.push(v, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    /// `a + s` elementwise.
    pub fn shift(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(v, Op::Shift(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = T::from_usize_lossy(m.rows());
        let v = Matrix::from_fn(1, m.cols(), |_, j| (0..m.rows()).fold(T::zero(), |acc, i| acc + m[(i, j)]) / n);
        let rg = self.rg(a);
        self.push(v, Op::MeanRows(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::from_vec(1, 1, vec![self.value(a).sum()]);
        let rg = self.rg(a);
        self.push(v, Op::SumAll(a), rg)
    }

    pub fn gcn_norm(&mut self, w: Var) -> Var {
        self.degree_norm(w, true)
    }

    /// `D^{-1/2} W D^{-1/2}` with the same self-loop degrees as
    /// [`Tape::gcn_norm`]; its powers count closed walks without lingering.
    pub fn walk_norm(&mut self, w: Var) -> Var {
        self.degree_norm(w, false)
    }

    fn degree_norm(&mut self, w: Var, loops: bool) -> Var {
        let m = self.value(w);
        let n = m.rows();
        assert_eq!(n, m.cols(), "degree normalization needs a square matrix");
        let deg: Vec<T> = (0..n).map(|i| m.row(i).iter().fold(T::one(), |acc, &x| acc + x)).collect();
        let s: Vec<T> = deg.iter().map(|&d| T::one() / d.sqrt()).collect();
        let v = Matrix::from_fn(n, n, |i, j| {
            let a = m[(i, j)] + if loops && i == j { T::one() } else { T::zero() };
            a * s[i] * s[j]
        });
        let rg = self.rg(w);
        let var = self.push(v, Op::GcnNorm(w), rg);
        self.nodes[var.0].aux = Some(deg);
        var
    }

    pub fn diag(&mut self, a: Var) -> Var {
        let m = self.value(a);
        assert_eq!(m.rows(), m.cols(), "diag needs a square matrix");
        let v = Matrix::from_fn(m.rows(), 1, |i, _| m[(i, i)]);
        let rg = self.rg(a);
        self.push(v, Op::Diag(a), rg)
    }

    pub fn hcat(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.rows(), mb.rows(), "hcat row mismatch");
        let ca = ma.cols();
        let v = Matrix::from_fn(ma.rows(), ca + mb.cols(), |i, j| if j < ca { ma[(i, j)] } else { mb[(i, j - ca)] });
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::HCat(a, b), rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut v = m.clone();
        for i in 0..m.rows() {
            let row = m.row(i);
            let mx = row.iter().fold(T::neg_infinity(), |acc, &x| acc.max(x));
            let lse = mx + row.iter().fold(T::zero(), |acc, &x| acc + (x - mx).exp()).ln();
            for (o, &x) in v.row_mut(i).iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::LogSoftmax(a), rg)
    }

    pub fn pick(&mut self, a: Var, i: usize, j: usize) -> Var {
        let v = Matrix::from_vec(1, 1, vec![self.value(a)[(i, j)]]);
        let rg = self.rg(a);
        self.push(v, Op::Pick(a, i, j), rg)
    }

    /// Forward value `forward`, backward as if the output were `soft`.
    pub fn straight_through(&mut self, soft: Var, forward: Matrix<T>) -> Var {
        assert_eq!(self.value(soft).shape(), forward.shape());
        let rg = self.rg(soft);
        self.push(forward, Op::StraightThrough(soft), rg)
    }

    /// Reverse sweep from a 1×1 `root`.
    pub fn backward(&self, root: Var) -> Grads<T> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        self.backward_seeded(root, Matrix::filled(1, 1, T::one()))
    }

    pub fn backward_seeded(&self, root: Var, seed: Matrix<T>) -> Grads<T> {
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let mut acc = |v: Var, delta: Matrix<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    acc(*a, g.matmul_t(bv));
                }
                if self.rg(*b) {
                    acc(*b, av.t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    acc(*a, g.matmul(bv));
                }
                if self.rg(*b) {
                    acc(*b, g.t_matmul(av));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    acc(*a, g.zip_map(bv, |x, y| x * y));
                }
                if self.rg(*b) {
                    acc(*b, g.zip_map(av, |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.rg(*row) {
                    let cols = g.cols();
                    let r = Matrix::from_fn(1, cols, |_, j| (0..g.rows()).fold(T::zero(), |s, i| s + g[(i, j)]));
                    acc(*row, r);
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::Shift(a) | Op::StraightThrough(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, g.zip_map(av, |gv, x| if x > T::zero() { gv } else { T::zero() }));
            }
            Op::Sigmoid(_) => {
                let Op::Sigmoid(a) = node.op else { unreachable!() };
                let y = &node.value;
                acc(a, g.zip_map(y, |gv, s| gv * s * (T::one() - s)));
            }
            Op::MeanRows(a) => {
                let (r, c) = self.value(*a).shape();
                let n = T::from_usize_lossy(r);
                acc(*a, Matrix::from_fn(r, c, |_, j| g[(0, j)] / n));
            }
            Op::SumAll(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g[(0, 0)]));
            }
            Op::GcnNorm(w) => {
                let norm = &node.value;
                let deg = node.aux.as_ref().expect("gcn_norm degrees");
                let n = norm.rows();
                let half = T::lit(0.5);
                let gd: Vec<T> = (0..n)
                    .map(|k| {
                        let row: T = (0..n).fold(T::zero(), |s, j| s + g[(k, j)] * norm[(k, j)]);
                        let col: T = (0..n).fold(T::zero(), |s, i| s + g[(i, k)] * norm[(i, k)]);
                        -half * (row + col) / deg[k]
                    })
                    .collect();
                let gw = Matrix::from_fn(n, n, |k, l| {
                    g[(k, l)] / (deg[k].sqrt() * deg[l].sqrt()) + gd[k]
                });
                acc(*w, gw);
            }
            Op::Diag(a) => {
                let n = g.rows();
                acc(*a, Matrix::from_fn(n, n, |i, j| if i == j { g[(i, 0)] } else { T::zero() }));
            }
            Op::HCat(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                acc(*a, Matrix::from_fn(g.rows(), ca, |i, j| g[(i, j)]));
                acc(*b, Matrix::from_fn(g.rows(), cb, |i, j| g[(i, ca + j)]));
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let mut out = g.clone();
                for i in 0..y.rows() {
                    let total: T = g.row(i).iter().fold(T::zero(), |s, &x| s + x);
                    for (o, &ly) in out.row_mut(i).iter_mut().zip(y.row(i)) {
                        *o -= ly.exp() * total;
                    }
                }
                acc(*a, out);
            }
            Op::Pick(a, i, j) => {
                let (r, c) = self.value(*a).shape();
                let mut m = Matrix::zeros(r, c);
                m[(*i, *j)] = g[(0, 0)];
                acc(*a, m);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of d(out)/d(input) for a tape builder.
    fn check(input: Matrix<f64>, build: impl Fn(&mut Tape<f64>, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.param(input.clone());
        let out = build(&mut tape, x);
        let grads = tape.backward(out);
        let g = grads.get_or_zeros(x, input.rows(), input.cols());
        let h = 1e-6;
        for idx in 0..input.as_slice().len() {
            let eval = |delta: f64| {
                let mut m = input.clone();
                m.as_mut_slice()[idx] += delta;
                let mut t = Tape::new();
                let v = t.param(m);
                let o = build(&mut t, v);
                t.scalar(o)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = g.as_slice()[idx];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "coord {idx}: fd {fd} vs {an}");
        }
    }

    fn sample() -> Matrix<f64> {
        Matrix::from_rows(&[vec![0.3, -0.7, 1.1], vec![0.5, 0.2, -0.4], vec![-1.3, 0.9, 0.05]])
    }

    #[test]
    fn matmul_and_transpose_products() {
        let w = Matrix::from_rows(&[vec![0.2, -0.1], vec![0.4, 0.3], vec![-0.5, 0.6]]);
        check(sample(), |t, x| {
            let wv = t.constant(w.clone());
            let y = t.matmul(x, wv);
            let z = t.matmul_t(y, y);
            let s = t.sigmoid(z);
            t.sum_all(s)
        });
    }

    #[test]
    fn gcn_norm_gradient() {
        let nonneg = sample().map(f64::abs);
        check(nonneg, |t, x| {
            let n = t.gcn_norm(x);
            let c = t.constant(sample());
            let p = t.mul(n, c);
            t.sum_all(p)
        });
    }

    #[test]
    fn walk_norm_powers_diag_hcat() {
        let nonneg = sample().map(f64::abs);
        let x0 = Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.3);
        check(nonneg, |t, x| {
            let s = t.walk_norm(x);
            let s2 = t.matmul(s, s);
            let s3 = t.matmul(s2, s);
            let d = t.diag(s3);
            let f = t.constant(x0.clone());
            let h = t.hcat(f, d);
            let h2 = t.hcat(d, h);
            let m = t.mul(h2, h2);
            t.sum_all(m)
        });
    }

    #[test]
    fn log_softmax_pick_relu_mean() {
        check(sample(), |t, x| {
            let r = t.relu(x);
            let b = t.constant(Matrix::row_vector(vec![0.1, -0.2, 0.3]));
            let y = t.add_row(r, b);
            let m = t.mean_rows(y);
            let ls = t.log_softmax(m);
            t.pick(ls, 0, 1)
        });
    }

    #[test]
    fn self_product_and_shift() {
        check(sample(), |t, x| {
            let sq = t.mul(x, x);
            let sh = t.shift(sq, 1.0);
            let d = t.sub(sh, x);
            let s = t.scale(d, 0.5);
            t.sum_all(s)
        });
    }

    #[test]
    fn straight_through_passes_soft_adjoint() {
        let mut tape = Tape::new();
        let x = tape.param(sample());
        let soft = tape.sigmoid(x);
        let hard = tape.value(soft).map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        let st = tape.straight_through(soft, hard.clone());
        assert_eq!(tape.value(st), &hard);
        let out = tape.sum_all(st);
        let g_st = tape.backward(out).get(x).unwrap().clone();

        let mut tape2 = Tape::new();
        let x2 = tape2.param(sample());
        let soft2 = tape2.sigmoid(x2);
        let out2 = tape2.sum_all(soft2);
        let g_soft = tape2.backward(out2).get(x2).unwrap().clone();
        assert_eq!(g_st, g_soft);
    }

    #[test]
    fn constants_receive_no_adjoint() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(sample());
        let p = tape.param(sample());
        let m = tape.mul(c, p);
        let s = tape.sum_all(m);
        let g = tape.backward(s);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap(), &sample());
    }
}
