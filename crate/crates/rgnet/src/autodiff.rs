//! Minimal reverse-mode autodiff over `f64` matrices.
//!
//! Every tensor is an `ndarray::Array2<f64>`; vectors are carried as `n x 1`
//! or `1 x n` matrices and scalars as `1 x 1`. A [`Tape`] records one forward
//! pass eagerly; [`Tape::backward`] replays it once in reverse. Tapes are
//! built per training step and dropped afterwards, so node storage is a flat
//! arena indexed by [`Var`].
//!
//! The op set is exactly what the encoder, decoder, and losses need. All
//! arithmetic is sequential 64-bit, which keeps runs bit-reproducible.

use std::cell::RefCell;

use ndarray::{s, Array2, Axis};

pub type Arr = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Softplus(usize),
    Relu(usize),
    Ln(usize),
    Exp(usize),
    Sqrt(usize),
    Abs(usize),
    Maximum(usize, usize),
    Minimum(usize, usize),
    Transpose(usize),
    ConcatRows(usize, usize),
    SliceRows(usize, usize, usize),
    GatherRows(usize, Vec<usize>),
    SumAll(usize),
    Reshape(usize),
    SoftmaxRows(usize),
    LogSumExpRows(usize),
    AddRowBroadcast(usize, usize),
    StraightThrough(usize),
}

struct Node {
    value: Arr,
    op: Op,
}

/// Arena of forward values plus the recipe to differentiate them.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Arr>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Arr> {
        self.grads[v.0].as_ref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Arr, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    fn with_value<R>(&self, v: Var, f: impl FnOnce(&Arr) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[v.0].value)
    }

    /// Clone out the forward value of a node.
    pub fn value(&self, v: Var) -> Arr {
        self.with_value(v, |a| a.clone())
    }

    /// Forward value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.with_value(v, |a| {
            assert_eq!(a.len(), 1, "scalar() on non-scalar node");
            a[[0, 0]]
        })
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.with_value(v, |a| (a.nrows(), a.ncols()))
    }

    // ---- node constructors -------------------------------------------------

    /// A leaf node. Gradients accumulate here but nothing flows past it.
    pub fn leaf(&self, value: Arr) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: Arr) -> Var {
        self.leaf(value)
    }

    pub fn scalar_leaf(&self, x: f64) -> Var {
        self.leaf(Arr::from_elem((1, 1), x))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(av.ncols(), bv.nrows(), "matmul shape mismatch");
            av.dot(bv)
        };
        self.push(v, Op::Matmul(a.0, b.0))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            assert_eq!(nodes[a.0].value.dim(), nodes[b.0].value.dim());
            &nodes[a.0].value + &nodes[b.0].value
        };
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            assert_eq!(nodes[a.0].value.dim(), nodes[b.0].value.dim());
            &nodes[a.0].value - &nodes[b.0].value
        };
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            assert_eq!(nodes[a.0].value.dim(), nodes[b.0].value.dim());
            &nodes[a.0].value * &nodes[b.0].value
        };
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            assert_eq!(nodes[a.0].value.dim(), nodes[b.0].value.dim());
            &nodes[a.0].value / &nodes[b.0].value
        };
        self.push(v, Op::Div(a.0, b.0))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let v = self.with_value(a, |av| av * c);
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let v = self.with_value(a, |av| av + c);
        self.push(v, Op::AddScalar(a.0))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.with_value(a, |av| av.mapv(sigmoid_f));
        self.push(v, Op::Sigmoid(a.0))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&self, a: Var) -> Var {
        let v = self.with_value(a, |av| {
            av.mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p())
        });
        self.push(v, Op::Softplus(a.0))
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.with_value(a, |av| av.mapv(|x| x.max(0.0)));
        self.push(v, Op::Relu(a.0))
    }

    pub fn ln(&self, a: Var) -> Var {
        let v = self.with_value(a, |av| av.mapv(f64::ln));
        self.push(v, Op::Ln(a.0))
    }

    pub fn exp(&self, a: Var) -> Var {
        let v = self.with_value(a, |av| av.mapv(f64::exp));
        self.push(v, Op::Exp(a.0))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let v = self.with_value(a, |av| av.mapv(f64::sqrt));
        self.push(v, Op::Sqrt(a.0))
    }

    pub fn abs(&self, a: Var) -> Var {
        let v = self.with_value(a, |av| av.mapv(f64::abs));
        self.push(v, Op::Abs(a.0))
    }

    /// Elementwise max. Ties route the gradient to the first argument.
    pub fn maximum(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(av.dim(), bv.dim());
            ndarray::Zip::from(av).and(bv).map_collect(|&x, &y| x.max(y))
        };
        self.push(v, Op::Maximum(a.0, b.0))
    }

    pub fn minimum(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(av.dim(), bv.dim());
            ndarray::Zip::from(av).and(bv).map_collect(|&x, &y| x.min(y))
        };
        self.push(v, Op::Minimum(a.0, b.0))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let v = self.with_value(a, |av| av.t().to_owned());
        self.push(v, Op::Transpose(a.0))
    }

    pub fn concat_rows(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(av.ncols(), bv.ncols());
            ndarray::concatenate(Axis(0), &[av.view(), bv.view()]).unwrap()
        };
        self.push(v, Op::ConcatRows(a.0, b.0))
    }

    /// Rows `r0..r1` of `a`.
    pub fn slice_rows(&self, a: Var, r0: usize, r1: usize) -> Var {
        let v = self.with_value(a, |av| av.slice(s![r0..r1, ..]).to_owned());
        self.push(v, Op::SliceRows(a.0, r0, r1))
    }

    pub fn gather_rows(&self, a: Var, rows: &[usize]) -> Var {
        let v = self.with_value(a, |av| {
            let mut out = Arr::zeros((rows.len(), av.ncols()));
            for (i, &r) in rows.iter().enumerate() {
                out.row_mut(i).assign(&av.row(r));
            }
            out
        });
        self.push(v, Op::GatherRows(a.0, rows.to_vec()))
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let v = self.with_value(a, |av| Arr::from_elem((1, 1), av.sum()));
        self.push(v, Op::SumAll(a.0))
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.with_value(a, |av| av.len());
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Row-major reshape to `rows x cols` (element count must match).
    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.with_value(a, |av| {
            assert_eq!(av.len(), rows * cols, "reshape element count");
            Arr::from_shape_vec((rows, cols), av.iter().cloned().collect()).unwrap()
        });
        self.push(v, Op::Reshape(a.0))
    }

    /// Row-wise softmax. `-inf` entries (from additive masks) get weight 0.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let v = self.with_value(a, |av| softmax_rows_f(av));
        self.push(v, Op::SoftmaxRows(a.0))
    }

    /// Row-wise `log(sum(exp(x)))`, shape `n x 1`, max-shifted for stability.
    pub fn log_sum_exp_rows(&self, a: Var) -> Var {
        let v = self.with_value(a, |av| {
            let mut out = Arr::zeros((av.nrows(), 1));
            for (r, row) in av.rows().into_iter().enumerate() {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
                out[[r, 0]] = m + s.ln();
            }
            out
        });
        self.push(v, Op::LogSumExpRows(a.0))
    }

    /// `a + b` where `b` is `1 x D` broadcast over the rows of `a`.
    pub fn add_row_broadcast(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(bv.nrows(), 1);
            assert_eq!(av.ncols(), bv.ncols());
            av + &bv.row(0)
        };
        self.push(v, Op::AddRowBroadcast(a.0, b.0))
    }

    /// Forward emits `hard`; the backward pass treats the node as the
    /// identity of `soft` (straight-through estimator).
    pub fn straight_through(&self, soft: Var, hard: Arr) -> Var {
        let dim = self.with_value(soft, |av| av.dim());
        assert_eq!(dim, hard.dim());
        self.push(hard, Op::StraightThrough(soft.0))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Arr>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Arr::from_elem((1, 1), 1.0));

        for i in (0..nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    let da = g.dot(&nodes[*b].value.t());
                    let db = nodes[*a].value.t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, -g);
                }
                Op::Mul(a, b) => {
                    let da = &g * &nodes[*b].value;
                    let db = &g * &nodes[*a].value;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Div(a, b) => {
                    let bv = &nodes[*b].value;
                    let da = &g / bv;
                    let db = -&g * &nodes[*a].value / (bv * bv);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Sigmoid(a) => {
                    let s = &nodes[i].value;
                    accumulate(&mut grads, *a, &g * s * (1.0 - s));
                }
                Op::Softplus(a) => {
                    let da = &g * &nodes[*a].value.mapv(sigmoid_f);
                    accumulate(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let mask = nodes[*a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &g * &mask);
                }
                Op::Ln(a) => accumulate(&mut grads, *a, &g / &nodes[*a].value),
                Op::Exp(a) => accumulate(&mut grads, *a, &g * &nodes[i].value),
                Op::Sqrt(a) => {
                    let da = &g / &(&nodes[i].value * 2.0);
                    accumulate(&mut grads, *a, da);
                }
                Op::Abs(a) => {
                    let sign = nodes[*a].value.mapv(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, &g * &sign);
                }
                Op::Maximum(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let pick_a = ndarray::Zip::from(av)
                        .and(bv)
                        .map_collect(|&x, &y| if x >= y { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &g * &pick_a);
                    accumulate(&mut grads, *b, &g * &(1.0 - &pick_a));
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let pick_a = ndarray::Zip::from(av)
                        .and(bv)
                        .map_collect(|&x, &y| if x <= y { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &g * &pick_a);
                    accumulate(&mut grads, *b, &g * &(1.0 - &pick_a));
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::ConcatRows(a, b) => {
                    let ra = nodes[*a].value.nrows();
                    accumulate(&mut grads, *a, g.slice(s![..ra, ..]).to_owned());
                    accumulate(&mut grads, *b, g.slice(s![ra.., ..]).to_owned());
                }
                Op::SliceRows(a, r0, _r1) => {
                    let mut da = Arr::zeros(nodes[*a].value.dim());
                    da.slice_mut(s![*r0..*r0 + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *a, da);
                }
                Op::GatherRows(a, rows) => {
                    let mut da = Arr::zeros(nodes[*a].value.dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = da.row_mut(r);
                        dst += &g.row(i);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SumAll(a) => {
                    let da = Arr::from_elem(nodes[*a].value.dim(), g[[0, 0]]);
                    accumulate(&mut grads, *a, da);
                }
                Op::Reshape(a) => {
                    let dim = nodes[*a].value.dim();
                    let da = Arr::from_shape_vec(dim, g.iter().cloned().collect()).unwrap();
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let sm = &nodes[i].value;
                    let mut da = Arr::zeros(sm.dim());
                    for r in 0..sm.nrows() {
                        let srow = sm.row(r);
                        let grow = g.row(r);
                        let dot: f64 = srow.iter().zip(grow.iter()).map(|(s, g)| s * g).sum();
                        for c in 0..sm.ncols() {
                            da[[r, c]] = srow[c] * (grow[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LogSumExpRows(a) => {
                    let sm = softmax_rows_f(&nodes[*a].value);
                    let mut da = sm;
                    for r in 0..da.nrows() {
                        let gr = g[[r, 0]];
                        da.row_mut(r).mapv_inplace(|x| x * gr);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::AddRowBroadcast(a, b) => {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, db);
                }
                Op::StraightThrough(a) => accumulate(&mut grads, *a, g),
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Arr>], idx: usize, g: Arr) {
    match &mut grads[idx] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

pub fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Plain-value row softmax; `-inf` entries get weight 0.
pub fn softmax_rows_f(a: &Arr) -> Arr {
    let mut out = Arr::zeros(a.dim());
    for (r, row) in a.rows().into_iter().enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for c in 0..row.len() {
            let e = (row[c] - m).exp();
            out[[r, c]] = e;
            denom += e;
        }
        for c in 0..row.len() {
            out[[r, c]] /= denom;
        }
    }
    out
}
