//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every intermediate in a forward pass is a node on a [`Tape`]; calling
//! [`Tape::backward`] on a scalar node propagates gradients to every
//! ancestor. All tensors are 2-D (`ndarray::Array2<f64>`); vectors are
//! `1×d` rows and scalars are `1×1`.

pub mod nn;
pub mod params;

use ndarray::{concatenate, s, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    /// Position of this node on its tape (indexes [`Tape::backward`]'s
    /// gradient vector).
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule: (upstream grad, parent values, own value) -> parent grads.
type Backward = Box<dyn Fn(&Array2<f64>, &[&Array2<f64>], &Array2<f64>) -> Vec<Array2<f64>>>;

struct Node {
    value: Array2<f64>,
    parents: Vec<usize>,
    backward: Option<Backward>,
}

/// A growable computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        assert_eq!(val.dim(), (1, 1), "scalar() on non-1x1 node");
        val[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, parents: Vec<usize>, backward: Option<Backward>) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Insert an input or parameter node.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, vec![], None)
    }

    /// Backpropagate from a `1×1` node. Returns one gradient slot per node;
    /// leaves unreachable from `root` stay `None`.
    pub fn backward(&self, root: Var) -> Vec<Option<Array2<f64>>> {
        assert_eq!(
            self.nodes[root.0].value.dim(),
            (1, 1),
            "backward() root must be scalar"
        );
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(bw) = &node.backward {
                let pvals: Vec<&Array2<f64>> =
                    node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let pgrads = bw(&g, &pvals, &node.value);
                debug_assert_eq!(pgrads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(pgrads) {
                    debug_assert_eq!(pg.dim(), self.nodes[p].value.dim());
                    match &mut grads[p] {
                        Some(acc) => *acc += &pg,
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        grads
    }

    // ---- elementwise binary ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|g, _, _| vec![g.clone(), -g])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|g, p, _| vec![g * p[1], g * p[0]])),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|g, p, own| vec![g / p[1], -(g * own) / p[1]])),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|g, p, _| {
                vec![g.dot(&p[1].t()), p[0].t().dot(g)]
            })),
        )
    }

    // ---- elementwise unary ----

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(v, vec![a.0], Some(Box::new(|g, _, _| vec![-g])))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, vec![a.0], Some(Box::new(move |g, _, _| vec![g * c])))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, vec![a.0], Some(Box::new(|g, _, _| vec![g.clone()])))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, vec![a.0], Some(Box::new(|g, _, own| vec![g * own])))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, vec![a.0], Some(Box::new(|g, p, _| vec![g / p[0]])))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, _, own| vec![g / (own * 2.0)])),
        )
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, p, _| vec![g * p[0] * 2.0])),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, _, own| vec![g * &own.mapv(|y| 1.0 - y * y)])),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, _, own| vec![g * &own.mapv(|y| y * (1.0 - y))])),
        )
    }

    /// `ln(1 + e^x)`, the positive mapping used for standard deviations.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| {
            if x > 30.0 {
                x
            } else {
                x.exp().ln_1p()
            }
        });
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, p, _| {
                vec![g * &p[0].mapv(|x| 1.0 / (1.0 + (-x).exp()))]
            })),
        )
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / x);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, _, own| vec![-(g * own * own)])),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, p, _| {
                vec![g * &p[0].mapv(|x| if x > 0.0 { 1.0 } else { 0.0 })]
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let dim = self.value(a).dim();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                vec![Array2::from_elem(dim, g[[0, 0]])]
            })),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over columns: `n×d -> n×1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .sum_axis(Axis(1))
            .insert_axis(Axis(1))
            .to_owned();
        let cols = self.value(a).ncols();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, p, _| {
                let mut out = Array2::zeros(p[0].dim());
                for (mut row, gv) in out.rows_mut().into_iter().zip(g.column(0)) {
                    row.fill(*gv);
                }
                let _ = cols;
                vec![out]
            })),
        )
    }

    /// Mean over columns: `n×d -> n×1`.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let d = self.value(a).ncols() as f64;
        let s = self.row_sum(a);
        self.scale(s, 1.0 / d)
    }

    /// Sum over rows: `n×d -> 1×d`.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0)).to_owned();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, p, _| {
                let mut out = Array2::zeros(p[0].dim());
                for mut row in out.rows_mut() {
                    row += &g.row(0);
                }
                vec![out]
            })),
        )
    }

    // ---- broadcasting ----

    /// Tile a `1×d` row to `n×d`.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), 1, "broadcast_rows expects 1×d");
        let mut v = Array2::zeros((n, src.ncols()));
        for mut row in v.rows_mut() {
            row.assign(&src.row(0));
        }
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, _, _| {
                vec![g.sum_axis(Axis(0)).insert_axis(Axis(0)).to_owned()]
            })),
        )
    }

    /// Tile an `n×1` column to `n×d`.
    pub fn broadcast_cols(&mut self, a: Var, d: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.ncols(), 1, "broadcast_cols expects n×1");
        let mut v = Array2::zeros((src.nrows(), d));
        for (mut row, sv) in v.rows_mut().into_iter().zip(src.column(0)) {
            row.fill(*sv);
        }
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, _, _| {
                vec![g.sum_axis(Axis(1)).insert_axis(Axis(1)).to_owned()]
            })),
        )
    }

    /// `a + broadcast(b)` where `a` is `n×d` and `b` is `1×d`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bb = self.broadcast_rows(b, self.value(a).nrows());
        self.add(a, bb)
    }

    /// `a ⊙ broadcast(b)` where `a` is `n×d` and `b` is `n×1`.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        let bb = self.broadcast_cols(b, self.value(a).ncols());
        self.mul(a, bb)
    }

    // ---- softmax ----

    /// Softmax over each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, _, own| {
                let mut dx = g * own;
                for (mut drow, yrow) in dx.rows_mut().into_iter().zip(own.rows()) {
                    let dot = drow.sum();
                    drow.zip_mut_with(&yrow, |d, &y| *d -= dot * y);
                }
                vec![dx]
            })),
        )
    }

    /// Softmax over each column.
    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let t = self.transpose(a);
        let sm = self.softmax_rows(t);
        self.transpose(sm)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, _, _| vec![g.t().to_owned()])),
        )
    }

    // ---- structural ----

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows shape");
        let sizes: Vec<usize> = parts.iter().map(|&p| self.value(p).nrows()).collect();
        self.push(
            v,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut at = 0;
                for &sz in &sizes {
                    out.push(g.slice(s![at..at + sz, ..]).to_owned());
                    at += sz;
                }
                out
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols shape");
        let sizes: Vec<usize> = parts.iter().map(|&p| self.value(p).ncols()).collect();
        self.push(
            v,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut at = 0;
                for &sz in &sizes {
                    out.push(g.slice(s![.., at..at + sz]).to_owned());
                    at += sz;
                }
                out
            })),
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, p, _| {
                let mut out = Array2::zeros(p[0].dim());
                out.slice_mut(s![start..end, ..]).assign(g);
                vec![out]
            })),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, p, _| {
                let mut out = Array2::zeros(p[0].dim());
                out.slice_mut(s![.., start..end]).assign(g);
                vec![out]
            })),
        )
    }
}
