// Append-only autodiff tape.
//
// Every op eagerly computes its output and records the parent handles plus
// a backward closure. `backward` walks the tape once in reverse, so node
// ids double as a topological order. Roots must be scalars (single-element
// arrays); gradients of intermediate nodes are freed as soon as they have
// been propagated, while leaf gradients are retained for the caller.

use ndarray::{s, Array1, Array2, ArrayD, Axis, Ix1, Ix2, Ix3, IxDyn};

use super::Arr;

/// Handle to a node on a [`Tape`]. Cheap to copy; only valid for the tape
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

enum Kind {
    /// Differentiable input; gradient is retained after backward.
    Leaf,
    /// Non-differentiable input; no gradient is accumulated.
    Constant,
    /// Result of an op.
    Op(BackStep),
}

struct BackStep {
    parents: Vec<Value>,
    /// Maps the output gradient to one gradient per parent (same order).
    back: Box<dyn Fn(&Ctx<'_>, &Arr) -> Vec<Arr>>,
}

struct Node {
    value: Arr,
    kind: Kind,
}

/// Read-only view of the tape handed to backward closures.
pub struct Ctx<'t> {
    tape: &'t Tape,
    node: usize,
}

impl<'t> Ctx<'t> {
    /// Value of the i-th parent of the node whose backward pass is running.
    fn parent_val(&self, i: usize) -> &Arr {
        let Kind::Op(step) = &self.tape.nodes[self.node].kind else {
            unreachable!("backward ctx on non-op node")
        };
        &self.tape.nodes[step.parents[i].0].value
    }

    /// The output value of the node whose backward pass is running.
    fn out(&self) -> &Arr {
        &self.tape.nodes[self.node].value
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    by_node: Vec<Option<Arr>>,
}

impl Gradients {
    pub fn get(&self, v: Value) -> Option<&Arr> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, or zeros if the root did not depend on it.
    pub fn get_or_zeros(&self, v: Value, shape: &[usize]) -> Arr {
        match self.get(v) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(shape)),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Value) -> &Arr {
        &self.nodes[v.0].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Value) -> f64 {
        let a = self.value(v);
        assert_eq!(a.len(), 1, "scalar() on node with {} elements", a.len());
        *a.iter().next().unwrap()
    }

    pub fn leaf(&mut self, value: Arr) -> Value {
        self.push(value, Kind::Leaf)
    }

    pub fn constant(&mut self, value: Arr) -> Value {
        self.push(value, Kind::Constant)
    }

    fn push(&mut self, value: Arr, kind: Kind) -> Value {
        self.nodes.push(Node { value, kind });
        Value(self.nodes.len() - 1)
    }

    fn push_op(
        &mut self,
        value: Arr,
        parents: Vec<Value>,
        back: impl Fn(&Ctx<'_>, &Arr) -> Vec<Arr> + 'static,
    ) -> Value {
        self.push(value, Kind::Op(BackStep { parents, back: Box::new(back) }))
    }

    /// Reverse-mode sweep from a scalar root. May be called repeatedly on
    /// the same tape (e.g. two different losses over one graph).
    pub fn backward(&self, root: Value) -> Gradients {
        assert_eq!(
            self.nodes[root.0].value.len(),
            1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Arr>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::ones(self.nodes[root.0].value.raw_dim()));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            match &node.kind {
                Kind::Leaf => {} // retain gradient
                Kind::Constant => {
                    grads[id] = None;
                }
                Kind::Op(step) => {
                    let Some(g) = grads[id].take() else { continue };
                    let ctx = Ctx { tape: self, node: id };
                    let parent_grads = (step.back)(&ctx, &g);
                    debug_assert_eq!(parent_grads.len(), step.parents.len());
                    for (p, pg) in step.parents.iter().zip(parent_grads) {
                        if matches!(self.nodes[p.0].kind, Kind::Constant) {
                            continue;
                        }
                        debug_assert_eq!(
                            pg.shape(),
                            self.nodes[p.0].value.shape(),
                            "gradient shape mismatch for parent node {}",
                            p.0
                        );
                        match &mut grads[p.0] {
                            Some(acc) => *acc += &pg,
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        Gradients { by_node: grads }
    }

    // ---- elementwise arithmetic ----

    pub fn add(&mut self, a: Value, b: Value) -> Value {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let v = self.value(a) + self.value(b);
        self.push_op(v, vec![a, b], |_, g| vec![g.clone(), g.clone()])
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Value {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let v = self.value(a) - self.value(b);
        self.push_op(v, vec![a, b], |_, g| vec![g.clone(), -g])
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Value {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let v = self.value(a) * self.value(b);
        self.push_op(v, vec![a, b], |ctx, g| {
            vec![g * ctx.parent_val(1), g * ctx.parent_val(0)]
        })
    }

    pub fn scale(&mut self, x: Value, c: f64) -> Value {
        let v = self.value(x).mapv(|e| e * c);
        self.push_op(v, vec![x], move |_, g| vec![g.mapv(|e| e * c)])
    }

    pub fn add_scalar(&mut self, x: Value, c: f64) -> Value {
        let v = self.value(x).mapv(|e| e + c);
        self.push_op(v, vec![x], |_, g| vec![g.clone()])
    }

    /// x + c where `c` is a fixed array broadcastable to x's shape
    /// (e.g. positional encodings). No gradient flows to `c`.
    pub fn add_const_array(&mut self, x: Value, c: &Arr) -> Value {
        let v = self.value(x) + &c.broadcast(self.value(x).raw_dim()).expect("broadcast");
        assert_eq!(v.shape(), self.value(x).shape());
        self.push_op(v, vec![x], |_, g| vec![g.clone()])
    }

    /// x * c where `c` is a fixed array broadcastable to x's shape
    /// (e.g. padding masks). No gradient flows to `c`.
    pub fn mul_const_array(&mut self, x: Value, c: &Arr) -> Value {
        let cb = c.broadcast(self.value(x).raw_dim()).expect("broadcast").to_owned();
        let v = self.value(x) * &cb;
        self.push_op(v, vec![x], move |_, g| vec![g * &cb])
    }

    /// Bias add: x[..., d] + b[d].
    pub fn add_bias(&mut self, x: Value, b: Value) -> Value {
        let bs = self.value(b).shape().to_vec();
        let xs = self.value(x).shape().to_vec();
        assert_eq!(bs.len(), 1);
        assert_eq!(*xs.last().unwrap(), bs[0]);
        let v = self.value(x) + &self.value(b).broadcast(self.value(x).raw_dim()).unwrap();
        self.push_op(v, vec![x, b], move |_, g| {
            let d = *g.shape().last().unwrap();
            let g2 = flat2(g, d);
            vec![g.clone(), g2.sum_axis(Axis(0)).into_dyn()]
        })
    }

    /// Multiply by a scalar-shaped parameter ([1]): y = x * w.
    pub fn mul_scalar_param(&mut self, x: Value, w: Value) -> Value {
        assert_eq!(self.value(w).len(), 1);
        let wv = self.value(w)[[0]];
        let v = self.value(x).mapv(|e| e * wv);
        self.push_op(v, vec![x, w], move |ctx, g| {
            let dw = (g * ctx.parent_val(0)).sum();
            vec![g.mapv(|e| e * wv), ndarray::arr1(&[dw]).into_dyn()]
        })
    }

    // ---- nonlinearities ----

    pub fn relu(&mut self, x: Value) -> Value {
        let v = self.value(x).mapv(|e| e.max(0.0));
        self.push_op(v, vec![x], |ctx, g| {
            let mut dx = g.clone();
            dx.zip_mut_with(ctx.parent_val(0), |d, &x| {
                if x <= 0.0 {
                    *d = 0.0;
                }
            });
            vec![dx]
        })
    }

    pub fn sigmoid(&mut self, x: Value) -> Value {
        let v = self.value(x).mapv(|e| 1.0 / (1.0 + (-e).exp()));
        self.push_op(v, vec![x], |ctx, g| {
            let y = ctx.out();
            vec![g * &y.mapv(|y| y * (1.0 - y))]
        })
    }

    pub fn tanh_(&mut self, x: Value) -> Value {
        let v = self.value(x).mapv(f64::tanh);
        self.push_op(v, vec![x], |ctx, g| {
            let y = ctx.out();
            vec![g * &y.mapv(|y| 1.0 - y * y)]
        })
    }

    /// max(x, c). The subgradient is zero where the clamp is active.
    pub fn clamp_min(&mut self, x: Value, c: f64) -> Value {
        let v = self.value(x).mapv(|e| e.max(c));
        self.push_op(v, vec![x], move |ctx, g| {
            let mut dx = g.clone();
            dx.zip_mut_with(ctx.parent_val(0), |d, &x| {
                if x <= c {
                    *d = 0.0;
                }
            });
            vec![dx]
        })
    }

    pub fn abs_(&mut self, x: Value) -> Value {
        let v = self.value(x).mapv(f64::abs);
        self.push_op(v, vec![x], |ctx, g| {
            let mut dx = g.clone();
            dx.zip_mut_with(ctx.parent_val(0), |d, &x| *d *= sign(x));
            vec![dx]
        })
    }

    /// 1 / sqrt(x + eps), for norm denominators.
    pub fn rsqrt_eps(&mut self, x: Value, eps: f64) -> Value {
        let v = self.value(x).mapv(|e| 1.0 / (e + eps).sqrt());
        self.push_op(v, vec![x], |ctx, g| {
            let y = ctx.out();
            vec![g * &y.mapv(|y| -0.5 * y * y * y)]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_lastdim(&mut self, x: Value) -> Value {
        let v = softmax_rows(self.value(x));
        self.push_op(v, vec![x], |ctx, g| {
            let y = ctx.out();
            let d = *y.shape().last().unwrap();
            let y2 = flat2(y, d);
            let g2 = flat2(g, d);
            let dot = (&y2 * &g2).sum_axis(Axis(1)).insert_axis(Axis(1));
            let dx = &y2 * &(&g2 - &dot);
            vec![dx.into_shape_with_order(y.raw_dim()).unwrap().into_dyn()]
        })
    }

    /// Log-softmax over the last axis (numerically stable).
    pub fn log_softmax_lastdim(&mut self, x: Value) -> Value {
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap();
        let x2 = flat2(xv, d);
        let mut out = x2.to_owned();
        for mut row in out.rows_mut() {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&e| (e - mx).exp()).sum::<f64>().ln();
            row.mapv_inplace(|e| e - lse);
        }
        let v = out.into_shape_with_order(xv.raw_dim()).unwrap().into_dyn();
        self.push_op(v, vec![x], |ctx, g| {
            let y = ctx.out();
            let d = *y.shape().last().unwrap();
            let y2 = flat2(y, d);
            let g2 = flat2(g, d);
            let gsum = g2.sum_axis(Axis(1)).insert_axis(Axis(1));
            let dx = &g2 - &(&y2.mapv(f64::exp) * &gsum);
            vec![dx.into_shape_with_order(y.raw_dim()).unwrap().into_dyn()]
        })
    }

    // ---- shape plumbing ----

    pub fn reshape(&mut self, x: Value, shape: &[usize]) -> Value {
        let xv = self.value(x);
        assert_eq!(xv.len(), shape.iter().product::<usize>(), "reshape length mismatch");
        let v = xv
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap();
        let orig = xv.raw_dim();
        self.push_op(v, vec![x], move |_, g| {
            vec![g
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(orig.clone())
                .unwrap()]
        })
    }

    /// Swap the last two axes (materialized into standard layout).
    pub fn transpose_last2(&mut self, x: Value) -> Value {
        let xv = self.value(x);
        let n = xv.ndim();
        assert!(n >= 2);
        let mut v = xv.view();
        v.swap_axes(n - 2, n - 1);
        let v = v.as_standard_layout().into_owned();
        self.push_op(v, vec![x], move |_, g| {
            let mut gv = g.view();
            gv.swap_axes(n - 2, n - 1);
            vec![gv.as_standard_layout().into_owned()]
        })
    }

    /// Concatenate along the last axis.
    pub fn concat_lastdim(&mut self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let ax = views[0].ndim() - 1;
        let widths: Vec<usize> = views.iter().map(|v| v.shape()[ax]).collect();
        let v = ndarray::concatenate(Axis(ax), &views).expect("concat shapes");
        self.push_op(v, parts.to_vec(), move |_, g| {
            let ax = g.ndim() - 1;
            let mut out = Vec::with_capacity(widths.len());
            let mut start = 0;
            for &w in &widths {
                out.push(
                    g.slice_axis(Axis(ax), ndarray::Slice::from(start as isize..(start + w) as isize))
                        .to_owned(),
                );
                start += w;
            }
            out
        })
    }

    /// Slice `len` columns of the last axis starting at `start`.
    pub fn slice_lastdim(&mut self, x: Value, start: usize, len: usize) -> Value {
        let xv = self.value(x);
        let ax = xv.ndim() - 1;
        let v = xv
            .slice_axis(Axis(ax), ndarray::Slice::from(start as isize..(start + len) as isize))
            .as_standard_layout()
            .into_owned();
        let full = xv.raw_dim();
        self.push_op(v, vec![x], move |_, g| {
            let mut dx = ArrayD::zeros(full.clone());
            let ax = dx.ndim() - 1;
            dx.slice_axis_mut(Axis(ax), ndarray::Slice::from(start as isize..(start + len) as isize))
                .assign(g);
            vec![dx]
        })
    }

    // ---- reductions ----

    /// Sum of all elements, as a [1]-shaped tensor.
    pub fn sum_all(&mut self, x: Value) -> Value {
        let s = self.value(x).sum();
        let shape = self.value(x).raw_dim();
        let v = ndarray::arr1(&[s]).into_dyn();
        self.push_op(v, vec![x], move |_, g| {
            let gv = g[[0]];
            vec![ArrayD::from_elem(shape.clone(), gv)]
        })
    }

    /// Sum along one axis, keeping it as size 1.
    pub fn sum_axis_keep(&mut self, x: Value, axis: usize) -> Value {
        let xv = self.value(x);
        let v = xv.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        let n = xv.shape()[axis];
        self.push_op(v, vec![x], move |_, g| {
            let reps: Vec<usize> = g
                .shape()
                .iter()
                .enumerate()
                .map(|(i, &s)| if i == axis { n } else { s })
                .collect();
            vec![g.broadcast(IxDyn(&reps)).unwrap().to_owned()]
        })
    }

    /// x[..., d] * s[..., 1] with broadcasting over the last axis only.
    pub fn mul_broadcast_last(&mut self, x: Value, sfac: Value) -> Value {
        let xs = self.value(x).shape().to_vec();
        let ss = self.value(sfac).shape().to_vec();
        assert_eq!(xs.len(), ss.len());
        assert_eq!(*ss.last().unwrap(), 1);
        assert_eq!(&xs[..xs.len() - 1], &ss[..ss.len() - 1]);
        let v = self.value(x) * &self.value(sfac).broadcast(IxDyn(&xs)).unwrap();
        self.push_op(v, vec![x, sfac], move |ctx, g| {
            let xv = ctx.parent_val(0);
            let sv = ctx.parent_val(1);
            let ax = xv.ndim() - 1;
            let dx = g * &sv.broadcast(xv.raw_dim()).unwrap();
            let ds = (g * xv).sum_axis(Axis(ax)).insert_axis(Axis(ax));
            vec![dx, ds]
        })
    }

    // ---- linear algebra ----

    /// 2-D matrix product: [m,k] x [k,n] -> [m,n].
    pub fn matmul(&mut self, a: Value, b: Value) -> Value {
        let av = as2(self.value(a));
        let bv = as2(self.value(b));
        let v = av.dot(&bv).into_dyn();
        self.push_op(v, vec![a, b], |ctx, g| {
            let av = as2(ctx.parent_val(0));
            let bv = as2(ctx.parent_val(1));
            let g2 = as2(g);
            let da = g2.dot(&bv.t()).into_dyn();
            let db = av.t().dot(&g2).into_dyn();
            vec![da, db]
        })
    }

    /// Batched matrix product: [b,m,k] x [b,k,n] -> [b,m,n].
    pub fn bmm(&mut self, a: Value, b: Value) -> Value {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.ndim(), 3);
        assert_eq!(bv.ndim(), 3);
        assert_eq!(av.shape()[0], bv.shape()[0]);
        assert_eq!(av.shape()[2], bv.shape()[1]);
        let (nb, m, _k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let n = bv.shape()[2];
        let mut out = ndarray::Array3::<f64>::zeros((nb, m, n));
        let a3 = as3(av);
        let b3 = as3(bv);
        for i in 0..nb {
            let prod = a3.index_axis(Axis(0), i).dot(&b3.index_axis(Axis(0), i));
            out.index_axis_mut(Axis(0), i).assign(&prod);
        }
        self.push_op(out.into_dyn(), vec![a, b], |ctx, g| {
            let a3 = as3(ctx.parent_val(0));
            let b3 = as3(ctx.parent_val(1));
            let g3 = as3(g);
            let nb = a3.shape()[0];
            let mut da = ndarray::Array3::<f64>::zeros((a3.shape()[0], a3.shape()[1], a3.shape()[2]));
            let mut db = ndarray::Array3::<f64>::zeros((b3.shape()[0], b3.shape()[1], b3.shape()[2]));
            for i in 0..nb {
                let gi = g3.index_axis(Axis(0), i);
                da.index_axis_mut(Axis(0), i)
                    .assign(&gi.dot(&b3.index_axis(Axis(0), i).t()));
                db.index_axis_mut(Axis(0), i)
                    .assign(&a3.index_axis(Axis(0), i).t().dot(&gi));
            }
            vec![da.into_dyn(), db.into_dyn()]
        })
    }

    // ---- gathering / scattering ----

    /// Embedding lookup: table[v, d] indexed by ids[b, p] -> [b, p, d].
    pub fn embedding(&mut self, table: Value, ids: &Array2<usize>) -> Value {
        let tv = as2(self.value(table));
        let (nb, np) = (ids.shape()[0], ids.shape()[1]);
        let d = tv.shape()[1];
        let mut out = ndarray::Array3::<f64>::zeros((nb, np, d));
        for b in 0..nb {
            for p in 0..np {
                out.slice_mut(s![b, p, ..]).assign(&tv.row(ids[[b, p]]));
            }
        }
        let ids = ids.clone();
        let vshape = self.value(table).raw_dim();
        self.push_op(out.into_dyn(), vec![table], move |_, g| {
            let g3 = as3(g);
            let mut dt = Array2::<f64>::zeros((vshape[0], vshape[1]));
            for b in 0..ids.shape()[0] {
                for p in 0..ids.shape()[1] {
                    let mut row = dt.row_mut(ids[[b, p]]);
                    row += &g3.slice(s![b, p, ..]);
                }
            }
            vec![dt.into_dyn()]
        })
    }

    /// Row gather along time: y[b, t, :] = x[b, idx[b, t], :].
    ///
    /// Serves both the length regulator (phoneme index expansion) and
    /// within-length sequence reversal for bidirectional recurrences.
    pub fn gather_time(&mut self, x: Value, idx: &Array2<usize>) -> Value {
        let xv = as3(self.value(x));
        let (nb, d) = (xv.shape()[0], xv.shape()[2]);
        assert_eq!(nb, idx.shape()[0]);
        let tout = idx.shape()[1];
        let mut out = ndarray::Array3::<f64>::zeros((nb, tout, d));
        for b in 0..nb {
            for t in 0..tout {
                out.slice_mut(s![b, t, ..]).assign(&xv.slice(s![b, idx[[b, t]], ..]));
            }
        }
        let idx = idx.clone();
        let xdim = self.value(x).raw_dim();
        self.push_op(out.into_dyn(), vec![x], move |_, g| {
            let g3 = as3(g);
            let mut dx = ArrayD::<f64>::zeros(xdim.clone());
            for b in 0..idx.shape()[0] {
                for t in 0..idx.shape()[1] {
                    let mut row = dx.slice_mut(s![b, idx[[b, t]], ..]);
                    row += &g3.slice(s![b, t, ..]);
                }
            }
            vec![dx]
        })
    }

    /// Select one time step per batch item: y[b, :] = x[b, idx[b], :].
    pub fn select_time(&mut self, x: Value, idx: &[usize]) -> Value {
        let xv = as3(self.value(x));
        let (nb, d) = (xv.shape()[0], xv.shape()[2]);
        assert_eq!(nb, idx.len());
        let mut out = Array2::<f64>::zeros((nb, d));
        for b in 0..nb {
            out.row_mut(b).assign(&xv.slice(s![b, idx[b], ..]));
        }
        let idx = idx.to_vec();
        let xdim = self.value(x).raw_dim();
        self.push_op(out.into_dyn(), vec![x], move |_, g| {
            let g2 = as2(g);
            let mut dx = ArrayD::<f64>::zeros(xdim.clone());
            for b in 0..idx.len() {
                let mut row = dx.slice_mut(s![b, idx[b], ..]);
                row += &g2.row(b);
            }
            vec![dx]
        })
    }

    /// Single time step of a [b, t, d] tensor: y = x[:, t, :].
    pub fn slice_time(&mut self, x: Value, t: usize) -> Value {
        let xv = as3(self.value(x));
        let v = xv.index_axis(Axis(1), t).to_owned().into_dyn();
        let xdim = self.value(x).raw_dim();
        self.push_op(v, vec![x], move |_, g| {
            let mut dx = ArrayD::<f64>::zeros(xdim.clone());
            let g2 = as2(g);
            dx.slice_mut(s![.., t, ..]).assign(&g2);
            vec![dx]
        })
    }

    /// Stack [b, d] slices into [b, t, d] (inverse of `slice_time`).
    pub fn stack_time(&mut self, xs: &[Value]) -> Value {
        assert!(!xs.is_empty());
        let first = as2(self.value(xs[0]));
        let (nb, d) = (first.shape()[0], first.shape()[1]);
        let t = xs.len();
        let mut out = ndarray::Array3::<f64>::zeros((nb, t, d));
        for (i, x) in xs.iter().enumerate() {
            out.index_axis_mut(Axis(1), i).assign(&as2(self.value(*x)));
        }
        self.push_op(out.into_dyn(), xs.to_vec(), move |_, g| {
            let g3 = as3(g);
            (0..t).map(|i| g3.index_axis(Axis(1), i).to_owned().into_dyn()).collect()
        })
    }

    /// Per-row class pick: y[b] = x[b, ids[b]] for x of shape [b, k].
    pub fn gather_class(&mut self, x: Value, ids: &[usize]) -> Value {
        let xv = as2(self.value(x));
        let nb = xv.shape()[0];
        assert_eq!(nb, ids.len());
        let v = Array1::from_iter((0..nb).map(|b| xv[[b, ids[b]]])).into_dyn();
        let ids = ids.to_vec();
        let xdim = self.value(x).raw_dim();
        self.push_op(v, vec![x], move |_, g| {
            let mut dx = ArrayD::<f64>::zeros(xdim.clone());
            let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
            for b in 0..ids.len() {
                dx[[b, ids[b]]] += g1[b];
            }
            vec![dx]
        })
    }

    // ---- fused layers ----

    /// Same-padded 1-D convolution over time.
    /// x: [b, t, c_in], w: [k, c_in, c_out] (k odd), bias: [c_out].
    pub fn conv1d_same(&mut self, x: Value, w: Value, bias: Value) -> Value {
        let xv = as3(self.value(x));
        let wv = as3(self.value(w));
        let (nb, t, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (k, cout) = (wv.shape()[0], wv.shape()[2]);
        assert_eq!(wv.shape()[1], cin);
        assert_eq!(k % 2, 1, "conv1d_same requires odd kernel");
        assert_eq!(self.value(bias).shape(), [cout]);
        let half = (k / 2) as isize;
        let mut out = ndarray::Array3::<f64>::zeros((nb, t, cout));
        out += &self
            .value(bias)
            .broadcast(IxDyn(&[nb, t, cout]))
            .unwrap()
            .view()
            .into_dimensionality::<Ix3>()
            .unwrap();
        for kk in 0..k {
            let shift = kk as isize - half;
            let (t0, t1) = valid_range(t, shift);
            if t0 >= t1 {
                continue;
            }
            // rows [t0, t1) of the output read rows [t0+shift, t1+shift) of x
            let xs = xv.slice(s![.., (t0 as isize + shift) as usize..(t1 as isize + shift) as usize, ..]);
            let xs2 = xs
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((nb * (t1 - t0), cin))
                .unwrap();
            let prod = xs2.dot(&wv.index_axis(Axis(0), kk)); // [nb*(t1-t0), cout]
            let prod3 = prod.into_shape_with_order((nb, t1 - t0, cout)).unwrap();
            let mut dst = out.slice_mut(s![.., t0..t1, ..]);
            dst += &prod3;
        }
        self.push_op(out.into_dyn(), vec![x, w, bias], move |ctx, g| {
            let xv = as3(ctx.parent_val(0));
            let wv = as3(ctx.parent_val(1));
            let g3 = as3(g);
            let (nb, t, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
            let (k, cout) = (wv.shape()[0], wv.shape()[2]);
            let half = (k / 2) as isize;
            let mut dx = ndarray::Array3::<f64>::zeros((nb, t, cin));
            let mut dw = ndarray::Array3::<f64>::zeros((k, cin, cout));
            let db = g3
                .to_owned()
                .into_shape_with_order((nb * t, cout))
                .unwrap()
                .sum_axis(Axis(0));
            for kk in 0..k {
                let shift = kk as isize - half;
                let (t0, t1) = valid_range(t, shift);
                if t0 >= t1 {
                    continue;
                }
                let xs = xv.slice(s![.., (t0 as isize + shift) as usize..(t1 as isize + shift) as usize, ..]);
                let xs2 = xs
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((nb * (t1 - t0), cin))
                    .unwrap();
                let gs = g3.slice(s![.., t0..t1, ..]);
                let gs2 = gs
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((nb * (t1 - t0), cout))
                    .unwrap();
                dw.index_axis_mut(Axis(0), kk).assign(&xs2.t().dot(&gs2));
                let dxs = gs2.dot(&wv.index_axis(Axis(0), kk).t()); // [nb*(t1-t0), cin]
                let dxs3 = dxs.into_shape_with_order((nb, t1 - t0, cin)).unwrap();
                let mut dst =
                    dx.slice_mut(s![.., (t0 as isize + shift) as usize..(t1 as isize + shift) as usize, ..]);
                dst += &dxs3;
            }
            vec![dx.into_dyn(), dw.into_dyn(), db.into_dyn()]
        })
    }

    /// Layer normalization over the last axis with learned gain/offset.
    pub fn layer_norm(&mut self, x: Value, gamma: Value, beta: Value, eps: f64) -> Value {
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap();
        assert_eq!(self.value(gamma).shape(), [d]);
        assert_eq!(self.value(beta).shape(), [d]);
        let x2 = flat2(xv, d);
        let gam = self.value(gamma).view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let bet = self.value(beta).view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let mut out = Array2::<f64>::zeros(x2.raw_dim());
        for (mut orow, xrow) in out.rows_mut().into_iter().zip(x2.rows()) {
            let mu = xrow.mean().unwrap();
            let var = xrow.mapv(|e| (e - mu) * (e - mu)).mean().unwrap();
            let rstd = 1.0 / (var + eps).sqrt();
            for i in 0..d {
                orow[i] = (xrow[i] - mu) * rstd * gam[i] + bet[i];
            }
        }
        let v = out.into_shape_with_order(xv.raw_dim()).unwrap().into_dyn();
        self.push_op(v, vec![x, gamma, beta], move |ctx, g| {
            let xv = ctx.parent_val(0);
            let gamv = ctx.parent_val(1).view().into_dimensionality::<Ix1>().unwrap();
            let d = *xv.shape().last().unwrap();
            let x2 = flat2(xv, d);
            let g2 = flat2(g, d);
            let mut dx = Array2::<f64>::zeros(x2.raw_dim());
            let mut dgam = Array1::<f64>::zeros(d);
            let mut dbet = Array1::<f64>::zeros(d);
            for r in 0..x2.shape()[0] {
                let xrow = x2.row(r);
                let grow = g2.row(r);
                let mu = xrow.mean().unwrap();
                let var = xrow.mapv(|e| (e - mu) * (e - mu)).mean().unwrap();
                let rstd = 1.0 / (var + eps).sqrt();
                let xhat: Array1<f64> = xrow.mapv(|e| (e - mu) * rstd);
                let gh: Array1<f64> = (0..d).map(|i| grow[i] * gamv[i]).collect();
                let mean_gh = gh.mean().unwrap();
                let mean_gh_xhat = (0..d).map(|i| gh[i] * xhat[i]).sum::<f64>() / d as f64;
                let mut dxrow = dx.row_mut(r);
                for i in 0..d {
                    dxrow[i] = rstd * (gh[i] - mean_gh - xhat[i] * mean_gh_xhat);
                    dgam[i] += grow[i] * xhat[i];
                    dbet[i] += grow[i];
                }
            }
            vec![
                dx.into_shape_with_order(xv.raw_dim()).unwrap().into_dyn(),
                dgam.into_dyn(),
                dbet.into_dyn(),
            ]
        })
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

/// Output row range [t0, t1) whose shifted source rows stay inside [0, t).
fn valid_range(t: usize, shift: isize) -> (usize, usize) {
    let t0 = if shift < 0 { (-shift) as usize } else { 0 };
    let t1 = if shift > 0 { t.saturating_sub(shift as usize) } else { t };
    (t0, t1.max(t0))
}

/// View an arbitrary-rank tensor as [rows, d] where d is the last axis.
fn flat2(a: &Arr, d: usize) -> Array2<f64> {
    let rows = a.len() / d;
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, d))
        .unwrap()
}

fn as2(a: &Arr) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("rank-2 tensor expected")
}

fn as3(a: &Arr) -> ndarray::ArrayView3<'_, f64> {
    a.view().into_dimensionality::<Ix3>().expect("rank-3 tensor expected")
}

fn softmax_rows(x: &Arr) -> Arr {
    let d = *x.shape().last().unwrap();
    let mut out = flat2(x, d);
    for mut row in out.rows_mut() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|e| (e - mx).exp());
        let s: f64 = row.sum();
        row.mapv_inplace(|e| e / s);
    }
    out.into_shape_with_order(x.raw_dim()).unwrap().into_dyn()
}
