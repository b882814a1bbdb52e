//! The autodiff tape: eagerly evaluated ops over `Array2<S>` with stored
//! backward closures.

use crate::scalar::Scalar;
use ndarray::{s, Array2, Axis};
use std::rc::Rc;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackwardFn<S> = Box<dyn Fn(&Array2<S>) -> Vec<Array2<S>>>;

struct Node<S: Scalar> {
    value: Rc<Array2<S>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<S>>,
    /// Parameter slot for leaves bound from a `ParamStore`.
    param_slot: Option<usize>,
}

/// Wengert list of eagerly evaluated array ops.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(
        &mut self,
        value: Array2<S>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<S>>,
    ) -> Var {
        self.nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
            param_slot: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<S>) -> Var {
        self.push(value, vec![], None)
    }

    pub(crate) fn param(&mut self, slot: usize, value: Rc<Array2<S>>) -> Var {
        self.nodes.push(Node { value, parents: vec![], backward: None, param_slot: Some(slot) });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<S> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.value(v).dim(), (1, 1));
        self.value(v)[[0, 0]].as_f64()
    }

    fn rc(&self, v: Var) -> Rc<Array2<S>> {
        Rc::clone(&self.nodes[v.0].value)
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &*self.nodes[a.0].value + &*self.nodes[b.0].value;
        self.push(value, vec![a.0, b.0], Some(Box::new(|g| vec![g.clone(), g.clone()])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &*self.nodes[a.0].value - &*self.nodes[b.0].value;
        self.push(value, vec![a.0, b.0], Some(Box::new(|g| vec![g.clone(), g.mapv(|x| -x)])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        let value = &*av * &*bv;
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(move |g| vec![g * &*bv, g * &*av])),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| -x);
        self.push(value, vec![a.0], Some(Box::new(|g| vec![g.mapv(|x| -x)])))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let cs = S::of_f64(c);
        let value = self.nodes[a.0].value.mapv(|x| x * cs);
        self.push(value, vec![a.0], Some(Box::new(move |g| vec![g.mapv(|x| x * cs)])))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let cs = S::of_f64(c);
        let value = self.nodes[a.0].value.mapv(|x| x + cs);
        self.push(value, vec![a.0], Some(Box::new(|g| vec![g.clone()])))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.exp());
        let out = Rc::new(value);
        let captured = Rc::clone(&out);
        self.nodes.push(Node {
            value: out,
            parents: vec![a.0],
            backward: Some(Box::new(move |g| vec![g * &*captured])),
            param_slot: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// `ln(x + eps)` elementwise.
    pub fn ln_eps(&mut self, a: Var, eps: f64) -> Var {
        let av = self.rc(a);
        let e = S::of_f64(eps);
        let value = av.mapv(|x| (x + e).ln());
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g| {
                let mut out = g.clone();
                out.zip_mut_with(&av, |gi, &x| *gi = *gi / (x + e));
                vec![out]
            })),
        )
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        let value = av.mapv(|x| x.cos());
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g| {
                let mut out = g.clone();
                out.zip_mut_with(&av, |gi, &x| *gi = -*gi * x.sin());
                vec![out]
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = S::one();
        let value = self.nodes[a.0].value.mapv(|x| one / (one + (-x).exp()));
        let out = Rc::new(value);
        let captured = Rc::clone(&out);
        self.nodes.push(Node {
            value: out,
            parents: vec![a.0],
            backward: Some(Box::new(move |g| {
                let mut o = g.clone();
                o.zip_mut_with(&captured, |gi, &y| *gi = *gi * y * (S::one() - y));
                vec![o]
            })),
            param_slot: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        let value = av.mapv(|x| {
            // stable: max(x, 0) + ln1p(exp(-|x|))
            x.max(S::zero()) + (-x.abs()).exp().ln_1p()
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g| {
                let mut out = g.clone();
                out.zip_mut_with(&av, |gi, &x| {
                    *gi = *gi * (S::one() / (S::one() + (-x).exp()));
                });
                vec![out]
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        let value = av.mapv(|x| x.max(S::zero()));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g| {
                let mut out = g.clone();
                out.zip_mut_with(&av, |gi, &x| {
                    if x <= S::zero() {
                        *gi = S::zero();
                    }
                });
                vec![out]
            })),
        )
    }

    /// Per-channel parametric ReLU; `alpha` is `R x 1`.
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Var {
        let xv = self.rc(x);
        let av = self.rc(alpha);
        assert_eq!(xv.nrows(), av.nrows());
        assert_eq!(av.ncols(), 1);
        let mut value = (*xv).clone();
        for (mut row, &a) in value.axis_iter_mut(Axis(0)).zip(av.column(0)) {
            row.mapv_inplace(|v| if v > S::zero() { v } else { a * v });
        }
        let xv2 = Rc::clone(&xv);
        let av2 = Rc::clone(&av);
        self.push(
            value,
            vec![x.0, alpha.0],
            Some(Box::new(move |g| {
                let mut dx = g.clone();
                let mut da = Array2::zeros((av2.nrows(), 1));
                for r in 0..xv2.nrows() {
                    let a = av2[[r, 0]];
                    let mut acc = S::zero();
                    for c in 0..xv2.ncols() {
                        let xval = xv2[[r, c]];
                        if xval > S::zero() {
                            // dx already g
                        } else {
                            acc += g[[r, c]] * xval;
                            dx[[r, c]] = g[[r, c]] * a;
                        }
                    }
                    da[[r, 0]] = acc;
                }
                vec![dx, da]
            })),
        )
    }

    // ---- broadcasts ----

    /// Add a column vector (`R x 1`) to every column of `x` (`R x C`).
    pub fn add_col(&mut self, x: Var, v: Var) -> Var {
        let xv = self.rc(x);
        let vv = self.rc(v);
        assert_eq!(xv.nrows(), vv.nrows());
        assert_eq!(vv.ncols(), 1);
        let mut value = (*xv).clone();
        for (mut row, &b) in value.axis_iter_mut(Axis(0)).zip(vv.column(0)) {
            row.mapv_inplace(|a| a + b);
        }
        self.push(
            value,
            vec![x.0, v.0],
            Some(Box::new(move |g| {
                let dv = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![g.clone(), dv]
            })),
        )
    }

    /// Multiply every column of `x` (`R x C`) by a column vector (`R x 1`).
    pub fn mul_col(&mut self, x: Var, v: Var) -> Var {
        let xv = self.rc(x);
        let vv = self.rc(v);
        assert_eq!(xv.nrows(), vv.nrows());
        assert_eq!(vv.ncols(), 1);
        let mut value = (*xv).clone();
        for (mut row, &b) in value.axis_iter_mut(Axis(0)).zip(vv.column(0)) {
            row.mapv_inplace(|a| a * b);
        }
        self.push(
            value,
            vec![x.0, v.0],
            Some(Box::new(move |g| {
                let mut dx = g.clone();
                for (mut row, &b) in dx.axis_iter_mut(Axis(0)).zip(vv.column(0)) {
                    row.mapv_inplace(|a| a * b);
                }
                let dv = (g * &*xv).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![dx, dv]
            })),
        )
    }

    /// Multiply every row of `x` (`R x C`) by a row vector (`1 x C`).
    pub fn mul_row(&mut self, x: Var, v: Var) -> Var {
        let xv = self.rc(x);
        let vv = self.rc(v);
        assert_eq!(xv.ncols(), vv.ncols());
        assert_eq!(vv.nrows(), 1);
        let value = &*xv * &vv.broadcast(xv.dim()).unwrap();
        self.push(
            value,
            vec![x.0, v.0],
            Some(Box::new(move |g| {
                let dx = g * &vv.broadcast(g.dim()).unwrap();
                let dv = (g * &*xv).sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![dx, dv]
            })),
        )
    }

    /// Multiply an array by a `1 x 1` scalar variable.
    pub fn mul_scalar_var(&mut self, x: Var, scalar: Var) -> Var {
        let xv = self.rc(x);
        let sv = self.rc(scalar);
        assert_eq!(sv.dim(), (1, 1));
        let c = sv[[0, 0]];
        let value = xv.mapv(|a| a * c);
        self.push(
            value,
            vec![x.0, scalar.0],
            Some(Box::new(move |g| {
                let dx = g.mapv(|a| a * c);
                let ds = (g * &*xv).sum();
                vec![dx, Array2::from_elem((1, 1), ds)]
            })),
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        let value = av.dot(&*bv);
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(move |g| {
                let da = g.dot(&bv.t());
                let db = av.t().dot(g);
                vec![da, db]
            })),
        )
    }

    // ---- reductions & structure ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let dim = self.nodes[a.0].value.dim();
        let value = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g| vec![Array2::from_elem(dim, g[[0, 0]])])),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Subtract the global mean of all entries (used on `1 x N` signals).
    pub fn mean_sub(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        let n = S::of_usize(av.len());
        let mean = av.sum() / n;
        let value = av.mapv(|x| x - mean);
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g| {
                let gm = g.sum() / n;
                vec![g.mapv(|x| x - gm)]
            })),
        )
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        assert_eq!(av.ncols(), bv.ncols());
        let ra = av.nrows();
        let mut value = Array2::zeros((ra + bv.nrows(), av.ncols()));
        value.slice_mut(s![..ra, ..]).assign(&av);
        value.slice_mut(s![ra.., ..]).assign(&bv);
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(move |g| {
                let da = g.slice(s![..ra, ..]).to_owned();
                let db = g.slice(s![ra.., ..]).to_owned();
                vec![da, db]
            })),
        )
    }

    pub fn crop_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.rc(a);
        let full = av.dim();
        let value = av.slice(s![.., start..start + len]).to_owned();
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g| {
                let mut da = Array2::zeros(full);
                da.slice_mut(s![.., start..start + len]).assign(g);
                vec![da]
            })),
        )
    }

    /// Normalize each row to unit L2 norm; all-zero rows pass through.
    pub fn row_l2_normalize(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        let floor = S::of_f64(1e-30);
        let norms: Vec<S> = av
            .axis_iter(Axis(0))
            .map(|row| row.iter().map(|&x| x * x).sum::<S>().sqrt().max(floor))
            .collect();
        let mut value = (*av).clone();
        for (mut row, &n) in value.axis_iter_mut(Axis(0)).zip(&norms) {
            row.mapv_inplace(|x| x / n);
        }
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g| {
                let mut dx = Array2::zeros(av.dim());
                for r in 0..av.nrows() {
                    let n = norms[r];
                    let dot: S = (0..av.ncols()).map(|c| g[[r, c]] * av[[r, c]]).sum();
                    let n3 = n * n * n;
                    for c in 0..av.ncols() {
                        dx[[r, c]] = g[[r, c]] / n - av[[r, c]] * dot / n3;
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Embedding lookup: row `idx` of `table` as a column vector `D x 1`.
    pub fn select_row(&mut self, table: Var, idx: usize) -> Var {
        let tv = self.rc(table);
        let d = tv.ncols();
        let dim = tv.dim();
        let mut value = Array2::zeros((d, 1));
        for c in 0..d {
            value[[c, 0]] = tv[[idx, c]];
        }
        self.push(
            value,
            vec![table.0],
            Some(Box::new(move |g| {
                let mut dt = Array2::zeros(dim);
                for c in 0..dim.1 {
                    dt[[idx, c]] = g[[c, 0]];
                }
                vec![dt]
            })),
        )
    }

    // ---- convolutions ----

    /// Causal dilated 1-D convolution over frames.
    ///
    /// `x` is `C_in x T`; `w` is `C_out x (C_in * k)` with tap `j` occupying
    /// columns `[j*C_in, (j+1)*C_in)`; `bias` is `C_out x 1`. The input is
    /// left-padded by `(k-1)*dilation` so frame `t` sees frames `<= t`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var, k: usize, dilation: usize) -> Var {
        let xv = self.rc(x);
        let wv = self.rc(w);
        let c_in = xv.nrows();
        let t = xv.ncols();
        assert_eq!(wv.ncols(), c_in * k, "weight columns must be C_in * k");
        let pad = (k - 1) * dilation;

        let mut cols = Array2::zeros((c_in * k, t));
        for j in 0..k {
            for tt in 0..t {
                // padded index tt + j*dilation maps to input tt + j*d - pad
                let src = (tt + j * dilation) as isize - pad as isize;
                if src >= 0 {
                    for c in 0..c_in {
                        cols[[j * c_in + c, tt]] = xv[[c, src as usize]];
                    }
                }
            }
        }
        let cols = Rc::new(cols);
        let value = wv.dot(&*cols);
        let pre = self.push(
            value,
            vec![x.0, w.0],
            Some(Box::new(move |g| {
                let dw = g.dot(&cols.t());
                let dcols = wv.t().dot(g);
                let mut dx = Array2::zeros((c_in, t));
                for j in 0..k {
                    for tt in 0..t {
                        let src = (tt + j * dilation) as isize - pad as isize;
                        if src >= 0 {
                            for c in 0..c_in {
                                dx[[c, src as usize]] += dcols[[j * c_in + c, tt]];
                            }
                        }
                    }
                }
                vec![dx, dw]
            })),
        );
        self.add_col(pre, bias)
    }

    /// Strided correlation of a `1 x N` waveform against `K x L` kernels,
    /// producing `K x F` with `F = (N - L)/stride + 1`.
    pub fn encode_strided(&mut self, wave: Var, kernels: Var, stride: usize) -> Var {
        let wv = self.rc(wave);
        let kv = self.rc(kernels);
        assert_eq!(wv.nrows(), 1);
        let n = wv.ncols();
        let l = kv.ncols();
        assert!(n >= l, "waveform shorter than kernel");
        let frames = (n - l) / stride + 1;

        let mut windows = Array2::zeros((l, frames));
        for f in 0..frames {
            for t in 0..l {
                windows[[t, f]] = wv[[0, f * stride + t]];
            }
        }
        let windows = Rc::new(windows);
        let value = kv.dot(&*windows);
        self.push(
            value,
            vec![wave.0, kernels.0],
            Some(Box::new(move |g| {
                let dk = g.dot(&windows.t());
                let dwin = kv.t().dot(g);
                let mut dw = Array2::zeros((1, n));
                for f in 0..frames {
                    for t in 0..l {
                        dw[[0, f * stride + t]] += dwin[[t, f]];
                    }
                }
                vec![dw, dk]
            })),
        )
    }

    /// Transposed strided convolution (overlap-add): `K x F` features and
    /// `K x L` kernels to a `1 x out_len` waveform.
    pub fn decode_strided(
        &mut self,
        features: Var,
        kernels: Var,
        stride: usize,
        out_len: usize,
    ) -> Var {
        let fv = self.rc(features);
        let kv = self.rc(kernels);
        let frames = fv.ncols();
        let l = kv.ncols();
        let contrib = kv.t().dot(&*fv); // L x F
        let mut value = Array2::zeros((1, out_len));
        for f in 0..frames {
            for t in 0..l {
                let n = f * stride + t;
                if n < out_len {
                    value[[0, n]] += contrib[[t, f]];
                }
            }
        }
        self.push(
            value,
            vec![features.0, kernels.0],
            Some(Box::new(move |g| {
                let mut dcontrib = Array2::zeros((l, frames));
                for f in 0..frames {
                    for t in 0..l {
                        let n = f * stride + t;
                        if n < out_len {
                            dcontrib[[t, f]] = g[[0, n]];
                        }
                    }
                }
                let dk = fv.dot(&dcontrib.t()); // K x L
                let df = kv.dot(&dcontrib); // K x F
                vec![df, dk]
            })),
        )
    }

    // ---- losses ----

    /// Mean cross entropy over columns: `logits` is `C x T`, `targets[t]` is
    /// the reference class per column.
    pub fn cross_entropy_cols(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.rc(logits);
        let t = lv.ncols();
        assert_eq!(targets.len(), t, "target count must match frame count");
        let targets = targets.to_vec();
        let mut loss = S::zero();
        for (tt, &y) in targets.iter().enumerate() {
            let col = lv.column(tt);
            let max = col.iter().cloned().fold(S::neg_infinity(), S::max);
            let lse = max + col.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
            loss += lse - col[y];
        }
        loss /= S::of_usize(t);
        let value = Array2::from_elem((1, 1), loss);
        self.push(
            value,
            vec![logits.0],
            Some(Box::new(move |g| {
                let scale = g[[0, 0]] / S::of_usize(t);
                let mut dl = Array2::zeros(lv.dim());
                for (tt, &y) in targets.iter().enumerate() {
                    let col = lv.column(tt);
                    let max = col.iter().cloned().fold(S::neg_infinity(), S::max);
                    let denom: S = col.iter().map(|&v| (v - max).exp()).sum();
                    for c in 0..lv.nrows() {
                        let p = (lv[[c, tt]] - max).exp() / denom;
                        let delta = if c == y { S::one() } else { S::zero() };
                        dl[[c, tt]] = scale * (p - delta);
                    }
                }
                vec![dl]
            })),
        )
    }

    // ---- backward ----

    /// Reverse pass from a `1 x 1` loss; returns gradients for parameter
    /// slots `0..n_slots`.
    pub fn backward(&mut self, loss: Var, n_slots: usize) -> super::Gradients<S> {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be scalar");
        let mut node_grads: Vec<Option<Array2<S>>> = vec![None; self.nodes.len()];
        node_grads[loss.0] = Some(Array2::from_elem((1, 1), S::one()));
        let mut by_slot: Vec<Option<Array2<S>>> = (0..n_slots).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let Some(grad) = node_grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(slot) = node.param_slot {
                match &mut by_slot[slot] {
                    Some(acc) => *acc += &grad,
                    slot_grad => *slot_grad = Some(grad.clone()),
                }
            }
            if let Some(back) = &node.backward {
                let parent_grads = back(&grad);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (p, pg) in node.parents.clone().into_iter().zip(parent_grads) {
                    match &mut node_grads[p] {
                        Some(acc) => *acc += &pg,
                        entry => *entry = Some(pg),
                    }
                }
            }
        }
        super::Gradients { by_slot }
    }
}
