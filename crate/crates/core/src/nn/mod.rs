//! Minimal reverse-mode autodiff over 2-D arrays, plus the Adam optimizer
//! and the versioned checkpoint format shared by both trainable models.
//!
//! Networks here are small enough that a tape of eagerly evaluated `Array2`
//! ops is the whole story: every op stores a closure that maps the output
//! gradient to its parents' gradients. Dilated convolutions decompose into
//! matrix products, so the hot path is `ndarray`'s matrixmultiply kernel.

mod adam;
mod checkpoint;
mod graph;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use graph::{Graph, Var};

use crate::scalar::Scalar;
use ndarray::Array2;
use rand::Rng;
use std::rc::Rc;

/// Handle to one named parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Owned collection of model parameters. Values are reference-counted so a
/// training-step graph can borrow them without copying.
#[derive(Debug)]
pub struct ParamStore<S: Scalar> {
    entries: Vec<ParamEntry<S>>,
}

#[derive(Debug)]
struct ParamEntry<S: Scalar> {
    name: String,
    value: Rc<Array2<S>>,
    trainable: bool,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<S>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, value: Rc::new(value), trainable });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let v = Array2::from_shape_fn((rows, cols), |_| S::of_f64(rng.gen_range(-bound..bound)));
        self.add(name, v, true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<S> {
        &self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn set(&mut self, id: ParamId, value: Array2<S>) {
        assert_eq!(self.entries[id.0].value.dim(), value.dim(), "shape change on set");
        self.entries[id.0].value = Rc::new(value);
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Insert this parameter into a graph as a leaf variable.
    pub fn bind(&self, graph: &mut Graph<S>, id: ParamId) -> Var {
        graph.param(id.0, Rc::clone(&self.entries[id.0].value))
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Array2<S> {
        Rc::make_mut(&mut self.entries[id.0].value)
    }
}

/// Per-slot gradients produced by [`Graph::backward`].
pub struct Gradients<S: Scalar> {
    pub by_slot: Vec<Option<Array2<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: ParamId) -> Option<&Array2<S>> {
        self.by_slot.get(id.0).and_then(|g| g.as_ref())
    }
}

/// Relative error between analytic and finite-difference gradients of
/// `loss_fn` with respect to parameter `id`, probing every entry.
///
/// Central differences with the given step; intended for `S = f64`.
pub fn gradient_check<S: Scalar>(
    store: &mut ParamStore<S>,
    id: ParamId,
    step: f64,
    mut loss_fn: impl FnMut(&ParamStore<S>) -> (Graph<S>, Var),
) -> f64 {
    let (mut graph, loss) = loss_fn(store);
    let grads = graph.backward(loss, store.len());
    let analytic = grads
        .get(id)
        .cloned()
        .unwrap_or_else(|| Array2::zeros(store.get(id).dim()));

    let dim = store.get(id).dim();
    let mut worst: f64 = 0.0;
    for r in 0..dim.0 {
        for c in 0..dim.1 {
            let orig = store.get(id)[[r, c]];
            store.value_mut(id)[[r, c]] = orig + S::of_f64(step);
            let (gp, lp) = loss_fn(store);
            let f_plus = gp.value(lp)[[0, 0]].as_f64();
            store.value_mut(id)[[r, c]] = orig - S::of_f64(step);
            let (gm, lm) = loss_fn(store);
            let f_minus = gm.value(lm)[[0, 0]].as_f64();
            store.value_mut(id)[[r, c]] = orig;

            let fd = (f_plus - f_minus) / (2.0 * step);
            let an = analytic[[r, c]].as_f64();
            let denom = an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max((an - fd).abs() / denom);
        }
    }
    worst
}
