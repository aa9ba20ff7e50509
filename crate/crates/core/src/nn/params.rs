use alloc::string::String;
use alloc::vec::Vec;

use crate::matrix::Matrix;
use crate::real::Real;

/// Which part of the model a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Trainable weights of the main acoustic network.
    Main,
    /// Trainable weights acting on the embeddings.
    Conditioning,
    /// Non-trainable state of the main network (batch-norm running statistics).
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Matrix<T>,
    pub group: ParamGroup,
}

impl<T> Param<T> {
    pub fn is_trainable(&self) -> bool {
        self.group != ParamGroup::Buffer
    }
}

/// Flat, ordered registry of every tensor in a model.
///
/// Order is insertion order and is the order used by checkpoints, the
/// optimizer and the gradient checker.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>, group: ParamGroup) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            group,
        });
        ParamId(self.params.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.params[id.0].value
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars in `group`.
    pub fn count(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.data().len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    group: p.group,
                })
                .collect(),
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`]; buffers have no slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Gradients {
            grads: store
                .iter()
                .map(|p| p.is_trainable().then(|| Matrix::zeros(p.value.rows(), p.value.cols())))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Matrix<T>> {
        self.grads.get_mut(id.0).and_then(Option::as_mut)
    }

    /// Several distinct gradient buffers at once; `None` if any id repeats
    /// or has no gradient slot.
    pub fn disjoint_mut<const N: usize>(&mut self, ids: [ParamId; N]) -> Option<[&mut Matrix<T>; N]> {
        let slots = self.grads.get_disjoint_mut(ids.map(|i| i.0)).ok()?;
        if slots.iter().any(|s| s.is_none()) {
            return None;
        }
        Some(slots.map(|s| s.as_mut().expect("checked above")))
    }

    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> Option<(&mut Matrix<T>, &mut Matrix<T>)> {
        self.disjoint_mut([a, b]).map(|[x, y]| (x, y))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&Matrix<T>>> {
        self.grads.iter().map(Option::as_ref)
    }

    pub(crate) fn zero_where(&mut self, store: &ParamStore<T>, mut pred: impl FnMut(ParamGroup) -> bool) {
        for (g, p) in self.grads.iter_mut().zip(store.iter()) {
            if let Some(g) = g {
                if pred(p.group) {
                    g.data_mut().iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
    }
}
