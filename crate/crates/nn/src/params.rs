use sha2::{Digest, Sha256};

use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor<S>> {
        self.tensors.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Grads<S> {
        Grads(self.tensors.iter().map(|t| vec![S::zero(); t.len()]).collect())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// SHA-256 over names, shapes and little-endian `f64` values.
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Flat view of one scalar, used by finite-difference checks.
    pub fn scalar_mut(&mut self, param: usize, index: usize) -> &mut S {
        &mut self.tensors[param].data_mut()[index]
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Tensor<S>>) -> Self {
        Self { names, tensors }
    }
}

/// Gradients laid out parallel to a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<S>(pub Vec<Vec<S>>);

impl<S: Scalar> Grads<S> {
    pub fn get_mut(&mut self, id: ParamId) -> &mut [S] {
        &mut self.0[id.0]
    }

    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [S], &mut [S]) {
        assert_ne!(a.0, b.0);
        if a.0 < b.0 {
            let (lo, hi) = self.0.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.0.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: S) {
        for g in &mut self.0 {
            for v in g {
                *v *= k;
            }
        }
    }

    pub fn norm(&self) -> S {
        self.0
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<S>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Sums per-sample gradients in order, so the result does not depend on
    /// how the samples were scheduled.
    pub fn sum_ordered(parts: Vec<Self>) -> Option<Self> {
        let mut it = parts.into_iter();
        let mut acc = it.next()?;
        for g in it {
            acc.add_assign(&g);
        }
        Some(acc)
    }
}
