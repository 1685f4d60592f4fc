use std::collections::BTreeMap;

use super::array::{Array, Real};
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Named parameter arrays. Iteration order is lexicographic by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    params: BTreeMap<String, Array<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    /// Inserts a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Array<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Array<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array<T>> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Array<T>> {
        self.get(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn remove(&mut self, name: &str) -> Option<Array<T>> {
        self.params.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(Array::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    pub fn zeros_like(&self) -> Self {
        Self { params: self.params.iter().map(|(k, v)| (k.clone(), Array::zeros(v.shape()))).collect() }
    }

    /// Same names and shapes.
    pub fn same_layout<U: Real>(&self, other: &ParamSet<U>) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    /// Parameters whose name starts with `prefix`, keeping full names.
    pub fn filter_prefix(&self, prefix: &str) -> Self {
        Self {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Adds all entries of `other`; names must not collide.
    pub fn extend(&mut self, other: ParamSet<T>) -> Result<()> {
        for (k, v) in other.params {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// Places every parameter on `tape`, trainable or not.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        Bound { vars: self.params.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable))).collect() }
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients for every bound parameter, in name order.
    pub fn gradients<T: Real>(&self, grads: &mut Gradients<T>) -> Result<ParamSet<T>> {
        let mut out = ParamSet::new();
        for (name, &v) in &self.vars {
            let g = grads
                .take(v)
                .ok_or_else(|| Error::Config(format!("parameter `{name}` was bound without gradients")))?;
            out.insert(name.clone(), g)?;
        }
        Ok(out)
    }
}
