use std::collections::HashMap;

use crate::error::{arg_err, Result};
use crate::{Scalar, Tensor};

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S = f32> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Adds a parameter and returns its slot. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(arg_err("param_store", format!("duplicate parameter `{name}`")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: usize) -> &Tensor<S> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor<S> {
        &mut self.values[id]
    }

    pub fn values(&self) -> &[Tensor<S>] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalars across all parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_names() {
        let mut p = ParamStore::<f32>::new();
        assert_eq!(p.insert("a", Tensor::zeros([2])).unwrap(), 0);
        assert!(p.insert("a", Tensor::zeros([2])).is_err());
        assert_eq!(p.insert("b", Tensor::zeros([3])).unwrap(), 1);
        assert_eq!(p.numel(), 5);
        assert_eq!(p.id("b"), Some(1));
    }
}
