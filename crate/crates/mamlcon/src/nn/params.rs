//! Named-tensor collections: model weights and their gradients.
//!
//! A [`ParameterSet`] is the unit of copying, adapting, and meta-updating;
//! every algorithm in this crate passes parameter sets by value and never
//! mutates a caller's copy. Iteration order is insertion order and is part
//! of the contract: two sets built from the same model configuration always
//! agree on names, shapes, and order.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Ordered map of parameter name to weight tensor.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterSet {
    entries: IndexMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a named tensor; duplicate names are rejected.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter '{name}'")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    /// Like [`get`](Self::get) but failing with [`Error::UnknownParameter`].
    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// True when `other` has the same names, order, and shapes.
    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((an, at), (bn, bt))| an == bn && at.shape() == bt.shape())
    }
}

impl FromIterator<(String, Tensor)> for ParameterSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        let mut set = ParameterSet::new();
        for (name, tensor) in iter {
            set.insert(name, tensor).expect("unique parameter names");
        }
        set
    }
}

/// Ordered map of parameter name to gradient tensor, mirroring a
/// [`ParameterSet`] name-for-name and shape-for-shape.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GradientSet {
    entries: IndexMap<String, Tensor>,
}

impl GradientSet {
    /// All-zero gradients with the layout of `params`.
    pub fn zeros_like(params: &ParameterSet) -> Self {
        GradientSet {
            entries: params
                .iter()
                .map(|(name, t)| (name.to_string(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when this gradient set mirrors `params`.
    pub fn mirrors(&self, params: &ParameterSet) -> bool {
        self.entries.len() == params.len()
            && self
                .entries
                .iter()
                .zip(params.iter())
                .all(|((gn, gt), (pn, pt))| gn == pn && gt.shape() == pt.shape())
    }

    /// Elementwise accumulate `other` into `self`.
    pub fn accumulate(&mut self, other: &GradientSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape("gradient accumulate", "entry count mismatch"));
        }
        for ((an, at), (bn, bt)) in self.entries.iter_mut().zip(&other.entries) {
            if an != bn || at.shape() != bt.shape() {
                return Err(Error::shape(
                    "gradient accumulate",
                    format!("layout mismatch at '{an}' vs '{bn}'"),
                ));
            }
            for (a, b) in at.data_mut().iter_mut().zip(bt.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Zero the gradients of the named parameters, leaving others intact.
    pub fn zero_names<'a>(&mut self, names: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for name in names {
            let t = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            t.data_mut().fill(0.0);
        }
        Ok(())
    }

    /// Largest absolute entry, 0.0 when empty.
    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data())
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

impl FromIterator<(String, Tensor)> for GradientSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        GradientSet {
            entries: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("a", Tensor::from_flat(vec![1.0, 2.0])).unwrap();
        p.insert("b", Tensor::zeros(&[2, 2])).unwrap();
        p
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = sample();
        assert!(p.insert("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn iteration_order_is_insertion_order() {
        let p = sample();
        let names: Vec<_> = p.names().collect();
        assert_eq!(names, vec!["a", "b"]);
    }

    #[test]
    fn zeros_like_mirrors_layout() {
        let p = sample();
        let g = GradientSet::zeros_like(&p);
        assert!(g.mirrors(&p));
        assert_eq!(g.get("b").unwrap().shape(), &[2, 2]);
    }

    #[test]
    fn accumulate_adds_elementwise() {
        let p = sample();
        let mut g = GradientSet::zeros_like(&p);
        let mut h = GradientSet::zeros_like(&p);
        h.get_mut("a").unwrap().data_mut()[0] = 3.0;
        g.accumulate(&h).unwrap();
        g.accumulate(&h).unwrap();
        assert_eq!(g.get("a").unwrap().data()[0], 6.0);
    }
}
