use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Named parameter collection in insertion order.
///
/// Insertion order is the serialization order, so two stores built by the
/// same code path checkpoint identically.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a parameter.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::MissingParameter(name.to_string())),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            out.insert(n, t.cast());
        }
        out
    }

    /// Entries whose name starts with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            if let Some(rest) = n.strip_prefix(prefix) {
                out.insert(rest, t.clone());
            }
        }
        out
    }

    pub fn with_prefix(&self, prefix: &str) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            out.insert(format!("{prefix}{n}"), t.clone());
        }
        out
    }

    pub fn extend(&mut self, other: ParamStore<T>) {
        for (n, t) in other.entries {
            self.insert(n, t);
        }
    }

    pub fn zero_all(&mut self) {
        for (_, t) in self.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Parameter initializers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(1/fan_in)`.
    FanIn,
    Zeros,
}

impl Init {
    pub fn tensor<T: Scalar>(self, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::FanIn => {
                let bound = (1.0 / fan_in.max(1) as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                    .collect();
                Tensor::new(shape, data).expect("shape product matches")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn insert_replaces_in_place() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros(&[2]));
        s.insert("b", Tensor::zeros(&[3]));
        s.insert("a", Tensor::full(&[2], 1.0));
        let names: Vec<_> = s.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(s.get("a").unwrap().data(), &[1.0, 1.0]);
        assert!(matches!(s.get("c"), Err(Error::MissingParameter(_))));
    }

    #[test]
    fn fan_in_init_is_bounded_and_seeded() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a: Tensor<f64> = Init::FanIn.tensor(&[4, 25], 25, &mut r1);
        let b: Tensor<f64> = Init::FanIn.tensor(&[4, 25], 25, &mut r2);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() < 0.2));
    }

    #[test]
    fn prefix_round_trip() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::zeros(&[1]));
        let p = s.with_prefix("speech.");
        assert!(p.contains("speech.w"));
        assert_eq!(p.strip_prefix("speech."), s);
    }
}
