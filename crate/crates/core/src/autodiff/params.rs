use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Insertion-ordered map from parameter name to tensor. Used both for model
/// parameters and for their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensors<T> {
    map: IndexMap<String, Tensor<T>>,
}

pub type ParamStore<T> = NamedTensors<T>;
pub type GradStore<T> = NamedTensors<T>;

impl<T: Scalar> Default for NamedTensors<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> NamedTensors<T> {
    pub fn new() -> Self {
        Self { map: IndexMap::new() }
    }

    /// Insert a new entry; duplicate names are a contract error.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.map.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replace an existing entry, keeping its position. Dims must match.
    pub fn set(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.dims() != t.dims() {
            return Err(crate::error::shape_err(
                "param set",
                format!("`{name}` {:?} vs {:?}", slot.dims(), t.dims()),
            ));
        }
        *slot = t;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Same names and dims, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.dims())))
                .collect(),
        }
    }

    /// All entries concatenated in store order, as double precision.
    pub fn flatten(&self) -> Vec<f64> {
        self.map.values().flat_map(|t| t.to_f64_vec()).collect()
    }

    pub fn norm2(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }

    /// Entrywise sum with a store of identical layout.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.map.len() != other.map.len() {
            return Err(Error::Contract("stores differ in length".into()));
        }
        let mut out = Self::new();
        for ((ka, a), (kb, b)) in self.map.iter().zip(&other.map) {
            if ka != kb || a.dims() != b.dims() {
                return Err(Error::Contract(format!("store layout differs at `{ka}`/`{kb}`")));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            out.map.insert(ka.clone(), Tensor::new(a.dims(), data)?);
        }
        Ok(out)
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.map(&f))).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> NamedTensors<U> {
        NamedTensors {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}
