use super::Scalar;
use crate::error::{shape_err, Result};

/// Dense row-major tensor of rank 1 to 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(shape_err("tensor", format!("rank {} outside 1..=3", dims.len())));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(shape_err(
                "tensor",
                format!("dims {dims:?} hold {len} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Build from a nested row list; panics on ragged input (test and literal helper).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::cast_from(v))).collect();
        Self {
            dims: vec![rows.len(), cols],
            data,
        }
    }

    pub fn from_vec(values: &[f64]) -> Self {
        Self {
            dims: vec![values.len()],
            data: values.iter().map(|&v| T::cast_from(v)).collect(),
        }
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self::full(dims, T::one())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        *self.dims.last().expect("rank >= 1")
    }

    /// Extent of the second-to-last axis (1 for vectors).
    pub fn rows(&self) -> usize {
        if self.rank() >= 2 {
            self.dims[self.rank() - 2]
        } else {
            1
        }
    }

    /// Product of all axes before the trailing matrix (1 for rank <= 2).
    pub fn batch(&self) -> usize {
        if self.rank() == 3 {
            self.dims[0]
        } else {
            1
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.dims[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: T) {
        debug_assert_eq!(self.rank(), 2);
        let c = self.dims[1];
        self.data[i * c + j] = v;
    }

    pub fn at3(&self, b: usize, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 3);
        self.data[(b * self.dims[1] + i) * self.dims[2] + j]
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != self.data.len() || dims.is_empty() || dims.len() > 3 {
            return Err(shape_err("reshape", format!("{:?} -> {dims:?}", self.dims)));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::cast_from(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.as_f64().abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest elementwise |self - other| evaluated in double precision.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff dims");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a.as_f64() - b.as_f64()).abs()))
    }

    /// Mean of squared differences, accumulated in double precision.
    pub fn mse(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "mse dims");
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum();
        s / self.data.len() as f64
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }

    /// Copy of matrix row `i` (rank 2) as a vector.
    pub fn row(&self, i: usize) -> Tensor<T> {
        let c = self.cols();
        Tensor {
            dims: vec![c],
            data: self.data[i * c..(i + 1) * c].to_vec(),
        }
    }
}
