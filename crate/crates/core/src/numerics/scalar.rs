use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Floating-point storage type of a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Single,
    Double,
}

impl DType {
    /// Byte tag used by the checkpoint container.
    pub fn code(self) -> u8 {
        match self {
            DType::Single => 0,
            DType::Double => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::Single),
            1 => Some(DType::Double),
            _ => None,
        }
    }

    /// Unit roundoff spacing at 1.0.
    pub fn eps(self) -> f64 {
        match self {
            DType::Single => f32::EPSILON as f64,
            DType::Double => f64::EPSILON,
        }
    }
}

impl std::str::FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" | "f32" => Ok(DType::Single),
            "double" | "f64" => Ok(DType::Double),
            other => Err(format!("unknown dtype `{other}` (expected single|double)")),
        }
    }
}

/// Element type of [`Tensor`](super::Tensor): implemented for `f32` and `f64`.
pub trait Scalar: Float + Default + Debug + Display + Send + Sync + Sum + 'static {
    const DTYPE: DType;
    const BYTES: usize;

    fn cast_from(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::Single;
    const BYTES: usize = 4;

    #[inline]
    fn cast_from(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::Double;
    const BYTES: usize = 8;

    #[inline]
    fn cast_from(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
