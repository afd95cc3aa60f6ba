use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian, shape_spectrum, Scalar, SeededRng, Tensor};

fn default_sigma_max() -> f64 {
    5.0
}
fn default_kappa() -> f64 {
    5.0
}
fn one() -> f64 {
    1.0
}
fn default_eta() -> f64 {
    0.04
}

/// Distribution of least-squares problems `A ∈ R^{N×D}`, `x* ∈ R^D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_sigma_max")]
    pub sigma_max: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Standard deviation of each entry of `x*`.
    #[serde(default = "one")]
    pub target_sigma: f64,
    #[serde(default)]
    pub noise_std: f64,
    /// Step size stored on every sampled instance.
    #[serde(default = "default_eta")]
    pub eta: f64,
}

impl DistributionSpec {
    /// The shaped 20×5 distribution: σ_max = κ = 5, unit targets, η = 0.04.
    pub fn shaped(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            sigma_max: default_sigma_max(),
            kappa: default_kappa(),
            target_sigma: 1.0,
            noise_std: 0.0,
            eta: default_eta(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.n < self.d {
            return Err(Error::Config(format!(
                "need n >= d >= 1, got n={} d={}",
                self.n, self.d
            )));
        }
        if !(self.kappa >= 1.0) || !(self.sigma_max > 0.0) {
            return Err(Error::Config(format!(
                "need kappa >= 1 and sigma_max > 0, got kappa={} sigma_max={}",
                self.kappa, self.sigma_max
            )));
        }
        if !(self.target_sigma >= 0.0) || !(self.noise_std >= 0.0) || !(self.eta >= 0.0) {
            return Err(Error::Config(
                "target_sigma, noise_std and eta must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Same spectrum, targets drawn with standard deviation `sigma`.
pub fn ood_spec(base: &DistributionSpec, sigma: f64) -> Result<DistributionSpec> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("OOD sigma must be positive, got {sigma}")));
    }
    Ok(DistributionSpec {
        target_sigma: sigma,
        ..base.clone()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistMeta {
    pub sigma_max: f64,
    pub kappa: f64,
    pub target_sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquaresInstance<T> {
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub x_star: Tensor<T>,
    pub x0: Tensor<T>,
    pub eta: f64,
    pub meta: DistMeta,
}

impl<T: Scalar> LeastSquaresInstance<T> {
    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn d(&self) -> usize {
        self.a.cols()
    }

    pub fn cast<U: Scalar>(&self) -> LeastSquaresInstance<U> {
        LeastSquaresInstance {
            a: self.a.cast(),
            b: self.b.cast(),
            x_star: self.x_star.cast(),
            x0: self.x0.cast(),
            eta: self.eta,
            meta: self.meta.clone(),
        }
    }
}

/// Draw one instance: Gaussian `A` reshaped to singular values in
/// `[σ_max/κ, σ_max]` (in double precision, then rounded), `x* ~ N(0, σ²)`,
/// `b = A·x*` evaluated in `T` (plus optional noise), `x0 ~ N(0, 1)`.
pub fn sample_instance<T: Scalar>(dist: &DistributionSpec, rng: &mut SeededRng) -> Result<LeastSquaresInstance<T>> {
    dist.validate()?;
    let (n, d) = (dist.n, dist.d);
    let raw: Tensor<f64> = gaussian(rng, &[n, d], 1.0);
    let a64 = shape_spectrum(&raw, dist.sigma_max / dist.kappa, dist.sigma_max)?;
    let a: Tensor<T> = a64.cast();
    let x_star: Tensor<T> = gaussian(rng, &[d], dist.target_sigma);
    let mut b = super::oracles::matvec(&a, &x_star);
    if dist.noise_std > 0.0 {
        let noise: Tensor<T> = gaussian(rng, &[n], dist.noise_std);
        for (bi, &e) in b.data_mut().iter_mut().zip(noise.data()) {
            *bi = *bi + e;
        }
    }
    let x0: Tensor<T> = gaussian(rng, &[d], 1.0);
    Ok(LeastSquaresInstance {
        a,
        b,
        x_star,
        x0,
        eta: dist.eta,
        meta: DistMeta {
            sigma_max: dist.sigma_max,
            kappa: dist.kappa,
            target_sigma: dist.target_sigma,
        },
    })
}

/// Instance number `index` of the stream rooted at `(seed, stream)`.
pub fn sample_indexed<T: Scalar>(
    dist: &DistributionSpec,
    root: &SeededRng,
    index: u64,
) -> Result<LeastSquaresInstance<T>> {
    sample_instance(dist, &mut root.derive(index))
}
