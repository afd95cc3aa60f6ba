use super::ops::{matmul, transpose};
use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

const MAX_SWEEPS: usize = 100;

/// Thin SVD `A = U·diag(S)·Vᵀ` of a tall matrix.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Tensor<T>,
    pub s: Vec<T>,
    pub v: Tensor<T>,
}

fn jacobi_tol<T: Scalar>() -> T {
    match T::DTYPE {
        super::DType::Single => T::cast_from(1e-6),
        super::DType::Double => T::cast_from(1e-10),
    }
}

/// One-sided (Hestenes) Jacobi SVD for `m ≥ n`. Singular values come back
/// non-increasing; `U` and `V` have orthonormal columns.
pub fn svd_thin<T: Scalar>(a: &Tensor<T>) -> Result<Svd<T>> {
    if a.rank() != 2 || a.rows() < a.cols() {
        return Err(shape_err("svd_thin", format!("need m >= n, got {:?}", a.dims())));
    }
    if !a.is_finite() {
        return Err(Error::Numerical {
            op: "svd_thin",
            detail: "non-finite input".into(),
        });
    }
    let (m, n) = (a.rows(), a.cols());
    // column-major working copies
    let mut w: Vec<Vec<T>> = (0..n).map(|j| (0..m).map(|i| a.at2(i, j)).collect()).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let tol = jacobi_tol::<T>();
    let mut converged = false;
    let mut worst = T::zero();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        worst = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                let scale = (alpha * beta).sqrt();
                if scale == T::zero() || gamma == T::zero() {
                    continue;
                }
                let off = gamma.abs() / scale;
                worst = worst.max(off);
                if off <= tol {
                    continue;
                }
                rotated = true;
                let two = T::one() + T::one();
                let zeta = (beta - alpha) / (two * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical {
            op: "svd_thin",
            detail: format!("no convergence after {MAX_SWEEPS} sweeps, residual cosine {worst}"),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<T> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));
    let s: Vec<T> = order.iter().map(|&j| norms[j]).collect();
    let smax = s.first().copied().unwrap_or(T::zero());
    let floor = smax * T::cast_from(T::DTYPE.eps() * m as f64);

    let mut ucols: Vec<Vec<T>> = Vec::with_capacity(n);
    for (&j, &sj) in order.iter().zip(&s) {
        if sj > floor && sj > T::zero() {
            ucols.push(w[j].iter().map(|&x| x / sj).collect());
        } else {
            ucols.push(complete_basis(&ucols, m));
        }
    }
    let u = Tensor::from_fn(&[m, n], |k| ucols[k % n][k / n]);
    let vt = Tensor::from_fn(&[n, n], |k| v[order[k % n]][k / n]);
    Ok(Svd { u, s, v: vt })
}

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = cols.split_at_mut(q);
    for (xp, xq) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (a, b) = (*xp, *xq);
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// A unit vector orthogonal to `existing`, from Gram–Schmidt on coordinate axes.
fn complete_basis<T: Scalar>(existing: &[Vec<T>], m: usize) -> Vec<T> {
    let mut best: Option<(T, Vec<T>)> = None;
    for axis in 0..m {
        let mut e: Vec<T> = (0..m).map(|i| if i == axis { T::one() } else { T::zero() }).collect();
        for _ in 0..2 {
            for col in existing {
                let proj = dot(col, &e);
                for (ei, &ci) in e.iter_mut().zip(col) {
                    *ei = *ei - proj * ci;
                }
            }
        }
        let nrm = dot(&e, &e).sqrt();
        if best.as_ref().map_or(true, |(b, _)| nrm > *b) {
            best = Some((nrm, e));
        }
    }
    let (nrm, e) = best.expect("m >= 1");
    e.into_iter().map(|x| x / nrm).collect()
}

impl<T: Scalar> Svd<T> {
    /// `U·diag(S)·Vᵀ`.
    pub fn reconstruct(&self) -> Result<Tensor<T>> {
        let n = self.s.len();
        let mut us = self.u.clone();
        let m = us.rows();
        for i in 0..m {
            for j in 0..n {
                let v = us.at2(i, j) * self.s[j];
                us.set2(i, j, v);
            }
        }
        matmul(&us, &transpose(&self.v)?)
    }
}

/// Remap the singular values of `a` affinely onto `[sigma_min, sigma_max]`
/// (largest to `sigma_max`, smallest to `sigma_min`). A flat spectrum maps
/// entirely to `sigma_max`. Rank-deficient inputs are mapped the same way:
/// their smallest computed singular value becomes `sigma_min`.
pub fn shape_spectrum<T: Scalar>(a: &Tensor<T>, sigma_min: f64, sigma_max: f64) -> Result<Tensor<T>> {
    if !(sigma_min > 0.0 && sigma_max >= sigma_min) {
        return Err(Error::Contract(format!(
            "shape_spectrum needs 0 < sigma_min <= sigma_max, got ({sigma_min}, {sigma_max})"
        )));
    }
    let mut svd = svd_thin(a)?;
    let hi = svd.s.first().map_or(0.0, |v| v.as_f64());
    let lo = svd.s.last().map_or(0.0, |v| v.as_f64());
    let spread = hi - lo;
    let flat = spread <= hi * T::DTYPE.eps() * 16.0;
    for s in svd.s.iter_mut() {
        let mapped = if flat {
            sigma_max
        } else {
            sigma_min + (s.as_f64() - lo) * (sigma_max - sigma_min) / spread
        };
        *s = T::cast_from(mapped);
    }
    svd.reconstruct()
}

/// Householder QR factorization of a tall matrix, kept in compact form.
struct Qr<T> {
    /// Column-major reflected matrix; R sits on and above the diagonal.
    cols: Vec<Vec<T>>,
    /// Householder vectors, one per column, acting on rows `k..`.
    reflectors: Vec<Vec<T>>,
    diag: Vec<T>,
}

fn householder_qr<T: Scalar>(a: &Tensor<T>) -> Result<Qr<T>> {
    let (m, n) = (a.rows(), a.cols());
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| (0..m).map(|i| a.at2(i, j)).collect()).collect();
    let mut reflectors = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let tol = T::DTYPE.eps() * (m.max(n) as f64) * 4.0 * scale;
    for k in 0..n {
        let x = &cols[k][k..];
        let nrm = dot(x, x).sqrt();
        if nrm.as_f64() <= tol {
            return Err(Error::Singular { pivot: k });
        }
        let alpha = if x[0] > T::zero() { -nrm } else { nrm };
        let mut v: Vec<T> = x.to_vec();
        v[0] = v[0] - alpha;
        let vn = dot(&v, &v).sqrt();
        for vi in v.iter_mut() {
            *vi = *vi / vn;
        }
        for col in cols.iter_mut().skip(k) {
            reflect(&v, &mut col[k..]);
        }
        diag.push(alpha);
        reflectors.push(v);
    }
    Ok(Qr { cols, reflectors, diag })
}

fn reflect<T: Scalar>(v: &[T], x: &mut [T]) {
    let two = T::one() + T::one();
    let p = two * dot(v, x);
    for (xi, &vi) in x.iter_mut().zip(v) {
        *xi = *xi - p * vi;
    }
}

impl<T: Scalar> Qr<T> {
    fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.diag.len();
        let mut y = b.to_vec();
        for (k, v) in self.reflectors.iter().enumerate() {
            reflect(v, &mut y[k..]);
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in i + 1..n {
                acc = acc - self.cols[j][i] * x[j];
            }
            x[i] = acc / self.diag[i];
        }
        x
    }
}

/// Least-squares minimizer of `‖Ax − b‖₂` via Householder QR (`m ≥ n`).
pub fn ols_solve<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 1 || a.rows() != b.len() || a.rows() < a.cols() {
        return Err(shape_err("ols_solve", format!("A {:?}, b {:?}", a.dims(), b.dims())));
    }
    let qr = householder_qr(a)?;
    let x = qr.solve(b.data());
    Tensor::new(&[a.cols()], x)
}

/// Inverse of a square non-singular matrix via QR, one column at a time.
pub fn inverse<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || a.rows() != a.cols() {
        return Err(shape_err("inverse", format!("{:?}", a.dims())));
    }
    let n = a.rows();
    let qr = householder_qr(a)?;
    let mut out = Tensor::zeros(&[n, n]);
    for j in 0..n {
        let e: Vec<T> = (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect();
        let col = qr.solve(&e);
        for (i, v) in col.into_iter().enumerate() {
            out.set2(i, j, v);
        }
    }
    Ok(out)
}
