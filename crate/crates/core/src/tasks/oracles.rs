use crate::error::{shape_err, Error, Result};
use crate::numerics::{Scalar, Tensor};

/// `A·x`, ascending summation.
pub fn matvec<T: Scalar>(a: &Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
    let (n, d) = (a.rows(), a.cols());
    assert_eq!(x.len(), d, "matvec extents");
    Tensor::from_fn(&[n], |i| {
        let row = &a.data()[i * d..(i + 1) * d];
        row.iter().zip(x.data()).fold(T::zero(), |s, (&p, &q)| s + p * q)
    })
}

/// `Aᵀ·r`, ascending summation over rows.
pub fn matvec_t<T: Scalar>(a: &Tensor<T>, r: &Tensor<T>) -> Tensor<T> {
    let (n, d) = (a.rows(), a.cols());
    assert_eq!(r.len(), n, "matvec_t extents");
    Tensor::from_fn(&[d], |j| {
        (0..n).fold(T::zero(), |s, i| s + a.data()[i * d + j] * r.data()[i])
    })
}

fn check_dims<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, x: &Tensor<T>) -> Result<()> {
    if a.rank() != 2 || b.len() != a.rows() || x.len() != a.cols() {
        return Err(shape_err(
            "least squares",
            format!("A {:?}, b {:?}, x {:?}", a.dims(), b.dims(), x.dims()),
        ));
    }
    Ok(())
}

/// `Aᵀ(Ax − b)`, divided by `N` when `normalized`.
pub fn grad_oracle<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, x: &Tensor<T>, normalized: bool) -> Result<Tensor<T>> {
    check_dims(a, b, x)?;
    let mut r = matvec(a, x);
    for (ri, &bi) in r.data_mut().iter_mut().zip(b.data()) {
        *ri = *ri - bi;
    }
    let g = matvec_t(a, &r);
    Ok(if normalized {
        let inv = T::cast_from(a.rows() as f64);
        g.map(|v| v / inv)
    } else {
        g
    })
}

/// Iterate norm beyond which gradient descent is declared divergent.
pub const GD_DIVERGENCE_NORM: f64 = 1e12;

/// `k` steps of `x ← x − η·Aᵀ(Ax − b)`.
pub fn gd_oracle<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, x0: &Tensor<T>, eta: f64, k: usize) -> Result<Tensor<T>> {
    let mut last = x0.clone();
    gd_trajectory(a, b, x0, eta, k, |_, x| last = x.clone())?;
    Ok(last)
}

/// Runs gradient descent, handing every iterate (including `x0` at index 0) to `visit`.
pub fn gd_trajectory<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    x0: &Tensor<T>,
    eta: f64,
    k: usize,
    mut visit: impl FnMut(usize, &Tensor<T>),
) -> Result<()> {
    check_dims(a, b, x0)?;
    let step = T::cast_from(eta);
    let mut x = x0.clone();
    visit(0, &x);
    for t in 1..=k {
        let g = grad_oracle(a, b, &x, false)?;
        for (xi, &gi) in x.data_mut().iter_mut().zip(g.data()) {
            *xi = *xi - step * gi;
        }
        let norm = x.norm2();
        if !norm.is_finite() || norm > GD_DIVERGENCE_NORM {
            return Err(Error::Divergence { iter: t, norm });
        }
        visit(t, &x);
    }
    Ok(())
}

/// `AᵀA` with ascending summation.
pub fn gram<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (n, d) = (a.rows(), a.cols());
    Tensor::from_fn(&[d, d], |idx| {
        let (p, q) = (idx / d, idx % d);
        (0..n).fold(T::zero(), |s, i| s + a.data()[i * d + p] * a.data()[i * d + q])
    })
}

fn frob<T: Scalar>(m: &Tensor<T>) -> f64 {
    m.norm2()
}

/// Newton–Schulz iteration for `(AᵀA)⁻¹`: `M₀ = G/‖G‖²_F`,
/// `M ← M(2I − G·M)`. Returns the final iterate and `‖I − G·M_t‖_F` for every
/// `t` (index 0 is the initial residual).
pub fn newton_oracle<T: Scalar>(a: &Tensor<T>, steps: usize) -> Result<(Tensor<T>, Vec<f64>)> {
    use crate::numerics::ops::{matmul, sub};
    let g = gram(a);
    let d = g.rows();
    let fro2 = frob(&g).powi(2);
    if fro2 == 0.0 {
        return Err(Error::Singular { pivot: 0 });
    }
    let mut m = g.map(|v| v / T::cast_from(fro2));
    let eye = Tensor::<T>::eye(d);
    let two_eye = eye.map(|v| v + v);
    let mut residuals = Vec::with_capacity(steps + 1);
    residuals.push(frob(&sub(&eye, &matmul(&g, &m)?)?));
    for _ in 0..steps {
        let gm = matmul(&g, &m)?;
        m = matmul(&m, &sub(&two_eye, &gm)?)?;
        let res = frob(&sub(&eye, &matmul(&g, &m)?)?);
        if !res.is_finite() || res > 1e6 {
            return Err(Error::Numerical {
                op: "newton_oracle",
                detail: format!("residual ‖I − GM‖ = {res:e} after {} steps", residuals.len()),
            });
        }
        residuals.push(res);
    }
    Ok((m, residuals))
}

/// Least-squares solution through Householder QR.
pub fn ols_oracle<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    crate::numerics::ols_solve(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_examples() {
        let a = Tensor::<f64>::eye(2);
        let b = Tensor::from_vec(&[1.0, 2.0]);
        let z = Tensor::zeros(&[2]);
        assert_eq!(grad_oracle(&a, &b, &z, false).unwrap().data(), &[-1.0, -2.0]);
        let x1 = gd_oracle(&a, &b, &z, 0.1, 1).unwrap();
        assert!((x1.data()[0] - 0.1).abs() < 1e-16 && (x1.data()[1] - 0.2).abs() < 1e-16);
        assert_eq!(gd_oracle(&a, &b, &b, 0.1, 0).unwrap(), b);
        // M₀ = I/2, so ‖I − M_t‖_F = √2·2^(−2^t).
        let (m, res) = newton_oracle(&a, 6).unwrap();
        for (t, r) in res.iter().enumerate() {
            let want = 2f64.sqrt() * 0.5f64.powi(1 << t);
            assert!((r - want).abs() <= 1e-15 + 1e-12 * want, "step {t}: {r:e} vs {want:e}");
        }
        assert!(m.max_abs_diff(&Tensor::eye(2)) < 1e-15);
    }

    #[test]
    fn divergence_names_the_iterate() {
        let a = Tensor::<f64>::eye(2).map(|v| v * 10.0);
        let b = Tensor::from_vec(&[1.0, 1.0]);
        match gd_oracle(&a, &b, &Tensor::zeros(&[2]), 1.0, 100) {
            Err(Error::Divergence { iter, .. }) => assert!(iter > 1 && iter < 100),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalized_gradient_divides_by_rows() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0], vec![2.0]]);
        let b = Tensor::from_vec(&[0.0, 0.0]);
        let x = Tensor::from_vec(&[1.0]);
        assert_eq!(grad_oracle(&a, &b, &x, true).unwrap().data(), &[2.5]);
    }
}
