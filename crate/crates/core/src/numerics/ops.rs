//! Dense kernels. Every reduction runs in a fixed left-to-right order so that
//! results are bit-reproducible across runs.

use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// `C = A·B` for matrices, a batch of matrices against one shared right factor,
/// or two equally sized batches. Each `C[i,j]` sums `A[i,l]·B[l,j]` for ascending `l`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if a.rank() < 2 || b.rank() < 2 || k != k2 {
        return Err(shape_err("matmul", format!("{:?} x {:?}", a.dims(), b.dims())));
    }
    match (a.rank(), b.rank()) {
        (2, 2) | (3, 2) => {
            let rows = a.len() / k;
            let mut out = vec![T::zero(); rows * n];
            gemm_rows(a.data(), b.data(), &mut out, rows, k, n);
            let dims = if a.rank() == 3 {
                vec![a.dims()[0], m, n]
            } else {
                vec![m, n]
            };
            Tensor::new(&dims, out)
        }
        (3, 3) if a.dims()[0] == b.dims()[0] => {
            let batch = a.dims()[0];
            let mut out = vec![T::zero(); batch * m * n];
            for s in 0..batch {
                gemm_rows(
                    &a.data()[s * m * k..(s + 1) * m * k],
                    &b.data()[s * k * n..(s + 1) * k * n],
                    &mut out[s * m * n..(s + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            Tensor::new(&[batch, m, n], out)
        }
        _ => Err(shape_err("matmul", format!("{:?} x {:?}", a.dims(), b.dims()))),
    }
}

#[inline]
fn gemm_rows<T: Scalar>(a: &[T], b: &[T], c: &mut [T], rows: usize, k: usize, n: usize) {
    for i in 0..rows {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (l, &ail) in arow.iter().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            for (cij, &blj) in crow.iter_mut().zip(brow) {
                *cij = *cij + ail * blj;
            }
        }
    }
}

/// Swap the last two axes.
pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() < 2 {
        return Err(shape_err("transpose", format!("rank {}", a.rank())));
    }
    let (m, n) = (a.rows(), a.cols());
    let batch = a.batch();
    let mut out = vec![T::zero(); a.len()];
    let src = a.data();
    for s in 0..batch {
        let off = s * m * n;
        for i in 0..m {
            for j in 0..n {
                out[off + j * m + i] = src[off + i * n + j];
            }
        }
    }
    let mut dims = a.dims().to_vec();
    let r = dims.len();
    dims.swap(r - 1, r - 2);
    Tensor::new(&dims, out)
}

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn zip_broadcast<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if !broadcast_ok(a.dims(), b.dims()) {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let inner = b.len();
    let out = a
        .data()
        .chunks(inner)
        .flat_map(|chunk| chunk.iter().zip(b.data()).map(|(&x, &y)| f(x, y)))
        .collect();
    Tensor::new(a.dims(), out)
}

/// Elementwise product of equally shaped tensors.
pub fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.dims() != b.dims() {
        return Err(shape_err("hadamard", format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    zip_broadcast("hadamard", a, b, |x, y| x * y)
}

/// Elementwise product where `b` may be broadcast over the leading axes of `a`.
pub fn hadamard_broadcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_broadcast("hadamard", a, b, |x, y| x * y)
}

/// Elementwise sum where `b` may be broadcast over the leading axes of `a`.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_broadcast("add", a, b, |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_broadcast("sub", a, b, |x, y| x - y)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, c: T) -> Tensor<T> {
    a.map(|v| v * c)
}

/// Per-column linear causal convolution, `V[i,j] = Σ_{k=0..=i} H[k,j]·U[i-k,j]`,
/// evaluated directly. `U` may carry a leading batch axis sharing the filter `H`.
pub fn causal_conv_cols<T: Scalar>(h: &Tensor<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    if h.rank() != 2 || u.rank() < 2 || h.dims() != &u.dims()[u.rank() - 2..] {
        return Err(shape_err(
            "causal_conv_cols",
            format!("filter {:?} vs input {:?}", h.dims(), u.dims()),
        ));
    }
    let (n, d) = (h.rows(), h.cols());
    let mut out = vec![T::zero(); u.len()];
    let hd = h.data();
    for (src, dst) in u.data().chunks(n * d).zip(out.chunks_mut(n * d)) {
        for i in 0..n {
            let vrow = &mut dst[i * d..(i + 1) * d];
            for k in 0..=i {
                let hrow = &hd[k * d..(k + 1) * d];
                let urow = &src[(i - k) * d..(i - k + 1) * d];
                for ((v, &hv), &uv) in vrow.iter_mut().zip(hrow).zip(urow) {
                    *v = *v + hv * uv;
                }
            }
        }
    }
    Tensor::new(u.dims(), out)
}

fn axis_split(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

/// Sub-range `[start, end)` along `axis`.
pub fn slice<T: Scalar>(a: &Tensor<T>, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
    if axis >= a.rank() || start > end || end > a.dims()[axis] {
        return Err(shape_err(
            "slice",
            format!("axis {axis} range {start}..{end} of {:?}", a.dims()),
        ));
    }
    let (outer, len, inner) = axis_split(a.dims(), axis);
    let width = end - start;
    let mut out = Vec::with_capacity(outer * width * inner);
    for o in 0..outer {
        let base = o * len * inner;
        out.extend_from_slice(&a.data()[base + start * inner..base + end * inner]);
    }
    let mut dims = a.dims().to_vec();
    dims[axis] = width;
    Tensor::new(&dims, out)
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(shape_err("concat", format!("axis {axis} of {:?}", first.dims())));
    }
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.dims()
                .iter()
                .zip(first.dims())
                .enumerate()
                .all(|(ax, (x, y))| ax == axis || x == y);
        if !ok {
            return Err(shape_err(
                "concat",
                format!("{:?} vs {:?} along {axis}", p.dims(), first.dims()),
            ));
        }
    }
    let (outer, _, inner) = axis_split(first.dims(), axis);
    let total: usize = parts.iter().map(|p| p.dims()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.dims()[axis];
            out.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut dims = first.dims().to_vec();
    dims[axis] = total;
    Tensor::new(&dims, out)
}

pub fn relu<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Row-wise softmax over the last axis with max subtraction. With `causal`, entry
/// `(i, j)` of each trailing matrix is excluded (probability 0) when `j > i`.
pub fn softmax_rows<T: Scalar>(a: &Tensor<T>, causal: bool) -> Tensor<T> {
    let n = a.cols();
    let rows_per_mat = a.rows();
    let mut out = a.clone();
    for (r, row) in out.data_mut().chunks_mut(n).enumerate() {
        let visible = if causal { (r % rows_per_mat) + 1 } else { n }.min(n);
        let mut m = row[0];
        for &v in &row[1..visible] {
            if v > m {
                m = v;
            }
        }
        let mut total = T::zero();
        for v in row[..visible].iter_mut() {
            *v = (*v - m).exp();
            total = total + *v;
        }
        for v in row[..visible].iter_mut() {
            *v = *v / total;
        }
        for v in row[visible..].iter_mut() {
            *v = T::zero();
        }
    }
    out
}

/// Normalize each row of the last axis to zero mean and unit variance:
/// `(x - mean) / sqrt(var + eps)`.
pub fn layer_norm_rows<T: Scalar>(a: &Tensor<T>, eps: T) -> Tensor<T> {
    let n = a.cols();
    let nf = T::cast_from(n as f64);
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(n) {
        let mean = row.iter().fold(T::zero(), |s, &v| s + v) / nf;
        let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / nf;
        let inv = T::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

/// Mean of squared differences over all elements.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.dims() != target.dims() {
        return Err(shape_err(
            "mse_loss",
            format!("{:?} vs {:?}", pred.dims(), target.dims()),
        ));
    }
    let s = pred
        .data()
        .iter()
        .zip(target.data())
        .fold(T::zero(), |s, (&p, &t)| s + (p - t) * (p - t));
    Ok(s / T::cast_from(pred.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows)
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let a = m(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::eye(2), &a).unwrap(), a);
        let b = m(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), m(&[vec![19.0, 22.0], vec![43.0, 50.0]]));
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matmul(&a, &a).is_err());
    }

    #[test]
    fn batched_matmul_matches_per_item() {
        let a = Tensor::<f64>::from_fn(&[2, 2, 3], |i| i as f64 - 3.0);
        let w = Tensor::<f64>::from_fn(&[3, 2], |i| 0.5 * i as f64);
        let c = matmul(&a, &w).unwrap();
        for s in 0..2 {
            let item = slice(&a, 0, s, s + 1).unwrap().reshape(&[2, 3]).unwrap();
            let want = matmul(&item, &w).unwrap();
            let got = slice(&c, 0, s, s + 1).unwrap().reshape(&[2, 2]).unwrap();
            assert_eq!(got, want);
        }
        let bt = transpose(&a).unwrap();
        let g = matmul(&a, &bt).unwrap();
        assert_eq!(g.dims(), &[2, 2, 2]);
        assert_eq!(
            g.at3(1, 0, 1),
            (0..3).map(|l| a.at3(1, 0, l) * a.at3(1, 1, l)).sum::<f64>()
        );
    }

    #[test]
    fn hadamard_cases() {
        let a = Tensor::<f64>::from_vec(&[1.0, 2.0, 3.0]);
        let b = Tensor::from_vec(&[4.0, 5.0, 6.0]);
        assert_eq!(hadamard(&a, &b).unwrap().data(), &[4.0, 10.0, 18.0]);
        assert_eq!(hadamard(&a, &Tensor::ones(&[3])).unwrap(), a);
        assert_eq!(hadamard(&a, &Tensor::zeros(&[3])).unwrap(), Tensor::zeros(&[3]));
        assert!(hadamard(&a, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn conv_impulse_shift_and_hand_value() {
        let u = Tensor::<f64>::from_fn(&[4, 2], |i| i as f64 + 1.0);
        let mut delta0 = Tensor::zeros(&[4, 2]);
        delta0.data_mut()[0] = 1.0;
        delta0.data_mut()[1] = 1.0;
        assert_eq!(causal_conv_cols(&delta0, &u).unwrap(), u);

        let mut delta1 = Tensor::zeros(&[4, 2]);
        delta1.set2(1, 0, 1.0);
        delta1.set2(1, 1, 1.0);
        let v = causal_conv_cols(&delta1, &u).unwrap();
        assert_eq!(v.row(0).data(), &[0.0, 0.0]);
        for i in 1..4 {
            assert_eq!(v.row(i), u.row(i - 1));
        }

        let u = Tensor::<f64>::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let h = Tensor::<f64>::from_rows(&[vec![1.0], vec![1.0], vec![0.0]]);
        assert_eq!(causal_conv_cols(&h, &u).unwrap().data(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn slice_concat_roundtrip() {
        let a = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let l = slice(&a, 2, 0, 1).unwrap();
        let r = slice(&a, 2, 1, 4).unwrap();
        assert_eq!(concat(&[&l, &r], 2).unwrap(), a);
        let top = slice(&a, 1, 0, 2).unwrap();
        let bottom = slice(&a, 1, 2, 3).unwrap();
        assert_eq!(concat(&[&top, &bottom], 1).unwrap(), a);
        assert!(slice(&a, 1, 2, 4).is_err());
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let a = Tensor::<f64>::from_fn(&[3, 3], |i| (i as f64 * 0.7).sin() * 5.0);
        for causal in [false, true] {
            let s = softmax_rows(&a, causal);
            for i in 0..3 {
                let row = s.row(i);
                let total: f64 = row.data().iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                if causal {
                    assert!(row.data()[i + 1..].iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn layer_norm_moments() {
        let a = Tensor::<f64>::from_fn(&[4, 8], |i| ((i * 7 % 11) as f64) - 3.0);
        let y = layer_norm_rows(&a, 0.0);
        for i in 0..4 {
            let r = y.row(i);
            let mean: f64 = r.data().iter().sum::<f64>() / 8.0;
            let var: f64 = r.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }
}
