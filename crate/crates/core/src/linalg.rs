//! Dense linear algebra for the subspace fit: one-sided Jacobi SVD and a cyclic Jacobi
//! symmetric eigensolver. Matrices are row-major slices with explicit dimensions.

use crate::scalar::Real;

const MAX_SWEEPS: usize = 80;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Singular values (descending) and matching right singular vectors.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub singular_values: Vec<T>,
    /// Unit vectors of length `cols`, mutually orthogonal.
    pub right_vectors: Vec<Vec<T>>,
}

/// Thin SVD of a `rows x cols` matrix, returning `min(rows, cols)` singular triplets.
///
/// When `rows >= cols` the columns of the matrix are orthogonalized and the right
/// vectors are the accumulated rotations. Otherwise the rows are orthogonalized
/// (the Gram path) and the right vectors are the normalized rotated rows; directions
/// with zero singular value are filled in by Gram-Schmidt completion.
pub fn thin_svd<T: Real>(a: &[T], rows: usize, cols: usize) -> Svd<T> {
    assert_eq!(a.len(), rows * cols, "matrix payload does not match dimensions");
    let k = rows.min(cols);
    if rows >= cols {
        let mut columns: Vec<Vec<T>> = (0..cols).map(|j| (0..rows).map(|i| a[i * cols + j]).collect()).collect();
        let mut v: Vec<Vec<T>> = (0..cols)
            .map(|j| (0..cols).map(|i| if i == j { T::one() } else { T::zero() }).collect())
            .collect();
        orthogonalize_columns(&mut columns, Some(&mut v));
        let mut order: Vec<(T, usize)> = columns.iter().enumerate().map(|(j, c)| (norm(c), j)).collect();
        order.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite norms").then(x.1.cmp(&y.1)));
        Svd {
            singular_values: order.iter().map(|&(s, _)| s).collect(),
            right_vectors: order.iter().map(|&(_, j)| v[j].clone()).collect(),
        }
    } else {
        let mut columns: Vec<Vec<T>> = (0..rows).map(|i| a[i * cols..(i + 1) * cols].to_vec()).collect();
        orthogonalize_columns(&mut columns, None);
        let mut order: Vec<(T, usize)> = columns.iter().enumerate().map(|(j, c)| (norm(c), j)).collect();
        order.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite norms").then(x.1.cmp(&y.1)));
        let smax = order.first().map_or(T::zero(), |o| o.0);
        let cutoff = smax * T::epsilon() * T::lit((rows.max(cols) * 8) as f64);
        let mut vectors: Vec<Vec<T>> = Vec::with_capacity(k);
        let mut values = Vec::with_capacity(k);
        for &(s, j) in &order {
            if s > cutoff && s > T::zero() {
                vectors.push(columns[j].iter().map(|&x| x / s).collect());
                values.push(s);
            }
        }
        values.resize(k, T::zero());
        complete_orthonormal(&mut vectors, cols, k);
        Svd {
            singular_values: values,
            right_vectors: vectors,
        }
    }
}

/// Hestenes one-sided Jacobi: rotates pairs of columns until all are mutually orthogonal,
/// applying the same rotations to `v` when given.
fn orthogonalize_columns<T: Real>(columns: &mut [Vec<T>], mut v: Option<&mut Vec<Vec<T>>>) {
    let n = columns.len();
    let len = columns.first().map_or(0, Vec::len);
    let tol = T::epsilon() * T::lit(len.max(1) as f64).sqrt();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&columns[p], &columns[p]);
                let beta = dot(&columns[q], &columns[q]);
                let gamma = dot(&columns[p], &columns[q]);
                if alpha == T::zero() || beta == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_pair(columns, p, q, c, s);
                if let Some(v) = v.as_deref_mut() {
                    rotate_pair(v, p, q, c, s);
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

fn rotate_pair<T: Real>(vs: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = vs.split_at_mut(q);
    let (a, b) = (&mut lo[p], &mut hi[0]);
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Extends an orthonormal set to `count` vectors of length `dim` using unit basis
/// vectors and two-pass Gram-Schmidt.
pub fn complete_orthonormal<T: Real>(basis: &mut Vec<Vec<T>>, dim: usize, count: usize) {
    let mut e = 0;
    while basis.len() < count && e < dim {
        let mut cand = vec![T::zero(); dim];
        cand[e] = T::one();
        e += 1;
        for _ in 0..2 {
            for b in basis.iter() {
                let proj = dot(&cand, b);
                for (c, &bv) in cand.iter_mut().zip(b) {
                    *c -= proj * bv;
                }
            }
        }
        let n = norm(&cand);
        if n > T::lit(1e-6) {
            basis.push(cand.into_iter().map(|x| x / n).collect());
        }
    }
}

/// Eigen-decomposition of a symmetric `n x n` matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in decreasing order with their unit eigenvectors.
pub fn symmetric_eigen<T: Real>(a: &[T], n: usize) -> (Vec<T>, Vec<Vec<T>>) {
    assert_eq!(a.len(), n * n, "matrix payload does not match dimensions");
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let frob: T = m.iter().map(|&x| x * x).sum();
    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off <= frob * T::epsilon() * T::epsilon() || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (T::lit(2.0) * apq);
                let t = if theta >= T::zero() { T::one() } else { -T::one() }
                    / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * kp - s * kq;
                    m[k * n + q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * pk - s * qk;
                    m[q * n + k] = s * pk + c * qk;
                }
                for k in 0..n {
                    let (kp, kq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * kp - s * kq;
                    v[k * n + q] = s * kp + c * kq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).expect("finite eigenvalues").then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}
