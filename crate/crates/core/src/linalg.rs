//! Thin helpers over nalgebra's complex linear algebra.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Complex scalar used throughout the crate.
pub type C64 = Complex<f64>;
/// Dynamically sized complex matrix.
pub type CMat = DMatrix<C64>;
/// Dynamically sized complex vector.
pub type CVec = DVector<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// Hermitian part (m + m^H)/2.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let mh = m.adjoint();
    (m - mh).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvector `i` in column `i`.
pub fn hermitian_eigen_desc(m: &CMat) -> (Vec<f64>, CMat) {
    let se = m.clone().symmetric_eigen();
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        se.eigenvalues[b]
            .partial_cmp(&se.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    (eigenvalues, vectors)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    let se = m.clone().symmetric_eigen();
    se.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Real trace of a (nominally Hermitian) matrix.
pub fn trace_re(m: &CMat) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// log2 det of a Hermitian positive definite matrix via Cholesky.
///
/// Returns `None` when the Cholesky factorization fails.
pub fn log2_det_hermitian_pd(m: &CMat) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)].re;
        if !(d > 0.0) {
            return None;
        }
        acc += d.log2();
    }
    Some(2.0 * acc)
}

/// Frobenius inner product `<a, b> = sum conj(a_ij) b_ij`.
pub fn frob_inner(a: &CMat, b: &CMat) -> C64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Minimum-norm least-squares solution of `a x = b` via SVD.
pub fn solve_lstsq(a: &CMat, b: &CVec) -> CVec {
    let svd = a.clone().svd(true, true);
    let tol = svd.singular_values.iter().copied().fold(0.0, f64::max)
        * f64::EPSILON
        * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, tol.max(f64::MIN_POSITIVE))
        .expect("SVD solve with u/v computed")
}

/// Matrix with i.i.d. circularly-symmetric complex Gaussian entries of
/// total variance `variance` per entry.
pub fn sample_cn_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, variance: f64) -> CMat {
    let std = (variance / 2.0).sqrt();
    // Row-major draw order so the stream layout matches the storage layout.
    let mut m = CMat::zeros(rows, cols);
    for r in 0..rows {
        for col in 0..cols {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            m[(r, col)] = c(re * std, im * std);
        }
    }
    m
}

/// Row-major vectorization vec(M)[r * ncols + t] = M[r, t].
pub fn vec_row_major(m: &CMat) -> CVec {
    let (rows, cols) = m.shape();
    CVec::from_fn(rows * cols, |i, _| m[(i / cols, i % cols)])
}

/// Inverse of [`vec_row_major`].
pub fn unvec_row_major(v: &CVec, rows: usize, cols: usize) -> CMat {
    debug_assert_eq!(v.len(), rows * cols);
    CMat::from_fn(rows, cols, |r, t| v[r * cols + t])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(seed: u64, rows: usize, cols: usize) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_cn_matrix(&mut rng, rows, cols, 1.0)
    }

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let a = random_cmat(1, 5, 5);
        let h = hermitian_part(&a);
        let (vals, vecs) = hermitian_eigen_desc(&h);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let lam = CMat::from_fn(5, 5, |i, j| if i == j { c(vals[i], 0.0) } else { c(0.0, 0.0) });
        let rec = &vecs * lam * vecs.adjoint();
        assert!((rec - h).norm() < 1e-12);
    }

    #[test]
    fn log2det_matches_eigen_product() {
        let a = random_cmat(2, 4, 4);
        let m = CMat::identity(4, 4) + a.adjoint() * &a;
        let by_chol = log2_det_hermitian_pd(&m).unwrap();
        let (vals, _) = hermitian_eigen_desc(&m);
        let by_eig: f64 = vals.iter().map(|v| v.log2()).sum();
        assert!((by_chol - by_eig).abs() < 1e-10);
    }

    #[test]
    fn lstsq_exact_on_full_rank() {
        let a = random_cmat(3, 6, 3);
        let x = CVec::from_fn(3, |i, _| c(i as f64 + 0.5, -1.0));
        let b = &a * &x;
        let sol = solve_lstsq(&a, &b);
        assert!((sol - x).norm() < 1e-10);
    }

    #[test]
    fn vec_roundtrip() {
        let m = random_cmat(4, 3, 5);
        let v = vec_row_major(&m);
        assert_eq!(v[1 * 5 + 2], m[(1, 2)]);
        let back = unvec_row_major(&v, 3, 5);
        assert_eq!(back, m);
    }
}
