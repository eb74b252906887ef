//! Dense linear algebra on top of `nalgebra`.
//!
//! Matrices are column-major, so `vec(B)` of a `d x c` matrix is its raw storage.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{mismatch, Error, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type DenseVector = DVector<f64>;

/// Eigenvalues above `-PSD_CLAMP * scale` are treated as zero in PSD routines.
pub const PSD_CLAMP: f64 = 1e-10;
/// Largest tolerated relative asymmetry for symmetric inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative tolerance used by rank-revealing routines.
pub const RANK_TOL: f64 = 1e-8;

pub fn ensure_finite(m: &DenseMatrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn scale_of(m: &DenseMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0)
}

/// Largest absolute entry of `m - m^T`, relative to `max(1, max|m|)`.
pub fn asymmetry(m: &DenseMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale_of(m)
}

pub fn ensure_square(m: &DenseMatrix, context: &'static str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(mismatch(context, format!("expected square, got {}x{}", m.nrows(), m.ncols())))
    }
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn symmetric_eigen(s: &DenseMatrix) -> Result<(DenseVector, DenseMatrix)> {
    ensure_square(s, "symmetric_eigen")?;
    ensure_finite(s, "symmetric_eigen input")?;
    let asym = asymmetry(s);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DenseVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Applies `f` to the clamped spectrum of a symmetric PSD matrix.
pub fn psd_spectral_map(s: &DenseMatrix, f: impl Fn(f64) -> f64) -> Result<DenseMatrix> {
    let (values, vectors) = symmetric_eigen(s)?;
    let scale = values.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_CLAMP * scale {
        return Err(Error::Indefinite { min_eigenvalue: min });
    }
    let mapped = DenseVector::from_iterator(values.len(), values.iter().map(|&v| f(v.max(0.0))));
    Ok(&vectors * DenseMatrix::from_diagonal(&mapped) * vectors.transpose())
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn principal_sqrt_psd(s: &DenseMatrix) -> Result<DenseMatrix> {
    psd_spectral_map(s, f64::sqrt)
}

/// Integer power of a symmetric PSD matrix through its eigendecomposition.
pub fn psd_power(s: &DenseMatrix, p: u32) -> Result<DenseMatrix> {
    if p == 0 {
        ensure_square(s, "psd_power")?;
        return Ok(DenseMatrix::identity(s.nrows(), s.ncols()));
    }
    psd_spectral_map(s, |v| v.powi(p as i32))
}

/// Thin singular value decomposition `m = U diag(sigma) V^T`, sigma descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub singular_values: DenseVector,
    pub v: DenseMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> DenseMatrix {
        &self.u * DenseMatrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > rel_tol * top).count()
    }
}

pub fn svd(m: &DenseMatrix) -> Result<Svd> {
    ensure_finite(m, "svd input")?;
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return Ok(Svd {
            u: DenseMatrix::zeros(m.nrows(), 0),
            singular_values: DenseVector::zeros(0),
            v: DenseMatrix::zeros(m.ncols(), 0),
        });
    }
    let raw = m.clone().svd(true, true);
    let u_raw = raw.u.ok_or(Error::NonFinite("svd left vectors"))?;
    let vt_raw = raw.v_t.ok_or(Error::NonFinite("svd right vectors"))?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| raw.singular_values[j].total_cmp(&raw.singular_values[i]));
    let mut u = DenseMatrix::zeros(m.nrows(), k);
    let mut v = DenseMatrix::zeros(m.ncols(), k);
    let mut s = DenseVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u_raw.column(src));
        v.set_column(dst, &vt_raw.row(src).transpose());
        s[dst] = raw.singular_values[src];
    }
    Ok(Svd { u, singular_values: s, v })
}

pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a.kronecker(b)
}

/// Kronecker sum `C (+) D = C x I_d + I_c x D` for square `C` (c x c) and `D` (d x d).
pub fn kron_sum(c: &DenseMatrix, d: &DenseMatrix) -> Result<DenseMatrix> {
    ensure_square(c, "kron_sum left")?;
    ensure_square(d, "kron_sum right")?;
    let ic = DenseMatrix::identity(c.nrows(), c.nrows());
    let id = DenseMatrix::identity(d.nrows(), d.nrows());
    Ok(c.kronecker(&id) + ic.kronecker(d))
}

/// Column-stacking vectorization.
pub fn vec_of(m: &DenseMatrix) -> DenseVector {
    DenseVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DenseVector, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(mismatch("unvec", format!("{} entries for {}x{}", v.len(), rows, cols)));
    }
    Ok(DenseMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn frobenius_inner(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of the column space of `m`, rank decided relative to the top singular value.
pub fn range_basis(m: &DenseMatrix, rel_tol: f64) -> Result<DenseMatrix> {
    let s = svd(m)?;
    let r = s.rank(rel_tol);
    Ok(s.u.columns(0, r).into_owned())
}

/// Orthonormal basis of the orthogonal complement of the columns of `basis` in R^n.
pub fn complement_basis(basis: &DenseMatrix) -> Result<DenseMatrix> {
    let n = basis.nrows();
    let residual = DenseMatrix::identity(n, n) - basis * basis.transpose();
    let (values, vectors) = symmetric_eigen(&residual)?;
    let cols: Vec<usize> = (0..n).filter(|&i| values[i] > 0.5).collect();
    let mut out = DenseMatrix::zeros(n, cols.len());
    for (dst, &src) in cols.iter().enumerate() {
        out.set_column(dst, &vectors.column(src));
    }
    Ok(out)
}

/// Orthonormal basis of the null space of `x` (vectors `v` with `x v = 0`).
pub fn null_space(x: &DenseMatrix, rel_tol: f64) -> Result<DenseMatrix> {
    let row_space = range_basis(&x.transpose(), rel_tol)?;
    complement_basis(&row_space)
}

/// Minimum-norm least-squares solution of `x b = y`.
pub fn min_norm_solution(x: &DenseMatrix, y: &DenseMatrix, rel_tol: f64) -> Result<DenseMatrix> {
    if x.nrows() != y.nrows() {
        return Err(mismatch("min_norm_solution", format!("{} rows vs {}", x.nrows(), y.nrows())));
    }
    let s = svd(x)?;
    let r = s.rank(rel_tol);
    let mut out = DenseMatrix::zeros(x.ncols(), y.ncols());
    for i in 0..r {
        let ui = s.u.column(i);
        let vi = s.v.column(i);
        let coef = ui.transpose() * y / s.singular_values[i];
        out += vi * coef;
    }
    Ok(out)
}

/// Distance from `v` to the column space of `basis` (orthonormal columns).
pub fn residual_outside(basis: &DenseMatrix, v: &DenseVector) -> f64 {
    let proj = basis * (basis.transpose() * v);
    (v - proj).norm()
}

/// Haar-distributed orthogonal matrix via QR of a Gaussian matrix with sign correction.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DenseMatrix {
    let g = random_gaussian(n, n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q
}

pub fn random_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniform sample from the unit sphere in R^d.
pub fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DenseVector {
    loop {
        let g = DenseVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let g = random_gaussian(n, n, rng);
        &g * g.transpose()
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let i = DenseMatrix::identity(3, 3);
        assert_relative_eq!(principal_sqrt_psd(&i).unwrap(), i, epsilon = 1e-14);
        let d = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![4.0, 9.0]));
        let r = principal_sqrt_psd(&d).unwrap();
        assert_relative_eq!(r, DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![2.0, 3.0])), epsilon = 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_psd(5, &mut rng);
        let r = principal_sqrt_psd(&s).unwrap();
        assert!(relative_error(&(&r * &r), &s) < 1e-8);
        assert!(asymmetry(&r) < 1e-12);
    }

    #[test]
    fn sqrt_rejects_bad_input() {
        let asym = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(principal_sqrt_psd(&asym), Err(Error::NotSymmetric { .. })));
        let indef = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(principal_sqrt_psd(&indef), Err(Error::Indefinite { .. })));
        let tiny = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        assert!(principal_sqrt_psd(&tiny).is_ok());
    }

    #[test]
    fn svd_basic_cases() {
        let s = svd(&DenseMatrix::identity(3, 3)).unwrap();
        assert_relative_eq!(s.singular_values, DenseVector::from_element(3, 1.0), epsilon = 1e-14);

        let u = DenseVector::from_vec(vec![2.0, 0.0, 0.0]);
        let v = DenseVector::from_vec(vec![0.0, 3.0, 0.0]);
        let s = svd(&(&u * v.transpose())).unwrap();
        assert_relative_eq!(s.singular_values[0], 6.0, epsilon = 1e-12);
        assert!(s.singular_values[1].abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_gaussian(4, 3, &mut rng);
        let s = svd(&m).unwrap();
        assert!(relative_error(&s.reconstruct(), &m) < 1e-8);
        for w in s.singular_values.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert_relative_eq!(s.u.transpose() * &s.u, DenseMatrix::identity(3, 3), epsilon = 1e-12);
        assert_relative_eq!(s.v.transpose() * &s.v, DenseMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let m = DenseMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(svd(&m).is_err());
    }

    #[test]
    fn kron_sum_matches_definition() {
        let c = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]);
        let d = DenseMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        let ks = kron_sum(&c, &d).unwrap();
        assert_eq!(ks.shape(), (6, 6));
        // (C (+) D) vec(B) = vec(B C^T + D B) for B of shape d x c
        let b = DenseMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 + 0.5);
        let lhs = &ks * vec_of(&b);
        let rhs = vec_of(&(&b * c.transpose() + &d * &b));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn null_space_and_min_norm() {
        let x = DenseMatrix::from_row_slice(1, 2, &[0.5, 1.0]);
        let n = null_space(&x, RANK_TOL).unwrap();
        assert_eq!(n.ncols(), 1);
        assert!((&x * &n).norm() < 1e-12);
        let y = DenseMatrix::from_row_slice(1, 1, &[1.1]);
        let b = min_norm_solution(&x, &y, RANK_TOL).unwrap();
        assert_relative_eq!(b[(0, 0)], 0.44, epsilon = 1e-12);
        assert_relative_eq!(b[(1, 0)], 0.88, epsilon = 1e-12);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_orthogonal(5, &mut rng);
        assert_relative_eq!(q.transpose() * &q, DenseMatrix::identity(5, 5), epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn sqrt_commutes_with_conjugation(seed in any::<u64>(), n in 1usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = random_psd(n, &mut rng);
                let q = random_orthogonal(n, &mut rng);
                let lhs = principal_sqrt_psd(&(&q * &s * q.transpose())).unwrap();
                let rhs = &q * principal_sqrt_psd(&s).unwrap() * q.transpose();
                prop_assert!((lhs - &rhs).norm() <= 1e-8 * rhs.norm().max(1.0));
            }

            #[test]
            fn singular_values_orthogonally_invariant(seed in any::<u64>(), r in 1usize..6, c in 1usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_gaussian(r, c, &mut rng);
                let p = random_orthogonal(r, &mut rng);
                let q = random_orthogonal(c, &mut rng);
                let a = svd(&m).unwrap().singular_values;
                let b = svd(&(&p * &m * &q)).unwrap().singular_values;
                prop_assert!((a - b).amax() < 1e-8 * m.norm().max(1.0));
            }
        }
    }
}
