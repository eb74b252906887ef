//! Damped Newton minimization of smooth convex functions over an affine subspace.

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-12, max_iter: 200 }
    }
}

/// Minimizes `f(base + basis z)` over `z`, returning the minimizing point in the ambient space.
pub fn minimize_affine<F, G, H>(
    base: &DenseVector,
    basis: &DenseMatrix,
    f: F,
    grad: G,
    hess: H,
    opts: NewtonOptions,
) -> Result<DenseVector>
where
    F: Fn(&DenseVector) -> Result<f64>,
    G: Fn(&DenseVector) -> Result<DenseVector>,
    H: Fn(&DenseVector) -> Result<DenseMatrix>,
{
    if basis.ncols() == 0 {
        return Ok(base.clone());
    }
    let mut z = DenseVector::zeros(basis.ncols());
    let mut x = base.clone();
    let mut fx = f(&x)?;
    for _ in 0..opts.max_iter {
        let gz = basis.transpose() * grad(&x)?;
        if gz.norm() <= opts.grad_tol {
            return Ok(x);
        }
        let hz = basis.transpose() * hess(&x)? * basis;
        let dir = match hz.clone().cholesky() {
            Some(ch) => -ch.solve(&gz),
            None => -gz.clone(),
        };
        let slope = gz.dot(&dir);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let z_try = &z + &dir * step;
            let x_try = base + basis * &z_try;
            if let Ok(f_try) = f(&x_try) {
                if f_try.is_finite() && f_try <= fx + 1e-4 * step * slope {
                    z = z_try;
                    x = x_try;
                    fx = f_try;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // no further decrease representable in floating point
            return Ok(x);
        }
    }
    let gz = basis.transpose() * grad(&x)?;
    if gz.norm() <= opts.grad_tol.max(1e-8) {
        Ok(x)
    } else {
        Err(Error::Domain("Newton iteration did not converge"))
    }
}
