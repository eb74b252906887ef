//! Regression datasets and the fixed fixtures used throughout the tests.

use alloc::format;

use crate::error::{mismatch, Result};
use crate::linalg::{self, ensure_finite, DenseMatrix, DenseVector};

/// Inputs `x` (n x d), targets `y` (n x c) and cached second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DenseMatrix,
    y: DenseMatrix,
    gram: DenseMatrix,
    xty: DenseMatrix,
}

impl Dataset {
    pub fn new(x: DenseMatrix, y: DenseMatrix) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(mismatch("Dataset::new", format!("x has {} rows, y has {}", x.nrows(), y.nrows())));
        }
        ensure_finite(&x, "dataset inputs")?;
        ensure_finite(&y, "dataset targets")?;
        let gram = x.transpose() * &x;
        let xty = x.transpose() * &y;
        Ok(Self { x, y, gram, xty })
    }

    pub fn scalar_targets(x: DenseMatrix, y: &DenseVector) -> Result<Self> {
        let y = DenseMatrix::from_column_slice(y.len(), 1, y.as_slice());
        Self::new(x, y)
    }

    /// Identity inputs with targets `beta_star^T`, so that the Gram matrix is `I_d`.
    pub fn whitened(beta_star: &DenseMatrix) -> Self {
        let d = beta_star.nrows();
        Self::new(DenseMatrix::identity(d, d), beta_star.clone()).expect("finite teacher")
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn c(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn y(&self) -> &DenseMatrix {
        &self.y
    }

    pub fn gram(&self) -> &DenseMatrix {
        &self.gram
    }

    pub fn xty(&self) -> &DenseMatrix {
        &self.xty
    }

    /// `X^T X beta - X^T Y`, the loss gradient with respect to a linear predictor.
    pub fn loss_gradient(&self, beta: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_beta(beta, "loss_gradient")?;
        Ok(&self.gram * beta - &self.xty)
    }

    pub fn loss(&self, beta: &DenseMatrix) -> Result<f64> {
        self.check_beta(beta, "loss")?;
        Ok(0.5 * (&self.x * beta - &self.y).norm_squared())
    }

    pub fn min_norm_solution(&self) -> Result<DenseMatrix> {
        linalg::min_norm_solution(&self.x, &self.y, linalg::RANK_TOL)
    }

    fn check_beta(&self, beta: &DenseMatrix, context: &'static str) -> Result<()> {
        if beta.shape() != (self.d(), self.c()) {
            return Err(mismatch(
                context,
                format!("beta is {:?}, expected {:?}", beta.shape(), (self.d(), self.c())),
            ));
        }
        Ok(())
    }
}

/// Two-dimensional fixtures with a single output.
pub mod fixtures {
    use super::*;

    /// A fixture dataset plus its minimum-norm teacher and a reference initial predictor.
    #[derive(Debug, Clone)]
    pub struct Fixture {
        pub data: Dataset,
        pub beta_star: DenseVector,
        pub beta0: DenseVector,
    }

    /// Whitened inputs, teacher `(0, 1)`, initial predictor `(-1, 0)`.
    pub fn whitened() -> Fixture {
        let beta_star = DenseVector::from_vec(alloc::vec![0.0, 1.0]);
        let data = Dataset::whitened(&DenseMatrix::from_column_slice(2, 1, beta_star.as_slice()));
        Fixture { data, beta_star, beta0: DenseVector::from_vec(alloc::vec![-1.0, 0.0]) }
    }

    /// One sample `x = (0.5, 1)`, `y = 1.1`, giving a one-dimensional null space.
    pub fn low_rank() -> Fixture {
        let x = DenseMatrix::from_row_slice(1, 2, &[0.5, 1.0]);
        let data = Dataset::scalar_targets(x, &DenseVector::from_vec(alloc::vec![1.1])).expect("finite fixture");
        Fixture {
            data,
            beta_star: DenseVector::from_vec(alloc::vec![0.44, 0.88]),
            beta0: DenseVector::from_vec(alloc::vec![0.4, 0.05]),
        }
    }

    /// Unit null-space direction of the low-rank fixture.
    pub fn low_rank_null_direction() -> DenseVector {
        DenseVector::from_vec(alloc::vec![2.0, -1.0]) / 5.0_f64.sqrt()
    }
}
