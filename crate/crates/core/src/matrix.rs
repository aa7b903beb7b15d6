//! Dense complex matrices and the Hermitian primitives the filter relies on.
//!
//! [`ComplexMatrix`] wraps a heap-allocated `nalgebra` matrix of
//! [`Complex64`] entries. Everything here is sized for the small systems that
//! appear in filtering problems (a few dozen dimensions at most); eigenvalue
//! routines use a dense Hermitian eigensolver.
//!
//! Tolerances are relative to the Frobenius norm so that results do not
//! depend on the unit convention chosen for the Planck constant.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Clamping window for tiny negative eigenvalues in [`factor_psd`].
pub const PSD_CLAMP_TOL: f64 = 1e-10;
/// Definiteness threshold used by [`solve_hpd`].
pub const HPD_TOL: f64 = 1e-12;

/// Dense complex matrix stored in double precision.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<Complex64>);

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// A 1×1 matrix.
    pub fn scalar(value: Complex64) -> Self {
        Self(DMatrix::from_element(1, 1, value))
    }

    /// A 1×1 matrix holding a real number.
    pub fn real_scalar(value: f64) -> Self {
        Self::scalar(Complex64::new(value, 0.0))
    }

    /// `value · I`.
    pub fn scaled_identity(n: usize, value: f64) -> Self {
        Self(DMatrix::identity(n, n) * Complex64::new(value, 0.0))
    }

    pub fn from_diagonal(diag: &[Complex64]) -> Self {
        let n = diag.len();
        Self(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                diag[i]
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[Complex64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries given for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(Self(DMatrix::from_row_slice(rows, cols, entries)))
    }

    /// Builds a matrix from nested rows.
    ///
    /// # Panics
    ///
    /// Panics when the rows are ragged or empty.
    pub fn from_rows<R: AsRef<[Complex64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        assert!(r > 0, "matrix needs at least one row");
        let c = rows[0].as_ref().len();
        let mut flat = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged rows");
            flat.extend_from_slice(row.as_ref());
        }
        Self(DMatrix::from_row_slice(r, c, &flat))
    }

    /// Builds a matrix with real entries from nested rows.
    pub fn from_real_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let complex: Vec<Vec<Complex64>> = rows
            .iter()
            .map(|row| {
                row.as_ref()
                    .iter()
                    .map(|&x| Complex64::new(x, 0.0))
                    .collect()
            })
            .collect();
        Self::from_rows(&complex)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> Complex64) -> Self {
        Self(DMatrix::from_fn(rows, cols, f))
    }

    pub fn from_nalgebra(inner: DMatrix<Complex64>) -> Self {
        Self(inner)
    }

    pub fn as_nalgebra(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_nalgebra(self) -> DMatrix<Complex64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    /// Entries in row-major order.
    pub fn row_major(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(&self.0 * Complex64::new(factor, 0.0))
    }

    pub fn scale_complex(&self, factor: Complex64) -> Self {
        Self(&self.0 * factor)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// `(M + M⁺)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Matrix product with a dimension check.
    pub fn try_mul(&self, rhs: &Self) -> Result<Self> {
        if self.cols() != rhs.rows() {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        Ok(Self(&self.0 * &rhs.0))
    }

    /// Sum with a dimension check.
    pub fn try_add(&self, rhs: &Self) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(Error::Dimension(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        Ok(Self(&self.0 + &rhs.0))
    }

    /// `[[self, upper_right], [lower_left, lower_right]]`.
    pub fn block2x2(
        upper_left: &Self,
        upper_right: &Self,
        lower_left: &Self,
        lower_right: &Self,
    ) -> Result<Self> {
        let (r1, c1) = upper_left.shape();
        let (r2, c2) = lower_right.shape();
        if upper_right.shape() != (r1, c2) || lower_left.shape() != (r2, c1) {
            return Err(Error::Dimension("inconsistent block shapes".into()));
        }
        let mut out = DMatrix::zeros(r1 + r2, c1 + c2);
        out.view_mut((0, 0), (r1, c1)).copy_from(&upper_left.0);
        out.view_mut((0, c1), (r1, c2)).copy_from(&upper_right.0);
        out.view_mut((r1, 0), (r2, c1)).copy_from(&lower_left.0);
        out.view_mut((r1, c1), (r2, c2)).copy_from(&lower_right.0);
        Ok(Self(out))
    }

    /// Sub-block starting at `(row, col)`.
    pub fn block(&self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        Self(self.0.view((row, col), (rows, cols)).into_owned())
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix{:?}[", self.shape())?;
        for i in 0..self.rows() {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                let z = self.0[(i, j)];
                write!(f, "{}{:+}i", z.re, z.im)?;
            }
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, idx: (usize, usize)) -> &Complex64 {
        &self.0[idx]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, idx: (usize, usize)) -> &mut Complex64 {
        &mut self.0[idx]
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&ComplexMatrix> for &ComplexMatrix {
            type Output = ComplexMatrix;
            fn $method(self, rhs: &ComplexMatrix) -> ComplexMatrix {
                ComplexMatrix(&self.0 $op &rhs.0)
            }
        }
        impl $trait<ComplexMatrix> for ComplexMatrix {
            type Output = ComplexMatrix;
            fn $method(self, rhs: ComplexMatrix) -> ComplexMatrix {
                ComplexMatrix(self.0 $op rhs.0)
            }
        }
        impl $trait<&ComplexMatrix> for ComplexMatrix {
            type Output = ComplexMatrix;
            fn $method(self, rhs: &ComplexMatrix) -> ComplexMatrix {
                ComplexMatrix(self.0 $op &rhs.0)
            }
        }
        impl $trait<ComplexMatrix> for &ComplexMatrix {
            type Output = ComplexMatrix;
            fn $method(self, rhs: ComplexMatrix) -> ComplexMatrix {
                ComplexMatrix(&self.0 $op rhs.0)
            }
        }
    };
}

forward_binop!(Add, add, +);
forward_binop!(Sub, sub, -);
forward_binop!(Mul, mul, *);

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        self.0 += &rhs.0;
    }
}

impl Neg for ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        ComplexMatrix(-self.0)
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        ComplexMatrix(-&self.0)
    }
}

/// Conjugate transpose, `result[i,j] = conj(m[j,i])`.
pub fn adjoint(m: &ComplexMatrix) -> ComplexMatrix {
    m.adjoint()
}

/// Frobenius norm of `M − M⁺`.
pub fn hermitian_residual(m: &ComplexMatrix) -> Result<f64> {
    ensure_square(m)?;
    Ok((m - m.adjoint()).frobenius_norm())
}

fn ensure_square(m: &ComplexMatrix) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        })
    }
}

/// Eigenvalues (ascending) of the Hermitian part of `h`.
pub fn hermitian_eigenvalues(h: &ComplexMatrix) -> Result<Vec<f64>> {
    ensure_square(h)?;
    if h.rows() == 0 {
        return Ok(Vec::new());
    }
    let eig = h.hermitian_part().0.symmetric_eigen();
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Smallest eigenvalue of `(H + H⁺)/2`.
pub fn min_eigenvalue_hermitian(h: &ComplexMatrix) -> Result<f64> {
    let values = hermitian_eigenvalues(h)?;
    Ok(values.first().copied().unwrap_or(0.0))
}

/// Solves `H·X = B` for Hermitian positive definite `H`.
pub fn solve_hpd(h: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    ensure_square(h)?;
    if h.rows() != b.rows() {
        return Err(Error::Dimension(format!(
            "system matrix is {}x{} but right-hand side has {} rows",
            h.rows(),
            h.cols(),
            b.rows()
        )));
    }
    let sym = h.hermitian_part();
    let min = min_eigenvalue_hermitian(&sym)?;
    if min <= HPD_TOL * sym.frobenius_norm() || min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    let chol = sym.0.clone().cholesky().ok_or(Error::NotPositiveDefinite {
        min_eigenvalue: min,
    })?;
    let mut x = chol.solve(&b.0);
    // One step of iterative refinement.
    let residual = &b.0 - &sym.0 * &x;
    x += chol.solve(&residual);
    let x = ComplexMatrix(x);
    if !x.is_finite() {
        return Err(Error::NonFinite("solve_hpd"));
    }
    Ok(x)
}

/// Factor `L` with `L·L⁺ = H` for Hermitian positive semidefinite `H`.
///
/// Strictly positive definite inputs get their lower-triangular Cholesky
/// factor. Singular inputs go through the eigendecomposition, with
/// eigenvalues in `[-1e-10·‖H‖, 0)` clamped to zero.
pub fn factor_psd(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    ensure_square(h)?;
    let n = h.rows();
    let sym = h.hermitian_part();
    let norm = sym.frobenius_norm();
    if norm == 0.0 {
        return Ok(ComplexMatrix::zeros(n, n));
    }
    let eig = sym.0.clone().symmetric_eigen();
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < -PSD_CLAMP_TOL * norm {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
        });
    }
    if min > HPD_TOL * norm {
        if let Some(chol) = sym.0.clone().cholesky() {
            return Ok(ComplexMatrix(chol.l()));
        }
    }
    let mut factor = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = Complex64::new(lambda.max(0.0).sqrt(), 0.0);
        for i in 0..n {
            factor[(i, j)] *= s;
        }
    }
    Ok(ComplexMatrix(factor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn adjoint_examples() {
        assert_eq!(
            adjoint(&ComplexMatrix::identity(2)),
            ComplexMatrix::identity(2)
        );
        let m = ComplexMatrix::from_rows(&[[c(0.0, 0.0), c(0.0, 1.0)], [c(0.0, 0.0), c(0.0, 0.0)]]);
        let expected =
            ComplexMatrix::from_rows(&[[c(0.0, 0.0), c(0.0, 0.0)], [c(0.0, -1.0), c(0.0, 0.0)]]);
        assert_eq!(adjoint(&m), expected);
    }

    #[test]
    fn hermitian_residual_examples() {
        let d = ComplexMatrix::from_real_rows(&[[1.0, 0.0], [0.0, 2.0]]);
        assert_eq!(hermitian_residual(&d).unwrap(), 0.0);
        let u = ComplexMatrix::from_real_rows(&[[0.0, 1.0], [0.0, 0.0]]);
        assert!((hermitian_residual(&u).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let rect = ComplexMatrix::zeros(2, 3);
        assert!(matches!(
            hermitian_residual(&rect),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn min_eigenvalue_examples() {
        assert!(
            (min_eigenvalue_hermitian(&ComplexMatrix::identity(4)).unwrap() - 1.0).abs() < 1e-14
        );
        let m = ComplexMatrix::from_real_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        assert!((min_eigenvalue_hermitian(&m).unwrap() - 1.0).abs() < 1e-14);
        let nu = 0.0;
        let d = ComplexMatrix::from_real_rows(&[[nu, 0.0], [0.0, nu + 1.0]]);
        assert!(min_eigenvalue_hermitian(&d).unwrap().abs() < 1e-15);
        assert!(min_eigenvalue_hermitian(&ComplexMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn solve_hpd_examples() {
        let b =
            ComplexMatrix::from_rows(&[[c(1.0, 2.0), c(-3.0, 0.5)], [c(0.0, 1.0), c(4.0, 0.0)]]);
        let x = solve_hpd(&ComplexMatrix::identity(2), &b).unwrap();
        assert!((x - &b).frobenius_norm() < 1e-15);

        let x = solve_hpd(
            &ComplexMatrix::scaled_identity(3, 2.0),
            &ComplexMatrix::identity(3),
        )
        .unwrap();
        assert!((x - ComplexMatrix::scaled_identity(3, 0.5)).frobenius_norm() < 1e-15);

        let nu = 1.0;
        let n_plus_i = ComplexMatrix::scaled_identity(1, nu) + ComplexMatrix::identity(1);
        let x = solve_hpd(&n_plus_i, &ComplexMatrix::identity(1)).unwrap();
        assert!((x[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn solve_hpd_rejects_indefinite() {
        let h = ComplexMatrix::from_real_rows(&[[1.0, 0.0], [0.0, -1.0]]);
        match solve_hpd(&h, &ComplexMatrix::identity(2)) {
            Err(Error::NotPositiveDefinite { min_eigenvalue }) => {
                assert!((min_eigenvalue + 1.0).abs() < 1e-14)
            }
            other => panic!("unexpected {other:?}"),
        }
        let singular = ComplexMatrix::from_real_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        assert!(solve_hpd(&singular, &ComplexMatrix::identity(2)).is_err());
    }

    #[test]
    fn factor_psd_examples() {
        let l = factor_psd(&ComplexMatrix::identity(3)).unwrap();
        assert!((&l * l.adjoint() - ComplexMatrix::identity(3)).frobenius_norm() < 1e-15);

        let nu = 1.0;
        let h = ComplexMatrix::from_real_rows(&[[nu, nu], [nu, nu + 1.0]]);
        let l = factor_psd(&h).unwrap();
        assert!((&l * l.adjoint() - &h).frobenius_norm() <= 1e-10 * (1.0 + h.frobenius_norm()));
        assert_eq!(
            l[(0, 1)],
            c(0.0, 0.0),
            "positive definite input gets a lower factor"
        );

        let z = factor_psd(&ComplexMatrix::zeros(2, 2)).unwrap();
        assert_eq!(z, ComplexMatrix::zeros(2, 2));
    }

    #[test]
    fn factor_psd_singular_and_clamped() {
        // ν = 0 joint noise block: rank one.
        let h = ComplexMatrix::from_real_rows(&[[0.0, 0.0], [0.0, 1.0]]);
        let l = factor_psd(&h).unwrap();
        assert!((&l * l.adjoint() - &h).frobenius_norm() < 1e-14);

        let h = ComplexMatrix::from_real_rows(&[[1.0, 0.0], [0.0, -1e-13]]);
        let l = factor_psd(&h).unwrap();
        assert!((&l * l.adjoint() - &h).frobenius_norm() < 1e-12);

        let h = ComplexMatrix::from_real_rows(&[[1.0, 0.0], [0.0, -1e-3]]);
        assert!(matches!(
            factor_psd(&h),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = ComplexMatrix> {
        prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), rows * cols).prop_map(move |v| {
            let entries: Vec<Complex64> = v.into_iter().map(|(re, im)| c(re, im)).collect();
            ComplexMatrix::from_row_major(rows, cols, &entries).unwrap()
        })
    }

    fn arb_square() -> impl Strategy<Value = ComplexMatrix> {
        (1usize..=8).prop_flat_map(|n| arb_matrix(n, n))
    }

    proptest! {
        #[test]
        fn adjoint_is_involution(m in (1usize..5, 1usize..5).prop_flat_map(|(r, c)| arb_matrix(r, c))) {
            prop_assert_eq!(m.adjoint().adjoint(), m);
        }

        #[test]
        fn adjoint_reverses_products((a, b) in (1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(r, k, c)| (arb_matrix(r, k), arb_matrix(k, c)))) {
            let lhs = (&a * &b).adjoint();
            let rhs = b.adjoint() * a.adjoint();
            prop_assert!((lhs - rhs).frobenius_norm() <= 1e-12);
        }

        #[test]
        fn symmetrized_is_hermitian(m in arb_square()) {
            let s = &m + m.adjoint();
            prop_assert_eq!(hermitian_residual(&s).unwrap(), 0.0);
        }

        #[test]
        fn factor_reconstructs_psd(m in (1usize..=8, 1usize..=8).prop_flat_map(|(n, k)| arb_matrix(n, k))) {
            // Rank-deficient whenever k < n.
            let h = &m * m.adjoint();
            let l = factor_psd(&h).unwrap();
            let err = (&l * l.adjoint() - &h).frobenius_norm();
            prop_assert!(err <= 1e-10 * (1.0 + h.frobenius_norm()), "err {}", err);
        }

        #[test]
        fn solve_hpd_small_residual((m, b) in (1usize..=8, 1usize..4)
            .prop_flat_map(|(n, k)| (arb_matrix(n, n), arb_matrix(n, k)))) {
            let n = m.rows();
            let h = &m * m.adjoint() + ComplexMatrix::identity(n);
            let x = solve_hpd(&h, &b).unwrap();
            let res = (&h * &x - &b).frobenius_norm();
            prop_assert!(res <= 1e-12 * b.frobenius_norm().max(1e-300) + 1e-300, "res {}", res);
        }
    }
}
