//! Small dense complex matrices and the Hermitian eigensolver used by the
//! alignment iterations.
//!
//! Everything here is sized for antenna arrays of a handful of elements, so
//! the routines favour simplicity over blocking or SIMD.

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Tolerance on `‖A − A†‖∞` accepted by [`hermitian_eigen`].
pub const HERMITIAN_TOL: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Real diagonal matrix.
    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    /// Column vector.
    pub fn column(values: &[Complex64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// Entries i.i.d. circularly-symmetric complex Gaussian with unit variance.
    pub fn random_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        Self::from_fn(rows, cols, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * scale, im * scale)
        })
    }

    /// `cols` orthonormal columns in `C^rows`, from Gram-Schmidt on a Gaussian draw.
    pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        loop {
            let g = Self::random_gaussian(rows, cols, rng);
            if let Some(q) = g.orthonormalize_columns() {
                return q;
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Extracts column `c` as an `rows x 1` matrix.
    pub fn col(&self, c: usize) -> Self {
        Self::from_fn(self.rows, 1, |r, _| self[(r, c)])
    }

    /// Keeps the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.rows, cols.len(), |r, c| self[(r, cols[c])])
    }

    /// Multiplies every entry of column `c` by `factor`.
    pub fn scale_column(&mut self, c: usize, factor: Complex64) {
        for r in 0..self.rows {
            self[(r, c)] *= factor;
        }
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `‖A − A†‖∞` measured entrywise.
    pub fn hermitian_defect(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for r in 0..self.rows {
            for c in r..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst
    }

    /// `‖M†M − I‖∞`, the departure of the columns from orthonormality.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = &self.adjoint() * self;
        gram.sub(&Self::identity(self.cols)).max_abs()
    }

    /// Modified Gram-Schmidt. `None` if the columns are numerically dependent.
    pub fn orthonormalize_columns(&self) -> Option<Self> {
        let mut q = self.clone();
        for c in 0..self.cols {
            for prev in 0..c {
                let mut proj = Complex64::new(0.0, 0.0);
                for r in 0..self.rows {
                    proj += q[(r, prev)].conj() * q[(r, c)];
                }
                for r in 0..self.rows {
                    let v = q[(r, prev)];
                    q[(r, c)] -= proj * v;
                }
            }
            let norm = (0..self.rows).map(|r| q[(r, c)].norm_sqr()).sum::<f64>().sqrt();
            if norm < 1e-10 {
                return None;
            }
            for r in 0..self.rows {
                q[(r, c)] /= norm;
            }
        }
        Some(q)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(
            self.cols, rhs.rows,
            "cannot multiply {}x{} by {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Eigen-decomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: ComplexMatrix,
}

/// Cyclic complex Jacobi eigensolver.
///
/// Each rotation first removes the phase of the pivot `a_pq` with a diagonal
/// unitary, then applies a real Jacobi rotation to annihilate it.
pub fn hermitian_eigen(a: &ComplexMatrix) -> Result<HermitianEigen> {
    if a.rows != a.cols {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition of a {}x{} matrix",
            a.rows, a.cols
        )));
    }
    let defect = a.hermitian_defect();
    if defect.is_nan() || defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian(defect));
    }
    let n = a.rows;
    // symmetrise away rounding noise
    let mut m = ComplexMatrix::from_fn(n, n, |r, c| 0.5 * (a[(r, c)] + a[(c, r)].conj()));
    for i in 0..n {
        m[(i, i)].im = 0.0;
    }
    let mut v = ComplexMatrix::identity(n);

    let scale = m.frobenius_norm_sqr().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].re.total_cmp(&m[(j, j)].re));
    let values = order.iter().map(|&i| m[(i, i)].re).collect();
    let vectors = v.select_columns(&order);
    Ok(HermitianEigen { values, vectors })
}

fn rotate(m: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    let g = apq.norm();
    if g == 0.0 {
        return;
    }
    let app = m[(p, p)].re;
    let aqq = m[(q, q)].re;
    let phase = apq / g;
    let theta = (aqq - app) / (2.0 * g);
    let t = if theta.is_infinite() {
        0.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = m.rows;

    // J = [[c, s], [-s e^{-iφ}, c e^{-iφ}]] on the (p, q) plane.
    let j_qp = -phase.conj() * s;
    let j_qq = phase.conj() * c;
    // M <- M J
    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = mkp * c + mkq * j_qp;
        m[(k, q)] = mkp * s + mkq * j_qq;
    }
    // M <- J† M
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = mpk * c + mqk * j_qp.conj();
        m[(q, k)] = mpk * s + mqk * j_qq.conj();
    }
    m[(p, q)] = Complex64::new(0.0, 0.0);
    m[(q, p)] = Complex64::new(0.0, 0.0);
    m[(p, p)].im = 0.0;
    m[(q, q)].im = 0.0;
    // V <- V J
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * c + vkq * j_qp;
        v[(k, q)] = vkp * s + vkq * j_qq;
    }
}

/// `d` orthonormal columns spanning the eigenspace of the `d` smallest
/// eigenvalues of a Hermitian matrix.
pub fn smallest_eigvecs(q: &ComplexMatrix, d: usize) -> Result<ComplexMatrix> {
    if d == 0 || d > q.rows() {
        return Err(Error::InvalidParameter(format!(
            "cannot take {d} eigenvectors of a {}x{} matrix",
            q.rows(),
            q.cols()
        )));
    }
    let eig = hermitian_eigen(q)?;
    let idx: Vec<usize> = (0..d).collect();
    Ok(eig.vectors.select_columns(&idx))
}

/// Singular values in descending order, via the eigenvalues of `M†M`.
pub fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    let gram = &m.adjoint() * m;
    let eig = hermitian_eigen(&gram).expect("Gram matrix is Hermitian by construction");
    let mut sv: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    sv.reverse();
    sv
}

/// Orthonormal basis of the orthogonal complement of the unit column `u`.
pub fn orthonormal_complement(u: &ComplexMatrix) -> ComplexMatrix {
    assert_eq!(u.cols, 1);
    let n = u.rows;
    let mut basis: Vec<Vec<Complex64>> = vec![u.data.clone()];
    for e in 0..n {
        if basis.len() == n {
            break;
        }
        let mut cand = vec![Complex64::new(0.0, 0.0); n];
        cand[e] = Complex64::new(1.0, 0.0);
        for b in &basis {
            let proj: Complex64 = b.iter().zip(&cand).map(|(bi, ci)| bi.conj() * ci).sum();
            for (ci, bi) in cand.iter_mut().zip(b) {
                *ci -= proj * bi;
            }
        }
        let norm = cand.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cand.iter_mut().for_each(|z| *z /= norm);
            basis.push(cand);
        }
    }
    ComplexMatrix::from_fn(n, n - 1, |r, c| basis[c + 1][r])
}

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting. `None` when `a` is numerically singular.
pub fn solve_linear(a: &ComplexMatrix, b: &[Complex64]) -> Option<Vec<Complex64>> {
    let n = a.rows;
    assert_eq!(a.cols, n, "solve_linear needs a square matrix");
    assert_eq!(b.len(), n);
    let mut m = a.data.clone();
    let mut x = b.to_vec();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].norm().total_cmp(&m[j * n + col].norm()))
            .expect("non-empty range");
        if m[pivot * n + col].norm() <= 1e-14 * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            x.swap(col, pivot);
        }
        let inv = m[col * n + col].inv();
        for row in (col + 1)..n {
            let f = m[row * n + col] * inv;
            if f.re == 0.0 && f.im == 0.0 {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[row * n + k] -= f * v;
            }
            let xc = x[col];
            x[row] -= f * xc;
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in (col + 1)..n {
            acc -= m[col * n + k] * x[k];
        }
        x[col] = acc / m[col * n + col];
    }
    Some(x)
}

/// Least-squares / minimum-norm solution of `j x = b` for any shape of `j`.
pub fn solve_least_squares(j: &ComplexMatrix, b: &[Complex64]) -> Option<Vec<Complex64>> {
    let jh = j.adjoint();
    if j.rows <= j.cols {
        // x = J† (J J†)^{-1} b
        let y = solve_linear(&(j * &jh), b)?;
        let y = ComplexMatrix::column(&y);
        Some((&jh * &y).data)
    } else {
        let rhs = &jh * &ComplexMatrix::column(b);
        solve_linear(&(&jh * j), &rhs.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        let g = ComplexMatrix::random_gaussian(n, n, rng);
        g.add(&g.adjoint()).scale(0.5)
    }

    /// Real roots of the characteristic cubic of a 3x3 Hermitian matrix,
    /// by the trigonometric method.
    fn cubic_eigenvalues(a: &ComplexMatrix) -> [f64; 3] {
        let a11 = a[(0, 0)].re;
        let a22 = a[(1, 1)].re;
        let a33 = a[(2, 2)].re;
        let a12 = a[(0, 1)];
        let a13 = a[(0, 2)];
        let a23 = a[(1, 2)];
        let tr = a11 + a22 + a33;
        let minors = a11 * a22 + a11 * a33 + a22 * a33
            - a12.norm_sqr()
            - a13.norm_sqr()
            - a23.norm_sqr();
        let det = a11 * a22 * a33 + 2.0 * (a12 * a23 * a13.conj()).re
            - a11 * a23.norm_sqr()
            - a22 * a13.norm_sqr()
            - a33 * a12.norm_sqr();
        // λ³ − tr λ² + minors λ − det = 0; shift λ = x + tr/3
        let p = minors - tr * tr / 3.0;
        let q = -2.0 * tr.powi(3) / 27.0 + tr * minors / 3.0 - det;
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * r)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        let mut roots = [0.0; 3];
        for (k, root) in roots.iter_mut().enumerate() {
            *root = r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + tr / 3.0;
        }
        roots.sort_by(f64::total_cmp);
        roots
    }

    #[test]
    fn diagonal_picks_second_basis_vector() {
        let q = ComplexMatrix::diag(&[3.0, 1.0, 2.0]);
        let v = smallest_eigvecs(&q, 1).unwrap();
        assert!((v[(1, 0)].norm() - 1.0).abs() < 1e-12);
        assert!(v[(0, 0)].norm() < 1e-12);
        assert!(v[(2, 0)].norm() < 1e-12);
    }

    #[test]
    fn identity_any_unit_vector() {
        let q = ComplexMatrix::identity(3);
        let v = smallest_eigvecs(&q, 1).unwrap();
        let residual = (&q * &v).sub(&v).frobenius_norm_sqr().sqrt();
        assert!(residual < 1e-10);
        assert!((v.frobenius_norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut q = ComplexMatrix::identity(2);
        q[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(smallest_eigvecs(&q, 1), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn rayleigh_quotient_matches_cubic_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_hermitian(3, &mut rng);
            let x = smallest_eigvecs(&a, 1).unwrap();
            let rq = (&(&x.adjoint() * &a) * &x)[(0, 0)].re;
            let oracle = cubic_eigenvalues(&a)[0];
            assert!((rq - oracle).abs() < 1e-8, "{rq} vs {oracle}");
        }
    }

    #[test]
    fn full_decomposition_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=6 {
            let a = random_hermitian(n, &mut rng);
            let eig = hermitian_eigen(&a).unwrap();
            assert!(eig.vectors.orthonormality_defect() < 1e-12);
            let rebuilt = &(&eig.vectors * &ComplexMatrix::diag(&eig.values)) * &eig.vectors.adjoint();
            assert!(rebuilt.sub(&a).max_abs() < 1e-12);
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn singular_values_of_diagonal() {
        let m = ComplexMatrix::diag(&[-2.0, 0.5, 1.0]);
        let sv = singular_values(&m);
        assert!((sv[0] - 2.0).abs() < 1e-12);
        assert!((sv[1] - 1.0).abs() < 1e-12);
        assert!((sv[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_solve_recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = ComplexMatrix::random_gaussian(6, 6, &mut rng);
        let x = ComplexMatrix::random_gaussian(6, 1, &mut rng);
        let b = &a * &x;
        let got = solve_linear(&a, b.as_slice()).unwrap();
        for (g, w) in got.iter().zip(x.as_slice()) {
            assert!((g - w).norm() < 1e-10);
        }
        assert!(solve_linear(&ComplexMatrix::zeros(2, 2), &[c(1.0, 0.0), c(0.0, 0.0)]).is_none());
    }

    #[test]
    fn minimum_norm_solution_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let j = ComplexMatrix::random_gaussian(3, 5, &mut rng);
        let b = ComplexMatrix::random_gaussian(3, 1, &mut rng);
        let x = solve_least_squares(&j, b.as_slice()).unwrap();
        let jx = &j * &ComplexMatrix::column(&x);
        assert!(jx.sub(&b).max_abs() < 1e-10);
    }

    #[test]
    fn complement_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let u = ComplexMatrix::random_orthonormal(3, 1, &mut rng);
        let b = orthonormal_complement(&u);
        assert_eq!(b.shape(), (3, 2));
        assert!(b.orthonormality_defect() < 1e-12);
        assert!((&u.adjoint() * &b).max_abs() < 1e-12);
    }

    #[test]
    fn random_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = ComplexMatrix::random_orthonormal(4, 2, &mut rng);
        assert!(q.orthonormality_defect() < 1e-12);
    }
}
