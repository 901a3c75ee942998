//! Small dense complex matrices.
//!
//! Everything in this crate works with systems of size at most 4, so the
//! matrix support is hand-rolled: row-major storage, LU with partial
//! pivoting, minors by index selection, Faddeev-LeVerrier characteristic
//! polynomials and Durand-Kerner eigenvalues with a Newton polish. No
//! external linear-algebra dependency is worth the weight at these sizes.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qcore::{ONE, ZERO};

#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, ONE);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Domain("ragged matrix rows".into()));
        }
        Ok(CMat { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of range");
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of range");
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }

    pub fn mul(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.at(i, k);
                if aik == ZERO {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.at(i, j) + aik * other.at(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    pub fn add(&self, other: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(&other.data) {
            *x += y;
        }
        out
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(&other.data) {
            *x -= y;
        }
        out
    }

    pub fn scaled(&self, s: Complex64) -> CMat {
        let mut out = self.clone();
        for x in out.data.iter_mut() {
            *x *= s;
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        assert_eq!(self.rows, self.cols, "trace needs a square matrix");
        (0..self.rows).map(|i| self.at(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &CMat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    /// Submatrix keeping the listed row and column indices, in the order
    /// given. Indices must be in range; repetitions are allowed nowhere in
    /// this crate but not checked.
    pub fn submatrix(&self, keep_rows: &[usize], keep_cols: &[usize]) -> CMat {
        let mut out = CMat::zeros(keep_rows.len(), keep_cols.len());
        for (i, &r) in keep_rows.iter().enumerate() {
            for (j, &c) in keep_cols.iter().enumerate() {
                out.set(i, j, self.at(r, c));
            }
        }
        out
    }

    /// Determinant of the submatrix on the listed rows and columns. The
    /// empty selection has determinant 1 (the usual convention for minors
    /// indexed by empty sets).
    pub fn minor(&self, keep_rows: &[usize], keep_cols: &[usize]) -> Result<Complex64> {
        if keep_rows.len() != keep_cols.len() {
            return Err(Error::Domain("minor needs equally many rows and columns".into()));
        }
        self.submatrix(keep_rows, keep_cols).det()
    }

    /// Determinant by LU with partial pivoting; exact zeros are fine.
    pub fn det(&self) -> Result<Complex64> {
        if self.rows != self.cols {
            return Err(Error::Domain("determinant needs a square matrix".into()));
        }
        let n = self.rows;
        if n == 0 {
            return Ok(ONE);
        }
        let mut lu = self.data.clone();
        let mut det = ONE;
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[k * n + k].norm();
            for r in k + 1..n {
                let m = lu[r * n + k].norm();
                if m > best {
                    best = m;
                    piv = r;
                }
            }
            if best == 0.0 {
                return Ok(ZERO);
            }
            if piv != k {
                for c in 0..n {
                    lu.swap(k * n + c, piv * n + c);
                }
                det = -det;
            }
            let pivot = lu[k * n + k];
            det *= pivot;
            for r in k + 1..n {
                let f = lu[r * n + k] / pivot;
                for c in k + 1..n {
                    let v = lu[r * n + c] - f * lu[k * n + c];
                    lu[r * n + c] = v;
                }
                lu[r * n + k] = f;
            }
        }
        Ok(det)
    }

    /// Solve self * X = rhs by LU with partial pivoting.
    pub fn solve(&self, rhs: &CMat) -> Result<CMat> {
        if self.rows != self.cols {
            return Err(Error::Domain("solve needs a square matrix".into()));
        }
        if rhs.rows != self.rows {
            return Err(Error::Domain("right-hand side height mismatch".into()));
        }
        let n = self.rows;
        let scale = self.max_abs().max(1e-300);
        let mut lu = self.data.clone();
        let mut x = rhs.clone();
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[k * n + k].norm();
            for r in k + 1..n {
                let m = lu[r * n + k].norm();
                if m > best {
                    best = m;
                    piv = r;
                }
            }
            // relative pivot floor: declares near-singular systems instead
            // of amplifying roundoff into garbage
            if best < 1e-13 * scale {
                return Err(Error::SingularSolution(format!(
                    "pivot {best:.3e} below threshold at column {k}"
                )));
            }
            if piv != k {
                for c in 0..n {
                    lu.swap(k * n + c, piv * n + c);
                }
                for c in 0..x.cols {
                    let a = x.at(k, c);
                    let b = x.at(piv, c);
                    x.set(k, c, b);
                    x.set(piv, c, a);
                }
            }
            let pivot = lu[k * n + k];
            for r in k + 1..n {
                let f = lu[r * n + k] / pivot;
                for c in k + 1..n {
                    let v = lu[r * n + c] - f * lu[k * n + c];
                    lu[r * n + c] = v;
                }
                for c in 0..x.cols {
                    let v = x.at(r, c) - f * x.at(k, c);
                    x.set(r, c, v);
                }
            }
        }
        for k in (0..n).rev() {
            for c in 0..x.cols {
                let mut s = x.at(k, c);
                for j in k + 1..n {
                    s -= lu[k * n + j] * x.at(j, c);
                }
                x.set(k, c, s / lu[k * n + k]);
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<CMat> {
        self.solve(&CMat::identity(self.rows))
    }

    /// Monic characteristic polynomial coefficients c with
    /// p(x) = sum_k c[k] x^k, c[n] = 1, by Faddeev-LeVerrier.
    pub fn charpoly(&self) -> Result<Vec<Complex64>> {
        if self.rows != self.cols {
            return Err(Error::Domain("characteristic polynomial needs a square matrix".into()));
        }
        let n = self.rows;
        let mut c = vec![ZERO; n + 1];
        c[n] = ONE;
        let mut m = self.clone();
        for k in 1..=n {
            let ck = -m.trace() / Complex64::new(k as f64, 0.0);
            c[n - k] = ck;
            if k < n {
                let mut shifted = m.clone();
                for i in 0..n {
                    shifted.set(i, i, shifted.at(i, i) + ck);
                }
                m = self.mul(&shifted);
            }
        }
        Ok(c)
    }

    /// All eigenvalues, sorted lexicographically by (re, im).
    pub fn eigenvalues(&self) -> Result<Vec<Complex64>> {
        let mut roots = poly_roots(&self.charpoly()?)?;
        sort_lexicographic(&mut roots);
        Ok(roots)
    }
}

/// Deterministic ordering used everywhere eigenvalue lists are exposed.
pub fn sort_lexicographic(vals: &mut [Complex64]) {
    vals.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
}

fn polyval(coeffs: &[Complex64], x: Complex64) -> Complex64 {
    let mut v = ZERO;
    for &c in coeffs.iter().rev() {
        v = v * x + c;
    }
    v
}

fn polyval_deriv(coeffs: &[Complex64], x: Complex64) -> Complex64 {
    let mut v = ZERO;
    for (k, &c) in coeffs.iter().enumerate().skip(1).rev() {
        v = v * x + c * Complex64::new(k as f64, 0.0);
    }
    v
}

/// Roots of a monic polynomial (coefficient of x^degree must be 1) by
/// Durand-Kerner iteration polished with Newton steps. Residuals are
/// checked against 1e-10 times the coefficient scale.
pub fn poly_roots(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let deg = coeffs.len().saturating_sub(1);
    if deg == 0 {
        return Ok(Vec::new());
    }
    if (coeffs[deg] - ONE).norm() > 1e-12 {
        return Err(Error::Domain("poly_roots expects a monic polynomial".into()));
    }
    // Cauchy-style inclusion radius for the initial circle
    let radius = 1.0 + coeffs[..deg].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..deg)
        .map(|j| seed.powu(j as u32 + 1) * radius)
        .collect();
    for _ in 0..400 {
        let mut worst = 0.0f64;
        for j in 0..deg {
            let mut denom = ONE;
            for k in 0..deg {
                if k != j {
                    denom *= roots[j] - roots[k];
                }
            }
            if denom == ZERO {
                // coincident iterates: nudge and keep going
                roots[j] += Complex64::new(1e-8 * radius, 1e-8 * radius);
                worst = f64::MAX;
                continue;
            }
            let step = polyval(coeffs, roots[j]) / denom;
            roots[j] -= step;
            worst = worst.max(step.norm());
        }
        if worst < 1e-14 * radius {
            break;
        }
    }
    // Newton polish sharpens simple roots to machine precision
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let d = polyval_deriv(coeffs, *r);
            if d == ZERO {
                break;
            }
            *r -= polyval(coeffs, *r) / d;
        }
    }
    let scale = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
    for &r in &roots {
        let res = polyval(coeffs, r).norm();
        if !(res < 1e-10 * scale.max(radius.powi(deg as i32))) {
            return Err(Error::Rootfind(format!(
                "residual {res:.3e} at root {r} exceeds target"
            )));
        }
    }
    Ok(roots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::c64;

    fn sample3() -> CMat {
        CMat::from_rows(vec![
            vec![c64(1.2, 0.3), c64(-0.7, 0.1), c64(0.4, -0.9)],
            vec![c64(0.0, 1.1), c64(2.0, -0.4), c64(-1.3, 0.2)],
            vec![c64(0.8, 0.0), c64(0.5, 0.6), c64(-0.9, 1.4)],
        ])
        .unwrap()
    }

    #[test]
    fn solve_recovers_known_solution_and_inverse_roundtrips() {
        let a = sample3();
        let x_known = CMat::from_rows(vec![
            vec![c64(0.3, -0.2), c64(1.0, 0.0)],
            vec![c64(-1.1, 0.5), c64(0.2, 0.9)],
            vec![c64(0.6, 0.6), c64(-0.4, 0.1)],
        ])
        .unwrap();
        let b = a.mul(&x_known);
        let x = a.solve(&b).unwrap();
        assert!(x.max_abs_diff(&x_known) < 1e-12);
        let inv = a.inverse().unwrap();
        assert!(a.mul(&inv).max_abs_diff(&CMat::identity(3)) < 1e-12);
    }

    #[test]
    fn determinant_is_multiplicative() {
        let a = sample3();
        let b = CMat::from_rows(vec![
            vec![c64(0.0, -0.5), c64(1.4, 0.0), c64(0.3, 0.3)],
            vec![c64(2.1, 0.1), c64(0.0, 0.0), c64(-0.6, 1.0)],
            vec![c64(-0.2, 0.7), c64(0.9, -1.1), c64(1.0, 0.0)],
        ])
        .unwrap();
        let lhs = a.mul(&b).det().unwrap();
        let rhs = a.det().unwrap() * b.det().unwrap();
        assert!((lhs - rhs).norm() < 1e-12 * rhs.norm().max(1.0));
    }

    #[test]
    fn minor_matches_hand_expansion() {
        let a = sample3();
        // rows {0,2}, cols {0,1}: 2x2 determinant by hand
        let hand = a.at(0, 0) * a.at(2, 1) - a.at(0, 1) * a.at(2, 0);
        let m = a.minor(&[0, 2], &[0, 1]).unwrap();
        assert!((m - hand).norm() < 1e-14);
        // empty minor is 1
        assert_eq!(a.minor(&[], &[]).unwrap(), ONE);
    }

    #[test]
    fn eigenvalues_of_diagonal_matrix_are_its_entries() {
        let d = CMat::from_rows(vec![
            vec![c64(2.0, 1.0), ZERO, ZERO],
            vec![ZERO, c64(-0.5, 0.3), ZERO],
            vec![ZERO, ZERO, c64(0.1, -2.0)],
        ])
        .unwrap();
        let mut expect = vec![c64(2.0, 1.0), c64(-0.5, 0.3), c64(0.1, -2.0)];
        sort_lexicographic(&mut expect);
        let eig = d.eigenvalues().unwrap();
        for (e, x) in eig.iter().zip(&expect) {
            assert!((e - x).norm() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_eigenvalues_match_quadratic_formula() {
        let a = CMat::from_rows(vec![
            vec![c64(1.0, 1.0), c64(2.0, 0.0)],
            vec![c64(3.0, 0.0), c64(-1.0, 0.0)],
        ])
        .unwrap();
        let tr = a.trace();
        let det = a.det().unwrap();
        let disc = (tr * tr - 4.0 * det).sqrt();
        let mut expect = vec![(tr + disc) / 2.0, (tr - disc) / 2.0];
        sort_lexicographic(&mut expect);
        let eig = a.eigenvalues().unwrap();
        for (e, x) in eig.iter().zip(&expect) {
            assert!((e - x).norm() < 1e-12);
        }
    }

    #[test]
    fn eigenvalue_symmetric_functions_satisfy_vieta() {
        let a = CMat::from_rows(vec![
            vec![c64(0.9, -0.2), c64(1.1, 0.4), c64(-0.3, 0.0), c64(0.2, 0.5)],
            vec![c64(-0.6, 0.8), c64(1.5, 0.0), c64(0.7, -0.7), c64(0.0, 0.3)],
            vec![c64(0.4, 0.4), c64(-1.0, 0.1), c64(-0.8, 0.9), c64(1.2, 0.0)],
            vec![c64(0.1, -1.3), c64(0.6, 0.2), c64(0.5, 0.5), c64(2.1, -0.6)],
        ])
        .unwrap();
        let eig = a.eigenvalues().unwrap();
        let sum: Complex64 = eig.iter().sum();
        let prod: Complex64 = eig.iter().product();
        assert!((sum - a.trace()).norm() < 1e-10);
        assert!((prod - a.det().unwrap()).norm() < 1e-10);
    }

    #[test]
    fn singular_solve_is_reported() {
        let a = CMat::from_rows(vec![
            vec![c64(1.0, 0.0), c64(2.0, 0.0)],
            vec![c64(2.0, 0.0), c64(4.0, 0.0)],
        ])
        .unwrap();
        match a.solve(&CMat::identity(2)) {
            Err(Error::SingularSolution(_)) => {}
            other => panic!("expected SingularSolution, got {other:?}"),
        }
        assert_eq!(a.det().unwrap(), ZERO);
    }
}
