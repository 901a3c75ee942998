//! Differential counterparts of the q-constructions: Gamma-function
//! connection constants of the generalized confluent hypergeometric
//! equation, Stokes data of the rank-one system dF/dz = (E + A/z)F with E
//! the unit in the corner, and trend drivers that push the q-side objects
//! along a schedule q -> 1 against these limits.
//!
//! Everything here is q-free except where a [`QContext`] is taken as a
//! budget and tolerance carrier, and the trend drivers, which rebuild a
//! context per schedule entry.

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::qcore::{
    branched_power, branched_power_scaled, c64, ensure_finite, log_q, q_exponential, q_gamma,
    theta_ratio, BranchedPoint, QContext, ScaledAccumulator, ScaledComplex, ONE, ZERO,
};
use crate::qcore::pochhammer_ratio_scaled;
use crate::qseries::{basic_phi, HypergeometricParams};
use crate::qsystem::{
    build_diagonalized, principal_transform, sq_closed, submatrix_eigen, SystemSpec,
    MAX_SYSTEM_SIZE,
};
use crate::resummation::{nf, SpiralDirection};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Minimum distance of every exponent difference from the integer lattice.
/// Inside this margin the Gamma factors of the connection data degenerate.
pub const INTEGER_MARGIN: f64 = 0.05;

/// Angular clearance (radians) kept from every admissibility window edge.
pub const WINDOW_MARGIN: f64 = 0.05;

/// Default schedule for the q -> 1 trends. 0.9999 resolves the limits too
/// but sits at the edge of f64 cancellation in the theta quotients, so the
/// default stops one step earlier.
pub const DEFAULT_Q_SCHEDULE: [f64; 3] = [0.9, 0.99, 0.999];

const GAMMA_POLE_MARGIN: f64 = 1e-8;

const TREND_RATIO_BOUND: f64 = 0.8;
const TREND_FINAL_BOUND: f64 = 5e-2;

/// Distance from w to the nearest integer on the real axis.
fn int_distance(w: Complex64) -> f64 {
    (w.re - w.re.round()).hypot(w.im)
}

/// Distance from w to the nearest nonpositive integer.
fn nonpos_int_distance(w: Complex64) -> f64 {
    let k = w.re.round().min(0.0);
    (w.re - k).hypot(w.im)
}

// Lanczos coefficients, g = 7, nine terms; relative error below 1e-11 on
// the reflected half plane.
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Gamma function on the cut plane, poles rejected within a fixed margin.
pub fn gamma(z: Complex64) -> Result<Complex64> {
    ensure_finite(z, "gamma argument")?;
    if nonpos_int_distance(z) < GAMMA_POLE_MARGIN {
        return Err(Error::Pole(format!("gamma pole at {z}")));
    }
    if z.re < 0.5 {
        // reflection keeps the shifted argument where the rational
        // approximation converges
        let s = (PI * z).sin();
        return Ok(PI / (s * gamma(ONE - z)?));
    }
    let zm = z - ONE;
    let mut a = c64(LANCZOS[0], 0.0);
    for (k, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (zm + k as f64);
    }
    let t = zm + 7.5;
    Ok((2.0 * PI).sqrt() * t.powc(zm + 0.5) * (-t).exp() * a)
}

/// prod Gamma(num) / prod Gamma(den), kept in scaled form so long products
/// cannot overflow before they recombine.
fn gamma_ratio_scaled(num: &[Complex64], den: &[Complex64]) -> Result<ScaledComplex> {
    let mut acc = ScaledComplex::one();
    for &g in num {
        acc = acc.mul_complex(gamma(g)?);
    }
    for &g in den {
        acc = acc.div(ScaledComplex::from_complex(gamma(g)?))?;
    }
    Ok(acc)
}

/// Entire hypergeometric series pFq(upper; lower; z), p <= q. The context
/// only supplies the tolerance and the term budget; the series itself is
/// q-free.
pub fn hypergeometric_pfq(
    upper: &[Complex64],
    lower: &[Complex64],
    z: Complex64,
    ctx: &QContext,
) -> Result<Complex64> {
    if upper.len() > lower.len() {
        return Err(Error::Domain(format!(
            "series with {} upper and {} lower parameters is not entire",
            upper.len(),
            lower.len()
        )));
    }
    ensure_finite(z, "series argument")?;
    for &b in lower {
        if nonpos_int_distance(b) < GAMMA_POLE_MARGIN {
            return Err(Error::Pole(format!(
                "lower parameter {b} is a nonpositive integer"
            )));
        }
    }
    let mut term = ONE;
    let mut sum = ONE;
    let mut quiet = 0usize;
    for k in 0..ctx.max_series_terms {
        let kf = k as f64;
        let mut factor = ONE / (kf + 1.0);
        for &a in upper {
            factor *= a + kf;
        }
        for &b in lower {
            factor /= b + kf;
        }
        term *= factor * z;
        sum += term;
        if term.norm() <= ctx.tol * sum.norm().max(1.0) {
            quiet += 1;
            if quiet >= 3 {
                ensure_finite(sum, "series value")?;
                return Ok(sum);
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::TruncationBudget(format!(
        "hypergeometric series did not settle within {} terms at |z| = {:.3e}",
        ctx.max_series_terms,
        z.norm()
    )))
}

/// Sector of arguments at infinity. The two standard sectors overlap on
/// the upper half plane; explicit bounds cover everything else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sector {
    /// arg z in (-pi/2, 3pi/2).
    Plus,
    /// arg z in (-3pi/2, pi/2).
    Minus,
    Explicit { low: f64, high: f64 },
}

impl Sector {
    pub fn explicit(low: f64, high: f64) -> Result<Self> {
        if !low.is_finite() || !high.is_finite() || low >= high {
            return Err(Error::Domain(format!("empty sector ({low}, {high})")));
        }
        Ok(Sector::Explicit { low, high })
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Sector::Plus => (-PI / 2.0, 3.0 * PI / 2.0),
            Sector::Minus => (-3.0 * PI / 2.0, PI / 2.0),
            Sector::Explicit { low, high } => (low, high),
        }
    }

    pub fn contains(&self, argument: f64) -> bool {
        let (low, high) = self.bounds();
        low < argument && argument < high
    }

    /// Sign carried by the e^{+- i pi alpha} factors of the connection
    /// constants. Always an explicit choice of standard sector, never
    /// inferred from an argument.
    pub fn sign(&self) -> Result<f64> {
        match self {
            Sector::Plus => Ok(1.0),
            Sector::Minus => Ok(-1.0),
            Sector::Explicit { .. } => Err(Error::Domain(
                "connection constants need the upper or lower standard sector".into(),
            )),
        }
    }
}

/// Parameters of the generalized confluent hypergeometric equation
///
/// ```text
/// prod_{l=1}^{n} (th + beta_l - 1) y = z prod_{l=1}^{n-1} (th + alpha_l) y,
/// th = z d/dz,
/// ```
///
/// with the normalization beta_n = 1 fixed throughout; `alpha` and `beta`
/// hold the n-1 free parameters. The series solution at the origin is
/// pFq(alpha; beta; z) with p = q = n-1.
#[derive(Debug, Clone)]
pub struct ClassicalEquationSpec {
    pub n: usize,
    pub alpha: Vec<Complex64>,
    pub beta: Vec<Complex64>,
}

impl ClassicalEquationSpec {
    /// Genericity margins: pairwise alpha differences, pairwise beta
    /// differences (beta_n = 1 included) and every alpha - beta crossing
    /// stay [`INTEGER_MARGIN`] away from the integers.
    pub fn new(alpha: Vec<Complex64>, beta: Vec<Complex64>) -> Result<Self> {
        if alpha.len() != beta.len() || alpha.is_empty() {
            return Err(Error::Domain(format!(
                "need equally many alpha and beta parameters (>= 1 each), got {} and {}",
                alpha.len(),
                beta.len()
            )));
        }
        let n = alpha.len() + 1;
        if n > MAX_SYSTEM_SIZE {
            return Err(Error::Domain(format!(
                "equation order {n} above the supported maximum {MAX_SYSTEM_SIZE}"
            )));
        }
        for &w in alpha.iter().chain(beta.iter()) {
            ensure_finite(w, "equation parameter")?;
        }
        let mut bf = beta.clone();
        bf.push(ONE);
        for i in 0..alpha.len() {
            for j in i + 1..alpha.len() {
                if int_distance(alpha[i] - alpha[j]) < INTEGER_MARGIN {
                    return Err(Error::Genericity(format!(
                        "alpha[{i}] - alpha[{j}] within margin of an integer"
                    )));
                }
            }
        }
        for i in 0..bf.len() {
            for j in i + 1..bf.len() {
                if int_distance(bf[i] - bf[j]) < INTEGER_MARGIN {
                    return Err(Error::Genericity(format!(
                        "beta[{i}] - beta[{j}] within margin of an integer"
                    )));
                }
            }
        }
        for (i, &a) in alpha.iter().enumerate() {
            for (j, &b) in bf.iter().enumerate() {
                if int_distance(a - b) < INTEGER_MARGIN {
                    return Err(Error::Genericity(format!(
                        "alpha[{i}] - beta[{j}] within margin of an integer"
                    )));
                }
            }
        }
        Ok(ClassicalEquationSpec { n, alpha, beta })
    }

    /// The beta list with the normalized beta_n = 1 appended.
    pub fn beta_full(&self) -> Vec<Complex64> {
        let mut bf = self.beta.clone();
        bf.push(ONE);
        bf
    }

    /// gamma = sum(alpha) - sum(beta) over the free lists: the power of z
    /// riding on the exponential solution e^z z^gamma.
    pub fn exponent_sum(&self) -> Complex64 {
        self.alpha.iter().sum::<Complex64>() - self.beta.iter().sum::<Complex64>()
    }
}

/// Power-type solution at infinity, index i in 0..n-1, normalized so that
/// h_i -> 1 as |z| grows in the sector; h_i(z) z^{-alpha_i} solves the
/// equation. The value is a balanced sum of entire series against the
/// z^{1 + alpha_i - beta_k} branches, so it converges everywhere and is
/// independent of the sector sign; the sector argument only pins which
/// branch domain the caller is working on.
pub fn h_infinity(
    spec: &ClassicalEquationSpec,
    i: usize,
    z: &BranchedPoint,
    sector: &Sector,
    ctx: &QContext,
) -> Result<Complex64> {
    let m = spec.n - 1;
    if i >= m {
        return Err(Error::Domain(format!(
            "solution index {i} out of range for {m} power-type solutions"
        )));
    }
    if !sector.contains(z.argument()) {
        return Err(Error::Domain(format!(
            "argument {:.6} outside the requested sector",
            z.argument()
        )));
    }
    let alpha = &spec.alpha;
    let bf = spec.beta_full();
    let zc = z.to_complex();
    let mut acc = ScaledAccumulator::new();
    for k in 0..spec.n {
        let mut num = Vec::new();
        let mut den = Vec::new();
        for l in 0..m {
            if l != i {
                num.push(ONE + alpha[i] - alpha[l]);
                den.push(bf[k] - alpha[l]);
            }
        }
        for l in 0..spec.n {
            if l != k {
                num.push(bf[k] - bf[l]);
                den.push(ONE + alpha[i] - bf[l]);
            }
        }
        let coeff = gamma_ratio_scaled(&num, &den)?;
        let upper: Vec<Complex64> = (0..m).map(|l| ONE + alpha[l] - bf[k]).collect();
        let lower: Vec<Complex64> = (0..spec.n)
            .filter(|&l| l != k)
            .map(|l| ONE + bf[l] - bf[k])
            .collect();
        let f = hypergeometric_pfq(&upper, &lower, zc, ctx)?;
        let pw = branched_power_scaled(z, ONE + alpha[i] - bf[k])?;
        acc.add(coeff.mul(pw).mul_complex(f));
    }
    acc.value().to_complex()
}

/// The branch of w continued from the anchor: the anchor's argument plus
/// the principal offset. Only valid while w stays clear of a loop around
/// the origin, which the small stencils here never leave.
fn branched_near(w: Complex64, anchor: &BranchedPoint) -> Result<BranchedPoint> {
    let rel = w / anchor.to_complex();
    BranchedPoint::new(w.norm(), anchor.argument() + rel.arg())
}

/// Relative residual of the equation at z for a candidate solution f,
/// with d/dz realized by the five-point stencil of step 4e-3 |z| and the
/// Euler operators composed from it. Compositions stay at fourth order,
/// and the step balances truncation against the noise amplification of
/// the stacked stencils, so genuine solutions land well below 1e-6.
pub fn confluent_operator_residual(
    spec: &ClassicalEquationSpec,
    f: &dyn Fn(&BranchedPoint) -> Result<Complex64>,
    z: &BranchedPoint,
) -> Result<f64> {
    let n = spec.n;
    let half = 2 * n as i64;
    let h = 4e-3 * z.modulus();
    let zc = z.to_complex();
    let grid: Vec<Complex64> = (-half..=half).map(|j| zc + j as f64 * h).collect();
    let mut values = Vec::with_capacity(grid.len());
    for &w in &grid {
        values.push(f(&branched_near(w, z)?)?);
    }
    let center = values[half as usize].norm();
    // (th + c) g on the interior of the current window; each application
    // gives up two points per side
    let apply = |vals: &[Complex64], off: usize, c: Complex64| -> Vec<Complex64> {
        let mut out = Vec::with_capacity(vals.len() - 4);
        for t in 2..vals.len() - 2 {
            let d = (vals[t - 2] - 8.0 * vals[t - 1] + 8.0 * vals[t + 1] - vals[t + 2])
                / (12.0 * h);
            out.push(grid[off + t] * d + c * vals[t]);
        }
        out
    };
    let mut lhs = values.clone();
    let mut off = 0usize;
    for &b in &spec.beta_full() {
        lhs = apply(&lhs, off, b - ONE);
        off += 2;
    }
    let mut rhs = values;
    let mut off_r = 0usize;
    for &a in &spec.alpha {
        rhs = apply(&rhs, off_r, a);
        off_r += 2;
    }
    let lhs0 = lhs[0];
    let rhs0 = zc * rhs[rhs.len() / 2];
    let scale = center.max(lhs0.norm()).max(rhs0.norm()).max(1.0);
    Ok((lhs0 - rhs0).norm() / scale)
}

// Finite Laurent tails sum_k c[k] z^{top - k}; the operator algebra behind
// the exponential solution lives on these.
#[derive(Debug, Clone)]
struct Tail {
    top: i64,
    c: Vec<Complex64>,
}

impl Tail {
    fn monomial(p: i64) -> Tail {
        Tail { top: p, c: vec![ONE] }
    }

    fn bottom(&self) -> i64 {
        self.top - self.c.len() as i64 + 1
    }

    fn coeff_at(&self, p: i64) -> Complex64 {
        let k = self.top - p;
        if (0..self.c.len() as i64).contains(&k) {
            self.c[k as usize]
        } else {
            ZERO
        }
    }

    /// Multiplication by z^d.
    fn shifted(&self, d: i64) -> Tail {
        Tail {
            top: self.top + d,
            c: self.c.clone(),
        }
    }

    fn plus(&self, other: &Tail) -> Tail {
        let top = self.top.max(other.top);
        let bottom = self.bottom().min(other.bottom());
        let c = (bottom..=top)
            .rev()
            .map(|p| self.coeff_at(p) + other.coeff_at(p))
            .collect();
        Tail { top, c }
    }

    fn scaled(&self, s: Complex64) -> Tail {
        Tail {
            top: self.top,
            c: self.c.iter().map(|&x| s * x).collect(),
        }
    }

    /// z d/dz.
    fn theta(&self) -> Tail {
        let c = self
            .c
            .iter()
            .enumerate()
            .map(|(k, &x)| x * ((self.top - k as i64) as f64))
            .collect();
        Tail { top: self.top, c }
    }

    /// (th + z + c) applied to the tail.
    fn raise(&self, c: Complex64) -> Tail {
        self.shifted(1).plus(&self.theta()).plus(&self.scaled(c))
    }
}

/// Coefficients kappa_1, .., kappa_order of the exponential solution tail
///
/// ```text
/// y = e^z z^gamma u(z),    u(z) = 1 + sum_m kappa_m z^{-m},
/// ```
///
/// gamma = [`ClassicalEquationSpec::exponent_sum`]. Substituting y turns
/// every Euler operator th into th + z + gamma; matching Laurent
/// coefficients top down is then triangular. The top order cancels
/// identically and the next order vanishes exactly when gamma is the right
/// exponent, which is asserted rather than assumed.
pub fn exponential_tail(spec: &ClassicalEquationSpec, order: usize) -> Result<Vec<Complex64>> {
    let n = spec.n as i64;
    let gamma_shift = spec.exponent_sum();
    let basis: Vec<Tail> = (0..=order as i64)
        .map(|m| {
            let e = Tail::monomial(-m);
            let mut plus = e.clone();
            for &a in &spec.alpha {
                plus = plus.raise(gamma_shift + a);
            }
            let plus = plus.shifted(1);
            let mut minus = e;
            for &b in &spec.beta_full() {
                minus = minus.raise(gamma_shift + b - ONE);
            }
            plus.plus(&minus.scaled(-ONE))
        })
        .collect();
    let lead = basis[0].coeff_at(n - 1);
    let basis_scale = basis[0].c.iter().map(|x| x.norm()).fold(1.0, f64::max);
    if lead.norm() > 1e-8 * basis_scale {
        return Err(Error::RecursionSingular(format!(
            "exponent gamma fails to balance the leading order (residual {:.3e})",
            lead.norm()
        )));
    }
    let mut kappa = vec![ONE];
    for s in 1..=order as i64 {
        let p = n - 1 - s;
        let pivot = basis[s as usize].coeff_at(p);
        if pivot.norm() < 1e-8 {
            return Err(Error::RecursionSingular(format!(
                "recursion pivot vanishes at order {s}"
            )));
        }
        let mut sum = ZERO;
        for m in 0..s {
            sum += kappa[m as usize] * basis[m as usize].coeff_at(p);
        }
        kappa.push(-sum / pivot);
    }
    kappa.remove(0);
    Ok(kappa)
}

/// Optimally truncated value of 1 + sum_m kappa_m z^{-m}: the sum stops in
/// front of the first term that grows again, leaving a remainder of the
/// order of that term, about e^{-|z|} for these factorially divergent
/// tails.
pub fn exponential_tail_value(kappa: &[Complex64], z: Complex64) -> Result<Complex64> {
    ensure_finite(z, "tail argument")?;
    if z == ZERO {
        return Err(Error::Domain("tail value needs z != 0".into()));
    }
    let mut sum = ONE;
    let mut last = f64::INFINITY;
    for (m, &k) in kappa.iter().enumerate() {
        let term = k * z.powi(-(m as i32 + 1));
        let nrm = term.norm();
        if nrm > last {
            break;
        }
        sum += term;
        last = nrm;
    }
    Ok(sum)
}

/// Connection constants (C_1..C_{n-1}, K_n) of
///
/// ```text
/// f0(z) = sum_i C_i h_i(z) z^{-alpha_i} + K_n e^z z^gamma u(z)
/// ```
///
/// in the standard sector of the given sign. Each C_i carries the factor
/// e^{sign i pi alpha_i}; K_n is sector independent.
pub fn classical_connection_coefficients(
    spec: &ClassicalEquationSpec,
    sector: &Sector,
) -> Result<(Vec<Complex64>, Complex64)> {
    let sign = sector.sign()?;
    let m = spec.n - 1;
    let mut cs = Vec::with_capacity(m);
    for i in 0..m {
        let mut num: Vec<Complex64> = spec.beta.clone();
        let mut den = Vec::new();
        for l in 0..m {
            if l != i {
                num.push(spec.alpha[l] - spec.alpha[i]);
                den.push(spec.alpha[l]);
            }
        }
        for l in 0..m {
            den.push(spec.beta[l] - spec.alpha[i]);
        }
        let rot = (Complex64::i() * sign * PI * spec.alpha[i]).exp();
        cs.push(gamma_ratio_scaled(&num, &den)?.mul_complex(rot).to_complex()?);
    }
    let kn = gamma_ratio_scaled(&spec.beta, &spec.alpha)?.to_complex()?;
    Ok((cs, kn))
}

/// Evaluates both sides of the connection formula at z and returns the
/// relative residual. Meaningful once |z| is large enough that the
/// optimally truncated exponential tail resolves below the target; around
/// |z| = 20 the residual sits at the roundoff of the convergent series.
pub fn classical_connection_check(
    spec: &ClassicalEquationSpec,
    z: &BranchedPoint,
    sector: &Sector,
    ctx: &QContext,
) -> Result<f64> {
    if !sector.contains(z.argument()) {
        return Err(Error::Domain(format!(
            "argument {:.6} outside the requested sector",
            z.argument()
        )));
    }
    let zc = z.to_complex();
    let f0 = hypergeometric_pfq(&spec.alpha, &spec.beta, zc, ctx)?;
    let (cs, kn) = classical_connection_coefficients(spec, sector)?;
    let kappa = exponential_tail(spec, 40)?;
    let mut rhs = ZERO;
    let mut scale = f0.norm().max(1.0);
    for (i, &c) in cs.iter().enumerate() {
        let term =
            c * h_infinity(spec, i, z, sector, ctx)? * branched_power(z, -spec.alpha[i])?;
        scale = scale.max(term.norm());
        rhs += term;
    }
    let expo = kn
        * zc.exp()
        * branched_power(z, spec.exponent_sum())?
        * exponential_tail_value(&kappa, zc)?;
    scale = scale.max(expo.norm());
    rhs += expo;
    Ok((f0 - rhs).norm() / scale)
}

/// The rank-one system dF/dz = (E + A/z)F, E the unit matrix in the
/// corner, together with the principal transform diagonalizing the leading
/// block. Eigenvalue and border data are stored in the conjugated
/// arrowhead frame, and the solution matrices and Stokes data below all
/// live there.
#[derive(Debug, Clone)]
pub struct ClassicalSystemSpec {
    pub n: usize,
    pub a: CMat,
    /// Eigenvalues of A, sorted.
    pub lam_full: Vec<Complex64>,
    /// Eigenvalues of the leading (n-1) principal block, sorted.
    pub lam_sub: Vec<Complex64>,
    /// Eigenvalues of the leading (n-2) principal block, sorted.
    pub lam_subsub: Vec<Complex64>,
    /// Corner entry of the arrowhead, equal to A_nn and to
    /// sum(lam_full) - sum(lam_sub).
    pub corner: Complex64,
    pub p: CMat,
    pub p_inv: CMat,
    pub arrow: CMat,
    pub a_col: Vec<Complex64>,
    pub b_row: Vec<Complex64>,
}

impl ClassicalSystemSpec {
    /// Margins: the full eigenvalue differences, the sub block differences
    /// and every full-against-sub crossing stay [`INTEGER_MARGIN`] away
    /// from the integers (no resonance, no Gamma pole in the connection
    /// data), and the sub and sub-sub eigenvalues are separated so the
    /// principal transform is well posed.
    pub fn new(a: CMat) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Domain("system matrix must be square".into()));
        }
        if !(2..=MAX_SYSTEM_SIZE).contains(&n) {
            return Err(Error::Domain(format!(
                "system size {n} outside supported range 2..={MAX_SYSTEM_SIZE}"
            )));
        }
        let lam_full = submatrix_eigen(&a, n)?;
        let lam_sub = submatrix_eigen(&a, n - 1)?;
        let lam_subsub = submatrix_eigen(&a, n - 2)?;
        for i in 0..n {
            for j in i + 1..n {
                if int_distance(lam_full[i] - lam_full[j]) < INTEGER_MARGIN {
                    return Err(Error::Genericity(format!(
                        "eigenvalue difference lam[{i}] - lam[{j}] within margin of an integer"
                    )));
                }
            }
        }
        for i in 0..n - 1 {
            for j in i + 1..n - 1 {
                if int_distance(lam_sub[i] - lam_sub[j]) < INTEGER_MARGIN {
                    return Err(Error::Genericity(format!(
                        "sub eigenvalue difference [{i}] - [{j}] within margin of an integer"
                    )));
                }
            }
        }
        for j in 0..n {
            for i in 0..n - 1 {
                if int_distance(lam_full[j] - lam_sub[i]) < INTEGER_MARGIN {
                    return Err(Error::Genericity(format!(
                        "lam[{j}] - sub lam[{i}] within margin of an integer"
                    )));
                }
            }
        }
        let (p, p_inv, arrow, a_col, b_row) =
            principal_transform(&a, &lam_full, &lam_sub, &lam_subsub, INTEGER_MARGIN, 1e-13)?;
        let corner = arrow.at(n - 1, n - 1);
        Ok(ClassicalSystemSpec {
            n,
            a,
            lam_full,
            lam_sub,
            lam_subsub,
            corner,
            p,
            p_inv,
            arrow,
            a_col,
            b_row,
        })
    }
}

/// Fundamental solution at the origin in the arrowhead frame: column j
/// carries z^{lam_full_j}, every entry an entire balanced series times
/// that power.
pub fn classical_origin_solution(
    sys: &ClassicalSystemSpec,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<CMat> {
    let n = sys.n;
    let m = n - 1;
    let zc = z.to_complex();
    let mut out = CMat::zeros(n, n);
    for j in 0..n {
        let lower: Vec<Complex64> = (0..n)
            .filter(|&l| l != j)
            .map(|l| ONE + sys.lam_full[j] - sys.lam_full[l])
            .collect();
        let pw = branched_power(z, sys.lam_full[j])?;
        for i in 0..m {
            let upper: Vec<Complex64> = (0..m)
                .map(|l| {
                    let delta = if l == i { ONE } else { ZERO };
                    ONE + sys.lam_full[j] - sys.lam_sub[l] - delta
                })
                .collect();
            let f = hypergeometric_pfq(&upper, &lower, zc, ctx)?;
            let pre = sys.a_col[i] / (sys.lam_full[j] - sys.lam_sub[i]);
            out.set(i, j, pre * f * pw);
        }
        let upper: Vec<Complex64> = (0..m)
            .map(|l| ONE + sys.lam_full[j] - sys.lam_sub[l])
            .collect();
        let f = hypergeometric_pfq(&upper, &lower, zc, ctx)?;
        out.set(m, j, f * pw);
    }
    Ok(out)
}

/// The n-1 power-type columns of the solution at infinity in the arrowhead
/// frame; the remaining exponential column has no hypergeometric closed
/// form and is reached through the connection data instead. Column j
/// carries z^{lam_sub_j} and tends to the j-th unit vector times that
/// power; sign independent, the sector fixes the branch domain.
pub fn classical_infinity_solution(
    sys: &ClassicalSystemSpec,
    z: &BranchedPoint,
    sector: &Sector,
    ctx: &QContext,
) -> Result<CMat> {
    if !sector.contains(z.argument()) {
        return Err(Error::Domain(format!(
            "argument {:.6} outside the requested sector",
            z.argument()
        )));
    }
    let n = sys.n;
    let m = n - 1;
    let zc = z.to_complex();
    let mut out = CMat::zeros(n, m);
    for j in 0..m {
        let col_pw = branched_power(z, sys.lam_sub[j])?;
        for i in 0..n {
            let dij = if i == j { ONE } else { ZERO };
            let d = if i == m {
                -sys.b_row[j] / zc
            } else if i == j {
                ONE
            } else {
                sys.a_col[i] * sys.b_row[j] / ((sys.lam_sub[i] - sys.lam_sub[j] + ONE) * zc)
            };
            let mut acc = ScaledAccumulator::new();
            for k in 0..n {
                let mut num = Vec::new();
                let mut den = Vec::new();
                for l in 0..m {
                    if l != j {
                        let dil = if l == i { ONE } else { ZERO };
                        num.push(dil + sys.lam_sub[l] - sys.lam_sub[j] + ONE - dij);
                        den.push(dil + sys.lam_sub[l] - sys.lam_full[k]);
                    }
                }
                for l in 0..n {
                    if l != k {
                        num.push(sys.lam_full[l] - sys.lam_full[k]);
                        den.push(sys.lam_full[l] - sys.lam_sub[j] + ONE - dij);
                    }
                }
                let coeff = gamma_ratio_scaled(&num, &den)?;
                let upper: Vec<Complex64> = (0..m)
                    .map(|l| {
                        let dil = if l == i { ONE } else { ZERO };
                        ONE + sys.lam_full[k] - dil - sys.lam_sub[l]
                    })
                    .collect();
                let lower: Vec<Complex64> = (0..n)
                    .filter(|&l| l != k)
                    .map(|l| ONE + sys.lam_full[k] - sys.lam_full[l])
                    .collect();
                let f = hypergeometric_pfq(&upper, &lower, zc, ctx)?;
                let pw =
                    branched_power_scaled(z, sys.lam_full[k] - sys.lam_sub[j] + ONE - dij)?;
                acc.add(coeff.mul(pw).mul_complex(f));
            }
            out.set(i, j, d * acc.value().to_complex()? * col_pw);
        }
    }
    Ok(out)
}

/// Connection matrix F0 = Finf_{+-} U_{+-} in the arrowhead frame: the
/// first n-1 rows multiply the power-type columns, the last row the
/// exponential one. The last row carries no sector sign.
pub fn classical_u(sys: &ClassicalSystemSpec, sector: &Sector) -> Result<CMat> {
    let sign = sector.sign()?;
    let n = sys.n;
    let m = n - 1;
    let mut u = CMat::zeros(n, n);
    for j in 0..n {
        for i in 0..m {
            let mut num = Vec::new();
            let mut den = Vec::new();
            for l in 0..n {
                if l != j {
                    num.push(ONE + sys.lam_full[j] - sys.lam_full[l]);
                    den.push(ONE + sys.lam_sub[i] - sys.lam_full[l]);
                }
            }
            for l in 0..m {
                if l != i {
                    num.push(ONE + sys.lam_sub[i] - sys.lam_sub[l]);
                    den.push(ONE + sys.lam_full[j] - sys.lam_sub[l]);
                }
            }
            let rot = (Complex64::i() * sign * PI * (sys.lam_full[j] - sys.lam_sub[i])).exp();
            let pre = sys.a_col[i] / (sys.lam_full[j] - sys.lam_sub[i]);
            u.set(
                i,
                j,
                gamma_ratio_scaled(&num, &den)?
                    .mul_complex(pre * rot)
                    .to_complex()?,
            );
        }
        let mut num = Vec::new();
        let mut den = Vec::new();
        for l in 0..n {
            if l != j {
                num.push(ONE + sys.lam_full[j] - sys.lam_full[l]);
            }
        }
        for l in 0..m {
            den.push(ONE + sys.lam_full[j] - sys.lam_sub[l]);
        }
        u.set(m, j, gamma_ratio_scaled(&num, &den)?.to_complex()?);
    }
    Ok(u)
}

/// Stokes matrix S_- in the arrowhead frame: diagonal e^{-2 pi i lam_sub}
/// block, vanishing last column above the corner e^{-2 pi i a_nn}, and a
/// closed Gamma-product row underneath. Satisfies
/// S_- U_- = U_+ e^{-2 pi i diag(lam_full)}.
pub fn classical_s_minus(sys: &ClassicalSystemSpec) -> Result<CMat> {
    let n = sys.n;
    let m = n - 1;
    let tau = -2.0 * PI * Complex64::i();
    let mut s = CMat::zeros(n, n);
    for i in 0..m {
        s.set(i, i, (tau * sys.lam_sub[i]).exp());
    }
    s.set(m, m, (tau * sys.corner).exp());
    for j in 0..m {
        let mut acc = ScaledAccumulator::new();
        for k in 0..n {
            let mut num = Vec::new();
            let mut den = Vec::new();
            for l in 0..n {
                if l != k {
                    num.push(ONE + sys.lam_full[k] - sys.lam_full[l]);
                    num.push(sys.lam_full[l] - sys.lam_full[k]);
                    den.push(sys.lam_full[l] - sys.lam_sub[j] + ONE);
                }
            }
            for l in 0..m {
                if l != j {
                    num.push(sys.lam_sub[l] - sys.lam_sub[j] + ONE);
                    den.push(sys.lam_sub[l] - sys.lam_full[k]);
                }
                den.push(ONE + sys.lam_full[k] - sys.lam_sub[l]);
            }
            let rot = (tau * sys.lam_full[k]).exp();
            acc.add(gamma_ratio_scaled(&num, &den)?.mul_complex(rot));
        }
        s.set(m, j, -(sys.b_row[j] * acc.value().to_complex()?));
    }
    Ok(s)
}

/// q-deformed equation parameters with log_q a -> alpha and log_q b ->
/// beta as q -> 1: a = 1/(1 + (1-q) alpha), b = q/(1 + (1-q)(beta - 1)).
pub fn q_parameter_map(
    alpha: &[Complex64],
    beta: &[Complex64],
    q: f64,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if !(0.0 < q && q < 1.0) {
        return Err(Error::Domain(format!("deformation needs 0 < q < 1, got {q}")));
    }
    let s = 1.0 - q;
    let mut a = Vec::with_capacity(alpha.len());
    for &al in alpha {
        let d = ONE + s * al;
        if d.norm() < 1e-10 {
            return Err(Error::Pole(format!("1 + (1-q) alpha vanishes at alpha = {al}")));
        }
        a.push(ONE / d);
    }
    let mut b = Vec::with_capacity(beta.len());
    for &be in beta {
        let d = ONE + s * (be - ONE);
        if d.norm() < 1e-10 {
            return Err(Error::Pole(format!("1 + (1-q)(beta - 1) vanishes at beta = {be}")));
        }
        b.push(q / d);
    }
    Ok((a, b))
}

/// One tracked error sequence along a q schedule.
#[derive(Debug, Clone)]
pub struct TrendItem {
    pub name: String,
    pub errors: Vec<f64>,
}

impl TrendItem {
    /// Strict decay at the given ratio between consecutive schedule points
    /// and a final error under the bound; exact zeros pass every stage.
    pub fn passes(&self, ratio_bound: f64, final_bound: f64) -> bool {
        if self.errors.is_empty() || self.errors.iter().any(|e| !e.is_finite()) {
            return false;
        }
        for w in self.errors.windows(2) {
            if w[0] == 0.0 && w[1] == 0.0 {
                continue;
            }
            if w[1] >= ratio_bound * w[0] {
                return false;
            }
        }
        *self.errors.last().unwrap() < final_bound
    }
}

/// Convergence record for a family of quantities along a q -> 1 schedule.
#[derive(Debug, Clone)]
pub struct TrendReport {
    pub schedule: Vec<f64>,
    pub ratio_bound: f64,
    pub final_bound: f64,
    pub items: Vec<TrendItem>,
}

impl TrendReport {
    pub fn pass(&self) -> bool {
        !self.items.is_empty()
            && self
                .items
                .iter()
                .all(|it| it.passes(self.ratio_bound, self.final_bound))
    }
}

fn validate_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.len() < 2 {
        return Err(Error::Domain(
            "need at least two q values to resolve a trend".into(),
        ));
    }
    for &q in schedule {
        if !(0.0 < q && q < 1.0) {
            return Err(Error::Domain(format!("schedule value {q} outside (0, 1)")));
        }
    }
    for w in schedule.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Domain("schedule must increase toward 1".into()));
        }
    }
    Ok(())
}

/// The q-side of the scalar connection formula at one q.
#[derive(Debug, Clone)]
pub struct ScalarLimitSample {
    pub q: f64,
    /// Value of the deformed series solution at the origin.
    pub origin_value: Complex64,
    /// Pseudo-constant connection coefficients of the power directions.
    pub coefficients: Vec<Complex64>,
    /// Pseudo-constant coefficient of the exponential direction.
    pub corner_coefficient: Complex64,
    /// Resummed solutions at infinity, one per power direction.
    pub infinity_values: Vec<Complex64>,
}

/// Evaluates the q-deformation of the scalar connection data at one q and
/// one point: the deformed series at the origin, the theta-quotient
/// pseudo-constants, and the resummed solutions at infinity along the
/// direction lambda. The deformed parameters follow [`q_parameter_map`].
pub fn scalar_connection_sample(
    spec: &ClassicalEquationSpec,
    lambda: Complex64,
    z: &BranchedPoint,
    q: f64,
    ctx: &QContext,
) -> Result<ScalarLimitSample> {
    ensure_finite(lambda, "direction lambda")?;
    if lambda == ZERO {
        return Err(Error::Domain("direction lambda must be nonzero".into()));
    }
    let ctxq = QContext::with_tol(q, ctx.tol)?;
    let m = spec.n - 1;
    let (a, b) = q_parameter_map(&spec.alpha, &spec.beta, q)?;
    let s = 1.0 - q;
    let qn1 = ctxq.q_int(m as i64);
    let zc = z.to_complex();
    let prod_a: Complex64 = a.iter().product();
    let prod_b: Complex64 = b.iter().product();
    let ztil = s * zc * prod_b / (qn1 * prod_a);
    let mut upper = a.clone();
    upper.push(ZERO);
    let params = HypergeometricParams::basic(upper, b.clone(), &ctxq)?;
    let origin_value = basic_phi(&params, ztil, &ctxq)?;
    let mut coefficients = Vec::with_capacity(m);
    let mut infinity_values = Vec::with_capacity(m);
    for i in 0..m {
        let mut num = Vec::new();
        let mut den = Vec::new();
        for l in 0..m {
            if l != i {
                num.push(a[l]);
                den.push(a[l] / a[i]);
            }
            num.push(b[l] / a[i]);
            den.push(b[l]);
        }
        let poch = pochhammer_ratio_scaled(&num, &den, &ctxq)?;
        let th = theta_ratio(-(a[i] * ztil), -ztil, &ctxq)?;
        let pw = branched_power_scaled(z, log_q(a[i], &ctxq)?)?;
        coefficients.push(poch.mul(th).mul(pw).to_complex()?);
        let mut up = vec![a[i]];
        for l in 0..m {
            up.push(a[i] * q / b[l]);
        }
        let mut lo = Vec::new();
        for l in 0..m {
            if l != i {
                lo.push(a[i] * q / a[l]);
            }
        }
        let dir = qn1 * lambda / (s * a[i]);
        let w = qn1 / (a[i] * s * zc);
        let val = nf(&up, &lo, dir, w, &ctxq)?;
        infinity_values.push(val * branched_power(z, -log_q(a[i], &ctxq)?)?);
    }
    let mut acc = pochhammer_ratio_scaled(&a, &b, &ctxq)?;
    let mut expsum = ZERO;
    for l in 0..m {
        acc = acc.mul(theta_ratio(
            b[l] * s / (qn1 * lambda),
            a[l] * s / (qn1 * lambda),
            &ctxq,
        )?);
        expsum += log_q(b[l], &ctxq)? - log_q(a[l], &ctxq)?;
    }
    acc = acc.mul(theta_ratio(lambda * zc * prod_b / prod_a, lambda * zc, &ctxq)?);
    acc = acc.mul(branched_power_scaled(z, expsum)?);
    let corner_coefficient = acc.to_complex()?;
    Ok(ScalarLimitSample {
        q,
        origin_value,
        coefficients,
        corner_coefficient,
        infinity_values,
    })
}

/// Drives the scalar connection data along the q schedule and records how
/// far each piece sits from its differential limit: the origin series from
/// pFq, each pseudo-constant from the Gamma constant with the sector sign
/// picked by arg z, the corner constant from K_n, and each resummed
/// solution from h_i(z) z^{-alpha_i}. The admissibility window ties lambda
/// and arg z together; violations abort instead of producing a silent
/// sign error.
pub fn qlimit_connection(
    spec: &ClassicalEquationSpec,
    lambda: Complex64,
    z: &BranchedPoint,
    schedule: &[f64],
    ctx: &QContext,
) -> Result<TrendReport> {
    validate_schedule(schedule)?;
    ensure_finite(lambda, "direction lambda")?;
    if lambda == ZERO {
        return Err(Error::Domain("direction lambda must be nonzero".into()));
    }
    let al = lambda.arg();
    if al.abs() > PI - WINDOW_MARGIN {
        return Err(Error::WindowViolation(format!(
            "arg lambda = {al:.4} within margin of the cut at pi"
        )));
    }
    let w = z.argument();
    if w < -al - PI + WINDOW_MARGIN || w > -al + PI - WINDOW_MARGIN {
        return Err(Error::WindowViolation(format!(
            "arg z = {w:.4} outside (-arg lambda - pi, -arg lambda + pi) with margin"
        )));
    }
    if w.abs() < WINDOW_MARGIN {
        return Err(Error::WindowViolation(
            "arg z within margin of 0: the sector sign is undetermined".into(),
        ));
    }
    let sector = if w > 0.0 { Sector::Plus } else { Sector::Minus };
    let m = spec.n - 1;
    let zc = z.to_complex();
    let f0_target = hypergeometric_pfq(&spec.alpha, &spec.beta, zc, ctx)?;
    let (c_target, k_target) = classical_connection_coefficients(spec, &sector)?;
    let hwin = Sector::explicit(-al - PI, -al + PI)?;
    let mut h_targets = Vec::with_capacity(m);
    for i in 0..m {
        h_targets.push(h_infinity(spec, i, z, &hwin, ctx)? * branched_power(z, -spec.alpha[i])?);
    }
    let rel = |x: Complex64, t: Complex64| (x - t).norm() / t.norm().max(1.0);
    let mut origin_err = Vec::with_capacity(schedule.len());
    let mut coeff_err = vec![Vec::with_capacity(schedule.len()); m];
    let mut corner_err = Vec::with_capacity(schedule.len());
    let mut inf_err = vec![Vec::with_capacity(schedule.len()); m];
    for &q in schedule {
        let sample = scalar_connection_sample(spec, lambda, z, q, ctx)?;
        origin_err.push(rel(sample.origin_value, f0_target));
        for i in 0..m {
            coeff_err[i].push(rel(sample.coefficients[i], c_target[i]));
            inf_err[i].push(rel(sample.infinity_values[i], h_targets[i]));
        }
        corner_err.push(rel(sample.corner_coefficient, k_target));
    }
    let mut items = vec![TrendItem {
        name: "origin-series".into(),
        errors: origin_err,
    }];
    for (i, errs) in coeff_err.into_iter().enumerate() {
        items.push(TrendItem {
            name: format!("connection-coefficient-{}", i + 1),
            errors: errs,
        });
    }
    items.push(TrendItem {
        name: "corner-coefficient".into(),
        errors: corner_err,
    });
    for (i, errs) in inf_err.into_iter().enumerate() {
        items.push(TrendItem {
            name: format!("infinity-solution-{}", i + 1),
            errors: errs,
        });
    }
    Ok(TrendReport {
        schedule: schedule.to_vec(),
        ratio_bound: TREND_RATIO_BOUND,
        final_bound: TREND_FINAL_BOUND,
        items,
    })
}

fn stokes_windows(lambda: Complex64, mu: Complex64, z: &BranchedPoint) -> Result<()> {
    ensure_finite(lambda, "direction lambda")?;
    ensure_finite(mu, "direction mu")?;
    if lambda == ZERO || mu == ZERO {
        return Err(Error::Domain("directions must be nonzero".into()));
    }
    let al = lambda.arg();
    let am = mu.arg();
    if al.abs() > PI - WINDOW_MARGIN {
        return Err(Error::WindowViolation(format!(
            "arg lambda = {al:.4} within margin of the cut at pi"
        )));
    }
    if am.abs() > PI - WINDOW_MARGIN {
        return Err(Error::WindowViolation(format!(
            "arg mu = {am:.4} within margin of the cut at pi"
        )));
    }
    let w = z.argument();
    let low = (PI / 2.0).max(PI - am);
    let high = (3.0 * PI / 2.0).min(PI - al);
    if w < low + WINDOW_MARGIN || w > high - WINDOW_MARGIN {
        return Err(Error::WindowViolation(format!(
            "arg z = {w:.4} outside the admissible window ({low:.4}, {high:.4}) with margin"
        )));
    }
    Ok(())
}

fn qlimit_stokes_inner(
    sys: &ClassicalSystemSpec,
    lambda: Complex64,
    mu: Complex64,
    z: &BranchedPoint,
    schedule: &[f64],
    ctx: &QContext,
) -> Result<TrendReport> {
    validate_schedule(schedule)?;
    let target = classical_s_minus(sys)?;
    let scale = target.max_abs().max(1.0);
    let n = sys.n;
    let mut errors = Vec::with_capacity(schedule.len());
    for &q in schedule {
        let ctxq = QContext::with_tol(q, ctx.tol)?;
        let qspec = SystemSpec::new(sys.a.clone(), &ctxq)?;
        let dsys = build_diagonalized(&qspec, &ctxq)?;
        let datum = sq_closed(
            &dsys,
            SpiralDirection::new(lambda)?,
            SpiralDirection::new(mu)?,
            z,
            &ctxq,
        )?;
        // the exponent matrix of the q-system converges to the classical
        // residue exponents entrywise, so the column twist by its diagonal
        // carries S_q onto S_-
        let mut twisted = datum.entries.clone();
        for j in 0..n {
            let nu_j = if j < n - 1 { qspec.nu[j] } else { qspec.nu_last };
            let fac = (-2.0 * PI * Complex64::i() * nu_j).exp();
            for i in 0..n {
                twisted.set(i, j, twisted.at(i, j) * fac);
            }
        }
        errors.push(twisted.max_abs_diff(&target) / scale);
    }
    Ok(TrendReport {
        schedule: schedule.to_vec(),
        ratio_bound: TREND_RATIO_BOUND,
        final_bound: TREND_FINAL_BOUND,
        items: vec![TrendItem {
            name: "stokes-matrix".into(),
            errors,
        }],
    })
}

/// Trend of the q Stokes datum against the classical S_-: at each schedule
/// point the q-system is rebuilt over the same matrix, its closed Stokes
/// matrix evaluated at z along (lambda, mu), column-twisted by the
/// exponent diagonal, and compared with [`classical_s_minus`]. The
/// admissibility windows on (arg lambda, arg mu, arg z) are enforced.
pub fn qlimit_stokes(
    sys: &ClassicalSystemSpec,
    lambda: Complex64,
    mu: Complex64,
    z: &BranchedPoint,
    schedule: &[f64],
    ctx: &QContext,
) -> Result<TrendReport> {
    stokes_windows(lambda, mu, z)?;
    qlimit_stokes_inner(sys, lambda, mu, z, schedule, ctx)
}

/// Same computation as [`qlimit_stokes`] with the admissibility windows
/// skipped: a diagnostic probe whose report is expected to fail outside
/// the windows. The negative control in the verification suite relies on
/// getting a non-convergent trend back rather than an error.
pub fn qlimit_stokes_probe(
    sys: &ClassicalSystemSpec,
    lambda: Complex64,
    mu: Complex64,
    z: &BranchedPoint,
    schedule: &[f64],
    ctx: &QContext,
) -> Result<TrendReport> {
    qlimit_stokes_inner(sys, lambda, mu, z, schedule, ctx)
}

/// Elementary q -> 1 limits packaged as a trend: the log_q linearization,
/// the q-exponential against e^z, the q-gamma value at 1/2 against
/// sqrt(pi), and a theta quotient against a fractional power. All converge
/// at rate 1 - q, so they decay an order of magnitude per default
/// schedule step.
pub fn basic_limits_suite(schedule: &[f64], ctx: &QContext) -> Result<TrendReport> {
    validate_schedule(schedule)?;
    let alpha = c64(0.7, 0.3);
    let ze = c64(0.6, -0.4);
    let zt = c64(2.0, 0.0);
    let mut e_log = Vec::with_capacity(schedule.len());
    let mut e_exp = Vec::with_capacity(schedule.len());
    let mut e_gam = Vec::with_capacity(schedule.len());
    let mut e_theta = Vec::with_capacity(schedule.len());
    for &q in schedule {
        let ctxq = QContext::with_tol(q, ctx.tol)?;
        let s = 1.0 - q;
        e_log.push((log_q(ONE + s * alpha, &ctxq)? + alpha).norm());
        e_exp.push((q_exponential(ze, &ctxq)? - ze.exp()).norm());
        e_gam.push((q_gamma(c64(0.5, 0.0), &ctxq)? - PI.sqrt()).norm());
        let half_step = theta_ratio(zt, q.sqrt() * zt, &ctxq)?.to_complex()?;
        e_theta.push((half_step - zt.sqrt()).norm());
    }
    Ok(TrendReport {
        schedule: schedule.to_vec(),
        ratio_bound: TREND_RATIO_BOUND,
        final_bound: TREND_FINAL_BOUND,
        items: vec![
            TrendItem { name: "logq-linearization".into(), errors: e_log },
            TrendItem { name: "q-exponential".into(), errors: e_exp },
            TrendItem { name: "q-gamma-half".into(), errors: e_gam },
            TrendItem { name: "theta-power".into(), errors: e_theta },
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::c64;

    fn ctx() -> QContext {
        QContext::new(0.5).unwrap()
    }

    fn spec2() -> ClassicalEquationSpec {
        ClassicalEquationSpec::new(vec![c64(0.31, 0.40)], vec![c64(0.42, -0.30)]).unwrap()
    }

    fn spec3() -> ClassicalEquationSpec {
        ClassicalEquationSpec::new(
            vec![c64(0.31, 0.40), c64(-0.35, -0.22)],
            vec![c64(0.42, -0.30), c64(1.37, 0.26)],
        )
        .unwrap()
    }

    fn mat2() -> CMat {
        CMat::from_rows(vec![
            vec![c64(0.45, 0.28), c64(-0.52, 0.17)],
            vec![c64(0.33, -0.21), c64(-0.38, -0.30)],
        ])
        .unwrap()
    }

    fn mat3() -> CMat {
        CMat::from_rows(vec![
            vec![c64(0.286, 0.4495), c64(-0.242, 0.174), c64(0.1925, -0.3915)],
            vec![c64(0.099, -0.609), c64(-0.3355, 0.3625), c64(0.1595, 0.4785)],
            vec![c64(-0.132, 0.2465), c64(0.2255, -0.1305), c64(0.4015, -0.2755)],
        ])
        .unwrap()
    }

    fn rising(x: Complex64, m: usize) -> Complex64 {
        (0..m).fold(ONE, |p, j| p * (x + j as f64))
    }

    #[test]
    fn gamma_reference_values() {
        let cases = [
            (c64(0.5, 0.0), c64(PI.sqrt(), 0.0)),
            (c64(6.0, 0.0), c64(120.0, 0.0)),
            (c64(1.0 / 3.0, 0.0), c64(2.6789385347077476337, 0.0)),
            (
                c64(1.0, 1.0),
                c64(0.49801566811835604271, -0.15494982830181068512),
            ),
            // reflection side: Gamma(-5/2) = -8 sqrt(pi) / 15
            (c64(-2.5, 0.0), c64(-8.0 * PI.sqrt() / 15.0, 0.0)),
        ];
        for (z, want) in cases {
            let got = gamma(z).unwrap();
            assert!(
                (got - want).norm() <= 1e-11 * want.norm(),
                "gamma({z}) = {got}, want {want}"
            );
        }
        assert!(matches!(gamma(c64(-3.0, 0.0)), Err(Error::Pole(_))));
        assert!(matches!(gamma(c64(0.0, 0.0)), Err(Error::Pole(_))));
    }

    #[test]
    fn pfq_matches_closed_forms() {
        let ctx = ctx();
        // 1F1(1; 2; z) = (e^z - 1)/z
        let z = c64(1.3, 0.0);
        let got = hypergeometric_pfq(&[ONE], &[c64(2.0, 0.0)], z, &ctx).unwrap();
        let want = (z.exp() - ONE) / z;
        assert!((got - want).norm() < 1e-13 * want.norm());
        // Kummer transformation e^{-z} 1F1(a; b; z) = 1F1(b-a; b; -z)
        let a = c64(0.3, 0.2);
        let b = c64(1.1, -0.4);
        let z = c64(0.9, 0.7);
        let lhs = (-z).exp() * hypergeometric_pfq(&[a], &[b], z, &ctx).unwrap();
        let rhs = hypergeometric_pfq(&[b - a], &[b], -z, &ctx).unwrap();
        assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());
        assert!(matches!(
            hypergeometric_pfq(&[a, b], &[b], z, &ctx),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            hypergeometric_pfq(&[a], &[c64(-2.0, 0.0)], z, &ctx),
            Err(Error::Pole(_))
        ));
    }

    #[test]
    fn equation_spec_rejects_integer_collisions() {
        assert!(spec3().n == 3);
        // alpha difference integral
        assert!(matches!(
            ClassicalEquationSpec::new(
                vec![c64(0.3, 0.1), c64(1.3, 0.1)],
                vec![c64(0.42, -0.30), c64(1.37, 0.26)]
            ),
            Err(Error::Genericity(_))
        ));
        // beta against the normalized beta_n = 1
        assert!(matches!(
            ClassicalEquationSpec::new(
                vec![c64(0.31, 0.40), c64(-0.35, -0.22)],
                vec![c64(-1.0, 0.001), c64(1.37, 0.26)]
            ),
            Err(Error::Genericity(_))
        ));
        // alpha - beta crossing
        assert!(matches!(
            ClassicalEquationSpec::new(vec![c64(-0.58, -0.30)], vec![c64(0.42, -0.30)]),
            Err(Error::Genericity(_))
        ));
    }

    #[test]
    fn h_infinity_solves_the_equation() {
        let ctx = ctx();
        for spec in [spec2(), spec3()] {
            for i in 0..spec.n - 1 {
                for modulus in [1.0, 5.0] {
                    let z = BranchedPoint::new(modulus, 2.2).unwrap();
                    let f = |w: &BranchedPoint| -> Result<Complex64> {
                        Ok(h_infinity(&spec, i, w, &Sector::Plus, &ctx)?
                            * branched_power(w, -spec.alpha[i])?)
                    };
                    let r = confluent_operator_residual(&spec, &f, &z).unwrap();
                    assert!(
                        r < 1e-6,
                        "solution {i} of order {} has residual {r:.3e} at |z| = {modulus}",
                        spec.n
                    );
                }
            }
        }
    }

    #[test]
    fn h_infinity_normalizes_at_infinity() {
        let ctx = ctx();
        let spec = spec3();
        for i in 0..2 {
            let mut last = f64::INFINITY;
            for r in [5.0, 10.0, 20.0, 40.0] {
                let z = BranchedPoint::new(r, 2.2).unwrap();
                let h = h_infinity(&spec, i, &z, &Sector::Plus, &ctx).unwrap();
                let dev = (h - ONE).norm();
                assert!(dev < last, "|h - 1| must shrink with |z|, got {dev:.3e} at {r}");
                last = dev;
            }
            assert!(last < 0.05);
        }
        // out-of-sector arguments are refused
        let z = BranchedPoint::new(5.0, -2.0).unwrap();
        assert!(h_infinity(&spec, 0, &z, &Sector::Plus, &ctx).is_err());
    }

    #[test]
    fn exponential_tail_matches_the_kummer_series() {
        // for n = 2 the tail is 2F0(beta - alpha, 1 - alpha; ; 1/z):
        // kappa_m = (beta - alpha)_m (1 - alpha)_m / m!
        let spec = spec2();
        let a = spec.alpha[0];
        let b = spec.beta[0];
        let kappa = exponential_tail(&spec, 12).unwrap();
        let mut mfac = 1.0;
        for (m, &k) in kappa.iter().enumerate() {
            mfac *= (m + 1) as f64;
            let want = rising(b - a, m + 1) * rising(ONE - a, m + 1) / mfac;
            assert!(
                (k - want).norm() <= 1e-9 * want.norm().max(1.0),
                "kappa_{} = {k}, want {want}",
                m + 1
            );
        }
    }

    #[test]
    fn connection_check_residuals_are_small() {
        let ctx = ctx();
        for spec in [spec2(), spec3()] {
            for (arg, sector) in [(PI, Sector::Plus), (-PI, Sector::Minus)] {
                let z = BranchedPoint::new(20.0, arg).unwrap();
                let r = classical_connection_check(&spec, &z, &sector, &ctx).unwrap();
                assert!(
                    r < 1e-6,
                    "order {} residual {r:.3e} at arg {arg:.3}",
                    spec.n
                );
            }
        }
        // positive real axis: the exponential direction dominates, so this
        // pins K_n specifically
        let z = BranchedPoint::new(20.0, 0.0).unwrap();
        let r = classical_connection_check(&spec2(), &z, &Sector::Plus, &ctx).unwrap();
        assert!(r < 1e-6, "K_n-dominated residual {r:.3e}");
        // sector mismatch is refused
        let z = BranchedPoint::new(20.0, -PI).unwrap();
        assert!(classical_connection_check(&spec2(), &z, &Sector::Plus, &ctx).is_err());
    }

    #[test]
    fn system_spec_margins_and_frame() {
        for a in [mat2(), mat3()] {
            let n = a.rows();
            let sys = ClassicalSystemSpec::new(a).unwrap();
            let id = sys.p.mul(&sys.p_inv);
            assert!(id.max_abs_diff(&CMat::identity(n - 1)) < 1e-10);
            for i in 0..n - 1 {
                assert!((sys.arrow.at(i, i) - sys.lam_sub[i]).norm() < 1e-9);
                for j in 0..n - 1 {
                    if i != j {
                        assert!(sys.arrow.at(i, j).norm() < 1e-9);
                    }
                }
            }
            assert!((sys.corner - sys.a.at(n - 1, n - 1)).norm() < 1e-12);
        }
        // triangular blocks collide with the eigenvalue crossing margin
        let tri = CMat::from_rows(vec![
            vec![c64(0.3, 0.0), c64(1.0, 0.0)],
            vec![ZERO, c64(1.7, 0.0)],
        ])
        .unwrap();
        assert!(matches!(
            ClassicalSystemSpec::new(tri),
            Err(Error::Genericity(_))
        ));
    }

    // five-point first-derivative residual of dF/dz = (E + arrow/z) F for
    // one solution matrix column set
    fn system_residual(
        sys: &ClassicalSystemSpec,
        f: &dyn Fn(&BranchedPoint) -> Result<CMat>,
        z: &BranchedPoint,
    ) -> f64 {
        let h = 1e-3 * z.modulus();
        let zc = z.to_complex();
        let at = |j: i64| -> CMat { f(&branched_near(zc + j as f64 * h, z).unwrap()).unwrap() };
        let fm2 = at(-2);
        let fm1 = at(-1);
        let f0 = at(0);
        let fp1 = at(1);
        let fp2 = at(2);
        let mut deriv = fm2.sub(&fm1.scaled(c64(8.0, 0.0)));
        deriv = deriv.add(&fp1.scaled(c64(8.0, 0.0)));
        deriv = deriv.sub(&fp2);
        deriv = deriv.scaled(ONE / c64(12.0 * h, 0.0));
        let n = sys.n;
        let mut coeff = sys.arrow.scaled(ONE / zc);
        coeff.set(n - 1, n - 1, coeff.at(n - 1, n - 1) + ONE);
        let rhs = coeff.mul(&f0);
        deriv.max_abs_diff(&rhs) / f0.max_abs().max(1.0)
    }

    #[test]
    fn solution_matrices_solve_the_system() {
        let ctx = ctx();
        for a in [mat2(), mat3()] {
            let sys = ClassicalSystemSpec::new(a).unwrap();
            let z0 = BranchedPoint::new(1.3, 0.7).unwrap();
            let r0 = system_residual(
                &sys,
                &|w| classical_origin_solution(&sys, w, &ctx),
                &z0,
            );
            assert!(r0 < 1e-6, "origin solution residual {r0:.3e}");
            let z1 = BranchedPoint::new(6.0, 2.9).unwrap();
            let r1 = system_residual(
                &sys,
                &|w| classical_infinity_solution(&sys, w, &Sector::Plus, &ctx),
                &z1,
            );
            assert!(r1 < 1e-6, "infinity solution residual {r1:.3e}");
        }
    }

    #[test]
    fn stokes_relation_holds() {
        for a in [mat2(), mat3()] {
            let sys = ClassicalSystemSpec::new(a).unwrap();
            let n = sys.n;
            let u_plus = classical_u(&sys, &Sector::Plus).unwrap();
            let u_minus = classical_u(&sys, &Sector::Minus).unwrap();
            let s = classical_s_minus(&sys).unwrap();
            let mut twisted = u_plus.clone();
            for j in 0..n {
                let fac = (-2.0 * PI * Complex64::i() * sys.lam_full[j]).exp();
                for i in 0..n {
                    twisted.set(i, j, twisted.at(i, j) * fac);
                }
            }
            let lhs = s.mul(&u_minus);
            let scale = lhs.max_abs().max(1.0);
            assert!(
                lhs.max_abs_diff(&twisted) < 1e-8 * scale,
                "S_- U_- deviates from U_+ e^(-2 pi i lam) by {:.3e}",
                lhs.max_abs_diff(&twisted) / scale
            );
        }
    }

    #[test]
    fn solutions_connect_through_u() {
        let ctx = ctx();
        let sys = ClassicalSystemSpec::new(mat3()).unwrap();
        let n = sys.n;
        // on the negative real axis the dropped exponential column is
        // e^{-20}-suppressed, so the power columns alone must reproduce F0
        for (arg, sector) in [(PI, Sector::Plus), (-PI, Sector::Minus)] {
            let z = BranchedPoint::new(20.0, arg).unwrap();
            let f0 = classical_origin_solution(&sys, &z, &ctx).unwrap();
            let finf = classical_infinity_solution(&sys, &z, &sector, &ctx).unwrap();
            let u = classical_u(&sys, &sector).unwrap();
            let rows: Vec<usize> = (0..n - 1).collect();
            let cols: Vec<usize> = (0..n).collect();
            let u_top = u.submatrix(&rows, &cols);
            let got = finf.mul(&u_top);
            let scale = f0.max_abs().max(1.0);
            assert!(
                got.max_abs_diff(&f0) < 2e-6 * scale,
                "connection residual {:.3e} at arg {arg:.3}",
                got.max_abs_diff(&f0) / scale
            );
        }
    }

    #[test]
    fn s_minus_decouples_without_the_border_row() {
        let mut sys = ClassicalSystemSpec::new(mat2()).unwrap();
        for b in sys.b_row.iter_mut() {
            *b = ZERO;
        }
        let s = classical_s_minus(&sys).unwrap();
        let n = sys.n;
        for j in 0..n - 1 {
            assert_eq!(s.at(n - 1, j), ZERO);
        }
        for i in 0..n - 1 {
            let want = (-2.0 * PI * Complex64::i() * sys.lam_sub[i]).exp();
            assert!((s.at(i, i) - want).norm() < 1e-14);
        }
        let want = (-2.0 * PI * Complex64::i() * sys.corner).exp();
        assert!((s.at(n - 1, n - 1) - want).norm() < 1e-14);
    }

    #[test]
    fn parameter_map_linearizes() {
        let spec = spec3();
        let mut last = f64::INFINITY;
        for q in DEFAULT_Q_SCHEDULE {
            let ctxq = QContext::new(q).unwrap();
            let (a, b) = q_parameter_map(&spec.alpha, &spec.beta, q).unwrap();
            let mut worst = 0.0f64;
            for (got, want) in a.iter().zip(&spec.alpha) {
                worst = worst.max((log_q(*got, &ctxq).unwrap() - want).norm());
            }
            for (got, want) in b.iter().zip(&spec.beta) {
                worst = worst.max((log_q(*got, &ctxq).unwrap() - want).norm());
            }
            assert!(worst < last, "deviation {worst:.3e} did not shrink at q = {q}");
            last = worst;
        }
        assert!(last < 5e-3);
    }

    #[test]
    fn scalar_trend_converges() {
        let ctx = ctx();
        let lambda = Complex64::from_polar(1.1, -0.4);
        for spec in [spec2(), spec3()] {
            let z = BranchedPoint::new(3.0, 2.0).unwrap();
            let report =
                qlimit_connection(&spec, lambda, &z, &DEFAULT_Q_SCHEDULE, &ctx).unwrap();
            assert!(
                report.pass(),
                "order {} trend failed: {:?}",
                spec.n,
                report.items
            );
        }
        // lower sector window
        let z = BranchedPoint::new(3.0, -1.2).unwrap();
        let report = qlimit_connection(&spec2(), lambda, &z, &DEFAULT_Q_SCHEDULE, &ctx).unwrap();
        assert!(report.pass(), "lower sector trend failed: {:?}", report.items);
        // pseudo-constants flatten in z as q -> 1: two points, same window
        let z2 = BranchedPoint::new(2.2, 1.1).unwrap();
        let z1 = BranchedPoint::new(3.0, 2.0).unwrap();
        let s1 = scalar_connection_sample(&spec2(), lambda, &z1, 0.999, &ctx).unwrap();
        let s2 = scalar_connection_sample(&spec2(), lambda, &z2, 0.999, &ctx).unwrap();
        let dev = (s1.coefficients[0] - s2.coefficients[0]).norm()
            / s1.coefficients[0].norm().max(1.0);
        assert!(dev < 1e-2, "pseudo-constant spread {dev:.3e} between points");
        // window violations abort
        let bad = BranchedPoint::new(3.0, -3.6).unwrap();
        assert!(matches!(
            qlimit_connection(&spec2(), lambda, &bad, &DEFAULT_Q_SCHEDULE, &ctx),
            Err(Error::WindowViolation(_))
        ));
    }

    #[test]
    fn stokes_trend_converges_and_probe_flags_bad_branch() {
        let ctx = ctx();
        let sys = ClassicalSystemSpec::new(mat2()).unwrap();
        let lambda = Complex64::from_polar(1.05, -0.35);
        let mu = Complex64::from_polar(0.95, 0.8);
        let z = BranchedPoint::new(1.7, 2.9).unwrap();
        let report = qlimit_stokes(&sys, lambda, mu, &z, &DEFAULT_Q_SCHEDULE, &ctx).unwrap();
        assert!(report.pass(), "stokes trend failed: {:?}", report.items);
        // shifting the branch of z by a full turn leaves every window
        // check and must be rejected up front ...
        let shifted = BranchedPoint::new(1.7, 2.9 - 2.0 * PI).unwrap();
        assert!(matches!(
            qlimit_stokes(&sys, lambda, mu, &shifted, &DEFAULT_Q_SCHEDULE, &ctx),
            Err(Error::WindowViolation(_))
        ));
        // ... while the probe runs anyway and reports the failed trend
        let probe =
            qlimit_stokes_probe(&sys, lambda, mu, &shifted, &DEFAULT_Q_SCHEDULE, &ctx).unwrap();
        assert!(!probe.pass(), "probe outside the window must not converge");
    }

    #[test]
    fn basic_limits_pass() {
        let ctx = ctx();
        let report = basic_limits_suite(&DEFAULT_Q_SCHEDULE, &ctx).unwrap();
        assert!(report.pass(), "basic limits failed: {:?}", report.items);
        // exact zero sequences count as converged
        let zero = TrendItem {
            name: "zero".into(),
            errors: vec![0.0, 0.0, 0.0],
        };
        assert!(zero.passes(0.8, 1e-12));
        // schedule and sector validation
        assert!(matches!(
            basic_limits_suite(&[0.9, 0.5], &ctx),
            Err(Error::Domain(_))
        ));
        assert!(Sector::explicit(1.0, 0.5).is_err());
        assert!(Sector::Explicit { low: 0.0, high: 1.0 }.sign().is_err());
    }
}
