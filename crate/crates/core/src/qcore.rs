//! Scalar q-kernel: contexts, branched points, and the q-special functions
//! every higher layer is built from.
//!
//! Key components:
//! - [`QContext`]: carries the base `q`, truncation tolerance and budgets,
//!   and the safety margin used for all spiral-proximity tests.
//! - [`BranchedPoint`]: a point on the universal cover of `C*`, stored as
//!   `(modulus, argument)` with the argument unconstrained, so branched
//!   powers are single-valued data rather than a convention.
//! - [`ScaledComplex`]: complex value times `exp(e)` with a real exponent
//!   carried separately; theta prefactors and long Pochhammer products
//!   routinely overflow `f64` range near `q -> 1`, ratios of them do not.
//! - Pochhammer symbols, Jacobi theta, the q-exponential and q-Gamma,
//!   base-q logarithms, branched powers and spiral membership tests.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Rejects NaN/infinite intermediate values with a structured error.
pub fn ensure_finite(z: Complex64, what: &str) -> Result<Complex64> {
    if z.re.is_finite() && z.im.is_finite() {
        Ok(z)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Shared evaluation context: base, tolerance and truncation budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QContext {
    /// Base of the q-calculus, strictly inside (0, 1).
    pub q: f64,
    /// Target absolute truncation error for series and products.
    pub tol: f64,
    /// Cap on factors of an infinite product.
    pub max_product_terms: usize,
    /// Cap on terms of a one-sided power series.
    pub max_series_terms: usize,
    /// Cap on total terms of a bilateral sum.
    pub max_bilateral_terms: usize,
    /// Relative distance below which a point counts as lying on a q-spiral.
    /// Must stay below (1-q)/2 so membership in a spiral is unambiguous.
    pub spiral_margin: f64,
}

impl QContext {
    /// Context with default tolerance 1e-13 and budgets sized so that even
    /// q = 0.999 products converge within the caps.
    pub fn new(q: f64) -> Result<Self> {
        let ctx = QContext {
            q,
            tol: 1e-13,
            max_product_terms: 400_000,
            max_series_terms: 100_000,
            max_bilateral_terms: 40_000,
            spiral_margin: (0.05f64).min((1.0 - q) / 4.0),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn with_tol(q: f64, tol: f64) -> Result<Self> {
        let mut ctx = Self::new(q)?;
        ctx.tol = tol;
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) || !self.q.is_finite() {
            return Err(Error::Domain(format!("q = {} not in (0,1)", self.q)));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::Domain(format!("tol = {} not positive", self.tol)));
        }
        if self.max_product_terms < 16 || self.max_series_terms < 16 || self.max_bilateral_terms < 16
        {
            return Err(Error::Domain("truncation budgets must be at least 16".into()));
        }
        if !(self.spiral_margin > 0.0 && self.spiral_margin < (1.0 - self.q) / 2.0) {
            return Err(Error::Domain(format!(
                "spiral_margin = {} not in (0, (1-q)/2)",
                self.spiral_margin
            )));
        }
        Ok(())
    }

    /// ln q (negative).
    pub fn ln_q(&self) -> f64 {
        self.q.ln()
    }

    /// q^w for complex w, principal branch of the real base.
    pub fn q_pow(&self, w: Complex64) -> Complex64 {
        (w * self.ln_q()).exp()
    }

    /// q^k for integer k, exact sign-free scaling.
    pub fn q_int(&self, k: i64) -> f64 {
        self.q.powi(k as i32)
    }
}

/// A point of the universal cover of the punctured plane: positive modulus
/// and an unconstrained argument. Multiplying by q^k keeps the argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchedPoint {
    modulus: f64,
    argument: f64,
}

impl BranchedPoint {
    pub fn new(modulus: f64, argument: f64) -> Result<Self> {
        if !(modulus > 0.0) || !modulus.is_finite() || !argument.is_finite() {
            return Err(Error::Domain(format!(
                "branched point needs finite positive modulus, got ({modulus}, {argument})"
            )));
        }
        Ok(BranchedPoint { modulus, argument })
    }

    /// Principal-branch lift of a nonzero complex number.
    pub fn from_complex(z: Complex64) -> Result<Self> {
        ensure_finite(z, "branched point source")?;
        if z == ZERO {
            return Err(Error::Domain("cannot lift 0 to the universal cover".into()));
        }
        BranchedPoint::new(z.norm(), z.arg())
    }

    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    pub fn argument(&self) -> f64 {
        self.argument
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::from_polar(self.modulus, self.argument)
    }

    /// Same sheet, modulus multiplied by a positive real factor.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        BranchedPoint::new(self.modulus * factor, self.argument)
    }

    /// The point q^k z on the same sheet.
    pub fn q_shift(&self, ctx: &QContext, k: i64) -> Result<Self> {
        self.scaled(ctx.q_int(k))
    }

    /// Rotated copy: argument shifted by `delta` (2*pi moves one sheet up).
    pub fn rotated(&self, delta: f64) -> Result<Self> {
        BranchedPoint::new(self.modulus, self.argument + delta)
    }
}

/// Complex value in the form `m * exp(e)`, with `e` real. Keeps magnitude
/// bookkeeping out of f64 range limits while phases stay exact.
#[derive(Debug, Clone, Copy)]
pub struct ScaledComplex {
    m: Complex64,
    e: f64,
}

impl ScaledComplex {
    pub fn zero() -> Self {
        ScaledComplex { m: ZERO, e: 0.0 }
    }

    pub fn one() -> Self {
        ScaledComplex { m: ONE, e: 0.0 }
    }

    pub fn from_complex(z: Complex64) -> Self {
        ScaledComplex { m: z, e: 0.0 }.normalized()
    }

    /// exp(e) for real e, exact in the exponent slot.
    pub fn from_exp(e: f64) -> Self {
        ScaledComplex { m: ONE, e }
    }

    pub fn normalized(self) -> Self {
        if self.m == ZERO {
            return ScaledComplex { m: ZERO, e: 0.0 };
        }
        let n = self.m.norm();
        if n == 0.0 || !n.is_finite() {
            return self;
        }
        ScaledComplex {
            m: self.m / n,
            e: self.e + n.ln(),
        }
    }

    pub fn mul(self, other: ScaledComplex) -> Self {
        ScaledComplex {
            m: self.m * other.m,
            e: self.e + other.e,
        }
        .normalized()
    }

    pub fn mul_complex(self, z: Complex64) -> Self {
        self.mul(ScaledComplex::from_complex(z))
    }

    pub fn div(self, other: ScaledComplex) -> Result<Self> {
        if other.m == ZERO {
            return Err(Error::Pole("division by exact zero".into()));
        }
        Ok(ScaledComplex {
            m: self.m / other.m,
            e: self.e - other.e,
        }
        .normalized())
    }

    pub fn is_zero(&self) -> bool {
        self.m == ZERO
    }

    /// Natural log of the magnitude; -inf for zero.
    pub fn ln_norm(&self) -> f64 {
        if self.m == ZERO {
            f64::NEG_INFINITY
        } else {
            self.e + self.m.norm().ln()
        }
    }

    pub fn to_complex(&self) -> Result<Complex64> {
        if self.m == ZERO {
            return Ok(ZERO);
        }
        let e = self.ln_norm();
        if e > 705.0 {
            return Err(Error::NonFinite(format!(
                "scaled value overflows f64 range (ln|x| = {e:.3})"
            )));
        }
        if e < -740.0 {
            return Ok(ZERO);
        }
        let phase = self.m / self.m.norm();
        Ok(phase * e.exp())
    }

    pub fn neg(self) -> Self {
        ScaledComplex {
            m: -self.m,
            e: self.e,
        }
    }
}

/// Running sum of scaled values sharing one exponent reference, so sums
/// whose terms individually leave f64 range still accumulate correctly.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScaledAccumulator {
    acc: Complex64,
    e: f64,
}

impl ScaledAccumulator {
    pub fn new() -> Self {
        ScaledAccumulator { acc: ZERO, e: 0.0 }
    }

    pub fn add(&mut self, t: ScaledComplex) {
        if t.is_zero() {
            return;
        }
        let t = t.normalized();
        if self.acc == ZERO {
            self.acc = t.m;
            self.e = t.e;
            return;
        }
        if t.e > self.e {
            // rebase to the larger exponent; a drowned-out old sum
            // underflowing to zero is the correct outcome
            self.acc = self.acc * (self.e - t.e).exp() + t.m;
            self.e = t.e;
        } else {
            self.acc += t.m * (t.e - self.e).exp();
        }
    }

    pub fn value(&self) -> ScaledComplex {
        ScaledComplex {
            m: self.acc,
            e: if self.acc == ZERO { 0.0 } else { self.e },
        }
        .normalized()
    }
}

/// Finite Pochhammer symbol (a; q)_n = prod_{l=0}^{n-1} (1 - a q^l).
pub fn pochhammer_finite(a: Complex64, n: usize, ctx: &QContext) -> Result<Complex64> {
    ensure_finite(a, "pochhammer argument")?;
    let mut p = ONE;
    let mut aq = a;
    for _ in 0..n {
        p *= ONE - aq;
        aq *= ctx.q;
    }
    ensure_finite(p, "finite pochhammer value")
}

/// Infinite Pochhammer symbol in scaled form. Truncates once the relative
/// tail bound exp(sum_{l>=L} |a| q^l) - 1 drops below tol.
pub fn pochhammer_infinite_scaled(a: Complex64, ctx: &QContext) -> Result<ScaledComplex> {
    ensure_finite(a, "pochhammer argument")?;
    let mut p = ScaledComplex::one();
    let mut aq = a;
    let mut acc = ONE;
    for l in 0..ctx.max_product_terms {
        // tail over the remaining factors, before multiplying factor l
        let tail = (aq.norm() / (1.0 - ctx.q)).exp_m1();
        if tail.abs() <= ctx.tol {
            return Ok(p.mul_complex(acc));
        }
        acc *= ONE - aq;
        aq *= ctx.q;
        if l % 64 == 63 {
            p = p.mul_complex(acc);
            acc = ONE;
        }
    }
    Err(Error::TruncationBudget(format!(
        "(a;q)_inf with |a| = {:.3e}, q = {} needs more than {} factors",
        a.norm(),
        ctx.q,
        ctx.max_product_terms
    )))
}

/// Infinite Pochhammer symbol (a; q)_inf as a plain complex number.
pub fn pochhammer_infinite(a: Complex64, ctx: &QContext) -> Result<Complex64> {
    pochhammer_infinite_scaled(a, ctx)?.to_complex()
}

/// Product of infinite Pochhammer symbols over a list of arguments.
pub fn pochhammer_multi(args: &[Complex64], ctx: &QContext) -> Result<Complex64> {
    pochhammer_multi_scaled(args, ctx)?.to_complex()
}

pub fn pochhammer_multi_scaled(args: &[Complex64], ctx: &QContext) -> Result<ScaledComplex> {
    let mut p = ScaledComplex::one();
    for &a in args {
        p = p.mul(pochhammer_infinite_scaled(a, ctx)?);
    }
    Ok(p)
}

/// Ratio prod (num_i; q)_inf / prod (den_j; q)_inf in scaled form.
pub fn pochhammer_ratio_scaled(
    num: &[Complex64],
    den: &[Complex64],
    ctx: &QContext,
) -> Result<ScaledComplex> {
    let n = pochhammer_multi_scaled(num, ctx)?;
    let d = pochhammer_multi_scaled(den, ctx)?;
    if d.is_zero() {
        return Err(Error::Pole(
            "Pochhammer denominator vanished: argument on q^{-N} spiral".into(),
        ));
    }
    n.div(d)
}

/// Jacobi theta sum_{n in Z} q^{n(n-1)/2} z^n in scaled form.
///
/// For q >= 0.15 this uses the Poisson resummation of the bilateral series:
/// with t = -ln q and x = ln z,
///   theta(z) = sqrt(2 pi / t) exp(t/8 + x/2 + x^2/(2t))
///              sum_k (-1)^k exp(-2 pi^2 k^2 / t - 2 pi i k x / t),
/// truncated at |k| <= 2; the dropped terms are below 1e-25 relative on the
/// principal sheet for every such q. The direct sum is useless as q -> 1:
/// the value is smaller than the largest term by exp(-arg(z)^2/(2t)), which
/// no f64 summation survives. Below q = 0.15 the direct sum (after annulus
/// reduction by quasi-periodicity) converges fast and is well conditioned,
/// and the two branches cross-check each other in the tests.
pub fn theta_scaled(z: Complex64, ctx: &QContext) -> Result<ScaledComplex> {
    ensure_finite(z, "theta argument")?;
    if z == ZERO {
        return Err(Error::Domain("theta has an essential singularity at 0".into()));
    }
    if ctx.q >= 0.15 {
        return theta_modular(z, ctx);
    }
    let lnq = ctx.ln_q();
    // choose integer n with log_q |q^n z| in (-1/2, 1/2]
    let t = z.norm().ln() / lnq;
    let n = (-t).round() as i64;
    let shift = (n as f64) * lnq;
    let w = z * shift.exp();
    // bilateral sum at the reduced point
    let mut s = ONE; // k = 0 term
    let mut pos = ONE;
    let mut neg = ONE;
    let mut done_pos = 0u32;
    let mut done_neg = 0u32;
    let mut terms = 0usize;
    let mut k = 0i64;
    while done_pos < 2 || done_neg < 2 {
        k += 1;
        if done_pos < 2 {
            // q^{k(k-1)/2} w^k, built from the previous term
            pos *= w * ((k - 1) as f64 * lnq).exp();
            s += pos;
            if pos.norm() < 0.01 * ctx.tol {
                done_pos += 1;
            }
            terms += 1;
        }
        if done_neg < 2 {
            // term at -k: q^{k(k+1)/2} w^{-k}
            neg *= (k as f64 * lnq).exp() / w;
            s += neg;
            if neg.norm() < 0.01 * ctx.tol {
                done_neg += 1;
            }
            terms += 1;
        }
        if terms > ctx.max_bilateral_terms {
            return Err(Error::TruncationBudget(format!(
                "theta bilateral sum needs more than {} terms at q = {}",
                ctx.max_bilateral_terms, ctx.q
            )));
        }
    }
    ensure_finite(s, "theta reduced sum")?;
    // theta(z) = z^n q^{n(n-1)/2} theta(q^n z)
    let pref = ScaledComplex {
        m: Complex64::from_polar(1.0, n as f64 * z.arg()),
        e: n as f64 * z.norm().ln() + (n as f64) * ((n - 1) as f64) / 2.0 * lnq,
    };
    Ok(pref.mul_complex(s))
}

fn theta_modular(z: Complex64, ctx: &QContext) -> Result<ScaledComplex> {
    use std::f64::consts::PI;
    let t = -ctx.ln_q();
    let x = Complex64::new(z.norm().ln(), z.arg());
    let mut bracket = ONE;
    for k in [1.0f64, 2.0] {
        let base = -2.0 * PI * PI * k * k / t;
        let rot = 2.0 * PI * k / t;
        // exp(-2 pi i k x / t) for +/- k; real parts stay <= 0 on the
        // principal sheet, so neither term can overflow
        let ep = Complex64::new(base + rot * x.im, -rot * x.re).exp();
        let em = Complex64::new(base - rot * x.im, rot * x.re).exp();
        let sign = if k as i64 % 2 == 1 { -1.0 } else { 1.0 };
        bracket += sign * (ep + em);
    }
    ensure_finite(bracket, "theta dual sum")?;
    let e = t / 8.0
        + x.re / 2.0
        + (x.re * x.re - x.im * x.im) / (2.0 * t)
        + 0.5 * (2.0 * PI / t).ln();
    let phase = x.im / 2.0 + x.re * x.im / t;
    Ok(ScaledComplex {
        m: Complex64::from_polar(1.0, phase) * bracket,
        e,
    })
}

/// Jacobi theta as a plain complex value.
pub fn theta(z: Complex64, ctx: &QContext) -> Result<Complex64> {
    theta_scaled(z, ctx)?.to_complex()
}

/// Ratio of two thetas, safe against prefactor overflow.
pub fn theta_ratio(num: Complex64, den: Complex64, ctx: &QContext) -> Result<ScaledComplex> {
    let n = theta_scaled(num, ctx)?;
    let d = theta_scaled(den, ctx)?;
    if d.is_zero() {
        return Err(Error::PoleProximity(format!(
            "theta denominator vanished at {den}"
        )));
    }
    n.div(d)
}

/// Relative distance from w to the spiral {anchor * q^n : n in Z}, together
/// with the nearest index. Only indices within 2 of the modulus-matching one
/// can be competitive.
pub fn spiral_distance(anchor: Complex64, w: Complex64, ctx: &QContext) -> Result<(f64, i64)> {
    ensure_finite(anchor, "spiral anchor")?;
    ensure_finite(w, "spiral point")?;
    if anchor == ZERO {
        return Err(Error::Domain("spiral anchor must be nonzero".into()));
    }
    if w == ZERO {
        return Err(Error::Domain("spiral membership of 0 is ill-posed".into()));
    }
    let t = (w / anchor).norm().ln() / ctx.ln_q();
    let n0 = t.round() as i64;
    let mut best = (f64::INFINITY, n0);
    for n in (n0 - 2)..=(n0 + 2) {
        let d = (w / (anchor * (n as f64 * ctx.ln_q()).exp()) - ONE).norm();
        if d < best.0 {
            best = (d, n);
        }
    }
    Ok(best)
}

/// True when w lies within the context margin of the spiral lambda q^Z.
pub fn on_spiral(lambda: Complex64, w: Complex64, ctx: &QContext) -> Result<bool> {
    Ok(spiral_distance(lambda, w, ctx)?.0 < ctx.spiral_margin)
}

/// Error when w is margin-close to the spiral anchor*q^Z; used as the
/// standard precondition guard ahead of theta-denominator evaluations.
pub fn ensure_off_spiral(
    anchor: Complex64,
    w: Complex64,
    ctx: &QContext,
    what: &str,
) -> Result<()> {
    if on_spiral(anchor, w, ctx)? {
        return Err(Error::PoleProximity(format!(
            "{what}: point {w} within margin {} of spiral through {anchor}",
            ctx.spiral_margin
        )));
    }
    Ok(())
}

/// q-exponential e_q(z) = 1 / ((1-q) z; q)_inf, with poles on the spiral
/// (1-q) z = q^{-N}.
pub fn q_exponential(z: Complex64, ctx: &QContext) -> Result<Complex64> {
    q_exponential_scaled(z, ctx)?.to_complex()
}

pub fn q_exponential_scaled(z: Complex64, ctx: &QContext) -> Result<ScaledComplex> {
    ensure_finite(z, "q_exponential argument")?;
    let w = (1.0 - ctx.q) * z;
    // pole lattice check: w close to q^{-l} for some l >= 0
    if w != ZERO && w.norm() > 1.0 - ctx.spiral_margin {
        let (d, n) = spiral_distance(ONE, w, ctx)?;
        if d < ctx.spiral_margin && n <= 0 {
            return Err(Error::Pole(format!(
                "q_exponential pole: (1-q) z within {d:.2e} of q^{n}"
            )));
        }
    }
    let denom = pochhammer_infinite_scaled(w, ctx)?;
    if denom.is_zero() {
        return Err(Error::Pole("q_exponential: denominator product vanished".into()));
    }
    ScaledComplex::one().div(denom)
}

/// q-Gamma Gamma_q(z) = (q;q)_inf / (q^z;q)_inf * (1-q)^{1-z}, principal
/// powers, poles at the non-positive integers.
pub fn q_gamma(z: Complex64, ctx: &QContext) -> Result<Complex64> {
    ensure_finite(z, "q_gamma argument")?;
    let zr = z.re.round();
    if zr <= 0.0 && (z - c64(zr, 0.0)).norm() < ctx.spiral_margin {
        return Err(Error::Pole(format!("q_gamma pole near z = {zr}")));
    }
    let num = pochhammer_infinite_scaled(c64(ctx.q, 0.0), ctx)?;
    let den = pochhammer_infinite_scaled(ctx.q_pow(z), ctx)?;
    if den.is_zero() {
        return Err(Error::Pole("q_gamma: (q^z; q)_inf vanished".into()));
    }
    let pw = ((ONE - z) * (1.0 - ctx.q).ln()).exp();
    ensure_finite(pw, "q_gamma power factor")?;
    num.div(den)?.mul_complex(pw).to_complex()
}

/// Base-q logarithm with the principal natural log upstairs:
/// log_q w = ln w / ln q, Im ln w in (-pi, pi].
pub fn log_q(w: Complex64, ctx: &QContext) -> Result<Complex64> {
    ensure_finite(w, "log_q argument")?;
    if w == ZERO {
        return Err(Error::Domain("log_q of zero".into()));
    }
    Ok(w.ln() / ctx.ln_q())
}

/// Branched power z^alpha = exp(alpha (ln modulus + i argument)); honest in
/// the sheet carried by the branched point.
pub fn branched_power(z: &BranchedPoint, alpha: Complex64) -> Result<Complex64> {
    ensure_finite(alpha, "power exponent")?;
    let val = (alpha * c64(z.modulus().ln(), z.argument())).exp();
    ensure_finite(val, "branched power value")
}

pub fn branched_power_scaled(z: &BranchedPoint, alpha: Complex64) -> Result<ScaledComplex> {
    ensure_finite(alpha, "power exponent")?;
    let w = alpha * c64(z.modulus().ln(), z.argument());
    Ok(ScaledComplex {
        m: Complex64::from_polar(1.0, w.im),
        e: w.re,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(q: f64) -> QContext {
        QContext::new(q).unwrap()
    }

    /// 200-factor direct product; independent of the tail-bound logic.
    fn poch_oracle(a: Complex64, q: f64) -> Complex64 {
        let mut p = ONE;
        let mut aq = a;
        for _ in 0..200 {
            p *= ONE - aq;
            aq *= q;
        }
        p
    }

    /// Bilateral |n| <= 60 sum without argument reduction.
    fn theta_oracle(z: Complex64, q: f64) -> Complex64 {
        let mut s = ZERO;
        for n in -60i32..=60 {
            let e = q.powf(n as f64 * (n as f64 - 1.0) / 2.0);
            s += e * z.powf(n as f64) * if z.im == 0.0 && z.re > 0.0 { ONE } else { ONE };
        }
        s
    }

    fn theta_oracle_c(z: Complex64, q: f64) -> Complex64 {
        let mut s = ZERO;
        for n in -60i64..=60 {
            let mut zp = ONE;
            if n >= 0 {
                for _ in 0..n {
                    zp *= z;
                }
            } else {
                for _ in 0..(-n) {
                    zp /= z;
                }
            }
            s += q.powf((n * (n - 1)) as f64 / 2.0) * zp;
        }
        s
    }

    #[test]
    fn euler_product_at_half() {
        // (q;q)_inf at q = 0.5 against the 200-factor oracle
        let c = ctx(0.5);
        let v = pochhammer_infinite(c64(0.5, 0.0), &c).unwrap();
        let o = poch_oracle(c64(0.5, 0.0), 0.5);
        assert!((v - o).norm() < 1e-13, "got {v}, oracle {o}");
        assert!((v.re - 0.2887880950866024).abs() < 1e-12);
    }

    #[test]
    fn pochhammer_zero_argument_is_one() {
        let c = ctx(0.3);
        assert_eq!(pochhammer_infinite(ZERO, &c).unwrap(), ONE);
        assert_eq!(pochhammer_finite(ZERO, 7, &c).unwrap(), ONE);
    }

    #[test]
    fn pochhammer_finite_matches_ratio_of_infinite() {
        // (a;q)_n = (a;q)_inf / (a q^n; q)_inf
        let c = ctx(0.7);
        let a = c64(0.4, 0.3);
        for n in [1usize, 3, 8] {
            let lhs = pochhammer_finite(a, n, &c).unwrap();
            let rhs = pochhammer_infinite(a, &c).unwrap()
                / pochhammer_infinite(a * c.q_int(n as i64), &c).unwrap();
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn pochhammer_large_argument_magnitude() {
        // |a| > 1 converges; check against the direct oracle
        let c = ctx(0.5);
        let a = c64(-37.0, 11.0);
        let v = pochhammer_infinite(a, &c).unwrap();
        let o = poch_oracle(a, 0.5);
        assert!((v - o).norm() / o.norm() < 1e-12);
    }

    #[test]
    fn theta_matches_bilateral_oracle() {
        let c = ctx(0.5);
        for z in [c64(1.0, 0.0), c64(0.8, 0.45), c64(-0.3, 1.2), c64(2.5, -1.0)] {
            let v = theta(z, &c).unwrap();
            let o = theta_oracle_c(z, 0.5);
            assert!(
                (v - o).norm() < 1e-11 * o.norm().max(1.0),
                "theta({z}) = {v}, oracle {o}"
            );
        }
        // silence the unused plain-powf helper
        let _ = theta_oracle(c64(1.0, 0.0), 0.5);
    }

    #[test]
    fn theta_quasi_periodicity() {
        // theta(q^n z) = z^{-n} q^{-n(n-1)/2} theta(z)
        let c = ctx(0.5);
        let z = c64(0.63, 0.41);
        let tz = theta(z, &c).unwrap();
        for n in [-3i64, -1, 1, 2, 4] {
            let lhs = theta(z * c.q_int(n), &c).unwrap();
            let mut zp = ONE;
            if n >= 0 {
                for _ in 0..n {
                    zp *= z;
                }
            } else {
                for _ in 0..(-n) {
                    zp /= z;
                }
            }
            let rhs = tz / zp * c.q.powf((n * (n - 1)) as f64 / 2.0).recip();
            assert!((lhs - rhs).norm() < 1e-10 * rhs.norm().max(1.0), "n = {n}");
        }
    }

    #[test]
    fn theta_triple_product() {
        // theta(z) = (q; q)_inf (-z; q)_inf (-q/z; q)_inf
        for q in [0.3, 0.5, 0.7] {
            let c = ctx(q);
            for z in [c64(0.9, 0.2), c64(-1.4, 0.6), c64(0.05, -0.08), c64(11.0, 3.0)] {
                let lhs = theta(z, &c).unwrap();
                let rhs = pochhammer_multi(
                    &[c64(q, 0.0), -z, -c64(q, 0.0) / z],
                    &c,
                )
                .unwrap();
                assert!(
                    (lhs - rhs).norm() < 1e-10 * rhs.norm().max(1.0),
                    "q = {q}, z = {z}"
                );
            }
        }
    }

    #[test]
    fn theta_huge_argument_scales() {
        // reduction prefactor far outside f64 range must still divide out
        let c = ctx(0.999);
        let z = c64(1.0e5, 3.0e4);
        let a = theta_scaled(z, &c).unwrap();
        let b = theta_scaled(z * c.q, &c).unwrap();
        // theta(qz)/theta(z) = 1/z; reduction exponents near 7e4 leave
        // roughly 1e-10 relative accuracy in f64
        let r = b.div(a).unwrap().to_complex().unwrap();
        let rel = (r - z.inv()).norm() / z.inv().norm();
        assert!(rel < 1e-9, "rel = {rel:.3e}");
    }

    #[test]
    fn theta_at_zero_rejected() {
        let c = ctx(0.5);
        assert!(matches!(theta(ZERO, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn q_exponential_product_vs_taylor() {
        // e_q(z) = sum (1-q)^k / (q;q)_k z^k inside |(1-q) z| < 1
        let c = ctx(0.5);
        for z in [c64(0.8, 0.0), c64(-0.9, 0.7), c64(0.2, -1.5)] {
            let prod = q_exponential(z, &c).unwrap();
            let mut s = ZERO;
            let mut term = ONE;
            let mut k = 0;
            while term.norm() > 1e-18 && k < 200 {
                s += term;
                k += 1;
                term *= (1.0 - c.q) * z / (1.0 - c.q.powi(k));
            }
            assert!((prod - s).norm() < 1e-12 * s.norm(), "z = {z}");
        }
    }

    #[test]
    fn q_exponential_pole_detected() {
        let c = ctx(0.5);
        // (1-q) z = q^{-2}  =>  z = 8
        assert!(matches!(q_exponential(c64(8.0, 0.0), &c), Err(Error::Pole(_))));
        // nearby but outside margin passes
        assert!(q_exponential(c64(8.0 * 1.2, 0.0), &c).is_ok());
    }

    #[test]
    fn q_gamma_functional_equation() {
        // Gamma_q(z+1) = (1-q^z)/(1-q) Gamma_q(z)
        let c = ctx(0.5);
        for z in [c64(0.7, 0.0), c64(1.3, -0.8), c64(2.4, 1.1)] {
            let lhs = q_gamma(z + ONE, &c).unwrap();
            let rhs = (ONE - c.q_pow(z)) / (1.0 - c.q) * q_gamma(z, &c).unwrap();
            assert!((lhs - rhs).norm() < 1e-11 * rhs.norm());
        }
    }

    #[test]
    fn q_gamma_at_two_is_one() {
        let c = ctx(0.47);
        let v = q_gamma(c64(2.0, 0.0), &c).unwrap();
        assert!((v - ONE).norm() < 1e-12);
    }

    #[test]
    fn q_gamma_near_classical_at_half() {
        // Gamma_{0.999}(1/2) is within 5e-3 of sqrt(pi)
        let c = ctx(0.999);
        let v = q_gamma(c64(0.5, 0.0), &c).unwrap();
        let sp = std::f64::consts::PI.sqrt();
        assert!((v.re - sp).abs() < 5e-3 && v.im.abs() < 1e-12, "got {v}");
    }

    #[test]
    fn q_gamma_pole_at_nonpositive_integers() {
        let c = ctx(0.5);
        assert!(matches!(q_gamma(ZERO, &c), Err(Error::Pole(_))));
        assert!(matches!(q_gamma(c64(-3.0, 1e-9), &c), Err(Error::Pole(_))));
    }

    #[test]
    fn log_q_inverts_q_pow() {
        let c = ctx(0.3);
        for w in [c64(0.2, 0.0), c64(1.7, 2.2), c64(-0.4, -0.1)] {
            let l = log_q(w, &c).unwrap();
            assert!((c.q_pow(l) - w).norm() < 1e-12 * w.norm());
        }
        assert!(matches!(log_q(ZERO, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn branched_power_additivity_and_sheets() {
        let z = BranchedPoint::new(1.7, 0.9).unwrap();
        let a = c64(0.3, -1.1);
        let b = c64(-0.8, 0.25);
        let lhs = branched_power(&z, a + b).unwrap();
        let rhs = branched_power(&z, a).unwrap() * branched_power(&z, b).unwrap();
        assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());
        // one full turn changes the branch by exp(2 pi i alpha)
        let z2 = z.rotated(2.0 * std::f64::consts::PI).unwrap();
        let turn = branched_power(&z2, a).unwrap() / branched_power(&z, a).unwrap();
        let expect = (a * c64(0.0, 2.0 * std::f64::consts::PI)).exp();
        assert!((turn - expect).norm() < 1e-12 * expect.norm());
    }

    #[test]
    fn spiral_membership() {
        let c = ctx(0.5);
        let lam = c64(1.1, 0.4);
        let w = lam * c.q_int(-5) * 1.001;
        assert!(on_spiral(lam, w, &c).unwrap());
        let w2 = lam * c.q_int(-5) * c64(1.3, 0.0);
        assert!(!on_spiral(lam, w2, &c).unwrap());
        // rotation off the spiral direction
        let w3 = lam * c.q_int(2) * Complex64::from_polar(1.0, 0.5);
        assert!(!on_spiral(lam, w3, &c).unwrap());
    }

    #[test]
    fn context_validation() {
        assert!(QContext::new(0.0).is_err());
        assert!(QContext::new(1.0).is_err());
        let mut c = ctx(0.5);
        c.spiral_margin = 0.3; // >= (1-q)/2
        assert!(c.validate().is_err());
        let mut c2 = ctx(0.5);
        c2.max_bilateral_terms = 4;
        assert!(c2.validate().is_err());
    }

    #[test]
    fn scaled_complex_roundtrip() {
        let z = c64(-3.4, 1.2);
        let s = ScaledComplex::from_complex(z);
        assert!((s.to_complex().unwrap() - z).norm() < 1e-15 * z.norm());
        let big = ScaledComplex::from_exp(1.0e4);
        assert!(big.to_complex().is_err());
        let tiny = ScaledComplex::from_exp(-1.0e4);
        assert_eq!(tiny.to_complex().unwrap(), ZERO);
        let ratio = big.div(big).unwrap().to_complex().unwrap();
        assert!((ratio - ONE).norm() < 1e-15);
    }

    #[test]
    fn scaled_accumulator_mixes_magnitudes() {
        // sum exp(1000) + 5 + exp(990): the middle term drowns, the other
        // two must combine to full precision
        let mut acc = ScaledAccumulator::new();
        acc.add(ScaledComplex::from_exp(1000.0));
        acc.add(ScaledComplex::from_complex(c64(5.0, 0.0)));
        acc.add(ScaledComplex::from_exp(990.0));
        let expect = 1000.0 + (1.0f64 + (-10.0f64).exp()).ln();
        assert!((acc.value().ln_norm() - expect).abs() < 1e-12);

        let mut c = ScaledAccumulator::new();
        let x = ScaledComplex::from_complex(c64(2.0, -7.0));
        c.add(x);
        c.add(x.neg());
        assert!(c.value().is_zero() || c.value().ln_norm() < -30.0);
    }
}
