//! Hypergeometric series layer: basic and classical series evaluation,
//! radius classification, formal power series containers, and the formal
//! solution bases of the confluent q-difference equation at 0 and infinity.
//!
//! Key components:
//! - [`HypergeometricParams`] with validated q-series or classical lower
//!   parameters, evaluated by [`basic_phi`] / [`classical_f`].
//! - [`FormalPowerSeries`]: coefficient lists with a variable tag; there is
//!   deliberately no full evaluation method, only explicit partial sums.
//! - [`ConfluentEquationSpec`] and [`confluent_formal_basis`]: the n formal
//!   solutions at infinity, n-1 of them divergent coefficient lists, the
//!   n-th a convergent series computed by a triangular linear-solve
//!   recursion, exposed with an empirical convergence radius.
//! - [`f0_basis`] / [`fuchsian_infinity_basis`]: convergent solution bases.
//! - [`hypergeometric_residual`] / [`q_difference_residual`]: apply the
//!   defining q-difference operator to a callable and report the relative
//!   residual; this is the main oracle used throughout the test suites.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qcore::{
    branched_power, ensure_finite, log_q, pochhammer_infinite_scaled, BranchedPoint, QContext,
    ScaledComplex, ONE, ZERO,
};

/// Convergence class of a hypergeometric series by parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusClass {
    /// Diverges for every nonzero argument.
    Zero,
    /// Unit radius of convergence.
    One,
    /// Entire.
    Infinity,
}

/// Radius class of a series with `n_upper` numerator and `m_lower`
/// denominator parameters (same classification for basic and classical).
pub fn radius_class(n_upper: usize, m_lower: usize) -> RadiusClass {
    if n_upper >= m_lower + 2 {
        RadiusClass::Zero
    } else if n_upper == m_lower + 1 {
        RadiusClass::One
    } else {
        RadiusClass::Infinity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Basic,
    Classical,
}

/// Validated parameter list for a hypergeometric series.
#[derive(Debug, Clone)]
pub struct HypergeometricParams {
    pub upper: Vec<Complex64>,
    pub lower: Vec<Complex64>,
    pub kind: SeriesKind,
}

impl HypergeometricParams {
    /// q-series parameters; rejects lower parameters within the spiral
    /// margin of q^{-N} (which would zero a denominator factor).
    pub fn basic(upper: Vec<Complex64>, lower: Vec<Complex64>, ctx: &QContext) -> Result<Self> {
        for &b in &lower {
            ensure_finite(b, "lower parameter")?;
            if b != ZERO {
                let (d, n) = crate::qcore::spiral_distance(ONE, b, ctx)?;
                if d < ctx.spiral_margin && n <= 0 {
                    return Err(Error::Domain(format!(
                        "lower parameter {b} within margin of q^{n}"
                    )));
                }
            }
        }
        for &a in &upper {
            ensure_finite(a, "upper parameter")?;
        }
        Ok(HypergeometricParams {
            upper,
            lower,
            kind: SeriesKind::Basic,
        })
    }

    /// Classical parameters; rejects lower parameters within `margin` of a
    /// non-positive integer.
    pub fn classical(
        upper: Vec<Complex64>,
        lower: Vec<Complex64>,
        margin: f64,
    ) -> Result<Self> {
        for &b in &lower {
            ensure_finite(b, "lower parameter")?;
            let r = b.re.round();
            if r <= 0.0 && (b - Complex64::new(r, 0.0)).norm() < margin {
                return Err(Error::Domain(format!(
                    "lower parameter {b} within {margin} of non-positive integer {r}"
                )));
            }
        }
        for &a in &upper {
            ensure_finite(a, "upper parameter")?;
        }
        Ok(HypergeometricParams {
            upper,
            lower,
            kind: SeriesKind::Classical,
        })
    }

    pub fn radius_class(&self) -> RadiusClass {
        radius_class(self.upper.len(), self.lower.len())
    }
}

/// Smallest N >= 0 with some upper parameter equal to q^{-N} up to 1e-9
/// relative error, i.e. the series terminates after N+1 terms.
fn termination_index(upper: &[Complex64], ctx: &QContext) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &a in upper {
        if a == ZERO {
            continue;
        }
        let t = a.norm().ln() / ctx.ln_q();
        let n = t.round() as i64;
        if n <= 0 {
            let target = ctx.q_int(n);
            if (a / target - ONE).norm() < 1e-9 {
                let cand = (-n) as usize;
                best = Some(best.map_or(cand, |b| b.min(cand)));
            }
        }
    }
    best
}

/// Basic hypergeometric series
/// sum_k prod(a;q)_k / ((q;q)_k prod(b;q)_k) [(-1)^k q^{k(k-1)/2}]^{1+m-n} z^k.
///
/// Terminating series are summed exactly; otherwise the radius class gates
/// evaluation (|z| <= 0.95 in the radius-one case) and summation stops after
/// two consecutive terms below tolerance once at least 8 terms are in.
pub fn basic_phi(params: &HypergeometricParams, z: Complex64, ctx: &QContext) -> Result<Complex64> {
    if params.kind != SeriesKind::Basic {
        return Err(Error::Domain("basic_phi requires q-series parameters".into()));
    }
    ensure_finite(z, "series argument")?;
    let nu = params.upper.len();
    let ml = params.lower.len();
    let term_at = termination_index(&params.upper, ctx);
    if term_at.is_none() {
        match radius_class(nu, ml) {
            RadiusClass::Zero => {
                if z != ZERO {
                    return Err(Error::DivergentSeries(format!(
                        "{nu} upper vs {ml} lower parameters diverges for z = {z} != 0"
                    )));
                }
            }
            RadiusClass::One => {
                if z.norm() > 0.95 {
                    return Err(Error::OutsideRadius(format!(
                        "|z| = {:.4} exceeds 0.95 of the unit radius",
                        z.norm()
                    )));
                }
            }
            RadiusClass::Infinity => {}
        }
    }
    let twist = 1 + ml as i64 - nu as i64;
    let mut s = ONE;
    let mut term = ONE;
    let mut small = 0u32;
    let mut k: usize = 0;
    loop {
        if let Some(last) = term_at {
            if k > last {
                return ensure_finite(s, "basic_phi value");
            }
        } else if small >= 2 && k >= 8 {
            return ensure_finite(s, "basic_phi value");
        }
        if k >= ctx.max_series_terms {
            return Err(Error::TruncationBudget(format!(
                "basic_phi did not meet tol within {} terms",
                ctx.max_series_terms
            )));
        }
        // term_{k+1} = term_k * ratio(k)
        let qk = ctx.q_int(k as i64);
        let mut ratio = z / (1.0 - ctx.q_int(k as i64 + 1));
        for &a in &params.upper {
            ratio *= ONE - a * qk;
        }
        for &b in &params.lower {
            ratio /= ONE - b * qk;
        }
        if twist != 0 {
            // ((-1) q^k)^twist, an exact real factor
            let sign = if twist % 2 != 0 { -1.0 } else { 1.0 };
            ratio *= sign * ctx.q_int(k as i64 * twist);
        }
        term *= ratio;
        ensure_finite(term, "basic_phi term")?;
        s += term;
        k += 1;
        if term.norm() < ctx.tol {
            small += 1;
        } else {
            small = 0;
        }
    }
}

/// Classical hypergeometric series sum_k prod(alpha)_k / (k! prod(beta)_k) z^k.
pub fn classical_f(
    params: &HypergeometricParams,
    z: Complex64,
    ctx: &QContext,
) -> Result<Complex64> {
    if params.kind != SeriesKind::Classical {
        return Err(Error::Domain("classical_f requires classical parameters".into()));
    }
    ensure_finite(z, "series argument")?;
    let nu = params.upper.len();
    let ml = params.lower.len();
    // upper parameter equal to a non-positive integer terminates the series
    let term_at = params
        .upper
        .iter()
        .filter_map(|a| {
            let r = a.re.round();
            if r <= 0.0 && (a - Complex64::new(r, 0.0)).norm() < 1e-12 {
                Some((-r) as usize)
            } else {
                None
            }
        })
        .min();
    if term_at.is_none() {
        match radius_class(nu, ml) {
            RadiusClass::Zero => {
                if z != ZERO {
                    return Err(Error::DivergentSeries(format!(
                        "{nu} upper vs {ml} lower classical parameters diverge at z = {z}"
                    )));
                }
            }
            RadiusClass::One => {
                if z.norm() > 0.95 {
                    return Err(Error::OutsideRadius(format!(
                        "|z| = {:.4} exceeds 0.95 of the unit radius",
                        z.norm()
                    )));
                }
            }
            RadiusClass::Infinity => {}
        }
    }
    let mut s = ONE;
    let mut term = ONE;
    let mut small = 0u32;
    let mut k: usize = 0;
    loop {
        if let Some(last) = term_at {
            if k > last {
                return ensure_finite(s, "classical_f value");
            }
        } else if small >= 2 && k >= 8 {
            return ensure_finite(s, "classical_f value");
        }
        if k >= ctx.max_series_terms {
            return Err(Error::TruncationBudget(format!(
                "classical_f did not meet tol within {} terms",
                ctx.max_series_terms
            )));
        }
        let kf = k as f64;
        let mut ratio = z / (kf + 1.0);
        for &a in &params.upper {
            ratio *= a + kf;
        }
        for &b in &params.lower {
            ratio /= b + kf;
        }
        term *= ratio;
        ensure_finite(term, "classical_f term")?;
        s += term;
        k += 1;
        if term.norm() < ctx.tol {
            small += 1;
        } else {
            small = 0;
        }
    }
}

/// Variable tag of a formal power series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    Z,
    ZInverse,
}

/// Coefficient list with a variable tag. Divergent formal series live only
/// here; there is no evaluation method, only explicit partial sums.
#[derive(Debug, Clone)]
pub struct FormalPowerSeries {
    pub variable: Variable,
    coeffs: Vec<Complex64>,
    pub label: String,
}

impl FormalPowerSeries {
    pub fn new(variable: Variable, coeffs: Vec<Complex64>, label: impl Into<String>) -> Self {
        FormalPowerSeries {
            variable,
            coeffs,
            label: label.into(),
        }
    }

    pub fn coeff(&self, k: usize) -> Complex64 {
        self.coeffs.get(k).copied().unwrap_or(ZERO)
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// Truncated sum of the first `n_terms` terms at the given point. This
    /// is a finite sum and therefore legal even for divergent series.
    pub fn partial_sum(&self, z: &BranchedPoint, n_terms: usize) -> Result<Complex64> {
        let u = match self.variable {
            Variable::Z => z.to_complex(),
            Variable::ZInverse => z.to_complex().inv(),
        };
        let mut s = ZERO;
        let mut up = ONE;
        for k in 0..n_terms.min(self.coeffs.len()) {
            s += self.coeffs[k] * up;
            up *= u;
        }
        ensure_finite(s, "partial sum")
    }
}

/// Specification of the confluent q-difference equation with n-1 regular
/// upper parameters a and n-1 lower parameters b (the n-th upper slot is the
/// confluent zero).
#[derive(Debug, Clone)]
pub struct ConfluentEquationSpec {
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
}

impl ConfluentEquationSpec {
    pub fn new(a: Vec<Complex64>, b: Vec<Complex64>, ctx: &QContext) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::Domain(format!(
                "need equally many upper and lower parameters (>= 1 each), got {} and {}",
                a.len(),
                b.len()
            )));
        }
        for &ai in &a {
            ensure_finite(ai, "equation parameter")?;
            if ai == ZERO {
                return Err(Error::Domain("upper parameters must be nonzero".into()));
            }
        }
        for (i, &ai) in a.iter().enumerate() {
            for &aj in a.iter().skip(i + 1) {
                if crate::qcore::on_spiral(ONE, ai / aj, ctx)? {
                    return Err(Error::Genericity(format!(
                        "upper parameter ratio {} lies on q^Z within margin",
                        ai / aj
                    )));
                }
            }
        }
        for &bl in &b {
            ensure_finite(bl, "equation parameter")?;
            if bl == ZERO {
                return Err(Error::Domain("lower parameters must be nonzero".into()));
            }
            let (d, n) = crate::qcore::spiral_distance(ONE, bl, ctx)?;
            if d < ctx.spiral_margin && n <= 0 {
                return Err(Error::Domain(format!(
                    "lower parameter {bl} within margin of q^{n}"
                )));
            }
        }
        Ok(ConfluentEquationSpec { a, b })
    }

    /// Order n of the equation (number of independent solutions).
    pub fn n(&self) -> usize {
        self.a.len() + 1
    }

    pub fn prod_a(&self) -> Complex64 {
        self.a.iter().product()
    }

    pub fn prod_b(&self) -> Complex64 {
        self.b.iter().product()
    }
}

/// Elementary symmetric polynomials e_0..e_n of the given values.
pub fn elementary_symmetric(vals: &[Complex64]) -> Vec<Complex64> {
    let mut e = vec![ZERO; vals.len() + 1];
    e[0] = ONE;
    for (i, &v) in vals.iter().enumerate() {
        for j in (1..=i + 1).rev() {
            let lower = e[j - 1];
            e[j] += v * lower;
        }
    }
    e
}

/// Coefficients of prod_l (1 - a_l s) as a polynomial in the shift symbol s,
/// by brute-force expansion; the closed form is (-1)^j e_j(a).
pub fn shift_operator_coeffs(vals: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![ONE];
    for &a in vals {
        let mut next = vec![ZERO; c.len() + 1];
        for (j, &cj) in c.iter().enumerate() {
            next[j] += cj;
            next[j + 1] -= a * cj;
        }
        c = next;
    }
    c
}

/// Coefficient table of the q-difference operator associated with a series
/// of `upper` and `lower` parameters, in the two supported shapes.
///
/// For n = m+1 the operator is z prod(1 - a_l s) - (1 - s) prod(1 - b_l/q s)
/// applied at z. For n = m+2 it is
/// (1 - s) prod(1 - b_l/q s) y(z) + z [prod(1 - a_l s) y](z/q),
/// whose evaluations reach one step below z on the q-spiral.
pub fn hypergeometric_residual(
    upper: &[Complex64],
    lower: &[Complex64],
    f: &dyn Fn(&BranchedPoint) -> Result<Complex64>,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<f64> {
    let n = upper.len();
    let m = lower.len();
    let zc = z.to_complex();
    let bq: Vec<Complex64> = lower.iter().map(|&b| b / ctx.q).collect();
    let ea = elementary_symmetric(upper);
    let eb = elementary_symmetric(&bq);
    let get = |e: &Vec<Complex64>, j: usize| e.get(j).copied().unwrap_or(ZERO);
    let mut acc = ZERO;
    let mut scale: f64 = 0.0;
    if n == m + 1 {
        for j in 0..=n {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let bj = sign
                * (zc * get(&ea, j) - get(&eb, j) - if j >= 1 { get(&eb, j - 1) } else { ZERO });
            if bj == ZERO {
                continue;
            }
            let term = bj * f(&z.q_shift(ctx, j as i64)?)?;
            acc += term;
            scale = scale.max(term.norm());
        }
    } else if n == m + 2 {
        for j in 0..=m + 1 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let bj = sign * (get(&eb, j) + if j >= 1 { get(&eb, j - 1) } else { ZERO });
            if bj == ZERO {
                continue;
            }
            let term = bj * f(&z.q_shift(ctx, j as i64)?)?;
            acc += term;
            scale = scale.max(term.norm());
        }
        for j in 0..=n {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let bj = sign * get(&ea, j) * zc;
            let term = bj * f(&z.q_shift(ctx, j as i64 - 1)?)?;
            acc += term;
            scale = scale.max(term.norm());
        }
    } else {
        return Err(Error::Domain(format!(
            "no residual operator for {n} upper and {m} lower parameters"
        )));
    }
    Ok(acc.norm() / scale.max(1e-300))
}

/// Residual of the confluent equation applied to a callable solution.
pub fn q_difference_residual(
    f: &dyn Fn(&BranchedPoint) -> Result<Complex64>,
    spec: &ConfluentEquationSpec,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<f64> {
    let mut upper = spec.a.clone();
    upper.push(ZERO);
    hypergeometric_residual(&upper, &spec.b, f, z, ctx)
}

/// Value of the i-th solution (0-based) at infinity of the Fuchsian equation
/// with n upper parameters a and n-1 lower parameters b.
pub fn fuchsian_infinity_basis(
    a: &[Complex64],
    b: &[Complex64],
    i: usize,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<Complex64> {
    let n = a.len();
    if b.len() + 1 != n || i >= n {
        return Err(Error::Domain(format!(
            "need n upper, n-1 lower parameters and i < n; got {n}, {}, i = {i}",
            b.len()
        )));
    }
    let ai = a[i];
    if ai == ZERO {
        return Err(Error::Domain("basis index with zero upper parameter".into()));
    }
    let mut upper = vec![ai];
    for &bl in b {
        upper.push(ai * ctx.q / bl);
    }
    let mut lower = Vec::with_capacity(n - 1);
    for (l, &al) in a.iter().enumerate() {
        if l != i {
            lower.push(ai * ctx.q / al);
        }
    }
    let params = HypergeometricParams::basic(upper, lower, ctx)?;
    let prod_a: Complex64 = a.iter().product();
    let prod_b: Complex64 = b.iter().product();
    let w = ctx.q * prod_b / (z.to_complex() * prod_a);
    let phi = basic_phi(&params, w, ctx)?;
    let power = branched_power(z, -log_q(ai, ctx)?)?;
    ensure_finite(phi * power, "fuchsian infinity basis value")
}

/// Value of the j-th solution (0-based, j = n-1 is the analytic one) at 0 of
/// the confluent equation.
pub fn f0_basis(
    spec: &ConfluentEquationSpec,
    j: usize,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<Complex64> {
    let n = spec.n();
    if j >= n {
        return Err(Error::Domain(format!("basis index {j} out of range for order {n}")));
    }
    let zc = z.to_complex();
    if j == n - 1 {
        let mut upper = spec.a.clone();
        upper.push(ZERO);
        let params = HypergeometricParams::basic(upper, spec.b.clone(), ctx)?;
        return basic_phi(&params, zc, ctx);
    }
    let bj = spec.b[j];
    let mut upper: Vec<Complex64> = spec.a.iter().map(|&al| ctx.q * al / bj).collect();
    upper.push(ZERO);
    let mut lower = vec![Complex64::new(ctx.q * ctx.q, 0.0) / bj];
    for (l, &bl) in spec.b.iter().enumerate() {
        if l != j {
            lower.push(ctx.q * bl / bj);
        }
    }
    let params = HypergeometricParams::basic(upper, lower, ctx)?;
    let phi = basic_phi(&params, zc, ctx)?;
    let power = branched_power(z, ONE - log_q(bj, ctx)?)?;
    ensure_finite(phi * power, "f0 basis value")
}

/// Convergent series tail of the distinguished solution at infinity:
/// h(z) = 1 + sum c_k z^{-k}, with its exponent and empirical radius.
#[derive(Debug, Clone)]
pub struct HSeries {
    pub series: FormalPowerSeries,
    /// Exponent gamma = sum log_q(a_l / b_l) of the accompanying power.
    pub exponent: Complex64,
    /// Empirical radius of convergence in the variable 1/z.
    pub radius_inv_z: f64,
}

impl HSeries {
    /// Sum of the series at z; requires |1/z| to stay 20% inside the
    /// empirical radius.
    pub fn eval(&self, z: &BranchedPoint, ctx: &QContext) -> Result<Complex64> {
        let u = z.to_complex().inv();
        if u.norm() > 0.8 * self.radius_inv_z {
            return Err(Error::OutsideRadius(format!(
                "|1/z| = {:.4} exceeds 0.8 of the empirical radius {:.4}",
                u.norm(),
                self.radius_inv_z
            )));
        }
        let mut s = ZERO;
        let mut up = ONE;
        let mut small = 0u32;
        for k in 0..self.series.order() {
            let term = self.series.coeff(k) * up;
            s += term;
            up *= u;
            if term.norm() < 0.01 * ctx.tol {
                small += 1;
                if small >= 2 {
                    return ensure_finite(s, "h series value");
                }
            } else {
                small = 0;
            }
        }
        // tail did not fall below tolerance within the computed order
        Err(Error::TruncationBudget(format!(
            "h series needs more than {} coefficients at |1/z| = {:.4}",
            self.series.order(),
            u.norm()
        )))
    }

    /// Full solution value h(z) z^gamma / (z; q)_inf.
    pub fn solution_value(&self, z: &BranchedPoint, ctx: &QContext) -> Result<Complex64> {
        let h = self.eval(z, ctx)?;
        let power = branched_power(z, self.exponent)?;
        let poch = pochhammer_infinite_scaled(z.to_complex(), ctx)?;
        if poch.is_zero() {
            return Err(Error::PoleProximity("z on the q^{-N} pole spiral".into()));
        }
        ScaledComplex::from_complex(h * power).div(poch)?.to_complex()
    }
}

/// The n formal solutions of the confluent equation at infinity: indices
/// 0..n-2 are divergent coefficient lists (with their branched exponents),
/// index n-1 is the convergent [`HSeries`].
#[derive(Debug, Clone)]
pub struct ConfluentFormalBasis {
    pub divergent: Vec<(FormalPowerSeries, Complex64)>,
    pub last: HSeries,
}

/// Coefficients of the divergent expansion attached to upper parameter
/// index i, as a series in 1/z (argument scaling folded in).
fn divergent_coeffs(
    spec: &ConfluentEquationSpec,
    i: usize,
    order: usize,
    ctx: &QContext,
) -> Result<FormalPowerSeries> {
    let n = spec.n();
    let ai = spec.a[i];
    // phi-type coefficients t_k with ratio
    // t_{k+1}/t_k = -q^{-k} prod(1 - A q^k) / ((1-q^{k+1}) prod(1 - B q^k))
    let mut upper = vec![ai];
    for &bl in &spec.b {
        upper.push(ai * ctx.q / bl);
    }
    let mut lower = Vec::new();
    for (l, &al) in spec.a.iter().enumerate() {
        if l != i {
            lower.push(ai * ctx.q / al);
        }
    }
    debug_assert_eq!(upper.len(), n);
    debug_assert_eq!(lower.len(), n - 2);
    let ci = spec.prod_b() / (ai * spec.prod_a());
    let mut coeffs = Vec::with_capacity(order);
    let mut t = ONE;
    for k in 0..order {
        // coefficients grow like q^{-k(k-1)/2}; stop before leaving f64
        // range, keeping the list as long as any resummation can use
        if !(t.re.is_finite() && t.im.is_finite()) || t.norm() > 1e260 {
            break;
        }
        coeffs.push(t);
        let qk = ctx.q_int(k as i64);
        let mut ratio = ci
            * Complex64::new(
                -ctx.q_int(-(k as i64)) / (1.0 - ctx.q_int(k as i64 + 1)),
                0.0,
            );
        for &a in &upper {
            ratio *= ONE - a * qk;
        }
        for &b in &lower {
            ratio /= ONE - b * qk;
        }
        t *= ratio;
    }
    if coeffs.len() < 8 {
        return Err(Error::TruncationBudget(format!(
            "divergent expansion overflowed after {} coefficients",
            coeffs.len()
        )));
    }
    Ok(FormalPowerSeries::new(
        Variable::ZInverse,
        coeffs,
        format!("divergent expansion {i}"),
    ))
}

/// Triangular recursion for the convergent tail of the last formal solution.
///
/// Substituting h(z) z^gamma / (z;q)_inf into the equation and clearing the
/// common factor leaves sum_j W_j(z) h(q^j z) = 0 with polynomial
/// W_j(z) = (-1)^j [z e_j(a) - e_j(b/q) - e_{j-1}(b/q)] (prod a/prod b)^j
///          prod_{i<j} (1 - q^i z).
/// Matching the coefficient of z^{n-m} determines c_m from c_0..c_{m-1};
/// the m = 0 relation must vanish identically and is asserted as a sign
/// check on the assembled tables.
fn h_series_coeffs(
    spec: &ConfluentEquationSpec,
    order: usize,
    ctx: &QContext,
) -> Result<Vec<Complex64>> {
    let n = spec.n();
    let qg = spec.prod_a() / spec.prod_b(); // q^gamma
    let bq: Vec<Complex64> = spec.b.iter().map(|&b| b / ctx.q).collect();
    let ea = elementary_symmetric(&spec.a);
    let eb = elementary_symmetric(&bq);
    let get = |e: &Vec<Complex64>, j: i64| {
        if j < 0 {
            ZERO
        } else {
            e.get(j as usize).copied().unwrap_or(ZERO)
        }
    };
    // polynomial coefficient tables w[j][d], degree d of z in W_j
    let mut w: Vec<Vec<Complex64>> = Vec::with_capacity(n + 1);
    let mut qgj = ONE;
    for j in 0..=n {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        // B_j(z) = sign (e_j(a) z - e_j(b/q) - e_{j-1}(b/q)), constant and linear part
        let b0 = sign * -(get(&eb, j as i64) + get(&eb, j as i64 - 1));
        let b1 = sign * get(&ea, j as i64);
        // P_j(z) = prod_{i=0}^{j-1} (1 - q^i z)
        let mut p = vec![ONE];
        for i in 0..j {
            let qi = ctx.q_int(i as i64);
            let mut next = vec![ZERO; p.len() + 1];
            for (d, &pd) in p.iter().enumerate() {
                next[d] += pd;
                next[d + 1] -= qi * pd;
            }
            p = next;
        }
        let mut wj = vec![ZERO; j + 2];
        for (d, &pd) in p.iter().enumerate() {
            wj[d] += b0 * pd * qgj;
            wj[d + 1] += b1 * pd * qgj;
        }
        w.push(wj);
        qgj *= qg;
    }
    let wdn = |j: usize, d: i64| -> Complex64 {
        if d < 0 {
            ZERO
        } else {
            w[j].get(d as usize).copied().unwrap_or(ZERO)
        }
    };
    // consistency of the exponent choice: the top coefficient of z^n must
    // cancel (this is the m = 0 relation with c_0 = 1)
    let mut top = ZERO;
    let mut top_scale: f64 = 0.0;
    for j in 0..=n {
        let v = wdn(j, n as i64);
        top += v;
        top_scale = top_scale.max(v.norm());
    }
    if top.norm() > 1e-9 * top_scale.max(1e-300) {
        return Err(Error::RecursionSingular(format!(
            "leading coefficient failed to cancel (|sum| = {:.3e}); exponent tables inconsistent",
            top.norm()
        )));
    }
    let mut c = vec![ONE];
    for m in 1..order {
        // level-m relation, scaled by q^{n m} to keep exponents bounded:
        // sum_j sum_{k<=m} w[j][n-m+k] q^{n m - j k} c_k = 0
        let mut rhs = ZERO;
        let mut pivot = ZERO;
        for j in 0..=n {
            for (k, &ck) in c.iter().enumerate() {
                let d = n as i64 - m as i64 + k as i64;
                let v = wdn(j, d);
                if v == ZERO {
                    continue;
                }
                let e = (n * m) as f64 - (j * k) as f64;
                rhs += v * ck * (e * ctx.ln_q()).exp();
            }
            let e = ((n * m) as f64 - (j * m) as f64) * ctx.ln_q();
            pivot += wdn(j, n as i64) * e.exp();
        }
        if pivot.norm() < 1e-250 {
            return Err(Error::RecursionSingular(format!(
                "vanishing pivot at order {m}"
            )));
        }
        let cm = -rhs / pivot;
        ensure_finite(cm, "h series coefficient")?;
        c.push(cm);
    }
    Ok(c)
}

/// Empirical radius of convergence in 1/z from the tail coefficient ratios.
fn empirical_radius(c: &[Complex64]) -> f64 {
    let k0 = c.len() / 2;
    let mut ratios: Vec<f64> = Vec::new();
    for k in k0..c.len() - 1 {
        let a = c[k].norm();
        let b = c[k + 1].norm();
        if a > 1e-280 && b > 1e-280 {
            ratios.push(a / b);
        }
    }
    if ratios.is_empty() {
        // coefficients fell below floating range: effectively entire tail
        return f64::INFINITY;
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ratios[ratios.len() / 2]
}

/// Exponent gamma = sum log_q(a_l / b_l) of the distinguished solution at
/// infinity, with each log taken on the principal branch. Connection
/// coefficients that must cancel the z^gamma of that solution exactly have
/// to use this same branch combination.
pub fn confluent_exponent(spec: &ConfluentEquationSpec, ctx: &QContext) -> Result<Complex64> {
    let mut gamma = ZERO;
    for (&al, &bl) in spec.a.iter().zip(&spec.b) {
        gamma += log_q(al, ctx)? - log_q(bl, ctx)?;
    }
    Ok(gamma)
}

/// All n formal solutions of the confluent equation at infinity, computed
/// to `order` coefficients.
pub fn confluent_formal_basis(
    spec: &ConfluentEquationSpec,
    order: usize,
    ctx: &QContext,
) -> Result<ConfluentFormalBasis> {
    let n = spec.n();
    let mut divergent = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let series = divergent_coeffs(spec, i, order, ctx)?;
        let expo = -log_q(spec.a[i], ctx)?;
        divergent.push((series, expo));
    }
    let c = h_series_coeffs(spec, order, ctx)?;
    let radius = empirical_radius(&c);
    let gamma = confluent_exponent(spec, ctx)?;
    Ok(ConfluentFormalBasis {
        divergent,
        last: HSeries {
            series: FormalPowerSeries::new(Variable::ZInverse, c, "convergent tail"),
            exponent: gamma,
            radius_inv_z: radius,
        },
    })
}
