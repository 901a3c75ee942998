//! q-Borel / q-Laplace resummation along a discrete spiral direction.
//!
//! The q-Borel transform divides out the order-1 q-Gevrey growth of a
//! formal series; the q-Laplace transform along a direction lambda sums the
//! result over the points lambda q^n against theta weights. Composing the
//! two turns the divergent solutions at infinity into honest meromorphic
//! ones, with poles confined to a single q-spiral that depends only on the
//! class of lambda mod q^Z.
//!
//! Two independent evaluation routes are kept side by side:
//! - [`nf`]: the closed form of the resummed series as a theta-weighted
//!   combination of convergent basic series (the production evaluator);
//! - [`nf_direct`]: the definition itself, summing the Borel transform
//!   along the spiral, with values outside its disc of convergence reached
//!   by the q-difference equation the transform satisfies.
//! The test suites hold the two against each other.

use std::cell::RefCell;
use std::collections::HashMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qcore::{
    branched_power, ensure_finite, log_q, pochhammer_ratio_scaled, spiral_distance, theta_ratio,
    theta_scaled, BranchedPoint, QContext, ScaledAccumulator, ScaledComplex, ONE, ZERO,
};
use crate::qseries::{
    basic_phi, elementary_symmetric, ConfluentEquationSpec, FormalPowerSeries, HSeries,
    HypergeometricParams, Variable,
};

/// A discrete q-spiral of directions [lambda; q] = { lambda q^k, k in Z },
/// carried around as a concrete representative plus a fixed argument.
///
/// Every resummation result depends on lambda only through its class mod
/// q^Z (see the representative-independence tests), but limit processes in
/// q need a continuous choice of argument, so the argument is stored
/// explicitly instead of being recomputed from the representative.
#[derive(Debug, Clone, Copy)]
pub struct SpiralDirection {
    lambda: Complex64,
    argument: f64,
}

impl SpiralDirection {
    /// Direction through `lambda` with the principal argument.
    pub fn new(lambda: Complex64) -> Result<Self> {
        ensure_finite(lambda, "spiral direction")?;
        if lambda == ZERO {
            return Err(Error::Domain("spiral direction must be nonzero".into()));
        }
        Ok(SpiralDirection { lambda, argument: lambda.arg() })
    }

    /// Direction with an explicitly chosen (possibly non-principal) argument.
    pub fn with_argument(modulus: f64, argument: f64) -> Result<Self> {
        if !(modulus > 0.0) || !modulus.is_finite() || !argument.is_finite() {
            return Err(Error::Domain(format!(
                "spiral direction needs a positive finite modulus and finite argument, got {modulus}, {argument}"
            )));
        }
        Ok(SpiralDirection {
            lambda: Complex64::from_polar(modulus, argument),
            argument,
        })
    }

    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    pub fn argument(&self) -> f64 {
        self.argument
    }

    /// Another representative of the same spiral; q is positive real, so
    /// the argument is unchanged.
    pub fn shifted(&self, ctx: &QContext, k: i64) -> Self {
        SpiralDirection {
            lambda: self.lambda * ctx.q_int(k),
            argument: self.argument,
        }
    }

    /// Direction scaled by a constant, as in the rescalings that relate a
    /// solution's user-facing lambda to the one fed to the resummed series.
    pub fn scaled(&self, factor: Complex64) -> Result<Self> {
        let lambda = self.lambda * factor;
        ensure_finite(lambda, "scaled spiral direction")?;
        if lambda == ZERO {
            return Err(Error::Domain("scaled spiral direction vanishes".into()));
        }
        Ok(SpiralDirection {
            lambda,
            argument: self.argument + factor.arg(),
        })
    }
}

/// q-Borel transform: coefficient a_k picks up q^{k(k-1)/2}. The result is
/// a series in the Borel plane variable (positive powers).
pub fn q_borel(f: &FormalPowerSeries, ctx: &QContext) -> FormalPowerSeries {
    let mut coeffs = Vec::with_capacity(f.order());
    for k in 0..f.order() {
        let e = (k as i64 * (k as i64 - 1)) as f64 / 2.0 * ctx.ln_q();
        coeffs.push(f.coeff(k) * e.exp());
    }
    FormalPowerSeries::new(Variable::Z, coeffs, format!("borel of {}", f.label))
}

/// Which Laplace kernel to use: series in z^{-1} pair with theta(lambda q^n z),
/// series in z with theta(lambda q^n / z).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplaceKernel {
    InverseZ,
    PlainZ,
}

/// Bilateral q-Laplace sum sum_n g(lambda q^n) / theta(lambda q^n z) (or
/// with 1/z in the kernel). `g` is queried at spiral indices n and must
/// return scaled values; the sum starts near |lambda q^n| = 1 and expands
/// both ways until the terms fall below tolerance relative to the largest
/// one. A growth streak beyond what order-1 q-exponential growth allows is
/// reported as tail divergence.
pub fn q_laplace_sum(
    g: &dyn Fn(i64) -> Result<ScaledComplex>,
    lambda: Complex64,
    z: Complex64,
    kernel: LaplaceKernel,
    ctx: &QContext,
) -> Result<Complex64> {
    ensure_finite(lambda, "laplace direction")?;
    ensure_finite(z, "laplace argument")?;
    if lambda == ZERO || z == ZERO {
        return Err(Error::Domain("laplace direction and argument must be nonzero".into()));
    }
    let zk = match kernel {
        LaplaceKernel::InverseZ => z,
        LaplaceKernel::PlainZ => z.inv(),
    };
    // kernel zeros sit where lambda q^n zk meets -q^Z; keep the whole
    // argument spiral clear of them
    let (d, _) = spiral_distance(-lambda.inv(), zk, ctx)?;
    if d < ctx.spiral_margin {
        return Err(Error::PoleProximity(format!(
            "argument within {:.3} of the laplace pole spiral",
            ctx.spiral_margin
        )));
    }
    let t = -ctx.ln_q();
    let n0 = (lambda.norm().ln() / t).round() as i64;
    let growth_budget = ((30.0 / t).ceil() as usize + 60).min(20_000);
    let mut acc = ScaledAccumulator::new();
    let mut max_ln = f64::NEG_INFINITY;
    let ln_cut = (0.01 * ctx.tol).ln();
    for dir in [1i64, -1] {
        let mut small = 0u32;
        let mut growth = 0usize;
        let mut prev_ln = f64::NEG_INFINITY;
        let mut steps = 0usize;
        let mut n = if dir == 1 { n0 } else { n0 - 1 };
        loop {
            let point = lambda * ((n as f64) * ctx.ln_q()).exp();
            let th = theta_scaled(point * zk, ctx)?;
            if th.is_zero() {
                return Err(Error::PoleProximity(format!(
                    "laplace kernel vanishes at spiral index {n}: z on the pole spiral"
                )));
            }
            let term = g(n)?.div(th)?;
            let ln = term.ln_norm();
            acc.add(term);
            max_ln = max_ln.max(ln);
            if ln < max_ln + ln_cut {
                small += 1;
                if small >= 2 {
                    break;
                }
            } else {
                small = 0;
            }
            if ln > prev_ln {
                growth += 1;
                if growth > growth_budget {
                    return Err(Error::TailDivergence(format!(
                        "laplace terms still growing after {growth} steps on side {dir}; \
                         integrand exceeds q-exponential order 1"
                    )));
                }
            } else {
                growth = 0;
            }
            prev_ln = ln;
            steps += 1;
            if steps > ctx.max_bilateral_terms {
                return Err(Error::TruncationBudget(format!(
                    "laplace sum needs more than {} terms per side",
                    ctx.max_bilateral_terms
                )));
            }
            n += dir;
        }
    }
    acc.value().to_complex()
}

/// Value of the Borel transform of a convergent series at an arbitrary
/// point. Convergent input makes the transform entire of q-exponential
/// order 1; the q^{k(k-1)/2} damping is applied in log space because it
/// underflows f64 near k = 45 while the terms it multiplies do not.
fn borel_value_entire(
    f: &FormalPowerSeries,
    xi: Complex64,
    ctx: &QContext,
) -> Result<ScaledComplex> {
    let ln_xi = xi.norm().ln();
    let mut acc = ScaledAccumulator::new();
    let mut max_ln = f64::NEG_INFINITY;
    let mut small = 0u32;
    for k in 0..f.order() {
        let c = f.coeff(k);
        if c == ZERO {
            continue;
        }
        let e = (k as i64 * (k as i64 - 1)) as f64 / 2.0 * ctx.ln_q() + k as f64 * ln_xi;
        let term = ScaledComplex::from_complex(c * Complex64::from_polar(1.0, xi.arg() * k as f64))
            .mul(ScaledComplex::from_exp(e));
        let ln = term.ln_norm();
        acc.add(term);
        max_ln = max_ln.max(ln);
        if ln < max_ln + (0.01 * ctx.tol).ln() {
            small += 1;
            if small >= 2 {
                return Ok(acc.value());
            }
        } else {
            small = 0;
        }
    }
    Err(Error::TruncationBudget(format!(
        "borel sum needs more than {} coefficients at |xi| = {:.3e}",
        f.order(),
        xi.norm()
    )))
}

/// Resummation of a convergent series in z^{-1}: q-Borel followed by the
/// q-Laplace sum along lambda. By the summability of convergent series this
/// reproduces the series value for |z| beyond its radius, independently of
/// lambda; the identity tests and the acceptance gate rely on that.
pub fn resum_convergent(
    f: &FormalPowerSeries,
    lambda: Complex64,
    z: Complex64,
    ctx: &QContext,
) -> Result<Complex64> {
    if f.variable != Variable::ZInverse {
        return Err(Error::Domain("resum_convergent expects a series in 1/z".into()));
    }
    let g = |n: i64| -> Result<ScaledComplex> {
        let xi = lambda * ((n as f64) * ctx.ln_q()).exp();
        borel_value_entire(f, xi, ctx)
    };
    q_laplace_sum(&g, lambda, z, LaplaceKernel::InverseZ, ctx)
}

fn validate_nf_params(
    upper: &[Complex64],
    lower: &[Complex64],
    ctx: &QContext,
) -> Result<()> {
    let n = upper.len();
    if lower.len() + 2 != n {
        return Err(Error::Domain(format!(
            "need n upper and n-2 lower parameters, got {} and {}",
            n,
            lower.len()
        )));
    }
    for &a in upper {
        ensure_finite(a, "upper parameter")?;
        if a == ZERO {
            return Err(Error::Domain("upper parameters must be nonzero".into()));
        }
    }
    for (i, &ai) in upper.iter().enumerate() {
        for &aj in upper.iter().skip(i + 1) {
            if crate::qcore::on_spiral(ONE, ai / aj, ctx)? {
                return Err(Error::Genericity(format!(
                    "upper parameter ratio {} lies on q^Z within margin",
                    ai / aj
                )));
            }
        }
    }
    for &b in lower {
        ensure_finite(b, "lower parameter")?;
        if b == ZERO {
            return Err(Error::Domain("lower parameters must be nonzero".into()));
        }
        let (d, m) = spiral_distance(ONE, b, ctx)?;
        if d < ctx.spiral_margin && m <= 0 {
            return Err(Error::Domain(format!("lower parameter {b} within margin of q^{m}")));
        }
    }
    Ok(())
}

fn ensure_off_neg_spiral(anchor: Complex64, w: Complex64, what: &str, ctx: &QContext) -> Result<()> {
    let (d, _) = spiral_distance(-anchor, w, ctx)?;
    if d < ctx.spiral_margin {
        return Err(Error::PoleProximity(format!(
            "{what} within {:.3} of the pole spiral through {}",
            ctx.spiral_margin, -anchor
        )));
    }
    Ok(())
}

/// Resummed basic series with n upper and n-2 lower parameters along the
/// direction lambda, by its closed form: a theta-weighted combination of n
/// convergent series in the reciprocal argument. Requires lambda off
/// [-1; q], z off [-lambda; q], and |q prod(b) / (z prod(a))| <= 0.95.
pub fn nf(
    upper: &[Complex64],
    lower: &[Complex64],
    lambda: Complex64,
    z: Complex64,
    ctx: &QContext,
) -> Result<Complex64> {
    validate_nf_params(upper, lower, ctx)?;
    ensure_finite(lambda, "resummation direction")?;
    ensure_finite(z, "argument")?;
    if lambda == ZERO || z == ZERO {
        return Err(Error::Domain("direction and argument must be nonzero".into()));
    }
    ensure_off_neg_spiral(ONE, lambda, "direction lambda", ctx)?;
    ensure_off_neg_spiral(lambda, z, "argument z", ctx)?;
    let n = upper.len();
    let prod_a: Complex64 = upper.iter().product();
    let prod_b: Complex64 = lower.iter().product();
    let w = ctx.q * prod_b / (z * prod_a);
    if w.norm() > 0.95 {
        return Err(Error::OutsideRadius(format!(
            "reciprocal argument modulus {:.4} exceeds 0.95",
            w.norm()
        )));
    }
    let mut acc = ScaledAccumulator::new();
    for k in 0..n {
        let ak = upper[k];
        let mut num = Vec::new();
        let mut den = Vec::new();
        for (l, &al) in upper.iter().enumerate() {
            if l != k {
                num.push(al);
                den.push(al / ak);
            }
        }
        for &bl in lower {
            num.push(bl / ak);
            den.push(bl);
        }
        let poch = pochhammer_ratio_scaled(&num, &den, ctx)?;
        let th1 = theta_ratio(ctx.q * ak * z / lambda, ctx.q * z / lambda, ctx)?;
        let th2 = theta_ratio(ak * lambda, lambda, ctx)?;
        let mut phi_upper = vec![ak];
        for &bl in lower {
            phi_upper.push(ak * ctx.q / bl);
        }
        phi_upper.push(ZERO);
        let mut phi_lower = Vec::new();
        for (l, &al) in upper.iter().enumerate() {
            if l != k {
                phi_lower.push(ak * ctx.q / al);
            }
        }
        let params = HypergeometricParams::basic(phi_upper, phi_lower, ctx)?;
        let phi = basic_phi(&params, w, ctx)?;
        acc.add(poch.mul(th1).mul(th2).mul_complex(phi));
    }
    acc.value().to_complex()
}

/// Same function as [`nf`], evaluated from the definition: the Borel
/// transform of the series is a convergent basic series on the unit disc,
/// continued down the spiral by the q-difference equation it satisfies, and
/// fed into the bilateral Laplace sum. Slow; exists to cross-check [`nf`].
pub fn nf_direct(
    upper: &[Complex64],
    lower: &[Complex64],
    lambda: Complex64,
    z: Complex64,
    ctx: &QContext,
) -> Result<Complex64> {
    validate_nf_params(upper, lower, ctx)?;
    if lambda == ZERO || z == ZERO {
        return Err(Error::Domain("direction and argument must be nonzero".into()));
    }
    ensure_off_neg_spiral(ONE, lambda, "direction lambda", ctx)?;
    ensure_off_neg_spiral(lambda, z, "argument z", ctx)?;
    // Borel transform: phi with the lower list extended by 0, at -xi
    let mut blower = lower.to_vec();
    blower.push(ZERO);
    let params = HypergeometricParams::basic(upper.to_vec(), blower.clone(), ctx)?;
    let bq: Vec<Complex64> = blower.iter().map(|&b| b / ctx.q).collect();
    let ea = elementary_symmetric(upper);
    let eb = elementary_symmetric(&bq);
    let get = |e: &Vec<Complex64>, j: i64| {
        if j < 0 {
            ZERO
        } else {
            e.get(j as usize).copied().unwrap_or(ZERO)
        }
    };
    let cache: RefCell<HashMap<i64, ScaledComplex>> = RefCell::new(HashMap::new());
    // safe disc for direct summation of the transform
    let series_cut = (0.45f64.ln() - lambda.norm().ln()) / ctx.ln_q();
    struct Cont<'a> {
        cache: &'a RefCell<HashMap<i64, ScaledComplex>>,
        params: &'a HypergeometricParams,
        upper_len: usize,
        ea: &'a dyn Fn(i64) -> Complex64,
        eb: &'a dyn Fn(i64) -> Complex64,
        lambda: Complex64,
        series_cut: f64,
        ctx: &'a QContext,
    }
    impl Cont<'_> {
        fn get(&self, n: i64) -> Result<ScaledComplex> {
            if let Some(v) = self.cache.borrow().get(&n) {
                return Ok(*v);
            }
            let xi = self.lambda * ((n as f64) * self.ctx.ln_q()).exp();
            let v = if (n as f64) >= self.series_cut {
                ScaledComplex::from_complex(basic_phi(self.params, -xi, self.ctx)?)
            } else {
                // equation at w = -xi: B_0(w) y(w) = -sum_{j>=1} B_j(w) y(q^j w),
                // with all shifted points higher up the spiral (memoized)
                let w = -xi;
                let b0 = w - ONE;
                if b0.norm() < 0.5 * self.ctx.spiral_margin {
                    return Err(Error::PoleProximity(format!(
                        "borel continuation hits a pole at spiral index {n}"
                    )));
                }
                let mut acc = ScaledAccumulator::new();
                for j in 1..=self.upper_len as i64 {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    let bj = sign
                        * (w * (self.ea)(j) - (self.eb)(j) - (self.eb)(j - 1));
                    if bj == ZERO {
                        continue;
                    }
                    let y = self.get(n + j)?;
                    acc.add(y.mul_complex(bj));
                }
                acc.value().neg().div(ScaledComplex::from_complex(b0))?
            };
            self.cache.borrow_mut().insert(n, v);
            Ok(v)
        }
    }
    let ea_f = move |j: i64| get(&ea, j);
    let eb_f = move |j: i64| get(&eb, j);
    let cont = Cont {
        cache: &cache,
        params: &params,
        upper_len: upper.len(),
        ea: &ea_f,
        eb: &eb_f,
        lambda,
        series_cut,
        ctx,
    };
    let g = |n: i64| cont.get(n);
    q_laplace_sum(&g, lambda, z, LaplaceKernel::PlainZ, ctx)
}

/// Fundamental system of solutions at infinity of a confluent equation:
/// the n-1 resummed divergent expansions, plus the convergent one.
pub struct InfinityBasis {
    spec: ConfluentEquationSpec,
    h: HSeries,
}

impl InfinityBasis {
    pub fn new(spec: &ConfluentEquationSpec, order: usize, ctx: &QContext) -> Result<Self> {
        let basis = crate::qseries::confluent_formal_basis(spec, order, ctx)?;
        Ok(InfinityBasis {
            spec: spec.clone(),
            h: basis.last,
        })
    }

    pub fn spec(&self) -> &ConfluentEquationSpec {
        &self.spec
    }

    pub fn h_series(&self) -> &HSeries {
        &self.h
    }

    /// Direction actually passed to the resummed series for column i: the
    /// user-facing lambda rescaled by the argument constant.
    pub fn nf_direction(&self, i: usize, lambda: Complex64) -> Complex64 {
        let ci = self.spec.prod_b() / (self.spec.a[i] * self.spec.prod_a());
        lambda * ci
    }

    /// Value of the i-th solution (0-based). Columns 0..n-2 depend on the
    /// resummation direction lambda and carry the branched power
    /// z^{-log_q a_i}; column n-1 is single-valued up to its own power
    /// factor and ignores lambda.
    ///
    /// The closed form re-expands around the origin, so this route covers
    /// the bounded overlap region used by connection checks; values deep in
    /// the |z| -> infinity regime go through [`Self::value_direct`].
    pub fn value(
        &self,
        i: usize,
        lambda: Complex64,
        z: &BranchedPoint,
        ctx: &QContext,
    ) -> Result<Complex64> {
        self.value_impl(i, lambda, z, false, ctx)
    }

    /// Same solution evaluated from the defining Laplace sum; converges in
    /// a neighbourhood of infinity and serves as the independent oracle.
    pub fn value_direct(
        &self,
        i: usize,
        lambda: Complex64,
        z: &BranchedPoint,
        ctx: &QContext,
    ) -> Result<Complex64> {
        self.value_impl(i, lambda, z, true, ctx)
    }

    fn value_impl(
        &self,
        i: usize,
        lambda: Complex64,
        z: &BranchedPoint,
        direct: bool,
        ctx: &QContext,
    ) -> Result<Complex64> {
        let n = self.spec.n();
        if i >= n {
            return Err(Error::Domain(format!("basis index {i} out of range for order {n}")));
        }
        if i == n - 1 {
            return self.h.solution_value(z, ctx);
        }
        let ai = self.spec.a[i];
        let mut upper = vec![ai];
        for &bl in &self.spec.b {
            upper.push(ai * ctx.q / bl);
        }
        let mut lower = Vec::new();
        for (l, &al) in self.spec.a.iter().enumerate() {
            if l != i {
                lower.push(ai * ctx.q / al);
            }
        }
        let ci = self.spec.prod_b() / (ai * self.spec.prod_a());
        let zc = z.to_complex();
        let v = if direct {
            nf_direct(&upper, &lower, lambda * ci, ci / zc, ctx)?
        } else {
            nf(&upper, &lower, lambda * ci, ci / zc, ctx)?
        };
        let power = branched_power(z, -log_q(ai, ctx)?)?;
        ensure_finite(v * power, "resummed basis value")
    }
}

/// Least-squares fit of the q-Gevrey order-1 bound constants.
#[derive(Debug, Clone, Copy)]
pub struct GevreyFit {
    pub c: f64,
    pub k: f64,
}

fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Checks that `f` is asymptotic to `series` with q-Gevrey order 1: the
/// normalized truncation errors E_N = sup_z |f - S_N| |z|^N q^{N(N-1)/2}
/// must stay bounded by C K^N. Returns the fitted (C, K); an effective
/// growth rate in the far half of the N-range more than 4 times the near
/// half one means higher-order divergence and fails the check.
pub fn gevrey_check(
    series: &FormalPowerSeries,
    f: &dyn Fn(&BranchedPoint) -> Result<Complex64>,
    samples: &[BranchedPoint],
    n_max: usize,
    ctx: &QContext,
) -> Result<GevreyFit> {
    if series.variable != Variable::ZInverse {
        return Err(Error::Domain("gevrey check expects a series in 1/z".into()));
    }
    if n_max < 8 || n_max > series.order() {
        return Err(Error::FitFailure(format!(
            "need 8 <= n_max <= {} truncation orders, got {n_max}",
            series.order()
        )));
    }
    if samples.is_empty() {
        return Err(Error::FitFailure("no sample points".into()));
    }
    let mut values = Vec::with_capacity(samples.len());
    for z in samples {
        values.push(f(z)?);
    }
    let mut ns = Vec::new();
    let mut ln_e = Vec::new();
    for nt in 2..=n_max {
        let mut worst = f64::NEG_INFINITY;
        for (z, fv) in samples.iter().zip(&values) {
            let s = series.partial_sum(z, nt)?;
            let d = (fv - s).norm().max(1e-300).ln();
            let ln_val = d
                + nt as f64 * z.to_complex().norm().ln()
                + (nt * (nt - 1)) as f64 / 2.0 * ctx.ln_q();
            worst = worst.max(ln_val);
        }
        if !worst.is_finite() {
            return Err(Error::FitFailure(format!(
                "degenerate truncation error at order {nt}"
            )));
        }
        ns.push(nt as f64);
        ln_e.push(worst);
    }
    let mid = ns.len() / 2;
    let (_, slope_near) = line_fit(&ns[..mid], &ln_e[..mid]);
    let (_, slope_far) = line_fit(&ns[mid..], &ln_e[mid..]);
    if slope_far > slope_near.max(0.0) + 4.0f64.ln() + 1.0 {
        return Err(Error::GevreyMismatch(format!(
            "far-half growth rate e^{slope_far:.3} exceeds 4 x near-half e^{slope_near:.3}; \
             error grows faster than C K^N"
        )));
    }
    let (intercept, slope) = line_fit(&ns, &ln_e);
    Ok(GevreyFit {
        c: intercept.exp(),
        k: slope.exp(),
    })
}
