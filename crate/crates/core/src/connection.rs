//! Connection formulas between the solution bases at the origin and at
//! infinity.
//!
//! Two equations are covered. For the regular-singular equation with n
//! upper and n-1 lower parameters the classical coefficient grid of
//! [`thomae_coeffs`] applies. For the confluent equation (last upper
//! parameter zero) the analytic solution at the origin decomposes in the
//! resummed basis at infinity with theta-quotient coefficients
//! ([`main_connection_coeffs`]), and conversely the convergent solution at
//! infinity decomposes in the origin basis ([`corollary_coeffs`]).
//!
//! All coefficients are pseudo-constant: invariant under z -> qz on a
//! fixed branch. Each identity relates series convergent near the origin
//! to objects convergent near infinity, so numeric verification must stay
//! on the annulus where every piece is summable at once; see
//! [`overlap_annulus`]. The two confluence probes at the bottom check the
//! limit processes that the closed forms arise from.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qcore::{
    branched_power_scaled, ensure_finite, log_q, on_spiral, pochhammer_ratio_scaled,
    spiral_distance, theta_ratio, theta_scaled, BranchedPoint, QContext, ScaledComplex, ONE, ZERO,
};
use crate::qseries::{
    basic_phi, confluent_exponent, confluent_formal_basis, f0_basis, fuchsian_infinity_basis,
    ConfluentEquationSpec, HSeries, HypergeometricParams,
};
use crate::resummation::{InfinityBasis, SpiralDirection};

/// Series order used for the convergent tail at infinity: enough for the
/// tail to drop below tolerance anywhere inside 0.8 of its radius.
const H_ORDER: usize = 240;

/// A connection coefficient as a function of z, invariant under z -> qz.
pub struct PseudoConstant {
    label: String,
    f: Box<dyn Fn(&BranchedPoint, &QContext) -> Result<Complex64>>,
}

impl std::fmt::Debug for PseudoConstant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PseudoConstant").field("label", &self.label).finish()
    }
}

impl PseudoConstant {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(&BranchedPoint, &QContext) -> Result<Complex64> + 'static,
    ) -> Self {
        PseudoConstant {
            label: label.into(),
            f: Box::new(f),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, z: &BranchedPoint, ctx: &QContext) -> Result<Complex64> {
        (self.f)(z, ctx)
    }

    /// Relative change under z -> qz with the branch carried along; zero up
    /// to rounding for a genuine connection coefficient.
    pub fn drift(&self, z: &BranchedPoint, ctx: &QContext) -> Result<f64> {
        let v0 = self.eval(z, ctx)?;
        let v1 = self.eval(&z.q_shift(ctx, 1)?, ctx)?;
        Ok((v1 - v0).norm() / v0.norm().max(1e-300))
    }
}

fn ensure_ratios_off_spiral(vals: &[Complex64], what: &str, ctx: &QContext) -> Result<()> {
    for (i, &vi) in vals.iter().enumerate() {
        if vi == ZERO {
            return Err(Error::Domain(format!("{what} must be nonzero")));
        }
        for &vj in vals.iter().skip(i + 1) {
            if on_spiral(ONE, vi / vj, ctx)? {
                return Err(Error::Genericity(format!(
                    "{what} ratio {} lies on q^Z within margin",
                    vi / vj
                )));
            }
        }
    }
    Ok(())
}

/// The coefficient attached to upper parameter a_i in both connection
/// grids: a quotient of infinite products over the remaining parameters.
fn upper_poch_ratio(
    a: &[Complex64],
    b: &[Complex64],
    i: usize,
    ctx: &QContext,
) -> Result<ScaledComplex> {
    let ai = a[i];
    let mut num = Vec::with_capacity(a.len() + b.len() - 1);
    let mut den = Vec::with_capacity(a.len() + b.len() - 1);
    for (l, &al) in a.iter().enumerate() {
        if l != i {
            num.push(al);
            den.push(al / ai);
        }
    }
    for &bl in b {
        num.push(bl / ai);
        den.push(bl);
    }
    pochhammer_ratio_scaled(&num, &den, ctx)
}

/// Pseudo-constant coefficient of the i-th solution at infinity common to
/// the regular and confluent grids: Pochhammer quotient times
/// theta(-a_i z)/theta(-z) times z^{log_q a_i}.
fn upper_coeff(a: &[Complex64], b: &[Complex64], i: usize, ctx: &QContext) -> Result<PseudoConstant> {
    let ai = a[i];
    let ratio = upper_poch_ratio(a, b, i, ctx)?;
    let alpha = log_q(ai, ctx)?;
    Ok(PseudoConstant::new(format!("coeff[{i}]"), move |z, ctx| {
        let zc = z.to_complex();
        if on_spiral(ONE, zc, ctx)? {
            return Err(Error::PoleProximity(
                "z within margin of the q^Z zero spiral of the denominator theta".into(),
            ));
        }
        let th = theta_ratio(-ai * zc, -zc, ctx)?;
        let pw = branched_power_scaled(z, alpha)?;
        ratio.mul(th).mul(pw).to_complex()
    }))
}

/// Connection coefficients of the regular-singular equation: the series
/// solution at the origin equals sum_i coeff_i(z) times the i-th solution
/// at infinity (the one normalized by z^{-log_q a_i}).
pub fn thomae_coeffs(
    a: &[Complex64],
    b: &[Complex64],
    ctx: &QContext,
) -> Result<Vec<PseudoConstant>> {
    let n = a.len();
    if n < 2 || b.len() + 1 != n {
        return Err(Error::Domain(format!(
            "need n >= 2 upper and n-1 lower parameters, got {n} and {}",
            b.len()
        )));
    }
    // same admissibility as the series themselves, plus pairwise
    // non-resonance of the upper parameters
    HypergeometricParams::basic(a.to_vec(), b.to_vec(), ctx)?;
    ensure_ratios_off_spiral(a, "upper parameter", ctx)?;
    (0..n).map(|i| upper_coeff(a, b, i, ctx)).collect()
}

/// Residual of the regular-singular connection identity at z. Both sides
/// are convergent series; the caller must keep
/// q |prod b| / (0.95 |prod a|) <= |z| <= 0.95 so that both converge.
pub fn verify_thomae(
    a: &[Complex64],
    b: &[Complex64],
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<f64> {
    let coeffs = thomae_coeffs(a, b, ctx)?;
    let params = HypergeometricParams::basic(a.to_vec(), b.to_vec(), ctx)?;
    let lhs = basic_phi(&params, z.to_complex(), ctx)?;
    let mut sum = ZERO;
    let mut scale = lhs.norm();
    for (i, coeff) in coeffs.iter().enumerate() {
        let term = coeff.eval(z, ctx)? * fuchsian_infinity_basis(a, b, i, z, ctx)?;
        sum += term;
        scale = scale.max(term.norm());
    }
    Ok((lhs - sum).norm() / scale.max(1e-300))
}

/// The connection data of the confluent equation: n pseudo-constant
/// coefficients and the direction at which the resummed basis columns are
/// to be evaluated.
#[derive(Debug)]
pub struct MainConnection {
    /// Coefficients of the basis at infinity: entries 0..n-2 multiply the
    /// resummed columns, entry n-1 the convergent one.
    pub coeffs: Vec<PseudoConstant>,
    /// The identity's direction rescaled by prod(a)/prod(b); feeding this
    /// to the basis gives each column i the direction lambda/a_i.
    pub basis_direction: SpiralDirection,
}

/// Coefficients expressing the analytic solution at the origin in the
/// basis at infinity, for the direction `dir`. The direction must stay off
/// every spiral -a_i q^Z.
pub fn main_connection_coeffs(
    spec: &ConfluentEquationSpec,
    dir: &SpiralDirection,
    ctx: &QContext,
) -> Result<MainConnection> {
    let n = spec.n();
    let lambda = dir.lambda();
    for &ai in &spec.a {
        let (d, _) = spiral_distance(-ai, lambda, ctx)?;
        if d < ctx.spiral_margin {
            return Err(Error::PoleProximity(format!(
                "direction {lambda} within margin of the spiral through {}",
                -ai
            )));
        }
    }
    let mut coeffs = Vec::with_capacity(n);
    for i in 0..n - 1 {
        coeffs.push(upper_coeff(&spec.a, &spec.b, i, ctx)?);
    }
    // coefficient of the convergent column: Pochhammer quotient of the
    // parameter lists, theta quotients in lambda and in z, and the inverse
    // of the z^gamma carried by the column itself
    let mut ratio = pochhammer_ratio_scaled(&spec.a, &spec.b, ctx)?;
    for l in 0..n - 1 {
        ratio = ratio.mul(theta_ratio(spec.b[l] / lambda, spec.a[l] / lambda, ctx)?);
    }
    let grid = spec.prod_a() / spec.prod_b();
    let gamma = confluent_exponent(spec, ctx)?;
    let pole_anchor = -spec.prod_b() / (lambda * spec.prod_a());
    coeffs.push(PseudoConstant::new("coeff[last]", move |z, ctx| {
        let zc = z.to_complex();
        let (d, _) = spiral_distance(pole_anchor, zc, ctx)?;
        if d < ctx.spiral_margin {
            return Err(Error::PoleProximity(format!(
                "z within margin of the pole spiral through {pole_anchor}"
            )));
        }
        let th = theta_ratio(lambda * zc, lambda * zc * grid, ctx)?;
        let pw = branched_power_scaled(z, -gamma)?;
        ratio.mul(th).mul(pw).to_complex()
    }));
    Ok(MainConnection {
        coeffs,
        basis_direction: dir.scaled(grid)?,
    })
}

/// Modulus window on which every piece of the confluent connection
/// identity is summable: the origin series and the re-expanded resummed
/// columns need |z| <= 0.95 together with their reciprocal-argument gates,
/// and the convergent column needs |1/z| within 0.8 of its radius.
pub fn overlap_annulus(
    spec: &ConfluentEquationSpec,
    h: &HSeries,
    _ctx: &QContext,
) -> Result<(f64, f64)> {
    let hi = 0.95f64;
    let mut lo = 1.25 / h.radius_inv_z;
    let pa = spec.prod_a();
    let pb = spec.prod_b();
    for &ai in &spec.a {
        let ci = (pb / (ai * pa)).norm();
        lo = lo.max(ci / 0.95);
    }
    if !(lo < hi) {
        return Err(Error::OverlapDomainEmpty(format!(
            "no overlap: need |z| >= {lo:.4} for the basis at infinity but <= {hi} at the origin"
        )));
    }
    Ok((lo, hi))
}

/// Residual of the confluent connection identity at z: the origin series
/// against the coefficient-weighted basis at infinity. z must lie in the
/// overlap annulus, off q^Z and off the identity's pole spiral.
pub fn verify_main_connection(
    spec: &ConfluentEquationSpec,
    dir: &SpiralDirection,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<f64> {
    let n = spec.n();
    let basis = InfinityBasis::new(spec, H_ORDER, ctx)?;
    let (lo, hi) = overlap_annulus(spec, basis.h_series(), ctx)?;
    if z.modulus() < lo || z.modulus() > hi {
        return Err(Error::OutsideRadius(format!(
            "|z| = {:.4} outside the overlap annulus [{lo:.4}, {hi:.4}]",
            z.modulus()
        )));
    }
    let mc = main_connection_coeffs(spec, dir, ctx)?;
    let lhs = f0_basis(spec, n - 1, z, ctx)?;
    let lambda_basis = mc.basis_direction.lambda();
    let mut sum = ZERO;
    let mut scale = lhs.norm();
    for (i, coeff) in mc.coeffs.iter().enumerate() {
        let term = coeff.eval(z, ctx)? * basis.value(i, lambda_basis, z, ctx)?;
        sum += term;
        scale = scale.max(term.norm());
    }
    Ok((lhs - sum).norm() / scale.max(1e-300))
}

/// Coefficients expressing the convergent solution at infinity in the
/// origin basis: entry j multiplies the j-th origin solution (j = n-1 the
/// analytic one). The lower parameter list is extended by q, matching the
/// origin basis exponents.
pub fn corollary_coeffs(
    spec: &ConfluentEquationSpec,
    ctx: &QContext,
) -> Result<Vec<PseudoConstant>> {
    let n = spec.n();
    let mut ext_b = spec.b.clone();
    ext_b.push(Complex64::new(ctx.q, 0.0));
    ensure_ratios_off_spiral(&ext_b, "lower parameter", ctx)?;
    let gamma = confluent_exponent(spec, ctx)?;
    let pa = spec.prod_a();
    let prod_ext: Complex64 = ext_b.iter().product();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let bj = ext_b[j];
        let num: Vec<Complex64> = spec.a.iter().map(|&al| bj / al).collect();
        let den: Vec<Complex64> = ext_b
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != j)
            .map(|(_, &bl)| bj / bl)
            .collect();
        let ratio = pochhammer_ratio_scaled(&num, &den, ctx)?;
        // exponent relative to the origin solution, which already carries
        // z^{1 - log_q b_j} (zero for the analytic one)
        let alpha = gamma - (ONE - log_q(bj, ctx)?);
        let theta_arg = -pa * bj / prod_ext;
        out.push(PseudoConstant::new(format!("corollary[{j}]"), move |z, ctx| {
            let zc = z.to_complex();
            if on_spiral(ONE, zc, ctx)? {
                return Err(Error::PoleProximity(
                    "z within margin of the q^Z zero spiral of the denominator theta".into(),
                ));
            }
            let th = theta_ratio(theta_arg * zc, -zc, ctx)?;
            let pw = branched_power_scaled(z, alpha)?;
            ratio.mul(th).mul(pw).to_complex()
        }));
    }
    Ok(out)
}

/// Residual of the expansion of the convergent solution at infinity in the
/// origin basis. Needs 1.25 / radius <= |z| <= 0.95 so that both sides are
/// summable.
pub fn corollary_fn_check(
    spec: &ConfluentEquationSpec,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<f64> {
    let h = confluent_formal_basis(spec, H_ORDER, ctx)?.last;
    let lhs = h.solution_value(z, ctx)?;
    let coeffs = corollary_coeffs(spec, ctx)?;
    let mut sum = ZERO;
    let mut scale = lhs.norm();
    for (j, coeff) in coeffs.iter().enumerate() {
        let term = coeff.eval(z, ctx)? * f0_basis(spec, j, z, ctx)?;
        sum += term;
        scale = scale.max(term.norm());
    }
    Ok((lhs - sum).norm() / scale.max(1e-300))
}

/// Finite-step probe of the confluence limit: a convergent series with one
/// extra large lower parameter -1/(lambda q^m) and argument -z/(lambda q^m)
/// tends to the resummed function as m grows. Returns the relative
/// deviation at each scheduled m; |z| must stay below 0.95 |lambda| q^max(m)
/// so every probed series converges.
pub fn confluence_probe(
    upper: &[Complex64],
    lower: &[Complex64],
    lambda: Complex64,
    z: Complex64,
    schedule: &[u32],
    target: Complex64,
    ctx: &QContext,
) -> Result<Vec<f64>> {
    if target == ZERO {
        return Err(Error::Domain("confluence probe needs a nonzero target".into()));
    }
    let mut out = Vec::with_capacity(schedule.len());
    for &m in schedule {
        let anchor = lambda * ctx.q_int(m as i64);
        let mut ext = lower.to_vec();
        ext.push(-anchor.inv());
        let params = HypergeometricParams::basic(upper.to_vec(), ext, ctx)?;
        let v = basic_phi(&params, -z / anchor, ctx)?;
        out.push((v - target).norm() / target.norm());
    }
    Ok(out)
}

/// Finite-step probe of the Pochhammer-quotient limit: for prod(a) =
/// prod(b) the quotient of (-a_i q^{-m}; q)_inf over (-b_i q^{-m}; q)_inf
/// tends to the quotient of thetas. Returns the relative deviation at each
/// scheduled m.
pub fn theta_limit_probe(
    a: &[Complex64],
    b: &[Complex64],
    schedule: &[u32],
    ctx: &QContext,
) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Domain("need matching nonempty parameter lists".into()));
    }
    let pa: Complex64 = a.iter().product();
    let pb: Complex64 = b.iter().product();
    if (pa - pb).norm() > 1e-10 * pa.norm().max(1e-300) {
        return Err(Error::Domain(format!(
            "limit requires equal products, got {pa} and {pb}"
        )));
    }
    for &bi in b {
        let (d, _) = spiral_distance(-ONE, bi, ctx)?;
        if d < ctx.spiral_margin {
            return Err(Error::PoleProximity(format!(
                "parameter {bi} within margin of the -q^Z spiral"
            )));
        }
    }
    let mut tgt = ScaledComplex::one();
    for &ai in a {
        tgt = tgt.mul(theta_scaled(ai, ctx)?);
    }
    for &bi in b {
        tgt = tgt.div(theta_scaled(bi, ctx)?)?;
    }
    let t = tgt.to_complex()?;
    ensure_finite(t, "theta quotient")?;
    let mut out = Vec::with_capacity(schedule.len());
    for &m in schedule {
        let qm = ctx.q_int(-(m as i64));
        let num: Vec<Complex64> = a.iter().map(|&ai| -ai * qm).collect();
        let den: Vec<Complex64> = b.iter().map(|&bi| -bi * qm).collect();
        let r = pochhammer_ratio_scaled(&num, &den, ctx)?.to_complex()?;
        out.push((r - t).norm() / t.norm().max(1e-300));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{c64, pochhammer_infinite, theta};
    use crate::resummation::{nf, nf_direct};
    use proptest::prelude::*;

    fn ctx(q: f64) -> QContext {
        QContext::new(q).unwrap()
    }

    fn bp(re: f64, im: f64) -> BranchedPoint {
        BranchedPoint::from_complex(c64(re, im)).unwrap()
    }

    #[test]
    fn thomae_identity_n2() {
        let c = ctx(0.5);
        let a = [c64(2.2, 0.0), c64(-1.4, 0.6)];
        let b = [c64(0.9, 0.2)];
        let z = bp(0.35, 0.1);
        let res = verify_thomae(&a, &b, &z, &c).unwrap();
        assert!(res < 1e-9, "residual {res:.3e}");
        for coeff in thomae_coeffs(&a, &b, &c).unwrap() {
            let d = coeff.drift(&z, &c).unwrap();
            assert!(d < 1e-10, "{} drift {d:.3e}", coeff.label());
        }
    }

    #[test]
    fn thomae_identity_n3() {
        let c = ctx(0.5);
        let a = [c64(1.6, 0.0), c64(-1.1, 0.8), c64(0.4, -0.9)];
        let b = [c64(0.7, 0.3), c64(-0.55, 0.0)];
        for z in [bp(0.4, -0.25), bp(-0.3, 0.55), bp(0.15, 0.6)] {
            let res = verify_thomae(&a, &b, &z, &c).unwrap();
            assert!(res < 1e-9, "residual {res:.3e} at z = {}", z.to_complex());
        }
    }

    #[test]
    fn thomae_rejects_resonant_upper_pair() {
        let c = ctx(0.5);
        let a = [c64(1.3, 0.0), c64(1.3 * 0.125, 0.0)];
        let b = [c64(0.8, 0.0)];
        match thomae_coeffs(&a, &b, &c) {
            Err(Error::Genericity(_)) => {}
            other => panic!("expected genericity rejection, got {other:?}"),
        }
    }

    #[test]
    fn main_connection_identity_n2_and_hand_transcription() {
        let c = ctx(0.5);
        let q = c.q;
        let spec =
            ConfluentEquationSpec::new(vec![c64(1.9, -0.35)], vec![c64(0.75, 0.2)], &c).unwrap();
        let dir = SpiralDirection::new(c64(1.1, 0.6)).unwrap();
        let z = bp(0.78, 0.1);
        let res = verify_main_connection(&spec, &dir, &z, &c).unwrap();
        assert!(res < 1e-9, "residual {res:.3e}");

        // the same identity written out from scratch for one upper and one
        // lower parameter, with no shared coefficient code
        let a = spec.a[0];
        let b = spec.b[0];
        let lambda = dir.lambda();
        let zc = z.to_complex();
        let lhs = {
            let params = HypergeometricParams::basic(vec![a, ZERO], vec![b], &c).unwrap();
            basic_phi(&params, zc, &c).unwrap()
        };
        let term1 = pochhammer_infinite(b / a, &c).unwrap() / pochhammer_infinite(b, &c).unwrap()
            * (theta(-a * zc, &c).unwrap() / theta(-zc, &c).unwrap())
            * nf(&[a, a * q / b], &[], lambda / a, b / (a * a * zc), &c).unwrap();
        let h = confluent_formal_basis(&spec, H_ORDER, &c).unwrap().last;
        let term2 = pochhammer_infinite(a, &c).unwrap() / pochhammer_infinite(b, &c).unwrap()
            * (theta(b / lambda, &c).unwrap() / theta(a / lambda, &c).unwrap())
            * (theta(lambda * zc, &c).unwrap() / theta(lambda * zc * a / b, &c).unwrap())
            * h.eval(&z, &c).unwrap()
            / pochhammer_infinite(zc, &c).unwrap();
        let hand = (lhs - term1 - term2).norm() / lhs.norm();
        assert!(hand < 1e-9, "hand transcription residual {hand:.3e}");
    }

    #[test]
    fn main_connection_identity_n3() {
        let c = ctx(0.5);
        let spec = ConfluentEquationSpec::new(
            vec![c64(1.8, 0.4), c64(-1.1, 0.9)],
            vec![c64(0.65, 0.15), c64(1.35, -0.5)],
            &c,
        )
        .unwrap();
        let dir = SpiralDirection::new(c64(0.9, -1.2)).unwrap();
        for z in [bp(-0.2, 0.75), bp(0.7, -0.35)] {
            let res = verify_main_connection(&spec, &dir, &z, &c).unwrap();
            assert!(res < 1e-8, "residual {res:.3e} at z = {}", z.to_complex());
        }
    }

    #[test]
    fn main_connection_coefficients_are_pseudo_constant() {
        let c = ctx(0.5);
        let spec = ConfluentEquationSpec::new(
            vec![c64(1.8, 0.4), c64(-1.1, 0.9)],
            vec![c64(0.65, 0.15), c64(1.35, -0.5)],
            &c,
        )
        .unwrap();
        let dir = SpiralDirection::new(c64(0.9, -1.2)).unwrap();
        let mc = main_connection_coeffs(&spec, &dir, &c).unwrap();
        let z = bp(-0.2, 0.75);
        for coeff in &mc.coeffs {
            let d = coeff.drift(&z, &c).unwrap();
            assert!(d < 1e-10, "{} drift {d:.3e}", coeff.label());
        }
    }

    #[test]
    fn main_connection_rejects_direction_on_parameter_spiral() {
        let c = ctx(0.5);
        let spec =
            ConfluentEquationSpec::new(vec![c64(1.9, -0.35)], vec![c64(0.75, 0.2)], &c).unwrap();
        let dir = SpiralDirection::new(-spec.a[0] * c.q * c.q).unwrap();
        match main_connection_coeffs(&spec, &dir, &c) {
            Err(Error::PoleProximity(_)) => {}
            other => panic!("expected pole rejection, got {other:?}"),
        }
    }

    #[test]
    fn main_connection_reports_empty_overlap() {
        let c = ctx(0.5);
        // tiny upper parameter pushes the reciprocal-argument gate far
        // outside the unit disc
        let spec =
            ConfluentEquationSpec::new(vec![c64(0.09, 0.03)], vec![c64(0.8, 0.0)], &c).unwrap();
        let dir = SpiralDirection::new(c64(1.0, 0.4)).unwrap();
        match verify_main_connection(&spec, &dir, &bp(0.8, 0.1), &c) {
            Err(Error::OverlapDomainEmpty(_)) => {}
            other => panic!("expected empty overlap, got {other:?}"),
        }
    }

    #[test]
    fn corollary_identity_n2_and_n3() {
        let c = ctx(0.5);
        let spec2 =
            ConfluentEquationSpec::new(vec![c64(1.9, -0.35)], vec![c64(0.75, 0.2)], &c).unwrap();
        let res2 = corollary_fn_check(&spec2, &bp(0.78, 0.1), &c).unwrap();
        assert!(res2 < 1e-9, "n=2 residual {res2:.3e}");
        let spec3 = ConfluentEquationSpec::new(
            vec![c64(1.8, 0.4), c64(-1.1, 0.9)],
            vec![c64(0.65, 0.15), c64(1.35, -0.5)],
            &c,
        )
        .unwrap();
        let res3 = corollary_fn_check(&spec3, &bp(-0.2, 0.75), &c).unwrap();
        assert!(res3 < 1e-8, "n=3 residual {res3:.3e}");
        let z = bp(-0.2, 0.75);
        for coeff in corollary_coeffs(&spec3, &c).unwrap() {
            let d = coeff.drift(&z, &c).unwrap();
            assert!(d < 1e-10, "{} drift {d:.3e}", coeff.label());
        }
    }

    #[test]
    fn confluence_probe_approaches_resummed_value() {
        let c = ctx(0.5);
        let upper = [c64(2.0, 0.0), c64(0.9, 0.0)];
        let lambda = c64(1.2, 0.35);
        let z = c64(0.012, -0.004);
        // target from the defining Laplace sum, which converges near 0
        let target = nf_direct(&upper, &[], lambda, z, &c).unwrap();
        let devs = confluence_probe(&upper, &[], lambda, z, &[2, 3, 4, 5, 6], target, &c).unwrap();
        for w in devs.windows(2) {
            assert!(w[1] < w[0] * 1.2, "deviations not decreasing: {devs:?}");
        }
        assert!(
            devs.last().unwrap() < &1e-3 && devs.last().unwrap() < &(devs[0] / 10.0),
            "confluence too slow: {devs:?}"
        );
    }

    #[test]
    fn theta_limit_probe_converges() {
        let c = ctx(0.5);
        let a = [c64(1.1, 0.5), c64(0.7, -0.2)];
        let prod = a[0] * a[1];
        let b = [c64(1.2, 0.0), prod / 1.2];
        let devs = theta_limit_probe(&a, &b, &[4, 8, 12, 16, 20], &c).unwrap();
        for w in devs.windows(2) {
            assert!(w[1] < w[0], "deviations not decreasing: {devs:?}");
        }
        assert!(devs.last().unwrap() < &1e-6, "final deviation {devs:?}");
    }

    #[test]
    fn theta_limit_probe_requires_equal_products() {
        let c = ctx(0.5);
        let a = [c64(1.1, 0.5)];
        let b = [c64(1.2, 0.0)];
        assert!(matches!(
            theta_limit_probe(&a, &b, &[4], &c),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn drift_detects_non_invariant_function() {
        let c = ctx(0.5);
        let pc = PseudoConstant::new("z itself", |z, _| Ok(z.to_complex()));
        let d = pc.drift(&bp(0.4, 0.2), &c).unwrap();
        assert!(d > 0.4, "drift {d:.3e} should be about 1 - q");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        // coefficient grids stay pseudo-constant across the annulus and
        // across branch rotations
        #[test]
        fn coefficients_pseudo_constant_everywhere(
            modulus in 0.3f64..0.9,
            angle in -9.0f64..9.0,
        ) {
            let c = ctx(0.5);
            let z = BranchedPoint::new(modulus, angle).unwrap();
            prop_assume!(!on_spiral(ONE, z.to_complex(), &c).unwrap());
            let a = [c64(2.2, 0.0), c64(-1.4, 0.6)];
            let b = [c64(0.9, 0.2)];
            for coeff in thomae_coeffs(&a, &b, &c).unwrap() {
                let d = coeff.drift(&z, &c).unwrap();
                prop_assert!(d < 1e-9, "{} drift {d:.3e}", coeff.label());
            }
            let spec = ConfluentEquationSpec::new(
                vec![c64(1.9, -0.35)], vec![c64(0.75, 0.2)], &c).unwrap();
            let dir = SpiralDirection::new(c64(1.1, 0.6)).unwrap();
            let mc = main_connection_coeffs(&spec, &dir, &c).unwrap();
            let pole = -spec.prod_b() / (dir.lambda() * spec.prod_a());
            prop_assume!(spiral_distance(pole, z.to_complex(), &c).unwrap().0
                >= c.spiral_margin);
            for coeff in &mc.coeffs {
                let d = coeff.drift(&z, &c).unwrap();
                prop_assert!(d < 1e-9, "{} drift {d:.3e}", coeff.label());
            }
        }
    }
}
