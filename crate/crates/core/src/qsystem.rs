//! The rank-n linear q-difference system with one irregular slot,
//! D_q F(z) = (E_nn + A/z) F(z), for n between 2 and 4.
//!
//! The pipeline mirrors the scalar theory: conjugate A so its upper-left
//! block is diagonal (an arrowhead matrix), build the convergent fundamental
//! solution at the origin and the resummed one at infinity, then connect
//! them. The connection matrix and the q-Stokes matrix both admit closed
//! forms in Pochhammer and theta ratios; numeric linear solves of the
//! defining relations serve as independent oracles.
//!
//! Index conventions are zero-based throughout. For a system of size n the
//! distinguished row/column is `last = n - 1`; exponent vectors follow the
//! eigenvalues of the nested upper-left blocks: `mu` (length n) from the
//! full matrix, `nu` (length n-1) from the (n-1)-block, and the derived
//! `nu_last = sum(mu) - sum(nu)`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{poly_roots, sort_lexicographic, CMat};
use crate::qcore::{
    branched_power_scaled, log_q, on_spiral, pochhammer_infinite_scaled,
    pochhammer_ratio_scaled, spiral_distance, theta_ratio, BranchedPoint, QContext,
    ScaledAccumulator, ScaledComplex, ONE, ZERO,
};
use crate::qseries::{basic_phi, confluent_formal_basis, ConfluentEquationSpec, HSeries,
    HypergeometricParams};
use crate::resummation::{nf, nf_direct, SpiralDirection};

/// Largest supported system size; the formulas are dimension-generic but
/// rootfinding and the minor bookkeeping are only validated up to here.
pub const MAX_SYSTEM_SIZE: usize = 4;

/// Series order used for the convergent last column at infinity.
pub const DEFAULT_SERIES_ORDER: usize = 220;

/// Eigenvalues of the upper-left k-by-k block, lexicographically sorted.
pub fn submatrix_eigen(a: &CMat, k: usize) -> Result<Vec<Complex64>> {
    if k > a.rows() {
        return Err(Error::Domain(format!(
            "block size {k} exceeds matrix size {}",
            a.rows()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let idx: Vec<usize> = (0..k).collect();
    let block = a.submatrix(&idx, &idx);
    let mut roots = poly_roots(&block.charpoly()?)?;
    sort_lexicographic(&mut roots);
    Ok(roots)
}

/// The system data: the matrix A, the eigenvalues of its three largest
/// nested upper-left blocks, and the q-exponents they induce.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub n: usize,
    pub a: CMat,
    /// Eigenvalues of A itself.
    pub lam_full: Vec<Complex64>,
    /// Eigenvalues of the (n-1)-block.
    pub lam_sub: Vec<Complex64>,
    /// Eigenvalues of the (n-2)-block.
    pub lam_subsub: Vec<Complex64>,
    /// mu_i = log_q(1 - (1-q) lam_full_i).
    pub mu: Vec<Complex64>,
    /// nu_i = log_q(1 - (1-q) lam_sub_i).
    pub nu: Vec<Complex64>,
    /// Exponent of the irregular slot: sum(mu) - sum(nu).
    pub nu_last: Complex64,
}

impl SystemSpec {
    /// Computes the nested eigen data and checks the genericity margins:
    /// no mu (or nu) difference within `margin` of an integer, and the
    /// sub and sub-sub eigenvalues separated in absolute value.
    pub fn new(a: CMat, ctx: &QContext) -> Result<Self> {
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
        let scale = 1.0 - ctx.q;
        let to_exponent = |lam: &Complex64| -> Result<Complex64> {
            let w = ONE - scale * lam;
            if w.norm() < 1e-8 {
                return Err(Error::Genericity(format!(
                    "1 - (1-q) lambda vanishes at eigenvalue {lam}"
                )));
            }
            log_q(w, ctx)
        };
        let mu = lam_full.iter().map(to_exponent).collect::<Result<Vec<_>>>()?;
        let nu = lam_sub.iter().map(to_exponent).collect::<Result<Vec<_>>>()?;
        let nu_last = mu.iter().sum::<Complex64>() - nu.iter().sum::<Complex64>();
        // the nonresonance margin is measured multiplicatively, as the
        // series validators downstream do: q^(difference) kept off q^Z
        for i in 0..n {
            for j in i + 1..n {
                if on_spiral(ONE, ctx.q_pow(mu[i] - mu[j]), ctx)? {
                    return Err(Error::Genericity(format!(
                        "mu[{i}] - mu[{j}] within margin of an integer"
                    )));
                }
            }
        }
        for i in 0..n - 1 {
            for j in i + 1..n - 1 {
                if on_spiral(ONE, ctx.q_pow(nu[i] - nu[j]), ctx)? {
                    return Err(Error::Genericity(format!(
                        "nu[{i}] - nu[{j}] within margin of an integer"
                    )));
                }
            }
        }
        Ok(SystemSpec { n, a, lam_full, lam_sub, lam_subsub, mu, nu, nu_last })
    }
}

/// The conjugated system: P diagonalizes the (n-1)-block, the conjugated
/// matrix is an arrowhead (diagonal plus last row and column), and a_col /
/// b_row are its off-arrow entries.
#[derive(Debug, Clone)]
pub struct DiagonalizedSystem {
    pub spec: SystemSpec,
    pub p: CMat,
    pub p_inv: CMat,
    /// diag(P^-1, 1) . A . diag(P, 1).
    pub arrow: CMat,
    /// Last column of the arrowhead above the corner.
    pub a_col: Vec<Complex64>,
    /// Last row of the arrowhead left of the corner.
    pub b_row: Vec<Complex64>,
}

/// Eigenvector matrix of the (n-1)-block from cofactor minors, with the
/// square-root column normalization that makes the stated inverse formula
/// exact. One principal square root per index is shared between P's column
/// and P_inv's row, so their product is the identity for any branch.
///
/// Shared by the q-system and its differential limit; `sep_margin` is the
/// minimum absolute separation between sub and sub-sub eigenvalues on the
/// minor route, `tol` the vanishing threshold for the normalization.
pub(crate) fn principal_transform(
    a: &CMat,
    lam_full: &[Complex64],
    lam_sub: &[Complex64],
    lam_subsub: &[Complex64],
    sep_margin: f64,
    tol: f64,
) -> Result<(CMat, CMat, CMat, Vec<Complex64>, Vec<Complex64>)> {
    let n = a.rows();
    let m = n - 1;
    let sub_off_diag = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| a.at(i, j).norm())
        .fold(0.0f64, f64::max);
    let (p, p_inv) = if sub_off_diag < 1e-12 * a.max_abs().max(1.0) {
        // the block is already diagonal; the eigenvector matrix reduces to
        // the permutation aligning its diagonal with the sorted eigenvalues,
        // and the minor route below would divide by zero (its normalization
        // needs the sub-sub eigenvalues separated, which a diagonal block
        // never satisfies)
        let mut used = vec![false; m];
        let mut p = CMat::zeros(m, m);
        for j in 0..m {
            let mut pos = None;
            for i in 0..m {
                if !used[i] && (a.at(i, i) - lam_sub[j]).norm() < 1e-8 {
                    pos = Some(i);
                    break;
                }
            }
            let i = pos.ok_or_else(|| {
                Error::Genericity("diagonal block entries do not match its eigenvalues".into())
            })?;
            used[i] = true;
            p.set(i, j, ONE);
        }
        let p_inv = p.transpose();
        (p, p_inv)
    } else {
        for (j, lj) in lam_sub.iter().enumerate() {
            for (l, ll) in lam_subsub.iter().enumerate() {
                if (lj - ll).norm() < sep_margin {
                    return Err(Error::Genericity(format!(
                        "sub eigenvalue {j} collides with sub-sub eigenvalue {l}"
                    )));
                }
            }
        }
        let mut sqrt_norm = Vec::with_capacity(m);
        for j in 0..m {
            let mut prod = ONE;
            for l in 0..m {
                if l != j {
                    prod *= lam_sub[l] - lam_sub[j];
                }
            }
            for l in 0..n - 2 {
                prod *= lam_subsub[l] - lam_sub[j];
            }
            if prod.norm() < tol {
                return Err(Error::Genericity(format!(
                    "normalization product vanishes at sub eigenvalue {j}"
                )));
            }
            sqrt_norm.push(prod.sqrt());
        }
        let shifted = |j: usize| -> CMat {
            let mut s = a.clone();
            for d in 0..n {
                s.set(d, d, s.at(d, d) - lam_sub[j]);
            }
            s
        };
        let head: Vec<usize> = (0..n - 2).collect();
        let mut p = CMat::zeros(m, m);
        let mut p_inv = CMat::zeros(m, m);
        for j in 0..m {
            let sh = shifted(j);
            for i in 0..m {
                let sign = if (i + j) % 2 == 0 { ONE } else { -ONE };
                // rows 0..n-3, columns 0..n-2 without i
                let cols: Vec<usize> = (0..m).filter(|&c| c != i).collect();
                p.set(i, j, sign * sh.minor(&head, &cols)? / sqrt_norm[j]);
                // transposed selection with the row shift: rows 0..n-2 without i
                let rows: Vec<usize> = (0..m).filter(|&r| r != i).collect();
                p_inv.set(j, i, sign * sh.minor(&rows, &head)? / sqrt_norm[j]);
            }
        }
        (p, p_inv)
    };
    let p_full = embed_block(&p, n);
    let p_inv_full = embed_block(&p_inv, n);
    let arrow = p_inv_full.mul(a).mul(&p_full);
    let a_col: Vec<Complex64> = (0..m).map(|i| arrow.at(i, n - 1)).collect();
    let b_row: Vec<Complex64> = (0..m).map(|i| arrow.at(n - 1, i)).collect();
    // the three construction invariants; failures mean the input sits too
    // close to the degeneracies the margins are meant to exclude
    let prod = p.mul(&p_inv);
    if prod.max_abs_diff(&CMat::identity(m)) > 1e-10 {
        return Err(Error::Genericity(
            "eigenvector normalization failed: P . P^-1 deviates from identity".into(),
        ));
    }
    let sub_idx: Vec<usize> = (0..m).collect();
    let diag = p_inv.mul(&a.submatrix(&sub_idx, &sub_idx)).mul(&p);
    let mut diag_expect = CMat::zeros(m, m);
    for i in 0..m {
        diag_expect.set(i, i, lam_sub[i]);
    }
    if diag.max_abs_diff(&diag_expect) > 1e-9 * a.max_abs().max(1.0) {
        return Err(Error::Genericity(
            "conjugated block deviates from the eigenvalue diagonal".into(),
        ));
    }
    for i in 0..m {
        let mut expect = -ONE;
        for l in 0..n {
            expect *= lam_full[l] - lam_sub[i];
        }
        for l in 0..m {
            if l != i {
                expect /= lam_sub[l] - lam_sub[i];
            }
        }
        let got = a_col[i] * b_row[i];
        if (got - expect).norm() > 1e-9 * expect.norm().max(1.0) {
            return Err(Error::Genericity(format!(
                "arrowhead product a[{i}] b[{i}] deviates from its eigenvalue form"
            )));
        }
    }
    Ok((p, p_inv, arrow, a_col, b_row))
}

pub fn build_diagonalized(spec: &SystemSpec, ctx: &QContext) -> Result<DiagonalizedSystem> {
    let (p, p_inv, arrow, a_col, b_row) = principal_transform(
        &spec.a,
        &spec.lam_full,
        &spec.lam_sub,
        &spec.lam_subsub,
        ctx.spiral_margin,
        ctx.tol,
    )?;
    Ok(DiagonalizedSystem { spec: spec.clone(), p, p_inv, arrow, a_col, b_row })
}

/// diag(P, 1, ..., 1) padded to size n.
pub fn embed_block(p: &CMat, n: usize) -> CMat {
    let mut out = CMat::identity(n);
    for i in 0..p.rows() {
        for j in 0..p.cols() {
            out.set(i, j, p.at(i, j));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseTag {
    Origin,
    Infinity,
}

/// A fundamental solution, evaluated lazily. The origin handle is single
/// valued on |scaled z| <= 0.95; the infinity handle needs a resummation
/// direction for its first n-1 columns and a convergent reciprocal series
/// for the last one.
#[derive(Debug, Clone)]
pub struct SolutionHandle {
    pub base: BaseTag,
    pub direction: Option<SpiralDirection>,
    dsys: DiagonalizedSystem,
    /// Reciprocal series of the last column, one per row.
    psi: Vec<HSeries>,
}

impl SolutionHandle {
    pub fn system(&self) -> &DiagonalizedSystem {
        &self.dsys
    }

    /// The rescaled argument Z = (1-q) z / q^{nu_last} shared by every
    /// series in both fundamental solutions.
    pub fn scaled_argument(&self, z: Complex64, ctx: &QContext) -> Complex64 {
        (1.0 - ctx.q) * z * ctx.q_pow(-self.dsys.spec.nu_last)
    }

    pub fn evaluate(&self, z: &BranchedPoint, ctx: &QContext) -> Result<CMat> {
        let n = self.dsys.spec.n;
        let mut out = CMat::zeros(n, n);
        for j in 0..n {
            let col = self.evaluate_column(j, z, ctx)?;
            for i in 0..n {
                out.set(i, j, col[i]);
            }
        }
        Ok(out)
    }

    /// Single column of the solution matrix; columns have independent
    /// domains, which residual checks exploit.
    pub fn evaluate_column(
        &self,
        j: usize,
        z: &BranchedPoint,
        ctx: &QContext,
    ) -> Result<Vec<Complex64>> {
        match self.base {
            BaseTag::Origin => self.origin_column(j, z, ctx),
            BaseTag::Infinity => self.infinity_column(j, z, ctx),
        }
    }

    fn origin_column(&self, j: usize, z: &BranchedPoint, ctx: &QContext) -> Result<Vec<Complex64>> {
        let spec = &self.dsys.spec;
        let n = spec.n;
        let last = n - 1;
        let zc = z.to_complex();
        let big_z = self.scaled_argument(zc, ctx);
        if big_z.norm() > 0.95 {
            return Err(Error::OutsideRadius(format!(
                "origin series argument modulus {:.4} exceeds 0.95",
                big_z.norm()
            )));
        }
        let power = branched_power_scaled(z, spec.mu[j])?;
        let mut col = vec![ZERO; n];
        for i in 0..n {
            let mut upper = Vec::with_capacity(n);
            for l in 0..n - 1 {
                let delta = if l == i { ONE } else { ZERO };
                upper.push(ctx.q_pow(ONE + spec.mu[j] - spec.nu[l] - delta));
            }
            upper.push(ZERO);
            let mut lower = Vec::with_capacity(n - 1);
            for l in 0..n {
                if l != j {
                    lower.push(ctx.q_pow(ONE + spec.mu[j] - spec.mu[l]));
                }
            }
            let params = HypergeometricParams::basic(upper, lower, ctx)?;
            let phi = basic_phi(&params, big_z, ctx)?;
            let pre = if i < last {
                let gap = spec.lam_full[j] - spec.lam_sub[i];
                if gap.norm() < 1e-10 {
                    return Err(Error::PoleProximity(format!(
                        "full eigenvalue {j} collides with sub eigenvalue {i}"
                    )));
                }
                self.dsys.a_col[i] / gap
            } else {
                ONE
            };
            col[i] = ScaledComplex::from_complex(pre * phi)
                .mul(power)
                .to_complex()?;
        }
        Ok(col)
    }

    fn infinity_column(
        &self,
        j: usize,
        z: &BranchedPoint,
        ctx: &QContext,
    ) -> Result<Vec<Complex64>> {
        let spec = &self.dsys.spec;
        let n = spec.n;
        let last = n - 1;
        let lambda = self
            .direction
            .expect("infinity handle always stores a direction")
            .lambda();
        let zc = z.to_complex();
        let big_z = self.scaled_argument(zc, ctx);
        if j == last {
            // convergent column: per-row reciprocal series with the shared
            // Pochhammer denominator
            let (d, k) = spiral_distance(ONE, big_z, ctx)?;
            if d < ctx.spiral_margin && k <= 0 {
                return Err(Error::PoleProximity(format!(
                    "argument on the q^-N pole spiral of the last column (index {k})"
                )));
            }
            let bz = BranchedPoint::from_complex(big_z)?;
            let poch = pochhammer_infinite_scaled(big_z, ctx)?;
            if poch.is_zero() {
                return Err(Error::PoleProximity("last column pole".into()));
            }
            let power_low = branched_power_scaled(z, spec.nu_last - ONE)?;
            let power_corner = branched_power_scaled(z, spec.nu_last)?;
            let mut col = vec![ZERO; n];
            for i in 0..n {
                let h = self.psi[i].eval(&bz, ctx)?;
                let v = if i < last {
                    ScaledComplex::from_complex(ctx.q * self.dsys.a_col[i] * h)
                        .mul(power_low)
                } else {
                    ScaledComplex::from_complex(h).mul(power_corner)
                };
                col[i] = v.div(poch)?.to_complex()?;
            }
            return Ok(col);
        }
        // resummed columns: entry (i, j) is a prefactor times the resummed
        // series in the reciprocal argument c_ij / z
        let closed = big_z.norm() <= 0.95;
        let power = branched_power_scaled(z, spec.nu[j])?;
        let mut col = vec![ZERO; n];
        for i in 0..n {
            let delta_ij = if i == j { ONE } else { ZERO };
            let delta_in = if i == last { ONE } else { ZERO };
            let mut upper = Vec::with_capacity(n);
            for l in 0..n {
                upper.push(ctx.q_pow(ONE + spec.mu[l] - spec.nu[j] - delta_ij));
            }
            let mut lower = Vec::with_capacity(n - 2);
            for l in 0..n - 1 {
                if l != j {
                    let delta_li = if l == i { ONE } else { ZERO };
                    lower.push(ctx.q_pow(delta_li + ONE + spec.nu[l] - spec.nu[j] - delta_ij));
                }
            }
            let c = ctx.q_pow(spec.nu[j] + delta_ij - delta_in) / (1.0 - ctx.q);
            let d = if i == j {
                ONE
            } else if i < last {
                let denom = ctx.q_pow(spec.nu[j]) - ctx.q * ctx.q_pow(spec.nu[i]);
                ctx.q * (1.0 - ctx.q) * self.dsys.a_col[i] * self.dsys.b_row[j] / (denom * zc)
            } else {
                -self.dsys.b_row[j] / zc
            };
            let v = if closed {
                nf(&upper, &lower, lambda * c, c / zc, ctx)?
            } else {
                nf_direct(&upper, &lower, lambda * c, c / zc, ctx)?
            };
            col[i] = ScaledComplex::from_complex(d * v).mul(power).to_complex()?;
        }
        Ok(col)
    }
}

fn e_corner(n: usize) -> CMat {
    let mut e = CMat::zeros(n, n);
    e.set(n - 1, n - 1, ONE);
    e
}

/// Relative D_q residual of one column of a claimed solution against the
/// system matrix a_mat: || D_q F - (E + a_mat/z) F || over the larger of
/// the two sides' scales.
pub fn column_residual(
    a_mat: &CMat,
    column: &dyn Fn(&BranchedPoint) -> Result<Vec<Complex64>>,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<f64> {
    let n = a_mat.rows();
    let zc = z.to_complex();
    let f1 = column(z)?;
    let f2 = column(&z.q_shift(ctx, 1)?)?;
    let e = e_corner(n);
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        let dq = (f1[i] - f2[i]) / ((1.0 - ctx.q) * zc);
        let mut rhs = ZERO;
        for k in 0..n {
            rhs += (e.at(i, k) + a_mat.at(i, k) / zc) * f1[k];
        }
        worst = worst.max((dq - rhs).norm());
        scale = scale.max(dq.norm()).max(rhs.norm());
    }
    Ok(worst / scale.max(1e-300))
}

/// Origin fundamental solution of the arrowhead system. Construction runs
/// a residual smoke test at a fixed admissible point.
pub fn f0_handle(dsys: &DiagonalizedSystem, ctx: &QContext) -> Result<SolutionHandle> {
    let handle = SolutionHandle {
        base: BaseTag::Origin,
        direction: None,
        dsys: dsys.clone(),
        psi: Vec::new(),
    };
    let modulus = 0.5 * ctx.q_pow(dsys.spec.nu_last).norm() / (1.0 - ctx.q);
    let z = BranchedPoint::new(modulus, 0.37)?;
    for j in 0..dsys.spec.n {
        let col = |p: &BranchedPoint| handle.evaluate_column(j, p, ctx);
        let r = column_residual(&dsys.arrow, &col, &z, ctx)?;
        if !(r < 1e-8) {
            return Err(Error::Domain(format!(
                "origin solution residual {r:.3e} in column {j} fails the smoke test"
            )));
        }
    }
    Ok(handle)
}

/// Resummed fundamental solution at infinity along `dir`. Builds the
/// reciprocal series of the last column to the given order, checks the
/// direction against the forbidden spirals, and smoke-tests the residual
/// of every column.
pub fn finf_handle(
    dsys: &DiagonalizedSystem,
    dir: SpiralDirection,
    order: usize,
    ctx: &QContext,
) -> Result<SolutionHandle> {
    let spec = &dsys.spec;
    let n = spec.n;
    let last = n - 1;
    for l in 0..n - 1 {
        let anchor = -(1.0 - ctx.q) * ctx.q_pow(-spec.nu[l]);
        if on_spiral(anchor, dir.lambda(), ctx)? {
            return Err(Error::PoleProximity(format!(
                "direction lies on the forbidden spiral of exponent nu[{l}]"
            )));
        }
    }
    let mut psi = Vec::with_capacity(n);
    for i in 0..n {
        let mut a = Vec::with_capacity(n - 1);
        for l in 0..n - 1 {
            let delta_li = if l == i { ONE } else { ZERO };
            a.push(ctx.q_pow(ONE + spec.mu[last] - spec.nu[l] - delta_li));
        }
        let mut b = Vec::with_capacity(n - 1);
        for l in 0..n - 1 {
            b.push(ctx.q_pow(ONE + spec.mu[last] - spec.mu[l]));
        }
        let cspec = ConfluentEquationSpec::new(a, b, ctx)?;
        psi.push(confluent_formal_basis(&cspec, order, ctx)?.last);
    }
    let handle = SolutionHandle {
        base: BaseTag::Infinity,
        direction: Some(dir),
        dsys: dsys.clone(),
        psi,
    };
    // smoke points: resummed columns on the bounded side, the convergent
    // column outside its reciprocal radius
    let z_unit = ctx.q_pow(spec.nu_last).norm() / (1.0 - ctx.q);
    let inner = BranchedPoint::new(0.6 * z_unit, 0.41)?;
    for j in 0..last {
        let col = |p: &BranchedPoint| handle.evaluate_column(j, p, ctx);
        let r = column_residual(&dsys.arrow, &col, &inner, ctx)?;
        if !(r < 1e-8) {
            return Err(Error::GevreyMismatch(format!(
                "resummed column {j} residual {r:.3e} fails the smoke test"
            )));
        }
    }
    let outer = BranchedPoint::new(3.0 * z_unit / ctx.q, 0.41)?;
    let col = |p: &BranchedPoint| handle.evaluate_column(last, p, ctx);
    let r = column_residual(&dsys.arrow, &col, &outer, ctx)?;
    if !(r < 1e-8) {
        return Err(Error::GevreyMismatch(format!(
            "convergent column residual {r:.3e} fails the smoke test"
        )));
    }
    // leading behavior: the corner entry normalizes to 1 at large argument
    let corner = handle.psi[last].eval(
        &BranchedPoint::from_complex(handle.scaled_argument(outer.to_complex(), ctx))?,
        ctx,
    )?;
    if (corner - ONE).norm() > 0.7 {
        return Err(Error::GevreyMismatch(format!(
            "corner series value {corner} too far from 1 at the asymptotic smoke point"
        )));
    }
    Ok(handle)
}

/// Coefficient matrices of the formal solution at infinity, H_0 = Id
/// through H_K, from the entrywise recursion the system imposes. Level
/// m+1 determines the last row and column directly; the interior entries
/// follow from the consistency constraint at the same level.
pub fn formal_hhat(dsys: &DiagonalizedSystem, k_max: usize, ctx: &QContext) -> Result<Vec<CMat>> {
    let spec = &dsys.spec;
    let n = spec.n;
    let last = n - 1;
    let mut qnu = Vec::with_capacity(n);
    for l in 0..n - 1 {
        qnu.push(ctx.q_pow(spec.nu[l]));
    }
    qnu.push(ctx.q_pow(spec.nu_last));
    let mut out = vec![CMat::identity(n)];
    for m in 0..k_max {
        let h = &out[m];
        let qm = ctx.q_int(-(m as i64));
        // R = (H - q^{-m} H diag(q^nu)) / (1-q) - arrow . H
        let mut r = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut v = (h.at(i, j) - qm * h.at(i, j) * qnu[j]) / (1.0 - ctx.q);
                for t in 0..n {
                    v -= dsys.arrow.at(i, t) * h.at(t, j);
                }
                r.set(i, j, v);
            }
        }
        // interior consistency of the level just built
        let scale = h.max_abs().max(1.0);
        for i in 0..last {
            for j in 0..last {
                if r.at(i, j).norm() > 1e-6 * scale {
                    return Err(Error::RecursionSingular(format!(
                        "constraint violated at level {m}, entry ({i},{j})"
                    )));
                }
            }
        }
        let mut next = CMat::zeros(n, n);
        let qm1 = ctx.q_int(m as i64 + 1);
        for j in 0..last {
            next.set(last, j, r.at(last, j));
        }
        for i in 0..last {
            next.set(i, last, -qm1 * r.at(i, last));
        }
        next.set(last, last, r.at(last, last) / (ONE - ctx.q_int(-(m as i64 + 1))));
        for j in 0..last {
            let shift = ctx.q_pow(spec.nu[j]) * ctx.q_int(-(m as i64 + 1));
            for i in 0..last {
                let denom = (ONE - shift) / (1.0 - ctx.q) - spec.lam_sub[i];
                if denom.norm() < 1e-10 {
                    return Err(Error::RecursionSingular(format!(
                        "resonant division at level {}, entry ({i},{j})",
                        m + 1
                    )));
                }
                next.set(i, j, dsys.a_col[i] * next.at(last, j) / denom);
            }
        }
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Connection,
    Stokes,
}

/// A connection or q-Stokes matrix evaluated at one point, with the data
/// that pins its branch: the evaluation point and the direction(s).
#[derive(Debug, Clone)]
pub struct QMatrixDatum {
    pub kind: MatrixKind,
    pub entries: CMat,
    pub z: BranchedPoint,
    pub lambda: SpiralDirection,
    pub mu_dir: Option<SpiralDirection>,
}

impl QMatrixDatum {
    /// Deviation from the unipotent block pattern: identity block, last
    /// column e_n, free last row. Zero for exact Stokes matrices.
    pub fn stokes_block_deviation(&self) -> f64 {
        let n = self.entries.rows();
        let mut worst = 0.0f64;
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let expect = if i == j { ONE } else { ZERO };
                worst = worst.max((self.entries.at(i, j) - expect).norm());
            }
            worst = worst.max(self.entries.at(i, n - 1).norm());
        }
        worst.max((self.entries.at(n - 1, n - 1) - ONE).norm())
    }
}

fn ensure_admissible_z(
    dsys: &DiagonalizedSystem,
    lambda: Complex64,
    zc: Complex64,
    ctx: &QContext,
) -> Result<()> {
    let anchor = ctx.q_pow(dsys.spec.nu_last) / (1.0 - ctx.q);
    if on_spiral(anchor, zc, ctx)? {
        return Err(Error::PoleProximity(
            "evaluation point on the theta zero spiral of the scaled argument".into(),
        ));
    }
    if on_spiral(-lambda.inv(), zc, ctx)? {
        return Err(Error::PoleProximity(
            "evaluation point on the direction's theta zero spiral".into(),
        ));
    }
    Ok(())
}

fn ensure_direction_off_spirals(
    dsys: &DiagonalizedSystem,
    lambda: Complex64,
    ctx: &QContext,
) -> Result<()> {
    for l in 0..dsys.spec.n - 1 {
        let anchor = -(1.0 - ctx.q) * ctx.q_pow(-dsys.spec.nu[l]);
        if on_spiral(anchor, lambda, ctx)? {
            return Err(Error::PoleProximity(format!(
                "direction lies on the forbidden spiral of exponent nu[{l}]"
            )));
        }
    }
    Ok(())
}

/// Closed form of the connection matrix between the origin and infinity
/// fundamental solutions: Pochhammer ratios, theta ratios in z and in the
/// direction, and branched powers of z. Rows above the last are direction
/// independent.
pub fn uq_closed(
    dsys: &DiagonalizedSystem,
    dir: SpiralDirection,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<QMatrixDatum> {
    let spec = &dsys.spec;
    let n = spec.n;
    let last = n - 1;
    let lambda = dir.lambda();
    let zc = z.to_complex();
    ensure_direction_off_spirals(dsys, lambda, ctx)?;
    ensure_admissible_z(dsys, lambda, zc, ctx)?;
    let scaled = (1.0 - ctx.q) * zc;
    let mut entries = CMat::zeros(n, n);
    for j in 0..n {
        for i in 0..last {
            let gap = spec.lam_full[j] - spec.lam_sub[i];
            if gap.norm() < 1e-10 {
                return Err(Error::PoleProximity(format!(
                    "full eigenvalue {j} collides with sub eigenvalue {i}"
                )));
            }
            let mut num = Vec::new();
            let mut den = Vec::new();
            for l in 0..n - 1 {
                if l != i {
                    num.push(ctx.q_pow(ONE + spec.mu[j] - spec.nu[l]));
                    den.push(ctx.q_pow(ONE + spec.nu[i] - spec.nu[l]));
                }
            }
            for l in 0..n {
                if l != j {
                    num.push(ctx.q_pow(ONE + spec.nu[i] - spec.mu[l]));
                    den.push(ctx.q_pow(ONE + spec.mu[j] - spec.mu[l]));
                }
            }
            let poch = pochhammer_ratio_scaled(&num, &den, ctx)?;
            let th = theta_ratio(
                -ctx.q_pow(spec.mu[j] - spec.nu[i] - spec.nu_last) * scaled,
                -ctx.q_pow(-spec.nu_last) * scaled,
                ctx,
            )?;
            let power = branched_power_scaled(z, spec.mu[j] - spec.nu[i])?;
            let v = ScaledComplex::from_complex(dsys.a_col[i] / gap)
                .mul(poch)
                .mul(th)
                .mul(power);
            entries.set(i, j, v.to_complex()?);
        }
        let mut num = Vec::new();
        let mut den = Vec::new();
        for l in 0..n - 1 {
            num.push(ctx.q_pow(ONE + spec.mu[j] - spec.nu[l]));
        }
        for l in 0..n {
            if l != j {
                den.push(ctx.q_pow(ONE + spec.mu[j] - spec.mu[l]));
            }
        }
        let poch = pochhammer_ratio_scaled(&num, &den, ctx)?;
        let mut v = poch.mul(direction_theta_ratio(spec, j, lambda, ctx)?);
        let th = theta_ratio(ctx.q_pow(spec.mu[j] - spec.nu_last) * lambda * zc, lambda * zc, ctx)?;
        let power = branched_power_scaled(z, spec.mu[j] - spec.nu_last)?;
        v = v.mul(th).mul(power);
        entries.set(last, j, v.to_complex()?);
    }
    Ok(QMatrixDatum {
        kind: MatrixKind::Connection,
        entries,
        z: *z,
        lambda: dir,
        mu_dir: None,
    })
}

/// Closed form of the inverse connection matrix, transcribed separately
/// from its own formula rather than inverted numerically.
pub fn uq_inverse_closed(
    dsys: &DiagonalizedSystem,
    dir: SpiralDirection,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<QMatrixDatum> {
    let spec = &dsys.spec;
    let n = spec.n;
    let last = n - 1;
    let lambda = dir.lambda();
    let zc = z.to_complex();
    ensure_direction_off_spirals(dsys, lambda, ctx)?;
    ensure_admissible_z(dsys, lambda, zc, ctx)?;
    let mut entries = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..last {
            let mut num = Vec::new();
            let mut den = Vec::new();
            for l in 0..n {
                if l != i {
                    num.push(ctx.q_pow(ONE + spec.mu[l] - spec.nu[j]));
                    den.push(ctx.q_pow(spec.mu[l] - spec.mu[i]));
                }
            }
            for l in 0..n - 1 {
                if l != j {
                    num.push(ctx.q_pow(spec.nu[l] - spec.mu[i]));
                    den.push(ctx.q_pow(ONE + spec.nu[l] - spec.nu[j]));
                }
            }
            let poch = pochhammer_ratio_scaled(&num, &den, ctx)?;
            let th_z = theta_ratio(
                lambda * zc * ctx.q_pow(spec.nu[j] - spec.mu[i] - ONE),
                lambda * zc,
                ctx,
            )?;
            let th_dir = theta_ratio(
                lambda * ctx.q_pow(spec.mu[i]) / (1.0 - ctx.q),
                lambda * ctx.q_pow(spec.nu[j] - ONE) / (1.0 - ctx.q),
                ctx,
            )?;
            let power = branched_power_scaled(z, spec.nu[j] - spec.mu[i] - ONE)?;
            let v = ScaledComplex::from_complex(-dsys.b_row[j])
                .mul(poch)
                .mul(th_z)
                .mul(th_dir)
                .mul(power);
            entries.set(i, j, v.to_complex()?);
        }
        let mut num = Vec::new();
        let mut den = Vec::new();
        for l in 0..n - 1 {
            num.push(ctx.q_pow(spec.nu[l] - spec.mu[i]));
        }
        for l in 0..n {
            if l != i {
                den.push(ctx.q_pow(spec.mu[l] - spec.mu[i]));
            }
        }
        let poch = pochhammer_ratio_scaled(&num, &den, ctx)?;
        let th = theta_ratio(
            -ctx.q_pow(ONE + spec.mu[i]) / ((1.0 - ctx.q) * zc),
            -ctx.q_pow(-spec.nu_last) * (1.0 - ctx.q) * zc,
            ctx,
        )?;
        let power = branched_power_scaled(z, spec.nu_last - spec.mu[i])?;
        let v = poch.mul(th).mul(power);
        entries.set(i, last, v.to_complex()?);
    }
    Ok(QMatrixDatum {
        kind: MatrixKind::Connection,
        entries,
        z: *z,
        lambda: dir,
        mu_dir: None,
    })
}

/// Connection matrix from the defining relation: solve
/// F_inf(z, lambda) X = F_0(z) at a point where both are evaluable.
pub fn uq_numeric(
    finf: &SolutionHandle,
    f0: &SolutionHandle,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<QMatrixDatum> {
    let fi = finf.evaluate(z, ctx)?;
    let f0v = f0.evaluate(z, ctx)?;
    let x = fi.solve(&f0v)?;
    Ok(QMatrixDatum {
        kind: MatrixKind::Connection,
        entries: x,
        z: *z,
        lambda: finf.direction.expect("infinity handle stores a direction"),
        mu_dir: None,
    })
}

fn ensure_directions_distinct(
    lam: SpiralDirection,
    mu_dir: SpiralDirection,
    ctx: &QContext,
) -> Result<()> {
    if on_spiral(lam.lambda(), mu_dir.lambda(), ctx)? {
        return Err(Error::PoleProximity(
            "the two directions lie on a common q-spiral".into(),
        ));
    }
    Ok(())
}

/// Theta ratio in the direction variable appearing in the last connection
/// row: thetas at scaled reciprocal mu exponents (skipping k) over thetas
/// at all scaled reciprocal nu exponents. Both products have n-1 factors;
/// they are paired off arbitrarily since only the product matters.
fn direction_theta_ratio(
    spec: &SystemSpec,
    k: usize,
    lambda: Complex64,
    ctx: &QContext,
) -> Result<ScaledComplex> {
    let n = spec.n;
    let scale = 1.0 - ctx.q;
    let num: Vec<Complex64> = (0..n)
        .filter(|&l| l != k)
        .map(|l| scale * ctx.q_pow(ONE - spec.mu[l]) / lambda)
        .collect();
    let den: Vec<Complex64> = (0..n - 1)
        .map(|l| scale * ctx.q_pow(ONE - spec.nu[l]) / lambda)
        .collect();
    let mut v = ScaledComplex::one();
    for (a, b) in num.iter().zip(den.iter()) {
        v = v.mul(theta_ratio(*a, *b, ctx)?);
    }
    Ok(v)
}

/// Summand shared by the closed q-Stokes entries and the full-system
/// transport: the direction-dependent factor of the last connection row at
/// column k, without the z power.
fn stokes_row_factor(
    spec: &SystemSpec,
    k: usize,
    lambda: Complex64,
    zc: Complex64,
    ctx: &QContext,
) -> Result<ScaledComplex> {
    let n = spec.n;
    let mut num = Vec::new();
    let mut den = Vec::new();
    for l in 0..n - 1 {
        num.push(ctx.q_pow(ONE + spec.mu[k] - spec.nu[l]));
    }
    for l in 0..n {
        if l != k {
            den.push(ctx.q_pow(ONE + spec.mu[k] - spec.mu[l]));
        }
    }
    let mut v = pochhammer_ratio_scaled(&num, &den, ctx)?;
    v = v.mul(direction_theta_ratio(spec, k, lambda, ctx)?);
    let th = theta_ratio(ctx.q_pow(spec.mu[k] - spec.nu_last) * lambda * zc, lambda * zc, ctx)?;
    Ok(v.mul(th))
}

/// Summand of the inverse connection column j at row k under direction mu,
/// without the -b_row[j] prefactor and without the z power.
fn stokes_col_factor(
    spec: &SystemSpec,
    k: usize,
    j: usize,
    mu_dir: Complex64,
    zc: Complex64,
    ctx: &QContext,
) -> Result<ScaledComplex> {
    let n = spec.n;
    let mut num = Vec::new();
    let mut den = Vec::new();
    for l in 0..n {
        if l != k {
            num.push(ctx.q_pow(ONE + spec.mu[l] - spec.nu[j]));
            den.push(ctx.q_pow(spec.mu[l] - spec.mu[k]));
        }
    }
    for l in 0..n - 1 {
        if l != j {
            num.push(ctx.q_pow(spec.nu[l] - spec.mu[k]));
            den.push(ctx.q_pow(ONE + spec.nu[l] - spec.nu[j]));
        }
    }
    let poch = pochhammer_ratio_scaled(&num, &den, ctx)?;
    let th_z = theta_ratio(
        ctx.q_pow(spec.nu[j] - spec.mu[k] - ONE) * mu_dir * zc,
        mu_dir * zc,
        ctx,
    )?;
    let th_dir = theta_ratio(
        mu_dir * ctx.q_pow(spec.mu[k]) / (1.0 - ctx.q),
        mu_dir * ctx.q_pow(spec.nu[j] - ONE) / (1.0 - ctx.q),
        ctx,
    )?;
    Ok(poch.mul(th_z).mul(th_dir))
}

/// Closed block form of the q-Stokes matrix between two directions:
/// identity except for the last row, whose entries are the double sums of
/// Pochhammer and theta factors times the common z power.
pub fn sq_closed(
    dsys: &DiagonalizedSystem,
    lam: SpiralDirection,
    mu_dir: SpiralDirection,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<QMatrixDatum> {
    let spec = &dsys.spec;
    let n = spec.n;
    let last = n - 1;
    ensure_direction_off_spirals(dsys, lam.lambda(), ctx)?;
    ensure_direction_off_spirals(dsys, mu_dir.lambda(), ctx)?;
    ensure_directions_distinct(lam, mu_dir, ctx)?;
    let zc = z.to_complex();
    if on_spiral(-lam.lambda().inv(), zc, ctx)? || on_spiral(-mu_dir.lambda().inv(), zc, ctx)? {
        return Err(Error::PoleProximity(
            "evaluation point on a theta zero spiral of the directions".into(),
        ));
    }
    let mut entries = CMat::identity(n);
    for j in 0..last {
        let mut acc = ScaledAccumulator::new();
        for k in 0..n {
            let row = stokes_row_factor(spec, k, lam.lambda(), zc, ctx)?;
            let col = stokes_col_factor(spec, k, j, mu_dir.lambda(), zc, ctx)?;
            acc.add(row.mul(col));
        }
        let power = branched_power_scaled(z, spec.nu[j] - spec.nu_last - ONE)?;
        let v = acc
            .value()
            .mul(power)
            .mul_complex(-dsys.b_row[j]);
        entries.set(last, j, v.to_complex()?);
    }
    Ok(QMatrixDatum {
        kind: MatrixKind::Stokes,
        entries,
        z: *z,
        lambda: lam,
        mu_dir: Some(mu_dir),
    })
}

/// q-Stokes matrix from the defining relation: solve
/// F_inf(z, lambda) X = F_inf(z, mu).
pub fn sq_numeric(
    finf_lam: &SolutionHandle,
    finf_mu: &SolutionHandle,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<QMatrixDatum> {
    let a = finf_lam.evaluate(z, ctx)?;
    let b = finf_mu.evaluate(z, ctx)?;
    let x = a.solve(&b)?;
    Ok(QMatrixDatum {
        kind: MatrixKind::Stokes,
        entries: x,
        z: *z,
        lambda: finf_lam.direction.expect("infinity handle stores a direction"),
        mu_dir: finf_mu.direction,
    })
}

/// Conjugates a connection or Stokes datum back to the original system:
/// Stokes matrices conjugate by diag(P, 1), connection matrices are only
/// multiplied on the left.
pub fn transport_matrix(dsys: &DiagonalizedSystem, datum: &QMatrixDatum) -> QMatrixDatum {
    let n = dsys.spec.n;
    let p = embed_block(&dsys.p, n);
    let entries = match datum.kind {
        MatrixKind::Connection => p.mul(&datum.entries),
        MatrixKind::Stokes => p.mul(&datum.entries).mul(&embed_block(&dsys.p_inv, n)),
    };
    QMatrixDatum { entries, ..datum.clone() }
}

/// Value of a fundamental solution of the original system at z: the origin
/// solution transports by left multiplication, the infinity solution by
/// conjugation.
pub fn transport_solution_value(dsys: &DiagonalizedSystem, handle: &SolutionHandle, value: &CMat) -> CMat {
    let n = dsys.spec.n;
    let p = embed_block(&dsys.p, n);
    match handle.base {
        BaseTag::Origin => p.mul(value),
        BaseTag::Infinity => p.mul(value).mul(&embed_block(&dsys.p_inv, n)),
    }
}

/// Last row of the q-Stokes matrix of the original system, from the minor
/// weighted double sum. Uses only the matrix A, its nested eigenvalues and
/// the q-exponents, never the diagonalizing pair, so it cross-checks the
/// conjugation route.
pub fn full_stokes_closed(
    spec: &SystemSpec,
    lam: SpiralDirection,
    mu_dir: SpiralDirection,
    z: &BranchedPoint,
    ctx: &QContext,
) -> Result<QMatrixDatum> {
    let n = spec.n;
    let last = n - 1;
    ensure_directions_distinct(lam, mu_dir, ctx)?;
    let zc = z.to_complex();
    let head: Vec<usize> = (0..n - 2).collect();
    let mut rows_top: Vec<usize> = (0..n - 2).collect();
    rows_top.push(last);
    let all_cols: Vec<usize> = (0..n - 1).collect();
    let mut entries = CMat::identity(n);
    for k in 0..last {
        let mut acc = ScaledAccumulator::new();
        for j in 0..last {
            let sh = {
                let mut s = spec.a.clone();
                for d in 0..n {
                    s.set(d, d, s.at(d, d) - spec.lam_sub[j]);
                }
                s
            };
            let delta_top = sh.minor(&rows_top, &all_cols)?;
            let rows_hat: Vec<usize> = (0..n - 1).filter(|&r| r != k).collect();
            let delta_hat = sh.minor(&rows_hat, &head)?;
            let mut denom = ONE;
            for l in 0..n - 1 {
                if l != j {
                    denom *= spec.lam_sub[l] - spec.lam_sub[j];
                }
            }
            for l in 0..n - 2 {
                denom *= spec.lam_subsub[l] - spec.lam_sub[j];
            }
            let sign = if (n + k + 1) % 2 == 0 { ONE } else { -ONE };
            let weight = sign * delta_top * delta_hat / denom;
            if weight == ZERO {
                continue;
            }
            let mut inner = ScaledAccumulator::new();
            for s in 0..n {
                let row = stokes_row_factor(spec, s, lam.lambda(), zc, ctx)?;
                let col = stokes_col_factor(spec, s, j, mu_dir.lambda(), zc, ctx)?;
                inner.add(row.mul(col));
            }
            let power = branched_power_scaled(z, spec.nu[j] - spec.nu_last - ONE)?;
            acc.add(inner.value().mul(power).mul_complex(weight));
        }
        entries.set(last, k, acc.value().to_complex()?);
    }
    Ok(QMatrixDatum {
        kind: MatrixKind::Stokes,
        entries,
        z: *z,
        lambda: lam,
        mu_dir: Some(mu_dir),
    })
}
