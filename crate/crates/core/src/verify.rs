//! Named verification suites shared by the command line and the
//! acceptance tests.
//!
//! Every suite draws seeded samples, pits a closed form against an
//! independent route, and aggregates each family of draws into one
//! record: the residual is the worst case over the family and the value
//! pinpoints where it occurred. Records are appended in a fixed order,
//! so reports for equal configurations are byte-identical up to the
//! wall time.

use crate::classical::{
    basic_limits_suite, classical_connection_check, classical_s_minus, classical_u,
    confluent_operator_residual, h_infinity, qlimit_connection, qlimit_stokes,
    ClassicalEquationSpec, ClassicalSystemSpec, Sector, TrendReport, DEFAULT_Q_SCHEDULE,
};
use crate::connection::{
    corollary_fn_check, main_connection_coeffs, verify_main_connection, verify_thomae,
};
use crate::error::{Error, Result};
use crate::linalg::{sort_lexicographic, CMat};
use crate::qcore::{
    branched_power, c64, pochhammer_multi, q_exponential, theta, BranchedPoint, QContext, ONE,
};
use crate::qseries::q_difference_residual;
use crate::qseries::{FormalPowerSeries, Variable};
use crate::qsystem::{
    build_diagonalized, column_residual, f0_handle, finf_handle, full_stokes_closed, sq_closed,
    sq_numeric, transport_matrix, transport_solution_value, uq_closed, uq_inverse_closed,
    uq_numeric, DiagonalizedSystem, DEFAULT_SERIES_ORDER,
};
use crate::report::{complex_value, float_list_value, Report};
use crate::resummation::{nf, resum_convergent, InfinityBasis, SpiralDirection};
use crate::sampling::Sampler;
use num_complex::Complex64;
use serde_json::{json, Value};
use std::f64::consts::PI;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub q: f64,
    pub seed: u64,
    pub schedule: Vec<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            q: 0.5,
            seed: 7,
            schedule: DEFAULT_Q_SCHEDULE.to_vec(),
        }
    }
}

pub const SUITES: [&str; 11] = [
    "qcore-identities",
    "resummation",
    "thomae",
    "main-connection",
    "corollary",
    "system-solutions",
    "connection-matrix",
    "stokes-matrix",
    "full-system",
    "classical",
    "qlimit",
];

pub fn run_suite(name: &str, cfg: &VerifyConfig) -> Result<Report> {
    if name.is_empty() {
        return Err(Error::UnknownFunction("empty suite name".into()));
    }
    let started = Instant::now();
    let mut report = match name {
        "qcore-identities" => suite_qcore(cfg)?,
        "resummation" => suite_resummation(cfg)?,
        "thomae" => suite_thomae(cfg)?,
        "main-connection" => suite_main_connection(cfg)?,
        "corollary" => suite_corollary(cfg)?,
        "system-solutions" => suite_system_solutions(cfg)?,
        "connection-matrix" => suite_connection_matrix(cfg)?,
        "stokes-matrix" => suite_stokes_matrix(cfg)?,
        "full-system" => suite_full_system(cfg)?,
        "classical" => suite_classical(cfg)?,
        "qlimit" => suite_qlimit(cfg)?,
        _ => {
            return Err(Error::UnknownFunction(format!(
                "no suite named {name}; known suites: {}",
                SUITES.join(", ")
            )))
        }
    };
    report.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

fn base_inputs(name: &str, cfg: &VerifyConfig, extra: Value) -> Value {
    let mut m = serde_json::Map::new();
    m.insert("suite".into(), json!(name));
    m.insert("q".into(), json!(cfg.q));
    m.insert("seed".into(), json!(cfg.seed));
    m.insert("schedule".into(), json!(cfg.schedule.clone()));
    if let Value::Object(e) = extra {
        for (k, v) in e {
            m.insert(k, v);
        }
    }
    Value::Object(m)
}

/// Worst residual over a family of draws together with where it happened.
struct Worst {
    residual: f64,
    at: Value,
}

impl Worst {
    fn new() -> Self {
        Worst {
            residual: 0.0,
            at: Value::Null,
        }
    }

    fn update(&mut self, r: f64, at: impl FnOnce() -> Value) {
        let r = if r.is_finite() { r } else { f64::INFINITY };
        if self.at.is_null() || r > self.residual {
            self.residual = r;
            self.at = at();
        }
    }

    fn push(self, rep: &mut Report, name: &str, tol: f64) {
        rep.push(name, self.at, self.residual, tol);
    }
}

const MAX_TRIES: usize = 300;

/// Runs a draw-and-check closure until it lands in an admissible
/// configuration. Domain-class errors count as rejections; anything else
/// aborts the suite.
fn retry<T>(what: &str, mut f: impl FnMut() -> Result<T>) -> Result<T> {
    let mut last = String::from("no attempt ran");
    for _ in 0..MAX_TRIES {
        match f() {
            Ok(t) => return Ok(t),
            Err(e) if e.is_domain_class() => last = e.to_string(),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Genericity(format!(
        "{what}: no admissible draw in {MAX_TRIES} tries (last rejection: {last})"
    )))
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1.0)
}

// --- theta and q-exponential identities -------------------------------

fn suite_qcore(cfg: &VerifyConfig) -> Result<Report> {
    const POINTS: usize = 100;
    const TOL: f64 = 1e-10;
    let qs = [0.3, 0.5, 0.7];
    let mut rep = Report::new(
        "verify qcore-identities",
        base_inputs("qcore-identities", cfg, json!({"q_grid": qs.to_vec(), "points": POINTS})),
        cfg.seed,
    );
    let mut root = Sampler::new(cfg.seed);
    for &q in &qs {
        let ctx = QContext::new(q)?;
        let mut s = root.fork(q.to_bits());
        let mut triple = Worst::new();
        let mut quasi = Worst::new();
        let mut inversion = Worst::new();
        let mut taylor = Worst::new();
        for k in 0..POINTS {
            // z off the theta zero spiral -q^Z, with room on both sides
            // since the inversion check also evaluates at 1/z
            let z = s.point_off_spirals(0.25, 3.0, &[c64(-1.0, 0.0)], &ctx)?;
            let zc = z.to_complex();
            let at = |w: Complex64| move || json!({"draw": k, "z": complex_value(w)});

            let th = theta(zc, &ctx)?;
            let prod = pochhammer_multi(&[c64(q, 0.0), -zc, -c64(q, 0.0) / zc], &ctx)?;
            triple.update(rel((th - prod).norm(), th.norm()), at(zc));

            let shifted = theta(q * zc, &ctx)?;
            let expect = th / zc;
            quasi.update(rel((shifted - expect).norm(), expect.norm()), at(zc));

            let inv = theta(zc.inv(), &ctx)?;
            inversion.update(rel((inv - expect).norm(), expect.norm()), at(zc));

            // Taylor sum of e_q inside its radius 1/(1-q), against the
            // infinite product
            let ze = s.annulus(0.05 / (1.0 - q), 0.9 / (1.0 - q))?;
            let mut sum = ONE;
            let mut term = ONE;
            for m in 1..600 {
                term *= ze * (1.0 - q) / (1.0 - ctx.q_int(m as i64));
                sum += term;
                if term.norm() < 1e-18 * sum.norm().max(1.0) {
                    break;
                }
            }
            let eq = q_exponential(ze, &ctx)?;
            taylor.update(rel((eq - sum).norm(), eq.norm()), at(ze));
        }
        triple.push(&mut rep, &format!("triple-product-q{q}"), TOL);
        quasi.push(&mut rep, &format!("quasi-periodicity-q{q}"), TOL);
        inversion.push(&mut rep, &format!("inversion-q{q}"), TOL);
        taylor.push(&mut rep, &format!("q-exponential-taylor-q{q}"), TOL);
    }
    Ok(rep)
}

// --- Borel-Laplace round trip and resummed solutions ------------------

fn suite_resummation(cfg: &VerifyConfig) -> Result<Report> {
    const DRAWS: usize = 20;
    let ctx = QContext::new(cfg.q)?;
    let mut rep = Report::new(
        "verify resummation",
        base_inputs("resummation", cfg, json!({"points": DRAWS})),
        cfg.seed,
    );
    let mut root = Sampler::new(cfg.seed);

    // Laplace after Borel returns a convergent geometric-type series to
    // its closed-form sum z/(z - r).
    let mut s = root.fork(1);
    let mut round = Worst::new();
    for k in 0..DRAWS {
        let (zc, got, expect) = retry("borel-laplace round trip", || {
            let r = s.annulus(0.2, 1.2)?;
            let mut coeffs = Vec::with_capacity(80);
            let mut c = ONE;
            for _ in 0..80 {
                coeffs.push(c);
                c *= r;
            }
            let f = FormalPowerSeries::new(Variable::ZInverse, coeffs, "geometric");
            let lam = s.direction(&[], &ctx)?;
            let z = s.point_off_spirals(1.8, 4.0, &[-lam.lambda()], &ctx)?;
            let zc = z.to_complex();
            let got = resum_convergent(&f, lam.lambda(), zc, &ctx)?;
            Ok((zc, got, zc / (zc - r)))
        })?;
        round.update(rel((got - expect).norm(), expect.norm()), || {
            json!({"draw": k, "z": complex_value(zc)})
        });
    }
    round.push(&mut rep, "laplace-borel-roundtrip", 1e-8);

    // The resummed value cannot depend on which representative of the
    // direction spiral is used.
    let mut s = root.fork(2);
    let mut indep = Worst::new();
    for k in 0..DRAWS {
        let (zc, worst_here) = retry("direction representative", || {
            let (upper, lower) = if k % 2 == 0 {
                (s.spiral_free_list(2, 0.85, 2.1, &ctx)?, Vec::new())
            } else {
                let all = s.spiral_free_list(4, 0.85, 2.1, &ctx)?;
                (all[..3].to_vec(), vec![all[3] * 0.45])
            };
            let lam = s.direction(&[], &ctx)?;
            let z = s.point_off_spirals(1.5, 4.0, &[-lam.lambda()], &ctx)?;
            let zc = z.to_complex();
            let base = nf(&upper, &lower, lam.lambda(), zc, &ctx)?;
            let mut worst_here = 0.0f64;
            for shift in [-1i64, 1, 2] {
                let moved = nf(&upper, &lower, lam.lambda() * ctx.q_int(shift), zc, &ctx)?;
                worst_here = worst_here.max(rel((moved - base).norm(), base.norm()));
            }
            Ok((zc, worst_here))
        })?;
        indep.update(worst_here, || json!({"draw": k, "z": complex_value(zc)}));
    }
    indep.push(&mut rep, "direction-independence", 1e-10);

    // Resummed basis columns solve the confluent equation.
    let mut s = root.fork(3);
    for n in [2usize, 3] {
        let mut eqn = Worst::new();
        let spec = s.confluent_spec(n, &ctx)?;
        let basis = InfinityBasis::new(&spec, 200, &ctx)?;
        // the stencil descends to q^n z, so every column must stay inside
        // its own domain there: the resummed columns go through the Laplace
        // route near infinity, the tail column needs q^n |z| past the
        // empirical convergence radius of its series in 1/z
        let tail_lo = 1.2 / (ctx.q.powi(n as i32) * 0.8 * basis.h_series().radius_inv_z);
        for k in 0..10 {
            for i in 0..n {
                let (zc, r) = retry("resummed equation residual", || {
                    let lam = s.direction(&[], &ctx)?;
                    let z = if i + 1 == n {
                        s.branched(tail_lo, 1.7 * tail_lo)?
                    } else {
                        s.branched(2.0, 3.5)?
                    };
                    let f = |w: &BranchedPoint| {
                        basis.value_direct(i, lam.lambda(), w, &ctx)
                    };
                    let r = q_difference_residual(&f, &spec, &z, &ctx)?;
                    Ok((z.to_complex(), r))
                })?;
                eqn.update(r, || {
                    json!({"draw": k, "column": i, "z": complex_value(zc)})
                });
            }
        }
        eqn.push(&mut rep, &format!("equation-residual-n{n}"), 1e-8);
    }
    Ok(rep)
}

// --- the regular-singular connection identity -------------------------

fn suite_thomae(cfg: &VerifyConfig) -> Result<Report> {
    const DRAWS: usize = 20;
    let ctx = QContext::new(cfg.q)?;
    let mut rep = Report::new(
        "verify thomae",
        base_inputs("thomae", cfg, json!({"draws": DRAWS})),
        cfg.seed,
    );
    let mut root = Sampler::new(cfg.seed);
    for n in [2usize, 3] {
        let mut s = root.fork(n as u64);
        let mut worst = Worst::new();
        for k in 0..DRAWS {
            let (zc, r) = retry("thomae draw", || {
                let (a, b) = s.fuchsian_params(n, &ctx)?;
                let pa: f64 = a.iter().map(|x| x.norm()).product();
                let pb: f64 = b.iter().map(|x| x.norm()).product();
                // both sides of the identity must converge: the series
                // needs |z| < 1, the basis at infinity |z| > q pb / pa
                let lo = (ctx.q * pb / (0.95 * pa)).max(0.1);
                if lo > 0.9 {
                    return Err(Error::OutsideRadius("empty overlap".into()));
                }
                let z = s.point_off_spirals(lo, 0.95, &[c64(-1.0, 0.0)], &ctx)?;
                let r = verify_thomae(&a, &b, &z, &ctx)?;
                Ok((z.to_complex(), r))
            })?;
            worst.update(r, || json!({"draw": k, "z": complex_value(zc)}));
        }
        worst.push(&mut rep, &format!("identity-n{n}"), 1e-8);
    }
    Ok(rep)
}

// --- the confluent connection identity --------------------------------

fn suite_main_connection(cfg: &VerifyConfig) -> Result<Report> {
    const DRAWS: usize = 20;
    let qs = [0.3, 0.5];
    let mut rep = Report::new(
        "verify main-connection",
        base_inputs("main-connection", cfg, json!({"q_grid": qs.to_vec(), "draws": DRAWS})),
        cfg.seed,
    );
    let mut root = Sampler::new(cfg.seed);
    for &q in &qs {
        let ctx = QContext::new(q)?;
        for n in [2usize, 3] {
            let mut s = root.fork(n as u64 ^ q.to_bits());
            let mut worst = Worst::new();
            let mut drift = Worst::new();
            for k in 0..DRAWS {
                let (spec, dir, z, r) = retry("confluent connection draw", || {
                    let spec = s.confluent_spec(n, &ctx)?;
                    let pa = spec.prod_a();
                    let pb = spec.prod_b();
                    let mut lo = 0.45f64;
                    for &ai in &spec.a {
                        lo = lo.max((pb / (ai * pa)).norm() / 0.95);
                    }
                    if lo > 0.88 {
                        return Err(Error::OutsideRadius("empty overlap".into()));
                    }
                    let avoid: Vec<Complex64> = spec.a.iter().map(|&ai| -ai).collect();
                    let dir = s.direction(&avoid, &ctx)?;
                    let z = s.point_off_spirals(lo, 0.94, &[c64(-1.0, 0.0), -dir.lambda()], &ctx)?;
                    let r = verify_main_connection(&spec, &dir, &z, &ctx)?;
                    Ok((spec, dir, z, r))
                })?;
                worst.update(r, || json!({"draw": k, "z": complex_value(z.to_complex())}));
                if k == 0 {
                    // invariance of every coefficient under z -> qz, at
                    // the first admissible sample of the family
                    let mc = main_connection_coeffs(&spec, &dir, &ctx)?;
                    for (i, coeff) in mc.coeffs.iter().enumerate() {
                        let d = coeff.drift(&z, &ctx)?;
                        drift.update(d, || {
                            json!({"coefficient": i, "z": complex_value(z.to_complex())})
                        });
                    }
                }
            }
            worst.push(&mut rep, &format!("identity-n{n}-q{q}"), 1e-6);
            drift.push(&mut rep, &format!("pseudo-constancy-n{n}-q{q}"), 1e-9);
        }
    }
    Ok(rep)
}

// --- the degenerate connection evaluation -----------------------------

fn suite_corollary(cfg: &VerifyConfig) -> Result<Report> {
    const DRAWS: usize = 10;
    let ctx = QContext::new(cfg.q)?;
    let mut rep = Report::new(
        "verify corollary",
        base_inputs("corollary", cfg, json!({"draws": DRAWS})),
        cfg.seed,
    );
    let mut root = Sampler::new(cfg.seed);
    for n in [2usize, 3] {
        let mut s = root.fork(n as u64);
        let mut worst = Worst::new();
        for k in 0..DRAWS {
            let (zc, r) = retry("corollary draw", || {
                let spec = s.confluent_spec(n, &ctx)?;
                let z = s.point_off_spirals(0.55, 0.94, &[c64(-1.0, 0.0)], &ctx)?;
                let r = corollary_fn_check(&spec, &z, &ctx)?;
                Ok((z.to_complex(), r))
            })?;
            worst.update(r, || json!({"draw": k, "z": complex_value(zc)}));
        }
        worst.push(&mut rep, &format!("identity-n{n}"), 1e-6);
    }
    Ok(rep)
}

// --- fundamental solutions and the diagonalizing frame ----------------

fn scaled_unit(d: &DiagonalizedSystem, ctx: &QContext) -> f64 {
    ctx.q_pow(d.spec.nu_last).norm() / (1.0 - ctx.q)
}

fn suite_system_solutions(cfg: &VerifyConfig) -> Result<Report> {
    const DRAWS: usize = 20;
    let ctx = QContext::new(cfg.q)?;
    let mut rep = Report::new(
        "verify system-solutions",
        base_inputs("system-solutions", cfg, json!({"draws": DRAWS})),
        cfg.seed,
    );
    let mut root = Sampler::new(cfg.seed);

    // frame invariants for both sizes
    for n in [2usize, 3] {
        let mut s = root.fork(10 + n as u64);
        let spec = s.system_spec(n, &ctx)?;
        let d = build_diagonalized(&spec, &ctx)?;
        let m = n - 1;

        let inv_dev = d.p.mul(&d.p_inv).max_abs_diff(&CMat::identity(m));
        rep.push("frame-inverse-n".to_string() + &n.to_string(), Value::Null, inv_dev, 1e-9);

        let sub = spec.a.submatrix(&(0..m).collect::<Vec<_>>(), &(0..m).collect::<Vec<_>>());
        let conj = d.p_inv.mul(&sub).mul(&d.p);
        let mut target = CMat::zeros(m, m);
        for i in 0..m {
            target.set(i, i, spec.lam_sub[i]);
        }
        let conj_dev = rel(conj.max_abs_diff(&target), spec.a.max_abs());
        rep.push(format!("frame-conjugation-n{n}"), Value::Null, conj_dev, 1e-9);

        let mut got = d.arrow.eigenvalues()?;
        let mut want = spec.lam_full.clone();
        sort_lexicographic(&mut got);
        sort_lexicographic(&mut want);
        let spec_dev = got
            .iter()
            .zip(&want)
            .map(|(g, w)| (g - w).norm())
            .fold(0.0f64, f64::max);
        rep.push(format!("frame-spectral-n{n}"), Value::Null, spec_dev, 1e-9);

        // border products are spectral data: evaluating the arrowhead
        // characteristic polynomial at a sub eigenvalue isolates a_i b_i
        let mut border_dev = 0.0f64;
        for i in 0..m {
            let mut num = -ONE;
            for &lf in &spec.lam_full {
                num *= spec.lam_sub[i] - lf;
            }
            let mut den = ONE;
            for l in 0..m {
                if l != i {
                    den *= spec.lam_sub[i] - spec.lam_sub[l];
                }
            }
            let expect = num / den;
            let got = d.a_col[i] * d.b_row[i];
            border_dev = border_dev.max(rel((got - expect).norm(), expect.norm()));
        }
        rep.push(format!("frame-border-n{n}"), Value::Null, border_dev, 1e-9);
    }

    // q-difference residuals of both fundamental solutions, n = 3
    let mut s = root.fork(20);
    let spec = s.system_spec(3, &ctx)?;
    let d = build_diagonalized(&spec, &ctx)?;
    let unit = scaled_unit(&d, &ctx);

    let f0 = f0_handle(&d, &ctx)?;
    let mut origin = Worst::new();
    for k in 0..DRAWS {
        let (zc, r) = retry("origin solution point", || {
            let z = s.branched(0.15 * unit, 0.85 * unit)?;
            let mut worst_here = 0.0f64;
            for j in 0..3 {
                let col = |p: &BranchedPoint| f0.evaluate_column(j, p, &ctx);
                worst_here = worst_here.max(column_residual(&d.arrow, &col, &z, &ctx)?);
            }
            Ok((z.to_complex(), worst_here))
        })?;
        origin.update(r, || json!({"draw": k, "z": complex_value(zc)}));
    }
    origin.push(&mut rep, "origin-residual-n3", 1e-8);

    let fi = retry("infinity solution direction", || {
        let dir = s.direction(&[], &ctx)?;
        finf_handle(&d, dir, DEFAULT_SERIES_ORDER, &ctx)
    })?;
    let mut infinity = Worst::new();
    for k in 0..DRAWS {
        // resummed columns on the bounded side, every column including
        // the convergent last one on the unbounded side
        let (lo, hi, cols) = if k % 2 == 0 {
            (0.6, 0.9, 2)
        } else {
            (3.5, 6.0, 3)
        };
        let (zc, r) = retry("infinity solution point", || {
            let z = s.branched(lo * unit, hi * unit)?;
            let mut worst_here = 0.0f64;
            for j in 0..cols {
                let col = |p: &BranchedPoint| fi.evaluate_column(j, p, &ctx);
                worst_here = worst_here.max(column_residual(&d.arrow, &col, &z, &ctx)?);
            }
            Ok((z.to_complex(), worst_here))
        })?;
        infinity.update(r, || json!({"draw": k, "z": complex_value(zc)}));
    }
    infinity.push(&mut rep, "infinity-residual-n3", 1e-8);
    Ok(rep)
}

// --- connection matrix ------------------------------------------------

fn suite_connection_matrix(cfg: &VerifyConfig) -> Result<Report> {
    const POINTS: usize = 3;
    let ctx = QContext::new(cfg.q)?;
    let mut rep = Report::new(
        "verify connection-matrix",
        base_inputs("connection-matrix", cfg, json!({"points": POINTS})),
        cfg.seed,
    );
    let mut root = Sampler::new(cfg.seed);
    for n in [2usize, 3] {
        let mut s = root.fork(n as u64);
        let spec = s.system_spec(n, &ctx)?;
        let d = build_diagonalized(&spec, &ctx)?;
        let unit = scaled_unit(&d, &ctx);
        let f0 = f0_handle(&d, &ctx)?;
        let (dir, fi) = retry("connection direction", || {
            let dir = s.direction(&[], &ctx)?;
            let fi = finf_handle(&d, dir, DEFAULT_SERIES_ORDER, &ctx)?;
            Ok((dir, fi))
        })?;
        let mut closed_vs_numeric = Worst::new();
        let mut inverse = Worst::new();
        let mut constancy = Worst::new();
        for k in 0..POINTS {
            let (z, closed) = retry("connection point", || {
                let z = s.branched(0.7 * unit, 0.9 * unit)?;
                let closed = uq_closed(&d, dir, &z, &ctx)?;
                Ok((z, closed))
            })?;
            let at = || json!({"draw": k, "z": complex_value(z.to_complex())});
            let scale = closed.entries.max_abs();

            let numeric = uq_numeric(&fi, &f0, &z, &ctx)?;
            closed_vs_numeric.update(
                rel(closed.entries.max_abs_diff(&numeric.entries), scale),
                at,
            );

            let inv = uq_inverse_closed(&d, dir, &z, &ctx)?;
            let prod = closed.entries.mul(&inv.entries);
            inverse.update(prod.max_abs_diff(&CMat::identity(n)), at);

            let up = uq_closed(&d, dir, &z.q_shift(&ctx, 1)?, &ctx)?;
            constancy.update(rel(closed.entries.max_abs_diff(&up.entries), scale), at);
        }
        closed_vs_numeric.push(&mut rep, &format!("closed-vs-numeric-n{n}"), 1e-6);
        inverse.push(&mut rep, &format!("inverse-product-n{n}"), 1e-8);
        constancy.push(&mut rep, &format!("pseudo-constancy-n{n}"), 1e-8);
    }
    Ok(rep)
}

// --- q-Stokes matrices ------------------------------------------------

fn stokes_setup(
    s: &mut Sampler,
    n: usize,
    ctx: &QContext,
) -> Result<(DiagonalizedSystem, SpiralDirection, SpiralDirection)> {
    let spec = s.system_spec(n, ctx)?;
    let d = build_diagonalized(&spec, ctx)?;
    let unit = scaled_unit(&d, ctx);
    // the closed Stokes matrix validates the pair against the exponent
    // spirals, so it doubles as a cheap admissibility probe
    let (lam, mu) = retry("direction pair", || {
        let lam = s.direction(&[], ctx)?;
        let mu = s.direction(&[lam.lambda()], ctx)?;
        let z = s.branched(0.75 * unit, 0.85 * unit)?;
        sq_closed(&d, lam, mu, &z, ctx)?;
        Ok((lam, mu))
    })?;
    Ok((d, lam, mu))
}

fn suite_stokes_matrix(cfg: &VerifyConfig) -> Result<Report> {
    const POINTS: usize = 3;
    let ctx = QContext::new(cfg.q)?;
    let mut rep = Report::new(
        "verify stokes-matrix",
        base_inputs("stokes-matrix", cfg, json!({"points": POINTS})),
        cfg.seed,
    );
    let mut root = Sampler::new(cfg.seed);
    for n in [2usize, 3] {
        let mut s = root.fork(n as u64);
        let (d, lam, mu) = stokes_setup(&mut s, n, &ctx)?;
        let unit = scaled_unit(&d, &ctx);
        let fi_lam = finf_handle(&d, lam, DEFAULT_SERIES_ORDER, &ctx)?;
        let fi_mu = finf_handle(&d, mu, DEFAULT_SERIES_ORDER, &ctx)?;
        let mut closed_vs_numeric = Worst::new();
        let mut block = Worst::new();
        let mut involution = Worst::new();
        for k in 0..POINTS {
            let (z, sq) = retry("stokes point", || {
                let z = s.branched(0.7 * unit, 0.9 * unit)?;
                let sq = sq_closed(&d, lam, mu, &z, &ctx)?;
                Ok((z, sq))
            })?;
            let at = || json!({"draw": k, "z": complex_value(z.to_complex())});
            let scale = sq.entries.max_abs();

            let numeric = sq_numeric(&fi_lam, &fi_mu, &z, &ctx)?;
            closed_vs_numeric.update(rel(sq.entries.max_abs_diff(&numeric.entries), scale), at);

            block.update(sq.stokes_block_deviation(), at);

            let back = sq_closed(&d, mu, lam, &z, &ctx)?;
            let prod = sq.entries.mul(&back.entries);
            involution.update(prod.max_abs_diff(&CMat::identity(n)), at);
        }
        closed_vs_numeric.push(&mut rep, &format!("closed-vs-numeric-n{n}"), 1e-6);
        block.push(&mut rep, &format!("block-structure-n{n}"), 1e-8);
        involution.push(&mut rep, &format!("involution-n{n}"), 1e-8);
    }
    Ok(rep)
}

// --- transport back to the original system ----------------------------

fn suite_full_system(cfg: &VerifyConfig) -> Result<Report> {
    const POINTS: usize = 2;
    let ctx = QContext::new(cfg.q)?;
    let mut rep = Report::new(
        "verify full-system",
        base_inputs("full-system", cfg, json!({"points": POINTS})),
        cfg.seed,
    );
    let mut root = Sampler::new(cfg.seed);
    for n in [2usize, 3] {
        let mut s = root.fork(n as u64);
        let (d, lam, mu) = stokes_setup(&mut s, n, &ctx)?;
        let unit = scaled_unit(&d, &ctx);
        let mut minor = Worst::new();
        let mut block = Worst::new();
        for k in 0..POINTS {
            let (z, sq) = retry("transport point", || {
                let z = s.branched(0.7 * unit, 0.9 * unit)?;
                let sq = sq_closed(&d, lam, mu, &z, &ctx)?;
                Ok((z, sq))
            })?;
            let at = || json!({"draw": k, "z": complex_value(z.to_complex())});
            let transported = transport_matrix(&d, &sq);
            // the minor-weighted double sum never sees the frame, so the
            // agreement cross-checks the conjugation route
            let full = full_stokes_closed(&d.spec, lam, mu, &z, &ctx)?;
            let scale = full.entries.max_abs();
            minor.update(
                rel(transported.entries.max_abs_diff(&full.entries), scale),
                at,
            );
            block.update(transported.stokes_block_deviation(), at);
        }
        minor.push(&mut rep, &format!("transport-vs-minor-n{n}"), 1e-6);
        block.push(&mut rep, &format!("transported-block-n{n}"), 1e-8);

        // transported origin solution solves the untransformed system
        let f0 = f0_handle(&d, &ctx)?;
        let mut original = Worst::new();
        let (zc, r) = retry("transported residual point", || {
            let z = s.branched(0.3 * unit, 0.8 * unit)?;
            let mut worst_here = 0.0f64;
            for j in 0..n {
                let col = |p: &BranchedPoint| {
                    let v = f0.evaluate(p, &ctx)?;
                    let t = transport_solution_value(&d, &f0, &v);
                    Ok((0..n).map(|i| t.at(i, j)).collect())
                };
                worst_here = worst_here.max(column_residual(&d.spec.a, &col, &z, &ctx)?);
            }
            Ok((z.to_complex(), worst_here))
        })?;
        original.update(r, || json!({"z": complex_value(zc)}));
        original.push(&mut rep, &format!("original-solution-residual-n{n}"), 1e-8);
    }
    Ok(rep)
}

// --- Gamma-function limits of the objects -----------------------------

fn suite_classical(cfg: &VerifyConfig) -> Result<Report> {
    let ctx = QContext::new(cfg.q)?;
    let mut rep = Report::new(
        "verify classical",
        base_inputs("classical", cfg, json!({})),
        cfg.seed,
    );
    let mut root = Sampler::new(cfg.seed);

    // complex distance from the nearest integer; exponent differences close
    // to an integer inflate the gamma-ratio coefficients of the balanced
    // sums and wash out the sharp residual targets below
    let int_gap = |w: Complex64| (w.re - w.re.round()).hypot(w.im);
    let draw_spec = |s: &mut Sampler, n: usize| -> Result<ClassicalEquationSpec> {
        retry("equation data", || {
            let m = n - 1;
            let alpha: Vec<Complex64> = (0..m)
                .map(|_| c64(s.uniform(-0.7, 1.1), s.uniform(-0.7, 0.7)))
                .collect();
            let beta: Vec<Complex64> = (0..m)
                .map(|_| c64(s.uniform(-0.7, 1.3), s.uniform(-0.7, 0.7)))
                .collect();
            let spec = ClassicalEquationSpec::new(alpha, beta)?;
            let mut all = spec.alpha.clone();
            all.extend(spec.beta_full());
            for (i, &u) in all.iter().enumerate() {
                for &v in &all[i + 1..] {
                    if int_gap(u - v) < 0.3 {
                        return Err(Error::Genericity(format!(
                            "exponent gap {:.3} too close to an integer",
                            int_gap(u - v)
                        )));
                    }
                }
            }
            Ok(spec)
        })
    };

    for n in [2usize, 3] {
        let mut s = root.fork(n as u64);
        let mut conn = Worst::new();
        let mut heq = Worst::new();
        for k in 0..3 {
            let spec = draw_spec(&mut s, n)?;
            // both sectors, mirrored arguments on the big circle where
            // the subdominant terms are still resolvable
            let t = s.uniform(0.4, 2.6);
            for (sector, theta) in [(Sector::Plus, t), (Sector::Minus, -t)] {
                let z = BranchedPoint::new(20.0, theta)?;
                let r = classical_connection_check(&spec, &z, &sector, &ctx)?;
                conn.update(r, || json!({"draw": k, "argument": theta}));
            }
            // operator residual of every solution at infinity, in the
            // left half plane where no exponential cancellation occurs;
            // keep |z| moderate so the balanced sum stays well conditioned
            let z = BranchedPoint::new(s.uniform(1.5, 3.0), s.uniform(1.9, 2.6))?;
            for i in 0..n - 1 {
                let f = |w: &BranchedPoint| {
                    Ok(h_infinity(&spec, i, w, &Sector::Plus, &ctx)?
                        * branched_power(w, -spec.alpha[i])?)
                };
                let r = confluent_operator_residual(&spec, &f, &z)?;
                heq.update(r, || json!({"draw": k, "solution": i}));
            }
        }
        conn.push(&mut rep, &format!("connection-residual-n{n}"), 1e-6);
        heq.push(&mut rep, &format!("equation-residual-n{n}"), 1e-6);

        let mut s = root.fork(100 + n as u64);
        let mut stokes = Worst::new();
        for k in 0..2 {
            let sys = retry("system draw", || {
                let mut rows = Vec::with_capacity(n);
                for _ in 0..n {
                    rows.push(
                        (0..n)
                            .map(|_| c64(s.uniform(-0.6, 0.6), s.uniform(-0.6, 0.6)))
                            .collect(),
                    );
                }
                ClassicalSystemSpec::new(CMat::from_rows(rows)?)
            })?;
            let s_minus = classical_s_minus(&sys)?;
            let u_minus = classical_u(&sys, &Sector::Minus)?;
            let u_plus = classical_u(&sys, &Sector::Plus)?;
            let mut twist = CMat::zeros(n, n);
            for j in 0..n {
                twist.set(j, j, (-2.0 * PI * Complex64::i() * sys.lam_full[j]).exp());
            }
            let lhs = s_minus.mul(&u_minus);
            let rhs = u_plus.mul(&twist);
            let scale = lhs.max_abs().max(rhs.max_abs());
            stokes.update(rel(lhs.max_abs_diff(&rhs), scale), || json!({"draw": k}));
        }
        stokes.push(&mut rep, &format!("stokes-relation-n{n}"), 1e-8);
    }
    Ok(rep)
}

// --- trend of the q-objects against their limits ----------------------

fn push_trend(rep: &mut Report, prefix: &str, tr: &TrendReport) {
    for item in &tr.items {
        let name = format!("{prefix}-{}", item.name);
        let finite = item.errors.iter().all(|e| e.is_finite());
        let last = item.errors.last().copied().unwrap_or(f64::INFINITY);
        rep.push(
            format!("{name}-final"),
            float_list_value(&item.errors),
            if finite { last } else { f64::INFINITY },
            tr.final_bound,
        );
        let mut ratio = 0.0f64;
        for w in item.errors.windows(2) {
            if w[0] == 0.0 && w[1] == 0.0 {
                continue;
            }
            if w[0] == 0.0 {
                ratio = f64::INFINITY;
                break;
            }
            ratio = ratio.max(w[1] / w[0]);
        }
        rep.push(
            format!("{name}-ratio"),
            float_list_value(&item.errors),
            if finite { ratio } else { f64::INFINITY },
            tr.ratio_bound,
        );
    }
}

/// Fixed representative data for the limit trends. The windows relating
/// the direction, the argument and the branch are narrow, so these stay
/// pinned instead of seeded; every other suite draws its samples.
fn qlimit_fixtures() -> Result<(
    ClassicalEquationSpec,
    ClassicalEquationSpec,
    ClassicalSystemSpec,
    ClassicalSystemSpec,
)> {
    let spec2 = ClassicalEquationSpec::new(vec![c64(0.31, 0.40)], vec![c64(0.42, -0.30)])?;
    let spec3 = ClassicalEquationSpec::new(
        vec![c64(0.31, 0.40), c64(-0.35, -0.22)],
        vec![c64(0.42, -0.30), c64(1.37, 0.26)],
    )?;
    let sys2 = ClassicalSystemSpec::new(CMat::from_rows(vec![
        vec![c64(0.45, 0.28), c64(-0.52, 0.17)],
        vec![c64(0.33, -0.21), c64(-0.38, -0.3)],
    ])?)?;
    // Eigenvalue gaps of this matrix (full, reduced, and mixed) stay well away
    // from integers, so the exponent margins survive the whole q schedule.
    let sys3 = ClassicalSystemSpec::new(CMat::from_rows(vec![
        vec![
            c64(4.57608875220691602e-1, 5.81171598813357004e-2),
            c64(3.47100968016016087e-1, 4.28809274797503304e-1),
            c64(-3.33496320196857154e-1, 2.10946044739643845e-1),
        ],
        vec![
            c64(5.17994738965799395e-1, -5.80143792928657698e-1),
            c64(-3.93535140149726015e-1, -3.25278519912906183e-1),
            c64(3.01254546991291172e-1, 5.69147460100050240e-1),
        ],
        vec![
            c64(-2.28257432702596852e-1, 3.65004252560665265e-1),
            c64(-5.90453833742787038e-1, -4.77625826531982489e-1),
            c64(2.57576773708298234e-1, 4.41881788410690812e-1),
        ],
    ])?)?;
    Ok((spec2, spec3, sys2, sys3))
}

fn suite_qlimit(cfg: &VerifyConfig) -> Result<Report> {
    let ctx = QContext::new(cfg.q)?;
    let mut rep = Report::new(
        "verify qlimit",
        base_inputs("qlimit", cfg, json!({})),
        cfg.seed,
    );
    let (spec2, spec3, sys2, sys3) = qlimit_fixtures()?;

    let tr = basic_limits_suite(&cfg.schedule, &ctx)?;
    push_trend(&mut rep, "basic", &tr);

    let lambda = Complex64::from_polar(1.1, -0.4);
    let z = BranchedPoint::from_complex(c64(3.0, 2.0))?;
    for (tag, spec) in [("n2", &spec2), ("n3", &spec3)] {
        let tr = qlimit_connection(spec, lambda, &z, &cfg.schedule, &ctx)?;
        push_trend(&mut rep, tag, &tr);
    }

    let lam_s = Complex64::from_polar(1.05, -0.35);
    let mu_s = Complex64::from_polar(0.95, 0.8);
    let zs = BranchedPoint::new(1.7, 2.9)?;
    for (tag, sys) in [("n2", &sys2), ("n3", &sys3)] {
        let tr = qlimit_stokes(sys, lam_s, mu_s, &zs, &cfg.schedule, &ctx)?;
        push_trend(&mut rep, tag, &tr);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_and_empty_suites_are_refused() {
        let cfg = VerifyConfig::default();
        assert!(matches!(
            run_suite("", &cfg),
            Err(Error::UnknownFunction(_))
        ));
        match run_suite("no-such-suite", &cfg) {
            Err(Error::UnknownFunction(msg)) => assert!(msg.contains("thomae")),
            r => panic!("expected unknown suite error, got {r:?}"),
        }
    }

    #[test]
    fn reports_are_deterministic_up_to_wall_time() {
        let cfg = VerifyConfig::default();
        let mut a = run_suite("thomae", &cfg).unwrap();
        let mut b = run_suite("thomae", &cfg).unwrap();
        a.wall_time_ms = 0.0;
        b.wall_time_ms = 0.0;
        assert_eq!(a.render(), b.render());
        let mut c = run_suite("thomae", &VerifyConfig { seed: 8, ..cfg }).unwrap();
        c.wall_time_ms = 0.0;
        assert_ne!(a.render(), c.render());
        assert!(a.pass);
    }

    #[test]
    fn bad_schedules_are_refused() {
        let cfg = VerifyConfig {
            schedule: vec![0.9, 0.5],
            ..VerifyConfig::default()
        };
        assert!(matches!(run_suite("qlimit", &cfg), Err(Error::Domain(_))));
    }
}
