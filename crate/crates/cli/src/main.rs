//! Command line front end: pointwise evaluation of registry functions,
//! named verification suites, and report merging.
//!
//! Exit codes: 0 when every check passes, 1 when a verification fails,
//! 2 when a guard or domain error stops the evaluation, 64 for usage
//! mistakes (unknown names, unreadable inputs, bad flags).

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use qsf_core::report::{complex_value, parse_complex, parse_complex_list, Report};
use qsf_core::verify::{run_suite, VerifyConfig};
use qsf_core::{Error, QContext};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "qsf", version, about = "Verification-grade q-special function toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate a registry function at a list of points.
    Eval {
        /// Function name: theta, q_gamma, q_exponential, log_q, basic_phi, nf.
        function: String,
        #[arg(long)]
        q: f64,
        /// Working tolerance handed to the series and product truncations.
        #[arg(long, default_value_t = 1e-13)]
        tol: f64,
        /// JSON file with function parameters, e.g. {"upper": [[2.0,0.0]], "lower": []}.
        #[arg(long)]
        params: Option<PathBuf>,
        /// JSON file with an array of [re, im] evaluation points.
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named verification suite.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 0.5)]
        q: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// q -> 1 schedule for the limit suites.
        #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.99, 0.999])]
        schedule: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge previously written reports into one.
    Merge {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap's own exit codes do not match the report contract
            let _ = e.print();
            return ExitCode::from(64);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_for(&err))
        }
    }
}

fn exit_for(err: &Error) -> u8 {
    if err.is_domain_class() || matches!(err, Error::NonFinite(_)) {
        2
    } else {
        64
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.cmd {
        Cmd::Eval {
            function,
            q,
            tol,
            params,
            points,
            out,
        } => {
            let report = cmd_eval(&function, q, tol, params.as_deref(), &points)?;
            emit(&report, out.as_deref())?;
            // an eval has no tolerance failures of its own: a failed
            // record means a point hit a guard
            if report.pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
        Cmd::Verify {
            suite,
            q,
            seed,
            schedule,
            out,
        } => {
            let cfg = VerifyConfig { q, seed, schedule };
            let report = run_suite(&suite, &cfg)?;
            emit(&report, out.as_deref())?;
            if report.pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Cmd::Merge { files, out } => {
            let started = Instant::now();
            let mut parts = Vec::with_capacity(files.len());
            for path in &files {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                parts.push(Report::parse(&text)?);
            }
            let mut merged = Report::merge(&parts)?;
            merged.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
            emit(&merged, out.as_deref())?;
            if merged.pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn emit(report: &Report, out: Option<&Path>) -> Result<(), Error> {
    let text = report.render();
    if let Some(path) = out {
        std::fs::write(path, &text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    print!("{text}");
    Ok(())
}

fn read_json(path: &Path) -> Result<Value, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn require_params<'a>(params: &'a Option<Value>, function: &str) -> Result<&'a Value, Error> {
    params
        .as_ref()
        .ok_or_else(|| Error::Parse(format!("function {function} needs --params")))
}

fn param_list(params: &Value, key: &str) -> Result<Vec<Complex64>, Error> {
    let v = params
        .get(key)
        .ok_or_else(|| Error::Parse(format!("params are missing the {key} list")))?;
    parse_complex_list(v)
}

fn cmd_eval(
    function: &str,
    q: f64,
    tol: f64,
    params_path: Option<&Path>,
    points_path: &Path,
) -> Result<Report, Error> {
    let started = Instant::now();
    let ctx = QContext::with_tol(q, tol)?;
    let params = params_path.map(read_json).transpose()?;
    let points = parse_complex_list(&read_json(points_path)?)?;

    // every arm borrows the same shape: one closure from a point to a value
    let eval: Box<dyn Fn(Complex64) -> Result<Complex64, Error>> = match function {
        "theta" => Box::new(move |z| qsf_core::qcore::theta(z, &ctx)),
        "q_gamma" => Box::new(move |z| qsf_core::qcore::q_gamma(z, &ctx)),
        "q_exponential" => Box::new(move |z| qsf_core::qcore::q_exponential(z, &ctx)),
        "log_q" => Box::new(move |z| qsf_core::qcore::log_q(z, &ctx)),
        "basic_phi" => {
            let p = require_params(&params, function)?;
            let upper = param_list(p, "upper")?;
            let lower = param_list(p, "lower")?;
            Box::new(move |z| {
                let hp = qsf_core::qseries::HypergeometricParams::basic(
                    upper.clone(),
                    lower.clone(),
                    &ctx,
                )?;
                qsf_core::qseries::basic_phi(&hp, z, &ctx)
            })
        }
        "nf" => {
            let p = require_params(&params, function)?;
            let upper = param_list(p, "upper")?;
            let lower = param_list(p, "lower")?;
            let lambda = parse_complex(p.get("lambda").ok_or_else(|| {
                Error::Parse("params are missing the lambda direction".into())
            })?)?;
            Box::new(move |z| qsf_core::resummation::nf(&upper, &lower, lambda, z, &ctx))
        }
        _ => {
            return Err(Error::UnknownFunction(format!(
                "no registry function named {function}; known: theta, q_gamma, \
                 q_exponential, log_q, basic_phi, nf"
            )))
        }
    };

    let inputs = json!({
        "function": function,
        "q": q,
        "tol": tol,
        "params": params.clone().unwrap_or(Value::Null),
        "points": points.iter().map(|&z| complex_value(z)).collect::<Vec<_>>(),
    });
    let mut report = Report::new(format!("eval {function}"), inputs, 0);
    for (k, &z) in points.iter().enumerate() {
        let name = format!("point-{k}");
        match eval(z) {
            Ok(v) => report.push(name, complex_value(v), 0.0, tol),
            Err(e) if e.is_domain_class() || matches!(e, Error::NonFinite(_)) => {
                report.push_error(name, tol, e.to_string())
            }
            Err(e) => return Err(e),
        }
    }
    report.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}
