//! Check reports for the command layer: a fixed JSON schema, a fully
//! deterministic serializer, and merging.
//!
//! Serialization never goes through the default float formatter: every
//! f64 prints with 17 significant digits in scientific notation, object
//! keys come out sorted, and arrays keep their order. Two runs with the
//! same inputs and seed therefore produce byte-identical files except
//! for the wall time field.

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::qcore::BranchedPoint;
use num_complex::Complex64;
use serde_json::{json, Map, Value};

/// Bumped on any change to the field layout below.
pub const SCHEMA: &str = "qsf-report/1";

/// One named check. `pass` is always `residual <= tolerance` with a
/// finite residual; failed evaluations store an infinite residual and
/// the error text in `note`.
#[derive(Debug, Clone)]
pub struct CheckRecord {
    pub name: String,
    pub value: Value,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub inputs: Value,
    pub seed: u64,
    pub records: Vec<CheckRecord>,
    pub pass: bool,
    pub wall_time_ms: f64,
    pub version: String,
}

impl Report {
    pub fn new(command: impl Into<String>, inputs: Value, seed: u64) -> Self {
        Report {
            command: command.into(),
            inputs,
            seed,
            records: Vec::new(),
            pass: true,
            wall_time_ms: 0.0,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Appends a check; the record passes iff the residual is finite and
    /// within tolerance, and the report pass flag follows every record.
    pub fn push(&mut self, name: impl Into<String>, value: Value, residual: f64, tolerance: f64) {
        let pass = residual.is_finite() && residual <= tolerance;
        self.pass &= pass;
        self.records.push(CheckRecord {
            name: name.into(),
            value,
            residual,
            tolerance,
            pass,
            note: None,
        });
    }

    /// Appends a failed check carrying an error message instead of a value.
    pub fn push_error(&mut self, name: impl Into<String>, tolerance: f64, note: impl Into<String>) {
        self.pass = false;
        self.records.push(CheckRecord {
            name: name.into(),
            value: Value::Null,
            residual: f64::INFINITY,
            tolerance,
            pass: false,
            note: Some(note.into()),
        });
    }

    pub fn to_json(&self) -> Value {
        let records: Vec<Value> = self
            .records
            .iter()
            .map(|r| {
                let mut m = Map::new();
                m.insert("name".into(), Value::String(r.name.clone()));
                m.insert("value".into(), r.value.clone());
                m.insert("residual".into(), num(r.residual));
                m.insert("tolerance".into(), num(r.tolerance));
                m.insert("pass".into(), Value::Bool(r.pass));
                if let Some(n) = &r.note {
                    m.insert("note".into(), Value::String(n.clone()));
                }
                Value::Object(m)
            })
            .collect();
        json!({
            "schema": SCHEMA,
            "command": self.command,
            "inputs": self.inputs,
            "seed": self.seed,
            "records": records,
            "pass": self.pass,
            "wall_time_ms": num(self.wall_time_ms),
            "version": self.version,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let schema = get_str(v, "schema")?;
        if schema != SCHEMA {
            return Err(Error::SchemaMismatch(format!(
                "expected schema {SCHEMA}, found {schema}"
            )));
        }
        let mut records = Vec::new();
        for r in get_array(v, "records")? {
            records.push(CheckRecord {
                name: get_str(r, "name")?.to_string(),
                value: r.get("value").cloned().unwrap_or(Value::Null),
                residual: get_f64(r, "residual")?,
                tolerance: get_f64(r, "tolerance")?,
                pass: get_bool(r, "pass")?,
                note: r.get("note").and_then(Value::as_str).map(String::from),
            });
        }
        // recomputed rather than read back: merging must reflect records
        let pass = records.iter().all(|r| r.pass);
        Ok(Report {
            command: get_str(v, "command")?.to_string(),
            inputs: v.get("inputs").cloned().unwrap_or(Value::Null),
            seed: get_u64(v, "seed")?,
            records,
            pass,
            wall_time_ms: get_f64(v, "wall_time_ms")?,
            version: get_str(v, "version")?.to_string(),
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        write_value(&self.to_json(), 0, &mut out);
        out.push('\n');
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let v: Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("invalid JSON: {e}")))?;
        Self::from_json(&v)
    }

    /// Concatenates the records of several reports under one roof. All
    /// reports must carry the current schema already (enforced on parse);
    /// mixed library versions are refused since tolerances may differ.
    pub fn merge(parts: &[Report]) -> Result<Report> {
        if parts.is_empty() {
            return Err(Error::Parse("nothing to merge".into()));
        }
        let version = &parts[0].version;
        for p in parts {
            if &p.version != version {
                return Err(Error::SchemaMismatch(format!(
                    "cannot merge reports from versions {version} and {}",
                    p.version
                )));
            }
        }
        let sources: Vec<Value> = parts
            .iter()
            .map(|p| json!({"command": p.command, "seed": p.seed, "records": p.records.len()}))
            .collect();
        let mut out = Report::new("merge", json!({ "sources": sources }), parts[0].seed);
        for p in parts {
            for r in &p.records {
                out.pass &= r.pass;
                out.records.push(r.clone());
            }
        }
        Ok(out)
    }
}

/// f64 to JSON number; non-finite values clamp to the largest float so
/// the file stays valid JSON (the pass flag is decided before this).
pub fn num(x: f64) -> Value {
    let c = clamp_finite(x);
    Value::Number(serde_json::Number::from_f64(c).expect("clamped float is finite"))
}

fn clamp_finite(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else if x < 0.0 {
        f64::MIN
    } else {
        f64::MAX
    }
}

pub fn complex_value(z: Complex64) -> Value {
    Value::Array(vec![num(z.re), num(z.im)])
}

pub fn branched_value(p: &BranchedPoint) -> Value {
    json!({"modulus": num(p.modulus()), "argument": num(p.argument())})
}

/// Row-major nested array of [re, im] pairs.
pub fn matrix_value(m: &CMat) -> Value {
    let rows: Vec<Value> = (0..m.rows())
        .map(|i| Value::Array((0..m.cols()).map(|j| complex_value(m.at(i, j))).collect()))
        .collect();
    Value::Array(rows)
}

pub fn complex_list_value(zs: &[Complex64]) -> Value {
    Value::Array(zs.iter().map(|&z| complex_value(z)).collect())
}

pub fn float_list_value(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

pub fn parse_complex(v: &Value) -> Result<Complex64> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| Error::Parse(format!("expected a [re, im] pair, found {v}")))?;
    let re = arr[0]
        .as_f64()
        .ok_or_else(|| Error::Parse("non-numeric real part".into()))?;
    let im = arr[1]
        .as_f64()
        .ok_or_else(|| Error::Parse("non-numeric imaginary part".into()))?;
    Ok(Complex64::new(re, im))
}

pub fn parse_complex_list(v: &Value) -> Result<Vec<Complex64>> {
    v.as_array()
        .ok_or_else(|| Error::Parse(format!("expected an array of [re, im] pairs, found {v}")))?
        .iter()
        .map(parse_complex)
        .collect()
}

fn get_str<'a>(v: &'a Value, key: &str) -> Result<&'a str> {
    v.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Parse(format!("missing string field {key}")))
}

fn get_f64(v: &Value, key: &str) -> Result<f64> {
    v.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Parse(format!("missing numeric field {key}")))
}

fn get_u64(v: &Value, key: &str) -> Result<u64> {
    v.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Parse(format!("missing integer field {key}")))
}

fn get_bool(v: &Value, key: &str) -> Result<bool> {
    v.get(key)
        .and_then(Value::as_bool)
        .ok_or_else(|| Error::Parse(format!("missing boolean field {key}")))
}

fn get_array<'a>(v: &'a Value, key: &str) -> Result<&'a Vec<Value>> {
    v.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse(format!("missing array field {key}")))
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            // integers keep their exact form; everything else gets the
            // 17-significant-digit treatment so parsing round-trips
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                let x = clamp_finite(n.as_f64().unwrap_or(0.0));
                out.push_str(&format!("{x:.16e}"));
            }
        }
        Value::String(s) => {
            out.push_str(&Value::String(s.clone()).to_string());
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                newline(indent + 1, out);
                write_value(item, indent + 1, out);
            }
            newline(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            // serde_json maps iterate in sorted key order by default;
            // sort again so a preserve-order build cannot change bytes
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (k, key) in keys.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                newline(indent + 1, out);
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_value(&map[*key], indent + 1, out);
            }
            newline(indent, out);
            out.push('}');
        }
    }
}

fn newline(indent: usize, out: &mut String) {
    out.push('\n');
    for _ in 0..indent {
        out.push_str("  ");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::c64;

    fn sample() -> Report {
        let mut r = Report::new("verify demo", json!({"q": 0.5, "n": 3}), 11);
        r.push("first", complex_value(c64(1.0 / 3.0, -2.5e-17)), 1e-12, 1e-8);
        r.push("second", Value::Null, 3.0, 1.0);
        r
    }

    #[test]
    fn floats_round_trip_exactly() {
        for &x in &[1.0 / 3.0, 1e-300, -7.25, 0.1 + 0.2, f64::MIN_POSITIVE] {
            let mut s = String::new();
            write_value(&num(x), 0, &mut s);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, x, "{s}");
        }
    }

    #[test]
    fn rendering_is_deterministic_and_parses_back() {
        let r = sample();
        let a = r.render();
        let b = sample().render();
        assert_eq!(a, b);
        let back = Report::parse(&a).unwrap();
        assert_eq!(back.records.len(), 2);
        assert_eq!(back.records[0].name, "first");
        assert!(back.records[0].pass);
        assert!(!back.records[1].pass);
        assert!(!back.pass);
        assert_eq!(back.seed, 11);
        assert_eq!(back.records[0].residual, 1e-12);
    }

    #[test]
    fn non_finite_residual_fails_and_stays_valid_json() {
        let mut r = Report::new("verify demo", Value::Null, 0);
        r.push("bad", Value::Null, f64::NAN, 1e-8);
        assert!(!r.pass);
        let text = r.render();
        let back = Report::parse(&text).unwrap();
        assert!(!back.records[0].pass);
        assert_eq!(back.records[0].residual, f64::MAX);
    }

    #[test]
    fn merge_combines_records_and_pass_flags() {
        let mut good = Report::new("verify a", Value::Null, 1);
        good.push("x", Value::Null, 0.0, 1.0);
        let merged = Report::merge(&[good.clone(), sample()]).unwrap();
        assert_eq!(merged.records.len(), 3);
        assert!(!merged.pass);
        let only_good = Report::merge(&[good.clone(), good.clone()]).unwrap();
        assert!(only_good.pass);
        assert!(Report::merge(&[]).is_err());
    }

    #[test]
    fn merge_rejects_mixed_versions() {
        let mut other = sample();
        other.version = "0.0.0-other".into();
        match Report::merge(&[sample(), other]) {
            Err(Error::SchemaMismatch(_)) => {}
            r => panic!("expected schema mismatch, got {r:?}"),
        }
    }

    #[test]
    fn parse_rejects_foreign_schema_and_garbage() {
        let text = sample().render().replace(SCHEMA, "qsf-report/0");
        match Report::parse(&text) {
            Err(Error::SchemaMismatch(_)) => {}
            r => panic!("expected schema mismatch, got {r:?}"),
        }
        assert!(matches!(Report::parse("not json"), Err(Error::Parse(_))));
        assert!(matches!(Report::parse("{}"), Err(Error::Parse(_))));
    }

    #[test]
    fn error_records_carry_the_note() {
        let mut r = Report::new("eval theta", Value::Null, 0);
        r.push_error("point-2", 1e-10, "argument on the forbidden spiral");
        let back = Report::parse(&r.render()).unwrap();
        assert_eq!(
            back.records[0].note.as_deref(),
            Some("argument on the forbidden spiral")
        );
        assert!(!back.pass);
    }

    #[test]
    fn value_helpers_round_trip() {
        let z = c64(0.3, -0.7);
        assert_eq!(parse_complex(&complex_value(z)).unwrap(), z);
        let zs = vec![z, c64(1.0, 2.0)];
        assert_eq!(parse_complex_list(&complex_list_value(&zs)).unwrap(), zs);
        assert!(parse_complex(&json!([1.0])).is_err());
        assert!(parse_complex(&json!("zzz")).is_err());
        let m = CMat::from_rows(vec![vec![z, z], vec![z, z]]).unwrap();
        let mv = matrix_value(&m);
        assert_eq!(mv.as_array().unwrap().len(), 2);
    }
}
