//! Fixed-precision float rendering for result files.
//!
//! Values are rounded to 9 significant digits and then printed with the
//! shortest representation that reads back as that rounded value, so output
//! bytes do not depend on the last few bits of accumulated arithmetic noise.

use serde::Serializer;

pub fn round9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Render `x` as a JSON-compatible number string (`null` for non-finite).
pub fn fmt9(x: f64) -> String {
    let r = round9(x);
    if !r.is_finite() {
        return "null".into();
    }
    // -0.0 and 0.0 render the same
    let r = if r == 0.0 { 0.0 } else { r };
    serde_json::to_string(&r).unwrap_or_else(|_| "null".into())
}

pub fn ser9<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round9(*x))
}

pub fn ser9_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_f64(round9(*v)),
        None => s.serialize_none(),
    }
}
