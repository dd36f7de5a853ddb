//! Stable JSON output: sorted keys and floats rounded to six significant
//! digits, so artifacts from identical runs are byte-identical.

use std::path::Path;

use serde_json::Value;

use crate::data::{write_text, DataError};

/// Rounds to six significant digits. Non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Rounds every float in a JSON tree in place.
pub fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round_sig(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with a trailing newline. `serde_json::Map` keeps keys sorted.
pub fn to_stable_string(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

pub fn write_json(path: &Path, v: &Value) -> Result<(), DataError> {
    let mut v = v.clone();
    round_floats(&mut v);
    write_text(path, &to_stable_string(&v))
}
