//! Fixed-precision formatting and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serializer;
use serde_json::value::RawValue;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn json_number(x: f64) -> String {
    if x.is_finite() {
        fmt_f64(x)
    } else {
        "null".to_string()
    }
}

pub fn ser_f64<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(json_number(*x)).map_err(serde::ser::Error::custom)?;
    s.serialize_some(&raw)
}

pub fn ser_opt_f64<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => ser_f64(v, s),
        None => s.serialize_none(),
    }
}

pub fn ser_pair<S: Serializer>(x: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(format!("[{},{}]", json_number(x.0), json_number(x.1))).map_err(serde::ser::Error::custom)?;
    s.serialize_some(&raw)
}

#[allow(clippy::ptr_arg)]
pub fn ser_rows<S: Serializer>(rows: &Vec<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
    let body = rows
        .iter()
        .map(|r| format!("[{}]", r.iter().map(|&x| json_number(x)).collect::<Vec<_>>().join(",")))
        .collect::<Vec<_>>()
        .join(",");
    let raw = RawValue::from_string(format!("[{body}]")).map_err(serde::ser::Error::custom)?;
    s.serialize_some(&raw)
}

/// Writes `contents` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
