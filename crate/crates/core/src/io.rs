//! Small file writers shared by the solvers and the CLI.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Two-column CSV with full round-trip precision.
pub fn write_xy_csv(path: &Path, header: (&str, &str), xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { expected: xs.len(), actual: ys.len() });
    }
    let mut s = String::with_capacity(32 * xs.len());
    let _ = writeln!(s, "{},{}", header.0, header.1);
    for (x, y) in xs.iter().zip(ys) {
        let _ = writeln!(s, "{x:?},{y:?}");
    }
    write_file(path, s.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// File-name friendly rendering of a snapshot time.
pub fn time_tag(t: f64) -> String {
    format!("{t:?}").replace('-', "m")
}
