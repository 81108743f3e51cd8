//! Reading and writing the files the subcommands exchange.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use drillguide::recording::Recording;
use serde::Serialize;

pub fn read_recording(path: &Path) -> Result<Recording> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Recording::read_jsonl(BufReader::new(f)).with_context(|| format!("reading recording {}", path.display()))
}

pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    rec.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?).with_context(|| format!("writing {}", path.display()))
}

/// A point given as `x,y,z` (metres) or as a calibration file, whose
/// `point_body` is used.
pub fn point_arg(arg: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = arg.split(',').collect();
    if parts.len() == 3 {
        if let Ok(v) = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>() {
            return Ok([v[0], v[1], v[2]]);
        }
    }
    let text = std::fs::read_to_string(arg).with_context(|| format!("{arg:?} is neither x,y,z nor a readable calibration file"))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {arg}"))?;
    let p = value.get("point_body").with_context(|| format!("{arg} has no point_body"))?;
    let p: [f64; 3] = serde_json::from_value(p.clone()).with_context(|| format!("{arg}: point_body is not [x, y, z]"))?;
    if p.iter().any(|c| !c.is_finite()) {
        bail!("{arg}: point is not finite");
    }
    Ok(p)
}
