use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReportRow;
use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "case,frame,P,V,t,rmse_pct,iou_pct";

/// CSV text of `rows`. Floats use the shortest representation that parses
/// back to the same value.
pub fn emit_report(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.case_id, r.frame, r.power, r.velocity, r.time, r.rmse_pct, r.iou_pct
        ));
    }
    out
}

pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    fs::write(path, emit_report(rows)).map_err(|e| Error::io(path, e))
}

pub fn parse_report(path: &Path, text: &str) -> Result<Vec<ReportRow>> {
    let malformed = |detail: String| Error::Malformed {
        path: path.into(),
        what: "report",
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(malformed("missing or unexpected header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(malformed(format!("line {}: expected 7 fields", i + 2)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| malformed(format!("line {}: {e}", i + 2)));
            Ok(ReportRow {
                case_id: f[0].to_string(),
                frame: f[1].parse().map_err(|e| malformed(format!("line {}: {e}", i + 2)))?,
                power: num(f[2])?,
                velocity: num(f[3])?,
                time: num(f[4])?,
                rmse_pct: num(f[5])?,
                iou_pct: num(f[6])?,
            })
        })
        .collect()
}

/// Axis held fixed by a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => Err(format!("unknown axis {s:?} (expected x, y or z)")),
        }
    }
}

/// Binary PGM of one slice of a normalized `[X, Y, Z]` field.
///
/// Fixing z gives rows = y, columns = x; fixing y gives rows = z,
/// columns = x; fixing x gives rows = z, columns = y.
pub fn slice_image(field: &[f64], dims: [usize; 3], axis: Axis, index: usize) -> Result<Vec<u8>> {
    let [nx, ny, nz] = dims;
    if field.len() != nx * ny * nz {
        return Err(Error::dim("slice_image", "voxel count", nx * ny * nz, field.len()));
    }
    let limit = match axis {
        Axis::X => nx,
        Axis::Y => ny,
        Axis::Z => nz,
    };
    if index >= limit {
        return Err(Error::Config(format!("slice index {index} out of bounds for {axis:?} extent {limit}")));
    }
    let at = |x: usize, y: usize, z: usize| field[(x * ny + y) * nz + z];
    let (w, h) = match axis {
        Axis::Z => (nx, ny),
        Axis::Y => (nx, nz),
        Axis::X => (ny, nz),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for row in 0..h {
        for col in 0..w {
            let v = match axis {
                Axis::Z => at(col, row, index),
                Axis::Y => at(col, index, row),
                Axis::X => at(index, col, row),
            };
            out.push((255.0 * v.clamp(0.0, 1.0)).round() as u8);
        }
    }
    Ok(out)
}

pub fn emit_slice_image(field: &[f64], dims: [usize; 3], axis: Axis, index: usize, path: &Path) -> Result<()> {
    let bytes = slice_image(field, dims, axis, index)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
