//! "GHM v1" text format and 16-bit PGM export.
//!
//! ```text
//! GHM 1 <rows> <cols> <cell_size_cm> <h0_cm>
//! <cols heights in cm> x rows
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{HeightMap, MAX_HEIGHT};
use crate::error::{Error, Result};

const M_TO_CM: f64 = 100.0;

/// A parsed GHM file: the map and the nominal bed height it was written with.
#[derive(Debug, Clone, PartialEq)]
pub struct Ghm {
    pub map: HeightMap,
    pub h0: f64,
}

pub fn write_ghm(map: &HeightMap, h0: f64) -> String {
    let mut out = String::with_capacity(map.len() * 10 + 64);
    let _ = writeln!(
        out,
        "GHM 1 {} {} {} {}",
        map.rows(),
        map.cols(),
        map.cell_size() * M_TO_CM,
        h0 * M_TO_CM
    );
    for r in 0..map.rows() {
        let row: Vec<String> = (0..map.cols())
            .map(|c| format!("{:.6}", map.get(r, c) * M_TO_CM))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_ghm_file(path: &Path, map: &HeightMap, h0: f64) -> Result<()> {
    std::fs::write(path, write_ghm(map, h0)).map_err(|e| Error::io(path, e))
}

/// Parses a complete GHM document. Trailing blank and `#` lines are allowed.
pub fn parse_ghm(text: &str) -> Result<Ghm> {
    let lines: Vec<&str> = text.lines().collect();
    let (ghm, next) = parse_ghm_body(&lines, 0)?;
    for (i, line) in lines.iter().enumerate().skip(next) {
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            return Err(Error::Parse {
                line: i + 1,
                msg: "unexpected content after height rows".into(),
            });
        }
    }
    Ok(ghm)
}

pub fn read_ghm(path: &Path) -> Result<Ghm> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ghm(&text).map_err(|e| e.in_file(path))
}

/// Parses the header and height rows starting at `lines[start]`, returning
/// the map and the index of the first unconsumed line. Line numbers in
/// errors are 1-based positions within `lines`.
pub fn parse_ghm_body(lines: &[&str], start: usize) -> Result<(Ghm, usize)> {
    let parse_err = |line: usize, msg: String| Error::Parse { line: line + 1, msg };

    let header = lines
        .get(start)
        .ok_or_else(|| parse_err(start, "missing GHM header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "GHM" {
        return Err(parse_err(
            start,
            "header must be `GHM 1 <rows> <cols> <cell_size_cm> <h0_cm>`".into(),
        ));
    }
    if fields[1] != "1" {
        return Err(parse_err(start, format!("unsupported GHM version `{}`", fields[1])));
    }
    let rows: usize = fields[2]
        .parse()
        .map_err(|_| parse_err(start, format!("invalid row count `{}`", fields[2])))?;
    let cols: usize = fields[3]
        .parse()
        .map_err(|_| parse_err(start, format!("invalid column count `{}`", fields[3])))?;
    let cell_cm: f64 = fields[4]
        .parse()
        .map_err(|_| parse_err(start, format!("invalid cell size `{}`", fields[4])))?;
    let h0_cm: f64 = fields[5]
        .parse()
        .map_err(|_| parse_err(start, format!("invalid h0 `{}`", fields[5])))?;
    if rows == 0 || cols == 0 {
        return Err(parse_err(start, "rows and cols must be at least 1".into()));
    }
    if !(cell_cm > 0.0 && cell_cm.is_finite()) {
        return Err(parse_err(start, "cell size must be positive".into()));
    }
    let max_cm = MAX_HEIGHT * M_TO_CM;
    if !(0.0..=max_cm).contains(&h0_cm) {
        return Err(parse_err(start, format!("h0 {h0_cm} cm outside [0, {max_cm}]")));
    }

    let mut heights = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ln = start + 1 + r;
        let line = lines
            .get(ln)
            .ok_or_else(|| parse_err(ln, format!("expected {rows} height rows, found {r}")))?;
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != cols {
            return Err(parse_err(
                ln,
                format!("expected {cols} heights, found {}", values.len()),
            ));
        }
        for v in values {
            let cm: f64 = v
                .parse()
                .map_err(|_| parse_err(ln, format!("invalid height `{v}`")))?;
            if !(0.0..=max_cm).contains(&cm) {
                return Err(parse_err(ln, format!("height {cm} cm outside [0, {max_cm}]")));
            }
            heights.push(cm / M_TO_CM);
        }
    }
    let map = HeightMap::from_vec(rows, cols, cell_cm / M_TO_CM, heights)
        .map_err(|e| parse_err(start, e.to_string()))?;
    Ok((
        Ghm {
            map,
            h0: h0_cm / M_TO_CM,
        },
        start + 1 + rows,
    ))
}

/// Binary 16-bit PGM, `0..=65535` mapped linearly onto `0..=20` cm.
pub fn write_pgm16(map: &HeightMap) -> Vec<u8> {
    let samples: Vec<u16> = map
        .heights()
        .iter()
        .map(|h| ((h / MAX_HEIGHT).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    pgm16(map.cols(), map.rows(), &samples)
}

pub(crate) fn pgm16(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(samples.len() * 2);
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}
