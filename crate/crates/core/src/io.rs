//! File helpers: text, JSON, CSV grids and 8-bit PGM images.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    fs::write(path, bytes).map_err(io_err)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable report");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, to_json(value).as_bytes())
}

/// Row-major `rows × cols` grid as comma-separated lines.
pub fn grid_to_csv(values: &[f64], cols: usize) -> String {
    let mut out = String::new();
    for row in values.chunks(cols) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses a numeric CSV grid, returning `(values, rows, cols)`.
pub fn grid_from_csv(text: &str, origin: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if *cols.get_or_insert(fields.len()) != fields.len() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                column: 1,
                message: format!("expected {} columns, found {}", cols.unwrap(), fields.len()),
            });
        }
        for (j, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                column: j + 1,
                message: format!("`{}` is not a number", f.trim()),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse {
        path: origin.to_path_buf(),
        line: 1,
        column: 1,
        message: "empty grid".into(),
    })?;
    Ok((values, rows, cols))
}

/// Binary (P5) 8-bit greyscale image; values are clamped to `[0, 1]`.
pub fn grid_to_pgm(values: &[f64], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Reads a P5 image back into `[0, 1]` intensities.
pub fn grid_from_pgm(bytes: &[u8], origin: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let bad = |message: &str| Error::Parse {
        path: origin.to_path_buf(),
        line: 1,
        column: 1,
        message: message.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad PGM header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM dimension"));
    let (cols, rows, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max == 0 || max > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() < rows * cols {
        return Err(bad("truncated PGM data"));
    }
    Ok((
        data[..rows * cols].iter().map(|&b| b as f64 / max as f64).collect(),
        rows,
        cols,
    ))
}
