//! Plain-text matrix and vector files.
//!
//! ```text
//! d
//! a11 a12 ... a1d
//! ...
//! ```
//!
//! Entries are complex numbers written as `re+imj` with 17 significant
//! digits, so files round-trip `f64` values exactly. Vectors use the same
//! layout with one entry per line. A bare real number (no `j` part) is
//! accepted on input.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, C64};

pub fn format_complex(z: C64) -> String {
    format!("{:.16e}{:+.16e}j", z.re, z.im)
}

pub fn parse_complex(token: &str) -> std::result::Result<C64, String> {
    let s = token.trim();
    let Some(body) = s.strip_suffix('j').or_else(|| s.strip_suffix('i')) else {
        return s
            .parse::<f64>()
            .map(|re| C64::new(re, 0.0))
            .map_err(|e| format!("bad number {s:?}: {e}"));
    };
    // Split at the last sign that is not a leading sign or an exponent sign.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(i) => (&body[..i], &body[i..]),
        None => ("0", body),
    };
    let re: f64 = re.parse().map_err(|e| format!("bad real part in {s:?}: {e}"))?;
    let im: f64 = match im {
        "+" | "" => 1.0,
        "-" => -1.0,
        other => other
            .parse()
            .map_err(|e| format!("bad imaginary part in {s:?}: {e}"))?,
    };
    Ok(C64::new(re, im))
}

pub fn matrix_to_string(m: &CMatrix) -> String {
    let mut out = String::new();
    writeln!(out, "{}", m.nrows()).unwrap();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format_complex(m[(r, c)])).collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
    out
}

pub fn vector_to_string(v: &CVector) -> String {
    let mut out = String::new();
    writeln!(out, "{}", v.len()).unwrap();
    for z in v.iter() {
        writeln!(out, "{}", format_complex(*z)).unwrap();
    }
    out
}

pub fn write_matrix(path: &Path, m: &CMatrix) -> Result<()> {
    fs::write(path, matrix_to_string(m))?;
    Ok(())
}

pub fn write_vector(path: &Path, v: &CVector) -> Result<()> {
    fs::write(path, vector_to_string(v))?;
    Ok(())
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Nonblank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn read_dim<'a>(path: &Path, it: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<usize> {
    let (no, line) = it.next().ok_or_else(|| parse_error(path, 1, "empty file"))?;
    match line.parse::<usize>() {
        Ok(d) if d > 0 => Ok(d),
        _ => Err(parse_error(path, no, format!("expected a positive dimension, found {line:?}"))),
    }
}

pub fn parse_matrix(path: &Path, text: &str) -> Result<CMatrix> {
    let mut it = lines(text);
    let d = read_dim(path, &mut it)?;
    let mut m = CMatrix::zeros(d, d);
    for r in 0..d {
        let (no, line) = it
            .next()
            .ok_or_else(|| parse_error(path, r + 2, format!("expected {d} rows, found {r}")))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != d {
            return Err(parse_error(path, no, format!("expected {d} entries, found {}", tokens.len())));
        }
        for (c, tok) in tokens.iter().enumerate() {
            m[(r, c)] = parse_complex(tok).map_err(|e| parse_error(path, no, e))?;
        }
    }
    if let Some((no, _)) = it.next() {
        return Err(parse_error(path, no, "trailing content after matrix"));
    }
    Ok(m)
}

pub fn parse_vector(path: &Path, text: &str) -> Result<CVector> {
    let mut it = lines(text);
    let d = read_dim(path, &mut it)?;
    let mut v = CVector::zeros(d);
    for k in 0..d {
        let (no, line) = it
            .next()
            .ok_or_else(|| parse_error(path, k + 2, format!("expected {d} entries, found {k}")))?;
        v[k] = parse_complex(line).map_err(|e| parse_error(path, no, e))?;
    }
    if let Some((no, _)) = it.next() {
        return Err(parse_error(path, no, "trailing content after vector"));
    }
    Ok(v)
}

pub fn read_matrix(path: &Path) -> Result<CMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    parse_matrix(path, &text)
}

pub fn read_vector(path: &Path) -> Result<CVector> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    parse_vector(path, &text)
}
