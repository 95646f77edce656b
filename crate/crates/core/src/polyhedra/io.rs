//! Plain-text H-rep / V-rep files.
//!
//! ```text
//! H <m> <d>          V <d> <n_pointed> <n_lin>      M <rows> <cols>
//! a_11 ... a_1d      <n_pointed ray lines>          <rows lines>
//! ...                <n_lin lineality lines>
//! ```
//!
//! `M` files hold batches of points (projection inputs, decoded samples).
//!
//! Values are written with 17 significant digits so files round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::{HRep, PolyError, VRep};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn perr(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
        }
    }

    /// Next non-blank line with its 1-based number.
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        self.inner
            .by_ref()
            .map(|(i, l)| (i + 1, l.trim()))
            .find(|(_, l)| !l.is_empty())
    }

    fn header(&mut self, tag: &str, fields: usize) -> Result<Vec<usize>, ParseError> {
        let (no, line) = self.next_line().ok_or_else(|| perr(1, "missing header"))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(perr(no, format!("expected header starting with '{tag}'")));
        }
        let nums: Vec<usize> = parts
            .map(|p| p.parse::<usize>().map_err(|_| perr(no, format!("bad count '{p}'"))))
            .collect::<Result<_, _>>()?;
        if nums.len() != fields {
            return Err(perr(no, format!("header needs {fields} counts, found {}", nums.len())));
        }
        Ok(nums)
    }

    fn vector(&mut self, d: usize, what: &str) -> Result<Vec<f64>, ParseError> {
        let (no, line) = self
            .next_line()
            .ok_or_else(|| perr(0, format!("unexpected end of file while reading {what}")))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|p| p.parse::<f64>().map_err(|_| perr(no, format!("bad number '{p}'"))))
            .collect::<Result<_, _>>()?;
        if v.len() != d {
            return Err(perr(no, format!("expected {d} values, found {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(perr(no, "non-finite value"));
        }
        Ok(v)
    }

    fn expect_end(&mut self) -> Result<(), ParseError> {
        match self.next_line() {
            Some((no, _)) => Err(perr(no, "trailing content")),
            None => Ok(()),
        }
    }
}

pub fn parse_hrep(text: &str) -> Result<HRep, ParseError> {
    let mut lines = Lines::new(text);
    let h = lines.header("H", 2)?;
    let (m, d) = (h[0], h[1]);
    if d == 0 {
        return Err(perr(1, "dimension must be at least 1"));
    }
    let mut a = Vec::with_capacity(m * d);
    for i in 0..m {
        a.extend(lines.vector(d, &format!("row {}", i + 1))?);
    }
    lines.expect_end()?;
    Ok(HRep::new(m, d, a).expect("validated while parsing"))
}

pub fn parse_vrep(text: &str) -> Result<VRep, ParseError> {
    let mut lines = Lines::new(text);
    let h = lines.header("V", 3)?;
    let (d, n_pointed, n_lin) = (h[0], h[1], h[2]);
    let rays = (0..n_pointed)
        .map(|i| lines.vector(d, &format!("ray {}", i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    let lineality = (0..n_lin)
        .map(|i| lines.vector(d, &format!("lineality vector {}", i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    lines.expect_end()?;
    Ok(VRep { d, rays, lineality })
}

/// Row-major `rows x cols` matrix.
pub fn parse_matrix(text: &str) -> Result<(usize, usize, Vec<f64>), ParseError> {
    let mut lines = Lines::new(text);
    let h = lines.header("M", 2)?;
    let (rows, cols) = (h[0], h[1]);
    if cols == 0 {
        return Err(perr(1, "column count must be at least 1"));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        data.extend(lines.vector(cols, &format!("row {}", i + 1))?);
    }
    lines.expect_end()?;
    Ok((rows, cols, data))
}

pub fn format_matrix(cols: usize, data: &[f64]) -> String {
    let rows = data.len().checked_div(cols).unwrap_or(0);
    let mut out = format!("M {rows} {cols}\n");
    for row in data.chunks(cols.max(1)) {
        push_row(&mut out, row);
    }
    out
}

fn push_row(out: &mut String, row: &[f64]) {
    for (j, x) in row.iter().enumerate() {
        if j > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{x:.16e}");
    }
    out.push('\n');
}

pub fn format_hrep(h: &HRep) -> String {
    let mut out = format!("H {} {}\n", h.m(), h.d());
    for row in h.rows() {
        push_row(&mut out, row);
    }
    out
}

pub fn format_vrep(v: &VRep) -> String {
    let mut out = format!("V {} {} {}\n", v.d, v.n_pointed(), v.n_lin());
    for row in v.rays.iter().chain(&v.lineality) {
        push_row(&mut out, row);
    }
    out
}

pub fn read_hrep(path: impl AsRef<Path>) -> Result<HRep, PolyError> {
    Ok(parse_hrep(&std::fs::read_to_string(path)?)?)
}

pub fn read_vrep(path: impl AsRef<Path>) -> Result<VRep, PolyError> {
    Ok(parse_vrep(&std::fs::read_to_string(path)?)?)
}

pub fn write_hrep(path: impl AsRef<Path>, h: &HRep) -> Result<(), PolyError> {
    Ok(std::fs::write(path, format_hrep(h))?)
}

pub fn write_vrep(path: impl AsRef<Path>, v: &VRep) -> Result<(), PolyError> {
    Ok(std::fs::write(path, format_vrep(v))?)
}
