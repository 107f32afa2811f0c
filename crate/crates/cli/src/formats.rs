//! On-disk formats: MMRX dense matrices, MMRF factored matrices, 8-bit PGM
//! images, CSV numbers and minimal SVG line plots.
//!
//! MMRX layout (all little-endian): magic `MMRX`, `u16` version (1), `u8`
//! dtype (1 = f32, 2 = f64), `u64` rows, `u64` cols, then the entries row
//! by row. The header is 23 bytes.
//!
//! MMRF layout: magic `MMRF`, `u16` version (1), `u8` dtype, `u64` rows,
//! `u64` cols, `u64` number of distinct right factors R, `u64` number of
//! terms K; then R right factors of `cols` entries each; then per term a
//! `u64` right-factor index, the scale, and `rows` left entries.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use mismatch_core::{FactoredRecvMatrix, Image, MismatchTerm, Precision, Real};
use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, CliResult};

pub const MMRX_MAGIC: &[u8; 4] = b"MMRX";
pub const MMRF_MAGIC: &[u8; 4] = b"MMRF";
pub const FORMAT_VERSION: u16 = 1;
pub const MMRX_HEADER_LEN: usize = 23;

fn dtype_tag(p: Precision) -> u8 {
    match p {
        Precision::Single => 1,
        Precision::Double => 2,
    }
}

fn push_real<T: Real>(buf: &mut Vec<u8>, v: T) {
    match T::PRECISION {
        Precision::Single => buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
        Precision::Double => buf.extend_from_slice(&v.as_f64().to_le_bytes()),
    }
}

fn header(magic: &[u8; 4], p: Precision, rows: usize, cols: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(dtype_tag(p));
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(cols as u64).to_le_bytes());
    buf
}

pub fn encode_mmrx<T: Real>(m: &DMatrix<T>) -> Vec<u8> {
    let mut buf = header(MMRX_MAGIC, T::PRECISION, m.nrows(), m.ncols());
    buf.reserve(m.len() * 8);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            push_real(&mut buf, m[(r, c)]);
        }
    }
    buf
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_mmrx<T: Real>(path: &Path, m: &DMatrix<T>) -> CliResult<()> {
    write_file(path, &encode_mmrx(m))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CliError::format(self.path, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> CliResult<(u8, usize, usize)> {
        if self.take(4)? != magic {
            return Err(CliError::format(self.path, "bad magic"));
        }
        let version = u16::from_le_bytes(self.take(2)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CliError::format(self.path, format!("unsupported version {version}")));
        }
        let dtype = self.take(1)?[0];
        if dtype != 1 && dtype != 2 {
            return Err(CliError::format(self.path, format!("unknown dtype tag {dtype}")));
        }
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        Ok((dtype, rows, cols))
    }

    /// Reads one stored value and converts it to `T`.
    fn real<T: Real>(&mut self, dtype: u8) -> CliResult<T> {
        Ok(if dtype == 1 {
            T::of_f64(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
        } else {
            T::of_f64(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        })
    }

    fn finish(&self) -> CliResult<()> {
        if self.pos != self.bytes.len() {
            return Err(CliError::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn checked_len(path: &Path, bytes: &[u8], dtype: u8, count: usize, offset: usize) -> CliResult<()> {
    let width = if dtype == 1 { 4 } else { 8 };
    match count.checked_mul(width).and_then(|b| b.checked_add(offset)) {
        Some(total) if total == bytes.len() => Ok(()),
        _ => Err(CliError::format(path, "payload length does not match header")),
    }
}

/// Decodes an MMRX file, converting entries to `T`. f32 to f64 is exact.
pub fn decode_mmrx<T: Real>(path: &Path, bytes: &[u8]) -> CliResult<DMatrix<T>> {
    let mut r = Reader { bytes, pos: 0, path };
    let (dtype, rows, cols) = r.header(MMRX_MAGIC)?;
    checked_len(path, bytes, dtype, rows.saturating_mul(cols), MMRX_HEADER_LEN)?;
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = r.real(dtype)?;
        }
    }
    r.finish()?;
    Ok(m)
}

pub fn read_mmrx<T: Real>(path: &Path) -> CliResult<DMatrix<T>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_mmrx(path, &bytes)
}

pub fn encode_mmrf<T: Real>(recv: &FactoredRecvMatrix<T>) -> Vec<u8> {
    let (rows, cols) = recv.shape();
    let mut index: HashMap<*const DVector<T>, u64> = HashMap::new();
    let mut rights: Vec<&DVector<T>> = Vec::new();
    let mut term_right = Vec::with_capacity(recv.len());
    for t in recv.terms() {
        let key = Arc::as_ptr(t.right());
        let id = *index.entry(key).or_insert_with(|| {
            rights.push(t.right().as_ref());
            rights.len() as u64 - 1
        });
        term_right.push(id);
    }
    let mut buf = header(MMRF_MAGIC, T::PRECISION, rows, cols);
    buf.extend_from_slice(&(rights.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(recv.len() as u64).to_le_bytes());
    for r in &rights {
        for v in r.iter() {
            push_real(&mut buf, *v);
        }
    }
    for (t, id) in recv.terms().iter().zip(term_right) {
        buf.extend_from_slice(&id.to_le_bytes());
        push_real(&mut buf, t.scale());
        for v in t.left().iter() {
            push_real(&mut buf, *v);
        }
    }
    buf
}

pub fn decode_mmrf<T: Real>(path: &Path, bytes: &[u8]) -> CliResult<FactoredRecvMatrix<T>> {
    let mut r = Reader { bytes, pos: 0, path };
    let (dtype, rows, cols) = r.header(MMRF_MAGIC)?;
    let n_right = r.u64()? as usize;
    let n_terms = r.u64()? as usize;
    let width = if dtype == 1 { 4 } else { 8 };
    let expected = n_right
        .checked_mul(cols)
        .and_then(|a| n_terms.checked_mul(rows + 1).map(|b| (a, b)))
        .and_then(|(a, b)| a.checked_add(b))
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_add(MMRX_HEADER_LEN + 16 + 8 * n_terms));
    if expected != Some(bytes.len()) {
        return Err(CliError::format(path, "payload length does not match header"));
    }
    let mut rights = Vec::with_capacity(n_right);
    for _ in 0..n_right {
        let mut v = DVector::zeros(cols);
        for j in 0..cols {
            v[j] = r.real(dtype)?;
        }
        rights.push(Arc::new(v));
    }
    let mut terms = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        let id = r.u64()? as usize;
        let right = rights
            .get(id)
            .ok_or_else(|| CliError::format(path, format!("right-factor index {id} out of range")))?
            .clone();
        let scale = r.real(dtype)?;
        let mut left = DVector::zeros(rows);
        for i in 0..rows {
            left[i] = r.real(dtype)?;
        }
        terms.push(MismatchTerm::new(scale, left, right));
    }
    r.finish()?;
    Ok(FactoredRecvMatrix::from_terms(rows, cols, terms))
}

pub fn write_mmrf<T: Real>(path: &Path, recv: &FactoredRecvMatrix<T>) -> CliResult<()> {
    write_file(path, &encode_mmrf(recv))
}

pub fn read_mmrf<T: Real>(path: &Path) -> CliResult<FactoredRecvMatrix<T>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_mmrf(path, &bytes)
}

/// Binary PGM with pixel values `round_half_even(clamp(v, 0, 1) · 255)`.
pub fn encode_pgm<T: Real>(img: &Image<T>) -> Vec<u8> {
    let mut buf = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    buf.extend(img.pixels().iter().map(|v| {
        let s = v.as_f64().clamp(0.0, 1.0) * 255.0;
        s.round_ties_even() as u8
    }));
    buf
}

pub fn write_pgm<T: Real>(path: &Path, img: &Image<T>) -> CliResult<()> {
    write_file(path, &encode_pgm(img))
}

/// Parses binary PGM (P5, maxval ≤ 255), scaling pixels to [0, 1].
pub fn decode_pgm<T: Real>(path: &Path, bytes: &[u8]) -> CliResult<Image<T>> {
    let bad = |m: &str| CliError::format(path, m.to_string());
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("only binary P5 PGM is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    pos += 1; // single whitespace after maxval
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != w * h {
        return Err(bad("pixel count does not match header"));
    }
    let px = DVector::from_iterator(w * h, data.iter().map(|b| T::of_f64(*b as f64 / maxval as f64)));
    Ok(Image::new(w, h, px)?)
}

pub fn read_pgm<T: Real>(path: &Path) -> CliResult<Image<T>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_pgm(path, &bytes)
}

/// Round-trip representation: 17 significant digits for double runs, 9 for
/// single runs.
pub fn fmt_real(v: f64, p: Precision) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    match p {
        Precision::Double => format!("{v:.16e}"),
        Precision::Single => format!("{:.8e}", v as f32),
    }
}

/// CSV document built in memory and written in one go.
pub struct Csv {
    text: String,
    precision: Precision,
}

pub enum Cell<'a> {
    Num(f64),
    Int(u64),
    Text(&'a str),
    Bool(bool),
}

impl Csv {
    pub fn new(precision: Precision, header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push_str("\r\n");
        Csv { text, precision }
    }

    pub fn row(&mut self, cells: &[Cell<'_>]) {
        let mut first = true;
        for c in cells {
            if !first {
                self.text.push(',');
            }
            first = false;
            match c {
                Cell::Num(v) => self.text.push_str(&fmt_real(*v, self.precision)),
                Cell::Int(v) => write!(self.text, "{v}").unwrap(),
                Cell::Bool(v) => self.text.push_str(if *v { "true" } else { "false" }),
                Cell::Text(s) => {
                    if s.contains([',', '"', '\r', '\n']) {
                        write!(self.text, "\"{}\"", s.replace('"', "\"\"")).unwrap();
                    } else {
                        self.text.push_str(s);
                    }
                }
            }
        }
        self.text.push_str("\r\n");
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_file(path, self.text.as_bytes())
    }
}

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Line plot with axes and a legend. `log_y` plots `log10(y)`; points
/// with non-positive or non-finite y are then skipped.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>], log_y: bool) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    const COLORS: [&str; 8] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
    ];
    let tr = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
                .map(|&(x, y)| (x, tr(y)))
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#, W / 2.0, escape(title)).unwrap();
    writeln!(s, r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - B, W - R, H - B).unwrap();
    writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B).unwrap();
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let ylab = if log_y { format!("1e{yv:.1}") } else { format!("{yv:.3}") };
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{xv:.3}</text>"#, px(xv), H - B + 16.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{ylab}</text>"#, L - 6.0, py(yv) + 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#, (L + W - R) / 2.0, H - 12.0, escape(x_label)).unwrap();
    let ytitle = if log_y { format!("log10 {y_label}") } else { y_label.to_string() };
    writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#, (T + H - B) / 2.0, (T + H - B) / 2.0, escape(&ytitle)).unwrap();
    for (i, (ser, p)) in series.iter().zip(&pts).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" ")).unwrap();
        let ly = T + 14.0 * i as f64 + 6.0;
        writeln!(s, r#"<text x="{}" y="{ly:.1}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#, W - R - 110.0, escape(ser.label)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
