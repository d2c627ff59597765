//! On-disk formats: annotation files (one object per line as a corner
//! quad), per-class detection submission files, per-chip detection files,
//! and a little-endian binary container for feature grids and offset
//! fields.

use std::fmt;
use std::fmt::Write as _;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::featops::{FeatureGrid, FeatopsError, OffsetField};
use crate::geometry::{Point, Quad};

/// The fifteen standard aerial-imagery categories, in their conventional
/// order.
pub const DOTA_CATEGORIES: [&str; 15] = [
    "plane",
    "baseball-diamond",
    "bridge",
    "ground-track-field",
    "small-vehicle",
    "large-vehicle",
    "ship",
    "tennis-court",
    "basketball-court",
    "storage-tank",
    "soccer-ball-field",
    "roundabout",
    "harbor",
    "swimming-pool",
    "helicopter",
];

/// Canonical category form: trimmed and lowercased.
pub fn normalize_category(name: &str) -> String {
    name.trim().to_ascii_lowercase()
}

pub fn is_known_category(name: &str) -> bool {
    let n = normalize_category(name);
    DOTA_CATEGORIES.contains(&n.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    TooFewFields { got: usize, expected: usize },
    TooManyFields { got: usize, expected: usize },
    BadNumber { token: String },
    NonFinite { token: String },
    BadDifficult { token: String },
    EmptyCategory,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::TooFewFields { got, expected } => {
                write!(f, "expected {expected} fields, found only {got}")
            }
            ParseErrorKind::TooManyFields { got, expected } => {
                write!(f, "expected {expected} fields, found {got}")
            }
            ParseErrorKind::BadNumber { token } => write!(f, "not a number: {token:?}"),
            ParseErrorKind::NonFinite { token } => {
                write!(f, "coordinate must be finite: {token:?}")
            }
            ParseErrorKind::BadDifficult { token } => {
                write!(f, "difficult flag must be 0 or 1: {token:?}")
            }
            ParseErrorKind::EmptyCategory => write!(f, "category is empty"),
        }
    }
}

/// A parse failure with its 1-based line and column (the column points at
/// the offending token, or past the end of a truncated line).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

/// Non-fatal irregularities surfaced to the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    /// A 9-field annotation line; difficult defaulted to 0.
    MissingDifficult { line: usize },
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::MissingDifficult { line } => {
                write!(f, "line {line}: missing difficult flag, assuming 0")
            }
        }
    }
}

/// One annotated object: corner quad, lowercased category, difficulty.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub quad: Quad<f64>,
    pub category: String,
    pub difficult: bool,
}

/// Tokens of one line with their 1-based starting columns.
fn tokenize(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

/// Strict finite float: rejects anything `f64::from_str` rejects plus
/// infinities and NaN.
fn parse_coord(line_no: usize, col: usize, token: &str) -> Result<f64, ParseError> {
    let v: f64 = token.parse().map_err(|_| ParseError {
        line: line_no,
        column: col,
        kind: ParseErrorKind::BadNumber {
            token: token.to_string(),
        },
    })?;
    if !v.is_finite() {
        return Err(ParseError {
            line: line_no,
            column: col,
            kind: ParseErrorKind::NonFinite {
                token: token.to_string(),
            },
        });
    }
    Ok(v)
}

fn quad_from_tokens(
    line_no: usize,
    tokens: &[(usize, &str)],
) -> Result<Quad<f64>, ParseError> {
    let mut coords = [0.0f64; 8];
    for (i, &(col, tok)) in tokens.iter().take(8).enumerate() {
        coords[i] = parse_coord(line_no, col, tok)?;
    }
    Ok(Quad::new([
        Point { x: coords[0], y: coords[1] },
        Point { x: coords[2], y: coords[3] },
        Point { x: coords[4], y: coords[5] },
        Point { x: coords[6], y: coords[7] },
    ]))
}

/// Parses an annotation file: optional `imagesource:`/`gsd:` header lines
/// and blank lines are skipped; every other line is
/// `x1 y1 x2 y2 x3 y3 x4 y4 category difficult`. A missing difficult
/// field is tolerated with a warning.
pub fn parse_dota_annotation(
    text: &str,
) -> Result<(Vec<AnnotationRecord>, Vec<ParseWarning>), ParseError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty()
            || trimmed.starts_with("imagesource:")
            || trimmed.starts_with("gsd:")
        {
            continue;
        }
        let tokens = tokenize(line);
        if tokens.len() < 9 {
            return Err(ParseError {
                line: line_no,
                column: line.len() + 1,
                kind: ParseErrorKind::TooFewFields {
                    got: tokens.len(),
                    expected: 10,
                },
            });
        }
        if tokens.len() > 10 {
            return Err(ParseError {
                line: line_no,
                column: tokens[10].0,
                kind: ParseErrorKind::TooManyFields {
                    got: tokens.len(),
                    expected: 10,
                },
            });
        }
        let quad = quad_from_tokens(line_no, &tokens)?;
        let (cat_col, cat_tok) = tokens[8];
        let category = normalize_category(cat_tok);
        if category.is_empty() {
            return Err(ParseError {
                line: line_no,
                column: cat_col,
                kind: ParseErrorKind::EmptyCategory,
            });
        }
        let difficult = if let Some(&(col, tok)) = tokens.get(9) {
            match tok {
                "0" => false,
                "1" => true,
                _ => {
                    return Err(ParseError {
                        line: line_no,
                        column: col,
                        kind: ParseErrorKind::BadDifficult {
                            token: tok.to_string(),
                        },
                    })
                }
            }
        } else {
            warnings.push(ParseWarning::MissingDifficult { line: line_no });
            false
        };
        records.push(AnnotationRecord {
            quad,
            category,
            difficult,
        });
    }
    Ok((records, warnings))
}

/// Emits records in the annotation format (2-decimal coordinates).
pub fn emit_dota_annotation(records: &[AnnotationRecord]) -> String {
    let mut s = String::new();
    for r in records {
        for p in r.quad.vertices() {
            let _ = write!(s, "{:.2} {:.2} ", p.x, p.y);
        }
        let _ = writeln!(s, "{} {}", r.category, u8::from(r.difficult));
    }
    s
}

/// One line of a per-class submission file:
/// `image-id score x1 y1 x2 y2 x3 y3 x4 y4`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLine {
    pub image: String,
    pub score: f64,
    pub quad: Quad<f64>,
}

/// Emits submission lines: scores with 4 decimals, coordinates with 2,
/// always `.`-separated regardless of locale.
pub fn emit_detections(lines: &[DetectionLine]) -> String {
    let mut s = String::new();
    for d in lines {
        let _ = write!(s, "{} {:.4}", d.image, d.score);
        for p in d.quad.vertices() {
            let _ = write!(s, " {:.2} {:.2}", p.x, p.y);
        }
        s.push('\n');
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<DetectionLine>, ParseError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens = tokenize(line);
        if tokens.len() < 10 {
            return Err(ParseError {
                line: line_no,
                column: line.len() + 1,
                kind: ParseErrorKind::TooFewFields {
                    got: tokens.len(),
                    expected: 10,
                },
            });
        }
        if tokens.len() > 10 {
            return Err(ParseError {
                line: line_no,
                column: tokens[10].0,
                kind: ParseErrorKind::TooManyFields {
                    got: tokens.len(),
                    expected: 10,
                },
            });
        }
        let image = tokens[0].1.to_string();
        let score = parse_coord(line_no, tokens[1].0, tokens[1].1)?;
        let quad = quad_from_tokens(line_no, &tokens[2..])?;
        out.push(DetectionLine { image, score, quad });
    }
    Ok(out)
}

/// File name of a class's submission file.
pub fn class_file_name(class: &str) -> String {
    format!("{}.txt", normalize_category(class))
}

/// One line of a per-chip detection file:
/// `category score x1 y1 x2 y2 x3 y3 x4 y4`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChipDetLine {
    pub category: String,
    pub score: f64,
    pub quad: Quad<f64>,
}

pub fn emit_chip_detections(lines: &[ChipDetLine]) -> String {
    let mut s = String::new();
    for d in lines {
        let _ = write!(s, "{} {:.4}", d.category, d.score);
        for p in d.quad.vertices() {
            let _ = write!(s, " {:.2} {:.2}", p.x, p.y);
        }
        s.push('\n');
    }
    s
}

pub fn parse_chip_detections(text: &str) -> Result<Vec<ChipDetLine>, ParseError> {
    let mut out = Vec::new();
    for d in parse_detections(text)? {
        out.push(ChipDetLine {
            category: normalize_category(&d.image),
            score: d.score,
            quad: d.quad,
        });
    }
    Ok(out)
}

/// File name of chip `i` in a chip-detection directory.
pub fn chip_file_name(index: usize) -> String {
    format!("chip_{index:04}.txt")
}

/// Magic tags of the binary container.
pub const GRID_MAGIC: [u8; 4] = *b"OBFG";
pub const OFFSET_MAGIC: [u8; 4] = *b"OBOF";

/// Upper bound on values read from a container header, guarding against
/// corrupt headers demanding absurd allocations.
pub const MAX_CONTAINER_VALUES: u64 = 1 << 28;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {got:?}, expected {expected:?}")]
    BadMagic { got: [u8; 4], expected: [u8; 4] },
    #[error("header declares {values} values, above the {MAX_CONTAINER_VALUES} limit")]
    TooLarge { values: u64 },
    #[error("offset container channel count {c} is not 2k^2 for any k")]
    BadOffsetChannels { c: u32 },
    #[error(transparent)]
    Shape(#[from] FeatopsError),
}

fn write_header<W: Write>(
    w: &mut W,
    magic: [u8; 4],
    h: u32,
    wd: u32,
    c: u32,
    stride: u32,
) -> io::Result<()> {
    w.write_all(&magic)?;
    for v in [h, wd, c, stride] {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: [u8; 4]) -> Result<(u32, u32, u32, u32), ContainerError> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if got != magic {
        return Err(ContainerError::BadMagic {
            got,
            expected: magic,
        });
    }
    let mut dims = [0u32; 4];
    for d in &mut dims {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b);
    }
    // u128: three u32 dims can overflow a u64 product.
    let values = dims[0] as u128 * dims[1] as u128 * dims[2] as u128;
    if values > MAX_CONTAINER_VALUES as u128 {
        return Err(ContainerError::TooLarge {
            values: u64::try_from(values).unwrap_or(u64::MAX),
        });
    }
    Ok((dims[0], dims[1], dims[2], dims[3]))
}

fn write_values<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_values<R: Read>(r: &mut R, count: usize) -> io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut b = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Writes a feature grid: `OBFG`, then H, W, C, stride as little-endian
/// u32, then the row-major values as little-endian f64.
pub fn write_grid<W: Write>(w: &mut W, grid: &FeatureGrid<f64>) -> io::Result<()> {
    write_header(
        w,
        GRID_MAGIC,
        grid.h() as u32,
        grid.w() as u32,
        grid.c() as u32,
        grid.stride(),
    )?;
    write_values(w, grid.data())
}

pub fn read_grid<R: Read>(r: &mut R) -> Result<FeatureGrid<f64>, ContainerError> {
    let (h, w, c, stride) = read_header(r, GRID_MAGIC)?;
    let data = read_values(r, h as usize * w as usize * c as usize)?;
    Ok(FeatureGrid::from_raw(
        h as usize,
        w as usize,
        c as usize,
        stride,
        data,
    )?)
}

/// Writes an offset field in the same container layout with magic `OBOF`;
/// the channel slot holds `2 * k * k`.
pub fn write_offset_field<W: Write>(w: &mut W, field: &OffsetField<f64>) -> io::Result<()> {
    write_header(
        w,
        OFFSET_MAGIC,
        field.h() as u32,
        field.w() as u32,
        (2 * field.k() * field.k()) as u32,
        field.stride(),
    )?;
    write_values(w, field.data())
}

pub fn read_offset_field<R: Read>(r: &mut R) -> Result<OffsetField<f64>, ContainerError> {
    let (h, w, c, stride) = read_header(r, OFFSET_MAGIC)?;
    let k = ((c / 2) as f64).sqrt().round() as u32;
    if 2 * k * k != c {
        return Err(ContainerError::BadOffsetChannels { c });
    }
    let data = read_values(r, h as usize * w as usize * c as usize)?;
    Ok(OffsetField::from_raw(
        h as usize,
        w as usize,
        k as usize,
        stride,
        data,
    )?)
}
