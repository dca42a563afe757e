//! Field files.
//!
//! Binary layout: the 8-byte magic `STRIPEF1`, then `d` and `N` as
//! little-endian `u32`, then `L, tau, eps, p` as little-endian `f64`, then
//! `N^d` row-major little-endian `f64` samples.
//!
//! Text layout: a `# stripeforge field` line, the header row
//! `d,N,L,tau,eps,p`, one row of header values, a `value` row and one sample
//! per line, all reals with 17 significant digits.
//!
//! Load errors carry the first offending record: the sample index for binary
//! files (header fields count as record 0) and the 1-based line number for
//! text files.

use crate::error::{Error, Result};
use crate::{Params, Real, ScalarField};
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &[u8; 8] = b"STRIPEF1";
const TEXT_TAG: &str = "# stripeforge field";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv,
}

pub fn save_field<T: Real>(field: &ScalarField<T>, path: &Path, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Binary => encode_binary(field),
        Format::Csv => encode_csv(field).into_bytes(),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_field<T: Real>(path: &Path) -> Result<ScalarField<T>> {
    let bytes = std::fs::read(path)?;
    let name = path.display().to_string();
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes, &name)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Load {
            path: name.clone(),
            record: 0,
            reason: "neither a binary field nor UTF-8 text".into(),
        })?;
        decode_csv(&text, &name)
    }
}

pub fn encode_binary<T: Real>(field: &ScalarField<T>) -> Vec<u8> {
    let p = field.params();
    let mut out = Vec::with_capacity(48 + 8 * field.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(p.d() as u32).to_le_bytes());
    out.extend_from_slice(&(p.cells() as u32).to_le_bytes());
    for v in [p.box_len(), p.tau(), p.eps(), p.p()] {
        out.extend_from_slice(&v.f64().to_le_bytes());
    }
    for v in field.values() {
        out.extend_from_slice(&v.f64().to_le_bytes());
    }
    out
}

pub fn encode_csv<T: Real>(field: &ScalarField<T>) -> String {
    let p = field.params();
    let mut s = String::with_capacity(26 * (field.len() + 4));
    let _ = writeln!(s, "{TEXT_TAG}");
    let _ = writeln!(s, "d,N,L,tau,eps,p");
    let _ = writeln!(
        s,
        "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
        p.d(),
        p.cells(),
        p.box_len().f64(),
        p.tau().f64(),
        p.eps().f64(),
        p.p().f64()
    );
    let _ = writeln!(s, "value");
    for v in field.values() {
        let _ = writeln!(s, "{:.16e}", v.f64());
    }
    s
}

struct Header {
    d: usize,
    n: usize,
    box_len: f64,
    tau: f64,
    eps: f64,
    p: f64,
}

fn build<T: Real>(h: &Header, values: Vec<T>, name: &str, record: usize) -> Result<ScalarField<T>> {
    let params = Params::new(
        h.d,
        T::of(h.p),
        T::of(h.tau),
        T::of(h.eps),
        T::of(h.box_len),
        T::of(h.n as f64 / h.box_len),
    )
    .map_err(|e| Error::Load {
        path: name.to_string(),
        record,
        reason: format!("header: {e}"),
    })?;
    if params.cells() != h.n {
        return Err(Error::Load {
            path: name.to_string(),
            record,
            reason: format!("header: N={} does not close on L={}", h.n, h.box_len),
        });
    }
    ScalarField::new(params, values).map_err(|e| Error::Load {
        path: name.to_string(),
        record,
        reason: e.to_string(),
    })
}

fn expected_len(d: usize, n: usize) -> Option<usize> {
    n.checked_pow(d as u32)
}

fn decode_binary<T: Real>(bytes: &[u8], name: &str) -> Result<ScalarField<T>> {
    let err = |record: usize, reason: String| Error::Load {
        path: name.to_string(),
        record,
        reason,
    };
    if bytes.len() < 48 {
        return Err(err(0, format!("truncated header ({} bytes)", bytes.len())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let h = Header {
        d: u32_at(8),
        n: u32_at(12),
        box_len: f64_at(16),
        tau: f64_at(24),
        eps: f64_at(32),
        p: f64_at(40),
    };
    let want = expected_len(h.d, h.n)
        .ok_or_else(|| err(0, format!("header: d={} N={} overflows", h.d, h.n)))?;
    let payload = &bytes[48..];
    if payload.len() % 8 != 0 {
        return Err(err(payload.len() / 8, "payload is not a whole number of f64 samples".into()));
    }
    let got = payload.len() / 8;
    if got != want {
        return Err(err(
            want.min(got),
            format!(
                "shape mismatch: header d={} N={} expects {want} samples, payload has {got}",
                h.d, h.n
            ),
        ));
    }
    let mut values = Vec::with_capacity(want);
    for (k, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !(0.0..=1.0).contains(&v) {
            return Err(err(k, format!("value {v} outside the range [0,1]")));
        }
        values.push(T::of(v));
    }
    build(&h, values, name, 0)
}

fn decode_csv<T: Real>(text: &str, name: &str) -> Result<ScalarField<T>> {
    let err = |line: usize, reason: String| Error::Load {
        path: name.to_string(),
        record: line,
        reason,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, l)) if l == TEXT_TAG => {}
        _ => return Err(err(1, format!("missing `{TEXT_TAG}` tag"))),
    }
    match lines.next() {
        Some((_, "d,N,L,tau,eps,p")) => {}
        Some((i, l)) => return Err(err(i, format!("expected header row `d,N,L,tau,eps,p`, got `{l}`"))),
        None => return Err(err(2, "missing header row".into())),
    }
    let (hline, hrow) = lines.next().ok_or_else(|| err(3, "missing header values".into()))?;
    let cols: Vec<&str> = hrow.split(',').map(str::trim).collect();
    if cols.len() != 6 {
        return Err(err(hline, format!("header has {} fields, expected 6", cols.len())));
    }
    let int = |s: &str, key: &str| {
        s.parse::<usize>()
            .map_err(|_| err(hline, format!("header `{key}` = `{s}` is not an integer")))
    };
    let real = |s: &str, key: &str| {
        s.parse::<f64>()
            .map_err(|_| err(hline, format!("header `{key}` = `{s}` is not a number")))
    };
    let h = Header {
        d: int(cols[0], "d")?,
        n: int(cols[1], "N")?,
        box_len: real(cols[2], "L")?,
        tau: real(cols[3], "tau")?,
        eps: real(cols[4], "eps")?,
        p: real(cols[5], "p")?,
    };
    match lines.next() {
        Some((_, "value")) => {}
        Some((i, l)) => return Err(err(i, format!("expected `value` row, got `{l}`"))),
        None => return Err(err(hline + 1, "missing `value` row".into())),
    }
    let want = expected_len(h.d, h.n)
        .ok_or_else(|| err(hline, format!("header: d={} N={} overflows", h.d, h.n)))?;
    let mut values = Vec::with_capacity(want);
    let mut last = hline + 1;
    for (i, l) in lines {
        if l.is_empty() {
            continue;
        }
        last = i;
        let v: f64 = l
            .parse()
            .map_err(|_| err(i, format!("`{l}` is not a number")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(err(i, format!("value {v} outside the range [0,1]")));
        }
        if values.len() == want {
            return Err(err(
                i,
                format!(
                    "shape mismatch: header d={} N={} expects {want} samples, payload is longer",
                    h.d, h.n
                ),
            ));
        }
        values.push(T::of(v));
    }
    if values.len() != want {
        return Err(err(
            last,
            format!(
                "shape mismatch: header d={} N={} expects {want} samples, payload has {}",
                h.d,
                h.n,
                values.len()
            ),
        ));
    }
    build(&h, values, name, hline)
}
