//! Container formats: one ASCII header line followed by little-endian `f64` payload.
//!
//! * `TBIR-F n m` — scalar field, `m^n` samples.
//! * `TBIR-V n m pad m_t` — velocity, time-major then component then space.
//! * `TBIR-S p q L` — sinogram; a second line lists the `p` angles in degrees,
//!   then `slices * p * q` samples, angle-major.
//!
//! Floats in headers are written in shortest round-trip form, so write-then-read is bit-exact.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::VelocityField;
use crate::grid::{GridSpec, ScalarField};
use crate::radon::{bins_for_level, RadonGeometry, Sinogram};

fn format_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset,
        reason: reason.into(),
    }
}

/// Byte-level reader that remembers where it is for error messages.
struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format_err(self.path, self.bytes.len(), "missing end of header line"))?;
        let text = std::str::from_utf8(&rest[..end]).map_err(|e| format_err(self.path, start + e.valid_up_to(), "header is not ASCII"))?;
        self.pos = start + end + 1;
        Ok((start, text))
    }

    fn payload(&self, count: usize) -> Result<Vec<f64>> {
        let rest = &self.bytes[self.pos..];
        let need = count * 8;
        if rest.len() < need {
            return Err(format_err(
                self.path,
                self.bytes.len(),
                format!("payload truncated: expected {count} values ({need} bytes), found {} bytes", rest.len()),
            ));
        }
        if rest.len() > need {
            return Err(format_err(self.path, self.pos + need, "trailing bytes after payload"));
        }
        let mut out = Vec::with_capacity(count);
        for (i, c) in rest.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(c.try_into().expect("chunk of 8"));
            if !v.is_finite() {
                return Err(format_err(self.path, self.pos + 8 * i, "non-finite value"));
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// Splits a header into whitespace-separated tokens with their byte offsets.
fn tokens(line: &str, base: usize) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_ascii_whitespace(), start) {
            (true, Some(s)) => {
                out.push((base + s, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((base + s, &line[s..]));
    }
    out
}

fn parse<T: std::str::FromStr>(path: &Path, tok: (usize, &str), what: &str) -> Result<T> {
    tok.1.parse().map_err(|_| format_err(path, tok.0, format!("invalid {what} '{}'", tok.1)))
}

fn header<'a>(cur: &mut Cursor<'a>, magic: &str, fields: usize) -> Result<Vec<(usize, &'a str)>> {
    let (off, line) = cur.line()?;
    let toks = tokens(line, off);
    if toks.first().map(|t| t.1) != Some(magic) {
        return Err(format_err(cur.path, off, format!("expected magic '{magic}'")));
    }
    if toks.len() != fields + 1 {
        let at = toks.get(fields + 1).map_or(off + line.len(), |t| t.0);
        return Err(format_err(cur.path, at, format!("expected {fields} header fields after '{magic}'")));
    }
    Ok(toks[1..].to_vec())
}

fn put_values(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn grid_from(path: &Path, dim: (usize, usize), m: (usize, usize), pad: Option<(usize, usize)>) -> Result<GridSpec> {
    if dim.1 != 2 && dim.1 != 3 {
        return Err(format_err(path, dim.0, format!("dimension must be 2 or 3, got {}", dim.1)));
    }
    match pad {
        Some((off, p)) => GridSpec::with_pad(dim.1, m.1, p).map_err(|e| format_err(path, off, e.to_string())),
        None => GridSpec::new(dim.1, m.1).map_err(|e| format_err(path, m.0, e.to_string())),
    }
}

pub fn encode_field(f: &ScalarField) -> Vec<u8> {
    let g = f.grid();
    let mut buf = format!("TBIR-F {} {}\n", g.dim(), g.m()).into_bytes();
    put_values(&mut buf, f.samples());
    buf
}

pub fn decode_field(path: &Path, bytes: &[u8]) -> Result<ScalarField> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    let h = header(&mut cur, "TBIR-F", 2)?;
    let n: usize = parse(path, h[0], "dimension")?;
    let m: usize = parse(path, h[1], "cells per axis")?;
    let grid = grid_from(path, (h[0].0, n), (h[1].0, m), None)?;
    let samples = cur.payload(grid.num_cells())?;
    ScalarField::new(grid, samples)
}

pub fn encode_velocity(v: &VelocityField) -> Vec<u8> {
    let g = v.grid();
    let mut buf = format!("TBIR-V {} {} {} {}\n", g.dim(), g.m(), g.pad(), v.m_t()).into_bytes();
    put_values(&mut buf, v.dofs());
    buf
}

pub fn decode_velocity(path: &Path, bytes: &[u8]) -> Result<VelocityField> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    let h = header(&mut cur, "TBIR-V", 4)?;
    let n: usize = parse(path, h[0], "dimension")?;
    let m: usize = parse(path, h[1], "cells per axis")?;
    let pad: usize = parse(path, h[2], "padding")?;
    let m_t: usize = parse(path, h[3], "time cells")?;
    if m_t == 0 {
        return Err(format_err(path, h[3].0, "m_t must be at least 1"));
    }
    let grid = grid_from(path, (h[0].0, n), (h[1].0, m), Some((h[2].0, pad)))?;
    let dofs = cur.payload(VelocityField::len_for(&grid, m_t))?;
    VelocityField::new(grid, m_t, dofs)
}

pub fn encode_sinogram(s: &Sinogram) -> Vec<u8> {
    let g = s.geometry();
    let angles: Vec<String> = g.angles_deg().iter().map(|a| format!("{a:?}")).collect();
    let mut buf = format!("TBIR-S {} {} {:?}\n{}\n", g.num_angles(), g.q(), g.detector_length(), angles.join(" ")).into_bytes();
    put_values(&mut buf, s.samples());
    buf
}

/// Pyramid level for `q` bins, or 0 when `q` is not on the `1.5 * 2^k` ladder.
fn level_for_bins(q: usize) -> u32 {
    (1..=24).find(|&k| bins_for_level(k) == q).unwrap_or(0)
}

pub fn decode_sinogram(path: &Path, bytes: &[u8]) -> Result<Sinogram> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    let h = header(&mut cur, "TBIR-S", 3)?;
    let p: usize = parse(path, h[0], "angle count")?;
    let q: usize = parse(path, h[1], "bin count")?;
    let l: f64 = parse(path, h[2], "detector length")?;
    if p == 0 || q == 0 {
        return Err(format_err(path, h[0].0, "angle and bin counts must be positive"));
    }
    let (off, line) = cur.line()?;
    let toks = tokens(line, off);
    if toks.len() != p {
        return Err(format_err(path, off, format!("expected {p} angles, found {}", toks.len())));
    }
    let angles = toks.iter().map(|&t| parse::<f64>(path, t, "angle")).collect::<Result<Vec<_>>>()?;
    let geom = RadonGeometry::new(angles, q, l, level_for_bins(q)).map_err(|e| format_err(path, h[2].0, e.to_string()))?;
    let remaining = bytes.len() - cur.pos;
    let row = p * q * 8;
    if remaining == 0 || !remaining.is_multiple_of(row) {
        return Err(format_err(
            path,
            cur.pos + remaining - remaining % row,
            format!("payload of {remaining} bytes is not a positive multiple of p*q*8 = {row}"),
        ));
    }
    let slices = remaining / row;
    let samples = cur.payload(slices * p * q)?;
    Sinogram::new(geom, slices, samples)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| format_err(path, 0, format!("cannot read: {e}")))
}

pub fn write_field(path: &Path, f: &ScalarField) -> Result<()> {
    write_bytes(path, &encode_field(f))
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    decode_field(path, &read_bytes(path)?)
}

pub fn write_velocity(path: &Path, v: &VelocityField) -> Result<()> {
    write_bytes(path, &encode_velocity(v))
}

pub fn read_velocity(path: &Path) -> Result<VelocityField> {
    decode_velocity(path, &read_bytes(path)?)
}

pub fn write_sinogram(path: &Path, s: &Sinogram) -> Result<()> {
    write_bytes(path, &encode_sinogram(s))
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    decode_sinogram(path, &read_bytes(path)?)
}

/// 16-bit binary PGM of a 2D field (or of a sinogram as `q x p`), min-max normalised.
pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut buf = format!("P5\n{width} {height}\n65535\n").into_bytes();
    // PGM rows run top to bottom; put the second axis upwards.
    for y in (0..height).rev() {
        for x in 0..width {
            let v = ((values[y * width + x] - lo) / span * 65535.0).round() as u16;
            buf.extend_from_slice(&v.to_be_bytes());
        }
    }
    buf
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    write_bytes(path, &encode_pgm(width, height, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    proptest! {
        #[test]
        fn field_roundtrip(vals in prop::collection::vec(-1e300f64..1e300, 64)) {
            let f = ScalarField::new(GridSpec::new(2, 8).unwrap(), vals).unwrap();
            let back = decode_field(p(), &encode_field(&f)).unwrap();
            prop_assert_eq!(back.samples(), f.samples());
        }

        #[test]
        fn sinogram_roundtrip(angles in prop::collection::vec(0.0f64..180.0, 1..5), seed in 0u64..1000) {
            let q = 12;
            let geom = RadonGeometry::new(angles.clone(), q, std::f64::consts::SQRT_2, 3).unwrap();
            let vals: Vec<f64> = (0..angles.len() * q).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 7.0).collect();
            let s = Sinogram::new(geom, 1, vals).unwrap();
            let back = decode_sinogram(p(), &encode_sinogram(&s)).unwrap();
            prop_assert_eq!(back, s);
        }
    }

    #[test]
    fn velocity_roundtrip() {
        let g = GridSpec::with_pad(2, 4, 3).unwrap();
        let v = VelocityField::from_fn(g, 2, |t, x| [t + x[0], 0.1 / 3.0 - x[1], 0.0]).unwrap();
        let back = decode_velocity(p(), &encode_velocity(&v)).unwrap();
        assert_eq!(back.dofs(), v.dofs());
        assert_eq!(back.grid(), v.grid());
        assert_eq!(back.m_t(), 2);
    }

    #[test]
    fn errors_carry_offsets() {
        let f = ScalarField::zeros(GridSpec::new(2, 4).unwrap());
        let mut bytes = encode_field(&f);
        bytes.pop();
        match decode_field(p(), &bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len()),
            other => panic!("{other:?}"),
        }
        match decode_field(p(), b"TBIR-F 2 x\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 9),
            other => panic!("{other:?}"),
        }
        match decode_field(p(), b"TBIR-X 2 4\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        assert!(decode_sinogram(p(), b"TBIR-S 2 3 1.0\n0 90\n").is_err());
        assert!(decode_velocity(p(), b"TBIR-V 2 4 4 0\n").is_err());
    }

    #[test]
    fn pgm_header_and_range() {
        let buf = encode_pgm(2, 1, &[0.5, 1.5]);
        assert!(buf.starts_with(b"P5\n2 1\n65535\n"));
        let body = &buf[buf.len() - 4..];
        assert_eq!(body, &[0, 0, 255, 255]);
    }

    #[test]
    fn sinogram_level_from_bins() {
        assert_eq!(level_for_bins(192), 7);
        assert_eq!(level_for_bins(12), 3);
        assert_eq!(level_for_bins(13), 0);
    }
}
