//! File formats shared across modules.
//!
//! * PFM: single-channel `Pf`, scale `-1.0` (little-endian), rows stored
//!   top-down (row 0 is the top image row).
//! * PNG: 16-bit RGB.
//! * JSON: pretty-printed with a trailing newline.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(thiserror::Error, Debug)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    fs::write(path, to_json_string(value)).map_err(|e| IoError::io(path, e))
}

/// Encode a single-channel float image as PFM bytes.
pub fn encode_pfm(width: usize, height: usize, data: &[f32]) -> Vec<u8> {
    assert_eq!(data.len(), width * height, "pfm buffer size");
    let header = format!("Pf\n{width} {height}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + data.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_pfm(path: &Path, width: usize, height: usize, data: &[f32]) -> Result<(), IoError> {
    fs::write(path, encode_pfm(width, height, data)).map_err(|e| IoError::io(path, e))
}

/// Decode PFM bytes written by [`encode_pfm`]; big-endian files (positive
/// scale) are accepted as well.
pub fn decode_pfm(bytes: &[u8], origin: &str) -> Result<(usize, usize, Vec<f32>), IoError> {
    let bad = |line, msg: &str| IoError::Parse {
        path: origin.to_string(),
        line,
        msg: msg.to_string(),
    };
    let mut pos = 0;
    let mut next_line = |line: usize| -> Result<String, IoError> {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad(line, "truncated header"))?;
        let s = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| bad(line, "non-ascii header"))?
            .trim()
            .to_string();
        pos += end + 1;
        Ok(s)
    };
    if next_line(1)? != "Pf" {
        return Err(bad(1, "expected single-channel `Pf` magic"));
    }
    let dims = next_line(2)?;
    let mut it = dims.split_whitespace().map(|t| t.parse::<usize>());
    let (w, h) = match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) => (w, h),
        _ => return Err(bad(2, "expected `width height`")),
    };
    let scale: f32 = next_line(3)?.parse().map_err(|_| bad(3, "bad scale"))?;
    let body = &bytes[pos..];
    if body.len() != w * h * 4 {
        return Err(bad(4, &format!("expected {} data bytes, found {}", w * h * 4, body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if scale < 0.0 {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    Ok((w, h, data))
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>), IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_pfm(&bytes, &path.display().to_string())
}

/// Write a 16-bit RGB PNG; `data` holds `width * height` pixels.
pub fn write_png16(path: &Path, width: u32, height: u32, data: &[[u16; 3]]) -> Result<(), IoError> {
    assert_eq!(data.len(), (width * height) as usize, "png buffer size");
    let file = fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc
        .write_header()
        .map_err(|e| IoError::Invalid(format!("{}: {e}", path.display())))?;
    let mut bytes = Vec::with_capacity(data.len() * 6);
    for px in data {
        for c in px {
            bytes.extend_from_slice(&c.to_be_bytes());
        }
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| IoError::Invalid(format!("{}: {e}", path.display())))?;
    writer
        .finish()
        .map_err(|e| IoError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn read_png16(path: &Path) -> Result<(u32, u32, Vec<[u16; 3]>), IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let invalid = |e: &dyn std::fmt::Display| IoError::Invalid(format!("{}: {e}", path.display()));
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| invalid(&e))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Sixteen {
        return Err(invalid(&"expected a 16-bit RGB png"));
    }
    let (w, h) = (info.width, info.height);
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| invalid(&"image too large"))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| invalid(&e))?;
    let bytes = &buf[..frame.buffer_size()];
    let data = bytes
        .chunks_exact(6)
        .map(|c| {
            [
                u16::from_be_bytes([c[0], c[1]]),
                u16::from_be_bytes([c[2], c[3]]),
                u16::from_be_bytes([c[4], c[5]]),
            ]
        })
        .collect();
    Ok((w, h, data))
}

/// Write CSV rows with a fixed header.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()
    };
    emit().map_err(|e| IoError::io(path, e))
}

/// Format with `digits` significant digits, like C's `%g`.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let exp = x.abs().log10().floor() as i32;
    // rounding can bump the exponent (9.999995 -> 10.0000)
    let sci = format!("{:.*e}", digits - 1, x);
    let exp = sci
        .split('e')
        .nth(1)
        .and_then(|e| e.parse::<i32>().ok())
        .unwrap_or(exp);
    if exp < -4 || exp >= digits as i32 {
        let (mantissa, _) = sci.split_once('e').unwrap();
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_roundtrip() {
        let data = vec![1.0f32, f32::INFINITY, 0.0, -2.5, 3.25, 7.0];
        let bytes = encode_pfm(3, 2, &data);
        assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
        let (w, h, back) = decode_pfm(&bytes, "mem").unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(back, data);
    }

    #[test]
    fn pfm_rejects_short_payload() {
        let mut bytes = encode_pfm(2, 2, &[0.0; 4]);
        bytes.pop();
        assert!(decode_pfm(&bytes, "mem").is_err());
        assert!(decode_pfm(b"PF\n1 1\n-1\n0000", "mem").is_err());
    }

    #[test]
    fn png16_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let data = vec![[0, 65535, 12], [7, 8, 9], [65535, 0, 0], [1, 2, 3]];
        write_png16(&p, 2, 2, &data).unwrap();
        let (w, h, back) = read_png16(&p).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(back, data);
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(0.0, 6), "0");
        assert_eq!(format_sig(30.5612345, 6), "30.5612");
        assert_eq!(format_sig(1.0, 6), "1");
        assert_eq!(format_sig(0.5, 6), "0.5");
        assert_eq!(format_sig(-0.000123456789, 6), "-0.000123457");
        assert_eq!(format_sig(1.23456789e-7, 6), "1.23457e-07");
        assert_eq!(format_sig(123456789.0, 6), "1.23457e+08");
        assert_eq!(format_sig(9.9999996, 6), "10");
        assert_eq!(format_sig(999999.6, 6), "1e+06");
    }
}
