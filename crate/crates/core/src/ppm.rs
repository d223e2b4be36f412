//! Binary PPM (P6, maxval 255) frames.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn encode(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::shape(format!(
            "{width}x{height} frame needs {} bytes, got {}",
            width * height * 3,
            rgb.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    Ok(out)
}

/// Returns `(width, height, rgb)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("PPM: {m}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header not ASCII"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("only P6 is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    let body = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if body.len() != w * h * 3 {
        return Err(bad("raster size does not match header"));
    }
    Ok((w, h, body.to_vec()))
}

pub fn write(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(width, height, rgb)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_comments() {
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|v| v as u8 * 13).collect();
        let bytes = encode(2, 3, &rgb).unwrap();
        assert!(bytes.starts_with(b"P6\n2 3\n255\n"));
        assert_eq!(decode(&bytes).unwrap(), (2, 3, rgb.clone()));

        let mut commented = b"P6 # made by hand\n2 3 255\n".to_vec();
        commented.extend_from_slice(&rgb);
        assert_eq!(decode(&commented).unwrap().2, rgb);
    }

    #[test]
    fn rejects_wrong_sizes() {
        assert!(encode(2, 2, &[0; 5]).is_err());
        assert!(decode(b"P6\n1 1\n255\n\x00\x00").is_err());
        assert!(decode(b"P3\n1 1\n255\n000").is_err());
    }
}
