//! Binary PGM (P5) with 16-bit big-endian samples, maxval 65535.

use std::io::{Read, Write};

use super::image::Image;
use crate::error::{Error, Result};

const MAXVAL: f64 = 65535.0;

pub fn write_pgm<W: Write>(img: &Image, out: &mut W) -> Result<()> {
    write!(out, "P5\n{} {}\n65535\n", img.width(), img.height())?;
    let mut buf = Vec::with_capacity(img.pixels().len() * 2);
    for p in img.pixels() {
        let v = (p * MAXVAL).round() as u16;
        buf.extend_from_slice(&v.to_be_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_pgm<R: Read>(input: &mut R) -> Result<Image> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
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
            return Err(Error::invalid("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace before the raster
    if fields[0] != "P5" {
        return Err(Error::invalid(format!("unsupported PGM magic {:?}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::invalid(format!("bad PGM header field {s:?}")));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 65535 {
        return Err(Error::invalid(format!("expected maxval 65535, got {maxval}")));
    }
    let raster = bytes.get(pos..pos + w * h * 2).ok_or_else(|| Error::invalid("truncated PGM raster"))?;
    let pixels = raster
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / MAXVAL)
        .collect();
    Image::new(h, w, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::generate_scene;

    #[test]
    fn header_and_roundtrip() {
        let img = generate_scene(6, 16, 20).unwrap();
        let mut buf = Vec::new();
        write_pgm(&img, &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n20 16\n65535\n"));
        assert_eq!(buf.len(), "P5\n20 16\n65535\n".len() + 16 * 20 * 2);
        let back = read_pgm(&mut buf.as_slice()).unwrap();
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn rejects_other_formats() {
        assert!(read_pgm(&mut b"P2\n1 1\n255\n0".as_slice()).is_err());
        assert!(read_pgm(&mut b"P5\n2 2\n65535\n\0".as_slice()).is_err());
    }
}
