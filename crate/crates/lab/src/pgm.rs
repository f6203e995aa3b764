//! Binary PGM (P5) grayscale images with maxval 255.

use ugan_core::eval::GrayImage;

use crate::error::{LabError, Result};

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

/// Reads any P5 file with `maxval ≤ 255`, including `#` comments in the header.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let err = |reason: &str| LabError::format("pgm", reason);
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(err("header truncated")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(err("not a binary graymap"));
    }
    let mut number = |name: &str| -> Result<usize> {
        token()?.parse().map_err(|_| err(&format!("bad {name}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(err("maxval must be in 1..=255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let body = bytes.get(pos + 1..).ok_or_else(|| err("missing raster"))?;
    if body.len() != width * height {
        return Err(err(&format!("raster has {} bytes, expected {}", body.len(), width * height)));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: body.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0, 1, 2, 253, 254, 255],
        };
        let bytes = encode_pgm(&img);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(parse_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn parser_accepts_comments_and_rejects_junk() {
        let mut bytes = b"P5 # grid\n2 # w\n1\n255 ".to_vec();
        bytes.extend_from_slice(&[10, 32]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.pixels), (2, 1, vec![10, 32]));
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(parse_pgm(b"P5\n2").is_err());
    }
}
