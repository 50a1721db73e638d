//! Binary PPM (P6) codec, 8-bit only.

use crate::error::{Error, Result};
use crate::image::Image;

/// Parse a P6 file. Header fields may be separated by any whitespace and
/// interleaved with `#` comments; exactly one whitespace byte separates the
/// maxval from the payload.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::MalformedHeader("missing P6 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // Each field must be preceded by whitespace.
        let start = pos;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        if pos == start {
            return Err(Error::MalformedHeader(format!("expected whitespace before field {i}")));
        }
        let digits_start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == digits_start {
            return Err(Error::MalformedHeader(format!("field {i} is not a number")));
        }
        let text = std::str::from_utf8(&bytes[digits_start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| Error::MalformedHeader(format!("field {i} overflows")))?;
    }
    let [width, height, maxval] = fields;
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::MalformedHeader("missing separator after maxval".into())),
    }
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::MalformedHeader("dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload { expected, found: payload.len() });
    }
    Image::new(height as usize, width as usize, payload[..expected].to_vec())
}

/// Canonical P6 bytes: `P6\n{w} {h}\n255\n` then the raw pixels.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.pixels());
    out
}

pub fn read_ppm(path: impl AsRef<std::path::Path>) -> Result<Image> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_ppm(path: impl AsRef<std::path::Path>, img: &Image) -> Result<()> {
    std::fs::write(path, encode_ppm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_two_pixels() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.height(), img.width()), (1, 2));
        assert_eq!(img.get(0, 0), [255, 0, 0]);
        assert_eq!(img.get(0, 1), [0, 255, 0]);
    }

    #[test]
    fn comments_and_odd_whitespace() {
        let mut bytes = b"P6 # a comment\n\t2\r\n# another\n1   255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.get(0, 1), [4, 5, 6]);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\0"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_ppm(b"P6\n1 x\n255\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"), Err(Error::UnsupportedMaxval(65535))));
        assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\0\0\0"), Err(Error::TruncatedPayload { expected: 12, found: 3 })));
    }

    #[test]
    fn canonical_encoding() {
        let img = Image::filled(1, 1, [255, 255, 255]);
        let bytes = encode_ppm(&img);
        assert_eq!(bytes, b"P6\n1 1\n255\n\xff\xff\xff");
        let img = Image::filled(3, 5, [1, 2, 3]);
        let bytes = encode_ppm(&img);
        assert_eq!(bytes.len(), "P6\n5 3\n255\n".len() + 45);
        assert_eq!(bytes, encode_ppm(&img));
    }
}
