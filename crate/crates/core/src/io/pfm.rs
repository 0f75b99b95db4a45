//! PFM (portable float map) reading and writing.
//!
//! PFM is the float-exact interchange format for HDR scenes and
//! reconstructions: an ASCII header, then rows of raw 32-bit floats stored
//! bottom-up. The header is three whitespace-separated groups: the magic
//! ("PF" color, "Pf" grayscale), the dimensions "width height", and a scale
//! factor whose sign encodes payload endianness (negative = little-endian).
//!
//! Samples are stored as f32, so images that stay within f32 round-trip
//! bit-exactly; f64 data is narrowed on write.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::write_atomic;

fn token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedHeader("unexpected end of header".into()));
    }
    String::from_utf8(bytes[start..*pos].to_vec())
        .map_err(|_| Error::MalformedHeader("non-UTF-8 header".into()))
}

fn decode(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos)?;
    let c = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => {
            return Err(Error::MalformedHeader(format!(
                "magic {magic:?} is neither PF nor Pf"
            )))
        }
    };
    let w: usize = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::MalformedHeader("unparsable width".into()))?;
    let h: usize = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::MalformedHeader("unparsable height".into()))?;
    if w == 0 || h == 0 {
        return Err(Error::MalformedHeader(format!("empty image {w}x{h}")));
    }
    let scale: f64 = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::MalformedHeader("unparsable scale".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::MalformedHeader(format!("invalid scale {scale}")));
    }
    let little = scale < 0.0;

    // Exactly one whitespace byte separates the scale from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedHeader("missing payload separator".into()));
    }
    pos += 1;

    let need = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader("dimensions overflow".into()))?;
    let got = bytes.len() - pos;
    if got < need {
        return Err(Error::TruncatedPayload { expected: need, got });
    }
    if got > need {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after payload",
            got - need
        )));
    }

    let mut img = Image::new(h, w, c)?;
    let mut off = pos;
    for r in 0..h {
        // PFM stores the bottom row first.
        let i = h - 1 - r;
        for j in 0..w {
            for ch in 0..c {
                let raw: [u8; 4] = bytes[off..off + 4].try_into().unwrap();
                let v = if little {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
                img.set(i, j, ch, v as f64);
                off += 4;
            }
        }
    }
    Ok(img)
}

fn encode(img: &Image) -> Vec<u8> {
    let (h, w, c) = img.dims();
    let magic = if c == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * c * 4);
    for r in 0..h {
        let i = h - 1 - r;
        for j in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&(img.at(i, j, ch) as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Reads a grayscale ("Pf") or RGB ("PF") float map.
pub fn read_pfm(path: &Path) -> Result<Image> {
    decode(&fs::read(path)?)
}

/// Writes `img` as a little-endian PFM.
pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::Mix64;

    fn f32_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = Mix64::new(seed);
        Image::from_fn(h, w, c, |_, _, _| (rng.next_f64() * 1e4 - 5e3) as f32 as f64).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact_for_f32_data() {
        let dir = tempfile::tempdir().unwrap();
        for (c, name) in [(1, "gray.pfm"), (3, "rgb.pfm")] {
            let img = f32_image(16, 16, c, 7 + c as u64);
            let path = dir.path().join(name);
            write_pfm(&path, &img).unwrap();
            let back = read_pfm(&path).unwrap();
            assert_eq!(back.dims(), (16, 16, c));
            assert_eq!(back.data(), img.data());
        }
    }

    #[test]
    fn rows_are_stored_bottom_up() {
        let img = Image::from_vec(2, 1, 1, vec![20.0, 10.0]).unwrap();
        let bytes = encode(&img);
        // Header "Pf\n1 2\n-1.0\n" then the bottom row (10.0) first.
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(payload[0..4].try_into().unwrap()), 10.0);
        assert_eq!(f32::from_le_bytes(payload[4..8].try_into().unwrap()), 20.0);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn both_endiannesses_decode_to_the_same_values() {
        let vals = [1.5f32, -2.25, 3.75, 1024.0];
        let mut le = b"Pf\n2 2\n-1.0\n".to_vec();
        let mut be = b"Pf\n2 2\n1.0\n".to_vec();
        for v in vals {
            le.extend_from_slice(&v.to_le_bytes());
            be.extend_from_slice(&v.to_be_bytes());
        }
        let a = decode(&le).unwrap();
        let b = decode(&be).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.at(1, 0, 0), 1.5);
    }

    #[test]
    fn channel_count_must_match_magic() {
        // "Pf" (gray) with a 3-channel payload size: payload length check
        // fires because the header promises 2x2x1 floats.
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        for _ in 0..12 {
            bytes.extend_from_slice(&1.0f32.to_le_bytes());
        }
        assert!(matches!(
            decode(&bytes),
            Err(Error::MalformedHeader(msg)) if msg.contains("trailing")
        ));
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(matches!(
            decode(b"P5\n2 2\n-1.0\n\0\0\0\0"),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            decode(b"Pf\n0 2\n-1.0\n"),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            decode(b"Pf\n2 2\n0.0\n"),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(decode(b"Pf\n2 2"), Err(Error::MalformedHeader(_))));

        let mut short = b"Pf\n2 2\n-1.0\n".to_vec();
        short.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(matches!(
            decode(&short),
            Err(Error::TruncatedPayload { expected: 16, got: 4 })
        ));
    }
}
