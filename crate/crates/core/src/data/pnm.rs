//! Binary netpbm images: PGM (`P5`, one channel) and PPM (`P6`, RGB), 8-bit.

use std::fs;
use std::path::Path;

use crate::error::{contract_err, Error, Result};

/// 8-bit image with `channels` interleaved samples per pixel (1 or 3).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u8,
    pub data: Vec<u8>,
}

impl PnmImage {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::build(width, height, 1, data)
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::build(width, height, 3, data)
    }

    fn build(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(contract_err!("{width}x{height}x{channels} image cannot hold {} bytes", data.len()));
        }
        Ok(PnmImage { width, height, channels, maxval: 255, data })
    }

    fn magic(&self) -> &'static str {
        if self.channels == 1 {
            "P5"
        } else {
            "P6"
        }
    }
}

pub fn encode(img: &PnmImage) -> Vec<u8> {
    let mut out = format!("{}\n{} {}\n{}\n", img.magic(), img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start, format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<PnmImage> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::format(0, "expected P5 or P6 magic")),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    h.skip_space();
    let at = h.pos;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(at, "zero image extent"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(Error::format(at, format!("maxval {maxval} is not 8-bit")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(Error::format(h.pos, "expected one whitespace byte before pixel data")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::format(at, "image size overflows"))?;
    let body = &bytes[h.pos..];
    if body.len() < need {
        return Err(Error::format(bytes.len(), format!("truncated pixel data: need {need} bytes, found {}", body.len())));
    }
    if body.len() > need {
        return Err(Error::format(h.pos + need, format!("{} trailing bytes", body.len() - need)));
    }
    if let Some(i) = body.iter().position(|&v| v as usize > maxval) {
        return Err(Error::format(h.pos + i, format!("sample {} exceeds maxval {maxval}", body[i])));
    }
    Ok(PnmImage { width, height, channels, maxval: maxval as u8, data: body.to_vec() })
}

pub fn write_pnm(path: impl AsRef<Path>, img: &PnmImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<PnmImage> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Quantize `[0, 1]` floats to 8-bit samples.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comment() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x07\xff";
        let img = decode(bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 1, 1));
        assert_eq!(img.data, vec![7, 255]);
        assert_eq!(decode(&encode(&img)).unwrap(), img);
    }

    #[test]
    fn truncations_are_format_errors() {
        let img = PnmImage::rgb(3, 2, (0..18).collect()).unwrap();
        let b = encode(&img);
        for cut in 0..b.len() {
            assert!(matches!(decode(&b[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        assert!(matches!(decode(b"P7\n1 1\n255\n\0"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode(b"P5\n1 1\n999\n\0"), Err(Error::Format { offset: 7, .. })));
    }
}
