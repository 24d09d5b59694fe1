//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.

use std::path::Path;

use irflow_core::data::Image;

use crate::error::{Error, Result};

pub fn encode(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_bytes());
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
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
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
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ImageFormat(format!("unreadable {what} at byte {start}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
            return Err(Error::ImageFormat(format!("unsupported magic {shown:?}")));
        }
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::ImageFormat(format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::ImageFormat("header not terminated".into()));
    }
    let payload = &bytes[h.pos + 1..];
    let expected = width * height * channels;
    if payload.len() < expected {
        return Err(Error::ImageLength {
            expected,
            found: payload.len(),
        });
    }
    Ok(Image::from_bytes(width, height, channels, &payload[..expected])?)
}

pub fn load(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn save(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}
