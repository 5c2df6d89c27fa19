//! Binary PGM (P5) and PPM (P6), maxval 255.

use std::path::Path;

use super::{quantize, Image};
use crate::error::{Error, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
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
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                path: self.path.to_path_buf(),
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

/// Returns `(width, height, channels, bytes)`.
pub(super) fn decode(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        path,
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(cur.err("expected P5 or P6 magic")),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    if maxval != 255 {
        return Err(cur.err(format!("only maxval 255 is supported, got {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected single whitespace after maxval")),
    }
    let need = width * height * channels;
    let body = &bytes[cur.pos..];
    if body.len() < need {
        cur.pos = bytes.len();
        return Err(cur.err(format!(
            "pixel data truncated: need {need} bytes, have {}",
            body.len()
        )));
    }
    Ok((width, height, channels, body[..need].to_vec()))
}

pub(super) fn encode(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.as_slice().iter().map(|&v| quantize(v)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comments() {
        let data = b"P6 # rgb\n# size\n2 1\n255\n\x00\x80\xff\x01\x02\x03";
        let (w, h, c, px) = decode(data, Path::new("x.ppm")).unwrap();
        assert_eq!((w, h, c), (2, 1, 3));
        assert_eq!(px, vec![0, 128, 255, 1, 2, 3]);
    }

    #[test]
    fn malformed_headers_name_offset() {
        let p = Path::new("x.pgm");
        match decode(b"P5\n2 x\n255\n", p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            decode(b"P3\n1 1\n255\n0", p),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            decode(b"P5\n1 1\n65535\n\0\0", p),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            decode(b"P5\n2 2\n255\n\0", p),
            Err(Error::Format { .. })
        ));
    }
}
