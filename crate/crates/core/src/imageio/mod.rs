//! Float images, file I/O, and resampling.

mod pnm;
mod resample;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use resample::{catmull_rom_weight, resize, ResampleKernel};

/// Interleaved row-major image with 1 (gray) or 3 (RGB) channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape(format!(
                "image dims must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "pixel buffer has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image, clamping every value into `[0, 1]`.
    pub fn from_clamped(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let data = data.into_iter().map(clamp01).collect();
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
        .expect("filled image arguments are valid")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(clamp01(f(x, y, c)));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = (y * self.width + x) * self.channels + c;
        self.data[i] = clamp01(v);
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Channel mean per pixel.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|p| p.iter().sum::<f64>() / self.channels as f64)
            .collect();
        Image::new(self.width, self.height, 1, data).expect("gray conversion keeps dims")
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

#[inline]
pub(crate) fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= width && self.bottom() <= height
    }
}

pub fn crop(img: &Image, rect: &Rect) -> Result<Image> {
    if !rect.fits_in(img.width, img.height) {
        return Err(Error::shape(format!(
            "crop {rect:?} outside {}x{} image",
            img.width, img.height
        )));
    }
    let c = img.channels;
    let mut data = Vec::with_capacity(rect.area() * c);
    for y in rect.y..rect.bottom() {
        let row = (y * img.width + rect.x) * c;
        data.extend_from_slice(&img.data[row..row + rect.w * c]);
    }
    Image::new(rect.w, rect.h, c, data)
}

/// Copies `src` into `dst` with its top-left corner at `(x, y)`.
pub fn paste(dst: &mut Image, src: &Image, x: usize, y: usize) -> Result<()> {
    if src.channels != dst.channels {
        return Err(Error::shape(format!(
            "paste channel mismatch: {} into {}",
            src.channels, dst.channels
        )));
    }
    if !Rect::new(x, y, src.width, src.height).fits_in(dst.width, dst.height) {
        return Err(Error::shape(format!(
            "paste of {}x{} at ({x}, {y}) exceeds {}x{}",
            src.width, src.height, dst.width, dst.height
        )));
    }
    let c = src.channels;
    for row in 0..src.height {
        let s = row * src.width * c;
        let d = ((y + row) * dst.width + x) * c;
        dst.data[d..d + src.width * c].copy_from_slice(&src.data[s..s + src.width * c]);
    }
    Ok(())
}

/// Pads or converts channels so both images share a channel count.
pub fn with_channels(img: &Image, channels: usize) -> Image {
    match (img.channels, channels) {
        (a, b) if a == b => img.clone(),
        (3, 1) => img.to_gray(),
        (1, 3) => {
            let data = img.data.iter().flat_map(|&v| [v, v, v]).collect();
            Image::new(img.width, img.height, 3, data).expect("channel expansion keeps dims")
        }
        _ => unreachable!("images have 1 or 3 channels"),
    }
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    // round half up
    (clamp01(v) * 255.0 + 0.5).floor() as u8
}

fn to_bytes(img: &Image) -> Vec<u8> {
    img.data.iter().map(|&v| quantize(v)).collect()
}

fn from_bytes(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Image> {
    let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(width, height, channels, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileKind {
    Png,
    Pnm,
}

fn kind_for(path: &Path) -> Result<FileKind> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => Ok(FileKind::Png),
        Some("ppm" | "pgm" | "pnm") => Ok(FileKind::Pnm),
        _ => Err(Error::param(format!(
            "unsupported image extension for {} (use .png, .ppm, .pgm)",
            path.display()
        ))),
    }
}

/// Loads an 8-bit PNG (gray or RGB) or binary PGM/PPM.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else if bytes.first() == Some(&b'P') {
        let (w, h, c, px) = pnm::decode(&bytes, path)?;
        from_bytes(w, h, c, &px)
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: "unrecognized image signature".into(),
        })
    }
}

/// Writes an 8-bit file; format follows the extension.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let bytes = match kind_for(path)? {
        FileKind::Png => encode_png(img, path)?,
        FileKind::Pnm => {
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .unwrap_or("")
                .to_ascii_lowercase();
            let want = match ext.as_str() {
                "pgm" => 1,
                "ppm" => 3,
                _ => img.channels,
            };
            pnm::encode(&with_channels(img, want))
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let format_err = |msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        msg,
    };
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| format_err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| format_err(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(format!(
            "unsupported bit depth {:?}",
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    match info.color_type {
        png::ColorType::Grayscale => from_bytes(w, h, 1, buf),
        png::ColorType::Rgb => from_bytes(w, h, 3, buf),
        png::ColorType::GrayscaleAlpha => {
            let px: Vec<u8> = buf.chunks_exact(2).map(|p| p[0]).collect();
            from_bytes(w, h, 1, &px)
        }
        png::ColorType::Rgba => {
            let px: Vec<u8> = buf
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect();
            from_bytes(w, h, 3, &px)
        }
        other => Err(format_err(format!("unsupported color type {other:?}"))),
    }
}

fn encode_png(img: &Image, path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(if img.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let io_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e.to_string()));
        let mut writer = enc.write_header().map_err(io_err)?;
        writer.write_image_data(&to_bytes(img)).map_err(io_err)?;
        writer.finish().map_err(io_err)?;
    }
    Ok(out)
}

/// Peak signal-to-noise ratio in dB for `[0, 1]` images; infinite when equal.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() || a.channels != b.channels {
        return Err(Error::shape("psnr needs identically shaped images"));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}
