//! Face mosaics.
//!
//! A content mosaic keeps the original image untouched at the top of the
//! canvas and appends a strip of square tiles below it, one enhanced face per
//! tile. After the whole canvas is stylized the tiles are cut out again and
//! pasted back over the face boxes. The layout records every rectangle so the
//! mapping is exact in both directions.
//!
//! A style mosaic is a plain grid of several style references.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{crop, paste, resize, with_channels, Image, Rect, ResampleKernel};

pub const MID_GRAY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceBox {
    pub id: u32,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl FaceBox {
    pub fn new(id: u32, x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { id, x, y, w, h }
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

/// Checks bounds, positive size, and id uniqueness.
pub fn validate_boxes(boxes: &[FaceBox], width: usize, height: usize) -> Result<()> {
    let mut seen = HashSet::new();
    for b in boxes {
        if !b.rect().fits_in(width, height) {
            return Err(Error::param(format!(
                "face box {b:?} does not fit a {width}x{height} image"
            )));
        }
        if !seen.insert(b.id) {
            return Err(Error::param(format!("duplicate face id {}", b.id)));
        }
    }
    Ok(())
}

/// Sidecar document listing face boxes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceManifest {
    #[serde(default)]
    pub faces: Vec<FaceBox>,
}

impl FaceManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("face manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

pub trait FaceDetector {
    fn detect(&self, img: &Image) -> Result<Vec<FaceBox>>;
}

/// Returns boxes annotated in a sidecar manifest.
#[derive(Debug, Clone)]
pub struct ManifestDetector {
    pub boxes: Vec<FaceBox>,
}

impl ManifestDetector {
    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self {
            boxes: FaceManifest::load(path)?.faces,
        })
    }
}

impl FaceDetector for ManifestDetector {
    fn detect(&self, img: &Image) -> Result<Vec<FaceBox>> {
        validate_boxes(&self.boxes, img.width(), img.height())
            .map_err(|e| Error::Detector(format!("manifest boxes rejected: {e}")))?;
        Ok(self.boxes.clone())
    }
}

/// Finds 4-connected regions of an exact key color and reports their bounds.
#[derive(Debug, Clone)]
pub struct ColorKeyDetector {
    pub color: [f64; 3],
    pub tolerance: f64,
}

impl Default for ColorKeyDetector {
    /// Pure magenta.
    fn default() -> Self {
        Self {
            color: [1.0, 0.0, 1.0],
            tolerance: 1e-9,
        }
    }
}

impl ColorKeyDetector {
    fn matches(&self, img: &Image, x: usize, y: usize) -> bool {
        let px = img.pixel(x, y);
        if px.len() == 1 {
            return self
                .color
                .iter()
                .all(|c| (c - px[0]).abs() <= self.tolerance);
        }
        px.iter()
            .zip(&self.color)
            .all(|(p, c)| (p - c).abs() <= self.tolerance)
    }
}

impl FaceDetector for ColorKeyDetector {
    fn detect(&self, img: &Image) -> Result<Vec<FaceBox>> {
        let (w, h) = img.dims();
        let mut seen = vec![false; w * h];
        let mut boxes = Vec::new();
        for sy in 0..h {
            for sx in 0..w {
                if seen[sy * w + sx] || !self.matches(img, sx, sy) {
                    continue;
                }
                let (mut x0, mut y0, mut x1, mut y1) = (sx, sy, sx, sy);
                let mut stack = vec![(sx, sy)];
                seen[sy * w + sx] = true;
                while let Some((x, y)) = stack.pop() {
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                    let mut push = |nx: usize, ny: usize| {
                        if !seen[ny * w + nx] && self.matches(img, nx, ny) {
                            seen[ny * w + nx] = true;
                            stack.push((nx, ny));
                        }
                    };
                    if x > 0 {
                        push(x - 1, y);
                    }
                    if x + 1 < w {
                        push(x + 1, y);
                    }
                    if y > 0 {
                        push(x, y - 1);
                    }
                    if y + 1 < h {
                        push(x, y + 1);
                    }
                }
                boxes.push(FaceBox::new(
                    boxes.len() as u32,
                    x0,
                    y0,
                    x1 - x0 + 1,
                    y1 - y0 + 1,
                ));
            }
        }
        Ok(boxes)
    }
}

/// Runs a detector and normalizes its output: boxes sorted by descending
/// area (ties by position) with ids reassigned `0..n`.
pub fn detect_faces(img: &Image, detector: &dyn FaceDetector) -> Result<Vec<FaceBox>> {
    let mut boxes = detector.detect(img).map_err(|e| match e {
        Error::Detector(_) => e,
        other => Error::Detector(other.to_string()),
    })?;
    for b in &boxes {
        if !b.rect().fits_in(img.width(), img.height()) {
            return Err(Error::Detector(format!(
                "detector returned out-of-bounds box {b:?}"
            )));
        }
    }
    boxes.sort_by(|a, b| b.area().cmp(&a.area()).then((a.y, a.x).cmp(&(b.y, b.x))));
    for (i, b) in boxes.iter_mut().enumerate() {
        b.id = i as u32;
    }
    Ok(boxes)
}

pub trait Upscaler {
    fn upscale(&self, img: &Image, width: usize, height: usize) -> Result<Image>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BicubicUpscaler;

impl Upscaler for BicubicUpscaler {
    fn upscale(&self, img: &Image, width: usize, height: usize) -> Result<Image> {
        resize(img, width, height, ResampleKernel::Bicubic)
    }
}

/// Aspect-preserving fit of a `w × h` region into a `tile_w × tile_h` tile,
/// centered; coordinates are relative to the tile.
pub fn letterbox_rect(w: usize, h: usize, tile_w: usize, tile_h: usize) -> Rect {
    let scale = (tile_w as f64 / w as f64).min(tile_h as f64 / h as f64);
    let iw = ((w as f64 * scale).round() as usize).clamp(1, tile_w);
    let ih = ((h as f64 * scale).round() as usize).clamp(1, tile_h);
    Rect::new((tile_w - iw) / 2, (tile_h - ih) / 2, iw, ih)
}

/// Upscales a face crop into a `target × target` tile, letterboxed with
/// mid-gray when the crop is not square.
pub fn enhance_face(crop_img: &Image, upscaler: &dyn Upscaler, target: usize) -> Result<Image> {
    let (w, h) = crop_img.dims();
    if target < w.max(h) {
        return Err(Error::param(format!(
            "enhance target {target} smaller than crop {w}x{h}"
        )));
    }
    let inner = letterbox_rect(w, h, target, target);
    let scaled = upscaler.upscale(crop_img, inner.w, inner.h)?;
    if inner.w == target && inner.h == target {
        return Ok(scaled);
    }
    let mut tile = Image::filled(target, target, crop_img.channels(), MID_GRAY);
    paste(&mut tile, &scaled, inner.x, inner.y)?;
    Ok(tile)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileEntry {
    pub id: u32,
    /// Tile square in canvas coordinates.
    pub tile: Rect,
    /// Letterboxed face area inside the tile, canvas coordinates.
    pub content: Rect,
    pub source: FaceBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MosaicLayout {
    pub canvas_w: usize,
    pub canvas_h: usize,
    pub tile_size: usize,
    pub background: Rect,
    #[serde(default)]
    pub tiles: Vec<TileEntry>,
}

impl MosaicLayout {
    /// Checks containment and pairwise disjointness of all rectangles.
    pub fn validate(&self) -> Result<()> {
        let canvas = Rect::new(0, 0, self.canvas_w, self.canvas_h);
        if !canvas.contains_rect(&self.background) {
            return Err(Error::shape("background rect outside canvas"));
        }
        for (i, t) in self.tiles.iter().enumerate() {
            if t.tile.w != self.tile_size || t.tile.h != self.tile_size {
                return Err(Error::shape(format!(
                    "tile {} is not {0}x{0}",
                    self.tile_size
                )));
            }
            if !canvas.contains_rect(&t.tile) || !t.tile.contains_rect(&t.content) {
                return Err(Error::shape(format!(
                    "tile for face {} outside canvas",
                    t.id
                )));
            }
            if t.tile.intersects(&self.background) {
                return Err(Error::shape(format!(
                    "tile for face {} overlaps background",
                    t.id
                )));
            }
            if self.tiles[..i].iter().any(|o| o.tile.intersects(&t.tile)) {
                return Err(Error::shape(format!(
                    "tile for face {} overlaps another tile",
                    t.id
                )));
            }
        }
        Ok(())
    }

    pub fn boxes(&self) -> Vec<FaceBox> {
        self.tiles.iter().map(|t| t.source).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("layout serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let layout: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

/// Original image on top, a strip of enhanced face tiles below.
pub fn build_content_mosaic(
    img: &Image,
    boxes: &[FaceBox],
    upscaler: &dyn Upscaler,
    tile_size: usize,
) -> Result<(Image, MosaicLayout)> {
    let (w, h) = img.dims();
    if tile_size == 0 || tile_size > w {
        return Err(Error::param(format!(
            "tile size {tile_size} must be in 1..={w} (image width)"
        )));
    }
    validate_boxes(boxes, w, h)?;

    let cols = (w / tile_size).max(1);
    let rows = boxes.len().div_ceil(cols);
    let canvas_h = h + rows * tile_size;
    let mut canvas = Image::filled(w, canvas_h, img.channels(), MID_GRAY);
    paste(&mut canvas, img, 0, 0)?;

    let mut tiles = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        let tile = Rect::new(
            (i % cols) * tile_size,
            h + (i / cols) * tile_size,
            tile_size,
            tile_size,
        );
        let face = enhance_face(&crop(img, &b.rect())?, upscaler, tile_size)?;
        paste(&mut canvas, &face, tile.x, tile.y)?;
        let inner = letterbox_rect(b.w, b.h, tile_size, tile_size);
        tiles.push(TileEntry {
            id: b.id,
            tile,
            content: Rect::new(tile.x + inner.x, tile.y + inner.y, inner.w, inner.h),
            source: *b,
        });
    }

    let layout = MosaicLayout {
        canvas_w: w,
        canvas_h,
        tile_size,
        background: Rect::new(0, 0, w, h),
        tiles,
    };
    layout.validate()?;
    Ok((canvas, layout))
}

pub fn extract_stylized_faces(
    stylized: &Image,
    layout: &MosaicLayout,
) -> Result<Vec<(u32, Image)>> {
    if stylized.dims() != (layout.canvas_w, layout.canvas_h) {
        return Err(Error::shape(format!(
            "stylized mosaic is {}x{}, layout expects {}x{}",
            stylized.width(),
            stylized.height(),
            layout.canvas_w,
            layout.canvas_h
        )));
    }
    layout
        .tiles
        .iter()
        .map(|t| Ok((t.id, crop(stylized, &t.tile)?)))
        .collect()
}

/// The background region of a stylized content mosaic.
pub fn extract_background(stylized: &Image, layout: &MosaicLayout) -> Result<Image> {
    crop(stylized, &layout.background)
}

fn feather_weight(b: &Rect, x: usize, y: usize, feather: usize) -> f64 {
    if feather == 0 {
        return 1.0;
    }
    // 1-based distance to the nearest box edge
    let d = (x - b.x + 1)
        .min(b.right() - x)
        .min(y - b.y + 1)
        .min(b.bottom() - y);
    (d as f64 / feather as f64).min(1.0)
}

/// Pastes each face tile back over its box. Larger faces go first so smaller
/// overlapping faces stay visible. `feather > 0` ramps the blend weight
/// linearly to `d / feather` for pixels `d ≤ feather` from the box edge.
pub fn reinsert_faces(
    background: &Image,
    faces: &[(u32, Image)],
    boxes: &[FaceBox],
    feather: usize,
) -> Result<Image> {
    validate_boxes(boxes, background.width(), background.height())?;
    let by_id: HashMap<u32, &FaceBox> = boxes.iter().map(|b| (b.id, b)).collect();
    let mut ordered = Vec::with_capacity(faces.len());
    for (id, face) in faces {
        let b = by_id
            .get(id)
            .ok_or_else(|| Error::param(format!("unknown face id {id}")))?;
        ordered.push((*b, face));
    }
    ordered.sort_by(|a, b| b.0.area().cmp(&a.0.area()).then(a.0.id.cmp(&b.0.id)));

    let mut out = background.clone();
    let c = out.channels();
    for (b, face) in ordered {
        let inner = letterbox_rect(b.w, b.h, face.width(), face.height());
        let face = with_channels(&crop(face, &inner)?, c);
        let patch = resize(&face, b.w, b.h, ResampleKernel::Bicubic)?;
        let rect = b.rect();
        for py in 0..b.h {
            for px in 0..b.w {
                let (x, y) = (b.x + px, b.y + py);
                let wgt = feather_weight(&rect, x, y, feather);
                for ch in 0..c {
                    let v = if wgt >= 1.0 {
                        patch.get(px, py, ch)
                    } else {
                        wgt * patch.get(px, py, ch) + (1.0 - wgt) * out.get(x, y, ch)
                    };
                    out.set(x, y, ch, v);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleMosaicSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: usize,
}

/// Grid of style references, row-major; empty cells are mid-gray.
pub fn build_style_mosaic(styles: &[Image], spec: &StyleMosaicSpec) -> Result<Image> {
    if spec.rows == 0 || spec.cols == 0 || spec.cell_size == 0 {
        return Err(Error::param(
            "style mosaic rows, cols and cell size must be positive",
        ));
    }
    if styles.len() > spec.rows * spec.cols {
        return Err(Error::param(format!(
            "{} style images exceed a {}x{} grid",
            styles.len(),
            spec.rows,
            spec.cols
        )));
    }
    let channels = styles.iter().map(Image::channels).max().unwrap_or(3);
    let cell = spec.cell_size;
    let mut canvas = Image::filled(spec.cols * cell, spec.rows * cell, channels, MID_GRAY);
    for (i, s) in styles.iter().enumerate() {
        let resized = resize(
            &with_channels(s, channels),
            cell,
            cell,
            ResampleKernel::Bicubic,
        )?;
        paste(
            &mut canvas,
            &resized,
            (i % spec.cols) * cell,
            (i / spec.cols) * cell,
        )?;
    }
    Ok(canvas)
}
