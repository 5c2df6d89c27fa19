//! End-to-end stylization: encode, invert, guided sampling, decode, with an
//! optional face-mosaic wrapper, plus seeded synthetic fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode, encode, CodecConfig, CodecMode};
use crate::denoise::{
    GaussianPriorPredictor, NoisePredictor, PointMassPredictor, StylePullPredictor,
};
use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;
use crate::imageio::{crop, resize, with_channels, Image, Rect, ResampleKernel};
use crate::latent::Latent;
use crate::mosaic::{
    build_content_mosaic, extract_background, extract_stylized_faces, reinsert_faces, FaceBox,
    MosaicLayout, Upscaler,
};
use crate::sampler::{invert, sample, InversionConfig, SampleTrace};
use crate::schedule::NoiseSchedule;

pub trait Stylizer {
    fn stylize(&self, img: &Image) -> Result<Image>;
}

pub struct IdentityStylizer;

impl Stylizer for IdentityStylizer {
    fn stylize(&self, img: &Image) -> Result<Image> {
        Ok(img.clone())
    }
}

impl<F: Fn(&Image) -> Result<Image>> Stylizer for F {
    fn stylize(&self, img: &Image) -> Result<Image> {
        self(img)
    }
}

/// Which analytic denoiser drives the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum PredictorSpec {
    /// Point mass at the content latent.
    #[default]
    PointMass,
    /// Point mass at a blend of content and style latents.
    StylePull { gamma: f64 },
    /// Gaussian prior centred on the content latent.
    GaussianPrior { sigma2: f64 },
}

pub struct DiffusionStylizer {
    pub schedule: NoiseSchedule,
    pub codec: CodecConfig,
    pub inference_steps: usize,
    pub inversion: InversionConfig,
    pub guidance: GuidanceConfig,
    pub predictor: PredictorSpec,
    /// Style reference, resized to each input before encoding.
    pub style: Option<Image>,
}

impl DiffusionStylizer {
    pub fn new(predictor: PredictorSpec, style: Option<Image>) -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            codec: CodecConfig::default(),
            inference_steps: 10,
            inversion: InversionConfig::default(),
            guidance: GuidanceConfig::default(),
            predictor,
            style,
        }
    }

    fn build_predictor(&self, x_c: &Latent, padded: &Image) -> Result<Box<dyn NoisePredictor>> {
        Ok(match self.predictor {
            PredictorSpec::PointMass => Box::new(PointMassPredictor::new(x_c.clone())),
            PredictorSpec::GaussianPrior { sigma2 } => {
                Box::new(GaussianPriorPredictor::new(x_c.clone(), sigma2)?)
            }
            PredictorSpec::StylePull { gamma } => {
                let style = self.style.as_ref().ok_or_else(|| {
                    Error::Config("style_pull predictor needs a style image".into())
                })?;
                let style = resize(
                    &with_channels(style, padded.channels()),
                    padded.width(),
                    padded.height(),
                    ResampleKernel::Bicubic,
                )?;
                Box::new(StylePullPredictor::new(
                    x_c,
                    &encode(&style, &self.codec)?,
                    gamma,
                )?)
            }
        })
    }

    fn pad(&self, img: &Image) -> Image {
        match self.codec.mode {
            CodecMode::Identity => img.clone(),
            CodecMode::Pool => pad_to_multiple(img, self.codec.factor.max(1)),
        }
    }

    /// The latent sampling is guided toward: the encoded, edge-padded input.
    pub fn content_latent(&self, img: &Image) -> Result<Latent> {
        encode(&self.pad(img), &self.codec)
    }

    /// Stylize and also return the sampling trace.
    pub fn stylize_traced(&self, img: &Image) -> Result<(Image, SampleTrace)> {
        let padded = self.pad(img);
        let x_c = encode(&padded, &self.codec)?;
        let predictor = self.build_predictor(&x_c, &padded)?;
        let z_t = invert(&x_c, &*predictor, &self.schedule, &self.inversion)?;
        let plan = self.schedule.plan(self.inference_steps)?;
        let trace = sample(
            &z_t,
            &*predictor,
            &self.schedule,
            &plan,
            &x_c,
            &self.guidance,
        )?;
        let out = decode(trace.final_latent(), &self.codec)?;
        let out = crop(&out, &Rect::new(0, 0, img.width(), img.height()))?;
        Ok((out, trace))
    }
}

impl Stylizer for DiffusionStylizer {
    fn stylize(&self, img: &Image) -> Result<Image> {
        Ok(self.stylize_traced(img)?.0)
    }
}

/// Edge-replicates the right and bottom borders up to a multiple of `f`.
pub fn pad_to_multiple(img: &Image, f: usize) -> Image {
    let (w, h) = img.dims();
    let (pw, ph) = (w.div_ceil(f) * f, h.div_ceil(f) * f);
    if (pw, ph) == (w, h) {
        return img.clone();
    }
    Image::from_fn(pw, ph, img.channels(), |x, y, c| {
        img.get(x.min(w - 1), y.min(h - 1), c)
    })
    .expect("padding keeps values in range")
}

pub fn stylize_plain(img: &Image, stylizer: &dyn Stylizer) -> Result<Image> {
    let out = stylizer.stylize(img)?;
    if out.dims() != img.dims() {
        return Err(Error::shape("stylizer changed the image size"));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MosaicRun {
    pub output: Image,
    pub canvas: Image,
    pub stylized_canvas: Image,
    pub layout: MosaicLayout,
}

/// Build the content mosaic, stylize it as one image, then cut the faces out
/// and paste them back over the stylized background.
pub fn stylize_with_mosaic(
    img: &Image,
    boxes: &[FaceBox],
    stylizer: &dyn Stylizer,
    upscaler: &dyn Upscaler,
    tile_size: usize,
    feather: usize,
) -> Result<MosaicRun> {
    let (canvas, layout) = build_content_mosaic(img, boxes, upscaler, tile_size)?;
    let stylized_canvas = stylizer.stylize(&canvas)?;
    let faces = extract_stylized_faces(&stylized_canvas, &layout)?;
    let background = extract_background(&stylized_canvas, &layout)?;
    let output = reinsert_faces(&background, &faces, boxes, feather)?;
    Ok(MosaicRun {
        output,
        canvas,
        stylized_canvas,
        layout,
    })
}

/// A synthetic content image with textured "faces" and their boxes.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub image: Image,
    pub boxes: Vec<FaceBox>,
}

fn smooth_background(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
    let (fx, fy) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    Image::from_fn(w, h, 3, |x, y, c| {
        let u = x as f64 / w as f64 * fx * std::f64::consts::TAU;
        let v = y as f64 / h as f64 * fy * std::f64::consts::TAU;
        base[c] + 0.15 * (u + phase + c as f64).sin() * (v - phase).cos()
    })
    .expect("fixture in range")
}

fn paint_face(img: &mut Image, rng: &mut ChaCha8Rng, b: &FaceBox) {
    let skin: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.35..0.75));
    let fx = rng.random_range(1.5..3.5);
    let fy = rng.random_range(1.5..3.5);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    // eyes and mouth as dark spots at jittered positions
    let spots: Vec<(f64, f64, f64)> = [(0.3, 0.35), (0.7, 0.35), (0.5, 0.72)]
        .iter()
        .map(|&(sx, sy)| {
            (
                sx + rng.random_range(-0.05..0.05),
                sy + rng.random_range(-0.05..0.05),
                rng.random_range(0.08..0.14),
            )
        })
        .collect();
    for py in 0..b.h {
        for px in 0..b.w {
            let u = (px as f64 + 0.5) / b.w as f64;
            let v = (py as f64 + 0.5) / b.h as f64;
            let tex = 0.18
                * (u * fx * std::f64::consts::TAU + phase).sin()
                * (v * fy * std::f64::consts::TAU).cos();
            let dark: f64 = spots
                .iter()
                .map(|&(sx, sy, r)| {
                    let d2 = ((u - sx).powi(2) + (v - sy).powi(2)) / (r * r);
                    0.45 * (-d2).exp()
                })
                .sum();
            for (c, s) in skin.iter().enumerate() {
                img.set(b.x + px, b.y + py, c, s + tex - dark);
            }
        }
    }
}

/// Seeded fixture of size `w × h` with `n_faces` non-overlapping square
/// faces whose side lies in `side`.
pub fn synth_fixture(
    seed: u64,
    w: usize,
    h: usize,
    n_faces: usize,
    side: std::ops::Range<usize>,
) -> Result<Fixture> {
    if side.is_empty() || side.end > w.min(h) + 1 {
        return Err(Error::param(format!(
            "face side range {side:?} does not fit {w}x{h}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = smooth_background(&mut rng, w, h);
    let mut boxes: Vec<FaceBox> = Vec::with_capacity(n_faces);
    let mut attempts = 0;
    while boxes.len() < n_faces {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::param("could not place non-overlapping faces"));
        }
        let s = rng.random_range(side.clone());
        let b = FaceBox::new(
            0,
            rng.random_range(0..=w - s),
            rng.random_range(0..=h - s),
            s,
            s,
        );
        if boxes.iter().any(|o| o.rect().intersects(&b.rect())) {
            continue;
        }
        paint_face(&mut image, &mut rng, &b);
        boxes.push(b);
    }
    boxes.sort_by_key(|b| std::cmp::Reverse(b.area()));
    for (i, b) in boxes.iter_mut().enumerate() {
        b.id = i as u32;
    }
    Ok(Fixture { image, boxes })
}

/// Seeded high-contrast stripe pattern used as a style reference.
pub fn synth_style(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let b: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let period = rng.random_range(6.0..14.0);
    Image::from_fn(w, h, 3, |x, y, c| {
        let s = ((x + 2 * y) as f64 / period * std::f64::consts::TAU).sin();
        if s >= 0.0 {
            a[c]
        } else {
            b[c]
        }
    })
    .expect("style in range")
}

/// Pool-8 codec with a style pull: small faces lose most of their detail
/// unless they are enlarged first.
pub fn toy_degrading_stylizer(style: Image) -> DiffusionStylizer {
    DiffusionStylizer {
        codec: CodecConfig::pool(8),
        ..DiffusionStylizer::new(PredictorSpec::StylePull { gamma: 0.5 }, Some(style))
    }
}
