//! Post-processing degradations (JPEG, Gaussian blur, downscaling) and the
//! FFT high-pass used for frequency-enhanced models.
//!
//! Every transform keeps the image dimensions, so a detector sees the same
//! input size under every condition.

use std::fmt;
use std::str::FromStr;

use jpeg_encoder::{ChromaSubsamplingMethod, ColorType, Encoder, SamplingFactor};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imaging::{self, ImageTensor, RangeTag, CHANNELS};

/// Default high-pass radius as a fraction of the smaller image side.
pub const DEFAULT_CUTOFF_FRAC: f64 = 0.06;

/// One post-processing condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Clean,
    Jpeg { quality: u8 },
    Blur { sigma: f64 },
    Downscale { factor: f64 },
}

impl Condition {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Condition::Clean => Ok(()),
            Condition::Jpeg { quality } if (1..=100).contains(&quality) => Ok(()),
            Condition::Jpeg { quality } => Err(Error::Contract(format!(
                "JPEG quality {quality} outside [1, 100]"
            ))),
            Condition::Blur { sigma } if sigma > 0.0 && sigma.is_finite() => Ok(()),
            Condition::Blur { sigma } => {
                Err(Error::Contract(format!("blur sigma {sigma} must be > 0")))
            }
            Condition::Downscale { factor } if factor > 0.0 && factor <= 1.0 => Ok(()),
            Condition::Downscale { factor } => Err(Error::Contract(format!(
                "downscale factor {factor} outside (0, 1]"
            ))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Jpeg { .. } => "jpeg",
            Condition::Blur { .. } => "blur",
            Condition::Downscale { .. } => "downscale",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Clean => f.write_str("clean"),
            Condition::Jpeg { quality } => write!(f, "jpeg_q{quality}"),
            Condition::Blur { sigma } => write!(f, "blur_s{sigma}"),
            Condition::Downscale { factor } => write!(f, "downscale_{factor}"),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    /// Accepts the canonical names (`clean`, `jpeg_q60`, `blur_s3`,
    /// `downscale_0.5`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Contract(format!("unknown condition '{s}'"));
        let cond = if s == "clean" {
            Condition::Clean
        } else if let Some(q) = s.strip_prefix("jpeg_q") {
            Condition::Jpeg {
                quality: q.parse().map_err(|_| bad())?,
            }
        } else if let Some(v) = s.strip_prefix("blur_s") {
            Condition::Blur {
                sigma: v.parse().map_err(|_| bad())?,
            }
        } else if let Some(v) = s.strip_prefix("downscale_") {
            Condition::Downscale {
                factor: v.parse().map_err(|_| bad())?,
            }
        } else {
            return Err(bad());
        };
        cond.validate()?;
        Ok(cond)
    }
}

impl Serialize for Condition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered list of conditions with `clean` first and exactly once.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ConditionGrid(Vec<Condition>);

impl ConditionGrid {
    pub fn new(conditions: Vec<Condition>) -> Result<Self> {
        if conditions.first() != Some(&Condition::Clean) {
            return Err(Error::Contract("condition grid must start with clean".into()));
        }
        if conditions.iter().filter(|c| **c == Condition::Clean).count() != 1 {
            return Err(Error::Contract("condition grid must contain clean exactly once".into()));
        }
        for c in &conditions {
            c.validate()?;
        }
        let mut names: Vec<String> = conditions.iter().map(|c| c.to_string()).collect();
        names.sort();
        names.dedup();
        if names.len() != conditions.len() {
            return Err(Error::Contract("condition grid has duplicates".into()));
        }
        Ok(Self(conditions))
    }

    /// clean, JPEG Q95/85/75/60, blur sigma 3/5/7, downscale 0.75x/0.5x.
    pub fn standard() -> Self {
        Self(vec![
            Condition::Clean,
            Condition::Jpeg { quality: 95 },
            Condition::Jpeg { quality: 85 },
            Condition::Jpeg { quality: 75 },
            Condition::Jpeg { quality: 60 },
            Condition::Blur { sigma: 3.0 },
            Condition::Blur { sigma: 5.0 },
            Condition::Blur { sigma: 7.0 },
            Condition::Downscale { factor: 0.75 },
            Condition::Downscale { factor: 0.5 },
        ])
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Condition> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<'de> Deserialize<'de> for ConditionGrid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<Condition>::deserialize(d)?;
        ConditionGrid::new(v).map_err(serde::de::Error::custom)
    }
}

impl FromStr for ConditionGrid {
    type Err = Error;

    /// `default` or a comma-separated list of condition names.
    fn from_str(s: &str) -> Result<Self> {
        if s == "default" {
            return Ok(Self::standard());
        }
        let conds = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<_>>>()?;
        Self::new(conds)
    }
}

/// Encode to baseline JPEG at `quality` and decode back.
///
/// Chroma is subsampled 4:2:0 below quality 90 and kept at 4:4:4 from 90 up.
pub fn jpeg_roundtrip(img: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    img.require_unit("jpeg_roundtrip")?;
    Condition::Jpeg { quality }.validate()?;
    let bytes = jpeg_encode(&imaging::to_u8(img)?, quality)?;
    let decoded = imaging::decode_image(&bytes).map_err(Error::Transform)?;
    if decoded.height != img.height || decoded.width != img.width {
        return Err(Error::Transform("JPEG decoder changed the image size".into()));
    }
    Ok(imaging::to_unit(&decoded))
}

pub(crate) fn jpeg_encode(img: &imaging::ImageU8, quality: u8) -> Result<Vec<u8>> {
    let (w, h) = (
        u16::try_from(img.width).map_err(|_| Error::Transform("image too wide for JPEG".into()))?,
        u16::try_from(img.height).map_err(|_| Error::Transform("image too tall for JPEG".into()))?,
    );
    let mut out = Vec::new();
    let mut enc = Encoder::new(&mut out, quality);
    enc.set_sampling_factor(if quality >= 90 {
        SamplingFactor::R_4_4_4
    } else {
        SamplingFactor::R_4_2_0
    });
    enc.set_chroma_subsampling_method(ChromaSubsamplingMethod::Average);
    enc.encode(&img.data, w, h, ColorType::Rgb)
        .map_err(|e| Error::Transform(format!("JPEG encode: {e}")))?;
    Ok(out)
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    img.require_unit("gaussian_blur")?;
    Condition::Blur { sigma }.validate()?;
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = (img.height as isize, img.width as isize);

    let mut tmp = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; CHANNELS];
            for (i, kv) in k.iter().enumerate() {
                let sx = (x + i as isize - r).clamp(0, w - 1) as usize;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += kv * img.at(y as usize, sx, c);
                }
            }
            let base = (y as usize * img.width + x as usize) * CHANNELS;
            tmp[base..base + CHANNELS].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; CHANNELS];
            for (i, kv) in k.iter().enumerate() {
                let sy = (y + i as isize - r).clamp(0, h - 1) as usize;
                let base = (sy * img.width + x as usize) * CHANNELS;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += kv * tmp[base + c];
                }
            }
            let base = (y as usize * img.width + x as usize) * CHANNELS;
            out[base..base + CHANNELS].copy_from_slice(&acc);
        }
    }
    Ok(ImageTensor {
        height: img.height,
        width: img.width,
        data: out,
        range: RangeTag::Unit,
    }
    .clamp_unit())
}

/// Bicubic down to `round(H*factor) x round(W*factor)` and back up to the
/// original size.
pub fn downscale(img: &ImageTensor, factor: f64) -> Result<ImageTensor> {
    img.require_unit("downscale")?;
    Condition::Downscale { factor }.validate()?;
    let sh = ((img.height as f64 * factor).round() as usize).max(1);
    let sw = ((img.width as f64 * factor).round() as usize).max(1);
    let small = imaging::resize_bicubic(img, sh, sw)?;
    imaging::resize_bicubic(&small, img.height, img.width)
}

/// Squared radial distance of FFT bin `(ky, kx)` from DC on centered integer
/// frequency coordinates.
fn radial_dist2(ky: usize, kx: usize, h: usize, w: usize) -> f64 {
    let fy = if ky <= h / 2 { ky as f64 } else { ky as f64 - h as f64 };
    let fx = if kx <= w / 2 { kx as f64 } else { kx as f64 - w as f64 };
    fy * fy + fx * fx
}

/// True when bin `(ky, kx)` lies inside the stop disk of radius
/// `cutoff_frac * min(h, w)`.
pub fn in_stop_band(ky: usize, kx: usize, h: usize, w: usize, cutoff_frac: f64) -> bool {
    let radius = cutoff_frac * h.min(w) as f64;
    radial_dist2(ky, kx, h, w) < radius * radius
}

/// Forward 2-D FFT of one channel, row-major `h x w`.
pub fn fft2(plane: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2_in_place(&mut buf, h, w, false);
    buf
}

fn fft2_in_place(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(buf);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

/// Per-channel FFT high-pass: zero every coefficient closer to DC than
/// `cutoff_frac * min(H, W)` and keep the real part of the inverse.
pub fn highpass_fft(img: &ImageTensor, cutoff_frac: f64) -> Result<ImageTensor> {
    if !(cutoff_frac > 0.0 && cutoff_frac < 0.5) {
        return Err(Error::Contract(format!(
            "cutoff fraction {cutoff_frac} outside (0, 0.5)"
        )));
    }
    let (h, w) = (img.height, img.width);
    let n = (h * w) as f64;
    let mut out = vec![0.0; img.data.len()];
    for c in 0..CHANNELS {
        let plane: Vec<f64> = img.data.iter().skip(c).step_by(CHANNELS).copied().collect();
        let mut spec = fft2(&plane, h, w);
        for ky in 0..h {
            for kx in 0..w {
                if in_stop_band(ky, kx, h, w, cutoff_frac) {
                    spec[ky * w + kx] = Complex::new(0.0, 0.0);
                }
            }
        }
        fft2_in_place(&mut spec, h, w, true);
        for (i, v) in spec.iter().enumerate() {
            out[i * CHANNELS + c] = v.re / n;
        }
    }
    Ok(ImageTensor {
        height: h,
        width: w,
        data: out,
        range: RangeTag::Normalized,
    })
}

/// Apply `cond` to a unit-range image. `Clean` returns an exact copy.
pub fn apply_condition(img: &ImageTensor, cond: &Condition) -> Result<ImageTensor> {
    img.require_unit("apply_condition")?;
    cond.validate()?;
    match *cond {
        Condition::Clean => Ok(img.clone()),
        Condition::Jpeg { quality } => jpeg_roundtrip(img, quality),
        Condition::Blur { sigma } => gaussian_blur(img, sigma),
        Condition::Downscale { factor } => downscale(img, factor),
    }
}
