//! Image I/O and model-input preprocessing: bicubic resizing and per-channel
//! normalization.

use std::path::Path;

use image::{ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Contract("image dimensions must be positive".into()));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Contract(format!(
                "expected {} samples for {height}x{width} RGB, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }
}

/// What value range an [`ImageTensor`] lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeTag {
    /// Samples in `[0, 1]`.
    Unit,
    /// Samples after mean/std normalization or filtering; unbounded.
    Normalized,
}

/// Real-valued three-channel image, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub range: RangeTag,
}

pub const CHANNELS: usize = 3;

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>, range: RangeTag) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Contract("image dimensions must be positive".into()));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::Contract(format!(
                "expected {} samples for {height}x{width}x3, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("image samples must be finite".into()));
        }
        if range == RangeTag::Unit && data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Contract("unit-range image has samples outside [0,1]".into()));
        }
        Ok(Self {
            height,
            width,
            data,
            range,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64, range: RangeTag) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
            range,
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f64 {
        &mut self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn require_unit(&self, op: &str) -> Result<()> {
        if self.range != RangeTag::Unit {
            return Err(Error::Contract(format!("{op} expects a unit-range image")));
        }
        Ok(())
    }

    /// Clamp into `[0, 1]` and retag as unit range.
    pub(crate) fn clamp_unit(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self.range = RangeTag::Unit;
        self
    }
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    pub const IMAGENET: NormStats = NormStats {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Contract("normalization std must be positive".into()));
        }
        Ok(Self { mean, std })
    }
}

impl Default for NormStats {
    fn default() -> Self {
        Self::IMAGENET
    }
}

/// Decode a PNG or JPEG file to 8-bit RGB. Grayscale and alpha inputs are
/// converted (gray replicated across the three channels, alpha dropped).
pub fn load_image(path: &Path) -> Result<ImageU8> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

pub(crate) fn decode_image(bytes: &[u8]) -> std::result::Result<ImageU8, String> {
    let reader = ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    match reader.format() {
        Some(ImageFormat::Png) => {}
        Some(ImageFormat::Jpeg) => return decode_jpeg(bytes),
        Some(other) => return Err(format!("unsupported format {other:?}")),
        None => return Err("unrecognized image format".into()),
    }
    let decoded = reader.decode().map_err(|e| e.to_string())?.to_rgb8();
    let (w, h) = decoded.dimensions();
    Ok(ImageU8 {
        height: h as usize,
        width: w as usize,
        data: decoded.into_raw(),
    })
}

/// JPEG goes through libjpeg-turbo's decoder (islow IDCT, fancy chroma
/// upsampling) so decoded samples match the common reference codec exactly.
fn decode_jpeg(bytes: &[u8]) -> std::result::Result<ImageU8, String> {
    // libjpeg reports fatal errors by unwinding.
    std::panic::catch_unwind(|| -> std::io::Result<ImageU8> {
        let mut img = mozjpeg::Decompress::new_mem(bytes)?.rgb()?;
        let (width, height) = (img.width(), img.height());
        let px: Vec<[u8; 3]> = img.read_scanlines()?;
        img.finish()?;
        Ok(ImageU8 {
            height,
            width,
            data: px.into_iter().flatten().collect(),
        })
    })
    .map_err(|_| "corrupt JPEG data".to_string())?
    .map_err(|e| e.to_string())
}

/// Write an 8-bit RGB image as PNG. PNG output carries no metadata chunks
/// beyond what the encoder requires.
pub fn save_png(img: &ImageU8, path: &Path) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .ok_or_else(|| Error::Contract("image buffer does not match its dimensions".into()))?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}

pub fn to_unit(img: &ImageU8) -> ImageTensor {
    ImageTensor {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
        range: RangeTag::Unit,
    }
}

/// Quantize a unit-range tensor back to 8 bits (round to nearest).
pub fn to_u8(img: &ImageTensor) -> Result<ImageU8> {
    img.require_unit("to_u8")?;
    Ok(ImageU8 {
        height: img.height,
        width: img.width,
        data: img
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect(),
    })
}

pub fn normalize(img: &ImageTensor, stats: &NormStats) -> Result<ImageTensor> {
    img.require_unit("normalize")?;
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(CHANNELS) {
        for c in 0..CHANNELS {
            px[c] = (px[c] - stats.mean[c]) / stats.std[c];
        }
    }
    out.range = RangeTag::Normalized;
    Ok(out)
}

/// Inverse of [`normalize`]. The result is tagged unit range only if every
/// sample lands in `[0, 1]`.
pub fn denormalize(img: &ImageTensor, stats: &NormStats) -> ImageTensor {
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(CHANNELS) {
        for c in 0..CHANNELS {
            px[c] = px[c] * stats.std[c] + stats.mean[c];
        }
    }
    out.range = if out.data.iter().all(|v| (0.0..=1.0).contains(v)) {
        RangeTag::Unit
    } else {
        RangeTag::Normalized
    };
    out
}

/// Catmull-Rom cubic (a = -0.5).
pub fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and weights for one output coordinate.
struct Taps {
    start: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl Taps {
    /// Pixel-center aligned sampling positions. Downsampling stretches the
    /// kernel by the inverse scale so it also acts as the antialiasing filter.
    fn new(in_len: usize, out_len: usize) -> Self {
        let scale = out_len as f64 / in_len as f64;
        let stretch = if scale < 1.0 { 1.0 / scale } else { 1.0 };
        let support = 2.0 * stretch;
        let mut start = Vec::with_capacity(out_len + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for o in 0..out_len {
            start.push(indices.len());
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let first = weights.len();
            let mut sum = 0.0;
            for i in lo..=hi {
                let w = catmull_rom((i as f64 - center) / stretch);
                if w == 0.0 {
                    continue;
                }
                indices.push(i.clamp(0, in_len as isize - 1) as usize);
                weights.push(w);
                sum += w;
            }
            for w in &mut weights[first..] {
                *w /= sum;
            }
        }
        start.push(indices.len());
        Self {
            start,
            indices,
            weights,
        }
    }

    fn taps(&self, o: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.start[o]..self.start[o + 1];
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }
}

/// Separable Catmull-Rom resize with edge clamping. The same kernel is used
/// for every image, whatever its label or source.
pub fn resize_bicubic(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Contract("resize target must be at least 1x1".into()));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let xt = Taps::new(img.width, out_w);
    let yt = Taps::new(img.height, out_h);

    let mut rows = vec![0.0; img.height * out_w * CHANNELS];
    for y in 0..img.height {
        for ox in 0..out_w {
            let mut acc = [0.0; CHANNELS];
            for (ix, w) in xt.taps(ox) {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += w * img.at(y, ix, c);
                }
            }
            let base = (y * out_w + ox) * CHANNELS;
            rows[base..base + CHANNELS].copy_from_slice(&acc);
        }
    }

    let mut out = vec![0.0; out_h * out_w * CHANNELS];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut acc = [0.0; CHANNELS];
            for (iy, w) in yt.taps(oy) {
                let base = (iy * out_w + ox) * CHANNELS;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += w * rows[base + c];
                }
            }
            let base = (oy * out_w + ox) * CHANNELS;
            out[base..base + CHANNELS].copy_from_slice(&acc);
        }
    }

    let resized = ImageTensor {
        height: out_h,
        width: out_w,
        data: out,
        range: img.range,
    };
    // Cubic overshoot can leave [0,1] slightly.
    Ok(match img.range {
        RangeTag::Unit => resized.clamp_unit(),
        RangeTag::Normalized => resized,
    })
}
