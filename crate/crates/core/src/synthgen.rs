//! Synthetic two-class image sets with one fragile cue and one robust cue.
//!
//! Both classes are smooth scenes: a dim linear-gradient background with a few
//! bright soft-edged discs. The AI class adds a faint cosine grid at a
//! short period (destroyed by blur and strong JPEG) and places its discs
//! higher in the frame than the real class (survives every degradation).
//! The grid's sign is drawn per image, so only detectors that respond to its
//! energy, not its polarity, can use it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, ManifestEntry};
use crate::error::{Error, Result};
use crate::imaging::{self, ImageTensor, ImageU8, RangeTag, CHANNELS};
use crate::transforms::fft2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CueSpec {
    /// Grid amplitude in unit intensity.
    pub forensic_strength: f64,
    /// Grid period in pixels.
    pub forensic_period: usize,
    /// Vertical separation of disc placement between classes, in `[0, 1]`.
    pub semantic_strength: f64,
    pub image_size: usize,
    pub n_per_class: usize,
    pub seed: u64,
    /// Train/val/test fractions used by `write_dataset`.
    pub split: [f64; 3],
}

impl Default for CueSpec {
    fn default() -> Self {
        Self {
            forensic_strength: 0.02,
            forensic_period: 3,
            semantic_strength: 0.8,
            image_size: 64,
            n_per_class: 1500,
            seed: 0,
            split: [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        }
    }
}

impl CueSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.forensic_strength) || !unit(self.semantic_strength) {
            return Err(Error::Contract("cue strengths must lie in [0, 1]".into()));
        }
        if self.forensic_strength == 0.0 && self.semantic_strength == 0.0 {
            return Err(Error::Contract("at least one cue strength must be positive".into()));
        }
        if self.n_per_class == 0 {
            return Err(Error::Contract("n_per_class must be at least 1".into()));
        }
        if self.forensic_period < 2 || self.forensic_period > self.image_size {
            return Err(Error::Contract(format!(
                "forensic_period must be in 2..={}",
                self.image_size
            )));
        }
        if self.image_size < 8 {
            return Err(Error::Contract("image_size must be at least 8".into()));
        }
        check_fractions(&self.split)
    }
}

fn check_fractions(f: &[f64]) -> Result<()> {
    if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("split fractions {f:?} must be in [0, 1] and sum to 1")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    pub label: bool,
    pub image: ImageU8,
    pub blob_count: usize,
}

/// Per-image cue measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CueStats {
    /// Mean squared FFT magnitude of luminance at the grid's fundamental.
    pub band_energy: f64,
    /// Top-half minus bottom-half mean luminance.
    pub layout: f64,
}

fn class_name(label: bool) -> &'static str {
    if label {
        "ai"
    } else {
        "real"
    }
}

/// Generate `n_per_class` images per class. Image `i` of a class draws from
/// its own ChaCha stream, so any subset can be regenerated independently.
pub fn generate(spec: &CueSpec) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(2 * spec.n_per_class);
    for label in [false, true] {
        for i in 0..spec.n_per_class {
            out.push(generate_one(spec, label, i));
        }
    }
    Ok(out)
}

pub fn generate_one(spec: &CueSpec, label: bool, index: usize) -> SynthImage {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(((index as u64) << 1) | u64::from(label));
    let n = spec.image_size;
    let nf = n as f64;
    let mut img = vec![0.0; n * n * CHANNELS];

    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.10..0.30));
    let gy = rng.random_range(-0.08..0.08);
    let gx = rng.random_range(-0.08..0.08);
    for y in 0..n {
        for x in 0..n {
            let t = gy * (y as f64 / nf - 0.5) + gx * (x as f64 / nf - 0.5);
            for c in 0..CHANNELS {
                img[(y * n + x) * CHANNELS + c] = base[c] + t;
            }
        }
    }

    // Disc centres: AI discs sit in the upper band, real ones in the lower band.
    let s = spec.semantic_strength;
    let (lo, hi) = if label { (0.0, 1.0 - s / 2.0) } else { (s / 2.0, 1.0) };
    let blob_count = rng.random_range(3..=5);
    for _ in 0..blob_count {
        let cy = rng.random_range(lo..=hi) * nf;
        let cx = rng.random_range(0.0..1.0) * nf;
        let r = rng.random_range(0.07..0.13) * nf;
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.55..0.9));
        for y in 0..n {
            for x in 0..n {
                let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
                let a = smoothstep(r + 1.0, r - 1.0, d);
                if a > 0.0 {
                    for c in 0..CHANNELS {
                        let p = &mut img[(y * n + x) * CHANNELS + c];
                        *p = (1.0 - a) * *p + a * color[c];
                    }
                }
            }
        }
    }

    if label && spec.forensic_strength > 0.0 {
        let p = spec.forensic_period;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (oy, ox) = (rng.random_range(0..p), rng.random_range(0..p));
        let amp = sign * spec.forensic_strength;
        for y in 0..n {
            for x in 0..n {
                let g = amp * wave(y + oy, p) * wave(x + ox, p);
                for c in 0..CHANNELS {
                    img[(y * n + x) * CHANNELS + c] += g;
                }
            }
        }
    }

    let data = img.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    SynthImage {
        id: format!("{}_{index:05}", class_name(label)),
        label,
        image: ImageU8 {
            height: n,
            width: n,
            data,
        },
        blob_count,
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Zero-mean periodic profile sampled at integer pixels.
fn wave(i: usize, period: usize) -> f64 {
    (std::f64::consts::TAU * (i % period) as f64 / period as f64).cos()
}

fn luminance(img: &ImageTensor) -> Vec<f64> {
    img.data
        .chunks_exact(CHANNELS)
        .map(|px| px.iter().sum::<f64>() / CHANNELS as f64)
        .collect()
}

/// Measure both cues on a unit-range image. `period` is the grid period the
/// band energy is read at.
pub fn cue_stats(img: &ImageTensor, period: usize) -> Result<CueStats> {
    img.require_unit("cue_stats")?;
    let (h, w) = (img.height, img.width);
    if period < 2 || period > h.min(w) {
        return Err(Error::Contract(format!("period {period} does not fit a {h}x{w} image")));
    }
    let lum = luminance(img);
    let spec = fft2(&lum, h, w);
    let fy = (h as f64 / period as f64).round() as usize % h;
    let fx = (w as f64 / period as f64).round() as usize % w;
    let mut bins = vec![(fy, fx), ((h - fy) % h, fx), (fy, (w - fx) % w), ((h - fy) % h, (w - fx) % w)];
    bins.sort_unstable();
    bins.dedup();
    let n2 = ((h * w) as f64).powi(2);
    let band_energy = bins.iter().map(|&(y, x)| spec[y * w + x].norm_sqr()).sum::<f64>() / n2;

    let half = h / 2;
    let mean = |rows: std::ops::Range<usize>| {
        let len = rows.len() * w;
        rows.flat_map(|y| lum[y * w..(y + 1) * w].iter().copied()).sum::<f64>() / len as f64
    };
    let layout = mean(0..half) - mean(h - half..h);
    Ok(CueStats { band_energy, layout })
}

/// Difference of class means (`ai - real`) of a per-image statistic.
pub fn class_gap(values: &[f64], labels: &[bool]) -> Result<f64> {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (&v, &l) in values.iter().zip(labels) {
        sums[usize::from(l)] += v;
        counts[usize::from(l)] += 1;
    }
    if counts.contains(&0) || values.len() != labels.len() {
        return Err(Error::Contract("class_gap needs both classes and matching lengths".into()));
    }
    Ok(sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64)
}

/// Label-stratified, seed-deterministic split into `fractions.len()` parts.
/// Within each class the items are shuffled and cut at rounded cumulative
/// fractions.
pub fn split(manifest: &[ManifestEntry], fractions: &[f64], seed: u64) -> Result<Vec<Vec<ManifestEntry>>> {
    use rand::seq::SliceRandom;
    check_fractions(fractions)?;
    let mut parts = vec![Vec::new(); fractions.len()];
    for label in [false, true] {
        let mut items: Vec<&ManifestEntry> = manifest.iter().filter(|e| e.label == label).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(label));
        items.shuffle(&mut rng);
        let n = items.len() as f64;
        let mut start = 0;
        let mut acc = 0.0;
        for (k, f) in fractions.iter().enumerate() {
            acc += f;
            let end = if k + 1 == fractions.len() { items.len() } else { (acc * n).round() as usize };
            parts[k].extend(items[start..end.max(start)].iter().map(|e| (*e).clone()));
            start = end.max(start);
        }
    }
    if let Some(k) = parts.iter().position(|p| p.is_empty()) {
        return Err(Error::Generation(format!("split {k} is empty")));
    }
    Ok(parts)
}

#[derive(Debug, Serialize)]
struct CueRow<'a> {
    id: &'a str,
    label: u8,
    blob_count: usize,
    band_energy: f64,
    layout: f64,
}

/// Write PNGs under `real/` and `ai/`, `manifest.csv`, `cues.csv`, the spec,
/// and `train.csv`/`val.csv`/`test.csv` split manifests.
pub fn write_dataset(spec: &CueSpec, images: &[SynthImage], dir: &Path) -> Result<Vec<ManifestEntry>> {
    for sub in ["real", "ai"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(images.len());
    let cue_path = dir.join("cues.csv");
    let mut cues = csv::Writer::from_path(&cue_path).map_err(|e| Error::Generation(e.to_string()))?;
    for im in images {
        let rel = format!("{}/{}.png", class_name(im.label), im.id);
        imaging::save_png(&im.image, &dir.join(&rel))?;
        let st = cue_stats(&imaging::to_unit(&im.image), spec.forensic_period)?;
        cues.serialize(CueRow {
            id: &im.id,
            label: u8::from(im.label),
            blob_count: im.blob_count,
            band_energy: st.band_energy,
            layout: st.layout,
        })
        .map_err(|e| Error::Generation(e.to_string()))?;
        entries.push(ManifestEntry {
            path: rel.into(),
            label: im.label,
        });
    }
    cues.flush().map_err(|e| Error::io(&cue_path, e))?;
    dataset::write_manifest(&entries, &dir.join("manifest.csv"))?;
    let parts = split(&entries, &spec.split, spec.seed)?;
    for (name, part) in dataset::SPLIT_NAMES.iter().zip(&parts) {
        dataset::write_manifest(part, &dir.join(format!("{name}.csv")))?;
    }
    let spec_path = dir.join("spec.json");
    let json = serde_json::to_string_pretty(spec).map_err(|e| Error::Generation(e.to_string()))?;
    std::fs::write(&spec_path, json + "\n").map_err(|e| Error::io(&spec_path, e))?;
    Ok(entries)
}

/// Unit-range tensor of a generated image.
pub fn tensor_of(img: &SynthImage) -> ImageTensor {
    let t = imaging::to_unit(&img.image);
    debug_assert_eq!(t.range, RangeTag::Unit);
    t
}
