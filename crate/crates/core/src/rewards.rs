//! Hue-band image rewards with conflicting warm and cool preferences.
//!
//! Images are `3×H×W` arrays stored channel-major. Generated images live in
//! `[-1, 1]` and are mapped to `[0, 1]` by `(clip(x, -1, 1) + 1)/2` before
//! any colour computation; images already in `[0, 1]` are flagged as such.
//! The statistics regularizer uses the per-channel mean and population
//! standard deviation of the `[0, 1]` image.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SATURATION_EXPONENT: f64 = 1.5;
pub const SATURATION_EPS: f64 = 1e-8;
pub const DEFAULT_BAND_WEIGHT: f64 = 3.0;
pub const DEFAULT_REG_WEIGHT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelRange {
    /// Entries in `[-1, 1]`, the generator output convention.
    #[default]
    Signed,
    /// Entries already in `[0, 1]`.
    Unit,
}

impl PixelRange {
    fn name(self) -> &'static str {
        match self {
            PixelRange::Signed => "signed",
            PixelRange::Unit => "unit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    range: PixelRange,
    data: Vec<f64>,
}

impl ImageTensor {
    /// `data` is channel-major: all of R, then G, then B, each row-major.
    pub fn new(height: usize, width: usize, range: PixelRange, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image height and width must be at least 1"));
        }
        if data.len() != 3 * height * width {
            return Err(Error::Dimension {
                expected: 3 * height * width,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image".into()));
        }
        if range == PixelRange::Unit && data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("unit-range image has entries outside [0, 1]"));
        }
        Ok(ImageTensor { height, width, range, data })
    }

    /// Constant image with colour `rgb` given in `[0, 1]`.
    pub fn solid(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let n = height * width;
        let data = rgb.iter().flat_map(|&c| std::iter::repeat_n(c, n)).collect();
        Self::new(height, width, PixelRange::Unit, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn range(&self) -> PixelRange {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn to_unit(&self, v: f64) -> f64 {
        match self.range {
            PixelRange::Signed => (v.clamp(-1.0, 1.0) + 1.0) / 2.0,
            PixelRange::Unit => v,
        }
    }

    /// Pixel `k` (row-major index) as `[0, 1]` RGB.
    pub fn unit_pixel(&self, k: usize) -> [f64; 3] {
        let n = self.pixels();
        [
            self.to_unit(self.data[k]),
            self.to_unit(self.data[n + k]),
            self.to_unit(self.data[2 * n + k]),
        ]
    }

    /// Same image with channels moved R→G, G→B, B→R.
    pub fn rotate_channels(&self) -> Self {
        let n = self.pixels();
        let mut data = Vec::with_capacity(self.data.len());
        data.extend_from_slice(&self.data[2 * n..]);
        data.extend_from_slice(&self.data[..2 * n]);
        ImageTensor { data, ..self.clone() }
    }
}

/// `(H, S, V)` of an RGB pixel in `[0, 1]³`; `H ∈ [0, 1)`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> Result<(f64, f64, f64)> {
    for v in [r, g, b] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("colour component {v} outside [0, 1]")));
        }
    }
    Ok(hsv_unchecked(r, g, b))
}

fn hsv_unchecked(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let v = r.max(g).max(b);
    let delta = v - r.min(g).min(b);
    let s = if v > 0.0 { delta / (v + SATURATION_EPS) } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if v == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if v == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (if h >= 1.0 { 0.0 } else { h }, s, v)
}

/// Union of closed hue intervals inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HueBand {
    pub intervals: Vec<(f64, f64)>,
}

impl HueBand {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        for &(lo, hi) in &intervals {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::invalid(format!("hue interval [{lo}, {hi}] not inside [0, 1]")));
            }
        }
        Ok(HueBand { intervals })
    }

    /// Red through yellow, wrapping past 1.
    pub fn warm() -> Self {
        HueBand {
            intervals: vec![(0.92, 1.0), (0.0, 0.17)],
        }
    }

    /// Cyan through blue.
    pub fn cool() -> Self {
        HueBand {
            intervals: vec![(0.5, 0.72)],
        }
    }

    pub fn contains(&self, h: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= h && h <= hi)
    }
}

/// Mean over pixels of `1_band(H)·S^1.5`.
pub fn band_score(image: &ImageTensor, band: &HueBand) -> f64 {
    let total: f64 = (0..image.pixels())
        .map(|k| {
            let [r, g, b] = image.unit_pixel(k);
            let (h, s, _) = hsv_unchecked(r, g, b);
            if band.contains(h) {
                s.powf(SATURATION_EXPONENT)
            } else {
                0.0
            }
        })
        .sum();
    total / image.pixels() as f64
}

/// Per-channel mean and population standard deviation of the `[0, 1]` image.
pub fn channel_stats(image: &ImageTensor) -> ([f64; 3], [f64; 3]) {
    let n = image.pixels();
    let mut mu = [0.0; 3];
    let mut sd = [0.0; 3];
    for c in 0..3 {
        let vals = image.data[c * n..(c + 1) * n].iter().map(|&v| image.to_unit(v));
        let mean = vals.clone().sum::<f64>() / n as f64;
        let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        mu[c] = mean;
        sd[c] = var.sqrt();
    }
    (mu, sd)
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `−(‖μ(x) − μ₀‖ + ‖σ(x) − σ₀‖)`.
pub fn stat_regularizer(image: &ImageTensor, mu0: [f64; 3], sigma0: [f64; 3]) -> f64 {
    let (mu, sd) = channel_stats(image);
    -(dist3(&mu, &mu0) + dist3(&sd, &sigma0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HueRewardWeights {
    pub band: f64,
    pub regularizer: f64,
}

impl Default for HueRewardWeights {
    fn default() -> Self {
        HueRewardWeights {
            band: DEFAULT_BAND_WEIGHT,
            regularizer: DEFAULT_REG_WEIGHT,
        }
    }
}

/// `(r_θ, r_φ) = (w·Warm + v·R, w·Cool + v·R)`.
pub fn hue_rewards_weighted(
    image: &ImageTensor,
    mu0: [f64; 3],
    sigma0: [f64; 3],
    weights: HueRewardWeights,
) -> (f64, f64) {
    let reg = stat_regularizer(image, mu0, sigma0);
    (
        weights.band * band_score(image, &HueBand::warm()) + weights.regularizer * reg,
        weights.band * band_score(image, &HueBand::cool()) + weights.regularizer * reg,
    )
}

pub fn hue_rewards(image: &ImageTensor, mu0: [f64; 3], sigma0: [f64; 3]) -> (f64, f64) {
    hue_rewards_weighted(image, mu0, sigma0, HueRewardWeights::default())
}

const CORPUS_MAGIC: &str = "curloop-images";
const CORPUS_VERSION: u32 = 1;

/// Writes images in the corpus format:
///
/// ```text
/// curloop-images 1 <count> <height> <width> <signed|unit>
/// <3·H·W floats of image 1, channel-major, space separated>
/// ...
/// ```
pub fn write_corpus<W: Write>(mut out: W, images: &[ImageTensor]) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("corpus needs at least one image"))?;
    if images
        .iter()
        .any(|im| im.height != first.height || im.width != first.width || im.range != first.range)
    {
        return Err(Error::invalid("corpus images must share shape and range"));
    }
    writeln!(
        out,
        "{CORPUS_MAGIC} {CORPUS_VERSION} {} {} {} {}",
        images.len(),
        first.height,
        first.width,
        first.range.name()
    )?;
    for im in images {
        let line: Vec<String> = im.data.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_corpus<R: Read>(input: R) -> Result<Vec<ImageTensor>> {
    let mut lines = BufReader::new(input).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty corpus file"))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != CORPUS_MAGIC {
        return Err(Error::invalid(format!("bad corpus header: {header:?}")));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::invalid(format!("bad corpus header field {s:?}")))
    };
    if num(fields[1])? != CORPUS_VERSION as usize {
        return Err(Error::invalid(format!("unsupported corpus version {}", fields[1])));
    }
    let (count, height, width) = (num(fields[2])?, num(fields[3])?, num(fields[4])?);
    let range = match fields[5] {
        "signed" => PixelRange::Signed,
        "unit" => PixelRange::Unit,
        other => return Err(Error::invalid(format!("unknown pixel range {other:?}"))),
    };
    let mut values = Vec::with_capacity(count * 3 * height * width);
    for line in lines {
        for tok in line?.split_whitespace() {
            values.push(
                tok.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad corpus value {tok:?}")))?,
            );
        }
    }
    let per = 3 * height * width;
    if values.len() != count * per {
        return Err(Error::Dimension {
            expected: count * per,
            got: values.len(),
        });
    }
    values
        .chunks(per)
        .map(|c| ImageTensor::new(height, width, range, c.to_vec()))
        .collect()
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<ImageTensor>> {
    read_corpus(std::fs::File::open(path)?)
}

pub fn write_corpus_file(path: &Path, images: &[ImageTensor]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_corpus(&mut f, images)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hsv_examples() {
        let (h, s, v) = rgb_to_hsv(1.0, 0.0, 0.0).unwrap();
        assert_eq!((h, v), (0.0, 1.0));
        assert_relative_eq!(s, 1.0, epsilon = 1e-7);
        assert_eq!(rgb_to_hsv(0.5, 0.5, 0.5).unwrap(), (0.0, 0.0, 0.5));
        let (h, _, _) = rgb_to_hsv(0.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(h, 2.0 / 3.0, epsilon = 1e-15);
        assert!(rgb_to_hsv(1.2, 0.0, 0.0).is_err());
        assert_eq!(rgb_to_hsv(0.0, 0.0, 0.0).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn magenta_uses_wrapped_branch() {
        // V = R with G < B gives a negative ratio before the mod
        let (h, _, _) = rgb_to_hsv(1.0, 0.0, 0.3).unwrap();
        assert_relative_eq!(h, 1.0 - 0.3 / 6.0, epsilon = 1e-15);
        assert!(HueBand::warm().contains(h));
    }

    #[test]
    fn solid_image_scores() {
        let red = ImageTensor::solid(4, 4, [1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(band_score(&red, &HueBand::warm()), 1.0, epsilon = 1e-7);
        assert_eq!(band_score(&red, &HueBand::cool()), 0.0);
        let blue = ImageTensor::solid(4, 4, [0.0, 0.0, 1.0]).unwrap();
        assert_relative_eq!(band_score(&blue, &HueBand::cool()), 1.0, epsilon = 1e-7);
        assert_eq!(band_score(&blue, &HueBand::warm()), 0.0);
    }

    #[test]
    fn signed_range_is_mapped() {
        let data: Vec<f64> = [1.0, -1.0, -3.0].iter().flat_map(|&c| vec![c; 4]).collect();
        let im = ImageTensor::new(2, 2, PixelRange::Signed, data).unwrap();
        assert_eq!(im.unit_pixel(0), [1.0, 0.0, 0.0]);
        assert!(ImageTensor::new(2, 2, PixelRange::Unit, vec![1.5; 12]).is_err());
        assert!(ImageTensor::new(2, 2, PixelRange::Unit, vec![0.5; 11]).is_err());
    }

    #[test]
    fn regularizer_examples() {
        let gray = ImageTensor::solid(3, 3, [0.25, 0.5, 0.75]).unwrap();
        assert_eq!(stat_regularizer(&gray, [0.25, 0.5, 0.75], [0.0; 3]), 0.0);
        let r = stat_regularizer(&gray, [0.25, 0.5, 0.75], [0.0, 0.3, 0.4]);
        assert_relative_eq!(r, -0.5, epsilon = 1e-15);
    }

    #[test]
    fn rewards_use_default_weights() {
        let red = ImageTensor::solid(2, 2, [1.0, 0.0, 0.0]).unwrap();
        let (mu, sd) = channel_stats(&red);
        let (rt, rp) = hue_rewards(&red, mu, sd);
        assert_relative_eq!(rt, 3.0, epsilon = 1e-6);
        assert_eq!(rp, 0.0);
    }

    #[test]
    fn corpus_round_trip() {
        let a = ImageTensor::new(1, 2, PixelRange::Signed, vec![0.1, -0.2, 0.3, 1.0, -1.0, 0.0]).unwrap();
        let b = ImageTensor::new(1, 2, PixelRange::Signed, vec![0.7; 6]).unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let back = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a, b]);
        assert!(read_corpus("curloop-images 1 1 1 1 unit\n0.5 0.5\n".as_bytes()).is_err());
        assert!(read_corpus("something else\n".as_bytes()).is_err());
    }
}
