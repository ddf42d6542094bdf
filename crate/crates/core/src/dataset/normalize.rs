use super::ImageSet;
use crate::error::{Error, Result};

/// Pixel mean/std on the `[0, 1]` scale (bytes divided by 255).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelStats {
    pub mean: f64,
    pub std: f64,
}

impl PixelStats {
    pub fn fit(images: &ImageSet) -> Result<Self> {
        if images.count == 0 || images.pixels.is_empty() {
            return Err(Error::DegenerateData("cannot normalize an empty image set".into()));
        }
        let n = images.pixels.len() as f64;
        let mean = images.pixels.iter().map(|&p| f64::from(p) / 255.0).sum::<f64>() / n;
        let var = images
            .pixels
            .iter()
            .map(|&p| {
                let d = f64::from(p) / 255.0 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::DegenerateData("all pixels are identical".into()));
        }
        Ok(Self { mean, std })
    }

    /// `(x/255 - mean) / std` for every pixel.
    pub fn apply(&self, images: &ImageSet) -> Vec<f64> {
        images
            .pixels
            .iter()
            .map(|&p| (f64::from(p) / 255.0 - self.mean) / self.std)
            .collect()
    }

    /// Normalized value of a raw byte.
    pub fn scale(&self, byte: f64) -> f64 {
        (byte / 255.0 - self.mean) / self.std
    }
}

/// Normalizes `images` with statistics fitted on the same set.
pub fn normalize(images: &ImageSet) -> Result<(Vec<f64>, PixelStats)> {
    let stats = PixelStats::fit(images)?;
    Ok((stats.apply(images), stats))
}

/// Population z-scores of arbitrary real values.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::DegenerateData("no values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) || !std.is_finite() {
        return Err(Error::DegenerateData("values are constant".into()));
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(pixels: Vec<u8>) -> ImageSet {
        let count = pixels.len();
        ImageSet {
            pixels,
            rows: 1,
            cols: 1,
            count,
        }
    }

    #[test]
    fn symmetric_pair() {
        let img = ImageSet {
            pixels: vec![0, 255],
            rows: 1,
            cols: 2,
            count: 1,
        };
        let (out, stats) = normalize(&img).unwrap();
        assert_eq!(out, vec![-1.0, 1.0]);
        assert_eq!((stats.mean, stats.std), (0.5, 0.5));
    }

    #[test]
    fn constant_set_is_degenerate() {
        assert!(matches!(normalize(&set(vec![7; 9])), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn value_at_mean_maps_to_zero() {
        let (_, stats) = normalize(&set(vec![0, 100, 200])).unwrap();
        assert!(stats.scale(stats.mean * 255.0).abs() < 1e-12);
    }

    #[test]
    fn output_is_standardized() {
        let pixels: Vec<u8> = (0..5000u32).map(|i| ((i * 7919) % 256) as u8).collect();
        let (out, _) = normalize(&set(pixels)).unwrap();
        let n = out.len() as f64;
        let mean = out.iter().sum::<f64>() / n;
        let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn zscore_is_affine_invariant(
            values in prop::collection::vec(0.0f64..255.0, 2..50),
            a in 0.1f64..10.0,
            b in -100.0f64..100.0,
        ) {
            prop_assume!(values.iter().any(|v| (v - values[0]).abs() > 1e-3));
            let base = zscore(&values).unwrap();
            let moved: Vec<f64> = values.iter().map(|v| a * v + b).collect();
            let again = zscore(&moved).unwrap();
            for (x, y) in base.iter().zip(&again) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
