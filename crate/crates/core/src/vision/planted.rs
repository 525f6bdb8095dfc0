//! Constructed saliency task: a bright square in a known quadrant marks the
//! positive class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ImageTensor, Quadrant, VisionError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n: usize,
    pub side: usize,
    pub square: usize,
    /// Background pixels are uniform on [0, noise].
    pub noise: f64,
    pub quadrant: Quadrant,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec { n: 1000, side: 32, square: 8, noise: 0.2, quadrant: Quadrant::TopLeft, seed: 0 }
    }
}

/// Single-channel images with balanced random labels; positives carry a
/// square of ones at a random position fully inside the quadrant.
pub fn planted_task(spec: &PlantedSpec) -> Result<(Vec<ImageTensor>, Vec<u8>), VisionError> {
    let half = spec.side / 2;
    if spec.square == 0 || spec.square > half || !(0.0..=1.0).contains(&spec.noise) {
        return Err(VisionError::Config(format!(
            "square {} must fit a {half}-pixel quadrant; noise in [0, 1]",
            spec.square
        )));
    }
    let (oy, ox) = match spec.quadrant {
        Quadrant::TopLeft => (0, 0),
        Quadrant::TopRight => (0, half),
        Quadrant::BottomLeft => (half, 0),
        Quadrant::BottomRight => (half, half),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut images = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let s = spec.side;
        let mut data: Vec<f64> = (0..s * s).map(|_| rng.random::<f64>() * spec.noise).collect();
        let label = u8::from(rng.random::<bool>());
        if label == 1 {
            let y0 = oy + rng.random_range(0..=half - spec.square);
            let x0 = ox + rng.random_range(0..=half - spec.square);
            for y in y0..y0 + spec.square {
                data[y * s + x0..y * s + x0 + spec.square].fill(1.0);
            }
        }
        images.push(ImageTensor::new(1, s, s, data)?);
        labels.push(label);
    }
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_lands_in_quadrant() {
        let (imgs, labels) = planted_task(&PlantedSpec { n: 50, ..Default::default() }).unwrap();
        for (img, &l) in imgs.iter().zip(&labels) {
            let bright = img.data().iter().enumerate().filter(|(_, &v)| v == 1.0);
            let mut count = 0;
            for (p, _) in bright {
                assert!(p / 32 < 16 && p % 32 < 16);
                count += 1;
            }
            assert_eq!(count, if l == 1 { 64 } else { 0 });
        }
        assert!(labels.iter().any(|&l| l == 1) && labels.iter().any(|&l| l == 0));
    }
}
