use rand::Rng;

use crate::error::{invalid, Result};
use crate::eval::ImagePair;
use crate::tensor::Tensor;

/// One concrete draw of the augmentation pipeline. Offsets are in LR pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentChoice {
    pub top: usize,
    pub left: usize,
    /// Counter-clockwise quarter turns, 0..4.
    pub rotation: u32,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub intensity: f32,
}

impl AugmentChoice {
    /// Draws crop position, rotation, flips and intensity for a pair whose LR
    /// image is `lr_h x lr_w`.
    pub fn sample<R: Rng>(
        rng: &mut R,
        lr_h: usize,
        lr_w: usize,
        lr_crop: usize,
        intensities: &[f32],
    ) -> Result<Self> {
        if lr_crop == 0 || lr_h < lr_crop || lr_w < lr_crop {
            return Err(invalid!(
                "{}x{} image is smaller than the {} px crop",
                lr_h,
                lr_w,
                lr_crop
            ));
        }
        if intensities.is_empty() {
            return Err(invalid!("intensity set is empty"));
        }
        Ok(Self {
            top: rng.random_range(0..=lr_h - lr_crop),
            left: rng.random_range(0..=lr_w - lr_crop),
            rotation: rng.random_range(0..4),
            flip_horizontal: rng.random(),
            flip_vertical: rng.random(),
            intensity: intensities[rng.random_range(0..intensities.len())],
        })
    }

    fn apply_one(
        &self,
        t: &Tensor<f32>,
        top: usize,
        left: usize,
        size: usize,
    ) -> Result<Tensor<f32>> {
        let mut t = t.crop(top, left, size, size)?.rot90(self.rotation);
        if self.flip_horizontal {
            t = t.flip_horizontal();
        }
        if self.flip_vertical {
            t = t.flip_vertical();
        }
        if self.intensity != 1.0 {
            let k = self.intensity;
            t = t.map(|v| v * k);
        }
        Ok(t)
    }

    /// Applies the same geometric transform to both images, keeping the HR
    /// crop aligned with the LR crop.
    pub fn apply(
        &self,
        pair: &ImagePair,
        lr_crop: usize,
        scale: usize,
    ) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let lr = self.apply_one(&pair.lr, self.top, self.left, lr_crop)?;
        let hr = self.apply_one(
            &pair.hr,
            self.top * scale,
            self.left * scale,
            lr_crop * scale,
        )?;
        Ok((lr, hr))
    }
}

/// Random aligned `crop_hr` patch pair with rotation, flips and intensity
/// scaling applied identically to LR and HR.
pub fn augment<R: Rng>(
    pair: &ImagePair,
    rng: &mut R,
    crop_hr: usize,
    scale: usize,
    intensities: &[f32],
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if scale == 0 || !crop_hr.is_multiple_of(scale) {
        return Err(invalid!(
            "crop {} is not a multiple of scale {}",
            crop_hr,
            scale
        ));
    }
    let lr_crop = crop_hr / scale;
    let s = pair.lr.shape();
    AugmentChoice::sample(rng, s.h, s.w, lr_crop, intensities)?.apply(pair, lr_crop, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::bicubic_downsample;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> ImagePair {
        let hr = Tensor::from_fn(Shape::new(1, 24, 18, 3), |_, y, x, c| {
            ((y * 18 + x) * 3 + c) as f32 / 1296.0
        })
        .unwrap();
        ImagePair::from_hr(&hr, 3, "p").unwrap()
    }

    #[test]
    fn crops_stay_aligned() {
        let p = pair();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let c = AugmentChoice::sample(&mut rng, 8, 6, 4, &[1.0]).unwrap();
            let (lr, hr) = c.apply(&p, 4, 3).unwrap();
            assert_eq!(lr.shape(), Shape::new(1, 4, 4, 3));
            assert_eq!(hr.shape(), Shape::new(1, 12, 12, 3));
            // downsampling the HR crop reproduces the LR crop away from borders
            let d = bicubic_downsample(&hr, 3).unwrap();
            let (a, b) = (d.get(0, 1, 1, 0), lr.get(0, 1, 1, 0));
            assert!((a - b).abs() < 0.05, "{a} {b}");
        }
    }

    #[test]
    fn identity_choice_is_plain_crop() {
        let p = pair();
        let c = AugmentChoice {
            top: 2,
            left: 1,
            rotation: 0,
            flip_horizontal: false,
            flip_vertical: false,
            intensity: 1.0,
        };
        let (lr, hr) = c.apply(&p, 3, 3).unwrap();
        assert_eq!(lr, p.lr.crop(2, 1, 3, 3).unwrap());
        assert_eq!(hr, p.hr.crop(6, 3, 9, 9).unwrap());
    }

    #[test]
    fn intensity_scales_both() {
        let p = pair();
        let c = AugmentChoice {
            top: 0,
            left: 0,
            rotation: 1,
            flip_horizontal: true,
            flip_vertical: false,
            intensity: 0.5,
        };
        let (lr, hr) = c.apply(&p, 2, 3).unwrap();
        let plain = AugmentChoice {
            intensity: 1.0,
            ..c
        }
        .apply(&p, 2, 3)
        .unwrap();
        assert!(lr
            .data()
            .iter()
            .zip(plain.0.data())
            .all(|(a, b)| *a == b * 0.5));
        assert!(hr
            .data()
            .iter()
            .zip(plain.1.data())
            .all(|(a, b)| *a == b * 0.5));
    }

    #[test]
    fn rejects_small_images_and_bad_crops() {
        let p = pair();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(augment(&p, &mut rng, 27, 3, &[1.0]).is_err());
        assert!(augment(&p, &mut rng, 10, 3, &[1.0]).is_err());
        assert!(augment(&p, &mut rng, 12, 3, &[]).is_err());
        assert!(augment(&p, &mut rng, 12, 3, &[1.0]).is_ok());
    }
}
