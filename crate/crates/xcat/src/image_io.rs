//! 8-bit PNG load and save. Grayscale files are promoted to three identical
//! channels. Images with alpha or 16-bit samples are rejected.

use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageReader};
use xcat_core::quant::{dequantize_image, quantize_image};
use xcat_core::{Shape, Tensor};

use crate::format::FormatError;

pub fn load_png(path: &Path) -> Result<Tensor<u8>, FormatError> {
    let img = ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| FormatError::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageRgb8(buf) => buf.into_raw(),
        DynamicImage::ImageLuma8(buf) => {
            buf.into_raw().into_iter().flat_map(|v| [v, v, v]).collect()
        }
        other => {
            return Err(FormatError::Image(format!(
                "{}: unsupported colour type {:?}, expected 8-bit RGB or grayscale",
                path.display(),
                other.color()
            )))
        }
    };
    Tensor::from_vec(Shape::new(1, h, w, 3), data).map_err(|e| FormatError::Image(e.to_string()))
}

pub fn save_png(t: &Tensor<u8>, path: &Path) -> Result<(), FormatError> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(FormatError::Image(format!(
            "can only write single RGB images, got {s:?}"
        )));
    }
    image::save_buffer_with_format(
        path,
        t.data(),
        s.w as u32,
        s.h as u32,
        ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| FormatError::Image(format!("{}: {e}", path.display())))
}

/// PNG as a `[0, 1]` float tensor.
pub fn load_png_f32(path: &Path) -> Result<Tensor<f32>, FormatError> {
    Ok(dequantize_image(&load_png(path)?))
}

/// Rounds a `[0, 1]` float tensor to 8 bits and writes it.
pub fn save_png_f32(t: &Tensor<f32>, path: &Path) -> Result<(), FormatError> {
    save_png(&quantize_image(t), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma, Rgb, Rgba};
    use proptest::prelude::*;

    #[test]
    fn grayscale_is_promoted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        ImageBuffer::<Luma<u8>, _>::from_fn(4, 3, |x, y| Luma([(x * 10 + y) as u8]))
            .save(&p)
            .unwrap();
        let t = load_png(&p).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 4, 3));
        assert_eq!(t.pixel(0, 2, 3), &[32, 32, 32]);
    }

    #[test]
    fn unsupported_colour_types() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        ImageBuffer::<Rgba<u8>, _>::from_pixel(2, 2, Rgba([1, 2, 3, 4]))
            .save(&p)
            .unwrap();
        assert!(matches!(load_png(&p), Err(FormatError::Image(_))));
        let p = dir.path().join("w.png");
        ImageBuffer::<Rgb<u16>, _>::from_pixel(2, 2, Rgb([1000, 2, 3]))
            .save(&p)
            .unwrap();
        assert!(matches!(load_png(&p), Err(FormatError::Image(_))));
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"not a png").unwrap();
        assert!(load_png(&p).is_err());
    }

    #[test]
    fn rejects_batches() {
        let t = Tensor::<u8>::zeros(Shape::new(2, 2, 2, 3)).unwrap();
        assert!(save_png(&t, Path::new("/tmp/never.png")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip(h in 1usize..12, w in 1usize..12, data in proptest::collection::vec(any::<u8>(), 432)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.png");
            let t = Tensor::from_vec(Shape::new(1, h, w, 3), data[..h * w * 3].to_vec()).unwrap();
            save_png(&t, &p).unwrap();
            prop_assert_eq!(load_png(&p).unwrap(), t);
        }
    }
}
