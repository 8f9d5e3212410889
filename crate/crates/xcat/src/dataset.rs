//! Image directories as training and evaluation sets.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use xcat_core::eval::ImagePair;
use xcat_core::Tensor;

use crate::image_io::load_png_f32;

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("{} contains no PNG images", dir.display());
    }
    Ok(files)
}

pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads every PNG of `dir` as `(id, image)`.
pub fn load_images(dir: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    list_pngs(dir)?
        .into_iter()
        .map(|p| {
            Ok((
                image_id(&p),
                load_png_f32(&p).with_context(|| format!("loading {}", p.display()))?,
            ))
        })
        .collect()
}

/// HR images of `dir` with LR counterparts derived by bicubic downsampling.
pub fn load_hr_dir(dir: &Path, scale: usize) -> Result<Vec<ImagePair>> {
    load_images(dir)?
        .into_iter()
        .map(|(id, hr)| {
            ImagePair::from_hr(&hr, scale, id.clone()).with_context(|| format!("image {id}"))
        })
        .collect()
}

/// Pairs HR images with LR images of the same file name from `lr_dir`.
/// Pairs whose sizes disagree are kept so evaluation can report them.
pub fn load_paired_dirs(hr_dir: &Path, lr_dir: &Path) -> Result<Vec<ImagePair>> {
    let mut pairs = Vec::new();
    for hr_path in list_pngs(hr_dir)? {
        let name = hr_path.file_name().expect("listed files have names");
        let lr_path = lr_dir.join(name);
        if !lr_path.is_file() {
            bail!(
                "no LR image {} for {}",
                lr_path.display(),
                hr_path.display()
            );
        }
        pairs.push(ImagePair {
            lr: load_png_f32(&lr_path)?,
            hr: load_png_f32(&hr_path)?,
            id: image_id(&hr_path),
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_io::save_png_f32;
    use xcat_core::synth;

    #[test]
    fn directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        assert!(list_pngs(dir.path()).is_err());
        assert!(list_pngs(&dir.path().join("missing")).is_err());
        for (i, name) in ["b.png", "a.png", "c.PNG"].iter().enumerate() {
            save_png_f32(
                &synth::image(i as u64, 9, 12).unwrap(),
                &dir.path().join(name),
            )
            .unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let ids: Vec<String> = list_pngs(dir.path())
            .unwrap()
            .iter()
            .map(|p| image_id(p))
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
        let pairs = load_hr_dir(dir.path(), 3).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[0].lr.shape().h, 3);
        assert_eq!(pairs[0].lr.shape().w, 4);
    }
}
