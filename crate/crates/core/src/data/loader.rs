//! Directory loaders: `root/<class_name>/<file>.pgm` for labelled data and a
//! flat directory of `.pgm` files for unlabelled data.

use std::fs;
use std::path::{Path, PathBuf};

use super::image::{load_pgm, ImageSample};
use super::preprocess::histogram_equalize;
use crate::error::{Error, Result};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = vec![];
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads a labelled dataset. Class indices follow the sorted subdirectory
/// names, which are returned alongside. Sample ids are `<class>/<stem>`.
pub fn load_labelled_dir(root: &Path) -> Result<(Vec<ImageSample>, Vec<String>)> {
    let mut samples = vec![];
    let mut names = vec![];
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let class = names.len();
        let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let files = pgm_files(&dir)?;
        if files.is_empty() {
            return Err(Error::input(format!("class directory {} has no .pgm files", dir.display())));
        }
        for f in files {
            samples.push(load_pgm(&f, format!("{name}/{}", stem(&f)), Some(class))?);
        }
        names.push(name);
    }
    if names.is_empty() {
        return Err(Error::input(format!("{} has no class subdirectories", root.display())));
    }
    Ok((samples, names))
}

/// Loads every `.pgm` in `dir` without labels; ids are file stems.
pub fn load_unlabelled_dir(dir: &Path) -> Result<Vec<ImageSample>> {
    let files = pgm_files(dir)?;
    if files.is_empty() {
        return Err(Error::input(format!("{} has no .pgm files", dir.display())));
    }
    files.iter().map(|f| load_pgm(f, stem(f), None)).collect()
}

/// Resizes to `size`×`size` and optionally equalises, then checks the
/// training-size floor.
pub fn prepare(samples: &[ImageSample], size: usize, equalize: bool) -> Result<Vec<ImageSample>> {
    samples
        .iter()
        .map(|s| {
            let mut out = s.resize(size, size)?;
            if equalize {
                out = histogram_equalize(&out);
            }
            out.check_trainable()?;
            Ok(out)
        })
        .collect()
}

/// Packs images into a `[n, 1, h, w]` batch scaled to `[0, 1]`.
pub fn to_batch(samples: &[&ImageSample]) -> Result<crate::nn::Tensor> {
    let first = samples.first().ok_or_else(|| Error::input("empty image batch"))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(samples.len() * w * h);
    for s in samples {
        if (s.width(), s.height()) != (w, h) {
            return Err(Error::input(format!(
                "image `{}` is {}x{}, expected {w}x{h}",
                s.id,
                s.width(),
                s.height()
            )));
        }
        data.extend(s.to_unit_f32());
    }
    crate::nn::Tensor::new(vec![samples.len(), 1, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::save_pgm;

    #[test]
    fn labelled_layout_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (class, n) in [("benign", 2), ("malignant", 3)] {
            let d = dir.path().join(class);
            fs::create_dir(&d).unwrap();
            for i in 0..n {
                let img = ImageSample::new("x", 8, 8, vec![i as u8; 64], None).unwrap();
                save_pgm(&img, d.join(format!("{i}.pgm"))).unwrap();
            }
        }
        fs::write(dir.path().join("README"), "ignored").unwrap();
        let (samples, names) = load_labelled_dir(dir.path()).unwrap();
        assert_eq!(names, ["benign", "malignant"]);
        assert_eq!(samples.len(), 5);
        assert_eq!(samples[2].id, "malignant/0");
        assert_eq!(samples[2].label, Some(1));
    }

    #[test]
    fn flat_layout_has_no_labels() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageSample::new("x", 3, 2, vec![1; 6], None).unwrap();
        save_pgm(&img, dir.path().join("a.pgm")).unwrap();
        let out = load_unlabelled_dir(dir.path()).unwrap();
        assert_eq!(out[0].id, "a");
        assert_eq!(out[0].label, None);
        assert!(prepare(&out, 4, false).is_err());
        assert_eq!(prepare(&out, 8, true).unwrap()[0].width(), 8);
    }

    #[test]
    fn batch_shape() {
        let a = ImageSample::new("a", 8, 8, vec![255; 64], None).unwrap();
        let t = to_batch(&[&a, &a]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 8, 8]);
        assert_eq!(t.data()[0], 1.0);
    }
}
