use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use super::{Class, Dataset, ImageTensor, LabeledImage, SplitTag};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Decode an 8-bit PNG or binary PPM into `[0,1]` values.
pub fn load_image<T: Scalar>(path: &Path) -> Result<ImageTensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| Error::UnsupportedFormat {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: format!("{format:?} is not PNG or PPM"),
        });
    }
    if format == ImageFormat::Pnm && !bytes.starts_with(b"P6") {
        return Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: "only binary PPM (P6) is supported".into(),
        });
    }
    let decoded =
        image::load_from_memory_with_format(&bytes, format).map_err(|e| Error::Decode {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Decode {
            path: path.to_owned(),
            reason: "zero-dimension image".into(),
        });
    }
    let (channels, raw) = match (decoded.color(), decoded) {
        (ColorType::L8, DynamicImage::ImageLuma8(buf)) => (1, buf.into_raw()),
        (ColorType::Rgb8, DynamicImage::ImageRgb8(buf)) => (3, buf.into_raw()),
        (color, _) => {
            return Err(Error::UnsupportedFormat {
                path: path.to_owned(),
                reason: format!("{color:?}; only 8-bit RGB or grayscale is accepted"),
            })
        }
    };
    let scale = T::c(255.0);
    let data = raw.into_iter().map(|b| T::c(b as f64) / scale).collect();
    ImageTensor::new(h, w, channels, data)
}

/// Quantize to 8 bits and write as PNG.
pub fn save_png<T: Scalar>(img: &ImageTensor<T>, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.channels() {
        1 => image::GrayImage::from_raw(w, h, bytes).map(DynamicImage::ImageLuma8),
        3 => image::RgbImage::from_raw(w, h, bytes).map(DynamicImage::ImageRgb8),
        n => {
            return Err(Error::Shape(format!("cannot write {n}-channel PNG")));
        }
    }
    .ok_or_else(|| Error::Shape("pixel buffer does not match dimensions".into()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    dynamic
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Decode {
            path: path.to_owned(),
            reason: e.to_string(),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub true_label: Class,
    pub label: Class,
    pub split: SplitTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: Option<u64>,
    pub samples: Vec<ManifestEntry>,
}

fn relative_file(sample: &LabeledImage<impl Scalar>) -> String {
    format!(
        "{}/{}/{}.png",
        sample.split.dir_name(),
        sample.true_class.dir_name(),
        sample.id.rsplit('/').next().unwrap_or(&sample.id)
    )
}

/// Writes `<root>/<split>/<class>/<name>.png` plus `manifest.json`. Files are
/// placed under the generating class; the manifest carries the training label.
pub fn write_dataset<T: Scalar>(ds: &Dataset<T>, root: &Path, seed: Option<u64>) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        let file = relative_file(s);
        save_png(&s.image, &root.join(&file))?;
        entries.push(ManifestEntry {
            file,
            true_label: s.true_class,
            label: s.label,
            split: s.split,
        });
    }
    let manifest = Manifest {
        seed,
        samples: entries,
    };
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

fn image_id(rel: &str) -> String {
    rel.strip_suffix(".png")
        .or_else(|| rel.strip_suffix(".ppm"))
        .unwrap_or(rel)
        .to_string()
}

/// Loads a dataset directory. With a manifest, labels and splits come from it;
/// otherwise they are read from the `<split>/<class>/` layout.
pub fn load_dataset<T: Scalar>(root: &Path) -> Result<Dataset<T>> {
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?;
        let samples = manifest
            .samples
            .into_iter()
            .map(|e| {
                Ok(LabeledImage {
                    image: load_image(&root.join(&e.file))?,
                    id: image_id(&e.file),
                    true_class: e.true_label,
                    label: e.label,
                    split: e.split,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(Dataset { samples });
    }

    let mut files: Vec<(String, SplitTag, Class, PathBuf)> = Vec::new();
    for split_dir in sorted_dirs(root)? {
        let split = SplitTag::from_dir_name(&file_name(&split_dir));
        for class_dir in sorted_dirs(&split_dir)? {
            let Some(class) = Class::from_dir_name(&file_name(&class_dir)) else {
                continue;
            };
            for f in sorted_entries(&class_dir)? {
                let name = file_name(&f);
                if f.is_file() && (name.ends_with(".png") || name.ends_with(".ppm")) {
                    let rel = format!("{}/{}/{}", file_name(&split_dir), class.dir_name(), name);
                    files.push((image_id(&rel), split, class, f));
                }
            }
        }
    }
    let samples = files
        .into_iter()
        .map(|(id, split, class, path)| {
            Ok(LabeledImage {
                id,
                image: load_image(&path)?,
                true_class: class,
                label: class,
                split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples })
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect())
}
