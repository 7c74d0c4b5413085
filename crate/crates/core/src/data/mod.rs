//! Synthetic data, raster ingestion, HU windowing, manifests and splits.

mod manifest;
mod raster;
mod synth;
mod window;

pub use manifest::{kfold_split, kfold_split_ids, write_synthetic, Fold, Manifest, SampleRecord, MANIFEST_FILE, MANIFEST_HEADER};
pub use raster::{image_tensor, load_pair, mask_tensor, read_gray_png, read_hu16, write_gray_png, write_hu16, HU16_MAGIC};
pub use synth::{generate_synthetic, SyntheticSample, SyntheticSpec};
pub use window::{window_hu, WindowSpec};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Samples held in memory: images `[3,H,W]`, masks `[1,H,W]`.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub images: Vec<Tensor<T>>,
    pub masks: Vec<Tensor<T>>,
    pub patient_ids: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn from_manifest(manifest: &Manifest, size: Option<usize>) -> Result<Self> {
        let mut ds = Dataset {
            images: Vec::with_capacity(manifest.len()),
            masks: Vec::with_capacity(manifest.len()),
            patient_ids: Vec::with_capacity(manifest.len()),
        };
        for r in &manifest.records {
            let (img, mask) = load_pair(&manifest.resolve(&r.image_path), &manifest.resolve(&r.mask_path), size)?;
            ds.images.push(img);
            ds.masks.push(mask);
            ds.patient_ids.push(r.patient_id.clone());
        }
        ds.check_uniform()?;
        Ok(ds)
    }

    /// Same tensors `from_manifest` would produce for the written files.
    pub fn from_synthetic(samples: &[SyntheticSample]) -> Self {
        let (mut images, mut masks) = (Vec::new(), Vec::new());
        for s in samples {
            // same f32 arithmetic as the PNG path, so both agree bit for bit
            let plane: Vec<T> = s.image.iter().map(|&v| T::of((v as f32 / 255.0) as f64)).collect();
            let mut data = Vec::with_capacity(3 * plane.len());
            for _ in 0..3 {
                data.extend_from_slice(&plane);
            }
            images.push(Tensor::new(&[3, s.size, s.size], data).expect("non-empty"));
            masks.push(
                Tensor::new(&[1, s.size, s.size], s.mask.iter().map(|&m| T::of(m as f64)).collect()).expect("non-empty"),
            );
        }
        Dataset {
            images,
            masks,
            patient_ids: samples.iter().map(|s| s.patient_id.clone()).collect(),
        }
    }

    fn check_uniform(&self) -> Result<()> {
        if let Some(first) = self.images.first() {
            if let Some(bad) = self.images.iter().position(|t| t.shape() != first.shape()) {
                return Err(Error::Validation(format!(
                    "sample {bad} has shape {:?}, expected {:?}; set an input size to resize",
                    self.images[bad].shape(),
                    first.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            masks: indices.iter().map(|&i| self.masks[i].clone()).collect(),
            patient_ids: indices.iter().map(|&i| self.patient_ids[i].clone()).collect(),
        }
    }

    /// Stack samples into `([N,3,H,W], [N,1,H,W])`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Tensor<T>) {
        assert!(!indices.is_empty());
        let stack = |parts: &[Tensor<T>]| {
            let mut shape = vec![indices.len()];
            shape.extend_from_slice(parts[indices[0]].shape());
            let data = indices.iter().flat_map(|&i| parts[i].data().iter().copied()).collect();
            Tensor::new(&shape, data).expect("uniform sample shapes")
        };
        (stack(&self.images), stack(&self.masks))
    }
}
