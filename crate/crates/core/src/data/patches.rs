use crate::data::{Dataset, GrayImage};
use crate::error::{Error, Result};
use crate::numcore::{LabelMatrix, Matrix, RngStream};

/// Inclusive-exclusive pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PatchBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Two-class image task: each class, when present, stamps a bright square
/// in its own quadrant. Class 0 is a solid block in the top-left quadrant,
/// class 1 a checkerboard in the bottom-right one.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTaskSpec {
    pub num_samples: usize,
    /// Side length of the square images.
    pub size: usize,
    pub patch: usize,
    pub prevalence: f64,
    pub background: f64,
    pub contrast: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for PatchTaskSpec {
    fn default() -> Self {
        PatchTaskSpec {
            num_samples: 600,
            size: 16,
            patch: 4,
            prevalence: 0.5,
            background: 15.0,
            contrast: 160.0,
            noise_sd: 15.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchTask {
    /// Features are pixel intensities divided by 255, row-major.
    pub dataset: Dataset,
    pub images: Vec<GrayImage>,
    /// Patch location per sample and class, `None` when the class is absent.
    pub boxes: Vec<[Option<PatchBox>; 2]>,
}

pub fn generate_patch_task(spec: &PatchTaskSpec) -> Result<PatchTask> {
    let half = spec.size / 2;
    if spec.patch == 0 || spec.patch > half || spec.num_samples == 0 {
        return Err(Error::Config(format!(
            "patch size {} must be positive and fit in a {}-pixel quadrant",
            spec.patch, half
        )));
    }
    if !(spec.prevalence > 0.0 && spec.prevalence < 1.0) {
        return Err(Error::Config("patch prevalence must lie in (0, 1)".into()));
    }
    let mut rng = RngStream::named(spec.seed, "patches");
    let (n, s) = (spec.num_samples, spec.size);
    let slack = half - spec.patch;
    let mut images = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    let mut labels = LabelMatrix::zeros(n, 2);
    let mut features = Matrix::zeros(n, s * s);
    for i in 0..n {
        let mut field: Vec<f64> = (0..s * s).map(|_| spec.background + spec.noise_sd * rng.normal()).collect();
        let mut sample_boxes = [None, None];
        for (class, slot) in sample_boxes.iter_mut().enumerate() {
            if rng.uniform() >= spec.prevalence {
                continue;
            }
            let origin = class * half;
            let x0 = origin + rng.below(slack + 1);
            let y0 = origin + rng.below(slack + 1);
            let b = PatchBox {
                x0,
                y0,
                x1: x0 + spec.patch,
                y1: y0 + spec.patch,
            };
            for y in b.y0..b.y1 {
                for x in b.x0..b.x1 {
                    if class == 1 && (x + y) % 2 == 1 {
                        continue;
                    }
                    field[y * s + x] += spec.contrast;
                }
            }
            labels.set(i, class, true);
            *slot = Some(b);
        }
        let pixels: Vec<u8> = field.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        let img = GrayImage::new(s, s, pixels)?;
        features.row_mut(i).copy_from_slice(&img.to_unit_features());
        images.push(img);
        boxes.push(sample_boxes);
    }
    let ids = (0..n).map(|i| format!("img{i:05}")).collect();
    let dataset = Dataset::new(ids, features, labels, vec!["patch_tl".into(), "patch_br".into()])?;
    Ok(PatchTask {
        dataset,
        images,
        boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxes_match_labels_and_quadrants() {
        let task = generate_patch_task(&PatchTaskSpec {
            num_samples: 50,
            ..PatchTaskSpec::default()
        })
        .unwrap();
        for (i, b) in task.boxes.iter().enumerate() {
            for class in 0..2 {
                assert_eq!(b[class].is_some(), task.dataset.labels().get(i, class));
                if let Some(bx) = b[class] {
                    let lo = class * 8;
                    assert!(bx.x0 >= lo && bx.x1 <= lo + 8 && bx.y0 >= lo && bx.y1 <= lo + 8);
                }
            }
        }
        assert_eq!(task.dataset.feature_dim(), 256);
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let spec = PatchTaskSpec {
            patch: 9,
            ..PatchTaskSpec::default()
        };
        assert!(generate_patch_task(&spec).is_err());
    }
}
