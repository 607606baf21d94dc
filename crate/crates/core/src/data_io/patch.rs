use serde::{Deserialize, Serialize};

use super::raster::HyperCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-band extrema over the whole cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl NormStats {
    pub fn of(cube: &HyperCube) -> Self {
        let b = cube.bands();
        let mut min = vec![f32::INFINITY; b];
        let mut max = vec![f32::NEG_INFINITY; b];
        for px in cube.data().chunks_exact(b) {
            for (i, &v) in px.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        NormStats { min, max }
    }

    /// Maps each band through `(x − min)/(max − min)`; constant bands become 0.
    pub fn apply(&self, cube: &HyperCube) -> Result<HyperCube> {
        let b = cube.bands();
        if self.min.len() != b || self.max.len() != b {
            return Err(Error::shape(format!(
                "stats cover {} bands, cube has {b}",
                self.min.len()
            )));
        }
        let mut data = cube.data().to_vec();
        for px in data.chunks_exact_mut(b) {
            for (i, v) in px.iter_mut().enumerate() {
                let range = self.max[i] as f64 - self.min[i] as f64;
                *v = if range > 0.0 {
                    ((*v as f64 - self.min[i] as f64) / range) as f32
                } else {
                    0.0
                };
            }
        }
        HyperCube::new(cube.height(), cube.width(), b, data)
    }
}

pub fn normalize(cube: &HyperCube) -> (HyperCube, NormStats) {
    let stats = NormStats::of(cube);
    let out = stats.apply(cube).expect("stats match their own cube");
    (out, stats)
}

/// Folds an out-of-range index back inside `0..n` by mirroring about the edges
/// without repeating the edge sample.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// The `size×size×B` window centered on `(row, col)`, mirrored at the borders.
pub fn extract_patch(cube: &HyperCube, row: usize, col: usize, size: usize) -> Result<Tensor> {
    if row >= cube.height() || col >= cube.width() {
        return Err(Error::invalid(format!(
            "patch center ({row}, {col}) outside {}×{} cube",
            cube.height(),
            cube.width()
        )));
    }
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "patch size must be odd, got {size}"
        )));
    }
    let b = cube.bands();
    let half = (size / 2) as isize;
    let mut data = Vec::with_capacity(size * size * b);
    for dr in -half..=half {
        let r = reflect(row as isize + dr, cube.height());
        for dc in -half..=half {
            let c = reflect(col as isize + dc, cube.width());
            data.extend_from_slice(cube.pixel(r, c));
        }
    }
    Tensor::new(&[size, size, b], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Augmentation {
    Orig,
    /// Mirror left-right.
    HFlip,
    /// Mirror top-bottom.
    VFlip,
    /// Both axes, a 180° rotation.
    DFlip,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] = [
        Augmentation::Orig,
        Augmentation::HFlip,
        Augmentation::VFlip,
        Augmentation::DFlip,
    ];

    fn flips(self) -> (bool, bool) {
        match self {
            Augmentation::Orig => (false, false),
            Augmentation::HFlip => (false, true),
            Augmentation::VFlip => (true, false),
            Augmentation::DFlip => (true, true),
        }
    }
}

/// Applies a flip to an `[H, W, B]` patch.
pub fn flip(patch: &Tensor, aug: Augmentation) -> Tensor {
    let (h, w, b) = match *patch.shape() {
        [h, w, b] => (h, w, b),
        _ => panic!("flip expects an [H, W, B] patch, got {:?}", patch.shape()),
    };
    let (flip_rows, flip_cols) = aug.flips();
    let src = patch.data();
    let mut out = Vec::with_capacity(src.len());
    for r in 0..h {
        let sr = if flip_rows { h - 1 - r } else { r };
        for c in 0..w {
            let sc = if flip_cols { w - 1 - c } else { c };
            let start = (sr * w + sc) * b;
            out.extend_from_slice(&src[start..start + b]);
        }
    }
    Tensor::new(patch.shape(), out).expect("same shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub patch: Tensor,
    pub label: u16,
    pub row: usize,
    pub col: usize,
    pub aug: Augmentation,
}

/// Original, horizontal, vertical and both-axes flips of one sample.
pub fn augment(sample: &Sample) -> [Sample; 4] {
    Augmentation::ALL.map(|aug| Sample {
        patch: flip(&sample.patch, aug),
        aug,
        ..sample.clone()
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
}

impl SampleSet {
    /// Unaugmented samples at the given `(label, row, col)` pixels.
    pub fn from_pixels(cube: &HyperCube, pixels: &[(u16, usize, usize)]) -> Result<Self> {
        let samples = pixels
            .iter()
            .map(|&(label, row, col)| {
                Ok(Sample {
                    patch: extract_patch(cube, row, col, crate::PATCH_SIZE)?,
                    label,
                    row,
                    col,
                    aug: Augmentation::Orig,
                })
            })
            .collect::<Result<_>>()?;
        Ok(SampleSet { samples })
    }

    /// Four flips per sample, grouped per source pixel.
    pub fn augmented(&self) -> SampleSet {
        SampleSet {
            samples: self.samples.iter().flat_map(augment).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u16> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Stacks the chosen patches into an `[N, H, W, B]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let patches: Vec<Tensor> = indices
            .iter()
            .map(|&i| self.samples[i].patch.clone())
            .collect();
        Tensor::stack(&patches)
    }
}
