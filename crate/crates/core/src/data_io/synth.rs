use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::raster::{HyperCube, LabelRaster};
use crate::error::{Error, Result};

/// Gaussian bump over normalized band position `t ∈ [0, 1]`:
/// `base + amp · exp(−(t − center)² / (2·width²))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prototype {
    pub base: f32,
    pub amp: f32,
    pub center: f32,
    pub width: f32,
}

impl Prototype {
    pub fn spectrum(&self, bands: usize) -> Vec<f32> {
        (0..bands)
            .map(|b| {
                let t = if bands > 1 {
                    b as f64 / (bands - 1) as f64
                } else {
                    0.0
                };
                let d = t - self.center as f64;
                let w = self.width as f64;
                (self.base as f64 + self.amp as f64 * (-d * d / (2.0 * w * w)).exp()) as f32
            })
            .collect()
    }
}

/// Scene recipe: known classes in equal vertical stripes, then an unknown
/// stripe covering `unknown_fraction` of the width on the right.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub noise: f32,
    pub unknown_fraction: f32,
    pub classes: Vec<Prototype>,
    pub unknown: Option<Prototype>,
}

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Parses `key = value` lines; `class` may repeat, `#` starts a comment.
    ///
    /// ```text
    /// height = 48
    /// width = 64
    /// bands = 32
    /// noise = 0.02
    /// unknown_fraction = 0.25
    /// class = 0.2 0.6 0.2 0.08
    /// unknown = 0.5 0.3 0.5 0.5
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut height = None;
        let mut width = None;
        let mut bands = None;
        let mut noise = 0.0f32;
        let mut unknown_fraction = 0.0f32;
        let mut classes = Vec::new();
        let mut unknown = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::format(format!("synth spec line {}: {what}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key = value"))?;
            let value = value.trim();
            let num = |v: &str| v.parse::<f32>().map_err(|_| bad("bad number"));
            let count = |v: &str| v.parse::<usize>().map_err(|_| bad("bad count"));
            match key.trim() {
                "height" => height = Some(count(value)?),
                "width" => width = Some(count(value)?),
                "bands" => bands = Some(count(value)?),
                "noise" => noise = num(value)?,
                "unknown_fraction" => unknown_fraction = num(value)?,
                k @ ("class" | "unknown") => {
                    let v: Vec<f32> = value.split_whitespace().map(num).collect::<Result<_>>()?;
                    let [base, amp, center, width] = v[..] else {
                        return Err(bad("prototype needs base amp center width"));
                    };
                    let p = Prototype {
                        base,
                        amp,
                        center,
                        width,
                    };
                    if k == "class" {
                        classes.push(p);
                    } else {
                        unknown = Some(p);
                    }
                }
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
        }
        let spec = SynthSpec {
            height: height.ok_or_else(|| Error::format("synth spec missing height"))?,
            width: width.ok_or_else(|| Error::format("synth spec missing width"))?,
            bands: bands.ok_or_else(|| Error::format("synth spec missing bands"))?,
            noise,
            unknown_fraction,
            classes,
            unknown,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::invalid("synth dimensions must be positive"));
        }
        if self.classes.is_empty() {
            return Err(Error::invalid("synth spec needs at least one class"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be a finite non-negative value"));
        }
        if !(0.0..1.0).contains(&self.unknown_fraction) {
            return Err(Error::invalid("unknown_fraction must lie in [0, 1)"));
        }
        if self.unknown_fraction > 0.0 && self.unknown.is_none() {
            return Err(Error::invalid(
                "unknown_fraction > 0 requires an unknown prototype",
            ));
        }
        if self.known_columns() < self.classes.len() {
            return Err(Error::invalid("scene too narrow for one column per class"));
        }
        Ok(())
    }

    fn unknown_columns(&self) -> usize {
        (self.unknown_fraction as f64 * self.width as f64).round() as usize
    }

    fn known_columns(&self) -> usize {
        self.width - self.unknown_columns()
    }

    /// Class code of column `col`.
    pub fn column_code(&self, col: usize) -> u16 {
        let known = self.known_columns();
        if col >= known {
            return self.classes.len() as u16 + 1;
        }
        (col * self.classes.len() / known) as u16 + 1
    }
}

/// Renders the scene; the same spec and seed always give the same cube.
pub fn synth_cube(spec: &SynthSpec, seed: u64) -> Result<(HyperCube, LabelRaster)> {
    spec.validate()?;
    let spectra: Vec<Vec<f32>> = spec
        .classes
        .iter()
        .chain(spec.unknown.iter())
        .map(|p| p.spectrum(spec.bands))
        .collect();
    let codes: Vec<u16> = (0..spec.height)
        .flat_map(|_| (0..spec.width).map(|c| spec.column_code(c)))
        .collect();
    let noise = Normal::new(0.0f32, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(codes.len() * spec.bands);
    for &code in &codes {
        for &v in &spectra[code as usize - 1] {
            data.push(if spec.noise > 0.0 {
                v + noise.sample(&mut rng)
            } else {
                v
            });
        }
    }
    Ok((
        HyperCube::new(spec.height, spec.width, spec.bands, data)?,
        LabelRaster::new(spec.height, spec.width, codes)?,
    ))
}
