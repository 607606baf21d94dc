use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::raster::LabelRaster;
use crate::error::{Error, Result};

/// Training pixels drawn per class; everything else labeled is test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub seed: u64,
    pub nos: usize,
    /// Row-major sorted `(row, col)` per class code.
    pub train: BTreeMap<u16, Vec<(usize, usize)>>,
    pub warnings: Vec<String>,
}

/// Draws `min(nos, available)` pixels per known class uniformly without replacement.
pub fn sample_split(
    labels: &LabelRaster,
    num_classes: usize,
    nos: usize,
    seed: u64,
) -> Result<SplitSpec> {
    if nos == 0 {
        return Err(Error::invalid("samples per class must be positive"));
    }
    labels.validate(num_classes)?;
    let mut by_class: BTreeMap<u16, Vec<(usize, usize)>> =
        (1..=num_classes as u16).map(|c| (c, Vec::new())).collect();
    for r in 0..labels.height() {
        for c in 0..labels.width() {
            let code = labels.get(r, c);
            if let Some(list) = by_class.get_mut(&code) {
                list.push((r, c));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = BTreeMap::new();
    let mut warnings = Vec::new();
    for (class, pixels) in by_class {
        if pixels.is_empty() {
            return Err(Error::invalid(format!(
                "class {class} has no labeled pixels"
            )));
        }
        let take = nos.min(pixels.len());
        if take < nos {
            warnings.push(format!(
                "class {class}: only {} pixels available, using all",
                pixels.len()
            ));
        }
        let mut chosen: Vec<(usize, usize)> =
            rand::seq::index::sample(&mut rng, pixels.len(), take)
                .into_iter()
                .map(|i| pixels[i])
                .collect();
        chosen.sort_unstable();
        train.insert(class, chosen);
    }
    Ok(SplitSpec {
        seed,
        nos,
        train,
        warnings,
    })
}

impl SplitSpec {
    pub fn num_train(&self) -> usize {
        self.train.values().map(Vec::len).sum()
    }

    /// `(class, row, col)` for every training pixel, class-major.
    pub fn train_pixels(&self) -> Vec<(u16, usize, usize)> {
        self.train
            .iter()
            .flat_map(|(&class, px)| px.iter().map(move |&(r, c)| (class, r, c)))
            .collect()
    }

    /// Labeled pixels not used for training, including the unknown class.
    pub fn test_pixels(&self, labels: &LabelRaster) -> Vec<(u16, usize, usize)> {
        let mut taken = vec![false; labels.height() * labels.width()];
        for &(_, r, c) in &self.train_pixels() {
            taken[r * labels.width() + c] = true;
        }
        let mut out = Vec::new();
        for r in 0..labels.height() {
            for c in 0..labels.width() {
                let code = labels.get(r, c);
                if code != 0 && !taken[r * labels.width() + c] {
                    out.push((code, r, c));
                }
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("SEED {} NOS {}\n", self.seed, self.nos);
        for (class, r, c) in self.train_pixels() {
            writeln!(s, "{class} {r} {c}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let (seed, nos) = match head.as_slice() {
            ["SEED", seed, "NOS", nos] => (
                seed.parse()
                    .map_err(|_| Error::format(format!("bad seed {seed:?}")))?,
                nos.parse()
                    .map_err(|_| Error::format(format!("bad nos {nos:?}")))?,
            ),
            _ => {
                return Err(Error::format(
                    "split file must start with \"SEED <n> NOS <k>\"",
                ))
            }
        };
        let mut train: BTreeMap<u16, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::format(format!("split line {}: {line:?}", i + 2));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let class: u16 = f[0].parse().map_err(|_| bad())?;
            let r: usize = f[1].parse().map_err(|_| bad())?;
            let c: usize = f[2].parse().map_err(|_| bad())?;
            if class == 0 {
                return Err(bad());
            }
            train.entry(class).or_default().push((r, c));
        }
        for px in train.values_mut() {
            px.sort_unstable();
            if px.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::format("duplicate training pixel in split file"));
            }
        }
        Ok(SplitSpec {
            seed,
            nos,
            train,
            warnings: Vec::new(),
        })
    }

    /// Checks that every training pixel lies inside `labels` with the stated class.
    pub fn check_against(&self, labels: &LabelRaster) -> Result<()> {
        for (class, r, c) in self.train_pixels() {
            if r >= labels.height() || c >= labels.width() || labels.get(r, c) != class {
                return Err(Error::invalid(format!(
                    "split pixel ({r}, {c}) is not labeled class {class}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn striped(h: usize, w: usize, classes: u16) -> LabelRaster {
        let codes = (0..h * w).map(|i| (i % w) as u16 % (classes + 2)).collect();
        LabelRaster::new(h, w, codes).unwrap()
    }

    #[test]
    fn counts_and_disjointness() {
        let labels = striped(30, 12, 3);
        let split = sample_split(&labels, 3, 20, 7).unwrap();
        assert_eq!(split.num_train(), 60);
        assert!(split.warnings.is_empty());
        let train: BTreeSet<_> = split.train_pixels().into_iter().collect();
        let test: BTreeSet<_> = split.test_pixels(&labels).into_iter().collect();
        assert!(train.is_disjoint(&test));
        let labeled = labels.codes().iter().filter(|&&c| c != 0).count();
        assert_eq!(train.len() + test.len(), labeled);
        // unknown pixels only in test
        assert!(train.iter().all(|&(c, _, _)| c <= 3));
        assert!(test.iter().any(|&(c, _, _)| c == 4));
    }

    #[test]
    fn saturation_takes_whole_class() {
        let labels = LabelRaster::new(1, 5, vec![1, 1, 2, 2, 2]).unwrap();
        let split = sample_split(&labels, 2, 3, 0).unwrap();
        assert_eq!(split.train[&1], vec![(0, 0), (0, 1)]);
        assert_eq!(split.train[&2].len(), 3);
        assert_eq!(split.warnings.len(), 1);
    }

    #[test]
    fn empty_class_is_an_error() {
        let labels = LabelRaster::new(1, 3, vec![1, 1, 3]).unwrap();
        assert!(sample_split(&labels, 2, 1, 0).is_err());
    }

    #[test]
    fn seeded_determinism() {
        let labels = striped(40, 10, 2);
        let a = sample_split(&labels, 2, 10, 3).unwrap();
        assert_eq!(a, sample_split(&labels, 2, 10, 3).unwrap());
        assert_ne!(a.train, sample_split(&labels, 2, 10, 4).unwrap().train);
    }

    #[test]
    fn text_roundtrip() {
        let labels = striped(10, 6, 2);
        let split = sample_split(&labels, 2, 4, 11).unwrap();
        let text = split.to_text();
        assert!(text.starts_with("SEED 11 NOS 4\n"));
        let back = SplitSpec::from_text(&text).unwrap();
        assert_eq!(back, split);
        back.check_against(&labels).unwrap();
        assert!(SplitSpec::from_text("SEED x NOS 4\n").is_err());
        assert!(SplitSpec::from_text("SEED 1 NOS 4\n1 0\n").is_err());
    }
}
