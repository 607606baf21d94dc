#![allow(dead_code)]

use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use owhsi::data_io::LabelRaster;

/// Small three-class scene with an unknown stripe; quick to train.
pub const SMALL_SPEC: &str = "
height = 24
width = 32
bands = 16
noise = 0.02
unknown_fraction = 0.25
class = 0.20 0.60 0.20 0.07
class = 0.20 0.60 0.50 0.07
class = 0.20 0.60 0.80 0.07
unknown = 0.15 0.65 0.50 0.45
";

pub fn owhsi<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_owhsi"))
        .args(args)
        .env("OWHSI_THREADS", "1")
        .output()
        .expect("binary runs")
}

pub fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Fresh scratch directory under the cargo target tree.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ground truth of the imbalanced-mapping toy: 80/10/10 pixels of classes 1-3.
pub fn toy_truth() -> LabelRaster {
    let codes = (0..100u16)
        .map(|i| {
            if i < 80 {
                1
            } else if i < 90 {
                2
            } else {
                3
            }
        })
        .collect();
    LabelRaster::new(10, 10, codes).unwrap()
}

/// The three toy maps. Each moves 20 pixels off their true class; they
/// differ only in how the predicted areas come out.
pub fn toy_maps() -> [LabelRaster; 3] {
    let truth = toy_truth();
    let remap = |moves: &[(u16, u16, usize)]| {
        let mut codes = truth.codes().to_vec();
        for &(from, to, count) in moves {
            let mut left = count;
            for (i, c) in codes.iter_mut().enumerate() {
                if left > 0 && truth.codes()[i] == from && *c == from {
                    *c = to;
                    left -= 1;
                }
            }
            assert_eq!(left, 0);
        }
        LabelRaster::new(10, 10, codes).unwrap()
    };
    [
        remap(&[(1, 2, 5), (1, 3, 5), (2, 1, 5), (3, 1, 5)]),
        remap(&[
            (1, 2, 1),
            (1, 3, 1),
            (2, 1, 5),
            (2, 3, 4),
            (3, 1, 5),
            (3, 2, 4),
        ]),
        remap(&[(2, 1, 10), (3, 1, 10)]),
    ]
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}
