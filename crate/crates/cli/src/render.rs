use std::collections::{BTreeMap, BTreeSet};

use owhsi::data_io::LabelRaster;
use owhsi::{Error, Result};

pub type Rgb = [u8; 3];

/// Parses `code r g b` lines; `#` starts a comment.
pub fn parse_palette(text: &str) -> Result<BTreeMap<u16, Rgb>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("palette line {}: {raw:?}", i + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let code: u16 = f[0].parse().map_err(|_| bad())?;
        let mut rgb = [0u8; 3];
        for (slot, s) in rgb.iter_mut().zip(&f[1..]) {
            *slot = s.parse().map_err(|_| bad())?;
        }
        out.insert(code, rgb);
    }
    Ok(out)
}

/// Binary PPM with one pixel per raster cell. Codes 0 and, when
/// `num_classes` is given, `C+1` default to black.
pub fn render_ppm(
    raster: &LabelRaster,
    palette: &BTreeMap<u16, Rgb>,
    num_classes: Option<u16>,
) -> Result<Vec<u8>> {
    let unknown = num_classes.map(|c| c + 1);
    let mut missing = BTreeSet::new();
    let mut body = Vec::with_capacity(raster.codes().len() * 3);
    for &code in raster.codes() {
        let rgb = match palette.get(&code) {
            Some(rgb) => *rgb,
            None if code == 0 || Some(code) == unknown => [0, 0, 0],
            None => {
                missing.insert(code);
                [0, 0, 0]
            }
        };
        body.extend_from_slice(&rgb);
    }
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(u16::to_string).collect();
        return Err(Error::InvalidInput(format!(
            "palette has no entry for code(s) {}",
            list.join(", ")
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    out.extend_from_slice(&body);
    Ok(out)
}
