use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const CUBE_MAGIC: &str = "HSIC";
const LABEL_MAGIC: &str = "HSIL";
const MAX_HEADER: u64 = 256;

/// An H×W×B radiance cube stored row-major in (row, column, band) order.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HyperCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::shape(format!(
                "cube dimensions must be positive, got {height}×{width}×{bands}"
            )));
        }
        let expected = checked_len(&[height, width, bands])?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "cube {height}×{width}×{bands} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite cube value at flat index {i}"
            )));
        }
        Ok(HyperCube {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The spectrum at one pixel.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.data[start..start + self.bands]
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[(row * self.width + col) * self.bands + band]
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        Self::read_from(&mut reader)
    }

    pub fn read_from(reader: &mut impl BufRead) -> Result<Self> {
        let fields = read_header(reader, CUBE_MAGIC)?;
        if fields.len() != 7 || fields[5] != "float32" || fields[6] != "le" {
            return Err(Error::format(format!(
                "expected \"HSIC v1 H W B float32 le\", got {:?}",
                fields.join(" ")
            )));
        }
        let dims = parse_dims(&fields[2..5])?;
        let n = checked_len(&dims)?;
        let bytes = read_payload(reader, n, 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        HyperCube::new(dims[0], dims[1], dims[2], data)
            .map_err(|e| Error::format(format!("invalid cube payload: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(
            w,
            "{CUBE_MAGIC} v1 {} {} {} float32 le",
            self.height, self.width, self.bands
        )?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// H×W class codes: 0 unlabeled, 1..=C known, C+1 unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRaster {
    height: usize,
    width: usize,
    codes: Vec<u16>,
}

impl LabelRaster {
    pub fn new(height: usize, width: usize, codes: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "label dimensions must be positive, got {height}×{width}"
            )));
        }
        let expected = checked_len(&[height, width])?;
        if codes.len() != expected {
            return Err(Error::shape(format!(
                "labels {height}×{width} need {expected} codes, got {}",
                codes.len()
            )));
        }
        Ok(LabelRaster {
            height,
            width,
            codes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.codes[row * self.width + col]
    }

    pub fn max_code(&self) -> u16 {
        self.codes.iter().copied().max().unwrap_or(0)
    }

    /// Rejects codes above `C+1`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let limit = num_classes + 1;
        match self.codes.iter().position(|&c| c as usize > limit) {
            Some(i) => Err(Error::invalid(format!(
                "label code {} at ({}, {}) exceeds {limit}",
                self.codes[i],
                i / self.width,
                i % self.width
            ))),
            None => Ok(()),
        }
    }

    pub fn matches(&self, cube: &HyperCube) -> Result<()> {
        if self.height != cube.height || self.width != cube.width {
            return Err(Error::shape(format!(
                "labels are {}×{} but cube is {}×{}",
                self.height, self.width, cube.height, cube.width
            )));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        Self::read_from(&mut reader)
    }

    pub fn read_from(reader: &mut impl BufRead) -> Result<Self> {
        let fields = read_header(reader, LABEL_MAGIC)?;
        if fields.len() != 6 || fields[4] != "u16" || fields[5] != "le" {
            return Err(Error::format(format!(
                "expected \"HSIL v1 H W u16 le\", got {:?}",
                fields.join(" ")
            )));
        }
        let dims = parse_dims(&fields[2..4])?;
        let n = checked_len(&dims)?;
        let bytes = read_payload(reader, n, 2)?;
        let codes = bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        LabelRaster::new(dims[0], dims[1], codes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{LABEL_MAGIC} v1 {} {} u16 le", self.height, self.width)?;
        let mut buf = Vec::with_capacity(self.codes.len() * 2);
        for c in &self.codes {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::format(format!("dimensions {dims:?} overflow")))
}

fn read_header(reader: &mut impl BufRead, magic: &str) -> Result<Vec<String>> {
    let mut line = Vec::new();
    reader.take(MAX_HEADER).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::format("missing or overlong header line"));
    }
    let text = std::str::from_utf8(&line)
        .map_err(|_| Error::format("header is not ASCII"))?
        .trim_end();
    let fields: Vec<String> = text.split(' ').map(str::to_owned).collect();
    if fields.first().map(String::as_str) != Some(magic) {
        return Err(Error::format(format!("bad magic, expected {magic}")));
    }
    if fields.get(1).map(String::as_str) != Some("v1") {
        return Err(Error::format(format!(
            "unsupported version {:?}",
            fields.get(1).map(String::as_str).unwrap_or("")
        )));
    }
    Ok(fields)
}

fn parse_dims(fields: &[String]) -> Result<Vec<usize>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<usize>()
                .map_err(|_| Error::format(format!("bad dimension {f:?}")))
        })
        .collect()
}

fn read_payload(reader: &mut impl Read, count: usize, width: usize) -> Result<Vec<u8>> {
    let len = count * width;
    let mut bytes = Vec::new();
    reader.take(len as u64 + 1).read_to_end(&mut bytes)?;
    if bytes.len() < len {
        return Err(Error::format(format!(
            "truncated payload: expected {len} bytes, found {}",
            bytes.len()
        )));
    }
    if bytes.len() > len {
        return Err(Error::format("trailing bytes after payload"));
    }
    Ok(bytes)
}
