use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{build_network, Mdl4owNet};
use crate::error::{Error, Result};
use crate::tensor::{BnState, Tensor};

const MAGIC: &[u8; 4] = b"MDLW";
pub const WEIGHTS_VERSION: u16 = 1;
const META: &str = "meta";

struct Entry {
    name: String,
    dims: Vec<u32>,
    words: Vec<u32>,
}

impl Entry {
    fn tensor(name: String, t: &Tensor) -> Self {
        Entry {
            name,
            dims: t.shape().iter().map(|&d| d as u32).collect(),
            words: t.data().iter().map(|v| v.to_bits()).collect(),
        }
    }

    fn write(&self, w: &mut impl Write) -> Result<()> {
        let name = self.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[self.dims.len() as u8])?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.words.len() * 4);
        for x in &self.words {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    fn floats(&self) -> Vec<f32> {
        self.words.iter().map(|&x| f32::from_bits(x)).collect()
    }

    fn shape(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }
}

/// Serializes parameters, BN running statistics and metadata. Optimizer
/// accumulators are not stored.
pub fn write_weights(net: &Mdl4owNet, w: &mut impl Write) -> Result<()> {
    let mut entries: Vec<Entry> = net
        .names
        .iter()
        .zip(&net.params)
        .map(|(n, p)| Entry::tensor(n.clone(), &p.value))
        .collect();
    for (n, s) in net.bn_names.iter().zip(&net.bn) {
        let c = s.channels();
        for (suffix, v) in [
            ("running_mean", &s.running_mean),
            ("running_var", &s.running_var),
        ] {
            let t = Tensor::new(&[c], v.clone())?;
            entries.push(Entry::tensor(format!("{n}.{suffix}"), &t));
        }
    }
    w.write_all(MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u16).to_le_bytes())?;
    for e in &entries {
        e.write(w)?;
    }
    let meta = Entry {
        name: META.into(),
        dims: vec![4],
        words: vec![
            net.bands as u32,
            net.num_classes as u32,
            net.seed as u32,
            (net.seed >> 32) as u32,
        ],
    };
    meta.write(w)
}

pub fn save_weights(net: &Mdl4owNet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_weights(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Mdl4owNet> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_weights(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("truncated weight file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn entry(&mut self) -> Result<Entry> {
        let len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::format("tensor name is not UTF-8"))?
            .to_owned();
        let rank = self.u8()? as usize;
        let dims = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("tensor {name:?} too large")))?;
        let words = self
            .take(count * 4)?
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Entry { name, dims, words })
    }
}

pub fn read_weights(bytes: &[u8]) -> Result<Mdl4owNet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("bad magic, not a weight file"));
    }
    let version = r.u16()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(format!(
            "unsupported weight file version {version}"
        )));
    }
    let count = r.u16()? as usize;
    let mut entries: HashMap<String, Entry> = HashMap::with_capacity(count);
    for _ in 0..count {
        let e = r.entry()?;
        if entries.contains_key(&e.name) {
            return Err(Error::format(format!("duplicate tensor {:?}", e.name)));
        }
        entries.insert(e.name.clone(), e);
    }
    let meta = r.entry()?;
    if meta.name != META || meta.words.len() != 4 {
        return Err(Error::format("missing metadata record"));
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after metadata"));
    }
    let bands = meta.words[0] as usize;
    let classes = meta.words[1] as usize;
    let seed = meta.words[2] as u64 | (meta.words[3] as u64) << 32;
    let mut net = build_network(bands, classes, seed)
        .map_err(|e| Error::format(format!("bad metadata: {e}")))?;

    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let e = entries
            .remove(name)
            .ok_or_else(|| Error::format(format!("missing tensor {name:?}")))?;
        if e.shape() != shape {
            return Err(Error::format(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                e.shape()
            )));
        }
        Ok(e.floats())
    };
    for (name, p) in net.names.iter().zip(net.params.iter_mut()) {
        let data = take(name, p.value.shape())?;
        p.value = Tensor::new(p.value.shape(), data)?;
    }
    for (name, s) in net.bn_names.iter().zip(net.bn.iter_mut()) {
        let c = s.channels();
        let mean = take(&format!("{name}.running_mean"), &[c])?;
        let var = take(&format!("{name}.running_var"), &[c])?;
        *s = BnState::from_stats(mean, var)?;
    }
    if let Some(extra) = entries.keys().next() {
        return Err(Error::format(format!("unexpected tensor {extra:?}")));
    }
    Ok(net)
}
