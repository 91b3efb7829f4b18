use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::generate::BenchmarkSpec;
use super::sample::{LabelMap, SegSample};
use crate::error::{Error, Result};
use crate::numerics::Grid;
use crate::scalar::Scalar;

pub const DATASET_MAGIC: &[u8; 4] = b"FCLS";
pub const DATASET_VERSION: u16 = 1;

/// Contents of one `FCLS` file.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    pub num_classes: u16,
    pub samples: Vec<SegSample<S>>,
}

/// Writes `magic, u16 version, u16 num_classes, u32 count`, then per sample
/// `u32 H, u32 W`, the image as little-endian `f32` and the labels as
/// little-endian `u16`.
pub fn write_dataset<S: Scalar>(path: &Path, num_classes: u16, samples: &[SegSample<S>]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&num_classes.to_le_bytes())?;
    let count = u32::try_from(samples.len())
        .map_err(|_| Error::format(8, "sample count exceeds u32"))?;
    out.write_all(&count.to_le_bytes())?;
    for s in samples {
        out.write_all(&(s.height() as u32).to_le_bytes())?;
        out.write_all(&(s.width() as u32).to_le_bytes())?;
        for v in s.image.as_slice() {
            let f = v.to_f32().unwrap_or(f32::NAN);
            out.write_all(&f.to_le_bytes())?;
        }
        for l in s.labels.as_slice() {
            out.write_all(&l.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<S: Scalar>(path: &Path) -> Result<Dataset<S>> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated file: {what} needs {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn decode<S: Scalar>(bytes: &[u8]) -> Result<Dataset<S>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic:?}, expected \"FCLS\""),
        ));
    }
    let version = cur.u16("version")?;
    if version != DATASET_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {version}, expected {DATASET_VERSION}"),
        ));
    }
    let num_classes = cur.u16("num_classes")?;
    let count = cur.u32("count")? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let header_at = cur.pos as u64;
        let h = cur.u32("sample height")? as usize;
        let w = cur.u32("sample width")? as usize;
        let pixels = h
            .checked_mul(w)
            .filter(|p| p.checked_mul(14).is_some())
            .ok_or_else(|| Error::format(header_at, format!("sample {i}: size {h}x{w} overflows")))?;
        let needed = pixels * 14;
        if bytes.len() - cur.pos < needed {
            return Err(Error::format(
                header_at,
                format!(
                    "sample {i}: header {h}x{w}x3 needs {needed} payload bytes, {} remain",
                    bytes.len() - cur.pos
                ),
            ));
        }
        let image: Vec<S> = cur
            .take(pixels * 12, "image")?
            .chunks_exact(4)
            .map(|b| S::from_stored(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        let labels: Vec<u16> = cur
            .take(pixels * 2, "labels")?
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
            .collect();
        samples.push(SegSample::new(
            Grid::from_vec(h, w, 3, image)?,
            LabelMap::from_vec(h, w, labels)?,
        )?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            cur.pos as u64,
            format!("{} trailing bytes after {count} samples", bytes.len() - cur.pos),
        ));
    }
    Ok(Dataset {
        num_classes,
        samples,
    })
}

/// Sidecar manifest: UTF-8 `key=value` lines describing the generator
/// inputs.
pub fn write_manifest(path: &Path, spec: &BenchmarkSpec, extra: &[(&str, String)]) -> Result<()> {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
    let palette = spec
        .palette
        .iter()
        .map(|s| format!("{}:{}", s.kind.name(), join(&s.color)))
        .collect::<Vec<_>>()
        .join(";");
    let mut text = String::new();
    text.push_str("format=FCLS\n");
    text.push_str(&format!("version={DATASET_VERSION}\n"));
    text.push_str(&format!("num_classes={}\n", spec.num_classes));
    text.push_str(&format!("image_size={}x{}\n", spec.height, spec.width));
    text.push_str(&format!("class_frequencies={}\n", join(&spec.class_frequencies)));
    text.push_str(&format!("palette={palette}\n"));
    text.push_str(&format!("noise_sigma={}\n", spec.noise_sigma));
    text.push_str(&format!("train_count={}\n", spec.train_count));
    text.push_str(&format!("test_count={}\n", spec.test_count));
    text.push_str(&format!("seed={}\n", spec.seed));
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(n as u64, format!("manifest line {} lacks `=`", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
