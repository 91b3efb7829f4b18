use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Pcg32;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCLK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// A named float64 array inside a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedBlock {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "block `{name}`: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if shape.len() > u8::MAX as usize {
            return Err(Error::Shape(format!("block `{name}`: rank too large")));
        }
        Ok(Self { name, shape, data })
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            shape: vec![],
            data: vec![value],
        }
    }
}

/// Everything needed to resume a continual run.
///
/// Layout (little-endian): `"FCLK"`, `u16` version, `u32` generator id,
/// `u64` generator state, `u64` generator increment, `u32` step index,
/// `u32` number of registered steps and for each `u32` count plus `u16`
/// class ids, `u32` block count, then for each block `u16` name length,
/// name bytes, `u8` rank, `rank × u32` dims and the `f64` payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub rng_algorithm: u32,
    pub rng: Pcg32,
    pub step: u32,
    pub registry: Vec<Vec<u16>>,
    pub blocks: Vec<NamedBlock>,
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Option<&NamedBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn blocks_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a NamedBlock> + 'a {
        self.blocks.iter().filter(move |b| b.name.starts_with(prefix))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.rng_algorithm.to_le_bytes());
        let (state, inc) = self.rng.to_words();
        out.extend_from_slice(&state.to_le_bytes());
        out.extend_from_slice(&inc.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.registry.len() as u32).to_le_bytes());
        for ids in &self.registry {
            out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
            for id in ids {
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.push(b.shape.len() as u8);
            for &d in &b.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad magic, expected \"FCLK\""));
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                4,
                format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        let rng_algorithm = r.u32("generator id")?;
        let state = r.u64("generator state")?;
        let inc = r.u64("generator increment")?;
        let step = r.u32("step")?;
        let nsteps = r.u32("registry length")? as usize;
        let mut registry = Vec::new();
        for _ in 0..nsteps {
            let n = r.u32("registry entry")? as usize;
            let mut ids = Vec::new();
            for _ in 0..n {
                ids.push(r.u16("class id")?);
            }
            registry.push(ids);
        }
        let nblocks = r.u32("block count")? as usize;
        let mut blocks = Vec::new();
        for _ in 0..nblocks {
            let at = r.pos as u64;
            let len = r.u16("block name length")? as usize;
            let name = String::from_utf8(r.take(len, "block name")?.to_vec())
                .map_err(|_| Error::format(at, "block name is not UTF-8"))?;
            let rank = r.take(1, "block rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("block dim")? as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|c| c.checked_mul(8).is_some())
                .ok_or_else(|| Error::format(at, format!("block `{name}` is too large")))?;
            let payload = r.take(count * 8, "block payload")?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.push(NamedBlock { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after last block"));
        }
        Ok(Self {
            rng_algorithm,
            rng: Pcg32::from_words(state, inc),
            step,
            registry,
            blocks,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("fclk.tmp");
        fs::write(&tmp, self.encode())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated checkpoint while reading {what}"),
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

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::PCG32_ALGORITHM_ID;

    fn sample() -> Checkpoint {
        Checkpoint {
            rng_algorithm: PCG32_ALGORITHM_ID,
            rng: Pcg32::seed_from_u64(5),
            step: 2,
            registry: vec![vec![1, 2, 3], vec![4, 5]],
            blocks: vec![
                NamedBlock::new("enc.0.weight", vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, f64::MIN_POSITIVE, 9.0]).unwrap(),
                NamedBlock::scalar("trainer.iteration", 17.0),
            ],
        }
    }

    #[test]
    fn round_trip_and_byte_identity() {
        let ck = sample();
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn truncation_is_an_error_at_every_cut() {
        let bytes = sample().encode();
        for cut in 0..bytes.len() {
            assert!(matches!(Checkpoint::decode(&bytes[..cut]), Err(Error::Format { .. })));
        }
    }

    #[test]
    fn version_and_magic_checked() {
        let mut bytes = sample().encode();
        bytes[4] = 9;
        assert!(Checkpoint::decode(&bytes).unwrap_err().to_string().contains("version"));
        bytes[0] = b'Z';
        assert!(Checkpoint::decode(&bytes).unwrap_err().to_string().contains("FCLK"));
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.fclk");
        let b = dir.path().join("b.fclk");
        sample().save(&a).unwrap();
        Checkpoint::load(&a).unwrap().save(&b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}
