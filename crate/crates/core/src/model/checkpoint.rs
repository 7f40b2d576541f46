//! Binary parameter checkpoints and the training loss log.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::params::ParameterSet;
use super::tensor::{Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes every parameter in name order.
pub fn encode_checkpoint(params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.source,
                format!("byte {}", self.pos),
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.source, format!("byte {}", self.pos), msg)
    }
}

/// Parses a checkpoint; `seed` is recorded on the returned set.
pub fn decode_checkpoint(bytes: &[u8], source: &str, seed: u64) -> Result<ParameterSet> {
    let mut r = Reader { bytes, pos: 0, source };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::parse(source, "byte 0", "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            source_name: source.to_string(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut tensors = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.err("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > MAX_RANK {
            return Err(r.err(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32("shape").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| r.err("tensor too large"))?, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    ParameterSet::from_tensors(tensors, seed)
}

pub fn save_checkpoint(path: &Path, params: &ParameterSet) -> Result<()> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterSet> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes, &path.display().to_string(), 0)
}

/// One line per step: `step<TAB>loss<TAB>split`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub entries: Vec<(usize, f64, String)>,
}

impl LossLog {
    pub fn push(&mut self, step: usize, loss: f64, split: &str) {
        self.entries.push((step, loss, split.to_string()));
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (step, loss, split) in &self.entries {
            writeln!(s, "{step}\t{loss:e}\t{split}").expect("writing to a String");
        }
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut log = LossLog::default();
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |m: &str| Error::parse(source, format!("line {}", i + 1), m);
            if fields.len() != 3 {
                return Err(bad("expected step, loss and split separated by tabs"));
            }
            let step = fields[0].parse().map_err(|_| bad("bad step"))?;
            let loss = fields[1].parse().map_err(|_| bad("bad loss"))?;
            log.push(step, loss, fields[2]);
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}
