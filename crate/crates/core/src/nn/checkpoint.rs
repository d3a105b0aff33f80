//! Checkpoint files: a UTF-8 header and tensor manifest, a blank line, then
//! every tensor's values as little-endian `f32` in manifest order.
//!
//! ```text
//! avdn-checkpoint
//! schema_version 1
//! kind transformer
//! iteration 2000
//! seed 7
//! config {"d_model":32,...}
//! tensors 2
//! embed.weight 40 32
//! embed.bias 1 32
//!
//! <payload>
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor2};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "avdn-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Transformer,
    Lstm,
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Transformer => "transformer",
            AgentKind::Lstm => "lstm",
        })
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(AgentKind::Transformer),
            "lstm" => Ok(AgentKind::Lstm),
            other => Err(Error::Invalid(format!(
                "unknown agent kind `{other}` (expected transformer or lstm)"
            ))),
        }
    }
}

/// Parameters plus training metadata. Values are held at `f32` precision so
/// that a checkpoint in memory behaves exactly like one reloaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: AgentKind,
    pub iteration: u64,
    pub seed: u64,
    /// Model configuration as a single-line JSON document.
    pub config: String,
    params: ParamSet,
}

impl Checkpoint {
    pub fn new(kind: AgentKind, iteration: u64, seed: u64, config: String, mut params: ParamSet) -> Result<Self> {
        if config.contains('\n') {
            return Err(Error::Checkpoint("config must be a single line".into()));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters must be finite".into()));
        }
        params.round_to_f32();
        if !params.is_finite() {
            return Err(Error::NonFinite("parameter overflows f32".into()));
        }
        Ok(Self {
            kind,
            iteration,
            seed,
            config,
            params,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!(
            "{MAGIC}\nschema_version {CHECKPOINT_SCHEMA_VERSION}\nkind {}\niteration {}\nseed {}\nconfig {}\ntensors {}\n",
            self.kind,
            self.iteration,
            self.seed,
            self.config,
            self.params.len()
        );
        for (name, t) in self.params.iter() {
            head.push_str(&format!("{name} {} {}\n", t.rows(), t.cols()));
        }
        head.push('\n');
        let mut out = head.into_bytes();
        for (_, t) in self.params.iter() {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header".into()))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8".into()))
        };
        fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::Checkpoint(format!("expected `{key}` line, found `{line}`")))
        }
        fn number<T: FromStr>(s: &str, key: &str) -> Result<T> {
            s.parse()
                .map_err(|_| Error::Checkpoint(format!("bad {key} value `{s}`")))
        }
        if next_line()? != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version: u32 = number(field(next_line()?, "schema_version")?, "schema_version")?;
        if version != CHECKPOINT_SCHEMA_VERSION {
            return Err(bad(format!("unsupported schema version {version}")));
        }
        let kind: AgentKind = field(next_line()?, "kind")?.parse()?;
        let iteration = number(field(next_line()?, "iteration")?, "iteration")?;
        let seed = number(field(next_line()?, "seed")?, "seed")?;
        let config = field(next_line()?, "config")?.to_string();
        let count: usize = number(field(next_line()?, "tensors")?, "tensors")?;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next_line()?;
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 3 {
                return Err(bad(format!("bad manifest line `{line}`")));
            }
            let rows: usize = number(parts[1], "rows")?;
            let cols: usize = number(parts[2], "cols")?;
            manifest.push((parts[0].to_string(), rows, cols));
        }
        if !next_line()?.is_empty() {
            return Err(bad("missing blank line after manifest".into()));
        }
        let payload = &bytes[pos..];
        let needed: usize = manifest.iter().map(|(_, r, c)| r * c * 4).sum();
        if payload.len() != needed {
            return Err(bad(format!(
                "payload has {} bytes, manifest needs {needed}",
                payload.len()
            )));
        }
        let mut params = ParamSet::new();
        let mut chunks = payload.chunks_exact(4);
        for (name, rows, cols) in manifest {
            if params.id_of(&name).is_some() {
                return Err(bad(format!("duplicate tensor `{name}`")));
            }
            let data: Vec<f64> = chunks
                .by_ref()
                .take(rows * cols)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let t = Tensor2::from_vec(rows, cols, data)
                .map_err(|e| bad(format!("tensor `{name}`: {e}")))?;
            params.add(name, t);
        }
        Checkpoint::new(kind, iteration, seed, config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Loads a checkpoint; errors name the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
