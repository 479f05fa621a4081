//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "ECGANCKP"
//! version u32
//! header  u32 length + UTF-8 JSON (format version, network spec, optimizer)
//! count   u32
//! record  u32 name length, name, u32 rank, rank × u64 dims, f32 data
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a round trip is bit-exact.

use std::path::Path;

use ecgan_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec, Role};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ECGANCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub spec: NetworkSpec,
    #[serde(default)]
    pub optimizer: Option<OptimizerHeader>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerHeader {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub records: Vec<Record>,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

impl Checkpoint {
    /// Parameters, running statistics and (optionally) optimizer moments.
    pub fn capture(network: &Network, optimizer: Option<&Adam>) -> Self {
        let mut records: Vec<Record> = network
            .params()
            .iter()
            .map(|p| Record {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                data: p.tensor.data().to_vec(),
            })
            .collect();
        if let Some(opt) = optimizer {
            for (name, moments) in opt.moments() {
                for (prefix, data) in [(ADAM_M, &moments.m), (ADAM_V, &moments.v)] {
                    records.push(Record {
                        name: format!("{prefix}{name}"),
                        shape: vec![data.len()],
                        data: data.clone(),
                    });
                }
            }
        }
        Checkpoint {
            header: Header {
                format_version: CHECKPOINT_VERSION,
                spec: network.spec().clone(),
                optimizer: optimizer.map(|o| OptimizerHeader {
                    config: o.config(),
                    step: o.step_count(),
                }),
            },
            records,
        }
    }

    pub fn role(&self) -> Role {
        self.header.spec.role
    }

    fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Rebuilds the network, checking that every parameter is present with
    /// the expected shape.
    pub fn network(&self) -> Result<Network> {
        let mut net = Network::<f32>::build(&self.header.spec, &mut ecgan_tensor::Rng::seed(0))?;
        for p in net.params_mut() {
            let r = self.record(&p.name).ok_or_else(|| Error::Checkpoint {
                path: Default::default(),
                reason: format!("missing parameter {}", p.name),
            })?;
            if r.shape != p.tensor.shape() {
                return Err(Error::Checkpoint {
                    path: Default::default(),
                    reason: format!("{}: shape {:?}, expected {:?}", p.name, r.shape, p.tensor.shape()),
                });
            }
            p.tensor = Tensor::new(r.shape.clone(), r.data.clone())?;
        }
        Ok(net)
    }

    /// Like [`Checkpoint::network`] but fails unless the role matches.
    pub fn network_as(&self, role: Role) -> Result<Network> {
        if self.role() != role {
            return Err(Error::RoleMismatch {
                expected: role.to_string(),
                found: self.role().to_string(),
            });
        }
        self.network()
    }

    /// Restores optimizer state if the checkpoint carries one.
    pub fn optimizer(&self) -> Option<Adam> {
        let h = self.header.optimizer.as_ref()?;
        let mut opt = Adam::new(h.config);
        let mut moments = Vec::new();
        for r in &self.records {
            if let Some(name) = r.name.strip_prefix(ADAM_M) {
                let v = self.record(&format!("{ADAM_V}{name}"))?;
                moments.push((name.to_string(), r.data.clone(), v.data.clone()));
            }
        }
        opt.restore(h.step, moments);
        Some(opt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != CHECKPOINT_MAGIC {
            return Err("bad magic".into());
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let len = cur.u32()? as usize;
        let header: Header = serde_json::from_slice(cur.take(len)?).map_err(|e| format!("header: {e}"))?;
        let count = cur.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|_| "record name is not UTF-8")?;
            let rank = cur.u32()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or("record size overflows")?;
            let raw = cur.take(numel.checked_mul(4).ok_or("record size overflows")?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            records.push(Record { name, shape, data });
        }
        if cur.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - cur.pos));
        }
        Ok(Checkpoint { header, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
