//! Single-file checkpoints: a text manifest followed by little-endian f32
//! payloads in manifest order.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use edgesel_tensor::{ParamStore, Tensor};

use crate::error::{Error, Result};

const MAGIC: &str = "EDGESEL-CKPT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: String,
    pub stage: u8,
    pub epoch: usize,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Snapshot of every store entry in registration order.
    pub fn capture(store: &ParamStore<f32>, digest: &str, stage: u8, epoch: usize) -> Self {
        Checkpoint {
            digest: digest.to_string(),
            stage,
            epoch,
            tensors: store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        let _ = writeln!(head, "{MAGIC}");
        let _ = writeln!(head, "digest {}", self.digest);
        let _ = writeln!(head, "stage {}", self.stage);
        let _ = writeln!(head, "epoch {}", self.epoch);
        let _ = writeln!(head, "tensors {}", self.tensors.len());
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(head, "tensor {name} f32 {}", dims.join("x"));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated manifest"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| bad("manifest is not UTF-8"))
        };
        if next_line()? != MAGIC {
            return Err(bad("not a checkpoint (bad magic line)"));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = next_line()?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{key}`, found {line:?}")))
        };
        let digest = field("digest")?;
        let stage: u8 = field("stage")?.parse().map_err(|_| bad("bad stage"))?;
        let epoch: usize = field("epoch")?.parse().map_err(|_| bad("bad epoch"))?;
        let count: usize = field("tensors")?.parse().map_err(|_| bad("bad tensor count"))?;
        let mut index = Vec::with_capacity(count);
        for _ in 0..count {
            let spec = field("tensor")?;
            let parts: Vec<&str> = spec.split(' ').collect();
            if parts.len() != 3 || parts[1] != "f32" {
                return Err(bad(format!("bad tensor entry {spec:?}")));
            }
            let dims: Vec<usize> = parts[2]
                .split('x')
                .map(|d| d.parse().map_err(|_| bad(format!("bad dims in {spec:?}"))))
                .collect::<Result<_>>()?;
            index.push((parts[0].to_string(), dims));
        }
        if next_line()? != "end" {
            return Err(bad("manifest not terminated by `end`"));
        }
        let mut seen = HashSet::new();
        let mut tensors = Vec::with_capacity(count);
        for (name, dims) in index {
            if !seen.insert(name.clone()) {
                return Err(bad(format!("duplicate tensor {name}")));
            }
            let n: usize = dims.iter().product();
            let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad(format!("payload of {name} truncated")))?;
            pos += 4 * n;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push((name, Tensor::new(dims, data)?));
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint {
            digest,
            stage,
            epoch,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Copies the tensors into `store`. The digest must match and the names
    /// must cover the store exactly.
    pub fn restore(&self, store: &mut ParamStore<f32>, digest: &str) -> Result<()> {
        if self.digest != digest {
            return Err(bad(format!(
                "model digest mismatch: checkpoint {} vs configuration {digest}",
                self.digest
            )));
        }
        if self.tensors.len() != store.len() {
            return Err(bad(format!("{} tensors for a model with {}", self.tensors.len(), store.len())));
        }
        for (name, t) in &self.tensors {
            store.set(name, t.clone()).map_err(|e| bad(e.to_string()))?;
        }
        Ok(())
    }
}
