//! Checkpoint container: magic `LCKP`, u32 version, u32 length plus JSON
//! header (model kind, config, step, epoch, optimizer settings), u32 tensor
//! count, then per tensor a u16 name length, the name, a u8 rank, u32
//! extents and little-endian f32 data. All integers are little-endian.
//! Adam moments travel as extra tensors named `optim.m.<param>` and
//! `optim.v.<param>`, input normalization as `cmvn.mean` and `cmvn.std`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Cmvn;
use crate::error::{Error, Result};
use crate::model::{ArModel, LasoModel, ModelConfig, ModelKind, Seq2Seq};
use crate::numeric::optim::AdamState;
use crate::numeric::param::ParamSet;
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const MOMENT_1: &str = "optim.m.";
const MOMENT_2: &str = "optim.v.";
const CMVN_MEAN: &str = "cmvn.mean";
const CMVN_STD: &str = "cmvn.std";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamSettings {
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: ModelKind,
    step: u64,
    epoch: usize,
    model: ModelConfig,
    adam: Option<AdamSettings>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub adam: Option<AdamSettings>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Snapshot of a model's parameters and input normalization, plus the
    /// Adam moments when given.
    pub fn capture<T: Scalar, M: Seq2Seq<T>>(
        model: &M,
        step: u64,
        epoch: usize,
        optim: Option<&AdamState<T>>,
    ) -> Self {
        let params = model.params();
        let mut tensors: Vec<(String, Tensor<f32>)> =
            params.iter().map(|p| (p.name.clone(), p.value.cast())).collect();
        if let Some(c) = model.cmvn() {
            tensors.extend(cmvn_tensors(c));
        }
        if let Some(o) = optim {
            for (prefix, moments) in [(MOMENT_1, &o.m), (MOMENT_2, &o.v)] {
                for (p, m) in params.iter().zip(moments) {
                    tensors.push((format!("{prefix}{}", p.name), m.cast()));
                }
            }
        }
        Checkpoint {
            kind: model.kind(),
            config: model.config().clone(),
            step,
            epoch,
            adam: optim.map(|o| AdamSettings {
                t: o.t,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            }),
            tensors,
        }
    }

    /// Model parameters only (no optimizer moments or normalization).
    pub fn parameters(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.tensors
            .iter()
            .filter(|(n, _)| {
                !n.starts_with(MOMENT_1) && !n.starts_with(MOMENT_2) && n != CMVN_MEAN && n != CMVN_STD
            })
            .map(|(n, t)| (n.as_str(), t))
    }

    fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// The stored input normalization, if the model had one.
    pub fn cmvn(&self) -> Result<Option<Cmvn>> {
        match (self.tensor(CMVN_MEAN), self.tensor(CMVN_STD)) {
            (None, None) => Ok(None),
            (Some(m), Some(s)) if m.rank() == 1 && m.shape() == s.shape() => Ok(Some(Cmvn {
                mean: m.data().to_vec(),
                std: s.data().to_vec(),
            })),
            _ => Err(Error::InvalidArgument(
                "checkpoint normalization statistics are incomplete or malformed".into(),
            )),
        }
    }

    pub fn restore_params<T: Scalar>(&self, params: &mut ParamSet<T>) -> Result<()> {
        params.assign(self.parameters())
    }

    /// Rebuilds the optimizer state saved alongside `params`, if any.
    pub fn restore_optimizer<T: Scalar>(&self, params: &ParamSet<T>) -> Result<Option<AdamState<T>>> {
        let Some(s) = self.adam else {
            return Ok(None);
        };
        let mut state = AdamState::with_hyper(params, s.beta1, s.beta2, s.eps);
        state.t = s.t;
        for (prefix, target) in [(MOMENT_1, &mut state.m), (MOMENT_2, &mut state.v)] {
            let mut moments = ParamSet::<T>::new();
            for p in params.iter() {
                moments.add(format!("{prefix}{}", p.name), Tensor::zeros(p.value.shape()))?;
            }
            moments.assign(self.tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
            *target = moments.iter().map(|p| p.value.clone()).collect();
        }
        Ok(Some(state))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            kind: self.kind,
            step: self.step,
            epoch: self.epoch,
            model: self.config.clone(),
            adam: self.adam,
        })
        .map_err(|e| Error::InvalidArgument(format!("serializing checkpoint header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(header.len(), "header")?.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&u32_len(self.tensors.len(), "tensor count")?.to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.rank())
                .map_err(|_| Error::InvalidArgument(format!("rank of {name} exceeds 255")))?;
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&u32_len(d, "extent")?.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.bad("missing LCKP header"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.bad(&format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(len)?).map_err(|e| r.bad(&format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.bad("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = r
                .take(numel.checked_mul(4).ok_or_else(|| r.bad("tensor too large"))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| r.bad(&format!("{name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(r.bad("trailing bytes"));
        }
        header.model.validate()?;
        Ok(Checkpoint {
            kind: header.kind,
            config: header.model,
            step: header.step,
            epoch: header.epoch,
            adam: header.adam,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)
            .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds a {} model, expected {kind}",
                self.kind
            )));
        }
        Ok(())
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} {n} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: format!("{reason} (at byte {})", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.bad("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Element-wise mean of the parameters of checkpoints sharing one model
/// configuration. Step and epoch come from the last checkpoint; optimizer
/// state is dropped.
pub fn average_checkpoints(checkpoints: &[Checkpoint]) -> Result<Checkpoint> {
    let (last, rest) = checkpoints
        .split_last()
        .ok_or_else(|| Error::InvalidArgument("no checkpoints to average".into()))?;
    for c in rest {
        if c.kind != last.kind || c.config != last.config {
            return Err(Error::InvalidArgument(
                "checkpoints to average have different model configurations".into(),
            ));
        }
    }
    let k = checkpoints.len() as f64;
    let mut tensors = Vec::new();
    for (name, t) in last.parameters() {
        let mut acc = vec![0.0f64; t.numel()];
        for c in checkpoints {
            let other = c
                .parameters()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("parameter {name} missing from a checkpoint"))
                })?;
            if other.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "average_checkpoints",
                    lhs: t.shape().to_vec(),
                    rhs: other.shape().to_vec(),
                });
            }
            for (a, &v) in acc.iter_mut().zip(other.data()) {
                *a += v as f64;
            }
        }
        let mean = acc.iter().map(|&a| (a / k) as f32).collect();
        tensors.push((name.to_string(), Tensor::new(t.shape().to_vec(), mean)?));
    }
    if let Some(c) = last.cmvn()? {
        tensors.extend(cmvn_tensors(&c));
    }
    Ok(Checkpoint {
        kind: last.kind,
        config: last.config.clone(),
        step: last.step,
        epoch: last.epoch,
        adam: None,
        tensors,
    })
}

impl<T: Scalar> LasoModel<T> {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::Laso)?;
        let mut model = Self::new(ckpt.config.clone(), 0)?;
        ckpt.restore_params(model.params_mut())?;
        model.set_cmvn(ckpt.cmvn()?)?;
        Ok(model)
    }
}

impl<T: Scalar> ArModel<T> {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::Ar)?;
        let mut model = Self::new(ckpt.config.clone(), 0)?;
        ckpt.restore_params(model.params_mut())?;
        model.set_cmvn(ckpt.cmvn()?)?;
        Ok(model)
    }
}

fn cmvn_tensors(c: &Cmvn) -> [(String, Tensor<f32>); 2] {
    let t = |v: &[f32]| Tensor::new(vec![v.len()], v.to_vec()).expect("rank-1 extent");
    [(CMVN_MEAN.into(), t(&c.mean)), (CMVN_STD.into(), t(&c.std))]
}
