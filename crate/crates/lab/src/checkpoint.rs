//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"UGANCKPT"  u32 version  [u8; 32] config hash  u32 entry count
//! per entry:   u32 name length, UTF-8 name, u32 rank, rank × u64 dims,
//!              f64 payload in row-major order
//! ```

use std::fs;
use std::path::Path;

use ugan_core::optim::Adam;
use ugan_core::train::Trainer;
use ugan_core::Tensor;

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"UGANCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| LabError::Consistency(format!("checkpoint has no tensor {name:?}")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.require(name)?;
        match t.data() {
            [v] => Ok(*v),
            _ => Err(LabError::Consistency(format!("{name} is not a scalar"))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(LabError::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(LabError::format("checkpoint", format!("unsupported version {version}")));
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| LabError::format("checkpoint", "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| LabError::format("checkpoint", "tensor too large"))?;
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| LabError::format("checkpoint", "tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(LabError::format("checkpoint", "trailing bytes"));
        }
        Ok(Checkpoint { config_hash, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| LabError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
        Checkpoint::decode(&bytes).map_err(|e| match e {
            LabError::Format { reason, .. } => LabError::format(path.display().to_string(), reason),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| LabError::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Progress counters stored next to the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunState {
    /// Next epoch to run.
    pub epoch: u64,
    pub iteration: u64,
    pub best_val: f64,
    pub best_epoch: u64,
}

fn players(t: &Trainer) -> [(&'static str, &Adam); 4] {
    let o = &t.optimizers;
    [("D", &o.d), ("gG", &o.gg), ("C", &o.c), ("bG", &o.bg)]
}

/// Snapshot of the trainer; optimizer moments only with `with_optimizer`.
pub fn capture(trainer: &Trainer, state: RunState, config_hash: [u8; 32], with_optimizer: bool) -> Checkpoint {
    let mut entries: Vec<(String, Tensor)> = trainer
        .model
        .named_state()
        .into_iter()
        .map(|(n, t)| (format!("model/{n}"), t.clone()))
        .collect();
    for (name, v) in [
        ("run/epoch", state.epoch as f64),
        ("run/iteration", state.iteration as f64),
        ("run/best_val", state.best_val),
        ("run/best_epoch", state.best_epoch as f64),
    ] {
        entries.push((name.to_string(), Tensor::scalar(v)));
    }
    if with_optimizer {
        for (p, adam) in players(trainer) {
            entries.push((format!("adam/{p}/step"), Tensor::scalar(adam.step as f64)));
            for (i, (m, v)) in adam.first.iter().zip(&adam.second).enumerate() {
                entries.push((format!("adam/{p}/m/{i}"), Tensor::vector(m.clone())));
                entries.push((format!("adam/{p}/v/{i}"), Tensor::vector(v.clone())));
            }
        }
    }
    Checkpoint { config_hash, entries }
}

fn copy_into(ckpt: &Checkpoint, name: &str, dst: &mut Tensor) -> Result<()> {
    let src = ckpt.require(name)?;
    if src.shape() != dst.shape() {
        return Err(LabError::Consistency(format!(
            "{name} has shape {:?} in the checkpoint, model expects {:?}",
            src.shape(),
            dst.shape()
        )));
    }
    dst.data_mut().copy_from_slice(src.data());
    Ok(())
}

/// Loads parameters and running statistics into `trainer.model`.
pub fn restore_model(ckpt: &Checkpoint, trainer: &mut Trainer) -> Result<()> {
    let mut model = trainer.model.clone();
    for (n, t) in model.named_state_mut() {
        copy_into(ckpt, &format!("model/{n}"), t)?;
    }
    trainer.model = model;
    Ok(())
}

/// Restores model, optimizer moments and counters for resuming.
pub fn restore(ckpt: &Checkpoint, trainer: &mut Trainer) -> Result<RunState> {
    restore_model(ckpt, trainer)?;
    let mut opts = trainer.optimizers.clone();
    for (p, adam) in [("D", &mut opts.d), ("gG", &mut opts.gg), ("C", &mut opts.c), ("bG", &mut opts.bg)] {
        adam.step = ckpt.scalar(&format!("adam/{p}/step"))? as u64;
        for (i, (m, v)) in adam.first.iter_mut().zip(adam.second.iter_mut()).enumerate() {
            for (kind, buf) in [("m", m), ("v", v)] {
                let name = format!("adam/{p}/{kind}/{i}");
                let mut t = Tensor::vector(std::mem::take(buf));
                copy_into(ckpt, &name, &mut t)?;
                *buf = t.into_data();
            }
        }
    }
    trainer.optimizers = opts;
    let state = RunState {
        epoch: ckpt.scalar("run/epoch")? as u64,
        iteration: ckpt.scalar("run/iteration")? as u64,
        best_val: ckpt.scalar("run/best_val")?,
        best_epoch: ckpt.scalar("run/best_epoch")? as u64,
    };
    trainer.epoch = state.epoch;
    trainer.iteration = state.iteration;
    Ok(state)
}
