//! Binary checkpoint format for trained artifacts.
//!
//! Layout: an 8-byte magic, a u32 format version, a one-byte artifact
//! kind, then the artifact payload. Networks serialize as a u32 layer
//! count, the layer sizes, and per layer the flat row-major weights then
//! biases, all little-endian f64. Activations are not stored: every
//! network here uses tanh hidden layers and an identity output.

use std::path::Path;

use crate::net::MlpNet;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AEAILCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// What a checkpoint file contains, so loading a file as the wrong
/// artifact fails immediately instead of misparsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Policy,
    Reward,
    Critic,
}

impl ArtifactKind {
    fn tag(self) -> u8 {
        match self {
            ArtifactKind::Policy => 1,
            ArtifactKind::Reward => 2,
            ArtifactKind::Critic => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(ArtifactKind::Policy),
            2 => Ok(ArtifactKind::Reward),
            3 => Ok(ArtifactKind::Critic),
            other => Err(Error::Checkpoint(format!("unknown artifact kind {other}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            ArtifactKind::Policy => "policy",
            ArtifactKind::Reward => "reward",
            ArtifactKind::Critic => "critic",
        }
    }
}

/// Accumulates a checkpoint in memory, then writes it in one syscall so a
/// crash cannot leave a half-written header behind a valid magic.
pub struct CheckpointWriter {
    buf: Vec<u8>,
}

impl CheckpointWriter {
    pub fn new(kind: ArtifactKind) -> Self {
        let mut buf = Vec::with_capacity(1024);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.push(kind.tag());
        CheckpointWriter { buf }
    }

    pub fn push_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn push_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn push_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Length-prefixed float vector.
    pub fn push_f64_slice(&mut self, xs: &[f64]) {
        self.push_u32(xs.len() as u32);
        for x in xs {
            self.push_f64(*x);
        }
    }

    pub fn push_net(&mut self, net: &MlpNet) {
        let sizes = net.layer_sizes();
        self.push_u32(sizes.len() as u32);
        for s in sizes {
            self.push_u32(*s as u32);
        }
        for l in 0..net.num_layers() {
            for w in &net.weights()[l] {
                self.push_f64(*w);
            }
            for b in &net.biases()[l] {
                self.push_f64(*b);
            }
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn write_to(self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.buf)?;
        Ok(())
    }
}

/// Cursor over checkpoint bytes with bounds-checked reads.
pub struct CheckpointReader {
    data: Vec<u8>,
    pos: usize,
    source: String,
}

impl CheckpointReader {
    pub fn open(path: &Path, kind: ArtifactKind) -> Result<Self> {
        let data = std::fs::read(path)?;
        Self::from_bytes(data, kind, &path.display().to_string())
    }

    pub fn from_bytes(data: Vec<u8>, kind: ArtifactKind, source: &str) -> Result<Self> {
        let mut r = CheckpointReader {
            data,
            pos: 0,
            source: source.to_string(),
        };
        let magic = r.take(CHECKPOINT_MAGIC.len())?.to_vec();
        if magic != CHECKPOINT_MAGIC {
            return Err(r.fault("not a checkpoint file (bad magic)"));
        }
        let version = r.read_u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fault(&format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let found = ArtifactKind::from_tag(r.read_u8()?)?;
        if found != kind {
            return Err(r.fault(&format!(
                "holds a {} artifact, expected {}",
                found.name(),
                kind.name()
            )));
        }
        Ok(r)
    }

    fn fault(&self, msg: &str) -> Error {
        Error::Checkpoint(format!("{}: {msg}", self.source))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(self.fault("truncated"));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn read_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn read_u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn read_f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let v = f64::from_le_bytes(b.try_into().unwrap());
        if !v.is_finite() {
            return Err(self.fault("non-finite parameter"));
        }
        Ok(v)
    }

    pub fn read_f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.read_u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            out.push(self.read_f64()?);
        }
        Ok(out)
    }

    pub fn read_net(&mut self) -> Result<MlpNet> {
        let n_layers = self.read_u32()? as usize;
        if !(2..=64).contains(&n_layers) {
            return Err(self.fault(&format!("implausible layer count {n_layers}")));
        }
        let mut sizes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let s = self.read_u32()? as usize;
            if s == 0 || s > 1 << 20 {
                return Err(self.fault(&format!("implausible layer width {s}")));
            }
            sizes.push(s);
        }
        let mut weights = Vec::with_capacity(n_layers - 1);
        let mut biases = Vec::with_capacity(n_layers - 1);
        for l in 0..n_layers - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let mut w = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in * fan_out {
                w.push(self.read_f64()?);
            }
            let mut b = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                b.push(self.read_f64()?);
            }
            weights.push(w);
            biases.push(b);
        }
        MlpNet::from_parts(sizes, weights, biases)
    }

    /// Asserts the payload was consumed exactly.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.fault(&format!(
                "{} trailing bytes after payload",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_net() -> MlpNet {
        MlpNet::new(&[3, 5, 2], 99).unwrap()
    }

    #[test]
    fn net_round_trips_bit_exactly() {
        let net = sample_net();
        let mut w = CheckpointWriter::new(ArtifactKind::Critic);
        w.push_net(&net);
        let bytes = w.into_bytes();
        let mut r = CheckpointReader::from_bytes(bytes, ArtifactKind::Critic, "mem").unwrap();
        let back = r.read_net().unwrap();
        r.finish().unwrap();
        assert_eq!(back.layer_sizes(), net.layer_sizes());
        assert_eq!(back.weights(), net.weights());
        assert_eq!(back.biases(), net.biases());
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let net = sample_net();
        let mut w = CheckpointWriter::new(ArtifactKind::Critic);
        w.push_net(&net);
        w.push_f64_slice(&[1.5, -2.5]);
        w.write_to(&p1).unwrap();

        let mut r = CheckpointReader::open(&p1, ArtifactKind::Critic).unwrap();
        let net2 = r.read_net().unwrap();
        let extra = r.read_f64_vec().unwrap();
        r.finish().unwrap();

        let mut w2 = CheckpointWriter::new(ArtifactKind::Critic);
        w2.push_net(&net2);
        w2.push_f64_slice(&extra);
        w2.write_to(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_corrupt_headers_and_bodies() {
        let mut w = CheckpointWriter::new(ArtifactKind::Policy);
        w.push_net(&sample_net());
        let good = w.into_bytes();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(CheckpointReader::from_bytes(bad_magic, ArtifactKind::Policy, "m").is_err());

        let mut bad_version = good.clone();
        bad_version[8] = 9;
        assert!(CheckpointReader::from_bytes(bad_version, ArtifactKind::Policy, "m").is_err());

        // Right file, wrong artifact kind.
        assert!(CheckpointReader::from_bytes(good.clone(), ArtifactKind::Reward, "m").is_err());

        let truncated = good[..good.len() - 3].to_vec();
        let mut r = CheckpointReader::from_bytes(truncated, ArtifactKind::Policy, "m").unwrap();
        assert!(r.read_net().is_err());

        let mut trailing = good.clone();
        trailing.push(0);
        let mut r = CheckpointReader::from_bytes(trailing, ArtifactKind::Policy, "m").unwrap();
        r.read_net().unwrap();
        assert!(r.finish().is_err(), "trailing bytes must be rejected");

        let mut nan_param = good;
        let nan_bytes = f64::NAN.to_le_bytes();
        let body = 8 + 4 + 1 + 4 + 3 * 4;
        nan_param[body..body + 8].copy_from_slice(&nan_bytes);
        let mut r = CheckpointReader::from_bytes(nan_param, ArtifactKind::Policy, "m").unwrap();
        assert!(r.read_net().is_err(), "non-finite parameters must be rejected");
    }
}
