//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//! `"CORGAN1"`, `u32` version, `u32` length + descriptor JSON, `u32` tensor
//! count, then per tensor `u32` length + UTF-8 name, `u32` rank, `u64` extents
//! and the raw `f64` values.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{ArchitectureDescriptor, Autoencoder, Discriminator, Generator, MinMaxScaler};
use crate::nn::Network;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"CORGAN1";
pub const VERSION: u32 = 1;

/// One trained generator/discriminator pair. Labelled members model a single
/// class and are sampled in proportion to `weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct GanMember {
    pub label: Option<u8>,
    pub weight: f64,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

/// Everything a checkpoint file holds.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub descriptor: ArchitectureDescriptor,
    pub autoencoder: Option<Autoencoder>,
    pub members: Vec<GanMember>,
    pub scaler: Option<MinMaxScaler>,
}

impl ModelBundle {
    pub fn new(descriptor: ArchitectureDescriptor) -> Self {
        ModelBundle { descriptor, autoencoder: None, members: Vec::new(), scaler: None }
    }

    pub fn decoder(&self) -> Option<&Network> {
        self.autoencoder.as_ref().map(|a| &a.decoder)
    }

    fn tensors(&self) -> Result<Vec<(String, Tensor)>> {
        let mut out = Vec::new();
        let mut push_net = |prefix: &str, net: &Network| {
            for (name, t) in net.named_tensors() {
                out.push((format!("{prefix}.{name}"), t.clone()));
            }
        };
        if let Some(ae) = &self.autoencoder {
            push_net("encoder", &ae.encoder);
            push_net("decoder", &ae.decoder);
        }
        for (k, m) in self.members.iter().enumerate() {
            push_net(&format!("member{k}.generator"), &m.generator.net);
            push_net(&format!("member{k}.discriminator"), &m.discriminator.net);
        }
        out.push(("meta.members".into(), Tensor::scalar(self.members.len() as f64)));
        for (k, m) in self.members.iter().enumerate() {
            let label = m.label.map_or(-1.0, f64::from);
            out.push((format!("member{k}.meta"), Tensor::new(&[2], vec![label, m.weight])?));
        }
        if let Some(s) = &self.scaler {
            out.push(("scaler.min".into(), Tensor::new(&[s.min.len()], s.min.clone())?));
            out.push(("scaler.max".into(), Tensor::new(&[s.max.len()], s.max.clone())?));
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let json = self.descriptor.to_json();
        put_len(&mut buf, json.len())?;
        buf.extend_from_slice(json.as_bytes());
        let tensors = self.tensors()?;
        put_len(&mut buf, tensors.len())?;
        for (name, t) in &tensors {
            put_len(&mut buf, name.len())?;
            buf.extend_from_slice(name.as_bytes());
            put_len(&mut buf, t.shape().len())?;
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic (not a CORGAN1 checkpoint)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let json = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Checkpoint(format!("descriptor: {e}")))?;
        let descriptor = ArchitectureDescriptor::from_json(json)?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Checkpoint(format!("tensor name: {e}")))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.filter(|&n| n <= r.remaining() / 8).ok_or_else(|| Error::Checkpoint(format!("{name}: truncated")))?;
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Self::assemble(descriptor, tensors)
    }

    fn assemble(descriptor: ArchitectureDescriptor, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        // Parameter values are overwritten below, so the init seed is irrelevant.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = &mut tensors;
        let autoencoder = if t.keys().any(|k| k.starts_with("encoder.") || k.starts_with("decoder.")) {
            let mut ae = Autoencoder::init(&descriptor, &mut rng)?;
            fill(t, "encoder", &mut ae.encoder)?;
            fill(t, "decoder", &mut ae.decoder)?;
            Some(ae)
        } else {
            None
        };
        let members_t = take(t, "meta.members", &[1])?;
        let n_members = members_t.data()[0];
        if !(n_members >= 0.0 && n_members.fract() == 0.0 && n_members < 256.0) {
            return Err(Error::Checkpoint(format!("bad member count {n_members}")));
        }
        let mut members = Vec::new();
        for k in 0..n_members as usize {
            let mut generator = Generator::init(&descriptor, &mut rng)?;
            let mut discriminator = Discriminator::init(&descriptor, &mut rng)?;
            fill(t, &format!("member{k}.generator"), &mut generator.net)?;
            fill(t, &format!("member{k}.discriminator"), &mut discriminator.net)?;
            let meta = take(t, &format!("member{k}.meta"), &[2])?;
            let (label, weight) = (meta.data()[0], meta.data()[1]);
            let label = if label == -1.0 {
                None
            } else if (0.0..=255.0).contains(&label) && label.fract() == 0.0 {
                Some(label as u8)
            } else {
                return Err(Error::Checkpoint(format!("member{k}: bad label {label}")));
            };
            members.push(GanMember { label, weight, generator, discriminator });
        }
        let scaler = if t.contains_key("scaler.min") {
            let m = descriptor.record_width;
            let min = take(t, "scaler.min", &[m])?.into_data();
            let max = take(t, "scaler.max", &[m])?.into_data();
            Some(MinMaxScaler { min, max })
        } else {
            None
        };
        if let Some(name) = t.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
        }
        Ok(ModelBundle { descriptor, autoencoder, members, scaler })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn take(tensors: &mut BTreeMap<String, Tensor>, name: &str, shape: &[usize]) -> Result<Tensor> {
    let t = tensors.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
    if t.shape() != shape {
        return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {shape:?}", t.shape())));
    }
    Ok(t)
}

fn fill(tensors: &mut BTreeMap<String, Tensor>, prefix: &str, net: &mut Network) -> Result<()> {
    for (name, slot) in net.named_tensors_mut() {
        let shape = slot.shape().to_vec();
        *slot = take(tensors, &format!("{prefix}.{name}"), &shape)?;
    }
    Ok(())
}

fn put_len(buf: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))?;
    buf.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build, Family, GenMode};

    fn bundle(mode: GenMode) -> ModelBundle {
        let d = ArchitectureDescriptor::with_widths(mode, Family::Corgan, 12, 8, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let models = build(&d, &mut rng).unwrap();
        let mut b = ModelBundle::new(d);
        b.autoencoder = models.autoencoder;
        b.members.push(GanMember {
            label: Some(1),
            weight: 0.3,
            generator: models.generator.clone(),
            discriminator: models.discriminator.clone(),
        });
        b.members.push(GanMember { label: None, weight: 0.7, generator: models.generator, discriminator: models.discriminator });
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for mode in [GenMode::Discrete, GenMode::Continuous] {
            let mut b = bundle(mode);
            if mode == GenMode::Continuous {
                b.scaler = Some(MinMaxScaler { min: vec![-0.1 / 3.0; 12], max: vec![f64::MAX; 12] });
            }
            let bytes = b.to_bytes().unwrap();
            let back = ModelBundle::from_bytes(&bytes).unwrap();
            assert_eq!(back, b);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = bundle(GenMode::Discrete).to_bytes().unwrap();
        assert_eq!(&bytes[..7], b"CORGAN1");
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), VERSION);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = bundle(GenMode::Discrete).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelBundle::from_bytes(&bad), Err(Error::Checkpoint(_))));
        assert!(matches!(ModelBundle::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(ModelBundle::from_bytes(&extra), Err(Error::Checkpoint(_))));
        let mut version = bytes;
        version[7] = 2;
        assert!(matches!(ModelBundle::from_bytes(&version), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn autoencoder_only_bundle() {
        let mut b = bundle(GenMode::Discrete);
        b.members.clear();
        let back = ModelBundle::from_bytes(&b.to_bytes().unwrap()).unwrap();
        assert!(back.members.is_empty());
        assert!(back.decoder().is_some());
    }
}
