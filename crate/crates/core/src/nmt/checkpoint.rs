//! Checkpoint file, little-endian throughout:
//!
//! ```text
//! magic            8 bytes  "DANMTCKP"
//! version          u32
//! config           src_vocab, tgt_vocab, embedding_dim, hidden_dim,
//!                  encoder_layers, decoder_layers as u64; cell u8; seed u64
//! shape table      u32 count, then per tensor: name (u16 len + utf8),
//!                  u8 rank, u64 dims
//! tensors          f32 values in shape-table order
//! optimizer        u8 kind, u64 steps, u64 len, f32 accumulators
//! provenance       u32 count, then domain (u16 len + utf8), u32 epochs, u64 steps
//! rng              32-byte key, u64 stream, u128 word position
//! vocabularies     source then target: u32 count (0 = absent), tokens (u16 len + utf8)
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::optim::{OptimizerKind, OptimizerState};
use super::params::{ModelParams, ParamLayout};
use super::{CellKind, ModelConfig};
use crate::error::{CheckpointError, Error, Result};
use crate::rng::RngState;
use crate::subword::Vocabulary;

pub const MAGIC: &[u8; 8] = b"DANMTCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Training on one domain: consecutive epochs on the same domain merge into
/// one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceRecord {
    pub domain: String,
    pub epochs: u32,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub provenance: Vec<ProvenanceRecord>,
    pub rng: RngState,
    pub src_vocab: Option<Vocabulary>,
    pub tgt_vocab: Option<Vocabulary>,
}

impl ModelCheckpoint {
    /// Attaches vocabularies, which must match the configured sizes.
    pub fn with_vocabularies(mut self, src: Vocabulary, tgt: Vocabulary) -> Result<Self> {
        if src.len() != self.config.src_vocab || tgt.len() != self.config.tgt_vocab {
            return Err(Error::InvalidConfig(format!(
                "vocabulary sizes {}/{} do not match model {}/{}",
                src.len(),
                tgt.len(),
                self.config.src_vocab,
                self.config.tgt_vocab
            )));
        }
        self.src_vocab = Some(src);
        self.tgt_vocab = Some(tgt);
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::with_capacity(16 + self.params.data.len() * 4);
        w.extend_from_slice(MAGIC);
        w.write_u32::<LE>(FORMAT_VERSION).unwrap();
        let c = &self.config;
        for d in [
            c.src_vocab,
            c.tgt_vocab,
            c.embedding_dim,
            c.hidden_dim,
            c.encoder_layers,
            c.decoder_layers,
        ] {
            w.write_u64::<LE>(d as u64).unwrap();
        }
        w.write_u8(match c.cell {
            CellKind::Gru => 0,
            CellKind::Lstm => 1,
        })
        .unwrap();
        w.write_u64::<LE>(c.seed).unwrap();

        let specs = self.params.layout.specs();
        w.write_u32::<LE>(specs.len() as u32).unwrap();
        for s in specs {
            write_str(&mut w, &s.name);
            w.write_u8(s.shape.len() as u8).unwrap();
            for &d in &s.shape {
                w.write_u64::<LE>(d as u64).unwrap();
            }
        }
        for &x in &self.params.data {
            w.write_f32::<LE>(x as f32).unwrap();
        }

        w.write_u8(self.optimizer.kind.code()).unwrap();
        w.write_u64::<LE>(self.optimizer.steps).unwrap();
        w.write_u64::<LE>(self.optimizer.accumulators.len() as u64).unwrap();
        for &a in &self.optimizer.accumulators {
            w.write_f32::<LE>(a as f32).unwrap();
        }

        w.write_u32::<LE>(self.provenance.len() as u32).unwrap();
        for p in &self.provenance {
            write_str(&mut w, &p.domain);
            w.write_u32::<LE>(p.epochs).unwrap();
            w.write_u64::<LE>(p.steps).unwrap();
        }

        w.extend_from_slice(&self.rng.key);
        w.write_u64::<LE>(self.rng.stream).unwrap();
        w.write_u128::<LE>(self.rng.word_pos).unwrap();

        for v in [&self.src_vocab, &self.tgt_vocab] {
            let tokens = v.as_ref().map_or(&[][..], |v| v.tokens());
            w.write_u32::<LE>(tokens.len() as u32).unwrap();
            for t in tokens {
                write_str(&mut w, t);
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::Truncated("magic"))?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.read_u32::<LE>().map_err(|_| CheckpointError::Truncated("version"))?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }

        let t = |_| CheckpointError::Truncated("config");
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = usize::try_from(r.read_u64::<LE>().map_err(t)?)
                .map_err(|_| CheckpointError::Corrupt("dimension overflows usize".into()))?;
        }
        let cell = match r.read_u8().map_err(t)? {
            0 => CellKind::Gru,
            1 => CellKind::Lstm,
            k => return Err(CheckpointError::Corrupt(format!("cell kind {k}"))),
        };
        let seed = r.read_u64::<LE>().map_err(t)?;
        let config = ModelConfig {
            src_vocab: dims[0],
            tgt_vocab: dims[1],
            embedding_dim: dims[2],
            hidden_dim: dims[3],
            encoder_layers: dims[4],
            decoder_layers: dims[5],
            cell,
            seed,
        };
        config
            .validate()
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        // every dimension contributes at least that many f32 values
        if dims.iter().any(|&d| d > bytes.len()) {
            return Err(CheckpointError::Truncated("tensors"));
        }

        let layout = ParamLayout::new(&config);
        let t = |_| CheckpointError::Truncated("shape table");
        let count = r.read_u32::<LE>().map_err(t)? as usize;
        let expected = layout.specs();
        for i in 0..count {
            let name = read_str(&mut r, "shape table")?;
            let rank = r.read_u8().map_err(t)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u64::<LE>().map_err(t)? as usize);
            }
            match expected.get(i) {
                Some(s) if s.name == name && s.shape == shape => {}
                Some(s) => {
                    return Err(CheckpointError::ShapeMismatch {
                        name,
                        expected: s.shape.clone(),
                        found: shape,
                    })
                }
                None => {
                    return Err(CheckpointError::ShapeMismatch {
                        name,
                        expected: Vec::new(),
                        found: shape,
                    })
                }
            }
        }
        if count != expected.len() {
            let missing = &expected[count];
            return Err(CheckpointError::ShapeMismatch {
                name: missing.name.clone(),
                expected: missing.shape.clone(),
                found: Vec::new(),
            });
        }

        let total = layout.total();
        if (bytes.len() as u64 - r.position()) < total as u64 * 4 {
            return Err(CheckpointError::Truncated("tensors"));
        }
        let mut params = ModelParams::zeros(layout);
        for x in &mut params.data {
            *x = r.read_f32::<LE>().map_err(|_| CheckpointError::Truncated("tensors"))? as f64;
        }

        let t = |_| CheckpointError::Truncated("optimizer");
        let kind_code = r.read_u8().map_err(t)?;
        let kind = OptimizerKind::from_code(kind_code)
            .ok_or_else(|| CheckpointError::Corrupt(format!("optimizer kind {kind_code}")))?;
        let steps = r.read_u64::<LE>().map_err(t)?;
        let acc_len = r.read_u64::<LE>().map_err(t)? as usize;
        if acc_len != 0 && acc_len != total {
            return Err(CheckpointError::Corrupt(format!(
                "{acc_len} optimizer accumulators for {total} parameters"
            )));
        }
        let mut accumulators = Vec::with_capacity(acc_len);
        for _ in 0..acc_len {
            accumulators.push(r.read_f32::<LE>().map_err(t)? as f64);
        }

        let t = |_| CheckpointError::Truncated("provenance");
        let n = r.read_u32::<LE>().map_err(t)?;
        let mut provenance = Vec::new();
        for _ in 0..n {
            let domain = read_str(&mut r, "provenance")?;
            let epochs = r.read_u32::<LE>().map_err(t)?;
            let steps = r.read_u64::<LE>().map_err(t)?;
            provenance.push(ProvenanceRecord { domain, epochs, steps });
        }

        let t = |_| CheckpointError::Truncated("rng state");
        let mut key = [0u8; 32];
        r.read_exact(&mut key).map_err(t)?;
        let stream = r.read_u64::<LE>().map_err(t)?;
        let word_pos = r.read_u128::<LE>().map_err(t)?;

        let mut vocabs = [None, None];
        for (slot, (what, size)) in vocabs
            .iter_mut()
            .zip([("source vocabulary", config.src_vocab), ("target vocabulary", config.tgt_vocab)])
        {
            let n = r.read_u32::<LE>().map_err(|_| CheckpointError::Truncated(what))? as usize;
            if n == 0 {
                continue;
            }
            if n != size {
                return Err(CheckpointError::Corrupt(format!("{what} has {n} tokens, model expects {size}")));
            }
            let mut tokens = Vec::with_capacity(n);
            for _ in 0..n {
                tokens.push(read_str(&mut r, what)?);
            }
            *slot = Some(Vocabulary::from_tokens(tokens).map_err(|m| CheckpointError::Corrupt(format!("{what}: {m}")))?);
        }
        if (r.position() as usize) != bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.position() as usize
            )));
        }
        let [src_vocab, tgt_vocab] = vocabs;
        Ok(Self {
            config,
            params,
            optimizer: OptimizerState {
                kind,
                steps,
                accumulators,
            },
            provenance,
            rng: RngState { key, stream, word_pos },
            src_vocab,
            tgt_vocab,
        })
    }
}

fn write_str(w: &mut Vec<u8>, s: &str) {
    w.write_u16::<LE>(s.len() as u16).unwrap();
    w.extend_from_slice(s.as_bytes());
}

fn read_str(r: &mut Cursor<&[u8]>, what: &'static str) -> std::result::Result<String, CheckpointError> {
    let n = r.read_u16::<LE>().map_err(|_| CheckpointError::Truncated(what))? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated(what))?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Corrupt(format!("non-utf8 string in {what}")))
}

pub fn save_checkpoint(checkpoint: &ModelCheckpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(ModelCheckpoint::from_bytes(&bytes)?)
}
