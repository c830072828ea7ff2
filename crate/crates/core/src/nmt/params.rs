use std::ops::Range;

use super::{CellKind, ModelConfig};

/// Location of one tensor inside the flat parameter vector. Vectors have
/// `cols == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct CellSlots {
    pub w: Slot,
    pub u: Slot,
    pub b: Slot,
    pub in_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shape table of every tensor, in serialization order:
///
/// | name | shape |
/// |---|---|
/// | `src_emb` | `[Vs, E]` |
/// | `tgt_emb` | `[Vt, E]` |
/// | `enc.{l}.{fwd,bwd}.{W,U,b}` | `[G·H, in_l]`, `[G·H, H]`, `[G·H]` with `in_0 = E`, else `2H` |
/// | `dec.{l}.init.{W,b}` | `[H, 2H]`, `[H]` |
/// | `dec.{l}.{W,U,b}` | `[G·H, in_l]`, `[G·H, H]`, `[G·H]` with `in_0 = E + 2H`, else `H` |
/// | `att.{W,U,b,v}` | `[H, H]`, `[H, 2H]`, `[H]`, `[H]` |
/// | `out.{W,b}` | `[Vt, 3H + E]`, `[Vt]` |
///
/// `G` is 3 for GRU and 4 for LSTM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub(crate) cell: CellKind,
    pub(crate) hidden: usize,
    pub(crate) embed: usize,
    pub(crate) src_vocab: usize,
    pub(crate) tgt_vocab: usize,
    pub(crate) src_emb: Slot,
    pub(crate) tgt_emb: Slot,
    pub(crate) enc: Vec<[CellSlots; 2]>,
    pub(crate) dec_init: Vec<(Slot, Slot)>,
    pub(crate) dec: Vec<CellSlots>,
    pub(crate) att_w: Slot,
    pub(crate) att_u: Slot,
    pub(crate) att_b: Slot,
    pub(crate) att_v: Slot,
    pub(crate) out_w: Slot,
    pub(crate) out_b: Slot,
    specs: Vec<TensorSpec>,
    total: usize,
}

struct Builder {
    offset: usize,
    specs: Vec<TensorSpec>,
}

impl Builder {
    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> Slot {
        let slot = Slot {
            offset: self.offset,
            rows,
            cols,
        };
        self.specs.push(TensorSpec {
            name,
            shape: vec![rows, cols],
            offset: self.offset,
        });
        self.offset += rows * cols;
        slot
    }

    fn vector(&mut self, name: String, n: usize) -> Slot {
        let slot = Slot {
            offset: self.offset,
            rows: n,
            cols: 1,
        };
        self.specs.push(TensorSpec {
            name,
            shape: vec![n],
            offset: self.offset,
        });
        self.offset += n;
        slot
    }

    fn cell(&mut self, prefix: &str, gates: usize, h: usize, in_dim: usize) -> CellSlots {
        CellSlots {
            w: self.matrix(format!("{prefix}.W"), gates * h, in_dim),
            u: self.matrix(format!("{prefix}.U"), gates * h, h),
            b: self.vector(format!("{prefix}.b"), gates * h),
            in_dim,
        }
    }
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let (h, e) = (config.hidden_dim, config.embedding_dim);
        let g = config.cell.gates();
        let mut b = Builder {
            offset: 0,
            specs: Vec::new(),
        };
        let src_emb = b.matrix("src_emb".into(), config.src_vocab, e);
        let tgt_emb = b.matrix("tgt_emb".into(), config.tgt_vocab, e);
        let enc = (0..config.encoder_layers)
            .map(|l| {
                let in_dim = if l == 0 { e } else { 2 * h };
                [
                    b.cell(&format!("enc.{l}.fwd"), g, h, in_dim),
                    b.cell(&format!("enc.{l}.bwd"), g, h, in_dim),
                ]
            })
            .collect();
        let dec_init = (0..config.decoder_layers)
            .map(|l| {
                (
                    b.matrix(format!("dec.{l}.init.W"), h, 2 * h),
                    b.vector(format!("dec.{l}.init.b"), h),
                )
            })
            .collect();
        let dec = (0..config.decoder_layers)
            .map(|l| {
                let in_dim = if l == 0 { e + 2 * h } else { h };
                b.cell(&format!("dec.{l}"), g, h, in_dim)
            })
            .collect();
        let att_w = b.matrix("att.W".into(), h, h);
        let att_u = b.matrix("att.U".into(), h, 2 * h);
        let att_b = b.vector("att.b".into(), h);
        let att_v = b.vector("att.v".into(), h);
        let out_w = b.matrix("out.W".into(), config.tgt_vocab, 3 * h + e);
        let out_b = b.vector("out.b".into(), config.tgt_vocab);
        Self {
            cell: config.cell,
            hidden: h,
            embed: e,
            src_vocab: config.src_vocab,
            tgt_vocab: config.tgt_vocab,
            src_emb,
            tgt_emb,
            enc,
            dec_init,
            dec,
            att_w,
            att_u,
            att_b,
            att_v,
            out_w,
            out_b,
            total: b.offset,
            specs: b.specs,
        }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub(crate) fn state_dim(&self) -> usize {
        self.cell.state_dim(self.hidden)
    }
}

/// All learned weights as one flat fp64 vector, addressed through the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(layout: ParamLayout) -> Self {
        let data = vec![0.0; layout.total()];
        Self { layout, data }
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.spec(name).map(|s| &self.data[s.offset..s.offset + s.len()])
    }

    #[inline]
    pub(crate) fn slot(&self, slot: Slot) -> &[f64] {
        &self.data[slot.range()]
    }

    pub(crate) fn row(&self, slot: Slot, row: usize) -> &[f64] {
        let start = slot.offset + row * slot.cols;
        &self.data[start..start + slot.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Gradient of the loss with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub data: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Self { data: vec![0.0; len] }
    }

    #[inline]
    pub(crate) fn slot_mut(&mut self, slot: Slot) -> &mut [f64] {
        &mut self.data[slot.range()]
    }

    pub(crate) fn row_mut(&mut self, slot: Slot, row: usize) -> &mut [f64] {
        let start = slot.offset + row * slot.cols;
        &mut self.data[start..start + slot.cols]
    }

    pub fn tensor<'a>(&'a self, layout: &ParamLayout, name: &str) -> Option<&'a [f64]> {
        layout.spec(name).map(|s| &self.data[s.offset..s.offset + s.len()])
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
