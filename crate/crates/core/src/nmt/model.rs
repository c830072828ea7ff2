use super::cell::{self, CellCache};
use super::linalg::{add_assign, dot, matvec, matvec_t_acc, outer_acc, softmax_in_place};
use super::params::{Gradients, ModelParams, ParamLayout};
use super::{check_ids, EncodedPair, ModelConfig};
use crate::error::Result;
use crate::exec::Exec;
use crate::subword::{BOS_ID, EOS_ID};

/// Encoder output for one source sentence.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    pub len: usize,
    /// `len × 2H` annotations, row per source position.
    pub annotations: Vec<f64>,
    /// `len × H` attention projections `U_att h_j`.
    projected: Vec<f64>,
    /// Mean annotation, input of the decoder's initial state.
    mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub(crate) layers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Softmax over the target vocabulary.
    pub probs: Vec<f64>,
    /// Attention distribution over source positions.
    pub attention: Vec<f64>,
    pub state: DecoderState,
}

#[derive(Debug, Default)]
struct EncoderCache {
    /// `[layer][direction][position]`
    cells: Vec<[Vec<CellCache>; 2]>,
}

#[derive(Debug)]
struct StepCache {
    prev_token: u32,
    target: u32,
    prev_top: Vec<f64>,
    att_hidden: Vec<f64>,
    alpha: Vec<f64>,
    context: Vec<f64>,
    cells: Vec<CellCache>,
    out_input: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug)]
struct ExampleCache {
    src: Vec<u32>,
    encoder: EncoderCache,
    encoded: EncodedSource,
    init_states: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
    loss_sum: f64,
}

/// Activations of a teacher-forced forward pass over a batch.
#[derive(Debug)]
pub struct BatchCache {
    examples: Vec<ExampleCache>,
    tokens: usize,
}

impl BatchCache {
    /// Number of predicted target tokens (including `</s>`).
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Attention distributions of every decoder step of every example.
    pub fn attention_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.examples
            .iter()
            .flat_map(|e| e.steps.iter().map(|s| s.alpha.as_slice()))
    }

    /// Output distributions of every decoder step of every example.
    pub fn output_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.examples
            .iter()
            .flat_map(|e| e.steps.iter().map(|s| s.probs.as_slice()))
    }
}

fn encode_impl(params: &ModelParams, src: &[u32], mut cache: Option<&mut EncoderCache>) -> EncodedSource {
    let layout = &params.layout;
    let (h, kind) = (layout.hidden, layout.cell);
    let sd = layout.state_dim();
    let len = src.len();
    let mut inputs: Vec<Vec<f64>> = src
        .iter()
        .map(|&id| params.row(layout.src_emb, id as usize).to_vec())
        .collect();
    for layer in &layout.enc {
        let mut outputs = vec![vec![0.0; 2 * h]; len];
        let mut caches: [Vec<CellCache>; 2] = [Vec::new(), Vec::new()];
        for (dir, slots) in layer.iter().enumerate() {
            let want_cache = cache.is_some();
            let mut dir_cache = if want_cache {
                vec![CellCache::default(); len]
            } else {
                Vec::new()
            };
            let mut state = vec![0.0; sd];
            let order: Box<dyn Iterator<Item = usize>> = if dir == 0 {
                Box::new(0..len)
            } else {
                Box::new((0..len).rev())
            };
            for j in order {
                state = cell::forward(
                    kind,
                    params,
                    slots,
                    h,
                    &inputs[j],
                    &state,
                    dir_cache.get_mut(j),
                );
                outputs[j][dir * h..(dir + 1) * h].copy_from_slice(&state[..h]);
            }
            caches[dir] = dir_cache;
        }
        if let Some(c) = cache.as_deref_mut() {
            c.cells.push(caches);
        }
        inputs = outputs;
    }
    let annotations: Vec<f64> = inputs.concat();
    let mut mean = vec![0.0; 2 * h];
    for row in annotations.chunks_exact(2 * h) {
        add_assign(&mut mean, row);
    }
    for m in &mut mean {
        *m /= len as f64;
    }
    let mut projected = vec![0.0; len * h];
    let att_u = params.slot(layout.att_u);
    for (row, out) in annotations.chunks_exact(2 * h).zip(projected.chunks_exact_mut(h)) {
        matvec(att_u, 2 * h, row, out);
    }
    EncodedSource {
        len,
        annotations,
        projected,
        mean,
    }
}

/// Runs the encoder over source ids (all ids must be in range).
pub fn encode_source(params: &ModelParams, src: &[u32]) -> EncodedSource {
    encode_impl(params, src, None)
}

pub fn initial_state(params: &ModelParams, enc: &EncodedSource) -> DecoderState {
    let layout = &params.layout;
    let h = layout.hidden;
    let layers = layout
        .dec_init
        .iter()
        .map(|&(w, b)| {
            let mut s = vec![0.0; layout.state_dim()];
            matvec(params.slot(w), 2 * h, &enc.mean, &mut s[..h]);
            for (x, bias) in s[..h].iter_mut().zip(params.slot(b)) {
                *x = (*x + bias).tanh();
            }
            s
        })
        .collect();
    DecoderState { layers }
}

fn step_impl(
    params: &ModelParams,
    enc: &EncodedSource,
    state: &DecoderState,
    prev_token: u32,
    cache: Option<&mut StepCache>,
) -> StepOutput {
    let layout = &params.layout;
    let (h, e, kind) = (layout.hidden, layout.embed, layout.cell);
    let top = layout.dec.len() - 1;
    let prev_top = &state.layers[top][..h];

    let mut base = vec![0.0; h];
    matvec(params.slot(layout.att_w), h, prev_top, &mut base);
    add_assign(&mut base, params.slot(layout.att_b));
    let v = params.slot(layout.att_v);
    let mut att_hidden = vec![0.0; enc.len * h];
    let mut alpha = vec![0.0; enc.len];
    for j in 0..enc.len {
        let a = &mut att_hidden[j * h..(j + 1) * h];
        for ((ak, bk), pk) in a.iter_mut().zip(&base).zip(&enc.projected[j * h..(j + 1) * h]) {
            *ak = (bk + pk).tanh();
        }
        alpha[j] = dot(v, a);
    }
    softmax_in_place(&mut alpha);
    let mut context = vec![0.0; 2 * h];
    for (j, &a) in alpha.iter().enumerate() {
        for (c, x) in context.iter_mut().zip(&enc.annotations[j * 2 * h..(j + 1) * 2 * h]) {
            *c += a * x;
        }
    }

    let emb = params.row(layout.tgt_emb, prev_token as usize);
    let mut x: Vec<f64> = Vec::with_capacity(e + 2 * h);
    x.extend_from_slice(emb);
    x.extend_from_slice(&context);
    let want_cache = cache.is_some();
    let mut cells = Vec::with_capacity(layout.dec.len());
    let mut layers = Vec::with_capacity(layout.dec.len());
    for (l, slots) in layout.dec.iter().enumerate() {
        let mut cc = CellCache::default();
        let next = cell::forward(
            kind,
            params,
            slots,
            h,
            &x,
            &state.layers[l],
            want_cache.then_some(&mut cc),
        );
        x = next[..h].to_vec();
        layers.push(next);
        if want_cache {
            cells.push(cc);
        }
    }

    let mut out_input = Vec::with_capacity(3 * h + e);
    out_input.extend_from_slice(&layers[top][..h]);
    out_input.extend_from_slice(&context);
    out_input.extend_from_slice(emb);
    let mut probs = vec![0.0; layout.tgt_vocab];
    matvec(params.slot(layout.out_w), 3 * h + e, &out_input, &mut probs);
    add_assign(&mut probs, params.slot(layout.out_b));
    softmax_in_place(&mut probs);

    if let Some(c) = cache {
        c.prev_token = prev_token;
        c.prev_top = prev_top.to_vec();
        c.att_hidden = att_hidden;
        c.alpha = alpha.clone();
        c.context = context;
        c.cells = cells;
        c.out_input = out_input;
        c.probs = probs.clone();
    }
    StepOutput {
        probs,
        attention: alpha,
        state: DecoderState { layers },
    }
}

/// One decoder step: distribution over the next target token.
pub fn step_distribution(params: &ModelParams, enc: &EncodedSource, state: &DecoderState, prev_token: u32) -> StepOutput {
    step_impl(params, enc, state, prev_token, None)
}

fn forward_example(params: &ModelParams, pair: &EncodedPair) -> ExampleCache {
    let mut encoder = EncoderCache::default();
    let encoded = encode_impl(params, &pair.src, Some(&mut encoder));
    let init = initial_state(params, &encoded);
    let init_states = init.layers.clone();
    let mut state = init;
    let mut prev = BOS_ID;
    let mut steps = Vec::with_capacity(pair.tgt.len() + 1);
    let mut loss_sum = 0.0;
    for &target in pair.tgt.iter().chain(std::iter::once(&EOS_ID)) {
        let mut sc = StepCache {
            prev_token: 0,
            target,
            prev_top: Vec::new(),
            att_hidden: Vec::new(),
            alpha: Vec::new(),
            context: Vec::new(),
            cells: Vec::new(),
            out_input: Vec::new(),
            probs: Vec::new(),
        };
        let out = step_impl(params, &encoded, &state, prev, Some(&mut sc));
        loss_sum -= out.probs[target as usize].ln();
        steps.push(sc);
        state = out.state;
        prev = target;
    }
    ExampleCache {
        src: pair.src.clone(),
        encoder,
        encoded,
        init_states,
        steps,
        loss_sum,
    }
}

/// Unscaled gradient of the example's summed token loss.
fn backward_example(params: &ModelParams, ex: &ExampleCache) -> Gradients {
    let layout: &ParamLayout = &params.layout;
    let (h, e, kind) = (layout.hidden, layout.embed, layout.cell);
    let sd = layout.state_dim();
    let top = layout.dec.len() - 1;
    let s_len = ex.encoded.len;
    let mut g = Gradients::zeros(layout.total());
    let mut d_ann = vec![0.0; s_len * 2 * h];
    let mut d_proj = vec![0.0; s_len * h];
    // gradient w.r.t. each decoder layer's state at the current time step
    let mut d_state: Vec<Vec<f64>> = vec![vec![0.0; sd]; layout.dec.len()];
    let out_cols = 3 * h + e;
    let v = params.slot(layout.att_v);

    for sc in ex.steps.iter().rev() {
        let mut dlogits = sc.probs.clone();
        dlogits[sc.target as usize] -= 1.0;
        outer_acc(g.slot_mut(layout.out_w), &dlogits, &sc.out_input);
        add_assign(g.slot_mut(layout.out_b), &dlogits);
        let mut d_out = vec![0.0; out_cols];
        matvec_t_acc(params.slot(layout.out_w), out_cols, &dlogits, &mut d_out);

        add_assign(&mut d_state[top][..h], &d_out[..h]);
        let mut dc = d_out[h..3 * h].to_vec();
        let mut d_emb = d_out[3 * h..].to_vec();

        for l in (0..layout.dec.len()).rev() {
            let slots = &layout.dec[l];
            let dnext = std::mem::replace(&mut d_state[l], vec![0.0; sd]);
            let mut dx = vec![0.0; slots.in_dim];
            cell::backward(kind, params, slots, h, &sc.cells[l], &dnext, &mut g, &mut dx, &mut d_state[l]);
            if l > 0 {
                add_assign(&mut d_state[l - 1][..h], &dx);
            } else {
                add_assign(&mut d_emb, &dx[..e]);
                add_assign(&mut dc, &dx[e..]);
            }
        }
        add_assign(g.row_mut(layout.tgt_emb, sc.prev_token as usize), &d_emb);

        // context = Σ α_j ann_j ; α = softmax(e) ; e_j = v · tanh(W s + b + U ann_j)
        let mut d_alpha = vec![0.0; s_len];
        for j in 0..s_len {
            let ann = &ex.encoded.annotations[j * 2 * h..(j + 1) * 2 * h];
            d_alpha[j] = dot(&dc, ann);
            for (d, c) in d_ann[j * 2 * h..(j + 1) * 2 * h].iter_mut().zip(&dc) {
                *d += sc.alpha[j] * c;
            }
        }
        let mean_d: f64 = sc.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        let mut dz_sum = vec![0.0; h];
        for j in 0..s_len {
            let de = sc.alpha[j] * (d_alpha[j] - mean_d);
            if de == 0.0 {
                continue;
            }
            let a = &sc.att_hidden[j * h..(j + 1) * h];
            let gv = g.slot_mut(layout.att_v);
            for (gvk, ak) in gv.iter_mut().zip(a) {
                *gvk += de * ak;
            }
            let dp = &mut d_proj[j * h..(j + 1) * h];
            for k in 0..h {
                let dz = de * v[k] * (1.0 - a[k] * a[k]);
                dp[k] += dz;
                dz_sum[k] += dz;
            }
        }
        outer_acc(g.slot_mut(layout.att_w), &dz_sum, &sc.prev_top);
        add_assign(g.slot_mut(layout.att_b), &dz_sum);
        matvec_t_acc(params.slot(layout.att_w), h, &dz_sum, &mut d_state[top][..h]);
    }

    // decoder initial states: s0 = tanh(W mean + b); an LSTM's initial cell is constant zero
    let mut d_mean = vec![0.0; 2 * h];
    for (l, &(w, b)) in layout.dec_init.iter().enumerate() {
        let s0 = &ex.init_states[l][..h];
        let dpre: Vec<f64> = d_state[l][..h]
            .iter()
            .zip(s0)
            .map(|(d, s)| d * (1.0 - s * s))
            .collect();
        outer_acc(g.slot_mut(w), &dpre, &ex.encoded.mean);
        add_assign(g.slot_mut(b), &dpre);
        matvec_t_acc(params.slot(w), 2 * h, &dpre, &mut d_mean);
    }
    let inv = 1.0 / s_len as f64;
    for j in 0..s_len {
        let ann = &ex.encoded.annotations[j * 2 * h..(j + 1) * 2 * h];
        let dp = &d_proj[j * h..(j + 1) * h];
        outer_acc(g.slot_mut(layout.att_u), dp, ann);
        let da = &mut d_ann[j * 2 * h..(j + 1) * 2 * h];
        matvec_t_acc(params.slot(layout.att_u), 2 * h, dp, da);
        for (d, m) in da.iter_mut().zip(&d_mean) {
            *d += m * inv;
        }
    }

    // encoder, top layer first
    let mut d_out = d_ann;
    for (l, layer) in layout.enc.iter().enumerate().rev() {
        let in_dim = layer[0].in_dim;
        let mut d_in = vec![0.0; s_len * in_dim];
        for (dir, slots) in layer.iter().enumerate() {
            let caches = &ex.encoder.cells[l][dir];
            let mut d_state = vec![0.0; sd];
            let order: Box<dyn Iterator<Item = usize>> = if dir == 0 {
                Box::new((0..s_len).rev())
            } else {
                Box::new(0..s_len)
            };
            for j in order {
                let mut dnext = std::mem::replace(&mut d_state, vec![0.0; sd]);
                add_assign(&mut dnext[..h], &d_out[j * 2 * h + dir * h..j * 2 * h + (dir + 1) * h]);
                cell::backward(
                    kind,
                    params,
                    slots,
                    h,
                    &caches[j],
                    &dnext,
                    &mut g,
                    &mut d_in[j * in_dim..(j + 1) * in_dim],
                    &mut d_state,
                );
            }
        }
        if l == 0 {
            for (j, &id) in ex.src.iter().enumerate() {
                add_assign(g.row_mut(layout.src_emb, id as usize), &d_in[j * in_dim..(j + 1) * in_dim]);
            }
        }
        d_out = d_in;
    }
    g
}

/// Teacher-forced forward pass. Returns the mean token cross-entropy (nats)
/// over all target tokens including `</s>`, plus the cached activations.
pub fn forward_loss(params: &ModelParams, batch: &[EncodedPair]) -> Result<(f64, BatchCache)> {
    forward_loss_with(params, batch, Exec::Sequential)
}

pub(crate) fn forward_loss_with(params: &ModelParams, batch: &[EncodedPair], exec: Exec) -> Result<(f64, BatchCache)> {
    check_config_ids(params, batch)?;
    let examples = exec.map(batch, |pair| forward_example(params, pair));
    let tokens: usize = batch.iter().map(EncodedPair::target_tokens).sum();
    let total: f64 = examples.iter().map(|e| e.loss_sum).sum();
    let mean = if tokens == 0 { 0.0 } else { total / tokens as f64 };
    Ok((mean, BatchCache { examples, tokens }))
}

/// Exact gradient of the mean loss computed by [`forward_loss`].
pub fn backward(params: &ModelParams, cache: &BatchCache) -> Gradients {
    let per_example: Vec<Gradients> = cache.examples.iter().map(|ex| backward_example(params, ex)).collect();
    reduce(params, per_example, cache.tokens)
}

fn reduce(params: &ModelParams, per_example: Vec<Gradients>, tokens: usize) -> Gradients {
    let mut total = Gradients::zeros(params.layout.total());
    for g in &per_example {
        add_assign(&mut total.data, &g.data);
    }
    if tokens > 0 {
        let scale = 1.0 / tokens as f64;
        for x in &mut total.data {
            *x *= scale;
        }
    }
    total
}

/// Fused forward and backward pass. Examples are processed independently
/// (in parallel under `Exec::Parallel`) and reduced in batch order, so the
/// result equals `backward(forward_loss(..))` bit for bit.
pub fn loss_and_gradient(params: &ModelParams, batch: &[EncodedPair], exec: Exec) -> Result<(f64, Gradients, usize)> {
    check_config_ids(params, batch)?;
    let per: Vec<(f64, Gradients)> = exec.map(batch, |pair| {
        let ex = forward_example(params, pair);
        (ex.loss_sum, backward_example(params, &ex))
    });
    let tokens: usize = batch.iter().map(EncodedPair::target_tokens).sum();
    let total: f64 = per.iter().map(|(l, _)| l).sum();
    let mean = if tokens == 0 { 0.0 } else { total / tokens as f64 };
    let grads = reduce(params, per.into_iter().map(|(_, g)| g).collect(), tokens);
    Ok((mean, grads, tokens))
}

/// Summed token loss and token count, without gradients.
pub(crate) fn loss_sum(params: &ModelParams, batch: &[EncodedPair], exec: Exec) -> Result<(f64, usize)> {
    check_config_ids(params, batch)?;
    let sums = exec.map(batch, |pair| forward_example(params, pair).loss_sum);
    Ok((sums.iter().sum(), batch.iter().map(EncodedPair::target_tokens).sum()))
}

fn check_config_ids(params: &ModelParams, batch: &[EncodedPair]) -> Result<()> {
    let l = &params.layout;
    let cfg = ModelConfig {
        src_vocab: l.src_vocab,
        tgt_vocab: l.tgt_vocab,
        embedding_dim: l.embed,
        hidden_dim: l.hidden,
        encoder_layers: l.enc.len(),
        decoder_layers: l.dec.len(),
        cell: l.cell,
        seed: 0,
    };
    check_ids(&cfg, batch)
}
