//! GRU and LSTM cell steps with their exact backward passes.
//!
//! GRU (gates r, z, n):
//!   r = σ(W_r x + U_r h + b_r), z = σ(W_z x + U_z h + b_z),
//!   n = tanh(W_n x + b_n + r ⊙ U_n h), h' = (1 - z) ⊙ n + z ⊙ h
//!
//! LSTM (gates i, f, g, o) with state `[h; c]`:
//!   c' = f ⊙ c + i ⊙ g, h' = o ⊙ tanh(c')

use super::linalg::{matvec, matvec_t_acc, outer_acc, sigmoid};
use super::params::{CellSlots, Gradients, ModelParams};
use super::CellKind;

#[derive(Debug, Clone, Default)]
pub(crate) struct CellCache {
    pub x: Vec<f64>,
    pub prev: Vec<f64>,
    /// Post-activation gates.
    pub gates: Vec<f64>,
    /// GRU: `U_n h`. LSTM: `tanh(c')`.
    pub aux: Vec<f64>,
}

pub(crate) fn forward(
    kind: CellKind,
    params: &ModelParams,
    slots: &CellSlots,
    h: usize,
    x: &[f64],
    prev: &[f64],
    cache: Option<&mut CellCache>,
) -> Vec<f64> {
    let rows = kind.gates() * h;
    let mut pre = vec![0.0; rows];
    matvec(params.slot(slots.w), slots.in_dim, x, &mut pre);
    for (p, b) in pre.iter_mut().zip(params.slot(slots.b)) {
        *p += b;
    }
    let mut uh = vec![0.0; rows];
    matvec(params.slot(slots.u), h, &prev[..h], &mut uh);

    let (next, gates, aux) = match kind {
        CellKind::Gru => {
            let mut gates = vec![0.0; rows];
            let mut next = vec![0.0; h];
            for k in 0..h {
                let r = sigmoid(pre[k] + uh[k]);
                let z = sigmoid(pre[h + k] + uh[h + k]);
                let n = (pre[2 * h + k] + r * uh[2 * h + k]).tanh();
                gates[k] = r;
                gates[h + k] = z;
                gates[2 * h + k] = n;
                next[k] = (1.0 - z) * n + z * prev[k];
            }
            let aux = uh[2 * h..].to_vec();
            (next, gates, aux)
        }
        CellKind::Lstm => {
            let mut gates = vec![0.0; rows];
            let mut next = vec![0.0; 2 * h];
            let mut aux = vec![0.0; h];
            for k in 0..h {
                let i = sigmoid(pre[k] + uh[k]);
                let f = sigmoid(pre[h + k] + uh[h + k]);
                let g = (pre[2 * h + k] + uh[2 * h + k]).tanh();
                let o = sigmoid(pre[3 * h + k] + uh[3 * h + k]);
                let c = f * prev[h + k] + i * g;
                let tc = c.tanh();
                gates[k] = i;
                gates[h + k] = f;
                gates[2 * h + k] = g;
                gates[3 * h + k] = o;
                aux[k] = tc;
                next[k] = o * tc;
                next[h + k] = c;
            }
            (next, gates, aux)
        }
    };
    if let Some(cache) = cache {
        cache.x = x.to_vec();
        cache.prev = prev.to_vec();
        cache.gates = gates;
        cache.aux = aux;
    }
    next
}

/// Accumulates parameter gradients and adds `∂L/∂x` into `dx` and
/// `∂L/∂prev` into `dprev`, given `∂L/∂next` in `dnext`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    kind: CellKind,
    params: &ModelParams,
    slots: &CellSlots,
    h: usize,
    cache: &CellCache,
    dnext: &[f64],
    grads: &mut Gradients,
    dx: &mut [f64],
    dprev: &mut [f64],
) {
    let rows = kind.gates() * h;
    // gradient w.r.t. the W x + b pre-activations and the U h products
    let mut dpre = vec![0.0; rows];
    let mut duh = vec![0.0; rows];
    match kind {
        CellKind::Gru => {
            let g = &cache.gates;
            for k in 0..h {
                let (r, z, n) = (g[k], g[h + k], g[2 * h + k]);
                let dh = dnext[k];
                let dn = dh * (1.0 - z);
                let dz = dh * (cache.prev[k] - n);
                dprev[k] += dh * z;
                let dn_pre = dn * (1.0 - n * n);
                let dr = dn_pre * cache.aux[k];
                let dr_pre = dr * r * (1.0 - r);
                let dz_pre = dz * z * (1.0 - z);
                dpre[k] = dr_pre;
                dpre[h + k] = dz_pre;
                dpre[2 * h + k] = dn_pre;
                duh[k] = dr_pre;
                duh[h + k] = dz_pre;
                duh[2 * h + k] = dn_pre * r;
            }
        }
        CellKind::Lstm => {
            let g = &cache.gates;
            for k in 0..h {
                let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let tc = cache.aux[k];
                let dh = dnext[k];
                let dc = dnext[h + k] + dh * o * (1.0 - tc * tc);
                let d_o = dh * tc;
                let di = dc * gg;
                let dg = dc * i;
                let df = dc * cache.prev[h + k];
                dprev[h + k] += dc * f;
                dpre[k] = di * i * (1.0 - i);
                dpre[h + k] = df * f * (1.0 - f);
                dpre[2 * h + k] = dg * (1.0 - gg * gg);
                dpre[3 * h + k] = d_o * o * (1.0 - o);
            }
            duh.copy_from_slice(&dpre);
        }
    }
    outer_acc(grads.slot_mut(slots.w), &dpre, &cache.x);
    for (gb, d) in grads.slot_mut(slots.b).iter_mut().zip(&dpre) {
        *gb += d;
    }
    outer_acc(grads.slot_mut(slots.u), &duh, &cache.prev[..h]);
    matvec_t_acc(params.slot(slots.w), slots.in_dim, &dpre, dx);
    matvec_t_acc(params.slot(slots.u), h, &duh, &mut dprev[..h]);
}
