//! Mixture-of-domain-experts transformer.
//!
//! Pre-norm residual layers over motif token matrices: multi-head
//! self-attention, then a feed-forward expert picked by route — one
//! shared expert plus one per domain. Attention and layer-norm
//! parameters are shared across routes; only the experts differ. No
//! positional encodings: motifs are node sets, so the stack is
//! permutation-equivariant.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bindings, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::DomainId;
use crate::rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Expert selector for the feed-forward sublayer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteTag {
    Shared,
    Specific(DomainId),
}

impl RouteTag {
    fn expert_key(&self, cfg: &ModeConfig) -> Result<String> {
        match self {
            RouteTag::Shared => Ok("shared".to_string()),
            RouteTag::Specific(d) => {
                if cfg.domain_ids.contains(d) {
                    Ok(format!("d{d}"))
                } else {
                    Err(Error::Routing(*d))
                }
            }
        }
    }
}

/// Stack dimensions and the registered domains.
#[derive(Debug, Clone)]
pub struct ModeConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub domain_ids: Vec<DomainId>,
}

impl ModeConfig {
    pub fn new(d: usize, heads: usize, layers: usize, domain_ids: Vec<DomainId>) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Validation("transformer needs at least one layer".into()));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Validation(format!(
                "head count {heads} must divide width {d}"
            )));
        }
        Ok(Self {
            d,
            heads,
            layers,
            domain_ids,
        })
    }

    pub fn hidden(&self) -> usize {
        2 * self.d
    }

    /// Every parameter name of the stack, experts included.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.layers {
            for p in ["ln1.gain", "ln1.bias", "ln2.gain", "ln2.bias"] {
                names.push(format!("mode.l{l}.{p}"));
            }
            for p in ["wq", "wk", "wv", "wo"] {
                names.push(format!("mode.l{l}.msa.{p}"));
            }
            let mut experts = vec!["shared".to_string()];
            experts.extend(self.domain_ids.iter().map(|d| format!("d{d}")));
            for e in experts {
                for p in ["w1", "b1", "w2", "b2"] {
                    names.push(format!("mode.l{l}.expert.{e}.{p}"));
                }
            }
        }
        names
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Registers all stack parameters in the store.
pub fn init_mode_params(store: &mut ParamStore, cfg: &ModeConfig, seed: u64) {
    let d = cfg.d;
    let h = cfg.hidden();
    let mut r = rng::stream(seed, "mode-init", &[]);
    for l in 0..cfg.layers {
        store.insert(&format!("mode.l{l}.ln1.gain"), vec![1.0; d], 1, d);
        store.insert(&format!("mode.l{l}.ln1.bias"), vec![0.0; d], 1, d);
        store.insert(&format!("mode.l{l}.ln2.gain"), vec![1.0; d], 1, d);
        store.insert(&format!("mode.l{l}.ln2.bias"), vec![0.0; d], 1, d);
        for p in ["wq", "wk", "wv", "wo"] {
            store.insert(&format!("mode.l{l}.msa.{p}"), xavier(&mut r, d, d), d, d);
        }
        let mut experts = vec!["shared".to_string()];
        experts.extend(cfg.domain_ids.iter().map(|dm| format!("d{dm}")));
        for e in experts {
            store.insert(&format!("mode.l{l}.expert.{e}.w1"), xavier(&mut r, d, h), d, h);
            store.insert(&format!("mode.l{l}.expert.{e}.b1"), vec![0.0; h], 1, h);
            store.insert(&format!("mode.l{l}.expert.{e}.w2"), xavier(&mut r, h, d), h, d);
            store.insert(&format!("mode.l{l}.expert.{e}.b2"), vec![0.0; d], 1, d);
        }
    }
}

/// Multi-head self-attention over an m×d token matrix.
fn self_attention(
    tape: &mut Tape,
    binds: &mut Bindings,
    store: &ParamStore,
    x: Var,
    layer: usize,
    cfg: &ModeConfig,
) -> Result<Var> {
    let wq = binds.param(tape, store, &format!("mode.l{layer}.msa.wq"))?;
    let wk = binds.param(tape, store, &format!("mode.l{layer}.msa.wk"))?;
    let wv = binds.param(tape, store, &format!("mode.l{layer}.msa.wv"))?;
    let wo = binds.param(tape, store, &format!("mode.l{layer}.msa.wo"))?;
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let dh = cfg.d / cfg.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for hix in 0..cfg.heads {
        let qh = tape.slice_cols(q, hix * dh, dh)?;
        let kh = tape.slice_cols(k, hix * dh, dh)?;
        let vh = tape.slice_cols(v, hix * dh, dh)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scaled)?;
        heads.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat_cols_mat(&heads)?;
    tape.matmul(merged, wo)
}

/// Feed-forward expert selected by route: `W2·silu(W1·x + b1) + b2`.
fn expert_ffn(
    tape: &mut Tape,
    binds: &mut Bindings,
    store: &ParamStore,
    x: Var,
    layer: usize,
    route: RouteTag,
    cfg: &ModeConfig,
) -> Result<Var> {
    let key = route.expert_key(cfg)?;
    let w1 = binds.param(tape, store, &format!("mode.l{layer}.expert.{key}.w1"))?;
    let b1 = binds.param(tape, store, &format!("mode.l{layer}.expert.{key}.b1"))?;
    let w2 = binds.param(tape, store, &format!("mode.l{layer}.expert.{key}.w2"))?;
    let b2 = binds.param(tape, store, &format!("mode.l{layer}.expert.{key}.b2"))?;
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.silu(h);
    let o = tape.matmul(h, w2)?;
    tape.add_row(o, b2)
}

/// One pre-norm layer: `t' = MSA(LN(t)) + t`, then
/// `t'' = FFN_route(LN(t')) + t'`.
pub fn mode_layer_forward(
    tape: &mut Tape,
    binds: &mut Bindings,
    store: &ParamStore,
    t_in: Var,
    layer: usize,
    route: RouteTag,
    cfg: &ModeConfig,
) -> Result<Var> {
    let (m, d) = tape.shape(t_in);
    if m == 0 || d != cfg.d {
        return Err(Error::Dimension(format!("layer input {m}x{d}")));
    }
    let g1 = binds.param(tape, store, &format!("mode.l{layer}.ln1.gain"))?;
    let b1 = binds.param(tape, store, &format!("mode.l{layer}.ln1.bias"))?;
    let normed = tape.layer_norm(t_in, g1, b1, LAYER_NORM_EPS)?;
    let attn = self_attention(tape, binds, store, normed, layer, cfg)?;
    let t_mid = tape.add(attn, t_in)?;

    let g2 = binds.param(tape, store, &format!("mode.l{layer}.ln2.gain"))?;
    let b2 = binds.param(tape, store, &format!("mode.l{layer}.ln2.bias"))?;
    let normed2 = tape.layer_norm(t_mid, g2, b2, LAYER_NORM_EPS)?;
    let ffn = expert_ffn(tape, binds, store, normed2, layer, route, cfg)?;
    tape.add(ffn, t_mid)
}

/// Applies the full stack to a motif token matrix.
pub fn encode_motif(
    tape: &mut Tape,
    binds: &mut Bindings,
    store: &ParamStore,
    t0: Var,
    route: RouteTag,
    cfg: &ModeConfig,
) -> Result<Var> {
    let mut t = t0;
    for l in 0..cfg.layers {
        t = mode_layer_forward(tape, binds, store, t, l, route, cfg)?;
    }
    Ok(t)
}
