//! Item encoder, session encoder and catalog scoring.

mod config;
mod item_encoder;
mod params;
mod plan;
mod session_encoder;

pub use config::ModelConfig;
pub use item_encoder::{encode_items, init_virtual, personalize, rgat_layer, update_virtual};
pub use params::{LayerVars, Model, ModelLayout, ModelVars};
pub use plan::{BatchPlan, EdgeList};
pub use session_encoder::{
    attention_pool, category_context, combine, encode_session, positional_fuse, session_path,
};

use crate::autodiff::{Real, Tape, Var};

/// `τ · cos(h_s, item)` for every catalog item, `B × m`.
pub fn score_logits<T: Real>(tape: &mut Tape<'_, T>, vars: &ModelVars, h_s: Var, scale: f64) -> Var {
    let hs = tape.l2_normalize_rows(h_s);
    let items = tape.l2_normalize_rows(vars.item);
    let cos = tape.matmul_nt(hs, items);
    tape.scalar_mul(cos, scale)
}

/// Session vectors for every session in the plan, `B × d`.
pub fn forward<T: Real>(tape: &mut Tape<'_, T>, vars: &ModelVars, plan: &BatchPlan, config: &ModelConfig) -> Var {
    let (personal, h_tilde) = encode_items(tape, vars, plan, config);
    encode_session(tape, vars, plan, config, personal, h_tilde)
}

#[cfg(test)]
mod tests;
