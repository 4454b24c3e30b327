use super::{BatchPlan, ModelConfig, ModelVars};
use crate::autodiff::{Real, Tape, Tensor, Var, LEAKY_SLOPE};

/// `z = h + P[reverse position] + Lt[length]` per occurrence.
pub fn positional_fuse<T: Real>(tape: &mut Tape<'_, T>, h_occ: Var, position: Var, length: Var, plan: &BatchPlan) -> Var {
    let p = tape.gather_rows(position, &plan.occ_position);
    let l = tape.gather_rows(length, &plan.occ_length);
    let z = tape.add(h_occ, p);
    tape.add(z, l)
}

/// Mean category embedding per session.
pub fn category_context<T: Real>(tape: &mut Tape<'_, T>, category: Var, plan: &BatchPlan) -> Var {
    let c = tape.gather_rows(category, &plan.occ_category);
    tape.segment_mean(c, &plan.sessions)
}

/// `Σ_i γ_i z_i` with `γ_i` from a two-layer MLP over
/// `[z_i, z_t, h̃, h_c]`; the weights are not normalized.
pub fn attention_pool<T: Real>(
    tape: &mut Tape<'_, T>,
    vars: &ModelVars,
    z: Var,
    z_last: Var,
    h_tilde: Var,
    h_c: Var,
    plan: &BatchPlan,
) -> Var {
    let zt = tape.gather_rows(z_last, &plan.occ_session);
    let ht = tape.gather_rows(h_tilde, &plan.occ_session);
    let hc = tape.gather_rows(h_c, &plan.occ_session);
    let input = tape.concat_cols(&[z, zt, ht, hc]);
    let hidden = tape.matmul(input, vars.mlp_w1);
    let hidden = tape.add_row(hidden, vars.mlp_b1);
    let hidden = tape.leaky_relu(hidden, LEAKY_SLOPE);
    let gamma = tape.matmul(hidden, vars.mlp_w2);
    let gamma = tape.add_row(gamma, vars.mlp_b2);
    tape.segment_weighted_sum(gamma, z, &plan.sessions)
}

/// `[z̄, z_t] W6`.
pub fn combine<T: Real>(tape: &mut Tape<'_, T>, pooled: Var, z_last: Var, w6: Var) -> Var {
    let cat = tape.concat_cols(&[pooled, z_last]);
    tape.matmul(cat, w6)
}

/// Positional fusion, attention pooling and combination for one set of
/// occurrence rows.
pub fn session_path<T: Real>(tape: &mut Tape<'_, T>, vars: &ModelVars, plan: &BatchPlan, h_occ: Var, h_tilde: Var, h_c: Var) -> Var {
    let z = positional_fuse(tape, h_occ, vars.position, vars.length, plan);
    let z_last = tape.gather_rows(z, &plan.last);
    let pooled = attention_pool(tape, vars, z, z_last, h_tilde, h_c, plan);
    combine(tape, pooled, z_last, vars.w6)
}

/// Session vector: the personalized path plus the same computation on raw
/// table rows, whose virtual node is their mean.
pub fn encode_session<T: Real>(
    tape: &mut Tape<'_, T>,
    vars: &ModelVars,
    plan: &BatchPlan,
    config: &ModelConfig,
    h_personal: Var,
    h_tilde: Var,
) -> Var {
    let h_c = if config.side_information {
        category_context(tape, vars.category, plan)
    } else {
        tape.constant(Tensor::zeros(plan.batch_size(), config.dim))
    };
    let main = session_path(tape, vars, plan, h_personal, h_tilde, h_c);
    let raw = tape.gather_rows(vars.item, &plan.occ_item);
    let raw_tilde = tape.segment_mean(raw, &plan.sessions);
    let skip = session_path(tape, vars, plan, raw, raw_tilde, h_c);
    tape.add(main, skip)
}
