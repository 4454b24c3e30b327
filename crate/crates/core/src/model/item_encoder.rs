use super::{BatchPlan, EdgeList, LayerVars, ModelConfig, ModelVars};
use crate::autodiff::{Real, Segments, Tape, Tensor, Var, LEAKY_SLOPE};

/// Mean of each session's rows.
pub fn init_virtual<T: Real>(tape: &mut Tape<'_, T>, occ_rows: Var, sessions: &Segments) -> Var {
    tape.segment_mean(occ_rows, sessions)
}

/// One relation-aware attention layer over `h` (`n × d`).
///
/// Each edge `j -> i` is scored as `aᵀ LeakyReLU([h_i, h_j, e_ij, r_ij] W_att)`,
/// scores are normalized over each destination's incoming edges, and the
/// destination receives the weighted sum of `h_j W_agg`.
pub fn rgat_layer<T: Real>(tape: &mut Tape<'_, T>, h: Var, edges: &EdgeList, layer: &LayerVars, relation_emb: Var) -> Var {
    let d = tape.shape(h)[1];
    let w_i = tape.slice_rows(layer.w_att, 0, d);
    let w_j = tape.slice_rows(layer.w_att, d, 2 * d);
    let w_e = tape.slice_rows(layer.w_att, 2 * d, 2 * d + 1);
    let w_r = tape.slice_rows(layer.w_att, 2 * d + 1, 3 * d + 1);

    let hi = tape.matmul(h, w_i);
    let hj = tape.matmul(h, w_j);
    let rr = tape.matmul(relation_emb, w_r);
    let hi = tape.gather_rows(hi, &edges.dst);
    let hj = tape.gather_rows(hj, &edges.src);
    let rr = tape.gather_rows(rr, &edges.rel);
    let e = tape.constant(Tensor::column(edges.weight.iter().map(|&w| T::from_f64_lossy(w)).collect()));
    let ee = tape.matmul(e, w_e);

    let pre = tape.add(hi, hj);
    let pre = tape.add(pre, rr);
    let pre = tape.add(pre, ee);
    let act = tape.leaky_relu(pre, LEAKY_SLOPE);
    let score = tape.matmul(act, layer.a);
    let alpha = tape.segment_softmax(score, &edges.groups);
    debug_assert!(weights_sum_to_one(tape.value(alpha), &edges.groups));

    let msg = tape.matmul(h, layer.w_agg);
    let msg = tape.gather_rows(msg, &edges.src);
    tape.segment_weighted_sum(alpha, msg, &edges.groups)
}

fn weights_sum_to_one<T: Real>(w: &Tensor<T>, groups: &Segments) -> bool {
    let mut sums = vec![0.0f64; groups.num_groups()];
    for (&g, v) in groups.ids().iter().zip(w.data()) {
        sums[g] += v.as_f64();
    }
    let sizes = groups.group_sizes();
    sums.iter().zip(sizes).all(|(s, n)| n == 0 || (s - 1.0).abs() < 1e-4)
}

/// Gate each occurrence towards its session's virtual node:
/// `δ = σ((h W2)·(h̃ W3) / √d)`, output `(1 − δ) h + δ h̃`.
pub fn personalize<T: Real>(tape: &mut Tape<'_, T>, h_occ: Var, h_tilde: Var, occ_session: &[usize], layer: &LayerVars) -> Var {
    let d = tape.shape(h_occ)[1];
    let q = tape.matmul(h_occ, layer.w2);
    let k = tape.matmul(h_tilde, layer.w3);
    let k = tape.gather_rows(k, occ_session);
    let s = tape.row_dot(q, k);
    let s = tape.scalar_mul(s, 1.0 / (d as f64).sqrt());
    let delta = tape.sigmoid(s);
    let virt = tape.gather_rows(h_tilde, occ_session);
    let diff = tape.sub(virt, h_occ);
    let step = tape.scale_rows(diff, delta);
    tape.add(h_occ, step)
}

/// Attention readout of personalized rows into a new virtual node per session.
pub fn update_virtual<T: Real>(tape: &mut Tape<'_, T>, h_personal: Var, h_tilde: Var, sessions: &Segments, layer: &LayerVars) -> Var {
    let d = tape.shape(h_personal)[1];
    let q = tape.matmul(h_personal, layer.w4);
    let k = tape.matmul(h_tilde, layer.w5);
    let k = tape.gather_rows(k, sessions.ids());
    let s = tape.row_dot(q, k);
    let s = tape.scalar_mul(s, 1.0 / (d as f64).sqrt());
    let beta = tape.segment_softmax(s, sessions);
    tape.segment_weighted_sum(beta, h_personal, sessions)
}

/// Runs the graph layers, returning the final personalized occurrence rows
/// (`N × d`) and virtual nodes (`B × d`).
pub fn encode_items<T: Real>(tape: &mut Tape<'_, T>, vars: &ModelVars, plan: &BatchPlan, config: &ModelConfig) -> (Var, Var) {
    let node_ids: Vec<usize> = plan.nodes.iter().map(|&v| v as usize).collect();
    let mut h = tape.gather_rows(vars.item, &node_ids);
    let mut h_occ = tape.gather_rows(h, &plan.occ_node);
    let mut h_tilde = init_virtual(tape, h_occ, &plan.sessions);
    for layer in vars.layers.iter().take(config.layers) {
        h = rgat_layer(tape, h, &plan.edges, layer, vars.relation);
        if config.layer_norm {
            h = tape.l2_normalize_rows(h);
        }
        h_occ = tape.gather_rows(h, &plan.occ_node);
        if config.personalization {
            h_occ = personalize(tape, h_occ, h_tilde, &plan.occ_session, layer);
            h_tilde = update_virtual(tape, h_occ, h_tilde, &plan.sessions, layer);
        } else {
            h_tilde = init_virtual(tape, h_occ, &plan.sessions);
        }
    }
    (h_occ, h_tilde)
}
