use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Segments, Tape, Tensor};
use crate::data::ItemId;
use crate::graph::{build_graph, CrossSessionGraph, GraphConfig};

fn rand_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(rows, cols, 1.0, rng)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn const_layer(tape: &mut Tape<'_, f64>, d: usize, rng: &mut ChaCha8Rng) -> LayerVars {
    LayerVars {
        w_agg: tape.constant(rand_tensor(d, d, rng)),
        w_att: tape.constant(rand_tensor(3 * d + 1, d, rng)),
        a: tape.constant(rand_tensor(d, 1, rng)),
        w2: tape.constant(rand_tensor(d, d, rng)),
        w3: tape.constant(rand_tensor(d, d, rng)),
        w4: tape.constant(rand_tensor(d, d, rng)),
        w5: tape.constant(rand_tensor(d, d, rng)),
    }
}

fn matvec(x: &[f64], w: &Tensor<f64>) -> Vec<f64> {
    (0..w.cols()).map(|c| (0..w.rows()).map(|r| x[r] * w.get(r, c)).sum()).collect()
}

fn dotf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn init_virtual_cases() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_vec(3, 2, vec![1.0, 2.0, -1.0, -2.0, 5.0, 7.0]));
    let v = init_virtual(&mut tape, x, &Segments::new(vec![0, 0, 1], 2));
    assert_eq!(tape.value(v).data(), &[0.0, 0.0, 5.0, 7.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = rand_tensor(3, 4, &mut rng);
    let x = tape.constant(r.clone());
    let v = init_virtual(&mut tape, x, &Segments::new(vec![0; 3], 1));
    let mean: Vec<f64> = (0..4).map(|c| (r.get(0, c) + r.get(1, c) + r.get(2, c)) / 3.0).collect();
    assert!(close(tape.value(v).data(), &mean, 1e-14));
}

#[test]
fn isolated_node_is_projected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::<f64>::new();
    let layer = const_layer(&mut tape, 3, &mut rng);
    let rel = tape.constant(rand_tensor(3, 3, &mut rng));
    let h = rand_tensor(1, 3, &mut rng);
    let hv = tape.constant(h.clone());
    let edges = EdgeList::with_self_edges(1, 2, []);
    let out = rgat_layer(&mut tape, hv, &edges, &layer, rel);
    let expected = matvec(h.row(0), tape.value(layer.w_agg));
    assert!(close(tape.value(out).data(), &expected, 1e-14));
}

#[test]
fn identical_neighbour_gets_half_the_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::<f64>::new();
    let layer = const_layer(&mut tape, 4, &mut rng);
    let rel = tape.constant(rand_tensor(3, 4, &mut rng));
    let row = rand_tensor(1, 4, &mut rng);
    let mut two = row.data().to_vec();
    two.extend_from_slice(row.data());
    let hv = tape.constant(Tensor::from_vec(2, 4, two));
    // Node 1 hears node 0 with unit weight under the self relation.
    let edges = EdgeList::with_self_edges(2, 2, [(0, 1, 2, 1.0)]);
    let out = rgat_layer(&mut tape, hv, &edges, &layer, rel);
    // Node 1 receives 0.5 * m0 + 0.5 * m1 with m0 == m1, so the output
    // equals node 0's isolated projection.
    let m = matvec(row.row(0), tape.value(layer.w_agg));
    assert!(close(tape.value(out).row(1), &m, 1e-14));
}

/// Materializes the full attention matrix with explicit loops.
fn dense_rgat(h: &Tensor<f64>, adj: &[Vec<Option<(usize, f64)>>], layer: &[&Tensor<f64>; 3], rel: &Tensor<f64>, self_rel: usize) -> Vec<Vec<f64>> {
    let [w_agg, w_att, a] = *layer;
    let n = h.rows();
    let d = h.cols();
    let mut out = vec![vec![0.0; d]; n];
    for i in 0..n {
        let mut scores = vec![f64::NEG_INFINITY; n];
        for j in 0..n {
            let feat = if i == j { Some((self_rel, 1.0)) } else { adj[i][j] };
            let Some((r, e)) = feat else { continue };
            let mut x = Vec::with_capacity(3 * d + 1);
            x.extend_from_slice(h.row(i));
            x.extend_from_slice(h.row(j));
            x.push(e);
            x.extend_from_slice(rel.row(r));
            let pre = matvec(&x, w_att);
            let act: Vec<f64> = pre.iter().map(|&v| if v > 0.0 { v } else { 0.2 * v }).collect();
            scores[j] = dotf(&act, a.data());
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        for j in 0..n {
            let alpha = (scores[j] - max).exp() / z;
            if alpha > 0.0 {
                let msg = matvec(h.row(j), w_agg);
                for c in 0..d {
                    out[i][c] += alpha * msg[c];
                }
            }
        }
    }
    out
}

#[test]
fn rgat_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, d, r) = (5, 4, 5);
    let h = rand_tensor(n, d, &mut rng);
    let rel = rand_tensor(r, d, &mut rng);
    let mut adj = vec![vec![None; n]; n];
    let mut list = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(0.5) {
                let feat = (rng.random_range(0..r - 1), rng.random_range(0.1..3.0));
                adj[i][j] = Some(feat);
                list.push((j, i, feat.0, feat.1));
            }
        }
    }
    let mut tape = Tape::<f64>::new();
    let layer = const_layer(&mut tape, d, &mut rng);
    let hv = tape.constant(h.clone());
    let rv = tape.constant(rel.clone());
    let edges = EdgeList::with_self_edges(n, r - 1, list);
    let out = rgat_layer(&mut tape, hv, &edges, &layer, rv);
    let expected = dense_rgat(
        &h,
        &adj,
        &[tape.value(layer.w_agg), tape.value(layer.w_att), tape.value(layer.a)],
        &rel,
        r - 1,
    );
    for i in 0..n {
        assert!(close(tape.value(out).row(i), &expected[i], 1e-12), "node {i}");
    }
}

#[test]
fn personalize_cases() {
    let mut tape = Tape::<f64>::new();
    let eye = tape.constant(Tensor::identity(2));
    let layer = LayerVars {
        w_agg: eye,
        w_att: eye,
        a: eye,
        w2: eye,
        w3: eye,
        w4: eye,
        w5: eye,
    };
    let h = tape.constant(Tensor::from_vec(1, 2, vec![2.0, 0.0]));
    let ht = tape.constant(Tensor::from_vec(1, 2, vec![0.0, 4.0]));
    let out = personalize(&mut tape, h, ht, &[0], &layer);
    assert_eq!(tape.value(out).data(), &[1.0, 2.0]);
    let out = personalize(&mut tape, h, h, &[0], &layer);
    assert_eq!(tape.value(out).data(), &[2.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 3;
    let layer = const_layer(&mut tape, d, &mut rng);
    let hr = rand_tensor(2, d, &mut rng);
    let tr = rand_tensor(1, d, &mut rng);
    let h = tape.constant(hr.clone());
    let ht = tape.constant(tr.clone());
    let out = personalize(&mut tape, h, ht, &[0, 0], &layer);
    for i in 0..2 {
        let s = dotf(&matvec(hr.row(i), tape.value(layer.w2)), &matvec(tr.row(0), tape.value(layer.w3))) / (d as f64).sqrt();
        let delta = 1.0 / (1.0 + (-s).exp());
        assert!(delta > 0.0 && delta < 1.0);
        let expected: Vec<f64> = (0..d).map(|c| (1.0 - delta) * hr.get(i, c) + delta * tr.get(0, c)).collect();
        assert!(close(tape.value(out).row(i), &expected, 1e-14));
    }
}

#[test]
fn update_virtual_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = 3;
    let mut tape = Tape::<f64>::new();
    let layer = const_layer(&mut tape, d, &mut rng);
    let row = rand_tensor(1, d, &mut rng);
    let tr = rand_tensor(1, d, &mut rng);
    let ht = tape.constant(tr.clone());

    let single = tape.constant(row.clone());
    let out = update_virtual(&mut tape, single, ht, &Segments::new(vec![0], 1), &layer);
    assert!(close(tape.value(out).data(), row.data(), 1e-15));

    let mut twice = row.data().to_vec();
    twice.extend_from_slice(row.data());
    let pair = tape.constant(Tensor::from_vec(2, d, twice));
    let out = update_virtual(&mut tape, pair, ht, &Segments::new(vec![0, 0], 1), &layer);
    assert!(close(tape.value(out).data(), row.data(), 1e-15));

    let hs = rand_tensor(3, d, &mut rng);
    let hv = tape.constant(hs.clone());
    let out = update_virtual(&mut tape, hv, ht, &Segments::new(vec![0; 3], 1), &layer);
    let k = matvec(tr.row(0), tape.value(layer.w5));
    let s: Vec<f64> = (0..3).map(|i| dotf(&matvec(hs.row(i), tape.value(layer.w4)), &k) / (d as f64).sqrt()).collect();
    let z: f64 = s.iter().map(|v| v.exp()).sum();
    let expected: Vec<f64> = (0..d).map(|c| (0..3).map(|i| s[i].exp() / z * hs.get(i, c)).sum()).collect();
    assert!(close(tape.value(out).data(), &expected, 1e-14));
}

fn toy_graph(seed: u64, m: u32, l: u32) -> (CrossSessionGraph, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cats: Vec<u32> = (0..m).map(|_| rng.random_range(0..l)).collect();
    let seqs: Vec<Vec<ItemId>> = (0..30)
        .map(|_| (0..rng.random_range(2..6)).map(|_| rng.random_range(0..m)).collect())
        .collect();
    let cfg = GraphConfig {
        top_q: 2,
        top_n: 3,
        ..Default::default()
    };
    (build_graph(&seqs, &cats, "", &cfg).unwrap(), cats)
}

fn toy_model(graph: &CrossSessionGraph, m: usize, l: usize, d: usize, layers: usize, seed: u64) -> Model<f64> {
    let cfg = ModelConfig::new(d, layers, 6, m, l, graph.relations().num_relations());
    Model::init(cfg, seed)
}

fn session_vectors(model: &Model<f64>, graph: &CrossSessionGraph, cats: &[u32], sessions: &[&[ItemId]]) -> Tensor<f64> {
    let plan = BatchPlan::new(sessions, graph, cats, &model.config);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let hs = forward(&mut tape, &vars, &plan, &model.config);
    tape.value(hs).clone()
}

#[test]
fn zero_layers_use_raw_rows() {
    let (g, cats) = toy_graph(7, 12, 3);
    let model = toy_model(&g, 12, 3, 4, 0, 1);
    let plan = BatchPlan::new(&[&[3, 5, 3]], &g, &cats, &model.config);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let (personal, tilde) = encode_items(&mut tape, &vars, &plan, &model.config);
    let table = &model.params.tensors()[model.layout.item];
    let expected: Vec<f64> = [3, 5, 3].iter().flat_map(|&i| table.row(i).to_vec()).collect();
    assert_eq!(tape.value(personal).data(), &expected[..]);
    let mean: Vec<f64> = (0..4).map(|c| (2.0 * table.get(3, c) + table.get(5, c)) / 3.0).collect();
    assert!(close(tape.value(tilde).data(), &mean, 1e-15));

    // Both session paths see identical inputs, so h_s doubles one of them.
    let hs = forward(&mut tape, &vars, &plan, &model.config);
    let h_c = category_context(&mut tape, vars.category, &plan);
    let raw = tape.gather_rows(vars.item, &plan.occ_item);
    let raw_tilde = tape.segment_mean(raw, &plan.sessions);
    let z = session_path(&mut tape, &vars, &plan, raw, raw_tilde, h_c);
    let doubled: Vec<f64> = tape.value(z).data().iter().map(|v| 2.0 * v).collect();
    assert!(close(tape.value(hs).data(), &doubled, 1e-14));
}

#[test]
fn single_item_one_layer_composes_by_hand() {
    let (g, cats) = toy_graph(8, 10, 2);
    let model = toy_model(&g, 10, 2, 3, 1, 2);
    let item = 4;
    let plan = BatchPlan::new(&[&[item]], &g, &cats, &model.config);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let (personal, tilde) = encode_items(&mut tape, &vars, &plan, &model.config);

    let mut t2 = Tape::new();
    let v2 = model.bind(&mut t2);
    let ids: Vec<usize> = plan.nodes.iter().map(|&v| v as usize).collect();
    let h0 = t2.gather_rows(v2.item, &ids);
    let h1 = rgat_layer(&mut t2, h0, &plan.edges, &v2.layers[0], v2.relation);
    let local = plan.occ_node[0];
    let h1_item = t2.gather_rows(h1, &[local]);
    let h0_item = t2.gather_rows(v2.item, &[item as usize]);
    let hs = personalize(&mut t2, h1_item, h0_item, &[0], &v2.layers[0]);
    let ht = update_virtual(&mut t2, hs, h0_item, &Segments::new(vec![0], 1), &v2.layers[0]);
    assert!(close(tape.value(personal).data(), t2.value(hs).data(), 1e-15));
    // A single-item session's readout is the item itself.
    assert!(close(tape.value(tilde).data(), t2.value(ht).data(), 1e-15));
    assert!(close(t2.value(ht).data(), t2.value(hs).data(), 1e-15));
}

#[test]
fn sessions_do_not_interact_within_a_batch() {
    let (g, cats) = toy_graph(9, 20, 3);
    let model = toy_model(&g, 20, 3, 5, 2, 3);
    let a: &[ItemId] = &[1, 2, 3, 2];
    let b: &[ItemId] = &[7, 3, 11];
    let c: &[ItemId] = &[19];
    let batched = session_vectors(&model, &g, &cats, &[a, b, c]);
    for (k, s) in [a, b, c].iter().enumerate() {
        let alone = session_vectors(&model, &g, &cats, &[s]);
        assert!(close(batched.row(k), alone.row(0), 1e-9), "session {k}");
    }
}

#[test]
fn positional_fuse_indexing() {
    let (g, cats) = toy_graph(10, 8, 2);
    let cfg = ModelConfig::new(2, 0, 4, 8, 2, g.relations().num_relations());
    let plan = BatchPlan::new(&[&[1, 2, 3], &[5]], &g, &cats, &cfg);
    let mut tape = Tape::<f64>::new();
    let h = tape.constant(Tensor::zeros(4, 2));
    let zeros = tape.constant(Tensor::zeros(4, 2));
    let z = positional_fuse(&mut tape, h, zeros, zeros, &plan);
    assert!(tape.value(z).data().iter().all(|&v| v == 0.0));

    let pos = tape.constant(Tensor::from_vec(4, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]));
    let len = tape.constant(Tensor::from_vec(4, 2, vec![10.0, 0.0, 20.0, 0.0, 30.0, 0.0, 40.0, 0.0]));
    let z = positional_fuse(&mut tape, h, pos, len, &plan);
    // First session (t=3): positions 2,1,0 and length row for t=3.
    // Second session (t=1): position 0 and length row for t=1.
    assert_eq!(
        tape.value(z).data(),
        &[32.0, 2.0, 31.0, 1.0, 30.0, 0.0, 10.0, 0.0]
    );
}

#[test]
fn category_context_cases() {
    let (g, _) = toy_graph(11, 6, 3);
    let cats = vec![0, 0, 1, 1, 2, 2];
    let cfg = ModelConfig::new(2, 0, 5, 6, 3, g.relations().num_relations());
    let plan = BatchPlan::new(&[&[0, 1], &[2, 4], &[0, 2, 3]], &g, &cats, &cfg);
    let mut tape = Tape::<f64>::new();
    let table = tape.constant(Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, -4.0, -3.0, 4.0]));
    let hc = category_context(&mut tape, table, &plan);
    assert_eq!(tape.value(hc).row(0), &[1.0, 2.0]);
    assert_eq!(tape.value(hc).row(1), &[0.0, 0.0]);
    let expected = [(1.0 + 3.0 + 3.0) / 3.0, (2.0 - 4.0 - 4.0) / 3.0];
    assert!(close(tape.value(hc).row(2), &expected, 1e-15));
}

#[test]
fn pooling_and_combination() {
    let (g, cats) = toy_graph(12, 8, 2);
    let mut model = toy_model(&g, 8, 2, 3, 0, 4);
    for name in ["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"] {
        let i = model.params.index_of(name).unwrap();
        let t = model.params.get_mut(i);
        *t = Tensor::zeros(t.rows(), t.cols());
    }
    let plan = BatchPlan::new(&[&[1, 2], &[3]], &g, &cats, &model.config);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z = tape.constant(rand_tensor(3, 3, &mut rng));
    let other = tape.constant(rand_tensor(2, 3, &mut rng));
    let pooled = attention_pool(&mut tape, &vars, z, other, other, other, &plan);
    assert!(tape.value(pooled).data().iter().all(|&v| v == 0.0));

    let a = rand_tensor(2, 3, &mut rng);
    let b = rand_tensor(2, 3, &mut rng);
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let mut left = vec![0.0; 18];
    let mut right = vec![0.0; 18];
    for i in 0..3 {
        left[i * 3 + i] = 1.0;
        right[(i + 3) * 3 + i] = 1.0;
    }
    let wl = tape.constant(Tensor::from_vec(6, 3, left));
    let wr = tape.constant(Tensor::from_vec(6, 3, right));
    let zl = combine(&mut tape, av, bv, wl);
    let zr = combine(&mut tape, av, bv, wr);
    assert_eq!(tape.value(zl).data(), a.data());
    assert_eq!(tape.value(zr).data(), b.data());
}

#[test]
fn single_click_pool_is_one_term() {
    let (g, cats) = toy_graph(14, 8, 2);
    let model = toy_model(&g, 8, 2, 3, 0, 5);
    let plan = BatchPlan::new(&[&[6]], &g, &cats, &model.config);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let zr = rand_tensor(1, 3, &mut rng);
    let z = tape.constant(zr.clone());
    let other = tape.constant(rand_tensor(1, 3, &mut rng));
    let pooled = attention_pool(&mut tape, &vars, z, z, other, other, &plan);
    let input = tape.concat_cols(&[z, z, other, other]);
    let hid = tape.matmul(input, vars.mlp_w1);
    let hid = tape.add_row(hid, vars.mlp_b1);
    let hid = tape.leaky_relu(hid, 0.2);
    let g1 = tape.matmul(hid, vars.mlp_w2);
    let g1 = tape.add_row(g1, vars.mlp_b2);
    let gamma = tape.value(g1).item();
    let expected: Vec<f64> = zr.data().iter().map(|v| gamma * v).collect();
    assert!(close(tape.value(pooled).data(), &expected, 1e-15));
}

#[test]
fn order_and_length_matter() {
    let (g, cats) = toy_graph(16, 15, 3);
    let model = toy_model(&g, 15, 3, 6, 2, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let t = rng.random_range(2..=6);
        let mut s: Vec<ItemId> = (0..t).map(|_| rng.random_range(0..15)).collect();
        s[0] = 0;
        s[1] = 1;
        let mut swapped = s.clone();
        swapped.swap(0, 1);
        let a = session_vectors(&model, &g, &cats, &[&s]);
        let b = session_vectors(&model, &g, &cats, &[&swapped]);
        assert!(a.max_abs_diff(&b) > 0.0);
    }
    for t in 1..=6 {
        let s: Vec<ItemId> = (0..t as u32).collect();
        assert_eq!(session_vectors(&model, &g, &cats, &[&s]).shape(), [1, 6]);
    }
    let short = session_vectors(&model, &g, &cats, &[&[4, 4]]);
    let long = session_vectors(&model, &g, &cats, &[&[4, 4, 4]]);
    assert!(short.max_abs_diff(&long) > 0.0);
}

#[test]
fn every_parameter_receives_gradient() {
    let (g, cats) = toy_graph(18, 20, 3);
    let model = toy_model(&g, 20, 3, 4, 2, 7);
    let mut seen = vec![false; model.params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..10 {
        let batch: Vec<Vec<ItemId>> = (0..4)
            .map(|_| (0..rng.random_range(1..=6)).map(|_| rng.random_range(0..20)).collect())
            .collect();
        let refs: Vec<&[ItemId]> = batch.iter().map(|s| s.as_slice()).collect();
        let plan = BatchPlan::new(&refs, &g, &cats, &model.config);
        let mut tape = Tape::new();
        let vars: Vec<_> = model.params.tensors().iter().map(|t| tape.param(t)).collect();
        let mv = model.layout.vars(&vars);
        let hs = forward(&mut tape, &mv, &plan, &model.config);
        let logits = score_logits(&mut tape, &mv, hs, 12.0);
        let logp = tape.row_log_softmax(logits);
        let picks: Vec<_> = (0..4).map(|b| (b, rng.random_range(0..20), -0.25)).collect();
        let loss = tape.pick_weighted_sum(logp, &picks);
        let grads = tape.backward(loss).unwrap();
        for (i, v) in vars.iter().enumerate() {
            if grads.get(*v).is_some_and(|g| g.data().iter().any(|&x| x != 0.0)) {
                seen[i] = true;
            }
        }
    }
    for (i, s) in seen.iter().enumerate() {
        assert!(s, "{} never received a gradient", model.params.name(i));
    }
}

#[test]
fn shared_layers_reuse_one_parameter_set() {
    let (g, _) = toy_graph(20, 10, 2);
    let mut cfg = ModelConfig::new(4, 3, 5, 10, 2, g.relations().num_relations());
    cfg.shared_layers = true;
    let model = Model::<f64>::init(cfg, 1);
    assert!(model.params.index_of("layer1.w_agg").is_none());
    assert!(model.layout.layers.iter().all(|l| *l == model.layout.layers[0]));
    assert!(Model::from_params(model.config.clone(), model.params.clone()).is_some());
}
