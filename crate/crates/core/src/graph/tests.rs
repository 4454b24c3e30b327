use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::ItemId;

const A: ItemId = 0;
const B: ItemId = 1;
const C: ItemId = 2;

fn config(epsilon: usize, top_n: usize, top_q: usize) -> GraphConfig {
    GraphConfig {
        epsilon,
        top_n,
        top_q,
        alpha: 0.75,
    }
}

fn counts(seqs: &[Vec<ItemId>], m: usize, eps: usize) -> Vec<((ItemId, ItemId), u64)> {
    epsilon_cooccurrence(seqs, m, eps).counts.into_iter().collect()
}

#[test]
fn cooccurrence_pair() {
    let c = epsilon_cooccurrence(&[vec![A, B]], 2, 1);
    assert_eq!(c.counts.into_iter().collect::<Vec<_>>(), vec![((A, B), 1), ((B, A), 1)]);
    assert_eq!(c.freq, vec![1, 1]);
}

#[test]
fn cooccurrence_chain_skips_distance_two() {
    assert_eq!(
        counts(&[vec![A, B, C]], 3, 1),
        vec![((A, B), 1), ((B, A), 1), ((B, C), 1), ((C, B), 1)]
    );
}

#[test]
fn cooccurrence_repeated_item() {
    let c = epsilon_cooccurrence(&[vec![A, B, A]], 2, 1);
    assert_eq!(c.counts.clone().into_iter().collect::<Vec<_>>(), vec![((A, B), 2), ((B, A), 2)]);
    assert_eq!(c.freq, vec![2, 1]);
}

#[test]
fn edge_weight_cases() {
    assert_eq!(edge_weight(1, 1, 1, 0.75), 1.0);
    assert_eq!(edge_weight(0, 4, 9, 0.75), 0.0);
    // Evaluated with 40-digit arithmetic.
    let expected = 0.721458204974063112537559271694775882846;
    assert!((edge_weight(2, 3, 2, 0.75) - expected).abs() < 1e-12);
}

fn cooc_from(pairs: &[((ItemId, ItemId), u64)], m: usize) -> Cooccurrence {
    Cooccurrence {
        counts: pairs.iter().copied().collect(),
        freq: vec![1; m],
    }
}

#[test]
fn relation_table_without_named_pairs() {
    let t = build_relation_table(&cooc_from(&[((0, 1), 3), ((1, 0), 3)], 2), &[0, 1], 0);
    assert_eq!(t.num_named(), 0);
    assert_eq!(t.relation(0, 0), t.same());
    assert_eq!(t.relation(0, 1), t.drift());
    assert_eq!(t.num_relations(), 3);
}

#[test]
fn relation_table_top_one() {
    // Items 0,1 in category 0 and item 2 in category 1.
    let cats = [0, 0, 1];
    let t = build_relation_table(&cooc_from(&[((0, 1), 10), ((0, 2), 4)], 3), &cats, 1);
    assert_eq!(t.named(), &[((0, 0), 10)]);
    assert_eq!(t.relation(0, 0), 0);
    assert_eq!(t.relation(0, 1), t.drift());
    assert_eq!(t.kind(t.self_relation()), RelationKind::SelfLoop);
}

#[test]
fn relation_table_saturates_and_breaks_ties_by_pair() {
    let cats = [0, 1, 2];
    let pairs = [((0, 1), 5), ((1, 0), 5), ((2, 0), 7)];
    let t = build_relation_table(&cooc_from(&pairs, 3), &cats, 10);
    let ids: Vec<_> = t.named().iter().map(|p| p.0).collect();
    assert_eq!(ids, vec![(2, 0), (0, 1), (1, 0)]);
    assert_eq!(t.num_relations(), 6);
}

#[test]
fn single_pair_graph() {
    let g = build_graph(&[vec![A, B]], &[0, 0], "", &config(1, 12, 0)).unwrap();
    assert_eq!(g.num_edges(), 2);
    for e in g.edges() {
        assert_eq!(e.rel, g.relations().same());
        assert_eq!(e.weight, 1.0);
    }
}

#[test]
fn empty_training_set_is_fatal() {
    assert!(matches!(
        build_graph(&[], &[0], "", &GraphConfig::default()),
        Err(crate::Error::EmptyDataset(_))
    ));
}

#[test]
fn pruning_keeps_heaviest_incoming() {
    // Item 0 co-occurs with items 1..=15; item k appears k times alongside 0
    // in its own sessions, so weights into 0 differ per neighbour.
    let mut seqs = Vec::new();
    for k in 1..=15u32 {
        for _ in 0..k {
            seqs.push(vec![0, k]);
        }
    }
    let cats = vec![0; 16];
    let g = build_graph(&seqs, &cats, "", &config(1, 12, 0)).unwrap();
    let into_zero = g.incoming(0);
    assert_eq!(into_zero.len(), 12);
    let oracle = brute_force(&seqs, &cats, &config(1, 12, 0));
    let mut expected: Vec<_> = oracle.iter().filter(|e| e.1 == 0).map(|e| (e.0, e.3)).collect();
    expected.sort_by(|a, b| a.0.cmp(&b.0));
    let got: Vec<_> = into_zero.iter().map(|e| (e.src, e.weight)).collect();
    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(&expected) {
        assert_eq!(g.0, e.0);
        assert!((g.1 - e.1).abs() < 1e-12);
    }
}

/// Straight from the definitions: all position pairs, the literal weight
/// formula, and a full sort per (destination, relation).
fn brute_force(seqs: &[Vec<ItemId>], cats: &[u32], cfg: &GraphConfig) -> Vec<(ItemId, ItemId, u16, f64)> {
    let m = cats.len();
    let mut cooc = vec![vec![0u64; m]; m];
    let mut freq = vec![0u64; m];
    for s in seqs {
        for k in 0..s.len() {
            freq[s[k] as usize] += 1;
            for j in 0..s.len() {
                if j != k && (j as i64 - k as i64).abs() <= cfg.epsilon as i64 {
                    cooc[s[k] as usize][s[j] as usize] += 1;
                }
            }
        }
    }
    let l = cats.iter().max().map_or(0, |c| c + 1) as usize;
    let mut pair_count = vec![vec![0u64; l]; l];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                pair_count[cats[i] as usize][cats[j] as usize] += cooc[i][j];
            }
        }
    }
    let mut ranked = Vec::new();
    for a in 0..l {
        for b in 0..l {
            if pair_count[a][b] > 0 {
                ranked.push((pair_count[a][b], a, b));
            }
        }
    }
    ranked.sort_by(|x, y| y.0.cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    ranked.truncate(cfg.top_q);
    let q = ranked.len() as u16;
    let rel_of = |ci: u32, cj: u32| -> u16 {
        match ranked.iter().position(|r| r.1 == ci as usize && r.2 == cj as usize) {
            Some(p) => p as u16,
            None if ci == cj => q,
            None => q + 1,
        }
    };
    let mut edges = Vec::new();
    for i in 0..m {
        for r in 0..q + 2 {
            let mut cand: Vec<(ItemId, f64)> = Vec::new();
            for j in 0..m {
                if i != j && cooc[i][j] > 0 && rel_of(cats[i], cats[j]) == r {
                    let fi = (freq[i] as f64).powf(cfg.alpha).ln() + 1.0;
                    let fj = (freq[j] as f64).powf(cfg.alpha).ln() + 1.0;
                    cand.push((j as ItemId, cooc[i][j] as f64 / (fi * fj)));
                }
            }
            cand.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
            for &(j, w) in cand.iter().take(cfg.top_n) {
                edges.push((j, i as ItemId, r, w));
            }
        }
    }
    edges
}

fn random_corpus(rng: &mut ChaCha8Rng, sessions: usize, items: u32, cats: u32) -> (Vec<Vec<ItemId>>, Vec<u32>) {
    let seqs = (0..sessions)
        .map(|_| {
            let len = rng.random_range(1..=8);
            (0..len).map(|_| rng.random_range(0..items)).collect()
        })
        .collect();
    let categories = (0..items).map(|_| rng.random_range(0..cats)).collect();
    (seqs, categories)
}

fn assert_matches_oracle(seqs: &[Vec<ItemId>], cats: &[u32], cfg: &GraphConfig) {
    let g = build_graph(seqs, cats, "", cfg).unwrap();
    let mut expected = brute_force(seqs, cats, cfg);
    expected.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    assert_eq!(g.num_edges(), expected.len(), "edge count");
    for (e, o) in g.edges().iter().zip(&expected) {
        assert_eq!((e.src, e.dst, e.rel), (o.0, o.1, o.2));
        assert!((e.weight - o.3).abs() < 1e-12, "{e:?} vs {o:?}");
    }
}

#[test]
fn eight_random_sessions_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (seqs, cats) = random_corpus(&mut rng, 8, 10, 3);
    assert_matches_oracle(&seqs, &cats, &config(2, 3, 2));
}

fn bfs_nodes(g: &CrossSessionGraph, batch: &[ItemId], hops: usize) -> BTreeSet<ItemId> {
    let mut reverse: HashMap<ItemId, Vec<ItemId>> = HashMap::new();
    for e in g.edges() {
        reverse.entry(e.dst).or_default().push(e.src);
    }
    let mut seen: BTreeSet<ItemId> = batch.iter().copied().collect();
    let mut queue: VecDeque<(ItemId, usize)> = batch.iter().map(|&v| (v, 0)).collect();
    while let Some((v, d)) = queue.pop_front() {
        if d == hops {
            continue;
        }
        for &u in reverse.get(&v).into_iter().flatten() {
            if seen.insert(u) {
                queue.push_back((u, d + 1));
            }
        }
    }
    seen
}

fn chain() -> CrossSessionGraph {
    let edge = |src, dst| Edge {
        src,
        dst,
        rel: 0,
        weight: 1.0,
    };
    CrossSessionGraph::from_edges(
        3,
        vec![edge(A, B), edge(B, C)],
        RelationTable::from_named(Vec::new()),
        GraphConfig::default(),
        String::new(),
    )
}

#[test]
fn subgraph_zero_hops_is_batch_only() {
    let sub = subgraph_for_batch(&chain(), &[C, B], 0);
    assert_eq!(sub.nodes, vec![B, C]);
    assert!(sub.edges.is_empty());
}

#[test]
fn subgraph_one_hop_on_chain() {
    let sub = subgraph_for_batch(&chain(), &[C], 1);
    assert_eq!(sub.nodes, vec![B, C]);
    assert_eq!(sub.edges.len(), 1);
    assert_eq!((sub.edges[0].src, sub.edges[0].dst), (B, C));
    assert_eq!(sub.local_index(C), Some(1));
}

#[test]
fn binary_roundtrip_and_corruption() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (seqs, cats) = random_corpus(&mut rng, 10, 15, 4);
    let g = build_graph(&seqs, &cats, "abc", &config(2, 4, 3)).unwrap();
    let bytes = g.to_bytes();
    let back = CrossSessionGraph::from_bytes(&bytes).unwrap();
    assert_eq!(back.relations(), g.relations());
    assert_eq!(back.config(), g.config());
    assert_eq!(back.vocab_hash(), "abc");
    for (a, b) in back.edges().iter().zip(g.edges()) {
        assert_eq!((a.src, a.dst, a.rel), (b.src, b.dst, b.rel));
        assert_eq!(a.weight, b.weight as f32 as f64);
    }
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.hash(), g.hash());

    assert!(CrossSessionGraph::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(CrossSessionGraph::from_bytes(&bad).is_err());
    let json = g.to_json(None, None);
    assert_eq!(json["edges"].as_array().unwrap().len(), g.num_edges());
}

#[test]
fn parallel_counting_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (seqs, _) = random_corpus(&mut rng, 400, 60, 1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let single = pool.install(|| epsilon_cooccurrence(&seqs, 60, 2));
    assert_eq!(single, epsilon_cooccurrence(&seqs, 60, 2));
}

proptest! {
    #[test]
    fn graph_matches_oracle(seed in 0u64..10_000, eps in 1usize..4, top_n in 1usize..5, top_q in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sessions = rng.random_range(1..=10);
        let (seqs, cats) = random_corpus(&mut rng, sessions, 15, 4);
        let cfg = config(eps, top_n, top_q);
        assert_matches_oracle(&seqs, &cats, &cfg);

        let g = build_graph(&seqs, &cats, "", &cfg).unwrap();
        let mut per: BTreeMap<(ItemId, u16), usize> = BTreeMap::new();
        for e in g.edges() {
            prop_assert!(e.weight > 0.0 && e.weight.is_finite());
            prop_assert!(e.src != e.dst);
            *per.entry((e.dst, e.rel)).or_default() += 1;
        }
        prop_assert!(per.values().all(|&n| n <= top_n));
    }

    #[test]
    fn counts_symmetric_and_monotone_in_epsilon(seed in 0u64..10_000, eps in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (seqs, _) = random_corpus(&mut rng, 6, 12, 1);
        let small = epsilon_cooccurrence(&seqs, 12, eps);
        let large = epsilon_cooccurrence(&seqs, 12, eps + 1);
        for (&(i, j), &n) in &small.counts {
            prop_assert_eq!(small.count(j, i), n);
            prop_assert!(large.count(i, j) >= n);
        }
        let max = small.counts.values().copied().max().unwrap_or(0) as f64;
        for (&(i, j), &n) in &small.counts {
            let w = edge_weight(n, small.freq[i as usize], small.freq[j as usize], 0.75);
            prop_assert!(w > 0.0 && w <= max);
        }
    }

    #[test]
    fn subgraph_nodes_match_bfs(seed in 0u64..10_000, hops in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (seqs, cats) = random_corpus(&mut rng, 10, 15, 3);
        let g = build_graph(&seqs, &cats, "", &config(1, 2, 2)).unwrap();
        let batch: Vec<ItemId> = (0..3).map(|_| rng.random_range(0..15)).collect();
        let sub = subgraph_for_batch(&g, &batch, hops);
        let expected: Vec<ItemId> = bfs_nodes(&g, &batch, hops).into_iter().collect();
        prop_assert_eq!(&sub.nodes, &expected);
        for e in &sub.edges {
            prop_assert!(sub.contains(e.src) && sub.contains(e.dst));
            prop_assert!(g.incoming(e.dst).contains(e));
        }
    }
}
