use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::autodiff::{ParamSet, Real, Tape, Tensor, Var};

/// Parameter indices of one graph layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerIndex {
    pub w_agg: usize,
    pub w_att: usize,
    pub a: usize,
    pub w2: usize,
    pub w3: usize,
    pub w4: usize,
    pub w5: usize,
}

/// Where each named parameter lives in the model's [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelLayout {
    pub item: usize,
    pub relation: usize,
    pub category: usize,
    pub position: usize,
    pub length: usize,
    pub layers: Vec<LayerIndex>,
    pub mlp_w1: usize,
    pub mlp_b1: usize,
    pub mlp_w2: usize,
    pub mlp_b2: usize,
    pub w6: usize,
}

/// A graph layer's parameters bound to a tape.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    /// `d × d` message projection.
    pub w_agg: Var,
    /// `(3d + 1) × d` attention projection over `[h_i, h_j, e_ij, r_ij]`.
    pub w_att: Var,
    /// `d × 1` attention vector.
    pub a: Var,
    pub w2: Var,
    pub w3: Var,
    pub w4: Var,
    pub w5: Var,
}

/// All model parameters bound to a tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub item: Var,
    pub relation: Var,
    pub category: Var,
    pub position: Var,
    pub length: Var,
    /// One entry per graph layer; repeated when layers share parameters.
    pub layers: Vec<LayerVars>,
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
    pub w6: Var,
}

impl ModelLayout {
    pub fn vars(&self, v: &[Var]) -> ModelVars {
        ModelVars {
            item: v[self.item],
            relation: v[self.relation],
            category: v[self.category],
            position: v[self.position],
            length: v[self.length],
            layers: self
                .layers
                .iter()
                .map(|l| LayerVars {
                    w_agg: v[l.w_agg],
                    w_att: v[l.w_att],
                    a: v[l.a],
                    w2: v[l.w2],
                    w3: v[l.w3],
                    w4: v[l.w4],
                    w5: v[l.w5],
                })
                .collect(),
            mlp_w1: v[self.mlp_w1],
            mlp_b1: v[self.mlp_b1],
            mlp_w2: v[self.mlp_w2],
            mlp_b2: v[self.mlp_b2],
            w6: v[self.w6],
        }
    }
}

/// Parameters plus the configuration that shapes them.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub layout: ModelLayout,
    pub params: ParamSet<T>,
}

fn shapes(config: &ModelConfig) -> Vec<(String, [usize; 2])> {
    let d = config.dim;
    let mut out = vec![
        ("item_emb".to_string(), [config.num_items, d]),
        ("relation_emb".to_string(), [config.num_relations, d]),
        ("category_emb".to_string(), [config.num_categories, d]),
        ("position_emb".to_string(), [config.t_max, d]),
        ("length_emb".to_string(), [config.t_max, d]),
    ];
    let distinct = if config.shared_layers { config.layers.min(1) } else { config.layers };
    for k in 0..distinct {
        for (name, shape) in [
            ("w_agg", [d, d]),
            ("w_att", [3 * d + 1, d]),
            ("a", [d, 1]),
            ("w2", [d, d]),
            ("w3", [d, d]),
            ("w4", [d, d]),
            ("w5", [d, d]),
        ] {
            out.push((format!("layer{k}.{name}"), shape));
        }
    }
    out.extend([
        ("mlp.w1".to_string(), [4 * d, d]),
        ("mlp.b1".to_string(), [1, d]),
        ("mlp.w2".to_string(), [d, 1]),
        ("mlp.b2".to_string(), [1, 1]),
        ("w6".to_string(), [2 * d, d]),
    ]);
    out
}

impl ModelLayout {
    /// Resolves indices by name; `None` when a parameter is missing.
    pub fn resolve<T: Real>(config: &ModelConfig, params: &ParamSet<T>) -> Option<Self> {
        let at = |name: &str| params.index_of(name);
        let distinct = if config.shared_layers { config.layers.min(1) } else { config.layers };
        let mut layers = Vec::with_capacity(config.layers);
        for k in 0..config.layers {
            let j = k.min(distinct.saturating_sub(1));
            let p = |n: &str| at(&format!("layer{j}.{n}"));
            layers.push(LayerIndex {
                w_agg: p("w_agg")?,
                w_att: p("w_att")?,
                a: p("a")?,
                w2: p("w2")?,
                w3: p("w3")?,
                w4: p("w4")?,
                w5: p("w5")?,
            });
        }
        Some(ModelLayout {
            item: at("item_emb")?,
            relation: at("relation_emb")?,
            category: at("category_emb")?,
            position: at("position_emb")?,
            length: at("length_emb")?,
            layers,
            mlp_w1: at("mlp.w1")?,
            mlp_b1: at("mlp.b1")?,
            mlp_w2: at("mlp.w2")?,
            mlp_b2: at("mlp.b2")?,
            w6: at("w6")?,
        })
    }
}

impl<T: Real> Model<T> {
    /// Uniform(−1/√d, 1/√d) tables and matrices, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (config.dim as f64).sqrt();
        let mut params = ParamSet::new();
        for (name, [r, c]) in shapes(&config) {
            let t = if name.starts_with("mlp.b") {
                Tensor::zeros(r, c)
            } else {
                Tensor::uniform(r, c, bound, &mut rng)
            };
            params.push(name, t);
        }
        let layout = ModelLayout::resolve(&config, &params).expect("layout covers generated names");
        Model { config, layout, params }
    }

    /// Rebuilds a model around loaded parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Option<Self> {
        let expected = shapes(&config);
        if params.len() != expected.len() {
            return None;
        }
        for (name, shape) in &expected {
            if params.by_name(name)?.shape() != *shape {
                return None;
            }
        }
        let layout = ModelLayout::resolve(&config, &params)?;
        Some(Model { config, layout, params })
    }

    /// Registers every parameter on the tape without copying.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>) -> ModelVars {
        let vars: Vec<Var> = self.params.tensors().iter().map(|t| tape.param(t)).collect();
        self.layout.vars(&vars)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }
}
