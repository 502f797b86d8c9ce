use std::collections::BTreeSet;

use rand::Rng;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Var};
use crate::corpus::{DependencyTree, Sentence};
use crate::embeddings::{EmbeddingTable, FeatureSet};
use crate::Error;

use super::{
    bias_vector, uniform_matrix, GcnLabelMode, LstmCell, ModelConfig, ModelKind, PreEncoder,
    Readout, ScopeModel, Vocabs, SELF_LABEL,
};

/// Edge direction relative to the node being updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    /// Neighbor is the parent: the edge points along it, down to v.
    Along,
    /// Neighbor is a child: the edge is traversed in reverse.
    Reverse,
    /// The self loop.
    SelfLoop,
}

#[derive(Debug, Clone)]
enum Pre {
    Dense { w: ParamId, b: ParamId },
    Bilstm { fwd: LstmCell, bwd: LstmCell },
}

/// How one layer injects dependency-label information.
#[derive(Debug, Clone)]
enum LabelTerm {
    /// W_l · l(u,v) plus a shared bias; label embeddings are a table shared
    /// across layers.
    Weighted { w_label: ParamId, bias: ParamId },
    /// A bias vector per (label, direction).
    Bias { table: ParamId },
}

#[derive(Debug, Clone)]
struct GcnLayer {
    w_along: ParamId,
    w_reverse: ParamId,
    w_self: ParamId,
    label_term: LabelTerm,
    /// Per-direction gate vectors ŵ_dir.
    gate_along: ParamId,
    gate_reverse: ParamId,
    gate_self: ParamId,
    /// Per-(label, direction) scalar gate biases b̂_l.
    gate_bias: ParamId,
}

impl GcnLayer {
    fn new(
        k: usize,
        store: &mut ParamStore,
        d_h: usize,
        d_label: usize,
        label_rows: usize,
        mode: GcnLabelMode,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        let p = format!("gcn.layer{k}");
        let label_term = match mode {
            GcnLabelMode::LabelWeighted => LabelTerm::Weighted {
                w_label: store.add(&format!("{p}.w_label"), uniform_matrix(d_h, d_label, rng))?,
                bias: store.add(&format!("{p}.bias"), bias_vector(d_h, 0.0))?,
            },
            GcnLabelMode::LabelBias => LabelTerm::Bias {
                table: store.add(
                    &format!("{p}.label_bias"),
                    uniform_matrix(label_rows, d_h, rng),
                )?,
            },
        };
        Ok(GcnLayer {
            w_along: store.add(&format!("{p}.w_along"), uniform_matrix(d_h, d_h, rng))?,
            w_reverse: store.add(&format!("{p}.w_reverse"), uniform_matrix(d_h, d_h, rng))?,
            w_self: store.add(&format!("{p}.w_self"), uniform_matrix(d_h, d_h, rng))?,
            label_term,
            gate_along: store.add(&format!("{p}.gate_along"), uniform_matrix(1, d_h, rng))?,
            gate_reverse: store.add(&format!("{p}.gate_reverse"), uniform_matrix(1, d_h, rng))?,
            gate_self: store.add(&format!("{p}.gate_self"), uniform_matrix(1, d_h, rng))?,
            gate_bias: store.add(&format!("{p}.gate_bias"), uniform_matrix(label_rows, 1, rng))?,
        })
    }
}

/// Gated graph convolutional network over the dependency tree. Each layer
/// aggregates the node itself, its parent and its children with
/// direction-specific weights, label features and edge-wise scalar gates;
/// K layers give a K-hop receptive field.
#[derive(Debug, Clone)]
pub struct GcnModel {
    config: ModelConfig,
    features: FeatureSet,
    pre: Pre,
    /// Label-direction embedding table, present in label-weighted mode.
    label_emb: Option<ParamId>,
    layers: Vec<GcnLayer>,
    readout: Readout,
}

impl GcnModel {
    pub fn new(
        config: &ModelConfig,
        vocabs: &Vocabs,
        word_table: Option<&EmbeddingTable>,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self, Error> {
        let features = FeatureSet::build(
            "emb",
            store,
            vocabs.word.clone(),
            vocabs.pos.clone(),
            vocabs.label_dir.clone(),
            (config.d_word, config.d_cue, config.d_pos, config.d_label),
            config.mask,
            word_table,
            rng,
        )?;
        let d_in = features.input_dim(false);
        let d_h = config.d_hidden;
        let pre = match config.gcn_pre_encoder {
            PreEncoder::DenseRelu => Pre::Dense {
                w: store.add("gcn.pre.w", uniform_matrix(d_h, d_in, rng))?,
                b: store.add("gcn.pre.b", bias_vector(d_h, 0.0))?,
            },
            PreEncoder::Bilstm => Pre::Bilstm {
                fwd: LstmCell::new("gcn.pre.fwd", store, d_in, d_h / 2, rng)?,
                bwd: LstmCell::new("gcn.pre.bwd", store, d_in, d_h / 2, rng)?,
            },
        };
        let label_rows = vocabs.label_dir.rows();
        let label_emb = match config.gcn_label_mode {
            GcnLabelMode::LabelWeighted => Some(store.add(
                "gcn.label_emb",
                uniform_matrix(label_rows, config.d_label, rng),
            )?),
            GcnLabelMode::LabelBias => None,
        };
        let mut layers = Vec::with_capacity(config.gcn_layers);
        for k in 0..config.gcn_layers {
            layers.push(GcnLayer::new(
                k,
                store,
                d_h,
                config.d_label,
                label_rows,
                config.gcn_label_mode,
                rng,
            )?);
        }
        let readout = Readout::new("gcn", store, d_h, rng)?;
        Ok(GcnModel {
            config: config.clone(),
            features,
            pre,
            label_emb,
            layers,
            readout,
        })
    }

    /// Neighborhood of v: itself, its parent and its children, each with
    /// the edge direction and the (label, direction) vocabulary row.
    fn neighborhood(&self, tree: &DependencyTree, v: usize) -> Vec<(usize, Dir, usize)> {
        let vocab = &self.features.label_vocab;
        let mut out = Vec::with_capacity(2 + tree.children(v).len());
        out.push((v, Dir::SelfLoop, vocab.row_of(SELF_LABEL)));
        if let Some(p) = tree.parent(v) {
            out.push((p, Dir::Along, vocab.row_of(&format!("along:{}", tree.label(v)))));
        }
        for &c in tree.children(v) {
            out.push((c, Dir::Reverse, vocab.row_of(&format!("reverse:{}", tree.label(c)))));
        }
        out
    }

    fn pre_encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Var],
    ) -> Result<Vec<Var>, AutodiffError> {
        match &self.pre {
            Pre::Dense { w, b } => {
                let w = tape.param(store, *w);
                let b = tape.param(store, *b);
                inputs
                    .iter()
                    .map(|&x| {
                        let wx = tape.matvec(w, x)?;
                        let a = tape.add(wx, b)?;
                        Ok(tape.relu(a))
                    })
                    .collect()
            }
            Pre::Bilstm { fwd, bwd } => {
                let n = inputs.len();
                let half = self.config.d_hidden / 2;
                let fwd_vars = fwd.vars(tape, store);
                let mut h = tape.zeros(half);
                let mut c = tape.zeros(half);
                let mut h_fwd = Vec::with_capacity(n);
                for &x in inputs {
                    let (nh, nc) = fwd_vars.step(tape, x, h, c)?;
                    h_fwd.push(nh);
                    h = nh;
                    c = nc;
                }
                let bwd_vars = bwd.vars(tape, store);
                let mut h = tape.zeros(half);
                let mut c = tape.zeros(half);
                let mut h_bwd = vec![h; n];
                for (i, &x) in inputs.iter().enumerate().rev() {
                    let (nh, nc) = bwd_vars.step(tape, x, h, c)?;
                    h_bwd[i] = nh;
                    h = nh;
                    c = nc;
                }
                (0..n).map(|i| tape.concat(&[h_fwd[i], h_bwd[i]])).collect()
            }
        }
    }

    /// One graph-convolution layer: all nodes updated simultaneously from
    /// the previous layer's states.
    pub(crate) fn layer_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tree: &DependencyTree,
        states: &[Var],
        k: usize,
    ) -> Result<Vec<Var>, AutodiffError> {
        let layer = &self.layers[k];
        let d_h = self.config.d_hidden;
        let rate = self.config.neighbor_dropout;
        let train = tape.is_train();

        let w_along = tape.param(store, layer.w_along);
        let w_reverse = tape.param(store, layer.w_reverse);
        let w_self = tape.param(store, layer.w_self);
        let gate_along = tape.param(store, layer.gate_along);
        let gate_reverse = tape.param(store, layer.gate_reverse);
        let gate_self = tape.param(store, layer.gate_self);
        let label_ctx = match &layer.label_term {
            LabelTerm::Weighted { w_label, bias } => {
                (Some(tape.param(store, *w_label)), Some(tape.param(store, *bias)))
            }
            LabelTerm::Bias { .. } => (None, None),
        };

        let mut next = Vec::with_capacity(states.len());
        for v in 1..=states.len() {
            let mut contributions = Vec::new();
            for (u, dir, label_row) in self.neighborhood(tree, v) {
                if train && rate > 0.0 && tape.rand_uniform() < rate {
                    continue; // whole (u → v) contribution dropped
                }
                let h_u = states[u - 1];
                let (w_dir, gate_w) = match dir {
                    Dir::Along => (w_along, gate_along),
                    Dir::Reverse => (w_reverse, gate_reverse),
                    Dir::SelfLoop => (w_self, gate_self),
                };
                let wh = tape.matvec(w_dir, h_u)?;
                let pre = match (&layer.label_term, label_ctx) {
                    (LabelTerm::Weighted { .. }, (Some(w_label), Some(bias))) => {
                        let emb = self.label_emb.expect("label table in weighted mode");
                        let l = tape.lookup_row(store, emb, label_row)?;
                        let wl = tape.matvec(w_label, l)?;
                        tape.sum_set(&[wh, wl, bias])?
                    }
                    (LabelTerm::Bias { table }, _) => {
                        let b = tape.lookup_row(store, *table, label_row)?;
                        tape.add(wh, b)?
                    }
                    _ => unreachable!("label context matches the label term"),
                };
                // edge gate: σ(ŵ_dir · h_u + b̂_label)
                let gh = tape.matvec(gate_w, h_u)?;
                let gb = tape.lookup_row(store, layer.gate_bias, label_row)?;
                let g = tape.add(gh, gb)?;
                let g = tape.sigmoid(g);
                let mut contrib = tape.mul_scalar(pre, g)?;
                if train && rate > 0.0 {
                    contrib = tape.scale(contrib, 1.0 / (1.0 - rate));
                }
                contributions.push(contrib);
            }
            let summed = if contributions.is_empty() {
                tape.zeros(d_h)
            } else {
                tape.sum_set(&contributions)?
            };
            next.push(tape.relu(summed));
        }
        Ok(next)
    }

    pub(crate) fn features_mut(&mut self) -> &mut FeatureSet {
        &mut self.features
    }
}

impl ScopeModel for GcnModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Gcn
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn features(&self) -> &FeatureSet {
        &self.features
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sentence: &Sentence,
        tree: &DependencyTree,
        cues: &BTreeSet<usize>,
    ) -> Result<Vec<Var>, Error> {
        let mut inputs = Vec::with_capacity(sentence.len());
        for t in &sentence.tokens {
            inputs.push(
                self.features
                    .encode_token(tape, store, t, cues.contains(&t.id), false)?,
            );
        }
        let mut states = self.pre_encode(tape, store, &inputs)?;
        for k in 0..self.layers.len() {
            states = self.layer_forward(tape, store, tree, &states, k)?;
        }
        let mut probs = Vec::with_capacity(states.len());
        for h in states {
            probs.push(self.readout.probs(tape, store, h, 0.0)?);
        }
        Ok(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Precision};
    use crate::corpus::{build_tree, Annotation, Corpus, Token};
    use crate::models::{build_model, build_vocabs, instance_loss, Model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(k: usize) -> ModelConfig {
        ModelConfig {
            d_word: 3,
            d_cue: 2,
            d_pos: 2,
            d_label: 2,
            d_hidden: 4,
            gcn_layers: k,
            precision: Precision::Double,
            neighbor_dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn chain_sentence(n: usize) -> Sentence {
        // distinct forms so that perturbing one token touches one row
        let tokens = (1..=n)
            .map(|i| Token::new(i, format!("w{i}"), format!("w{i}"), "NOUN", i - 1, "dep"))
            .collect();
        Sentence {
            tokens,
            lang: "en".into(),
            source_id: "chain".into(),
            annotations: vec![Annotation {
                cues: BTreeSet::from([n]),
                scope: BTreeSet::from([1]),
            }],
        }
    }

    fn build(config: &ModelConfig, sentence: &Sentence) -> (Model, ParamStore) {
        let corpus = Corpus {
            sentences: vec![sentence.clone()],
        };
        let vocabs = build_vocabs(&corpus);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model =
            build_model(ModelKind::Gcn, config, &vocabs, None, &mut store, &mut rng).unwrap();
        (model, store)
    }

    fn gcn(model: &Model) -> &GcnModel {
        match model {
            Model::Gcn(m) => m,
            _ => panic!("expected a GCN"),
        }
    }

    #[test]
    fn isolated_node_aggregates_only_itself() {
        let s = Sentence {
            tokens: vec![Token::new(1, "w1", "w1", "NOUN", 0, "root")],
            lang: "en".into(),
            source_id: "one".into(),
            annotations: vec![],
        };
        let (model, _store) = build(&small_config(1), &s);
        let m = gcn(model_ref(&model));
        let tree = build_tree(&s).unwrap();
        let hood = m.neighborhood(&tree, 1);
        assert_eq!(hood.len(), 1);
        assert_eq!(hood[0].0, 1);
        assert!(matches!(hood[0].1, Dir::SelfLoop));
    }

    fn model_ref(m: &Model) -> &Model {
        m
    }

    #[test]
    fn zero_weights_give_zero_states_and_uniform_pairs() {
        let s = chain_sentence(4);
        let (model, mut store) = build(&small_config(2), &s);
        store.set_all_zero();
        let tree = build_tree(&s).unwrap();
        let mut tape = Tape::new(Precision::Double);
        let probs = model
            .forward(&mut tape, &store, &s, &tree, &s.annotations[0].cues)
            .unwrap();
        for p in probs {
            assert_eq!(tape.value(p), &[0.5, 0.5]);
        }
    }

    fn forward_values(model: &Model, store: &ParamStore, s: &Sentence) -> Vec<Vec<f64>> {
        let tree = build_tree(s).unwrap();
        let mut tape = Tape::new(Precision::Double);
        let probs = model
            .forward(&mut tape, store, s, &tree, &s.annotations[0].cues)
            .unwrap();
        probs.iter().map(|&p| tape.value(p).to_vec()).collect()
    }

    #[test]
    fn receptive_field_is_exactly_k_hops() {
        // chain of 6; perturb token 6's form; with K = 2 the outputs of
        // tokens at distance > 2 (ids 1, 2, 3) must be bitwise unchanged
        // while the distance-1 neighbor changes.
        let s = chain_sentence(6);
        let (model, store) = build(&small_config(2), &s);
        let base = forward_values(&model, &store, &s);
        let mut s2 = s.clone();
        s2.tokens[5].form = "w1".into(); // different embedding row
        let perturbed = forward_values(&model, &store, &s2);
        for far in [0usize, 1, 2] {
            assert_eq!(base[far], perturbed[far], "token {} changed", far + 1);
        }
        assert_ne!(base[4], perturbed[4], "distance-1 neighbor must change");
    }

    #[test]
    fn gradient_check_on_five_token_tree_k2() {
        let s = Sentence {
            tokens: vec![
                Token::new(1, "we", "we", "PRON", 3, "nsubj"),
                Token::new(2, "did", "do", "AUX", 3, "aux"),
                Token::new(3, "see", "see", "VERB", 0, "root"),
                Token::new(4, "not", "not", "PART", 3, "neg"),
                Token::new(5, "it", "it", "PRON", 3, "dobj"),
            ],
            lang: "en".into(),
            source_id: "g".into(),
            annotations: vec![Annotation {
                cues: BTreeSet::from([4]),
                scope: BTreeSet::from([3, 5]),
            }],
        };
        let mut config = small_config(2);
        config.d_hidden = 3;
        let (model, mut store) = build(&config, &s);
        let tree = build_tree(&s).unwrap();
        let ann = s.annotations[0].clone();
        let report = grad_check(&mut store, 1e-5, 1e-4, |tape, store| {
            let probs = model
                .forward(tape, store, &s, &tree, &ann.cues)
                .map_err(|e| match e {
                    crate::Error::Autodiff(a) => a,
                    other => panic!("unexpected: {other}"),
                })?;
            Ok(instance_loss(tape, &probs, &ann)?.expect("non-cue tokens exist"))
        })
        .unwrap();
        assert!(
            report.passed(),
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn label_bias_mode_runs_and_checks_gradients() {
        let s = chain_sentence(4);
        let mut config = small_config(2);
        config.gcn_label_mode = GcnLabelMode::LabelBias;
        config.d_hidden = 3;
        let (model, mut store) = build(&config, &s);
        let tree = build_tree(&s).unwrap();
        let ann = s.annotations[0].clone();
        let report = grad_check(&mut store, 1e-5, 1e-4, |tape, store| {
            let probs = model
                .forward(tape, store, &s, &tree, &ann.cues)
                .map_err(|e| match e {
                    crate::Error::Autodiff(a) => a,
                    other => panic!("unexpected: {other}"),
                })?;
            Ok(instance_loss(tape, &probs, &ann)?.expect("non-cue tokens exist"))
        })
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn bilstm_pre_encoder_runs() {
        let s = chain_sentence(3);
        let mut config = small_config(1);
        config.gcn_pre_encoder = PreEncoder::Bilstm;
        let (model, store) = build(&config, &s);
        let vals = forward_values(&model, &store, &s);
        for v in vals {
            assert!((v[0] + v[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn neighbor_dropout_only_at_train_time() {
        let s = chain_sentence(4);
        let mut config = small_config(2);
        config.neighbor_dropout = 0.5;
        let (model, store) = build(&config, &s);
        let tree = build_tree(&s).unwrap();
        // eval: deterministic regardless of the dropout rate
        let a = forward_values(&model, &store, &s);
        let b = forward_values(&model, &store, &s);
        assert_eq!(a, b);
        // train: two different seeds disagree somewhere
        let run = |seed: u64| {
            let mut tape = Tape::for_training(Precision::Double, seed);
            let probs = model
                .forward(&mut tape, &store, &s, &tree, &s.annotations[0].cues)
                .unwrap();
            probs.iter().map(|&p| tape.value(p).to_vec()).collect::<Vec<_>>()
        };
        assert_ne!(run(1), run(2));
    }
}
