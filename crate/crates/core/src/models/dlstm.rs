use std::collections::BTreeSet;

use rand::Rng;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Var};
use crate::corpus::{DependencyTree, Sentence};
use crate::embeddings::{EmbeddingTable, FeatureSet};
use crate::Error;

use super::{bias_vector, uniform_matrix, LstmCell, ModelConfig, ModelKind, Readout, ScopeModel, Vocabs};

/// One top-down gate: σ/tanh(W x + U h_parent↓ + A h_v↑ + b). The A matrix
/// injects the bottom-up state, coupling the two passes.
#[derive(Debug, Clone)]
struct TdGate {
    w: ParamId,
    u: ParamId,
    a: ParamId,
    b: ParamId,
}

impl TdGate {
    fn new(
        prefix: &str,
        store: &mut ParamStore,
        d_h: usize,
        bias: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        Ok(TdGate {
            w: store.add(&format!("{prefix}.w"), uniform_matrix(d_h, d_h, rng))?,
            u: store.add(&format!("{prefix}.u"), uniform_matrix(d_h, d_h, rng))?,
            a: store.add(&format!("{prefix}.a"), uniform_matrix(d_h, d_h, rng))?,
            b: store.add(&format!("{prefix}.b"), bias_vector(d_h, bias))?,
        })
    }

    /// Pre-activation. The bottom-up term is omitted when coupling is off.
    fn pre(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        h_parent: Var,
        h_up: Var,
        coupling: bool,
    ) -> Result<Var, AutodiffError> {
        let w = tape.param(store, self.w);
        let u = tape.param(store, self.u);
        let b = tape.param(store, self.b);
        let wx = tape.matvec(w, x)?;
        let uh = tape.matvec(u, h_parent)?;
        let mut terms = vec![wx, uh, b];
        if coupling {
            let a = tape.param(store, self.a);
            terms.push(tape.matvec(a, h_up)?);
        }
        tape.sum_set(&terms)
    }
}

/// Bidirectional dependency LSTM: a child-sum bottom-up pass followed by a
/// top-down pass that reads the bottom-up states through per-gate injection
/// matrices and a bottom-up-memory gate. The readout uses the top-down
/// hidden states only.
#[derive(Debug, Clone)]
pub struct DLstmModel {
    config: ModelConfig,
    features: FeatureSet,
    proj_w: ParamId,
    proj_b: ParamId,
    bottom_up: LstmCell,
    td_i: TdGate,
    td_f: TdGate,
    td_o: TdGate,
    td_u: TdGate,
    /// Bottom-up-memory gate m: c↓ gains a m ⊙ c↑ term.
    td_m: TdGate,
    readout: Readout,
}

impl DLstmModel {
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
            vocabs.label.clone(),
            (config.d_word, config.d_cue, config.d_pos, config.d_label),
            config.mask,
            word_table,
            rng,
        )?;
        let d_in = features.input_dim(true);
        let d_h = config.d_hidden;
        let proj_w = store.add("dlstm.proj.w", uniform_matrix(d_h, d_in, rng))?;
        let proj_b = store.add("dlstm.proj.b", bias_vector(d_h, 0.0))?;
        let bottom_up = LstmCell::new("dlstm.up", store, d_h, d_h, rng)?;
        let td_i = TdGate::new("dlstm.down.i", store, d_h, 0.0, rng)?;
        let td_f = TdGate::new("dlstm.down.f", store, d_h, 1.0, rng)?;
        let td_o = TdGate::new("dlstm.down.o", store, d_h, 0.0, rng)?;
        let td_u = TdGate::new("dlstm.down.u", store, d_h, 0.0, rng)?;
        let td_m = TdGate::new("dlstm.down.m", store, d_h, 0.0, rng)?;
        let readout = Readout::new("dlstm", store, d_h, rng)?;
        Ok(DLstmModel {
            config: config.clone(),
            features,
            proj_w,
            proj_b,
            bottom_up,
            td_i,
            td_f,
            td_o,
            td_u,
            td_m,
            readout,
        })
    }

    /// Projected inputs x_v = W[w;c;p;l] + b, indexed by token id - 1.
    fn project_inputs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sentence: &Sentence,
        cues: &BTreeSet<usize>,
    ) -> Result<Vec<Var>, AutodiffError> {
        let w = tape.param(store, self.proj_w);
        let b = tape.param(store, self.proj_b);
        let mut xs = Vec::with_capacity(sentence.len());
        for t in &sentence.tokens {
            let enc = self
                .features
                .encode_token(tape, store, t, cues.contains(&t.id), true)?;
            let wx = tape.matvec(w, enc)?;
            xs.push(tape.add(wx, b)?);
        }
        Ok(xs)
    }

    /// Child-sum bottom-up pass; returns (h↑, c↑) per node, indexed by id-1.
    pub(crate) fn bottom_up_states(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tree: &DependencyTree,
        inputs: &[Var],
    ) -> Result<(Vec<Var>, Vec<Var>), AutodiffError> {
        let d_h = self.config.d_hidden;
        let cell = self.bottom_up.vars(tape, store);
        let zero = tape.zeros(d_h);
        let mut h_up = vec![zero; inputs.len()];
        let mut c_up = vec![zero; inputs.len()];
        for v in tree.bottom_up_order() {
            let x = inputs[v - 1];
            // canonical child order: child-sum is order-invariant, summing in
            // sorted id order makes that exact on the tape as well
            let mut kids = tree.children(v).to_vec();
            kids.sort_unstable();
            let h_tilde = if kids.is_empty() {
                zero
            } else {
                let hs: Vec<Var> = kids.iter().map(|&k| h_up[k - 1]).collect();
                tape.sum_set(&hs)?
            };
            let i = cell.gate(tape, cell.w_i, cell.u_i, cell.b_i, x, h_tilde)?;
            let i = tape.sigmoid(i);
            let o = cell.gate(tape, cell.w_o, cell.u_o, cell.b_o, x, h_tilde)?;
            let o = tape.sigmoid(o);
            let u = cell.gate(tape, cell.w_u, cell.u_u, cell.b_u, x, h_tilde)?;
            let u = tape.tanh(u);
            let mut c_terms = vec![tape.mul(i, u)?];
            for &k in &kids {
                let f = cell.gate(tape, cell.w_f, cell.u_f, cell.b_f, x, h_up[k - 1])?;
                let f = tape.sigmoid(f);
                c_terms.push(tape.mul(f, c_up[k - 1])?);
            }
            let c = tape.sum_set(&c_terms)?;
            let th = tape.tanh(c);
            let h = tape.mul(o, th)?;
            h_up[v - 1] = h;
            c_up[v - 1] = c;
        }
        Ok((h_up, c_up))
    }

    /// Top-down pass in root-first order. For the root the parent state is
    /// zero, which reduces the recurrence to its initialization form.
    pub(crate) fn top_down_states(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tree: &DependencyTree,
        inputs: &[Var],
        h_up: &[Var],
        c_up: &[Var],
    ) -> Result<Vec<Var>, AutodiffError> {
        let d_h = self.config.d_hidden;
        let coupling = self.config.dlstm_coupling;
        let zero = tape.zeros(d_h);
        let mut h_down = vec![zero; inputs.len()];
        let mut c_down = vec![zero; inputs.len()];
        for v in tree.top_down_order() {
            let x = inputs[v - 1];
            let (h_p, c_p) = match tree.parent(v) {
                Some(p) => (h_down[p - 1], c_down[p - 1]),
                None => (zero, zero),
            };
            let hu = h_up[v - 1];
            let i = self.td_i.pre(tape, store, x, h_p, hu, coupling)?;
            let i = tape.sigmoid(i);
            let f = self.td_f.pre(tape, store, x, h_p, hu, coupling)?;
            let f = tape.sigmoid(f);
            let o = self.td_o.pre(tape, store, x, h_p, hu, coupling)?;
            let o = tape.sigmoid(o);
            let u = self.td_u.pre(tape, store, x, h_p, hu, coupling)?;
            let u = tape.tanh(u);
            let iu = tape.mul(i, u)?;
            let fc = tape.mul(f, c_p)?;
            let mut terms = vec![iu, fc];
            if coupling {
                let m = self.td_m.pre(tape, store, x, h_p, hu, true)?;
                let m = tape.sigmoid(m);
                terms.push(tape.mul(m, c_up[v - 1])?);
            }
            let c = tape.sum_set(&terms)?;
            let th = tape.tanh(c);
            h_down[v - 1] = tape.mul(o, th)?;
            c_down[v - 1] = c;
        }
        Ok(h_down)
    }

    pub(crate) fn features_mut(&mut self) -> &mut FeatureSet {
        &mut self.features
    }
}

impl ScopeModel for DLstmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Dlstm
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
        let inputs = self.project_inputs(tape, store, sentence, cues)?;
        let (h_up, c_up) = self.bottom_up_states(tape, store, tree, &inputs)?;
        let h_down = self.top_down_states(tape, store, tree, &inputs, &h_up, &c_up)?;
        let mut probs = Vec::with_capacity(h_down.len());
        for h in h_down {
            probs.push(
                self.readout
                    .probs(tape, store, h, self.config.output_dropout)?,
            );
        }
        Ok(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Precision};
    use crate::corpus::{build_tree, Annotation, Corpus, Token};
    use crate::models::{build_model, build_vocabs, instance_loss, predict_probs, Model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_word: 3,
            d_cue: 2,
            d_pos: 2,
            d_label: 2,
            d_hidden: 4,
            precision: Precision::Double,
            output_dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    /// root(1) with children 2 and 3.
    fn three_node_sentence() -> Sentence {
        Sentence {
            tokens: vec![
                Token::new(1, "go", "go", "VERB", 0, "root"),
                Token::new(2, "not", "not", "PART", 1, "neg"),
                Token::new(3, "home", "home", "NOUN", 1, "dobj"),
            ],
            lang: "en".into(),
            source_id: "t".into(),
            annotations: vec![Annotation {
                cues: BTreeSet::from([2]),
                scope: BTreeSet::from([1, 3]),
            }],
        }
    }

    fn build(config: &ModelConfig, sentence: &Sentence) -> (Model, ParamStore) {
        let corpus = Corpus {
            sentences: vec![sentence.clone()],
        };
        let vocabs = build_vocabs(&corpus);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model =
            build_model(ModelKind::Dlstm, config, &vocabs, None, &mut store, &mut rng).unwrap();
        (model, store)
    }

    fn dlstm(model: &Model) -> &DLstmModel {
        match model {
            Model::Dlstm(m) => m,
            _ => panic!("expected a D-LSTM"),
        }
    }

    #[test]
    fn zero_weights_give_zero_states_and_uniform_pairs() {
        let s = three_node_sentence();
        let (model, mut store) = build(&small_config(), &s);
        store.set_all_zero();
        let tree = build_tree(&s).unwrap();
        let mut tape = Tape::new(Precision::Double);
        let m = dlstm(&model);
        let inputs = m.project_inputs(&mut tape, &store, &s, &BTreeSet::new()).unwrap();
        let (h_up, c_up) = m.bottom_up_states(&mut tape, &store, &tree, &inputs).unwrap();
        for h in &h_up {
            assert_eq!(tape.value(*h), &[0.0; 4]);
        }
        let h_down = m
            .top_down_states(&mut tape, &store, &tree, &inputs, &h_up, &c_up)
            .unwrap();
        for h in &h_down {
            assert_eq!(tape.value(*h), &[0.0; 4]);
        }
        let probs = model
            .forward(&mut Tape::new(Precision::Double), &store, &s, &tree, &BTreeSet::new())
            .unwrap();
        let mut t2 = Tape::new(Precision::Double);
        let probs2 = model.forward(&mut t2, &store, &s, &tree, &BTreeSet::new()).unwrap();
        let _ = probs;
        for p in probs2 {
            assert_eq!(t2.value(p), &[0.5, 0.5]);
        }
    }

    #[test]
    fn child_permutation_leaves_parent_state_unchanged() {
        let s = three_node_sentence();
        let (model, store) = build(&small_config(), &s);
        let mut tree = build_tree(&s).unwrap();
        let m = dlstm(&model);

        let states = |tree: &DependencyTree| {
            let mut tape = Tape::new(Precision::Double);
            let inputs = m
                .project_inputs(&mut tape, &store, &s, &s.annotations[0].cues)
                .unwrap();
            let (h_up, _) = m.bottom_up_states(&mut tape, &store, tree, &inputs).unwrap();
            tape.value(h_up[0]).to_vec()
        };
        let before = states(&tree);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        tree.shuffle_children(&mut rng);
        let after = states(&tree);
        assert_eq!(before, after);
    }

    /// Independent scalar evaluation of the documented recursions at
    /// d_hidden = 1, compared against the tape model on a 3-node tree.
    #[test]
    fn scalar_hand_evaluation_oracle() {
        let mut config = small_config();
        config.d_word = 1;
        config.d_cue = 1;
        config.d_pos = 1;
        config.d_label = 1;
        config.d_hidden = 1;
        let s = three_node_sentence();
        let (model, store) = build(&config, &s);
        let m = dlstm(&model);

        let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
        let scalar = |name: &str| store.get(store.id_of(name).unwrap()).values()[0];
        let row = |name: &str, r: usize| store.get(store.id_of(name).unwrap()).values()[r];

        // encode + project each token: x = Σ_j w_j enc_j + b
        let fs = model.features();
        let x_of = |tok: &Token, is_cue: bool| {
            let enc = [
                row("emb.word", fs.word_vocab.row_of(&tok.form)),
                row("emb.cue", usize::from(is_cue)),
                row("emb.pos", fs.pos_vocab.row_of(&tok.upos)),
                row("emb.label", fs.label_vocab.row_of(&tok.deprel)),
            ];
            let w = store.get(store.id_of("dlstm.proj.w").unwrap());
            let b = scalar("dlstm.proj.b");
            enc.iter().zip(w.values()).map(|(e, w)| e * w).sum::<f64>() + b
        };
        let cues = &s.annotations[0].cues;
        let x: Vec<f64> = s
            .tokens
            .iter()
            .map(|t| x_of(t, cues.contains(&t.id)))
            .collect();

        // bottom-up: leaves 2 and 3, then the root summing them
        let up = |x: f64, h_tilde: f64, fc_sum: f64| {
            let i = sigma(scalar("dlstm.up.w_i") * x + scalar("dlstm.up.u_i") * h_tilde + scalar("dlstm.up.b_i"));
            let o = sigma(scalar("dlstm.up.w_o") * x + scalar("dlstm.up.u_o") * h_tilde + scalar("dlstm.up.b_o"));
            let u = (scalar("dlstm.up.w_u") * x + scalar("dlstm.up.u_u") * h_tilde + scalar("dlstm.up.b_u")).tanh();
            let c = i * u + fc_sum;
            (o * c.tanh(), c)
        };
        let (h2, c2) = up(x[1], 0.0, 0.0);
        let (h3, c3) = up(x[2], 0.0, 0.0);
        let f = |x: f64, h_k: f64| {
            sigma(scalar("dlstm.up.w_f") * x + scalar("dlstm.up.u_f") * h_k + scalar("dlstm.up.b_f"))
        };
        let (h1, c1) = up(x[0], h2 + h3, f(x[0], h2) * c2 + f(x[0], h3) * c3);

        // top-down: root from zero parent, then leaf 3
        let td_gate = |g: &str, x: f64, hp: f64, hu: f64| {
            scalar(&format!("dlstm.down.{g}.w")) * x
                + scalar(&format!("dlstm.down.{g}.u")) * hp
                + scalar(&format!("dlstm.down.{g}.a")) * hu
                + scalar(&format!("dlstm.down.{g}.b"))
        };
        let down = |x: f64, hp: f64, cp: f64, hu: f64, cu: f64| {
            let i = sigma(td_gate("i", x, hp, hu));
            let fg = sigma(td_gate("f", x, hp, hu));
            let o = sigma(td_gate("o", x, hp, hu));
            let u = td_gate("u", x, hp, hu).tanh();
            let mg = sigma(td_gate("m", x, hp, hu));
            let c = i * u + fg * cp + mg * cu;
            (o * c.tanh(), c)
        };
        let (hd1, cd1) = down(x[0], 0.0, 0.0, h1, c1);
        let (hd3, _) = down(x[2], hd1, cd1, h3, c3);

        let tree = build_tree(&s).unwrap();
        let mut tape = Tape::new(Precision::Double);
        let inputs = m.project_inputs(&mut tape, &store, &s, cues).unwrap();
        let (h_up, c_up) = m.bottom_up_states(&mut tape, &store, &tree, &inputs).unwrap();
        let h_down = m
            .top_down_states(&mut tape, &store, &tree, &inputs, &h_up, &c_up)
            .unwrap();

        assert!((tape.value(h_up[0])[0] - h1).abs() < 1e-12, "h_root↑");
        assert!((tape.value(h_down[0])[0] - hd1).abs() < 1e-12, "h_root↓");
        assert!((tape.value(h_down[2])[0] - hd3).abs() < 1e-12, "h_leaf↓");
    }

    #[test]
    fn decoupled_top_down_ignores_bottom_up() {
        // With A_g and m disabled, perturbing the cue leaf's input leaves
        // the sibling's top-down output unchanged, exactly.
        let mut config = small_config();
        config.dlstm_coupling = false;
        let s = three_node_sentence();
        let (model, store) = build(&config, &s);
        let tree = build_tree(&s).unwrap();

        let sibling_probs = |form: &str| {
            let mut s2 = s.clone();
            s2.tokens[1].form = form.into(); // the cue leaf (token 2)
            let mut tape = Tape::new(Precision::Double);
            let probs = model
                .forward(&mut tape, &store, &s2, &tree, &s2.annotations[0].cues)
                .unwrap();
            tape.value(probs[2]).to_vec() // sibling token 3
        };
        assert_eq!(sibling_probs("not"), sibling_probs("go"));

        // with coupling enabled the perturbation reaches the sibling
        let (coupled, store2) = build(&small_config(), &s);
        let sibling_coupled = |form: &str| {
            let mut s2 = s.clone();
            s2.tokens[1].form = form.into();
            let mut tape = Tape::new(Precision::Double);
            let probs = coupled
                .forward(&mut tape, &store2, &s2, &tree, &s2.annotations[0].cues)
                .unwrap();
            tape.value(probs[2]).to_vec()
        };
        assert_ne!(sibling_coupled("not"), sibling_coupled("go"));
    }

    #[test]
    fn probabilities_normalize_and_force_cues() {
        let s = three_node_sentence();
        let (model, store) = build(&small_config(), &s);
        let tree = build_tree(&s).unwrap();
        let probs = predict_probs(&model, &store, &s, &tree, &s.annotations[0].cues).unwrap();
        for (po, pi) in &probs {
            assert!((po + pi - 1.0).abs() < 1e-9);
        }
        assert_eq!(probs[1], (1.0, 0.0));
    }

    #[test]
    fn gradient_check_on_five_token_tree() {
        let mut config = small_config();
        config.d_hidden = 3;
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
}
