use std::collections::BTreeSet;

use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::corpus::{DependencyTree, Sentence};
use crate::embeddings::{EmbeddingTable, FeatureSet};
use crate::Error;

use super::{LstmCell, ModelConfig, ModelKind, Readout, ScopeModel, Vocabs};

/// Sequential bidirectional LSTM tagger over the token sequence
/// (word, cue and universal-PoS features; no syntax).
#[derive(Debug, Clone)]
pub struct BiLstmModel {
    config: ModelConfig,
    features: FeatureSet,
    forward_cell: LstmCell,
    backward_cell: LstmCell,
    readout: Readout,
}

impl BiLstmModel {
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
        let d_in = features.input_dim(false);
        let d_h = config.d_hidden;
        let forward_cell = LstmCell::new("bilstm.fwd", store, d_in, d_h, rng)?;
        let backward_cell = LstmCell::new("bilstm.bwd", store, d_in, d_h, rng)?;
        let readout = Readout::new("bilstm", store, 2 * d_h, rng)?;
        Ok(BiLstmModel {
            config: config.clone(),
            features,
            forward_cell,
            backward_cell,
            readout,
        })
    }

    pub(crate) fn features_mut(&mut self) -> &mut FeatureSet {
        &mut self.features
    }
}

impl ScopeModel for BiLstmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Bilstm
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
        _tree: &DependencyTree,
        cues: &BTreeSet<usize>,
    ) -> Result<Vec<Var>, Error> {
        let n = sentence.len();
        let d_h = self.config.d_hidden;
        let mut inputs = Vec::with_capacity(n);
        for t in &sentence.tokens {
            inputs.push(
                self.features
                    .encode_token(tape, store, t, cues.contains(&t.id), false)?,
            );
        }

        let fwd = self.forward_cell.vars(tape, store);
        let mut h = tape.zeros(d_h);
        let mut c = tape.zeros(d_h);
        let mut h_fwd = Vec::with_capacity(n);
        for &x in &inputs {
            let (nh, nc) = fwd.step(tape, x, h, c)?;
            h_fwd.push(nh);
            h = nh;
            c = nc;
        }

        let bwd = self.backward_cell.vars(tape, store);
        let mut h = tape.zeros(d_h);
        let mut c = tape.zeros(d_h);
        let mut h_bwd = vec![h; n];
        for (i, &x) in inputs.iter().enumerate().rev() {
            let (nh, nc) = bwd.step(tape, x, h, c)?;
            h_bwd[i] = nh;
            h = nh;
            c = nc;
        }

        let mut probs = Vec::with_capacity(n);
        for i in 0..n {
            let hi = tape.concat(&[h_fwd[i], h_bwd[i]])?;
            probs.push(
                self.readout
                    .probs(tape, store, hi, self.config.output_dropout)?,
            );
        }
        Ok(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Precision;
    use crate::corpus::{build_tree, Token};
    use crate::embeddings::FeatureMask;
    use crate::models::{build_model, build_vocabs, predict_probs, Model};
    use crate::corpus::{Annotation, Corpus};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_word: 4,
            d_cue: 2,
            d_pos: 3,
            d_label: 3,
            d_hidden: 5,
            precision: Precision::Double,
            output_dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn tiny_sentence() -> Sentence {
        Sentence {
            tokens: vec![
                Token::new(1, "I", "I", "PRON", 3, "nsubj"),
                Token::new(2, "not", "not", "PART", 3, "neg"),
                Token::new(3, "go", "go", "VERB", 0, "root"),
            ],
            lang: "en".into(),
            source_id: "t".into(),
            annotations: vec![Annotation {
                cues: BTreeSet::from([2]),
                scope: BTreeSet::from([1, 3]),
            }],
        }
    }

    fn build(config: &ModelConfig) -> (Model, ParamStore, Corpus) {
        let corpus = Corpus {
            sentences: vec![tiny_sentence()],
        };
        let vocabs = build_vocabs(&corpus);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model =
            build_model(ModelKind::Bilstm, config, &vocabs, None, &mut store, &mut rng).unwrap();
        (model, store, corpus)
    }

    #[test]
    fn zero_weights_give_uniform_pairs() {
        let config = small_config();
        let (model, mut store, corpus) = build(&config);
        store.set_all_zero();
        let s = &corpus.sentences[0];
        let tree = build_tree(s).unwrap();
        let cues = BTreeSet::new(); // before cue forcing
        let mut tape = Tape::new(Precision::Double);
        let probs = model.forward(&mut tape, &store, s, &tree, &cues).unwrap();
        for p in probs {
            assert_eq!(tape.value(p), &[0.5, 0.5]);
        }
    }

    #[test]
    fn pairs_sum_to_one_and_cues_are_forced() {
        let config = small_config();
        let (model, store, corpus) = build(&config);
        let s = &corpus.sentences[0];
        let tree = build_tree(s).unwrap();
        let probs =
            predict_probs(&model, &store, s, &tree, &s.annotations[0].cues).unwrap();
        for (i, (po, pi)) in probs.iter().enumerate() {
            assert!((po + pi - 1.0).abs() < 1e-9, "token {i}: {po} + {pi}");
        }
        assert_eq!(probs[1], (1.0, 0.0)); // cue token
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let config = small_config();
        let run = || {
            let (model, store, corpus) = build(&config);
            let s = &corpus.sentences[0];
            let tree = build_tree(s).unwrap();
            predict_probs(&model, &store, s, &tree, &s.annotations[0].cues).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn feature_mask_shrinks_input_width() {
        let mut config = small_config();
        config.mask = FeatureMask::NO_WORD;
        let (model, _, _) = build(&config);
        assert_eq!(model.features().input_dim(false), 2 + 3);
    }
}
