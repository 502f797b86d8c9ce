//! The three encoders producing per-token in-scope probabilities: a
//! sequential BiLSTM, a bidirectional dependency LSTM and a gated GCN.
//!
//! All models share the readout convention: per token a two-class softmax
//! yields `(p_out, p_in)`. Cue tokens are forced to out-of-scope by
//! [`predict_probs`], after the softmax; training losses simply exclude
//! cue tokens.

mod bilstm;
mod checkpoint;
mod dlstm;
mod gcn;

pub use bilstm::BiLstmModel;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dlstm::DLstmModel;
pub use gcn::GcnModel;

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Precision, Tape, Tensor, Var};
use crate::corpus::{Annotation, Corpus, DependencyTree, Sentence};
use crate::embeddings::{vocab_from_iter, EmbeddingTable, FeatureMask, FeatureSet, Vocab};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bilstm,
    Dlstm,
    Gcn,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Bilstm => "bilstm",
            ModelKind::Dlstm => "dlstm",
            ModelKind::Gcn => "gcn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bilstm" => Ok(ModelKind::Bilstm),
            "dlstm" => Ok(ModelKind::Dlstm),
            "gcn" => Ok(ModelKind::Gcn),
            other => Err(format!("unknown model kind '{other}'")),
        }
    }
}

/// How GCN inputs are encoded before the first graph layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreEncoder {
    DenseRelu,
    Bilstm,
}

/// Where the GCN takes its dependency-label information from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GcnLabelMode {
    /// Label embeddings weighted alongside the other inputs
    /// (`W_l · l(u,v)` plus a shared bias).
    LabelWeighted,
    /// Per-label bias vectors, no label embeddings.
    LabelBias,
}

/// Shared model configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_word: usize,
    pub d_cue: usize,
    pub d_pos: usize,
    pub d_label: usize,
    pub d_hidden: usize,
    /// Number of stacked GCN layers (the K-hop receptive field).
    pub gcn_layers: usize,
    /// Output-layer dropout for the BiLSTM and D-LSTM.
    pub output_dropout: f64,
    /// Neighbor dropout for the GCN.
    pub neighbor_dropout: f64,
    pub gcn_pre_encoder: PreEncoder,
    pub gcn_label_mode: GcnLabelMode,
    /// Couple the D-LSTM's top-down pass to the bottom-up states. Disabling
    /// this zeroes the injection matrices and the bottom-up-memory gate
    /// (ablation switch; a sigmoid gate cannot be zeroed through weights).
    pub dlstm_coupling: bool,
    pub seed: u64,
    pub mask: FeatureMask,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_word: 100,
            d_cue: 16,
            d_pos: 32,
            d_label: 32,
            d_hidden: 200,
            gcn_layers: 4,
            output_dropout: 0.2,
            neighbor_dropout: 0.2,
            gcn_pre_encoder: PreEncoder::DenseRelu,
            gcn_label_mode: GcnLabelMode::LabelWeighted,
            dlstm_coupling: true,
            seed: 1,
            mask: FeatureMask::ALL,
            precision: Precision::Single,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("d_word", self.d_word),
            ("d_cue", self.d_cue),
            ("d_pos", self.d_pos),
            ("d_label", self.d_label),
            ("d_hidden", self.d_hidden),
        ] {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.gcn_layers == 0 {
            return Err("gcn_layers must be at least 1".into());
        }
        for (name, r) in [
            ("output_dropout", self.output_dropout),
            ("neighbor_dropout", self.neighbor_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(format!("{name} must be in [0,1), got {r}"));
            }
        }
        if self.gcn_pre_encoder == PreEncoder::Bilstm && self.d_hidden % 2 != 0 {
            return Err("the BiLSTM pre-encoder needs an even d_hidden".into());
        }
        Ok(())
    }
}

/// The vocabularies a model is built over, extracted from training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabs {
    pub word: Vocab,
    pub pos: Vocab,
    pub label: Vocab,
    /// Dependency labels paired with edge direction (`along:X`, `reverse:X`)
    /// plus the reserved `self` label; used by the GCN.
    pub label_dir: Vocab,
}

impl Vocabs {
    pub fn reindex(&mut self) {
        self.word.reindex();
        self.pos.reindex();
        self.label.reindex();
        self.label_dir.reindex();
    }
}

pub const SELF_LABEL: &str = "self";

/// Build open vocabularies (plus UNK rows) from a training corpus, in
/// first-seen order.
pub fn build_vocabs(corpus: &Corpus) -> Vocabs {
    let tokens = || corpus.sentences.iter().flat_map(|s| s.tokens.iter());
    let word = vocab_from_iter(tokens().map(|t| t.form.as_str()));
    let pos = vocab_from_iter(tokens().map(|t| t.upos.as_str()));
    let label = vocab_from_iter(tokens().map(|t| t.deprel.as_str()));
    let mut label_dir_words = Vec::with_capacity(label.len() * 2 + 1);
    for l in label.words() {
        label_dir_words.push(format!("along:{l}"));
        label_dir_words.push(format!("reverse:{l}"));
    }
    label_dir_words.push(SELF_LABEL.to_string());
    Vocabs {
        word,
        pos,
        label,
        label_dir: Vocab::new(label_dir_words),
    }
}

// ── Shared parameter plumbing ────────────────────────────────────────

pub(crate) fn uniform_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-0.1..0.1)).collect(),
    )
    .expect("matrix shape")
    .with_requires_grad(true)
}

pub(crate) fn bias_vector(n: usize, fill: f64) -> Tensor {
    Tensor::vector(vec![fill; n]).with_requires_grad(true)
}

/// One LSTM cell's gate parameters (input, forget, output, candidate).
#[derive(Debug, Clone)]
pub(crate) struct LstmCell {
    w_i: ParamId,
    u_i: ParamId,
    b_i: ParamId,
    w_f: ParamId,
    u_f: ParamId,
    b_f: ParamId,
    w_o: ParamId,
    u_o: ParamId,
    b_o: ParamId,
    w_u: ParamId,
    u_u: ParamId,
    b_u: ParamId,
}

impl LstmCell {
    /// Register gate weights. Forget-gate bias starts at +1.
    pub fn new(
        prefix: &str,
        store: &mut ParamStore,
        d_in: usize,
        d_h: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        let w_i = store.add(&format!("{prefix}.w_i"), uniform_matrix(d_h, d_in, rng))?;
        let w_f = store.add(&format!("{prefix}.w_f"), uniform_matrix(d_h, d_in, rng))?;
        let w_o = store.add(&format!("{prefix}.w_o"), uniform_matrix(d_h, d_in, rng))?;
        let w_u = store.add(&format!("{prefix}.w_u"), uniform_matrix(d_h, d_in, rng))?;
        let u_i = store.add(&format!("{prefix}.u_i"), uniform_matrix(d_h, d_h, rng))?;
        let u_f = store.add(&format!("{prefix}.u_f"), uniform_matrix(d_h, d_h, rng))?;
        let u_o = store.add(&format!("{prefix}.u_o"), uniform_matrix(d_h, d_h, rng))?;
        let u_u = store.add(&format!("{prefix}.u_u"), uniform_matrix(d_h, d_h, rng))?;
        let b_i = store.add(&format!("{prefix}.b_i"), bias_vector(d_h, 0.0))?;
        let b_f = store.add(&format!("{prefix}.b_f"), bias_vector(d_h, 1.0))?;
        let b_o = store.add(&format!("{prefix}.b_o"), bias_vector(d_h, 0.0))?;
        let b_u = store.add(&format!("{prefix}.b_u"), bias_vector(d_h, 0.0))?;
        Ok(LstmCell {
            w_i,
            u_i,
            b_i,
            w_f,
            u_f,
            b_f,
            w_o,
            u_o,
            b_o,
            w_u,
            u_u,
            b_u,
        })
    }

    pub fn vars(&self, tape: &mut Tape, store: &ParamStore) -> LstmCellVars {
        LstmCellVars {
            w_i: tape.param(store, self.w_i),
            u_i: tape.param(store, self.u_i),
            b_i: tape.param(store, self.b_i),
            w_f: tape.param(store, self.w_f),
            u_f: tape.param(store, self.u_f),
            b_f: tape.param(store, self.b_f),
            w_o: tape.param(store, self.w_o),
            u_o: tape.param(store, self.u_o),
            b_o: tape.param(store, self.b_o),
            w_u: tape.param(store, self.w_u),
            u_u: tape.param(store, self.u_u),
            b_u: tape.param(store, self.b_u),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmCellVars {
    w_i: Var,
    u_i: Var,
    b_i: Var,
    w_f: Var,
    u_f: Var,
    b_f: Var,
    w_o: Var,
    u_o: Var,
    b_o: Var,
    w_u: Var,
    u_u: Var,
    b_u: Var,
}

impl LstmCellVars {
    fn gate(
        &self,
        tape: &mut Tape,
        w: Var,
        u: Var,
        b: Var,
        x: Var,
        h: Var,
    ) -> Result<Var, AutodiffError> {
        let wx = tape.matvec(w, x)?;
        let uh = tape.matvec(u, h)?;
        tape.sum_set(&[wx, uh, b])
    }

    /// One sequential step: returns (h', c').
    pub fn step(
        &self,
        tape: &mut Tape,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var), AutodiffError> {
        let i = self.gate(tape, self.w_i, self.u_i, self.b_i, x, h_prev)?;
        let i = tape.sigmoid(i);
        let f = self.gate(tape, self.w_f, self.u_f, self.b_f, x, h_prev)?;
        let f = tape.sigmoid(f);
        let o = self.gate(tape, self.w_o, self.u_o, self.b_o, x, h_prev)?;
        let o = tape.sigmoid(o);
        let u = self.gate(tape, self.w_u, self.u_u, self.b_u, x, h_prev)?;
        let u = tape.tanh(u);
        let iu = tape.mul(i, u)?;
        let fc = tape.mul(f, c_prev)?;
        let c = tape.sum_set(&[iu, fc])?;
        let th = tape.tanh(c);
        let h = tape.mul(o, th)?;
        Ok((h, c))
    }
}

/// Two-class output projection.
#[derive(Debug, Clone)]
pub(crate) struct Readout {
    w: ParamId,
    b: ParamId,
}

impl Readout {
    pub fn new(
        prefix: &str,
        store: &mut ParamStore,
        d_in: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        let w = store.add(&format!("{prefix}.w_out"), uniform_matrix(2, d_in, rng))?;
        let b = store.add(&format!("{prefix}.b_out"), bias_vector(2, 0.0))?;
        Ok(Readout { w, b })
    }

    /// Per-token probability pair from a hidden state.
    pub fn probs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        dropout: f64,
    ) -> Result<Var, AutodiffError> {
        let h = tape.dropout(h, dropout)?;
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let wh = tape.matvec(w, h)?;
        let logits = tape.add(wh, b)?;
        tape.softmax(logits)
    }
}

// ── The model interface ──────────────────────────────────────────────

/// Class index of "outside the scope" in every probability pair.
pub const CLASS_OUT: usize = 0;
/// Class index of "inside the scope".
pub const CLASS_IN: usize = 1;

pub trait ScopeModel {
    fn kind(&self) -> ModelKind;
    fn config(&self) -> &ModelConfig;
    fn features(&self) -> &FeatureSet;

    /// Per-token probability pairs `(p_out, p_in)`, one `Var` of shape [2]
    /// per token in id order. No cue forcing is applied here.
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sentence: &Sentence,
        tree: &DependencyTree,
        cues: &BTreeSet<usize>,
    ) -> Result<Vec<Var>, Error>;
}

/// A trained (or initialized) model of any kind.
#[derive(Debug, Clone)]
pub enum Model {
    Bilstm(BiLstmModel),
    Dlstm(DLstmModel),
    Gcn(GcnModel),
}

impl Model {
    /// Swap the word-embedding table, e.g. for cross-lingual prediction on
    /// a language other than the training one.
    pub fn replace_word_table(
        &mut self,
        store: &mut ParamStore,
        table: &EmbeddingTable,
    ) -> Result<(), Error> {
        let features = match self {
            Model::Bilstm(m) => m.features_mut(),
            Model::Dlstm(m) => m.features_mut(),
            Model::Gcn(m) => m.features_mut(),
        };
        features.replace_word_table(store, table)?;
        Ok(())
    }
}

impl ScopeModel for Model {
    fn kind(&self) -> ModelKind {
        match self {
            Model::Bilstm(m) => m.kind(),
            Model::Dlstm(m) => m.kind(),
            Model::Gcn(m) => m.kind(),
        }
    }

    fn config(&self) -> &ModelConfig {
        match self {
            Model::Bilstm(m) => m.config(),
            Model::Dlstm(m) => m.config(),
            Model::Gcn(m) => m.config(),
        }
    }

    fn features(&self) -> &FeatureSet {
        match self {
            Model::Bilstm(m) => m.features(),
            Model::Dlstm(m) => m.features(),
            Model::Gcn(m) => m.features(),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sentence: &Sentence,
        tree: &DependencyTree,
        cues: &BTreeSet<usize>,
    ) -> Result<Vec<Var>, Error> {
        match self {
            Model::Bilstm(m) => m.forward(tape, store, sentence, tree, cues),
            Model::Dlstm(m) => m.forward(tape, store, sentence, tree, cues),
            Model::Gcn(m) => m.forward(tape, store, sentence, tree, cues),
        }
    }
}

/// Construct a model with freshly initialized parameters in `store`.
/// `word_table` overrides the word feature with pretrained (possibly
/// frozen) vectors; its vocabulary must be `vocabs.word`.
pub fn build_model(
    kind: ModelKind,
    config: &ModelConfig,
    vocabs: &Vocabs,
    word_table: Option<&EmbeddingTable>,
    store: &mut ParamStore,
    rng: &mut impl Rng,
) -> Result<Model, Error> {
    config
        .validate()
        .map_err(|m| Error::Config(format!("invalid model config: {m}")))?;
    Ok(match kind {
        ModelKind::Bilstm => Model::Bilstm(BiLstmModel::new(config, vocabs, word_table, store, rng)?),
        ModelKind::Dlstm => Model::Dlstm(DLstmModel::new(config, vocabs, word_table, store, rng)?),
        ModelKind::Gcn => Model::Gcn(GcnModel::new(config, vocabs, word_table, store, rng)?),
    })
}

/// Run a model in evaluation mode and return per-token probability pairs
/// with cue tokens forced to out-of-scope.
pub fn predict_probs(
    model: &Model,
    store: &ParamStore,
    sentence: &Sentence,
    tree: &DependencyTree,
    cues: &BTreeSet<usize>,
) -> Result<Vec<(f64, f64)>, Error> {
    let mut tape = Tape::new(model.config().precision);
    let vars = model.forward(&mut tape, store, sentence, tree, cues)?;
    let mut out = Vec::with_capacity(vars.len());
    for (i, v) in vars.iter().enumerate() {
        let id = i + 1;
        if cues.contains(&id) {
            out.push((1.0, 0.0));
        } else {
            let p = tape.value(*v);
            out.push((p[CLASS_OUT], p[CLASS_IN]));
        }
    }
    Ok(out)
}

/// Scope decision from a probability pair: in-scope iff p_in > p_out.
pub fn decide(p: (f64, f64)) -> bool {
    p.1 > p.0
}

/// Predicted scope token set for one instance.
pub fn predict_scope(
    model: &Model,
    store: &ParamStore,
    sentence: &Sentence,
    tree: &DependencyTree,
    annotation: &Annotation,
) -> Result<BTreeSet<usize>, Error> {
    let probs = predict_probs(model, store, sentence, tree, &annotation.cues)?;
    Ok(probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| decide(p))
        .map(|(i, _)| i + 1)
        .collect())
}

/// Per-instance probability pairs over a whole corpus, in instance order
/// (document order, then cue order). Cue forcing applied.
pub fn predict_corpus_probs(
    model: &Model,
    store: &ParamStore,
    corpus: &Corpus,
) -> Result<Vec<Vec<(f64, f64)>>, Error> {
    let mut out = Vec::with_capacity(corpus.instance_count());
    for sentence in &corpus.sentences {
        let tree = crate::corpus::build_tree(sentence)?;
        for ann in &sentence.annotations {
            out.push(predict_probs(model, store, sentence, &tree, &ann.cues)?);
        }
    }
    Ok(out)
}

/// Predicted scope token sets over a whole corpus, in instance order.
pub fn predict_corpus(
    model: &Model,
    store: &ParamStore,
    corpus: &Corpus,
) -> Result<Vec<BTreeSet<usize>>, Error> {
    Ok(predict_corpus_probs(model, store, corpus)?
        .into_iter()
        .map(|probs| {
            probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| decide(p))
                .map(|(i, _)| i + 1)
                .collect()
        })
        .collect())
}

/// Mean two-class cross-entropy over non-cue tokens. Returns `None` when
/// every token is a cue.
pub fn instance_loss(
    tape: &mut Tape,
    probs: &[Var],
    annotation: &Annotation,
) -> Result<Option<Var>, AutodiffError> {
    let mut terms = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        let id = i + 1;
        if annotation.cues.contains(&id) {
            continue;
        }
        let class = if annotation.scope.contains(&id) {
            CLASS_IN
        } else {
            CLASS_OUT
        };
        terms.push(tape.cross_entropy(p, class)?);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let total = tape.sum_set(&terms)?;
    Ok(Some(tape.scale(total, 1.0 / terms.len() as f64)))
}
