//! Word, cue, PoS and dependency-label embeddings, including cross-lingual
//! composition of word vectors from a translation-probability table.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::Token;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: expected {expected} vector components, got {got}")]
    InconsistentDim {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: cannot parse '{value}' as a number")]
    BadNumber { line: usize, value: String },
    #[error("line {line}: expected source, target and probability columns")]
    BadTranslationRow { line: usize },
    #[error("line {line}: probability {p} outside [0,1]")]
    BadProbability { line: usize, p: f64 },
    #[error("empty vector file declares no dimensionality")]
    NoDimensionality,
    #[error("composition method '{0}' needs a translation table")]
    MissingTranslations(&'static str),
    #[error("dimension mismatch: table has d={table}, expected {expected}")]
    DimMismatch { table: usize, expected: usize },
}

/// String-to-row vocabulary. Out-of-vocabulary lookups resolve to a
/// dedicated UNK row appended after all known words.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words, index }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Row count including the UNK row.
    pub fn rows(&self) -> usize {
        self.words.len() + 1
    }

    pub fn unk_row(&self) -> usize {
        self.words.len()
    }

    /// Row index of a word; unknown words map to the UNK row.
    pub fn row_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(self.words.len())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }
}

/// Collect a vocabulary from an iterator in first-seen order.
pub fn vocab_from_iter<'a>(items: impl Iterator<Item = &'a str>) -> Vocab {
    let mut words = Vec::new();
    let mut seen = HashMap::new();
    for item in items {
        if !seen.contains_key(item) {
            seen.insert(item.to_string(), ());
            words.push(item.to_string());
        }
    }
    Vocab::new(words)
}

/// A dense embedding table: one row per vocabulary word plus a final UNK
/// row. Lookup of out-of-vocabulary strings returns the UNK row.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub vocab: Vocab,
    /// Row-major, `vocab.rows() x dim`.
    pub matrix: Vec<f64>,
    pub dim: usize,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn zeros(vocab: Vocab, dim: usize) -> Self {
        let matrix = vec![0.0; vocab.rows() * dim];
        EmbeddingTable {
            vocab,
            matrix,
            dim,
            trainable: false,
        }
    }

    /// Random uniform(-0.1, 0.1) initialization; trainable.
    pub fn random(vocab: Vocab, dim: usize, rng: &mut impl Rng) -> Self {
        let matrix = (0..vocab.rows() * dim)
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        EmbeddingTable {
            vocab,
            matrix,
            dim,
            trainable: true,
        }
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.matrix[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn vector(&self, word: &str) -> &[f64] {
        self.row(self.vocab.row_of(word))
    }
}

/// Load a vector file: one entry per line, `word v1 v2 ... vd` separated by
/// spaces. Duplicate words are resolved last-wins with a warning.
pub fn load_vectors(path: impl AsRef<Path>) -> Result<EmbeddingTable, crate::Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_vectors(&text)?)
}

pub fn parse_vectors(text: &str) -> Result<EmbeddingTable, EmbeddingError> {
    let mut dim: Option<usize> = None;
    let mut words: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line").to_string();
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| EmbeddingError::BadNumber {
                    line: i + 1,
                    value: p.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(EmbeddingError::InconsistentDim {
                    line: i + 1,
                    expected: d,
                    got: values.len(),
                });
            }
            _ => {}
        }
        if let Some(&existing) = index.get(&word) {
            log::warn!("vector file: duplicate entry for '{word}', keeping the last one");
            rows[existing] = values;
        } else {
            index.insert(word.clone(), words.len());
            words.push(word);
            rows.push(values);
        }
    }
    let dim = dim.unwrap_or(0);
    let vocab = Vocab::new(words);
    let mut matrix = Vec::with_capacity(vocab.rows() * dim);
    for row in rows {
        matrix.extend(row);
    }
    matrix.extend(std::iter::repeat(0.0).take(dim)); // UNK row
    Ok(EmbeddingTable {
        vocab,
        matrix,
        dim,
        trainable: false,
    })
}

/// Source-language word → candidate translations with probabilities,
/// sorted descending by probability, ties broken lexicographically.
#[derive(Debug, Clone, Default)]
pub struct TranslationTable {
    map: HashMap<String, Vec<(String, f64)>>,
}

impl TranslationTable {
    pub fn translations(&self, source: &str) -> &[(String, f64)] {
        self.map.get(source).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, source: &str, target: &str, probability: f64) {
        self.map
            .entry(source.to_string())
            .or_default()
            .push((target.to_string(), probability));
    }

    /// Restore the per-source ordering invariant.
    pub fn sort(&mut self) {
        for list in self.map.values_mut() {
            list.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .expect("probabilities are finite")
                    .then_with(|| a.0.cmp(&b.0))
            });
        }
    }
}

/// Load a translation table from TSV rows `source<TAB>target<TAB>probability`.
pub fn load_translation_table(path: impl AsRef<Path>) -> Result<TranslationTable, crate::Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_translation_table(&text)?)
}

pub fn parse_translation_table(text: &str) -> Result<TranslationTable, EmbeddingError> {
    let mut table = TranslationTable::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(EmbeddingError::BadTranslationRow { line: i + 1 });
        }
        let p: f64 = cols[2].parse().map_err(|_| EmbeddingError::BadNumber {
            line: i + 1,
            value: cols[2].to_string(),
        })?;
        if !(0.0..=1.0).contains(&p) {
            return Err(EmbeddingError::BadProbability { line: i + 1, p });
        }
        table.insert(cols[0], cols[1], p);
    }
    table.sort();
    Ok(table)
}

/// Cross-lingual word-embedding composition method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComposeMethod {
    /// Vectors already mapped into the shared space; load rows directly.
    Premapped,
    /// Mean of the translations' vectors. `weighted` uses translation
    /// probabilities (renormalized over translations present in the target
    /// table); otherwise uniform.
    Average { weighted: bool },
    /// Vector of the highest-probability translation present in the table.
    Argmax,
}

/// Result of a composition: the table over the source vocabulary plus the
/// fraction of source words that received a non-UNK vector.
#[derive(Debug)]
pub struct ComposedTable {
    pub table: EmbeddingTable,
    pub coverage: f64,
}

/// Compose an embedding table for `source_vocab` in the target table's
/// space. Source words with no usable translation (or, for `Premapped`, no
/// row in the supplied file) fall back to the UNK row, which is zero.
pub fn compose_crosslingual(
    method: ComposeMethod,
    source_vocab: &Vocab,
    target_table: &EmbeddingTable,
    translations: Option<&TranslationTable>,
) -> Result<ComposedTable, EmbeddingError> {
    let dim = target_table.dim;
    let mut out = EmbeddingTable::zeros(source_vocab.clone(), dim);
    let mut covered = 0usize;
    for (i, word) in source_vocab.words().iter().enumerate() {
        let row = match method {
            ComposeMethod::Premapped => {
                if target_table.vocab.contains(word) {
                    Some(target_table.vector(word).to_vec())
                } else {
                    None
                }
            }
            ComposeMethod::Argmax => {
                let trans = translations
                    .ok_or(EmbeddingError::MissingTranslations("argmax"))?
                    .translations(word);
                trans
                    .iter()
                    .find(|(t, _)| target_table.vocab.contains(t))
                    .map(|(t, _)| target_table.vector(t).to_vec())
            }
            ComposeMethod::Average { weighted } => {
                let trans = translations
                    .ok_or(EmbeddingError::MissingTranslations("average"))?
                    .translations(word);
                let usable: Vec<&(String, f64)> = trans
                    .iter()
                    .filter(|(t, _)| target_table.vocab.contains(t))
                    .collect();
                if usable.is_empty() {
                    None
                } else {
                    let total: f64 = if weighted {
                        usable.iter().map(|(_, p)| p).sum()
                    } else {
                        usable.len() as f64
                    };
                    let mut acc = vec![0.0; dim];
                    for (t, p) in usable {
                        let w = if weighted { *p / total } else { 1.0 / total };
                        for (a, v) in acc.iter_mut().zip(target_table.vector(t)) {
                            *a += w * v;
                        }
                    }
                    Some(acc)
                }
            }
        };
        if let Some(values) = row {
            covered += 1;
            out.matrix[i * dim..(i + 1) * dim].copy_from_slice(&values);
        }
    }
    let coverage = if source_vocab.is_empty() {
        0.0
    } else {
        covered as f64 / source_vocab.len() as f64
    };
    log::info!(
        "cross-lingual composition ({method:?}): {covered}/{} source words covered ({:.1}%)",
        source_vocab.len(),
        coverage * 100.0
    );
    Ok(ComposedTable {
        table: out,
        coverage,
    })
}

/// Which input features a model sees; used by the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub word: bool,
    pub pos: bool,
}

impl Default for FeatureMask {
    fn default() -> Self {
        FeatureMask {
            word: true,
            pos: true,
        }
    }
}

impl FeatureMask {
    pub const ALL: FeatureMask = FeatureMask {
        word: true,
        pos: true,
    };
    pub const NO_WORD: FeatureMask = FeatureMask {
        word: false,
        pos: true,
    };
    pub const NO_POS: FeatureMask = FeatureMask {
        word: true,
        pos: false,
    };
}

/// The embedding feature tables of one model, registered as parameters.
/// The cue table has exactly two rows (not-cue / cue).
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub word_vocab: Vocab,
    pub pos_vocab: Vocab,
    pub label_vocab: Vocab,
    pub word: ParamId,
    pub cue: ParamId,
    pub pos: ParamId,
    pub label: ParamId,
    pub d_word: usize,
    pub d_cue: usize,
    pub d_pos: usize,
    pub d_label: usize,
    pub mask: FeatureMask,
}

impl FeatureSet {
    /// Register the feature tables under `prefix` in the store. If
    /// `word_table` is given its rows (and trainable flag) are used for the
    /// word feature; otherwise the word table is random and trainable.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        prefix: &str,
        store: &mut ParamStore,
        word_vocab: Vocab,
        pos_vocab: Vocab,
        label_vocab: Vocab,
        dims: (usize, usize, usize, usize),
        mask: FeatureMask,
        word_table: Option<&EmbeddingTable>,
        rng: &mut impl Rng,
    ) -> Result<FeatureSet, AutodiffError> {
        let (d_word, d_cue, d_pos, d_label) = dims;
        let rand_matrix = |rows: usize, cols: usize, rng: &mut dyn rand::RngCore| {
            Tensor::matrix(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-0.1..0.1)).collect(),
            )
            .expect("matrix shape")
        };
        let (word_tensor, word_trainable) = match word_table {
            Some(t) => {
                assert_eq!(t.vocab.rows(), word_vocab.rows(), "word table/vocab mismatch");
                (
                    Tensor::matrix(t.vocab.rows(), t.dim, t.matrix.clone()).expect("table shape"),
                    t.trainable,
                )
            }
            None => (rand_matrix(word_vocab.rows(), d_word, rng), true),
        };
        let word = store.add(
            &format!("{prefix}.word"),
            word_tensor.with_requires_grad(word_trainable),
        )?;
        let cue = store.add(
            &format!("{prefix}.cue"),
            rand_matrix(2, d_cue, rng).with_requires_grad(true),
        )?;
        let pos = store.add(
            &format!("{prefix}.pos"),
            rand_matrix(pos_vocab.rows(), d_pos, rng).with_requires_grad(true),
        )?;
        let label = store.add(
            &format!("{prefix}.label"),
            rand_matrix(label_vocab.rows(), d_label, rng).with_requires_grad(true),
        )?;
        let d_word = match word_table {
            Some(t) => t.dim,
            None => d_word,
        };
        Ok(FeatureSet {
            word_vocab,
            pos_vocab,
            label_vocab,
            word,
            cue,
            pos,
            label,
            d_word,
            d_cue,
            d_pos,
            d_label,
            mask,
        })
    }

    /// Swap in a different word table (e.g. one composed for a new input
    /// language). Dimensions must match; the vocabulary and the stored
    /// parameter tensor are replaced together.
    pub fn replace_word_table(
        &mut self,
        store: &mut ParamStore,
        table: &EmbeddingTable,
    ) -> Result<(), EmbeddingError> {
        if table.dim != self.d_word {
            return Err(EmbeddingError::DimMismatch {
                table: table.dim,
                expected: self.d_word,
            });
        }
        self.word_vocab = table.vocab.clone();
        let tensor = Tensor::matrix(table.vocab.rows(), table.dim, table.matrix.clone())
            .expect("table dimensions are consistent")
            .with_requires_grad(table.trainable);
        *store.get_mut(self.word) = tensor;
        Ok(())
    }

    /// Input width of the concatenation produced by [`FeatureSet::encode_token`].
    pub fn input_dim(&self, with_label: bool) -> usize {
        let mut d = self.d_cue;
        if self.mask.word {
            d += self.d_word;
        }
        if self.mask.pos {
            d += self.d_pos;
        }
        if with_label {
            d += self.d_label;
        }
        d
    }

    /// Encode one token as the concatenation word ‖ cue ‖ pos (‖ deplabel),
    /// with masked-off features omitted entirely.
    pub fn encode_token(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        token: &Token,
        is_cue: bool,
        with_label: bool,
    ) -> Result<Var, AutodiffError> {
        let mut parts = Vec::with_capacity(4);
        if self.mask.word {
            let row = self.word_vocab.row_of(&token.form);
            parts.push(tape.lookup_row(store, self.word, row)?);
        }
        parts.push(tape.lookup_row(store, self.cue, usize::from(is_cue))?);
        if self.mask.pos {
            let row = self.pos_vocab.row_of(&token.upos);
            parts.push(tape.lookup_row(store, self.pos, row)?);
        }
        if with_label {
            let row = self.label_vocab.row_of(&token.deprel);
            parts.push(tape.lookup_row(store, self.label, row)?);
        }
        tape.concat(&parts)
    }
}
