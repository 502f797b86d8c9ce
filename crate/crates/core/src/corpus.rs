//! Parsing, validation and normalization of negation-annotated dependency
//! corpora in the NSF format, plus expansion into per-cue instances.
//!
//! NSF is UTF-8 text. Sentences are blank-line-separated blocks; lines
//! starting with `#` carry `key = value` metadata (at minimum
//! `# lang = <tag>`). Token lines are tab-separated:
//!
//! ```text
//! ID  FORM  LEMMA  UPOS  HEAD  DEPREL  [CUE  SCOPE]...
//! ```
//!
//! with one `CUE`/`SCOPE` column pair (`C`/`_`, `S`/`_`) per negation
//! instance. All lines of a block have the same column count; a sentence
//! with no negation has exactly six columns.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// UPOS values treated as punctuation (covers the UD and Petrov tag sets).
const PUNCT_TAGS: [&str; 2] = ["PUNCT", "."];

/// One token of a parsed sentence. `id` is the 1-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    /// 0 for the root, otherwise the id of the head token.
    pub head: usize,
    pub deprel: String,
    pub is_punct: bool,
}

impl Token {
    pub fn new(
        id: usize,
        form: impl Into<String>,
        lemma: impl Into<String>,
        upos: impl Into<String>,
        head: usize,
        deprel: impl Into<String>,
    ) -> Self {
        let upos = upos.into();
        let is_punct = PUNCT_TAGS.contains(&upos.as_str());
        Token {
            id,
            form: form.into(),
            lemma: lemma.into(),
            upos,
            head,
            deprel: deprel.into(),
            is_punct,
        }
    }
}

/// One negation annotation over a sentence: a non-empty cue token set and a
/// (possibly empty, possibly discontinuous) gold scope token set. The two
/// sets are disjoint; any overlap is stripped from the scope at load time.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Annotation {
    pub cues: BTreeSet<usize>,
    pub scope: BTreeSet<usize>,
}

/// A dependency-parsed sentence with its negation annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub lang: String,
    pub source_id: String,
    pub annotations: Vec<Annotation>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &Token {
        &self.tokens[id - 1]
    }
}

/// A parsed corpus: an ordered list of validated sentences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

/// Reference to one negation instance: a (sentence, annotation) pair.
/// Instances are ordered by document order, then cue order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceRef {
    pub sentence: usize,
    pub annotation: usize,
}

impl Corpus {
    pub fn instance(&self, r: InstanceRef) -> (&Sentence, &Annotation) {
        let s = &self.sentences[r.sentence];
        (s, &s.annotations[r.annotation])
    }

    pub fn instance_count(&self) -> usize {
        self.sentences.iter().map(|s| s.annotations.len()).sum()
    }
}

/// Expand a corpus into one instance per annotated cue. A sentence with k
/// cues yields k instances sharing the sentence.
pub fn to_instances(corpus: &Corpus) -> Vec<InstanceRef> {
    let mut out = Vec::with_capacity(corpus.instance_count());
    for (si, s) in corpus.sentences.iter().enumerate() {
        for ai in 0..s.annotations.len() {
            out.push(InstanceRef {
                sentence: si,
                annotation: ai,
            });
        }
    }
    out
}

/// Structured NSF parse error, carrying the 1-based line number.
#[derive(Debug, Error)]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.kind)
    }
}

#[derive(Debug, Error)]
pub enum ParseErrorKind {
    #[error("expected at least 6 tab-separated columns, got {0}")]
    TooFewColumns(usize),
    #[error("negation columns must come in CUE/SCOPE pairs, got {0} extra columns")]
    OddNegationColumns(usize),
    #[error("ragged block: this line has {got} columns, the block started with {expected}")]
    RaggedColumns { expected: usize, got: usize },
    #[error("token id '{0}' is not a positive integer")]
    BadId(String),
    #[error("token id {got} out of order, expected {expected}")]
    IdOutOfOrder { expected: usize, got: usize },
    #[error("head '{0}' is not an integer")]
    BadHead(String),
    #[error("head {head} out of range for a {len}-token sentence")]
    HeadOutOfRange { head: usize, len: usize },
    #[error("token {0} is its own head")]
    SelfHead(usize),
    #[error("sentence has no root (no token with head 0)")]
    NoRoot,
    #[error("multiple roots: tokens {0:?} all have head 0")]
    MultipleRoots(Vec<usize>),
    #[error("heads form a cycle through tokens {0:?}")]
    Cycle(Vec<usize>),
    #[error("cue column must be 'C' or '_', got '{0}'")]
    BadCueMarker(String),
    #[error("scope column must be 'S' or '_', got '{0}'")]
    BadScopeMarker(String),
    #[error("instance {0} has an empty cue set")]
    EmptyCue(usize),
}

fn err(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

/// Parse an NSF file.
pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Corpus, crate::Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_corpus_str(&text)?)
}

/// Parse NSF text. Sentences are validated; cue/scope overlaps are stripped
/// from the scope with a warning.
pub fn parse_corpus_str(text: &str) -> Result<Corpus, ParseError> {
    let mut sentences = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let mut auto_id = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                sentences.push(parse_block(&block, &mut auto_id)?);
                block.clear();
            }
        } else {
            block.push((i + 1, line));
        }
    }
    if !block.is_empty() {
        sentences.push(parse_block(&block, &mut auto_id)?);
    }
    let corpus = Corpus { sentences };
    log::debug!(
        "parsed {} sentences, {} negation instances",
        corpus.sentences.len(),
        corpus.instance_count()
    );
    Ok(corpus)
}

fn parse_block(lines: &[(usize, &str)], auto_id: &mut usize) -> Result<Sentence, ParseError> {
    let mut lang = String::new();
    let mut source_id = String::new();
    let mut token_lines: Vec<(usize, Vec<&str>)> = Vec::new();
    let mut expected_cols: Option<usize> = None;

    for &(lineno, line) in lines {
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                match key.trim() {
                    "lang" => lang = value.trim().to_string(),
                    "sent_id" => source_id = value.trim().to_string(),
                    _ => {}
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 6 {
            return Err(err(lineno, ParseErrorKind::TooFewColumns(cols.len())));
        }
        if (cols.len() - 6) % 2 != 0 {
            return Err(err(
                lineno,
                ParseErrorKind::OddNegationColumns(cols.len() - 6),
            ));
        }
        match expected_cols {
            None => expected_cols = Some(cols.len()),
            Some(expected) if expected != cols.len() => {
                return Err(err(
                    lineno,
                    ParseErrorKind::RaggedColumns {
                        expected,
                        got: cols.len(),
                    },
                ));
            }
            _ => {}
        }
        token_lines.push((lineno, cols));
    }

    *auto_id += 1;
    if source_id.is_empty() {
        source_id = format!("s{auto_id}");
    }

    let n_instances = (expected_cols.unwrap_or(6) - 6) / 2;
    let mut tokens = Vec::with_capacity(token_lines.len());
    let mut annotations = vec![Annotation::default(); n_instances];
    let first_line = token_lines.first().map(|(l, _)| *l).unwrap_or(0);

    for (pos, (lineno, cols)) in token_lines.iter().enumerate() {
        let id: usize = cols[0]
            .parse()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| err(*lineno, ParseErrorKind::BadId(cols[0].to_string())))?;
        if id != pos + 1 {
            return Err(err(
                *lineno,
                ParseErrorKind::IdOutOfOrder {
                    expected: pos + 1,
                    got: id,
                },
            ));
        }
        let head: usize = cols[4]
            .parse()
            .map_err(|_| err(*lineno, ParseErrorKind::BadHead(cols[4].to_string())))?;
        let token = Token::new(id, cols[1], cols[2], cols[3], head, cols[5]);
        for inst in 0..n_instances {
            match cols[6 + 2 * inst] {
                "C" => {
                    annotations[inst].cues.insert(id);
                }
                "_" => {}
                other => {
                    return Err(err(*lineno, ParseErrorKind::BadCueMarker(other.to_string())))
                }
            }
            match cols[7 + 2 * inst] {
                "S" => {
                    annotations[inst].scope.insert(id);
                }
                "_" => {}
                other => {
                    return Err(err(
                        *lineno,
                        ParseErrorKind::BadScopeMarker(other.to_string()),
                    ))
                }
            }
        }
        tokens.push(token);
    }

    validate_heads(&tokens, first_line)?;

    for (i, ann) in annotations.iter_mut().enumerate() {
        if ann.cues.is_empty() {
            return Err(err(first_line, ParseErrorKind::EmptyCue(i)));
        }
        let overlap: Vec<usize> = ann.cues.intersection(&ann.scope).copied().collect();
        if !overlap.is_empty() {
            log::warn!(
                "sentence {source_id}: instance {i} has cue tokens {overlap:?} inside the \
                 annotated scope; stripping them from the scope"
            );
            for id in overlap {
                ann.scope.remove(&id);
            }
        }
    }

    Ok(Sentence {
        tokens,
        lang,
        source_id,
        annotations,
    })
}

fn validate_heads(tokens: &[Token], first_line: usize) -> Result<(), ParseError> {
    let n = tokens.len();
    let mut roots = Vec::new();
    for t in tokens {
        if t.head > n {
            return Err(err(
                first_line + t.id - 1,
                ParseErrorKind::HeadOutOfRange { head: t.head, len: n },
            ));
        }
        if t.head == t.id {
            return Err(err(first_line + t.id - 1, ParseErrorKind::SelfHead(t.id)));
        }
        if t.head == 0 {
            roots.push(t.id);
        }
    }
    match roots.len() {
        0 => return Err(err(first_line, ParseErrorKind::NoRoot)),
        1 => {}
        _ => return Err(err(first_line, ParseErrorKind::MultipleRoots(roots))),
    }
    // Connectivity: every token must reach the root by following heads.
    // 0 = unknown, 1 = on current path, 2 = reaches root.
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        if state[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = tokens[v - 1].head;
        }
        if state[v] == 1 {
            // walked back into the current path: extract the cycle
            let cycle_start = path.iter().position(|&p| p == v).unwrap();
            let cycle: Vec<usize> = path[cycle_start..].to_vec();
            return Err(err(first_line, ParseErrorKind::Cycle(cycle)));
        }
        for p in path {
            state[p] = 2;
        }
    }
    Ok(())
}

/// Serialize a corpus to canonical NSF. Parsing the output and serializing
/// again is byte-identical.
pub fn serialize_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("# lang = {}\n", s.lang));
        out.push_str(&format!("# sent_id = {}\n", s.source_id));
        for t in &s.tokens {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}",
                t.id, t.form, t.lemma, t.upos, t.head, t.deprel
            ));
            for ann in &s.annotations {
                out.push('\t');
                out.push(if ann.cues.contains(&t.id) { 'C' } else { '_' });
                out.push('\t');
                out.push(if ann.scope.contains(&t.id) { 'S' } else { '_' });
            }
            out.push('\n');
        }
    }
    out
}

/// Truncate language-specific dependency-label subtypes at the first ':'
/// (e.g. `conj:and` becomes `conj`).
pub fn strip_language_specific_labels(sentence: &Sentence) -> Sentence {
    let mut out = sentence.clone();
    for t in &mut out.tokens {
        if let Some(pos) = t.deprel.find(':') {
            t.deprel.truncate(pos);
        }
    }
    out
}

/// Apply [`strip_language_specific_labels`] to every sentence.
pub fn strip_labels_corpus(corpus: &Corpus) -> Corpus {
    Corpus {
        sentences: corpus
            .sentences
            .iter()
            .map(strip_language_specific_labels)
            .collect(),
    }
}

/// Tree-structure error from [`build_tree`].
#[derive(Debug, Error)]
pub enum TreeError {
    #[error("sentence has no root token")]
    NoRoot,
    #[error("multiple roots: tokens {0:?}")]
    MultipleRoots(Vec<usize>),
}

/// A dependency tree over a validated sentence: parent map, ordered
/// children lists and per-node incoming-edge labels.
#[derive(Debug, Clone)]
pub struct DependencyTree {
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    label: Vec<String>,
}

impl DependencyTree {
    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parent[id - 1]
    }

    /// Children of a node, ordered by token id.
    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id - 1]
    }

    /// Label of the node's incoming edge; for the root this is its deprel
    /// (conventionally "root").
    pub fn label(&self, id: usize) -> &str {
        &self.label[id - 1]
    }

    /// Nodes in bottom-up order: every node appears after all its children.
    pub fn bottom_up_order(&self) -> Vec<usize> {
        let mut order = self.top_down_order();
        order.reverse();
        order
    }

    /// Nodes in top-down order: every node appears after its parent.
    pub fn top_down_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            order.push(v);
            for &c in self.children(v) {
                stack.push(c);
            }
        }
        order
    }

    /// Path from a node up to the root, inclusive.
    pub fn path_to_root(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut v = id;
        while let Some(p) = self.parent(v) {
            path.push(p);
            v = p;
        }
        path
    }

    /// Least common ancestor of a non-empty set of nodes.
    pub fn lca(&self, nodes: &BTreeSet<usize>) -> usize {
        let mut iter = nodes.iter();
        let first = *iter.next().expect("lca of an empty set");
        let mut candidates: Vec<usize> = self.path_to_root(first);
        for &v in iter {
            let path: BTreeSet<usize> = self.path_to_root(v).into_iter().collect();
            candidates.retain(|c| path.contains(c));
        }
        candidates[0]
    }

    /// Shuffle every node's stored children list in place. Child-sum models
    /// must be invariant to this; order-invariance tests rely on it.
    pub fn shuffle_children(&mut self, rng: &mut impl rand::Rng) {
        use rand::seq::SliceRandom;
        for kids in &mut self.children {
            kids.shuffle(rng);
        }
    }

    /// Number of edges between two nodes.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        let pa = self.path_to_root(a);
        let pb: Vec<usize> = self.path_to_root(b);
        let in_b: BTreeSet<usize> = pb.iter().copied().collect();
        let (mut da, mut meet) = (0, 0);
        for (i, &v) in pa.iter().enumerate() {
            if in_b.contains(&v) {
                da = i;
                meet = v;
                break;
            }
        }
        let db = pb.iter().position(|&v| v == meet).unwrap();
        da + db
    }
}

/// Build the dependency tree of a validated sentence.
pub fn build_tree(sentence: &Sentence) -> Result<DependencyTree, TreeError> {
    let n = sentence.tokens.len();
    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut label = vec![String::new(); n];
    let mut roots = Vec::new();
    for t in &sentence.tokens {
        label[t.id - 1] = t.deprel.clone();
        if t.head == 0 {
            roots.push(t.id);
        } else {
            parent[t.id - 1] = Some(t.head);
            children[t.head - 1].push(t.id);
        }
    }
    let root = match roots.as_slice() {
        [] => return Err(TreeError::NoRoot),
        [r] => *r,
        many => return Err(TreeError::MultipleRoots(many.to_vec())),
    };
    // token iteration order already yields children sorted by id
    Ok(DependencyTree {
        root,
        parent,
        children,
        label,
    })
}
