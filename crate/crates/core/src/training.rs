//! Per-instance Adam training with early stopping on a dev metric, plus
//! the feature-ablation grid.
//!
//! One instance is one update step: graphs are rebuilt per tree, there is
//! no minibatching. Instance order is reshuffled every epoch from the run
//! seed, so a fixed seed fixes the trained parameters exactly.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape};
use crate::corpus::{build_tree, to_instances, Corpus, DependencyTree};
use crate::embeddings::{EmbeddingTable, FeatureMask};
use crate::ensemble::confidence_vote;
use crate::evaluation::{evaluate_instances, EvalReport};
use crate::models::{
    build_model, build_vocabs, instance_loss, predict_corpus, predict_corpus_probs, Checkpoint,
    Model, ModelConfig, ModelKind, ScopeModel,
};
use crate::Error;

/// Metric used to pick the best epoch on the dev split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DevMetric {
    F1,
    Pcs,
}

impl std::str::FromStr for DevMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f1" => Ok(DevMetric::F1),
            "pcs" => Ok(DevMetric::Pcs),
            other => Err(format!("unknown dev metric '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dev_metric: DevMetric,
    pub seed: u64,
    pub shuffle: bool,
    /// Global-norm gradient clipping threshold.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 30,
            patience: 5,
            dev_metric: DevMetric::F1,
            seed: 1,
            shuffle: true,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.learning_rate <= 0.0 {
            return Err("learning rate must be positive".into());
        }
        if self.patience == 0 {
            return Err("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return Err("max_epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// Adam with bias correction, applied densely to every trainable parameter.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: &TrainConfig) -> Adam {
        let (m, v) = store
            .iter()
            .map(|(_, t)| (vec![0.0; t.numel()], vec![0.0; t.numel()]))
            .unzip();
        Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            m,
            v,
        }
    }

    /// Apply one update from the store's accumulated gradients (clipped to
    /// `clip` global norm first), then clear them.
    pub fn step(&mut self, store: &mut ParamStore, clip: Option<f64>) {
        self.step += 1;
        let scale = match clip {
            Some(max_norm) => {
                let mut sq = 0.0;
                for id in store.trainable_ids() {
                    if let Some(g) = store.get(id).grad() {
                        sq += g.iter().map(|x| x * x).sum::<f64>();
                    }
                }
                let norm = sq.sqrt();
                if norm > max_norm {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for id in store.trainable_ids() {
            let idx = id.index();
            let grad: Vec<f64> = match store.get(id).grad() {
                Some(g) => g.iter().map(|x| x * scale).collect(),
                None => vec![0.0; store.get(id).numel()],
            };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let values = store.get_mut(id).values_mut();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        store.zero_grads();
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_f1: f64,
    pub dev_pcs: f64,
}

impl EpochLog {
    /// The line-oriented training-log record.
    pub fn line(&self) -> String {
        format!(
            "epoch {} loss {:.6} dev_f1 {:.2} dev_pcs {:.2}",
            self.epoch, self.loss, self.dev_f1, self.dev_pcs
        )
    }
}

#[derive(Debug)]
pub struct TrainResult {
    /// Parameters of the best dev epoch.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

pub struct TrainJob<'a> {
    pub kind: ModelKind,
    pub train: &'a Corpus,
    pub dev: &'a Corpus,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// Pretrained word vectors (frozen when `trainable` is false).
    pub word_table: Option<&'a EmbeddingTable>,
    /// Recorded in the checkpoint so prediction replays the normalization.
    pub strip_labels: bool,
}

/// Mean per-token cross-entropy of a model over a corpus, without updates.
pub fn dataset_loss(model: &Model, store: &ParamStore, corpus: &Corpus) -> Result<f64, Error> {
    let mut total = 0.0;
    let mut count = 0usize;
    for sentence in &corpus.sentences {
        let tree = build_tree(sentence)?;
        for ann in &sentence.annotations {
            let mut tape = Tape::new(model.config().precision);
            let probs = model.forward(&mut tape, store, sentence, &tree, &ann.cues)?;
            if let Some(loss) = instance_loss(&mut tape, &probs, ann)? {
                let tokens = sentence.len() - ann.cues.len();
                total += tape.value(loss)[0] * tokens as f64;
                count += tokens;
            }
        }
    }
    Ok(if count > 0 { total / count as f64 } else { 0.0 })
}

/// Train one model, keeping the checkpoint of the best dev epoch. Stops
/// after `patience` epochs without dev improvement or at `max_epochs`.
pub fn train(job: TrainJob) -> Result<TrainResult, Error> {
    job.model_config
        .validate()
        .map_err(|m| Error::Config(format!("invalid model config: {m}")))?;
    job.train_config
        .validate()
        .map_err(|m| Error::Config(format!("invalid training config: {m}")))?;
    let instances = to_instances(job.train);
    if instances.is_empty() {
        return Err(Error::Config(
            "training split contains no negation instances".into(),
        ));
    }

    let vocabs = build_vocabs(job.train);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(job.model_config.seed);
    let model = build_model(
        job.kind,
        &job.model_config,
        &vocabs,
        job.word_table,
        &mut store,
        &mut rng,
    )?;

    let trees: Vec<DependencyTree> = job
        .train
        .sentences
        .iter()
        .map(build_tree)
        .collect::<Result<_, _>>()?;
    let dev_instances = to_instances(job.dev);
    if dev_instances.is_empty() {
        log::warn!("dev split has no instances; the final epoch will be kept");
    }

    let mut adam = Adam::new(&store, &job.train_config);
    let mut run_rng = ChaCha8Rng::seed_from_u64(job.train_config.seed);
    let mut order: Vec<usize> = (0..instances.len()).collect();

    let mut log_rows = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=job.train_config.max_epochs {
        if job.train_config.shuffle {
            order.shuffle(&mut run_rng);
        }
        let mut loss_sum = 0.0;
        let mut token_count = 0usize;
        for &idx in &order {
            let r = instances[idx];
            let (sentence, ann) = job.train.instance(r);
            let tree = &trees[r.sentence];
            let mut tape =
                Tape::for_training(job.model_config.precision, run_rng.random::<u64>());
            let probs = model.forward(&mut tape, &store, sentence, tree, &ann.cues)?;
            let Some(loss) = instance_loss(&mut tape, &probs, ann)? else {
                continue;
            };
            let tokens = sentence.len() - ann.cues.len();
            loss_sum += tape.value(loss)[0] * tokens as f64;
            token_count += tokens;
            tape.backward(loss)?;
            tape.export_grads(&mut store);
            adam.step(&mut store, job.train_config.grad_clip);
        }
        let loss = if token_count > 0 {
            loss_sum / token_count as f64
        } else {
            0.0
        };

        let (dev_f1, dev_pcs) = if dev_instances.is_empty() {
            (0.0, 0.0)
        } else {
            let predictions = predict_corpus(&model, &store, job.dev)?;
            let report = evaluate_instances(job.dev, &dev_instances, &predictions, false)?;
            (report.f1, report.pcs)
        };
        let row = EpochLog {
            epoch,
            loss,
            dev_f1,
            dev_pcs,
        };
        log::info!("{}", row.line());
        log_rows.push(row);

        let metric = match job.train_config.dev_metric {
            DevMetric::F1 => dev_f1,
            DevMetric::Pcs => dev_pcs,
        };
        let improved = match &best {
            Some((best_metric, _, _)) => metric > *best_metric,
            None => true,
        };
        if improved || dev_instances.is_empty() {
            let ckpt = Checkpoint::capture(
                model.kind(),
                &job.model_config,
                job.strip_labels,
                &vocabs,
                &store,
            );
            best = Some((metric, epoch, ckpt));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= job.train_config.patience {
                log::info!("early stop at epoch {epoch}: no dev improvement for {since_best} epochs");
                break;
            }
        }
    }

    let (best_metric, best_epoch, checkpoint) = best.expect("at least one epoch ran");
    Ok(TrainResult {
        checkpoint,
        log: log_rows,
        best_epoch,
        best_metric,
    })
}

// ── Feature ablation ─────────────────────────────────────────────────

pub const ABLATION_MASKS: [(&str, FeatureMask); 3] = [
    ("all", FeatureMask::ALL),
    ("-w", FeatureMask::NO_WORD),
    ("-p", FeatureMask::NO_POS),
];

/// One voting-ensemble cell of the ablation grid.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub bilstm_mask: &'static str,
    pub dlstm_mask: &'static str,
    pub report: EvalReport,
}

/// 3x3 grid: rows are BiLSTM feature masks, columns are D-LSTM masks,
/// each cell the confidence-voting ensemble of the two ablated models.
#[derive(Debug, Clone)]
pub struct AblationGrid {
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    pub fn cell(&self, bilstm_mask: &str, dlstm_mask: &str) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.bilstm_mask == bilstm_mask && c.dlstm_mask == dlstm_mask)
    }

    /// Aligned plain-text table in the row/column arrangement of the
    /// ablation experiment: rows = BiLSTM mask, columns = D-LSTM mask,
    /// cells = P/R/F1.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:24}D-LSTM\n", ""));
        out.push_str(&format!("{:16}{:>10}{:>10}{:>10}\n", "BiLSTM", "all", "-w", "-p"));
        for (row_name, _) in ABLATION_MASKS {
            for (metric_idx, metric) in ["P", "R", "F1"].iter().enumerate() {
                let label = if metric_idx == 0 { row_name } else { "" };
                out.push_str(&format!("{label:>8}{metric:>6}  "));
                for (col_name, _) in ABLATION_MASKS {
                    let cell = self.cell(row_name, col_name).expect("complete grid");
                    let value = match metric_idx {
                        0 => cell.report.precision,
                        1 => cell.report.recall,
                        _ => cell.report.f1,
                    };
                    out.push_str(&format!("{value:>10.2}"));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Machine-readable TSV: bilstm_mask, dlstm_mask, P, R, F1, PCS.
    pub fn tsv(&self) -> String {
        let mut out = String::from("bilstm\tdlstm\tprecision\trecall\tf1\tpcs\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
                c.bilstm_mask, c.dlstm_mask, c.report.precision, c.report.recall, c.report.f1, c.report.pcs
            ));
        }
        out
    }
}

/// Train three BiLSTM and three D-LSTM variants (feature masks all / -w /
/// -p) and evaluate all nine voting ensembles on the test split.
pub fn ablate_grid(
    train_corpus: &Corpus,
    dev: &Corpus,
    test: &Corpus,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<AblationGrid, Error> {
    let test_instances = to_instances(test);
    let mut member_probs: Vec<Vec<Vec<Vec<(f64, f64)>>>> = Vec::new(); // [kind][mask][instance]
    for kind in [ModelKind::Bilstm, ModelKind::Dlstm] {
        let mut per_mask = Vec::new();
        for (name, mask) in ABLATION_MASKS {
            log::info!("ablation: training {} ({name})", kind.as_str());
            let mut config = model_config.clone();
            config.mask = mask;
            let result = train(TrainJob {
                kind,
                train: train_corpus,
                dev,
                model_config: config,
                train_config: train_config.clone(),
                word_table: None,
                strip_labels: false,
            })?;
            let (model, store) = result.checkpoint.restore()?;
            per_mask.push(predict_corpus_probs(&model, &store, test)?);
        }
        member_probs.push(per_mask);
    }

    let mut cells = Vec::with_capacity(9);
    for (bi_idx, (bi_name, _)) in ABLATION_MASKS.iter().enumerate() {
        for (dl_idx, (dl_name, _)) in ABLATION_MASKS.iter().enumerate() {
            let mut predictions: Vec<BTreeSet<usize>> = Vec::with_capacity(test_instances.len());
            for (pa, pb) in member_probs[0][bi_idx].iter().zip(&member_probs[1][dl_idx]) {
                let vote = confidence_vote(pa, pb)?;
                predictions.push(
                    vote.labels
                        .iter()
                        .enumerate()
                        .filter(|(_, &l)| l)
                        .map(|(i, _)| i + 1)
                        .collect(),
                );
            }
            let report = evaluate_instances(test, &test_instances, &predictions, false)?;
            cells.push(AblationCell {
                bilstm_mask: bi_name,
                dlstm_mask: dl_name,
                report,
            });
        }
    }
    Ok(AblationGrid { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Precision;
    use crate::corpus::parse_corpus_str;

    fn tiny_corpus() -> Corpus {
        parse_corpus_str(
            "# lang = en\n\
             1\tI\tI\tPRON\t3\tnsubj\t_\tS\n\
             2\tnot\tnot\tPART\t3\tneg\tC\t_\n\
             3\tgo\tgo\tVERB\t0\troot\t_\tS\n\
             \n\
             # lang = en\n\
             1\the\the\tPRON\t2\tnsubj\t_\t_\n\
             2\teats\teat\tVERB\t0\troot\t_\t_\n\
             3\tnothing\tnothing\tPRON\t2\tdobj\tC\t_\n",
        )
        .unwrap()
    }

    fn tiny_configs() -> (ModelConfig, TrainConfig) {
        (
            ModelConfig {
                d_word: 3,
                d_cue: 2,
                d_pos: 2,
                d_label: 2,
                d_hidden: 4,
                gcn_layers: 2,
                precision: Precision::Double,
                output_dropout: 0.0,
                neighbor_dropout: 0.0,
                ..ModelConfig::default()
            },
            TrainConfig {
                max_epochs: 3,
                patience: 2,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn initial_loss_at_zero_init_is_ln2_per_token() {
        let corpus = tiny_corpus();
        let vocabs = build_vocabs(&corpus);
        let (config, _) = tiny_configs();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model =
            build_model(ModelKind::Bilstm, &config, &vocabs, None, &mut store, &mut rng).unwrap();
        store.set_all_zero();
        let loss = dataset_loss(&model, &store, &corpus).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-3, "loss {loss}");
    }

    #[test]
    fn training_is_deterministic_and_logs_every_epoch() {
        let corpus = tiny_corpus();
        let (model_config, train_config) = tiny_configs();
        let run = || {
            train(TrainJob {
                kind: ModelKind::Dlstm,
                train: &corpus,
                dev: &corpus,
                model_config: model_config.clone(),
                train_config: train_config.clone(),
                word_table: None,
                strip_labels: false,
            })
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.log.len(), b.log.len());
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.line(), y.line());
        }
        let pa = serde_json::to_string(&a.checkpoint.params.iter().map(|p| &p.values).collect::<Vec<_>>()).unwrap();
        let pb = serde_json::to_string(&b.checkpoint.params.iter().map(|p| &p.values).collect::<Vec<_>>()).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn best_checkpoint_never_below_best_observed() {
        let corpus = tiny_corpus();
        let (model_config, mut train_config) = tiny_configs();
        train_config.max_epochs = 5;
        let result = train(TrainJob {
            kind: ModelKind::Bilstm,
            train: &corpus,
            dev: &corpus,
            model_config,
            train_config,
            word_table: None,
            strip_labels: false,
        })
        .unwrap();
        let best_seen = result
            .log
            .iter()
            .map(|r| r.dev_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(result.best_metric, best_seen);
        // the kept checkpoint reproduces the best metric
        let (model, store) = result.checkpoint.restore().unwrap();
        let instances = to_instances(&corpus);
        let predictions = predict_corpus(&model, &store, &corpus).unwrap();
        let report = evaluate_instances(&corpus, &instances, &predictions, false).unwrap();
        assert!((report.f1 - result.best_metric).abs() < 1e-9);
    }

    #[test]
    fn empty_training_split_is_rejected() {
        let empty = parse_corpus_str("# lang = en\n1\thi\thi\tINTJ\t0\troot\n").unwrap();
        let corpus = tiny_corpus();
        let (model_config, train_config) = tiny_configs();
        let err = train(TrainJob {
            kind: ModelKind::Bilstm,
            train: &empty,
            dev: &corpus,
            model_config,
            train_config,
            word_table: None,
            strip_labels: false,
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn adam_moves_parameters_toward_lower_loss() {
        let corpus = tiny_corpus();
        let (model_config, mut train_config) = tiny_configs();
        train_config.max_epochs = 8;
        train_config.patience = 8;
        let result = train(TrainJob {
            kind: ModelKind::Bilstm,
            train: &corpus,
            dev: &corpus,
            model_config,
            train_config,
            word_table: None,
            strip_labels: false,
        })
        .unwrap();
        let first = result.log.first().unwrap().loss;
        let last = result.log.last().unwrap().loss;
        assert!(last < first, "loss did not decrease: {first} → {last}");
    }

    #[test]
    fn ablation_grid_is_complete_and_masks_differ() {
        let corpus = tiny_corpus();
        let (model_config, mut train_config) = tiny_configs();
        train_config.max_epochs = 1;
        let grid = ablate_grid(&corpus, &corpus, &corpus, &model_config, &train_config).unwrap();
        assert_eq!(grid.cells.len(), 9);
        for (b, _) in ABLATION_MASKS {
            for (d, _) in ABLATION_MASKS {
                assert!(grid.cell(b, d).is_some(), "missing cell ({b}, {d})");
            }
        }
        let table = grid.table();
        assert!(table.contains("D-LSTM"));
        let tsv = grid.tsv();
        assert_eq!(tsv.lines().count(), 10);
    }
}
