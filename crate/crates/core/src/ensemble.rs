//! Confidence-voting ensemble: per token, trust the model whose probability
//! pair is more decisive.
//!
//! Members exchange per-token probabilities through a TSV file (one row per
//! token: sentence id, instance index, token id, p_out, p_in), so they can
//! be trained independently; the vote emits a labels TSV in the same keying
//! with the winning member and its confidence margin appended.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("model outputs disagree in length: {a} vs {b} tokens")]
    LengthMismatch { a: usize, b: usize },
    #[error("line {line}: {message}")]
    ParseRow { line: usize, message: String },
    #[error("instance {index}: files disagree ({a} vs {b})")]
    InstanceMismatch {
        index: usize,
        a: String,
        b: String,
    },
}

/// Which ensemble member won a token's vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Member {
    A,
    B,
}

/// Per-token outcome of a confidence vote.
#[derive(Debug, Clone)]
pub struct VotePrediction {
    /// True for in-scope.
    pub labels: Vec<bool>,
    pub winners: Vec<Member>,
    /// |p_in - p_out| of the winning model, per token.
    pub margins: Vec<f64>,
}

/// Per token, choose the model with the larger |p_in − p_out| and take its
/// argmax as the label. Exact margin ties go to model A, deterministically.
pub fn confidence_vote(
    probs_a: &[(f64, f64)],
    probs_b: &[(f64, f64)],
) -> Result<VotePrediction, EnsembleError> {
    if probs_a.len() != probs_b.len() {
        return Err(EnsembleError::LengthMismatch {
            a: probs_a.len(),
            b: probs_b.len(),
        });
    }
    let mut labels = Vec::with_capacity(probs_a.len());
    let mut winners = Vec::with_capacity(probs_a.len());
    let mut margins = Vec::with_capacity(probs_a.len());
    for (&(ao, ai), &(bo, bi)) in probs_a.iter().zip(probs_b) {
        let margin_a = (ai - ao).abs();
        let margin_b = (bi - bo).abs();
        let (winner, margin, p_out, p_in) = if margin_b > margin_a {
            (Member::B, margin_b, bo, bi)
        } else {
            (Member::A, margin_a, ao, ai)
        };
        labels.push(p_in > p_out);
        winners.push(winner);
        margins.push(margin);
    }
    Ok(VotePrediction {
        labels,
        winners,
        margins,
    })
}

// ── File formats ─────────────────────────────────────────────────────

/// Identity of one instance across files: the sentence's source id and the
/// cue index within the sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceKey {
    pub sentence_id: String,
    pub instance_index: usize,
}

impl std::fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.sentence_id, self.instance_index)
    }
}

/// Per-token probability pairs of one instance; token id = position + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceProbs {
    pub key: InstanceKey,
    pub probs: Vec<(f64, f64)>,
}

/// Voted labels of one instance.
#[derive(Debug, Clone)]
pub struct InstanceLabels {
    pub key: InstanceKey,
    pub labels: Vec<bool>,
    pub winners: Vec<Member>,
    pub margins: Vec<f64>,
}

/// Serialize probability rows: sentence id, instance index, token id,
/// p_out, p_in. Float formatting round-trips exactly.
pub fn probs_to_tsv(instances: &[InstanceProbs]) -> String {
    let mut out = String::new();
    for inst in instances {
        for (i, (p_out, p_in)) in inst.probs.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                inst.key.sentence_id,
                inst.key.instance_index,
                i + 1,
                p_out,
                p_in
            ));
        }
    }
    out
}

fn row_err(line: usize, message: impl Into<String>) -> EnsembleError {
    EnsembleError::ParseRow {
        line,
        message: message.into(),
    }
}

/// Parse a probability TSV. Rows of one instance must be consecutive with
/// token ids counting up from 1.
pub fn probs_from_tsv(text: &str) -> Result<Vec<InstanceProbs>, EnsembleError> {
    let mut out: Vec<InstanceProbs> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(row_err(i + 1, format!("expected 5 columns, got {}", cols.len())));
        }
        let instance_index: usize = cols[1]
            .parse()
            .map_err(|_| row_err(i + 1, "bad instance index"))?;
        let token_id: usize = cols[2].parse().map_err(|_| row_err(i + 1, "bad token id"))?;
        let p_out: f64 = cols[3].parse().map_err(|_| row_err(i + 1, "bad p_out"))?;
        let p_in: f64 = cols[4].parse().map_err(|_| row_err(i + 1, "bad p_in"))?;
        let key = InstanceKey {
            sentence_id: cols[0].to_string(),
            instance_index,
        };
        match out.last_mut() {
            Some(last) if last.key == key => {
                if token_id != last.probs.len() + 1 {
                    return Err(row_err(
                        i + 1,
                        format!("token id {token_id} out of order for instance {key}"),
                    ));
                }
                last.probs.push((p_out, p_in));
            }
            _ => {
                if token_id != 1 {
                    return Err(row_err(i + 1, "instance must start at token id 1"));
                }
                out.push(InstanceProbs {
                    key,
                    probs: vec![(p_out, p_in)],
                });
            }
        }
    }
    Ok(out)
}

/// Serialize voted labels: sentence id, instance index, token id, S/_,
/// winning member, margin.
pub fn labels_to_tsv(instances: &[InstanceLabels]) -> String {
    let mut out = String::new();
    for inst in instances {
        for (i, &label) in inst.labels.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                inst.key.sentence_id,
                inst.key.instance_index,
                i + 1,
                if label { "S" } else { "_" },
                match inst.winners[i] {
                    Member::A => "A",
                    Member::B => "B",
                },
                inst.margins[i]
            ));
        }
    }
    out
}

/// Parse a labels TSV (the winner and margin columns are optional, so plain
/// 4-column gold-style label files load too).
pub fn labels_from_tsv(text: &str) -> Result<Vec<InstanceLabels>, EnsembleError> {
    let mut out: Vec<InstanceLabels> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 && cols.len() != 6 {
            return Err(row_err(i + 1, format!("expected 4 or 6 columns, got {}", cols.len())));
        }
        let instance_index: usize = cols[1]
            .parse()
            .map_err(|_| row_err(i + 1, "bad instance index"))?;
        let token_id: usize = cols[2].parse().map_err(|_| row_err(i + 1, "bad token id"))?;
        let label = match cols[3] {
            "S" => true,
            "_" => false,
            other => return Err(row_err(i + 1, format!("bad label '{other}'"))),
        };
        let winner = if cols.len() == 6 {
            match cols[4] {
                "A" => Member::A,
                "B" => Member::B,
                other => return Err(row_err(i + 1, format!("bad winner '{other}'"))),
            }
        } else {
            Member::A
        };
        let margin: f64 = if cols.len() == 6 {
            cols[5].parse().map_err(|_| row_err(i + 1, "bad margin"))?
        } else {
            0.0
        };
        let key = InstanceKey {
            sentence_id: cols[0].to_string(),
            instance_index,
        };
        match out.last_mut() {
            Some(last) if last.key == key => {
                if token_id != last.labels.len() + 1 {
                    return Err(row_err(
                        i + 1,
                        format!("token id {token_id} out of order for instance {key}"),
                    ));
                }
                last.labels.push(label);
                last.winners.push(winner);
                last.margins.push(margin);
            }
            _ => {
                if token_id != 1 {
                    return Err(row_err(i + 1, "instance must start at token id 1"));
                }
                out.push(InstanceLabels {
                    key,
                    labels: vec![label],
                    winners: vec![winner],
                    margins: vec![margin],
                });
            }
        }
    }
    Ok(out)
}

/// Vote two aligned probability files instance by instance.
pub fn vote_files(
    a: &[InstanceProbs],
    b: &[InstanceProbs],
) -> Result<Vec<InstanceLabels>, EnsembleError> {
    if a.len() != b.len() {
        return Err(EnsembleError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let mut out = Vec::with_capacity(a.len());
    for (index, (ia, ib)) in a.iter().zip(b).enumerate() {
        if ia.key != ib.key {
            return Err(EnsembleError::InstanceMismatch {
                index,
                a: ia.key.to_string(),
                b: ib.key.to_string(),
            });
        }
        let vote = confidence_vote(&ia.probs, &ib.probs)?;
        out.push(InstanceLabels {
            key: ia.key.clone(),
            labels: vote.labels,
            winners: vote.winners,
            margins: vote.margins,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn larger_margin_wins() {
        // A = (0.6, 0.4): margin 0.2; B = (0.1, 0.9): margin 0.8 → B, in-scope
        let v = confidence_vote(&[(0.6, 0.4)], &[(0.1, 0.9)]).unwrap();
        assert_eq!(v.winners, vec![Member::B]);
        assert_eq!(v.labels, vec![true]);
        assert!((v.margins[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn exact_tie_goes_to_a() {
        let v = confidence_vote(&[(0.3, 0.7)], &[(0.3, 0.7)]).unwrap();
        assert_eq!(v.winners, vec![Member::A]);
        assert_eq!(v.labels, vec![true]);
    }

    #[test]
    fn agreement_survives_any_margin_winner() {
        // both predict in-scope; the label is in-scope whoever wins
        let v = confidence_vote(&[(0.4, 0.6)], &[(0.1, 0.9)]).unwrap();
        assert_eq!(v.labels, vec![true]);
        let v = confidence_vote(&[(0.1, 0.9)], &[(0.4, 0.6)]).unwrap();
        assert_eq!(v.labels, vec![true]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(confidence_vote(&[(0.5, 0.5)], &[]).is_err());
    }

    #[test]
    fn prob_tsv_roundtrip_is_exact() {
        let probs = vec![
            InstanceProbs {
                key: InstanceKey {
                    sentence_id: "s1".into(),
                    instance_index: 0,
                },
                probs: vec![(0.1, 0.9), (1.0 / 3.0, 2.0 / 3.0)],
            },
            InstanceProbs {
                key: InstanceKey {
                    sentence_id: "s1".into(),
                    instance_index: 1,
                },
                probs: vec![(0.5, 0.5)],
            },
        ];
        let tsv = probs_to_tsv(&probs);
        assert_eq!(probs_from_tsv(&tsv).unwrap(), probs);
    }

    #[test]
    fn prob_tsv_rejects_out_of_order_tokens() {
        let bad = "s1\t0\t1\t0.5\t0.5\ns1\t0\t3\t0.5\t0.5\n";
        assert!(matches!(
            probs_from_tsv(bad),
            Err(EnsembleError::ParseRow { line: 2, .. })
        ));
    }

    #[test]
    fn vote_files_checks_keys() {
        let key = |sid: &str, idx: usize| InstanceKey {
            sentence_id: sid.into(),
            instance_index: idx,
        };
        let a = vec![InstanceProbs {
            key: key("s1", 0),
            probs: vec![(0.2, 0.8)],
        }];
        let b = vec![InstanceProbs {
            key: key("s2", 0),
            probs: vec![(0.2, 0.8)],
        }];
        assert!(matches!(
            vote_files(&a, &b),
            Err(EnsembleError::InstanceMismatch { .. })
        ));
        let voted = vote_files(&a, &a.clone()).unwrap();
        assert_eq!(voted[0].labels, vec![true]);
        let tsv = labels_to_tsv(&voted);
        let parsed = labels_from_tsv(&tsv).unwrap();
        assert_eq!(parsed[0].labels, vec![true]);
        assert_eq!(parsed[0].winners, vec![Member::A]);
    }

    proptest! {
        #[test]
        fn agreement_is_preserved(pa in 0.0f64..=1.0, pb in 0.0f64..=1.0) {
            let a = (1.0 - pa, pa);
            let b = (1.0 - pb, pb);
            let v = confidence_vote(&[a], &[b]).unwrap();
            if (pa > 0.5) == (pb > 0.5) && (pa - 0.5).abs() > 1e-12 && (pb - 0.5).abs() > 1e-12 {
                prop_assert_eq!(v.labels[0], pa > 0.5);
            }
        }

        #[test]
        fn swap_invariant_off_ties(pa in 0.0f64..=1.0, pb in 0.0f64..=1.0) {
            let a = (1.0 - pa, pa);
            let b = (1.0 - pb, pb);
            let ab = confidence_vote(&[a], &[b]).unwrap();
            let ba = confidence_vote(&[b], &[a]).unwrap();
            let margin_a = (2.0 * pa - 1.0).abs();
            let margin_b = (2.0 * pb - 1.0).abs();
            if margin_a != margin_b {
                prop_assert_eq!(ab.labels[0], ba.labels[0]);
                prop_assert_eq!(ab.margins[0], ba.margins[0]);
            }
        }
    }
}
