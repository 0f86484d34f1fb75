//! Retrieval metrics: R@K with fold averaging, and hard-negative AUC.

use std::fmt::Write as _;
use std::sync::Arc;

use log::warn;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

pub const KS: [usize; 3] = [1, 5, 10];

/// 0-based rank of `candidate` in `row`: higher scores first, equal scores
/// ordered by smaller candidate index.
fn rank_of(row: &[f64], candidate: usize) -> usize {
    let s = row[candidate];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < candidate))
        .count()
}

/// Best rank of any correct candidate, per query.
pub fn best_ranks(scores: &Tensor, truth: &[Vec<usize>]) -> Result<Vec<usize>> {
    if truth.len() != scores.rows() {
        return Err(Error::Validation(format!(
            "{} ground-truth lists for {} queries",
            truth.len(),
            scores.rows()
        )));
    }
    truth
        .iter()
        .enumerate()
        .map(|(q, correct)| {
            if correct.is_empty() {
                return Err(Error::Validation(format!(
                    "query {q} has no correct candidate"
                )));
            }
            if let Some(&c) = correct.iter().find(|&&c| c >= scores.cols()) {
                return Err(Error::Validation(format!(
                    "query {q}: candidate {c} out of range"
                )));
            }
            Ok(correct
                .iter()
                .map(|&c| rank_of(scores.row(q), c))
                .min()
                .unwrap())
        })
        .collect()
}

fn recall_from_ranks(ranks: &[usize], k: usize) -> f64 {
    100.0 * ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64
}

fn clamp_k(k: usize, candidates: usize) -> usize {
    if k > candidates {
        warn!("K = {k} exceeds {candidates} candidates; clamped");
        candidates
    } else {
        k
    }
}

/// Percentage of queries (rows of `scores`) with a correct candidate among
/// their top `k`.
pub fn recall_at_k(scores: &Tensor, truth: &[Vec<usize>], k: usize) -> Result<f64> {
    let k = clamp_k(k, scores.cols());
    Ok(recall_from_ranks(&best_ranks(scores, truth)?, k))
}

/// R@1/5/10 in both retrieval directions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RecallMetrics {
    /// Image queries ranking texts.
    pub sentence: [f64; 3],
    /// Text queries ranking images.
    pub image: [f64; 3],
}

impl RecallMetrics {
    /// From an `images × texts` score matrix of a corpus.
    pub fn from_scores(scores: &Tensor, corpus: &Corpus) -> Result<Self> {
        let sentence_truth = corpus.texts_of_image();
        let image_truth: Vec<Vec<usize>> = corpus
            .image_of_text()
            .into_iter()
            .map(|i| vec![i])
            .collect();
        let s_ranks = best_ranks(scores, &sentence_truth)?;
        let i_ranks = best_ranks(&scores.transpose(), &image_truth)?;
        let mut out = RecallMetrics::default();
        for (slot, &k) in KS.iter().enumerate() {
            out.sentence[slot] = recall_from_ranks(&s_ranks, clamp_k(k, scores.cols()));
            out.image[slot] = recall_from_ranks(&i_ranks, clamp_k(k, scores.rows()));
        }
        Ok(out)
    }

    pub fn rsum(&self) -> f64 {
        self.sentence.iter().chain(&self.image).sum()
    }

    fn mean(all: &[RecallMetrics]) -> Self {
        let mut out = RecallMetrics::default();
        let n = all.len() as f64;
        for m in all {
            for s in 0..3 {
                out.sentence[s] += m.sentence[s] / n;
                out.image[s] += m.image[s] / n;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldReport {
    pub images: usize,
    pub texts: usize,
    pub metrics: RecallMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecallReport {
    pub folds: Vec<FoldReport>,
    pub mean: RecallMetrics,
}

impl RecallReport {
    pub fn from_folds(folds: Vec<FoldReport>) -> Self {
        let mean = RecallMetrics::mean(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>());
        Self { folds, mean }
    }

    /// Total query counts over all folds: (image queries, text queries).
    pub fn queries(&self) -> (usize, usize) {
        self.folds
            .iter()
            .fold((0, 0), |(i, t), f| (i + f.images, t + f.texts))
    }

    /// One `key=value` per line.
    pub fn to_text(&self) -> String {
        fn metrics(out: &mut String, prefix: &str, m: &RecallMetrics) {
            for (slot, k) in KS.iter().enumerate() {
                let _ = writeln!(out, "{prefix}.sentence_r{k}={:.4}", m.sentence[slot]);
            }
            for (slot, k) in KS.iter().enumerate() {
                let _ = writeln!(out, "{prefix}.image_r{k}={:.4}", m.image[slot]);
            }
            let _ = writeln!(out, "{prefix}.rsum={:.4}", m.rsum());
        }
        let mut out = String::new();
        let (qi, qt) = self.queries();
        let _ = writeln!(out, "folds={}", self.folds.len());
        let _ = writeln!(out, "queries.sentence={qi}");
        let _ = writeln!(out, "queries.image={qt}");
        for (n, f) in self.folds.iter().enumerate() {
            let prefix = format!("fold{}", n + 1);
            let _ = writeln!(out, "{prefix}.images={}", f.images);
            let _ = writeln!(out, "{prefix}.texts={}", f.texts);
            metrics(&mut out, &prefix, &f.metrics);
        }
        metrics(&mut out, "mean", &self.mean);
        out
    }

    /// Reads a report written by [`RecallReport::to_text`].
    pub fn parse(text: &str) -> Result<Self> {
        let entries = crate::config::parse_entries(text)?;
        let get = |key: &str| -> Result<&str> {
            entries
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Validation(format!("report lacks {key}")))
        };
        let num = |key: &str| -> Result<f64> {
            get(key)?
                .parse()
                .map_err(|_| Error::Validation(format!("report: bad number for {key}")))
        };
        let count = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Validation(format!("report: bad count for {key}")))
        };
        let metrics = |prefix: &str| -> Result<RecallMetrics> {
            let mut m = RecallMetrics::default();
            for (slot, k) in KS.iter().enumerate() {
                m.sentence[slot] = num(&format!("{prefix}.sentence_r{k}"))?;
                m.image[slot] = num(&format!("{prefix}.image_r{k}"))?;
            }
            Ok(m)
        };
        let folds = (1..=count("folds")?)
            .map(|n| {
                let p = format!("fold{n}");
                Ok(FoldReport {
                    images: count(&format!("{p}.images"))?,
                    texts: count(&format!("{p}.texts"))?,
                    metrics: metrics(&p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            folds,
            mean: metrics("mean")?,
        })
    }
}

/// Contiguous image ranges of `ceil(n / folds)` images; the last may be
/// shorter.
pub fn fold_ranges(n: usize, folds: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if folds == 0 || folds > n {
        return Err(Error::Validation(format!(
            "cannot split {n} images into {folds} folds"
        )));
    }
    let size = n.div_ceil(folds);
    if (folds - 1) * size >= n {
        return Err(Error::Validation(format!(
            "{folds} folds of {size} images leave the last fold of {n} images empty"
        )));
    }
    if !n.is_multiple_of(folds) {
        warn!(
            "{n} images do not split evenly into {folds} folds; last fold truncated to {}",
            n - (folds - 1) * size
        );
    }
    Ok((0..folds)
        .map(|f| f * size..((f + 1) * size).min(n))
        .collect())
}

/// Mean `images × texts` score matrix of `models` over a corpus. Every pair
/// is scored in full.
pub fn ensemble_scores(models: &[&Model], corpus: &Corpus) -> Result<Tensor> {
    let Some((first, rest)) = models.split_first() else {
        return Err(Error::Validation(
            "evaluation needs at least one model".into(),
        ));
    };
    let score = |m: &Model| -> Result<Tensor> {
        let objects = corpus
            .images
            .iter()
            .map(|i| m.encode_image(i).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let words = corpus
            .texts
            .iter()
            .map(|t| m.encode_text(t).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        m.similarity_matrix_encoded(&objects, &words)
    };
    let mut total = score(first)?;
    for m in rest {
        total.add_assign(&score(m)?);
    }
    total.scale_in_place(1.0 / models.len() as f64);
    Ok(total)
}

pub fn evaluate(models: &[&Model], corpus: &Corpus, folds: usize) -> Result<RecallReport> {
    corpus.validate()?;
    let mut reports = Vec::new();
    for range in fold_ranges(corpus.images.len(), folds)? {
        let images: Vec<usize> = range.collect();
        let fold = corpus.restrict_to_images(&images);
        let scores = ensemble_scores(models, &fold)?;
        reports.push(FoldReport {
            images: fold.images.len(),
            texts: fold.texts.len(),
            metrics: RecallMetrics::from_scores(&scores, &fold)?,
        });
    }
    Ok(RecallReport::from_folds(reports))
}

/// Probability that a random positive outscores a random negative, ties
/// counted half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Validation(
            "AUC needs positives and negatives".into(),
        ));
    }
    let mut wins = 0.0;
    for &p in positives {
        for &n in negatives {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (positives.len() * negatives.len()) as f64)
}

/// Scores of every positive pair whose text has a designated hard negative,
/// and of those hard negatives; from an `images × texts` matrix.
pub fn hard_negative_scores(scores: &Tensor, corpus: &Corpus) -> (Vec<f64>, Vec<f64>) {
    let image_of = corpus.image_of_text();
    let mut texts: Vec<usize> = corpus.hard_negatives.iter().map(|&(t, _)| t).collect();
    texts.sort_unstable();
    texts.dedup();
    let positives = texts.iter().map(|&t| scores.get(image_of[t], t)).collect();
    let negatives = corpus
        .hard_negatives
        .iter()
        .map(|&(t, i)| scores.get(i, t))
        .collect();
    (positives, negatives)
}

/// AUC of positive versus designated hard-negative scores.
pub fn hard_negative_auc(models: &[&Model], corpus: &Corpus) -> Result<f64> {
    let scores = ensemble_scores(models, corpus)?;
    let (p, n) = hard_negative_scores(&scores, corpus);
    auc(&p, &n)
}
