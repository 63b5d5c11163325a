//! Ranking metrics, confidence intervals, leave-one-subject-out planning,
//! score aggregation, and temporal smoothing.
//!
//! Everything here is pure: model pipelines hand over per-window scored
//! predictions and get back reports.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Group, Task, ABOVE_LIMIT_THRESHOLD_G_PER_DL};
use crate::stats;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("both classes required, got a single class")]
    SingleClass,
    #[error("at least one positive sample required")]
    NoPositives,
    #[error("need at least {need} participants, got {got}")]
    TooFewParticipants { need: usize, got: usize },
    #[error("empty scope: {0}")]
    EmptyScope(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

// ---------------------------------------------------------------------------
// Ranking metrics
// ---------------------------------------------------------------------------

fn split_classes(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l == 1 {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    (pos, neg)
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction
/// of (positive, negative) pairs ranked correctly, ties counting half.
/// Computed via rank sums with average ranks, so ties are exact.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    debug_assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups (1-based)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Area under the precision-recall curve in average-precision form:
/// sum over distinct thresholds of (recall step) x (precision there).
/// Tied scores collapse into one threshold.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    debug_assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_tp = 0usize;
        let mut group_fp = 0usize;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                group_tp += 1;
            } else {
                group_fp += 1;
            }
            j += 1;
        }
        tp += group_tp;
        fp += group_fp;
        let precision = tp as f64 / (tp + fp) as f64;
        let recall_step = group_tp as f64 / n_pos as f64;
        ap += precision * recall_step;
        i = j;
    }
    Ok(ap)
}

/// Positive-class prevalence: the AUPRC of an uninformative classifier.
pub fn prevalence(labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return f64::NAN;
    }
    labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DelongInterval {
    pub auroc: f64,
    pub variance: f64,
    pub low: f64,
    pub high: f64,
    pub level: f64,
}

/// DeLong confidence interval for the AUROC, via placement values and a
/// normal approximation, clipped to [0, 1].
pub fn delong_ci(scores: &[f64], labels: &[u8], level: f64) -> Result<DelongInterval, EvalError> {
    if !(0.0 < level && level < 1.0) {
        return Err(EvalError::Degenerate(format!("level {level}")));
    }
    let (pos, neg) = split_classes(scores, labels);
    if pos.len() < 2 || neg.len() < 2 {
        return Err(EvalError::Degenerate(format!(
            "need >=2 per class, got {}/{}",
            pos.len(),
            neg.len()
        )));
    }
    let mut neg_sorted = neg.clone();
    neg_sorted.sort_by(f64::total_cmp);
    let mut pos_sorted = pos.clone();
    pos_sorted.sort_by(f64::total_cmp);

    // placement of each positive among the negatives and vice versa
    let v10: Vec<f64> = pos
        .iter()
        .map(|&s| {
            let below = neg_sorted.partition_point(|&x| x < s);
            let at = neg_sorted.partition_point(|&x| x <= s) - below;
            (below as f64 + 0.5 * at as f64) / neg.len() as f64
        })
        .collect();
    let v01: Vec<f64> = neg
        .iter()
        .map(|&s| {
            let above = pos_sorted.len() - pos_sorted.partition_point(|&x| x <= s);
            let at = pos_sorted.partition_point(|&x| x <= s) - pos_sorted.partition_point(|&x| x < s);
            (above as f64 + 0.5 * at as f64) / pos.len() as f64
        })
        .collect();
    let auc = stats::mean(&v10);
    debug_assert!((auc - stats::mean(&v01)).abs() < 1e-12);
    let variance =
        stats::variance(&v10, 1) / pos.len() as f64 + stats::variance(&v01, 1) / neg.len() as f64;
    let z = normal_quantile(0.5 + level / 2.0);
    let half = z * variance.sqrt();
    Ok(DelongInterval {
        auroc: auc,
        variance,
        low: (auc - half).max(0.0),
        high: (auc + half).min(1.0),
        level,
    })
}

/// Inverse standard-normal CDF (Acklam's rational approximation,
/// |relative error| < 1.2e-9).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p={p} outside (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// JSON has no literal for non-finite floats, and curve thresholds start
/// at +inf; encode those as strings, everything else as numbers.
mod serde_threshold {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!(
                    "unrecognized threshold {other:?}"
                ))),
            },
        }
    }
}

/// ROC curve points (one per distinct threshold, plus the endpoints).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "serde_threshold")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>, EvalError> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

/// Precision-recall curve points (one per distinct threshold).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrPoint {
    #[serde(with = "serde_threshold")]
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

pub fn pr_points(scores: &[f64], labels: &[u8]) -> Result<Vec<PrPoint>, EvalError> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            recall: tp as f64 / n_pos as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(points)
}

/// Fraction of exact class matches.
pub fn multiclass_accuracy(predicted: &[u8], truth: &[u8]) -> f64 {
    debug_assert_eq!(predicted.len(), truth.len());
    if truth.is_empty() {
        return f64::NAN;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

/// One-vs-rest AUROC per class, averaged over the classes for which both
/// sides are present in `labels`. `probs` is row-major (n x n_classes).
pub fn macro_ovr_auroc(probs: &[Vec<f64>], labels: &[u8], n_classes: usize) -> Option<f64> {
    let mut per_class = Vec::new();
    for c in 0..n_classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let binary: Vec<u8> = labels.iter().map(|&l| u8::from(l as usize == c)).collect();
        if let Ok(a) = auroc(&scores, &binary) {
            per_class.push(a);
        }
    }
    if per_class.is_empty() {
        None
    } else {
        Some(crate::stats::mean(&per_class))
    }
}

// ---------------------------------------------------------------------------
// LOSO planning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LosoFold {
    pub held_out: String,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LosoPlan {
    pub seed: u64,
    pub folds: Vec<LosoFold>,
}

/// Target validation-set size given the number of non-held-out
/// participants: 20%, at least 2, capped at 10.
pub fn validation_size(remainder: usize) -> usize {
    ((remainder as f64 * 0.2).round() as usize).clamp(2, 10)
}

/// Builds one fold per participant: that participant held out, a seeded
/// 20% validation draw (capped at 10, floored at 2) from the rest, and
/// the remainder as training set. Participant order is canonicalized by
/// sorting, so the plan depends only on the id set and the seed.
pub fn make_loso_plan(participant_ids: &[String], seed: u64) -> Result<LosoPlan, EvalError> {
    let mut ids: Vec<String> = participant_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 4 {
        return Err(EvalError::TooFewParticipants { need: 4, got: ids.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = Vec::with_capacity(ids.len());
    for held in &ids {
        let mut remainder: Vec<String> = ids.iter().filter(|id| *id != held).cloned().collect();
        let k = validation_size(remainder.len());
        // partial Fisher-Yates: the first k slots become the validation draw
        for i in 0..k {
            let j = rng.random_range(i..remainder.len());
            remainder.swap(i, j);
        }
        let mut validation: Vec<String> = remainder[..k].to_vec();
        let mut train: Vec<String> = remainder[k..].to_vec();
        validation.sort();
        train.sort();
        folds.push(LosoFold {
            held_out: held.clone(),
            train,
            validation,
        });
    }
    Ok(LosoPlan { seed, folds })
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// One scored window, as produced by a held-out fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub participant_id: String,
    pub group: Group,
    pub phase_index: u8,
    /// Seconds from phase start to the window's end.
    pub elapsed_s: f64,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    TreatmentOnly,
    TreatmentAndControl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticipantMetrics {
    pub participant_id: String,
    pub n_windows: usize,
    pub auroc: f64,
    pub auprc: f64,
    pub prevalence: f64,
}

/// Mean and population std over per-participant metrics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MacroSummary {
    pub mean: f64,
    pub std: f64,
    pub n_participants: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledMetrics {
    pub scope: Scope,
    pub n_windows: usize,
    pub n_positive: usize,
    pub auroc: f64,
    pub auprc: f64,
    /// AUPRC of an uninformative classifier under this scope.
    pub prevalence: f64,
    pub delong_99: Option<DelongInterval>,
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub per_participant: Vec<ParticipantMetrics>,
    /// Treatment participants whose windows held a single class; excluded
    /// from the macro statistics.
    pub excluded_single_class: Vec<String>,
    pub macro_auroc: Option<MacroSummary>,
    pub macro_auprc: Option<MacroSummary>,
    pub pooled_treatment: PooledMetrics,
    pub pooled_all: PooledMetrics,
}

fn pooled_metrics(preds: &[&WindowPrediction], scope: Scope) -> Result<PooledMetrics, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyScope(format!("{scope:?}")));
    }
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
    let n_positive = labels.iter().filter(|&&l| l == 1).count();
    Ok(PooledMetrics {
        scope,
        n_windows: preds.len(),
        n_positive,
        auroc: auroc(&scores, &labels)?,
        auprc: auprc(&scores, &labels)?,
        prevalence: prevalence(&labels),
        delong_99: delong_ci(&scores, &labels, 0.99).ok(),
        roc: roc_points(&scores, &labels)?,
        pr: pr_points(&scores, &labels)?,
    })
}

/// Summarizes per-window predictions into per-participant (macro) and
/// pooled (micro) metrics.
///
/// Macro statistics cover treatment participants only, and only those
/// whose held-out windows contain both classes; single-class participants
/// are listed, not silently dropped. Pooled metrics come in two scopes:
/// treatment windows only, and everything including controls. Each AUPRC
/// travels with the prevalence an uninformative classifier would score.
pub fn aggregate(preds: &[WindowPrediction], task: Task) -> Result<EvalReport, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyScope("no predictions".into()));
    }
    let mut by_participant: BTreeMap<&str, Vec<&WindowPrediction>> = BTreeMap::new();
    for p in preds {
        by_participant.entry(&p.participant_id).or_default().push(p);
    }
    let mut per_participant = Vec::new();
    let mut excluded = Vec::new();
    for (id, ps) in &by_participant {
        if ps[0].group != Group::Treatment {
            continue;
        }
        let scores: Vec<f64> = ps.iter().map(|p| p.score).collect();
        let labels: Vec<u8> = ps.iter().map(|p| p.label).collect();
        match (auroc(&scores, &labels), auprc(&scores, &labels)) {
            (Ok(roc), Ok(pr)) => per_participant.push(ParticipantMetrics {
                participant_id: id.to_string(),
                n_windows: ps.len(),
                auroc: roc,
                auprc: pr,
                prevalence: prevalence(&labels),
            }),
            _ => excluded.push(id.to_string()),
        }
    }
    let macro_of = |vals: Vec<f64>| -> Option<MacroSummary> {
        if vals.is_empty() {
            None
        } else {
            Some(MacroSummary {
                mean: stats::mean(&vals),
                std: stats::std_dev(&vals, 0),
                n_participants: vals.len(),
            })
        }
    };
    let treatment: Vec<&WindowPrediction> =
        preds.iter().filter(|p| p.group == Group::Treatment).collect();
    let all: Vec<&WindowPrediction> = preds.iter().collect();
    Ok(EvalReport {
        task,
        macro_auroc: macro_of(per_participant.iter().map(|m| m.auroc).collect()),
        macro_auprc: macro_of(per_participant.iter().map(|m| m.auprc).collect()),
        per_participant,
        excluded_single_class: excluded,
        pooled_treatment: pooled_metrics(&treatment, Scope::TreatmentOnly)?,
        pooled_all: pooled_metrics(&all, Scope::TreatmentAndControl)?,
    })
}

// ---------------------------------------------------------------------------
// Multiclass aggregation
// ---------------------------------------------------------------------------

/// One scored window under a multiclass task; `label` is 0-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MulticlassPrediction {
    pub participant_id: String,
    pub group: Group,
    pub phase_index: u8,
    pub elapsed_s: f64,
    pub probs: Vec<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MulticlassParticipantMetrics {
    pub participant_id: String,
    pub group: Group,
    pub n_windows: usize,
    /// One-vs-rest AUROC averaged over this participant's represented
    /// classes; None when every class is single-sided.
    pub macro_auroc: Option<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MulticlassReport {
    pub n_classes: usize,
    pub per_participant: Vec<MulticlassParticipantMetrics>,
    /// Mean per-participant macro AUROC by study arm.
    pub group_macro_auroc: Vec<(Group, f64)>,
    pub pooled_accuracy: f64,
}

/// Per-participant one-vs-rest AUROC and accuracy, then group means; the
/// multiclass analogue of `aggregate`.
pub fn aggregate_multiclass(
    preds: &[MulticlassPrediction],
    n_classes: usize,
) -> Result<MulticlassReport, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyScope("no predictions".into()));
    }
    let mut ids: Vec<&str> = preds.iter().map(|p| p.participant_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    let predicted_class = |p: &MulticlassPrediction| {
        p.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(c, _)| c as u8)
            .unwrap_or(0)
    };
    let mut per_participant = Vec::with_capacity(ids.len());
    for id in ids {
        let mine: Vec<&MulticlassPrediction> =
            preds.iter().filter(|p| p.participant_id == id).collect();
        let probs: Vec<Vec<f64>> = mine.iter().map(|p| p.probs.clone()).collect();
        let labels: Vec<u8> = mine.iter().map(|p| p.label).collect();
        let pred: Vec<u8> = mine.iter().map(|p| predicted_class(p)).collect();
        per_participant.push(MulticlassParticipantMetrics {
            participant_id: id.to_string(),
            group: mine[0].group,
            n_windows: mine.len(),
            macro_auroc: macro_ovr_auroc(&probs, &labels, n_classes),
            accuracy: multiclass_accuracy(&pred, &labels),
        });
    }
    let mut group_macro_auroc = Vec::new();
    for group in [Group::Treatment, Group::Placebo, Group::Reference] {
        let vals: Vec<f64> = per_participant
            .iter()
            .filter(|m| m.group == group)
            .filter_map(|m| m.macro_auroc)
            .collect();
        if !vals.is_empty() {
            group_macro_auroc.push((group, crate::stats::mean(&vals)));
        }
    }
    let pred: Vec<u8> = preds.iter().map(predicted_class).collect();
    let truth: Vec<u8> = preds.iter().map(|p| p.label).collect();
    Ok(MulticlassReport {
        n_classes,
        per_participant,
        group_macro_auroc,
        pooled_accuracy: multiclass_accuracy(&pred, &truth),
    })
}

// ---------------------------------------------------------------------------
// Temporal smoothing (cumulative moving average)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothedSegment {
    pub participant_id: String,
    pub group: Group,
    pub phase_index: u8,
    pub label: u8,
    /// (elapsed seconds at bin end, cumulative mean prediction)
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmaPoint {
    pub elapsed_s: f64,
    pub n_segments: usize,
    pub auroc: f64,
    pub delong_99: Option<DelongInterval>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmaResult {
    pub bin_s: f64,
    pub segments: Vec<SmoothedSegment>,
    pub curve: Vec<CmaPoint>,
}

/// Smooths window predictions per driving segment (participant x phase)
/// and traces detection quality against time behind the wheel.
///
/// Within each segment, predictions are averaged into `bin_s` bins by the
/// window's end time, then replaced by the cumulative mean over bins. The
/// curve reports pooled AUROC over each segment's smoothed value at
/// elapsed time t; the earliest point sits one full window after segment
/// start, since no prediction exists before that.
pub fn cma_smooth(preds: &[WindowPrediction], bin_s: f64, window_length_s: f64) -> Result<CmaResult, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyScope("no predictions".into()));
    }
    if !(bin_s > 0.0) {
        return Err(EvalError::Degenerate(format!("bin width {bin_s}")));
    }
    let mut by_segment: BTreeMap<(String, u8), Vec<&WindowPrediction>> = BTreeMap::new();
    for p in preds {
        by_segment
            .entry((p.participant_id.clone(), p.phase_index))
            .or_default()
            .push(p);
    }
    let mut segments = Vec::new();
    for ((pid, phase), mut ps) in by_segment {
        ps.sort_by(|a, b| a.elapsed_s.total_cmp(&b.elapsed_s));
        let label = ps[0].label;
        debug_assert!(ps.iter().all(|p| p.label == label), "label varies within a segment");
        // bin index relative to the first possible prediction time
        let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for p in ps.iter() {
            let k = ((p.elapsed_s - window_length_s) / bin_s + 1e-9).floor() as i64;
            bins.entry(k).or_default().push(p.score);
        }
        let mut points = Vec::with_capacity(bins.len());
        let mut running = 0.0;
        let mut n = 0usize;
        for (k, scores) in bins {
            running += stats::mean(&scores);
            n += 1;
            let elapsed = window_length_s + (k + 1) as f64 * bin_s;
            points.push((elapsed, running / n as f64));
        }
        segments.push(SmoothedSegment {
            participant_id: pid,
            group: ps[0].group,
            phase_index: phase,
            label,
            points,
        });
    }

    // pooled AUROC over segment values at each elapsed time present anywhere
    let mut times: Vec<f64> = segments
        .iter()
        .flat_map(|s| s.points.iter().map(|(t, _)| *t))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut curve = Vec::new();
    for &t in &times {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for seg in &segments {
            // latest smoothed value at or before t
            if let Some((_, v)) = seg.points.iter().rev().find(|(pt, _)| *pt <= t + 1e-9) {
                scores.push(*v);
                labels.push(seg.label);
            }
        }
        if let Ok(a) = auroc(&scores, &labels) {
            curve.push(CmaPoint {
                elapsed_s: t,
                n_segments: scores.len(),
                auroc: a,
                delong_99: delong_ci(&scores, &labels, 0.99).ok(),
            });
        }
    }
    Ok(CmaResult { bin_s, segments, curve })
}

// ---------------------------------------------------------------------------
// Regression metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub pearson_r: f64,
    /// AUROC of the raw predictions against (reference > 0.05 g/dL).
    pub auroc_at_limit: f64,
}

pub fn regression_eval(predictions: &[f64], reference: &[f64]) -> Result<RegressionMetrics, EvalError> {
    if predictions.len() != reference.len() || predictions.is_empty() {
        return Err(EvalError::Degenerate(format!(
            "paired inputs required, got {}/{}",
            predictions.len(),
            reference.len()
        )));
    }
    let mae = predictions
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r).abs())
        .sum::<f64>()
        / predictions.len() as f64;
    let r = stats::pearson(predictions, reference);
    if r.is_nan() {
        return Err(EvalError::Degenerate("zero-variance input for correlation".into()));
    }
    let labels: Vec<u8> = reference
        .iter()
        .map(|&v| u8::from(v > ABOVE_LIMIT_THRESHOLD_G_PER_DL))
        .collect();
    let auc = auroc(predictions, &labels)?;
    Ok(RegressionMetrics {
        mae,
        pearson_r: r,
        auroc_at_limit: auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1;
                if si > sj {
                    total += 1.0;
                } else if si == sj {
                    total += 0.5;
                }
            }
        }
        total / pairs as f64
    }

    #[test]
    fn curve_thresholds_round_trip_through_json() {
        let points = roc_points(&[0.9, 0.4, 0.4, 0.1], &[1, 1, 0, 0]).unwrap();
        assert!(points[0].threshold.is_infinite());
        let json = serde_json::to_string(&points).unwrap();
        let back: Vec<RocPoint> = serde_json::from_str(&json).unwrap();
        assert_eq!(points.len(), back.len());
        for (a, b) in points.iter().zip(&back) {
            assert_eq!(a.threshold.to_bits(), b.threshold.to_bits());
            assert_eq!(a.fpr.to_bits(), b.fpr.to_bits());
            assert_eq!(a.tpr.to_bits(), b.tpr.to_bits());
        }
    }

    #[test]
    fn auroc_reference_values() {
        let scores = [0.9, 0.8, 0.7, 0.85];
        let labels = [1, 1, 0, 0];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.75);
        // perfect separation
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        // total tie
        assert_eq!(auroc(&[0.5; 6], &[1, 1, 1, 0, 0, 0]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.random_range(2..=50);
            // coarse grid forces ties
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            if labels.iter().all(|&l| l == 1) || labels.iter().all(|&l| l == 0) {
                continue;
            }
            let fast = auroc(&scores, &labels).unwrap();
            let slow = brute_auroc(&scores, &labels);
            assert_eq!(fast, slow, "scores={scores:?} labels={labels:?}");
        }
    }

    #[test]
    fn auroc_invariant_under_monotone_transform() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.65];
        let labels = [0, 0, 1, 1, 0];
        let base = auroc(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let scaled: Vec<f64> = scores.iter().map(|s| 100.0 * s - 3.0).collect();
        assert_eq!(auroc(&exp, &labels).unwrap(), base);
        assert_eq!(auroc(&scaled, &labels).unwrap(), base);
    }

    #[test]
    fn auroc_label_complement() {
        let scores = [0.1, 0.5, 0.3, 0.9, 0.7];
        let labels = [0u8, 1, 0, 1, 1];
        let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let a = auroc(&scores, &labels).unwrap();
        let b = auroc(&scores, &flipped).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auprc_reference_values() {
        assert_eq!(auprc(&[0.9, 0.8, 0.2], &[1, 1, 0]).unwrap(), 1.0);
        // single positive ranked first
        assert_eq!(auprc(&[0.9, 0.8, 0.7], &[1, 0, 0]).unwrap(), 1.0);
        // all tied scores collapse to one threshold: AP = prevalence
        let ap = auprc(&[0.5; 4], &[1, 0, 0, 0]).unwrap();
        assert_eq!(ap, 0.25);
        assert!(auprc(&[0.5, 0.6], &[0, 0]).is_err());
    }

    #[test]
    fn auprc_of_random_scores_approaches_prevalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 3000;
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ap = auprc(&scores, &labels).unwrap();
        assert!((ap - 1.0 / 3.0).abs() < 0.03, "ap={ap}");
    }

    #[test]
    fn normal_quantile_reference_values() {
        assert!((normal_quantile(0.975) - 1.959964).abs() < 1e-5);
        assert!((normal_quantile(0.995) - 2.575829).abs() < 1e-5);
        assert!((normal_quantile(0.5)).abs() < 1e-9);
        assert!((normal_quantile(0.025) + 1.959964).abs() < 1e-5);
        // deep tail still finite and monotone
        assert!(normal_quantile(1e-6) < normal_quantile(1e-3));
    }

    #[test]
    fn delong_perfect_separation_is_degenerate_interval() {
        let scores = [0.9, 0.8, 0.85, 0.2, 0.1, 0.15];
        let labels = [1, 1, 1, 0, 0, 0];
        let ci = delong_ci(&scores, &labels, 0.99).unwrap();
        assert_eq!(ci.auroc, 1.0);
        assert_eq!(ci.variance, 0.0);
        assert_eq!((ci.low, ci.high), (1.0, 1.0));
    }

    #[test]
    fn delong_interval_nests_and_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gen = |n: usize, rng: &mut ChaCha8Rng| {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for i in 0..n {
                let pos = i % 2 == 0;
                let base = if pos { 0.6 } else { 0.4 };
                scores.push(base + 0.3 * (rng.random::<f64>() - 0.5));
                labels.push(u8::from(pos));
            }
            (scores, labels)
        };
        let (s1, l1) = gen(100, &mut rng);
        let ci95 = delong_ci(&s1, &l1, 0.95).unwrap();
        let ci99 = delong_ci(&s1, &l1, 0.99).unwrap();
        assert!(ci99.low <= ci95.low && ci95.high <= ci99.high);
        let (s2, l2) = gen(400, &mut rng);
        let big = delong_ci(&s2, &l2, 0.95).unwrap();
        let w1 = ci95.high - ci95.low;
        let w2 = big.high - big.low;
        // 4x the samples should roughly halve the width
        assert!(w2 < w1 * 0.75, "w1={w1} w2={w2}");
    }

    #[test]
    fn roc_and_pr_curves_are_monotone_sweeps() {
        let scores = [0.9, 0.7, 0.7, 0.5, 0.3, 0.2];
        let labels = [1, 1, 0, 1, 0, 0];
        let roc = roc_points(&scores, &labels).unwrap();
        assert_eq!(roc.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(roc.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        for w in roc.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        let pr = pr_points(&scores, &labels).unwrap();
        assert_eq!(pr.last().map(|p| p.recall), Some(1.0));
        for w in pr.windows(2) {
            assert!(w[1].recall >= w[0].recall);
        }
    }

    #[test]
    fn validation_size_rule() {
        assert_eq!(validation_size(53), 10); // 54 participants
        assert_eq!(validation_size(11), 2); // 12 participants
        assert_eq!(validation_size(21), 4);
        assert_eq!(validation_size(100), 10); // capped
        assert_eq!(validation_size(5), 2); // floored
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:02}")).collect()
    }

    #[test]
    fn loso_plan_partitions_and_is_deterministic() {
        let ids = ids(12);
        let plan = make_loso_plan(&ids, 42).unwrap();
        assert_eq!(plan.folds.len(), 12);
        for fold in &plan.folds {
            assert_eq!(fold.validation.len(), 2);
            assert_eq!(fold.train.len(), 9);
            assert!(!fold.train.contains(&fold.held_out));
            assert!(!fold.validation.contains(&fold.held_out));
            let mut all: Vec<&String> = fold.train.iter().chain(&fold.validation).collect();
            all.push(&fold.held_out);
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 12);
        }
        let again = make_loso_plan(&ids, 42).unwrap();
        assert_eq!(serde_json::to_string(&plan).unwrap(), serde_json::to_string(&again).unwrap());
        let other = make_loso_plan(&ids, 43).unwrap();
        assert_ne!(serde_json::to_string(&plan).unwrap(), serde_json::to_string(&other).unwrap());
    }

    #[test]
    fn loso_plan_large_cohort_uses_ten_validators() {
        let plan = make_loso_plan(&ids(54), 1).unwrap();
        assert_eq!(plan.folds.len(), 54);
        assert!(plan.folds.iter().all(|f| f.validation.len() == 10));
        assert!(make_loso_plan(&ids(3), 1).is_err());
    }

    fn pred(pid: &str, group: Group, phase: u8, score: f64, label: u8) -> WindowPrediction {
        WindowPrediction {
            participant_id: pid.into(),
            group,
            phase_index: phase,
            elapsed_s: 180.0,
            score,
            label,
        }
    }

    #[test]
    fn aggregate_single_participant_macro_equals_own_metric() {
        let preds = vec![
            pred("t1", Group::Treatment, 1, 0.2, 0),
            pred("t1", Group::Treatment, 2, 0.9, 1),
            pred("t1", Group::Treatment, 2, 0.8, 1),
            pred("t1", Group::Treatment, 1, 0.4, 0),
        ];
        let r = aggregate(&preds, Task::EarlyWarning).unwrap();
        let m = r.macro_auroc.unwrap();
        assert_eq!(m.n_participants, 1);
        assert_eq!(m.mean, 1.0);
        assert_eq!(m.std, 0.0);
        assert_eq!(r.pooled_treatment.auroc, 1.0);
        assert_eq!(r.pooled_treatment.n_windows, 4);
    }

    #[test]
    fn aggregate_macro_invariant_pooled_not() {
        // participant 2's scores rescaled by 0.1: per-participant order
        // untouched, cross-participant order scrambled
        let base = vec![
            pred("a", Group::Treatment, 2, 0.9, 1),
            pred("a", Group::Treatment, 1, 0.1, 0),
            pred("b", Group::Treatment, 2, 0.6, 1),
            pred("b", Group::Treatment, 1, 0.4, 0),
        ];
        let mut rescaled = base.clone();
        for p in rescaled.iter_mut().filter(|p| p.participant_id == "b") {
            p.score *= 0.1;
        }
        let r1 = aggregate(&base, Task::EarlyWarning).unwrap();
        let r2 = aggregate(&rescaled, Task::EarlyWarning).unwrap();
        assert_eq!(r1.macro_auroc.unwrap().mean, r2.macro_auroc.unwrap().mean);
        assert_eq!(r1.pooled_treatment.auroc, 1.0);
        assert_eq!(r2.pooled_treatment.auroc, 0.75);
    }

    #[test]
    fn aggregate_controls_lower_prevalence_baseline() {
        // treatment: 2/3 positive; controls: all negative, sized so the
        // pooled prevalence lands near 0.38
        let mut preds = Vec::new();
        for i in 0..120 {
            let label = u8::from(i % 3 != 0);
            preds.push(pred("t1", Group::Treatment, 1 + (i % 3 == 0) as u8, 0.5, label));
        }
        for i in 0..90 {
            preds.push(pred(&format!("c{}", i % 5), Group::Placebo, 1, 0.5, 0));
        }
        let r = aggregate(&preds, Task::EarlyWarning).unwrap();
        assert!((r.pooled_treatment.prevalence - 2.0 / 3.0).abs() < 1e-9);
        assert!((r.pooled_all.prevalence - 0.381).abs() < 0.01);
        assert!(r.pooled_all.prevalence < r.pooled_treatment.prevalence);
    }

    #[test]
    fn aggregate_excludes_single_class_participants() {
        let preds = vec![
            pred("a", Group::Treatment, 2, 0.9, 1),
            pred("a", Group::Treatment, 1, 0.1, 0),
            pred("b", Group::Treatment, 2, 0.7, 1), // only positives
            pred("c", Group::Placebo, 1, 0.5, 0),
        ];
        let r = aggregate(&preds, Task::EarlyWarning).unwrap();
        assert_eq!(r.excluded_single_class, vec!["b".to_string()]);
        assert_eq!(r.macro_auroc.unwrap().n_participants, 1);
    }

    fn mc(id: &str, group: Group, probs: [f64; 3], label: u8) -> MulticlassPrediction {
        MulticlassPrediction {
            participant_id: id.into(),
            group,
            phase_index: label + 1,
            elapsed_s: 180.0,
            probs: probs.to_vec(),
            label,
        }
    }

    #[test]
    fn multiclass_macro_ovr_matches_hand_computation() {
        // participant "a": class 0 vs rest separable, class 1 vs rest
        // inverted, class 2 vs rest separable.
        let preds = vec![
            mc("a", Group::Treatment, [0.8, 0.1, 0.1], 0),
            mc("a", Group::Treatment, [0.7, 0.2, 0.1], 0),
            mc("a", Group::Treatment, [0.1, 0.1, 0.8], 2),
            mc("a", Group::Treatment, [0.2, 0.4, 0.4], 1),
            mc("b", Group::Placebo, [0.5, 0.3, 0.2], 0),
            mc("b", Group::Placebo, [0.5, 0.3, 0.2], 1),
        ];
        let r = aggregate_multiclass(&preds, 3).unwrap();
        let a = &r.per_participant[0];
        assert_eq!(a.participant_id, "a");
        // class 0: scores 0.8,0.7 vs 0.1,0.2 -> 1.0; class 1: 0.4 vs
        // 0.1,0.2,0.1 -> 1.0; class 2: 0.8 vs 0.1,0.1,0.4 -> 1.0
        assert!((a.macro_auroc.unwrap() - 1.0).abs() < 1e-12);
        assert!((a.accuracy - 0.75).abs() < 1e-12); // [0.2,0.4,0.4] ties to class 2, label is 1
        // participant "b": identical scores for both labels -> every
        // one-vs-rest AUROC is 0.5
        let b = &r.per_participant[1];
        assert!((b.macro_auroc.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(r.group_macro_auroc.len(), 2);
        assert!((r.group_macro_auroc[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cma_running_mean_reference() {
        // one segment, one prediction per 15 s bin
        let mut preds = Vec::new();
        for (i, score) in [0.2, 0.4, 0.6].iter().enumerate() {
            preds.push(WindowPrediction {
                participant_id: "a".into(),
                group: Group::Treatment,
                phase_index: 2,
                elapsed_s: 180.0 + 15.0 * i as f64,
                score: *score,
                label: 1,
            });
        }
        let out = cma_smooth(&preds, 15.0, 180.0).unwrap();
        assert_eq!(out.segments.len(), 1);
        let vals: Vec<f64> = out.segments[0].points.iter().map(|(_, v)| *v).collect();
        assert_eq!(vals.len(), 3);
        assert!((vals[0] - 0.2).abs() < 1e-12);
        assert!((vals[1] - 0.3).abs() < 1e-12);
        assert!((vals[2] - 0.4).abs() < 1e-12);
        // first point lands one full window in
        assert_eq!(out.segments[0].points[0].0, 195.0);
    }

    #[test]
    fn cma_constant_predictions_stay_constant() {
        let mut preds = Vec::new();
        for pid in ["a", "b"] {
            let label = u8::from(pid == "a");
            for i in 0..20 {
                preds.push(WindowPrediction {
                    participant_id: pid.into(),
                    group: Group::Treatment,
                    phase_index: 2,
                    elapsed_s: 180.0 + 15.0 * i as f64,
                    score: if pid == "a" { 0.8 } else { 0.3 },
                    label,
                });
            }
        }
        let out = cma_smooth(&preds, 15.0, 180.0).unwrap();
        for seg in &out.segments {
            let first = seg.points[0].1;
            assert!(seg.points.iter().all(|(_, v)| (v - first).abs() < 1e-12));
        }
        // separable constants give a flat perfect curve
        assert!(out.curve.iter().all(|p| p.auroc == 1.0));
    }

    #[test]
    fn regression_metrics_reference_values() {
        let r = regression_eval(&[0.0, 0.04, 0.08], &[0.0, 0.04, 0.08]).unwrap();
        assert_eq!(r.mae, 0.0);
        assert!((r.pearson_r - 1.0).abs() < 1e-12);
        assert_eq!(r.auroc_at_limit, 1.0);

        let shifted = regression_eval(&[0.01, 0.05, 0.09], &[0.0, 0.04, 0.08]).unwrap();
        assert!((shifted.mae - 0.01).abs() < 1e-12);
        assert!((shifted.pearson_r - 1.0).abs() < 1e-12);

        let anti = regression_eval(&[1.0, 2.0], &[2.0, 1.0]);
        assert!(anti.is_err()); // no reference above the limit -> single class
        let anti = regression_eval(&[1.0, 2.0, 3.0], &[0.2, 0.1, 0.0]);
        // reference 0.2 and 0.1 exceed the limit, 0.0 does not
        let m = anti.unwrap();
        assert!((m.pearson_r + 1.0).abs() < 1e-12);
        assert_eq!(m.auroc_at_limit, 0.0);
    }
}
