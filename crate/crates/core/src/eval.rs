//! Downstream evaluation: frozen-model scoring of user-job pairs, ranking
//! metrics over per-anchor candidate lists, and the multitask ablation
//! runner.
//!
//! Metric conventions (the unit-test oracles recompute these from the same
//! definitions, independently):
//! - AUC: probability a random positive outscores a random negative, ties
//!   counted 1/2 (rank formulation), over every scored pair of the split.
//! - Recall@k: relevant-in-top-k / relevant-in-list. Precision@k divides
//!   by k even when the list is shorter. Binary gains; NDCG discounts by
//!   log2(rank+1) and normalizes by the ideal ordering truncated at k.
//! - Anchors without a single positive are excluded from rank metrics and
//!   counted in the report metadata.
//! - Ranking ties break by ascending item id, so reports are reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{downstream_positive, Corpus, JobId, Split, UserId};
use crate::encoder::apply_mlm_mask;
use crate::heads::{app_logit, Task};
use crate::hierarchy::DocSide;
use crate::model::{DocumentEmbedding, Model, ModelError};
use crate::rng::stream_rng;
use crate::trainer::{pretrain, TrainConfig, TrainError};

#[derive(Debug)]
pub enum EvalError {
    UnknownUser(UserId),
    UnknownJob(JobId),
    MissingSplit(Split),
    SingleClass,
    EmptyInput(String),
    Model(ModelError),
    Train(TrainError),
    Io(std::io::Error),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::UnknownUser(u) => write!(f, "unknown user {u}"),
            EvalError::UnknownJob(j) => write!(f, "unknown job {j}"),
            EvalError::MissingSplit(s) => write!(f, "corpus has no {s:?} interactions"),
            EvalError::SingleClass => write!(f, "AUC needs at least one positive and one negative"),
            EvalError::EmptyInput(m) => write!(f, "empty evaluation input: {m}"),
            EvalError::Model(e) => write!(f, "{e}"),
            EvalError::Train(e) => write!(f, "{e}"),
            EvalError::Io(e) => write!(f, "eval io error: {e}"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<ModelError> for EvalError {
    fn from(e: ModelError) -> Self {
        EvalError::Model(e)
    }
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        EvalError::Train(e)
    }
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e)
    }
}

// ── scoring ──────────────────────────────────────────────────────────

/// One scored user-job pair with its downstream label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub user_id: UserId,
    pub job_id: JobId,
    pub score: f64,
    pub label: bool,
}

/// Score pairs with the frozen model: sigmoid of the application head on
/// the final pair embeddings. Each distinct document is embedded once and
/// cached detached; only the cheap cross-attention runs per pair.
pub fn score_pairs(
    model: &Model<f64>,
    corpus: &Corpus,
    pairs: &[(UserId, JobId, bool)],
) -> Result<Vec<ScoredPair>, EvalError> {
    let mut user_cache: BTreeMap<UserId, DocumentEmbedding<f64>> = BTreeMap::new();
    let mut job_cache: BTreeMap<JobId, DocumentEmbedding<f64>> = BTreeMap::new();

    for (u, j, _) in pairs {
        if let std::collections::btree_map::Entry::Vacant(slot) = user_cache.entry(*u) {
            let profile = corpus.profile(*u).ok_or(EvalError::UnknownUser(*u))?;
            slot.insert(model.embed_document(DocSide::Profile, &profile.sections)?.detach());
        }
        if let std::collections::btree_map::Entry::Vacant(slot) = job_cache.entry(*j) {
            let job = corpus.job(*j).ok_or(EvalError::UnknownJob(*j))?;
            slot.insert(model.embed_document(DocSide::Job, &job.sections)?.detach());
        }
    }

    let mut scored = Vec::with_capacity(pairs.len());
    for &(u, j, label) in pairs {
        let user = &user_cache[&u];
        let job = &job_cache[&j];
        let pair = model.embed_pair(user, job)?;
        let logit = app_logit(&model.heads, &pair.f_user, &pair.f_job)
            .map_err(|e| EvalError::Model(ModelError::Hierarchy(e.into())))?;
        let z = logit.item();
        let score = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
        scored.push(ScoredPair { user_id: u, job_id: j, score, label });
    }
    Ok(scored)
}

// ── AUC ──────────────────────────────────────────────────────────────

/// Mann-Whitney AUC with average ranks for ties.
pub fn auc(scored: &[(f64, bool)]) -> Result<f64, EvalError> {
    let positives = scored.iter().filter(|(_, l)| *l).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.partial_cmp(&scored[b].0).expect("finite scores"));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        // ranks are 1-based; tied entries share the average rank
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if scored[idx].1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

// ── ranked lists and metrics ─────────────────────────────────────────

/// Items of one anchor, sorted by score descending with ties broken by
/// ascending item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub anchor: String,
    /// (item id, score, label), already in rank order.
    pub items: Vec<(u32, f64, bool)>,
}

impl RankedList {
    pub fn new(anchor: String, mut items: Vec<(u32, f64, bool)>) -> Result<Self, EvalError> {
        if items.is_empty() {
            return Err(EvalError::EmptyInput(format!("ranked list for {anchor}")));
        }
        items.sort_by(|a, b| {
            b.1.partial_cmp(&a.1).expect("finite scores").then_with(|| a.0.cmp(&b.0))
        });
        Ok(RankedList { anchor, items })
    }

    pub fn has_positive(&self) -> bool {
        self.items.iter().any(|(_, _, l)| *l)
    }
}

/// Per-anchor ranking metrics averaged over lists with at least one
/// positive. Lists without positives are skipped and counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub recall_at_3: f64,
    pub precision_at_3: f64,
    pub ndcg_at_3: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_25: f64,
    pub mrr: f64,
    pub hr_at_1: f64,
    pub n_anchors: usize,
    pub n_skipped: usize,
}

fn dcg_at_k(labels: &[bool], k: usize) -> f64 {
    labels
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, l)| **l)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

fn ndcg_at_k(labels: &[bool], k: usize) -> f64 {
    let n_pos = labels.iter().filter(|l| **l).count();
    let ideal: Vec<bool> = (0..labels.len()).map(|i| i < n_pos).collect();
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg_at_k(labels, k) / idcg
    }
}

/// Metrics for one list (exposed for the oracle tests).
pub fn list_metrics(list: &RankedList) -> RankingMetrics {
    let labels: Vec<bool> = list.items.iter().map(|(_, _, l)| *l).collect();
    let total_pos = labels.iter().filter(|l| **l).count();
    let hits3 = labels.iter().take(3).filter(|l| **l).count();
    let first_pos = labels.iter().position(|l| *l);
    RankingMetrics {
        recall_at_3: hits3 as f64 / total_pos as f64,
        precision_at_3: hits3 as f64 / 3.0,
        ndcg_at_3: ndcg_at_k(&labels, 3),
        ndcg_at_5: ndcg_at_k(&labels, 5),
        ndcg_at_25: ndcg_at_k(&labels, 25),
        mrr: first_pos.map_or(0.0, |r| 1.0 / (r + 1) as f64),
        hr_at_1: if labels[0] { 1.0 } else { 0.0 },
        n_anchors: 1,
        n_skipped: 0,
    }
}

/// Average the per-list metrics over anchors with positives.
pub fn ranking_metrics(lists: &[RankedList]) -> Result<RankingMetrics, EvalError> {
    if lists.is_empty() {
        return Err(EvalError::EmptyInput("no ranked lists".into()));
    }
    let mut acc = RankingMetrics {
        recall_at_3: 0.0,
        precision_at_3: 0.0,
        ndcg_at_3: 0.0,
        ndcg_at_5: 0.0,
        ndcg_at_25: 0.0,
        mrr: 0.0,
        hr_at_1: 0.0,
        n_anchors: 0,
        n_skipped: 0,
    };
    for list in lists {
        if !list.has_positive() {
            acc.n_skipped += 1;
            continue;
        }
        let m = list_metrics(list);
        acc.recall_at_3 += m.recall_at_3;
        acc.precision_at_3 += m.precision_at_3;
        acc.ndcg_at_3 += m.ndcg_at_3;
        acc.ndcg_at_5 += m.ndcg_at_5;
        acc.ndcg_at_25 += m.ndcg_at_25;
        acc.mrr += m.mrr;
        acc.hr_at_1 += m.hr_at_1;
        acc.n_anchors += 1;
    }
    if acc.n_anchors == 0 {
        return Err(EvalError::EmptyInput("every ranked list lacks positives".into()));
    }
    let n = acc.n_anchors as f64;
    acc.recall_at_3 /= n;
    acc.precision_at_3 /= n;
    acc.ndcg_at_3 /= n;
    acc.ndcg_at_5 /= n;
    acc.ndcg_at_25 /= n;
    acc.mrr /= n;
    acc.hr_at_1 /= n;
    Ok(acc)
}

// ── downstream runs ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownstreamTask {
    JobRec,
    CandidateRec,
}

impl fmt::Display for DownstreamTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DownstreamTask::JobRec => write!(f, "job_rec"),
            DownstreamTask::CandidateRec => write!(f, "candidate_rec"),
        }
    }
}

/// Full per-task evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: DownstreamTask,
    pub auc: f64,
    pub recall_at_3: f64,
    pub precision_at_3: f64,
    pub ndcg_at_3: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_25: f64,
    pub mrr: f64,
    pub hr_at_1: f64,
    pub n_anchors: usize,
    pub metadata: ReportMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub n_pairs: usize,
    /// Anchors excluded from rank metrics for lack of a positive item.
    pub n_skipped_anchors: usize,
    pub corpus_hash: String,
    /// Candidate pools are the full downstream split grouped per anchor.
    pub pool: String,
}

/// Evaluate one downstream task with the frozen model. Candidate
/// recommendation reuses the same scorer with anchor roles swapped: jobs
/// anchor lists of users.
pub fn run_downstream(
    model: &Model<f64>,
    corpus: &Corpus,
    task: DownstreamTask,
) -> Result<MetricsReport, EvalError> {
    let split = match task {
        DownstreamTask::JobRec => Split::DownstreamJobrec,
        DownstreamTask::CandidateRec => Split::DownstreamCandrec,
    };
    let rows = corpus.interactions_in_split(split);
    if rows.is_empty() {
        return Err(EvalError::MissingSplit(split));
    }
    let pairs: Vec<(UserId, JobId, bool)> =
        rows.iter().map(|i| (i.user_id, i.job_id, downstream_positive(i.action))).collect();
    let scored = score_pairs(model, corpus, &pairs)?;

    let auc_value = auc(&scored.iter().map(|s| (s.score, s.label)).collect::<Vec<_>>())?;

    let mut lists_by_anchor: BTreeMap<u32, Vec<(u32, f64, bool)>> = BTreeMap::new();
    for s in &scored {
        match task {
            DownstreamTask::JobRec => {
                lists_by_anchor.entry(s.user_id.0).or_default().push((s.job_id.0, s.score, s.label));
            }
            DownstreamTask::CandidateRec => {
                lists_by_anchor.entry(s.job_id.0).or_default().push((s.user_id.0, s.score, s.label));
            }
        }
    }
    let lists: Vec<RankedList> = lists_by_anchor
        .into_iter()
        .map(|(anchor, items)| {
            let name = match task {
                DownstreamTask::JobRec => format!("u{anchor}"),
                DownstreamTask::CandidateRec => format!("j{anchor}"),
            };
            RankedList::new(name, items)
        })
        .collect::<Result<_, _>>()?;
    let rank = ranking_metrics(&lists)?;

    Ok(MetricsReport {
        task,
        auc: auc_value,
        recall_at_3: rank.recall_at_3,
        precision_at_3: rank.precision_at_3,
        ndcg_at_3: rank.ndcg_at_3,
        ndcg_at_5: rank.ndcg_at_5,
        ndcg_at_25: rank.ndcg_at_25,
        mrr: rank.mrr,
        hr_at_1: rank.hr_at_1,
        n_anchors: rank.n_anchors,
        metadata: ReportMeta {
            n_pairs: scored.len(),
            n_skipped_anchors: rank.n_skipped,
            corpus_hash: corpus.content_hash(),
            pool: "all downstream-split pairs sharing the anchor".into(),
        },
    })
}

/// Job-recommendation AUC on the validation half of the anchors (users
/// with even index in sorted order). The grid search selects on this.
pub fn job_rec_validation_auc(model: &Model<f64>, corpus: &Corpus) -> Result<f64, EvalError> {
    let users: Vec<UserId> =
        corpus.users_in_split(Split::DownstreamJobrec).into_iter().collect();
    if users.is_empty() {
        return Err(EvalError::MissingSplit(Split::DownstreamJobrec));
    }
    let validation: BTreeSet<UserId> = users.iter().copied().step_by(2).collect();
    let pairs: Vec<(UserId, JobId, bool)> = corpus
        .interactions_in_split(Split::DownstreamJobrec)
        .iter()
        .filter(|i| validation.contains(&i.user_id))
        .map(|i| (i.user_id, i.job_id, downstream_positive(i.action)))
        .collect();
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput("validation slice".into()));
    }
    let scored = score_pairs(model, corpus, &pairs)?;
    auc(&scored.iter().map(|s| (s.score, s.label)).collect::<Vec<_>>())
}

// ── auxiliary accuracy probes ────────────────────────────────────────

/// Top-1 masked-token accuracy over freshly masked sentences sampled from
/// the corpus (seeded). Chance level is 1/vocab.
pub fn mlm_top1_accuracy(
    model: &Model<f64>,
    corpus: &Corpus,
    n_sentences: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    let mut pool: Vec<&Vec<u32>> = Vec::new();
    for p in &corpus.profiles {
        for s in &p.sections {
            pool.extend(s.sentences.iter());
        }
    }
    for j in &corpus.jobs {
        for s in &j.sections {
            pool.extend(s.sentences.iter());
        }
    }
    if pool.is_empty() {
        return Err(EvalError::EmptyInput("no sentences".into()));
    }
    let mut rng = stream_rng(seed, "eval/mlm");
    pool.shuffle(&mut rng);

    let vocab = model.config.encoder.vocab_size;
    let d = model.config.encoder.hidden_dim;
    let mlm_w = model.heads.mlm_w.to_vec();
    let mlm_b = model.heads.mlm_b.to_vec();
    let mut correct = 0usize;
    let mut total = 0usize;
    for sentence in pool.into_iter().take(n_sentences) {
        let masked = apply_mlm_mask(&model.config.encoder, sentence, &mut rng)
            .map_err(|e| EvalError::Model(ModelError::Encoder(e)))?;
        let encoded = model
            .encoder
            .encode_sentence(&masked.masked_tokens)
            .map_err(|e| EvalError::Model(ModelError::Encoder(e)))?;
        let hidden = encoded.hidden.to_vec();
        for (&pos, &target) in masked.target_positions.iter().zip(&masked.target_ids) {
            let row = &hidden[(pos + encoded.content_offset) * d..(pos + encoded.content_offset + 1) * d];
            let mut best = (0usize, f64::NEG_INFINITY);
            for c in 0..vocab {
                let mut z = mlm_b[c];
                for (i, h) in row.iter().enumerate() {
                    z += h * mlm_w[i * vocab + c];
                }
                if z > best.1 {
                    best = (c, z);
                }
            }
            if best.0 == target as usize {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Section-name classification accuracy over profiles of the given users
/// (use a downstream split for held-out sections).
pub fn exp_accuracy(
    model: &Model<f64>,
    corpus: &Corpus,
    users: &BTreeSet<UserId>,
    max_sections: usize,
) -> Result<f64, EvalError> {
    let exp_w = model.heads.exp_w.to_vec();
    let exp_b = model.heads.exp_b.to_vec();
    let d = model.config.encoder.hidden_dim;
    let mut correct = 0usize;
    let mut total = 0usize;
    'outer: for profile in corpus.profiles.iter().filter(|p| users.contains(&p.user_id)) {
        for section in &profile.sections {
            if total >= max_sections {
                break 'outer;
            }
            let emb = model.embed_section(section)?.to_vec();
            let mut best = (0usize, f64::NEG_INFINITY);
            for c in 0..5 {
                let mut z = exp_b[c];
                for i in 0..d {
                    z += emb[i] * exp_w[i * 5 + c];
                }
                if z > best.1 {
                    best = (c, z);
                }
            }
            if Some(best.0) == section.name.profile_class() {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(EvalError::EmptyInput("no held-out sections".into()));
    }
    Ok(correct as f64 / total as f64)
}

// ── ablation ─────────────────────────────────────────────────────────

/// Relative change (%) of each headline metric when one task is removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub without: Task,
    pub auc_delta_pct: f64,
    pub hr_at_1_delta_pct: f64,
    pub ndcg_at_5_delta_pct: f64,
    pub ndcg_at_25_delta_pct: f64,
    pub mrr_delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline: MetricsReport,
    pub rows: Vec<AblationRow>,
    /// Whether removing the application task hurt AUC the most. Observed
    /// and logged, never asserted: a directional expectation only.
    pub app_worst_auc: bool,
}

fn delta_pct(ablated: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        (ablated - baseline) / baseline * 100.0
    }
}

/// Train the full-task baseline plus one run per removed task and report
/// job-recommendation metric deltas against the baseline.
pub fn run_ablation(corpus: &Corpus, base: &TrainConfig) -> Result<AblationReport, EvalError> {
    let (baseline_model, _, _) = pretrain(corpus, base, None)?;
    let baseline = run_downstream(&baseline_model, corpus, DownstreamTask::JobRec)?;

    let mut rows = Vec::with_capacity(Task::ALL.len());
    for task in Task::ALL {
        let mut config = base.clone();
        config.lambda = base.lambda.without(task);
        let (model, _, _) = pretrain(corpus, &config, None)?;
        let report = run_downstream(&model, corpus, DownstreamTask::JobRec)?;
        rows.push(AblationRow {
            without: task,
            auc_delta_pct: delta_pct(report.auc, baseline.auc),
            hr_at_1_delta_pct: delta_pct(report.hr_at_1, baseline.hr_at_1),
            ndcg_at_5_delta_pct: delta_pct(report.ndcg_at_5, baseline.ndcg_at_5),
            ndcg_at_25_delta_pct: delta_pct(report.ndcg_at_25, baseline.ndcg_at_25),
            mrr_delta_pct: delta_pct(report.mrr, baseline.mrr),
        });
    }

    let worst = rows
        .iter()
        .min_by(|a, b| a.auc_delta_pct.partial_cmp(&b.auc_delta_pct).expect("finite deltas"))
        .map(|r| r.without);
    Ok(AblationReport { baseline, rows, app_worst_auc: worst == Some(Task::App) })
}

// ── text tables ──────────────────────────────────────────────────────

fn fmt_pct(v: f64) -> String {
    format!("{v:+.3}%")
}

/// Aligned plain-text table for one metrics report.
pub fn report_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("Task: {}\n", report.task));
    out.push_str(&format!(
        "{:<14}{:<12}{:<14}{:<10}{:<10}{:<10}{:<10}{:<10}\n",
        "AUC", "Recall@3", "Precision@3", "NDCG@3", "NDCG@5", "NDCG@25", "MRR", "HR@1"
    ));
    out.push_str(&format!(
        "{:<14.3}{:<12.3}{:<14.3}{:<10.3}{:<10.3}{:<10.3}{:<10.3}{:<10.3}\n",
        report.auc,
        report.recall_at_3,
        report.precision_at_3,
        report.ndcg_at_3,
        report.ndcg_at_5,
        report.ndcg_at_25,
        report.mrr,
        report.hr_at_1
    ));
    out.push_str(&format!(
        "anchors: {}   pairs: {}   skipped anchors: {}\n",
        report.n_anchors, report.metadata.n_pairs, report.metadata.n_skipped_anchors
    ));
    out
}

/// Aligned ablation table: relative deltas per removed task, sign-prefixed
/// with three decimals.
pub fn ablation_table(report: &AblationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
        "Models", "AUC", "HR@1", "NDCG@5", "NDCG@25", "MRR"
    ));
    for row in &report.rows {
        out.push_str(&format!(
            "{:<10}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
            format!("w/o {}", row.without),
            fmt_pct(row.auc_delta_pct),
            fmt_pct(row.hr_at_1_delta_pct),
            fmt_pct(row.ndcg_at_5_delta_pct),
            fmt_pct(row.ndcg_at_25_delta_pct),
            fmt_pct(row.mrr_delta_pct),
        ));
    }
    out.push_str(&format!(
        "soft expectation (w/o App worst AUC): {}\n",
        if report.app_worst_auc { "met" } else { "not met" }
    ));
    out
}

/// One JSON line per document for embedding export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub level: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<String>,
    pub vector: Vec<f64>,
}

/// Export embeddings, one JSON line per record.
///
/// `individual` emits one record per document. `final` embeddings only
/// exist per (user, job) pair, so that level emits two records per
/// interaction, each tagged with its partner.
pub fn export_embeddings(
    model: &Model<f64>,
    corpus: &Corpus,
    level: &str,
    path: &Path,
) -> Result<usize, EvalError> {
    use std::io::Write;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut count = 0usize;
    match level {
        "individual" => {
            for p in &corpus.profiles {
                let emb = model.embed_document(DocSide::Profile, &p.sections)?;
                let record = EmbeddingRecord {
                    id: p.user_id.to_string(),
                    level: "individual".into(),
                    pair: None,
                    vector: emb.individual.fused.to_vec(),
                };
                writeln!(file, "{}", serde_json::to_string(&record).expect("record serializes"))?;
                count += 1;
            }
            for j in &corpus.jobs {
                let emb = model.embed_document(DocSide::Job, &j.sections)?;
                let record = EmbeddingRecord {
                    id: j.job_id.to_string(),
                    level: "individual".into(),
                    pair: None,
                    vector: emb.individual.fused.to_vec(),
                };
                writeln!(file, "{}", serde_json::to_string(&record).expect("record serializes"))?;
                count += 1;
            }
        }
        "final" => {
            let mut user_cache: BTreeMap<UserId, DocumentEmbedding<f64>> = BTreeMap::new();
            let mut job_cache: BTreeMap<JobId, DocumentEmbedding<f64>> = BTreeMap::new();
            for inter in &corpus.interactions {
                if let std::collections::btree_map::Entry::Vacant(slot) = user_cache.entry(inter.user_id) {
                    let p = corpus.profile(inter.user_id).ok_or(EvalError::UnknownUser(inter.user_id))?;
                    slot.insert(model.embed_document(DocSide::Profile, &p.sections)?.detach());
                }
                if let std::collections::btree_map::Entry::Vacant(slot) = job_cache.entry(inter.job_id) {
                    let j = corpus.job(inter.job_id).ok_or(EvalError::UnknownJob(inter.job_id))?;
                    slot.insert(model.embed_document(DocSide::Job, &j.sections)?.detach());
                }
                let pair =
                    model.embed_pair(&user_cache[&inter.user_id], &job_cache[&inter.job_id])?;
                for (id, partner, vector) in [
                    (inter.user_id.to_string(), inter.job_id.to_string(), pair.f_user.to_vec()),
                    (inter.job_id.to_string(), inter.user_id.to_string(), pair.f_job.to_vec()),
                ] {
                    let record = EmbeddingRecord {
                        id,
                        level: "final".into(),
                        pair: Some(partner),
                        vector,
                    };
                    writeln!(file, "{}", serde_json::to_string(&record).expect("record serializes"))?;
                    count += 1;
                }
            }
        }
        other => {
            return Err(EvalError::EmptyInput(format!(
                "unknown embedding level {other}; use individual or final"
            )))
        }
    }
    Ok(count)
}

/// Embedding export levels accepted by [`export_embeddings`].
pub const EXPORT_LEVELS: [&str; 2] = ["individual", "final"];
