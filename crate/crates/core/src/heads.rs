//! The four pretraining task heads and their losses.
//!
//! - masked-token prediction over per-token hidden states (sentence level)
//! - section-name classification over profile section embeddings
//! - skill-set validation over skill-masked individual embeddings, one
//!   one-vs-all binary term per skill class, with separate heads for the
//!   profile and job sides
//! - application classification over final pair embeddings
//!
//! All losses use log-sum-exp / softplus formulations; nothing clips.

use std::fmt;

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{pretrain_label, Action, PretrainLabel, SectionName};
use crate::encoder::{param, zeros_leaf, Encoder, EncoderError, MaskedSentence};
use crate::hierarchy::{DocSide, HierarchyError, IndividualEmbedding, PairEmbeddings};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

/// The four pretraining tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    Mlm,
    Exp,
    Att,
    App,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Mlm, Task::Exp, Task::Att, Task::App];
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Task::Mlm => "MLM",
            Task::Exp => "Exp",
            Task::Att => "Att",
            Task::App => "App",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub enum HeadError {
    EmptyBatch { task: Task },
    /// Section-name classification is defined on profile sections only.
    JobSectionInExpTask { name: SectionName },
    NotAProfileSection { name: SectionName },
    /// The attribute head refuses embeddings built without skill masking.
    SkillsNotMasked,
    WrongSide { expected: DocSide },
    /// An excluded (skip) interaction reached the application batch.
    ExcludedRow,
    SkillOutOfRange { skill: u32, k_skills: usize },
    AllZeroWeights,
    /// A task has positive weight but no loss was provided for it.
    MissingLoss { task: Task },
    Encoder(EncoderError),
    Hierarchy(HierarchyError),
    Tensor(TensorError),
}

impl fmt::Display for HeadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadError::EmptyBatch { task } => write!(f, "{task}: empty batch"),
            HeadError::JobSectionInExpTask { name } => {
                write!(f, "section-name classification got a job section ({name}); the task is defined on profiles only")
            }
            HeadError::NotAProfileSection { name } => {
                write!(f, "{name} is not a profile section name")
            }
            HeadError::SkillsNotMasked => {
                write!(f, "attribute validation requires skill-masked individual embeddings")
            }
            HeadError::WrongSide { expected } => write!(f, "expected a {expected:?}-side sample"),
            HeadError::ExcludedRow => {
                write!(f, "application batch contains a skip row; those are excluded from pretraining")
            }
            HeadError::SkillOutOfRange { skill, k_skills } => {
                write!(f, "skill id {skill} out of range for k_skills {k_skills}")
            }
            HeadError::AllZeroWeights => write!(f, "all task weights are zero"),
            HeadError::MissingLoss { task } => {
                write!(f, "task {task} has positive weight but no loss value")
            }
            HeadError::Encoder(e) => write!(f, "{e}"),
            HeadError::Hierarchy(e) => write!(f, "{e}"),
            HeadError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for HeadError {}

impl From<EncoderError> for HeadError {
    fn from(e: EncoderError) -> Self {
        HeadError::Encoder(e)
    }
}

impl From<HierarchyError> for HeadError {
    fn from(e: HierarchyError) -> Self {
        HeadError::Hierarchy(e)
    }
}

impl From<TensorError> for HeadError {
    fn from(e: TensorError) -> Self {
        HeadError::Tensor(e)
    }
}

// ── parameters ───────────────────────────────────────────────────────

/// All head weights. Every head is a single linear layer on its input.
#[derive(Clone)]
pub struct HeadParams<S: Scalar> {
    pub mlm_w: Tensor<S>,
    pub mlm_b: Tensor<S>,
    pub exp_w: Tensor<S>,
    pub exp_b: Tensor<S>,
    pub att_profile_w: Tensor<S>,
    pub att_profile_b: Tensor<S>,
    pub att_job_w: Tensor<S>,
    pub att_job_b: Tensor<S>,
    pub app_w: Tensor<S>,
    pub app_b: Tensor<S>,
}

pub const N_PROFILE_CLASSES: usize = 5;

impl<S: Scalar> HeadParams<S> {
    pub fn new(hidden_dim: usize, vocab_size: usize, k_skills: usize, rng: &mut ChaCha12Rng) -> Self {
        let d = hidden_dim;
        HeadParams {
            mlm_w: param(rng, vec![d, vocab_size]),
            mlm_b: zeros_leaf(vec![vocab_size]),
            exp_w: param(rng, vec![d, N_PROFILE_CLASSES]),
            exp_b: zeros_leaf(vec![N_PROFILE_CLASSES]),
            att_profile_w: param(rng, vec![d, k_skills]),
            att_profile_b: zeros_leaf(vec![k_skills]),
            att_job_w: param(rng, vec![d, k_skills]),
            att_job_b: zeros_leaf(vec![k_skills]),
            app_w: param(rng, vec![2 * d, 1]),
            app_b: zeros_leaf(vec![1]),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<S>)> {
        vec![
            ("heads.mlm_w".into(), self.mlm_w.clone()),
            ("heads.mlm_b".into(), self.mlm_b.clone()),
            ("heads.exp_w".into(), self.exp_w.clone()),
            ("heads.exp_b".into(), self.exp_b.clone()),
            ("heads.att_profile_w".into(), self.att_profile_w.clone()),
            ("heads.att_profile_b".into(), self.att_profile_b.clone()),
            ("heads.att_job_w".into(), self.att_job_w.clone()),
            ("heads.att_job_b".into(), self.att_job_b.clone()),
            ("heads.app_w".into(), self.app_w.clone()),
            ("heads.app_b".into(), self.app_b.clone()),
        ]
    }
}

// ── shared loss kernels ──────────────────────────────────────────────

/// Mean softmax cross-entropy over rows of `logits` against class indices.
pub fn cross_entropy_mean<S: Scalar>(
    logits: &Tensor<S>,
    targets: &[usize],
) -> Result<Tensor<S>, TensorError> {
    let picked = logits.log_softmax_over_axis(1)?.pick_per_row(targets)?;
    Ok(picked.mean_all().scale(-S::one()))
}

/// Mean binary cross-entropy with logits over every element:
/// `mean(softplus(z) - z*y)`, the stable rearrangement of
/// `-y ln σ(z) - (1-y) ln(1-σ(z))`.
pub fn bce_with_logits_mean<S: Scalar>(
    logits: &Tensor<S>,
    targets: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    let zy = logits.mul(targets)?;
    logits.softplus().sub(&zy)?.mean_all().sum_all().reshape(vec![]) // keep scalar shape
}

// ── task batches and losses ──────────────────────────────────────────

/// Masked sentences for one masked-token prediction step.
#[derive(Debug, Clone)]
pub struct MlmBatch {
    pub sentences: Vec<MaskedSentence>,
}

/// Masked-token prediction: encode each masked sentence, project the hidden
/// states at the selected positions to the vocabulary, and average the
/// cross-entropy over every masked position in the batch.
pub fn loss_mlm<S: Scalar>(
    encoder: &Encoder<S>,
    heads: &HeadParams<S>,
    batch: &MlmBatch,
) -> Result<Tensor<S>, HeadError> {
    let mut rows: Vec<Tensor<S>> = Vec::new();
    let mut targets: Vec<usize> = Vec::new();
    for sentence in &batch.sentences {
        let encoded = encoder.encode_sentence(&sentence.masked_tokens)?;
        let d = encoder.config.hidden_dim;
        for (&pos, &id) in sentence.target_positions.iter().zip(&sentence.target_ids) {
            let row = encoded
                .hidden
                .gather_rows(&[pos + encoded.content_offset])?
                .reshape(vec![d])?;
            rows.push(row);
            targets.push(id as usize);
        }
    }
    if rows.is_empty() {
        return Err(HeadError::EmptyBatch { task: Task::Mlm });
    }
    let stacked = Tensor::stack_rows(&rows.iter().collect::<Vec<_>>())?;
    let logits = stacked.matmul(&heads.mlm_w)?.add_row(&heads.mlm_b)?;
    Ok(cross_entropy_mean(&logits, &targets)?)
}

/// One section embedding with its provenance for section-name prediction.
pub struct ExpSample<S: Scalar> {
    pub embedding: Tensor<S>,
    pub name: SectionName,
    pub side: DocSide,
}

/// Section-name classification over the five profile section names.
/// Job-side samples are rejected: the task is defined on profiles.
pub fn loss_exp<S: Scalar>(
    heads: &HeadParams<S>,
    samples: &[ExpSample<S>],
) -> Result<Tensor<S>, HeadError> {
    if samples.is_empty() {
        return Err(HeadError::EmptyBatch { task: Task::Exp });
    }
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        if s.side == DocSide::Job {
            return Err(HeadError::JobSectionInExpTask { name: s.name });
        }
        let class = s.name.profile_class().ok_or(HeadError::NotAProfileSection { name: s.name })?;
        targets.push(class);
    }
    let rows: Vec<&Tensor<S>> = samples.iter().map(|s| &s.embedding).collect();
    let stacked = Tensor::stack_rows(&rows)?;
    let logits = stacked.matmul(&heads.exp_w)?.add_row(&heads.exp_b)?;
    Ok(cross_entropy_mean(&logits, &targets)?)
}

/// A skill-masked individual embedding and the skill ids it must predict.
pub struct AttSample<S: Scalar> {
    pub individual: IndividualEmbedding<S>,
    pub skills: Vec<u32>,
}

/// Skill validation for one document side: sigmoid one-vs-all binary
/// cross-entropy against the multi-hot skill targets, averaged over samples
/// and skill classes. Inputs must be skill-masked (enforced by provenance).
pub fn loss_att<S: Scalar>(
    heads: &HeadParams<S>,
    samples: &[AttSample<S>],
    side: DocSide,
    k_skills: usize,
) -> Result<Tensor<S>, HeadError> {
    if samples.is_empty() {
        return Err(HeadError::EmptyBatch { task: Task::Att });
    }
    let mut target_data: Vec<S> = Vec::with_capacity(samples.len() * k_skills);
    for s in samples {
        if !s.individual.skills_masked {
            return Err(HeadError::SkillsNotMasked);
        }
        let mut row = vec![S::zero(); k_skills];
        for &skill in &s.skills {
            if skill as usize >= k_skills {
                return Err(HeadError::SkillOutOfRange { skill, k_skills });
            }
            row[skill as usize] = S::one();
        }
        target_data.extend_from_slice(&row);
    }
    let rows: Vec<&Tensor<S>> = samples.iter().map(|s| &s.individual.fused).collect();
    let stacked = Tensor::stack_rows(&rows)?;
    let (w, b) = match side {
        DocSide::Profile => (&heads.att_profile_w, &heads.att_profile_b),
        DocSide::Job => (&heads.att_job_w, &heads.att_job_b),
    };
    let logits = stacked.matmul(w)?.add_row(b)?;
    let targets = Tensor::constant(target_data, vec![samples.len(), k_skills])?;
    Ok(bce_with_logits_mean(&logits, &targets)?)
}

/// One scored pair for application classification.
pub struct AppSample<S: Scalar> {
    pub pair: PairEmbeddings<S>,
    pub action: Action,
}

/// The application logit for one pair: a single linear layer on the
/// concatenated final embeddings. Also reused as the downstream scorer.
pub fn app_logit<S: Scalar>(
    heads: &HeadParams<S>,
    f_user: &Tensor<S>,
    f_job: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    let d2 = f_user.numel() + f_job.numel();
    Tensor::concat(&[f_user, f_job])?
        .reshape(vec![1, d2])?
        .matmul(&heads.app_w)?
        .add_row(&heads.app_b)?
        .reshape(vec![])
}

/// Application classification: binary cross-entropy of the sigmoid output
/// under the pretraining label policy. Skip rows are an error here — the
/// batch builder must have excluded them.
pub fn loss_app<S: Scalar>(
    heads: &HeadParams<S>,
    samples: &[AppSample<S>],
) -> Result<Tensor<S>, HeadError> {
    if samples.is_empty() {
        return Err(HeadError::EmptyBatch { task: Task::App });
    }
    let mut logits: Vec<Tensor<S>> = Vec::with_capacity(samples.len());
    let mut target_data: Vec<S> = Vec::with_capacity(samples.len());
    for s in samples {
        let label = match pretrain_label(s.action) {
            PretrainLabel::Positive => S::one(),
            PretrainLabel::Negative => S::zero(),
            PretrainLabel::Excluded => return Err(HeadError::ExcludedRow),
        };
        target_data.push(label);
        logits.push(app_logit(heads, &s.pair.f_user, &s.pair.f_job)?.reshape(vec![1])?);
    }
    let z = Tensor::concat(&logits.iter().collect::<Vec<_>>())?;
    let targets = Tensor::constant(target_data, vec![samples.len()])?;
    Ok(bce_with_logits_mean(&z, &targets)?)
}

// ── joint objective ──────────────────────────────────────────────────

fn default_weight() -> f64 {
    1.0
}

/// Per-task loss weights. A weight of zero removes the task from the
/// objective entirely (its batch need not even be built), which is the
/// ablation mechanism. Unspecified weights default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(default = "default_weight")]
    pub mlm: f64,
    #[serde(default = "default_weight")]
    pub exp: f64,
    #[serde(default = "default_weight")]
    pub att: f64,
    #[serde(default = "default_weight")]
    pub app: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { mlm: 1.0, exp: 1.0, att: 1.0, app: 1.0 }
    }
}

impl LossWeights {
    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Mlm => self.mlm,
            Task::Exp => self.exp,
            Task::Att => self.att,
            Task::App => self.app,
        }
    }

    pub fn set(&mut self, task: Task, value: f64) {
        match task {
            Task::Mlm => self.mlm = value,
            Task::Exp => self.exp = value,
            Task::Att => self.att = value,
            Task::App => self.app = value,
        }
    }

    /// Copy with one task switched off.
    pub fn without(&self, task: Task) -> LossWeights {
        let mut w = *self;
        w.set(task, 0.0);
        w
    }

    pub fn active_tasks(&self) -> Vec<Task> {
        Task::ALL.into_iter().filter(|t| self.get(*t) > 0.0).collect()
    }

    pub fn validate(&self) -> Result<(), HeadError> {
        if Task::ALL.iter().all(|t| self.get(*t) == 0.0) {
            return Err(HeadError::AllZeroWeights);
        }
        Ok(())
    }
}

/// Per-task loss values for one step.
pub struct TaskLosses<S: Scalar> {
    pub mlm: Option<Tensor<S>>,
    pub exp: Option<Tensor<S>>,
    pub att: Option<Tensor<S>>,
    pub app: Option<Tensor<S>>,
}

impl<S: Scalar> Default for TaskLosses<S> {
    fn default() -> Self {
        TaskLosses { mlm: None, exp: None, att: None, app: None }
    }
}

impl<S: Scalar> TaskLosses<S> {
    pub fn get(&self, task: Task) -> Option<&Tensor<S>> {
        match task {
            Task::Mlm => self.mlm.as_ref(),
            Task::Exp => self.exp.as_ref(),
            Task::Att => self.att.as_ref(),
            Task::App => self.app.as_ref(),
        }
    }

    pub fn set(&mut self, task: Task, loss: Tensor<S>) {
        match task {
            Task::Mlm => self.mlm = Some(loss),
            Task::Exp => self.exp = Some(loss),
            Task::Att => self.att = Some(loss),
            Task::App => self.app = Some(loss),
        }
    }
}

/// Weighted sum of the active task losses. Zero-weight tasks are skipped
/// entirely; a positive-weight task without a loss value is an error.
pub fn joint_loss<S: Scalar>(
    losses: &TaskLosses<S>,
    weights: &LossWeights,
) -> Result<Tensor<S>, HeadError> {
    weights.validate()?;
    let mut total: Option<Tensor<S>> = None;
    for task in Task::ALL {
        let w = weights.get(task);
        if w == 0.0 {
            continue;
        }
        let loss = losses.get(task).ok_or(HeadError::MissingLoss { task })?;
        let term = loss.scale(S::from_f64(w));
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("validate guarantees at least one active task"))
}
