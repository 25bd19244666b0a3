//! Deterministic multitask pretraining.
//!
//! Each step samples one batch per active task from the pretrain split,
//! sums the weighted task losses into the joint objective, backpropagates
//! once, and applies a bias-corrected Adam update. All randomness flows
//! from the run seed through named sub-streams, so a run is a pure
//! function of (corpus, config).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{pretrain_label, Action, Corpus, JobId, PretrainLabel, Split, UserId};
use crate::encoder::{apply_mlm_mask, EncoderConfig, EncoderError};
use crate::heads::{
    joint_loss, loss_app, loss_att, loss_exp, loss_mlm, AppSample, AttSample, ExpSample,
    HeadError, LossWeights, MlmBatch, Task, TaskLosses,
};
use crate::hierarchy::{DocSide, HierarchyError};
use crate::model::{Model, ModelConfig, ModelError};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor, TensorError};

// ── configuration ────────────────────────────────────────────────────

fn default_learning_rate() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_batch_mlm() -> usize {
    8
}
fn default_batch_exp() -> usize {
    8
}
fn default_batch_att() -> usize {
    4
}
fn default_batch_app() -> usize {
    4
}
fn default_lambda() -> LossWeights {
    LossWeights::default()
}
fn default_model_hidden() -> usize {
    512
}
fn default_model_layers() -> usize {
    2
}
fn default_model_ff() -> usize {
    0
}
fn default_max_sentence_len() -> usize {
    16
}

/// Model size knobs carried inside the train config; the vocabulary size
/// comes from the corpus when the model is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHyper {
    #[serde(default = "default_model_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_model_layers")]
    pub n_layers: usize,
    /// 0 means `4 * hidden_dim`.
    #[serde(default = "default_model_ff")]
    pub ff_dim: usize,
    #[serde(default = "default_max_sentence_len")]
    pub max_sentence_len: usize,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            hidden_dim: default_model_hidden(),
            n_layers: default_model_layers(),
            ff_dim: default_model_ff(),
            max_sentence_len: default_max_sentence_len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    #[serde(default = "default_batch_mlm")]
    pub batch_mlm: usize,
    #[serde(default = "default_batch_exp")]
    pub batch_exp: usize,
    #[serde(default = "default_batch_att")]
    pub batch_att: usize,
    #[serde(default = "default_batch_app")]
    pub batch_app: usize,
    #[serde(default = "default_lambda")]
    pub lambda: LossWeights,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Write a checkpoint every N steps when an output directory is given;
    /// 0 disables periodic checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub model: ModelHyper,
    /// Optional hyper-parameter grid: dot-path -> candidate values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<BTreeMap<String, Vec<serde_json::Value>>>,
}

impl TrainConfig {
    pub fn new(seed: u64, steps: usize) -> Self {
        TrainConfig {
            seed,
            steps,
            batch_mlm: default_batch_mlm(),
            batch_exp: default_batch_exp(),
            batch_att: default_batch_att(),
            batch_app: default_batch_app(),
            lambda: LossWeights::default(),
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            checkpoint_every: 0,
            model: ModelHyper::default(),
            grid: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps == 0 {
            return Err(TrainError::Config("steps must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(TrainError::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        for (label, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::Config(format!("{label} {b} must be in [0, 1)")));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(TrainError::Config("epsilon must be positive".into()));
        }
        self.lambda.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        for (task, size) in [
            (Task::Mlm, self.batch_mlm),
            (Task::Exp, self.batch_exp),
            (Task::Att, self.batch_att),
            (Task::App, self.batch_app),
        ] {
            if self.lambda.get(task) > 0.0 && size == 0 {
                return Err(TrainError::Config(format!(
                    "task {task} is active but its batch size is 0"
                )));
            }
        }
        if self.model.hidden_dim == 0 || self.model.n_layers == 0 {
            return Err(TrainError::Config("model dims must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                hidden_dim: self.model.hidden_dim,
                n_layers: self.model.n_layers,
                ff_dim: self.model.ff_dim,
                max_sentence_len: self.model.max_sentence_len,
                ..EncoderConfig::new(vocab_size)
            },
            k_skills: 0, // caller fills from corpus
        }
    }

    /// Canonical JSON hash for run metadata.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

// ── errors ───────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum TrainError {
    Config(String),
    /// The pretrain split lacks the rows a task needs.
    EmptyPool { what: String },
    /// A task loss came out NaN or infinite; the run aborts loudly.
    NonFiniteLoss { task: Task, value: f64 },
    Head(HeadError),
    Model(ModelError),
    Io(std::io::Error),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Config(m) => write!(f, "invalid train config: {m}"),
            TrainError::EmptyPool { what } => write!(f, "empty training pool: {what}"),
            TrainError::NonFiniteLoss { task, value } => {
                write!(f, "task {task} produced a non-finite loss ({value}); aborting")
            }
            TrainError::Head(e) => write!(f, "{e}"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Io(e) => write!(f, "train io error: {e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<HeadError> for TrainError {
    fn from(e: HeadError) -> Self {
        TrainError::Head(e)
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<EncoderError> for TrainError {
    fn from(e: EncoderError) -> Self {
        TrainError::Head(HeadError::Encoder(e))
    }
}

impl From<HierarchyError> for TrainError {
    fn from(e: HierarchyError) -> Self {
        TrainError::Head(HeadError::Hierarchy(e))
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Head(HeadError::Tensor(e))
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e)
    }
}

// ── Adam ─────────────────────────────────────────────────────────────

/// Adam state: one first/second-moment accumulator per parameter, plus the
/// shared step counter.
pub struct AdamState<S: Scalar> {
    pub t: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Parameter<S>]) -> Self {
        AdamState {
            t: 0,
            m: params.iter().map(|p| vec![S::zero(); p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.tensor.numel()]).collect(),
        }
    }

    /// One bias-corrected update over every parameter that has a gradient.
    /// Parameters without a gradient are untouched (their moments stay
    /// zero, so skipping equals the explicit zero-gradient update).
    pub fn apply(
        &mut self,
        params: &[Parameter<S>],
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) {
        assert_eq!(params.len(), self.m.len(), "optimizer state mismatch");
        self.t += 1;
        let b1 = S::from_f64(beta1);
        let b2 = S::from_f64(beta2);
        let lr = S::from_f64(learning_rate);
        let eps = S::from_f64(epsilon);
        let bc1 = S::one() - S::from_f64(beta1.powi(self.t as i32));
        let bc2 = S::one() - S::from_f64(beta2.powi(self.t as i32));
        for (i, p) in params.iter().enumerate() {
            let Some(grad) = p.tensor.grad() else {
                continue;
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut values = p.tensor.to_vec();
            for (j, g) in grad.iter().enumerate() {
                m[j] = b1 * m[j] + (S::one() - b1) * *g;
                v[j] = b2 * v[j] + (S::one() - b2) * *g * *g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                values[j] = values[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.tensor.set_values(values).expect("same shape");
        }
    }

    /// Moment tensors named for the checkpoint archive.
    pub fn named_tensors(&self, params: &[Parameter<S>]) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::with_capacity(2 * params.len());
        for (i, p) in params.iter().enumerate() {
            let shape = p.tensor.shape().to_vec();
            out.push((
                format!("adam.m.{}", p.name),
                Tensor::constant(self.m[i].clone(), shape.clone()).expect("same shape"),
            ));
            out.push((
                format!("adam.v.{}", p.name),
                Tensor::constant(self.v[i].clone(), shape).expect("same shape"),
            ));
        }
        out
    }

    /// Rebuild from checkpoint extras; missing entries are an error.
    pub fn from_entries(
        params: &[Parameter<S>],
        entries: &[(String, Tensor<S>)],
        t: u64,
    ) -> Result<Self, TrainError> {
        let lookup: BTreeMap<&str, &Tensor<S>> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for p in params {
            let mk = format!("adam.m.{}", p.name);
            let vk = format!("adam.v.{}", p.name);
            let me = lookup.get(mk.as_str()).ok_or_else(|| {
                TrainError::Config(format!("checkpoint missing optimizer entry {mk}"))
            })?;
            let ve = lookup.get(vk.as_str()).ok_or_else(|| {
                TrainError::Config(format!("checkpoint missing optimizer entry {vk}"))
            })?;
            m.push(me.to_vec());
            v.push(ve.to_vec());
        }
        Ok(AdamState { t, m, v })
    }
}

// ── batches ──────────────────────────────────────────────────────────

/// Data-level batch descriptions for one step; embeddings are built inside
/// the step so gradients flow through fresh graphs.
#[derive(Debug, Clone, Default)]
pub struct TaskBatches {
    pub mlm: Option<MlmBatch>,
    /// (profile index, section index)
    pub exp: Option<Vec<(usize, usize)>>,
    /// (side, document index)
    pub att: Option<Vec<(DocSide, usize)>>,
    /// (profile index, job index, action)
    pub app: Option<Vec<(usize, usize, Action)>>,
}

/// Deterministic batch sampler over the pretrain pools.
pub struct BatchSampler {
    /// (side, doc index, section index, sentence index)
    sentence_pool: Vec<(DocSide, usize, usize, usize)>,
    /// (profile index, section index)
    exp_pool: Vec<(usize, usize)>,
    /// (side, doc index)
    att_pool: Vec<(DocSide, usize)>,
    /// (profile index, job index, action) — labeled rows only
    app_pool: Vec<(usize, usize, Action)>,
    batch_rng: ChaCha12Rng,
    mask_rng: ChaCha12Rng,
}

impl BatchSampler {
    /// Pools cover the pretrain users' profiles and every job posting;
    /// held-out downstream users contribute no text and no labels.
    pub fn new(corpus: &Corpus, seed: u64) -> Result<Self, TrainError> {
        let pretrain_users = corpus.users_in_split(Split::Pretrain);
        let user_index: BTreeMap<UserId, usize> = corpus
            .profiles
            .iter()
            .enumerate()
            .map(|(i, p)| (p.user_id, i))
            .collect();
        let job_index: BTreeMap<JobId, usize> =
            corpus.jobs.iter().enumerate().map(|(i, j)| (j.job_id, i)).collect();

        let profile_pool: Vec<usize> = corpus
            .profiles
            .iter()
            .enumerate()
            .filter(|(_, p)| pretrain_users.contains(&p.user_id))
            .map(|(i, _)| i)
            .collect();
        if profile_pool.is_empty() {
            return Err(TrainError::EmptyPool { what: "pretrain profiles".into() });
        }
        if corpus.jobs.is_empty() {
            return Err(TrainError::EmptyPool { what: "jobs".into() });
        }

        let mut sentence_pool = Vec::new();
        let mut exp_pool = Vec::new();
        for &pi in &profile_pool {
            for (si, section) in corpus.profiles[pi].sections.iter().enumerate() {
                exp_pool.push((pi, si));
                for k in 0..section.sentences.len() {
                    sentence_pool.push((DocSide::Profile, pi, si, k));
                }
            }
        }
        for (ji, job) in corpus.jobs.iter().enumerate() {
            for (si, section) in job.sections.iter().enumerate() {
                for k in 0..section.sentences.len() {
                    sentence_pool.push((DocSide::Job, ji, si, k));
                }
            }
        }

        let mut att_pool: Vec<(DocSide, usize)> =
            profile_pool.iter().map(|&i| (DocSide::Profile, i)).collect();
        att_pool.extend((0..corpus.jobs.len()).map(|i| (DocSide::Job, i)));

        let mut app_pool = Vec::new();
        for inter in corpus.interactions_in_split(Split::Pretrain) {
            if pretrain_label(inter.action) == PretrainLabel::Excluded {
                continue;
            }
            let (Some(&ui), Some(&ji)) =
                (user_index.get(&inter.user_id), job_index.get(&inter.job_id))
            else {
                continue;
            };
            app_pool.push((ui, ji, inter.action));
        }

        Ok(BatchSampler {
            sentence_pool,
            exp_pool,
            att_pool,
            app_pool,
            batch_rng: stream_rng(seed, "trainer/batches"),
            mask_rng: stream_rng(seed, "trainer/mask"),
        })
    }

    /// Sample one batch per active task for the next step.
    pub fn next_batches(
        &mut self,
        corpus: &Corpus,
        config: &TrainConfig,
    ) -> Result<TaskBatches, TrainError> {
        let mut batches = TaskBatches::default();
        let enc_config = EncoderConfig {
            mask_prob: default_mask_prob_of(corpus),
            ..config
                .model_config(corpus.vocab.vocab_size as usize)
                .encoder
        };

        if config.lambda.mlm > 0.0 {
            let mut sentences = Vec::with_capacity(config.batch_mlm);
            for _ in 0..config.batch_mlm {
                let (side, di, si, ki) =
                    self.sentence_pool[self.batch_rng.random_range(0..self.sentence_pool.len())];
                let tokens = match side {
                    DocSide::Profile => &corpus.profiles[di].sections[si].sentences[ki],
                    DocSide::Job => &corpus.jobs[di].sections[si].sentences[ki],
                };
                sentences.push(apply_mlm_mask(&enc_config, tokens, &mut self.mask_rng)?);
            }
            batches.mlm = Some(MlmBatch { sentences });
        }
        if config.lambda.exp > 0.0 {
            if self.exp_pool.is_empty() {
                return Err(TrainError::EmptyPool { what: "profile sections".into() });
            }
            let picks = (0..config.batch_exp)
                .map(|_| self.exp_pool[self.batch_rng.random_range(0..self.exp_pool.len())])
                .collect();
            batches.exp = Some(picks);
        }
        if config.lambda.att > 0.0 {
            let picks = (0..config.batch_att)
                .map(|_| self.att_pool[self.batch_rng.random_range(0..self.att_pool.len())])
                .collect();
            batches.att = Some(picks);
        }
        if config.lambda.app > 0.0 {
            if self.app_pool.is_empty() {
                return Err(TrainError::EmptyPool { what: "labeled pretrain interactions".into() });
            }
            let picks = (0..config.batch_app)
                .map(|_| self.app_pool[self.batch_rng.random_range(0..self.app_pool.len())])
                .collect();
            batches.app = Some(picks);
        }
        Ok(batches)
    }
}

fn default_mask_prob_of(_corpus: &Corpus) -> f64 {
    0.15
}

// ── logging ──────────────────────────────────────────────────────────

/// One training step record. Wall time is observational only and is kept
/// out of the serialized form so logs stay byte-comparable across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mlm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub att: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub app: Option<f64>,
    pub joint: f64,
    #[serde(skip, default)]
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogMeta {
    pub config_hash: String,
    pub corpus_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub meta: TrainLogMeta,
    pub entries: Vec<StepRecord>,
}

impl TrainLog {
    /// One JSON object per line: the meta record, then one per step.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&self.meta).expect("meta serializes"));
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), std::io::Error> {
        std::fs::write(path, self.to_jsonl())
    }
}

// ── the step ─────────────────────────────────────────────────────────

/// Forward the active heads, combine per the loss weights, backpropagate,
/// apply Adam, zero gradients, and report the per-task losses.
pub fn step<S: Scalar>(
    model: &Model<S>,
    corpus: &Corpus,
    batches: &TaskBatches,
    config: &TrainConfig,
    adam: &mut AdamState<S>,
    step_index: usize,
) -> Result<StepRecord, TrainError> {
    let started = Instant::now();
    let mut losses = TaskLosses::<S>::default();

    if config.lambda.mlm > 0.0 {
        let batch = batches.mlm.as_ref().ok_or(HeadError::MissingLoss { task: Task::Mlm })?;
        losses.set(Task::Mlm, loss_mlm(&model.encoder, &model.heads, batch)?);
    }
    if config.lambda.exp > 0.0 {
        let picks = batches.exp.as_ref().ok_or(HeadError::MissingLoss { task: Task::Exp })?;
        let mut samples = Vec::with_capacity(picks.len());
        for &(pi, si) in picks {
            let section = &corpus.profiles[pi].sections[si];
            samples.push(ExpSample {
                embedding: model.embed_section(section)?,
                name: section.name,
                side: DocSide::Profile,
            });
        }
        losses.set(Task::Exp, loss_exp(&model.heads, &samples)?);
    }
    if config.lambda.att > 0.0 {
        let picks = batches.att.as_ref().ok_or(HeadError::MissingLoss { task: Task::Att })?;
        let k = corpus.vocab.k_skills as usize;
        let mut profile_samples = Vec::new();
        let mut job_samples = Vec::new();
        for &(side, di) in picks {
            let (sections, skills) = match side {
                DocSide::Profile => {
                    let p = &corpus.profiles[di];
                    (&p.sections, p.skill_ids.iter().copied().collect::<Vec<u32>>())
                }
                DocSide::Job => {
                    let j = &corpus.jobs[di];
                    (&j.sections, j.skill_ids.iter().copied().collect::<Vec<u32>>())
                }
            };
            let section_embeddings = model.embed_sections(side, sections)?;
            let individual = model.embed_individual(&section_embeddings, true)?;
            let sample = AttSample { individual, skills };
            match side {
                DocSide::Profile => profile_samples.push(sample),
                DocSide::Job => job_samples.push(sample),
            }
        }
        // both sides share the weight: their losses are summed
        let mut att_total: Option<Tensor<S>> = None;
        if !profile_samples.is_empty() {
            att_total = Some(loss_att(&model.heads, &profile_samples, DocSide::Profile, k)?);
        }
        if !job_samples.is_empty() {
            let lj = loss_att(&model.heads, &job_samples, DocSide::Job, k)?;
            att_total = Some(match att_total {
                Some(lp) => lp.add(&lj)?,
                None => lj,
            });
        }
        let att = att_total.ok_or(HeadError::EmptyBatch { task: Task::Att })?;
        losses.set(Task::Att, att);
    }
    if config.lambda.app > 0.0 {
        let picks = batches.app.as_ref().ok_or(HeadError::MissingLoss { task: Task::App })?;
        let mut samples = Vec::with_capacity(picks.len());
        for &(pi, ji, action) in picks {
            let user = model.embed_document(DocSide::Profile, &corpus.profiles[pi].sections)?;
            let job = model.embed_document(DocSide::Job, &corpus.jobs[ji].sections)?;
            let pair = model.embed_pair(&user, &job)?;
            samples.push(AppSample { pair, action });
        }
        losses.set(Task::App, loss_app(&model.heads, &samples)?);
    }

    let mut record = StepRecord {
        step: step_index,
        mlm: None,
        exp: None,
        att: None,
        app: None,
        joint: 0.0,
        wall_ms: 0.0,
    };
    for task in Task::ALL {
        if let Some(loss) = losses.get(task) {
            let value = loss.item().as_f64();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { task, value });
            }
            match task {
                Task::Mlm => record.mlm = Some(value),
                Task::Exp => record.exp = Some(value),
                Task::Att => record.att = Some(value),
                Task::App => record.app = Some(value),
            }
        }
    }

    let joint = joint_loss(&losses, &config.lambda)?;
    record.joint = joint.item().as_f64();
    if !record.joint.is_finite() {
        return Err(TrainError::NonFiniteLoss { task: Task::App, value: record.joint });
    }

    joint.backward().map_err(|e| TrainError::Head(HeadError::Tensor(e)))?;
    let params = model.parameters();
    adam.apply(&params, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    for p in &params {
        p.tensor.zero_grad();
    }

    record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(record)
}

// ── the loop ─────────────────────────────────────────────────────────

/// Pretrain a fresh model on the corpus. When `out_dir` is given and
/// `checkpoint_every > 0`, periodic checkpoints land there.
pub fn pretrain(
    corpus: &Corpus,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(Model<f64>, AdamState<f64>, TrainLog), TrainError> {
    config.validate()?;
    let mut model_config = config.model_config(corpus.vocab.vocab_size as usize);
    model_config.k_skills = corpus.vocab.k_skills as usize;
    let model = Model::<f64>::new(model_config, crate::rng::derive_seed(config.seed, "init"))?;
    let mut sampler = BatchSampler::new(corpus, config.seed)?;
    let mut adam = AdamState::new(&model.parameters());

    let mut log = TrainLog {
        meta: TrainLogMeta {
            config_hash: config.content_hash(),
            corpus_hash: corpus.content_hash(),
        },
        entries: Vec::with_capacity(config.steps),
    };

    for step_index in 1..=config.steps {
        let batches = sampler.next_batches(corpus, config)?;
        let record = step(&model, corpus, &batches, config, &mut adam, step_index)?;
        log.entries.push(record);

        if config.checkpoint_every > 0 && step_index.is_multiple_of(config.checkpoint_every) {
            if let Some(dir) = out_dir {
                let path = dir.join(format!("ckpt_step{step_index:06}.bin"));
                save_with_optimizer(&model, &adam, &path, step_index)?;
            }
        }
    }
    Ok((model, adam, log))
}

/// Checkpoint with optimizer state appended.
pub fn save_with_optimizer(
    model: &Model<f64>,
    adam: &AdamState<f64>,
    path: &Path,
    step_index: usize,
) -> Result<(), TrainError> {
    let params = model.parameters();
    let extra = adam.named_tensors(&params);
    model
        .save_checkpoint(path, &extra, serde_json::json!({"adam_t": adam.t, "step": step_index}))
        .map_err(TrainError::Model)
}

// ── grid search ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCell {
    pub overrides: BTreeMap<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    /// Selection metric: downstream job-recommendation AUC on the
    /// validation half of the anchors.
    pub metric_name: String,
    pub cells: Vec<GridCell>,
    pub best: Option<BTreeMap<String, serde_json::Value>>,
}

/// Apply a dot-path override (`"lambda.app" = 0.0`) to a JSON tree.
pub fn apply_override(
    root: &mut serde_json::Value,
    path: &str,
    value: serde_json::Value,
) -> Result<(), TrainError> {
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| TrainError::Config(format!("override path {path}: not an object at {part}")))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(TrainError::Config(format!("empty override path {path}")))
}

/// Exhaustive sweep over the Cartesian product of `config.grid`, one
/// seeded run per cell, selecting the argmax of the validation metric.
/// Ties break toward the lexicographically smaller override set; cells
/// that fail report their error and stay in the table.
pub fn grid_search(
    corpus: &Corpus,
    config: &TrainConfig,
    metric: impl Fn(&Model<f64>, &Corpus) -> Result<f64, TrainError>,
    metric_name: &str,
) -> Result<GridReport, TrainError> {
    let grid = config
        .grid
        .as_ref()
        .filter(|g| !g.is_empty())
        .ok_or_else(|| TrainError::Config("grid_search needs a non-empty grid".into()))?;

    let keys: Vec<&String> = grid.keys().collect();
    let mut cells: Vec<BTreeMap<String, serde_json::Value>> = vec![BTreeMap::new()];
    for key in &keys {
        let mut expanded = Vec::new();
        for cell in &cells {
            for value in &grid[*key] {
                let mut next = cell.clone();
                next.insert((*key).clone(), value.clone());
                expanded.push(next);
            }
        }
        cells = expanded;
    }

    let mut report =
        GridReport { metric_name: metric_name.to_string(), cells: Vec::new(), best: None };
    let mut best: Option<(f64, String, BTreeMap<String, serde_json::Value>)> = None;

    for overrides in cells {
        let run = || -> Result<f64, TrainError> {
            let mut json = serde_json::to_value(config).expect("config serializes");
            json.as_object_mut().map(|o| o.remove("grid"));
            for (path, value) in &overrides {
                apply_override(&mut json, path, value.clone())?;
            }
            let cell_config: TrainConfig = serde_json::from_value(json)
                .map_err(|e| TrainError::Config(format!("override produced a bad config: {e}")))?;
            let (model, _, _) = pretrain(corpus, &cell_config, None)?;
            metric(&model, corpus)
        };
        match run() {
            Ok(value) => {
                let key = serde_json::to_string(&overrides).expect("overrides serialize");
                let better = match &best {
                    None => true,
                    Some((bv, bk, _)) => value > *bv || (value == *bv && key < *bk),
                };
                if better {
                    best = Some((value, key, overrides.clone()));
                }
                report.cells.push(GridCell { overrides, metric: Some(value), error: None });
            }
            Err(e) => {
                report.cells.push(GridCell { overrides, metric: None, error: Some(e.to_string()) });
            }
        }
    }
    report.best = best.map(|(_, _, overrides)| overrides);
    Ok(report)
}

/// Resolved output paths of a periodic-checkpoint run (helper for callers).
pub fn checkpoint_path(dir: &Path, step_index: usize) -> PathBuf {
    dir.join(format!("ckpt_step{step_index:06}.bin"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, CorpusConfig};

    fn train_corpus(seed: u64) -> Corpus {
        let config = CorpusConfig {
            seed,
            n_users: 24,
            n_jobs: 30,
            vocab_size: 300,
            k_skills: 20,
            sentence_len: (4, 6),
            interactions_per_user: 4,
            ..Default::default()
        };
        generate(&config).unwrap()
    }

    fn tiny_train_config(seed: u64, steps: usize) -> TrainConfig {
        TrainConfig {
            model: ModelHyper { hidden_dim: 8, n_layers: 1, ff_dim: 16, max_sentence_len: 8 },
            batch_mlm: 2,
            batch_exp: 2,
            batch_att: 2,
            batch_app: 2,
            ..TrainConfig::new(seed, steps)
        }
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        // p = 1, loss = p^2 -> g = 2; first step: m_hat = g, v_hat = g^2
        let p = Parameter::new("p", vec![1.0f64], vec![1]).unwrap();
        let loss = p.tensor.mul(&p.tensor).unwrap().sum_all();
        loss.backward().unwrap();
        let params = vec![p];
        let mut adam = AdamState::new(&params);
        adam.apply(&params, 1e-4, 0.9, 0.999, 1e-8);

        let g: f64 = 2.0;
        let m_hat = (0.1 * g) / (1.0 - 0.9f64);
        let v_hat = (0.001 * g * g) / (1.0 - 0.999f64);
        let expected = 1.0 - 1e-4 * m_hat / (v_hat.sqrt() + 1e-8);
        let got = params[0].tensor.to_vec()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        // update magnitude is ~lr because m_hat/sqrt(v_hat) = 1 up to eps
        assert!((1.0 - got - 1e-4).abs() < 1e-11);
    }

    #[test]
    fn adam_update_magnitude_tends_to_learning_rate() {
        let p = Parameter::new("p", vec![5.0f64], vec![1]).unwrap();
        let params = vec![p];
        let mut adam = AdamState::new(&params);
        let lr = 1e-3;
        let mut last = params[0].tensor.to_vec()[0];
        let mut final_step_size = 0.0;
        for _ in 0..1000 {
            // constant gradient of 1: loss = p
            params[0].tensor.zero_grad();
            let loss = params[0].tensor.sum_all();
            loss.backward().unwrap();
            adam.apply(&params, lr, 0.9, 0.999, 1e-8);
            let now = params[0].tensor.to_vec()[0];
            final_step_size = (last - now).abs();
            last = now;
        }
        assert!((final_step_size - lr).abs() <= 1e-6 * lr.max(1.0), "step {final_step_size}");
    }

    #[test]
    fn steps_zero_is_a_config_error() {
        let corpus = train_corpus(1);
        let config = tiny_train_config(1, 0);
        assert!(matches!(pretrain(&corpus, &config, None), Err(TrainError::Config(_))));
    }

    #[test]
    fn training_runs_and_log_is_consistent() {
        let corpus = train_corpus(2);
        let config = tiny_train_config(7, 3);
        let (_, _, log) = pretrain(&corpus, &config, None).unwrap();
        assert_eq!(log.entries.len(), 3);
        for e in &log.entries {
            let weighted = config.lambda.mlm * e.mlm.unwrap()
                + config.lambda.exp * e.exp.unwrap()
                + config.lambda.att * e.att.unwrap()
                + config.lambda.app * e.app.unwrap();
            assert!((weighted - e.joint).abs() < 1e-9, "joint {} vs sum {weighted}", e.joint);
        }
    }

    #[test]
    fn two_runs_same_seed_bit_identical_log_and_params() {
        let corpus = train_corpus(3);
        let config = tiny_train_config(11, 3);
        let (m1, _, log1) = pretrain(&corpus, &config, None).unwrap();
        let (m2, _, log2) = pretrain(&corpus, &config, None).unwrap();
        assert_eq!(log1.to_jsonl(), log2.to_jsonl());
        for (a, b) in m1.parameters().iter().zip(m2.parameters().iter()) {
            assert_eq!(a.tensor.to_vec(), b.tensor.to_vec(), "param {}", a.name);
        }
    }

    #[test]
    fn zero_weight_task_parameters_never_move() {
        let corpus = train_corpus(4);
        let mut config = tiny_train_config(13, 3);
        config.lambda.app = 0.0;
        let model_config = {
            let mut mc = config.model_config(corpus.vocab.vocab_size as usize);
            mc.k_skills = corpus.vocab.k_skills as usize;
            mc
        };
        let reference = Model::<f64>::new(model_config, crate::rng::derive_seed(config.seed, "init")).unwrap();
        let before_app_w = reference.heads.app_w.to_vec();
        let before_cross: Vec<Vec<f64>> = reference
            .cross_attention
            .named_tensors("cross")
            .iter()
            .map(|(_, t)| t.to_vec())
            .collect();

        let (model, _, log) = pretrain(&corpus, &config, None).unwrap();
        assert!(log.entries.iter().all(|e| e.app.is_none()));
        assert_eq!(model.heads.app_w.to_vec(), before_app_w);
        let after_cross: Vec<Vec<f64>> = model
            .cross_attention
            .named_tensors("cross")
            .iter()
            .map(|(_, t)| t.to_vec())
            .collect();
        assert_eq!(before_cross, after_cross);
        // sanity: shared parameters did move
        assert_ne!(model.encoder.token_embedding.to_vec(), reference.encoder.token_embedding.to_vec());
    }

    #[test]
    fn checkpoint_with_optimizer_round_trips() {
        let corpus = train_corpus(5);
        let config = tiny_train_config(17, 2);
        let (model, adam, _) = pretrain(&corpus, &config, None).unwrap();
        let dir = std::env::temp_dir().join("pjfit-trainer-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.bin");
        save_with_optimizer(&model, &adam, &path, 2).unwrap();

        let (loaded, extra, meta) = Model::<f64>::load_checkpoint(&path).unwrap();
        assert_eq!(meta["adam_t"], serde_json::json!(adam.t));
        let params = loaded.parameters();
        let restored = AdamState::from_entries(&params, &extra, adam.t).unwrap();
        assert_eq!(restored.m, adam.m);
        assert_eq!(restored.v, adam.v);

        // forward pass must be bit-identical after reload
        let sentence = &corpus.profiles[0].sections[0].sentences[0];
        let a = model.encoder.encode_sentence(sentence).unwrap().embedding.to_vec();
        let b = loaded.encoder.encode_sentence(sentence).unwrap().embedding.to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_search_reports_every_cell_and_isolates_errors() {
        let corpus = train_corpus(6);
        let mut config = tiny_train_config(19, 1);
        let mut grid = BTreeMap::new();
        grid.insert(
            "learning_rate".to_string(),
            vec![serde_json::json!(1e-3), serde_json::json!(1e-4)],
        );
        grid.insert(
            "lambda.mlm".to_string(),
            vec![serde_json::json!(1.0), serde_json::json!(0.5)],
        );
        config.grid = Some(grid);

        // deterministic stand-in metric: bigger learning rate wins
        let report = grid_search(&corpus, &config, |model, _| {
            Ok(model.encoder.token_embedding.to_vec()[0].abs())
        }, "test-metric")
        .unwrap();
        assert_eq!(report.cells.len(), 4);
        assert!(report.cells.iter().all(|c| c.metric.is_some()));
        assert!(report.best.is_some());

        // a cell with all-zero weights errors but the sweep completes
        let mut config2 = tiny_train_config(19, 1);
        let mut grid2 = BTreeMap::new();
        grid2.insert(
            "lambda".to_string(),
            vec![
                serde_json::json!({"mlm": 0.0, "exp": 0.0, "att": 0.0, "app": 0.0}),
                serde_json::json!({"mlm": 1.0, "exp": 0.0, "att": 0.0, "app": 0.0}),
            ],
        );
        config2.grid = Some(grid2);
        let report2 = grid_search(&corpus, &config2, |_, _| Ok(1.0), "test-metric").unwrap();
        assert_eq!(report2.cells.len(), 2);
        let errored = report2.cells.iter().filter(|c| c.error.is_some()).count();
        assert_eq!(errored, 1);
        let best = report2.best.unwrap();
        assert_eq!(best["lambda"]["mlm"], serde_json::json!(1.0));
    }

    #[test]
    fn singleton_grid_returns_that_config() {
        let corpus = train_corpus(7);
        let mut config = tiny_train_config(23, 1);
        let mut grid = BTreeMap::new();
        grid.insert("learning_rate".to_string(), vec![serde_json::json!(5e-4)]);
        config.grid = Some(grid);
        let report = grid_search(&corpus, &config, |_, _| Ok(0.5), "test-metric").unwrap();
        assert_eq!(report.cells.len(), 1);
        assert_eq!(report.best.unwrap()["learning_rate"], serde_json::json!(5e-4));
    }
}
