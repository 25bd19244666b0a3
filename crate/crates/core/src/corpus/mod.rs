//! Semi-structured person-job corpus: user profiles and job postings made
//! of named sections of tokenized sentences, plus user-job interactions.
//!
//! Profiles carry exactly the five profile sections, job postings the eight
//! job sections. Interactions record one of the platform actions and the
//! split they belong to; pretraining and downstream evaluation read labels
//! off the action through [`pretrain_label`] / [`downstream_positive`].

mod generate;
mod io;

pub use generate::generate;
pub use io::{load_corpus, save_corpus};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

// ── section schema ───────────────────────────────────────────────────

/// Named block of a semi-structured document.
///
/// `Skills` belongs to both schemas; every other name is specific to one
/// document kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SectionName {
    Summary,
    Headline,
    Education,
    Position,
    Skills,
    Responsibilities,
    Qualifications,
    Requirements,
    #[serde(rename = "Job Title")]
    JobTitle,
    Functions,
    Benefits,
    Company,
}

impl fmt::Display for SectionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SectionName::Summary => "Summary",
            SectionName::Headline => "Headline",
            SectionName::Education => "Education",
            SectionName::Position => "Position",
            SectionName::Skills => "Skills",
            SectionName::Responsibilities => "Responsibilities",
            SectionName::Qualifications => "Qualifications",
            SectionName::Requirements => "Requirements",
            SectionName::JobTitle => "Job Title",
            SectionName::Functions => "Functions",
            SectionName::Benefits => "Benefits",
            SectionName::Company => "Company",
        };
        f.write_str(s)
    }
}

impl SectionName {
    /// The five profile sections, in schema order.
    pub const PROFILE: [SectionName; 5] = [
        SectionName::Summary,
        SectionName::Headline,
        SectionName::Education,
        SectionName::Position,
        SectionName::Skills,
    ];

    /// The eight job sections, in schema order.
    pub const JOB: [SectionName; 8] = [
        SectionName::Responsibilities,
        SectionName::Qualifications,
        SectionName::Requirements,
        SectionName::JobTitle,
        SectionName::Functions,
        SectionName::Skills,
        SectionName::Benefits,
        SectionName::Company,
    ];

    /// All distinct section names (profile first, then job-only).
    pub const ALL: [SectionName; 12] = [
        SectionName::Summary,
        SectionName::Headline,
        SectionName::Education,
        SectionName::Position,
        SectionName::Skills,
        SectionName::Responsibilities,
        SectionName::Qualifications,
        SectionName::Requirements,
        SectionName::JobTitle,
        SectionName::Functions,
        SectionName::Benefits,
        SectionName::Company,
    ];

    pub fn is_profile_kind(self) -> bool {
        Self::PROFILE.contains(&self)
    }

    pub fn is_job_kind(self) -> bool {
        Self::JOB.contains(&self)
    }

    /// Class index for section-name classification over profile sections.
    pub fn profile_class(self) -> Option<usize> {
        Self::PROFILE.iter().position(|n| *n == self)
    }

    /// Stable index into [`SectionName::ALL`] (used for vocab slicing).
    pub fn schema_index(self) -> usize {
        Self::ALL.iter().position(|n| *n == self).expect("every name is in ALL")
    }
}

// ── documents ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "j{}", self.0)
    }
}

/// Ordered sentences of token ids under one section name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: SectionName,
    pub sentences: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub user_id: UserId,
    pub skill_ids: BTreeSet<u32>,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobPosting {
    pub job_id: JobId,
    pub skill_ids: BTreeSet<u32>,
    pub sections: Vec<Section>,
}

impl Profile {
    pub fn section(&self, name: SectionName) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

impl JobPosting {
    pub fn section(&self, name: SectionName) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

// ── interactions ─────────────────────────────────────────────────────

/// What the user did with a recommended job. `SyntheticNegative` marks the
/// randomly generated non-matching pairs padded in to reach the negative
/// ratio, so they stay auditable next to organic dismissals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Skip,
    Dismiss,
    Save,
    Apply,
    SyntheticNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Pretrain,
    DownstreamJobrec,
    DownstreamCandrec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: UserId,
    pub job_id: JobId,
    pub action: Action,
    pub split: Split,
}

/// Label of an interaction for the application-classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainLabel {
    Positive,
    Negative,
    Excluded,
}

/// Pretraining label policy: apply/save are positive, dismiss and synthetic
/// negatives are negative, skips are excluded from pretraining batches.
pub fn pretrain_label(action: Action) -> PretrainLabel {
    match action {
        Action::Apply | Action::Save => PretrainLabel::Positive,
        Action::Dismiss | Action::SyntheticNegative => PretrainLabel::Negative,
        Action::Skip => PretrainLabel::Excluded,
    }
}

/// Downstream label policy: save/apply positive, everything else negative.
pub fn downstream_positive(action: Action) -> bool {
    matches!(action, Action::Save | Action::Apply)
}

// ── configuration and vocabulary layout ──────────────────────────────

fn default_vocab_size() -> usize {
    2000
}
fn default_k_skills() -> usize {
    100
}
fn default_skills_per_entity() -> (usize, usize) {
    (3, 6)
}
fn default_sentences_per_section() -> (usize, usize) {
    (2, 3)
}
fn default_sentence_len() -> (usize, usize) {
    (4, 12)
}
fn default_match_prob_high() -> f64 {
    0.9
}
fn default_match_prob_low() -> f64 {
    0.05
}
fn default_negative_ratio() -> f64 {
    3.0
}
fn default_interactions_per_user() -> usize {
    8
}
fn default_skill_leak_prob() -> f64 {
    0.5
}
fn default_dismiss_prob() -> f64 {
    0.3
}
fn default_downstream_user_frac() -> f64 {
    0.3
}
fn default_candidates_per_anchor() -> usize {
    12
}
fn default_candrec_anchor_frac() -> f64 {
    0.08
}

/// Generator configuration. Everything is seed-deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_jobs: usize,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_k_skills")]
    pub k_skills: usize,
    /// Inclusive range of skills drawn per entity.
    #[serde(default = "default_skills_per_entity")]
    pub skills_per_entity: (usize, usize),
    /// Inclusive range of sentences per section.
    #[serde(default = "default_sentences_per_section")]
    pub sentences_per_section: (usize, usize),
    /// Inclusive range of tokens per sentence.
    #[serde(default = "default_sentence_len")]
    pub sentence_len: (usize, usize),
    /// Positive-interaction probability at skill Jaccard overlap 1.
    #[serde(default = "default_match_prob_high")]
    pub match_prob_high: f64,
    /// Positive-interaction probability at skill Jaccard overlap 0.
    #[serde(default = "default_match_prob_low")]
    pub match_prob_low: f64,
    /// Negatives per positive in the labeled pretrain rows (3.0 ⇒ 75% negative).
    #[serde(default = "default_negative_ratio")]
    pub negative_ratio: f64,
    #[serde(default = "default_interactions_per_user")]
    pub interactions_per_user: usize,
    /// Probability that a non-Skills sentence mentions the entity's skills.
    #[serde(default = "default_skill_leak_prob")]
    pub skill_leak_prob: f64,
    /// Probability that an organic non-positive becomes a dismiss (else skip).
    #[serde(default = "default_dismiss_prob")]
    pub dismiss_prob: f64,
    /// Fraction of users held out for the two downstream splits.
    #[serde(default = "default_downstream_user_frac")]
    pub downstream_user_frac: f64,
    #[serde(default = "default_candidates_per_anchor")]
    pub candidates_per_anchor: usize,
    /// Fraction of jobs that anchor candidate-recommendation lists.
    #[serde(default = "default_candrec_anchor_frac")]
    pub candrec_anchor_frac: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            n_users: 100,
            n_jobs: 150,
            vocab_size: default_vocab_size(),
            k_skills: default_k_skills(),
            skills_per_entity: default_skills_per_entity(),
            sentences_per_section: default_sentences_per_section(),
            sentence_len: default_sentence_len(),
            match_prob_high: default_match_prob_high(),
            match_prob_low: default_match_prob_low(),
            negative_ratio: default_negative_ratio(),
            interactions_per_user: default_interactions_per_user(),
            skill_leak_prob: default_skill_leak_prob(),
            dismiss_prob: default_dismiss_prob(),
            downstream_user_frac: default_downstream_user_frac(),
            candidates_per_anchor: default_candidates_per_anchor(),
            candrec_anchor_frac: default_candrec_anchor_frac(),
        }
    }
}

/// Special token ids shared by the whole pipeline.
pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const MASK: u32 = 3;
pub const N_SPECIAL: u32 = 4;

/// Derived token-id layout: `[specials | skill tokens | 12 disjoint
/// per-section template slices]`. Disjoint slices make section names
/// recoverable from token statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub vocab_size: u32,
    pub k_skills: u32,
    pub skill_base: u32,
    pub template_base: u32,
    pub tokens_per_section: u32,
}

impl VocabLayout {
    pub fn derive(config: &CorpusConfig) -> Result<Self, CorpusError> {
        let vocab = config.vocab_size as u32;
        let k = config.k_skills as u32;
        let n_kinds = SectionName::ALL.len() as u32;
        let template_total = vocab
            .checked_sub(N_SPECIAL + k)
            .ok_or_else(|| CorpusError::InvalidConfig("vocab too small for skills + specials".into()))?;
        let tokens_per_section = template_total / n_kinds;
        if tokens_per_section < 2 {
            return Err(CorpusError::InvalidConfig(format!(
                "vocab_size {vocab} leaves {template_total} template tokens; need at least 2 per section kind"
            )));
        }
        Ok(VocabLayout {
            vocab_size: vocab,
            k_skills: k,
            skill_base: N_SPECIAL,
            template_base: N_SPECIAL + k,
            tokens_per_section,
        })
    }

    pub fn skill_token(&self, skill_id: u32) -> u32 {
        debug_assert!(skill_id < self.k_skills);
        self.skill_base + skill_id
    }

    pub fn skill_of_token(&self, token: u32) -> Option<u32> {
        if token >= self.skill_base && token < self.skill_base + self.k_skills {
            Some(token - self.skill_base)
        } else {
            None
        }
    }

    /// Half-open template-token range owned by one section kind.
    pub fn template_range(&self, name: SectionName) -> std::ops::Range<u32> {
        let i = name.schema_index() as u32;
        let start = self.template_base + i * self.tokens_per_section;
        start..start + self.tokens_per_section
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::InvalidConfig(m));
        if self.n_users == 0 {
            return err("n_users must be positive".into());
        }
        if self.n_jobs == 0 {
            return err("n_jobs must be positive".into());
        }
        if self.k_skills == 0 {
            return err("k_skills must be positive".into());
        }
        let (smin, smax) = self.skills_per_entity;
        if smin == 0 || smin > smax || smax > self.k_skills {
            return err(format!("skills_per_entity ({smin}, {smax}) invalid for k_skills {}", self.k_skills));
        }
        let (secmin, secmax) = self.sentences_per_section;
        if secmin == 0 || secmin > secmax {
            return err(format!("sentences_per_section ({secmin}, {secmax}) invalid"));
        }
        let (lmin, lmax) = self.sentence_len;
        if lmin == 0 || lmin > lmax {
            return err(format!("sentence_len ({lmin}, {lmax}) invalid"));
        }
        if !(0.0..=1.0).contains(&self.match_prob_low)
            || !(0.0..=1.0).contains(&self.match_prob_high)
            || self.match_prob_low >= self.match_prob_high
        {
            return err(format!(
                "need 0 <= match_prob_low < match_prob_high <= 1, got ({}, {})",
                self.match_prob_low, self.match_prob_high
            ));
        }
        if self.negative_ratio <= 0.0 || !self.negative_ratio.is_finite() {
            return err(format!("negative_ratio {} must be positive", self.negative_ratio));
        }
        if self.interactions_per_user == 0 {
            return err("interactions_per_user must be positive".into());
        }
        for (label, p) in [
            ("skill_leak_prob", self.skill_leak_prob),
            ("dismiss_prob", self.dismiss_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{label} {p} must be in [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.downstream_user_frac) {
            return err(format!("downstream_user_frac {} must be in [0, 1)", self.downstream_user_frac));
        }
        if self.candidates_per_anchor == 0 {
            return err("candidates_per_anchor must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.candrec_anchor_frac) {
            return err(format!("candrec_anchor_frac {} must be in [0, 1]", self.candrec_anchor_frac));
        }
        // Skills sections must be able to carry every skill of an entity.
        if smax > secmax * lmax {
            return err(format!(
                "up to {smax} skills cannot fit in {secmax} sentences of {lmax} tokens"
            ));
        }
        VocabLayout::derive(self)?;
        Ok(())
    }
}

// ── corpus container ─────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub vocab: VocabLayout,
    pub profiles: Vec<Profile>,
    pub jobs: Vec<JobPosting>,
    pub interactions: Vec<Interaction>,
}

impl Corpus {
    pub fn profile(&self, id: UserId) -> Option<&Profile> {
        self.profiles.iter().find(|p| p.user_id == id)
    }

    pub fn job(&self, id: JobId) -> Option<&JobPosting> {
        self.jobs.iter().find(|j| j.job_id == id)
    }

    /// User ids appearing in a given split.
    pub fn users_in_split(&self, split: Split) -> BTreeSet<UserId> {
        self.interactions
            .iter()
            .filter(|i| i.split == split)
            .map(|i| i.user_id)
            .collect()
    }

    pub fn interactions_in_split(&self, split: Split) -> Vec<&Interaction> {
        self.interactions.iter().filter(|i| i.split == split).collect()
    }

    /// SHA-256 of the serialized corpus; stable because serialization is.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = io::to_jsonl_bytes(self).expect("corpus serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Structural and consistency checks for a loaded or generated corpus.
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.config.validate()?;
        let vocab = self.vocab.vocab_size;
        let mut seen_users = BTreeSet::new();
        for p in &self.profiles {
            if !seen_users.insert(p.user_id) {
                return Err(CorpusError::Validation(format!("duplicate profile {}", p.user_id)));
            }
            check_sections(&format!("profile {}", p.user_id), &p.sections, &SectionName::PROFILE, vocab)?;
            check_skill_consistency(
                &format!("profile {}", p.user_id),
                &p.skill_ids,
                p.section(SectionName::Skills).expect("checked above"),
                &self.vocab,
            )?;
        }
        let mut seen_jobs = BTreeSet::new();
        for j in &self.jobs {
            if !seen_jobs.insert(j.job_id) {
                return Err(CorpusError::Validation(format!("duplicate job {}", j.job_id)));
            }
            check_sections(&format!("job {}", j.job_id), &j.sections, &SectionName::JOB, vocab)?;
            check_skill_consistency(
                &format!("job {}", j.job_id),
                &j.skill_ids,
                j.section(SectionName::Skills).expect("checked above"),
                &self.vocab,
            )?;
        }
        let pretrain_users = self.users_in_split(Split::Pretrain);
        for split in [Split::DownstreamJobrec, Split::DownstreamCandrec] {
            for u in self.users_in_split(split) {
                if pretrain_users.contains(&u) {
                    return Err(CorpusError::Validation(format!(
                        "user {u} appears in both pretrain and downstream splits"
                    )));
                }
            }
        }
        for i in &self.interactions {
            if !seen_users.contains(&i.user_id) {
                return Err(CorpusError::Validation(format!("interaction references unknown {}", i.user_id)));
            }
            if !seen_jobs.contains(&i.job_id) {
                return Err(CorpusError::Validation(format!("interaction references unknown {}", i.job_id)));
            }
        }
        Ok(())
    }
}

fn check_sections(
    owner: &str,
    sections: &[Section],
    expected: &[SectionName],
    vocab: u32,
) -> Result<(), CorpusError> {
    let names: Vec<SectionName> = sections.iter().map(|s| s.name).collect();
    for want in expected {
        if !names.contains(want) {
            return Err(CorpusError::Validation(format!("{owner}: missing section {want}")));
        }
    }
    if names.len() != expected.len() {
        return Err(CorpusError::Validation(format!(
            "{owner}: expected exactly {} sections, found {}",
            expected.len(),
            names.len()
        )));
    }
    for s in sections {
        if s.sentences.is_empty() {
            return Err(CorpusError::Validation(format!("{owner}: section {} has no sentences", s.name)));
        }
        for (i, sent) in s.sentences.iter().enumerate() {
            if sent.is_empty() {
                return Err(CorpusError::Validation(format!(
                    "{owner}: section {} sentence {i} is empty",
                    s.name
                )));
            }
            if let Some(tok) = sent.iter().find(|t| **t >= vocab) {
                return Err(CorpusError::Validation(format!(
                    "{owner}: section {} sentence {i} has token {tok} >= vocab {vocab}",
                    s.name
                )));
            }
        }
    }
    Ok(())
}

fn check_skill_consistency(
    owner: &str,
    skill_ids: &BTreeSet<u32>,
    skills_section: &Section,
    vocab: &VocabLayout,
) -> Result<(), CorpusError> {
    if skill_ids.is_empty() {
        return Err(CorpusError::Validation(format!("{owner}: empty skill set")));
    }
    let mut found = BTreeSet::new();
    for sent in &skills_section.sentences {
        for t in sent {
            if let Some(skill) = vocab.skill_of_token(*t) {
                found.insert(skill);
            }
        }
    }
    if &found != skill_ids {
        return Err(CorpusError::Validation(format!(
            "{owner}: skill_ids {skill_ids:?} != skills rendered in Skills section {found:?}"
        )));
    }
    Ok(())
}

// ── errors ───────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum CorpusError {
    InvalidConfig(String),
    /// The negative ratio cannot be met (too few pairs, organic negatives
    /// overshooting the target, or no positives at all).
    RatioUnachievable(String),
    Io(std::io::Error),
    /// A malformed record, with its 1-based line number.
    Parse { line: usize, message: String },
    Validation(String),
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusError::InvalidConfig(m) => write!(f, "invalid corpus config: {m}"),
            CorpusError::RatioUnachievable(m) => write!(f, "negative ratio unachievable: {m}"),
            CorpusError::Io(e) => write!(f, "corpus io error: {e}"),
            CorpusError::Parse { line, message } => write!(f, "corpus parse error at line {line}: {message}"),
            CorpusError::Validation(m) => write!(f, "corpus validation error: {m}"),
        }
    }
}

impl std::error::Error for CorpusError {}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e)
    }
}
