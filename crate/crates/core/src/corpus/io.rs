//! Corpus files: UTF-8, one JSON record per line, discriminated by a
//! `type` field. A leading `meta` record carries the config and vocabulary
//! layout; `profile`, `job` and `interaction` records follow. Loading a
//! saved corpus reproduces it exactly; saving is byte-deterministic.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusConfig, CorpusError, Interaction, JobPosting, Profile, VocabLayout};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Meta { config: CorpusConfig, vocab: VocabLayout },
    Profile(Profile),
    Job(JobPosting),
    Interaction(Interaction),
}

pub(super) fn to_jsonl_bytes(corpus: &Corpus) -> Result<Vec<u8>, CorpusError> {
    let mut out = Vec::new();
    let mut write_record = |r: &Record| -> Result<(), CorpusError> {
        let line = serde_json::to_string(r)
            .map_err(|e| CorpusError::Validation(format!("serialize failed: {e}")))?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
        Ok(())
    };
    write_record(&Record::Meta { config: corpus.config.clone(), vocab: corpus.vocab.clone() })?;
    for p in &corpus.profiles {
        write_record(&Record::Profile(p.clone()))?;
    }
    for j in &corpus.jobs {
        write_record(&Record::Job(j.clone()))?;
    }
    for i in &corpus.interactions {
        write_record(&Record::Interaction(*i))?;
    }
    Ok(out)
}

/// Write the corpus as line-delimited JSON.
pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    let bytes = to_jsonl_bytes(corpus)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Load a corpus saved by [`save_corpus`]. An empty file is an empty corpus.
/// Malformed lines report their 1-based line number; structural problems
/// (wrong sections, out-of-range tokens, split leakage) are rejected.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path)?;
    let mut meta: Option<(CorpusConfig, VocabLayout)> = None;
    let mut profiles: Vec<Profile> = Vec::new();
    let mut jobs: Vec<JobPosting> = Vec::new();
    let mut interactions: Vec<Interaction> = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line)
            .map_err(|e| CorpusError::Parse { line: idx + 1, message: e.to_string() })?;
        match record {
            Record::Meta { config, vocab } => {
                if meta.is_some() {
                    return Err(CorpusError::Parse {
                        line: idx + 1,
                        message: "duplicate meta record".into(),
                    });
                }
                meta = Some((config, vocab));
            }
            Record::Profile(p) => profiles.push(p),
            Record::Job(j) => jobs.push(j),
            Record::Interaction(i) => interactions.push(i),
        }
    }

    let (config, vocab) = match meta {
        Some(m) => m,
        None => {
            if profiles.is_empty() && jobs.is_empty() && interactions.is_empty() {
                // empty file -> empty corpus under the default config
                let config = CorpusConfig::default();
                let vocab = VocabLayout::derive(&config)?;
                (config, vocab)
            } else {
                return Err(CorpusError::Validation(
                    "corpus records present but no meta record".into(),
                ));
            }
        }
    };

    let corpus = Corpus { config, vocab, profiles, jobs, interactions };
    corpus.validate()?;
    Ok(corpus)
}
