//! Seed-deterministic corpus synthesis.
//!
//! Latent structure: every entity owns a small skill set; positive
//! interactions fire with probability interpolated between the configured
//! bounds by skill Jaccard overlap, so a model that reads skills out of the
//! text can beat chance downstream. Section text is drawn from per-section
//! template vocabularies (disjoint id slices), with the entity's skills
//! rendered verbatim into the Skills section and sprinkled into the rest.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::{
    Action, Corpus, CorpusConfig, CorpusError, Interaction, JobId, JobPosting, Profile, Section,
    SectionName, Split, UserId, VocabLayout,
};
use crate::rng::stream_rng;

/// Positive probability from skill overlap; exact at both endpoints.
fn match_probability(config: &CorpusConfig, jaccard: f64) -> f64 {
    config.match_prob_low * (1.0 - jaccard) + config.match_prob_high * jaccard
}

fn jaccard(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    let inter = a.intersection(b).count();
    if inter == 0 && (a.is_empty() || b.is_empty()) {
        return 0.0;
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

fn sample_range(rng: &mut ChaCha12Rng, range: (usize, usize)) -> usize {
    rng.random_range(range.0..=range.1)
}

fn sample_skills(rng: &mut ChaCha12Rng, config: &CorpusConfig) -> BTreeSet<u32> {
    let count = sample_range(rng, config.skills_per_entity);
    let idx = rand::seq::index::sample(rng, config.k_skills, count);
    idx.into_iter().map(|i| i as u32).collect()
}

/// One non-Skills sentence: template tokens, sometimes with own skills
/// spliced in so skill information survives outside the Skills section.
fn render_sentence(
    rng: &mut ChaCha12Rng,
    config: &CorpusConfig,
    vocab: &VocabLayout,
    name: SectionName,
    skills: &BTreeSet<u32>,
) -> Vec<u32> {
    let len = sample_range(rng, config.sentence_len);
    let slice = vocab.template_range(name);
    let mut sentence: Vec<u32> =
        (0..len).map(|_| rng.random_range(slice.clone())).collect();
    if rng.random_bool(config.skill_leak_prob) {
        let skill_vec: Vec<u32> = skills.iter().copied().collect();
        let mentions = 1 + usize::from(len >= 6 && rng.random_bool(0.5));
        let positions = rand::seq::index::sample(rng, len, mentions.min(len));
        for pos in positions {
            let skill = skill_vec[rng.random_range(0..skill_vec.len())];
            sentence[pos] = vocab.skill_token(skill);
        }
    }
    sentence
}

/// The Skills section carries exactly the entity's skill set: each skill
/// token appears at least once and no foreign skill token appears.
fn render_skills_section(
    rng: &mut ChaCha12Rng,
    config: &CorpusConfig,
    vocab: &VocabLayout,
    skills: &BTreeSet<u32>,
) -> Result<Vec<Vec<u32>>, CorpusError> {
    let n_sentences = sample_range(rng, config.sentences_per_section);
    let mut skill_tokens: Vec<u32> = skills.iter().map(|s| vocab.skill_token(*s)).collect();
    skill_tokens.shuffle(rng);
    if skill_tokens.len() > n_sentences * config.sentence_len.1 {
        return Err(CorpusError::RatioUnachievable(format!(
            "{} skills cannot fit in {n_sentences} sentences",
            skill_tokens.len()
        )));
    }
    let slice = vocab.template_range(SectionName::Skills);
    let mut sentences: Vec<Vec<u32>> = Vec::with_capacity(n_sentences);
    for i in 0..n_sentences {
        // round-robin share of the skill tokens for sentence i
        let mine: Vec<u32> = skill_tokens
            .iter()
            .enumerate()
            .filter(|(k, _)| k % n_sentences == i)
            .map(|(_, t)| *t)
            .collect();
        let len = sample_range(rng, config.sentence_len).max(mine.len());
        let mut sentence: Vec<u32> =
            (0..len).map(|_| rng.random_range(slice.clone())).collect();
        let positions = rand::seq::index::sample(rng, len, mine.len());
        for (tok, pos) in mine.iter().zip(positions) {
            sentence[pos] = *tok;
        }
        sentences.push(sentence);
    }
    Ok(sentences)
}

fn render_sections(
    rng: &mut ChaCha12Rng,
    config: &CorpusConfig,
    vocab: &VocabLayout,
    schema: &[SectionName],
    skills: &BTreeSet<u32>,
) -> Result<Vec<Section>, CorpusError> {
    schema
        .iter()
        .map(|&name| {
            let sentences = if name == SectionName::Skills {
                render_skills_section(rng, config, vocab, skills)?
            } else {
                let n = sample_range(rng, config.sentences_per_section);
                (0..n).map(|_| render_sentence(rng, config, vocab, name, skills)).collect()
            };
            Ok(Section { name, sentences })
        })
        .collect()
}

struct CandidateSampler<'a> {
    by_skill: BTreeMap<u32, Vec<usize>>,
    jobs: &'a [JobPosting],
}

impl<'a> CandidateSampler<'a> {
    fn new(jobs: &'a [JobPosting]) -> Self {
        let mut by_skill: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, j) in jobs.iter().enumerate() {
            for s in &j.skill_ids {
                by_skill.entry(*s).or_default().push(i);
            }
        }
        CandidateSampler { by_skill, jobs }
    }

    /// Candidate jobs for one user: alternating skill-biased and uniform
    /// draws, deduplicated, so lists mix plausible matches and noise.
    fn candidates(&self, rng: &mut ChaCha12Rng, profile: &Profile, want: usize) -> Vec<usize> {
        let skill_vec: Vec<u32> = profile.skill_ids.iter().copied().collect();
        let mut picked: Vec<usize> = Vec::with_capacity(want);
        let mut seen: HashSet<usize> = HashSet::new();
        let mut attempts = 0usize;
        let max_attempts = want * 30 + 100;
        while picked.len() < want && attempts < max_attempts {
            attempts += 1;
            let biased = attempts.is_multiple_of(2);
            let job = if biased {
                let skill = skill_vec[rng.random_range(0..skill_vec.len())];
                match self.by_skill.get(&skill) {
                    Some(list) if !list.is_empty() => list[rng.random_range(0..list.len())],
                    _ => rng.random_range(0..self.jobs.len()),
                }
            } else {
                rng.random_range(0..self.jobs.len())
            };
            if seen.insert(job) {
                picked.push(job);
            }
        }
        picked
    }
}

/// Draw the action for one (user, job) pair from the latent match model.
fn draw_action(
    rng: &mut ChaCha12Rng,
    config: &CorpusConfig,
    user_skills: &BTreeSet<u32>,
    job_skills: &BTreeSet<u32>,
) -> Action {
    let p = match_probability(config, jaccard(user_skills, job_skills));
    if rng.random_bool(p) {
        if rng.random_bool(0.5) {
            Action::Apply
        } else {
            Action::Save
        }
    } else if rng.random_bool(config.dismiss_prob) {
        Action::Dismiss
    } else {
        Action::Skip
    }
}

/// Generate a full corpus: profiles, job postings, and the three
/// interaction splits with disjoint user groups. Deterministic in
/// `config.seed`.
pub fn generate(config: &CorpusConfig) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let vocab = VocabLayout::derive(config)?;

    let mut rng_entities = stream_rng(config.seed, "corpus/entities");
    let mut profiles = Vec::with_capacity(config.n_users);
    for uid in 0..config.n_users {
        let skills = sample_skills(&mut rng_entities, config);
        let sections =
            render_sections(&mut rng_entities, config, &vocab, &SectionName::PROFILE, &skills)?;
        profiles.push(Profile { user_id: UserId(uid as u32), skill_ids: skills, sections });
    }
    let mut jobs = Vec::with_capacity(config.n_jobs);
    for jid in 0..config.n_jobs {
        let skills = sample_skills(&mut rng_entities, config);
        let sections =
            render_sections(&mut rng_entities, config, &vocab, &SectionName::JOB, &skills)?;
        jobs.push(JobPosting { job_id: JobId(jid as u32), skill_ids: skills, sections });
    }

    // user groups: pretrain vs the two downstream tasks, disjoint
    let mut rng_split = stream_rng(config.seed, "corpus/split");
    let mut user_order: Vec<usize> = (0..config.n_users).collect();
    user_order.shuffle(&mut rng_split);
    let n_down = ((config.n_users as f64) * config.downstream_user_frac).round() as usize;
    let n_jobrec = n_down / 2;
    let jobrec_users: Vec<usize> = user_order[..n_jobrec].to_vec();
    let candrec_users: Vec<usize> = user_order[n_jobrec..n_down].to_vec();
    let pretrain_users: Vec<usize> = {
        let mut v = user_order[n_down..].to_vec();
        v.sort_unstable();
        v
    };
    if pretrain_users.is_empty() {
        return Err(CorpusError::InvalidConfig("no users left for the pretrain split".into()));
    }

    let sampler = CandidateSampler::new(&jobs);
    let mut rng_inter = stream_rng(config.seed, "corpus/interactions");
    let mut interactions: Vec<Interaction> = Vec::new();
    let mut pair_set: HashSet<(u32, u32)> = HashSet::new();
    let mut positives = 0usize;
    let mut organic_negatives = 0usize;

    for &u in &pretrain_users {
        let profile = &profiles[u];
        for j in sampler.candidates(&mut rng_inter, profile, config.interactions_per_user) {
            let action = draw_action(&mut rng_inter, config, &profile.skill_ids, &jobs[j].skill_ids);
            match action {
                Action::Apply | Action::Save => positives += 1,
                Action::Dismiss => organic_negatives += 1,
                _ => {}
            }
            pair_set.insert((profile.user_id.0, jobs[j].job_id.0));
            interactions.push(Interaction {
                user_id: profile.user_id,
                job_id: jobs[j].job_id,
                action,
                split: Split::Pretrain,
            });
        }
    }

    if positives == 0 {
        return Err(CorpusError::RatioUnachievable(
            "no positive pretrain interactions were drawn; corpus too small or match probabilities too low"
                .into(),
        ));
    }
    let target_negatives = (config.negative_ratio * positives as f64).round() as usize;
    if organic_negatives > target_negatives {
        return Err(CorpusError::RatioUnachievable(format!(
            "{organic_negatives} organic negatives already exceed the target {target_negatives} \
             for {positives} positives; lower dismiss_prob or raise match probabilities"
        )));
    }
    let mut needed = target_negatives - organic_negatives;
    let mut attempts = 0usize;
    let max_attempts = needed * 100 + 1000;
    while needed > 0 {
        attempts += 1;
        if attempts > max_attempts {
            return Err(CorpusError::RatioUnachievable(format!(
                "could not place {needed} more synthetic negatives among non-interacting pairs"
            )));
        }
        let u = pretrain_users[rng_inter.random_range(0..pretrain_users.len())];
        let j = rng_inter.random_range(0..config.n_jobs);
        let key = (profiles[u].user_id.0, jobs[j].job_id.0);
        if pair_set.insert(key) {
            interactions.push(Interaction {
                user_id: profiles[u].user_id,
                job_id: jobs[j].job_id,
                action: Action::SyntheticNegative,
                split: Split::Pretrain,
            });
            needed -= 1;
        }
    }

    // downstream: fresh candidate lists for held-out users, no synthetics
    let downstream =
        |rng: &mut ChaCha12Rng, users: &[usize], split: Split, out: &mut Vec<Interaction>| {
            let mut ordered = users.to_vec();
            ordered.sort_unstable();
            for &u in &ordered {
                let profile = &profiles[u];
                for j in sampler.candidates(rng, profile, config.candidates_per_anchor) {
                    let action =
                        draw_action(rng, config, &profile.skill_ids, &jobs[j].skill_ids);
                    out.push(Interaction {
                        user_id: profile.user_id,
                        job_id: jobs[j].job_id,
                        action,
                        split,
                    });
                }
            }
        };
    let mut rng_down = stream_rng(config.seed, "corpus/downstream");
    downstream(&mut rng_down, &jobrec_users, Split::DownstreamJobrec, &mut interactions);
    downstream(&mut rng_down, &candrec_users, Split::DownstreamCandrec, &mut interactions);

    let corpus = Corpus { config: config.clone(), vocab, profiles, jobs, interactions };
    debug_assert!(corpus.validate().is_ok());
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{pretrain_label, PretrainLabel};

    fn small_config(seed: u64) -> CorpusConfig {
        CorpusConfig {
            seed,
            n_users: 60,
            n_jobs: 80,
            vocab_size: 400,
            k_skills: 30,
            ..Default::default()
        }
    }

    #[test]
    fn cardinalities_match_schema() {
        // tiny corpus: only 6 user-job pairs exist, so aim the match model
        // high and the ratio low enough that labeling is satisfiable
        let config = CorpusConfig {
            seed: 7,
            n_users: 2,
            n_jobs: 3,
            interactions_per_user: 1,
            match_prob_low: 0.7,
            match_prob_high: 0.9,
            dismiss_prob: 0.0,
            negative_ratio: 1.0,
            downstream_user_frac: 0.0,
            ..small_config(7)
        };
        let corpus = generate(&config).unwrap();
        assert_eq!(corpus.profiles.len(), 2);
        assert_eq!(corpus.jobs.len(), 3);
        for p in &corpus.profiles {
            assert_eq!(p.sections.len(), 5);
        }
        for j in &corpus.jobs {
            assert_eq!(j.sections.len(), 8);
        }
    }

    #[test]
    fn match_probability_endpoints_are_exact() {
        let config = small_config(1);
        assert_eq!(match_probability(&config, 1.0), config.match_prob_high);
        assert_eq!(match_probability(&config, 0.0), config.match_prob_low);
    }

    #[test]
    fn generation_is_deterministic() {
        let config = small_config(7);
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_fraction_hits_three_to_one() {
        for seed in [1u64, 2, 3] {
            let corpus = generate(&small_config(seed)).unwrap();
            let mut pos = 0usize;
            let mut neg = 0usize;
            for i in corpus.interactions_in_split(Split::Pretrain) {
                match pretrain_label(i.action) {
                    PretrainLabel::Positive => pos += 1,
                    PretrainLabel::Negative => neg += 1,
                    PretrainLabel::Excluded => {}
                }
            }
            let frac = neg as f64 / (pos + neg) as f64;
            assert!(
                (0.74..=0.76).contains(&frac),
                "seed {seed}: negative fraction {frac} (pos {pos}, neg {neg})"
            );
        }
    }

    #[test]
    fn downstream_users_disjoint_from_pretrain() {
        let corpus = generate(&small_config(11)).unwrap();
        let pre = corpus.users_in_split(Split::Pretrain);
        let jr = corpus.users_in_split(Split::DownstreamJobrec);
        let cr = corpus.users_in_split(Split::DownstreamCandrec);
        assert!(!jr.is_empty() && !cr.is_empty());
        assert!(pre.intersection(&jr).next().is_none());
        assert!(pre.intersection(&cr).next().is_none());
    }

    #[test]
    fn skill_labels_match_rendered_skills() {
        let corpus = generate(&small_config(13)).unwrap();
        corpus.validate().unwrap();
    }

    #[test]
    fn section_templates_are_separable_by_unigrams() {
        // train a unigram frequency classifier on half the documents,
        // classify the other half's sections by argmax token-count score
        let corpus = generate(&small_config(17)).unwrap();
        let mut counts: BTreeMap<SectionName, BTreeMap<u32, usize>> = BTreeMap::new();
        let mut eval_sections: Vec<(&Section, SectionName)> = Vec::new();
        let all_docs: Vec<&Vec<Section>> = corpus
            .profiles
            .iter()
            .map(|p| &p.sections)
            .chain(corpus.jobs.iter().map(|j| &j.sections))
            .collect();
        for (i, sections) in all_docs.iter().enumerate() {
            for s in sections.iter() {
                if i % 2 == 0 {
                    let slot = counts.entry(s.name).or_default();
                    for sent in &s.sentences {
                        for t in sent {
                            *slot.entry(*t).or_default() += 1;
                        }
                    }
                } else {
                    eval_sections.push((s, s.name));
                }
            }
        }
        let mut correct = 0usize;
        for (section, truth) in &eval_sections {
            let mut best = (SectionName::Summary, -1.0f64);
            for (name, table) in &counts {
                let total: usize = table.values().sum();
                let mut score = 0.0;
                for sent in &section.sentences {
                    for t in sent {
                        let c = table.get(t).copied().unwrap_or(0);
                        score += ((c + 1) as f64 / (total + 1) as f64).ln();
                    }
                }
                if best.1 == -1.0 || score > best.1 {
                    best = (*name, score);
                }
            }
            if best.0 == *truth {
                correct += 1;
            }
        }
        let acc = correct as f64 / eval_sections.len() as f64;
        assert!(acc >= 0.99, "separability accuracy {acc}");
    }

    #[test]
    fn unachievable_ratio_is_reported() {
        // every organic non-positive dismisses -> organic negatives swamp 3:1
        let config = CorpusConfig {
            dismiss_prob: 1.0,
            match_prob_low: 0.01,
            match_prob_high: 0.02,
            ..small_config(23)
        };
        match generate(&config) {
            Err(CorpusError::RatioUnachievable(_)) => {}
            other => panic!("expected RatioUnachievable, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let config = CorpusConfig { n_users: 0, ..small_config(1) };
        assert!(matches!(generate(&config), Err(CorpusError::InvalidConfig(_))));
    }
}
