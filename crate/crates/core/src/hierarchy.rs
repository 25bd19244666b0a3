//! Lifting embeddings up the document hierarchy.
//!
//! A fusion layer pools a sequence of same-level embeddings into a query
//! and adds an attention readout over the sequence:
//!
//! ```text
//! pooled = mean(E_i over unexcluded i)
//! fused  = pooled + W_O · attention(Q = W_Q·pooled, K = W_K·E, V = W_V·E)
//! ```
//!
//! One instance runs at the section level (over sentence embeddings) and a
//! separate instance at the individual level (over section embeddings).
//! The skill-masked variant excludes the Skills section from both the
//! pooling and the attention, which makes the result provably blind to the
//! Skills text. The cross-attention layer then lets each side of a
//! (user, job) pair query the other side's sections and mixes the readouts
//! into the final pair embeddings.

use std::fmt;

use rand_chacha::ChaCha12Rng;

use crate::corpus::{Section, SectionName};
use crate::encoder::{param, Encoder, EncoderError};
use crate::scalar::Scalar;
use crate::tensor::{scaled_dot_attention, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionLevel {
    Section,
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocSide {
    Profile,
    Job,
}

#[derive(Debug)]
pub enum HierarchyError {
    EmptyInput { what: &'static str },
    AllExcluded,
    ExcludeLenMismatch { elements: usize, mask: usize },
    Encoder(EncoderError),
    Tensor(TensorError),
}

impl fmt::Display for HierarchyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HierarchyError::EmptyInput { what } => write!(f, "fusion over empty {what}"),
            HierarchyError::AllExcluded => write!(f, "every element excluded from fusion"),
            HierarchyError::ExcludeLenMismatch { elements, mask } => {
                write!(f, "exclude mask of {mask} entries for {elements} elements")
            }
            HierarchyError::Encoder(e) => write!(f, "{e}"),
            HierarchyError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for HierarchyError {}

impl From<EncoderError> for HierarchyError {
    fn from(e: EncoderError) -> Self {
        HierarchyError::Encoder(e)
    }
}

impl From<TensorError> for HierarchyError {
    fn from(e: TensorError) -> Self {
        HierarchyError::Tensor(e)
    }
}

// ── fusion ───────────────────────────────────────────────────────────

/// Attention-fusion projections for one level. Levels never share these.
#[derive(Clone)]
pub struct FusionLayer<S: Scalar> {
    pub level: FusionLevel,
    pub w_q: Tensor<S>,
    pub w_k: Tensor<S>,
    pub w_v: Tensor<S>,
    pub w_o: Tensor<S>,
}

/// Result of one fusion: the fused embedding, the pooled query that guided
/// it, and the attention weights for inspection.
pub struct Fused<S: Scalar> {
    pub fused: Tensor<S>,
    pub pooled: Tensor<S>,
    pub weights: Tensor<S>,
}

impl<S: Scalar> FusionLayer<S> {
    pub fn new(level: FusionLevel, hidden_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        FusionLayer {
            level,
            w_q: param(rng, vec![hidden_dim, hidden_dim]),
            w_k: param(rng, vec![hidden_dim, hidden_dim]),
            w_v: param(rng, vec![hidden_dim, hidden_dim]),
            w_o: param(rng, vec![hidden_dim, hidden_dim]),
        }
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor<S>)> {
        vec![
            (format!("{prefix}.w_q"), self.w_q.clone()),
            (format!("{prefix}.w_k"), self.w_k.clone()),
            (format!("{prefix}.w_v"), self.w_v.clone()),
            (format!("{prefix}.w_o"), self.w_o.clone()),
        ]
    }

    /// Fuse a sequence of same-dimension embeddings. Excluded elements are
    /// left out of the pooled mean and receive exactly zero attention
    /// weight, so the result carries no trace of them.
    pub fn fuse(
        &self,
        elements: &[Tensor<S>],
        exclude: Option<&[bool]>,
    ) -> Result<Fused<S>, HierarchyError> {
        if elements.is_empty() {
            return Err(HierarchyError::EmptyInput { what: "element sequence" });
        }
        if let Some(mask) = exclude {
            if mask.len() != elements.len() {
                return Err(HierarchyError::ExcludeLenMismatch {
                    elements: elements.len(),
                    mask: mask.len(),
                });
            }
            if mask.iter().all(|&m| m) {
                return Err(HierarchyError::AllExcluded);
            }
        }

        let kept: Vec<&Tensor<S>> = match exclude {
            Some(mask) => elements.iter().zip(mask).filter(|(_, m)| !**m).map(|(e, _)| e).collect(),
            None => elements.iter().collect(),
        };
        let pooled = Tensor::stack_rows(&kept)?.mean_over_axis(0)?;

        let all = Tensor::stack_rows(&elements.iter().collect::<Vec<_>>())?;
        let d = pooled.numel();
        let q = pooled.reshape(vec![1, d])?.matmul(&self.w_q)?;
        let keys = all.matmul(&self.w_k)?;
        let values = all.matmul(&self.w_v)?;
        let (att, weights) = scaled_dot_attention(&q, &keys, &values, exclude)?;
        let readout = att.matmul(&self.w_o)?.reshape(vec![d])?;
        let fused = pooled.add(&readout)?;
        let weights = weights.reshape(vec![elements.len()])?;
        Ok(Fused { fused, pooled, weights })
    }
}

// ── document-level construction ──────────────────────────────────────

/// Section embeddings of one document, in schema order, along with the
/// sentence embeddings they were fused from.
pub struct SectionEmbeddings<S: Scalar> {
    pub side: DocSide,
    pub entries: Vec<(SectionName, Tensor<S>)>,
    pub sentence_embeddings: Vec<(SectionName, Vec<Tensor<S>>)>,
}

impl<S: Scalar> SectionEmbeddings<S> {
    pub fn get(&self, name: SectionName) -> Option<&Tensor<S>> {
        self.entries.iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn vectors(&self) -> Vec<Tensor<S>> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }
}

/// An individual-level embedding with its provenance: whether the Skills
/// section was excluded while it was built.
pub struct IndividualEmbedding<S: Scalar> {
    pub fused: Tensor<S>,
    pub pooled: Tensor<S>,
    pub weights: Tensor<S>,
    pub skills_masked: bool,
}

/// Encode every sentence of every section and fuse them per section with
/// the section-level layer. Sections come out in the document's schema
/// order.
pub fn build_section_embeddings<S: Scalar>(
    encoder: &Encoder<S>,
    section_fusion: &FusionLayer<S>,
    side: DocSide,
    sections: &[Section],
) -> Result<SectionEmbeddings<S>, HierarchyError> {
    let mut entries = Vec::with_capacity(sections.len());
    let mut sentence_embeddings = Vec::with_capacity(sections.len());
    for section in sections {
        if section.sentences.is_empty() {
            return Err(HierarchyError::EmptyInput { what: "section" });
        }
        let mut embs = Vec::with_capacity(section.sentences.len());
        for sentence in &section.sentences {
            embs.push(encoder.encode_sentence(sentence)?.embedding);
        }
        let fused = section_fusion.fuse(&embs, None)?;
        entries.push((section.name, fused.fused));
        sentence_embeddings.push((section.name, embs));
    }
    Ok(SectionEmbeddings { side, entries, sentence_embeddings })
}

/// Fuse section embeddings into the individual-level embedding. With
/// `mask_skills` the Skills section is excluded from pooling and attention
/// both, which is what the attribute-validation head consumes.
pub fn build_individual<S: Scalar>(
    individual_fusion: &FusionLayer<S>,
    sections: &SectionEmbeddings<S>,
    mask_skills: bool,
) -> Result<IndividualEmbedding<S>, HierarchyError> {
    let vectors = sections.vectors();
    let exclude: Option<Vec<bool>> = if mask_skills {
        Some(sections.entries.iter().map(|(n, _)| *n == SectionName::Skills).collect())
    } else {
        None
    };
    let fused = individual_fusion.fuse(&vectors, exclude.as_deref())?;
    Ok(IndividualEmbedding {
        fused: fused.fused,
        pooled: fused.pooled,
        weights: fused.weights,
        skills_masked: mask_skills,
    })
}

// ── cross-attention ──────────────────────────────────────────────────

/// Bidirectional cross-attention between a user and a job. Each direction
/// has its own projections; each side has its own combine projection from
/// `3d` (own individual embedding + both readouts) down to `d`.
#[derive(Clone)]
pub struct CrossAttentionLayer<S: Scalar> {
    pub job_q: Tensor<S>,
    pub job_k: Tensor<S>,
    pub job_v: Tensor<S>,
    pub job_o: Tensor<S>,
    pub user_q: Tensor<S>,
    pub user_k: Tensor<S>,
    pub user_v: Tensor<S>,
    pub user_o: Tensor<S>,
    pub combine_user: Tensor<S>,
    pub combine_job: Tensor<S>,
}

/// Final interaction-level embeddings for one (user, job) pair.
pub struct PairEmbeddings<S: Scalar> {
    pub f_user: Tensor<S>,
    pub f_job: Tensor<S>,
    /// Job-oriented attention weights over the user's sections.
    pub job_attention: Tensor<S>,
    /// User-oriented attention weights over the job's sections.
    pub user_attention: Tensor<S>,
}

impl<S: Scalar> CrossAttentionLayer<S> {
    pub fn new(hidden_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        let d = hidden_dim;
        CrossAttentionLayer {
            job_q: param(rng, vec![d, d]),
            job_k: param(rng, vec![d, d]),
            job_v: param(rng, vec![d, d]),
            job_o: param(rng, vec![d, d]),
            user_q: param(rng, vec![d, d]),
            user_k: param(rng, vec![d, d]),
            user_v: param(rng, vec![d, d]),
            user_o: param(rng, vec![d, d]),
            combine_user: param(rng, vec![3 * d, d]),
            combine_job: param(rng, vec![3 * d, d]),
        }
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor<S>)> {
        vec![
            (format!("{prefix}.job_q"), self.job_q.clone()),
            (format!("{prefix}.job_k"), self.job_k.clone()),
            (format!("{prefix}.job_v"), self.job_v.clone()),
            (format!("{prefix}.job_o"), self.job_o.clone()),
            (format!("{prefix}.user_q"), self.user_q.clone()),
            (format!("{prefix}.user_k"), self.user_k.clone()),
            (format!("{prefix}.user_v"), self.user_v.clone()),
            (format!("{prefix}.user_o"), self.user_o.clone()),
            (format!("{prefix}.combine_user"), self.combine_user.clone()),
            (format!("{prefix}.combine_job"), self.combine_job.clone()),
        ]
    }

    /// Cross the two sides: the job individual queries the user's section
    /// sequence, the user individual queries the job's, and both readouts
    /// are concatenated and combined into the final embeddings.
    pub fn interact(
        &self,
        user_individual: &Tensor<S>,
        user_sections: &[Tensor<S>],
        job_individual: &Tensor<S>,
        job_sections: &[Tensor<S>],
    ) -> Result<PairEmbeddings<S>, HierarchyError> {
        if user_sections.is_empty() {
            return Err(HierarchyError::EmptyInput { what: "user sections" });
        }
        if job_sections.is_empty() {
            return Err(HierarchyError::EmptyInput { what: "job sections" });
        }
        let d = user_individual.numel();

        let attend = |q_vec: &Tensor<S>,
                      seq: &[Tensor<S>],
                      w_q: &Tensor<S>,
                      w_k: &Tensor<S>,
                      w_v: &Tensor<S>,
                      w_o: &Tensor<S>|
         -> Result<(Tensor<S>, Tensor<S>), HierarchyError> {
            let mat = Tensor::stack_rows(&seq.iter().collect::<Vec<_>>())?;
            let q = q_vec.reshape(vec![1, d])?.matmul(w_q)?;
            let keys = mat.matmul(w_k)?;
            let values = mat.matmul(w_v)?;
            let (att, weights) = scaled_dot_attention(&q, &keys, &values, None)?;
            let readout = att.matmul(w_o)?.reshape(vec![d])?;
            Ok((readout, weights.reshape(vec![seq.len()])?))
        };

        let (a_j, job_attention) =
            attend(job_individual, user_sections, &self.job_q, &self.job_k, &self.job_v, &self.job_o)?;
        let (a_u, user_attention) =
            attend(user_individual, job_sections, &self.user_q, &self.user_k, &self.user_v, &self.user_o)?;

        let crossed = Tensor::concat(&[&a_j, &a_u])?;
        let f_user = Tensor::concat(&[user_individual, &crossed])?
            .reshape(vec![1, 3 * d])?
            .matmul(&self.combine_user)?
            .reshape(vec![d])?;
        let f_job = Tensor::concat(&[job_individual, &crossed])?
            .reshape(vec![1, 3 * d])?
            .matmul(&self.combine_job)?
            .reshape(vec![d])?;
        Ok(PairEmbeddings { f_user, f_job, job_attention, user_attention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, CorpusConfig};
    use crate::encoder::EncoderConfig;
    use crate::rng::stream_rng;

    fn identity(d: usize) -> Tensor<f64> {
        let mut v = vec![0.0; d * d];
        for i in 0..d {
            v[i * d + i] = 1.0;
        }
        Tensor::leaf(v, vec![d, d]).unwrap()
    }

    fn identity_fusion(d: usize) -> FusionLayer<f64> {
        FusionLayer {
            level: FusionLevel::Individual,
            w_q: identity(d),
            w_k: identity(d),
            w_v: identity(d),
            w_o: identity(d),
        }
    }

    fn rand_fusion(seed: u64, d: usize) -> FusionLayer<f64> {
        FusionLayer::new(FusionLevel::Individual, d, &mut stream_rng(seed, "test/fusion"))
    }

    fn rand_vecs(seed: u64, n: usize, d: usize) -> Vec<Tensor<f64>> {
        let mut rng = stream_rng(seed, "test/vecs");
        (0..n)
            .map(|_| {
                Tensor::leaf(crate::rng::trunc_normal_vec(&mut rng, d, 1.0), vec![d]).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_element_identity_fusion_doubles_it() {
        let d = 4;
        let layer = identity_fusion(d);
        let e = Tensor::leaf(vec![0.5, -1.0, 2.0, 0.25], vec![d]).unwrap();
        let out = layer.fuse(&[e.clone()], None).unwrap();
        assert_eq!(out.weights.to_vec(), vec![1.0]);
        let expected: Vec<f64> = e.to_vec().iter().map(|v| 2.0 * v).collect();
        assert_eq!(out.fused.to_vec(), expected);
    }

    #[test]
    fn excluded_element_gets_zero_weight_and_zero_influence() {
        let d = 6;
        let layer = rand_fusion(3, d);
        let elements = rand_vecs(4, 4, d);
        let exclude = [false, false, true, false];
        let out = layer.fuse(&elements, Some(&exclude)).unwrap();
        assert_eq!(out.weights.to_vec()[2], 0.0);

        // mutate the excluded element: pooled and fused stay bit-identical
        let mut mutated = elements.clone();
        mutated[2] = Tensor::leaf(vec![99.0; d], vec![d]).unwrap();
        let out2 = layer.fuse(&mutated, Some(&exclude)).unwrap();
        assert_eq!(out.pooled.to_vec(), out2.pooled.to_vec());
        assert_eq!(out.fused.to_vec(), out2.fused.to_vec());
    }

    #[test]
    fn all_excluded_and_empty_are_errors() {
        let layer = rand_fusion(5, 4);
        let elements = rand_vecs(6, 2, 4);
        assert!(matches!(
            layer.fuse(&elements, Some(&[true, true])),
            Err(HierarchyError::AllExcluded)
        ));
        assert!(matches!(layer.fuse(&[], None), Err(HierarchyError::EmptyInput { .. })));
    }

    #[test]
    fn permutation_permutes_weights_and_preserves_fused() {
        for seed in 0..10 {
            let d = 8;
            let layer = rand_fusion(seed, d);
            let elements = rand_vecs(seed + 100, 5, d);
            let perm = [3usize, 0, 4, 1, 2];
            let permuted: Vec<Tensor<f64>> = perm.iter().map(|&i| elements[i].clone()).collect();

            let a = layer.fuse(&elements, None).unwrap();
            let b = layer.fuse(&permuted, None).unwrap();
            let wa = a.weights.to_vec();
            let wb = b.weights.to_vec();
            for (slot, &src) in perm.iter().enumerate() {
                assert!((wb[slot] - wa[src]).abs() < 1e-12, "seed {seed}");
            }
            for (x, y) in a.fused.to_vec().iter().zip(b.fused.to_vec()) {
                assert!((x - y).abs() < 1e-12, "seed {seed}");
            }
        }
    }

    #[test]
    fn fused_minus_pooled_lies_in_projected_span() {
        // least-squares residual of (fused - pooled) against the projected
        // element basis, solved by normal equations at small d
        for seed in 0..5 {
            let d = 8;
            let n = 4;
            let layer = rand_fusion(seed + 40, d);
            let elements = rand_vecs(seed + 50, n, d);
            let out = layer.fuse(&elements, None).unwrap();
            let target: Vec<f64> = out
                .fused
                .to_vec()
                .iter()
                .zip(out.pooled.to_vec())
                .map(|(f, p)| f - p)
                .collect();
            // basis vectors: (E_i · W_V) · W_O
            let all = Tensor::stack_rows(&elements.iter().collect::<Vec<_>>()).unwrap();
            let basis = all.matmul(&layer.w_v).unwrap().matmul(&layer.w_o).unwrap().to_vec();
            // normal equations: (B Bᵀ) x = B t, B rows are basis vectors
            let mut gram = vec![0.0f64; n * n];
            let mut rhs = vec![0.0f64; n];
            for i in 0..n {
                for j in 0..n {
                    gram[i * n + j] =
                        (0..d).map(|c| basis[i * d + c] * basis[j * d + c]).sum();
                }
                rhs[i] = (0..d).map(|c| basis[i * d + c] * target[c]).sum();
            }
            let x = solve_dense(&mut gram, &mut rhs, n);
            let mut residual = 0.0f64;
            for c in 0..d {
                let fit: f64 = (0..n).map(|i| x[i] * basis[i * d + c]).sum();
                residual += (target[c] - fit).powi(2);
            }
            assert!(residual.sqrt() < 1e-8, "seed {seed}: residual {}", residual.sqrt());
        }
    }

    fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
        // gaussian elimination with partial pivoting
        for col in 0..n {
            let mut pivot = col;
            for r in col + 1..n {
                if a[r * n + col].abs() > a[pivot * n + col].abs() {
                    pivot = r;
                }
            }
            for c in 0..n {
                a.swap(col * n + c, pivot * n + c);
            }
            b.swap(col, pivot);
            let diag = a[col * n + col];
            for r in col + 1..n {
                let factor = a[r * n + col] / diag;
                for c in col..n {
                    a[r * n + c] -= factor * a[col * n + c];
                }
                b[r] -= factor * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let mut acc = b[r];
            for c in r + 1..n {
                acc -= a[r * n + c] * x[c];
            }
            x[r] = acc / a[r * n + r];
        }
        x
    }

    fn tiny_corpus(seed: u64) -> (crate::corpus::Corpus, Encoder<f64>) {
        let config = CorpusConfig {
            seed,
            n_users: 4,
            n_jobs: 4,
            vocab_size: 300,
            k_skills: 20,
            downstream_user_frac: 0.0,
            sentence_len: (4, 8),
            // only the documents matter here; keep the interaction model
            // trivially satisfiable on 16 possible pairs
            interactions_per_user: 1,
            match_prob_low: 0.85,
            match_prob_high: 0.9,
            dismiss_prob: 0.0,
            negative_ratio: 1.0,
            ..Default::default()
        };
        let corpus = generate(&config).unwrap();
        let enc_config = EncoderConfig {
            hidden_dim: 12,
            n_layers: 1,
            ff_dim: 24,
            max_sentence_len: 10,
            ..EncoderConfig::new(config.vocab_size)
        };
        let encoder = Encoder::new(enc_config, &mut stream_rng(seed, "test/enc")).unwrap();
        (corpus, encoder)
    }

    #[test]
    fn section_embeddings_cover_the_schema() {
        let (corpus, encoder) = tiny_corpus(21);
        let fusion = rand_fusion(22, 12);
        let prof =
            build_section_embeddings(&encoder, &fusion, DocSide::Profile, &corpus.profiles[0].sections)
                .unwrap();
        assert_eq!(prof.entries.len(), 5);
        let job = build_section_embeddings(&encoder, &fusion, DocSide::Job, &corpus.jobs[0].sections)
            .unwrap();
        assert_eq!(job.entries.len(), 8);
        for (_, v) in &job.entries {
            assert_eq!(v.shape(), &[12]);
            assert!(v.to_vec().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn masked_individual_is_blind_to_skills_text() {
        let (mut corpus, encoder) = tiny_corpus(23);
        let section_fusion = rand_fusion(24, 12);
        let individual_fusion = rand_fusion(25, 12);

        let before = {
            let s = build_section_embeddings(
                &encoder,
                &section_fusion,
                DocSide::Profile,
                &corpus.profiles[0].sections,
            )
            .unwrap();
            build_individual(&individual_fusion, &s, true).unwrap()
        };
        assert!(before.skills_masked);
        let skills_idx = corpus.profiles[0]
            .sections
            .iter()
            .position(|s| s.name == SectionName::Skills)
            .unwrap();
        assert_eq!(before.weights.to_vec()[skills_idx], 0.0);

        // rewrite the Skills text entirely
        for sentence in &mut corpus.profiles[0].sections[skills_idx].sentences {
            for t in sentence.iter_mut() {
                *t = 200 + (*t % 17);
            }
        }
        let after = {
            let s = build_section_embeddings(
                &encoder,
                &section_fusion,
                DocSide::Profile,
                &corpus.profiles[0].sections,
            )
            .unwrap();
            build_individual(&individual_fusion, &s, true).unwrap()
        };
        assert_eq!(before.fused.to_vec(), after.fused.to_vec());
        assert_eq!(before.pooled.to_vec(), after.pooled.to_vec());

        // the unmasked individual must certainly see the change
        let unmasked_changed = {
            let s = build_section_embeddings(
                &encoder,
                &section_fusion,
                DocSide::Profile,
                &corpus.profiles[0].sections,
            )
            .unwrap();
            build_individual(&individual_fusion, &s, false).unwrap()
        };
        assert!(!unmasked_changed.skills_masked);
        assert_eq!(unmasked_changed.weights.numel(), 5);
        let wsum: f64 = unmasked_changed.weights.to_vec().iter().sum();
        assert!((wsum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_interact_shapes_and_permutation_invariance() {
        let d = 8;
        for seed in 0..10 {
            let cross = CrossAttentionLayer::<f64>::new(d, &mut stream_rng(seed, "test/cross"));
            let user_ind = rand_vecs(seed + 1, 1, d).pop().unwrap();
            let job_ind = rand_vecs(seed + 2, 1, d).pop().unwrap();
            let user_secs = rand_vecs(seed + 3, 5, d);
            let job_secs = rand_vecs(seed + 4, 8, d);

            let out = cross.interact(&user_ind, &user_secs, &job_ind, &job_secs).unwrap();
            assert_eq!(out.f_user.shape(), &[d]);
            assert_eq!(out.f_job.shape(), &[d]);
            assert_eq!(out.job_attention.numel(), 5);
            assert_eq!(out.user_attention.numel(), 8);

            // permuting the user's sections must not change the readout
            let perm = [4usize, 2, 0, 3, 1];
            let permuted: Vec<Tensor<f64>> = perm.iter().map(|&i| user_secs[i].clone()).collect();
            let out2 = cross.interact(&user_ind, &permuted, &job_ind, &job_secs).unwrap();
            for (a, b) in out.f_user.to_vec().iter().zip(out2.f_user.to_vec()) {
                assert!((a - b).abs() < 1e-12, "seed {seed}");
            }

            // a different job must produce a different job-oriented readout
            let other_job = rand_vecs(seed + 77, 1, d).pop().unwrap();
            let out3 = cross.interact(&user_ind, &user_secs, &other_job, &job_secs).unwrap();
            assert_ne!(out.job_attention.to_vec(), out3.job_attention.to_vec(), "seed {seed}");
        }
    }
}
