//! The full model: shared sentence encoder, the two fusion layers, the
//! cross-attention layer and the task heads, with parameter bookkeeping
//! and checkpointing.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Section;
use crate::encoder::{Encoder, EncoderConfig, EncoderError};
use crate::heads::HeadParams;
use crate::hierarchy::{
    build_individual, build_section_embeddings, CrossAttentionLayer, DocSide, FusionLayer,
    FusionLevel, HierarchyError, IndividualEmbedding, PairEmbeddings, SectionEmbeddings,
};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::tensor::{load_archive, write_archive, ArchiveError, NamedTensors, Parameter, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub k_skills: usize,
}

#[derive(Debug)]
pub enum ModelError {
    Encoder(EncoderError),
    Hierarchy(HierarchyError),
    Archive(ArchiveError),
    /// Checkpoint does not line up with the model built from its config.
    CheckpointMismatch(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Encoder(e) => write!(f, "{e}"),
            ModelError::Hierarchy(e) => write!(f, "{e}"),
            ModelError::Archive(e) => write!(f, "{e}"),
            ModelError::CheckpointMismatch(m) => write!(f, "checkpoint mismatch: {m}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<EncoderError> for ModelError {
    fn from(e: EncoderError) -> Self {
        ModelError::Encoder(e)
    }
}

impl From<HierarchyError> for ModelError {
    fn from(e: HierarchyError) -> Self {
        ModelError::Hierarchy(e)
    }
}

impl From<ArchiveError> for ModelError {
    fn from(e: ArchiveError) -> Self {
        ModelError::Archive(e)
    }
}

pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub encoder: Encoder<S>,
    pub section_fusion: FusionLayer<S>,
    pub individual_fusion: FusionLayer<S>,
    pub cross_attention: CrossAttentionLayer<S>,
    pub heads: HeadParams<S>,
}

impl<S: Scalar> Model<S> {
    /// Initialize every component from one seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.encoder.validate()?;
        let d = config.encoder.hidden_dim;
        let mut rng = stream_rng(seed, "model/init");
        let encoder = Encoder::new(config.encoder.clone(), &mut rng)?;
        let section_fusion = FusionLayer::new(FusionLevel::Section, d, &mut rng);
        let individual_fusion = FusionLayer::new(FusionLevel::Individual, d, &mut rng);
        let cross_attention = CrossAttentionLayer::new(d, &mut rng);
        let heads = HeadParams::new(d, config.encoder.vocab_size, config.k_skills, &mut rng);
        Ok(Model { config, encoder, section_fusion, individual_fusion, cross_attention, heads })
    }

    /// Every trainable tensor with its unique path name, in a fixed order.
    pub fn parameters(&self) -> Vec<Parameter<S>> {
        let mut named = self.encoder.named_tensors();
        named.extend(self.section_fusion.named_tensors("fusion.section"));
        named.extend(self.individual_fusion.named_tensors("fusion.individual"));
        named.extend(self.cross_attention.named_tensors("cross"));
        named.extend(self.heads.named_tensors());
        debug_assert!(
            {
                let mut names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
                names.sort_unstable();
                names.windows(2).all(|w| w[0] != w[1])
            },
            "parameter names must be unique"
        );
        named.into_iter().map(|(name, tensor)| Parameter { name, tensor }).collect()
    }

    pub fn zero_grads(&self) {
        for p in self.parameters() {
            p.tensor.zero_grad();
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.encoder.hidden_dim
    }

    // ── forward conveniences ─────────────────────────────────────

    /// Section embedding of a single section (used by the section-name task).
    pub fn embed_section(&self, section: &Section) -> Result<Tensor<S>, ModelError> {
        let mut embs = Vec::with_capacity(section.sentences.len());
        for sentence in &section.sentences {
            embs.push(self.encoder.encode_sentence(sentence)?.embedding);
        }
        Ok(self.section_fusion.fuse(&embs, None)?.fused)
    }

    /// Section-level embeddings for a whole document.
    pub fn embed_sections(
        &self,
        side: DocSide,
        sections: &[Section],
    ) -> Result<SectionEmbeddings<S>, ModelError> {
        Ok(build_section_embeddings(&self.encoder, &self.section_fusion, side, sections)?)
    }

    /// Individual-level embedding on top of prebuilt section embeddings.
    pub fn embed_individual(
        &self,
        sections: &SectionEmbeddings<S>,
        mask_skills: bool,
    ) -> Result<IndividualEmbedding<S>, ModelError> {
        Ok(build_individual(&self.individual_fusion, sections, mask_skills)?)
    }

    /// Full document tower: sections plus the unmasked individual.
    pub fn embed_document(
        &self,
        side: DocSide,
        sections: &[Section],
    ) -> Result<DocumentEmbedding<S>, ModelError> {
        let section_embeddings = self.embed_sections(side, sections)?;
        let individual = self.embed_individual(&section_embeddings, false)?;
        Ok(DocumentEmbedding { sections: section_embeddings, individual })
    }

    /// Final pair embeddings through the cross-attention layer.
    pub fn embed_pair(
        &self,
        user: &DocumentEmbedding<S>,
        job: &DocumentEmbedding<S>,
    ) -> Result<PairEmbeddings<S>, ModelError> {
        Ok(self.cross_attention.interact(
            &user.individual.fused,
            &user.sections.vectors(),
            &job.individual.fused,
            &job.sections.vectors(),
        )?)
    }

    // ── checkpointing ────────────────────────────────────────────

    /// Write all parameters (plus caller metadata) as a tensor archive.
    /// `extra_entries` lets the trainer append optimizer state.
    pub fn save_checkpoint(
        &self,
        path: &Path,
        extra_entries: &[(String, Tensor<S>)],
        extra_meta: serde_json::Value,
    ) -> Result<(), ModelError> {
        let mut entries: Vec<(String, Tensor<S>)> =
            self.parameters().into_iter().map(|p| (p.name, p.tensor)).collect();
        entries.extend_from_slice(extra_entries);
        let meta = serde_json::json!({
            "model_config": self.config,
            "extra": extra_meta,
        });
        write_archive(path, &entries, &meta)?;
        Ok(())
    }

    /// Rebuild a model from a checkpoint. Returns the model, any non-model
    /// entries (e.g. optimizer state) and the caller metadata.
    pub fn load_checkpoint(
        path: &Path,
    ) -> Result<(Model<S>, NamedTensors<S>, serde_json::Value), ModelError> {
        let (entries, meta) = load_archive::<S>(path)?;
        let config: ModelConfig = serde_json::from_value(
            meta.get("model_config")
                .cloned()
                .ok_or_else(|| ModelError::CheckpointMismatch("missing model_config".into()))?,
        )
        .map_err(|e| ModelError::CheckpointMismatch(format!("bad model_config: {e}")))?;
        let extra_meta = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);

        let model = Model::new(config, 0)?;
        let mut extra = Vec::new();
        let mut loaded = std::collections::BTreeMap::new();
        for (name, tensor) in entries {
            loaded.insert(name, tensor);
        }
        for p in model.parameters() {
            let t = loaded.remove(&p.name).ok_or_else(|| {
                ModelError::CheckpointMismatch(format!("checkpoint missing tensor {}", p.name))
            })?;
            if t.shape() != p.tensor.shape() {
                return Err(ModelError::CheckpointMismatch(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.tensor.shape()
                )));
            }
            p.tensor.set_values(t.to_vec()).expect("shape checked");
        }
        for (name, tensor) in loaded {
            extra.push((name, tensor));
        }
        Ok((model, extra, extra_meta))
    }
}

/// Sections plus individual embedding of one document.
pub struct DocumentEmbedding<S: Scalar> {
    pub sections: SectionEmbeddings<S>,
    pub individual: IndividualEmbedding<S>,
}

impl<S: Scalar> DocumentEmbedding<S> {
    /// Detached copy for caching: same values, no gradient graph.
    pub fn detach(&self) -> DocumentEmbedding<S> {
        DocumentEmbedding {
            sections: SectionEmbeddings {
                side: self.sections.side,
                entries: self
                    .sections
                    .entries
                    .iter()
                    .map(|(n, t)| (*n, t.detach()))
                    .collect(),
                sentence_embeddings: Vec::new(),
            },
            individual: IndividualEmbedding {
                fused: self.individual.fused.detach(),
                pooled: self.individual.pooled.detach(),
                weights: self.individual.weights.detach(),
                skills_masked: self.individual.skills_masked,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                hidden_dim: 8,
                n_layers: 1,
                ff_dim: 16,
                max_sentence_len: 6,
                ..EncoderConfig::new(40)
            },
            k_skills: 6,
        }
    }

    #[test]
    fn parameter_names_are_unique_and_stable() {
        let model = Model::<f64>::new(tiny_config(), 1).unwrap();
        let params = model.parameters();
        let names: BTreeSet<String> = params.iter().map(|p| p.name.clone()).collect();
        assert_eq!(names.len(), params.len());
        let again: Vec<String> = model.parameters().into_iter().map(|p| p.name).collect();
        let first: Vec<String> = params.into_iter().map(|p| p.name).collect();
        assert_eq!(first, again);
    }

    #[test]
    fn same_seed_same_init_different_seed_different_init() {
        let a = Model::<f64>::new(tiny_config(), 5).unwrap();
        let b = Model::<f64>::new(tiny_config(), 5).unwrap();
        let c = Model::<f64>::new(tiny_config(), 6).unwrap();
        assert_eq!(a.encoder.token_embedding.to_vec(), b.encoder.token_embedding.to_vec());
        assert_ne!(a.encoder.token_embedding.to_vec(), c.encoder.token_embedding.to_vec());
    }

    #[test]
    fn checkpoint_round_trip_is_forward_bit_identical() {
        let dir = std::env::temp_dir().join("pjfit-model-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");

        let model = Model::<f64>::new(tiny_config(), 9).unwrap();
        let sentence = vec![7u32, 8, 9];
        let before = model.encoder.encode_sentence(&sentence).unwrap().embedding.to_vec();
        model
            .save_checkpoint(&path, &[], serde_json::json!({"step": 3}))
            .unwrap();

        let (loaded, extra, meta) = Model::<f64>::load_checkpoint(&path).unwrap();
        assert!(extra.is_empty());
        assert_eq!(meta, serde_json::json!({"step": 3}));
        let after = loaded.encoder.encode_sentence(&sentence).unwrap().embedding.to_vec();
        assert_eq!(before, after);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = std::env::temp_dir().join("pjfit-model-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model-missing.ckpt");
        let model = Model::<f64>::new(tiny_config(), 9).unwrap();
        // drop one tensor from the archive
        let mut entries: Vec<(String, Tensor<f64>)> =
            model.parameters().into_iter().map(|p| (p.name, p.tensor)).collect();
        entries.pop();
        let meta = serde_json::json!({"model_config": model.config, "extra": null});
        crate::tensor::write_archive(&path, &entries, &meta).unwrap();
        assert!(matches!(
            Model::<f64>::load_checkpoint(&path),
            Err(ModelError::CheckpointMismatch(_))
        ));
    }
}
