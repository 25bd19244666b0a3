//! Sentence encoder: token + position embeddings followed by post-norm
//! transformer blocks (single-head self-attention + feed-forward), shared
//! between profile and job text. The sentence embedding is the hidden state
//! at the leading CLS position; per-token states are kept for masked-token
//! prediction.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CLS, MASK, N_SPECIAL, PAD, SEP};
use crate::rng::trunc_normal_vec;
use crate::scalar::Scalar;
use crate::tensor::{scaled_dot_attention, Tensor, TensorError};

fn default_hidden_dim() -> usize {
    512
}
fn default_n_layers() -> usize {
    2
}
fn default_ff_dim() -> usize {
    0 // resolved to 4 * hidden_dim
}
fn default_max_sentence_len() -> usize {
    16
}
fn default_mask_prob() -> f64 {
    0.15
}
fn default_pad() -> u32 {
    PAD
}
fn default_cls() -> u32 {
    CLS
}
fn default_sep() -> u32 {
    SEP
}
fn default_mask_token() -> u32 {
    MASK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_n_layers")]
    pub n_layers: usize,
    /// Feed-forward width; 0 means `4 * hidden_dim`.
    #[serde(default = "default_ff_dim")]
    pub ff_dim: usize,
    #[serde(default = "default_max_sentence_len")]
    pub max_sentence_len: usize,
    /// Masked-token selection probability for the masking op.
    #[serde(default = "default_mask_prob")]
    pub mask_prob: f64,
    #[serde(default = "default_pad")]
    pub pad_id: u32,
    #[serde(default = "default_cls")]
    pub cls_id: u32,
    #[serde(default = "default_sep")]
    pub sep_id: u32,
    #[serde(default = "default_mask_token")]
    pub mask_id: u32,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden_dim: default_hidden_dim(),
            n_layers: default_n_layers(),
            ff_dim: default_ff_dim(),
            max_sentence_len: default_max_sentence_len(),
            mask_prob: default_mask_prob(),
            pad_id: PAD,
            cls_id: CLS,
            sep_id: SEP,
            mask_id: MASK,
        }
    }

    pub fn resolved_ff_dim(&self) -> usize {
        if self.ff_dim == 0 {
            4 * self.hidden_dim
        } else {
            self.ff_dim
        }
    }

    pub fn special_ids(&self) -> [u32; 4] {
        [self.pad_id, self.cls_id, self.sep_id, self.mask_id]
    }

    pub fn is_special(&self, token: u32) -> bool {
        self.special_ids().contains(&token)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.hidden_dim == 0 || self.n_layers == 0 || self.max_sentence_len == 0 {
            return Err(EncoderError::BadConfig(
                "hidden_dim, n_layers and max_sentence_len must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(EncoderError::BadConfig(format!(
                "mask_prob {} must be in [0, 1]",
                self.mask_prob
            )));
        }
        let ids = self.special_ids();
        for (i, a) in ids.iter().enumerate() {
            if *a as usize >= self.vocab_size {
                return Err(EncoderError::BadConfig(format!(
                    "special id {a} >= vocab_size {}",
                    self.vocab_size
                )));
            }
            for b in ids.iter().skip(i + 1) {
                if a == b {
                    return Err(EncoderError::BadConfig(format!("special ids collide on {a}")));
                }
            }
        }
        if self.vocab_size <= N_SPECIAL as usize {
            return Err(EncoderError::BadConfig(format!("vocab_size {} too small", self.vocab_size)));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum EncoderError {
    BadConfig(String),
    EmptySentence,
    /// Sentences longer than the configured maximum are rejected, never
    /// silently truncated.
    SentenceTooLong { len: usize, max: usize },
    TokenOutOfRange { token: u32, vocab: usize },
    NoMaskableTokens,
    Tensor(TensorError),
}

impl fmt::Display for EncoderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderError::BadConfig(m) => write!(f, "bad encoder config: {m}"),
            EncoderError::EmptySentence => write!(f, "cannot encode an empty sentence"),
            EncoderError::SentenceTooLong { len, max } => {
                write!(f, "sentence of {len} tokens exceeds max_sentence_len {max}")
            }
            EncoderError::TokenOutOfRange { token, vocab } => {
                write!(f, "token {token} out of range for vocab {vocab}")
            }
            EncoderError::NoMaskableTokens => {
                write!(f, "sentence has no non-special token to mask")
            }
            EncoderError::Tensor(e) => write!(f, "tensor error in encoder: {e}"),
        }
    }
}

impl std::error::Error for EncoderError {}

impl From<TensorError> for EncoderError {
    fn from(e: TensorError) -> Self {
        EncoderError::Tensor(e)
    }
}

// ── parameters ───────────────────────────────────────────────────────

#[derive(Clone)]
pub struct EncoderLayerParams<S: Scalar> {
    pub w_q: Tensor<S>,
    pub b_q: Tensor<S>,
    pub w_k: Tensor<S>,
    pub b_k: Tensor<S>,
    pub w_v: Tensor<S>,
    pub b_v: Tensor<S>,
    pub w_o: Tensor<S>,
    pub b_o: Tensor<S>,
    pub ln1_gamma: Tensor<S>,
    pub ln1_beta: Tensor<S>,
    pub w_ff1: Tensor<S>,
    pub b_ff1: Tensor<S>,
    pub w_ff2: Tensor<S>,
    pub b_ff2: Tensor<S>,
    pub ln2_gamma: Tensor<S>,
    pub ln2_beta: Tensor<S>,
}

/// The shared language model over sentences.
#[derive(Clone)]
pub struct Encoder<S: Scalar> {
    pub config: EncoderConfig,
    pub token_embedding: Tensor<S>,
    pub position_embedding: Tensor<S>,
    pub layers: Vec<EncoderLayerParams<S>>,
}

pub const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

pub(crate) fn param<S: Scalar>(rng: &mut ChaCha12Rng, shape: Vec<usize>) -> Tensor<S> {
    let n: usize = shape.iter().product();
    Tensor::leaf(trunc_normal_vec(rng, n, INIT_STD), shape).expect("init shape")
}

pub(crate) fn zeros_leaf<S: Scalar>(shape: Vec<usize>) -> Tensor<S> {
    let n: usize = shape.iter().product();
    Tensor::leaf(vec![S::zero(); n], shape).expect("init shape")
}

fn ones_leaf<S: Scalar>(shape: Vec<usize>) -> Tensor<S> {
    let n: usize = shape.iter().product();
    Tensor::leaf(vec![S::one(); n], shape).expect("init shape")
}

impl<S: Scalar> Encoder<S> {
    /// Fresh encoder with truncated-normal weights (std 0.02), unit
    /// layer-norm gains, zero biases.
    pub fn new(config: EncoderConfig, rng: &mut ChaCha12Rng) -> Result<Self, EncoderError> {
        config.validate()?;
        let d = config.hidden_dim;
        let ff = config.resolved_ff_dim();
        let token_embedding = param(rng, vec![config.vocab_size, d]);
        let position_embedding = param(rng, vec![config.max_sentence_len + 2, d]);
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayerParams {
                w_q: param(rng, vec![d, d]),
                b_q: zeros_leaf(vec![d]),
                w_k: param(rng, vec![d, d]),
                b_k: zeros_leaf(vec![d]),
                w_v: param(rng, vec![d, d]),
                b_v: zeros_leaf(vec![d]),
                w_o: param(rng, vec![d, d]),
                b_o: zeros_leaf(vec![d]),
                ln1_gamma: ones_leaf(vec![d]),
                ln1_beta: zeros_leaf(vec![d]),
                w_ff1: param(rng, vec![d, ff]),
                b_ff1: zeros_leaf(vec![ff]),
                w_ff2: param(rng, vec![ff, d]),
                b_ff2: zeros_leaf(vec![d]),
                ln2_gamma: ones_leaf(vec![d]),
                ln2_beta: zeros_leaf(vec![d]),
            })
            .collect();
        Ok(Encoder { config, token_embedding, position_embedding, layers })
    }

    /// Named views of every trainable tensor, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = vec![
            ("encoder.token_embedding".to_string(), self.token_embedding.clone()),
            ("encoder.position_embedding".to_string(), self.position_embedding.clone()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let mut push = |suffix: &str, t: &Tensor<S>| {
                out.push((format!("encoder.layer{i}.{suffix}"), t.clone()));
            };
            push("w_q", &l.w_q);
            push("b_q", &l.b_q);
            push("w_k", &l.w_k);
            push("b_k", &l.b_k);
            push("w_v", &l.w_v);
            push("b_v", &l.b_v);
            push("w_o", &l.w_o);
            push("b_o", &l.b_o);
            push("ln1_gamma", &l.ln1_gamma);
            push("ln1_beta", &l.ln1_beta);
            push("w_ff1", &l.w_ff1);
            push("b_ff1", &l.b_ff1);
            push("w_ff2", &l.w_ff2);
            push("b_ff2", &l.b_ff2);
            push("ln2_gamma", &l.ln2_gamma);
            push("ln2_beta", &l.ln2_beta);
        }
        out
    }

    /// Encode one sentence. The input is framed as `[CLS] tokens [SEP]`;
    /// PAD tokens inside are masked out of attention entirely.
    pub fn encode_sentence(&self, tokens: &[u32]) -> Result<EncodedSentence<S>, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptySentence);
        }
        if tokens.len() > self.config.max_sentence_len {
            return Err(EncoderError::SentenceTooLong {
                len: tokens.len(),
                max: self.config.max_sentence_len,
            });
        }
        for &t in tokens {
            if t as usize >= self.config.vocab_size {
                return Err(EncoderError::TokenOutOfRange { token: t, vocab: self.config.vocab_size });
            }
        }

        let mut framed: Vec<usize> = Vec::with_capacity(tokens.len() + 2);
        framed.push(self.config.cls_id as usize);
        framed.extend(tokens.iter().map(|t| *t as usize));
        framed.push(self.config.sep_id as usize);
        let n = framed.len();

        let pad_mask: Vec<bool> =
            framed.iter().map(|&t| t == self.config.pad_id as usize).collect();
        let any_pad = pad_mask.iter().any(|&m| m);
        let key_mask = if any_pad { Some(pad_mask.as_slice()) } else { None };

        let tok = Tensor::embedding_lookup(&self.token_embedding, &framed)?;
        let positions: Vec<usize> = (0..n).collect();
        let pos = Tensor::embedding_lookup(&self.position_embedding, &positions)?;
        let mut x = tok.add(&pos)?;

        let eps = S::from_f64(LN_EPS);
        let mut attention_weights = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let q = x.matmul(&layer.w_q)?.add_row(&layer.b_q)?;
            let k = x.matmul(&layer.w_k)?.add_row(&layer.b_k)?;
            let v = x.matmul(&layer.w_v)?.add_row(&layer.b_v)?;
            let (att, weights) = scaled_dot_attention(&q, &k, &v, key_mask)?;
            attention_weights.push(weights);
            let att_proj = att.matmul(&layer.w_o)?.add_row(&layer.b_o)?;
            x = x.add(&att_proj)?.layer_norm(&layer.ln1_gamma, &layer.ln1_beta, eps)?;
            let h = x.matmul(&layer.w_ff1)?.add_row(&layer.b_ff1)?.gelu();
            let ff = h.matmul(&layer.w_ff2)?.add_row(&layer.b_ff2)?;
            x = x.add(&ff)?.layer_norm(&layer.ln2_gamma, &layer.ln2_beta, eps)?;
        }

        let embedding = x.gather_rows(&[0])?.reshape(vec![self.config.hidden_dim])?;
        Ok(EncodedSentence { embedding, hidden: x, attention_weights, content_offset: 1 })
    }
}

/// Output of [`Encoder::encode_sentence`].
pub struct EncodedSentence<S: Scalar> {
    /// Hidden state at the CLS position: the sentence embedding.
    pub embedding: Tensor<S>,
    /// Per-token hidden states for the framed sequence (`[CLS] ... [SEP]`).
    pub hidden: Tensor<S>,
    /// Per-layer attention weight matrices, for inspection.
    pub attention_weights: Vec<Tensor<S>>,
    /// Row offset of content token `i` within `hidden` (the CLS shift).
    pub content_offset: usize,
}

// ── masked language model masking ────────────────────────────────────

/// A sentence prepared for masked-token prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSentence {
    pub masked_tokens: Vec<u32>,
    /// Content-relative positions that were selected.
    pub target_positions: Vec<usize>,
    /// Original token ids at those positions.
    pub target_ids: Vec<u32>,
}

/// Select non-special tokens independently with `config.mask_prob`; replace
/// 80% by MASK, 10% by a random non-special id, 10% left unchanged. If the
/// draw selects nothing, one maskable position is forced so every masked
/// sentence trains.
pub fn apply_mlm_mask(
    config: &EncoderConfig,
    tokens: &[u32],
    rng: &mut ChaCha12Rng,
) -> Result<MaskedSentence, EncoderError> {
    let maskable: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| !config.is_special(**t))
        .map(|(i, _)| i)
        .collect();
    if maskable.is_empty() {
        return Err(EncoderError::NoMaskableTokens);
    }

    let mut selected: Vec<usize> =
        maskable.iter().copied().filter(|_| rng.random_bool(config.mask_prob)).collect();
    if selected.is_empty() {
        selected.push(maskable[rng.random_range(0..maskable.len())]);
    }

    let mut masked_tokens = tokens.to_vec();
    let mut target_ids = Vec::with_capacity(selected.len());
    for &pos in &selected {
        target_ids.push(tokens[pos]);
        let roll: f64 = rng.random();
        if roll < 0.8 {
            masked_tokens[pos] = config.mask_id;
        } else if roll < 0.9 {
            masked_tokens[pos] = random_non_special(config, rng);
        } // else: keep the original token
    }
    Ok(MaskedSentence { masked_tokens, target_positions: selected, target_ids })
}

fn random_non_special(config: &EncoderConfig, rng: &mut ChaCha12Rng) -> u32 {
    loop {
        let t = rng.random_range(0..config.vocab_size as u32);
        if !config.is_special(t) {
            return t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn test_config() -> EncoderConfig {
        EncoderConfig {
            hidden_dim: 16,
            n_layers: 2,
            ff_dim: 32,
            max_sentence_len: 8,
            ..EncoderConfig::new(50)
        }
    }

    fn test_encoder(seed: u64) -> Encoder<f64> {
        Encoder::new(test_config(), &mut stream_rng(seed, "test/init")).unwrap()
    }

    #[test]
    fn embedding_has_hidden_dim_and_is_deterministic() {
        let enc = test_encoder(1);
        let a = enc.encode_sentence(&[5, 6, 7]).unwrap();
        let b = enc.encode_sentence(&[5, 6, 7]).unwrap();
        assert_eq!(a.embedding.shape(), &[16]);
        assert_eq!(a.hidden.shape(), &[5, 16]);
        assert_eq!(a.embedding.to_vec(), b.embedding.to_vec());
    }

    #[test]
    fn one_token_difference_changes_the_embedding() {
        for seed in 0..10 {
            let enc = test_encoder(seed);
            let a = enc.encode_sentence(&[5, 6, 7, 8]).unwrap().embedding.to_vec();
            let b = enc.encode_sentence(&[5, 6, 9, 8]).unwrap().embedding.to_vec();
            assert_ne!(a, b, "seed {seed}: embeddings identical across token change");
        }
    }

    #[test]
    fn over_length_and_bad_tokens_are_rejected() {
        let enc = test_encoder(2);
        let long: Vec<u32> = (4..13).collect();
        assert!(matches!(
            enc.encode_sentence(&long),
            Err(EncoderError::SentenceTooLong { len: 9, max: 8 })
        ));
        assert!(matches!(enc.encode_sentence(&[]), Err(EncoderError::EmptySentence)));
        assert!(matches!(
            enc.encode_sentence(&[49, 50]),
            Err(EncoderError::TokenOutOfRange { token: 50, .. })
        ));
    }

    #[test]
    fn pad_keys_get_exactly_zero_attention() {
        let enc = test_encoder(3);
        let out = enc.encode_sentence(&[5, PAD, 6, PAD]).unwrap();
        // framed: [CLS, 5, PAD, 6, PAD, SEP] -> pad columns 2 and 4
        for weights in &out.attention_weights {
            let w = weights.to_vec();
            let n = 6;
            for row in 0..n {
                assert_eq!(w[row * n + 2], 0.0);
                assert_eq!(w[row * n + 4], 0.0);
            }
        }
    }

    #[test]
    fn pad_embedding_value_cannot_leak_into_the_sentence_embedding() {
        let enc = test_encoder(4);
        let before = enc.encode_sentence(&[5, PAD, 6]).unwrap().embedding.to_vec();
        // poison the PAD embedding row
        let mut table = enc.token_embedding.to_vec();
        let d = enc.config.hidden_dim;
        for v in &mut table[PAD as usize * d..(PAD as usize + 1) * d] {
            *v += 1000.0;
        }
        enc.token_embedding.set_values(table).unwrap();
        let after = enc.encode_sentence(&[5, PAD, 6]).unwrap().embedding.to_vec();
        assert_eq!(before, after);
    }

    #[test]
    fn mlm_mask_selection_rate_matches_binomial() {
        let config = EncoderConfig { max_sentence_len: 128, ..EncoderConfig::new(500) };
        let tokens: Vec<u32> = (0..100).map(|i| 4 + (i % 400) as u32).collect();
        let mut rng = stream_rng(42, "test/mask");
        let trials = 1000;
        let mut total = 0usize;
        for _ in 0..trials {
            let m = apply_mlm_mask(&config, &tokens, &mut rng).unwrap();
            total += m.target_positions.len();
        }
        let mean = total as f64 / trials as f64;
        assert!((13.0..=17.0).contains(&mean), "mean selected {mean}");
    }

    #[test]
    fn zero_mask_prob_forces_exactly_one_target() {
        let config = EncoderConfig { mask_prob: 0.0, ..test_config() };
        let mut rng = stream_rng(1, "test/mask0");
        for _ in 0..50 {
            let m = apply_mlm_mask(&config, &[5, 6, 7, 8, 9], &mut rng).unwrap();
            assert_eq!(m.target_positions.len(), 1);
        }
    }

    #[test]
    fn mask_targets_are_the_original_tokens_and_never_special() {
        let config = test_config();
        let tokens = [5u32, PAD, 7, 8, CLS, 9];
        let mut rng = stream_rng(9, "test/mask-targets");
        for _ in 0..200 {
            let m = apply_mlm_mask(&config, &tokens, &mut rng).unwrap();
            for (&pos, &id) in m.target_positions.iter().zip(&m.target_ids) {
                assert_eq!(tokens[pos], id);
                assert!(!config.is_special(id));
            }
            // untouched positions keep their tokens
            for i in 0..tokens.len() {
                if !m.target_positions.contains(&i) {
                    assert_eq!(m.masked_tokens[i], tokens[i]);
                }
            }
        }
    }

    #[test]
    fn no_maskable_tokens_is_an_error() {
        let config = test_config();
        let mut rng = stream_rng(1, "x");
        assert!(matches!(
            apply_mlm_mask(&config, &[PAD, CLS, SEP], &mut rng),
            Err(EncoderError::NoMaskableTokens)
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = test_config();
        c.cls_id = c.sep_id;
        assert!(matches!(c.validate(), Err(EncoderError::BadConfig(_))));
        let mut c = test_config();
        c.hidden_dim = 0;
        assert!(matches!(c.validate(), Err(EncoderError::BadConfig(_))));
    }

    #[test]
    fn gradients_flow_only_to_present_token_rows() {
        let enc = test_encoder(5);
        let sent = enc.encode_sentence(&[5, 6]).unwrap();
        // non-uniform readout: the plain mean of a layer-normed row is
        // constant (zero gradient) under unit gain, which would tell us
        // nothing about the flow
        let w = Tensor::constant((0..16).map(|i| (i as f64 + 1.0) * 0.1).collect(), vec![16]).unwrap();
        sent.embedding.mul(&w).unwrap().mean_all().backward().unwrap();
        let grad = enc.token_embedding.grad().unwrap();
        let d = enc.config.hidden_dim;
        let row_nonzero = |row: u32| {
            grad[row as usize * d..(row as usize + 1) * d].iter().any(|g| *g != 0.0)
        };
        assert!(row_nonzero(5));
        assert!(row_nonzero(6));
        assert!(row_nonzero(CLS));
        assert!(row_nonzero(SEP));
        assert!(!row_nonzero(7), "absent token got gradient");
        assert!(!row_nonzero(PAD));
    }
}
