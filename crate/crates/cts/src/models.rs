//! Assembly of the full topic-suggestion variants: the popularity and CF
//! baselines, the CRF sequence model, the CNN/RNN window classifiers, and
//! the CF-augmented hybrids, with their training loops.
//!
//! A prediction example lives at a suggestion point `i`: the system has
//! observed turns `1..=i` and must score the topic whose suggestion the
//! user reacts to at turn `i+1`. Ground-truth targets come from the
//! test-scenario labels (rejections promoted when the user later engages),
//! while all *features* are computed from the actual reaction history
//! (training-scenario labels), since promotion peeks at future turns.

use std::collections::{HashMap, HashSet};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    assign_training_labels, label_corpus_test, label_corpus_training, Conversation, Corpus,
    SplitProvenance, SuggestibleTopic, TurnLabel,
};
use crate::crf::{
    label_index, predict_next_topic, train_crf, CrfError, CrfFeatureLayout, CrfInstance,
    CrfModel, CrfTrainConfig,
};
use crate::features::{
    assemble_fv, state_after_turns, FeatureError, FEATURE_VECTOR_LEN, TOPICAL_BLOCK_LEN,
};
use crate::nn::{
    adam_step, dropout_mask, relu, relu_backward, softmax, softmax_ce, AdamConfig, AdamState,
    Attention, BiLstm, CnnEncoder, Dense, EmbeddingTable, FlatParams, LstmParams, NnError,
    ParamLayout, Vocab,
};
use crate::recommenders::{
    build_user_vector, contextual_cf_features, popularity_order, CfHead, CfModel,
    ContextualCfHead, HeadTrainConfig, RecommenderError, TopicScores,
};

const N_TOPICS: usize = SuggestibleTopic::COUNT;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown variant \"{0}\"")]
    UnknownVariant(String),
    #[error("training corpus is empty")]
    EmptyTrainingCorpus,
    #[error("training on a test-split corpus is not allowed")]
    TestSplitInTraining,
    #[error("no suggestion events in the corpus")]
    NoEvents,
    #[error("model was trained as {expected}, asked to run as {got}")]
    VariantMismatch { expected: String, got: String },
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Recommender(#[from] RecommenderError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// The nine compared methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Popularity,
    Cf,
    ContextualCf,
    CtsCrf,
    CtsCnn,
    CtsRnn,
    CtsCrfCf,
    CtsCnnCf,
    CtsRnnCf,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Popularity,
        Variant::Cf,
        Variant::ContextualCf,
        Variant::CtsCrf,
        Variant::CtsCnn,
        Variant::CtsRnn,
        Variant::CtsCrfCf,
        Variant::CtsCnnCf,
        Variant::CtsRnnCf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Popularity => "popularity",
            Variant::Cf => "cf",
            Variant::ContextualCf => "contextual-cf",
            Variant::CtsCrf => "cts-crf",
            Variant::CtsCnn => "cts-cnn",
            Variant::CtsRnn => "cts-rnn",
            Variant::CtsCrfCf => "cts-crf-cf",
            Variant::CtsCnnCf => "cts-cnn-cf",
            Variant::CtsRnnCf => "cts-rnn-cf",
        }
    }

    pub fn parse(s: &str) -> Result<Variant, ModelError> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }

    /// Whether the variant consumes collaborative-filtering features.
    pub fn uses_cf(self) -> bool {
        matches!(
            self,
            Variant::Cf
                | Variant::ContextualCf
                | Variant::CtsCrfCf
                | Variant::CtsCnnCf
                | Variant::CtsRnnCf
        )
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Feature-group switches for the ablation grid. `cf` only matters for the
/// hybrid variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroups {
    pub text: bool,
    pub topical: bool,
    pub profile: bool,
    pub cf: bool,
}

impl Default for FeatureGroups {
    fn default() -> FeatureGroups {
        FeatureGroups {
            text: true,
            topical: true,
            profile: true,
            cf: true,
        }
    }
}

impl FeatureGroups {
    pub fn none() -> FeatureGroups {
        FeatureGroups {
            text: true,
            topical: false,
            profile: false,
            cf: false,
        }
    }

    /// Zero out the disabled blocks of a feature vector.
    pub fn mask_fv(&self, fv: &mut [f64]) {
        if !self.topical {
            for v in fv[..TOPICAL_BLOCK_LEN].iter_mut() {
                *v = 0.0;
            }
        }
        if !self.profile {
            for v in fv[TOPICAL_BLOCK_LEN..FEATURE_VECTOR_LEN].iter_mut() {
                *v = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub window: usize,
    pub features: FeatureGroups,
}

/// One scorable suggestion event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuggestionEvent {
    pub conv_idx: usize,
    /// 1-based turn carrying the user's reaction.
    pub reaction_turn: usize,
    /// Accepted topic (after test-time promotion).
    pub target: SuggestibleTopic,
    /// 1-based ordinal of this suggestion within its conversation,
    /// counting both accepted and rejected suggestions.
    pub ordinal: usize,
}

/// A corpus prepared for prediction: feature-basis conversations labeled
/// with the actual reactions, plus the promoted-label suggestion events.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub conversations: Vec<Conversation>,
    pub events: Vec<SuggestionEvent>,
}

impl PreparedCorpus {
    pub fn from_corpus(corpus: &Corpus) -> PreparedCorpus {
        let feature_basis = label_corpus_training(corpus);
        let promoted = label_corpus_test(corpus);
        let mut events = Vec::new();
        for (conv_idx, conv) in promoted.conversations.iter().enumerate() {
            let mut ordinal = 0;
            for turn in &conv.turns {
                match turn.label {
                    Some(TurnLabel::Accept(t)) => {
                        ordinal += 1;
                        events.push(SuggestionEvent {
                            conv_idx,
                            reaction_turn: turn.index as usize,
                            target: t,
                            ordinal,
                        });
                    }
                    Some(TurnLabel::Reject(_)) => {
                        ordinal += 1;
                    }
                    _ => {}
                }
            }
        }
        PreparedCorpus {
            conversations: feature_basis.conversations,
            events,
        }
    }
}

/// Precomputed per-conversation CF distributions: `dist[h]` is the softmax
/// of the CF scores for the history of the first `h` turns.
#[derive(Debug, Clone)]
pub struct CfCache {
    per_conv: HashMap<usize, Vec<[f64; 8]>>,
}

impl CfCache {
    pub fn build(cf: &CfModel, prepared: &PreparedCorpus) -> CfCache {
        let conv_indices: Vec<usize> = {
            let set: HashSet<usize> = prepared.events.iter().map(|e| e.conv_idx).collect();
            let mut v: Vec<usize> = set.into_iter().collect();
            v.sort_unstable();
            v
        };
        let entries: Vec<(usize, Vec<[f64; 8]>)> = conv_indices
            .par_iter()
            .map(|&idx| {
                let conv = &prepared.conversations[idx];
                let dists = (0..=conv.turns.len())
                    .map(|h| {
                        let user = build_user_vector(conv, h + 1).expect("h in range");
                        cf.predict(&user).softmax()
                    })
                    .collect();
                (idx, dists)
            })
            .collect();
        CfCache {
            per_conv: entries.into_iter().collect(),
        }
    }

    /// Distribution after the first `h` turns of a conversation.
    pub fn dist(&self, conv_idx: usize, h: usize) -> [f64; 8] {
        self.per_conv
            .get(&conv_idx)
            .and_then(|v| v.get(h))
            .copied()
            .unwrap_or([1.0 / N_TOPICS as f64; N_TOPICS])
    }
}

/// Dimensions of the neural encoders; the published configuration by
/// default, with a smaller profile for time-boxed experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralHyper {
    pub embedding_dim: usize,
    pub cnn_filters: usize,
    pub cnn_widths: Vec<usize>,
    pub cnn_layers: usize,
    pub rnn_hidden: usize,
    pub attention_dim: usize,
    pub window_hidden: usize,
    pub dense_dim: usize,
    pub dropout: f64,
}

impl Default for NeuralHyper {
    fn default() -> NeuralHyper {
        NeuralHyper {
            embedding_dim: 300,
            cnn_filters: 128,
            cnn_widths: vec![1, 2, 3],
            cnn_layers: 3,
            rnn_hidden: 256,
            attention_dim: 256,
            window_hidden: 100,
            dense_dim: 256,
            dropout: 0.5,
        }
    }
}

impl NeuralHyper {
    /// Reduced dimensions (embedding 50, filters 32, hidden 64) for
    /// wall-clock-bounded runs.
    pub fn reduced() -> NeuralHyper {
        NeuralHyper {
            embedding_dim: 50,
            cnn_filters: 32,
            cnn_widths: vec![1, 2, 3],
            cnn_layers: 3,
            rnn_hidden: 64,
            attention_dim: 64,
            window_hidden: 64,
            dense_dim: 256,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Cnn,
    Rnn,
}

/// The CNN/RNN window classifier. Per slot, the utterance encoding is
/// merged with the (masked) feature vector and the CF block; a
/// unidirectional LSTM runs over the window and a dense + softmax head
/// scores the 8 topics. The CF block is zeroed for non-hybrid variants so
/// the architecture is identical either way.
#[derive(Debug, Clone)]
pub struct SeqNet {
    pub kind: EncoderKind,
    pub embedding: EmbeddingTable,
    pub cnn: Option<CnnEncoder>,
    pub rnn: Option<(BiLstm, Attention)>,
    pub window_lstm: LstmParams,
    pub dense: Dense,
    pub out: Dense,
    pub hyper: NeuralHyper,
}

impl SeqNet {
    pub fn new<R: Rng>(rng: &mut R, kind: EncoderKind, vocab: Vocab, hyper: &NeuralHyper) -> SeqNet {
        let embedding = EmbeddingTable::new(rng, vocab, hyper.embedding_dim);
        let (cnn, rnn) = match kind {
            EncoderKind::Cnn => (
                Some(CnnEncoder::new(
                    rng,
                    hyper.embedding_dim,
                    hyper.cnn_filters,
                    &hyper.cnn_widths,
                    hyper.cnn_layers,
                )),
                None,
            ),
            EncoderKind::Rnn => (
                None,
                Some((
                    BiLstm::new(rng, hyper.rnn_hidden, hyper.embedding_dim),
                    Attention::new(rng, hyper.attention_dim, 2 * hyper.rnn_hidden),
                )),
            ),
        };
        let enc_dim = match kind {
            EncoderKind::Cnn => hyper.cnn_filters * hyper.cnn_widths.len(),
            EncoderKind::Rnn => 2 * hyper.rnn_hidden,
        };
        let rep_dim = enc_dim + FEATURE_VECTOR_LEN + N_TOPICS;
        SeqNet {
            kind,
            embedding,
            cnn,
            rnn,
            window_lstm: LstmParams::new(rng, hyper.window_hidden, rep_dim),
            dense: Dense::new(rng, hyper.dense_dim, hyper.window_hidden),
            out: Dense::new(rng, N_TOPICS, hyper.dense_dim),
            hyper: hyper.clone(),
        }
    }

    pub fn encoder_dim(&self) -> usize {
        match self.kind {
            EncoderKind::Cnn => self.hyper.cnn_filters * self.hyper.cnn_widths.len(),
            EncoderKind::Rnn => 2 * self.hyper.rnn_hidden,
        }
    }

    pub fn rep_dim(&self) -> usize {
        self.encoder_dim() + FEATURE_VECTOR_LEN + N_TOPICS
    }

    fn zeros_like(&self) -> SeqNet {
        SeqNet {
            kind: self.kind,
            embedding: EmbeddingTable {
                vocab: self.embedding.vocab.clone(),
                weights: Array2::zeros(self.embedding.weights.dim()),
            },
            cnn: self.cnn.as_ref().map(|c| c.zeros_like()),
            rnn: self
                .rnn
                .as_ref()
                .map(|(b, a)| (b.zeros_like(), a.zeros_like())),
            window_lstm: self.window_lstm.zeros_like(),
            dense: self.dense.zeros_like(),
            out: self.out.zeros_like(),
            hyper: self.hyper.clone(),
        }
    }
}

impl FlatParams for SeqNet {
    fn param_layout(&self) -> ParamLayout {
        let mut layout = ParamLayout::default();
        let (v, e) = self.embedding.weights.dim();
        layout.push("embedding.weights", &[v, e]);
        if let Some(cnn) = &self.cnn {
            for (l, layer) in cnn.layers.iter().enumerate() {
                for conv in layer {
                    layout.push(
                        format!("cnn.l{l}.w{}.w", conv.width),
                        &[conv.w.nrows(), conv.w.ncols()],
                    );
                    layout.push(format!("cnn.l{l}.w{}.b", conv.width), &[conv.b.len()]);
                }
            }
        }
        if let Some((bilstm, att)) = &self.rnn {
            for (name, p) in [("rnn.fwd", &bilstm.fwd), ("rnn.bwd", &bilstm.bwd)] {
                layout.push(format!("{name}.wx"), &[p.wx.nrows(), p.wx.ncols()]);
                layout.push(format!("{name}.wh"), &[p.wh.nrows(), p.wh.ncols()]);
                layout.push(format!("{name}.b"), &[p.b.len()]);
            }
            layout.push("attention.m", &[att.m.nrows(), att.m.ncols()]);
            layout.push("attention.b", &[att.b.len()]);
            layout.push("attention.c", &[att.c.len()]);
        }
        layout.push(
            "window.wx",
            &[self.window_lstm.wx.nrows(), self.window_lstm.wx.ncols()],
        );
        layout.push(
            "window.wh",
            &[self.window_lstm.wh.nrows(), self.window_lstm.wh.ncols()],
        );
        layout.push("window.b", &[self.window_lstm.b.len()]);
        layout.push("dense.w", &[self.dense.w.nrows(), self.dense.w.ncols()]);
        layout.push("dense.b", &[self.dense.b.len()]);
        layout.push("out.w", &[self.out.w.nrows(), self.out.w.ncols()]);
        layout.push("out.b", &[self.out.b.len()]);
        layout
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.embedding.weights.iter());
        if let Some(cnn) = &self.cnn {
            for layer in &cnn.layers {
                for conv in layer {
                    out.extend(conv.w.iter());
                    out.extend(conv.b.iter());
                }
            }
        }
        if let Some((bilstm, att)) = &self.rnn {
            for p in [&bilstm.fwd, &bilstm.bwd] {
                out.extend(p.wx.iter());
                out.extend(p.wh.iter());
                out.extend(p.b.iter());
            }
            out.extend(att.m.iter());
            out.extend(att.b.iter());
            out.extend(att.c.iter());
        }
        out.extend(self.window_lstm.wx.iter());
        out.extend(self.window_lstm.wh.iter());
        out.extend(self.window_lstm.b.iter());
        out.extend(self.dense.w.iter());
        out.extend(self.dense.b.iter());
        out.extend(self.out.w.iter());
        out.extend(self.out.b.iter());
        out
    }

    fn unflatten(&mut self, data: &[f64]) -> Result<(), NnError> {
        let expected = self.param_layout().total;
        if data.len() != expected {
            return Err(NnError::BadParamBuffer {
                got: data.len(),
                expected,
            });
        }
        let mut pos = 0;
        let mut take = |dst: &mut dyn Iterator<Item = &mut f64>, n: usize, pos: &mut usize| {
            for (d, s) in dst.zip(&data[*pos..*pos + n]) {
                *d = *s;
            }
            *pos += n;
        };
        let n = self.embedding.weights.len();
        take(&mut self.embedding.weights.iter_mut(), n, &mut pos);
        if let Some(cnn) = &mut self.cnn {
            for layer in &mut cnn.layers {
                for conv in layer {
                    let n = conv.w.len();
                    take(&mut conv.w.iter_mut(), n, &mut pos);
                    let n = conv.b.len();
                    take(&mut conv.b.iter_mut(), n, &mut pos);
                }
            }
        }
        if let Some((bilstm, att)) = &mut self.rnn {
            for p in [&mut bilstm.fwd, &mut bilstm.bwd] {
                let n = p.wx.len();
                take(&mut p.wx.iter_mut(), n, &mut pos);
                let n = p.wh.len();
                take(&mut p.wh.iter_mut(), n, &mut pos);
                let n = p.b.len();
                take(&mut p.b.iter_mut(), n, &mut pos);
            }
            let n = att.m.len();
            take(&mut att.m.iter_mut(), n, &mut pos);
            let n = att.b.len();
            take(&mut att.b.iter_mut(), n, &mut pos);
            let n = att.c.len();
            take(&mut att.c.iter_mut(), n, &mut pos);
        }
        let n = self.window_lstm.wx.len();
        take(&mut self.window_lstm.wx.iter_mut(), n, &mut pos);
        let n = self.window_lstm.wh.len();
        take(&mut self.window_lstm.wh.iter_mut(), n, &mut pos);
        let n = self.window_lstm.b.len();
        take(&mut self.window_lstm.b.iter_mut(), n, &mut pos);
        let n = self.dense.w.len();
        take(&mut self.dense.w.iter_mut(), n, &mut pos);
        let n = self.dense.b.len();
        take(&mut self.dense.b.iter_mut(), n, &mut pos);
        let n = self.out.w.len();
        take(&mut self.out.w.iter_mut(), n, &mut pos);
        let n = self.out.b.len();
        take(&mut self.out.b.iter_mut(), n, &mut pos);
        Ok(())
    }
}

/// One window slot ready for the network.
#[derive(Debug, Clone)]
pub struct SlotInput {
    pub token_ids: Vec<usize>,
    /// Masked feature vector (68 entries).
    pub fv: Vec<f64>,
    /// CF distribution block (8 entries; zeros for non-hybrids and pads).
    pub cf: [f64; 8],
    pub is_pad: bool,
}

struct SlotCache {
    emb: Option<Array2<f64>>,
    cnn: Option<crate::nn::CnnEncoderCache>,
    rnn: Option<(Array2<f64>, crate::nn::BiLstmCache, crate::nn::AttentionCache)>,
}

struct ForwardCache {
    slots: Vec<SlotCache>,
    reps: Array2<f64>,
    window_hs: Array2<f64>,
    window_cache: crate::nn::LstmCache,
    dense_pre: Array1<f64>,
    dense_post: Array1<f64>,
    dropout: Option<Array1<f64>>,
}

impl SeqNet {
    /// Forward over a window; `dropout_rng` enables train mode.
    fn forward_window<R: Rng>(
        &self,
        slots: &[SlotInput],
        use_text: bool,
        mut dropout_rng: Option<&mut R>,
    ) -> (Array1<f64>, ForwardCache) {
        let rep_dim = self.rep_dim();
        let enc_dim = self.encoder_dim();
        let mut reps = Array2::zeros((slots.len(), rep_dim));
        let mut slot_caches = Vec::with_capacity(slots.len());
        for (s, slot) in slots.iter().enumerate() {
            let mut cache = SlotCache {
                emb: None,
                cnn: None,
                rnn: None,
            };
            if !slot.is_pad && use_text && !slot.token_ids.is_empty() {
                let emb = self.embedding.embed(&slot.token_ids);
                let y: Array1<f64> = match self.kind {
                    EncoderKind::Cnn => {
                        let enc = self.cnn.as_ref().expect("cnn encoder");
                        let (y, c) = enc.forward(&emb);
                        cache.cnn = Some(c);
                        y
                    }
                    EncoderKind::Rnn => {
                        let (bilstm, att) = self.rnn.as_ref().expect("rnn encoder");
                        let (hs, bc) = bilstm.forward(&emb);
                        let (y, ac) = att.forward(&hs);
                        cache.rnn = Some((hs, bc, ac));
                        y
                    }
                };
                cache.emb = Some(emb);
                for (k, v) in y.iter().enumerate() {
                    reps[(s, k)] = *v;
                }
            }
            for (k, v) in slot.fv.iter().enumerate() {
                reps[(s, enc_dim + k)] = *v;
            }
            for (k, v) in slot.cf.iter().enumerate() {
                reps[(s, enc_dim + FEATURE_VECTOR_LEN + k)] = *v;
            }
            slot_caches.push(cache);
        }

        let (window_hs, window_cache) = self.window_lstm.forward(&reps);
        let last_h = window_hs.row(window_hs.nrows() - 1).to_owned();
        let dense_pre = self.dense.forward(&last_h);
        let mut dense_post = relu(&dense_pre);
        let dropout = dropout_rng.as_deref_mut().map(|rng| {
            let mask = dropout_mask(rng, dense_post.len(), self.hyper.dropout);
            dense_post = &dense_post * &mask;
            mask
        });
        let logits = self.out.forward(&dense_post);
        (
            logits,
            ForwardCache {
                slots: slot_caches,
                reps,
                window_hs,
                window_cache,
                dense_pre,
                dense_post,
                dropout,
            },
        )
    }

    fn backward_window(
        &self,
        slots: &[SlotInput],
        use_text: bool,
        cache: &ForwardCache,
        dlogits: &Array1<f64>,
        grads: &mut SeqNet,
    ) {
        let mut d_post = self.out.backward(&cache.dense_post, dlogits, &mut grads.out);
        if let Some(mask) = &cache.dropout {
            d_post = &d_post * mask;
        }
        let d_pre = relu_backward(&cache.dense_pre, &d_post);
        let d_last_h = self
            .dense
            .backward(cache.window_hs.row(cache.window_hs.nrows() - 1).to_owned().view().to_owned().view().into_owned().view().to_owned().view().into_owned().view().to_owned().view().into_owned().view().to_owned().view().into_owned().view().to_owned().view().into_owned().view().to_owned().view().into_owned().view().to_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned().view().into_owned(), &d_pre, &mut grads.dense);
        let mut dh = Array2::zeros(cache.window_hs.dim());
        dh.row_mut(dh.nrows() - 1).assign(&d_last_h);
        let d_reps =
            self.window_lstm
                .backward(&cache.window_cache, &cache.window_hs, &dh, &mut grads.window_lstm);

        if !use_text {
            return;
        }
        let enc_dim = self.encoder_dim();
        for (s, slot) in slots.iter().enumerate() {
            if slot.is_pad || slot.token_ids.is_empty() {
                continue;
            }
            let dy = d_reps.row(s).slice(ndarray::s![..enc_dim]).to_owned();
            let slot_cache = &cache.slots[s];
            let emb = slot_cache.emb.as_ref().expect("text slot has embedding");
            let d_emb = match self.kind {
                EncoderKind::Cnn => {
                    let enc = self.cnn.as_ref().expect("cnn");
                    enc.backward(
                        slot_cache.cnn.as_ref().expect("cache"),
                        &dy,
                        grads.cnn.as_mut().expect("grads"),
                    )
                }
                EncoderKind::Rnn => {
                    let (bilstm, att) = self.rnn.as_ref().expect("rnn");
                    let (hs, bc, ac) = slot_cache.rnn.as_ref().expect("cache");
                    let (gb, ga) = grads.rnn.as_mut().expect("grads");
                    let dhs = att.backward(ac, &dy, ga);
                    let _ = hs;
                    bilstm.backward(bc, &dhs, gb)
                }
            };
            let _ = emb;
            self.embedding.backward(
                &slot.token_ids,
                &d_emb,
                &mut grads.embedding.weights,
            );
        }
    }
}

/// The trained artifact for any variant.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub payload: ModelPayload,
}

#[derive(Debug, Clone)]
pub enum ModelPayload {
    Popularity,
    Cf {
        cf: CfModel,
        head: CfHead,
    },
    ContextualCf {
        cf: CfModel,
        head: ContextualCfHead,
    },
    Crf {
        model: CrfModel,
        cf: Option<CfModel>,
    },
    Neural {
        net: Box<SeqNet>,
        cf: Option<CfModel>,
    },
}

/// Everything the training loops need; the CLI config maps onto this.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub seed: u64,
    pub window: usize,
    pub features: FeatureGroups,
    pub cf_k: usize,
    pub hyper: NeuralHyper,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Cap on training events per epoch; 0 means all.
    pub max_events: usize,
    pub crf: CrfTrainConfig,
    pub head: HeadTrainConfig,
    pub ccf_hidden: usize,
    pub embedding_file: Option<std::path::PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> TrainSettings {
        TrainSettings {
            seed: 42,
            window: 5,
            features: FeatureGroups::default(),
            cf_k: 33,
            hyper: NeuralHyper::default(),
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 6,
            patience: 2,
            max_events: 0,
            crf: CrfTrainConfig::default(),
            head: HeadTrainConfig::default(),
            ccf_hidden: 256,
            embedding_file: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub variant: String,
    pub events: usize,
    pub epoch_losses: Vec<f64>,
}

fn vocab_from(prepared: &PreparedCorpus) -> Vocab {
    let mut tokens: Vec<String> = Vec::new();
    for conv in &prepared.conversations {
        for turn in &conv.turns {
            tokens.extend(turn.tokens().iter().map(|t| t.to_string()));
        }
    }
    Vocab::build(tokens)
}

/// Assemble the window slots for a suggestion point.
fn slot_inputs(
    conv: &Conversation,
    conv_idx: usize,
    suggestion_point: usize,
    window: usize,
    features: &FeatureGroups,
    vocab: &Vocab,
    cf: Option<&CfCache>,
) -> Vec<SlotInput> {
    let mut slots = Vec::with_capacity(window);
    let start = suggestion_point as i64 - window as i64 + 1;
    for j in start..=(suggestion_point as i64) {
        if j < 1 {
            slots.push(SlotInput {
                token_ids: Vec::new(),
                fv: vec![0.0; FEATURE_VECTOR_LEN],
                cf: [0.0; 8],
                is_pad: true,
            });
            continue;
        }
        let j = j as usize;
        let state = state_after_turns(conv, j - 1).expect("turn in range");
        let mut fv = assemble_fv(&state).values;
        features.mask_fv(&mut fv);
        let tokens: Vec<String> = conv.turns[j - 1]
            .tokens()
            .iter()
            .map(|t| t.to_string())
            .collect();
        let cf_block = match cf {
            // CF state through turn j: the slot's reaction is resolved.
            Some(cache) if features.cf => cache.dist(conv_idx, j),
            _ => [0.0; 8],
        };
        slots.push(SlotInput {
            token_ids: vocab.encode(&tokens),
            fv,
            cf: cf_block,
            is_pad: false,
        });
    }
    slots
}

fn check_trainable(corpus: &Corpus) -> Result<(), ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyTrainingCorpus);
    }
    if corpus.split == SplitProvenance::Test {
        return Err(ModelError::TestSplitInTraining);
    }
    Ok(())
}

/// Train a model of the given variant on the (train-split) corpus.
pub fn train(
    variant: Variant,
    corpus: &Corpus,
    settings: &TrainSettings,
) -> Result<(TrainedModel, TrainLog), ModelError> {
    check_trainable(corpus)?;
    let prepared = PreparedCorpus::from_corpus(corpus);
    let spec = ModelSpec {
        variant,
        window: settings.window,
        features: settings.features,
    };
    let mut log = TrainLog {
        variant: variant.as_str().to_string(),
        events: prepared.events.len(),
        ..TrainLog::default()
    };

    let payload = match variant {
        Variant::Popularity => ModelPayload::Popularity,
        Variant::Cf => {
            let training_basis = label_corpus_training(corpus);
            let cf = CfModel::fit(&training_basis, settings.cf_k)?;
            if prepared.events.is_empty() {
                return Err(ModelError::NoEvents);
            }
            let examples: Vec<(Vec<f64>, usize)> = prepared
                .events
                .iter()
                .map(|e| {
                    let conv = &prepared.conversations[e.conv_idx];
                    let user = build_user_vector(conv, e.reaction_turn)?;
                    Ok((cf.predict(&user).scores.to_vec(), e.target.code()))
                })
                .collect::<Result<_, FeatureError>>()?;
            let mut head = CfHead::zeros();
            log.epoch_losses = head.train(&examples, &settings.head)?;
            ModelPayload::Cf { cf, head }
        }
        Variant::ContextualCf => {
            let training_basis = label_corpus_training(corpus);
            let cf = CfModel::fit(&training_basis, settings.cf_k)?;
            if prepared.events.is_empty() {
                return Err(ModelError::NoEvents);
            }
            let m = settings.window;
            let examples: Vec<(Vec<f64>, usize)> = prepared
                .events
                .par_iter()
                .map(|e| {
                    let conv = &prepared.conversations[e.conv_idx];
                    let ccf = contextual_cf_features(conv, e.reaction_turn - 1, m, &cf)?;
                    Ok((ccf, e.target.code()))
                })
                .collect::<Result<_, RecommenderError>>()?;
            let mut head = ContextualCfHead::zeros(m, settings.ccf_hidden);
            log.epoch_losses = head.train(m, settings.ccf_hidden, &examples, &settings.head)?;
            ModelPayload::ContextualCf { cf, head }
        }
        Variant::CtsCrf | Variant::CtsCrfCf => {
            if prepared.events.is_empty() {
                return Err(ModelError::NoEvents);
            }
            let cf = if variant.uses_cf() {
                let training_basis = label_corpus_training(corpus);
                Some(CfModel::fit(&training_basis, settings.cf_k)?)
            } else {
                None
            };
            let cache = cf.as_ref().map(|m| CfCache::build(m, &prepared));
            let instances = build_crf_instances(&prepared, corpus, settings, cache.as_ref())?;
            let obs_dim = FEATURE_VECTOR_LEN + if cf.is_some() { N_TOPICS } else { 0 };
            let layout = CrfFeatureLayout::for_fv(obs_dim);
            let outcome = train_crf(layout, &instances, &settings.crf)?;
            log.epoch_losses = vec![outcome.final_nll];
            ModelPayload::Crf {
                model: outcome.model,
                cf,
            }
        }
        Variant::CtsCnn | Variant::CtsRnn | Variant::CtsCnnCf | Variant::CtsRnnCf => {
            if prepared.events.is_empty() {
                return Err(ModelError::NoEvents);
            }
            let kind = match variant {
                Variant::CtsCnn | Variant::CtsCnnCf => EncoderKind::Cnn,
                _ => EncoderKind::Rnn,
            };
            let cf = if variant.uses_cf() {
                let training_basis = label_corpus_training(corpus);
                Some(CfModel::fit(&training_basis, settings.cf_k)?)
            } else {
                None
            };
            let cache = cf.as_ref().map(|m| CfCache::build(m, &prepared));
            let (net, losses) =
                train_neural(kind, &prepared, settings, cache.as_ref(), &mut log)?;
            log.epoch_losses = losses;
            ModelPayload::Neural {
                net: Box::new(net),
                cf,
            }
        }
    };
    Ok((TrainedModel { spec, payload }, log))
}

/// CRF training sequences: for each suggestion event at reaction turn `r`,
/// the labeled window of turns `max(1, r-window) ..= r`. Observations use
/// the actual-reaction labels for features; the sequence labels come from
/// the promoted (test-scenario) labeling so targets match evaluation.
fn build_crf_instances(
    prepared: &PreparedCorpus,
    corpus: &Corpus,
    settings: &TrainSettings,
    cache: Option<&CfCache>,
) -> Result<Vec<CrfInstance>, ModelError> {
    let promoted = label_corpus_test(corpus);
    let mut instances = Vec::with_capacity(prepared.events.len());
    for event in &prepared.events {
        let conv = &prepared.conversations[event.conv_idx];
        let promoted_conv = &promoted.conversations[event.conv_idx];
        let r = event.reaction_turn;
        let start = r.saturating_sub(settings.window).max(1);
        let mut obs = Vec::with_capacity(r - start + 1);
        let mut labels = Vec::with_capacity(r - start + 1);
        for j in start..=r {
            let state = state_after_turns(conv, j - 1)?;
            let mut fv = assemble_fv(&state).values;
            settings.features.mask_fv(&mut fv);
            if let Some(cache) = cache {
                // Same information basis as the fv: history before turn j.
                fv.extend(cache.dist(event.conv_idx, j - 1));
            }
            obs.push(fv);
            labels.push(label_index(
                promoted_conv.turns[j - 1].label.expect("labeled"),
            ));
        }
        instances.push(CrfInstance { obs, labels });
    }
    Ok(instances)
}

fn train_neural(
    kind: EncoderKind,
    prepared: &PreparedCorpus,
    settings: &TrainSettings,
    cache: Option<&CfCache>,
    _log: &mut TrainLog,
) -> Result<(SeqNet, Vec<f64>), ModelError> {
    let vocab = vocab_from(prepared);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut net = SeqNet::new(&mut rng, kind, vocab, &settings.hyper);
    if let Some(path) = &settings.embedding_file {
        net.embedding
            .load_pretrained(path)
            .map_err(|e| ModelError::Nn(NnError::ShapeMismatch {
                context: format!("embedding file: {e}"),
            }))?;
    }

    // Precompute slot inputs per event.
    let examples: Vec<(Vec<SlotInput>, usize)> = prepared
        .events
        .iter()
        .map(|e| {
            let conv = &prepared.conversations[e.conv_idx];
            let slots = slot_inputs(
                conv,
                e.conv_idx,
                e.reaction_turn - 1,
                settings.window,
                &settings.features,
                &net.embedding.vocab,
                cache,
            );
            (slots, e.target.code())
        })
        .collect();

    let layout = net.param_layout();
    let mut params = net.flatten();
    let mut adam = AdamState::new(params.len());
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut best_loss = f64::INFINITY;
    let mut stale_epochs = 0;

    for _epoch in 0..settings.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let epoch_examples: &[usize] = if settings.max_events > 0 {
            &order[..order.len().min(settings.max_events)]
        } else {
            &order
        };
        let mut epoch_loss = 0.0;
        for batch in epoch_examples.chunks(settings.batch_size) {
            let mut grads = net.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (slots, target) = &examples[i];
                let (logits, cache) =
                    net.forward_window(slots, settings.features.text, Some(&mut rng));
                let (loss, dlogits) = softmax_ce(&logits, *target);
                net.backward_window(slots, settings.features.text, &cache, &dlogits, &mut grads);
                batch_loss += loss;
            }
            let scale = 1.0 / batch.len() as f64;
            let grad_flat: Vec<f64> = grads.flatten().iter().map(|g| g * scale).collect();
            adam_step(&mut params, &grad_flat, &mut adam, &settings.adam, &layout)?;
            net.unflatten(&params)?;
            epoch_loss += batch_loss;
        }
        let mean_loss = epoch_loss / epoch_examples.len() as f64;
        losses.push(mean_loss);
        if mean_loss + 1e-6 < best_loss {
            best_loss = mean_loss;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= settings.patience {
                break;
            }
        }
    }
    Ok((net, losses))
}

/// Topics already suggested (accepted or rejected) in turns `1..=i`.
fn suggested_before(conv: &Conversation, i: usize) -> HashSet<SuggestibleTopic> {
    conv.turns[..i.min(conv.turns.len())]
        .iter()
        .filter_map(|t| t.label.and_then(|l| l.suggestion_topic()))
        .collect()
}

fn popularity_scores(conv: &Conversation, i: usize) -> TopicScores {
    let used = suggested_before(conv, i);
    let order = popularity_order(conv.time_of_day);
    let mut ranked: Vec<SuggestibleTopic> =
        order.iter().copied().filter(|t| !used.contains(t)).collect();
    ranked.extend(order.iter().copied().filter(|t| used.contains(t)));
    let mut scores = [0.0; N_TOPICS];
    let total: f64 = (1..=N_TOPICS).sum::<usize>() as f64;
    for (pos, t) in ranked.iter().enumerate() {
        scores[t.code()] = (N_TOPICS - pos) as f64 / total;
    }
    TopicScores { scores }
}

/// Score the 8 topics at suggestion point `i` of a conversation labeled
/// with actual reactions (`i = 0` is the cold start before any turn).
/// Returns a distribution (entries sum to 1).
pub fn forward(
    model: &TrainedModel,
    conv: &Conversation,
    conv_idx: usize,
    i: usize,
    cf_cache: Option<&CfCache>,
) -> Result<TopicScores, ModelError> {
    let spec = &model.spec;
    match &model.payload {
        ModelPayload::Popularity => Ok(popularity_scores(conv, i)),
        ModelPayload::Cf { cf, head } => {
            let user = build_user_vector(conv, i + 1)?;
            Ok(head.predict(&cf.predict(&user)))
        }
        ModelPayload::ContextualCf { cf, head } => {
            if i == 0 {
                let ccf = vec![0.0; crate::recommenders::contextual_cf_len(spec.window)];
                return Ok(head.predict(&ccf));
            }
            let ccf = contextual_cf_features(conv, i, spec.window, cf)?;
            Ok(head.predict(&ccf))
        }
        ModelPayload::Crf { model: crf, cf } => {
            let scores = if let Some(cf_model) = cf {
                let dist_for = |j: usize| -> Vec<f64> {
                    match cf_cache {
                        Some(cache) => cache.dist(conv_idx, j - 1).to_vec(),
                        None => {
                            let user =
                                build_user_vector(conv, j).expect("position within range");
                            cf_model.predict(&user).softmax().to_vec()
                        }
                    }
                };
                predict_with_crf(crf, conv, i, spec, Some(&dist_for))?
            } else {
                predict_with_crf(crf, conv, i, spec, None)?
            };
            Ok(TopicScores {
                scores: scores.normalized(),
            })
        }
        ModelPayload::Neural { net, cf } => {
            let needs_cf = spec.features.cf && cf.is_some();
            let local_cache;
            let cache_ref = if needs_cf {
                match cf_cache {
                    Some(c) => Some(c),
                    None => {
                        let single = PreparedCorpus {
                            conversations: vec![conv.clone()],
                            events: vec![SuggestionEvent {
                                conv_idx: 0,
                                reaction_turn: conv.turns.len().max(1),
                                target: SuggestibleTopic::Movie,
                                ordinal: 1,
                            }],
                        };
                        local_cache = CfCache::build(cf.as_ref().expect("hybrid"), &single);
                        Some(&local_cache)
                    }
                }
            } else {
                None
            };
            // When an ad-hoc cache was built, the conversation sits at
            // index 0 inside it.
            let effective_idx = match (cf_cache, cache_ref) {
                (Some(_), Some(_)) => conv_idx,
                _ => 0,
            };
            let slots = if i == 0 {
                vec![
                    SlotInput {
                        token_ids: Vec::new(),
                        fv: vec![0.0; FEATURE_VECTOR_LEN],
                        cf: [0.0; 8],
                        is_pad: true,
                    };
                    spec.window
                ]
            } else {
                slot_inputs(
                    conv,
                    effective_idx,
                    i,
                    spec.window,
                    &spec.features,
                    &net.embedding.vocab,
                    cache_ref,
                )
            };
            let (logits, _) =
                net.forward_window::<ChaCha8Rng>(&slots, spec.features.text, None);
            let p = softmax(&logits);
            Ok(TopicScores::from_slice(p.as_slice().expect("contiguous")))
        }
    }
}

fn predict_with_crf(
    crf: &CrfModel,
    conv: &Conversation,
    i: usize,
    spec: &ModelSpec,
    extend: Option<&dyn Fn(usize) -> Vec<f64>>,
) -> Result<TopicScores, CrfError> {
    if i == 0 {
        // Cold start: single-position chain over the empty-history state.
        let state = state_after_turns(conv, 0)?;
        let mut fv = assemble_fv(&state).values;
        spec.features.mask_fv(&mut fv);
        if let Some(f) = extend {
            fv.extend(f(1));
        }
        let pot = crf.potentials(&[fv])?;
        let fb = crate::crf::forward_backward(&pot)?;
        let last = fb.node_marginals.last().expect("nonempty");
        let mut scores = [0.0; N_TOPICS];
        for t in SuggestibleTopic::ALL {
            scores[t.code()] = last[crate::crf::accept_index(t)];
        }
        return Ok(TopicScores { scores });
    }
    // Feature-group masks apply inside the prediction chain as well.
    if spec.features.topical && spec.features.profile {
        predict_next_topic(crf, conv, i, spec.window, extend)
    } else {
        let masked = |j: usize| -> Vec<f64> {
            let state = state_after_turns(conv, j - 1).expect("in range");
            let mut fv = assemble_fv(&state).values;
            spec.features.mask_fv(&mut fv);
            let mut extra = extend.map(|f| f(j)).unwrap_or_default();
            fv.append(&mut extra);
            fv
        };
        let start = i.saturating_sub(spec.window).max(1);
        let obs: Vec<Vec<f64>> = (start..=i + 1).map(masked).collect();
        let pot = crf.potentials(&obs)?;
        let fb = crate::crf::forward_backward(&pot)?;
        let last = fb.node_marginals.last().expect("nonempty");
        let mut scores = [0.0; N_TOPICS];
        for t in SuggestibleTopic::ALL {
            scores[t.code()] = last[crate::crf::accept_index(t)];
        }
        Ok(TopicScores { scores })
    }
}

/// Serving-time ranking: model scores with topics already rejected in this
/// session demoted below everything else. The session conversation must
/// carry actual-reaction labels (rerun labeling after each turn).
pub fn suggest(
    model: &TrainedModel,
    session: &Conversation,
) -> Result<Vec<(SuggestibleTopic, f64)>, ModelError> {
    let labeled = if session.is_empty() {
        session.clone()
    } else {
        assign_training_labels(session)
    };
    let scores = forward(model, &labeled, 0, labeled.turns.len(), None)?;
    let rejected: HashSet<SuggestibleTopic> = labeled
        .turns
        .iter()
        .filter_map(|t| t.label.and_then(|l| l.rejected_topic()))
        .collect();
    let mut ranking = scores.ranking();
    ranking.sort_by(|a, b| {
        let ra = rejected.contains(&a.0);
        let rb = rejected.contains(&b.0);
        ra.cmp(&rb).then(
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then(b.0.frequency().partial_cmp(&a.0.frequency()).unwrap())
                .then(a.0.code().cmp(&b.0.code())),
        )
    });
    Ok(ranking)
}
