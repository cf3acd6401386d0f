//! Linear-chain CRF over turn-label sequences.
//!
//! The model scores a label sequence with per-position state features (each
//! nonzero observation coordinate conjoined with the label, plus a per-label
//! bias) and transition features (label-pair indicators, optionally
//! conjoined with the time-of-day block of the observation). Inference runs
//! in log space over generic [`ChainPotentials`], so the same
//! forward-backward and Viterbi code is exercised by the small-alphabet
//! enumeration oracles in the tests.

use thiserror::Error;

use crate::corpus::{Conversation, SuggestibleTopic, TurnLabel};
use crate::features::{
    assemble_fv, state_after_turns, FeatureError, FEATURE_VECTOR_LEN, FV_LAYOUT_VERSION,
    TIME_OF_DAY_OFFSET,
};
use crate::nn::{lbfgs_minimize, log_sum_exp, LbfgsConfig};
use crate::recommenders::TopicScores;

/// Accept and Reject per suggestible topic, plus FollowUp and Chat.
pub const NUM_LABELS: usize = 18;

pub const FOLLOW_UP_INDEX: usize = 16;
pub const CHAT_INDEX: usize = 17;

pub fn label_index(label: TurnLabel) -> usize {
    match label {
        TurnLabel::Accept(t) => t.code(),
        TurnLabel::Reject(t) => SuggestibleTopic::COUNT + t.code(),
        TurnLabel::FollowUp => FOLLOW_UP_INDEX,
        TurnLabel::Chat => CHAT_INDEX,
    }
}

pub fn index_label(index: usize) -> TurnLabel {
    match index {
        0..=7 => TurnLabel::Accept(SuggestibleTopic::from_code(index).unwrap()),
        8..=15 => TurnLabel::Reject(SuggestibleTopic::from_code(index - 8).unwrap()),
        FOLLOW_UP_INDEX => TurnLabel::FollowUp,
        CHAT_INDEX => TurnLabel::Chat,
        _ => panic!("label index {index} out of range"),
    }
}

pub fn accept_index(topic: SuggestibleTopic) -> usize {
    topic.code()
}

/// The fixed label order, as written into checkpoints.
pub fn label_order() -> Vec<String> {
    (0..NUM_LABELS).map(|i| index_label(i).to_string()).collect()
}

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("model weights contain a non-finite value")]
    NonFiniteWeights,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("sequence has no positions")]
    EmptySequence,
    #[error("observation has dimension {got}, layout expects {expected}")]
    ObservationDim { got: usize, expected: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Slot arithmetic for the weight vector.
///
/// State block: per label, `1 + obs_dim` slots (bias, then one per
/// observation coordinate). Transition block: per `(prev, label)` pair, one
/// indicator slot plus one per time-of-day coordinate when the layout
/// carries the feature-vector time block.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CrfFeatureLayout {
    pub obs_dim: usize,
    /// Offset of the 4-slot time-of-day block inside the observation, if
    /// transitions should be conjoined with it.
    pub time_block: Option<usize>,
}

impl CrfFeatureLayout {
    /// Layout for observations that start with the standard feature vector
    /// (optionally extended, e.g. with CF scores).
    pub fn for_fv(obs_dim: usize) -> CrfFeatureLayout {
        assert!(obs_dim >= FEATURE_VECTOR_LEN);
        CrfFeatureLayout {
            obs_dim,
            time_block: Some(TIME_OF_DAY_OFFSET),
        }
    }

    /// Layout without the time-conjoined transitions (synthetic data).
    pub fn plain(obs_dim: usize) -> CrfFeatureLayout {
        CrfFeatureLayout {
            obs_dim,
            time_block: None,
        }
    }

    pub fn state_block(&self) -> usize {
        1 + self.obs_dim
    }

    pub fn trans_block(&self) -> usize {
        1 + if self.time_block.is_some() { 4 } else { 0 }
    }

    pub fn n_weights(&self) -> usize {
        NUM_LABELS * self.state_block() + NUM_LABELS * NUM_LABELS * self.trans_block()
    }

    pub fn state_slot(&self, label: usize, coord: Option<usize>) -> usize {
        let base = label * self.state_block();
        match coord {
            None => base,
            Some(j) => base + 1 + j,
        }
    }

    pub fn trans_slot(&self, prev: usize, label: usize, time: Option<usize>) -> usize {
        let base = NUM_LABELS * self.state_block()
            + (prev * NUM_LABELS + label) * self.trans_block();
        match time {
            None => base,
            Some(t) => base + 1 + t,
        }
    }

    /// True for slots exempt from L1 (the per-label bias terms).
    pub fn is_bias_slot(&self, slot: usize) -> bool {
        slot < NUM_LABELS * self.state_block() && slot % self.state_block() == 0
    }
}

/// Sparse active features for one position: `(weight slot, value)` pairs.
///
/// State features: the per-label bias plus one entry per nonzero
/// observation coordinate. Transition features (when `prev_label` is set):
/// the pair indicator plus the pair conjoined with each nonzero time-of-day
/// coordinate.
pub fn activate_features(
    layout: &CrfFeatureLayout,
    obs: &[f64],
    label: usize,
    prev_label: Option<usize>,
) -> Vec<(usize, f64)> {
    debug_assert_eq!(obs.len(), layout.obs_dim);
    let mut out = Vec::with_capacity(8);
    out.push((layout.state_slot(label, None), 1.0));
    for (j, &v) in obs.iter().enumerate() {
        if v != 0.0 {
            out.push((layout.state_slot(label, Some(j)), v));
        }
    }
    if let Some(prev) = prev_label {
        out.push((layout.trans_slot(prev, label, None), 1.0));
        if let Some(offset) = layout.time_block {
            for t in 0..4 {
                let v = obs[offset + t];
                if v != 0.0 {
                    out.push((layout.trans_slot(prev, label, Some(t)), v));
                }
            }
        }
    }
    out
}

/// A labeled sequence: per-position observations and label indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfInstance {
    pub obs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    pub layout: CrfFeatureLayout,
    pub weights: Vec<f64>,
    pub fv_layout_version: u32,
}

impl CrfModel {
    pub fn zeros(layout: CrfFeatureLayout) -> CrfModel {
        let weights = vec![0.0; layout.n_weights()];
        CrfModel {
            layout,
            weights,
            fv_layout_version: FV_LAYOUT_VERSION,
        }
    }

    fn node_potential(&self, obs: &[f64], label: usize) -> f64 {
        let mut sum = self.weights[self.layout.state_slot(label, None)];
        for (j, &v) in obs.iter().enumerate() {
            if v != 0.0 {
                sum += self.weights[self.layout.state_slot(label, Some(j))] * v;
            }
        }
        sum
    }

    fn edge_potential(&self, obs: &[f64], prev: usize, label: usize) -> f64 {
        let mut sum = self.weights[self.layout.trans_slot(prev, label, None)];
        if let Some(offset) = self.layout.time_block {
            for t in 0..4 {
                let v = obs[offset + t];
                if v != 0.0 {
                    sum += self.weights[self.layout.trans_slot(prev, label, Some(t))] * v;
                }
            }
        }
        sum
    }

    /// Log-potentials of a sequence under the current weights. The edge
    /// potential into position `i` is conditioned on the observation at `i`.
    pub fn potentials(&self, obs: &[Vec<f64>]) -> Result<ChainPotentials, CrfError> {
        if obs.is_empty() {
            return Err(CrfError::EmptySequence);
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(CrfError::NonFiniteWeights);
        }
        for o in obs {
            if o.len() != self.layout.obs_dim {
                return Err(CrfError::ObservationDim {
                    got: o.len(),
                    expected: self.layout.obs_dim,
                });
            }
        }
        let n = obs.len();
        let mut node = vec![vec![0.0; NUM_LABELS]; n];
        for (i, o) in obs.iter().enumerate() {
            for l in 0..NUM_LABELS {
                node[i][l] = self.node_potential(o, l);
            }
        }
        let mut edge = Vec::with_capacity(n.saturating_sub(1));
        for o in obs.iter().skip(1) {
            let mut m = vec![vec![0.0; NUM_LABELS]; NUM_LABELS];
            for (p, row) in m.iter_mut().enumerate() {
                for (l, cell) in row.iter_mut().enumerate() {
                    *cell = self.edge_potential(o, p, l);
                }
            }
            edge.push(m);
        }
        Ok(ChainPotentials { node, edge })
    }

    /// Joint (unnormalized) log-score of a labeled sequence.
    pub fn sequence_score(&self, instance: &CrfInstance) -> f64 {
        let mut score = 0.0;
        for (i, (o, &y)) in instance.obs.iter().zip(&instance.labels).enumerate() {
            score += self.node_potential(o, y);
            if i > 0 {
                score += self.edge_potential(o, instance.labels[i - 1], y);
            }
        }
        score
    }
}

/// Log-space node and edge potentials of one chain; `edge[i-1][p][l]` is
/// the transition potential from position `i-1` into position `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPotentials {
    pub node: Vec<Vec<f64>>,
    pub edge: Vec<Vec<Vec<f64>>>,
}

impl ChainPotentials {
    pub fn len(&self) -> usize {
        self.node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.is_empty()
    }

    pub fn n_labels(&self) -> usize {
        self.node.first().map(|r| r.len()).unwrap_or(0)
    }

    /// Unnormalized log-score of one label assignment.
    pub fn score(&self, labels: &[usize]) -> f64 {
        let mut s = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            s += self.node[i][y];
            if i > 0 {
                s += self.edge[i - 1][labels[i - 1]][y];
            }
        }
        s
    }
}

/// Result of forward-backward: the log partition function and the exact
/// per-position and per-edge posterior marginals.
#[derive(Debug, Clone)]
pub struct FbResult {
    pub log_z: f64,
    pub node_marginals: Vec<Vec<f64>>,
    pub edge_marginals: Vec<Vec<Vec<f64>>>,
}

/// Forward-backward in log space.
pub fn forward_backward(pot: &ChainPotentials) -> Result<FbResult, CrfError> {
    let n = pot.len();
    if n == 0 {
        return Err(CrfError::EmptySequence);
    }
    let labels = pot.n_labels();

    let mut alpha = vec![vec![0.0; labels]; n];
    alpha[0].clone_from_slice(&pot.node[0]);
    let mut scratch = vec![0.0; labels];
    for i in 1..n {
        for l in 0..labels {
            for p in 0..labels {
                scratch[p] = alpha[i - 1][p] + pot.edge[i - 1][p][l];
            }
            alpha[i][l] = pot.node[i][l] + log_sum_exp(&scratch);
        }
    }
    let log_z = log_sum_exp(&alpha[n - 1]);

    let mut beta = vec![vec![0.0; labels]; n];
    for i in (0..n - 1).rev() {
        for p in 0..labels {
            for l in 0..labels {
                scratch[l] = pot.edge[i][p][l] + pot.node[i + 1][l] + beta[i + 1][l];
            }
            beta[i][p] = log_sum_exp(&scratch);
        }
    }

    let mut node_marginals = vec![vec![0.0; labels]; n];
    for i in 0..n {
        for l in 0..labels {
            node_marginals[i][l] = (alpha[i][l] + beta[i][l] - log_z).exp();
        }
    }
    let mut edge_marginals = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let mut m = vec![vec![0.0; labels]; labels];
        for (p, row) in m.iter_mut().enumerate() {
            for (l, cell) in row.iter_mut().enumerate() {
                *cell = (alpha[i][p]
                    + pot.edge[i][p][l]
                    + pot.node[i + 1][l]
                    + beta[i + 1][l]
                    - log_z)
                    .exp();
            }
        }
        edge_marginals.push(m);
    }
    Ok(FbResult {
        log_z,
        node_marginals,
        edge_marginals,
    })
}

/// Most likely label sequence (max-sum with backpointers). Ties resolve
/// toward the lower label index.
pub fn viterbi(pot: &ChainPotentials) -> Result<Vec<usize>, CrfError> {
    let n = pot.len();
    if n == 0 {
        return Err(CrfError::EmptySequence);
    }
    let labels = pot.n_labels();
    let mut delta = vec![vec![0.0; labels]; n];
    let mut back = vec![vec![0usize; labels]; n];
    delta[0].clone_from_slice(&pot.node[0]);
    for i in 1..n {
        for l in 0..labels {
            let mut best_p = 0;
            let mut best = f64::NEG_INFINITY;
            for p in 0..labels {
                let s = delta[i - 1][p] + pot.edge[i - 1][p][l];
                if s > best {
                    best = s;
                    best_p = p;
                }
            }
            delta[i][l] = pot.node[i][l] + best;
            back[i][l] = best_p;
        }
    }
    let mut last = 0;
    let mut best = f64::NEG_INFINITY;
    for (l, &d) in delta[n - 1].iter().enumerate() {
        if d > best {
            best = d;
            last = l;
        }
    }
    let mut path = vec![0usize; n];
    path[n - 1] = last;
    for i in (0..n - 1).rev() {
        path[i] = back[i + 1][path[i + 1]];
    }
    Ok(path)
}

/// Penalized negative log-likelihood and its gradient over a dataset.
///
/// `nll = -sum log p(y|x) + l2 * ||w||^2`; the gradient is expected minus
/// empirical feature counts plus `2 * l2 * w`. The L1 part of the elastic
/// net is handled by the optimizer's orthant projection, not here.
pub fn nll_and_gradient(
    model: &CrfModel,
    data: &[CrfInstance],
    l2: f64,
) -> Result<(f64, Vec<f64>), CrfError> {
    if data.is_empty() {
        return Err(CrfError::EmptyDataset);
    }
    let layout = &model.layout;
    let mut nll = 0.0;
    let mut grad = vec![0.0; layout.n_weights()];

    for instance in data {
        let pot = model.potentials(&instance.obs)?;
        let fb = forward_backward(&pot)?;
        nll += fb.log_z - model.sequence_score(instance);

        // Empirical counts.
        for (i, (obs, &y)) in instance.obs.iter().zip(&instance.labels).enumerate() {
            let prev = if i > 0 {
                Some(instance.labels[i - 1])
            } else {
                None
            };
            for (slot, value) in activate_features(layout, obs, y, prev) {
                grad[slot] -= value;
            }
        }

        // Expected state counts.
        for (i, obs) in instance.obs.iter().enumerate() {
            for l in 0..NUM_LABELS {
                let mu = fb.node_marginals[i][l];
                if mu == 0.0 {
                    continue;
                }
                grad[layout.state_slot(l, None)] += mu;
                for (j, &v) in obs.iter().enumerate() {
                    if v != 0.0 {
                        grad[layout.state_slot(l, Some(j))] += mu * v;
                    }
                }
            }
        }
        // Expected transition counts.
        for (i, obs) in instance.obs.iter().enumerate().skip(1) {
            let xi = &fb.edge_marginals[i - 1];
            for p in 0..NUM_LABELS {
                for l in 0..NUM_LABELS {
                    let x = xi[p][l];
                    if x == 0.0 {
                        continue;
                    }
                    grad[layout.trans_slot(p, l, None)] += x;
                    if let Some(offset) = layout.time_block {
                        for t in 0..4 {
                            let v = obs[offset + t];
                            if v != 0.0 {
                                grad[layout.trans_slot(p, l, Some(t))] += x * v;
                            }
                        }
                    }
                }
            }
        }
    }

    for (g, &w) in grad.iter_mut().zip(&model.weights) {
        *g += 2.0 * l2 * w;
    }
    nll += l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    Ok((nll, grad))
}

/// Elastic-net settings for maximum-likelihood training.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CrfTrainConfig {
    pub l1: f64,
    pub l2: f64,
    pub memory: usize,
    pub max_iters: usize,
    /// Convergence tolerance on the (pseudo)gradient infinity norm.
    pub tol: f64,
}

impl Default for CrfTrainConfig {
    fn default() -> CrfTrainConfig {
        CrfTrainConfig {
            l1: 0.03,
            l2: 0.01,
            memory: 10,
            max_iters: 200,
            tol: 1e-4,
        }
    }
}

#[derive(Debug)]
pub struct CrfTrainOutcome {
    pub model: CrfModel,
    pub converged: bool,
    pub iterations: usize,
    pub final_nll: f64,
}

/// Maximum-likelihood training with the elastic-net penalty via L-BFGS
/// (orthant-wise when `l1 > 0`; bias slots are exempt from L1).
/// Deterministic given the dataset order. Non-convergence returns the best
/// iterate with `converged = false`.
pub fn train_crf(
    layout: CrfFeatureLayout,
    data: &[CrfInstance],
    config: &CrfTrainConfig,
) -> Result<CrfTrainOutcome, CrfError> {
    if data.is_empty() {
        return Err(CrfError::EmptyDataset);
    }
    let mut model = CrfModel::zeros(layout.clone());
    let n_weights = layout.n_weights();

    let l1 = if config.l1 > 0.0 {
        Some(
            (0..n_weights)
                .map(|slot| if layout.is_bias_slot(slot) { 0.0 } else { config.l1 })
                .collect(),
        )
    } else {
        None
    };
    let lbfgs_config = LbfgsConfig {
        memory: config.memory,
        max_iters: config.max_iters,
        grad_tol: config.tol,
        l1,
        ..LbfgsConfig::default()
    };

    let mut error: Option<CrfError> = None;
    let outcome = lbfgs_minimize(
        |w, grad_out| {
            model.weights.copy_from_slice(w);
            match nll_and_gradient(&model, data, config.l2) {
                Ok((nll, grad)) => {
                    grad_out.copy_from_slice(&grad);
                    nll
                }
                Err(e) => {
                    error = Some(e);
                    grad_out.fill(0.0);
                    f64::INFINITY
                }
            }
        },
        vec![0.0; n_weights],
        &lbfgs_config,
    );
    if let Some(e) = error {
        return Err(e);
    }
    model.weights.copy_from_slice(&outcome.x);
    Ok(CrfTrainOutcome {
        model,
        converged: outcome.converged,
        iterations: outcome.iterations,
        final_nll: outcome.value,
    })
}

/// Observation rows for the prediction chain at suggestion point `i`:
/// the up-to-`window` turns ending at `i` plus the position `i+1` being
/// predicted. `extend` appends extra coordinates (e.g. CF scores) for a
/// given 1-based position.
pub fn prediction_observations(
    conv: &Conversation,
    i: usize,
    window: usize,
    extend: Option<&dyn Fn(usize) -> Vec<f64>>,
) -> Result<Vec<Vec<f64>>, CrfError> {
    if i == 0 || i > conv.turns.len() {
        return Err(FeatureError::TurnOutOfRange {
            index: i,
            len: conv.turns.len(),
        }
        .into());
    }
    let start = i.saturating_sub(window).max(1);
    let mut obs = Vec::with_capacity(i + 2 - start);
    for j in start..=i + 1 {
        let state = state_after_turns(conv, j - 1)?;
        let mut row = assemble_fv(&state).values;
        if let Some(f) = extend {
            row.extend(f(j));
        }
        obs.push(row);
    }
    Ok(obs)
}

/// Marginal distribution over the labels at position `i+1`, projected to
/// topics via the Accept labels and returned as raw scores (renormalize via
/// [`TopicScores::normalized`]).
pub fn predict_next_topic(
    model: &CrfModel,
    conv: &Conversation,
    i: usize,
    window: usize,
    extend: Option<&dyn Fn(usize) -> Vec<f64>>,
) -> Result<TopicScores, CrfError> {
    let obs = prediction_observations(conv, i, window, extend)?;
    let pot = model.potentials(&obs)?;
    let fb = forward_backward(&pot)?;
    let last = fb.node_marginals.last().expect("nonempty chain");
    let mut scores = [0.0; SuggestibleTopic::COUNT];
    for t in SuggestibleTopic::ALL {
        scores[t.code()] = last[accept_index(t)];
    }
    Ok(TopicScores { scores })
}
