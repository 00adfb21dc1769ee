//! Action-scoring network and its policy-gradient training loop.
//!
//! The scorer is a small bilinear network: a state branch maps the 3D state
//! encoding (user, current entity, mean of history entities) through two
//! rectified layers to H2 features, an action branch maps each candidate's
//! 2D vector (relation, target) linearly to H2, and an action's score is
//! the dot product of the two. Softmax over the candidate set gives the
//! policy. Training samples one episode per user per epoch and applies
//! Adam steps on the Monte-Carlo policy gradient with a per-timestep batch
//! mean-return baseline.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::intuition::IntuitionSet;
use crate::kg::{EntityId, KnowledgeGraph};
use crate::mdp::{
    rollout, ActionScorer, ActionSpace, Episode, MdpConfig, RewardConfig, RewardTiming, State,
};

const MAGIC: &[u8; 4] = b"PRPL";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    /// Embedding dimension D; the state encoding is 3D, action vectors 2D.
    pub d: usize,
    pub h1: usize,
    pub h2: usize,
}

impl PolicyDims {
    pub fn parameter_count(&self) -> usize {
        self.h1 * 3 * self.d + self.h1 + self.h2 * self.h1 + self.h2 + self.h2 * 2 * self.d + self.h2
    }
}

/// Flat parameter vector with layout [w1 | b1 | w2 | b2 | wa | ba].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    pub dims: PolicyDims,
    pub theta: Vec<f64>,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wa: usize,
    ba: usize,
}

impl PolicyDims {
    fn offsets(&self) -> Offsets {
        let w1 = 0;
        let b1 = w1 + self.h1 * 3 * self.d;
        let w2 = b1 + self.h1;
        let b2 = w2 + self.h2 * self.h1;
        let wa = b2 + self.h2;
        let ba = wa + self.h2 * 2 * self.d;
        Offsets {
            w1,
            b1,
            w2,
            b2,
            wa,
            ba,
        }
    }
}

impl PolicyParameters {
    /// Glorot-uniform weights (zero biases), drawn from the given rng in a
    /// fixed order.
    pub fn init(dims: PolicyDims, rng: &mut impl Rng) -> Self {
        let mut theta = vec![0.0; dims.parameter_count()];
        let off = dims.offsets();
        let fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize,
                        theta: &mut Vec<f64>, rng: &mut dyn rand::RngCore| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in &mut theta[range] {
                *x = rand::Rng::gen_range(rng, -bound..bound);
            }
        };
        fill(off.w1..off.b1, 3 * dims.d, dims.h1, &mut theta, rng);
        fill(off.w2..off.b2, dims.h1, dims.h2, &mut theta, rng);
        fill(off.wa..off.ba, 2 * dims.d, dims.h2, &mut theta, rng);
        Self { dims, theta }
    }

    /// Binary checkpoint: magic, version, d/h1/h2 (u32 LE), parameter count
    /// (u64 LE), then f64 LE parameters.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.d as u32).to_le_bytes())?;
        w.write_all(&(self.dims.h1 as u32).to_le_bytes())?;
        w.write_all(&(self.dims.h2 as u32).to_le_bytes())?;
        w.write_all(&(self.theta.len() as u64).to_le_bytes())?;
        for x in &self.theta {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad policy checkpoint magic".into()));
        }
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported policy checkpoint version {version}"
            )));
        }
        let d = read_u32(&mut r)? as usize;
        let h1 = read_u32(&mut r)? as usize;
        let h2 = read_u32(&mut r)? as usize;
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes)?;
        let len = u64::from_le_bytes(len_bytes) as usize;
        let dims = PolicyDims { d, h1, h2 };
        if len != dims.parameter_count() {
            return Err(Error::Format(format!(
                "parameter count {len} does not match dims {dims:?}"
            )));
        }
        let mut theta = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            theta.push(f64::from_le_bytes(buf));
        }
        Ok(Self { dims, theta })
    }
}

/// 3D state encoding: user embedding, current-entity embedding, and the
/// mean of the history entities' embeddings (zeros when the history is
/// empty).
pub fn encode_state(state: &State, embeddings: &EmbeddingTable) -> Result<Vec<f64>> {
    let d = embeddings.dim();
    let mut enc = Vec::with_capacity(3 * d);
    enc.extend_from_slice(embeddings.entity_vec(state.user)?);
    enc.extend_from_slice(embeddings.entity_vec(state.current)?);
    let mut mean = vec![0.0; d];
    if !state.history.is_empty() {
        for hop in &state.history {
            let v = embeddings.entity_vec(hop.entity)?;
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        let n = state.history.len() as f64;
        for m in &mut mean {
            *m /= n;
        }
    }
    enc.extend(mean);
    Ok(enc)
}

/// 2D action vector: relation embedding followed by the target's entity
/// embedding. The stay action uses a zero relation block and the current
/// entity (taken from the state encoding's middle block).
fn action_vectors(
    state_enc: &[f64],
    actions: &ActionSpace,
    embeddings: &EmbeddingTable,
) -> Result<Vec<Vec<f64>>> {
    let d = embeddings.dim();
    let mut out = Vec::with_capacity(actions.len());
    if actions.includes_stop {
        let mut v = vec![0.0; 2 * d];
        v[d..].copy_from_slice(&state_enc[d..2 * d]);
        out.push(v);
    }
    for &(relation, target) in &actions.candidates {
        let mut v = Vec::with_capacity(2 * d);
        v.extend_from_slice(embeddings.relation_vec(relation)?);
        v.extend_from_slice(embeddings.entity_vec(target)?);
        out.push(v);
    }
    Ok(out)
}

/// Max-subtracted softmax; strictly positive and sums to one.
pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Forward-pass intermediates kept for backpropagation.
struct Forward {
    state_enc: Vec<f64>,
    z1: Vec<f64>,
    h1v: Vec<f64>,
    z2: Vec<f64>,
    fs: Vec<f64>,
    action_vecs: Vec<Vec<f64>>,
    fas: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

fn forward(
    params: &PolicyParameters,
    state_enc: Vec<f64>,
    actions: &ActionSpace,
    embeddings: &EmbeddingTable,
) -> Result<Forward> {
    if actions.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    let dims = params.dims;
    let off = dims.offsets();
    let theta = &params.theta;
    let in_dim = 3 * dims.d;
    assert_eq!(state_enc.len(), in_dim);

    let mut z1 = vec![0.0; dims.h1];
    for i in 0..dims.h1 {
        let mut acc = theta[off.b1 + i];
        let row = &theta[off.w1 + i * in_dim..off.w1 + (i + 1) * in_dim];
        for (w, x) in row.iter().zip(&state_enc) {
            acc += w * x;
        }
        z1[i] = acc;
    }
    let h1v: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();

    let mut z2 = vec![0.0; dims.h2];
    for k in 0..dims.h2 {
        let mut acc = theta[off.b2 + k];
        let row = &theta[off.w2 + k * dims.h1..off.w2 + (k + 1) * dims.h1];
        for (w, h) in row.iter().zip(&h1v) {
            acc += w * h;
        }
        z2[k] = acc;
    }
    let fs: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();

    let action_vecs = action_vectors(&state_enc, actions, embeddings)?;
    let act_dim = 2 * dims.d;
    let mut fas = Vec::with_capacity(action_vecs.len());
    let mut scores = Vec::with_capacity(action_vecs.len());
    for a in &action_vecs {
        let mut fa = vec![0.0; dims.h2];
        for k in 0..dims.h2 {
            let mut acc = theta[off.ba + k];
            let row = &theta[off.wa + k * act_dim..off.wa + (k + 1) * act_dim];
            for (w, x) in row.iter().zip(a) {
                acc += w * x;
            }
            fa[k] = acc;
        }
        scores.push(fs.iter().zip(&fa).map(|(s, a)| s * a).sum());
        fas.push(fa);
    }
    let probs = softmax(&scores);
    Ok(Forward {
        state_enc,
        z1,
        h1v,
        z2,
        fs,
        action_vecs,
        fas,
        probs,
    })
}

/// Policy distribution over an action space (index 0 is the stay action
/// when present). Numerically stabilized softmax of the bilinear scores.
pub fn action_distribution(
    params: &PolicyParameters,
    state_enc: Vec<f64>,
    actions: &ActionSpace,
    embeddings: &EmbeddingTable,
) -> Result<Vec<f64>> {
    Ok(forward(params, state_enc, actions, embeddings)?.probs)
}

impl ActionScorer for PolicyParameters {
    fn action_probs(
        &self,
        state: &State,
        actions: &ActionSpace,
        embeddings: &EmbeddingTable,
    ) -> Result<Vec<f64>> {
        action_distribution(self, encode_state(state, embeddings)?, actions, embeddings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    None,
    /// Per-timestep mean return over the batch; keeps the gradient
    /// invariant to constant reward shifts.
    BatchMeanReturn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub baseline: BaselineMode,
    pub hidden1: usize,
    pub hidden2: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 100,
            baseline: BaselineMode::BatchMeanReturn,
            hidden1: 512,
            hidden2: 256,
            seed: 7,
        }
    }
}

/// G_t = sum_{k >= t} gamma^(k-t) r_k.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        returns[i] = acc;
    }
    returns
}

/// Batch loss -sum_t (G_t - b_t) log pi(a_t | s_t) and its gradient with
/// respect to the flat parameter vector. Pure in the parameters: episodes
/// fix the sampled actions, spaces, and rewards.
pub fn reinforce_loss_and_grad(
    params: &PolicyParameters,
    episodes: &[Episode],
    embeddings: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let returns: Vec<Vec<f64>> = episodes
        .iter()
        .map(|ep| discounted_returns(&ep.rewards(), config.gamma))
        .collect();
    let horizon = returns.iter().map(Vec::len).max().unwrap_or(0);
    let baseline: Vec<f64> = match config.baseline {
        BaselineMode::None => vec![0.0; horizon],
        BaselineMode::BatchMeanReturn => (0..horizon)
            .map(|t| {
                let vals: Vec<f64> = returns.iter().filter_map(|g| g.get(t).copied()).collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            })
            .collect(),
    };

    let dims = params.dims;
    let off = dims.offsets();
    let in_dim = 3 * dims.d;
    let act_dim = 2 * dims.d;
    let mut grad = vec![0.0; params.theta.len()];
    let mut loss = 0.0;

    for (ep_idx, (episode, ep_returns)) in episodes.iter().zip(&returns).enumerate() {
        for (t, step) in episode.steps.iter().enumerate() {
            let adv = ep_returns[t] - baseline[t];
            let fwd = forward(
                params,
                encode_state(&step.state, embeddings)?,
                &step.actions,
                embeddings,
            )?;
            let p_chosen = fwd.probs[step.chosen];
            loss -= adv * p_chosen.ln();

            // d(-adv * log p_c)/d score_j = adv * (p_j - delta_jc)
            let dscores: Vec<f64> = fwd
                .probs
                .iter()
                .enumerate()
                .map(|(j, p)| adv * (p - f64::from(j == step.chosen)))
                .collect();

            let mut dfs = vec![0.0; dims.h2];
            for (j, ds) in dscores.iter().enumerate() {
                if *ds == 0.0 {
                    continue;
                }
                for k in 0..dims.h2 {
                    dfs[k] += ds * fwd.fas[j][k];
                    // Action branch: dfa = ds * fs
                    let dfa_k = ds * fwd.fs[k];
                    let row = off.wa + k * act_dim;
                    for (m, a) in fwd.action_vecs[j].iter().enumerate() {
                        grad[row + m] += dfa_k * a;
                    }
                    grad[off.ba + k] += dfa_k;
                }
            }

            let mut dh1 = vec![0.0; dims.h1];
            for k in 0..dims.h2 {
                let dz2 = if fwd.z2[k] > 0.0 { dfs[k] } else { 0.0 };
                if dz2 == 0.0 {
                    continue;
                }
                let row = off.w2 + k * dims.h1;
                for i in 0..dims.h1 {
                    grad[row + i] += dz2 * fwd.h1v[i];
                    dh1[i] += params.theta[row + i] * dz2;
                }
                grad[off.b2 + k] += dz2;
            }

            for i in 0..dims.h1 {
                let dz1 = if fwd.z1[i] > 0.0 { dh1[i] } else { 0.0 };
                if dz1 == 0.0 {
                    continue;
                }
                let row = off.w1 + i * in_dim;
                for (j, x) in fwd.state_enc.iter().enumerate() {
                    grad[row + j] += dz1 * x;
                }
                grad[off.b1 + i] += dz1;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(ep_idx));
        }
    }
    Ok((loss, grad))
}

/// Adam with bias correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, len: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), grad.len());
        assert_eq!(theta.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One REINFORCE batch update: compute the policy gradient over the batch
/// and take an Adam step. Returns the batch loss.
pub struct ReinforceTrainer {
    adam: Adam,
    config: TrainConfig,
}

impl ReinforceTrainer {
    pub fn new(config: TrainConfig, parameter_count: usize) -> Self {
        Self {
            adam: Adam::new(config.learning_rate, parameter_count),
            config,
        }
    }

    pub fn update(
        &mut self,
        params: &mut PolicyParameters,
        episodes: &[Episode],
        embeddings: &EmbeddingTable,
    ) -> Result<f64> {
        let (loss, grad) = reinforce_loss_and_grad(params, episodes, embeddings, &self.config)?;
        self.adam.step(&mut params.theta, &grad);
        Ok(loss)
    }
}

/// Scalar reward settings, pairable with per-user intuition sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub timing: RewardTiming,
    pub incremental_kg: bool,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0,
            timing: RewardTiming::PerStep,
            incremental_kg: true,
        }
    }
}

impl RewardWeights {
    pub fn to_config<'a>(
        &self,
        intuition: &'a IntuitionSet,
        embeddings: &'a EmbeddingTable,
    ) -> RewardConfig<'a> {
        RewardConfig {
            alpha: self.alpha,
            beta: self.beta,
            timing: self.timing,
            incremental_kg: self.incremental_kg,
            intuition,
            embeddings,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParameters,
    /// Mean discounted return per epoch.
    pub mean_return_per_epoch: Vec<f64>,
}

/// Train the policy over all user entities: per epoch, users are shuffled
/// (seeded), one episode is rolled out per user, and each batch of
/// episodes takes one Adam step. Rollout randomness comes from per-episode
/// rng streams derived from (seed, epoch, position), so results are
/// identical regardless of how many threads collect episodes.
pub fn train_agent(
    kg: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    intuitions: &std::collections::BTreeMap<EntityId, IntuitionSet>,
    mdp_config: &MdpConfig,
    weights: &RewardWeights,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let users = kg.users();
    if users.is_empty() {
        return Err(Error::EmptyTrainingGraph);
    }
    let dims = PolicyDims {
        d: embeddings.dim(),
        h1: config.hidden1,
        h2: config.hidden2,
    };
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = PolicyParameters::init(dims, &mut master);
    let mut trainer = ReinforceTrainer::new(config.clone(), params.theta.len());
    let mut mean_return_per_epoch = Vec::with_capacity(config.epochs);

    let mut order: Vec<EntityId> = users;
    for epoch in 0..config.epochs {
        order.shuffle(&mut master);
        let mut return_sum = 0.0;
        for (chunk_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let base = chunk_idx * config.batch_size;
            let episodes: Vec<Episode> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, &user)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(((epoch as u64) << 32) | (base + i) as u64);
                    let empty = IntuitionSet::empty(user);
                    let intuition = intuitions.get(&user).unwrap_or(&empty);
                    let reward = weights.to_config(intuition, embeddings);
                    rollout(kg, &params, user, mdp_config, &reward, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            for ep in &episodes {
                return_sum += discounted_returns(&ep.rewards(), config.gamma)
                    .first()
                    .copied()
                    .unwrap_or(0.0);
            }
            trainer.update(&mut params, &episodes, embeddings)?;
        }
        let mean_return = return_sum / order.len() as f64;
        mean_return_per_epoch.push(mean_return);
        log::debug!("policy epoch {epoch}: mean return {mean_return:.6}");
    }

    Ok(TrainOutcome {
        params,
        mean_return_per_epoch,
    })
}
