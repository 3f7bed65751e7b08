//! Seeded toy language model and the autoregressive inference loop.
//!
//! The model is a two-layer linear predictor over a position-weighted sum of
//! token embeddings:
//!
//! ```text
//! c      = sum_j w_j * E[tok_j]        w_j = 1 / (distance_from_end + 1)
//! h      = relu(W1 c)
//! logits = W2 h
//! ```
//!
//! All weights are drawn uniformly from `[-1, 1)` by the crate generator,
//! seeded with the FNV-1a hash of `model_id`. Every reduction goes through the
//! architecture profile named in the execution tuple.

use serde::{Deserialize, Serialize};

use crate::arith::{det_matmul, det_matvec, ArchProfile, Matrix};
use crate::decode::{decode_step, DecodePolicy};
use crate::error::{DetError, Result};
use crate::prng::PrngState;
use crate::softmax::det_softmax;

pub const VOCAB_SIZE: usize = 64;
pub const HIDDEN_SIZE: usize = 16;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// The full, immutable parameterisation of one inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTuple {
    model_id: String,
    container_digest: [u8; 32],
    arch: String,
    driver_tag: String,
    decode_policy: DecodePolicy,
    seed: u64,
    prompt: Vec<u32>,
}

impl ExecutionTuple {
    pub fn new(
        model_id: impl Into<String>,
        container_digest: [u8; 32],
        arch: impl Into<String>,
        driver_tag: impl Into<String>,
        decode_policy: DecodePolicy,
        seed: u64,
        prompt: Vec<u32>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            container_digest,
            arch: arch.into(),
            driver_tag: driver_tag.into(),
            decode_policy,
            seed,
            prompt,
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn container_digest(&self) -> &[u8; 32] {
        &self.container_digest
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn driver_tag(&self) -> &str {
        &self.driver_tag
    }

    pub fn decode_policy(&self) -> &DecodePolicy {
        &self.decode_policy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn prompt(&self) -> &[u32] {
        &self.prompt
    }

    /// Copy of this tuple with a different architecture tag.
    pub fn with_arch(&self, arch: impl Into<String>) -> Self {
        Self { arch: arch.into(), ..self.clone() }
    }

    /// Copy of this tuple with a different model identifier.
    pub fn with_model(&self, model_id: impl Into<String>) -> Self {
        Self { model_id: model_id.into(), ..self.clone() }
    }
}

/// Tokens and per-step logits of one inference, with their canonical bytes.
///
/// Canonical layout (normative, all integers u32 little-endian):
///
/// ```text
/// token_count | token_0 .. token_{n-1} | step_count |
///   for each step: vocab_size | logit bit patterns (f32 LE)
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InferenceOutput {
    tokens: Vec<u32>,
    logits_bits: Vec<Vec<u32>>,
    canonical_bytes: Vec<u8>,
}

impl InferenceOutput {
    pub fn new(tokens: Vec<u32>, logits_trace: Vec<Vec<f32>>) -> Self {
        let logits_bits: Vec<Vec<u32>> =
            logits_trace.iter().map(|step| step.iter().map(|l| l.to_bits()).collect()).collect();
        let canonical_bytes = encode_output(&tokens, &logits_bits);
        Self { tokens, logits_bits, canonical_bytes }
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn logits_trace(&self) -> Vec<Vec<f32>> {
        self.logits_bits.iter().map(|s| s.iter().map(|&b| f32::from_bits(b)).collect()).collect()
    }

    pub fn canonical_bytes(&self) -> &[u8] {
        &self.canonical_bytes
    }

    /// Parses the canonical layout; trailing bytes are rejected.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut take_u32 = || -> Result<u32> {
            let (head, rest) = cursor.split_first_chunk::<4>().ok_or(DetError::Malformed("truncated"))?;
            cursor = rest;
            Ok(u32::from_le_bytes(*head))
        };
        let n = take_u32()? as usize;
        let tokens = (0..n).map(|_| take_u32()).collect::<Result<Vec<_>>>()?;
        let steps = take_u32()? as usize;
        let mut logits_bits = Vec::new();
        for _ in 0..steps {
            let v = take_u32()? as usize;
            logits_bits.push((0..v).map(|_| take_u32()).collect::<Result<Vec<_>>>()?);
        }
        if !cursor.is_empty() {
            return Err(DetError::Malformed("trailing bytes"));
        }
        Ok(Self { tokens, logits_bits, canonical_bytes: bytes.to_vec() })
    }
}

fn encode_output(tokens: &[u32], logits_bits: &[Vec<u32>]) -> Vec<u8> {
    let len = 8 + 4 * tokens.len() + logits_bits.iter().map(|s| 4 + 4 * s.len()).sum::<usize>();
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
    for t in tokens {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out.extend_from_slice(&(logits_bits.len() as u32).to_le_bytes());
    for step in logits_bits {
        out.extend_from_slice(&(step.len() as u32).to_le_bytes());
        for b in step {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

/// Weights of the toy model, a pure function of the model identifier.
#[derive(Debug, Clone)]
pub struct ToyModel {
    /// `HIDDEN x VOCAB`: column `t` is the embedding of token `t`.
    embeddings_t: Vec<f32>,
    w1: Matrix,
    w2: Matrix,
}

impl ToyModel {
    pub fn from_model_id(model_id: &str) -> Self {
        let mut g = PrngState::from_seed(fnv1a(model_id.as_bytes()));
        let mut draw = |n: usize, scale: f32| -> Vec<f32> {
            (0..n).map(|_| (g.unit_f32() * 2.0 - 1.0) * scale).collect()
        };
        let embeddings = draw(VOCAB_SIZE * HIDDEN_SIZE, 1.0);
        let w1 = Matrix::new(HIDDEN_SIZE, HIDDEN_SIZE, draw(HIDDEN_SIZE * HIDDEN_SIZE, 0.5)).expect("shape");
        let w2 = Matrix::new(VOCAB_SIZE, HIDDEN_SIZE, draw(VOCAB_SIZE * HIDDEN_SIZE, 1.0)).expect("shape");
        let mut embeddings_t = vec![0.0; VOCAB_SIZE * HIDDEN_SIZE];
        for t in 0..VOCAB_SIZE {
            for i in 0..HIDDEN_SIZE {
                embeddings_t[i * VOCAB_SIZE + t] = embeddings[t * HIDDEN_SIZE + i];
            }
        }
        Self { embeddings_t, w1, w2 }
    }

    /// Position-weighted context vector for a token history.
    fn context(&self, history: &[u32], profile: &ArchProfile) -> Result<Vec<f32>> {
        let len = history.len();
        let weights: Vec<f32> = (0..len).map(|j| 1.0 / ((len - j) as f32)).collect();
        let mut gathered = Vec::with_capacity(HIDDEN_SIZE * len);
        for i in 0..HIDDEN_SIZE {
            let row = &self.embeddings_t[i * VOCAB_SIZE..(i + 1) * VOCAB_SIZE];
            gathered.extend(history.iter().map(|&t| row[t as usize]));
        }
        det_matvec(&Matrix::new(HIDDEN_SIZE, len, gathered)?, &weights, profile)
    }

    /// Logits for the next token after `history`.
    pub fn logits(&self, history: &[u32], profile: &ArchProfile) -> Result<Vec<f32>> {
        let c = self.context(history, profile)?;
        let h: Vec<f32> = det_matvec(&self.w1, &c, profile)?.into_iter().map(relu).collect();
        det_matvec(&self.w2, &h, profile)
    }

    /// Logits for several histories at once through the batched kernels.
    pub fn logits_batch(&self, histories: &[&[u32]], profile: &ArchProfile) -> Result<Vec<Vec<f32>>> {
        let contexts = histories.iter().map(|h| self.context(h, profile)).collect::<Result<Vec<_>>>()?;
        let hidden: Vec<Vec<f32>> = det_matmul(&self.w1, &contexts, profile)?
            .into_iter()
            .map(|h| h.into_iter().map(relu).collect())
            .collect();
        det_matmul(&self.w2, &hidden, profile)
    }
}

#[inline]
fn relu(x: f32) -> f32 {
    if x > 0.0 { x } else { 0.0 }
}

fn check_exec(exec: &ExecutionTuple) -> Result<ArchProfile> {
    let profile = ArchProfile::builtin(exec.arch())?;
    exec.decode_policy().validate()?;
    if let Some(&token) = exec.prompt().iter().find(|&&t| t as usize >= VOCAB_SIZE) {
        return Err(DetError::TokenOutOfVocab { token, vocab: VOCAB_SIZE });
    }
    Ok(profile)
}

/// Runs the autoregressive loop for `max_tokens` steps.
///
/// The result is a pure function of `exec`.
pub fn infer(exec: &ExecutionTuple) -> Result<InferenceOutput> {
    let profile = check_exec(exec)?;
    let model = ToyModel::from_model_id(exec.model_id());
    let policy = exec.decode_policy();
    let mut prng = PrngState::from_seed(exec.seed());
    let mut history = exec.prompt().to_vec();
    let mut tokens = Vec::with_capacity(policy.max_tokens as usize);
    let mut trace = Vec::with_capacity(policy.max_tokens as usize);
    for _ in 0..policy.max_tokens {
        let logits = model.logits(&history, &profile)?;
        let probs = det_softmax(&logits)?;
        let (token, next) = decode_step(&probs, policy, prng)?;
        prng = next;
        tokens.push(token);
        history.push(token);
        trace.push(logits);
    }
    Ok(InferenceOutput::new(tokens, trace))
}

struct Lane<'a> {
    index: usize,
    exec: &'a ExecutionTuple,
    prng: PrngState,
    history: Vec<u32>,
    tokens: Vec<u32>,
    trace: Vec<Vec<f32>>,
}

/// Serves several requests together, stepping every sequence in lock-step.
///
/// Requests sharing a model and architecture are stacked into one batched
/// product per layer. Each lane keeps its own generator, which advances once
/// per emitted token, so results equal those of [`infer`] one request at a
/// time.
pub fn infer_batch(execs: &[ExecutionTuple]) -> Vec<Result<InferenceOutput>> {
    let mut results: Vec<Option<Result<InferenceOutput>>> = vec![None; execs.len()];
    let mut groups: Vec<((String, String), Vec<Lane<'_>>)> = Vec::new();
    for (index, exec) in execs.iter().enumerate() {
        if let Err(e) = check_exec(exec) {
            results[index] = Some(Err(e));
            continue;
        }
        let lane = Lane {
            index,
            exec,
            prng: PrngState::from_seed(exec.seed()),
            history: exec.prompt().to_vec(),
            tokens: Vec::new(),
            trace: Vec::new(),
        };
        let key = (exec.model_id().to_string(), exec.arch().to_string());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, lanes)) => lanes.push(lane),
            None => groups.push((key, vec![lane])),
        }
    }
    for ((model_id, arch), lanes) in groups {
        let model = ToyModel::from_model_id(&model_id);
        let profile = ArchProfile::builtin(&arch).expect("checked above");
        for (index, outcome) in run_group(&model, &profile, lanes) {
            results[index] = Some(outcome);
        }
    }
    results.into_iter().map(|r| r.expect("every request resolved")).collect()
}

fn run_group(model: &ToyModel, profile: &ArchProfile, mut lanes: Vec<Lane<'_>>) -> Vec<(usize, Result<InferenceOutput>)> {
    let mut done = Vec::new();
    let mut step = 0u32;
    loop {
        let (finished, active): (Vec<_>, Vec<_>) =
            lanes.into_iter().partition(|l| step >= l.exec.decode_policy().max_tokens);
        done.extend(finished.into_iter().map(|l| (l.index, Ok(InferenceOutput::new(l.tokens, l.trace)))));
        lanes = active;
        if lanes.is_empty() {
            return done;
        }
        let histories: Vec<&[u32]> = lanes.iter().map(|l| l.history.as_slice()).collect();
        let logits = match model.logits_batch(&histories, profile) {
            Ok(l) => l,
            Err(e) => {
                done.extend(lanes.iter().map(|l| (l.index, Err(e.clone()))));
                return done;
            }
        };
        let mut survivors = Vec::with_capacity(lanes.len());
        for (mut lane, logits) in lanes.into_iter().zip(logits) {
            let sampled = det_softmax(&logits).and_then(|p| decode_step(&p, lane.exec.decode_policy(), lane.prng));
            match sampled {
                Ok((token, next)) => {
                    lane.prng = next;
                    lane.tokens.push(token);
                    lane.history.push(token);
                    lane.trace.push(logits);
                    survivors.push(lane);
                }
                Err(e) => done.push((lane.index, Err(e))),
            }
        }
        lanes = survivors;
        step += 1;
    }
}
