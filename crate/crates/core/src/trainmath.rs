//! Training objectives over an abstract token-probability provider:
//! next-token NLL for pre-training and fine-tuning, the DPO preference loss,
//! challenging-case selection and triple construction.
//!
//! A small bigram softmax model with closed-form gradients is included so
//! every objective can be checked against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::normalize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("zero probability for token {position} of sequence {sequence}")]
    ZeroProbability { sequence: usize, position: usize },
    #[error("sample {index} has {got} judged responses, expected {expected}")]
    WrongResponseCount { index: usize, got: usize, expected: usize },
    #[error("vocabulary size {0} outside 1..=16")]
    BadVocab(usize),
}

/// Next-token probabilities.
pub trait TokenProbProvider: Sync {
    /// `P(next | context)`.
    fn prob(&self, context: &[usize], next: usize) -> f64;

    /// Teacher-forced probabilities of each token of `y` after `x`.
    fn seq_probs(&self, x: &[usize], y: &[usize]) -> Vec<f64> {
        let mut ctx = x.to_vec();
        y.iter()
            .map(|&t| {
                let p = self.prob(&ctx, t);
                ctx.push(t);
                p
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    /// Divide by the number of scored tokens.
    Mean,
}

fn neg_log_sum(probs: &[f64], sequence: usize, acc: &mut f64) -> Result<usize, TrainError> {
    for (position, &p) in probs.iter().enumerate() {
        if p.is_nan() || p <= 0.0 {
            return Err(TrainError::ZeroProbability { sequence, position });
        }
        *acc -= p.ln();
    }
    Ok(probs.len())
}

fn reduce(total: f64, tokens: usize, r: Reduction) -> f64 {
    match r {
        Reduction::Sum => total,
        Reduction::Mean if tokens > 0 => total / tokens as f64,
        Reduction::Mean => 0.0,
    }
}

/// `-Σ_i Σ_t ln P(w_t | w_<t)`.
pub fn pt_loss(
    provider: &dyn TokenProbProvider,
    samples: &[Vec<usize>],
    reduction: Reduction,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut tokens = 0;
    for (i, s) in samples.iter().enumerate() {
        tokens += neg_log_sum(&provider.seq_probs(&[], s), i, &mut total)?;
    }
    Ok(reduce(total, tokens, reduction))
}

/// `-Σ_i Σ_t ln P(y_t | y_<t, x)`; question tokens are context only.
pub fn sft_loss(
    provider: &dyn TokenProbProvider,
    pairs: &[(Vec<usize>, Vec<usize>)],
    reduction: Reduction,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut tokens = 0;
    for (i, (x, y)) in pairs.iter().enumerate() {
        tokens += neg_log_sum(&provider.seq_probs(x, y), i, &mut total)?;
    }
    Ok(reduce(total, tokens, reduction))
}

/// `ln π(y | x)`.
pub fn seq_log_prob(
    provider: &dyn TokenProbProvider,
    x: &[usize],
    y: &[usize],
    sequence: usize,
) -> Result<f64, TrainError> {
    let mut nll = 0.0;
    neg_log_sum(&provider.seq_probs(x, y), sequence, &mut nll)?;
    Ok(-nll)
}

/// `-ln σ(z)` without overflow.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sequence log-probabilities of one preference triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogProbQuad {
    pub policy_p: f64,
    pub reference_p: f64,
    pub policy_n: f64,
    pub reference_n: f64,
}

impl LogProbQuad {
    fn margin(&self, beta: f64) -> f64 {
        beta * ((self.policy_p - self.reference_p) - (self.policy_n - self.reference_n))
    }
}

/// Mean over triples of `-ln σ(β·[ln(π_θ(p)/π_ref(p)) − ln(π_θ(n)/π_ref(n))])`.
pub fn dpo_loss_from_log_probs(quads: &[LogProbQuad], beta: f64) -> f64 {
    if quads.is_empty() {
        return 0.0;
    }
    let mut vals: Vec<f64> = quads.iter().map(|q| neg_log_sigmoid(q.margin(beta))).collect();
    vals.sort_by(f64::total_cmp);
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// As [`dpo_loss_from_log_probs`] from plain probabilities
/// `(π_θ(p|x), π_ref(p|x), π_θ(n|x), π_ref(n|x))`.
pub fn dpo_loss_from_probs(probs: &[(f64, f64, f64, f64)], beta: f64) -> Result<f64, TrainError> {
    let quads = probs
        .iter()
        .enumerate()
        .map(|(i, &(a, b, c, d))| {
            for (pos, v) in [a, b, c, d].into_iter().enumerate() {
                if v.is_nan() || v <= 0.0 {
                    return Err(TrainError::ZeroProbability { sequence: i, position: pos });
                }
            }
            Ok(LogProbQuad { policy_p: a.ln(), reference_p: b.ln(), policy_n: c.ln(), reference_n: d.ln() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(dpo_loss_from_log_probs(&quads, beta))
}

/// Tokenized preference triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTriple {
    pub x: Vec<usize>,
    pub p: Vec<usize>,
    pub n: Vec<usize>,
}

fn quads(
    policy: &dyn TokenProbProvider,
    reference: &dyn TokenProbProvider,
    triples: &[TokenTriple],
) -> Result<Vec<LogProbQuad>, TrainError> {
    triples
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(LogProbQuad {
                policy_p: seq_log_prob(policy, &t.x, &t.p, i)?,
                reference_p: seq_log_prob(reference, &t.x, &t.p, i)?,
                policy_n: seq_log_prob(policy, &t.x, &t.n, i)?,
                reference_n: seq_log_prob(reference, &t.x, &t.n, i)?,
            })
        })
        .collect()
}

pub const DEFAULT_BETA: f64 = 0.1;

pub fn dpo_loss(
    policy: &dyn TokenProbProvider,
    reference: &dyn TokenProbProvider,
    triples: &[TokenTriple],
    beta: f64,
) -> Result<f64, TrainError> {
    Ok(dpo_loss_from_log_probs(&quads(policy, reference, triples)?, beta))
}

// ---------------------------------------------------------------------------
// Toy provider

/// Bigram softmax over a vocabulary of at most 16 tokens. Row 0 of the
/// logit table is the start-of-sequence context, row `t + 1` follows token `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySoftmax {
    vocab: usize,
    logits: Vec<f64>,
}

impl ToySoftmax {
    pub fn new(vocab: usize, logits: Vec<f64>) -> Result<Self, TrainError> {
        if vocab == 0 || vocab > 16 || logits.len() != (vocab + 1) * vocab {
            return Err(TrainError::BadVocab(vocab));
        }
        Ok(ToySoftmax { vocab, logits })
    }

    pub fn random(vocab: usize, seed: u64, scale: f64) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = (0..(vocab + 1) * vocab).map(|_| rng.random_range(-scale..=scale)).collect();
        Self::new(vocab, logits)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn row_index(context: &[usize]) -> usize {
        context.last().map_or(0, |t| t + 1)
    }

    pub fn row_probs(&self, row: usize) -> Vec<f64> {
        let r = &self.logits[row * self.vocab..(row + 1) * self.vocab];
        let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Add `scale * ∇_θ ln P(y | x)` into `grad`.
    fn add_log_prob_grad(&self, x: &[usize], y: &[usize], scale: f64, grad: &mut [f64]) {
        let mut prev = Self::row_index(x);
        for &t in y {
            let probs = self.row_probs(prev);
            let base = prev * self.vocab;
            for (j, p) in probs.iter().enumerate() {
                grad[base + j] += scale * (f64::from(u8::from(j == t)) - p);
            }
            prev = t + 1;
        }
    }
}

impl TokenProbProvider for ToySoftmax {
    fn prob(&self, context: &[usize], next: usize) -> f64 {
        if next >= self.vocab {
            return 0.0;
        }
        self.row_probs(Self::row_index(context))[next]
    }
}

/// Two tokens per byte (high then low nibble), for use with a 16-token
/// [`ToySoftmax`].
pub fn encode_text(text: &str) -> Vec<usize> {
    text.bytes().flat_map(|b| [usize::from(b >> 4), usize::from(b & 0x0f)]).collect()
}

pub fn pt_loss_grad(model: &ToySoftmax, samples: &[Vec<usize>], reduction: Reduction) -> Vec<f64> {
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = samples.iter().map(|s| (Vec::new(), s.clone())).collect();
    sft_loss_grad(model, &pairs, reduction)
}

pub fn sft_loss_grad(model: &ToySoftmax, pairs: &[(Vec<usize>, Vec<usize>)], reduction: Reduction) -> Vec<f64> {
    let tokens: usize = pairs.iter().map(|(_, y)| y.len()).sum();
    let scale = match reduction {
        Reduction::Sum => -1.0,
        Reduction::Mean if tokens > 0 => -1.0 / tokens as f64,
        Reduction::Mean => 0.0,
    };
    let mut g = vec![0.0; model.logits.len()];
    for (x, y) in pairs {
        model.add_log_prob_grad(x, y, scale, &mut g);
    }
    g
}

/// Gradient of [`dpo_loss`] with respect to the policy parameters; the
/// reference is frozen.
pub fn dpo_loss_grad(
    policy: &ToySoftmax,
    reference: &dyn TokenProbProvider,
    triples: &[TokenTriple],
    beta: f64,
) -> Result<Vec<f64>, TrainError> {
    let qs = quads(policy, reference, triples)?;
    let mut g = vec![0.0; policy.logits.len()];
    if triples.is_empty() {
        return Ok(g);
    }
    let m = triples.len() as f64;
    for (t, q) in triples.iter().zip(&qs) {
        // d/dz [-ln σ(z)] = σ(z) - 1
        let w = (sigmoid(q.margin(beta)) - 1.0) * beta / m;
        policy.add_log_prob_grad(&t.x, &t.p, w, &mut g);
        policy.add_log_prob_grad(&t.x, &t.n, -w, &mut g);
    }
    Ok(g)
}

/// Central finite differences of `f` around the model parameters.
pub fn finite_difference(model: &ToySoftmax, h: f64, f: impl Fn(&ToySoftmax) -> f64) -> Vec<f64> {
    let mut m = model.clone();
    (0..model.logits.len())
        .map(|i| {
            let v = m.logits[i];
            m.logits[i] = v + h;
            let up = f(&m);
            m.logits[i] = v - h;
            let down = f(&m);
            m.logits[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

// ---------------------------------------------------------------------------
// Preference data

/// A training question with its judged responses (`true` = correct).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedSample {
    pub x: String,
    pub p: String,
    pub responses: Vec<(String, bool)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengingCase {
    pub x: String,
    pub p: String,
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub x: String,
    pub p: String,
    pub n: String,
}

pub const RESPONSES_PER_SAMPLE: usize = 20;

/// Keep samples with at least one incorrect response. Negatives are the
/// distinct incorrect texts after normalization, in first-seen order; a
/// negative equal to the reference answer is dropped.
pub fn select_challenging(judged: &[JudgedSample], expected: usize) -> Result<Vec<ChallengingCase>, TrainError> {
    let mut out = Vec::new();
    for (index, s) in judged.iter().enumerate() {
        if s.responses.len() != expected {
            return Err(TrainError::WrongResponseCount { index, got: s.responses.len(), expected });
        }
        let p_norm = normalize(&s.p);
        let mut seen = std::collections::HashSet::new();
        let negatives: Vec<String> = s
            .responses
            .iter()
            .filter(|(_, ok)| !ok)
            .filter(|(text, _)| {
                let n = normalize(text);
                n != p_norm && seen.insert(n)
            })
            .map(|(text, _)| text.clone())
            .collect();
        if !negatives.is_empty() {
            out.push(ChallengingCase { x: s.x.clone(), p: s.p.clone(), negatives });
        }
    }
    Ok(out)
}

pub fn build_triples(cases: &[ChallengingCase]) -> Vec<PreferenceTriple> {
    cases
        .iter()
        .flat_map(|c| c.negatives.iter().map(|n| PreferenceTriple { x: c.x.clone(), p: c.p.clone(), n: n.clone() }))
        .collect()
}

pub fn tokenize_triple(t: &PreferenceTriple) -> TokenTriple {
    TokenTriple { x: encode_text(&t.x), p: encode_text(&t.p), n: encode_text(&t.n) }
}
