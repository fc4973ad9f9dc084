//! Greedy and beam decoding over either plain likelihood or the combined
//! objective
//!
//! `score(v) = (1 - alpha) * log P(v | d, h, r<t) + alpha * CPMI(v; d | h, r<t)`
//!
//! restricted at each step to the top-p set of the document-conditioned
//! likelihood distribution. Scores accumulate additively across steps.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::example::GroundedExample;
use crate::faith::{PromptPair, PromptTemplate};
use crate::lm::{LanguageModel, LogProbVector};
use crate::tokenizer::{TokenId, BOS, PAD, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Likelihood,
    Pmi,
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "beam" => Ok(Strategy::Beam),
            _ => Err(Error::InvalidConfig(format!("unknown strategy {s:?}"))),
        }
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "likelihood" => Ok(Objective::Likelihood),
            "pmi" => Ok(Objective::Pmi),
            _ => Err(Error::InvalidConfig(format!("unknown objective {s:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam => "beam",
        })
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Likelihood => "likelihood",
            Objective::Pmi => "pmi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub objective: Objective,
    pub alpha: f64,
    /// 1.0 disables masking.
    pub top_p: f64,
    pub beam_width: usize,
    pub max_len: usize,
    pub min_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            objective: Objective::Likelihood,
            alpha: 0.0,
            top_p: 1.0,
            beam_width: 4,
            max_len: 64,
            min_len: 1,
        }
    }
}

impl DecodeConfig {
    pub fn likelihood() -> Self {
        Self::default()
    }

    /// alpha = 0.25, top-p = 0.6
    pub fn pmi_d() -> Self {
        Self::pmi(0.25, 0.6)
    }

    /// alpha = 0.25 without masking
    pub fn pmi_d_no_mask() -> Self {
        Self::pmi(0.25, 1.0)
    }

    /// alpha = 0.5, top-p = 0.6
    pub fn pmi_d_equal_weight() -> Self {
        Self::pmi(0.5, 0.6)
    }

    pub fn pmi(alpha: f64, top_p: f64) -> Self {
        Self {
            objective: Objective::Pmi,
            alpha,
            top_p,
            ..Self::default()
        }
    }

    pub fn with_beam(mut self, beam_width: usize) -> Self {
        self.strategy = Strategy::Beam;
        self.beam_width = beam_width;
        self
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidConfig(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if self.beam_width < 1 {
            return Err(Error::InvalidConfig("beam_width must be at least 1".into()));
        }
        if self.max_len < 1 {
            return Err(Error::InvalidConfig("max_len must be at least 1".into()));
        }
        if self.min_len > self.max_len {
            return Err(Error::InvalidConfig("min_len must not exceed max_len".into()));
        }
        Ok(())
    }
}

/// A partial or complete response. `tokens` includes the terminating EOS
/// once `finished` is set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub combined_score: f64,
    pub loglik: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn extend(&self, token: TokenId, step: StepScore, eos: TokenId) -> Self {
        let mut tokens = Vec::with_capacity(self.tokens.len() + 1);
        tokens.extend_from_slice(&self.tokens);
        tokens.push(token);
        Self {
            tokens,
            combined_score: self.combined_score + step.combined,
            loglik: self.loglik + step.loglik,
            finished: token == eos,
        }
    }
}

/// Smallest set of highest-probability tokens whose mass reaches `p`,
/// sorted by ascending id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopPMask {
    members: Vec<TokenId>,
}

impl TopPMask {
    pub fn members(&self) -> &[TokenId] {
        &self.members
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.members.binary_search(&id).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Tokens ordered by descending probability, ties by ascending id.
fn ranked(dist: &LogProbVector) -> Vec<TokenId> {
    let mut order: Vec<TokenId> = (0..dist.len() as TokenId).collect();
    order.sort_by(|&a, &b| {
        dist.get(b)
            .partial_cmp(&dist.get(a))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

pub fn top_p_mask(dist: &LogProbVector, p: f64) -> TopPMask {
    let order = ranked(dist);
    let cut = if p >= 1.0 {
        order.len()
    } else {
        let mut mass = 0.0;
        let mut cut = order.len();
        for (i, &id) in order.iter().enumerate() {
            mass += dist.get(id).exp();
            // tolerance absorbs exp/ln round-off on exact boundaries
            if mass >= p - 1e-12 {
                cut = i + 1;
                break;
            }
        }
        cut
    };
    let mut members = order[..cut].to_vec();
    members.sort_unstable();
    TopPMask { members }
}

/// Per-step contribution of one candidate token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScore {
    pub combined: f64,
    pub loglik: f64,
}

/// Next-token distributions for one decoding step.
#[derive(Debug, Clone)]
pub struct StepDistributions {
    pub with_doc: LogProbVector,
    /// Present only for the PMI objective.
    pub without_doc: Option<LogProbVector>,
}

impl StepDistributions {
    pub fn score(&self, candidate: TokenId, config: &DecodeConfig) -> StepScore {
        let loglik = self.with_doc.get(candidate);
        let combined = match (config.objective, &self.without_doc) {
            (Objective::Pmi, Some(without)) => {
                let cpmi = loglik - without.get(candidate);
                (1.0 - config.alpha) * loglik + config.alpha * cpmi
            }
            _ => loglik,
        };
        StepScore { combined, loglik }
    }
}

/// Runs decoding for one example with a shared backend.
pub struct Decoder<'a, L: LanguageModel + ?Sized> {
    lm: &'a L,
    config: DecodeConfig,
    prompts: PromptPair,
}

impl<'a, L: LanguageModel + ?Sized> Decoder<'a, L> {
    pub fn new(
        lm: &'a L,
        example: &GroundedExample,
        config: DecodeConfig,
        template: &PromptTemplate,
    ) -> Result<Self> {
        config.validate()?;
        let prompts = PromptPair::build(lm, example, template)?;
        Ok(Self { lm, config, prompts })
    }

    pub fn config(&self) -> &DecodeConfig {
        &self.config
    }

    pub fn distributions(&self, state: &Hypothesis) -> Result<StepDistributions> {
        let (with_ctx, without_ctx) = self.prompts.extend(&state.tokens);
        let with_doc = self.lm.next_logprobs(&with_ctx)?;
        let without_doc = match self.config.objective {
            Objective::Pmi => Some(self.lm.next_logprobs(&without_ctx)?),
            Objective::Likelihood => None,
        };
        Ok(StepDistributions { with_doc, without_doc })
    }

    /// Tokens eligible at this step: the top-p mask minus PAD, BOS and UNK,
    /// and minus EOS while the response is shorter than `min_len`. If that
    /// leaves nothing, the mask is widened in probability order until one
    /// eligible token is admitted.
    pub fn candidates(&self, dists: &StepDistributions, state: &Hypothesis) -> Vec<TokenId> {
        let eos = self.lm.eos_id();
        let allowed = |id: TokenId| {
            !matches!(id, PAD | BOS | UNK) && !(id == eos && state.tokens.len() < self.config.min_len)
        };
        let mask = top_p_mask(&dists.with_doc, self.config.top_p);
        let picked: Vec<TokenId> = mask.members().iter().copied().filter(|&id| allowed(id)).collect();
        if !picked.is_empty() {
            return picked;
        }
        ranked(&dists.with_doc)
            .into_iter()
            .find(|&id| allowed(id))
            .into_iter()
            .collect()
    }

    /// Argmax of the step score over the eligible candidates, ties to the
    /// smallest id.
    pub fn decode_step(&self, state: &Hypothesis) -> Result<(TokenId, StepScore)> {
        let dists = self.distributions(state)?;
        let mut best: Option<(TokenId, StepScore)> = None;
        for id in self.candidates(&dists, state) {
            let s = dists.score(id, &self.config);
            if best.is_none_or(|(_, b)| s.combined > b.combined) {
                best = Some((id, s));
            }
        }
        best.ok_or_else(|| Error::InvalidConfig("no eligible token to decode".into()))
    }

    pub fn decode(&self) -> Result<Hypothesis> {
        match self.config.strategy {
            Strategy::Greedy => self.greedy(),
            Strategy::Beam => self.beam(),
        }
    }

    fn greedy(&self) -> Result<Hypothesis> {
        let eos = self.lm.eos_id();
        let mut hyp = Hypothesis::default();
        while !hyp.finished && hyp.tokens.len() < self.config.max_len {
            let (id, step) = self.decode_step(&hyp)?;
            hyp = hyp.extend(id, step, eos);
        }
        Ok(hyp)
    }

    /// Keeps the `beam_width` best expansions by accumulated combined score
    /// at every step. Expansions that emit EOS or reach `max_len` leave the
    /// beam; the best of those is returned.
    fn beam(&self) -> Result<Hypothesis> {
        let eos = self.lm.eos_id();
        let mut beam = vec![Hypothesis::default()];
        let mut done: Vec<Hypothesis> = Vec::new();
        while !beam.is_empty() {
            let mut expansions = Vec::new();
            for hyp in &beam {
                let dists = self.distributions(hyp)?;
                for id in self.candidates(&dists, hyp) {
                    expansions.push(hyp.extend(id, dists.score(id, &self.config), eos));
                }
            }
            expansions.sort_by(rank_hypotheses);
            expansions.truncate(self.config.beam_width);
            beam.clear();
            for hyp in expansions {
                if hyp.finished || hyp.tokens.len() >= self.config.max_len {
                    done.push(hyp);
                } else {
                    beam.push(hyp);
                }
            }
        }
        done.into_iter()
            .min_by(rank_hypotheses)
            .ok_or_else(|| Error::InvalidConfig("beam search produced no hypothesis".into()))
    }
}

/// Better hypotheses sort first: higher combined score, then lexicographically
/// smaller token sequence.
fn rank_hypotheses(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.combined_score
        .partial_cmp(&a.combined_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

pub fn decode<L: LanguageModel + ?Sized>(
    lm: &L,
    example: &GroundedExample,
    config: &DecodeConfig,
    template: &PromptTemplate,
) -> Result<Hypothesis> {
    Decoder::new(lm, example, *config, template)?.decode()
}

pub fn decode_step<L: LanguageModel + ?Sized>(
    lm: &L,
    state: &Hypothesis,
    example: &GroundedExample,
    config: &DecodeConfig,
    template: &PromptTemplate,
) -> Result<TokenId> {
    Ok(Decoder::new(lm, example, *config, template)?.decode_step(state)?.0)
}

/// Per-step additive score of `candidate` given the partial response in `state`.
pub fn step_score<L: LanguageModel + ?Sized>(
    lm: &L,
    candidate: TokenId,
    state: &Hypothesis,
    example: &GroundedExample,
    config: &DecodeConfig,
    template: &PromptTemplate,
) -> Result<f64> {
    let decoder = Decoder::new(lm, example, *config, template)?;
    let dists = decoder.distributions(state)?;
    if candidate as usize >= dists.with_doc.len() {
        return Err(Error::UnknownTokenId(candidate));
    }
    Ok(dists.score(candidate, config).combined)
}
