use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, mean_cross_entropy, Batch, Matrix, Model};

/// Which fitness formula to use.
///
/// * `BothRatios`: `patched/|I_neg| + α·intact/|I_pos| + R(I_neg) + R(I_pos)`
/// * `NegRatio`: `patched/|I_neg| + α·intact/|I_pos| + β·R(I_neg)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessVariant {
    BothRatios,
    NegRatio,
}

/// Orientation of the loss ratio `R`.
///
/// `BeforeOverAfter` is `(L + δ) / (L' + δ)` and grows as the repaired loss `L'` falls.
/// `AfterOverBefore` is the inverse, `(L' + δ) / (L + δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossRatioOrientation {
    #[default]
    BeforeOverAfter,
    AfterOverBefore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessConfig {
    pub variant: FitnessVariant,
    /// Intact weight: reward for every sampled passed instance that stays passed.
    pub alpha: f64,
    #[serde(default = "FitnessConfig::default_beta")]
    pub beta: f64,
    #[serde(default = "FitnessConfig::default_delta")]
    pub delta: f64,
    /// Zero the fitness of any candidate that breaks a sampled passed instance.
    #[serde(default)]
    pub perfect_intact: bool,
    #[serde(default)]
    pub orientation: LossRatioOrientation,
}

impl FitnessConfig {
    pub const DEFAULT_BETA: f64 = 0.25;
    pub const DEFAULT_DELTA: f64 = 1e-6;

    fn default_beta() -> f64 {
        Self::DEFAULT_BETA
    }

    fn default_delta() -> f64 {
        Self::DEFAULT_DELTA
    }

    pub fn new(variant: FitnessVariant, alpha: f64, perfect_intact: bool) -> Self {
        Self {
            variant,
            alpha,
            beta: Self::DEFAULT_BETA,
            delta: Self::DEFAULT_DELTA,
            perfect_intact,
            orientation: LossRatioOrientation::BeforeOverAfter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "delta must be > 0, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    fn ratio(&self, before: f64, after: f64) -> f64 {
        match self.orientation {
            LossRatioOrientation::BeforeOverAfter => (before + self.delta) / (after + self.delta),
            LossRatioOrientation::AfterOverBefore => (after + self.delta) / (before + self.delta),
        }
    }

    /// Assembles the breakdown from verdict counts and losses.
    #[allow(clippy::too_many_arguments)]
    pub fn score(
        &self,
        n_patched: usize,
        n_neg: usize,
        n_intact: usize,
        n_pos: usize,
        base: BaseLosses,
        loss_neg_after: f64,
        loss_pos_after: f64,
    ) -> FitnessBreakdown {
        let mut out = FitnessBreakdown {
            n_patched,
            n_neg,
            n_intact,
            n_pos,
            loss_neg_before: base.neg,
            loss_neg_after,
            loss_pos_before: base.pos,
            loss_pos_after,
            raw_fitness: f64::NEG_INFINITY,
            gated_fitness: f64::NEG_INFINITY,
        };
        if !(loss_neg_after.is_finite() && loss_pos_after.is_finite()) {
            return out;
        }
        let patched = n_patched as f64 / n_neg as f64;
        let intact = self.alpha * (n_intact as f64 / n_pos as f64);
        let raw = match self.variant {
            FitnessVariant::BothRatios => {
                patched
                    + intact
                    + self.ratio(base.neg, loss_neg_after)
                    + self.ratio(base.pos, loss_pos_after)
            }
            FitnessVariant::NegRatio => {
                patched + intact + self.beta * self.ratio(base.neg, loss_neg_after)
            }
        };
        if !raw.is_finite() {
            return out;
        }
        out.raw_fitness = raw;
        out.gated_fitness = if self.perfect_intact && n_intact < n_pos {
            0.0
        } else {
            raw
        };
        out
    }
}

/// `L(I_neg)` and `L(I_pos)` on the pre-repair model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseLosses {
    pub neg: f64,
    pub pos: f64,
}

impl BaseLosses {
    pub fn compute(model: &Model, i_neg: &Batch, i_pos: &Batch) -> Result<Self> {
        Ok(Self {
            neg: model.loss(i_neg)?,
            pos: model.loss(i_pos)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessBreakdown {
    pub n_patched: usize,
    pub n_neg: usize,
    pub n_intact: usize,
    pub n_pos: usize,
    pub loss_neg_before: f64,
    pub loss_neg_after: f64,
    pub loss_pos_before: f64,
    pub loss_pos_after: f64,
    pub raw_fitness: f64,
    pub gated_fitness: f64,
}

impl FitnessBreakdown {
    pub fn n_broken(&self) -> usize {
        self.n_pos - self.n_intact
    }
}

fn count_correct(probs: &Matrix, labels: &[usize]) -> usize {
    probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

fn check_sets(i_neg: &Batch, i_pos: &Batch) -> Result<()> {
    if i_neg.is_empty() {
        return Err(Error::EmptyBatch("I_neg must not be empty"));
    }
    if i_pos.is_empty() {
        return Err(Error::EmptyBatch("I_pos must not be empty"));
    }
    Ok(())
}

/// Scores a candidate model with a full forward pass over both sets.
pub fn fitness(
    candidate: &Model,
    i_neg: &Batch,
    i_pos: &Batch,
    base: BaseLosses,
    cfg: &FitnessConfig,
) -> Result<FitnessBreakdown> {
    check_sets(i_neg, i_pos)?;
    let neg = candidate.forward(i_neg)?;
    let pos = candidate.forward(i_pos)?;
    Ok(score_probs(
        &neg,
        i_neg.labels(),
        &pos,
        i_pos.labels(),
        base,
        cfg,
    ))
}

fn score_probs(
    neg: &Matrix,
    neg_labels: &[usize],
    pos: &Matrix,
    pos_labels: &[usize],
    base: BaseLosses,
    cfg: &FitnessConfig,
) -> FitnessBreakdown {
    cfg.score(
        count_correct(neg, neg_labels),
        neg_labels.len(),
        count_correct(pos, pos_labels),
        pos_labels.len(),
        base,
        mean_cross_entropy(neg, neg_labels),
        mean_cross_entropy(pos, pos_labels),
    )
}

/// Fixed data for scoring many candidates that differ only in one layer.
///
/// The inputs to the repair layer are computed once from the original model; the
/// layers below it are never patched, so the cached activations are exactly those
/// a full forward pass would produce.
#[derive(Debug, Clone)]
pub struct FitnessContext {
    pub i_neg: Batch,
    pub i_pos: Batch,
    pub base: BaseLosses,
    layer: usize,
    neg_inputs: Matrix,
    pos_inputs: Matrix,
}

impl FitnessContext {
    pub fn new(model: &Model, i_neg: Batch, i_pos: Batch, layer: usize) -> Result<Self> {
        check_sets(&i_neg, &i_pos)?;
        let base = BaseLosses::compute(model, &i_neg, &i_pos)?;
        let neg_inputs = model.layer_inputs(&i_neg, layer)?;
        let pos_inputs = model.layer_inputs(&i_pos, layer)?;
        Ok(Self {
            i_neg,
            i_pos,
            base,
            layer,
            neg_inputs,
            pos_inputs,
        })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    /// Scores `candidate`, which must match the original model below the repair layer.
    pub fn evaluate(&self, candidate: &Model, cfg: &FitnessConfig) -> FitnessBreakdown {
        let neg = candidate
            .forward_from(self.layer, &self.neg_inputs)
            .expect("context built from the same architecture");
        let pos = candidate
            .forward_from(self.layer, &self.pos_inputs)
            .expect("context built from the same architecture");
        score_probs(
            &neg,
            self.i_neg.labels(),
            &pos,
            self.i_pos.labels(),
            self.base,
            cfg,
        )
    }
}
