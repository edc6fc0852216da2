use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::PreferencePair;
use crate::policy::{log_softmax, PolicyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Vote-margin weighted preference loss plus weighted NLL.
    #[default]
    Scpo,
    /// Same loss with every weight set to 1.
    Unweighted,
    /// Length-normalized NLL of the chosen response only.
    Lmsi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub beta: f64,
    pub alpha: f64,
    pub objective: Objective,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.5,
            alpha: 1.0,
            objective: Objective::Scpo,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::validation("loss.beta", "must be a finite value > 0"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::validation("loss.alpha", "must be a finite value >= 0"));
        }
        Ok(())
    }
}

/// Gradient of a per-pair loss: one entry per response of the pair's row,
/// plus the derivative with respect to the shared scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub row: Vec<f64>,
    pub shared: f64,
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn chosen_length(pair: &PreferencePair) -> Result<f64> {
    match pair.chosen_answer.chars().count() {
        0 => Err(Error::InvalidInput(format!(
            "pair for {:?} has an empty chosen answer",
            pair.problem_id
        ))),
        n => Ok(n as f64),
    }
}

/// Chain the effective-logit gradient onto the row and the shared scalar.
fn finish(model: &PolicyModel, problem_id: &str, loss: f64, dz: Vec<f64>) -> Result<(f64, Gradient)> {
    if !loss.is_finite() || dz.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss(format!("problem {problem_id:?}")));
    }
    let row = model.row(problem_id)?;
    let shared = model.transfer * dz.iter().zip(&row.responses).map(|(g, r)| g * r.feature).sum::<f64>();
    Ok((loss, Gradient { row: dz, shared }))
}

/// Weighted preference loss with NLL regularization.
///
/// `L = -w log σ(βΔ) - (α w / |y⁺|) log M(y⁺)` where
/// `Δ = [log M(y⁺) - log R(y⁺)] - [log M(y⁻) - log R(y⁻)]` and `|y⁺|` is the
/// character length of the chosen answer. `w` is the pair weight, or 1 under
/// [`Objective::Unweighted`].
pub fn scpo_loss(
    model: &PolicyModel,
    reference: &PolicyModel,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<(f64, Gradient)> {
    let pid = pair.problem_id.as_str();
    let len = chosen_length(pair)?;
    let w = match cfg.objective {
        Objective::Unweighted => 1.0,
        _ => pair.weight,
    };
    let pos = model.response_index(pid, &pair.chosen_text, &pair.chosen_answer)?;
    let neg = model.response_index(pid, &pair.rejected_text, &pair.rejected_answer)?;
    let ref_pos = reference.response_index(pid, &pair.chosen_text, &pair.chosen_answer)?;
    let ref_neg = reference.response_index(pid, &pair.rejected_text, &pair.rejected_answer)?;

    let lp = log_softmax(&model.effective_logits(pid)?);
    let lr = log_softmax(&reference.effective_logits(pid)?);
    let delta = (lp[pos] - lr[ref_pos]) - (lp[neg] - lr[ref_neg]);
    let nll_coef = cfg.alpha * w / len;
    let loss = w * softplus(-cfg.beta * delta) - nll_coef * lp[pos];

    // d/dz of Δ is e⁺ - e⁻; d/dz of log M(y⁺) is e⁺ - p.
    let dpo_coef = -w * cfg.beta * sigmoid(-cfg.beta * delta);
    let mut dz: Vec<f64> = lp.iter().map(|l| nll_coef * l.exp()).collect();
    dz[pos] += dpo_coef - nll_coef;
    dz[neg] -= dpo_coef;
    finish(model, pid, loss, dz)
}

/// Length-normalized NLL of the chosen response, `-(1/|y⁺|) log M(y⁺)`.
pub fn lmsi_loss(model: &PolicyModel, target: &PreferencePair) -> Result<(f64, Gradient)> {
    let pid = target.problem_id.as_str();
    let len = chosen_length(target)?;
    let pos = model.response_index(pid, &target.chosen_text, &target.chosen_answer)?;
    let lp = log_softmax(&model.effective_logits(pid)?);
    let loss = -lp[pos] / len;
    let mut dz: Vec<f64> = lp.iter().map(|l| l.exp() / len).collect();
    dz[pos] -= 1.0 / len;
    finish(model, pid, loss, dz)
}

/// Loss of one training unit under `cfg.objective`.
pub fn pair_loss(
    model: &PolicyModel,
    reference: &PolicyModel,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<(f64, Gradient)> {
    match cfg.objective {
        Objective::Lmsi => lmsi_loss(model, pair),
        _ => scpo_loss(model, reference, pair, cfg),
    }
}
