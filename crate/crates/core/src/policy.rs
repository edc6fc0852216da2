//! Desk-scale differentiable policy.
//!
//! Each problem owns a row of logits over a fixed list of candidate
//! responses. Several responses may share one final answer (different
//! rationales reaching the same result), so the probability of an answer is
//! the sum over its responses. On top of the rows sits one shared scalar `s`:
//! the effective logit of response `j` is `row[j] + transfer * s * feature[j]`,
//! which lets training on some problems move every other problem.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate response of a problem row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub text: String,
    pub answer: String,
    /// Coupling to the shared scalar; 0 leaves the response untouched by it.
    pub feature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub responses: Vec<PolicyResponse>,
    pub logits: Vec<f64>,
}

impl PolicyRow {
    pub fn new(responses: Vec<PolicyResponse>, logits: Vec<f64>) -> Result<Self> {
        if responses.is_empty() || responses.len() != logits.len() {
            return Err(Error::InvalidInput(format!(
                "row needs one logit per response ({} responses, {} logits)",
                responses.len(),
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidInput("policy logits must be finite".into()));
        }
        Ok(PolicyRow { responses, logits })
    }
}

/// Trainable policy; `version` is the iteration index that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub rows: BTreeMap<String, PolicyRow>,
    pub shared: f64,
    pub transfer: f64,
    pub version: usize,
}

pub(crate) fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl PolicyModel {
    pub fn new(transfer: f64) -> Self {
        PolicyModel {
            rows: BTreeMap::new(),
            shared: 0.0,
            transfer,
            version: 0,
        }
    }

    /// A plain tabular policy: one response per answer, no shared scalar.
    pub fn tabular<'a>(rows: impl IntoIterator<Item = (&'a str, Vec<(&'a str, f64)>)>) -> Result<Self> {
        let mut model = PolicyModel::new(0.0);
        for (id, entries) in rows {
            let responses = entries
                .iter()
                .map(|(a, _)| PolicyResponse {
                    text: format!("rationale stub\n#### {a}"),
                    answer: a.to_string(),
                    feature: 0.0,
                })
                .collect();
            let logits = entries.iter().map(|(_, l)| *l).collect();
            model.insert_row(id, PolicyRow::new(responses, logits)?);
        }
        Ok(model)
    }

    pub fn insert_row(&mut self, problem_id: impl Into<String>, row: PolicyRow) {
        self.rows.insert(problem_id.into(), row);
    }

    pub fn row(&self, problem_id: &str) -> Result<&PolicyRow> {
        self.rows
            .get(problem_id)
            .ok_or_else(|| Error::UnknownProblem(problem_id.to_string()))
    }

    pub fn row_mut(&mut self, problem_id: &str) -> Result<&mut PolicyRow> {
        self.rows
            .get_mut(problem_id)
            .ok_or_else(|| Error::UnknownProblem(problem_id.to_string()))
    }

    pub fn effective_logits(&self, problem_id: &str) -> Result<Vec<f64>> {
        let row = self.row(problem_id)?;
        let shift = self.transfer * self.shared;
        Ok(row
            .logits
            .iter()
            .zip(&row.responses)
            .map(|(l, r)| l + shift * r.feature)
            .collect())
    }

    /// Log-probabilities of every response of the row.
    pub fn response_logprobs(&self, problem_id: &str) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.effective_logits(problem_id)?))
    }

    /// Distinct answers of the row in first-response order.
    pub fn answer_domain(&self, problem_id: &str) -> Result<Vec<String>> {
        let mut domain: Vec<String> = Vec::new();
        for r in &self.row(problem_id)?.responses {
            if !domain.contains(&r.answer) {
                domain.push(r.answer.clone());
            }
        }
        Ok(domain)
    }

    /// Log-probability (nats) of an answer, marginalized over its responses.
    pub fn toy_logprob(&self, problem_id: &str, answer: &str) -> Result<f64> {
        let row = self.row(problem_id)?;
        let lp = self.response_logprobs(problem_id)?;
        let picked = row
            .responses
            .iter()
            .zip(&lp)
            .filter(|(r, _)| r.answer == answer)
            .map(|(_, l)| *l);
        let value = log_sum_exp(picked);
        if value == f64::NEG_INFINITY {
            return Err(Error::UnknownAnswer {
                problem_id: problem_id.to_string(),
                answer: answer.to_string(),
            });
        }
        Ok(value)
    }

    /// Row index of a response identified by its text, falling back to the
    /// answer when the text is foreign but the answer has exactly one response.
    pub fn response_index(&self, problem_id: &str, text: &str, answer: &str) -> Result<usize> {
        let row = self.row(problem_id)?;
        if let Some(i) = row.responses.iter().position(|r| r.text == text && r.answer == answer) {
            return Ok(i);
        }
        let mut by_answer = row.responses.iter().enumerate().filter(|(_, r)| r.answer == answer);
        match (by_answer.next(), by_answer.next()) {
            (Some((i, _)), None) => Ok(i),
            _ => Err(Error::UnknownAnswer {
                problem_id: problem_id.to_string(),
                answer: answer.to_string(),
            }),
        }
    }

    /// Argmax response (ties to the lowest index).
    pub fn greedy(&self, problem_id: &str) -> Result<&PolicyResponse> {
        let z = self.effective_logits(problem_id)?;
        let mut best = 0;
        for (i, v) in z.iter().enumerate() {
            if *v > z[best] {
                best = i;
            }
        }
        Ok(&self.row(problem_id)?.responses[best])
    }

    /// Sampling distribution at `temperature` after nucleus truncation to
    /// the smallest set of responses whose mass reaches `top_p`.
    pub fn sampling_probs(&self, problem_id: &str, temperature: f64, top_p: f64) -> Result<Vec<f64>> {
        let z: Vec<f64> = self
            .effective_logits(problem_id)?
            .iter()
            .map(|v| v / temperature)
            .collect();
        let p: Vec<f64> = log_softmax(&z).iter().map(|l| l.exp()).collect();
        if top_p >= 1.0 {
            return Ok(p);
        }
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        let mut kept = vec![0.0; p.len()];
        let mut mass = 0.0;
        for &i in &order {
            kept[i] = p[i];
            mass += p[i];
            if mass >= top_p {
                break;
            }
        }
        Ok(kept.iter().map(|v| v / mass).collect())
    }

    pub fn check_finite(&self) -> Result<()> {
        if !self.shared.is_finite() {
            return Err(Error::NonFiniteLoss("shared parameter diverged".into()));
        }
        for (id, row) in &self.rows {
            if row.logits.iter().any(|l| !l.is_finite()) {
                return Err(Error::NonFiniteLoss(format!("logits of {id} diverged")));
            }
        }
        Ok(())
    }
}
