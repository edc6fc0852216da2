use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Generated,
}

/// Which sampling pool a response came from.
///
/// `Base` holds the k responses that cast votes; `HighTemp` holds the extra
/// high-temperature responses that are only ever used to find a rejected
/// answer when the base pool is unanimous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Base,
    HighTemp,
}

/// A query, optionally with its canonical gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub id: String,
    pub text: String,
    /// Required key; `null` when unlabeled.
    #[serde(deserialize_with = "Option::deserialize")]
    pub gold_answer: Option<String>,
    pub split: Split,
    pub origin: Origin,
}

impl Problem {
    pub fn generated(id: impl Into<String>, text: impl Into<String>, split: Split) -> Self {
        Problem {
            id: id.into(),
            text: text.into(),
            gold_answer: None,
            split,
            origin: Origin::Generated,
        }
    }
}

/// One sampled response and its extracted canonical answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseSample {
    pub problem_id: String,
    pub sample_idx: usize,
    pub pool: Pool,
    pub temperature: f64,
    pub text: String,
    /// Required key; `null` when no answer could be extracted.
    #[serde(deserialize_with = "Option::deserialize")]
    pub answer: Option<String>,
}
