//! Accuracy, vote-share and rank-correlation statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::consistency::{tally_votes, ExtractorKind, Problem, ResponseSample, VoteTally};
use crate::error::{Error, Result};
use crate::pairs::{PairSource, PreferencePair};
use crate::policy::PolicyModel;

fn gold_of(problem: &Problem) -> Result<&str> {
    problem
        .gold_answer
        .as_deref()
        .ok_or_else(|| Error::MissingGold(problem.id.clone()))
}

fn nonempty(problems: &[Problem]) -> Result<()> {
    if problems.is_empty() {
        return Err(Error::InvalidInput("no problems to evaluate".into()));
    }
    Ok(())
}

/// Fraction of problems whose argmax answer equals the gold answer.
pub fn greedy_accuracy(model: &PolicyModel, problems: &[Problem]) -> Result<f64> {
    nonempty(problems)?;
    let mut hits = 0usize;
    for p in problems {
        let gold = gold_of(p)?;
        hits += usize::from(model.greedy(&p.id)?.answer == gold);
    }
    Ok(hits as f64 / problems.len() as f64)
}

/// Greedy accuracy from externally produced answers (e.g. temperature-0
/// completions); a missing answer counts as wrong.
pub fn greedy_accuracy_from_answers(answers: &BTreeMap<String, Option<String>>, problems: &[Problem]) -> Result<f64> {
    nonempty(problems)?;
    let mut hits = 0usize;
    for p in problems {
        let gold = gold_of(p)?;
        hits += usize::from(answers.get(&p.id).and_then(|a| a.as_deref()) == Some(gold));
    }
    Ok(hits as f64 / problems.len() as f64)
}

/// Majority-vote answer; ties go to the answer sampled first.
pub fn sc_answer(tally: &VoteTally) -> Option<&str> {
    tally.top().map(|c| c.answer.as_str())
}

/// k-way self-consistency accuracy. Every problem needs the same number of
/// samples in `samples`.
pub fn sc_accuracy(
    samples: &BTreeMap<String, Vec<ResponseSample>>,
    problems: &[Problem],
    kind: ExtractorKind,
) -> Result<f64> {
    nonempty(problems)?;
    let mut k = None;
    let mut hits = 0usize;
    for p in problems {
        let gold = gold_of(p)?;
        let s = samples
            .get(&p.id)
            .ok_or_else(|| Error::InvalidInput(format!("no samples for problem {:?}", p.id)))?;
        match k {
            None => k = Some(s.len()),
            Some(k) if k != s.len() => {
                return Err(Error::InvalidInput(format!(
                    "problem {:?} has {} samples, expected {k}",
                    p.id,
                    s.len()
                )))
            }
            _ => {}
        }
        // The representative seed is irrelevant to the voted answer.
        let tally = tally_votes(s, kind, 0)?;
        hits += usize::from(sc_answer(&tally) == Some(gold));
    }
    Ok(hits as f64 / problems.len() as f64)
}

/// Mean share of the most-voted answer, `V(top) / k`.
pub fn mean_top_vote_share(tallies: &[VoteTally]) -> f64 {
    if tallies.is_empty() {
        return 0.0;
    }
    tallies.iter().map(VoteTally::top_share).sum::<f64>() / tallies.len() as f64
}

/// Somers' D of accuracy given votes, `(C - D) / (C + D + T_acc)`, over all
/// unordered pairs of observations that differ in votes. `C` and `D` count
/// concordant and discordant pairs, `T_acc` pairs tied on accuracy only.
///
/// Returns `None` when fewer than two observations exist or every pair is
/// tied on votes.
pub fn somers_d(observations: &[(usize, bool)]) -> Option<f64> {
    let (mut concordant, mut discordant, mut tied_acc) = (0u64, 0u64, 0u64);
    for (i, &(vi, ai)) in observations.iter().enumerate() {
        for &(vj, aj) in &observations[i + 1..] {
            if vi == vj {
                continue;
            }
            if ai == aj {
                tied_acc += 1;
            } else if (vi > vj) == ai {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let total = concordant + discordant + tied_acc;
    (total > 0).then(|| (concordant as f64 - discordant as f64) / total as f64)
}

/// `(V, correct)` observations for the most and the least consistent answer
/// of one tally; the second only when the tally has two or more clusters.
pub fn vote_observations(tally: &VoteTally, gold: &str) -> Vec<(usize, bool)> {
    let mut obs = Vec::with_capacity(2);
    if let Some(top) = tally.top() {
        obs.push((top.votes, top.answer == gold));
    }
    if tally.clusters.len() > 1 {
        let bottom = tally.bottom().expect("two or more clusters");
        obs.push((bottom.votes, bottom.answer == gold));
    }
    obs
}

/// How a pair orders a correct and an incorrect response.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingCounts {
    /// Chosen correct, rejected incorrect.
    pub correct: usize,
    /// Chosen incorrect, rejected correct.
    pub incorrect: usize,
    /// Equal votes for both sides when the pair was formed.
    pub tie: usize,
    /// Neither of the above (both sides correct or both incorrect).
    pub neutral: usize,
}

impl OrderingCounts {
    pub fn total(&self) -> usize {
        self.correct + self.incorrect + self.tie + self.neutral
    }

    /// Share of pairs that prefer an incorrect response over a correct one.
    pub fn incorrect_rate(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.incorrect as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairQuality {
    /// Accuracy of chosen responses minus accuracy of rejected responses.
    pub margin: f64,
    pub ordering_counts: OrderingCounts,
}

/// Margin and ordering classification of a pair set against gold answers.
///
/// Ties are judged on consistency pairs only; vote counts of gold and
/// reward-model pairs do not drive their construction.
pub fn pair_quality(pairs: &[PreferencePair], gold: &BTreeMap<String, String>) -> Result<PairQuality> {
    let mut counts = OrderingCounts::default();
    let (mut chosen_hits, mut rejected_hits) = (0usize, 0usize);
    for pair in pairs {
        let g = gold
            .get(&pair.problem_id)
            .ok_or_else(|| Error::MissingGold(pair.problem_id.clone()))?;
        let chosen_ok = &pair.chosen_answer == g;
        let rejected_ok = &pair.rejected_answer == g;
        chosen_hits += usize::from(chosen_ok);
        rejected_hits += usize::from(rejected_ok);
        if pair.source == PairSource::Consistency && pair.chosen_votes == pair.rejected_votes {
            counts.tie += 1;
        } else if chosen_ok && !rejected_ok {
            counts.correct += 1;
        } else if !chosen_ok && rejected_ok {
            counts.incorrect += 1;
        } else {
            counts.neutral += 1;
        }
    }
    let margin = if pairs.is_empty() {
        0.0
    } else {
        (chosen_hits as f64 - rejected_hits as f64) / pairs.len() as f64
    };
    Ok(PairQuality {
        margin,
        ordering_counts: counts,
    })
}

/// Evaluation of one model on one split. Key order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub greedy_acc: f64,
    pub sc_acc: f64,
    pub sc_k: usize,
    pub mean_top_vote_share: f64,
    /// Absent when every observation has the same vote count.
    pub somers_d: Option<f64>,
    pub margin: Option<f64>,
    pub ordering_counts: Option<OrderingCounts>,
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: String,
    /// Mean pairs per run across replicates.
    pub pair_count: f64,
    pub margin: f64,
    pub test_acc: f64,
}

/// CSV with header `tau,pair_count,margin,test_acc`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("tau,pair_count,margin,test_acc\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.tau, r.pair_count, r.margin, r.test_acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::{Origin, Pool, Split};
    use proptest::prelude::*;

    fn problem(id: &str, gold: Option<&str>) -> Problem {
        Problem {
            id: id.into(),
            text: String::new(),
            gold_answer: gold.map(str::to_string),
            split: Split::Test,
            origin: Origin::Seed,
        }
    }

    fn samples(pid: &str, answers: &[&str]) -> Vec<ResponseSample> {
        answers
            .iter()
            .enumerate()
            .map(|(i, a)| ResponseSample {
                problem_id: pid.into(),
                sample_idx: i,
                pool: Pool::Base,
                temperature: 0.7,
                text: format!("r\n#### {a}"),
                answer: Some(a.to_string()),
            })
            .collect()
    }

    fn pair(pid: &str, chosen: &str, rejected: &str, votes: (usize, usize)) -> PreferencePair {
        PreferencePair {
            problem_id: pid.into(),
            chosen_text: String::new(),
            rejected_text: String::new(),
            chosen_answer: chosen.into(),
            rejected_answer: rejected.into(),
            chosen_votes: votes.0,
            rejected_votes: votes.1,
            k: 8,
            weight: (votes.0 as f64 - votes.1 as f64) / 8.0,
            source: PairSource::Consistency,
            tau: 4.0,
            iteration: 0,
        }
    }

    #[test]
    fn greedy_peaked_models() {
        let m = PolicyModel::tabular([("a", vec![("1", 5.0), ("2", 0.0)]), ("b", vec![("3", 0.0), ("4", 5.0)])]).unwrap();
        let right = [problem("a", Some("1")), problem("b", Some("4"))];
        let wrong = [problem("a", Some("2")), problem("b", Some("3"))];
        assert_eq!(greedy_accuracy(&m, &right).unwrap(), 1.0);
        assert_eq!(greedy_accuracy(&m, &wrong).unwrap(), 0.0);
        assert!(matches!(greedy_accuracy(&m, &[problem("a", None)]), Err(Error::MissingGold(_))));
    }

    #[test]
    fn greedy_versus_sc_fixtures() {
        // Gold answer holds 0.6 on one response: argmax and majority agree.
        let m = PolicyModel::tabular([("a", vec![("1", 0.6f64.ln()), ("2", 0.25f64.ln()), ("3", 0.15f64.ln())])]).unwrap();
        assert_eq!(greedy_accuracy(&m, &[problem("a", Some("1"))]).unwrap(), 1.0);
        // Gold answer holds 0.4 but a distractor holds 0.45: greedy is wrong.
        let m = PolicyModel::tabular([("a", vec![("1", 0.4f64.ln()), ("2", 0.45f64.ln()), ("3", 0.15f64.ln())])]).unwrap();
        assert_eq!(greedy_accuracy(&m, &[problem("a", Some("1"))]).unwrap(), 0.0);
    }

    #[test]
    fn sc_examples() {
        let mut by = BTreeMap::new();
        by.insert("a".to_string(), samples("a", &["5", "5", "3"]));
        assert_eq!(sc_accuracy(&by, &[problem("a", Some("5"))], ExtractorKind::HashNumber).unwrap(), 1.0);

        // k = 1 reduces to single-sample accuracy.
        let mut by = BTreeMap::new();
        by.insert("a".to_string(), samples("a", &["1"]));
        by.insert("b".to_string(), samples("b", &["2"]));
        let ps = [problem("a", Some("1")), problem("b", Some("3"))];
        assert_eq!(sc_accuracy(&by, &ps, ExtractorKind::HashNumber).unwrap(), 0.5);

        // Tie goes to the first-sampled answer.
        let mut by = BTreeMap::new();
        by.insert("a".to_string(), samples("a", &["2", "1", "1", "2"]));
        assert_eq!(sc_accuracy(&by, &[problem("a", Some("2"))], ExtractorKind::HashNumber).unwrap(), 1.0);

        by.insert("b".to_string(), samples("b", &["1"]));
        let ps = [problem("a", Some("2")), problem("b", Some("1"))];
        assert!(sc_accuracy(&by, &ps, ExtractorKind::HashNumber).is_err());
    }

    #[test]
    fn somers_examples() {
        assert_eq!(somers_d(&[(3, true), (1, false)]), Some(1.0));
        assert_eq!(somers_d(&[(3, false), (1, true)]), Some(-1.0));
        // Pairs tied on Acc stay in the denominator: C = 4, T_Acc = 2.
        assert_eq!(somers_d(&[(3, true), (2, true), (1, false), (0, false)]), Some(4.0 / 6.0));
        // (3,1),(2,0),(2,1),(1,0): pairs differing in V are
        // (3,1)-(2,0) C, (3,1)-(2,1) T, (3,1)-(1,0) C, (2,0)-(1,0) T, (2,1)-(1,0) C.
        assert_eq!(somers_d(&[(3, true), (2, false), (2, true), (1, false)]), Some(3.0 / 5.0));
        assert_eq!(somers_d(&[(2, true), (2, false)]), None);
        assert_eq!(somers_d(&[(2, true)]), None);
    }

    #[test]
    fn pair_quality_examples() {
        let gold = BTreeMap::from([("a".to_string(), "1".to_string()), ("b".to_string(), "2".to_string())]);
        let good = [pair("a", "1", "9", (5, 1)), pair("b", "2", "7", (6, 2))];
        let q = pair_quality(&good, &gold).unwrap();
        assert_eq!(q.margin, 1.0);
        assert_eq!(q.ordering_counts.correct, 2);
        let swapped: Vec<_> = good
            .iter()
            .map(|p| PreferencePair {
                chosen_answer: p.rejected_answer.clone(),
                rejected_answer: p.chosen_answer.clone(),
                ..p.clone()
            })
            .collect();
        let q = pair_quality(&swapped, &gold).unwrap();
        assert_eq!(q.margin, -1.0);
        assert_eq!(q.ordering_counts.incorrect, 2);

        let mixed = [pair("a", "1", "9", (4, 4)), pair("b", "3", "4", (5, 1))];
        let q = pair_quality(&mixed, &gold).unwrap();
        assert_eq!(q.ordering_counts, OrderingCounts { correct: 0, incorrect: 0, tie: 1, neutral: 1 });
        assert_eq!(q.ordering_counts.total(), 2);

        assert!(matches!(pair_quality(&[pair("z", "1", "2", (3, 1))], &gold), Err(Error::MissingGold(_))));
    }

    #[test]
    fn sweep_csv_layout() {
        let csv = sweep_csv(&[SweepRow { tau: "0.5k".into(), pair_count: 3.0, margin: 0.25, test_acc: 0.5 }]);
        assert_eq!(csv, "tau,pair_count,margin,test_acc\n0.5k,3,0.25,0.5\n");
    }

    /// Counting formulation, independent of the pairwise loop.
    type Obs = (usize, bool);

    fn somers_by_counting(obs: &[Obs]) -> Option<f64> {
        let (right, wrong): (Vec<Obs>, Vec<Obs>) = obs.iter().partition(|o| o.1);
        let c: usize = right.iter().map(|r| wrong.iter().filter(|w| w.0 < r.0).count()).sum();
        let d: usize = right.iter().map(|r| wrong.iter().filter(|w| w.0 > r.0).count()).sum();
        let untied = |group: &[Obs]| {
            let n = group.len();
            let mut by_v = BTreeMap::new();
            for g in group {
                *by_v.entry(g.0).or_insert(0usize) += 1;
            }
            n * n.saturating_sub(1) / 2 - by_v.values().map(|m| m * (m - 1) / 2).sum::<usize>()
        };
        let t = untied(&right) + untied(&wrong);
        (c + d + t > 0).then(|| (c as f64 - d as f64) / (c + d + t) as f64)
    }

    proptest! {
        #[test]
        fn somers_matches_counting(obs in proptest::collection::vec((0usize..6, any::<bool>()), 0..30)) {
            match (somers_d(&obs), somers_by_counting(&obs)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn somers_bounded_and_antisymmetric(obs in proptest::collection::vec((0usize..6, any::<bool>()), 0..30)) {
            let flipped: Vec<_> = obs.iter().map(|&(v, a)| (v, !a)).collect();
            match (somers_d(&obs), somers_d(&flipped)) {
                (Some(d), Some(f)) => {
                    prop_assert!((-1.0..=1.0).contains(&d));
                    prop_assert!((d + f).abs() < 1e-12);
                }
                (None, None) => {}
                _ => prop_assert!(false, "definedness must not depend on acc"),
            }
        }

        #[test]
        fn margin_antisymmetry(
            rows in proptest::collection::vec((0u8..3, 0u8..3, 0u8..3, 1usize..8, 0usize..8), 1..20)
        ) {
            let gold: BTreeMap<String, String> = rows.iter().enumerate().map(|(i, r)| (i.to_string(), r.0.to_string())).collect();
            let pairs: Vec<_> = rows.iter().enumerate()
                .map(|(i, r)| pair(&i.to_string(), &r.1.to_string(), &r.2.to_string(), (r.3, r.4)))
                .collect();
            let swapped: Vec<_> = pairs.iter().map(|p| PreferencePair {
                chosen_answer: p.rejected_answer.clone(),
                rejected_answer: p.chosen_answer.clone(),
                ..p.clone()
            }).collect();
            let a = pair_quality(&pairs, &gold).unwrap();
            let b = pair_quality(&swapped, &gold).unwrap();
            prop_assert_eq!(a.margin, -b.margin);
            prop_assert_eq!(a.ordering_counts.total(), pairs.len());
        }
    }
}
