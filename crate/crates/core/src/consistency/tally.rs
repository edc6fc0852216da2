use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::extract::{extract_answer, ExtractorKind};
use super::types::ResponseSample;
use crate::error::{Error, Result};
use crate::seed::rng_from;

/// All responses that share one canonical answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCluster {
    pub answer: String,
    pub votes: usize,
    /// `sample_idx` of the response that stands for this cluster.
    pub representative: usize,
    /// Member `sample_idx` values, ascending.
    pub members: Vec<usize>,
}

/// Responses for one problem grouped by final answer.
///
/// Clusters are ordered by votes descending, then by the smallest member
/// `sample_idx` ascending. `V(y)` is stored as an integer count; use
/// [`VoteTally::share`] for the fraction of `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub problem_id: String,
    pub k: usize,
    pub clusters: Vec<VoteCluster>,
    pub unparsed_count: usize,
}

impl VoteTally {
    /// The most consistent cluster.
    pub fn top(&self) -> Option<&VoteCluster> {
        self.clusters.first()
    }

    /// The least consistent cluster (last in tally order).
    pub fn bottom(&self) -> Option<&VoteCluster> {
        self.clusters.last()
    }

    pub fn top_votes(&self) -> usize {
        self.top().map_or(0, |c| c.votes)
    }

    /// Vote count of `answer`; zero when no response produced it.
    pub fn votes_for(&self, answer: &str) -> usize {
        self.clusters
            .iter()
            .find(|c| c.answer == answer)
            .map_or(0, |c| c.votes)
    }

    pub fn share(&self, votes: usize) -> f64 {
        votes as f64 / self.k as f64
    }

    pub fn top_share(&self) -> f64 {
        self.share(self.top_votes())
    }
}

/// Cluster responses of a single problem by canonical answer and count votes.
///
/// Answers are re-extracted from the response text with `kind`. Unparsable
/// responses are counted in `unparsed_count` and join no cluster. The
/// representative of each cluster is drawn uniformly from its members with an
/// RNG seeded by `seed`, so the result is a pure function of the inputs.
pub fn tally_votes(samples: &[ResponseSample], kind: ExtractorKind, seed: u64) -> Result<VoteTally> {
    let first = samples.first().ok_or(Error::EmptySamples)?;
    if let Some(other) = samples.iter().find(|s| s.problem_id != first.problem_id) {
        return Err(Error::MixedProblem {
            first: first.problem_id.clone(),
            other: other.problem_id.clone(),
        });
    }

    let mut groups: HashMap<String, Vec<usize>> = HashMap::new();
    let mut unparsed_count = 0;
    for sample in samples {
        match extract_answer(&sample.text, kind) {
            Some(answer) => groups.entry(answer).or_default().push(sample.sample_idx),
            None => unparsed_count += 1,
        }
    }

    let mut clusters: Vec<VoteCluster> = groups
        .into_iter()
        .map(|(answer, mut members)| {
            members.sort_unstable();
            VoteCluster {
                votes: members.len(),
                representative: members[0],
                answer,
                members,
            }
        })
        .collect();
    clusters.sort_by(|a, b| b.votes.cmp(&a.votes).then(a.members[0].cmp(&b.members[0])));

    let mut rng = rng_from(seed);
    for cluster in &mut clusters {
        cluster.representative = cluster.members[rng.random_range(0..cluster.members.len())];
    }

    Ok(VoteTally {
        problem_id: first.problem_id.clone(),
        k: samples.len(),
        clusters,
        unparsed_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::types::Pool;
    use proptest::prelude::*;

    fn samples(answers: &[Option<&str>]) -> Vec<ResponseSample> {
        answers
            .iter()
            .enumerate()
            .map(|(i, a)| ResponseSample {
                problem_id: "p".into(),
                sample_idx: i,
                pool: Pool::Base,
                temperature: 0.7,
                text: match a {
                    Some(a) => format!("reasoning {i}\n#### {a}"),
                    None => format!("I could not finish {i}"),
                },
                answer: a.map(str::to_string),
            })
            .collect()
    }

    fn summary(t: &VoteTally) -> Vec<(String, usize)> {
        t.clusters.iter().map(|c| (c.answer.clone(), c.votes)).collect()
    }

    #[test]
    fn counts_votes_in_order() {
        let s = samples(&["5", "5", "5", "3", "2", "5", "3", "5"].map(Some));
        let t = tally_votes(&s, ExtractorKind::HashNumber, 1).unwrap();
        assert_eq!(summary(&t), vec![("5".into(), 5), ("3".into(), 2), ("2".into(), 1)]);
        assert_eq!(t.k, 8);
        assert_eq!(t.top_share(), 5.0 / 8.0);
    }

    #[test]
    fn all_distinct_answers() {
        let s = samples(&["10", "11", "12", "13"].map(Some));
        let t = tally_votes(&s, ExtractorKind::HashNumber, 0).unwrap();
        assert_eq!(t.clusters.len(), 4);
        assert!(t.clusters.iter().all(|c| c.votes == 1));
        // Equal votes fall back to first occurrence.
        assert_eq!(t.clusters[0].answer, "10");
    }

    #[test]
    fn unparsed_responses_form_no_cluster() {
        let s = samples(&[Some("7"), None, Some("7"), Some("9"), Some("7"), None, Some("9"), Some("7")]);
        let t = tally_votes(&s, ExtractorKind::HashNumber, 3).unwrap();
        assert_eq!(summary(&t), vec![("7".into(), 4), ("9".into(), 2)]);
        assert_eq!(t.unparsed_count, 2);
    }

    #[test]
    fn mixed_problem_and_empty_are_rejected() {
        let mut s = samples(&[Some("1"), Some("2")]);
        s[1].problem_id = "q".into();
        assert!(matches!(
            tally_votes(&s, ExtractorKind::HashNumber, 0),
            Err(Error::MixedProblem { .. })
        ));
        assert!(matches!(tally_votes(&[], ExtractorKind::HashNumber, 0), Err(Error::EmptySamples)));
    }

    #[test]
    fn representatives_are_members() {
        let s = samples(&["1", "1", "1", "2", "2", "3"].map(Some));
        for seed in 0..20 {
            let t = tally_votes(&s, ExtractorKind::HashNumber, seed).unwrap();
            for c in &t.clusters {
                assert!(c.members.contains(&c.representative));
            }
        }
    }

    proptest! {
        #[test]
        fn partition_and_permutation_invariance(
            answers in proptest::collection::vec(proptest::option::weighted(0.8, 0u8..5), 1..16),
            seed in any::<u64>(),
            rot in 0usize..16,
        ) {
            let strs: Vec<Option<String>> = answers.iter().map(|a| a.map(|v| v.to_string())).collect();
            let refs: Vec<Option<&str>> = strs.iter().map(|a| a.as_deref()).collect();
            let s = samples(&refs);
            let t = tally_votes(&s, ExtractorKind::HashNumber, seed).unwrap();
            let total: usize = t.clusters.iter().map(|c| c.votes).sum::<usize>() + t.unparsed_count;
            prop_assert_eq!(total, t.k);
            prop_assert!(t.clusters.iter().all(|c| c.votes >= 1));
            prop_assert!(t.clusters.windows(2).all(|w| w[0].votes >= w[1].votes));

            let mut permuted = s.clone();
            let n = permuted.len();
            permuted.rotate_left(rot % n);
            permuted.reverse();
            let t2 = tally_votes(&permuted, ExtractorKind::HashNumber, seed).unwrap();
            prop_assert_eq!(summary(&t), summary(&t2));
            prop_assert_eq!(&t, &t2);

            let again = tally_votes(&s, ExtractorKind::HashNumber, seed).unwrap();
            prop_assert_eq!(
                serde_json::to_string(&t).unwrap(),
                serde_json::to_string(&again).unwrap()
            );
        }
    }
}
