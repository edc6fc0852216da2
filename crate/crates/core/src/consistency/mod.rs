//! Answer extraction, canonicalization and vote counting.

mod extract;
mod tally;
mod types;

pub use extract::{canonicalize, extract_answer, ExtractorKind};
pub use tally::{tally_votes, VoteCluster, VoteTally};
pub use types::{Origin, Pool, Problem, ResponseSample, Split};
