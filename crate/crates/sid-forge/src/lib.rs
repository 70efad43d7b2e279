//! Tooling for Semantic-ID tokenizers in generative recommendation:
//! quantify SID collisions, compute collision-corrected item-level ranking
//! metrics from beam outputs, and build zero-collision SID assignments by
//! minimum-cost last-level reassignment.
//!
//! The crate is organized around an immutable [`index::SidIndex`]:
//!
//! - [`collision`] measures collision rates, prefix groups, and codebook
//!   capacity;
//! - [`cce`] scores ranked beams at the SID level and the item level;
//! - [`zcr`] rewrites last-level codes to remove collisions at minimum cost,
//!   with a greedy baseline for comparison;
//! - [`rkmeans`] is a residual K-Means tokenizer producing indexes and the
//!   quantization model that reassignment consumes;
//! - [`collab`] builds PPMI+SVD collaborative embeddings and fuses them with
//!   textual ones;
//! - [`dataset`] and [`synth`] cover ingestion and synthetic beams;
//! - [`cli`] is the `sid-forge` command-line surface over all of the above.

pub mod cce;
pub mod cli;
pub mod collab;
pub mod collision;
pub mod dataset;
pub mod error;
pub mod index;
pub mod rkmeans;
pub mod synth;
pub mod zcr;

pub use error::{Error, Result};
pub use index::{build_sid_index, InteractionLog, ItemId, SidIndex, SidSequence};

#[cfg(test)]
pub(crate) mod testutil {
    use crate::index::{build_sid_index, ItemId, SidIndex, SidSequence};

    /// Deterministic pseudo-random assignments; a cheap LCG is enough here.
    pub(crate) fn random_index(n: usize, l: usize, v: u32, seed: u64) -> SidIndex {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 33) as u32
        };
        let assignments = (0..n)
            .map(|i| {
                let codes: Vec<u32> = (0..l).map(|_| next() % v).collect();
                (ItemId(i as u32), SidSequence::new(codes))
            })
            .collect();
        build_sid_index(assignments, l, v).unwrap()
    }
}
