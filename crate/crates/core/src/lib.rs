pub mod asli;
pub mod cli;
pub mod error;
pub mod parsimony;
pub mod transition;
pub mod trees;
pub mod graph;
pub mod model;
pub mod phonology;

#[doc(hidden)]
pub mod testutil;

pub use error::{Error, Result};

pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in master.to_le_bytes().iter().chain(tag.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
