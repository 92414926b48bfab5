//! Kraft–McMillan checks over enumerated codeword sets.

use super::bits::BitString;

pub fn kraft_sum<I: IntoIterator<Item = usize>>(lengths: I) -> f64 {
    lengths.into_iter().map(|l| (-(l as f64)).exp2()).sum()
}

/// No codeword is a prefix of another (duplicates count as violations).
pub fn is_prefix_free(codewords: &[BitString]) -> bool {
    let mut sorted: Vec<String> = codewords.iter().map(BitString::to_string_01).collect();
    sorted.sort();
    sorted.windows(2).all(|w| !w[1].starts_with(&w[0]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KraftReport {
    pub codewords: usize,
    pub sum: f64,
    pub prefix_free: bool,
}

impl KraftReport {
    pub fn passed(&self) -> bool {
        self.prefix_free && self.sum <= 1.0
    }
}

pub fn kraft_check(codewords: &[BitString]) -> KraftReport {
    KraftReport {
        codewords: codewords.len(),
        sum: kraft_sum(codewords.iter().map(BitString::len)),
        prefix_free: is_prefix_free(codewords),
    }
}
