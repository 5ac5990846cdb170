//! Term normalization and stable hashing shared by the mock backends,
//! the guideline delta metric and the review scorer.

use std::collections::BTreeSet;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Lowercased, whitespace-tokenized term set with leading/trailing
/// punctuation removed from each token. Empty tokens are dropped.
///
/// Internal punctuation is kept, so `well-demarcated` stays one term.
pub fn terms(text: &str) -> BTreeSet<String> {
    text.split_whitespace()
        .map(|tok| {
            tok.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Terms joined back into a single canonical line, sorted and `"; "`-separated.
pub fn join_terms<'a>(terms: impl IntoIterator<Item = &'a String>) -> String {
    terms
        .into_iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Lowercase and collapse all whitespace runs to single spaces.
pub fn normalize_whitespace_lower(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// SHA-256 over `seed (LE) ‖ parts...`, each part length-prefixed so that
/// concatenation boundaries cannot collide.
pub fn seeded_digest(seed: u64, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// `dim` coordinates in `[-1, 1]` drawn from a ChaCha20 stream keyed by `digest`.
///
/// Uses the top 53 bits of each `u64` so the mapping is independent of
/// `rand`'s float sampling internals.
pub fn unit_coordinates(digest: [u8; 32], dim: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::from_seed(digest);
    (0..dim)
        .map(|_| {
            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            2.0 * u - 1.0
        })
        .collect()
}

/// Value in `[0, 1)` derived from the first 8 bytes of a digest.
pub fn unit_interval(digest: [u8; 32]) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

/// First 12 hex characters of SHA-256, used for trace digests and templates.
pub fn short_hex(data: &[u8]) -> String {
    let d = Sha256::digest(data);
    d.iter().take(6).map(|b| format!("{b:02x}")).collect()
}
