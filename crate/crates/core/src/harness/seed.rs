//! Seed derivation: every random stream is a pure function of the master
//! seed, the trial index and a label, so results do not depend on which
//! worker runs a trial or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// SHA-256 of (master, trial, label, extra) as a ChaCha seed.
pub fn derive_seed(master: u64, trial: u64, label: &str, extra: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(trial.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(extra.to_le_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, trial: u64, label: &str, extra: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, trial, label, extra))
}

/// Git-style blob hash: SHA-256 over `blob <len>\0<content>`, hex encoded.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(1, 2, "realization", 0).random();
        let b: u64 = stream(1, 2, "realization", 0).random();
        assert_eq!(a, b);
        assert_ne!(derive_seed(1, 2, "realization", 0), derive_seed(1, 3, "realization", 0));
        assert_ne!(derive_seed(1, 2, "realization", 0), derive_seed(1, 2, "layout", 0));
        assert_ne!(derive_seed(1, 2, "pilots", 20), derive_seed(1, 2, "pilots", 40));
        assert_ne!(derive_seed(1, 2, "ab", 0), derive_seed(1, 2, "a", 0));
    }

    #[test]
    fn content_hash_matches_git_object_format() {
        // Empty blob: sha256("blob 0\0").
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
