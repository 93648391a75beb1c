//! Bag-of-tokens feature hashing.
//!
//! Tokens are maximal runs of alphanumerics or `_`, lowercased. Each token is
//! hashed with 64-bit FNV-1a; the bucket is `hash % dim` and bit 63 of the
//! hash selects the sign of the contribution.

use std::collections::BTreeMap;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Bucket index and sign for one token.
pub fn hash_token(token: &str, dim: usize) -> (usize, f64) {
    let h = fnv1a64(token.as_bytes());
    let bucket = (h % dim as u64) as usize;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    (bucket, sign)
}

/// Sparse hashed vector; zero buckets are not stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    pub entries: BTreeMap<usize, f64>,
}

impl SparseVector {
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S], dim: usize) -> Self {
        let mut entries = BTreeMap::new();
        for t in tokens {
            let (bucket, sign) = hash_token(t.as_ref(), dim);
            *entries.entry(bucket).or_insert(0.0) += sign;
        }
        entries.retain(|_, v| *v != 0.0);
        SparseVector { entries }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (small, large) = if self.entries.len() <= other.entries.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .entries
            .iter()
            .filter_map(|(k, v)| large.entries.get(k).map(|w| v * w))
            .sum()
    }

    /// Cosine similarity; 0 if either side is the zero vector.
    pub fn cosine(&self, other: &SparseVector) -> f64 {
        // sqrt of the product keeps cos(v, v) exactly 1.
        let denom = (self.norm_sq() * other.norm_sq()).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            (self.dot(other) / denom).clamp(-1.0, 1.0)
        }
    }

    fn norm_sq(&self) -> f64 {
        self.entries.values().map(|v| v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenize_splits_on_punctuation_and_lowercases() {
        assert_eq!(tokenize("for(i=0;i<N;i++)"), vec!["for", "i", "0", "i", "n", "i"]);
        assert_eq!(tokenize("snake_case Foo"), vec!["snake_case", "foo"]);
        assert!(tokenize("  ;{} ").is_empty());
    }

    #[test]
    fn repeated_tokens_accumulate() {
        let v = SparseVector::from_tokens(&["a", "a", "b"], 1 << 16);
        assert_eq!(v.entries.len(), 2);
        let (ba, sa) = hash_token("a", 1 << 16);
        assert_eq!(v.entries[&ba], 2.0 * sa);
    }
}
