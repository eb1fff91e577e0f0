use std::collections::BTreeMap;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Character n-gram lengths emitted inside each token.
pub const NGRAM_RANGE: std::ops::RangeInclusive<usize> = 3..=5;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Unicode lowercasing with Turkish dotted/dotless i: `İ → i`, `I → ı`.
pub fn turkish_lowercase(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            'İ' => out.push('i'),
            'I' => out.push('ı'),
            c => out.extend(c.to_lowercase()),
        }
    }
    out
}

/// Sparse L2-normalized bag of hashed tokens and character n-grams.
///
/// Entries are sorted by bucket and hold strictly positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(k, w) in &self.entries {
            out[k as usize] = w;
        }
        out
    }
}

/// Hashes `text` into a `dim`-bucket feature vector.
///
/// Lowercases, splits on whitespace, and counts every token plus all of its character 3-, 4-
/// and 5-grams under FNV-1a modulo `dim`. Counts are then L2-normalized, so empty input is the
/// only way to get the zero vector.
pub fn featurize(text: &str, dim: usize) -> FeatureVector {
    assert!(dim >= 2, "hash space must have at least 2 buckets");
    let lowered = turkish_lowercase(text);
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut bump = |s: &str| {
        let bucket = (fnv1a64(s.as_bytes()) % dim as u64) as u32;
        *counts.entry(bucket).or_insert(0.0) += 1.0;
    };
    let mut buf = String::new();
    for token in lowered.split_whitespace() {
        bump(token);
        let chars: Vec<char> = token.chars().collect();
        for n in NGRAM_RANGE {
            for window in chars.windows(n) {
                buf.clear();
                buf.extend(window);
                bump(&buf);
            }
        }
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    let entries = counts.into_iter().map(|(k, c)| (k, c / norm)).collect();
    FeatureVector { dim, entries }
}
