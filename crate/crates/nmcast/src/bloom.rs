//! Bloom-filter instantiation sets.
//!
//! A group name may describe its publishing nodes implicitly as a statistical
//! filter instead of an explicit endpoint list. The filter travels inside the
//! group URI, so its parameters are carried in-band: any party holding the
//! name can test membership without extra state. Membership tests never
//! return false for an inserted element; false positives for non-members
//! occur at roughly `(1 - e^(-kn/m))^k`.
//!
//! Hashing is fixed so that independently produced filters agree bit for bit:
//! a single 64-bit FNV-1a hash of the element is split into two 32-bit
//! halves `(h1, h2)` and the k probe positions are `h1 + i*h2 mod m`.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Smallest permitted filter size in bits.
pub const MIN_BITS: usize = 8;
/// Largest filter size accepted when decoding names (parser guard).
pub const MAX_BITS: usize = 1 << 20;
/// Largest permitted hash count.
pub const MAX_HASHES: u32 = 16;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(data: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in data {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Fixed-parameter Bloom filter over strings.
///
/// `n_inserted` is a local statistic used for false-positive estimates; it is
/// not part of the wire form and is ignored by equality.
#[derive(Clone, Serialize, Deserialize)]
pub struct BloomFilter {
    bits: Vec<u8>,
    m: usize,
    k: u32,
    n_inserted: u64,
}

/// Parameter or size errors when constructing or decoding a filter.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BloomError {
    #[error("filter must have at least {MIN_BITS} bits, got {0}")]
    TooSmall(usize),
    #[error("filter size {0} exceeds the {MAX_BITS}-bit decode limit")]
    TooLarge(usize),
    #[error("hash count must be in 1..={MAX_HASHES}, got {0}")]
    BadHashCount(u32),
    #[error("bit payload is {got} bytes, expected {expected} for {m} bits")]
    LengthMismatch { m: usize, expected: usize, got: usize },
}

impl BloomFilter {
    /// Creates an empty filter with `m` bits and `k` hash probes.
    pub fn new(m: usize, k: u32) -> Result<Self, BloomError> {
        if m < MIN_BITS {
            return Err(BloomError::TooSmall(m));
        }
        if m > MAX_BITS {
            return Err(BloomError::TooLarge(m));
        }
        if k == 0 || k > MAX_HASHES {
            return Err(BloomError::BadHashCount(k));
        }
        Ok(BloomFilter {
            bits: vec![0; m.div_ceil(8)],
            m,
            k,
            n_inserted: 0,
        })
    }

    /// Reassembles a filter from its wire parameters and bit payload.
    pub fn from_parts(m: usize, k: u32, bits: Vec<u8>) -> Result<Self, BloomError> {
        let mut f = BloomFilter::new(m, k)?;
        if bits.len() != f.bits.len() {
            return Err(BloomError::LengthMismatch {
                m,
                expected: f.bits.len(),
                got: bits.len(),
            });
        }
        f.bits = bits;
        Ok(f)
    }

    pub fn bit_len(&self) -> usize {
        self.m
    }

    pub fn hash_count(&self) -> u32 {
        self.k
    }

    pub fn inserted(&self) -> u64 {
        self.n_inserted
    }

    pub fn bit_bytes(&self) -> &[u8] {
        &self.bits
    }

    fn probe_positions(&self, element: &str) -> impl Iterator<Item = usize> + '_ {
        let h = fnv1a64(element.as_bytes());
        let h1 = h & 0xffff_ffff;
        let h2 = h >> 32;
        let m = self.m as u64;
        (0..u64::from(self.k)).map(move |i| ((h1 + i * h2) % m) as usize)
    }

    /// Inserts an element. Never fails; repeated inserts are counted.
    pub fn insert(&mut self, element: &str) {
        let positions: Vec<usize> = self.probe_positions(element).collect();
        for p in positions {
            self.bits[p >> 3] |= 1 << (p & 7);
        }
        self.n_inserted += 1;
    }

    /// Tests membership. True for every inserted element; true for a
    /// non-member with the usual Bloom false-positive probability.
    pub fn contains(&self, element: &str) -> bool {
        self.probe_positions(element)
            .all(|p| self.bits[p >> 3] & (1 << (p & 7)) != 0)
    }

    /// Analytic false-positive rate `(1 - e^(-kn/m))^k` for the current fill.
    pub fn expected_fpr(&self) -> f64 {
        let k = f64::from(self.k);
        let exponent = -k * self.n_inserted as f64 / self.m as f64;
        (1.0 - exponent.exp()).powf(k)
    }
}

/// Builds a filter and inserts each element.
pub fn filter_of<'a>(
    m: usize,
    k: u32,
    elements: impl IntoIterator<Item = &'a str>,
) -> Result<BloomFilter, BloomError> {
    let mut f = BloomFilter::new(m, k)?;
    for e in elements {
        f.insert(e);
    }
    Ok(f)
}

// n_inserted is bookkeeping only: a filter decoded from a name compares
// equal to the filter it was encoded from.
impl PartialEq for BloomFilter {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.k == other.k && self.bits == other.bits
    }
}

impl Eq for BloomFilter {}

impl fmt::Debug for BloomFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ones: u32 = self.bits.iter().map(|b| b.count_ones()).sum();
        f.debug_struct("BloomFilter")
            .field("m", &self.m)
            .field("k", &self.k)
            .field("n_inserted", &self.n_inserted)
            .field("ones", &ones)
            .finish()
    }
}
