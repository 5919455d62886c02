//! Counter-based pseudo-random streams.
//!
//! Every random quantity in this crate is a pure function of
//! `(master seed, stream key, counter)`, so sampling order — in particular
//! parallel sampling order across state-action pairs — cannot change any
//! result. The generator is SplitMix64: the state at counter `k` is reachable
//! in O(1), which is what makes the counter-based addressing cheap.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One output of the SplitMix64 sequence seeded by `seed`, at position `k`.
#[inline]
pub fn splitmix64_at(seed: u64, k: u64) -> u64 {
    mix(seed.wrapping_add(k.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Derives a stream key from a master seed and an application tag. Distinct
/// tags give decorrelated streams (e.g. transition draws vs reward noise).
#[inline]
pub fn stream_key(master_seed: u64, tag: u64) -> u64 {
    mix(master_seed ^ mix(tag))
}

/// A keyed random stream with O(1) access to any counter position.
#[derive(Debug, Clone, Copy)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(master_seed: u64, tag: u64) -> Self {
        Stream {
            key: stream_key(master_seed, tag),
        }
    }

    /// Substream for an index pair, e.g. a state-action pair.
    pub fn substream(&self, i: u64, j: u64) -> Stream {
        Stream {
            key: mix(self.key ^ mix(i.wrapping_mul(0x9E37_79B9).wrapping_add(j).wrapping_add(1))),
        }
    }

    #[inline]
    pub fn u64_at(&self, k: u64) -> u64 {
        splitmix64_at(self.key, k)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn f64_at(&self, k: u64) -> f64 {
        (self.u64_at(k) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Draws an index from a categorical distribution given as a probability
    /// row (assumed to sum to 1 within solver tolerance).
    #[inline]
    pub fn categorical_at(&self, k: u64, probs: &[f64]) -> usize {
        let u = self.f64_at(k);
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

/// Sequential convenience cursor over a [`Stream`].
#[derive(Debug, Clone)]
pub struct Cursor {
    stream: Stream,
    pos: u64,
}

impl Cursor {
    pub fn new(stream: Stream) -> Self {
        Cursor { stream, pos: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.stream.u64_at(self.pos);
        self.pos += 1;
        v
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        let v = self.stream.f64_at(self.pos);
        self.pos += 1;
        v
    }

    /// Standard exponential via inverse CDF; used for Dirichlet(1) rows.
    #[inline]
    pub fn next_exp(&mut self) -> f64 {
        let u = self.next_f64();
        -(1.0 - u).ln()
    }

    pub fn next_usize(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }
}
