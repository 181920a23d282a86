//! SplitMix64, the counter-based generator used for every random draw.
//!
//! The stream is fully specified so it can be reproduced in any language:
//!
//! * state advances by `0x9E3779B97F4A7C15` per draw and the output is the
//!   SplitMix64 finalizer of the new state;
//! * `next_f64` uses the 53 high bits: `(x >> 11) * 2^-53`, in `[0, 1)`;
//! * `below(n)` is the high word of the 128-bit product `x * n`;
//! * `shuffle` is Fisher–Yates from the last index down, swapping `i` with
//!   `below(i + 1)`;
//! * named sub-streams seed a fresh generator with
//!   `mix(seed ^ fnv1a64(name))`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seed of the sub-stream called `name` under `seed`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    mix(seed ^ fnv1a64(name.as_bytes()))
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn stream(seed: u64, name: &str) -> Self {
        Self::new(derive_seed(seed, name))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
