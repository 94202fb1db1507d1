//! Reproducible random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed
//! by a 64-bit master seed and addressed by a path of integers (experiment
//! tag, grid index, replica, ...). ChaCha is counter based, so streams are
//! independent of the order in which workers request them and results do
//! not depend on the worker count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = mix64(master ^ 0x7466_7267_2d72_6e67);
    for (depth, &p) in path.iter().enumerate() {
        h = mix64(h ^ mix64(p.wrapping_add((depth as u64 + 1) << 56)));
    }
    h
}

/// ChaCha8 generator for the stream addressed by `(master, path)`.
pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    let child = derive_seed(master, path);
    let mut key = [0u8; 32];
    let mut s = child;
    for chunk in key.chunks_exact_mut(8) {
        s = mix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(child);
    rng
}

/// Draws uniform directions in `[0, 2d)` for lattice walks.
///
/// Direction `k` moves along axis `k >> 1`, in the positive sense when
/// `k & 1 == 0`. Each 64-bit word is split into two 32-bit halves and
/// mapped with Lemire's multiply-shift rejection method, so draws are
/// exactly uniform.
pub struct StepSource<R: RngCore> {
    rng: R,
    spare: Option<u32>,
}

impl<R: RngCore> StepSource<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    #[inline]
    fn next_u32(&mut self) -> u32 {
        match self.spare.take() {
            Some(x) => x,
            None => {
                let w = self.rng.next_u64();
                self.spare = Some((w >> 32) as u32);
                w as u32
            }
        }
    }

    /// Uniform integer in `[0, n)`, `n >= 1`.
    #[inline]
    pub fn below(&mut self, n: u32) -> u32 {
        debug_assert!(n > 0);
        loop {
            let m = self.next_u32() as u64 * n as u64;
            let lo = m as u32;
            if lo >= n || lo >= n.wrapping_neg() % n {
                return (m >> 32) as u32;
            }
        }
    }

    /// Uniform direction index for a walk in dimension `d`.
    #[inline]
    pub fn direction(&mut self, d: usize) -> usize {
        self.below(2 * d as u32) as usize
    }

    pub fn rng_mut(&mut self) -> &mut R {
        &mut self.rng
    }

    pub fn into_inner(self) -> R {
        self.rng
    }
}

/// Uniform `f64` in `[0, 1)` with 53 random bits.
#[inline]
pub fn unit_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Walker alias table for sampling from a fixed discrete distribution.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// Builds the table from non-negative weights with positive sum.
    pub fn new(weights: &[f64]) -> Option<Self> {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        if n == 0 || !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return None;
        }
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![0.0; n];
        let mut alias = vec![0u32; n];
        let mut small: Vec<usize> = Vec::new();
        let mut large: Vec<usize> = Vec::new();
        for (i, &p) in scaled.iter().enumerate() {
            if p < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while !small.is_empty() && !large.is_empty() {
            let s = small.pop().expect("nonempty");
            let l = *large.last().expect("nonempty");
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        for i in large.into_iter().chain(small) {
            prob[i] = 1.0;
            alias[i] = i as u32;
        }
        Some(Self { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn sample<R: RngCore>(&self, rng: &mut R) -> usize {
        let n = self.prob.len() as u64;
        let w = rng.next_u64();
        let i = ((w as u128 * n as u128) >> 64) as usize;
        if unit_f64(rng) < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }
}
