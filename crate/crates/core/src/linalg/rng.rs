//! Counter-based deterministic RNG.
//!
//! Output is a pure function of (seed, counter), so the same seed yields the
//! same sequence on every platform, and independent named streams can be
//! derived without consuming state from the parent.

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed: mix(seed.wrapping_add(GOLDEN)), counter: 0 }
    }

    /// Independent stream keyed by a label; does not advance this generator.
    pub fn derive(&self, label: u64) -> Rng {
        Rng { seed: mix(self.seed ^ mix(label.wrapping_mul(GOLDEN))), counter: 0 }
    }

    /// Independent stream keyed by a name (FNV-1a over the bytes).
    pub fn derive_named(&self, name: &str) -> Rng {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in name.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        self.derive(h)
    }

    pub fn next_u64(&mut self) -> u64 {
        let z = self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN));
        self.counter += 1;
        mix(z)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller (cosine branch only, for determinism).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Unbiased integer in [0, n) by rejection.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        loop {
            let v = self.next_u64();
            let r = v % n;
            if v - r <= u64::MAX - (n - 1) {
                return r;
            }
        }
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// Bernoulli draw.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}
