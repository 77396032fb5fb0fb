//! Deterministic, splittable pseudorandom streams.
//!
//! Every Monte Carlo path owns one [`Stream`], addressed by a [`StreamKey`]
//! `(seed, stream_id)`. Replaying a key reproduces the exact variate sequence,
//! and results merged across workers are deterministic folds ordered by
//! `stream_id`, so experiment output is independent of the worker count.
//!
//! The generator is xoshiro256** (64-bit shift/rotate core), seeded through
//! the SplitMix64 avalanche mixer applied to a stream-salted seed. Both have
//! published reference outputs in many languages, which is what the golden
//! fixture test relies on.
//!
//! Gaussians use the Box-Muller transform with both outputs consumed (the
//! second is cached and returned by the next call). Box-Muller is frozen
//! deliberately: rejection-based methods consume a data-dependent number of
//! uniforms and would break stream alignment across implementations.

/// Address of one reproducible variate stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    /// One per Monte Carlo path or worker.
    pub stream_id: u64,
}

impl StreamKey {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        StreamKey { seed, stream_id }
    }

    /// Instantiate the generator state for this key.
    pub fn stream(self) -> Stream {
        Stream::new(self)
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output (avalanche) function. Bijective on u64.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xoshiro256** generator state plus the cached Box-Muller spare.
#[derive(Debug, Clone)]
pub struct Stream {
    s: [u64; 4],
    spare_gaussian: Option<f64>,
}

impl Stream {
    /// Seed derivation: salt the seed with the mixed stream id, then draw the
    /// four state words from the SplitMix64 sequence started there. Distinct
    /// stream ids under one seed give distinct, decorrelated states.
    pub fn new(key: StreamKey) -> Self {
        let mut x = key.seed ^ mix64(key.stream_id.wrapping_add(GOLDEN_GAMMA));
        let mut s = [0u64; 4];
        for word in &mut s {
            x = x.wrapping_add(GOLDEN_GAMMA);
            *word = mix64(x);
        }
        // xoshiro's single forbidden state; unreachable in practice.
        if s == [0, 0, 0, 0] {
            s[0] = 1;
        }
        Stream {
            s,
            spare_gaussian: None,
        }
    }

    /// Raw 64-bit output of xoshiro256**.
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw strictly inside (0, 1).
    ///
    /// The top 53 bits are centered with +0.5 before scaling by 2^-53, so the
    /// result can never be exactly 0 or 1 and log/tan transforms are safe.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal draw via Box-Muller; both outputs of each transform
    /// are consumed (the sine branch is cached and returned next).
    ///
    /// The sine branch is evaluated as the signed Pythagorean complement
    /// sign(sin t)*sqrt(1 - cos^2 t), which is measurably cheaper than a
    /// second trig call in the simulation hot loops. Where |sin t| is tiny
    /// the complement loses relative precision, but its absolute error stays
    /// below ~1e-8, orders of magnitude under Monte Carlo resolution. This
    /// exact formulation is frozen: the golden fixture pins its outputs.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(g) = self.spare_gaussian.take() {
            return g;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let cos_theta = (2.0 * std::f64::consts::PI * u2).cos();
        let sin_abs = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
        // theta = 2*pi*u2 lies in (0, pi] exactly when u2 <= 0.5.
        let sin_theta = if u2 <= 0.5 { sin_abs } else { -sin_abs };
        self.spare_gaussian = Some(r * sin_theta);
        r * cos_theta
    }
}
