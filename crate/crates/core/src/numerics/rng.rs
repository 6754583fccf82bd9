//! Seeded, resumable random stream.
//!
//! Backed by ChaCha20, a counter-based generator: the integer stream is fixed
//! by `(seed, stream)` on every platform, and the position inside it is a
//! single counter, which is what makes snapshots exact.
//!
//! Splitting rule for independent streams: [`RngStream::derive`] keeps the
//! seed and selects ChaCha stream number `replicate * 16 + purpose`.
//!
//! Normal variates use the Marsaglia polar method on 53-bit uniforms; the
//! second variate of each accepted pair is cached and handed out next.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Purposes used with [`RngStream::derive`].
pub mod purpose {
    pub const DATA: u8 = 0;
    pub const ONLINE_MC: u8 = 1;
    pub const STREAMING_MC: u8 = 2;
    pub const NAIVE: u8 = 3;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RngState", into = "RngState")]
pub struct RngStream {
    seed: u64,
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            inner,
            spare_normal: None,
        }
    }

    pub fn derive(seed: u64, replicate: u64, purpose: u8) -> Self {
        assert!(purpose < 16, "purpose must fit in four bits");
        Self::with_stream(seed, replicate * 16 + purpose as u64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.inner.get_stream()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * factor);
                return u * factor;
            }
        }
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for z in out {
            *z = self.standard_normal();
        }
    }
}

/// Serialized form: everything needed to continue the stream bit for bit.
#[derive(Serialize, Deserialize)]
struct RngState {
    seed: u64,
    stream: u64,
    /// ChaCha word position, decimal, since it is a 128-bit counter.
    word_pos: String,
    spare_normal: Option<f64>,
}

impl From<RngStream> for RngState {
    fn from(r: RngStream) -> Self {
        Self {
            seed: r.seed,
            stream: r.inner.get_stream(),
            word_pos: r.inner.get_word_pos().to_string(),
            spare_normal: r.spare_normal,
        }
    }
}

impl TryFrom<RngState> for RngStream {
    type Error = Error;

    fn try_from(s: RngState) -> Result<Self> {
        let pos: u128 = s
            .word_pos
            .parse()
            .map_err(|_| Error::Snapshot(format!("bad RNG word position {:?}", s.word_pos)))?;
        let mut r = RngStream::with_stream(s.seed, s.stream);
        r.inner.set_word_pos(pos);
        r.spare_normal = s.spare_normal;
        Ok(r)
    }
}
