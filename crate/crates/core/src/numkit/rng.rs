use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent, reproducible random stream.
///
/// A stream is identified by `(seed, stream_id)`; ChaCha's stream counter
/// makes streams with different ids independent, so per-client streams never
/// depend on the order in which clients are scheduled.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    /// Stream addressed by a hierarchical path such as `[stage, round, client]`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        Self::new(seed, stream_key(path))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_key(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x5EED_F00D_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
