//! AWGN channel simulation, SNR bookkeeping and seeded random streams.
//!
//! All randomness in the workbench comes from [`SimRng`], a ChaCha8 stream.
//! Gaussian samples use the Ziggurat sampler of `rand_distr::StandardNormal`.
//! Independent streams are derived from a master seed with
//! [`derive_seed`]: the first 32 bytes of
//! `SHA-256("uep-seed/v1" || master_le || tag || 0x00 || index_le...)`
//! become the ChaCha key, so a `(master, tag, indices)` triple always names
//! the same stream regardless of which thread consumes it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Energy-per-bit to noise ratio together with the code rate it applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSpec {
    pub ebn0_db: f64,
    /// Information bits per channel use, `k / n`.
    pub rate: f64,
}

impl SnrSpec {
    pub fn new(ebn0_db: f64, rate: f64) -> Result<Self> {
        let spec = Self { ebn0_db, rate };
        spec.validate()?;
        Ok(spec)
    }

    pub fn for_code(ebn0_db: f64, k: u32, n: usize) -> Result<Self> {
        Self::new(ebn0_db, k as f64 / n as f64)
    }

    fn validate(&self) -> Result<()> {
        if !self.rate.is_finite() || self.rate <= 0.0 {
            return Err(Error::Config(format!(
                "code rate must be positive, got {}",
                self.rate
            )));
        }
        if self.ebn0_db.is_nan() {
            return Err(Error::Config("Eb/N0 is NaN".into()));
        }
        Ok(())
    }

    pub fn sigma2(&self) -> Result<f64> {
        ebn0_to_sigma2(self)
    }
}

/// Per-dimension noise variance `1 / (2 R 10^(Eb/N0 / 10))` for unit-energy
/// symbols.
pub fn ebn0_to_sigma2(spec: &SnrSpec) -> Result<f64> {
    spec.validate()?;
    let ebn0 = 10f64.powf(spec.ebn0_db / 10.0);
    Ok(1.0 / (2.0 * spec.rate * ebn0))
}

/// Derives a 32-byte ChaCha seed for the stream `(master, tag, indices)`.
pub fn derive_seed(master: u64, tag: &str, indices: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"uep-seed/v1");
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update([0u8]);
    for index in indices {
        hasher.update(index.to_le_bytes());
    }
    hasher.finalize().into()
}

/// Folds a derived stream into a single `u64`, used for recording sub-seeds
/// in result files.
pub fn derive_seed_u64(master: u64, tag: &str, indices: &[u64]) -> u64 {
    let bytes = derive_seed(master, tag, indices);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

/// Seedable pseudorandom stream with uniform and Gaussian draws.
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn from_seed(seed: u64) -> Self {
        Self::derived(seed, "root", &[])
    }

    pub fn derived(master: u64, tag: &str, indices: &[u64]) -> Self {
        Self {
            inner: ChaCha8Rng::from_seed(derive_seed(master, tag, indices)),
        }
    }

    /// Standard normal sample.
    #[inline]
    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..bound`.
    #[inline]
    pub fn index(&mut self, bound: usize) -> usize {
        self.inner.random_range(0..bound)
    }

    /// Uniform real in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    #[inline]
    pub fn bit(&mut self) -> u8 {
        self.inner.random::<bool>() as u8
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::Config(format!(
            "noise variance must be finite and non-negative, got {sigma2}"
        )));
    }
    Ok(())
}

/// Returns `x + n` with `n` i.i.d. `N(0, sigma2)`.
pub fn awgn_transmit(x: &[f64], sigma2: f64, rng: &mut SimRng) -> Result<Vec<f64>> {
    let mut y = x.to_vec();
    add_awgn(&mut y, sigma2, rng)?;
    Ok(y)
}

/// In-place variant of [`awgn_transmit`].
pub fn add_awgn(y: &mut [f64], sigma2: f64, rng: &mut SimRng) -> Result<()> {
    check_sigma2(sigma2)?;
    if sigma2 == 0.0 {
        return Ok(());
    }
    let sigma = sigma2.sqrt();
    for v in y.iter_mut() {
        *v += sigma * rng.gaussian();
    }
    Ok(())
}
