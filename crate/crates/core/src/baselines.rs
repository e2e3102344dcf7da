//! Random coset codes, superpositions of random Gaussian codes, and
//! exhaustive maximum-likelihood decoding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{derive_seed_u64, SimRng, SnrSpec};
use crate::codebook::{Codebook, Provenance};
use crate::error::{Error, Result};
use crate::montecarlo::{estimate_profile, ErrorProfile, MlDecoder, StoppingRule};
use crate::nn::Matrix;
use crate::uep::{BitSplit, ClassPartition};

/// Rows whose squared norm falls below this are redrawn.
const DEGENERATE_ENERGY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CosetSpec {
    /// `k_i` per class; class `i` holds `2^{k_i}` messages.
    pub class_bits: Vec<u32>,
    pub n: usize,
}

impl CosetSpec {
    pub fn partition(&self) -> Result<ClassPartition> {
        self.validate()?;
        let sizes: Vec<usize> = self.class_bits.iter().map(|&k| 1usize << k).collect();
        ClassPartition::message_wise(&sizes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_bits.is_empty() || self.n == 0 {
            return Err(Error::Config("coset spec needs classes and n >= 1".into()));
        }
        if self.class_bits.iter().any(|&k| k > 20) {
            return Err(Error::Config("coset class dimension above 20".into()));
        }
        Ok(())
    }
}

/// Generators `G_i` (`k_i x n`, entries 0/1) and shifts `v_i` of each class.
#[derive(Debug, Clone, PartialEq)]
pub struct CosetCode {
    pub generators: Vec<Vec<Vec<u8>>>,
    pub shifts: Vec<Vec<u8>>,
    pub codebook: Codebook,
}

fn bpsk(bit: u8) -> f64 {
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `s G + v (mod 2)` for the class-local message `s` (big-endian bits).
pub fn coset_word(s: usize, generator: &[Vec<u8>], shift: &[u8]) -> Vec<u8> {
    let k = generator.len();
    let mut word = shift.to_vec();
    for (r, row) in generator.iter().enumerate() {
        if (s >> (k - 1 - r)) & 1 == 1 {
            for (w, g) in word.iter_mut().zip(row) {
                *w ^= g;
            }
        }
    }
    word
}

/// Union of random cosets, one per class, BPSK-modulated (0 -> +1, 1 -> -1).
///
/// Messages are numbered class by class; within class `i` the local index
/// runs over `0..2^{k_i}`.
pub fn gen_coset_code(spec: &CosetSpec, rng: &mut SimRng) -> Result<CosetCode> {
    let partition = spec.partition()?;
    let mut generators = Vec::with_capacity(spec.class_bits.len());
    let mut shifts = Vec::with_capacity(spec.class_bits.len());
    let mut data = Vec::with_capacity(partition.num_messages() * spec.n);
    for &k in &spec.class_bits {
        let g: Vec<Vec<u8>> = (0..k)
            .map(|_| (0..spec.n).map(|_| rng.bit()).collect())
            .collect();
        let v: Vec<u8> = (0..spec.n).map(|_| rng.bit()).collect();
        for s in 0..1usize << k {
            data.extend(coset_word(s, &g, &v).into_iter().map(bpsk));
        }
        generators.push(g);
        shifts.push(v);
    }
    let codewords = Matrix::from_vec(partition.num_messages(), spec.n, data)?;
    let codebook = Codebook::new(codewords, partition, Provenance::Coset, "")?;
    Ok(CosetCode {
        generators,
        shifts,
        codebook,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Every row scaled to `|x|^2 = n`.
    #[default]
    PerCodeword,
    /// One common factor so that the mean row energy is `n`.
    CodebookAverage,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::PerCodeword => "per_codeword",
            Normalization::CodebookAverage => "codebook_average",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionSpec {
    /// Bits carried by the cloud center (class 1).
    pub k1: u32,
    /// Bits carried by the offset (class 2).
    pub k2: u32,
    pub n: usize,
    /// Center variance; offsets get `1 - mu`.
    pub mu: f64,
    pub normalization: Normalization,
}

impl SuperpositionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::Config(format!("mu must lie in (0, 1), got {}", self.mu)));
        }
        if self.k1 == 0 || self.k2 == 0 || self.n == 0 {
            return Err(Error::Config("superposition spec needs k1, k2, n >= 1".into()));
        }
        if self.k1 + self.k2 > 20 {
            return Err(Error::Config("superposition code above 2^20 messages".into()));
        }
        Ok(())
    }

    /// Bit-wise partition with `s_1` in the most significant `k1` bits.
    pub fn partition(&self) -> Result<ClassPartition> {
        ClassPartition::bit_wise(&[self.k1, self.k2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpositionCode {
    pub centers: Matrix,
    pub offsets: Matrix,
    pub codebook: Codebook,
}

fn gaussian_row(n: usize, std: f64, rng: &mut SimRng) -> Vec<f64> {
    (0..n).map(|_| std * rng.gaussian()).collect()
}

/// `codeword(m) = center(s_1(m)) + offset(s_2(m))`, then normalized.
pub fn gen_superposition_code(spec: &SuperpositionSpec, rng: &mut SimRng) -> Result<SuperpositionCode> {
    spec.validate()?;
    let partition = spec.partition()?;
    let split = BitSplit::new(&[spec.k1, spec.k2])?;
    let (nc, no) = (1usize << spec.k1, 1usize << spec.k2);
    let draw = |count: usize, std: f64, rng: &mut SimRng| -> Vec<Vec<f64>> {
        (0..count).map(|_| gaussian_row(spec.n, std, rng)).collect()
    };
    let mut centers = draw(nc, spec.mu.sqrt(), rng);
    let mut offsets = draw(no, (1.0 - spec.mu).sqrt(), rng);
    let m_count = nc * no;
    let mut rows = vec![Vec::new(); m_count];
    let mut m = 0;
    while m < m_count {
        let (c, o) = (split.submessage(m, 0), split.submessage(m, 1));
        let row: Vec<f64> = centers[c].iter().zip(&offsets[o]).map(|(a, b)| a + b).collect();
        if row.iter().map(|v| v * v).sum::<f64>() < DEGENERATE_ENERGY {
            centers[c] = gaussian_row(spec.n, spec.mu.sqrt(), rng);
            offsets[o] = gaussian_row(spec.n, (1.0 - spec.mu).sqrt(), rng);
            m = 0;
            continue;
        }
        rows[m] = row;
        m += 1;
    }
    let n = spec.n as f64;
    match spec.normalization {
        Normalization::PerCodeword => {
            for row in &mut rows {
                let scale = (n / row.iter().map(|v| v * v).sum::<f64>()).sqrt();
                row.iter_mut().for_each(|v| *v *= scale);
            }
        }
        Normalization::CodebookAverage => {
            let mean: f64 = rows.iter().flatten().map(|v| v * v).sum::<f64>() / m_count as f64;
            let scale = (n / mean).sqrt();
            rows.iter_mut().flatten().for_each(|v| *v *= scale);
        }
    }
    let codebook = Codebook::new(Matrix::from_rows(&rows)?, partition, Provenance::Superposition, "")?;
    Ok(SuperpositionCode {
        centers: Matrix::from_rows(&centers)?,
        offsets: Matrix::from_rows(&offsets)?,
        codebook,
    })
}

/// Nearest codeword in Euclidean distance; ties go to the lowest index.
pub fn ml_decode(codebook: &Codebook, y: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (m, row) in codebook.codewords.iter_rows().enumerate() {
        let d: f64 = row.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = m;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CodeFamily {
    Coset(CosetSpec),
    Superposition(SuperpositionSpec),
}

impl CodeFamily {
    pub fn generate(&self, rng: &mut SimRng) -> Result<Codebook> {
        match self {
            CodeFamily::Coset(s) => Ok(gen_coset_code(s, rng)?.codebook),
            CodeFamily::Superposition(s) => Ok(gen_superposition_code(s, rng)?.codebook),
        }
    }
}

/// How sampled codes are scored.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub snr_db: f64,
    pub stop: StoppingRule,
    /// Scores the codes against this partition instead of their own.
    pub partition: Option<ClassPartition>,
}

#[derive(Debug, Clone)]
pub struct SampledCode {
    pub index: usize,
    pub codebook: Codebook,
    pub eval_seed: u64,
    pub profile: ErrorProfile,
}

/// Draws `count` codes from `family` and evaluates each with ML decoding.
///
/// Code `i` is generated from `(master, "code", i)` and simulated with seed
/// `(master, "code-eval", i)`; the output is ordered by `i`.
pub fn sample_random_codes(
    family: &CodeFamily,
    count: usize,
    eval: &EvalSpec,
    master_seed: u64,
) -> Result<Vec<SampledCode>> {
    if count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = SimRng::derived(master_seed, "code", &[i as u64]);
            let mut codebook = family.generate(&mut rng)?;
            let partition = eval.partition.clone().unwrap_or_else(|| codebook.partition.clone());
            if partition.num_messages() != codebook.messages() {
                return Err(Error::Dimension("evaluation partition does not fit the code".into()));
            }
            codebook.partition = partition.clone();
            let k = partition.message_bits().or_else(|_| {
                let m = codebook.messages();
                Ok::<u32, Error>(m.next_power_of_two().trailing_zeros())
            })?;
            let snr = SnrSpec::for_code(eval.snr_db, k, codebook.block_length())?;
            let eval_seed = derive_seed_u64(master_seed, "code-eval", &[i as u64]);
            let profile = estimate_profile(&codebook, &MlDecoder(&codebook), &partition, &snr, &eval.stop, eval_seed)?;
            Ok(SampledCode {
                index: i,
                codebook,
                eval_seed,
                profile,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent GF(2) evaluator: `bits . G + v` by explicit sums.
    fn gf2_word(bits: &[u8], g: &[Vec<u8>], v: &[u8]) -> Vec<u8> {
        (0..v.len())
            .map(|c| {
                let mut acc = u32::from(v[c]);
                for (r, b) in bits.iter().enumerate() {
                    acc += u32::from(b * g[r][c]);
                }
                (acc % 2) as u8
            })
            .collect()
    }

    #[test]
    fn coset_rows_match_gf2_evaluator() {
        for (seed, bits) in [(1u64, vec![2u32, 2]), (2, vec![3, 3]), (3, vec![4, 1, 2]), (4, vec![4, 4])] {
            let spec = CosetSpec { class_bits: bits.clone(), n: 7 };
            let code = gen_coset_code(&spec, &mut SimRng::from_seed(seed)).unwrap();
            let mut m = 0;
            for (i, &k) in bits.iter().enumerate() {
                for s in 0..1usize << k {
                    let b = crate::uep::message_to_bits(s, k).unwrap();
                    let want: Vec<f64> = gf2_word(&b, &code.generators[i], &code.shifts[i])
                        .into_iter()
                        .map(|x| if x == 0 { 1.0 } else { -1.0 })
                        .collect();
                    assert_eq!(code.codebook.codeword(m), want.as_slice());
                    m += 1;
                }
                // zero message is the shifted word
                let first = m - (1 << k);
                let v: Vec<f64> = code.shifts[i].iter().map(|&x| bpsk(x)).collect();
                assert_eq!(code.codebook.codeword(first), v.as_slice());
            }
            assert_eq!(m, code.codebook.messages());
        }
    }

    #[test]
    fn coset_linearity_within_class() {
        let spec = CosetSpec { class_bits: vec![3, 3], n: 7 };
        let code = gen_coset_code(&spec, &mut SimRng::from_seed(9)).unwrap();
        let g = &code.generators[0];
        let zero = vec![0u8; 7];
        for s in 0..8usize {
            for t in 0..8usize {
                let lhs = coset_word(s ^ t, g, &code.shifts[0]);
                let sum: Vec<u8> = coset_word(s, g, &zero)
                    .iter()
                    .zip(coset_word(t, g, &zero))
                    .zip(&code.shifts[0])
                    .map(|((a, b), v)| a ^ b ^ v)
                    .collect();
                assert_eq!(lhs, sum);
            }
        }
    }

    #[test]
    fn coset_shape_and_energy() {
        let spec = CosetSpec { class_bits: vec![3, 3], n: 7 };
        let code = gen_coset_code(&spec, &mut SimRng::from_seed(0)).unwrap();
        assert_eq!(code.codebook.messages(), 16);
        assert_eq!(code.codebook.partition.num_classes(), 2);
        assert!(code.codebook.codewords.as_slice().iter().all(|&v| v == 1.0 || v == -1.0));
        assert_eq!(code.codebook.max_energy_deviation(), 0.0);
        let small = gen_coset_code(&CosetSpec { class_bits: vec![2, 2], n: 7 }, &mut SimRng::from_seed(0)).unwrap();
        assert_eq!(small.codebook.messages(), 8);
    }

    #[test]
    fn ml_decode_examples() {
        let cb = Codebook::new(
            Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap(),
            ClassPartition::single(2).unwrap(),
            Provenance::Coset,
            "",
        )
        .unwrap();
        // squared distances 1.22 vs 4.42
        assert_eq!(ml_decode(&cb, &[0.9, -0.1]), 0);
        assert_eq!(ml_decode(&cb, &[-0.9, 0.1]), 1);
        let dup = Codebook::new(
            Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![-1.0]]).unwrap(),
            ClassPartition::single(3).unwrap(),
            Provenance::Coset,
            "",
        )
        .unwrap();
        assert_eq!(ml_decode(&dup, &[-1.0]), 1);
    }

    #[test]
    fn ml_decode_returns_a_matching_row_for_noiseless_input() {
        let code = gen_coset_code(&CosetSpec { class_bits: vec![2, 3], n: 5 }, &mut SimRng::from_seed(4)).unwrap();
        let cb = &code.codebook;
        for m in 0..cb.messages() {
            let d = ml_decode(cb, cb.codeword(m));
            assert_eq!(cb.codeword(d), cb.codeword(m));
            assert!(d <= m);
        }
    }

    #[test]
    fn superposition_shape_and_energy() {
        for mu in [0.3, 0.5, 0.7] {
            let spec = SuperpositionSpec { k1: 1, k2: 3, n: 7, mu, normalization: Normalization::PerCodeword };
            let code = gen_superposition_code(&spec, &mut SimRng::from_seed(2)).unwrap();
            assert_eq!(code.codebook.messages(), 16);
            assert_eq!(code.centers.rows(), 2);
            assert_eq!(code.offsets.rows(), 8);
            assert!(code.codebook.max_energy_deviation() <= 1e-9);
        }
    }

    #[test]
    fn superposition_structure_in_average_mode() {
        let spec = SuperpositionSpec { k1: 2, k2: 2, n: 6, mu: 0.4, normalization: Normalization::CodebookAverage };
        let code = gen_superposition_code(&spec, &mut SimRng::from_seed(5)).unwrap();
        let cb = &code.codebook;
        let mean: f64 = cb.energies().iter().sum::<f64>() / 16.0;
        assert_relative_eq!(mean, 6.0, epsilon = 1e-9);
        // recover the common scale from one row
        let scale = cb.codeword(0)[0] / (code.centers.get(0, 0) + code.offsets.get(0, 0));
        for m in 0..16 {
            for mp in 0..16 {
                if m >> 2 != mp >> 2 {
                    continue;
                }
                for c in 0..6 {
                    let diff = cb.codeword(m)[c] - cb.codeword(mp)[c];
                    let want = scale * (code.offsets.get(m & 3, c) - code.offsets.get(mp & 3, c));
                    assert_relative_eq!(diff, want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn superposition_rejects_bad_mu() {
        for mu in [0.0, 1.0, -0.2, f64::NAN] {
            let spec = SuperpositionSpec { k1: 1, k2: 1, n: 2, mu, normalization: Normalization::PerCodeword };
            assert!(gen_superposition_code(&spec, &mut SimRng::from_seed(0)).is_err());
        }
    }

    #[test]
    fn sampling_is_deterministic_and_ordered() {
        let family = CodeFamily::Coset(CosetSpec { class_bits: vec![2, 2], n: 5 });
        let eval = EvalSpec {
            snr_db: 3.0,
            stop: StoppingRule { min_errors_per_class: 20, max_trials: 50_000 },
            partition: None,
        };
        let a = sample_random_codes(&family, 6, &eval, 11).unwrap();
        let b = sample_random_codes(&family, 6, &eval, 11).unwrap();
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.index, y.index);
            assert_eq!(x.codebook, y.codebook);
            assert_eq!(x.profile, y.profile);
        }
        assert!(a.iter().enumerate().all(|(i, s)| s.index == i));
        assert_ne!(a[0].codebook, a[1].codebook);
    }

    #[test]
    fn sampling_with_partition_override() {
        let family = CodeFamily::Coset(CosetSpec { class_bits: vec![3, 3], n: 7 });
        let eval = EvalSpec {
            snr_db: 7.0,
            stop: StoppingRule { min_errors_per_class: 20, max_trials: 100_000 },
            partition: Some(ClassPartition::progressive(&[1, 3]).unwrap()),
        };
        let s = sample_random_codes(&family, 3, &eval, 1).unwrap();
        for c in &s {
            assert!(c.profile.classes[1].errors >= c.profile.classes[0].errors);
            assert_eq!(c.codebook.partition.kind(), crate::uep::PartitionKind::ProgressiveBitWise);
        }
    }
}
