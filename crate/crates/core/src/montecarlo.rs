//! Per-class error-probability estimation, confidence intervals, sweeps over
//! the loss weight and SNR, and Pareto-frontier extraction.
//!
//! Trials are simulated in fixed blocks of [`BLOCK_TRIALS`]; block `b` draws
//! from the stream `(seed, "mc-block", b)`. Blocks are computed in parallel
//! but merged strictly in index order, and the stopping rule is checked after
//! each merged block, so a profile never depends on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::autoencoder::{self, argmax, TrainConfig, TrainedModel};
use crate::channel::{derive_seed_u64, ebn0_to_sigma2, SimRng, SnrSpec};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::uep::{perclass_correct_into, ClassPartition, LossWeights};

pub const BLOCK_TRIALS: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub min_errors_per_class: u64,
    pub max_trials: u64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            min_errors_per_class: 100,
            max_trials: 100_000_000,
        }
    }
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        if self.min_errors_per_class == 0 {
            return Err(Error::Config("min_errors_per_class must be >= 1".into()));
        }
        if self.max_trials == 0 {
            return Err(Error::Config("max_trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Trial and error counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub trials: u64,
    pub errors: u64,
}

impl ClassCount {
    pub fn estimate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.errors as f64 / self.trials as f64
        }
    }

    pub fn wilson(&self) -> (f64, f64) {
        wilson_interval(self.errors, self.trials, 0.95)
    }
}

/// Per-class error estimates at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    pub classes: Vec<ClassCount>,
    pub total_trials: u64,
    /// Trials with `m_hat != m`.
    pub message_errors: u64,
    /// The trial budget ran out before every class reached the error target.
    pub ci_limited: bool,
    pub ebn0_db: f64,
    pub sigma2: f64,
    /// `M_i / M` for message-wise partitions, empty otherwise.
    pub class_fractions: Vec<f64>,
}

impl ErrorProfile {
    pub fn from_counts(classes: Vec<ClassCount>, partition: &ClassPartition) -> Self {
        let total_trials = match partition {
            ClassPartition::MessageWise(_) => classes.iter().map(|c| c.trials).sum(),
            _ => classes.first().map_or(0, |c| c.trials),
        };
        Self {
            classes,
            total_trials,
            message_errors: 0,
            ci_limited: false,
            ebn0_db: f64::NAN,
            sigma2: f64::NAN,
            class_fractions: class_fractions(partition),
        }
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.classes.iter().map(ClassCount::estimate).collect()
    }

    pub fn estimate(&self, class: usize) -> f64 {
        self.classes[class].estimate()
    }

    pub fn interval(&self, class: usize) -> (f64, f64) {
        self.classes[class].wilson()
    }
}

fn class_fractions(partition: &ClassPartition) -> Vec<f64> {
    match partition {
        ClassPartition::MessageWise(c) => {
            let m = partition.num_messages() as f64;
            c.sizes().iter().map(|&s| s as f64 / m).collect()
        }
        _ => Vec::new(),
    }
}

/// Maps a channel output to a message index.
pub trait Decode: Sync {
    fn decode(&self, y: &[f64]) -> usize;
}

/// Exhaustive minimum-Euclidean-distance decoder.
#[derive(Debug, Clone, Copy)]
pub struct MlDecoder<'a>(pub &'a Codebook);

impl Decode for MlDecoder<'_> {
    fn decode(&self, y: &[f64]) -> usize {
        crate::baselines::ml_decode(self.0, y)
    }
}

/// Argmax of the trained decoder network.
#[derive(Debug, Clone, Copy)]
pub struct NnDecoder<'a>(pub &'a MlpParams);

impl Decode for NnDecoder<'_> {
    fn decode(&self, y: &[f64]) -> usize {
        let logits = self.0.decoder_logits(y).expect("decoder width checked before simulation");
        argmax(&logits)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    #[default]
    Nn,
    Ml,
}

#[derive(Debug, Clone)]
struct BlockTally {
    classes: Vec<ClassCount>,
    trials: u64,
    message_errors: u64,
}

fn run_block(
    codebook: &Codebook,
    decoder: &dyn Decode,
    partition: &ClassPartition,
    sigma: f64,
    seed: u64,
    block: u64,
    trials: u64,
) -> BlockTally {
    let mut rng = SimRng::derived(seed, "mc-block", &[block]);
    let m_count = codebook.messages();
    let mut tally = BlockTally {
        classes: vec![ClassCount::default(); partition.num_classes()],
        trials,
        message_errors: 0,
    };
    let mut y = vec![0.0; codebook.block_length()];
    let mut outcome = vec![None; partition.num_classes()];
    for _ in 0..trials {
        let m = rng.index(m_count);
        for (v, &x) in y.iter_mut().zip(codebook.codeword(m)) {
            *v = x + sigma * rng.gaussian();
        }
        let m_hat = decoder.decode(&y);
        if m_hat != m {
            tally.message_errors += 1;
        }
        perclass_correct_into(m, m_hat, partition, &mut outcome);
        for (count, o) in tally.classes.iter_mut().zip(&outcome) {
            if let Some(ok) = o {
                count.trials += 1;
                count.errors += u64::from(!ok);
            }
        }
    }
    tally
}

/// Monte Carlo estimate of the per-class error probabilities of `codebook`
/// decoded by `decoder` over AWGN at `snr`.
///
/// Messages are drawn uniformly. Stops once every class has at least
/// `min_errors_per_class` errors, or at `max_trials` (flagged
/// `ci_limited`).
pub fn estimate_profile(
    codebook: &Codebook,
    decoder: &dyn Decode,
    partition: &ClassPartition,
    snr: &SnrSpec,
    stop: &StoppingRule,
    seed: u64,
) -> Result<ErrorProfile> {
    stop.validate()?;
    if partition.num_messages() != codebook.messages() {
        return Err(Error::Dimension(format!(
            "partition has {} messages, codebook {}",
            partition.num_messages(),
            codebook.messages()
        )));
    }
    let sigma2 = ebn0_to_sigma2(snr)?;
    let sigma = sigma2.sqrt();
    let mut profile = ErrorProfile {
        classes: vec![ClassCount::default(); partition.num_classes()],
        total_trials: 0,
        message_errors: 0,
        ci_limited: false,
        ebn0_db: snr.ebn0_db,
        sigma2,
        class_fractions: class_fractions(partition),
    };
    let done = |p: &ErrorProfile| p.classes.iter().all(|c| c.errors >= stop.min_errors_per_class);
    let round = (rayon::current_num_threads() as u64 * 2).max(1);
    let mut next_block = 0u64;
    'outer: while profile.total_trials < stop.max_trials {
        let remaining_blocks = (stop.max_trials - profile.total_trials).div_ceil(BLOCK_TRIALS);
        let blocks: Vec<u64> = (next_block..next_block + round.min(remaining_blocks)).collect();
        let tallies: Vec<BlockTally> = blocks
            .par_iter()
            .map(|&b| {
                let start = b * BLOCK_TRIALS;
                let trials = BLOCK_TRIALS.min(stop.max_trials - start);
                run_block(codebook, decoder, partition, sigma, seed, b, trials)
            })
            .collect();
        next_block += blocks.len() as u64;
        for t in tallies {
            profile.total_trials += t.trials;
            profile.message_errors += t.message_errors;
            for (acc, c) in profile.classes.iter_mut().zip(&t.classes) {
                acc.trials += c.trials;
                acc.errors += c.errors;
            }
            if done(&profile) {
                break 'outer;
            }
        }
    }
    profile.ci_limited = !done(&profile);
    Ok(profile)
}

/// Average message error probability: the class-size-weighted mean of the
/// per-class estimates for message-wise profiles, the overall message error
/// rate otherwise.
pub fn average_error(profile: &ErrorProfile) -> f64 {
    if !profile.class_fractions.is_empty() {
        return profile
            .classes
            .iter()
            .zip(&profile.class_fractions)
            .map(|(c, w)| w * c.estimate())
            .sum();
    }
    if profile.total_trials == 0 {
        0.0
    } else {
        profile.message_errors as f64 / profile.total_trials as f64
    }
}

/// Two-sided Wilson score interval for a binomial proportion.
pub fn wilson_interval(errors: u64, trials: u64, confidence: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2n = z * z / n;
    let center = (p + z2n / 2.0) / (1.0 + z2n);
    let half = z / (1.0 + z2n) * (p * (1.0 - p) / n + z2n / (4.0 * n)).sqrt();
    let lo = if errors == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if errors == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// `a` dominates `b` when it is no worse in every coordinate and strictly
/// better in at least one.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Indices of the non-dominated points, in input order. Duplicates are all
/// kept.
pub fn pareto_indices<P: AsRef<[f64]>>(points: &[P]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points
                .iter()
                .any(|q| dominates(q.as_ref(), points[i].as_ref()))
        })
        .collect()
}

pub fn pareto_frontier<P: AsRef<[f64]> + Clone>(points: &[P]) -> Vec<P> {
    pareto_indices(points)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}

/// Grid of loss weights and evaluation SNRs for an autoencoder experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// `lambda_1 = lambda`, `lambda_2 = 1 - lambda` (two classes).
    pub lambdas: Vec<f64>,
    pub snrs_db: Vec<f64>,
    pub stop: StoppingRule,
    pub decoder: DecoderKind,
}

/// One trained model and its profiles at every evaluation SNR.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub grid_index: usize,
    pub lambda: f64,
    pub train_seed: u64,
    pub eval_seeds: Vec<u64>,
    pub model: TrainedModel,
    pub codebook: Codebook,
    pub profiles: Vec<ErrorProfile>,
}

/// Evaluates one model on every SNR of the grid.
pub fn evaluate_model(
    model: &MlpParams,
    codebook: &Codebook,
    partition: &ClassPartition,
    snrs_db: &[f64],
    stop: &StoppingRule,
    decoder: DecoderKind,
    seeds: &[u64],
) -> Result<Vec<ErrorProfile>> {
    let k = partition.message_bits()?;
    if model.block_length() != codebook.block_length() {
        return Err(Error::Dimension("model and codebook widths differ".into()));
    }
    let nn = NnDecoder(model);
    let ml = MlDecoder(codebook);
    let dec: &dyn Decode = match decoder {
        DecoderKind::Nn => &nn,
        DecoderKind::Ml => &ml,
    };
    snrs_db
        .iter()
        .zip(seeds)
        .map(|(&db, &seed)| {
            let snr = SnrSpec::for_code(db, k, codebook.block_length())?;
            estimate_profile(codebook, dec, partition, &snr, stop, seed)
        })
        .collect()
}

/// Trains one model per `lambda` and evaluates it at every SNR.
///
/// All grid points share the training stream `(master, "train")` and the
/// per-SNR evaluation streams `(master, "eval", j)`, so differences along the
/// grid reflect the weights rather than sampling noise. Points run in
/// parallel; the output is ordered by grid index.
pub fn sweep(base: &TrainConfig, spec: &SweepSpec, master_seed: u64) -> Result<Vec<SweepPoint>> {
    if spec.lambdas.is_empty() || spec.snrs_db.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    if base.partition.num_classes() != 2 {
        return Err(Error::Config("lambda sweeps need exactly two classes".into()));
    }
    let train_seed = derive_seed_u64(master_seed, "train", &[]);
    let eval_seeds: Vec<u64> = (0..spec.snrs_db.len() as u64)
        .map(|j| derive_seed_u64(master_seed, "eval", &[j]))
        .collect();
    spec.lambdas
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let config = TrainConfig {
                weights: LossWeights::pair(lambda)?,
                seed: train_seed,
                ..base.clone()
            };
            let model = autoencoder::train(&config)?;
            let codebook = autoencoder::export_codebook(&model.params, &config)?;
            let profiles = evaluate_model(
                &model.params,
                &codebook,
                &config.partition,
                &spec.snrs_db,
                &spec.stop,
                spec.decoder,
                &eval_seeds,
            )?;
            Ok(SweepPoint {
                grid_index: i,
                lambda,
                train_seed,
                eval_seeds: eval_seeds.clone(),
                model,
                codebook,
                profiles,
            })
        })
        .collect()
}
