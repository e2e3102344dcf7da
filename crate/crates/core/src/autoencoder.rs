//! End-to-end training of the encoder/decoder pair under a compound loss,
//! codebook export, neural decoding and model persistence.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ebn0_to_sigma2, SimRng, SnrSpec};
use crate::codebook::{Codebook, Provenance};
use crate::error::{Error, Result};
use crate::nn::{self, Activation, AdamConfig, AdamState, DenseLayer, Matrix, MlpParams};
use crate::uep::{BitwiseLoss, ClassPartition, LossWeights, Objective};

/// Number of gradient accumulators a batch is split into. Fixed so the
/// floating-point reduction order never depends on the thread count.
const BATCH_CHUNKS: usize = 8;

/// Models at least this large compute batch chunks in parallel.
const PARALLEL_PARAMS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub partition: ClassPartition,
    pub n: usize,
    pub weights: LossWeights,
    #[serde(default)]
    pub bitwise_loss: BitwiseLoss,
    pub hidden_encoder: Vec<usize>,
    pub hidden_decoder: Vec<usize>,
    /// `+inf` trains on a noiseless channel.
    pub train_ebn0_db: f64,
    pub batch_size: usize,
    pub num_iterations: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainConfig {
    /// The `(16, 7)` setup with one 16-neuron hidden layer on each side,
    /// trained at 3 dB.
    pub fn sixteen_seven(partition: ClassPartition, weights: LossWeights, seed: u64) -> Self {
        Self {
            partition,
            n: 7,
            weights,
            bitwise_loss: BitwiseLoss::Literal,
            hidden_encoder: vec![16],
            hidden_decoder: vec![16],
            train_ebn0_db: 3.0,
            batch_size: 256,
            num_iterations: 20_000,
            adam: AdamConfig::default(),
            seed,
        }
    }

    pub fn messages(&self) -> usize {
        self.partition.num_messages()
    }

    pub fn message_bits(&self) -> Result<u32> {
        self.partition.message_bits()
    }

    pub fn snr(&self) -> Result<SnrSpec> {
        SnrSpec::for_code(self.train_ebn0_db, self.message_bits()?, self.n)
    }

    pub fn validate(&self) -> Result<()> {
        self.message_bits()?;
        if self.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self
            .hidden_encoder
            .iter()
            .chain(&self.hidden_decoder)
            .any(|&w| w == 0)
        {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        self.weights.validate_for(&self.partition)?;
        self.adam.validate()?;
        self.snr()?;
        Ok(())
    }

    pub fn objective(&self) -> Result<Objective> {
        Objective::new(self.partition.clone(), self.weights.clone(), self.bitwise_loss)
    }

    /// Short hex digest identifying this configuration.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{self:?}").as_bytes());
        hex_prefix(&h.finalize())
    }
}

pub(crate) fn hex_prefix(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Fresh parameters and optimizer state for `config`.
pub fn init_model(config: &TrainConfig, rng: &mut SimRng) -> Result<(MlpParams, AdamState)> {
    config.validate()?;
    let params = MlpParams::init(
        config.messages(),
        config.n,
        &config.hidden_encoder,
        &config.hidden_decoder,
        rng,
    )?;
    let state = AdamState::new(&params, config.adam)?;
    Ok((params, state))
}

/// Mean loss and mean gradient over a batch of `(message, noise)` samples.
///
/// `grads` is overwritten. The batch is split into a fixed number of chunks
/// whose partial sums are added in chunk order.
pub fn batch_gradient(
    params: &MlpParams,
    objective: &Objective,
    messages: &[usize],
    noise: &[f64],
    grads: &mut MlpParams,
) -> Result<f64> {
    let mut scratch: Vec<MlpParams> = Vec::new();
    batch_gradient_with(params, objective, messages, noise, grads, &mut scratch)
}

fn batch_gradient_with(
    params: &MlpParams,
    objective: &Objective,
    messages: &[usize],
    noise: &[f64],
    grads: &mut MlpParams,
    scratch: &mut Vec<MlpParams>,
) -> Result<f64> {
    let n = params.block_length();
    if noise.len() != messages.len() * n {
        return Err(Error::Dimension(format!(
            "{} noise values for {} samples of width {n}",
            noise.len(),
            messages.len()
        )));
    }
    let batch = messages.len();
    let chunk = batch.div_ceil(BATCH_CHUNKS).max(1);
    let chunks = batch.div_ceil(chunk);
    scratch.truncate(chunks);
    while scratch.len() < chunks {
        scratch.push(params.zeros_like());
    }
    let work = |(c, acc): (usize, &mut MlpParams)| -> Result<f64> {
        for t in acc.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        let mut loss = 0.0;
        let end = ((c + 1) * chunk).min(batch);
        for s in c * chunk..end {
            let m = messages[s];
            let trace = params.forward(m, &noise[s * n..(s + 1) * n])?;
            let labels = objective.labels(m)?;
            loss += nn::backward(params, &trace, objective, &labels, acc);
        }
        Ok(loss)
    };
    let losses: Vec<Result<f64>> = if params.num_params() >= PARALLEL_PARAMS {
        scratch.par_iter_mut().enumerate().map(work).collect()
    } else {
        scratch.iter_mut().enumerate().map(work).collect()
    };
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|x| *x = 0.0);
    }
    let mut total = 0.0;
    for (loss, acc) in losses.into_iter().zip(scratch.iter()) {
        total += loss?;
        grads.add_assign(acc);
    }
    let inv = 1.0 / batch as f64;
    grads.scale(inv);
    Ok(total * inv)
}

/// Trained parameters plus the per-iteration mean batch loss.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: MlpParams,
    pub loss_trace: Vec<f64>,
    pub digest: String,
}

/// Runs `num_iterations` Adam steps on freshly sampled batches.
///
/// Every sample gets a uniformly drawn message and fresh channel noise at the
/// training SNR.
pub fn train(config: &TrainConfig) -> Result<TrainedModel> {
    let mut init_rng = SimRng::derived(config.seed, "init", &[]);
    let (mut params, mut adam) = init_model(config, &mut init_rng)?;
    let objective = config.objective()?;
    let sigma = ebn0_to_sigma2(&config.snr()?)?.sqrt();
    let mut rng = SimRng::derived(config.seed, "batches", &[]);
    let m_count = config.messages();
    let n = config.n;

    let mut messages = vec![0usize; config.batch_size];
    let mut noise = vec![0.0; config.batch_size * n];
    let mut grads = params.zeros_like();
    let mut scratch = Vec::new();
    let mut trace = Vec::with_capacity(config.num_iterations);
    for iteration in 0..config.num_iterations {
        for (s, m) in messages.iter_mut().enumerate() {
            *m = rng.index(m_count);
            for v in &mut noise[s * n..(s + 1) * n] {
                *v = if sigma > 0.0 { sigma * rng.gaussian() } else { 0.0 };
            }
        }
        let loss = batch_gradient_with(&params, &objective, &messages, &noise, &mut grads, &mut scratch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration, loss });
        }
        nn::adam_step(&mut adam, &mut params, &grads);
        trace.push(loss);
    }
    if !params.all_finite() {
        return Err(Error::Diverged {
            iteration: config.num_iterations,
            loss: f64::NAN,
        });
    }
    Ok(TrainedModel {
        params,
        loss_trace: trace,
        digest: config.digest(),
    })
}

/// Encodes every message and collects the codewords.
pub fn export_codebook(params: &MlpParams, config: &TrainConfig) -> Result<Codebook> {
    params.validate()?;
    let m = config.messages();
    if params.messages() != m || params.block_length() != config.n {
        return Err(Error::Dimension(format!(
            "model is ({}, {}), config is ({m}, {})",
            params.messages(),
            params.block_length(),
            config.n
        )));
    }
    let mut data = Vec::with_capacity(m * config.n);
    for msg in 0..m {
        data.extend(params.encode(msg)?);
    }
    Codebook::new(
        Matrix::from_vec(m, config.n, data)?,
        config.partition.clone(),
        Provenance::TrainedAe,
        config.digest(),
    )
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Decoded message `argmax_i b_i` for channel output `y`.
pub fn nn_decode(params: &MlpParams, y: &[f64]) -> Result<usize> {
    Ok(argmax(&params.decoder_logits(y)?))
}

const MODEL_MAGIC: &[u8; 8] = b"UEPAEMDL";
const MODEL_VERSION: u32 = 1;

/// Stored model: parameters plus the partition and config digest they were
/// trained for.
///
/// Binary layout, all integers `u32` little-endian and all reals IEEE-754
/// `f64` little-endian:
///
/// ```text
/// "UEPAEMDL" version
/// len digest-bytes   len partition-descriptor-bytes
/// encoder-layer-count decoder-layer-count
/// per layer: activation(u8) outputs inputs weights[outputs*inputs] biases[outputs]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub digest: String,
    pub partition: ClassPartition,
    pub params: MlpParams,
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_bytes(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    put_u32(w, bytes.len())?;
    w.write_all(bytes)?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn get_string(r: &mut impl Read) -> Result<String> {
    let len = get_u32(r)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format {
        what: "model",
        detail: e.to_string(),
    })
}

impl SavedModel {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        put_bytes(&mut w, self.digest.as_bytes())?;
        put_bytes(&mut w, self.partition.descriptor().as_bytes())?;
        put_u32(&mut w, self.params.encoder.len())?;
        put_u32(&mut w, self.params.decoder.len())?;
        for layer in self.params.encoder.iter().chain(&self.params.decoder) {
            w.write_all(&[layer.activation.code()])?;
            put_u32(&mut w, layer.outputs())?;
            put_u32(&mut w, layer.inputs())?;
            for v in layer.weights.as_slice().iter().chain(&layer.biases) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |detail: String| Error::Format { what: "model", detail };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = get_u32(&mut r)?;
        if version != MODEL_VERSION as usize {
            return Err(bad(format!("unsupported version {version}")));
        }
        let digest = get_string(&mut r)?;
        let partition = ClassPartition::parse_descriptor(&get_string(&mut r)?)?;
        let enc = get_u32(&mut r)?;
        let dec = get_u32(&mut r)?;
        let mut layers = Vec::with_capacity(enc + dec);
        for _ in 0..enc + dec {
            let mut code = [0u8; 1];
            r.read_exact(&mut code)?;
            let activation = Activation::from_code(code[0])
                .ok_or_else(|| bad(format!("unknown activation {}", code[0])))?;
            let outputs = get_u32(&mut r)?;
            let inputs = get_u32(&mut r)?;
            let weights = Matrix::from_vec(outputs, inputs, get_f64s(&mut r, outputs * inputs)?)?;
            let biases = get_f64s(&mut r, outputs)?;
            layers.push(DenseLayer::new(weights, biases, activation)?);
        }
        let decoder = layers.split_off(enc);
        let params = MlpParams {
            encoder: layers,
            decoder,
        };
        params.validate()?;
        Ok(Self {
            digest,
            partition,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config(partition: ClassPartition, lambda: f64) -> TrainConfig {
        TrainConfig {
            num_iterations: 200,
            batch_size: 32,
            ..TrainConfig::sixteen_seven(partition, LossWeights::pair(lambda).unwrap(), 9)
        }
    }

    #[test]
    fn init_shapes_sixteen_seven() {
        let cfg = quick_config(ClassPartition::message_wise(&[8, 8]).unwrap(), 0.5);
        let (p, state) = init_model(&cfg, &mut SimRng::from_seed(1)).unwrap();
        let dims: Vec<_> = p.encoder.iter().chain(&p.decoder).map(|l| (l.inputs(), l.outputs())).collect();
        assert_eq!(dims, vec![(16, 16), (16, 7), (7, 16), (16, 16)]);
        assert_eq!(state.step_count, 0);
        let (q, _) = init_model(&cfg, &mut SimRng::from_seed(1)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn init_shapes_large_block() {
        // only shape bookkeeping; the weights themselves are not inspected
        let cfg = TrainConfig {
            n: 32,
            hidden_encoder: vec![500],
            hidden_decoder: vec![500],
            ..quick_config(ClassPartition::bit_wise(&[4, 10]).unwrap(), 0.7)
        };
        let (p, _) = init_model(&cfg, &mut SimRng::from_seed(2)).unwrap();
        let dims: Vec<_> = p.encoder.iter().chain(&p.decoder).map(|l| (l.inputs(), l.outputs())).collect();
        assert_eq!(dims, vec![(16384, 500), (500, 32), (32, 500), (500, 16384)]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = quick_config(ClassPartition::message_wise(&[8, 8]).unwrap(), 0.5);
        let mut rng = SimRng::from_seed(0);
        assert!(init_model(&TrainConfig { batch_size: 0, ..base.clone() }, &mut rng).is_err());
        assert!(init_model(&TrainConfig { hidden_encoder: vec![0], ..base.clone() }, &mut rng).is_err());
        let odd = TrainConfig {
            partition: ClassPartition::message_wise(&[5, 7]).unwrap(),
            ..base.clone()
        };
        assert!(init_model(&odd, &mut rng).is_err());
    }

    #[test]
    fn zero_weight_class_never_reaches_the_gradient() {
        let cfg = quick_config(ClassPartition::message_wise(&[8, 8]).unwrap(), 1.0);
        let (p, _) = init_model(&cfg, &mut SimRng::from_seed(3)).unwrap();
        let obj = cfg.objective().unwrap();
        let mut rng = SimRng::from_seed(4);
        let messages: Vec<usize> = (0..40).map(|_| 8 + rng.index(8)).collect();
        let noise: Vec<f64> = (0..40 * 7).map(|_| 0.5 * rng.gaussian()).collect();
        let mut g = p.zeros_like();
        let loss = batch_gradient(&p, &obj, &messages, &noise, &mut g).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0)));
        // class-1 samples do move the parameters
        let messages: Vec<usize> = messages.iter().map(|m| m - 8).collect();
        let loss = batch_gradient(&p, &obj, &messages, &noise, &mut g).unwrap();
        assert!(loss > 0.0);
        assert!(g.tensors().iter().any(|t| t.iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = quick_config(ClassPartition::bit_wise(&[2, 2]).unwrap(), 0.6);
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_trace, b.loss_trace);
        assert!(a.loss_trace.iter().all(|l| l.is_finite()));
        let cb = export_codebook(&a.params, &cfg).unwrap();
        assert_eq!(cb, export_codebook(&b.params, &cfg).unwrap());
        assert_eq!((cb.messages(), cb.block_length()), (16, 7));
        assert!(cb.max_energy_deviation() < 1e-6);
    }

    #[test]
    fn noiseless_training_separates_all_messages() {
        let cfg = TrainConfig {
            partition: ClassPartition::message_wise(&[2, 2]).unwrap(),
            n: 4,
            weights: LossWeights::pair(0.5).unwrap(),
            bitwise_loss: BitwiseLoss::Literal,
            hidden_encoder: vec![8],
            hidden_decoder: vec![8],
            train_ebn0_db: f64::INFINITY,
            batch_size: 64,
            num_iterations: 4000,
            adam: AdamConfig::default(),
            seed: 11,
        };
        let model = train(&cfg).unwrap();
        let final_loss = *model.loss_trace.last().unwrap();
        assert!(final_loss < 0.01, "final loss {final_loss}");
        let cb = export_codebook(&model.params, &cfg).unwrap();
        for m in 0..4 {
            assert_eq!(nn_decode(&model.params, cb.codeword(m)).unwrap(), m);
        }
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(argmax(&[0.1, 0.2, 0.9, 0.3, 0.2, 0.0]), 2);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4]), 1);
    }

    #[test]
    fn model_file_round_trips_exactly() {
        let cfg = quick_config(ClassPartition::progressive(&[1, 3]).unwrap(), 0.4);
        let (params, _) = init_model(&cfg, &mut SimRng::from_seed(5)).unwrap();
        let saved = SavedModel {
            digest: cfg.digest(),
            partition: cfg.partition.clone(),
            params,
        };
        let mut buf = Vec::new();
        saved.write_to(&mut buf).unwrap();
        let back = SavedModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, saved);
        let mut corrupted = buf.clone();
        corrupted[0] = b'X';
        assert!(SavedModel::read_from(corrupted.as_slice()).is_err());
        assert!(SavedModel::read_from(&buf[..buf.len() - 3]).is_err());
    }
}
