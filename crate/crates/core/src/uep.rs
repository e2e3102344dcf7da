//! Message classes, bit layouts, label sets and compound losses.
//!
//! Messages are 0-based indices `0..M`. A message's bit string is the
//! big-endian binary expansion of its index, and submessage 1 occupies the
//! most significant `k_1` bits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Natural-log clamp floor for probabilities inside cross-entropy terms.
pub const LOG_FLOOR: f64 = 1e-30;

/// Tolerance on `sum(lambda) == 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Smallest admissible weight for bit-wise classes.
pub const MIN_BITWISE_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    MessageWise,
    BitWise,
    ProgressiveBitWise,
}

impl PartitionKind {
    pub fn name(self) -> &'static str {
        match self {
            PartitionKind::MessageWise => "message_wise",
            PartitionKind::BitWise => "bit_wise",
            PartitionKind::ProgressiveBitWise => "progressive",
        }
    }
}

/// Disjoint, exhaustive assignment of messages to importance classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageClasses {
    class_of: Vec<usize>,
    sizes: Vec<usize>,
}

impl MessageClasses {
    pub fn new(class_of: Vec<usize>) -> Result<Self> {
        if class_of.is_empty() {
            return Err(Error::Config("message-wise partition is empty".into()));
        }
        let num_classes = class_of.iter().max().map_or(0, |&c| c + 1);
        let mut sizes = vec![0; num_classes];
        for &c in &class_of {
            sizes[c] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("message class {} is empty", empty + 1)));
        }
        Ok(Self { class_of, sizes })
    }

    /// Classes made of consecutive message indices with the given sizes.
    pub fn contiguous(sizes: &[usize]) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::Config("message class sizes must be >= 1".into()));
        }
        let class_of = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
            .collect();
        Self::new(class_of)
    }

    pub fn class_of(&self, m: usize) -> usize {
        self.class_of[m]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
}

/// Split of a `k`-bit message into consecutive submessages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitSplit {
    lengths: Vec<u32>,
    total: u32,
}

impl BitSplit {
    pub fn new(lengths: &[u32]) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::Config("bit-wise partition needs at least one class".into()));
        }
        if lengths.contains(&0) {
            return Err(Error::Config("submessage lengths must be >= 1".into()));
        }
        let total: u32 = lengths.iter().sum();
        if total > 30 {
            return Err(Error::Config(format!("k = {total} bits is too large")));
        }
        Ok(Self {
            lengths: lengths.to_vec(),
            total,
        })
    }

    pub fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    pub fn total_bits(&self) -> u32 {
        self.total
    }

    /// Number of message bits after the first `i + 1` submessages.
    fn tail_after(&self, i: usize) -> u32 {
        self.total - self.lengths[..=i].iter().sum::<u32>()
    }

    /// Value of submessage `j` (0-based) of message `m`.
    #[inline]
    pub fn submessage(&self, m: usize, j: usize) -> usize {
        let shift = self.tail_after(j);
        (m >> shift) & ((1usize << self.lengths[j]) - 1)
    }

    /// Value of the concatenated submessages `0..=i` of message `m`.
    #[inline]
    pub fn prefix(&self, m: usize, i: usize) -> usize {
        m >> self.tail_after(i)
    }
}

/// How the message set is divided into importance classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassPartition {
    MessageWise(MessageClasses),
    BitWise(BitSplit),
    ProgressiveBitWise(BitSplit),
}

impl ClassPartition {
    /// A single class holding all `m` messages (plain equal error protection).
    pub fn single(m: usize) -> Result<Self> {
        Ok(Self::MessageWise(MessageClasses::contiguous(&[m])?))
    }

    pub fn message_wise(sizes: &[usize]) -> Result<Self> {
        Ok(Self::MessageWise(MessageClasses::contiguous(sizes)?))
    }

    pub fn bit_wise(lengths: &[u32]) -> Result<Self> {
        Ok(Self::BitWise(BitSplit::new(lengths)?))
    }

    pub fn progressive(lengths: &[u32]) -> Result<Self> {
        Ok(Self::ProgressiveBitWise(BitSplit::new(lengths)?))
    }

    pub fn kind(&self) -> PartitionKind {
        match self {
            Self::MessageWise(_) => PartitionKind::MessageWise,
            Self::BitWise(_) => PartitionKind::BitWise,
            Self::ProgressiveBitWise(_) => PartitionKind::ProgressiveBitWise,
        }
    }

    pub fn num_messages(&self) -> usize {
        match self {
            Self::MessageWise(c) => c.class_of.len(),
            Self::BitWise(s) | Self::ProgressiveBitWise(s) => 1usize << s.total,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Self::MessageWise(c) => c.sizes.len(),
            Self::BitWise(s) | Self::ProgressiveBitWise(s) => s.lengths.len(),
        }
    }

    /// `log2(M)`; an error for message-wise partitions whose size is not a
    /// power of two.
    pub fn message_bits(&self) -> Result<u32> {
        let m = self.num_messages();
        if !m.is_power_of_two() {
            return Err(Error::Config(format!("M = {m} is not a power of two")));
        }
        Ok(m.trailing_zeros())
    }

    pub fn bit_split(&self) -> Option<&BitSplit> {
        match self {
            Self::BitWise(s) | Self::ProgressiveBitWise(s) => Some(s),
            Self::MessageWise(_) => None,
        }
    }

    fn check_message(&self, m: usize) -> Result<()> {
        let count = self.num_messages();
        if m >= count {
            return Err(Error::MessageOutOfRange { index: m, count });
        }
        Ok(())
    }

    /// Compact textual descriptor, e.g. `message_wise 8 8` or `bit_wise 2 2`.
    pub fn descriptor(&self) -> String {
        let sizes: Vec<String> = match self {
            Self::MessageWise(c) => {
                let contiguous = MessageClasses::contiguous(&c.sizes).ok();
                if contiguous.as_ref() == Some(c) {
                    c.sizes.iter().map(|s| s.to_string()).collect()
                } else {
                    let mut v = vec!["explicit".to_string()];
                    v.extend(c.class_of.iter().map(|x| x.to_string()));
                    v
                }
            }
            Self::BitWise(s) | Self::ProgressiveBitWise(s) => {
                s.lengths.iter().map(|k| k.to_string()).collect()
            }
        };
        format!("{} {}", self.kind().name(), sizes.join(" "))
    }

    pub fn parse_descriptor(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            what: "partition descriptor",
            detail,
        };
        let mut parts = text.split_whitespace();
        let kind = parts.next().ok_or_else(|| bad("empty".into()))?;
        let rest: Vec<&str> = parts.collect();
        let nums = |items: &[&str]| -> Result<Vec<usize>> {
            items
                .iter()
                .map(|t| t.parse::<usize>().map_err(|e| bad(format!("{t}: {e}"))))
                .collect()
        };
        match kind {
            "message_wise" if rest.first() == Some(&"explicit") => {
                Ok(Self::MessageWise(MessageClasses::new(nums(&rest[1..])?)?))
            }
            "message_wise" => Self::message_wise(&nums(&rest)?),
            "bit_wise" | "progressive" => {
                let lengths: Vec<u32> = nums(&rest)?.into_iter().map(|k| k as u32).collect();
                if kind == "bit_wise" {
                    Self::bit_wise(&lengths)
                } else {
                    Self::progressive(&lengths)
                }
            }
            other => Err(bad(format!("unknown partition kind {other:?}"))),
        }
    }
}

/// Big-endian bits of message index `m` (`0 <= m < 2^k`).
pub fn message_to_bits(m: usize, k: u32) -> Result<Vec<u8>> {
    let count = 1usize << k;
    if m >= count {
        return Err(Error::MessageOutOfRange { index: m, count });
    }
    Ok((0..k).rev().map(|b| ((m >> b) & 1) as u8).collect())
}

/// Training target for one message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelSet {
    OneHot { index: usize, width: usize },
    /// One support (sorted message indices) per class.
    MultiHot { width: usize, supports: Vec<Vec<usize>> },
}

impl LabelSet {
    pub fn width(&self) -> usize {
        match self {
            Self::OneHot { width, .. } | Self::MultiHot { width, .. } => *width,
        }
    }

    /// Dense 0/1 vectors, one per class (a single vector for one-hot).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let dense = |width: usize, support: &[usize]| {
            let mut v = vec![0.0; width];
            for &i in support {
                v[i] = 1.0;
            }
            v
        };
        match self {
            Self::OneHot { index, width } => vec![dense(*width, &[*index])],
            Self::MultiHot { width, supports } => {
                supports.iter().map(|s| dense(*width, s)).collect()
            }
        }
    }

    pub fn supports(&self) -> Vec<&[usize]> {
        match self {
            Self::OneHot { index, .. } => vec![std::slice::from_ref(index)],
            Self::MultiHot { supports, .. } => supports.iter().map(Vec::as_slice).collect(),
        }
    }
}

pub fn build_onehot(m: usize, width: usize) -> Result<LabelSet> {
    if m >= width {
        return Err(Error::MessageOutOfRange {
            index: m,
            count: width,
        });
    }
    Ok(LabelSet::OneHot { index: m, width })
}

/// For each class `j`, the messages whose `j`-th submessage equals that of `m`.
pub fn build_bitwise_labels(m: usize, partition: &ClassPartition) -> Result<LabelSet> {
    let ClassPartition::BitWise(split) = partition else {
        return Err(Error::PartitionKind {
            expected: PartitionKind::BitWise.name(),
            actual: partition.kind().name(),
        });
    };
    partition.check_message(m)?;
    let width = partition.num_messages();
    let supports = (0..split.lengths.len())
        .map(|j| {
            // free high bits, the fixed field, free low bits; ascending order
            let low = split.tail_after(j);
            let field = split.submessage(m, j) << low;
            let high_shift = low + split.lengths[j];
            let high_count = 1usize << (split.total - high_shift);
            let mut support = Vec::with_capacity(high_count << low);
            for hi in 0..high_count {
                let base = (hi << high_shift) | field;
                support.extend(base..base + (1usize << low));
            }
            support
        })
        .collect();
    Ok(LabelSet::MultiHot { width, supports })
}

/// For each class `i`, the messages consistent with submessages `1..=i` of `m`.
pub fn build_progressive_labels(m: usize, partition: &ClassPartition) -> Result<LabelSet> {
    let ClassPartition::ProgressiveBitWise(split) = partition else {
        return Err(Error::PartitionKind {
            expected: PartitionKind::ProgressiveBitWise.name(),
            actual: partition.kind().name(),
        });
    };
    partition.check_message(m)?;
    let width = partition.num_messages();
    let supports = (0..split.lengths.len())
        .map(|i| {
            let tail = split.tail_after(i);
            let start = split.prefix(m, i) << tail;
            (start..start + (1usize << tail)).collect()
        })
        .collect();
    Ok(LabelSet::MultiHot { width, supports })
}

/// Label set matching the partition kind: one-hot for message-wise, multi-hot
/// otherwise.
pub fn build_labels(m: usize, partition: &ClassPartition) -> Result<LabelSet> {
    match partition {
        ClassPartition::MessageWise(_) => build_onehot(m, partition.num_messages()),
        ClassPartition::BitWise(_) => build_bitwise_labels(m, partition),
        ClassPartition::ProgressiveBitWise(_) => build_progressive_labels(m, partition),
    }
}

/// Class weights `lambda`, non-negative and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights(Vec<f64>);

impl LossWeights {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Weights("weight vector is empty".into()));
        }
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Weights(format!("weights must be finite and >= 0: {lambdas:?}")));
        }
        let sum: f64 = lambdas.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Weights(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(lambdas))
    }

    /// `(lambda, 1 - lambda)`.
    pub fn pair(lambda: f64) -> Result<Self> {
        Self::new(vec![lambda, 1.0 - lambda])
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Checks the weights against the partition: one weight per class, and
    /// strictly positive weights for the bit-wise kinds.
    pub fn validate_for(&self, partition: &ClassPartition) -> Result<()> {
        if self.0.len() != partition.num_classes() {
            return Err(Error::Weights(format!(
                "{} weights for {} classes",
                self.0.len(),
                partition.num_classes()
            )));
        }
        if partition.kind() != PartitionKind::MessageWise
            && self.0.iter().any(|&l| l < MIN_BITWISE_WEIGHT)
        {
            return Err(Error::Weights(format!(
                "bit-wise weights must be > 0 (>= {MIN_BITWISE_WEIGHT}): {:?}",
                self.0
            )));
        }
        Ok(())
    }
}

/// Form of the per-class term used for multi-hot labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitwiseLoss {
    /// `-sum_{i in support} log b_i`, the cross-entropy against the multi-hot
    /// vector taken literally.
    #[default]
    Literal,
    /// `-log sum_{i in support} b_i`.
    ClassMass,
}

#[inline]
fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Message-wise compound loss `sum_j lambda_j * (-sum_{i in M_j} u_i log b_i)`.
pub fn loss_messagewise(
    u: &LabelSet,
    b: &[f64],
    weights: &LossWeights,
    partition: &ClassPartition,
) -> Result<f64> {
    let ClassPartition::MessageWise(classes) = partition else {
        return Err(Error::PartitionKind {
            expected: PartitionKind::MessageWise.name(),
            actual: partition.kind().name(),
        });
    };
    let LabelSet::OneHot { index, width } = *u else {
        return Err(Error::Config("message-wise loss needs a one-hot label".into()));
    };
    if width != b.len() || width != partition.num_messages() {
        return Err(Error::Dimension(format!(
            "label width {width}, output width {}, partition size {}",
            b.len(),
            partition.num_messages()
        )));
    }
    let lambdas = weights.as_slice();
    let mut total = 0.0;
    for (j, &lambda) in lambdas.iter().enumerate() {
        let class_term: f64 = (0..width)
            .filter(|&i| classes.class_of(i) == j)
            .map(|i| if i == index { -clamped_ln(b[i]) } else { 0.0 })
            .sum();
        total += lambda * class_term;
    }
    Ok(total)
}

/// Bit-wise (or progressive) compound loss over a multi-hot label set.
pub fn loss_bitwise(labels: &LabelSet, b: &[f64], weights: &LossWeights, form: BitwiseLoss) -> f64 {
    labels
        .supports()
        .iter()
        .zip(weights.as_slice())
        .map(|(support, &lambda)| {
            let term = match form {
                BitwiseLoss::Literal => support.iter().map(|&i| -clamped_ln(b[i])).sum::<f64>(),
                BitwiseLoss::ClassMass => -clamped_ln(support.iter().map(|&i| b[i]).sum()),
            };
            lambda * term
        })
        .sum()
}

/// Compound loss as a function of decoder logits.
///
/// Works in log-softmax space so that the loss and its logit gradient stay
/// exact for large logits.
#[derive(Debug, Clone)]
pub struct Objective {
    partition: ClassPartition,
    weights: LossWeights,
    form: BitwiseLoss,
}

impl Objective {
    pub fn new(partition: ClassPartition, weights: LossWeights, form: BitwiseLoss) -> Result<Self> {
        weights.validate_for(&partition)?;
        Ok(Self {
            partition,
            weights,
            form,
        })
    }

    /// Plain one-hot cross-entropy on `m` messages.
    pub fn standard(m: usize) -> Result<Self> {
        Self::new(ClassPartition::single(m)?, LossWeights::uniform(1), BitwiseLoss::Literal)
    }

    pub fn partition(&self) -> &ClassPartition {
        &self.partition
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn form(&self) -> BitwiseLoss {
        self.form
    }

    pub fn labels(&self, m: usize) -> Result<LabelSet> {
        build_labels(m, &self.partition)
    }

    /// Loss and its gradient with respect to `logits`, writing the gradient
    /// into `grad`.
    pub fn loss_and_grad(&self, labels: &LabelSet, logits: &[f64], grad: &mut [f64]) -> f64 {
        let width = logits.len();
        debug_assert_eq!(grad.len(), width);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (g, &z) in grad.iter_mut().zip(logits) {
            *g = (z - max).exp();
            sum += *g;
        }
        let lse = max + sum.ln();
        // grad now holds softmax probabilities b
        for g in grad.iter_mut() {
            *g /= sum;
        }
        let log_floor = LOG_FLOOR.ln();
        let log_b = |i: usize| logits[i] - lse;

        match (labels, &self.partition) {
            (LabelSet::OneHot { index, .. }, ClassPartition::MessageWise(classes)) => {
                let lambda = self.weights.as_slice()[classes.class_of(*index)];
                let lb = log_b(*index);
                if lb < log_floor {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    return -lambda * log_floor;
                }
                for g in grad.iter_mut() {
                    *g *= lambda;
                }
                grad[*index] -= lambda;
                -lambda * lb
            }
            (LabelSet::MultiHot { supports, .. }, _) => {
                let b = grad.to_vec();
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut loss = 0.0;
                for (support, &lambda) in supports.iter().zip(self.weights.as_slice()) {
                    if lambda == 0.0 {
                        continue;
                    }
                    match self.form {
                        BitwiseLoss::Literal => {
                            // d/dz of -sum_S log b_i = |S| b - 1_S over unclamped terms
                            let mut active = 0usize;
                            for &i in support {
                                let lb = log_b(i);
                                if lb < log_floor {
                                    loss -= lambda * log_floor;
                                    continue;
                                }
                                loss -= lambda * lb;
                                active += 1;
                                grad[i] -= lambda;
                            }
                            let scale = lambda * active as f64;
                            for (g, &bv) in grad.iter_mut().zip(&b) {
                                *g += scale * bv;
                            }
                        }
                        BitwiseLoss::ClassMass => {
                            let mass: f64 = support.iter().map(|&i| b[i]).sum();
                            if mass < LOG_FLOOR {
                                loss -= lambda * log_floor;
                                continue;
                            }
                            loss -= lambda * mass.ln();
                            for (g, &bv) in grad.iter_mut().zip(&b) {
                                *g += lambda * bv;
                            }
                            for &i in support {
                                grad[i] -= lambda * b[i] / mass;
                            }
                        }
                    }
                }
                loss
            }
            (LabelSet::OneHot { .. }, _) => {
                panic!("one-hot labels require a message-wise partition")
            }
        }
    }

    /// Loss only.
    pub fn loss(&self, labels: &LabelSet, logits: &[f64]) -> f64 {
        let mut scratch = vec![0.0; logits.len()];
        self.loss_and_grad(labels, logits, &mut scratch)
    }
}

/// Per-class decoding outcome of transmitting `m` and decoding `m_hat`.
///
/// `None` marks a class the trial does not belong to (message-wise only).
pub fn perclass_correct(m: usize, m_hat: usize, partition: &ClassPartition) -> Vec<Option<bool>> {
    let mut out = vec![None; partition.num_classes()];
    perclass_correct_into(m, m_hat, partition, &mut out);
    out
}

/// Allocation-free form of [`perclass_correct`]; `out` has one slot per class.
#[inline]
pub fn perclass_correct_into(m: usize, m_hat: usize, partition: &ClassPartition, out: &mut [Option<bool>]) {
    match partition {
        ClassPartition::MessageWise(classes) => {
            out.iter_mut().for_each(|o| *o = None);
            out[classes.class_of(m)] = Some(m == m_hat);
        }
        ClassPartition::BitWise(split) => {
            for (j, o) in out.iter_mut().enumerate() {
                *o = Some(split.submessage(m, j) == split.submessage(m_hat, j));
            }
        }
        ClassPartition::ProgressiveBitWise(split) => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = Some(split.prefix(m, i) == split.prefix(m_hat, i));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ones(v: &[f64]) -> Vec<usize> {
        v.iter()
            .enumerate()
            .filter(|(_, &x)| x == 1.0)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn bits_big_endian() {
        assert_eq!(message_to_bits(0, 4).unwrap(), vec![0, 0, 0, 0]);
        assert_eq!(message_to_bits(15, 4).unwrap(), vec![1, 1, 1, 1]);
        // message 6 in 1-based numbering
        assert_eq!(message_to_bits(5, 4).unwrap(), vec![0, 1, 0, 1]);
        assert!(message_to_bits(16, 4).is_err());
    }

    #[test]
    fn onehot_positions() {
        assert_eq!(build_onehot(0, 4).unwrap().to_dense()[0], vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(build_onehot(3, 4).unwrap().to_dense()[0], vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(ones(&build_onehot(2, 16).unwrap().to_dense()[0]), vec![2]);
        assert!(build_onehot(4, 4).is_err());
    }

    #[test]
    fn bitwise_labels_for_first_message() {
        let p = ClassPartition::bit_wise(&[2, 2]).unwrap();
        let dense = build_bitwise_labels(0, &p).unwrap().to_dense();
        // 1-based {1,2,3,4} and {1,5,9,13}
        assert_eq!(ones(&dense[0]), vec![0, 1, 2, 3]);
        assert_eq!(ones(&dense[1]), vec![0, 4, 8, 12]);
        for v in &dense {
            assert_eq!(ones(v).len(), 4);
        }
    }

    #[test]
    fn single_class_bitwise_is_onehot() {
        let p = ClassPartition::bit_wise(&[4]).unwrap();
        let labels = build_bitwise_labels(9, &p).unwrap();
        assert_eq!(labels.supports(), vec![&[9usize][..]]);
    }

    #[test]
    fn progressive_labels_prefix() {
        let p = ClassPartition::progressive(&[2, 2]).unwrap();
        // 1-based message 7 = bits 01|10
        let dense = build_progressive_labels(6, &p).unwrap().to_dense();
        assert_eq!(ones(&dense[0]), vec![4, 5, 6, 7]);
        assert_eq!(ones(&dense[1]), vec![6]);
        let bw = build_bitwise_labels(6, &ClassPartition::bit_wise(&[2, 2]).unwrap()).unwrap();
        assert_eq!(bw.supports()[0], build_progressive_labels(6, &p).unwrap().supports()[0]);
    }

    #[test]
    fn label_builders_reject_wrong_kind() {
        let mw = ClassPartition::message_wise(&[8, 8]).unwrap();
        assert!(matches!(build_bitwise_labels(0, &mw), Err(Error::PartitionKind { .. })));
        assert!(matches!(build_progressive_labels(0, &mw), Err(Error::PartitionKind { .. })));
        let bw = ClassPartition::bit_wise(&[2, 2]).unwrap();
        assert!(build_progressive_labels(0, &bw).is_err());
    }

    #[test]
    fn exhaustive_population_counts() {
        fn compositions(k: u32) -> Vec<Vec<u32>> {
            if k == 0 {
                return vec![vec![]];
            }
            let mut out = vec![];
            for first in 1..=k {
                for mut rest in compositions(k - first) {
                    rest.insert(0, first);
                    out.push(rest);
                }
            }
            out
        }
        // all compositions up to k = 7 here; the acceptance suite covers k <= 12
        for k in 1..=7 {
            for lengths in compositions(k) {
                let bw = ClassPartition::bit_wise(&lengths).unwrap();
                let pg = ClassPartition::progressive(&lengths).unwrap();
                for m in 0..(1usize << k) {
                    let b = build_bitwise_labels(m, &bw).unwrap();
                    for (j, s) in b.supports().iter().enumerate() {
                        assert_eq!(s.len(), 1 << (k - lengths[j]));
                        assert!(s.contains(&m));
                    }
                    let p = build_progressive_labels(m, &pg).unwrap();
                    let mut prefix = 0;
                    let sup = p.supports();
                    for (i, s) in sup.iter().enumerate() {
                        prefix += lengths[i];
                        assert_eq!(s.len(), 1 << (k - prefix));
                        if i + 1 < sup.len() {
                            assert!(sup[i + 1].iter().all(|x| s.contains(x)));
                        }
                    }
                    assert_eq!(sup.last().unwrap(), &[m]);
                }
            }
        }
    }

    #[test]
    fn bitwise_supports_match_string_oracle() {
        // submessages read off the binary string of m
        let field = |m: usize, k: u32, lengths: &[u32], j: usize| -> String {
            let s = format!("{m:0width$b}", width = k as usize);
            let start: u32 = lengths[..j].iter().sum();
            s[start as usize..(start + lengths[j]) as usize].to_string()
        };
        for lengths in [vec![1, 3], vec![2, 2], vec![3, 1, 2], vec![1, 1, 1, 1, 2]] {
            let k: u32 = lengths.iter().sum();
            let p = ClassPartition::bit_wise(&lengths).unwrap();
            for m in 0..1usize << k {
                let labels = build_bitwise_labels(m, &p).unwrap();
                for (j, s) in labels.supports().iter().enumerate() {
                    let want: Vec<usize> = (0..1usize << k)
                        .filter(|&i| field(i, k, &lengths, j) == field(m, k, &lengths, j))
                        .collect();
                    assert_eq!(*s, want.as_slice());
                }
            }
        }
    }

    #[test]
    fn messagewise_loss_examples() {
        let p = ClassPartition::message_wise(&[8, 8]).unwrap();
        let w = LossWeights::pair(0.5).unwrap();
        let b = vec![1.0 / 16.0; 16];
        for m in [0, 5, 12] {
            let u = build_onehot(m, 16).unwrap();
            assert_relative_eq!(
                loss_messagewise(&u, &b, &w, &p).unwrap(),
                0.5 * 16f64.ln(),
                epsilon = 1e-12
            );
        }
        let w = LossWeights::pair(1.0).unwrap();
        let u = build_onehot(10, 16).unwrap();
        assert_eq!(loss_messagewise(&u, &b, &w, &p).unwrap(), 0.0);
        let mut peaked = vec![0.0; 16];
        peaked[3] = 1.0;
        let u = build_onehot(3, 16).unwrap();
        assert_eq!(loss_messagewise(&u, &peaked, &LossWeights::pair(0.3).unwrap(), &p).unwrap(), 0.0);
    }

    #[test]
    fn bitwise_loss_uniform_output() {
        let p = ClassPartition::bit_wise(&[1, 1]).unwrap();
        let labels = build_bitwise_labels(0, &p).unwrap();
        let b = vec![0.25; 4];
        for lambda in [0.2, 0.5, 0.9] {
            let w = LossWeights::pair(lambda).unwrap();
            assert_relative_eq!(
                loss_bitwise(&labels, &b, &w, BitwiseLoss::Literal),
                2.0 * 4f64.ln(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn bitwise_weights_must_be_positive() {
        let p = ClassPartition::bit_wise(&[2, 2]).unwrap();
        let w = LossWeights::pair(1.0).unwrap();
        assert!(matches!(w.validate_for(&p), Err(Error::Weights(_))));
        assert!(Objective::new(p, w, BitwiseLoss::Literal).is_err());
        let mw = ClassPartition::message_wise(&[8, 8]).unwrap();
        assert!(LossWeights::pair(1.0).unwrap().validate_for(&mw).is_ok());
        assert!(LossWeights::new(vec![0.5, 0.6]).is_err());
        assert!(LossWeights::new(vec![-0.1, 1.1]).is_err());
    }

    /// Independent evaluator: builds the multi-hot vectors by enumerating
    /// every message's bit string and sums the literal cross-entropy terms.
    fn brute_force_bitwise_loss(m: usize, lengths: &[u32], b: &[f64], lambdas: &[f64]) -> f64 {
        let k: u32 = lengths.iter().sum();
        let bits_m = message_to_bits(m, k).unwrap();
        let mut total = 0.0;
        let mut offset = 0usize;
        for (j, &kj) in lengths.iter().enumerate() {
            let range = offset..offset + kj as usize;
            let mut term = 0.0;
            for i in 0..(1usize << k) {
                let bits_i = message_to_bits(i, k).unwrap();
                if bits_i[range.clone()] == bits_m[range.clone()] {
                    term -= b[i].max(LOG_FLOOR).ln();
                }
            }
            total += lambdas[j] * term;
            offset += kj as usize;
        }
        total
    }

    #[test]
    fn bitwise_loss_concentrated_output_matches_brute_force() {
        let lengths = [2, 2];
        let p = ClassPartition::bit_wise(&lengths).unwrap();
        let w = LossWeights::pair(0.7).unwrap();
        let eps = 1e-9;
        let mut b = vec![eps; 16];
        b[5] = 1.0 - 15.0 * eps;
        for m in [5usize, 6, 0] {
            let labels = build_bitwise_labels(m, &p).unwrap();
            let got = loss_bitwise(&labels, &b, &w, BitwiseLoss::Literal);
            let want = brute_force_bitwise_loss(m, &lengths, &b, w.as_slice());
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
        // matching index contributes ~0, the other consistent indices dominate
        let labels = build_bitwise_labels(5, &p).unwrap();
        let got = loss_bitwise(&labels, &b, &w, BitwiseLoss::Literal);
        assert_relative_eq!(got, 3.0 * -(eps.ln()), max_relative = 1e-6);
    }

    #[test]
    fn objective_matches_probability_space_losses() {
        let logits: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.4).collect();
        let max = logits.iter().cloned().fold(f64::MIN, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let s: f64 = exps.iter().sum();
        let b: Vec<f64> = exps.iter().map(|e| e / s).collect();

        let mw = ClassPartition::message_wise(&[8, 8]).unwrap();
        let w = LossWeights::pair(0.3).unwrap();
        let obj = Objective::new(mw.clone(), w.clone(), BitwiseLoss::Literal).unwrap();
        for m in 0..16 {
            let u = obj.labels(m).unwrap();
            assert_relative_eq!(
                obj.loss(&u, &logits),
                loss_messagewise(&u, &b, &w, &mw).unwrap(),
                epsilon = 1e-12
            );
        }
        for form in [BitwiseLoss::Literal, BitwiseLoss::ClassMass] {
            for p in [
                ClassPartition::bit_wise(&[2, 2]).unwrap(),
                ClassPartition::progressive(&[1, 3]).unwrap(),
            ] {
                let obj = Objective::new(p, w.clone(), form).unwrap();
                for m in 0..16 {
                    let u = obj.labels(m).unwrap();
                    assert_relative_eq!(
                        obj.loss(&u, &logits),
                        loss_bitwise(&u, &b, &w, form),
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn onehot_logit_gradient_is_b_minus_u() {
        let obj = Objective::standard(4).unwrap();
        let logits = [0.3, -1.2, 2.0, 0.0];
        let mut g = [0.0; 4];
        obj.loss_and_grad(&build_onehot(2, 4).unwrap(), &logits, &mut g);
        let s: f64 = logits.iter().map(|z: &f64| z.exp()).sum();
        for i in 0..4 {
            let u = if i == 2 { 1.0 } else { 0.0 };
            assert_relative_eq!(g[i], logits[i].exp() / s - u, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_weight_class_has_zero_gradient() {
        let p = ClassPartition::message_wise(&[2, 2]).unwrap();
        let obj = Objective::new(p, LossWeights::pair(1.0).unwrap(), BitwiseLoss::Literal).unwrap();
        let mut g = [1.0; 4];
        let loss = obj.loss_and_grad(&build_onehot(3, 4).unwrap(), &[0.1, 0.2, 0.3, 0.4], &mut g);
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn perclass_examples() {
        let bw = ClassPartition::bit_wise(&[2, 2]).unwrap();
        assert_eq!(perclass_correct(0, 0, &bw), vec![Some(true), Some(true)]);
        // 1-based 1 (00|00) vs 2 (00|01)
        assert_eq!(perclass_correct(0, 1, &bw), vec![Some(true), Some(false)]);
        let pg = ClassPartition::progressive(&[2, 2]).unwrap();
        // 1-based 5 = 01|00: second block matches but the prefix does not
        assert_eq!(perclass_correct(0, 4, &pg), vec![Some(false), Some(false)]);
        assert_eq!(perclass_correct(0, 4, &bw), vec![Some(false), Some(true)]);
        let mw = ClassPartition::message_wise(&[8, 8]).unwrap();
        assert_eq!(perclass_correct(9, 9, &mw), vec![None, Some(true)]);
        assert_eq!(perclass_correct(2, 9, &mw), vec![Some(false), None]);
    }

    #[test]
    fn descriptor_round_trip() {
        for p in [
            ClassPartition::message_wise(&[8, 8]).unwrap(),
            ClassPartition::MessageWise(MessageClasses::new(vec![1, 0, 1, 0]).unwrap()),
            ClassPartition::bit_wise(&[1, 3]).unwrap(),
            ClassPartition::progressive(&[2, 2]).unwrap(),
        ] {
            assert_eq!(ClassPartition::parse_descriptor(&p.descriptor()).unwrap(), p);
        }
        assert!(ClassPartition::parse_descriptor("zigzag 1 2").is_err());
    }

    proptest! {
        #[test]
        fn half_weight_is_half_standard_loss(
            m in 0usize..16,
            raw in proptest::collection::vec(1e-6f64..1.0, 16),
        ) {
            let s: f64 = raw.iter().sum();
            let b: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let u = build_onehot(m, 16).unwrap();
            let half = loss_messagewise(
                &u, &b, &LossWeights::pair(0.5).unwrap(),
                &ClassPartition::message_wise(&[8, 8]).unwrap(),
            ).unwrap();
            let standard = loss_messagewise(
                &u, &b, &LossWeights::uniform(1), &ClassPartition::single(16).unwrap(),
            ).unwrap();
            prop_assert!((half - 0.5 * standard).abs() <= 1e-12);
            prop_assert!(half >= 0.0);
        }

        #[test]
        fn progressive_correctness_is_monotone(m in 0usize..256, m_hat in 0usize..256, split in 1u32..8) {
            let p = ClassPartition::progressive(&[split, 8 - split]).unwrap();
            let c = perclass_correct(m, m_hat, &p);
            if c[0] == Some(false) {
                prop_assert_eq!(c[1], Some(false));
            }
        }

        #[test]
        fn compound_losses_nonnegative(
            m in 0usize..16,
            logits in proptest::collection::vec(-5f64..5.0, 16),
            lambda in 0.01f64..0.99,
        ) {
            for p in [
                ClassPartition::message_wise(&[8, 8]).unwrap(),
                ClassPartition::bit_wise(&[2, 2]).unwrap(),
                ClassPartition::progressive(&[2, 2]).unwrap(),
            ] {
                let obj = Objective::new(p, LossWeights::pair(lambda).unwrap(), BitwiseLoss::Literal).unwrap();
                let u = obj.labels(m).unwrap();
                prop_assert!(obj.loss(&u, &logits) >= 0.0);
            }
        }
    }
}
