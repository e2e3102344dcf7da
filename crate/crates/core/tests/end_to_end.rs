use uep_core::autoencoder::{export_codebook, SavedModel};
use uep_core::codebook::Codebook;
use uep_core::montecarlo::{evaluate_model, sweep, DecoderKind, StoppingRule, SweepSpec};
use uep_core::{train, ClassPartition, LossWeights, TrainConfig};

fn small_config() -> TrainConfig {
    let mut c = TrainConfig::sixteen_seven(
        ClassPartition::message_wise(&[8, 8]).unwrap(),
        LossWeights::pair(0.5).unwrap(),
        11,
    );
    c.num_iterations = 1500;
    c.batch_size = 128;
    c
}

fn stop() -> StoppingRule {
    StoppingRule {
        min_errors_per_class: 200,
        max_trials: 2_000_000,
    }
}

#[test]
fn ml_decoding_of_learned_codebook_is_no_worse_than_the_decoder_net() {
    let config = small_config();
    let model = train(&config).unwrap();
    let codebook = export_codebook(&model.params, &config).unwrap();
    let run = |decoder| {
        evaluate_model(&model.params, &codebook, &config.partition, &[2.0], &stop(), decoder, &[9]).unwrap()
    };
    let nn = &run(DecoderKind::Nn)[0];
    let ml = &run(DecoderKind::Ml)[0];
    let rate = |p: &uep_core::ErrorProfile| p.message_errors as f64 / p.total_trials as f64;
    // both rates come with ~7% relative error at 200 errors per class
    assert!(rate(ml) <= rate(nn) * 1.2, "ml {} nn {}", rate(ml), rate(nn));
}

#[test]
fn saved_artifacts_reproduce_the_evaluation() {
    let config = small_config();
    let model = train(&config).unwrap();
    let codebook = export_codebook(&model.params, &config).unwrap();

    let saved = SavedModel {
        digest: model.digest.clone(),
        partition: config.partition.clone(),
        params: model.params.clone(),
    };
    let mut bytes = Vec::new();
    saved.write_to(&mut bytes).unwrap();
    let loaded = SavedModel::read_from(bytes.as_slice()).unwrap();
    let mut text = Vec::new();
    codebook.write_to(&mut text).unwrap();
    let reread = Codebook::read_from(text.as_slice()).unwrap();

    let a = evaluate_model(&model.params, &codebook, &config.partition, &[4.0], &stop(), DecoderKind::Nn, &[3]).unwrap();
    let b = evaluate_model(&loaded.params, &reread, &loaded.partition, &[4.0], &stop(), DecoderKind::Nn, &[3]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweep_shares_training_seed_and_is_reproducible() {
    let spec = SweepSpec {
        lambdas: vec![0.2, 0.8],
        snrs_db: vec![3.0],
        stop: StoppingRule {
            min_errors_per_class: 50,
            max_trials: 200_000,
        },
        decoder: DecoderKind::Nn,
    };
    let mut base = small_config();
    base.num_iterations = 300;
    let first = sweep(&base, &spec, 5).unwrap();
    let again = sweep(&base, &spec, 5).unwrap();
    assert_eq!(first.len(), 2);
    assert_eq!(first[0].train_seed, first[1].train_seed);
    assert_eq!(first[0].eval_seeds, first[1].eval_seeds);
    for (x, y) in first.iter().zip(&again) {
        assert_eq!(x.profiles, y.profiles);
        assert_eq!(x.codebook, y.codebook);
    }
    // the heavier class-1 weight buys class 1 a lower error rate
    let p1 = |i: usize| first[i].profiles[0].estimate(0);
    assert!(p1(1) < p1(0), "{} vs {}", p1(1), p1(0));
}
