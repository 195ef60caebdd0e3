mod common;

use augseg::data::{generate_split, Split, SynthConfig};
use augseg::model::{Checkpoint, Mode, Network, NetworkConfig};
use augseg::trainer::{evaluate, few_shot_indices, image_batch, log_csv, train, AugArm, TrainConfig, TRAIN_LOG_HEADER};
use augseg::Tensor;
use common::{frozen_encoder_report, rng, tiny_train_config};

fn small_set() -> Vec<augseg::data::Sample> {
    generate_split(&SynthConfig { height: 32, width: 32, ..Default::default() }, 2, Split::Train, 4).unwrap()
}

fn small_net() -> NetworkConfig {
    NetworkConfig { input_hw: (32, 32), ..Default::default() }
}

#[test]
fn encoder_stays_frozen_and_checkpoints_reload_bit_exact() {
    frozen_encoder_report().unwrap();
}

#[test]
fn training_is_seed_reproducible() {
    let set = small_set();
    let cfg = tiny_train_config(AugArm::FeatureWavelet, 4);
    let a = train::<f32>(&cfg, &small_net(), &set).unwrap();
    let b = train::<f32>(&cfg, &small_net(), &set).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.checkpoint.network.params, b.checkpoint.network.params);
    let c = train::<f32>(&TrainConfig { seed: 1, ..cfg }, &small_net(), &set).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn full_keep_wavelet_arm_matches_the_plain_arm() {
    let set = small_set();
    let net = small_net().with_uniform_keep_prob(1.0);
    let plain = train::<f32>(&tiny_train_config(AugArm::None, 5), &net, &set).unwrap();
    let wav = train::<f32>(&tiny_train_config(AugArm::FeatureWavelet, 5), &net, &set).unwrap();
    assert_eq!(plain.log, wav.log);
}

#[test]
fn train_mode_without_augmentation_equals_eval_mode() {
    let net = Network::<f64>::new(NetworkConfig { input_hw: (32, 32), ..Default::default() }.with_uniform_keep_prob(1.0), 3).unwrap();
    let images = Tensor::<f64>::uniform(&[2, 1, 32, 32], 0.0, 1.0, &mut rng(1)).unwrap();
    let feats = net.encode(&images, &["a", "b"]).unwrap();
    let eval = net.forward_eval(&images, &["a", "b"]).unwrap();
    let mut tape = augseg::Tape::new();
    let bound = net.params.bind(&mut tape);
    let mode = Mode::Train(augseg::model::FeatureAug::Wavelet);
    let logits = net.forward_on_tape(&mut tape, &bound, &feats, mode, &mut rng(2)).unwrap();
    assert_eq!(tape.value(logits).max_abs_diff(&eval).unwrap(), 0.0);
}

#[test]
fn f64_checkpoints_round_trip_and_reject_the_wrong_dtype() {
    let set = small_set();
    let out = train::<f64>(&tiny_train_config(AugArm::None, 2), &small_net(), &set).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.checkpoint.save(dir.path()).unwrap();
    let back = Checkpoint::<f64>::load(dir.path()).unwrap();
    assert_eq!(back.network.params, out.checkpoint.network.params);
    assert_eq!(back.few_shot_ids, out.checkpoint.few_shot_ids);
    assert!(Checkpoint::<f32>::load(dir.path()).unwrap_err().is_input_error());
    let r = evaluate(&back.network, &set, 1.0).unwrap();
    assert!((0.0..=1.0).contains(&r.mean_dice));
}

#[test]
fn few_shot_subset_is_a_seeded_choice() {
    assert_eq!(few_shot_indices(20, 5, 3), few_shot_indices(20, 5, 3));
    let mut idx = few_shot_indices(20, 20, 4);
    idx.sort();
    assert_eq!(idx, (0..20).collect::<Vec<_>>());
    let err = train::<f32>(&TrainConfig { few_shot: 9, ..tiny_train_config(AugArm::None, 1) }, &small_net(), &small_set()).unwrap_err();
    assert!(err.is_input_error());
}

#[test]
fn log_has_one_row_per_epoch() {
    let out = train::<f32>(&tiny_train_config(AugArm::ImageLevel, 3), &small_net(), &small_set()).unwrap();
    let csv = log_csv(&out.log);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], TRAIN_LOG_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(out.log.iter().all(|e| e.loss.is_finite() && (0.0..=1.0).contains(&e.train_dice)));
    let images = image_batch::<f32>(&[&small_set()[0].image]).unwrap();
    assert_eq!(images.shape(), &[1, 1, 32, 32]);
}
