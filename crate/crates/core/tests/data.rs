mod common;

use augseg::data::{
    corrupt, feature_spatial_aug, gen_sample, generate_split, load_split, write_dataset, Corruption, CorruptionKind,
    CorruptionPolicy, CorruptionSpec, Split, SynthConfig,
};
use augseg::Tensor;
use common::{format_report, rng};
use proptest::prelude::*;

#[test]
fn foreground_fraction_stays_in_band() {
    let cfg = SynthConfig::default();
    let samples = generate_split(&cfg, 7, Split::Train, 100).unwrap();
    let mut present = vec![0usize; cfg.num_classes];
    for s in &samples {
        let f = s.foreground_fraction();
        assert!((0.05..=0.40).contains(&f), "{}: {f}", s.id);
        for c in 1..cfg.num_classes {
            present[c] += s.mask.data().contains(&(c as u8)) as usize;
        }
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    // Every foreground class shows up in a healthy share of the samples.
    assert!(present[1..].iter().all(|&n| n >= 30), "{present:?}");
}

#[test]
fn splits_are_disjoint() {
    let cfg = SynthConfig::default();
    let train = generate_split(&cfg, 3, Split::Train, 40).unwrap();
    let test = generate_split(&cfg, 3, Split::Test, 40).unwrap();
    for a in &train {
        assert!(test.iter().all(|b| b.seed != a.seed && b.id != a.id));
    }
}

#[test]
fn poisson_mean_is_unbiased() {
    let img = Tensor::<f32>::full(&[1, 100, 100], 0.5).unwrap();
    let out = corrupt(&img, &CorruptionSpec::new(Corruption::Poisson { scale: 255.0 }, 11)).unwrap();
    let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / 1e4;
    assert!((mean - 0.5).abs() < 0.02, "{mean}");
}

#[test]
fn identities_of_the_corruption_families() {
    let s = gen_sample(5, &SynthConfig::default()).unwrap();
    let same = |c: Corruption| corrupt(&s.image, &CorruptionSpec::new(c, 1)).unwrap();
    assert_eq!(same(Corruption::Brightness { factor: 1.0 }), s.image);
    assert_eq!(same(Corruption::RandMask { p: 0.0 }), s.image);
    assert!(same(Corruption::RandMask { p: 1.0 }).data().iter().all(|&v| v == 0.0));
    let flat = Tensor::<f32>::full(&[1, 16, 16], 0.3).unwrap();
    let blurred = corrupt(&flat, &CorruptionSpec::new(Corruption::MotionBlur { length: 7 }, 2)).unwrap();
    assert!(blurred.max_abs_diff(&flat).unwrap() < 1e-6);

    let f = Tensor::<f64>::randn(&[2, 3, 5, 5], 1.0, &mut rng(1)).unwrap();
    let fs = |c: Corruption| feature_spatial_aug(&f, &CorruptionSpec::new(c, 3)).unwrap();
    assert_eq!(fs(Corruption::Brightness { factor: 1.0 }), f);
    assert_eq!(fs(Corruption::RandMask { p: 0.0 }), f);
    assert!(fs(Corruption::RandMask { p: 1.0 }).data().iter().all(|&v| v == 0.0));
}

#[test]
fn out_of_range_corruptions_are_rejected() {
    let img = Tensor::<f32>::full(&[1, 8, 8], 0.5).unwrap();
    for c in [
        Corruption::Brightness { factor: -1.0 },
        Corruption::MotionBlur { length: 4 },
        Corruption::MotionBlur { length: 33 },
        Corruption::Poisson { scale: 0.0 },
        Corruption::RandMask { p: 1.5 },
    ] {
        assert!(corrupt(&img, &CorruptionSpec::new(c, 0)).is_err(), "{c:?}");
    }
    assert!("sharpen".parse::<CorruptionKind>().is_err());
}

#[test]
fn formats_round_trip_and_reject_truncation() {
    assert_eq!(format_report(1), Ok(40));
}

#[test]
fn dataset_round_trips_through_disk() {
    let cfg = SynthConfig { height: 32, width: 32, ..Default::default() };
    let train = generate_split(&cfg, 1, Split::Train, 3).unwrap();
    let test = generate_split(&cfg, 1, Split::Test, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let all: Vec<_> = train.iter().map(|s| (Split::Train, s)).chain(test.iter().map(|s| (Split::Test, s))).collect();
    write_dataset(dir.path(), &all, Some(&cfg), None).unwrap();
    let (m, back) = load_split(dir.path(), Split::Train).unwrap();
    assert_eq!(m.samples.len(), 5);
    for (a, b) in train.iter().zip(&back) {
        assert_eq!(a.mask, b.mask);
        // Images are stored as 8-bit gray.
        assert!(a.image.max_abs_diff(&b.image).unwrap() <= 0.5 / 255.0 + 1e-6);
    }
    assert!(load_split(dir.path().join("missing"), Split::Train).unwrap_err().is_input_error());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generation_and_corruption_are_pure(seed in any::<u64>(), cseed in any::<u64>()) {
        let cfg = SynthConfig { height: 32, width: 32, ..Default::default() };
        let a = gen_sample(seed, &cfg).unwrap();
        let b = gen_sample(seed, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.mask.data().iter().all(|&v| (v as usize) < cfg.num_classes));
        let spec = CorruptionPolicy::default().sample(&mut rng(cseed));
        let (x, y) = (corrupt(&a.image, &spec).unwrap(), corrupt(&a.image, &spec).unwrap());
        prop_assert_eq!(&x, &y);
        prop_assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(x.shape(), a.image.shape());
    }

    #[test]
    fn every_family_keeps_values_in_unit_range(seed in any::<u64>(), k in 0usize..4, s in 0.0f64..1.0) {
        let img = gen_sample(seed, &SynthConfig { height: 16, width: 16, ..Default::default() }).unwrap().image;
        let c = match k {
            0 => Corruption::Brightness { factor: 3.0 * s },
            1 => Corruption::MotionBlur { length: 2 * (s * 7.0) as usize + 1 },
            2 => Corruption::Poisson { scale: 1.0 + 200.0 * s },
            _ => Corruption::RandMask { p: s },
        };
        let out = corrupt(&img, &CorruptionSpec::new(c, seed)).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
