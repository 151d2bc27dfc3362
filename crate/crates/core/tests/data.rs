mod common;

use std::fs;
use std::path::Path;

use common::synthetic_set;
use prepnet::data::{
    generate_synthetic_benchmark, load_manifest, split_dataset, Image, PreprocessConfig, SampleSet, Split, SplitRatios,
    SyntheticDomainSpec,
};

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir.join("images"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out.push(("manifest.jsonl".into(), fs::read(dir.join("manifest.jsonl")).unwrap()));
    out
}

#[test]
fn benchmark_is_a_function_of_spec_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticDomainSpec::preset(2, 6, 16, 16);
    let a = generate_synthetic_benchmark(&spec, 4, &tmp.path().join("a")).unwrap();
    generate_synthetic_benchmark(&spec, 4, &tmp.path().join("b")).unwrap();
    generate_synthetic_benchmark(&spec, 5, &tmp.path().join("c")).unwrap();
    assert_eq!(a.entries.len(), 24);
    assert!(a.class_counts().values().all(|&n| n == 6));
    let fa = files(&tmp.path().join("a"));
    assert_eq!(fa, files(&tmp.path().join("b")));
    assert_ne!(fa, files(&tmp.path().join("c")));
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("a/spec.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 4);
}

#[test]
fn manifest_round_trips_through_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticDomainSpec::preset(3, 4, 8, 8);
    let written = generate_synthetic_benchmark(&spec, 1, tmp.path()).unwrap();
    let loaded = load_manifest(&tmp.path().join("manifest.jsonl")).unwrap();
    assert_eq!(loaded, written);
    assert_eq!(loaded.dataset_names, ["domain0", "domain1", "domain2"]);

    let split = split_dataset(&loaded, SplitRatios::default(), 9).unwrap();
    split.write(&tmp.path().join("split.jsonl")).unwrap();
    assert_eq!(load_manifest(&tmp.path().join("split.jsonl")).unwrap(), split);
}

#[test]
fn split_is_stratified_and_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticDomainSpec::preset(2, 20, 8, 8);
    let m = generate_synthetic_benchmark(&spec, 2, tmp.path()).unwrap();
    let a = split_dataset(&m, SplitRatios::default(), 3).unwrap();
    assert_eq!(a, split_dataset(&m, SplitRatios::default(), 3).unwrap());
    assert_ne!(a, split_dataset(&m, SplitRatios::default(), 4).unwrap());
    // 20 per stratum: 14 / 3 / 3, four strata
    let sizes = a.split_sizes();
    assert_eq!(
        (sizes[&Split::Train], sizes[&Split::Val], sizes[&Split::Test]),
        (56, 12, 12)
    );
    for d in 0..2 {
        for label in [0, 1] {
            let in_test = a
                .entries
                .iter()
                .filter(|e| e.dataset_id == d && e.task_label == Some(label) && e.split == Split::Test)
                .count();
            assert_eq!(in_test, 3);
        }
    }
}

#[test]
fn loaded_splits_have_the_target_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticDomainSpec::preset(2, 10, 24, 20);
    let m = split_dataset(
        &generate_synthetic_benchmark(&spec, 0, tmp.path()).unwrap(),
        SplitRatios::default(),
        0,
    )
    .unwrap();
    let config = PreprocessConfig {
        target_size: (16, 16),
        ..Default::default()
    };
    let train = SampleSet::load_split(&m, &config, Split::Train).unwrap();
    assert_eq!(train.images.shape(), &[28, 1, 16, 16]);
    assert_eq!(train.datasets_present(), vec![0, 1]);
    let png = Image::load_png(&m.entries[0].path).unwrap();
    assert_eq!((png.height(), png.width()), (24, 20));
}

/// Per-image mean and standard deviation.
fn stats(pixels: &[f32]) -> (f64, f64) {
    let n = pixels.len() as f64;
    let mean = pixels.iter().map(|&p| p as f64).sum::<f64>() / n;
    let var = pixels.iter().map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// A nearest-centroid rule on two intensity statistics already tells the
/// preset domains apart, while the class signal moves the mean the same way
/// in both of them.
#[test]
fn preset_domains_are_separable_and_share_the_class_signal() {
    let spec = SyntheticDomainSpec::preset(2, 60, 32, 32);
    let train = synthetic_set(&spec, 10, Split::Train);
    let test = synthetic_set(&spec, 11, Split::Test);
    let per_image = |s: &SampleSet, i: usize| {
        let n = 32 * 32;
        stats(&s.images.data()[i * n..(i + 1) * n])
    };
    let mut centroid = [(0.0, 0.0); 2];
    for i in 0..train.len() {
        let (m, sd) = per_image(&train, i);
        let c = &mut centroid[train.dataset_ids[i]];
        c.0 += m / 120.0;
        c.1 += sd / 120.0;
    }
    let correct = (0..test.len())
        .filter(|&i| {
            let (m, sd) = per_image(&test, i);
            let d = |c: (f64, f64)| (m - c.0).powi(2) + (sd - c.1).powi(2);
            let guess = usize::from(d(centroid[1]) < d(centroid[0]));
            guess == test.dataset_ids[i]
        })
        .count();
    assert!(correct as f64 / test.len() as f64 >= 0.9, "{correct}/{}", test.len());

    for d in 0..2 {
        let mean_of = |label: u8| {
            let idx: Vec<usize> = (0..train.len())
                .filter(|&i| train.dataset_ids[i] == d && train.task_labels[i] == Some(label))
                .collect();
            idx.iter().map(|&i| per_image(&train, i).0).sum::<f64>() / idx.len() as f64
        };
        assert!(mean_of(1) > mean_of(0), "domain {d}");
    }
}
