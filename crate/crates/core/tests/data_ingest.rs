use std::path::{Path, PathBuf};

use proptest::prelude::*;
use spikehar::data::{
    load_ucihar, load_window_csv, normalize, save_window_csv, split, synth_generate, NormStats, UCIHAR_CHANNELS,
    UCIHAR_STEPS,
};
use spikehar::{Error, SeededRng, SplitSpec, SynthSpec, Tensor, WindowDataset};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ucihar_mini")
}

fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &dest);
        } else {
            std::fs::copy(entry.path(), dest).unwrap();
        }
    }
}

fn scratch_fixture() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("UCI HAR Dataset");
    copy_tree(&fixture(), &root);
    (dir, root)
}

#[test]
fn ucihar_fixture_loads_aligned() {
    let ds = load_ucihar(&fixture()).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.steps(), UCIHAR_STEPS);
    assert_eq!(ds.channels(), 9);
    assert_eq!(ds.labels, vec![4, 0, 2]);
    assert_eq!(ds.class_count, 6);
    assert_eq!(ds.channel_names, UCIHAR_CHANNELS.map(String::from).to_vec());
    // fixture values encode 100 * channel + sample + t / 1000
    for i in 0..3 {
        for t in 0..UCIHAR_STEPS {
            for c in 0..9 {
                let got = ds.samples.at(&[i, t, c]) as f64;
                let want = 100.0 * c as f64 + i as f64 + t as f64 / 1000.0;
                assert!((got - want).abs() < 1e-3, "sample {i} t {t} channel {c}: {got}");
            }
        }
    }
}

#[test]
fn ucihar_accepts_parent_directory() {
    let (dir, _) = scratch_fixture();
    assert_eq!(load_ucihar(dir.path()).unwrap().len(), 3);
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    match load_ucihar(dir.path()) {
        Err(Error::Io { path, .. }) => assert!(path.ends_with("train/y_train.txt"), "{path:?}"),
        other => panic!("expected io error, got {other:?}"),
    }
    let (_dir, root) = scratch_fixture();
    let victim = root.join("test/Inertial Signals/body_gyro_y_test.txt");
    std::fs::remove_file(&victim).unwrap();
    match load_ucihar(&root) {
        Err(Error::Io { path, .. }) => assert_eq!(path, victim),
        other => panic!("expected io error, got {other:?}"),
    }
}

#[test]
fn short_row_reports_its_line() {
    let (_dir, root) = scratch_fixture();
    let path = root.join("train/Inertial Signals/total_acc_z_train.txt");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let toks: Vec<&str> = lines[1].split_whitespace().collect();
    lines[1] = toks[..100].join(" ");
    std::fs::write(&path, lines.join("\n")).unwrap();
    match load_ucihar(&root) {
        Err(Error::Parse { path: p, line, msg }) => {
            assert_eq!(p, path);
            assert_eq!(line, 2);
            assert!(msg.contains("found 100"), "{msg}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn label_outside_range_is_rejected() {
    let (_dir, root) = scratch_fixture();
    let path = root.join("test/y_test.txt");
    std::fs::write(&path, "7\n").unwrap();
    match load_ucihar(&root) {
        Err(Error::Parse { path: p, line, .. }) => {
            assert_eq!(p, path);
            assert_eq!(line, 1);
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn window_csv_rejects_out_of_order_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.csv");
    std::fs::write(&path, "sample_id,t,a\n0,0,1.0\n0,2,1.0\n").unwrap();
    std::fs::write(dir.path().join("w.labels.csv"), "sample_id,label\n0,1\n").unwrap();
    assert!(matches!(load_window_csv(&path), Err(Error::Parse { line: 3, .. })));
}

fn indexed(n: usize, t: usize, d: usize) -> WindowDataset {
    // first value of each window is its index
    let samples = Tensor::from_fn(
        &[n, t, d],
        |i| if i % (t * d) == 0 { (i / (t * d)) as f32 } else { 0.5 },
    );
    WindowDataset::new(
        samples,
        (0..n).map(|i| i % 2).collect(),
        2,
        (0..d).map(|j| format!("c{j}")).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_csv_round_trips(seed in any::<u64>(), n in 1usize..6, t in 1usize..7, d in 1usize..4, k in 2usize..5) {
        let mut rng = SeededRng::new(seed);
        let samples = Tensor::from_fn(&[n, t, d], |_| (rng.normal() * 10f64.powi(rng.below(7) as i32 - 3)) as f32);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.below(k as u64) as usize).collect();
        labels[0] = k - 1;
        let ds = WindowDataset::new(samples, labels, k, (0..d).map(|j| format!("d_{j}")).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("windows.csv");
        save_window_csv(&ds, &path).unwrap();
        let back = load_window_csv(&path).unwrap();
        prop_assert_eq!(back.samples.shape(), ds.samples.shape());
        prop_assert_eq!(back.samples.data(), ds.samples.data());
        prop_assert_eq!(back.labels, ds.labels);
        prop_assert_eq!(back.class_count, k);
    }

    #[test]
    fn split_is_a_partition(n in 5usize..200, seed in any::<u64>()) {
        let ds = indexed(n, 2, 1);
        let spec = SplitSpec::new(seed);
        let (tr, va, te) = split(&ds, &spec).unwrap();
        let (a, b, c) = spec.sizes(n).unwrap();
        prop_assert_eq!((tr.len(), va.len(), te.len()), (a, b, c));
        let mut seen: Vec<usize> = [&tr, &va, &te]
            .iter()
            .flat_map(|p| (0..p.len()).map(|i| p.samples.at(&[i, 0, 0]) as usize).collect::<Vec<_>>())
            .collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        let again = split(&ds, &spec).unwrap();
        prop_assert_eq!(again.0.samples.data(), tr.samples.data());
    }
}

#[test]
fn normalized_train_is_standard() {
    let mut rng = SeededRng::new(30);
    let samples = Tensor::from_fn(&[40, 16, 3], |i| (rng.normal() * (1 + i % 3) as f64 * 5.0 + 7.0) as f32);
    let ds = WindowDataset::new(samples, vec![0; 40], 2, vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let (tr, _, stats) = normalize(&ds, &[]).unwrap();
    let refit = NormStats::fit(&tr).unwrap();
    for c in 0..3 {
        assert!(refit.mean[c].abs() < 1e-5, "mean {}", refit.mean[c]);
        assert!((refit.std[c] - 1.0).abs() < 1e-5, "std {}", refit.std[c]);
        assert!((stats.mean[c] - 7.0).abs() < 1.0);
    }
    // a second pass changes nothing beyond rounding
    let twice = refit.apply(&tr).unwrap();
    for (a, b) in twice.samples.data().iter().zip(tr.samples.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

fn dft_magnitudes(window: &[f32], t: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d * (t / 2 + 1));
    for c in 0..d {
        for k in 0..=t / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for s in 0..t {
                let ang = 2.0 * std::f64::consts::PI * (k * s) as f64 / t as f64;
                let v = window[s * d + c] as f64;
                re += v * ang.cos();
                im -= v * ang.sin();
            }
            out.push((re * re + im * im).sqrt());
        }
    }
    out
}

#[test]
fn synthetic_classes_separate_by_spectrum() {
    let spec = SynthSpec::new(6, 50, 64, 3, 31);
    let ds = synth_generate(&spec).unwrap();
    let (t, d) = (ds.steps(), ds.channels());
    let feats: Vec<Vec<f64>> = ds
        .samples
        .data()
        .chunks(t * d)
        .map(|w| dft_magnitudes(w, t, d))
        .collect();
    let half = ds.len() / 2;
    let dim = feats[0].len();
    let mut centroids = vec![vec![0.0; dim]; 6];
    let mut counts = [0usize; 6];
    for i in 0..half {
        counts[ds.labels[i]] += 1;
        for (c, f) in centroids[ds.labels[i]].iter_mut().zip(&feats[i]) {
            *c += f;
        }
    }
    for (c, n) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let correct = (half..ds.len())
        .filter(|&i| {
            let dist = |c: &Vec<f64>| c.iter().zip(&feats[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..6)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            best == ds.labels[i]
        })
        .count();
    let acc = correct as f64 / (ds.len() - half) as f64;
    assert!(acc > 0.99, "nearest-centroid accuracy {acc}");
}

#[test]
fn synthetic_generation_is_deterministic() {
    let spec = SynthSpec::new(3, 4, 32, 2, 9);
    let a = synth_generate(&spec).unwrap();
    let b = synth_generate(&spec).unwrap();
    assert_eq!(a.samples.data(), b.samples.data());
    assert_eq!(a.labels, vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2]);
}
