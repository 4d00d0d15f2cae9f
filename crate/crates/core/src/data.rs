//! Windowed sensor datasets: UCI-HAR raw signals, a generic CSV layout,
//! synthetic sinusoids, plus splitting and normalization.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::layers::TimeBatch;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// `N` windows of `T × D` readings with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    /// `[N × T × D]`
    pub samples: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub channel_names: Vec<String>,
}

impl WindowDataset {
    pub fn new(
        samples: Tensor<f32>,
        labels: Vec<usize>,
        class_count: usize,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        let [n, _, d] = samples.dims3()?;
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} labels for {n} samples", labels.len())));
        }
        if channel_names.len() != d {
            return Err(Error::Dimension(format!(
                "{} channel names for {d} channels",
                channel_names.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Argument(format!("label {bad} outside [0, {class_count})")));
        }
        Ok(Self {
            samples,
            labels,
            class_count,
            channel_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.samples.shape()[2]
    }

    fn window(&self, i: usize) -> &[f32] {
        let w = self.steps() * self.channels();
        &self.samples.data()[i * w..(i + 1) * w]
    }

    pub fn subset(&self, indices: &[usize]) -> WindowDataset {
        let (t, d) = (self.steps(), self.channels());
        let mut data = Vec::with_capacity(indices.len() * t * d);
        for &i in indices {
            data.extend_from_slice(self.window(i));
        }
        WindowDataset {
            samples: Tensor::new(vec![indices.len(), t, d], data).expect("consistent shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            channel_names: self.channel_names.clone(),
        }
    }

    /// Network input `[n × D × T]` and labels for the given samples.
    pub fn batch(&self, indices: &[usize]) -> (TimeBatch<f32>, Vec<usize>) {
        let sub = self.subset(indices);
        let batch = TimeBatch::from_samples(&sub.samples).expect("rank 3 samples");
        (batch, sub.labels)
    }
}

// ---------------------------------------------------------------------------
// UCI-HAR
// ---------------------------------------------------------------------------

/// Channel order of [`load_ucihar`].
pub const UCIHAR_CHANNELS: [&str; 9] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
];
pub const UCIHAR_STEPS: usize = 128;
pub const UCIHAR_CLASSES: usize = 6;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_signal_file(path: &Path) -> Result<Vec<f32>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: f32 = tok
                .parse()
                .map_err(|_| Error::parse(path, ln + 1, format!("not a number: `{tok}`")))?;
            out.push(v);
            count += 1;
        }
        if count != UCIHAR_STEPS {
            return Err(Error::parse(
                path,
                ln + 1,
                format!("expected {UCIHAR_STEPS} values, found {count}"),
            ));
        }
    }
    Ok(out)
}

fn parse_label_file(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        match tok.parse::<usize>() {
            Ok(v @ 1..=6) => out.push(v - 1),
            _ => return Err(Error::parse(path, ln + 1, format!("label `{tok}` is not in 1..=6"))),
        }
    }
    Ok(out)
}

fn ucihar_root(root: &Path) -> PathBuf {
    let nested = root.join("UCI HAR Dataset");
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

/// Load and merge the `train` and `test` partitions of the raw inertial
/// signals (`<part>/Inertial Signals/<channel>_<part>.txt`, labels in
/// `<part>/y_<part>.txt`). Labels are remapped to `0..6`.
pub fn load_ucihar(root_dir: &Path) -> Result<WindowDataset> {
    let root = ucihar_root(root_dir);
    let d = UCIHAR_CHANNELS.len();
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for part in ["train", "test"] {
        let part_dir = root.join(part);
        let labels_path = part_dir.join(format!("y_{part}.txt"));
        let part_labels = parse_label_file(&labels_path)?;
        let n = part_labels.len();
        let mut signals = Vec::with_capacity(d);
        for ch in UCIHAR_CHANNELS {
            let path = part_dir.join("Inertial Signals").join(format!("{ch}_{part}.txt"));
            let s = parse_signal_file(&path)?;
            if s.len() != n * UCIHAR_STEPS {
                return Err(Error::parse(
                    &path,
                    s.len() / UCIHAR_STEPS + 1,
                    format!("{} rows but {} labels", s.len() / UCIHAR_STEPS, n),
                ));
            }
            signals.push(s);
        }
        for i in 0..n {
            for t in 0..UCIHAR_STEPS {
                for s in &signals {
                    samples.push(s[i * UCIHAR_STEPS + t]);
                }
            }
        }
        labels.extend(part_labels);
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::parse(root.join("train"), 0, "dataset has no samples"));
    }
    WindowDataset::new(
        Tensor::new(vec![n, UCIHAR_STEPS, d], samples)?,
        labels,
        UCIHAR_CLASSES,
        UCIHAR_CHANNELS.iter().map(|s| s.to_string()).collect(),
    )
}

// ---------------------------------------------------------------------------
// Generic window CSV
// ---------------------------------------------------------------------------

/// Sidecar holding `sample_id,label` rows for a window CSV.
pub fn labels_path(windows_csv: &Path) -> PathBuf {
    windows_csv.with_extension("labels.csv")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(path, line, e.to_string())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: Option<&str>, what: &str) -> Result<T> {
    let raw = field.ok_or_else(|| Error::parse(path, line, format!("missing {what}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("bad {what} `{raw}`")))
}

/// Load a window CSV (`sample_id,t,d_0,..,d_{D-1}`, one row per sample and
/// step, samples and steps in ascending order) and its labels sidecar.
pub fn load_window_csv(path: &Path) -> Result<WindowDataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "t" {
        return Err(Error::parse(
            path,
            1,
            "header must start with sample_id,t and name at least one channel",
        ));
    }
    let channel_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let d = channel_names.len();
    let mut data = Vec::new();
    let mut steps: Option<usize> = None;
    let (mut cur_sample, mut cur_t) = (0usize, 0usize);
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != d + 2 {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields, found {}", d + 2, rec.len()),
            ));
        }
        let sid: usize = parse_field(path, line, rec.get(0), "sample_id")?;
        let t: usize = parse_field(path, line, rec.get(1), "t")?;
        if sid == cur_sample + 1 && t == 0 {
            match steps {
                None => steps = Some(cur_t),
                Some(s) if s != cur_t => {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("sample {cur_sample} has {cur_t} steps, expected {s}"),
                    ))
                }
                _ => {}
            }
            cur_sample = sid;
            cur_t = 0;
        }
        if sid != cur_sample || t != cur_t {
            return Err(Error::parse(
                path,
                line,
                format!("expected sample {cur_sample} step {cur_t}, found sample {sid} step {t}"),
            ));
        }
        for j in 0..d {
            data.push(parse_field::<f32>(path, line, rec.get(j + 2), "value")?);
        }
        cur_t += 1;
    }
    if data.is_empty() {
        return Err(Error::parse(path, 2, "no rows"));
    }
    let t = *steps.get_or_insert(cur_t);
    if cur_t != t {
        return Err(Error::parse(
            path,
            0,
            format!("last sample has {cur_t} steps, expected {t}"),
        ));
    }
    let n = cur_sample + 1;

    let lpath = labels_path(path);
    let mut rdr = csv::Reader::from_path(&lpath).map_err(|e| csv_err(&lpath, e))?;
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(&lpath, e))?;
        let sid: usize = parse_field(&lpath, line, rec.get(0), "sample_id")?;
        if sid != i {
            return Err(Error::parse(&lpath, line, format!("expected sample {i}, found {sid}")));
        }
        labels.push(parse_field::<usize>(&lpath, line, rec.get(1), "label")?);
    }
    if labels.len() != n {
        return Err(Error::parse(
            &lpath,
            labels.len() + 1,
            format!("{} labels for {n} samples", labels.len()),
        ));
    }
    let class_count = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    WindowDataset::new(Tensor::new(vec![n, t, d], data)?, labels, class_count, channel_names)
}

/// Write `ds` as a window CSV plus labels sidecar. Values use the shortest
/// representation that parses back to the same `f32`.
pub fn save_window_csv(ds: &WindowDataset, path: &Path) -> Result<()> {
    let (t, d) = (ds.steps(), ds.channels());
    let mut body = String::from("sample_id,t");
    for j in 0..d {
        body.push_str(&format!(",d_{j}"));
    }
    body.push('\n');
    for i in 0..ds.len() {
        let w = ds.window(i);
        for step in 0..t {
            body.push_str(&format!("{i},{step}"));
            for v in &w[step * d..(step + 1) * d] {
                body.push_str(&format!(",{v}"));
            }
            body.push('\n');
        }
    }
    crate::fsutil::write_atomic(path, body.as_bytes())?;
    let mut lbl = String::from("sample_id,label\n");
    for (i, l) in ds.labels.iter().enumerate() {
        lbl.push_str(&format!("{i},{l}\n"));
    }
    crate::fsutil::write_atomic(&labels_path(path), lbl.as_bytes())
}

// ---------------------------------------------------------------------------
// Split and normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train: 0.64,
            val: 0.16,
            test: 0.20,
            seed,
        }
    }

    /// Partition sizes for `n` samples: floors for train and val, the rest
    /// for test.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        let total = self.train + self.val + self.test;
        if (total - 1.0).abs() > 1e-9 || self.train < 0.0 || self.val < 0.0 || self.test < 0.0 {
            return Err(Error::Argument(format!(
                "split fractions must be non-negative and sum to 1, got {total}"
            )));
        }
        // the epsilon absorbs products such as 0.64 * 25 = 15.999..
        let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let tr = floor(self.train);
        let va = floor(self.val).min(n - tr);
        Ok((tr, va, n - tr - va))
    }
}

/// Seeded shuffle, then train / val / test by [`SplitSpec::sizes`].
pub fn split(dataset: &WindowDataset, spec: &SplitSpec) -> Result<(WindowDataset, WindowDataset, WindowDataset)> {
    let n = dataset.len();
    if n < 5 {
        return Err(Error::Argument(format!("need at least 5 samples to split, got {n}")));
    }
    let (tr, va, _) = spec.sizes(n)?;
    let perm = SeededRng::new(spec.seed).permutation(n);
    Ok((
        dataset.subset(&perm[..tr]),
        dataset.subset(&perm[tr..tr + va]),
        dataset.subset(&perm[tr + va..]),
    ))
}

pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(train: &WindowDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Argument("cannot fit normalization on an empty dataset".into()));
        }
        let d = train.channels();
        let count = (train.len() * train.steps()) as f64;
        let mut mean = vec![0.0; d];
        for row in train.samples.data().chunks(d) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; d];
        for row in train.samples.data().chunks(d) {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let std = var.into_iter().map(|s| (s / count).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, ds: &WindowDataset) -> Result<WindowDataset> {
        let d = ds.channels();
        if self.mean.len() != d {
            return Err(Error::Dimension(format!(
                "stats for {} channels, dataset has {d}",
                self.mean.len()
            )));
        }
        let mut out = ds.clone();
        for row in out.samples.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        Ok(out)
    }
}

/// Fit statistics on `train` and apply them to `train` and every `other`.
pub fn normalize(
    train: &WindowDataset,
    others: &[&WindowDataset],
) -> Result<(WindowDataset, Vec<WindowDataset>, NormStats)> {
    let stats = NormStats::fit(train)?;
    let tr = stats.apply(train)?;
    let rest = others.iter().map(|o| stats.apply(o)).collect::<Result<Vec<_>>>()?;
    Ok((tr, rest, stats))
}

// ---------------------------------------------------------------------------
// Synthetic sinusoids
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub steps: usize,
    pub channels: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(classes: usize, per_class: usize, steps: usize, channels: usize, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            steps,
            channels,
            noise: 0.3,
            seed,
        }
    }

    /// Whole cycles per window for class `c`.
    pub fn cycles(&self, class: usize) -> usize {
        (self.steps / 16).max(1) * (class + 1)
    }
}

/// Class `c` is a unit sinusoid with [`SynthSpec::cycles`] periods per window
/// on every channel, each channel with its own random phase, plus Gaussian
/// noise. Samples are interleaved by class.
pub fn synth_generate(spec: &SynthSpec) -> Result<WindowDataset> {
    if spec.classes < 2 {
        return Err(Error::Argument("synthetic data needs at least 2 classes".into()));
    }
    if spec.per_class == 0 || spec.steps == 0 || spec.channels == 0 {
        return Err(Error::Argument("synthetic sizes must be positive".into()));
    }
    if 2 * spec.cycles(spec.classes - 1) >= spec.steps {
        return Err(Error::Argument(format!(
            "{} classes do not fit below the Nyquist rate of a {}-step window",
            spec.classes, spec.steps
        )));
    }
    let mut rng = SeededRng::new(spec.seed);
    let n = spec.classes * spec.per_class;
    let (t_len, d) = (spec.steps, spec.channels);
    let mut data = Vec::with_capacity(n * t_len * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.classes;
        let omega = 2.0 * PI * spec.cycles(class) as f64 / t_len as f64;
        let phases: Vec<f64> = (0..d).map(|_| rng.uniform(0.0, 2.0 * PI)).collect();
        for t in 0..t_len {
            for phase in &phases {
                let v = (omega * t as f64 + phase).sin() + spec.noise * rng.normal();
                data.push(v as f32);
            }
        }
        labels.push(class);
    }
    WindowDataset::new(
        Tensor::new(vec![n, t_len, d], data)?,
        labels,
        spec.classes,
        (0..d).map(|j| format!("d_{j}")).collect(),
    )
}
