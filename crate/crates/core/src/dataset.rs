//! Labeled image collections: directory ingest, class balancing, stratified
//! splitting, merging and the line-delimited manifest format.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::seed;

/// The six wound categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    BG,
    D,
    N,
    P,
    S,
    V,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 6] = [
        ClassLabel::BG,
        ClassLabel::D,
        ClassLabel::N,
        ClassLabel::P,
        ClassLabel::S,
        ClassLabel::V,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ClassLabel::BG => "BG",
            ClassLabel::D => "D",
            ClassLabel::N => "N",
            ClassLabel::P => "P",
            ClassLabel::S => "S",
            ClassLabel::V => "V",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ClassLabel::BG => "Background (class BG)",
            ClassLabel::D => "Diabetic (class D)",
            ClassLabel::N => "Not an Ulcer (class N)",
            ClassLabel::P => "Pressure (class P)",
            ClassLabel::S => "Surgical (class S)",
            ClassLabel::V => "Venous (class V)",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassLabel::ALL
            .into_iter()
            .find(|l| l.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Real,
    GeometricAug,
    GanSynthetic,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::GeometricAug => "geometric-aug",
            Origin::GanSynthetic => "gan-synthetic",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub pixels: Arc<Image>,
    pub label: ClassLabel,
    /// Stable provenance key; for ingested files the path relative to the root.
    pub source_id: String,
    pub origin: Origin,
    /// Backing file, when the pixels came from disk unchanged.
    pub file: Option<PathBuf>,
}

impl ImageSample {
    pub fn new(pixels: Image, label: ClassLabel, source_id: impl Into<String>, origin: Origin) -> Self {
        ImageSample {
            pixels: Arc::new(pixels),
            label,
            source_id: source_id.into(),
            origin,
            file: None,
        }
    }
}

pub type ClassCounts = BTreeMap<ClassLabel, usize>;

fn empty_counts() -> ClassCounts {
    ClassLabel::ALL.into_iter().map(|l| (l, 0)).collect()
}

/// Ordered samples sharing one shape. `class_counts` always mirrors the
/// label histogram, with an entry (possibly zero) for every class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<ImageSample>,
    class_counts: ClassCounts,
    shape: Shape,
}

impl LabeledDataset {
    pub fn empty(shape: Shape) -> Self {
        LabeledDataset {
            samples: Vec::new(),
            class_counts: empty_counts(),
            shape,
        }
    }

    pub fn new(shape: Shape, samples: Vec<ImageSample>) -> Result<Self> {
        let mut class_counts = empty_counts();
        for s in &samples {
            if s.pixels.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape.to_string(),
                    actual: format!("{} ({})", s.pixels.shape(), s.source_id),
                });
            }
            *class_counts.entry(s.label).or_default() += 1;
        }
        Ok(LabeledDataset {
            samples,
            class_counts,
            shape,
        })
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<ImageSample> {
        self.samples
    }

    pub fn class_counts(&self) -> &ClassCounts {
        &self.class_counts
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.class_counts.get(&label).copied().unwrap_or(0)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Classes with at least one sample, in canonical order.
    pub fn present_classes(&self) -> Vec<ClassLabel> {
        self.class_counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&l, _)| l)
            .collect()
    }

    pub fn filter_class(&self, label: ClassLabel) -> LabeledDataset {
        let samples = self
            .samples
            .iter()
            .filter(|s| s.label == label)
            .cloned()
            .collect();
        LabeledDataset::new(self.shape, samples).expect("subset keeps shape")
    }

    pub fn source_ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.source_id.as_str()).collect()
    }

    /// SHA-256 over labels, provenance and pixel bits, in sample order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.shape.to_string().as_bytes());
        for s in &self.samples {
            hasher.update(s.source_id.as_bytes());
            hasher.update([0u8]);
            hasher.update(s.label.code().as_bytes());
            hasher.update(s.origin.as_str().as_bytes());
            for v in s.pixels.data() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct Ingested {
    pub dataset: LabeledDataset,
    /// Files that were skipped, with the reason.
    pub warnings: Vec<String>,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Loads `root/{BG,D,N,P,S,V}/*.{png,jpg}`, resizing every image to `shape`.
///
/// Decoding runs in parallel; the resulting order is lexicographic by the
/// relative path, which is also each sample's `source_id`.
pub fn ingest(root: &Path, shape: Shape) -> Result<Ingested> {
    shape.validate()?;
    let missing: Vec<String> = ClassLabel::ALL
        .iter()
        .filter(|l| !root.join(l.code()).is_dir())
        .map(|l| l.code().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingClassDirs {
            root: root.to_path_buf(),
            missing,
        });
    }
    let abs_root = fs::canonicalize(root).map_err(|e| Error::io(root, e))?;

    let mut warnings = Vec::new();
    let mut entries: Vec<(String, ClassLabel, PathBuf)> = Vec::new();
    for label in ClassLabel::ALL {
        let dir = abs_root.join(label.code());
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if !path.is_file() {
                continue;
            }
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            let source_id = format!("{}/{}", label.code(), name);
            if !has_image_extension(&path) {
                warnings.push(format!("{source_id}: not a png/jpg file, skipped"));
                continue;
            }
            entries.push((source_id, label, path));
        }
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));

    let decoded: Vec<_> = entries
        .par_iter()
        .map(|(_, _, path)| Image::load(path, shape))
        .collect();

    let mut samples = Vec::with_capacity(entries.len());
    for ((source_id, label, path), result) in entries.into_iter().zip(decoded) {
        match result {
            Ok(pixels) => samples.push(ImageSample {
                pixels: Arc::new(pixels),
                label,
                source_id,
                origin: Origin::Real,
                file: Some(path),
            }),
            Err(e) => {
                log::warn!("skipping {source_id}: {e}");
                warnings.push(format!("{source_id}: {e}"));
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    let dataset = LabeledDataset::new(shape, samples)?;
    Ok(Ingested { dataset, warnings })
}

fn indices_by_class(ds: &LabeledDataset) -> BTreeMap<ClassLabel, Vec<usize>> {
    let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    by_class
}

fn select(ds: &LabeledDataset, mut keep: Vec<usize>) -> LabeledDataset {
    keep.sort_unstable();
    let samples = keep.into_iter().map(|i| ds.samples[i].clone()).collect();
    LabeledDataset::new(ds.shape, samples).expect("subset keeps shape")
}

/// Selective sampling: at most `per_class` samples of each class, drawn
/// uniformly without replacement. Surviving samples keep their input order.
pub fn balance(ds: &LabeledDataset, per_class: usize, seed: u64, strict: bool) -> Result<LabeledDataset> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be at least 1".into()));
    }
    let by_class = indices_by_class(ds);
    if strict {
        for label in ClassLabel::ALL {
            let count = by_class.get(&label).map_or(0, Vec::len);
            if count < per_class {
                return Err(Error::UnderPopulated {
                    class: label.code().to_string(),
                    count,
                    required: per_class,
                });
            }
        }
    }
    let mut keep = Vec::new();
    for (label, idx) in &by_class {
        let take = per_class.min(idx.len());
        let mut rng = seed::substream(seed, label.code());
        keep.extend(index::sample(&mut rng, idx.len(), take).into_iter().map(|j| idx[j]));
    }
    Ok(select(ds, keep))
}

fn round_half_up(x: f64) -> usize {
    // Absorb representation error such as 0.8 * 75 = 60.00000000000001.
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Number of samples of a `count`-sized class that go to the training side.
pub fn train_count(train_fraction: f64, count: usize) -> usize {
    round_half_up(train_fraction * count as f64).min(count)
}

/// Partitions `ds` into train and test sides. Both sides keep input order.
pub fn split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    if spec.stratified {
        let by_class = indices_by_class(ds);
        if let Some((label, _)) = by_class.iter().find(|(_, idx)| idx.len() < 2) {
            return Err(Error::UnderPopulated {
                class: label.code().to_string(),
                count: 1,
                required: 2,
            });
        }
        for (label, mut idx) in by_class {
            let mut rng = seed::substream(spec.seed, label.code());
            idx.shuffle(&mut rng);
            let n_train = train_count(spec.train_fraction, idx.len());
            train.extend_from_slice(&idx[..n_train]);
            test.extend_from_slice(&idx[n_train..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        let mut rng = seed::substream(spec.seed, "unstratified");
        idx.shuffle(&mut rng);
        let n_train = train_count(spec.train_fraction, idx.len());
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    Ok((select(ds, train), select(ds, test)))
}

/// Concatenation: `a`'s samples followed by `b`'s.
pub fn merge(a: &LabeledDataset, b: &LabeledDataset) -> Result<LabeledDataset> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            expected: a.shape.to_string(),
            actual: b.shape.to_string(),
        });
    }
    let mut samples = Vec::with_capacity(a.len() + b.len());
    samples.extend_from_slice(&a.samples);
    samples.extend_from_slice(&b.samples);
    LabeledDataset::new(a.shape, samples)
}

// Manifests

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    Train,
    Test,
}

/// One line of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub source_id: String,
    pub label: ClassLabel,
    pub origin: Origin,
    pub split: Option<SplitSide>,
    /// Image location relative to the manifest's directory.
    pub file: String,
}

fn sanitize_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn relative_file(base: &Path, target: &Path) -> String {
    let rel = pathdiff::diff_paths(target, base).unwrap_or_else(|| target.to_path_buf());
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Writes a manifest at `path`. Samples not backed by a file are exported as
/// 16-bit PNGs under `<manifest dir>/images/<origin>/`.
pub fn write_manifest(
    path: &Path,
    parts: &[(&LabeledDataset, Option<SplitSide>)],
) -> Result<Vec<ManifestRecord>> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let abs_dir = fs::canonicalize(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::new();
    for (ds, side) in parts {
        for s in ds.samples() {
            let file = match (&s.file, s.origin) {
                (Some(f), Origin::Real) => relative_file(&abs_dir, f),
                _ => {
                    let side_dir = side.map_or("all", |x| match x {
                        SplitSide::Train => "train",
                        SplitSide::Test => "test",
                    });
                    let rel: PathBuf = [
                        "images",
                        s.origin.as_str(),
                        side_dir,
                        &s.source_id
                            .split('/')
                            .map(sanitize_component)
                            .collect::<Vec<_>>()
                            .join("/"),
                    ]
                    .iter()
                    .collect();
                    let rel = rel.with_extension("png");
                    let target = abs_dir.join(&rel);
                    if let Some(parent) = target.parent() {
                        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                    }
                    s.pixels.save_png16(&target)?;
                    relative_file(&abs_dir, &target)
                }
            };
            records.push(ManifestRecord {
                source_id: s.source_id.clone(),
                label: s.label,
                origin: s.origin,
                split: *side,
                file,
            });
        }
    }
    write_records(path, &records)?;
    Ok(records)
}

pub fn write_records(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Loads the samples of a manifest, optionally restricted to one split side.
pub fn load_manifest(path: &Path, shape: Shape, side: Option<SplitSide>) -> Result<LabeledDataset> {
    let records = read_records(path)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let chosen: Vec<&ManifestRecord> = records
        .iter()
        .filter(|r| side.is_none() || r.split == side)
        .collect();
    let loaded: Vec<Result<ImageSample>> = chosen
        .par_iter()
        .map(|r| {
            let file = dir.join(&r.file);
            let pixels = Image::load(&file, shape)?;
            Ok(ImageSample {
                pixels: Arc::new(pixels),
                label: r.label,
                source_id: r.source_id.clone(),
                origin: r.origin,
                file: Some(fs::canonicalize(&file).map_err(|e| Error::io(&file, e))?),
            })
        })
        .collect();
    let samples = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(shape, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(per_class: usize) -> LabeledDataset {
        let shape = Shape::new(4, 4, 3);
        let mut samples = Vec::new();
        for label in ClassLabel::ALL {
            for i in 0..per_class {
                let v = (i as f32 + 1.0) / (per_class as f32 + 1.0);
                samples.push(ImageSample::new(
                    Image::filled(shape, v),
                    label,
                    format!("{}/{i:04}.png", label.code()),
                    Origin::Real,
                ));
            }
        }
        LabeledDataset::new(shape, samples).unwrap()
    }

    fn with_counts(counts: &[(ClassLabel, usize)]) -> LabeledDataset {
        let shape = Shape::new(2, 2, 1);
        let mut samples = Vec::new();
        for &(label, n) in counts {
            for i in 0..n {
                samples.push(ImageSample::new(
                    Image::filled(shape, 0.5),
                    label,
                    format!("{}/{i:04}.png", label.code()),
                    Origin::Real,
                ));
            }
        }
        LabeledDataset::new(shape, samples).unwrap()
    }

    pub(crate) fn table_one() -> LabeledDataset {
        use ClassLabel::*;
        with_counts(&[(V, 185), (BG, 75), (D, 139), (N, 75), (P, 100), (S, 122)])
    }

    #[test]
    fn catalog_has_six_unique_codes() {
        let mut codes: Vec<_> = ClassLabel::ALL.iter().map(|l| l.code()).collect();
        codes.dedup();
        assert_eq!(codes.len(), 6);
        assert_eq!(ClassLabel::V.display_name(), "Venous (class V)");
        assert_eq!("bg".parse::<ClassLabel>().unwrap(), ClassLabel::BG);
        assert!("X".parse::<ClassLabel>().is_err());
    }

    #[test]
    fn balance_table_one_to_75() {
        let ds = table_one();
        assert_eq!(ds.count(ClassLabel::V), 185);
        let b = balance(&ds, 75, 3, true).unwrap();
        assert_eq!(b.len(), 450);
        assert!(b.class_counts().values().all(|&n| n == 75));
    }

    #[test]
    fn balance_at_minimum_keeps_class_unchanged() {
        let ds = table_one();
        let b = balance(&ds, 75, 11, true).unwrap();
        let before: Vec<_> = ds.filter_class(ClassLabel::N).source_ids().iter().map(|s| s.to_string()).collect();
        let after: Vec<_> = b.filter_class(ClassLabel::N).source_ids().iter().map(|s| s.to_string()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn balance_caps_at_availability_when_not_strict() {
        let b = balance(&fixture(2), 3, 0, false).unwrap();
        assert!(b.class_counts().values().all(|&n| n == 2));
        match balance(&fixture(2), 3, 0, true) {
            Err(Error::UnderPopulated { class, count, .. }) => {
                assert_eq!(class, "BG");
                assert_eq!(count, 2);
            }
            other => panic!("expected UnderPopulated, got {other:?}"),
        }
    }

    #[test]
    fn split_75_gives_60_15() {
        let ds = balance(&table_one(), 75, 1, true).unwrap();
        let (train, test) = split(&ds, &SplitSpec { seed: 5, ..Default::default() }).unwrap();
        for label in ClassLabel::ALL {
            assert_eq!(train.count(label), 60);
            assert_eq!(test.count(label), 15);
        }
    }

    #[test]
    fn split_half_on_two_per_class() {
        let spec = SplitSpec { train_fraction: 0.5, seed: 1, stratified: true };
        let (train, test) = split(&fixture(2), &spec).unwrap();
        assert!(train.class_counts().values().all(|&n| n == 1));
        assert!(test.class_counts().values().all(|&n| n == 1));
    }

    #[test]
    fn split_seed_behaviour() {
        let ds = fixture(20);
        let ids = |seed| {
            let (train, _) = split(&ds, &SplitSpec { seed, ..Default::default() }).unwrap();
            train.source_ids().iter().map(|s| s.to_string()).collect::<Vec<_>>()
        };
        assert_eq!(ids(7), ids(7));
        assert_ne!(ids(7), ids(8));
    }

    #[test]
    fn stratified_split_rejects_singleton_class() {
        let ds = with_counts(&[(ClassLabel::D, 1), (ClassLabel::P, 4)]);
        match split(&ds, &SplitSpec::default()) {
            Err(Error::UnderPopulated { class, .. }) => assert_eq!(class, "D"),
            other => panic!("expected error, got {other:?}"),
        }
        let unstratified = SplitSpec { stratified: false, ..Default::default() };
        assert!(split(&ds, &unstratified).is_ok());
    }

    #[test]
    fn invalid_train_fraction() {
        for f in [0.0, 1.0, -0.1, 1.5] {
            let spec = SplitSpec { train_fraction: f, ..Default::default() };
            assert!(split(&fixture(2), &spec).is_err());
        }
    }

    #[test]
    fn merge_counts() {
        let ds = fixture(2);
        let doubled = merge(&ds, &ds).unwrap();
        assert!(doubled.class_counts().values().all(|&n| n == 4));
        let same = merge(&ds, &LabeledDataset::empty(ds.shape())).unwrap();
        assert_eq!(same.class_counts(), ds.class_counts());
        assert!(merge(&ds, &LabeledDataset::empty(Shape::new(2, 2, 3))).is_err());
    }

    #[test]
    fn merge_inflates_class_d_by_fourteen() {
        let train = with_counts(&ClassLabel::ALL.map(|l| (l, 60)));
        let shape = train.shape();
        let synthetic: Vec<_> = (0..14)
            .map(|i| ImageSample::new(Image::filled(shape, 0.3), ClassLabel::D, format!("gan/D/{i}"), Origin::GanSynthetic))
            .collect();
        let gan = LabeledDataset::new(shape, synthetic).unwrap();
        let merged = merge(&train, &gan).unwrap();
        assert_eq!(merged.count(ClassLabel::D), 74);
        for l in ClassLabel::ALL.into_iter().filter(|&l| l != ClassLabel::D) {
            assert_eq!(merged.count(l), 60);
        }
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(train_count(0.5, 3), 2);
        assert_eq!(train_count(0.8, 75), 60);
        assert_eq!(train_count(0.8, 2), 2);
        assert_eq!(train_count(0.3, 5), 2);
    }
}
