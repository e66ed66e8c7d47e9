//! Dataset ingestion: manifests, speaker registry, phoneme alignments, seeded
//! splits and fixed-length training chunks.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{self, Waveform, MODEL_SAMPLE_RATE, PEAK_LEVEL};
use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

/// Ordered, duplicate-free speaker list. A speaker's position is its one-hot index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct SpeakerRegistry {
    speakers: Vec<String>,
}

impl SpeakerRegistry {
    /// Builds a registry sorted lexicographically, dropping repeats.
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        Self {
            speakers: set.into_iter().collect(),
        }
    }

    /// Keeps the given order; fails on duplicates.
    pub fn from_ordered(speakers: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &speakers {
            if !seen.insert(s.as_str()) {
                return Err(Error::Validation(format!("duplicate speaker id {s:?}")));
            }
        }
        Ok(Self { speakers })
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.speakers
    }

    pub fn index(&self, id: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == id)
    }

    pub fn lookup(&self, id: &str) -> Result<usize> {
        self.index(id).ok_or_else(|| Error::UnknownSpeaker {
            name: id.to_string(),
            known: self.speakers.clone(),
        })
    }

    pub fn one_hot(&self, index: usize) -> Result<Vec<f32>> {
        if index >= self.len() {
            return Err(Error::Argument(format!(
                "speaker index {index} outside registry of {}",
                self.len()
            )));
        }
        let mut v = vec![0.0; self.len()];
        v[index] = 1.0;
        Ok(v)
    }
}

impl TryFrom<Vec<String>> for SpeakerRegistry {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::from_ordered(v)
    }
}

impl From<SpeakerRegistry> for Vec<String> {
    fn from(r: SpeakerRegistry) -> Self {
        r.speakers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split token {other:?}"))),
        }
    }
}

/// One line of a manifest, as written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub path: String,
    pub speaker: String,
    #[serde(default)]
    pub alignment: Option<String>,
    /// Pins the row to a split. Rows without it are assigned by the seeded shuffle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UtteranceRecord {
    pub audio_path: PathBuf,
    pub speaker: usize,
    pub split: Split,
    pub alignment_path: Option<PathBuf>,
}

/// Parses manifest text (one JSON object per line, blank lines ignored).
/// Pure: no filesystem access.
pub fn parse_manifest(text: &str) -> Result<Vec<(usize, ManifestRow)>> {
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(trimmed)
            .map_err(|e| Error::Validation(format!("manifest line {line_no}: {e}")))?;
        if row.speaker.is_empty() {
            return Err(Error::Validation(format!("manifest line {line_no}: empty speaker")));
        }
        if let Some(s) = &row.split {
            s.parse::<Split>()
                .map_err(|e| Error::Validation(format!("manifest line {line_no}: {e}")))?;
        }
        if !seen.insert(row.path.clone()) {
            return Err(Error::Validation(format!(
                "manifest line {line_no}: duplicate path {:?}",
                row.path
            )));
        }
        rows.push((line_no, row));
    }
    Ok(rows)
}

/// Seeded Fisher-Yates permutation of `0..n`: for `i` from `n-1` down to `1`,
/// draw `j` uniformly in `0..=i` from a ChaCha8 stream seeded with `seed` and swap.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i as u64) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Assigns splits to `n` items: the first `round(n * train_fraction)` positions of
/// the seeded permutation are train, the rest test.
pub fn assign_splits(n: usize, seed: u64, train_fraction: f64) -> Vec<Split> {
    let n_train = (n as f64 * train_fraction).round() as usize;
    let mut out = vec![Split::Test; n];
    for &i in seeded_permutation(n, seed).iter().take(n_train) {
        out[i] = Split::Train;
    }
    out
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub records: Vec<UtteranceRecord>,
    pub registry: SpeakerRegistry,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Loads and validates a manifest. Relative paths resolve against the manifest's
/// directory and every referenced file must exist.
pub fn load_manifest(path: impl AsRef<Path>, seed: u64, train_fraction: f64) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let rows = parse_manifest(&text)?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let base = std::fs::canonicalize(&base).unwrap_or(base);
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let registry = SpeakerRegistry::from_names(rows.iter().map(|(_, r)| r.speaker.clone()));
    let unpinned: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, (_, r))| r.split.is_none())
        .map(|(i, _)| i)
        .collect();
    let computed = assign_splits(unpinned.len(), seed, train_fraction);
    let mut splits = vec![Split::Train; rows.len()];
    for (slot, &i) in unpinned.iter().enumerate() {
        splits[i] = computed[slot];
    }
    let mut records = Vec::with_capacity(rows.len());
    for (i, (line_no, row)) in rows.into_iter().enumerate() {
        let audio_path = resolve(&row.path);
        if !audio_path.is_file() {
            return Err(Error::Load(format!(
                "manifest line {line_no}: audio file {} does not exist",
                audio_path.display()
            )));
        }
        let alignment_path = match &row.alignment {
            Some(a) => {
                let p = resolve(a);
                if !p.is_file() {
                    return Err(Error::Load(format!(
                        "manifest line {line_no}: alignment file {} does not exist",
                        p.display()
                    )));
                }
                Some(p)
            }
            None => None,
        };
        if let Some(s) = &row.split {
            splits[i] = s.parse()?;
        }
        records.push(UtteranceRecord {
            audio_path,
            speaker: registry.lookup(&row.speaker)?,
            split: splits[i],
            alignment_path,
        });
    }
    Ok(Manifest { records, registry })
}

/// A labeled phoneme interval `[start, end)` in samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeInterval {
    pub start: u64,
    pub end: u64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeAlignment {
    pub intervals: Vec<PhonemeInterval>,
    pub sample_rate: u32,
}

impl PhonemeAlignment {
    pub fn new(intervals: Vec<PhonemeInterval>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Validation("alignment sample rate must be positive".into()));
        }
        for (i, iv) in intervals.iter().enumerate() {
            if iv.end <= iv.start {
                return Err(Error::Validation(format!(
                    "interval {i} ({}) has end {} <= start {}",
                    iv.label, iv.end, iv.start
                )));
            }
            if iv.label.is_empty() {
                return Err(Error::Validation(format!("interval {i} has an empty label")));
            }
            if i > 0 && iv.start < intervals[i - 1].end {
                return Err(Error::Validation(format!(
                    "interval {i} starts at {} before previous end {}",
                    iv.start,
                    intervals[i - 1].end
                )));
            }
        }
        Ok(Self {
            intervals,
            sample_rate,
        })
    }

    /// Parses `start end label` lines (TIMIT `.phn` layout) in a sample clock of `sample_rate`.
    pub fn parse(text: &str, sample_rate: u32) -> Result<Self> {
        let mut intervals = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(first) = parts.next() else { continue };
            let bad = |what: &str| Error::Validation(format!("alignment line {}: {what}", i + 1));
            let start: u64 = first.parse().map_err(|_| bad("bad start sample"))?;
            let end: u64 = parts
                .next()
                .ok_or_else(|| bad("missing end sample"))?
                .parse()
                .map_err(|_| bad("bad end sample"))?;
            let label = parts.next().ok_or_else(|| bad("missing label"))?;
            if parts.next().is_some() {
                return Err(bad("trailing fields"));
            }
            intervals.push(PhonemeInterval {
                start,
                end,
                label: label.to_string(),
            });
        }
        Self::new(intervals, sample_rate)
    }

    pub fn read(path: impl AsRef<Path>, sample_rate: u32) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, sample_rate)
    }

    pub fn to_text(&self) -> String {
        self.intervals
            .iter()
            .map(|iv| format!("{} {} {}\n", iv.start, iv.end, iv.label))
            .collect()
    }

    /// Rescales boundaries into another sample clock. Intervals that collapse to
    /// zero length after rounding are dropped.
    pub fn to_rate(&self, rate: u32) -> Result<Self> {
        if rate == self.sample_rate {
            return Ok(self.clone());
        }
        let scale = rate as f64 / self.sample_rate as f64;
        let conv = |s: u64| (s as f64 * scale).round() as u64;
        let mut intervals: Vec<PhonemeInterval> = Vec::with_capacity(self.intervals.len());
        for iv in &self.intervals {
            let start = conv(iv.start).max(intervals.last().map_or(0, |p| p.end));
            let end = conv(iv.end);
            if end > start {
                intervals.push(PhonemeInterval {
                    start,
                    end,
                    label: iv.label.clone(),
                });
            }
        }
        Self::new(intervals, rate)
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.intervals.iter().map(|iv| iv.label.as_str()).collect()
    }
}

/// A training chunk; `padded` is set when the source was shorter than the chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub waveform: Waveform,
    pub start: usize,
    pub padded: bool,
}

/// Draws a contiguous `chunk_len` slice at a uniform offset. Short inputs are
/// right-padded with zeros.
pub fn chunk<R: Rng + ?Sized>(w: &Waveform, chunk_len: usize, rng: &mut R) -> Result<Chunk> {
    if chunk_len == 0 {
        return Err(Error::Argument("chunk length must be at least 1".into()));
    }
    if w.len() <= chunk_len {
        let mut samples = w.samples.clone();
        let padded = samples.len() < chunk_len;
        samples.resize(chunk_len, 0.0);
        return Ok(Chunk {
            waveform: Waveform {
                samples,
                sample_rate: w.sample_rate,
            },
            start: 0,
            padded,
        });
    }
    let start = rng.random_range(0..=w.len() - chunk_len);
    Ok(Chunk {
        waveform: Waveform {
            samples: w.samples[start..start + chunk_len].to_vec(),
            sample_rate: w.sample_rate,
        },
        start,
        padded: false,
    })
}

/// An utterance resident in memory at the model sample rate.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub waveform: Waveform,
    pub speaker: usize,
    pub split: Split,
    /// Boundaries in model-rate samples.
    pub alignment: Option<PhonemeAlignment>,
}

/// Loaded corpus ready for training and probing.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub registry: SpeakerRegistry,
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn new(registry: SpeakerRegistry, utterances: Vec<Utterance>) -> Result<Self> {
        if let Some(u) = utterances.iter().find(|u| u.speaker >= registry.len()) {
            return Err(Error::Validation(format!(
                "utterance {} references speaker index {} outside registry",
                u.id, u.speaker
            )));
        }
        Ok(Self {
            registry,
            utterances,
        })
    }

    /// Reads, resamples to the model rate and peak-normalizes every record.
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let mut utterances = Vec::with_capacity(manifest.records.len());
        for rec in &manifest.records {
            let raw = Waveform::read(&rec.audio_path)?;
            let native_rate = raw.sample_rate;
            let waveform = audio::resample(&raw, MODEL_SAMPLE_RATE)?.peak_normalized(PEAK_LEVEL);
            let alignment = match &rec.alignment_path {
                Some(p) => Some(PhonemeAlignment::read(p, native_rate)?.to_rate(MODEL_SAMPLE_RATE)?),
                None => None,
            };
            utterances.push(Utterance {
                id: rec.audio_path.display().to_string(),
                waveform,
                speaker: rec.speaker,
                split: rec.split,
                alignment,
            });
        }
        Self::new(manifest.registry.clone(), utterances)
    }

    pub fn split(&self, split: Split) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == split).collect()
    }

    /// Sorted union of alignment labels.
    pub fn phoneme_inventory(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .utterances
            .iter()
            .filter_map(|u| u.alignment.as_ref())
            .flat_map(|a| a.intervals.iter().map(|iv| iv.label.as_str()))
            .collect();
        set.into_iter().map(str::to_string).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_lexicographic_and_unique() {
        let r = SpeakerRegistry::from_names(["p2", "b", "p2", "a"]);
        assert_eq!(r.names(), ["a", "b", "p2"]);
        assert_eq!(r.index("p2"), Some(2));
        assert!(SpeakerRegistry::from_ordered(vec!["x".into(), "x".into()]).is_err());
        match r.lookup("zz") {
            Err(Error::UnknownSpeaker { known, .. }) => assert_eq!(known.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn registry_serde_preserves_order() {
        let r = SpeakerRegistry::from_ordered(vec!["z".into(), "a".into()]).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"["z","a"]"#);
        let back: SpeakerRegistry = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        assert!(serde_json::from_str::<SpeakerRegistry>(r#"["a","a"]"#).is_err());
    }

    #[test]
    fn one_hot_has_single_hot_entry() {
        let r = SpeakerRegistry::from_names(["a", "b", "c"]);
        assert_eq!(r.one_hot(1).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(r.one_hot(3).is_err());
    }

    #[test]
    fn manifest_parse_errors() {
        let dup = "{\"path\":\"a.wav\",\"speaker\":\"A\",\"alignment\":null}\n{\"path\":\"a.wav\",\"speaker\":\"B\",\"alignment\":null}";
        assert!(matches!(parse_manifest(dup), Err(Error::Validation(_))));
        let bad_split = "{\"path\":\"a.wav\",\"speaker\":\"A\",\"alignment\":null,\"split\":\"dev\"}";
        assert!(matches!(parse_manifest(bad_split), Err(Error::Validation(_))));
        assert!(parse_manifest("{\"path\":1}").is_err());
        assert!(parse_manifest("\n\n").unwrap().is_empty());
    }

    #[test]
    fn splits_partition_and_respect_fraction() {
        let s = assign_splits(100, 7, 0.9);
        assert_eq!(s.iter().filter(|x| **x == Split::Train).count(), 90);
        assert_eq!(s, assign_splits(100, 7, 0.9));
        assert_ne!(s, assign_splits(100, 8, 0.9));
    }

    #[test]
    fn alignment_validation() {
        assert!(PhonemeAlignment::parse("0 10 a\n10 20 b\n", 16000).is_ok());
        assert!(PhonemeAlignment::parse("0 10 a\n5 20 b\n", 16000).is_err());
        assert!(PhonemeAlignment::parse("10 10 a\n", 16000).is_err());
        assert!(PhonemeAlignment::parse("0 x a\n", 16000).is_err());
        assert!(PhonemeAlignment::parse("0 10\n", 16000).is_err());
    }

    #[test]
    fn alignment_rate_conversion() {
        let a = PhonemeAlignment::parse("0 1600 h#\n1600 16000 aa\n", 16000).unwrap();
        let b = a.to_rate(22050).unwrap();
        assert_eq!(b.intervals[0].end, 2205);
        assert_eq!(b.intervals[1].start, 2205);
        assert_eq!(b.intervals[1].end, 22050);
        assert_eq!(PhonemeAlignment::parse(&b.to_text(), 22050).unwrap(), b);
    }

    #[test]
    fn chunk_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let exact = Waveform::new(vec![0.5; 8192], 22050).unwrap();
        let c = chunk(&exact, 8192, &mut rng).unwrap();
        assert_eq!(c.waveform, exact);
        assert!(!c.padded);

        let short = Waveform::new(vec![0.5; 4096], 22050).unwrap();
        let c = chunk(&short, 8192, &mut rng).unwrap();
        assert!(c.padded);
        assert_eq!(c.waveform.len(), 8192);
        assert!(c.waveform.samples[4096..].iter().all(|&s| s == 0.0));

        let long = Waveform::new((0..20000).map(|i| i as f32 / 20000.0).collect(), 22050).unwrap();
        let a = chunk(&long, 8192, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = chunk(&long, 8192, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.start, b.start);
        assert_eq!(a.waveform.samples[0], long.samples[a.start]);
        assert!(chunk(&long, 0, &mut rng).is_err());
    }
}
