//! Annotated text+image posts: data model, legacy import and the canonical
//! JSONL storage format.
//!
//! Span indices are word indices over the whitespace-split text.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::mate::Tag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Negative,
    Neutral,
    Positive,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Negative, Polarity::Neutral, Polarity::Positive];

    /// Class index used by the classifier: negative=0, neutral=1, positive=2.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Legacy polarity codes: -1, 0, 1.
    pub fn from_code(code: i32) -> Option<Self> {
        match code {
            -1 => Some(Polarity::Negative),
            0 => Some(Polarity::Neutral),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
            Polarity::Positive => "positive",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(Polarity::Negative),
            "neutral" => Ok(Polarity::Neutral),
            "positive" => Ok(Polarity::Positive),
            other => Err(Error::Config(format!("unknown polarity `{other}`"))),
        }
    }
}

/// One annotated aspect, inclusive word span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AspectAnnotation {
    #[serde(rename = "from_word")]
    pub begin_word: usize,
    #[serde(rename = "to_word")]
    pub end_word: usize,
    pub term: String,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    #[serde(rename = "image")]
    pub image_ref: Option<String>,
    #[serde(rename = "aspects")]
    pub annotations: Vec<AspectAnnotation>,
}

impl Sample {
    pub fn words(&self) -> Vec<&str> {
        self.text.split_whitespace().collect()
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }

    /// Checks span bounds, span ordering, overlap and term text.
    pub fn validate(&self) -> Result<()> {
        let words = self.words();
        let bad = |message: String| Error::Invariant {
            id: self.id.clone(),
            message,
        };
        let mut spans: Vec<(usize, usize)> = Vec::with_capacity(self.annotations.len());
        for ann in &self.annotations {
            if ann.begin_word > ann.end_word {
                return Err(bad(format!(
                    "span ({}, {}) has begin after end",
                    ann.begin_word, ann.end_word
                )));
            }
            if ann.end_word >= words.len() {
                return Err(bad(format!(
                    "span ({}, {}) exceeds {} words",
                    ann.begin_word,
                    ann.end_word,
                    words.len()
                )));
            }
            let joined = words[ann.begin_word..=ann.end_word].join(" ");
            if joined != ann.term {
                return Err(bad(format!(
                    "term `{}` does not match words `{joined}`",
                    ann.term
                )));
            }
            spans.push((ann.begin_word, ann.end_word));
        }
        spans.sort_unstable();
        for pair in spans.windows(2) {
            if pair[1].0 <= pair[0].1 {
                return Err(bad(format!(
                    "spans ({}, {}) and ({}, {}) overlap",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    /// Infers the split from a file stem (`train`, `dev`/`val`, `test`);
    /// anything else is treated as training data.
    pub fn from_path(path: &Path) -> Self {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        if stem.contains("test") {
            SplitName::Test
        } else if stem.contains("dev") || stem.contains("val") {
            SplitName::Dev
        } else {
            SplitName::Train
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub sentences: usize,
    pub aspects: usize,
    pub negative: usize,
    pub neutral: usize,
    pub positive: usize,
}

impl SplitStats {
    pub fn compute(samples: &[Sample]) -> Self {
        let mut stats = SplitStats {
            sentences: samples.len(),
            ..Default::default()
        };
        for ann in samples.iter().flat_map(|s| &s.annotations) {
            stats.aspects += 1;
            match ann.polarity {
                Polarity::Negative => stats.negative += 1,
                Polarity::Neutral => stats.neutral += 1,
                Polarity::Positive => stats.positive += 1,
            }
        }
        stats
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub samples: Vec<Sample>,
    pub stats: SplitStats,
}

impl DatasetSplit {
    pub fn new(name: SplitName, samples: Vec<Sample>) -> Self {
        let stats = SplitStats::compute(&samples);
        Self {
            name,
            samples,
            stats,
        }
    }

    /// Validates every sample and the stored statistics.
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            s.validate()?;
        }
        let recount = SplitStats::compute(&self.samples);
        if recount != self.stats {
            return Err(Error::Invariant {
                id: self.name.as_str().to_string(),
                message: format!("stored stats {:?} differ from recount {recount:?}", self.stats),
            });
        }
        Ok(())
    }

    pub fn sample(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

/// Per-word BIO tags for a sample's annotations.
pub fn word_tags(sample: &Sample) -> Result<Vec<Tag>> {
    sample.validate()?;
    let mut tags = vec![Tag::O; sample.word_count()];
    for ann in &sample.annotations {
        tags[ann.begin_word] = Tag::B;
        for t in &mut tags[ann.begin_word + 1..=ann.end_word] {
            *t = Tag::I;
        }
    }
    Ok(tags)
}

const PLACEHOLDER: &str = "$T$";

/// Imports the 4-line legacy format: sentence with `$T$`, aspect term,
/// polarity code, image id. Records sharing sentence and image merge into
/// one sample.
pub fn import_legacy_format(path: &Path, image_dir: &Path) -> Result<DatasetSplit> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines: Vec<&str> = raw.lines().collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if !lines.len().is_multiple_of(4) {
        let line = lines.len() - lines.len() % 4 + 1;
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!(
                "incomplete record: {} lines is not a multiple of 4",
                lines.len()
            ),
        });
    }

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "split".to_string());

    let mut samples: Vec<Sample> = Vec::new();
    let mut by_key: HashMap<(String, String), usize> = HashMap::new();

    for (record_idx, record) in lines.chunks(4).enumerate() {
        let first_line = record_idx * 4 + 1;
        let record_id = format!("{stem}:{first_line}");
        let (template, term, code, image_id) =
            (record[0].trim(), record[1].trim(), record[2].trim(), record[3].trim());

        let Some(at) = template.find(PLACEHOLDER) else {
            return Err(Error::Record {
                id: record_id,
                message: format!("sentence has no `{PLACEHOLDER}` placeholder"),
            });
        };
        if term.split_whitespace().next().is_none() {
            return Err(Error::Record {
                id: record_id,
                message: "empty aspect term".into(),
            });
        }
        let code: i32 = code.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: first_line + 2,
            message: format!("polarity code `{code}` is not an integer"),
        })?;
        let polarity = Polarity::from_code(code).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: first_line + 2,
            message: format!("polarity code {code} not in {{-1, 0, 1}}"),
        })?;

        let before: Vec<&str> = template[..at].split_whitespace().collect();
        let after: Vec<&str> = template[at + PLACEHOLDER.len()..].split_whitespace().collect();
        let term_words: Vec<&str> = term.split_whitespace().collect();
        let begin_word = before.len();
        let end_word = begin_word + term_words.len() - 1;
        let text = before
            .iter()
            .chain(&term_words)
            .chain(&after)
            .copied()
            .collect::<Vec<_>>()
            .join(" ");
        let annotation = AspectAnnotation {
            begin_word,
            end_word,
            term: term_words.join(" "),
            polarity,
        };

        let key = (text.clone(), image_id.to_string());
        let idx = *by_key.entry(key).or_insert_with(|| {
            let image_ref = if image_dir.join(image_id).is_file() {
                Some(image_id.to_string())
            } else {
                warn!(record = %record_id, image = image_id, "image not found; marking absent");
                None
            };
            samples.push(Sample {
                id: format!("{stem}-{}", samples.len()),
                text,
                image_ref,
                annotations: Vec::new(),
            });
            samples.len() - 1
        });
        let sample = &mut samples[idx];
        if sample.annotations.contains(&annotation) {
            continue;
        }
        let overlaps = sample
            .annotations
            .iter()
            .any(|a| a.begin_word <= annotation.end_word && annotation.begin_word <= a.end_word);
        if overlaps {
            warn!(record = %record_id, "aspect overlaps an earlier aspect of the same post; dropped");
            continue;
        }
        sample.annotations.push(annotation);
    }

    for s in &mut samples {
        s.annotations.sort_by_key(|a| a.begin_word);
    }
    let split = DatasetSplit::new(SplitName::from_path(path), samples);
    split.validate()?;
    Ok(split)
}

/// Writes one JSON object per sample.
pub fn export_canonical(split: &DatasetSplit, path: &Path) -> Result<()> {
    split.validate()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for sample in &split.samples {
        serde_json::to_writer(&mut out, sample)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_canonical(path: &Path) -> Result<DatasetSplit> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        sample.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(DatasetSplit::new(SplitName::from_path(path), samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mate::Tag::{B, I, O};

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn ann(b: usize, e: usize, term: &str, polarity: Polarity) -> AspectAnnotation {
        AspectAnnotation {
            begin_word: b,
            end_word: e,
            term: term.into(),
            polarity,
        }
    }

    #[test]
    fn legacy_record_with_placeholder() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("img_2.jpg"), b"x").unwrap();
        let p = write(
            dir.path(),
            "train.txt",
            "$T$ scoring the winning goal\nMessi\n1\nimg_2.jpg\n",
        );
        let split = import_legacy_format(&p, dir.path()).unwrap();
        assert_eq!(split.name, SplitName::Train);
        assert_eq!(split.samples.len(), 1);
        let s = &split.samples[0];
        assert_eq!(s.text, "Messi scoring the winning goal");
        assert_eq!(s.image_ref.as_deref(), Some("img_2.jpg"));
        assert_eq!(s.annotations, vec![ann(0, 0, "Messi", Polarity::Positive)]);
    }

    #[test]
    fn legacy_empty_file_gives_empty_split() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "dev.txt", "");
        let split = import_legacy_format(&p, dir.path()).unwrap();
        assert!(split.samples.is_empty());
        assert_eq!(split.stats, SplitStats::default());
    }

    #[test]
    fn legacy_records_for_same_post_merge() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("7.jpg"), b"x").unwrap();
        let body = "$T$ passes to Neymar today\nMessi\n1\n7.jpg\n\
                    Messi passes to $T$ today\nNeymar\n0\n7.jpg\n";
        let p = write(dir.path(), "train.txt", body);
        let split = import_legacy_format(&p, dir.path()).unwrap();
        assert_eq!(split.samples.len(), 1);
        assert_eq!(
            split.samples[0].annotations,
            vec![
                ann(0, 0, "Messi", Polarity::Positive),
                ann(3, 3, "Neymar", Polarity::Neutral)
            ]
        );
        assert_eq!(split.stats.aspects, 2);
        assert_eq!(split.stats.sentences, 1);
    }

    #[test]
    fn legacy_duplicate_records_deduplicate() {
        let dir = tempfile::tempdir().unwrap();
        let rec = "$T$ wins\nMessi\n1\n1.jpg\n";
        let p = write(dir.path(), "train.txt", &rec.repeat(2));
        let split = import_legacy_format(&p, dir.path()).unwrap();
        assert_eq!(split.samples[0].annotations.len(), 1);
        // image file does not exist
        assert_eq!(split.samples[0].image_ref, None);
    }

    #[test]
    fn legacy_bad_record_count_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "train.txt", "$T$ wins\nMessi\n1\n1.jpg\n$T$ loses\nKane\n");
        match import_legacy_format(&p, dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn legacy_missing_placeholder_is_record_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "train.txt", "Messi wins\nMessi\n1\n1.jpg\n");
        assert!(matches!(
            import_legacy_format(&p, dir.path()),
            Err(Error::Record { .. })
        ));
    }

    #[test]
    fn legacy_glued_placeholder_is_split_off() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "train.txt", "RT @$T$: great game\nMessi\n1\n1.jpg\n");
        let split = import_legacy_format(&p, dir.path()).unwrap();
        let s = &split.samples[0];
        assert_eq!(s.text, "RT @ Messi : great game");
        assert_eq!(s.annotations[0].begin_word, 2);
    }

    #[test]
    fn canonical_round_trip_with_absent_image() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![
            Sample {
                id: "a".into(),
                text: "Messi scoring the winning goal".into(),
                image_ref: Some("1.jpg".into()),
                annotations: vec![ann(0, 0, "Messi", Polarity::Positive)],
            },
            Sample {
                id: "b".into(),
                text: "nothing here".into(),
                image_ref: None,
                annotations: vec![],
            },
            Sample {
                id: "c".into(),
                text: "Dr Lukwiya died in Gulu".into(),
                image_ref: Some("3.jpg".into()),
                annotations: vec![
                    ann(0, 1, "Dr Lukwiya", Polarity::Negative),
                    ann(4, 4, "Gulu", Polarity::Neutral),
                ],
            },
        ];
        let split = DatasetSplit::new(SplitName::Dev, samples);
        let p = dir.path().join("dev.jsonl");
        export_canonical(&split, &p).unwrap();
        let raw = fs::read_to_string(&p).unwrap();
        assert!(raw.lines().nth(1).unwrap().contains("\"image\":null"));
        assert!(raw.lines().next().unwrap().contains("\"from_word\":0"));
        let back = load_canonical(&p).unwrap();
        assert_eq!(back, split);
    }

    #[test]
    fn load_rejects_schema_violation_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "train.jsonl",
            "{\"id\":\"a\",\"text\":\"x\",\"image\":null,\"aspects\":[]}\n{\"id\":\"b\",\"text\":\"y\"}\n",
        );
        match load_canonical(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("image") || message.contains("aspects"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn word_tags_examples() {
        let s = Sample {
            id: "s".into(),
            text: "Messi scoring the winning goal".into(),
            image_ref: None,
            annotations: vec![ann(0, 0, "Messi", Polarity::Positive)],
        };
        assert_eq!(word_tags(&s).unwrap(), vec![B, O, O, O, O]);

        let empty = Sample {
            annotations: vec![],
            ..s.clone()
        };
        assert_eq!(word_tags(&empty).unwrap(), vec![O; 5]);

        let two = Sample {
            annotations: vec![
                ann(0, 1, "Messi scoring", Polarity::Positive),
                ann(3, 3, "winning", Polarity::Neutral),
            ],
            ..s.clone()
        };
        assert_eq!(word_tags(&two).unwrap(), vec![B, I, O, B, O]);
    }

    #[test]
    fn overlapping_annotations_are_rejected() {
        let s = Sample {
            id: "s".into(),
            text: "a b c".into(),
            image_ref: None,
            annotations: vec![
                ann(0, 1, "a b", Polarity::Positive),
                ann(1, 2, "b c", Polarity::Neutral),
            ],
        };
        assert!(matches!(word_tags(&s), Err(Error::Invariant { .. })));
    }

    #[test]
    fn split_name_inference() {
        assert_eq!(SplitName::from_path(Path::new("x/test.jsonl")), SplitName::Test);
        assert_eq!(SplitName::from_path(Path::new("x/dev.jsonl")), SplitName::Dev);
        assert_eq!(SplitName::from_path(Path::new("x/other.jsonl")), SplitName::Train);
    }
}
