//! Image lookup for samples and the bundled synthetic fixture.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use tracing::warn;

use crate::corpus::{export_canonical, AspectAnnotation, DatasetSplit, Polarity, Sample, SplitName};
use crate::encoders::{load_image, EncoderConfig};
use crate::error::{Error, Result};

/// Environment variable naming the directory image references resolve against.
pub const DATA_ROOT_ENV: &str = "MABSA_DATA_ROOT";

pub fn data_root_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from)
}

/// Preprocessed images keyed by sample id.
#[derive(Debug, Clone, Default)]
pub struct SampleImages {
    by_sample: HashMap<String, Array3<f64>>,
}

impl SampleImages {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every referenced image under `root`. Missing files are logged
    /// and left absent.
    pub fn load(splits: &[&DatasetSplit], root: &Path, cfg: &EncoderConfig) -> Result<Self> {
        let mut by_sample = HashMap::new();
        let mut cache: HashMap<&str, Array3<f64>> = HashMap::new();
        for sample in splits.iter().flat_map(|s| &s.samples) {
            let Some(image_ref) = sample.image_ref.as_deref() else { continue };
            if let Some(img) = cache.get(image_ref) {
                by_sample.insert(sample.id.clone(), img.clone());
                continue;
            }
            let path = root.join(image_ref);
            if !path.is_file() {
                warn!(sample = %sample.id, path = %path.display(), "image file missing");
                continue;
            }
            let img = load_image(&path, cfg)?;
            cache.insert(image_ref, img.clone());
            by_sample.insert(sample.id.clone(), img);
        }
        Ok(Self { by_sample })
    }

    pub fn insert(&mut self, sample_id: impl Into<String>, image: Array3<f64>) {
        self.by_sample.insert(sample_id.into(), image);
    }

    pub fn get(&self, sample_id: &str) -> Option<&Array3<f64>> {
        self.by_sample.get(sample_id)
    }

    pub fn len(&self) -> usize {
        self.by_sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_sample.is_empty()
    }
}

const POSITIVE: [&str; 3] = [
    "{} scores a brilliant winning goal",
    "what a great night for {} tonight",
    "{} wins the title again",
];
const NEGATIVE: [&str; 3] = [
    "{} misses an easy penalty",
    "terrible defending from {} today",
    "{} loses the final badly",
];
const NEUTRAL: [&str; 3] = [
    "{} arrives at the stadium",
    "{} will play on sunday",
    "a photo of {} before kickoff",
];

type FixtureRow = (String, Vec<(&'static str, Polarity)>);

fn fixture_rows() -> Vec<FixtureRow> {
    use Polarity::*;
    let single: [(&str, Polarity, usize); 18] = [
        ("Messi", Positive, 0),
        ("Ronaldo", Negative, 0),
        ("Neymar", Neutral, 0),
        ("Real Madrid", Positive, 1),
        ("Salah", Negative, 1),
        ("Kane", Neutral, 1),
        ("Modric", Positive, 2),
        ("Manchester United", Negative, 2),
        ("Benzema", Neutral, 2),
        ("Dr Lucille Corti", Neutral, 0),
        ("Mbappe", Positive, 0),
        ("Haaland", Negative, 0),
        ("Lukaku", Neutral, 1),
        ("Chelsea", Positive, 2),
        ("Arsenal", Negative, 2),
        ("Juventus", Neutral, 2),
        ("Griezmann", Positive, 0),
        ("Suarez", Negative, 0),
    ];
    let mut rows: Vec<FixtureRow> = single
        .iter()
        .map(|&(aspect, polarity, t)| {
            let template = match polarity {
                Positive => POSITIVE[t],
                Negative => NEGATIVE[t],
                Neutral => NEUTRAL[t],
            };
            (template.replace("{}", aspect), vec![(aspect, polarity)])
        })
        .collect();
    // the same sentence carries opposite opinions on its two aspects
    rows.insert(
        16,
        (
            "Liverpool crush Barcelona in a great win".into(),
            vec![("Liverpool", Positive), ("Barcelona", Negative)],
        ),
    );
    rows.insert(
        17,
        (
            "Bayern and Pogba lose again tonight".into(),
            vec![("Bayern", Negative), ("Pogba", Negative)],
        ),
    );
    rows
}

/// Tinted 32×32 image with a per-sample texture.
fn fixture_image(index: usize, polarity: Polarity) -> image::RgbImage {
    let base: [i32; 3] = match polarity {
        Polarity::Positive => [40, 200, 60],
        Polarity::Negative => [210, 40, 40],
        Polarity::Neutral => [128, 128, 128],
    };
    image::RgbImage::from_fn(32, 32, |x, y| {
        let jitter = ((x as i32 * 7 + y as i32 * 13 + index as i32 * 31) % 40) - 20;
        let px = base.map(|c| (c + jitter).clamp(0, 255) as u8);
        image::Rgb(px)
    })
}

/// The 20-post synthetic split used by the toy-backend tests.
pub fn synthetic_fixture() -> DatasetSplit {
    let samples = fixture_rows()
        .into_iter()
        .enumerate()
        .map(|(i, (text, aspects))| {
            let words: Vec<&str> = text.split_whitespace().collect();
            let annotations = aspects
                .iter()
                .map(|&(aspect, polarity)| {
                    let aw: Vec<&str> = aspect.split_whitespace().collect();
                    let begin = words
                        .windows(aw.len())
                        .position(|w| w == aw.as_slice())
                        .expect("aspect occurs in its sentence");
                    AspectAnnotation {
                        begin_word: begin,
                        end_word: begin + aw.len() - 1,
                        term: aspect.to_string(),
                        polarity,
                    }
                })
                .collect();
            Sample {
                id: format!("fx-{i:02}"),
                text,
                image_ref: Some(format!("images/fx-{i:02}.png")),
                annotations,
            }
        })
        .collect();
    DatasetSplit::new(SplitName::Train, samples)
}

/// Writes `train.jsonl` and `images/*.png` for the synthetic fixture.
pub fn write_synthetic_fixture(dir: &Path) -> Result<DatasetSplit> {
    let split = synthetic_fixture();
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for (i, sample) in split.samples.iter().enumerate() {
        let polarity = sample.annotations[0].polarity;
        let path = dir.join(sample.image_ref.as_deref().expect("fixture images"));
        fixture_image(i, polarity)
            .save(&path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    }
    export_canonical(&split, &dir.join("train.jsonl"))?;
    Ok(split)
}
