use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::masc::{Ablations, MascOptions};
use crate::metrics::TermMatch;
use crate::supervision::MatcherConfig;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub learning_rate: f64,
    /// Fraction of total steps spent in linear warmup; linear decay follows.
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_text_length: usize,
    /// Weight of the consistency loss.
    pub beta: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Rows of the learnable translation query.
    pub query_len: usize,
    pub pair_encoding: bool,
    /// Keep encoder tensors out of the optimizer.
    pub freeze_encoders: bool,
    /// Add gold-aspect triples to the fuzzy-matched predicted-aspect triples.
    pub union_gold_triples: bool,
    /// Apply the part-of-speech filter to extracted aspects.
    pub noun_filter: bool,
    pub term_match: TermMatch,
    pub encoder: EncoderConfig,
    pub ablations: Ablations,
    pub matcher: MatcherConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            batch_size: 16,
            max_text_length: 60,
            beta: 0.5,
            epochs: 150,
            seed: 42,
            query_len: 16,
            pair_encoding: false,
            freeze_encoders: false,
            union_gold_triples: true,
            noun_filter: false,
            term_match: TermMatch::Strict,
            encoder: EncoderConfig::default(),
            ablations: Ablations::default(),
            matcher: MatcherConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate > 0.0),
            ("batch_size", self.batch_size > 0),
            ("max_text_length", self.max_text_length >= 2),
            ("query_len", self.query_len > 0),
            ("warmup_fraction", (0.0..=1.0).contains(&self.warmup_fraction)),
            ("weight_decay", self.weight_decay >= 0.0),
            ("beta", self.beta >= 0.0),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(Error::Config(format!("`{name}` is out of range")));
        }
        if self.max_text_length > self.encoder.max_positions {
            return Err(Error::Config(format!(
                "max_text_length {} exceeds encoder max_positions {}",
                self.max_text_length, self.encoder.max_positions
            )));
        }
        self.encoder.validate()?;
        self.matcher.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `dotted.key=value` overrides on top of a TOML document (or the
    /// defaults). Values are parsed as TOML, falling back to a bare string.
    pub fn with_overrides(base: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = match base {
            Some(s) => toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let leaf = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| Error::Config(format!("empty key in `{item}`")))?;
            let mut table = &mut doc;
            for part in parts {
                table = table
                    .entry(part)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
            }
            table.insert(leaf.to_string(), value);
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&raw)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 prefix of the canonical JSON form, ignoring `epochs` so a
    /// run can be resumed with a longer budget.
    pub fn config_hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.epochs = 0;
        let json = serde_json::to_string(&hashed).expect("RunConfig serializes to JSON");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn masc_options(&self) -> MascOptions {
        MascOptions {
            encoder: self.encoder.clone(),
            max_text_length: self.max_text_length,
            ablations: self.ablations,
            pair_encoding: self.pair_encoding,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_patch_nested_keys() {
        let base = "epochs = 3\n[encoder]\nhidden_size = 16\n";
        let cfg = RunConfig::with_overrides(
            Some(base),
            &["beta=0.25".into(), "encoder.heads=4".into(), "ablations.no_tba=true".into()],
        )
        .unwrap();
        assert_eq!((cfg.epochs, cfg.beta), (3, 0.25));
        assert_eq!((cfg.encoder.hidden_size, cfg.encoder.heads), (16, 4));
        assert!(cfg.ablations.no_tba);
        assert!(RunConfig::with_overrides(None, &["nonsense=1".into()]).is_err());
        assert!(RunConfig::with_overrides(None, &["beta".into()]).is_err());
        assert!(RunConfig::with_overrides(None, &["term_match=lenient".into()]).is_ok());
    }

    #[test]
    fn defaults_follow_reported_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.learning_rate, 2e-5);
        assert_eq!(c.warmup_fraction, 0.1);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.max_text_length, 60);
        assert_eq!(c.beta, 0.5);
        assert_eq!(c.epochs, 150);
        assert_eq!(c.matcher.threshold, 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut c = RunConfig::default();
        c.learning_rate = 0.012_345_678_901_234_5;
        c.beta = 1.0 / 3.0;
        c.ablations.no_tba = true;
        c.encoder.pixel_mean = [0.1, 0.2, 0.30000000000000004];
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
    }

    #[test]
    fn partial_file_fills_defaults_and_rejects_unknown_keys() {
        let c = RunConfig::from_toml_str("epochs = 3\n[ablations]\nno_image = true\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert!(c.ablations.no_image);
        assert_eq!(c.batch_size, 16);
        assert!(RunConfig::from_toml_str("epoch = 3").is_err());
        assert!(RunConfig::from_toml_str("batch_size = 0").is_err());
    }

    #[test]
    fn hash_ignores_epochs_only() {
        let a = RunConfig::default();
        let b = RunConfig { epochs: 7, ..a.clone() };
        let c = RunConfig { beta: 0.0, ..a.clone() };
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }
}
