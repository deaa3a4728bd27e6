//! Engine configuration, stored as TOML. Every field has a default, so a
//! file only needs the values it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::GenerationConfig;
use crate::dialogue::{DialogueConfig, DialogueTrainConfig, RatingRule};
use crate::error::{Error, Result};
use crate::recommender::{AutorecConfig, AutorecTrainConfig, LAMBDA_GRID};
use crate::sentiment::{SentimentConfig, SentimentTrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Dialogue corpus (JSON lines).
    pub corpus: Option<PathBuf>,
    /// Movie database (`id<TAB>title<TAB>year`).
    pub movies: Option<PathBuf>,
    /// Ratings CSV (`userId,movieId,rating,timestamp`).
    pub ratings: Option<PathBuf>,
    /// Optional `ratings id<TAB>movie id` map applied to the ratings file.
    pub ratings_id_map: Option<PathBuf>,
    /// Optional word vectors for the frozen first encoder layer.
    pub embeddings: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Words seen fewer times are mapped to `<unk>`.
    pub min_count: usize,
    /// Share of conversations held out for validation.
    pub validation_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            min_count: 1,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SentimentSection {
    pub model: SentimentConfig,
    pub train: SentimentTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommenderSection {
    pub model: AutorecConfig,
    pub train: AutorecTrainConfig,
    /// Train/validation/test shares of each user's ratings.
    pub split: [f64; 3],
    /// Number of independent splits (seeds) in a pre-training run.
    pub repetitions: usize,
    /// Lambda values tried on validation; empty keeps `model.lambda`.
    pub lambda_grid: Vec<f64>,
}

impl Default for RecommenderSection {
    fn default() -> Self {
        RecommenderSection {
            model: AutorecConfig::default(),
            train: AutorecTrainConfig::default(),
            split: [0.8, 0.1, 0.1],
            repetitions: 5,
            lambda_grid: LAMBDA_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DialogueSection {
    pub model: DialogueConfig,
    pub train: DialogueTrainConfig,
    pub rating_rule: RatingRule,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub sentiment: SentimentSection,
    pub recommender: RecommenderSection,
    pub dialogue: DialogueSection,
    pub generation: GenerationConfig,
}

/// Paths a command may require.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Corpus,
    Movies,
    Ratings,
    CheckpointDir,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Checks that every required path is configured and exists, and that
    /// the optional ones exist when set.
    pub fn validate_paths(&self, required: &[PathKind]) -> Result<()> {
        let p = &self.paths;
        for &kind in required {
            let (name, value) = match kind {
                PathKind::Corpus => ("corpus", &p.corpus),
                PathKind::Movies => ("movies", &p.movies),
                PathKind::Ratings => ("ratings", &p.ratings),
                PathKind::CheckpointDir => ("checkpoint_dir", &p.checkpoint_dir),
            };
            match value {
                None => return Err(Error::Config(format!("paths.{name} is not set"))),
                Some(path) if kind != PathKind::CheckpointDir && !path.exists() => {
                    return Err(Error::Config(format!("paths.{name}: {} does not exist", path.display())))
                }
                Some(_) => {}
            }
        }
        for (name, value) in [("ratings_id_map", &p.ratings_id_map), ("embeddings", &p.embeddings)] {
            if let Some(path) = value {
                if !path.exists() {
                    return Err(Error::Config(format!("paths.{name}: {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = EngineConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(EngineConfig::from_toml(&text).unwrap(), c);
        assert_eq!(c.generation.beam_width, 10);
        assert_eq!(c.generation.max_len, 40);
        assert!(!c.generation.mask_mentioned);
        assert_eq!(c.dialogue.train.adam.lr, 0.001);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = EngineConfig::from_toml("seed = 9\n[recommender.train]\nprocedure = \"denoising\"\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.recommender.train.procedure, crate::recommender::Procedure::Denoising);
        assert_eq!(c.recommender.train.epochs, AutorecTrainConfig::default().epochs);
        assert!(EngineConfig::from_toml("sed = 9\n").is_err());
    }

    #[test]
    fn missing_required_path_is_reported() {
        let mut c = EngineConfig::default();
        let err = c.validate_paths(&[PathKind::Corpus]).unwrap_err();
        assert!(err.to_string().contains("paths.corpus"));
        c.paths.corpus = Some("/definitely/not/here.jsonl".into());
        assert!(c.validate_paths(&[PathKind::Corpus]).is_err());
    }
}
