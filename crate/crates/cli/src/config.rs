//! Pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hansaudit_core::features::LfccConfig;
use hansaudit_core::gmm::GmmConfig;
use hansaudit_core::interventions::{
    CodecBackend, InterventionKind, InterventionSpec, Intervener, ParamDist,
};
use hansaudit_core::protocol::{InterventionConfig, Subset};
use hansaudit_core::synth::SynthCorpusSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed. Every random draw in the pipeline is keyed by it.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 lets the runtime decide.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub corpus: CorpusSource,
    #[serde(default = "default_interventions")]
    pub interventions: Vec<InterventionEntry>,
    #[serde(default = "default_configurations")]
    pub configurations: Vec<ConfigEntry>,
    #[serde(default)]
    pub processing: ProcessingSettings,
    #[serde(default)]
    pub cm: CmSettings,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("hansaudit-out")
}

fn default_interventions() -> Vec<InterventionEntry> {
    InterventionKind::ALL
        .into_iter()
        .map(|kind| InterventionEntry {
            kind,
            param_dist: None,
        })
        .collect()
}

fn default_configurations() -> Vec<ConfigEntry> {
    ["O", "A", "B", "C", "D"]
        .into_iter()
        .map(|n| ConfigEntry::Name(n.to_string()))
        .collect()
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            output_dir: default_output_dir(),
            jobs: 0,
            corpus: CorpusSource::default(),
            interventions: default_interventions(),
            configurations: default_configurations(),
            processing: ProcessingSettings::default(),
            cm: CmSettings::default(),
        }
    }
}

/// Where the clean corpus comes from. For a synthetic corpus the spec's own
/// `seed` field is replaced by the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CorpusSource {
    Synthetic(SynthCorpusSpec),
    Protocols {
        audio_dir: PathBuf,
        protocols: Vec<ProtocolFile>,
    },
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic(SynthCorpusSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolFile {
    pub path: PathBuf,
    /// Guessed from the file name when absent.
    #[serde(default)]
    pub subset: Option<Subset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionEntry {
    pub kind: InterventionKind,
    /// Falls back to the intervention's default distribution.
    #[serde(default)]
    pub param_dist: Option<ParamDist>,
}

impl InterventionEntry {
    pub fn spec(&self) -> Result<InterventionSpec> {
        let dist = self.param_dist.clone().unwrap_or_else(|| self.kind.default_dist());
        Ok(InterventionSpec::new(self.kind, dist)?)
    }
}

/// A named configuration (`"A"`), an indicator (`"0 1 1 0"`) or an explicit
/// name with probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigEntry {
    Name(String),
    Custom { name: String, probs: [f64; 4] },
}

impl ConfigEntry {
    pub fn resolve(&self) -> Result<InterventionConfig> {
        Ok(match self {
            ConfigEntry::Name(s) => InterventionConfig::resolve(s)?,
            ConfigEntry::Custom { name, probs } => InterventionConfig::custom(name.clone(), *probs)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessingSettings {
    pub vad_margin_db: f64,
    /// Path to an MP3 encoder binary (`lame`). The codec proxy is used when
    /// unset.
    pub mp3_encoder: Option<PathBuf>,
}

impl Default for ProcessingSettings {
    fn default() -> Self {
        ProcessingSettings {
            vad_margin_db: hansaudit_core::interventions::vad::DEFAULT_VAD_MARGIN_DB,
            mp3_encoder: None,
        }
    }
}

impl ProcessingSettings {
    pub fn intervener(&self) -> Intervener {
        Intervener {
            vad_margin_db: self.vad_margin_db,
            codec: match &self.mp3_encoder {
                Some(binary) => CodecBackend::ExternalMp3 {
                    binary: binary.clone(),
                },
                None => CodecBackend::Proxy,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmMode {
    /// Built-in LFCC-GMM countermeasure.
    Gmm,
    /// Scores come from `ingest-scores`; training and scoring are skipped.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmSettings {
    pub mode: CmMode,
    pub features: LfccConfig,
    pub gmm: GmmConfig,
}

impl Default for CmSettings {
    fn default() -> Self {
        CmSettings {
            mode: CmMode::Gmm,
            features: LfccConfig::default(),
            gmm: GmmConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).context("parsing pipeline config")?;
        Ok(cfg)
    }

    /// Load a config file. Relative corpus paths are taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml_str(&text)
            .with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let CorpusSource::Protocols {
            audio_dir,
            protocols,
        } = &mut cfg.corpus
        {
            *audio_dir = base.join(&*audio_dir);
            for p in protocols {
                p.path = base.join(&p.path);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn intervention_specs(&self) -> Result<Vec<InterventionSpec>> {
        let specs: Vec<InterventionSpec> =
            self.interventions.iter().map(|e| e.spec()).collect::<Result<_>>()?;
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].iter().any(|t| t.kind == s.kind) {
                bail!("intervention `{}` listed twice", s.kind);
            }
        }
        Ok(specs)
    }

    pub fn resolved_configs(&self) -> Result<Vec<InterventionConfig>> {
        let cfgs: Vec<InterventionConfig> =
            self.configurations.iter().map(|c| c.resolve()).collect::<Result<_>>()?;
        for (i, c) in cfgs.iter().enumerate() {
            if cfgs[..i].iter().any(|d| d.name == c.name) {
                bail!("configuration `{}` listed twice", c.name);
            }
        }
        Ok(cfgs)
    }

    /// Check everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.interventions.is_empty() {
            bail!("no interventions configured");
        }
        if self.configurations.is_empty() {
            bail!("no configurations listed");
        }
        self.intervention_specs()?;
        self.resolved_configs()?;
        self.cm.features.validate()?;
        if self.cm.gmm.components == 0 {
            bail!("GMM needs at least one component");
        }
        match &self.corpus {
            CorpusSource::Synthetic(spec) => spec.validate()?,
            CorpusSource::Protocols {
                audio_dir,
                protocols,
            } => {
                if !audio_dir.is_dir() {
                    bail!("audio directory {} does not exist", audio_dir.display());
                }
                if protocols.is_empty() {
                    bail!("no protocol files listed");
                }
                for p in protocols {
                    if !p.path.is_file() {
                        bail!("protocol file {} does not exist", p.path.display());
                    }
                    if p.subset.is_none() && Subset::infer_from_path(&p.path).is_none() {
                        bail!(
                            "cannot tell the subset of {}; set `subset` explicitly",
                            p.path.display()
                        );
                    }
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
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = PipelineConfig::from_toml_str("seed = 7").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.intervention_specs().unwrap().len(), 5);
        assert_eq!(cfg.resolved_configs().unwrap().len(), 5);
        cfg.validate().unwrap();
    }

    #[test]
    fn seed_is_required() {
        assert!(PipelineConfig::from_toml_str("jobs = 1").is_err());
    }

    #[test]
    fn hyperparameters_are_editable() {
        let text = r#"
            seed = 1
            configurations = ["O", "0 1 1 0", { name = "half", probs = [0.5, 0.0, 0.5, 0.0] }]

            [[interventions]]
            kind = "white_noise"
            param_dist = { dist = "uniform", lo = 5.0, hi = 10.0 }

            [[interventions]]
            kind = "mu_law"
            param_dist = { dist = "dirac", value = 15.0 }

            [[interventions]]
            kind = "codec"
            param_dist = { dist = "choice", values = [16.0, 32.0] }

            [processing]
            vad_margin_db = 30.0

            [cm.gmm]
            components = 8

            [corpus]
            source = "synthetic"
            train_per_class = 5
            duration_s = [0.5, 0.8]
        "#;
        let cfg = PipelineConfig::from_toml_str(text).unwrap();
        cfg.validate().unwrap();
        let names: Vec<String> = cfg.resolved_configs().unwrap().into_iter().map(|c| c.name).collect();
        assert_eq!(names, ["O", "C", "half"]);
        assert_eq!(cfg.cm.gmm.components, 8);
        assert_eq!(cfg.processing.vad_margin_db, 30.0);
        match &cfg.corpus {
            CorpusSource::Synthetic(s) => {
                assert_eq!(s.train_per_class, 5);
                assert_eq!(s.duration_s, (0.5, 0.8));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_entries_rejected() {
        for text in [
            "seed = 1\nconfigurations = [\"Q\"]",
            "seed = 1\nconfigurations = [\"A\", \"0 1 0 1\"]",
            "seed = 1\n[[interventions]]\nkind = \"mu_law\"\nparam_dist = { dist = \"dirac\", value = 0.5 }",
            "seed = 1\nbogus = 3",
        ] {
            let r = PipelineConfig::from_toml_str(text).and_then(|c| c.validate());
            assert!(r.is_err(), "{text}");
        }
    }
}
