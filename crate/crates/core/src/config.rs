//! Run configuration: TOML file, `PSPLAT_<SECTION>_<KEY>` environment
//! variables and `section.key=value` overrides, applied in that order on top
//! of the defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::optimizer::{OptimConfig, TrainConfig};
use crate::renderer::{LossWeights, RenderSettings};
use crate::scene_init::InitConfig;
use crate::splatting::SplatParams;
use crate::synthetic::SynthConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Worker threads; 0 uses the hardware parallelism.
    pub threads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Keep every `stride`-th camera.
    pub stride: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { stride: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub synth: SynthConfig,
    pub init: InitConfig,
    pub splat: SplatParams,
    pub render: RenderSettings,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub metrics: MetricsConfig,
    pub dataset: DatasetSection,
}

const ENV_PREFIX: &str = "PSPLAT_";

fn section_name(s: &str) -> &str {
    match s {
        "optimizer" => "optim",
        other => other,
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Set `section.key` from its textual value.
    pub fn set(&mut self, path: &str, raw: &str) -> Result<()> {
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override '{path}' is not of the form section.key")))?;
        let section = section_name(section);
        let mut root = toml::Table::try_from(&*self).expect("config serializes");
        let table = root
            .get_mut(section)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| Error::Config(format!("unknown section '{section}'")))?;
        let current = table
            .get(key)
            .ok_or_else(|| Error::Config(format!("unknown key '{section}.{key}'")))?;
        let mut value = parse_value(raw);
        if current.is_float() {
            if let Some(i) = value.as_integer() {
                value = toml::Value::Float(i as f64);
            }
        }
        table.insert(key.to_string(), value);
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{section}.{key} = {raw}: {}", e.message())))?;
        Ok(())
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' lacks '='")))?;
        self.set(path.trim(), raw.trim())
    }

    /// Apply `PSPLAT_<SECTION>_<KEY>` variables from `vars`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let rest = k.strip_prefix(ENV_PREFIX)?;
                let (section, key) = rest.split_once('_')?;
                Some((format!("{}.{}", section.to_lowercase(), key.to_lowercase()), v))
            })
            .collect();
        found.sort();
        for (path, v) in found {
            self.set(&path, &v)?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, environment and overrides.
    pub fn load(file: Option<&std::path::Path>, env: impl IntoIterator<Item = (String, String)>, overrides: &[String]) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.apply_env(env)?;
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if self.dataset.stride < 1 {
            return Err(Error::Config("dataset.stride must be at least 1".into()));
        }
        if self.init.n_primitives < 1 {
            return Err(Error::Config("init.n_primitives must be at least 1".into()));
        }
        if self.render.max_intersections < 1 || self.render.tile_size < 1 {
            return Err(Error::Config("render.max_intersections and render.tile_size must be positive".into()));
        }
        let s = &self.splat;
        if !(s.lambda_base > 0.0 && s.lambda_max > 0.0 && s.weight_floor > 0.0 && s.weight_floor < 1.0) {
            return Err(Error::Config("splat parameters out of range".into()));
        }
        Ok(())
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            splat: self.splat,
            render: self.render,
            loss: self.loss,
            optim: self.optim,
        }
    }
}

/// SHA-256 of everything that shapes an optimization trajectory except the
/// iteration budget.
pub fn train_config_hash(cfg: &TrainConfig) -> [u8; 32] {
    #[derive(Serialize)]
    struct Hashed<'a> {
        splat: &'a SplatParams,
        render: &'a RenderSettings,
        weight_floor: f64,
        loss: &'a LossWeights,
        optim: OptimConfig,
    }
    let h = Hashed {
        splat: &cfg.splat,
        render: &cfg.render,
        weight_floor: cfg.splat.weight_floor,
        loss: &cfg.loss,
        optim: OptimConfig {
            iterations: 0,
            ..cfg.optim
        },
    };
    let bytes = serde_json::to_vec(&h).expect("config serializes");
    Sha256::digest(&bytes).into()
}
