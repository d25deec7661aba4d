//! Config resolution: defaults, then the config file, then command-line flags.

use std::path::{Path, PathBuf};

use tipseg::config::KeyValues;
use tipseg::model::ModelConfig;
use tipseg::synth::{first_families, SceneFamily, SynthConfig};
use tipseg::{Error, Result};

pub const MODEL_KEYS: &[&str] = &[
    "arm",
    "image_size",
    "feature_channels",
    "downsample_factor",
    "gcn_layers",
    "lambda1",
    "lambda2",
    "tau",
    "normalize_embeddings",
    "lr",
    "momentum",
    "decay_every",
    "decay_factor",
    "clip_norm",
    "epochs",
    "seed",
];

pub const SYNTH_KEYS: &[&str] = &[
    "image_size",
    "focal_ratio",
    "mesh_detail",
    "max_translation",
    "max_rotation_deg",
    "min_deviation",
    "prior_scale",
    "prior_decimation",
];

pub const DATA_KEYS: &[&str] = &["data", "families", "per_family", "data_seed"];

/// Merges the optional config file under `flags` and rejects keys outside
/// `allowed`. A `command` entry (as written to `run.txt`) is ignored.
pub fn resolve(config: Option<&Path>, flags: &KeyValues, allowed: &[&[&str]]) -> Result<KeyValues> {
    let mut kv = match config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    kv.merge(flags);
    let unknown: Vec<String> = kv
        .keys()
        .filter(|k| *k != "command" && !allowed.iter().any(|set| set.contains(k)))
        .map(|k| format!("{k}: unknown key"))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(unknown));
    }
    Ok(kv)
}

/// Parses `key=value` pairs given with `--set`.
pub fn parse_sets(sets: &[String], kv: &mut KeyValues) -> Result<()> {
    let mut problems = Vec::new();
    for s in sets {
        match s.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => kv.set(k.trim(), v.trim()),
            _ => problems.push(format!("--set `{s}`: expected key=value")),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems))
    }
}

/// Appends the problems of a failed validation.
pub fn absorb(res: Result<()>, problems: &mut Vec<String>) {
    match res {
        Ok(()) => {}
        Err(Error::Config(p)) => problems.extend(p),
        Err(e) => problems.push(e.to_string()),
    }
}

pub fn finish(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems))
    }
}

pub fn model_config(kv: &KeyValues, problems: &mut Vec<String>) -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.apply_key_values(kv, problems);
    cfg
}

pub fn synth_config(kv: &KeyValues, problems: &mut Vec<String>) -> SynthConfig {
    let mut cfg = SynthConfig::default();
    cfg.apply_key_values(kv, problems);
    cfg
}

/// `5` selects A..E, `A,C` selects those families.
pub fn parse_families(s: &str) -> Result<Vec<SceneFamily>> {
    if let Ok(n) = s.trim().parse::<usize>() {
        return first_families(n);
    }
    let fams: Result<Vec<SceneFamily>> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect();
    let fams = fams?;
    if fams.is_empty() {
        return Err(Error::Config(vec!["families: empty list".into()]));
    }
    Ok(fams)
}

pub fn families_key(f: &[SceneFamily]) -> String {
    f.iter().map(|f| f.name()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Dir(PathBuf),
    Generate { per_family: usize, data_seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub source: DataSource,
    pub families: Vec<SceneFamily>,
}

pub fn data_settings(kv: &KeyValues, problems: &mut Vec<String>) -> DataSettings {
    let families = match kv.get_str("families") {
        Some(s) => parse_families(s).unwrap_or_else(|e| {
            absorb(Err(e), problems);
            SceneFamily::ALL.to_vec()
        }),
        None => SceneFamily::ALL.to_vec(),
    };
    let source = match kv.get_str("data") {
        Some(d) => DataSource::Dir(PathBuf::from(d)),
        None => {
            let mut per_family = 40usize;
            let mut data_seed = 0u64;
            kv.read_into("per_family", &mut per_family, problems);
            kv.read_into("data_seed", &mut data_seed, problems);
            if per_family == 0 {
                problems.push("per_family must be at least 1".into());
            }
            DataSource::Generate {
                per_family,
                data_seed,
            }
        }
    };
    DataSettings { source, families }
}

impl DataSettings {
    pub fn write_keys(&self, kv: &mut KeyValues) {
        kv.set("families", families_key(&self.families));
        match &self.source {
            DataSource::Dir(d) => kv.set("data", d.display()),
            DataSource::Generate {
                per_family,
                data_seed,
            } => {
                kv.set("per_family", per_family);
                kv.set("data_seed", data_seed);
            }
        }
    }
}
