//! Experiment and world files.
//!
//! Both files are TOML with a `schema_version` field. The world file holds
//! the static world plus the request distribution; the experiment spec
//! points at a world file and fixes the algorithm, seeds, and
//! configurations. Dotted-path `--override key=value` edits apply to the
//! experiment spec before deserialization, and the spec hash covers the
//! effective (post-override) spec plus the world file bytes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dronecov_core::approx::NetArch;
use dronecov_core::meta::{AdaptationEvalConfig, MetaConfig};
use dronecov_core::vdrl::TrainConfig;
use dronecov_core::world::{TaskDistribution, WorldConfig};
use dronecov_core::World;

pub const SPEC_SCHEMA_VERSION: u32 = 1;

/// On-disk world file: geometry plus the request distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldFile {
    pub schema_version: u32,
    pub world: WorldConfig,
    pub tasks: TaskDistribution,
}

impl WorldFile {
    pub fn load(path: &Path) -> Result<WorldFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading world file {}", path.display()))?;
        let file: WorldFile = toml::from_str(&text)
            .with_context(|| format!("parsing world file {}", path.display()))?;
        if file.schema_version != SPEC_SCHEMA_VERSION {
            bail!(
                "world file {} has schema_version {}, expected {}",
                path.display(),
                file.schema_version,
                SPEC_SCHEMA_VERSION
            );
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("world files serialize")
    }
}

/// Network architecture section (hidden-layer widths).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchSection {
    pub hidden: Vec<usize>,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            hidden: NetArch::default().hidden,
        }
    }
}

/// Pre-training section: how many tasks the sequential baseline trains over
/// and its per-task iteration budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    pub tasks: u32,
    pub iterations_per_task: u32,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            tasks: 8,
            iterations_per_task: 2500,
        }
    }
}

/// Algorithms an experiment spec can name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Vdrl,
    Iac,
    Meta,
    Pretrain,
    Oracle,
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Algo::Vdrl => "vdrl",
            Algo::Iac => "iac",
            Algo::Meta => "meta",
            Algo::Pretrain => "pretrain",
            Algo::Oracle => "oracle",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Algo {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Algo> {
        Ok(match s {
            "vdrl" => Algo::Vdrl,
            "iac" => Algo::Iac,
            "meta" => Algo::Meta,
            "pretrain" => Algo::Pretrain,
            "oracle" => Algo::Oracle,
            other => bail!("unknown algorithm {other:?}"),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExperimentFile {
    schema_version: u32,
    name: String,
    /// World file path, relative to the spec file.
    world: String,
    algo: Algo,
    seeds: Vec<u64>,
    #[serde(default)]
    arch: ArchSection,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    meta: MetaConfig,
    #[serde(default)]
    eval: AdaptationEvalConfig,
    #[serde(default)]
    pretrain: PretrainSection,
}

/// A fully loaded and validated experiment: spec, world, and the hash that
/// stamps every output file.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub algo: Algo,
    pub seeds: Vec<u64>,
    pub arch: NetArch,
    pub train: TrainConfig,
    pub meta: MetaConfig,
    pub eval: AdaptationEvalConfig,
    pub pretrain: PretrainSection,
    pub world: World,
    pub tasks: TaskDistribution,
    pub world_path: PathBuf,
    /// Hex digest of the effective spec and the world file.
    pub spec_hash: String,
}

impl Experiment {
    /// Load a spec, apply dotted-path overrides, resolve and validate the
    /// world, and compute the spec hash.
    pub fn load(spec_path: &Path, overrides: &[String]) -> Result<Experiment> {
        let text = std::fs::read_to_string(spec_path)
            .with_context(|| format!("reading spec {}", spec_path.display()))?;
        let mut value: toml::Value = text
            .parse()
            .with_context(|| format!("parsing spec {}", spec_path.display()))?;
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        let effective = toml::to_string(&value).context("serializing the effective spec")?;
        let file: ExperimentFile = value
            .try_into()
            .with_context(|| format!("interpreting spec {}", spec_path.display()))?;
        if file.schema_version != SPEC_SCHEMA_VERSION {
            bail!(
                "spec {} has schema_version {}, expected {}",
                spec_path.display(),
                file.schema_version,
                SPEC_SCHEMA_VERSION
            );
        }
        if file.seeds.is_empty() {
            bail!("spec needs at least one seed");
        }
        let mut sorted = file.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != file.seeds.len() {
            bail!("seeds must be distinct");
        }

        let world_path = spec_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&file.world);
        let world_file = WorldFile::load(&world_path)?;
        let world = World::new(world_file.world)?;
        world_file.tasks.validate(&world)?;
        file.train.validate()?;
        file.meta.validate()?;

        let mut hasher = Sha256::new();
        hasher.update(effective.as_bytes());
        hasher.update(std::fs::read(&world_path)?);
        let spec_hash = format!("{:x}", hasher.finalize())[..16].to_string();

        Ok(Experiment {
            name: file.name,
            algo: file.algo,
            seeds: file.seeds,
            arch: NetArch {
                hidden: file.arch.hidden,
            },
            train: file.train,
            meta: file.meta,
            eval: file.eval,
            pretrain: file.pretrain,
            world,
            tasks: world_file.tasks,
            world_path,
            spec_hash,
        })
    }
}

/// Apply one `key.path=value` override to a TOML tree. The value side is
/// parsed as TOML (so arrays, numbers, and booleans work); a bare word that
/// fails to parse becomes a string.
pub fn apply_override(root: &mut toml::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry
        .split_once('=')
        .with_context(|| format!("override {entry:?} must look like key.path=value"))?;
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let segments: Vec<&str> = path.trim().split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let table = node
            .as_table_mut()
            .with_context(|| format!("override path {path:?} crosses a non-table at {seg:?}"))?;
        if i + 1 == segments.len() {
            table.insert(seg.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("split never yields zero segments")
}

/// Render a preset as a world file plus a starter experiment spec.
pub fn preset_files(preset: &dronecov_core::presets::Preset) -> (String, String) {
    let world_file = WorldFile {
        schema_version: SPEC_SCHEMA_VERSION,
        world: preset.world.clone(),
        tasks: preset.tasks.clone(),
    };
    let experiment = ExperimentFile {
        schema_version: SPEC_SCHEMA_VERSION,
        name: preset.name.to_string(),
        world: format!("{}.world.toml", preset.name),
        algo: Algo::Vdrl,
        seeds: vec![1, 2, 3],
        arch: ArchSection {
            hidden: preset.arch.hidden.clone(),
        },
        train: preset.train.clone(),
        meta: preset.meta.clone(),
        eval: preset.eval.clone(),
        pretrain: PretrainSection::default(),
    };
    (
        world_file.to_toml(),
        toml::to_string_pretty(&experiment).expect("experiment specs serialize"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_replace_scalars_and_arrays() {
        let mut value: toml::Value = "a = 1\n[train]\nmax_iterations = 5\n".parse().unwrap();
        apply_override(&mut value, "train.max_iterations=99").unwrap();
        apply_override(&mut value, "seeds=[4, 5]").unwrap();
        apply_override(&mut value, "name=hello").unwrap();
        let t = value.as_table().unwrap();
        assert_eq!(t["train"]["max_iterations"].as_integer(), Some(99));
        assert_eq!(t["seeds"].as_array().unwrap().len(), 2);
        assert_eq!(t["name"].as_str(), Some("hello"));
    }

    #[test]
    fn preset_files_round_trip_through_the_loader() {
        let dir = tempfile::tempdir().unwrap();
        let preset = dronecov_core::presets::paper_tiny();
        let (world, spec) = preset_files(&preset);
        std::fs::write(dir.path().join("paper-tiny.world.toml"), world).unwrap();
        let spec_path = dir.path().join("paper-tiny.exp.toml");
        std::fs::write(&spec_path, spec).unwrap();

        let exp = Experiment::load(&spec_path, &[]).unwrap();
        assert_eq!(exp.algo, Algo::Vdrl);
        assert_eq!(exp.world.num_dbs(), 2);
        assert_eq!(exp.spec_hash.len(), 16);

        let overridden = Experiment::load(&spec_path, &["train.max_iterations=7".into()]).unwrap();
        assert_eq!(overridden.train.max_iterations, 7);
        assert_ne!(overridden.spec_hash, exp.spec_hash);
    }

    #[test]
    fn duplicate_seeds_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let preset = dronecov_core::presets::paper_tiny();
        let (world, spec) = preset_files(&preset);
        std::fs::write(dir.path().join("paper-tiny.world.toml"), world).unwrap();
        let spec_path = dir.path().join("exp.toml");
        std::fs::write(&spec_path, spec).unwrap();
        assert!(Experiment::load(&spec_path, &["seeds=[1, 1]".into()]).is_err());
    }
}
