//! Experiment configuration: flat `key = value` text under section headers.
//!
//! Every key has a default, so a file only lists what it changes. Unknown
//! sections and keys are rejected. [`ExperimentConfig::normalized`] renders
//! every key in a fixed order; its SHA-256 is the config hash recorded in
//! run manifests.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use sha2::{Digest, Sha256};
use zdgan_core::data::{Class, Layout, MixPlan, Task};
use zdgan_core::ids::{DnnConfig, IdsConfig, ModelKind, SvmConfig, TreeConfig};
use zdgan_core::trainer::{Architecture, TrainConfig, Variant};

use crate::error::{CliError, Result};

/// The configuration shipped as `configs/paper.cfg`.
pub const PAPER_CFG: &str = include_str!("../configs/paper.cfg");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskMode {
    Binary,
    Multi,
    Loao,
}

impl TaskMode {
    fn as_str(self) -> &'static str {
        match self {
            TaskMode::Binary => "binary",
            TaskMode::Multi => "multi",
            TaskMode::Loao => "loao",
        }
    }
}

impl FromStr for TaskMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "binary" => Ok(TaskMode::Binary),
            "multi" => Ok(TaskMode::Multi),
            "loao" => Ok(TaskMode::Loao),
            _ => Err("expected binary|multi|loao".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Files,
    Fixture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchChoice {
    Paper,
    Compact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixtureKind {
    /// Five well separated blobs.
    Blobs,
    /// R2L sits between Normal and the two minority classes.
    Adjacent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSection {
    pub name: String,
    pub out: PathBuf,
    pub task: TaskMode,
    pub held_out: Class,
    pub scale: usize,
    pub ids_seeds: usize,
    pub seed_offset: u64,
    pub models: Vec<ModelKind>,
    pub variants: Vec<Variant>,
    pub validation_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub source: Source,
    pub train: PathBuf,
    pub test: PathBuf,
    pub layout: String,
    pub fixture: FixtureKind,
    pub fixture_train_rows: usize,
    pub fixture_test_rows: usize,
    pub fixture_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixSection {
    /// `None` means the paper's counts divided by `scale`.
    pub counts: Option<BTreeMap<Class, usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanSection {
    pub architecture: ArchChoice,
    pub compact_width: usize,
    pub seed_base: u64,
    /// Everything but `variant` and `seed`, which vary per run.
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub mix: MixSection,
    pub gan: GanSection,
    pub ids: IdsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentSection {
                name: "experiment".into(),
                out: PathBuf::from("runs"),
                task: TaskMode::Binary,
                held_out: Class::R2l,
                scale: 100,
                ids_seeds: 50,
                seed_offset: 0,
                models: ModelKind::ALL.to_vec(),
                variants: Variant::ALL.to_vec(),
                validation_fraction: 0.0,
            },
            data: DataSection {
                source: Source::Files,
                train: PathBuf::from("KDDTrain+.txt"),
                test: PathBuf::from("KDDTest+.txt"),
                layout: "nsl_kdd".into(),
                fixture: FixtureKind::Blobs,
                fixture_train_rows: 5000,
                fixture_test_rows: 2000,
                fixture_seed: 7,
            },
            mix: MixSection { counts: None },
            gan: GanSection {
                architecture: ArchChoice::Paper,
                compact_width: 16,
                seed_base: 0,
                train: TrainConfig::default(),
            },
            ids: IdsConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| CliError::Config(format!("{key}: cannot parse '{v}': {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(name, _)| *name == v).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        CliError::Config(format!("{key}: '{v}' is not one of {}", names.join("|")))
    })
}

fn name_of<T: PartialEq>(v: T, options: &[(&'static str, T)]) -> &'static str {
    options.iter().find(|(_, t)| *t == v).map(|(n, _)| *n).expect("choice table covers every value")
}

const SOURCES: [(&str, Source); 2] = [("files", Source::Files), ("fixture", Source::Fixture)];
const ARCHS: [(&str, ArchChoice); 2] = [("paper", ArchChoice::Paper), ("compact", ArchChoice::Compact)];
const FIXTURES: [(&str, FixtureKind); 2] = [("blobs", FixtureKind::Blobs), ("adjacent", FixtureKind::Adjacent)];
const MIX_CLASSES: [(&str, Class); 5] = [
    ("normal", Class::Normal),
    ("dos", Class::Dos),
    ("probe", Class::Probe),
    ("u2r", Class::U2r),
    ("r2l", Class::R2l),
];

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(format!("parse error: {e}")))?;
        let mut cfg = ExperimentConfig::default();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if props.iter().next().is_some() {
                    return Err(CliError::Config("keys must appear under a [section] header".into()));
                }
                continue;
            };
            for (key, value) in props.iter() {
                cfg.set(&format!("{section}.{key}"), value.trim())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_str(&text)?;
        // relative data paths are taken from the config file's directory
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.data.train, &mut cfg.data.test] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies `section.key=value` overrides (the `--stage-override` flag).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override '{o}' is not section.key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let e = &mut self.experiment;
        let d = &mut self.data;
        let g = &mut self.gan;
        let t = &mut g.train;
        let ids = &mut self.ids;
        match key {
            "experiment.name" => e.name = v.to_string(),
            "experiment.out" => e.out = PathBuf::from(v),
            "experiment.task" => e.task = parse(key, v)?,
            "experiment.held_out" => e.held_out = parse(key, v)?,
            "experiment.scale" => e.scale = parse(key, v)?,
            "experiment.ids_seeds" => e.ids_seeds = parse(key, v)?,
            "experiment.seed_offset" => e.seed_offset = parse(key, v)?,
            "experiment.models" => e.models = parse_list(key, v)?,
            "experiment.variants" => e.variants = parse_list(key, v)?,
            "experiment.validation_fraction" => e.validation_fraction = parse(key, v)?,
            "data.source" => d.source = choice(key, v, &SOURCES)?,
            "data.train" => d.train = PathBuf::from(v),
            "data.test" => d.test = PathBuf::from(v),
            "data.layout" => d.layout = v.to_string(),
            "data.fixture" => d.fixture = choice(key, v, &FIXTURES)?,
            "data.fixture_train_rows" => d.fixture_train_rows = parse(key, v)?,
            "data.fixture_test_rows" => d.fixture_test_rows = parse(key, v)?,
            "data.fixture_seed" => d.fixture_seed = parse(key, v)?,
            "mix.plan" => match v {
                "paper" => self.mix.counts = None,
                "custom" => {
                    self.mix.counts.get_or_insert_with(BTreeMap::new);
                }
                _ => return Err(CliError::Config(format!("{key}: expected paper|custom"))),
            },
            k if k.starts_with("mix.") => {
                let class = choice(key, &k[4..], &MIX_CLASSES)
                    .map_err(|_| CliError::Config(format!("unknown key '{key}'")))?;
                let n: usize = parse(key, v)?;
                let counts = self.mix.counts.get_or_insert_with(BTreeMap::new);
                if n == 0 {
                    counts.remove(&class);
                } else {
                    counts.insert(class, n);
                }
            }
            "gan.architecture" => g.architecture = choice(key, v, &ARCHS)?,
            "gan.compact_width" => g.compact_width = parse(key, v)?,
            "gan.seed_base" => g.seed_base = parse(key, v)?,
            "gan.epochs" => t.epochs = parse(key, v)?,
            "gan.batch_size" => t.batch_size = parse(key, v)?,
            "gan.n_critic" => t.n_critic = parse(key, v)?,
            "gan.lr_g" => t.lr_g = parse(key, v)?,
            "gan.lr_c" => t.lr_c = parse(key, v)?,
            "gan.lr_d" => t.lr_d = parse(key, v)?,
            "gan.adam_beta1" => t.adam_beta1 = parse(key, v)?,
            "gan.adam_beta2" => t.adam_beta2 = parse(key, v)?,
            "gan.lambda_gp" => t.lambda_gp = parse(key, v)?,
            "gan.latent_dim" => t.latent_dim = parse(key, v)?,
            "gan.grad_clip_norm" => t.grad_clip_norm = parse(key, v)?,
            "gan.lambda_js" => t.lambda_js = parse(key, v)?,
            "gan.schedule" => t.schedule = parse(key, v)?,
            "gan.update_period" => t.update_period = parse(key, v)?,
            "ids.svm_c_reg" => ids.svm.c_reg = parse(key, v)?,
            "ids.svm_iterations" => ids.svm.iterations = parse(key, v)?,
            "ids.dt_max_depth" => ids.tree.max_depth = parse(key, v)?,
            "ids.dt_min_leaf" => ids.tree.min_leaf = parse(key, v)?,
            "ids.dnn_epochs" => ids.dnn.epochs = parse(key, v)?,
            "ids.dnn_widths" => ids.dnn.widths = parse_list(key, v)?,
            "ids.dnn_lr" => ids.dnn.lr = parse(key, v)?,
            "ids.dnn_batch_size" => ids.dnn.batch_size = parse(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if e.scale == 0 {
            return bad("experiment.scale must be at least 1");
        }
        if e.ids_seeds == 0 {
            return bad("experiment.ids_seeds must be at least 1");
        }
        if e.models.is_empty() {
            return bad("experiment.models is empty");
        }
        if e.task == TaskMode::Loao && e.held_out == Class::Normal {
            return bad("experiment.held_out must be an attack class");
        }
        if !(0.0..0.5).contains(&e.validation_fraction) {
            return bad("experiment.validation_fraction must lie in [0, 0.5)");
        }
        self.layout()?;
        self.plan()?;
        self.gan.train.validate().map_err(|err| CliError::Config(err.to_string()))?;
        if self.gan.compact_width == 0 {
            return bad("gan.compact_width must be positive");
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<Layout> {
        match self.data.layout.as_str() {
            "nsl_kdd" => Ok(Layout::nsl_kdd()),
            s => match s.strip_prefix("numeric:").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => Ok(Layout::numeric(k)),
                _ => Err(CliError::Config(format!("data.layout: '{s}' is not nsl_kdd or numeric:<k>"))),
            },
        }
    }

    pub fn task(&self) -> Task {
        match self.experiment.task {
            TaskMode::Binary => Task::Binary,
            TaskMode::Multi => Task::Multi,
            TaskMode::Loao => Task::Loao(self.experiment.held_out),
        }
    }

    pub fn plan(&self) -> Result<MixPlan> {
        let task = self.task();
        let plan = match &self.mix.counts {
            None => MixPlan::paper(task, self.experiment.scale),
            Some(c) => MixPlan::new(task, &c.iter().map(|(&k, &v)| (k, v)).collect::<Vec<_>>()),
        };
        plan.map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn architecture(&self, variant: Variant) -> Architecture {
        match self.gan.architecture {
            ArchChoice::Paper => Architecture::paper(variant),
            ArchChoice::Compact => Architecture::compact(self.gan.compact_width),
        }
    }

    /// IDS seeds: 42, 43, ... shifted by `seed_offset`.
    pub fn ids_seeds(&self) -> Vec<u64> {
        (0..self.experiment.ids_seeds as u64).map(|i| 42 + self.experiment.seed_offset + i).collect()
    }

    /// GAN seed for a class: `seed_base + class index`.
    pub fn gan_seed(&self, class: Class) -> u64 {
        self.gan.seed_base + class.index() as u64
    }

    fn entries(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        let e = &self.experiment;
        let d = &self.data;
        let g = &self.gan;
        let t = &g.train;
        let SvmConfig { c_reg, iterations } = self.ids.svm;
        let TreeConfig { max_depth, min_leaf } = self.ids.tree;
        let DnnConfig { epochs, widths, lr, batch_size } = &self.ids.dnn;
        let mut mix = vec![("plan", if self.mix.counts.is_some() { "custom" } else { "paper" }.to_string())];
        if let Some(c) = &self.mix.counts {
            for (name, class) in MIX_CLASSES {
                mix.push((name, c.get(&class).copied().unwrap_or(0).to_string()));
            }
        }
        vec![
            (
                "experiment",
                vec![
                    ("name", e.name.clone()),
                    ("out", e.out.display().to_string()),
                    ("task", e.task.as_str().into()),
                    ("held_out", e.held_out.to_string()),
                    ("scale", e.scale.to_string()),
                    ("ids_seeds", e.ids_seeds.to_string()),
                    ("seed_offset", e.seed_offset.to_string()),
                    ("models", join(&e.models)),
                    ("variants", join(&e.variants)),
                    ("validation_fraction", e.validation_fraction.to_string()),
                ],
            ),
            (
                "data",
                vec![
                    ("source", name_of(d.source, &SOURCES).into()),
                    ("train", d.train.display().to_string()),
                    ("test", d.test.display().to_string()),
                    ("layout", d.layout.clone()),
                    ("fixture", name_of(d.fixture, &FIXTURES).into()),
                    ("fixture_train_rows", d.fixture_train_rows.to_string()),
                    ("fixture_test_rows", d.fixture_test_rows.to_string()),
                    ("fixture_seed", d.fixture_seed.to_string()),
                ],
            ),
            ("mix", mix),
            (
                "gan",
                vec![
                    ("architecture", name_of(g.architecture, &ARCHS).into()),
                    ("compact_width", g.compact_width.to_string()),
                    ("seed_base", g.seed_base.to_string()),
                    ("epochs", t.epochs.to_string()),
                    ("batch_size", t.batch_size.to_string()),
                    ("n_critic", t.n_critic.to_string()),
                    ("lr_g", t.lr_g.to_string()),
                    ("lr_c", t.lr_c.to_string()),
                    ("lr_d", t.lr_d.to_string()),
                    ("adam_beta1", t.adam_beta1.to_string()),
                    ("adam_beta2", t.adam_beta2.to_string()),
                    ("lambda_gp", t.lambda_gp.to_string()),
                    ("latent_dim", t.latent_dim.to_string()),
                    ("grad_clip_norm", t.grad_clip_norm.to_string()),
                    ("lambda_js", t.lambda_js.to_string()),
                    ("schedule", t.schedule.as_str().into()),
                    ("update_period", t.update_period.to_string()),
                ],
            ),
            (
                "ids",
                vec![
                    ("svm_c_reg", c_reg.to_string()),
                    ("svm_iterations", iterations.to_string()),
                    ("dt_max_depth", max_depth.to_string()),
                    ("dt_min_leaf", min_leaf.to_string()),
                    ("dnn_epochs", epochs.to_string()),
                    ("dnn_widths", join(widths)),
                    ("dnn_lr", lr.to_string()),
                    ("dnn_batch_size", batch_size.to_string()),
                ],
            ),
        ]
    }

    /// Every key in a fixed order; parsing this text gives the same config.
    pub fn normalized(&self) -> String {
        let mut s = String::new();
        for (section, keys) in self.entries() {
            s.push_str(&format!("[{section}]\n"));
            for (k, v) in keys {
                s.push_str(&format!("{k} = {v}\n"));
            }
            s.push('\n');
        }
        s
    }

    /// SHA-256 of the normalized form without `experiment.out`, so moving a
    /// run directory does not change the hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.experiment.out = PathBuf::new();
        hex::encode(Sha256::digest(c.normalized().as_bytes()))
    }

    /// `TrainConfig` for one GAN run.
    pub fn train_config(&self, variant: Variant, class: Class) -> TrainConfig {
        TrainConfig { variant, seed: self.gan_seed(class), ..self.gan.train.clone() }
    }
}
