use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tfrg_core::experiments::{ExperimentConfig, ExperimentId};
use tfrg_core::{Error, Result};

use crate::Flags;

pub const DEFAULT_OUT: &str = "tfrg-out";

/// A scalar or a list in the settings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> From<OneOrMany<T>> for Vec<T> {
    fn from(v: OneOrMany<T>) -> Self {
        match v {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(xs) => xs,
        }
    }
}

fn one_or_many<'de, D, T>(de: D) -> std::result::Result<Option<Vec<T>>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de>,
{
    Ok(Option::<OneOrMany<T>>::deserialize(de)?.map(Vec::from))
}

/// Fully resolved settings. Keys mirror the long flag names; experiment
/// fields only matter to `sweep`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub side: Option<Vec<usize>>,
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub ell: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("config {}: {e}", path.display())))
    }

    /// Config file values overlaid with explicit flags.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut s = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Settings::default(),
        };
        macro_rules! overlay {
            ($($f:ident),*) => { $( if let Some(v) = &flags.$f { s.$f = Some(v.clone()); } )* };
        }
        overlay!(dim, side, u, eps, delta, replicas, seed, workers, out);
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim.unwrap_or(3)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or_else(rayon_threads)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn side(&self) -> Result<usize> {
        single("side", self.side.as_deref())?.ok_or_else(|| Error::InvalidArgument("--side is required".into()))
    }

    pub fn level(&self) -> Result<f64> {
        Ok(single("u", self.u.as_deref())?.unwrap_or(1.0))
    }

    /// Reference configuration of the experiment, overlaid with these settings.
    pub fn experiment_config(&self, flag: Option<&str>) -> Result<ExperimentConfig> {
        let name = flag.or(self.experiment.as_deref()).ok_or_else(|| {
            Error::InvalidArgument("sweep needs --experiment or an experiment key in the config".into())
        })?;
        let id: ExperimentId = name.parse()?;
        let mut c = ExperimentConfig::new(id);
        if let Some(v) = self.dim {
            c.d = v;
        }
        if let Some(v) = &self.side {
            c.n = v.clone();
        }
        if let Some(v) = &self.u {
            c.u = v.clone();
        }
        if let Some(v) = self.eps {
            c.eps = v;
        }
        if let Some(v) = self.delta {
            c.delta = v;
        }
        if let Some(v) = self.replicas {
            c.replicas = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c.workers = self.workers;
        c.out = Some(self.out_dir());
        if let Some(v) = &self.ell {
            c.ell = v.clone();
        }
        if let Some(v) = self.mu {
            c.mu = v;
        }
        if let Some(v) = self.samples {
            c.samples = v;
        }
        if self.radius.is_some() {
            c.radius = self.radius;
        }
        c.validate()?;
        Ok(c)
    }
}

fn single<T: Copy>(name: &str, v: Option<&[T]>) -> Result<Option<T>> {
    match v {
        None => Ok(None),
        Some([x]) => Ok(Some(*x)),
        Some(xs) => Err(Error::InvalidArgument(format!(
            "--{name} takes one value here, got {}",
            xs.len()
        ))),
    }
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
