//! JSON experiment configuration.
//!
//! A bench file lists runs; `train` and `solve` accept a single run document.
//! Unknown keys are rejected so typos fail before any work starts.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fns_core::problems::ProblemSpec;
use fns_core::smoothers::{
    ConvKernels, SmootherSpec, DEFAULT_CHEBYSHEV_ALPHA, DEFAULT_CHEBYSHEV_DEGREE,
};
use fns_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fns,
    Jacobi,
    Chebyshev,
    Cg,
    Gmres,
    #[serde(alias = "bicgstab")]
    Bicgstabl,
    DstDirect,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fns => "fns",
            Method::Jacobi => "jacobi",
            Method::Chebyshev => "chebyshev",
            Method::Cg => "cg",
            Method::Gmres => "gmres",
            Method::Bicgstabl => "bicgstabl",
            Method::DstDirect => "dst-direct",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .with_context(|| format!("unknown method `{s}`"))
    }
}

/// Smoother as written in a config; `lambda_max` is estimated when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmootherConfig {
    Jacobi {
        #[serde(default = "default_omega")]
        omega: f64,
        #[serde(default = "default_sweeps")]
        sweeps: usize,
    },
    Chebyshev {
        #[serde(default = "default_degree")]
        degree: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        lambda_max: Option<f64>,
    },
    /// Learned kernels; trained jointly with the filter.
    LearnedConv,
}

fn default_omega() -> f64 {
    2.0 / 3.0
}

fn default_sweeps() -> usize {
    5
}

fn default_degree() -> usize {
    DEFAULT_CHEBYSHEV_DEGREE
}

fn default_alpha() -> f64 {
    DEFAULT_CHEBYSHEV_ALPHA
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig::Jacobi {
            omega: default_omega(),
            sweeps: default_sweeps(),
        }
    }
}

impl SmootherConfig {
    pub fn build(&self, problem: &ProblemSpec) -> Result<SmootherSpec> {
        let s = problem.stencil()?;
        Ok(match *self {
            SmootherConfig::Jacobi { omega, sweeps } => SmootherSpec::jacobi(omega, sweeps),
            SmootherConfig::Chebyshev {
                degree,
                alpha,
                lambda_max: Some(lambda_max),
            } => SmootherSpec::Chebyshev {
                degree,
                alpha,
                lambda_max,
            },
            SmootherConfig::Chebyshev {
                degree,
                alpha,
                lambda_max: None,
            } => SmootherSpec::chebyshev_for(&s, problem.n, degree, alpha),
            SmootherConfig::LearnedConv => SmootherSpec::learned(ConvKernels::zeros()),
        })
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, SmootherConfig::LearnedConv)
    }
}

fn default_tol() -> f64 {
    1e-6
}

fn default_maxit() -> usize {
    10_000
}

fn default_num_rhs() -> usize {
    10
}

fn default_restart() -> usize {
    fns_core::krylov::DEFAULT_GMRES_RESTART
}

fn default_ell() -> usize {
    2
}

/// One experiment: problem, method, and how to obtain the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub smoother: SmootherConfig,
    pub solver: Method,
    /// Training settings for `fns` runs without a checkpoint.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_maxit")]
    pub maxit: usize,
    #[serde(default = "default_num_rhs")]
    pub num_rhs: usize,
    /// First RHS seed; sample `i` uses `seed + i`.
    #[serde(default)]
    pub seed: u64,
    /// GMRES restart length; `0` means unrestarted.
    #[serde(default = "default_restart")]
    pub restart: usize,
    #[serde(default = "default_ell")]
    pub ell: usize,
}

impl RunConfig {
    pub fn label(&self, index: usize) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("run{index:03}_{}_{}", self.problem.family.name(), self.solver.name()))
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        if !(self.tol > 0.0) {
            bail!("tol must be positive");
        }
        if self.maxit == 0 {
            bail!("maxit must be positive");
        }
        if self.num_rhs == 0 {
            bail!("num_rhs must be positive");
        }
        if self.ell == 0 {
            bail!("ell must be positive");
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        if self.solver == Method::Fns && self.train.is_none() && self.checkpoint.is_none() {
            bail!("fns runs need either `train` settings or a `checkpoint` path");
        }
        Ok(())
    }
}

/// Bench document: a list of runs and where to write results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub runs: Vec<RunConfig>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (i, run) in self.runs.iter().enumerate() {
            run.validate().with_context(|| format!("run {i} ({})", run.label(i)))?;
        }
        Ok(())
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
