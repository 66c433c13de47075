//! Local Fourier analysis of the implemented smoothers.
//!
//! Harmonics `e^{i(θ₁x + θ₂y)/h}` are eigenfunctions of any constant stencil
//! on the infinite grid, so every smoother reduces to a scalar factor per
//! frequency. Maps are sampled on a uniform grid over `[-π, π)²` and
//! summarized by the maxima over the low region `T_low = [-π/2, π/2)²` and
//! its complement `T_high`. Reported maxima are grid maxima, not suprema.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FnsError, Result};
use crate::grid::Stencil3x3;

/// Smallest accepted sampling resolution per axis.
pub const MIN_RESOLUTION: usize = 8;
pub const DEFAULT_RESOLUTION: usize = 128;
/// Factor mapped to white in PGM exports.
pub const PGM_CLIP: f64 = 1.25;

/// `Â(θ) = Σ s(dx,dy) e^{i(dx θ₁ + dy θ₂)}`.
pub fn stencil_symbol(s: &Stencil3x3, theta1: f64, theta2: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let c = s.at(dx, dy);
            if c != 0.0 {
                acc += c * Complex64::from_polar(1.0, dx as f64 * theta1 + dy as f64 * theta2);
            }
        }
    }
    acc
}

/// `|1 - ω Â(θ)/s₀₀|^sweeps`.
pub fn jacobi_factor(s: &Stencil3x3, omega: f64, theta1: f64, theta2: f64, sweeps: usize) -> Result<f64> {
    if s.center() == 0.0 {
        return Err(FnsError::ZeroCenter);
    }
    let g = 1.0 - omega * stencil_symbol(s, theta1, theta2) / s.center();
    Ok(g.norm().powi(sweeps as i32))
}

/// `Π_k |1 - τ_k Â(θ)|`.
pub fn chebyshev_factor(s: &Stencil3x3, taus: &[f64], theta1: f64, theta2: f64) -> Result<f64> {
    if taus.is_empty() {
        return Err(FnsError::InvalidParameter("empty Chebyshev step list".into()));
    }
    let a = stencil_symbol(s, theta1, theta2);
    Ok(taus.iter().map(|&t| (1.0 - t * a).norm()).product())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Jacobi,
    Chebyshev,
}

impl FromStr for FactorKind {
    type Err = FnsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jacobi" | "weighted_jacobi" => Ok(Self::Jacobi),
            "chebyshev" | "cheby" => Ok(Self::Chebyshev),
            other => Err(FnsError::InvalidParameter(format!("unknown factor kind `{other}`"))),
        }
    }
}

/// Parameters read by [`factor_map`]; only the fields of the chosen kind matter.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorParams {
    pub omega: f64,
    pub sweeps: usize,
    pub taus: Vec<f64>,
}

impl Default for FactorParams {
    fn default() -> Self {
        Self {
            omega: 2.0 / 3.0,
            sweeps: 1,
            taus: Vec::new(),
        }
    }
}

/// Placement of samples along each θ axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThetaGrid {
    /// `θ_k = -π + 2πk/R`; contains `0` and `±π/2`, where the classical
    /// smoothing factors are attained.
    #[default]
    Nodes,
    /// `θ_k = -π + 2π(k + 1/2)/R`; avoids the `θ = 0` point.
    CellCentered,
}

impl ThetaGrid {
    pub fn thetas(self, resolution: usize) -> Vec<f64> {
        let offset = match self {
            Self::Nodes => 0.0,
            Self::CellCentered => 0.5,
        };
        (0..resolution)
            .map(|k| -PI + 2.0 * PI * (k as f64 + offset) / resolution as f64)
            .collect()
    }
}

fn in_low(theta: f64) -> bool {
    (-PI / 2.0..PI / 2.0).contains(&theta)
}

/// Sampled factor over `[-π, π)²`: `values[k2 * R + k1]` is the factor at
/// `(θ[k1], θ[k2])`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMap {
    pub resolution: usize,
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
    pub mu_low: f64,
    pub mu_high: f64,
}

impl FactorMap {
    pub fn get(&self, k1: usize, k2: usize) -> f64 {
        self.values[k2 * self.resolution + k1]
    }

    /// Share of samples whose factor exceeds `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        self.values.iter().filter(|&&v| v > threshold).count() as f64 / self.values.len() as f64
    }

    /// Value matrix, one CSV row per `θ₂`, ascending.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.resolution) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Binary 8-bit PGM, factor 0 black and `≥ PGM_CLIP` white, `θ₂` increasing upward.
    pub fn to_pgm(&self) -> Vec<u8> {
        let r = self.resolution;
        let mut out = format!("P5\n{r} {r}\n255\n").into_bytes();
        for row in self.values.chunks(r).rev() {
            out.extend(row.iter().map(|&v| {
                let t = (v / PGM_CLIP).clamp(0.0, 1.0);
                (t * 255.0).round() as u8
            }));
        }
        out
    }

    /// `θ₁,θ₂,value` triples, handy for plotting tools.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("theta1,theta2,factor\n");
        for (k2, row) in self.values.chunks(self.resolution).enumerate() {
            for (k1, v) in row.iter().enumerate() {
                let _ = writeln!(out, "{:.16e},{:.16e},{v:.16e}", self.thetas[k1], self.thetas[k2]);
            }
        }
        out
    }
}

/// Factor of `kind` sampled on a `resolution²` grid of the chosen layout.
pub fn factor_map(
    kind: FactorKind,
    s: &Stencil3x3,
    params: &FactorParams,
    resolution: usize,
    layout: ThetaGrid,
) -> Result<FactorMap> {
    if resolution < MIN_RESOLUTION {
        return Err(FnsError::InvalidParameter(format!(
            "LFA resolution must be at least {MIN_RESOLUTION}, got {resolution}"
        )));
    }
    // Surface parameter errors before the sweep.
    let probe = |t1: f64, t2: f64| match kind {
        FactorKind::Jacobi => jacobi_factor(s, params.omega, t1, t2, params.sweeps),
        FactorKind::Chebyshev => chebyshev_factor(s, &params.taus, t1, t2),
    };
    probe(0.0, 0.0)?;
    let thetas = layout.thetas(resolution);
    let values: Vec<f64> = (0..resolution * resolution)
        .into_par_iter()
        .map(|idx| probe(thetas[idx % resolution], thetas[idx / resolution]).expect("validated"))
        .collect();
    let mut mu_low = 0.0f64;
    let mut mu_high = 0.0f64;
    for (idx, &v) in values.iter().enumerate() {
        let (t1, t2) = (thetas[idx % resolution], thetas[idx / resolution]);
        if in_low(t1) && in_low(t2) {
            mu_low = mu_low.max(v);
        } else {
            mu_high = mu_high.max(v);
        }
    }
    Ok(FactorMap {
        resolution,
        thetas,
        values,
        mu_low,
        mu_high,
    })
}
