//! Model problems: the discrete operators of the four PDE families and the
//! Gaussian right-hand-side sampler.
//!
//! Scaling: the Poisson and anisotropic (bilinear FEM) stencils have O(1)
//! entries, while the convection–diffusion and Helmholtz finite-difference
//! stencils carry an explicit `1/h²`.
//!
//! Right-hand sides come from ChaCha20 (`rand_chacha::ChaCha20Rng`, seeded
//! with `seed_from_u64`) and the ziggurat `StandardNormal` sampler of
//! `rand_distr`, drawn in row-major order. Both are platform independent.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FnsError, Result};
use crate::grid::{poisson_eigenvalue, Grid, Stencil3x3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    Anisotropic,
    #[serde(alias = "convdiff")]
    ConvectionDiffusion,
    Helmholtz,
}

impl Family {
    pub fn tag(self) -> u8 {
        match self {
            Family::Poisson => 0,
            Family::Anisotropic => 1,
            Family::ConvectionDiffusion => 2,
            Family::Helmholtz => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Family::Poisson,
            1 => Family::Anisotropic,
            2 => Family::ConvectionDiffusion,
            3 => Family::Helmholtz,
            other => return Err(FnsError::Format(format!("unknown family tag {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::Anisotropic => "anisotropic",
            Family::ConvectionDiffusion => "convection_diffusion",
            Family::Helmholtz => "helmholtz",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = FnsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "poisson" => Ok(Family::Poisson),
            "anisotropic" | "aniso" => Ok(Family::Anisotropic),
            "convection_diffusion" | "convdiff" => Ok(Family::ConvectionDiffusion),
            "helmholtz" => Ok(Family::Helmholtz),
            _ => Err(FnsError::InvalidParameter(format!("unknown problem family {s:?}"))),
        }
    }
}

/// PDE family plus its parameters. Only the fields relevant to `family` are read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub family: Family,
    pub n: usize,
    /// Anisotropic strength, `0 < xi <= 1`.
    #[serde(default = "one")]
    pub xi: f64,
    /// Anisotropic direction in `[0, π]`.
    #[serde(default)]
    pub theta: f64,
    /// Diffusion coefficient of the convection–diffusion problem.
    #[serde(default = "one")]
    pub epsilon: f64,
    /// Helmholtz wavenumber.
    #[serde(default)]
    pub kappa: f64,
}

fn one() -> f64 {
    1.0
}

impl ProblemSpec {
    pub fn poisson(n: usize) -> Self {
        Self {
            family: Family::Poisson,
            n,
            xi: 1.0,
            theta: 0.0,
            epsilon: 1.0,
            kappa: 0.0,
        }
    }

    pub fn anisotropic(xi: f64, theta: f64, n: usize) -> Self {
        Self {
            family: Family::Anisotropic,
            xi,
            theta,
            ..Self::poisson(n)
        }
    }

    pub fn convection_diffusion(epsilon: f64, n: usize) -> Self {
        Self {
            family: Family::ConvectionDiffusion,
            epsilon,
            ..Self::poisson(n)
        }
    }

    pub fn helmholtz(kappa: f64, n: usize) -> Self {
        Self {
            family: Family::Helmholtz,
            kappa,
            ..Self::poisson(n)
        }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(FnsError::InvalidParameter(format!(
                "n must be at least 2, got {}",
                self.n
            )));
        }
        match self.family {
            Family::Poisson => Ok(()),
            Family::Anisotropic => check_anisotropic(self.xi, self.theta),
            Family::ConvectionDiffusion => check_epsilon(self.epsilon),
            Family::Helmholtz => check_kappa(self.kappa),
        }
    }

    pub fn stencil(&self) -> Result<Stencil3x3> {
        self.validate()?;
        match self.family {
            Family::Poisson => Ok(build_poisson(self.n)),
            Family::Anisotropic => build_anisotropic(self.xi, self.theta, self.n),
            Family::ConvectionDiffusion => build_convection_diffusion(self.epsilon, self.n),
            Family::Helmholtz => build_helmholtz(self.kappa, self.n),
        }
    }

    /// True when the operator has a negative eigenvalue (Helmholtz only).
    pub fn is_indefinite(&self) -> bool {
        self.family == Family::Helmholtz && helmholtz_min_eigenvalue(self.kappa, self.n) < 0.0
    }
}

fn check_anisotropic(xi: f64, theta: f64) -> Result<()> {
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(FnsError::InvalidParameter(format!(
            "anisotropic strength must lie in (0, 1], got {xi}"
        )));
    }
    if !(0.0..=std::f64::consts::PI).contains(&theta) {
        return Err(FnsError::InvalidParameter(format!(
            "anisotropic direction must lie in [0, π], got {theta}"
        )));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(FnsError::InvalidParameter(format!(
            "diffusion coefficient must be positive, got {epsilon}"
        )))
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa >= 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(FnsError::InvalidParameter(format!(
            "wavenumber must be non-negative, got {kappa}"
        )))
    }
}

/// 5-point Laplacian `[[0,-1,0],[-1,4,-1],[0,-1,0]]`.
pub fn build_poisson(_n: usize) -> Stencil3x3 {
    Stencil3x3::from_rows([[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]])
}

/// Rotated diffusion tensor `R(θ) diag(1, ξ) R(θ)ᵀ` as `(c11, c12, c22)`.
pub fn diffusion_tensor(xi: f64, theta: f64) -> (f64, f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * c + xi * s * s, c * s * (1.0 - xi), s * s + xi * c * c)
}

/// Bilinear shape-function gradients on the unit reference square, local
/// node order (0,0), (1,0), (1,1), (0,1).
fn bilinear_gradients(x: f64, y: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - y), -(1.0 - x)],
        [1.0 - y, -x],
        [y, x],
        [-y, 1.0 - x],
    ]
}

const LOCAL_NODES: [(isize, isize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

/// Element stiffness `∫ ∇φ_a · C ∇φ_b` on a square element by 2×2 Gauss
/// quadrature (exact for bilinear elements and constant `C`). The element
/// size cancels in two dimensions.
fn element_stiffness(c11: f64, c12: f64, c22: f64) -> [[f64; 4]; 4] {
    let g = 0.5 / 3f64.sqrt();
    let points = [0.5 - g, 0.5 + g];
    let mut k = [[0.0; 4]; 4];
    for &x in &points {
        for &y in &points {
            let grad = bilinear_gradients(x, y);
            for a in 0..4 {
                let ca = [
                    c11 * grad[a][0] + c12 * grad[a][1],
                    c12 * grad[a][0] + c22 * grad[a][1],
                ];
                for b in 0..4 {
                    k[a][b] += 0.25 * (ca[0] * grad[b][0] + ca[1] * grad[b][1]);
                }
            }
        }
    }
    k
}

/// 9-point stencil of `-∇·(C(ξ,θ)∇u)` from bilinear finite elements on a
/// uniform square mesh: the assembled row of one node from its four
/// surrounding elements.
pub fn build_anisotropic(xi: f64, theta: f64, _n: usize) -> Result<Stencil3x3> {
    check_anisotropic(xi, theta)?;
    let (c11, c12, c22) = diffusion_tensor(xi, theta);
    let k = element_stiffness(c11, c12, c22);
    let mut s = Stencil3x3::zero();
    // Elements are identified by their lower-left corner relative to the node.
    for (ex, ey) in [(-1, -1), (0, -1), (-1, 0), (0, 0)] {
        let a = LOCAL_NODES
            .iter()
            .position(|&(lx, ly)| ex + lx == 0 && ey + ly == 0)
            .expect("node is a corner of each adjacent element");
        for (b, &(lx, ly)) in LOCAL_NODES.iter().enumerate() {
            let (dx, dy) = (ex + lx, ey + ly);
            s.set(dx, dy, s.at(dx, dy) + k[a][b]);
        }
    }
    Ok(s)
}

/// Central-difference stencil of `-εΔu + u_x + u_y`, including the `1/h²` factor.
pub fn build_convection_diffusion(epsilon: f64, n: usize) -> Result<Stencil3x3> {
    check_epsilon(epsilon)?;
    if n < 2 {
        return Err(FnsError::InvalidParameter(format!("n must be at least 2, got {n}")));
    }
    let h = 1.0 / n as f64;
    let inv_h2 = 1.0 / (h * h);
    let downwind = (h / 2.0 - epsilon) * inv_h2;
    let upwind = (-h / 2.0 - epsilon) * inv_h2;
    Ok(Stencil3x3::from_rows([
        [0.0, downwind, 0.0],
        [upwind, 4.0 * epsilon * inv_h2, downwind],
        [0.0, upwind, 0.0],
    ]))
}

/// Second-order stencil of `-Δu - κ²u`, including the `1/h²` factor.
pub fn build_helmholtz(kappa: f64, n: usize) -> Result<Stencil3x3> {
    check_kappa(kappa)?;
    let h = 1.0 / n as f64;
    let inv_h2 = 1.0 / (h * h);
    Ok(Stencil3x3::from_rows([
        [0.0, -inv_h2, 0.0],
        [-inv_h2, (4.0 - kappa * kappa * h * h) * inv_h2, -inv_h2],
        [0.0, -inv_h2, 0.0],
    ]))
}

/// Smallest eigenvalue of the Dirichlet Helmholtz operator, mode (1, 1).
pub fn helmholtz_min_eigenvalue(kappa: f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    poisson_eigenvalue(n, 1, 1) / (h * h) - kappa * kappa
}

/// I.i.d. standard-normal right-hand side, reproducible from `seed`.
pub fn sample_rhs(n: usize, seed: u64) -> Grid {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Grid::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
}

/// Mesh Peclet number `h/ε` for unit velocity components.
pub fn peclet(epsilon: f64, h: f64) -> f64 {
    h / epsilon
}
