//! Stationary smoothers `Φ(u) = u + B(f - Au)`: weighted Jacobi, Chebyshev
//! semi-iteration and a learned two-layer linear convolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{ensure_same_n, FnsError, Result};
use crate::grid::{dot, norm2, Grid, Stencil3x3};
use crate::problems::sample_rhs;

/// Hidden channels of the learned convolution smoother.
pub const CONV_CHANNELS: usize = 8;

pub const DEFAULT_CHEBYSHEV_DEGREE: usize = 10;
pub const DEFAULT_CHEBYSHEV_ALPHA: f64 = 3.0;
pub const DEFAULT_POWER_TOL: f64 = 1e-6;
pub const DEFAULT_POWER_MAXIT: usize = 1000;

/// Kernel banks of the linear CNN `1 → 8 → 1` (3×3 kernels, zero padding,
/// no bias, no activation).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernels {
    pub first: [Stencil3x3; CONV_CHANNELS],
    pub second: [Stencil3x3; CONV_CHANNELS],
}

impl ConvKernels {
    pub fn zeros() -> Self {
        Self {
            first: [Stencil3x3::zero(); CONV_CHANNELS],
            second: [Stencil3x3::zero(); CONV_CHANNELS],
        }
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn random(scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut k = Self::zeros();
        for stencil in k.first.iter_mut().chain(k.second.iter_mut()) {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    stencil.set(dx, dy, scale * rng.random_range(-1.0..=1.0));
                }
            }
        }
        k
    }

    /// Flattened parameters: first bank then second, 9 values per kernel in row order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.first
            .iter()
            .chain(&self.second)
            .flat_map(|s| s.rows().iter().flatten().copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != 2 * CONV_CHANNELS * 9 {
            return Err(FnsError::Format(format!(
                "expected {} kernel values, got {}",
                2 * CONV_CHANNELS * 9,
                values.len()
            )));
        }
        let mut k = Self::zeros();
        for (idx, chunk) in values.chunks(9).enumerate() {
            let rows = [
                [chunk[0], chunk[1], chunk[2]],
                [chunk[3], chunk[4], chunk[5]],
                [chunk[6], chunk[7], chunk[8]],
            ];
            let stencil = Stencil3x3::from_rows(rows);
            if idx < CONV_CHANNELS {
                k.first[idx] = stencil;
            } else {
                k.second[idx - CONV_CHANNELS] = stencil;
            }
        }
        Ok(k)
    }

    pub fn is_finite(&self) -> bool {
        self.first.iter().chain(&self.second).all(Stencil3x3::is_finite)
    }
}

/// Description of the stationary operator `Φ`.
#[derive(Debug, Clone, PartialEq)]
pub enum SmootherSpec {
    WeightedJacobi { omega: f64, sweeps: usize },
    Chebyshev { degree: usize, alpha: f64, lambda_max: f64 },
    LearnedConv(Box<ConvKernels>),
}

impl SmootherSpec {
    pub fn jacobi(omega: f64, sweeps: usize) -> Self {
        SmootherSpec::WeightedJacobi { omega, sweeps }
    }

    /// Chebyshev smoother with `λ_max` estimated for `s` by the power method.
    pub fn chebyshev_for(s: &Stencil3x3, n: usize, degree: usize, alpha: f64) -> Self {
        let estimate = power_method(s, n, DEFAULT_POWER_TOL, DEFAULT_POWER_MAXIT, 0);
        SmootherSpec::Chebyshev {
            degree,
            alpha,
            lambda_max: estimate.lambda,
        }
    }

    pub fn learned(kernels: ConvKernels) -> Self {
        SmootherSpec::LearnedConv(Box::new(kernels))
    }

    pub fn tag(&self) -> u8 {
        match self {
            SmootherSpec::WeightedJacobi { .. } => 0,
            SmootherSpec::Chebyshev { .. } => 1,
            SmootherSpec::LearnedConv(_) => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SmootherSpec::WeightedJacobi { .. } => "jacobi",
            SmootherSpec::Chebyshev { .. } => "chebyshev",
            SmootherSpec::LearnedConv(_) => "learned_conv",
        }
    }

    pub fn validate(&self, s: &Stencil3x3) -> Result<()> {
        match *self {
            SmootherSpec::WeightedJacobi { omega, sweeps } => {
                if s.center() == 0.0 {
                    return Err(FnsError::ZeroCenter);
                }
                if !(omega > 0.0 && omega <= 1.0) {
                    return Err(FnsError::InvalidParameter(format!(
                        "Jacobi weight must lie in (0, 1], got {omega}"
                    )));
                }
                if sweeps == 0 {
                    return Err(FnsError::InvalidParameter("Jacobi needs at least one sweep".into()));
                }
                Ok(())
            }
            SmootherSpec::Chebyshev {
                degree,
                alpha,
                lambda_max,
            } => chebyshev_taus(lambda_max, alpha, degree).map(|_| ()),
            SmootherSpec::LearnedConv(ref k) => {
                if k.is_finite() {
                    Ok(())
                } else {
                    Err(FnsError::InvalidParameter("non-finite convolution kernel".into()))
                }
            }
        }
    }

    /// Operator applications (`A` times a vector) per smoother call.
    pub fn matvecs(&self) -> usize {
        match *self {
            SmootherSpec::WeightedJacobi { sweeps, .. } => sweeps,
            SmootherSpec::Chebyshev { degree, .. } => degree,
            SmootherSpec::LearnedConv(_) => 1,
        }
    }

    /// Step sizes of a Chebyshev smoother; `None` for other variants.
    pub fn taus(&self) -> Option<Vec<f64>> {
        match *self {
            SmootherSpec::Chebyshev {
                degree,
                alpha,
                lambda_max,
            } => chebyshev_taus(lambda_max, alpha, degree).ok(),
            _ => None,
        }
    }

    /// `Φ(u)` for the system `A u = f`.
    pub fn apply(&self, s: &Stencil3x3, u: &Grid, f: &Grid) -> Result<Grid> {
        ensure_same_n(f.n(), u.n())?;
        match self {
            SmootherSpec::WeightedJacobi { omega, sweeps } => jacobi_sweep(s, u, f, *omega, *sweeps),
            SmootherSpec::Chebyshev {
                degree,
                alpha,
                lambda_max,
            } => {
                let taus = chebyshev_taus(*lambda_max, *alpha, *degree)?;
                chebyshev_sweep(s, u, f, &taus)
            }
            SmootherSpec::LearnedConv(k) => {
                let mut v = u.clone();
                v.axpy(1.0, &learned_conv_apply(k, &s.residual(u, f)));
                Ok(v)
            }
        }
    }
}

/// `sweeps` pointwise updates `u ← u + (ω/s₀₀)(f - Au)`.
pub fn jacobi_sweep(s: &Stencil3x3, u: &Grid, f: &Grid, omega: f64, sweeps: usize) -> Result<Grid> {
    ensure_same_n(f.n(), u.n())?;
    let center = s.center();
    if center == 0.0 {
        return Err(FnsError::ZeroCenter);
    }
    let step = omega / center;
    let mut u = u.clone();
    for _ in 0..sweeps {
        let r = s.residual(&u, f);
        u.axpy(step, &r);
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    pub lambda: f64,
    pub iterations: usize,
    /// False when `maxit` ran out before the Rayleigh quotient settled.
    pub converged: bool,
}

/// Dominant eigenvalue of the stencil operator on an `n`-mesh: power
/// iteration from a seeded Gaussian start, stopped when the Rayleigh
/// quotient changes by less than `tol` relative.
pub fn power_method(s: &Stencil3x3, n: usize, tol: f64, maxit: usize, seed: u64) -> PowerEstimate {
    let mut v = sample_rhs(n, seed);
    let norm = norm2(&v);
    v.scale(1.0 / norm);
    let mut lambda = f64::NAN;
    for it in 1..=maxit {
        let w = s.apply(&v);
        let next = dot(&v, &w).expect("same mesh");
        let wn = norm2(&w);
        if wn == 0.0 {
            return PowerEstimate {
                lambda: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let settled = (next - lambda).abs() <= tol * next.abs();
        lambda = next;
        if settled {
            return PowerEstimate {
                lambda,
                iterations: it,
                converged: true,
            };
        }
        v = w;
        v.scale(1.0 / wn);
    }
    PowerEstimate {
        lambda,
        iterations: maxit,
        converged: false,
    }
}

/// Richardson step sizes from the roots of the degree-`m` Chebyshev
/// polynomial on `[λ_max/α, λ_max]`.
pub fn chebyshev_taus(lambda_max: f64, alpha: f64, m: usize) -> Result<Vec<f64>> {
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(FnsError::InvalidParameter(format!(
            "Chebyshev needs a positive λ_max, got {lambda_max}"
        )));
    }
    if !(alpha > 1.0) {
        return Err(FnsError::InvalidParameter(format!(
            "Chebyshev interval ratio must exceed 1, got {alpha}"
        )));
    }
    if m == 0 {
        return Err(FnsError::InvalidParameter("Chebyshev degree must be positive".into()));
    }
    let lambda_min = lambda_max / alpha;
    let pi = std::f64::consts::PI;
    Ok((0..m)
        .map(|k| {
            let x = (pi * (2 * k + 1) as f64 / (2 * m) as f64).cos();
            2.0 / (lambda_max + lambda_min - (lambda_min - lambda_max) * x)
        })
        .collect())
}

/// Richardson steps `u ← u + τ_k (f - Au)` in the given order.
pub fn chebyshev_sweep(s: &Stencil3x3, u: &Grid, f: &Grid, taus: &[f64]) -> Result<Grid> {
    ensure_same_n(f.n(), u.n())?;
    if taus.is_empty() {
        return Err(FnsError::InvalidParameter("empty Chebyshev step list".into()));
    }
    let mut u = u.clone();
    for &tau in taus {
        let r = s.residual(&u, f);
        u.axpy(tau, &r);
    }
    Ok(u)
}

/// First-layer feature planes `k1_p ⋆ r`.
pub(crate) fn conv_hidden(k: &ConvKernels, r: &Grid) -> Vec<Grid> {
    k.first.iter().map(|kernel| kernel.apply(r)).collect()
}

/// `B r = Σ_p k2_p ⋆ (k1_p ⋆ r)`.
pub fn learned_conv_apply(k: &ConvKernels, r: &Grid) -> Grid {
    let mut out = Grid::zeros(r.n());
    for (kernel, plane) in k.second.iter().zip(conv_hidden(k, r)) {
        kernel.apply_add(&plane, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{dst2, poisson_eigenvalue, sine_mode};
    use crate::problems::{build_convection_diffusion, build_poisson};

    fn random(n: usize, seed: u64) -> Grid {
        sample_rhs(n, seed)
    }

    #[test]
    fn jacobi_fixed_point() {
        let s = build_poisson(16);
        let u = random(16, 1);
        let f = s.apply(&u);
        let v = jacobi_sweep(&s, &u, &f, 2.0 / 3.0, 3).unwrap();
        assert!(v.max_abs_diff(&u) < 1e-12);
    }

    #[test]
    fn jacobi_mode_amplitude() {
        let n = 16;
        let s = build_poisson(n);
        let f = Grid::zeros(n);
        for &(p, q) in &[(1, 1), (4, 9), (15, 15)] {
            let mode = sine_mode(n, p, q);
            let out = jacobi_sweep(&s, &mode, &f, 2.0 / 3.0, 1).unwrap();
            let factor = 1.0 - (2.0 / 3.0) * poisson_eigenvalue(n, p, q) / 4.0;
            assert!(out.max_abs_diff(&mode.scaled(factor)) < 1e-12);
        }
    }

    #[test]
    fn multi_sweep_equals_composition() {
        let s = build_convection_diffusion(0.1, 16).unwrap();
        let u = random(16, 2);
        let f = random(16, 3);
        let five = jacobi_sweep(&s, &u, &f, 0.8, 5).unwrap();
        let mut v = u.clone();
        for _ in 0..5 {
            v = jacobi_sweep(&s, &v, &f, 0.8, 1).unwrap();
        }
        assert_eq!(five, v);
    }

    #[test]
    fn jacobi_rejects_zero_center() {
        let s = Stencil3x3::from_rows([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        let g = Grid::zeros(5);
        assert!(matches!(jacobi_sweep(&s, &g, &g, 0.5, 1), Err(FnsError::ZeroCenter)));
        assert!(SmootherSpec::jacobi(0.5, 1).validate(&s).is_err());
    }

    #[test]
    fn power_method_poisson_n32() {
        let n = 32;
        // Largest mode p = q = n - 1.
        let expected = 4.0 - 4.0 * (31.0 * std::f64::consts::PI / 32.0).cos();
        assert!((expected - 7.98074).abs() < 1e-5);
        let est = power_method(&build_poisson(n), n, 1e-12, 50_000, 0);
        assert!(est.converged);
        assert!((est.lambda - expected).abs() < 1e-4, "{}", est.lambda);
        let other = power_method(&build_poisson(n), n, 1e-12, 50_000, 99);
        assert!((other.lambda - est.lambda).abs() < 1e-4);
    }

    #[test]
    fn power_method_diagonal_stencil() {
        let est = power_method(&Stencil3x3::diagonal(2.5), 10, 1e-12, 100, 5);
        assert!((est.lambda - 2.5).abs() < 1e-12);
        assert!(est.converged);
    }

    #[test]
    fn power_method_flags_exhaustion() {
        let est = power_method(&build_poisson(32), 32, 1e-15, 3, 0);
        assert!(!est.converged);
        assert_eq!(est.iterations, 3);
    }

    #[test]
    fn chebyshev_taus_reference_value() {
        let taus = chebyshev_taus(8.0, 3.0, 10).unwrap();
        let x0 = (std::f64::consts::PI / 20.0).cos();
        assert!((x0 - 0.987688).abs() < 1e-6);
        assert!((taus[0] - 2.0 / (8.0 + 8.0 / 3.0 + 16.0 / 3.0 * x0)).abs() < 1e-15);
        assert!((taus[0] - 0.12551).abs() < 1e-5);
    }

    #[test]
    fn chebyshev_single_root() {
        let taus = chebyshev_taus(5.0, 1e12, 1).unwrap();
        assert!((taus[0] - 2.0 / 5.0).abs() < 1e-10);
    }

    #[test]
    fn chebyshev_taus_bounds() {
        for &(lmax, alpha, m) in &[(8.0, 3.0, 10), (1.0, 1.5, 4), (100.0, 30.0, 25)] {
            for tau in chebyshev_taus(lmax, alpha, m).unwrap() {
                // τ ranges over (1/λ_max, α/λ_max) as x_k sweeps (-1, 1).
                assert!(tau * lmax > 1.0);
                assert!(tau * lmax < alpha);
            }
        }
        assert!(chebyshev_taus(0.0, 3.0, 10).is_err());
        assert!(chebyshev_taus(8.0, 1.0, 10).is_err());
        assert!(chebyshev_taus(8.0, 3.0, 0).is_err());
    }

    #[test]
    fn chebyshev_beats_fixed_richardson() {
        let (lmax, alpha, m) = (8.0, 3.0, 10);
        let taus = chebyshev_taus(lmax, alpha, m).unwrap();
        let lmin = lmax / alpha;
        let tau_fixed = 2.0 / (lmax + lmin);
        let (mut cheb, mut fixed) = (0.0f64, 0.0f64);
        for k in 0..=10_000 {
            let lam = lmin + (lmax - lmin) * k as f64 / 10_000.0;
            cheb = cheb.max(taus.iter().map(|t| (1.0 - t * lam).abs()).product());
            fixed = fixed.max((1.0 - tau_fixed * lam).abs().powi(m as i32));
        }
        assert!(cheb < fixed, "{cheb} vs {fixed}");
    }

    #[test]
    fn chebyshev_sweep_per_mode_polynomial() {
        let n = 16;
        let s = build_poisson(n);
        let taus = chebyshev_taus(7.9, 3.0, 10).unwrap();
        let u = random(n, 4);
        let out = chebyshev_sweep(&s, &u, &Grid::zeros(n), &taus).unwrap();
        let (cu, co) = (dst2(&u), dst2(&out));
        for q in 1..n {
            for p in 1..n {
                let lam = poisson_eigenvalue(n, p, q);
                let poly: f64 = taus.iter().map(|t| 1.0 - t * lam).product();
                assert!((co.get(p - 1, q - 1) - poly * cu.get(p - 1, q - 1)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn single_tau_is_richardson() {
        let s = build_poisson(8);
        let u = random(8, 5);
        let f = random(8, 6);
        let out = chebyshev_sweep(&s, &u, &f, &[0.2]).unwrap();
        let mut expected = u.clone();
        expected.axpy(0.2, &s.residual(&u, &f));
        assert_eq!(out, expected);
        assert!(chebyshev_sweep(&s, &u, &f, &[]).is_err());
    }

    #[test]
    fn learned_conv_linear_and_biasless() {
        let k = ConvKernels::random(0.1, 3);
        assert!(learned_conv_apply(&k, &Grid::zeros(9)).values().iter().all(|&v| v == 0.0));
        let r = random(9, 7);
        let lhs = learned_conv_apply(&k, &r.scaled(-2.5));
        let rhs = learned_conv_apply(&k, &r).scaled(-2.5);
        assert!(lhs.max_abs_diff(&rhs) < 1e-14);
    }

    #[test]
    fn learned_conv_reproduces_jacobi() {
        let n = 12;
        let s = build_convection_diffusion(0.3, n).unwrap();
        let omega = 0.8;
        let mut k = ConvKernels::zeros();
        k.first[0] = Stencil3x3::diagonal(1.0);
        k.second[0] = Stencil3x3::diagonal(omega / s.center());
        let u = random(n, 8);
        let f = random(n, 9);
        let learned = SmootherSpec::learned(k).apply(&s, &u, &f).unwrap();
        let jacobi = jacobi_sweep(&s, &u, &f, omega, 1).unwrap();
        assert!(learned.max_abs_diff(&jacobi) < 1e-12);
    }

    #[test]
    fn kernels_flat_roundtrip() {
        let k = ConvKernels::random(1.0, 11);
        assert_eq!(ConvKernels::from_flat(&k.to_flat()).unwrap(), k);
        assert!(ConvKernels::from_flat(&[0.0; 3]).is_err());
    }
}
