//! Frequency-space error correction and the composed Fourier neural solver
//! iteration, plus the sine-transform direct solvers used as exact oracles.
//!
//! One FNS step is
//!
//! ```text
//! v = Φ(u);  r = f - A v;  e = Re(IFFT2(FFT2(r) ∘ ϑ));  u ← v + e
//! ```
//!
//! with an unnormalized forward FFT and a `1/N` inverse over the `(n-1)²`
//! interior grid, bins in standard FFT order. A filter may instead be
//! declared in the sine basis, where `e = IDST2(DST2(r) ∘ Re ϑ)`; that basis
//! diagonalizes the Dirichlet Laplacian exactly and exists for oracle tests.

use std::fmt::Write as _;

use rustfft::num_complex::Complex64;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_n, FnsError, Result};
use crate::grid::{dst2, idst2, norm2, poisson_eigenvalue, ComplexGrid, Grid, Stencil3x3};
use crate::smoothers::SmootherSpec;
use crate::transform::fft2_in_place;

/// Relative residual above which an iteration counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterBasis {
    /// 2-D FFT of the interior grid (periodic extension).
    #[default]
    Fourier,
    /// Orthonormal 2-D DST-I; only the real part of each coefficient is used.
    Sine,
}

/// One complex coefficient per frequency bin of the interior grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFilter {
    n: usize,
    basis: FilterBasis,
    coeffs: Vec<Complex64>,
}

impl SpectralFilter {
    pub fn zeros(n: usize, basis: FilterBasis) -> Self {
        assert!(n >= 2);
        Self {
            n,
            basis,
            coeffs: vec![Complex64::new(0.0, 0.0); (n - 1) * (n - 1)],
        }
    }

    pub fn constant(n: usize, basis: FilterBasis, value: Complex64) -> Self {
        let mut f = Self::zeros(n, basis);
        f.coeffs.iter_mut().for_each(|c| *c = value);
        f
    }

    pub fn new(n: usize, basis: FilterBasis, coeffs: Vec<Complex64>) -> Result<Self> {
        if n < 2 || coeffs.len() != (n - 1) * (n - 1) {
            return Err(FnsError::Format(format!(
                "filter for n = {n} needs {} coefficients, got {}",
                n.saturating_sub(1).pow(2),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(FnsError::Format("filter contains non-finite coefficients".into()));
        }
        Ok(Self { n, basis, coeffs })
    }

    /// Sine-basis filter `ϑ_pq = 1 / λ_pq` from per-mode eigenvalues (1-based modes).
    pub fn sine_inverse(n: usize, eigenvalue: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let side = n - 1;
        let mut coeffs = Vec::with_capacity(side * side);
        for q in 1..=side {
            for p in 1..=side {
                coeffs.push(Complex64::new(1.0 / eigenvalue(p, q), 0.0));
            }
        }
        Self::new(n, FilterBasis::Sine, coeffs)
    }

    /// Exact inverse of the 5-point Poisson stencil in the sine basis.
    pub fn sine_inverse_poisson(n: usize) -> Self {
        Self::sine_inverse(n, |p, q| poisson_eigenvalue(n, p, q)).expect("positive eigenvalues")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> FilterBasis {
        self.basis
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// `|ϑ|` per bin, laid out like a grid, for visual inspection.
    pub fn magnitude(&self) -> Grid {
        Grid::new(self.n, self.coeffs.iter().map(|c| c.norm()).collect())
            .expect("filter shape is a grid shape")
    }
}

/// Spectrum of the residual in the filter's basis, kept for reuse by the
/// adjoint pass during training.
pub(crate) fn forward_spectrum(r: &Grid, basis: FilterBasis) -> Vec<Complex64> {
    match basis {
        FilterBasis::Fourier => {
            let mut c = ComplexGrid::from_real(r).into_values();
            fft2_in_place(&mut c, r.side(), FftDirection::Forward);
            c
        }
        FilterBasis::Sine => dst2(r)
            .values()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect(),
    }
}

/// Synthesis from a filtered spectrum back to a real grid.
pub(crate) fn inverse_spectrum(n: usize, mut spectrum: Vec<Complex64>, basis: FilterBasis) -> Grid {
    let side = n - 1;
    match basis {
        FilterBasis::Fourier => {
            fft2_in_place(&mut spectrum, side, FftDirection::Inverse);
            let scale = 1.0 / (side * side) as f64;
            Grid::new(n, spectrum.iter().map(|c| c.re * scale).collect())
                .expect("spectrum shape is a grid shape")
        }
        FilterBasis::Sine => {
            let coeffs = Grid::new(n, spectrum.iter().map(|c| c.re).collect())
                .expect("spectrum shape is a grid shape");
            idst2(&coeffs)
        }
    }
}

pub(crate) fn apply_filter(spectrum: &[Complex64], filter: &SpectralFilter) -> Vec<Complex64> {
    match filter.basis {
        FilterBasis::Fourier => spectrum.iter().zip(&filter.coeffs).map(|(a, b)| a * b).collect(),
        FilterBasis::Sine => spectrum
            .iter()
            .zip(&filter.coeffs)
            .map(|(a, b)| a * b.re)
            .collect(),
    }
}

/// Error estimate `e = H_ϑ(r)` for the residual equation `A e = r`.
pub fn frequency_correct(r: &Grid, filter: &SpectralFilter) -> Result<Grid> {
    ensure_same_n(filter.n, r.n())?;
    let spectrum = forward_spectrum(r, filter.basis);
    Ok(inverse_spectrum(r.n(), apply_filter(&spectrum, filter), filter.basis))
}

/// One full iteration: smoother, residual, frequency correction, update.
pub fn fns_step(
    s: &Stencil3x3,
    smoother: &SmootherSpec,
    filter: &SpectralFilter,
    u: &Grid,
    f: &Grid,
) -> Result<Grid> {
    ensure_same_n(f.n(), u.n())?;
    ensure_same_n(f.n(), filter.n)?;
    let mut v = smoother.apply(s, u, f)?;
    let r = s.residual(&v, f);
    v.axpy(1.0, &frequency_correct(&r, filter)?);
    Ok(v)
}

/// Relative-residual history of an iterative solve.
///
/// `residuals[k]` is the relative residual after `k` iterations and
/// `matvecs[k]` the cumulative number of operator applications spent to get
/// there, so solvers with different per-iteration cost compare on one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub residuals: Vec<f64>,
    pub matvecs: Vec<usize>,
    pub converged: bool,
    pub diverged: bool,
    pub iterations: usize,
}

impl IterationTrace {
    pub(crate) fn start(initial: f64) -> Self {
        Self {
            residuals: vec![initial],
            matvecs: vec![0],
            converged: false,
            diverged: false,
            iterations: 0,
        }
    }

    pub(crate) fn trivial() -> Self {
        Self {
            residuals: vec![0.0],
            matvecs: vec![0],
            converged: true,
            diverged: false,
            iterations: 0,
        }
    }

    pub(crate) fn push(&mut self, residual: f64, matvecs: usize) {
        self.residuals.push(residual);
        self.matvecs.push(self.total_matvecs() + matvecs);
        self.iterations += 1;
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("trace is never empty")
    }

    pub fn total_matvecs(&self) -> usize {
        *self.matvecs.last().expect("trace is never empty")
    }

    /// Smallest residual reached within a budget of `matvecs` operator applications.
    pub fn residual_at_matvecs(&self, matvecs: usize) -> f64 {
        self.residuals
            .iter()
            .zip(&self.matvecs)
            .take_while(|(_, &m)| m <= matvecs)
            .map(|(&r, _)| r)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn status(&self) -> &'static str {
        if self.converged {
            "CONVERGED"
        } else if self.diverged {
            "DIVERGED"
        } else {
            "MAXITER"
        }
    }

    /// CSV with header `step,relative_residual,matvecs`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,relative_residual,matvecs\n");
        for (k, (r, m)) in self.residuals.iter().zip(&self.matvecs).enumerate() {
            let _ = writeln!(out, "{k},{r:.16e},{m}");
        }
        out
    }

    pub(crate) fn check_divergence(&mut self, residual: f64) -> bool {
        if !residual.is_finite() || residual > DIVERGENCE_LIMIT {
            self.diverged = true;
        }
        self.diverged
    }

    pub(crate) fn into_result(self, u: Grid) -> Result<(Grid, IterationTrace)> {
        if self.diverged {
            Err(FnsError::Diverged {
                step: self.iterations,
                residual: self.final_residual(),
            })
        } else {
            Ok((u, self))
        }
    }
}

fn check_solve_args(tol: f64, maxit: usize) -> Result<()> {
    if !(tol > 0.0) {
        return Err(FnsError::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    if maxit == 0 {
        return Err(FnsError::InvalidParameter("maxit must be at least 1".into()));
    }
    Ok(())
}

/// FNS iteration from `u⁰ = 0`, recording every step, never failing on
/// divergence (the trace carries the flag).
pub fn fns_solve_traced(
    s: &Stencil3x3,
    smoother: &SmootherSpec,
    filter: &SpectralFilter,
    f: &Grid,
    tol: f64,
    maxit: usize,
) -> Result<(Grid, IterationTrace)> {
    check_solve_args(tol, maxit)?;
    ensure_same_n(f.n(), filter.n)?;
    smoother.validate(s)?;
    let f_norm = norm2(f);
    let mut u = Grid::zeros(f.n());
    if f_norm == 0.0 {
        return Ok((u, IterationTrace::trivial()));
    }
    let skip_correction = filter.is_zero();
    // Φ product count, the residual after Φ, and the convergence check; the
    // check doubles as the residual Φ itself needs, and it coincides with the
    // post-Φ residual when there is no correction.
    let per_step = if skip_correction {
        smoother.matvecs()
    } else {
        smoother.matvecs() + 1
    };
    let mut trace = IterationTrace::start(1.0);
    let mut residual = f.clone();
    while trace.iterations < maxit {
        let mut v = smoother_from_residual(smoother, s, &u, f, &residual)?;
        let mut r = s.residual(&v, f);
        if !skip_correction {
            v.axpy(1.0, &frequency_correct(&r, filter)?);
            r = s.residual(&v, f);
        }
        u = v;
        residual = r;
        let rel = norm2(&residual) / f_norm;
        trace.push(rel, per_step);
        if trace.check_divergence(rel) {
            break;
        }
        if rel <= tol {
            trace.converged = true;
            break;
        }
    }
    Ok((u, trace))
}

/// FNS online solve. Divergence (non-finite residual or growth past
/// [`DIVERGENCE_LIMIT`]) is an error.
pub fn fns_solve(
    s: &Stencil3x3,
    smoother: &SmootherSpec,
    filter: &SpectralFilter,
    f: &Grid,
    tol: f64,
    maxit: usize,
) -> Result<(Grid, IterationTrace)> {
    let (u, trace) = fns_solve_traced(s, smoother, filter, f, tol, maxit)?;
    trace.into_result(u)
}

/// Plain stationary iteration `u ← Φ(u)`.
pub fn stationary_solve(
    s: &Stencil3x3,
    smoother: &SmootherSpec,
    f: &Grid,
    tol: f64,
    maxit: usize,
) -> Result<(Grid, IterationTrace)> {
    fns_solve_traced(s, smoother, &SpectralFilter::zeros(f.n(), FilterBasis::Fourier), f, tol, maxit)
}

/// `Φ(u)` when the residual `f - A u` is already known, saving one product.
fn smoother_from_residual(
    smoother: &SmootherSpec,
    s: &Stencil3x3,
    u: &Grid,
    f: &Grid,
    residual: &Grid,
) -> Result<Grid> {
    use crate::smoothers::{chebyshev_taus, learned_conv_apply};
    let mut u = u.clone();
    match smoother {
        SmootherSpec::WeightedJacobi { omega, sweeps } => {
            let step = omega / s.center();
            u.axpy(step, residual);
            for _ in 1..*sweeps {
                let r = s.residual(&u, f);
                u.axpy(step, &r);
            }
        }
        SmootherSpec::Chebyshev {
            degree,
            alpha,
            lambda_max,
        } => {
            let taus = chebyshev_taus(*lambda_max, *alpha, *degree)?;
            u.axpy(taus[0], residual);
            for &tau in &taus[1..] {
                let r = s.residual(&u, f);
                u.axpy(tau, &r);
            }
        }
        SmootherSpec::LearnedConv(k) => u.axpy(1.0, &learned_conv_apply(k, residual)),
    }
    Ok(u)
}

/// Direct solve of the 5-point Poisson system `[[0,-1,0],[-1,4,-1],[0,-1,0]] u = f`
/// by sine-transform diagonalization.
pub fn fast_poisson_solve(f: &Grid) -> Grid {
    let n = f.n();
    let c = dst2(f);
    let scaled = Grid::from_fn(n, |p, q| c.get(p, q) / poisson_eigenvalue(n, p + 1, q + 1));
    idst2(&scaled)
}

/// Direct solve of the Helmholtz system `(1/h²)[[0,-1,0],[-1,4-κ²h²,-1],[0,-1,0]] u = f`.
pub fn fast_helmholtz_solve(f: &Grid, kappa: f64) -> Result<Grid> {
    let n = f.n();
    let h = f.h();
    let c = dst2(f);
    let mut scaled = Grid::zeros(n);
    for q in 0..n - 1 {
        for p in 0..n - 1 {
            let lam = (poisson_eigenvalue(n, p + 1, q + 1) - kappa * kappa * h * h) / (h * h);
            if lam.abs() < 1e-12 {
                return Err(FnsError::Breakdown(format!(
                    "Helmholtz operator is singular at mode ({}, {})",
                    p + 1,
                    q + 1
                )));
            }
            scaled.set(p, q, c.get(p, q) / lam);
        }
    }
    Ok(idst2(&scaled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sine_mode;
    use crate::problems::{build_helmholtz, build_poisson, sample_rhs};
    use crate::transform::{fft2, ifft2};

    #[test]
    fn zero_filter_gives_zero_correction() {
        let r = sample_rhs(9, 1);
        let e = frequency_correct(&r, &SpectralFilter::zeros(9, FilterBasis::Fourier)).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_filter_roundtrips() {
        for basis in [FilterBasis::Fourier, FilterBasis::Sine] {
            let r = sample_rhs(17, 2);
            let id = SpectralFilter::constant(17, basis, Complex64::new(1.0, 0.0));
            assert!(frequency_correct(&r, &id).unwrap().max_abs_diff(&r) < 1e-12);
        }
    }

    #[test]
    fn single_bin_filter_on_fourier_mode() {
        let n = 9;
        let side = n - 1;
        let (p, q) = (2usize, 5usize);
        let c = Complex64::new(0.7, -1.3);
        let mut filter = SpectralFilter::zeros(n, FilterBasis::Fourier);
        filter.coeffs_mut()[q * side + p] = c;
        // r = cos(2π(p i + q j)/m): its spectrum sits on bins (p,q) and (-p,-q).
        let pi = std::f64::consts::PI;
        let phase = |i: usize, j: usize| 2.0 * pi * ((p * i + q * j) as f64) / side as f64;
        let r = Grid::from_fn(n, |i, j| phase(i, j).cos());
        let e = frequency_correct(&r, &filter).unwrap();
        // Only the (p,q) half survives: e = Re(c · e^{iφ} / 2).
        let expected = Grid::from_fn(n, |i, j| (c * Complex64::from_polar(0.5, phase(i, j))).re);
        assert!(e.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn frequency_correct_matches_direct_fft_route() {
        let n = 12;
        let r = sample_rhs(n, 3);
        let coeffs: Vec<_> = sample_rhs(n, 4)
            .values()
            .iter()
            .zip(sample_rhs(n, 5).values())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        let filter = SpectralFilter::new(n, FilterBasis::Fourier, coeffs.clone()).unwrap();
        let mut spec = fft2(&r);
        spec.values_mut().iter_mut().zip(&coeffs).for_each(|(a, b)| *a *= b);
        let expected = ifft2(&spec).real();
        assert!(frequency_correct(&r, &filter).unwrap().max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let r = sample_rhs(8, 1);
        let filter = SpectralFilter::zeros(9, FilterBasis::Fourier);
        assert!(matches!(
            frequency_correct(&r, &filter),
            Err(FnsError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn exact_solution_is_fixed_point() {
        let n = 16;
        let s = build_poisson(n);
        let u = sample_rhs(n, 6);
        let f = s.apply(&u);
        let filter = SpectralFilter::constant(n, FilterBasis::Fourier, Complex64::new(0.1, 0.2));
        let next = fns_step(&s, &SmootherSpec::jacobi(2.0 / 3.0, 5), &filter, &u, &f).unwrap();
        assert!(next.max_abs_diff(&u) < 1e-12);
    }

    #[test]
    fn zero_filter_step_is_smoother() {
        let n = 10;
        let s = build_poisson(n);
        let phi = SmootherSpec::jacobi(0.8, 2);
        let u = sample_rhs(n, 7);
        let f = sample_rhs(n, 8);
        let step = fns_step(&s, &phi, &SpectralFilter::zeros(n, FilterBasis::Fourier), &u, &f).unwrap();
        assert_eq!(step, phi.apply(&s, &u, &f).unwrap());
    }

    #[test]
    fn zero_rhs_returns_immediately() {
        let n = 8;
        let (u, trace) = fns_solve(
            &build_poisson(n),
            &SmootherSpec::jacobi(0.5, 1),
            &SpectralFilter::zeros(n, FilterBasis::Fourier),
            &Grid::zeros(n),
            1e-6,
            10,
        )
        .unwrap();
        assert_eq!(trace.iterations, 0);
        assert!(trace.converged);
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_inverse_filter_converges_at_once() {
        let n = 64;
        let s = build_poisson(n);
        let f = sample_rhs(n, 9);
        let (_, trace) = fns_solve(
            &s,
            &SmootherSpec::jacobi(2.0 / 3.0, 5),
            &SpectralFilter::sine_inverse_poisson(n),
            &f,
            1e-10,
            10,
        )
        .unwrap();
        assert!(trace.converged);
        assert!(trace.iterations <= 2);
        assert_eq!(trace.residuals[0], 1.0);
    }

    #[test]
    fn damped_jacobi_residual_decreases() {
        let n = 64;
        let s = build_poisson(n);
        let f = sample_rhs(n, 10);
        let (_, trace) = fns_solve(
            &s,
            &SmootherSpec::jacobi(2.0 / 3.0, 5),
            &SpectralFilter::zeros(n, FilterBasis::Fourier),
            &f,
            1e-300,
            50,
        )
        .unwrap();
        assert_eq!(trace.iterations, 50);
        assert!(trace.residuals.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(trace.total_matvecs(), 250);
    }

    #[test]
    fn divergence_is_an_error() {
        let n = 16;
        let s = build_poisson(n);
        // Richardson far beyond 2/λ_max blows up.
        let phi = SmootherSpec::Chebyshev {
            degree: 1,
            alpha: 1e9,
            lambda_max: 0.1,
        };
        let f = sample_rhs(n, 11);
        let filter = SpectralFilter::zeros(n, FilterBasis::Fourier);
        assert!(matches!(
            fns_solve(&s, &phi, &filter, &f, 1e-6, 1000),
            Err(FnsError::Diverged { .. })
        ));
        let (_, trace) = fns_solve_traced(&s, &phi, &filter, &f, 1e-6, 1000).unwrap();
        assert!(trace.diverged);
        assert_eq!(trace.status(), "DIVERGED");
    }

    #[test]
    fn fast_poisson_is_exact() {
        for &n in &[8, 32, 64] {
            let s = build_poisson(n);
            let f = sample_rhs(n, n as u64);
            let u = fast_poisson_solve(&f);
            assert!(norm2(&s.residual(&u, &f)) / norm2(&f) < 1e-10);
        }
        let n = 16;
        let mode = sine_mode(n, 1, 1);
        let f = mode.scaled(poisson_eigenvalue(n, 1, 1));
        assert!(fast_poisson_solve(&f).max_abs_diff(&mode) < 1e-12);
    }

    #[test]
    fn fast_helmholtz_is_exact() {
        let n = 64;
        let s = build_helmholtz(25.0, n).unwrap();
        let f = sample_rhs(n, 12);
        let u = fast_helmholtz_solve(&f, 25.0).unwrap();
        assert!(norm2(&s.residual(&u, &f)) / norm2(&f) < 1e-10);
    }

    #[test]
    fn trace_csv_layout() {
        let mut t = IterationTrace::start(1.0);
        t.push(0.5, 3);
        t.push(0.25, 3);
        let csv = t.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "step,relative_residual,matvecs");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1,5.0000000000000000e-1,3"));
        assert_eq!(t.residual_at_matvecs(4), 0.5);
        assert_eq!(t.residual_at_matvecs(6), 0.25);
    }
}
