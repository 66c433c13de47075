//! Offline training of the spectral filter, and optionally the learned
//! convolution smoother, by minimizing the relative residual after `K`
//! unrolled FNS steps:
//!
//! ```text
//! L = Σ_i ‖f_i - A u_i^K‖ / ‖f_i‖
//! ```
//!
//! Every step is linear in the iterate, so the gradient is computed by a hand
//! written reverse pass: transposed stencils for `A`, scaled inverse FFTs for
//! the forward FFT, and per-bin products for the Hadamard filter.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{FnsError, Result};
use crate::grid::{dst2, norm2, Grid, Stencil3x3};
use crate::problems::{sample_rhs, ProblemSpec};
use crate::smoothers::{chebyshev_taus, conv_hidden, ConvKernels, SmootherSpec, CONV_CHANNELS};
use crate::spectral::{apply_filter, forward_spectrum, inverse_spectrum, FilterBasis, SpectralFilter};
use crate::transform::fft2_in_place;
use crate::checkpoint::{Checkpoint, TrainingMeta};

/// Relative residual treated as an exact solve by the reverse pass.
pub const RESIDUAL_FLOOR: f64 = 1e-13;

/// Number of unrolled steps per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KSchedule {
    Fixed(usize),
    /// Linear integer ramp from `start` at the first epoch to `end` at the last.
    Ramp { start: usize, end: usize },
}

impl KSchedule {
    pub fn at(&self, epoch: usize, epochs: usize) -> usize {
        match *self {
            KSchedule::Fixed(k) => k,
            KSchedule::Ramp { start, end } => {
                if epochs <= 1 {
                    return end;
                }
                let t = epoch as f64 / (epochs - 1) as f64;
                (start as f64 + (end as f64 - start as f64) * t).round() as usize
            }
        }
    }

    fn min(&self) -> usize {
        match *self {
            KSchedule::Fixed(k) => k,
            KSchedule::Ramp { start, end } => start.min(end),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub k_schedule: KSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate for the convolution kernels; defaults to `learning_rate`.
    pub smoother_learning_rate: Option<f64>,
    /// Maximum global gradient norm.
    pub grad_clip: Option<f64>,
    /// Half-width of the uniform initialization of learned kernels.
    pub init_scale: f64,
    pub seed: u64,
    pub train_smoother: bool,
    pub basis: FilterBasis,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k_schedule: KSchedule::Fixed(10),
            epochs: 200,
            batch_size: 10,
            learning_rate: 0.1,
            smoother_learning_rate: None,
            grad_clip: None,
            init_scale: 1e-2,
            seed: 0,
            train_smoother: false,
            basis: FilterBasis::Fourier,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(FnsError::InvalidParameter(msg.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.k_schedule.min() == 0 {
            return bad("K must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if let Some(lr) = self.smoother_learning_rate {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad("smoother learning rate must be finite and non-negative");
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("gradient clip must be positive");
            }
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init scale must be positive");
        }
        Ok(())
    }
}

/// Gradient of the loss: filter part interleaved `(re, im)` per bin, then
/// the flattened kernels when they are trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub filter: Vec<f64>,
    pub kernels: Option<Vec<f64>>,
}

impl Gradient {
    fn zeros(bins: usize, with_kernels: bool) -> Self {
        Self {
            filter: vec![0.0; 2 * bins],
            kernels: with_kernels.then(|| vec![0.0; 2 * CONV_CHANNELS * 9]),
        }
    }

    fn add(&mut self, other: &Gradient) {
        self.filter.iter_mut().zip(&other.filter).for_each(|(a, b)| *a += b);
        if let (Some(a), Some(b)) = (self.kernels.as_mut(), other.kernels.as_ref()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.filter.iter().chain(self.kernels.iter().flatten())
    }

    fn scale(&mut self, a: f64) {
        self.filter.iter_mut().for_each(|v| *v *= a);
        self.kernels.iter_mut().flatten().for_each(|v| *v *= a);
    }

    /// Rescales to norm `max_norm` when larger; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Per-step quantities the reverse pass needs.
struct StepTape {
    /// Residual `f - A u` entering a learned convolution smoother.
    smoother_residual: Option<Grid>,
    /// Residual after the smoother, in the filter's basis.
    spectrum: Vec<Complex64>,
}

/// Φ as data for the reverse pass.
enum Smoother<'a> {
    /// Successive Richardson steps `u ← u + d_t (f - Au)`.
    Richardson(Vec<f64>),
    Conv(&'a ConvKernels),
}

impl<'a> Smoother<'a> {
    fn new(spec: &'a SmootherSpec, s: &Stencil3x3) -> Result<Self> {
        spec.validate(s)?;
        Ok(match spec {
            SmootherSpec::WeightedJacobi { omega, sweeps } => Smoother::Richardson(vec![omega / s.center(); *sweeps]),
            SmootherSpec::Chebyshev {
                degree,
                alpha,
                lambda_max,
            } => Smoother::Richardson(chebyshev_taus(*lambda_max, *alpha, *degree)?),
            SmootherSpec::LearnedConv(k) => Smoother::Conv(k),
        })
    }
}

fn check_batch(s: &Stencil3x3, filter: &SpectralFilter, batch: &[Grid], k: usize) -> Result<()> {
    if k == 0 {
        return Err(FnsError::InvalidParameter("K must be at least 1".into()));
    }
    if batch.is_empty() {
        return Err(FnsError::InvalidParameter("empty training batch".into()));
    }
    if !s.is_finite() {
        return Err(FnsError::InvalidParameter("non-finite stencil".into()));
    }
    for f in batch {
        crate::error::ensure_same_n(filter.n(), f.n())?;
    }
    Ok(())
}

/// `K` FNS steps from zero; returns the final iterate and the tape.
fn forward(
    s: &Stencil3x3,
    phi: &Smoother<'_>,
    filter: &SpectralFilter,
    f: &Grid,
    k: usize,
    record: bool,
) -> (Grid, Vec<StepTape>) {
    let mut u = Grid::zeros(f.n());
    let mut tape = Vec::with_capacity(if record { k } else { 0 });
    for _ in 0..k {
        let mut conv_residual = None;
        let mut v = u;
        match phi {
            Smoother::Richardson(steps) => {
                for &d in steps {
                    let r = s.residual(&v, f);
                    v.axpy(d, &r);
                }
            }
            Smoother::Conv(kernels) => {
                let rho = s.residual(&v, f);
                v.axpy(1.0, &crate::smoothers::learned_conv_apply(kernels, &rho));
                conv_residual = Some(rho);
            }
        }
        let r = s.residual(&v, f);
        let spectrum = forward_spectrum(&r, filter.basis());
        let e = inverse_spectrum(f.n(), apply_filter(&spectrum, filter), filter.basis());
        v.axpy(1.0, &e);
        u = v;
        if record {
            tape.push(StepTape {
                smoother_residual: conv_residual,
                spectrum,
            });
        }
    }
    (u, tape)
}

fn relative_residual(s: &Stencil3x3, u: &Grid, f: &Grid) -> (f64, Grid, f64) {
    let res = s.residual(u, f);
    let fnorm = norm2(f);
    (norm2(&res) / fnorm, res, fnorm)
}

/// `Σ_i ‖f_i - A u_i^K‖ / ‖f_i‖` over the batch, starting each sample from zero.
pub fn loss(
    s: &Stencil3x3,
    smoother: &SmootherSpec,
    filter: &SpectralFilter,
    batch: &[Grid],
    k: usize,
) -> Result<f64> {
    check_batch(s, filter, batch, k)?;
    let phi = Smoother::new(smoother, s)?;
    let terms: Vec<Result<f64>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            if norm2(f) == 0.0 {
                return Err(FnsError::InvalidParameter(format!("sample {i} has a zero right-hand side")));
            }
            let (u, _) = forward(s, &phi, filter, f, k, false);
            let (rel, _, _) = relative_residual(s, &u, f);
            if rel.is_finite() {
                Ok(rel)
            } else {
                Err(FnsError::NonFinite { sample: i })
            }
        })
        .collect();
    terms.into_iter().sum()
}

/// `Σ_(dx,dy) a(i,j) b(i+dx, j+dy)` for every offset in the 3×3 window.
fn correlate(a: &Grid, b: &Grid) -> Stencil3x3 {
    let m = a.side() as isize;
    let (av, bv) = (a.values(), b.values());
    let mut out = Stencil3x3::zero();
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let mut acc = 0.0;
            for j in (-dy).max(0)..(m - dy).min(m) {
                let i_lo = (-dx).max(0);
                let i_hi = (m - dx).min(m);
                let ar = &av[(j * m + i_lo) as usize..(j * m + i_hi) as usize];
                let br = &bv[((j + dy) * m + i_lo + dx) as usize..((j + dy) * m + i_hi + dx) as usize];
                acc += ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
            }
            out.set(dx, dy, acc);
        }
    }
    out
}

/// Reverse pass for one sample; returns its loss term and gradient.
fn sample_gradient(
    s: &Stencil3x3,
    st: &Stencil3x3,
    phi: &Smoother<'_>,
    filter: &SpectralFilter,
    f: &Grid,
    k: usize,
    with_kernels: bool,
) -> (f64, Gradient) {
    let n = f.n();
    let side = n - 1;
    let bins = side * side;
    let (u, tape) = forward(s, phi, filter, f, k, true);
    let (rel, res, fnorm) = relative_residual(s, &u, f);
    let mut grad = Gradient::zeros(bins, with_kernels);
    let res_norm = norm2(&res);
    // The norm has a kink at zero; below rounding level we are at the
    // minimum and take the zero subgradient.
    if rel <= RESIDUAL_FLOOR || !rel.is_finite() {
        return (rel, grad);
    }
    // ∂L/∂u^K = -Aᵀ res / (‖res‖ ‖f‖).
    let mut ubar = st.apply(&res);
    ubar.scale(-1.0 / (res_norm * fnorm));
    let kernels_t = match phi {
        Smoother::Conv(kern) => Some((
            kern.first.map(|k| k.transposed()),
            kern.second.map(|k| k.transposed()),
        )),
        Smoother::Richardson(_) => None,
    };
    let inv_bins = 1.0 / bins as f64;
    for step in tape.into_iter().rev() {
        // u^{k+1} = v + e: both receive ū; e = H(r), r = f - A v.
        let rbar = match filter.basis() {
            FilterBasis::Fourier => {
                let mut g = crate::grid::ComplexGrid::from_real(&ubar).into_values();
                fft2_in_place(&mut g, side, FftDirection::Inverse);
                g.iter_mut().for_each(|c| *c *= inv_bins);
                for (b, (rh, gk)) in step.spectrum.iter().zip(&g).enumerate() {
                    let z = rh * gk;
                    grad.filter[2 * b] += z.re;
                    grad.filter[2 * b + 1] -= z.im;
                }
                let mut w: Vec<Complex64> = g.iter().zip(filter.coeffs()).map(|(a, b)| a * b).collect();
                fft2_in_place(&mut w, side, FftDirection::Forward);
                Grid::new(n, w.iter().map(|c| c.re).collect()).expect("grid shape")
            }
            FilterBasis::Sine => {
                let se = dst2(&ubar);
                let mut scaled = Grid::zeros(n);
                for (b, ((sr, sev), th)) in step
                    .spectrum
                    .iter()
                    .zip(se.values())
                    .zip(filter.coeffs())
                    .enumerate()
                {
                    grad.filter[2 * b] += sr.re * sev;
                    scaled.values_mut()[b] = th.re * sev;
                }
                dst2(&scaled)
            }
        };
        let mut vbar = ubar;
        vbar.axpy(-1.0, &st.apply(&rbar));
        ubar = match phi {
            Smoother::Richardson(steps) => {
                for &d in steps.iter().rev() {
                    let t = st.apply(&vbar);
                    vbar.axpy(-d, &t);
                }
                vbar
            }
            Smoother::Conv(kernels) => {
                let (k1t, k2t) = kernels_t.as_ref().expect("conv transposes");
                let rho = step.smoother_residual.as_ref().expect("recorded residual");
                let mut bt = Grid::zeros(n);
                let hidden = if with_kernels { conv_hidden(kernels, rho) } else { Vec::new() };
                for p in 0..CONV_CHANNELS {
                    let cbar = k2t[p].apply(&vbar);
                    if let Some(kg) = grad.kernels.as_mut() {
                        let g2 = correlate(&vbar, &hidden[p]);
                        let g1 = correlate(&cbar, rho);
                        let o1 = p * 9;
                        let o2 = (CONV_CHANNELS + p) * 9;
                        for (idx, (a, b)) in g1.rows().iter().flatten().zip(g2.rows().iter().flatten()).enumerate() {
                            kg[o1 + idx] += a;
                            kg[o2 + idx] += b;
                        }
                    }
                    k1t[p].apply_add(&cbar, &mut bt);
                }
                let mut out = vbar;
                out.axpy(-1.0, &st.apply(&bt));
                out
            }
        };
    }
    (rel, grad)
}

/// Loss and its exact gradient; kernel gradients are included when
/// `wrt_kernels` is set and Φ is the learned convolution.
pub fn grad_loss(
    s: &Stencil3x3,
    smoother: &SmootherSpec,
    filter: &SpectralFilter,
    batch: &[Grid],
    k: usize,
    wrt_kernels: bool,
) -> Result<(f64, Gradient)> {
    check_batch(s, filter, batch, k)?;
    let phi = Smoother::new(smoother, s)?;
    let with_kernels = wrt_kernels && matches!(phi, Smoother::Conv(_));
    let st = s.transposed();
    let parts: Vec<(f64, Gradient)> = batch
        .par_iter()
        .map(|f| sample_gradient(s, &st, &phi, filter, f, k, with_kernels))
        .collect();
    let bins = filter.coeffs().len();
    let mut total = Gradient::zeros(bins, with_kernels);
    let mut loss = 0.0;
    // Fixed summation order keeps results independent of the thread count.
    for (i, (l, g)) in parts.iter().enumerate() {
        if !l.is_finite() {
            return Err(FnsError::NonFinite { sample: i });
        }
        loss += l;
        total.add(g);
    }
    if !total.norm().is_finite() {
        return Err(FnsError::NonFinite { sample: 0 });
    }
    Ok((loss, total))
}

/// Adam with the standard constants.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub k: usize,
    /// Batch loss, summed over samples.
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

impl TrainReport {
    /// CSV with header `epoch,k,loss,mean_loss,grad_norm`.
    pub fn history_csv(&self, batch_size: usize) -> String {
        let mut out = String::from("epoch,k,loss,mean_loss,grad_norm\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e}\n",
                r.epoch,
                r.k,
                r.loss,
                r.loss / batch_size as f64,
                r.grad_norm
            ));
        }
        out
    }
}

/// Seed of training sample `index` in `epoch`; disjoint from the small
/// consecutive seeds used for evaluation.
pub fn training_seed(base: u64, epoch: usize, index: usize) -> u64 {
    // SplitMix64 finalizer over the packed triple.
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(((epoch as u64) << 20) ^ index as u64 ^ (1 << 63)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains a filter (zero-initialized) for `problem`, with Φ fixed to
/// `smoother` unless `config.train_smoother` asks for learned kernels.
pub fn train(problem: &ProblemSpec, smoother: &SmootherSpec, config: &TrainConfig) -> Result<TrainReport> {
    train_with_progress(problem, smoother, config, |_| {})
}

pub fn train_with_progress(
    problem: &ProblemSpec,
    smoother: &SmootherSpec,
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    problem.validate()?;
    config.validate()?;
    let s = problem.stencil()?;
    let n = problem.n;
    let mut phi = smoother.clone();
    if config.train_smoother {
        if !matches!(phi, SmootherSpec::LearnedConv(_)) {
            return Err(FnsError::InvalidParameter(
                "smoother training needs the learned_conv smoother".into(),
            ));
        }
        phi = SmootherSpec::learned(ConvKernels::random(config.init_scale, config.seed));
    }
    phi.validate(&s)?;
    let mut filter = SpectralFilter::zeros(n, config.basis);
    let bins = filter.coeffs().len();
    let mut filter_params = vec![0.0; 2 * bins];
    let mut kernel_params = match (&phi, config.train_smoother) {
        (SmootherSpec::LearnedConv(k), true) => Some(k.to_flat()),
        _ => None,
    };
    let mut adam_filter = Adam::new(2 * bins, config.learning_rate);
    let mut adam_kernels = kernel_params
        .as_ref()
        .map(|p| Adam::new(p.len(), config.smoother_learning_rate.unwrap_or(config.learning_rate)));
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let k = config.k_schedule.at(epoch, config.epochs).max(1);
        let batch: Vec<Grid> = (0..config.batch_size)
            .map(|i| sample_rhs(n, training_seed(config.seed, epoch, i)))
            .collect();
        let (l, mut grad) = grad_loss(&s, &phi, &filter, &batch, k, config.train_smoother).map_err(|e| match e {
            FnsError::NonFinite { .. } => FnsError::TrainingDiverged {
                epoch,
                loss: f64::NAN,
            },
            other => other,
        })?;
        if !l.is_finite() {
            return Err(FnsError::TrainingDiverged { epoch, loss: l });
        }
        let grad_norm = match config.grad_clip {
            Some(c) => grad.clip_global_norm(c),
            None => grad.norm(),
        };
        adam_filter.step(&mut filter_params, &grad.filter);
        for (c, pair) in filter.coeffs_mut().iter_mut().zip(filter_params.chunks(2)) {
            *c = Complex64::new(pair[0], pair[1]);
        }
        if let (Some(params), Some(adam), Some(g)) = (kernel_params.as_mut(), adam_kernels.as_mut(), grad.kernels.as_ref()) {
            adam.step(params, g);
            phi = SmootherSpec::learned(ConvKernels::from_flat(params)?);
        }
        let record = EpochRecord {
            epoch,
            k,
            loss: l,
            grad_norm,
        };
        progress(&record);
        history.push(record);
    }
    let final_loss = history.last().map(|r| r.loss);
    let checkpoint = Checkpoint {
        problem: *problem,
        filter,
        smoother: phi,
        meta: TrainingMeta {
            final_loss,
            epochs: config.epochs,
            seed: config.seed,
            config: Some(config.clone()),
        },
    };
    Ok(TrainReport { checkpoint, history })
}

/// Iteration statistics over fresh right-hand sides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Outer iterations per sample; non-converged samples count as `maxit`.
    pub iterations: Vec<usize>,
    pub final_residuals: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub non_converged: usize,
    pub diverged: usize,
}

impl EvalSummary {
    pub fn from_runs(runs: &[(usize, f64, bool, bool)], maxit: usize) -> Self {
        let iterations: Vec<usize> = runs
            .iter()
            .map(|&(it, _, converged, _)| if converged { it } else { maxit })
            .collect();
        let count = iterations.len().max(1) as f64;
        let mean = iterations.iter().sum::<usize>() as f64 / count;
        let var = iterations.iter().map(|&i| (i as f64 - mean).powi(2)).sum::<f64>() / count;
        Self {
            final_residuals: runs.iter().map(|r| r.1).collect(),
            non_converged: runs.iter().filter(|r| !r.2).count(),
            diverged: runs.iter().filter(|r| r.3).count(),
            iterations,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Runs the FNS solve for `num_rhs` right-hand sides with seeds `seed, seed+1, …`.
pub fn evaluate(checkpoint: &Checkpoint, num_rhs: usize, tol: f64, maxit: usize, seed: u64) -> Result<EvalSummary> {
    let s = checkpoint.problem.stencil()?;
    let runs: Vec<Result<(usize, f64, bool, bool)>> = (0..num_rhs)
        .into_par_iter()
        .map(|i| {
            let f = sample_rhs(checkpoint.problem.n, seed.wrapping_add(i as u64));
            let (_, trace) =
                crate::spectral::fns_solve_traced(&s, &checkpoint.smoother, &checkpoint.filter, &f, tol, maxit)?;
            Ok((trace.iterations, trace.final_residual(), trace.converged, trace.diverged))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_runs(&runs, maxit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{build_convection_diffusion, build_poisson};
    use crate::spectral::fns_solve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_filter(n: usize, scale: f64, seed: u64) -> SpectralFilter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..(n - 1) * (n - 1))
            .map(|_| Complex64::new(scale * rng.random_range(-1.0..1.0), scale * rng.random_range(-1.0..1.0)))
            .collect();
        SpectralFilter::new(n, FilterBasis::Fourier, coeffs).unwrap()
    }

    fn batch(n: usize, count: usize, seed: u64) -> Vec<Grid> {
        (0..count).map(|i| sample_rhs(n, seed + i as u64)).collect()
    }

    fn with_coeff(filter: &SpectralFilter, idx: usize, delta: Complex64) -> SpectralFilter {
        let mut f = filter.clone();
        f.coeffs_mut()[idx] += delta;
        f
    }

    #[test]
    fn filter_gradient_matches_finite_differences() {
        let n = 8;
        let s = build_poisson(n);
        let phi = SmootherSpec::jacobi(2.0 / 3.0, 2);
        let filter = random_filter(n, 0.1, 1);
        let b = batch(n, 2, 10);
        let (_, g) = grad_loss(&s, &phi, &filter, &b, 3, false).unwrap();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let idx = rng.random_range(0..filter.coeffs().len());
            for (part, delta) in [(0, Complex64::new(h, 0.0)), (1, Complex64::new(0.0, h))] {
                let lp = loss(&s, &phi, &with_coeff(&filter, idx, delta), &b, 3).unwrap();
                let lm = loss(&s, &phi, &with_coeff(&filter, idx, -delta), &b, 3).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let an = g.filter[2 * idx + part];
                assert!((fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-3), "bin {idx}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn kernel_gradient_matches_finite_differences() {
        let n = 8;
        let s = build_convection_diffusion(0.05, n).unwrap();
        let kernels = ConvKernels::random(0.02, 3);
        let phi = SmootherSpec::learned(kernels.clone());
        let filter = random_filter(n, 0.002, 4);
        let b = batch(n, 2, 20);
        let (_, g) = grad_loss(&s, &phi, &filter, &b, 3, true).unwrap();
        let gk = g.kernels.unwrap();
        let flat = kernels.to_flat();
        let h = 1e-6;
        for idx in (0..flat.len()).step_by(7) {
            let mut p = flat.clone();
            p[idx] += h;
            let lp = loss(&s, &SmootherSpec::learned(ConvKernels::from_flat(&p).unwrap()), &filter, &b, 3).unwrap();
            p[idx] -= 2.0 * h;
            let lm = loss(&s, &SmootherSpec::learned(ConvKernels::from_flat(&p).unwrap()), &filter, &b, 3).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gk[idx]).abs() <= 1e-5 * fd.abs().max(gk[idx].abs()).max(1e-2), "k{idx}: {fd} vs {}", gk[idx]);
        }
    }

    #[test]
    fn sine_basis_gradient_matches_finite_differences() {
        let n = 8;
        let s = build_poisson(n);
        let phi = SmootherSpec::jacobi(0.8, 1);
        let mut filter = SpectralFilter::zeros(n, FilterBasis::Sine);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        filter
            .coeffs_mut()
            .iter_mut()
            .for_each(|c| *c = Complex64::new(rng.random_range(0.0..0.3), 0.0));
        let b = batch(n, 3, 30);
        let (_, g) = grad_loss(&s, &phi, &filter, &b, 2, false).unwrap();
        let h = 1e-6;
        for idx in [0, 5, 17, 48] {
            let d = Complex64::new(h, 0.0);
            let fd = (loss(&s, &phi, &with_coeff(&filter, idx, d), &b, 2).unwrap()
                - loss(&s, &phi, &with_coeff(&filter, idx, -d), &b, 2).unwrap())
                / (2.0 * h);
            assert!((fd - g.filter[2 * idx]).abs() <= 1e-5 * fd.abs().max(1e-3));
            assert_eq!(g.filter[2 * idx + 1], 0.0);
        }
    }

    #[test]
    fn exact_filter_gives_zero_loss_and_gradient() {
        let n = 16;
        let s = build_poisson(n);
        let phi = SmootherSpec::jacobi(2.0 / 3.0, 1);
        let b = batch(n, 3, 40);
        let filter = SpectralFilter::sine_inverse_poisson(n);
        assert!(loss(&s, &phi, &filter, &b, 1).unwrap() < 1e-8);
        let (_, g) = grad_loss(&s, &phi, &filter, &b, 1, false).unwrap();
        assert!(g.norm() < 1e-8);
    }

    #[test]
    fn zero_filter_loss_matches_solver_traces() {
        let n = 16;
        let s = build_poisson(n);
        let phi = SmootherSpec::jacobi(2.0 / 3.0, 3);
        let b = batch(n, 4, 50);
        let filter = SpectralFilter::zeros(n, FilterBasis::Fourier);
        let l = loss(&s, &phi, &filter, &b, 5).unwrap();
        let from_traces: f64 = b
            .iter()
            .map(|f| fns_solve(&s, &phi, &filter, f, 1e-300, 5).unwrap().1.final_residual())
            .sum();
        assert!((l - from_traces).abs() < 1e-12);
    }

    #[test]
    fn tiny_weight_gives_unit_loss() {
        let n = 8;
        let s = build_poisson(n);
        let l = loss(&s, &SmootherSpec::jacobi(1e-300, 1), &SpectralFilter::zeros(n, FilterBasis::Fourier), &batch(n, 1, 60), 1).unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn single_mode_gradient_is_local() {
        let n = 9;
        let side = n - 1;
        let s = build_poisson(n);
        // Periodic constant-coefficient Φ: a scalar multiple keeps the mode.
        let phi = SmootherSpec::LearnedConv(Box::new(ConvKernels::zeros()));
        let pi = std::f64::consts::PI;
        let (p, q) = (3usize, 1usize);
        let f = Grid::from_fn(n, |i, j| (2.0 * pi * ((p * i + q * j) as f64) / side as f64).cos());
        // With ϑ ≡ 0 and B = 0, u stays zero and r = f at every step.
        let filter = SpectralFilter::zeros(n, FilterBasis::Fourier);
        let (_, g) = grad_loss(&s, &phi, &filter, &[f], 1, false).unwrap();
        let support = [q * side + p, ((side - q) % side) * side + (side - p) % side];
        for b in 0..side * side {
            if !support.contains(&b) {
                assert!(g.filter[2 * b].abs() < 1e-12 && g.filter[2 * b + 1].abs() < 1e-12, "bin {b}");
            }
        }
        assert!(g.filter[2 * support[0]].abs() > 1e-3);
    }

    #[test]
    fn batch_errors() {
        let s = build_poisson(8);
        let phi = SmootherSpec::jacobi(0.5, 1);
        let filter = SpectralFilter::zeros(8, FilterBasis::Fourier);
        assert!(loss(&s, &phi, &filter, &[], 1).is_err());
        assert!(loss(&s, &phi, &filter, &batch(8, 1, 0), 0).is_err());
        assert!(loss(&s, &phi, &filter, &batch(9, 1, 0), 1).is_err());
    }

    #[test]
    fn adam_zero_lr_is_identity_and_clip_never_grows() {
        let mut adam = Adam::new(3, 0.0);
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step(&mut p, &[0.5, 0.1, -7.0]);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        let mut g = Gradient {
            filter: vec![3.0, 4.0],
            kernels: None,
        };
        assert_eq!(g.clip_global_norm(1.0), 5.0);
        assert!((g.norm() - 1.0).abs() < 1e-15);
        assert_eq!(g.clip_global_norm(10.0), 1.0);
        assert!((g.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[2.0, -0.5]);
        assert!((p[0] + 0.1).abs() < 1e-7 && (p[1] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn k_schedule_ramp() {
        let r = KSchedule::Ramp { start: 1, end: 100 };
        assert_eq!(r.at(0, 300), 1);
        assert_eq!(r.at(299, 300), 100);
        assert!((1..300).all(|e| r.at(e, 300) >= r.at(e - 1, 300)));
        assert_eq!(KSchedule::Fixed(10).at(5, 7), 10);
    }

    #[test]
    fn zero_lr_keeps_loss_constant() {
        let problem = ProblemSpec::poisson(16);
        let config = TrainConfig {
            epochs: 4,
            batch_size: 2,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let report = train(&problem, &SmootherSpec::jacobi(2.0 / 3.0, 2), &config).unwrap();
        assert!(report.checkpoint.filter.is_zero());
        // Fresh batches differ, so compare against the ϑ = 0 loss of each batch.
        let s = problem.stencil().unwrap();
        for r in &report.history {
            let b: Vec<Grid> = (0..2).map(|i| sample_rhs(16, training_seed(0, r.epoch, i))).collect();
            let l0 = loss(&s, &SmootherSpec::jacobi(2.0 / 3.0, 2), &report.checkpoint.filter, &b, 10).unwrap();
            assert_eq!(r.loss, l0);
        }
    }

    #[test]
    fn training_is_deterministic_and_helps() {
        let problem = ProblemSpec::poisson(16);
        let phi = SmootherSpec::jacobi(2.0 / 3.0, 2);
        let config = TrainConfig {
            epochs: 40,
            batch_size: 4,
            k_schedule: KSchedule::Fixed(4),
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train(&problem, &phi, &config).unwrap();
        let b = train(&problem, &phi, &config).unwrap();
        assert_eq!(a, b);
        let s = problem.stencil().unwrap();
        let held_out = batch(16, 8, 1000);
        let trained = loss(&s, &phi, &a.checkpoint.filter, &held_out, 4).unwrap();
        let plain = loss(&s, &phi, &SpectralFilter::zeros(16, FilterBasis::Fourier), &held_out, 4).unwrap();
        assert!(trained < plain);
    }

    #[test]
    fn smoother_training_requires_learned_conv() {
        let config = TrainConfig {
            train_smoother: true,
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(train(&ProblemSpec::poisson(8), &SmootherSpec::jacobi(0.5, 1), &config).is_err());
    }

    #[test]
    fn eval_summary_statistics() {
        let s = EvalSummary::from_runs(&[(4, 1e-7, true, false), (6, 1e-7, true, false), (9, 1.0, false, false)], 10);
        assert_eq!(s.iterations, vec![4, 6, 10]);
        assert!((s.mean - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.non_converged, 1);
        let one = EvalSummary::from_runs(&[(4, 1e-7, true, false)], 10);
        assert_eq!(one.std, 0.0);
    }

    #[test]
    fn oracle_checkpoint_evaluates_in_two_iterations() {
        let n = 32;
        let checkpoint = Checkpoint {
            problem: ProblemSpec::poisson(n),
            filter: SpectralFilter::sine_inverse_poisson(n),
            smoother: SmootherSpec::jacobi(2.0 / 3.0, 5),
            meta: TrainingMeta::default(),
        };
        let summary = evaluate(&checkpoint, 3, 1e-6, 100, 0).unwrap();
        assert!(summary.mean <= 2.0);
        assert_eq!(summary.non_converged, 0);
    }
}
