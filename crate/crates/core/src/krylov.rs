//! Krylov baselines: conjugate gradients, restarted GMRES and BiCGSTAB(ℓ).
//!
//! All solvers start from `u⁰ = 0`, stop on the relative residual
//! `‖f - Au‖/‖f‖`, and count `maxit` in operator applications. Traces use the
//! same layout as the FNS solver, so curves line up on the matvec axis. On
//! apparent convergence the true residual is recomputed (one extra product)
//! and the iteration resumes if recurrence drift hid a larger residual.

use crate::error::{FnsError, Result};
use crate::grid::{dot, norm2, Grid, Stencil3x3};
use crate::spectral::IterationTrace;

pub const DEFAULT_GMRES_RESTART: usize = 30;

fn check_args(tol: f64, maxit: usize) -> Result<()> {
    if !(tol > 0.0) {
        return Err(FnsError::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    if maxit == 0 {
        return Err(FnsError::InvalidParameter("maxit must be at least 1".into()));
    }
    Ok(())
}

fn ddot(a: &Grid, b: &Grid) -> f64 {
    dot(a, b).expect("same mesh")
}

impl IterationTrace {
    /// Replaces the last residual and charges extra products without a new entry.
    pub(crate) fn amend_last(&mut self, residual: f64, extra_matvecs: usize) {
        *self.residuals.last_mut().expect("trace is never empty") = residual;
        *self.matvecs.last_mut().expect("trace is never empty") += extra_matvecs;
    }

    fn total(&self) -> usize {
        self.total_matvecs()
    }
}

/// Conjugate gradients, for symmetric positive definite stencils.
pub fn cg(s: &Stencil3x3, f: &Grid, tol: f64, maxit: usize) -> Result<(Grid, IterationTrace)> {
    check_args(tol, maxit)?;
    let f_norm = norm2(f);
    let mut x = Grid::zeros(f.n());
    if f_norm == 0.0 {
        return Ok((x, IterationTrace::trivial()));
    }
    let mut trace = IterationTrace::start(1.0);
    let mut r = f.clone();
    let mut p = r.clone();
    let mut rr = ddot(&r, &r);
    while trace.total() < maxit {
        let ap = s.apply(&p);
        let curvature = ddot(&p, &ap);
        if curvature == 0.0 || !curvature.is_finite() {
            return Err(FnsError::Breakdown(format!(
                "CG curvature {curvature} at iteration {}",
                trace.iterations
            )));
        }
        let alpha = rr / curvature;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rr_next = ddot(&r, &r);
        let rel = rr_next.sqrt() / f_norm;
        trace.push(rel, 1);
        if trace.check_divergence(rel) {
            break;
        }
        if rel <= tol {
            let true_r = s.residual(&x, f);
            let true_rel = norm2(&true_r) / f_norm;
            trace.amend_last(true_rel, 1);
            if true_rel <= tol {
                trace.converged = true;
                break;
            }
            // Drift: restart from the true residual.
            r = true_r;
            rr = ddot(&r, &r);
            p = r.clone();
            continue;
        }
        let beta = rr_next / rr;
        rr = rr_next;
        let mut next_p = r.clone();
        next_p.axpy(beta, &p);
        p = next_p;
    }
    Ok((x, trace))
}

/// GMRES(`restart`) with modified Gram–Schmidt Arnoldi and Givens rotations.
///
/// `restart >= maxit` gives full (unrestarted) GMRES.
pub fn gmres(s: &Stencil3x3, f: &Grid, restart: usize, tol: f64, maxit: usize) -> Result<(Grid, IterationTrace)> {
    check_args(tol, maxit)?;
    if restart == 0 {
        return Err(FnsError::InvalidParameter("GMRES restart must be at least 1".into()));
    }
    let f_norm = norm2(f);
    let mut x = Grid::zeros(f.n());
    if f_norm == 0.0 {
        return Ok((x, IterationTrace::trivial()));
    }
    let mut trace = IterationTrace::start(1.0);
    let mut r = f.clone();
    'outer: loop {
        let beta = norm2(&r);
        let m = restart.min(maxit - trace.total().min(maxit)).max(1);
        let mut v: Vec<Grid> = Vec::with_capacity(m + 1);
        v.push(r.scaled(1.0 / beta));
        // Hessenberg columns after rotation; `h[j]` has j + 2 entries.
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut cycle_best = f64::INFINITY;
        let mut steps = 0;
        for j in 0..m {
            if trace.total() >= maxit {
                break;
            }
            let mut w = s.apply(&v[j]);
            let mut col = vec![0.0; j + 2];
            for (i, vi) in v.iter().enumerate() {
                let hij = ddot(&w, vi);
                col[i] = hij;
                w.axpy(-hij, vi);
            }
            let wn = norm2(&w);
            col[j + 1] = wn;
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let denom = col[j].hypot(col[j + 1]);
            let (c, sng) = if denom == 0.0 { (1.0, 0.0) } else { (col[j] / denom, col[j + 1] / denom) };
            col[j] = denom;
            col[j + 1] = 0.0;
            g[j + 1] = -sng * g[j];
            g[j] *= c;
            cs.push(c);
            sn.push(sng);
            h.push(col);
            steps = j + 1;
            let rel = g[j + 1].abs() / f_norm;
            debug_assert!(rel <= cycle_best * (1.0 + 1e-12) || !cycle_best.is_finite());
            cycle_best = rel;
            trace.push(rel, 1);
            if trace.check_divergence(rel) {
                break 'outer;
            }
            let happy = wn <= 1e-14 * beta;
            if rel <= tol || happy {
                break;
            }
            v.push(w.scaled(1.0 / wn));
        }
        if steps == 0 {
            break;
        }
        // Back substitution for the rotated upper-triangular system.
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let mut acc = g[i];
            for (k, yk) in y.iter().enumerate().skip(i + 1) {
                acc -= h[k][i] * yk;
            }
            y[i] = acc / h[i][i];
        }
        for (yi, vi) in y.iter().zip(&v) {
            x.axpy(*yi, vi);
        }
        r = s.residual(&x, f);
        let true_rel = norm2(&r) / f_norm;
        trace.amend_last(true_rel, 1);
        if trace.check_divergence(true_rel) {
            break;
        }
        if true_rel <= tol {
            trace.converged = true;
            break;
        }
        if trace.total() >= maxit {
            break;
        }
    }
    Ok((x, trace))
}

/// BiCGSTAB(ℓ): ℓ BiCG steps followed by a degree-ℓ minimal-residual update
/// per cycle, `2ℓ` products per cycle.
pub fn bicgstab_l(s: &Stencil3x3, f: &Grid, ell: usize, tol: f64, maxit: usize) -> Result<(Grid, IterationTrace)> {
    check_args(tol, maxit)?;
    if ell == 0 {
        return Err(FnsError::InvalidParameter("BiCGSTAB(ℓ) needs ℓ >= 1".into()));
    }
    let f_norm = norm2(f);
    let n = f.n();
    let mut x = Grid::zeros(n);
    if f_norm == 0.0 {
        return Ok((x, IterationTrace::trivial()));
    }
    let mut trace = IterationTrace::start(1.0);
    let mut shadow = f.clone();
    let mut restarted = false;
    let mut rs: Vec<Grid> = vec![Grid::zeros(n); ell + 1];
    let mut us: Vec<Grid> = vec![Grid::zeros(n); ell + 1];
    rs[0] = f.clone();
    let (mut rho0, mut alpha, mut omega) = (1.0f64, 0.0f64, 1.0f64);
    let tiny = 1e-300;
    while trace.total() < maxit {
        rho0 *= -omega;
        let mut breakdown = false;
        for j in 0..ell {
            let rho1 = ddot(&shadow, &rs[j]);
            if rho0.abs() < tiny || !rho1.is_finite() {
                breakdown = true;
                break;
            }
            let beta = alpha * rho1 / rho0;
            rho0 = rho1;
            for i in 0..=j {
                let mut ui = rs[i].clone();
                ui.axpy(-beta, &us[i]);
                us[i] = ui;
            }
            us[j + 1] = s.apply(&us[j]);
            let gamma = ddot(&shadow, &us[j + 1]);
            if gamma.abs() < tiny || !gamma.is_finite() {
                breakdown = true;
                break;
            }
            alpha = rho0 / gamma;
            for i in 0..=j {
                rs[i].axpy(-alpha, &us[i + 1]);
            }
            rs[j + 1] = s.apply(&rs[j]);
            x.axpy(alpha, &us[0]);
        }
        if breakdown {
            if restarted {
                return Err(FnsError::Breakdown(format!(
                    "BiCGSTAB(ℓ) ρ-breakdown after {} products",
                    trace.total()
                )));
            }
            // New shadow residual from the true residual, fresh recurrences.
            restarted = true;
            rs[0] = s.residual(&x, f);
            shadow = rs[0].clone();
            us.iter_mut().for_each(|u| *u = Grid::zeros(n));
            rho0 = 1.0;
            alpha = 0.0;
            omega = 1.0;
            trace.amend_last(norm2(&rs[0]) / f_norm, 1);
            continue;
        }
        // Minimal-residual polynomial via modified Gram–Schmidt on r_1..r_ℓ.
        let mut tau = vec![vec![0.0; ell + 1]; ell + 1];
        let mut sigma = vec![0.0; ell + 1];
        let mut gp = vec![0.0; ell + 1];
        for j in 1..=ell {
            for i in 1..j {
                tau[i][j] = ddot(&rs[j], &rs[i]) / sigma[i];
                let ri = rs[i].clone();
                rs[j].axpy(-tau[i][j], &ri);
            }
            sigma[j] = ddot(&rs[j], &rs[j]);
            if sigma[j] < tiny {
                sigma[j] = tiny;
            }
            gp[j] = ddot(&rs[0], &rs[j]) / sigma[j];
        }
        let mut gam = vec![0.0; ell + 1];
        gam[ell] = gp[ell];
        omega = gam[ell];
        for j in (1..ell).rev() {
            let mut acc = gp[j];
            for i in j + 1..=ell {
                acc -= tau[j][i] * gam[i];
            }
            gam[j] = acc;
        }
        let mut gpp = vec![0.0; ell + 1];
        for j in 1..ell {
            let mut acc = gam[j + 1];
            for i in j + 1..ell {
                acc += tau[j][i] * gam[i + 1];
            }
            gpp[j] = acc;
        }
        x.axpy(gam[1], &rs[0]);
        let rl = rs[ell].clone();
        rs[0].axpy(-gp[ell], &rl);
        let ul = us[ell].clone();
        us[0].axpy(-gam[ell], &ul);
        for j in 1..ell {
            let uj = us[j].clone();
            us[0].axpy(-gam[j], &uj);
            x.axpy(gpp[j], &rs[j]);
            let rj = rs[j].clone();
            rs[0].axpy(-gp[j], &rj);
        }
        let rel = norm2(&rs[0]) / f_norm;
        trace.push(rel, 2 * ell);
        if trace.check_divergence(rel) {
            break;
        }
        if rel <= tol {
            let true_r = s.residual(&x, f);
            let true_rel = norm2(&true_r) / f_norm;
            trace.amend_last(true_rel, 1);
            if true_rel <= tol {
                trace.converged = true;
                break;
            }
            rs[0] = true_r;
        }
        if omega == 0.0 {
            return Err(FnsError::Breakdown("BiCGSTAB(ℓ) stagnation: ω = 0".into()));
        }
    }
    Ok((x, trace))
}
