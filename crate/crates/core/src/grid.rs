//! Interior-node fields on a uniform unit-square mesh and constant-coefficient
//! 3×3 stencil operators acting on them.
//!
//! A mesh with `n` divisions per side has `(n-1)²` interior nodes. Values are
//! stored row-major: row `j` is the `y` index, column `i` the `x` index, and
//! node `(i, j)` sits at `((i+1)h, (j+1)h)` with `h = 1/n`. Boundary nodes
//! are never stored; stencils see them as zeros (homogeneous Dirichlet halo).

use std::fmt::Write as _;

use rustfft::num_complex::Complex64;

use crate::error::{ensure_same_n, FnsError, Result};

pub use crate::transform::{dst2, idst2};

/// Real field on the interior nodes of an `n × n` mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n: usize,
    values: Vec<f64>,
}

impl Grid {
    /// All-zero grid. Panics if `n < 2`.
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 2, "mesh needs at least 2 divisions, got {n}");
        let side = n - 1;
        Self {
            n,
            values: vec![0.0; side * side],
        }
    }

    /// Wraps an existing buffer, checking its length and finiteness.
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(FnsError::InvalidParameter(format!(
                "mesh needs at least 2 divisions, got {n}"
            )));
        }
        let side = n - 1;
        if values.len() != side * side {
            return Err(FnsError::Format(format!(
                "expected {} values for n = {n}, got {}",
                side * side,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FnsError::Format("grid contains non-finite values".into()));
        }
        Ok(Self { n, values })
    }

    /// Grid filled from `f(i, j)` with `i` the x index and `j` the y index.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut g = Self::zeros(n);
        let side = n - 1;
        for j in 0..side {
            for i in 0..side {
                g.values[j * side + i] = f(i, j);
            }
        }
        g
    }

    /// Unit impulse at interior node `(i, j)`.
    pub fn impulse(n: usize, i: usize, j: usize) -> Self {
        let mut g = Self::zeros(n);
        g.set(i, j, 1.0);
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Interior nodes per side, `n - 1`.
    pub fn side(&self) -> usize {
        self.n - 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.side() + i]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let side = self.side();
        self.values[j * side + i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Grid) {
        debug_assert_eq!(self.n, x.n);
        for (y, x) in self.values.iter_mut().zip(&x.values) {
            *y += a * x;
        }
    }

    /// `self - other`.
    pub fn sub(&self, other: &Grid) -> Grid {
        debug_assert_eq!(self.n, other.n);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Grid { n: self.n, values }
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Grid {
        let mut g = self.clone();
        g.scale(a);
        g
    }

    pub fn max_abs_diff(&self, other: &Grid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV dump: `n-1` lines of `n-1` comma-separated values, row `j = 0` first.
    pub fn to_csv(&self) -> String {
        let side = self.side();
        let mut out = String::with_capacity(self.len() * 24);
        for row in self.values.chunks(side) {
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut rows = 0usize;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            rows += 1;
            for field in line.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| FnsError::Format(format!("bad value {field:?}: {e}")))?;
                values.push(v);
            }
        }
        if rows * rows != values.len() {
            return Err(FnsError::Format(format!(
                "expected a square grid, got {rows} rows and {} values",
                values.len()
            )));
        }
        Grid::new(rows + 1, values)
    }
}

/// Complex field with the same layout as [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    n: usize,
    values: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 2, "mesh needs at least 2 divisions, got {n}");
        let side = n - 1;
        Self {
            n,
            values: vec![Complex64::new(0.0, 0.0); side * side],
        }
    }

    pub fn new(n: usize, values: Vec<Complex64>) -> Result<Self> {
        if n < 2 || values.len() != (n - 1) * (n - 1) {
            return Err(FnsError::Format(format!(
                "expected {} complex values for n = {n}, got {}",
                n.saturating_sub(1).pow(2),
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn from_real(g: &Grid) -> Self {
        Self {
            n: g.n,
            values: g.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn side(&self) -> usize {
        self.n - 1
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.values[j * self.side() + i]
    }

    pub fn real(&self) -> Grid {
        Grid {
            n: self.n,
            values: self.values.iter().map(|c| c.re).collect(),
        }
    }
}

/// Nine coefficients of a constant-coefficient operator.
///
/// `rows` is laid out as printed: `rows[0]` is the north row (`dy = +1`),
/// `rows[2]` the south row, and within a row column 0 is west (`dx = -1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil3x3 {
    rows: [[f64; 3]; 3],
}

impl Stencil3x3 {
    pub const fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        Self { rows }
    }

    pub const fn zero() -> Self {
        Self { rows: [[0.0; 3]; 3] }
    }

    /// Only the center coefficient set.
    pub const fn diagonal(c: f64) -> Self {
        Self {
            rows: [[0.0, 0.0, 0.0], [0.0, c, 0.0], [0.0, 0.0, 0.0]],
        }
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    /// Coefficient coupling node `(i, j)` to `(i+dx, j+dy)`.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        self.rows[(1 - dy) as usize][(dx + 1) as usize]
    }

    pub fn set(&mut self, dx: isize, dy: isize, value: f64) {
        self.rows[(1 - dy) as usize][(dx + 1) as usize] = value;
    }

    pub fn center(&self) -> f64 {
        self.rows[1][1]
    }

    pub fn sum(&self) -> f64 {
        self.rows.iter().flatten().sum()
    }

    /// Stencil of the adjoint operator: `at(dx, dy) -> at(-dx, -dy)`.
    pub fn transposed(&self) -> Self {
        let mut t = Self::zero();
        for dy in -1..=1 {
            for dx in -1..=1 {
                t.set(dx, dy, self.at(-dx, -dy));
            }
        }
        t
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut s = *self;
        s.rows.iter_mut().flatten().for_each(|v| *v *= a);
        s
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (-1..=1).all(|dy| (-1..=1).all(|dx| (self.at(dx, dy) - self.at(-dx, -dy)).abs() <= tol))
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Stencil3x3) -> f64 {
        self.rows
            .iter()
            .flatten()
            .zip(other.rows.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `v = A u` with zeros outside the interior.
    pub fn apply(&self, u: &Grid) -> Grid {
        let mut v = Grid::zeros(u.n);
        self.apply_add(u, &mut v);
        v
    }

    /// `out += A u`.
    pub fn apply_add(&self, u: &Grid, out: &mut Grid) {
        debug_assert_eq!(u.n, out.n);
        let m = u.side() as isize;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let c = self.at(dx, dy);
                if c == 0.0 {
                    continue;
                }
                let j_lo = (-dy).max(0);
                let j_hi = (m - dy).min(m);
                let i_lo = (-dx).max(0);
                let i_hi = (m - dx).min(m);
                if i_lo >= i_hi {
                    continue;
                }
                let width = (i_hi - i_lo) as usize;
                for j in j_lo..j_hi {
                    let dst = (j * m + i_lo) as usize;
                    let src = ((j + dy) * m + i_lo + dx) as usize;
                    let out_row = &mut out.values[dst..dst + width];
                    let in_row = &u.values[src..src + width];
                    for (o, x) in out_row.iter_mut().zip(in_row) {
                        *o += c * x;
                    }
                }
            }
        }
    }

    /// Residual `f - A u`.
    pub fn residual(&self, u: &Grid, f: &Grid) -> Grid {
        let mut r = f.clone();
        self.scaled(-1.0).apply_add(u, &mut r);
        r
    }
}

/// `v[i][j] = Σ s[a][b] u[i+a][j+b]` with a zero halo.
pub fn stencil_apply(s: &Stencil3x3, u: &Grid) -> Grid {
    s.apply(u)
}

pub fn dot(u: &Grid, v: &Grid) -> Result<f64> {
    ensure_same_n(u.n, v.n)?;
    Ok(u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum())
}

pub fn norm2(u: &Grid) -> f64 {
    u.values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Sine eigenmode `sin(pπx) sin(qπy)` sampled at the interior nodes, `1 ≤ p, q ≤ n-1`.
pub fn sine_mode(n: usize, p: usize, q: usize) -> Grid {
    let h = 1.0 / n as f64;
    let pi = std::f64::consts::PI;
    Grid::from_fn(n, |i, j| {
        let x = (i + 1) as f64 * h;
        let y = (j + 1) as f64 * h;
        (p as f64 * pi * x).sin() * (q as f64 * pi * y).sin()
    })
}

/// Eigenvalue of the 5-point stencil `[[0,-1,0],[-1,4,-1],[0,-1,0]]` for sine mode `(p, q)`.
pub fn poisson_eigenvalue(n: usize, p: usize, q: usize) -> f64 {
    let h = 1.0 / n as f64;
    let pi = std::f64::consts::PI;
    4.0 - 2.0 * (p as f64 * pi * h).cos() - 2.0 * (q as f64 * pi * h).cos()
}
