//! FFT-backed transforms on interior grids: the 2-D DFT used by the spectral
//! correction and the orthonormal 2-D type-I sine transform.
//!
//! Plans come from a thread-local [`FftPlanner`], so every worker thread owns
//! its own cache.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::grid::{ComplexGrid, Grid};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

fn transpose_square<T: Copy>(data: &mut [T], side: usize) {
    for j in 0..side {
        for i in (j + 1)..side {
            data.swap(j * side + i, i * side + j);
        }
    }
}

/// Unnormalized 2-D DFT of a square row-major buffer, in place.
pub(crate) fn fft2_in_place(data: &mut [Complex64], side: usize, direction: FftDirection) {
    debug_assert_eq!(data.len(), side * side);
    let fft = plan(side, direction);
    // Row transforms, then columns via transposition.
    fft.process(data);
    transpose_square(data, side);
    fft.process(data);
    transpose_square(data, side);
}

/// Forward 2-D DFT, unnormalized: `X[k] = Σ x[j] e^{-2πi jk/m}` in both axes.
pub fn fft2(u: &Grid) -> ComplexGrid {
    let mut c = ComplexGrid::from_real(u);
    let side = c.side();
    fft2_in_place(c.values_mut(), side, FftDirection::Forward);
    c
}

/// Inverse 2-D DFT carrying the `1/N` factor, so `ifft2(fft2(u)) = u`.
pub fn ifft2(c: &ComplexGrid) -> ComplexGrid {
    let mut out = c.clone();
    let side = out.side();
    fft2_in_place(out.values_mut(), side, FftDirection::Inverse);
    let scale = 1.0 / (side * side) as f64;
    out.values_mut().iter_mut().for_each(|v| *v *= scale);
    out
}

/// Orthonormal DST-I along each contiguous row of length `side`, in place.
///
/// Each row is odd-extended to length `2(side+1)` and pushed through one
/// complex FFT; the sine sums are `-Im(Y_k)/2`.
fn dst_rows(data: &mut [f64], side: usize) {
    let n = side + 1;
    let len = 2 * n;
    let fft = plan(len, FftDirection::Forward);
    let zero = Complex64::new(0.0, 0.0);
    let mut buf = vec![zero; side * len];
    for (row, ext) in data.chunks(side).zip(buf.chunks_mut(len)) {
        for (j, &x) in row.iter().enumerate() {
            ext[j + 1] = Complex64::new(x, 0.0);
            ext[len - 1 - j] = Complex64::new(-x, 0.0);
        }
    }
    fft.process(&mut buf);
    let norm = (2.0 / n as f64).sqrt();
    for (row, ext) in data.chunks_mut(side).zip(buf.chunks(len)) {
        for (k, x) in row.iter_mut().enumerate() {
            *x = -0.5 * norm * ext[k + 1].im;
        }
    }
}

/// Orthonormal 2-D type-I discrete sine transform.
///
/// Coefficient `(p-1, q-1)` is the weight of the mode `sin(pπx) sin(qπy)`
/// up to the normalization `n/2`. The transform is its own inverse.
pub fn dst2(u: &Grid) -> Grid {
    let side = u.side();
    let mut values = u.values().to_vec();
    dst_rows(&mut values, side);
    transpose_square(&mut values, side);
    dst_rows(&mut values, side);
    transpose_square(&mut values, side);
    Grid::new(u.n(), values).expect("transform preserves shape")
}

/// Inverse of [`dst2`]; with the orthonormal convention it is the same map.
pub fn idst2(c: &Grid) -> Grid {
    dst2(c)
}
