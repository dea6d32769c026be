//! Separable 1-D polynomial resampling used by rescale, displacement, and the
//! measurement coordinate contraction.
//!
//! A `SampleMap` holds, for every output grid index, the eight-point Lagrange
//! stencil that evaluates the input at an arbitrary target position. Values
//! beyond the grid extent are taken as zero; every state in this simulator is
//! required to decay far below tolerance at the grid edges.

use ndarray::Array2;

use crate::grid::XGrid;

pub(crate) const STENCIL: usize = 8;
/// Node offsets of the stencil relative to the floor index.
const OFFSETS: [f64; STENCIL] = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0];

#[derive(Clone)]
pub(crate) struct SampleMap {
    /// First input index of the stencil per output point (may run past the
    /// grid; out-of-range taps contribute zero).
    base: Vec<isize>,
    weights: Vec<[f64; STENCIL]>,
    n: usize,
}

fn lagrange_weights(frac: f64) -> [f64; STENCIL] {
    let mut w = [0.0; STENCIL];
    for m in 0..STENCIL {
        let mut acc = 1.0;
        for j in 0..STENCIL {
            if j != m {
                acc *= (frac - OFFSETS[j]) / (OFFSETS[m] - OFFSETS[j]);
            }
        }
        w[m] = acc;
    }
    w
}

impl SampleMap {
    /// Stencils sampling the input at `target(x_out)` for every output node.
    pub fn new(grid: &XGrid, target: impl Fn(f64) -> f64) -> Self {
        let n = grid.n_points();
        let mut base = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let u = (target(grid.x(i)) - grid.x_min()) / grid.dx();
            let k = u.floor();
            weights.push(lagrange_weights(u - k));
            base.push(k as isize - 3);
        }
        Self { base, weights, n }
    }

    /// Apply along the first index: `out[i][j] = interp(in[.][j]) at map(i)`.
    pub fn apply_axis0(&self, input: &Array2<f64>, output: &mut Array2<f64>) {
        let n = self.n;
        let src = input.as_slice().expect("contiguous");
        let dst = output.as_slice_mut().expect("contiguous");
        dst.fill(0.0);
        for i in 0..n {
            let b = self.base[i];
            let w = &self.weights[i];
            for (m, &wm) in w.iter().enumerate() {
                let row = b + m as isize;
                if wm == 0.0 || row < 0 || row >= n as isize {
                    continue;
                }
                let src_row = &src[row as usize * n..row as usize * n + n];
                let dst_row = &mut dst[i * n..i * n + n];
                for (d, s) in dst_row.iter_mut().zip(src_row) {
                    *d += wm * s;
                }
            }
        }
    }

    /// Apply along the second index: `out[i][j] = interp(in[i][.]) at map(j)`.
    pub fn apply_axis1(&self, input: &Array2<f64>, output: &mut Array2<f64>) {
        let n = self.n;
        let src = input.as_slice().expect("contiguous");
        let dst = output.as_slice_mut().expect("contiguous");
        for i in 0..n {
            let src_row = &src[i * n..i * n + n];
            let dst_row = &mut dst[i * n..i * n + n];
            for (j, d) in dst_row.iter_mut().enumerate() {
                let b = self.base[j];
                let w = &self.weights[j];
                let mut acc = 0.0;
                for (m, &wm) in w.iter().enumerate() {
                    let col = b + m as isize;
                    if col >= 0 && col < n as isize {
                        acc += wm * src_row[col as usize];
                    }
                }
                *d = acc;
            }
        }
    }

    /// Apply the same map along both indices.
    pub fn apply_both(
        &self,
        input: &Array2<f64>,
        scratch: &mut Array2<f64>,
        output: &mut Array2<f64>,
    ) {
        self.apply_axis0(input, scratch);
        self.apply_axis1(scratch, output);
    }
}

/// Six-point Lagrange interpolation of tabulated values at one position.
pub(crate) fn interp_1d(values: &[f64], grid: &XGrid, x: f64) -> f64 {
    let n = values.len();
    let u = (x - grid.x_min()) / grid.dx();
    if u < 0.0 || u > (n - 1) as f64 {
        return 0.0;
    }
    let k = u.floor();
    let w = lagrange_weights(u - k);
    let base = k as isize - 3;
    let mut acc = 0.0;
    for (m, &wm) in w.iter().enumerate() {
        let idx = base + m as isize;
        if idx >= 0 && idx < n as isize {
            acc += wm * values[idx as usize];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_interpolate_nodes_exactly() {
        let w = lagrange_weights(0.0);
        for (m, &v) in w.iter().enumerate() {
            let expect = if m == 3 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_reproduce_degree_seven() {
        let f = |x: f64| 1.0 + x - 0.5 * x.powi(3) + 0.01 * x.powi(5) - 0.002 * x.powi(7);
        let frac = 0.37;
        let w = lagrange_weights(frac);
        let acc: f64 = w
            .iter()
            .enumerate()
            .map(|(m, &wm)| wm * f(OFFSETS[m]))
            .sum();
        assert!((acc - f(frac)).abs() < 1e-11);
    }

    #[test]
    fn interp_1d_matches_smooth_function() {
        let grid = XGrid::new(8.0, 257).unwrap();
        let values: Vec<f64> = (0..257).map(|i| (-0.5 * grid.x(i).powi(2)).exp()).collect();
        for &x in &[0.123, -3.456, 5.0, 7.9] {
            let exact = (-0.5f64 * x * x).exp();
            assert!((interp_1d(&values, &grid, x) - exact).abs() < 1e-9);
        }
    }
}
