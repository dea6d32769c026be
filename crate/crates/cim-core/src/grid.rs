//! States as real density matrices in the in-phase amplitude eigenbasis.
//!
//! A state is stored as the matrix of kernel values rho(x_i, x_j) on a
//! uniform symmetric grid, in quadrature units where the vacuum variance is
//! 0.5. Entries are densities per unit x^2, so the trace is the trapezoid sum
//! of the diagonal times the spacing. Everything in this machine is real and
//! symmetric; complex parts never appear.

use ndarray::Array2;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{CimError, Result};
use crate::interp::SampleMap;

pub const MIN_POINTS: usize = 64;
/// Relative tolerance on numerically negative diagonal noise.
pub const DIAG_NEGATIVITY_TOL: f64 = 1e-6;
/// Trace below this signals numerical collapse.
pub const TRACE_UNDERFLOW: f64 = 1e-10;
/// Mass allowed to leave the grid in a rescale or displacement.
pub const OFFGRID_MASS_TOL: f64 = 1e-6;

/// Uniform symmetric discretization of the in-phase amplitude axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XGrid {
    x_max: f64,
    n_points: usize,
    dx: f64,
}

impl XGrid {
    /// Symmetric grid on `[-x_max, x_max]` with `n_points` nodes.
    pub fn new(x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_max > 0.0) || !x_max.is_finite() {
            return Err(CimError::InvalidArgument(format!(
                "x_max must be positive and finite, got {x_max}"
            )));
        }
        if n_points < MIN_POINTS {
            return Err(CimError::InvalidArgument(format!(
                "n_points must be at least {MIN_POINTS}, got {n_points}"
            )));
        }
        let dx = 2.0 * x_max / (n_points - 1) as f64;
        Ok(Self { x_max, n_points, dx })
    }

    pub fn x_min(&self) -> f64 {
        -self.x_max
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Node coordinate; exactly `-x_max` at 0 and `+x_max` at `n_points - 1`.
    pub fn x(&self, i: usize) -> f64 {
        if i == self.n_points - 1 {
            self.x_max
        } else {
            -self.x_max + i as f64 * self.dx
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Trapezoid quadrature weight (without the dx factor).
    pub fn quad_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n_points - 1 {
            0.5
        } else {
            1.0
        }
    }
}

/// First-moment and uncertainty summary of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean_x: f64,
    pub var_x: f64,
    pub var_p: f64,
    pub trace: f64,
    pub purity: f64,
}

/// Real symmetric density matrix in the in-phase amplitude basis.
#[derive(Debug, Clone)]
pub struct DensityMatrixX {
    grid: XGrid,
    values: Arc<Array2<f64>>,
}

impl DensityMatrixX {
    /// Wrap raw kernel values. The caller is responsible for symmetry.
    pub fn from_values(grid: XGrid, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != grid.n_points() || values.ncols() != grid.n_points() {
            return Err(CimError::DimensionMismatch(format!(
                "values are {}x{}, grid has {} points",
                values.nrows(),
                values.ncols(),
                grid.n_points()
            )));
        }
        Ok(Self { grid, values: Arc::new(values) })
    }

    /// Vacuum state: rho(x, x') = pi^(-1/2) exp(-(x^2 + x'^2)/2).
    pub fn vacuum(grid: XGrid) -> Self {
        Self::coherent_unchecked(grid, 0.0)
    }

    /// Coherent state with real displacement `x0` along the in-phase axis.
    pub fn coherent(grid: XGrid, x0: f64) -> Result<Self> {
        if x0.abs() > 0.75 * grid.x_max() {
            return Err(CimError::OffGrid {
                lost: x0.abs(),
                limit: 0.75 * grid.x_max(),
            });
        }
        Ok(Self::coherent_unchecked(grid, x0))
    }

    fn coherent_unchecked(grid: XGrid, x0: f64) -> Self {
        let n = grid.n_points();
        let norm = 1.0 / PI.sqrt();
        let gauss: Vec<f64> = (0..n)
            .map(|i| (-0.5 * (grid.x(i) - x0).powi(2)).exp())
            .collect();
        let mut values = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                values[(i, j)] = norm * gauss[i] * gauss[j];
            }
        }
        Self { grid, values: Arc::new(values) }
    }

    pub fn grid(&self) -> &XGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn trace(&self) -> f64 {
        let g = &self.grid;
        let mut t = 0.0;
        for i in 0..g.n_points() {
            t += g.quad_weight(i) * self.values[(i, i)];
        }
        t * g.dx()
    }

    /// Probability mass on the positive half-axis; the node at x = 0
    /// contributes half its weight to either side.
    pub fn positive_mass(&self) -> f64 {
        let g = &self.grid;
        let mut t = 0.0;
        for i in 0..g.n_points() {
            let x = g.x(i);
            let side = if x > 0.0 {
                1.0
            } else if x == 0.0 {
                0.5
            } else {
                0.0
            };
            t += side * g.quad_weight(i) * self.values[(i, i)];
        }
        t * g.dx()
    }

    pub fn purity(&self) -> f64 {
        let g = &self.grid;
        let n = g.n_points();
        let v = self.values.as_slice().expect("contiguous");
        let mut acc = 0.0;
        for i in 0..n {
            let wi = g.quad_weight(i);
            let row = &v[i * n..i * n + n];
            let mut row_acc = 0.0;
            for (j, &r) in row.iter().enumerate() {
                row_acc += g.quad_weight(j) * r * r;
            }
            acc += wi * row_acc;
        }
        acc * g.dx() * g.dx()
    }

    /// Mean and variances of x and p together with trace and purity.
    ///
    /// The p-moments come from finite differences of the kernel along its
    /// first index, evaluated on the diagonal.
    pub fn moments(&self) -> Result<Moments> {
        let trace = self.trace();
        if trace <= TRACE_UNDERFLOW {
            return Err(CimError::TraceUnderflow { trace });
        }
        let g = &self.grid;
        let n = g.n_points();
        let dx = g.dx();

        let mut m0 = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..n {
            let w = g.quad_weight(i) * self.values[(i, i)];
            let x = g.x(i);
            m0 += w;
            m1 += w * x;
            m2 += w * x * x;
        }
        m0 *= dx;
        m1 *= dx;
        m2 *= dx;
        let mean_x = m1 / m0;
        let var_x = m2 / m0 - mean_x * mean_x;

        let p2 = self.second_p_moment() / trace;
        let var_p = p2; // <p> vanishes identically for real kernels

        Ok(Moments {
            mean_x,
            var_x,
            var_p,
            trace,
            purity: self.purity(),
        })
    }

    /// Integral of -d^2/dx1^2 rho(x1, x2) on the diagonal (sixth-order
    /// stencil); equals <p^2> before trace normalization.
    fn second_p_moment(&self) -> f64 {
        // f'' ~ (2 f[-3] - 27 f[-2] + 270 f[-1] - 490 f[0] + 270 f[1] - 27 f[2] + 2 f[3]) / 180 h^2
        const C: [f64; 7] = [2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0];
        let g = &self.grid;
        let n = g.n_points();
        let inv = 1.0 / (180.0 * g.dx() * g.dx());
        let mut acc = 0.0;
        for i in 0..n {
            let mut d2 = 0.0;
            for (m, &c) in C.iter().enumerate() {
                let k = i as isize + m as isize - 3;
                if k >= 0 && k < n as isize {
                    d2 += c * self.values[(k as usize, i)];
                }
            }
            acc += g.quad_weight(i) * (-d2) * inv;
        }
        acc * g.dx()
    }

    /// First p-moment computed by the same stencil machinery; vanishes for
    /// every real symmetric kernel and serves as a numerical diagnostic.
    pub fn first_p_moment(&self) -> f64 {
        // f' ~ (-f[-3] + 9 f[-2] - 45 f[-1] + 45 f[1] - 9 f[2] + f[3]) / 60 h
        const C: [f64; 7] = [-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0];
        let g = &self.grid;
        let n = g.n_points();
        let inv = 1.0 / (60.0 * g.dx());
        let mut acc = 0.0;
        for i in 0..n {
            let mut d1 = 0.0;
            for (m, &c) in C.iter().enumerate() {
                let k = i as isize + m as isize - 3;
                if k >= 0 && k < n as isize {
                    d1 += c * self.values[(k as usize, i)];
                }
            }
            acc += g.quad_weight(i) * d1 * inv;
        }
        // <p> = Tr(p rho) = integral of -i d/dx1 rho on the diagonal; the
        // real part integrated here must cancel.
        acc * g.dx()
    }

    /// Rescale so the trace is exactly one.
    pub fn renormalize(&self) -> Result<Self> {
        let t = self.trace();
        if t <= TRACE_UNDERFLOW {
            return Err(CimError::TraceUnderflow { trace: t });
        }
        let values = self.values.as_ref() * (1.0 / t);
        Ok(Self { grid: self.grid, values: Arc::new(values) })
    }

    /// Coordinate rescale rho'(x, x') = rho(x/scale, x'/scale) / scale.
    ///
    /// This is the exact flow of the squeezing advection generator over a
    /// log-scale interval ln(scale); trace is preserved up to interpolation
    /// error.
    pub fn rescale_coords(&self, scale: f64) -> Result<Self> {
        self.rescale_coords_budget(scale, OFFGRID_MASS_TOL)
    }

    /// Rescale with an explicit relative budget for the mass allowed past
    /// the support cut; the amplifier path books this against its per-round
    /// trace tolerance instead of the stricter standalone contract.
    pub(crate) fn rescale_coords_budget(&self, scale: f64, budget: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(CimError::InvalidArgument(format!(
                "scale must be positive, got {scale}"
            )));
        }
        if scale > 1.0 {
            let lost = self.offgrid_mass(self.grid.x_max() / scale);
            let limit = budget * self.trace().max(TRACE_UNDERFLOW);
            if lost > limit {
                return Err(CimError::OffGrid { lost, limit });
            }
        }
        let map = SampleMap::new(&self.grid, |x| x / scale);
        let n = self.grid.n_points();
        let mut scratch = Array2::zeros((n, n));
        let mut out = Array2::zeros((n, n));
        map.apply_both(&self.values, &mut scratch, &mut out);
        out *= 1.0 / scale;
        Ok(Self { grid: self.grid, values: Arc::new(out) })
    }

    /// Rigid displacement rho'(x, x') = rho(x - d, x' - d).
    pub fn displace(&self, d: f64) -> Result<Self> {
        if d == 0.0 {
            return Ok(self.clone());
        }
        let keep = self.grid.x_max() - d.abs();
        let lost = self.offgrid_mass_signed(keep, d > 0.0);
        let limit = OFFGRID_MASS_TOL * self.trace().max(TRACE_UNDERFLOW);
        if lost > limit {
            return Err(CimError::OffGrid { lost, limit });
        }
        let map = SampleMap::new(&self.grid, |x| x - d);
        let n = self.grid.n_points();
        let mut scratch = Array2::zeros((n, n));
        let mut out = Array2::zeros((n, n));
        map.apply_both(&self.values, &mut scratch, &mut out);
        Ok(Self { grid: self.grid, values: Arc::new(out) })
    }

    /// Diagonal mass strictly beyond `|x| > cut`.
    fn offgrid_mass(&self, cut: f64) -> f64 {
        let g = &self.grid;
        let mut lost = 0.0;
        for i in 0..g.n_points() {
            if g.x(i).abs() > cut {
                lost += self.values[(i, i)].max(0.0);
            }
        }
        lost * g.dx()
    }

    /// Diagonal mass that a displacement toward `positive` pushes off-grid.
    fn offgrid_mass_signed(&self, cut: f64, positive: bool) -> f64 {
        let g = &self.grid;
        let mut lost = 0.0;
        for i in 0..g.n_points() {
            let x = g.x(i);
            let out = if positive { x > cut } else { x < -cut };
            if out {
                lost += self.values[(i, i)].max(0.0);
            }
        }
        lost * g.dx()
    }

    /// Largest symmetry defect max |rho(i,j) - rho(j,i)|.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.grid.n_points();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.values[(i, j)] - self.values[(j, i)]).abs());
            }
        }
        worst
    }

    /// Most negative diagonal entry relative to the diagonal maximum.
    pub fn diagonal_negativity(&self) -> f64 {
        let n = self.grid.n_points();
        let mut max_d: f64 = 0.0;
        let mut min_d: f64 = 0.0;
        for i in 0..n {
            let d = self.values[(i, i)];
            max_d = max_d.max(d);
            min_d = min_d.min(d);
        }
        if max_d > 0.0 {
            (-min_d).max(0.0) / max_d
        } else {
            0.0
        }
    }

    /// Replace the kernel by its symmetric part, discarding rounding noise.
    pub fn symmetrized(&self) -> Self {
        let n = self.grid.n_points();
        let mut v = self.values.as_ref().clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let s = 0.5 * (v[(i, j)] + v[(j, i)]);
                v[(i, j)] = s;
                v[(j, i)] = s;
            }
        }
        Self { grid: self.grid, values: Arc::new(v) }
    }

    /// Pointwise arithmetic mean of many states on a shared grid.
    pub fn average(states: &[Self]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| CimError::InvalidArgument("empty ensemble".into()))?;
        let n = first.grid.n_points();
        let mut acc = Array2::<f64>::zeros((n, n));
        for s in states {
            if s.grid != first.grid {
                return Err(CimError::DimensionMismatch(
                    "ensemble states live on different grids".into(),
                ));
            }
            acc += s.values.as_ref();
        }
        acc *= 1.0 / states.len() as f64;
        Ok(Self { grid: first.grid, values: Arc::new(acc) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn default_grid() -> XGrid {
        XGrid::new(10.0, 257).unwrap()
    }

    #[test]
    fn grid_spacing_matches_definition() {
        let g = XGrid::new(8.0, 257).unwrap();
        assert_eq!(g.dx(), 0.0625);
        assert_eq!(g.x(0), -8.0);
        assert_eq!(g.x(256), 8.0);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(XGrid::new(10.0, 2).is_err());
        assert!(XGrid::new(-1.0, 128).is_err());
        assert!(XGrid::new(0.0, 128).is_err());
    }

    #[test]
    fn vacuum_moments() {
        let rho = DensityMatrixX::vacuum(default_grid());
        let m = rho.moments().unwrap();
        assert_abs_diff_eq!(m.mean_x, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.var_x, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(m.var_p, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(m.trace, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.purity, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.var_x * m.var_p, 0.25, epsilon = 1e-6);
    }

    #[test]
    fn vacuum_peak_value() {
        let g = default_grid();
        let rho = DensityMatrixX::vacuum(g);
        let mid = g.n_points() / 2;
        assert_relative_eq!(
            rho.values()[(mid, mid)],
            1.0 / std::f64::consts::PI.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn vacuum_purity_on_modest_grid() {
        let g = XGrid::new(6.0, 129).unwrap();
        let m = DensityMatrixX::vacuum(g).moments().unwrap();
        assert_abs_diff_eq!(m.purity, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn coherent_displacement_property() {
        let g = default_grid();
        let rho = DensityMatrixX::coherent(g, 2.0).unwrap();
        let m = rho.moments().unwrap();
        assert_abs_diff_eq!(m.mean_x, 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.var_x, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(m.var_p, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn coherent_zero_equals_vacuum() {
        let g = default_grid();
        let c = DensityMatrixX::coherent(g, 0.0).unwrap();
        let v = DensityMatrixX::vacuum(g);
        let diff = (c.values() - v.values()).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn coherent_out_of_range_rejected() {
        let g = default_grid();
        assert!(DensityMatrixX::coherent(g, 0.99 * g.x_max()).is_err());
    }

    #[test]
    fn renormalize_rescales_and_rejects_zero() {
        let g = default_grid();
        let v = DensityMatrixX::vacuum(g);
        let half = DensityMatrixX::from_values(g, v.values() * 0.5).unwrap();
        let back = half.renormalize().unwrap();
        assert_abs_diff_eq!(back.trace(), 1.0, epsilon = 1e-14);
        let m = back
            .values()
            .iter()
            .zip(v.values().iter())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(m < 1e-14);

        let zero = DensityMatrixX::from_values(g, Array2::zeros((257, 257))).unwrap();
        assert!(zero.renormalize().is_err());

        let again = back.renormalize().unwrap();
        let drift = again
            .values()
            .iter()
            .zip(back.values().iter())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(drift < 1e-15);
    }

    #[test]
    fn rescale_identity() {
        let g = default_grid();
        let v = DensityMatrixX::vacuum(g);
        let r = v.rescale_coords(1.0).unwrap();
        let diff = (r.values() - v.values()).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(diff < 1e-12);
    }

    #[test]
    fn rescale_stretches_gaussian() {
        let g = default_grid();
        let v = DensityMatrixX::vacuum(g);
        let s = (0.3f64).exp();
        let r = v.rescale_coords(s).unwrap();
        let m = r.moments().unwrap();
        assert_abs_diff_eq!(m.var_x, 0.5 * (0.6f64).exp(), epsilon = 1e-5);
        assert_abs_diff_eq!(m.trace, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn rescale_preserves_trace_of_smooth_state() {
        let g = default_grid();
        let rho = DensityMatrixX::coherent(g, 1.3).unwrap();
        let before = rho.trace();
        let after = rho.rescale_coords(1.21).unwrap().trace();
        assert_abs_diff_eq!(before, after, epsilon = 1e-6);
    }

    #[test]
    fn displace_shifts_mean_only() {
        let g = default_grid();
        let v = DensityMatrixX::vacuum(g);
        let d = v.displace(1.3).unwrap();
        let m = d.moments().unwrap();
        assert_abs_diff_eq!(m.mean_x, 1.3, epsilon = 1e-8);
        assert_abs_diff_eq!(m.var_x, 0.5, epsilon = 1e-6);

        let back = d.displace(-1.3).unwrap();
        let diff = (back.values() - v.values())
            .iter()
            .fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(diff < 1e-6);
    }

    #[test]
    fn displace_off_grid_rejected() {
        let g = default_grid();
        let c = DensityMatrixX::coherent(g, 5.0).unwrap();
        assert!(c.displace(4.9).is_err());
    }

    #[test]
    fn refinement_leaves_vacuum_moments_fixed() {
        let coarse = DensityMatrixX::vacuum(XGrid::new(10.0, 257).unwrap())
            .moments()
            .unwrap();
        let fine = DensityMatrixX::vacuum(XGrid::new(10.0, 513).unwrap())
            .moments()
            .unwrap();
        assert_abs_diff_eq!(coarse.mean_x, fine.mean_x, epsilon = 1e-6);
        assert_abs_diff_eq!(coarse.var_x, fine.var_x, epsilon = 1e-6);
        assert_abs_diff_eq!(coarse.var_p, fine.var_p, epsilon = 1e-6);
    }

    #[test]
    fn first_p_moment_vanishes() {
        let g = default_grid();
        for state in [
            DensityMatrixX::vacuum(g),
            DensityMatrixX::coherent(g, 2.4).unwrap(),
            DensityMatrixX::vacuum(g).rescale_coords(1.4).unwrap(),
        ] {
            assert!(state.first_p_moment().abs() < 1e-8);
        }
    }

    #[test]
    fn average_of_displaced_pair_is_mixture() {
        let g = default_grid();
        let a = DensityMatrixX::coherent(g, 2.0).unwrap();
        let b = DensityMatrixX::coherent(g, -2.0).unwrap();
        let avg = DensityMatrixX::average(&[a.clone(), b]).unwrap();
        let m = avg.moments().unwrap();
        assert_abs_diff_eq!(m.mean_x, 0.0, epsilon = 1e-10);
        // mixture variance = vacuum + displacement^2
        assert_abs_diff_eq!(m.var_x, 0.5 + 4.0, epsilon = 1e-6);
        assert!(m.purity <= a.purity() + 1e-12);
    }
}
