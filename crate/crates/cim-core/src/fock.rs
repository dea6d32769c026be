//! Truncated photon-number-basis oracle.
//!
//! Every channel of the simulator has an independent implementation here,
//! built from ladder-operator matrices rather than grid kernels. It is only
//! meant for desk-scale verification; nothing in the main pipeline calls it.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

use crate::error::{CimError, Result};
use crate::grid::{DensityMatrixX, XGrid};

/// Normalized harmonic-oscillator eigenfunctions psi_0..psi_{d-1} at `x`,
/// by the stable normalized upward recurrence.
pub fn hermite_functions(d: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(d);
    if d == 0 {
        return out;
    }
    let psi0 = PI.powf(-0.25) * (-0.5 * x * x).exp();
    out.push(psi0);
    if d == 1 {
        return out;
    }
    out.push((2.0f64).sqrt() * x * psi0);
    for n in 1..(d - 1) {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// Annihilation operator matrix in the number basis, a |n> = sqrt(n) |n-1>.
pub fn annihilation(d: usize) -> Array2<f64> {
    let mut a = Array2::zeros((d, d));
    for n in 1..d {
        a[(n - 1, n)] = (n as f64).sqrt();
    }
    a
}

fn matmul_r(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    a.dot(b)
}

/// Real matrix exponential by scaling-and-squaring with a Taylor series.
fn expm_real(m: &Array2<f64>) -> Array2<f64> {
    let d = m.nrows();
    let norm = m.iter().fold(0.0f64, |acc, v| acc + v.abs()) / d as f64 * d as f64;
    let norm = norm.max(m.iter().fold(0.0f64, |a, v| a.max(v.abs())) * d as f64);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);
    let mut result = Array2::eye(d);
    let mut term = Array2::eye(d);
    for k in 1..=24 {
        term = matmul_r(&term, &scaled) / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = matmul_r(&result, &result);
    }
    result
}

/// Density matrix in the truncated photon-number basis.
#[derive(Debug, Clone)]
pub struct DensityMatrixFock {
    values: Array2<C64>,
}

impl DensityMatrixFock {
    pub fn from_values(values: Array2<C64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(CimError::DimensionMismatch("non-square Fock matrix".into()));
        }
        Ok(Self { values })
    }

    pub fn vacuum(dim: usize) -> Self {
        Self::number_state(dim, 0).expect("vacuum always fits")
    }

    /// |n><n|.
    pub fn number_state(dim: usize, n: usize) -> Result<Self> {
        if n >= dim {
            return Err(CimError::InvalidArgument(format!(
                "photon number {n} outside truncation {dim}"
            )));
        }
        let mut values = Array2::zeros((dim, dim));
        values[(n, n)] = C64::new(1.0, 0.0);
        Ok(Self { values })
    }

    /// Coherent state with real in-phase displacement x0 (alpha = x0/sqrt(2)).
    pub fn coherent(dim: usize, x0: f64) -> Self {
        let amps = coherent_amplitudes(dim, x0 / 2f64.sqrt());
        Self::from_pure(&amps)
    }

    /// Even cat state (|alpha> + |-alpha>)/norm at in-phase displacement x0.
    pub fn cat(dim: usize, x0: f64) -> Self {
        let alpha = x0 / 2f64.sqrt();
        let plus = coherent_amplitudes(dim, alpha);
        let minus = coherent_amplitudes(dim, -alpha);
        let mut amps: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| p + m).collect();
        let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in &mut amps {
            *a /= norm;
        }
        Self::from_pure(&amps)
    }

    /// Classical mixture (|alpha><alpha| + |-alpha><-alpha|)/2.
    pub fn coherent_mixture(dim: usize, x0: f64) -> Self {
        let a = Self::coherent(dim, x0);
        let b = Self::coherent(dim, -x0);
        let values = (&a.values + &b.values) * C64::new(0.5, 0.0);
        Self { values }
    }

    /// Thermal state with mean photon number `nbar`, renormalized over the
    /// truncated space.
    pub fn thermal(dim: usize, nbar: f64) -> Self {
        let mut values = Array2::zeros((dim, dim));
        let mut total = 0.0;
        let ratio = nbar / (nbar + 1.0);
        let mut p = 1.0 / (nbar + 1.0);
        for n in 0..dim {
            values[(n, n)] = C64::new(p, 0.0);
            total += p;
            p *= ratio;
        }
        values.mapv_inplace(|v| v / total);
        Self { values }
    }

    fn from_pure(amps: &[f64]) -> Self {
        let d = amps.len();
        let mut values = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                values[(i, j)] = C64::new(amps[i] * amps[j], 0.0);
            }
        }
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<C64> {
        &self.values
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|n| self.values[(n, n)].re).sum()
    }

    pub fn purity(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                acc += (self.values[(i, j)] * self.values[(j, i)]).re;
            }
        }
        acc
    }

    /// Population at and above the given level.
    pub fn population_above(&self, level: usize) -> f64 {
        (level..self.dim()).map(|n| self.values[(n, n)].re).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                worst = worst.max((self.values[(i, j)] - self.values[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn renormalize(&self) -> Result<Self> {
        let t = self.trace();
        if t <= crate::grid::TRACE_UNDERFLOW {
            return Err(CimError::TraceUnderflow { trace: t });
        }
        Ok(Self { values: &self.values / C64::new(t, 0.0) })
    }

    /// Mean / variance of the in-phase and quadrature amplitudes, computed
    /// from ladder-operator matrices (an independent route from the grid's
    /// finite-difference stencils).
    pub fn quadrature_moments(&self) -> (f64, f64, f64) {
        let d = self.dim();
        let a = annihilation(d);
        let at = a.t().to_owned();
        // x = (a + a^dag)/sqrt(2), p^2 = -(a - a^dag)^2 / 2
        let x = (&a + &at) / 2f64.sqrt();
        let x2 = matmul_r(&x, &x);
        let diff = &a - &at;
        let p2 = matmul_r(&diff, &diff) * (-0.5);
        let mean_x = self.expect_real(&x);
        let mean_x2 = self.expect_real(&x2);
        let mean_p2 = self.expect_real(&p2);
        (mean_x, mean_x2 - mean_x * mean_x, mean_p2)
    }

    fn expect_real(&self, op: &Array2<f64>) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += (self.values[(j, i)] * op[(i, j)]).re;
            }
        }
        acc
    }
}

fn coherent_amplitudes(dim: usize, alpha: f64) -> Vec<f64> {
    let mut amps = Vec::with_capacity(dim);
    let mut c = (-0.5 * alpha * alpha).exp();
    amps.push(c);
    for n in 1..dim {
        c *= alpha / (n as f64).sqrt();
        amps.push(c);
    }
    amps
}

/// Highest levels that must stay empty for truncation safety.
const GUARD_LEVELS: usize = 4;
const GUARD_POPULATION: f64 = 1e-8;

fn check_truncation(rho: &DensityMatrixFock) -> Result<()> {
    let level = rho.dim().saturating_sub(GUARD_LEVELS);
    let population = rho.population_above(level);
    if population > GUARD_POPULATION {
        return Err(CimError::TruncationOverflow { level, population });
    }
    Ok(())
}

fn matmul_c(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    a.dot(b)
}

fn real_to_complex(m: &Array2<f64>) -> Array2<C64> {
    m.mapv(|v| C64::new(v, 0.0))
}

/// Squeezing plus two-photon loss over one round trip, integrated by
/// classical Runge-Kutta on the number-basis matrices:
/// d rho/d tau = (S/2) [a^dag^2 - a^2, rho]
///             + (L/2) (2 a^2 rho a^dag^2 - a^dag^2 a^2 rho - rho a^dag^2 a^2).
pub fn psa_step(
    rho: &DensityMatrixFock,
    squeeze_rate: f64,
    two_photon_loss: f64,
    n_substeps: usize,
) -> Result<DensityMatrixFock> {
    check_truncation(rho)?;
    let d = rho.dim();
    let a = annihilation(d);
    let a2 = real_to_complex(&matmul_r(&a, &a));
    let a2d = a2.t().to_owned();
    let k = &a2d - &a2; // a^dag^2 - a^2, real antisymmetric
    let a2d_a2 = matmul_c(&a2d, &a2);

    let rhs = |rho: &Array2<C64>| -> Array2<C64> {
        let mut out = (matmul_c(&k, rho) - matmul_c(rho, &k)) * C64::new(squeeze_rate / 2.0, 0.0);
        if two_photon_loss != 0.0 {
            let jump = matmul_c(&matmul_c(&a2, rho), &a2d);
            let anti = matmul_c(&a2d_a2, rho) + matmul_c(rho, &a2d_a2);
            out = out + (jump * C64::new(2.0, 0.0) - anti) * C64::new(two_photon_loss / 2.0, 0.0);
        }
        out
    };

    let steps = n_substeps.max(1);
    let dt = 1.0 / steps as f64;
    let mut state = rho.values.clone();
    for _ in 0..steps {
        let k1 = rhs(&state);
        let k2 = rhs(&(&state + &(&k1 * C64::new(dt / 2.0, 0.0))));
        let k3 = rhs(&(&state + &(&k2 * C64::new(dt / 2.0, 0.0))));
        let k4 = rhs(&(&state + &(&k3 * C64::new(dt, 0.0))));
        state = &state
            + &((k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4)
                * C64::new(dt / 6.0, 0.0));
    }
    let out = DensityMatrixFock { values: state };
    check_truncation(&out)?;
    Ok(out)
}

/// Unitary displacement along the in-phase axis: rho -> D rho D^T with
/// D = exp(alpha (a^dag - a)), alpha = d / sqrt(2).
pub fn displace(rho: &DensityMatrixFock, d: f64) -> Result<DensityMatrixFock> {
    check_truncation(rho)?;
    let dim = rho.dim();
    let a = annihilation(dim);
    let gen = (&a.t().to_owned() - &a) * (d / 2f64.sqrt());
    let dmat = real_to_complex(&expm_real(&gen));
    let dt = dmat.t().mapv(|v| v.conj());
    let out = DensityMatrixFock { values: matmul_c(&matmul_c(&dmat, &rho.values), &dt) };
    check_truncation(&out)?;
    Ok(out)
}

/// Beam-splitter channel in the number basis: the signal mixes with a vacuum
/// ancilla, retained amplitude sqrt(T). Kraus operators are indexed by the
/// ancilla photon count.
pub struct BeamSplitter {
    kraus: Vec<Array2<f64>>,
    dim: usize,
}

impl BeamSplitter {
    /// Build the photon-number Kraus family for retained power fraction `t`.
    pub fn new(dim: usize, t: f64) -> Result<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(CimError::InvalidArgument(format!(
                "retained fraction must be in (0, 1], got {t}"
            )));
        }
        let phi = t.sqrt().clamp(-1.0, 1.0).acos(); // cos(phi) = sqrt(T)
        let mut kraus = vec![Array2::zeros((dim, dim)); dim];
        for total in 0..dim {
            // Photon-number block spanned by |k>_signal |total-k>_ancilla.
            let b = total + 1;
            let mut gen = Array2::zeros((b, b));
            for k in 0..b {
                let kf = k as f64;
                let aux = (total - k) as f64;
                // a b^dag : |k, total-k> -> |k-1, total-k+1>
                if k >= 1 {
                    gen[(k - 1, k)] += kf.sqrt() * (aux + 1.0).sqrt();
                }
                // -a^dag b : |k, total-k> -> |k+1, total-k-1>
                if k + 1 < b {
                    gen[(k + 1, k)] -= (kf + 1.0).sqrt() * aux.sqrt();
                }
            }
            let u = expm_real(&(gen * phi));
            // Input column |total>_signal |0>_ancilla is k = total.
            for k in 0..b {
                let j = total - k; // ancilla photons measured
                kraus[j][(k, total)] = u[(k, total)];
            }
        }
        Ok(Self { kraus, dim })
    }

    /// Non-selective application (ancilla traced out): the background loss.
    pub fn apply_lossy(&self, rho: &DensityMatrixFock) -> Result<DensityMatrixFock> {
        self.check(rho)?;
        let mut out = Array2::<C64>::zeros((self.dim, self.dim));
        for a in &self.kraus {
            let ac = real_to_complex(a);
            out = out + matmul_c(&matmul_c(&ac, &rho.values), &ac.t().to_owned());
        }
        Ok(DensityMatrixFock { values: out })
    }

    /// Kraus operator for a homodyne outcome on the extracted port.
    pub fn measurement_operator(&self, outcome: f64) -> Array2<f64> {
        let psi = hermite_functions(self.dim, outcome);
        let mut m = Array2::zeros((self.dim, self.dim));
        for (j, a) in self.kraus.iter().enumerate() {
            if psi[j] != 0.0 {
                m = m + a * psi[j];
            }
        }
        m
    }

    /// Selective application: condition on the measured value, returning the
    /// renormalized state and the outcome probability density.
    pub fn apply_selective(
        &self,
        rho: &DensityMatrixFock,
        outcome: f64,
    ) -> Result<(DensityMatrixFock, f64)> {
        self.check(rho)?;
        let m = real_to_complex(&self.measurement_operator(outcome));
        let raw = matmul_c(&matmul_c(&m, &rho.values), &m.t().mapv(|v| v.conj()));
        let density: f64 = (0..self.dim).map(|n| raw[(n, n)].re).sum();
        if density <= crate::grid::TRACE_UNDERFLOW {
            return Err(CimError::TraceUnderflow { trace: density });
        }
        Ok((
            DensityMatrixFock { values: raw / C64::new(density, 0.0) },
            density,
        ))
    }

    fn check(&self, rho: &DensityMatrixFock) -> Result<()> {
        if rho.dim() != self.dim {
            return Err(CimError::DimensionMismatch(format!(
                "state dim {} vs channel dim {}",
                rho.dim(),
                self.dim
            )));
        }
        check_truncation(rho)
    }
}

/// Basis change: <x| rho |x'> = sum_mn psi_m(x) rho_mn psi_n(x').
pub fn grid_from_fock(rho: &DensityMatrixFock, grid: XGrid) -> Result<DensityMatrixX> {
    let d = rho.dim();
    let n = grid.n_points();
    // psi[m][i] = psi_m(x_i)
    let mut psi = Array2::zeros((d, n));
    for i in 0..n {
        for (m, v) in hermite_functions(d, grid.x(i)).into_iter().enumerate() {
            psi[(m, i)] = v;
        }
    }
    let re = rho.values.mapv(|v| v.re);
    let tmp = matmul_r(&re, &psi); // d x n
    let out = matmul_r(&psi.t().to_owned(), &tmp); // n x n
    let converted = DensityMatrixX::from_values(grid, out)?;
    let mismatch = (converted.trace() - rho.trace()).abs();
    if mismatch > 1e-6 {
        return Err(CimError::TruncationOverflow {
            level: d,
            population: mismatch,
        });
    }
    Ok(converted)
}

/// Projection of a grid state onto the truncated number basis by quadrature.
pub fn fock_from_grid(rho: &DensityMatrixX, dim: usize) -> Result<DensityMatrixFock> {
    let g = *rho.grid();
    let n = g.n_points();
    let mut psi_w = Array2::zeros((dim, n)); // psi_m(x_i) * w_i * dx
    for i in 0..n {
        let w = g.quad_weight(i) * g.dx();
        for (m, v) in hermite_functions(dim, g.x(i)).into_iter().enumerate() {
            psi_w[(m, i)] = v * w;
        }
    }
    let tmp = matmul_r(rho.values(), &psi_w.t().to_owned()); // n x d
    let re = matmul_r(&psi_w, &tmp); // d x d
    let out = DensityMatrixFock { values: real_to_complex(&re) };
    let mismatch = (out.trace() - rho.trace()).abs();
    if mismatch > 1e-6 {
        return Err(CimError::TruncationOverflow {
            level: dim,
            population: mismatch,
        });
    }
    Ok(out)
}

/// Trace distance between number-basis states.
pub fn trace_distance_fock(a: &DensityMatrixFock, b: &DensityMatrixFock) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(CimError::DimensionMismatch("Fock dims differ".into()));
    }
    let d = a.dim();
    let diff = &a.values - &b.values;
    let m = nalgebra::DMatrix::from_fn(d, d, |i, j| diff[(i, j)]);
    let eig = m.symmetric_eigen();
    Ok(0.5 * eig.eigenvalues.iter().map(|v| v.abs()).sum::<f64>())
}

/// Trace distance between grid states, from the eigenvalues of the
/// quadrature-weighted kernel difference.
pub fn trace_distance_grid(a: &DensityMatrixX, b: &DensityMatrixX) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(CimError::DimensionMismatch("grids differ".into()));
    }
    let g = *a.grid();
    let n = g.n_points();
    let sw: Vec<f64> = (0..n).map(|i| (g.quad_weight(i) * g.dx()).sqrt()).collect();
    let av = a.values();
    let bv = b.values();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| sw[i] * (av[(i, j)] - bv[(i, j)]) * sw[j]);
    let eig = m.symmetric_eigen();
    Ok(0.5 * eig.eigenvalues.iter().map(|v| v.abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn number_states_are_normalized_projectors() {
        let v = DensityMatrixFock::vacuum(40);
        assert_abs_diff_eq!(v.trace(), 1.0, epsilon = 1e-15);
        assert!(DensityMatrixFock::number_state(10, 10).is_err());
    }

    #[test]
    fn one_photon_variance() {
        let one = DensityMatrixFock::number_state(40, 1).unwrap();
        let (mean, var_x, var_p) = one.quadrature_moments();
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var_x, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(var_p, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn hermite_orthonormal() {
        let g = XGrid::new(10.0, 257).unwrap();
        let d = 30;
        let mut gram = Array2::<f64>::zeros((d, d));
        for i in 0..g.n_points() {
            let psi = hermite_functions(d, g.x(i));
            let w = g.quad_weight(i) * g.dx();
            for m in 0..d {
                for n in 0..d {
                    gram[(m, n)] += w * psi[m] * psi[n];
                }
            }
        }
        for m in 0..d {
            for n in 0..d {
                let expect = if m == n { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[(m, n)], expect, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn psa_identity_when_rates_vanish() {
        let rho = DensityMatrixFock::coherent(40, 1.0);
        let out = psa_step(&rho, 0.0, 0.0, 10).unwrap();
        let d = trace_distance_fock(&rho, &out).unwrap();
        assert!(d < 1e-12);
    }

    #[test]
    fn psa_squeezes_vacuum() {
        let rho = DensityMatrixFock::vacuum(40);
        let out = psa_step(&rho, 0.3, 0.0, 60).unwrap();
        let (_, var_x, var_p) = out.quadrature_moments();
        assert_abs_diff_eq!(var_x, 0.5 * (0.6f64).exp(), epsilon = 1e-4);
        assert_abs_diff_eq!(var_p, 0.5 * (-0.6f64).exp(), epsilon = 1e-4);
    }

    #[test]
    fn two_photon_loss_fixes_vacuum_and_drains_pairs() {
        let vac = DensityMatrixFock::vacuum(30);
        let out = psa_step(&vac, 0.0, 0.01, 10).unwrap();
        assert!(trace_distance_fock(&vac, &out).unwrap() < 1e-12);

        let two = DensityMatrixFock::number_state(30, 2).unwrap();
        let mut state = two.clone();
        for _ in 0..20 {
            state = psa_step(&state, 0.0, 0.1, 20).unwrap();
        }
        assert_abs_diff_eq!(state.trace(), 1.0, epsilon = 1e-9);
        assert!(state.values()[(0, 0)].re > 0.9);
        assert!(state.values()[(2, 2)].re < 0.1);
    }

    #[test]
    fn beam_splitter_identity_at_full_transmission() {
        let rho = DensityMatrixFock::coherent(40, 1.2);
        let bs = BeamSplitter::new(40, 1.0).unwrap();
        let out = bs.apply_lossy(&rho).unwrap();
        assert!(trace_distance_fock(&rho, &out).unwrap() < 1e-10);
    }

    #[test]
    fn lossy_coherent_scales_amplitude() {
        let rho = DensityMatrixFock::coherent(40, 1.0);
        let bs = BeamSplitter::new(40, 0.81).unwrap();
        let out = bs.apply_lossy(&rho).unwrap();
        let (mean, var_x, _) = out.quadrature_moments();
        assert_abs_diff_eq!(mean, 0.9, epsilon = 1e-9);
        assert_abs_diff_eq!(var_x, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(out.trace(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn vacuum_outcome_density_is_vacuum_noise() {
        // p(x_m) for a vacuum signal must be the centered Gaussian with
        // variance 0.5 at any splitting ratio.
        let rho = DensityMatrixFock::vacuum(40);
        let bs = BeamSplitter::new(40, 0.7).unwrap();
        for &xm in &[-1.5, -0.3, 0.0, 0.8, 2.0] {
            let (_, p) = bs.apply_selective(&rho, xm).unwrap();
            let expect = (-xm * xm).exp() / PI.sqrt();
            assert_abs_diff_eq!(p, expect, epsilon = 1e-4);
        }
    }

    #[test]
    fn conversions_round_trip_vacuum() {
        let g = XGrid::new(10.0, 257).unwrap();
        let vac_f = DensityMatrixFock::vacuum(40);
        let on_grid = grid_from_fock(&vac_f, g).unwrap();
        let back = fock_from_grid(&on_grid, 40).unwrap();
        assert!(trace_distance_fock(&vac_f, &back).unwrap() < 1e-8);

        let vac_g = DensityMatrixX::vacuum(g);
        assert!(trace_distance_grid(&vac_g, &on_grid).unwrap() < 1e-8);
    }

    #[test]
    fn cat_state_has_coherence_lobes_and_mixture_does_not() {
        let g = XGrid::new(10.0, 257).unwrap();
        let cat = grid_from_fock(&DensityMatrixFock::cat(60, 2.0), g).unwrap();
        let mix = grid_from_fock(&DensityMatrixFock::coherent_mixture(60, 2.0), g).unwrap();
        // Off-diagonal lobe on the x + x' = 0 line: point (x, -x) at x = 2.
        let i_plus = (0..g.n_points())
            .min_by(|&a, &b| {
                (g.x(a) - 2.0).abs().partial_cmp(&(g.x(b) - 2.0).abs()).unwrap()
            })
            .unwrap();
        let i_minus = g.n_points() - 1 - i_plus;
        let lobe_cat = cat.values()[(i_plus, i_minus)].abs();
        let lobe_mix = mix.values()[(i_plus, i_minus)].abs();
        let peak = cat.values()[(i_plus, i_plus)];
        assert!(lobe_cat > 0.5 * peak, "cat lobe {lobe_cat} vs peak {peak}");
        assert!(lobe_mix < 1e-3 * peak, "mixture lobe {lobe_mix}");
    }

    #[test]
    fn one_photon_kernel_is_phase_reversed() {
        // The |1> kernel is negative at the origin and positive on the
        // diagonal shoulders.
        let g = XGrid::new(10.0, 257).unwrap();
        let one = grid_from_fock(&DensityMatrixFock::number_state(40, 1).unwrap(), g).unwrap();
        let mid = g.n_points() / 2;
        assert_abs_diff_eq!(one.values()[(mid, mid)], 0.0, epsilon = 1e-12);
        let off = mid + (1.0 / g.dx()) as usize;
        assert!(one.values()[(off, off)] > 0.0);
        assert!(one.values()[(off, g.n_points() - 1 - off)] < 0.0);
    }

    #[test]
    fn trace_distance_properties() {
        let a = DensityMatrixFock::vacuum(30);
        let b = DensityMatrixFock::number_state(30, 1).unwrap();
        assert_abs_diff_eq!(trace_distance_fock(&a, &a).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(trace_distance_fock(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            trace_distance_fock(&a, &b).unwrap(),
            trace_distance_fock(&b, &a).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn truncation_guard_trips() {
        let top = DensityMatrixFock::number_state(20, 19).unwrap();
        assert!(psa_step(&top, 0.1, 0.0, 5).is_err());
    }
}
