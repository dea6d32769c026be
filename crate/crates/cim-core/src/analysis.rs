//! Derived quantities: success probability, ensemble statistics, Wigner
//! functions, and contour exports in the rotated (x+x', x-x') coordinates.

use ndarray::Array2;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::engine::TrajectoryRecord;
use crate::error::{CimError, Result};
use crate::grid::DensityMatrixX;

/// Probability that the signed amplitudes of a pulse pair realize the
/// anti-ferromagnetic ground-state pattern (opposite signs), averaged over
/// the ensemble of conditional pairs.
///
/// Conditional states are products, so the pair probability is
/// q1 (1 - q2) + (1 - q1) q2 with q the positive-side mass of each pulse.
pub fn success_probability(pairs: &[(&DensityMatrixX, &DensityMatrixX)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(CimError::InvalidArgument("empty ensemble".into()));
    }
    let mut total = 0.0;
    for (a, b) in pairs {
        let qa = (a.positive_mass() / a.trace()).clamp(0.0, 1.0);
        let qb = (b.positive_mass() / b.trace()).clamp(0.0, 1.0);
        total += qa * (1.0 - qb) + (1.0 - qa) * qb;
    }
    Ok(total / pairs.len() as f64)
}

/// Success probability from already-computed positive-side masses.
pub fn success_probability_from_masses(q1: f64, q2: f64) -> f64 {
    q1 * (1.0 - q2) + (1.0 - q1) * q2
}

/// Arithmetic mean of the ensemble (the unconditional state).
pub fn ensemble_average_density(states: &[DensityMatrixX]) -> Result<DensityMatrixX> {
    DensityMatrixX::average(states)
}

/// Wigner function W(x, p) = (1/pi) Int rho(x+y, x-y) e^{2ipy} dy, evaluated
/// on the state grid for x and on the supplied p values. Real kernels make
/// the transform a cosine sum.
pub fn wigner(rho: &DensityMatrixX, p_values: &[f64]) -> Array2<f64> {
    let g = *rho.grid();
    let n = g.n_points();
    let v = rho.values();
    let dy = g.dx();
    let mut out = Array2::zeros((n, p_values.len()));
    for i in 0..n {
        let reach = i.min(n - 1 - i);
        for (pj, &p) in p_values.iter().enumerate() {
            // y = 0 term plus symmetric pairs along the anti-diagonal
            let mut acc = v[(i, i)];
            for k in 1..=reach {
                acc += 2.0 * v[(i + k, i - k)] * (2.0 * p * k as f64 * dy).cos();
            }
            out[(i, pj)] = acc * dy / PI;
        }
    }
    out
}

/// Default p-axis for Wigner evaluation: the x-grid spacing and extent.
pub fn default_p_grid(rho: &DensityMatrixX) -> Vec<f64> {
    rho.grid().xs()
}

/// Most negative Wigner value and the global maximum.
pub fn wigner_extrema(w: &Array2<f64>) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in w.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    (min, max)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write the kernel as (x+x', x-x', value) rows, the rotated coordinates
/// used for the contour maps.
pub fn write_contour<W: Write>(rho: &DensityMatrixX, mut out: W) -> std::io::Result<()> {
    let g = *rho.grid();
    let n = g.n_points();
    writeln!(out, "x_plus,x_minus,value")?;
    for i in 0..n {
        for j in 0..n {
            let z = g.x(i) + g.x(j);
            let w = g.x(i) - g.x(j);
            writeln!(out, "{},{},{}", fmt(z), fmt(w), fmt(rho.values()[(i, j)]))?;
        }
    }
    Ok(())
}

/// Contour export to a file, with path context on failure.
pub fn export_contour(rho: &DensityMatrixX, path: &Path) -> Result<()> {
    let io = |e: std::io::Error| {
        CimError::InvalidArgument(format!("writing {}: {e}", path.display()))
    };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut buf = std::io::BufWriter::new(file);
    write_contour(rho, &mut buf).map_err(io)?;
    buf.flush().map_err(io)
}

/// Parse a contour file back into kernel values (for round-trip checks).
pub fn read_contour(path: &Path, rho_like: &DensityMatrixX) -> Result<Array2<f64>> {
    let g = *rho_like.grid();
    let n = g.n_points();
    let text = std::fs::read_to_string(path)
        .map_err(|e| CimError::InvalidArgument(format!("reading {}: {e}", path.display())))?;
    let mut values = Array2::zeros((n, n));
    for (row, line) in text.lines().skip(1).enumerate() {
        let mut parts = line.split(',');
        let z: f64 = parts.next().unwrap_or("").parse().map_err(|_| bad_line(row))?;
        let w: f64 = parts.next().unwrap_or("").parse().map_err(|_| bad_line(row))?;
        let v: f64 = parts.next().unwrap_or("").parse().map_err(|_| bad_line(row))?;
        let x = 0.5 * (z + w);
        let xp = 0.5 * (z - w);
        let i = ((x - g.x_min()) / g.dx()).round() as usize;
        let j = ((xp - g.x_min()) / g.dx()).round() as usize;
        values[(i.min(n - 1), j.min(n - 1))] = v;
    }
    Ok(values)
}

fn bad_line(row: usize) -> CimError {
    CimError::InvalidArgument(format!("contour file: malformed line {}", row + 2))
}

/// Wigner export as (x, p, value) rows.
pub fn export_wigner(rho: &DensityMatrixX, path: &Path) -> Result<()> {
    let io = |e: std::io::Error| {
        CimError::InvalidArgument(format!("writing {}: {e}", path.display()))
    };
    let g = *rho.grid();
    let p_values = default_p_grid(rho);
    let w = wigner(rho, &p_values);
    let file = std::fs::File::create(path).map_err(io)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "x,p,value").map_err(io)?;
    for i in 0..g.n_points() {
        for (pj, &p) in p_values.iter().enumerate() {
            writeln!(out, "{},{},{}", fmt(g.x(i)), fmt(p), fmt(w[(i, pj)])).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Ensemble statistics per round, aggregated from trajectory records.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    /// Success probability at the end of each round; entry 0 is the initial
    /// vacuum value 0.5 by construction when no rounds have run.
    pub success: Vec<f64>,
    /// Ensemble mean of mean_x per pulse per round (before the amplifier).
    pub mean_x: Vec<Vec<f64>>,
    /// Ensemble median of var_x per pulse per round (before the amplifier).
    pub median_var_x: Vec<Vec<f64>>,
    pub n_trajectories: usize,
    pub n_failures: usize,
}

/// Aggregate an ensemble of two-pulse trajectory records.
pub fn ensemble_stats(records: &[TrajectoryRecord], n_failures: usize) -> Result<EnsembleStats> {
    let first = records
        .first()
        .ok_or_else(|| CimError::InvalidArgument("empty ensemble".into()))?;
    let n_rounds = first.rounds.len();
    let n_pulses = first.final_states.len();
    let mut success = Vec::with_capacity(n_rounds);
    let mut mean_x = Vec::with_capacity(n_rounds);
    let mut median_var_x = Vec::with_capacity(n_rounds);
    for round in 0..n_rounds {
        let mut p_acc = 0.0;
        let mut means = vec![0.0; n_pulses];
        let mut vars: Vec<Vec<f64>> = vec![Vec::with_capacity(records.len()); n_pulses];
        for rec in records {
            let r = &rec.rounds[round];
            if n_pulses == 2 {
                p_acc += success_probability_from_masses(r.prob_positive[0], r.prob_positive[1]);
            }
            for p in 0..n_pulses {
                means[p] += r.before_psa[p].mean_x;
                vars[p].push(r.before_psa[p].var_x);
            }
        }
        let count = records.len() as f64;
        success.push(p_acc / count);
        mean_x.push(means.into_iter().map(|m| m / count).collect());
        median_var_x.push(vars.into_iter().map(median).collect());
    }
    Ok(EnsembleStats {
        success,
        mean_x,
        median_var_x,
        n_trajectories: records.len(),
        n_failures,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
