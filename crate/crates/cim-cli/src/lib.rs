//! Command-line front end: configuration-driven ensemble runs, figure-data
//! presets, the self-check suite, and reference-state exports.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cim_core::analysis::{
    ensemble_stats, export_contour, export_wigner, wigner, wigner_extrema, EnsembleStats,
};
use cim_core::channels::{kraus_completeness_defect, psa_step, PsaParams};
use cim_core::config::{LossModeConfig, PumpConfig, RunConfig};
use cim_core::engine::{run_ensemble_with_progress, run_trajectory_with_snapshots, TrajectoryRecord};
use cim_core::fock::{grid_from_fock, DensityMatrixFock};
use cim_core::{DensityMatrixX, XGrid};

#[derive(Parser)]
#[command(
    name = "cim",
    about = "Measurement-feedback DOPO Ising machine simulator",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured trajectory ensemble and export statistics.
    Run(RunArgs),
    /// Single-trajectory time evolution with contour snapshots.
    Figure3(FigureArgs),
    /// Snapshot gallery across measurement strengths, plus a Wigner map.
    Figure4(FigureArgs),
    /// Uncertainty loops (var_x vs var_p) across measurement strengths.
    Figure5(FigureArgs),
    /// Success-probability curves across pump schedules and background loss.
    Figure6(FigureArgs),
    /// Run the built-in invariant and oracle self-checks.
    Validate,
    /// Export a reference state as contour and Wigner data files.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the number of trajectories.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the background-loss mode.
    #[arg(long, value_enum)]
    loss_mode: Option<LossModeArg>,
    /// Apply a figure preset instead of a config file.
    #[arg(long, value_parser = clap::value_parser!(u8).range(3..=6))]
    figure: Option<u8>,
}

#[derive(Args)]
struct FigureArgs {
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    loss_mode: Option<LossModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossModeArg {
    Selective,
    Averaged,
}

#[derive(Args)]
struct ExportArgs {
    /// Which reference state to export.
    #[arg(long, value_enum, default_value = "vacuum")]
    state: RefState,
    /// Displacement for cat and mixture states.
    #[arg(long, default_value_t = 2.0)]
    x0: f64,
    /// Mean photon number for the thermal state.
    #[arg(long, default_value_t = 2.0)]
    nbar: f64,
    /// Squeezing rate for the anti-squeezed state.
    #[arg(long, default_value_t = 0.5)]
    squeeze: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefState {
    Vacuum,
    OnePhoton,
    Squeezed,
    Thermal,
    Cat,
    Mixture,
}

/// Entry point used by both the binary and the test suite.
pub fn run_cli<I, T>(args: I) -> anyhow::Result<i32>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage text; help and version are successes
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().ok();
            return Ok(code);
        }
    };
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Figure3(args) => cmd_figure3(args),
        Command::Figure4(args) => cmd_figure4(args),
        Command::Figure5(args) => cmd_figure5(args),
        Command::Figure6(args) => cmd_figure6(args),
        Command::Validate => cmd_validate(),
        Command::Export(args) => cmd_export(args),
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        None => bail!("a configuration file is required; pass --config <path>"),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(RunConfig::from_json(&text)?)
        }
    }
}

fn apply_overrides(
    cfg: &mut RunConfig,
    trajectories: Option<usize>,
    seed: Option<u64>,
    loss_mode: Option<LossModeArg>,
) {
    if let Some(n) = trajectories {
        cfg.trajectories = n;
    }
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if let Some(mode) = loss_mode {
        cfg.loss_mode = match mode {
            LossModeArg::Selective => LossModeConfig::Selective,
            LossModeArg::Averaged => LossModeConfig::Averaged,
        };
    }
}

/// Figure presets expressed as run configurations. The ensemble preset uses a
/// coarser validated grid, and samples the background coupler as in the
/// reference procedure, which is also the fast path when that loss is
/// nonzero.
pub fn figure_preset(which: u8) -> RunConfig {
    match which {
        5 => RunConfig {
            x_max: 11.0,
            n_points: 141,
            rounds: 150,
            trajectories: 1,
            ..RunConfig::default()
        },
        6 => RunConfig {
            x_max: 11.0,
            n_points: 141,
            rounds: 150,
            trajectories: 300,
            loss_mode: LossModeConfig::Selective,
            pump: PumpConfig::LinearRamp { g0: 0.995, g_max: 1.05, ramp_rounds: 100 },
            ..RunConfig::default()
        },
        _ => RunConfig { n_points: 257, rounds: 150, trajectories: 1, ..RunConfig::default() },
    }
}

struct RunOutput {
    stats: EnsembleStats,
    records: Vec<TrajectoryRecord>,
}

fn execute_ensemble(cfg: &RunConfig) -> anyhow::Result<RunOutput> {
    let tc = cfg.trajectory_config()?;
    eprintln!(
        "run start trajectories={} rounds={} grid={}",
        cfg.trajectories, cfg.rounds, cfg.n_points
    );
    let every = (cfg.trajectories / 10).max(1);
    let result = run_ensemble_with_progress(&tc, cfg.trajectories, cfg.base_seed, |done| {
        if done % every == 0 || done == cfg.trajectories {
            eprintln!("progress trajectories={done}/{}", cfg.trajectories);
        }
    });
    for e in &result.failures {
        eprintln!("trajectory failure: {e}");
    }
    let minimum = (cfg.trajectories as f64 * 0.95).ceil() as usize;
    if result.completed() < minimum {
        bail!(
            "only {} of {} trajectories completed (below the 95% threshold)",
            result.completed(),
            cfg.trajectories
        );
    }
    let stats = ensemble_stats(&result.records, result.failures.len())?;
    Ok(RunOutput { stats, records: result.records })
}

fn write_manifest(
    dir: &Path,
    cfg: &RunConfig,
    stats: Option<&EnsembleStats>,
) -> anyhow::Result<()> {
    let manifest = serde_json::json!({
        "config": cfg,
        "config_hash": format!("{:016x}", cfg.content_hash()),
        "base_seed": cfg.base_seed,
        "code_version": env!("CARGO_PKG_VERSION"),
        "trajectories_completed": stats.map(|s| s.n_trajectories),
        "trajectory_failures": stats.map(|s| s.n_failures),
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn write_stats_csv(dir: &Path, stats: &EnsembleStats) -> anyhow::Result<PathBuf> {
    let n_pulses = stats.mean_x.first().map(|v| v.len()).unwrap_or(0);
    let mut text = String::from("round,p_success");
    for p in 0..n_pulses {
        write!(text, ",mean_x_pulse{p},median_var_x_pulse{p}").unwrap();
    }
    text.push('\n');
    for round in 0..stats.success.len() {
        write!(text, "{},{}", round + 1, fmt_f(stats.success[round])).unwrap();
        for p in 0..n_pulses {
            write!(
                text,
                ",{},{}",
                fmt_f(stats.mean_x[round][p]),
                fmt_f(stats.median_var_x[round][p])
            )
            .unwrap();
        }
        text.push('\n');
    }
    let path = dir.join("stats.csv");
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Per-round moment series of one trajectory, in front of and behind the
/// amplifier.
fn write_trajectory_csv(dir: &Path, name: &str, rec: &TrajectoryRecord) -> anyhow::Result<()> {
    let mut text = String::from("round,pulse,stage,mean_x,var_x,var_p,trace,purity,x_m\n");
    for (round, r) in rec.rounds.iter().enumerate() {
        for p in 0..r.measured.len() {
            for (stage, m) in [("front", &r.before_psa[p]), ("behind", &r.after_psa[p])] {
                writeln!(
                    text,
                    "{},{},{},{},{},{},{},{},{}",
                    round,
                    p,
                    stage,
                    fmt_f(m.mean_x),
                    fmt_f(m.var_x),
                    fmt_f(m.var_p),
                    fmt_f(m.trace),
                    fmt_f(m.purity),
                    fmt_f(r.measured[p]),
                )
                .unwrap();
            }
        }
    }
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> anyhow::Result<i32> {
    let mut cfg = match (args.figure, &args.config) {
        (Some(f), None) => figure_preset(f),
        (_, path) => load_config(path.as_deref())?,
    };
    apply_overrides(&mut cfg, args.trajectories, args.seed, args.loss_mode);
    std::fs::create_dir_all(&args.out)?;
    let out = execute_ensemble(&cfg)?;
    let path = write_stats_csv(&args.out, &out.stats)?;
    write_manifest(&args.out, &cfg, Some(&out.stats))?;
    if let Some(rec) = out.records.first() {
        write_trajectory_csv(&args.out, "trajectory0.csv", rec)?;
    }
    eprintln!(
        "run done completed={} failures={} stats={}",
        out.stats.n_trajectories,
        out.stats.n_failures,
        path.display()
    );
    println!(
        "P(1) = {:.4}, P(final) = {:.4}",
        out.stats.success.first().copied().unwrap_or(f64::NAN),
        out.stats.success.last().copied().unwrap_or(f64::NAN)
    );
    Ok(0)
}

const SNAPSHOT_ROUNDS: [usize; 4] = [0, 30, 60, 150];

fn snapshot_rounds(total: usize) -> Vec<usize> {
    SNAPSHOT_ROUNDS.iter().map(|&r| r.min(total)).collect()
}

fn cmd_figure3(args: FigureArgs) -> anyhow::Result<i32> {
    let mut cfg = figure_preset(3);
    apply_overrides(&mut cfg, args.trajectories, args.seed, args.loss_mode);
    std::fs::create_dir_all(&args.out)?;
    let tc = cfg.trajectory_config()?;
    let snaps = snapshot_rounds(cfg.rounds);
    let (record, snapshots) = run_trajectory_with_snapshots(&tc, cfg.base_seed, &snaps)?;
    write_trajectory_csv(&args.out, "figure3_moments.csv", &record)?;
    for snap in &snapshots {
        for (p, state) in snap.before_psa.iter().enumerate() {
            let path = args.out.join(format!("figure3_contour_n{}_pulse{}.csv", snap.round, p));
            export_contour(state, &path)?;
        }
        eprintln!("figure3 snapshot round={} written", snap.round);
    }
    write_manifest(&args.out, &cfg, None)?;
    println!("figure3 data written to {}", args.out.display());
    Ok(0)
}

fn cmd_figure4(args: FigureArgs) -> anyhow::Result<i32> {
    let base = figure_preset(4);
    std::fs::create_dir_all(&args.out)?;
    for &t in &[0.999, 0.99, 0.9, 0.5] {
        let mut cfg = RunConfig { meas_transmittance: t, ..base.clone() };
        apply_overrides(&mut cfg, args.trajectories, args.seed, args.loss_mode);
        let tc = cfg.trajectory_config()?;
        let snaps = snapshot_rounds(cfg.rounds);
        let (_, snapshots) = run_trajectory_with_snapshots(&tc, cfg.base_seed, &snaps)?;
        let tag = format!("T{}", t.to_string().replace('.', "p"));
        for snap in &snapshots {
            for (p, before) in snap.before_psa.iter().enumerate() {
                export_contour(
                    before,
                    &args.out.join(format!("figure4_{tag}_n{}_pulse{p}_front.csv", snap.round)),
                )?;
                if let Some(after) = snap.after_psa.get(p) {
                    export_contour(
                        after,
                        &args.out.join(format!("figure4_{tag}_n{}_pulse{p}_behind.csv", snap.round)),
                    )?;
                }
            }
            eprintln!("figure4 T={t} snapshot round={} written", snap.round);
        }
        // Wigner map of the weakest-measurement state mid-evolution
        if t == 0.999 {
            if let Some(snap) = snapshots.iter().find(|s| s.round == 60) {
                export_wigner(&snap.before_psa[0], &args.out.join("figure4_wigner_n60.csv"))?;
            }
        }
    }
    write_manifest(&args.out, &base, None)?;
    println!("figure4 data written to {}", args.out.display());
    Ok(0)
}

fn cmd_figure5(args: FigureArgs) -> anyhow::Result<i32> {
    let base = figure_preset(5);
    std::fs::create_dir_all(&args.out)?;
    let mut text = String::from("T,round,stage,var_x,var_p\n");
    for &t in &[0.5, 0.9, 0.99, 0.999] {
        let mut cfg = RunConfig { meas_transmittance: t, ..base.clone() };
        apply_overrides(&mut cfg, args.trajectories, args.seed, args.loss_mode);
        let tc = cfg.trajectory_config()?;
        let (record, _) = run_trajectory_with_snapshots(&tc, cfg.base_seed, &[])?;
        for (round, r) in record.rounds.iter().enumerate() {
            for (stage, m) in [("front", &r.before_psa[0]), ("behind", &r.after_psa[0])] {
                writeln!(
                    text,
                    "{},{},{},{},{}",
                    fmt_f(t),
                    round,
                    stage,
                    fmt_f(m.var_x),
                    fmt_f(m.var_p)
                )
                .unwrap();
            }
        }
        eprintln!("figure5 T={t} trajectory done");
    }
    std::fs::write(args.out.join("figure5_uncertainty.csv"), text)?;
    write_manifest(&args.out, &base, None)?;
    println!("figure5 data written to {}", args.out.display());
    Ok(0)
}

fn cmd_figure6(args: FigureArgs) -> anyhow::Result<i32> {
    let base = figure_preset(6);
    std::fs::create_dir_all(&args.out)?;
    let schedule_for = |ramp_rounds: Option<usize>, tp: f64| {
        // the ramp starts at the pump-off gain sqrt(T T'); anything lower
        // would describe a phase-flipped pump
        let g0 = (0.99f64 * tp).sqrt() + 1e-9;
        match ramp_rounds {
            Some(r) => PumpConfig::LinearRamp { g0, g_max: 1.05, ramp_rounds: r },
            None => PumpConfig::Constant { g0: 1.05 },
        }
    };
    let schedules: [(&str, Option<usize>); 3] =
        [("slow", Some(100)), ("rapid", Some(20)), ("constant", None)];
    let mut text = String::from("schedule,background_transmittance,round,p_success\n");
    for (name, ramp) in &schedules {
        for &tp in &[1.0, 0.9, 0.7, 0.5] {
            let mut cfg = RunConfig {
                pump: schedule_for(*ramp, tp),
                background_transmittance: tp,
                ..base.clone()
            };
            apply_overrides(&mut cfg, args.trajectories, args.seed, args.loss_mode);
            let out = execute_ensemble(&cfg)?;
            for (round, p) in out.stats.success.iter().enumerate() {
                writeln!(text, "{},{},{},{}", name, fmt_f(tp), round + 1, fmt_f(*p)).unwrap();
            }
            eprintln!(
                "figure6 schedule={name} T'={tp} P(final)={:.4}",
                out.stats.success.last().copied().unwrap_or(f64::NAN)
            );
        }
    }
    std::fs::write(args.out.join("figure6_success.csv"), text)?;
    write_manifest(&args.out, &base, None)?;
    println!("figure6 data written to {}", args.out.display());
    Ok(0)
}

fn cmd_validate() -> anyhow::Result<i32> {
    let mut all_ok = true;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    let grid = XGrid::new(10.0, 257)?;
    let vacuum = DensityMatrixX::vacuum(grid);
    let m = vacuum.moments()?;
    check(
        "vacuum moments",
        m.mean_x.abs() < 1e-8
            && (m.var_x - 0.5).abs() < 1e-6
            && (m.var_p - 0.5).abs() < 1e-6
            && (m.purity - 1.0).abs() < 1e-6,
        format!("mean={:.2e} var_x={:.8} var_p={:.8}", m.mean_x, m.var_x, m.var_p),
    );

    let squeezed = psa_step(&vacuum, &PsaParams::new(0.3, 0.0, 4)?)?;
    let ms = squeezed.moments()?;
    check(
        "analytic squeezing",
        (ms.var_x - 0.5 * (0.6f64).exp()).abs() < 1e-4
            && (ms.var_p - 0.5 * (-0.6f64).exp()).abs() < 1e-4,
        format!("var_x={:.6} var_p={:.6}", ms.var_x, ms.var_p),
    );

    let fixed = psa_step(&vacuum, &PsaParams::new(0.0, 0.002, 2)?)?;
    let moved = (fixed.values() - vacuum.values())
        .iter()
        .fold(0.0f64, |a, x| a.max(x.abs()));
    check("two-photon-loss fixed point", moved < 1e-8, format!("max move {moved:.2e}"));

    let mut worst = 0.0f64;
    for &t in &[0.5, 0.9, 0.99, 0.999] {
        worst = worst.max(kraus_completeness_defect(&grid, t, 25)?);
    }
    check("measurement completeness", worst < 1e-6, format!("worst defect {worst:.2e}"));

    let cat = grid_from_fock(&DensityMatrixFock::cat(60, 2.0), grid)?;
    let w = wigner(&cat, &cat.grid().xs());
    let (min, max) = wigner_extrema(&w);
    check(
        "cat-state interference",
        min < -0.05 * max,
        format!("min/max = {:.3}", min / max),
    );

    let fock = cim_core::fock::psa_step(&DensityMatrixFock::vacuum(50), 0.2, 0.002, 40)?;
    let grid_route = psa_step(&vacuum, &PsaParams::new(0.2, 0.002, 4)?)?;
    let d = cim_core::fock::trace_distance_grid(&grid_route, &grid_from_fock(&fock, grid)?)?;
    check("grid/number-basis agreement", d < 1e-3, format!("trace distance {d:.2e}"));

    println!("{}", if all_ok { "all checks passed" } else { "CHECKS FAILED" });
    Ok(if all_ok { 0 } else { 1 })
}

fn cmd_export(args: ExportArgs) -> anyhow::Result<i32> {
    std::fs::create_dir_all(&args.out)?;
    let grid = XGrid::new(10.0, 257)?;
    let dim = 60;
    let (name, state): (&str, DensityMatrixX) = match args.state {
        RefState::Vacuum => ("vacuum", DensityMatrixX::vacuum(grid)),
        RefState::OnePhoton => (
            "one_photon",
            grid_from_fock(&DensityMatrixFock::number_state(dim, 1)?, grid)?,
        ),
        RefState::Squeezed => (
            "squeezed",
            psa_step(&DensityMatrixX::vacuum(grid), &PsaParams::new(args.squeeze, 0.0, 4)?)?,
        ),
        RefState::Thermal => (
            "thermal",
            grid_from_fock(&DensityMatrixFock::thermal(dim, args.nbar), grid)?,
        ),
        RefState::Cat => ("cat", grid_from_fock(&DensityMatrixFock::cat(dim, args.x0), grid)?),
        RefState::Mixture => (
            "mixture",
            grid_from_fock(&DensityMatrixFock::coherent_mixture(dim, args.x0), grid)?,
        ),
    };
    let contour = args.out.join(format!("{name}_contour.csv"));
    let wig = args.out.join(format!("{name}_wigner.csv"));
    export_contour(&state, &contour)?;
    export_wigner(&state, &wig)?;
    println!("wrote {} and {}", contour.display(), wig.display());
    Ok(0)
}
