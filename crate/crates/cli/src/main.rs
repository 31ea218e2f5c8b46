use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tangent_gauss::circle::{
    anisotropy_table, circle_stress, circle_sweep, cond_table, conditioning_demo, offset_table, sweep_table, SweepConfig,
};
use tangent_gauss::error::Result;
use tangent_gauss::gate::{evaluate_gate, gate_table, GateConfig};
use tangent_gauss::io::{FlatConfig, ReportEnvelope};
use tangent_gauss::pushing::{diagnostics_table, run_pushing, stress_table, PushingConfig};

#[derive(Parser)]
#[command(name = "tangent-gauss", version, about = "Tangent-linearized Gaussian inference on manifolds: benchmarks and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Baseline circle sweep: variance ratio, coverage, W2 proxies and bound.
    CircleSweep(Common),
    /// Anisotropy and offset stress on the circle.
    CircleStress(Common),
    /// Surface-measure conditioning versus the chart-lifted tangent law.
    CondDemo(Common),
    /// Planar pushing trajectory, covariances and diagnostics.
    Pushing(Common),
    /// Marginalization bound and escalation verdict for one Gaussian.
    Gate(Common),
}

#[derive(Args)]
struct Common {
    /// Flat TOML config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the main sample budget.
    #[arg(long)]
    samples: Option<usize>,
}

impl Common {
    fn flat(&self) -> Result<FlatConfig> {
        match &self.config {
            Some(p) => FlatConfig::load(p),
            None => Ok(FlatConfig::default()),
        }
    }

    fn prepare(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

fn sweep_config(c: &Common) -> Result<SweepConfig> {
    let mut cfg = SweepConfig::from_flat(&c.flat()?)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.samples {
        cfg.samples = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a command and returns the number of flagged rows.
fn run(cmd: &Command) -> Result<usize> {
    match cmd {
        Command::CircleSweep(c) => {
            let cfg = sweep_config(c)?;
            let out = circle_sweep(&cfg)?;
            let dir = c.prepare()?;
            sweep_table(&out)?.write(&dir.join("circle_sweep.csv"))?;
            ReportEnvelope::new("circle-sweep", &cfg, cfg.seed, &out)?.write(&dir.join("circle_sweep.json"))?;
            for s in &out.summaries {
                let crossing = s.crossing.map_or("none".to_string(), |x| format!("{x:.4}"));
                println!(
                    "R={} crossing={} c_tail={:.4} envelope={:.0}% flagged={}",
                    s.radius,
                    crossing,
                    s.c_tail,
                    100.0 * s.envelope_fraction,
                    s.flagged_rows
                );
            }
            Ok(out.flagged())
        }
        Command::CircleStress(c) => {
            let cfg = sweep_config(c)?;
            let out = circle_stress(&cfg)?;
            let dir = c.prepare()?;
            anisotropy_table(&out)?.write(&dir.join("circle_anisotropy.csv"))?;
            offset_table(&out)?.write(&dir.join("circle_offsets.csv"))?;
            ReportEnvelope::new("circle-stress", &cfg, cfg.seed, &out.alignment)?.write(&dir.join("circle_stress.json"))?;
            for a in &out.alignment {
                let spread = a.spread_in_steps.map_or("n/a".to_string(), |s| format!("{s:.2}"));
                println!("R={} crossing spread across eta: {} grid steps", a.radius, spread);
            }
            Ok(out.flagged())
        }
        Command::CondDemo(c) => {
            let cfg = sweep_config(c)?;
            let out = conditioning_demo(&cfg)?;
            let dir = c.prepare()?;
            cond_table(&out)?.write(&dir.join("cond_demo.csv"))?;
            ReportEnvelope::new("cond-demo", &cfg, cfg.seed, &out)?.write(&dir.join("cond_demo.json"))?;
            let ok = out.rows.iter().filter(|r| r.tv_ok && r.envelope_ok).count();
            println!("{ok}/{} rows within TV and W2 bounds", out.rows.len());
            Ok(out.flagged())
        }
        Command::Pushing(c) => {
            let mut cfg = PushingConfig::from_flat(&c.flat()?)?;
            if let Some(s) = c.seed {
                cfg.problem.seed = s;
            }
            if let Some(n) = c.samples {
                cfg.mc_budget = n;
            }
            let out = run_pushing(&cfg)?;
            let dir = c.prepare()?;
            let seed = cfg.problem.seed;
            diagnostics_table(&out, seed)?.write(&dir.join("pushing_steps.csv"))?;
            stress_table(&out, seed)?.write(&dir.join("pushing_stress.csv"))?;
            let summary = (&out.summary, out.tangency);
            ReportEnvelope::new("pushing", &cfg, seed, summary)?.write(&dir.join("pushing_summary.json"))?;
            let s = &out.summary;
            println!(
                "residual={:.2e} median_rho_mc={:.3} spearman={:.3} reductions={:?}",
                s.max_constraint_residual, s.median_rho_mc, s.spearman_mismatch_locality, s.reductions
            );
            Ok(0)
        }
        Command::Gate(c) => {
            let mut cfg = GateConfig::from_flat(&c.flat()?)?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            if let Some(n) = c.samples {
                cfg.samples = n;
            }
            let out = evaluate_gate(&cfg)?;
            let dir = c.prepare()?;
            gate_table(&out, cfg.seed)?.write(&dir.join("gate.csv"))?;
            ReportEnvelope::new("gate", &cfg, cfg.seed, &out)?.write(&dir.join("gate.json"))?;
            println!("{}", out.decision.rationale);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} flagged rows");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
