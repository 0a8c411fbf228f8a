use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use mvsk_core::bench::{gen_conditioned_instance, gen_uniform_instance, run_benchmark, write_records_csv, BenchmarkSpec};
use mvsk_core::verify::{convexity_certificate, reduced_hessian_spectrum, regularity_constants, SPECTRUM_CAP};
use mvsk_core::{
    crra_coefficients, load_returns, save_returns, solve, PanelFormat, Preset, PreferenceCoefficients, ReturnPanel,
    SolverConfig,
};

#[derive(Parser)]
#[command(name = "mvsk", version, about = "Long-only MVSK portfolio optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance from the equal-weight start.
    Solve {
        #[command(flatten)]
        input: ProblemArgs,
        #[arg(long, default_value = "small")]
        config: Preset,
        /// KKT tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Use the exact log-determinant trace in PCG mode at any size.
        #[arg(long)]
        exact_trace: bool,
        /// Keep the per-iterate trace in the report.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic return panel.
    Gen {
        #[arg(long, value_enum)]
        family: GenFamily,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 6.0)]
        gamma: f64,
        #[arg(long)]
        seed: u64,
        /// CSV, or raw little-endian f64 for `.bin`/`.mvsk`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark sweep described by a JSON spec.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the JSON summary; defaults to `<out>.summary.json`.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Convexity certificate and optional curvature diagnostics.
    Check {
        #[command(flatten)]
        input: ProblemArgs,
        /// Reduced-Hessian spectrum at equal weight.
        #[arg(long)]
        spectrum: bool,
        /// Regularity constants on the slice.
        #[arg(long)]
        constants: bool,
        #[arg(long, default_value_t = 1e-8)]
        tau: f64,
    },
}

#[derive(clap::Args)]
struct ProblemArgs {
    #[arg(long)]
    panel: PathBuf,
    /// "c1,c2,c3,c4"
    #[arg(long, conflicts_with = "crra", required_unless_present = "crra")]
    coeffs: Option<String>,
    /// CRRA risk aversion.
    #[arg(long)]
    crra: Option<f64>,
}

impl ProblemArgs {
    fn load(&self) -> Result<(ReturnPanel, PreferenceCoefficients)> {
        let panel = load_returns(&self.panel, PanelFormat::from_path(&self.panel))
            .with_context(|| format!("reading {}", self.panel.display()))?;
        let coeffs = match (&self.coeffs, self.crra) {
            (Some(s), _) => PreferenceCoefficients::parse(s)?,
            (None, Some(g)) => crra_coefficients(g)?,
            (None, None) => bail!("one of --coeffs or --crra is required"),
        };
        Ok((panel, coeffs))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GenFamily {
    Uniform,
    Conditioned,
}

fn write_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { input, config, tol, exact_trace, trace, out } => {
            let (panel, coeffs) = input.load()?;
            let mut cfg = SolverConfig::preset(config);
            if let Some(tol) = tol {
                cfg.epsilon = tol;
            }
            cfg.tangent.exact_trace |= exact_trace;
            cfg.record_trace = trace;
            let report = solve(&panel, &coeffs, None, &cfg)?;
            eprintln!(
                "{}: f = {:.12}, kkt = {:.3e}, {} iterations, {:.3} s",
                report.status, report.f_star, report.kkt_residual, report.iterations, report.wall_seconds
            );
            write_json(&report, out.as_deref())
        }
        Command::Gen { family, n, t, kappa, gamma, seed, out } => {
            let panel = match family {
                GenFamily::Uniform => gen_uniform_instance(n, t, seed)?,
                GenFamily::Conditioned => gen_conditioned_instance(n, t, kappa, gamma, seed)?.0,
            };
            save_returns(&panel, &out, PanelFormat::from_path(&out))?;
            Ok(())
        }
        Command::Bench { spec, out, summary } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: BenchmarkSpec = serde_json::from_str(&text).context("parsing benchmark spec")?;
            let outcome = run_benchmark(&spec, &spec.solver_configs()?)?;
            let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            write_records_csv(&outcome.records, &mut w)?;
            w.flush()?;
            let summary = summary.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".summary.json");
                p.into()
            });
            write_json(&outcome.summary, Some(&summary))
        }
        Command::Check { input, spectrum, constants, tau } => {
            let (panel, coeffs) = input.load()?;
            let n = panel.assets();
            let mut report = json!({
                "n": n,
                "T": panel.periods(),
                "coefficients": coeffs.as_array(),
                "certificate": convexity_certificate(&coeffs),
            });
            if spectrum {
                if n > SPECTRUM_CAP {
                    bail!("spectrum is limited to n <= {SPECTRUM_CAP}, got {n}");
                }
                let obj = mvsk_core::Objective::new(&panel, &coeffs);
                report["spectrum"] = serde_json::to_value(reduced_hessian_spectrum(&obj, &vec![1.0 / n as f64; n])?)?;
            }
            if constants {
                report["constants"] = serde_json::to_value(regularity_constants(&panel, &coeffs, tau)?)?;
            }
            write_json(&report, None)
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
