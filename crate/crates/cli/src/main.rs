use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ptc_core::harness::{
    execute, identify_experiment, parse_override, parse_points, read_results, scaling_check, write_atomic,
    RunConfig, ScalingMetric,
};
use ptc_core::hypervolume::{hv, HvMode, ReferencePoint};
use ptc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ptc", version, about = "Probe-then-commit multi-objective bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides of the form `--section.key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let overrides = self
            .overrides
            .iter()
            .map(|o| parse_override(o))
            .collect::<Result<Vec<_>>>()?;
        match &self.config {
            Some(path) => RunConfig::load(path, &overrides),
            None => RunConfig::from_toml_str("", &overrides),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the learner section's single configuration over all seeds.
    Run(ConfigArgs),
    /// Run the cartesian product of the sweep axes.
    Sweep(ConfigArgs),
    /// ε-frontier identification at the derived budget.
    Identify {
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Hypervolume of a point file.
    Hv {
        file: PathBuf,
        /// Volume of the convex hull's dominated region instead of the box union.
        #[arg(long)]
        convex: bool,
        #[arg(long, default_value_t = 1_000_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0)]
        mc_seed: u64,
        /// Comma-separated reference point; the origin by default.
        #[arg(long = "ref", value_delimiter = ',')]
        reference: Option<Vec<f64>>,
    },
    /// Generate an instance and dump it as JSON.
    GenEnv {
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Scaling-law checks on a stored result file.
    Check {
        file: PathBuf,
        /// Fail unless the regret ratios fall in the acceptance windows.
        #[arg(long)]
        assert: bool,
    },
}

/// Regret-ratio acceptance windows: `(q1, q2, lo, hi)`.
const WINDOWS: [(usize, usize, f64, f64); 2] = [(1, 2, 1.15, 1.9), (1, 4, 1.5, 2.8)];

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run(args) => experiment(&args, false),
        Command::Sweep(args) => experiment(&args, true),
        Command::Identify { report, config } => {
            let cfg = config.load()?;
            let rep = identify_experiment(&cfg)?;
            let json = serde_json::to_string_pretty(&rep)?;
            println!("{json}");
            if let Some(path) = report {
                write_atomic(&path, json.as_bytes())?;
            }
            Ok(true)
        }
        Command::Hv {
            file,
            convex,
            mc_samples,
            mc_seed,
            reference,
        } => {
            let points = parse_points(&std::fs::read_to_string(&file)?)?;
            let r = match reference {
                Some(z) => ReferencePoint::new(z),
                None => ReferencePoint::origin(points.dim()),
            };
            let mode = if convex {
                HvMode::Convex { mc_samples, mc_seed }
            } else {
                HvMode::Boxes
            };
            let est = hv(&points, &r, mode)?;
            println!("value {}", est.value);
            println!("stderr {}", est.stderr);
            println!("method {}", est.method.label());
            Ok(true)
        }
        Command::GenEnv { out, config } => {
            let cfg = config.load()?;
            let inst = cfg.instance.build()?;
            write_atomic(&out, inst.to_json()?.as_bytes())?;
            println!(
                "wrote {} (K = {}, d = {}, frontier = {:?})",
                out.display(),
                inst.k(),
                inst.d(),
                inst.frontier().indices
            );
            Ok(true)
        }
        Command::Check { file, assert } => check(&file, assert),
    }
}

fn experiment(args: &ConfigArgs, sweep: bool) -> Result<bool> {
    let cfg = args.load()?;
    let out = execute(&cfg, sweep)?;
    println!("wrote {} rows to {}", out.rows.len(), cfg.run.output.display());
    println!("{}", serde_json::to_string_pretty(&out.summary)?);
    Ok(true)
}

fn check(file: &Path, assert: bool) -> Result<bool> {
    let rows = read_results(file)?;
    let slices: BTreeSet<(String, bool)> = rows.iter().map(|r| (r.mode.clone(), r.m_on)).collect();
    let mut ok = true;
    let mut checked = 0;
    for (mode, m_on) in slices {
        let slice: Vec<_> = rows.iter().filter(|r| r.mode == mode && r.m_on == m_on).cloned().collect();
        let qs: BTreeSet<usize> = slice.iter().map(|r| r.q).collect();
        for &(q1, q2, lo, hi) in &WINDOWS {
            if !(qs.contains(&q1) && qs.contains(&q2)) {
                continue;
            }
            for metric in [ScalingMetric::Regret, ScalingMetric::HvGap] {
                let rep = scaling_check(&slice, metric, q1, q2)?;
                checked += 1;
                let verdict = if metric == ScalingMetric::Regret {
                    let pass = (lo..=hi).contains(&rep.ratio_of_means);
                    ok &= pass;
                    if pass { "PASS" } else { "FAIL" }
                } else {
                    "info"
                };
                println!(
                    "[{verdict}] mode={mode} M_on={m_on} {metric:?} q{q1}/q{q2}: ratio of means {:.3}, mean ratio {:.3} ± {:.3} (reference {:.3}, pairs {})",
                    rep.ratio_of_means, rep.mean_ratio, rep.mean_ratio_stderr, rep.reference, rep.pairs
                );
            }
        }
    }
    if checked == 0 {
        return Err(Error::MissingData("no (1,2) or (1,4) probe-budget pairs in the file".into()));
    }
    Ok(ok || !assert)
}
