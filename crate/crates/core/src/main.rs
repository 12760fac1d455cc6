use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use contraction_lpv::casestudy::{ControllerKind, Scenario};
use contraction_lpv::config::{Config, ConfigError, Entry, Plan, RunReport, Stages};
use contraction_lpv::geometry::{self, GeodesicSettings, Metric};

#[derive(Parser)]
#[command(name = "clpv", version, about = "LPV gain scheduling and CCM tracking: certify, simulate, compare")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in two-state benchmark.
    Casestudy {
        /// step or sine; both when omitted.
        #[arg(long)]
        scenario: Option<Scenario>,
        /// gsc1, gsc2 or ccm; all when omitted.
        #[arg(long)]
        controller: Option<ControllerKind>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Execute every certification, simulation and check in a config.
    Run { config: PathBuf },
    /// Execute only the certifications of a config.
    Certify { config: PathBuf },
    /// Solve one geodesic and print its nodes as CSV.
    Geodesic {
        /// Metric rows as JSON over x1..xn, e.g. '[["1 + 3*x1^2"]]'.
        #[arg(long)]
        metric: String,
        /// Comma-separated start point.
        #[arg(long, allow_hyphen_values = true)]
        from: String,
        #[arg(long, allow_hyphen_values = true)]
        to: String,
        /// Number of path segments.
        #[arg(long, default_value_t = GeodesicSettings::default().nodes)]
        nodes: usize,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of Jacobians and realizations.
    Jaccheck { config: PathBuf },
}

fn report_outcome(report: &RunReport, out: &Path) -> ExitCode {
    for line in report.failed_predicates() {
        eprintln!("FAILED {line}");
    }
    for r in report.runs.iter().filter(|r| r.unexpected_divergence) {
        eprintln!("DIVERGED {}/{}", r.summary.scenario, r.summary.controller);
    }
    for c in report.certifications.iter().filter(|c| c.invalid_bracket.is_some()) {
        eprintln!("INVALID BRACKET {} (see {})", c.name, out.join(format!("cert_{}.json", c.name)).display());
    }
    println!("artifacts in {}", out.display());
    ExitCode::from(report.exit_code() as u8)
}

fn run_config(path: &Path, stages: impl Fn(&Plan) -> Stages) -> Result<ExitCode, ConfigError> {
    let plan = Plan::load(path)?;
    let stages = stages(&plan);
    let out = plan.config.output_dir.clone();
    let report = plan.execute(&out, stages)?;
    Ok(report_outcome(&report, &out))
}

fn casestudy(scenario: Option<Scenario>, controller: Option<ControllerKind>, out: &Path) -> Result<ExitCode, ConfigError> {
    let mut cfg = Config::casestudy();
    cfg.scenarios.retain(|s| scenario.is_none_or(|sc| s.name == sc.name()));
    if let Some(c) = controller {
        for s in &mut cfg.scenarios {
            s.controllers = vec![c.name().to_string()];
            s.expect.retain(|name, _| name == c.name());
        }
    }
    cfg.certifications.clear();
    cfg.jaccheck = None;
    let plan = Plan::build(cfg)?;
    let stages = Stages {
        simulations: true,
        certifications: false,
        jaccheck: false,
    };
    let report = plan.execute(out, stages)?;
    for r in &report.runs {
        let s = &r.summary;
        println!(
            "{:<5} {:<5} lambda_fit={} steady_error={:.3e} diverged={}",
            s.scenario,
            s.controller,
            s.lambda_fit.map_or("-".into(), |v| format!("{v:.3}")),
            s.steady_error,
            s.diverged
        );
    }
    Ok(report_outcome(&report, out))
}

fn parse_point(text: &str) -> Result<DVector<f64>, ConfigError> {
    let v: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    v.map(DVector::from_vec)
        .map_err(|e| ConfigError::Schema(format!("point `{text}`: {e}")))
}

fn geodesic(metric: &str, from: &str, to: &str, nodes: usize, out: Option<&Path>) -> Result<ExitCode, ConfigError> {
    let rows: Vec<Vec<Entry>> = serde_json::from_str(metric).map_err(|e| ConfigError::Schema(format!("metric: {e}")))?;
    let (x0, x1) = (parse_point(from)?, parse_point(to)?);
    let names: Vec<String> = (1..=x0.len()).map(|i| format!("x{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let texts: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(Entry::text).collect()).collect();
    let metric = Metric::parse(&refs, &texts, None).map_err(|e| match e {
        geometry::GeometryError::Eval(m) => ConfigError::Expression(format!("metric: {m}")),
        other => ConfigError::Schema(other.to_string()),
    })?;
    let settings = GeodesicSettings {
        nodes,
        ..Default::default()
    };
    let path = geometry::solve_geodesic(&metric, &x0, &x1, &settings).map_err(|e| ConfigError::Runtime(e.to_string()))?;
    let write = |w: &mut dyn std::io::Write| path.write_csv(w).map_err(|e| ConfigError::Runtime(e.to_string()));
    match out {
        Some(p) => {
            let mut f = std::fs::File::create(p).map_err(|e| ConfigError::Runtime(format!("{}: {e}", p.display())))?;
            write(&mut f)?;
        }
        None => write(&mut std::io::stdout().lock())?,
    }
    if !path.converged {
        eprintln!("warning: geodesic solver stopped at residual {:.3e}", path.residual);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Casestudy { scenario, controller, out } => casestudy(*scenario, *controller, out),
        Command::Run { config } => run_config(config, |p| Stages {
            jaccheck: p.config.jaccheck.is_some(),
            ..Stages::ALL
        }),
        Command::Certify { config } => run_config(config, |_| Stages {
                simulations: false,
                certifications: true,
                jaccheck: false,
            }),
        Command::Jaccheck { config } => run_config(config, |_| Stages {
                simulations: false,
                certifications: false,
                jaccheck: true,
            }),
        Command::Geodesic {
            metric,
            from,
            to,
            nodes,
            out,
        } => geodesic(metric, from, to, *nodes, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
