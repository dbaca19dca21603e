use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use heflow::donaldson::properness_probe;
use heflow::flow::{c0_control_fit, FlowStatus};
use heflow::scenario::Scenario;
use heflow::stability::{destabilize_probe, ELL_MIN_DEFAULT};
use heflow::verify::run_suite;
use heflow::{DerivScheme, EndoField, FormDegree};

/// Scenario runner and verification harness for the heat flow on Hermitian
/// bundle metrics. Thread count can be overridden with RAYON_NUM_THREADS.
#[derive(Parser)]
#[command(name = "heflow", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Profile {
    Spectral,
    Fd2,
    Fd4,
}

impl Profile {
    fn scheme(self) -> DerivScheme {
        match self {
            Profile::Spectral => DerivScheme::Spectral,
            Profile::Fd2 => DerivScheme::Fd2,
            Profile::Fd4 => DerivScheme::Fd4,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a flow scenario and write the trace CSV and summary report.
    Flow {
        #[arg(long)]
        config: PathBuf,
        /// Override the scenario's random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: current directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the destabilization and properness probes on the trace.
        #[arg(long)]
        probe: bool,
    },
    /// Run a flow scenario with the probes enabled (alias for flow --probe).
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite and print the residual table.
    Verify {
        #[arg(long, value_enum, default_value = "spectral")]
        profile: Profile,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Grid size of the verification lattice.
        #[arg(long, default_value_t = 32)]
        n: usize,
    },
    /// Print degree, rank, slope, and the Einstein constant of a bundle.
    Degree {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Flow {
            config,
            seed,
            out,
            probe,
        } => cmd_flow(&config, seed, out.as_deref(), probe),
        Cmd::Probe { config, seed, out } => cmd_flow(&config, seed, out.as_deref(), true),
        Cmd::Verify { profile, seed, n } => cmd_verify(profile, seed, n),
        Cmd::Degree { config } => cmd_degree(&config),
    };
    match code {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    Scenario::from_json(&text).map_err(|e| e.to_string())
}

fn cmd_flow(
    config: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
    probe: bool,
) -> Result<ExitCode, String> {
    let sc = load_scenario(config)?;
    let bundle = sc.build_bundle().map_err(|e| e.to_string())?;
    let h0 = sc
        .build_initial_metric(&bundle, seed)
        .map_err(|e| e.to_string())?;
    let trace = bundle
        .run_flow(&h0, &sc.flow)
        .map_err(|e| e.to_string())?;

    let out_dir = out.unwrap_or(Path::new("."));
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    let trace_name = sc.outputs.trace.clone().unwrap_or("trace.csv".into());
    let report_name = sc.outputs.report.clone().unwrap_or("report.json".into());
    std::fs::write(out_dir.join(&trace_name), trace.csv())
        .map_err(|e| format!("cannot write trace: {e}"))?;

    let last = trace.rows.last();
    let (c1, c2, viol) = c0_control_fit(&bundle, &h0, &trace.s_history);
    let mut report = json!({
        "status": trace.status,
        "rows": trace.rows.len(),
        "final_t": last.map(|r| r.t),
        "final_sup_dev": last.map(|r| r.sup_dev),
        "final_l2_dev": last.map(|r| r.l2_dev),
        "final_m_k": last.map(|r| r.m_k),
        "hermiticity_drift": trace.hermiticity_drift,
        "diverged_site": trace.diverged_site,
        "c0_control": {"c1": c1, "c2": c2, "max_violation": viol},
    });

    if probe {
        let mk: Vec<f64> = trace.rows.iter().map(|r| r.m_k).collect();
        let sup: Vec<f64> = trace.rows.iter().map(|r| r.c0_s).collect();
        let properness = properness_probe(&mk, &sup, 0.05);
        let destab = destabilize_probe(&bundle, &h0, &trace, 1e-2, ELL_MIN_DEFAULT)
            .map_err(|e| e.to_string())?;
        report["properness"] = serde_json::to_value(&properness).unwrap();
        report["destabilization"] = serde_json::to_value(&destab).unwrap();
    }

    let text = serde_json::to_string_pretty(&report).unwrap();
    std::fs::write(out_dir.join(&report_name), &text)
        .map_err(|e| format!("cannot write report: {e}"))?;
    println!("{text}");

    if trace.status == FlowStatus::Diverged && !probe {
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(profile: Profile, seed: u64, n: usize) -> Result<ExitCode, String> {
    let rep = run_suite(n, profile.scheme(), seed, 1.0);
    print!("{}", rep.table());
    if rep.all_pass() {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("some checks FAILED");
        Ok(ExitCode::from(1))
    }
}

fn cmd_degree(config: &Path) -> Result<ExitCode, String> {
    let sc = load_scenario(config)?;
    let bundle = sc.build_bundle().map_err(|e| e.to_string())?;
    let k = bundle.flat_reference_metric();
    let deg = bundle.degree(&k);
    let lambda = bundle.einstein_constant();
    println!("rank    {}", bundle.rank());
    println!("degree  {deg:.9}");
    println!("slope   {:.9}", bundle.slope());
    println!("lambda  {:.9}i", lambda.im);
    if bundle.rank() > 1 && bundle.background_a().is_none() {
        for a in 0..bundle.rank() {
            let mut pi = EndoField::zero(&bundle.grid, bundle.rank(), FormDegree::Zero);
            for v in pi.comp_mut(a, a).iter_mut() {
                *v = num_complex::Complex64::new(1.0, 0.0);
            }
            println!("summand {a}: degree {:.9}", bundle.projection_degree(&k, &pi));
        }
    }
    Ok(ExitCode::SUCCESS)
}
