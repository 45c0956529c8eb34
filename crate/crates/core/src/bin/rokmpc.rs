use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rokmpc::error::Result;
use rokmpc::experiment::{self, ExperimentConfig};
use rokmpc::lifting::Family;
use rokmpc::mpc::ControllerKind;

#[derive(Parser, Debug)]
#[command(name = "rokmpc", version, about = "Reduced-order Koopman MPC experiments")]
struct Cli {
    /// TOML experiment file; built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print the merged configuration as TOML and exit.
    #[arg(long, global = true)]
    print_effective_config: bool,

    #[command(flatten)]
    lifting: LiftingArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct LiftingArgs {
    /// Selection threshold; disables count-based selection.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Comma-separated, e.g. `products,hermite`; `none` for the identity lifting.
    #[arg(long, global = true, value_delimiter = ',')]
    library_families: Option<Vec<String>>,

    #[arg(long, global = true)]
    kalman_q: Option<f64>,

    #[arg(long, global = true)]
    kalman_r: Option<f64>,

    #[arg(long, global = true)]
    kalman_p0: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the open-loop excitation run.
    GenerateData,
    /// Select lifting functions and fit the full and reduced models.
    Identify {
        /// Reduced model order.
        #[arg(long)]
        order: Option<usize>,
    },
    /// Run closed-loop scenarios.
    Control {
        /// Scenario file; repeatable. Replaces the configured list.
        #[arg(long = "scenario")]
        scenarios: Vec<PathBuf>,
        /// Comma-separated controller labels.
        #[arg(long, value_delimiter = ',')]
        controllers: Option<Vec<ControllerKind>>,
        /// Comma-separated disturbance seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Aggregate run directories into the RMSE grid and timing table.
    Report,
    /// Validation error across reduced orders.
    SweepR {
        #[arg(long, value_delimiter = ',')]
        orders: Option<Vec<usize>>,
    },
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    let l = &cli.lifting;
    if let Some(lambda) = l.lambda {
        cfg.lifting.kalman.lambda = lambda;
        cfg.lifting.select_count = 0;
    }
    if let Some(fams) = &l.library_families {
        cfg.lifting.library.families = if fams.len() == 1 && fams[0].trim() == "none" {
            Vec::new()
        } else {
            fams.iter().map(|f| f.parse::<Family>()).collect::<Result<_>>()?
        };
    }
    if let Some(q) = l.kalman_q {
        cfg.lifting.kalman.q_proc = q;
    }
    if let Some(r) = l.kalman_r {
        cfg.lifting.kalman.r_meas = r;
    }
    if let Some(p0) = l.kalman_p0 {
        cfg.lifting.kalman.p0 = p0;
    }
    match &cli.command {
        Command::Identify { order: Some(r) } => cfg.model.order = *r,
        Command::Control {
            scenarios,
            controllers,
            seeds,
        } => {
            if !scenarios.is_empty() {
                // command-line paths are relative to the working directory
                cfg.control.scenarios = scenarios
                    .iter()
                    .map(|p| std::path::absolute(p).unwrap_or_else(|_| p.clone()))
                    .collect();
            }
            if controllers.is_some() {
                cfg.control.controllers = controllers.clone();
            }
            if seeds.is_some() {
                cfg.control.seeds = seeds.clone();
            }
        }
        Command::SweepR { orders: Some(o) } => cfg.model.sweep_orders = o.clone(),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    if cli.print_effective_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    match cli.command {
        Command::GenerateData => {
            let ds = experiment::generate_data(&cfg)?;
            println!("{} samples, dt = {} h", ds.len(), ds.dt());
        }
        Command::Identify { .. } => {
            let r = experiment::identify(&cfg)?;
            println!(
                "N = {}, r = {}, validation RMSE full {:.4} reduced {:.4}",
                r.lifted_dim, r.reduced.order, r.full.validation_rmse, r.reduced.validation_rmse
            );
        }
        Command::Control { .. } => {
            let out = experiment::control(&cfg)?;
            for s in &out.summaries {
                let cells: Vec<String> = s
                    .windows
                    .iter()
                    .map(|w| match w.rmse {
                        Some(v) => format!("{}={v:.4}", w.label),
                        None => format!("{}=missing", w.label),
                    })
                    .collect();
                println!("{} {}", s.run_id, cells.join(" "));
            }
            if let Some(r) = out.timing.ratio {
                println!("step time ratio reduced/full {r:.3}");
            }
            let failed = out.summaries.iter().filter(|s| s.failure.is_some()).count();
            if failed > 0 {
                return Err(rokmpc::error::Error::Config(format!("{failed} run(s) failed")));
            }
        }
        Command::Report => {
            let b = experiment::report(&cfg)?;
            let missing = b.rmse.iter().filter(|c| c.median.is_none()).count();
            println!("{} runs, {} RMSE cells ({missing} missing)", b.runs.len(), b.rmse.len());
        }
        Command::SweepR { .. } => {
            for (r, s, _) in experiment::sweep_r(&cfg)? {
                println!("r = {r:>3}  rmse {:.4}  rho {:.4}", s.validation_rmse, s.spectral_radius);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
