use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mifa_sim::algorithms::IsNormalization;
use mifa_sim::availability::{check_assumption4, AvailabilityModel};
use mifa_sim::harness::config::linspace;
use mifa_sim::harness::csv::{self, write_atomic, write_experiment};
use mifa_sim::harness::{self, ExperimentConfig, ExperimentResult};
use mifa_sim::schedules::{nonconvex_round_conditions, LrSchedule};
use mifa_sim::simulation::AlgorithmSpec;
use mifa_sim::Error;

#[derive(Parser)]
#[command(
    name = "mifa-sim",
    version,
    about = "Federated averaging under arbitrary device unavailability"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Args)]
struct Overrides {
    /// replaces the configured seed list (comma separated)
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// output path; defaults to `run.out`, else stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithm for every seed
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run several algorithms on shared availability streams
    Compare {
        config: PathBuf,
        /// e.g. mifa,biased_fedavg,is_fedavg:total_count,sampling_fedavg:10
        #[arg(long, value_delimiter = ',', required = true)]
        algorithms: Vec<AlgorithmSpec>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Monte Carlo study of inactive-round statistics under Bernoulli availability
    TauStudy {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Monte Carlo wall-rounds per update of device-sampling FedAvg
    WaitStudy {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        s: usize,
        /// participation probabilities, comma separated
        #[arg(long, value_delimiter = ',', conflicts_with = "p_range")]
        p: Option<Vec<f64>>,
        /// `lo,hi`, spread linearly over devices
        #[arg(long, value_delimiter = ',', num_args = 2)]
        p_range: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check the configuration and the assumptions it implies, without running
    Validate { config: PathBuf },
}

fn load(path: &Path, overrides: Option<&Overrides>) -> mifa_sim::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = overrides {
        if let Some(seeds) = &o.seed {
            cfg.run.seeds = seeds.clone();
        }
        if let Some(out) = &o.out {
            cfg.run.out = Some(out.clone());
        }
    }
    Ok(cfg)
}

fn report(result: &ExperimentResult, out: Option<&Path>) -> mifa_sim::Result<()> {
    match out {
        Some(path) => {
            let w = write_experiment(path, result)?;
            if result.is_partial() {
                eprintln!(
                    "warning: partial result (diverged: {:?})",
                    result.summary.diverged
                );
            }
            eprintln!("wrote {}", w.runs.display());
            eprintln!("wrote {}", w.aggregate.display());
            eprintln!("wrote {}", w.metadata.display());
        }
        None => print!("{}", csv::runs_csv(result)),
    }
    Ok(())
}

fn run(cmd: Command) -> mifa_sim::Result<()> {
    match cmd {
        Command::Run { config, overrides } => {
            let cfg = load(&config, Some(&overrides))?;
            let result = harness::run_experiment(&cfg)?;
            report(&result, cfg.run.out.as_deref())
        }
        Command::Compare {
            config,
            algorithms,
            overrides,
        } => {
            let cfg = load(&config, Some(&overrides))?;
            let Some(out) = cfg.run.out.clone() else {
                return Err(Error::Config {
                    key: "run.out".into(),
                    reason: "compare writes one file per algorithm; give --out".into(),
                });
            };
            let results = harness::compare(&cfg, &algorithms)?;
            for (alg, result) in algorithms.iter().zip(&results) {
                let path = csv::sibling(&out, &format!(".{}.csv", alg_tag(alg)));
                report(result, Some(&path))?;
            }
            Ok(())
        }
        Command::TauStudy { config, overrides } => {
            let cfg = load(&config, Some(&overrides))?;
            let model = cfg.build_availability()?;
            let AvailabilityModel::IidBernoulli { p } = &model else {
                return Err(Error::Config {
                    key: "availability.kind".into(),
                    reason: "the tau study needs Bernoulli availability".into(),
                });
            };
            let spec = cfg.study.clone().ok_or_else(|| Error::Config {
                key: "study".into(),
                reason: "missing [study] section".into(),
            })?;
            let study = harness::tau_study(
                p,
                cfg.run.rounds,
                spec.traces,
                spec.delta,
                spec.max_k,
                cfg.run.seeds[0],
            )?;
            eprintln!(
                "tau_max bound {:.4}: held in {:.2}% of {} traces; mean tau_bar / shape = {:.4}",
                study.tau_max_bound,
                100.0 * study.within_bound,
                study.traces,
                study.mean_ratio
            );
            let text = csv::tau_study_csv(&study);
            match &cfg.run.out {
                Some(path) => write_atomic(path, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::WaitStudy {
            n,
            s,
            p,
            p_range,
            trials,
            seed,
        } => {
            let p = match (p, p_range) {
                (Some(p), _) => p,
                (None, Some(r)) => linspace(r[0], r[1], n),
                (None, None) => vec![1.0; n],
            };
            let w = harness::waiting_time_study(n, s, &p, trials, seed)?;
            println!("mean_wait,stderr,lower_bound");
            println!(
                "{},{},{}",
                csv::float(w.mean_wait),
                csv::float(w.stderr),
                csv::float(w.lower_bound)
            );
            Ok(())
        }
        Command::Validate { config } => validate(&config),
    }
}

fn alg_tag(a: &AlgorithmSpec) -> String {
    match a {
        AlgorithmSpec::SamplingFedavg { s } => format!("sampling_fedavg_s{s}"),
        AlgorithmSpec::IsFedavg {
            normalization: IsNormalization::ActiveCount,
        } => "is_fedavg_active_count".into(),
        AlgorithmSpec::IsFedavg {
            normalization: IsNormalization::TotalCount,
        } => "is_fedavg_total_count".into(),
        other => other.name().to_string(),
    }
}

fn validate(path: &Path) -> mifa_sim::Result<()> {
    let cfg = load(path, None)?;
    let instance = cfg.build_instance()?;
    let model = cfg.build_availability()?;
    let schedule = cfg.build_schedule(&instance, &model)?;
    cfg.init(instance.dim())?;
    let c = instance.constants();
    println!("problem: N = {}, d = {}", instance.n(), instance.dim());
    println!(
        "constants: L = {}, mu = {}, sigma = {}, delta = {}, rho = {}",
        c.l, c.mu, c.sigma, c.delta, c.rho
    );
    if let Some(opt) = instance.optimum() {
        println!("optimum: f* = {}, D = {}", opt.f_star, opt.dissimilarity);
    }
    let k = cfg.run.local_steps;
    match schedule {
        LrSchedule::StronglyConvex { t0, a, .. } => println!("schedule: t0 = {t0}, a = {a}"),
        LrSchedule::NonConvexConstant { eta } => {
            println!("schedule: eta = {eta}");
            if let Some(nu) = model.declared_nu() {
                let nu_max = nu.iter().copied().fold(0.0, f64::max);
                for cond in nonconvex_round_conditions(
                    cfg.run.rounds,
                    c.alpha.unwrap_or(0.0),
                    c.l,
                    instance.n(),
                    k,
                    nu_max,
                    c.rho,
                    c.delta,
                ) {
                    println!(
                        "condition T >= {} = {}: {}",
                        cond.name,
                        cond.required,
                        if cond.holds { "holds" } else { "unmet" }
                    );
                }
            }
        }
        LrSchedule::ExperimentalDecay { .. } => {}
    }
    println!(
        "eta_1 = {}, eta_T = {}",
        schedule.eta(1)?,
        schedule.eta(cfg.run.rounds)?
    );
    if let (AvailabilityModel::TraceReplay { n, trace }, Some(t0)) =
        (&model, schedule_t0(&schedule))
    {
        if c.mu > 0.0 {
            let check = check_assumption4(*n, trace, t0, c.l, c.mu)?;
            match check.first_violation {
                None => println!("linear delay bound: holds"),
                Some((t, i)) => println!("linear delay bound: violated at round {t}, device {i}"),
            }
        }
    }
    println!("ok");
    Ok(())
}

fn schedule_t0(s: &LrSchedule) -> Option<f64> {
    match s {
        LrSchedule::StronglyConvex { t0, .. } => Some(*t0),
        _ => None,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
