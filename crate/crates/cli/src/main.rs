use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use genkb::commands::{self, Labels};
use genkb::prompt::{PromptAnnotator, PromptLabels};
use genkb::{CliError, RunConfig};
use genkb_core::active::TruthOracle;
use genkb_core::embed::LossMode;
use genkb_core::guidance::RuleSet;
use genkb_core::load_kb;

#[derive(Parser)]
#[command(name = "genkb", version, about = "Generics knowledge-base completion with guided active learning")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, env = "GENKB_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the configured seed everywhere.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true, env = genkb::config::OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    /// Overrides the configured knowledge base, e.g. with a training split.
    #[arg(long, global = true)]
    kb: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExpansionArgs {
    /// Comma-separated rule ids, `all`, or empty for none.
    #[arg(long)]
    rules: Option<String>,
    #[arg(long)]
    keep_threshold: Option<f64>,
    #[arg(long)]
    derived_weight: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled synthetic world and a config for it.
    Fixture {
        #[arg(long, default_value = "fixture")]
        dir: PathBuf,
    },
    /// Seeded 3/1/1 train/validation/test split of the knowledge base.
    Split,
    /// Expand, train and save the model.
    Train {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        neg: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, value_parser = ["binary", "multiclass"])]
        loss: Option<String>,
        #[command(flatten)]
        expansion: ExpansionArgs,
    },
    /// Export derived triples with their post-training probabilities.
    Expand {
        #[command(flatten)]
        expansion: ExpansionArgs,
    },
    /// Rank schema-consistent unseen triples with the saved model.
    Predict {
        #[arg(long)]
        min_probability: Option<f64>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Precision bounds for a ranked prediction list.
    Eval {
        /// Ranked CSV; defaults to predictions.csv in the output directory.
        #[arg(long)]
        ranked: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        delta: Option<usize>,
        #[arg(long)]
        ytilde: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<u32>>,
        /// A knowledge-base file with true labels, or `interactive`. Defaults to
        /// the configured truth file.
        #[arg(long)]
        labels: Option<String>,
        /// Also scan every prediction for exact precision (default: on for label files).
        #[arg(long)]
        exact: Option<bool>,
    },
    /// One active-learning episode about a new entity.
    Active {
        #[arg(long)]
        entity: String,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        selection: Option<String>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        tau_low: Option<f64>,
        #[arg(long)]
        tau_high: Option<f64>,
        #[arg(long)]
        wc: Option<f64>,
        #[arg(long)]
        wd: Option<f64>,
        #[arg(long)]
        wr: Option<f64>,
        /// A knowledge-base file answering every question, or `interactive`.
        /// Defaults to the configured truth file.
        #[arg(long)]
        truth: Option<String>,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_expansion(cfg: &mut RunConfig, a: ExpansionArgs) -> Result<(), CliError> {
    if let Some(r) = a.rules {
        cfg.expansion.rules = if r.trim().is_empty() { RuleSet::none() } else { RuleSet::parse(&r).map_err(CliError::Config)? };
    }
    set(&mut cfg.expansion.keep_threshold, a.keep_threshold);
    set(&mut cfg.expansion.derived_weight, a.derived_weight);
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("no configuration given (use --config or GENKB_CONFIG)".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(kb) = &cli.kb {
        cfg.paths.kb = Some(kb.clone());
        cfg.validate()?;
    }
    Ok(cfg)
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Fixture { dir } = &cli.command {
        report(&commands::cmd_fixture(dir)?);
        return Ok(());
    }
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Fixture { .. } => unreachable!("handled above"),
        Command::Split => report(&commands::cmd_split(&cfg)?),
        Command::Train { dim, epochs, lr, neg, eta, loss, expansion } => {
            set(&mut cfg.train.dim, dim);
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.learning_rate, lr);
            set(&mut cfg.train.n_neg, neg);
            set(&mut cfg.train.eta, eta);
            if let Some(l) = loss {
                cfg.train.loss = if l == "multiclass" { LossMode::Multiclass } else { LossMode::Binary };
            }
            apply_expansion(&mut cfg, expansion)?;
            cfg.validate()?;
            report(&commands::cmd_train(&cfg)?);
        }
        Command::Expand { expansion } => {
            apply_expansion(&mut cfg, expansion)?;
            report(&commands::cmd_expand(&cfg)?);
        }
        Command::Predict { min_probability, limit } => {
            set(&mut cfg.predict.min_probability, min_probability);
            if limit.is_some() {
                cfg.predict.limit = limit;
            }
            report(&commands::cmd_predict(&cfg)?);
        }
        Command::Eval { ranked, alpha, delta, ytilde, checkpoints, labels, exact } => {
            set(&mut cfg.estimator.alpha, alpha);
            set(&mut cfg.estimator.delta, delta);
            if ytilde.is_some() {
                cfg.estimator.y_tilde = ytilde;
            }
            if checkpoints.is_some() {
                cfg.estimator.checkpoints = checkpoints;
            }
            cfg.validate()?;
            let ranked = ranked.unwrap_or_else(|| cfg.output_dir.join("predictions.csv"));
            let rows = commands::read_ranked(&ranked)?;
            let triples: Vec<_> = rows
                .iter()
                .map(|r| genkb_core::NamedTriple::new(r.source.as_str(), r.relation.as_str(), r.target.as_str()))
                .collect();
            let (labels, default_exact) = match labels.as_deref() {
                Some("interactive") => {
                    let src = PromptLabels::new(&triples, io::stdin().lock(), io::stdout());
                    (Labels::Source(Box::new(src)), false)
                }
                Some(path) => (Labels::Truth(load_kb(path)?.named_facts()), true),
                None => match cfg.load_truth()? {
                    Some(kb) => (Labels::Truth(kb.named_facts()), true),
                    None => return Err(CliError::Config("no labels: pass --labels or set paths.truth".into()).into()),
                },
            };
            let (rep, paths) = commands::cmd_eval(&cfg, &ranked, labels, exact.unwrap_or(default_exact))?;
            report(&paths);
            println!("{} bound queries of {} predictions", rep.bound_queries, rep.predictions);
        }
        Command::Active { entity, mode, selection, budget, kappa, tau_low, tau_high, wc, wd, wr, truth } => {
            let a = &mut cfg.active;
            if let Some(m) = mode {
                a.mode = m.parse().map_err(CliError::Config)?;
            }
            if let Some(s) = selection {
                a.selection = s.parse().map_err(CliError::Config)?;
            }
            set(&mut a.budget, budget);
            set(&mut a.thresholds.kappa_m, kappa);
            set(&mut a.thresholds.tau_l, tau_low);
            set(&mut a.thresholds.tau_u, tau_high);
            set(&mut a.weights.w_c, wc);
            set(&mut a.weights.w_d, wd);
            set(&mut a.weights.w_r, wr);
            cfg.validate()?;
            let (rep, paths) = match truth.as_deref() {
                Some("interactive") => {
                    let mut annotator = PromptAnnotator::new(io::stdin().lock(), io::stdout());
                    commands::cmd_active(&cfg, &entity, &mut annotator)?
                }
                Some(path) => commands::cmd_active(&cfg, &entity, &mut TruthOracle::from_kb(&load_kb(path)?))?,
                None => {
                    let kb = cfg
                        .load_truth()?
                        .ok_or_else(|| CliError::Config("no annotator: pass --truth or set paths.truth".into()))?;
                    commands::cmd_active(&cfg, &entity, &mut TruthOracle::from_kb(&kb))?
                }
            };
            report(&paths);
            println!(
                "annotation {}, sibling agreement {}, factorization {}, total {}",
                rep.from_annotation, rep.from_sibling_agreement, rep.from_factorization, rep.total
            );
        }
        Command::Serve { host, port } => {
            let rt = tokio::runtime::Runtime::new().context("starting the runtime")?;
            rt.block_on(genkb::service::serve(&cfg, &host, port))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
