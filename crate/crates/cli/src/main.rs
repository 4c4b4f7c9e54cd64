use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cate_core::dgp::ColumnMap;
use cate_core::driver::{
    read_panels, read_results, results_to_csv, results_to_json, summarize_panels, write_panels, write_plot_data,
    write_results, OutputFormat, WORKERS_ENV,
};
use cate_core::{run_experiment, DataSource, ExperimentConfig, Learner, ProcedureKind, Profile, ResultTable};

#[derive(Parser)]
#[command(name = "cate", version, about = "Monte Carlo comparison of CATE meta-learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the synthetic simulation designs.
    Simulate {
        /// Design number, 1 to 6.
        #[arg(long, default_value_t = 6)]
        design: u8,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the semi-synthetic harness on a school-level data file.
    Semisynth {
        #[arg(long)]
        data: PathBuf,
        /// TOML file mapping roles (W, Y, S3, C1, ...) to column headers.
        #[arg(long)]
        colmap: Option<PathBuf>,
        /// Number of correlated uniform covariates appended to the data.
        #[arg(long, default_value_t = 90)]
        augment_p: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Recompute summaries from saved prediction panels.
    Metrics {
        /// Panel file written by `--save-panels`.
        #[arg(long)]
        panels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<OutputFormat>,
    },
    /// Write a long-format CSV of summaries against n_train.
    EmitPlotdata {
        /// Result file (CSV or JSON) from `simulate` or `semisynth`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Comma-separated subset of S,SW,T,X,DR,R.
    #[arg(long, value_delimiter = ',')]
    learners: Option<Vec<Learner>>,
    /// Comma-separated subset of full,split,crossfit.
    #[arg(long, value_delimiter = ',')]
    procedures: Option<Vec<ProcedureKind>>,
    #[arg(long, value_delimiter = ',')]
    n_train: Option<Vec<usize>>,
    /// One count per n_train entry, or a single count for all of them.
    #[arg(long, value_delimiter = ',')]
    replications: Option<Vec<usize>>,
    #[arg(long)]
    n_validation: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Clip estimated propensities to [eps, 1 - eps] in the DR- and R-learners.
    #[arg(long)]
    propensity_clip: Option<f64>,
    /// Output file; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json; defaults to the extension of --out.
    #[arg(long)]
    format: Option<OutputFormat>,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Exit with an error if any cell aborted.
    #[arg(long)]
    strict: bool,
    /// Record wall-clock seconds per cell.
    #[arg(long)]
    timing: bool,
    /// Use one covariate correlation matrix for all replications.
    #[arg(long)]
    fixed_sigma: bool,
    /// Also write every cell's prediction panel to this JSON file.
    #[arg(long)]
    save_panels: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self, source: DataSource) -> anyhow::Result<ExperimentConfig> {
        let mut c = ExperimentConfig::new(source, self.profile);
        if let Some(l) = &self.learners {
            c.learners = l.clone();
        }
        if let Some(p) = &self.procedures {
            c.procedures = p.clone();
        }
        if let Some(n) = &self.n_train {
            c.n_train = n.clone();
            if self.replications.is_none() {
                c.replications = vec![c.replications[0]; n.len()];
            }
        }
        if let Some(r) = &self.replications {
            c.replications = match r.as_slice() {
                [one] => vec![*one; c.n_train.len()],
                many => many.to_vec(),
            };
        }
        if let Some(v) = self.n_validation {
            c.n_validation = v;
        }
        if let Some(t) = self.trees {
            c.forest.n_trees = t;
        }
        if let Some(m) = self.min_leaf {
            c.forest.min_leaf = m;
        }
        if self.mtry.is_some() {
            c.forest.mtry = self.mtry;
        }
        if let Some(s) = self.seed {
            c.master_seed = s;
        }
        c.learner_params.propensity_clip = self.propensity_clip;
        c.workers = self.workers;
        c.record_timing = self.timing;
        c.fixed_sigma = self.fixed_sigma;
        c.keep_panels = self.save_panels.is_some();
        c.validate()?;
        Ok(c)
    }

    fn execute(&self, source: DataSource) -> anyhow::Result<ExitCode> {
        let config = self.config(source)?;
        log::info!(
            "running {} cells on design {} with n_train {:?}",
            config.cells().len(),
            config.source.label(),
            config.n_train
        );
        let output = run_experiment(&config)?;
        emit(&output.table, self.out.as_deref(), self.format)?;
        if let Some(path) = &self.save_panels {
            write_panels(&output.panels, path)?;
        }
        let aborted: Vec<_> = output.table.aborted().collect();
        for row in &aborted {
            eprintln!(
                "cell {} at n_train={} aborted: {}",
                row.cell(),
                row.n_train,
                row.warnings.error.as_deref().unwrap_or("unknown error")
            );
        }
        if self.strict && !aborted.is_empty() {
            return Ok(ExitCode::FAILURE);
        }
        Ok(ExitCode::SUCCESS)
    }
}

fn emit(table: &ResultTable, out: Option<&Path>, format: Option<OutputFormat>) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            let format = format.unwrap_or_else(|| OutputFormat::from_path(path));
            write_results(table, path, format)?;
        }
        None => {
            let text = match format.unwrap_or(OutputFormat::Csv) {
                OutputFormat::Csv => results_to_csv(table),
                OutputFormat::Json => results_to_json(table),
            };
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate { design, run } => {
            if !(1..=6).contains(&design) {
                bail!("design must be between 1 and 6, got {design}");
            }
            run.execute(DataSource::Design(design))
        }
        Command::Semisynth {
            data,
            colmap,
            augment_p,
            run,
        } => {
            let columns = match &colmap {
                Some(path) => ColumnMap::from_file(path)?,
                None => ColumnMap::acic(),
            };
            let source = DataSource::SemiSynthetic {
                path: data,
                columns,
                augment_p,
            };
            run.execute(source)
        }
        Command::Metrics { panels, out, format } => {
            let saved = read_panels(&panels).with_context(|| format!("reading panels from {}", panels.display()))?;
            emit(&summarize_panels(&saved), out.as_deref(), format)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::EmitPlotdata { results, out } => {
            let table = read_results(&results)?;
            write_plot_data(&table, &out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
