//! Monte Carlo experiments: seeding, replication scheduling and aggregation.

pub mod output;

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::SimulatedDataset;
use crate::dgp::{self, ColumnMap, SemiSyntheticOptions, SemiSyntheticSampler, SimulationDesign};
use crate::error::{CateError, Result};
use crate::forest::ForestParams;
use crate::metalearners::{BaseLearner, ForestLearner, Learner, LearnerParams};
use crate::metrics::{summarize, PredictionPanel};
use crate::seed::{child_seed, data_seed, derive_seed, stream, validation_seed};
use crate::splitting::{run_procedure, ProcedureKind, ProcedureSpec};

pub use output::{
    format_sig6, plot_data_csv, read_panels, read_results, results_to_csv, results_to_json,
    write_panels, write_plot_data, write_results, OutputFormat, ResultRow, ResultTable, SavedPanel,
    Warnings, CSV_COLUMNS,
};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "CATE_WORKERS";

/// Seed-tree design code of the semi-synthetic harness.
const SEMISYNTH_CODE: u64 = 100;

/// Attempts per replication when estimated propensities degenerate.
pub const MAX_PROPENSITY_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 200 trees, scaled-down replications, 2000 validation points.
    Desk,
    /// 1000 trees, full replication schedule, 10000 validation points.
    Paper,
}

impl FromStr for Profile {
    type Err = CateError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(CateError::invalid(format!("unknown profile `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Design(u8),
    SemiSynthetic {
        path: PathBuf,
        columns: ColumnMap,
        augment_p: usize,
    },
}

impl DataSource {
    pub fn label(&self) -> String {
        match self {
            DataSource::Design(id) => id.to_string(),
            DataSource::SemiSynthetic { .. } => "semisynthetic".into(),
        }
    }

    fn code(&self) -> u64 {
        match self {
            DataSource::Design(id) => u64::from(*id),
            DataSource::SemiSynthetic { .. } => SEMISYNTH_CODE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub learners: Vec<Learner>,
    pub procedures: Vec<ProcedureKind>,
    pub n_train: Vec<usize>,
    /// Replications per entry of `n_train`.
    pub replications: Vec<usize>,
    pub n_validation: usize,
    /// Tree count, `mtry` and leaf size of every forest.
    pub forest: ForestParams,
    pub learner_params: LearnerParams,
    pub master_seed: u64,
    /// Draw one covariate correlation matrix per experiment instead of one
    /// per replication.
    pub fixed_sigma: bool,
    /// Fill the `runtime_s` column. Off by default so that output files are
    /// reproducible byte for byte.
    pub record_timing: bool,
    /// Keep every cell's prediction panel in the output.
    pub keep_panels: bool,
    /// Worker threads; `None` reads [`WORKERS_ENV`] and otherwise uses all
    /// cores.
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(source: DataSource, profile: Profile) -> Self {
        let (trees, reps, n_validation) = match profile {
            Profile::Desk => (200, vec![200, 100, 50, 25], 2000),
            Profile::Paper => (1000, vec![2000, 1000, 500, 250], 10_000),
        };
        Self {
            source,
            learners: Learner::ALL.to_vec(),
            procedures: ProcedureKind::ALL.to_vec(),
            n_train: vec![500, 2000, 8000, 32_000],
            replications: reps,
            n_validation,
            forest: ForestParams {
                n_trees: trees,
                ..ForestParams::default()
            },
            learner_params: LearnerParams::default(),
            master_seed: 20_240_101,
            fixed_sigma: false,
            record_timing: false,
            keep_panels: false,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train.len() != self.replications.len() {
            return Err(CateError::invalid(format!(
                "{} training sizes but {} replication counts",
                self.n_train.len(),
                self.replications.len()
            )));
        }
        if self.n_train.iter().chain(&self.replications).any(|&v| v == 0) || self.n_validation == 0 {
            return Err(CateError::invalid("sample sizes and replication counts must be positive"));
        }
        if self.learners.is_empty() || self.procedures.is_empty() {
            return Err(CateError::invalid("at least one learner and one procedure are required"));
        }
        if let DataSource::Design(id) = self.source {
            SimulationDesign::new(id)?;
        }
        if self.forest.n_trees == 0 || self.forest.min_leaf == 0 || self.forest.mtry == Some(0) {
            return Err(CateError::invalid("trees, leaf size and mtry must be positive"));
        }
        Ok(())
    }

    /// Distinct (learner, procedure) cells, full-sample-only learners once.
    pub fn cells(&self) -> Vec<(Learner, ProcedureKind)> {
        let mut cells = Vec::new();
        for &learner in &self.learners {
            for &procedure in &self.procedures {
                let cell = (learner, learner.effective_procedure(procedure));
                if !cells.contains(&cell) {
                    cells.push(cell);
                }
            }
        }
        cells
    }
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    /// Filled when `keep_panels` is set; aborted cells have none.
    pub panels: Vec<SavedPanel>,
}

/// Replication index across the whole experiment: sizes never share seeds.
fn global_rep(size_idx: usize, rep: usize) -> u64 {
    ((size_idx as u64) << 32) | rep as u64
}

enum Sampler {
    Synthetic {
        design: SimulationDesign,
        sigma: Option<DMatrix<f64>>,
    },
    Semi {
        data: SimulatedDataset,
        sampler: SemiSyntheticSampler,
    },
}

struct Plan<'a> {
    config: &'a ExperimentConfig,
    base: &'a dyn BaseLearner,
    sampler: Sampler,
    validation: SimulatedDataset,
    cells: Vec<(Learner, ProcedureKind)>,
}

struct CellOutcome {
    preds: Result<Vec<f64>>,
    oob_fallbacks: usize,
    propensity_redraws: usize,
    seconds: f64,
}

struct RepOutcome {
    cells: Vec<CellOutcome>,
    dgp_redraws: usize,
}

impl Plan<'_> {
    fn training(&self, n_train: usize, rep: u64, attempt: usize) -> Result<SimulatedDataset> {
        let mut seed = data_seed(self.config.master_seed, self.config.source.code(), rep);
        if attempt > 0 {
            seed = child_seed(seed, attempt as u64);
        }
        let mut rng = stream(seed);
        match &self.sampler {
            Sampler::Synthetic { design, sigma } => match sigma {
                Some(sigma) => dgp::generate_with_sigma(design, n_train, sigma, &mut rng),
                None => dgp::generate_dataset(design, n_train, &mut rng),
            },
            Sampler::Semi { data, sampler } => Ok(data.subset(&sampler.training_rows(n_train, &mut rng)?)),
        }
    }

    fn fit_cell(&self, cell: (Learner, ProcedureKind), train: &SimulatedDataset, rep: u64, attempt: usize) -> CellOutcome {
        let (learner, procedure) = cell;
        let mut seed = derive_seed(
            self.config.master_seed,
            self.config.source.code(),
            learner.code(),
            procedure.code(),
            rep,
        );
        if attempt > 0 {
            seed = child_seed(seed, attempt as u64);
        }
        let start = Instant::now();
        let spec = ProcedureSpec::new(procedure);
        let fitted = run_procedure(learner, &train.observed, &spec, self.base, &self.config.learner_params, seed);
        let (preds, oob_fallbacks) = match fitted {
            Ok(model) => (model.predict(self.validation.observed.x()), model.diagnostics.oob_fallbacks),
            Err(e) => (Err(e), 0),
        };
        CellOutcome {
            preds,
            oob_fallbacks,
            propensity_redraws: 0,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    fn replication(&self, n_train: usize, rep: u64) -> RepOutcome {
        let mut redraws = vec![0usize; self.cells.len()];
        let mut attempt = 0;
        loop {
            let train = match self.training(n_train, rep, attempt) {
                Ok(t) => t,
                Err(e) => {
                    let msg = e.to_string();
                    return RepOutcome {
                        cells: self
                            .cells
                            .iter()
                            .map(|_| CellOutcome {
                                preds: Err(CateError::invalid(format!("data generation failed: {msg}"))),
                                oob_fallbacks: 0,
                                propensity_redraws: 0,
                                seconds: 0.0,
                            })
                            .collect(),
                        dgp_redraws: 0,
                    };
                }
            };
            let mut outcomes: Vec<CellOutcome> =
                self.cells.iter().map(|&c| self.fit_cell(c, &train, rep, attempt)).collect();
            let degenerate: Vec<bool> = outcomes
                .iter()
                .map(|o| matches!(&o.preds, Err(e) if e.is_propensity_degeneracy()))
                .collect();
            if degenerate.iter().any(|&d| d) && attempt + 1 < MAX_PROPENSITY_REDRAWS {
                for (k, d) in degenerate.iter().enumerate() {
                    if *d {
                        redraws[k] += 1;
                        log::warn!(
                            "replication {rep}: {} hit a degenerate propensity; redrawing the sample",
                            self.cells[k].0
                        );
                    }
                }
                attempt += 1;
                continue;
            }
            for (o, r) in outcomes.iter_mut().zip(&redraws) {
                o.propensity_redraws = *r;
            }
            return RepOutcome {
                cells: outcomes,
                dgp_redraws: train.redraws,
            };
        }
    }
}

/// Runs the experiment with forests configured by `config.forest`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let base = ForestLearner::new(config.forest.clone());
    run_experiment_with(config, &base)
}

/// Runs the experiment with an arbitrary base learner.
pub fn run_experiment_with(config: &ExperimentConfig, base: &dyn BaseLearner) -> Result<ExperimentOutput> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.workers.or_else(workers_from_env) {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CateError::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_in_pool(config, base))
}

fn build_plan<'a>(config: &'a ExperimentConfig, base: &'a dyn BaseLearner) -> Result<Plan<'a>> {
    let code = config.source.code();
    let mut vrng = stream(validation_seed(config.master_seed, code));
    let (sampler, validation) = match &config.source {
        DataSource::Design(id) => {
            let design = SimulationDesign::new(*id)?;
            let sigma = config.fixed_sigma.then(|| design.draw_sigma(&mut vrng));
            let validation = match &sigma {
                Some(s) => dgp::generate_with_sigma(&design, config.n_validation, s, &mut vrng)?,
                None => dgp::generate_dataset(&design, config.n_validation, &mut vrng)?,
            };
            (Sampler::Synthetic { design, sigma }, validation)
        }
        DataSource::SemiSynthetic {
            path,
            columns,
            augment_p,
        } => {
            let options = SemiSyntheticOptions {
                columns: columns.clone(),
                augment_p: *augment_p,
            };
            let data = dgp::load_semisynthetic(path, &options, &mut vrng)?;
            let sampler = SemiSyntheticSampler::new(data.len(), config.n_validation, &mut vrng)?;
            let largest = config.n_train.iter().copied().max().unwrap_or(0);
            if largest > sampler.pool_size() {
                return Err(CateError::InsufficientData {
                    context: "training sample outside the validation hold-out".into(),
                    needed: largest,
                    got: sampler.pool_size(),
                });
            }
            let validation = data.subset(sampler.validation_rows());
            (Sampler::Semi { data, sampler }, validation)
        }
    };
    Ok(Plan {
        config,
        base,
        sampler,
        validation,
        cells: config.cells(),
    })
}

fn run_in_pool(config: &ExperimentConfig, base: &dyn BaseLearner) -> Result<ExperimentOutput> {
    let plan = build_plan(config, base)?;
    let design = config.source.label();
    let mut table = ResultTable::default();
    let mut panels = Vec::new();

    for (size_idx, (&n_train, &reps)) in config.n_train.iter().zip(&config.replications).enumerate() {
        log::info!("design {design}: n_train = {n_train}, {reps} replications");
        let outcomes: Vec<RepOutcome> = (0..reps)
            .into_par_iter()
            .map(|r| plan.replication(n_train, global_rep(size_idx, r)))
            .collect();

        for (k, &(learner, procedure)) in plan.cells.iter().enumerate() {
            let mut warnings = Warnings::default();
            let mut seconds = 0.0;
            let mut preds = Vec::with_capacity(reps);
            for (r, outcome) in outcomes.iter().enumerate() {
                let cell = &outcome.cells[k];
                warnings.dgp_redraws += outcome.dgp_redraws;
                warnings.oob_fallbacks += cell.oob_fallbacks;
                warnings.propensity_redraws += cell.propensity_redraws;
                seconds += cell.seconds;
                match &cell.preds {
                    Ok(p) => preds.push(p.clone()),
                    Err(e) if warnings.error.is_none() => {
                        warnings.error = Some(format!("replication {r}: {e}"));
                    }
                    Err(_) => {}
                }
            }
            let mut summary = None;
            if warnings.error.is_none() {
                let panel = PredictionPanel {
                    truth: plan.validation.tau.clone(),
                    preds,
                };
                match summarize(&panel) {
                    Ok(s) => summary = Some(s),
                    Err(e) => warnings.error = Some(e.to_string()),
                }
                if config.keep_panels && summary.is_some() {
                    panels.push(SavedPanel {
                        design: design.clone(),
                        learner,
                        procedure,
                        n_train,
                        panel,
                    });
                }
            }
            if let Some(err) = &warnings.error {
                log::error!("cell {learner}/{procedure} at n_train = {n_train} aborted: {err}");
            }
            table.rows.push(ResultRow {
                design: design.clone(),
                learner,
                procedure,
                n_train,
                replications: reps,
                summary,
                runtime_s: config.record_timing.then_some(seconds),
                warnings,
            });
        }
    }
    Ok(ExperimentOutput { table, panels })
}

/// Recomputes summaries from saved panels.
pub fn summarize_panels(panels: &[SavedPanel]) -> ResultTable {
    let rows = panels
        .iter()
        .map(|p| {
            let (summary, error) = match summarize(&p.panel) {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ResultRow {
                design: p.design.clone(),
                learner: p.learner,
                procedure: p.procedure,
                n_train: p.n_train,
                replications: p.panel.n_replications(),
                summary,
                runtime_s: None,
                warnings: Warnings {
                    error,
                    ..Warnings::default()
                },
            }
        })
        .collect();
    ResultTable { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_cells_by_default() {
        let config = ExperimentConfig::new(DataSource::Design(1), Profile::Desk);
        let cells = config.cells();
        assert_eq!(cells.len(), 12);
        assert!(cells.contains(&(Learner::S, ProcedureKind::FullSample)));
        assert!(!cells.contains(&(Learner::T, ProcedureKind::CrossFit)));
        assert!(cells.contains(&(Learner::R, ProcedureKind::SampleSplit)));
    }

    #[test]
    fn full_only_learners_map_to_full() {
        let mut config = ExperimentConfig::new(DataSource::Design(1), Profile::Desk);
        config.learners = vec![Learner::T, Learner::X];
        config.procedures = vec![ProcedureKind::CrossFit];
        assert_eq!(
            config.cells(),
            vec![(Learner::T, ProcedureKind::FullSample), (Learner::X, ProcedureKind::CrossFit)]
        );
    }

    #[test]
    fn config_validation() {
        let mut config = ExperimentConfig::new(DataSource::Design(1), Profile::Desk);
        assert!(config.validate().is_ok());
        config.replications.pop();
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::new(DataSource::Design(9), Profile::Paper);
        assert!(config.validate().is_err());
        config.source = DataSource::Design(2);
        assert_eq!(config.forest.n_trees, 1000);
        assert_eq!(config.n_validation, 10_000);
    }

    #[test]
    fn global_rep_separates_sizes() {
        assert_ne!(global_rep(0, 1), global_rep(1, 1));
        assert_eq!(global_rep(0, 7), 7);
    }
}
