//! The command-line studies: single tuning runs, the population-size sweep,
//! generic versus trajectory-specific tuning, the speed study and dataset
//! emission.
//!
//! Every command writes into its own directory under the output root, and
//! every run owns a distinct subdirectory. Each command leaves a `run.toml`
//! holding the fully resolved configuration next to its results, so a run
//! can be repeated from its output directory alone. Files are only replaced
//! when their content changes, and only with `overwrite` set.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, TrajectoryEntry};
use crate::control::Gains;
use crate::dataset::{self, cell, DatasetError, FrontRow, RunManifest, TrajectoryRecord};
use crate::moga::{tune_gains, GaConfig, GaResult, GenerationReport, Genome, MogaError};
use crate::pareto::{extract_front_with_genomes, hypervolume_2d, reference_point, ParetoError, ParetoFront, REFERENCE_MARGIN};
use crate::rollout::{self, ObjectiveVector};
use crate::trajectory::{to_joint_setpoints, JointTrajectory, TrajectoryError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trajectory `{id}`: {source}")]
    Trajectory {
        id: String,
        #[source]
        source: TrajectoryError,
    },
    #[error(transparent)]
    Moga(#[from] MogaError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Pareto(#[from] ParetoError),
    #[error("rollout of `{id}` member {member} failed: {reason}")]
    Rollout { id: String, member: usize, reason: String },
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Moga(MogaError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub overwrite: bool,
    /// Overrides the configured seed (`tune`, `emit-dataset`) or base seed
    /// (replicated studies).
    pub seed: Option<u64>,
    /// Emit one progress line per generation on stderr.
    pub verbose: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { out_dir: out_dir.into(), overwrite: false, seed: None, verbose: false }
    }
}

/// A configured trajectory converted to joint setpoints.
#[derive(Debug, Clone)]
pub struct PreparedTrajectory {
    pub entry: TrajectoryEntry,
    pub joint: JointTrajectory,
}

impl PreparedTrajectory {
    pub fn record(&self, config: &ExperimentConfig) -> TrajectoryRecord {
        TrajectoryRecord {
            id: self.entry.id.clone(),
            kind: self.entry.spec.kind(),
            duration: self.entry.spec.duration(),
            dt: config.dt,
            branch: config.branch,
            spec: Some(self.entry.spec.clone()),
        }
    }
}

pub fn prepare(config: &ExperimentConfig, entry: &TrajectoryEntry) -> Result<PreparedTrajectory> {
    let wrap = |source| ExperimentError::Trajectory { id: entry.id.clone(), source };
    let cart = entry.spec.generate(&config.model, config.dt).map_err(wrap)?;
    let joint = to_joint_setpoints(&config.model, &cart, config.branch).map_err(wrap)?;
    Ok(PreparedTrajectory { entry: entry.clone(), joint })
}

fn prepare_id(config: &ExperimentConfig, id: &str) -> Result<PreparedTrajectory> {
    prepare(config, config.trajectory(id)?)
}

/// Objectives of `gains` averaged over `trajectories`; any divergence gives the penalty.
pub fn mean_objectives(config: &ExperimentConfig, trajectories: &[PreparedTrajectory], gains: &Gains) -> ObjectiveVector {
    let mut values = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        let v = rollout::evaluate(&config.model, &t.joint, gains);
        if v.is_penalty() {
            return ObjectiveVector::PENALTY;
        }
        values.push(v);
    }
    ObjectiveVector::mean(&values)
}

fn ga_for(config: &ExperimentConfig, seed: u64) -> GaConfig {
    let mut ga = config.resolved().ga;
    ga.rng_seed = seed;
    ga
}

/// One NSGA-II run over `trajectories` (mean objectives when more than one).
pub fn run_ga(config: &ExperimentConfig, ga: &GaConfig, trajectories: &[PreparedTrajectory], label: &str, verbose: bool) -> Result<GaResult> {
    let evaluator = |g: &Gains| match trajectories {
        [single] => rollout::evaluate(&config.model, &single.joint, g),
        many => mean_objectives(config, many, g),
    };
    let progress = |r: &GenerationReport| {
        if verbose {
            eprintln!(
                "[{label}] generation {} evaluations {} front {} hypervolume {:.6e}",
                r.generation, r.evaluations, r.front_size, r.hypervolume
            );
        }
    };
    Ok(tune_gains(&evaluator, config.model.n_links(), ga, progress)?)
}

/// Re-simulates every genome of `front` on `target` and keeps the feasible,
/// non-dominated results.
pub fn reevaluate(config: &ExperimentConfig, front: &ParetoFront, target: &PreparedTrajectory) -> ParetoFront {
    let genomes = front.genomes.clone().unwrap_or_default();
    let points: Vec<ObjectiveVector> = genomes
        .par_iter()
        .map(|g| rollout::evaluate(&config.model, &target.joint, &g.decode(&config.ga.gain_bounds)))
        .collect();
    let (points, genomes): (Vec<_>, Vec<Genome>) =
        points.into_iter().zip(genomes).filter(|(p, _)| !p.is_penalty()).unzip();
    extract_front_with_genomes(&points, &genomes)
}

const HISTORY_HEADER: [&str; 4] = ["generation", "evaluations", "front_size", "hypervolume"];

fn history_rows(result: &GaResult, population_size: usize) -> Vec<Vec<String>> {
    result
        .hv_history
        .iter()
        .zip(&result.front_sizes)
        .enumerate()
        .map(|(g, (hv, size))| {
            vec![g.to_string(), (population_size * (g + 1)).to_string(), size.to_string(), cell(*hv)]
        })
        .collect()
}

/// Front rows ordered as in the front file: ascending f_acc, then f_t.
pub fn sorted_front_rows(front: &ParetoFront, config: &ExperimentConfig) -> Vec<FrontRow> {
    let mut rows = dataset::front_rows(front, &config.ga.gain_bounds);
    rows.sort_by(|a, b| {
        a.objectives
            .f_acc
            .total_cmp(&b.objectives.f_acc)
            .then(a.objectives.f_t.total_cmp(&b.objectives.f_t))
    });
    rows
}

/// Writes `front.csv`-style and `history.csv`-style files for one GA run.
fn write_run_files(dir: &Path, prefix: &str, front: &ParetoFront, result: &GaResult, ga: &GaConfig, config: &ExperimentConfig, overwrite: bool) -> Result<()> {
    let n = config.model.n_links();
    dataset::write_front(&dataset::front_rows(front, &config.ga.gain_bounds), n, &dir.join(format!("{prefix}front.csv")), overwrite)?;
    dataset::write_table(
        &dir.join(format!("{prefix}history.csv")),
        &HISTORY_HEADER,
        &history_rows(result, ga.population_size),
        overwrite,
    )?;
    Ok(())
}

/// Bookkeeping of one GA run, as recorded in `run.toml`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub label: String,
    pub seed: u64,
    pub population_size: usize,
    pub generations_run: usize,
    pub evaluations_used: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged_at_generation: Option<usize>,
    pub front_size: usize,
    pub in_run_reference: ObjectiveVector,
    pub in_run_final_hypervolume: f64,
}

impl RunStats {
    fn of(label: impl Into<String>, ga: &GaConfig, result: &GaResult) -> Self {
        Self {
            label: label.into(),
            seed: ga.rng_seed,
            population_size: ga.population_size,
            generations_run: result.generations_run,
            evaluations_used: result.evaluations_used,
            converged_at_generation: result.converged_at_generation,
            front_size: result.front.len(),
            in_run_reference: result.reference,
            in_run_final_hypervolume: result.hv_history.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Serialize)]
struct RunDocument<'a> {
    schema_version: u32,
    tool_version: &'a str,
    command: &'a str,
    seeds: Vec<u64>,
    reference_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    shared_reference: Option<ObjectiveVector>,
    runs: &'a [RunStats],
    config: ExperimentConfig,
}

fn write_run_document(dir: &Path, command: &str, config: &ExperimentConfig, seeds: Vec<u64>, shared_reference: Option<ObjectiveVector>, runs: &[RunStats], overwrite: bool) -> Result<()> {
    let doc = RunDocument {
        schema_version: dataset::SCHEMA_VERSION,
        tool_version: crate::TOOL_VERSION,
        command,
        seeds,
        reference_margin: REFERENCE_MARGIN,
        shared_reference,
        runs,
        config: config.resolved(),
    };
    let text = toml::to_string(&doc).map_err(|e| DatasetError::Manifest {
        path: dir.join("run.toml"),
        reason: e.to_string(),
    })?;
    dataset::write_atomic(&dir.join("run.toml"), text.as_bytes(), overwrite)?;
    Ok(())
}

/// The config with command-line overrides applied, so that `run.toml`
/// records what actually ran.
fn effective(config: &ExperimentConfig, opts: &RunOptions) -> ExperimentConfig {
    let mut c = config.clone();
    c.output_dir = opts.out_dir.clone();
    if let Some(seed) = opts.seed {
        c.ga.rng_seed = seed;
        c.replication.base_seed = seed;
    }
    c
}

fn seed_dir(seed: u64) -> String {
    format!("seed-{seed}")
}

/// Evenly spread indices into a list of `len` items, at most `cap` of them.
pub fn spread_indices(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(k) if k < len => {
            if k == 1 {
                return vec![0];
            }
            (0..k).map(|i| ((i * (len - 1)) as f64 / (k - 1) as f64).round() as usize).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Simulates the selected members and writes one rollout CSV plus manifest
/// each into `dir`. Returns `(member index, row, manifest, file path)`.
fn write_member_rollouts(
    config: &ExperimentConfig,
    traj: &PreparedTrajectory,
    rows: &[FrontRow],
    members: &[usize],
    seed: u64,
    dir: &Path,
    overwrite: bool,
) -> Result<Vec<(usize, RunManifest, PathBuf)>> {
    let record = traj.record(config);
    let fail = |member: usize, reason: String| ExperimentError::Rollout { id: traj.entry.id.clone(), member, reason };
    members
        .par_iter()
        .map(|&m| {
            let mut log = rollout::simulate(&config.model, &traj.joint, &rows[m].gains).map_err(|e| fail(m, e.to_string()))?;
            log.meta.seed = Some(seed);
            let objectives = ObjectiveVector::new(
                rollout::accuracy_objective(&log).map_err(|e| fail(m, e.to_string()))?,
                rollout::torque_objective(&log).map_err(|e| fail(m, e.to_string()))?,
            );
            let manifest = RunManifest::describe(&log, &config.model, record.clone(), Some(objectives));
            let path = dir.join(format!("member-{m:03}.csv"));
            let written = dataset::write_rollout(&log, &manifest, &path, overwrite)?;
            Ok((m, written, path))
        })
        .collect()
}

/// Result of [`cmd_tune`].
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub dir: PathBuf,
    pub result: GaResult,
    /// Front members in file order.
    pub rows: Vec<FrontRow>,
    pub rollout_files: Vec<PathBuf>,
}

/// Tunes gains on one trajectory and writes `front.csv`, `history.csv`,
/// `run.toml` and `rollouts/member-NNN.csv` under `tune/<id>/seed-<seed>/`.
pub fn cmd_tune(config: &ExperimentConfig, trajectory_id: &str, opts: &RunOptions) -> Result<TuneOutcome> {
    let config = &effective(config, opts);
    let traj = prepare_id(config, trajectory_id)?;
    let seed = config.ga.rng_seed;
    let ga = ga_for(config, seed);
    let dir = opts.out_dir.join("tune").join(trajectory_id).join(seed_dir(seed));
    let label = format!("tune {trajectory_id} seed {seed}");
    let result = run_ga(config, &ga, std::slice::from_ref(&traj), &label, opts.verbose)?;

    write_run_files(&dir, "", &result.front, &result, &ga, config, opts.overwrite)?;
    let rows = sorted_front_rows(&result.front, config);
    let members = spread_indices(rows.len(), config.tune.max_rollouts);
    let written = write_member_rollouts(config, &traj, &rows, &members, seed, &dir.join("rollouts"), opts.overwrite)?;
    let stats = [RunStats::of(label, &ga, &result)];
    write_run_document(&dir, "tune", config, vec![seed], None, &stats, opts.overwrite)?;
    Ok(TuneOutcome { dir, result, rows, rollout_files: written.into_iter().map(|(_, _, p)| p).collect() })
}

/// One row of the population sweep summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PopSweepRow {
    pub population_size: usize,
    pub seed: u64,
    /// Evaluations spent when convergence fired, or the full budget otherwise.
    pub evaluations_to_convergence: usize,
    pub converged: bool,
    pub final_hypervolume: f64,
}

pub const POPSWEEP_HEADER: [&str; 5] =
    ["population_size", "seed", "evaluations_to_convergence", "final_hypervolume", "converged"];

#[derive(Debug, Clone)]
pub struct PopSweepOutcome {
    pub rows: Vec<PopSweepRow>,
    pub reference: ObjectiveVector,
    pub summary_path: PathBuf,
}

/// Full tuning runs for every population size and seed, scored against one
/// reference point shared by all of them.
pub fn cmd_popsweep(config: &ExperimentConfig, opts: &RunOptions) -> Result<PopSweepOutcome> {
    let config = &effective(config, opts);
    config.check_popsweep()?;
    let traj = prepare_id(config, &config.popsweep.trajectory)?;
    let root = opts.out_dir.join("popsweep");
    let seeds = config.replication.seeds();
    let jobs: Vec<(usize, u64)> = config
        .popsweep
        .sizes
        .iter()
        .flat_map(|&size| seeds.iter().map(move |&seed| (size, seed)))
        .collect();

    let runs: Vec<(GaConfig, GaResult)> = jobs
        .par_iter()
        .map(|&(size, seed)| {
            let mut ga = ga_for(config, seed);
            ga.population_size = size;
            let label = format!("popsweep pop {size} seed {seed}");
            let result = run_ga(config, &ga, std::slice::from_ref(&traj), &label, opts.verbose)?;
            let dir = root.join(format!("pop-{size}")).join(seed_dir(seed));
            write_run_files(&dir, "", &result.front, &result, &ga, config, opts.overwrite)?;
            Ok((ga, result))
        })
        .collect::<Result<_>>()?;

    let reference = reference_point(runs.iter().map(|(_, r)| r.front.points.as_slice()))?;
    let rows: Vec<PopSweepRow> = runs
        .iter()
        .map(|(ga, r)| PopSweepRow {
            population_size: ga.population_size,
            seed: ga.rng_seed,
            evaluations_to_convergence: r.evaluations_used,
            converged: r.converged_at_generation.is_some(),
            final_hypervolume: hypervolume_2d(&r.front.points, reference),
        })
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.population_size.to_string(),
                r.seed.to_string(),
                r.evaluations_to_convergence.to_string(),
                cell(r.final_hypervolume),
                r.converged.to_string(),
            ]
        })
        .collect();
    let summary_path = root.join("summary.csv");
    dataset::write_table(&summary_path, &POPSWEEP_HEADER, &body, opts.overwrite)?;
    let stats: Vec<RunStats> = runs
        .iter()
        .map(|(ga, r)| RunStats::of(format!("pop {} seed {}", ga.population_size, ga.rng_seed), ga, r))
        .collect();
    write_run_document(&root, "popsweep", config, seeds, Some(reference), &stats, opts.overwrite)?;
    Ok(PopSweepOutcome { rows, reference, summary_path })
}

/// Per-seed comparison of the two controllers on the target trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericVsSpecificRow {
    pub seed: u64,
    pub specific_hypervolume: f64,
    pub generic_hypervolume: f64,
    pub specific_best_accuracy: f64,
    pub generic_best_accuracy: f64,
    pub specific_front_size: usize,
    pub generic_front_size: usize,
}

pub const GENERIC_VS_SPECIFIC_HEADER: [&str; 8] = [
    "seed",
    "specific_hypervolume",
    "generic_hypervolume",
    "specific_best_accuracy",
    "generic_best_accuracy",
    "specific_front_size",
    "generic_front_size",
    "specific_wins",
];

#[derive(Debug, Clone)]
pub struct GenericVsSpecificOutcome {
    pub rows: Vec<GenericVsSpecificRow>,
    pub reference: ObjectiveVector,
    /// Per seed: (specific front, generic front re-evaluated on the target).
    pub fronts: Vec<(ParetoFront, ParetoFront)>,
    pub summary_path: PathBuf,
}

/// For each seed, tunes one controller on the mean objectives of the
/// training set and one on the target alone, then scores both on the target.
///
/// `generic_front.csv` holds the generic genomes re-simulated on the target;
/// `generic_training_front.csv` keeps the front as tuned.
pub fn cmd_generic_vs_specific(config: &ExperimentConfig, opts: &RunOptions) -> Result<GenericVsSpecificOutcome> {
    let config = &effective(config, opts);
    config.check_generic_vs_specific()?;
    let resolved = config.resolved();
    let settings = &resolved.generic_vs_specific;
    let target = prepare_id(config, &settings.target)?;
    let training: Vec<PreparedTrajectory> =
        settings.training.iter().map(|id| prepare_id(config, id)).collect::<Result<_>>()?;
    let root = opts.out_dir.join("generic-vs-specific");
    let seeds = config.replication.seeds();

    type SeedRun = (ParetoFront, ParetoFront, Vec<RunStats>);
    let per_seed: Vec<SeedRun> = seeds
        .par_iter()
        .map(|&seed| {
            let ga = ga_for(config, seed);
            let dir = root.join(seed_dir(seed));
            let generic_label = format!("generic seed {seed}");
            let generic = run_ga(config, &ga, &training, &generic_label, opts.verbose)?;
            let specific_label = format!("specific seed {seed}");
            let specific = run_ga(config, &ga, std::slice::from_ref(&target), &specific_label, opts.verbose)?;
            let transferred = reevaluate(config, &generic.front, &target);

            write_run_files(&dir, "specific_", &specific.front, &specific, &ga, config, opts.overwrite)?;
            write_run_files(&dir, "generic_training_", &generic.front, &generic, &ga, config, opts.overwrite)?;
            let n = config.model.n_links();
            dataset::write_front(
                &dataset::front_rows(&transferred, &config.ga.gain_bounds),
                n,
                &dir.join("generic_front.csv"),
                opts.overwrite,
            )?;
            let stats = vec![RunStats::of(generic_label, &ga, &generic), RunStats::of(specific_label, &ga, &specific)];
            Ok((specific.front, transferred, stats))
        })
        .collect::<Result<_>>()?;

    let reference = reference_point(per_seed.iter().flat_map(|(s, g, _)| [s.points.as_slice(), g.points.as_slice()]))?;
    let best = |f: &ParetoFront| f.best_accuracy().unwrap_or(f64::NAN);
    let rows: Vec<GenericVsSpecificRow> = seeds
        .iter()
        .zip(&per_seed)
        .map(|(&seed, (s, g, _))| GenericVsSpecificRow {
            seed,
            specific_hypervolume: hypervolume_2d(&s.points, reference),
            generic_hypervolume: hypervolume_2d(&g.points, reference),
            specific_best_accuracy: best(s),
            generic_best_accuracy: best(g),
            specific_front_size: s.len(),
            generic_front_size: g.len(),
        })
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                cell(r.specific_hypervolume),
                cell(r.generic_hypervolume),
                cell(r.specific_best_accuracy),
                cell(r.generic_best_accuracy),
                r.specific_front_size.to_string(),
                r.generic_front_size.to_string(),
                (r.specific_hypervolume >= r.generic_hypervolume).to_string(),
            ]
        })
        .collect();
    let summary_path = root.join("summary.csv");
    dataset::write_table(&summary_path, &GENERIC_VS_SPECIFIC_HEADER, &body, opts.overwrite)?;
    let stats: Vec<RunStats> = per_seed.iter().flat_map(|(_, _, s)| s.iter().cloned()).collect();
    write_run_document(&root, "generic-vs-specific", config, seeds, Some(reference), &stats, opts.overwrite)?;
    let fronts = per_seed.into_iter().map(|(s, g, _)| (s, g)).collect();
    Ok(GenericVsSpecificOutcome { rows, reference, fronts, summary_path })
}

/// One cell of the speed-study matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedCell {
    pub seed: u64,
    pub tuned_duration: f64,
    pub evaluated_duration: f64,
    pub hypervolume: f64,
    /// Smallest f_acc on the cell's front; NaN when every transferred gain diverged.
    pub best_accuracy: f64,
    pub front_size: usize,
}

pub const SPEED_HEADER: [&str; 6] =
    ["seed", "tuned_duration", "evaluated_duration", "hypervolume", "best_accuracy", "front_size"];

#[derive(Debug, Clone)]
pub struct SpeedStudyOutcome {
    pub cells: Vec<SpeedCell>,
    pub reference: ObjectiveVector,
    pub matrix_path: PathBuf,
}

impl SpeedStudyOutcome {
    pub fn cell(&self, seed: u64, tuned: f64, evaluated: f64) -> Option<&SpeedCell> {
        self.cells
            .iter()
            .find(|c| c.seed == seed && c.tuned_duration == tuned && c.evaluated_duration == evaluated)
    }
}

fn duration_label(d: f64) -> String {
    format!("{d}s")
}

/// Tunes on every duration of one spiral shape and cross-evaluates every
/// tuned front on every duration.
pub fn cmd_speed_study(config: &ExperimentConfig, opts: &RunOptions) -> Result<SpeedStudyOutcome> {
    let config = &effective(config, opts);
    config.check_speed_study()?;
    let base = config.trajectory(&config.speed_study.trajectory)?;
    let durations = config.speed_study.durations.clone();
    let variants: Vec<PreparedTrajectory> = durations
        .iter()
        .map(|&d| {
            let entry = TrajectoryEntry { id: format!("{}-{}", base.id, duration_label(d)), spec: base.spec.with_duration(d) };
            prepare(config, &entry)
        })
        .collect::<Result<_>>()?;
    let root = opts.out_dir.join("speed-study");
    let seeds = config.replication.seeds();
    let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (0..durations.len()).map(move |i| (s, i))).collect();

    // Per (seed, tuned duration): the front evaluated on every duration.
    type TunedRun = (Vec<ParetoFront>, RunStats);
    let tuned: Vec<TunedRun> = jobs
        .par_iter()
        .map(|&(seed, i)| {
            let ga = ga_for(config, seed);
            let label = format!("speed seed {seed} tuned {}", duration_label(durations[i]));
            let result = run_ga(config, &ga, std::slice::from_ref(&variants[i]), &label, opts.verbose)?;
            let dir = root.join(seed_dir(seed)).join(format!("tuned-{}", duration_label(durations[i])));
            write_run_files(&dir, "", &result.front, &result, &ga, config, opts.overwrite)?;
            let evaluated = variants
                .iter()
                .enumerate()
                .map(|(j, v)| if j == i { result.front.clone() } else { reevaluate(config, &result.front, v) })
                .collect();
            Ok((evaluated, RunStats::of(label, &ga, &result)))
        })
        .collect::<Result<_>>()?;

    let reference = reference_point(tuned.iter().flat_map(|(fronts, _)| fronts.iter().map(|f| f.points.as_slice())))?;
    let mut cells = Vec::with_capacity(jobs.len() * durations.len());
    for (&(seed, i), (fronts, _)) in jobs.iter().zip(&tuned) {
        for (j, front) in fronts.iter().enumerate() {
            cells.push(SpeedCell {
                seed,
                tuned_duration: durations[i],
                evaluated_duration: durations[j],
                hypervolume: hypervolume_2d(&front.points, reference),
                best_accuracy: front.best_accuracy().unwrap_or(f64::NAN),
                front_size: front.len(),
            });
        }
    }
    let body: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.seed.to_string(),
                cell(c.tuned_duration),
                cell(c.evaluated_duration),
                cell(c.hypervolume),
                cell(c.best_accuracy),
                c.front_size.to_string(),
            ]
        })
        .collect();
    let matrix_path = root.join("matrix.csv");
    dataset::write_table(&matrix_path, &SPEED_HEADER, &body, opts.overwrite)?;
    let stats: Vec<RunStats> = tuned.into_iter().map(|(_, s)| s).collect();
    write_run_document(&root, "speed-study", config, seeds, Some(reference), &stats, opts.overwrite)?;
    Ok(SpeedStudyOutcome { cells, reference, matrix_path })
}

/// One line of the dataset index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow {
    pub trajectory: String,
    pub member: usize,
    pub gains: Gains,
    pub objectives: ObjectiveVector,
    /// Path relative to the dataset directory.
    pub file: String,
    pub sha256: String,
}

pub fn index_header(n: usize) -> Vec<String> {
    let mut h = vec!["trajectory".to_string(), "kind".into(), "duration".into(), "member".into()];
    h.extend((1..=n).map(|j| format!("kp_{j}")));
    h.extend((1..=n).map(|j| format!("kd_{j}")));
    h.extend(["f_acc", "f_t", "file", "sha256"].map(String::from));
    h
}

#[derive(Debug, Clone)]
pub struct DatasetOutcome {
    pub dir: PathBuf,
    pub rows: Vec<IndexRow>,
    pub index_path: PathBuf,
}

/// Tunes every selected trajectory (reusing `tune` outputs when they are
/// already on disk with identical content) and writes one rollout per
/// selected front member under `dataset/<id>/`, plus `dataset/index.csv`.
pub fn cmd_emit_dataset(config: &ExperimentConfig, opts: &RunOptions) -> Result<DatasetOutcome> {
    let config = &effective(config, opts);
    config.check_dataset()?;
    let resolved = config.resolved();
    let seed = config.ga.rng_seed;
    let dir = opts.out_dir.join("dataset");
    let mut rows = Vec::new();
    let mut stats = Vec::new();
    for id in &resolved.dataset.trajectories {
        let tuned = cmd_tune(config, id, opts)?;
        let traj = prepare_id(config, id)?;
        let members = spread_indices(tuned.rows.len(), config.dataset.max_members);
        let written = write_member_rollouts(config, &traj, &tuned.rows, &members, seed, &dir.join(id), opts.overwrite)?;
        for (m, manifest, path) in written {
            let file = path.strip_prefix(&dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            rows.push(IndexRow {
                trajectory: id.clone(),
                member: m,
                gains: tuned.rows[m].gains.clone(),
                objectives: manifest.objectives.unwrap_or(tuned.rows[m].objectives),
                file,
                sha256: manifest.csv_sha256,
            });
        }
        let ga = ga_for(config, seed);
        stats.push(RunStats::of(format!("dataset {id} seed {seed}"), &ga, &tuned.result));
    }
    let n = config.model.n_links();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let spec = &config.trajectory(&r.trajectory).expect("checked above").spec;
            let mut line = vec![r.trajectory.clone(), spec.kind().to_string(), cell(spec.duration()), r.member.to_string()];
            line.extend(r.gains.kp.iter().chain(&r.gains.kd).map(|v| cell(*v)));
            line.extend([cell(r.objectives.f_acc), cell(r.objectives.f_t), r.file.clone(), r.sha256.clone()]);
            line
        })
        .collect();
    let header = index_header(n);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let index_path = dir.join("index.csv");
    dataset::write_table(&index_path, &header, &body, opts.overwrite)?;
    write_run_document(&dir, "emit-dataset", config, vec![seed], None, &stats, opts.overwrite)?;
    Ok(DatasetOutcome { dir, rows, index_path })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_indices_cover_both_ends() {
        assert_eq!(spread_indices(5, None), vec![0, 1, 2, 3, 4]);
        assert_eq!(spread_indices(5, Some(9)), vec![0, 1, 2, 3, 4]);
        assert_eq!(spread_indices(5, Some(3)), vec![0, 2, 4]);
        assert_eq!(spread_indices(10, Some(4)), vec![0, 3, 6, 9]);
        assert_eq!(spread_indices(7, Some(1)), vec![0]);
        assert!(spread_indices(0, Some(3)).is_empty());
    }

    #[test]
    fn history_rows_count_evaluations_per_generation() {
        let result = GaResult {
            front: ParetoFront::default(),
            evaluations_used: 24,
            hv_history: vec![1.0, 1.5, 2.0],
            converged_at_generation: None,
            generations_run: 2,
            reference: ObjectiveVector::new(1.0, 1.0),
            front_sizes: vec![3, 4, 4],
        };
        let rows = history_rows(&result, 8);
        assert_eq!(rows[2], vec!["2", "24", "4", "2"]);
    }

    #[test]
    fn mean_objectives_penalizes_any_divergence() {
        let mut config = ExperimentConfig::default();
        config.trajectories[0].spec = config.trajectories[0].spec.with_duration(0.2);
        config.trajectories[1].spec = config.trajectories[1].spec.with_duration(0.2);
        let trajs: Vec<_> = config.trajectories[..2].iter().map(|e| prepare(&config, e).unwrap()).collect();
        let gains = Gains::new(vec![200.0, 100.0], vec![10.0, 5.0]).unwrap();
        let each: Vec<_> = trajs.iter().map(|t| rollout::evaluate(&config.model, &t.joint, &gains)).collect();
        let mean = mean_objectives(&config, &trajs, &gains);
        assert!((mean.f_acc - (each[0].f_acc + each[1].f_acc) / 2.0).abs() < 1e-15);
        assert!((mean.f_t - (each[0].f_t + each[1].f_t) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn config_errors_map_to_exit_code_two() {
        let e = ExperimentError::from(ConfigError::Invalid("x".into()));
        assert_eq!(e.exit_code(), 2);
        let e = ExperimentError::from(ParetoError::NoPoints);
        assert_eq!(e.exit_code(), 1);
    }
}
