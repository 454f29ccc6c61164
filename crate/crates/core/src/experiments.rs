//! Experiment suites: the model-selection grid, cross-benchmark matrices,
//! pretraining / freezing transfer, sequence labeling and layer-weight
//! summaries.
//!
//! Runs are independent and may execute in parallel; results are assembled
//! in plan order so every table is a pure function of the inputs and seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::{DatasetSplits, Sample, TaskKind};
use crate::error::{Error, Result};
use crate::metrics::{filter_runs, Metrics};
use crate::model::{Architecture, Model};
use crate::probe::{Aggregation, Comparison, ProbeSpec, MAX_EXTRACTOR_DEPTH};
use crate::tagging::TagScheme;
use crate::trainer::{evaluate, evaluate_into, pretrain_then_finetune, train, Objective, RunReport, Stage, TrainConfig};

/// The list of probe variants to train, each `runs_per_cell` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPlan {
    pub specs: Vec<ProbeSpec>,
    pub runs_per_cell: usize,
    pub seed_base: u64,
}

impl GridPlan {
    /// Every legal (depth, comparison, aggregation) combination for one
    /// output: 2·8·5 flattened plus 2·5·5 ensemble cells.
    pub fn default_plan(seed_base: u64) -> Self {
        let mut specs = Vec::new();
        for depth in 1..=MAX_EXTRACTOR_DEPTH {
            for aggregation in Aggregation::ALL {
                for comparison in Comparison::ALL {
                    if let Ok(spec) = ProbeSpec::new(depth, comparison, aggregation, 1) {
                        specs.push(spec);
                    }
                }
            }
        }
        Self {
            specs,
            runs_per_cell: 10,
            seed_base,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.specs.len()
    }
}

/// Seed of run `run_index` in a suite.
pub fn run_seed(seed_base: u64, run_index: usize) -> u64 {
    seed_base + run_index as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
    pub min: f64,
}

pub fn summary_stats(values: &[f64]) -> Option<SummaryStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    Some(SummaryStats {
        count: values.len(),
        mean,
        median,
        std: var.sqrt(),
        max: sorted[sorted.len() - 1],
        min: sorted[0],
    })
}

/// Outcome of the runs of one architecture on one training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub architecture: Architecture,
    pub reports: Vec<RunReport>,
    /// Error messages of runs that aborted.
    pub failures: Vec<String>,
}

impl CellResult {
    pub fn label(&self) -> String {
        self.architecture.label()
    }

    pub fn failed(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn filtered_out(&self) -> usize {
        filter_runs(&self.reports).filtered_out
    }

    pub fn kept(&self) -> usize {
        filter_runs(&self.reports).kept.len()
    }

    /// Mean test metric over kept runs; `None` when no run survived.
    pub fn mean_metric(&self, dataset: &str, f: impl Fn(&Metrics) -> Option<f64>) -> Option<f64> {
        filter_runs(&self.reports).mean(|r| r.evaluations.get(dataset).and_then(&f))
    }
}

struct Job<'a> {
    cell: usize,
    architecture: Architecture,
    seed: u64,
    splits: &'a DatasetSplits,
}

fn objective_for(task: TaskKind) -> Result<Objective> {
    match task {
        TaskKind::TextClassification => Ok(Objective::Classification),
        TaskKind::SequenceLabeling => Err(Error::Unsupported(
            "this suite runs on text classification data; use the sequence labeling experiment".into(),
        )),
    }
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Trains one seeded run and evaluates it on the test splits of `tests`.
pub fn train_run(
    architecture: Architecture,
    splits: &DatasetSplits,
    tests: &[&DatasetSplits],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, RunReport)> {
    let objective = objective_for(splits.task)?;
    let model = Model::new(architecture, splits.num_layers, splits.hidden_dim, false, seed)?;
    let cfg = TrainConfig { seed, ..*cfg };
    let (model, mut report) = train(model, &splits.train, &splits.val, objective, &cfg)?;
    let named: Vec<(&str, &[Sample])> = tests.iter().map(|t| (t.name.as_str(), t.test.as_slice())).collect();
    evaluate_into(&mut report, &model, objective, &named)?;
    Ok((model, report))
}

fn run_cells(
    architectures: &[Architecture],
    train_sets: &[&DatasetSplits],
    tests: &[&DatasetSplits],
    runs: usize,
    seed_base: u64,
    cfg: &TrainConfig,
    parallelism: usize,
) -> Result<Vec<CellResult>> {
    let mut jobs = Vec::new();
    for splits in train_sets {
        for arch in architectures {
            let cell = jobs.len() / runs.max(1);
            for r in 0..runs {
                jobs.push(Job {
                    cell,
                    architecture: *arch,
                    seed: run_seed(seed_base, r),
                    splits,
                });
            }
        }
    }
    let outcomes: Vec<(usize, Result<RunReport>)> = pool(parallelism)?.install(|| {
        jobs.par_iter()
            .map(|job| (job.cell, train_run(job.architecture, job.splits, tests, cfg, job.seed).map(|(_, r)| r)))
            .collect()
    });
    let mut cells: Vec<CellResult> = train_sets
        .iter()
        .flat_map(|_| architectures.iter())
        .map(|a| CellResult {
            architecture: *a,
            reports: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for (cell, outcome) in outcomes {
        match outcome {
            Ok(report) => cells[cell].reports.push(report),
            Err(e) => cells[cell].failures.push(e.to_string()),
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// `depth`, `aggregation` or `comparison`.
    pub factor: String,
    pub level: String,
    pub stats: Option<SummaryStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub dataset: String,
    pub cells: Vec<CellResult>,
    pub summaries: Vec<SummaryRow>,
}

impl GridReport {
    pub fn cell_mean_f1(&self, cell: &CellResult) -> Option<f64> {
        cell.mean_metric(&self.dataset, |m| Some(m.f1))
    }

    pub fn all_cells_reported(&self) -> bool {
        self.cells.iter().all(|c| !c.failed())
    }

    pub fn cells_tsv(&self) -> String {
        let mut out = String::from("depth\tcomparison\taggregation\tmean_f1\tkept\tfiltered_out\tfailed_runs\n");
        for cell in &self.cells {
            let Architecture::Probe(spec) = cell.architecture else { continue };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                spec.depth,
                spec.comparison.name(),
                spec.aggregation.name(),
                fmt_opt(self.cell_mean_f1(cell)),
                cell.kept(),
                cell.filtered_out(),
                cell.failures.len()
            );
        }
        out
    }

    pub fn summary_tsv(&self) -> String {
        let mut out = String::from("# std is the population standard deviation over cell mean F1 values\n");
        out.push_str("factor\tlevel\tcells\tmean\tmedian\tstd\tmax\tmin\n");
        for row in &self.summaries {
            match row.stats {
                Some(s) => {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                        row.factor, row.level, s.count, s.mean, s.median, s.std, s.max, s.min
                    );
                }
                None => {
                    let _ = writeln!(out, "{}\t{}\t0\tno surviving runs\t\t\t\t", row.factor, row.level);
                }
            }
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "no surviving runs".to_string(), |v| format!("{v:.4}"))
}

fn grid_summaries(report: &GridReport) -> Vec<SummaryRow> {
    let specs: Vec<(ProbeSpec, Option<f64>)> = report
        .cells
        .iter()
        .filter_map(|c| match c.architecture {
            Architecture::Probe(s) => Some((s, report.cell_mean_f1(c))),
            Architecture::Baseline(_) => None,
        })
        .collect();
    let mut rows = Vec::new();
    let mut push = |factor: &str, level: String, pick: &dyn Fn(&ProbeSpec) -> bool| {
        let values: Vec<f64> = specs.iter().filter(|(s, _)| pick(s)).filter_map(|(_, v)| *v).collect();
        rows.push(SummaryRow {
            factor: factor.to_string(),
            level,
            stats: summary_stats(&values),
        });
    };
    for depth in 1..=MAX_EXTRACTOR_DEPTH {
        if specs.iter().any(|(s, _)| s.depth == depth) {
            push("depth", depth.to_string(), &|s| s.depth == depth);
        }
    }
    for agg in Aggregation::ALL {
        if specs.iter().any(|(s, _)| s.aggregation == agg) {
            push("aggregation", agg.name().to_string(), &|s| s.aggregation == agg);
        }
    }
    for cmp in Comparison::ALL {
        if specs.iter().any(|(s, _)| s.comparison == cmp) {
            push("comparison", cmp.name().to_string(), &|s| s.comparison == cmp);
        }
    }
    rows
}

/// Trains every cell of `plan` on `splits` and summarizes test F1.
pub fn run_grid(plan: &GridPlan, splits: &DatasetSplits, cfg: &TrainConfig, parallelism: usize) -> Result<GridReport> {
    let archs: Vec<Architecture> = plan.specs.iter().map(|s| Architecture::Probe(*s)).collect();
    let cells = run_cells(&archs, &[splits], &[splits], plan.runs_per_cell, plan.seed_base, cfg, parallelism)?;
    let mut report = GridReport {
        dataset: splits.name.clone(),
        cells,
        summaries: Vec::new(),
    };
    report.summaries = grid_summaries(&report);
    Ok(report)
}

/// Train-on-row / test-on-column matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossBenchReport {
    pub datasets: Vec<String>,
    /// One cell per training dataset; each holds runs evaluated on every test split.
    pub rows: Vec<CellResult>,
}

impl CrossBenchReport {
    pub fn f1(&self, train: usize, test: usize) -> Option<f64> {
        self.rows[train].mean_metric(&self.datasets[test], |m| Some(m.f1))
    }

    pub fn improvement(&self, train: usize, test: usize) -> Option<f64> {
        self.rows[train].mean_metric(&self.datasets[test], |m| m.fake_fact_improvement)
    }

    pub fn f1_matrix(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.datasets.len()).map(|i| (0..self.datasets.len()).map(|j| self.f1(i, j)).collect()).collect()
    }

    pub fn improvement_matrix(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.datasets.len())
            .map(|i| (0..self.datasets.len()).map(|j| self.improvement(i, j)).collect())
            .collect()
    }

    pub fn all_cells_reported(&self) -> bool {
        self.rows.iter().all(|c| !c.failed())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("trained_on\ttested_on\tmean_f1\tmean_fake_fact_improvement_pp\tkept\tfiltered_out\n");
        for (i, row) in self.rows.iter().enumerate() {
            for j in 0..self.datasets.len() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    self.datasets[i],
                    self.datasets[j],
                    fmt_opt(self.f1(i, j)),
                    self.improvement(i, j).map_or_else(|| "no surviving runs".to_string(), |v| format!("{v:.2}")),
                    row.kept(),
                    row.filtered_out()
                );
            }
        }
        out
    }
}

fn check_compatible(datasets: &[&DatasetSplits]) -> Result<()> {
    let first = datasets[0];
    for d in datasets {
        if (d.num_layers, d.hidden_dim) != (first.num_layers, first.hidden_dim) {
            return Err(Error::DimensionMismatch {
                context: "datasets from different models",
                expected: first.num_layers * first.hidden_dim,
                got: d.num_layers * d.hidden_dim,
            });
        }
        if d.task != first.task {
            return Err(Error::InvalidConfig("datasets mix task kinds".into()));
        }
    }
    for (i, d) in datasets.iter().enumerate() {
        if datasets[..i].iter().any(|e| e.name == d.name) {
            return Err(Error::InvalidConfig(format!("dataset name {:?} appears twice", d.name)));
        }
    }
    Ok(())
}

/// Trains `runs` runs per dataset and evaluates each on every test split.
pub fn cross_benchmark(
    architecture: Architecture,
    datasets: &[&DatasetSplits],
    runs: usize,
    seed_base: u64,
    cfg: &TrainConfig,
    parallelism: usize,
) -> Result<CrossBenchReport> {
    if datasets.len() < 2 {
        return Err(Error::InvalidConfig("cross-benchmark evaluation needs at least two datasets".into()));
    }
    check_compatible(datasets)?;
    let rows = run_cells(&[architecture], datasets, datasets, runs, seed_base, cfg, parallelism)?;
    Ok(CrossBenchReport {
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRun {
    pub seed: u64,
    pub stages: Vec<RunReport>,
    /// Test metrics of the final model, keyed by dataset.
    pub evaluations: std::collections::BTreeMap<String, Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub pretrain: String,
    pub finetune: String,
    pub frozen_aggregation: bool,
    pub runs: Vec<TransferRun>,
    pub failures: Vec<String>,
}

impl TransferReport {
    /// Mean F1 on `dataset` over runs whose final stage kept a positive
    /// validation F1.
    pub fn mean_f1(&self, dataset: &str) -> Option<f64> {
        let values: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.stages.last().is_some_and(|s| !s.filtered))
            .filter_map(|r| r.evaluations.get(dataset).map(|m| m.f1))
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    pub fn to_tsv(&self) -> String {
        let kept = self.runs.iter().filter(|r| r.stages.last().is_some_and(|s| !s.filtered)).count();
        let mut out = String::from("pretrained_on\tfinetuned_on\tfrozen\ttested_on\tmean_f1\tkept\tfiltered_out\n");
        for name in [&self.pretrain, &self.finetune] {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                self.pretrain,
                self.finetune,
                self.frozen_aggregation,
                name,
                fmt_opt(self.mean_f1(name)),
                kept,
                self.runs.len() - kept
            );
        }
        out
    }
}

/// Pretrains on `first`, finetunes on `second` (optionally freezing the
/// aggregation head) and evaluates on both test splits.
#[allow(clippy::too_many_arguments)]
pub fn transfer(
    architecture: Architecture,
    first: &DatasetSplits,
    second: &DatasetSplits,
    runs: usize,
    seed_base: u64,
    cfg: &TrainConfig,
    freeze_aggregation: bool,
    parallelism: usize,
) -> Result<TransferReport> {
    check_compatible(&[first, second])?;
    let objective = objective_for(first.task)?;
    let outcomes: Vec<Result<TransferRun>> = pool(parallelism)?.install(|| {
        (0..runs)
            .into_par_iter()
            .map(|r| {
                let seed = run_seed(seed_base, r);
                let model = Model::new(architecture, first.num_layers, first.hidden_dim, false, seed)?;
                let cfg = TrainConfig { seed, ..*cfg };
                let (model, stages) = pretrain_then_finetune(
                    model,
                    Stage {
                        train: &first.train,
                        val: &first.val,
                    },
                    Stage {
                        train: &second.train,
                        val: &second.val,
                    },
                    objective,
                    &cfg,
                    freeze_aggregation,
                )?;
                let mut evaluations = std::collections::BTreeMap::new();
                for d in [first, second] {
                    if !d.test.is_empty() {
                        evaluations.insert(d.name.clone(), evaluate(&model, &d.test, objective)?);
                    }
                }
                Ok(TransferRun { seed, stages, evaluations })
            })
            .collect()
    });
    let mut report = TransferReport {
        pretrain: first.name.clone(),
        finetune: second.name.clone(),
        frozen_aggregation: freeze_aggregation,
        runs: Vec::new(),
        failures: Vec::new(),
    };
    for o in outcomes {
        match o {
            Ok(run) => report.runs.push(run),
            Err(e) => report.failures.push(e.to_string()),
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeightSummary {
    /// Signed sum of the head's first-map weights attached to each layer row.
    pub signed: Vec<f64>,
    /// Same grouping, summing absolute values.
    pub absolute: Vec<f64>,
}

impl LayerWeightSummary {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("layer\tsigned_sum\tabsolute_sum\n");
        for (l, (s, a)) in self.signed.iter().zip(&self.absolute).enumerate() {
            let _ = writeln!(out, "{l}\t{s}\t{a}");
        }
        out
    }
}

/// Groups the flattened head input by originating layer row and sums the
/// first-map weights of each group.
pub fn layer_weight_summary(model: &Model) -> Result<LayerWeightSummary> {
    let probe = model
        .probe_arch()
        .ok_or_else(|| Error::Unsupported("layer weight summary needs a probe, not a baseline".into()))?;
    let head = probe
        .flat_head()
        .ok_or_else(|| Error::Unsupported("layer weight summary needs a flattened aggregation head".into()))?;
    let (rows, cols) = probe.comparison_shape();
    let first = head.maps()[0];
    let weights = first.weight(model.params().values());
    let mut signed = vec![0.0; rows];
    let mut absolute = vec![0.0; rows];
    for o in 0..first.output {
        for (pos, w) in weights[o * first.input..(o + 1) * first.input].iter().enumerate() {
            signed[pos / cols] += w;
            absolute[pos / cols] += w.abs();
        }
    }
    Ok(LayerWeightSummary { signed, absolute })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    Greedy,
    Crf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub scheme: TagScheme,
    pub decoder: Decoder,
    pub run: RunReport,
    /// Token-level metrics on the test split.
    pub test: Metrics,
}

/// Single training run of a tagging model, evaluated token-wise on the test
/// split. The architecture's output count is set to the scheme's alphabet.
pub fn sequence_experiment(
    architecture: Architecture,
    splits: &DatasetSplits,
    scheme: TagScheme,
    decoder: Decoder,
    cfg: &TrainConfig,
) -> Result<(Model, SequenceReport)> {
    if splits.task != TaskKind::SequenceLabeling {
        return Err(Error::Unsupported("sequence labeling needs per-token labels".into()));
    }
    let architecture = architecture.with_outputs(scheme.size());
    let model = Model::new(architecture, splits.num_layers, splits.hidden_dim, decoder == Decoder::Crf, cfg.seed)?;
    let objective = Objective::Tagging(scheme);
    let (model, run) = train(model, &splits.train, &splits.val, objective, cfg)?;
    let test = if splits.test.is_empty() {
        Metrics::default()
    } else {
        evaluate(&model, &splits.test, objective)?
    };
    Ok((
        model,
        SequenceReport {
            scheme,
            decoder,
            run,
            test,
        },
    ))
}

/// Writes each report as pretty JSON into `dir/<prefix>_<index>.json`.
pub fn write_reports(dir: impl AsRef<Path>, prefix: &str, reports: &[RunReport]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, r) in reports.iter().enumerate() {
        r.write(dir.join(format!("{prefix}_{i:03}.json")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamGroup;

    #[test]
    fn default_plan_has_130_legal_cells() {
        let plan = GridPlan::default_plan(0);
        assert_eq!(plan.cell_count(), 130);
        assert!(plan.specs.iter().all(|s| s.validate().is_ok()));
        let ensembles = plan.specs.iter().filter(|s| s.aggregation.is_ensemble()).count();
        assert_eq!(ensembles, 2 * 5 * 5);
    }

    #[test]
    fn population_statistics() {
        let s = summary_stats(&[0.2, 0.4]).unwrap();
        assert!((s.mean - 0.3).abs() < 1e-15);
        assert!((s.std - 0.1).abs() < 1e-15);
        assert!((s.median - 0.3).abs() < 1e-15);
        assert_eq!((s.max, s.min), (0.4, 0.2));
        assert!(summary_stats(&[]).is_none());
    }

    fn flat_model(cmp: Comparison, l: usize, n: usize) -> Model {
        let spec = ProbeSpec::new(1, cmp, Aggregation::FlatLinear, 1).unwrap();
        Model::zeroed(Architecture::Probe(spec), l, n, false).unwrap()
    }

    fn set_head_weights(model: &mut Model, f: impl Fn(usize) -> f64) {
        let t = model
            .params()
            .tensors()
            .iter()
            .find(|t| t.name == "aggregation.head.0.weight")
            .unwrap()
            .clone();
        for (i, v) in model.params_mut().values_mut()[t.range()].iter_mut().enumerate() {
            *v = f(i);
        }
    }

    #[test]
    fn weight_summary_counts_group_members() {
        // L = 2, N = 6 -> encodings of width 3
        let mut model = flat_model(Comparison::None, 2, 6);
        set_head_weights(&mut model, |_| 1.0);
        assert_eq!(layer_weight_summary(&model).unwrap().signed, vec![3.0, 3.0]);
        set_head_weights(&mut model, |_| 0.0);
        assert_eq!(layer_weight_summary(&model).unwrap().signed, vec![0.0, 0.0]);
    }

    #[test]
    fn weight_summary_groups_by_layer() {
        let mut model = flat_model(Comparison::None, 2, 6);
        set_head_weights(&mut model, |i| if i < 3 { 2.0 } else { -1.0 });
        let s = layer_weight_summary(&model).unwrap();
        assert_eq!(s.signed, vec![6.0, -3.0]);
        assert_eq!(s.absolute, vec![6.0, 3.0]);
        set_head_weights(&mut model, |i| if i < 3 { -1.0 } else { 2.0 });
        assert_eq!(layer_weight_summary(&model).unwrap().signed, vec![-3.0, 6.0]);
    }

    #[test]
    fn weight_summary_rejects_ensembles_and_baselines() {
        let spec = ProbeSpec::new(1, Comparison::Cosine, Aggregation::EnsembleLinear, 1).unwrap();
        let model = Model::zeroed(Architecture::Probe(spec), 3, 4, false).unwrap();
        assert!(matches!(layer_weight_summary(&model), Err(Error::Unsupported(_))));
        let base = crate::baselines::BaselineSpec::new(crate::baselines::BaselineKind::LastLayer, 1, 1).unwrap();
        let model = Model::zeroed(Architecture::Baseline(base), 3, 4, false).unwrap();
        assert!(layer_weight_summary(&model).is_err());
        assert!(model.params().tensors().iter().any(|t| t.group == ParamGroup::Aggregation));
    }
}
