use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use comdense::checkpoint;
use comdense::eval::{self, Direction, RankingMetrics, RunSummary};
use comdense::kg_data::{Dataset, Split};
use comdense::model::{param_count, ModelConfig, ParamCount, Variant};
use comdense::prepared;
use comdense::train::{fit, FitResult, LogRecord};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::format;

pub const LOG_FILE: &str = "log.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const RECORDS_FILE: &str = "records.tsv";
pub const SWEEP_FILE: &str = "sweep.tsv";

pub fn checkpoint_name(seed: u64) -> String {
    format!("checkpoint-seed{seed}.bin")
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn prepare(data: &Path, out: &Path, w: &mut dyn Write) -> Result<(), CliError> {
    let dataset = Dataset::load_dir(data).map_err(|e| match e {
        comdense::Error::MissingFiles { .. } => CliError::Validation(e.to_string()),
        other => other.into(),
    })?;
    prepared::write_prepared(&dataset, out)?;
    writeln!(w, "{}", dataset.stats())?;
    let cats = prepared::category_map(&dataset);
    for c in comdense::kg_data::RelationCategory::ALL {
        let n = cats.values().filter(|&&v| v == c).count();
        writeln!(w, "  {:<4} relations: {n}", c.label())?;
    }
    writeln!(w, "wrote {}", out.display())?;
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    prepared::load_any(path).map_err(|e| match e {
        comdense::Error::MissingFiles { .. } => CliError::Validation(e.to_string()),
        other => other.into(),
    })
}

#[derive(Serialize)]
struct SeedLog<'a> {
    seed: u64,
    #[serde(flatten)]
    record: &'a LogRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub checkpoint: String,
    pub valid: RankingMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub config: RunConfig,
    pub runs: Vec<SeedResult>,
    pub valid: RunSummary,
}

fn fit_seed(
    config: &RunConfig,
    dataset: &Dataset,
    seed: u64,
    log: &mut dyn Write,
) -> Result<FitResult, CliError> {
    let mut io_err = None;
    let result = fit(
        dataset,
        &config.model,
        &config.settings_for(seed),
        &config.optimizer,
        &mut |record| {
            if io_err.is_some() {
                return;
            }
            let line =
                serde_json::to_string(&SeedLog { seed, record }).expect("log record serialises");
            if let Err(e) = writeln!(log, "{line}") {
                io_err = Some(e);
            }
        },
    )?;
    if let Some(e) = io_err {
        return Err(CliError::Runtime(format!("writing training log: {e}")));
    }
    Ok(result)
}

/// Train once per seed; write checkpoints, the log and a summary.
pub fn train(config: &RunConfig, w: &mut dyn Write) -> Result<TrainSummary, CliError> {
    config.validate()?;
    let dataset = load_dataset(&config.data)?;
    writeln!(w, "data: {}", dataset.stats())?;
    create_dir(&config.out)?;
    let log_path = config.out.join(LOG_FILE);
    let mut log = fs::File::create(&log_path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", log_path.display())))?;

    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let result = fit_seed(config, &dataset, seed, &mut log)?;
        let name = checkpoint_name(seed);
        let metadata = serde_json::json!({ "config": config, "seed": seed });
        checkpoint::save(
            config.out.join(&name),
            &result.best,
            Some(&result.best_state),
            result.best_epoch,
            metadata,
        )?;
        writeln!(
            w,
            "seed {seed}: best epoch {} of {}, valid MRR {} HIT@10 {} HIT@1 {}",
            result.best_epoch,
            result.epochs_run,
            format::metric(result.best_metrics.mrr),
            format::metric(result.best_metrics.hits10),
            format::metric(result.best_metrics.hits1),
        )?;
        runs.push(SeedResult {
            seed,
            best_epoch: result.best_epoch,
            epochs_run: result.epochs_run,
            checkpoint: name,
            valid: result.best_metrics,
        });
    }
    let metrics: Vec<RankingMetrics> = runs.iter().map(|r| r.valid).collect();
    let summary = TrainSummary {
        config: config.clone(),
        runs,
        valid: eval::summarize_runs(&metrics),
    };
    write_file(
        &config.out.join(SUMMARY_FILE),
        serde_json::to_vec_pretty(&summary)?,
    )?;
    let s = &summary.valid;
    writeln!(
        w,
        "valid over {} run(s): MRR {} ± {}  HIT@10 {} ± {}  HIT@1 {} ± {}",
        s.runs,
        format::metric(s.mean.mrr),
        format::metric(s.stddev.mrr),
        format::metric(s.mean.hits10),
        format::metric(s.stddev.hits10),
        format::metric(s.mean.hits1),
        format::metric(s.stddev.hits1),
    )?;
    Ok(summary)
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub split: Split,
    pub data: Option<&'a Path>,
    pub out: Option<&'a Path>,
    pub records: bool,
}

fn data_from_metadata(meta: &serde_json::Value) -> Option<PathBuf> {
    meta.get("config")?.get("data")?.as_str().map(PathBuf::from)
}

pub fn evaluate(args: &EvalArgs<'_>, w: &mut dyn Write) -> Result<eval::Evaluation, CliError> {
    let ck = checkpoint::load(args.checkpoint)?;
    let data = match args.data {
        Some(d) => d.to_path_buf(),
        None => data_from_metadata(&ck.header.metadata).ok_or_else(|| {
            CliError::Validation(
                "checkpoint does not record its data directory; pass --data".into(),
            )
        })?,
    };
    let dataset = load_dataset(&data)?;
    ck.check_vocab(dataset.num_entities(), dataset.vocab.num_relations())?;
    let report = eval::evaluate(&ck.params, &dataset, args.split)?;

    let out = match args.out {
        Some(o) => o.to_path_buf(),
        None => args
            .checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    create_dir(&out)?;
    write_file(&out.join(REPORT_FILE), serde_json::to_vec_pretty(&report)?)?;
    if args.records {
        write_file(&out.join(RECORDS_FILE), report.records_tsv())?;
    }

    let line = |m: &RankingMetrics| {
        format!(
            "MRR {}  HIT@10 {}  HIT@3 {}  HIT@1 {}  ({} queries)",
            format::metric(m.mrr),
            format::metric(m.hits10),
            format::metric(m.hits3),
            format::metric(m.hits1),
            m.count
        )
    };
    writeln!(
        w,
        "{} overall: {}",
        args.split.name(),
        line(&report.overall)
    )?;
    for d in Direction::ALL {
        if let Some(m) = report.by_direction.get(&d) {
            writeln!(w, "{:>5}: {}", d.name(), line(m))?;
        }
    }
    writeln!(w)?;
    write!(w, "{}", report.by_category.to_table())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Width,
    Depth,
    Variant,
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "width" => Ok(Axis::Width),
            "depth" => Ok(Axis::Depth),
            "variant" => Ok(Axis::Variant),
            other => Err(CliError::Validation(format!(
                "unknown axis {other:?}; expected width, depth or variant"
            ))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Width => "width",
            Axis::Depth => "depth",
            Axis::Variant => "variant",
        }
    }

    fn apply(self, base: &ModelConfig, value: &str) -> Result<ModelConfig, CliError> {
        let mut m = base.clone();
        let int = || {
            value.parse::<usize>().map_err(|_| {
                CliError::Validation(format!("{} value {value:?} is not an integer", self.name()))
            })
        };
        match self {
            Axis::Width => m.width = int()?,
            Axis::Depth => m.depth_common = int()?,
            Axis::Variant => m.variant = value.parse::<Variant>()?,
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub params: u64,
    pub test: RankingMetrics,
}

/// Train and test-evaluate one config per axis value; deltas are against the
/// first value.
pub fn sweep(
    config: &RunConfig,
    axis: Axis,
    values: &[String],
    w: &mut dyn Write,
) -> Result<Vec<SweepRow>, CliError> {
    config.validate()?;
    if values.is_empty() {
        return Err(CliError::Validation(
            "--values needs at least one entry".into(),
        ));
    }
    let models = values
        .iter()
        .map(|v| axis.apply(&config.model, v))
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = load_dataset(&config.data)?;
    create_dir(&config.out)?;

    let mut rows = Vec::with_capacity(values.len());
    for (value, model) in values.iter().zip(models) {
        let run = RunConfig {
            model,
            ..config.clone()
        };
        let mut per_seed = Vec::with_capacity(run.seeds.len());
        for &seed in &run.seeds {
            let result = fit_seed(&run, &dataset, seed, &mut std::io::sink())?;
            per_seed.push(eval::evaluate(&result.best, &dataset, Split::Test)?.overall);
        }
        let params = param_count(
            &run.model,
            dataset.num_entities(),
            dataset.vocab.num_relations(),
        )?
        .total();
        let row = SweepRow {
            value: value.clone(),
            params,
            test: eval::summarize_runs(&per_seed).mean,
        };
        log::info!("{} = {}: test MRR {:.4}", axis.name(), value, row.test.mrr);
        rows.push(row);
    }

    let base = rows[0].test;
    let mut tsv = format!(
        "{}\tparams\tmrr\thits10\thits1\tmrr_delta\thits10_delta\thits1_delta\n",
        axis.name()
    );
    let mut table = format!(
        "{:<24}{:>14}  {:<14}{:<14}{:<14}\n",
        axis.name(),
        "params",
        "MRR",
        "HIT@10",
        "HIT@1"
    );
    for r in &rows {
        let t = r.test;
        let cells = [
            (t.mrr, base.mrr),
            (t.hits10, base.hits10),
            (t.hits1, base.hits1),
        ];
        let deltas: Vec<String> = cells.iter().map(|&(v, b)| format::delta(v, b)).collect();
        tsv.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\n",
            r.value, r.params, t.mrr, t.hits10, t.hits1, deltas[0], deltas[1], deltas[2]
        ));
        let shown: Vec<String> = cells
            .iter()
            .zip(&deltas)
            .map(|(&(v, _), d)| format!("{} {d}", format::metric(v)).trim_end().to_string())
            .collect();
        table.push_str(&format!(
            "{:<24}{:>14}  {:<14}{:<14}{:<14}\n",
            r.value,
            format::grouped(r.params),
            shown[0],
            shown[1],
            shown[2]
        ));
    }
    write_file(&config.out.join(SWEEP_FILE), &tsv)?;
    write!(w, "{table}")?;
    Ok(rows)
}

/// Parameter breakdown for `model` over `entities` and `base_relations`
/// (inverse relations are added here).
pub fn count_params(
    model: &ModelConfig,
    entities: usize,
    base_relations: usize,
    w: &mut dyn Write,
) -> Result<ParamCount, CliError> {
    model.validate()?;
    let count = param_count(model, entities, 2 * base_relations)?;
    writeln!(
        w,
        "{} variant, {entities} entities, {base_relations} relations (+{base_relations} inverse)",
        model.variant
    )?;
    write!(w, "{}", format::param_table(&count))?;
    Ok(count)
}

/// Entity and base-relation counts of a data directory, using `stats.json`
/// when the directory is prepared.
pub fn vocab_sizes(data: &Path) -> Result<(usize, usize), CliError> {
    let stats_path = data.join(prepared::STATS_FILE);
    if stats_path.is_file() {
        let bytes = fs::read(&stats_path)?;
        let stats: comdense::kg_data::DatasetStats = serde_json::from_slice(&bytes)?;
        return Ok((stats.entities, stats.relations));
    }
    let ds = load_dataset(data)?;
    Ok((ds.num_entities(), ds.vocab.num_base_relations()))
}
