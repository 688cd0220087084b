//! Command-line orchestration. Stages exchange data through CSV and JSON files
//! in the output directory, so each can be re-run on its own.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::blackbox;
use crate::data::{self, aggregate, ProcessedSeries, SeriesSet};
use crate::error::{Error, Result};
use crate::evaluation::{self, correlate_sp, metrics, CorrelationSummary, FaithfulnessReport, InjectionSpec, ItemPerformance};
use crate::explain::{self, calibrate};
use crate::forecastability::{self, ForecastabilityParams, ForecastabilityReport, LevelSummary};
use crate::pipeline::{self, BlackBoxRun, FidelityPair, PipelineConfig, PreparedItem};
use crate::surrogate::TreeEnsemble;
use crate::synthetic::{self, SyntheticConfig};

pub const CORPUS: &str = "corpus.csv";
pub const ARCHETYPES: &str = "archetypes.csv";
pub const FORECASTABILITY: &str = "forecastability.csv";
pub const FORECASTABILITY_SUMMARY: &str = "forecastability_summary.csv";
pub const ROLLING_SP: &str = "rolling_sp.csv";
pub const FORECASTS: &str = "forecasts.csv";
pub const BACKTESTS: &str = "backtest_forecasts.csv";
pub const ACCURACY: &str = "accuracy.csv";
pub const MODEL: &str = "model.json";
pub const FIDELITY: &str = "fidelity.csv";
pub const FIDELITY_PAIRS: &str = "fidelity_pairs.csv";
pub const EXPLANATIONS: &str = "explanations.csv";
pub const CALIBRATED: &str = "calibrated_explanations.csv";
pub const FAITHFULNESS: &str = "faithfulness.json";
pub const FAITHFULNESS_PAIRS: &str = "faithfulness.csv";
pub const SP_CORRELATIONS: &str = "sp_correlations.json";
pub const SP_SCATTER: &str = "sp_scatter.csv";
pub const COMPARISON: &str = "normalization_comparison.json";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(name = "foreshap", version, about = "Explain black-box demand forecasts with a tree surrogate and gate them by forecastability")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Args)]
pub struct Options {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Also write attributions rescaled to the black-box forecast.
    #[arg(long, global = true)]
    pub calibrate: bool,
    /// JSON injection spec for the faithfulness experiment.
    #[arg(long, global = true)]
    pub inject: Option<PathBuf>,
    /// Long-format corpus CSV (item_id,date,value); defaults to the generated corpus.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the synthetic corpus and its archetype labels.
    Generate,
    /// Score every series against its noise benchmark.
    Forecastability,
    /// Run the black box (or load external forecasts) and score accuracy.
    Forecast,
    /// Fit the surrogate and report fidelity.
    Surrogate,
    /// Write denormalized, optionally calibrated, SHAP explanations.
    Explain,
    /// Run the feature-injection experiment.
    Faithfulness,
    /// Correlate forecastability with fidelity and accuracy.
    Analyze,
    /// Contrast raw-target and normalized-target explanations.
    Compare,
    /// Every stage in dependency order.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub pipeline: PipelineConfig,
    pub forecastability: ForecastabilityParams,
    /// `item_id,step,forecast` file replacing the built-in black box.
    pub external_forecasts: Option<PathBuf>,
    /// Optional `item_id,origin,step,forecast` file to accompany external forecasts.
    pub external_backtests: Option<PathBuf>,
    pub calibrate: bool,
    pub injection: Option<InjectionSpec>,
    /// Aggregation levels for the forecastability summary: level name to an
    /// `item_id,group` CSV.
    pub levels: BTreeMap<String, PathBuf>,
    /// Items for the normalization comparison; empty means all.
    pub comparison_items: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            synthetic: SyntheticConfig::default(),
            pipeline: PipelineConfig::default(),
            forecastability: ForecastabilityParams::default(),
            external_forecasts: None,
            external_backtests: None,
            calibrate: false,
            injection: None,
            levels: BTreeMap::new(),
            comparison_items: Vec::new(),
        }
    }
}

fn config_err(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {what}", path.display()))
}

impl RunConfig {
    /// Reads the config file (if any) and applies command-line overrides.
    /// Relative paths in the file resolve against the file's directory.
    pub fn load(opts: &Options) -> Result<Self> {
        let mut cfg = match &opts.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| config_err(path, e))?;
                let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| config_err(path, e))?;
                let base = path.parent().unwrap_or(Path::new("."));
                let fix = |p: &mut PathBuf| {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                };
                cfg.input.as_mut().map(fix);
                cfg.external_forecasts.as_mut().map(fix);
                cfg.external_backtests.as_mut().map(fix);
                cfg.levels.values_mut().for_each(fix);
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(path) = &opts.inject {
            let text = fs::read_to_string(path).map_err(|e| config_err(path, e))?;
            cfg.injection = Some(serde_json::from_str(&text).map_err(|e| config_err(path, e))?);
        }
        if let Some(seed) = opts.seed {
            cfg.synthetic.seed = seed;
            cfg.forecastability.seed = seed;
            cfg.pipeline.surrogate.seed = seed;
            cfg.injection.get_or_insert_with(InjectionSpec::default).seed = seed;
        }
        if let Some(input) = &opts.input {
            cfg.input = Some(input.clone());
        }
        cfg.calibrate |= opts.calibrate;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.forecastability.replicates < 10 {
            return Err(Error::Config("forecastability.replicates must be at least 10".into()));
        }
        if self.external_backtests.is_some() && self.external_forecasts.is_none() {
            return Err(Error::Config("external_backtests requires external_forecasts".into()));
        }
        let paths = self
            .input
            .iter()
            .chain(&self.external_forecasts)
            .chain(&self.external_backtests)
            .chain(self.levels.values());
        for p in paths {
            if !p.exists() {
                return Err(Error::Config(format!("path does not exist: {}", p.display())));
            }
        }
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

#[derive(Debug, Deserialize)]
struct ForecastabilityRow {
    item_id: String,
    length: usize,
    sparsity: f64,
    sp: f64,
    degenerate: bool,
    noise_mean: f64,
    noise_p95: f64,
    forecastable: bool,
}

/// Top-level numbers from an `all` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_items: usize,
    pub n_forecastable: usize,
    pub percent_forecastable: f64,
    pub fidelity_r2_median: f64,
    pub share_fidelity_r2_above_0_9: f64,
    pub accuracy_mape_median: Option<f64>,
    pub faithfulness_pearson: f64,
    pub sp_vs_fidelity_r2_spearman: Option<f64>,
    pub sp_vs_accuracy_mape_spearman: Option<f64>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Executes subcommands against one output directory.
pub struct Runner {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Runner {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Result<Self> {
        let out = out.into();
        fs::create_dir_all(&out)?;
        Ok(Self { config, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact {
                path: p,
                hint: format!("run `{stage}` first"),
            })
        }
    }

    fn corpus_path(&self) -> Result<PathBuf> {
        match &self.config.input {
            Some(p) => Ok(p.clone()),
            None => {
                let p = self.path(CORPUS);
                if p.exists() {
                    Ok(p)
                } else {
                    Err(Error::MissingArtifact {
                        path: p,
                        hint: "run `generate` first or pass `--input`".into(),
                    })
                }
            }
        }
    }

    pub fn corpus(&self) -> Result<SeriesSet> {
        data::load_series(self.corpus_path()?)
    }

    fn items(&self, set: &SeriesSet) -> Result<Vec<PreparedItem>> {
        pipeline::prepare(set, &self.config.pipeline)
    }

    pub fn run(&self, command: Command) -> Result<()> {
        match command {
            Command::Generate => self.generate(),
            Command::Forecastability => self.forecastability().map(drop),
            Command::Forecast => self.forecast().map(drop),
            Command::Surrogate => self.surrogate().map(drop),
            Command::Explain => self.explain().map(drop),
            Command::Faithfulness => self.faithfulness().map(drop),
            Command::Analyze => self.analyze().map(drop),
            Command::Compare => self.compare(),
            Command::All => self.all(),
        }
    }

    pub fn generate(&self) -> Result<()> {
        let corpus = synthetic::gen_synthetic(&self.config.synthetic)?;
        data::write_series(&corpus.set, BufWriter::new(File::create(self.path(CORPUS))?))?;
        synthetic::write_archetypes(&corpus, BufWriter::new(File::create(self.path(ARCHETYPES))?))?;
        log::info!("generated {} series", corpus.set.len());
        Ok(())
    }

    pub fn forecastability(&self) -> Result<Vec<ForecastabilityReport>> {
        let set = self.corpus()?;
        let h = self.config.pipeline.horizon;
        let items = self.items(&set)?;
        let series: Vec<ProcessedSeries> = items.into_iter().map(|i| i.series).collect();
        let reports = forecastability::analyze(&series, h, &self.config.forecastability)?;

        let mut w = csv_writer(&self.path(FORECASTABILITY))?;
        w.write_record(["item_id", "length", "sparsity", "sp", "degenerate", "noise_mean", "noise_p95", "forecastable"])?;
        for r in &reports {
            w.write_record([
                r.item_id.clone(),
                r.length.to_string(),
                fmt(r.sparsity),
                fmt(r.sp),
                r.degenerate.to_string(),
                fmt(r.noise_mean),
                fmt(r.noise_p95),
                r.forecastable.to_string(),
            ])?;
        }
        w.flush()?;

        let mut w = csv_writer(&self.path(ROLLING_SP))?;
        w.write_record(["item_id", "start", "sp"])?;
        for r in &reports {
            for (start, sp) in &r.rolling {
                w.write_record([r.item_id.clone(), start.to_string(), fmt(*sp)])?;
            }
        }
        w.flush()?;

        let mut summaries = vec![forecastability::summarize("item", &reports)];
        for (level, mapping) in &self.config.levels {
            summaries.push(self.level_summary(&set, level, mapping)?);
        }
        let mut w = csv_writer(&self.path(FORECASTABILITY_SUMMARY))?;
        w.write_record(["level", "n_series", "n_forecastable", "percent_forecastable"])?;
        for s in &summaries {
            w.write_record([s.level.clone(), s.n_series.to_string(), s.n_forecastable.to_string(), fmt(s.percent_forecastable)])?;
        }
        w.flush()?;
        log::info!("{}/{} series forecastable", summaries[0].n_forecastable, summaries[0].n_series);
        Ok(reports)
    }

    fn level_summary(&self, set: &SeriesSet, level: &str, mapping: &Path) -> Result<LevelSummary> {
        #[derive(Deserialize)]
        struct Row {
            item_id: String,
            group: String,
        }
        let mut grouping = BTreeMap::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(mapping)?;
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            grouping.insert(row.item_id, row.group);
        }
        let agg = aggregate(set, &grouping)?;
        let series = agg
            .iter()
            .map(|(id, obs)| ProcessedSeries::new(id, obs, Some(self.config.pipeline.horizon)))
            .collect::<Result<Vec<_>>>()?;
        let reports = forecastability::analyze(&series, self.config.pipeline.horizon, &self.config.forecastability)?;
        Ok(forecastability::summarize(level, &reports))
    }

    pub fn forecast(&self) -> Result<BlackBoxRun> {
        let set = self.corpus()?;
        let items = self.items(&set)?;
        let h = self.config.pipeline.horizon;
        let run = match &self.config.external_forecasts {
            Some(path) => {
                let ids = items.iter().map(|i| i.item_id());
                let mut run = BlackBoxRun::external(blackbox::load_external_forecasts(path, ids, h)?);
                if let Some(bt) = &self.config.external_backtests {
                    run.backtests = pipeline::read_backtests(File::open(bt)?, items.iter().map(|i| i.item_id()), h)?;
                }
                if let Some(item) = items.iter().find(|i| run.final_forecasts.get(i.item_id()).is_none()) {
                    return Err(Error::MissingStep {
                        item: item.item_id().to_string(),
                        step: 1,
                    });
                }
                run
            }
            None => pipeline::run_black_box(&items, &self.config.pipeline, None)?,
        };
        blackbox::write_forecasts(&run.final_forecasts, BufWriter::new(File::create(self.path(FORECASTS))?))?;
        pipeline::write_backtests(&run.backtests, BufWriter::new(File::create(self.path(BACKTESTS))?))?;

        let mut w = csv_writer(&self.path(ACCURACY))?;
        w.write_record(["item_id", "mae", "mape", "mape_excluded", "rmse", "r2", "r2_degenerate"])?;
        for item in &items {
            let f = run.final_forecasts.get(item.item_id()).expect("checked above");
            let m = metrics(f, item.actual())?;
            w.write_record([
                item.item_id().to_string(),
                fmt(m.mae),
                fmt_opt(m.mape),
                m.mape_excluded.to_string(),
                fmt(m.rmse),
                fmt(m.r2),
                m.r2_degenerate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(run)
    }

    fn load_run(&self, items: &[PreparedItem]) -> Result<BlackBoxRun> {
        let h = self.config.pipeline.horizon;
        let path = self.require(FORECASTS, "forecast")?;
        let ids = || items.iter().map(|i| i.item_id());
        let mut run = BlackBoxRun::external(blackbox::load_external_forecasts(path, ids(), h)?);
        let bt = self.path(BACKTESTS);
        if bt.exists() {
            run.backtests = pipeline::read_backtests(File::open(bt)?, ids(), h)?;
        }
        Ok(run)
    }

    pub fn surrogate(&self) -> Result<Vec<ItemPerformance>> {
        let set = self.corpus()?;
        let items = self.items(&set)?;
        let run = self.load_run(&items)?;
        let data = pipeline::build_surrogate_data(&items, &run, &self.config.pipeline, None)?;
        let model = pipeline::fit_surrogate(&data, &self.config.pipeline)?;
        fs::write(self.path(MODEL), model.to_json()? + "\n")?;

        let pairs = pipeline::fidelity_pairs(&items, &model, &data)?;
        let mut w = csv_writer(&self.path(FIDELITY_PAIRS))?;
        w.write_record(["item_id", "step", "surrogate", "black_box", "actual"])?;
        for p in &pairs {
            w.write_record([p.item_id.clone(), p.step.to_string(), fmt(p.surrogate), fmt(p.black_box), fmt(p.actual)])?;
        }
        w.flush()?;

        let perf = pipeline::performance(&items, &pairs)?;
        let mut w = csv_writer(&self.path(FIDELITY))?;
        w.write_record(["item_id", "z_mae", "z_rmse", "z_r2", "mae", "mape", "rmse", "r2", "r2_degenerate"])?;
        for p in &perf {
            let (z, o) = (&p.fidelity_normalized, &p.fidelity_original);
            w.write_record([
                p.item_id.clone(),
                fmt(z.mae),
                fmt(z.rmse),
                fmt(z.r2),
                fmt(o.mae),
                fmt_opt(o.mape),
                fmt(o.rmse),
                fmt(o.r2),
                o.r2_degenerate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(perf)
    }

    fn load_forecastability(&self) -> Result<Option<Vec<ForecastabilityReport>>> {
        let p = self.path(FORECASTABILITY);
        if !p.exists() {
            return Ok(None);
        }
        let mut rdr = csv::Reader::from_path(p)?;
        let rows = rdr
            .deserialize::<ForecastabilityRow>()
            .map(|r| {
                let r = r?;
                Ok(ForecastabilityReport {
                    item_id: r.item_id,
                    length: r.length,
                    sparsity: r.sparsity,
                    sp: r.sp,
                    degenerate: r.degenerate,
                    noise_mean: r.noise_mean,
                    noise_p95: r.noise_p95,
                    forecastable: r.forecastable,
                    rolling: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(rows))
    }

    pub fn explain(&self) -> Result<Vec<pipeline::ExplainedRow>> {
        let model_path = self.require(MODEL, "surrogate")?;
        let set = self.corpus()?;
        let items = self.items(&set)?;
        let run = self.load_run(&items)?;
        let model = TreeEnsemble::from_json(&fs::read_to_string(model_path)?)?;
        let data = pipeline::build_surrogate_data(&items, &run, &self.config.pipeline, None)?;
        if model.schema != data.holdout.schema {
            return Err(Error::SchemaMismatch {
                expected: data.holdout.schema.len(),
                got: model.schema.len(),
            });
        }
        let flags: BTreeMap<String, bool> = match self.load_forecastability()? {
            Some(r) => r,
            None => {
                let series: Vec<ProcessedSeries> = items.iter().map(|i| i.series.clone()).collect();
                forecastability::analyze(&series, self.config.pipeline.horizon, &self.config.forecastability)?
            }
        }
        .into_iter()
        .map(|r| (r.item_id, r.forecastable))
        .collect();
        let rows = pipeline::explain_rows(&items, &model, &data, &run)?;
        let flag = |id: &str| flags.get(id).map(|f| f.to_string()).unwrap_or_default();
        let names = &model.schema.names;

        let mut w = csv_writer(&self.path(EXPLANATIONS))?;
        let mut header: Vec<String> = ["item_id", "step", "date", "forecastable", "forecast", "base_value", "prediction"]
            .map(String::from)
            .to_vec();
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for r in &rows {
            let mut rec = vec![
                r.item_id.clone(),
                r.step.to_string(),
                r.date.to_string(),
                flag(&r.item_id),
                fmt(r.forecast),
                fmt(r.original.base_value),
                fmt(r.original.prediction),
            ];
            rec.extend(r.original.attributions.iter().map(|v| fmt(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;

        if self.config.calibrate {
            let mut w = csv_writer(&self.path(CALIBRATED))?;
            let mut header: Vec<String> = ["item_id", "step", "date", "forecastable", "base_value", "y_ag", "s", "status"]
                .map(String::from)
                .to_vec();
            header.extend(names.iter().cloned());
            w.write_record(&header)?;
            for r in &rows {
                let c = calibrate(&r.original, r.forecast);
                let mut rec = vec![
                    r.item_id.clone(),
                    r.step.to_string(),
                    r.date.to_string(),
                    flag(&r.item_id),
                    fmt(r.original.base_value),
                    fmt(c.target),
                    fmt(c.scale),
                    c.status.as_str().to_string(),
                ];
                rec.extend(c.attributions.iter().map(|v| fmt(*v)));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        Ok(rows)
    }

    pub fn faithfulness(&self) -> Result<FaithfulnessReport> {
        let set = self.corpus()?;
        let spec = self.config.injection.clone().unwrap_or_default();
        let report = evaluation::inject_and_evaluate(&set, &spec, &self.config.pipeline)?;
        let mut w = csv_writer(&self.path(FAITHFULNESS_PAIRS))?;
        w.write_record(["item_id", "step", "price", "phi", "ground_truth"])?;
        for p in &report.pairs {
            w.write_record([p.item_id.clone(), p.step.to_string(), fmt(p.price), fmt(p.phi), fmt(p.ground_truth)])?;
        }
        w.flush()?;
        write_json(
            &self.path(FAITHFULNESS),
            &FaithfulnessReport {
                pairs: Vec::new(),
                ..report.clone()
            },
        )?;
        log::info!("faithfulness pearson r = {:.4}", report.pearson);
        Ok(report)
    }

    pub fn analyze(&self) -> Result<CorrelationSummary> {
        let reports = match self.load_forecastability()? {
            Some(r) => r,
            None => {
                return Err(Error::MissingArtifact {
                    path: self.path(FORECASTABILITY),
                    hint: "run `forecastability` first".into(),
                })
            }
        };
        let pairs_path = self.require(FIDELITY_PAIRS, "surrogate")?;
        let set = self.corpus()?;
        let items = self.items(&set)?;
        let mut rdr = csv::Reader::from_path(pairs_path)?;
        let pairs = rdr.deserialize::<FidelityPair>().collect::<std::result::Result<Vec<_>, _>>()?;
        let perf = pipeline::performance(&items, &pairs)?;
        let summary = correlate_sp(&perf, &reports);
        for w in &summary.warnings {
            log::warn!("{w}");
        }

        let mut w = csv_writer(&self.path(SP_SCATTER))?;
        w.write_record(["item_id", "sp", "forecastable", "fidelity_r2", "fidelity_mape", "accuracy_r2", "accuracy_mape"])?;
        for p in &summary.points {
            w.write_record([
                p.item_id.clone(),
                fmt(p.sp),
                p.forecastable.to_string(),
                fmt(p.fidelity_r2),
                fmt_opt(p.fidelity_mape),
                fmt(p.accuracy_r2),
                fmt_opt(p.accuracy_mape),
            ])?;
        }
        w.flush()?;
        write_json(
            &self.path(SP_CORRELATIONS),
            &CorrelationSummary {
                points: Vec::new(),
                ..summary.clone()
            },
        )?;
        Ok(summary)
    }

    pub fn compare(&self) -> Result<()> {
        let set = self.corpus()?;
        let ids: Vec<String> = if self.config.comparison_items.is_empty() {
            set.item_ids().map(String::from).collect()
        } else {
            self.config.comparison_items.clone()
        };
        let cmp = explain::normalization_comparison(&set, &ids, &self.config.pipeline)?;
        write_json(&self.path(COMPARISON), &cmp)
    }

    pub fn all(&self) -> Result<()> {
        if self.config.input.is_none() {
            self.generate()?;
        }
        let reports = self.forecastability()?;
        self.forecast()?;
        let perf = self.surrogate()?;
        self.explain()?;
        let faith = self.faithfulness()?;
        let corr = self.analyze()?;
        self.compare()?;

        let n = reports.len();
        let k = reports.iter().filter(|r| r.forecastable).count();
        let r2: Vec<f64> = perf.iter().map(|p| p.fidelity_original.r2).collect();
        let summary = RunSummary {
            n_items: n,
            n_forecastable: k,
            percent_forecastable: if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 },
            share_fidelity_r2_above_0_9: r2.iter().filter(|v| **v >= 0.9).count() as f64 / r2.len().max(1) as f64,
            fidelity_r2_median: median(r2).unwrap_or(f64::NAN),
            accuracy_mape_median: median(perf.iter().filter_map(|p| p.accuracy.mape).collect()),
            faithfulness_pearson: faith.pearson,
            sp_vs_fidelity_r2_spearman: corr.sp_vs_fidelity_r2.spearman,
            sp_vs_accuracy_mape_spearman: corr.sp_vs_accuracy_mape.spearman,
        };
        write_json(&self.path(SUMMARY), &summary)
    }
}

/// Loads the configuration and runs one parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let config = RunConfig::load(&cli.opts)?;
    Runner::new(config, &cli.opts.out)?.run(cli.command)
}

/// Exit status for a finished run.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_validation() => 2,
        Err(_) => 1,
    }
}
