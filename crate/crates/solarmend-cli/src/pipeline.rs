//! Implementations of the CLI subcommands.
//!
//! Each stage writes inspectable files into the output directory and a
//! `manifest.json` that echoes the resolved configuration and seed, enough
//! to replay the run exactly. Nothing here is time-dependent: the same
//! config and seed produce byte-identical outputs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use solarmend::baselines::ImputerSpec;
use solarmend::data::{
    self, apply_mask, augment, draw_mask, export_csv, generate_synthetic_fleet, ingest_csv,
    profile_missing_patterns, slide_windows, CorruptionConfig, DaySplit, MissingMask, MissingType,
    PvFleetSeries,
};
use solarmend::eval::{domain_metrics, score, EvalReport};
use solarmend::graph::FleetGraph;
use solarmend::model::{
    self, load_checkpoint, save_checkpoint, train_with_split, StdGae, WindowSplit,
};

use crate::config::{scenario_seed, RunConfig};

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    crate_version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    outputs: Vec<String>,
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: &RunConfig,
    outputs: &[PathBuf],
) -> Result<()> {
    let manifest = Manifest {
        command,
        crate_version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        config,
        outputs: outputs
            .iter()
            .map(|p| {
                p.file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ensure_out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config
        .paths
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_series(config: &RunConfig) -> Result<PvFleetSeries> {
    let data = config
        .paths
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("no data file: pass --data or set paths.data"))?;
    let metadata = config
        .paths
        .metadata
        .as_ref()
        .ok_or_else(|| anyhow!("no metadata file: pass --metadata or set paths.metadata"))?;
    ingest_csv(data, metadata, config.ingest).context("ingest stage")
}

fn write_metadata_csv(series: &PvFleetSeries, path: &Path) -> Result<()> {
    let mut out = String::from("inverter_id,site_id,lon,lat,p_nameplate,p_norm,gamma_t\n");
    for i in 0..series.n_inverters() {
        let p = &series.physics()[i];
        let (lon, lat) = series.locations()[i];
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            series.inverter_ids()[i],
            series.site_ids()[i],
            lon,
            lat,
            p.p_nameplate,
            p.p_norm,
            p.gamma_t
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    let out_dir = ensure_out_dir(config)?;
    let series = generate_synthetic_fleet(&config.synth).context("synth stage")?;
    let data_path = out_dir.join("data.csv");
    let meta_path = out_dir.join("metadata.csv");
    export_csv(&series, &data_path).context("writing data.csv")?;
    write_metadata_csv(&series, &meta_path)?;
    write_manifest(&out_dir, "synth", config, &[data_path, meta_path])?;
    println!(
        "synthesized {} inverters x {} days -> {}",
        series.n_inverters(),
        series.n_days(),
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_ingest(config: &RunConfig) -> Result<()> {
    let out_dir = ensure_out_dir(config)?;
    let series = load_series(config)?;
    let aligned = out_dir.join("aligned.csv");
    export_csv(&series, &aligned).context("writing aligned.csv")?;
    let observed = series.observed().iter().filter(|&&o| o).count();
    let cells = series.n_steps() * series.n_inverters();
    println!(
        "ingested {} inverters, {} steps ({} days); {:.3}% of cells observed",
        series.n_inverters(),
        series.n_steps(),
        series.n_days(),
        100.0 * observed as f64 / cells as f64
    );
    write_manifest(&out_dir, "ingest", config, &[aligned])?;
    Ok(())
}

pub fn cmd_profile(config: &RunConfig) -> Result<()> {
    let out_dir = ensure_out_dir(config)?;
    let series = load_series(config)?;
    let profile = profile_missing_patterns(&series);
    print!("{}", profile.render());
    let json_path = out_dir.join("profile.json");
    #[derive(Serialize)]
    struct ProfileOut<'a> {
        attributes: &'a [String],
        patterns: Vec<(String, u64)>,
        power_missing_fraction: f64,
    }
    let rendered = ProfileOut {
        attributes: &profile.attributes,
        patterns: profile
            .patterns
            .iter()
            .map(|(bits, count)| {
                let marks: String = bits.iter().map(|&b| if b { '+' } else { '-' }).collect();
                (marks, *count)
            })
            .collect(),
        power_missing_fraction: profile.power_missing_fraction(),
    };
    std::fs::write(&json_path, serde_json::to_string_pretty(&rendered)?)?;
    write_manifest(&out_dir, "profile", config, &[json_path])?;
    Ok(())
}

/// Augments (or passes through, when disabled) and reports what happened.
fn augment_stage(config: &RunConfig, series: &PvFleetSeries) -> Result<PvFleetSeries> {
    if !config.augmentation.enabled {
        return Ok(series.clone());
    }
    if series.is_fully_observed() {
        return Ok(series.clone());
    }
    let augmented = augment(series, &config.augmentation.options()).context("augment stage")?;
    Ok(augmented.series)
}

pub fn cmd_augment(config: &RunConfig) -> Result<()> {
    let out_dir = ensure_out_dir(config)?;
    let series = load_series(config)?;
    let augmented = augment(&series, &config.augmentation.options()).context("augment stage")?;
    let data_path = out_dir.join("augmented.csv");
    export_csv(&augmented.series, &data_path)?;
    // Record which cells augmentation supplied.
    let mask_path = out_dir.join("augment_mask.csv");
    let filled_mask = MissingMask::from_kept(
        series.n_steps(),
        series.n_inverters(),
        augmented.filled.iter().map(|&f| !f).collect(),
        CorruptionConfig::mcar(0.0, 0),
    )
    .map_err(|e| anyhow!("{e}"))?;
    filled_mask
        .write_csv(&series, &mask_path)
        .context("writing augment_mask.csv")?;
    println!(
        "augmented {} cells ({} clamped by the validator, {} skipped as non-physical)",
        augmented.filled.iter().filter(|&&f| f).count(),
        augmented.clamped_count,
        augmented.skipped_count
    );
    write_manifest(&out_dir, "augment", config, &[data_path, mask_path])?;
    Ok(())
}

pub fn cmd_corrupt(config: &RunConfig) -> Result<()> {
    let out_dir = ensure_out_dir(config)?;
    let series = load_series(config)?;
    if !series.is_fully_observed() {
        bail!("corrupt stage needs fully observed input; run `solarmend augment` first");
    }
    let (corrupted, mask) = data::corrupt(&series, &config.corruption).context("corrupt stage")?;
    let data_path = out_dir.join("corrupted.csv");
    export_csv(&corrupted, &data_path)?;
    let mask_path = out_dir.join("mask.csv");
    mask.write_csv(&series, &mask_path)?;
    println!(
        "dropped {} of {} cells",
        mask.dropped_count(),
        series.n_steps() * series.n_inverters()
    );
    write_manifest(&out_dir, "corrupt", config, &[data_path, mask_path])?;
    Ok(())
}

/// Shared train pipeline: augment, corrupt the train+validation days, fit.
fn train_stage(
    config: &RunConfig,
    series: &PvFleetSeries,
    graph: &FleetGraph,
) -> Result<(StdGae, model::TrainReport)> {
    let d_a = augment_stage(config, series)?;
    let split = DaySplit::proportional(d_a.n_days()).context("train stage: day split")?;
    let fit_days = d_a
        .slice_days(split.train.start..split.validation.end)
        .context("train stage")?;
    let mask = draw_mask(
        fit_days.n_steps(),
        fit_days.n_inverters(),
        &config.corruption,
    )
    .context("train stage: corruption")?;
    let d_c = apply_mask(&fit_days, &mask).context("train stage")?;
    let target_windows =
        slide_windows(&fit_days, config.train.window, config.train.step).context("train stage")?;
    let corrupted_windows =
        slide_windows(&d_c, config.train.window, config.train.step).context("train stage")?;
    // Split windows by where they fall, so non-daily window/step settings
    // still keep validation windows out of the training range.
    let train_step_end =
        (split.train.end - split.train.start) * solarmend::data::STEPS_PER_DAY;
    let mut window_split = WindowSplit {
        train: Vec::new(),
        validation: Vec::new(),
    };
    for (idx, window) in target_windows.iter().enumerate() {
        if window.start_step + config.train.window <= train_step_end {
            window_split.train.push(idx);
        } else if window.start_step >= train_step_end {
            window_split.validation.push(idx);
        }
        // Windows straddling the boundary belong to neither split.
    }
    train_with_split(
        &target_windows,
        &corrupted_windows,
        graph,
        &window_split,
        &config.train,
    )
    .context("train stage")
}

pub fn cmd_train(config: &RunConfig, epsilon: Option<f64>) -> Result<()> {
    let out_dir = ensure_out_dir(config)?;
    let series = load_series(config)?;
    let eps = epsilon.unwrap_or(config.train.epsilon_graph);
    let graph = FleetGraph::from_locations(series.locations(), eps).context("graph stage")?;
    let (gae, report) = train_stage(config, &series, &graph)?;
    let checkpoint_path = out_dir.join("checkpoint.bin");
    save_checkpoint(gae.params(), &config.train, &checkpoint_path).context("writing checkpoint")?;
    let report_path = out_dir.join("training_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    println!(
        "trained {} epochs; best validation loss {:.6} at epoch {}",
        report.train_loss.len(),
        report.best_validation_loss,
        report.best_epoch
    );
    write_manifest(&out_dir, "train", config, &[checkpoint_path, report_path])?;
    Ok(())
}

pub fn cmd_impute(config: &RunConfig, checkpoint: &Path, epsilon: Option<f64>) -> Result<()> {
    let out_dir = ensure_out_dir(config)?;
    let series = load_series(config)?;
    let (params, train_config) = load_checkpoint(checkpoint).context("loading checkpoint")?;
    let eps = epsilon.unwrap_or(train_config.epsilon_graph);
    let graph = FleetGraph::from_locations(series.locations(), eps).context("graph stage")?;
    let gae = StdGae::new(params, &graph).context("model stage")?;
    let imputed =
        model::impute(&series, &gae, &config.augmentation.validator).context("impute stage")?;
    let data_path = out_dir.join("imputed.csv");
    export_csv(&imputed, &data_path)?;
    println!("imputed series written to {}", data_path.display());
    write_manifest(&out_dir, "impute", config, &[data_path])?;
    Ok(())
}

pub fn cmd_evaluate(config: &RunConfig, truth_path: &Path, mask_path: &Path) -> Result<()> {
    let out_dir = ensure_out_dir(config)?;
    let metadata = config
        .paths
        .metadata
        .as_ref()
        .ok_or_else(|| anyhow!("no metadata file: pass --metadata"))?;
    let imputed_path = config
        .paths
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("no imputed file: pass --data"))?;
    let truth = ingest_csv(truth_path, metadata, config.ingest).context("ingesting truth")?;
    let imputed = ingest_csv(imputed_path, metadata, config.ingest)
        .context("ingesting imputed data")?
        .renormalized_with(truth.scaling())
        .context("aligning normalization")?;
    let mask = MissingMask::read_csv(&truth, mask_path).context("reading mask")?;

    let (mae, rmse, n_scored) = score(&imputed, &truth, &mask).context("scoring")?;
    let (od, sd) = if truth.is_fully_observed() {
        domain_metrics(&imputed, &truth, &config.evaluation).context("domain metrics")?
    } else {
        eprintln!("truth has missing cells; skipping domain metrics");
        (Vec::new(), Vec::new())
    };
    let report = EvalReport {
        mae,
        rmse,
        per_inverter_od: od,
        per_inverter_sd: sd,
        scenario: *mask.provenance(),
        n_scored,
    };
    let json_path = out_dir.join("report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
    let csv_path = out_dir.join("report.csv");
    std::fs::write(&csv_path, report.to_csv(truth.inverter_ids()))?;
    println!("mae {mae:.6} rmse {rmse:.6} over {n_scored} cells");
    write_manifest(&out_dir, "evaluate", config, &[json_path, csv_path])?;
    Ok(())
}

/// Methods an experiment can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    StdGae,
    Mean,
    Li,
    Knn,
    Mice,
    Mida,
    LrtcTnn,
}

impl Method {
    pub fn parse_list(text: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            out.extend(match part {
                "stdgae" => vec![Method::StdGae],
                "mean" => vec![Method::Mean],
                "li" => vec![Method::Li],
                "knn" => vec![Method::Knn],
                "mice" => vec![Method::Mice],
                "mida" => vec![Method::Mida],
                "lrtc_tnn" => vec![Method::LrtcTnn],
                "all" => vec![
                    Method::StdGae,
                    Method::Mean,
                    Method::Li,
                    Method::Knn,
                    Method::Mice,
                    Method::Mida,
                    Method::LrtcTnn,
                ],
                other => bail!(
                    "unknown method {other:?}; expected stdgae, mean, li, knn, mice, mida, lrtc_tnn, or all"
                ),
            });
        }
        out.dedup();
        Ok(out)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::StdGae => "stdgae",
            Method::Mean => "mean",
            Method::Li => "li",
            Method::Knn => "knn",
            Method::Mice => "mice",
            Method::Mida => "mida",
            Method::LrtcTnn => "lrtc_tnn",
        }
    }

    fn baseline_spec(self, params: &crate::config::ImputerParams) -> Option<ImputerSpec> {
        match self {
            Method::StdGae => None,
            Method::Mean => Some(ImputerSpec::Mean),
            Method::Li => Some(ImputerSpec::Li),
            Method::Knn => Some(ImputerSpec::Knn { k: params.knn_k }),
            Method::Mice => Some(ImputerSpec::Mice {
                iterations: params.mice_iterations,
            }),
            Method::Mida => Some(ImputerSpec::Mida(params.mida.clone())),
            Method::LrtcTnn => Some(ImputerSpec::LrtcTnn(params.lrtc.clone())),
        }
    }
}

/// One evaluation scenario of the experiment grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub corruption: CorruptionConfig,
}

/// The 12-scenario grid: MCAR 10–60% and BM 2–12 hours.
pub fn default_scenarios(root_seed: u64) -> Vec<Scenario> {
    let mut out = Vec::new();
    for pct in [10u32, 20, 30, 40, 50, 60] {
        let id = format!("mcar_{pct}pct");
        out.push(Scenario {
            corruption: CorruptionConfig::mcar(pct as f64 / 100.0, scenario_seed(root_seed, &id)),
            id,
        });
    }
    for hours in [2u32, 4, 6, 8, 10, 12] {
        let id = format!("bm_{hours}h");
        out.push(Scenario {
            corruption: CorruptionConfig::bm(hours as usize * 12, scenario_seed(root_seed, &id)),
            id,
        });
    }
    out
}

fn single_scenario(config: &RunConfig) -> Vec<Scenario> {
    let c = config.corruption;
    let id = match c.missing_type {
        MissingType::Mcar => format!("mcar_{}pct", (c.parameter * 100.0).round() as u32),
        MissingType::Bm => format!("bm_{}steps", c.parameter as usize),
    };
    vec![Scenario {
        corruption: CorruptionConfig {
            seed: scenario_seed(config.seed, &id),
            ..c
        },
        id,
    }]
}

#[derive(Serialize)]
struct ScenarioSummaryRow {
    scenario: String,
    method: String,
    mae: f64,
    rmse: f64,
    n_scored: usize,
}

pub struct ExperimentArgs {
    pub train: bool,
    pub checkpoint: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub epsilon_sweep: bool,
    pub methods: Vec<Method>,
    pub single_scenario: bool,
}

/// Runs scenarios (optionally in parallel worker threads capped by
/// `SOLARMEND_THREADS`) and collects one summary row per scenario × method.
fn run_scenarios(
    config: &RunConfig,
    scenarios: &[Scenario],
    methods: &[Method],
    gae: &StdGae,
    d_a_test: &PvFleetSeries,
    d_o_test: &PvFleetSeries,
    out_dir: &Path,
) -> Result<Vec<ScenarioSummaryRow>> {
    let threads = std::env::var("SOLARMEND_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
        })
        .clamp(1, scenarios.len().max(1));

    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<Result<Vec<ScenarioSummaryRow>>>>> = scenarios
        .iter()
        .map(|_| std::sync::Mutex::new(None))
        .collect();

    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if idx >= scenarios.len() {
                    break;
                }
                let outcome = run_one_scenario(
                    config,
                    &scenarios[idx],
                    methods,
                    gae,
                    d_a_test,
                    d_o_test,
                    out_dir,
                );
                *results[idx].lock().expect("no poisoned scenario slot") = Some(outcome);
            });
        }
    });

    let mut rows = Vec::new();
    for (scenario, slot) in scenarios.iter().zip(results) {
        let outcome = slot
            .into_inner()
            .expect("no poisoned scenario slot")
            .unwrap_or_else(|| Err(anyhow!("scenario {} never ran", scenario.id)));
        rows.extend(outcome.with_context(|| format!("scenario {}", scenario.id))?);
    }
    Ok(rows)
}

fn run_one_scenario(
    config: &RunConfig,
    scenario: &Scenario,
    methods: &[Method],
    gae: &StdGae,
    d_a_test: &PvFleetSeries,
    d_o_test: &PvFleetSeries,
    out_dir: &Path,
) -> Result<Vec<ScenarioSummaryRow>> {
    let scenario_dir = out_dir.join(format!("scenario_{}", scenario.id));
    std::fs::create_dir_all(&scenario_dir)?;

    // Corrupt only cells whose ground truth is observed, so every scored
    // cell has a counterpart.
    let mask = draw_mask(
        d_a_test.n_steps(),
        d_a_test.n_inverters(),
        &scenario.corruption,
    )?;
    let corrupted = apply_mask(d_a_test, &mask)?;
    mask.write_csv(d_a_test, &scenario_dir.join("mask.csv"))?;

    let mut rows = Vec::new();
    for &method in methods {
        let imputed = match method.baseline_spec(&config.imputers) {
            None => model::impute(&corrupted, gae, &config.augmentation.validator)
                .context("stdgae imputation")?,
            Some(spec) => spec
                .impute(&corrupted)
                .with_context(|| format!("{} imputation", method.name()))?,
        };
        let (mae, rmse, n_scored) = score(&imputed, d_o_test, &mask)?;
        let (od, sd) = domain_metrics(&imputed, d_a_test, &config.evaluation)?;
        let report = EvalReport {
            mae,
            rmse,
            per_inverter_od: od,
            per_inverter_sd: sd,
            scenario: scenario.corruption,
            n_scored,
        };
        let stem = format!("report_{}", method.name());
        std::fs::write(
            scenario_dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&report)?,
        )?;
        std::fs::write(
            scenario_dir.join(format!("{stem}.csv")),
            report.to_csv(d_a_test.inverter_ids()),
        )?;
        export_csv(
            &imputed,
            &scenario_dir.join(format!("imputed_{}.csv", method.name())),
        )?;
        rows.push(ScenarioSummaryRow {
            scenario: scenario.id.clone(),
            method: method.name().to_string(),
            mae,
            rmse,
            n_scored,
        });
    }
    Ok(rows)
}

pub fn cmd_experiment(config: &RunConfig, args: &ExperimentArgs) -> Result<()> {
    let out_dir = ensure_out_dir(config)?;

    // Source data: files when given, otherwise the synthetic fleet.
    let series = if config.paths.data.is_some() {
        load_series(config)?
    } else {
        generate_synthetic_fleet(&config.synth).context("synth stage")?
    };
    let split = DaySplit::proportional(series.n_days()).context("day split")?;
    let d_o_test = series.slice_days(split.test.clone())?;
    let d_a_full = augment_stage(config, &series)?;
    let d_a_test = d_a_full.slice_days(split.test.clone())?;

    let scenarios = if args.single_scenario {
        single_scenario(config)
    } else {
        default_scenarios(config.seed)
    };
    let methods = if args.methods.is_empty() {
        vec![Method::StdGae]
    } else {
        args.methods.clone()
    };

    let epsilons: Vec<f64> = if args.epsilon_sweep {
        vec![0.0, 0.25, 0.5, 0.75, 1.0]
    } else {
        vec![args.epsilon.unwrap_or(config.train.epsilon_graph)]
    };

    let mut all_rows: Vec<(String, Vec<ScenarioSummaryRow>)> = Vec::new();
    for &eps in &epsilons {
        let graph = FleetGraph::from_locations(series.locations(), eps).context("graph stage")?;
        let gae = if args.epsilon_sweep || args.train {
            let (gae, report) = train_stage(config, &series, &graph)?;
            let label = if args.epsilon_sweep {
                format!("checkpoint_eps_{eps:.2}.bin")
            } else {
                "checkpoint.bin".to_string()
            };
            save_checkpoint(gae.params(), &config.train, &out_dir.join(&label))?;
            std::fs::write(
                out_dir.join(
                    label
                        .replace("checkpoint", "training_report")
                        .replace(".bin", ".json"),
                ),
                serde_json::to_string_pretty(&report)?,
            )?;
            gae
        } else {
            let path = args.checkpoint.as_ref().ok_or_else(|| {
                anyhow!("missing trained checkpoint: pass --checkpoint or --train")
            })?;
            let (params, _) = load_checkpoint(path).context("loading checkpoint")?;
            StdGae::new(params, &graph).context("model stage")?
        };

        let sweep_dir = if args.epsilon_sweep {
            let d = out_dir.join(format!("sweep_eps_{eps:.2}"));
            std::fs::create_dir_all(&d)?;
            d
        } else {
            out_dir.clone()
        };
        let rows = run_scenarios(
            config, &scenarios, &methods, &gae, &d_a_test, &d_o_test, &sweep_dir,
        )?;
        all_rows.push((format!("{eps:.2}"), rows));
    }

    // Combined comparison table.
    let mut table = String::from("epsilon,scenario,method,mae,rmse,n_scored\n");
    for (eps, rows) in &all_rows {
        for row in rows {
            table.push_str(&format!(
                "{eps},{},{},{},{},{}\n",
                row.scenario, row.method, row.mae, row.rmse, row.n_scored
            ));
        }
    }
    let summary_path = out_dir.join("summary.csv");
    std::fs::write(&summary_path, table)?;
    println!("wrote {}", summary_path.display());
    write_manifest(&out_dir, "experiment", config, &[summary_path])?;
    Ok(())
}
