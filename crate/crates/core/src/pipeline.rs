//! Config-driven experiment pipeline.
//!
//! A TOML file describes the scenario and the stages to run; every stage
//! reads its inputs from the output directory of the previous stages, so the
//! whole experiment is reproducible from (config, seeds) alone.
//!
//! Stages and their artifacts:
//! * `gen-data` — generate, SNR-filter and split the dataset
//!   (`dataset_train.cmx`, `dataset_val.cmx`, `dataset_test.cmx`, or
//!   `dataset_all.cmx` when no split is configured).
//! * `build-codebook` — learn one codebook per configured side
//!   (`codebook_<side>.cbk`).
//! * `label` — optimal feedback indices of the training set
//!   (`labels_<side>.csv`).
//! * `train-encoder` — random search over encoder hyperparameters
//!   (`encoder_<side>.enc`, `search_<side>.csv`).
//! * `evaluate` — boxplot statistics per strategy (`report.txt`,
//!   `fig2_box.csv`).
//! * `sweep-pilots` — mean SE over pilot counts, training one encoder per
//!   (side, n_p) as needed (`encoder_np<n>_<side>.enc`, `fig3_sweep.csv`,
//!   `sweep.txt`).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::capacity::all_train_data_codebook;
use crate::channel::{filter_by_snr, generate_paired_dataset, split_dataset, Dataset};
use crate::codebook::{learn_codebook, LloydOptions, PgdOptions};
use crate::config::{dbm_to_mw, Side, SystemConfig};
use crate::error::{Error, Result};
use crate::estimation::pilot_matrix;
use crate::eval::{
    boxplot_stats, evaluate_strategy, pilot_sweep, EvalAssets, EvalOptions, EvalReport,
    StrategyKind, StrategySpec, SweepTable,
};
use crate::io::{read_cbk, read_cmx, read_enc, write_cbk, write_cmx, write_enc};
use crate::nn::search::{random_search, SearchSpace, TrialRecord};
use crate::nn::{build_labels, EncoderModel};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_p: usize,
    /// Linear transmit power; alternatively `rho_dbm`.
    pub rho: Option<f64>,
    pub rho_dbm: Option<f64>,
    /// Linear noise variance; alternatively `sigma_n2_dbm`.
    pub sigma_n2: Option<f64>,
    pub sigma_n2_dbm: Option<f64>,
    pub f_ul_hz: f64,
    pub f_dl_hz: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub snr_lo_db: f64,
    pub snr_hi_db: f64,
    /// Which side's SNR decides; defaults to the DL channel.
    pub side: Option<Side>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: usize,
    pub val: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PgdSection {
    pub max_iters: Option<usize>,
    pub armijo_beta: Option<f64>,
    pub armijo_sigma: Option<f64>,
    pub alpha_init: Option<f64>,
    pub grad_tol: Option<f64>,
    pub obj_tol: Option<f64>,
    pub max_backtracks: Option<usize>,
}

impl PgdSection {
    fn to_options(&self) -> PgdOptions {
        let d = PgdOptions::default();
        PgdOptions {
            max_pgd_iters: self.max_iters.unwrap_or(d.max_pgd_iters),
            armijo_beta: self.armijo_beta.unwrap_or(d.armijo_beta),
            armijo_sigma: self.armijo_sigma.unwrap_or(d.armijo_sigma),
            alpha_init: self.alpha_init.unwrap_or(d.alpha_init),
            grad_tol: self.grad_tol.unwrap_or(d.grad_tol),
            obj_tol: self.obj_tol.unwrap_or(d.obj_tol),
            max_backtracks: self.max_backtracks.unwrap_or(d.max_backtracks),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSection {
    pub m_bits: u32,
    pub sources: Vec<Side>,
    pub seed: u64,
    pub max_lloyd_iters: Option<usize>,
    pub conv_tol: Option<f64>,
    pub pgd: Option<PgdSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub sources: Vec<Side>,
    pub budget: usize,
    pub seed: u64,
    /// `"desk"` (default) or `"full"`.
    pub space: Option<String>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    /// Seed for the pilot-noise observations of the labeled sets.
    pub obs_seed: Option<u64>,
}

impl EncoderSection {
    fn search_space(&self) -> Result<SearchSpace> {
        let mut space = match self.space.as_deref() {
            None | Some("desk") => SearchSpace::desk(),
            Some("full") => SearchSpace::full_scale(),
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown search space '{other}' (expected 'desk' or 'full')"
                )))
            }
        };
        if let Some(e) = self.epochs {
            space.epochs = e;
        }
        if let Some(p) = self.patience {
            space.early_stop_patience = p;
        }
        Ok(space)
    }

    fn obs_seed(&self) -> u64 {
        self.obs_seed.unwrap_or_else(|| derive_seed(self.seed, 0x0b5eed))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub strategies: Vec<String>,
    pub seed: u64,
    pub oversampling: Option<usize>,
    pub omp_s_max: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub pilot_counts: Vec<usize>,
    pub strategies: Vec<String>,
    pub seed: u64,
    /// Encoder search budget per (side, pilot count); defaults to the
    /// encoder section's budget.
    pub budget: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub generate: Option<GenerateSection>,
    pub filter: Option<FilterSection>,
    pub split: Option<SplitSection>,
    pub codebook: Option<CodebookSection>,
    pub encoder: Option<EncoderSection>,
    pub evaluate: Option<EvaluateSection>,
    pub sweep: Option<SweepSection>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        cfg.system_config()?; // validate eagerly
        Ok(cfg)
    }

    /// Resolves the `[system]` section, converting dBm fields when given.
    pub fn system_config(&self) -> Result<SystemConfig> {
        let s = &self.system;
        let rho = match (s.rho, s.rho_dbm) {
            (Some(v), None) => v,
            (None, Some(dbm)) => dbm_to_mw(dbm),
            _ => {
                return Err(Error::Config(
                    "specify exactly one of rho / rho_dbm".into(),
                ))
            }
        };
        let sigma_n2 = match (s.sigma_n2, s.sigma_n2_dbm) {
            (Some(v), None) => v,
            (None, Some(dbm)) => dbm_to_mw(dbm),
            _ => {
                return Err(Error::Config(
                    "specify exactly one of sigma_n2 / sigma_n2_dbm".into(),
                ))
            }
        };
        SystemConfig::new(s.n_tx, s.n_rx, rho, sigma_n2, s.f_ul_hz, s.f_dl_hz, s.n_p)
    }

    /// Replaces every stage seed with one derived from `seed` (stage
    /// indices: generate 0, split 1, codebook 2, encoder 3, evaluate 4,
    /// sweep 5, observations 6).
    pub fn override_seeds(&mut self, seed: u64) {
        if let Some(g) = &mut self.generate {
            g.seed = derive_seed(seed, 0);
        }
        if let Some(sp) = &mut self.split {
            sp.seed = derive_seed(seed, 1);
        }
        if let Some(cb) = &mut self.codebook {
            cb.seed = derive_seed(seed, 2);
        }
        if let Some(enc) = &mut self.encoder {
            enc.seed = derive_seed(seed, 3);
            enc.obs_seed = Some(derive_seed(seed, 6));
        }
        if let Some(ev) = &mut self.evaluate {
            ev.seed = derive_seed(seed, 4);
        }
        if let Some(sw) = &mut self.sweep {
            sw.seed = derive_seed(seed, 5);
        }
    }

    fn eval_options(&self) -> EvalOptions {
        let defaults = EvalOptions::default();
        match &self.evaluate {
            Some(ev) => EvalOptions {
                oversampling: ev.oversampling.unwrap_or(defaults.oversampling),
                omp_s_max: ev.omp_s_max.unwrap_or(defaults.omp_s_max),
            },
            None => defaults,
        }
    }
}

fn dataset_path(out: &Path, split: &str) -> PathBuf {
    out.join(format!("dataset_{split}.cmx"))
}

fn codebook_path(out: &Path, side: Side) -> PathBuf {
    out.join(format!("codebook_{}.cbk", side.label()))
}

fn encoder_path(out: &Path, side: Side) -> PathBuf {
    out.join(format!("encoder_{}.enc", side.label()))
}

fn sweep_encoder_path(out: &Path, side: Side, n_p: usize) -> PathBuf {
    out.join(format!("encoder_np{}_{}.enc", n_p, side.label()))
}

fn require_section<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::Config(format!("config has no [{name}] section")))
}

fn load_dataset(out: &Path, split: &str, config: &SystemConfig) -> Result<Dataset> {
    let path = dataset_path(out, split);
    if !path.exists() {
        return Err(Error::Config(format!(
            "missing dataset file {} (run gen-data first)",
            path.display()
        )));
    }
    read_cmx(&path, config)
}

/// Stage `gen-data`: generate, filter and split.
pub fn stage_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let system = cfg.system_config()?;
    let gen = require_section(&cfg.generate, "generate")?;
    std::fs::create_dir_all(out)?;

    let mut ds = generate_paired_dataset(&system, gen.count, gen.seed)?;
    if let Some(f) = &cfg.filter {
        ds = filter_by_snr(&ds, f.snr_lo_db, f.snr_hi_db, f.side.unwrap_or(Side::Dl))?;
    }
    match &cfg.split {
        Some(sp) => {
            let (train, val, test) = split_dataset(&ds, sp.train, sp.val, sp.seed)?;
            write_cmx(&dataset_path(out, "train"), &train)?;
            write_cmx(&dataset_path(out, "val"), &val)?;
            write_cmx(&dataset_path(out, "test"), &test)?;
        }
        None => {
            write_cmx(&dataset_path(out, "all"), &ds)?;
        }
    }
    Ok(())
}

/// Stage `build-codebook`: one learned codebook per configured side.
pub fn stage_build_codebook(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let system = cfg.system_config()?;
    let section = require_section(&cfg.codebook, "codebook")?;
    let train = load_dataset(out, "train", &system)?;

    let pgd = section.pgd.clone().unwrap_or_default().to_options();
    for (i, &side) in section.sources.iter().enumerate() {
        let lloyd = LloydOptions {
            max_lloyd_iters: section.max_lloyd_iters.unwrap_or(50),
            conv_tol: section.conv_tol.unwrap_or(1e-5),
            seed: derive_seed(section.seed, i as u64),
            ..LloydOptions::new(0)
        };
        let cb = learn_codebook(&train, side, section.m_bits, &lloyd, &pgd, system.sigma_n2)?;
        write_cbk(&codebook_path(out, side), &cb)?;
    }
    Ok(())
}

/// Stage `label`: optimal feedback indices of the training set.
pub fn stage_label(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let system = cfg.system_config()?;
    let section = require_section(&cfg.encoder, "encoder")?;
    let train = load_dataset(out, "train", &system)?;
    let pilot = pilot_matrix(system.n_tx, system.n_p, system.rho);

    for &side in &section.sources {
        let cb_path = codebook_path(out, side);
        if !cb_path.exists() {
            return Err(Error::Config(format!(
                "missing codebook file {} (run build-codebook first)",
                cb_path.display()
            )));
        }
        let cb = read_cbk(&cb_path, system.n_rx)?;
        let labeled = build_labels(&train, side, &cb, &pilot, system.sigma_n2, section.obs_seed())?;
        let mut csv = String::from("index,label\n");
        for (i, (_, label)) in labeled.items.iter().enumerate() {
            csv.push_str(&format!("{i},{label}\n"));
        }
        std::fs::write(out.join(format!("labels_{}.csv", side.label())), csv)?;
    }
    Ok(())
}

fn search_log_csv(records: &[TrialRecord]) -> String {
    let mut csv = String::from(
        "trial,conv_depth,kernels,activation,batch_size,learning_rate,l1,l2,lr_decay,epochs_run,val_loss,val_accuracy\n",
    );
    for r in records {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.index,
            r.architecture.conv_depth,
            r.architecture.kernels_per_layer,
            r.architecture.activation.as_str(),
            r.train_config.batch_size,
            r.train_config.learning_rate,
            r.train_config.l1,
            r.train_config.l2,
            r.train_config.lr_decay,
            r.epochs_run,
            r.val_loss,
            r.val_accuracy,
        ));
    }
    csv
}

fn train_one_encoder(
    cfg: &ExperimentConfig,
    out: &Path,
    side: Side,
    n_p: usize,
    budget: usize,
    seed: u64,
) -> Result<(EncoderModel, Vec<TrialRecord>)> {
    let system = cfg.system_config()?;
    let section = require_section(&cfg.encoder, "encoder")?;
    let train = load_dataset(out, "train", &system)?;
    let val = load_dataset(out, "val", &system)?;
    let cb_path = codebook_path(out, side);
    if !cb_path.exists() {
        return Err(Error::Config(format!(
            "missing codebook file {} (run build-codebook first)",
            cb_path.display()
        )));
    }
    let cb = read_cbk(&cb_path, system.n_rx)?;
    let pilot = pilot_matrix(system.n_tx, n_p, system.rho);
    let obs_seed = section.obs_seed();
    let train_set = build_labels(&train, side, &cb, &pilot, system.sigma_n2, obs_seed)?;
    let val_set = build_labels(
        &val,
        side,
        &cb,
        &pilot,
        system.sigma_n2,
        derive_seed(obs_seed, 1),
    )?;
    let space = section.search_space()?;
    random_search(&space, budget, &train_set, &val_set, system.n_rx, n_p, seed)
}

/// Stage `train-encoder`: random search at the configured pilot count.
pub fn stage_train_encoder(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let system = cfg.system_config()?;
    let section = require_section(&cfg.encoder, "encoder")?;
    for (i, &side) in section.sources.iter().enumerate() {
        let (model, records) = train_one_encoder(
            cfg,
            out,
            side,
            system.n_p,
            section.budget,
            derive_seed(section.seed, i as u64),
        )?;
        write_enc(&encoder_path(out, side), &model)?;
        std::fs::write(
            out.join(format!("search_{}.csv", side.label())),
            search_log_csv(&records),
        )?;
    }
    Ok(())
}

fn parse_strategies(names: &[String]) -> Result<Vec<StrategySpec>> {
    names.iter().map(|s| s.parse()).collect()
}

/// Loads every asset the given strategies need at the given pilot counts.
fn collect_assets(
    cfg: &ExperimentConfig,
    out: &Path,
    specs: &[StrategySpec],
    pilot_counts: &[usize],
) -> Result<EvalAssets> {
    let system = cfg.system_config()?;
    let mut assets = EvalAssets::default();
    let mut train: Option<Dataset> = None;

    for spec in specs {
        let Some(side) = spec.source else { continue };
        if spec.kind == StrategyKind::AllTrainCb {
            if !assets.all_train.contains_key(&side) {
                if train.is_none() {
                    train = Some(load_dataset(out, "train", &system)?);
                }
                let cb = all_train_data_codebook(train.as_ref().unwrap(), side)?;
                assets.all_train.insert(side, cb);
            }
            continue;
        }
        if !assets.codebooks.contains_key(&side) {
            let path = codebook_path(out, side);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "missing codebook file {} (run build-codebook first)",
                    path.display()
                )));
            }
            assets.codebooks.insert(side, read_cbk(&path, system.n_rx)?);
        }
        if spec.kind == StrategyKind::Dnn {
            for &n_p in pilot_counts {
                if assets.encoders.contains_key(&(side, n_p)) {
                    continue;
                }
                let path = if n_p == system.n_p {
                    encoder_path(out, side)
                } else {
                    sweep_encoder_path(out, side, n_p)
                };
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "missing encoder file {} (run train-encoder or sweep-pilots first)",
                        path.display()
                    )));
                }
                assets.encoders.insert((side, n_p), read_enc(&path)?);
            }
        }
    }
    Ok(assets)
}

/// Stage `evaluate`: boxplot statistics on the test split.
pub fn stage_evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<EvalReport> {
    let system = cfg.system_config()?;
    let section = require_section(&cfg.evaluate, "evaluate")?;
    let specs = parse_strategies(&section.strategies)?;
    let test = load_dataset(out, "test", &system)?;
    let assets = collect_assets(cfg, out, &specs, &[system.n_p])?;
    let opts = cfg.eval_options();

    let mut report = EvalReport::default();
    for spec in &specs {
        let values = evaluate_strategy(spec, &test, &assets, &opts, section.seed)?;
        report.box_rows.push((spec.label(), boxplot_stats(&values)?));
    }
    std::fs::write(out.join("report.txt"), report.to_text())?;
    std::fs::write(out.join("fig2_box.csv"), report.boxplot_csv())?;
    Ok(report)
}

/// Stage `sweep-pilots`: mean SE over pilot counts, training the encoders
/// each pilot count needs.
pub fn stage_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepTable> {
    let system = cfg.system_config()?;
    let section = require_section(&cfg.sweep, "sweep")?;
    let specs = parse_strategies(&section.strategies)?;
    let test = load_dataset(out, "test", &system)?;

    // Train any encoders the sweep needs before collecting assets.
    let dnn_sides: BTreeSet<Side> = specs
        .iter()
        .filter(|s| s.kind == StrategyKind::Dnn)
        .filter_map(|s| s.source)
        .collect();
    if !dnn_sides.is_empty() {
        let encoder = require_section(&cfg.encoder, "encoder")?;
        let budget = section.budget.unwrap_or(encoder.budget);
        for (si, &side) in dnn_sides.iter().enumerate() {
            for (pi, &n_p) in section.pilot_counts.iter().enumerate() {
                let path = if n_p == system.n_p {
                    encoder_path(out, side)
                } else {
                    sweep_encoder_path(out, side, n_p)
                };
                if path.exists() {
                    continue;
                }
                let seed = derive_seed(section.seed, (si * 64 + pi) as u64);
                let (model, _) = train_one_encoder(cfg, out, side, n_p, budget, seed)?;
                write_enc(&path, &model)?;
            }
        }
    }

    let assets = collect_assets(cfg, out, &specs, &section.pilot_counts)?;
    let table = pilot_sweep(
        &specs,
        &test,
        &assets,
        &section.pilot_counts,
        &cfg.eval_options(),
        section.seed,
    )?;
    let report = EvalReport {
        box_rows: Vec::new(),
        sweep: Some(table.clone()),
    };
    std::fs::write(out.join("sweep.txt"), report.to_text())?;
    if let Some(csv) = report.sweep_csv() {
        std::fs::write(out.join("fig3_sweep.csv"), csv)?;
    }
    Ok(table)
}

/// Which stages ran, plus the evaluation outputs.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub stages_run: Vec<String>,
    pub report: EvalReport,
}

/// Runs every configured stage in pipeline order; failures carry the stage
/// name.
pub fn run_experiment(
    config_path: &Path,
    out: &Path,
    seed_override: Option<u64>,
) -> Result<RunSummary> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        cfg.override_seeds(seed);
    }
    let mut summary = RunSummary::default();

    if cfg.generate.is_some() {
        stage_gen_data(&cfg, out).map_err(|e| e.in_stage("gen-data"))?;
        summary.stages_run.push("gen-data".into());
    }
    if cfg.codebook.is_some() {
        stage_build_codebook(&cfg, out).map_err(|e| e.in_stage("build-codebook"))?;
        summary.stages_run.push("build-codebook".into());
    }
    if cfg.encoder.is_some() {
        stage_label(&cfg, out).map_err(|e| e.in_stage("label"))?;
        summary.stages_run.push("label".into());
        stage_train_encoder(&cfg, out).map_err(|e| e.in_stage("train-encoder"))?;
        summary.stages_run.push("train-encoder".into());
    }
    if cfg.evaluate.is_some() {
        summary.report = stage_evaluate(&cfg, out).map_err(|e| e.in_stage("evaluate"))?;
        summary.stages_run.push("evaluate".into());
    }
    if cfg.sweep.is_some() {
        summary.report.sweep =
            Some(stage_sweep(&cfg, out).map_err(|e| e.in_stage("sweep-pilots"))?);
        summary.stages_run.push("sweep-pilots".into());
    }
    Ok(summary)
}
