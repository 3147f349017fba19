//! Strategy evaluation: per-channel spectral efficiencies, boxplot
//! statistics and pilot-count sweeps.
//!
//! Every strategy is scored against the true DL channel of the evaluation
//! set. Estimate- and encoder-based strategies share one pilot observation
//! per (channel, seed), so comparisons are paired.

use std::collections::BTreeMap;

use crate::capacity::{
    se_raw, spectral_efficiency, uniform_eigenspace_cov, uniform_power_cov, waterfilling_cov,
};
use crate::channel::Dataset;
use crate::codebook::Codebook;
use crate::config::Side;
use crate::error::{Error, Result};
use crate::estimation::{
    build_dictionary, genie_omp_estimate, ls_estimate, observe, pilot_matrix, select_index,
};
use crate::nn::EncoderModel;
use crate::rng::derive_seed;

/// The transmit strategies of the evaluation roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StrategyKind {
    /// `Q = (rho / n_tx) I`, no channel knowledge.
    UniformPower,
    /// Water-filling on the true channel (capacity upper bound).
    WfTrue,
    /// Equal power on the true channel's eigenvectors.
    UniEigspTrue,
    /// Codebook selection with the true channel.
    CbTrueCsi,
    /// Codebook selection with the LS estimate.
    CbLs,
    /// Codebook selection with the genie-aided OMP estimate.
    CbOmp,
    /// Water-filling on the LS estimate.
    WfLs,
    /// Water-filling on the OMP estimate.
    WfOmp,
    /// Encoder predicts the feedback index from the raw observation.
    Dnn,
    /// Selection over the all-train-data codebook with the true channel.
    AllTrainCb,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::UniformPower => "uniform-power",
            StrategyKind::WfTrue => "wf-true",
            StrategyKind::UniEigspTrue => "uni-eigsp-true",
            StrategyKind::CbTrueCsi => "cb-true-csi",
            StrategyKind::CbLs => "cb-ls",
            StrategyKind::CbOmp => "cb-omp",
            StrategyKind::WfLs => "wf-ls",
            StrategyKind::WfOmp => "wf-omp",
            StrategyKind::Dnn => "dnn",
            StrategyKind::AllTrainCb => "all-train-cb",
        }
    }

    /// Whether the strategy consumes a learned codebook / encoder asset.
    fn needs_source(self) -> bool {
        matches!(
            self,
            StrategyKind::CbTrueCsi
                | StrategyKind::CbLs
                | StrategyKind::CbOmp
                | StrategyKind::Dnn
                | StrategyKind::AllTrainCb
        )
    }

    fn needs_full_pilots(self) -> bool {
        matches!(self, StrategyKind::CbLs | StrategyKind::WfLs)
    }
}

/// A strategy plus the training side of the codebook/encoder it uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub source: Option<Side>,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, source: Option<Side>) -> Result<Self> {
        let spec = StrategySpec { kind, source };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind.needs_source(), self.source) {
            (true, None) => Err(Error::Config(format!(
                "strategy '{}' needs a codebook source (ul or dl)",
                self.kind.as_str()
            ))),
            (false, Some(_)) => Err(Error::Config(format!(
                "strategy '{}' does not take a codebook source",
                self.kind.as_str()
            ))),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self.source {
            Some(side) => format!("{}@{}", self.kind.as_str(), side.label()),
            None => self.kind.as_str().to_string(),
        }
    }
}

impl std::str::FromStr for StrategySpec {
    type Err = Error;

    /// Parses `kind` or `kind@source`, e.g. `"cb-true-csi@ul"`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind_str, source) = match s.split_once('@') {
            Some((k, src)) => (k, Some(src.parse::<Side>()?)),
            None => (s, None),
        };
        let kind = match kind_str {
            "uniform-power" => StrategyKind::UniformPower,
            "wf-true" => StrategyKind::WfTrue,
            "uni-eigsp-true" => StrategyKind::UniEigspTrue,
            "cb-true-csi" => StrategyKind::CbTrueCsi,
            "cb-ls" => StrategyKind::CbLs,
            "cb-omp" => StrategyKind::CbOmp,
            "wf-ls" => StrategyKind::WfLs,
            "wf-omp" => StrategyKind::WfOmp,
            "dnn" => StrategyKind::Dnn,
            "all-train-cb" => StrategyKind::AllTrainCb,
            other => return Err(Error::Config(format!("unknown strategy '{other}'"))),
        };
        StrategySpec::new(kind, source)
    }
}

/// Learned artifacts the evaluator can draw on. Encoders are keyed by
/// (training side, pilot count) because the input width is pilot-dependent.
#[derive(Debug, Clone, Default)]
pub struct EvalAssets {
    pub codebooks: BTreeMap<Side, Codebook>,
    pub all_train: BTreeMap<Side, Codebook>,
    pub encoders: BTreeMap<(Side, usize), EncoderModel>,
}

impl EvalAssets {
    fn codebook(&self, side: Side) -> Result<&Codebook> {
        self.codebooks
            .get(&side)
            .ok_or_else(|| Error::Config(format!("missing {} codebook", side.label())))
    }

    fn all_train(&self, side: Side) -> Result<&Codebook> {
        self.all_train
            .get(&side)
            .ok_or_else(|| Error::Config(format!("missing {} all-train codebook", side.label())))
    }

    fn encoder(&self, side: Side, n_p: usize) -> Result<&EncoderModel> {
        self.encoders.get(&(side, n_p)).ok_or_else(|| {
            Error::Config(format!(
                "missing {} encoder for n_p = {n_p}",
                side.label()
            ))
        })
    }
}

/// Knobs for the estimate-based strategies.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Dictionary oversampling for OMP.
    pub oversampling: usize,
    /// Genie-aided OMP tries sparsity orders `1..=omp_s_max`.
    pub omp_s_max: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            oversampling: 2,
            omp_s_max: 8,
        }
    }
}

/// Boxplot summary of a spectral-efficiency distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxplotStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub mean: f64,
}

/// Quartiles by linear interpolation; whiskers at the most extreme data
/// points within 1.5 interquartile ranges of the nearer quartile.
pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::Size("cannot summarize an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let quantile = |p: f64| -> f64 {
        let pos = (sorted.len() - 1) as f64 * p;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    };
    let q1 = quantile(0.25);
    let median = quantile(0.5);
    let q3 = quantile(0.75);
    let iqr = q3 - q1;
    let hi_fence = q3 + 1.5 * iqr;
    let lo_fence = q1 - 1.5 * iqr;
    let whisker_hi = sorted
        .iter()
        .rev()
        .find(|&&v| v <= hi_fence)
        .copied()
        .unwrap_or(q3);
    let whisker_lo = sorted
        .iter()
        .find(|&&v| v >= lo_fence)
        .copied()
        .unwrap_or(q1);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(BoxplotStats {
        median,
        q1,
        q3,
        whisker_lo,
        whisker_hi,
        mean,
    })
}

/// Per-channel spectral efficiencies of `spec` on the evaluation set.
///
/// Channel `i` draws its pilot noise from `(seed, i)`; every strategy sees
/// the identical observation for the same (channel, seed).
pub fn evaluate_strategy(
    spec: &StrategySpec,
    eval_ds: &Dataset,
    assets: &EvalAssets,
    opts: &EvalOptions,
    seed: u64,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if eval_ds.is_empty() {
        return Err(Error::Size("evaluation set is empty".into()));
    }
    let cfg = &eval_ds.config;
    let sigma_n2 = cfg.sigma_n2;
    let n_p = cfg.n_p;
    if spec.kind.needs_full_pilots() && n_p < cfg.n_tx {
        return Err(Error::Config(format!(
            "strategy '{}' needs n_p >= n_tx (have n_p = {n_p})",
            spec.kind.as_str()
        )));
    }

    let pilot = pilot_matrix(cfg.n_tx, n_p, cfg.rho);
    let dict = build_dictionary(cfg.n_rx, cfg.n_tx, opts.oversampling)?;
    let s_max = opts.omp_s_max.min(dict.atom_count());
    let uniform = uniform_power_cov(cfg);

    let mut out = Vec::with_capacity(eval_ds.len());
    for (i, sample) in eval_ds.samples.iter().enumerate() {
        let h_true = &sample.h_dl;
        let se = match spec.kind {
            StrategyKind::UniformPower => spectral_efficiency(h_true, &uniform, sigma_n2)?,
            StrategyKind::WfTrue => {
                let q = waterfilling_cov(h_true, cfg.rho, sigma_n2)?;
                spectral_efficiency(h_true, &q, sigma_n2)?
            }
            StrategyKind::UniEigspTrue => {
                let q = uniform_eigenspace_cov(h_true, cfg.rho)?;
                spectral_efficiency(h_true, &q, sigma_n2)?
            }
            StrategyKind::CbTrueCsi | StrategyKind::AllTrainCb => {
                let side = spec.source.expect("validated");
                let cb = if spec.kind == StrategyKind::AllTrainCb {
                    assets.all_train(side)?
                } else {
                    assets.codebook(side)?
                };
                let k = select_index(h_true, cb, sigma_n2)?;
                se_raw(h_true, cb.entries[k].matrix(), sigma_n2)?
            }
            StrategyKind::CbLs | StrategyKind::CbOmp => {
                let side = spec.source.expect("validated");
                let cb = assets.codebook(side)?;
                let obs = observe(h_true, &pilot, sigma_n2, derive_seed(seed, i as u64))?;
                let h_est = if spec.kind == StrategyKind::CbLs {
                    ls_estimate(&obs)?
                } else {
                    genie_omp_estimate(&obs, &dict, h_true, s_max)?
                };
                let k = select_index(&h_est, cb, sigma_n2)?;
                se_raw(h_true, cb.entries[k].matrix(), sigma_n2)?
            }
            StrategyKind::WfLs | StrategyKind::WfOmp => {
                let obs = observe(h_true, &pilot, sigma_n2, derive_seed(seed, i as u64))?;
                let h_est = if spec.kind == StrategyKind::WfLs {
                    ls_estimate(&obs)?
                } else {
                    genie_omp_estimate(&obs, &dict, h_true, s_max)?
                };
                let q = waterfilling_cov(&h_est, cfg.rho, sigma_n2)?;
                spectral_efficiency(h_true, &q, sigma_n2)?
            }
            StrategyKind::Dnn => {
                let side = spec.source.expect("validated");
                let cb = assets.codebook(side)?;
                let model = assets.encoder(side, n_p)?;
                let obs = observe(h_true, &pilot, sigma_n2, derive_seed(seed, i as u64))?;
                let k = model.predict_index(&obs.y)?;
                if k >= cb.k() {
                    return Err(Error::Config(format!(
                        "encoder predicts {} classes, codebook has {}",
                        k + 1,
                        cb.k()
                    )));
                }
                se_raw(h_true, cb.entries[k].matrix(), sigma_n2)?
            }
        };
        out.push(se);
    }
    Ok(out)
}

/// Mean spectral efficiency per (strategy, pilot count). Strategies that
/// need `n_p >= n_tx` are evaluated only at valid counts (`None` elsewhere).
#[derive(Debug, Clone)]
pub struct SweepTable {
    pub pilot_counts: Vec<usize>,
    /// (strategy label, mean SE per pilot count).
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

pub fn pilot_sweep(
    specs: &[StrategySpec],
    eval_ds: &Dataset,
    assets: &EvalAssets,
    pilot_counts: &[usize],
    opts: &EvalOptions,
    seed: u64,
) -> Result<SweepTable> {
    for &n_p in pilot_counts {
        if n_p == 0 || n_p > eval_ds.config.n_tx {
            return Err(Error::Config(format!(
                "pilot count {n_p} outside 1..=n_tx"
            )));
        }
    }
    let mut rows: Vec<(String, Vec<Option<f64>>)> = specs
        .iter()
        .map(|s| (s.label(), Vec::with_capacity(pilot_counts.len())))
        .collect();
    for &n_p in pilot_counts {
        let mut ds = eval_ds.clone();
        ds.config.n_p = n_p;
        for (spec, row) in specs.iter().zip(rows.iter_mut()) {
            let skip = spec.kind.needs_full_pilots() && n_p < ds.config.n_tx;
            if skip {
                row.1.push(None);
                continue;
            }
            let values = evaluate_strategy(spec, &ds, assets, opts, seed)?;
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            row.1.push(Some(mean));
        }
    }
    Ok(SweepTable {
        pilot_counts: pilot_counts.to_vec(),
        rows,
    })
}

/// Per-strategy boxplot statistics plus an optional pilot sweep.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub box_rows: Vec<(String, BoxplotStats)>,
    pub sweep: Option<SweepTable>,
}

impl EvalReport {
    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("spectral efficiency [bits/c.u.]\n");
        out.push_str(&format!(
            "{:<24} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "strategy", "mean", "median", "q1", "q3", "whisk_lo", "whisk_hi"
        ));
        for (label, s) in &self.box_rows {
            out.push_str(&format!(
                "{:<24} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
                label, s.mean, s.median, s.q1, s.q3, s.whisker_lo, s.whisker_hi
            ));
        }
        if let Some(sweep) = &self.sweep {
            out.push_str("\nmean spectral efficiency over pilot count\n");
            out.push_str(&format!("{:<24}", "strategy"));
            for n_p in &sweep.pilot_counts {
                out.push_str(&format!(" {:>10}", format!("n_p={n_p}")));
            }
            out.push('\n');
            for (label, values) in &sweep.rows {
                out.push_str(&format!("{:<24}", label));
                for v in values {
                    match v {
                        Some(x) => out.push_str(&format!(" {:>10.4}", x)),
                        None => out.push_str(&format!(" {:>10}", "-")),
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// CSV with one row per strategy (boxplot figure analog).
    pub fn boxplot_csv(&self) -> String {
        let mut out = String::from("strategy,mean,median,q1,q3,whisker_lo,whisker_hi\n");
        for (label, s) in &self.box_rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                label, s.mean, s.median, s.q1, s.q3, s.whisker_lo, s.whisker_hi
            ));
        }
        out
    }

    /// Long-format CSV of the pilot sweep (sweep figure analog).
    pub fn sweep_csv(&self) -> Option<String> {
        let sweep = self.sweep.as_ref()?;
        let mut out = String::from("strategy,n_p,mean_se\n");
        for (label, values) in &sweep.rows {
            for (n_p, v) in sweep.pilot_counts.iter().zip(values.iter()) {
                if let Some(x) = v {
                    out.push_str(&format!("{label},{n_p},{x}\n"));
                }
            }
        }
        Some(out)
    }
}
