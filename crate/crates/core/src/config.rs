//! Flat `key = value` run configuration. Lines starting with `#` are
//! comments. Every key is optional; missing keys keep their defaults.

use std::fmt::Display;
use std::str::FromStr;

use crate::bp_model::ModelConfig;
use crate::error::{Error, Result};
use crate::morpho_grid::GridConfig;
use crate::signal_prep::PrepConfig;
use crate::synth_oscillometry::SyntheticCohortConfig;
use crate::trainer::{derive_seed, TrainingConfig};

/// Fold index reserved for the synthetic cohort stream of the master seed.
const SYNTH_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub n_runs: usize,
    pub prep: PrepConfig,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub train: TrainingConfig,
    pub synth: SyntheticCohortConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_runs: 1,
            prep: PrepConfig::default(),
            grid: GridConfig::default(),
            model: ModelConfig::default(),
            train: TrainingConfig::default(),
            synth: SyntheticCohortConfig::default(),
        }
        .with_seed(0)
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {raw:?}")))
}

fn pair(key: &str, raw: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    match parts[..] {
        [a, b] => Ok((value(key, a)?, value(key, b)?)),
        _ => Err(Error::InvalidConfig(format!("{key}: expected \"min,max\", got {raw:?}"))),
    }
}

fn list(key: &str, raw: &str) -> Result<Vec<usize>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|v| value(key, v.trim())).collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses configuration text on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            config.set(key.trim(), raw.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let (p, g, m, t, s) = (
            &mut self.prep,
            &mut self.grid,
            &mut self.model,
            &mut self.train,
            &mut self.synth,
        );
        match key {
            "seed" => self.seed = value(key, raw)?,
            "n_runs" => self.n_runs = value(key, raw)?,
            "prep.hp_cutoff_hz" => p.hp_cutoff_hz = value(key, raw)?,
            "prep.hp_order" => p.hp_order = value(key, raw)?,
            "prep.lp_cutoff_hz" => p.lp_cutoff_hz = value(key, raw)?,
            "prep.lp_order" => p.lp_order = value(key, raw)?,
            "prep.working_rate_hz" => p.working_rate_hz = value(key, raw)?,
            "prep.ampd_window_s" => p.ampd_window_s = value(key, raw)?,
            "prep.peak_dedup_s" => p.peak_dedup_s = value(key, raw)?,
            "prep.trough_half_width" => p.trough_half_width = value(key, raw)?,
            "prep.duration_tolerance_s" => p.duration_tolerance_s = value(key, raw)?,
            "prep.mz_threshold" => p.mz_threshold = value(key, raw)?,
            "grid.p_min" => g.p_min = value(key, raw)?,
            "grid.p_max" => g.p_max = value(key, raw)?,
            "grid.clamp_extrapolation" => g.clamp_extrapolation = value(key, raw)?,
            "model.n_kernels" => m.n_kernels = value(key, raw)?,
            "model.kernel_width" => m.kernel_width = value(key, raw)?,
            "model.lstm_layers" => m.lstm_layers = value(key, raw)?,
            "model.lstm_hidden" => m.lstm_hidden = value(key, raw)?,
            "model.dense_widths" => m.dense_widths = list(key, raw)?,
            "model.reverse_sequence" => m.reverse_sequence = value(key, raw)?,
            "train.initial_lr" => t.initial_lr = value(key, raw)?,
            "train.lr_patience" => t.lr_patience = value(key, raw)?,
            "train.lr_factor" => t.lr_factor = value(key, raw)?,
            "train.early_stop_patience" => t.early_stop_patience = value(key, raw)?,
            "train.l1_lambda" => t.l1_lambda = value(key, raw)?,
            "train.max_epochs" => t.max_epochs = value(key, raw)?,
            "train.optimizer" => t.optimizer = value(key, raw)?,
            "train.standardize_targets" => t.standardize_targets = value(key, raw)?,
            "synth.n_subjects" => s.n_subjects = value(key, raw)?,
            "synth.records_per_subject" => s.records_per_subject = value(key, raw)?,
            "synth.sbp_range" => s.sbp_range = pair(key, raw)?,
            "synth.dbp_range" => s.dbp_range = pair(key, raw)?,
            "synth.heart_rate_range" => s.heart_rate_range = pair(key, raw)?,
            "synth.deflation_rate" => s.deflation_rate = value(key, raw)?,
            "synth.envelope_asymmetry" => s.envelope_asymmetry = value(key, raw)?,
            "synth.amplitude_range" => s.amplitude_range = pair(key, raw)?,
            "synth.noise_sd" => s.noise_sd = value(key, raw)?,
            "synth.artifact_rate" => s.artifact_rate = value(key, raw)?,
            "synth.sampling_rate" => s.sampling_rate = value(key, raw)?,
            "synth.sys_ratio" => s.sys_ratio = value(key, raw)?,
            "synth.dia_ratio" => s.dia_ratio = value(key, raw)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        self.sync_seeds();
        Ok(())
    }

    /// Grid size and seeds follow from other keys.
    fn sync_seeds(&mut self) {
        self.model.grid_size = self.grid.size();
        self.train.seed = self.seed;
        self.synth.seed = derive_seed(self.seed, 0, SYNTH_STREAM);
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sync_seeds();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidConfig("n_runs must be at least 1".into()));
        }
        self.prep.validate()?;
        self.grid.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()
    }

    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (p, g, m, t, s) = (&self.prep, &self.grid, &self.model, &self.train, &self.synth);
        let range = |r: (f64, f64)| format!("{},{}", r.0, r.1);
        vec![
            ("seed", self.seed.to_string()),
            ("n_runs", self.n_runs.to_string()),
            ("prep.hp_cutoff_hz", p.hp_cutoff_hz.to_string()),
            ("prep.hp_order", p.hp_order.to_string()),
            ("prep.lp_cutoff_hz", p.lp_cutoff_hz.to_string()),
            ("prep.lp_order", p.lp_order.to_string()),
            ("prep.working_rate_hz", p.working_rate_hz.to_string()),
            ("prep.ampd_window_s", p.ampd_window_s.to_string()),
            ("prep.peak_dedup_s", p.peak_dedup_s.to_string()),
            ("prep.trough_half_width", p.trough_half_width.to_string()),
            ("prep.duration_tolerance_s", p.duration_tolerance_s.to_string()),
            ("prep.mz_threshold", p.mz_threshold.to_string()),
            ("grid.p_min", g.p_min.to_string()),
            ("grid.p_max", g.p_max.to_string()),
            ("grid.clamp_extrapolation", g.clamp_extrapolation.to_string()),
            ("model.n_kernels", m.n_kernels.to_string()),
            ("model.kernel_width", m.kernel_width.to_string()),
            ("model.lstm_layers", m.lstm_layers.to_string()),
            ("model.lstm_hidden", m.lstm_hidden.to_string()),
            ("model.dense_widths", join(&m.dense_widths)),
            ("model.reverse_sequence", m.reverse_sequence.to_string()),
            ("train.initial_lr", t.initial_lr.to_string()),
            ("train.lr_patience", t.lr_patience.to_string()),
            ("train.lr_factor", t.lr_factor.to_string()),
            ("train.early_stop_patience", t.early_stop_patience.to_string()),
            ("train.l1_lambda", t.l1_lambda.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.optimizer", t.optimizer.to_string()),
            ("train.standardize_targets", t.standardize_targets.to_string()),
            ("synth.n_subjects", s.n_subjects.to_string()),
            ("synth.records_per_subject", s.records_per_subject.to_string()),
            ("synth.sbp_range", range(s.sbp_range)),
            ("synth.dbp_range", range(s.dbp_range)),
            ("synth.heart_rate_range", range(s.heart_rate_range)),
            ("synth.deflation_rate", s.deflation_rate.to_string()),
            ("synth.envelope_asymmetry", s.envelope_asymmetry.to_string()),
            ("synth.amplitude_range", range(s.amplitude_range)),
            ("synth.noise_sd", s.noise_sd.to_string()),
            ("synth.artifact_rate", s.artifact_rate.to_string()),
            ("synth.sampling_rate", s.sampling_rate.to_string()),
            ("synth.sys_ratio", s.sys_ratio.to_string()),
            ("synth.dia_ratio", s.dia_ratio.to_string()),
        ]
    }

    /// Text that parses back to this configuration.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
