use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::score_table;
use crate::cohort::{subsample_labeled_patients, Cohort, Sample, Split};
use crate::config::{Config, SweepConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalOptions, MissingPolicy};
use crate::model::EncoderSpec;
use crate::rng::{derive_seed, tag};
use crate::training::{self, LossVariant, TrainConfig};

/// One experimental arm: the single-stage baseline, or a pretraining
/// objective followed by fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    Scratch,
    Pretrained { loss: LossVariant, dae: bool },
}

impl Arm {
    pub fn needs_labels_for_pretraining(self) -> bool {
        matches!(self, Arm::Pretrained { loss, .. } if loss.needs_labels())
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::Scratch => f.write_str("scratch"),
            Arm::Pretrained {
                loss: LossVariant::DaeOnly,
                ..
            } => f.write_str("dae"),
            Arm::Pretrained { loss, dae: false } => f.write_str(loss.as_str()),
            Arm::Pretrained { loss, dae: true } => write!(f, "{}-dae", loss.as_str()),
        }
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "scratch" {
            return Ok(Arm::Scratch);
        }
        if s == "dae" {
            return Ok(Arm::Pretrained {
                loss: LossVariant::DaeOnly,
                dae: true,
            });
        }
        let (name, dae) = match s.strip_suffix("-dae") {
            Some(n) => (n, true),
            None => (s, false),
        };
        let loss: LossVariant = name
            .parse()
            .map_err(|_| Error::Config(format!("unknown sweep arm `{s}`")))?;
        if loss == LossVariant::DaeOnly {
            return Err(Error::Config(format!("unknown sweep arm `{s}`")));
        }
        Ok(Arm::Pretrained { loss, dae })
    }
}

impl Serialize for Arm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Arm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub n_labeled: Vec<usize>,
    pub arms: Vec<Arm>,
    pub repetitions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub arm: Arm,
    pub n_labeled: usize,
    pub rep: usize,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-n{}-rep{}", self.arm, self.n_labeled, self.rep)
    }
}

impl SweepSpec {
    pub fn from_config(c: &SweepConfig) -> Result<Self> {
        let arms = c.arms.iter().map(|a| a.parse()).collect::<Result<Vec<Arm>>>()?;
        Ok(Self {
            n_labeled: c.n_labeled.clone(),
            arms,
            repetitions: c.repetitions,
        })
    }

    pub fn validate(&self, train_patients: usize) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if let Some(&n) = self.n_labeled.iter().find(|&&n| n == 0 || n > train_patients) {
            return Err(Error::Config(format!(
                "labeled-patient count {n} outside 1..={train_patients}"
            )));
        }
        Ok(())
    }

    /// All cells in canonical order: arm as listed, then count, then rep.
    pub fn cells(&self) -> Vec<Cell> {
        let mut counts = self.n_labeled.clone();
        counts.sort_unstable();
        counts.dedup();
        let mut out = Vec::new();
        for &arm in &self.arms {
            for &n in &counts {
                for rep in 0..self.repetitions {
                    out.push(Cell {
                        arm,
                        n_labeled: n,
                        rep,
                    });
                }
            }
        }
        out
    }
}

/// One line of the sweep table. Metric columns are empty when undefined or
/// when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub arm: Arm,
    pub n_labeled: usize,
    pub rep: usize,
    pub seed: u64,
    pub status: String,
    pub n_labeled_samples: usize,
    pub best_val_mae: Option<f64>,
    pub cs_icc31: Option<f64>,
    pub cs_icc31_low: Option<f64>,
    pub cs_icc31_high: Option<f64>,
    pub cs_icc21: Option<f64>,
    pub cs_rmse: Option<f64>,
    pub cs_rmse_low: Option<f64>,
    pub cs_rmse_high: Option<f64>,
    pub pr_icc31: Option<f64>,
    pub pr_icc31_low: Option<f64>,
    pub pr_icc31_high: Option<f64>,
    pub pr_icc21: Option<f64>,
    pub pr_rmse: Option<f64>,
    pub pr_rmse_low: Option<f64>,
    pub pr_rmse_high: Option<f64>,
    pub c: Option<f64>,
}

impl SweepRow {
    pub fn empty(cell: Cell, seed: u64, status: String) -> Self {
        Self {
            arm: cell.arm,
            n_labeled: cell.n_labeled,
            rep: cell.rep,
            seed,
            status,
            n_labeled_samples: 0,
            best_val_mae: None,
            cs_icc31: None,
            cs_icc31_low: None,
            cs_icc31_high: None,
            cs_icc21: None,
            cs_rmse: None,
            cs_rmse_low: None,
            cs_rmse_high: None,
            pr_icc31: None,
            pr_icc31_low: None,
            pr_icc31_high: None,
            pr_icc21: None,
            pr_rmse: None,
            pr_rmse_low: None,
            pr_rmse_high: None,
            c: None,
        }
    }

    pub fn cell(&self) -> Cell {
        Cell {
            arm: self.arm,
            n_labeled: self.n_labeled,
            rep: self.rep,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub fn write_sweep_table<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Other(format!("csv write: {e}")))?;
    }
    if rows.is_empty() {
        w.write_record(SWEEP_HEADER)
            .map_err(|e| Error::Other(format!("csv write: {e}")))?;
    }
    w.flush().map_err(|e| Error::Other(format!("csv flush: {e}")))?;
    Ok(())
}

pub const SWEEP_HEADER: [&str; 22] = [
    "arm",
    "n_labeled",
    "rep",
    "seed",
    "status",
    "n_labeled_samples",
    "best_val_mae",
    "cs_icc31",
    "cs_icc31_low",
    "cs_icc31_high",
    "cs_icc21",
    "cs_rmse",
    "cs_rmse_low",
    "cs_rmse_high",
    "pr_icc31",
    "pr_icc31_low",
    "pr_icc31_high",
    "pr_icc21",
    "pr_rmse",
    "pr_rmse_low",
    "pr_rmse_high",
    "c",
];

pub fn read_sweep_table<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Seed of repetition `rep`, shared by every arm and labeled count so that
/// arms are compared on identical label subsets.
pub fn rep_seed(base: u64, rep: usize) -> u64 {
    derive_seed(base, &[tag("repetition"), rep as u64])
}

fn cell_train_config(config: &Config, rep: usize) -> TrainConfig {
    TrainConfig {
        seed: rep_seed(config.train.seed, rep),
        ..config.train.clone()
    }
}

/// Stage-1 encoder for a label-free arm, or `None` for the baseline.
/// Label-ranked arms must be pretrained per cell instead.
pub fn pretrain_arm(cohort: &Cohort, arm: Arm, rep: usize, config: &Config) -> Result<Option<EncoderSpec>> {
    match arm {
        Arm::Scratch => Ok(None),
        Arm::Pretrained { loss, dae } => {
            let tc = cell_train_config(config, rep);
            Ok(Some(training::pretrain(cohort, loss, dae, &tc)?.encoder))
        }
    }
}

pub fn eval_options(config: &Config, seed: u64) -> EvalOptions {
    EvalOptions {
        bootstrap_resamples: config.eval.bootstrap_resamples,
        cluster_by_patient: config.eval.cluster_by_patient,
        seed,
        policy: MissingPolicy {
            max_missing_fraction: config.eval.max_missing_fraction,
            score_max: BTreeMap::new(),
            default_max: Some(config.cohort.label_max as f64),
        },
    }
}

fn run_cell_inner(
    cohort: &Cohort,
    cell: Cell,
    config: &Config,
    pretrained: Option<&EncoderSpec>,
    row: &mut SweepRow,
) -> Result<()> {
    let tc = cell_train_config(config, cell.rep);
    let masked = subsample_labeled_patients(cohort, cell.n_labeled as i64, tc.seed)?;
    row.n_labeled_samples = masked
        .samples_in(Split::Train)
        .filter(|s| s.has_any_label())
        .count();
    let fitted = match cell.arm {
        Arm::Scratch => training::train_scratch(&masked, &tc)?,
        Arm::Pretrained { loss, dae } => {
            let owned;
            let encoder = match pretrained {
                Some(e) if !cell.arm.needs_labels_for_pretraining() => e,
                _ => {
                    owned = training::pretrain(&masked, loss, dae, &tc)?.encoder;
                    &owned
                }
            };
            training::finetune(encoder, &masked, &tc, tc.stage2_encoder_lr_factor)?
        }
    };
    row.best_val_mae = Some(fitted.best_val_mae);
    let test: Vec<Sample> = cohort.samples_in(Split::Test).cloned().collect();
    let preds = training::predict_scores(&fitted.encoder, &fitted.regressor, &test)?;
    let table = score_table(cohort, &test, &preds)?;
    let report = metrics::evaluate(&table, None, &eval_options(config, tc.seed))?;
    let cs = &report.cross_sectional;
    let pr = &report.progression;
    row.cs_icc31 = cs.icc31.point;
    row.cs_icc31_low = cs.icc31.low;
    row.cs_icc31_high = cs.icc31.high;
    row.cs_icc21 = cs.icc21.point;
    row.cs_rmse = cs.rmse.point;
    row.cs_rmse_low = cs.rmse.low;
    row.cs_rmse_high = cs.rmse.high;
    row.pr_icc31 = pr.icc31.point;
    row.pr_icc31_low = pr.icc31.low;
    row.pr_icc31_high = pr.icc31.high;
    row.pr_icc21 = pr.icc21.point;
    row.pr_rmse = pr.rmse.point;
    row.pr_rmse_low = pr.rmse.low;
    row.pr_rmse_high = pr.rmse.high;
    row.c = report.c;
    Ok(())
}

/// Fine-tunes and evaluates one cell. Failures are recorded in the row's
/// status rather than returned.
pub fn run_cell(cohort: &Cohort, cell: Cell, config: &Config, pretrained: Option<&EncoderSpec>) -> SweepRow {
    let seed = rep_seed(config.train.seed, cell.rep);
    let mut row = SweepRow::empty(cell, seed, "ok".into());
    if let Err(e) = run_cell_inner(cohort, cell, config, pretrained, &mut row) {
        log::warn!("cell {cell} failed: {e}");
        row = SweepRow::empty(cell, seed, format!("error: {e}"));
    }
    row
}

fn map_maybe_parallel<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Runs every cell of `spec` in-process. `cohort` must carry a split
/// assignment. Rows come back in canonical cell order.
pub fn run_sweep(spec: &SweepSpec, cohort: &Cohort, config: &Config) -> Result<Vec<SweepRow>> {
    spec.validate(cohort.patients_in(Split::Train).len())?;
    let cells = spec.cells();
    let mut keys: Vec<(Arm, usize)> = cells
        .iter()
        .filter(|c| c.arm != Arm::Scratch && !c.arm.needs_labels_for_pretraining())
        .map(|c| (c.arm, c.rep))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let encoders = map_maybe_parallel(&keys, |&(arm, rep)| pretrain_arm(cohort, arm, rep, config));
    let mut cache: BTreeMap<(Arm, usize), std::result::Result<EncoderSpec, String>> = BTreeMap::new();
    for (k, e) in keys.into_iter().zip(encoders) {
        cache.insert(k, e.map(|o| o.expect("pretrained arm")).map_err(|e| e.to_string()));
    }
    Ok(map_maybe_parallel(&cells, |&cell| match cache.get(&(cell.arm, cell.rep)) {
        Some(Err(msg)) => SweepRow::empty(
            cell,
            rep_seed(config.train.seed, cell.rep),
            format!("error: pretraining failed: {msg}"),
        ),
        Some(Ok(enc)) => run_cell(cohort, cell, config, Some(enc)),
        None => run_cell(cohort, cell, config, None),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_names_roundtrip() {
        for s in ["scratch", "chrono", "chrono-dae", "dae", "rnc", "rnc-t-dae", "simclr", "ordinal-y"] {
            assert_eq!(s.parse::<Arm>().unwrap().to_string(), s);
        }
        assert!("dae-dae".parse::<Arm>().is_err());
        assert!("nope".parse::<Arm>().is_err());
    }

    #[test]
    fn cells_are_canonical() {
        let spec = SweepSpec {
            n_labeled: vec![7, 5, 7],
            arms: vec![Arm::Scratch],
            repetitions: 2,
        };
        let cells = spec.cells();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].n_labeled, 5);
        assert_eq!(cells[3].rep, 1);
    }

    #[test]
    fn spec_validation() {
        let spec = SweepSpec {
            n_labeled: vec![5, 200],
            arms: vec![Arm::Scratch],
            repetitions: 1,
        };
        assert!(spec.validate(120).is_err());
        assert!(spec.validate(200).is_ok());
    }

    #[test]
    fn table_roundtrip() {
        let cell = Cell {
            arm: "chrono-dae".parse().unwrap(),
            n_labeled: 5,
            rep: 1,
        };
        let mut row = SweepRow::empty(cell, 42, "ok".into());
        row.cs_icc31 = Some(0.8125);
        row.c = Some(-0.1);
        let mut buf = Vec::new();
        write_sweep_table(&[row.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&SWEEP_HEADER.join(",")));
        assert_eq!(read_sweep_table(&buf[..]).unwrap(), vec![row]);
    }
}
