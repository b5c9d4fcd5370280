//! Longitudinal samples, cohorts, patient-level splits, and the cohort CSV
//! format.
//!
//! The on-disk layout is a UTF-8 CSV with header
//! `sample_id,group_id,timestamp,view_id,label:<name>...,f0..f{D-1}`.
//! A missing label is an empty field. Reals are written with 17 significant
//! digits so a load/save cycle is exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_PATIENT_DELIMITER: char = '/';

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreType {
    pub name: String,
    pub max_value: u32,
}

/// One observation of one region of interest at one visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: u64,
    /// Hierarchical identifier, e.g. `patient/roi`. Only samples with equal
    /// group ids are contrasted chronologically.
    pub group_id: String,
    pub timestamp: f64,
    /// 0 for the original observation, 1 for the second augmented view.
    pub view_id: u8,
    /// Ordinal labels aligned with [`Cohort::score_types`]; `None` is missing.
    pub labels: Vec<Option<u32>>,
    pub features: Vec<f64>,
}

impl Sample {
    pub fn patient_root(&self, delimiter: char) -> &str {
        patient_root(&self.group_id, delimiter)
    }

    pub fn has_any_label(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }
}

/// Prefix of `group_id` up to the first `delimiter`, or the whole id.
pub fn patient_root(group_id: &str, delimiter: char) -> &str {
    group_id.split(delimiter).next().unwrap_or(group_id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub samples: Vec<Sample>,
    pub score_types: Vec<ScoreType>,
    pub split_assignment: BTreeMap<String, Split>,
    pub delimiter: char,
}

impl Cohort {
    pub fn new(score_types: Vec<ScoreType>) -> Self {
        Self {
            samples: Vec::new(),
            score_types,
            split_assignment: BTreeMap::new(),
            delimiter: DEFAULT_PATIENT_DELIMITER,
        }
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features.len())
    }

    pub fn patient_of<'a>(&self, sample: &'a Sample) -> &'a str {
        sample.patient_root(self.delimiter)
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| self.patient_of(s)).collect()
    }

    pub fn groups(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.group_id.as_str()).collect()
    }

    pub fn split_of(&self, sample: &Sample) -> Option<Split> {
        self.split_assignment.get(self.patient_of(sample)).copied()
    }

    pub fn patients_in(&self, split: Split) -> Vec<&str> {
        self.split_assignment
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &Sample> + '_ {
        self.samples
            .iter()
            .filter(move |s| self.split_of(s) == Some(split))
    }

    /// New cohort restricted to one split, keeping metadata.
    pub fn subset(&self, split: Split) -> Cohort {
        Cohort {
            samples: self.samples_in(split).cloned().collect(),
            score_types: self.score_types.clone(),
            split_assignment: self
                .split_assignment
                .iter()
                .filter(|(_, &s)| s == split)
                .map(|(p, s)| (p.clone(), *s))
                .collect(),
            delimiter: self.delimiter,
        }
    }

    pub fn score_index(&self, name: &str) -> Option<usize> {
        self.score_types.iter().position(|s| s.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.feature_dim();
        let mut seen = BTreeSet::new();
        for s in &self.samples {
            let fail = |message: String| Error::Validation {
                sample_id: s.sample_id,
                message,
            };
            if !seen.insert(s.sample_id) {
                return Err(fail("duplicate sample_id".into()));
            }
            if !s.timestamp.is_finite() {
                return Err(fail("timestamp is not finite".into()));
            }
            if Some(s.features.len()) != dim {
                return Err(fail(format!(
                    "expected {} features, found {}",
                    dim.unwrap_or(0),
                    s.features.len()
                )));
            }
            if s.features.iter().any(|f| !f.is_finite()) {
                return Err(fail("non-finite feature".into()));
            }
            if s.labels.len() != self.score_types.len() {
                return Err(fail("label count does not match score types".into()));
            }
            for (label, st) in s.labels.iter().zip(&self.score_types) {
                if let Some(y) = label {
                    if *y > st.max_value {
                        return Err(fail(format!(
                            "label {}={} outside [0, {}]",
                            st.name, y, st.max_value
                        )));
                    }
                }
            }
            if s.group_id.is_empty() {
                return Err(fail("empty group_id".into()));
            }
        }
        Ok(())
    }
}

pub(crate) fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(cohort: &Cohort, dim: usize) -> Vec<String> {
    let mut h = vec![
        "sample_id".to_string(),
        "group_id".to_string(),
        "timestamp".to_string(),
        "view_id".to_string(),
    ];
    h.extend(cohort.score_types.iter().map(|s| format!("label:{}", s.name)));
    h.extend((0..dim).map(|i| format!("f{i}")));
    h
}

pub fn write_cohort<W: Write>(cohort: &Cohort, out: W) -> Result<()> {
    let dim = cohort.feature_dim().unwrap_or(0);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::Other(format!("csv write: {e}"));
    w.write_record(header(cohort, dim)).map_err(csv_err)?;
    let mut record: Vec<String> = Vec::with_capacity(4 + cohort.score_types.len() + dim);
    for s in &cohort.samples {
        record.clear();
        record.push(s.sample_id.to_string());
        record.push(s.group_id.clone());
        record.push(fmt_real(s.timestamp));
        record.push(s.view_id.to_string());
        record.extend(
            s.labels
                .iter()
                .map(|l| l.map(|y| y.to_string()).unwrap_or_default()),
        );
        record.extend(s.features.iter().map(|&f| fmt_real(f)));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Other(format!("csv flush: {e}")))?;
    Ok(())
}

pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_cohort(cohort, BufWriter::new(file))
}

/// Parses a cohort. Score maxima are unknown to the file format; they are
/// taken from `score_max` by name, defaulting to `default_max`.
pub fn read_cohort<R: std::io::Read>(
    input: R,
    score_max: &BTreeMap<String, u32>,
    default_max: u32,
) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let parse_err = |line: usize, message: String| Error::Parse { line, message };

    let header = match records.next() {
        None => return Ok(Cohort::new(Vec::new())),
        Some(h) => h.map_err(|e| parse_err(1, e.to_string()))?,
    };
    let fixed = ["sample_id", "group_id", "timestamp", "view_id"];
    for (i, name) in fixed.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(parse_err(1, format!("expected column {i} to be `{name}`")));
        }
    }
    let mut score_types = Vec::new();
    let mut dim = 0;
    for col in header.iter().skip(fixed.len()) {
        if let Some(name) = col.strip_prefix("label:") {
            if dim > 0 {
                return Err(parse_err(1, "label column after feature columns".into()));
            }
            score_types.push(ScoreType {
                name: name.to_string(),
                max_value: score_max.get(name).copied().unwrap_or(default_max),
            });
        } else if col == format!("f{dim}") {
            dim += 1;
        } else {
            return Err(parse_err(1, format!("unexpected column `{col}`")));
        }
    }
    let n_labels = score_types.len();
    let width = fixed.len() + n_labels + dim;
    let mut cohort = Cohort::new(score_types);

    for (idx, rec) in records.enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        let field = |i: usize, name: &str| -> Result<&str> {
            let v = &rec[i];
            if v.is_empty() {
                Err(parse_err(line, format!("missing `{name}`")))
            } else {
                Ok(v)
            }
        };
        let real = |i: usize, name: &str| -> Result<f64> {
            field(i, name)?
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("`{name}`: {e}")))
        };
        let sample_id = field(0, "sample_id")?
            .parse::<u64>()
            .map_err(|e| parse_err(line, format!("`sample_id`: {e}")))?;
        let group_id = field(1, "group_id")?.to_string();
        let timestamp = real(2, "timestamp")?;
        let view_id = field(3, "view_id")?
            .parse::<u8>()
            .map_err(|e| parse_err(line, format!("`view_id`: {e}")))?;
        let mut labels = Vec::with_capacity(n_labels);
        for j in 0..n_labels {
            let raw = &rec[fixed.len() + j];
            labels.push(if raw.is_empty() {
                None
            } else {
                Some(
                    raw.parse::<u32>()
                        .map_err(|e| parse_err(line, format!("label: {e}")))?,
                )
            });
        }
        let features = (0..dim)
            .map(|k| real(fixed.len() + n_labels + k, "feature"))
            .collect::<Result<Vec<_>>>()?;
        cohort.samples.push(Sample {
            sample_id,
            group_id,
            timestamp,
            view_id,
            labels,
            features,
        });
    }
    cohort.validate()?;
    Ok(cohort)
}

pub fn load_cohort(
    path: &Path,
    score_max: &BTreeMap<String, u32>,
    default_max: u32,
) -> Result<Cohort> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_cohort(std::io::BufReader::new(file), score_max, default_max)
}

/// Assigns every patient root to a split by seeded shuffle. Counts use the
/// largest-remainder rule so they sum to the number of patients.
pub fn split_patients(cohort: &Cohort, fractions: (f64, f64, f64), seed: u64) -> Result<Cohort> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fr:?} must be in [0,1] and sum to 1"
        )));
    }
    let mut patients: Vec<String> = cohort.patients().into_iter().map(String::from).collect();
    let n = patients.len();
    let nonzero = fr.iter().filter(|&&f| f > 0.0).count();
    if n < nonzero {
        return Err(Error::Config(format!(
            "{n} patients cannot fill {nonzero} nonempty splits"
        )));
    }
    let counts = largest_remainder(&fr, n);
    // every requested split gets at least one patient
    let mut counts = counts;
    for i in 0..3 {
        if fr[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    let mut r = rng::rng_for(seed, &[rng::tag("split_patients")]);
    patients.shuffle(&mut r);
    let mut assignment = BTreeMap::new();
    let mut it = patients.into_iter();
    for (split, &count) in Split::ALL.iter().zip(&counts) {
        for p in it.by_ref().take(count) {
            assignment.insert(p, *split);
        }
    }
    let mut out = cohort.clone();
    out.split_assignment = assignment;
    Ok(out)
}

fn largest_remainder(fractions: &[f64; 3], n: usize) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        // tolerate 0.6*10 = 5.999999...
        counts[i] = (exact[i] + 1e-9).floor() as usize;
    }
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Keeps labels for `n_labeled` seeded-random train patients and masks all
/// other train labels. Validation and test labels are untouched.
pub fn subsample_labeled_patients(cohort: &Cohort, n_labeled: i64, seed: u64) -> Result<Cohort> {
    if n_labeled < 0 {
        return Err(Error::Config(format!("n_labeled = {n_labeled} is negative")));
    }
    let mut train: Vec<&str> = cohort.patients_in(Split::Train);
    if n_labeled as usize > train.len() {
        return Err(Error::Config(format!(
            "n_labeled = {n_labeled} exceeds {} train patients",
            train.len()
        )));
    }
    let mut r = rng::rng_for(seed, &[rng::tag("subsample_labeled")]);
    train.shuffle(&mut r);
    let keep: BTreeSet<String> = train[..n_labeled as usize]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut out = cohort.clone();
    let delimiter = out.delimiter;
    let assignment = out.split_assignment.clone();
    for s in &mut out.samples {
        let p = s.patient_root(delimiter);
        if assignment.get(p) == Some(&Split::Train) && !keep.contains(p) {
            s.labels.iter_mut().for_each(|l| *l = None);
        }
    }
    Ok(out)
}
