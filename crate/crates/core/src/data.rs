//! Domain types, dataset ingestion, ground-truth BAC handling, and
//! task-label assignment.
//!
//! A cohort lives on disk as a JSON manifest plus per-participant signal
//! CSVs and one BAC CSV. All timestamps are seconds from a per-participant
//! epoch; there is no time-zone handling anywhere.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Breath alcohol concentration (mg/L) to blood alcohol concentration
/// (g/dL) conversion factor.
pub const BRAC_TO_BAC_FACTOR: f64 = 0.2;

/// BAC threshold (g/dL) separating the two binary detection tasks:
/// any exposure is detected above 0.0, the recommended-limit task above
/// this value.
pub const ABOVE_LIMIT_THRESHOLD_G_PER_DL: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing signal file: {0}")]
    MissingFile(PathBuf),
    #[error("{file}, row {row}: {msg}")]
    Row { file: String, row: u64, msg: String },
    #[error("non-monotonic timestamps in {file} at row {row}")]
    NonMonotonic { file: String, row: u64 },
    #[error("negative breath alcohol concentration: {0}")]
    NegativeBrac(f64),
    #[error("empty BAC measurement list")]
    EmptyBacList,
    #[error("window [{start_s}, {end_s}) does not lie inside a single driving phase")]
    WindowOutsidePhase { start_s: f64, end_s: f64 },
    #[error("no BAC measurements for treatment participant {0}")]
    UnresolvableBac(String),
    #[error("duplicate participant id {0}")]
    DuplicateParticipant(String),
    #[error("participant {participant}: {msg}")]
    Participant { participant: String, msg: String },
    #[error("series {modality:?}, sample {index}: {msg}")]
    Sample {
        modality: Modality,
        index: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Study arm. Placebo and reference participants stay sober throughout and
/// carry only negative labels for the binary tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Treatment,
    Placebo,
    Reference,
}

impl Group {
    pub fn is_control(self) -> bool {
        matches!(self, Group::Placebo | Group::Reference)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Treatment => write!(f, "treatment"),
            Group::Placebo => write!(f, "placebo"),
            Group::Reference => write!(f, "reference"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub group: Group,
}

/// Driving scenario metadata. Optional; carried through but unused by the
/// models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Highway,
    Rural,
    Urban,
}

/// One of the three driving sessions of a participant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrivingPhase {
    pub participant_id: String,
    /// 1 = sober baseline, 2 = severe intoxication, 3 = moderate
    /// intoxication (control groups stay sober but follow the same
    /// schedule).
    pub phase_index: u8,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default)]
    pub scenario_sequence: Vec<Scenario>,
}

impl DrivingPhase {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t <= self.end_s
    }
}

/// Signal stream kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    IbiMs,
    HrBpm,
    ArousalProb,
    AccelXG,
    AccelYG,
    AccelZG,
    AccelMagG,
}

/// A single timestamped scalar observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_s: f64,
    pub value: f64,
}

/// Timestamped scalar stream with strictly increasing timestamps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSeries {
    pub modality: Modality,
    samples: Vec<Sample>,
}

impl SampleSeries {
    /// Builds a series, validating timestamp monotonicity and the value
    /// range of the modality.
    pub fn new(modality: Modality, samples: Vec<Sample>) -> Result<Self, DataError> {
        for (i, s) in samples.iter().enumerate() {
            if !s.t_s.is_finite() || !s.value.is_finite() {
                return Err(DataError::Sample {
                    modality,
                    index: i,
                    msg: format!("non-finite sample ({}, {})", s.t_s, s.value),
                });
            }
            if i > 0 && s.t_s <= samples[i - 1].t_s {
                return Err(DataError::Sample {
                    modality,
                    index: i,
                    msg: format!(
                        "timestamps not strictly increasing ({} after {})",
                        s.t_s,
                        samples[i - 1].t_s
                    ),
                });
            }
            let ok = match modality {
                Modality::IbiMs | Modality::HrBpm => s.value > 0.0,
                Modality::ArousalProb => (0.0..=1.0).contains(&s.value),
                _ => true,
            };
            if !ok {
                return Err(DataError::Sample {
                    modality,
                    index: i,
                    msg: format!("value {} out of range for {:?}", s.value, modality),
                });
            }
        }
        Ok(Self { modality, samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples with `start_s <= t < end_s` (binary-searched).
    pub fn slice(&self, start_s: f64, end_s: f64) -> &[Sample] {
        let lo = self.samples.partition_point(|s| s.t_s < start_s);
        let hi = self.samples.partition_point(|s| s.t_s < end_s);
        &self.samples[lo..hi]
    }

    /// Samples with `start_s <= t <= end_s`.
    pub fn slice_closed(&self, start_s: f64, end_s: f64) -> &[Sample] {
        let lo = self.samples.partition_point(|s| s.t_s < start_s);
        let hi = self.samples.partition_point(|s| s.t_s <= end_s);
        &self.samples[lo..hi]
    }

    /// Same series with samples replaced; skips re-validation of value
    /// ranges (used by transforms such as z-scoring that may leave the
    /// physical value range).
    pub(crate) fn with_samples(&self, modality: Modality, samples: Vec<Sample>) -> Self {
        Self { modality, samples }
    }
}

/// A breathalyzer-derived ground-truth measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacMeasurement {
    pub participant_id: String,
    pub t_s: f64,
    /// Breath alcohol concentration in mg/L, when the record came from a
    /// breathalyzer reading directly.
    pub brac_mg_per_l: Option<f64>,
    pub bac_g_per_dl: f64,
}

impl BacMeasurement {
    /// Constructs a measurement from a breathalyzer reading, applying the
    /// breath-to-blood conversion.
    pub fn from_brac(participant_id: String, t_s: f64, brac_mg_per_l: f64) -> Result<Self, DataError> {
        let bac = brac_to_bac(brac_mg_per_l)?;
        Ok(Self {
            participant_id,
            t_s,
            brac_mg_per_l: Some(brac_mg_per_l),
            bac_g_per_dl: bac,
        })
    }
}

/// Converts breath alcohol concentration (mg/L) to blood alcohol
/// concentration (g/dL). 0.25 mg/L corresponds to 0.05 g/dL.
pub fn brac_to_bac(brac_mg_per_l: f64) -> Result<f64, DataError> {
    if brac_mg_per_l < 0.0 || !brac_mg_per_l.is_finite() {
        return Err(DataError::NegativeBrac(brac_mg_per_l));
    }
    Ok(brac_mg_per_l * BRAC_TO_BAC_FACTOR)
}

/// Linearly interpolates BAC at time `t_s` between bracketing
/// measurements; outside the measured range the nearest value is used
/// (breathalyzer tests bracket each drive, so extrapolation spans seconds).
pub fn interpolate_bac(measurements: &[BacMeasurement], t_s: f64) -> Result<f64, DataError> {
    if measurements.is_empty() {
        return Err(DataError::EmptyBacList);
    }
    debug_assert!(measurements.windows(2).all(|w| w[0].t_s <= w[1].t_s));
    let first = measurements.first().unwrap();
    let last = measurements.last().unwrap();
    if t_s <= first.t_s {
        return Ok(first.bac_g_per_dl);
    }
    if t_s >= last.t_s {
        return Ok(last.bac_g_per_dl);
    }
    let hi = measurements.partition_point(|m| m.t_s < t_s);
    let (a, b) = (&measurements[hi - 1], &measurements[hi]);
    if (b.t_s - a.t_s).abs() < f64::EPSILON {
        return Ok(b.bac_g_per_dl);
    }
    let w = (t_s - a.t_s) / (b.t_s - a.t_s);
    Ok(a.bac_g_per_dl + w * (b.bac_g_per_dl - a.bac_g_per_dl))
}

/// Prediction target kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    EarlyWarning,
    AboveLimit,
    PhaseCategorical,
    BacRegression,
}

impl Task {
    pub fn is_binary(self) -> bool {
        matches!(self, Task::EarlyWarning | Task::AboveLimit)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::EarlyWarning => write!(f, "early_warning"),
            Task::AboveLimit => write!(f, "above_limit"),
            Task::PhaseCategorical => write!(f, "phase_categorical"),
            Task::BacRegression => write!(f, "bac_regression"),
        }
    }
}

/// Resolved label for one window under one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLabel {
    Binary(u8),
    Phase(u8),
    Bac(f64),
}

impl TaskLabel {
    pub fn as_binary(&self) -> Option<u8> {
        match self {
            TaskLabel::Binary(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            TaskLabel::Binary(v) => f64::from(*v),
            TaskLabel::Phase(v) => f64::from(*v),
            TaskLabel::Bac(v) => *v,
        }
    }
}

/// Assigns the label of a window `[start_s, start_s + length_s]` for
/// `task`.
///
/// Binary labels are phase-level: treatment phases 2 and 3 are positive
/// for early warning, phase 2 alone for above limit, and all control
/// windows are negative. The categorical task returns the phase index;
/// the regression task returns linearly interpolated BAC at the window
/// center (controls without measurements resolve to 0.0).
pub fn assign_label(
    group: Group,
    phases: &[DrivingPhase],
    window_start_s: f64,
    window_length_s: f64,
    task: Task,
    bac: &[BacMeasurement],
) -> Result<TaskLabel, DataError> {
    let end_s = window_start_s + window_length_s;
    let phase = phases
        .iter()
        .find(|p| window_start_s >= p.start_s && end_s <= p.end_s)
        .ok_or(DataError::WindowOutsidePhase {
            start_s: window_start_s,
            end_s,
        })?;
    let intoxicated = group == Group::Treatment && phase.phase_index >= 2;
    match task {
        Task::EarlyWarning => Ok(TaskLabel::Binary(u8::from(intoxicated))),
        Task::AboveLimit => Ok(TaskLabel::Binary(u8::from(
            group == Group::Treatment && phase.phase_index == 2,
        ))),
        Task::PhaseCategorical => Ok(TaskLabel::Phase(phase.phase_index)),
        Task::BacRegression => {
            let center = window_start_s + window_length_s / 2.0;
            if bac.is_empty() {
                if group == Group::Treatment {
                    return Err(DataError::UnresolvableBac(phase.participant_id.clone()));
                }
                return Ok(TaskLabel::Bac(0.0));
            }
            Ok(TaskLabel::Bac(interpolate_bac(bac, center)?))
        }
    }
}

/// Everything recorded for one participant.
#[derive(Debug, Clone)]
pub struct ParticipantData {
    pub participant: Participant,
    pub phases: Vec<DrivingPhase>,
    pub ibi: SampleSeries,
    pub hr: SampleSeries,
    pub accel_x: SampleSeries,
    pub accel_y: SampleSeries,
    pub accel_z: SampleSeries,
    pub bac: Vec<BacMeasurement>,
}

impl ParticipantData {
    pub fn id(&self) -> &str {
        &self.participant.id
    }

    pub fn group(&self) -> Group {
        self.participant.group
    }
}

/// An immutable, validated cohort. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub participants: Vec<ParticipantData>,
}

impl Cohort {
    pub fn participant(&self, id: &str) -> Option<&ParticipantData> {
        self.participants.iter().find(|p| p.id() == id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.participants.iter().map(|p| p.id()).collect()
    }

    pub fn treatment_ids(&self) -> Vec<&str> {
        self.participants
            .iter()
            .filter(|p| p.group() == Group::Treatment)
            .map(|p| p.id())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// On-disk formats
// ---------------------------------------------------------------------------

/// Per-participant signal file paths, relative to the cohort root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalFiles {
    pub ibi: String,
    pub hr: String,
    pub accel: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPhase {
    pub index: u8,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestParticipant {
    pub id: String,
    pub group: Group,
    pub phases: Vec<ManifestPhase>,
    pub files: SignalFiles,
}

/// The cohort manifest (`manifest.json` at the cohort root).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortManifest {
    pub participants: Vec<ManifestParticipant>,
    pub bac_file: String,
}

impl CohortManifest {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path).map_err(|_| DataError::MissingFile(path.to_path_buf()))?;
        Ok(serde_json::from_reader(file)?)
    }
}

/// Loads a cohort from `root/manifest.json` and the files it references.
///
/// Every row is validated on the way in; failures carry the file and row
/// that caused them.
pub fn ingest_cohort(root: &Path) -> Result<Cohort, DataError> {
    let manifest = CohortManifest::load(&root.join("manifest.json"))?;
    ingest_cohort_with_manifest(root, &manifest)
}

pub fn ingest_cohort_with_manifest(
    root: &Path,
    manifest: &CohortManifest,
) -> Result<Cohort, DataError> {
    let mut seen = HashSet::new();
    let mut bac_by_participant = read_bac_csv(&root.join(&manifest.bac_file))?;

    let mut participants = Vec::with_capacity(manifest.participants.len());
    for mp in &manifest.participants {
        if !seen.insert(mp.id.clone()) {
            return Err(DataError::DuplicateParticipant(mp.id.clone()));
        }
        let phases = validate_phases(mp)?;
        let ibi = read_scalar_csv(&root.join(&mp.files.ibi), Modality::IbiMs)?;
        let hr = read_scalar_csv(&root.join(&mp.files.hr), Modality::HrBpm)?;
        let (accel_x, accel_y, accel_z) = read_accel_csv(&root.join(&mp.files.accel))?;
        let mut bac = bac_by_participant.remove(&mp.id).unwrap_or_default();
        bac.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
        participants.push(ParticipantData {
            participant: Participant {
                id: mp.id.clone(),
                group: mp.group,
            },
            phases,
            ibi,
            hr,
            accel_x,
            accel_y,
            accel_z,
            bac,
        });
    }
    if let Some(id) = bac_by_participant.keys().next() {
        return Err(DataError::Participant {
            participant: id.clone(),
            msg: "BAC file references a participant absent from the manifest".into(),
        });
    }
    Ok(Cohort { participants })
}

fn validate_phases(mp: &ManifestParticipant) -> Result<Vec<DrivingPhase>, DataError> {
    let mut phases: Vec<DrivingPhase> = mp
        .phases
        .iter()
        .map(|p| DrivingPhase {
            participant_id: mp.id.clone(),
            phase_index: p.index,
            start_s: p.start_s,
            end_s: p.end_s,
            scenario_sequence: p.scenarios.clone(),
        })
        .collect();
    phases.sort_by_key(|p| p.phase_index);
    for p in &phases {
        if !(1..=3).contains(&p.phase_index) {
            return Err(DataError::Participant {
                participant: mp.id.clone(),
                msg: format!("phase index {} outside 1..=3", p.phase_index),
            });
        }
        if p.start_s >= p.end_s {
            return Err(DataError::Participant {
                participant: mp.id.clone(),
                msg: format!("phase {} has start >= end", p.phase_index),
            });
        }
    }
    for w in phases.windows(2) {
        if w[0].phase_index == w[1].phase_index || w[0].end_s > w[1].start_s {
            return Err(DataError::Participant {
                participant: mp.id.clone(),
                msg: format!(
                    "phases {} and {} overlap or repeat",
                    w[0].phase_index, w[1].phase_index
                ),
            });
        }
    }
    Ok(phases)
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>, DataError> {
    let file = File::open(path).map_err(|_| DataError::MissingFile(path.to_path_buf()))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn row_err(path: &Path, row: u64, msg: impl Into<String>) -> DataError {
    DataError::Row {
        file: path.display().to_string(),
        row,
        msg: msg.into(),
    }
}

/// Reads a `t_s,value` CSV into a series of the given modality.
pub(crate) fn read_scalar_csv(path: &Path, modality: Modality) -> Result<SampleSeries, DataError> {
    let mut reader = open_csv(path)?;
    let mut samples = Vec::new();
    for (i, record) in reader.deserialize::<(f64, f64)>().enumerate() {
        let row = i as u64 + 2; // 1-based, after the header
        let (t_s, value) = record.map_err(|e| row_err(path, row, e.to_string()))?;
        if let Some(prev) = samples.last() {
            let prev: &Sample = prev;
            if t_s <= prev.t_s {
                return Err(DataError::NonMonotonic {
                    file: path.display().to_string(),
                    row,
                });
            }
        }
        samples.push(Sample { t_s, value });
    }
    SampleSeries::new(modality, samples).map_err(|e| row_err(path, 0, e.to_string()))
}

/// Reads a `t_s,x_g,y_g,z_g` CSV into three axis series.
fn read_accel_csv(path: &Path) -> Result<(SampleSeries, SampleSeries, SampleSeries), DataError> {
    let mut reader = open_csv(path)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    for (i, record) in reader.deserialize::<(f64, f64, f64, f64)>().enumerate() {
        let row = i as u64 + 2;
        let (t_s, x, y, z) = record.map_err(|e| row_err(path, row, e.to_string()))?;
        if let Some(prev) = xs.last() {
            let prev: &Sample = prev;
            if t_s <= prev.t_s {
                return Err(DataError::NonMonotonic {
                    file: path.display().to_string(),
                    row,
                });
            }
        }
        xs.push(Sample { t_s, value: x });
        ys.push(Sample { t_s, value: y });
        zs.push(Sample { t_s, value: z });
    }
    Ok((
        SampleSeries::new(Modality::AccelXG, xs).map_err(|e| row_err(path, 0, e.to_string()))?,
        SampleSeries::new(Modality::AccelYG, ys).map_err(|e| row_err(path, 0, e.to_string()))?,
        SampleSeries::new(Modality::AccelZG, zs).map_err(|e| row_err(path, 0, e.to_string()))?,
    ))
}

/// Reads the `participant_id,t_s,bac_g_per_dl` CSV.
fn read_bac_csv(
    path: &Path,
) -> Result<std::collections::HashMap<String, Vec<BacMeasurement>>, DataError> {
    let mut reader = open_csv(path)?;
    let mut by_participant: std::collections::HashMap<String, Vec<BacMeasurement>> =
        std::collections::HashMap::new();
    for (i, record) in reader.deserialize::<(String, f64, f64)>().enumerate() {
        let row = i as u64 + 2;
        let (id, t_s, bac) = record.map_err(|e| row_err(path, row, e.to_string()))?;
        if bac < 0.0 || !bac.is_finite() {
            return Err(row_err(path, row, format!("BAC {bac} out of range")));
        }
        by_participant.entry(id.clone()).or_default().push(BacMeasurement {
            participant_id: id,
            t_s,
            brac_mg_per_l: None,
            bac_g_per_dl: bac,
        });
    }
    Ok(by_participant)
}
