//! Cohort ingestion and serialization.
//!
//! A cohort on disk is a JSON manifest plus three CSV files per trial:
//!
//! * EMG: `t_s,ch00,...,ch13` in seconds and millivolts
//! * force plates: `t_s,fx,fy,fz,mx,my,mz,plate_id`
//! * pelvic marker: `t_s,x_mm,y_mm`
//!
//! Trial file paths in the manifest are resolved relative to the manifest's
//! directory. Floats are written in shortest round-trip form so that
//! `load_cohort(save_cohort(c))` reproduces every numeric field bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::model::{
    Cohort, Direction, EmgStream, Group, Handedness, MarkerStream, Outcome, PlateData, PlateLayout, PlateStream,
    Session, Subject, TrialRecording, N_CHANNELS,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials_per_session: Option<usize>,
    #[serde(default)]
    pub plate_layout: PlateLayout,
    pub subjects: Vec<SubjectEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub group: String,
    pub handedness: Handedness,
    pub body_weight_n: f64,
    #[serde(default)]
    pub perturbation_thresholds_n: BTreeMap<String, f64>,
    pub sessions: Vec<SessionEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionEntry {
    pub session: u32,
    pub trials: Vec<TrialEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialEntry {
    pub trial_id: u32,
    pub direction: String,
    #[serde(default = "default_valid")]
    pub valid: bool,
    pub rate_emg_hz: Option<f64>,
    pub rate_plate_hz: Option<f64>,
    pub rate_marker_hz: Option<f64>,
    pub emg_csv: PathBuf,
    pub plates_csv: PathBuf,
    pub pelvis_csv: PathBuf,
    pub t_vr_onset: f64,
    pub t_robust_onset: f64,
    pub t_end: f64,
    pub outcome: Outcome,
}

fn default_valid() -> bool {
    true
}

fn read_to_string(path: &Path) -> Result<String, ModelError> {
    fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

fn csv_err(path: &Path, msg: impl Into<String>) -> ModelError {
    ModelError::Csv { path: path.to_path_buf(), msg: msg.into() }
}

/// Reads a numeric CSV with the exact header `expected`. Returns rows of floats.
fn read_numeric_csv(path: &Path, expected: &[String]) -> Result<Vec<Vec<f64>>, ModelError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => ModelError::Io { path: path.to_path_buf(), source },
        other => csv_err(path, format!("{other:?}")),
    })?;
    let header = rdr.headers().map_err(|e| csv_err(path, e.to_string()))?.clone();
    if header.len() != expected.len() {
        return Err(csv_err(path, format!("expected {} columns, found {}", expected.len(), header.len())));
    }
    for (h, e) in header.iter().zip(expected) {
        if h.trim() != e {
            return Err(csv_err(path, format!("expected column `{e}`, found `{h}`")));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| csv_err(path, format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn emg_header() -> Vec<String> {
    std::iter::once("t_s".to_string()).chain((0..N_CHANNELS).map(|c| format!("ch{c:02}"))).collect()
}

fn plate_header() -> Vec<String> {
    ["t_s", "fx", "fy", "fz", "mx", "my", "mz", "plate_id"].iter().map(|s| s.to_string()).collect()
}

fn pelvis_header() -> Vec<String> {
    ["t_s", "x_mm", "y_mm"].iter().map(|s| s.to_string()).collect()
}

/// Counts the channel columns of an EMG CSV header without reading the body.
fn emg_channel_count(path: &Path) -> Result<usize, ModelError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => ModelError::Io { path: path.to_path_buf(), source },
        other => csv_err(path, format!("{other:?}")),
    })?;
    let header = rdr.headers().map_err(|e| csv_err(path, e.to_string()))?;
    Ok(header.len().saturating_sub(1))
}

pub fn read_emg_csv(path: &Path, rate_hz: f64) -> Result<EmgStream, ModelError> {
    let found = emg_channel_count(path)?;
    if found != N_CHANNELS {
        return Err(ModelError::ChannelCount { trial: 0, found });
    }
    let rows = read_numeric_csv(path, &emg_header())?;
    let n = rows.len();
    let mut t = Vec::with_capacity(n);
    let mut data = Array2::<f64>::zeros((N_CHANNELS, n));
    for (k, row) in rows.iter().enumerate() {
        t.push(row[0]);
        for c in 0..N_CHANNELS {
            data[[c, k]] = row[c + 1];
        }
    }
    Ok(EmgStream { rate_hz, t, data })
}

pub fn read_plates_csv(path: &Path, rate_hz: f64) -> Result<PlateData, ModelError> {
    let rows = read_numeric_csv(path, &plate_header())?;
    let mut plates = [
        PlateStream { plate_id: 0, t: Vec::new(), wrench: Vec::new() },
        PlateStream { plate_id: 1, t: Vec::new(), wrench: Vec::new() },
    ];
    for row in rows {
        let id = row[7];
        let slot = if id == 0.0 {
            0
        } else if id == 1.0 {
            1
        } else {
            return Err(ModelError::PlateIds { path: path.to_path_buf() });
        };
        plates[slot].t.push(row[0]);
        plates[slot].wrench.push([row[1], row[2], row[3], row[4], row[5], row[6]]);
    }
    Ok(PlateData { rate_hz, plates })
}

pub fn read_pelvis_csv(path: &Path, rate_hz: f64) -> Result<MarkerStream, ModelError> {
    let rows = read_numeric_csv(path, &pelvis_header())?;
    let t = rows.iter().map(|r| r[0]).collect();
    let xy = rows.iter().map(|r| [r[1], r[2]]).collect();
    Ok(MarkerStream { rate_hz, t, xy })
}

/// Loads and validates a cohort. Every trial invariant is checked.
pub fn load_cohort(manifest_path: &Path) -> Result<Cohort, ModelError> {
    let text = read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|source| ModelError::Manifest { path: manifest_path.to_path_buf(), source })?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for s in &manifest.subjects {
        let group = Group::parse(&s.group).ok_or_else(|| ModelError::UnknownGroup(s.group.clone()))?;
        let mut thresholds = BTreeMap::new();
        for (label, f) in &s.perturbation_thresholds_n {
            thresholds.insert(Direction::from_label(label, s.handedness)?, *f);
        }
        let mut sessions = Vec::with_capacity(s.sessions.len());
        for sess in &s.sessions {
            let mut trials = Vec::with_capacity(sess.trials.len());
            for e in &sess.trials {
                let rate = |v: Option<f64>, field| v.ok_or(ModelError::MissingRate { trial: e.trial_id, field });
                let rate_emg = rate(e.rate_emg_hz, "rate_emg_hz")?;
                let rate_plate = rate(e.rate_plate_hz, "rate_plate_hz")?;
                let rate_marker = rate(e.rate_marker_hz, "rate_marker_hz")?;
                let emg = read_emg_csv(&base.join(&e.emg_csv), rate_emg).map_err(|err| match err {
                    ModelError::ChannelCount { found, .. } => ModelError::ChannelCount { trial: e.trial_id, found },
                    other => other,
                })?;
                let trial = TrialRecording {
                    trial_id: e.trial_id,
                    subject_id: s.subject_id.clone(),
                    group,
                    session: sess.session,
                    direction: Direction::from_label(&e.direction, s.handedness)?,
                    emg,
                    plates: read_plates_csv(&base.join(&e.plates_csv), rate_plate)?,
                    pelvis: read_pelvis_csv(&base.join(&e.pelvis_csv), rate_marker)?,
                    t_vr_onset: e.t_vr_onset,
                    t_robust_onset: e.t_robust_onset,
                    t_end: e.t_end,
                    outcome: e.outcome,
                    valid: e.valid,
                };
                trials.push(trial);
            }
            sessions.push(Session { index: sess.session, trials });
        }
        subjects.push(Subject {
            subject_id: s.subject_id.clone(),
            group,
            handedness: s.handedness,
            body_weight_n: s.body_weight_n,
            perturbation_thresholds_n: thresholds,
            sessions,
        });
    }
    let cohort =
        Cohort { subjects, plate_layout: manifest.plate_layout, trials_per_session: manifest.trials_per_session };
    cohort.validate()?;
    Ok(cohort)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io { path: path.to_path_buf(), source }
}

fn write_rows<I>(path: &Path, header: &[String], rows: I) -> Result<(), ModelError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e.to_string()))?;
    w.write_record(header).map_err(|e| csv_err(path, e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

pub fn write_emg_csv(path: &Path, emg: &EmgStream) -> Result<(), ModelError> {
    let rows = (0..emg.t.len())
        .map(|k| std::iter::once(fmt(emg.t[k])).chain((0..emg.data.nrows()).map(|c| fmt(emg.data[[c, k]]))).collect());
    write_rows(path, &emg_header(), rows)
}

pub fn write_plates_csv(path: &Path, plates: &PlateData) -> Result<(), ModelError> {
    let mut rows = Vec::new();
    for p in &plates.plates {
        for (t, w) in p.t.iter().zip(&p.wrench) {
            let mut r: Vec<String> = std::iter::once(fmt(*t)).chain(w.iter().map(|v| fmt(*v))).collect();
            r.push(p.plate_id.to_string());
            rows.push(r);
        }
    }
    write_rows(path, &plate_header(), rows)
}

pub fn write_pelvis_csv(path: &Path, m: &MarkerStream) -> Result<(), ModelError> {
    let rows = m.t.iter().zip(&m.xy).map(|(t, xy)| vec![fmt(*t), fmt(xy[0]), fmt(xy[1])]);
    write_rows(path, &pelvis_header(), rows)
}

/// Writes `cohort` under `dir` and returns the manifest path.
///
/// Directions are written with their canonical dominant/non-dominant labels.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<PathBuf, ModelError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut subjects = Vec::with_capacity(cohort.subjects.len());
    for s in &cohort.subjects {
        let sdir = dir.join(&s.subject_id);
        fs::create_dir_all(&sdir).map_err(io_err(&sdir))?;
        let mut sessions = Vec::new();
        for sess in &s.sessions {
            let mut trials = Vec::new();
            for t in &sess.trials {
                let stem = format!("s{}_t{:03}", sess.index, t.trial_id);
                let rel = |kind: &str| PathBuf::from(&s.subject_id).join(format!("{stem}_{kind}.csv"));
                let (emg_rel, plates_rel, pelvis_rel) = (rel("emg"), rel("plates"), rel("pelvis"));
                write_emg_csv(&dir.join(&emg_rel), &t.emg)?;
                write_plates_csv(&dir.join(&plates_rel), &t.plates)?;
                write_pelvis_csv(&dir.join(&pelvis_rel), &t.pelvis)?;
                trials.push(TrialEntry {
                    trial_id: t.trial_id,
                    direction: t.direction.as_str().to_string(),
                    valid: t.valid,
                    rate_emg_hz: Some(t.emg.rate_hz),
                    rate_plate_hz: Some(t.plates.rate_hz),
                    rate_marker_hz: Some(t.pelvis.rate_hz),
                    emg_csv: emg_rel,
                    plates_csv: plates_rel,
                    pelvis_csv: pelvis_rel,
                    t_vr_onset: t.t_vr_onset,
                    t_robust_onset: t.t_robust_onset,
                    t_end: t.t_end,
                    outcome: t.outcome,
                });
            }
            sessions.push(SessionEntry { session: sess.index, trials });
        }
        subjects.push(SubjectEntry {
            subject_id: s.subject_id.clone(),
            group: s.group.as_str().to_string(),
            handedness: s.handedness,
            body_weight_n: s.body_weight_n,
            perturbation_thresholds_n: s
                .perturbation_thresholds_n
                .iter()
                .map(|(d, f)| (d.as_str().to_string(), *f))
                .collect(),
            sessions,
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        trials_per_session: cohort.trials_per_session,
        plate_layout: cohort.plate_layout.clone(),
        subjects,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}
