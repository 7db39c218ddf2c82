//! Domain types shared by every stage of the analysis: muscle channels,
//! perturbation directions, groups, and the synchronized streams that make up
//! one catch-and-throw trial.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Number of EMG channels recorded per subject (7 muscles, both sides).
pub const N_CHANNELS: usize = 14;
/// Muscles recorded on each side.
pub const N_MUSCLES_PER_SIDE: usize = 7;

/// Maximum delay between VR onset and the perturbation (s).
pub const MAX_ONSET_DELAY_S: f64 = 0.8;
/// Time allowed to catch, aim and throw (s).
pub const TRIAL_WINDOW_S: f64 = 3.0;
/// Slack allowed on the trial window when validating recordings (s).
pub const TRIAL_WINDOW_TOLERANCE_S: f64 = 0.005;
/// Streams must start at least this long before VR onset (s).
pub const PRE_ONSET_COVERAGE_S: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Dominant,
    Nondominant,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Dominant => "dominant",
            Side::Nondominant => "nondominant",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Muscle {
    /// Tibialis anterior
    TA,
    /// Lateral gastrocnemius
    LG,
    /// Rectus femoris
    RF,
    /// Biceps femoris
    BF,
    /// Gluteus medius
    GM,
    /// Rectus abdominis
    ABD,
    /// Erector spinae
    ES,
}

impl Muscle {
    pub const ALL: [Muscle; N_MUSCLES_PER_SIDE] =
        [Muscle::TA, Muscle::LG, Muscle::RF, Muscle::BF, Muscle::GM, Muscle::ABD, Muscle::ES];

    pub fn as_str(self) -> &'static str {
        match self {
            Muscle::TA => "TA",
            Muscle::LG => "LG",
            Muscle::RF => "RF",
            Muscle::BF => "BF",
            Muscle::GM => "GM",
            Muscle::ABD => "ABD",
            Muscle::ES => "ES",
        }
    }
}

/// One EMG electrode. Channel ids 0..7 are the dominant side in `Muscle::ALL`
/// order, 7..14 the non-dominant side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MuscleChannel {
    pub id: usize,
    pub side: Side,
    pub muscle: Muscle,
}

impl MuscleChannel {
    pub fn from_id(id: usize) -> Option<Self> {
        if id >= N_CHANNELS {
            return None;
        }
        let side = if id < N_MUSCLES_PER_SIDE { Side::Dominant } else { Side::Nondominant };
        Some(MuscleChannel { id, side, muscle: Muscle::ALL[id % N_MUSCLES_PER_SIDE] })
    }

    pub fn all() -> Vec<MuscleChannel> {
        (0..N_CHANNELS).filter_map(MuscleChannel::from_id).collect()
    }

    /// Short label such as `TA_D` or `ES_N`.
    pub fn label(&self) -> String {
        let s = match self.side {
            Side::Dominant => "D",
            Side::Nondominant => "N",
        };
        format!("{}_{}", self.muscle.as_str(), s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
    Dominant,
    Nondominant,
}

impl Direction {
    pub const ALL: [Direction; 4] =
        [Direction::Forward, Direction::Backward, Direction::Dominant, Direction::Nondominant];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
            Direction::Dominant => "dominant",
            Direction::Nondominant => "nondominant",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
            Direction::Dominant => 2,
            Direction::Nondominant => 3,
        }
    }

    /// Parses a direction label, remapping `left`/`right` through handedness.
    pub fn from_label(label: &str, handedness: Handedness) -> Result<Self, ModelError> {
        let d = match label.to_ascii_lowercase().as_str() {
            "forward" => Direction::Forward,
            "backward" => Direction::Backward,
            "dominant" => Direction::Dominant,
            "nondominant" | "non-dominant" => Direction::Nondominant,
            "left" => match handedness {
                Handedness::Left => Direction::Dominant,
                Handedness::Right => Direction::Nondominant,
            },
            "right" => match handedness {
                Handedness::Right => Direction::Dominant,
                Handedness::Left => Direction::Nondominant,
            },
            other => return Err(ModelError::UnknownDirection(other.to_string())),
        };
        Ok(d)
    }

    /// Unit vector in the body frame: x anterior, y toward the dominant side.
    pub fn unit(self) -> [f64; 2] {
        match self {
            Direction::Forward => [1.0, 0.0],
            Direction::Backward => [-1.0, 0.0],
            Direction::Dominant => [0.0, 1.0],
            Direction::Nondominant => [0.0, -1.0],
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    /// Received the pelvic assistive force field.
    FF,
    NoFF,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::FF => "FF",
            Group::NoFF => "NoFF",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "FF" | "ff" => Some(Group::FF),
            "NoFF" | "noff" | "no-FF" | "NOFF" => Some(Group::NoFF),
            _ => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Right,
    Left,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub caught: bool,
    pub thrown: bool,
    pub score: u8,
}

/// Raw EMG for all channels. `data` is channels × samples in millivolts.
#[derive(Clone, Debug, PartialEq)]
pub struct EmgStream {
    pub rate_hz: f64,
    pub t: Vec<f64>,
    pub data: Array2<f64>,
}

/// One force-plate wrench stream: (Fx, Fy, Fz, Mx, My, Mz) per sample in N and N·m.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateStream {
    pub plate_id: u8,
    pub t: Vec<f64>,
    pub wrench: Vec<[f64; 6]>,
}

impl PlateStream {
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.wrench.iter().map(|w| w[k]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlateData {
    pub rate_hz: f64,
    pub plates: [PlateStream; 2],
}

/// Pelvic-center marker trajectory in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkerStream {
    pub rate_hz: f64,
    pub t: Vec<f64>,
    pub xy: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecording {
    pub trial_id: u32,
    pub subject_id: String,
    pub group: Group,
    pub session: u32,
    pub direction: Direction,
    pub emg: EmgStream,
    pub plates: PlateData,
    pub pelvis: MarkerStream,
    pub t_vr_onset: f64,
    pub t_robust_onset: f64,
    pub t_end: f64,
    pub outcome: Outcome,
    /// Dropped or failed trials stay in the cohort with `valid = false`.
    pub valid: bool,
}

fn check_times(name: &'static str, t: &[f64], t_from: f64, t_to: f64, rate: f64) -> Result<(), ModelError> {
    if t.len() < 2 {
        return Err(ModelError::StreamTooShort(name));
    }
    if let Some(k) = t.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(ModelError::TimestampOrder { stream: name, index: k + 1 });
    }
    let slack = 0.5 / rate + 1e-9;
    let (first, last) = (t[0], t[t.len() - 1]);
    if first > t_from + slack || last < t_to - slack {
        return Err(ModelError::Coverage { stream: name, first, last, need_from: t_from, need_to: t_to });
    }
    Ok(())
}

impl TrialRecording {
    /// Checks event ordering, the onset and trial windows, channel count and
    /// stream coverage of `[t_vr_onset - 0.2 s, t_end]`.
    pub fn validate(&self) -> Result<(), ModelError> {
        let id = self.trial_id;
        if !(self.t_vr_onset <= self.t_robust_onset && self.t_robust_onset <= self.t_end) {
            return Err(ModelError::EventOrder { trial: id });
        }
        if self.t_robust_onset - self.t_vr_onset > MAX_ONSET_DELAY_S + 1e-9 {
            return Err(ModelError::OnsetWindow { trial: id, delay: self.t_robust_onset - self.t_vr_onset });
        }
        if self.t_end - self.t_vr_onset > TRIAL_WINDOW_S + TRIAL_WINDOW_TOLERANCE_S {
            return Err(ModelError::TrialTooLong { trial: id, duration: self.t_end - self.t_vr_onset });
        }
        if self.emg.data.nrows() != N_CHANNELS {
            return Err(ModelError::ChannelCount { trial: id, found: self.emg.data.nrows() });
        }
        if self.emg.data.ncols() != self.emg.t.len() {
            return Err(ModelError::Shape { trial: id, what: "emg samples vs timestamps" });
        }
        for (name, rate) in
            [("emg", self.emg.rate_hz), ("plates", self.plates.rate_hz), ("pelvis", self.pelvis.rate_hz)]
        {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(ModelError::BadRate { stream: name, rate });
            }
        }
        if self.pelvis.xy.len() != self.pelvis.t.len() {
            return Err(ModelError::Shape { trial: id, what: "pelvis samples vs timestamps" });
        }
        let from = self.t_vr_onset - PRE_ONSET_COVERAGE_S;
        check_times("emg", &self.emg.t, from, self.t_end, self.emg.rate_hz)?;
        check_times("pelvis", &self.pelvis.t, from, self.t_end, self.pelvis.rate_hz)?;
        for p in &self.plates.plates {
            if p.wrench.len() != p.t.len() {
                return Err(ModelError::Shape { trial: id, what: "plate samples vs timestamps" });
            }
            check_times("plates", &p.t, from, self.t_end, self.plates.rate_hz)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub index: u32,
    pub trials: Vec<TrialRecording>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub subject_id: String,
    pub group: Group,
    pub handedness: Handedness,
    pub body_weight_n: f64,
    pub perturbation_thresholds_n: BTreeMap<Direction, f64>,
    pub sessions: Vec<Session>,
}

impl Subject {
    pub fn trials(&self) -> impl Iterator<Item = &TrialRecording> {
        self.sessions.iter().flat_map(|s| s.trials.iter())
    }
}

/// Force-plate placement in the common lab frame (mm).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateLayout {
    pub origins_mm: [[f64; 2]; 2],
    pub fz_threshold_n: f64,
}

impl Default for PlateLayout {
    fn default() -> Self {
        PlateLayout { origins_mm: [[0.0, -100.0], [0.0, 100.0]], fz_threshold_n: 20.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub subjects: Vec<Subject>,
    pub plate_layout: PlateLayout,
    /// Expected trial count per session, when the manifest declares one.
    pub trials_per_session: Option<usize>,
}

impl Cohort {
    pub fn trials(&self) -> impl Iterator<Item = &TrialRecording> {
        self.subjects.iter().flat_map(|s| s.trials())
    }

    pub fn n_trials(&self) -> usize {
        self.trials().count()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for s in &self.subjects {
            for sess in &s.sessions {
                if let Some(n) = self.trials_per_session {
                    if sess.trials.len() != n {
                        return Err(ModelError::TrialCount {
                            subject: s.subject_id.clone(),
                            session: sess.index,
                            expected: n,
                            found: sess.trials.len(),
                        });
                    }
                }
                for t in &sess.trials {
                    t.validate()?;
                }
            }
        }
        Ok(())
    }
}
