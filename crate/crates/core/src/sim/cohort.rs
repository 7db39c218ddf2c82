//! Synthetic cohorts with known synergies. EMG envelopes are built as
//! `M(t) = Σ cᵢ(t) Wᵢ` from per-group ground truth, modulated by a broadband
//! carrier, and paired with simulated plates and pelvic markers.
//!
//! Each group's synergies have disjoint muscle supports and disjoint APR
//! cells, sized so that every synergy carries a similar share of the
//! normalized activation energy whenever the cell budget allows it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::body::BodyParams;
use super::boundary::{build_boundary, BalanceBoundary};
use super::calibrate::{calibrate_threshold, CalibrationOptions};
use super::rig::RigModel;
use super::trial::{run_trial, TaskModel, TrialScript};
use crate::error::SimError;
use crate::model::{
    Cohort, Direction, EmgStream, Group, Handedness, MuscleChannel, PlateLayout, Session, Subject, TrialRecording,
    MAX_ONSET_DELAY_S, N_CHANNELS,
};
use crate::seed::{child_rng, derive_seed};

/// APR bins carrying synergy activity (APR1–3) times four directions.
pub const APR_CELLS: usize = 12;
/// Seconds after the perturbation onset.
const RAMP_END: f64 = 0.100;
const APR_EDGES: [f64; 4] = [0.100, 0.175, 0.250, 0.325];
const VPR1_END: f64 = 0.400;
const VPR_PEAK: f64 = 0.700;
const VPR_END: f64 = 1.200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group: Group,
    pub n_subjects: usize,
    pub n_synergies: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub groups: Vec<GroupSpec>,
    pub sessions: u32,
    pub trials_per_session: usize,
    /// Standard deviation of the multiplicative per-trial channel gain.
    pub noise: f64,
    pub seed: u64,
    pub emg_rate_hz: f64,
    pub plate_rate_hz: f64,
    pub marker_rate_hz: f64,
    /// Resting envelope level relative to a unit synergy activation.
    pub envelope_floor: f64,
    /// EMG amplitude of a unit envelope, mV.
    pub emg_scale_mv: f64,
    /// Subject masses are drawn uniformly from this range, kg.
    pub mass_range_kg: [f64; 2],
    pub rig: RigModel,
    pub task: TaskModel,
    pub calibration: CalibrationOptions,
    pub plate_layout: PlateLayout,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            groups: vec![
                GroupSpec { group: Group::FF, n_subjects: 2, n_synergies: 4 },
                GroupSpec { group: Group::NoFF, n_subjects: 2, n_synergies: 8 },
            ],
            sessions: 1,
            trials_per_session: 16,
            noise: 0.05,
            seed: 1,
            emg_rate_hz: 2000.0,
            plate_rate_hz: 1000.0,
            marker_rate_hz: 100.0,
            envelope_floor: 0.02,
            emg_scale_mv: 0.5,
            mass_range_kg: [55.0, 75.0],
            rig: RigModel::default(),
            task: TaskModel::default(),
            calibration: CalibrationOptions::default(),
            plate_layout: PlateLayout::default(),
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Spec(m.to_string()));
        if self.groups.is_empty() || self.sessions == 0 || self.trials_per_session == 0 {
            return bad("cohort needs groups, sessions and trials");
        }
        for g in &self.groups {
            if g.n_subjects == 0 || !(1..=10).contains(&g.n_synergies) {
                return bad("each group needs subjects and 1..=10 synergies");
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.envelope_floor >= 0.0) || !(self.emg_scale_mv > 0.0)
        {
            return bad("noise, floor and scale must be finite and nonnegative");
        }
        if !(self.mass_range_kg[0] > 0.0 && self.mass_range_kg[0] <= self.mass_range_kg[1]) {
            return bad("invalid mass range");
        }
        let rates = [self.emg_rate_hz, self.plate_rate_hz, self.marker_rate_hz];
        if rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad("sampling rates must be positive");
        }
        self.rig.validate()?;
        self.task.validate()
    }
}

/// Generator truth for one group. `apr` holds the activation of each synergy
/// (rows) in APR1–3 × direction cells, bins-major; `vpr_peak` the volitional
/// peak per direction; the VPR1 plateau is half that peak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthGroup {
    pub group: Group,
    pub n_synergies: usize,
    pub muscles: Vec<String>,
    pub w: Array2<f64>,
    pub apr: Array2<f64>,
    pub vpr_peak: Array2<f64>,
}

impl GroundTruthGroup {
    /// Synergy vectors as they appear after per-muscle normalization: with
    /// disjoint supports every active muscle maps to 1.
    pub fn normalized_w(&self) -> Array2<f64> {
        self.w.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    /// Activation of every synergy at `offset` seconds after the perturbation.
    pub fn activation(&self, direction: Direction, offset: f64) -> Vec<f64> {
        let d = direction.index();
        (0..self.n_synergies)
            .map(|i| {
                let apr = |b: usize| self.apr[[i, b * 4 + d]];
                let peak = self.vpr_peak[[i, d]];
                let vpr1 = 0.5 * peak;
                let lerp = |t0: f64, t1: f64, a: f64, b: f64| a + (b - a) * (offset - t0) / (t1 - t0);
                match offset {
                    x if x < 0.0 => 0.0,
                    x if x < RAMP_END => lerp(0.0, RAMP_END, 0.0, apr(0)),
                    x if x < APR_EDGES[1] => apr(0),
                    x if x < APR_EDGES[2] => apr(1),
                    x if x < APR_EDGES[3] => apr(2),
                    x if x < VPR1_END => vpr1,
                    x if x < VPR_PEAK => lerp(VPR1_END, VPR_PEAK, vpr1, peak),
                    x if x < VPR_END => lerp(VPR_PEAK, VPR_END, peak, 0.0),
                    _ => 0.0,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub noise: f64,
    pub groups: Vec<GroundTruthGroup>,
}

impl GroundTruth {
    pub fn group(&self, g: Group) -> Option<&GroundTruthGroup> {
        self.groups.iter().find(|x| x.group == g)
    }
}

/// Splits `total` items into `n` near-equal sizes, larger ones first.
fn split_sizes(total: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| total / n + usize::from(i < total % n)).collect()
}

/// APR cells per synergy, each at unit amplitude. Counts are inversely
/// proportional to support size so synergies carry similar energy; one each
/// when the budget is too small.
fn cell_counts(sizes: &[usize]) -> Vec<usize> {
    let max = *sizes.iter().max().expect("nonempty");
    let ratio: Vec<usize> = sizes.iter().map(|&s| ((max as f64 / s as f64).round() as usize).max(1)).collect();
    let base = APR_CELLS / ratio.iter().sum::<usize>();
    if base == 0 {
        vec![1; sizes.len()]
    } else {
        ratio.iter().map(|r| r * base).collect()
    }
}

pub fn generate_ground_truth(group: Group, n_synergies: usize, seed: u64) -> Result<GroundTruthGroup, SimError> {
    if !(1..=10).contains(&n_synergies) {
        return Err(SimError::Spec(format!("{n_synergies} synergies outside 1..=10")));
    }
    let mut rng = child_rng(seed, 1);
    let mut muscles: Vec<usize> = (0..N_CHANNELS).collect();
    muscles.shuffle(&mut rng);
    let mut cells: Vec<usize> = (0..APR_CELLS).collect();
    cells.shuffle(&mut rng);

    let sizes = split_sizes(N_CHANNELS, n_synergies);
    let counts = cell_counts(&sizes);
    let mut w = Array2::zeros((N_CHANNELS, n_synergies));
    let mut apr = Array2::zeros((n_synergies, APR_CELLS));
    let mut vpr_peak = Array2::zeros((n_synergies, 4));
    let (mut m_next, mut c_next) = (0, 0);
    for i in 0..n_synergies {
        for &m in &muscles[m_next..m_next + sizes[i]] {
            w[[m, i]] = rng.random_range(0.5..=1.0);
        }
        m_next += sizes[i];
        for &c in &cells[c_next..c_next + counts[i]] {
            apr[[i, c]] = 1.0;
        }
        c_next += counts[i];
        for d in 0..4 {
            vpr_peak[[i, d]] = rng.random_range(0.3..=1.0);
        }
    }
    Ok(GroundTruthGroup {
        group,
        n_synergies,
        muscles: MuscleChannel::all().iter().map(|c| c.label()).collect(),
        w,
        apr,
        vpr_peak,
    })
}

/// Raw EMG for one trial: envelope times a Gaussian carrier times a noisy
/// per-channel gain.
pub fn synthesize_emg(
    truth: &GroundTruthGroup,
    direction: Direction,
    t_onset: f64,
    t_end: f64,
    spec: &CohortSpec,
    seed: u64,
) -> EmgStream {
    let mut rng = child_rng(seed, 0);
    let n = (t_end * spec.emg_rate_hz).round() as usize + 1;
    let t: Vec<f64> = (0..n).map(|k| k as f64 / spec.emg_rate_hz).collect();
    let gains: Vec<f64> =
        (0..N_CHANNELS).map(|_| (1.0 + spec.noise * rng.sample::<f64, _>(StandardNormal)).max(0.0)).collect();
    let mut data = Array2::zeros((N_CHANNELS, n));
    for (k, &tk) in t.iter().enumerate() {
        let c = truth.activation(direction, tk - t_onset);
        for m in 0..N_CHANNELS {
            let env = spec.envelope_floor + (0..truth.n_synergies).map(|i| truth.w[[m, i]] * c[i]).sum::<f64>();
            let carrier: f64 = rng.sample(StandardNormal);
            data[[m, k]] = spec.emg_scale_mv * gains[m] * env * carrier;
        }
    }
    EmgStream { rate_hz: spec.emg_rate_hz, t, data }
}

pub fn generate_synthetic_cohort(spec: &CohortSpec) -> Result<(Cohort, GroundTruth), SimError> {
    spec.validate()?;
    let mut subjects = Vec::new();
    let mut truths = Vec::new();
    let mut subject_index = 0u64;
    for (gi, gs) in spec.groups.iter().enumerate() {
        if truths.iter().any(|t: &GroundTruthGroup| t.group == gs.group) {
            return Err(SimError::Spec(format!("group {} listed twice", gs.group)));
        }
        let truth = generate_ground_truth(gs.group, gs.n_synergies, derive_seed(spec.seed, 1000 + gi as u64))?;
        for j in 0..gs.n_subjects {
            let subject_seed = derive_seed(spec.seed, 2000 + subject_index);
            subject_index += 1;
            subjects.push(generate_subject(spec, &truth, format!("{}-{:02}", gs.group, j + 1), subject_seed)?);
        }
        truths.push(truth);
    }
    let cohort =
        Cohort { subjects, plate_layout: spec.plate_layout.clone(), trials_per_session: Some(spec.trials_per_session) };
    Ok((cohort, GroundTruth { seed: spec.seed, noise: spec.noise, groups: truths }))
}

/// Thresholds (N) in all four directions and the balance boundary (mm)
/// spanned by every maintained calibration pulse.
pub fn calibrate_subject(
    body: &BodyParams,
    pulse_duration: f64,
    opts: &CalibrationOptions,
) -> Result<(BTreeMap<Direction, f64>, BalanceBoundary), SimError> {
    let mut thresholds = BTreeMap::new();
    let mut points = Vec::new();
    for d in Direction::ALL {
        let cal = calibrate_threshold(body, pulse_duration, d, opts)?;
        thresholds.insert(d, cal.force_n);
        points.extend(cal.maintained_paths.iter().flatten().map(|p| [p[0] * 1000.0, p[1] * 1000.0]));
    }
    Ok((thresholds, build_boundary(&points, [0.0, 0.0])?))
}

fn generate_subject(spec: &CohortSpec, truth: &GroundTruthGroup, id: String, seed: u64) -> Result<Subject, SimError> {
    let mut rng = child_rng(seed, 0);
    let mut rig = spec.rig.clone();
    rig.body.mass_kg = rng.random_range(spec.mass_range_kg[0]..=spec.mass_range_kg[1]);

    let (thresholds, boundary) = calibrate_subject(&rig.body, rig.pulse_duration, &spec.calibration)?;
    let ff = truth.group == Group::FF;

    let mut sessions = Vec::new();
    let mut trial_id = 0u32;
    for s in 1..=spec.sessions {
        let mut trials = Vec::with_capacity(spec.trials_per_session);
        for k in 0..spec.trials_per_session {
            trial_id += 1;
            let direction = Direction::ALL[k % 4];
            let trial_seed = derive_seed(seed, trial_id as u64);
            let script = TrialScript {
                trial_id,
                direction,
                perturbation_force: thresholds[&direction],
                t_perturb_onset: rng.random_range(0.0..=MAX_ONSET_DELAY_S),
                perturbation_duration: rig.pulse_duration,
                ff_enabled: ff,
                seed: trial_seed,
                ball_offset: None,
            };
            let sim = run_trial(
                &rig,
                &spec.task,
                &spec.plate_layout,
                &script,
                Some(&boundary),
                spec.plate_rate_hz,
                spec.marker_rate_hz,
            )?;
            let emg = synthesize_emg(truth, direction, sim.t_robust_onset, sim.t_end, spec, derive_seed(trial_seed, 1));
            trials.push(TrialRecording {
                trial_id,
                subject_id: id.clone(),
                group: truth.group,
                session: s,
                direction,
                emg,
                plates: sim.plates,
                pelvis: sim.pelvis,
                t_vr_onset: sim.t_vr_onset,
                t_robust_onset: sim.t_robust_onset,
                t_end: sim.t_end,
                outcome: sim.outcome,
                valid: true,
            });
        }
        sessions.push(Session { index: s, trials });
    }
    Ok(Subject {
        subject_id: id,
        group: truth.group,
        handedness: Handedness::Right,
        body_weight_n: rig.body.weight_n(),
        perturbation_thresholds_n: thresholds,
        sessions,
    })
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Writes `ground_truth.json` into `dir` and returns its path.
pub fn save_ground_truth(truth: &GroundTruth, dir: &Path) -> Result<PathBuf, SimError> {
    let path = dir.join(GROUND_TRUTH_FILE);
    let text = serde_json::to_string_pretty(truth).map_err(|e| SimError::Spec(e.to_string()))?;
    fs::write(&path, text).map_err(|e| SimError::Spec(format!("{}: {e}", path.display())))?;
    Ok(path)
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::Spec(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| SimError::Spec(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CohortSpec {
        CohortSpec {
            groups: vec![
                GroupSpec { group: Group::FF, n_subjects: 1, n_synergies: 4 },
                GroupSpec { group: Group::NoFF, n_subjects: 1, n_synergies: 8 },
            ],
            trials_per_session: 4,
            seed,
            ..CohortSpec::default()
        }
    }

    #[test]
    fn balanced_layouts() {
        assert_eq!(split_sizes(14, 8), vec![2, 2, 2, 2, 2, 2, 1, 1]);
        assert_eq!(cell_counts(&split_sizes(14, 8)), vec![1, 1, 1, 1, 1, 1, 2, 2]);
        assert_eq!(split_sizes(14, 4), vec![4, 4, 3, 3]);
        assert_eq!(cell_counts(&split_sizes(14, 4)), vec![3, 3, 3, 3]);
        assert_eq!(cell_counts(&split_sizes(14, 10)), vec![1; 10]);
    }

    #[test]
    fn truth_structure() {
        for n in 1..=10 {
            let g = generate_ground_truth(Group::FF, n, 3).unwrap();
            for m in 0..N_CHANNELS {
                assert_eq!(g.w.row(m).iter().filter(|&&v| v > 0.0).count(), 1);
            }
            for c in 0..APR_CELLS {
                assert!(g.apr.column(c).iter().filter(|&&v| v > 0.0).count() <= 1);
            }
            for i in 0..n {
                assert!(g.apr.row(i).iter().any(|&v| v == 1.0));
            }
        }
        assert!(generate_ground_truth(Group::FF, 11, 3).is_err());
    }

    #[test]
    fn activation_profile() {
        let g = generate_ground_truth(Group::NoFF, 8, 5).unwrap();
        let d = Direction::Backward;
        let at = |x: f64| g.activation(d, x);
        assert!(at(-0.01).iter().all(|&v| v == 0.0));
        assert_eq!(at(0.12)[0], g.apr[[0, d.index()]]);
        assert_eq!(at(0.30)[1], g.apr[[1, 8 + d.index()]]);
        assert!((at(0.7)[2] - g.vpr_peak[[2, d.index()]]).abs() < 1e-12);
        assert!(at(1.3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_valid() {
        let (a, ta) = generate_synthetic_cohort(&small(4)).unwrap();
        let (b, tb) = generate_synthetic_cohort(&small(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        a.validate().unwrap();
        assert_eq!(a.n_trials(), 8);
        let (c, _) = generate_synthetic_cohort(&small(5)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ground_truth_round_trip() {
        let (_, truth) = generate_synthetic_cohort(&small(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = save_ground_truth(&truth, dir.path()).unwrap();
        assert_eq!(load_ground_truth(&path).unwrap(), truth);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small(1);
        s.groups[0].n_synergies = 0;
        assert!(generate_synthetic_cohort(&s).is_err());
        let mut s = small(1);
        s.groups[1].group = Group::FF;
        assert!(generate_synthetic_cohort(&s).is_err());
        let mut s = small(1);
        s.noise = -0.1;
        assert!(generate_synthetic_cohort(&s).is_err());
    }
}
