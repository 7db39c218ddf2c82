//! Time-binning of EMG envelopes around the perturbation onset.
//!
//! Seven 75 ms bins per channel and trial: background (BK) just before the
//! onset, three fixed automatic-response bins (APR1-3) from 100 to 325 ms
//! after it, a fixed VPR1 bin at 325-400 ms, and two data-driven bins: VPR2
//! centered on the envelope peak and VPR3 centered on the first down-crossing
//! of 5% of that peak. All windows are half-open `[start, end)`.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dsp::{Envelopes, Signal};
use crate::error::BinningError;
use crate::model::{Direction, MuscleChannel, N_CHANNELS};

pub const BIN_WIDTH_S: f64 = 0.075;
/// VPR3 is centered where the envelope first drops below this fraction of its peak.
pub const OFFSET_THRESHOLD: f64 = 0.05;
/// Start of the VPR peak search, relative to onset (end of VPR1).
pub const VPR_SEARCH_START_S: f64 = 0.400;

const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bin {
    #[serde(rename = "BK")]
    Bk,
    #[serde(rename = "APR1")]
    Apr1,
    #[serde(rename = "APR2")]
    Apr2,
    #[serde(rename = "APR3")]
    Apr3,
    #[serde(rename = "VPR1")]
    Vpr1,
    #[serde(rename = "VPR2")]
    Vpr2,
    #[serde(rename = "VPR3")]
    Vpr3,
}

impl Bin {
    pub const ALL: [Bin; 7] = [Bin::Bk, Bin::Apr1, Bin::Apr2, Bin::Apr3, Bin::Vpr1, Bin::Vpr2, Bin::Vpr3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bin::Bk => "BK",
            Bin::Apr1 => "APR1",
            Bin::Apr2 => "APR2",
            Bin::Apr3 => "APR3",
            Bin::Vpr1 => "VPR1",
            Bin::Vpr2 => "VPR2",
            Bin::Vpr3 => "VPR3",
        }
    }

    pub fn parse(s: &str) -> Option<Bin> {
        Bin::ALL.into_iter().find(|b| b.as_str().eq_ignore_ascii_case(s))
    }

    /// Start of the window relative to onset, for the bins with a fixed position.
    pub fn fixed_offset(self) -> Option<f64> {
        match self {
            Bin::Bk => Some(-BIN_WIDTH_S),
            Bin::Apr1 => Some(0.100),
            Bin::Apr2 => Some(0.175),
            Bin::Apr3 => Some(0.250),
            Bin::Vpr1 => Some(0.325),
            Bin::Vpr2 | Bin::Vpr3 => None,
        }
    }
}

impl fmt::Display for Bin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    Apr,
    Vpr,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Apr => "APR",
            Phase::Vpr => "VPR",
        }
    }

    pub fn bins(self, include_bk: bool) -> Vec<Bin> {
        let body = match self {
            Phase::Apr => [Bin::Apr1, Bin::Apr2, Bin::Apr3],
            Phase::Vpr => [Bin::Vpr1, Bin::Vpr2, Bin::Vpr3],
        };
        let mut bins = Vec::with_capacity(4);
        if include_bk {
            bins.push(Bin::Bk);
        }
        bins.extend(body);
        bins
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinWindow {
    pub start: f64,
    pub end: f64,
    /// The window was shortened or shifted to stay inside the trial.
    pub clipped: bool,
}

impl BinWindow {
    pub fn new(start: f64, end: f64) -> Self {
        BinWindow { start, end, clipped: false }
    }

    pub fn centered(center: f64) -> Self {
        BinWindow::new(center - BIN_WIDTH_S / 2.0, center + BIN_WIDTH_S / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    fn clip_end(mut self, t_end: f64) -> Self {
        if self.end > t_end {
            self.end = t_end;
            self.clipped = true;
        }
        self
    }
}

/// Window of a fixed-position bin (BK, APR1-3, VPR1) for a given onset.
pub fn fixed_window(bin: Bin, t_onset: f64) -> Option<BinWindow> {
    bin.fixed_offset().map(|off| BinWindow::new(t_onset + off, t_onset + off + BIN_WIDTH_S))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VprWindows {
    pub vpr2: BinWindow,
    pub vpr3: BinWindow,
    pub peak_time: f64,
    pub peak_value: f64,
    /// Time of the 5%-of-peak down-crossing, if one occurs before `t_end`.
    pub offset_time: Option<f64>,
    /// VPR3 was pinned to end at `t_end` because no crossing was found.
    pub vpr3_clamped: bool,
    /// False when the envelope is zero over the whole search window.
    pub valid: bool,
}

fn first_index_at_or_after(sig: &Signal, t: f64) -> usize {
    let x = (t - sig.t0) * sig.rate_hz;
    (x - TIME_EPS).ceil().max(0.0) as usize
}

/// Locates VPR2 (peak) and VPR3 (offset) windows for one channel.
pub fn find_vpr_windows(env: &Signal, t_onset: f64, t_end: f64) -> VprWindows {
    let search_start = t_onset + VPR_SEARCH_START_S;
    let k0 = first_index_at_or_after(env, search_start).min(env.len());
    let k1 = (((t_end - env.t0) * env.rate_hz + TIME_EPS).floor().max(-1.0) as isize + 1).clamp(0, env.len() as isize)
        as usize;

    let invalid = || {
        let w = BinWindow::new(search_start, search_start + BIN_WIDTH_S);
        VprWindows {
            vpr2: w,
            vpr3: w,
            peak_time: search_start,
            peak_value: 0.0,
            offset_time: None,
            vpr3_clamped: false,
            valid: false,
        }
    };
    if k0 >= k1 {
        return invalid();
    }
    let mut peak_k = k0;
    for k in k0..k1 {
        if env.samples[k] > env.samples[peak_k] {
            peak_k = k;
        }
    }
    let peak = env.samples[peak_k];
    if !(peak > 0.0) {
        return invalid();
    }
    let peak_time = env.time(peak_k);
    let vpr2 = BinWindow::centered(peak_time).clip_end(t_end);

    let threshold = OFFSET_THRESHOLD * peak;
    let crossing = (peak_k + 1..k1).find(|&k| env.samples[k] < threshold).map(|k| {
        let (a, b) = (env.samples[k - 1], env.samples[k]);
        let frac = if a > b { (a - threshold) / (a - b) } else { 1.0 };
        env.time(k - 1) + frac / env.rate_hz
    });
    let (vpr3, clamped) = match crossing {
        Some(tc) => (BinWindow::centered(tc).clip_end(t_end), false),
        None => (BinWindow { start: t_end - BIN_WIDTH_S, end: t_end, clipped: true }, true),
    };
    VprWindows { vpr2, vpr3, peak_time, peak_value: peak, offset_time: crossing, vpr3_clamped: clamped, valid: true }
}

/// Mean of the samples whose timestamps fall in `[start, end)`.
pub fn bin_average(env: &Signal, window: &BinWindow) -> Result<f64, BinningError> {
    let a = first_index_at_or_after(env, window.start).min(env.len());
    let b = first_index_at_or_after(env, window.end).min(env.len());
    if b <= a {
        return Err(BinningError::EmptyWindow { start: window.start, end: window.end });
    }
    let s = &env.samples[a..b];
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Windows for all seven bins of one channel.
pub fn channel_windows(env: &Signal, t_onset: f64, t_end: f64) -> ([BinWindow; 7], VprWindows) {
    let vpr = find_vpr_windows(env, t_onset, t_end);
    let w = |b: Bin| fixed_window(b, t_onset).expect("fixed bin");
    ([w(Bin::Bk), w(Bin::Apr1), w(Bin::Apr2), w(Bin::Apr3), w(Bin::Vpr1), vpr.vpr2, vpr.vpr3], vpr)
}

/// Raw per-bin means of one trial, before normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialBins {
    pub subject_id: String,
    pub session: u32,
    pub trial_id: u32,
    pub direction: Direction,
    pub valid: bool,
    /// channels × 7 bins, in `Bin::ALL` order
    pub values: Array2<f64>,
    pub vpr: Vec<VprWindows>,
}

pub fn bin_trial(
    env: &Envelopes,
    t_onset: f64,
    t_end: f64,
    ids: (&str, u32, u32),
    direction: Direction,
    valid: bool,
) -> Result<TrialBins, BinningError> {
    let n_ch = env.data.nrows();
    let mut values = Array2::<f64>::zeros((n_ch, Bin::ALL.len()));
    let mut vprs = Vec::with_capacity(n_ch);
    for c in 0..n_ch {
        let sig = env.channel(c);
        let (windows, vpr) = channel_windows(&sig, t_onset, t_end);
        for (b, w) in windows.iter().enumerate() {
            values[[c, b]] = bin_average(&sig, w)?;
        }
        vprs.push(vpr);
    }
    Ok(TrialBins {
        subject_id: ids.0.to_string(),
        session: ids.1,
        trial_id: ids.2,
        direction,
        valid,
        values,
        vpr: vprs,
    })
}

fn row_label(r: usize, n_rows: usize) -> String {
    if n_rows == N_CHANNELS {
        MuscleChannel::from_id(r).map(|c| c.label()).unwrap_or_else(|| format!("row {r}"))
    } else {
        format!("row {r}")
    }
}

/// Divides each row (muscle) by its maximum so that the maximum maps to 1.
pub fn normalize_per_muscle(raw: &Array2<f64>) -> Result<Array2<f64>, BinningError> {
    let mut out = raw.clone();
    let n_rows = raw.nrows();
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > 0.0) {
            return Err(BinningError::DeadChannel(row_label(r, n_rows)));
        }
        row.mapv_inplace(|v| v / max);
    }
    Ok(out)
}

/// Normalizes every valid trial of one subject by the per-muscle maximum over
/// all bins, directions and trials. With `per_session`, each session gets its
/// own maximum. Invalid trials are passed through unchanged.
pub fn normalize_subject_trials(trials: &[TrialBins], per_session: bool) -> Result<Vec<TrialBins>, BinningError> {
    let mut out = trials.to_vec();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    if per_session {
        let mut sessions: Vec<u32> = trials.iter().filter(|t| t.valid).map(|t| t.session).collect();
        sessions.sort_unstable();
        sessions.dedup();
        for s in sessions {
            groups.push((0..trials.len()).filter(|&i| trials[i].valid && trials[i].session == s).collect());
        }
    } else {
        groups.push((0..trials.len()).filter(|&i| trials[i].valid).collect());
    }
    for idx in groups {
        if idx.is_empty() {
            continue;
        }
        let n_ch = trials[idx[0]].values.nrows();
        let n_bins = Bin::ALL.len();
        let mut stacked = Array2::<f64>::zeros((n_ch, n_bins * idx.len()));
        for (j, &i) in idx.iter().enumerate() {
            stacked.slice_mut(ndarray::s![.., j * n_bins..(j + 1) * n_bins]).assign(&trials[i].values);
        }
        let norm = normalize_per_muscle(&stacked)?;
        for (j, &i) in idx.iter().enumerate() {
            out[i].values = norm.slice(ndarray::s![.., j * n_bins..(j + 1) * n_bins]).to_owned();
        }
    }
    Ok(out)
}

/// Muscles × (bin, direction) matrix of trial-averaged normalized activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedActivationMatrix {
    pub phase: Phase,
    pub values: Array2<f64>,
    pub rows: Vec<MuscleChannel>,
    /// Bins-major, directions-minor.
    pub columns: Vec<(Bin, Direction)>,
    pub trial_count_per_cell: Vec<usize>,
}

impl BinnedActivationMatrix {
    pub fn column_index(&self, bin: Bin, direction: Direction) -> Option<usize> {
        self.columns.iter().position(|&(b, d)| b == bin && d == direction)
    }
}

pub fn column_labels(phase: Phase, include_bk: bool) -> Vec<(Bin, Direction)> {
    phase.bins(include_bk).into_iter().flat_map(|b| Direction::ALL.into_iter().map(move |d| (b, d))).collect()
}

/// Averages normalized trials into the phase matrix. Trials are summed in
/// (subject, session, trial) order so the result does not depend on input
/// order. Each row is re-anchored to a maximum of exactly 1.
pub fn assemble_matrix(
    trials: &[TrialBins],
    phase: Phase,
    include_bk: bool,
) -> Result<BinnedActivationMatrix, BinningError> {
    let mut order: Vec<&TrialBins> = trials.iter().filter(|t| t.valid).collect();
    order.sort_by(|a, b| {
        (a.subject_id.as_str(), a.session, a.trial_id).cmp(&(b.subject_id.as_str(), b.session, b.trial_id))
    });
    let n_ch = order.first().map(|t| t.values.nrows()).unwrap_or(N_CHANNELS);
    if let Some(bad) = order.iter().find(|t| t.values.nrows() != n_ch || t.values.ncols() != Bin::ALL.len()) {
        return Err(BinningError::Shape(format!("trial {} has shape {:?}", bad.trial_id, bad.values.dim())));
    }
    for d in Direction::ALL {
        if !order.iter().any(|t| t.direction == d) {
            return Err(BinningError::MissingDirection(d.as_str().to_string()));
        }
    }
    let columns = column_labels(phase, include_bk);
    let mut sums = Array2::<f64>::zeros((n_ch, columns.len()));
    let mut counts = vec![0usize; columns.len()];
    for (j, &(bin, dir)) in columns.iter().enumerate() {
        for t in order.iter().filter(|t| t.direction == dir) {
            for c in 0..n_ch {
                sums[[c, j]] += t.values[[c, bin.index()]];
            }
            counts[j] += 1;
        }
        if counts[j] == 0 {
            return Err(BinningError::EmptyCell { bin: bin.to_string(), direction: dir.to_string() });
        }
        let n = counts[j] as f64;
        sums.column_mut(j).mapv_inplace(|v| v / n);
    }
    let values = normalize_per_muscle(&sums)?;
    let rows = (0..n_ch).map(|c| MuscleChannel::from_id(c % N_CHANNELS).expect("channel id in range")).collect();
    Ok(BinnedActivationMatrix { phase, values, rows, columns, trial_count_per_cell: counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 2000.0;

    fn signal_from(f: impl Fn(f64) -> f64, t0: f64, secs: f64) -> Signal {
        let n = (secs * FS) as usize + 1;
        let samples = (0..n).map(|k| f(t0 + k as f64 / FS)).collect();
        Signal::new(t0, FS, samples)
    }

    #[test]
    fn fixed_windows_are_75ms() {
        let onset = 0.731;
        for b in [Bin::Bk, Bin::Apr1, Bin::Apr2, Bin::Apr3, Bin::Vpr1] {
            let w = fixed_window(b, onset).unwrap();
            assert!((w.width() - 0.075).abs() < 1e-12);
        }
        let apr1 = fixed_window(Bin::Apr1, onset).unwrap();
        assert!((apr1.start - (onset + 0.100)).abs() < 1e-15);
        assert!((apr1.end - (onset + 0.175)).abs() < 1e-15);
        assert!(fixed_window(Bin::Vpr2, onset).is_none());
    }

    #[test]
    fn triangle_peak_and_offset() {
        let onset = 0.5;
        let tri = move |t: f64| {
            let r = t - onset;
            if r <= 0.0 || r >= 2.0 {
                0.0
            } else if r <= 1.0 {
                r
            } else {
                2.0 - r
            }
        };
        let env = signal_from(tri, 0.0, 3.0);
        let w = find_vpr_windows(&env, onset, 2.9);
        assert!(w.valid && !w.vpr3_clamped);
        assert!((w.vpr2.center() - (onset + 1.0)).abs() <= 1.0 / FS);
        // 5% of the peak on the falling ramp 2 - r: r = 1.95.
        assert!((w.offset_time.unwrap() - (onset + 1.95)).abs() <= 1.0 / FS);
        assert!((w.vpr3.center() - (onset + 1.95)).abs() <= 1.0 / FS);
        assert!((w.vpr2.width() - 0.075).abs() < 1e-12);
        assert!((w.vpr3.width() - 0.075).abs() < 1e-12);
    }

    #[test]
    fn no_offset_clamps_vpr3_to_end() {
        let env = signal_from(|t| 1.0 + t, 0.0, 3.0);
        let w = find_vpr_windows(&env, 0.5, 2.5);
        assert!(w.vpr3_clamped && w.vpr3.clipped);
        assert!((w.vpr3.end - 2.5).abs() < 1e-12);
        assert!((w.vpr3.width() - 0.075).abs() < 1e-12);
        // Peak at the very end: VPR2 overruns and is clipped.
        assert!(w.vpr2.clipped);
        assert!((w.vpr2.end - 2.5).abs() < 1e-12);
    }

    #[test]
    fn constant_envelope_ties_break_earliest() {
        let env = signal_from(|_| 0.3, 0.0, 3.0);
        let w = find_vpr_windows(&env, 0.5, 2.5);
        assert!((w.peak_time - 0.9).abs() <= 1.0 / FS);
        assert!((w.vpr2.center() - 0.9).abs() <= 1.0 / FS);
    }

    #[test]
    fn zero_envelope_is_invalid() {
        let env = signal_from(|t| if t < 0.8 { 1.0 } else { 0.0 }, 0.0, 3.0);
        let w = find_vpr_windows(&env, 0.5, 2.5);
        assert!(!w.valid);
    }

    #[test]
    fn scaling_does_not_move_vpr_windows() {
        let f = |t: f64| (-(t - 1.7).powi(2) / 0.02).exp() + 0.01;
        let a = find_vpr_windows(&signal_from(f, 0.0, 3.0), 0.4, 2.9);
        let b = find_vpr_windows(&signal_from(move |t| 37.5 * f(t), 0.0, 3.0), 0.4, 2.9);
        assert_eq!(a.vpr2.center(), b.vpr2.center());
        assert!((a.vpr3.center() - b.vpr3.center()).abs() < 1e-12);
    }

    #[test]
    fn bin_average_examples() {
        let c = signal_from(|_| 0.5, 0.0, 1.0);
        assert_eq!(bin_average(&c, &BinWindow::new(0.2, 0.275)).unwrap(), 0.5);
        let (a, b) = (0.3, 0.375);
        let ramp = signal_from(move |t| ((t - a) / (b - a)).clamp(0.0, 1.0), 0.0, 1.0);
        let m = bin_average(&ramp, &BinWindow::new(a, b)).unwrap();
        assert!((m - 0.5).abs() <= 1.0 / (FS * (b - a)));
        assert!(matches!(bin_average(&c, &BinWindow::new(5.0, 5.075)), Err(BinningError::EmptyWindow { .. })));
    }

    #[test]
    fn half_open_membership() {
        // Samples at exactly 0.1 and 0.175 s: the first is in, the second out.
        let s = Signal::new(0.0, 40.0, (0..40).map(|k| k as f64).collect());
        // 40 Hz grid: 0.1 -> k=4, 0.175 -> k=7.
        let m = bin_average(&s, &BinWindow::new(0.1, 0.175)).unwrap();
        assert_eq!(m, (4.0 + 5.0 + 6.0) / 3.0);
    }

    #[test]
    fn normalize_examples() {
        let raw = ndarray::array![[2.0, 4.0, 8.0], [7.0, 0.0, 0.0]];
        let n = normalize_per_muscle(&raw).unwrap();
        assert_eq!(n.row(0).to_vec(), vec![0.25, 0.5, 1.0]);
        assert_eq!(normalize_per_muscle(&ndarray::array![[7.0]]).unwrap()[[0, 0]], 1.0);

        let mut scaled = raw.clone();
        scaled.row_mut(0).mapv_inplace(|v| v * 10.0);
        assert_eq!(normalize_per_muscle(&scaled).unwrap(), n);

        let dead = Array2::<f64>::zeros((14, 3));
        match normalize_per_muscle(&dead) {
            Err(BinningError::DeadChannel(name)) => assert_eq!(name, "TA_D"),
            other => panic!("{other:?}"),
        }
    }

    fn const_trial(id: u32, dir: Direction, level: f64) -> TrialBins {
        let mut values = Array2::<f64>::zeros((14, 7));
        for c in 0..14 {
            for b in 0..7 {
                values[[c, b]] = level * (1.0 + c as f64) * (1.0 + dir.index() as f64);
            }
        }
        TrialBins {
            subject_id: "S".into(),
            session: 1,
            trial_id: id,
            direction: dir,
            valid: true,
            values,
            vpr: Vec::new(),
        }
    }

    #[test]
    fn assemble_shape_and_constant_columns() {
        let trials: Vec<_> = Direction::ALL.iter().enumerate().map(|(i, &d)| const_trial(i as u32, d, 0.2)).collect();
        let m = assemble_matrix(&trials, Phase::Apr, true).unwrap();
        assert_eq!(m.values.dim(), (14, 16));
        assert_eq!(m.columns[0], (Bin::Bk, Direction::Forward));
        assert_eq!(m.columns[4], (Bin::Apr1, Direction::Forward));
        for d in Direction::ALL {
            let cols: Vec<usize> = (0..16).filter(|&j| m.columns[j].1 == d).collect();
            for &j in &cols[1..] {
                assert_eq!(m.values.column(j), m.values.column(cols[0]));
            }
        }
        for row in m.values.rows() {
            assert_eq!(row.iter().copied().fold(0.0, f64::max), 1.0);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let no_bk = assemble_matrix(&trials, Phase::Vpr, false).unwrap();
        assert_eq!(no_bk.values.dim(), (14, 12));
    }

    #[test]
    fn assemble_is_order_independent() {
        let mut trials = Vec::new();
        for i in 0..12u32 {
            let mut t = const_trial(i, Direction::ALL[(i % 4) as usize], 0.1);
            t.values.mapv_inplace(|v| v * (1.0 + 0.137 * i as f64).sin().abs());
            trials.push(t);
        }
        let a = assemble_matrix(&trials, Phase::Apr, true).unwrap();
        trials.reverse();
        trials.swap(1, 7);
        let b = assemble_matrix(&trials, Phase::Apr, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn assemble_requires_all_directions() {
        let trials = vec![const_trial(0, Direction::Forward, 1.0)];
        assert!(matches!(assemble_matrix(&trials, Phase::Apr, true), Err(BinningError::MissingDirection(_))));
    }
}
