//! Perturbation-threshold calibration with incrementally stronger pulses.

use serde::{Deserialize, Serialize};

use super::body::{step_body, BodyParams, BodyState, Forces};
use crate::error::SimError;
use crate::model::Direction;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Starting pulse as a fraction of body weight.
    pub start_fraction: f64,
    pub increment_fraction: f64,
    pub cap_fraction: f64,
    pub dt: f64,
    /// Observation time after each pulse onset, s.
    pub settle_s: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            start_fraction: 0.40,
            increment_fraction: 0.01,
            cap_fraction: 1.50,
            dt: 0.001,
            settle_s: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub direction: Direction,
    pub force_n: f64,
    pub fraction: f64,
    /// The body never stepped up to the cap; `force_n` is the cap.
    pub capped: bool,
    /// The body stepped at the starting force; `force_n` is the start.
    pub fell_at_start: bool,
    /// Pelvic paths (m) of every pulse that was withstood.
    pub maintained_paths: Vec<Vec<[f64; 2]>>,
}

/// Simulates one rectangular pulse from rest. Returns whether a step occurred
/// and the pelvic path sampled every `record_every` steps.
pub fn simulate_pulse(
    body: &BodyParams,
    force: [f64; 2],
    duration: f64,
    opts: &CalibrationOptions,
    record_every: usize,
) -> Result<(bool, Vec<[f64; 2]>), SimError> {
    let n = (opts.settle_s / opts.dt).round() as usize;
    let pulse_steps = (duration / opts.dt).round() as usize;
    let mut s = BodyState::default();
    let mut path = vec![s.pos];
    for k in 0..n {
        let f = if k < pulse_steps { Forces { trunk: force, pelvis: [0.0; 2] } } else { Forces::ZERO };
        let o = step_body(body, &s, &f, [0.0; 2], opts.dt)?;
        if o.stepping {
            return Ok((true, path));
        }
        s = o.state;
        if (k + 1) % record_every.max(1) == 0 {
            path.push(s.pos);
        }
    }
    Ok((false, path))
}

/// Starts at `start_fraction` of body weight and raises the pulse by
/// `increment_fraction` while balance is maintained. Returns the last
/// maintained force.
pub fn calibrate_threshold(
    body: &BodyParams,
    pulse_duration: f64,
    direction: Direction,
    opts: &CalibrationOptions,
) -> Result<Calibration, SimError> {
    body.validate()?;
    if !(opts.increment_fraction > 0.0) || !(opts.start_fraction > 0.0) || opts.cap_fraction < opts.start_fraction {
        return Err(SimError::Spec("invalid calibration fractions".into()));
    }
    let bw = body.weight_n();
    let u = direction.unit();
    let steps = ((opts.cap_fraction - opts.start_fraction) / opts.increment_fraction + 1e-9).floor() as usize;
    let mut maintained_paths = Vec::new();
    let mut last: Option<f64> = None;
    for k in 0..=steps {
        let fraction = opts.start_fraction + k as f64 * opts.increment_fraction;
        let f = fraction * bw;
        let (fell, path) = simulate_pulse(body, [u[0] * f, u[1] * f], pulse_duration, opts, 10)?;
        if fell {
            return Ok(match last {
                Some(fr) => Calibration {
                    direction,
                    force_n: fr * bw,
                    fraction: fr,
                    capped: false,
                    fell_at_start: false,
                    maintained_paths,
                },
                None => Calibration {
                    direction,
                    force_n: f,
                    fraction,
                    capped: false,
                    fell_at_start: true,
                    maintained_paths,
                },
            });
        }
        maintained_paths.push(path);
        last = Some(fraction);
    }
    let fr = last.expect("at least one pulse");
    Ok(Calibration { direction, force_n: fr * bw, fraction: fr, capped: true, fell_at_start: false, maintained_paths })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_land_in_range() {
        let body = BodyParams::default();
        for d in Direction::ALL {
            let c = calibrate_threshold(&body, 0.15, d, &CalibrationOptions::default()).unwrap();
            assert!(!c.capped && !c.fell_at_start, "{d}: {c:?}");
            assert!(c.fraction >= 0.40 && c.fraction < 1.5);
        }
    }

    #[test]
    fn flags() {
        let stiff = BodyParams { half_ap_m: 10.0, half_ml_m: 10.0, ..BodyParams::default() };
        let c = calibrate_threshold(&stiff, 0.15, Direction::Forward, &CalibrationOptions::default()).unwrap();
        assert!(c.capped);
        assert!((c.fraction - 1.5).abs() < 1e-9);
        let weak = BodyParams { half_ap_m: 0.005, ..BodyParams::default() };
        let c = calibrate_threshold(&weak, 0.15, Direction::Forward, &CalibrationOptions::default()).unwrap();
        assert!(c.fell_at_start);
        assert_eq!(c.fraction, 0.40);
    }

    #[test]
    fn larger_support_never_lowers_threshold() {
        let mut prev = 0.0;
        for half in [0.08, 0.09, 0.10, 0.11, 0.12] {
            let body = BodyParams { half_ap_m: half, ..BodyParams::default() };
            let c = calibrate_threshold(&body, 0.15, Direction::Backward, &CalibrationOptions::default()).unwrap();
            assert!(c.force_n >= prev);
            prev = c.force_n;
        }
    }
}
