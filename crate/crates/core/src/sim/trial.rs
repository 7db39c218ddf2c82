//! One simulated catch-and-throw trial with a trunk perturbation and the
//! optional pelvic assistive field.
//!
//! The hand policy is a deterministic reach model used only to produce
//! outcome statistics; it makes no claim of physiological realism.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::body::{energy, step_body, BodyParams, BodyState, Forces, GRAVITY};
use super::boundary::{assistive_force, BalanceBoundary};
use super::rig::{cable_tensions, RigModel};
use crate::error::SimError;
use crate::model::{
    Direction, MarkerStream, Outcome, PlateData, PlateLayout, PlateStream, MAX_ONSET_DELAY_S, TRIAL_WINDOW_S,
};
use crate::seed::child_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub t_vr_onset_s: f64,
    /// m/s
    pub ball_speed: f64,
    /// Ball travel distance to the catch point, m.
    pub launch_distance_m: f64,
    pub target_distance_m: f64,
    pub uncertainty_radius_m: f64,
    /// Fraction of the lateral ball offset taken up by leaning.
    pub reach_gain: f64,
    pub forward_lean_m: f64,
    pub lean_ramp_s: f64,
    pub throw_delay_s: f64,
    pub post_throw_s: f64,
    pub catch_radius_m: f64,
    pub reaction_s: f64,
    /// Random aiming error as a fraction of the target radius.
    pub aim_scatter: f64,
    /// Pelvic speed (m/s) that adds one target radius of aiming error.
    pub aim_speed_scale: f64,
}

impl Default for TaskModel {
    fn default() -> Self {
        TaskModel {
            t_vr_onset_s: 0.2,
            ball_speed: 0.30,
            launch_distance_m: 0.30,
            target_distance_m: 5.0,
            uncertainty_radius_m: 0.10,
            reach_gain: 0.4,
            forward_lean_m: 0.02,
            lean_ramp_s: 0.3,
            throw_delay_s: 0.8,
            post_throw_s: 0.3,
            catch_radius_m: 0.08,
            reaction_s: 0.1,
            aim_scatter: 0.6,
            aim_speed_scale: 0.25,
        }
    }
}

impl TaskModel {
    pub fn t_catch(&self) -> f64 {
        self.t_vr_onset_s + self.launch_distance_m / self.ball_speed
    }

    pub fn t_throw(&self) -> f64 {
        self.t_catch() + self.throw_delay_s
    }

    /// Trial end, on a 10 ms grid and inside the task window.
    pub fn t_end(&self) -> f64 {
        let end = (self.t_throw() + self.post_throw_s).min(self.t_vr_onset_s + TRIAL_WINDOW_S);
        (end * 100.0 + 1e-9).floor() / 100.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let pos =
            [self.ball_speed, self.launch_distance_m, self.target_distance_m, self.lean_ramp_s, self.catch_radius_m];
        if pos.iter().any(|&v| !(v > 0.0)) || self.t_vr_onset_s < 0.2 {
            return Err(SimError::Spec("task parameters must be positive and VR onset >= 0.2 s".into()));
        }
        if self.t_throw() > self.t_vr_onset_s + TRIAL_WINDOW_S {
            return Err(SimError::Spec("throw falls outside the task window".into()));
        }
        Ok(())
    }

    /// Lean reference: ramp toward the ball after launch, back to upright after the catch.
    pub fn lean_reference(&self, t: f64, lean: [f64; 2]) -> [f64; 2] {
        let ramp = |t0: f64| ((t - t0) / self.lean_ramp_s).clamp(0.0, 1.0);
        let s = ramp(self.t_vr_onset_s) * (1.0 - ramp(self.t_catch()));
        [s * lean[0], s * lean[1]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialScript {
    pub trial_id: u32,
    pub direction: Direction,
    pub perturbation_force: f64,
    /// Delay after VR onset, s.
    pub t_perturb_onset: f64,
    pub perturbation_duration: f64,
    pub ff_enabled: bool,
    pub seed: u64,
    /// Lateral and vertical ball offset (m); drawn from the seed when absent.
    pub ball_offset: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrial {
    pub plates: PlateData,
    pub pelvis: MarkerStream,
    pub t_vr_onset: f64,
    pub t_robust_onset: f64,
    pub t_end: f64,
    pub outcome: Outcome,
    pub ball_offset: [f64; 2],
    pub step_time: Option<f64>,
    pub max_excursion_mm: f64,
    /// Seconds during which the assistive field was nonzero.
    pub assist_time_s: f64,
    pub energy: Vec<f64>,
}

pub fn vr_score(hit_radius_fraction: f64) -> Result<u8, SimError> {
    if hit_radius_fraction.is_nan() || hit_radius_fraction < 0.0 {
        return Err(SimError::NegativeRadius(hit_radius_fraction));
    }
    let s = 10.0 - (10.0 * hit_radius_fraction).floor();
    Ok(s.clamp(0.0, 10.0) as u8)
}

fn disc_sample(rng: &mut impl Rng, radius: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let a = std::f64::consts::TAU * rng.random::<f64>();
    [r * a.cos(), r * a.sin()]
}

/// Splits the vertical load between the two plates so that their combined COP
/// equals `cop` (m), and returns the two wrenches.
fn plate_wrenches(cop: [f64; 2], fz: f64, shear: [f64; 2], layout: &PlateLayout) -> [[f64; 6]; 2] {
    let o = layout.origins_mm.map(|p| [p[0] / 1000.0, p[1] / 1000.0]);
    let frac1 = ((cop[1] - o[0][1]) / (o[1][1] - o[0][1])).clamp(0.0, 1.0);
    let fracs = [1.0 - frac1, frac1];
    let mut out = [[0.0; 6]; 2];
    for i in 0..2 {
        let f = fz * fracs[i];
        if f <= 0.0 {
            continue;
        }
        let local_y = if fracs[i] < 1.0 { 0.0 } else { cop[1] - o[i][1] };
        let local_x = cop[0] - o[i][0];
        out[i] = [shear[0] * fracs[i], shear[1] * fracs[i], f, local_y * f, -local_x * f, 0.0];
    }
    out
}

pub fn run_trial(
    rig: &RigModel,
    task: &TaskModel,
    layout: &PlateLayout,
    script: &TrialScript,
    boundary: Option<&BalanceBoundary>,
    plate_rate: f64,
    marker_rate: f64,
) -> Result<SimTrial, SimError> {
    task.validate()?;
    if !(0.0..=MAX_ONSET_DELAY_S).contains(&script.t_perturb_onset) {
        return Err(SimError::Spec(format!("perturbation onset {} s outside [0, 0.8]", script.t_perturb_onset)));
    }
    if script.ff_enabled && boundary.is_none() {
        return Err(SimError::Spec("force field enabled without a balance boundary".into()));
    }
    let dt = 1.0 / plate_rate;
    let decimate = (plate_rate / marker_rate).round() as usize;
    if decimate == 0 || ((plate_rate / decimate as f64) - marker_rate).abs() > 1e-9 {
        return Err(SimError::Spec("plate rate must be an integer multiple of the marker rate".into()));
    }
    let body = &BodyParams {
        hip_share: if script.ff_enabled { rig.ff_hip_share } else { rig.body.hip_share },
        ..rig.body.clone()
    };
    let mut rng = child_rng(script.seed, 0);
    let ball_offset = script.ball_offset.unwrap_or_else(|| disc_sample(&mut rng, task.uncertainty_radius_m));
    let lean = [task.forward_lean_m, task.reach_gain * ball_offset[0]];

    let t_vr = task.t_vr_onset_s;
    let t_robust = t_vr + script.t_perturb_onset;
    let t_end = task.t_end();
    let (t_catch, t_throw) = (task.t_catch(), task.t_throw());
    let n = (t_end * plate_rate).round() as usize;
    let u = script.direction.unit();
    let pert = [u[0] * script.perturbation_force, u[1] * script.perturbation_force];
    let fz = body.mass_kg * GRAVITY;

    let mut s = BodyState::default();
    let mut t_vec = Vec::with_capacity(n + 1);
    let mut w0 = Vec::with_capacity(n + 1);
    let mut w1 = Vec::with_capacity(n + 1);
    let mut marker_t = Vec::new();
    let mut marker_xy = Vec::new();
    let mut energy_trace = Vec::with_capacity(n + 1);
    let mut step_time = None;
    let mut max_exc: f64 = 0.0;
    let mut assist_steps = 0usize;
    let mut at_catch = None;
    let mut at_throw = None;

    for k in 0..=n {
        let t = k as f64 / plate_rate;
        let x_ref = task.lean_reference(t, lean);
        let trunk = if t >= t_robust && t < t_robust + script.perturbation_duration { pert } else { [0.0; 2] };
        let pos_mm = [s.pos[0] * 1000.0, s.pos[1] * 1000.0];
        let pelvis = match (script.ff_enabled, boundary) {
            (true, Some(b)) => assistive_force(b, pos_mm, rig.force_field_gain, rig.force_field_saturation),
            _ => [0.0; 2],
        };
        if pelvis != [0.0; 2] {
            assist_steps += 1;
        }
        if trunk != [0.0; 2] {
            cable_tensions(&rig.trunk, rig.max_cable_tension, s.pos, trunk)?;
        }
        if pelvis != [0.0; 2] {
            cable_tensions(&rig.pelvis, rig.max_cable_tension, s.pos, pelvis)?;
        }
        let out = step_body(body, &s, &Forces { trunk, pelvis }, x_ref, dt)?;
        if out.stepping && step_time.is_none() {
            step_time = Some(t);
        }
        let shear = [body.mass_kg * out.acc[0] - out.external[0], body.mass_kg * out.acc[1] - out.external[1]];
        let [a, b] = plate_wrenches(out.cop, fz, shear, layout);
        t_vec.push(t);
        w0.push(a);
        w1.push(b);
        if k % decimate == 0 {
            marker_t.push(t);
            marker_xy.push(pos_mm);
        }
        max_exc = max_exc.max(pos_mm[0].hypot(pos_mm[1]));
        energy_trace.push(energy(body, &s, x_ref));
        if at_catch.is_none() && t >= t_catch {
            at_catch = Some((s, x_ref));
        }
        if at_throw.is_none() && t >= t_throw {
            at_throw = Some(s);
        }
        s = out.state;
    }

    let stepped_before = |t_lim: f64| step_time.is_some_and(|ts| ts < t_lim);
    let speed = |st: &BodyState| st.vel[0].hypot(st.vel[1]);
    let caught = match at_catch {
        Some((st, x_ref)) => {
            let err = (st.pos[0] - x_ref[0]).hypot(st.pos[1] - x_ref[1]) + task.reaction_s * speed(&st);
            !stepped_before(t_catch) && err < task.catch_radius_m
        }
        None => false,
    };
    let aim_noise = rng.random::<f64>();
    let thrown = caught && !stepped_before(t_throw) && at_throw.is_some();
    let score = match (thrown, at_throw) {
        (true, Some(st)) => vr_score(task.aim_scatter * aim_noise + speed(&st) / task.aim_speed_scale)?,
        _ => 0,
    };

    let plates = PlateData {
        rate_hz: plate_rate,
        plates: [
            PlateStream { plate_id: 0, t: t_vec.clone(), wrench: w0 },
            PlateStream { plate_id: 1, t: t_vec, wrench: w1 },
        ],
    };
    Ok(SimTrial {
        plates,
        pelvis: MarkerStream { rate_hz: marker_rate, t: marker_t, xy: marker_xy },
        t_vr_onset: t_vr,
        t_robust_onset: t_robust,
        t_end,
        outcome: Outcome { caught, thrown, score },
        ball_offset,
        step_time,
        max_excursion_mm: max_exc,
        assist_time_s: assist_steps as f64 * dt,
        energy: energy_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::{cop_metrics, trial_cop, CopReference};
    use crate::sim::boundary::build_boundary;

    fn script(force: f64, ff: bool) -> TrialScript {
        TrialScript {
            trial_id: 1,
            direction: Direction::Forward,
            perturbation_force: force,
            t_perturb_onset: 0.3,
            perturbation_duration: 0.15,
            ff_enabled: ff,
            seed: 9,
            ball_offset: None,
        }
    }

    fn small_boundary() -> BalanceBoundary {
        build_boundary(&[[10.0, 10.0], [-10.0, 10.0], [-10.0, -10.0], [10.0, -10.0]], [0.0, 0.0]).unwrap()
    }

    fn run(s: &TrialScript) -> SimTrial {
        run_trial(
            &RigModel::default(),
            &TaskModel::default(),
            &PlateLayout::default(),
            s,
            Some(&small_boundary()),
            1000.0,
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn scores() {
        assert_eq!(vr_score(0.0).unwrap(), 10);
        assert_eq!(vr_score(1.0).unwrap(), 0);
        assert_eq!(vr_score(3.7).unwrap(), 0);
        assert_eq!(vr_score(0.45).unwrap(), 6);
        assert_eq!(vr_score(0.999).unwrap(), 1);
        assert_eq!(vr_score(-0.1), Err(SimError::NegativeRadius(-0.1)));
    }

    #[test]
    fn unperturbed_catch() {
        let t = run(&script(0.0, false));
        assert!(t.outcome.caught);
        assert!(t.step_time.is_none());
        assert!(t.t_end - t.t_vr_onset <= 3.0 + 1e-3);
    }

    #[test]
    fn force_field_reduces_excursion() {
        let f = 0.5 * RigModel::default().body.weight_n();
        let off = run(&script(f, false));
        let on = run(&script(f, true));
        assert!(on.max_excursion_mm <= off.max_excursion_mm);
        assert!(on.assist_time_s > 0.0);
    }

    #[test]
    fn plates_reproduce_cop() {
        let t = run(&script(200.0, false));
        let cop = trial_cop(&t.plates, &PlateLayout::default()).unwrap();
        assert!(cop.valid.iter().all(|&v| v));
        assert!(cop_metrics(&cop, CopReference::Mean).unwrap().total_excursion_mm > 0.0);
    }

    #[test]
    fn energy_without_inputs() {
        let task = TaskModel { forward_lean_m: 0.0, reach_gain: 0.0, ..TaskModel::default() };
        let t =
            run_trial(&RigModel::default(), &task, &PlateLayout::default(), &script(0.0, false), None, 1000.0, 100.0)
                .unwrap();
        assert!(t.energy.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn rejects_bad_scripts() {
        let mut s = script(0.0, false);
        s.t_perturb_onset = 0.9;
        let r =
            run_trial(&RigModel::default(), &TaskModel::default(), &PlateLayout::default(), &s, None, 1000.0, 100.0);
        assert!(matches!(r, Err(SimError::Spec(_))));
        let r = run_trial(
            &RigModel::default(),
            &TaskModel::default(),
            &PlateLayout::default(),
            &script(0.0, true),
            None,
            1000.0,
            100.0,
        );
        assert!(matches!(r, Err(SimError::Spec(_))));
    }

    #[test]
    fn deterministic() {
        assert_eq!(run(&script(300.0, true)), run(&script(300.0, true)));
    }
}
