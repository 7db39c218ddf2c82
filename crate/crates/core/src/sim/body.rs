//! Planar balance plant: a stabilized inverted pendulum in both horizontal axes.
//!
//! The horizontal center of mass `x` follows
//! `a = (γ F_trunk + F_pelvis) / m + c`, `c = −ω² (x − x_ref) − 2ζω v`,
//! where `γ` is the fraction of a trunk-belt force transmitted to the center
//! of mass and `c` the corrective acceleration. A share `η` of `c` comes from
//! the hip strategy, which leaves the center of pressure in place; the rest
//! comes from the ankle, so the linear inverted pendulum demands
//! `p = x − (h / g)(1 − η) c`. A step is taken when `p` leaves the support
//! rectangle.

use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub const GRAVITY: f64 = 9.81;
pub const MAX_DT: f64 = 0.002;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub mass_kg: f64,
    pub com_height_m: f64,
    /// Foot-support half-lengths, m.
    pub half_ap_m: f64,
    pub half_ml_m: f64,
    /// Closed-loop natural frequency, rad/s.
    pub omega: f64,
    /// Damping ratio, at least 1.
    pub zeta: f64,
    pub transmission: f64,
    /// Share of the corrective acceleration produced by the hip strategy, in [0, 1).
    pub hip_share: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        BodyParams {
            mass_kg: 65.0,
            com_height_m: 0.9,
            half_ap_m: 0.10,
            half_ml_m: 0.15,
            omega: 1.8,
            zeta: 1.2,
            transmission: 0.30,
            hip_share: 0.0,
        }
    }
}

impl BodyParams {
    pub fn weight_n(&self) -> f64 {
        self.mass_kg * GRAVITY
    }

    pub fn half_lengths(&self) -> [f64; 2] {
        [self.half_ap_m, self.half_ml_m]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let pos = [self.mass_kg, self.com_height_m, self.half_ap_m, self.half_ml_m, self.omega];
        if pos.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(SimError::Spec("body parameters must be positive".into()));
        }
        if !(self.zeta >= 1.0) || !(self.transmission > 0.0 && self.transmission <= 1.0) {
            return Err(SimError::Spec("need zeta >= 1 and transmission in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.hip_share) {
            return Err(SimError::Spec("hip share must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BodyState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Forces {
    /// Applied at the trunk belt, N.
    pub trunk: [f64; 2],
    /// Applied at the pelvic belt, N.
    pub pelvis: [f64; 2],
}

impl Forces {
    pub const ZERO: Forces = Forces { trunk: [0.0; 2], pelvis: [0.0; 2] };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutput {
    pub state: BodyState,
    /// Acceleration used for this step.
    pub acc: [f64; 2],
    /// Transmitted external force, N.
    pub external: [f64; 2],
    /// Unclamped COP demand at the start of the step, m.
    pub cop_demand: [f64; 2],
    /// COP projected into the support rectangle, m.
    pub cop: [f64; 2],
    pub stepping: bool,
}

/// Returns the acceleration, the transmitted external force and the
/// corrective acceleration.
pub fn acceleration(p: &BodyParams, s: &BodyState, f: &Forces, x_ref: [f64; 2]) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let w2 = p.omega * p.omega;
    let damp = 2.0 * p.zeta * p.omega;
    let mut a = [0.0; 2];
    let mut ext = [0.0; 2];
    let mut corr = [0.0; 2];
    for k in 0..2 {
        ext[k] = p.transmission * f.trunk[k] + f.pelvis[k];
        corr[k] = -w2 * (s.pos[k] - x_ref[k]) - damp * s.vel[k];
        a[k] = ext[k] / p.mass_kg + corr[k];
    }
    (a, ext, corr)
}

/// One semi-implicit Euler step.
pub fn step_body(p: &BodyParams, s: &BodyState, f: &Forces, x_ref: [f64; 2], dt: f64) -> Result<StepOutput, SimError> {
    if !(dt > 0.0) || dt > MAX_DT + 1e-15 {
        return Err(SimError::StepTooLarge(dt));
    }
    let (acc, ext, corr) = acceleration(p, s, f, x_ref);
    let half = p.half_lengths();
    let mut next = *s;
    let mut demand = [0.0; 2];
    let mut cop = [0.0; 2];
    let mut stepping = false;
    for k in 0..2 {
        demand[k] = s.pos[k] - p.com_height_m / GRAVITY * (1.0 - p.hip_share) * corr[k];
        stepping |= demand[k].abs() > half[k];
        cop[k] = demand[k].clamp(-half[k], half[k]);
        next.vel[k] += acc[k] * dt;
        next.pos[k] += next.vel[k] * dt;
    }
    if next.pos.iter().chain(next.vel.iter()).any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite);
    }
    Ok(StepOutput { state: next, acc, external: ext, cop_demand: demand, cop, stepping })
}

/// Mechanical energy per the closed-loop model: kinetic plus the restoring
/// potential about `x_ref`.
pub fn energy(p: &BodyParams, s: &BodyState, x_ref: [f64; 2]) -> f64 {
    let w2 = p.omega * p.omega;
    (0..2).map(|k| 0.5 * p.mass_kg * (s.vel[k] * s.vel[k] + w2 * (s.pos[k] - x_ref[k]).powi(2))).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_stays_at_rest() {
        let p = BodyParams::default();
        let mut s = BodyState::default();
        for _ in 0..5000 {
            s = step_body(&p, &s, &Forces::ZERO, [0.0; 2], 0.001).unwrap().state;
        }
        assert!(s.pos[0].abs() < 1e-9 && s.pos[1].abs() < 1e-9);
    }

    #[test]
    fn constant_force_steady_lean() {
        let p = BodyParams::default();
        // Static demand is γF(1/(mω²) + h/(mg)); stay at 80% of the AP limit.
        let per_newton = p.transmission * (1.0 / (p.mass_kg * p.omega * p.omega) + p.com_height_m / p.weight_n());
        let f = 0.8 * p.half_ap_m / per_newton;
        let forces = Forces { trunk: [f, 0.0], pelvis: [0.0; 2] };
        let mut s = BodyState::default();
        let mut stepped = false;
        for _ in 0..20000 {
            let o = step_body(&p, &s, &forces, [0.0; 2], 0.001).unwrap();
            stepped |= o.stepping;
            s = o.state;
        }
        assert!(!stepped);
        let expected = p.transmission * f / (p.mass_kg * p.omega * p.omega);
        assert!((s.pos[0] - expected).abs() < 1e-6 * expected.max(1.0));
    }

    #[test]
    fn above_static_tipping_steps() {
        let p = BodyParams::default();
        let f = 1.05 * p.weight_n() * p.half_ap_m / p.com_height_m;
        let forces = Forces { trunk: [f, 0.0], pelvis: [0.0; 2] };
        let mut s = BodyState::default();
        let mut stepped = false;
        for _ in 0..20000 {
            let o = step_body(&p, &s, &forces, [0.0; 2], 0.001).unwrap();
            stepped |= o.stepping;
            s = o.state;
        }
        assert!(stepped);
    }

    #[test]
    fn damped_energy_non_increasing() {
        let p = BodyParams::default();
        let mut s = BodyState { pos: [0.05, -0.03], vel: [0.2, 0.1] };
        let mut e = energy(&p, &s, [0.0; 2]);
        for _ in 0..5000 {
            s = step_body(&p, &s, &Forces::ZERO, [0.0; 2], 0.001).unwrap().state;
            let next = energy(&p, &s, [0.0; 2]);
            assert!(next <= e + 1e-12, "{e} -> {next}");
            e = next;
        }
    }

    #[test]
    fn rejects_large_step() {
        let p = BodyParams::default();
        assert_eq!(
            step_body(&p, &BodyState::default(), &Forces::ZERO, [0.0; 2], 0.005),
            Err(SimError::StepTooLarge(0.005))
        );
    }
}
