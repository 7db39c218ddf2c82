//! Cable geometry and tension allocation.

use serde::{Deserialize, Serialize};

use super::body::BodyParams;
use crate::error::SimError;

/// Four pulleys driving one belt. Positions in metres in the lab frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CableBelt {
    pub pulleys: [[f64; 2]; 4],
    pub attachment_radius: f64,
}

impl Default for CableBelt {
    fn default() -> Self {
        CableBelt { pulleys: [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]], attachment_radius: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigModel {
    /// Trunk belt, used for perturbations.
    pub trunk: CableBelt,
    /// Pelvic belt, used for the assistive field.
    pub pelvis: CableBelt,
    pub max_cable_tension: f64,
    pub body: BodyParams,
    /// N/m of boundary exceedance.
    pub force_field_gain: f64,
    /// N.
    pub force_field_saturation: f64,
    /// Rectangular perturbation pulse length, s.
    pub pulse_duration: f64,
    /// Hip-strategy share adopted while the assistive field is enabled.
    pub ff_hip_share: f64,
}

impl Default for RigModel {
    fn default() -> Self {
        RigModel {
            trunk: CableBelt::default(),
            pelvis: CableBelt::default(),
            max_cable_tension: 1500.0,
            body: BodyParams::default(),
            force_field_gain: 4000.0,
            force_field_saturation: 250.0,
            pulse_duration: 0.150,
            ff_hip_share: 0.3,
        }
    }
}

impl RigModel {
    pub fn validate(&self) -> Result<(), SimError> {
        for belt in [&self.trunk, &self.pelvis] {
            let u = cable_units(belt, [0.0, 0.0])?;
            if !positively_spanning(&u) {
                return Err(SimError::Geometry("cable directions do not positively span the plane".into()));
            }
        }
        let positive = [self.max_cable_tension, self.pulse_duration];
        if positive.iter().any(|&v| !(v > 0.0)) || self.force_field_gain < 0.0 || self.force_field_saturation < 0.0 {
            return Err(SimError::Spec("rig parameters must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ff_hip_share) {
            return Err(SimError::Spec("hip share must lie in [0, 1)".into()));
        }
        self.body.validate()
    }
}

/// Unit vectors from the belt attachment points toward the pulleys.
pub fn cable_units(belt: &CableBelt, center: [f64; 2]) -> Result<[[f64; 2]; 4], SimError> {
    let mut u = [[0.0; 2]; 4];
    for (i, p) in belt.pulleys.iter().enumerate() {
        let d = [p[0] - center[0], p[1] - center[1]];
        let n = d[0].hypot(d[1]);
        if !(n > belt.attachment_radius + 1e-9) {
            return Err(SimError::Geometry(format!("pulley {i} within the belt radius")));
        }
        u[i] = [d[0] / n, d[1] / n];
    }
    Ok(u)
}

/// True when every planar direction is a nonnegative combination of `u`.
pub fn positively_spanning(u: &[[f64; 2]]) -> bool {
    let mut ang: Vec<f64> = u.iter().map(|v| v[1].atan2(v[0])).collect();
    ang.sort_by(f64::total_cmp);
    let n = ang.len();
    if n < 3 {
        return false;
    }
    let mut max_gap = ang[0] + std::f64::consts::TAU - ang[n - 1];
    for w in ang.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    max_gap < std::f64::consts::PI - 1e-9
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn solve2(m: [[f64; 2]; 2], r: [f64; 2]) -> Option<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m[0][0].abs() + m[1][1].abs();
    if det.abs() <= 1e-12 * scale * scale.max(1.0) || det == 0.0 {
        return None;
    }
    Some([(r[0] * m[1][1] - r[1] * m[0][1]) / det, (m[0][0] * r[1] - m[1][0] * r[0]) / det])
}

fn residual(u: &[[f64; 2]; 4], t: &[f64; 4], f: [f64; 2]) -> f64 {
    let mut r = [-f[0], -f[1]];
    for i in 0..4 {
        r[0] += t[i] * u[i][0];
        r[1] += t[i] * u[i][1];
    }
    r[0].hypot(r[1])
}

/// Semi-smooth Newton on the dual of min ½Σt² s.t. Σtᵢuᵢ = f, t ≥ 0, whose
/// optimality condition is tᵢ = max(0, uᵢ·λ).
fn newton_dual(u: &[[f64; 2]; 4], f: [f64; 2], tol: f64) -> Option<[f64; 4]> {
    let tensions = |l: [f64; 2]| u.map(|ui| dot(ui, l).max(0.0));
    let mut lambda = f;
    for _ in 0..60 {
        let t = tensions(lambda);
        let g = residual(u, &t, f);
        if g <= tol {
            return Some(t);
        }
        let mut jac = [[0.0; 2]; 2];
        let mut r = [-f[0], -f[1]];
        for (ui, ti) in u.iter().zip(&t) {
            r[0] += ti * ui[0];
            r[1] += ti * ui[1];
            if dot(*ui, lambda) >= -1e-12 * (1.0 + lambda[0].hypot(lambda[1])) {
                for a in 0..2 {
                    for b in 0..2 {
                        jac[a][b] += ui[a] * ui[b];
                    }
                }
            }
        }
        let step = solve2(jac, [-r[0], -r[1]])?;
        let mut alpha = 1.0;
        loop {
            let trial = [lambda[0] + alpha * step[0], lambda[1] + alpha * step[1]];
            if residual(u, &tensions(trial), f) < g || alpha < 1e-6 {
                lambda = trial;
                break;
            }
            alpha *= 0.5;
        }
    }
    None
}

/// Exhaustive search over active sets of size two or more for a KKT point.
fn enumerate_active_sets(u: &[[f64; 2]; 4], f: [f64; 2], tol: f64) -> Option<[f64; 4]> {
    let mut best: Option<([f64; 4], f64)> = None;
    for mask in 1u32..16 {
        if mask.count_ones() < 2 {
            continue;
        }
        let mut m = [[0.0; 2]; 2];
        for i in (0..4).filter(|i| mask & (1 << i) != 0) {
            for a in 0..2 {
                for b in 0..2 {
                    m[a][b] += u[i][a] * u[i][b];
                }
            }
        }
        let Some(lambda) = solve2(m, f) else { continue };
        let mut t = [0.0; 4];
        let mut ok = true;
        for i in 0..4 {
            let s = dot(u[i], lambda);
            if mask & (1 << i) != 0 {
                ok &= s >= -1e-9;
                t[i] = s.max(0.0);
            } else {
                ok &= s <= 1e-9;
            }
        }
        let norm: f64 = t.iter().map(|x| x * x).sum();
        if ok && residual(u, &t, f) <= tol && best.is_none_or(|(_, n)| norm < n) {
            best = Some((t, norm));
        }
    }
    best.map(|(t, _)| t)
}

/// Minimum-norm nonnegative cable tensions producing `force` (N) on a belt
/// centered at `center` (m).
pub fn cable_tensions(
    belt: &CableBelt,
    max_tension: f64,
    center: [f64; 2],
    force: [f64; 2],
) -> Result<[f64; 4], SimError> {
    if !(force[0].is_finite() && force[1].is_finite()) {
        return Err(SimError::NonFinite);
    }
    let u = cable_units(belt, center)?;
    if force == [0.0, 0.0] {
        return Ok([0.0; 4]);
    }
    let tol = 1e-9 * (1.0 + force[0].hypot(force[1]));
    let t = newton_dual(&u, force, tol)
        .or_else(|| enumerate_active_sets(&u, force, tol))
        .ok_or(SimError::InfeasibleForce(force[0], force[1]))?;
    let peak = t.iter().copied().fold(0.0, f64::max);
    if peak > max_tension {
        return Err(SimError::TensionCap(peak, max_tension));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cross() -> CableBelt {
        CableBelt { pulleys: [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], attachment_radius: 0.1 }
    }

    #[test]
    fn hand_cases() {
        let b = cross();
        assert_eq!(cable_tensions(&b, 100.0, [0.0, 0.0], [0.0, 0.0]).unwrap(), [0.0; 4]);
        assert_eq!(cable_tensions(&b, 100.0, [0.0, 0.0], [10.0, 0.0]).unwrap(), [10.0, 0.0, 0.0, 0.0]);
        let s = 10.0 / 2f64.sqrt();
        let t = cable_tensions(&b, 100.0, [0.0, 0.0], [s, s]).unwrap();
        assert_eq!(t, [s, s, 0.0, 0.0]);
    }

    #[test]
    fn errors() {
        let b = cross();
        assert!(matches!(cable_tensions(&b, 5.0, [0.0, 0.0], [10.0, 0.0]), Err(SimError::TensionCap(_, _))));
        assert!(matches!(cable_tensions(&b, 100.0, [1.0, 0.0], [1.0, 0.0]), Err(SimError::Geometry(_))));
        let half = CableBelt { pulleys: [[1.0, 0.2], [1.0, -0.2], [1.0, 0.5], [1.0, -0.5]], attachment_radius: 0.1 };
        assert!(matches!(cable_tensions(&half, 100.0, [0.0, 0.0], [-1.0, 0.0]), Err(SimError::InfeasibleForce(_, _))));
        assert!(!positively_spanning(&cable_units(&half, [0.0, 0.0]).unwrap()));
        assert!(RigModel::default().validate().is_ok());
    }

    #[test]
    fn random_forces_satisfy_kkt() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let b = CableBelt::default();
        for _ in 0..300 {
            let c = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            let f = [rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0)];
            let t = cable_tensions(&b, 1e6, c, f).unwrap();
            let u = cable_units(&b, c).unwrap();
            assert!(residual(&u, &t, f) <= 1e-6);
            assert!(t.iter().all(|&x| x >= 0.0));
            let ref_t = enumerate_active_sets(&u, f, 1e-6).unwrap();
            for i in 0..4 {
                assert!((t[i] - ref_t[i]).abs() < 1e-6);
            }
        }
    }
}
