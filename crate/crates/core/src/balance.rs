//! Center of pressure from force-plate wrenches and sway metrics.

use serde::{Deserialize, Serialize};

use crate::error::BalanceError;
use crate::model::{PlateData, PlateLayout, PlateStream};

/// COP samples in millimetres in the lab frame (x anterior, y lateral).
#[derive(Clone, Debug, PartialEq)]
pub struct CopTrace {
    pub t: Vec<f64>,
    pub xy: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
    /// Vertical load per sample, used for weighting two plates.
    pub fz: Vec<f64>,
}

impl CopTrace {
    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// COPx = −My/Fz, COPy = Mx/Fz, converted to mm and offset by the plate
/// origin. Samples with Fz below `fz_threshold` are invalid and carry NaN.
pub fn cop_from_wrench(
    t: &[f64],
    wrench: &[[f64; 6]],
    origin_mm: [f64; 2],
    fz_threshold: f64,
) -> Result<CopTrace, BalanceError> {
    if t.len() != wrench.len() {
        return Err(BalanceError::Length);
    }
    let mut xy = Vec::with_capacity(t.len());
    let mut valid = Vec::with_capacity(t.len());
    let mut fz = Vec::with_capacity(t.len());
    for w in wrench {
        let (f, mx, my) = (w[2], w[3], w[4]);
        let ok = f >= fz_threshold && f.is_finite() && mx.is_finite() && my.is_finite();
        if ok {
            xy.push([origin_mm[0] - 1000.0 * my / f, origin_mm[1] + 1000.0 * mx / f]);
        } else {
            xy.push([f64::NAN, f64::NAN]);
        }
        valid.push(ok);
        fz.push(if ok { f } else { 0.0 });
    }
    if !valid.iter().any(|&v| v) {
        return Err(BalanceError::AllInvalid);
    }
    Ok(CopTrace { t: t.to_vec(), xy, valid, fz })
}

pub fn plate_cop(plate: &PlateStream, origin_mm: [f64; 2], fz_threshold: f64) -> Result<CopTrace, BalanceError> {
    cop_from_wrench(&plate.t, &plate.wrench, origin_mm, fz_threshold)
}

/// Fz-weighted combination of two plate traces on the same time grid.
pub fn net_cop(a: &CopTrace, b: &CopTrace) -> Result<CopTrace, BalanceError> {
    if a.t.len() != b.t.len() || a.t.iter().zip(&b.t).any(|(x, y)| (x - y).abs() > 1e-9) {
        return Err(BalanceError::GridMismatch);
    }
    let mut xy = Vec::with_capacity(a.t.len());
    let mut fz = Vec::with_capacity(a.t.len());
    for k in 0..a.t.len() {
        let wa = if a.valid[k] { a.fz[k] } else { 0.0 };
        let wb = if b.valid[k] { b.fz[k] } else { 0.0 };
        let total = wa + wb;
        if total <= 0.0 {
            return Err(BalanceError::BothInvalid(k));
        }
        let p = match (a.valid[k], b.valid[k]) {
            (true, false) => a.xy[k],
            (false, true) => b.xy[k],
            _ => [(wa * a.xy[k][0] + wb * b.xy[k][0]) / total, (wa * a.xy[k][1] + wb * b.xy[k][1]) / total],
        };
        xy.push(p);
        fz.push(total);
    }
    Ok(CopTrace { t: a.t.clone(), xy, valid: vec![true; a.t.len()], fz })
}

/// Net COP of a trial's two plates using the cohort layout.
pub fn trial_cop(plates: &PlateData, layout: &PlateLayout) -> Result<CopTrace, BalanceError> {
    let th = layout.fz_threshold_n;
    let [p0, p1] = &plates.plates;
    // A plate that is never loaded still contributes a valid all-zero-weight trace.
    let trace = |p: &PlateStream, o| match plate_cop(p, o, th) {
        Err(BalanceError::AllInvalid) => Ok(CopTrace {
            t: p.t.clone(),
            xy: vec![[f64::NAN; 2]; p.t.len()],
            valid: vec![false; p.t.len()],
            fz: vec![0.0; p.t.len()],
        }),
        other => other,
    };
    net_cop(&trace(p0, layout.origins_mm[0])?, &trace(p1, layout.origins_mm[1])?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CopReference {
    /// Deviations are measured from the mean of the valid samples.
    #[default]
    Mean,
    /// Deviations are measured from the first valid sample.
    Start,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CopMetrics {
    pub total_excursion_mm: f64,
    pub rms_cop_mm: f64,
    pub rms_cop_vel_mm_s: f64,
    pub max_ap_mm: f64,
    pub max_ml_mm: f64,
}

pub fn cop_metrics(trace: &CopTrace, reference: CopReference) -> Result<CopMetrics, BalanceError> {
    let pts: Vec<(f64, [f64; 2])> =
        (0..trace.t.len()).filter(|&k| trace.valid[k]).map(|k| (trace.t[k], trace.xy[k])).collect();
    if pts.len() < 2 {
        return Err(BalanceError::TooFewValid(pts.len()));
    }
    let n = pts.len() as f64;
    let origin = match reference {
        CopReference::Mean => {
            let sx: f64 = pts.iter().map(|p| p.1[0]).sum();
            let sy: f64 = pts.iter().map(|p| p.1[1]).sum();
            [sx / n, sy / n]
        }
        CopReference::Start => pts[0].1,
    };

    let mut excursion = 0.0;
    let mut vel_sq = 0.0;
    let mut n_vel = 0usize;
    for k in 0..trace.t.len().saturating_sub(1) {
        if !(trace.valid[k] && trace.valid[k + 1]) {
            continue;
        }
        let (p, q) = (trace.xy[k], trace.xy[k + 1]);
        let d = (q[0] - p[0]).hypot(q[1] - p[1]);
        excursion += d;
        let dt = trace.t[k + 1] - trace.t[k];
        vel_sq += (d / dt) * (d / dt);
        n_vel += 1;
    }
    let rms_cop =
        (pts.iter().map(|(_, p)| (p[0] - origin[0]).powi(2) + (p[1] - origin[1]).powi(2)).sum::<f64>() / n).sqrt();
    let max_ap = pts.iter().map(|(_, p)| (p[0] - origin[0]).abs()).fold(0.0, f64::max);
    let max_ml = pts.iter().map(|(_, p)| (p[1] - origin[1]).abs()).fold(0.0, f64::max);
    Ok(CopMetrics {
        total_excursion_mm: excursion,
        rms_cop_mm: rms_cop,
        rms_cop_vel_mm_s: if n_vel > 0 { (vel_sq / n_vel as f64).sqrt() } else { 0.0 },
        max_ap_mm: max_ap,
        max_ml_mm: max_ml,
    })
}

/// Session-level aggregation: excursion is summed over trials, the other
/// metrics are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionCop {
    pub trials: usize,
    pub total_excursion_mm: f64,
    pub mean: CopMetrics,
}

pub fn session_totals(metrics: &[CopMetrics]) -> SessionCop {
    if metrics.is_empty() {
        return SessionCop::default();
    }
    let n = metrics.len() as f64;
    let avg = |f: fn(&CopMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    SessionCop {
        trials: metrics.len(),
        total_excursion_mm: metrics.iter().map(|m| m.total_excursion_mm).sum(),
        mean: CopMetrics {
            total_excursion_mm: avg(|m| m.total_excursion_mm),
            rms_cop_mm: avg(|m| m.rms_cop_mm),
            rms_cop_vel_mm_s: avg(|m| m.rms_cop_vel_mm_s),
            max_ap_mm: avg(|m| m.max_ap_mm),
            max_ml_mm: avg(|m| m.max_ml_mm),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(xy: Vec<[f64; 2]>, rate: f64) -> CopTrace {
        let n = xy.len();
        CopTrace { t: (0..n).map(|k| k as f64 / rate).collect(), xy, valid: vec![true; n], fz: vec![100.0; n] }
    }

    #[test]
    fn wrench_examples() {
        let t = [0.0, 0.001, 0.002];
        let w = [[0.0, 0.0, 700.0, 0.0, 0.0, 0.0], [0.0, 0.0, 500.0, 50.0, -25.0, 0.0], [0.0, 0.0, 2.0, 0.0, 0.0, 0.0]];
        let c = cop_from_wrench(&t, &w, [0.0, 0.0], 20.0).unwrap();
        assert_eq!(c.xy[0], [0.0, 0.0]);
        assert!((c.xy[1][0] - 50.0).abs() < 1e-12 && (c.xy[1][1] - 100.0).abs() < 1e-12);
        assert_eq!(c.valid, vec![true, true, false]);
        let off = cop_from_wrench(&t[..1], &w[..1], [10.0, -100.0], 20.0).unwrap();
        assert_eq!(off.xy[0], [10.0, -100.0]);
        assert_eq!(cop_from_wrench(&t[2..], &w[2..], [0.0, 0.0], 20.0), Err(BalanceError::AllInvalid));
    }

    #[test]
    fn net_cop_examples() {
        let t = vec![0.0];
        let mk = |x: f64, fz: f64| CopTrace { t: t.clone(), xy: vec![[x, 0.0]], valid: vec![fz >= 20.0], fz: vec![fz] };
        assert_eq!(net_cop(&mk(-100.0, 300.0), &mk(100.0, 100.0)).unwrap().xy[0], [-50.0, 0.0]);
        assert_eq!(net_cop(&mk(-100.0, 200.0), &mk(100.0, 200.0)).unwrap().xy[0], [0.0, 0.0]);
        assert_eq!(net_cop(&mk(-100.0, 200.0), &mk(100.0, 0.0)).unwrap().xy[0], [-100.0, 0.0]);
        assert_eq!(net_cop(&mk(-100.0, 0.0), &mk(100.0, 0.0)), Err(BalanceError::BothInvalid(0)));
        let mut other = mk(0.0, 100.0);
        other.t = vec![0.5];
        assert_eq!(net_cop(&mk(0.0, 100.0), &other), Err(BalanceError::GridMismatch));
    }

    #[test]
    fn stationary_and_square() {
        let m = cop_metrics(&trace(vec![[3.0, 4.0]; 10], 100.0), CopReference::Mean).unwrap();
        assert_eq!(m, CopMetrics::default());
        let sq = vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0], [0.0, 0.0]];
        let m = cop_metrics(&trace(sq, 100.0), CopReference::Mean).unwrap();
        assert!((m.total_excursion_mm - 40.0).abs() < 1e-12);
        assert_eq!(cop_metrics(&trace(vec![[0.0, 0.0]], 1.0), CopReference::Mean), Err(BalanceError::TooFewValid(1)));
    }

    #[test]
    fn circle_rms_equals_radius() {
        let (r, n) = (7.5, 1000);
        let pts = (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                [20.0 + r * a.cos(), -5.0 + r * a.sin()]
            })
            .collect();
        let m = cop_metrics(&trace(pts, 1000.0), CopReference::Mean).unwrap();
        assert!((m.rms_cop_mm - r).abs() < 1e-9);
        assert!((m.rms_cop_vel_mm_s - std::f64::consts::TAU * r).abs() < 0.01);
        assert!((m.max_ap_mm - r).abs() < 1e-9);
    }

    #[test]
    fn start_reference() {
        let m = cop_metrics(&trace(vec![[0.0, 0.0], [4.0, 0.0]], 10.0), CopReference::Start).unwrap();
        assert_eq!(m.max_ap_mm, 4.0);
        assert!((m.rms_cop_mm - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn invalid_samples_skip_segments() {
        let mut t = trace(vec![[0.0, 0.0], [100.0, 0.0], [1.0, 0.0], [2.0, 0.0]], 10.0);
        t.valid[1] = false;
        let m = cop_metrics(&t, CopReference::Mean).unwrap();
        assert!((m.total_excursion_mm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn session_sum() {
        let a = CopMetrics { total_excursion_mm: 10.0, rms_cop_mm: 1.0, ..Default::default() };
        let b = CopMetrics { total_excursion_mm: 30.0, rms_cop_mm: 3.0, ..Default::default() };
        let s = session_totals(&[a, b]);
        assert_eq!((s.trials, s.total_excursion_mm, s.mean.rms_cop_mm), (2, 40.0, 2.0));
    }

    fn smooth_path(rate: f64, p: &[f64; 4]) -> CopTrace {
        let n = (2.0 * rate) as usize + 1;
        let pts = (0..n)
            .map(|k| {
                let t = k as f64 / rate;
                [p[0] * (1.3 * t).sin() + p[1] * (3.1 * t).cos(), p[2] * (0.7 * t).cos() + p[3] * (2.3 * t).sin()]
            })
            .collect();
        trace(pts, rate)
    }

    proptest! {
        #[test]
        fn translation_invariance(p in prop::array::uniform4(1.0f64..20.0), dx in -500.0f64..500.0, dy in -500.0f64..500.0) {
            let a = smooth_path(200.0, &p);
            let mut b = a.clone();
            for q in &mut b.xy { q[0] += dx; q[1] += dy; }
            let (ma, mb) = (cop_metrics(&a, CopReference::Mean).unwrap(), cop_metrics(&b, CopReference::Mean).unwrap());
            prop_assert!((ma.rms_cop_mm - mb.rms_cop_mm).abs() < 1e-8);
            prop_assert!((ma.total_excursion_mm - mb.total_excursion_mm).abs() < 1e-8);
            prop_assert!((ma.rms_cop_vel_mm_s - mb.rms_cop_vel_mm_s).abs() < 1e-6);
        }

        #[test]
        fn excursion_time_reversal(p in prop::array::uniform4(1.0f64..20.0)) {
            let a = smooth_path(100.0, &p);
            let mut b = a.clone();
            b.xy.reverse();
            let (ma, mb) = (cop_metrics(&a, CopReference::Mean).unwrap(), cop_metrics(&b, CopReference::Mean).unwrap());
            prop_assert!((ma.total_excursion_mm - mb.total_excursion_mm).abs() < 1e-9 * ma.total_excursion_mm.max(1.0));
        }

        #[test]
        fn rate_doubling_stable(p in prop::array::uniform4(1.0f64..20.0)) {
            let a = cop_metrics(&smooth_path(500.0, &p), CopReference::Mean).unwrap();
            let b = cop_metrics(&smooth_path(1000.0, &p), CopReference::Mean).unwrap();
            prop_assert!((a.total_excursion_mm - b.total_excursion_mm).abs() < 0.02 * b.total_excursion_mm);
        }

        #[test]
        fn metrics_nonnegative(p in prop::array::uniform4(0.0f64..20.0)) {
            let m = cop_metrics(&smooth_path(100.0, &p), CopReference::Mean).unwrap();
            prop_assert!(m.total_excursion_mm >= 0.0 && m.rms_cop_mm >= 0.0 && m.rms_cop_vel_mm_s >= 0.0);
            prop_assert!(m.max_ap_mm >= 0.0 && m.max_ml_mm >= 0.0);
        }
    }
}
