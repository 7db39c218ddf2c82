//! Balance boundary (convex hull of pelvic excursions) and the assist-as-needed
//! restoring force.

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Counter-clockwise convex polygon in millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceBoundary {
    pub polygon: Vec<[f64; 2]>,
    pub origin: [f64; 2],
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; collinear points are dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i][0] * poly[(i + 1) % n][1] - poly[(i + 1) % n][0] * poly[i][1]).sum::<f64>() / 2.0
}

/// Convex hull of `points` together with `origin`.
pub fn build_boundary(points: &[[f64; 2]], origin: [f64; 2]) -> Result<BalanceBoundary, SimError> {
    let mut all = points.to_vec();
    all.push(origin);
    let polygon = convex_hull(&all);
    let extent = all.iter().map(|p| (p[0] - origin[0]).hypot(p[1] - origin[1])).fold(0.0, f64::max);
    if polygon.len() < 3 || polygon_area(&polygon) <= 1e-12 * extent * extent {
        return Err(SimError::DegenerateBoundary);
    }
    Ok(BalanceBoundary { polygon, origin })
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * ab[0]).hypot(p[1] - a[1] - t * ab[1])
}

impl BalanceBoundary {
    /// Inside or on the boundary.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.polygon.len();
        (0..n).all(|i| cross(self.polygon[i], self.polygon[(i + 1) % n], p) >= -1e-9)
    }

    /// Euclidean distance from `p` to the polygon outline.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let n = self.polygon.len();
        (0..n).map(|i| segment_distance(p, self.polygon[i], self.polygon[(i + 1) % n])).fold(f64::INFINITY, f64::min)
    }
}

/// Zero inside the boundary; outside, `min(gain·d, saturation)` newtons
/// toward the origin, with `d` the distance to the boundary in metres.
/// Positions are in millimetres, `gain` in N/m.
pub fn assistive_force(boundary: &BalanceBoundary, pelvis_mm: [f64; 2], gain: f64, saturation: f64) -> [f64; 2] {
    if boundary.contains(pelvis_mm) {
        return [0.0, 0.0];
    }
    let d_m = boundary.distance(pelvis_mm) / 1000.0;
    let to = [boundary.origin[0] - pelvis_mm[0], boundary.origin[1] - pelvis_mm[1]];
    let n = to[0].hypot(to[1]);
    assert!(n > 0.0, "pelvis at the origin cannot lie outside the boundary");
    let mag = (gain * d_m).min(saturation);
    [mag * to[0] / n, mag * to[1] / n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square() -> Vec<[f64; 2]> {
        vec![[-10.0, -10.0], [10.0, -10.0], [10.0, 10.0], [-10.0, 10.0]]
    }

    fn same_set(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
        a.len() == b.len() && a.iter().all(|p| b.contains(p))
    }

    #[test]
    fn square_hulls() {
        let b = build_boundary(&square(), [0.0, 0.0]).unwrap();
        assert!(same_set(&b.polygon, &square()));
        let mut pts = square();
        pts.extend([[1.0, 2.0], [-3.0, 5.0], [9.9, -9.9]]);
        assert!(same_set(&build_boundary(&pts, [0.0, 0.0]).unwrap().polygon, &square()));
        assert!(polygon_area(&b.polygon) > 0.0);
    }

    #[test]
    fn degenerate() {
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert_eq!(build_boundary(&line, [3.0, 3.0]), Err(SimError::DegenerateBoundary));
    }

    #[test]
    fn force_examples() {
        let b = build_boundary(&square(), [0.0, 0.0]).unwrap();
        assert_eq!(assistive_force(&b, [0.0, 0.0], 100.0, 1e9), [0.0, 0.0]);
        let circle: Vec<[f64; 2]> = (0..64)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / 64.0;
                [a.cos(), a.sin()]
            })
            .collect();
        let c = build_boundary(&circle, [0.0, 0.0]).unwrap();
        let f = assistive_force(&c, [2.0, 0.0], 100.0, f64::INFINITY);
        assert!((f[0] + 0.1).abs() < 1e-5 && f[1].abs() < 1e-12);
        let sat = assistive_force(&c, [2000.0, 0.0], 100.0, 5.0);
        assert!((sat[0] + 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn hull_contains_inputs(pts in prop::collection::vec(prop::array::uniform2(-50.0f64..50.0), 3..40)) {
            if let Ok(b) = build_boundary(&pts, [0.0, 0.0]) {
                prop_assert!(b.polygon.len() <= pts.len() + 1);
                for p in &pts {
                    prop_assert!(b.contains(*p));
                }
                prop_assert!(b.contains([0.0, 0.0]));
            }
        }

        #[test]
        fn force_points_home(x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let b = build_boundary(&square(), [0.0, 0.0]).unwrap();
            let f = assistive_force(&b, [x, y], 500.0, 1e3);
            if !b.contains([x, y]) {
                prop_assert!(f[0] * -x + f[1] * -y > 0.0);
            } else {
                prop_assert_eq!(f, [0.0, 0.0]);
            }
        }

        #[test]
        fn continuous_at_boundary(t in 0.0f64..1.0, eps in 1e-9f64..1e-4) {
            let b = build_boundary(&square(), [0.0, 0.0]).unwrap();
            let p = [10.0 + eps, -10.0 + 20.0 * t];
            let f = assistive_force(&b, p, 1000.0, 1e3);
            prop_assert!(f[0].hypot(f[1]) <= 1000.0 * eps / 1000.0 + 1e-12);
        }
    }
}
