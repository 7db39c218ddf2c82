//! Linear resampling of timestamped streams onto a uniform grid.

use crate::error::ResampleError;

#[derive(Clone, Debug, PartialEq)]
pub struct Resampled {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    /// Set when the requested grid end lay beyond the last input sample.
    pub truncated: bool,
}

fn check_times(t: &[f64]) -> Result<(), ResampleError> {
    if t.len() < 2 {
        return Err(ResampleError::TooFewSamples(t.len()));
    }
    if let Some(k) = t.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(ResampleError::NonMonotonic(k + 1));
    }
    Ok(())
}

/// Number of grid points `t0 + k / rate` that do not pass `t_last`.
fn grid_len(t0: f64, t_last: f64, rate: f64) -> usize {
    ((t_last - t0) * rate * (1.0 + 1e-12) + 1e-9).floor() as usize + 1
}

/// Resamples `(t, values)` onto `t[0] + k / rate`, up to `until` (default: the
/// last timestamp). Grid points past the last sample are dropped rather than
/// extrapolated, and `truncated` reports whether that happened.
pub fn resample_to_grid(t: &[f64], values: &[f64], rate: f64, until: Option<f64>) -> Result<Resampled, ResampleError> {
    if t.len() != values.len() {
        return Err(ResampleError::LengthMismatch(t.len(), values.len()));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(ResampleError::BadRate(rate));
    }
    check_times(t)?;
    let (t0, t_last) = (t[0], t[t.len() - 1]);
    let want_end = until.unwrap_or(t_last);
    let truncated = want_end > t_last;
    let end = want_end.min(t_last);
    let n = if end < t0 { 0 } else { grid_len(t0, end, rate) };

    let mut out_t = Vec::with_capacity(n);
    let mut out_v = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let tk = (t0 + k as f64 / rate).min(t_last);
        while j + 2 < t.len() && t[j + 1] < tk {
            j += 1;
        }
        // Segment [t[j], t[j+1]] brackets tk.
        let (ta, tb) = (t[j], t[j + 1]);
        let w = ((tk - ta) / (tb - ta)).clamp(0.0, 1.0);
        let v = values[j] + w * (values[j + 1] - values[j]);
        out_t.push(tk);
        out_v.push(v);
    }
    Ok(Resampled { t: out_t, values: out_v, truncated })
}

/// Resamples several channels that share one timestamp vector. Returns the
/// grid, the resampled channels and whether any channel was truncated.
#[allow(clippy::type_complexity)]
pub fn resample_channels(
    t: &[f64],
    channels: &[Vec<f64>],
    rate: f64,
    until: Option<f64>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, bool), ResampleError> {
    let mut grid = Vec::new();
    let mut out = Vec::with_capacity(channels.len());
    let mut truncated = false;
    for ch in channels {
        let r = resample_to_grid(t, ch, rate, until)?;
        truncated |= r.truncated;
        grid = r.t;
        out.push(r.values);
    }
    if channels.is_empty() {
        check_times(t)?;
    }
    Ok((grid, out, truncated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_stream() {
        let t: Vec<f64> = (0..20).map(|k| k as f64 * 0.013).collect();
        let v = vec![3.3; 20];
        for rate in [7.0, 100.0, 1000.0] {
            let r = resample_to_grid(&t, &v, rate, None).unwrap();
            assert!(r.values.iter().all(|&x| x == 3.3));
        }
    }

    #[test]
    fn hand_interpolation() {
        let r = resample_to_grid(&[0.0, 1.0], &[0.0, 10.0], 4.0, None).unwrap();
        assert_eq!(r.values, vec![0.0, 2.5, 5.0, 7.5, 10.0]);
        assert!(!r.truncated);
    }

    #[test]
    fn no_extrapolation() {
        let r = resample_to_grid(&[0.0, 1.0], &[0.0, 10.0], 4.0, Some(2.0)).unwrap();
        assert!(r.truncated);
        assert_eq!(r.t.len(), 5);
        assert_eq!(*r.t.last().unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(resample_to_grid(&[0.0], &[1.0], 10.0, None), Err(ResampleError::TooFewSamples(1)));
        assert_eq!(
            resample_to_grid(&[0.0, 1.0, 1.0], &[1.0, 2.0, 3.0], 10.0, None),
            Err(ResampleError::NonMonotonic(2))
        );
    }

    proptest! {
        #[test]
        fn exact_on_affine(a in -100.0f64..100.0, b in -50.0f64..50.0, rate in 10.0f64..2000.0,
                           gaps in proptest::collection::vec(0.001f64..0.05, 3..60)) {
            let mut t = vec![0.37];
            for g in &gaps { t.push(t.last().unwrap() + g); }
            let v: Vec<f64> = t.iter().map(|&x| a + b * x).collect();
            let r = resample_to_grid(&t, &v, rate, None).unwrap();
            let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for (tk, vk) in r.t.iter().zip(&r.values) {
                prop_assert!((vk - (a + b * tk)).abs() <= 1e-9 * scale);
            }
        }
    }
}
