//! EMG conditioning: band-pass, demean, rectify, low-pass envelope.
//!
//! Filters are Butterworth designs discretized with the pre-warped bilinear
//! transform, stored as second-order sections and run forward then backward
//! for zero phase. Edges are padded by odd reflection of `3 × order` samples
//! and each section starts from its steady-state response to the first padded
//! sample.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::DspError;
use crate::model::EmgStream;

/// A uniformly sampled single-channel signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub t0: f64,
    pub rate_hz: f64,
    pub samples: Vec<f64>,
}

impl Signal {
    pub fn new(t0: f64, rate_hz: f64, samples: Vec<f64>) -> Self {
        Signal { t0, rate_hz, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.rate_hz
    }

    fn with_samples(&self, samples: Vec<f64>) -> Signal {
        Signal { t0: self.t0, rate_hz: self.rate_hz, samples }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub band_low: f64,
    pub band_high: f64,
    pub envelope_cutoff: f64,
    /// Number of poles of each designed filter. Must be even.
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec { band_low: 20.0, band_high: 300.0, envelope_cutoff: 50.0, order: 4 }
    }
}

impl FilterSpec {
    pub fn validate(&self, rate_hz: f64) -> Result<(), DspError> {
        if self.order == 0 || !self.order.is_multiple_of(2) {
            return Err(DspError::Spec(format!("order must be a positive even integer, got {}", self.order)));
        }
        if !(self.band_low > 0.0 && self.band_low < self.band_high) {
            return Err(DspError::Spec(format!(
                "need 0 < band_low < band_high, got {} / {}",
                self.band_low, self.band_high
            )));
        }
        if !(self.envelope_cutoff > 0.0) {
            return Err(DspError::Spec(format!("envelope cutoff must be positive, got {}", self.envelope_cutoff)));
        }
        let nyq = rate_hz / 2.0;
        if self.band_high >= nyq {
            return Err(DspError::Nyquist { rate: rate_hz, cutoff: self.band_high });
        }
        if self.envelope_cutoff >= nyq {
            return Err(DspError::Nyquist { rate: rate_hz, cutoff: self.envelope_cutoff });
        }
        Ok(())
    }

    pub fn pad_len(&self) -> usize {
        3 * self.order
    }
}

/// One second-order section with `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, zinv: Complex64) -> Complex64 {
        let z2 = zinv * zinv;
        (self.b[0] + zinv * self.b[1] + z2 * self.b[2]) / (1.0 + zinv * self.a[0] + z2 * self.a[1])
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Cascade of second-order sections.
#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    pub rate_hz: f64,
}

fn prewarp(f: f64, rate: f64) -> f64 {
    2.0 * rate * (std::f64::consts::PI * f / rate).tan()
}

fn bilinear(s: Complex64, rate: f64) -> Complex64 {
    let k = 2.0 * rate;
    (k + s) / (k - s)
}

fn prototype_poles(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            let theta = std::f64::consts::PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

/// Groups digital poles into conjugate (or real) pairs.
fn pair_poles(mut poles: Vec<Complex64>) -> Vec<(Complex64, Complex64)> {
    const IM_TOL: f64 = 1e-12;
    let mut pairs = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    poles.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    for p in &poles {
        if p.im > IM_TOL {
            pairs.push((*p, p.conj()));
        } else if p.im.abs() <= IM_TOL {
            reals.push(p.re);
        }
    }
    reals.sort_by(f64::total_cmp);
    for ch in reals.chunks(2) {
        let second = if ch.len() == 2 { ch[1] } else { 0.0 };
        pairs.push((Complex64::new(ch[0], 0.0), Complex64::new(second, 0.0)));
    }
    pairs
}

fn section(zeros: (f64, f64), poles: (Complex64, Complex64)) -> Biquad {
    let (z1, z2) = zeros;
    let (p1, p2) = poles;
    Biquad { b: [1.0, -(z1 + z2), z1 * z2], a: [-(p1 + p2).re, (p1 * p2).re] }
}

impl Sos {
    /// Butterworth low-pass with `order` poles.
    pub fn butter_lowpass(order: usize, cutoff: f64, rate: f64) -> Sos {
        let wc = prewarp(cutoff, rate);
        let poles: Vec<Complex64> = prototype_poles(order).into_iter().map(|p| bilinear(p * wc, rate)).collect();
        let sections = pair_poles(poles).into_iter().map(|pp| section((-1.0, -1.0), pp)).collect();
        let mut sos = Sos { sections, rate_hz: rate };
        sos.normalize_at(0.0);
        sos
    }

    /// Butterworth band-pass with `order` poles (prototype of order `order / 2`).
    pub fn butter_bandpass(order: usize, low: f64, high: f64, rate: f64) -> Sos {
        let (wl, wh) = (prewarp(low, rate), prewarp(high, rate));
        let w0 = (wl * wh).sqrt();
        let bw = wh - wl;
        let mut poles = Vec::with_capacity(order);
        for p in prototype_poles(order / 2) {
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0 * w0).sqrt();
            poles.push(bilinear((pb + disc) / 2.0, rate));
            poles.push(bilinear((pb - disc) / 2.0, rate));
        }
        let sections = pair_poles(poles).into_iter().map(|pp| section((1.0, -1.0), pp)).collect();
        let mut sos = Sos { sections, rate_hz: rate };
        let center = 2.0 * (w0 / (2.0 * rate)).atan() * rate / (2.0 * std::f64::consts::PI);
        sos.normalize_at(center);
        sos
    }

    fn normalize_at(&mut self, freq: f64) {
        let zinv = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * freq / self.rate_hz);
        for s in &mut self.sections {
            let g = s.response(zinv).norm();
            for b in &mut s.b {
                *b /= g;
            }
        }
    }

    /// Complex response of one pass at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let zinv = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * freq / self.rate_hz);
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(zinv))
    }

    /// Single causal pass, transposed direct form II, starting from the
    /// steady state for a constant input equal to `x[0]`.
    fn lfilter_steady(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let mut level = x0;
        for s in &self.sections {
            let g = s.dc_gain();
            let mut z1 = (g - s.b[0]) * level;
            let mut z2 = (s.b[2] - s.a[1] * g) * level;
            for v in x.iter_mut() {
                let xin = *v;
                let y = s.b[0] * xin + z1;
                z1 = s.b[1] * xin - s.a[0] * y + z2;
                z2 = s.b[2] * xin - s.a[1] * y;
                *v = y;
            }
            level *= g;
        }
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding.
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Result<Vec<f64>, DspError> {
        let n = x.len();
        if n == 0 {
            return Err(DspError::Empty);
        }
        if n <= pad {
            return Err(DspError::TooShort { len: n, pad });
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));
        self.lfilter_steady(&mut ext);
        ext.reverse();
        self.lfilter_steady(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

pub fn bandpass(signal: &Signal, spec: &FilterSpec) -> Result<Signal, DspError> {
    spec.validate(signal.rate_hz)?;
    let sos = Sos::butter_bandpass(spec.order, spec.band_low, spec.band_high, signal.rate_hz);
    Ok(signal.with_samples(sos.filtfilt(&signal.samples, spec.pad_len())?))
}

pub fn demean(signal: &Signal) -> Result<Signal, DspError> {
    if signal.is_empty() {
        return Err(DspError::Empty);
    }
    let mean = signal.samples.iter().sum::<f64>() / signal.len() as f64;
    Ok(signal.with_samples(signal.samples.iter().map(|v| v - mean).collect()))
}

pub fn rectify(signal: &Signal) -> Signal {
    signal.with_samples(signal.samples.iter().map(|v| v.abs()).collect())
}

/// Zero-phase low-pass of the rectified input. Small negative values left by
/// the filter are clamped to zero.
pub fn envelope(signal: &Signal, spec: &FilterSpec) -> Result<Signal, DspError> {
    if signal.is_empty() {
        return Err(DspError::Empty);
    }
    if spec.envelope_cutoff >= signal.rate_hz / 2.0 {
        return Err(DspError::Nyquist { rate: signal.rate_hz, cutoff: spec.envelope_cutoff });
    }
    if spec.order == 0 || !spec.order.is_multiple_of(2) {
        return Err(DspError::Spec(format!("order must be a positive even integer, got {}", spec.order)));
    }
    let sos = Sos::butter_lowpass(spec.order, spec.envelope_cutoff, signal.rate_hz);
    let rect: Vec<f64> = signal.samples.iter().map(|v| v.abs()).collect();
    let mut out = sos.filtfilt(&rect, spec.pad_len())?;
    for v in &mut out {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(signal.with_samples(out))
}

/// Per-channel envelopes on the EMG time base.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelopes {
    pub t0: f64,
    pub rate_hz: f64,
    /// channels × samples
    pub data: Array2<f64>,
}

impl Envelopes {
    pub fn channel(&self, c: usize) -> Signal {
        Signal::new(self.t0, self.rate_hz, self.data.row(c).to_vec())
    }
}

/// Band-pass, demean, rectify, envelope; applied channel by channel.
pub fn preprocess_matrix(t0: f64, rate_hz: f64, raw: &Array2<f64>, spec: &FilterSpec) -> Result<Envelopes, DspError> {
    spec.validate(rate_hz)?;
    let mut data = Array2::<f64>::zeros(raw.raw_dim());
    for (c, row) in raw.rows().into_iter().enumerate() {
        let wrap = |e: DspError| DspError::Channel { channel: c, source: Box::new(e) };
        let sig = Signal::new(t0, rate_hz, row.to_vec());
        let bp = bandpass(&sig, spec).map_err(wrap)?;
        let dm = demean(&bp).map_err(wrap)?;
        let env = envelope(&rectify(&dm), spec).map_err(wrap)?;
        data.row_mut(c).assign(&ndarray::ArrayView1::from(&env.samples));
    }
    Ok(Envelopes { t0, rate_hz, data })
}

pub fn preprocess(emg: &EmgStream, spec: &FilterSpec) -> Result<Envelopes, DspError> {
    let t0 = *emg.t.first().ok_or(DspError::Empty)?;
    preprocess_matrix(t0, emg.rate_hz, &emg.data, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const FS: f64 = 2000.0;

    fn tone(freq: f64, secs: f64) -> Signal {
        let n = (secs * FS) as usize;
        Signal::new(0.0, FS, (0..n).map(|k| (2.0 * PI * freq * k as f64 / FS).sin()).collect())
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Analog Butterworth band-pass magnitude at the pre-warped frequency.
    /// The bilinear transform maps it exactly onto the digital response.
    fn analog_bandpass_mag(f: f64, spec: &FilterSpec) -> f64 {
        let w = prewarp(f, FS);
        let (wl, wh) = (prewarp(spec.band_low, FS), prewarp(spec.band_high, FS));
        let x = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / (1.0 + x.powi(spec.order as i32)).sqrt()
    }

    fn analog_lowpass_mag(f: f64, cutoff: f64, order: usize) -> f64 {
        let x = prewarp(f, FS) / prewarp(cutoff, FS);
        1.0 / (1.0 + x.powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn designed_response_matches_analog_prototype() {
        let spec = FilterSpec::default();
        let bp = Sos::butter_bandpass(spec.order, spec.band_low, spec.band_high, FS);
        let lp = Sos::butter_lowpass(spec.order, spec.envelope_cutoff, FS);
        for f in [1.0, 5.0, 10.0, 20.0, 50.0, 100.0, 300.0, 600.0, 950.0] {
            assert!((bp.response(f).norm() - analog_bandpass_mag(f, &spec)).abs() < 1e-9, "bp {f}");
            assert!((lp.response(f).norm() - analog_lowpass_mag(f, 50.0, 4)).abs() < 1e-9, "lp {f}");
        }
        assert_eq!(bp.sections.len(), 2);
        assert_eq!(lp.sections.len(), 2);
    }

    #[test]
    fn bandpass_zero_signal() {
        let out = bandpass(&Signal::new(0.0, FS, vec![0.0; 500]), &FilterSpec::default()).unwrap();
        assert!(out.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bandpass_attenuates_10hz_passes_100hz() {
        let spec = FilterSpec::default();
        // Two passes: the zero-phase gain is the squared one-pass magnitude.
        let g10 = analog_bandpass_mag(10.0, &spec).powi(2);
        let g100 = analog_bandpass_mag(100.0, &spec).powi(2);
        assert!(g10 < 0.1 && (g100 - 1.0).abs() < 0.05);

        let inner = |s: &Signal| s.samples[400..s.len() - 400].to_vec();
        let x10 = tone(10.0, 4.0);
        let y10 = bandpass(&x10, &spec).unwrap();
        let r10 = rms(&inner(&y10)) / rms(&inner(&x10));
        assert!(r10 < 0.1, "10 Hz ratio {r10}");
        assert!((r10 - g10).abs() < 0.01, "10 Hz ratio {r10} vs oracle {g10}");

        let x100 = tone(100.0, 2.0);
        let y100 = bandpass(&x100, &spec).unwrap();
        let r100 = rms(&inner(&y100)) / rms(&inner(&x100));
        assert!((r100 - 1.0).abs() < 0.05, "100 Hz ratio {r100}");
        assert!((r100 - g100).abs() < 0.005);
    }

    #[test]
    fn nyquist_and_length_errors() {
        let spec = FilterSpec::default();
        let slow = Signal::new(0.0, 500.0, vec![0.0; 100]);
        assert!(matches!(bandpass(&slow, &spec), Err(DspError::Nyquist { .. })));
        let short = Signal::new(0.0, FS, vec![1.0; 12]);
        assert!(matches!(bandpass(&short, &spec), Err(DspError::TooShort { .. })));
        let odd = FilterSpec { order: 3, ..spec };
        assert!(matches!(odd.validate(FS), Err(DspError::Spec(_))));
    }

    #[test]
    fn demean_examples() {
        let s = |v: Vec<f64>| Signal::new(0.0, FS, v);
        assert!(demean(&s(vec![5.0; 10])).unwrap().samples.iter().all(|&v| v == 0.0));
        assert_eq!(demean(&s(vec![1.0, 2.0, 3.0])).unwrap().samples, vec![-1.0, 0.0, 1.0]);
        let z = vec![-2.0, 1.0, 1.0, -1.0, 1.0];
        let out = demean(&s(z.clone())).unwrap();
        for (a, b) in out.samples.iter().zip(&z) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(demean(&s(vec![])), Err(DspError::Empty));
    }

    #[test]
    fn rectify_examples() {
        let s = Signal::new(0.0, FS, vec![-1.0, 2.0, -3.0]);
        assert_eq!(rectify(&s).samples, vec![1.0, 2.0, 3.0]);
        let pos = Signal::new(0.0, FS, vec![0.0, 0.5, 4.0]);
        assert_eq!(rectify(&pos), pos);
        let l1: f64 = s.samples.iter().map(|v| v.abs()).sum();
        assert_eq!(rectify(&s).samples.iter().sum::<f64>(), l1);
    }

    #[test]
    fn envelope_of_rectified_tone_is_two_over_pi() {
        let x = rectify(&tone(150.0, 2.0));
        let env = envelope(&x, &FilterSpec::default()).unwrap();
        let mid = &env.samples[200..env.len() - 200];
        let mean = mid.iter().sum::<f64>() / mid.len() as f64;
        let target = 2.0 / PI;
        assert!((mean / target - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn envelope_constant_and_zero() {
        let spec = FilterSpec::default();
        let c = envelope(&Signal::new(0.0, FS, vec![0.7; 1000]), &spec).unwrap();
        assert!(c.samples.iter().all(|v| (v - 0.7).abs() < 1e-6));
        let z = envelope(&Signal::new(0.0, FS, vec![0.0; 1000]), &spec).unwrap();
        assert!(z.samples.iter().all(|&v| v == 0.0));
        let slow = Signal::new(0.0, 80.0, vec![1.0; 100]);
        assert!(matches!(envelope(&slow, &spec), Err(DspError::Nyquist { .. })));
    }

    #[test]
    fn symmetric_pulse_keeps_peak_position() {
        let n = 2001;
        let center = 1000usize;
        let x: Vec<f64> = (0..n)
            .map(|k| {
                let d = (k as f64 - center as f64) / 40.0;
                (-d * d).exp()
            })
            .collect();
        let sig = Signal::new(0.0, FS, x);
        let spec = FilterSpec::default();
        let lp = envelope(&sig, &spec).unwrap();
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((argmax(&lp.samples) as i64 - center as i64).abs() <= 1);
        let bp = bandpass(&sig, &FilterSpec { band_low: 5.0, band_high: 300.0, ..spec }).unwrap();
        assert!((argmax(&bp.samples) as i64 - center as i64).abs() <= 1);
    }

    #[test]
    fn preprocess_channel_independence_and_determinism() {
        let mut raw = Array2::<f64>::zeros((3, 800));
        let mut state = 12345u64;
        for v in raw.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
        }
        let spec = FilterSpec::default();
        let a = preprocess_matrix(0.0, FS, &raw, &spec).unwrap();
        let b = preprocess_matrix(0.0, FS, &raw, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|&v| v >= 0.0));

        let perm = [2usize, 0, 1];
        let mut permuted = raw.clone();
        for (dst, &src) in perm.iter().enumerate() {
            permuted.row_mut(dst).assign(&raw.row(src));
        }
        let p = preprocess_matrix(0.0, FS, &permuted, &spec).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(p.data.row(dst), a.data.row(src));
        }

        let zeros = preprocess_matrix(0.0, FS, &Array2::zeros((14, 500)), &spec).unwrap();
        assert!(zeros.data.iter().all(|&v| v == 0.0));
    }
}
