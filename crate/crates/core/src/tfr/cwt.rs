//! Morlet continuous wavelet transform.
//!
//! Coefficients are computed by zero-padded FFT convolution with a
//! truncated, sampled Morlet atom. A plan caches the atom spectra for a fixed
//! signal length and scale list so that many leads share the set-up cost.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::TfrError;

/// Atoms are truncated at this many standard deviations of the envelope.
pub const SUPPORT_SIGMAS: f64 = 4.0;

/// `S x T` complex coefficients, row-major (one row per scale).
#[derive(Debug, Clone, PartialEq)]
pub struct CwtMatrix {
    pub n_scales: usize,
    pub n_times: usize,
    pub data: Vec<Complex64>,
}

impl CwtMatrix {
    pub fn get(&self, scale: usize, t: usize) -> Complex64 {
        self.data[scale * self.n_times + t]
    }

    pub fn row(&self, scale: usize) -> &[Complex64] {
        &self.data[scale * self.n_times..(scale + 1) * self.n_times]
    }
}

/// Pseudo-frequency in Hz of scale `s` (in samples).
pub fn scale_to_hz(scale: f64, omega0: f64, sampling_rate_hz: f64) -> f64 {
    omega0 / (2.0 * PI * scale) * sampling_rate_hz
}

/// Scale in samples whose pseudo-frequency is `hz`.
pub fn hz_to_scale(hz: f64, omega0: f64, sampling_rate_hz: f64) -> f64 {
    omega0 * sampling_rate_hz / (2.0 * PI * hz)
}

pub struct CwtPlan {
    len: usize,
    scales: Vec<f64>,
    omega0: f64,
    fft_len: usize,
    atom_spectra: Vec<Vec<Complex64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CwtPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CwtPlan")
            .field("len", &self.len)
            .field("scales", &self.scales.len())
            .field("omega0", &self.omega0)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

fn check_args(len: usize, scales: &[f64], omega0: f64) -> Result<(), TfrError> {
    if len < 2 {
        return Err(TfrError::EmptySignal);
    }
    if !(omega0 >= 5.0) {
        return Err(TfrError::OmegaTooSmall(omega0));
    }
    if let Some(&s) = scales.iter().find(|&&s| !(s >= 1.0 && s.is_finite())) {
        return Err(TfrError::ScaleTooSmall(s));
    }
    Ok(())
}

/// Half-width in samples of the truncated atom at `scale`, clipped to the
/// largest offset that can touch a signal of length `len`.
fn half_width(scale: f64, len: usize) -> usize {
    ((SUPPORT_SIGMAS * scale).floor() as usize).min(len - 1)
}

/// Smallest 5-smooth integer >= n.
fn smooth_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// `conj(psi(u)) / sqrt(s)` for `u = d / s`.
fn conj_atom(d: f64, scale: f64, omega0: f64) -> Complex64 {
    let u = d / scale;
    let env = PI.powf(-0.25) * (-0.5 * u * u).exp() / scale.sqrt();
    Complex64::from_polar(env, -omega0 * u)
}

impl CwtPlan {
    pub fn new(len: usize, scales: &[f64], omega0: f64) -> Result<Self, TfrError> {
        check_args(len, scales, omega0)?;
        let max_half = scales.iter().map(|&s| half_width(s, len)).max().unwrap_or(0);
        let fft_len = smooth_len(len + max_half);
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);

        // coefficient[t] = sum_d x[t + d] h[d] is a convolution of x with
        // g[k] = h[-k]; g is laid out circularly.
        let atom_spectra = scales
            .iter()
            .map(|&s| {
                let l = half_width(s, len) as isize;
                let mut g = vec![Complex64::new(0.0, 0.0); fft_len];
                for d in -l..=l {
                    let k = (-d).rem_euclid(fft_len as isize) as usize;
                    g[k] = conj_atom(d as f64, s, omega0);
                }
                forward.process(&mut g);
                g
            })
            .collect();

        Ok(Self {
            len,
            scales: scales.to_vec(),
            omega0,
            fft_len,
            atom_spectra,
            forward,
            inverse,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    fn spectrum(&self, signal: &[f64]) -> Result<Vec<Complex64>, TfrError> {
        if signal.len() != self.len {
            return Err(TfrError::ShapeMismatch(format!(
                "plan built for {} samples, got {}",
                self.len,
                signal.len()
            )));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for (b, &x) in buf.iter_mut().zip(signal) {
            b.re = x;
        }
        self.forward.process(&mut buf);
        Ok(buf)
    }

    /// Calls `sink(scale_index, coefficients)` for each scale in order.
    fn for_each_row(
        &self,
        signal: &[f64],
        mut sink: impl FnMut(usize, &[Complex64]),
    ) -> Result<(), TfrError> {
        let x = self.spectrum(signal)?;
        let norm = 1.0 / self.fft_len as f64;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for (si, g) in self.atom_spectra.iter().enumerate() {
            for ((b, xv), gv) in buf.iter_mut().zip(&x).zip(g) {
                *b = xv * gv * norm;
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            sink(si, &buf[..self.len]);
        }
        Ok(())
    }

    pub fn transform(&self, signal: &[f64]) -> Result<CwtMatrix, TfrError> {
        let mut data = Vec::with_capacity(self.scales.len() * self.len);
        self.for_each_row(signal, |_, row| data.extend_from_slice(row))?;
        Ok(CwtMatrix {
            n_scales: self.scales.len(),
            n_times: self.len,
            data,
        })
    }

    /// `|coefficient|`, row-major `S x T`.
    pub fn magnitudes(&self, signal: &[f64]) -> Result<Vec<f64>, TfrError> {
        let mut out = Vec::with_capacity(self.scales.len() * self.len);
        self.for_each_row(signal, |_, row| out.extend(row.iter().map(|c| c.norm_sqr().sqrt())))?;
        Ok(out)
    }
}

/// Morlet CWT of `signal` at the given scales (in samples).
///
/// `coefficient[s][t] = sum_tau x[tau] conj(psi((tau - t) / s)) / sqrt(s)`
/// with `psi(u) = pi^(-1/4) exp(i omega0 u) exp(-u^2 / 2)`, the atom
/// truncated at `|u| <= 4` and the signal zero-padded.
pub fn morlet_cwt(signal: &[f64], scales: &[f64], omega0: f64) -> Result<CwtMatrix, TfrError> {
    CwtPlan::new(signal.len(), scales, omega0)?.transform(signal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_lengths() {
        assert_eq!(smooth_len(999), 1000);
        assert_eq!(smooth_len(7), 8);
        assert_eq!(smooth_len(1), 1);
        assert_eq!(smooth_len(131), 135);
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(morlet_cwt(&[1.0], &[2.0], 6.0), Err(TfrError::EmptySignal)));
        assert!(matches!(
            morlet_cwt(&[1.0, 2.0], &[0.5], 6.0),
            Err(TfrError::ScaleTooSmall(_))
        ));
        assert!(matches!(
            morlet_cwt(&[1.0, 2.0], &[2.0], 4.0),
            Err(TfrError::OmegaTooSmall(_))
        ));
    }

    #[test]
    fn zero_signal_gives_zero_coefficients() {
        let m = morlet_cwt(&[0.0; 64], &[1.0, 3.0, 40.0], 6.0).unwrap();
        assert!(m.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn linear_in_input() {
        let x: Vec<f64> = (0..100).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let scaled: Vec<f64> = x.iter().map(|v| -2.5 * v).collect();
        let a = morlet_cwt(&x, &[2.0, 9.0, 30.0], 6.0).unwrap();
        let b = morlet_cwt(&scaled, &[2.0, 9.0, 30.0], 6.0).unwrap();
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((q.norm() - 2.5 * p.norm()).abs() <= 1e-12 * (1.0 + p.norm()));
        }
    }

    #[test]
    fn frequency_scale_roundtrip() {
        let s = hz_to_scale(10.0, 6.0, 500.0);
        assert!((s - 47.746).abs() < 1e-3);
        assert!((scale_to_hz(s, 6.0, 500.0) - 10.0).abs() < 1e-12);
    }
}
