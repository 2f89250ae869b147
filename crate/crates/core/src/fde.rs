//! Frequency-domain zero-forcing equalisation.
//!
//! Scaling convention, used everywhere in this module:
//! `X[k] = sum_n x[n] e^{-j 2 pi k n / N}` and
//! `x[n] = (1/N) sum_k X[k] e^{+j 2 pi k n / N}`,
//! so Parseval reads `sum |x|^2 = (1/N) sum |X|^2`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Bins with a smaller magnitude make the channel non-invertible.
pub const NULL_THRESHOLD: f64 = 1e-12;
/// Largest imaginary part tolerated after the inverse transform.
pub const IMAG_TOLERANCE: f64 = 1e-9;

fn check_len(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        Err(Error::InvalidLength(n))
    } else {
        Ok(())
    }
}

pub fn dft(block: &[f64]) -> Result<Vec<Complex64>> {
    check_len(block.len())?;
    let mut buf: Vec<Complex64> = block.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(block.len()).process(&mut buf);
    Ok(buf)
}

pub fn idft(spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = spectrum.len();
    check_len(n)?;
    let mut buf = spectrum.to_vec();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(buf)
}

/// Per-bin gains of the zero-padded channel taps.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralChannel {
    pub lambda: Vec<Complex64>,
}

impl SpectralChannel {
    pub fn new(taps: &[f64], n: usize) -> Result<Self> {
        check_len(n)?;
        if taps.is_empty() {
            return Err(Error::InvalidParameter("taps must be non-empty".into()));
        }
        if taps.len() > n {
            return Err(Error::InvalidParameter(format!(
                "{} taps do not fit a block of {n}",
                taps.len()
            )));
        }
        let mut padded = vec![0.0; n];
        padded[..taps.len()].copy_from_slice(taps);
        Ok(Self { lambda: dft(&padded)? })
    }
}

/// Per-bin equaliser coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerSpec {
    pub z: Vec<Complex64>,
}

impl EqualizerSpec {
    pub fn identity(n: usize) -> Self {
        Self {
            z: vec![Complex64::new(1.0, 0.0); n],
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// `z[k] = conj(lambda[k]) / |lambda[k]|^2`.
pub fn build_zfe(taps: &[f64], n: usize) -> Result<EqualizerSpec> {
    let channel = SpectralChannel::new(taps, n)?;
    let z = channel
        .lambda
        .iter()
        .enumerate()
        .map(|(bin, l)| {
            let mag = l.norm();
            if mag < NULL_THRESHOLD {
                Err(Error::SpectralNull { bin, magnitude: mag })
            } else {
                Ok(l.conj() / l.norm_sqr())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EqualizerSpec { z })
}

/// Reusable equaliser with cached transform plans and scratch space.
pub struct BlockEqualizer {
    spec: EqualizerSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl BlockEqualizer {
    pub fn new(spec: EqualizerSpec) -> Result<Self> {
        let n = spec.len();
        check_len(n)?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(Self {
            spec,
            forward,
            inverse,
            buf: vec![Complex64::default(); n],
            scratch: vec![Complex64::default(); scratch_len],
        })
    }

    pub fn spec(&self) -> &EqualizerSpec {
        &self.spec
    }

    /// Equalises `block` in place.
    pub fn apply(&mut self, block: &mut [f64]) -> Result<()> {
        let n = self.spec.len();
        if block.len() != n {
            return Err(Error::InvalidLength(block.len()));
        }
        for (b, &v) in self.buf.iter_mut().zip(block.iter()) {
            *b = Complex64::new(v, 0.0);
        }
        self.forward.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (b, z) in self.buf.iter_mut().zip(&self.spec.z) {
            *b *= z;
        }
        self.inverse.process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / n as f64;
        let mut residue = 0.0f64;
        for (out, b) in block.iter_mut().zip(&self.buf) {
            *out = b.re * scale;
            residue = residue.max((b.im * scale).abs());
        }
        if residue >= IMAG_TOLERANCE {
            return Err(Error::ImaginaryResidue(residue));
        }
        Ok(())
    }
}

/// Transforms, scales each bin by `z`, and returns the real part of the
/// inverse transform.
pub fn equalize_block(rx_block: &[f64], eq: &EqualizerSpec) -> Result<Vec<f64>> {
    if rx_block.len() != eq.len() {
        return Err(Error::InvalidLength(rx_block.len()));
    }
    let mut out = rx_block.to_vec();
    BlockEqualizer::new(eq.clone())?.apply(&mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use std::f64::consts::TAU;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(i, &v)| v * Complex64::from_polar(1.0, -TAU * (k * i) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut r = SimRng::new(seed);
        (0..n).map(|_| r.gaussian()).collect()
    }

    fn circular(x: &[f64], taps: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| taps.iter().enumerate().map(|(k, h)| h * x[(i + n - k) % n]).sum())
            .collect()
    }

    #[test]
    fn impulse_and_constant() {
        let mut delta = vec![0.0; 16];
        delta[0] = 1.0;
        assert!(dft(&delta).unwrap().iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let spec = dft(&[0.25; 16]).unwrap();
        assert!((spec[0] - Complex64::new(4.0, 0.0)).norm() < 1e-12);
        assert!(spec[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn matches_naive_transform() {
        let x = random(64, 1);
        for (a, b) in dft(&x).unwrap().iter().zip(naive_dft(&x)) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let x = random(64, 2);
        let spec = dft(&x).unwrap();
        for (a, b) in idft(&spec).unwrap().iter().zip(&x) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = spec.iter().map(|v| v.norm_sqr()).sum::<f64>() / 64.0;
        assert!((time - freq).abs() < 1e-9 * time);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(matches!(dft(&[0.0; 6]), Err(Error::InvalidLength(6))));
        assert!(matches!(dft(&[]), Err(Error::InvalidLength(0))));
        assert!(matches!(idft(&[Complex64::default(); 12]), Err(Error::InvalidLength(12))));
    }

    #[test]
    fn delta_channel_gives_identity() {
        let eq = build_zfe(&[1.0], 64).unwrap();
        assert!(eq.z.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let x = random(64, 3);
        let y = equalize_block(&x, &eq).unwrap();
        for (a, b) in x.iter().zip(y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_tap_bins() {
        let eq = build_zfe(&[0.8, 0.2], 8).unwrap();
        for (k, z) in eq.z.iter().enumerate() {
            let oracle = 1.0 / (0.8 + 0.2 * Complex64::from_polar(1.0, -TAU * k as f64 / 8.0));
            assert!((z - oracle).norm() < 1e-12);
        }
    }

    #[test]
    fn unit_dc_channel() {
        let taps = [0.5, 0.3, 0.2];
        let ch = SpectralChannel::new(&taps, 16).unwrap();
        assert!((ch.lambda[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        for k in 1..16 {
            assert!((ch.lambda[16 - k] - ch.lambda[k].conj()).norm() < 1e-12);
        }
        let eq = build_zfe(&taps, 16).unwrap();
        assert!((eq.z[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        for (z, l) in eq.z.iter().zip(&ch.lambda) {
            assert!((z * l - Complex64::new(1.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn spectral_null_detected() {
        assert!(matches!(build_zfe(&[0.5, 0.5], 8), Err(Error::SpectralNull { bin: 4, .. })));
    }

    #[test]
    fn inverts_circular_convolution() {
        let taps = [0.6, 0.25, 0.1, 0.05];
        let x = random(64, 4);
        let eq = build_zfe(&taps, 64).unwrap();
        let y = equalize_block(&circular(&x, &taps), &eq).unwrap();
        for (a, b) in x.iter().zip(y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn block_mean_preserved() {
        let taps = [0.7, 0.2, 0.1];
        let x = random(32, 5);
        let y = equalize_block(&x, &build_zfe(&taps, 32).unwrap()).unwrap();
        let mx = x.iter().sum::<f64>() / 32.0;
        let my = y.iter().sum::<f64>() / 32.0;
        assert!((mx - my).abs() < 1e-9);
    }

    #[test]
    fn wrong_block_length() {
        let eq = EqualizerSpec::identity(8);
        assert!(matches!(equalize_block(&[0.0; 4], &eq), Err(Error::InvalidLength(4))));
    }
}
