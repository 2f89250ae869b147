//! Dispersive optical channel: exponential-decay taps, cross-talk mixing,
//! detector noise, colour calibration and effective responsivity.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::SymbolStream;
use crate::rng::SimRng;

/// Default number of channel taps, equal to the default prefix length.
pub const DEFAULT_TAPS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    /// Delay spread normalised to the bit duration.
    pub dt: f64,
    /// Decay constant in seconds.
    pub tau: f64,
    /// Symbol period in seconds.
    pub ts: f64,
    /// Bit duration in seconds.
    pub tb: f64,
    taps: Vec<f64>,
}

impl ChannelModel {
    /// Symbol-spaced taps of `exp(-t / tau)`, truncated to `n_taps` and
    /// normalised to unit sum, with `tau = 2 * dt * Tb`.
    pub fn discretize_impulse_response(dt: f64, order: usize, rs: f64, n_taps: usize) -> Result<Self> {
        if !(rs > 0.0) || !rs.is_finite() {
            return Err(Error::InvalidParameter(format!("symbol rate must be positive, got {rs}")));
        }
        if order < 2 {
            return Err(Error::InvalidParameter(format!("order must be at least 2, got {order}")));
        }
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("delay spread must be non-negative, got {dt}")));
        }
        if n_taps == 0 {
            return Err(Error::InvalidParameter("at least one tap is required".into()));
        }
        let ts = 1.0 / rs;
        let tb = 1.0 / (rs * (order as f64).log2());
        let tau = 2.0 * dt * tb;
        let mut taps = vec![0.0; n_taps];
        if dt == 0.0 {
            taps[0] = 1.0;
        } else {
            let decay = (-ts / tau).exp();
            let mut v = 1.0;
            for t in taps.iter_mut() {
                *t = v;
                v *= decay;
            }
            let sum: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= sum);
        }
        Ok(Self { dt, tau, ts, tb, taps })
    }

    /// A channel with explicitly given taps (used for tests and custom runs).
    pub fn from_taps(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() || taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("taps must be non-empty and finite".into()));
        }
        Ok(Self {
            dt: f64::NAN,
            tau: f64::NAN,
            ts: f64::NAN,
            tb: f64::NAN,
            taps,
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

/// Cross-talk and insertion-loss matrix mapping transmit bands to detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CilMatrix {
    g: DMatrix<f64>,
    inverse: Option<DMatrix<f64>>,
}

impl CilMatrix {
    /// Row-major square matrix; row = detector, column = transmit band.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty matrix".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        let g = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let inverse = g.clone().try_inverse().filter(|inv| {
            inv.iter().all(|v| v.is_finite()) && g.determinant().abs() > 1e-15
        });
        Ok(Self { g, inverse })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            g: DMatrix::identity(n, n),
            inverse: Some(DMatrix::identity(n, n)),
        }
    }

    pub fn tled_default() -> Self {
        Self::new(vec![
            vec![0.271, 0.030, 0.0],
            vec![0.0, 0.255, 0.0],
            vec![0.0, 0.0, 0.200],
        ])
        .expect("default matrix is square")
    }

    pub fn qled_default() -> Self {
        Self::new(vec![
            vec![0.200, 0.003, 0.0, 0.0],
            vec![0.007, 0.220, 0.003, 0.0],
            vec![0.0, 0.002, 0.255, 0.0],
            vec![0.0, 0.0, 0.030, 0.271],
        ])
        .expect("default matrix is square")
    }

    pub fn size(&self) -> usize {
        self.g.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.g[(row, col)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size())
            .map(|i| self.g.row(i).iter().copied().collect())
            .collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn inverse(&self) -> Result<&DMatrix<f64>> {
        self.inverse.as_ref().ok_or(Error::SingularMatrix)
    }

    /// 2-norm condition number.
    pub fn condition_number(&self) -> f64 {
        let sv = self.g.singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("noise deviation must be non-negative, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn noiseless() -> Self {
        Self { sigma: 0.0 }
    }

    /// From a single-sided PSD, `sigma = sqrt(n0 / 2)`.
    pub fn from_n0(n0: f64) -> Result<Self> {
        Self::new((n0 / 2.0).sqrt())
    }

    pub fn n0(&self) -> f64 {
        2.0 * self.sigma * self.sigma
    }
}

/// Linear convolution truncated to the input length.
pub fn convolve_into(input: &[f64], taps: &[f64], out: &mut [f64]) {
    for (n, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, h) in taps.iter().enumerate().take(n + 1) {
            acc += h * input[n - k];
        }
        *o = acc;
    }
}

/// Convolves every band with the shared taps.
pub fn disperse(tx: &SymbolStream, model: &ChannelModel) -> SymbolStream {
    let bands = tx
        .bands()
        .iter()
        .map(|b| {
            let mut out = vec![0.0; b.len()];
            convolve_into(b, model.taps(), &mut out);
            out
        })
        .collect();
    SymbolStream::new(bands).expect("bands keep their length")
}

/// Per-sample multiplication of the band vector by a square matrix.
pub fn mix(stream: &SymbolStream, m: &DMatrix<f64>) -> Result<SymbolStream> {
    let d = stream.n_bands();
    if m.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            actual: d,
        });
    }
    let len = stream.len();
    let mut out = SymbolStream::zeros(d, len);
    let src = stream.bands();
    let dst = out.bands_mut();
    for (i, row) in dst.iter_mut().enumerate() {
        for j in 0..d {
            let w = m[(i, j)];
            if w != 0.0 {
                for (o, s) in row.iter_mut().zip(&src[j]) {
                    *o += w * s;
                }
            }
        }
    }
    Ok(out)
}

/// Adds i.i.d. Gaussian samples of deviation `sigma`, band by band.
pub fn add_noise(stream: &mut SymbolStream, noise: &NoiseModel, rng: &mut SimRng) {
    if noise.sigma == 0.0 {
        return;
    }
    for band in stream.bands_mut() {
        for v in band.iter_mut() {
            *v += noise.sigma * rng.gaussian();
        }
    }
}

/// Dispersion, then cross-talk mixing, then detector noise.
pub fn apply_channel(
    tx: &SymbolStream,
    model: &ChannelModel,
    g: &CilMatrix,
    noise: &NoiseModel,
    seed: u64,
) -> Result<SymbolStream> {
    if g.size() != tx.n_bands() {
        return Err(Error::DimensionMismatch {
            expected: g.size(),
            actual: tx.n_bands(),
        });
    }
    let mut rx = mix(&disperse(tx, model), g.matrix())?;
    add_noise(&mut rx, noise, &mut SimRng::new(seed));
    Ok(rx)
}

/// Undoes the cross-talk mixing sample by sample.
pub fn calibrate(rx: &SymbolStream, g: &CilMatrix) -> Result<SymbolStream> {
    mix(rx, g.inverse()?)
}

/// A curve sampled at strictly increasing wavelengths (nm).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCurve {
    pub wavelength: Vec<f64>,
    pub value: Vec<f64>,
}

impl SampledCurve {
    pub fn new(wavelength: Vec<f64>, value: Vec<f64>) -> Result<Self> {
        if wavelength.len() != value.len() {
            return Err(Error::LengthMismatch {
                expected: wavelength.len(),
                actual: value.len(),
            });
        }
        if wavelength.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("wavelengths must be strictly increasing".into()));
        }
        Ok(Self { wavelength, value })
    }

    pub fn from_fn(wavelength: Vec<f64>, f: impl Fn(f64) -> f64) -> Self {
        let value = wavelength.iter().map(|&w| f(w)).collect();
        Self { wavelength, value }
    }

    /// Loads a headerless or headed two-column CSV (wavelength, value).
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut wl = Vec::new();
        let mut val = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() < 2 {
                continue;
            }
            match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
                (Ok(w), Ok(v)) => {
                    wl.push(w);
                    val.push(v);
                }
                // a header line
                _ if wl.is_empty() => continue,
                _ => {
                    return Err(Error::Config(format!(
                        "non-numeric row in curve file: {:?}",
                        record.iter().collect::<Vec<_>>()
                    )))
                }
            }
        }
        Self::new(wl, val)
    }

    /// Support of the curve: the span of samples with value > 0.
    fn support(&self) -> Option<(f64, f64)> {
        let first = self.value.iter().position(|&v| v > 0.0)?;
        let last = self.value.iter().rposition(|&v| v > 0.0)?;
        Some((self.wavelength[first], self.wavelength[last]))
    }
}

fn trapezoid(x: &[f64], y: impl Fn(usize) -> f64, lo: f64, hi: f64) -> f64 {
    let mut acc = 0.0;
    for i in 1..x.len() {
        if x[i - 1] >= lo && x[i] <= hi {
            acc += 0.5 * (x[i] - x[i - 1]) * (y(i - 1) + y(i));
        }
    }
    acc
}

/// Ratio of the detected power (source x filter x responsivity over the
/// filter's support) to the emitted power (source over its own support).
/// All curves must share one wavelength grid.
pub fn effective_responsivity(
    spd: &SampledCurve,
    filter: &SampledCurve,
    responsivity: &SampledCurve,
) -> Result<f64> {
    let n = spd.wavelength.len();
    for c in [filter, responsivity] {
        if c.wavelength.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: c.wavelength.len(),
            });
        }
        if c.wavelength.iter().zip(&spd.wavelength).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::InvalidParameter("curves must share a wavelength grid".into()));
        }
    }
    let x = &spd.wavelength;
    let (s_lo, s_hi) = spd.support().ok_or(Error::EmptySupport)?;
    let denom = trapezoid(x, |i| spd.value[i], s_lo, s_hi);
    if !(denom > 0.0) {
        return Err(Error::EmptySupport);
    }
    let Some((f_lo, f_hi)) = filter.support() else {
        return Ok(0.0);
    };
    let num = trapezoid(
        x,
        |i| spd.value[i] * filter.value[i] * responsivity.value[i],
        f_lo,
        f_hi,
    );
    Ok(num / denom)
}
