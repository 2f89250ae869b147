//! Monte Carlo BER measurement, power-requirement search and result files.
//!
//! Optical SNR convention: `snr_o_db = 10 log10(P_avg / sigma)`, where
//! `P_avg` is the mean received signal amplitude per detector after the
//! cross-talk matrix (averaged over equiprobable symbols and over detectors)
//! and `sigma` the per-detector noise deviation. Requirements are reported
//! relative to unipolar OOK over AWGN at the same `sigma`, i.e.
//! `snr_o_db - 10 log10(Q^-1(target))`.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::channel::{apply_channel, calibrate, ChannelModel, CilMatrix, NoiseModel};
use crate::colorimetry::{Constellation, Scheme};
use crate::config::Hardware;
use crate::error::{Error, Result};
use crate::fde::{build_zfe, BlockEqualizer, EqualizerSpec};
use crate::modem::SymbolStream;
use crate::rng::{derive_seed, SimRng};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
/// Interval width used to cut a measurement short during the power search:
/// a point stops before its error quota only when a five-sigma Wilson
/// interval already lies entirely on one side of the target.
pub const DECISION_Z: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub order: usize,
    /// Delay spread normalised to the bit duration.
    pub dt: f64,
    pub fde: bool,
    /// Payload symbols per block.
    pub n: usize,
    /// Cyclic prefix length; only transmitted when `fde` is on.
    pub cp: usize,
    /// Symbol rate in symbols per second.
    pub rs: f64,
    pub channel_taps: usize,
    pub target_ber: f64,
    pub min_bit_errors: u64,
    pub max_bits: u64,
    pub seed: u64,
    pub snr_grid: Vec<f64>,
    pub snr_lo: f64,
    pub snr_hi: f64,
    /// Bisection stops once the bracket is no wider than this.
    pub resolution_db: f64,
    pub blocks_per_batch: usize,
    pub batches_per_wave: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Qled,
            order: 4,
            dt: 0.0,
            fde: true,
            n: 64,
            cp: 8,
            rs: 24e6,
            channel_taps: 8,
            target_ber: 1e-6,
            min_bit_errors: 100,
            max_bits: 1_000_000_000,
            seed: 1,
            snr_grid: Vec::new(),
            snr_lo: -10.0,
            snr_hi: 40.0,
            resolution_db: 0.1,
            blocks_per_batch: 64,
            batches_per_wave: 8,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scheme.check_order(self.order)?;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n == 0 || !self.n.is_power_of_two() {
            return Err(Error::InvalidLength(self.n));
        }
        if self.cp > self.n {
            return Err(Error::InvalidPrefix { cp: self.cp, n: self.n });
        }
        if self.channel_taps == 0 {
            return bad("channel_taps must be at least 1".into());
        }
        if self.fde && self.channel_taps > self.cp + 1 {
            return bad(format!(
                "{} channel taps need a prefix of at least {}",
                self.channel_taps,
                self.channel_taps - 1
            ));
        }
        if !(self.dt >= 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be finite and non-negative, got {}", self.dt));
        }
        if !(self.rs > 0.0) || !self.rs.is_finite() {
            return bad(format!("rs must be positive, got {}", self.rs));
        }
        if !(self.target_ber > 0.0 && self.target_ber < 0.5) {
            return Err(Error::InvalidTarget(self.target_ber));
        }
        if self.min_bit_errors == 0 || self.max_bits == 0 {
            return bad("min_bit_errors and max_bits must be positive".into());
        }
        if self.snr_grid.iter().any(|s| s.is_nan()) {
            return bad("SNR values must not be NaN".into());
        }
        if !(self.snr_lo.is_finite() && self.snr_hi.is_finite() && self.snr_lo < self.snr_hi) {
            return bad(format!("need snr_lo < snr_hi, got {} and {}", self.snr_lo, self.snr_hi));
        }
        if !(self.resolution_db > 0.0) {
            return bad("resolution_db must be positive".into());
        }
        if self.blocks_per_batch < 2 || self.batches_per_wave == 0 {
            return bad("need at least two blocks per batch and one batch per wave".into());
        }
        Ok(())
    }

    /// Prefix actually transmitted: unequalised links send none.
    pub fn prefix_len(&self) -> usize {
        if self.fde {
            self.cp
        } else {
            0
        }
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.order.trailing_zeros() as usize
    }

    /// Net bit rate of this configuration.
    pub fn data_rate(&self) -> f64 {
        data_rate(self.order, self.n, self.prefix_len(), self.rs)
    }
}

/// `(n / (n + cp)) * rs * log2(order)` in bit/s.
pub fn data_rate(order: usize, n: usize, cp: usize, rs: f64) -> f64 {
    n as f64 * rs * (order as f64).log2() / (n + cp) as f64
}

/// Wilson score interval for `errors` successes in `trials`.
pub fn wilson_interval(errors: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if errors == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if errors == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    Normal::standard().sf(x)
}

/// Inverse of the Gaussian tail probability.
pub fn q_inverse(p: f64) -> f64 {
    -Normal::standard().inverse_cdf(p)
}

/// Average optical power OOK needs to reach `target_ber` with levels
/// {0, 2P}, unit responsivity, threshold at P and noise deviation `sigma`.
pub fn ook_reference(target_ber: f64, sigma: f64) -> Result<f64> {
    if !(target_ber > 0.0 && target_ber <= 0.5) {
        return Err(Error::InvalidTarget(target_ber));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be non-negative, got {sigma}")));
    }
    Ok((sigma * q_inverse(target_ber)).max(0.0))
}

/// Offset converting an absolute optical SNR into a requirement relative
/// to OOK at `target_ber`.
pub fn ook_offset_db(target_ber: f64) -> Result<f64> {
    Ok(10.0 * ook_reference(target_ber, 1.0)?.log10())
}

/// One Monte Carlo measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub ber: f64,
    pub bits: u64,
    pub errors: u64,
    /// Stopped before collecting the minimum number of errors.
    pub censored: bool,
}

impl BerPoint {
    pub fn interval(&self) -> (f64, f64) {
        wilson_interval(self.errors, self.bits, Z95)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerCurve {
    pub config: ExperimentConfig,
    pub points: Vec<BerPoint>,
}

impl BerCurve {
    /// No point is significantly worse than an earlier point at lower SNR.
    pub fn is_monotone(&self) -> bool {
        let mut sorted = self.points.clone();
        sorted.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        sorted.iter().enumerate().all(|(i, p)| {
            sorted[..i].iter().all(|q| p.interval().0 <= q.interval().1)
        })
    }
}

/// Everything needed to simulate one configuration, built once.
pub struct Link {
    cfg: ExperimentConfig,
    constellation: Constellation,
    channel: ChannelModel,
    cil: CilMatrix,
    equalizer: Option<EqualizerSpec>,
    p_avg: f64,
}

impl Link {
    pub fn new(cfg: &ExperimentConfig, hw: &Hardware) -> Result<Self> {
        cfg.validate()?;
        let constellation = hw.constellation(cfg.scheme, cfg.order)?;
        let channel =
            ChannelModel::discretize_impulse_response(cfg.dt, cfg.order, cfg.rs, cfg.channel_taps)?;
        let cil = hw.cil(cfg.scheme).clone();
        cil.inverse()?;
        let equalizer = if cfg.fde {
            Some(build_zfe(channel.taps(), cfg.n)?)
        } else {
            None
        };
        let mean = constellation.mean_intensity();
        let g = cil.matrix();
        let d = mean.len();
        let p_avg = (0..d)
            .map(|i| (0..d).map(|j| g[(i, j)] * mean[j]).sum::<f64>())
            .sum::<f64>()
            / d as f64;
        Ok(Self {
            cfg: cfg.clone(),
            constellation,
            channel,
            cil,
            equalizer,
            p_avg,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    /// Mean received amplitude per detector.
    pub fn average_received_power(&self) -> f64 {
        self.p_avg
    }

    /// Noise deviation giving the requested optical SNR (zero for +inf).
    pub fn sigma_for(&self, snr_db: f64) -> f64 {
        self.p_avg / 10f64.powf(snr_db / 10.0)
    }

    /// Simulates one independent stream of blocks. The first block only
    /// primes the channel memory and is not counted.
    pub fn run_batch(&self, sigma: f64, seed: u64) -> Result<(u64, u64)> {
        let c = &self.constellation;
        let k = c.bits_per_symbol();
        let d = c.dims();
        let n = self.cfg.n;
        let cp = self.cfg.prefix_len();
        let frame = n + cp;
        let blocks = self.cfg.blocks_per_batch;

        let mut bit_rng = SimRng::new(derive_seed(seed, 0));
        let mut labels = vec![0u32; blocks * n];
        let mut tx = SymbolStream::zeros(d, blocks * frame);
        for (b, block_labels) in labels.chunks_exact_mut(n).enumerate() {
            for (s, label) in block_labels.iter_mut().enumerate() {
                *label = bit_rng.bits(k);
                let idx = c.index_of_label(*label).expect("labels cover the alphabet");
                let point = c.intensity(idx);
                for (band, v) in tx.bands_mut().iter_mut().zip(point) {
                    band[b * frame + cp + s] = *v;
                }
            }
            for band in tx.bands_mut() {
                let start = b * frame;
                band.copy_within(start + n..start + n + cp, start);
            }
        }

        let noise = NoiseModel::new(sigma)?;
        let rx = apply_channel(&tx, &self.channel, &self.cil, &noise, derive_seed(seed, 1))?;
        let mut rx = calibrate(&rx, &self.cil)?.into_bands();

        let mut eq = self.equalizer.clone().map(BlockEqualizer::new).transpose()?;
        let mut sample = vec![0.0; d];
        let mut errors = 0u64;
        for b in 1..blocks {
            let payload = b * frame + cp..(b + 1) * frame;
            if let Some(eq) = eq.as_mut() {
                for band in rx.iter_mut() {
                    eq.apply(&mut band[payload.clone()])?;
                }
            }
            for (s, t) in payload.enumerate() {
                for (v, band) in sample.iter_mut().zip(&rx) {
                    *v = band[t];
                }
                let detected = c.label(crate::modem::ml_detect(&sample, c));
                errors += (detected ^ labels[b * n + s]).count_ones() as u64;
            }
        }
        let bits = ((blocks - 1) * n * k) as u64;
        Ok((bits, errors))
    }

    /// Accumulates batches in deterministic waves until `min_bit_errors`
    /// errors or `max_bits` bits. With `decide_against`, also stops as soon
    /// as the [`DECISION_Z`] interval excludes that BER.
    pub fn measure(&self, snr_db: f64, seed: u64, decide_against: Option<f64>) -> Result<BerPoint> {
        let sigma = self.sigma_for(snr_db);
        let wave = self.cfg.batches_per_wave as u64;
        let (mut bits, mut errors) = (0u64, 0u64);
        let mut next = 0u64;
        loop {
            let results: Vec<(u64, u64)> = (next..next + wave)
                .into_par_iter()
                .map(|i| self.run_batch(sigma, derive_seed(seed, i)))
                .collect::<Result<_>>()?;
            next += wave;
            for (b, e) in results {
                bits += b;
                errors += e;
            }
            if errors >= self.cfg.min_bit_errors || bits >= self.cfg.max_bits {
                break;
            }
            if let Some(target) = decide_against {
                let (lo, hi) = wilson_interval(errors, bits, DECISION_Z);
                if hi < target || lo > target {
                    break;
                }
            }
        }
        Ok(BerPoint {
            snr_db,
            ber: errors as f64 / bits as f64,
            bits,
            errors,
            censored: errors < self.cfg.min_bit_errors,
        })
    }
}

/// BER at one optical SNR, seeded by `cfg.seed`.
pub fn run_ber_point(cfg: &ExperimentConfig, hw: &Hardware, snr_db: f64) -> Result<BerPoint> {
    Link::new(cfg, hw)?.measure(snr_db, cfg.seed, None)
}

/// BER over `cfg.snr_grid`; point `i` is seeded from `(cfg.seed, i)`.
pub fn ber_curve(cfg: &ExperimentConfig, hw: &Hardware) -> Result<BerCurve> {
    let link = Link::new(cfg, hw)?;
    let points = cfg
        .snr_grid
        .iter()
        .enumerate()
        .map(|(i, &snr)| link.measure(snr, derive_seed(cfg.seed, i as u64), None))
        .collect::<Result<Vec<_>>>()?;
    Ok(BerCurve {
        config: cfg.clone(),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRequirement {
    pub scheme: Scheme,
    pub order: usize,
    pub dt: f64,
    pub fde: bool,
    pub target_ber: f64,
    /// Absolute optical SNR at the requirement; `None` when unachievable.
    pub snr_o_db: Option<f64>,
    /// Requirement relative to OOK; `None` when unachievable.
    pub normalized_db: Option<f64>,
    pub bracket_width_db: f64,
    /// Every measurement taken, in order.
    pub evaluations: Vec<BerPoint>,
}

impl PowerRequirement {
    pub fn is_achievable(&self) -> bool {
        self.normalized_db.is_some()
    }
}

/// Bisects the optical SNR meeting `target_ber` within `[snr_lo, snr_hi]`.
///
/// A BER above target at `snr_hi` means the link has an error floor and the
/// requirement is unachievable. If the target is already met at `snr_lo`, the
/// lower end is pushed down in steps of the bracket width.
pub fn find_power_requirement(
    cfg: &ExperimentConfig,
    hw: &Hardware,
    target_ber: f64,
    snr_lo: f64,
    snr_hi: f64,
) -> Result<PowerRequirement> {
    if !(target_ber > 0.0 && target_ber < 0.5) {
        return Err(Error::InvalidTarget(target_ber));
    }
    if !(snr_lo < snr_hi) {
        return Err(Error::InvalidParameter(format!("need snr_lo < snr_hi, got {snr_lo} and {snr_hi}")));
    }
    let link = Link::new(cfg, hw)?;
    let mut evaluations = Vec::new();
    let mut step = 0u64;
    let mut meets = |snr: f64, evaluations: &mut Vec<BerPoint>| -> Result<bool> {
        let p = link.measure(snr, derive_seed(cfg.seed, step), Some(target_ber))?;
        step += 1;
        evaluations.push(p);
        Ok(p.ber <= target_ber)
    };
    let mut result = PowerRequirement {
        scheme: cfg.scheme,
        order: cfg.order,
        dt: cfg.dt,
        fde: cfg.fde,
        target_ber,
        snr_o_db: None,
        normalized_db: None,
        bracket_width_db: snr_hi - snr_lo,
        evaluations: Vec::new(),
    };
    if !meets(snr_hi, &mut evaluations)? {
        result.evaluations = evaluations;
        return Ok(result);
    }
    let (mut lo, mut hi) = (snr_lo, snr_hi);
    let width = snr_hi - snr_lo;
    let mut pushes = 0;
    while meets(lo, &mut evaluations)? {
        hi = lo;
        lo -= width;
        pushes += 1;
        if pushes > 4 {
            return Err(Error::InvalidParameter(format!(
                "target BER already met at {lo} dB; lower snr_lo"
            )));
        }
    }
    while hi - lo > cfg.resolution_db {
        let mid = 0.5 * (lo + hi);
        if meets(mid, &mut evaluations)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let snr = 0.5 * (lo + hi);
    result.snr_o_db = Some(snr);
    result.normalized_db = Some(snr - ook_offset_db(target_ber)?);
    result.bracket_width_db = hi - lo;
    result.evaluations = evaluations;
    Ok(result)
}

/// One requirement per delay spread, using the template's target and bracket.
/// Entry `i` is seeded from `(template.seed, i)`.
pub fn sweep_dt(template: &ExperimentConfig, hw: &Hardware, dts: &[f64], target_ber: f64) -> Result<Vec<PowerRequirement>> {
    dts.iter()
        .enumerate()
        .map(|(i, &dt)| {
            let cfg = ExperimentConfig {
                dt,
                seed: derive_seed(template.seed, i as u64),
                ..template.clone()
            };
            find_power_requirement(&cfg, hw, target_ber, cfg.snr_lo, cfg.snr_hi)
        })
        .collect()
}

#[derive(Serialize)]
struct CurveRow {
    scheme: Scheme,
    #[serde(rename = "M")]
    order: usize,
    #[serde(rename = "Dt")]
    dt: f64,
    fde: bool,
    snr_db: f64,
    ber: f64,
    bits: u64,
    errors: u64,
}

/// One CSV row per measurement:
/// `scheme,M,Dt,fde,snr_db,ber,bits,errors`.
pub fn write_curves_csv<W: Write>(curves: &[BerCurve], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for curve in curves {
        let c = &curve.config;
        for p in &curve.points {
            w.serialize(CurveRow {
                scheme: c.scheme,
                order: c.order,
                dt: c.dt,
                fde: c.fde,
                snr_db: p.snr_db,
                ber: p.ber,
                bits: p.bits,
                errors: p.errors,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RequirementRow {
    scheme: Scheme,
    #[serde(rename = "M")]
    order: usize,
    #[serde(rename = "Dt")]
    dt: f64,
    fde: bool,
    target_ber: f64,
    requirement_db: String,
    snr_o_db: String,
    bracket_db: f64,
}

fn fmt_db(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".to_string(), |v| format!("{v:.2}"))
}

/// One CSV row per requirement; unachievable entries read `inf`.
pub fn write_requirements_csv<W: Write>(reqs: &[PowerRequirement], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reqs {
        w.serialize(RequirementRow {
            scheme: r.scheme,
            order: r.order,
            dt: r.dt,
            fde: r.fde,
            target_ber: r.target_ber,
            requirement_db: fmt_db(r.normalized_db),
            snr_o_db: fmt_db(r.snr_o_db),
            bracket_db: r.bracket_width_db,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Table layout: one row per (scheme, order, equaliser), one column per
/// delay spread, `null` for unachievable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub target_ber: f64,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scheme: Scheme,
    #[serde(rename = "M")]
    pub order: usize,
    pub fde: bool,
    pub data_rate_mbps: f64,
    /// Keyed by the delay spread printed as text.
    pub requirement_db: BTreeMap<String, Option<f64>>,
}

pub fn summarize(reqs: &[PowerRequirement], n: usize, cp: usize, rs: f64) -> TableSummary {
    let mut rows: Vec<TableRow> = Vec::new();
    for r in reqs {
        let row = match rows
            .iter_mut()
            .position(|row| row.scheme == r.scheme && row.order == r.order && row.fde == r.fde)
        {
            Some(i) => &mut rows[i],
            None => {
                rows.push(TableRow {
                    scheme: r.scheme,
                    order: r.order,
                    fde: r.fde,
                    data_rate_mbps: data_rate(r.order, n, if r.fde { cp } else { 0 }, rs) / 1e6,
                    requirement_db: BTreeMap::new(),
                });
                rows.last_mut().unwrap()
            }
        };
        row.requirement_db
            .insert(r.dt.to_string(), r.normalized_db.map(|v| (v * 100.0).round() / 100.0));
    }
    TableSummary {
        target_ber: reqs.first().map_or(1e-6, |r| r.target_ber),
        rows,
    }
}
