//! TOML configuration: LED sources, TLED layout tables, cross-talk matrices
//! and experiment settings.
//!
//! ```toml
//! [experiment]
//! scheme = "qled"
//! order = 16
//! dt = 0.5
//! fde = true
//!
//! [sources]
//! qled = [
//!   { name = "B", x = 0.169, y = 0.007 },
//!   { name = "C", x = 0.011, y = 0.733 },
//!   { name = "Y", x = 0.402, y = 0.597 },
//!   { name = "R", x = 0.734, y = 0.265 },
//! ]
//!
//! [cil]
//! tled = [[0.271, 0.030, 0.0], [0.0, 0.255, 0.0], [0.0, 0.0, 0.200]]
//!
//! [tled_layouts]
//! 4 = [
//!   { label = 0b00, weights = [1.0, 0.0, 0.0] },
//!   { label = 0b01, weights = [0.0, 1.0, 0.0] },
//!   { label = 0b10, weights = [0.0, 0.0, 1.0] },
//!   { label = 0b11, weights = [0.3333333333333333, 0.3333333333333333, 0.3333333333333333] },
//! ]
//! ```
//!
//! Every section and key is optional; missing values keep their defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::channel::CilMatrix;
use crate::colorimetry::{
    build_constellation, Constellation, Scheme, Source, SourceSet, TledLayouts, TledPoint,
};
use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;

/// Transmitter and receiver front-end description shared by all runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Hardware {
    pub tled_sources: SourceSet,
    pub qled_sources: SourceSet,
    pub layouts: TledLayouts,
    pub tled_cil: CilMatrix,
    pub qled_cil: CilMatrix,
}

impl Default for Hardware {
    fn default() -> Self {
        Self {
            tled_sources: SourceSet::default_tled(),
            qled_sources: SourceSet::default_qled(),
            layouts: TledLayouts::default(),
            tled_cil: CilMatrix::tled_default(),
            qled_cil: CilMatrix::qled_default(),
        }
    }
}

impl Hardware {
    pub fn sources(&self, scheme: Scheme) -> &SourceSet {
        match scheme {
            Scheme::Tled => &self.tled_sources,
            Scheme::Qled => &self.qled_sources,
        }
    }

    pub fn cil(&self, scheme: Scheme) -> &CilMatrix {
        match scheme {
            Scheme::Tled => &self.tled_cil,
            Scheme::Qled => &self.qled_cil,
        }
    }

    pub fn constellation(&self, scheme: Scheme, order: usize) -> Result<Constellation> {
        build_constellation(scheme, order, self.sources(scheme), &self.layouts)
    }
}

/// Experiment settings as they appear in a file: every field optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPatch {
    pub scheme: Option<Scheme>,
    pub order: Option<usize>,
    pub dt: Option<f64>,
    pub fde: Option<bool>,
    pub n: Option<usize>,
    pub cp: Option<usize>,
    pub rs: Option<f64>,
    pub channel_taps: Option<usize>,
    pub target_ber: Option<f64>,
    pub min_bit_errors: Option<u64>,
    pub max_bits: Option<u64>,
    pub seed: Option<u64>,
    pub snr_grid: Option<Vec<f64>>,
    pub snr_lo: Option<f64>,
    pub snr_hi: Option<f64>,
    pub resolution_db: Option<f64>,
    pub blocks_per_batch: Option<usize>,
    pub batches_per_wave: Option<usize>,
}

impl ExperimentPatch {
    /// Overwrites the fields of `cfg` that are set in the patch.
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        set!(
            scheme, order, dt, fde, n, cp, rs, channel_taps, target_ber, min_bit_errors, max_bits,
            seed, snr_grid, snr_lo, snr_hi, resolution_db, blocks_per_batch, batches_per_wave
        );
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourcesSection {
    tled: Option<Vec<Source>>,
    qled: Option<Vec<Source>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct CilSection {
    tled: Option<Vec<Vec<f64>>>,
    qled: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub experiment: ExperimentPatch,
    #[serde(default)]
    sources: SourcesSection,
    #[serde(default)]
    cil: CilSection,
    #[serde(default)]
    tled_layouts: BTreeMap<String, Vec<TledPoint>>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Default hardware with the file's overrides applied and validated.
    pub fn hardware(&self) -> Result<Hardware> {
        let mut hw = Hardware::default();
        if let Some(s) = &self.sources.tled {
            hw.tled_sources = SourceSet::tled(s.clone())?;
        }
        if let Some(s) = &self.sources.qled {
            hw.qled_sources = SourceSet::qled(s.clone())?;
        }
        if let Some(rows) = &self.cil.tled {
            hw.tled_cil = checked_cil(rows, 3)?;
        }
        if let Some(rows) = &self.cil.qled {
            hw.qled_cil = checked_cil(rows, 4)?;
        }
        for (key, table) in &self.tled_layouts {
            let order: usize = key
                .parse()
                .map_err(|_| Error::Config(format!("layout key {key:?} is not an order")))?;
            Scheme::Tled.check_order(order)?;
            hw.layouts.insert(order, table.clone());
        }
        Ok(hw)
    }
}

fn checked_cil(rows: &[Vec<f64>], size: usize) -> Result<CilMatrix> {
    if rows.len() != size {
        return Err(Error::DimensionMismatch {
            expected: size,
            actual: rows.len(),
        });
    }
    let m = CilMatrix::new(rows.to_vec())?;
    m.inverse()?;
    Ok(m)
}
