//! Bit mapping, cyclic-prefix framing and hard-decision detection.

use crate::colorimetry::{Constellation, IntensityVector};
use crate::error::{Error, Result};

/// Per-band real-valued sample sequences of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    bands: Vec<Vec<f64>>,
}

impl SymbolStream {
    pub fn new(bands: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = bands.first() {
            if let Some(bad) = bands.iter().find(|b| b.len() != first.len()) {
                return Err(Error::LengthMismatch {
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        Ok(Self { bands })
    }

    pub fn zeros(n_bands: usize, len: usize) -> Self {
        Self {
            bands: vec![vec![0.0; len]; n_bands],
        }
    }

    /// Band-major stream from a sequence of symbol intensity vectors.
    pub fn from_symbols(symbols: &[IntensityVector]) -> Result<Self> {
        let dims = symbols.first().map_or(0, IntensityVector::dims);
        let mut bands = vec![Vec::with_capacity(symbols.len()); dims];
        for s in symbols {
            if s.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: s.dims(),
                });
            }
            for (band, v) in bands.iter_mut().zip(s.as_slice()) {
                band.push(*v);
            }
        }
        Ok(Self { bands })
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn len(&self) -> usize {
        self.bands.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bands(&self) -> &[Vec<f64>] {
        &self.bands
    }

    pub fn band(&self, i: usize) -> &[f64] {
        &self.bands[i]
    }

    pub fn bands_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.bands
    }

    /// The across-band vector at time index `t`.
    pub fn sample(&self, t: usize) -> Vec<f64> {
        self.bands.iter().map(|b| b[t]).collect()
    }

    pub fn into_bands(self) -> Vec<Vec<f64>> {
        self.bands
    }
}

/// A block of N payload samples per band with its L-sample cyclic prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct FramedBlock {
    payload: Vec<Vec<f64>>,
    cp: usize,
}

impl FramedBlock {
    pub fn payload_len(&self) -> usize {
        self.payload.first().map_or(0, Vec::len)
    }

    pub fn prefix_len(&self) -> usize {
        self.cp
    }

    /// N + L, the transmitted length of each band.
    pub fn framed_len(&self) -> usize {
        self.payload_len() + self.cp
    }

    pub fn payload(&self, band: usize) -> &[f64] {
        &self.payload[band]
    }

    pub fn prefix(&self, band: usize) -> &[f64] {
        let n = self.payload_len();
        &self.payload[band][n - self.cp..]
    }

    /// `[x_{N-L}, ..., x_{N-1}, x_0, ..., x_{N-1}]` for one band.
    pub fn framed(&self, band: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.framed_len());
        out.extend_from_slice(self.prefix(band));
        out.extend_from_slice(&self.payload[band]);
        out
    }

    pub fn to_stream(&self) -> SymbolStream {
        SymbolStream {
            bands: (0..self.payload.len()).map(|b| self.framed(b)).collect(),
        }
    }
}

pub fn add_cyclic_prefix(payload: Vec<Vec<f64>>, cp: usize) -> Result<FramedBlock> {
    let n = payload.first().map_or(0, Vec::len);
    if let Some(bad) = payload.iter().find(|b| b.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: bad.len(),
        });
    }
    if cp > n {
        return Err(Error::InvalidPrefix { cp, n });
    }
    Ok(FramedBlock { payload, cp })
}

/// Drops the first `cp` samples of each band of an (N + L)-sample block.
pub fn remove_cyclic_prefix(framed: &[Vec<f64>], n: usize, cp: usize) -> Result<Vec<Vec<f64>>> {
    framed
        .iter()
        .map(|band| {
            if band.len() != n + cp {
                Err(Error::LengthMismatch {
                    expected: n + cp,
                    actual: band.len(),
                })
            } else {
                Ok(band[cp..].to_vec())
            }
        })
        .collect()
}

/// Groups bits (MSB first) into `k`-bit labels.
pub fn bits_to_labels(bits: &[bool], k: usize) -> Result<Vec<u32>> {
    if k == 0 || !bits.len().is_multiple_of(k) {
        return Err(Error::LengthMismatch {
            expected: bits.len().next_multiple_of(k.max(1)),
            actual: bits.len(),
        });
    }
    Ok(bits
        .chunks_exact(k)
        .map(|c| c.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32))
        .collect())
}

pub fn labels_to_bits(labels: &[u32], k: usize) -> Vec<bool> {
    labels
        .iter()
        .flat_map(|&l| (0..k).rev().map(move |i| (l >> i) & 1 == 1))
        .collect()
}

/// Maps bits to constellation point indices.
pub fn modulate_indices(bits: &[bool], constellation: &Constellation) -> Result<Vec<usize>> {
    let labels = bits_to_labels(bits, constellation.bits_per_symbol())?;
    Ok(labels
        .into_iter()
        .map(|l| constellation.index_of_label(l).expect("labels cover 0..M"))
        .collect())
}

/// Maps bits to the intensity vectors of their symbols.
pub fn modulate(bits: &[bool], constellation: &Constellation) -> Result<Vec<IntensityVector>> {
    Ok(modulate_indices(bits, constellation)?
        .into_iter()
        .map(|i| constellation.points()[i].intensity.clone())
        .collect())
}

/// Pads a symbol sequence to whole blocks of `n` with the all-zeros label.
/// Returns the number of padding symbols appended.
pub fn pad_to_blocks(indices: &mut Vec<usize>, n: usize, constellation: &Constellation) -> usize {
    let pad = indices.len().next_multiple_of(n) - indices.len();
    let zero = constellation.index_of_label(0).expect("label 0 exists");
    indices.extend(std::iter::repeat_n(zero, pad));
    pad
}

/// Minimum-Euclidean-distance decision in intensity space.
///
/// Ties go to the lowest index.
pub fn ml_detect(received: &[f64], constellation: &Constellation) -> usize {
    let d = constellation.dims();
    assert_eq!(received.len(), d, "received vector has wrong dimension");
    nearest_point(received, constellation.flat(), d)
}

/// Index of the point nearest to `received` among `points`, stored
/// contiguously `dims` values per point. Ties go to the lowest index.
pub fn nearest_point(received: &[f64], points: &[f64], dims: usize) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, point) in points.chunks_exact(dims).enumerate() {
        let mut dist = 0.0;
        for (r, p) in received.iter().zip(point) {
            let e = r - p;
            dist += e * e;
        }
        if dist < best_dist {
            best_dist = dist;
            best = i;
        }
    }
    best
}

/// Concatenates the bit labels of detected points.
pub fn demap(indices: &[usize], constellation: &Constellation) -> Result<Vec<bool>> {
    let order = constellation.order();
    let labels = indices
        .iter()
        .map(|&i| {
            if i < order {
                Ok(constellation.label(i))
            } else {
                Err(Error::IndexOutOfRange { index: i, order })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(labels_to_bits(&labels, constellation.bits_per_symbol()))
}
