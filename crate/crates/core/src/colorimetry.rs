//! Constellation geometry on the CIE 1931 chromaticity plane.
//!
//! A CSK symbol is a chromaticity produced by mixing up to three LED
//! primaries at constant total optical power. For a triad of primaries the
//! mixing intensities follow from the 3x3 linear system
//!
//! ```text
//! [x]   [x_i x_j x_k] [I_i]
//! [y] = [y_i y_j y_k] [I_j]
//! [1]   [ 1   1   1 ] [I_k]
//! ```
//!
//! TLED constellations are laid out from barycentric tables over the source
//! triangle. QLED constellations place a Gray-labelled grid on the source
//! quadrilateral B, C, Y, R; every point is mixed from the triad owning the
//! sub-quadrilateral it falls in.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Determinant magnitude below which a triad counts as collinear.
pub const SINGULAR_DET: f64 = 1e-12;
/// Solved intensities more negative than this are a genuine gamut violation.
pub const GAMUT_TOL: f64 = 1e-9;
/// Intensities smaller than this are treated as round-off and set to zero.
pub const ZERO_SNAP: f64 = 1e-12;
/// Orientation slack used for point-in-polygon tests.
const GEOM_EPS: f64 = 1e-12;

/// A CIE 1931 (x, y) chromaticity coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chromaticity {
    pub x: f64,
    pub y: f64,
}

impl Chromaticity {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        let ok = x.is_finite()
            && y.is_finite()
            && (-GEOM_EPS..=1.0 + GEOM_EPS).contains(&x)
            && (-GEOM_EPS..=1.0 + GEOM_EPS).contains(&y)
            && x + y <= 1.0 + GEOM_EPS;
        if ok {
            Ok(Self { x, y })
        } else {
            Err(Error::InvalidChromaticity { x, y })
        }
    }

    fn lerp(self, other: Self, t: f64) -> Self {
        Self {
            x: self.x + (other.x - self.x) * t,
            y: self.y + (other.y - self.y) * t,
        }
    }

    fn midpoint(self, other: Self) -> Self {
        self.lerp(other, 0.5)
    }
}

fn cross(o: Chromaticity, a: Chromaticity, b: Chromaticity) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn in_triangle(p: Chromaticity, a: Chromaticity, b: Chromaticity, c: Chromaticity) -> bool {
    let d1 = cross(a, b, p);
    let d2 = cross(b, c, p);
    let d3 = cross(c, a, p);
    let has_neg = d1 < -GEOM_EPS || d2 < -GEOM_EPS || d3 < -GEOM_EPS;
    let has_pos = d1 > GEOM_EPS || d2 > GEOM_EPS || d3 > GEOM_EPS;
    !(has_neg && has_pos)
}

fn in_convex_polygon(p: Chromaticity, poly: &[Chromaticity]) -> bool {
    let n = poly.len();
    let mut has_neg = false;
    let mut has_pos = false;
    for i in 0..n {
        let c = cross(poly[i], poly[(i + 1) % n], p);
        has_neg |= c < -GEOM_EPS;
        has_pos |= c > GEOM_EPS;
    }
    !(has_neg && has_pos)
}

/// CSK flavour: three primaries (IEEE 802.15.7 style) or four.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Tled,
    Qled,
}

impl Scheme {
    /// Number of LED colour bands (and receive detectors).
    pub fn bands(self) -> usize {
        match self {
            Scheme::Tled => 3,
            Scheme::Qled => 4,
        }
    }

    pub fn supported_orders(self) -> &'static [usize] {
        match self {
            Scheme::Tled => &[4, 8, 16],
            Scheme::Qled => &[4, 8, 16, 64, 256, 1024, 4096],
        }
    }

    pub fn check_order(self, order: usize) -> Result<()> {
        if self.supported_orders().contains(&order) {
            Ok(())
        } else {
            Err(Error::UnsupportedOrder {
                scheme: self.to_string(),
                order,
            })
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Tled => "tled",
            Scheme::Qled => "qled",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tled" => Ok(Scheme::Tled),
            "qled" => Ok(Scheme::Qled),
            other => Err(Error::InvalidParameter(format!("unknown scheme '{other}'"))),
        }
    }
}

/// One LED primary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub name: String,
    #[serde(flatten)]
    pub chromaticity: Chromaticity,
}

impl Source {
    pub fn new(name: &str, x: f64, y: f64) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            chromaticity: Chromaticity::new(x, y)?,
        })
    }
}

/// Ordered LED primaries: (i, j, k) for TLED, (B, C, Y, R) for QLED.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    scheme: Scheme,
    sources: Vec<Source>,
}

impl SourceSet {
    pub fn tled(sources: Vec<Source>) -> Result<Self> {
        if sources.len() != 3 {
            return Err(Error::InvalidSources(format!(
                "TLED needs 3 sources, got {}",
                sources.len()
            )));
        }
        let c: Vec<_> = sources.iter().map(|s| s.chromaticity).collect();
        let det = triad_matrix(&[c[0], c[1], c[2]]).determinant();
        if det.abs() < SINGULAR_DET {
            return Err(Error::SingularTriad { det });
        }
        Ok(Self {
            scheme: Scheme::Tled,
            sources,
        })
    }

    pub fn qled(sources: Vec<Source>) -> Result<Self> {
        if sources.len() != 4 {
            return Err(Error::InvalidSources(format!(
                "QLED needs 4 sources, got {}",
                sources.len()
            )));
        }
        let c: Vec<_> = sources.iter().map(|s| s.chromaticity).collect();
        let turns: Vec<f64> = (0..4)
            .map(|i| cross(c[i], c[(i + 1) % 4], c[(i + 2) % 4]))
            .collect();
        let convex = turns.iter().all(|&t| t > SINGULAR_DET) || turns.iter().all(|&t| t < -SINGULAR_DET);
        if !convex {
            return Err(Error::InvalidSources(
                "QLED sources must form a convex quadrilateral in B, C, Y, R order".into(),
            ));
        }
        Ok(Self {
            scheme: Scheme::Qled,
            sources,
        })
    }

    /// The IEEE 802.15.7 band-centre triad for band combination 110/010/000.
    pub fn default_tled() -> Self {
        Self::tled(vec![
            Source::new("i", 0.734, 0.265).unwrap(),
            Source::new("j", 0.402, 0.597).unwrap(),
            Source::new("k", 0.169, 0.007).unwrap(),
        ])
        .unwrap()
    }

    /// Blue, cyan, yellow and red band centres of IEEE 802.15.7.
    pub fn default_qled() -> Self {
        Self::qled(vec![
            Source::new("B", 0.169, 0.007).unwrap(),
            Source::new("C", 0.011, 0.733).unwrap(),
            Source::new("Y", 0.402, 0.597).unwrap(),
            Source::new("R", 0.734, 0.265).unwrap(),
        ])
        .unwrap()
    }

    pub fn default_for(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Tled => Self::default_tled(),
            Scheme::Qled => Self::default_qled(),
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn chromaticity(&self, i: usize) -> Chromaticity {
        self.sources[i].chromaticity
    }
}

/// Per-LED optical intensity fractions of one symbol; sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityVector(Vec<f64>);

impl IntensityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        let in_range = values.iter().all(|v| (0.0..=1.0).contains(v));
        if values.is_empty() || !in_range || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConstellation(format!(
                "intensities {values:?} are not a unit-power mixture"
            )));
        }
        Ok(Self(values))
    }

    /// Places a triad solution into a vector of `dims` bands.
    pub fn from_triad(indices: [usize; 3], triad: &IntensityVector, dims: usize) -> Self {
        let mut v = vec![0.0; dims];
        for (slot, &idx) in indices.iter().enumerate() {
            v[idx] = triad.0[slot];
        }
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn non_zero(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn triad_matrix(triad: &[Chromaticity; 3]) -> Matrix3<f64> {
    Matrix3::new(
        triad[0].x, triad[1].x, triad[2].x, //
        triad[0].y, triad[1].y, triad[2].y, //
        1.0, 1.0, 1.0,
    )
}

/// Solves for the three LED intensities that reproduce `target`.
///
/// Solutions within [`GAMUT_TOL`] below zero are clamped, round-off residue
/// below [`ZERO_SNAP`] is zeroed, and the vector is renormalised to unit power.
pub fn intensity_from_chromaticity(
    target: Chromaticity,
    triad: &[Chromaticity; 3],
) -> Result<IntensityVector> {
    let a = triad_matrix(triad);
    let det = a.determinant();
    if det.abs() < SINGULAR_DET {
        return Err(Error::SingularTriad { det });
    }
    let rhs = Vector3::new(target.x, target.y, 1.0);
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularTriad { det })?;
    if sol.iter().any(|&v| v < -GAMUT_TOL) {
        return Err(Error::OutsideGamut {
            x: target.x,
            y: target.y,
        });
    }
    let mut v: Vec<f64> = sol
        .iter()
        .map(|&v| if v < ZERO_SNAP { 0.0 } else { v })
        .collect();
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|e| *e /= sum);
    Ok(IntensityVector(v))
}

/// The four QLED operating regions around the quadrilateral centre `o`.
///
/// With corners B, C, Y, R, edge midpoints p (BC), q (CY), r (YR), s (RB) and
/// diagonal intersection o, each region is the corner patch mixed by the
/// triad of that corner and its two neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubQuad {
    /// p, C, q, o; mixed by B, C, Y.
    Pbqo = 0,
    /// o, q, Y, r; mixed by C, Y, R.
    Oqcr = 1,
    /// s, o, r, R; mixed by Y, R, B.
    Sord = 2,
    /// B, p, o, s; mixed by R, B, C.
    Apos = 3,
}

impl SubQuad {
    pub const ALL: [SubQuad; 4] = [SubQuad::Pbqo, SubQuad::Oqcr, SubQuad::Sord, SubQuad::Apos];

    /// Source indices (into B, C, Y, R) of the mixing triad.
    pub fn triad(self) -> [usize; 3] {
        match self {
            SubQuad::Pbqo => [0, 1, 2],
            SubQuad::Oqcr => [1, 2, 3],
            SubQuad::Sord => [2, 3, 0],
            SubQuad::Apos => [3, 0, 1],
        }
    }

    /// Index of the quadrilateral corner this region surrounds.
    fn corner(self) -> usize {
        match self {
            SubQuad::Pbqo => 1,
            SubQuad::Oqcr => 2,
            SubQuad::Sord => 3,
            SubQuad::Apos => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriadSelection {
    pub indices: [usize; 3],
    pub region: SubQuad,
}

/// Intersection of the diagonals B-Y and C-R.
pub fn quad_centre(sources: &SourceSet) -> Chromaticity {
    let (b, c, y, r) = (
        sources.chromaticity(0),
        sources.chromaticity(1),
        sources.chromaticity(2),
        sources.chromaticity(3),
    );
    let d1 = (y.x - b.x, y.y - b.y);
    let d2 = (r.x - c.x, r.y - c.y);
    let denom = d1.0 * d2.1 - d1.1 * d2.0;
    let t = ((c.x - b.x) * d2.1 - (c.y - b.y) * d2.0) / denom;
    b.lerp(y, t)
}

fn region_polygon(region: SubQuad, corners: &[Chromaticity; 4], o: Chromaticity) -> [Chromaticity; 4] {
    let k = region.corner();
    let prev = corners[(k + 3) % 4];
    let next = corners[(k + 1) % 4];
    [
        prev.midpoint(corners[k]),
        corners[k],
        corners[k].midpoint(next),
        o,
    ]
}

/// Picks the LED triad that mixes `target` in a QLED system.
///
/// Points on shared boundaries go to the lowest region id in the order
/// pbqo, oqcr, sord, apos.
pub fn select_qled_triad(target: Chromaticity, sources: &SourceSet) -> Result<TriadSelection> {
    if sources.scheme() != Scheme::Qled {
        return Err(Error::InvalidSources("triad selection needs a QLED source set".into()));
    }
    let corners = [
        sources.chromaticity(0),
        sources.chromaticity(1),
        sources.chromaticity(2),
        sources.chromaticity(3),
    ];
    if !in_convex_polygon(target, &corners) {
        return Err(Error::OutsideGamut {
            x: target.x,
            y: target.y,
        });
    }
    let o = quad_centre(sources);
    for region in SubQuad::ALL {
        let [a, corner, b, centre] = region_polygon(region, &corners, o);
        // Only the centre vertex can be reflex, so the corner-centre diagonal
        // always splits the patch into two triangles.
        if in_triangle(target, a, corner, centre) || in_triangle(target, corner, b, centre) {
            return Ok(TriadSelection {
                indices: region.triad(),
                region,
            });
        }
    }
    Err(Error::OutsideGamut {
        x: target.x,
        y: target.y,
    })
}

/// Converts a QLED chromaticity to a 4-band intensity vector.
pub fn qled_intensity(target: Chromaticity, sources: &SourceSet) -> Result<IntensityVector> {
    let sel = select_qled_triad(target, sources)?;
    let triad = sel.indices.map(|i| sources.chromaticity(i));
    let sol = intensity_from_chromaticity(target, &triad)?;
    Ok(IntensityVector::from_triad(sel.indices, &sol, 4))
}

/// One row of a TLED layout table: a bit label and barycentric weights over
/// the source triad (i, j, k).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TledPoint {
    pub label: u32,
    pub weights: [f64; 3],
}

/// Barycentric TLED symbol tables keyed by constellation order.
#[derive(Debug, Clone, PartialEq)]
pub struct TledLayouts {
    tables: BTreeMap<usize, Vec<TledPoint>>,
}

impl TledLayouts {
    pub fn new(tables: BTreeMap<usize, Vec<TledPoint>>) -> Self {
        Self { tables }
    }

    pub fn get(&self, order: usize) -> Option<&[TledPoint]> {
        self.tables.get(&order).map(Vec::as_slice)
    }

    pub fn insert(&mut self, order: usize, table: Vec<TledPoint>) {
        self.tables.insert(order, table);
    }

    pub fn tables(&self) -> &BTreeMap<usize, Vec<TledPoint>> {
        &self.tables
    }
}

impl Default for TledLayouts {
    /// Triangular layouts with the geometry of the standard's 4/8/16-CSK sets.
    ///
    /// 4-CSK is exact (vertices and centroid). The 8- and 16-point tables are
    /// stand-ins: 8-CSK is the max-min-distance packing of eight points in the
    /// triangle, 16-CSK is the one-third lattice plus the centroids of its six
    /// upright sub-triangles. Labels were picked to minimise the union-bound
    /// BER under the default cross-talk matrix.
    fn default() -> Self {
        let t = 1.0 / 3.0;
        let n = 1.0 / 9.0;
        let p = |label: u32, weights: [f64; 3]| TledPoint { label, weights };
        let mut tables = BTreeMap::new();
        tables.insert(
            4,
            vec![
                p(0b00, [1.0, 0.0, 0.0]),
                p(0b01, [0.0, 1.0, 0.0]),
                p(0b10, [0.0, 0.0, 1.0]),
                p(0b11, [t, t, t]),
            ],
        );
        tables.insert(
            8,
            vec![
                p(0b000, [1.0, 0.0, 0.0]),
                p(0b010, [0.0, 1.0, 0.0]),
                p(0b011, [0.0, 0.0, 1.0]),
                p(0b101, [0.5, 0.0, 0.5]),
                p(0b100, [0.3431, 0.6569, 0.0]),
                p(0b110, [0.0, 0.6569, 0.3431]),
                p(0b001, [0.6144, 0.2712, 0.1144]),
                p(0b111, [0.1144, 0.2712, 0.6144]),
            ],
        );
        tables.insert(
            16,
            vec![
                p(0b0000, [t, t, t]),
                p(0b1010, [0.0, 0.0, 1.0]),
                p(0b1001, [0.0, t, 2.0 * t]),
                p(0b0011, [0.0, 2.0 * t, t]),
                p(0b0010, [0.0, 1.0, 0.0]),
                p(0b1111, [t, 0.0, 2.0 * t]),
                p(0b0110, [t, 2.0 * t, 0.0]),
                p(0b0100, [2.0 * t, 0.0, t]),
                p(0b1100, [2.0 * t, t, 0.0]),
                p(0b1101, [1.0, 0.0, 0.0]),
                p(0b1110, [7.0 * n, n, n]),
                p(0b0001, [n, 7.0 * n, n]),
                p(0b1000, [n, n, 7.0 * n]),
                p(0b0101, [4.0 * n, 4.0 * n, n]),
                p(0b0111, [4.0 * n, n, 4.0 * n]),
                p(0b1011, [n, 4.0 * n, 4.0 * n]),
            ],
        );
        Self { tables }
    }
}

/// A constellation point: bit label, colour and mixing intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationPoint {
    pub label: u32,
    pub chromaticity: Chromaticity,
    pub intensity: IntensityVector,
}

/// A labelled CSK symbol alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    scheme: Scheme,
    bits_per_symbol: usize,
    points: Vec<ConstellationPoint>,
    label_to_index: Vec<usize>,
    /// Intensities flattened point-major for the detector's inner loop.
    flat: Vec<f64>,
}

impl Constellation {
    pub fn new(scheme: Scheme, points: Vec<ConstellationPoint>) -> Result<Self> {
        let order = points.len();
        if !order.is_power_of_two() || order < 2 {
            return Err(Error::InvalidConstellation(format!(
                "{order} points is not a power of two"
            )));
        }
        let bits_per_symbol = order.trailing_zeros() as usize;
        let dims = scheme.bands();
        let mut label_to_index = vec![usize::MAX; order];
        for (i, p) in points.iter().enumerate() {
            let label = p.label as usize;
            if label >= order {
                return Err(Error::InvalidConstellation(format!(
                    "label {label} does not fit in {bits_per_symbol} bits"
                )));
            }
            if label_to_index[label] != usize::MAX {
                return Err(Error::InvalidConstellation(format!("duplicate label {label}")));
            }
            if p.intensity.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: p.intensity.dims(),
                });
            }
            if scheme == Scheme::Qled && p.intensity.non_zero() > 3 {
                return Err(Error::InvalidConstellation(format!(
                    "QLED point {label} drives more than three LEDs"
                )));
            }
            label_to_index[label] = i;
        }
        let flat: Vec<f64> = points
            .iter()
            .flat_map(|p| p.intensity.as_slice().iter().copied())
            .collect();
        let c = Self {
            scheme,
            bits_per_symbol,
            points,
            label_to_index,
            flat,
        };
        if c.min_distance() <= 0.0 {
            return Err(Error::InvalidConstellation("coincident points".into()));
        }
        Ok(c)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn dims(&self) -> usize {
        self.scheme.bands()
    }

    pub fn points(&self) -> &[ConstellationPoint] {
        &self.points
    }

    pub fn intensity(&self, index: usize) -> &[f64] {
        let d = self.dims();
        &self.flat[index * d..(index + 1) * d]
    }

    /// All point intensities stored point after point.
    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn label(&self, index: usize) -> u32 {
        self.points[index].label
    }

    pub fn index_of_label(&self, label: u32) -> Option<usize> {
        self.label_to_index.get(label as usize).copied()
    }

    /// Minimum pairwise Euclidean distance in intensity space.
    pub fn min_distance(&self) -> f64 {
        let m = self.order();
        let mut best = f64::INFINITY;
        for a in 0..m {
            for b in a + 1..m {
                let d: f64 = self
                    .intensity(a)
                    .iter()
                    .zip(self.intensity(b))
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum();
                best = best.min(d);
            }
        }
        best.sqrt()
    }

    /// Average transmitted intensity per band for equiprobable symbols.
    pub fn mean_intensity(&self) -> Vec<f64> {
        let d = self.dims();
        let mut mean = vec![0.0; d];
        for p in &self.points {
            for (m, v) in mean.iter_mut().zip(p.intensity.as_slice()) {
                *m += v;
            }
        }
        let m = self.order() as f64;
        mean.iter_mut().for_each(|v| *v /= m);
        mean
    }

    /// Writes `label,x,y,i0,i1,i2,i3` rows; `i3` is blank for TLED.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["label", "x", "y", "i0", "i1", "i2", "i3"])?;
        for p in &self.points {
            let mut row = vec![
                format!("{:0width$b}", p.label, width = self.bits_per_symbol),
                p.chromaticity.x.to_string(),
                p.chromaticity.y.to_string(),
            ];
            for b in 0..4 {
                row.push(p.intensity.as_slice().get(b).map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn gray(n: u32) -> u32 {
    n ^ (n >> 1)
}

pub fn build_tled_constellation(
    order: usize,
    sources: &SourceSet,
    layouts: &TledLayouts,
) -> Result<Constellation> {
    Scheme::Tled.check_order(order)?;
    if sources.scheme() != Scheme::Tled {
        return Err(Error::InvalidSources("TLED constellation needs a TLED source set".into()));
    }
    let table = layouts.get(order).ok_or(Error::UnsupportedOrder {
        scheme: Scheme::Tled.to_string(),
        order,
    })?;
    if table.len() != order {
        return Err(Error::InvalidConstellation(format!(
            "layout for {order}-CSK has {} rows",
            table.len()
        )));
    }
    let triad = [
        sources.chromaticity(0),
        sources.chromaticity(1),
        sources.chromaticity(2),
    ];
    let points = table
        .iter()
        .map(|row| {
            let sum: f64 = row.weights.iter().sum();
            if row.weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConstellation(format!(
                    "barycentric weights {:?} do not form a convex combination",
                    row.weights
                )));
            }
            let w = row.weights.map(|w| w / sum);
            let x = w[0] * triad[0].x + w[1] * triad[1].x + w[2] * triad[2].x;
            let y = w[0] * triad[0].y + w[1] * triad[1].y + w[2] * triad[2].y;
            let chromaticity = Chromaticity::new(x, y)?;
            let intensity = intensity_from_chromaticity(chromaticity, &triad)?;
            Ok(ConstellationPoint {
                label: row.label,
                chromaticity,
                intensity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Constellation::new(Scheme::Tled, points)
}

/// Grid positions (u, v) on the unit square and their bit labels.
///
/// Square orders use a sqrt(M) x sqrt(M) grid with per-axis Gray labels
/// (row bits high). Order 8 uses the eight boundary nodes of a 3x3 grid,
/// labelled with a cyclic Gray code around the ring.
fn qled_grid(order: usize) -> Vec<(f64, f64, u32)> {
    if order == 8 {
        const RING: [(u32, u32); 8] = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1)];
        return RING
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| (a as f64 / 2.0, b as f64 / 2.0, gray(i as u32)))
            .collect();
    }
    let side = (order as f64).sqrt().round() as usize;
    let col_bits = side.trailing_zeros();
    let step = 1.0 / (side - 1) as f64;
    let mut grid = Vec::with_capacity(order);
    for row in 0..side {
        for col in 0..side {
            let label = (gray(row as u32) << col_bits) | gray(col as u32);
            grid.push((col as f64 * step, row as f64 * step, label));
        }
    }
    grid
}

/// Bilinear map of the unit square onto B, C, Y, R: (0,0)->B, (1,0)->C,
/// (1,1)->Y, (0,1)->R.
pub fn bilinear(sources: &SourceSet, u: f64, v: f64) -> Chromaticity {
    let c: Vec<_> = (0..4).map(|i| sources.chromaticity(i)).collect();
    let w = [(1.0 - u) * (1.0 - v), u * (1.0 - v), u * v, (1.0 - u) * v];
    Chromaticity {
        x: w.iter().zip(&c).map(|(w, c)| w * c.x).sum(),
        y: w.iter().zip(&c).map(|(w, c)| w * c.y).sum(),
    }
}

pub fn build_qled_constellation(order: usize, sources: &SourceSet) -> Result<Constellation> {
    Scheme::Qled.check_order(order)?;
    if sources.scheme() != Scheme::Qled {
        return Err(Error::InvalidSources("QLED constellation needs a QLED source set".into()));
    }
    let points = qled_grid(order)
        .into_iter()
        .map(|(u, v, label)| {
            // Corners reproduce the sources exactly.
            let corner = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
                .iter()
                .position(|&c| c == (u, v));
            let chromaticity = match corner {
                Some(i) => sources.chromaticity(i),
                None => bilinear(sources, u, v),
            };
            let intensity = qled_intensity(chromaticity, sources)?;
            Ok(ConstellationPoint {
                label,
                chromaticity,
                intensity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Constellation::new(Scheme::Qled, points)
}

/// Builds the default constellation for `scheme` and `order`.
pub fn build_constellation(
    scheme: Scheme,
    order: usize,
    sources: &SourceSet,
    layouts: &TledLayouts,
) -> Result<Constellation> {
    match scheme {
        Scheme::Tled => build_tled_constellation(order, sources, layouts),
        Scheme::Qled => build_qled_constellation(order, sources),
    }
}
