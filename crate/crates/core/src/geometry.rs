//! Array geometry, the hemisphere search grid and per-pair TDOA lookup tables.
//!
//! A square `(u, v)` grid over `[-1, 1]²` is folded onto the upper hemisphere
//! (see [`fold_grid`]) and replicated over a list of distances. For every grid
//! point the integer lag between each microphone pair is precomputed so that
//! the beamformer search reduces to lookups and additions.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// A point or direction in 3D space, in meters when used as a position.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    /// Unit vector in the same direction, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    /// Angle in radians between two nonzero vectors, stable near 0 and π.
    pub fn angle_to(self, other: Vec3) -> f64 {
        libm::atan2(self.cross(other).norm(), self.dot(other))
    }

    /// Point at `range` in the direction given by azimuth and elevation in
    /// degrees.
    pub fn from_spherical_deg(azimuth: f64, elevation: f64, range: f64) -> Vec3 {
        let (a, e) = (azimuth.to_radians(), elevation.to_radians());
        let c = libm::cos(e);
        Vec3::new(
            range * c * libm::cos(a),
            range * c * libm::sin(a),
            range * libm::sin(e),
        )
    }

    /// Azimuth in degrees, counter-clockwise from +x in the array plane.
    pub fn azimuth_deg(self) -> f64 {
        libm::atan2(self.y, self.x).to_degrees()
    }

    /// Elevation in degrees above the array plane.
    pub fn elevation_deg(self) -> f64 {
        libm::atan2(self.z, libm::hypot(self.x, self.y)).to_degrees()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Vec3::new(x, y, z)
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

pub const DEFAULT_SAMPLE_RATE: f64 = 48_000.0;
pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Microphone positions plus the constants needed to turn path lengths
/// into sample delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryRepr", into = "GeometryRepr")]
pub struct MicArrayGeometry {
    mic_positions: Vec<Vec3>,
    sample_rate: f64,
    speed_of_sound: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryRepr {
    mic_positions: Vec<Vec3>,
    #[serde(default = "default_sample_rate")]
    sample_rate: f64,
    #[serde(default = "default_speed_of_sound")]
    speed_of_sound: f64,
}

fn default_sample_rate() -> f64 {
    DEFAULT_SAMPLE_RATE
}

fn default_speed_of_sound() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

impl TryFrom<GeometryRepr> for MicArrayGeometry {
    type Error = crate::Error;
    fn try_from(r: GeometryRepr) -> Result<Self> {
        MicArrayGeometry::new(r.mic_positions, r.sample_rate, r.speed_of_sound)
    }
}

impl From<MicArrayGeometry> for GeometryRepr {
    fn from(g: MicArrayGeometry) -> Self {
        GeometryRepr {
            mic_positions: g.mic_positions,
            sample_rate: g.sample_rate,
            speed_of_sound: g.speed_of_sound,
        }
    }
}

impl MicArrayGeometry {
    pub fn new(mic_positions: Vec<Vec3>, sample_rate: f64, speed_of_sound: f64) -> Result<Self> {
        if mic_positions.len() < 2 {
            bail!(
                Config,
                "need at least 2 microphones, got {}",
                mic_positions.len()
            );
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            bail!(Config, "sample rate must be positive, got {sample_rate}");
        }
        if !(speed_of_sound > 0.0 && speed_of_sound.is_finite()) {
            bail!(
                Config,
                "speed of sound must be positive, got {speed_of_sound}"
            );
        }
        for (i, a) in mic_positions.iter().enumerate() {
            if !a.is_finite() {
                bail!(Config, "microphone {i} has a non-finite position");
            }
            for (j, b) in mic_positions.iter().enumerate().skip(i + 1) {
                if a.distance(*b) <= 0.0 {
                    bail!(Config, "microphones {i} and {j} coincide");
                }
            }
        }
        Ok(Self {
            mic_positions,
            sample_rate,
            speed_of_sound,
        })
    }

    /// `count` microphones evenly spaced on a horizontal circle centered at
    /// the origin, the first one on +x.
    pub fn circular(
        count: usize,
        radius: f64,
        sample_rate: f64,
        speed_of_sound: f64,
    ) -> Result<Self> {
        let mics = (0..count)
            .map(|m| {
                let a = 2.0 * PI * m as f64 / count as f64;
                Vec3::new(radius * libm::cos(a), radius * libm::sin(a), 0.0)
            })
            .collect();
        Self::new(mics, sample_rate, speed_of_sound)
    }

    pub fn mic_positions(&self) -> &[Vec3] {
        &self.mic_positions
    }

    pub fn mic_count(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    /// All pairs `(i, j)` with `i < j`, in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let m = self.mic_count();
        (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .collect()
    }

    pub fn pair_count(&self) -> usize {
        let m = self.mic_count();
        m * (m - 1) / 2
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self
            .mic_positions
            .iter()
            .fold(Vec3::ZERO, |acc, &p| acc + p);
        sum * (1.0 / self.mic_count() as f64)
    }

    /// Largest distance between two microphones.
    pub fn aperture(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.mic_positions.iter().enumerate() {
            for b in &self.mic_positions[i + 1..] {
                best = best.max(a.distance(*b));
            }
        }
        best
    }

    /// Upper bound on the magnitude of any pairwise lag, in samples.
    pub fn max_delay_samples(&self) -> i32 {
        libm::ceil(self.sample_rate * self.aperture() / self.speed_of_sound) as i32
    }

    fn samples_per_meter(&self) -> f64 {
        self.sample_rate / self.speed_of_sound
    }
}

impl Default for MicArrayGeometry {
    /// Eight microphones on a 60 cm diameter circle, 48 kHz, 343 m/s.
    fn default() -> Self {
        Self::circular(8, 0.3, DEFAULT_SAMPLE_RATE, DEFAULT_SPEED_OF_SOUND)
            .expect("default geometry is valid")
    }
}

/// Maps grid coordinates `(u, v) ∈ [-1, 1]²` onto a unit vector on the upper
/// hemisphere. The polar angle is `π·max(u², v²)/2`; the origin maps to the
/// zenith.
pub fn fold_grid(u: f64, v: f64) -> Result<Vec3> {
    if !(-1.0..=1.0).contains(&u) || !(-1.0..=1.0).contains(&v) {
        bail!(
            Domain,
            "grid coordinates must lie in [-1, 1], got ({u}, {v})"
        );
    }
    let r = libm::hypot(u, v);
    if r == 0.0 {
        return Ok(Vec3::new(0.0, 0.0, 1.0));
    }
    let phi = PI * (u * u).max(v * v) / 2.0;
    let s = libm::sin(phi);
    Ok(Vec3::new(v / r * s, u / r * s, libm::cos(phi)))
}

/// One candidate source location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub u: f64,
    pub v: f64,
    pub direction: Vec3,
    pub distance: f64,
}

/// Folded square grid replicated over a list of distances.
///
/// Point `k` is stored at `k = (iu * side + iv) * distances.len() + id`, so
/// all distances sharing a direction are adjacent.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    side: usize,
    distances: Vec<f64>,
    points: Vec<GridPoint>,
}

/// Default coarse grid side.
pub const COARSE_SIDE: usize = 41;
/// Default fine grid side.
pub const FINE_SIDE: usize = 201;
pub const MIN_DISTANCE: f64 = 0.3;
pub const MAX_DISTANCE: f64 = 3.0;

/// `count` distances spaced logarithmically over `[min, max]`.
pub fn log_distances(count: usize, min: f64, max: f64) -> Vec<f64> {
    if count == 1 {
        return alloc::vec![libm::sqrt(min * max)];
    }
    let ratio = libm::log(max / min);
    let mut out: Vec<f64> = (0..count)
        .map(|i| min * libm::exp(ratio * i as f64 / (count - 1) as f64))
        .collect();
    out[count - 1] = max;
    out
}

/// Grid coordinate of index `i` on a side of `side` samples.
pub fn grid_coordinate(i: usize, side: usize) -> f64 {
    // Written so the end points are exactly ±1.
    (2 * i) as f64 / (side - 1) as f64 - 1.0
}

impl SearchGrid {
    pub fn build(side: usize, distances: &[f64]) -> Result<Self> {
        build_search_grid(side, distances)
    }

    /// 41×41 directions over 5 log-spaced distances in `[0.3, 3]` m.
    pub fn coarse_default() -> Self {
        build_search_grid(COARSE_SIDE, &log_distances(5, MIN_DISTANCE, MAX_DISTANCE))
            .expect("default coarse grid is valid")
    }

    /// 201×201 directions over 25 log-spaced distances in `[0.3, 3]` m.
    pub fn fine_default() -> Self {
        build_search_grid(FINE_SIDE, &log_distances(25, MIN_DISTANCE, MAX_DISTANCE))
            .expect("default fine grid is valid")
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &GridPoint {
        &self.points[k]
    }

    /// Spacing between adjacent `u` (or `v`) samples.
    pub fn step(&self) -> f64 {
        2.0 / (self.side - 1) as f64
    }

    pub fn index(&self, iu: usize, iv: usize, id: usize) -> usize {
        (iu * self.side + iv) * self.distances.len() + id
    }

    /// Inverse of [`SearchGrid::index`].
    pub fn coordinates(&self, k: usize) -> (usize, usize, usize) {
        let nd = self.distances.len();
        let dir = k / nd;
        (dir / self.side, dir % self.side, k % nd)
    }

    /// Position of grid point `k` relative to `origin`.
    pub fn position(&self, k: usize, origin: Vec3) -> Vec3 {
        let p = &self.points[k];
        origin + p.direction * p.distance
    }
}

/// Builds a `side × side × distances.len()` grid with `u`, `v` uniformly
/// sampled over `[-1, 1]`.
pub fn build_search_grid(side: usize, distances: &[f64]) -> Result<SearchGrid> {
    if side < 2 {
        bail!(Config, "grid side must be at least 2, got {side}");
    }
    if distances.is_empty() {
        bail!(Config, "distance list is empty");
    }
    if distances.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        bail!(Config, "distances must be strictly positive and finite");
    }
    if distances.windows(2).any(|w| w[1] <= w[0]) {
        bail!(Config, "distances must be strictly ascending");
    }
    let mut points = Vec::with_capacity(side * side * distances.len());
    for iu in 0..side {
        let u = grid_coordinate(iu, side);
        for iv in 0..side {
            let v = grid_coordinate(iv, side);
            let direction = fold_grid(u, v)?;
            points.extend(distances.iter().map(|&distance| GridPoint {
                u,
                v,
                direction,
                distance,
            }));
        }
    }
    Ok(SearchGrid {
        side,
        distances: distances.to_vec(),
        points,
    })
}

fn round_lag(path_difference_m: f64, samples_per_meter: f64) -> i32 {
    // libm::round rounds half away from zero.
    libm::round(path_difference_m * samples_per_meter) as i32
}

/// Integer lag `τ_i − τ_j` in samples for a source at `source`.
///
/// Positive when the wavefront reaches microphone `j` first.
pub fn compute_tdoa(source: Vec3, i: usize, j: usize, geom: &MicArrayGeometry) -> Result<i32> {
    let mics = geom.mic_positions();
    if i == j {
        bail!(
            Domain,
            "a pair needs two distinct microphones, got ({i}, {j})"
        );
    }
    if i >= mics.len() || j >= mics.len() {
        bail!(
            Domain,
            "microphone index out of range: ({i}, {j}) with {} mics",
            mics.len()
        );
    }
    let di = source.distance(mics[i]);
    let dj = source.distance(mics[j]);
    if di == 0.0 || dj == 0.0 {
        bail!(Domain, "source coincides with a microphone");
    }
    Ok(round_lag(di - dj, geom.samples_per_meter()))
}

/// Per grid point, the lag of every microphone pair stored modulo the
/// correlation length. Rows are contiguous: `delays[k * pairs + p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaLookupTable {
    pair_count: usize,
    corr_len: usize,
    delays: Vec<u16>,
}

impl TdoaLookupTable {
    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    pub fn correlation_len(&self) -> usize {
        self.corr_len
    }

    pub fn point_count(&self) -> usize {
        self.delays.len() / self.pair_count
    }

    /// Total number of stored lags.
    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    /// Lags for every pair at grid point `k`.
    #[inline]
    pub fn row(&self, k: usize) -> &[u16] {
        &self.delays[k * self.pair_count..(k + 1) * self.pair_count]
    }

    #[inline]
    pub fn lag(&self, k: usize, pair: usize) -> usize {
        self.delays[k * self.pair_count + pair] as usize
    }
}

/// Precomputes [`compute_tdoa`] modulo `corr_len` for every grid point and
/// every pair returned by [`MicArrayGeometry::pairs`]. Positions are taken
/// relative to the array centroid.
pub fn build_lookup_table(
    grid: &SearchGrid,
    geom: &MicArrayGeometry,
    corr_len: usize,
) -> Result<TdoaLookupTable> {
    build_lookup_table_for_pairs(grid, geom, corr_len, &geom.pairs())
}

/// Like [`build_lookup_table`] with an explicit pair order.
pub fn build_lookup_table_for_pairs(
    grid: &SearchGrid,
    geom: &MicArrayGeometry,
    corr_len: usize,
    pairs: &[(usize, usize)],
) -> Result<TdoaLookupTable> {
    if corr_len < 2 || corr_len > u16::MAX as usize + 1 {
        bail!(Config, "correlation length {corr_len} is out of range");
    }
    if pairs.is_empty() {
        bail!(Config, "pair list is empty");
    }
    let mics = geom.mic_positions();
    let scale = geom.samples_per_meter();
    let origin = geom.centroid();
    let half = corr_len as i32 / 2;
    let modulus = corr_len as i32;
    let mut delays = Vec::with_capacity(grid.len() * pairs.len());
    let mut dist = alloc::vec![0.0; mics.len()];
    for k in 0..grid.len() {
        let source = grid.position(k, origin);
        for (d, m) in dist.iter_mut().zip(mics) {
            *d = source.distance(*m);
            if *d == 0.0 {
                bail!(Config, "grid point {k} coincides with a microphone");
            }
        }
        for &(i, j) in pairs {
            let lag = round_lag(dist[i] - dist[j], scale);
            if lag.abs() >= half {
                bail!(
                    Config,
                    "lag {lag} for pair ({i}, {j}) does not fit a correlation of length {corr_len}"
                );
            }
            delays.push(lag.rem_euclid(modulus) as u16);
        }
    }
    Ok(TdoaLookupTable {
        pair_count: pairs.len(),
        corr_len,
        delays,
    })
}
