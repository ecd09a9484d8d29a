//! Random spin positions in a d-dimensional ball with hard-core exclusion.
//!
//! Positions are placed by random sequential adsorption (RSA): uniform
//! proposals inside the ball, each rejected and redrawn if it lies closer
//! than the exclusion radius to any spin already accepted.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Packing ratio at or below which positions count as strongly disordered.
pub const STRONG_DISORDER_X: f64 = 0.01;

/// Above this spin count the RSA conflict check switches to a cell index.
pub const GRID_INDEX_THRESHOLD: usize = 10_000;

/// Volume of the unit ball in `d` dimensions, `pi^(d/2) / Gamma(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    std::f64::consts::PI.powf(half) / statrs::function::gamma::gamma(half + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallGeometry {
    d: usize,
    r0: f64,
    rb: f64,
}

impl BallGeometry {
    pub fn new(d: usize, r0: f64, rb: f64) -> Result<Self> {
        if d < 1 {
            return Err(invalid("dimension must be at least 1"));
        }
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(invalid(format!("outer radius must be positive, got {r0}")));
        }
        if !(rb >= 0.0 && rb < 2.0 * r0) {
            return Err(invalid(format!(
                "exclusion radius must lie in [0, 2 r0), got {rb}"
            )));
        }
        Ok(Self { d, r0, rb })
    }

    /// Geometry whose exclusion radius yields packing ratio `x` for `n` spins.
    pub fn with_disorder(d: usize, r0: f64, n: usize, x: f64) -> Result<Self> {
        if !(x >= 0.0) || n == 0 {
            return Err(invalid(format!("need x >= 0 and n >= 1, got x = {x}, n = {n}")));
        }
        Self::new(d, r0, exclusion_radius_for(x, n, d, r0))
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn rb(&self) -> f64 {
        self.rb
    }

    pub fn volume(&self) -> f64 {
        unit_ball_volume(self.d) * self.r0.powi(self.d as i32)
    }
}

/// Exclusion radius `r0 (x / n)^(1/d)` giving packing ratio `x`.
pub fn exclusion_radius_for(x: f64, n: usize, d: usize, r0: f64) -> f64 {
    r0 * (x / n as f64).powf(1.0 / d as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisorderParameter {
    pub x: f64,
}

impl DisorderParameter {
    pub fn is_strongly_disordered(&self) -> bool {
        self.x <= STRONG_DISORDER_X
    }
}

/// Positions of `N` spins inside a ball, stored row-major (`d` coordinates
/// per spin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinConfiguration {
    geometry: BallGeometry,
    coords: Vec<f64>,
    seed: u64,
    stream: u64,
}

impl SpinConfiguration {
    /// Builds a configuration from explicit positions, checking every
    /// invariant (inside the ball, exclusion respected, at least one spin).
    pub fn from_positions(
        geometry: BallGeometry,
        positions: &[Vec<f64>],
        seed: u64,
    ) -> Result<Self> {
        let d = geometry.d;
        if positions.is_empty() {
            return Err(Error::InsufficientSpins { required: 1, got: 0 });
        }
        let mut coords = Vec::with_capacity(positions.len() * d);
        for p in positions {
            if p.len() != d {
                return Err(invalid(format!("position has {} coordinates, expected {d}", p.len())));
            }
            if norm(p) >= geometry.r0 {
                return Err(invalid(format!("position {p:?} lies outside the ball")));
            }
            coords.extend_from_slice(p);
        }
        let config = Self { geometry, coords, seed, stream: 0 };
        if let Some((i, k)) = config.first_exclusion_violation() {
            return Err(invalid(format!(
                "spins {i} and {k} are closer than the exclusion radius"
            )));
        }
        Ok(config)
    }

    pub fn geometry(&self) -> &BallGeometry {
        &self.geometry
    }

    pub fn d(&self) -> usize {
        self.geometry.d
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.geometry.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn position(&self, i: usize) -> &[f64] {
        let d = self.geometry.d;
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn positions(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.geometry.d)
    }

    /// Same spins with every coordinate multiplied by `factor`; the ball
    /// radii scale along.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let g = BallGeometry::new(self.geometry.d, self.geometry.r0 * factor, self.geometry.rb * factor)?;
        Ok(Self {
            geometry: g,
            coords: self.coords.iter().map(|c| c * factor).collect(),
            seed: self.seed,
            stream: self.stream,
        })
    }

    /// Smallest pairwise distance, `None` for a single spin.
    pub fn min_pair_distance(&self) -> Option<f64> {
        let n = self.len();
        let mut best: Option<f64> = None;
        for i in 0..n {
            for k in (i + 1)..n {
                let r = distance(self.position(i), self.position(k));
                best = Some(best.map_or(r, |b| b.min(r)));
            }
        }
        best
    }

    fn first_exclusion_violation(&self) -> Option<(usize, usize)> {
        let n = self.len();
        for i in 0..n {
            for k in (i + 1)..n {
                if distance(self.position(i), self.position(k)) < self.geometry.rb {
                    return Some((i, k));
                }
            }
        }
        None
    }

    /// CSV with a `#` comment header carrying `d`, `r0`, `rb`, `seed`,
    /// `stream`, then one `x1,...,xd` row per spin.
    pub fn to_csv(&self) -> String {
        let d = self.geometry.d;
        let mut out = String::new();
        let _ = writeln!(out, "# d={d}");
        let _ = writeln!(out, "# r0={}", self.geometry.r0);
        let _ = writeln!(out, "# rb={}", self.geometry.rb);
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(out, "# stream={}", self.stream);
        let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
        let _ = writeln!(out, "{}", header.join(","));
        for p in self.positions() {
            let row: Vec<String> = p.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta: HashMap<&str, &str> = HashMap::new();
        let mut rows = Vec::new();
        let mut seen_header = false;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim(), v.trim());
                }
            } else if !seen_header {
                seen_header = true;
            } else {
                let row = line
                    .split(',')
                    .map(|c| c.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                    .collect::<Result<Vec<f64>>>()?;
                rows.push(row);
            }
        }
        let get = |key: &str| -> Result<&str> {
            meta.get(key).copied().ok_or_else(|| Error::Parse(format!("missing `{key}` header")))
        };
        let parse_err = |e: std::num::ParseFloatError| Error::Parse(e.to_string());
        let d: usize = get("d")?.parse().map_err(|e: std::num::ParseIntError| Error::Parse(e.to_string()))?;
        let r0: f64 = get("r0")?.parse().map_err(parse_err)?;
        let rb: f64 = get("rb")?.parse().map_err(parse_err)?;
        let seed: u64 = get("seed")?.parse().map_err(|e: std::num::ParseIntError| Error::Parse(e.to_string()))?;
        let stream: u64 = match meta.get("stream") {
            Some(s) => s.parse().map_err(|e: std::num::ParseIntError| Error::Parse(e.to_string()))?,
            None => 0,
        };
        let mut config = Self::from_positions(BallGeometry::new(d, r0, rb)?, &rows, seed)?;
        config.stream = stream;
        Ok(config)
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn norm(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-realization generator: ChaCha8 keyed by `seed`, on stream `stream`.
pub fn realization_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform point strictly inside the `d`-ball of radius `r0`.
pub fn sample_uniform_ball<R: Rng + ?Sized>(d: usize, r0: f64, rng: &mut R) -> Vec<f64> {
    let mut p = vec![0.0; d];
    sample_uniform_ball_into(r0, rng, &mut p);
    p
}

/// Fills `out` with a uniform point of the `out.len()`-ball: isotropic
/// Gaussian direction, radius `r0 * u^(1/d)` with `u` uniform in `[0, 1)`.
pub fn sample_uniform_ball_into<R: Rng + ?Sized>(r0: f64, rng: &mut R, out: &mut [f64]) {
    let d = out.len();
    loop {
        let mut sq = 0.0;
        for c in out.iter_mut() {
            *c = rng.sample(StandardNormal);
            sq += *c * *c;
        }
        if sq > 0.0 {
            let u: f64 = rng.random();
            let scale = r0 * u.powf(1.0 / d as f64) / sq.sqrt();
            for c in out.iter_mut() {
                *c *= scale;
            }
            if norm(out) < r0 {
                return;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpatialIndex {
    /// Brute force up to [`GRID_INDEX_THRESHOLD`] spins, cell grid above.
    #[default]
    Auto,
    BruteForce,
    Grid,
}

#[derive(Debug, Clone, Copy)]
pub struct RsaOptions {
    /// Total number of rejected proposals tolerated before giving up.
    pub max_attempts: usize,
    pub index: SpatialIndex,
}

impl RsaOptions {
    pub fn for_count(n: usize) -> Self {
        Self { max_attempts: default_max_attempts(n), index: SpatialIndex::Auto }
    }
}

pub fn default_max_attempts(n: usize) -> usize {
    1000 * n.max(1)
}

/// RSA sample on stream 0 of `seed`.
pub fn sample_rsa(
    n: usize,
    geometry: BallGeometry,
    seed: u64,
    max_attempts: usize,
) -> Result<SpinConfiguration> {
    sample_rsa_with(
        n,
        geometry,
        seed,
        0,
        RsaOptions { max_attempts, index: SpatialIndex::Auto },
    )
}

pub fn sample_rsa_with(
    n: usize,
    geometry: BallGeometry,
    seed: u64,
    stream: u64,
    options: RsaOptions,
) -> Result<SpinConfiguration> {
    if n == 0 {
        return Err(Error::InsufficientSpins { required: 1, got: 0 });
    }
    let d = geometry.d;
    let rb = geometry.rb;
    let use_grid = match options.index {
        SpatialIndex::Auto => n > GRID_INDEX_THRESHOLD && rb > 0.0,
        SpatialIndex::BruteForce => false,
        SpatialIndex::Grid => rb > 0.0,
    };
    let mut rng = realization_rng(seed, stream);
    let mut coords: Vec<f64> = Vec::with_capacity(n * d);
    let mut grid = use_grid.then(|| CellGrid::new(d, rb));
    let mut proposal = vec![0.0; d];
    let mut rejections = 0usize;

    while coords.len() < n * d {
        sample_uniform_ball_into(geometry.r0, &mut rng, &mut proposal);
        let conflict = if rb == 0.0 {
            false
        } else if let Some(g) = grid.as_ref() {
            g.conflicts(&coords, &proposal)
        } else {
            coords.chunks_exact(d).any(|q| distance(q, &proposal) < rb)
        };
        if conflict {
            rejections += 1;
            if rejections > options.max_attempts {
                return Err(Error::PackingFailure {
                    placed: coords.len() / d,
                    requested: n,
                    attempts: options.max_attempts,
                });
            }
            continue;
        }
        if let Some(g) = grid.as_mut() {
            g.insert(coords.len() / d, &proposal);
        }
        coords.extend_from_slice(&proposal);
    }
    Ok(SpinConfiguration { geometry, coords, seed, stream })
}

pub fn disorder_parameter(config: &SpinConfiguration) -> DisorderParameter {
    let g = config.geometry();
    let d = g.d as i32;
    DisorderParameter { x: config.len() as f64 * g.rb.powi(d) / g.r0.powi(d) }
}

/// Uniform cell hash with side `rb`; every conflicting neighbor lies in the
/// 3^d block around the proposal's cell.
struct CellGrid {
    d: usize,
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl CellGrid {
    fn new(d: usize, cell: f64) -> Self {
        Self { d, cell, cells: HashMap::new() }
    }

    fn key(&self, p: &[f64]) -> Vec<i64> {
        p.iter().map(|c| (c / self.cell).floor() as i64).collect()
    }

    fn insert(&mut self, index: usize, p: &[f64]) {
        let key = self.key(p);
        self.cells.entry(key).or_default().push(index);
    }

    fn conflicts(&self, coords: &[f64], p: &[f64]) -> bool {
        let base = self.key(p);
        let d = self.d;
        let mut offset = vec![-1i64; d];
        loop {
            let key: Vec<i64> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
            if let Some(members) = self.cells.get(&key) {
                for &m in members {
                    if distance(&coords[m * d..(m + 1) * d], p) < self.cell {
                        return true;
                    }
                }
            }
            // odometer over {-1, 0, 1}^d
            let mut j = 0;
            loop {
                if j == d {
                    return false;
                }
                offset[j] += 1;
                if offset[j] <= 1 {
                    break;
                }
                offset[j] = -1;
                j += 1;
            }
        }
    }
}
