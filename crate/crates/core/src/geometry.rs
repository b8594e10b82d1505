//! AP layout, Poisson UE drops and nearest-AP association.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::config::ValidatedConfig;
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("{0} APs cannot form a square grid; supply an explicit layout")]
    NonSquareCount(usize),
    #[error("layout has {got} positions but the config asks for {want}")]
    CountMismatch { got: usize, want: usize },
    #[error("AP {0} lies outside the simulation square")]
    OutsideArea(usize),
    #[error("APs {0} and {1} share a position")]
    Duplicate(usize, usize),
    #[error("layout line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot read layout {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApLayout {
    positions: Vec<Point>,
}

impl ApLayout {
    /// Checks that positions are pairwise distinct and inside `[0, side]²`.
    pub fn from_positions(positions: Vec<Point>, cfg: &ValidatedConfig) -> Result<Self, GeometryError> {
        if positions.len() != cfg.num_aps {
            return Err(GeometryError::CountMismatch {
                got: positions.len(),
                want: cfg.num_aps,
            });
        }
        let side = cfg.area_side;
        for (i, p) in positions.iter().enumerate() {
            if !(0.0..=side).contains(&p.x) || !(0.0..=side).contains(&p.y) {
                return Err(GeometryError::OutsideArea(i));
            }
            if let Some(j) = positions[..i].iter().position(|q| q == p) {
                return Err(GeometryError::Duplicate(j, i));
            }
        }
        Ok(Self { positions })
    }

    /// Reads one `x y` (or `x,y`) pair per line; `#` starts a comment.
    pub fn parse(text: &str, cfg: &ValidatedConfig) -> Result<Self, GeometryError> {
        let mut positions = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<_> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            let parse_err = |msg: &str| GeometryError::Parse {
                line: idx + 1,
                msg: msg.to_string(),
            };
            if nums.len() != 2 {
                return Err(parse_err("expected two coordinates"));
            }
            let x = nums[0].parse().map_err(|_| parse_err("bad x"))?;
            let y = nums[1].parse().map_err(|_| parse_err("bad y"))?;
            positions.push(Point::new(x, y));
        }
        Self::from_positions(positions, cfg)
    }

    pub fn from_file(path: &Path, cfg: &ValidatedConfig) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, cfg)
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// √N × √N grid with half-spacing offset, row-major from the origin corner.
pub fn deploy_aps(cfg: &ValidatedConfig) -> Result<ApLayout, GeometryError> {
    let n = cfg.num_aps;
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(GeometryError::NonSquareCount(n));
    }
    let spacing = cfg.area_side / side as f64;
    let positions = (0..n)
        .map(|i| {
            let (row, col) = (i / side, i % side);
            Point::new(
                (col as f64 + 0.5) * spacing,
                (row as f64 + 0.5) * spacing,
            )
        })
        .collect();
    Ok(ApLayout { positions })
}

/// PPP drop: `K ~ Poisson(λ·side²)`, positions uniform over the square.
pub fn sample_ues(cfg: &ValidatedConfig, rng: &mut RandomStream) -> Vec<Point> {
    let mean = cfg.ue_density * cfg.area_side * cfg.area_side;
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("finite positive mean").sample(rng) as usize
    } else {
        0
    };
    (0..count)
        .map(|_| {
            Point::new(
                rng.random::<f64>() * cfg.area_side,
                rng.random::<f64>() * cfg.area_side,
            )
        })
        .collect()
}

/// UEs partitioned over APs, with clamped link distances.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub aps: ApLayout,
    pub ues: Vec<Point>,
    /// `assoc[n]` lists the UE indices served by AP `n`, ascending.
    pub assoc: Vec<Vec<usize>>,
    /// `distances[n][i]` is the clamped distance from AP `n` to `assoc[n][i]`.
    pub distances: Vec<Vec<f64>>,
}

impl Deployment {
    pub fn ue_count(&self) -> usize {
        self.ues.len()
    }

    pub fn num_aps(&self) -> usize {
        self.aps.len()
    }
}

/// Nearest-AP association; ties go to the lower AP index.
pub fn associate(aps: &ApLayout, ues: &[Point], cfg: &ValidatedConfig) -> Deployment {
    let mut assoc = vec![Vec::new(); aps.len()];
    let mut distances = vec![Vec::new(); aps.len()];
    for (k, ue) in ues.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (n, ap) in aps.positions().iter().enumerate() {
            let d = ue.distance(ap);
            if d < best_d {
                best = n;
                best_d = d;
            }
        }
        if best_d.is_finite() {
            assoc[best].push(k);
            distances[best].push(best_d.max(cfg.min_distance));
        }
    }
    Deployment {
        aps: aps.clone(),
        ues: ues.to_vec(),
        assoc,
        distances,
    }
}
