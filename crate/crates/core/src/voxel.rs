//! Log-odds voxel occupancy map. Stage 1 of the pipeline integrates
//! depth clouds from externally localized poses; stage 2 keeps only
//! cloud points near voxels that stayed occupied, which strips comet
//! tails and other unsupported returns before plane extraction.
//!
//! Cells live in a sorted map keyed by integer voxel index, so
//! iteration order, serialization, and the derived kd-tree are all
//! reproducible.

use crate::kdtree::KdTree;
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("{what} is out of range: {value}")]
    BadParams { what: &'static str, value: f64 },
    #[error("map text line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Inverse sensor model and discretization settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyParams {
    pub resolution: f64,
    /// Log-odds increment of the endpoint voxel.
    pub l_hit: f64,
    /// Log-odds increment of traversed voxels, negative.
    pub l_miss: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
    /// Clamping trades permutation invariance for bounded confidence;
    /// disable it when update order must not matter.
    pub clamping: bool,
}

impl Default for OccupancyParams {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            l_hit: (0.7_f64 / 0.3).ln(),
            l_miss: (0.4_f64 / 0.6).ln(),
            clamp_min: -2.0,
            clamp_max: 3.5,
            clamping: true,
        }
    }
}

impl OccupancyParams {
    pub fn validate(&self) -> Result<(), VoxelError> {
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(VoxelError::BadParams {
                what: "resolution",
                value: self.resolution,
            });
        }
        if !(self.l_hit > 0.0) {
            return Err(VoxelError::BadParams {
                what: "l_hit",
                value: self.l_hit,
            });
        }
        if !(self.l_miss < 0.0) {
            return Err(VoxelError::BadParams {
                what: "l_miss",
                value: self.l_miss,
            });
        }
        if !(self.clamp_min < 0.0 && self.clamp_max > 0.0) {
            return Err(VoxelError::BadParams {
                what: "clamp range",
                value: self.clamp_min,
            });
        }
        Ok(())
    }
}

/// Radius within which a point counts as supported by an occupied voxel.
pub fn default_filter_radius(resolution: f64) -> f64 {
    1.5 * resolution
}

pub type VoxelIndex = (i64, i64, i64);

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMap {
    params: OccupancyParams,
    cells: BTreeMap<VoxelIndex, f64>,
}

impl OccupancyMap {
    pub fn new(params: OccupancyParams) -> Result<Self, VoxelError> {
        params.validate()?;
        Ok(Self {
            params,
            cells: BTreeMap::new(),
        })
    }

    pub fn params(&self) -> &OccupancyParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Center-aligned grid: voxel i spans [(i-1/2)r, (i+1/2)r), so a
    /// surface lying on a resolution multiple sits mid-voxel instead
    /// of on a boundary where rounding scatters its hits.
    pub fn voxel_of(&self, p: &Vector3<f64>) -> VoxelIndex {
        let r = self.params.resolution;
        (
            (p.x / r + 0.5).floor() as i64,
            (p.y / r + 0.5).floor() as i64,
            (p.z / r + 0.5).floor() as i64,
        )
    }

    pub fn center_of(&self, idx: VoxelIndex) -> Vector3<f64> {
        let r = self.params.resolution;
        Vector3::new(idx.0 as f64 * r, idx.1 as f64 * r, idx.2 as f64 * r)
    }

    /// Log-odds of a cell; unobserved cells read as 0.
    pub fn log_odds(&self, idx: VoxelIndex) -> f64 {
        self.cells.get(&idx).copied().unwrap_or(0.0)
    }

    /// A cell is occupied when observed and not believed free.
    pub fn is_occupied(&self, idx: VoxelIndex) -> bool {
        self.cells.get(&idx).is_some_and(|lo| *lo >= 0.0)
    }

    fn bump(&mut self, idx: VoxelIndex, delta: f64) {
        let lo = self.cells.entry(idx).or_insert(0.0);
        *lo += delta;
        if self.params.clamping {
            *lo = lo.clamp(self.params.clamp_min, self.params.clamp_max);
        }
    }

    /// Integrates one cloud taken from `origin`, both in the map frame.
    /// Rays are processed independently in slice order: every voxel the
    /// ray crosses takes a miss, the endpoint voxel takes the hit.
    pub fn integrate_cloud(&mut self, origin: &Vector3<f64>, points: &[Vector3<f64>]) {
        for p in points {
            self.integrate_ray(origin, p);
        }
    }

    fn integrate_ray(&mut self, origin: &Vector3<f64>, endpoint: &Vector3<f64>) {
        let end = self.voxel_of(endpoint);
        let mut current = self.voxel_of(origin);
        if current != end {
            let r = self.params.resolution;
            let d = endpoint - origin;
            let step = [d.x.signum() as i64, d.y.signum() as i64, d.z.signum() as i64];
            let mut t_max = [f64::INFINITY; 3];
            let mut t_delta = [f64::INFINITY; 3];
            let cur = [current.0, current.1, current.2];
            for axis in 0..3 {
                if d[axis] != 0.0 {
                    let half = if d[axis] > 0.0 { 0.5 } else { -0.5 };
                    let boundary = (cur[axis] as f64 + half) * r;
                    t_max[axis] = (boundary - origin[axis]) / d[axis];
                    t_delta[axis] = r / d[axis].abs();
                }
            }
            // Crossing count is fixed by the endpoints; the cap only
            // guards against degenerate boundary arithmetic.
            let span = (end.0 - current.0).abs()
                + (end.1 - current.1).abs()
                + (end.2 - current.2).abs();
            for _ in 0..span + 3 {
                if current == end {
                    break;
                }
                self.bump(current, self.params.l_miss);
                let axis = (0..3).min_by(|a, b| t_max[*a].total_cmp(&t_max[*b])).unwrap();
                t_max[axis] += t_delta[axis];
                match axis {
                    0 => current.0 += step[0],
                    1 => current.1 += step[1],
                    _ => current.2 += step[2],
                }
            }
        }
        self.bump(end, self.params.l_hit);
    }

    /// Centers of occupied voxels in index order.
    pub fn occupied_centers(&self) -> Vec<Vector3<f64>> {
        self.cells
            .iter()
            .filter(|(_, lo)| **lo >= 0.0)
            .map(|(idx, _)| self.center_of(*idx))
            .collect()
    }

    /// Nearest-neighbor index over occupied voxel centers.
    pub fn build_index(&self) -> OccupancyIndex {
        OccupancyIndex {
            tree: KdTree::build(&self.occupied_centers()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "panel occupancy map v1").unwrap();
        writeln!(out, "resolution {}", self.params.resolution).unwrap();
        writeln!(out, "cells {}", self.cells.len()).unwrap();
        for ((i, j, k), lo) in &self.cells {
            writeln!(out, "{i} {j} {k} {lo}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, VoxelError> {
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, message: &str| VoxelError::Parse {
            line: line + 1,
            message: message.to_string(),
        };
        let (n, magic) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty map text"))?;
        if magic.trim() != "panel occupancy map v1" {
            return Err(parse_err(n, "bad magic line"));
        }
        let (n, res_line) = lines.next().ok_or_else(|| parse_err(1, "missing resolution"))?;
        let resolution = res_line
            .strip_prefix("resolution ")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| parse_err(n, "bad resolution line"))?;
        let (n, count_line) = lines.next().ok_or_else(|| parse_err(2, "missing cell count"))?;
        let count = count_line
            .strip_prefix("cells ")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err(n, "bad cell count line"))?;

        let mut map = Self::new(OccupancyParams {
            resolution,
            ..OccupancyParams::default()
        })?;
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let mut next_i64 = || -> Option<i64> { parts.next()?.parse().ok() };
            let (Some(i), Some(j), Some(k)) = (next_i64(), next_i64(), next_i64()) else {
                return Err(parse_err(n, "bad voxel index"));
            };
            let lo: f64 = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err(n, "bad log odds"))?;
            map.cells.insert((i, j, k), lo);
        }
        if map.cells.len() != count {
            return Err(parse_err(2, "cell count does not match rows"));
        }
        Ok(map)
    }

    pub fn save_text(&self, path: &Path) -> Result<(), VoxelError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load_text(path: &Path) -> Result<Self, VoxelError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Spatial filter backed by the occupied-voxel kd-tree.
pub struct OccupancyIndex {
    tree: KdTree,
}

impl OccupancyIndex {
    /// True for points within `radius` of some occupied voxel center.
    pub fn retain_mask(&self, cloud: &[Vector3<f64>], radius: f64) -> Vec<bool> {
        cloud
            .iter()
            .map(|p| self.tree.nearest(p).is_some_and(|(_, d)| d <= radius))
            .collect()
    }

    /// Points supported by the map; order is preserved.
    pub fn filter_cloud(&self, cloud: &[Vector3<f64>], radius: f64) -> Vec<Vector3<f64>> {
        self.retain_mask(cloud, radius)
            .into_iter()
            .zip(cloud)
            .filter_map(|(keep, p)| keep.then_some(*p))
            .collect()
    }
}
