//! Plane segmentation of depth clouds. Regions grow from seed points
//! through a k-nearest neighborhood, refitting after every accepted
//! point from running raw moments, so membership never depends on cloud
//! chunking. A final refit-and-prune pass restores the membership
//! invariant the incremental growth can leave behind.

use crate::kdtree::KdTree;
use nalgebra::{Matrix3, Vector3};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlaneError {
    #[error("plane fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("points are degenerate: no unique plane")]
    Degenerate,
    #[error("{what} is out of range: {value}")]
    BadParams { what: &'static str, value: f64 },
}

/// Raw first and second moments of a point set. Sums are exact in
/// accumulation order; the centered scatter is formed only on demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneMoments {
    pub count: usize,
    pub sum: Vector3<f64>,
    pub sq: Matrix3<f64>,
}

impl Default for PlaneMoments {
    fn default() -> Self {
        Self {
            count: 0,
            sum: Vector3::zeros(),
            sq: Matrix3::zeros(),
        }
    }
}

impl PlaneMoments {
    pub fn update(&mut self, p: &Vector3<f64>) {
        self.count += 1;
        self.sum += p;
        self.sq += p * p.transpose();
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.sum += other.sum;
        self.sq += other.sq;
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.sum / self.count as f64
    }

    /// Centered second-moment matrix, sum of (p - c)(p - c)^T.
    pub fn scatter(&self) -> Matrix3<f64> {
        self.sq - self.sum * self.sum.transpose() / self.count as f64
    }
}

/// Least-squares plane n . p = d with its fit statistics. The scatter
/// matrix is kept because downstream registration weights planes by the
/// information their point support carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedPlane {
    /// Unit normal, oriented toward the sensor.
    pub normal: Vector3<f64>,
    /// Signed offset along the normal.
    pub d: f64,
    pub centroid: Vector3<f64>,
    pub count: usize,
    /// Root mean square orthogonal residual.
    pub rms: f64,
    pub scatter: Matrix3<f64>,
}

impl FittedPlane {
    pub fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        (self.normal.dot(p) - self.d).abs()
    }
}

/// Fits the minimum-variance plane through the accumulated points. The
/// normal is oriented so the half space containing `toward` is positive.
pub fn fit_plane(moments: &PlaneMoments, toward: &Vector3<f64>) -> Result<FittedPlane, PlaneError> {
    if moments.count < 3 {
        return Err(PlaneError::TooFewPoints(moments.count));
    }
    let scatter = moments.scatter();
    let eig = scatter.symmetric_eigen();
    // Ascending order of eigenvalues by index.
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let lam_min = eig.eigenvalues[order[0]];
    let lam_mid = eig.eigenvalues[order[1]];
    let trace = scatter.trace().max(0.0);
    if lam_mid <= 1e-12 * trace.max(1e-300) {
        return Err(PlaneError::Degenerate);
    }
    let mut normal = eig.eigenvectors.column(order[0]).into_owned();
    normal.normalize_mut();
    let centroid = moments.centroid();
    if normal.dot(&(toward - centroid)) < 0.0 {
        normal = -normal;
    }
    Ok(FittedPlane {
        normal,
        d: normal.dot(&centroid),
        centroid,
        count: moments.count,
        rms: (lam_min.max(0.0) / moments.count as f64).sqrt(),
        scatter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionParams {
    pub k_neighbors: usize,
    /// Point-to-plane acceptance distance.
    pub distance_threshold: f64,
    /// Region is abandoned growth-wise once adding a point would push
    /// its rms past this.
    pub rms_threshold: f64,
    pub min_points: usize,
    /// Raster cell size for interior hole counting.
    pub hole_cell: f64,
}

impl ExtractionParams {
    /// Thresholds matched to an expected orthogonal noise level; the
    /// floor keeps noiseless synthetic data extractable.
    pub fn for_noise(sigma: f64) -> Self {
        let sigma = sigma.max(0.002);
        Self {
            k_neighbors: 8,
            distance_threshold: 3.0 * sigma,
            rms_threshold: 2.0 * sigma,
            min_points: 50,
            hole_cell: 0.05,
        }
    }

    pub fn validate(&self) -> Result<(), PlaneError> {
        if self.k_neighbors < 2 {
            return Err(PlaneError::BadParams {
                what: "k_neighbors",
                value: self.k_neighbors as f64,
            });
        }
        for (what, value) in [
            ("distance_threshold", self.distance_threshold),
            ("rms_threshold", self.rms_threshold),
            ("hole_cell", self.hole_cell),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(PlaneError::BadParams { what, value });
            }
        }
        Ok(())
    }
}

/// One segmented plane with its supporting points.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneRegion {
    pub plane: FittedPlane,
    /// Indices into the input cloud, ascending.
    pub members: Vec<usize>,
    /// Interior gaps in the supporting raster; an intact wall has none.
    pub hole_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub planes: Vec<PlaneRegion>,
    /// Per input point: region index or -1 for noise.
    pub assignment: Vec<i32>,
}

/// Segments a cloud into planar regions by seeded region growing.
/// `sensor` orients normals and must be the viewpoint the cloud was
/// taken from.
pub fn extract_planes(
    cloud: &[Vector3<f64>],
    sensor: &Vector3<f64>,
    params: &ExtractionParams,
) -> Result<ExtractionResult, PlaneError> {
    params.validate()?;
    let n = cloud.len();
    let mut assignment = vec![-1i32; n];
    if n < params.min_points.max(3) {
        return Ok(ExtractionResult {
            planes: Vec::new(),
            assignment,
        });
    }
    let tree = KdTree::build(cloud);

    // -1 free, -2 permanently noise (dissolved), >= 0 region id.
    let mut state = vec![-1i64; n];
    let mut tested = vec![u32::MAX; n];
    let mut regions: Vec<Vec<usize>> = Vec::new();

    for seed in 0..n {
        if state[seed] != -1 {
            continue;
        }
        let region_id = regions.len() as u32;
        let mut members = vec![seed];
        let mut moments = PlaneMoments::default();
        moments.update(&cloud[seed]);
        state[seed] = region_id as i64;
        tested[seed] = region_id;
        let mut fit: Option<FittedPlane> = None;

        let mut frontier = VecDeque::new();
        frontier.push_back(seed);
        while let Some(at) = frontier.pop_front() {
            for (nb, _) in tree.k_nearest(&cloud[at], params.k_neighbors) {
                if state[nb] != -1 || tested[nb] == region_id {
                    continue;
                }
                tested[nb] = region_id;
                let p = &cloud[nb];

                // Until a non-degenerate fit exists the region accepts
                // unconditionally; afterwards a candidate must sit near
                // the current plane and keep the refit rms in bounds.
                let accept = match &fit {
                    None => {
                        moments.update(p);
                        if moments.count >= 3 {
                            fit = fit_plane(&moments, sensor).ok();
                        }
                        true
                    }
                    Some(current) => {
                        if current.distance_to(p) >= params.distance_threshold {
                            false
                        } else {
                            let mut trial = moments;
                            trial.update(p);
                            match fit_plane(&trial, sensor) {
                                Ok(f) if f.rms < params.rms_threshold => {
                                    fit = Some(f);
                                    moments = trial;
                                    true
                                }
                                _ => false,
                            }
                        }
                    }
                };
                if !accept {
                    continue;
                }
                state[nb] = region_id as i64;
                members.push(nb);
                frontier.push_back(nb);
            }
        }

        if members.len() < params.min_points || fit.is_none() {
            for m in members {
                state[m] = -2;
            }
        } else {
            regions.push(members);
        }
    }

    // Refit and prune until every member satisfies the distance bound.
    let mut planes = Vec::new();
    for members in regions.iter_mut() {
        let mut final_fit = None;
        for _ in 0..10 {
            let mut moments = PlaneMoments::default();
            for &m in members.iter() {
                moments.update(&cloud[m]);
            }
            let Ok(fitted) = fit_plane(&moments, sensor) else {
                final_fit = None;
                break;
            };
            let before = members.len();
            members.retain(|&m| fitted.distance_to(&cloud[m]) < params.distance_threshold);
            final_fit = Some(fitted);
            if members.len() == before {
                break;
            }
        }
        if members.len() < params.min_points {
            continue;
        }
        if let Some(plane) = final_fit {
            members.sort_unstable();
            let hole_count = count_holes(cloud, members, &plane, params.hole_cell);
            planes.push(PlaneRegion {
                plane,
                members: members.clone(),
                hole_count,
            });
        }
    }

    for (id, region) in planes.iter().enumerate() {
        for &m in &region.members {
            assignment[m] = id as i32;
        }
    }
    Ok(ExtractionResult { planes, assignment })
}

/// Orthonormal in-plane basis for a unit normal.
fn plane_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let pick = if normal.x.abs() < normal.z.abs() {
        Vector3::x()
    } else {
        Vector3::z()
    };
    let e1 = normal.cross(&pick).normalize();
    let e2 = normal.cross(&e1);
    (e1, e2)
}

/// Number of empty 4-connected raster components fully enclosed by the
/// region's supporting cells.
fn count_holes(
    cloud: &[Vector3<f64>],
    members: &[usize],
    plane: &FittedPlane,
    cell: f64,
) -> usize {
    let (e1, e2) = plane_basis(&plane.normal);
    let mut min_i = i64::MAX;
    let mut max_i = i64::MIN;
    let mut min_j = i64::MAX;
    let mut max_j = i64::MIN;
    let cells: Vec<(i64, i64)> = members
        .iter()
        .map(|&m| {
            let rel = cloud[m] - plane.centroid;
            let i = (e1.dot(&rel) / cell).floor() as i64;
            let j = (e2.dot(&rel) / cell).floor() as i64;
            min_i = min_i.min(i);
            max_i = max_i.max(i);
            min_j = min_j.min(j);
            max_j = max_j.max(j);
            (i, j)
        })
        .collect();
    let w = (max_i - min_i + 1) as usize;
    let h = (max_j - min_j + 1) as usize;
    if w < 3 || h < 3 {
        return 0;
    }
    // 0 empty, 1 filled, 2 empty reachable from the border.
    let mut grid = vec![0u8; w * h];
    for (i, j) in cells {
        grid[(j - min_j) as usize * w + (i - min_i) as usize] = 1;
    }
    let mut queue = VecDeque::new();
    for i in 0..w {
        for j in [0, h - 1] {
            queue.push_back((i, j));
        }
    }
    for j in 0..h {
        for i in [0, w - 1] {
            queue.push_back((i, j));
        }
    }
    let flood = |queue: &mut VecDeque<(usize, usize)>, grid: &mut Vec<u8>, mark: u8| {
        while let Some((i, j)) = queue.pop_front() {
            let at = j * w + i;
            if grid[at] != 0 {
                continue;
            }
            grid[at] = mark;
            if i > 0 {
                queue.push_back((i - 1, j));
            }
            if i + 1 < w {
                queue.push_back((i + 1, j));
            }
            if j > 0 {
                queue.push_back((i, j - 1));
            }
            if j + 1 < h {
                queue.push_back((i, j + 1));
            }
        }
    };
    flood(&mut queue, &mut grid, 2);

    let mut holes = 0;
    for j in 0..h {
        for i in 0..w {
            if grid[j * w + i] == 0 {
                holes += 1;
                let mut q = VecDeque::new();
                q.push_back((i, j));
                flood(&mut q, &mut grid, 3);
            }
        }
    }
    holes
}
