//! Radar frontend: Doppler ego-velocity estimation and the partition of each
//! scan into static, dynamic and noise points.
//!
//! Sign convention shared with the simulator: a world-static target seen from
//! a platform moving with sensor-frame velocity `v` returns
//! `doppler = -uᵀ v`, where `u` is the unit bearing to the target. The
//! per-point residual `doppler + uᵀ v` is therefore zero-mean for static
//! points and offset by the target's radial speed for movers.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// One 4D-radar return: position in the sensor frame, measured radial
/// relative velocity and return power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPoint {
    pub position: Vector3<f64>,
    /// Radial relative velocity, m/s (positive = receding).
    pub doppler: f64,
    /// Return power, dB. Carried through but not used by the estimator.
    pub power: f64,
}

impl RadarPoint {
    pub fn bearing(&self) -> Vector3<f64> {
        self.position / self.position.norm()
    }
}

/// A timestamped radar scan.
#[derive(Debug, Clone, Default)]
pub struct RadarScan {
    pub stamp: f64,
    pub points: Vec<RadarPoint>,
}

/// Doppler of a world-static target for a sensor moving at `v_ego`
/// (sensor frame). Single definition shared by frontend and simulator.
pub fn static_doppler(bearing: &Vector3<f64>, v_ego: &Vector3<f64>) -> f64 {
    -bearing.dot(v_ego)
}

/// Three-way split of a scan plus the refined ego-velocity estimate.
///
/// The three lists are disjoint and their union is the input scan.
#[derive(Debug, Clone)]
pub struct ScanPartition {
    pub static_pts: Vec<RadarPoint>,
    pub dynamic_pts: Vec<RadarPoint>,
    pub noise_pts: Vec<RadarPoint>,
    /// Ego velocity in the sensor frame, m/s.
    pub ego_velocity: Vector3<f64>,
    pub ego_velocity_cov: Matrix3<f64>,
}

impl ScanPartition {
    pub fn total_points(&self) -> usize {
        self.static_pts.len() + self.dynamic_pts.len() + self.noise_pts.len()
    }
}

/// Per-point cluster labels: `>= 0` for clusters, `-1` for noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabeling {
    pub labels: Vec<i32>,
}

impl ClusterLabeling {
    pub fn cluster_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l < 0).count()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RadarError {
    /// Bearing geometry does not constrain all three velocity components
    /// (fewer than 3 inliers or bearing matrix condition above the limit).
    #[error("degenerate bearing geometry: {0}")]
    DegenerateGeometry(&'static str),
}

/// Tunables for the radar frontend. Defaults are sized to the simulator's
/// noise model; everything is overridable through the run config.
#[derive(Debug, Clone)]
pub struct RadarConfig {
    /// Residual magnitude below which a point is a static candidate, m/s.
    pub tau_static: f64,
    /// Maximum residual spread within a cluster for it to count as a
    /// coherent mover, m/s.
    pub tau_consistency: f64,
    /// DBSCAN neighbourhood radius, m.
    pub cluster_eps: f64,
    /// DBSCAN core-point threshold.
    pub cluster_min_pts: usize,
    /// Doppler measurement noise, m/s (1 sigma).
    pub sigma_doppler: f64,
    pub ransac_iters: usize,
    /// RANSAC inlier threshold on the Doppler residual, m/s.
    pub ransac_thresh: f64,
    /// Sensor height above ground, m.
    pub sensor_height: f64,
    /// Extra clearance below the ground plane before a point is dropped, m.
    pub ground_margin: f64,
    /// Bearing-matrix condition number above which geometry is degenerate.
    pub max_condition: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        RadarConfig {
            tau_static: 0.25,
            tau_consistency: 0.2,
            cluster_eps: 1.0,
            cluster_min_pts: 5,
            sigma_doppler: 0.05,
            ransac_iters: 50,
            ransac_thresh: 0.2,
            sensor_height: 2.0,
            ground_margin: 0.2,
            max_condition: 1e6,
        }
    }
}

/// Drop returns below the ground plane: `z < -(sensor_height + margin)`.
pub fn remove_below_ground(points: &[RadarPoint], sensor_height: f64, margin: f64) -> Vec<RadarPoint> {
    points
        .iter()
        .filter(|p| p.position.z >= -(sensor_height + margin))
        .copied()
        .collect()
}

/// Unweighted least squares for `doppler_i = -u_iᵀ v` over the given points.
/// Returns the velocity and the normal matrix `UᵀU`.
fn lsq_velocity(points: &[&RadarPoint]) -> Option<(Vector3<f64>, Matrix3<f64>)> {
    if points.len() < 3 {
        return None;
    }
    let mut utu = Matrix3::zeros();
    let mut utd = Vector3::zeros();
    for p in points {
        let u = p.bearing();
        utu += u * u.transpose();
        utd += u * p.doppler;
    }
    let v = utu.try_inverse()? * (-utd);
    Some((v, utu))
}

/// Condition number of the stacked bearing matrix `U`, from `UᵀU` eigenvalues.
fn bearing_condition(utu: &Matrix3<f64>) -> f64 {
    let eig = utu.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        (max / min).sqrt()
    }
}

/// RANSAC ego-velocity estimate from raw Doppler returns.
///
/// A 3-point minimal solver is resampled `ransac_iters` times with an
/// explicit seed; the consensus set is refit by least squares.
pub fn coarse_ego_velocity(
    scan: &RadarScan,
    cfg: &RadarConfig,
    seed: u64,
) -> Result<Vector3<f64>, RadarError> {
    let pts = &scan.points;
    if pts.len() < 3 {
        return Err(RadarError::DegenerateGeometry("fewer than 3 points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_inliers: Vec<usize> = Vec::new();
    for _ in 0..cfg.ransac_iters {
        // Three distinct sample indices.
        let mut idx = [0usize; 3];
        idx[0] = rng.gen_range(0..pts.len());
        loop {
            idx[1] = rng.gen_range(0..pts.len());
            if idx[1] != idx[0] {
                break;
            }
        }
        loop {
            idx[2] = rng.gen_range(0..pts.len());
            if idx[2] != idx[0] && idx[2] != idx[1] {
                break;
            }
        }
        let sample: Vec<&RadarPoint> = idx.iter().map(|&i| &pts[i]).collect();
        let Some((v, utu)) = lsq_velocity(&sample) else { continue };
        if bearing_condition(&utu) > cfg.max_condition {
            continue;
        }
        let inliers: Vec<usize> = pts
            .iter()
            .enumerate()
            .filter(|(_, p)| (p.doppler + p.bearing().dot(&v)).abs() <= cfg.ransac_thresh)
            .map(|(i, _)| i)
            .collect();
        if inliers.len() > best_inliers.len() {
            best_inliers = inliers;
        }
    }
    if best_inliers.len() < 3 {
        return Err(RadarError::DegenerateGeometry("fewer than 3 inliers"));
    }
    let subset: Vec<&RadarPoint> = best_inliers.iter().map(|&i| &pts[i]).collect();
    let (v, utu) =
        lsq_velocity(&subset).ok_or(RadarError::DegenerateGeometry("singular normal matrix"))?;
    if bearing_condition(&utu) > cfg.max_condition {
        return Err(RadarError::DegenerateGeometry("bearing condition too high"));
    }
    Ok(v)
}

/// Refined ego velocity over static points by linear least squares, with
/// covariance `sigma_d² (UᵀU)⁻¹`.
pub fn refine_ego_velocity(
    static_pts: &[RadarPoint],
    sigma_doppler: f64,
    max_condition: f64,
) -> Result<(Vector3<f64>, Matrix3<f64>), RadarError> {
    let refs: Vec<&RadarPoint> = static_pts.iter().collect();
    let (v, utu) =
        lsq_velocity(&refs).ok_or(RadarError::DegenerateGeometry("fewer than 3 points"))?;
    if bearing_condition(&utu) > max_condition {
        return Err(RadarError::DegenerateGeometry("bearing condition too high"));
    }
    let cov = utu
        .try_inverse()
        .ok_or(RadarError::DegenerateGeometry("singular normal matrix"))?
        * (sigma_doppler * sigma_doppler);
    Ok((v, cov))
}

/// DBSCAN over 3D positions with deterministic, order-independent cluster
/// membership.
///
/// Core points (at least `min_pts` neighbours within `eps`, counting the
/// point itself) form clusters as connected components; a border point joins
/// the cluster of its nearest core neighbour. Label numbers follow first
/// appearance in input order, so permuting the input permutes labels but
/// never changes which points share a cluster.
pub fn dbscan(points: &[Vector3<f64>], eps: f64, min_pts: usize) -> ClusterLabeling {
    assert!(eps > 0.0 && min_pts >= 1);
    let n = points.len();
    let mut labels = vec![-1i32; n];
    if n == 0 {
        return ClusterLabeling { labels };
    }
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| (points[i] - points[j]).norm_squared() <= eps2)
                .collect()
        })
        .collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    // Connected components over core points.
    let mut cluster = 0i32;
    for start in 0..n {
        if !is_core[start] || labels[start] >= 0 {
            continue;
        }
        let mut queue = vec![start];
        labels[start] = cluster;
        while let Some(i) = queue.pop() {
            for &j in &neighbors[i] {
                if is_core[j] && labels[j] < 0 {
                    labels[j] = cluster;
                    queue.push(j);
                }
            }
        }
        cluster += 1;
    }

    // Border points: nearest core neighbour within eps decides membership.
    for i in 0..n {
        if is_core[i] || labels[i] >= 0 {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &j in &neighbors[i] {
            if !is_core[j] {
                continue;
            }
            let d2 = (points[i] - points[j]).norm_squared();
            if best.map_or(true, |(bd, bj)| (d2, j) < (bd, bj)) {
                best = Some((d2, j));
            }
        }
        if let Some((_, j)) = best {
            labels[i] = labels[j];
        }
    }
    ClusterLabeling { labels }
}

/// Split a scan into static, dynamic and noise points given an ego-velocity
/// estimate, then refine the ego velocity over the static set.
///
/// Points with Doppler residual within `tau_static` are static. The rest are
/// clustered; a cluster whose residual spread stays below `tau_consistency`
/// is a coherent mover (dynamic), everything else is noise.
pub fn segment_scan(scan: &RadarScan, v_ego: &Vector3<f64>, cfg: &RadarConfig) -> ScanPartition {
    let mut static_pts = Vec::new();
    let mut rest: Vec<(RadarPoint, f64)> = Vec::new();
    for p in &scan.points {
        let r = p.doppler + p.bearing().dot(v_ego);
        if r.abs() <= cfg.tau_static {
            static_pts.push(*p);
        } else {
            rest.push((*p, r));
        }
    }

    let mut dynamic_pts = Vec::new();
    let mut noise_pts = Vec::new();
    if !rest.is_empty() {
        let positions: Vec<Vector3<f64>> = rest.iter().map(|(p, _)| p.position).collect();
        let labeling = dbscan(&positions, cfg.cluster_eps, cfg.cluster_min_pts);
        let clusters = labeling.cluster_count();
        let mut consistent = vec![false; clusters];
        for (c, flag) in consistent.iter_mut().enumerate() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for ((_, r), &l) in rest.iter().zip(&labeling.labels) {
                if l == c as i32 {
                    lo = lo.min(*r);
                    hi = hi.max(*r);
                }
            }
            *flag = hi - lo < cfg.tau_consistency;
        }
        for ((p, _), &label) in rest.iter().zip(&labeling.labels) {
            if label >= 0 && consistent[label as usize] {
                dynamic_pts.push(*p);
            } else {
                noise_pts.push(*p);
            }
        }
    }

    let (ego_velocity, ego_velocity_cov) =
        match refine_ego_velocity(&static_pts, cfg.sigma_doppler, cfg.max_condition) {
            Ok((v, cov)) => (v, cov),
            // Under-constrained static set: keep the coarse estimate and
            // report it as uninformative.
            Err(_) => (*v_ego, Matrix3::identity() * 1e4),
        };

    let part = ScanPartition { static_pts, dynamic_pts, noise_pts, ego_velocity, ego_velocity_cov };
    debug_assert_eq!(part.total_points(), scan.points.len());
    part
}

/// Full per-scan pipeline: ground filtering, coarse RANSAC estimate and
/// segmentation. `fallback` is used when RANSAC reports degenerate geometry.
pub fn process_scan(
    scan: &RadarScan,
    cfg: &RadarConfig,
    seed: u64,
    fallback: Option<Vector3<f64>>,
) -> Result<ScanPartition, RadarError> {
    let filtered = RadarScan {
        stamp: scan.stamp,
        points: remove_below_ground(&scan.points, cfg.sensor_height, cfg.ground_margin),
    };
    let v = match coarse_ego_velocity(&filtered, cfg, seed) {
        Ok(v) => v,
        Err(e) => fallback.ok_or(e)?,
    };
    Ok(segment_scan(&filtered, &v, cfg))
}
