//! Empirical reachable sets: Monte-Carlo point clouds, ellipsoid fits,
//! containment scoring against bounds, and the `(c1, w1)` volume heatmap.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::attack::{make_policy, AttackSpec};
use crate::bound::{Method, ReachBound, Target};
use crate::detector::DetectorConfig;
use crate::ellipsoid::Ellipsoid;
use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::{run_trial, PlantModel, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudSource {
    /// Noise-driven state `x^v`.
    NoiseOnly,
    /// Attack-driven state `x^δ`.
    AttackOnly,
    /// Full state `x`.
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudConfig {
    pub sim: SimConfig,
    /// Steps after the attack start that are discarded as transient.
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Keep every `stride`-th step after the burn-in.
    #[serde(default = "one")]
    pub stride: usize,
}

fn default_burn_in() -> usize {
    50
}

fn one() -> usize {
    1
}

impl CloudConfig {
    /// `trials × (horizon − burn_in)` points from an attack starting at step 1.
    pub fn new(trials: usize, horizon: usize, master_seed: u64) -> Self {
        let mut sim = SimConfig::new(horizon);
        sim.trials = trials;
        sim.master_seed = master_seed;
        sim.attack_start = Some(1);
        CloudConfig {
            sim,
            burn_in: default_burn_in(),
            stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.stride == 0 {
            return Err(Error::InvalidConfig("cloud stride must be positive".into()));
        }
        Ok(())
    }

    fn keeps(&self, k: usize) -> bool {
        let start = self.sim.attack_start.unwrap_or(1) + self.burn_in;
        k >= start && (k - start) % self.stride == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointCloud {
    pub dim: usize,
    /// Row-major `len × dim`.
    pub points: Vec<f64>,
    /// Whether every attack draw before the point kept `δ̄ᵀδ̄ ≤ α`.
    pub clean: Vec<bool>,
    pub trial: Vec<u64>,
    pub k: Vec<usize>,
    pub source: CloudSource,
    pub spec: Option<AttackSpec>,
    pub trials: usize,
    pub horizon: usize,
    pub master_seed: u64,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        (0..self.len()).map(|i| DVector::from_column_slice(self.point(i)))
    }

    /// Points whose whole attack history stayed within the threshold.
    pub fn clean_subcloud(&self) -> PointCloud {
        let keep: Vec<usize> = (0..self.len()).filter(|i| self.clean[*i]).collect();
        PointCloud {
            dim: self.dim,
            points: keep.iter().flat_map(|i| self.point(*i).to_vec()).collect(),
            clean: vec![true; keep.len()],
            trial: keep.iter().map(|i| self.trial[*i]).collect(),
            k: keep.iter().map(|i| self.k[*i]).collect(),
            ..self.clone()
        }
    }

    /// CSV `trial,k,<x|xv|xd>1..n,clean`, with the state columns named as in
    /// the simulation trace.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let prefix = match self.source {
            CloudSource::NoiseOnly => "xv",
            CloudSource::AttackOnly => "xd",
            CloudSource::Total => "x",
        };
        let mut header = vec!["trial".to_string(), "k".to_string()];
        header.extend((1..=self.dim).map(|i| format!("{prefix}{i}")));
        header.push("clean".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            write!(out, "{},{}", self.trial[i], self.k[i])?;
            for v in self.point(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{}", u8::from(self.clean[i]))?;
        }
        Ok(())
    }
}

/// Simulates `cfg.sim.trials` trials and collects the chosen state component
/// after the burn-in.
pub fn empirical_cloud(
    model: &PlantModel,
    detector: &DetectorConfig,
    cfg: &CloudConfig,
    spec: Option<&AttackSpec>,
    source: CloudSource,
) -> Result<PointCloud> {
    cfg.validate()?;
    let policy = spec.map(|s| make_policy(s, model)).transpose()?;
    let n = model.state_dim();
    let alpha = spec.map_or(detector.alpha, |s| s.alpha);
    struct Part {
        points: Vec<f64>,
        clean: Vec<bool>,
        k: Vec<usize>,
    }
    let one_trial = |trial: u64| -> Result<Part> {
        let mut part = Part {
            points: Vec::new(),
            clean: Vec::new(),
            k: Vec::new(),
        };
        let mut clean = true;
        run_trial(model, detector, &cfg.sim, policy.as_ref(), trial, |s| {
            if cfg.keeps(s.k) {
                let x = match source {
                    CloudSource::NoiseOnly => s.x_v,
                    CloudSource::AttackOnly => s.x_delta,
                    CloudSource::Total => s.x,
                };
                part.points.extend_from_slice(x.as_slice());
                part.clean.push(clean);
                part.k.push(s.k);
            }
            if s.attacked && s.delta_bar.norm_squared() > alpha {
                clean = false;
            }
        })?;
        Ok(part)
    };
    let parts = crate::par_map(0..cfg.sim.trials as u64, one_trial);
    let mut cloud = PointCloud {
        dim: n,
        points: Vec::new(),
        clean: Vec::new(),
        trial: Vec::new(),
        k: Vec::new(),
        source,
        spec: spec.cloned(),
        trials: cfg.sim.trials,
        horizon: cfg.sim.horizon,
        master_seed: cfg.sim.master_seed,
    };
    for (trial, part) in parts.into_iter().enumerate() {
        let part = part?;
        cloud.trial.extend(std::iter::repeat_n(trial as u64, part.clean.len()));
        cloud.points.extend(part.points);
        cloud.clean.extend(part.clean);
        cloud.k.extend(part.k);
    }
    if cloud.points.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCloud("non-finite state in cloud".into()));
    }
    Ok(cloud)
}

fn points_matrix(cloud: &PointCloud) -> DMatrix<f64> {
    DMatrix::from_column_slice(cloud.dim, cloud.len(), &cloud.points)
}

/// Second-moment fit `Q = s·M`, `M = (1/N) Σ x xᵀ`, with `s` the smallest
/// scale containing a fraction `quantile` of the points.
pub fn fit_ellipsoid_moment(cloud: &PointCloud, quantile: f64) -> Result<(Ellipsoid, f64)> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::Domain(format!("quantile {quantile} outside (0, 1]")));
    }
    let n = cloud.dim;
    if cloud.len() < n + 1 {
        return Err(Error::DegenerateCloud(format!("{} points in dimension {n}", cloud.len())));
    }
    let x = points_matrix(cloud);
    let m = linalg::symmetrize(&(&x * x.transpose() / cloud.len() as f64));
    let scale = linalg::max_abs(&m);
    let chol = (&m / scale.max(f64::MIN_POSITIVE))
        .cholesky()
        .filter(|_| scale > 0.0 && linalg::min_eigenvalue(&m) > 1e-12 * scale)
        .ok_or_else(|| Error::DegenerateCloud("second-moment matrix is singular".into()))?;
    let solved = chol.solve(&x) / scale;
    let mut d: Vec<f64> = (0..cloud.len()).map(|j| x.column(j).dot(&solved.column(j))).collect();
    d.sort_by(f64::total_cmp);
    let idx = ((quantile * d.len() as f64).ceil() as usize).clamp(1, d.len()) - 1;
    let s = d[idx];
    let e = Ellipsoid::new(m * s)?;
    let v = e.volume();
    Ok((e, v))
}

/// Minimum-volume enclosing ellipsoid by Khachiyan's algorithm. Returns the
/// centre and the shape matrix about it.
pub fn fit_ellipsoid_mvee(cloud: &PointCloud, tol: f64) -> Result<(DVector<f64>, Ellipsoid)> {
    let d = cloud.dim;
    let count = cloud.len();
    if count < d + 1 {
        return Err(Error::DegenerateCloud(format!("{count} points in dimension {d}")));
    }
    let p = points_matrix(cloud);
    let mut q = DMatrix::from_element(d + 1, count, 1.0);
    q.view_mut((0, 0), (d, count)).copy_from(&p);
    let mut u = DVector::from_element(count, 1.0 / count as f64);
    for _ in 0..100_000 {
        let x = &q * DMatrix::from_diagonal(&u) * q.transpose();
        let x_inv = linalg::spd_inverse(&linalg::symmetrize(&x), "lifted scatter")
            .map_err(|_| Error::DegenerateCloud("points span a lower-dimensional set".into()))?;
        let xq = &x_inv * &q;
        let (j, mj) = (0..count)
            .map(|j| (j, q.column(j).dot(&xq.column(j))))
            .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        let step = (mj - d as f64 - 1.0) / ((d as f64 + 1.0) * (mj - 1.0));
        let mut next = &u * (1.0 - step);
        next[j] += step;
        let change = (&next - &u).norm();
        u = next;
        if change < tol {
            let c = &p * &u;
            let scatter = &p * DMatrix::from_diagonal(&u) * p.transpose() - &c * c.transpose();
            // Shape of {x : (x−c)ᵀ A (x−c) ≤ 1} with A = (scatter)⁻¹ / d.
            let shape = linalg::symmetrize(&(scatter * d as f64));
            return Ok((c, Ellipsoid::new(shape)?));
        }
    }
    Err(Error::NoConvergence("Khachiyan iteration".into()))
}

pub const REPORT_SLACKS: [f64; 3] = [0.0, 1e-6, 1e-2];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainmentEntry {
    pub method: Method,
    pub target: Target,
    /// `(slack, fraction contained)` for each of [`REPORT_SLACKS`].
    pub fractions: Vec<(f64, f64)>,
    /// `max xᵀ Q⁺ x` over the cloud.
    pub max_membership: f64,
    pub escapes: usize,
    /// Bound volume over the moment-fit volume of the cloud.
    pub volume_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainmentReport {
    pub points: usize,
    pub source: CloudSource,
    pub fit_volume: Option<f64>,
    pub entries: Vec<ContainmentEntry>,
}

pub fn containment_report(cloud: &PointCloud, bounds: &[&ReachBound]) -> Result<ContainmentReport> {
    let fit_volume = fit_ellipsoid_moment(cloud, 1.0).ok().map(|(_, v)| v);
    let mut entries = Vec::with_capacity(bounds.len());
    for b in bounds {
        if b.dim() != cloud.dim {
            return Err(Error::DimensionMismatch(format!(
                "bound of dimension {} against a {}-dimensional cloud",
                b.dim(),
                cloud.dim
            )));
        }
        let members: Vec<f64> = cloud.iter().map(|x| b.membership(&x)).collect::<Result<_>>()?;
        let max_membership = members.iter().cloned().fold(0.0, f64::max);
        let fractions = REPORT_SLACKS
            .iter()
            .map(|s| {
                let inside = members.iter().filter(|m| **m <= 1.0 + s).count();
                (*s, if members.is_empty() { 1.0 } else { inside as f64 / members.len() as f64 })
            })
            .collect();
        entries.push(ContainmentEntry {
            method: b.method,
            target: b.target,
            fractions,
            max_membership,
            escapes: members.iter().filter(|m| **m > 1.0 + 1e-6).count(),
            volume_ratio: fit_volume.filter(|v| *v > 0.0).map(|v| b.volume / v),
        });
    }
    Ok(ContainmentReport {
        points: cloud.len(),
        source: cloud.source,
        fit_volume,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub c1: f64,
    pub w1: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapResult {
    pub alpha: f64,
    pub resolution: usize,
    pub cells: Vec<HeatmapCell>,
}

impl HeatmapResult {
    pub fn argmax(&self) -> Option<&HeatmapCell> {
        self.cells.iter().fold(None, |best: Option<&HeatmapCell>, c| match best {
            Some(b) if b.volume >= c.volume => Some(b),
            _ => Some(c),
        })
    }

    /// CSV `c1,w1,volume`, one row per admissible cell.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "c1,w1,volume")?;
        for c in &self.cells {
            writeln!(out, "{},{},{}", c.c1, c.w1, c.volume)?;
        }
        Ok(())
    }
}

/// Admissible `(c1, w1)` lattice points: `R` levels per axis over `[0, α]`,
/// keeping `w1 ≤ 2·min(c1, α − c1)`.
pub fn heatmap_grid(alpha: f64, resolution: usize) -> Result<Vec<(f64, f64)>> {
    if resolution < 4 {
        return Err(Error::InvalidConfig("heatmap resolution must be at least 4".into()));
    }
    let step = alpha / (resolution - 1) as f64;
    let mut cells = Vec::new();
    for i in 0..resolution {
        let c1 = if i == resolution - 1 { alpha } else { i as f64 * step };
        for j in 0..resolution {
            let w1 = if j == resolution - 1 { alpha } else { j as f64 * step };
            let room = 2.0 * c1.min(alpha - c1);
            if w1 <= room + 1e-12 * alpha {
                cells.push((c1, w1.min(room.max(0.0))));
            }
        }
    }
    Ok(cells)
}

/// Moment-fit volume of the attack-driven cloud for a zero-alarm `(c1, w1)`.
/// An all-zero cloud (`c1 = w1 = 0`) has volume zero.
pub fn heatmap_cell_volume(
    model: &PlantModel,
    detector: &DetectorConfig,
    c1: f64,
    w1: f64,
    cfg: &CloudConfig,
) -> Result<f64> {
    let spec = AttackSpec::zero_alarm(detector.alpha, c1, w1)?;
    let cloud = empirical_cloud(model, detector, cfg, Some(&spec), CloudSource::AttackOnly)?;
    if cloud.points.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    match fit_ellipsoid_moment(&cloud, 1.0) {
        Ok((_, v)) => Ok(v),
        Err(Error::DegenerateCloud(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Sweeps the admissible `(c1, w1)` triangle. Every cell reuses the same
/// seeds, so cells differ only through the attack parameters.
pub fn volume_heatmap(
    model: &PlantModel,
    detector: &DetectorConfig,
    resolution: usize,
    cfg: &CloudConfig,
) -> Result<HeatmapResult> {
    let grid = heatmap_grid(detector.alpha, resolution)?;
    let cells = grid
        .into_iter()
        .map(|(c1, w1)| {
            heatmap_cell_volume(model, detector, c1, w1, cfg).map(|volume| HeatmapCell { c1, w1, volume })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HeatmapResult {
        alpha: detector.alpha,
        resolution,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{self, GeomSumConfig};
    use crate::system::reference_system;

    fn cloud_of(points: &[[f64; 2]]) -> PointCloud {
        PointCloud {
            dim: 2,
            points: points.iter().flatten().copied().collect(),
            clean: vec![true; points.len()],
            trial: vec![0; points.len()],
            k: (0..points.len()).collect(),
            source: CloudSource::Total,
            spec: None,
            trials: 1,
            horizon: points.len(),
            master_seed: 0,
        }
    }

    #[test]
    fn circle_moment_fit() {
        let pts: Vec<[f64; 2]> = (0..3600)
            .map(|i| {
                let t = i as f64 / 3600.0 * std::f64::consts::TAU;
                [t.cos(), t.sin()]
            })
            .collect();
        let (e, v) = fit_ellipsoid_moment(&cloud_of(&pts), 1.0).unwrap();
        assert!(linalg::max_abs(&(e.shape() - DMatrix::identity(2, 2))) < 0.02);
        assert!((v - std::f64::consts::PI).abs() < 0.02 * std::f64::consts::PI);
    }

    #[test]
    fn repeated_point_is_degenerate() {
        let pts = vec![[1.0, 2.0]; 50];
        assert!(matches!(fit_ellipsoid_moment(&cloud_of(&pts), 1.0), Err(Error::DegenerateCloud(_))));
        let pts = vec![[0.0, 0.0]; 50];
        assert!(matches!(fit_ellipsoid_moment(&cloud_of(&pts), 1.0), Err(Error::DegenerateCloud(_))));
    }

    #[test]
    fn mvee_of_cross_is_unit_disk() {
        let cloud = cloud_of(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]);
        let (c, e) = fit_ellipsoid_mvee(&cloud, 1e-7).unwrap();
        assert!(c.norm() < 1e-6);
        assert!(linalg::max_abs(&(e.shape() - DMatrix::identity(2, 2))) < 1e-4);
    }

    #[test]
    fn quantile_fit_shrinks() {
        let pts: Vec<[f64; 2]> = (1..=100).map(|i| [i as f64 / 100.0, (i % 7) as f64 / 7.0 - 0.5]).collect();
        let cloud = cloud_of(&pts);
        let (_, full) = fit_ellipsoid_moment(&cloud, 1.0).unwrap();
        let (_, half) = fit_ellipsoid_moment(&cloud, 0.5).unwrap();
        assert!(half < full);
    }

    #[test]
    fn grid_is_admissible() {
        let alpha = 5.99;
        let grid = heatmap_grid(alpha, 16).unwrap();
        assert_eq!(grid.len(), 128);
        for (c1, w1) in grid {
            assert!(c1 - w1 / 2.0 >= -1e-12 && c1 + w1 / 2.0 <= alpha + 1e-12);
            assert!(AttackSpec::zero_alarm(alpha, c1, w1).is_ok());
        }
        assert!(heatmap_grid(alpha, 3).is_err());
    }

    fn setup() -> (PlantModel, DetectorConfig) {
        let model = reference_system(None).unwrap();
        let det = DetectorConfig::tuned(model.residual_covariance(), 0.05).unwrap();
        (model, det)
    }

    #[test]
    fn boundary_attack_cloud_inside_geometric_bound() {
        let (model, det) = setup();
        let spec = AttackSpec::preset("ZA.C", det.alpha, 0.05).unwrap();
        let cloud = empirical_cloud(&model, &det, &CloudConfig::new(100, 150, 1), Some(&spec), CloudSource::AttackOnly).unwrap();
        assert_eq!(cloud.len(), 100 * 100);
        let b = geom::attack_state_reach_geom(&model, det.alpha, &GeomSumConfig::default()).unwrap();
        let report = containment_report(&cloud, &[&b]).unwrap();
        assert_eq!(report.entries[0].fractions[1].1, 1.0);
        assert!(report.entries[0].volume_ratio.unwrap() >= 1.0);
    }

    #[test]
    fn noise_cloud_state_equals_error() {
        let (model, det) = setup();
        let spec = AttackSpec::preset("ZA.B", det.alpha, 0.05).unwrap();
        let mut cfg = CloudConfig::new(20, 120, 2);
        cfg.sim.truncate_noise = true;
        let mut max_gap = 0.0_f64;
        run_trial(&model, &det, &cfg.sim, Some(&make_policy(&spec, &model).unwrap()), 0, |s| {
            max_gap = max_gap.max((s.x_v - s.e_v).amax());
        })
        .unwrap();
        assert!(max_gap <= 1e-12);
        let cloud = empirical_cloud(&model, &det, &cfg, Some(&spec), CloudSource::NoiseOnly).unwrap();
        let b = geom::noise_reach_geom(&model, det.vbar(2).unwrap(), &GeomSumConfig::default()).unwrap();
        assert_eq!(containment_report(&cloud, &[&b]).unwrap().entries[0].escapes, 0);
    }

    #[test]
    fn clouds_are_reproducible_and_centred() {
        let (model, det) = setup();
        let spec = AttackSpec::preset("ZA.B", det.alpha, 0.05).unwrap();
        let cfg = CloudConfig::new(200, 100, 77);
        let a = empirical_cloud(&model, &det, &cfg, Some(&spec), CloudSource::AttackOnly).unwrap();
        let b = empirical_cloud(&model, &det, &cfg, Some(&spec), CloudSource::AttackOnly).unwrap();
        assert_eq!(a, b);
        let n = a.len() as f64;
        for j in 0..2 {
            let vals: Vec<f64> = (0..a.len()).map(|i| a.point(i)[j]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            // Points within a trial are correlated; trials are independent.
            assert!(mean.abs() < 4.0 * sd / (cfg.sim.trials as f64).sqrt());
        }
    }

    #[test]
    fn hidden_clean_flags_track_threshold() {
        let (model, det) = setup();
        let spec = AttackSpec::preset("H.D", det.alpha, 0.05).unwrap();
        let cloud = empirical_cloud(&model, &det, &CloudConfig::new(20, 100, 5), Some(&spec), CloudSource::AttackOnly).unwrap();
        let clean = cloud.clean_subcloud();
        assert!(clean.len() < cloud.len());
        assert!(clean.clean.iter().all(|c| *c));
    }

    #[test]
    fn heatmap_csv_rows() {
        let res = HeatmapResult {
            alpha: 1.0,
            resolution: 4,
            cells: vec![HeatmapCell { c1: 0.0, w1: 0.0, volume: 0.0 }, HeatmapCell { c1: 1.0, w1: 0.0, volume: 2.0 }],
        };
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "c1,w1,volume\n0,0,0\n1,0,2\n");
        assert_eq!(res.argmax().unwrap().c1, 1.0);
    }
}
