//! End-to-end checks of the whole pipeline against a resolved scenario:
//! gains, tuning, detector calibration, attack stealth, bound soundness, the
//! heatmap shape, hidden-attack escapes and the ellipsoid property suite.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::attack::{make_policy, AttackKind, AttackSpec};
use crate::bound::ReachBound;
use crate::detector::{chi2_cdf, chi2_quantile, DetectorConfig};
use crate::ellipsoid::{self, Ellipsoid};
use crate::error::Result;
use crate::geom::{geometric_bounds, GeomBounds};
use crate::linalg;
use crate::lmi::{lmi_bounds, total_state_bound_lmi, LmiBounds};
use crate::montecarlo::{
    containment_report, empirical_cloud, heatmap_cell_volume, volume_heatmap, CloudConfig, CloudSource,
};
use crate::plant::{run_trial, PlantModel, SimConfig};
use crate::scenario::Resolved;
use crate::system;

/// Sample sizes. `full` matches the documented acceptance sizes; `quick`
/// is a smoke-test scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scale {
    /// Steps for the detector calibration and per attack spec.
    pub steps: usize,
    /// Trials per Monte-Carlo cloud (100 kept points each).
    pub cloud_trials: usize,
    pub heatmap_res: usize,
    /// Trials per heatmap cell (10 kept points each).
    pub heatmap_trials: usize,
    pub pairs: usize,
}

impl Scale {
    pub fn full() -> Self {
        Scale {
            steps: 1_000_000,
            cloud_trials: 1000,
            heatmap_res: 16,
            heatmap_trials: 1000,
            pairs: 1000,
        }
    }

    pub fn quick() -> Self {
        Scale {
            steps: 100_000,
            cloud_trials: 100,
            heatmap_res: 8,
            heatmap_trials: 200,
            pairs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub limit_seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] AC-{} {}: {} ({:.2}s, limit {}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds,
            self.limit_seconds
        )
    }
}

pub const CHECK_NAMES: [&str; 10] = [
    "riccati regression",
    "threshold tuning",
    "false-alarm calibration",
    "zero-alarm stealth",
    "hidden-attack rate",
    "geometric bound soundness",
    "lmi bound soundness",
    "heatmap maximum",
    "hidden-attack escapes",
    "ellipsoid properties",
];

const LIMITS: [f64; 10] = [1.0, 1.0, 30.0, 60.0, 60.0, 300.0, 300.0, 600.0, 120.0, 30.0];

/// Runs one check; property failures and pipeline errors both fail it, and
/// so does exceeding the time limit.
pub fn run_check(id: u8, r: &Resolved, scale: &Scale) -> CheckResult {
    let start = Instant::now();
    let outcome = match id {
        1 => check_riccati(r),
        2 => check_tuning(),
        3 => check_false_alarms(r, scale),
        4 => check_zero_alarm(r, scale),
        5 => check_hidden_rate(r, scale),
        6 => check_geometric(r, scale),
        7 => check_lmi(r, scale),
        8 => check_heatmap(r, scale),
        9 => check_escapes(r, scale),
        10 => check_ellipsoids(scale),
        _ => Ok((false, format!("no check {id}"))),
    };
    let seconds = start.elapsed().as_secs_f64();
    let limit_seconds = LIMITS[(id as usize).clamp(1, 10) - 1];
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        id,
        name: CHECK_NAMES[(id as usize).clamp(1, 10) - 1],
        passed: ok && seconds < limit_seconds,
        detail,
        seconds,
        limit_seconds,
    }
}

pub fn run_all(r: &Resolved, scale: &Scale) -> Vec<CheckResult> {
    (1..=10).map(|id| run_check(id, r, scale)).collect()
}

type Outcome = Result<(bool, String)>;

fn is_reference(model: &PlantModel) -> bool {
    let m = system::mat2;
    [
        (model.f(), m(system::F)),
        (model.g(), m(system::G)),
        (model.c(), m(system::C)),
        (model.k(), m(system::K)),
        (model.r1(), m(system::R1)),
        (model.r2(), m(system::R2)),
    ]
    .iter()
    .all(|(a, b)| a.shape() == b.shape() && *a == b)
}

/// For the reference loop, Σ and L against the rounded published values;
/// for other models, the Riccati residual and the gain formula.
fn check_riccati(r: &Resolved) -> Outcome {
    let model = &r.model;
    let diag = model.diagnostics();
    if is_reference(model) {
        let ds = linalg::max_abs(&(model.residual_covariance() - system::mat2(system::SIGMA_REFERENCE)));
        let dl = linalg::max_abs(&(model.observer_gain() - system::mat2(system::L_REFERENCE)));
        Ok((
            ds <= 2e-3 && dl <= 2e-3,
            format!("|ΔΣ| = {ds:.2e}, |ΔL| = {dl:.2e} (tol 2e-3)"),
        ))
    } else {
        let p = model.error_covariance();
        let sigma = model.residual_covariance();
        let l = model.f() * p * model.c().transpose() * linalg::spd_inverse(sigma, "residual covariance")?;
        let dl = linalg::max_abs(&(model.observer_gain() - l));
        Ok((
            diag.riccati_residual <= 1e-9 && dl <= 1e-9,
            format!("riccati residual {:.2e}, gain-formula gap {dl:.2e}", diag.riccati_residual),
        ))
    }
}

fn check_tuning() -> Outcome {
    let q = chi2_quantile(0.95, 2)?;
    let closed = -2.0 * 0.05_f64.ln();
    let mut worst = 0.0_f64;
    for i in 1..=99 {
        let p = i as f64 / 100.0;
        for dof in 1..=10 {
            worst = worst.max((chi2_cdf(chi2_quantile(p, dof)?, dof)? - p).abs());
        }
    }
    Ok((
        (q - 5.99146).abs() <= 1e-4 && (q - closed).abs() <= 1e-9 && worst <= 1e-9,
        format!("alpha = {q:.6}, round-trip residual {worst:.1e}"),
    ))
}

#[derive(Default)]
struct Tally {
    steps: usize,
    alarms: usize,
    residual_gap: f64,
}

/// Counts attacked (or, without a policy, all) steps and alarms.
fn tally(r: &Resolved, spec: Option<&AttackSpec>, steps: usize, seed: u64) -> Result<Tally> {
    let trials = 100;
    let mut cfg = SimConfig::new(steps.div_ceil(trials));
    cfg.trials = trials;
    cfg.master_seed = seed;
    cfg.attack_start = spec.map(|_| 1);
    let policy = spec.map(|s| make_policy(s, &r.model)).transpose()?;
    let root = r.model.residual_covariance_sqrt();
    let parts = crate::par_map(0..trials as u64, |trial| {
        let mut t = Tally::default();
        run_trial(&r.model, &r.detector, &cfg, policy.as_ref(), trial, |s| {
            if policy.is_none() || s.attacked {
                t.steps += 1;
                t.alarms += usize::from(s.alarm);
                if policy.is_some() {
                    t.residual_gap = t.residual_gap.max((s.r - root * s.delta_bar).amax());
                }
            }
        })
        .map(|_| t)
    });
    parts.into_iter().try_fold(Tally::default(), |acc, t| {
        let t = t?;
        Ok(Tally {
            steps: acc.steps + t.steps,
            alarms: acc.alarms + t.alarms,
            residual_gap: acc.residual_gap.max(t.residual_gap),
        })
    })
}

fn rate_window(det: &DetectorConfig) -> (f64, f64) {
    let a = det.target_rate;
    (a - 0.1 * a, a + 0.1 * a)
}

fn check_false_alarms(r: &Resolved, scale: &Scale) -> Outcome {
    let t = tally(r, None, scale.steps, r.sim.master_seed)?;
    let rate = t.alarms as f64 / t.steps as f64;
    let (lo, hi) = rate_window(&r.detector);
    Ok((
        t.steps >= scale.steps && rate >= lo && rate <= hi,
        format!("{} alarms in {} steps, rate {rate:.5} (target [{lo:.4}, {hi:.4}])", t.alarms, t.steps),
    ))
}

fn presets(r: &Resolved, names: &[&str]) -> Result<Vec<(String, AttackSpec)>> {
    names
        .iter()
        .map(|n| Ok((n.to_string(), AttackSpec::preset(n, r.detector.alpha, r.detector.target_rate)?)))
        .collect()
}

const ZA: [&str; 3] = ["ZA.A", "ZA.B", "ZA.C"];
const HIDDEN: [&str; 4] = ["H.A", "H.B", "H.C", "H.D"];

fn check_zero_alarm(r: &Resolved, scale: &Scale) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (name, spec)) in presets(r, &ZA)?.iter().enumerate() {
        let t = tally(r, Some(spec), scale.steps, r.sim.master_seed + i as u64)?;
        ok &= t.steps >= scale.steps && t.alarms == 0 && t.residual_gap <= 1e-9;
        parts.push(format!("{name}: {} alarms/{} steps, |r-Σ½δ̄| {:.1e}", t.alarms, t.steps, t.residual_gap));
    }
    Ok((ok, parts.join("; ")))
}

fn check_hidden_rate(r: &Resolved, scale: &Scale) -> Outcome {
    let (lo, hi) = rate_window(&r.detector);
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (name, spec)) in presets(r, &HIDDEN)?.iter().enumerate() {
        let t = tally(r, Some(spec), scale.steps, r.sim.master_seed + 10 + i as u64)?;
        let rate = t.alarms as f64 / t.steps as f64;
        ok &= t.steps >= scale.steps && rate >= lo && rate <= hi;
        parts.push(format!("{name}: {rate:.5}"));
    }
    Ok((ok, format!("alarm rates {} (target [{lo:.4}, {hi:.4}])", parts.join(", "))))
}

fn cloud_config(r: &Resolved, scale: &Scale, seed_offset: u64) -> CloudConfig {
    let mut cfg = CloudConfig::new(scale.cloud_trials, 150, r.sim.master_seed + seed_offset);
    cfg.sim.truncate_noise = true;
    cfg
}

/// Largest membership value of `bound` over a cloud, and the cloud size.
fn worst_membership(
    r: &Resolved,
    cfg: &CloudConfig,
    spec: Option<&AttackSpec>,
    source: CloudSource,
    bounds: &[&ReachBound],
) -> Result<(usize, Vec<f64>)> {
    let cloud = empirical_cloud(&r.model, &r.detector, cfg, spec, source)?;
    let report = containment_report(&cloud, bounds)?;
    Ok((cloud.len(), report.entries.iter().map(|e| e.max_membership).collect()))
}

/// Attack-driven and total clouds for each zero-alarm preset, and one
/// noise-driven cloud, scored against `(noise, attack_state, total)` bounds
/// with membership slack 1e-6.
fn soundness(r: &Resolved, scale: &Scale, noise: &ReachBound, attack: &ReachBound, total: &ReachBound) -> Outcome {
    const SLACK: f64 = 1e-6;
    let mut ok = true;
    let mut parts = Vec::new();
    // The noise bound covers the error recursion `e⁺ = F e + v`, which holds
    // only while an attacker cancels `Ce + η`; any zero-alarm spec will do.
    let boundary = AttackSpec::preset("ZA.C", r.detector.alpha, r.detector.target_rate)?;
    let cfg = cloud_config(r, scale, 100);
    let (count, m) = worst_membership(r, &cfg, Some(&boundary), CloudSource::NoiseOnly, &[noise])?;
    ok &= count >= 100 * scale.cloud_trials && m[0] <= 1.0 + SLACK;
    parts.push(format!("noise max {:.4}", m[0]));
    for (i, (name, spec)) in presets(r, &ZA)?.iter().enumerate() {
        let cfg = cloud_config(r, scale, 200 + i as u64);
        let (count, m) = worst_membership(r, &cfg, Some(spec), CloudSource::AttackOnly, &[attack])?;
        ok &= count >= 100 * scale.cloud_trials && m[0] <= 1.0 + SLACK;
        let (_, t) = worst_membership(r, &cfg, Some(spec), CloudSource::Total, &[total])?;
        ok &= t[0] <= 1.0 + SLACK;
        parts.push(format!("{name} attack {:.4} total {:.4}", m[0], t[0]));
    }
    Ok((ok, format!("max xᵀPx: {}", parts.join(", "))))
}

fn geometric(r: &Resolved) -> Result<GeomBounds> {
    geometric_bounds(&r.model, r.detector.alpha, r.vbar, &r.geom)
}

fn check_geometric(r: &Resolved, scale: &Scale) -> Outcome {
    let g = geometric(r)?;
    let total = crate::geom::total_state_bound_geom(&g.noise, &g.attack_state)?;
    soundness(r, scale, &g.noise, &g.attack_state, &total)
}

fn lmi(r: &Resolved) -> Result<LmiBounds> {
    lmi_bounds(&r.model, r.detector.alpha, r.vbar, &r.lmi)
}

fn check_lmi(r: &Resolved, scale: &Scale) -> Outcome {
    let b = lmi(r)?;
    let g = geometric(r)?;
    let total = total_state_bound_lmi(&b.noise, &b.attack_state)?;
    let pairs = [
        (&b.noise, &g.noise),
        (&b.attack_error, &g.attack_error),
        (&b.attack_state, &g.attack_state),
    ];
    let min_eig = pairs
        .iter()
        .filter_map(|(l, _)| l.diagnostics.lmi_min_eig)
        .fold(f64::INFINITY, f64::min);
    let ordered = pairs.iter().all(|(l, g)| l.volume >= g.volume);
    let ratios: Vec<String> = pairs
        .iter()
        .map(|(l, g)| format!("{} {:.3}", l.target.name(), l.volume / g.volume))
        .collect();
    let (sound, detail) = soundness(r, scale, &b.noise, &b.attack_state, &total)?;
    Ok((
        sound && ordered && min_eig >= -1e-7,
        format!("{detail}; lmi/geom volume {}; min LMI eig {min_eig:.1e}", ratios.join(", ")),
    ))
}

fn check_heatmap(r: &Resolved, scale: &Scale) -> Outcome {
    let mut cfg = CloudConfig::new(scale.heatmap_trials, 150, r.sim.master_seed + 300);
    cfg.stride = 10;
    let map = volume_heatmap(&r.model, &r.detector, scale.heatmap_res, &cfg)?;
    let alpha = r.detector.alpha;
    let best = map.argmax().expect("grid is non-empty");
    let probe = heatmap_cell_volume(&r.model, &r.detector, alpha / 8.0, alpha / 10.0, &cfg)?;
    let at_corner = best.c1 == alpha && best.w1 == 0.0;
    let margin = best.volume / probe;
    Ok((
        at_corner && margin >= 1.2,
        format!(
            "{} cells, argmax at (c1 {:.4}, w1 {:.4}) volume {:.4}; (α/8, α/10) volume {probe:.4}, ratio {margin:.2}",
            map.cells.len(),
            best.c1,
            best.w1,
            best.volume
        ),
    ))
}

fn check_escapes(r: &Resolved, scale: &Scale) -> Outcome {
    let spec = AttackSpec::preset("H.D", r.detector.alpha, r.detector.target_rate)?;
    debug_assert_eq!(spec.kind, AttackKind::Hidden);
    let g = geometric(r)?;
    let total = crate::geom::total_state_bound_geom(&g.noise, &g.attack_state)?;
    let cloud = empirical_cloud(&r.model, &r.detector, &cloud_config(r, scale, 400), Some(&spec), CloudSource::Total)?;
    let all = containment_report(&cloud, &[&total])?;
    let clean = cloud.clean_subcloud();
    let sub = containment_report(&clean, &[&total])?;
    let escapes = all.entries[0].escapes;
    let clean_max = sub.entries[0].max_membership;
    Ok((
        escapes > 0 && !clean.is_empty() && clean_max <= 1.0 + 1e-6,
        format!(
            "{escapes} of {} points escape (max xᵀPx {:.1}); clean sub-cloud {} points, max {clean_max:.4}",
            cloud.len(),
            all.entries[0].max_membership,
            clean.len()
        ),
    ))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let scale: f64 = rng.random_range(0.05..5.0);
    (&a * a.transpose() + DMatrix::identity(n, n) * 1e-2) * scale
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let g: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    g.normalize()
}

/// Point on the boundary of `E(Q)` in direction `u`: `Q½ u`.
fn boundary_point(root: &DMatrix<f64>, u: &DVector<f64>) -> DVector<f64> {
    root * u
}

fn check_ellipsoids(scale: &Scale) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut sum_worst = 0.0_f64;
    let mut image_worst = 0.0_f64;
    let mut sqrt_worst = 0.0_f64;
    for i in 0..scale.pairs {
        let n = 2 + i % 3;
        let q1 = random_spd(&mut rng, n);
        let q2 = random_spd(&mut rng, n);
        let (e1, e2) = (Ellipsoid::new(q1.clone())?, Ellipsoid::new(q2.clone())?);
        let sum = ellipsoid::minkowski_sum_pair(&e1, &e2)?;
        let (r1, r2) = (ellipsoid::sym_sqrt(&q1)?, ellipsoid::sym_sqrt(&q2)?);
        for _ in 0..4 {
            let x = boundary_point(&r1, &random_unit(&mut rng, n));
            let y = boundary_point(&r2, &random_unit(&mut rng, n));
            sum_worst = sum_worst.max(sum.membership(&(x + y))?);
        }
        let m = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let image = e1.linear_image(&m)?;
        let radius: f64 = rng.random_range(0.0..1.0);
        let x = boundary_point(&r1, &random_unit(&mut rng, n)) * radius;
        image_worst = image_worst.max(image.membership(&(&m * x))?);
        sqrt_worst = sqrt_worst.max(linalg::max_abs(&(ellipsoid::sym_sqrt(&(&r1 * &r1))? - &r1)) / linalg::max_abs(&r1).max(1.0));
    }
    let ball = ellipsoid::minkowski_sum_pair(&Ellipsoid::ball(3, 1.5), &Ellipsoid::ball(3, 2.5))?;
    let ball_gap = linalg::max_abs(&(ball.shape() - DMatrix::identity(3, 3) * 16.0)) / 16.0;
    Ok((
        sum_worst <= 1.0 + 1e-9 && image_worst <= 1.0 + 1e-9 && ball_gap <= 1e-9 && sqrt_worst <= 1e-8,
        format!(
            "{} pairs: sum max {sum_worst:.9}, image max {image_worst:.9}, ball gap {ball_gap:.1e}, sqrt gap {sqrt_worst:.1e}",
            scale.pairs
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    #[test]
    fn cheap_checks_pass_on_reference() {
        let r = Scenario::reference().resolve().unwrap();
        let scale = Scale::quick();
        for id in [1, 2, 10] {
            let c = run_check(id, &r, &scale);
            assert!(c.passed, "{}", c.line());
        }
    }

    #[test]
    fn riccati_check_on_other_models() {
        let mut s = Scenario::reference();
        s.model.r2 = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = s.resolve().unwrap();
        let c = run_check(1, &r, &Scale::quick());
        assert!(c.passed, "{}", c.line());
        assert!(c.detail.contains("riccati residual"));
    }

    #[test]
    fn unknown_check_fails() {
        let r = Scenario::reference().resolve().unwrap();
        assert!(!run_check(11, &r, &Scale::quick()).passed);
    }
}
