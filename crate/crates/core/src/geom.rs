//! Geometric bounds: truncated Minkowski sums of per-step input ellipsoids.
//!
//! Each step's input contributes an independent ellipsoid propagated through
//! the system's impulse response; the infinite sum is cut once the terms are
//! negligible and fitted with one N-ary outer ellipsoid.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bound::{self, Method, ReachBound, Target};
use crate::ellipsoid::{minkowski_sum_many, Ellipsoid};
use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::PlantModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeomSumConfig {
    /// Relative size below which remaining terms are dropped.
    pub tail_tol: f64,
    pub max_terms: usize,
}

impl Default for GeomSumConfig {
    fn default() -> Self {
        GeomSumConfig {
            tail_tol: 1e-12,
            max_terms: 500,
        }
    }
}

impl GeomSumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tail_tol > 0.0 && self.tail_tol < 1.0) || self.max_terms == 0 {
            return Err(Error::InvalidConfig(
                "tail_tol must lie in (0, 1) and max_terms be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Collects terms `Q_k = M_k W M_kᵀ` until one is negligible.
///
/// A term is negligible when its radius `√tr(Q_k)` and its volume
/// `√det(Q_k)` are both below `tail_tol` relative to the largest seen so far.
/// Radius units keep the omitted tail's effect on volume at the `tail_tol`
/// scale; the running maximum handles sums whose first term is not largest.
fn collect_terms<I>(maps: I, weight: &DMatrix<f64>, cfg: &GeomSumConfig) -> Result<Vec<Ellipsoid>>
where
    I: IntoIterator<Item = DMatrix<f64>>,
{
    cfg.validate()?;
    let mut terms = Vec::new();
    let mut max_trace = 0.0_f64;
    let mut max_det = 0.0_f64;
    for m in maps.into_iter().take(cfg.max_terms + 1) {
        let q = linalg::symmetrize(&(&m * weight * m.transpose()));
        let trace = q.trace().max(0.0);
        let det = q.determinant().max(0.0);
        let small_radius = max_trace > 0.0 && (trace / max_trace).sqrt() < cfg.tail_tol;
        let small_volume = max_det == 0.0 || (det / max_det).sqrt() < cfg.tail_tol;
        if small_radius && small_volume {
            return Ok(terms);
        }
        if terms.len() == cfg.max_terms {
            return Err(Error::MaxTermsExceeded(cfg.max_terms));
        }
        max_trace = max_trace.max(trace);
        max_det = max_det.max(det);
        terms.push(Ellipsoid::new(q)?);
    }
    Err(Error::MaxTermsExceeded(cfg.max_terms))
}

fn powers(a: &DMatrix<f64>, start: usize) -> impl Iterator<Item = DMatrix<f64>> + '_ {
    let n = a.nrows();
    let mut current = (0..start).fold(DMatrix::identity(n, n), |acc, _| &acc * a);
    std::iter::from_fn(move || {
        let out = current.clone();
        current = &current * a;
        Some(out)
    })
}

fn fold(terms: Vec<Ellipsoid>, n: usize, target: Target) -> Result<ReachBound> {
    let used = terms.len();
    let shape = if terms.iter().all(Ellipsoid::is_zero) {
        Ellipsoid::zero(n)
    } else {
        minkowski_sum_many(&terms)?
    };
    let mut b = ReachBound::new(shape, Method::Geometric, target);
    b.diagnostics.terms_used = Some(used);
    Ok(b)
}

fn require_stable(model: &PlantModel) -> Result<()> {
    let rho = linalg::spectral_radius(model.f());
    if rho >= 1.0 {
        return Err(Error::UnstableF(rho));
    }
    Ok(())
}

/// `⊕_{k≥0} E(v̄ F^k R1 F^kᵀ)`; bounds both the noise-driven state and error.
pub fn noise_reach_geom(model: &PlantModel, vbar: f64, cfg: &GeomSumConfig) -> Result<ReachBound> {
    require_stable(model)?;
    let n = model.state_dim();
    if linalg::max_abs(model.r1()) == 0.0 {
        return fold(Vec::new(), n, Target::NoiseError);
    }
    let terms = collect_terms(powers(model.f(), 0), &(model.r1() * vbar), cfg)?;
    fold(terms, n, Target::NoiseError)
}

/// `⊕_{k≥0} E(α F^k LΣLᵀ F^kᵀ)` for the attack-driven estimation error.
///
/// An extension beyond the noise and attack-state sums: the same
/// construction applied to `e⁺ = F e − LΣ½δ̄`.
pub fn attack_error_reach_geom(model: &PlantModel, alpha: f64, cfg: &GeomSumConfig) -> Result<ReachBound> {
    require_stable(model)?;
    let n = model.state_dim();
    let l = model.observer_gain();
    let input = linalg::symmetrize(&(l * model.residual_covariance() * l.transpose() * alpha));
    if linalg::max_abs(&input) == 0.0 {
        return fold(Vec::new(), n, Target::AttackError);
    }
    let terms = collect_terms(powers(model.f(), 0), &input, cfg)?;
    fold(terms, n, Target::AttackError)
}

/// `⊕_{k≥1} E(α H_k LΣLᵀ H_kᵀ)` with `H_k = (F+GK)^k − F^k`, so `H_1 = GK`.
pub fn attack_state_reach_geom(model: &PlantModel, alpha: f64, cfg: &GeomSumConfig) -> Result<ReachBound> {
    require_stable(model)?;
    let closed = model.closed_loop();
    let rho = linalg::spectral_radius(&closed);
    if rho >= 1.0 {
        return Err(Error::UnstableClosedLoop(rho));
    }
    let n = model.state_dim();
    let l = model.observer_gain();
    let input = linalg::symmetrize(&(l * model.residual_covariance() * l.transpose() * alpha));
    if linalg::max_abs(&input) == 0.0 || linalg::max_abs(&model.feedback_coupling()) == 0.0 {
        return fold(Vec::new(), n, Target::AttackState);
    }
    let h = powers(&closed, 1).zip(powers(model.f(), 1)).map(|(a, f)| a - f);
    let terms = collect_terms(h, &input, cfg)?;
    fold(terms, n, Target::AttackState)
}

pub fn total_state_bound_geom(noise: &ReachBound, attack_state: &ReachBound) -> Result<ReachBound> {
    bound::total_state_bound(noise, attack_state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeomBounds {
    pub noise: ReachBound,
    pub attack_error: ReachBound,
    pub attack_state: ReachBound,
}

pub fn geometric_bounds(model: &PlantModel, alpha: f64, vbar: f64, cfg: &GeomSumConfig) -> Result<GeomBounds> {
    Ok(GeomBounds {
        noise: noise_reach_geom(model, vbar, cfg)?,
        attack_error: attack_error_reach_geom(model, alpha, cfg)?,
        attack_state: attack_state_reach_geom(model, alpha, cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectorConfig;
    use crate::plant::build_model;
    use crate::system::{mat2, reference_system, C, F, G, K, R1, R2};

    fn model_with(f: DMatrix<f64>, g: DMatrix<f64>, k: DMatrix<f64>, r1: DMatrix<f64>) -> PlantModel {
        build_model(f, g, mat2(C), k, r1, mat2(R2), None).unwrap()
    }

    #[test]
    fn nilpotent_plant_is_one_step() {
        let m = model_with(DMatrix::zeros(2, 2), mat2(G), mat2(K) * 0.1, mat2(R1));
        let b = noise_reach_geom(&m, 3.0, &GeomSumConfig::default()).unwrap();
        assert_eq!(b.diagnostics.terms_used, Some(1));
        assert!(linalg::max_abs(&(b.shape.shape() - mat2(R1) * 3.0)) < 1e-15);
        let e = attack_error_reach_geom(&m, 2.0, &GeomSumConfig::default()).unwrap();
        let l = m.observer_gain();
        let expect = l * m.residual_covariance() * l.transpose() * 2.0;
        assert!(linalg::max_abs(&(e.shape.shape() - expect)) < 1e-15);
    }

    #[test]
    fn geometric_series_of_balls() {
        let m = model_with(DMatrix::identity(2, 2) * 0.5, mat2(G), mat2(K) * 0.1, DMatrix::identity(2, 2));
        let b = noise_reach_geom(&m, 1.0, &GeomSumConfig::default()).unwrap();
        assert!(linalg::max_abs(&(b.shape.shape() - DMatrix::identity(2, 2) * 4.0)) < 1e-6);
    }

    #[test]
    fn term_determinants_decay_geometrically() {
        let model = reference_system(None).unwrap();
        let vbar = 5.99;
        let r1 = model.r1();
        let det_f = model.f().determinant();
        for (k, fk) in powers(model.f(), 0).take(10).enumerate() {
            let q = &fk * r1 * fk.transpose() * vbar;
            let expect = vbar.powi(2) * r1.determinant() * det_f.powi(2 * k as i32);
            assert!((q.determinant() - expect).abs() <= 1e-9 * expect.abs());
        }
    }

    #[test]
    fn zero_feedback_gives_point() {
        let m = build_model(mat2(F), mat2(G), mat2(C), DMatrix::zeros(2, 2), mat2(R1), mat2(R2), None).unwrap();
        let b = attack_state_reach_geom(&m, 6.0, &GeomSumConfig::default()).unwrap();
        assert!(b.shape.is_zero());
        let m = build_model(mat2(F), DMatrix::zeros(2, 2), mat2(C), mat2(K), mat2(R1), mat2(R2), None).unwrap();
        assert!(attack_state_reach_geom(&m, 6.0, &GeomSumConfig::default()).unwrap().shape.is_zero());
    }

    #[test]
    fn first_state_term_is_feedback_coupling() {
        let model = reference_system(None).unwrap();
        let h1 = powers(&model.closed_loop(), 1).zip(powers(model.f(), 1)).map(|(a, f)| a - f).next().unwrap();
        assert!(linalg::max_abs(&(h1 - model.feedback_coupling())) < 1e-15);
    }

    #[test]
    fn doubling_terms_barely_moves_volume() {
        let model = reference_system(None).unwrap();
        let det = DetectorConfig::tuned(model.residual_covariance(), 0.05).unwrap();
        let cfg = GeomSumConfig::default();
        let b = attack_state_reach_geom(&model, det.alpha, &cfg).unwrap();
        let n = b.diagnostics.terms_used.unwrap();
        let closed = model.closed_loop();
        let h = powers(&closed, 1).zip(powers(model.f(), 1)).map(|(a, f)| a - f);
        let l = model.observer_gain();
        let w = linalg::symmetrize(&(l * model.residual_covariance() * l.transpose() * det.alpha));
        let terms: Vec<Ellipsoid> = h
            .take(2 * n)
            .map(|m| Ellipsoid::new(linalg::symmetrize(&(&m * &w * m.transpose()))).unwrap())
            .collect();
        let doubled = minkowski_sum_many(&terms).unwrap();
        let rel = (doubled.volume() - b.volume).abs() / b.volume;
        assert!(rel < 10.0 * cfg.tail_tol, "relative change {rel:e} with {n} terms");
    }

    #[test]
    fn attack_bounds_scale_linearly_in_alpha() {
        let model = reference_system(None).unwrap();
        let cfg = GeomSumConfig::default();
        for f in [attack_state_reach_geom, attack_error_reach_geom] {
            let b1 = f(&model, 1.5, &cfg).unwrap();
            let b4 = f(&model, 6.0, &cfg).unwrap();
            let diff = linalg::max_abs(&(b4.shape.shape() - b1.shape.shape() * 4.0));
            assert!(diff <= 1e-12 * linalg::max_abs(b4.shape.shape()));
        }
    }

    #[test]
    fn unstable_inputs_rejected_and_limits_enforced() {
        let model = reference_system(None).unwrap();
        let cfg = GeomSumConfig { tail_tol: 1e-12, max_terms: 5 };
        assert_eq!(noise_reach_geom(&model, 1.0, &cfg), Err(Error::MaxTermsExceeded(5)));
        let bad = GeomSumConfig { tail_tol: 0.0, max_terms: 5 };
        assert!(noise_reach_geom(&model, 1.0, &bad).is_err());
    }
}
