//! Minimum-volume invariant ellipsoids from the log-det SDP
//!
//! ```text
//! min −log det P   s.t.  P ≻ 0,
//!   [ aP − AᵀPA     −AᵀPB          ]
//!   [ −BᵀPA         (1−a)R − BᵀPB  ]  ⪰ 0
//! ```
//!
//! for `ξ⁺ = Aξ + Bμ` with `μᵀRμ ≤ 1`: any feasible `P` makes `{ξᵀPξ ≤ 1}`
//! invariant. The program is solved with a log-barrier Newton method over the
//! `n(n+1)/2` free entries of `P`, and an outer search picks `a`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bound::{self, Diagnostics, Method, ReachBound, Target};
use crate::ellipsoid::{golden_section, unit_ball_volume, Ellipsoid};
use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::PlantModel;

/// Duality-gap target `(n+q)/t` of the barrier path.
const GAP_TOL: f64 = 1e-9;
const NEWTON_TOL: f64 = 1e-10;
const MAX_NEWTON: usize = 200;
/// `P` beyond this scale means the reachable set is flat in some direction.
const UNBOUNDED_SCALE: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Decay scalar `a ∈ (0, 1)`.
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiSolution {
    pub p: DMatrix<f64>,
    /// Smallest eigenvalue of the block matrix at `p`.
    pub min_eig: f64,
    pub iterations: usize,
    pub log_det: f64,
}

/// The block matrix of the invariance condition evaluated at `p`.
pub fn block_matrix(
    a_mat: &DMatrix<f64>,
    b_mat: &DMatrix<f64>,
    r: &DMatrix<f64>,
    a: f64,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a_mat.nrows();
    let q = b_mat.ncols();
    let pa = p * a_mat;
    let pb = p * b_mat;
    let mut m = DMatrix::zeros(n + q, n + q);
    m.view_mut((0, 0), (n, n))
        .copy_from(&(p * a - a_mat.transpose() * &pa));
    let off = -(a_mat.transpose() * &pb);
    m.view_mut((0, n), (n, q)).copy_from(&off);
    m.view_mut((n, 0), (q, n)).copy_from(&off.transpose());
    m.view_mut((n, n), (q, q))
        .copy_from(&(r * (1.0 - a) - b_mat.transpose() * &pb));
    linalg::symmetrize(&m)
}

/// Symmetric basis `E_k` indexed over the upper triangle.
fn sym_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            out.push(e);
        }
    }
    out
}

fn from_params(params: &[f64], basis: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    params
        .iter()
        .zip(basis)
        .fold(DMatrix::zeros(n, n), |acc, (p, e)| acc + e * *p)
}

fn to_params(p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(if i == j { p[(i, i)] } else { 0.5 * (p[(i, j)] + p[(j, i)]) });
        }
    }
    out
}

struct Barrier<'a> {
    prob: &'a LmiProblem,
    basis: Vec<DMatrix<f64>>,
    /// Block matrices `M_k` for each basis element (the constant part is separate).
    blocks: Vec<DMatrix<f64>>,
    m0: DMatrix<f64>,
}

impl<'a> Barrier<'a> {
    fn new(prob: &'a LmiProblem) -> Self {
        let n = prob.a_mat.nrows();
        let q = prob.b_mat.ncols();
        let basis = sym_basis(n);
        let zero_r = DMatrix::zeros(q, q);
        let blocks = basis
            .iter()
            .map(|e| block_matrix(&prob.a_mat, &prob.b_mat, &zero_r, prob.a, e))
            .collect();
        let mut m0 = DMatrix::zeros(n + q, n + q);
        m0.view_mut((n, n), (q, q)).copy_from(&(&prob.r * (1.0 - prob.a)));
        Barrier {
            prob,
            basis,
            blocks,
            m0,
        }
    }

    fn n(&self) -> usize {
        self.prob.a_mat.nrows()
    }

    fn block(&self, params: &[f64]) -> DMatrix<f64> {
        params
            .iter()
            .zip(&self.blocks)
            .fold(self.m0.clone(), |acc, (p, m)| acc + m * *p)
    }

    /// `t·(−log det P) − log det M`, or `None` outside the interior.
    fn value(&self, params: &[f64], t: f64) -> Option<f64> {
        let p = from_params(params, &self.basis, self.n());
        let ld_p = linalg::log_det_spd(&p)?;
        let ld_m = linalg::log_det_spd(&self.block(params))?;
        Some(-t * ld_p - ld_m)
    }

    fn gradient_hessian(&self, params: &[f64], t: f64) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let n = self.n();
        let d = params.len();
        let p = from_params(params, &self.basis, n);
        let p_inv = p.cholesky()?.inverse();
        let m_inv = self.block(params).cholesky()?.inverse();
        let pe: Vec<DMatrix<f64>> = self.basis.iter().map(|e| &p_inv * e).collect();
        let me: Vec<DMatrix<f64>> = self.blocks.iter().map(|b| &m_inv * b).collect();
        let mut g = vec![0.0; d];
        let mut h = DMatrix::zeros(d, d);
        for k in 0..d {
            g[k] = -t * pe[k].trace() - me[k].trace();
            for l in k..d {
                let v = t * (&pe[k] * &pe[l]).trace() + (&me[k] * &me[l]).trace();
                h[(k, l)] = v;
                h[(l, k)] = v;
            }
        }
        Some((g, h))
    }
}

/// Strictly feasible start `εX` with `aX − AᵀXA = I`.
fn initial_point(prob: &LmiProblem, barrier: &Barrier<'_>) -> Result<Vec<f64>> {
    let scaled = &prob.a_mat / prob.a.sqrt();
    let x = linalg::solve_stein(&scaled, &(DMatrix::identity(prob.a_mat.nrows(), prob.a_mat.nrows()) / prob.a))?;
    let mut eps = 1.0 / linalg::max_abs(&x).max(1e-300);
    for _ in 0..200 {
        let params = to_params(&(&x * eps));
        if barrier.value(&params, 1.0).is_some() {
            return Ok(params);
        }
        eps *= 0.5;
    }
    Err(Error::Infeasible(prob.a))
}

/// Solves the log-det program at a fixed `a`.
pub fn solve_logdet_sdp(prob: &LmiProblem) -> Result<LmiSolution> {
    let n = prob.a_mat.nrows();
    let q = prob.b_mat.ncols();
    if !prob.a_mat.is_square() || prob.b_mat.nrows() != n || prob.r.shape() != (q, q) {
        return Err(Error::DimensionMismatch("LMI matrices do not conform".into()));
    }
    if !(prob.a > 0.0 && prob.a < 1.0) {
        return Err(Error::Domain(format!("decay scalar a = {} outside (0, 1)", prob.a)));
    }
    linalg::require_pd(&prob.r, "LMI input weight R")?;
    let rho = linalg::spectral_radius(&prob.a_mat);
    if rho * rho >= prob.a {
        return Err(Error::Infeasible(prob.a));
    }

    let barrier = Barrier::new(prob);
    let mut x = initial_point(prob, &barrier)?;
    let m = (n + q) as f64;
    let mut t = 1.0;
    let mut iterations = 0;
    loop {
        for _ in 0..MAX_NEWTON {
            let (g, h) = barrier
                .gradient_hessian(&x, t)
                .ok_or_else(|| Error::NoConvergence("left the LMI interior".into()))?;
            let g = nalgebra::DVector::from_vec(g);
            let step = match h.clone().cholesky() {
                Some(c) => c.solve(&(-&g)),
                None => h
                    .lu()
                    .solve(&(-&g))
                    .ok_or_else(|| Error::NoConvergence("singular Newton system".into()))?,
            };
            iterations += 1;
            let decrement = -g.dot(&step);
            if decrement / 2.0 <= NEWTON_TOL {
                break;
            }
            let f0 = barrier.value(&x, t).expect("iterate is interior");
            let mut s = 1.0;
            let next = loop {
                let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + s * b).collect();
                if let Some(f) = barrier.value(&cand, t) {
                    if f <= f0 - 0.25 * s * decrement {
                        break Some(cand);
                    }
                }
                s *= 0.5;
                if s < 1e-20 {
                    break None;
                }
            };
            match next {
                Some(c) => x = c,
                None => break,
            }
            if x.iter().any(|v| v.abs() > UNBOUNDED_SCALE) {
                return Err(Error::Unbounded(format!(
                    "P exceeds {UNBOUNDED_SCALE:e}; the reachable set is flat"
                )));
            }
        }
        if m / t <= GAP_TOL {
            break;
        }
        t *= 10.0;
    }

    let p = from_params(&x, &barrier.basis, n);
    let block = barrier.block(&x);
    Ok(LmiSolution {
        min_eig: linalg::min_eigenvalue(&block),
        log_det: linalg::log_det_spd(&p).unwrap_or(f64::NEG_INFINITY),
        p,
        iterations,
    })
}

/// Outer search over the decay scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmiGrid {
    /// Grid spacing; the grid is `step, 2·step, …` below 1.
    pub step: f64,
    /// Final bracket width of the golden-section refinement.
    pub refine_tol: f64,
}

impl Default for LmiGrid {
    fn default() -> Self {
        LmiGrid {
            step: 0.02,
            refine_tol: 1e-3,
        }
    }
}

impl LmiGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step < 0.5) || !(self.refine_tol > 0.0) {
            return Err(Error::InvalidConfig("LMI grid step must lie in (0, 0.5) and tolerance be positive".into()));
        }
        Ok(())
    }

    fn points(&self) -> Vec<f64> {
        let count = ((1.0 - 1e-12) / self.step).floor() as usize;
        (1..=count).map(|i| i as f64 * self.step).filter(|a| *a < 1.0).collect()
    }
}

fn to_bound(sol: &LmiSolution, a: f64, target: Target, feasible: (f64, f64), iterations: usize) -> Result<ReachBound> {
    let shape = Ellipsoid::from_quadratic_form(&sol.p)?;
    let n = sol.p.nrows();
    Ok(ReachBound {
        volume: unit_ball_volume(n) * (-0.5 * sol.log_det).exp(),
        shape,
        method: Method::Lmi,
        target,
        a_star: Some(a),
        diagnostics: Diagnostics {
            lmi_min_eig: Some(sol.min_eig),
            iterations,
            terms_used: None,
            feasible_a: Some(feasible),
        },
    })
}

/// Minimum-volume bound over `a`: grid search, then golden-section refinement
/// around the best grid point.
pub fn min_volume_over_a(
    a_mat: &DMatrix<f64>,
    b_mat: &DMatrix<f64>,
    r: &DMatrix<f64>,
    target: Target,
    grid: &LmiGrid,
) -> Result<ReachBound> {
    grid.validate()?;
    let n = a_mat.nrows();
    if b_mat.nrows() != n {
        return Err(Error::DimensionMismatch("B rows must match A".into()));
    }
    if linalg::max_abs(b_mat) == 0.0 {
        let mut b = ReachBound::new(Ellipsoid::zero(n), Method::Lmi, target);
        b.diagnostics.lmi_min_eig = Some(0.0);
        return Ok(b);
    }
    let rho = linalg::spectral_radius(a_mat);
    if rho >= 1.0 {
        return Err(Error::Infeasible(rho * rho));
    }
    let solve = |a: f64| {
        solve_logdet_sdp(&LmiProblem {
            a_mat: a_mat.clone(),
            b_mat: b_mat.clone(),
            r: r.clone(),
            a,
        })
    };
    let points = grid.points();
    let results = crate::par_map(points.iter().copied(), |a| (a, solve(a)));

    let mut feasible: Option<(f64, f64)> = None;
    let mut best: Option<(usize, LmiSolution)> = None;
    let mut iterations = 0;
    for (i, (a, res)) in results.into_iter().enumerate() {
        match res {
            Ok(sol) => {
                iterations += sol.iterations;
                feasible = Some(feasible.map_or((a, a), |(lo, hi)| (lo.min(a), hi.max(a))));
                if best.as_ref().is_none_or(|(_, b)| sol.log_det > b.log_det) {
                    best = Some((i, sol));
                }
            }
            Err(Error::Infeasible(_)) => {}
            Err(e @ (Error::Unbounded(_) | Error::NotPd(_) | Error::DimensionMismatch(_))) => return Err(e),
            Err(_) => {}
        }
    }
    let (i, grid_best) = best.ok_or(Error::AllInfeasible)?;
    let feasible = feasible.expect("a feasible point exists");

    let a_best = points[i];
    let floor = (rho * rho).max(1e-9) * (1.0 + 1e-9);
    let lo = if i == 0 { floor.max(a_best - grid.step).max(1e-6) } else { points[i - 1].max(floor) };
    let hi = points.get(i + 1).copied().unwrap_or(a_best + (1.0 - a_best) / 2.0);
    let (a_ref, _) = golden_section(
        |a| solve(a).map_or(f64::INFINITY, |s| -s.log_det),
        lo,
        hi,
        grid.refine_tol,
    );
    let (a_star, sol) = match solve(a_ref) {
        Ok(s) if s.log_det > grid_best.log_det => (a_ref, s),
        _ => (a_best, grid_best),
    };
    iterations += sol.iterations;
    to_bound(&sol, a_star, target, feasible, iterations)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiBounds {
    /// Shared bound for the noise-driven error and state.
    pub noise: ReachBound,
    pub attack_error: ReachBound,
    pub attack_state: ReachBound,
}

/// The three LMI bounds: noise (`A=F, B=I, R=R1⁻¹/v̄`), attack error
/// (`A=F, B=−LΣ^{1/2}, R=I/α`) and attack state (`A=F+GK, B=−GK, R=P_e^δ`).
pub fn lmi_bounds(model: &PlantModel, alpha: f64, vbar: f64, grid: &LmiGrid) -> Result<LmiBounds> {
    if !(alpha > 0.0 && vbar > 0.0) {
        return Err(Error::Domain("alpha and vbar must be positive".into()));
    }
    let n = model.state_dim();
    let p = model.output_dim();
    let r1 = linalg::require_pd(model.r1(), "system noise covariance R1")?;
    let r_noise = linalg::spd_inverse(&r1, "R1")? / vbar;
    let noise = min_volume_over_a(model.f(), &DMatrix::identity(n, n), &r_noise, Target::NoiseError, grid)?;

    let b_err = -(model.observer_gain() * model.residual_covariance_sqrt());
    let attack_error = min_volume_over_a(model.f(), &b_err, &(DMatrix::identity(p, p) / alpha), Target::AttackError, grid)?;

    let b_state = -model.feedback_coupling();
    let attack_state = match attack_error.p_matrix() {
        Some(p_ed) => min_volume_over_a(&model.closed_loop(), &b_state, &p_ed, Target::AttackState, grid)?,
        None => {
            let mut b = ReachBound::new(Ellipsoid::zero(n), Method::Lmi, Target::AttackState);
            b.diagnostics.lmi_min_eig = Some(0.0);
            b
        }
    };
    Ok(LmiBounds {
        noise,
        attack_error,
        attack_state,
    })
}

pub fn total_state_bound_lmi(noise: &ReachBound, attack_state: &ReachBound) -> Result<ReachBound> {
    bound::total_state_bound(noise, attack_state)
}
