//! Plant, steady-state Kalman filter and static estimate feedback, plus the
//! closed-loop simulator with optional sensor-attack injection.
//!
//! The simulator also integrates the superposition split of state and
//! estimation error into noise-driven and attack-driven parts, which is what
//! the reachable-set bounds are stated against.

use std::io::{self, Write};

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attack::{AttackPolicy, TrialAttack};
use crate::detector::DetectorConfig;
use crate::ellipsoid::sym_sqrt;
use crate::error::{Error, Result};
use crate::linalg;

const RICCATI_TOL: f64 = 1e-12;
const RICCATI_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSolution {
    /// Steady-state prediction-error covariance.
    pub p: DMatrix<f64>,
    /// Predictor-form observer gain `F P Cᵀ (C P Cᵀ + R2)⁻¹`.
    pub l: DMatrix<f64>,
    /// `|Ric(P) - P|_max` at the returned fixed point.
    pub residual: f64,
    pub iterations: usize,
}

fn riccati_step(
    f: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r1: &DMatrix<f64>,
    r2: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = c * p * c.transpose() + r2;
    let s_inv = linalg::spd_inverse(&linalg::symmetrize(&s), "innovation covariance")?;
    let fpc = f * p * c.transpose();
    let next = f * p * f.transpose() + r1 - &fpc * &s_inv * fpc.transpose();
    Ok((linalg::symmetrize(&next), fpc * s_inv))
}

/// PBH test restricted to eigenvalues on or outside the unit circle.
pub fn is_detectable(f: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = f.nrows();
    let fc = f.map(|v| Complex::new(v, 0.0));
    let cc = c.map(|v| Complex::new(v, 0.0));
    linalg::complex_eigenvalues(f)
        .into_iter()
        .filter(|l| l.norm() >= 1.0 - 1e-12)
        .all(|lambda| {
            let mut stacked = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
            let top = DMatrix::<Complex<f64>>::identity(n, n) * lambda - &fc;
            stacked.view_mut((0, 0), (n, n)).copy_from(&top);
            stacked.view_mut((n, 0), (c.nrows(), n)).copy_from(&cc);
            linalg::complex_rank(&stacked, 1e-10) == n
        })
}

/// Fixed point of the predictor-form Riccati recursion, iterated from `P₀ = R1`.
pub fn solve_steady_state_kalman(
    f: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r1: &DMatrix<f64>,
    r2: &DMatrix<f64>,
) -> Result<KalmanSolution> {
    let n = f.nrows();
    if !f.is_square() || c.ncols() != n || r1.shape() != (n, n) || r2.shape() != (c.nrows(), c.nrows()) {
        return Err(Error::DimensionMismatch("Kalman filter matrices do not conform".into()));
    }
    let r1 = linalg::check_symmetric(r1)?;
    let r2 = linalg::require_pd(r2, "measurement noise covariance R2")?;
    if !is_detectable(f, c) {
        return Err(Error::NotDetectable);
    }
    let mut p = r1.clone();
    let mut iterations = 0;
    loop {
        let (next, _) = riccati_step(f, c, &r1, &r2, &p)?;
        let delta = linalg::max_abs(&(&next - &p));
        p = next;
        iterations += 1;
        if !delta.is_finite() {
            return Err(Error::NoConvergence("Riccati iteration diverged".into()));
        }
        if delta <= RICCATI_TOL {
            break;
        }
        if iterations >= RICCATI_MAX_ITER {
            return Err(Error::NoConvergence(format!(
                "Riccati iteration stalled at |dP| = {delta:e}"
            )));
        }
    }
    let (again, l) = riccati_step(f, c, &r1, &r2, &p)?;
    Ok(KalmanSolution {
        residual: linalg::max_abs(&(again - &p)),
        p,
        l,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelDiagnostics {
    pub rho_open_loop: f64,
    pub rho_closed_loop: f64,
    pub rho_filter: f64,
    pub riccati_residual: f64,
    /// `|L_supplied - L_optimal|_max` when the observer gain was given.
    pub gain_mismatch: Option<f64>,
}

/// Plant, filter and controller matrices together with derived covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    k: DMatrix<f64>,
    r1: DMatrix<f64>,
    r2: DMatrix<f64>,
    l: DMatrix<f64>,
    p: DMatrix<f64>,
    sigma: DMatrix<f64>,
    sigma_sqrt: DMatrix<f64>,
    diagnostics: ModelDiagnostics,
}

fn expect_shape(m: &DMatrix<f64>, shape: (usize, usize), name: &str) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}, expected {}x{}",
            m.nrows(),
            m.ncols(),
            shape.0,
            shape.1
        )));
    }
    Ok(())
}

/// Validates the loop and fills in `P`, `Σ = C P Cᵀ + R2` and `Σ^{1/2}`.
///
/// A supplied `L` replaces the optimal gain in the loop, but `P` still comes
/// from the Riccati fixed point; the gap is reported in the diagnostics.
pub fn build_model(
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    k: DMatrix<f64>,
    r1: DMatrix<f64>,
    r2: DMatrix<f64>,
    l: Option<DMatrix<f64>>,
) -> Result<PlantModel> {
    let n = f.nrows();
    let m = g.ncols();
    let p_out = c.nrows();
    expect_shape(&f, (n, n), "F")?;
    expect_shape(&g, (n, m), "G")?;
    expect_shape(&c, (p_out, n), "C")?;
    expect_shape(&k, (m, n), "K")?;
    expect_shape(&r1, (n, n), "R1")?;
    expect_shape(&r2, (p_out, p_out), "R2")?;
    if let Some(l) = &l {
        expect_shape(l, (n, p_out), "L")?;
    }
    let r1 = linalg::check_symmetric(&r1)?;
    linalg::psd_eigen(&r1)?;

    let rho_open_loop = linalg::spectral_radius(&f);
    if rho_open_loop >= 1.0 {
        return Err(Error::UnstableF(rho_open_loop));
    }
    let closed = &f + &g * &k;
    let rho_closed_loop = linalg::spectral_radius(&closed);
    if rho_closed_loop >= 1.0 {
        return Err(Error::UnstableClosedLoop(rho_closed_loop));
    }

    let kalman = solve_steady_state_kalman(&f, &c, &r1, &r2)?;
    let gain_mismatch = l.as_ref().map(|l| linalg::max_abs(&(l - &kalman.l)));
    let l = l.unwrap_or_else(|| kalman.l.clone());
    let rho_filter = linalg::spectral_radius(&(&f - &l * &c));
    if rho_filter >= 1.0 {
        return Err(Error::UnstableFilter(rho_filter));
    }

    let sigma = linalg::symmetrize(&(&c * &kalman.p * c.transpose() + &r2));
    let sigma = linalg::require_pd(&sigma, "residual covariance")?;
    let sigma_sqrt = sym_sqrt(&sigma)?;

    Ok(PlantModel {
        f,
        g,
        c,
        k,
        r1,
        r2: linalg::symmetrize(&r2),
        l,
        p: kalman.p,
        sigma,
        sigma_sqrt,
        diagnostics: ModelDiagnostics {
            rho_open_loop,
            rho_closed_loop,
            rho_filter,
            riccati_residual: kalman.residual,
            gain_mismatch,
        },
    })
}

impl PlantModel {
    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn r1(&self) -> &DMatrix<f64> {
        &self.r1
    }

    pub fn r2(&self) -> &DMatrix<f64> {
        &self.r2
    }

    pub fn observer_gain(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn error_covariance(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn residual_covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn residual_covariance_sqrt(&self) -> &DMatrix<f64> {
        &self.sigma_sqrt
    }

    pub fn diagnostics(&self) -> &ModelDiagnostics {
        &self.diagnostics
    }

    /// `F + G K`.
    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.f + &self.g * &self.k
    }

    /// `G K`.
    pub fn feedback_coupling(&self) -> DMatrix<f64> {
        &self.g * &self.k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Number of steps per trial; steps are numbered `1..=horizon`.
    pub horizon: usize,
    /// First attacked step `k*`; `None` means attack-free.
    #[serde(default)]
    pub attack_start: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    /// `x₁`; zero when omitted. The estimate starts equal to it.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    /// Rejection-sample system noise to `vᵀ R1⁻¹ v ≤ v̄`.
    #[serde(default)]
    pub truncate_noise: bool,
    /// Multiplier on every noise draw; zero gives a noiseless loop.
    #[serde(default = "unit")]
    pub noise_gain: f64,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

impl SimConfig {
    pub fn new(horizon: usize) -> Self {
        SimConfig {
            horizon,
            attack_start: None,
            master_seed: 0,
            trials: 1,
            initial_state: None,
            truncate_noise: false,
            noise_gain: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if let Some(s) = self.attack_start {
            if s == 0 || s > self.horizon {
                return Err(Error::InvalidConfig(format!(
                    "attack start {s} outside 1..={}",
                    self.horizon
                )));
            }
        }
        if !(self.noise_gain >= 0.0) {
            return Err(Error::InvalidConfig("noise gain must be non-negative".into()));
        }
        Ok(())
    }
}

/// One simulated step as seen by a streaming consumer.
#[derive(Debug)]
pub struct Step<'a> {
    pub trial: u64,
    pub k: usize,
    pub attacked: bool,
    pub x: &'a DVector<f64>,
    pub xhat: &'a DVector<f64>,
    pub e: &'a DVector<f64>,
    pub r: &'a DVector<f64>,
    pub z: f64,
    pub alarm: bool,
    /// Sensor attack `δ_k` (zero before the attack).
    pub delta: &'a DVector<f64>,
    /// Normalized attack `δ̄_k` (zero before the attack).
    pub delta_bar: &'a DVector<f64>,
    pub x_v: &'a DVector<f64>,
    pub x_delta: &'a DVector<f64>,
    pub e_v: &'a DVector<f64>,
    pub e_delta: &'a DVector<f64>,
}

/// Independent noise and attack streams for one trial.
pub fn trial_rngs(master_seed: u64, trial: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut noise = ChaCha8Rng::seed_from_u64(master_seed);
    noise.set_stream(2 * trial);
    let mut attack = ChaCha8Rng::seed_from_u64(master_seed);
    attack.set_stream(2 * trial + 1);
    (noise, attack)
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Runs one trial and hands every step to `visit`.
pub fn run_trial<F>(
    model: &PlantModel,
    detector: &DetectorConfig,
    cfg: &SimConfig,
    policy: Option<&AttackPolicy>,
    trial: u64,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(&Step<'_>),
{
    cfg.validate()?;
    let n = model.state_dim();
    let p = model.output_dim();
    if detector.dof != p {
        return Err(Error::DimensionMismatch(format!(
            "detector has {} dof but the plant has {p} outputs",
            detector.dof
        )));
    }
    if let Some(policy) = policy {
        policy.check_model(model)?;
    }
    let attack_start = if policy.is_some() { cfg.attack_start } else { None };

    let (mut noise_rng, mut attack_rng) = trial_rngs(cfg.master_seed, trial);
    let r1_root = sym_sqrt(model.r1())? * cfg.noise_gain;
    let r2_root = sym_sqrt(model.r2())? * cfg.noise_gain;
    let vbar = if cfg.truncate_noise { Some(detector.vbar(n)?) } else { None };

    let f = model.f();
    let g = model.g();
    let c = model.c();
    let k_gain = model.k();
    let l = model.observer_gain();
    let closed = model.closed_loop();
    let gk = model.feedback_coupling();
    let l_sigma_root = l * model.residual_covariance_sqrt();

    let mut x = match &cfg.initial_state {
        Some(v) if v.len() == n => DVector::from_column_slice(v),
        Some(v) => {
            return Err(Error::DimensionMismatch(format!(
                "initial state of length {} for a {n}-state plant",
                v.len()
            )))
        }
        None => DVector::zeros(n),
    };
    let mut xhat = x.clone();
    let mut e = &x - &xhat;
    let mut x_v = x.clone();
    let mut e_v = e.clone();
    let mut x_delta = DVector::zeros(n);
    let mut e_delta = DVector::zeros(n);
    let zero_p = DVector::zeros(p);
    let mut trial_attack: Option<TrialAttack> = None;

    for step in 1..=cfg.horizon {
        let attacked = attack_start.is_some_and(|s| step >= s);

        let v = match vbar {
            Some(vbar) => loop {
                let w = gaussian(&mut noise_rng, n);
                if w.norm_squared() <= vbar {
                    break &r1_root * w;
                }
            },
            None => &r1_root * gaussian(&mut noise_rng, n),
        };
        let eta = &r2_root * gaussian(&mut noise_rng, p);

        let u = k_gain * &xhat;
        let y = c * &x + &eta;
        let (delta, delta_bar) = match (attacked, policy) {
            (true, Some(policy)) => {
                let state = trial_attack.get_or_insert_with(|| policy.start_trial(&mut attack_rng));
                policy.inject(state, &e, &eta, &mut attack_rng)?
            }
            _ => (zero_p.clone(), zero_p.clone()),
        };
        let r = &y + &delta - c * &xhat;
        let z = detector.distance(&r)?;
        let alarm = detector.is_alarm(z);

        visit(&Step {
            trial,
            k: step,
            attacked,
            x: &x,
            xhat: &xhat,
            e: &e,
            r: &r,
            z,
            alarm,
            delta: &delta,
            delta_bar: &delta_bar,
            x_v: &x_v,
            x_delta: &x_delta,
            e_v: &e_v,
            e_delta: &e_delta,
        });

        let x_next = f * &x + g * &u + &v;
        let xhat_next = f * &xhat + g * &u + l * &r;
        if attacked {
            let e_v_next = f * &e_v + &v;
            let e_delta_next = f * &e_delta - &l_sigma_root * &delta_bar;
            x_v = &closed * &x_v - &gk * &e_v + &v;
            x_delta = &closed * &x_delta - &gk * &e_delta;
            e_v = e_v_next;
            e_delta = e_delta_next;
        }
        x = x_next;
        xhat = xhat_next;
        e = &x - &xhat;
        if !attack_start.is_some_and(|s| step + 1 >= s) {
            x_v.copy_from(&x);
            e_v.copy_from(&e);
        } else if attack_start == Some(step + 1) {
            // Split initial conditions at k*: noise part takes the full state.
            x_v.copy_from(&x);
            e_v.copy_from(&e);
            x_delta.fill(0.0);
            e_delta.fill(0.0);
        }
    }
    Ok(())
}

/// Columnar record of every step of every trial.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub n: usize,
    pub p: usize,
    pub trial: Vec<u64>,
    pub k: Vec<usize>,
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
    pub e: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub alarm: Vec<bool>,
    pub delta: Vec<f64>,
    pub delta_bar: Vec<f64>,
    pub x_v: Vec<f64>,
    pub x_delta: Vec<f64>,
    pub e_v: Vec<f64>,
    pub e_delta: Vec<f64>,
}

/// Row `i` of a flattened column with `width` entries per row.
fn row(data: &[f64], width: usize, i: usize) -> &[f64] {
    &data[i * width..(i + 1) * width]
}

impl SimTrace {
    fn with_dims(n: usize, p: usize) -> Self {
        SimTrace {
            n,
            p,
            ..Default::default()
        }
    }

    fn push(&mut self, s: &Step<'_>) {
        self.trial.push(s.trial);
        self.k.push(s.k);
        self.x.extend_from_slice(s.x.as_slice());
        self.xhat.extend_from_slice(s.xhat.as_slice());
        self.e.extend_from_slice(s.e.as_slice());
        self.r.extend_from_slice(s.r.as_slice());
        self.z.push(s.z);
        self.alarm.push(s.alarm);
        self.delta.extend_from_slice(s.delta.as_slice());
        self.delta_bar.extend_from_slice(s.delta_bar.as_slice());
        self.x_v.extend_from_slice(s.x_v.as_slice());
        self.x_delta.extend_from_slice(s.x_delta.as_slice());
        self.e_v.extend_from_slice(s.e_v.as_slice());
        self.e_delta.extend_from_slice(s.e_delta.as_slice());
    }

    fn append(&mut self, mut other: SimTrace) {
        self.trial.append(&mut other.trial);
        self.k.append(&mut other.k);
        self.x.append(&mut other.x);
        self.xhat.append(&mut other.xhat);
        self.e.append(&mut other.e);
        self.r.append(&mut other.r);
        self.z.append(&mut other.z);
        self.alarm.append(&mut other.alarm);
        self.delta.append(&mut other.delta);
        self.delta_bar.append(&mut other.delta_bar);
        self.x_v.append(&mut other.x_v);
        self.x_delta.append(&mut other.x_delta);
        self.e_v.append(&mut other.e_v);
        self.e_delta.append(&mut other.e_delta);
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        row(&self.x, self.n, i)
    }

    pub fn xhat_at(&self, i: usize) -> &[f64] {
        row(&self.xhat, self.n, i)
    }

    pub fn e_at(&self, i: usize) -> &[f64] {
        row(&self.e, self.n, i)
    }

    pub fn r_at(&self, i: usize) -> &[f64] {
        row(&self.r, self.p, i)
    }

    pub fn delta_at(&self, i: usize) -> &[f64] {
        row(&self.delta, self.p, i)
    }

    pub fn delta_bar_at(&self, i: usize) -> &[f64] {
        row(&self.delta_bar, self.p, i)
    }

    pub fn x_v_at(&self, i: usize) -> &[f64] {
        row(&self.x_v, self.n, i)
    }

    pub fn x_delta_at(&self, i: usize) -> &[f64] {
        row(&self.x_delta, self.n, i)
    }

    pub fn e_v_at(&self, i: usize) -> &[f64] {
        row(&self.e_v, self.n, i)
    }

    pub fn e_delta_at(&self, i: usize) -> &[f64] {
        row(&self.e_delta, self.n, i)
    }

    pub fn alarm_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.alarm.iter().filter(|a| **a).count() as f64 / self.len() as f64
    }

    /// CSV with header `trial,k,x1..xn,e1..en,xv1..xvn,xd1..xdn,z,alarm,d1..dp`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let mut header = vec!["trial".to_string(), "k".to_string()];
        for prefix in ["x", "e", "xv", "xd"] {
            header.extend((1..=self.n).map(|i| format!("{prefix}{i}")));
        }
        header.push("z".into());
        header.push("alarm".into());
        header.extend((1..=self.p).map(|i| format!("d{i}")));
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            write!(out, "{},{}", self.trial[i], self.k[i])?;
            for col in [self.x_at(i), self.e_at(i), self.x_v_at(i), self.x_delta_at(i)] {
                for v in col {
                    write!(out, ",{v}")?;
                }
            }
            write!(out, ",{},{}", self.z[i], u8::from(self.alarm[i]))?;
            for v in self.delta_at(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs `cfg.trials` independent trials and concatenates them in trial order.
pub fn simulate(
    model: &PlantModel,
    detector: &DetectorConfig,
    cfg: &SimConfig,
    policy: Option<&AttackPolicy>,
) -> Result<SimTrace> {
    cfg.validate()?;
    let one_trial = |trial: u64| -> Result<SimTrace> {
        let mut trace = SimTrace::with_dims(model.state_dim(), model.output_dim());
        run_trial(model, detector, cfg, policy, trial, |s| trace.push(s))?;
        Ok(trace)
    };
    let parts: Vec<Result<SimTrace>> = crate::par_map(0..cfg.trials as u64, one_trial);
    let mut trace = SimTrace::with_dims(model.state_dim(), model.output_dim());
    for part in parts {
        trace.append(part?);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{make_policy, AttackSpec, DirectionMode};
    use crate::system::reference_system;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn noiseless_kalman_is_trivial() {
        let f = m(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let c = m(1, 2, &[1.0, 0.0]);
        let sol = solve_steady_state_kalman(&f, &c, &DMatrix::zeros(2, 2), &m(1, 1, &[1.0])).unwrap();
        assert_eq!(linalg::max_abs(&sol.p), 0.0);
        assert_eq!(linalg::max_abs(&sol.l), 0.0);
    }

    #[test]
    fn reference_gains_reproduced() {
        let model = reference_system(None).unwrap();
        let sigma = m(2, 2, &[2.086, 0.134, 0.134, 2.230]);
        let l = m(2, 2, &[0.0276, 0.0448, -0.01998, -0.0290]);
        assert!(linalg::max_abs(&(model.residual_covariance() - sigma)) < 2e-3);
        assert!(linalg::max_abs(&(model.observer_gain() - l)) < 2e-3);
        assert!(model.diagnostics().riccati_residual <= 1e-11);
        assert!(model.diagnostics().rho_open_loop < 1.0);
    }

    #[test]
    fn undetectable_pair_rejected() {
        let f = m(2, 2, &[1.5, 0.0, 0.0, 0.5]);
        let c = m(1, 2, &[0.0, 1.0]);
        let err = solve_steady_state_kalman(&f, &c, &DMatrix::identity(2, 2), &m(1, 1, &[1.0]));
        assert_eq!(err, Err(Error::NotDetectable));
    }

    #[test]
    fn unstable_models_rejected() {
        let base = reference_system(None).unwrap();
        let err = build_model(
            DMatrix::identity(2, 2) * 2.0,
            base.g().clone(),
            base.c().clone(),
            base.k().clone(),
            base.r1().clone(),
            base.r2().clone(),
            None,
        );
        assert!(matches!(err, Err(Error::UnstableF(r)) if (r - 2.0).abs() < 1e-12));

        // Independent eigenvalue oracle: closed-form 2x2 spectrum of F + 100 G K.
        let k100 = base.k() * 100.0;
        let acl = base.f() + base.g() * &k100;
        let (tr, det) = (acl.trace(), acl.determinant());
        let disc = tr * tr / 4.0 - det;
        let rho = if disc >= 0.0 {
            (tr / 2.0 + disc.sqrt()).abs().max((tr / 2.0 - disc.sqrt()).abs())
        } else {
            det.sqrt()
        };
        assert!(rho > 1.0);
        let err = build_model(
            base.f().clone(),
            base.g().clone(),
            base.c().clone(),
            k100,
            base.r1().clone(),
            base.r2().clone(),
            None,
        );
        assert!(matches!(err, Err(Error::UnstableClosedLoop(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let base = reference_system(None).unwrap();
        let err = build_model(
            base.f().clone(),
            base.g().clone(),
            DMatrix::identity(3, 3),
            base.k().clone(),
            base.r1().clone(),
            base.r2().clone(),
            None,
        );
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    fn detector(model: &PlantModel) -> DetectorConfig {
        DetectorConfig::tuned(model.residual_covariance(), 0.05).unwrap()
    }

    #[test]
    fn noiseless_loop_rests_at_origin() {
        let model = reference_system(None).unwrap();
        let det = detector(&model);
        let mut cfg = SimConfig::new(200);
        cfg.noise_gain = 0.0;
        let trace = simulate(&model, &det, &cfg, None).unwrap();
        assert!(trace.x.iter().chain(&trace.r).chain(&trace.z).all(|v| *v == 0.0));
    }

    #[test]
    fn noiseless_boundary_attack_holds_distance_at_threshold() {
        let model = reference_system(None).unwrap();
        let det = detector(&model);
        let mut spec = AttackSpec::zero_alarm(det.alpha, det.alpha, 0.0).unwrap();
        spec.direction = DirectionMode::Fixed(vec![1.0, 0.0]);
        let policy = make_policy(&spec, &model).unwrap();
        let mut cfg = SimConfig::new(300);
        cfg.noise_gain = 0.0;
        cfg.attack_start = Some(10);
        let trace = simulate(&model, &det, &cfg, Some(&policy)).unwrap();
        for i in 0..trace.len() {
            if trace.k[i] >= 10 {
                assert!((trace.z[i] - det.alpha).abs() < 1e-9 * det.alpha);
                assert!(!trace.alarm[i]);
            } else {
                assert_eq!(trace.z[i], 0.0);
            }
        }
    }

    #[test]
    fn superposition_and_split_invariants() {
        let model = reference_system(None).unwrap();
        let det = detector(&model);
        let spec = AttackSpec::hidden(det.alpha, det.alpha, 0.0, 2.0 * det.alpha, 0.0, 0.05).unwrap();
        let policy = make_policy(&spec, &model).unwrap();
        let mut cfg = SimConfig::new(400);
        cfg.attack_start = Some(100);
        cfg.trials = 3;
        cfg.master_seed = 42;
        let trace = simulate(&model, &det, &cfg, Some(&policy)).unwrap();
        for i in 0..trace.len() {
            let (x, xh, e) = (trace.x_at(i), trace.xhat_at(i), trace.e_at(i));
            for j in 0..2 {
                assert!((e[j] - (x[j] - xh[j])).abs() < 1e-12);
                assert!((x[j] - trace.x_v_at(i)[j] - trace.x_delta_at(i)[j]).abs() <= 1e-9);
                assert!((e[j] - trace.e_v_at(i)[j] - trace.e_delta_at(i)[j]).abs() <= 1e-9);
            }
            if trace.k[i] < 100 {
                assert!(trace.delta_at(i).iter().all(|d| *d == 0.0));
                assert!(trace.x_delta_at(i).iter().chain(trace.e_delta_at(i)).all(|d| *d == 0.0));
            }
        }
    }

    #[test]
    fn noise_split_parts_coincide_from_rest() {
        let model = reference_system(None).unwrap();
        let det = detector(&model);
        let spec = AttackSpec::zero_alarm(det.alpha, det.alpha / 2.0, det.alpha).unwrap();
        let policy = make_policy(&spec, &model).unwrap();
        let mut cfg = SimConfig::new(500);
        cfg.attack_start = Some(1);
        cfg.truncate_noise = true;
        let trace = simulate(&model, &det, &cfg, Some(&policy)).unwrap();
        for i in 0..trace.len() {
            for j in 0..2 {
                assert!((trace.x_v_at(i)[j] - trace.e_v_at(i)[j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn attack_free_residual_is_white_with_covariance_sigma() {
        let model = reference_system(None).unwrap();
        let det = detector(&model);
        let mut cfg = SimConfig::new(100_000);
        cfg.master_seed = 9;
        let trace = simulate(&model, &det, &cfg, None).unwrap();
        let n = trace.len() as f64;
        let sigma = model.residual_covariance();
        let mut mean = [0.0; 2];
        let mut cov = DMatrix::zeros(2, 2);
        for i in 0..trace.len() {
            let r = trace.r_at(i);
            for a in 0..2 {
                mean[a] += r[a] / n;
                for b in 0..2 {
                    cov[(a, b)] += r[a] * r[b] / n;
                }
            }
        }
        for a in 0..2 {
            assert!(mean[a].abs() < 4.0 * (sigma[(a, a)] / n).sqrt());
        }
        assert!((cov - sigma).norm() < 0.05 * sigma.norm());
    }

    #[test]
    fn simulation_is_deterministic() {
        let model = reference_system(None).unwrap();
        let det = detector(&model);
        let spec = AttackSpec::zero_alarm(det.alpha, det.alpha / 8.0, det.alpha / 10.0).unwrap();
        let policy = make_policy(&spec, &model).unwrap();
        let mut cfg = SimConfig::new(50);
        cfg.trials = 4;
        cfg.attack_start = Some(5);
        cfg.master_seed = 1234;
        let a = simulate(&model, &det, &cfg, Some(&policy)).unwrap();
        let b = simulate(&model, &det, &cfg, Some(&policy)).unwrap();
        assert_eq!(a, b);
        let single = {
            let mut t = SimTrace::with_dims(2, 2);
            run_trial(&model, &det, &cfg, Some(&policy), 2, |s| t.push(s)).unwrap();
            t
        };
        let offset = 2 * 50;
        assert_eq!(&a.x[offset * 2..(offset + 50) * 2], single.x.as_slice());
    }

    #[test]
    fn csv_header_layout() {
        let model = reference_system(None).unwrap();
        let det = detector(&model);
        let trace = simulate(&model, &det, &SimConfig::new(3), None).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "trial,k,x1,x2,e1,e2,xv1,xv2,xd1,xd2,z,alarm,d1,d2");
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::new(10);
        cfg.attack_start = Some(0);
        assert!(cfg.validate().is_err());
        cfg.attack_start = Some(11);
        assert!(cfg.validate().is_err());
        cfg.attack_start = Some(10);
        assert!(cfg.validate().is_ok());
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
    }
}
