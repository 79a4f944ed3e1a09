//! Stealthy sensor attacks: distance-measure distributions and the injection
//! policy that makes the residual equal `Σ^{1/2} δ̄`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::PlantModel;

/// Relative shrink applied to injected attacks so that round-off in the
/// detector's quadratic form never lifts a boundary draw (`z = α`) above `α`.
pub const INJECTION_GUARD: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    ZeroAlarm,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMode {
    /// Fresh isotropic direction every step.
    #[default]
    UniformSphere,
    /// The same unit vector every step.
    Fixed(Vec<f64>),
    /// One isotropic (Haar) direction per trial, held for the whole attack.
    Haar,
}

/// Two-segment uniform mixture for `z = δ̄ᵀδ̄`, plus the direction law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Detector threshold the spec was resolved against.
    pub alpha: f64,
    pub c1: f64,
    pub w1: f64,
    pub c2: f64,
    pub w2: f64,
    /// Mass above `alpha` (hidden attacks only).
    pub rate: f64,
    pub direction: DirectionMode,
}

pub const PRESET_NAMES: [&str; 7] = ["ZA.A", "ZA.B", "ZA.C", "H.A", "H.B", "H.C", "H.D"];

impl AttackSpec {
    pub fn zero_alarm(alpha: f64, c1: f64, w1: f64) -> Result<Self> {
        let spec = AttackSpec {
            kind: AttackKind::ZeroAlarm,
            alpha,
            c1,
            w1,
            c2: 0.0,
            w2: 0.0,
            rate: 0.0,
            direction: DirectionMode::UniformSphere,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn hidden(alpha: f64, c1: f64, w1: f64, c2: f64, w2: f64, rate: f64) -> Result<Self> {
        let spec = AttackSpec {
            kind: AttackKind::Hidden,
            alpha,
            c1,
            w1,
            c2,
            w2,
            rate,
            direction: DirectionMode::UniformSphere,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The named columns of the zero-alarm / hidden parameter table.
    pub fn preset(name: &str, alpha: f64, rate: f64) -> Result<Self> {
        let a = alpha;
        match name {
            "ZA.A" => Self::zero_alarm(a, a / 8.0, a / 10.0),
            "ZA.B" => Self::zero_alarm(a, a / 2.0, a),
            "ZA.C" => Self::zero_alarm(a, a, 0.0),
            "H.A" => Self::hidden(a, a, 0.0, 1.5 * a, a, rate),
            "H.B" => Self::hidden(a, a, 0.0, 2.0 * a, 0.0, rate),
            "H.C" => Self::hidden(a, a, 0.0, 10.0 * a, 0.0, rate),
            "H.D" => Self::hidden(a, a, 0.0, 100.0 * a, 0.0, rate),
            other => Err(Error::InvalidSpec(format!("unknown attack preset {other:?}"))),
        }
    }

    pub fn with_direction(mut self, direction: DirectionMode) -> Result<Self> {
        self.direction = direction;
        self.validate()?;
        Ok(self)
    }

    /// Segment 1 must lie in `[0, α]`; segment 2 in `(α, ∞)`. A segment-2
    /// interval may touch `α` at its open lower end, as in `H.A`.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        let tol = 1e-12 * self.alpha.abs().max(1.0);
        let finite = [self.alpha, self.c1, self.w1, self.c2, self.w2, self.rate];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("attack parameters must be finite".into());
        }
        if self.alpha <= 0.0 {
            return bad(format!("threshold must be positive, got {}", self.alpha));
        }
        if self.w1 < 0.0 || self.w2 < 0.0 {
            return bad("segment widths must be non-negative".into());
        }
        if self.c1 - self.w1 / 2.0 < -tol || self.c1 + self.w1 / 2.0 > self.alpha + tol {
            return bad(format!(
                "below-threshold segment [{}, {}] leaves [0, {}]",
                self.c1 - self.w1 / 2.0,
                self.c1 + self.w1 / 2.0,
                self.alpha
            ));
        }
        if self.kind == AttackKind::Hidden {
            if !(self.rate > 0.0 && self.rate < 1.0) {
                return bad(format!("hidden attack rate must lie in (0, 1), got {}", self.rate));
            }
            let lo = self.c2 - self.w2 / 2.0;
            let ok = if self.w2 > 0.0 { lo >= self.alpha - tol } else { self.c2 > self.alpha };
            if !ok {
                return bad(format!(
                    "above-threshold segment starting at {lo} does not clear {}",
                    self.alpha
                ));
            }
        }
        if let DirectionMode::Fixed(u) = &self.direction {
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if u.is_empty() || (norm - 1.0).abs() > 1e-9 {
                return bad(format!("fixed direction must be a unit vector, norm {norm}"));
            }
        }
        Ok(())
    }

    /// Analytic CDF of the `z` mixture.
    pub fn z_cdf(&self, z: f64) -> f64 {
        let seg = |c: f64, w: f64| {
            if w == 0.0 {
                if z >= c { 1.0 } else { 0.0 }
            } else {
                ((z - (c - w / 2.0)) / w).clamp(0.0, 1.0)
            }
        };
        match self.kind {
            AttackKind::ZeroAlarm => seg(self.c1, self.w1),
            AttackKind::Hidden => (1.0 - self.rate) * seg(self.c1, self.w1) + self.rate * seg(self.c2, self.w2),
        }
    }

    /// Largest value of `z` the spec can produce.
    pub fn z_max(&self) -> f64 {
        match self.kind {
            AttackKind::ZeroAlarm => self.c1 + self.w1 / 2.0,
            AttackKind::Hidden => self.c2 + self.w2 / 2.0,
        }
    }
}

/// Draws `z = δ̄ᵀδ̄`. Every call consumes the same number of uniforms for a
/// given kind, so specs that differ only in `(c, w)` see common random numbers.
pub fn sample_z<R: Rng + ?Sized>(spec: &AttackSpec, rng: &mut R) -> Result<f64> {
    spec.validate()?;
    Ok(draw_z(spec, rng))
}

fn draw_z<R: Rng + ?Sized>(spec: &AttackSpec, rng: &mut R) -> f64 {
    let above = match spec.kind {
        AttackKind::ZeroAlarm => false,
        AttackKind::Hidden => rng.random::<f64>() < spec.rate,
    };
    let u: f64 = rng.random();
    if above {
        // (c2 - w2/2, c2 + w2/2]: the lower end may coincide with alpha.
        spec.c2 + spec.w2 / 2.0 - spec.w2 * u
    } else {
        let hi = (spec.c1 + spec.w1 / 2.0).min(spec.alpha);
        let lo = (spec.c1 - spec.w1 / 2.0).clamp(0.0, hi);
        (lo + spec.w1 * u).clamp(lo, hi)
    }
}

fn isotropic<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g: DVector<f64> = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let norm = g.norm();
        if norm > 1e-300 {
            return g / norm;
        }
    }
}

fn direction<R: Rng + ?Sized>(spec: &AttackSpec, p: usize, held: Option<&DVector<f64>>, rng: &mut R) -> Result<DVector<f64>> {
    match &spec.direction {
        DirectionMode::Fixed(u) => {
            if u.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "fixed attack direction has length {}, expected {p}",
                    u.len()
                )));
            }
            Ok(DVector::from_column_slice(u))
        }
        DirectionMode::Haar => match held {
            Some(u) => Ok(u.clone()),
            None => Ok(isotropic(p, rng)),
        },
        DirectionMode::UniformSphere => Ok(isotropic(p, rng)),
    }
}

/// `δ̄ = √z · u`.
pub fn sample_delta_bar<R: Rng + ?Sized>(spec: &AttackSpec, p: usize, rng: &mut R) -> Result<DVector<f64>> {
    spec.validate()?;
    let z = draw_z(spec, rng);
    Ok(direction(spec, p, None, rng)? * z.sqrt())
}

/// Per-trial attacker state (only the held direction of [`DirectionMode::Haar`]).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialAttack {
    held: Option<DVector<f64>>,
}

/// Injects `δ = −C e − η + Σ^{1/2} δ̄`, cancelling the honest residual.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackPolicy {
    spec: AttackSpec,
    c: DMatrix<f64>,
    sigma_sqrt: DMatrix<f64>,
}

pub fn make_policy(spec: &AttackSpec, model: &PlantModel) -> Result<AttackPolicy> {
    spec.validate()?;
    if let DirectionMode::Fixed(u) = &spec.direction {
        if u.len() != model.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "fixed attack direction has length {}, plant has {} outputs",
                u.len(),
                model.output_dim()
            )));
        }
    }
    Ok(AttackPolicy {
        spec: spec.clone(),
        c: model.c().clone(),
        sigma_sqrt: model.residual_covariance_sqrt().clone(),
    })
}

impl AttackPolicy {
    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    pub fn check_model(&self, model: &PlantModel) -> Result<()> {
        if model.c().shape() != self.c.shape() {
            return Err(Error::DimensionMismatch("attack policy built for a different plant".into()));
        }
        Ok(())
    }

    pub fn start_trial<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialAttack {
        let held = match self.spec.direction {
            DirectionMode::Haar => Some(isotropic(self.c.nrows(), rng)),
            _ => None,
        };
        TrialAttack { held }
    }

    /// Returns `(δ, δ̄)` where `δ̄` is the normalized attack actually realized
    /// in the residual.
    pub fn inject<R: Rng + ?Sized>(
        &self,
        state: &TrialAttack,
        e: &DVector<f64>,
        eta: &DVector<f64>,
        rng: &mut R,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let z = draw_z(&self.spec, rng);
        let u = direction(&self.spec, self.c.nrows(), state.held.as_ref(), rng)?;
        let delta_bar = u * (z.sqrt() * (1.0 - INJECTION_GUARD));
        let delta = -(&self.c * e) - eta + &self.sigma_sqrt * &delta_bar;
        Ok((delta, delta_bar))
    }
}
