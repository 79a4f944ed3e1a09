//! Labeled ellipsoidal reachable-set bounds shared by both bounding methods.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ellipsoid::{minkowski_sum_pair, Ellipsoid};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lmi,
    Geometric,
}

/// Which reachable set a bound covers. The noise-driven state and error
/// share one set, reported as [`Target::NoiseError`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    NoiseError,
    AttackError,
    AttackState,
    TotalState,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lmi => "lmi",
            Method::Geometric => "geometric",
        }
    }
}

impl Target {
    pub const ALL: [Target; 4] = [
        Target::NoiseError,
        Target::AttackError,
        Target::AttackState,
        Target::TotalState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::NoiseError => "noise_error",
            Target::AttackError => "attack_error",
            Target::AttackState => "attack_state",
            Target::TotalState => "total_state",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Smallest eigenvalue of the LMI block matrix at the solution.
    #[serde(default)]
    pub lmi_min_eig: Option<f64>,
    /// Newton iterations (LMI) summed over the barrier path.
    #[serde(default)]
    pub iterations: usize,
    /// Number of Minkowski terms kept (geometric).
    #[serde(default)]
    pub terms_used: Option<usize>,
    /// Smallest and largest feasible `a` seen on the search grid (LMI).
    #[serde(default)]
    pub feasible_a: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachBound {
    pub shape: Ellipsoid,
    pub method: Method,
    pub target: Target,
    pub a_star: Option<f64>,
    pub volume: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundRepr {
    method: Method,
    target: Target,
    a_star: Option<f64>,
    #[serde(rename = "P")]
    p: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    volume: f64,
    #[serde(default)]
    terms_used: Option<usize>,
    #[serde(default)]
    lmi_min_eig: Option<f64>,
    #[serde(default)]
    iterations: usize,
    #[serde(default)]
    feasible_a: Option<(f64, f64)>,
}

impl ReachBound {
    pub fn new(shape: Ellipsoid, method: Method, target: Target) -> Self {
        ReachBound {
            volume: shape.volume(),
            shape,
            method,
            target,
            a_star: None,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    /// Quadratic-form matrix `P = Q⁻¹`, `None` for a degenerate shape.
    pub fn p_matrix(&self) -> Option<DMatrix<f64>> {
        self.shape.quadratic_form()
    }

    /// `xᵀ Q⁺ x` (infinite off the range of `Q`).
    pub fn membership(&self, x: &DVector<f64>) -> Result<f64> {
        self.shape.membership(x)
    }

    pub fn contains(&self, x: &DVector<f64>, slack: f64) -> Result<bool> {
        self.shape.contains(x, slack)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.repr()).expect("bound serializes")
    }

    fn repr(&self) -> BoundRepr {
        BoundRepr {
            method: self.method,
            target: self.target,
            a_star: self.a_star,
            p: self.p_matrix().as_ref().map(linalg::to_rows),
            q: linalg::to_rows(self.shape.shape()),
            volume: self.volume,
            terms_used: self.diagnostics.terms_used,
            lmi_min_eig: self.diagnostics.lmi_min_eig,
            iterations: self.diagnostics.iterations,
            feasible_a: self.diagnostics.feasible_a,
        }
    }
}

impl Serialize for ReachBound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.repr().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ReachBound {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = BoundRepr::deserialize(d)?;
        let q = linalg::from_rows(&r.q).map_err(serde::de::Error::custom)?;
        let shape = Ellipsoid::new(q).map_err(serde::de::Error::custom)?;
        Ok(ReachBound {
            shape,
            method: r.method,
            target: r.target,
            a_star: r.a_star,
            volume: r.volume,
            diagnostics: Diagnostics {
                lmi_min_eig: r.lmi_min_eig,
                iterations: r.iterations,
                terms_used: r.terms_used,
                feasible_a: r.feasible_a,
            },
        })
    }
}

/// `E_x = E_x^v ⊕ E_x^δ`, fitted with a single pair sum.
pub fn total_state_bound(noise: &ReachBound, attack: &ReachBound) -> Result<ReachBound> {
    if noise.method != attack.method {
        return Err(Error::InvalidConfig(
            "total bound must combine bounds of one method".into(),
        ));
    }
    let shape = minkowski_sum_pair(&noise.shape, &attack.shape)?;
    Ok(ReachBound::new(shape, noise.method, Target::TotalState))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(r: f64) -> Ellipsoid {
        Ellipsoid::ball(2, r)
    }

    #[test]
    fn balls_add_radii() {
        let v = ReachBound::new(ball(1.0), Method::Lmi, Target::NoiseError);
        let d = ReachBound::new(ball(2.0), Method::Lmi, Target::AttackState);
        let t = total_state_bound(&v, &d).unwrap();
        let p = t.p_matrix().unwrap();
        assert!(linalg::max_abs(&(p - DMatrix::identity(2, 2) / 9.0)) < 1e-9);
        assert_eq!(t.target, Target::TotalState);
    }

    #[test]
    fn degenerate_attack_is_identity() {
        let v = ReachBound::new(Ellipsoid::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap(), Method::Geometric, Target::NoiseError);
        let d = ReachBound::new(Ellipsoid::zero(2), Method::Geometric, Target::AttackState);
        let t = total_state_bound(&v, &d).unwrap();
        assert_eq!(t.shape, v.shape);
    }

    #[test]
    fn json_round_trip() {
        let mut b = ReachBound::new(ball(2.0), Method::Lmi, Target::AttackState);
        b.a_star = Some(0.5);
        b.diagnostics.lmi_min_eig = Some(1e-9);
        let v = b.to_json();
        assert_eq!(v["method"], "lmi");
        assert_eq!(v["target"], "attack_state");
        assert!((v["volume"].as_f64().unwrap() - 4.0 * std::f64::consts::PI).abs() < 1e-9);
        let back: ReachBound = serde_json::from_value(v).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn degenerate_bound_has_null_p() {
        let b = ReachBound::new(Ellipsoid::zero(2), Method::Geometric, Target::AttackState);
        assert!(b.to_json()["P"].is_null());
        assert_eq!(b.volume, 0.0);
    }
}
