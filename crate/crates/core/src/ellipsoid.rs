//! Origin-centred ellipsoids `{x : xᵀ Q⁻¹ x ≤ 1}` described by their shape matrix `Q`.
//!
//! Singular shape matrices are allowed; the ellipsoid then collapses onto the
//! range of `Q`. Minkowski sums are outer-approximated, either pairwise inside
//! the family `(1 + 1/β) Q₁ + (1 + β) Q₂` or for many summands at once through
//! the direction-parameterized formula
//! `Q(l) = (Σ √(lᵀQᵢl)) · (Σ Qᵢ / √(lᵀQᵢl))`.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Membership slack used throughout for floating-point round-off.
pub const MEMBERSHIP_SLACK: f64 = 1e-9;
/// Points this far outside `range(Q)` are rejected by membership tests.
pub const RANGE_TOL: f64 = 1e-9;
/// Relative eigenvalue cut used to decide the numerical range of `Q`.
const RANK_TOL: f64 = 1e-12;
/// Default number of fan directions in the plane.
pub const PLANAR_FAN: usize = 72;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EllipsoidRepr", into = "EllipsoidRepr")]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EllipsoidRepr {
    dim: usize,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
}

impl TryFrom<EllipsoidRepr> for Ellipsoid {
    type Error = Error;

    fn try_from(repr: EllipsoidRepr) -> Result<Self> {
        let q = linalg::from_rows(&repr.q)?;
        if q.nrows() != repr.dim {
            return Err(Error::DimensionMismatch(format!(
                "dim = {} but Q has {} rows",
                repr.dim,
                q.nrows()
            )));
        }
        Ellipsoid::new(q)
    }
}

impl From<Ellipsoid> for EllipsoidRepr {
    fn from(e: Ellipsoid) -> Self {
        EllipsoidRepr {
            dim: e.dim(),
            q: linalg::to_rows(&e.shape),
        }
    }
}

impl Ellipsoid {
    /// Builds an ellipsoid from a symmetric PSD shape matrix.
    pub fn new(shape: DMatrix<f64>) -> Result<Self> {
        linalg::psd_eigen(&shape)?;
        Ok(Ellipsoid {
            shape: linalg::symmetrize(&shape),
        })
    }

    /// Ellipsoid `{x : xᵀ P x ≤ 1}` from a positive definite quadratic form.
    pub fn from_quadratic_form(p: &DMatrix<f64>) -> Result<Self> {
        let p = linalg::require_pd(p, "quadratic form P")?;
        Ellipsoid::new(linalg::spd_inverse(&p, "quadratic form P")?)
    }

    pub fn ball(dim: usize, radius: f64) -> Self {
        Ellipsoid {
            shape: DMatrix::identity(dim, dim) * (radius * radius),
        }
    }

    /// The single point at the origin.
    pub fn zero(dim: usize) -> Self {
        Ellipsoid {
            shape: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn into_shape(self) -> DMatrix<f64> {
        self.shape
    }

    pub fn is_zero(&self) -> bool {
        linalg::max_abs(&self.shape) == 0.0
    }

    /// `P = Q⁻¹` when the ellipsoid is full-dimensional.
    pub fn quadratic_form(&self) -> Option<DMatrix<f64>> {
        let chol = self.shape.clone().cholesky()?;
        Some(linalg::symmetrize(&chol.inverse()))
    }

    /// Support function `h(l) = √(lᵀ Q l)`.
    pub fn support(&self, l: &DVector<f64>) -> f64 {
        l.dot(&(&self.shape * l)).max(0.0).sqrt()
    }

    pub fn linear_image(&self, m: &DMatrix<f64>) -> Result<Ellipsoid> {
        linear_image(self, m)
    }

    /// `xᵀ Q⁺ x`, or `+∞` when `x` leaves `range(Q)` by more than [`RANGE_TOL`].
    pub fn membership(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point of length {} vs ellipsoid of dimension {}",
                x.len(),
                self.dim()
            )));
        }
        if let Some(chol) = self.shape.clone().cholesky() {
            let y = chol.solve(x);
            return Ok(x.dot(&y));
        }
        let (pinv, null) = linalg::psd_pinv(&self.shape, RANK_TOL);
        if null.ncols() > 0 && (null.transpose() * x).norm() > RANGE_TOL {
            return Ok(f64::INFINITY);
        }
        Ok(x.dot(&(pinv * x)))
    }

    pub fn contains(&self, x: &DVector<f64>, slack: f64) -> Result<bool> {
        Ok(self.membership(x)? <= 1.0 + slack)
    }

    pub fn volume(&self) -> f64 {
        volume(self)
    }

    /// Scales every semi-axis by `factor`.
    pub fn scaled(&self, factor: f64) -> Ellipsoid {
        Ellipsoid {
            shape: &self.shape * (factor * factor),
        }
    }

    /// Boundary points of a planar ellipse, for plotting.
    pub fn outline(&self, samples: usize) -> Result<Vec<[f64; 2]>> {
        if self.dim() != 2 {
            return Err(Error::DimensionMismatch(
                "outline is only defined in two dimensions".into(),
            ));
        }
        let root = sym_sqrt(&self.shape)?;
        Ok((0..=samples)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / samples as f64;
                let p = &root * DVector::from_vec(vec![t.cos(), t.sin()]);
                [p[0], p[1]]
            })
            .collect())
    }
}

/// Symmetric PSD square root by spectral decomposition.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = linalg::psd_eigen(m)?;
    let roots = eig.eigenvalues.map(f64::sqrt);
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok(linalg::symmetrize(&s))
}

/// Volume of the unit ball in `n` dimensions.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * std::f64::consts::TAU / n as f64,
    }
}

pub fn volume(e: &Ellipsoid) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(e.shape.clone());
    let det: f64 = eig.eigenvalues.iter().product();
    if det <= 0.0 {
        return 0.0;
    }
    unit_ball_volume(e.dim()) * det.sqrt()
}

pub fn linear_image(e: &Ellipsoid, m: &DMatrix<f64>) -> Result<Ellipsoid> {
    if m.ncols() != e.dim() {
        return Err(Error::DimensionMismatch(format!(
            "map with {} columns applied to ellipsoid of dimension {}",
            m.ncols(),
            e.dim()
        )));
    }
    Ok(Ellipsoid {
        shape: linalg::symmetrize(&(m * &e.shape * m.transpose())),
    })
}

fn check_same_dim(a: &Ellipsoid, b: &Ellipsoid) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "ellipsoids of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `log det(Uᵀ Q U)`: log pseudo-volume of `Q` restricted to the subspace `U`.
fn restricted_log_det(q: &DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
    if basis.ncols() == 0 {
        return 0.0;
    }
    let r = basis.transpose() * q * basis;
    linalg::log_det_spd(&linalg::symmetrize(&r)).unwrap_or(f64::NEG_INFINITY)
}

/// Total order used to make the pairwise sum independent of argument order.
fn canonical_cmp(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Ordering {
    a.trace()
        .total_cmp(&b.trace())
        .then_with(|| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Minimum-volume member of `(1 + 1/β) Q₁ + (1 + β) Q₂`, `β > 0`.
///
/// When `Q₁ + Q₂` is singular the volume is measured inside its range, which
/// reduces to the exact segment sum for collinear degenerate summands.
pub fn minkowski_sum_pair(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<Ellipsoid> {
    check_same_dim(e1, e2)?;
    if e1.is_zero() {
        return Ok(e2.clone());
    }
    if e2.is_zero() {
        return Ok(e1.clone());
    }
    let (q1, q2) = match canonical_cmp(&e1.shape, &e2.shape) {
        Ordering::Greater => (&e2.shape, &e1.shape),
        _ => (&e1.shape, &e2.shape),
    };
    // Work at unit scale so that scaling both inputs by a power of two
    // scales the result exactly.
    let scale = q1.trace() + q2.trace();
    let (q1, q2) = (q1 / scale, q2 / scale);
    let basis = linalg::psd_range(&(&q1 + &q2), RANK_TOL);
    let family = |s: f64| &q1 * (1.0 + (-s).exp()) + &q2 * (1.0 + s.exp());
    let centre = 0.5 * (q1.trace() / q2.trace()).ln();
    let (s, _) = golden_section(
        |s| restricted_log_det(&family(s), &basis),
        centre - 30.0,
        centre + 30.0,
        1e-10,
    );
    Ok(Ellipsoid {
        shape: linalg::symmetrize(&(family(s) * scale)),
    })
}

/// How many-term Minkowski sums are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumStrategy {
    /// Smallest of the direction fan, the pairwise fold and the weight
    /// optimization started from the better of the two.
    Best,
    /// Direction-parameterized formula over a fixed fan of directions.
    DirectionFan,
    /// Sequential pairwise folding with [`minkowski_sum_pair`].
    PairwiseFold,
    /// Minimum volume over the whole family `Σ Qᵢ / pᵢ`, `p` in the simplex,
    /// which contains every fan candidate and every fold.
    WeightOptimized,
}

/// Outer ellipsoid of the Minkowski sum of all `terms`.
///
/// Returns the smallest of the direction-fan fit, the pairwise fold and the
/// weight-optimized fit.
pub fn minkowski_sum_many(terms: &[Ellipsoid]) -> Result<Ellipsoid> {
    minkowski_sum_many_with(terms, SumStrategy::Best)
}

pub fn minkowski_sum_many_with(terms: &[Ellipsoid], strategy: SumStrategy) -> Result<Ellipsoid> {
    let first = terms.first().ok_or(Error::EmptyList)?;
    for t in terms {
        check_same_dim(first, t)?;
    }
    let live: Vec<&DMatrix<f64>> = terms
        .iter()
        .filter(|t| !t.is_zero())
        .map(|t| &t.shape)
        .collect();
    match live.len() {
        0 => return Ok(Ellipsoid::zero(first.dim())),
        1 => return Ok(Ellipsoid::new(live[0].clone())?),
        _ => {}
    }
    // Unit-scale working copies keep the fit exactly equivariant under
    // power-of-two scalings of all terms.
    let scale: f64 = live.iter().map(|q| q.trace()).sum();
    let unit: Vec<DMatrix<f64>> = live.iter().map(|q| *q / scale).collect();
    let live: Vec<&DMatrix<f64>> = unit.iter().collect();
    let fitted = match strategy {
        SumStrategy::DirectionFan => direction_fan(&live),
        SumStrategy::PairwiseFold => pairwise_fold(&live)?,
        SumStrategy::WeightOptimized => {
            let fan = direction_fan(&live);
            weight_optimized(&live, &fan.shape).unwrap_or(fan)
        }
        SumStrategy::Best => {
            let total: DMatrix<f64> = live.iter().fold(
                DMatrix::zeros(first.dim(), first.dim()),
                |acc, q| acc + *q,
            );
            let basis = linalg::psd_range(&total, RANK_TOL);
            let score = |e: &Ellipsoid| restricted_log_det(&e.shape, &basis);
            let fan = direction_fan(&live);
            let fold = pairwise_fold(&live)?;
            let start = if score(&fan) <= score(&fold) { fan } else { fold };
            match weight_optimized(&live, &start.shape) {
                Some(opt) if score(&opt) < score(&start) => opt,
                _ => start,
            }
        }
    };
    Ok(Ellipsoid {
        shape: fitted.shape * scale,
    })
}

fn pairwise_fold(terms: &[&DMatrix<f64>]) -> Result<Ellipsoid> {
    let mut acc = Ellipsoid {
        shape: terms[0].clone(),
    };
    for t in &terms[1..] {
        acc = minkowski_sum_pair(&acc, &Ellipsoid { shape: (*t).clone() })?;
    }
    Ok(acc)
}

fn weighted_shape(terms: &[&DMatrix<f64>], p: &[f64]) -> DMatrix<f64> {
    let n = terms[0].nrows();
    let q = terms
        .iter()
        .zip(p)
        .fold(DMatrix::zeros(n, n), |acc, (t, w)| acc + *t / *w);
    linalg::symmetrize(&q)
}

/// Fixed-point descent of `log det Σ Qᵢ/pᵢ` over the simplex. Stationary
/// points satisfy `pᵢ ∝ √tr(Q⁻¹Qᵢ)`; each step moves towards that map and
/// backtracks until the volume drops. `None` when the terms do not span.
fn weight_optimized(terms: &[&DMatrix<f64>], start: &DMatrix<f64>) -> Option<Ellipsoid> {
    let target = |q: &DMatrix<f64>| -> Option<Vec<f64>> {
        let inv = q.clone().cholesky()?.inverse();
        let raw: Vec<f64> = terms.iter().map(|t| (&inv * *t).trace().max(0.0).sqrt()).collect();
        let sum: f64 = raw.iter().sum();
        (sum > 0.0 && raw.iter().all(|v| *v > 0.0)).then(|| raw.iter().map(|v| v / sum).collect())
    };
    let log_det = |q: &DMatrix<f64>| linalg::log_det_spd(q);
    let mut p = target(start)?;
    let mut q = weighted_shape(terms, &p);
    let mut f = log_det(&q)?;
    for _ in 0..500 {
        let next = target(&q)?;
        let mut t = 1.0;
        let mut improved = None;
        while t > 1e-6 {
            let trial: Vec<f64> = p.iter().zip(&next).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            let qt = weighted_shape(terms, &trial);
            if let Some(ft) = log_det(&qt) {
                if ft < f {
                    improved = Some((trial, qt, ft));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, qt, ft)) = improved else { break };
        let gain = f - ft;
        p = trial;
        q = qt;
        f = ft;
        if gain < 1e-13 {
            break;
        }
    }
    Some(Ellipsoid { shape: q })
}

/// Unit directions probed by the N-ary fit.
pub fn fan_directions(n: usize) -> Vec<DVector<f64>> {
    if n == 1 {
        return vec![DVector::from_element(1, 1.0)];
    }
    if n == 2 {
        return (0..PLANAR_FAN)
            .map(|j| {
                let t = std::f64::consts::PI * j as f64 / PLANAR_FAN as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect();
    }
    let mut dirs = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        dirs.push(DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 }));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            for sign in [1.0, -1.0] {
                let mut d = DVector::zeros(n);
                d[i] = std::f64::consts::FRAC_1_SQRT_2;
                d[j] = sign * std::f64::consts::FRAC_1_SQRT_2;
                dirs.push(d);
            }
        }
    }
    // Fixed-seed scatter fills the remaining n² slots deterministically.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_fa11);
    while dirs.len() < 2 * n * n {
        let d = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let norm = d.norm();
        if norm > 1e-3 {
            dirs.push(d / norm);
        }
    }
    dirs
}

/// Tight outer ellipsoid touching the sum in direction `l`.
fn fan_candidate(terms: &[&DMatrix<f64>], l: &DVector<f64>) -> DMatrix<f64> {
    let n = l.len();
    let weights: Vec<f64> = terms
        .iter()
        .map(|q| {
            let s = l.dot(&(*q * l)).max(0.0).sqrt();
            // A term with no extent along l still needs positive weight.
            let floor = 1e-8 * (q.trace() / n as f64).sqrt();
            s.max(floor).max(1e-300)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut q = DMatrix::zeros(n, n);
    for (term, w) in terms.iter().zip(&weights) {
        q += *term / *w;
    }
    linalg::symmetrize(&(q * total))
}

fn direction_fan(terms: &[&DMatrix<f64>]) -> Ellipsoid {
    let n = terms[0].nrows();
    let total: DMatrix<f64> = terms
        .iter()
        .fold(DMatrix::zeros(n, n), |acc, q| acc + *q);
    let basis = linalg::psd_range(&total, RANK_TOL);
    let score = |q: &DMatrix<f64>| restricted_log_det(q, &basis);

    let mut best: Option<(f64, DMatrix<f64>)> = None;
    let mut best_index = 0;
    let mut dirs = fan_directions(n);
    if n > 2 {
        let eig = nalgebra::SymmetricEigen::new(total.clone());
        dirs.extend((0..n).map(|i| eig.eigenvectors.column(i).into_owned()));
    }
    for (i, l) in dirs.iter().enumerate() {
        let q = fan_candidate(terms, l);
        let s = score(&q);
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            best = Some((s, q));
            best_index = i;
        }
    }
    let (best_score, mut best_q) = best.expect("fan is non-empty");

    if n == 2 {
        let step = std::f64::consts::PI / PLANAR_FAN as f64;
        let centre = step * best_index as f64;
        let at = |t: f64| fan_candidate(terms, &DVector::from_vec(vec![t.cos(), t.sin()]));
        let (t, s) = golden_section(|t| score(&at(t)), centre - step, centre + step, 1e-10);
        if s < best_score {
            best_q = at(t);
        }
    }
    Ellipsoid { shape: best_q }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig, Strategy};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn diag(v: &[f64]) -> Ellipsoid {
        Ellipsoid::new(DMatrix::from_diagonal(&DVector::from_row_slice(v))).unwrap()
    }

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        let d = linalg::max_abs(&(a - b));
        assert!(d <= tol, "max diff {d:e} > {tol:e}\n{a}\n{b}");
    }

    /// Uniform point inside the unit ball mapped through `sqrt(Q)`.
    fn sample_inside(root: &DMatrix<f64>, rng: &mut ChaCha8Rng, boundary: bool) -> DVector<f64> {
        let n = root.nrows();
        let g: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let mut u: DVector<f64> = &g / g.norm();
        if !boundary {
            u *= rng.random::<f64>().powf(1.0 / n as f64);
        }
        root * u
    }

    #[test]
    fn sqrt_examples() {
        assert_close(&sym_sqrt(&DMatrix::identity(2, 2)).unwrap(), &DMatrix::identity(2, 2), 1e-15);
        let s = sym_sqrt(&DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0])).unwrap();
        assert_close(&s, &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]), 1e-14);
        let sigma = DMatrix::from_row_slice(2, 2, &[2.086, 0.134, 0.134, 2.230]);
        let s = sym_sqrt(&sigma).unwrap();
        assert_close(&(&s * &s), &sigma, 1e-9 * (1.0 + linalg::max_abs(&sigma)));
        assert_close(&s, &s.transpose(), 0.0);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(sym_sqrt(&m), Err(Error::NotPsd(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(sym_sqrt(&m), Err(Error::NonSymmetric(_))));
    }

    #[test]
    fn linear_image_examples() {
        let i2 = Ellipsoid::ball(2, 1.0);
        let scaled = i2.linear_image(&(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert_close(scaled.shape(), &(DMatrix::identity(2, 2) * 4.0), 0.0);
        assert!(i2.linear_image(&DMatrix::zeros(2, 2)).unwrap().is_zero());
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let img = diag(&[1.0, 4.0]).linear_image(&swap).unwrap();
        assert_close(img.shape(), diag(&[4.0, 1.0]).shape(), 0.0);
        assert!(matches!(
            i2.linear_image(&DMatrix::zeros(2, 3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn pair_examples() {
        let i2 = Ellipsoid::ball(2, 1.0);
        let s = minkowski_sum_pair(&i2, &i2).unwrap();
        assert_close(s.shape(), &(DMatrix::identity(2, 2) * 4.0), 1e-9);
        // Minimizing 5 + 1/β + 4β gives β = 1/2 and shape 9·I.
        let s = minkowski_sum_pair(&i2, &Ellipsoid::ball(2, 2.0)).unwrap();
        assert_close(s.shape(), &(DMatrix::identity(2, 2) * 9.0), 1e-9);
        let q = diag(&[2.0, 0.5]);
        assert_eq!(minkowski_sum_pair(&Ellipsoid::zero(2), &q).unwrap(), q);
        assert!(matches!(
            minkowski_sum_pair(&Ellipsoid::zero(3), &q),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn collinear_segments_add_lengths() {
        let a = diag(&[1.0, 0.0]);
        let b = diag(&[4.0, 0.0]);
        let s = minkowski_sum_pair(&a, &b).unwrap();
        assert_close(s.shape(), diag(&[9.0, 0.0]).shape(), 1e-8);
    }

    #[test]
    fn many_examples() {
        let i2 = Ellipsoid::ball(2, 1.0);
        let s = minkowski_sum_many(&[i2.clone(), i2.clone(), i2.clone()]).unwrap();
        assert_close(s.shape(), &(DMatrix::identity(2, 2) * 9.0), 1e-9);
        let fan = minkowski_sum_many_with(&[i2.clone(), i2.clone(), i2], SumStrategy::DirectionFan)
            .unwrap();
        assert_close(fan.shape(), &(DMatrix::identity(2, 2) * 9.0), 1e-9);
        let q = Ellipsoid::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let s = minkowski_sum_many(&[q.clone(), Ellipsoid::zero(2), Ellipsoid::zero(2)]).unwrap();
        assert_close(s.shape(), q.shape(), 0.0);
        assert_eq!(minkowski_sum_many(&[]), Err(Error::EmptyList));
    }

    #[test]
    fn weight_optimized_balls_add_radii() {
        let balls = [Ellipsoid::ball(2, 1.0), Ellipsoid::ball(2, 2.0), Ellipsoid::ball(2, 0.5)];
        let s = minkowski_sum_many_with(&balls, SumStrategy::WeightOptimized).unwrap();
        assert_close(s.shape(), &(DMatrix::identity(2, 2) * 12.25), 1e-9);
    }

    #[test]
    fn many_sum_contains_sampled_pairs() {
        let q1 = diag(&[1.0, 2.0]);
        let q2 = Ellipsoid::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let sum = minkowski_sum_many(&[q1.clone(), q2.clone()]).unwrap();
        let (r1, r2) = (sym_sqrt(q1.shape()).unwrap(), sym_sqrt(q2.shape()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..10_000 {
            let boundary = i % 2 == 0;
            let x = sample_inside(&r1, &mut rng, boundary) + sample_inside(&r2, &mut rng, boundary);
            assert!(sum.contains(&x, 1e-9).unwrap(), "{x}");
        }
    }

    #[test]
    fn three_dimensional_fan_is_sound() {
        let q1 = diag(&[1.0, 2.0, 0.5]);
        let q2 = Ellipsoid::new(DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 0.7],
        ))
        .unwrap();
        let q3 = diag(&[0.0, 0.0, 3.0]);
        let sum = minkowski_sum_many(&[q1.clone(), q2.clone(), q3.clone()]).unwrap();
        let roots: Vec<_> = [&q1, &q2, &q3].iter().map(|q| sym_sqrt(q.shape()).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let x = roots
                .iter()
                .fold(DVector::zeros(3), |acc, r| acc + sample_inside(r, &mut rng, true));
            assert!(sum.contains(&x, 1e-9).unwrap());
        }
        assert_eq!(fan_directions(3).len(), 18);
    }

    #[test]
    fn contains_examples() {
        let i2 = Ellipsoid::ball(2, 1.0);
        assert!(i2.contains(&DVector::from_vec(vec![1.0, 0.0]), 0.0).unwrap());
        assert!(!i2.contains(&DVector::from_vec(vec![1.1, 0.0]), 0.0).unwrap());
        let flat = diag(&[1.0, 0.0]);
        assert!(flat.contains(&DVector::from_vec(vec![0.5, 1e-12]), 0.0).unwrap());
        assert!(!flat.contains(&DVector::from_vec(vec![0.5, 1e-3]), 0.0).unwrap());
        assert!(matches!(
            i2.contains(&DVector::zeros(3), 0.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn volume_examples() {
        use std::f64::consts::PI;
        assert!((Ellipsoid::ball(2, 1.0).volume() - PI).abs() < 1e-14);
        assert!((Ellipsoid::ball(2, 2.0).volume() - 4.0 * PI).abs() < 1e-13);
        assert_eq!(diag(&[1.0, 0.0]).volume(), 0.0);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn json_schema() {
        let e = diag(&[1.0, 4.0]);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"dim":2,"Q":[[1.0,0.0],[0.0,4.0]]}"#);
        let back: Ellipsoid = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
        assert!(serde_json::from_str::<Ellipsoid>(r#"{"dim":3,"Q":[[1.0]]}"#).is_err());
    }

    fn spd2() -> impl Strategy<Value = DMatrix<f64>> {
        (0.05f64..3.0, 0.05f64..3.0, 0.0f64..std::f64::consts::PI).prop_map(|(a, b, t)| {
            let (c, s) = (t.cos(), t.sin());
            let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            linalg::symmetrize(&(&r * DMatrix::from_diagonal(&DVector::from_vec(vec![a, b])) * r.transpose()))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pair_sum_is_outer(q1 in spd2(), q2 in spd2(), seed in any::<u64>()) {
            let (e1, e2) = (Ellipsoid::new(q1).unwrap(), Ellipsoid::new(q2).unwrap());
            let sum = minkowski_sum_pair(&e1, &e2).unwrap();
            let (r1, r2) = (sym_sqrt(e1.shape()).unwrap(), sym_sqrt(e2.shape()).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..32 {
                let x = sample_inside(&r1, &mut rng, true) + sample_inside(&r2, &mut rng, true);
                prop_assert!(sum.contains(&x, 1e-9).unwrap());
            }
        }

        #[test]
        fn pair_sum_is_symmetric(q1 in spd2(), q2 in spd2()) {
            let (e1, e2) = (Ellipsoid::new(q1).unwrap(), Ellipsoid::new(q2).unwrap());
            let a = minkowski_sum_pair(&e1, &e2).unwrap();
            let b = minkowski_sum_pair(&e2, &e1).unwrap();
            prop_assert!(linalg::max_abs(&(a.shape() - b.shape())) <= 1e-10);
        }

        #[test]
        fn many_never_worse_than_fold(qs in proptest::collection::vec(spd2(), 2..6)) {
            let terms: Vec<Ellipsoid> = qs.into_iter().map(|q| Ellipsoid::new(q).unwrap()).collect();
            let best = minkowski_sum_many(&terms).unwrap();
            let fold = minkowski_sum_many_with(&terms, SumStrategy::PairwiseFold).unwrap();
            prop_assert!(best.volume() <= fold.volume() + 1e-9);
        }

        #[test]
        fn weight_optimized_is_outer_and_tighter(qs in proptest::collection::vec(spd2(), 2..6), seed in any::<u64>()) {
            let terms: Vec<Ellipsoid> = qs.into_iter().map(|q| Ellipsoid::new(q).unwrap()).collect();
            let opt = minkowski_sum_many_with(&terms, SumStrategy::WeightOptimized).unwrap();
            let fan = minkowski_sum_many_with(&terms, SumStrategy::DirectionFan).unwrap();
            prop_assert!(opt.volume() <= fan.volume() * (1.0 + 1e-12));
            prop_assert!(minkowski_sum_many(&terms).unwrap().volume() <= opt.volume() * (1.0 + 1e-12));
            let roots: Vec<DMatrix<f64>> = terms.iter().map(|t| sym_sqrt(t.shape()).unwrap()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..32 {
                let x = roots.iter().fold(DVector::zeros(2), |acc, r| acc + sample_inside(r, &mut rng, true));
                prop_assert!(opt.contains(&x, 1e-9).unwrap());
            }
        }

        #[test]
        fn sqrt_of_square_roundtrips(q in spd2()) {
            let s = sym_sqrt(&q).unwrap();
            let again = sym_sqrt(&(&s * &s)).unwrap();
            prop_assert!(linalg::max_abs(&(again - &s)) <= 1e-8);
            prop_assert!(linalg::max_abs(&(&s * &s - &q)) <= 1e-9 * (1.0 + linalg::max_abs(&q)));
        }

        #[test]
        fn linear_image_is_sound(q in spd2(), m in proptest::collection::vec(-2.0f64..2.0, 4), seed in any::<u64>()) {
            let e = Ellipsoid::new(q).unwrap();
            let m = DMatrix::from_row_slice(2, 2, &m);
            let img = e.linear_image(&m).unwrap();
            let root = sym_sqrt(e.shape()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..16 {
                let x = sample_inside(&root, &mut rng, false);
                prop_assert!(img.contains(&(&m * x), 1e-9).unwrap());
            }
        }
    }
}
