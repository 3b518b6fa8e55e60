//! Shrinkage priors on coefficients and their hyperpriors.
//!
//! Three families, all centered at zero:
//!
//! * `L1` — Laplace with rate `lambda`: density `(lambda/2) exp(-lambda |x|)`.
//!   Sparsity-inducing; its prox is the soft-threshold.
//! * `L2` — Gaussian with variance `sigma2`. Smooth shrinkage, never exactly
//!   zero.
//! * `L1L2` — the product blend `exp(-lambda |x| - x^2 / (2 sigma2))`,
//!   normalized in closed form. Combines a sparse spike with Gaussian tails.
//!
//! The pair `(lambda, sigma)` is awkward to explore jointly, so samplers
//! work on a reparameterization: total shrinkage `s = 1/sigma + lambda/sqrt(2)`
//! and sparsity fraction `f = (lambda/sqrt(2)) / s`. Pure families sit on the
//! boundary (`f = 1` is Laplace, `f = 0` Gaussian) and the blend fills the
//! interior. `sqrt(2)` makes the two components comparable: a Laplace with
//! rate `lambda` has the same variance as a Gaussian with `sigma =
//! sqrt(2)/lambda`, so equal contributions to `s` mean equal prior spread.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{Design, Group, Side};
use crate::error::{Error, Result};
use crate::likelihood::Coefficients;
use crate::numeric::{ln_normal_sf, LN_2PI};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShrinkFamily {
    L1,
    L2,
    L1L2,
}

impl ShrinkFamily {
    pub fn token(self) -> &'static str {
        match self {
            ShrinkFamily::L1 => "l1",
            ShrinkFamily::L2 => "l2",
            ShrinkFamily::L1L2 => "l1l2",
        }
    }
}

/// A zero-centered shrinkage prior (equivalently, a penalty) on one
/// coefficient group-side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Penalty {
    L1 { lambda: f64 },
    L2 { sigma2: f64 },
    L1L2 { lambda: f64, sigma2: f64 },
}

impl Penalty {
    pub fn family(&self) -> ShrinkFamily {
        match self {
            Penalty::L1 { .. } => ShrinkFamily::L1,
            Penalty::L2 { .. } => ShrinkFamily::L2,
            Penalty::L1L2 { .. } => ShrinkFamily::L1L2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Penalty::L1 { lambda } => lambda > 0.0 && lambda.is_finite(),
            Penalty::L2 { sigma2 } => sigma2 > 0.0 && sigma2.is_finite(),
            Penalty::L1L2 { lambda, sigma2 } => {
                lambda > 0.0 && lambda.is_finite() && sigma2 > 0.0 && sigma2.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid shrinkage parameters: {self:?}")))
        }
    }

    /// Normalized log prior density at `x`.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Penalty::L1 { lambda } => (0.5 * lambda).ln() - lambda * x.abs(),
            Penalty::L2 { sigma2 } => -0.5 * (LN_2PI + sigma2.ln()) - x * x / (2.0 * sigma2),
            Penalty::L1L2 { lambda, sigma2 } => {
                // exp(-lambda|x| - x^2/(2 s2)) normalizes to
                // sqrt(8 pi s2) * exp(s2 lambda^2 / 2) * Phi(-sqrt(s2) lambda).
                let sigma = sigma2.sqrt();
                let log_norm = 0.5 * (8.0 * std::f64::consts::PI * sigma2).ln()
                    + 0.5 * sigma2 * lambda * lambda
                    + ln_normal_sf(sigma * lambda);
                -lambda * x.abs() - x * x / (2.0 * sigma2) - log_norm
            }
        }
    }

    /// The x-dependent part of the negative log density (what MAP fitting
    /// subtracts from the log-likelihood).
    pub fn penalty(&self, x: f64) -> f64 {
        match *self {
            Penalty::L1 { lambda } => lambda * x.abs(),
            Penalty::L2 { sigma2 } => x * x / (2.0 * sigma2),
            Penalty::L1L2 { lambda, sigma2 } => lambda * x.abs() + x * x / (2.0 * sigma2),
        }
    }

    /// Proximal operator: `argmin_u penalty(u) + (u - x)^2 / (2t)`.
    pub fn prox(&self, x: f64, t: f64) -> f64 {
        match *self {
            Penalty::L1 { lambda } => soft_threshold(x, t * lambda),
            Penalty::L2 { sigma2 } => x / (1.0 + t / sigma2),
            Penalty::L1L2 { lambda, sigma2 } => soft_threshold(x, t * lambda) / (1.0 + t / sigma2),
        }
    }

    /// Coordinates in the (total shrinkage, sparsity fraction) plane.
    pub fn total_shrinkage(&self) -> (f64, f64) {
        match *self {
            Penalty::L1 { lambda } => (lambda / SQRT_2, 1.0),
            Penalty::L2 { sigma2 } => (1.0 / sigma2.sqrt(), 0.0),
            Penalty::L1L2 { lambda, sigma2 } => {
                let s = 1.0 / sigma2.sqrt() + lambda / SQRT_2;
                (s, lambda / SQRT_2 / s)
            }
        }
    }

    /// Rebuild a penalty of the given family from grid coordinates. For the
    /// pure families only `s` matters; `f` is pinned to the boundary.
    pub fn from_total(family: ShrinkFamily, s: f64, f: f64) -> Penalty {
        match family {
            ShrinkFamily::L1 => Penalty::L1 { lambda: SQRT_2 * s },
            ShrinkFamily::L2 => Penalty::L2 { sigma2: 1.0 / (s * s) },
            ShrinkFamily::L1L2 => {
                let lambda = SQRT_2 * f * s;
                let sigma = 1.0 / (s * (1.0 - f));
                Penalty::L1L2 { lambda, sigma2: sigma * sigma }
            }
        }
    }

    /// Draw one coefficient from this prior.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Penalty::L1 { lambda } => {
                let mag = -rng.random::<f64>().ln() / lambda;
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
            Penalty::L2 { sigma2 } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                sigma2.sqrt() * z
            }
            Penalty::L1L2 { lambda, sigma2 } => {
                // |x| has the law of sigma * (W - a) where W is standard
                // normal truncated to [a, inf) and a = sigma * lambda.
                let sigma = sigma2.sqrt();
                let a = sigma * lambda;
                let w = truncated_standard_normal_lower(rng, a);
                let mag = sigma * (w - a);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
        }
    }
}

#[inline]
pub fn soft_threshold(x: f64, threshold: f64) -> f64 {
    if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        0.0
    }
}

/// Standard normal truncated to `[a, inf)`. Plain rejection when the cut is
/// mild; an exponential-proposal rejection sampler (with the optimal rate)
/// when the cut is deep in the tail, where plain rejection stalls.
fn truncated_standard_normal_lower(rng: &mut impl Rng, a: f64) -> f64 {
    if a < 0.5 {
        loop {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            if z >= a {
                return z;
            }
        }
    }
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - rng.random::<f64>().ln() / alpha;
        let accept = (-0.5 * (z - alpha) * (z - alpha)).exp();
        if rng.random::<f64>() <= accept {
            return z;
        }
    }
}

/// Independent hyperpriors on the shrinkage parameters: Gamma(shape, rate)
/// on `lambda` and Inverse-Gamma(shape, scale) on `sigma2`. Families only
/// pick up the terms for parameters they actually have.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    pub lambda_shape: f64,
    pub lambda_rate: f64,
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
}

impl Default for HyperPriors {
    fn default() -> Self {
        HyperPriors {
            lambda_shape: 1.0,
            lambda_rate: 0.1,
            sigma2_shape: 2.0,
            sigma2_scale: 0.5,
        }
    }
}

pub fn log_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - libm::lgamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn log_inv_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - libm::lgamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

impl HyperPriors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_shape", self.lambda_shape),
            ("lambda_rate", self.lambda_rate),
            ("sigma2_shape", self.sigma2_shape),
            ("sigma2_scale", self.sigma2_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("hyperprior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Joint log hyperprior density of a penalty's own parameters.
    pub fn log_density(&self, penalty: &Penalty) -> f64 {
        match *penalty {
            Penalty::L1 { lambda } => log_gamma_pdf(lambda, self.lambda_shape, self.lambda_rate),
            Penalty::L2 { sigma2 } => log_inv_gamma_pdf(sigma2, self.sigma2_shape, self.sigma2_scale),
            Penalty::L1L2 { lambda, sigma2 } => {
                log_gamma_pdf(lambda, self.lambda_shape, self.lambda_rate)
                    + log_inv_gamma_pdf(sigma2, self.sigma2_shape, self.sigma2_scale)
            }
        }
    }

    /// Draw a penalty of the given family from the hyperprior. An
    /// inverse-gamma variate is the reciprocal of a gamma variate with the
    /// scale reinterpreted as a rate.
    pub fn sample(&self, family: ShrinkFamily, rng: &mut impl Rng) -> Penalty {
        match family {
            ShrinkFamily::L1 => Penalty::L1 {
                lambda: gamma_draw(rng, self.lambda_shape, self.lambda_rate),
            },
            ShrinkFamily::L2 => Penalty::L2 {
                sigma2: 1.0 / gamma_draw(rng, self.sigma2_shape, self.sigma2_scale),
            },
            ShrinkFamily::L1L2 => Penalty::L1L2 {
                lambda: gamma_draw(rng, self.lambda_shape, self.lambda_rate),
                sigma2: 1.0 / gamma_draw(rng, self.sigma2_shape, self.sigma2_scale),
            },
        }
    }
}

fn gamma_draw(rng: &mut impl Rng, shape: f64, rate: f64) -> f64 {
    let d = rand_distr::Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters");
    rng.sample(d)
}

/// Log absolute determinant of the map `(s, f) -> (lambda, sigma2)`, needed
/// when a density over the natural parameters is explored on the
/// reparameterized grid: `|J| = 2 sqrt(2) / (s^2 (1-f)^3)`.
pub fn log_jacobian_total_to_natural(s: f64, f: f64) -> f64 {
    (2.0 * SQRT_2).ln() - 2.0 * s.ln() - 3.0 * (-f).ln_1p()
}

/// Per-(group, side) shrinkage assignment for a whole design.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<ShrinkEntry>", into = "Vec<ShrinkEntry>")]
pub struct GroupShrinkage {
    entries: BTreeMap<(Group, Side), Penalty>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ShrinkEntry {
    group: Group,
    side: Side,
    #[serde(flatten)]
    penalty: Penalty,
}

impl From<Vec<ShrinkEntry>> for GroupShrinkage {
    fn from(v: Vec<ShrinkEntry>) -> Self {
        let mut entries = BTreeMap::new();
        for e in v {
            entries.insert((e.group, e.side), e.penalty);
        }
        GroupShrinkage { entries }
    }
}

impl From<GroupShrinkage> for Vec<ShrinkEntry> {
    fn from(g: GroupShrinkage) -> Self {
        g.entries
            .into_iter()
            .map(|((group, side), penalty)| ShrinkEntry { group, side, penalty })
            .collect()
    }
}

impl GroupShrinkage {
    pub fn new() -> Self {
        Self::default()
    }

    /// The same penalty on every group-side the design carries.
    pub fn uniform_for(design: &Design, penalty: Penalty) -> Self {
        let mut map = GroupShrinkage::new();
        for (group, side) in design.groups_present() {
            map.set(group, side, penalty);
        }
        map
    }

    pub fn set(&mut self, group: Group, side: Side, penalty: Penalty) {
        self.entries.insert((group, side), penalty);
    }

    pub fn get(&self, group: Group, side: Side) -> Option<&Penalty> {
        self.entries.get(&(group, side))
    }

    pub fn require(&self, group: Group, side: Side) -> Result<&Penalty> {
        self.get(group, side).ok_or_else(|| {
            Error::Config(format!(
                "no shrinkage configured for group '{}' side '{}'",
                group.token(),
                side.token()
            ))
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (Group, Side, &Penalty)> {
        self.entries.iter().map(|(&(g, s), p)| (g, s, p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Check every group-side present in the design has a valid penalty.
    pub fn validate_for(&self, design: &Design) -> Result<()> {
        for (group, side) in design.groups_present() {
            self.require(group, side)?.validate()?;
        }
        Ok(())
    }

    /// Total penalty (negative log prior kernel) of the free coefficients.
    pub fn total_penalty(&self, design: &Design, coeffs: &Coefficients) -> f64 {
        self.fold_coefficients(design, coeffs, |pen, x| pen.penalty(x))
    }

    /// Total normalized log prior density of the free coefficients.
    pub fn total_log_density(&self, design: &Design, coeffs: &Coefficients) -> f64 {
        self.fold_coefficients(design, coeffs, |pen, x| pen.log_density(x))
    }

    fn fold_coefficients(
        &self,
        design: &Design,
        coeffs: &Coefficients,
        term: impl Fn(&Penalty, f64) -> f64,
    ) -> f64 {
        let mut acc = 0.0;
        for p in 0..design.n_predictors() as u32 {
            let group = design.predictor(p).group;
            if !design.omega_constrained(p) {
                let pen = self
                    .get(group, Side::Offense)
                    .unwrap_or_else(|| panic!("missing shrinkage for {}/offense", group.token()));
                acc += term(pen, coeffs.omega(p));
            }
            let pen = self
                .get(group, Side::Defense)
                .unwrap_or_else(|| panic!("missing shrinkage for {}/defense", group.token()));
            acc += term(pen, coeffs.delta(p));
        }
        acc
    }

    /// In-place proximal step on every free coefficient: each slot moves to
    /// `prox(x, t)` under its group-side penalty. Intercepts are untouched
    /// (they are never penalized).
    pub fn apply_prox(&self, design: &Design, coeffs: &mut Coefficients, t: f64) {
        for p in 0..design.n_predictors() as u32 {
            let group = design.predictor(p).group;
            if !design.omega_constrained(p) {
                let pen = self
                    .get(group, Side::Offense)
                    .unwrap_or_else(|| panic!("missing shrinkage for {}/offense", group.token()));
                coeffs.set_omega(p, pen.prox(coeffs.omega(p), t));
            }
            let pen = self
                .get(group, Side::Defense)
                .unwrap_or_else(|| panic!("missing shrinkage for {}/defense", group.token()));
            coeffs.set_delta(p, pen.prox(coeffs.delta(p), t));
        }
    }
}
