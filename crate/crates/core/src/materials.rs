//! Electrical conductivity models σ(u) and the functions derived from them:
//! the Kirchhoff-type transform F(u) = ∫₀ᵘ ds/σ(s), its inverse, the
//! transformed conductivity a(v) = σ(F⁻¹(v)) and the C¹ bound μ.
//!
//! Negative temperatures are clamped to zero before evaluation; σ is only
//! defined on [0, ∞).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate;

const QUAD_TOL: f64 = 1e-12;
const MU_SAMPLES: usize = 4096;
const MU_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConductivityModel {
    /// σ(u) = σ0·(1 − u/u*)^p below u*, zero above.
    TruncatedPower {
        sigma0: f64,
        u_star: f64,
        exponent: f64,
    },
    /// Uniformly positive σ ≡ σ0 (no critical temperature).
    Constant { sigma0: f64 },
    /// σₙ: equal to `base` on [0, level], a C¹ cubic blend on
    /// [level, level + width] down to σ(level)/2, constant afterwards.
    Truncated {
        base: Box<ConductivityModel>,
        level: f64,
        width: f64,
    },
}

impl ConductivityModel {
    pub fn truncated_power(sigma0: f64, u_star: f64, exponent: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::Config(format!("sigma0 must be positive, got {sigma0}")));
        }
        if !(u_star > 0.0 && u_star.is_finite()) {
            return Err(Error::Config(format!(
                "u_star must be positive and finite for the truncated power model, got {u_star}"
            )));
        }
        if !(exponent >= 2.0 && exponent.is_finite()) {
            return Err(Error::Config(format!(
                "exponent must be at least 2, got {exponent}"
            )));
        }
        Ok(Self::TruncatedPower {
            sigma0,
            u_star,
            exponent,
        })
    }

    pub fn constant(sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::Config(format!("sigma0 must be positive, got {sigma0}")));
        }
        Ok(Self::Constant { sigma0 })
    }

    /// Critical temperature; `f64::INFINITY` when σ never vanishes.
    pub fn u_star(&self) -> f64 {
        match self {
            Self::TruncatedPower { u_star, .. } => *u_star,
            Self::Constant { .. } | Self::Truncated { .. } => f64::INFINITY,
        }
    }

    pub fn sigma(&self, u: f64) -> f64 {
        let u = u.max(0.0);
        match self {
            Self::TruncatedPower {
                sigma0,
                u_star,
                exponent,
            } => {
                if u >= *u_star {
                    0.0
                } else {
                    sigma0 * (1.0 - u / u_star).powf(*exponent)
                }
            }
            Self::Constant { sigma0 } => *sigma0,
            Self::Truncated { base, level, width } => {
                if u <= *level {
                    base.sigma(u)
                } else {
                    let (y0, m0) = (base.sigma(*level), base.sigma_prime(*level));
                    let y1 = 0.5 * y0;
                    if u >= level + width {
                        return y1;
                    }
                    let t = (u - level) / width;
                    let h00 = (2.0 * t - 3.0) * t * t + 1.0;
                    let h10 = ((t - 2.0) * t + 1.0) * t;
                    let h01 = (3.0 - 2.0 * t) * t * t;
                    h00 * y0 + h10 * width * m0 + h01 * y1
                }
            }
        }
    }

    pub fn sigma_prime(&self, u: f64) -> f64 {
        let u = u.max(0.0);
        match self {
            Self::TruncatedPower {
                sigma0,
                u_star,
                exponent,
            } => {
                if u >= *u_star {
                    0.0
                } else {
                    -sigma0 * exponent / u_star * (1.0 - u / u_star).powf(exponent - 1.0)
                }
            }
            Self::Constant { .. } => 0.0,
            Self::Truncated { base, level, width } => {
                if u <= *level {
                    base.sigma_prime(u)
                } else if u >= level + width {
                    0.0
                } else {
                    let (y0, m0) = (base.sigma(*level), base.sigma_prime(*level));
                    let y1 = 0.5 * y0;
                    let t = (u - level) / width;
                    let d00 = 6.0 * t * t - 6.0 * t;
                    let d10 = (3.0 * t - 4.0) * t + 1.0;
                    let d01 = 6.0 * t - 6.0 * t * t;
                    (d00 * y0 + d10 * width * m0 + d01 * y1) / width
                }
            }
        }
    }

    /// F(u) = ∫₀ᵘ ds/σ(s).
    pub fn f(&self, u: f64) -> Result<f64> {
        if u.is_nan() {
            return Err(Error::Domain("F evaluated at NaN".into()));
        }
        let u = u.max(0.0);
        if u >= self.u_star() {
            return Err(Error::Domain(format!(
                "F is infinite at u = {u} >= u_* = {}",
                self.u_star()
            )));
        }
        Ok(match self {
            Self::TruncatedPower {
                sigma0,
                u_star,
                exponent,
            } => {
                if *exponent == 2.0 {
                    u_star * u / (sigma0 * (u_star - u))
                } else {
                    let k = exponent - 1.0;
                    u_star / (sigma0 * k) * ((1.0 - u / u_star).powf(-k) - 1.0)
                }
            }
            Self::Constant { sigma0 } => u / sigma0,
            Self::Truncated { base, level, width } => {
                if u <= *level {
                    base.f(u)?
                } else {
                    let at_level = base.f(*level)?;
                    let end = level + width;
                    let floor = 0.5 * base.sigma(*level);
                    if u <= end {
                        at_level + integrate(|s| 1.0 / self.sigma(s), *level, u, QUAD_TOL)
                    } else {
                        at_level
                            + integrate(|s| 1.0 / self.sigma(s), *level, end, QUAD_TOL)
                            + (u - end) / floor
                    }
                }
            }
        })
    }

    /// F⁻¹(v) for v ≥ 0; maps [0, ∞) onto [0, u*).
    pub fn f_inv(&self, v: f64) -> Result<f64> {
        if !(v >= 0.0) {
            return Err(Error::Domain(format!("F⁻¹ needs v >= 0, got {v}")));
        }
        if v.is_infinite() {
            return Err(Error::Domain("F⁻¹ argument overflowed to infinity".into()));
        }
        Ok(match self {
            Self::TruncatedPower {
                sigma0,
                u_star,
                exponent,
            } => {
                if *exponent == 2.0 {
                    sigma0 * u_star * v / (u_star + sigma0 * v)
                } else {
                    let k = exponent - 1.0;
                    u_star * (1.0 - (1.0 + sigma0 * k * v / u_star).powf(-1.0 / k))
                }
            }
            Self::Constant { sigma0 } => sigma0 * v,
            Self::Truncated { base, level, width } => {
                let at_level = base.f(*level)?;
                if v <= at_level {
                    base.f_inv(v)?
                } else {
                    let end = level + width;
                    let at_end = self.f(end)?;
                    if v >= at_end {
                        end + (v - at_end) * 0.5 * base.sigma(*level)
                    } else {
                        // F is strictly increasing on the blend interval
                        let (mut lo, mut hi) = (*level, end);
                        for _ in 0..200 {
                            let mid = 0.5 * (lo + hi);
                            if mid <= lo || mid >= hi {
                                break;
                            }
                            if self.f(mid)? < v {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        0.5 * (lo + hi)
                    }
                }
            }
        })
    }

    /// a(v) = σ(F⁻¹(v)); negative arguments are clamped to zero.
    pub fn a(&self, v: f64) -> f64 {
        let v = v.max(0.0);
        match self {
            Self::TruncatedPower {
                sigma0,
                u_star,
                exponent,
            } => {
                let k = exponent - 1.0;
                sigma0 * (1.0 + sigma0 * k * v / u_star).powf(-exponent / k)
            }
            Self::Constant { sigma0 } => *sigma0,
            Self::Truncated { .. } => match self.f_inv(v) {
                Ok(u) => self.sigma(u),
                Err(_) => 0.0,
            },
        }
    }

    /// μ ≥ max(sup σ, sup |σ′|) over [0, u*].
    pub fn lipschitz_mu(&self) -> f64 {
        match self {
            Self::TruncatedPower {
                sigma0,
                u_star,
                exponent,
            } => sigma0.max(sigma0 * exponent / u_star),
            Self::Constant { sigma0 } => *sigma0,
            Self::Truncated { level, width, .. } => {
                let top = level + width;
                let mut mu: f64 = 0.0;
                for k in 0..=MU_SAMPLES {
                    let s = top * k as f64 / MU_SAMPLES as f64;
                    mu = mu.max(self.sigma(s)).max(self.sigma_prime(s).abs());
                }
                mu + MU_SLACK
            }
        }
    }

    /// σₙ with the default blend width 0.05·(u* − n).
    pub fn truncate(&self, level: f64) -> Result<Self> {
        let u_star = self.u_star();
        if !u_star.is_finite() {
            return Err(Error::Domain(
                "truncation needs a finite critical temperature".into(),
            ));
        }
        self.truncate_with_width(level, 0.05 * (u_star - level))
    }

    pub fn truncate_with_width(&self, level: f64, width: f64) -> Result<Self> {
        if !(level > 0.0 && level < self.u_star()) {
            return Err(Error::Domain(format!(
                "truncation level {level} must lie in (0, u_* = {})",
                self.u_star()
            )));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::Domain(format!("blend width must be positive, got {width}")));
        }
        Ok(Self::Truncated {
            base: Box::new(self.clone()),
            level,
            width,
        })
    }

    /// Truncation level n of a σₙ model.
    pub fn truncation_level(&self) -> Option<f64> {
        match self {
            Self::Truncated { level, .. } => Some(*level),
            _ => None,
        }
    }

    /// The untruncated model underneath any σₙ wrappers.
    pub fn original(&self) -> &ConductivityModel {
        match self {
            Self::Truncated { base, .. } => base.original(),
            m => m,
        }
    }

    /// ∫₀ᵛ s^{p−2}/a(s) ds.
    pub fn weighted_inverse_integral(&self, v: f64, p: f64) -> f64 {
        self.weighted_inverse_integral_between(0.0, v, p)
    }

    pub fn weighted_inverse_integral_between(&self, lo: f64, hi: f64, p: f64) -> f64 {
        integrate(|s| s.powf(p - 2.0) / self.a(s), lo, hi, QUAD_TOL)
    }

    /// g(v) = (a(v)/vᵖ)·∫₀ᵛ s^{p−2}/a(s) ds, which tends to zero as v → ∞.
    pub fn decay_ratio(&self, v: f64, p: f64) -> f64 {
        self.a(v) / v.powf(p) * self.weighted_inverse_integral(v, p)
    }
}
