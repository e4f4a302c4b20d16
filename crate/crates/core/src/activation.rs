//! The rescaled smooth activation dictionary.
//!
//! Each member is `sigma(u) = (f(u)^k - f(0)^k) / k` with
//! `f(u) = log(1 + exp(M (u + u0))) / M`. Subtracting `f(0)^k` pins
//! `sigma(0) = 0`, and `sigma'(0) > 0` for every valid spec, which is what makes a
//! zero first layer produce a constant network.
//!
//! `M = inf` is the ReLU limit `f(u) = max(u + u0, 0)`. It is usable in forward
//! passes but is rejected wherever a twice-differentiable activation is needed.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One member of the activation dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSpec {
    /// Sharpness `M`; `f64::INFINITY` selects the ReLU limit.
    #[serde(rename = "M", serialize_with = "ser_sharpness", deserialize_with = "de_sharpness")]
    pub sharpness: f64,
    /// Shift `u0`.
    #[serde(rename = "u0")]
    pub shift: f64,
    /// Power `k`.
    #[serde(rename = "k")]
    pub power: f64,
}

impl Default for ActivationSpec {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl ActivationSpec {
    /// `(M, u0, k) = (20, 1, 1)`, the activation used throughout the simulations.
    pub const DEFAULT: ActivationSpec = ActivationSpec { sharpness: 20.0, shift: 1.0, power: 1.0 };

    pub fn new(sharpness: f64, shift: f64, power: f64) -> Result<Self> {
        let spec = Self { sharpness, shift, power };
        spec.validate()?;
        Ok(spec)
    }

    /// Centered softplus `log(1 + e^u) - log 2`.
    pub fn softplus() -> Self {
        Self { sharpness: 1.0, shift: 0.0, power: 1.0 }
    }

    /// Plain ReLU, the `M -> inf` limit with `u0 = 0`, `k = 1`.
    pub fn relu() -> Self {
        Self { sharpness: f64::INFINITY, shift: 0.0, power: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sharpness > 0.0) || self.sharpness.is_nan() {
            return Err(Error::Config(format!("activation M must be > 0, got {}", self.sharpness)));
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return Err(Error::Config(format!("activation u0 must be finite and >= 0, got {}", self.shift)));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Config(format!("activation k must be finite and > 0, got {}", self.power)));
        }
        Ok(())
    }

    pub fn is_relu_limit(&self) -> bool {
        self.sharpness.is_infinite()
    }

    /// Fails for the ReLU limit, which is not twice differentiable at zero.
    pub fn require_smooth(&self) -> Result<()> {
        if self.is_relu_limit() {
            Err(Error::Domain("the ReLU-limit activation (M = inf) is not C^2".into()))
        } else {
            Ok(())
        }
    }

    /// `(f(u), f'(u), f''(u))` of the inner softplus.
    fn inner(&self, u: f64) -> (f64, f64, f64) {
        let m = self.sharpness;
        let t = u + self.shift;
        if m.is_infinite() {
            return if t > 0.0 { (t, 1.0, 0.0) } else { (0.0, 0.0, 0.0) };
        }
        let mt = m * t;
        let s = logistic(mt);
        (softplus(mt) / m, s, m * s * logistic(-mt))
    }

    fn f_at_zero(&self) -> f64 {
        if self.is_relu_limit() {
            self.shift
        } else {
            softplus(self.sharpness * self.shift) / self.sharpness
        }
    }

    /// The activation value itself.
    pub fn value(&self, u: f64) -> f64 {
        let (f, _, _) = self.inner(u);
        let f0 = self.f_at_zero();
        if self.power == 1.0 {
            f - f0
        } else if self.power == 2.0 {
            (f - f0) * (f + f0) / 2.0
        } else {
            (f.powf(self.power) - f0.powf(self.power)) / self.power
        }
    }

    pub fn deriv(&self, u: f64) -> f64 {
        let (f, df, _) = self.inner(u);
        if self.power == 1.0 {
            df
        } else if df == 0.0 {
            0.0
        } else {
            f.powf(self.power - 1.0) * df
        }
    }

    pub fn second_deriv(&self, u: f64) -> f64 {
        let (f, df, ddf) = self.inner(u);
        let k = self.power;
        if k == 1.0 {
            return ddf;
        }
        let first = if df == 0.0 { 0.0 } else { (k - 1.0) * f.powf(k - 2.0) * df * df };
        let second = if ddf == 0.0 { 0.0 } else { f.powf(k - 1.0) * ddf };
        first + second
    }
}

/// Checked [`ActivationSpec::value`].
pub fn act_value(spec: &ActivationSpec, u: f64) -> Result<f64> {
    check_arg(spec, u)?;
    Ok(spec.value(u))
}

/// Checked [`ActivationSpec::deriv`].
pub fn act_deriv(spec: &ActivationSpec, u: f64) -> Result<f64> {
    check_arg(spec, u)?;
    Ok(spec.deriv(u))
}

/// Checked [`ActivationSpec::second_deriv`].
pub fn act_second_deriv(spec: &ActivationSpec, u: f64) -> Result<f64> {
    check_arg(spec, u)?;
    Ok(spec.second_deriv(u))
}

fn check_arg(spec: &ActivationSpec, u: f64) -> Result<()> {
    spec.validate()?;
    if !u.is_finite() {
        return Err(Error::Domain(format!("activation input must be finite, got {u}")));
    }
    Ok(())
}

/// `log(1 + e^t)` without overflow.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn ser_sharpness<S: Serializer>(m: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if m.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*m)
    }
}

fn de_sharpness<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(t) if t.eq_ignore_ascii_case("inf") => Ok(f64::INFINITY),
        Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\" for M, got {t:?}"))),
    }
}
