//! Forward-mode differentiation through dual numbers.
//!
//! Pure-forward code written against [`Scalar`] runs unchanged on `f64`
//! (plain evaluation) and on [`Dual`] (evaluation plus one directional
//! derivative), so Jacobian-vector products carry no truncation error.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use super::tensor::Tensor;
use crate::{Error, Result};

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn from_f64(v: f64) -> Self;
    /// Primal part.
    fn re(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    fn scale(self, s: f64) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn re(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn relu(self) -> Self {
        self.max(0.0)
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
}

/// `re + du·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub du: f64,
}

impl Dual {
    pub fn new(re: f64, du: f64) -> Self {
        Self { re, du }
    }

    pub fn constant(re: f64) -> Self {
        Self { re, du: 0.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.du + o.du)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, o: Dual) {
        self.re += o.re;
        self.du += o.du;
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.du - o.du)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.du * o.re + self.re * o.du)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let q = self.re / o.re;
        Dual::new(q, (self.du - q * o.du) / o.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.du)
    }
}

impl Scalar for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.du / (2.0 * s))
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.du * e)
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Dual::new(t, self.du * (1.0 - t * t))
    }
    fn relu(self) -> Self {
        if self.re > 0.0 {
            self
        } else {
            Dual::default()
        }
    }
    fn scale(self, s: f64) -> Self {
        Dual::new(self.re * s, self.du * s)
    }
}

/// `J·direction` of `map` at `point`, evaluated in one dual-number pass.
///
/// The result is a vector tensor with one entry per output of `map`.
pub fn jvp<F>(map: F, point: &Tensor, direction: &Tensor) -> Result<Tensor>
where
    F: Fn(&[Dual]) -> Vec<Dual>,
{
    Ok(jvp_with_value(map, point, direction)?.1)
}

/// Like [`jvp`] but also returns the primal output.
pub fn jvp_with_value<F>(map: F, point: &Tensor, direction: &Tensor) -> Result<(Tensor, Tensor)>
where
    F: Fn(&[Dual]) -> Vec<Dual>,
{
    if !point.same_shape(direction) {
        return Err(Error::shape(
            "jvp",
            format!("point {:?} vs direction {:?}", point.shape(), direction.shape()),
        ));
    }
    let input: Vec<Dual> = point
        .data()
        .iter()
        .zip(direction.data())
        .map(|(&p, &d)| Dual::new(p, d))
        .collect();
    let out = map(&input);
    if out.is_empty() {
        return Err(Error::shape("jvp", "map produced no outputs"));
    }
    let value = Tensor::vector(out.iter().map(|d| d.re).collect());
    let tangent = Tensor::vector(out.iter().map(|d| d.du).collect());
    Ok((value, tangent))
}
