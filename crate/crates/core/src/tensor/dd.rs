//! Double-double numbers: an unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`,
//! giving about 106 significant bits from error-free `f64` transformations.

use std::ops::{Add, AddAssign, Div, DivAssign, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

const LN_2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    Dd { hi: s, lo: err }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd { hi: p, lo: a.mul_add(b, -p) }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }
}

impl Dd {
    pub(crate) fn hi(self) -> f64 {
        self.hi
    }

    pub(crate) fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn mul_pow2(self, p: f64) -> Dd {
        Dd {
            hi: self.hi * p,
            lo: self.lo * p,
        }
    }

    /// Relative error around `1e-30` for arguments in the `f64` range of `exp`.
    pub(crate) fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd::from(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::from(0.0);
        }
        let k = (self.hi / LN_2.hi).round();
        let r = (self - LN_2 * Dd::from(k)).mul_pow2(1.0 / 1024.0);
        // Taylor series for exp(r) - 1 on |r| < 3.4e-4, then ten squarings
        // carried as (1 + m)^2 - 1 = m (m + 2) to keep the low bits.
        let mut term = r;
        let mut m = r;
        for n in 2..=12 {
            term = term * r / Dd::from(n as f64);
            m += term;
        }
        for _ in 0..10 {
            m = m * (m + 2.0);
        }
        let sum = m + 1.0;
        sum.mul_pow2(2f64.powi(k as i32))
    }

    /// Natural log of a positive value by Newton steps on `exp`.
    pub(crate) fn ln(self) -> Dd {
        let mut y = Dd::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::from(1.0);
        }
        y
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, rhs: Dd) -> Dd {
        let s = two_sum(self.hi, rhs.hi);
        let t = two_sum(self.lo, rhs.lo);
        let u = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(u.hi, u.lo + t.lo)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, rhs: Dd) -> Dd {
        self + -rhs
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, rhs: Dd) -> Dd {
        let p = two_prod(self.hi, rhs.hi);
        quick_two_sum(p.hi, p.lo + (self.hi * rhs.lo + self.lo * rhs.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, rhs: Dd) -> Dd {
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * Dd::from(q1);
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * Dd::from(q2);
        let q3 = r.hi / rhs.hi;
        quick_two_sum(q1, q2) + Dd::from(q3)
    }
}

impl Add<f64> for Dd {
    type Output = Dd;
    fn add(self, rhs: f64) -> Dd {
        self + Dd::from(rhs)
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    fn mul(self, rhs: f64) -> Dd {
        self * Dd::from(rhs)
    }
}

impl Div<f64> for Dd {
    type Output = Dd;
    fn div(self, rhs: f64) -> Dd {
        self / Dd::from(rhs)
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, rhs: Dd) {
        *self = *self + rhs;
    }
}

impl AddAssign<f64> for Dd {
    fn add_assign(&mut self, rhs: f64) {
        *self = *self + rhs;
    }
}

impl DivAssign for Dd {
    fn div_assign(&mut self, rhs: Dd) {
        *self = *self / rhs;
    }
}

impl DivAssign<f64> for Dd {
    fn div_assign(&mut self, rhs: f64) {
        *self = *self / rhs;
    }
}
