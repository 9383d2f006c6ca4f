//! Minimal double-double arithmetic (error-free transforms with fma).
//!
//! Used where a closed-form constant involves a difference of nearly equal
//! quantities, e.g. `r - alpha * gamma2` when `gamma2` is close to `r / alpha`.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DD {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DD {
    pub const fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return DD::new(self.hi.sqrt());
        }
        // one Newton correction on the f64 root
        let s = self.hi.sqrt();
        let (p, e) = two_prod(s, s);
        let diff = ((self.hi - p) - e + self.lo) / (2.0 * s);
        let (hi, lo) = quick_two_sum(s, diff);
        DD { hi, lo }
    }

    pub fn ln(self) -> Self {
        // ln(x) = l + (x e^{-l} - 1) with l the f64 log; one correction suffices
        let l = self.hi.ln();
        let e = DD::new((-l).exp());
        let corr = (self * e - DD::new(1.0)).to_f64();
        let (hi, lo) = two_sum(l, corr);
        DD { hi, lo }
    }
}

impl From<f64> for DD {
    fn from(x: f64) -> Self {
        DD::new(x)
    }
}

impl Add for DD {
    type Output = DD;
    fn add(self, o: DD) -> DD {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        DD { hi, lo }
    }
}

impl Neg for DD {
    type Output = DD;
    fn neg(self) -> DD {
        DD {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DD {
    type Output = DD;
    fn sub(self, o: DD) -> DD {
        self + (-o)
    }
}

impl Mul for DD {
    type Output = DD;
    fn mul(self, o: DD) -> DD {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        DD { hi, lo }
    }
}

impl Div for DD {
    type Output = DD;
    fn div(self, o: DD) -> DD {
        let q1 = self.hi / o.hi;
        let r = self - o * DD::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * DD::new(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        DD { hi, lo } + DD::new(q3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_lost_bits() {
        let a = DD::new(1.0) + DD::new(1e-20);
        let b = a - DD::new(1.0);
        assert!((b.to_f64() - 1e-20).abs() < 1e-35);
    }

    #[test]
    fn sqrt_and_div() {
        let two = DD::new(2.0);
        let s = two.sqrt();
        let back = s * s - two;
        assert!(back.to_f64().abs() < 1e-30);
        let third = DD::new(1.0) / DD::new(3.0);
        let err = third * DD::new(3.0) - DD::new(1.0);
        assert!(err.to_f64().abs() < 1e-30);
    }

    #[test]
    fn log_is_accurate() {
        let x = DD::new(16.2);
        let l = x.ln();
        assert!((l.to_f64() - 16.2f64.ln()).abs() < 1e-15);
    }
}
