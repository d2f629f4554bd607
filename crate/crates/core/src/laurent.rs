//! Truncated Laurent series in `π = 1/Y`, i.e. elements of the completion
//! `K_v = F_q((1/Y))`, plus the ball identifiers used for histograms.
//!
//! A nonzero series is `sum_i c_i π^(val+i)` with `c_0 != 0`, so its valuation
//! is exact. Inexact values are known modulo `π^(val+len)`; exact values
//! (images of polynomials, ball centers) carry their full finite expansion.

use crate::error::{Error, Result};
use crate::gf::{Fe, Field};
use crate::poly::Poly;

/// Default number of retained coefficients.
pub const DEFAULT_PRECISION: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Laurent {
    val: i64,
    coeffs: Vec<Fe>,
    exact: bool,
}

impl Laurent {
    /// Exact zero.
    pub fn zero() -> Laurent {
        Laurent { val: 0, coeffs: Vec::new(), exact: true }
    }

    /// Zero known only modulo `π^abs`.
    pub fn zero_mod(abs: i64) -> Laurent {
        Laurent { val: abs, coeffs: Vec::new(), exact: false }
    }

    pub fn one() -> Laurent {
        Laurent::from_fe(Fe::ONE)
    }

    pub fn from_fe(c: Fe) -> Laurent {
        Laurent::monomial(c, 0)
    }

    /// Exact `c π^e = c Y^(-e)`.
    pub fn monomial(c: Fe, e: i64) -> Laurent {
        if c.is_zero() {
            return Laurent::zero();
        }
        Laurent { val: e, coeffs: vec![c], exact: true }
    }

    /// Exact image of a polynomial.
    pub fn from_poly(p: &Poly) -> Laurent {
        match p.degree() {
            None => Laurent::zero(),
            Some(d) => {
                let coeffs: Vec<Fe> = p.coeffs().iter().rev().copied().collect();
                Laurent::normalize(-(d as i64), coeffs, None)
            }
        }
    }

    /// `num/den` to `prec` coefficients.
    pub fn from_fraction(num: &Poly, den: &Poly, prec: usize, f: &Field) -> Result<Laurent> {
        Ok(Laurent::from_poly(num).mul(&Laurent::from_poly(den).inv(prec, f)?, f))
    }

    /// Builds a value from raw parts; leading zeros are stripped.
    /// `abs = None` marks the value exact.
    pub fn from_parts(val: i64, coeffs: Vec<Fe>, abs: Option<i64>) -> Laurent {
        Laurent::normalize(val, coeffs, abs)
    }

    fn normalize(mut val: i64, mut coeffs: Vec<Fe>, abs: Option<i64>) -> Laurent {
        let lead = coeffs.iter().position(|c| !c.is_zero());
        match (lead, abs) {
            (None, None) => Laurent::zero(),
            (None, Some(a)) => Laurent::zero_mod(a),
            (Some(k), _) => {
                coeffs.drain(..k);
                val += k as i64;
                match abs {
                    None => {
                        while coeffs.last() == Some(&Fe::ZERO) {
                            coeffs.pop();
                        }
                        Laurent { val, coeffs, exact: true }
                    }
                    Some(a) => {
                        if a <= val {
                            return Laurent::zero_mod(a);
                        }
                        coeffs.resize((a - val) as usize, Fe::ZERO);
                        Laurent { val, coeffs, exact: false }
                    }
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// Exact valuation of a nonzero value.
    pub fn val(&self) -> Result<i64> {
        if self.is_zero() {
            Err(Error::ValuationOfZero)
        } else {
            Ok(self.val)
        }
    }

    /// Valuation, or the known lower bound for a zero value (`i64::MAX` if exactly zero).
    pub fn val_lower(&self) -> i64 {
        match (self.is_zero(), self.exact) {
            (false, _) => self.val,
            (true, false) => self.val,
            (true, true) => i64::MAX,
        }
    }

    /// Leading coefficient (zero for zero).
    pub fn lc(&self) -> Fe {
        self.coeffs.first().copied().unwrap_or(Fe::ZERO)
    }

    /// Absolute precision: the value is known modulo `π^abs`. `None` when exact.
    pub fn abs_prec(&self) -> Option<i64> {
        if self.exact {
            None
        } else {
            Some(self.val + self.coeffs.len() as i64)
        }
    }

    /// Number of known coefficients past the leading one. `None` when exact.
    pub fn rel_prec(&self) -> Option<usize> {
        if self.exact {
            None
        } else {
            Some(self.coeffs.len())
        }
    }

    /// Valuation of the first stored coefficient and the stored coefficients.
    pub fn raw(&self) -> (i64, &[Fe]) {
        (self.val, &self.coeffs)
    }

    /// Coefficient of `π^e`; `None` if beyond the known precision.
    pub fn coeff(&self, e: i64) -> Option<Fe> {
        if let Some(a) = self.abs_prec() {
            if e >= a {
                return None;
            }
        }
        if self.is_zero() || e < self.val {
            return Some(Fe::ZERO);
        }
        Some(self.coeffs.get((e - self.val) as usize).copied().unwrap_or(Fe::ZERO))
    }

    /// Forgets everything from `π^abs` on.
    pub fn truncate_abs(&self, abs: i64) -> Laurent {
        let abs = self.abs_prec().map_or(abs, |a| a.min(abs));
        if self.is_zero() || abs <= self.val {
            return Laurent::zero_mod(abs);
        }
        let n = ((abs - self.val) as usize).min(self.coeffs.len());
        Laurent::normalize(self.val, self.coeffs[..n].to_vec(), Some(abs))
    }

    /// Keeps at most `n` coefficients past the leading one.
    pub fn truncate_rel(&self, n: usize) -> Laurent {
        if self.is_zero() {
            return self.clone();
        }
        self.truncate_abs(self.val + n as i64)
    }

    /// The finite sum of the terms of exponent `< n`, as an exact value.
    pub fn head_exact(&self, n: i64) -> Result<Laurent> {
        if let Some(a) = self.abs_prec() {
            if a < n {
                return Err(Error::Precision(format!("need precision {n}, have {a}")));
            }
        }
        if self.is_zero() || n <= self.val {
            return Ok(Laurent::zero());
        }
        let k = ((n - self.val) as usize).min(self.coeffs.len());
        Ok(Laurent::normalize(self.val, self.coeffs[..k].to_vec(), None))
    }

    pub fn neg(&self, f: &Field) -> Laurent {
        Laurent { val: self.val, coeffs: self.coeffs.iter().map(|&c| f.neg(c)).collect(), exact: self.exact }
    }

    pub fn scale(&self, c: Fe, f: &Field) -> Laurent {
        if c.is_zero() {
            return Laurent::zero();
        }
        Laurent { val: self.val, coeffs: self.coeffs.iter().map(|&x| f.mul(x, c)).collect(), exact: self.exact }
    }

    pub fn add(&self, other: &Laurent, f: &Field) -> Laurent {
        let abs = match (self.abs_prec(), other.abs_prec()) {
            (None, None) => None,
            (Some(a), None) | (None, Some(a)) => Some(a),
            (Some(a), Some(b)) => Some(a.min(b)),
        };
        let lo = [self, other].iter().filter(|x| !x.is_zero()).map(|x| x.val).min();
        let Some(lo) = lo else {
            return match abs {
                None => Laurent::zero(),
                Some(a) => Laurent::zero_mod(a),
            };
        };
        let hi = match abs {
            Some(a) => a,
            None => [self, other].iter().map(|x| x.val + x.coeffs.len() as i64).max().unwrap(),
        };
        if hi <= lo {
            return Laurent::zero_mod(hi);
        }
        let mut v = vec![Fe::ZERO; (hi - lo) as usize];
        for x in [self, other] {
            for (i, &c) in x.coeffs.iter().enumerate() {
                let e = x.val + i as i64;
                if e >= hi {
                    break;
                }
                let k = (e - lo) as usize;
                v[k] = f.add(v[k], c);
            }
        }
        Laurent::normalize(lo, v, abs)
    }

    pub fn sub(&self, other: &Laurent, f: &Field) -> Laurent {
        self.add(&other.neg(f), f)
    }

    pub fn mul(&self, other: &Laurent, f: &Field) -> Laurent {
        match (self.is_zero(), other.is_zero()) {
            (true, _) if self.exact => return Laurent::zero(),
            (_, true) if other.exact => return Laurent::zero(),
            (true, true) => return Laurent::zero_mod(self.val + other.val),
            (true, false) => return Laurent::zero_mod(self.val + other.val),
            (false, true) => return Laurent::zero_mod(self.val + other.val),
            _ => {}
        }
        let val = self.val + other.val;
        if self.exact && other.exact {
            let mut v = vec![Fe::ZERO; self.coeffs.len() + other.coeffs.len() - 1];
            for (i, &a) in self.coeffs.iter().enumerate() {
                for (j, &b) in other.coeffs.iter().enumerate() {
                    v[i + j] = f.add(v[i + j], f.mul(a, b));
                }
            }
            return Laurent::normalize(val, v, None);
        }
        let n = match (self.rel_prec(), other.rel_prec()) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!(),
        };
        let mut v = vec![Fe::ZERO; n];
        for (i, &a) in self.coeffs.iter().enumerate().take(n) {
            if a.is_zero() {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate().take(n - i) {
                v[i + j] = f.add(v[i + j], f.mul(a, b));
            }
        }
        Laurent::normalize(val, v, Some(val + n as i64))
    }

    /// Multiplicative inverse to `min(prec, own precision)` coefficients.
    pub fn inv(&self, prec: usize, f: &Field) -> Result<Laurent> {
        if self.is_zero() {
            return Err(Error::DivisionByZero);
        }
        let b0 = f.inv_nz(self.coeffs[0]);
        if self.exact && self.coeffs.len() == 1 {
            return Ok(Laurent::monomial(b0, -self.val));
        }
        let n = self.rel_prec().map_or(prec, |r| r.min(prec)).max(1);
        let mut b = vec![Fe::ZERO; n];
        b[0] = b0;
        for k in 1..n {
            let mut s = Fe::ZERO;
            for j in 1..=k.min(self.coeffs.len() - 1) {
                s = f.add(s, f.mul(self.coeffs[j], b[k - j]));
            }
            b[k] = f.neg(f.mul(b0, s));
        }
        Ok(Laurent::normalize(-self.val, b, Some(-self.val + n as i64)))
    }

    pub fn div(&self, other: &Laurent, prec: usize, f: &Field) -> Result<Laurent> {
        Ok(self.mul(&other.inv(prec, f)?, f))
    }

    /// Square root whose leading coefficient is the canonical root in `F_q`.
    pub fn sqrt(&self, prec: usize, f: &Field) -> Result<Laurent> {
        if f.characteristic() == 2 {
            return Err(Error::CharacteristicTwo);
        }
        if self.is_zero() {
            return Ok(self.clone());
        }
        if self.val.rem_euclid(2) != 0 {
            return Err(Error::NotASquare("odd valuation"));
        }
        let s0 = f.sqrt(self.coeffs[0]).ok_or(Error::NotASquare("leading coefficient is not a square"))?;
        let n = self.rel_prec().map_or(prec, |r| r.min(prec)).max(1);
        let inv2s0 = f.inv_nz(f.add(s0, s0));
        let mut s = vec![Fe::ZERO; n];
        s[0] = s0;
        for k in 1..n {
            let mut acc = self.coeffs.get(k).copied().unwrap_or(Fe::ZERO);
            for i in 1..k {
                acc = f.sub(acc, f.mul(s[i], s[k - i]));
            }
            s[k] = f.mul(acc, inv2s0);
        }
        let half = self.val / 2;
        let approx = Laurent::normalize(half, s.clone(), Some(half + n as i64));
        if self.exact {
            // Finite roots of exact inputs stay exact.
            let candidate = Laurent::normalize(half, s, None);
            if candidate.mul(&candidate, f) == *self {
                return Ok(candidate);
            }
        }
        Ok(approx)
    }

    /// The polynomial `P` with `v(z - P) > 0`.
    pub fn poly_part(&self) -> Result<Poly> {
        if let Some(a) = self.abs_prec() {
            if a < 1 {
                return Err(Error::Precision(format!("polynomial part needs precision 1, have {a}")));
            }
        }
        if self.is_zero() || self.val > 0 {
            return Ok(Poly::zero());
        }
        let top = (-self.val) as usize;
        let mut v = vec![Fe::ZERO; top + 1];
        for (i, &c) in self.coeffs.iter().enumerate() {
            let e = self.val + i as i64;
            if e > 0 {
                break;
            }
            v[(-e) as usize] = c;
        }
        Ok(Poly::from_coeffs(v))
    }

    /// Equal to the common precision.
    pub fn agrees_with(&self, other: &Laurent, f: &Field) -> bool {
        self.sub(other, f).is_zero()
    }

    /// Runtime guard for experiment pipelines: at least `min` known coefficients.
    pub fn assert_precision(&self, min: usize) -> Result<()> {
        match self.rel_prec() {
            Some(r) if r < min && !self.is_zero() => {
                Err(Error::Precision(format!("relative precision {r} below required {min}")))
            }
            _ => Ok(()),
        }
    }

    /// `Y + 2*Y^-1 + Y^-3 + O(Y^-64)`.
    pub fn format(&self, f: &Field) -> String {
        let mut terms = Vec::new();
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let y_exp = -(self.val + i as i64);
            let mono = match y_exp {
                0 => String::new(),
                1 => "Y".into(),
                e => format!("Y^{e}"),
            };
            let cs = f.format(c);
            terms.push(match (y_exp, c == Fe::ONE) {
                (0, _) => cs,
                (_, true) => mono,
                _ => format!("{cs}*{mono}"),
            });
        }
        if let Some(a) = self.abs_prec() {
            let e = -a;
            terms.push(match e {
                0 => "O(1)".into(),
                1 => "O(Y)".into(),
                e => format!("O(Y^{e})"),
            });
        }
        if terms.is_empty() {
            "0".into()
        } else {
            terms.join(" + ")
        }
    }
}

/// A ball `{z : v(z - c) >= depth}` inside the observation window
/// `{z : v(z) >= -window}`, identified by the digits of its center at the
/// exponents `-window .. depth-1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BallId {
    pub window: i64,
    pub depth: i64,
    pub digits: Vec<Fe>,
}

impl BallId {
    /// The whole window, `Y^window O_v`.
    pub fn window_ball(window: i64) -> BallId {
        BallId { window, depth: -window, digits: Vec::new() }
    }

    /// Exact center with no digits at exponents `>= depth`.
    pub fn center(&self) -> Laurent {
        Laurent::from_parts(-self.window, self.digits.clone(), None)
    }

    pub fn parent(&self) -> Option<BallId> {
        if self.digits.is_empty() {
            return None;
        }
        let mut d = self.digits.clone();
        d.pop();
        Some(BallId { window: self.window, depth: self.depth - 1, digits: d })
    }

    /// Ancestor at a shallower depth.
    pub fn truncate(&self, depth: i64) -> BallId {
        assert!(depth >= -self.window && depth <= self.depth);
        let n = (depth + self.window) as usize;
        BallId { window: self.window, depth, digits: self.digits[..n].to_vec() }
    }

    pub fn children(&self, f: &Field) -> Vec<BallId> {
        f.elements()
            .map(|c| {
                let mut d = self.digits.clone();
                d.push(c);
                BallId { window: self.window, depth: self.depth + 1, digits: d }
            })
            .collect()
    }

    /// Every ball of the given depth inside the window, in digit order.
    pub fn all_at_depth(window: i64, depth: i64, f: &Field) -> Vec<BallId> {
        let mut level = vec![BallId::window_ball(window)];
        for _ in -window..depth {
            level = level.iter().flat_map(|b| b.children(f)).collect();
        }
        level
    }

    pub fn contains(&self, z: &Laurent) -> bool {
        match ls_ball(z, self.depth, self.window) {
            Ok(b) => b == *self,
            Err(_) => false,
        }
    }

    /// Haar mass `q^-depth`, as `(numerator, denominator)` exponents of q.
    pub fn haar_exponent(&self) -> i64 {
        -self.depth
    }
}

/// Ball of depth `depth` containing `z`, inside the window `v(z) >= -window`.
pub fn ls_ball(z: &Laurent, depth: i64, window: i64) -> Result<BallId> {
    if depth < -window {
        return Err(Error::Config("ball depth below window".into()));
    }
    if !z.is_zero() && z.val < -window {
        return Err(Error::OutsideWindow);
    }
    if let Some(a) = z.abs_prec() {
        if a < depth {
            return Err(Error::Precision(format!("ball depth {depth} needs precision, have {a}")));
        }
        if z.is_zero() && a < -window {
            return Err(Error::OutsideWindow);
        }
    }
    let digits = (-window..depth).map(|e| z.coeff(e).unwrap_or(Fe::ZERO)).collect();
    Ok(BallId { window, depth, digits })
}

/// Cross ratio `[a,b,c,d] = (c-a)(d-b) / ((c-b)(d-a))`.
pub fn cross_ratio(a: &Laurent, b: &Laurent, c: &Laurent, d: &Laurent, prec: usize, f: &Field) -> Result<Laurent> {
    let pts = [a, b, c, d];
    for i in 0..4 {
        for j in i + 1..4 {
            if pts[i].sub(pts[j], f).is_zero() {
                return Err(Error::CoincidentPoints);
            }
        }
    }
    let num = c.sub(a, f).mul(&d.sub(b, f), f);
    let den = c.sub(b, f).mul(&d.sub(a, f), f);
    num.div(&den, prec, f)
}
