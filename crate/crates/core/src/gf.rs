//! Finite fields `F_q`, `q = p^k`, in polynomial basis over `F_p`.
//!
//! Elements are stored as their integer encoding `sum c_i p^i` of the
//! coefficient vector, so every element is canonical and equality is
//! structural. Arithmetic goes through precomputed tables.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest field order for which tables are built.
pub const MAX_ORDER: u64 = 1024;

/// An element of `F_q`, identified by its integer encoding in `[0, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Fe(pub(crate) u16);

impl Fe {
    pub const ZERO: Fe = Fe(0);
    pub const ONE: Fe = Fe(1);

    /// Integer encoding of the coefficient vector.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

/// Validated parameters of a finite field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldParams {
    pub p: u32,
    pub k: u32,
    /// Monic irreducible modulus over `F_p`, lowest degree first; empty when `k = 1`.
    pub modulus: Vec<u32>,
    pub q: u64,
}

struct Tables {
    params: FieldParams,
    add: Vec<u16>,
    mul: Vec<u16>,
    neg: Vec<u16>,
    inv: Vec<u16>,
    sqrt: Vec<Option<u16>>,
}

/// A finite field with its arithmetic tables. Cheap to clone.
#[derive(Clone)]
pub struct Field {
    t: Arc<Tables>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Field(q={})", self.t.params.q)
    }
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.t.params == other.t.params
    }
}
impl Eq for Field {}

pub fn is_prime(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u32;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Default irreducible moduli for the small extension fields.
pub fn builtin_modulus(p: u32, k: u32) -> Option<Vec<u32>> {
    let m: &[u32] = match (p, k) {
        (2, 2) => &[1, 1, 1],
        (2, 3) => &[1, 1, 0, 1],
        (2, 4) => &[1, 1, 0, 0, 1],
        (2, 5) => &[1, 0, 1, 0, 0, 1],
        (3, 2) => &[1, 0, 1],
        (3, 3) => &[1, 2, 0, 1],
        (5, 2) => &[2, 1, 1],
        _ => return None,
    };
    Some(m.to_vec())
}

// Polynomials over F_p as little-endian Vec<u32>, used only while building tables.
fn fp_trim(mut a: Vec<u32>) -> Vec<u32> {
    while a.last() == Some(&0) {
        a.pop();
    }
    a
}

fn fp_rem(a: &[u32], m: &[u32], p: u32) -> Vec<u32> {
    let mut r = fp_trim(a.to_vec());
    let dm = m.len() - 1;
    let inv_lc = fp_inv(m[dm], p);
    while r.len() > dm {
        let top = r.len() - 1;
        let f = r[top] * inv_lc % p;
        let shift = top - dm;
        for (i, &mi) in m.iter().enumerate() {
            r[shift + i] = (r[shift + i] + p * p - f * mi % p) % p;
        }
        r = fp_trim(r);
    }
    r
}

fn fp_inv(a: u32, p: u32) -> u32 {
    (1..p).find(|&x| a * x % p == 1).expect("nonzero element of F_p")
}

fn fp_is_irreducible(m: &[u32], p: u32) -> bool {
    let deg = m.len() - 1;
    if deg <= 1 {
        return deg == 1;
    }
    // Trial division by every monic polynomial of degree 1..=deg/2.
    for d in 1..=deg / 2 {
        let count = (p as u64).pow(d as u32);
        for n in 0..count {
            let mut f = Vec::with_capacity(d + 1);
            let mut x = n;
            for _ in 0..d {
                f.push((x % p as u64) as u32);
                x /= p as u64;
            }
            f.push(1);
            if fp_rem(m, &f, p).is_empty() {
                return false;
            }
        }
    }
    true
}

impl Field {
    /// Builds `F_{p^k}`. For `k > 1` the modulus is taken from `modulus`
    /// or from the built-in table.
    pub fn new(p: u32, k: u32, modulus: Option<Vec<u32>>) -> Result<Field> {
        if !is_prime(p) {
            return Err(Error::CompositeCharacteristic(p));
        }
        if k == 0 {
            return Err(Error::Config("extension degree must be at least 1".into()));
        }
        let q = (p as u64).checked_pow(k).unwrap_or(u64::MAX);
        if q > MAX_ORDER {
            return Err(Error::FieldTooLarge(q, MAX_ORDER));
        }
        let modulus = if k == 1 {
            Vec::new()
        } else {
            let m = match modulus {
                Some(m) => m,
                None => builtin_modulus(p, k).ok_or(Error::MissingModulus(q))?,
            };
            let m: Vec<u32> = fp_trim(m.into_iter().map(|c| c % p).collect());
            if m.len() != k as usize + 1 || m[k as usize] != 1 || !fp_is_irreducible(&m, p) {
                return Err(Error::ReducibleModulus(p));
            }
            m
        };
        let params = FieldParams { p, k, modulus, q };
        Ok(Field { t: Arc::new(Tables::build(params)) })
    }

    /// The prime field `F_p`.
    pub fn prime(p: u32) -> Result<Field> {
        Field::new(p, 1, None)
    }

    pub fn params(&self) -> &FieldParams {
        &self.t.params
    }

    pub fn q(&self) -> u64 {
        self.t.params.q
    }

    pub fn characteristic(&self) -> u32 {
        self.t.params.p
    }

    /// All elements in encoding order.
    pub fn elements(&self) -> impl Iterator<Item = Fe> + '_ {
        (0..self.q() as u16).map(Fe)
    }

    /// Nonzero elements in encoding order.
    pub fn units(&self) -> impl Iterator<Item = Fe> + '_ {
        (1..self.q() as u16).map(Fe)
    }

    pub fn element(&self, index: usize) -> Fe {
        debug_assert!((index as u64) < self.q());
        Fe(index as u16)
    }

    /// Image of an integer in the prime subfield.
    pub fn from_int(&self, n: i64) -> Fe {
        let p = self.characteristic() as i64;
        Fe(n.rem_euclid(p) as u16)
    }

    /// Element with the given coefficients in the polynomial basis.
    pub fn from_coeffs(&self, coeffs: &[u32]) -> Result<Fe> {
        let p = self.characteristic();
        let k = self.t.params.k as usize;
        let c = fp_trim(coeffs.iter().map(|&c| c % p).collect());
        let c = if c.len() > k && k > 1 {
            fp_rem(&c, &self.t.params.modulus, p)
        } else if c.len() > k {
            return Err(Error::Parse("prime-field element has no t component".into()));
        } else {
            c
        };
        let mut idx = 0u64;
        for &ci in c.iter().rev() {
            idx = idx * p as u64 + ci as u64;
        }
        Ok(Fe(idx as u16))
    }

    /// Coefficient vector of `a` (length exactly `k`).
    pub fn coeffs(&self, a: Fe) -> Vec<u32> {
        let p = self.characteristic();
        let mut x = a.0 as u32;
        (0..self.t.params.k)
            .map(|_| {
                let c = x % p;
                x /= p;
                c
            })
            .collect()
    }

    #[inline]
    pub fn add(&self, a: Fe, b: Fe) -> Fe {
        Fe(self.t.add[a.index() * self.q() as usize + b.index()])
    }

    #[inline]
    pub fn sub(&self, a: Fe, b: Fe) -> Fe {
        self.add(a, self.neg(b))
    }

    #[inline]
    pub fn neg(&self, a: Fe) -> Fe {
        Fe(self.t.neg[a.index()])
    }

    #[inline]
    pub fn mul(&self, a: Fe, b: Fe) -> Fe {
        Fe(self.t.mul[a.index() * self.q() as usize + b.index()])
    }

    /// Multiplicative inverse; zero has none.
    pub fn inv(&self, a: Fe) -> Result<Fe> {
        if a.is_zero() {
            Err(Error::DivisionByZero)
        } else {
            Ok(Fe(self.t.inv[a.index()]))
        }
    }

    /// Inverse of an element known to be nonzero.
    #[inline]
    pub(crate) fn inv_nz(&self, a: Fe) -> Fe {
        debug_assert!(!a.is_zero());
        Fe(self.t.inv[a.index()])
    }

    pub fn div(&self, a: Fe, b: Fe) -> Result<Fe> {
        Ok(self.mul(a, self.inv(b)?))
    }

    pub fn pow(&self, a: Fe, mut e: u64) -> Fe {
        let mut base = a;
        let mut acc = Fe::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            e >>= 1;
        }
        acc
    }

    /// Canonical square root: the root with the smaller encoding.
    pub fn sqrt(&self, a: Fe) -> Option<Fe> {
        self.t.sqrt[a.index()].map(Fe)
    }

    pub fn is_square(&self, a: Fe) -> bool {
        self.t.sqrt[a.index()].is_some()
    }

    /// Writes `a` in the CLI syntax: an integer for prime fields,
    /// `(c0+c1*t+...)` otherwise.
    pub fn format(&self, a: Fe) -> String {
        let c = self.coeffs(a);
        if self.t.params.k == 1 {
            return c[0].to_string();
        }
        let mut terms = Vec::new();
        for (i, &ci) in c.iter().enumerate() {
            if ci == 0 {
                continue;
            }
            let mono = match i {
                0 => String::new(),
                1 => "t".to_string(),
                _ => format!("t^{i}"),
            };
            terms.push(match (ci, i) {
                (_, 0) => ci.to_string(),
                (1, _) => mono,
                _ => format!("{ci}*{mono}"),
            });
        }
        if terms.is_empty() {
            "0".into()
        } else if terms.len() == 1 && !terms[0].contains('*') && !terms[0].contains('t') {
            terms.remove(0)
        } else {
            format!("({})", terms.join("+"))
        }
    }
}

impl Tables {
    fn build(params: FieldParams) -> Tables {
        let q = params.q as usize;
        let p = params.p;
        let k = params.k as usize;
        let decode = |x: usize| -> Vec<u32> {
            let mut x = x as u32;
            (0..k)
                .map(|_| {
                    let c = x % p;
                    x /= p;
                    c
                })
                .collect()
        };
        let encode = |c: &[u32]| -> u16 {
            let mut idx = 0u32;
            for &ci in c.iter().rev() {
                idx = idx * p + ci;
            }
            idx as u16
        };
        let digits: Vec<Vec<u32>> = (0..q).map(decode).collect();
        let mut add = vec![0u16; q * q];
        let mut mul = vec![0u16; q * q];
        for a in 0..q {
            for b in 0..q {
                let s: Vec<u32> = digits[a].iter().zip(&digits[b]).map(|(x, y)| (x + y) % p).collect();
                add[a * q + b] = encode(&s);
                let mut prod = vec![0u32; 2 * k - 1];
                for (i, x) in digits[a].iter().enumerate() {
                    for (j, y) in digits[b].iter().enumerate() {
                        prod[i + j] = (prod[i + j] + x * y) % p;
                    }
                }
                let r = if k > 1 { fp_rem(&prod, &params.modulus, p) } else { fp_trim(prod) };
                let mut r = r;
                r.resize(k, 0);
                mul[a * q + b] = encode(&r);
            }
        }
        let mut neg = vec![0u16; q];
        let mut inv = vec![0u16; q];
        let mut sqrt = vec![None; q];
        for a in 0..q {
            neg[a] = (0..q).find(|&b| add[a * q + b] == 0).unwrap() as u16;
            if a != 0 {
                inv[a] = (1..q).find(|&b| mul[a * q + b] == 1).unwrap() as u16;
            }
            // Smallest encoding squaring to a.
            sqrt[mul[a * q + a] as usize].get_or_insert(a as u16);
        }
        Tables { params, add, mul, neg, inv, sqrt }
    }
}

/// Parses a field description: `q` (a prime power), `p^k`, optionally
/// followed by `/c0,c1,...,ck`, the modulus coefficients from low to high.
pub fn parse_field_spec(s: &str) -> Result<Field> {
    let bad = || Error::Parse(format!("bad field spec {s:?}"));
    let (head, modulus) = match s.trim().split_once('/') {
        Some((h, m)) => {
            let cs = m.split(',').map(|c| c.trim().parse::<u32>().map_err(|_| bad())).collect::<Result<Vec<u32>>>()?;
            (h.trim(), Some(cs))
        }
        None => (s.trim(), None),
    };
    let (p, k) = match head.split_once('^') {
        Some((p, k)) => (p.trim().parse::<u32>().map_err(|_| bad())?, k.trim().parse::<u32>().map_err(|_| bad())?),
        None => {
            let q: u64 = head.parse().map_err(|_| bad())?;
            if q < 2 {
                return Err(bad());
            }
            if q > MAX_ORDER {
                return Err(Error::FieldTooLarge(q, MAX_ORDER));
            }
            let p = (2..=q).find(|d| q % d == 0).unwrap();
            let (mut r, mut k) = (q, 0);
            while r % p == 0 {
                r /= p;
                k += 1;
            }
            if r != 1 {
                return Err(Error::Config(format!("{q} is not a prime power")));
            }
            (p as u32, k)
        }
    };
    if k > 20 {
        return Err(Error::FieldTooLarge(u64::MAX, MAX_ORDER));
    }
    Field::new(p, k, modulus)
}
