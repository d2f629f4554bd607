//! The polynomial ring `R_v = F_q[Y]`, rational functions in `K = F_q(Y)`
//! with the valuation at infinity, factorization and enumeration.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::gf::{Fe, Field};

/// A polynomial over `F_q`, lowest degree first, without trailing zeros.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Poly {
    coeffs: Vec<Fe>,
}

impl Poly {
    pub fn zero() -> Poly {
        Poly { coeffs: Vec::new() }
    }

    pub fn one() -> Poly {
        Poly { coeffs: vec![Fe::ONE] }
    }

    pub fn constant(c: Fe) -> Poly {
        Poly::from_coeffs(vec![c])
    }

    /// `c * Y^n`.
    pub fn monomial(c: Fe, n: usize) -> Poly {
        let mut v = vec![Fe::ZERO; n + 1];
        v[n] = c;
        Poly::from_coeffs(v)
    }

    /// The indeterminate `Y`.
    pub fn y() -> Poly {
        Poly::monomial(Fe::ONE, 1)
    }

    pub fn from_coeffs(mut coeffs: Vec<Fe>) -> Poly {
        while coeffs.last() == Some(&Fe::ZERO) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    /// Prime-field coefficients given as integers, lowest degree first.
    pub fn from_ints(f: &Field, ints: &[i64]) -> Poly {
        Poly::from_coeffs(ints.iter().map(|&n| f.from_int(n)).collect())
    }

    pub fn coeffs(&self) -> &[Fe] {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize) -> Fe {
        self.coeffs.get(i).copied().unwrap_or(Fe::ZERO)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == Fe::ONE
    }

    /// Degree, `None` for the zero polynomial (degree minus infinity).
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    /// Degree as a signed integer; the zero polynomial gets `i64::MIN`.
    pub fn deg(&self) -> i64 {
        self.degree().map_or(i64::MIN, |d| d as i64)
    }

    /// Leading coefficient (zero for the zero polynomial).
    pub fn lc(&self) -> Fe {
        self.coeffs.last().copied().unwrap_or(Fe::ZERO)
    }

    pub fn is_monic(&self) -> bool {
        self.lc() == Fe::ONE
    }

    /// Nonzero constant polynomials, i.e. the units of `R_v`.
    pub fn is_unit(&self) -> bool {
        self.coeffs.len() == 1
    }

    pub fn add(&self, other: &Poly, f: &Field) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        Poly::from_coeffs((0..n).map(|i| f.add(self.coeff(i), other.coeff(i))).collect())
    }

    pub fn sub(&self, other: &Poly, f: &Field) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        Poly::from_coeffs((0..n).map(|i| f.sub(self.coeff(i), other.coeff(i))).collect())
    }

    pub fn neg(&self, f: &Field) -> Poly {
        Poly { coeffs: self.coeffs.iter().map(|&c| f.neg(c)).collect() }
    }

    pub fn scale(&self, c: Fe, f: &Field) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly { coeffs: self.coeffs.iter().map(|&x| f.mul(x, c)).collect() }
    }

    /// Multiplication by `Y^n`.
    pub fn shift(&self, n: usize) -> Poly {
        if self.is_zero() {
            return Poly::zero();
        }
        let mut v = vec![Fe::ZERO; n];
        v.extend_from_slice(&self.coeffs);
        Poly { coeffs: v }
    }

    pub fn mul(&self, other: &Poly, f: &Field) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let mut v = vec![Fe::ZERO; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate() {
                v[i + j] = f.add(v[i + j], f.mul(a, b));
            }
        }
        Poly::from_coeffs(v)
    }

    pub fn square(&self, f: &Field) -> Poly {
        self.mul(self, f)
    }

    pub fn pow(&self, e: u32, f: &Field) -> Poly {
        let mut acc = Poly::one();
        for _ in 0..e {
            acc = acc.mul(self, f);
        }
        acc
    }

    /// Euclidean division: `self = q * d + r` with `deg r < deg d`.
    pub fn divrem(&self, d: &Poly, f: &Field) -> Result<(Poly, Poly)> {
        let dd = d.degree().ok_or(Error::DivisionByZero)?;
        if self.coeffs.len() <= dd {
            return Ok((Poly::zero(), self.clone()));
        }
        let inv_lc = f.inv_nz(d.lc());
        let mut r = self.coeffs.clone();
        let mut quo = vec![Fe::ZERO; r.len() - dd];
        for top in (dd..r.len()).rev() {
            let c = r[top];
            if c.is_zero() {
                continue;
            }
            let m = f.mul(c, inv_lc);
            quo[top - dd] = m;
            for (i, &di) in d.coeffs.iter().enumerate() {
                let k = top - dd + i;
                r[k] = f.sub(r[k], f.mul(m, di));
            }
        }
        r.truncate(dd);
        Ok((Poly::from_coeffs(quo), Poly::from_coeffs(r)))
    }

    pub fn rem(&self, d: &Poly, f: &Field) -> Result<Poly> {
        Ok(self.divrem(d, f)?.1)
    }

    /// Quotient when `d` is known to divide `self`.
    pub fn exact_div(&self, d: &Poly, f: &Field) -> Poly {
        let (quo, r) = self.divrem(d, f).expect("nonzero divisor");
        debug_assert!(r.is_zero(), "inexact division");
        quo
    }

    pub fn divides(&self, other: &Poly, f: &Field) -> bool {
        !self.is_zero() && other.rem(self, f).map(|r| r.is_zero()).unwrap_or(false)
    }

    /// Monic associate (zero stays zero).
    pub fn monic(&self, f: &Field) -> Poly {
        if self.is_zero() {
            return Poly::zero();
        }
        self.scale(f.inv_nz(self.lc()), f)
    }

    pub fn eval(&self, x: Fe, f: &Field) -> Fe {
        self.coeffs.iter().rev().fold(Fe::ZERO, |acc, &c| f.add(f.mul(acc, x), c))
    }

    /// Monic gcd.
    pub fn gcd(&self, other: &Poly, f: &Field) -> Poly {
        let (mut a, mut b) = (self.clone(), other.clone());
        while !b.is_zero() {
            let r = a.rem(&b, f).expect("nonzero");
            a = b;
            b = r;
        }
        a.monic(f)
    }

    pub fn coprime(&self, other: &Poly, f: &Field) -> bool {
        self.gcd(other, f).is_one()
    }

    /// Integer encoding `sum c_i q^i` of the coefficient indices.
    pub fn encode(&self, f: &Field) -> u128 {
        let q = f.q() as u128;
        self.coeffs.iter().rev().fold(0u128, |acc, c| acc * q + c.index() as u128)
    }

    pub fn decode(mut n: u128, f: &Field) -> Poly {
        let q = f.q() as u128;
        let mut v = Vec::new();
        while n > 0 {
            v.push(f.element((n % q) as usize));
            n /= q;
        }
        Poly::from_coeffs(v)
    }

    /// Written in the ASCII syntax `2*Y^3+Y+1`.
    pub fn format(&self, f: &Field) -> String {
        if self.is_zero() {
            return "0".into();
        }
        let mut terms = Vec::new();
        for (i, &c) in self.coeffs.iter().enumerate().rev() {
            if c.is_zero() {
                continue;
            }
            let cs = f.format(c);
            let mono = match i {
                0 => String::new(),
                1 => "Y".to_string(),
                _ => format!("Y^{i}"),
            };
            terms.push(match (i, c == Fe::ONE) {
                (0, _) => cs,
                (_, true) => mono,
                _ => format!("{cs}*{mono}"),
            });
        }
        terms.join("+")
    }
}

/// Extended Euclid: returns `(g, u, w)` with `g` monic and `g = u P + w Q`.
pub fn poly_gcd(p: &Poly, q: &Poly, f: &Field) -> Result<(Poly, Poly, Poly)> {
    if p.is_zero() && q.is_zero() {
        return Err(Error::ZeroPolynomial);
    }
    let (mut r0, mut r1) = (p.clone(), q.clone());
    let (mut s0, mut s1) = (Poly::one(), Poly::zero());
    let (mut t0, mut t1) = (Poly::zero(), Poly::one());
    while !r1.is_zero() {
        let (quo, r) = r0.divrem(&r1, f)?;
        let s = s0.sub(&quo.mul(&s1, f), f);
        let t = t0.sub(&quo.mul(&t1, f), f);
        r0 = std::mem::replace(&mut r1, r);
        s0 = std::mem::replace(&mut s1, s);
        t0 = std::mem::replace(&mut t1, t);
    }
    let inv = f.inv_nz(r0.lc());
    Ok((r0.scale(inv, f), s0.scale(inv, f), t0.scale(inv, f)))
}

/// Inverse of `a` modulo `m`, if it exists.
pub fn inverse_mod(a: &Poly, m: &Poly, f: &Field) -> Option<Poly> {
    let (g, u, _) = poly_gcd(a, m, f).ok()?;
    if !g.is_one() {
        return None;
    }
    u.rem(m, f).ok()
}

/// An element `num/den` of `K = F_q(Y)` in lowest terms with monic denominator.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RationalFn {
    num: Poly,
    den: Poly,
}

impl RationalFn {
    pub fn new(num: Poly, den: Poly, f: &Field) -> Result<RationalFn> {
        if den.is_zero() {
            return Err(Error::DivisionByZero);
        }
        if num.is_zero() {
            return Ok(RationalFn { num, den: Poly::one() });
        }
        let g = num.gcd(&den, f);
        let (num, den) = (num.exact_div(&g, f), den.exact_div(&g, f));
        let s = f.inv_nz(den.lc());
        Ok(RationalFn { num: num.scale(s, f), den: den.scale(s, f) })
    }

    pub fn from_poly(p: Poly) -> RationalFn {
        RationalFn { num: p, den: Poly::one() }
    }

    pub fn num(&self) -> &Poly {
        &self.num
    }

    pub fn den(&self) -> &Poly {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }
}

/// Valuation at infinity, `deg den - deg num`.
pub fn val_inf(r: &RationalFn) -> Result<i64> {
    if r.is_zero() {
        return Err(Error::ValuationOfZero);
    }
    Ok(r.den.deg() - r.num.deg())
}

/// Trial-division factorizer with a cached table of monic irreducibles.
#[derive(Clone, Debug)]
pub struct Factorizer {
    field: Field,
    irreducibles: Vec<Poly>,
    max_deg: usize,
}

impl Factorizer {
    pub fn new(field: &Field) -> Factorizer {
        Factorizer { field: field.clone(), irreducibles: Vec::new(), max_deg: 0 }
    }

    /// Monic irreducibles of degree at most `d`, graded-lex order.
    pub fn irreducibles_up_to(&mut self, d: usize) -> &[Poly] {
        let f = self.field.clone();
        while self.max_deg < d {
            let next = self.max_deg + 1;
            for p in enumerate_polys(&f, next as u32, PolyFilter::Monic) {
                if p.degree() != Some(next) {
                    continue;
                }
                let reducible = self
                    .irreducibles
                    .iter()
                    .take_while(|g| 2 * g.degree().unwrap() <= next)
                    .any(|g| g.divides(&p, &f));
                if !reducible {
                    self.irreducibles.push(p);
                }
            }
            self.max_deg = next;
        }
        let end = self.irreducibles.partition_point(|g| g.degree().unwrap() <= d);
        &self.irreducibles[..end]
    }

    /// Monic irreducible factors with multiplicities, in graded-lex order.
    pub fn factor(&mut self, p: &Poly) -> Result<Vec<(Poly, u32)>> {
        let f = self.field.clone();
        let d = p.degree().ok_or(Error::ZeroPolynomial)?;
        let mut rest = p.monic(&f);
        let mut out = Vec::new();
        let primes: Vec<Poly> = self.irreducibles_up_to(d / 2).to_vec();
        for g in &primes {
            let gd = g.degree().unwrap();
            if 2 * gd > rest.degree().unwrap_or(0) {
                break;
            }
            let mut e = 0;
            loop {
                let (quo, r) = rest.divrem(g, &f)?;
                if !r.is_zero() {
                    break;
                }
                rest = quo;
                e += 1;
            }
            if e > 0 {
                out.push((g.clone(), e));
            }
        }
        if rest.degree().unwrap_or(0) > 0 {
            // What remains has no factor of degree <= deg/2, so it is irreducible.
            match out.iter_mut().find(|(g, _)| *g == rest) {
                Some(entry) => entry.1 += 1,
                None => out.push((rest, 1)),
            }
            out.sort_by(|a, b| graded_cmp(&a.0, &b.0, &f));
        }
        Ok(out)
    }

    pub fn is_irreducible(&mut self, p: &Poly) -> bool {
        match self.factor(p) {
            Ok(fs) => fs.len() == 1 && fs[0].1 == 1,
            Err(_) => false,
        }
    }
}

/// Factors `p` into monic irreducibles with multiplicities.
pub fn poly_factor(p: &Poly, f: &Field) -> Result<Vec<(Poly, u32)>> {
    Factorizer::new(f).factor(p)
}

fn graded_cmp(a: &Poly, b: &Poly, f: &Field) -> std::cmp::Ordering {
    a.deg().cmp(&b.deg()).then(a.encode(f).cmp(&b.encode(f)))
}

/// `|(R_v/M)^*|`, from the factorization of `M`.
pub fn euler_phi(factors: &[(Poly, u32)], q: u64) -> u128 {
    factors
        .iter()
        .map(|(g, e)| {
            let n = (q as u128).pow(g.degree().unwrap() as u32);
            n.pow(e - 1) * (n - 1)
        })
        .product()
}

/// A nonzero ideal `(M)` of `R_v` with its norm and factorization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdealDesc {
    pub generator: Poly,
    pub norm: u128,
    pub factorization: Vec<(Poly, u32)>,
}

impl IdealDesc {
    pub fn new(m: &Poly, f: &Field) -> Result<IdealDesc> {
        if m.is_zero() {
            return Err(Error::ZeroPolynomial);
        }
        let generator = m.monic(f);
        let factorization = poly_factor(&generator, f)?;
        let norm = (f.q() as u128).pow(generator.degree().unwrap() as u32);
        Ok(IdealDesc { generator, norm, factorization })
    }

    /// Norm of each prime divisor.
    pub fn prime_norms(&self, q: u64) -> Vec<u128> {
        self.factorization.iter().map(|(g, _)| (q as u128).pow(g.degree().unwrap() as u32)).collect()
    }
}

/// Which polynomials an enumeration yields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PolyFilter {
    All,
    Monic,
    CoprimeTo(Poly),
}

/// Graded-lexicographic cursor over polynomials of degree at most `deg_max`.
#[derive(Clone, Debug)]
pub struct PolyIter {
    field: Field,
    filter: PolyFilter,
    next: u128,
    end: u128,
    // Monic enumeration walks (degree, lower coefficients) instead of raw codes.
    degree: u32,
    deg_max: u32,
}

/// Every qualifying polynomial of degree `<= deg_max` exactly once, ordered by
/// degree and then by the integer encoding of the coefficient tuple.
pub fn enumerate_polys(f: &Field, deg_max: u32, filter: PolyFilter) -> PolyIter {
    let q = f.q() as u128;
    let (next, end) = match filter {
        PolyFilter::Monic => (0, 1),
        _ => (0, q.pow(deg_max + 1)),
    };
    PolyIter { field: f.clone(), filter, next, end, degree: 0, deg_max }
}

impl Iterator for PolyIter {
    type Item = Poly;

    fn next(&mut self) -> Option<Poly> {
        let f = &self.field;
        let q = f.q() as u128;
        loop {
            if self.filter == PolyFilter::Monic {
                if self.next >= self.end {
                    if self.degree >= self.deg_max {
                        return None;
                    }
                    self.degree += 1;
                    self.next = 0;
                    self.end = q.pow(self.degree);
                }
                let n = self.next + q.pow(self.degree);
                self.next += 1;
                return Some(Poly::decode(n, f));
            }
            if self.next >= self.end {
                return None;
            }
            let p = Poly::decode(self.next, f);
            self.next += 1;
            match &self.filter {
                PolyFilter::CoprimeTo(m) if !p.coprime(m, f) => continue,
                _ => return Some(p),
            }
        }
    }
}

/// Parses the ASCII syntax `2*Y^3+Y+1`; extension-field coefficients are
/// written `(a+b*t)`.
pub fn parse_poly(s: &str, f: &Field) -> Result<Poly> {
    let mut p = Parser { s: s.as_bytes(), i: 0 };
    let mut acc: HashMap<usize, Fe> = HashMap::new();
    p.skip_ws();
    if p.at_end() {
        return Err(Error::Parse("empty polynomial".into()));
    }
    let mut first = true;
    loop {
        p.skip_ws();
        let mut negate = false;
        if let Some(c) = p.peek() {
            if c == b'+' || c == b'-' {
                negate = c == b'-';
                p.i += 1;
            } else if !first {
                return Err(Error::Parse(format!("expected '+' or '-' at byte {}", p.i)));
            }
        }
        first = false;
        p.skip_ws();
        let (c, e) = p.term(f, 'Y')?;
        let c = if negate { f.neg(c) } else { c };
        if e > 4096 {
            return Err(Error::Parse("exponent too large".into()));
        }
        let slot = acc.entry(e).or_insert(Fe::ZERO);
        *slot = f.add(*slot, c);
        p.skip_ws();
        if p.at_end() {
            break;
        }
    }
    let n = acc.keys().max().map_or(0, |&m| m + 1);
    let mut v = vec![Fe::ZERO; n];
    for (e, c) in acc {
        v[e] = c;
    }
    Ok(Poly::from_coeffs(v))
}

/// Parses an element of `F_q`: an integer in the prime field or `(a+b*t)`.
pub fn parse_field_elem(s: &str, f: &Field) -> Result<Fe> {
    let mut p = Parser { s: s.trim().as_bytes(), i: 0 };
    let c = p.coefficient(f)?;
    if !p.at_end() {
        return Err(Error::Parse(format!("trailing input in field element {s:?}")));
    }
    Ok(c)
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.i).copied()
    }

    fn at_end(&self) -> bool {
        self.i >= self.s.len()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t')) {
            self.i += 1;
        }
    }

    fn number(&mut self) -> Result<u64> {
        let start = self.i;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.i += 1;
        }
        if start == self.i {
            return Err(Error::Parse(format!("expected a number at byte {start}")));
        }
        std::str::from_utf8(&self.s[start..self.i])
            .unwrap()
            .parse::<u64>()
            .map_err(|e| Error::Parse(e.to_string()))
    }

    fn coefficient(&mut self, f: &Field) -> Result<Fe> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.i += 1;
                let mut coeffs: Vec<u32> = Vec::new();
                let mut first = true;
                loop {
                    self.skip_ws();
                    let mut negate = false;
                    match self.peek() {
                        Some(b')') if !first => {
                            self.i += 1;
                            break;
                        }
                        Some(c @ (b'+' | b'-')) => {
                            negate = c == b'-';
                            self.i += 1;
                        }
                        _ if first => {}
                        _ => return Err(Error::Parse(format!("bad field element at byte {}", self.i))),
                    }
                    first = false;
                    self.skip_ws();
                    let (c, e) = self.prime_term(f)?;
                    if e >= 64 {
                        return Err(Error::Parse("exponent of t too large".into()));
                    }
                    let p = f.characteristic() as u64;
                    let c = if negate { (p - c % p) % p } else { c % p };
                    if coeffs.len() <= e {
                        coeffs.resize(e + 1, 0);
                    }
                    coeffs[e] = ((coeffs[e] as u64 + c) % p) as u32;
                }
                f.from_coeffs(&coeffs)
            }
            _ => {
                let n = self.number()?;
                Ok(f.from_int((n % f.characteristic() as u64) as i64))
            }
        }
    }

    // `c`, `c*t^e`, `t^e`, `t` inside a parenthesised field element.
    fn prime_term(&mut self, _f: &Field) -> Result<(u64, usize)> {
        let mut c = 1u64;
        let mut have_c = false;
        if matches!(self.peek(), Some(b'0'..=b'9')) {
            c = self.number()?;
            have_c = true;
            self.skip_ws();
            if self.peek() == Some(b'*') {
                self.i += 1;
                self.skip_ws();
            } else {
                return Ok((c, 0));
            }
        }
        if self.peek() != Some(b't') {
            if have_c {
                return Err(Error::Parse(format!("expected 't' at byte {}", self.i)));
            }
            return Err(Error::Parse(format!("expected a term at byte {}", self.i)));
        }
        self.i += 1;
        Ok((c, self.exponent()?))
    }

    fn exponent(&mut self) -> Result<usize> {
        self.skip_ws();
        if self.peek() == Some(b'^') {
            self.i += 1;
            self.skip_ws();
            let n = self.number()?;
            usize::try_from(n).map_err(|_| Error::Parse("exponent overflow".into()))
        } else {
            Ok(1)
        }
    }

    fn term(&mut self, f: &Field, var: char) -> Result<(Fe, usize)> {
        let var = var as u8;
        let mut c = Fe::ONE;
        if self.peek() != Some(var) {
            c = self.coefficient(f)?;
            self.skip_ws();
            if self.peek() == Some(b'*') {
                self.i += 1;
                self.skip_ws();
            } else {
                return Ok((c, 0));
            }
        }
        if self.peek() != Some(var) {
            return Err(Error::Parse(format!("expected '{}' at byte {}", var as char, self.i)));
        }
        self.i += 1;
        Ok((c, self.exponent()?))
    }
}
