//! Quadratic irrationals `α = (A + B√D)/C` over `K` that lie in `K_v`, kept as
//! exact polynomial triples. Laurent expansions are only produced on demand.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::gf::{Fe, Field};
use crate::laurent::Laurent;
use crate::poly::{poly_factor, Poly};

/// An exact power `q^e` (absolute values and complexities).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QPow(pub i64);

impl QPow {
    pub fn exponent(self) -> i64 {
        self.0
    }

    pub fn to_f64(self, q: u64) -> f64 {
        (q as f64).powi(self.0 as i32)
    }
}

impl fmt::Display for QPow {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(out, "q^{}", self.0)
    }
}

/// `(A + B√D)/C` with `gcd(A,B,C) = 1`, `C` monic, `B ≠ 0` and `D` monic,
/// squarefree, of positive even degree. `√D` is the root in `K_v` whose
/// leading coefficient is 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuadIrr {
    a: Poly,
    b: Poly,
    c: Poly,
    d: Poly,
}

impl QuadIrr {
    pub fn a(&self) -> &Poly {
        &self.a
    }
    pub fn b(&self) -> &Poly {
        &self.b
    }
    pub fn c(&self) -> &Poly {
        &self.c
    }
    pub fn d(&self) -> &Poly {
        &self.d
    }

    /// Builds from parts whose radicand is already canonical.
    pub(crate) fn from_canonical_d(a: Poly, b: Poly, c: Poly, d: Poly, f: &Field) -> QuadIrr {
        debug_assert!(!b.is_zero() && !c.is_zero());
        let g = a.gcd(&b, f).gcd(&c, f);
        let (mut a, mut b, mut c) = if g.is_one() {
            (a, b, c)
        } else {
            (a.exact_div(&g, f), b.exact_div(&g, f), c.exact_div(&g, f))
        };
        if !c.is_monic() {
            let u = f.inv_nz(c.lc());
            a = a.scale(u, f);
            b = b.scale(u, f);
            c = c.scale(u, f);
        }
        QuadIrr { a, b, c, d }
    }

    /// Galois conjugate.
    pub fn conj(&self, f: &Field) -> QuadIrr {
        QuadIrr { a: self.a.clone(), b: self.b.neg(f), c: self.c.clone(), d: self.d.clone() }
    }

    /// Half the degree of `D`, i.e. `-v(√D)`.
    pub fn half_deg_d(&self) -> i64 {
        self.d.deg() / 2
    }

    /// `v(α - α^σ)`.
    pub fn val_gap(&self) -> i64 {
        self.c.deg() - self.b.deg() - self.half_deg_d()
    }

    /// Minimal polynomial coefficients `(C², -2AC, A² - B²D)` of `C α`-scaled form:
    /// `C²α² - 2ACα + (A² - B²D) = 0`.
    pub fn min_poly(&self, f: &Field) -> [Poly; 3] {
        let c2 = self.c.square(f);
        let two = f.from_int(2);
        let mid = self.a.mul(&self.c, f).scale(f.neg(two), f);
        let cst = self.a.square(f).sub(&self.b.square(f).mul(&self.d, f), f);
        [c2, mid, cst]
    }

    /// `(aα + b)/(cα + d)` for an invertible integral matrix.
    pub fn transform(&self, m: [&Poly; 4], f: &Field) -> Result<QuadIrr> {
        let [ga, gb, gc, gd] = m;
        let det = ga.mul(gd, f).sub(&gb.mul(gc, f), f);
        if det.is_zero() {
            return Err(Error::DivisionByZero);
        }
        let p = ga.mul(&self.a, f).add(&gb.mul(&self.c, f), f);
        let q = gc.mul(&self.a, f).add(&gd.mul(&self.c, f), f);
        let b2d = self.b.square(f).mul(&self.d, f);
        let a_new = p.mul(&q, f).sub(&ga.mul(gc, f).mul(&b2d, f), f);
        let b_new = self.b.mul(&self.c, f).mul(&det, f);
        let c_new = q.square(f).sub(&gc.square(f).mul(&b2d, f), f);
        Ok(QuadIrr::from_canonical_d(a_new, b_new, c_new, self.d.clone(), f))
    }

    /// `α + P` for a polynomial `P`.
    pub fn shift(&self, p: &Poly, f: &Field) -> QuadIrr {
        QuadIrr { a: self.a.add(&p.mul(&self.c, f), f), b: self.b.clone(), c: self.c.clone(), d: self.d.clone() }
    }

    /// `u α` for a unit `u`.
    pub fn scale(&self, u: Fe, f: &Field) -> QuadIrr {
        QuadIrr { a: self.a.scale(u, f), b: self.b.scale(u, f), c: self.c.clone(), d: self.d.clone() }
    }

    /// Laurent expansion with at least `prec` correct coefficients.
    pub fn embed(&self, prec: usize, f: &Field) -> Laurent {
        // Extra working precision covers cancellation in A + B√D.
        let extra = (2 * (self.a.deg().max(0) + self.b.deg() + self.d.deg() + self.c.deg()) + 4) as usize;
        let work = prec + extra;
        let sd = Laurent::from_poly(&self.d).sqrt(work, f).expect("canonical radicand has a root");
        let num = Laurent::from_poly(&self.a).add(&Laurent::from_poly(&self.b).mul(&sd, f), f);
        let val = num.div(&Laurent::from_poly(&self.c), work, f).expect("C is nonzero");
        val.truncate_rel(prec)
    }

    /// The polynomial part of `α`, exactly.
    pub fn poly_part(&self, f: &Field) -> Poly {
        let need = (self.half_deg_d() + self.b.deg().max(self.a.deg()) + 2).max(1) as usize;
        self.embed(need + self.c.deg() as usize + 2, f).poly_part().expect("enough precision for the polynomial part")
    }

    pub fn format(&self, f: &Field) -> String {
        format!(
            "({} + ({})*sqrt({}))/({})",
            self.a.format(f),
            self.b.format(f),
            self.d.format(f),
            self.c.format(f)
        )
    }
}

/// Validates and canonicalizes `(A + B√D)/C`.
pub fn qi_make(a: &Poly, b: &Poly, c: &Poly, d: &Poly, f: &Field) -> Result<QuadIrr> {
    if f.characteristic() == 2 {
        return Err(Error::CharacteristicTwo);
    }
    if b.is_zero() || d.is_zero() {
        return Err(Error::RationalRadicand);
    }
    if c.is_zero() {
        return Err(Error::DivisionByZero);
    }
    let mut square = Poly::one();
    let mut free = Poly::one();
    for (g, e) in poly_factor(d, f)? {
        square = square.mul(&g.pow(e / 2, f), f);
        if e % 2 == 1 {
            free = free.mul(&g, f);
        }
    }
    let root_lc = f.sqrt(d.lc());
    if free.is_one() && root_lc.is_some() {
        return Err(Error::RationalRadicand);
    }
    let Some(s) = root_lc else {
        return Err(Error::NotSplit("leading coefficient of the radicand is not a square"));
    };
    if free.deg() % 2 != 0 {
        return Err(Error::NotSplit("radicand has odd degree"));
    }
    let b = b.mul(&square, f).scale(s, f);
    Ok(QuadIrr::from_canonical_d(a.clone(), b, c.clone(), free, f))
}

/// `h(α) = 1/|α - α^σ|`.
pub fn qi_h(alpha: &QuadIrr) -> QPow {
    QPow(alpha.val_gap())
}

/// `|n(x - yβ)|` with `n(z) = z z^σ`.
pub fn norm_form_abs(x: &Poly, y: &Poly, beta: &QuadIrr, f: &Field) -> Result<QPow> {
    if x.is_zero() && y.is_zero() {
        return Err(Error::ZeroPolynomial);
    }
    let lin = beta.c.mul(x, f).sub(&beta.a.mul(y, f), f);
    let n = lin.square(f).sub(&beta.b.square(f).mul(&beta.d, f).mul(&y.square(f), f), f);
    Ok(QPow(n.deg() - 2 * beta.c.deg()))
}

// Exact valuations in K(√D_1, ..., √D_n): an element is a vector of 2^n
// polynomial components indexed by subsets of the radicands.

fn tower_mul(x: &[Poly], y: &[Poly], ds: &[Poly], f: &Field) -> Vec<Poly> {
    if ds.is_empty() {
        return vec![x[0].mul(&y[0], f)];
    }
    let h = x.len() / 2;
    let rest = &ds[..ds.len() - 1];
    let d = &ds[ds.len() - 1];
    let (x0, x1) = x.split_at(h);
    let (y0, y1) = y.split_at(h);
    let t = tower_mul(x1, y1, rest, f);
    let mut lo: Vec<Poly> = tower_mul(x0, y0, rest, f);
    for (l, t) in lo.iter_mut().zip(&t) {
        *l = l.add(&t.mul(d, f), f);
    }
    let a = tower_mul(x0, y1, rest, f);
    let b = tower_mul(x1, y0, rest, f);
    lo.extend(a.iter().zip(&b).map(|(a, b)| a.add(b, f)));
    lo
}

/// Valuation and leading coefficient, or `None` for zero.
fn tower_val(x: &[Poly], ds: &[Poly], f: &Field) -> Option<(i64, Fe)> {
    if ds.is_empty() {
        return x[0].degree().map(|d| (-(d as i64), x[0].lc()));
    }
    let h = x.len() / 2;
    let rest = &ds[..ds.len() - 1];
    let d = &ds[ds.len() - 1];
    let half = d.deg() / 2;
    let (x0, x1) = x.split_at(h);
    let p = tower_val(x0, rest, f);
    let r = tower_val(x1, rest, f).map(|(v, c)| (v - half, c));
    match (p, r) {
        (None, r) => r,
        (p, None) => p,
        (Some((vp, cp)), Some((vr, cr))) => {
            if vp != vr {
                return Some(if vp < vr { (vp, cp) } else { (vr, cr) });
            }
            let s = f.add(cp, cr);
            if !s.is_zero() {
                return Some((vp, s));
            }
            // Leading terms cancel: use (X + Y√D)(X - Y√D) = X² - Y²D,
            // where X - Y√D has valuation vp and leading coefficient 2 cp.
            let n0 = tower_mul(x0, x0, rest, f);
            let y2 = tower_mul(x1, x1, rest, f);
            let n: Vec<Poly> = n0.iter().zip(&y2).map(|(a, b)| a.sub(&b.mul(d, f), f)).collect();
            let (vn, cn) = tower_val(&n, rest, f).expect("nonzero norm");
            Some((vn - vp, f.div(cn, f.add(cp, cp)).expect("odd characteristic")))
        }
    }
}

/// `v(z)` for `z = sum_i s_i (A_i + B_i √D_i)/C_i` with signs `s_i = ±1`.
fn val_of_combination(terms: &[(&QuadIrr, bool)], f: &Field) -> Option<(i64, Fe)> {
    let mut ds: Vec<Poly> = Vec::new();
    for (t, _) in terms {
        if !ds.contains(&t.d) {
            ds.push(t.d.clone());
        }
    }
    let mut den = Poly::one();
    for (t, _) in terms {
        den = den.mul(&t.c, f);
    }
    let mut comp = vec![Poly::zero(); 1 << ds.len()];
    for (t, negate) in terms {
        let cof = den.exact_div(&t.c, f);
        let (a, b) = if *negate { (t.a.neg(f), t.b.neg(f)) } else { (t.a.clone(), t.b.clone()) };
        let k = ds.iter().position(|d| *d == t.d).unwrap();
        comp[0] = comp[0].add(&a.mul(&cof, f), f);
        comp[1 << k] = comp[1 << k].add(&b.mul(&cof, f), f);
    }
    let lc_den_inv = f.inv_nz(den.lc());
    tower_val(&comp, &ds, f).map(|(v, c)| (v + den.deg(), f.mul(c, lc_den_inv)))
}

/// `v(α - β)`, exactly.
pub fn qi_val_diff(alpha: &QuadIrr, beta: &QuadIrr, f: &Field) -> Result<i64> {
    val_of_combination(&[(alpha, false), (beta, true)], f).map(|(v, _)| v).ok_or(Error::CoincidentPoints)
}

/// `v(α - x)` for `x = num/den` in `K`.
pub fn qi_val_sub_rational(alpha: &QuadIrr, num: &Poly, den: &Poly, f: &Field) -> Result<i64> {
    if den.is_zero() {
        return Err(Error::DivisionByZero);
    }
    let a = alpha.a.mul(den, f).sub(&num.mul(&alpha.c, f), f);
    let b = alpha.b.mul(den, f);
    let v = tower_val(&[a, b], std::slice::from_ref(&alpha.d), f).expect("irrational minus rational is nonzero").0;
    Ok(v + alpha.c.deg() + den.deg())
}

/// `h_β(α) = max(|[α,β,β^σ,α^σ]|, |[α^σ,β,β^σ,α]|)`.
pub fn qi_hbeta(alpha: &QuadIrr, beta: &QuadIrr, f: &Field) -> Result<QPow> {
    let (ac, bc) = (alpha.conj(f), beta.conj(f));
    if alpha == beta || alpha == &bc {
        return Err(Error::CoincidentPoints);
    }
    let v_a_b = qi_val_diff(alpha, beta, f)?;
    let v_a_bc = qi_val_diff(alpha, &bc, f)?;
    let v_ac_b = qi_val_diff(&ac, beta, f)?;
    let v_ac_bc = qi_val_diff(&ac, &bc, f)?;
    let gap = alpha.val_gap() + beta.val_gap();
    // |[a,b,c,d]| = |c-a||d-b| / (|c-b||d-a|), and |z| = q^-v(z).
    let first = -(v_a_bc + v_ac_b - gap);
    let second = -(v_ac_bc + v_a_b - gap);
    Ok(QPow(first.max(second)))
}

/// Continued fraction expansion: `α = [a_0; a_1, ...]` with a periodic tail.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CfExpansion {
    pub preperiod: Vec<Poly>,
    pub period: Vec<Poly>,
}

/// Continued fraction data including the quasi-period, the first repetition
/// up to a unit multiple: `α_end = u α_start`.
#[derive(Clone, Debug)]
pub struct CfData {
    pub quotients: Vec<Poly>,
    pub start: usize,
    pub end: usize,
    pub unit: Fe,
}

const CF_CAP: usize = 10_000;

fn cf_step(x: &QuadIrr, f: &Field) -> (Poly, QuadIrr) {
    let a = x.poly_part(f);
    let ap = x.a.sub(&a.mul(&x.c, f), f);
    let den = ap.square(f).sub(&x.b.square(f).mul(&x.d, f), f);
    let next = QuadIrr::from_canonical_d(x.c.mul(&ap, f), x.c.mul(&x.b, f).neg(f), den, x.d.clone(), f);
    (a, next)
}

/// Runs the exact continued fraction iteration until an iterate repeats up to
/// a unit multiple.
pub fn qi_cf_data(alpha: &QuadIrr, f: &Field) -> Result<CfData> {
    let mut seen: HashMap<QuadIrr, usize> = HashMap::new();
    let mut quotients = Vec::new();
    let mut x = alpha.clone();
    for i in 0..CF_CAP {
        for u in f.units() {
            // x = u * earlier  <=>  u^-1 x = earlier
            if let Some(&j) = seen.get(&x.scale(f.inv_nz(u), f)) {
                return Ok(CfData { quotients, start: j, end: i, unit: u });
            }
        }
        seen.insert(x.clone(), i);
        let (a, next) = cf_step(&x, f);
        quotients.push(a);
        x = next;
    }
    Err(Error::Unsupported("continued fraction did not become periodic".into()))
}

/// Exact continued fraction with true period (repetition of the iterate itself).
pub fn qi_cf(alpha: &QuadIrr, f: &Field) -> Result<CfExpansion> {
    let mut seen: HashMap<QuadIrr, usize> = HashMap::new();
    let mut quotients = Vec::new();
    let mut x = alpha.clone();
    for i in 0..CF_CAP {
        if let Some(&j) = seen.get(&x) {
            return Ok(CfExpansion { preperiod: quotients[..j].to_vec(), period: quotients[j..i].to_vec() });
        }
        seen.insert(x.clone(), i);
        let (a, next) = cf_step(&x, f);
        quotients.push(a);
        x = next;
    }
    Err(Error::Unsupported("continued fraction did not become periodic".into()))
}

/// Convergents `p_n/q_n` of a list of partial quotients.
pub fn convergents(quotients: &[Poly], f: &Field) -> Vec<(Poly, Poly)> {
    let (mut p0, mut q0) = (Poly::one(), Poly::zero());
    let (mut p1, mut q1) = (Poly::zero(), Poly::one());
    let mut out = Vec::new();
    for a in quotients {
        let p = a.mul(&p0, f).add(&p1, f);
        let q = a.mul(&q0, f).add(&q1, f);
        out.push((p.clone(), q.clone()));
        p1 = std::mem::replace(&mut p0, p);
        q1 = std::mem::replace(&mut q0, q);
    }
    out
}

/// A 2x2 polynomial matrix `[[a, b], [c, d]]`.
pub type PolyMat = [Poly; 4];

pub fn mat_mul(x: &PolyMat, y: &PolyMat, f: &Field) -> PolyMat {
    [
        x[0].mul(&y[0], f).add(&x[1].mul(&y[2], f), f),
        x[0].mul(&y[1], f).add(&x[1].mul(&y[3], f), f),
        x[2].mul(&y[0], f).add(&x[3].mul(&y[2], f), f),
        x[2].mul(&y[1], f).add(&x[3].mul(&y[3], f), f),
    ]
}

pub fn mat_identity() -> PolyMat {
    [Poly::one(), Poly::zero(), Poly::zero(), Poly::one()]
}

pub fn mat_det(x: &PolyMat, f: &Field) -> Poly {
    x[0].mul(&x[3], f).sub(&x[1].mul(&x[2], f), f)
}

/// Inverse of a matrix whose determinant is a nonzero constant.
pub fn mat_inv(x: &PolyMat, f: &Field) -> Result<PolyMat> {
    let det = mat_det(x, f);
    if !det.is_unit() {
        return Err(Error::DivisionByZero);
    }
    let u = f.inv_nz(det.lc());
    Ok([x[3].scale(u, f), x[1].neg(f).scale(u, f), x[2].neg(f).scale(u, f), x[0].scale(u, f)])
}

fn cf_matrix(quotients: &[Poly], f: &Field) -> PolyMat {
    quotients.iter().fold(mat_identity(), |m, a| mat_mul(&m, &[a.clone(), Poly::one(), Poly::one(), Poly::zero()], f))
}

/// A primitive hyperbolic element of `GL_2(R_v)` fixing `α`: every element of
/// the stabilizer is a scalar times a power of it.
pub fn qi_primitive_automorph(alpha: &QuadIrr, f: &Field) -> Result<PolyMat> {
    let cf = qi_cf_data(alpha, f)?;
    let mi = cf_matrix(&cf.quotients[..cf.start], f);
    let mj = cf_matrix(&cf.quotients[..cf.end], f);
    let du = [Poly::constant(cf.unit), Poly::zero(), Poly::zero(), Poly::one()];
    Ok(mat_mul(&mat_mul(&mj, &du, f), &mat_inv(&mi, f)?, f))
}

/// `v(tr g)`.
pub fn trace_val(g: &PolyMat, f: &Field) -> Result<i64> {
    let t = g[0].add(&g[3], f);
    if t.is_zero() {
        return Err(Error::ValuationOfZero);
    }
    Ok(-t.deg())
}

/// The hyperbolic generator of `G_α` modulo torsion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Automorph {
    pub g0: crate::modgroup::GMat,
    /// `v(tr g₀)`.
    pub trace_val: i64,
    /// `[G_α : g₀^Z]`.
    pub m0: u64,
    /// Least `k` such that a scalar multiple of the primitive automorph's `k`-th power lies in `G`.
    pub power: u32,
}

/// `g₀ ∈ G` fixing `α`, with `G_α = F_q^* × g₀^Z`.
///
/// The stabilizer of `α` in `GL_2(R_v)` is the unit group of its order: the
/// scalars times the powers of the primitive automorph `g`. Every supported
/// `G` contains the scalars, so `G_α` is the scalars times the powers of
/// `g^k` for the least `k` with `g^k ∈ G`, and `m₀ = q - 1`.
pub fn qi_automorph(alpha: &QuadIrr, spec: &crate::modgroup::SubgroupSpec, f: &Field) -> Result<Automorph> {
    use crate::modgroup::{subgroup_member, GMat};
    let g = GMat::from_array(qi_primitive_automorph(alpha, f)?, f)?;
    let cap = spec.index.min(100_000) as u32;
    let mut acc = GMat::identity();
    for k in 1..=cap {
        acc = acc.mul(&g, f);
        if subgroup_member(&acc, spec, f) {
            debug_assert_eq!(&alpha.transform(acc.entries(), f)?, alpha);
            let tv = trace_val(&acc.to_array(), f)?;
            return Ok(Automorph { g0: acc, trace_val: tv, m0: f.q() - 1, power: k });
        }
    }
    Err(Error::Unsupported("no power of the automorph found in the subgroup".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(f: &Field, c: &[i64]) -> Poly {
        Poly::from_ints(f, c)
    }

    fn sqrt_y2p1(f: &Field) -> QuadIrr {
        qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &p(f, &[1, 0, 1]), f).unwrap()
    }

    #[test]
    fn make_examples() {
        let f = Field::prime(3).unwrap();
        let a = sqrt_y2p1(&f);
        assert_eq!(a.d(), &p(&f, &[1, 0, 1]));
        assert_eq!(qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &Poly::y(), &f), Err(Error::NotSplit("radicand has odd degree")));
        assert_eq!(
            qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &p(&f, &[2, 0, 2]), &f),
            Err(Error::NotSplit("leading coefficient of the radicand is not a square"))
        );
        assert_eq!(qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &p(&f, &[1, 2, 1]), &f), Err(Error::RationalRadicand));
        let two = f.from_int(2);
        let scaled = qi_make(&p(&f, &[0, 2]), &p(&f, &[2]), &p(&f, &[2, 0, 2]), &p(&f, &[1, 0, 1]), &f).unwrap();
        let plain = qi_make(&p(&f, &[0, 1]), &Poly::one(), &p(&f, &[1, 0, 1]), &p(&f, &[1, 0, 1]), &f).unwrap();
        assert_eq!(scaled, plain);
        let common = qi_make(&p(&f, &[0, 1]).scale(two, &f).mul(&Poly::y(), &f), &Poly::y(), &Poly::y(), &p(&f, &[1, 0, 1]), &f).unwrap();
        assert_eq!(common, qi_make(&p(&f, &[0, 2]), &Poly::one(), &Poly::one(), &p(&f, &[1, 0, 1]), &f).unwrap());
        // A square factor in the radicand moves into B.
        let sq = qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &p(&f, &[1, 0, 1]).mul(&p(&f, &[1, 1]).square(&f), &f), &f).unwrap();
        assert_eq!(sq.b(), &p(&f, &[1, 1]));
        assert!(sq.embed(20, &f).agrees_with(&Laurent::from_poly(&sq.b().square(&f).mul(sq.d(), &f)).sqrt(20, &f).unwrap(), &f));
    }

    #[test]
    fn h_examples() {
        let f = Field::prime(3).unwrap();
        let a = sqrt_y2p1(&f);
        assert_eq!(qi_h(&a), QPow(-1));
        let b = qi_make(&Poly::zero(), &Poly::one(), &Poly::monomial(Fe::ONE, 2), &p(&f, &[1, 0, 1]), &f).unwrap();
        assert_eq!(qi_h(&b), QPow(1));
        assert_eq!(qi_h(&a.conj(&f)), qi_h(&a));
        assert_eq!(a.conj(&f).conj(&f), a);
        // Laurent check of the definition.
        let gap = a.embed(30, &f).sub(&a.conj(&f).embed(30, &f), &f);
        assert_eq!(gap.val().unwrap(), a.val_gap());
    }

    #[test]
    fn norm_form_examples() {
        let f = Field::prime(3).unwrap();
        let b = sqrt_y2p1(&f);
        assert_eq!(norm_form_abs(&Poly::one(), &Poly::zero(), &b, &f).unwrap(), QPow(0));
        assert_eq!(norm_form_abs(&Poly::zero(), &Poly::one(), &b, &f).unwrap(), QPow(2));
        let x = p(&f, &[1, 2, 0, 1]);
        assert_eq!(norm_form_abs(&x, &Poly::zero(), &b, &f).unwrap(), QPow(6));
        assert!(norm_form_abs(&Poly::zero(), &Poly::zero(), &b, &f).is_err());
    }

    fn random_poly(rng: &mut ChaCha8Rng, f: &Field, deg: usize) -> Poly {
        Poly::from_coeffs((0..=deg).map(|_| f.element(rng.gen_range(0..f.q() as usize))).collect())
    }

    fn random_poly_in(rng: &mut ChaCha8Rng, f: &Field, degs: std::ops::Range<usize>) -> Poly {
        let d = rng.gen_range(degs);
        random_poly(rng, f, d)
    }

    fn random_quad(rng: &mut ChaCha8Rng, f: &Field) -> QuadIrr {
        loop {
            let dd = 2 * rng.gen_range(1..3);
            let mut d = random_poly(rng, f, dd);
            d = d.add(&Poly::monomial(Fe::ONE, dd), f).monic(f);
            let a = random_poly_in(rng, f, 0..3);
            let b = random_poly_in(rng, f, 0..2);
            let c = random_poly_in(rng, f, 0..3);
            if b.is_zero() || c.is_zero() || d.deg() != dd as i64 {
                continue;
            }
            if let Ok(x) = qi_make(&a, &b, &c, &d, f) {
                return x;
            }
        }
    }

    fn random_gl2(rng: &mut ChaCha8Rng, f: &Field) -> PolyMat {
        let mut m = mat_identity();
        for _ in 0..rng.gen_range(1..5) {
            let t = random_poly_in(rng, f, 0..3);
            let u = f.element(rng.gen_range(1..f.q() as usize));
            let step = [t, Poly::constant(u), Poly::one(), Poly::zero()];
            m = mat_mul(&m, &step, f);
        }
        m
    }

    #[test]
    fn laurent_embedding_satisfies_minimal_polynomial() {
        let f = Field::prime(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = random_quad(&mut rng, &f);
            let z = x.embed(40, &f);
            let [c2, mid, cst] = x.min_poly(&f);
            let lz = |p: &Poly| Laurent::from_poly(p);
            let r = lz(&c2).mul(&z.mul(&z, &f), &f).add(&lz(&mid).mul(&z, &f), &f).add(&lz(&cst), &f);
            assert!(r.val_lower() > z.val().unwrap() + 20);
        }
    }

    #[test]
    fn transformation_law_for_h() {
        let f = Field::prime(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x = random_quad(&mut rng, &f);
            let g = random_gl2(&mut rng, &f);
            let y = x.transform([&g[0], &g[1], &g[2], &g[3]], &f).unwrap();
            let n = norm_form_abs(&g[3], &g[2].neg(&f), &x, &f).unwrap();
            assert_eq!(qi_h(&y).0, qi_h(&x).0 + n.0);
            // the action is by homographies
            let z = x.embed(30, &f);
            let img = Laurent::from_poly(&g[0]).mul(&z, &f).add(&Laurent::from_poly(&g[1]), &f);
            let den = Laurent::from_poly(&g[2]).mul(&z, &f).add(&Laurent::from_poly(&g[3]), &f);
            let w = img.div(&den, 30, &f).unwrap();
            assert!(w.truncate_rel(12).agrees_with(&y.embed(30, &f), &f));
        }
    }

    #[test]
    fn action_composes() {
        let f = Field::prime(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = random_quad(&mut rng, &f);
            let (g, h) = (random_gl2(&mut rng, &f), random_gl2(&mut rng, &f));
            let gh = mat_mul(&g, &h, &f);
            let lhs = x.transform([&gh[0], &gh[1], &gh[2], &gh[3]], &f).unwrap();
            let inner = x.transform([&h[0], &h[1], &h[2], &h[3]], &f).unwrap();
            let rhs = inner.transform([&g[0], &g[1], &g[2], &g[3]], &f).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    fn laurent_hbeta(x: &QuadIrr, b: &QuadIrr, f: &Field) -> i64 {
        let prec = 64;
        let (a1, a2, b1, b2) = (x.embed(prec, f), x.conj(f).embed(prec, f), b.embed(prec, f), b.conj(f).embed(prec, f));
        let r1 = crate::laurent::cross_ratio(&a1, &b1, &b2, &a2, prec, f).unwrap();
        let r2 = crate::laurent::cross_ratio(&a2, &b1, &b2, &a1, prec, f).unwrap();
        (-r1.val().unwrap()).max(-r2.val().unwrap())
    }

    #[test]
    fn hbeta_matches_laurent_evaluation() {
        let f = Field::prime(3).unwrap();
        let a = sqrt_y2p1(&f);
        let b = qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &p(&f, &[2, 1, 1]), &f).unwrap();
        assert_eq!(qi_hbeta(&a, &b, &f).unwrap().0, laurent_hbeta(&a, &b, &f));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let x = random_quad(&mut rng, &f);
            let y = random_quad(&mut rng, &f);
            if x == y || x == y.conj(&f) {
                continue;
            }
            let h = qi_hbeta(&x, &y, &f).unwrap();
            assert_eq!(h.0, laurent_hbeta(&x, &y, &f));
            assert_eq!(h, qi_hbeta(&x, &y.conj(&f), &f).unwrap());
            assert_eq!(h, qi_hbeta(&x.conj(&f), &y, &f).unwrap());
        }
        assert_eq!(qi_hbeta(&a, &a.conj(&f), &f), Err(Error::CoincidentPoints));
    }

    #[test]
    fn exact_difference_valuations_match_laurent() {
        let f = Field::prime(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..300 {
            let x = random_quad(&mut rng, &f);
            let y = if i % 2 == 0 {
                // Same radicand, x + 1/P: the leading terms of x - y cancel deeply.
                let pp = random_poly_in(&mut rng, &f, 1..5).add(&Poly::monomial(Fe::ONE, 5), &f);
                x.transform([&pp, &Poly::one(), &Poly::zero(), &pp], &f).unwrap()
            } else {
                // Different radicand with the same polynomial part.
                let z = random_quad(&mut rng, &f);
                z.shift(&x.poly_part(&f).sub(&z.poly_part(&f), &f), &f)
            };
            if x == y {
                continue;
            }
            let v = qi_val_diff(&x, &y, &f).unwrap();
            let lv = x.embed(60, &f).sub(&y.embed(60, &f), &f).val().unwrap();
            assert_eq!(v, lv);
        }
    }

    #[test]
    fn cf_of_sqrt_y2_plus_1() {
        let f = Field::prime(3).unwrap();
        let a = sqrt_y2p1(&f);
        let cf = qi_cf(&a, &f).unwrap();
        assert_eq!(cf.preperiod, vec![Poly::y()]);
        assert_eq!(cf.period, vec![p(&f, &[0, 2])]);
        let g = qi_primitive_automorph(&a, &f).unwrap();
        assert_eq!(a.transform([&g[0], &g[1], &g[2], &g[3]], &f).unwrap(), a);
        assert!(mat_det(&g, &f).is_unit());
        assert_eq!(trace_val(&g, &f).unwrap(), -1);
    }

    #[test]
    fn cf_convergents_improve_and_shift() {
        let f = Field::prime(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..40 {
            let x = random_quad(&mut rng, &f);
            let cf = qi_cf(&x, &f).unwrap();
            assert!(!cf.period.is_empty());
            let mut qs = cf.preperiod.clone();
            while qs.len() < 7 {
                qs.extend(cf.period.iter().cloned());
            }
            for a in &qs[1..] {
                assert!(a.deg() >= 1);
            }
            let conv = convergents(&qs[..7], &f);
            let mut last = i64::MIN;
            for (pn, qn) in conv.iter().take(6) {
                let v = qi_val_sub_rational(&x, pn, qn, &f).unwrap();
                assert!(v > last);
                last = v;
            }
            let shifted = qi_cf(&x.shift(&p(&f, &[1, 2]), &f), &f).unwrap();
            let mut rs = shifted.preperiod.clone();
            while rs.len() < 7 {
                rs.extend(shifted.period.iter().cloned());
            }
            assert_eq!(rs[1..7], qs[1..7]);
            assert_eq!(rs[0], qs[0].add(&p(&f, &[1, 2]), &f));
        }
    }

    #[test]
    fn automorph_fixes_and_generates_stabilizer() {
        let f = Field::prime(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let x = random_quad(&mut rng, &f);
            let g = qi_primitive_automorph(&x, &f).unwrap();
            assert_eq!(x.transform([&g[0], &g[1], &g[2], &g[3]], &f).unwrap(), x);
            assert!(mat_det(&g, &f).is_unit());
            assert!(trace_val(&g, &f).unwrap() < 0);
        }
        // Brute force: every stabilizer element with small entries is a scalar
        // times a power of the primitive automorph, so its trace degree is a
        // multiple of the primitive one.
        let a = sqrt_y2p1(&f);
        let g = qi_primitive_automorph(&a, &f).unwrap();
        let l = -trace_val(&g, &f).unwrap();
        let polys: Vec<Poly> = crate::poly::enumerate_polys(&f, 2, crate::poly::PolyFilter::All).collect();
        let mut found = 0;
        for c in &polys {
            for d in &polys {
                // gα = α  <=>  cα² + (d - a)α - b = 0; parametrize by (c, d).
                if c.is_zero() {
                    continue;
                }
                let [m2, m1, m0] = a.min_poly(&f);
                // c(m2 α² + m1 α + m0) = 0 fixes a = d + c m1/m2, b = -c m0/m2.
                let Ok((aq, ar)) = c.mul(&m1, &f).divrem(&m2, &f) else { continue };
                let Ok((bq, br)) = c.mul(&m0, &f).neg(&f).divrem(&m2, &f) else { continue };
                if !ar.is_zero() || !br.is_zero() {
                    continue;
                }
                let mat = [d.sub(&aq, &f), bq, c.clone(), d.clone()];
                if !mat_det(&mat, &f).is_unit() {
                    continue;
                }
                assert_eq!(a.transform([&mat[0], &mat[1], &mat[2], &mat[3]], &f).unwrap(), a);
                found += 1;
                assert_eq!(trace_val(&mat, &f).unwrap_or(0).rem_euclid(l), 0);
            }
        }
        assert!(found > 0);
    }
}
