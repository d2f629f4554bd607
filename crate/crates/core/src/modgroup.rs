//! The modular group `GL_2(R_v)`, its congruence subgroups, the homography
//! actions and the orbit enumerators.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gf::{Fe, Field};
use crate::laurent::{ls_ball, BallId, Laurent};
use crate::poly::{enumerate_polys, poly_factor, poly_gcd, Poly, PolyFilter};
use crate::quad::{norm_form_abs, qi_h, qi_hbeta, qi_primitive_automorph, QPow, QuadIrr};

/// An element of `GL_2(R_v)`: a polynomial matrix with unit determinant.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GMat {
    pub a: Poly,
    pub b: Poly,
    pub c: Poly,
    pub d: Poly,
}

impl GMat {
    pub fn new(a: Poly, b: Poly, c: Poly, d: Poly, f: &Field) -> Result<GMat> {
        let m = GMat { a, b, c, d };
        if !m.det(f).is_unit() {
            return Err(Error::NotInvertible);
        }
        Ok(m)
    }

    pub fn identity() -> GMat {
        GMat { a: Poly::one(), b: Poly::zero(), c: Poly::zero(), d: Poly::one() }
    }

    /// `[[1, P], [0, 1]]`.
    pub fn translation(p: Poly) -> GMat {
        GMat { a: Poly::one(), b: p, c: Poly::zero(), d: Poly::one() }
    }

    /// `[[0, 1], [1, 0]]`.
    pub fn swap() -> GMat {
        GMat { a: Poly::zero(), b: Poly::one(), c: Poly::one(), d: Poly::zero() }
    }

    pub fn diag(u: Fe, w: Fe) -> GMat {
        GMat { a: Poly::constant(u), b: Poly::zero(), c: Poly::zero(), d: Poly::constant(w) }
    }

    pub fn from_array(m: [Poly; 4], f: &Field) -> Result<GMat> {
        let [a, b, c, d] = m;
        GMat::new(a, b, c, d, f)
    }

    pub fn to_array(&self) -> [Poly; 4] {
        [self.a.clone(), self.b.clone(), self.c.clone(), self.d.clone()]
    }

    pub fn entries(&self) -> [&Poly; 4] {
        [&self.a, &self.b, &self.c, &self.d]
    }

    pub fn det(&self, f: &Field) -> Poly {
        self.a.mul(&self.d, f).sub(&self.b.mul(&self.c, f), f)
    }

    pub fn mul(&self, o: &GMat, f: &Field) -> GMat {
        GMat {
            a: self.a.mul(&o.a, f).add(&self.b.mul(&o.c, f), f),
            b: self.a.mul(&o.b, f).add(&self.b.mul(&o.d, f), f),
            c: self.c.mul(&o.a, f).add(&self.d.mul(&o.c, f), f),
            d: self.c.mul(&o.b, f).add(&self.d.mul(&o.d, f), f),
        }
    }

    pub fn inv(&self, f: &Field) -> GMat {
        let u = f.inv_nz(self.det(f).lc());
        GMat { a: self.d.scale(u, f), b: self.b.neg(f).scale(u, f), c: self.c.neg(f).scale(u, f), d: self.a.scale(u, f) }
    }

    pub fn scale(&self, u: Fe, f: &Field) -> GMat {
        GMat { a: self.a.scale(u, f), b: self.b.scale(u, f), c: self.c.scale(u, f), d: self.d.scale(u, f) }
    }

    pub fn pow(&self, k: u32, f: &Field) -> GMat {
        (0..k).fold(GMat::identity(), |m, _| m.mul(self, f))
    }
}

/// A point of `P^1(K_v)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum P1Point {
    Finite(Laurent),
    Infinity,
}

/// `z ↦ (az + b)/(cz + d)`, with `∞` handled projectively.
pub fn act_homography(g: &GMat, z: &P1Point, prec: usize, f: &Field) -> P1Point {
    let l = Laurent::from_poly;
    match z {
        P1Point::Infinity => {
            if g.c.is_zero() {
                P1Point::Infinity
            } else {
                P1Point::Finite(Laurent::from_fraction(&g.a, &g.c, prec, f).expect("nonzero c"))
            }
        }
        P1Point::Finite(z) => {
            let num = l(&g.a).mul(z, f).add(&l(&g.b), f);
            let den = l(&g.c).mul(z, f).add(&l(&g.d), f);
            if den.is_zero() {
                P1Point::Infinity
            } else {
                P1Point::Finite(num.div(&den, prec, f).expect("nonzero denominator"))
            }
        }
    }
}

/// Canonical triple of `γ·α`.
pub fn act_on_quad(g: &GMat, alpha: &QuadIrr, f: &Field) -> QuadIrr {
    alpha.transform(g.entries(), f).expect("unit determinant")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SubgroupKind {
    Full,
    /// `γ ≡ u·Id mod M` for a unit `u`.
    Principal,
    /// `c ≡ 0 mod M`.
    Hecke0,
}

/// One of the supported finite-index subgroups with its two indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubgroupSpec {
    pub kind: SubgroupKind,
    pub modulus: Option<Poly>,
    pub index: u128,
    pub stab_index: u128,
}

/// Largest modulus degree accepted.
pub const MAX_MODULUS_DEGREE: usize = 6;

impl SubgroupSpec {
    pub fn full() -> SubgroupSpec {
        SubgroupSpec { kind: SubgroupKind::Full, modulus: None, index: 1, stab_index: 1 }
    }

    pub fn principal(m: &Poly, f: &Field) -> Result<SubgroupSpec> {
        SubgroupSpec::with_modulus(SubgroupKind::Principal, m, f)
    }

    pub fn hecke0(m: &Poly, f: &Field) -> Result<SubgroupSpec> {
        SubgroupSpec::with_modulus(SubgroupKind::Hecke0, m, f)
    }

    fn with_modulus(kind: SubgroupKind, m: &Poly, f: &Field) -> Result<SubgroupSpec> {
        if m.is_zero() {
            return Err(Error::ZeroPolynomial);
        }
        let m = m.monic(f);
        let deg = m.degree().unwrap();
        if deg > MAX_MODULUS_DEGREE {
            return Err(Error::DegreeCapExceeded(format!("modulus degree {deg} > {MAX_MODULUS_DEGREE}")));
        }
        if deg == 0 {
            return Ok(SubgroupSpec::full());
        }
        let (index, stab_index) = index_formula(kind, &m, f)?;
        Ok(SubgroupSpec { kind, modulus: Some(m), index, stab_index })
    }

    /// `full`, `principal:M` or `hecke0:M`.
    pub fn parse(s: &str, f: &Field) -> Result<SubgroupSpec> {
        let s = s.trim();
        if s == "full" {
            return Ok(SubgroupSpec::full());
        }
        let (kind, m) = s.split_once(':').ok_or_else(|| Error::Parse(format!("unknown group '{s}'")))?;
        let m = crate::poly::parse_poly(m, f)?;
        match kind.trim() {
            "principal" => SubgroupSpec::principal(&m, f),
            "hecke0" => SubgroupSpec::hecke0(&m, f),
            other => Err(Error::Parse(format!("unknown group kind '{other}'"))),
        }
    }

    pub fn describe(&self, f: &Field) -> String {
        match (&self.kind, &self.modulus) {
            (SubgroupKind::Full, _) | (_, None) => "full".into(),
            (SubgroupKind::Principal, Some(m)) => format!("principal:{}", m.format(f)),
            (SubgroupKind::Hecke0, Some(m)) => format!("hecke0:{}", m.format(f)),
        }
    }

    /// Whether `diag(1, u)` lies in the group for every unit `u`.
    pub fn contains_diagonal_units(&self) -> bool {
        self.kind != SubgroupKind::Principal
    }
}

fn index_formula(kind: SubgroupKind, m: &Poly, f: &Field) -> Result<(u128, u128)> {
    let q = f.q() as u128;
    let deg = m.degree().unwrap() as u32;
    let factors = poly_factor(m, f)?;
    match kind {
        SubgroupKind::Full => Ok((1, 1)),
        // |P^1(R/M)| = q^deg M · prod (1 + 1/N(p))
        SubgroupKind::Hecke0 => {
            let mut idx = q.pow(deg);
            for (g, _) in &factors {
                let n = q.pow(g.degree().unwrap() as u32);
                idx = idx / n * (n + 1);
            }
            Ok((idx, 1))
        }
        // |SL_2(R/M)|, since the image of the group is the scalars.
        SubgroupKind::Principal => {
            let mut idx = 1u128;
            for (g, e) in &factors {
                let n = q.pow(g.degree().unwrap() as u32);
                idx *= n.pow(3 * (e - 1)) * n * (n * n - 1);
            }
            Ok((idx, (q - 1) * q.pow(deg)))
        }
    }
}

fn reduce(p: &Poly, m: &Option<Poly>, f: &Field) -> Poly {
    match m {
        Some(m) => p.rem(m, f).expect("nonzero modulus"),
        None => Poly::zero(),
    }
}

/// Congruence test for residues modulo the level (entries already reduced or not).
fn residues_in_group(kind: SubgroupKind, m: &Option<Poly>, e: [&Poly; 4], f: &Field) -> bool {
    let r: Vec<Poly> = e.iter().map(|p| reduce(p, m, f)).collect();
    match kind {
        SubgroupKind::Full => true,
        SubgroupKind::Hecke0 => r[2].is_zero(),
        SubgroupKind::Principal => {
            r[1].is_zero() && r[2].is_zero() && r[0] == r[3] && r[0].degree() == Some(0)
        }
    }
}

pub fn subgroup_member(g: &GMat, spec: &SubgroupSpec, f: &Field) -> bool {
    if !g.det(f).is_unit() {
        return false;
    }
    residues_in_group(spec.kind, &spec.modulus, g.entries(), f)
}

/// `([GL_2(R_v) : G], [GL_2(R_v)_(1,0) : G_(1,0)])`.
pub fn subgroup_index(spec: &SubgroupSpec) -> (u128, u128) {
    (spec.index, spec.stab_index)
}

/// Both indices by exhausting the finite quotient `GL_2(R_v/M)`; only for
/// small `q^deg M`.
pub fn subgroup_index_explicit(spec: &SubgroupSpec, f: &Field) -> Result<(u128, u128)> {
    let Some(m) = &spec.modulus else { return Ok((1, 1)) };
    let deg = m.degree().unwrap() as i64;
    let residues = polys_upto(f, deg - 1);
    if residues.len().pow(4) > 2_000_000 {
        return Err(Error::DegreeCapExceeded("quotient group too large to exhaust".into()));
    }
    let (mut image_all, mut image_g) = (0u128, 0u128);
    for a in &residues {
        for b in &residues {
            for c in &residues {
                for d in &residues {
                    let det = a.mul(d, f).sub(&b.mul(c, f), f).rem(m, f)?;
                    if det.degree() != Some(0) {
                        continue;
                    }
                    image_all += 1;
                    if residues_in_group(spec.kind, &spec.modulus, [a, b, c, d], f) {
                        image_g += 1;
                    }
                }
            }
        }
    }
    // The stabilizer of (1,0) is {[[1,b],[0,u]]}; its image has q^deg M (q-1) elements.
    let (mut stab_all, mut stab_g) = (0u128, 0u128);
    for b in &residues {
        for u in f.units() {
            stab_all += 1;
            let (one, zero, d) = (Poly::one(), Poly::zero(), Poly::constant(u));
            if residues_in_group(spec.kind, &spec.modulus, [&one, b, &zero, &d], f) {
                stab_g += 1;
            }
        }
    }
    Ok((image_all / image_g, stab_all / stab_g))
}

/// All polynomials of degree at most `k` (just zero when `k < 0`).
pub fn polys_upto(f: &Field, k: i64) -> Vec<Poly> {
    if k < 0 {
        vec![Poly::zero()]
    } else {
        enumerate_polys(f, k as u32, PolyFilter::All).collect()
    }
}

/// All polynomials of degree exactly `m`.
pub fn polys_of_degree(f: &Field, m: u32) -> impl Iterator<Item = Poly> + '_ {
    let q = f.q() as u128;
    (q.pow(m)..q.pow(m + 1)).map(move |n| Poly::decode(n, f))
}

/// The exact value behind an orbit point.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ExactPoint {
    Rational { x: Poly, y: Poly },
    Quad(QuadIrr),
    Infinity,
}

/// A Dirac mass of an orbit sum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrbitPoint {
    /// `None` for the boundary point `∞`.
    pub value: Option<Laurent>,
    pub exact: ExactPoint,
    pub weight: u64,
}

impl OrbitPoint {
    pub fn is_boundary(&self) -> bool {
        self.value.is_none()
    }

    fn rational(x: Poly, y: Poly, prec: usize, f: &Field) -> OrbitPoint {
        if y.is_zero() {
            return OrbitPoint { value: None, exact: ExactPoint::Rational { x, y }, weight: 1 };
        }
        let value = Laurent::from_fraction(&x, &y, prec, f).expect("nonzero denominator");
        OrbitPoint { value: Some(value), exact: ExactPoint::Rational { x, y }, weight: 1 }
    }

    fn quad(alpha: QuadIrr, prec: usize, f: &Field) -> OrbitPoint {
        OrbitPoint { value: Some(alpha.embed(prec, f)), exact: ExactPoint::Quad(alpha), weight: 1 }
    }
}

/// Observation window `{z : v(z) >= -w}` and the precision of emitted values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub w: i64,
    pub prec: usize,
}

impl Window {
    pub fn new(w: i64) -> Window {
        Window { w, prec: crate::laurent::DEFAULT_PRECISION }
    }

    /// Enough precision to place points into balls of depth `depth`.
    pub fn for_depth(w: i64, depth: i64) -> Window {
        Window { w, prec: (w + depth.max(0) + 4) as usize }
    }
}

/// Residue description of `G·(1,0)`: `gcd(x,y) = 1`, and for a level `M`,
/// `y ≡ 0` (both kinds) and `x ≡ u` for a constant unit `u` (principal).
///
/// A coprime pair is the first column of `[[x, b], [y, d]]` with
/// `xd - by = 1`, and every completion is `[[x, e b + t x], [y, e d + t y]]`.
/// For `hecke0` only `y` matters. For `principal`, `x ≡ u`, `y ≡ 0` give
/// `d ≡ e/u`, and `t ≡ -e b/x` makes `b ≡ 0`; taking `e = u²` then gives
/// `γ ≡ u·Id`. Conversely the first column of `γ ≡ u·Id` is `(u, 0) mod M`.
pub fn in_unit_vector_orbit(x: &Poly, y: &Poly, spec: &SubgroupSpec, f: &Field) -> bool {
    if x.is_zero() && y.is_zero() {
        return false;
    }
    if !poly_gcd(x, y, f).map(|(g, _, _)| g.is_one()).unwrap_or(false) {
        return false;
    }
    let Some(m) = &spec.modulus else { return true };
    if !reduce(y, &spec.modulus, f).is_zero() {
        return false;
    }
    match spec.kind {
        SubgroupKind::Principal => x.rem(m, f).unwrap().degree() == Some(0),
        _ => true,
    }
}

/// Membership in `G·(1,0)` by searching completions `[[x, e b0 + t x], [y, e d0 + t y]]`
/// over units `e` and `t mod M`.
pub fn in_unit_vector_orbit_by_search(x: &Poly, y: &Poly, spec: &SubgroupSpec, f: &Field) -> bool {
    let Ok((g, u, w)) = poly_gcd(x, y, f) else { return false };
    if !g.is_one() {
        return false;
    }
    // u x + w y = 1, so [[x, -w], [y, u]] has determinant 1.
    let (b0, d0) = (w.neg(f), u);
    let deg = spec.modulus.as_ref().map_or(0, |m| m.deg());
    for e in f.units() {
        for t in polys_upto(f, deg - 1) {
            let b = b0.scale(e, f).add(&t.mul(x, f), f);
            let d = d0.scale(e, f).add(&t.mul(y, f), f);
            let m = GMat { a: x.clone(), b, c: y.clone(), d };
            if subgroup_member(&m, spec, f) {
                return true;
            }
        }
    }
    false
}

/// Every `(x, y) ∈ G·(1,0)` with `deg y <= n` and `deg x <= deg y + w`, as
/// pairs (unit multiples are separate points of weight 1), plus the boundary
/// pairs `(u, 0)`. Slices by `(deg y, lc y)` run in parallel; output order is
/// deterministic.
pub fn enumerate_unimodular_pairs(spec: &SubgroupSpec, n: u32, window: &Window, f: &Field) -> Vec<OrbitPoint> {
    let mut out: Vec<OrbitPoint> = f
        .units()
        .filter(|u| in_unit_vector_orbit(&Poly::constant(*u), &Poly::zero(), spec, f))
        .map(|u| OrbitPoint::rational(Poly::constant(u), Poly::zero(), window.prec, f))
        .collect();
    let slices: Vec<(u32, Fe)> = (0..=n).flat_map(|m| f.units().map(move |u| (m, u))).collect();
    let parts: Vec<Vec<OrbitPoint>> = slices
        .par_iter()
        .map(|&(m, lc)| {
            let mut part = Vec::new();
            let xs = polys_upto(f, m as i64 + window.w);
            for ym in enumerate_polys(f, m, PolyFilter::Monic).filter(|p| p.deg() == m as i64) {
                let y = ym.scale(lc, f);
                for x in &xs {
                    if in_unit_vector_orbit(x, &y, spec, f) {
                        part.push(OrbitPoint::rational(x.clone(), y.clone(), window.prec, f));
                    }
                }
            }
            part
        })
        .collect();
    out.extend(parts.into_iter().flatten());
    out
}

/// Histogram of `x/y` over `G·(1,0)` at ball depth `depth`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairHistogram {
    pub depth: i64,
    pub window: i64,
    pub counts: BTreeMap<BallId, u128>,
    pub boundary: u128,
}

impl PairHistogram {
    pub fn total(&self) -> u128 {
        self.counts.values().sum()
    }
}

fn squarefree_divisors(y: &Poly, f: &Field) -> Vec<(Poly, bool)> {
    let primes: Vec<Poly> = poly_factor(y, f).expect("nonzero").into_iter().map(|(g, _)| g).collect();
    let mut out = vec![(Poly::one(), false)];
    for p in primes {
        let more: Vec<(Poly, bool)> = out.iter().map(|(d, odd)| (d.mul(&p, f), !odd)).collect();
        out.extend(more);
    }
    out
}

/// The polynomial whose coefficients from degree `shift` up are the given
/// ball digits divided out by `y`: the unique `H` of degree `<= deg y + w - shift`
/// such that `H·Y^shift / y` has those digits at exponents `-w .. depth-1`.
fn high_part_for_ball(ball: &BallId, y: &Poly, shift: usize, f: &Field) -> Poly {
    let center = ball.center();
    let prod = center.mul(&Laurent::from_poly(y), f);
    // x = center·y + (terms below Y^shift), and its part of degree >= shift is exact.
    let p = prod.head_exact(1).expect("exact").poly_part().expect("exact");
    let coeffs: Vec<Fe> = (shift..=p.degree().unwrap_or(0)).map(|i| p.coeff(i)).collect();
    Poly::from_coeffs(coeffs)
}

/// Fast histogram of `x/y` over `G·(1,0)` with `deg y <= n`: per `y`, counts
/// coprime `x` in each ball by Möbius inversion over squarefree divisors.
pub fn unimodular_ball_histogram(spec: &SubgroupSpec, n: u32, w: i64, depth: i64, f: &Field) -> PairHistogram {
    let boundary = f.units().filter(|u| in_unit_vector_orbit(&Poly::constant(*u), &Poly::zero(), spec, f)).count() as u128;
    let balls = BallId::all_at_depth(w, depth, f);
    let slices: Vec<(u32, Fe)> = (0..=n).flat_map(|m| f.units().map(move |u| (m, u))).collect();
    let parts: Vec<BTreeMap<BallId, u128>> = slices
        .par_iter()
        .map(|&(m, lc)| {
            let mut hist: BTreeMap<BallId, u128> = BTreeMap::new();
            for ym in enumerate_polys(f, m, PolyFilter::Monic).filter(|p| p.deg() == m as i64) {
                let y = ym.scale(lc, f);
                if let Some(md) = &spec.modulus {
                    if !md.divides(&y, f) {
                        continue;
                    }
                }
                count_for_denominator(&y, spec, w, depth, &balls, f, &mut hist);
            }
            hist
        })
        .collect();
    let mut counts = BTreeMap::new();
    for part in parts {
        for (b, c) in part {
            *counts.entry(b).or_insert(0) += c;
        }
    }
    PairHistogram { depth, window: w, counts, boundary }
}

fn count_for_denominator(
    y: &Poly,
    spec: &SubgroupSpec,
    w: i64,
    depth: i64,
    balls: &[BallId],
    f: &Field,
    hist: &mut BTreeMap<BallId, u128>,
) {
    let m = y.deg();
    let q = f.q() as u128;
    let shift = m - depth + 1;
    if shift < 0 {
        // Few numerators: place each directly.
        for x in polys_upto(f, m + w) {
            if in_unit_vector_orbit(&x, y, spec, f) {
                let z = Laurent::from_fraction(&x, y, (w + depth + 2) as usize, f).unwrap();
                *hist.entry(ls_ball(&z, depth, w).unwrap()).or_insert(0) += 1;
            }
        }
        return;
    }
    let shift = shift as usize;
    let principal = spec.kind == SubgroupKind::Principal;
    let level = spec.modulus.clone().unwrap_or_else(Poly::one);
    let divisors: Vec<(Poly, bool)> =
        squarefree_divisors(y, f).into_iter().filter(|(d, _)| !principal || d.coprime(&level, f)).collect();
    let unit_targets: Vec<Poly> = if principal { f.units().map(Poly::constant).collect() } else { vec![Poly::zero()] };
    let y_shift = Poly::monomial(Fe::ONE, shift);
    for ball in balls {
        let h = high_part_for_ball(ball, y, shift, f);
        let base = h.mul(&y_shift, f);
        let mut total: i128 = 0;
        for (d, odd) in &divisors {
            // Count low parts L (deg < shift) with d | base + L and, for the
            // principal kind, base + L ≡ u mod M.
            let mut cnt: u128 = 0;
            for u in &unit_targets {
                let (modulus, target) = if principal {
                    let md = d.mul(&level, f);
                    // x ≡ 0 mod d, x ≡ u mod M, by CRT.
                    let (_, s, _) = poly_gcd(d, &level, f).unwrap();
                    let r = d.mul(&s, f).mul(u, f).rem(&md, f).unwrap();
                    (md, r)
                } else {
                    (d.clone(), Poly::zero())
                };
                let md = modulus.deg() as usize;
                if md <= shift {
                    cnt += q.pow((shift - md) as u32);
                } else {
                    let low = target.sub(&base, f).rem(&modulus, f).unwrap();
                    if low.deg() < shift as i64 {
                        cnt += 1;
                    }
                }
            }
            if *odd {
                total -= cnt as i128;
            } else {
                total += cnt as i128;
            }
        }
        if total > 0 {
            *hist.entry(ball.clone()).or_insert(0) += total as u128;
        }
    }
}

/// Exact count of `G·(1,0)` pairs with `x/y ∈ O_v` and `deg y <= n` for the
/// full group: `(q-1)q + (q-1)²q²(q^(2n) - 1)/(q² - 1)`.
pub fn full_group_integral_count(q: u64, n: u32) -> u128 {
    let q = q as u128;
    (q - 1) * q + (q - 1) * (q - 1) * q * q * (q.pow(2 * n) - 1) / (q * q - 1)
}

/// Which complexity bounds a quadratic orbit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Complexity {
    /// `h(α) = 1/|α - α^σ|`.
    H,
    /// `h_β(α)`; points in the balls of depth `avoid_depth` around `β` and
    /// `β^σ` are left out (the target density is singular there).
    HBeta { beta: QuadIrr, avoid_depth: i64 },
}

/// Whether `α` lies outside the depth-`n` balls around `β` and `β^σ`.
pub fn avoids(alpha: &QuadIrr, beta: &QuadIrr, n: i64, f: &Field) -> bool {
    let near = |b: &QuadIrr| match crate::quad::qi_val_diff(alpha, b, f) {
        Ok(v) => v >= n,
        Err(_) => true,
    };
    !near(beta) && !near(&beta.conj(f))
}

fn window_val(alpha: &QuadIrr, f: &Field) -> i64 {
    crate::quad::qi_val_sub_rational(alpha, &Poly::zero(), &Poly::one(), f).expect("irrational")
}

/// The exact acceptance test shared by the enumerator and its oracle.
pub fn quad_point_admissible(alpha: &QuadIrr, complexity: &Complexity, s: QPow, w: i64, f: &Field) -> bool {
    if window_val(alpha, f) < -w {
        return false;
    }
    match complexity {
        Complexity::H => qi_h(alpha) <= s,
        Complexity::HBeta { beta, avoid_depth } => {
            avoids(alpha, beta, *avoid_depth, f) && qi_hbeta(alpha, beta, f).map(|h| h <= s).unwrap_or(false)
        }
    }
}

/// Bound on `h(α)` implied by the complexity bound for admissible points.
///
/// `h_β(α) = h(α) h(β) max(|α-β^σ||α^σ-β|, |α^σ-β^σ||α-β|)`. If
/// `|α - α^σ|` is below both `|α-β|` and `|α-β^σ|`, which are at least
/// `q^(1-n)` for avoiding points, the max equals `|α-β||α-β^σ|`; otherwise
/// `h(α) <= q^(n-1)` already.
pub fn h_bound_for(complexity: &Complexity, s: QPow) -> QPow {
    match complexity {
        Complexity::H => s,
        Complexity::HBeta { beta, avoid_depth } => {
            let n = *avoid_depth;
            QPow((n - 1).max(s.0 + 2 * (n - 1) - qi_h(beta).0))
        }
    }
}

/// Every `α ∈ G·α₀` with complexity `<= s`, `v(α) >= -w` (and avoiding `β`
/// for the weighted complexity), each once.
///
/// `γ = [[a,b],[c,d]]` gives `h(γα₀) = h(α₀)|n(d + cα₀)|`, so bottom rows are
/// filtered first. Rows are taken up to scalars (scalars lie in every
/// supported `G`) and modulo the stabilizer, which moves the ratio
/// `|d + cα₀| / |d + cα₀^σ|` by `q^(2ℓ)` with `ℓ = |v(tr g₀)|`; this caps
/// `deg c`. For a row, `d` lies within `q^E` of `-cα₀` or `-cα₀^σ`. The
/// matrices with a given bottom row map `α₀` to `e α* + t`.
pub fn enumerate_quad_orbit(
    spec: &SubgroupSpec,
    alpha0: &QuadIrr,
    complexity: &Complexity,
    s: QPow,
    window: &Window,
    f: &Field,
) -> Result<Vec<OrbitPoint>> {
    let set = quad_orbit_set(spec, alpha0, complexity, s, window.w, f)?;
    let mut pts: Vec<QuadIrr> = set.into_iter().collect();
    pts.sort();
    Ok(pts.into_iter().map(|a| OrbitPoint::quad(a, window.prec, f)).collect())
}

/// The point set of [`enumerate_quad_orbit`] without Laurent values.
pub fn quad_orbit_set(
    spec: &SubgroupSpec,
    alpha0: &QuadIrr,
    complexity: &Complexity,
    s: QPow,
    w: i64,
    f: &Field,
) -> Result<HashSet<QuadIrr>> {
    if let Complexity::HBeta { beta, .. } = complexity {
        if beta == alpha0 || *beta == alpha0.conj(f) {
            return Err(Error::CoincidentPoints);
        }
    }
    let auto = crate::quad::qi_automorph(alpha0, spec, f)?;
    let ell = -auto.trace_val;
    let e_h0 = qi_h(alpha0).0;
    let e_norm = h_bound_for(complexity, s).0 - e_h0;
    let cap = (e_norm + ell).div_euclid(2) + e_h0 + 1;
    let mut rows: Vec<Poly> = vec![Poly::zero()];
    if cap >= 0 {
        rows.extend(enumerate_polys(f, cap as u32, PolyFilter::Monic));
    }
    let residues: Vec<Poly> = match &spec.modulus {
        Some(m) => polys_upto(f, m.deg() - 1),
        None => vec![Poly::zero()],
    };
    let prec = (cap.max(0) + (-window_val(alpha0, f)).max(0) + 8) as usize;
    let embeds = [alpha0.embed(prec, f), alpha0.conj(f).embed(prec, f)];
    let parts: Vec<Result<HashSet<QuadIrr>>> = rows
        .par_iter()
        .map(|c| {
            let mut found = HashSet::new();
            for d in candidate_d(c, e_norm, e_h0, &embeds, f) {
                if !row_ok(c, &d, alpha0, e_norm, f) {
                    continue;
                }
                for alpha in fiber(c, &d, alpha0, spec, &residues, w, f) {
                    if quad_point_admissible(&alpha, complexity, s, w, f) {
                        found.insert(alpha);
                    }
                }
            }
            Ok(found)
        })
        .collect();
    let mut all = HashSet::new();
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

fn candidate_d(c: &Poly, e_norm: i64, e_h0: i64, embeds: &[Laurent; 2], f: &Field) -> Vec<Poly> {
    if c.is_zero() {
        return vec![Poly::one()];
    }
    let e = e_norm - (c.deg() - e_h0);
    let mut out = HashSet::new();
    for z in embeds {
        let center = Laurent::from_poly(c).mul(z, f).neg(f).poly_part().expect("precision for the row center");
        let high: Vec<Fe> = center.coeffs().iter().enumerate().map(|(i, &x)| if (i as i64) <= e { Fe::ZERO } else { x }).collect();
        let high = Poly::from_coeffs(high);
        for p in polys_upto(f, e) {
            out.insert(high.add(&p, f));
        }
    }
    let mut v: Vec<Poly> = out.into_iter().collect();
    v.sort();
    v
}

fn row_ok(c: &Poly, d: &Poly, alpha0: &QuadIrr, e_norm: i64, f: &Field) -> bool {
    if d.is_zero() && c.is_zero() {
        return false;
    }
    if !c.is_zero() && !c.coprime(d, f) {
        return false;
    }
    norm_form_abs(d, &c.neg(f), alpha0, f).map(|n| n.0 <= e_norm).unwrap_or(false)
}

fn fiber(c: &Poly, d: &Poly, alpha0: &QuadIrr, spec: &SubgroupSpec, residues: &[Poly], w: i64, f: &Field) -> Vec<QuadIrr> {
    let (a0, b0) = if c.is_zero() {
        (Poly::constant(f.inv_nz(d.lc())), Poly::zero())
    } else {
        let (_, u, v) = poly_gcd(d, c, f).expect("nonzero");
        (u, v.neg(f))
    };
    let base = GMat { a: a0.clone(), b: b0.clone(), c: c.clone(), d: d.clone() };
    let star = act_on_quad(&base, alpha0, f);
    let mut out = Vec::new();
    for e in f.units() {
        let valid: Vec<&Poly> = residues
            .iter()
            .filter(|t| {
                let g = GMat {
                    a: a0.scale(e, f).add(&t.mul(c, f), f),
                    b: b0.scale(e, f).add(&t.mul(d, f), f),
                    c: c.clone(),
                    d: d.clone(),
                };
                subgroup_member(&g, spec, f)
            })
            .collect();
        if valid.is_empty() {
            continue;
        }
        let scaled = star.scale(e, f);
        let t0 = scaled.poly_part(f).neg(f);
        for p in polys_upto(f, w) {
            let t = t0.add(&p, f);
            let r = reduce(&t, &spec.modulus, f);
            if valid.iter().any(|v| **v == r) {
                out.push(scaled.shift(&t, f));
            }
        }
    }
    out
}

/// Oracle for [`quad_orbit_set`]: breadth-first search over the
/// `GL_2(R_v)`-orbit of `α₀` through the generators `[[1,P],[0,1]]`
/// (`deg P <= gen_deg`), `[[0,1],[1,0]]` and `diag(u,1)`, inside a region
/// enlarged by `slack`, keeping the points whose matrix can be corrected into
/// `G` by the stabilizer.
pub fn quad_orbit_bfs(
    spec: &SubgroupSpec,
    alpha0: &QuadIrr,
    complexity: &Complexity,
    s: QPow,
    w: i64,
    gen_deg: u32,
    slack: i64,
    f: &Field,
) -> Result<HashSet<QuadIrr>> {
    let auto = crate::quad::qi_automorph(alpha0, spec, f)?;
    let g = GMat::from_array(qi_primitive_automorph(alpha0, f)?, f)?;
    let powers: Vec<GMat> = (0..auto.power).map(|j| g.pow(j, f)).collect();
    let hmax = h_bound_for(complexity, s).0 + slack;
    let mut gens: Vec<GMat> = enumerate_polys(f, gen_deg, PolyFilter::All).filter(|p| !p.is_zero()).map(GMat::translation).collect();
    gens.push(GMat::swap());
    gens.extend(f.units().filter(|u| *u != Fe::ONE).map(|u| GMat::diag(u, Fe::ONE)));
    let mut seen: HashSet<QuadIrr> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(alpha0.clone());
    queue.push_back((alpha0.clone(), GMat::identity()));
    let mut out = HashSet::new();
    while let Some((alpha, gamma)) = queue.pop_front() {
        if powers.iter().any(|p| subgroup_member(&gamma.mul(p, f), spec, f)) && quad_point_admissible(&alpha, complexity, s, w, f) {
            out.insert(alpha.clone());
        }
        for gen in &gens {
            let next = act_on_quad(gen, &alpha, f);
            if seen.contains(&next) || qi_h(&next).0 > hmax || window_val(&next, f) < -(w + slack) {
                continue;
            }
            seen.insert(next.clone());
            queue.push_back((next, gen.mul(&gamma, f)));
        }
    }
    Ok(out)
}

/// Every pair `(x, y)` with `y ∈ I`, `gcd(x, y) = 1`, `|n(x - yβ)| <= s`,
/// `deg x <= deg y + w`, and `x/y` outside the depth-`avoid_depth` balls
/// around `β, β^σ`; plus the boundary pairs `(u, 0)`.
///
/// For avoiding points `|x/y - β|, |x/y - β^σ| >= q^(1-n)`, so
/// `|n(x - yβ)| = |y|²|x/y - β||x/y - β^σ| <= s` gives
/// `deg y <= (log_q s + 2(n-1))/2`.
pub fn enumerate_normform_pairs(
    ideal: &crate::poly::IdealDesc,
    beta: &QuadIrr,
    s: QPow,
    avoid_depth: i64,
    window: &Window,
    f: &Field,
) -> Result<Vec<OrbitPoint>> {
    let pairs = normform_pair_list(ideal, beta, s, avoid_depth, window.w, f)?;
    Ok(pairs.into_iter().map(|(x, y)| OrbitPoint::rational(x, y, window.prec, f)).collect())
}

/// Pair list behind [`enumerate_normform_pairs`], boundary pairs first.
pub fn normform_pair_list(
    ideal: &crate::poly::IdealDesc,
    beta: &QuadIrr,
    s: QPow,
    avoid_depth: i64,
    w: i64,
    f: &Field,
) -> Result<Vec<(Poly, Poly)>> {
    let mut out: Vec<(Poly, Poly)> = Vec::new();
    if s.0 >= 0 {
        out.extend(f.units().map(|u| (Poly::constant(u), Poly::zero())));
    }
    let ymax = (s.0 + 2 * (avoid_depth - 1)).div_euclid(2);
    let m = &ideal.generator;
    let kmax = ymax - m.deg();
    if kmax < 0 {
        return Ok(out);
    }
    let ks: Vec<Poly> = enumerate_polys(f, kmax as u32, PolyFilter::All).filter(|k| !k.is_zero()).collect();
    let parts: Vec<Vec<(Poly, Poly)>> = ks
        .par_iter()
        .map(|k| {
            let y = m.mul(k, f);
            polys_upto(f, y.deg() + w)
                .into_iter()
                .filter(|x| normform_pair_admissible(x, &y, beta, s, avoid_depth, f))
                .map(|x| (x, y.clone()))
                .collect()
        })
        .collect();
    out.extend(parts.into_iter().flatten());
    Ok(out)
}

/// The exact filter shared by the norm-form enumerator and its oracle
/// (membership of `y` in the ideal and the window are checked by callers).
pub fn normform_pair_admissible(x: &Poly, y: &Poly, beta: &QuadIrr, s: QPow, avoid_depth: i64, f: &Field) -> bool {
    if y.is_zero() || !x.coprime(y, f) {
        return false;
    }
    let near = |b: &QuadIrr| crate::quad::qi_val_sub_rational(b, x, y, f).map(|v| v >= avoid_depth).unwrap_or(true);
    if near(beta) || near(&beta.conj(f)) {
        return false;
    }
    norm_form_abs(x, y, beta, f).map(|n| n <= s).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::IdealDesc;
    use crate::quad::qi_make;

    fn p(f: &Field, c: &[i64]) -> Poly {
        Poly::from_ints(f, c)
    }

    #[test]
    fn homography_examples() {
        let f = Field::prime(3).unwrap();
        let y = P1Point::Finite(Laurent::from_poly(&Poly::y()));
        assert_eq!(act_homography(&GMat::identity(), &y, 8, &f), y);
        let t = GMat::translation(p(&f, &[1, 1]));
        assert_eq!(act_homography(&t, &y, 8, &f), P1Point::Finite(Laurent::from_poly(&p(&f, &[1, 2]))));
        assert_eq!(act_homography(&GMat::swap(), &y, 8, &f), P1Point::Finite(Laurent::monomial(Fe::ONE, 1)));
        assert_eq!(act_homography(&GMat::swap(), &P1Point::Finite(Laurent::zero()), 8, &f), P1Point::Infinity);
        assert_eq!(act_homography(&t, &P1Point::Infinity, 8, &f), P1Point::Infinity);
    }

    #[test]
    fn membership_examples() {
        let f = Field::prime(3).unwrap();
        let m = Poly::y();
        let h = SubgroupSpec::hecke0(&m, &f).unwrap();
        let pr = SubgroupSpec::principal(&m, &f).unwrap();
        for g in [&h, &pr, &SubgroupSpec::full()] {
            assert!(subgroup_member(&GMat::identity(), g, &f));
        }
        let low = GMat::new(Poly::one(), Poly::zero(), m.clone(), Poly::one(), &f).unwrap();
        assert!(subgroup_member(&low, &h, &f));
        let bad = GMat::new(Poly::one(), Poly::zero(), Poly::one(), Poly::one(), &f).unwrap();
        assert!(!subgroup_member(&bad, &h, &f));
        assert!(subgroup_member(&GMat::diag(f.from_int(2), f.from_int(2)), &pr, &f));
        assert!(!subgroup_member(&GMat::diag(Fe::ONE, f.from_int(2)), &pr, &f));
        assert!(GMat::new(Poly::y(), Poly::zero(), Poly::zero(), Poly::one(), &f).is_err());
    }

    #[test]
    fn index_examples() {
        let f2 = Field::prime(2).unwrap();
        let h = SubgroupSpec::hecke0(&Poly::y(), &f2).unwrap();
        assert_eq!(subgroup_index(&h), (3, 1));
        assert_eq!(subgroup_index_explicit(&h, &f2).unwrap(), (3, 1));
        assert_eq!(subgroup_index(&SubgroupSpec::full()), (1, 1));
        for q in [2, 3] {
            let f = Field::prime(q).unwrap();
            for m in [p(&f, &[0, 1]), p(&f, &[0, 0, 1]), p(&f, &[1, 0, 1]), p(&f, &[0, 1, 1])] {
                for spec in [SubgroupSpec::principal(&m, &f).unwrap(), SubgroupSpec::hecke0(&m, &f).unwrap()] {
                    assert_eq!(subgroup_index(&spec), subgroup_index_explicit(&spec, &f).unwrap(), "{spec:?}");
                }
            }
        }
        // M | M' implies index(principal M) | index(principal M').
        let f = Field::prime(3).unwrap();
        let a = SubgroupSpec::principal(&p(&f, &[0, 1]), &f).unwrap();
        let b = SubgroupSpec::principal(&p(&f, &[0, 1, 1]), &f).unwrap();
        assert_eq!(b.index % a.index, 0);
    }

    #[test]
    fn orbit_residue_test_matches_completion_search() {
        for q in [2, 3] {
            let f = Field::prime(q).unwrap();
            let specs: Vec<SubgroupSpec> = [p(&f, &[0, 1]), p(&f, &[1, 1]), p(&f, &[0, 0, 1]), p(&f, &[1, 0, 1])]
                .iter()
                .flat_map(|m| [SubgroupSpec::principal(m, &f).unwrap(), SubgroupSpec::hecke0(m, &f).unwrap()])
                .chain([SubgroupSpec::full()])
                .collect();
            let polys = polys_upto(&f, 3);
            for spec in &specs {
                for x in &polys {
                    for y in &polys {
                        assert_eq!(
                            in_unit_vector_orbit(x, y, spec, &f),
                            in_unit_vector_orbit_by_search(x, y, spec, &f),
                            "{x:?} {y:?} {spec:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn unimodular_slice_example() {
        let f = Field::prime(2).unwrap();
        let pts = enumerate_unimodular_pairs(&SubgroupSpec::full(), 1, &Window::new(0), &f);
        let deg1 = pts.iter().filter(|pt| matches!(&pt.exact, ExactPoint::Rational { y, .. } if y.deg() == 1)).count();
        assert_eq!(deg1, 4);
        assert_eq!(pts.iter().filter(|pt| pt.is_boundary()).count(), 1);
    }

    #[test]
    fn fast_histogram_matches_streaming_enumerator() {
        for (q, n) in [(2u32, 5u32), (3, 3)] {
            let f = Field::prime(q).unwrap();
            let m = p(&f, &[0, 1]);
            let specs = [SubgroupSpec::full(), SubgroupSpec::hecke0(&m, &f).unwrap(), SubgroupSpec::principal(&m, &f).unwrap()];
            for spec in &specs {
                for (w, depth) in [(0, 1), (1, 2), (0, 3)] {
                    let fast = unimodular_ball_histogram(spec, n, w, depth, &f);
                    let pts = enumerate_unimodular_pairs(spec, n, &Window::for_depth(w, depth), &f);
                    let mut slow: BTreeMap<BallId, u128> = BTreeMap::new();
                    let mut boundary = 0;
                    for pt in &pts {
                        match &pt.value {
                            None => boundary += 1,
                            Some(z) => *slow.entry(ls_ball(z, depth, w).unwrap()).or_insert(0) += 1,
                        }
                    }
                    assert_eq!(fast.counts, slow, "q={q} {spec:?} w={w} depth={depth}");
                    assert_eq!(fast.boundary, boundary);
                }
            }
            let fast = unimodular_ball_histogram(&SubgroupSpec::full(), n, 0, 1, &f);
            assert_eq!(fast.total(), full_group_integral_count(q as u64, n));
        }
    }

    fn sqrt_y2p1(f: &Field) -> QuadIrr {
        qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &p(f, &[1, 0, 1]), f).unwrap()
    }

    #[test]
    fn quad_orbit_basic_contracts() {
        let f = Field::prime(3).unwrap();
        let a = sqrt_y2p1(&f);
        let set = quad_orbit_set(&SubgroupSpec::full(), &a, &Complexity::H, QPow(3), 1, &f).unwrap();
        assert!(set.contains(&a));
        let pts = enumerate_quad_orbit(&SubgroupSpec::full(), &a, &Complexity::H, QPow(3), &Window::new(1), &f).unwrap();
        assert_eq!(pts.len(), set.len());
        for pt in &pts {
            let ExactPoint::Quad(x) = &pt.exact else { panic!() };
            assert!(qi_h(x).0 <= 3);
        }
    }

    #[test]
    fn quad_orbit_matches_bfs_full_group() {
        let f = Field::prime(3).unwrap();
        let a = sqrt_y2p1(&f);
        for e in 0..=3 {
            let set = quad_orbit_set(&SubgroupSpec::full(), &a, &Complexity::H, QPow(e), 1, &f).unwrap();
            let bfs = quad_orbit_bfs(&SubgroupSpec::full(), &a, &Complexity::H, QPow(e), 1, 2, 2, &f).unwrap();
            assert_eq!(set, bfs, "s = q^{e}");
        }
    }

    #[test]
    fn normform_matches_scan() {
        let f = Field::prime(3).unwrap();
        let b = sqrt_y2p1(&f);
        for m in [Poly::one(), Poly::y()] {
            let ideal = IdealDesc::new(&m, &f).unwrap();
            let got: HashSet<(Poly, Poly)> = normform_pair_list(&ideal, &b, QPow(2), 1, 1, &f).unwrap().into_iter().collect();
            let mut want = HashSet::new();
            for u in f.units() {
                want.insert((Poly::constant(u), Poly::zero()));
            }
            for y in polys_upto(&f, 4) {
                if y.is_zero() || !m.divides(&y, &f) {
                    continue;
                }
                for x in polys_upto(&f, y.deg() + 1) {
                    if normform_pair_admissible(&x, &y, &b, QPow(2), 1, &f) {
                        want.insert((x, y.clone()));
                    }
                }
            }
            assert_eq!(got, want);
            for (_, y) in &got {
                assert!(y.is_zero() || m.divides(y, &f));
            }
        }
    }
}
