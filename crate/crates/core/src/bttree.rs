//! The Bruhat-Tits tree of `PGL_2(K_v)`, with vertices realized as balls.
//!
//! The vertex `(c, n)` is the ball `{z : v(z - c) >= n}`; its parent is the
//! ball of depth `n - 1` and its `q` children refine one more digit. The
//! boundary is `P^1(K_v)`, with `∞` reached by decreasing the level.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::gf::{Fe, Field};
use crate::laurent::{ls_ball, BallId, Laurent};
use crate::modgroup::{act_homography, polys_upto, GMat, P1Point};
use crate::poly::{enumerate_polys, inverse_mod, Poly, PolyFilter};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TreeVertex {
    center: Laurent,
    level: i64,
}

impl Ord for TreeVertex {
    fn cmp(&self, other: &Self) -> Ordering {
        let (va, ca) = self.center.raw();
        let (vb, cb) = other.center.raw();
        self.level.cmp(&other.level).then(va.cmp(&vb)).then(ca.cmp(cb))
    }
}

impl PartialOrd for TreeVertex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl TreeVertex {
    /// The ball of depth `level` around `center`; needs `center` known to `π^level`.
    pub fn new(center: &Laurent, level: i64) -> Result<TreeVertex> {
        Ok(TreeVertex { center: center.head_exact(level)?, level })
    }

    /// `*_v`, the ball `O_v`.
    pub fn base() -> TreeVertex {
        TreeVertex { center: Laurent::zero(), level: 0 }
    }

    pub fn center(&self) -> &Laurent {
        &self.center
    }

    pub fn level(&self) -> i64 {
        self.level
    }

    pub fn parent(&self) -> TreeVertex {
        let l = self.level - 1;
        TreeVertex { center: self.center.head_exact(l).expect("exact center"), level: l }
    }

    pub fn children(&self, f: &Field) -> Vec<TreeVertex> {
        f.elements()
            .map(|a| TreeVertex { center: self.center.add(&Laurent::monomial(a, self.level), f), level: self.level + 1 })
            .collect()
    }

    /// Parent first, then the children in digit order.
    pub fn neighbors(&self, f: &Field) -> Vec<TreeVertex> {
        let mut v = vec![self.parent()];
        v.extend(self.children(f));
        v
    }

    /// Ancestor at a level `<= self.level`.
    pub fn ancestor(&self, level: i64) -> TreeVertex {
        assert!(level <= self.level);
        TreeVertex { center: self.center.head_exact(level).expect("exact center"), level }
    }

    /// The ball of `O_v`-digits below `window`, when the vertex lies inside it.
    pub fn ball(&self, window: i64) -> Result<BallId> {
        ls_ball(&self.center, self.level, window)
    }

    pub fn format(&self, f: &Field) -> String {
        format!("({}, {})", self.center.format(f), self.level)
    }
}

/// `v(a - b)`, or `None` when the two values are exactly equal.
fn val_diff(a: &Laurent, b: &Laurent, f: &Field) -> Result<Option<i64>> {
    let d = a.sub(b, f);
    if !d.is_zero() {
        Ok(Some(d.val()?))
    } else if d.is_exact() {
        Ok(None)
    } else {
        Err(Error::Precision("difference vanishes to working precision".into()))
    }
}

/// `min(v(a - b), cap)`.
fn val_diff_capped(a: &Laurent, b: &Laurent, cap: i64, f: &Field) -> Result<i64> {
    let d = a.sub(b, f);
    if !d.is_zero() {
        return Ok(d.val()?.min(cap));
    }
    match d.abs_prec() {
        Some(p) if p < cap => Err(Error::Precision(format!("need {cap}, have {p}"))),
        _ => Ok(cap),
    }
}

pub fn vertex_dist(u: &TreeVertex, w: &TreeVertex, f: &Field) -> i64 {
    let k = val_diff_capped(&u.center, &w.center, u.level.min(w.level), f).expect("exact centers");
    u.level + w.level - 2 * k
}

/// `β_∞(x, *_v)`.
pub fn busemann_inf(x: &TreeVertex) -> i64 {
    x.level
}

/// `β_ξ(x, x_ξ)` where `x_ξ` is `*_v` for `ξ = ∞` and `(ξ, 0)` otherwise.
pub fn busemann(xi: &P1Point, x: &TreeVertex, f: &Field) -> Result<i64> {
    match xi {
        P1Point::Infinity => Ok(x.level),
        P1Point::Finite(z) => {
            let k = val_diff_capped(&x.center, z, x.level, f)?;
            Ok(x.level - 2 * k)
        }
    }
}

/// The neighbor of `x` one step closer to the boundary point `xi`.
pub fn step_toward(x: &TreeVertex, xi: &P1Point, f: &Field) -> Result<TreeVertex> {
    match xi {
        P1Point::Infinity => Ok(x.parent()),
        P1Point::Finite(z) => {
            if val_diff_capped(&x.center, z, x.level, f)? >= x.level {
                TreeVertex::new(z, x.level + 1)
            } else {
                Ok(x.parent())
            }
        }
    }
}

/// Vertices of the geodesic segment from `u` to `w`, both included.
pub fn vertex_path(u: &TreeVertex, w: &TreeVertex, f: &Field) -> Vec<TreeVertex> {
    let k = val_diff_capped(&u.center, &w.center, u.level.min(w.level), f).expect("exact centers");
    let mut path: Vec<TreeVertex> = (k..=u.level).rev().map(|l| u.ancestor(l)).collect();
    path.extend((k + 1..=w.level).map(|l| w.ancestor(l)));
    path
}

fn end_eq(a: &P1Point, b: &P1Point, f: &Field) -> Result<bool> {
    match (a, b) {
        (P1Point::Infinity, P1Point::Infinity) => Ok(true),
        (P1Point::Finite(x), P1Point::Finite(y)) => Ok(val_diff(x, y, f)?.is_none()),
        _ => Ok(false),
    }
}

/// The vertex where the three geodesics joining three distinct boundary points meet.
pub fn median(a: &P1Point, b: &P1Point, c: &P1Point, f: &Field) -> Result<TreeVertex> {
    let finite: Vec<&Laurent> = [a, b, c]
        .into_iter()
        .filter_map(|p| match p {
            P1Point::Finite(z) => Some(z),
            P1Point::Infinity => None,
        })
        .collect();
    let vd = |x: &Laurent, y: &Laurent| val_diff(x, y, f)?.ok_or(Error::CoincidentPoints);
    match finite.len() {
        2 => TreeVertex::new(finite[0], vd(finite[0], finite[1])?),
        3 => {
            let (v01, v02, v12) = (vd(finite[0], finite[1])?, vd(finite[0], finite[2])?, vd(finite[1], finite[2])?);
            let l = v01.max(v02).max(v12);
            let z = if v01 == l || v02 == l { finite[0] } else { finite[1] };
            TreeVertex::new(z, l)
        }
        _ => Err(Error::CoincidentPoints),
    }
}

/// A boundary point different from both arguments.
fn third_point(a: &P1Point, b: &P1Point, f: &Field) -> Result<P1Point> {
    for c in [P1Point::Infinity, P1Point::Finite(Laurent::zero()), P1Point::Finite(Laurent::one())] {
        if !end_eq(&c, a, f)? && !end_eq(&c, b, f)? {
            return Ok(c);
        }
    }
    unreachable!("three candidates, two exclusions")
}

/// `γ·x`. Computed as the median of the images of `c`, `c + π^n` and `∞`,
/// whose mutual valuations are exact: `v(γz - γw) = v(z - w) - v(cz+d) - v(cw+d)`.
pub fn act_on_vertex(g: &GMat, x: &TreeVertex, f: &Field) -> Result<TreeVertex> {
    let l = Laurent::from_poly;
    let pts = [x.center.clone(), x.center.add(&Laurent::monomial(Fe::ONE, x.level), f)];
    let dens: Vec<Laurent> = pts.iter().map(|z| l(&g.c).mul(z, f).add(&l(&g.d), f)).collect();
    let nums: Vec<Laurent> = pts.iter().map(|z| l(&g.a).mul(z, f).add(&l(&g.b), f)).collect();
    // image of pts[i] known to absolute precision `abs`
    let image = |i: usize, abs: i64| -> Result<TreeVertex> {
        if nums[i].is_zero() {
            return TreeVertex::new(&Laurent::zero(), abs);
        }
        let v = nums[i].val()? - dens[i].val()?;
        let prec = (abs - v).max(0) as usize + 2;
        TreeVertex::new(&nums[i].div(&dens[i], prec, f)?, abs)
    };
    if g.c.is_zero() {
        let lvl = x.level - 2 * dens[0].val()?;
        return image(0, lvl);
    }
    let vc = -g.c.deg();
    match (dens[0].is_zero(), dens[1].is_zero()) {
        (true, _) => image(1, -vc - dens[1].val()?),
        (_, true) => image(0, -vc - dens[0].val()?),
        _ => {
            let (d0, d1) = (dens[0].val()?, dens[1].val()?);
            let (v01, v02, v12) = (x.level - d0 - d1, -vc - d0, -vc - d1);
            let lvl = v01.max(v02).max(v12);
            if v01 == lvl || v02 == lvl {
                image(0, lvl)
            } else {
                image(1, lvl)
            }
        }
    }
}

/// A horoball `{x : β_ξ(x) <= height}` (normalized as in [`busemann`]) or a
/// geodesic line between two distinct boundary points.
#[derive(Clone, Debug)]
pub enum Subtree {
    Horoball { center: P1Point, height: i64 },
    Geodesic { a: P1Point, b: P1Point },
}

impl Subtree {
    /// `H_∞`, the vertices of nonpositive level.
    pub fn horoball_inf() -> Subtree {
        Subtree::Horoball { center: P1Point::Infinity, height: 0 }
    }

    pub fn geodesic(a: P1Point, b: P1Point, f: &Field) -> Result<Subtree> {
        if end_eq(&a, &b, f)? {
            return Err(Error::CoincidentPoints);
        }
        Ok(Subtree::Geodesic { a, b })
    }

    pub fn contains(&self, x: &TreeVertex, f: &Field) -> Result<bool> {
        Ok(dist_to_subtree(x, self, f)? == 0)
    }

    /// Image under `γ`; endpoints are moved with `prec` coefficients.
    pub fn transform(&self, g: &GMat, prec: usize, f: &Field) -> Result<Subtree> {
        match self {
            Subtree::Geodesic { a, b } => {
                Subtree::geodesic(act_homography(g, a, prec, f), act_homography(g, b, prec, f), f)
            }
            Subtree::Horoball { center, height } => {
                let tip = match center {
                    P1Point::Infinity => TreeVertex::base().ancestor(*height),
                    P1Point::Finite(z) => TreeVertex::new(z, -height)?,
                };
                let c2 = act_homography(g, center, prec, f);
                let h2 = busemann(&c2, &act_on_vertex(g, &tip, f)?, f)?;
                Ok(Subtree::Horoball { center: c2, height: h2 })
            }
        }
    }
}

pub fn dist_to_subtree(x: &TreeVertex, s: &Subtree, f: &Field) -> Result<i64> {
    match s {
        Subtree::Horoball { center, height } => Ok((busemann(center, x, f)? - height).max(0)),
        Subtree::Geodesic { a, b } => {
            // β_a + β_b is constant on the line and grows by 2 per step away from it
            let m = median(a, b, &third_point(a, b, f)?, f)?;
            let on = busemann(a, &m, f)? + busemann(b, &m, f)?;
            Ok((busemann(a, x, f)? + busemann(b, x, f)? - on) / 2)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommonPerp {
    pub length: i64,
    pub start: TreeVertex,
    pub end: TreeVertex,
    pub path: Vec<TreeVertex>,
}

impl CommonPerp {
    fn from_path(path: Vec<TreeVertex>) -> CommonPerp {
        CommonPerp {
            length: path.len() as i64 - 1,
            start: path[0].clone(),
            end: path[path.len() - 1].clone(),
            path,
        }
    }

    fn reversed(mut self) -> CommonPerp {
        self.path.reverse();
        CommonPerp::from_path(self.path)
    }

    pub fn transform(&self, g: &GMat, f: &Field) -> Result<CommonPerp> {
        let path = self.path.iter().map(|x| act_on_vertex(g, x, f)).collect::<Result<Vec<_>>>()?;
        Ok(CommonPerp::from_path(path))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PerpResult {
    Perp(CommonPerp),
    Intersecting,
}

impl PerpResult {
    pub fn length(&self) -> i64 {
        match self {
            PerpResult::Perp(p) => p.length,
            PerpResult::Intersecting => 0,
        }
    }
}

fn walk(mut x: TreeVertex, toward: &P1Point, steps: i64, f: &Field) -> Result<Vec<TreeVertex>> {
    let mut out = vec![x.clone()];
    for _ in 0..steps {
        x = step_toward(&x, toward, f)?;
        out.push(x.clone());
    }
    Ok(out)
}

/// Common perpendicular from `dm` to `dp`, oriented from `dm`.
pub fn common_perp(dm: &Subtree, dp: &Subtree, f: &Field) -> Result<PerpResult> {
    use Subtree::*;
    match (dm, dp) {
        (Horoball { center: c1, height: h1 }, Horoball { center: c2, height: h2 }) => {
            if end_eq(c1, c2, f)? {
                return Ok(PerpResult::Intersecting);
            }
            let m = median(c1, c2, &third_point(c1, c2, f)?, f)?;
            let (b1, b2) = (busemann(c1, &m, f)?, busemann(c2, &m, f)?);
            let len = b1 + b2 - h1 - h2;
            if len <= 0 {
                return Ok(PerpResult::Intersecting);
            }
            // move along the line to the point with β_1 = h1
            let start = if b1 >= *h1 {
                walk(m, c1, b1 - h1, f)?.pop().unwrap()
            } else {
                walk(m, c2, h1 - b1, f)?.pop().unwrap()
            };
            Ok(PerpResult::Perp(CommonPerp::from_path(walk(start, c2, len, f)?)))
        }
        (Geodesic { a, b }, Horoball { center, height }) => {
            if end_eq(a, center, f)? || end_eq(b, center, f)? {
                return Ok(PerpResult::Intersecting);
            }
            let p = median(a, b, center, f)?;
            let len = busemann(center, &p, f)? - height;
            if len <= 0 {
                return Ok(PerpResult::Intersecting);
            }
            Ok(PerpResult::Perp(CommonPerp::from_path(walk(p, center, len, f)?)))
        }
        (Horoball { .. }, Geodesic { .. }) => Ok(match common_perp(dp, dm, f)? {
            PerpResult::Perp(p) => PerpResult::Perp(p.reversed()),
            r => r,
        }),
        (Geodesic { a, b }, Geodesic { a: c, b: d }) => {
            for (x, y) in [(a, c), (a, d), (b, c), (b, d)] {
                if end_eq(x, y, f)? {
                    return Ok(PerpResult::Intersecting);
                }
            }
            let p1 = median(a, b, c, f)?;
            if p1 != median(a, b, d, f)? {
                return Ok(PerpResult::Intersecting);
            }
            let p2 = median(c, d, a, f)?;
            if p1 == p2 {
                return Ok(PerpResult::Intersecting);
            }
            Ok(PerpResult::Perp(CommonPerp::from_path(vertex_path(&p1, &p2, f))))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Rays leaving `D⁻` along the perpendicular.
    Exit,
    /// Rays entering `D⁺`, read backwards from the end of the perpendicular.
    Entry,
}

/// Rays leaving a subtree at `base` whose first edges follow `first_edges`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CylinderId {
    pub base: TreeVertex,
    pub first_edges: Vec<TreeVertex>,
}

impl CylinderId {
    pub fn depth(&self) -> usize {
        self.first_edges.len()
    }
}

/// Mass of a depth-`k` cylinder relative to its first edge: `q^-(k-1)`.
pub fn cylinder_mass(k: usize, q: u64) -> Ratio<i128> {
    Ratio::new(1, (q as i128).pow(k as u32 - 1))
}

pub fn exit_cylinder(p: &CommonPerp, side: Side, k: usize, q: u64) -> Result<(CylinderId, Ratio<i128>)> {
    if k == 0 || k as i64 > p.length {
        return Err(Error::CylinderTooDeep { depth: k, length: p.length });
    }
    let n = p.path.len();
    let cyl = match side {
        Side::Exit => CylinderId { base: p.path[0].clone(), first_edges: p.path[1..=k].to_vec() },
        Side::Entry => CylinderId {
            base: p.path[n - 1].clone(),
            first_edges: p.path[n - 1 - k..n - 1].iter().rev().cloned().collect(),
        },
    };
    Ok((cyl, cylinder_mass(k, q)))
}

/// Boundary ball of the rays in a cylinder that leaves `H_∞` downward.
pub fn cylinder_ball(cyl: &CylinderId, window: i64) -> Result<BallId> {
    cyl.first_edges.last().unwrap_or(&cyl.base).ball(window)
}

/// A class `γ Γ_{H_∞}` with `γ∞ = a/c`, `c` monic of positive degree, in the
/// normal form `γ = [[a, b], [c, d]]`, `det γ = 1`, `deg d < deg c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HoroClass {
    pub a: Poly,
    pub b: Poly,
    pub c: Poly,
    pub d: Poly,
}

impl HoroClass {
    pub fn from_fraction(a: &Poly, c: &Poly, f: &Field) -> Result<HoroClass> {
        if !c.is_monic() || c.deg() < 1 {
            return Err(Error::Config("denominator must be monic of positive degree".into()));
        }
        let d = inverse_mod(a, c, f).ok_or(Error::NotInvertible)?;
        let b = a.mul(&d, f).sub(&Poly::one(), f).exact_div(c, f);
        Ok(HoroClass { a: a.clone(), b, c: c.clone(), d })
    }

    pub fn gamma(&self) -> GMat {
        GMat { a: self.a.clone(), b: self.b.clone(), c: self.c.clone(), d: self.d.clone() }
    }

    /// `d(H_∞, γ H_∞) = 2 deg c`.
    pub fn length(&self) -> i64 {
        2 * self.c.deg()
    }

    /// Ball of the exit cylinder of depth `k` at `H_∞`: the digits of `a/c`.
    pub fn exit_ball(&self, window: i64, k: i64, f: &Field) -> Result<BallId> {
        let z = Laurent::from_fraction(&self.a, &self.c, (k + window + self.c.deg() + 2) as usize, f)?;
        ls_ball(&z, k, window)
    }

    /// Ball of the entry cylinder of depth `k`, pulled back by `γ⁻¹`: the digits of `-d/c`.
    pub fn entry_ball(&self, k: i64, f: &Field) -> Result<BallId> {
        let z = Laurent::from_fraction(&self.d.neg(f), &self.c, (k + self.c.deg() + 2) as usize, f)?;
        ls_ball(&z, k, 0)
    }
}

/// All classes with `deg c = k` whose perpendicular leaves `H_∞` inside the
/// window `|a/c| <= q^w`.
pub fn horo_horo_classes(k: u32, w: i64, f: &Field) -> Vec<HoroClass> {
    let cs: Vec<Poly> = enumerate_polys(f, k, PolyFilter::Monic).filter(|c| c.deg() == k as i64).collect();
    let nums = polys_upto(f, k as i64 + w);
    let mut out = Vec::new();
    for c in &cs {
        for a in &nums {
            if a.coprime(c, f) {
                out.push(HoroClass::from_fraction(a, c, f).expect("coprime"));
            }
        }
    }
    out
}

/// Joint cylinder histograms of the horo-horo perpendiculars, by length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HoroHistogram {
    pub window: i64,
    pub cyl_depth: i64,
    /// `λ ↦ ((exit ball, entry ball) ↦ count)`.
    pub by_length: BTreeMap<i64, BTreeMap<(BallId, BallId), u128>>,
}

/// Joint histogram of exit and entry cylinders, with marginals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointHistogram(pub BTreeMap<(BallId, BallId), u128>);

impl JointHistogram {
    pub fn total(&self) -> u128 {
        self.0.values().sum()
    }

    pub fn exit_marginal(&self) -> BTreeMap<BallId, u128> {
        let mut m = BTreeMap::new();
        for ((e, _), c) in &self.0 {
            *m.entry(e.clone()).or_insert(0) += c;
        }
        m
    }

    pub fn entry_marginal(&self) -> BTreeMap<BallId, u128> {
        let mut m = BTreeMap::new();
        for ((_, e), c) in &self.0 {
            *m.entry(e.clone()).or_insert(0) += c;
        }
        m
    }

    /// Largest relative deviation of the joint histogram from the product of its marginals.
    pub fn product_deviation(&self) -> f64 {
        let (ex, en, tot) = (self.exit_marginal(), self.entry_marginal(), self.total() as f64);
        let mut worst = 0.0f64;
        for (e, ce) in &ex {
            for (n, cn) in &en {
                let expect = *ce as f64 * *cn as f64 / tot;
                let got = self.0.get(&(e.clone(), n.clone())).copied().unwrap_or(0) as f64;
                worst = worst.max((got - expect).abs() / expect);
            }
        }
        worst
    }
}

impl HoroHistogram {
    pub fn count_upto(&self, t: i64) -> u128 {
        self.by_length.range(..=t).map(|(_, m)| m.values().sum::<u128>()).sum()
    }

    pub fn count_at(&self, len: i64) -> u128 {
        self.by_length.get(&len).map_or(0, |m| m.values().sum())
    }

    /// Perpendiculars with `0 < λ <= t`.
    pub fn joint_upto(&self, t: i64) -> JointHistogram {
        let mut j = BTreeMap::new();
        for (_, m) in self.by_length.range(..=t) {
            for (k, c) in m {
                *j.entry(k.clone()).or_insert(0) += c;
            }
        }
        JointHistogram(j)
    }
}

pub fn horo_horo_histogram(t_max: i64, window: i64, cyl_depth: i64, f: &Field) -> Result<HoroHistogram> {
    use rayon::prelude::*;
    if cyl_depth < 1 {
        return Err(Error::Config("cylinder depth must be positive".into()));
    }
    let mut h = HoroHistogram { window, cyl_depth, by_length: BTreeMap::new() };
    for k in 1..=(t_max / 2) as u32 {
        let len = 2 * k as i64;
        if cyl_depth > len {
            return Err(Error::CylinderTooDeep { depth: cyl_depth as usize, length: len });
        }
        let cs: Vec<Poly> = enumerate_polys(f, k, PolyFilter::Monic).filter(|c| c.deg() == k as i64).collect();
        let nums = polys_upto(f, k as i64 + window);
        let parts: Vec<HashMap<(BallId, BallId), u128>> = cs
            .par_iter()
            .map(|c| {
                let mut m = HashMap::new();
                for a in &nums {
                    if !a.coprime(c, f) {
                        continue;
                    }
                    let cl = HoroClass::from_fraction(a, c, f).expect("coprime");
                    let key = (
                        cl.exit_ball(window, cyl_depth, f).expect("window"),
                        cl.entry_ball(cyl_depth, f).expect("window"),
                    );
                    *m.entry(key).or_insert(0) += 1;
                }
                m
            })
            .collect();
        let mut joint = BTreeMap::new();
        for part in parts {
            for (key, c) in part {
                *joint.entry(key).or_insert(0) += c;
            }
        }
        h.by_length.insert(len, joint);
    }
    Ok(h)
}

/// Number of classes `a/c` with `deg c = k` and `|a/c| <= q^w`, by reducing
/// every fraction `x/y` with `y` monic of degree at most `k` and deduplicating.
pub fn reduced_fraction_count(k: u32, w: i64, f: &Field) -> usize {
    let mut set = HashSet::new();
    for y in enumerate_polys(f, k, PolyFilter::Monic) {
        for x in polys_upto(f, y.deg() + w) {
            let r = crate::poly::RationalFn::new(x, y.clone(), f).expect("nonzero denominator");
            if r.den().deg() == k as i64 {
                set.insert((r.num().clone(), r.den().clone()));
            }
        }
    }
    set.len()
}

/// `(q-1) q^(2k+w)`: classes at `λ = 2k` in the window `|a/c| <= q^w`.
pub fn horo_horo_count(q: u64, k: u32, w: i64) -> u128 {
    (q as u128 - 1) * (q as u128).pow((2 * k as i64 + w) as u32)
}

/// The explicit finite tree: all vertices within `radius` of `*_v`.
pub fn explicit_ball(radius: i64, f: &Field) -> Vec<TreeVertex> {
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    let mut out = Vec::new();
    seen.insert(TreeVertex::base());
    queue.push_back((TreeVertex::base(), 0));
    while let Some((x, d)) = queue.pop_front() {
        if d < radius {
            for y in x.neighbors(f) {
                if seen.insert(y.clone()) {
                    queue.push_back((y, d + 1));
                }
            }
        }
        out.push(x);
    }
    out
}

/// Graph distance between two vertex sets inside `vertices`, by breadth-first search.
pub fn bfs_set_distance(vertices: &[TreeVertex], from: &[TreeVertex], to: &[TreeVertex], f: &Field) -> Option<i64> {
    let inside: HashSet<&TreeVertex> = vertices.iter().collect();
    let target: HashSet<&TreeVertex> = to.iter().collect();
    let mut dist: HashMap<TreeVertex, i64> = HashMap::new();
    let mut queue = VecDeque::new();
    for x in from {
        dist.insert(x.clone(), 0);
        queue.push_back(x.clone());
    }
    while let Some(x) = queue.pop_front() {
        let d = dist[&x];
        if target.contains(&x) {
            return Some(d);
        }
        for y in x.neighbors(f) {
            if inside.contains(&y) && !dist.contains_key(&y) {
                dist.insert(y.clone(), d + 1);
                queue.push_back(y);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modgroup::{quad_orbit_set, Complexity, SubgroupSpec};
    use crate::quad::{qi_h, qi_make, QPow, QuadIrr};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fq(p: u32) -> Field {
        Field::prime(p).unwrap()
    }

    fn random_vertex(rng: &mut ChaCha8Rng, f: &Field) -> TreeVertex {
        let lo = rng.gen_range(-3..1);
        let level = rng.gen_range(lo..5);
        let digits: Vec<Fe> = (lo..level).map(|_| f.element(rng.gen_range(0..f.q() as usize))).collect();
        TreeVertex::new(&Laurent::from_parts(lo, digits, None), level).unwrap()
    }

    fn random_poly(rng: &mut ChaCha8Rng, f: &Field, deg: usize) -> Poly {
        Poly::from_coeffs((0..=deg).map(|_| f.element(rng.gen_range(0..f.q() as usize))).collect())
    }

    fn random_gamma(rng: &mut ChaCha8Rng, f: &Field) -> GMat {
        let mut g = GMat::identity();
        for _ in 0..rng.gen_range(1..4) {
            let d = rng.gen_range(0..3);
            let p = random_poly(rng, f, d);
            g = g.mul(&GMat::translation(p), f).mul(&GMat::swap(), f);
        }
        g
    }

    fn sqrt_y2p1(f: &Field) -> QuadIrr {
        qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &Poly::from_ints(f, &[1, 0, 1]), f).unwrap()
    }

    fn quad_line(alpha: &QuadIrr, f: &Field) -> Subtree {
        let a = P1Point::Finite(alpha.embed(60, f));
        let b = P1Point::Finite(alpha.conj(f).embed(60, f));
        Subtree::geodesic(a, b, f).unwrap()
    }

    /// Image of the lattice `[[π^n, c], [0, 1]] O²` under `γ`, brought back to
    /// that shape by column operations over `O_v`.
    fn lattice_oracle(g: &GMat, x: &TreeVertex, f: &Field) -> TreeVertex {
        let prec = 80;
        let l = Laurent::from_poly;
        let pn = Laurent::monomial(Fe::ONE, x.level());
        let c = x.center().clone();
        let mut col1 = [l(&g.a).mul(&pn, f), l(&g.c).mul(&pn, f)];
        let mut col2 = [l(&g.a).mul(&c, f).add(&l(&g.b), f), l(&g.c).mul(&c, f).add(&l(&g.d), f)];
        if col2[1].is_zero() || (!col1[1].is_zero() && col1[1].val().unwrap() < col2[1].val().unwrap()) {
            std::mem::swap(&mut col1, &mut col2);
        }
        if !col1[1].is_zero() {
            let t = col1[1].div(&col2[1], prec, f).unwrap();
            col1 = [col1[0].sub(&t.mul(&col2[0], f), f), Laurent::zero()];
        }
        let level = col1[0].val().unwrap() - col2[1].val().unwrap();
        let center = col2[0].div(&col2[1], prec, f).unwrap();
        TreeVertex::new(&center, level).unwrap()
    }

    #[test]
    fn distance_examples() {
        let f = fq(3);
        let o = TreeVertex::base();
        assert_eq!(vertex_dist(&o, &o, &f), 0);
        let deep = TreeVertex::new(&Laurent::zero(), 3).unwrap();
        assert_eq!(vertex_dist(&o, &deep, &f), 3);
        // (0,1) and (2Y^-1, 1) are the same ball: 2Y^-1 has valuation 1
        let u = TreeVertex::new(&Laurent::zero(), 1).unwrap();
        let w = TreeVertex::new(&Laurent::monomial(f.element(2), 1), 1).unwrap();
        assert_eq!(u, w);
        assert_eq!(vertex_dist(&u, &w, &f), 0);
        let ball = explicit_ball(4, &f);
        assert_eq!(bfs_set_distance(&ball, &[u.clone()], &[w], &f), Some(0));
        let w2 = TreeVertex::new(&Laurent::monomial(f.element(2), 0), 1).unwrap();
        assert_eq!(vertex_dist(&u, &w2, &f), 2);
        assert_eq!(bfs_set_distance(&ball, &[u], &[w2], &f), Some(2));
    }

    #[test]
    fn regular_and_metric_matches_bfs() {
        for p in [2, 3] {
            let f = fq(p);
            let ball = explicit_ball(4, &f);
            let q = f.q() as usize;
            assert_eq!(ball.len(), 1 + (q + 1) * (q.pow(4) - 1) / (q - 1));
            for x in &ball {
                let nb: HashSet<TreeVertex> = x.neighbors(&f).into_iter().collect();
                assert_eq!(nb.len(), q + 1);
                assert!(nb.iter().all(|y| vertex_dist(x, y, &f) == 1));
            }
            let o = TreeVertex::base();
            for x in ball.iter().step_by(7) {
                let d = bfs_set_distance(&ball, &[o.clone()], &[x.clone()], &f).unwrap();
                assert_eq!(d, vertex_dist(&o, x, &f));
            }
        }
    }

    #[test]
    fn four_point_and_paths() {
        let f = fq(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let v: Vec<TreeVertex> = (0..4).map(|_| random_vertex(&mut rng, &f)).collect();
            let d = |i: usize, j: usize| vertex_dist(&v[i], &v[j], &f);
            let mut s = [d(0, 1) + d(2, 3), d(0, 2) + d(1, 3), d(0, 3) + d(1, 2)];
            s.sort();
            assert_eq!(s[1], s[2]);
            let path = vertex_path(&v[0], &v[1], &f);
            assert_eq!(path.len() as i64, d(0, 1) + 1);
            for (i, w) in path.iter().enumerate() {
                assert_eq!(vertex_dist(&v[0], w, &f) + vertex_dist(w, &v[1], &f), d(0, 1));
                assert_eq!(vertex_dist(&v[0], w, &f), i as i64);
            }
        }
    }

    #[test]
    fn busemann_limit() {
        let f = fq(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(busemann_inf(&TreeVertex::base()), 0);
        assert_eq!(busemann_inf(&TreeVertex::base().ancestor(-2)), -2);
        let far = TreeVertex::base().ancestor(-10);
        for _ in 0..100 {
            let x = random_vertex(&mut rng, &f);
            let lim = vertex_dist(&x, &far, &f) - vertex_dist(&TreeVertex::base(), &far, &f);
            assert_eq!(busemann_inf(&x), lim);
            let xi = Laurent::from_parts(-1, vec![f.element(1), f.element(2), f.element(1)], None);
            let deep = TreeVertex::new(&xi, 12).unwrap();
            let at0 = TreeVertex::new(&xi, 0).unwrap();
            let lim = vertex_dist(&x, &deep, &f) - vertex_dist(&at0, &deep, &f);
            assert_eq!(busemann(&P1Point::Finite(xi), &x, &f).unwrap(), lim);
        }
    }

    #[test]
    fn action_examples_and_lattice_oracle() {
        let f = fq(3);
        let o = TreeVertex::base();
        let y = Poly::y();
        assert_eq!(act_on_vertex(&GMat::identity(), &o, &f).unwrap(), o);
        let dil = GMat { a: y.clone(), b: Poly::zero(), c: Poly::zero(), d: Poly::one() };
        let tr = GMat::translation(y.clone());
        // [[Y,0],[0,1]] has non-unit determinant: it acts on the tree all the same
        assert_eq!(vertex_dist(&o, &lattice_oracle(&dil, &o, &f), &f), 1);
        assert_eq!(vertex_dist(&o, &act_on_vertex(&tr, &o, &f).unwrap(), &f), 2);
        let x = TreeVertex::new(&Laurent::monomial(Fe::ONE, 1), 3).unwrap();
        let expect = TreeVertex::new(&x.center().add(&Laurent::from_poly(&y), &f), 3).unwrap();
        assert_eq!(act_on_vertex(&tr, &x, &f).unwrap(), expect);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let g = random_gamma(&mut rng, &f);
            let (x, z) = (random_vertex(&mut rng, &f), random_vertex(&mut rng, &f));
            let gx = act_on_vertex(&g, &x, &f).unwrap();
            assert_eq!(gx, lattice_oracle(&g, &x, &f));
            let gz = act_on_vertex(&g, &z, &f).unwrap();
            assert_eq!(vertex_dist(&gx, &gz, &f), vertex_dist(&x, &z, &f));
            let h = random_gamma(&mut rng, &f);
            let hgx = act_on_vertex(&h.mul(&g, &f), &x, &f).unwrap();
            assert_eq!(hgx, act_on_vertex(&h, &gx, &f).unwrap());
        }
    }

    #[test]
    fn horoball_image_is_closed_form() {
        let f = fq(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let k = rng.gen_range(1..4);
            let mut c = random_poly(&mut rng, &f, k);
            c = c.add(&Poly::monomial(Fe::ONE, k), &f).monic(&f);
            if c.deg() != k as i64 {
                continue;
            }
            let da = rng.gen_range(0..5);
            let a = random_poly(&mut rng, &f, da);
            if !a.coprime(&c, &f) {
                continue;
            }
            let cl = HoroClass::from_fraction(&a, &c, &f).unwrap();
            let g = cl.gamma();
            assert!(g.det(&f).is_one());
            let img = Subtree::horoball_inf().transform(&g, 40, &f).unwrap();
            match &img {
                Subtree::Horoball { center: P1Point::Finite(z), height } => {
                    assert!(z.agrees_with(&Laurent::from_fraction(&a, &c, 40, &f).unwrap(), &f));
                    assert_eq!(*height, -2 * k as i64);
                }
                _ => panic!("finite center expected"),
            }
            let perp = common_perp(&Subtree::horoball_inf(), &img, &f).unwrap();
            assert_eq!(perp.length(), cl.length());
        }
        // [[1,0],[Y,1]]: a/c = 1/Y
        let g = GMat { a: Poly::one(), b: Poly::zero(), c: Poly::y(), d: Poly::one() };
        let img = Subtree::horoball_inf().transform(&g, 40, &f).unwrap();
        assert_eq!(common_perp(&Subtree::horoball_inf(), &img, &f).unwrap().length(), 2);
    }

    fn vertices_of(s: &Subtree, ball: &[TreeVertex], f: &Field) -> Vec<TreeVertex> {
        ball.iter().filter(|x| s.contains(x, f).unwrap()).cloned().collect()
    }

    /// Geodesic membership from the valuation characterization.
    fn on_line(a: &Laurent, b: &Laurent, x: &TreeVertex, f: &Field) -> bool {
        let e = a.sub(b, f).val().unwrap();
        let inside = |z: &Laurent| z.sub(x.center(), f).val_lower() >= x.level();
        x.level() >= e && (inside(a) || inside(b))
    }

    #[test]
    fn perpendiculars_match_bfs() {
        let f = fq(3);
        let ball = explicit_ball(8, &f);
        let alpha0 = sqrt_y2p1(&f);
        let hinf = Subtree::horoball_inf();
        let hverts = vertices_of(&hinf, &ball, &f);
        assert!(hverts.iter().all(|x| x.level() <= 0));
        let pts = quad_orbit_set(&SubgroupSpec::full(), &alpha0, &Complexity::H, QPow(4), 0, &f).unwrap();
        let mut seen_lengths = HashSet::new();
        let mut checked = 0;
        for (i, alpha) in pts.iter().enumerate() {
            let line = quad_line(alpha, &f);
            let Subtree::Geodesic { a: P1Point::Finite(a), b: P1Point::Finite(b) } = &line else { unreachable!() };
            let lverts: Vec<TreeVertex> = ball.iter().filter(|x| on_line(a, b, x, &f)).cloned().collect();
            if i < 5 {
                assert_eq!(lverts, vertices_of(&line, &ball, &f));
            }
            let r = common_perp(&hinf, &line, &f).unwrap();
            let e = qi_h(alpha).0;
            assert_eq!(r.length(), e.max(0));
            if e > 0 {
                let PerpResult::Perp(p) = &r else { unreachable!() };
                assert!(hverts.contains(&p.start) && lverts.contains(&p.end));
                assert_eq!(bfs_set_distance(&ball, &hverts, &lverts, &f), Some(e));
                seen_lengths.insert(e);
            } else {
                assert_eq!(bfs_set_distance(&ball, &hverts, &lverts, &f), Some(0));
            }
            checked += 1;
        }
        assert!(checked > 20 && seen_lengths.len() >= 3, "{checked} {seen_lengths:?}");
        // h([[1,0],[Y,1]]·α0) = q^-1 |1 - Y^2 (Y^2 + 1)| = q^3
        let g = GMat { a: Poly::one(), b: Poly::zero(), c: Poly::y(), d: Poly::one() };
        let alpha = crate::modgroup::act_on_quad(&g, &alpha0, &f);
        assert_eq!(qi_h(&alpha), QPow(3));
        assert_eq!(common_perp(&hinf, &quad_line(&alpha, &f), &f).unwrap().length(), 3);
        assert_eq!(common_perp(&hinf, &quad_line(&alpha0, &f), &f).unwrap(), PerpResult::Intersecting);

        // geodesic against geodesic, and horoball against horoball
        let beta = qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &Poly::from_ints(&f, &[2, 1, 1]), &f).unwrap();
        let bline = quad_line(&beta, &f);
        let bverts = vertices_of(&bline, &ball, &f);
        let mut geo_lengths = HashSet::new();
        for alpha in pts.iter().filter(|a| a.c().deg() <= 2) {
            let line = quad_line(alpha, &f);
            let r = common_perp(&bline, &line, &f).unwrap();
            let Subtree::Geodesic { a: P1Point::Finite(a), b: P1Point::Finite(b) } = &line else { unreachable!() };
            let lverts: Vec<TreeVertex> = ball.iter().filter(|x| on_line(a, b, x, &f)).cloned().collect();
            assert_eq!(Some(r.length()), bfs_set_distance(&ball, &bverts, &lverts, &f));
            if let PerpResult::Perp(p) = &r {
                assert!(bverts.contains(&p.start) && lverts.contains(&p.end));
                assert!(p.path[1..p.path.len() - 1].iter().all(|x| !bverts.contains(x) && !lverts.contains(x)));
                geo_lengths.insert(p.length);
            }
        }
        assert!(!geo_lengths.is_empty());
        for cl in horo_horo_classes(2, 0, &f).iter().step_by(5) {
            let img = hinf.transform(&cl.gamma(), 40, &f).unwrap();
            let iverts = vertices_of(&img, &ball, &f);
            assert_eq!(bfs_set_distance(&ball, &hverts, &iverts, &f), Some(4));
        }
    }

    #[test]
    fn perpendiculars_are_equivariant() {
        let f = fq(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let alpha0 = sqrt_y2p1(&f);
        let pts: Vec<QuadIrr> =
            quad_orbit_set(&SubgroupSpec::full(), &alpha0, &Complexity::H, QPow(3), 0, &f).unwrap().into_iter().collect();
        let mut n = 0;
        for alpha in pts.iter().take(40) {
            let dm = Subtree::horoball_inf();
            let dp = quad_line(alpha, &f);
            let PerpResult::Perp(p) = common_perp(&dm, &dp, &f).unwrap() else { continue };
            let g = random_gamma(&mut rng, &f);
            let r = common_perp(&dm.transform(&g, 60, &f).unwrap(), &dp.transform(&g, 60, &f).unwrap(), &f).unwrap();
            let PerpResult::Perp(gp) = r else { panic!("image must stay disjoint") };
            assert_eq!(gp, p.transform(&g, &f).unwrap());
            n += 1;
        }
        assert!(n > 10);
    }

    #[test]
    fn cylinders() {
        let f = fq(3);
        assert_eq!(cylinder_mass(1, 3), Ratio::new(1, 1));
        assert_eq!(cylinder_mass(2, 3), Ratio::new(1, 3));
        let cl = HoroClass::from_fraction(&Poly::from_ints(&f, &[1, 2]), &Poly::from_ints(&f, &[1, 0, 1]), &f).unwrap();
        let hinf = Subtree::horoball_inf();
        let img = hinf.transform(&cl.gamma(), 40, &f).unwrap();
        let PerpResult::Perp(p) = common_perp(&hinf, &img, &f).unwrap() else { panic!() };
        assert!(exit_cylinder(&p, Side::Exit, 5, 3).is_err());
        for k in 1..=4usize {
            let (ex, m) = exit_cylinder(&p, Side::Exit, k, 3).unwrap();
            assert_eq!(m, cylinder_mass(k, 3));
            assert_eq!(cylinder_ball(&ex, 0).unwrap(), cl.exit_ball(0, k as i64, &f).unwrap());
            // entry side, pulled back into H_∞
            let back = p.transform(&cl.gamma().inv(&f), &f).unwrap();
            let (en, _) = exit_cylinder(&back, Side::Entry, k, 3).unwrap();
            assert_eq!(en.base, TreeVertex::base());
            assert_eq!(cylinder_ball(&en, 0).unwrap(), cl.entry_ball(k as i64, &f).unwrap());
        }
        // cylinders at *_v of depth k are the depth-k balls of O_v; the Haar
        // mass q^-k is the cylinder mass relative to the first edge over q
        for k in 1..=3i64 {
            let balls = BallId::all_at_depth(0, k, &f);
            assert_eq!(balls.len() as u64, 3u64.pow(k as u32));
            for b in balls.iter().step_by(4) {
                let z = b.center();
                let path: Vec<TreeVertex> = (1..=k).map(|l| TreeVertex::new(&z, l).unwrap()).collect();
                let cyl = CylinderId { base: TreeVertex::base(), first_edges: path };
                assert_eq!(&cylinder_ball(&cyl, 0).unwrap(), b);
                assert_eq!(Ratio::new(1, 3i128.pow(k as u32)), cylinder_mass(k as usize, 3) / 3);
            }
        }
    }

    #[test]
    fn horo_horo_counts() {
        for p in [2, 3] {
            let f = fq(p);
            let q = f.q();
            for k in 1..=3u32 {
                for w in 0..=1 {
                    let n = horo_horo_classes(k, w, &f).len();
                    assert_eq!(n, reduced_fraction_count(k, w, &f));
                    assert_eq!(n as u128, horo_horo_count(q, k, w));
                }
            }
            let h = horo_horo_histogram(6, 0, 2, &f).unwrap();
            for k in 1..=3u32 {
                assert_eq!(h.count_at(2 * k as i64), horo_horo_count(q, k, 0));
            }
            let j = h.joint_upto(6);
            assert_eq!(j.total(), h.count_upto(6));
            assert_eq!(j.exit_marginal().len() as u64, q * q);
        }
    }

    #[test]
    fn geodesic_distance_and_hbeta() {
        let f = fq(3);
        let beta = qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &Poly::from_ints(&f, &[2, 1, 1]), &f).unwrap();
        let alpha0 = sqrt_y2p1(&f);
        let cx = Complexity::HBeta { beta: beta.clone(), avoid_depth: 1 };
        let pts = quad_orbit_set(&SubgroupSpec::full(), &alpha0, &cx, QPow(4), 1, &f).unwrap();
        let bline = quad_line(&beta, &f);
        let mut lengths = HashSet::new();
        for a in &pts {
            let l = common_perp(&bline, &quad_line(a, &f), &f).unwrap().length();
            let hb = crate::quad::qi_hbeta(a, &beta, &f).unwrap().0;
            assert_eq!(l, hb.max(0));
            lengths.insert(l);
        }
        assert_eq!(lengths.len(), 5);
    }
}
