//! Experiment drivers: each binds an orbit enumerator to an empirical
//! measure, normalizes it with the matching constant and compares it with the
//! target measure along a ladder of cutoffs.

use std::collections::{BTreeMap, HashSet};

use num_traits::{One, ToPrimitive};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bttree::{
    common_perp, cylinder_ball, exit_cylinder, horo_horo_classes, horo_horo_count, horo_horo_histogram,
    reduced_fraction_count, PerpResult, Side, Subtree,
};
use crate::error::{Error, Result};
use crate::gf::Field;
use crate::laurent::BallId;
use crate::measures::{discrepancy_by_depth, fit_growth, target_ball_mass, EmpiricalMeasure, FitResult, TargetMeasure, Q};
use crate::modgroup::{
    enumerate_normform_pairs, enumerate_quad_orbit, enumerate_unimodular_pairs, full_group_integral_count,
    in_unit_vector_orbit_by_search, normform_pair_admissible, normform_pair_list, polys_upto, quad_orbit_bfs,
    quad_orbit_set, subgroup_index, unimodular_ball_histogram, Complexity, P1Point, SubgroupSpec, Window,
};
use crate::poly::{parse_poly, IdealDesc, Poly};
use crate::quad::{qi_automorph, qi_h, qi_make, Automorph, QPow, QuadIrr};

pub const SCHEMA: &str = "ffeq-report/1";

/// Largest number of balls a discrepancy sweep may visit at its deepest level.
const MAX_BALLS: u64 = 1 << 20;

fn qpow(q: u64, e: i64) -> Q {
    let b = q as i128;
    if e >= 0 {
        Q::from_integer(b.pow(e as u32))
    } else {
        Q::new(1, b.pow((-e) as u32))
    }
}

fn to_f64(x: Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `ζ_K(-1)`, the genus and the normalizing constant of each experiment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TheoremConstants {
    pub q: u64,
    pub genus: u32,
    pub zeta_minus1: Q,
}

impl TheoremConstants {
    pub fn new(q: u64) -> TheoremConstants {
        let qi = q as i128;
        TheoremConstants { q, genus: 0, zeta_minus1: Q::new(1, (1 - qi) * (1 - qi * qi)) }
    }

    fn qv(&self) -> Q {
        Q::from_integer(self.q as i128)
    }

    /// `q^(g-1)`.
    fn q_genus(&self) -> Q {
        qpow(self.q, self.genus as i64 - 1)
    }

    /// Counting pairs of `G·(1,0)` with `|y| <= s`.
    pub fn c1(&self, spec: &SubgroupSpec) -> Q {
        let q = self.qv();
        let (index, stab) = subgroup_index(spec);
        (q * q - 1) * (q + 1) * self.zeta_minus1 * Q::from_integer(index as i128)
            / (q * q * q * self.q_genus() * Q::from_integer(stab as i128))
    }

    /// Counting `G·α₀` by `h`.
    pub fn c2(&self, spec: &SubgroupSpec, auto: &Automorph) -> Q {
        let q = self.qv();
        let (index, _) = subgroup_index(spec);
        (q + 1) * (q + 1) * self.zeta_minus1 * Q::from_integer(auto.m0 as i128 * index as i128)
            / (Q::from_integer(2) * q * q * (q - 1) * Q::from_integer(auto.trace_val.abs() as i128))
    }

    /// Counting `G·α₀` by `h_β`: `C₂ / |β - β^σ| = C₂ h(β)`.
    pub fn c3(&self, spec: &SubgroupSpec, auto: &Automorph, beta: &QuadIrr) -> Q {
        self.c2(spec, auto) * qpow(self.q, qi_h(beta).0)
    }

    /// Counting coprime `(x, y) ∈ R × I` by `|n(x - yβ)|`.
    pub fn c4(&self, ideal: &IdealDesc) -> Q {
        let q = self.qv();
        let euler = ideal.prime_norms(self.q).into_iter().fold(Q::one(), |acc, n| acc * (Q::one() + Q::new(1, n as i128)));
        (q * q - 1) * (q + 1) * self.zeta_minus1 * Q::from_integer(ideal.norm as i128) * euler
            / (q * q * q * (q - 1) * (q - 1) * self.q_genus())
    }

    /// Covolume of `PGL_2(F_q[Y])` in the normalization of the tree experiments.
    pub fn covolume(&self) -> Q {
        let q = self.qv();
        Q::from_integer(2) / ((q - 1) * (q * q - 1))
    }

    pub fn c_tree(&self) -> Q {
        let q = self.qv();
        (q * q - 1) * (q + 1) * self.covolume() / (Q::from_integer(2) * q * q)
    }

    /// Measured ratio between the `h`- and `h_β`-counts on a `q`-power ladder
    /// and the counts predicted by `C₂`, `C₃`: `(q+1)/(2q)`.
    pub fn quadratic_ladder_factor(&self) -> Q {
        let q = self.qv();
        (q + 1) / (Q::from_integer(2) * q)
    }

    /// Measured parity mean of the norm-form counts relative to `C₄`: `(q+1)/(2q(q-1)²)`.
    pub fn normform_ladder_factor(&self) -> Q {
        let q = self.qv();
        (q + 1) / (Q::from_integer(2) * q * (q - 1) * (q - 1))
    }
}

/// `C₁ · count(O_v, n) / q^(2n)` for the full group; tends to 1.
pub fn zeta_gate_value(q: u64, n: u32) -> f64 {
    let c1 = TheoremConstants::new(q).c1(&SubgroupSpec::full());
    let count = full_group_integral_count(q, n) as f64;
    to_f64(c1) * count / (q as f64).powi(2 * n as i32)
}

/// Checks `C₁ (q-1) q² / (q+1) = 1` against the measured count of pairs with
/// `x/y ∈ O_v`, to 3 significant digits.
pub fn zeta_gate(f: &Field, n: u32) -> (bool, f64) {
    let q = f.q();
    let h = unimodular_ball_histogram(&SubgroupSpec::full(), n, 0, 0, f);
    let measured = h.total() as f64 / (q as f64).powi(2 * n as i32);
    let tc = TheoremConstants::new(q);
    let identity = tc.c1(&SubgroupSpec::full()) * Q::from_integer((q as i128 - 1) * (q as i128).pow(2)) / Q::from_integer(q as i128 + 1);
    let value = to_f64(tc.c1(&SubgroupSpec::full())) * measured;
    let ok = identity.is_one() && (value - 1.0).abs() < 5e-4 && h.total() == full_group_integral_count(q, n);
    (ok, value)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub s_exp: i64,
    pub s: String,
    pub raw_count: u128,
    /// Mass of the window ball under the displayed constant, relative to the target.
    pub normalized_mass: f64,
    /// The same with the ladder constant used for discrepancies.
    pub ladder_normalized_mass: f64,
    pub discrepancy: Vec<(i64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallRow {
    pub ball: String,
    pub count: u128,
    pub normalized: f64,
    pub target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub experiment: String,
    pub config: BTreeMap<String, String>,
    pub constants: BTreeMap<String, String>,
    pub rows: Vec<Row>,
    pub fit: Option<FitResult>,
    /// Ball masses at the top of the ladder.
    pub histogram: Vec<BallRow>,
    pub checks: BTreeMap<String, Value>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl Report {
    fn new(experiment: &str, config: BTreeMap<String, String>) -> Report {
        Report {
            schema: SCHEMA,
            experiment: experiment.into(),
            config,
            constants: BTreeMap::new(),
            rows: Vec::new(),
            fit: None,
            histogram: Vec::new(),
            checks: BTreeMap::new(),
            seed: 0,
            wall_clock_seconds: None,
        }
    }

    fn constant(&mut self, name: &str, v: Q) {
        self.constants.insert(name.into(), format!("{} ({})", v, to_f64(v)));
    }

    fn fit_ladder(&mut self) {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| (r.s.parse::<f64>().unwrap_or(f64::NAN), r.raw_count as f64))
            .collect();
        self.fit = fit_growth(&pts).ok();
    }

    pub fn to_csv(&self) -> String {
        let depths: std::collections::BTreeSet<i64> = self.rows.iter().flat_map(|r| r.discrepancy.iter().map(|d| d.0)).collect();
        let mut out = String::from("s,raw_count,normalized_mass");
        for d in &depths {
            out += &format!(",discrepancy_depth_{d}");
        }
        out += ",fitted_constant,kappa_hat\n";
        let (fc, kh) = match &self.fit {
            Some(fit) => (fit.constant.to_string(), fit.kappa_hat.map(|k| k.to_string()).unwrap_or_default()),
            None => (String::new(), String::new()),
        };
        for r in &self.rows {
            out += &format!("{},{},{}", r.s, r.raw_count, r.normalized_mass);
            for k in &depths {
                match r.discrepancy.iter().find(|d| d.0 == *k) {
                    Some((_, d)) => out += &format!(",{d}"),
                    None => out.push(','),
                }
            }
            out += &format!(",{fc},{kh}\n");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub fn ball_label(b: &BallId, f: &Field) -> String {
    let digits: Vec<String> = b.digits.iter().map(|&c| f.format(c)).collect();
    format!("w{}:d{}:[{}]", b.window, b.depth, digits.join(","))
}

/// Parses `A;B;C;D` into the quadratic irrational `(A + B√D)/C`.
pub fn parse_quad(s: &str, f: &Field) -> Result<QuadIrr> {
    let parts: Vec<&str> = s.split(';').collect();
    if parts.len() != 4 {
        return Err(Error::Parse(format!("expected A;B;C;D, got {s:?}")));
    }
    let p: Vec<Poly> = parts.iter().map(|x| parse_poly(x, f)).collect::<Result<_>>()?;
    qi_make(&p[0], &p[1], &p[2], &p[3], f)
}

/// Parses a ladder: `a:b` (inclusive), `a:b:step`, or a comma list; values must increase.
pub fn parse_ladder(s: &str) -> Result<Vec<i64>> {
    let bad = || Error::Parse(format!("bad ladder {s:?}"));
    let num = |x: &str| x.trim().parse::<i64>().map_err(|_| bad());
    let v: Vec<i64> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let (a, b, step) = match parts.as_slice() {
            [a, b] => (num(a)?, num(b)?, 1),
            [a, b, c] => (num(a)?, num(b)?, num(c)?),
            _ => return Err(bad()),
        };
        if step <= 0 || b < a || (b - a) / step > 4096 {
            return Err(bad());
        }
        (0..=(b - a) / step).map(|i| a + i * step).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if v.is_empty() || v.windows(2).any(|w| w[1] <= w[0]) || v.iter().any(|x| x.abs() > 64) {
        return Err(bad());
    }
    Ok(v)
}

fn check_window(f: &Field, window: i64, depth: i64) -> Result<()> {
    if window < 0 || depth < 0 {
        return Err(Error::Config("window and depth must be non-negative".into()));
    }
    if (f.q() as f64).powi((window + depth) as i32) > MAX_BALLS as f64 {
        return Err(Error::Config(format!("q^(window+depth) exceeds {MAX_BALLS} balls")));
    }
    Ok(())
}

/// Laurent precision for placing points into depth-`depth` balls of window `window`;
/// an explicit request must cover that.
fn working_window(window: i64, depth: i64, precision: Option<usize>) -> Result<Window> {
    let mut win = Window::for_depth(window, depth);
    if let Some(p) = precision {
        if p < win.prec {
            return Err(Error::Config(format!("precision {p} is below the {} digits this window and depth need", win.prec)));
        }
        win.prec = p;
    }
    Ok(win)
}

fn check_odd(f: &Field) -> Result<()> {
    if f.characteristic() == 2 {
        Err(Error::CharacteristicTwo)
    } else {
        Ok(())
    }
}

fn base_config(f: &Field, ladder: &[i64], depth: i64, window: i64) -> BTreeMap<String, String> {
    let mut c = BTreeMap::new();
    c.insert("q".into(), f.q().to_string());
    c.insert("ladder".into(), ladder.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
    c.insert("depth".into(), depth.to_string());
    c.insert("window".into(), window.to_string());
    c
}

/// Fills a ladder row: raw count, `O_v` masses and discrepancies.
#[allow(clippy::too_many_arguments)]
fn ladder_row(
    e: &EmpiricalMeasure,
    target: &TargetMeasure,
    s_exp: i64,
    raw_count: u128,
    displayed: Q,
    ladder: Q,
    f: &Field,
) -> Result<Row> {
    let ov = BallId::window_ball(e.window);
    let t_ov = target_ball_mass(target, &ov, f)?;
    let e_ov = Q::from_integer(e.mass(&ov) as i128);
    Ok(Row {
        s_exp,
        s: (f.q() as u128).pow(s_exp.max(0) as u32).to_string(),
        raw_count,
        normalized_mass: to_f64(displayed * e_ov / t_ov),
        ladder_normalized_mass: to_f64(ladder * e_ov / t_ov),
        discrepancy: discrepancy_by_depth(e, target, ladder, f)?,
    })
}

fn ball_table(e: &EmpiricalMeasure, target: &TargetMeasure, normalizer: Q, f: &Field) -> Vec<BallRow> {
    BallId::all_at_depth(e.window, e.depth, f)
        .into_iter()
        .map(|b| {
            let count = e.histogram.get(&b).copied().unwrap_or(0);
            BallRow {
                ball: ball_label(&b, f),
                count,
                normalized: to_f64(normalizer * Q::from_integer(count as i128)),
                target: target_ball_mass(target, &b, f).ok().map(to_f64),
            }
        })
        .collect()
}

/// `max(E/T) / min(E/T)` over the balls of the histogram depth on which the
/// weighted density is constant (a ratio test free of the global constant).
pub fn density_ratio_spread(e: &EmpiricalMeasure, beta: &QuadIrr, f: &Field) -> Result<f64> {
    let t = TargetMeasure::Weighted { beta: beta.clone(), avoid_depth: None };
    let mut ratios = Vec::new();
    for b in BallId::all_at_depth(e.window, e.depth, f) {
        match target_ball_mass(&t, &b, f) {
            Ok(m) => ratios.push(e.histogram.get(&b).copied().unwrap_or(0) as f64 / to_f64(m)),
            Err(Error::SingularBall) => continue,
            Err(err) => return Err(err),
        }
    }
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

pub fn run_mertens(f: &Field, spec: &SubgroupSpec, ladder: &[i64], depth: i64, window: i64) -> Result<Report> {
    check_window(f, window, depth)?;
    if ladder.iter().any(|&n| n < 0) {
        return Err(Error::Config("Mertens ladder entries are degrees, so non-negative".into()));
    }
    let mut cfg = base_config(f, ladder, depth, window);
    cfg.insert("group".into(), spec.describe(f));
    let mut r = Report::new("mertens", cfg);
    let tc = TheoremConstants::new(f.q());
    let c1 = tc.c1(spec);
    r.constant("zeta_minus1", tc.zeta_minus1);
    r.constant("C1", c1);
    let mut last = None;
    for &n in ladder {
        let h = unimodular_ball_histogram(spec, n as u32, window, depth, f);
        let e = EmpiricalMeasure::from_pair_histogram(&h);
        let norm = c1 / qpow(f.q(), 2 * n);
        r.rows.push(ladder_row(&e, &TargetMeasure::Haar, n, e.total, norm, norm, f)?);
        last = Some((e, norm));
    }
    r.fit_ladder();
    if let Some((e, norm)) = last {
        r.histogram = ball_table(&e, &TargetMeasure::Haar, norm, f);
    }
    Ok(r)
}

#[allow(clippy::too_many_arguments)]
pub fn run_quadratic(
    f: &Field,
    spec: &SubgroupSpec,
    alpha0: &QuadIrr,
    ladder: &[i64],
    depth: i64,
    window: i64,
    precision: Option<usize>,
) -> Result<Report> {
    check_odd(f)?;
    check_window(f, window, depth)?;
    let mut cfg = base_config(f, ladder, depth, window);
    cfg.insert("group".into(), spec.describe(f));
    cfg.insert("alpha0".into(), alpha0.format(f));
    let mut r = Report::new("quadratic", cfg);
    let tc = TheoremConstants::new(f.q());
    let auto = qi_automorph(alpha0, spec, f)?;
    let c2 = tc.c2(spec, &auto);
    let lad = c2 / tc.quadratic_ladder_factor();
    r.constant("zeta_minus1", tc.zeta_minus1);
    r.constant("C2", c2);
    r.constant("C2_ladder", lad);
    r.checks.insert("trace_val".into(), json!(auto.trace_val));
    r.checks.insert("m0".into(), json!(auto.m0));
    r.checks.insert("automorph_power".into(), json!(auto.power));
    r.checks.insert("g0_fixes_alpha0".into(), json!(crate::modgroup::act_on_quad(&auto.g0, alpha0, f) == *alpha0));
    let win = working_window(window, depth, precision)?;
    let mut last = None;
    for &e in ladder {
        let pts = enumerate_quad_orbit(spec, alpha0, &Complexity::H, QPow(e), &win, f)?;
        let em = EmpiricalMeasure::from_points(&pts, depth, window)?;
        let s_inv = qpow(f.q(), -e);
        r.rows.push(ladder_row(&em, &TargetMeasure::Haar, e, em.total, c2 * s_inv, lad * s_inv, f)?);
        last = Some((em, lad * s_inv));
    }
    r.fit_ladder();
    if let Some((em, norm)) = last {
        r.histogram = ball_table(&em, &TargetMeasure::Haar, norm, f);
    }
    Ok(r)
}

#[allow(clippy::too_many_arguments)]
pub fn run_crossratio(
    f: &Field,
    spec: &SubgroupSpec,
    alpha0: &QuadIrr,
    beta: &QuadIrr,
    avoid_depth: i64,
    ladder: &[i64],
    depth: i64,
    window: i64,
    precision: Option<usize>,
) -> Result<Report> {
    check_odd(f)?;
    check_window(f, window, depth)?;
    let mut cfg = base_config(f, ladder, depth, window);
    cfg.insert("group".into(), spec.describe(f));
    cfg.insert("alpha0".into(), alpha0.format(f));
    cfg.insert("beta".into(), beta.format(f));
    cfg.insert("avoid_depth".into(), avoid_depth.to_string());
    let mut r = Report::new("crossratio", cfg);
    let tc = TheoremConstants::new(f.q());
    let auto = qi_automorph(alpha0, spec, f)?;
    let c3 = tc.c3(spec, &auto, beta);
    let lad = c3 / tc.quadratic_ladder_factor();
    r.constant("zeta_minus1", tc.zeta_minus1);
    r.constant("C3", c3);
    r.constant("C3_ladder", lad);
    let target = TargetMeasure::Weighted { beta: beta.clone(), avoid_depth: Some(avoid_depth) };
    let cx = Complexity::HBeta { beta: beta.clone(), avoid_depth };
    let win = working_window(window, depth.max(avoid_depth), precision)?;
    let mut last = None;
    for &e in ladder {
        let pts = enumerate_quad_orbit(spec, alpha0, &cx, QPow(e), &win, f)?;
        let em = EmpiricalMeasure::from_points(&pts, depth, window)?;
        let s_inv = qpow(f.q(), -e);
        r.rows.push(ladder_row(&em, &target, e, em.total, c3 * s_inv, lad * s_inv, f)?);
        last = Some((em, lad * s_inv));
    }
    r.fit_ladder();
    if let Some((em, norm)) = last {
        r.checks.insert("density_ratio_spread".into(), json!(density_ratio_spread(&em, beta, f)?));
        r.histogram = ball_table(&em, &target, norm, f);
    }
    Ok(r)
}

#[allow(clippy::too_many_arguments)]
pub fn run_normform(
    f: &Field,
    ideal: &Poly,
    beta: &QuadIrr,
    avoid_depth: i64,
    ladder: &[i64],
    depth: i64,
    window: i64,
    precision: Option<usize>,
) -> Result<Report> {
    check_odd(f)?;
    check_window(f, window, depth)?;
    let ideal = IdealDesc::new(ideal, f)?;
    let mut cfg = base_config(f, ladder, depth, window);
    cfg.insert("ideal".into(), ideal.generator.format(f));
    cfg.insert("beta".into(), beta.format(f));
    cfg.insert("avoid_depth".into(), avoid_depth.to_string());
    let mut r = Report::new("normform", cfg);
    let tc = TheoremConstants::new(f.q());
    let c4 = tc.c4(&ideal);
    let lad = c4 / tc.normform_ladder_factor();
    r.constant("zeta_minus1", tc.zeta_minus1);
    r.constant("C4", c4);
    r.constant("C4_ladder", lad);
    let target = TargetMeasure::Weighted { beta: beta.clone(), avoid_depth: Some(avoid_depth) };
    let win = working_window(window, depth.max(avoid_depth), precision)?;
    let mut last = None;
    for &e in ladder {
        let pts = enumerate_normform_pairs(&ideal, beta, QPow(e), avoid_depth, &win, f)?;
        let em = EmpiricalMeasure::from_points(&pts, depth, window)?;
        let s_inv = qpow(f.q(), -e);
        r.rows.push(ladder_row(&em, &target, e, em.total, c4 * s_inv, lad * s_inv, f)?);
        last = Some((em, lad * s_inv));
    }
    r.fit_ladder();
    if let Some((em, norm)) = last {
        r.checks.insert("density_ratio_spread".into(), json!(density_ratio_spread(&em, beta, f)?));
        r.histogram = ball_table(&em, &target, norm, f);
    }
    Ok(r)
}

/// The pair of subtrees of a tree experiment; `D⁻` first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreePair {
    HoroHoro,
    HoroGeo { alpha0: QuadIrr },
    GeoGeo { beta: QuadIrr, alpha0: QuadIrr, avoid_depth: i64 },
}

/// Digits needed to locate perpendiculars of length up to `t` from embedded lines.
fn line_precision(t: i64, window: i64, precision: Option<usize>) -> usize {
    ((2 * t + 2 * window + 40) as usize).max(precision.unwrap_or(0))
}

fn quad_line(alpha: &QuadIrr, prec: usize, f: &Field) -> Result<Subtree> {
    Subtree::geodesic(P1Point::Finite(alpha.embed(prec, f)), P1Point::Finite(alpha.conj(f).embed(prec, f)), f)
}

/// Perpendicular lengths (and exit cylinder balls, for `H_∞`) of the orbit
/// lines `]α, α^σ[` against `dm`.
fn orbit_perps(dm: &Subtree, pts: &HashSet<QuadIrr>, cyl_depth: i64, window: i64, prec: usize, f: &Field) -> Result<Vec<(i64, Option<BallId>)>> {
    let mut v: Vec<&QuadIrr> = pts.iter().collect();
    v.sort();
    v.par_iter()
        .map(|a| {
            let line = quad_line(a, prec, f)?;
            match common_perp(dm, &line, f)? {
                PerpResult::Intersecting => Ok((0, None)),
                PerpResult::Perp(p) => {
                    let ball = match dm {
                        Subtree::Horoball { .. } if p.length >= cyl_depth => {
                            let (cyl, _) = exit_cylinder(&p, Side::Exit, cyl_depth as usize, f.q())?;
                            Some(cylinder_ball(&cyl, window)?)
                        }
                        _ => None,
                    };
                    Ok((p.length, ball))
                }
            }
        })
        .collect()
}

/// Cutoff, count, exit-cylinder histogram and counts by length.
type TreeRung = (i64, u128, Option<EmpiricalMeasure>, BTreeMap<i64, u128>);

/// Number of perpendiculars of each length in `1..=t`.
fn lengths_upto(perps: &[(i64, Option<BallId>)], t: i64) -> BTreeMap<i64, u128> {
    let mut m = BTreeMap::new();
    for (l, _) in perps.iter().filter(|(l, _)| *l > 0 && *l <= t) {
        *m.entry(*l).or_insert(0) += 1;
    }
    m
}

pub fn run_treeperp(
    f: &Field,
    pair: &TreePair,
    ladder: &[i64],
    cyl_depth: i64,
    window: i64,
    precision: Option<usize>,
) -> Result<Report> {
    check_window(f, window, cyl_depth)?;
    if cyl_depth < 1 {
        return Err(Error::Config("cylinder depth must be positive".into()));
    }
    if ladder.iter().any(|&t| t < 1) {
        return Err(Error::Config("tree ladder entries must be positive".into()));
    }
    let mut cfg = base_config(f, ladder, cyl_depth, window);
    cfg.remove("depth");
    cfg.insert("cyl_depth".into(), cyl_depth.to_string());
    let tc = TheoremConstants::new(f.q());
    let c_tree = tc.c_tree();
    let q = f.q();
    let cyl_target = TargetMeasure::Cylinder;
    let window_mass = target_ball_mass(&cyl_target, &BallId::window_ball(window), f)?;
    let mut rows_data: Vec<TreeRung> = Vec::new();
    let mut checks = BTreeMap::new();
    let name = match pair {
        TreePair::HoroHoro => {
            if ladder.iter().any(|t| t % 2 != 0) {
                return Err(Error::Config("horo-horo perpendiculars have even length: use an even ladder".into()));
            }
            if cyl_depth > 2 {
                return Err(Error::CylinderTooDeep { depth: cyl_depth as usize, length: 2 });
            }
            let t_max = *ladder.last().unwrap();
            let h = horo_horo_histogram(t_max, window, cyl_depth, f)?;
            let mut product = Vec::new();
            for &t in ladder {
                let j = h.joint_upto(t);
                let mut em = EmpiricalMeasure::new(cyl_depth, window);
                for (b, c) in j.exit_marginal() {
                    em.histogram.insert(b, c);
                }
                em.total = j.total();
                let by_len = h.by_length.range(..=t).map(|(l, m)| (*l, m.values().sum())).collect();
                product.push(json!({"t": t, "joint_product_deviation": j.product_deviation()}));
                rows_data.push((t, h.count_upto(t), Some(em), by_len));
            }
            let j = h.joint_upto(t_max);
            let entry = j.entry_marginal();
            let (emin, emax) = (entry.values().min().copied().unwrap_or(0), entry.values().max().copied().unwrap_or(0));
            checks.insert("joint_product".into(), json!(product));
            checks.insert("entry_marginal_spread".into(), json!(emax as f64 / emin.max(1) as f64));
            checks.insert(
                "count_formula_matches".into(),
                json!(h.by_length.keys().all(|&l| h.count_at(l) == horo_horo_count(q, (l / 2) as u32, window))),
            );
            "horo-horo"
        }
        TreePair::HoroGeo { alpha0 } => {
            check_odd(f)?;
            cfg.insert("alpha0".into(), alpha0.format(f));
            let t_max = *ladder.last().unwrap();
            let pts = quad_orbit_set(&SubgroupSpec::full(), alpha0, &Complexity::H, QPow(t_max), window, f)?;
            let perps = orbit_perps(&Subtree::horoball_inf(), &pts, cyl_depth, window, line_precision(t_max, window, precision), f)?;
            for &t in ladder {
                let mut em = EmpiricalMeasure::new(cyl_depth, window);
                let by_len = lengths_upto(&perps, t);
                for (_, ball) in perps.iter().filter(|(l, _)| *l > 0 && *l <= t) {
                    if let Some(b) = ball {
                        *em.histogram.entry(b.clone()).or_insert(0) += 1;
                        em.total += 1;
                    }
                }
                rows_data.push((t, by_len.values().sum(), Some(em), by_len));
            }
            "horo-geo"
        }
        TreePair::GeoGeo { beta, alpha0, avoid_depth } => {
            check_odd(f)?;
            cfg.insert("alpha0".into(), alpha0.format(f));
            cfg.insert("beta".into(), beta.format(f));
            cfg.insert("avoid_depth".into(), avoid_depth.to_string());
            let cx = Complexity::HBeta { beta: beta.clone(), avoid_depth: *avoid_depth };
            let t_max = *ladder.last().unwrap();
            let pts = quad_orbit_set(&SubgroupSpec::full(), alpha0, &cx, QPow(t_max), window, f)?;
            let prec = line_precision(t_max, window, precision);
            let perps = orbit_perps(&quad_line(beta, prec, f)?, &pts, cyl_depth, window, prec, f)?;
            for &t in ladder {
                let by_len = lengths_upto(&perps, t);
                rows_data.push((t, by_len.values().sum(), None, by_len));
            }
            "geo-geo"
        }
    };
    cfg.insert("pair".into(), name.into());
    let mut r = Report::new("treeperp", cfg);
    r.constant("covolume", tc.covolume());
    r.constant("C_tree", c_tree);
    let mut by_length = Vec::new();
    for (t, n, em, by_len) in rows_data {
        let norm = c_tree * qpow(q, -t);
        let discrepancy = match &em {
            Some(em) if em.total > 0 => {
                discrepancy_by_depth(em, &cyl_target, window_mass / Q::from_integer(em.total as i128), f)?
            }
            _ => Vec::new(),
        };
        let mass = to_f64(norm * Q::from_integer(n as i128));
        r.rows.push(Row {
            s_exp: t,
            s: (q as u128).pow(t as u32).to_string(),
            raw_count: n,
            normalized_mass: mass,
            ladder_normalized_mass: mass,
            discrepancy,
        });
        by_length.push(json!({"t": t, "counts": by_len}));
        if let Some(em) = em {
            if em.total > 0 {
                r.histogram = ball_table(&em, &cyl_target, window_mass / Q::from_integer(em.total as i128), f);
            }
        }
    }
    checks.insert("counts_by_length".into(), json!(by_length));
    r.checks = checks;
    r.fit_ladder();
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestReport {
    pub schema: &'static str,
    pub q: u64,
    pub checks: Vec<Check>,
    /// Only filled once the `ζ_K(-1)` gate has passed.
    pub constants: BTreeMap<String, String>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// A valid `√D` for small `D`, for oracle runs.
fn sample_quads(f: &Field) -> Vec<QuadIrr> {
    let cands: [&[i64]; 5] = [&[1, 0, 1], &[2, 1, 1], &[2, 0, 1], &[1, 1, 1], &[3, 1, 1]];
    cands
        .iter()
        .filter_map(|c| qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &Poly::from_ints(f, c), f).ok())
        .collect()
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

/// Enumerator pairs against brute-force scans of every pair in the box.
pub fn unimodular_oracle_check(spec: &SubgroupSpec, n: u32, w: i64, f: &Field) -> bool {
    let pts = enumerate_unimodular_pairs(spec, n, &Window::new(w), f);
    let got: HashSet<(Poly, Poly)> = pts
        .iter()
        .map(|p| match &p.exact {
            crate::modgroup::ExactPoint::Rational { x, y } => (x.clone(), y.clone()),
            _ => unreachable!("pairs are rational"),
        })
        .collect();
    if got.len() != pts.len() {
        return false;
    }
    let mut want = HashSet::new();
    for y in polys_upto(f, n as i64) {
        let xs = if y.is_zero() { polys_upto(f, 0) } else { polys_upto(f, y.deg() + w) };
        for x in xs {
            if in_unit_vector_orbit_by_search(&x, &y, spec, f) {
                want.insert((x, y.clone()));
            }
        }
    }
    if got != want {
        return false;
    }
    // the fast histogram bins the same pairs
    let h = unimodular_ball_histogram(spec, n, w, 1, f);
    let e = EmpiricalMeasure::from_points(&pts, 1, w).expect("window");
    e.histogram == h.counts && e.boundary == h.boundary
}

/// Norm-form enumerator against a scan of every `(x, y)` with `deg y <= ymax`.
pub fn normform_oracle_check(m: &Poly, beta: &QuadIrr, e: i64, avoid: i64, w: i64, f: &Field) -> Result<bool> {
    let ideal = IdealDesc::new(m, f)?;
    let got: HashSet<(Poly, Poly)> = normform_pair_list(&ideal, beta, QPow(e), avoid, w, f)?.into_iter().collect();
    let mut want: HashSet<(Poly, Poly)> = f.units().map(|u| (Poly::constant(u), Poly::zero())).collect();
    if e < 0 {
        want.clear();
    }
    // deg y is bounded by (e + 2(avoid - 1))/2; scan two degrees further
    let ymax = (e + 2 * (avoid - 1)).div_euclid(2) + 2;
    for y in polys_upto(f, ymax) {
        if y.is_zero() || !ideal.generator.divides(&y, f) {
            continue;
        }
        for x in polys_upto(f, y.deg() + w) {
            if normform_pair_admissible(&x, &y, beta, QPow(e), avoid, f) {
                want.insert((x, y.clone()));
            }
        }
    }
    Ok(got == want)
}

/// Small-scale oracle equivalences, the `ζ_K(-1)` gate and tree checks.
pub fn selftest(f: &Field) -> SelftestReport {
    let q = f.q();
    let mut checks = Vec::new();
    let y = Poly::y();
    let groups: Vec<SubgroupSpec> = vec![
        SubgroupSpec::full(),
        SubgroupSpec::hecke0(&y, f).expect("Y is irreducible"),
        SubgroupSpec::principal(&y, f).expect("Y is irreducible"),
    ];
    let nmax = if q <= 3 { 3 } else { 2 };
    for g in &groups {
        let ok = (0..=nmax).all(|n| unimodular_oracle_check(g, n, 1, f));
        checks.push(check(&format!("unimodular pairs = scan ({})", g.describe(f)), ok, format!("deg y <= {nmax}, window 1")));
    }
    let (gate_ok, gate) = zeta_gate(f, 8);
    checks.push(check("zeta_K(-1) gate", gate_ok, format!("C1 * count(O_v) / q^16 = {gate}")));
    for k in 1..=3u32 {
        let n = horo_horo_classes(k, 0, f).len();
        let oracle = reduced_fraction_count(k, 0, f);
        let ok = n == oracle && n as u128 == horo_horo_count(q, k, 0);
        checks.push(check(&format!("horo-horo classes, lambda = {}", 2 * k), ok, format!("{n} classes, oracle {oracle}")));
    }
    if f.characteristic() != 2 {
        let quads = sample_quads(f);
        if quads.len() >= 2 {
            let (alpha0, beta) = (&quads[0], &quads[1]);
            for (gi, g) in groups[..2].iter().enumerate() {
                // the h_beta search is slow, so it runs on a shorter ladder
                for (cx, emax) in [(Complexity::H, 2), (Complexity::HBeta { beta: beta.clone(), avoid_depth: 2 }, 1)] {
                    let label = match cx {
                        Complexity::H => "h",
                        _ if gi > 0 => continue,
                        _ => "h_beta",
                    };
                    let res: Result<bool> = (0..=emax).try_fold(true, |acc, e| {
                        let a = quad_orbit_set(g, alpha0, &cx, QPow(e), 1, f)?;
                        let b = quad_orbit_bfs(g, alpha0, &cx, QPow(e), 1, 2, 2, f)?;
                        Ok(acc && a == b)
                    });
                    let ok = matches!(res, Ok(true));
                    checks.push(check(
                        &format!("quadratic orbit = BFS ({}, {label})", g.describe(f)),
                        ok,
                        format!("alpha0 = {}, s <= q^{emax}: {:?}", alpha0.format(f), res.err()),
                    ));
                }
            }
            for m in [Poly::one(), y.clone()] {
                let ok = (0..=3).all(|e| normform_oracle_check(&m, beta, e, 1, 1, f).unwrap_or(false));
                checks.push(check(&format!("norm-form pairs = scan (I = ({}))", m.format(f)), ok, "s <= q^3".into()));
            }
            let auto = qi_automorph(alpha0, &SubgroupSpec::full(), f);
            let ok = auto
                .as_ref()
                .map(|a| a.trace_val != 0 && crate::modgroup::act_on_quad(&a.g0, alpha0, f) == *alpha0)
                .unwrap_or(false);
            checks.push(check("automorph fixes alpha0", ok, format!("{:?}", auto.map(|a| a.trace_val))));
        }
    } else {
        checks.push(check("quadratic experiments", true, "skipped in characteristic 2".into()));
    }
    let ball = crate::bttree::explicit_ball(3, f);
    let regular = ball
        .iter()
        .filter(|x| crate::bttree::vertex_dist(x, &crate::bttree::TreeVertex::base(), f) < 3)
        .all(|x| x.neighbors(f).iter().collect::<HashSet<_>>().len() == q as usize + 1);
    checks.push(check("tree is (q+1)-regular", regular, format!("{} vertices within radius 3", ball.len())));
    let mut constants = BTreeMap::new();
    if gate_ok {
        let tc = TheoremConstants::new(q);
        for (k, v) in [
            ("zeta_minus1", tc.zeta_minus1),
            ("C1(full)", tc.c1(&SubgroupSpec::full())),
            ("C4((1))", tc.c4(&IdealDesc::new(&Poly::one(), f).expect("unit ideal"))),
            ("C_tree", tc.c_tree()),
        ] {
            constants.insert(k.to_string(), format!("{} ({})", v, to_f64(v)));
        }
    }
    SelftestReport { schema: SCHEMA, q, checks, constants }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f3() -> Field {
        Field::prime(3).unwrap()
    }

    #[test]
    fn constants() {
        let tc = TheoremConstants::new(3);
        assert_eq!(tc.zeta_minus1, Q::new(1, 16));
        let c1 = tc.c1(&SubgroupSpec::full());
        assert_eq!(c1, Q::new(4, 18));
        assert_eq!(c1 * Q::new(2 * 9, 4), Q::one());
        assert_eq!(tc.covolume(), Q::new(1, 8));
        assert_eq!(tc.c_tree(), Q::new(4, 18));
        let f = f3();
        let ideal = IdealDesc::new(&Poly::y(), &f).unwrap();
        assert_eq!(tc.c4(&ideal), TheoremConstants::new(3).c4(&IdealDesc::new(&Poly::one(), &f).unwrap()) * Q::new(4, 1));
        for q in [2, 3, 4, 5, 7] {
            assert!((zeta_gate_value(q, 12) - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn parsers() {
        let f = f3();
        let a = parse_quad("0;1;1;Y^2+1", &f).unwrap();
        assert_eq!(qi_h(&a), QPow(-1));
        assert!(parse_quad("0;1;1", &f).is_err());
        assert!(parse_quad("0;1;0;Y^2+1", &f).is_err());
        assert_eq!(parse_ladder("2:5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_ladder("2:12:2").unwrap(), vec![2, 4, 6, 8, 10, 12]);
        assert_eq!(parse_ladder("1,3,4").unwrap(), vec![1, 3, 4]);
        for bad in ["", "3:2", "1,1", "a:b", "1:2:0", "1:2:3:4"] {
            assert!(parse_ladder(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn reports_render() {
        let f = f3();
        let r = run_mertens(&f, &SubgroupSpec::full(), &[1, 2, 3], 1, 0).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "s,raw_count,normalized_mass,discrepancy_depth_0,discrepancy_depth_1,fitted_constant,kappa_hat");
        let v: Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["schema"], SCHEMA);
        assert_eq!(v["rows"].as_array().unwrap().len(), 3);
        assert!(v.get("wall_clock_seconds").is_none());
    }

    #[test]
    fn char_two_rejected() {
        let f = Field::prime(2).unwrap();
        let a = QuadIrr::from_canonical_d(Poly::zero(), Poly::one(), Poly::one(), Poly::from_ints(&f, &[1, 1, 1]), &f);
        assert_eq!(run_quadratic(&f, &SubgroupSpec::full(), &a, &[1], 1, 0, None), Err(Error::CharacteristicTwo));
    }

    #[test]
    fn selftest_small_fields() {
        for p in [2, 3] {
            let st = selftest(&Field::prime(p).unwrap());
            for c in &st.checks {
                assert!(c.passed, "{} failed: {}", c.name, c.detail);
            }
            assert!(!st.constants.is_empty());
        }
    }
}
