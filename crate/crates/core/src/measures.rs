//! Empirical measures built from orbit points, the target measures they
//! converge to, ball-level discrepancy and growth fits.

use std::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::gf::Field;
use crate::laurent::{ls_ball, BallId, Laurent};
use crate::modgroup::{OrbitPoint, PairHistogram};
use crate::quad::QuadIrr;

pub type Q = Ratio<i128>;

/// Integer-weighted histogram of points on the balls of one depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmpiricalMeasure {
    pub histogram: BTreeMap<BallId, u128>,
    /// Weight of all points, including the boundary.
    pub total: u128,
    /// Weight at `∞`, excluded from the histogram.
    pub boundary: u128,
    pub depth: i64,
    pub window: i64,
    /// Complexity cutoff, as an exponent of `q`, when known.
    pub s_exp: Option<i64>,
}

impl EmpiricalMeasure {
    pub fn new(depth: i64, window: i64) -> EmpiricalMeasure {
        EmpiricalMeasure { histogram: BTreeMap::new(), total: 0, boundary: 0, depth, window, s_exp: None }
    }

    pub fn from_points<'a>(
        points: impl IntoIterator<Item = &'a OrbitPoint>,
        depth: i64,
        window: i64,
    ) -> Result<EmpiricalMeasure> {
        let mut m = EmpiricalMeasure::new(depth, window);
        for p in points {
            m.add(p.value.as_ref(), p.weight as u128)?;
        }
        Ok(m)
    }

    pub fn from_pair_histogram(h: &PairHistogram) -> EmpiricalMeasure {
        EmpiricalMeasure {
            total: h.total(),
            histogram: h.counts.clone(),
            boundary: h.boundary,
            depth: h.depth,
            window: h.window,
            s_exp: None,
        }
    }

    /// Adds a point; `None` is the boundary point.
    pub fn add(&mut self, z: Option<&Laurent>, weight: u128) -> Result<()> {
        self.total += weight;
        match z {
            None => self.boundary += weight,
            Some(z) => *self.histogram.entry(ls_ball(z, self.depth, self.window)?).or_insert(0) += weight,
        }
        Ok(())
    }

    /// Merges a shard built with the same depth and window.
    pub fn merge(&mut self, other: &EmpiricalMeasure) {
        assert_eq!((self.depth, self.window), (other.depth, other.window));
        self.total += other.total;
        self.boundary += other.boundary;
        for (b, w) in &other.histogram {
            *self.histogram.entry(b.clone()).or_insert(0) += w;
        }
    }

    pub fn finite_total(&self) -> u128 {
        self.total - self.boundary
    }

    /// The same points on the balls of a shallower depth.
    pub fn coarsen(&self, depth: i64) -> EmpiricalMeasure {
        assert!(depth <= self.depth && depth >= -self.window);
        let mut m = EmpiricalMeasure { histogram: BTreeMap::new(), depth, ..self.clone() };
        for (b, w) in &self.histogram {
            *m.histogram.entry(b.truncate(depth)).or_insert(0) += w;
        }
        m
    }

    pub fn mass(&self, b: &BallId) -> u128 {
        if b.depth == self.depth {
            return self.histogram.get(b).copied().unwrap_or(0);
        }
        self.histogram.iter().filter(|(k, _)| k.truncate(b.depth.min(k.depth)) == *b).map(|(_, w)| w).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetMeasure {
    Haar,
    /// `dHaar(z) / (|z - β| |z - β^σ|)`, restricted to the complement of the
    /// balls of depth `avoid_depth` around `β` and `β^σ` when given.
    Weighted { beta: QuadIrr, avoid_depth: Option<i64> },
    /// Exit-ray cylinders: mass `q^-(k-1)` on cylinders of depth `k`, i.e. `q` times Haar.
    Cylinder,
}

fn q_pow(q: u64, e: i64) -> Q {
    let b = q as i128;
    if e >= 0 {
        Q::from_integer(b.pow(e as u32))
    } else {
        Q::new(1, b.pow((-e) as u32))
    }
}

fn weighted_mass(ball: &BallId, roots: &[Laurent; 2], avoid: Option<i64>, q: u64, f: &Field) -> Result<Q> {
    let c = ball.center();
    let vals: Vec<i64> = roots.iter().map(|r| c.sub(r, f).val_lower()).collect();
    if let Some(n) = avoid {
        if ball.depth >= n && vals.iter().any(|&v| v >= n) {
            return Ok(Q::zero());
        }
    }
    if vals.iter().all(|&v| v < ball.depth) {
        return Ok(q_pow(q, vals[0] + vals[1] - ball.depth));
    }
    match avoid {
        None => Err(Error::SingularBall),
        Some(_) => {
            let mut m = Q::zero();
            for ch in ball.children(f) {
                m += weighted_mass(&ch, roots, avoid, q, f)?;
            }
            Ok(m)
        }
    }
}

/// Exact mass of a ball.
pub fn target_ball_mass(t: &TargetMeasure, ball: &BallId, f: &Field) -> Result<Q> {
    let q = f.q();
    match t {
        TargetMeasure::Haar => Ok(q_pow(q, -ball.depth)),
        TargetMeasure::Cylinder => Ok(q_pow(q, 1 - ball.depth)),
        TargetMeasure::Weighted { beta, avoid_depth } => {
            let deepest = avoid_depth.unwrap_or(ball.depth).max(ball.depth);
            let prec = (deepest + ball.window + 2 * beta.half_deg_d() + 8).max(8) as usize;
            let roots = [beta.embed(prec, f), beta.conj(f).embed(prec, f)];
            weighted_mass(ball, &roots, *avoid_depth, q, f)
        }
    }
}

/// Per-depth sup of `|normalizer·E(B) - T(B)|` over every ball of the window.
pub fn discrepancy_by_depth(e: &EmpiricalMeasure, t: &TargetMeasure, normalizer: Q, f: &Field) -> Result<Vec<(i64, f64)>> {
    let mut out = Vec::new();
    for depth in -e.window..=e.depth {
        let coarse = e.coarsen(depth);
        let mut worst = Q::zero();
        for b in BallId::all_at_depth(e.window, depth, f) {
            let target = match target_ball_mass(t, &b, f) {
                Ok(m) => m,
                Err(Error::SingularBall) => continue,
                Err(err) => return Err(err),
            };
            let emp = Q::from_integer(coarse.histogram.get(&b).copied().unwrap_or(0) as i128);
            let d = (normalizer * emp - target).abs();
            if d > worst {
                worst = d;
            }
        }
        out.push((depth, worst.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(out)
}

/// Sup over all depths down to `e.depth` of the ball discrepancy.
pub fn discrepancy(e: &EmpiricalMeasure, t: &TargetMeasure, normalizer: Q, f: &Field) -> Result<f64> {
    Ok(discrepancy_by_depth(e, t, normalizer, f)?.into_iter().map(|(_, d)| d).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct FitResult {
    /// Least-squares slope of `log count` against `log s`.
    pub exponent: f64,
    /// Limit of `count / s^p` with `p` the exponent rounded to an integer.
    pub constant: f64,
    /// Decay exponent of `|count / s^p - constant|`; needs at least 4 points
    /// and a non-constant normalized sequence.
    pub kappa_hat: Option<f64>,
    /// `count / s^p - constant` along the ladder.
    pub residuals: Vec<f64>,
}

/// Least squares of `y = a + b x`.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Fits `count ≈ C s^p + D s^(p-κ)` along a geometric ladder of `s`.
pub fn fit_growth(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::DegenerateLadder(format!("{} points, need at least 3", points.len())));
    }
    if points.iter().any(|&(s, c)| s <= 0.0 || c <= 0.0 || !s.is_finite() || !c.is_finite()) {
        return Err(Error::DegenerateLadder("counts and cutoffs must be positive".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::DegenerateLadder("cutoffs must increase".into()));
    }
    let (_, exponent) = linear_fit(&xs, &ys);
    let p = exponent.round();
    let norm: Vec<f64> = points.iter().map(|&(s, c)| c / s.powf(p)).collect();
    let mean = norm.iter().sum::<f64>() / norm.len() as f64;
    let spread = norm.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max);
    let mut constant = mean;
    let mut kappa_hat = None;
    if points.len() >= 4 && spread > 1e-12 * mean.abs() {
        // for each κ on a grid, r = C + D s^-κ is linear in (C, D)
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 1..=4000 {
            let kappa = i as f64 * 1e-3;
            let zs: Vec<f64> = points.iter().map(|&(s, _)| s.powf(-kappa)).collect();
            let (c, d) = linear_fit(&zs, &norm);
            let sse: f64 = zs.iter().zip(&norm).map(|(z, r)| (c + d * z - r).powi(2)).sum();
            if sse < best.0 {
                best = (sse, kappa, c);
            }
        }
        kappa_hat = Some(best.1);
        constant = best.2;
    }
    let residuals = norm.iter().map(|r| r - constant).collect();
    Ok(FitResult { exponent, constant, kappa_hat, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Poly;
    use crate::quad::qi_make;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn f3() -> Field {
        Field::prime(3).unwrap()
    }

    fn beta(f: &Field) -> QuadIrr {
        qi_make(&Poly::zero(), &Poly::one(), &Poly::one(), &Poly::from_ints(f, &[1, 0, 1]), f).unwrap()
    }

    fn random_ball(rng: &mut ChaCha8Rng, w: i64, f: &Field) -> BallId {
        let depth = rng.gen_range(-w..5);
        let digits = (-w..depth).map(|_| f.element(rng.gen_range(0..3))).collect();
        BallId { window: w, depth, digits }
    }

    #[test]
    fn haar_masses() {
        let f = f3();
        assert_eq!(target_ball_mass(&TargetMeasure::Haar, &BallId::window_ball(0), &f).unwrap(), Q::from_integer(1));
        let b = BallId::all_at_depth(0, 3, &f).pop().unwrap();
        assert_eq!(target_ball_mass(&TargetMeasure::Haar, &b, &f).unwrap(), Q::new(1, 27));
        assert_eq!(target_ball_mass(&TargetMeasure::Cylinder, &b, &f).unwrap(), Q::new(1, 9));
    }

    #[test]
    fn weighted_closed_form_and_singular() {
        let f = f3();
        let t = TargetMeasure::Weighted { beta: beta(&f), avoid_depth: None };
        // β = √(Y²+1) = Y + 2 Y^-1 + ...; β^σ = -β. The ball (Y, depth 0) holds β.
        let near = ls_ball(&beta(&f).embed(10, &f), 0, 1).unwrap();
        assert_eq!(target_ball_mass(&t, &near, &f), Err(Error::SingularBall));
        // ball of depth 1 around 0: v(0 - β) = -1 twice, mass q^-1 q^-2
        let zero = ls_ball(&Laurent::zero(), 1, 1).unwrap();
        assert_eq!(target_ball_mass(&t, &zero, &f).unwrap(), Q::new(1, 27));
        // with avoidance the mass of a ball around β is finite and additive
        let ta = TargetMeasure::Weighted { beta: beta(&f), avoid_depth: Some(3) };
        let m = target_ball_mass(&ta, &near, &f).unwrap();
        let kids: Q = near.children(&f).iter().map(|c| target_ball_mass(&ta, c, &f).unwrap()).sum();
        assert_eq!(m, kids);
        assert!(m > Q::zero());
    }

    #[test]
    fn masses_are_additive() {
        let f = f3();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let targets = [
            TargetMeasure::Haar,
            TargetMeasure::Weighted { beta: beta(&f), avoid_depth: None },
            TargetMeasure::Weighted { beta: beta(&f), avoid_depth: Some(2) },
        ];
        let mut checked = 0;
        for _ in 0..300 {
            let b = random_ball(&mut rng, 2, &f);
            for t in &targets {
                let Ok(m) = target_ball_mass(t, &b, &f) else { continue };
                let kids: Q = b.children(&f).iter().map(|c| target_ball_mass(t, c, &f).unwrap()).sum();
                assert_eq!(m, kids);
                checked += 1;
            }
        }
        assert!(checked > 500);
    }

    #[test]
    fn discrepancy_examples() {
        let f = f3();
        // one Dirac mass at 0, normalized to total 1, against Haar on O_v
        let mut e = EmpiricalMeasure::new(1, 0);
        e.add(Some(&Laurent::zero()), 5).unwrap();
        let d = discrepancy(&e, &TargetMeasure::Haar, Q::new(1, 5), &f).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
        // exactly Haar-proportional counts
        let mut e = EmpiricalMeasure::new(2, 1);
        for b in BallId::all_at_depth(1, 2, &f) {
            e.histogram.insert(b, 4);
            e.total += 4;
        }
        e.add(None, 7).unwrap();
        let d = discrepancy(&e, &TargetMeasure::Haar, Q::new(1, 4 * 9), &f).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(e.finite_total(), 4 * 27);
        assert_eq!(e.mass(&BallId::window_ball(1)), 4 * 27);
    }

    #[test]
    fn fits() {
        let pts: Vec<(f64, f64)> = (1..8).map(|k| (3f64.powi(k), 7.0 * 9f64.powi(k))).collect();
        let r = fit_growth(&pts).unwrap();
        assert!((r.exponent - 2.0).abs() < 1e-9);
        assert!((r.constant - 7.0).abs() < 1e-9);
        assert_eq!(r.kappa_hat, None);

        let pts: Vec<(f64, f64)> = (2..14).map(|k| {
            let s = 3f64.powi(k);
            (s, 5.0 * s + 2.0 * s.sqrt())
        }).collect();
        let r = fit_growth(&pts).unwrap();
        assert!((r.exponent - 1.0).abs() < 0.05);
        assert!((r.kappa_hat.unwrap() - 0.5).abs() < 1e-2);
        assert!((r.constant - 5.0).abs() < 1e-6);
        assert!(fit_growth(&pts[..2]).is_err());
    }
}
