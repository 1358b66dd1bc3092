//! Analytic limit curves of the cascade and the stopping fixed point.
//!
//! With `z = e^{-t}` the fraction of alive in-links, the large-network
//! limits of the solvent count, default count, healthy/infected in-link
//! counts and the white-ball count are explicit binomial sums over the
//! class decomposition. The cascade stops where the white-ball curve
//! first returns to zero from above: `z_star` is the largest root of
//! `f_W` in `[0, 1]`, and the root is *stable* when `f_W` crosses with
//! positive slope, which is the hypothesis behind all fluctuation laws.

use serde::Serialize;
use thiserror::Error;

use crate::model::{NetworkSpec, Threshold};

/// Exact binomial point mass `P(Bin(d, z) = l)`.
///
/// Direct products up to d = 64, log-gamma beyond; `l` outside `0..=d`
/// gives 0.
pub fn binom_pmf(d: u32, z: f64, l: i64) -> f64 {
    assert!((0.0..=1.0).contains(&z), "z={z} outside [0,1]");
    if l < 0 || l > d as i64 {
        return 0.0;
    }
    let l = l as u32;
    if z == 0.0 {
        return if l == 0 { 1.0 } else { 0.0 };
    }
    if z == 1.0 {
        return if l == d { 1.0 } else { 0.0 };
    }
    if d <= 64 {
        // C(d, l) z^l (1-z)^(d-l) with the coefficient built multiplicatively
        let mut acc = 1.0f64;
        let k = l.min(d - l);
        for i in 0..k {
            acc *= (d - i) as f64 / (i + 1) as f64;
        }
        acc * z.powi(l as i32) * (1.0 - z).powi((d - l) as i32)
    } else {
        use statrs::function::gamma::ln_gamma;
        let (df, lf) = (d as f64, l as f64);
        let ln = ln_gamma(df + 1.0) - ln_gamma(lf + 1.0) - ln_gamma(df - lf + 1.0)
            + lf * z.ln()
            + (df - lf) * (1.0 - z).ln();
        ln.exp()
    }
}

/// Upper binomial tail `P(Bin(d, z) >= k)`, with the conventions
/// `1` for `k <= 0` and `0` for `k > d`.
pub fn binom_tail(d: u32, z: f64, k: i64) -> f64 {
    assert!((0.0..=1.0).contains(&z), "z={z} outside [0,1]");
    if k <= 0 {
        return 1.0;
    }
    if k > d as i64 {
        return 0.0;
    }
    if d <= 64 {
        let mut acc = 0.0;
        for r in k..=d as i64 {
            acc += binom_pmf(d, z, r);
        }
        acc.min(1.0)
    } else {
        if z == 0.0 {
            return 0.0;
        }
        if z == 1.0 {
            return 1.0;
        }
        use statrs::function::beta::beta_reg;
        beta_reg(k as f64, (d as i64 - k + 1) as f64, z)
    }
}

/// Derivative of the tail in `z`: `d/dz P(Bin(d,z) >= k)`.
pub fn binom_tail_dz(d: u32, z: f64, k: i64) -> f64 {
    if k <= 0 || k > d as i64 {
        return 0.0;
    }
    // k C(d,k) z^{k-1} (1-z)^{d-k} = d * pmf(d-1, z, k-1)
    d as f64 * binom_pmf(d - 1, z, k - 1)
}

/// Derivative of the point mass in `z`: `d/dz P(Bin(d,z) = l)`.
pub fn binom_pmf_dz(d: u32, z: f64, l: i64) -> f64 {
    if d == 0 {
        return 0.0;
    }
    d as f64 * (binom_pmf(d - 1, z, l - 1) - binom_pmf(d - 1, z, l))
}

/// Solvency tail index: a node with threshold `theta` is solvent while at
/// least `d - theta + 1` of its in-links are alive. Immune nodes get a
/// nonpositive index, making the tail identically 1.
pub fn solvency_index(d: u32, theta: Threshold) -> i64 {
    match theta {
        Threshold::Finite(t) => d as i64 - t as i64 + 1,
        Threshold::Immune => 0,
    }
}

/// Iterator over the threshold atoms of a class with positive mass
/// semantics: finite 0..=d plus the immune atom.
pub fn threshold_atoms(d: u32) -> impl Iterator<Item = Threshold> {
    (0..=d)
        .map(Threshold::Finite)
        .chain(std::iter::once(Threshold::Immune))
}

/// Values of the five limit curves at one `z`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LimitValues {
    /// Fraction of solvent institutions (`f_S`).
    pub solvent: f64,
    /// Fraction of defaulted institutions (`f_D = 1 - f_S`).
    pub defaulted: f64,
    /// Healthy in-links per institution (`f_{H+}`).
    pub healthy_in: f64,
    /// Infected in-links per institution (`f_{I+} = lambda z - f_{H+}`).
    pub infected_in: f64,
    /// White (unprocessed defaulted) out-links per institution (`f_W`).
    pub white: f64,
}

/// One per-cell limit `s_{x,theta,l}(z)`: solvent institutions of class
/// `class` with threshold `theta` and `ell` defaulted debtors.
#[derive(Debug, Clone, Serialize)]
pub struct CellLimit {
    pub class: usize,
    pub theta: Threshold,
    pub ell: u32,
    pub value: f64,
}

/// Full evaluation of the limit curves at one `z`.
#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    pub z: f64,
    pub lambda: f64,
    pub values: LimitValues,
    pub derivatives: LimitValues,
    pub cells: Vec<CellLimit>,
}

fn view(spec: &NetworkSpec, finite_n: bool) -> impl Iterator<Item = (usize, f64, u32, u32)> + '_ {
    spec.classes
        .iter()
        .enumerate()
        .map(move |(x, c)| (x, spec.weight(x, finite_n), c.d_in, c.d_out))
}

/// `f_S(z)` (finite-n aware).
pub fn f_solvent(spec: &NetworkSpec, z: f64, finite_n: bool) -> f64 {
    let mut acc = 0.0;
    for (x, w, d, _) in view(spec, finite_n) {
        for theta in threshold_atoms(d) {
            let q = spec.q(x, theta, finite_n);
            if q > 0.0 {
                acc += w * q * binom_tail(d, z, solvency_index(d, theta));
            }
        }
    }
    acc
}

/// `f_W(z)` (finite-n aware).
pub fn f_white(spec: &NetworkSpec, z: f64, finite_n: bool) -> f64 {
    let mut acc = spec_lambda(spec, finite_n) * z;
    for (x, w, d, d_out) in view(spec, finite_n) {
        for theta in threshold_atoms(d) {
            let q = spec.q(x, theta, finite_n);
            if q > 0.0 {
                acc -= w * d_out as f64 * q * binom_tail(d, z, solvency_index(d, theta));
            }
        }
    }
    acc
}

/// `f_W'(z)` (finite-n aware).
pub fn f_white_dz(spec: &NetworkSpec, z: f64, finite_n: bool) -> f64 {
    let mut acc = spec_lambda(spec, finite_n);
    for (x, w, d, d_out) in view(spec, finite_n) {
        for theta in threshold_atoms(d) {
            let q = spec.q(x, theta, finite_n);
            if q > 0.0 {
                acc -= w * d_out as f64 * q * binom_tail_dz(d, z, solvency_index(d, theta));
            }
        }
    }
    acc
}

/// Mean degree, finite-n aware.
pub fn spec_lambda(spec: &NetworkSpec, finite_n: bool) -> f64 {
    view(spec, finite_n).map(|(_, w, d, _)| w * d as f64).sum()
}

/// Evaluates every limit curve, its derivative and all per-cell limits at `z`.
pub fn eval_limits(spec: &NetworkSpec, z: f64) -> LimitReport {
    eval_limits_with(spec, z, false)
}

/// [`eval_limits`] with optional finite-n overrides.
pub fn eval_limits_with(spec: &NetworkSpec, z: f64, finite_n: bool) -> LimitReport {
    let lambda = spec_lambda(spec, finite_n);
    let mut v = LimitValues {
        solvent: 0.0,
        defaulted: 0.0,
        healthy_in: 0.0,
        infected_in: 0.0,
        white: lambda * z,
    };
    let mut dz = LimitValues {
        solvent: 0.0,
        defaulted: 0.0,
        healthy_in: 0.0,
        infected_in: 0.0,
        white: lambda,
    };
    let mut cells = Vec::new();
    for (x, w, d, d_out) in view(spec, finite_n) {
        for theta in threshold_atoms(d) {
            let q = spec.q(x, theta, finite_n);
            if q == 0.0 {
                continue;
            }
            let pi = solvency_index(d, theta);
            let tail = binom_tail(d, z, pi);
            let tail_dz = binom_tail_dz(d, z, pi);
            v.solvent += w * q * tail;
            dz.solvent += w * q * tail_dz;
            v.white -= w * d_out as f64 * q * tail;
            dz.white -= w * d_out as f64 * q * tail_dz;
            // healthy in-links: alive links of solvent institutions
            for s in pi.max(0)..=d as i64 {
                v.healthy_in += w * q * s as f64 * binom_pmf(d, z, s);
                dz.healthy_in += w * q * s as f64 * binom_pmf_dz(d, z, s);
            }
            // per-cell limits: ell defaulted debtors among solvent nodes
            let max_ell = match theta {
                Threshold::Finite(0) => continue,
                Threshold::Finite(t) => t - 1,
                Threshold::Immune => d,
            };
            for ell in 0..=max_ell {
                cells.push(CellLimit {
                    class: x,
                    theta,
                    ell,
                    value: w * q * binom_pmf(d, 1.0 - z, ell as i64),
                });
            }
        }
    }
    v.defaulted = 1.0 - v.solvent;
    dz.defaulted = -dz.solvent;
    v.infected_in = lambda * z - v.healthy_in;
    dz.infected_in = lambda - dz.healthy_in;
    LimitReport {
        z,
        lambda,
        values: v,
        derivatives: dz,
        cells,
    }
}

/// Limit curves parameterized by process time `t >= 0` via `z = e^{-t}`.
pub fn limits_at_time(spec: &NetworkSpec, t: f64) -> LimitReport {
    assert!(t >= 0.0, "time must be nonnegative");
    eval_limits(spec, (-t).exp())
}

/// Regime of the stopping fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `f_W > 0` on (0, 1]: the cascade consumes the whole network.
    TotalCollapse,
    /// Largest root in (0, 1).
    Interior,
    /// No initial defaults: root exactly at `z = 1`.
    NoContagion,
}

/// The stopping fixed point of the white-ball curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FixedPoint {
    pub z_star: f64,
    /// Slope of `f_W` at the root; the fluctuation laws need it positive.
    pub alpha: f64,
    pub stable: bool,
    pub regime: Regime,
}

#[derive(Debug, Error)]
pub enum LimitsError {
    #[error("tolerance must be positive")]
    BadTolerance,
}

/// Grid resolution of the downward root scan.
pub const ZSTAR_SCAN_POINTS: usize = 10_000;
/// A grid value this close to zero is treated as a tangency candidate.
const TANGENCY_TOL: f64 = 1e-9;

/// Finds the largest root of `f_W` on `[0, 1]` by a downward grid scan
/// plus bisection.
///
/// Returns `z_star = 0` with [`Regime::TotalCollapse`] when `f_W` is
/// positive on the whole grid, and [`Regime::NoContagion`] when the only
/// root is exactly `z = 1` (no initial defaults). Tangential roots (grid
/// point within `1e-9` of zero with no sign change nearby) are reported
/// at the touching point with `stable = false`.
pub fn solve_fixed_point(spec: &NetworkSpec, tol: f64) -> Result<FixedPoint, LimitsError> {
    solve_root(|z| f_white(spec, z, false), |z| f_white_dz(spec, z, false), tol)
}

/// Finite-n variant of [`solve_fixed_point`] (used for the fluctuation-law
/// centering point).
pub fn solve_fixed_point_finite_n(spec: &NetworkSpec, tol: f64) -> Result<FixedPoint, LimitsError> {
    solve_root(|z| f_white(spec, z, true), |z| f_white_dz(spec, z, true), tol)
}

pub(crate) fn solve_root<F, G>(f: F, fp: G, tol: f64) -> Result<FixedPoint, LimitsError>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if tol <= 0.0 {
        return Err(LimitsError::BadTolerance);
    }
    let f1 = f(1.0);
    if f1.abs() <= TANGENCY_TOL {
        let alpha = fp(1.0);
        return Ok(FixedPoint {
            z_star: 1.0,
            alpha,
            stable: alpha > 0.0,
            regime: Regime::NoContagion,
        });
    }
    let grid = ZSTAR_SCAN_POINTS;
    let mut hi = 1.0;
    let mut f_hi = f1;
    let mut tangency: Option<f64> = None;
    for i in (0..grid).rev() {
        let z = i as f64 / grid as f64;
        let fz = f(z);
        if fz <= 0.0 && z > 0.0 {
            // sign change in [z, hi]: bisect
            let root = bisect(&f, z, hi, fz, f_hi, tol);
            let alpha = fp(root);
            return Ok(FixedPoint {
                z_star: root,
                alpha,
                stable: alpha > 0.0,
                regime: Regime::Interior,
            });
        }
        if z > 0.0 && fz.abs() <= TANGENCY_TOL && tangency.is_none() {
            tangency = Some(z);
        }
        if i == 0 && fz <= 0.0 {
            // root at exactly zero boundary
            let alpha = fp(0.0);
            return Ok(FixedPoint {
                z_star: 0.0,
                alpha,
                stable: false,
                regime: Regime::TotalCollapse,
            });
        }
        hi = z;
        f_hi = fz;
    }
    if let Some(z) = tangency {
        // touches zero without crossing: unstable tangency
        return Ok(FixedPoint {
            z_star: z,
            alpha: fp(z),
            stable: false,
            regime: Regime::Interior,
        });
    }
    Ok(FixedPoint {
        z_star: 0.0,
        alpha: fp(0.0),
        stable: false,
        regime: Regime::TotalCollapse,
    })
}

fn bisect<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, f_lo: f64, _f_hi: f64, tol: f64) -> f64 {
    // invariant: f(lo) <= 0 < f(hi)
    debug_assert!(f_lo <= 0.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One point of a shock-sweep curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub z_star: f64,
    pub stable: bool,
    pub regime: Regime,
}

/// Result of sweeping the fixed point along a one-parameter spec family.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
    /// Whether `z_star` is nonincreasing in the sweep parameter (up to
    /// 1e-9 slack); larger shocks should not shrink the cascade.
    pub monotone: bool,
}

/// Solves the fixed point for each `eps` in `eps_grid` with specs from
/// `family`.
pub fn sweep_fixed_points<F>(family: F, eps_grid: &[f64], tol: f64) -> Result<SweepCurve, LimitsError>
where
    F: Fn(f64) -> NetworkSpec,
{
    let mut points = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let fp = solve_fixed_point(&family(eps), tol)?;
        points.push(SweepPoint {
            eps,
            z_star: fp.z_star,
            stable: fp.stable,
            regime: fp.regime,
        });
    }
    let monotone = points.windows(2).all(|w| w[1].z_star <= w[0].z_star + 1e-9);
    Ok(SweepCurve { points, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Characteristic, NetworkSpec};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    pub fn single(d: u32, pmf: Vec<f64>, immune: f64) -> NetworkSpec {
        NetworkSpec {
            classes: vec![Characteristic {
                id: "a".into(),
                d_in: d,
                d_out: d,
                weight: 1.0,
                threshold_pmf: pmf,
                immune_mass: immune,
                finite_n: None,
            }],
        }
    }

    /// The running single-class example: d=3, q(0)=0.1, q(3)=0.9.
    pub fn spec_c() -> NetworkSpec {
        single(3, vec![0.1, 0.0, 0.0, 0.9], 0.0)
    }

    #[test]
    fn pmf_and_tail_basics() {
        assert_relative_eq!(binom_pmf(3, 0.5, 1), 0.375);
        assert_relative_eq!(binom_tail(2, 0.5, 1), 0.75);
        for d in [0u32, 1, 5, 9] {
            for z in [0.0, 0.3, 1.0] {
                assert_eq!(binom_tail(d, z, 0), 1.0);
                assert_eq!(binom_tail(d, z, -3), 1.0);
                assert_eq!(binom_tail(d, z, d as i64 + 1), 0.0);
            }
        }
    }

    #[test]
    fn large_degree_paths_agree() {
        // straddle the d=64 switch between direct products and log space
        for z in [0.2, 0.7] {
            for l in [0i64, 30, 64, 65, 80] {
                let direct: f64 = (0..=80u32)
                    .map(|r| if r as i64 == l { binom_pmf_direct(80, z, r) } else { 0.0 })
                    .sum();
                assert_relative_eq!(binom_pmf(80, z, l), direct, max_relative = 1e-11);
            }
            assert_relative_eq!(
                binom_tail(80, z, 40),
                (40..=80).map(|r| binom_pmf_direct(80, z, r)).sum::<f64>(),
                max_relative = 1e-10
            );
        }
    }

    fn binom_pmf_direct(d: u32, z: f64, l: u32) -> f64 {
        let mut c = 1.0f64;
        for i in 0..l.min(d - l) {
            c *= (d - i) as f64 / (i + 1) as f64;
        }
        c * z.powi(l as i32) * (1.0 - z).powi((d - l) as i32)
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = 1e-6;
        for d in [1u32, 3, 7] {
            for k in 1..=d as i64 {
                for z in [0.15, 0.5, 0.85] {
                    let fd = (binom_tail(d, z + h, k) - binom_tail(d, z - h, k)) / (2.0 * h);
                    assert_abs_diff_eq!(binom_tail_dz(d, z, k), fd, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn white_curve_hand_value() {
        // f_W(0.5) = 1.5 - 2.7 (1 - 0.125) = -0.8625
        assert_relative_eq!(f_white(&spec_c(), 0.5, false), -0.8625, epsilon = 1e-12);
    }

    #[test]
    fn complement_identities() {
        let spec = spec_c();
        for z in [0.1, 0.35, 0.8, 1.0] {
            let r = eval_limits(&spec, z);
            assert_relative_eq!(r.values.solvent + r.values.defaulted, 1.0);
            assert_relative_eq!(r.derivatives.solvent + r.derivatives.defaulted, 0.0);
            assert_relative_eq!(
                r.values.healthy_in + r.values.infected_in,
                r.lambda * z,
                epsilon = 1e-12
            );
            assert!(r.values.solvent >= 0.0 && r.values.solvent <= 1.0);
            assert!(r.values.healthy_in >= -1e-12 && r.values.healthy_in <= r.lambda * z + 1e-12);
        }
    }

    #[test]
    fn cells_sum_to_solvent_fraction() {
        let specs = [
            spec_c(),
            single(4, vec![0.05, 0.1, 0.2, 0.3, 0.25], 0.1),
        ];
        for spec in specs {
            for z in [0.2, 0.6, 0.95] {
                let r = eval_limits(&spec, z);
                let total: f64 = r.cells.iter().map(|c| c.value).sum();
                assert_abs_diff_eq!(total, r.values.solvent, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn fixed_point_spec_c() {
        let fp = solve_fixed_point(&spec_c(), 1e-12).unwrap();
        // analytic root: 1 - z* = (sqrt(13) - 3) / 6
        let w = (13.0f64.sqrt() - 3.0) / 6.0;
        assert_abs_diff_eq!(fp.z_star, 1.0 - w, epsilon = 1e-10);
        assert_abs_diff_eq!(fp.alpha, 3.0 - 8.1 * w * w, epsilon = 1e-8);
        assert!(fp.stable);
        assert_eq!(fp.regime, Regime::Interior);
        let f_d = 1.0 - f_solvent(&spec_c(), fp.z_star, false);
        assert_abs_diff_eq!(f_d, 0.100925213, epsilon = 1e-8);
    }

    #[test]
    fn fixed_point_total_collapse() {
        // every institution initially insolvent
        let spec = single(3, vec![1.0, 0.0, 0.0, 0.0], 0.0);
        let fp = solve_fixed_point(&spec, 1e-10).unwrap();
        assert_eq!(fp.regime, Regime::TotalCollapse);
        assert_eq!(fp.z_star, 0.0);

        // contagious thresholds: q(0)=0.1, q(1)=0.9 collapses too
        let spec_d = single(3, vec![0.1, 0.9, 0.0, 0.0], 0.0);
        let fp = solve_fixed_point(&spec_d, 1e-10).unwrap();
        assert_eq!(fp.regime, Regime::TotalCollapse);
    }

    #[test]
    fn fixed_point_no_contagion() {
        let spec = single(3, vec![0.0, 0.0, 0.0, 1.0], 0.0);
        let fp = solve_fixed_point(&spec, 1e-10).unwrap();
        assert_eq!(fp.regime, Regime::NoContagion);
        assert_eq!(fp.z_star, 1.0);
        assert!(fp.stable);
        assert_relative_eq!(f_solvent(&spec, 1.0, false), 1.0);
    }

    #[test]
    fn time_parameterization_matches_z() {
        let spec = spec_c();
        let t = -(0.95f64.ln());
        let a = limits_at_time(&spec, t);
        let b = eval_limits(&spec, 0.95);
        assert_abs_diff_eq!(a.values.white, b.values.white, epsilon = 1e-12);
        assert_abs_diff_eq!(a.values.solvent, b.values.solvent, epsilon = 1e-12);
    }

    #[test]
    fn time_zero_only_fundamental_defaults() {
        let r = limits_at_time(&spec_c(), 0.0);
        assert_relative_eq!(r.values.solvent, 0.9);
        assert_relative_eq!(r.values.defaulted, 0.1);
    }

    #[test]
    fn sweep_regimes() {
        // family q(0)=eps, q(3)=1-eps: interior roots, continuous curve
        let family = |eps: f64| single(3, vec![eps, 0.0, 0.0, 1.0 - eps], 0.0);
        let grid: Vec<f64> = (0..50).map(|i| i as f64 / 49.0 * 0.5).collect();
        let curve = sweep_fixed_points(family, &grid, 1e-10).unwrap();
        assert!(curve.monotone);
        assert_eq!(curve.points[0].regime, Regime::NoContagion);
        let mut max_jump = 0.0f64;
        for w in curve.points.windows(2) {
            if w[0].regime == w[1].regime {
                max_jump = max_jump.max((w[0].z_star - w[1].z_star).abs());
            }
        }
        assert!(max_jump < 0.05, "max jump {max_jump}");

        // family q(0)=eps, q(1)=1-eps: collapse for every eps > 0
        let family = |eps: f64| single(3, vec![eps, 1.0 - eps, 0.0, 0.0], 0.0);
        let grid = [0.01, 0.05, 0.2, 0.5];
        let curve = sweep_fixed_points(family, &grid, 1e-10).unwrap();
        for p in curve.points {
            assert_eq!(p.regime, Regime::TotalCollapse, "eps={}", p.eps);
        }
    }

    #[test]
    fn solver_residual_bound() {
        let spec = spec_c();
        for tol in [1e-6, 1e-9, 1e-12] {
            let fp = solve_fixed_point(&spec, tol).unwrap();
            let lambda = spec_lambda(&spec, false);
            assert!(f_white(&spec, fp.z_star, false).abs() <= 10.0 * tol * lambda);
        }
    }
}
