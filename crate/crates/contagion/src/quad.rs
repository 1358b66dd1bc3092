//! Panel-based Gauss-Legendre quadrature with uniform refinement.
//!
//! The covariance kernels integrate smooth products of polynomials and
//! rational factors over `[y, 1]`, so a fixed 15-point rule per panel with
//! panel doubling until the relative change falls below tolerance is both
//! fast and accurate to near machine precision.

/// 15-point Gauss-Legendre abscissae on (-1, 1), positive half.
const GL15_X: [f64; 8] = [
    0.0,
    0.2011940939974345,
    0.3941513470775634,
    0.5709721726085388,
    0.7244177313601700,
    0.8482065834104272,
    0.9372733924007059,
    0.9879925180204854,
];

/// Matching weights.
const GL15_W: [f64; 8] = [
    0.2025782419255613,
    0.1984314853271116,
    0.1861610000155622,
    0.1662692058169939,
    0.1395706779261543,
    0.1071592204671719,
    0.0703660474881081,
    0.0307532419961173,
];

/// Settings for the refinement loop.
#[derive(Debug, Clone, Copy)]
pub struct QuadSettings {
    /// Stop when successive refinements agree to this relative tolerance.
    pub rel_tol: f64,
    /// Panel counts go 2^0, 2^1, ..., 2^max_doublings.
    pub max_doublings: u32,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings {
            rel_tol: 1e-10,
            max_doublings: 14,
        }
    }
}

fn gl15_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = GL15_W[0] * f(c);
    for i in 1..8 {
        let dx = h * GL15_X[i];
        acc += GL15_W[i] * (f(c - dx) + f(c + dx));
    }
    acc * h
}

fn with_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for k in 0..panels {
        let lo = a + k as f64 * h;
        acc += gl15_panel(f, lo, lo + h);
    }
    acc
}

/// Integrates `f` over `[a, b]`, doubling the panel count until converged.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, settings: QuadSettings) -> f64 {
    if a >= b {
        return 0.0;
    }
    let mut prev = with_panels(&f, a, b, 1);
    for k in 1..=settings.max_doublings {
        let next = with_panels(&f, a, b, 1usize << k);
        if (next - prev).abs() <= settings.rel_tol * next.abs() + f64::MIN_POSITIVE {
            return next;
        }
        prev = next;
    }
    prev
}

/// Composite Simpson rule with a fixed panel count.
///
/// Slow, brute-force reference used by validation suites to check the
/// Gauss-Legendre path; not used by the kernels themselves.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    if a >= b {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        let x = a + k as f64 * h;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}
