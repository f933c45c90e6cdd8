//! Quadrature rules for panel integration: 1D Gauss-Legendre, symmetric and
//! collapsed triangle rules, and the Sauter-Schwab regularizing coordinate
//! transforms for touching panel pairs.
//!
//! Reference triangle convention throughout: `T = {(u,v): 0 <= v <= u <= 1}`
//! with the chart `chi(u,v) = p1 + u*(p2-p1) + v*(p3-p2)`, whose surface
//! Jacobian is twice the panel area. Barycentric weights in this chart are
//! `(1-u, u-v, v)`.

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [0,1].
pub fn gauss_legendre_01(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Newton iteration from the Chebyshev estimate on [-1,1]
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (x + 1.0), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Legendre polynomial value and derivative by recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature point on the reference triangle in chart coordinates, with a
/// weight normalized so that `integral = area * sum(w * f)`.
pub type TriPoint = (f64, f64, f64); // (u, v, w)

/// Symmetric rule for low degrees, collapsed tensor Gauss otherwise.
pub fn tri_rule(degree: usize) -> Vec<TriPoint> {
    match degree {
        0 | 1 => vec![bary_to_uv(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0)],
        2 => {
            let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
            vec![
                bary_to_uv(a, b, b, 1.0 / 3.0),
                bary_to_uv(b, a, b, 1.0 / 3.0),
                bary_to_uv(b, b, a, 1.0 / 3.0),
            ]
        }
        3 | 4 => {
            // Dunavant degree 4, 6 points
            let mut pts = Vec::new();
            for (a, w) in [
                (0.445_948_490_915_965, 0.223_381_589_678_011),
                (0.091_576_213_509_771, 0.109_951_743_655_322),
            ] {
                let c = 1.0 - 2.0 * a;
                pts.push(bary_to_uv(c, a, a, w));
                pts.push(bary_to_uv(a, c, a, w));
                pts.push(bary_to_uv(a, a, c, w));
            }
            pts
        }
        5 => {
            // Dunavant degree 5, 7 points
            let mut pts = vec![bary_to_uv(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.225)];
            for (a, w) in [
                (0.470_142_064_105_115, 0.132_394_152_788_506),
                (0.101_286_507_323_456, 0.125_939_180_544_827),
            ] {
                let c = 1.0 - 2.0 * a;
                pts.push(bary_to_uv(c, a, a, w));
                pts.push(bary_to_uv(a, c, a, w));
                pts.push(bary_to_uv(a, a, c, w));
            }
            pts
        }
        d => collapsed_rule(d / 2 + 2),
    }
}

fn bary_to_uv(_l1: f64, l2: f64, l3: f64, w: f64) -> TriPoint {
    (l2 + l3, l3, w)
}

/// Collapsed q x q tensor Gauss rule on the reference triangle:
/// `u = s, v = s*t`, Jacobian `s`, normalized weights (sum to 1).
pub fn collapsed_rule(q: usize) -> Vec<TriPoint> {
    let g = gauss_legendre_01(q);
    let mut pts = Vec::with_capacity(q * q);
    for &(s, ws) in &g {
        for &(t, wt) in &g {
            // reference-triangle measure is 1/2; normalize by 2
            pts.push((s, s * t, 2.0 * ws * wt * s));
        }
    }
    pts
}

/// Touching-pair configuration after vertex relabeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Touch {
    Identical,
    SharedEdge,
    SharedVertex,
}

/// One evaluation node of the regularized 4D rule:
/// points `(ux, vx)` on the test chart, `(uy, vy)` on the trial chart, and a
/// combined weight. The weight incorporates the transform Jacobians and the
/// 4D Gauss weights; the integral over the chart-coordinate product domain is
/// `sum(w * F(x, y))`, to be scaled by `4 * area_x * area_y` by the caller.
pub type PairPoint = ([f64; 2], [f64; 2], f64);

/// Sauter-Schwab rule with `q` Gauss points per axis for a touching pair.
///
/// Vertices of both panels must be relabeled so the shared simplex comes
/// first: identical panels in the same order, a shared edge as the first two
/// vertices of both (in the same direction), a shared vertex first.
pub fn sauter_schwab_rule(touch: Touch, q: usize) -> Vec<PairPoint> {
    let g = gauss_legendre_01(q);
    let mut out = Vec::new();
    for &(e1, w1) in &g {
        for &(e2, w2) in &g {
            for &(e3, w3) in &g {
                for &(xi, wx) in &g {
                    let w4 = w1 * w2 * w3 * wx;
                    append_terms(touch, e1, e2, e3, xi, w4, &mut out);
                }
            }
        }
    }
    out
}

fn append_terms(
    touch: Touch,
    e1: f64,
    e2: f64,
    e3: f64,
    xi: f64,
    w: f64,
    out: &mut Vec<PairPoint>,
) {
    let w_ = xi.powi(3) * w;
    match touch {
        Touch::Identical => {
            let j = w_ * e1 * e1 * e2;
            let pairs = [
                ([1.0, 1.0 - e1 + e1 * e2], [1.0 - e1 * e2 * e3, 1.0 - e1]),
                ([1.0 - e1 * e2 * e3, 1.0 - e1], [1.0, 1.0 - e1 + e1 * e2]),
                ([1.0, e1 * (1.0 - e2 + e2 * e3)], [1.0 - e1 * e2, e1 * (1.0 - e2)]),
                ([1.0 - e1 * e2, e1 * (1.0 - e2)], [1.0, e1 * (1.0 - e2 + e2 * e3)]),
                ([1.0 - e1 * e2 * e3, e1 * (1.0 - e2 * e3)], [1.0, e1 * (1.0 - e2)]),
                ([1.0, e1 * (1.0 - e2)], [1.0 - e1 * e2 * e3, e1 * (1.0 - e2 * e3)]),
            ];
            for (x, y) in pairs {
                out.push((scale(x, xi), scale(y, xi), j));
            }
        }
        Touch::SharedEdge => {
            let j1 = w_ * e1 * e1;
            let j2 = w_ * e1 * e1 * e2;
            out.push((
                scale([1.0, e1 * e3], xi),
                scale([1.0 - e1 * e2, e1 * (1.0 - e2)], xi),
                j1,
            ));
            let pairs = [
                ([1.0, e1], [1.0 - e1 * e2 * e3, e1 * e2 * (1.0 - e3)]),
                ([1.0 - e1 * e2, e1 * (1.0 - e2)], [1.0, e1 * e2 * e3]),
                ([1.0 - e1 * e2 * e3, e1 * e2 * (1.0 - e3)], [1.0, e1]),
                ([1.0 - e1 * e2 * e3, e1 * (1.0 - e2 * e3)], [1.0, e1 * e2]),
            ];
            for (x, y) in pairs {
                out.push((scale(x, xi), scale(y, xi), j2));
            }
        }
        Touch::SharedVertex => {
            let j = w_ * e2;
            out.push((scale([1.0, e1], xi), scale([e2, e2 * e3], xi), j));
            out.push((scale([e2, e2 * e3], xi), scale([1.0, e1], xi), j));
        }
    }
}

fn scale(p: [f64; 2], s: f64) -> [f64; 2] {
    [p[0] * s, p[1] * s]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..=12usize {
            let rule = gauss_legendre_01(n);
            let wsum: f64 = rule.iter().map(|&(_, w)| w).sum();
            assert!((wsum - 1.0).abs() < 1e-14, "n = {n}");
            // exact through degree 2n-1
            for d in 0..=(2 * n - 1) {
                let approx: f64 = rule.iter().map(|&(x, w)| w * x.powi(d as i32)).sum();
                let exact = 1.0 / (d as f64 + 1.0);
                assert!((approx - exact).abs() < 1e-13, "n = {n}, degree {d}");
            }
        }
    }

    /// exact value of the monomial u^a v^b over the reference triangle
    fn tri_monomial(a: u32, b: u32) -> f64 {
        1.0 / ((b as f64 + 1.0) * (a as f64 + b as f64 + 2.0))
    }

    #[test]
    fn triangle_rules_hit_their_degree() {
        for degree in 1..=10usize {
            let rule = tri_rule(degree);
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let approx: f64 = rule
                        .iter()
                        .map(|&(u, v, w)| 0.5 * w * u.powi(a as i32) * v.powi(b as i32))
                        .sum();
                    let exact = tri_monomial(a, b);
                    assert!(
                        (approx - exact).abs() < 1e-14,
                        "degree {degree}, monomial u^{a} v^{b}: {approx} vs {exact}"
                    );
                }
            }
        }
    }

    /// The Sauter-Schwab decompositions must reproduce the exact integral of
    /// any smooth function over T x T; polynomials make that check exact.
    /// This pins down both the argument transforms and their Jacobians.
    #[test]
    fn sauter_schwab_decomposition_is_exact_for_polynomials() {
        for touch in [Touch::Identical, Touch::SharedEdge, Touch::SharedVertex] {
            let rule = sauter_schwab_rule(touch, 6);
            for (ax, bx, ay, by) in [
                (0u32, 0u32, 0u32, 0u32),
                (1, 0, 0, 0),
                (0, 1, 0, 0),
                (0, 0, 1, 0),
                (0, 0, 0, 1),
                (1, 1, 0, 0),
                (2, 0, 1, 0),
                (1, 0, 1, 1),
                (2, 1, 1, 2),
                (3, 2, 2, 1),
            ] {
                let approx: f64 = rule
                    .iter()
                    .map(|&(x, y, w)| {
                        w * x[0].powi(ax as i32)
                            * x[1].powi(bx as i32)
                            * y[0].powi(ay as i32)
                            * y[1].powi(by as i32)
                    })
                    .sum();
                let exact = tri_monomial(ax, bx) * tri_monomial(ay, by);
                assert!(
                    (approx - exact).abs() < 1e-13,
                    "{touch:?}: x^({ax},{bx}) y^({ay},{by}): {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn sauter_schwab_points_stay_in_the_reference_triangle() {
        for touch in [Touch::Identical, Touch::SharedEdge, Touch::SharedVertex] {
            for (x, y, _) in sauter_schwab_rule(touch, 4) {
                for p in [x, y] {
                    assert!(0.0 <= p[1] && p[1] <= p[0] && p[0] <= 1.0, "{touch:?}: {p:?}");
                }
            }
        }
    }
}
