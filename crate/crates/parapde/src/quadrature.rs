//! Fixed quadrature rules on triangles (barycentric) and edges (unit
//! interval). Weights sum to one; the caller scales by area or length.

/// (l0, l1, l2, weight) tuples, exact for polynomials up to the requested
/// degree. Requests between table entries round up.
pub fn triangle_rule(degree: usize) -> &'static [(f64, f64, f64, f64)] {
    match degree {
        0 | 1 => &TRI_DEG1,
        2 => &TRI_DEG2,
        3 | 4 => &TRI_DEG4,
        _ => &TRI_DEG6,
    }
}

/// (s, weight) tuples on [0, 1]; Gauss-Legendre, exact up to the degree.
pub fn edge_rule(degree: usize) -> &'static [(f64, f64)] {
    match degree {
        0 | 1 => &EDGE_DEG1,
        2 | 3 => &EDGE_DEG3,
        4 | 5 => &EDGE_DEG5,
        _ => &EDGE_DEG7,
    }
}

const TRI_DEG1: [(f64, f64, f64, f64); 1] = [(
    1.0 / 3.0,
    1.0 / 3.0,
    1.0 / 3.0,
    1.0,
)];

const TRI_DEG2: [(f64, f64, f64, f64); 3] = [
    (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0),
    (1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0),
    (1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0),
];

// Dunavant order-4 (6 points) and order-6 (12 points) rules.
const A4A: f64 = 0.445_948_490_915_965;
const A4B: f64 = 0.091_576_213_509_771;
const W4A: f64 = 0.223_381_589_678_011;
const W4B: f64 = 0.109_951_743_655_322;
const TRI_DEG4: [(f64, f64, f64, f64); 6] = [
    (1.0 - 2.0 * A4A, A4A, A4A, W4A),
    (A4A, 1.0 - 2.0 * A4A, A4A, W4A),
    (A4A, A4A, 1.0 - 2.0 * A4A, W4A),
    (1.0 - 2.0 * A4B, A4B, A4B, W4B),
    (A4B, 1.0 - 2.0 * A4B, A4B, W4B),
    (A4B, A4B, 1.0 - 2.0 * A4B, W4B),
];

const A6A: f64 = 0.249_286_745_170_910;
const A6B: f64 = 0.063_089_014_491_502;
const A6C: f64 = 0.310_352_451_033_785;
const B6C: f64 = 0.053_145_049_844_816;
const W6A: f64 = 0.116_786_275_726_379;
const W6B: f64 = 0.050_844_906_370_207;
const W6C: f64 = 0.082_851_075_618_374;
const C6: f64 = 1.0 - A6C - B6C;
const TRI_DEG6: [(f64, f64, f64, f64); 12] = [
    (1.0 - 2.0 * A6A, A6A, A6A, W6A),
    (A6A, 1.0 - 2.0 * A6A, A6A, W6A),
    (A6A, A6A, 1.0 - 2.0 * A6A, W6A),
    (1.0 - 2.0 * A6B, A6B, A6B, W6B),
    (A6B, 1.0 - 2.0 * A6B, A6B, W6B),
    (A6B, A6B, 1.0 - 2.0 * A6B, W6B),
    (A6C, B6C, C6, W6C),
    (B6C, A6C, C6, W6C),
    (A6C, C6, B6C, W6C),
    (B6C, C6, A6C, W6C),
    (C6, A6C, B6C, W6C),
    (C6, B6C, A6C, W6C),
];

const EDGE_DEG1: [(f64, f64); 1] = [(0.5, 1.0)];

const G3: f64 = 0.288_675_134_594_812_9; // 1/(2 sqrt(3))
const EDGE_DEG3: [(f64, f64); 2] = [(0.5 - G3, 0.5), (0.5 + G3, 0.5)];

const G5: f64 = 0.387_298_334_620_741_7; // sqrt(3/5)/2
const EDGE_DEG5: [(f64, f64); 3] = [
    (0.5 - G5, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.5 + G5, 5.0 / 18.0),
];

const G7A: f64 = 0.169_990_521_792_428_13; // 0.3399810435848563 / 2
const G7B: f64 = 0.430_568_155_797_026_3; // 0.8611363115940526 / 2
const W7A: f64 = 0.326_072_577_431_273_05; // 0.6521451548625461 / 2
const W7B: f64 = 0.173_927_422_568_726_9; // 0.3478548451374538 / 2
const EDGE_DEG7: [(f64, f64); 4] = [
    (0.5 - G7B, W7B),
    (0.5 - G7A, W7A),
    (0.5 + G7A, W7A),
    (0.5 + G7B, W7B),
];

#[cfg(test)]
mod tests {
    use super::*;

    fn tri_integrate(degree: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
        // reference triangle (0,0)-(1,0)-(0,1), area 1/2
        triangle_rule(degree)
            .iter()
            .map(|&(l0, l1, _l2, w)| {
                // x = l1, y = l2 with vertices v0=(0,0), v1=(1,0), v2=(0,1)
                let x = l1;
                let y = 1.0 - l0 - l1;
                0.5 * w * f(x, y)
            })
            .sum()
    }

    fn exact_monomial(p: u32, q: u32) -> f64 {
        // int_T x^p y^q over reference triangle = p! q! / (p+q+2)!
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>().max(1.0);
        fact(p) * fact(q) / fact(p + q + 2)
    }

    #[test]
    fn triangle_rules_integrate_monomials_exactly() {
        for (deg, max) in [(1usize, 1u32), (2, 2), (4, 4), (6, 6)] {
            for p in 0..=max {
                for q in 0..=(max - p) {
                    let got = tri_integrate(deg, |x, y| x.powi(p as i32) * y.powi(q as i32));
                    let want = exact_monomial(p, q);
                    assert!(
                        (got - want).abs() < 1e-14,
                        "deg {deg} monomial x^{p} y^{q}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn edge_rules_integrate_monomials_exactly() {
        for (deg, max) in [(1usize, 1u32), (3, 3), (5, 5), (7, 7)] {
            for p in 0..=max {
                let got: f64 = edge_rule(deg)
                    .iter()
                    .map(|&(s, w)| w * s.powi(p as i32))
                    .sum();
                let want = 1.0 / f64::from(p + 1);
                assert!(
                    (got - want).abs() < 1e-14,
                    "deg {deg} monomial s^{p}: {got} vs {want}"
                );
            }
        }
    }
}
