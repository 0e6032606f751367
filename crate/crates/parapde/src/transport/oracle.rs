//! Closed-form reference solution of the constant-convection transport
//! problem with a box-indicator source and homogeneous inflow data: the
//! solution at x is the length of the backward ray segment that lies inside
//! the source box before leaving the domain.

/// Intersects the parameter interval of `{ s >= 0 : lo <= x - s b <= hi }`
/// per coordinate; returns the (possibly empty) [s_min, s_max].
fn ray_box_interval(x: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<(f64, f64)> {
    let mut s_min = 0.0f64;
    let mut s_max = f64::INFINITY;
    for i in 0..2 {
        if b[i].abs() < 1e-300 {
            if x[i] < lo[i] || x[i] > hi[i] {
                return None;
            }
        } else if b[i] > 0.0 {
            // x_i - s b_i in [lo, hi]  <=>  (x_i - hi)/b <= s <= (x_i - lo)/b
            s_min = s_min.max((x[i] - hi[i]) / b[i]);
            s_max = s_max.min((x[i] - lo[i]) / b[i]);
        } else {
            s_min = s_min.max((x[i] - lo[i]) / b[i]);
            s_max = s_max.min((x[i] - hi[i]) / b[i]);
        }
    }
    (s_max > s_min).then_some((s_min, s_max))
}

/// Exact solution u(x) of b . grad u = chi_Q on the unit square with u = 0 on
/// the inflow boundary, for the angle field b = (cos pi p, sin pi p).
pub fn characteristics_solution(x: [f64; 2], p: f64, q_lo: [f64; 2], q_hi: [f64; 2]) -> f64 {
    let a = std::f64::consts::PI * p;
    let b = [a.cos(), a.sin()];
    // backward travel time until the ray x - s b exits the unit square
    let Some((_, s_exit)) = ray_box_interval(x, b, [0.0, 0.0], [1.0, 1.0]) else {
        return 0.0;
    };
    match ray_box_interval(x, b, q_lo, q_hi) {
        Some((s0, s1)) => (s1.min(s_exit) - s0.max(0.0)).max(0.0),
        None => 0.0,
    }
}
