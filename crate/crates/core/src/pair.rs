//! Closed-form branch length between a candidate leaf and a candidate
//! neighbor, and the imaginary-part adjacency criterion.
//!
//! With `x = e^{-2 Gamma d}`, the two carry-back relations linking the leaf
//! admittance `Y1`, the neighbor admittance `Y2` and the leaf load `Y_L1`
//! collapse to `a2 x^2 + a1 x + a0 = 0` where, writing `A = Y1 - Y_L1`,
//! `R1 = (Y_C - A)/(Y_C + A)` and `rho_L1 = (Y_C - Y_L1)/(Y_C + Y_L1)`:
//!
//! ```text
//! a2 = -rho_L1 Y2
//! a1 = (2 Y_C - Y2) - R1 rho_L1 (2 Y_C + Y2)
//! a0 = -R1 Y2
//! ```
//!
//! Only when `Y2` is measured at the node the leaf hangs from does one of the
//! roots map to a real length.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::line::SecondaryParams;

/// Roots with `|x|` above `1 + PHYSICAL_SLACK` would be negative lengths.
pub const PHYSICAL_SLACK: f64 = 1e-6;

/// Relative discriminant magnitude under which the roots count as repeated.
const REPEATED_ROOT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCoefficients {
    pub a2: Complex64,
    pub a1: Complex64,
    pub a0: Complex64,
}

impl QuadraticCoefficients {
    pub fn eval(&self, x: Complex64) -> Complex64 {
        (self.a2 * x + self.a1) * x + self.a0
    }

    /// `|q(x)|` scaled by the magnitude of its terms.
    pub fn relative_residual(&self, x: Complex64) -> f64 {
        let scale = self.a2.norm() * x.norm_sqr() + self.a1.norm() * x.norm() + self.a0.norm();
        if scale == 0.0 {
            0.0
        } else {
            self.eval(x).norm() / scale
        }
    }
}

pub fn quadratic_coefficients(
    y1: Complex64,
    y2: Complex64,
    y_l1: Complex64,
    yc: Complex64,
) -> Result<QuadraticCoefficients> {
    let a = y1 - y_l1;
    let den_r = yc + a;
    let den_l = yc + y_l1;
    if den_r.norm() == 0.0 {
        return Err(Error::DegeneratePair("Y_C + (Y1 - Y_L1) vanishes"));
    }
    if den_l.norm() == 0.0 {
        return Err(Error::DegeneratePair("Y_C + Y_L1 vanishes"));
    }
    let r1 = (yc - a) / den_r;
    let rho_l1 = (yc - y_l1) / den_l;
    let q = QuadraticCoefficients {
        a2: -rho_l1 * y2,
        a1: (2.0 * yc - y2) - r1 * rho_l1 * (2.0 * yc + y2),
        a0: -r1 * y2,
    };
    if q.a2.norm() == 0.0 && q.a1.norm() == 0.0 && q.a0.norm() == 0.0 {
        return Err(Error::DegeneratePair("all coefficients vanish"));
    }
    Ok(q)
}

/// One root of the quadratic and the complex length it maps to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceRoot {
    pub x: Complex64,
    /// `-Ln(x) / (2 Gamma)`; infinite when `x = 0`.
    pub d: Complex64,
}

impl DistanceRoot {
    fn from_x(x: Complex64, gamma: Complex64) -> Self {
        let d = if x.norm() == 0.0 {
            Complex64::new(f64::INFINITY, 0.0)
        } else {
            -x.ln() / (2.0 * gamma)
        };
        Self { x, d }
    }

    /// `0 < |x| <= 1 + slack`, i.e. a finite non-negative attenuation.
    pub fn is_physical(&self) -> bool {
        let m = self.x.norm();
        m > 0.0 && m <= 1.0 + PHYSICAL_SLACK && self.d.re.is_finite() && self.d.im.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistancePair {
    pub d1: DistanceRoot,
    pub d2: DistanceRoot,
    /// Discriminant numerically zero.
    pub repeated: bool,
}

impl DistancePair {
    pub fn roots(&self) -> [DistanceRoot; 2] {
        [self.d1, self.d2]
    }

    /// Physical root with the smallest `|Im(d)|`.
    pub fn best(&self) -> Option<DistanceRoot> {
        self.roots()
            .into_iter()
            .filter(DistanceRoot::is_physical)
            .min_by(|a, b| a.d.im.abs().total_cmp(&b.d.im.abs()))
    }
}

/// Roots of `a2 x^2 + a1 x + a0`, larger magnitude first.
fn solve_quadratic(q: &QuadraticCoefficients) -> Result<(Complex64, Complex64, bool)> {
    let zero = Complex64::new(0.0, 0.0);
    if q.a2 == zero {
        if q.a1 == zero {
            return Err(Error::DegeneratePair("a2 = a1 = 0"));
        }
        // matched leaf: linear equation, the missing root is reported as x = 0
        return Ok((-q.a0 / q.a1, zero, false));
    }
    let disc = q.a1 * q.a1 - 4.0 * q.a2 * q.a0;
    let s = disc.sqrt();
    // pick the sign that avoids cancellation in a1 + s
    let s = if (q.a1.conj() * s).re >= 0.0 { s } else { -s };
    let big = -(q.a1 + s) / 2.0;
    let repeated = disc.norm() <= REPEATED_ROOT_EPS * (q.a1 * q.a1).norm().max((4.0 * q.a2 * q.a0).norm());
    if big == zero {
        // a1 = 0 and a0 = 0: double root at zero
        return Ok((zero, zero, true));
    }
    let x1 = big / q.a2;
    let x2 = q.a0 / big;
    Ok((x1, x2, repeated))
}

/// Both candidate lengths for the leaf/neighbor hypothesis `(y1, y2)`.
pub fn solve_pair_distance(
    y1: Complex64,
    y2: Complex64,
    y_l1: Complex64,
    sec: &SecondaryParams,
) -> Result<DistancePair> {
    let q = quadratic_coefficients(y1, y2, y_l1, sec.yc)?;
    let (x1, x2, repeated) = solve_quadratic(&q)?;
    Ok(DistancePair {
        d1: DistanceRoot::from_x(x1, sec.gamma),
        d2: DistanceRoot::from_x(x2, sec.gamma),
        repeated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjacencyVerdict {
    pub adjacent: bool,
    /// Real length of the accepted root.
    pub d_real: Option<f64>,
    /// `|Im(d)|` of the accepted root, or the smallest over physical roots when rejected.
    pub residual: f64,
}

/// Accepts the pair when a physical root has `|Im(d)| < threshold` and
/// `0 < Re(d) <= wavelength / 4`.
pub fn adjacency_test(
    pair: &DistancePair,
    threshold: f64,
    wavelength: f64,
) -> Result<AdjacencyVerdict> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let physical: Vec<DistanceRoot> = pair
        .roots()
        .into_iter()
        .filter(DistanceRoot::is_physical)
        .collect();
    let residual_floor = physical
        .iter()
        .map(|r| r.d.im.abs())
        .fold(f64::INFINITY, f64::min);
    let qualifying: Vec<&DistanceRoot> = physical
        .iter()
        .filter(|r| r.d.im.abs() < threshold && r.d.re > 0.0 && r.d.re <= wavelength / 4.0)
        .collect();
    match qualifying.as_slice() {
        [] => Ok(AdjacencyVerdict {
            adjacent: false,
            d_real: None,
            residual: residual_floor,
        }),
        [only] => Ok(AdjacencyVerdict {
            adjacent: true,
            d_real: Some(only.d.re),
            residual: only.d.im.abs(),
        }),
        [a, b, ..] => {
            let precision = f64::EPSILON * wavelength;
            if (a.d.im.abs() - b.d.im.abs()).abs() <= precision && (a.d - b.d).norm() > precision {
                return Err(Error::AmbiguousPair);
            }
            let best = if a.d.im.abs() <= b.d.im.abs() { a } else { b };
            Ok(AdjacencyVerdict {
                adjacent: true,
                d_real: Some(best.d.re),
                residual: best.d.im.abs(),
            })
        }
    }
}

/// Complex derivatives of the length mapped from root `x` with respect to
/// `(y1, y2, y_l1)`. `None` at a double root, where the root is not differentiable.
pub fn root_gradient(
    y1: Complex64,
    y2: Complex64,
    y_l1: Complex64,
    sec: &SecondaryParams,
    x: Complex64,
) -> Option<[Complex64; 3]> {
    let yc = sec.yc;
    let a = y1 - y_l1;
    let r1 = (yc - a) / (yc + a);
    let rho = (yc - y_l1) / (yc + y_l1);
    let q = quadratic_coefficients(y1, y2, y_l1, yc).ok()?;
    let q_x = 2.0 * q.a2 * x + q.a1;
    if q_x.norm() == 0.0 || x.norm() == 0.0 {
        return None;
    }
    // partials of (a2, a1, a0) through R1 and rho_L1
    let dr1_da = -2.0 * yc / ((yc + a) * (yc + a));
    let drho_dyl = -2.0 * yc / ((yc + y_l1) * (yc + y_l1));
    let q_r1 = -rho * (2.0 * yc + y2) * x - y2;
    let q_rho = -y2 * x * x - r1 * (2.0 * yc + y2) * x;
    let q_y1 = q_r1 * dr1_da;
    let q_y2 = -rho * x * x + (-1.0 - r1 * rho) * x - r1;
    let q_yl = q_r1 * (-dr1_da) + q_rho * drho_dyl;
    // q(x(y), y) = 0 and d = -ln(x) / (2 Gamma)
    let dd_dx = -1.0 / (2.0 * sec.gamma * x);
    let g = |q_v: Complex64| dd_dx * (-q_v / q_x);
    Some([g(q_y1), g(q_y2), g(q_yl)])
}

/// Carry-back over a complex length, used to check roots against the
/// unreduced two-equation system.
fn carry_back_complex(y_far: Complex64, sec: &SecondaryParams, d: Complex64) -> Complex64 {
    let rho = (sec.yc - y_far) / (sec.yc + y_far);
    let x = rho * (-2.0 * sec.gamma * d).exp();
    sec.yc * (1.0 - x) / (1.0 + x)
}

/// Relative mismatch on `Y1` after substituting `d` into both carry-back
/// relations: `Y_L2 = Y2 - cb(Y_L1, d)` then `Y1' = Y_L1 + cb(Y_L2, d)`.
pub fn pair_consistency_residual(
    y1: Complex64,
    y2: Complex64,
    y_l1: Complex64,
    sec: &SecondaryParams,
    d: Complex64,
) -> f64 {
    let y_l2 = y2 - carry_back_complex(y_l1, sec, d);
    let y1_back = y_l1 + carry_back_complex(y_l2, sec, d);
    (y1_back - y1).norm() / y1.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::line::{cable_preset, carry_back};

    fn sec(freq: f64) -> SecondaryParams {
        cable_preset("lv-distribution").unwrap().secondary(freq).unwrap()
    }

    fn two_node(y_l1: Complex64, y_l2: Complex64, d: f64, s: &SecondaryParams) -> (Complex64, Complex64) {
        let y1 = y_l1 + carry_back(y_l2, s, d).unwrap();
        let y2 = y_l2 + carry_back(y_l1, s, d).unwrap();
        (y1, y2)
    }

    #[test]
    fn forward_root_satisfies_quadratic() {
        let s = sec(1e4);
        let y_l1 = Complex64::new(0.004, 0.001);
        let y_l2 = Complex64::new(0.03, -0.008);
        let d = 777.0;
        let (y1, y2) = two_node(y_l1, y_l2, d, &s);
        let q = quadratic_coefficients(y1, y2, y_l1, s.yc).unwrap();
        let x = (-2.0 * s.gamma * d).exp();
        assert!(q.relative_residual(x) < 1e-10);
    }

    #[test]
    fn root_gradient_matches_finite_differences() {
        let s = sec(3e4);
        let y_l1 = Complex64::new(0.004, 0.001);
        let (y1, y2) = two_node(y_l1, Complex64::new(0.03, -0.008), 640.0, &s);
        let root_near = |y1, y2, yl, target: Complex64| {
            let p = solve_pair_distance(y1, y2, yl, &s).unwrap();
            p.roots()
                .into_iter()
                .min_by(|a, b| (a.d - target).norm().total_cmp(&(b.d - target).norm()))
                .unwrap()
        };
        let base = root_near(y1, y2, y_l1, Complex64::new(640.0, 0.0));
        let g = root_gradient(y1, y2, y_l1, &s, base.x).unwrap();
        let h = 1e-9;
        let dirs = [
            (Complex64::new(h, 0.0), 0),
            (Complex64::new(0.0, h), 0),
            (Complex64::new(h, 0.0), 1),
            (Complex64::new(0.0, h), 2),
        ];
        for (step, which) in dirs {
            let mut v = [y1, y2, y_l1];
            v[which] += step;
            let moved = root_near(v[0], v[1], v[2], base.d);
            let fd = (moved.d - base.d) / step;
            assert!((fd - g[which]).norm() / g[which].norm() < 1e-4, "{which}: {fd} vs {}", g[which]);
        }
    }

    #[test]
    fn matched_leaf_is_linear() {
        let s = sec(1e4);
        let (y1, y2) = two_node(s.yc, Complex64::new(0.03, -0.008), 500.0, &s);
        let q = quadratic_coefficients(y1, y2, s.yc, s.yc).unwrap();
        assert_eq!(q.a2, Complex64::new(0.0, 0.0));
        let pair = solve_pair_distance(y1, y2, s.yc, &s).unwrap();
        assert!(!pair.d2.is_physical());
        assert!(pair.d2.d.re.is_infinite());
    }

    #[test]
    fn singular_inputs_are_degenerate() {
        let yc = Complex64::new(0.02, -1e-4);
        assert!(matches!(
            quadratic_coefficients(Complex64::new(0.0, 0.0), yc, -yc, yc),
            Err(Error::DegeneratePair(_))
        ));
        // a2 = a1 = 0: y_l1 matched and Y2 = 2 Y_C
        let q = quadratic_coefficients(yc * 1.5, yc * 2.0, yc, yc).unwrap();
        assert_eq!(q.a2, Complex64::new(0.0, 0.0));
        let s = SecondaryParams {
            gamma: Complex64::new(1e-5, 3e-4),
            yc,
            freq: 1e4,
            wavelength: 2.0 * std::f64::consts::PI / 3e-4,
        };
        assert_eq!(
            solve_pair_distance(yc * 1.5, yc * 2.0, yc, &s),
            Err(Error::DegeneratePair("a2 = a1 = 0"))
        );
    }

    #[test]
    fn roundtrip_400m() {
        let s = sec(1e4);
        assert!(s.quarter_wave() > 400.0);
        let y_l1 = Complex64::new(0.01, 0.002);
        let (y1, y2) = two_node(y_l1, Complex64::new(0.004, -0.001), 400.0, &s);
        let pair = solve_pair_distance(y1, y2, y_l1, &s).unwrap();
        let hit = pair
            .roots()
            .into_iter()
            .any(|r| (r.d - Complex64::new(400.0, 0.0)).norm() / 400.0 < 1e-6);
        assert!(hit, "{pair:?}");
        let v = adjacency_test(&pair, 1e-6, s.wavelength).unwrap();
        assert!(v.adjacent);
        assert!(v.residual < 1e-9);
        assert!((v.d_real.unwrap() - 400.0).abs() < 1e-6);
    }

    #[test]
    fn quarter_wave_bound_rejects_real_root() {
        let lambda = 1000.0;
        let gamma = Complex64::new(1e-5, 2.0 * std::f64::consts::PI / lambda);
        let d = Complex64::new(lambda / 3.0, 0.0);
        let root = DistanceRoot {
            x: (-2.0 * gamma * d).exp(),
            d,
        };
        let pair = DistancePair {
            d1: root,
            d2: DistanceRoot {
                x: Complex64::new(0.0, 0.0),
                d: Complex64::new(f64::INFINITY, 0.0),
            },
            repeated: false,
        };
        let v = adjacency_test(&pair, 1.0, lambda).unwrap();
        assert!(!v.adjacent);
        assert_eq!(v.residual, 0.0);
    }

    #[test]
    fn ambiguous_when_both_roots_real() {
        let lambda = 1000.0;
        let gamma = Complex64::new(1e-5, 2.0 * std::f64::consts::PI / lambda);
        let mk = |d: f64| DistanceRoot {
            x: (-2.0 * gamma * d).exp(),
            d: Complex64::new(d, 0.0),
        };
        let pair = DistancePair {
            d1: mk(100.0),
            d2: mk(200.0),
            repeated: false,
        };
        assert_eq!(adjacency_test(&pair, 1.0, lambda), Err(Error::AmbiguousPair));
        assert!(adjacency_test(&pair, 0.0, lambda).is_err());
    }
}
