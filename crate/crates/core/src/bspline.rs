//! Quadratic B-spline basis and the separable Bézier kernel built from it.

use crate::geometry::{Point, Vector};

/// Support half-width of the basis, in units of the voxel width.
pub const SUPPORT: f64 = 1.5;

/// Value of the Bézier kernel at zero offset, `bspline(0)^3`.
pub const PEAK: f64 = 3.375;

/// Quadratic B-spline `psi^2(s)`, supported on `(-1.5, 1.5)`.
#[inline]
pub fn bspline(s: f64) -> f64 {
    if s <= -1.5 || s >= 1.5 {
        0.0
    } else if s < -0.5 {
        (s + 1.5) * (s + 1.5)
    } else if s <= 0.5 {
        -2.0 * s * s + 1.5
    } else {
        (s - 1.5) * (s - 1.5)
    }
}

#[inline]
pub fn bspline_deriv(s: f64) -> f64 {
    if s <= -1.5 || s >= 1.5 {
        0.0
    } else if s < -0.5 {
        2.0 * (s + 1.5)
    } else if s <= 0.5 {
        -4.0 * s
    } else {
        2.0 * (s - 1.5)
    }
}

/// Separable kernel `prod_a psi^2((x_a - y_a) / width)`.
#[inline]
pub fn bezier_kernel(x: &Point, y: &Point, width: f64) -> f64 {
    let inv = 1.0 / width;
    bspline((x.x - y.x) * inv) * bspline((x.y - y.y) * inv) * bspline((x.z - y.z) * inv)
}

/// Kernel value and its gradient with respect to the first argument.
#[inline]
pub fn bezier_kernel_grad(x: &Point, y: &Point, width: f64) -> (f64, Vector) {
    let inv = 1.0 / width;
    let s = [(x.x - y.x) * inv, (x.y - y.y) * inv, (x.z - y.z) * inv];
    let b = s.map(bspline);
    let db = s.map(bspline_deriv);
    let value = b[0] * b[1] * b[2];
    let grad = Vector::new(
        db[0] * b[1] * b[2] * inv,
        b[0] * db[1] * b[2] * inv,
        b[0] * b[1] * db[2] * inv,
    );
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(bspline(0.0), 1.5);
        assert_eq!(bspline(1.0), 0.25);
        assert_eq!(bspline(-1.0), 0.25);
        assert_eq!(bspline(1.5), 0.0);
        assert_eq!(bspline(-1.5), 0.0);
        assert_eq!(bspline(2.0), 0.0);
        assert_eq!(bspline_deriv(0.0), 0.0);
        assert_eq!(bspline_deriv(1.0), -1.0);
        assert_eq!(bspline_deriv(-1.0), 1.0);
    }

    #[test]
    fn continuity_at_knots() {
        for k in [-1.5, -0.5, 0.5, 1.5] {
            let e = 1e-12;
            assert!((bspline(k - e) - bspline(k + e)).abs() < 1e-10);
            assert!((bspline_deriv(k - e) - bspline_deriv(k + e)).abs() < 1e-10);
        }
    }

    #[test]
    fn kernel_peak_and_support() {
        let p = Point::new(0.25, -0.5, 1.0);
        assert_eq!(bezier_kernel(&p, &p, 0.5), PEAK);
        let q = p + Vector::new(0.75, 0.0, 0.0);
        assert_eq!(bezier_kernel(&p, &q, 0.5), 0.0);
    }
}
