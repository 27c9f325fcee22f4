//! Smooth building blocks: the `exp(-1/s)` glue, smoothsteps and compactly
//! supported bumps shared by the cutoffs, wave packets and edge tapers.

/// `exp(-1/s)` for `s > 0`, zero otherwise.
#[inline]
fn glue(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

/// C^∞ step: 0 for `s <= 0`, 1 for `s >= 1`, monotone in between.
#[inline]
pub fn smoothstep(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = glue(s);
        let b = glue(1.0 - s);
        a / (a + b)
    }
}

/// Normalised C^∞ bump `c · exp(-1/(1-(y/a)^2))` supported on `[-a, a]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    half_width: f64,
    scale: f64,
}

impl Bump {
    /// Bump on `[-a, a]` normalised so that `∫ χ = 1`.
    pub fn normalized(half_width: f64) -> Self {
        let raw = Bump {
            half_width,
            scale: 1.0,
        };
        let mass = raw.integral(1 << 14);
        Bump {
            half_width,
            scale: 1.0 / mass,
        }
    }

    /// Bump on `[-a, a]` with peak value `exp(-1)`.
    pub fn unit(half_width: f64) -> Self {
        Bump {
            half_width,
            scale: 1.0,
        }
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn eval(&self, y: f64) -> f64 {
        let z = y / self.half_width;
        if z.abs() >= 1.0 {
            return 0.0;
        }
        self.scale * (-1.0 / (1.0 - z * z)).exp()
    }

    /// First derivative.
    pub fn deriv(&self, y: f64) -> f64 {
        let a = self.half_width;
        let z = y / a;
        if z.abs() >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - z * z;
        self.scale * (-1.0 / q).exp() * (-2.0 * z / (q * q)) / a
    }

    /// Trapezoid rule with `m` panels; spectrally accurate for this integrand.
    pub fn integral(&self, m: usize) -> f64 {
        let a = self.half_width;
        let h = 2.0 * a / m as f64;
        (1..m).map(|j| self.eval(-a + j as f64 * h)).sum::<f64>() * h
    }

    /// `∫ |χ|`, equal to `∫ χ` since the bump is non-negative.
    pub fn l1_norm(&self) -> f64 {
        self.integral(1 << 14)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_limits_and_symmetry() {
        assert_eq!(smoothstep(-0.5), 0.0);
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
        for i in 1..100 {
            let s = i as f64 / 100.0;
            assert!((smoothstep(s) + smoothstep(1.0 - s) - 1.0).abs() < 1e-14);
            assert!(smoothstep(s) >= smoothstep(s - 0.01));
        }
    }

    #[test]
    fn normalized_bump_has_unit_mass() {
        for a in [0.5, 1.0, 0.25] {
            let b = Bump::normalized(a);
            assert!((b.integral(1 << 15) - 1.0).abs() < 1e-12);
            assert_eq!(b.eval(a), 0.0);
            assert_eq!(b.eval(-a), 0.0);
            assert_eq!(b.eval(a * 1.01), 0.0);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let b = Bump::unit(1.0);
        for &y in &[-0.7, -0.2, 0.0, 0.3, 0.85] {
            let h = 1e-6;
            let fd = (b.eval(y + h) - b.eval(y - h)) / (2.0 * h);
            assert!((fd - b.deriv(y)).abs() < 1e-8, "y={y}");
        }
    }
}
