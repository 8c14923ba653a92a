use nalgebra::{Matrix3, Vector3};

use super::{LevelSet, Point};

/// Static sphere `|x|² - R² = 0`.
#[derive(Clone, Debug)]
pub struct Sphere {
    radius: f64,
}

impl Sphere {
    pub fn new(radius: f64) -> Self {
        Sphere { radius }
    }
}

impl LevelSet for Sphere {
    fn value(&self, x: &Point, _t: f64) -> f64 {
        x.norm_squared() - self.radius * self.radius
    }
    fn gradient(&self, x: &Point, _t: f64) -> Vector3<f64> {
        2.0 * x
    }
    fn time_derivative(&self, _x: &Point, _t: f64) -> f64 {
        0.0
    }
    fn hessian(&self, _x: &Point, _t: f64) -> Option<Matrix3<f64>> {
        Some(Matrix3::identity() * 2.0)
    }
    fn diameter(&self, _t: f64) -> f64 {
        2.0 * self.radius
    }
}

/// Sphere of radius `R(t) = R₀ e^{ct}`, so that `Ṙ/R = c`.
#[derive(Clone, Debug)]
pub struct ExpandingSphere {
    initial_radius: f64,
    rate: f64,
}

impl ExpandingSphere {
    pub fn new(initial_radius: f64, rate: f64) -> Self {
        ExpandingSphere {
            initial_radius,
            rate,
        }
    }

    pub fn radius(&self, t: f64) -> f64 {
        self.initial_radius * (self.rate * t).exp()
    }
}

impl LevelSet for ExpandingSphere {
    fn value(&self, x: &Point, t: f64) -> f64 {
        let r = self.radius(t);
        x.norm_squared() - r * r
    }
    fn gradient(&self, x: &Point, _t: f64) -> Vector3<f64> {
        2.0 * x
    }
    fn time_derivative(&self, _x: &Point, t: f64) -> f64 {
        let r = self.radius(t);
        -2.0 * self.rate * r * r
    }
    fn hessian(&self, _x: &Point, _t: f64) -> Option<Matrix3<f64>> {
        Some(Matrix3::identity() * 2.0)
    }
    fn diameter(&self, t: f64) -> f64 {
        2.0 * self.radius(t)
    }
}

/// Time-periodic ellipsoid `x₁²/a(t) + x₂² + x₃² - R² = 0` with
/// `a(t) = 1 + A sin(ω t)`; at `t = 0` it is the sphere of radius `R`.
#[derive(Clone, Debug)]
pub struct EvolvingEllipsoid {
    radius: f64,
    amplitude: f64,
    angular_frequency: f64,
}

impl EvolvingEllipsoid {
    pub fn new(radius: f64, amplitude: f64, angular_frequency: f64) -> Self {
        assert!(amplitude.abs() < 1.0, "a(t) must stay positive");
        EvolvingEllipsoid {
            radius,
            amplitude,
            angular_frequency,
        }
    }

    pub fn stretch(&self, t: f64) -> f64 {
        1.0 + self.amplitude * (self.angular_frequency * t).sin()
    }

    fn stretch_rate(&self, t: f64) -> f64 {
        self.amplitude * self.angular_frequency * (self.angular_frequency * t).cos()
    }

    /// Period of the motion, `2π/ω`.
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.angular_frequency
    }
}

impl LevelSet for EvolvingEllipsoid {
    fn value(&self, x: &Point, t: f64) -> f64 {
        x.x * x.x / self.stretch(t) + x.y * x.y + x.z * x.z - self.radius * self.radius
    }
    fn gradient(&self, x: &Point, t: f64) -> Vector3<f64> {
        Vector3::new(2.0 * x.x / self.stretch(t), 2.0 * x.y, 2.0 * x.z)
    }
    fn time_derivative(&self, x: &Point, t: f64) -> f64 {
        let a = self.stretch(t);
        -self.stretch_rate(t) * x.x * x.x / (a * a)
    }
    fn hessian(&self, _x: &Point, t: f64) -> Option<Matrix3<f64>> {
        Some(Matrix3::from_diagonal(&Vector3::new(
            2.0 / self.stretch(t),
            2.0,
            2.0,
        )))
    }
    fn diameter(&self, t: f64) -> f64 {
        2.0 * self.radius * self.stretch(t).sqrt().max(1.0)
    }
}

/// `factor · d` for a wrapped level set; same zero set, same geometry.
#[derive(Clone, Debug)]
pub struct Scaled<S> {
    inner: S,
    factor: f64,
    closed_hessian: bool,
}

impl<S: LevelSet> Scaled<S> {
    pub fn new(inner: S, factor: f64) -> Self {
        Scaled {
            inner,
            factor,
            closed_hessian: true,
        }
    }

    /// Hides the closed-form Hessian so callers fall back to differences.
    pub fn without_hessian(mut self) -> Self {
        self.closed_hessian = false;
        self
    }
}

impl<S: LevelSet> LevelSet for Scaled<S> {
    fn value(&self, x: &Point, t: f64) -> f64 {
        self.factor * self.inner.value(x, t)
    }
    fn gradient(&self, x: &Point, t: f64) -> Vector3<f64> {
        self.inner.gradient(x, t) * self.factor
    }
    fn time_derivative(&self, x: &Point, t: f64) -> f64 {
        self.factor * self.inner.time_derivative(x, t)
    }
    fn hessian(&self, x: &Point, t: f64) -> Option<Matrix3<f64>> {
        if self.closed_hessian {
            self.inner.hessian(x, t).map(|h| h * self.factor)
        } else {
            None
        }
    }
    fn diameter(&self, t: f64) -> f64 {
        self.inner.diameter(t)
    }
}
