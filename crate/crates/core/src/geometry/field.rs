use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};

use super::Point;
use crate::error::{Error, Result};

/// How the derivatives of an [`AmbientField`] are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Differentiation {
    ClosedForm,
    FiniteDifference,
}

/// A scalar field defined on a neighbourhood of the surface in `R³ × [0, T]`.
///
/// Derivatives default to central differences with step [`fd_step`]; fields
/// with closed forms override them and report
/// [`Differentiation::ClosedForm`].
///
/// [`fd_step`]: AmbientField::fd_step
pub trait AmbientField: Send + Sync {
    fn value(&self, x: &Point, t: f64) -> f64;

    fn gradient(&self, x: &Point, t: f64) -> Vector3<f64> {
        central_gradient(|y| self.value(y, t), x, 0.1 * self.fd_step())
    }

    fn hessian(&self, x: &Point, t: f64) -> Matrix3<f64> {
        central_hessian(|y| self.value(y, t), x, self.fd_step())
    }

    fn time_derivative(&self, x: &Point, t: f64) -> f64 {
        let h = 1e-5;
        (self.value(x, t + h) - self.value(x, t - h)) / (2.0 * h)
    }

    fn differentiation(&self) -> Differentiation {
        Differentiation::FiniteDifference
    }

    /// Spatial step for second differences.
    fn fd_step(&self) -> f64 {
        1e-4
    }
}

impl<F: AmbientField + ?Sized> AmbientField for Arc<F> {
    fn value(&self, x: &Point, t: f64) -> f64 {
        (**self).value(x, t)
    }
    fn gradient(&self, x: &Point, t: f64) -> Vector3<f64> {
        (**self).gradient(x, t)
    }
    fn hessian(&self, x: &Point, t: f64) -> Matrix3<f64> {
        (**self).hessian(x, t)
    }
    fn time_derivative(&self, x: &Point, t: f64) -> f64 {
        (**self).time_derivative(x, t)
    }
    fn differentiation(&self) -> Differentiation {
        (**self).differentiation()
    }
    fn fd_step(&self) -> f64 {
        (**self).fd_step()
    }
}

pub fn central_gradient(f: impl Fn(&Point) -> f64, x: &Point, h: f64) -> Vector3<f64> {
    let mut g = Vector3::zeros();
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = h;
        g[i] = (f(&(x + e)) - f(&(x - e))) / (2.0 * h);
    }
    g
}

pub fn central_hessian(f: impl Fn(&Point) -> f64, x: &Point, h: f64) -> Matrix3<f64> {
    let centre = f(x);
    let mut hess = Matrix3::zeros();
    let unit = |i: usize| {
        let mut e = Vector3::zeros();
        e[i] = h;
        e
    };
    for i in 0..3 {
        let ei = unit(i);
        hess[(i, i)] = (f(&(x + ei)) - 2.0 * centre + f(&(x - ei))) / (h * h);
        for j in (i + 1)..3 {
            let ej = unit(j);
            let v = (f(&(x + ei + ej)) - f(&(x + ei - ej)) - f(&(x - ei + ej)) + f(&(x - ei - ej)))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

pub type ScalarFn = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&Point, f64) -> Vector3<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&Point, f64) -> Matrix3<f64> + Send + Sync>;

/// Field built from closures, with optional closed-form derivatives.
#[derive(Clone)]
pub struct FnField {
    value: ScalarFn,
    gradient: Option<VectorFn>,
    hessian: Option<MatrixFn>,
    time_derivative: Option<ScalarFn>,
    step: f64,
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnField")
            .field("gradient", &self.gradient.is_some())
            .field("hessian", &self.hessian.is_some())
            .field("time_derivative", &self.time_derivative.is_some())
            .field("step", &self.step)
            .finish()
    }
}

impl FnField {
    pub fn new(value: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        FnField {
            value: Arc::new(value),
            gradient: None,
            hessian: None,
            time_derivative: None,
            step: 1e-4,
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&Point, f64) -> Vector3<f64> + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_hessian(
        mut self,
        hessian: impl Fn(&Point, f64) -> Matrix3<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    pub fn with_time_derivative(
        mut self,
        dt: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.time_derivative = Some(Arc::new(dt));
        self
    }

    /// Second-difference step, typically `1e-4 · diam(Γ)`.
    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn constant(c: f64) -> Self {
        FnField::new(move |_, _| c)
            .with_gradient(|_, _| Vector3::zeros())
            .with_hessian(|_, _| Matrix3::zeros())
            .with_time_derivative(|_, _| 0.0)
    }

    /// The coordinate function `x_i`.
    pub fn coordinate(i: usize) -> Self {
        assert!(i < 3, "coordinate index out of range");
        FnField::new(move |x, _| x[i])
            .with_gradient(move |_, _| {
                let mut g = Vector3::zeros();
                g[i] = 1.0;
                g
            })
            .with_hessian(|_, _| Matrix3::zeros())
            .with_time_derivative(|_, _| 0.0)
    }

    /// `e^{-rate·t} x₁x₂`, the manufactured solution of the convergence
    /// experiments (rate 6 is the ℓ = 2 eigenvalue on the unit sphere).
    pub fn decaying_product(rate: f64) -> Self {
        FnField::new(move |x, t| (-rate * t).exp() * x.x * x.y)
            .with_gradient(move |x, t| (-rate * t).exp() * Vector3::new(x.y, x.x, 0.0))
            .with_hessian(move |_, t| {
                let s = (-rate * t).exp();
                Matrix3::new(0.0, s, 0.0, s, 0.0, 0.0, 0.0, 0.0, 0.0)
            })
            .with_time_derivative(move |x, t| -rate * (-rate * t).exp() * x.x * x.y)
    }

    /// `amplitude · cos(k x₁) cos(k x₂) cos(k x₃)`.
    pub fn cosine_product(amplitude: f64, wavenumber: f64) -> Self {
        let k = wavenumber;
        FnField::new(move |x, _| amplitude * (k * x.x).cos() * (k * x.y).cos() * (k * x.z).cos())
            .with_gradient(move |x, _| {
                let (s, c) = (
                    Vector3::new((k * x.x).sin(), (k * x.y).sin(), (k * x.z).sin()),
                    Vector3::new((k * x.x).cos(), (k * x.y).cos(), (k * x.z).cos()),
                );
                -amplitude
                    * k
                    * Vector3::new(s.x * c.y * c.z, c.x * s.y * c.z, c.x * c.y * s.z)
            })
            .with_hessian(move |x, _| {
                let s = Vector3::new((k * x.x).sin(), (k * x.y).sin(), (k * x.z).sin());
                let c = Vector3::new((k * x.x).cos(), (k * x.y).cos(), (k * x.z).cos());
                let a = amplitude * k * k;
                let p = c.x * c.y * c.z;
                Matrix3::new(
                    -a * p,
                    a * s.x * s.y * c.z,
                    a * s.x * c.y * s.z,
                    a * s.x * s.y * c.z,
                    -a * p,
                    a * c.x * s.y * s.z,
                    a * s.x * c.y * s.z,
                    a * c.x * s.y * s.z,
                    -a * p,
                )
            })
            .with_time_derivative(|_, _| 0.0)
    }

    /// `scale · (x₁ + x₁²x₂²x₃)`.
    pub fn mixed_polynomial(scale: f64) -> Self {
        FnField::new(move |x, _| scale * (x.x + x.x * x.x * x.y * x.y * x.z))
            .with_gradient(move |x, _| {
                scale
                    * Vector3::new(
                        1.0 + 2.0 * x.x * x.y * x.y * x.z,
                        2.0 * x.x * x.x * x.y * x.z,
                        x.x * x.x * x.y * x.y,
                    )
            })
            .with_hessian(move |x, _| {
                let (a, b, c) = (x.x, x.y, x.z);
                let hxx = 2.0 * b * b * c;
                let hxy = 4.0 * a * b * c;
                let hxz = 2.0 * a * b * b;
                let hyy = 2.0 * a * a * c;
                let hyz = 2.0 * a * a * b;
                scale * Matrix3::new(hxx, hxy, hxz, hxy, hyy, hyz, hxz, hyz, 0.0)
            })
            .with_time_derivative(|_, _| 0.0)
    }

    /// Compares the supplied closed forms against central differences at
    /// `points`, failing when the relative deviation exceeds `1e-6`.
    pub fn cross_check(&self, points: &[Point], t: f64) -> Result<()> {
        let value = |y: &Point| (self.value)(y, t);
        let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= 1e-6 * scale.max(1.0);
        for x in points {
            if let Some(g) = &self.gradient {
                let exact = g(x, t);
                let fd = central_gradient(value, x, 1e-5);
                let scale = exact.amax();
                if !(0..3).all(|i| close(exact[i], fd[i], scale)) {
                    return Err(Error::Geometry(format!(
                        "closed-form gradient {exact:?} disagrees with finite differences {fd:?} at {x:?}"
                    )));
                }
            }
            if let Some(h) = &self.hessian {
                let exact = h(x, t);
                let fd = central_hessian(value, x, 1e-4);
                let scale = exact.amax();
                if !exact.iter().zip(fd.iter()).all(|(a, b)| close(*a, *b, scale)) {
                    return Err(Error::Geometry(format!(
                        "closed-form Hessian disagrees with finite differences at {x:?}"
                    )));
                }
            }
            if let Some(dt) = &self.time_derivative {
                let exact = dt(x, t);
                let h = 1e-5;
                let fd = ((self.value)(x, t + h) - (self.value)(x, t - h)) / (2.0 * h);
                if !close(exact, fd, exact.abs()) {
                    return Err(Error::Geometry(format!(
                        "closed-form time derivative {exact} disagrees with finite differences {fd} at {x:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl AmbientField for FnField {
    fn value(&self, x: &Point, t: f64) -> f64 {
        (self.value)(x, t)
    }

    fn gradient(&self, x: &Point, t: f64) -> Vector3<f64> {
        match &self.gradient {
            Some(g) => g(x, t),
            None => central_gradient(|y| (self.value)(y, t), x, 0.1 * self.step),
        }
    }

    fn hessian(&self, x: &Point, t: f64) -> Matrix3<f64> {
        match &self.hessian {
            Some(h) => h(x, t),
            None => central_hessian(|y| (self.value)(y, t), x, self.step),
        }
    }

    fn time_derivative(&self, x: &Point, t: f64) -> f64 {
        match &self.time_derivative {
            Some(dt) => dt(x, t),
            None => {
                let h = 1e-5;
                ((self.value)(x, t + h) - (self.value)(x, t - h)) / (2.0 * h)
            }
        }
    }

    fn differentiation(&self) -> Differentiation {
        if self.gradient.is_some() && self.hessian.is_some() {
            Differentiation::ClosedForm
        } else {
            Differentiation::FiniteDifference
        }
    }

    fn fd_step(&self) -> f64 {
        self.step
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_points() -> Vec<Point> {
        vec![
            Point::new(0.3, -0.2, 0.9),
            Point::new(-0.7, 0.5, 0.1),
            Point::new(0.1, 0.1, -0.4),
            Point::new(1.2, -0.8, 0.6),
        ]
    }

    #[test]
    fn closed_forms_agree_with_finite_differences() {
        let pts = sample_points();
        FnField::decaying_product(6.0).cross_check(&pts, 0.3).unwrap();
        FnField::cosine_product(0.1, 2.0 * std::f64::consts::PI)
            .cross_check(&pts, 0.0)
            .unwrap();
        FnField::mixed_polynomial(225.0 / 56693.0)
            .cross_check(&pts, 0.0)
            .unwrap();
        FnField::coordinate(1).cross_check(&pts, 0.0).unwrap();
        FnField::constant(2.0).cross_check(&pts, 0.0).unwrap();
    }

    #[test]
    fn wrong_closed_form_is_detected() {
        let bad = FnField::new(|x: &Point, _| x.x * x.x).with_gradient(|x, _| Vector3::new(x.x, 0.0, 0.0));
        assert!(bad.cross_check(&sample_points(), 0.0).is_err());
    }

    #[test]
    fn differentiation_mode_reflects_supplied_derivatives() {
        assert_eq!(
            FnField::decaying_product(1.0).differentiation(),
            Differentiation::ClosedForm
        );
        assert_eq!(
            FnField::new(|x: &Point, _| x.x).differentiation(),
            Differentiation::FiniteDifference
        );
    }
}
