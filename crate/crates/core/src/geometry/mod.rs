//! Moving surfaces given as zero level sets `d(x, t) = 0`, and the surface
//! differential operators of ambient fields evaluated on them.
//!
//! All evaluators are pure functions of their arguments. Off the surface the
//! operators refer to the level surface of `d` through the evaluation point,
//! which gives a smooth extension of every quantity into a tube around
//! `Γ(t)`.

mod field;
mod manufactured;
mod surfaces;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

pub use field::{
    central_gradient, central_hessian, AmbientField, Differentiation, FnField, ScalarFn,
};
pub use manufactured::{ChemicalPotential, ManufacturedSolution};
pub use surfaces::{EvolvingEllipsoid, ExpandingSphere, Scaled, Sphere};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Gradients below this norm are treated as degenerate.
pub const DEGENERATE_GRADIENT: f64 = 1e-12;
/// Target level-set residual of [`project_to_surface`].
pub const PROJECTION_TOLERANCE: f64 = 1e-12;
/// Iteration cap of [`project_to_surface`].
pub const PROJECTION_MAX_ITERATIONS: usize = 20;

/// A time-dependent level-set function whose zero set is the surface `Γ(t)`.
pub trait LevelSet: Send + Sync {
    fn value(&self, x: &Point, t: f64) -> f64;

    fn gradient(&self, x: &Point, t: f64) -> Vector3<f64>;

    fn time_derivative(&self, x: &Point, t: f64) -> f64;

    /// Spatial Hessian if available in closed form.
    fn hessian(&self, _x: &Point, _t: f64) -> Option<Matrix3<f64>> {
        None
    }

    /// Length scale of the surface, used to size finite-difference steps.
    fn diameter(&self, t: f64) -> f64;
}

impl<S: LevelSet + ?Sized> LevelSet for std::sync::Arc<S> {
    fn value(&self, x: &Point, t: f64) -> f64 {
        (**self).value(x, t)
    }
    fn gradient(&self, x: &Point, t: f64) -> Vector3<f64> {
        (**self).gradient(x, t)
    }
    fn time_derivative(&self, x: &Point, t: f64) -> f64 {
        (**self).time_derivative(x, t)
    }
    fn hessian(&self, x: &Point, t: f64) -> Option<Matrix3<f64>> {
        (**self).hessian(x, t)
    }
    fn diameter(&self, t: f64) -> f64 {
        (**self).diameter(t)
    }
}

fn checked_gradient<S: LevelSet + ?Sized>(
    surface: &S,
    x: &Point,
    t: f64,
) -> Result<(Vector3<f64>, f64)> {
    let grad = surface.gradient(x, t);
    let norm = grad.norm();
    if !(norm >= DEGENERATE_GRADIENT) {
        return Err(Error::DegenerateGradient {
            point: [x.x, x.y, x.z],
            norm,
        });
    }
    Ok((grad, norm))
}

/// Hessian of `d`, falling back to central differences of the gradient.
pub fn level_set_hessian<S: LevelSet + ?Sized>(surface: &S, x: &Point, t: f64) -> Matrix3<f64> {
    if let Some(h) = surface.hessian(x, t) {
        return h;
    }
    let step = 1e-4 * surface.diameter(t);
    let mut hess = Matrix3::zeros();
    for j in 0..3 {
        let mut e = Vector3::zeros();
        e[j] = step;
        let col = (surface.gradient(&(x + e), t) - surface.gradient(&(x - e), t)) / (2.0 * step);
        hess.set_column(j, &col);
    }
    // symmetrize away the finite-difference asymmetry
    (hess + hess.transpose()) * 0.5
}

/// Unit normal `∇d / |∇d|`.
pub fn normal<S: LevelSet + ?Sized>(surface: &S, x: &Point, t: f64) -> Result<Vector3<f64>> {
    let (grad, norm) = checked_gradient(surface, x, t)?;
    Ok(grad / norm)
}

/// Normal velocity `V = -∂ₜd / |∇d|`.
pub fn normal_velocity<S: LevelSet + ?Sized>(surface: &S, x: &Point, t: f64) -> Result<f64> {
    let (_, norm) = checked_gradient(surface, x, t)?;
    Ok(-surface.time_derivative(x, t) / norm)
}

/// Surface velocity `v = V ν`; purely normal.
pub fn velocity<S: LevelSet + ?Sized>(surface: &S, x: &Point, t: f64) -> Result<Vector3<f64>> {
    let (grad, norm) = checked_gradient(surface, x, t)?;
    let v_normal = -surface.time_derivative(x, t) / norm;
    Ok(grad * (v_normal / norm))
}

/// Mean curvature `H = ∇·ν` (sum of principal curvatures) of the level
/// surface through `x`.
pub fn mean_curvature<S: LevelSet + ?Sized>(surface: &S, x: &Point, t: f64) -> Result<f64> {
    let (grad, norm) = checked_gradient(surface, x, t)?;
    let hess = level_set_hessian(surface, x, t);
    let nu = grad / norm;
    Ok((hess.trace() - nu.dot(&(hess * nu))) / norm)
}

/// Closest point on `Γ(t)`.
///
/// A Newton step along the gradient puts the iterate on the surface, then
/// Newton on the Lagrange system `y - x + λ∇d(y) = 0, d(y) = 0` enforces
/// that `x - y` is normal at `y`.
pub fn project_to_surface<S: LevelSet + ?Sized>(surface: &S, x: &Point, t: f64) -> Result<Point> {
    let (grad, norm) = checked_gradient(surface, x, t)?;
    let d0 = surface.value(x, t);
    // initial multiplier from the first-order distance estimate
    let mut y = x - grad * (d0 / (norm * norm));
    let mut lambda = d0 / (norm * norm);
    let scale = surface.diameter(t).max(1.0);

    for iteration in 0..PROJECTION_MAX_ITERATIONS {
        let (g, gnorm) = checked_gradient(surface, &y, t)?;
        let dval = surface.value(&y, t);
        let stationarity = y - x + g * lambda;
        if dval.abs() <= PROJECTION_TOLERANCE
            && stationarity.norm() <= 1e-13 * scale
            && iteration > 0
        {
            return Ok(y);
        }
        let hess = level_set_hessian(surface, &y, t);
        let top = Matrix3::identity() + hess * lambda;
        let mut jac = Matrix4::zeros();
        jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&top);
        jac.fixed_view_mut::<3, 1>(0, 3).copy_from(&g);
        jac.fixed_view_mut::<1, 3>(3, 0).copy_from(&g.transpose());
        let rhs = -Vector4::new(stationarity.x, stationarity.y, stationarity.z, dval);
        let step = match jac.lu().solve(&rhs) {
            Some(s) => s,
            None => {
                // fall back to a plain gradient step
                let s = -g * (dval / (gnorm * gnorm));
                Vector4::new(s.x, s.y, s.z, 0.0)
            }
        };
        y += Vector3::new(step[0], step[1], step[2]);
        lambda += step[3];
    }
    let residual = surface.value(&y, t).abs();
    if residual <= PROJECTION_TOLERANCE {
        return Ok(y);
    }
    Err(Error::Projection {
        point: [x.x, x.y, x.z],
        residual,
        iterations: PROJECTION_MAX_ITERATIONS,
    })
}

/// Tangential gradient `∇ū - (∇ū·ν)ν`.
pub fn surface_gradient<F, S>(field: &F, surface: &S, x: &Point, t: f64) -> Result<Vector3<f64>>
where
    F: AmbientField + ?Sized,
    S: LevelSet + ?Sized,
{
    let nu = normal(surface, x, t)?;
    let grad = field.gradient(x, t);
    Ok(grad - nu * grad.dot(&nu))
}

/// Laplace–Beltrami operator via `Δū - νᵀD²ūν - H ∂_ν ū`.
///
/// Fields without a closed-form Hessian are differentiated along two
/// tangent directions and the normal, which needs 7 evaluations instead of
/// the 19 of a full central-difference Hessian.
pub fn surface_laplacian<F, S>(field: &F, surface: &S, x: &Point, t: f64) -> Result<f64>
where
    F: AmbientField + ?Sized,
    S: LevelSet + ?Sized,
{
    let nu = normal(surface, x, t)?;
    let curvature = mean_curvature(surface, x, t)?;
    match field.differentiation() {
        Differentiation::ClosedForm => {
            let hess = field.hessian(x, t);
            let grad = field.gradient(x, t);
            Ok(hess.trace() - nu.dot(&(hess * nu)) - curvature * grad.dot(&nu))
        }
        Differentiation::FiniteDifference => {
            let h = field.fd_step();
            let (t1, t2) = tangent_frame(&nu);
            let centre = field.value(x, t);
            let second = |dir: &Vector3<f64>| {
                (field.value(&(x + dir * h), t) - 2.0 * centre + field.value(&(x - dir * h), t))
                    / (h * h)
            };
            let dnu = (field.value(&(x + nu * h), t) - field.value(&(x - nu * h), t)) / (2.0 * h);
            Ok(second(&t1) + second(&t2) - curvature * dnu)
        }
    }
}

/// Material derivative `∂ₜū + v·∇ū` along the normal surface velocity.
pub fn material_derivative<F, S>(field: &F, surface: &S, x: &Point, t: f64) -> Result<f64>
where
    F: AmbientField + ?Sized,
    S: LevelSet + ?Sized,
{
    let v = velocity(surface, x, t)?;
    Ok(field.time_derivative(x, t) + v.dot(&field.gradient(x, t)))
}

/// `∇_Γ·v` for the normal velocity field `v = Vν`.
///
/// Since `ν·∇_Γ V = 0` the trace of `(I - ννᵀ)∇v` reduces to `V H`.
pub fn surface_divergence_of_velocity<S: LevelSet + ?Sized>(
    surface: &S,
    x: &Point,
    t: f64,
) -> Result<f64> {
    Ok(normal_velocity(surface, x, t)? * mean_curvature(surface, x, t)?)
}

/// Orthonormal tangent vectors completing `nu` to a right-handed frame.
pub fn tangent_frame(nu: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let pick = if nu.x.abs() <= nu.y.abs() && nu.x.abs() <= nu.z.abs() {
        Vector3::x()
    } else if nu.y.abs() <= nu.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let t1 = (pick - nu * nu.dot(&pick)).normalize();
    let t2 = nu.cross(&t1);
    (t1, t2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Point {
        loop {
            let p = Point::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = p.norm();
            if n > 0.1 && n <= 1.0 {
                return p / n;
            }
        }
    }

    fn oscillating_ellipsoid() -> EvolvingEllipsoid {
        EvolvingEllipsoid::new(1.0, 0.25, 2.0 * std::f64::consts::PI)
    }

    #[test]
    fn sphere_normal_is_radial() {
        let s = Sphere::new(1.0);
        let n = normal(&s, &Point::new(1.0, 0.0, 0.0), 0.3).unwrap();
        assert_relative_eq!(n, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn ellipsoid_starts_as_unit_sphere() {
        let e = oscillating_ellipsoid();
        let n = normal(&e, &Point::new(0.0, 0.0, 1.0), 0.0).unwrap();
        assert_relative_eq!(n, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        assert_eq!(e.value(&Point::new(0.6, 0.8, 0.0), 0.0), 0.0);
    }

    #[test]
    fn scaled_level_set_has_same_normal_and_divergence() {
        let e = oscillating_ellipsoid();
        let scaled = Scaled::new(e.clone(), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = project_to_surface(&e, &random_unit(&mut rng), 0.1).unwrap();
            let a = normal(&e, &x, 0.1).unwrap();
            let b = normal(&scaled, &x, 0.1).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-14);
            let da = surface_divergence_of_velocity(&e, &x, 0.1).unwrap();
            let db = surface_divergence_of_velocity(&scaled, &x, 0.1).unwrap();
            assert_relative_eq!(da, db, epsilon = 1e-12, max_relative = 1e-10);
        }
    }

    #[test]
    fn normal_has_unit_length() {
        let e = oscillating_ellipsoid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = random_unit(&mut rng) * rng.gen_range(0.8..1.2);
            let n = normal(&e, &x, rng.gen_range(0.0..1.0)).unwrap();
            assert!((n.norm() - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn degenerate_gradient_is_an_error() {
        let s = Sphere::new(1.0);
        assert!(matches!(
            normal(&s, &Point::zeros(), 0.0),
            Err(Error::DegenerateGradient { .. })
        ));
        assert!(normal_velocity(&s, &Point::zeros(), 0.0).is_err());
    }

    #[test]
    fn static_sphere_has_zero_velocity() {
        let s = Sphere::new(1.0);
        let x = Point::new(0.0, 0.6, 0.8);
        assert_eq!(normal_velocity(&s, &x, 0.7).unwrap(), 0.0);
        assert_eq!(velocity(&s, &x, 0.7).unwrap(), Vector3::zeros());
        assert_eq!(surface_divergence_of_velocity(&s, &x, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn ellipsoid_normal_velocity_matches_time_difference_of_d() {
        let e = oscillating_ellipsoid();
        let x = Point::new(1.0, 0.0, 0.0);
        let t = 0.25;
        let delta = 1e-5;
        let dt_fd = (e.value(&x, t + delta) - e.value(&x, t - delta)) / (2.0 * delta);
        let expected = -dt_fd / e.gradient(&x, t).norm();
        let v = normal_velocity(&e, &x, t).unwrap();
        assert_relative_eq!(v, expected, epsilon = 1e-9);
        // at x₁ = 0 the level set does not move
        assert_eq!(normal_velocity(&e, &Point::new(0.0, 1.0, 0.0), t).unwrap(), 0.0);
    }

    #[test]
    fn velocity_is_normal_and_has_magnitude_v() {
        let e = oscillating_ellipsoid();
        let v = velocity(&e, &Point::new(1.0, 0.0, 0.0), 0.0).unwrap();
        assert!(v.y.abs() < 1e-15 && v.z.abs() < 1e-15 && v.x != 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = rng.gen_range(0.0..1.0);
            let x = project_to_surface(&e, &random_unit(&mut rng), t).unwrap();
            let vv = velocity(&e, &x, t).unwrap();
            let vn = normal_velocity(&e, &x, t).unwrap();
            assert_relative_eq!(vv.norm(), vn.abs(), epsilon = 1e-14);
            let nu = normal(&e, &x, t).unwrap();
            assert!(vv.cross(&nu).norm() <= 1e-14);
        }
    }

    #[test]
    fn projection_fixed_points_and_sphere() {
        let s = Sphere::new(1.0);
        let y = project_to_surface(&s, &Point::new(2.0, 0.0, 0.0), 0.0).unwrap();
        assert_relative_eq!(y, Point::new(1.0, 0.0, 0.0), epsilon = 1e-14);
        let on = Point::new(0.0, 0.6, 0.8);
        let y = project_to_surface(&s, &on, 0.0).unwrap();
        assert_relative_eq!(y, on, epsilon = 1e-14);
    }

    #[test]
    fn ellipsoid_projection_is_closest_point_and_idempotent() {
        let e = oscillating_ellipsoid();
        let t = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x = random_unit(&mut rng) * rng.gen_range(0.7..1.4);
            let y = project_to_surface(&e, &x, t).unwrap();
            assert!(e.value(&y, t).abs() <= 1e-12);
            let nu = normal(&e, &y, t).unwrap();
            let offset = x - y;
            assert!(offset.cross(&nu).norm() <= 1e-12 * (1.0 + offset.norm()));
            let z = project_to_surface(&e, &y, t).unwrap();
            assert!((z - y).norm() <= 1e-12);
        }
    }

    #[test]
    fn surface_gradient_examples() {
        let s = Sphere::new(1.0);
        let constant = FnField::constant(3.0);
        let g = surface_gradient(&constant, &s, &Point::new(0.0, 0.6, 0.8), 0.0).unwrap();
        assert_eq!(g, Vector3::zeros());

        let height = FnField::coordinate(2);
        let g = surface_gradient(&height, &s, &Point::new(0.0, 0.0, 1.0), 0.0).unwrap();
        assert!(g.norm() < 1e-15);

        let product = FnField::decaying_product(0.0);
        let g = surface_gradient(&product, &s, &Point::new(1.0, 0.0, 0.0), 0.0).unwrap();
        assert_relative_eq!(g, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn surface_gradient_is_tangential() {
        let e = oscillating_ellipsoid();
        let u = FnField::decaying_product(6.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = rng.gen_range(0.0..1.0);
            let x = project_to_surface(&e, &random_unit(&mut rng), t).unwrap();
            let g = surface_gradient(&u, &e, &x, t).unwrap();
            let nu = normal(&e, &x, t).unwrap();
            assert!(g.dot(&nu).abs() <= 1e-12 * g.norm().max(1e-300) + 1e-15);
        }
    }

    fn harmonic_check(field: &FnField, ell: f64) {
        let s = Sphere::new(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let x = random_unit(&mut rng);
            let lap = surface_laplacian(field, &s, &x, 0.0).unwrap();
            let expected = -ell * (ell + 1.0) * field.value(&x, 0.0);
            assert!(
                (lap - expected).abs() <= 1e-6,
                "ℓ={ell}: {lap} vs {expected}"
            );
        }
    }

    #[test]
    fn laplacian_of_spherical_harmonics() {
        // ℓ = 1, 2, 3 harmonics, closed form and finite differences
        let l1 = FnField::coordinate(2);
        let l2 = FnField::decaying_product(0.0);
        let l3 = FnField::new(|x: &Point, _| x.x * x.y * x.z);
        harmonic_check(&l1, 1.0);
        harmonic_check(&l2, 2.0);
        harmonic_check(&l3, 3.0);
        let l2_fd = FnField::new(|x: &Point, _| x.x * x.y);
        harmonic_check(&l2_fd, 2.0);
        let l1_fd = FnField::new(|x: &Point, _| x.z);
        harmonic_check(&l1_fd, 1.0);

        let s = Sphere::new(1.0);
        let c = FnField::constant(2.5);
        assert_eq!(surface_laplacian(&c, &s, &Point::new(1.0, 0.0, 0.0), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn material_derivative_examples() {
        let s = Sphere::new(1.0);
        let steady = FnField::decaying_product(0.0);
        let x = Point::new(0.6, 0.8, 0.0);
        assert_eq!(material_derivative(&steady, &s, &x, 0.4).unwrap(), 0.0);

        let u = FnField::decaying_product(6.0);
        let md = material_derivative(&u, &s, &x, 0.4).unwrap();
        assert_relative_eq!(md, -6.0 * u.value(&x, 0.4), max_relative = 1e-14);
    }

    #[test]
    fn material_derivative_along_trajectory() {
        // finite difference of u along an RK4-integrated node trajectory
        let e = oscillating_ellipsoid();
        let u = FnField::decaying_product(6.0);
        let t = 0.3;
        let x = project_to_surface(&e, &Point::new(0.5, 0.5, 0.7), t).unwrap();
        let rk4 = |mut p: Point, t0: f64, t1: f64| {
            let n = 200;
            let h = (t1 - t0) / n as f64;
            for k in 0..n {
                let tk = t0 + k as f64 * h;
                let k1 = velocity(&e, &p, tk).unwrap();
                let k2 = velocity(&e, &(p + k1 * (h / 2.0)), tk + h / 2.0).unwrap();
                let k3 = velocity(&e, &(p + k2 * (h / 2.0)), tk + h / 2.0).unwrap();
                let k4 = velocity(&e, &(p + k3 * h), tk + h).unwrap();
                p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            p
        };
        let md = material_derivative(&u, &e, &x, t).unwrap();
        let mut previous = f64::INFINITY;
        for delta in [1e-2, 5e-3] {
            let fwd = rk4(x, t, t + delta);
            let bwd = rk4(x, t, t - delta);
            let fd = (u.value(&fwd, t + delta) - u.value(&bwd, t - delta)) / (2.0 * delta);
            let err = (fd - md).abs();
            assert!(err < 1e-3, "delta {delta}: {err}");
            if previous.is_finite() {
                // second order in δ
                assert!(previous / err > 3.5, "{previous} / {err}");
            }
            previous = err;
        }
    }

    #[test]
    fn expanding_sphere_divergence() {
        let c = 0.7;
        let s = ExpandingSphere::new(1.0, c);
        for t in [0.0, 0.3, 1.0] {
            let r = s.radius(t);
            let x = Point::new(0.3, -0.4, 0.5).normalize() * r;
            let div = surface_divergence_of_velocity(&s, &x, t).unwrap();
            assert_relative_eq!(div, 2.0 * c, max_relative = 1e-12);
        }
    }

    #[test]
    fn divergence_matches_tangential_trace_of_velocity_jacobian() {
        // independent route: finite-difference Jacobian of v, projected trace
        let e = oscillating_ellipsoid();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let t = rng.gen_range(0.0..1.0);
            let x = project_to_surface(&e, &random_unit(&mut rng), t).unwrap();
            let h = 1e-5;
            let mut jac = Matrix3::zeros();
            for j in 0..3 {
                let mut dx = Vector3::zeros();
                dx[j] = h;
                let col = (velocity(&e, &(x + dx), t).unwrap() - velocity(&e, &(x - dx), t).unwrap())
                    / (2.0 * h);
                jac.set_column(j, &col);
            }
            let nu = normal(&e, &x, t).unwrap();
            let p = Matrix3::identity() - nu * nu.transpose();
            let trace = (p * jac).trace();
            let div = surface_divergence_of_velocity(&e, &x, t).unwrap();
            assert!((trace - div).abs() < 1e-8, "{trace} vs {div}");
        }
    }

    #[test]
    fn fd_hessian_of_level_set_matches_closed_form() {
        let e = oscillating_ellipsoid();
        let x = Point::new(0.4, 0.3, 0.2);
        let closed = e.hessian(&x, 0.3).unwrap();
        let fd = level_set_hessian(&Scaled::new(e.clone(), 1.0).without_hessian(), &x, 0.3);
        assert_relative_eq!(closed, fd, epsilon = 1e-8);
    }
}
