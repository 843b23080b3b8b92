//! Time-dependent level-set fields.
//!
//! Species A occupies `psi < 0`, species B `psi > 0`. All scenario motions
//! are analytic: time only enters through radii, centers and rotation angles.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

type Eval = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct LevelSetField {
    dim: usize,
    eval: Arc<Eval>,
}

impl fmt::Debug for LevelSetField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelSetField").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl LevelSetField {
    pub fn new(dim: usize, eval: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        LevelSetField { dim, eval: Arc::new(eval) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `x` must hold at least `dim` coordinates; extra entries are ignored.
    pub fn evaluate(&self, x: &[f64], t: f64) -> f64 {
        (self.eval)(&x[..self.dim], t)
    }

    /// Pointwise maximum (union of the B regions).
    pub fn max(self, other: LevelSetField) -> LevelSetField {
        let dim = self.dim;
        LevelSetField::new(dim, move |x, t| self.evaluate(x, t).max(other.evaluate(x, t)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `r^2 - |x - c|^2`, positive inside.
pub fn sphere(dim: usize, center: [f64; 3], radius: f64) -> LevelSetField {
    LevelSetField::new(dim, move |x, _| radius * radius - dist2(x, &center[..x.len()]))
}

/// Sphere at the origin whose radius shrinks linearly to zero at `t = 1/shrink_rate`.
pub fn vanishing_sphere(dim: usize, r0: f64, shrink_rate: f64) -> LevelSetField {
    LevelSetField::new(dim, move |x, t| {
        let r = (1.0 - shrink_rate * t) * r0;
        r * r - dot(x, x)
    })
}

/// Two spheres starting at `x = -+1.5 r_s` and moving towards each other.
pub fn colliding_spheres(dim: usize, r_s: f64, speed: f64) -> LevelSetField {
    LevelSetField::new(dim, move |x, t| {
        let c = 1.5 * r_s - speed * t;
        let rest: f64 = x[1..].iter().map(|v| v * v).sum();
        let left = r_s * r_s - ((x[0] + c) * (x[0] + c) + rest);
        let right = r_s * r_s - ((x[0] - c) * (x[0] - c) + rest);
        left.max(right)
    })
}

/// Bump centers of the popcorn shape: 5 in 2D, 12 in 3D.
pub fn popcorn_centers(dim: usize, r: f64) -> Vec<[f64; 3]> {
    let s = r / 5f64.sqrt();
    let mut out = Vec::new();
    if dim == 2 {
        for k in 0..5 {
            let a = 2.0 * k as f64 * PI / 5.0;
            out.push([s * 2.0 * a.cos(), s * 2.0 * a.sin(), 0.0]);
        }
        return out;
    }
    for k in 0..5 {
        let a = 2.0 * k as f64 * PI / 5.0;
        out.push([s * 2.0 * a.cos(), s * 2.0 * a.sin(), s]);
    }
    for k in 5..10 {
        let a = (2.0 * (k - 5) as f64 - 1.0) * PI / 5.0;
        out.push([s * 2.0 * a.cos(), s * 2.0 * a.sin(), -s]);
    }
    out.push([0.0, 0.0, r]);
    out.push([0.0, 0.0, -r]);
    out
}

/// `r_p + sum_k A exp(-|x - x_k|^2 / lambda^2) - |x|`.
pub fn popcorn(dim: usize, r_p: f64, amplitude: f64, lambda: f64) -> LevelSetField {
    let centers = popcorn_centers(dim, r_p);
    LevelSetField::new(dim, move |x, _| {
        let bumps: f64 = centers
            .iter()
            .map(|c| amplitude * (-dist2(x, &c[..x.len()]) / (lambda * lambda)).exp())
            .sum();
        r_p + bumps - dot(x, x).sqrt()
    })
}

/// Torus around the z axis, tilted by `tilt_angle` about the x axis.
pub fn tilted_torus(r_major: f64, r_minor: f64, tilt_angle: f64) -> LevelSetField {
    let rot = rotation_matrix([1.0, 0.0, 0.0], -tilt_angle);
    LevelSetField::new(3, move |x, _| {
        let p = apply(&rot, x);
        let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - r_major;
        r_minor - (ring * ring + p[2] * p[2]).sqrt()
    })
}

/// `x[axis] - offset`.
pub fn axis_plane(dim: usize, axis: usize, offset: f64) -> LevelSetField {
    assert!(axis < dim, "plane axis {axis} out of range for dimension {dim}");
    LevelSetField::new(dim, move |x, _| x[axis] - offset)
}

/// Rigid rotation with constant angular velocity `omega` (rad per time unit)
/// about `axis` through the origin. In 2D only the z axis is meaningful.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub axis: [f64; 3],
    pub omega: f64,
}

impl RigidMotion {
    pub fn about_z(omega: f64) -> Self {
        RigidMotion { axis: [0.0, 0.0, 1.0], omega }
    }

    pub fn angle(&self, t: f64) -> f64 {
        self.omega * t
    }

    /// Velocity `omega x p` of the rotating frame at point `p`.
    pub fn velocity(&self, p: &[f64; 3]) -> [f64; 3] {
        let w = self.axis.map(|a| a * self.omega);
        [w[1] * p[2] - w[2] * p[1], w[2] * p[0] - w[0] * p[2], w[0] * p[1] - w[1] * p[0]]
    }
}

/// Rodrigues rotation by `angle` about the (normalized) `axis`.
pub fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = dot(&axis, &axis).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = angle.sin_cos();
    let k = 1.0 - c;
    [
        [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
        [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
        [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
    ]
}

fn apply(r: &[[f64; 3]; 3], x: &[f64]) -> [f64; 3] {
    let mut p = [0.0; 3];
    p[..x.len()].copy_from_slice(x);
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
    }
    out
}

/// `rotate(field, m)(x, t) = field(R(-omega t) x, t)`.
pub fn rotate(field: LevelSetField, motion: RigidMotion) -> LevelSetField {
    let dim = field.dim();
    if dim == 2 {
        assert!(
            motion.omega == 0.0 || (motion.axis[0] == 0.0 && motion.axis[1] == 0.0),
            "2D fields can only rotate about z"
        );
    }
    LevelSetField::new(dim, move |x, t| {
        if motion.omega == 0.0 {
            return field.evaluate(x, t);
        }
        let r = rotation_matrix(motion.axis, -motion.angle(t));
        let p = apply(&r, x);
        field.evaluate(&p[..dim], t)
    })
}
