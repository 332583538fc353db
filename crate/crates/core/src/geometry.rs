//! Gaze-ray to screen-pixel conversion.
//!
//! Camera coordinates are millimetres with the usual image convention
//! (x right, y down, z away from the camera). The screen is a rectangle given
//! by its top-left corner and an orthonormal in-plane basis, so a 3D point on
//! the plane maps to pixels with two dot products.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

const BASIS_TOL: f64 = 1e-9;
const PARALLEL_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("gaze ray is parallel to the screen plane")]
    ParallelRay,
    #[error("screen plane lies behind the gaze origin (t = {0})")]
    BehindOrigin(f64),
    #[error("gaze direction has zero length")]
    ZeroDirection,
    #[error("invalid screen model: {0}")]
    InvalidScreen(String),
}

/// A 3D gaze ray: origin in millimetres, direction of any positive length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    #[serde(rename = "o")]
    pub origin: [f64; 3],
    #[serde(rename = "d")]
    pub direction: [f64; 3],
}

impl Ray {
    pub fn new(origin: [f64; 3], direction: [f64; 3]) -> Self {
        Self { origin, direction }
    }
}

/// Calibrated screen plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenModel {
    pub s0_mm: Vec3,
    pub ex: Vec3,
    pub ey: Vec3,
    pub normal: Vec3,
    pub width_px: u32,
    pub height_px: u32,
    pub pitch_mm: f64,
}

/// On-screen point of gaze in pixels. Off-screen points are kept unclamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pog {
    pub x_px: f64,
    pub y_px: f64,
    pub on_screen: bool,
}

impl Default for ScreenModel {
    /// 1920x1080 panel, 384 mm wide, centred on the camera origin.
    fn default() -> Self {
        fit_screen(1920, 1080, 384.0, [0.0, 0.0, 0.0], true).expect("default screen is valid")
    }
}

impl ScreenModel {
    pub fn width_mm(&self) -> f64 {
        self.width_px as f64 * self.pitch_mm
    }

    pub fn height_mm(&self) -> f64 {
        self.height_px as f64 * self.pitch_mm
    }

    pub fn contains(&self, x_px: f64, y_px: f64) -> bool {
        (0.0..self.width_px as f64).contains(&x_px) && (0.0..self.height_px as f64).contains(&y_px)
    }

    /// 3D camera-space point of pixel `(u, v)`.
    pub fn pixel_to_point(&self, u: f64, v: f64) -> Vec3 {
        self.s0_mm + self.ex * (u * self.pitch_mm) + self.ey * (v * self.pitch_mm)
    }

    /// Checks the basis and size invariants.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: &str| Err(GeometryError::InvalidScreen(msg.to_string()));
        if self.width_px == 0 || self.height_px == 0 {
            return bad("pixel dimensions must be positive");
        }
        if !(self.pitch_mm.is_finite() && self.pitch_mm > 0.0) {
            return bad("pitch must be positive");
        }
        if !self.s0_mm.iter().all(|v| v.is_finite()) {
            return bad("corner must be finite");
        }
        if (self.ex.norm() - 1.0).abs() > BASIS_TOL || (self.ey.norm() - 1.0).abs() > BASIS_TOL {
            return bad("ex and ey must be unit vectors");
        }
        if self.ex.dot(&self.ey).abs() > BASIS_TOL {
            return bad("ex and ey must be orthogonal");
        }
        if (self.normal - self.ex.cross(&self.ey)).norm() > BASIS_TOL {
            return bad("normal must equal ex x ey");
        }
        Ok(())
    }
}

/// Intersects a gaze ray with the screen plane and returns pixel coordinates.
pub fn intersect(ray: &Ray, screen: &ScreenModel) -> Result<Pog, GeometryError> {
    let o = Vec3::from(ray.origin);
    let d = Vec3::from(ray.direction);
    let len = d.norm();
    if !(len > 0.0) || !len.is_finite() {
        return Err(GeometryError::ZeroDirection);
    }
    let d = d / len;
    let denom = d.dot(&screen.normal);
    if denom.abs() < PARALLEL_EPS {
        return Err(GeometryError::ParallelRay);
    }
    let t = (screen.s0_mm - o).dot(&screen.normal) / denom;
    if t <= 0.0 {
        return Err(GeometryError::BehindOrigin(t));
    }
    let rel = o + d * t - screen.s0_mm;
    let x_px = rel.dot(&screen.ex) / screen.pitch_mm;
    let y_px = rel.dot(&screen.ey) / screen.pitch_mm;
    Ok(Pog { x_px, y_px, on_screen: screen.contains(x_px, y_px) })
}

/// Builds a screen parallel to the camera's image plane, centred at
/// `center_offset_mm`. With `pixel_y_down` the pixel rows run along camera +y
/// (image convention); otherwise along -y.
pub fn fit_screen(
    width_px: u32,
    height_px: u32,
    width_mm: f64,
    center_offset_mm: [f64; 3],
    pixel_y_down: bool,
) -> Result<ScreenModel, GeometryError> {
    if width_px == 0 || height_px == 0 || !(width_mm.is_finite() && width_mm > 0.0) {
        return Err(GeometryError::InvalidScreen("non-positive dimension".into()));
    }
    let pitch_mm = width_mm / width_px as f64;
    let ex = Vec3::new(1.0, 0.0, 0.0);
    let ey = if pixel_y_down { Vec3::new(0.0, 1.0, 0.0) } else { Vec3::new(0.0, -1.0, 0.0) };
    let center = Vec3::from(center_offset_mm);
    let height_mm = height_px as f64 * pitch_mm;
    let s0_mm = center - ex * (width_mm / 2.0) - ey * (height_mm / 2.0);
    let screen = ScreenModel { s0_mm, ex, ey, normal: ex.cross(&ey), width_px, height_px, pitch_mm };
    screen.validate()?;
    Ok(screen)
}

/// Ray from `origin` through pixel `(u, v)`; inverse of [`intersect`].
pub fn ray_through_pixel(origin: [f64; 3], screen: &ScreenModel, u: f64, v: f64) -> Ray {
    let p = screen.pixel_to_point(u, v);
    let d = p - Vec3::from(origin);
    Ray::new(origin, [d.x, d.y, d.z])
}
