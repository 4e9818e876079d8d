//! Shared numeric aliases.

use nalgebra::{DMatrix, DVector, Vector2};

pub type C64 = nalgebra::Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

/// Horizontal position in meters.
pub type Point = Vector2<f64>;

pub fn point(x: f64, y: f64) -> Point {
    Point::new(x, y)
}

pub(crate) fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `‖v‖²` of a complex vector.
pub fn norm_sq(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `|aᴴ b|²`.
pub fn inner_sq(a: &CVector, b: &CVector) -> f64 {
    a.dotc(b).norm_sqr()
}
