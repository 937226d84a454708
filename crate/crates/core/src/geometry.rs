//! Rotated boxes and their overlap.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

/// A `width x height` rectangle with its unrotated top-left corner at
/// `(left, top)`, rotated by `rotation` radians about its centre.
/// Document coordinates: x grows to the right, y grows downwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedBox {
    #[serde(rename = "t")]
    pub top: f64,
    #[serde(rename = "l")]
    pub left: f64,
    #[serde(rename = "h")]
    pub height: f64,
    #[serde(rename = "w")]
    pub width: f64,
    #[serde(rename = "r")]
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid box: {0}")]
pub struct BoxError(pub String);

type Point = (f64, f64);

impl RotatedBox {
    pub fn new(top: f64, left: f64, height: f64, width: f64, rotation: f64) -> Result<Self, BoxError> {
        let b = RotatedBox {
            top,
            left,
            height,
            width,
            rotation,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn axis_aligned(top: f64, left: f64, height: f64, width: f64) -> Result<Self, BoxError> {
        Self::new(top, left, height, width, 0.0)
    }

    pub fn validate(&self) -> Result<(), BoxError> {
        let finite = [self.top, self.left, self.height, self.width, self.rotation]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(BoxError("non-finite field".into()));
        }
        if self.height <= 0.0 || self.width <= 0.0 {
            return Err(BoxError(format!("non-positive size {}x{}", self.width, self.height)));
        }
        if !(self.rotation > -FRAC_PI_2 && self.rotation <= FRAC_PI_2) {
            return Err(BoxError(format!("rotation {} outside (-pi/2, pi/2]", self.rotation)));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn center(&self) -> Point {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    /// Corners in counter-clockwise order (positive shoelace area).
    pub fn corners(&self) -> [Point; 4] {
        let (cx, cy) = self.center();
        let (s, c) = self.rotation.sin_cos();
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        let offsets = [(-hw, -hh), (-hw, hh), (hw, hh), (hw, -hh)];
        let mut pts = offsets.map(|(dx, dy)| (cx + dx * c - dy * s, cy + dx * s + dy * c));
        if signed_area(&pts) < 0.0 {
            pts.reverse();
        }
        pts
    }
}

fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (x1, y1) = poly[i];
            let (x2, y2) = poly[(i + 1) % n];
            x1 * y2 - x2 * y1
        })
        .sum::<f64>()
        / 2.0
}

fn cross(a: Point, b: Point, p: Point) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn intersect(p: Point, q: Point, a: Point, b: Point) -> Point {
    let (dpx, dpy) = (q.0 - p.0, q.1 - p.1);
    let (dax, day) = (b.0 - a.0, b.1 - a.1);
    let denom = dpx * day - dpy * dax;
    if denom.abs() < f64::EPSILON {
        return q;
    }
    let t = ((a.0 - p.0) * day - (a.1 - p.1) * dax) / denom;
    (p.0 + t * dpx, p.1 + t * dpy)
}

/// Sutherland-Hodgman clip of a convex polygon by a convex counter-clockwise clipper.
pub fn clip_convex(subject: &[Point], clipper: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    for i in 0..clipper.len() {
        if output.is_empty() {
            break;
        }
        let a = clipper[i];
        let b = clipper[(i + 1) % clipper.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, a, b));
            }
        }
    }
    output
}

pub fn intersection_area(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let poly = clip_convex(&a.corners(), &b.corners());
    if poly.len() < 3 {
        return 0.0;
    }
    signed_area(&poly).abs()
}

/// Intersection over union of two boxes by convex polygon clipping.
pub fn box_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}
