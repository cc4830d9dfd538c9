//! Ellipse marks and their pairwise overlap.
//!
//! Overlap areas are computed by clipping two convex polygon approximations
//! of the ellipses. Each polygon has [`POLYGON_VERTICES`] vertices placed on
//! a radially scaled copy of the ellipse so that the polygon area equals the
//! ellipse area exactly; the remaining error is an oscillation around the
//! true boundary and largely cancels along any arc.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POLYGON_VERTICES: usize = 256;

/// One annotator's ellipse on one image. All lengths are millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseMark {
    pub mark_id: u64,
    pub image_id: u64,
    pub reader_id: u64,
    pub cx_mm: f64,
    pub cy_mm: f64,
    /// Major semi-axis.
    pub r1_mm: f64,
    /// Minor semi-axis.
    pub r2_mm: f64,
    /// Orientation of the major axis, radians in `[0, π)`.
    pub theta_rad: f64,
}

impl EllipseMark {
    /// Builds a validated mark. The semi-axes may be given in either order;
    /// they are stored major first and the rotation is normalized into `[0, π)`.
    pub fn new(
        mark_id: u64,
        image_id: u64,
        reader_id: u64,
        center: (f64, f64),
        semi_axes: (f64, f64),
        theta_rad: f64,
    ) -> Result<Self> {
        let (a, b) = semi_axes;
        let (r1, r2, theta) = if a >= b {
            (a, b, theta_rad)
        } else {
            (b, a, theta_rad + PI / 2.0)
        };
        let mark = EllipseMark {
            mark_id,
            image_id,
            reader_id,
            cx_mm: center.0,
            cy_mm: center.1,
            r1_mm: r1,
            r2_mm: r2,
            theta_rad: theta.rem_euclid(PI),
        };
        mark.validate()?;
        Ok(mark)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.cx_mm,
            self.cy_mm,
            self.r1_mm,
            self.r2_mm,
            self.theta_rad,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation(format!(
                "mark {} has non-finite geometry",
                self.mark_id
            )));
        }
        if !(self.r2_mm > 0.0 && self.r1_mm >= self.r2_mm) {
            return Err(Error::validation(format!(
                "mark {}: semi-axes must satisfy r1 >= r2 > 0 (got r1={}, r2={})",
                self.mark_id, self.r1_mm, self.r2_mm
            )));
        }
        if !(0.0..PI).contains(&self.theta_rad) {
            return Err(Error::validation(format!(
                "mark {}: rotation {} outside [0, pi)",
                self.mark_id, self.theta_rad
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx_mm, self.cy_mm)
    }

    /// Mark size in mm: the major diameter.
    pub fn size_mm(&self) -> f64 {
        2.0 * self.r1_mm
    }

    pub fn area(&self) -> f64 {
        PI * self.r1_mm * self.r2_mm
    }

    /// True when `p` lies inside the ellipse with both semi-axes scaled by `scale`.
    pub fn contains(&self, p: (f64, f64), scale: f64) -> bool {
        let (s, c) = self.theta_rad.sin_cos();
        let dx = p.0 - self.cx_mm;
        let dy = p.1 - self.cy_mm;
        let u = (c * dx + s * dy) / (self.r1_mm * scale);
        let v = (-s * dx + c * dy) / (self.r2_mm * scale);
        u * u + v * v <= 1.0
    }

    fn ordering_key(&self) -> [u64; 8] {
        [
            self.mark_id,
            self.reader_id,
            self.image_id,
            self.cx_mm.to_bits(),
            self.cy_mm.to_bits(),
            self.r1_mm.to_bits(),
            self.r2_mm.to_bits(),
            self.theta_rad.to_bits(),
        ]
    }

    pub fn center_distance(&self, other: &EllipseMark) -> f64 {
        (self.cx_mm - other.cx_mm).hypot(self.cy_mm - other.cy_mm)
    }

    /// Counter-clockwise area-matched polygon approximation.
    pub fn polygon(&self, n: usize) -> Vec<(f64, f64)> {
        let step = 2.0 * PI / n as f64;
        let scale = (step / step.sin()).sqrt();
        let (s, c) = self.theta_rad.sin_cos();
        let (a, b) = (self.r1_mm * scale, self.r2_mm * scale);
        (0..n)
            .map(|k| {
                let (st, ct) = (k as f64 * step).sin_cos();
                let (u, v) = (a * ct, b * st);
                (self.cx_mm + c * u - s * v, self.cy_mm + s * u + c * v)
            })
            .collect()
    }
}

/// Area of the geometric intersection of two marks, in mm².
pub fn ellipse_intersection_area(a: &EllipseMark, b: &EllipseMark) -> f64 {
    if a.center_distance(b) >= a.r1_mm + b.r1_mm {
        return 0.0;
    }
    // Containment by bounding circles is exact and avoids clipping error.
    if a.center_distance(b) + a.r1_mm <= b.r2_mm {
        return a.area();
    }
    if a.center_distance(b) + b.r1_mm <= a.r2_mm {
        return b.area();
    }
    let pa = a.polygon(POLYGON_VERTICES);
    let pb = b.polygon(POLYGON_VERTICES);
    // Clip in a canonical order so the result is bit-symmetric in its arguments.
    let (subject, clip) = if a.ordering_key() <= b.ordering_key() {
        (pa, pb)
    } else {
        (pb, pa)
    };
    let area = polygon_area(&clip_convex(&subject, &clip));
    area.clamp(0.0, a.area().min(b.area()))
}

/// Sutherland–Hodgman clipping of `subject` by the convex CCW polygon `clip`.
pub(crate) fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output = subject.to_vec();
    let mut input = Vec::with_capacity(subject.len() + clip.len());
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        std::mem::swap(&mut input, &mut output);
        output.clear();
        let e0 = clip[i];
        let e1 = clip[(i + 1) % clip.len()];
        let side = |p: (f64, f64)| (e1.0 - e0.0) * (p.1 - e0.1) - (e1.1 - e0.1) * (p.0 - e0.0);
        let mut prev = input[input.len() - 1];
        let mut prev_side = side(prev);
        for &cur in input.iter() {
            let cur_side = side(cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(crossing(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(crossing(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    output
}

fn crossing(p: (f64, f64), q: (f64, f64), sp: f64, sq: f64) -> (f64, f64) {
    let t = sp / (sp - sq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Shoelace area; positive for counter-clockwise vertex order.
pub(crate) fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    // Translate to the first vertex to limit cancellation for far-off-origin marks.
    let (ox, oy) = poly[0];
    let mut twice = 0.0;
    for i in 1..poly.len() - 1 {
        let (x0, y0) = (poly[i].0 - ox, poly[i].1 - oy);
        let (x1, y1) = (poly[i + 1].0 - ox, poly[i + 1].1 - oy);
        twice += x0 * y1 - x1 * y0;
    }
    0.5 * twice
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(id: u64, reader: u64, x: f64, y: f64, r: f64) -> EllipseMark {
        EllipseMark::new(id, 1, reader, (x, y), (r, r), 0.0).unwrap()
    }

    fn lens(r1: f64, r2: f64, d: f64) -> f64 {
        if d >= r1 + r2 {
            return 0.0;
        }
        if d <= (r1 - r2).abs() {
            return PI * r1.min(r2).powi(2);
        }
        let a1 = r1 * r1 * ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)).acos();
        let a2 = r2 * r2 * ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)).acos();
        let k = 0.5 * ((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)).sqrt();
        a1 + a2 - k
    }

    #[test]
    fn identical_ellipses_overlap_fully() {
        let a = EllipseMark::new(1, 1, 1, (3.0, -2.0), (12.0, 5.0), 0.4).unwrap();
        let b = EllipseMark { mark_id: 2, ..a };
        let area = ellipse_intersection_area(&a, &b);
        assert!(
            (area - a.area()).abs() / a.area() < 1e-9,
            "{area} vs {}",
            a.area()
        );
    }

    #[test]
    fn disjoint_marks_have_zero_overlap() {
        let a = circle(1, 1, 0.0, 0.0, 5.0);
        let b = circle(2, 2, 10.5, 0.0, 5.0);
        assert_eq!(ellipse_intersection_area(&a, &b), 0.0);
    }

    #[test]
    fn equal_circles_ten_apart_match_lens_formula() {
        let (r, d) = (10.0_f64, 10.0_f64);
        let expected =
            2.0 * r * r * (d / (2.0 * r)).acos() - (d / 2.0) * (4.0 * r * r - d * d).sqrt();
        assert!((expected - lens(r, r, d)).abs() < 1e-9);
        let a = circle(1, 1, 0.0, 0.0, r);
        let b = circle(2, 2, d, 0.0, r);
        let area = ellipse_intersection_area(&a, &b);
        assert!((area - expected).abs() / expected < 5e-3);
        // Overlap ratio used by the hit rule.
        assert!((area / a.area() - 0.391).abs() < 1e-3);
    }

    #[test]
    fn rotated_ellipse_matches_swapped_axes() {
        let a = EllipseMark::new(1, 1, 1, (0.0, 0.0), (4.0, 9.0), 0.0).unwrap();
        assert_eq!(a.r1_mm, 9.0);
        assert!((a.theta_rad - PI / 2.0).abs() < 1e-15);
        assert!(a.contains((0.0, 8.9), 1.0));
        assert!(!a.contains((8.9, 0.0), 1.0));
    }

    #[test]
    fn rejects_degenerate_axes() {
        assert!(EllipseMark::new(1, 1, 1, (0.0, 0.0), (0.0, 3.0), 0.0).is_err());
        assert!(EllipseMark::new(1, 1, 1, (f64::NAN, 0.0), (1.0, 3.0), 0.0).is_err());
    }

    #[test]
    fn contained_ellipse_returns_inner_area() {
        let big = circle(1, 1, 0.0, 0.0, 20.0);
        let small = EllipseMark::new(2, 1, 2, (1.0, 1.0), (5.0, 2.0), 1.0).unwrap();
        assert_eq!(ellipse_intersection_area(&big, &small), small.area());
    }
}
