//! Planar vector math: poses, polylines and oriented boxes.
//!
//! Everything is SI (meters, radians). Angles follow the math convention,
//! counter-clockwise positive, wrapped to (-pi, pi].

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product; positive when `o` is to the left of `self`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn unit(heading: f64) -> Vec2 {
        Vec2::new(heading.cos(), heading.sin())
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(mut a: f64) -> f64 {
    while a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    }
    while a <= -std::f64::consts::PI {
        a += 2.0 * std::f64::consts::PI;
    }
    a
}

/// A position plus heading in the world frame.
///
/// The pose's local frame has x pointing forward (along `heading`) and y
/// pointing left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub const fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose2D { x, y, heading }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn forward(&self) -> Vec2 {
        Vec2::unit(self.heading)
    }

    /// Expresses a world point in this pose's frame (x forward, y left).
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.position()).rotated(-self.heading)
    }

    /// Inverse of [`Pose2D::to_local`].
    pub fn to_global(&self, p: Vec2) -> Vec2 {
        p.rotated(self.heading) + self.position()
    }

    /// Pose shifted by `dist` along its own heading.
    pub fn advanced(&self, dist: f64) -> Pose2D {
        let p = self.position() + self.forward() * dist;
        Pose2D::new(p.x, p.y, self.heading)
    }
}

/// Distance from `p` to the segment `a`-`b`, plus the closest point and the
/// clamped parameter t in [0, 1].
pub fn point_segment(p: Vec2, a: Vec2, b: Vec2) -> (f64, Vec2, f64) {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    let t = if len_sq > 0.0 {
        ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let closest = a + ab * t;
    ((p - closest).norm(), closest, t)
}

/// Shortest distance between segments `a0`-`a1` and `b0`-`b1`.
pub fn segment_segment_distance(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> f64 {
    if segments_intersect(a0, a1, b0, b1) {
        return 0.0;
    }
    let d0 = point_segment(b0, a0, a1).0;
    let d1 = point_segment(b1, a0, a1).0;
    let d2 = point_segment(a0, b0, b1).0;
    let d3 = point_segment(a1, b0, b1).0;
    d0.min(d1).min(d2).min(d3)
}

/// True when the closed segments share at least one point.
pub fn segments_intersect(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> bool {
    let d1 = (a1 - a0).cross(b0 - a0);
    let d2 = (a1 - a0).cross(b1 - a0);
    let d3 = (b1 - b0).cross(a0 - b0);
    let d4 = (b1 - b0).cross(a1 - b0);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |d: f64, p: Vec2, q0: Vec2, q1: Vec2| {
        d == 0.0
            && p.x >= q0.x.min(q1.x)
            && p.x <= q0.x.max(q1.x)
            && p.y >= q0.y.min(q1.y)
            && p.y <= q0.y.max(q1.y)
    };
    on(d1, b0, a0, a1) || on(d2, b1, a0, a1) || on(d3, a0, b0, b1) || on(d4, a1, b0, b1)
}

/// Even-odd test; points exactly on an edge may land on either side.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.y > p.y) != (pj.y > p.y) {
            let x_cross = pj.x + (p.y - pj.y) / (pi.y - pj.y) * (pi.x - pj.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Projection of a point onto a polyline.
#[derive(Debug, Clone, Copy)]
pub struct PolylineHit {
    pub point: Vec2,
    /// Heading of the segment the hit lies on.
    pub tangent: f64,
    /// Positive when the query point is left of the tangent direction.
    pub offset: f64,
    /// Arc length from the start of the polyline to the hit.
    pub s: f64,
}

pub fn polyline_length(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Closest point on the polyline to `p`. Requires at least two points.
pub fn project_on_polyline(pts: &[Vec2], p: Vec2) -> PolylineHit {
    debug_assert!(pts.len() >= 2);
    let mut best: Option<(f64, PolylineHit)> = None;
    let mut s_acc = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg_len = (b - a).norm();
        let (dist, closest, t) = point_segment(p, a, b);
        let better = match &best {
            Some((d, _)) => dist < *d - 1e-12,
            None => true,
        };
        if better {
            let dir = b - a;
            let tangent = dir.y.atan2(dir.x);
            let offset = dir.cross(p - a) / seg_len.max(1e-12);
            best = Some((
                dist,
                PolylineHit {
                    point: closest,
                    tangent,
                    offset,
                    s: s_acc + seg_len * t,
                },
            ));
        }
        s_acc += seg_len;
    }
    best.unwrap().1
}

/// Point at arc length `s` along the polyline (clamped to the ends), with the
/// heading of the containing segment.
pub fn point_at_arclength(pts: &[Vec2], s: f64) -> (Vec2, f64) {
    debug_assert!(pts.len() >= 2);
    let mut remaining = s.max(0.0);
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg = b - a;
        let len = seg.norm();
        let heading = seg.y.atan2(seg.x);
        if remaining <= len {
            return (a + seg * (remaining / len.max(1e-12)), heading);
        }
        remaining -= len;
    }
    let n = pts.len();
    let seg = pts[n - 1] - pts[n - 2];
    (pts[n - 1], seg.y.atan2(seg.x))
}

/// Oriented bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    /// Half extents along the box's local x (length) and y (width).
    pub half: Vec2,
    pub heading: f64,
}

impl Obb {
    pub fn new(center: Vec2, half: Vec2, heading: f64) -> Self {
        Obb {
            center,
            half,
            heading,
        }
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let fx = Vec2::unit(self.heading) * self.half.x;
        let fy = Vec2::unit(self.heading + std::f64::consts::FRAC_PI_2) * self.half.y;
        [
            self.center + fx + fy,
            self.center + fx - fy,
            self.center - fx - fy,
            self.center - fx + fy,
        ]
    }

    fn axes(&self) -> [Vec2; 2] {
        [
            Vec2::unit(self.heading),
            Vec2::unit(self.heading + std::f64::consts::FRAC_PI_2),
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let local = (p - self.center).rotated(-self.heading);
        local.x.abs() <= self.half.x && local.y.abs() <= self.half.y
    }
}

/// Separating-axis overlap test. Touching boxes count as overlapping,
/// consistent with [`obb_distance`] returning zero.
pub fn obb_overlap(a: &Obb, b: &Obb) -> bool {
    let corners_a = a.corners();
    let corners_b = b.corners();
    for axis in a.axes().iter().chain(b.axes().iter()) {
        let proj = |cs: &[Vec2; 4]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for c in cs {
                let v = c.dot(*axis);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        };
        let (a_lo, a_hi) = proj(&corners_a);
        let (b_lo, b_hi) = proj(&corners_b);
        if a_hi < b_lo || b_hi < a_lo {
            return false;
        }
    }
    true
}

/// Shortest distance between two boxes; zero iff they overlap or touch.
pub fn obb_distance(a: &Obb, b: &Obb) -> f64 {
    if obb_overlap(a, b) {
        return 0.0;
    }
    let ca = a.corners();
    let cb = b.corners();
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let (a0, a1) = (ca[i], ca[(i + 1) % 4]);
        for j in 0..4 {
            let (b0, b1) = (cb[j], cb[(j + 1) % 4]);
            best = best.min(segment_segment_distance(a0, a1, b0, b1));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn local_frame_rotated_example() {
        // Ego rotated by pi/2; a point one meter ahead must have norm 1 locally.
        let ego = Pose2D::new(3.0, -2.0, FRAC_PI_2);
        let ahead = ego.position() + ego.forward() * 1.0;
        let local = ego.to_local(ahead);
        assert!((local.norm() - 1.0).abs() < 1e-12);
        assert!((local.x - 1.0).abs() < 1e-12);
        assert!(local.y.abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        for k in -8..=8 {
            let a = wrap_angle(0.3 + k as f64 * 2.0 * PI);
            assert!((a - 0.3).abs() < 1e-9);
        }
        assert!((wrap_angle(PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn frame_round_trip(
            x in -1000.0..1000.0f64,
            y in -1000.0..1000.0f64,
            h in -10.0..10.0f64,
            px in -1000.0..1000.0f64,
            py in -1000.0..1000.0f64,
        ) {
            let pose = Pose2D::new(x, y, h);
            let p = Vec2::new(px, py);
            let back = pose.to_global(pose.to_local(p));
            prop_assert!((back - p).norm() < 1e-9);
            let forth = pose.to_local(pose.to_global(p));
            prop_assert!((forth - p).norm() < 1e-9);
        }

        #[test]
        fn obb_distance_symmetric_nonnegative(
            ax in -20.0..20.0f64, ay in -20.0..20.0f64, ah in -4.0..4.0f64,
            bx in -20.0..20.0f64, by in -20.0..20.0f64, bh in -4.0..4.0f64,
        ) {
            let a = Obb::new(Vec2::new(ax, ay), Vec2::new(2.2, 0.9), ah);
            let b = Obb::new(Vec2::new(bx, by), Vec2::new(1.5, 1.5), bh);
            let dab = obb_distance(&a, &b);
            let dba = obb_distance(&b, &a);
            prop_assert!(dab >= 0.0);
            prop_assert!((dab - dba).abs() < 1e-9);
            prop_assert_eq!(dab == 0.0, obb_overlap(&a, &b));
        }
    }

    /// Rasterized overlap oracle: walk a 1 cm grid over box `a` and test
    /// containment in `b`.
    fn overlap_oracle(a: &Obb, b: &Obb) -> bool {
        let step = 0.01;
        let nx = (2.0 * a.half.x / step).ceil() as i64;
        let ny = (2.0 * a.half.y / step).ceil() as i64;
        for i in 0..=nx {
            for j in 0..=ny {
                let local = Vec2::new(
                    -a.half.x + 2.0 * a.half.x * i as f64 / nx as f64,
                    -a.half.y + 2.0 * a.half.y * j as f64 / ny as f64,
                );
                let p = local.rotated(a.heading) + a.center;
                if b.contains(p) {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn obb_overlap_matches_rasterized_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 60 {
            let a = Obb::new(
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                Vec2::new(rng.gen_range(0.3..2.5), rng.gen_range(0.3..2.5)),
                rng.gen_range(-PI..PI),
            );
            let b = Obb::new(
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                Vec2::new(rng.gen_range(0.3..2.5), rng.gen_range(0.3..2.5)),
                rng.gen_range(-PI..PI),
            );
            // Skip knife-edge configurations the 1 cm raster cannot decide.
            if obb_distance(&a, &b) < 0.02 && !obb_overlap(&a, &b) {
                continue;
            }
            if obb_overlap(&a, &b) {
                // A genuine overlap must contain grid points unless it is
                // thinner than the raster; shrink tolerance by skipping those.
                let oracle = overlap_oracle(&a, &b) || overlap_oracle(&b, &a);
                if !oracle {
                    continue;
                }
                assert!(oracle);
            } else {
                assert!(!overlap_oracle(&a, &b) && !overlap_oracle(&b, &a));
            }
            checked += 1;
        }
    }

    #[test]
    fn obb_distance_axis_aligned_gap() {
        let a = Obb::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), 0.0);
        let b = Obb::new(Vec2::new(5.0, 0.0), Vec2::new(1.0, 1.0), 0.0);
        assert!((obb_distance(&a, &b) - 3.0).abs() < 1e-12);
        // Nearest corners are (1, 1) and (4, 4).
        let c = Obb::new(Vec2::new(5.0, 5.0), Vec2::new(1.0, 1.0), 0.0);
        assert!((obb_distance(&a, &c) - 18.0f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn obb_touching_is_overlap_with_zero_distance() {
        let a = Obb::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), 0.0);
        let b = Obb::new(Vec2::new(2.0, 0.0), Vec2::new(1.0, 1.0), 0.0);
        assert!(obb_overlap(&a, &b));
        assert_eq!(obb_distance(&a, &b), 0.0);
    }

    /// Dense-sampling oracle for polyline projection.
    fn project_oracle(pts: &[Vec2], p: Vec2) -> f64 {
        let total = polyline_length(pts);
        let n = (total / 0.001).ceil() as usize;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let (q, _) = point_at_arclength(pts, total * i as f64 / n as f64);
            best = best.min((p - q).norm());
        }
        best
    }

    #[test]
    fn polyline_projection_matches_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pts = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(10.0, 0.0),
            Vec2::new(14.0, 3.0),
            Vec2::new(14.0, 12.0),
            Vec2::new(20.0, 18.0),
        ];
        for _ in 0..200 {
            let p = Vec2::new(rng.gen_range(-5.0..25.0), rng.gen_range(-8.0..22.0));
            let hit = project_on_polyline(&pts, p);
            let oracle = project_oracle(&pts, p);
            assert!(
                ((p - hit.point).norm() - oracle).abs() < 2e-3,
                "projection {} vs oracle {}",
                (p - hit.point).norm(),
                oracle
            );
        }
    }

    #[test]
    fn signed_offset_positive_left() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)];
        let left = project_on_polyline(&pts, Vec2::new(5.0, 1.5));
        assert!((left.offset - 1.5).abs() < 1e-12);
        let right = project_on_polyline(&pts, Vec2::new(5.0, -2.0));
        assert!((right.offset + 2.0).abs() < 1e-12);
        assert!((left.s - 5.0).abs() < 1e-12);
        assert!(left.tangent.abs() < 1e-12);
    }

    #[test]
    fn arclength_round_trip() {
        let pts = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(3.0, 4.0),
            Vec2::new(3.0, 10.0),
        ];
        assert!((polyline_length(&pts) - 11.0).abs() < 1e-12);
        let (p, h) = point_at_arclength(&pts, 5.0);
        assert!((p - Vec2::new(3.0, 4.0)).norm() < 1e-12);
        let (q, _) = point_at_arclength(&pts, 8.0);
        assert!((q - Vec2::new(3.0, 7.0)).norm() < 1e-12);
        assert!((h - (4.0f64).atan2(3.0)).abs() < 1e-12 || (h - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn polygon_containment() {
        let poly = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(4.0, 0.0),
            Vec2::new(4.0, 2.0),
            Vec2::new(0.0, 2.0),
        ];
        assert!(point_in_polygon(Vec2::new(1.0, 1.0), &poly));
        assert!(!point_in_polygon(Vec2::new(5.0, 1.0), &poly));
        assert!(!point_in_polygon(Vec2::new(-0.5, 1.0), &poly));
    }

    #[test]
    fn segment_intersection_cases() {
        let o = Vec2::new(0.0, 0.0);
        assert!(segments_intersect(
            o,
            Vec2::new(2.0, 2.0),
            Vec2::new(0.0, 2.0),
            Vec2::new(2.0, 0.0)
        ));
        assert!(!segments_intersect(
            o,
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 1.0)
        ));
        // Collinear touching endpoints.
        assert!(segments_intersect(
            o,
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0)
        ));
    }
}
