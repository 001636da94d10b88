//! Spherical-Earth geographic math and the local planar execution frame.
//!
//! Geographic inputs are degrees, planar outputs are meters. The local frame
//! is an equirectangular tangent plane anchored at a fixed origin: `x` grows
//! east, `y` grows north, and yaw is measured counterclockwise from `+x`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest distance from the frame origin for which the tangent plane is used.
pub const MAX_FRAME_RANGE_M: f64 = 50_000.0;

/// Segments shorter than this have no defined bearing.
pub const MIN_SEGMENT_M: f64 = 1e-9;

const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * PI / 180.0;

// cos(lat0) collapses near the poles; the planar frame is not usable there.
const MAX_FRAME_LATITUDE: f64 = 89.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    InvalidLongitude(f64),
    #[error("segment shorter than {MIN_SEGMENT_M} m has no bearing")]
    DegenerateSegment,
    #[error("point is {distance_m:.1} m from the frame origin (limit {MAX_FRAME_RANGE_M} m)")]
    OutOfFrameRange { distance_m: f64 },
    #[error("frame origin latitude {0} too close to a pole")]
    PolarFrame(f64),
    #[error("non-finite planar coordinate")]
    NonFinite,
}

/// A WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let p = Self { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !self.lat.is_finite() || !(-90.0..=90.0).contains(&self.lat) {
            return Err(GeoError::InvalidLatitude(self.lat));
        }
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            return Err(GeoError::InvalidLongitude(self.lon));
        }
        Ok(())
    }
}

/// Planar pose in a [`LocalFrame`]. Yaw is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl LocalPose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        (p.0 - self.x).hypot(p.1 - self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    if !a.is_finite() {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid maps -π to π already; the only remaining edge is r == -π.
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Converts a north-referenced clockwise bearing into a local-frame yaw.
pub fn bearing_to_yaw(bearing: f64) -> f64 {
    normalize_angle(FRAC_PI_2 - bearing)
}

/// Converts a local-frame yaw into a north-referenced clockwise bearing.
pub fn yaw_to_bearing(yaw: f64) -> f64 {
    normalize_angle(FRAC_PI_2 - yaw)
}

/// Great-circle distance in meters.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();

    let sin_lat = (dlat / 2.0).sin();
    let sin_lon = (dlon / 2.0).sin();
    let h = (sin_lat * sin_lat + lat1.cos() * lat2.cos() * sin_lon * sin_lon).clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Initial great-circle bearing from `a` to `b` in radians, 0 = north,
/// clockwise positive, in `(-π, π]`.
pub fn bearing(a: GeoPoint, b: GeoPoint) -> Result<f64, GeoError> {
    if haversine_distance(a, b) < MIN_SEGMENT_M {
        return Err(GeoError::DegenerateSegment);
    }
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    Ok(normalize_angle(y.atan2(x)))
}

/// Equirectangular tangent plane anchored at a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    origin: GeoPoint,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Result<Self, GeoError> {
        origin.validate()?;
        if origin.lat.abs() > MAX_FRAME_LATITUDE {
            return Err(GeoError::PolarFrame(origin.lat));
        }
        Ok(Self { origin })
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    fn meters_per_degree_lon(&self) -> f64 {
        METERS_PER_DEGREE * self.origin.lat.to_radians().cos()
    }
}

fn wrap_degrees(d: f64) -> f64 {
    let r = (d + 180.0).rem_euclid(360.0) - 180.0;
    if r == -180.0 && d > 0.0 {
        180.0
    } else {
        r
    }
}

/// Projects `p` into the frame, returning `(east, north)` meters.
pub fn to_local(frame: &LocalFrame, p: GeoPoint) -> Result<(f64, f64), GeoError> {
    p.validate()?;
    let range = haversine_distance(frame.origin, p);
    if range > MAX_FRAME_RANGE_M {
        return Err(GeoError::OutOfFrameRange { distance_m: range });
    }
    let dlon = wrap_degrees(p.lon - frame.origin.lon);
    let dlat = p.lat - frame.origin.lat;
    Ok((dlon * frame.meters_per_degree_lon(), dlat * METERS_PER_DEGREE))
}

/// Inverse of [`to_local`].
pub fn to_geo(frame: &LocalFrame, x: f64, y: f64) -> Result<GeoPoint, GeoError> {
    if !x.is_finite() || !y.is_finite() {
        return Err(GeoError::NonFinite);
    }
    let planar = x.hypot(y);
    if planar > MAX_FRAME_RANGE_M {
        return Err(GeoError::OutOfFrameRange { distance_m: planar });
    }
    let lat = frame.origin.lat + y / METERS_PER_DEGREE;
    let lon = wrap_degrees(frame.origin.lon + x / frame.meters_per_degree_lon());
    GeoPoint::new(lat, lon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gp(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn haversine_identity_is_zero() {
        assert_eq!(haversine_distance(gp(48.0, 11.0), gp(48.0, 11.0)), 0.0);
    }

    #[test]
    fn haversine_one_degree_meridian_arc() {
        let d = haversine_distance(gp(0.0, 0.0), gp(1.0, 0.0));
        assert!((d - 111_194.9).abs() < 0.1, "{d}");
        assert!((d - EARTH_RADIUS_M * PI / 180.0).abs() < 1e-6);
    }

    #[test]
    fn haversine_antipodal_half_circumference() {
        let d = haversine_distance(gp(0.0, 0.0), gp(0.0, 180.0));
        assert!((d - PI * EARTH_RADIUS_M).abs() < 1.0);
        assert!((d - 20_015_086.8).abs() < 1.0);
    }

    #[test]
    fn bearing_axis_cases() {
        assert!(bearing(gp(0.0, 0.0), gp(1.0, 0.0)).unwrap().abs() < 1e-12);
        assert!((bearing(gp(0.0, 0.0), gp(0.0, 1.0)).unwrap() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn bearing_matches_spherical_triangle_oracle() {
        // Oracle: bearing via the Cartesian tangent vectors at `a`.
        let a = gp(10.0, 10.0);
        let b = gp(10.001, 10.001);
        let to_xyz = |p: GeoPoint| {
            let (la, lo) = (p.lat.to_radians(), p.lon.to_radians());
            [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
        };
        let pa = to_xyz(a);
        let pb = to_xyz(b);
        let (la, lo) = (a.lat.to_radians(), a.lon.to_radians());
        let east = [-lo.sin(), lo.cos(), 0.0];
        let north = [-la.sin() * lo.cos(), -la.sin() * lo.sin(), la.cos()];
        let dot = |u: [f64; 3], v: [f64; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
        let d = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
        let oracle = dot(d, east).atan2(dot(d, north));
        let got = bearing(a, b).unwrap();
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn bearing_rejects_degenerate_segment() {
        assert_eq!(
            bearing(gp(5.0, 5.0), gp(5.0, 5.0)),
            Err(GeoError::DegenerateSegment)
        );
    }

    #[test]
    fn to_local_origin_and_meridian_step() {
        let frame = LocalFrame::new(gp(0.0, 0.0)).unwrap();
        assert_eq!(to_local(&frame, gp(0.0, 0.0)).unwrap(), (0.0, 0.0));
        let (x, y) = to_local(&frame, gp(0.001, 0.0)).unwrap();
        assert!(x.abs() < 1e-12);
        assert!((y - 111.195).abs() < 0.01, "{y}");
    }

    #[test]
    fn to_geo_inverts_meridian_step() {
        let frame = LocalFrame::new(gp(0.0, 0.0)).unwrap();
        assert_eq!(to_geo(&frame, 0.0, 0.0).unwrap(), gp(0.0, 0.0));
        let p = to_geo(&frame, 0.0, 111.195).unwrap();
        assert!((p.lat - 0.001).abs() < 1e-8);
        assert!(p.lon.abs() < 1e-12);
    }

    #[test]
    fn projection_scales_longitude_by_origin_latitude() {
        let frame = LocalFrame::new(gp(45.0, 10.0)).unwrap();
        let (x, y) = to_local(&frame, gp(45.0, 10.001)).unwrap();
        let oracle = EARTH_RADIUS_M * 0.001 * 45f64.to_radians().cos() * PI / 180.0;
        assert!((x - oracle).abs() < 1e-9);
        assert!(y.abs() < 1e-12);
        let back = to_geo(&frame, oracle, 0.0).unwrap();
        assert!((back.lon - 10.001).abs() < 1e-12);
    }

    #[test]
    fn to_local_rejects_far_points() {
        let frame = LocalFrame::new(gp(0.0, 0.0)).unwrap();
        assert!(matches!(
            to_local(&frame, gp(1.0, 0.0)),
            Err(GeoError::OutOfFrameRange { .. })
        ));
    }

    #[test]
    fn frame_rejects_poles() {
        assert!(matches!(
            LocalFrame::new(gp(89.5, 0.0)),
            Err(GeoError::PolarFrame(_))
        ));
    }

    #[test]
    fn geopoint_validation() {
        assert!(matches!(
            GeoPoint::new(91.0, 0.0),
            Err(GeoError::InvalidLatitude(_))
        ));
        assert!(matches!(
            GeoPoint::new(0.0, f64::NAN),
            Err(GeoError::InvalidLongitude(_))
        ));
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-FRAC_PI_2 - 2.0 * PI) + FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn frame_handles_antimeridian() {
        let frame = LocalFrame::new(gp(0.0, 179.9995)).unwrap();
        let (x, _) = to_local(&frame, gp(0.0, -179.9995)).unwrap();
        assert!((x - 0.001 * METERS_PER_DEGREE).abs() < 1e-6);
        let back = to_geo(&frame, x, 0.0).unwrap();
        assert!((back.lon + 179.9995).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn haversine_is_symmetric(
            la in -89.0f64..89.0, lo in -179.0f64..179.0,
            lb in -89.0f64..89.0, lob in -179.0f64..179.0,
        ) {
            let a = gp(la, lo);
            let b = gp(lb, lob);
            prop_assert_eq!(haversine_distance(a, b), haversine_distance(b, a));
        }

        #[test]
        fn normalize_angle_stays_in_half_open_range(a in -100.0f64..100.0) {
            let n = normalize_angle(a);
            prop_assert!(n > -PI && n <= PI);
            prop_assert!((a.sin() - n.sin()).abs() < 1e-9 && (a.cos() - n.cos()).abs() < 1e-9);
        }
    }
}
