use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

pub type Point = [f64; 3];

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Shoebox room with a stereo microphone pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    /// `(X, Y, H)` in meters.
    pub dims: Point,
    pub mic_left: Point,
    pub mic_right: Point,
    /// Reverberation time in seconds; 0 renders an anechoic room.
    pub rt60: f64,
    #[serde(default = "default_speed")]
    pub speed_of_sound: f64,
}

fn default_speed() -> f64 {
    SPEED_OF_SOUND
}

/// The three simulated rooms used by the evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoomPreset {
    Room1,
    Room2,
    Room3,
}

impl RoomPreset {
    pub const ALL: [RoomPreset; 3] = [RoomPreset::Room1, RoomPreset::Room2, RoomPreset::Room3];

    pub fn id(self) -> &'static str {
        match self {
            RoomPreset::Room1 => "room1",
            RoomPreset::Room2 => "room2",
            RoomPreset::Room3 => "room3",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.id() == id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown room `{id}`")))
    }

    pub fn config(self, rt60: f64) -> RoomConfig {
        let (dims, mic_left, mic_right) = match self {
            RoomPreset::Room1 => ([7.0, 6.0, 3.0], [3.4, 1.0, 1.6], [3.7, 1.0, 1.6]),
            RoomPreset::Room2 => ([4.0, 7.0, 2.8], [0.2, 3.2, 1.7], [0.2, 3.0, 1.7]),
            RoomPreset::Room3 => ([7.0, 7.0, 2.7], [3.4, 3.1, 1.5], [3.5, 2.9, 1.5]),
        };
        RoomConfig {
            dims,
            mic_left,
            mic_right,
            rt60,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }
}

impl RoomConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.dims.iter().all(|&d| d > 0.0 && d.is_finite()),
            Geometry,
            "room dimensions must be positive"
        );
        ensure!(
            self.rt60 >= 0.0 && self.rt60.is_finite(),
            Geometry,
            "rt60 must be non-negative"
        );
        ensure!(
            self.speed_of_sound > 0.0,
            Geometry,
            "speed of sound must be positive"
        );
        ensure!(
            self.strictly_inside(self.mic_left) && self.strictly_inside(self.mic_right),
            Geometry,
            "microphones must lie strictly inside the room"
        );
        ensure!(
            dist(self.mic_left, self.mic_right) > 0.0,
            Geometry,
            "microphones coincide"
        );
        Ok(())
    }

    pub fn strictly_inside(&self, p: Point) -> bool {
        (0..3).all(|i| p[i] > 0.0 && p[i] < self.dims[i])
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface_area(&self) -> f64 {
        let [x, y, h] = self.dims;
        2.0 * (x * y + x * h + y * h)
    }

    pub fn mic_spacing(&self) -> f64 {
        dist(self.mic_left, self.mic_right)
    }

    /// Largest possible `|tdoa|` in seconds.
    pub fn max_tdoa(&self) -> f64 {
        self.mic_spacing() / self.speed_of_sound
    }

    pub fn mic_center(&self) -> Point {
        [
            0.5 * (self.mic_left[0] + self.mic_right[0]),
            0.5 * (self.mic_left[1] + self.mic_right[1]),
            0.5 * (self.mic_left[2] + self.mic_right[2]),
        ]
    }

    /// Horizontal unit vectors `(axis, broadside)`: `axis` points from the
    /// left mic to the right mic, `broadside` is perpendicular to it and
    /// points towards the room center.
    pub fn mic_frame(&self) -> (Point, Point) {
        let d = sub(self.mic_right, self.mic_left);
        let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let axis = [d[0] / norm, d[1] / norm, 0.0];
        let mut broadside = [-axis[1], axis[0], 0.0];
        let c = self.mic_center();
        let to_center = [self.dims[0] / 2.0 - c[0], self.dims[1] / 2.0 - c[1]];
        if broadside[0] * to_center[0] + broadside[1] * to_center[1] < 0.0 {
            broadside = [-broadside[0], -broadside[1], 0.0];
        }
        (axis, broadside)
    }

    /// Position of a source at `angle_deg` from broadside (positive towards
    /// the right mic) and `distance` meters from the mic-pair center, at mic height.
    pub fn source_position(&self, angle_deg: f64, distance: f64) -> Point {
        let (axis, broadside) = self.mic_frame();
        let th = angle_deg.to_radians();
        let c = self.mic_center();
        [
            c[0] + distance * (th.cos() * broadside[0] + th.sin() * axis[0]),
            c[1] + distance * (th.cos() * broadside[1] + th.sin() * axis[1]),
            c[2],
        ]
    }
}

/// Absorption coefficient from the Sabine formula, clamped to `(0, 0.99]`.
pub fn rt60_to_absorption(room: &RoomConfig) -> Result<f64> {
    ensure!(
        room.rt60 > 0.0,
        InvalidArgument,
        "rt60 must be positive for absorption (rt60 = 0 renders anechoically)"
    );
    let alpha = 0.161 * room.volume() / (room.surface_area() * room.rt60);
    Ok(alpha.clamp(f64::MIN_POSITIVE, 0.99))
}

/// Point-source placement relative to the microphone pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Degrees in `[-90, 90]` from broadside; positive towards the right mic.
    pub angle_deg: f64,
    /// Meters from the mic-pair center.
    pub distance_m: f64,
    #[serde(default = "unit_gain")]
    pub gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

impl SourceSpec {
    pub fn new(angle_deg: f64, distance_m: f64) -> Self {
        Self {
            angle_deg,
            distance_m,
            gain: 1.0,
        }
    }

    pub fn position(&self, room: &RoomConfig) -> Point {
        room.source_position(self.angle_deg, self.distance_m)
    }
}

/// Ground-truth time difference of arrival for a point source.
///
/// Positive values mean the sound reaches the right microphone first.
pub fn tdoa_at(room: &RoomConfig, position: Point) -> Result<f64> {
    let dl = dist(position, room.mic_left);
    let dr = dist(position, room.mic_right);
    ensure!(
        dl > 1e-9 && dr > 1e-9,
        Geometry,
        "source coincides with a microphone"
    );
    Ok((dl - dr) / room.speed_of_sound)
}

pub fn ground_truth_tdoa(room: &RoomConfig, source: &SourceSpec) -> Result<f64> {
    tdoa_at(room, source.position(room))
}

/// Finds the broadside angle whose source (at `distance_m`) has the requested
/// TDOA, by bisection. Useful for building scenes with exact integer-sample delays.
pub fn angle_for_tdoa(room: &RoomConfig, tdoa: f64, distance_m: f64) -> Result<f64> {
    let f = |a: f64| tdoa_at(room, room.source_position(a, distance_m)).map(|t| t - tdoa);
    let (mut lo, mut hi) = (-90.0, 90.0);
    let (flo, fhi) = (f(lo)?, f(hi)?);
    ensure!(
        flo <= 0.0 && fhi >= 0.0,
        Geometry,
        "tdoa {tdoa} s is not reachable at distance {distance_m} m"
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
