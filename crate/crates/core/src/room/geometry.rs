use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

/// Speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
/// Fixed room height in metres.
pub const ROOM_HEIGHT: f64 = 2.7;
/// Height of microphone, talker and attacker in metres.
pub const SOURCE_HEIGHT: f64 = 1.1;
/// Minimum distance from any wall for placed points.
pub const WALL_MARGIN: f64 = 0.1;

const MAX_ALPHA: f64 = 0.99;
const PLACEMENT_ATTEMPTS: usize = 10_000;
const ROOM_RETRIES: usize = 10;
/// Upper bound used for the open-ended far attacker zone.
const FAR_ATTACKER_LIMIT: f64 = 2.0;

/// Three-way category shared by every taxonomy axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    A,
    B,
    C,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::A, Level::B, Level::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn lower(self) -> char {
        (b'a' + self as u8) as char
    }

    pub fn upper(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn from_char(c: char) -> Option<Level> {
        match c.to_ascii_lowercase() {
            'a' => Some(Level::A),
            'b' => Some(Level::B),
            'c' => Some(Level::C),
            _ => None,
        }
    }

    /// Floor area interval in m².
    pub fn room_area(self) -> (f64, f64) {
        [(2.0, 5.0), (5.0, 10.0), (10.0, 20.0)][self.index()]
    }

    /// T60 interval in seconds.
    pub fn t60(self) -> (f64, f64) {
        [(0.05, 0.2), (0.2, 0.6), (0.6, 1.0)][self.index()]
    }

    /// Talker-to-microphone distance interval in metres.
    pub fn talker_distance(self) -> (f64, f64) {
        [(0.1, 0.5), (0.5, 1.0), (1.0, 1.5)][self.index()]
    }

    /// Attacker-to-talker distance interval in metres. Zone C is open-ended
    /// and capped at 2 m for sampling.
    pub fn attacker_distance(self) -> (f64, f64) {
        [(0.1, 0.5), (0.5, 1.0), (1.0, FAR_ATTACKER_LIMIT)][self.index()]
    }
}

/// Acoustic environment: room size, reverberation and talker distance categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EnvironmentLabel {
    pub size: Level,
    pub reverb: Level,
    pub distance: Level,
}

impl EnvironmentLabel {
    pub fn new(size: Level, reverb: Level, distance: Level) -> Self {
        Self {
            size,
            reverb,
            distance,
        }
    }

    /// All 27 labels in `aaa`, `aab`, … `ccc` order.
    pub fn all() -> Vec<EnvironmentLabel> {
        let mut out = Vec::with_capacity(27);
        for s in Level::ALL {
            for r in Level::ALL {
                for d in Level::ALL {
                    out.push(Self::new(s, r, d));
                }
            }
        }
        out
    }
}

impl fmt::Display for EnvironmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}",
            self.size.lower(),
            self.reverb.lower(),
            self.distance.lower()
        )
    }
}

impl FromStr for EnvironmentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        let bad = || Error::Format(format!("invalid environment label {s:?}"));
        if chars.len() != 3 || chars.iter().any(|c| !c.is_ascii_lowercase()) {
            return Err(bad());
        }
        let lv = |c: char| Level::from_char(c).ok_or_else(bad);
        Ok(Self::new(lv(chars[0])?, lv(chars[1])?, lv(chars[2])?))
    }
}

impl Serialize for EnvironmentLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EnvironmentLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A point in room coordinates (metres).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point(pub [f64; 3]);

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point([x, y, z])
    }

    pub fn sub(self, o: Point) -> [f64; 3] {
        [self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]]
    }

    pub fn distance(self, o: Point) -> f64 {
        let d = self.sub(o);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    /// Unit vector pointing from `self` towards `target`.
    pub fn direction_to(self, target: Point) -> Option<[f64; 3]> {
        let d = target.sub(self);
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        (n > 0.0).then(|| [d[0] / n, d[1] / n, d[2] / n])
    }
}

/// One concrete room drawn for an environment label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomInstance {
    pub label: EnvironmentLabel,
    pub length_x: f64,
    pub width_y: f64,
    pub height_z: f64,
    pub t60_target: f64,
    /// Uniform absorption coefficient of all six surfaces.
    pub absorption: f64,
    pub mic: Point,
    pub talker: Point,
    pub attacker: Option<Point>,
    /// Loudspeaker position for replay presentation.
    pub replay_source: Option<Point>,
    pub attack_zone: Option<Level>,
}

impl RoomInstance {
    pub fn volume(&self) -> f64 {
        self.length_x * self.width_y * self.height_z
    }

    pub fn surface_area(&self) -> f64 {
        2.0 * (self.length_x * self.width_y
            + self.length_x * self.height_z
            + self.width_y * self.height_z)
    }

    pub fn floor_area(&self) -> f64 {
        self.length_x * self.width_y
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.length_x, self.width_y, self.height_z]
    }

    pub fn contains(&self, p: Point, margin: f64) -> bool {
        self.dims()
            .iter()
            .zip(p.0)
            .all(|(&l, v)| v >= margin && v <= l - margin)
    }

    pub fn talker_distance(&self) -> f64 {
        self.mic.distance(self.talker)
    }
}

/// Result of inverting Sabine's formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorption {
    pub alpha: f64,
    /// T60 implied by `alpha`; differs from the target only when clamped.
    pub achieved_t60: f64,
    pub clamped: bool,
}

fn sabine_t60(volume: f64, surface: f64, alpha: f64) -> f64 {
    0.161 * volume / (surface * alpha)
}

/// Uniform absorption coefficient giving the target T60 by Sabine's formula,
/// `α = 0.161·V / (T60·A)`, clamped to (0, 0.99].
pub fn absorption_from_t60(room: &RoomInstance) -> Result<Absorption> {
    absorption_for(room.volume(), room.surface_area(), room.t60_target)
}

pub(crate) fn absorption_for(volume: f64, surface: f64, t60: f64) -> Result<Absorption> {
    if !(t60 > 0.0) {
        return Err(arg(format!("T60 must be positive, got {t60}")));
    }
    let alpha = 0.161 * volume / (t60 * surface);
    if alpha > MAX_ALPHA {
        let achieved = sabine_t60(volume, surface, MAX_ALPHA);
        warn!("T60 {t60:.3} s unreachable (α = {alpha:.3}); clamped, achieved {achieved:.3} s");
        return Ok(Absorption {
            alpha: MAX_ALPHA,
            achieved_t60: achieved,
            clamped: true,
        });
    }
    Ok(Absorption {
        alpha,
        achieved_t60: t60,
        clamped: false,
    })
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..=hi)
}

fn offset<R: Rng + ?Sized>(rng: &mut R, from: Point, dist: f64) -> Point {
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    Point::new(from.0[0] + dist * phi.cos(), from.0[1] + dist * phi.sin(), from.0[2])
}

/// Loudspeaker position: at the talker's distance from the mic, on the
/// mic→attacker bearing.
fn replay_position(room: &RoomInstance, attacker: Point) -> Option<Point> {
    let dir = room.mic.direction_to(attacker)?;
    let d = room.talker_distance();
    let m = room.mic.0;
    Some(Point::new(m[0] + d * dir[0], m[1] + d * dir[1], m[2] + d * dir[2]))
}

fn try_attacker<R: Rng + ?Sized>(
    room: &RoomInstance,
    zone: Level,
    rng: &mut R,
) -> Option<(Point, Point)> {
    let dist = uniform(rng, zone.attacker_distance());
    let attacker = offset(rng, room.talker, dist);
    if !room.contains(attacker, WALL_MARGIN) || attacker.distance(room.mic) <= 0.0 {
        return None;
    }
    let replay = replay_position(room, attacker)?;
    room.contains(replay, WALL_MARGIN).then_some((attacker, replay))
}

/// Draws a room for `label`. With `attack_zone`, an attacker position in that
/// zone (and the matching replay loudspeaker position) is placed as well.
///
/// Floor area, aspect ratio (in [0.5, 2]) and T60 are uniform within their
/// intervals; positions are rejection-sampled. After 10 000 failed placements
/// the room dimensions are redrawn, up to 10 times.
pub fn sample_environment<R: Rng + ?Sized>(
    label: EnvironmentLabel,
    attack_zone: Option<Level>,
    rng: &mut R,
) -> Result<RoomInstance> {
    for _ in 0..ROOM_RETRIES {
        let area = uniform(rng, label.size.room_area());
        let aspect = rng.gen_range(0.5..=2.0);
        let length_x = (area * aspect).sqrt();
        let width_y = (area / aspect).sqrt();
        let t60_target = uniform(rng, label.reverb.t60());
        let mut room = RoomInstance {
            label,
            length_x,
            width_y,
            height_z: ROOM_HEIGHT,
            t60_target,
            absorption: 0.0,
            mic: Point::new(0.0, 0.0, 0.0),
            talker: Point::new(0.0, 0.0, 0.0),
            attacker: None,
            replay_source: None,
            attack_zone,
        };
        room.absorption = absorption_from_t60(&room)?.alpha;

        for _ in 0..PLACEMENT_ATTEMPTS {
            room.mic = Point::new(
                rng.gen_range(WALL_MARGIN..=length_x - WALL_MARGIN),
                rng.gen_range(WALL_MARGIN..=width_y - WALL_MARGIN),
                SOURCE_HEIGHT,
            );
            let dist = uniform(rng, label.distance.talker_distance());
            room.talker = offset(rng, room.mic, dist);
            if !room.contains(room.talker, WALL_MARGIN) {
                continue;
            }
            match attack_zone {
                None => return Ok(room),
                Some(zone) => {
                    if let Some((a, r)) = try_attacker(&room, zone, rng) {
                        room.attacker = Some(a);
                        room.replay_source = Some(r);
                        return Ok(room);
                    }
                }
            }
        }
    }
    Err(Error::Infeasible(format!(
        "no placement for environment {label} (attack zone {:?}) after {ROOM_RETRIES} room draws",
        attack_zone
    )))
}

/// Redraws only the attacker (and replay loudspeaker) in an existing room.
pub fn place_attacker<R: Rng + ?Sized>(
    room: &RoomInstance,
    zone: Level,
    rng: &mut R,
) -> Result<RoomInstance> {
    for _ in 0..PLACEMENT_ATTEMPTS {
        if let Some((a, r)) = try_attacker(room, zone, rng) {
            let mut out = room.clone();
            out.attacker = Some(a);
            out.replay_source = Some(r);
            out.attack_zone = Some(zone);
            return Ok(out);
        }
    }
    Err(Error::Infeasible(format!(
        "no attacker position in zone {} for room {}",
        zone.upper(),
        room.label
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn labels_enumerate_and_round_trip() {
        let all = EnvironmentLabel::all();
        assert_eq!(all.len(), 27);
        assert_eq!(all[0].to_string(), "aaa");
        assert_eq!(all[26].to_string(), "ccc");
        let mut seen = std::collections::BTreeSet::new();
        for l in &all {
            let s = l.to_string();
            assert_eq!(s.parse::<EnvironmentLabel>().unwrap(), *l);
            seen.insert(s);
        }
        assert_eq!(seen.len(), 27);
        assert!("abd".parse::<EnvironmentLabel>().is_err());
        assert!("AAA".parse::<EnvironmentLabel>().is_err());
        assert!("aa".parse::<EnvironmentLabel>().is_err());
    }

    fn check_instance(room: &RoomInstance) {
        let (a0, a1) = room.label.size.room_area();
        assert!(room.floor_area() >= a0 - 1e-9 && room.floor_area() <= a1 + 1e-9);
        let (t0, t1) = room.label.reverb.t60();
        assert!(room.t60_target >= t0 && room.t60_target <= t1);
        let (d0, d1) = room.label.distance.talker_distance();
        let d = room.talker_distance();
        assert!(d >= d0 - 1e-9 && d <= d1 + 1e-9, "distance {d}");
        assert!(room.contains(room.mic, WALL_MARGIN));
        assert!(room.contains(room.talker, WALL_MARGIN));
        assert_eq!(room.mic.0[2], SOURCE_HEIGHT);
        assert_eq!(room.talker.0[2], SOURCE_HEIGHT);
        assert_eq!(room.height_z, ROOM_HEIGHT);
        let ratio = room.length_x / room.width_y;
        assert!((0.5 - 1e-9..=2.0 + 1e-9).contains(&ratio));
    }

    #[test]
    fn extreme_labels_respect_intervals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for label in ["aaa", "ccc", "aac", "cca"] {
            let label: EnvironmentLabel = label.parse().unwrap();
            for _ in 0..50 {
                check_instance(&sample_environment(label, None, &mut rng).unwrap());
            }
        }
    }

    #[test]
    fn every_label_and_zone_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for label in EnvironmentLabel::all() {
            for zone in Level::ALL {
                let room = sample_environment(label, Some(zone), &mut rng).unwrap();
                check_instance(&room);
                let a = room.attacker.unwrap();
                let (lo, hi) = zone.attacker_distance();
                let da = a.distance(room.talker);
                assert!(da >= lo - 1e-9 && da <= hi + 1e-9);
                let r = room.replay_source.unwrap();
                assert!((r.distance(room.mic) - room.talker_distance()).abs() < 1e-9);
                assert!(room.contains(r, WALL_MARGIN));
                let moved = place_attacker(&room, zone, &mut rng).unwrap();
                assert_eq!(moved.mic, room.mic);
                assert_eq!(moved.talker, room.talker);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let label: EnvironmentLabel = "bcb".parse().unwrap();
        let a = sample_environment(label, Some(Level::B), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_environment(label, Some(Level::B), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sabine_inversion() {
        let a = absorption_for(5.0 * 2.5 * 2.7, 65.5, 0.3).unwrap();
        assert!((a.alpha - 0.161 * 33.75 / (0.3 * 65.5)).abs() < 1e-15);
        assert!((a.alpha - 0.2765).abs() < 1e-4);
        assert!(!a.clamped);
        let doubled = absorption_for(33.75, 65.5, 0.6).unwrap();
        assert!((doubled.alpha * 2.0 - a.alpha).abs() < 1e-15);
        let long = absorption_for(33.75, 65.5, 1e9).unwrap();
        assert!(long.alpha < 1e-9 && long.alpha > 0.0);
        assert!(absorption_for(33.75, 65.5, 0.0).is_err());
    }

    #[test]
    fn sabine_clamps_short_t60() {
        // 1 m x 2 m floor
        let a = absorption_for(5.4, 20.2, 0.01).unwrap();
        assert!(a.clamped);
        assert_eq!(a.alpha, 0.99);
        assert!(a.achieved_t60 > 0.01);
    }
}
