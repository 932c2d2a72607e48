//! Shoebox rooms: the 27-environment taxonomy, geometry sampling,
//! image-source impulse responses and Schroeder T60 measurement.

mod decay;
mod geometry;
mod image_source;

pub use decay::{measure_t60, schroeder_curve_db};
pub use geometry::{
    absorption_from_t60, place_attacker, sample_environment, Absorption, EnvironmentLabel,
    Level, Point, RoomInstance, SPEED_OF_SOUND, ROOM_HEIGHT, SOURCE_HEIGHT, WALL_MARGIN,
};
pub use image_source::{simulate_rir, Pattern, SINC_HALF_WIDTH};
