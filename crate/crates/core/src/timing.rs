use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::Error;

/// How fit times are recorded.
///
/// `Off` records zero for every duration so that runs with identical inputs
/// produce byte-identical artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Timing {
    #[default]
    Wall,
    Off,
}

/// Smallest duration reported by wall-clock timing.
const MIN_WALL_SECONDS: f64 = 1e-9;

impl Timing {
    /// Runs `f` and returns its result with the elapsed seconds.
    pub fn measure<T>(self, f: impl FnOnce() -> T) -> (T, f64) {
        match self {
            Timing::Wall => {
                let start = Instant::now();
                let out = f();
                (out, start.elapsed().as_secs_f64().max(MIN_WALL_SECONDS))
            }
            Timing::Off => (f(), 0.0),
        }
    }
}

impl fmt::Display for Timing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Timing::Wall => "wall",
            Timing::Off => "off",
        })
    }
}

impl FromStr for Timing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "wall" => Ok(Timing::Wall),
            "off" => Ok(Timing::Off),
            other => Err(Error::InvalidConfig(format!("unknown timing mode `{other}`"))),
        }
    }
}
