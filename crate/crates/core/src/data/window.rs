use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CT display window in Hounsfield units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub level: i32,
    pub width: i32,
}

impl Default for WindowSpec {
    /// Soft-tissue mediastinal window.
    fn default() -> Self {
        WindowSpec { level: 30, width: 520 }
    }
}

impl WindowSpec {
    pub fn new(level: i32, width: i32) -> Result<Self> {
        if width <= 0 {
            return Err(Error::Validation(format!("window width must be positive, got {width}")));
        }
        Ok(WindowSpec { level, width })
    }

    pub fn lower(&self) -> f64 {
        self.level as f64 - self.width as f64 / 2.0
    }

    pub fn upper(&self) -> f64 {
        self.level as f64 + self.width as f64 / 2.0
    }

    /// `round(255·clamp((hu − lower)/width, 0, 1))`, ties rounded up.
    ///
    /// Evaluated in integers: with `t = 2hu − 2level + width` the ratio is
    /// `t / 2width`, so no value that should land on .5 can drift below it.
    pub fn apply(&self, hu: i32) -> u8 {
        let w = self.width as i64;
        let t = 2 * hu as i64 - 2 * self.level as i64 + w;
        if t <= 0 {
            return 0;
        }
        if t >= 2 * w {
            return 255;
        }
        // floor(255·t/(2w) + 1/2)
        ((255 * t + w) / (2 * w)) as u8
    }
}

pub fn window_hu(hu: &[i16], spec: WindowSpec) -> Vec<u8> {
    hu.iter().map(|&v| spec.apply(v as i32)).collect()
}
