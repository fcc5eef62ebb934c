//! Window geometry shared by the integral-image path and the naive oracle.
//!
//! All ranges are half-open `[lo, hi)`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::LcnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// A `p x q` box centred on every position.
    #[default]
    Sliding,
    /// Non-overlapping `p x q` tiles anchored at the origin.
    Tiled,
}

impl WindowMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WindowMode::Sliding => "sliding",
            WindowMode::Tiled => "tiled",
        }
    }
}

impl FromStr for WindowMode {
    type Err = LcnError;

    fn from_str(s: &str) -> Result<Self, LcnError> {
        match s {
            "sliding" => Ok(WindowMode::Sliding),
            "tiled" => Ok(WindowMode::Tiled),
            other => Err(LcnError::Range(format!("unknown window mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for WindowMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How sliding windows behave at the border.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Boundary {
    /// Border positions reuse the statistics of the nearest fully interior
    /// anchor: the window is shifted inside the volume, never shrunk.
    #[default]
    Replicate,
}

/// Window covering `pos` along one axis of length `extent`.
pub fn spatial_range(pos: usize, extent: usize, size: usize, mode: WindowMode) -> (usize, usize) {
    debug_assert!(pos < extent && size >= 1);
    match mode {
        WindowMode::Sliding => {
            if size >= extent {
                return (0, extent);
            }
            let lo =
                (pos as isize - (size / 2) as isize).clamp(0, (extent - size) as isize) as usize;
            (lo, lo + size)
        }
        WindowMode::Tiled => {
            let lo = pos / size * size;
            (lo, (lo + size).min(extent))
        }
    }
}

/// Channel group containing channel `c`.
pub fn channel_range(c: usize, c_group: usize) -> (usize, usize) {
    let lo = c / c_group * c_group;
    (lo, lo + c_group)
}

/// Precomputed windows along one axis, plus the inverse relation: for every
/// coordinate, the contiguous range of anchors whose window contains it.
#[derive(Debug, Clone)]
pub struct AxisWindows {
    windows: Vec<(usize, usize)>,
    covering: Vec<(usize, usize)>,
}

impl AxisWindows {
    pub fn new(extent: usize, size: usize, mode: WindowMode) -> Self {
        let windows: Vec<(usize, usize)> = (0..extent)
            .map(|a| spatial_range(a, extent, size, mode))
            .collect();
        // Window bounds are non-decreasing in the anchor, so the anchors covering
        // a coordinate form a contiguous run found by two monotone pointers.
        let mut covering = Vec::with_capacity(extent);
        let (mut first, mut end) = (0usize, 0usize);
        for r in 0..extent {
            while windows[first].1 <= r {
                first += 1;
            }
            while end < extent && windows[end].0 <= r {
                end += 1;
            }
            covering.push((first, end));
        }
        AxisWindows { windows, covering }
    }

    #[inline]
    pub fn window(&self, anchor: usize) -> (usize, usize) {
        self.windows[anchor]
    }

    #[inline]
    pub fn covering(&self, coord: usize) -> (usize, usize) {
        self.covering[coord]
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}
