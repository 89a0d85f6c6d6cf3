//! Bundled feeders for tests, examples and desk-scale experiments.

use crate::error::Result;
use crate::network::{Bus, Der, FeederNetwork, Line};
use crate::profiles::TimeSeriesProfiles;

/// Substation plus one DER bus over a single 0.1 + j0.1 branch. The smallest
/// feeder on which every quantity in the crate is a scalar.
pub fn two_bus() -> FeederNetwork {
    FeederNetwork {
        buses: vec![
            Bus { index: 0, v_min: 0.9, v_max: 1.1 },
            Bus { index: 1, v_min: 0.9, v_max: 1.1 },
        ],
        lines: vec![Line { from: 0, to: 1, r: 0.1, x: 0.1, shunt_b: 0.0 }],
        ders: vec![Der { bus: 1, q_min: -0.4, q_max: 0.4 }],
    }
}

/// Six interior buses: a short trunk with two laterals, DERs at buses 2 and 5.
///
/// ```text
///     0 - 1 - 2 - 3
///         |
///         4 - 5
///         |
///         6
/// ```
pub fn six_bus() -> FeederNetwork {
    let line = |from, to, r, x| Line { from, to, r, x, shunt_b: 0.0 };
    FeederNetwork {
        buses: (0..=6).map(|index| Bus { index, v_min: 0.95, v_max: 1.05 }).collect(),
        lines: vec![
            line(0, 1, 0.02, 0.04),
            line(1, 2, 0.03, 0.05),
            line(2, 3, 0.02, 0.03),
            line(1, 4, 0.025, 0.045),
            line(4, 5, 0.015, 0.03),
            line(4, 6, 0.02, 0.035),
        ],
        ders: vec![
            Der { bus: 2, q_min: -0.3, q_max: 0.3 },
            Der { bus: 5, q_min: -0.2, q_max: 0.2 },
        ],
    }
}

/// 36 interior buses: an eight-bus trunk feeding seven laterals, sized so
/// evening-peak load pulls the deepest buses below the 0.97 floor without
/// support. Three full-size DERs sit at the ends of the longest laterals,
/// two small ones on the short laterals.
///
/// ```text
///     0 - 1 - 2 - 3 - 4 - 5 - 6 - 7 - 8
///             |   |   |   |   |   |   |
///             9  13  16  21  24  28  33
///             |   |   |   |   |   |   |
///            10  14  17  22  25  29  34
///             |   |   |   |   |   |   |
///            11  15  18  23* 26  30  35
///             |       |       |   |   |
///            12*     19      27  31  36*
///                     |           |
///                    20*         32*
/// ```
///
/// `*` marks a DER bus.
pub fn feeder37() -> FeederNetwork {
    let trunk = |from, to| Line { from, to, r: 0.005, x: 0.006, shunt_b: 0.0 };
    let lateral = |from, to| Line { from, to, r: 0.006, x: 0.004, shunt_b: 0.0 };

    let mut lines = Vec::with_capacity(36);
    for k in 0..8 {
        lines.push(trunk(k, k + 1));
    }
    // (attachment trunk bus, first lateral bus, length)
    let laterals = [(2, 9, 4), (3, 13, 3), (4, 16, 5), (5, 21, 3), (6, 24, 4), (7, 28, 5), (8, 33, 4)];
    for (root, first, len) in laterals {
        lines.push(lateral(root, first));
        for k in 0..len - 1 {
            lines.push(lateral(first + k, first + k + 1));
        }
    }

    FeederNetwork {
        buses: (0..=36).map(|index| Bus { index, v_min: 0.97, v_max: 1.03 }).collect(),
        lines,
        ders: vec![
            Der { bus: 12, q_min: -0.402, q_max: 0.402 },
            Der { bus: 20, q_min: -0.402, q_max: 0.402 },
            Der { bus: 23, q_min: -0.05, q_max: 0.05 },
            Der { bus: 32, q_min: -0.402, q_max: 0.402 },
            Der { bus: 36, q_min: -0.05, q_max: 0.05 },
        ],
    }
}

/// Per-bus peak real consumption for the bundled feeder, positive numbers.
/// Deep lateral buses carry slightly heavier load; that is what drags the
/// lateral ends down in the evening.
pub fn feeder37_peaks() -> Vec<f64> {
    let pattern = [1.0, 1.3, 0.7, 1.1, 0.9];
    (0..36).map(|b| 0.016 * pattern[b % pattern.len()]).collect()
}

/// The total-load level the bundled day is normalized to: the profile is
/// scaled so this level is exceeded for only 3% of the day, leaving the
/// instantaneous peak a few percent higher.
pub const FEEDER37_NOMINAL_LOAD: f64 = 0.93;

/// One synthetic day on the bundled feeder, minute resolution, seeded and
/// normalized; the evening hours violate the 0.97 floor without control.
pub fn day_profiles() -> Result<TimeSeriesProfiles> {
    let network = feeder37();
    let mut profiles = crate::profiles::synthetic_day(&network, &feeder37_peaks(), 37)?;
    profiles.scale_to_duration(FEEDER37_NOMINAL_LOAD, 0.03)?;
    Ok(profiles)
}
