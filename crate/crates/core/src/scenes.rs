//! Reference scenes for the default array: one static talker, one to three
//! talkers moving on arcs, two talkers crossing, and noise only. All use
//! speech-like signals at 7 dB SNR with a 0.3 s reverberation tail.

use alloc::vec::Vec;

use crate::geometry::{MicArrayGeometry, Vec3};
use crate::simulator::{SceneSpec, SourceSignal, SourceSpec, Waypoint};

pub const DURATION_S: f64 = 10.0;
pub const SNR_DB: f64 = 7.0;
pub const RT60_S: f64 = 0.3;

fn scene(sources: Vec<SourceSpec>, seed: u64) -> SceneSpec {
    SceneSpec {
        duration: DURATION_S,
        geometry: MicArrayGeometry::default(),
        sources,
        snr_db: Some(SNR_DB),
        rt60: RT60_S,
        drr_db: 3.0,
        seed,
    }
}

fn source(waypoints: Vec<Waypoint>) -> SourceSpec {
    SourceSpec {
        signal: SourceSignal::default(),
        waypoints,
        gain: 1.0,
    }
}

/// Constant elevation and range, azimuth swept linearly over the scene,
/// sampled every half second.
pub fn arc(az_start: f64, az_end: f64, elevation: f64, range: f64) -> SourceSpec {
    let steps = (2.0 * DURATION_S) as usize;
    source(
        (0..=steps)
            .map(|i| {
                let f = i as f64 / steps as f64;
                Waypoint {
                    t: f * DURATION_S,
                    position: Vec3::from_spherical_deg(
                        az_start + (az_end - az_start) * f,
                        elevation,
                        range,
                    ),
                }
            })
            .collect(),
    )
}

/// Talker at azimuth 30°, elevation 20°, 1.5 m.
pub fn static_talker(seed: u64) -> SceneSpec {
    scene(
        alloc::vec![source(alloc::vec![Waypoint {
            t: 0.0,
            position: Vec3::from_spherical_deg(30.0, 20.0, 1.5),
        }])],
        seed,
    )
}

/// The first `count` (1 to 3) of: 1.5 m sweeping −60°→60° (0.30 m/s),
/// 2 m sweeping 180°→100° (0.24 m/s), 1.2 m sweeping −100°→−160°
/// (0.12 m/s).
pub fn movers(count: usize, seed: u64) -> SceneSpec {
    let all = [
        arc(-60.0, 60.0, 20.0, 1.5),
        arc(180.0, 100.0, 30.0, 2.0),
        arc(-100.0, -160.0, 10.0, 1.2),
    ];
    scene(all.into_iter().take(count.min(3)).collect(), seed)
}

/// Two talkers at 1.5 m and equal elevation sweeping −60°→60° and
/// 60°→−60°, meeting at azimuth 0° halfway through.
pub fn crossing(seed: u64) -> SceneSpec {
    scene(
        alloc::vec![arc(-60.0, 60.0, 20.0, 1.5), arc(60.0, -60.0, 20.0, 1.5)],
        seed,
    )
}

/// Noise only.
pub fn silence(seed: u64) -> SceneSpec {
    scene(Vec::new(), seed)
}

/// Highest source speed in the scene, m/s.
pub fn max_speed(scene: &SceneSpec) -> f64 {
    scene
        .sources
        .iter()
        .flat_map(|s| s.waypoints.windows(2))
        .filter(|w| w[1].t > w[0].t)
        .map(|w| w[1].position.distance(w[0].position) / (w[1].t - w[0].t))
        .fold(0.0, f64::max)
}
