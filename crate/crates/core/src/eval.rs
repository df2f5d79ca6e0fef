//! Scoring of tracker output against simulator ground truth.
//!
//! Each frame, a truth source keeps the estimate it was matched to in the
//! previous frame while that estimate stays within the gate. The remaining
//! estimates are matched greedily by ascending angular separation seen from
//! the array center. Position errors use only truth sources that are active
//! in that frame.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::geometry::Vec3;
use crate::simulator::{GroundTruth, TrueSource};
use crate::tracker::SourceEstimate;

/// Largest angular separation, in degrees, accepted as a match.
pub const DEFAULT_MATCH_GATE_DEG: f64 = 30.0;

/// Reported sources at one update.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryFrame {
    pub t_seconds: f64,
    pub sources: Vec<SourceEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub match_gate_deg: f64,
    /// Leading seconds excluded from every metric.
    pub warmup_s: f64,
    /// Largest accepted clock difference between paired frames.
    pub time_tolerance_s: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            match_gate_deg: DEFAULT_MATCH_GATE_DEG,
            warmup_s: 0.0,
            time_tolerance_s: 1e-6,
        }
    }
}

/// Aggregate accuracy of one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    /// Frames compared.
    pub frames: usize,
    /// Frames where at least one true source is active.
    pub active_frames: usize,
    /// Active (source, frame) pairs with a matched estimate.
    pub matched: usize,
    /// Active (source, frame) pairs without a matched estimate.
    pub misses: usize,
    /// Estimates matched to no true source, over all frames.
    pub false_estimates: usize,
    pub azimuth_rms_deg: f64,
    pub azimuth_max_deg: f64,
    /// Full 3-D angular error, RMS.
    pub angular_rms_deg: f64,
    /// RMS of `|d̂ − d| / d`, percent.
    pub distance_rms_pct: f64,
    /// Fraction of active frames reporting exactly as many sources as
    /// exist in the scene.
    pub count_accuracy: f64,
    pub id_switches: usize,
    pub runtime_s: Option<f64>,
    /// Wall time over audio duration; below 1 is faster than real time.
    pub real_time_factor: Option<f64>,
}

fn wrap_deg(d: f64) -> f64 {
    let mut d = d % 360.0;
    if d > 180.0 {
        d -= 360.0;
    } else if d < -180.0 {
        d += 360.0;
    }
    d
}

fn rms(sum_sq: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        libm::sqrt(sum_sq / n as f64)
    }
}

/// Greedy matching: repeatedly pairs the closest remaining estimate and
/// truth source by angle, stopping at the gate. Returns
/// `(estimate_index, truth_index)` pairs.
pub fn greedy_match(
    estimates: &[Vec3],
    truth: &[Vec3],
    center: Vec3,
    gate_rad: f64,
) -> Vec<(usize, usize)> {
    extend_match(estimates, truth, center, gate_rad, Vec::new())
}

/// Like [`greedy_match`], but first keeps each `kept` pair whose angle is
/// still within the gate.
pub fn extend_match(
    estimates: &[Vec3],
    truth: &[Vec3],
    center: Vec3,
    gate_rad: f64,
    kept: Vec<(usize, usize)>,
) -> Vec<(usize, usize)> {
    let mut used_e = alloc::vec![false; estimates.len()];
    let mut used_t = alloc::vec![false; truth.len()];
    let mut out = Vec::new();
    for (e, t) in kept {
        if used_e[e] || used_t[t] {
            continue;
        }
        if (estimates[e] - center).angle_to(truth[t] - center) <= gate_rad {
            used_e[e] = true;
            used_t[t] = true;
            out.push((e, t));
        }
    }
    let mut candidates = Vec::new();
    for (e, pe) in estimates.iter().enumerate() {
        for (t, pt) in truth.iter().enumerate() {
            let angle = (*pe - center).angle_to(*pt - center);
            if angle <= gate_rad {
                candidates.push((angle, e, t));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, e, t) in candidates {
        if !used_e[e] && !used_t[t] {
            used_e[e] = true;
            used_t[t] = true;
            out.push((e, t));
        }
    }
    out
}

/// Scores `trajectory` against `truth`, pairing frames by index.
pub fn evaluate(
    trajectory: &[TrajectoryFrame],
    truth: &GroundTruth,
    center: Vec3,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let n = trajectory.len().min(truth.frames.len());
    let gate = opts.match_gate_deg.to_radians();
    let mut report = EvalReport::default();
    let (mut az_sq, mut ang_sq, mut dist_sq) = (0.0, 0.0, 0.0);
    let mut correct_count = 0usize;
    let mut last_id: BTreeMap<u64, u64> = BTreeMap::new();

    for (est, tru) in trajectory.iter().zip(&truth.frames).take(n) {
        if libm::fabs(est.t_seconds - tru.t_seconds) > opts.time_tolerance_s {
            bail!(
                Input,
                "frame clocks disagree: {} s vs {} s",
                est.t_seconds,
                tru.t_seconds
            );
        }
        if tru.t_seconds < opts.warmup_s {
            continue;
        }
        report.frames += 1;
        let est_pos: Vec<Vec3> = est.sources.iter().map(|s| s.position).collect();
        let tru_pos: Vec<Vec3> = tru.sources.iter().map(|s| s.position).collect();
        let kept = tru
            .sources
            .iter()
            .enumerate()
            .filter_map(|(t, src)| {
                let prev = last_id.get(&src.id)?;
                let e = est.sources.iter().position(|s| s.id == *prev)?;
                Some((e, t))
            })
            .collect();
        let matches = extend_match(&est_pos, &tru_pos, center, gate, kept);
        report.false_estimates += est.sources.len() - matches.len();

        for &(e, t) in &matches {
            let id = tru.sources[t].id;
            let estimate_id = est.sources[e].id;
            if let Some(prev) = last_id.insert(id, estimate_id) {
                if prev != estimate_id {
                    report.id_switches += 1;
                }
            }
        }

        let any_active = tru.sources.iter().any(|s| s.active);
        if !any_active {
            continue;
        }
        report.active_frames += 1;
        if est.sources.len() == tru.sources.len() {
            correct_count += 1;
        }
        for (t, src) in tru.sources.iter().enumerate().filter(|(_, s)| s.active) {
            let Some(&(e, _)) = matches.iter().find(|m| m.1 == t) else {
                report.misses += 1;
                continue;
            };
            let (az, ang, rel) = errors(&est.sources[e], src, center);
            report.matched += 1;
            az_sq += az * az;
            ang_sq += ang * ang;
            dist_sq += rel * rel;
            report.azimuth_max_deg = report.azimuth_max_deg.max(libm::fabs(az));
        }
    }

    report.azimuth_rms_deg = rms(az_sq, report.matched);
    report.angular_rms_deg = rms(ang_sq, report.matched);
    report.distance_rms_pct = 100.0 * rms(dist_sq, report.matched);
    report.count_accuracy = if report.active_frames > 0 {
        correct_count as f64 / report.active_frames as f64
    } else {
        0.0
    };
    Ok(report)
}

/// Azimuth error and angular error in degrees, relative distance error.
fn errors(est: &SourceEstimate, truth: &TrueSource, center: Vec3) -> (f64, f64, f64) {
    let e = est.position - center;
    let t = truth.position - center;
    let az = wrap_deg(e.azimuth_deg() - t.azimuth_deg());
    let ang = e.angle_to(t).to_degrees();
    let rel = (e.norm() - t.norm()) / t.norm();
    (az, ang, rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::TruthFrame;
    use alloc::vec;

    fn spherical(az_deg: f64, el_deg: f64, r: f64) -> Vec3 {
        let (az, el) = (az_deg.to_radians(), el_deg.to_radians());
        Vec3::new(
            r * libm::cos(el) * libm::cos(az),
            r * libm::cos(el) * libm::sin(az),
            r * libm::sin(el),
        )
    }

    fn truth_frames(positions: &[Vec<Vec3>]) -> GroundTruth {
        GroundTruth {
            frames: positions
                .iter()
                .enumerate()
                .map(|(i, ps)| TruthFrame {
                    t_seconds: i as f64,
                    sources: ps
                        .iter()
                        .enumerate()
                        .map(|(id, &p)| TrueSource {
                            id: id as u64,
                            position: p,
                            active: true,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn trajectory(positions: &[Vec<(u64, Vec3)>]) -> Vec<TrajectoryFrame> {
        positions
            .iter()
            .enumerate()
            .map(|(i, ps)| TrajectoryFrame {
                t_seconds: i as f64,
                sources: ps
                    .iter()
                    .map(|&(id, p)| SourceEstimate {
                        id,
                        position: p,
                        timestamp: i as f64,
                        existence: 1.0,
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn identical_estimates_have_no_error() {
        let p = spherical(30.0, 20.0, 1.5);
        let truth = truth_frames(&vec![vec![p]; 5]);
        let traj = trajectory(&vec![vec![(7, p)]; 5]);
        let r = evaluate(&traj, &truth, Vec3::ZERO, &EvalOptions::default()).unwrap();
        assert_eq!(r.matched, 5);
        assert_eq!(r.id_switches, 0);
        assert_eq!(r.misses, 0);
        assert!(r.azimuth_rms_deg < 1e-9 && r.distance_rms_pct < 1e-9);
        assert_eq!(r.count_accuracy, 1.0);
    }

    #[test]
    fn fixed_azimuth_bias() {
        let truth = truth_frames(
            &(0..10)
                .map(|i| vec![spherical(10.0 * i as f64, 15.0, 1.5)])
                .collect::<Vec<_>>(),
        );
        let traj = trajectory(
            &(0..10)
                .map(|i| vec![(0, spherical(10.0 * i as f64 + 1.0, 15.0, 1.5))])
                .collect::<Vec<_>>(),
        );
        let r = evaluate(&traj, &truth, Vec3::ZERO, &EvalOptions::default()).unwrap();
        assert!((r.azimuth_rms_deg - 1.0).abs() < 1e-9);
        assert!((r.azimuth_max_deg - 1.0).abs() < 1e-9);
    }

    #[test]
    fn azimuth_wraps_around() {
        let truth = truth_frames(&[vec![spherical(179.5, 0.0, 1.0)]]);
        let traj = trajectory(&[vec![(0, spherical(-179.5, 0.0, 1.0))]]);
        let r = evaluate(&traj, &truth, Vec3::ZERO, &EvalOptions::default()).unwrap();
        assert!((r.azimuth_rms_deg - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hand_labelled_crossing_log() {
        // Two sources cross at frame 5; the tracker swaps labels there and
        // keeps them swapped, which is one switch per true source.
        let a = |i: usize| spherical(-40.0 + 8.0 * i as f64, 10.0, 1.5);
        let b = |i: usize| spherical(40.0 - 8.0 * i as f64, 10.0, 1.5);
        let truth = truth_frames(&(0..10).map(|i| vec![a(i), b(i)]).collect::<Vec<_>>());
        let traj = trajectory(
            &(0..10)
                .map(|i| {
                    if i < 6 {
                        vec![(0, a(i)), (1, b(i))]
                    } else {
                        vec![(1, a(i)), (0, b(i))]
                    }
                })
                .collect::<Vec<_>>(),
        );
        let r = evaluate(&traj, &truth, Vec3::ZERO, &EvalOptions::default()).unwrap();
        assert_eq!(r.id_switches, 2);
        let clean = trajectory(
            &(0..10)
                .map(|i| vec![(0, a(i)), (1, b(i))])
                .collect::<Vec<_>>(),
        );
        assert_eq!(
            evaluate(&clean, &truth, Vec3::ZERO, &EvalOptions::default())
                .unwrap()
                .id_switches,
            0
        );
    }

    #[test]
    fn label_flicker_while_coincident_is_not_a_switch() {
        // Labels swap for the two frames where the sources are 2° apart,
        // then return.
        let a = |i: usize| spherical(-9.0 + 2.0 * i as f64, 10.0, 1.5);
        let b = |i: usize| spherical(9.0 - 2.0 * i as f64, 10.0, 1.5);
        let truth = truth_frames(&(0..10).map(|i| vec![a(i), b(i)]).collect::<Vec<_>>());
        let traj = trajectory(
            &(0..10)
                .map(|i| {
                    if i == 4 || i == 5 {
                        vec![(1, a(i)), (0, b(i))]
                    } else {
                        vec![(0, a(i)), (1, b(i))]
                    }
                })
                .collect::<Vec<_>>(),
        );
        let r = evaluate(&traj, &truth, Vec3::ZERO, &EvalOptions::default()).unwrap();
        assert_eq!(r.id_switches, 0);
    }

    #[test]
    fn misses_and_false_estimates() {
        let truth = truth_frames(&[vec![spherical(0.0, 10.0, 1.0), spherical(90.0, 10.0, 1.0)]]);
        let traj = trajectory(&[vec![
            (0, spherical(1.0, 10.0, 1.0)),
            (1, spherical(-120.0, 10.0, 1.0)),
        ]]);
        let r = evaluate(&traj, &truth, Vec3::ZERO, &EvalOptions::default()).unwrap();
        assert_eq!((r.matched, r.misses, r.false_estimates), (1, 1, 1));
    }

    #[test]
    fn empty_inputs_give_empty_report() {
        let r = evaluate(
            &[],
            &GroundTruth::default(),
            Vec3::ZERO,
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(r, EvalReport::default());
    }

    #[test]
    fn clock_mismatch_is_rejected() {
        let truth = truth_frames(&[vec![spherical(0.0, 10.0, 1.0)]]);
        let mut traj = trajectory(&[vec![]]);
        traj[0].t_seconds = 0.5;
        assert!(evaluate(&traj, &truth, Vec3::ZERO, &EvalOptions::default()).is_err());
    }
}
