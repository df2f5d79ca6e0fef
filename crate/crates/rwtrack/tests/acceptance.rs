//! End-to-end acceptance checks on the built-in simulator. Prints one
//! PASS/FAIL line per criterion and fails if any gated criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rwtrack::runner::{run_channels, run_scene, BuiltinScene};
use rwtrack_core::correlation::CorrelationSet;
use rwtrack_core::correlation::CrossSpectrumAccumulator;
use rwtrack_core::eval::{EvalOptions, EvalReport};
use rwtrack_core::geometry::*;
use rwtrack_core::localization::steered_energy;
use rwtrack_core::localization::BeamformerOutput;
use rwtrack_core::localization::Observation;
use rwtrack_core::pipeline::{PipelineConfig, SearchSpaces};
use rwtrack_core::simulator::synthesize;
use rwtrack_core::spectral::{reliability_weights, ReliabilityWeights, SpectralFrame};
use rwtrack_core::tracker::*;

struct Outcome {
    pass: bool,
    gated: bool,
    detail: String,
}

fn gated(pass: bool, detail: String) -> Outcome {
    Outcome {
        pass,
        gated: true,
        detail,
    }
}

struct Ctx {
    cfg: PipelineConfig,
    spaces: SearchSpaces,
}

impl Ctx {
    /// One run per seed, which drives both the scene and the tracker as
    /// `--seed` does on the command line.
    fn reports(
        &self,
        scene: BuiltinScene,
        seeds: std::ops::RangeInclusive<u64>,
    ) -> Vec<EvalReport> {
        self.reports_with(scene, seeds, |seed| seed)
    }

    fn reports_with(
        &self,
        scene: BuiltinScene,
        seeds: std::ops::RangeInclusive<u64>,
        tracker_seed: impl Fn(u64) -> u64 + Sync,
    ) -> Vec<EvalReport> {
        let seeds: Vec<u64> = seeds.collect();
        seeds
            .par_iter()
            .map(|&seed| {
                let cfg = self.seeded(tracker_seed(seed));
                run_scene(&cfg, &self.spaces, &scene.spec(seed), 1)
                    .unwrap()
                    .report(&cfg, &EvalOptions::default())
                    .unwrap()
            })
            .collect()
    }

    fn seeded(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            seed,
            ..self.cfg.clone()
        }
    }
}

/// Count accuracy and distance RMS over all active frames of several runs.
fn pooled(reports: &[EvalReport]) -> (f64, f64) {
    let frames: usize = reports.iter().map(|r| r.active_frames).sum();
    let correct: f64 = reports
        .iter()
        .map(|r| r.count_accuracy * r.active_frames as f64)
        .sum();
    let matched: usize = reports.iter().map(|r| r.matched).sum();
    let dist_sq: f64 = reports
        .iter()
        .map(|r| r.distance_rms_pct.powi(2) * r.matched as f64)
        .sum();
    (
        correct / frames as f64,
        (dist_sq / matched.max(1) as f64).sqrt(),
    )
}

fn static_accuracy(ctx: &Ctx) -> Outcome {
    let start = Instant::now();
    let reports = ctx.reports(BuiltinScene::Static, 1..=5);
    let worst_az = reports
        .iter()
        .map(|r| r.azimuth_rms_deg)
        .fold(0.0, f64::max);
    let worst_d = reports
        .iter()
        .map(|r| r.distance_rms_pct)
        .fold(0.0, f64::max);
    let worst_t = reports
        .iter()
        .filter_map(|r| r.runtime_s)
        .fold(0.0, f64::max);
    gated(
        worst_az <= 1.5 && worst_d <= 15.0 && worst_t <= 60.0,
        format!(
            "seeds 1-5: worst azimuth RMS {worst_az:.2} deg (<= 1.5), worst distance RMS {worst_d:.1}% (<= 15), \
             worst pipeline time {worst_t:.2} s (<= 60), total {:.1} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn multi_speaker(ctx: &Ctx) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, scene) in [
        (1, BuiltinScene::Movers1),
        (2, BuiltinScene::Movers2),
        (3, BuiltinScene::Movers3),
    ] {
        let reports = ctx.reports(scene, 1..=5);
        let (count, dist) = pooled(&reports);
        let ok = count >= 0.9 && dist <= 15.0;
        pass &= ok;
        let per_seed: Vec<String> = reports
            .iter()
            .map(|r| format!("{:.2}", r.count_accuracy))
            .collect();
        parts.push(format!(
            "{n} movers {}: count {count:.3} (>= 0.90), distance RMS {dist:.1}% (<= 15), per seed [{}]",
            if ok { "ok" } else { "FAIL" },
            per_seed.join(" ")
        ));
    }
    gated(pass, parts.join("; "))
}

fn crossing_identity(ctx: &Ctx) -> Outcome {
    let switches = |reports: Vec<EvalReport>| -> Vec<usize> {
        reports.iter().map(|r| r.id_switches).collect()
    };
    let gated_runs = switches(ctx.reports(BuiltinScene::Crossing, 1..=10));
    let worst = gated_runs.iter().copied().max().unwrap_or(0);
    // Same scenes under other tracker seeds, reported but not gated.
    let extra: Vec<Vec<usize>> = [0u64, 1000, 2000, 3000]
        .iter()
        .map(|&offset| {
            switches(ctx.reports_with(BuiltinScene::Crossing, 1..=10, |s| {
                if offset == 0 {
                    0
                } else {
                    offset + s
                }
            }))
        })
        .collect();
    let over = extra.iter().flatten().filter(|&&n| n > 1).count();
    gated(
        worst <= 1,
        format!(
            "id switches per seed 1-10: {gated_runs:?} (each <= 1); \
             other tracker seeds: {over} of {} runs over 1 {extra:?}",
            extra.len() * 10
        ),
    )
}

fn silence(ctx: &Ctx) -> Outcome {
    let seeds: Vec<u64> = (1..=5).collect();
    let reported: Vec<usize> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = ctx.seeded(seed);
            let run = run_scene(&cfg, &ctx.spaces, &BuiltinScene::Silence.spec(seed), 1).unwrap();
            run.steps.iter().map(|s| s.estimates.len()).sum()
        })
        .collect();
    gated(
        reported.iter().all(|&n| n == 0),
        format!("reported source-frames per seed 1-5: {reported:?} (all 0)"),
    )
}

/// Direct evaluation of the weighted correlation over the full spectrum.
fn direct_correlation(
    frames: &[SpectralFrame],
    weights: &[ReliabilityWeights],
    (i, j): (usize, usize),
    len: usize,
) -> Vec<f64> {
    let half = len / 2;
    let full = |f: &SpectralFrame, w: &ReliabilityWeights, ch: usize, k: usize| {
        let (bin, conj) = if k <= half {
            (k, false)
        } else {
            (len - k, true)
        };
        let x = f.spectra[ch][bin];
        (if conj { x.conj() } else { x }, w.zeta[ch][bin])
    };
    (0..len)
        .map(|tau| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (f, w) in frames.iter().zip(weights) {
                for k in 0..len {
                    let (xi, zi) = full(f, w, i, k);
                    let (xj, zj) = full(f, w, j, k);
                    let mag = xi.norm() * xj.norm();
                    if mag > 0.0 {
                        let phase = 2.0 * PI * (k * tau) as f64 / len as f64;
                        acc += xi * xj.conj() * (zi * zj / mag) * Complex64::from_polar(1.0, phase);
                    }
                }
            }
            acc.re / (len * frames.len()) as f64
        })
        .collect()
}

fn random_spectra(rng: &mut ChaCha8Rng, channels: usize, bins: usize, n: u64) -> SpectralFrame {
    SpectralFrame {
        frame_index: n,
        spectra: (0..channels)
            .map(|_| {
                (0..bins)
                    .map(|k| {
                        let im = if k == 0 || k == bins - 1 {
                            0.0
                        } else {
                            rng.random_range(-1.0..1.0)
                        };
                        Complex64::new(rng.random_range(-1.0..1.0), im)
                    })
                    .collect()
            })
            .collect(),
    }
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut worst_corr = 0.0f64;
    for len in [8, 16, 32, 64] {
        let bins = len / 2 + 1;
        let channels = 4;
        let pairs: Vec<(usize, usize)> = (0..channels)
            .flat_map(|i| (i + 1..channels).map(move |j| (i, j)))
            .collect();
        let depth = 4;
        let mut acc = CrossSpectrumAccumulator::new(pairs.clone(), bins, depth).unwrap();
        let frames: Vec<_> = (0..depth as u64)
            .map(|n| random_spectra(&mut rng, channels, bins, n))
            .collect();
        let weights: Vec<_> = (0..depth)
            .map(|_| ReliabilityWeights {
                zeta: (0..channels)
                    .map(|_| (0..bins).map(|_| rng.random_range(0.0..1.0)).collect())
                    .collect(),
            })
            .collect();
        for (f, w) in frames.iter().zip(&weights) {
            acc.accumulate(f, w).unwrap();
        }
        let corr = acc.correlations().unwrap();
        for (p, &pair) in pairs.iter().enumerate() {
            for (tau, d) in direct_correlation(&frames, &weights, pair, len)
                .iter()
                .enumerate()
            {
                worst_corr = worst_corr.max((corr.get(p, tau) - d).abs());
            }
        }
    }

    let geom = MicArrayGeometry::default();
    let grid = build_search_grid(9, &[0.3, 1.0, 3.0]).unwrap();
    let len = 1024;
    let table = build_lookup_table(&grid, &geom, len).unwrap();
    let pairs = geom.pairs();
    let values = (0..pairs.len() * len)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let corr = CorrelationSet::from_values(len, pairs.clone(), values).unwrap();
    let mut worst_lookup = 0.0f64;
    for k in 0..grid.len() {
        let source = grid.position(k, geom.centroid());
        let direct: f64 = pairs
            .iter()
            .enumerate()
            .map(|(p, &(i, j))| {
                corr.get(
                    p,
                    compute_tdoa(source, i, j, &geom)
                        .unwrap()
                        .rem_euclid(len as i32) as usize,
                )
            })
            .sum();
        worst_lookup = worst_lookup.max((steered_energy(k, &corr, &table) - direct).abs());
    }

    let mut worst_assign = 0.0f64;
    for _ in 0..2000 {
        let q = rng.random_range(1..=2);
        let ns = rng.random_range(0..=3);
        let inputs = AssignmentInputs {
            confidence: (0..q).map(|_| rng.random_range(0.0..1.0)).collect(),
            density: (0..q)
                .map(|_| (0..ns).map(|_| rng.random_range(0.0..50.0)).collect())
                .collect(),
            observability: (0..ns).map(|_| rng.random_range(0.0..1.0)).collect(),
            uniform_density: rng.random_range(0.01..1.0),
            p_new: rng.random_range(0.0..0.5),
            p_false: rng.random_range(0.0..0.5),
        };
        let (a, b) = (
            assignment_probabilities(&inputs),
            assignment_probabilities_exhaustive(&inputs),
        );
        for q in 0..inputs.observations() {
            worst_assign = worst_assign
                .max((a.p_false[q] - b.p_false[q]).abs())
                .max((a.p_new[q] - b.p_new[q]).abs());
            for j in 0..ns {
                worst_assign = worst_assign.max((a.p_qj[q][j] - b.p_qj[q][j]).abs());
            }
        }
    }
    gated(
        worst_corr < 1e-6 && worst_lookup < 1e-12 && worst_assign < 1e-12,
        format!(
            "(a) correlation vs direct sum, L 8-64: {worst_corr:.1e} (< 1e-6); \
             (b) lookup vs TDOA recomputation, all {} points: {worst_lookup:.1e}; \
             (c) assignment vs enumeration, 2000 cases: {worst_assign:.1e}",
            grid.len()
        ),
    )
}

fn closed_forms() -> Outcome {
    let cfg = TrackerConfig::default();
    let ratio = TrackerConfig {
        energy_threshold: 1.0,
        ..cfg.clone()
    };
    let damped = TrackerConfig {
        alpha: 2.0,
        delta_t: 0.04,
        ..cfg.clone()
    };
    let uniform: Vec<f64> = vec![1.0 / 500.0; 500];
    let degenerate: Vec<f64> = (0..500).map(|i| if i == 7 { 1.0 } else { 0.0 }).collect();
    let checks = [
        (
            "wiener(xi=1)",
            reliability_weights(&[vec![1.0]]).zeta[0][0],
            0.5,
        ),
        ("confidence(nu=1)", observation_confidence(1.0, &ratio), 0.5),
        (
            "confidence(nu=2)",
            observation_confidence(2.0, &ratio),
            0.875,
        ),
        ("damping", damped.damping(), (-0.08f64).exp()),
        ("n_eff(uniform)", effective_sample_size(uniform), 500.0),
        ("n_eff(degenerate)", effective_sample_size(degenerate), 1.0),
        ("activity stationary", propagate_activity(0.5, &cfg), 0.5),
    ];
    let worst = checks
        .iter()
        .map(|(_, got, want)| (got - want).abs())
        .fold(0.0, f64::max);
    let names: Vec<&str> = checks.iter().map(|c| c.0).collect();
    gated(
        worst <= 1e-12,
        format!("{} exact to {worst:.1e} (<= 1e-12)", names.join(", ")),
    )
}

fn mass_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = TrackerConfig::default();
    let mut tracker = Tracker::new(cfg.clone(), Vec3::ZERO, 3).unwrap();
    let (mut worst_w, mut worst_a, mut bad) = (0.0f64, 0.0f64, 0usize);
    for n in 0..1000u64 {
        let count = rng.random_range(0..=4);
        let observations = (0..count)
            .map(|_| Observation {
                direction: Vec3::from_spherical_deg(
                    rng.random_range(-180.0..180.0),
                    rng.random_range(0.0..90.0),
                    1.0,
                ),
                distance: rng.random_range(0.3..3.0),
                energy: rng.random_range(0.0..1.0),
                grid_index: 0,
            })
            .collect();
        let out = BeamformerOutput {
            frame_index: n,
            observations,
        };
        let est = tracker.step(&out, n as f64 * cfg.delta_t);
        for s in tracker.sources() {
            worst_w = worst_w.max((s.particles.iter().map(|p| p.weight).sum::<f64>() - 1.0).abs());
            bad += s
                .particles
                .iter()
                .filter(|p| {
                    !(p.position.is_finite() && p.velocity.is_finite() && p.weight.is_finite())
                })
                .count();
        }
        let post = tracker.last_posterior();
        for q in 0..out.observations.len() {
            let mass = post.p_false[q] + post.p_new[q] + post.p_qj[q].iter().sum::<f64>();
            worst_a = worst_a.max((mass - 1.0).abs());
        }
        bad += est
            .iter()
            .filter(|e| !(e.position.is_finite() && e.existence.is_finite()))
            .count();
    }
    gated(
        worst_w < 1e-9 && worst_a < 1e-9 && bad == 0,
        format!(
            "1000 random frames: weight sum error {worst_w:.1e}, assignment mass error {worst_a:.1e}, \
             non-finite values {bad}"
        ),
    )
}

fn cli(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_rwtrack"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cli(
        &[
            "simulate", "--scene", "crossing", "--seed", "4", "--out", "s.wav",
        ],
        d,
    );
    let runs: Vec<(String, Vec<u8>)> = [("1", "a"), ("1", "b"), ("4", "c"), ("4", "d")]
        .iter()
        .map(|(threads, name)| {
            let out = format!("{name}.jsonl");
            cli(
                &[
                    "track",
                    "--input",
                    "s.wav",
                    "--seed",
                    "8",
                    "--threads",
                    threads,
                    "--out",
                    &out,
                ],
                d,
            );
            (threads.to_string(), std::fs::read(d.join(&out)).unwrap())
        })
        .collect();
    let same = runs.iter().all(|r| r.1 == runs[0].1);
    gated(
        same && !runs[0].1.is_empty(),
        format!(
            "crossing scene tracked twice with 1 and twice with 4 threads: {} bytes, {}",
            runs[0].1.len(),
            if same {
                "byte-identical"
            } else {
                "outputs differ"
            }
        ),
    )
}

fn throughput(ctx: &Ctx) -> Outcome {
    let mut scene = BuiltinScene::Static.spec(1);
    scene.geometry = ctx.cfg.geometry.clone();
    let rendered = synthesize(&scene, &ctx.cfg.timing()).unwrap();
    let audio = rendered.channels[0].len() as f64 / rendered.sample_rate;
    let (_, wall) = run_channels(&ctx.cfg, &ctx.spaces, &rendered.channels, 1).unwrap();
    let rtf = wall / audio;
    Outcome {
        pass: rtf < 1.0,
        gated: false,
        detail: format!(
            "one thread, default coarse/fine grids: {wall:.2} s for {audio:.0} s of 8 x 48 kHz audio, \
             real-time factor {rtf:.3} (< 1.0, informational)"
        ),
    }
}

fn main() {
    let cfg = PipelineConfig::default();
    let spaces = SearchSpaces::build(&cfg).unwrap();
    let ctx = Ctx { cfg, spaces };
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("static accuracy", Box::new(|| static_accuracy(&ctx))),
        ("multi-speaker tracking", Box::new(|| multi_speaker(&ctx))),
        ("crossing identity", Box::new(|| crossing_identity(&ctx))),
        ("silence robustness", Box::new(|| silence(&ctx))),
        ("oracle equivalences", Box::new(oracles)),
        ("closed-form checks", Box::new(closed_forms)),
        ("probability-mass invariants", Box::new(mass_invariants)),
        ("determinism", Box::new(determinism)),
        ("throughput", Box::new(|| throughput(&ctx))),
    ];
    let mut failed = Vec::new();
    for (n, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let verdict = match (o.pass, o.gated) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "INFO",
        };
        println!("criterion {} {name}: {verdict}: {}", n + 1, o.detail);
        if o.gated && !o.pass {
            failed.push(n + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all gated criteria pass");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
