use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rwtrack_core::geometry::*;
use rwtrack_core::pipeline::FrameTiming;
use rwtrack_core::scenes;
use rwtrack_core::simulator::*;

fn white(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn source(position: Vec3, seed: u64) -> SourceSpec {
    SourceSpec {
        signal: SourceSignal::Samples(white(24_000, seed)),
        waypoints: vec![Waypoint { t: 0.0, position }],
        gain: 1.0,
    }
}

fn scene(sources: Vec<SourceSpec>, snr_db: Option<f64>) -> SceneSpec {
    SceneSpec {
        duration: 0.5,
        geometry: MicArrayGeometry::default(),
        sources,
        snr_db,
        rt60: 0.0,
        drr_db: 3.0,
        seed: 11,
    }
}

fn render(scene: &SceneSpec) -> Rendered {
    synthesize(scene, &FrameTiming::default()).unwrap()
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Lag maximizing `Σ_n a[n]·b[n − τ]` over `|τ| ≤ max_lag`.
fn peak_lag(a: &[f64], b: &[f64], max_lag: i32) -> i32 {
    let n = a.len() as i32;
    (-max_lag..=max_lag)
        .max_by(|&x, &y| {
            let c = |tau: i32| -> f64 {
                (max_lag..n - max_lag)
                    .map(|i| a[i as usize] * b[(i - tau) as usize])
                    .sum()
            };
            c(x).total_cmp(&c(y))
        })
        .unwrap()
}

#[test]
fn pair_delays_match_the_tdoa_model() {
    let geom = MicArrayGeometry::default();
    let max = geom.max_delay_samples() + 2;
    for (az, el, r) in [(45.0, 20.0, 1.5), (-130.0, 60.0, 0.7), (170.0, 5.0, 2.8)] {
        let position = Vec3::from_spherical_deg(az, el, r);
        let out = render(&scene(vec![source(position, 1)], None));
        for (i, j) in geom.pairs() {
            let expected = compute_tdoa(position, i, j, &geom).unwrap();
            let got = peak_lag(&out.channels[i], &out.channels[j], max);
            assert!(
                (got - expected).abs() <= 1,
                "({az}, {el}, {r}) pair ({i}, {j}): peak {got}, model {expected}"
            );
        }
    }
}

#[test]
fn rendered_snr_matches_the_request() {
    let position = Vec3::from_spherical_deg(30.0, 20.0, 1.5);
    for snr in [0.0, 7.0, 20.0] {
        let noisy = render(&scene(vec![source(position, 2)], Some(snr)));
        let clean = render(&scene(vec![source(position, 2)], None));
        assert!(noisy.clip_scale.is_none() && clean.clip_scale.is_none());
        let signal: f64 = clean.channels.iter().map(|c| power(c)).sum();
        let noise: f64 = noisy
            .channels
            .iter()
            .zip(&clean.channels)
            .map(|(n, c)| {
                let d: Vec<f64> = n.iter().zip(c).map(|(a, b)| a - b).collect();
                power(&d)
            })
            .sum();
        let measured = 10.0 * (signal / noise).log10();
        assert!(
            (measured - snr).abs() <= 0.5,
            "asked {snr} dB, got {measured:.2} dB"
        );
    }
}

#[test]
fn sources_superpose_linearly() {
    let a = source(Vec3::from_spherical_deg(10.0, 30.0, 1.0), 3);
    let b = source(Vec3::from_spherical_deg(-90.0, 10.0, 2.0), 4);
    let ra = render(&scene(vec![a.clone()], None));
    let rb = render(&scene(vec![b.clone()], None));
    let rab = render(&scene(vec![a, b], None));
    for ch in 0..8 {
        for n in 0..rab.channels[ch].len() {
            let sum = ra.channels[ch][n] + rb.channels[ch][n];
            assert!((rab.channels[ch][n] - sum).abs() < 1e-12);
        }
    }
}

#[test]
fn rendering_is_deterministic_in_the_seed() {
    let s = scenes::movers(2, 5);
    let timing = FrameTiming::default();
    let (x, y) = (
        synthesize(&s, &timing).unwrap(),
        synthesize(&s, &timing).unwrap(),
    );
    assert_eq!(x.channels, y.channels);
    assert_eq!(x.truth, y.truth);
    let other = synthesize(&scenes::movers(2, 6), &timing).unwrap();
    assert_ne!(x.channels, other.channels);
}

#[test]
fn empty_scene_is_noise_with_empty_truth() {
    let s = scenes::silence(1);
    let timing = FrameTiming::default();
    let out = synthesize(&s, &timing).unwrap();
    assert_eq!(out.channels.len(), 8);
    assert!(out.channels.iter().all(|c| c.len() == s.sample_count()));
    assert!(out.channels.iter().all(|c| power(c) > 0.0));
    assert_eq!(
        out.truth.frames.len(),
        timing.update_count(s.sample_count())
    );
    assert!(out.truth.frames.iter().all(|f| f.sources.is_empty()));

    let quiet = render(&scene(Vec::new(), None));
    assert!(quiet.channels.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn truth_follows_the_waypoints() {
    let s = scenes::movers(1, 2);
    let timing = FrameTiming::default();
    let out = synthesize(&s, &timing).unwrap();
    for (u, f) in out.truth.frames.iter().enumerate() {
        let t = timing.update_time(u as u64);
        assert!((f.t_seconds - t).abs() < 1e-12);
        let expected = s.sources[0].position_at(t);
        assert!(f.sources[0].position.distance(expected) < 1e-9);
    }
}
