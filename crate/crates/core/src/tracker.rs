//! Multi-source sampling-importance-resampling particle filter.
//!
//! Every tracked source owns a cloud of particles with 3D position and
//! velocity. Each update:
//!
//! 1. predicts particles with the excitation-damping model and propagates
//!    the two-state activity Markov chain,
//! 2. converts beamformer energies into confidences `P_q`,
//! 3. computes the posterior over observation-to-source assignments
//!    (false alarm, new source or one of the tracked sources),
//! 4. reweights each cloud and updates existence and activity,
//! 5. spawns sources for confident new detections and drops sources that
//!    have not been observed for too long,
//! 6. reports weighted-mean positions and resamples degenerate clouds.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::geometry::{Vec3, MAX_DISTANCE, MIN_DISTANCE};
use crate::localization::{BeamformerOutput, Observation};

/// Filter constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Particles per source.
    pub particles: usize,
    /// Velocity damping rate, 1/s.
    pub alpha: f64,
    /// Stationary velocity standard deviation, m/s.
    pub beta: f64,
    /// Seconds between updates.
    pub delta_t: f64,
    /// Beamformer energy at which a detection is true with probability 0.5.
    pub energy_threshold: f64,
    /// Upper bounds on the confidence of the second, third, ... strongest
    /// candidate of a frame. Empty applies the energy rule to every rank.
    pub rank_confidence_cap: Vec<f64>,
    /// Direction standard deviation of a true detection, degrees.
    pub sigma_dir_deg: f64,
    /// Distance standard deviation as a fraction of the observed distance.
    pub sigma_dist_rel: f64,
    /// Share of the distance density spread uniformly over the distance
    /// range, for detections whose distance is badly off.
    pub distance_outlier_prob: f64,
    /// Prior probability of a new source per observation.
    pub p_new: f64,
    /// Prior probability of a false detection per observation.
    pub p_false: f64,
    /// Resample when the effective sample size drops below this; defaults
    /// to a third of the particle count.
    pub n_min: Option<f64>,
    /// New-source posterior above which a source is spawned.
    pub birth_threshold: f64,
    /// Unobserved time after which a source is dropped, seconds.
    pub death_timeout_s: f64,
    pub markov_stay_active: f64,
    pub markov_become_active: f64,
    /// Per-frame probability that an unobserved source still exists.
    pub existence_keep_prior: f64,
    /// Existence probability given to a newly spawned source.
    pub initial_existence: f64,
    /// Sources are reported once their existence exceeds this.
    pub report_threshold: f64,
    /// Distance range of the search volume, meters.
    pub min_distance: f64,
    pub max_distance: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            particles: 500,
            alpha: 0.1,
            beta: 0.2,
            delta_t: 2048.0 / 48_000.0,
            energy_threshold: 0.075,
            rank_confidence_cap: alloc::vec![0.3, 0.16, 0.03],
            sigma_dir_deg: 3.0,
            sigma_dist_rel: 0.15,
            distance_outlier_prob: 0.2,
            p_new: 0.005,
            p_false: 0.05,
            n_min: None,
            birth_threshold: 0.3,
            death_timeout_s: 2.0,
            markov_stay_active: 0.95,
            markov_become_active: 0.05,
            existence_keep_prior: 0.98,
            initial_existence: 0.5,
            report_threshold: 0.5,
            min_distance: MIN_DISTANCE,
            max_distance: MAX_DISTANCE,
        }
    }
}

fn probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        bail!(Config, "tracker.{name} must be a probability, got {p}");
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!(Config, "tracker.{name} must be positive, got {v}");
    }
    Ok(())
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            bail!(Config, "tracker.particles must be positive");
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) || !self.beta.is_finite() {
            bail!(
                Config,
                "tracker.alpha and tracker.beta must be non-negative"
            );
        }
        positive("delta_t", self.delta_t)?;
        positive("energy_threshold", self.energy_threshold)?;
        positive("sigma_dir_deg", self.sigma_dir_deg)?;
        positive("sigma_dist_rel", self.sigma_dist_rel)?;
        probability("distance_outlier_prob", self.distance_outlier_prob)?;
        positive("death_timeout_s", self.death_timeout_s)?;
        positive("min_distance", self.min_distance)?;
        if self.max_distance <= self.min_distance {
            bail!(
                Config,
                "tracker.max_distance must exceed tracker.min_distance"
            );
        }
        for (name, p) in [
            ("p_new", self.p_new),
            ("p_false", self.p_false),
            ("birth_threshold", self.birth_threshold),
            ("markov_stay_active", self.markov_stay_active),
            ("markov_become_active", self.markov_become_active),
            ("existence_keep_prior", self.existence_keep_prior),
            ("initial_existence", self.initial_existence),
            ("report_threshold", self.report_threshold),
        ] {
            probability(name, p)?;
        }
        for &p in &self.rank_confidence_cap {
            probability("rank_confidence_cap", p)?;
        }
        let n_min = self.n_min();
        if !(n_min >= 0.0 && n_min < self.particles as f64) {
            bail!(
                Config,
                "tracker.n_min must be in [0, particles), got {n_min}"
            );
        }
        Ok(())
    }

    /// Velocity damping per update, `a = e^{−αΔT}`.
    pub fn damping(&self) -> f64 {
        libm::exp(-self.alpha * self.delta_t)
    }

    /// Velocity excitation per update, `b = β√(1 − a²)`.
    pub fn excitation(&self) -> f64 {
        let a = self.damping();
        self.beta * libm::sqrt(1.0 - a * a)
    }

    pub fn n_min(&self) -> f64 {
        self.n_min.unwrap_or(self.particles as f64 / 3.0)
    }

    pub fn sigma_dir_rad(&self) -> f64 {
        self.sigma_dir_deg.to_radians()
    }

    /// Density of the uniform false-alarm and new-source hypotheses over the
    /// search volume: the upper hemisphere (2π sr) times the distance range.
    pub fn uniform_density(&self) -> f64 {
        1.0 / (2.0 * PI * (self.max_distance - self.min_distance))
    }
}

/// Position, velocity and weight of one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec3,
    pub velocity: Vec3,
    pub weight: f64,
}

/// Outcome of a weight update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightUpdate {
    Updated,
    /// The posterior vanished or overflowed; weights were kept.
    Degenerate,
}

/// One particle cloud plus its existence and activity beliefs.
#[derive(Debug, Clone)]
pub struct TrackedSource {
    pub id: u64,
    pub particles: Vec<Particle>,
    pub existence_prob: f64,
    pub activity_prob: f64,
    pub frames_unobserved: u32,
    rng: ChaCha8Rng,
}

/// Weighted-mean location of one source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceEstimate {
    pub id: u64,
    pub position: Vec3,
    pub timestamp: f64,
    pub existence: f64,
}

impl SourceEstimate {
    pub fn direction_from(&self, center: Vec3) -> Option<Vec3> {
        (self.position - center).normalized()
    }
}

fn standard_normal3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Random stream of source `id` under `seed`.
pub fn source_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl TrackedSource {
    /// A source with the given particles, weights normalized on entry.
    pub fn new(
        id: u64,
        mut particles: Vec<Particle>,
        existence_prob: f64,
        activity_prob: f64,
        rng: ChaCha8Rng,
    ) -> Self {
        normalize(&mut particles);
        Self {
            id,
            particles,
            existence_prob,
            activity_prob,
            frames_unobserved: 0,
            rng,
        }
    }

    /// Samples a cloud around an observation: direction jittered by the
    /// direction standard deviation, distance by the relative distance
    /// standard deviation, zero-mean velocities of spread `β`.
    pub fn spawn(
        id: u64,
        obs: &Observation,
        center: Vec3,
        cfg: &TrackerConfig,
        mut rng: ChaCha8Rng,
    ) -> Self {
        let sigma = cfg.sigma_dir_rad();
        let dir = obs
            .direction
            .normalized()
            .unwrap_or(Vec3::new(0.0, 0.0, 1.0));
        let helper = if libm::fabs(dir.z) < 0.9 {
            Vec3::new(0.0, 0.0, 1.0)
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        };
        let e1 = dir
            .cross(helper)
            .normalized()
            .expect("helper is not parallel");
        let e2 = dir.cross(e1);
        let w = 1.0 / cfg.particles as f64;
        let particles = (0..cfg.particles)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let jittered = (dir + e1 * (a * sigma) + e2 * (b * sigma))
                    .normalized()
                    .unwrap_or(dir);
                let n: f64 = rng.sample(StandardNormal);
                let d = (obs.distance * (1.0 + cfg.sigma_dist_rel * n)).max(0.05 * obs.distance);
                let v = standard_normal3(&mut rng) * cfg.beta;
                Particle {
                    position: center + jittered * d,
                    velocity: v,
                    weight: w,
                }
            })
            .collect();
        Self::new(id, particles, cfg.initial_existence, 0.5, rng)
    }

    /// Excitation-damping step: `ẋ ← aẋ + bF`, `x ← x + ΔT·ẋ`.
    pub fn predict(&mut self, cfg: &TrackerConfig) {
        let a = cfg.damping();
        let b = cfg.excitation();
        let dt = cfg.delta_t;
        for p in &mut self.particles {
            let f = standard_normal3(&mut self.rng);
            p.velocity = p.velocity * a + f * b;
            p.position = p.position + p.velocity * dt;
        }
    }

    /// Propagates the activity belief through the two-state Markov chain.
    pub fn predict_activity(&mut self, cfg: &TrackerConfig) {
        self.activity_prob = propagate_activity(self.activity_prob, cfg);
    }

    /// `P(E_j)·P(A_j)`: prior probability that this source produces a detection.
    pub fn observability(&self) -> f64 {
        self.existence_prob * self.activity_prob
    }

    /// `Σ_i w_i p(O | x_i)`.
    pub fn observation_density(&self, obs: &Observation, center: Vec3, cfg: &TrackerConfig) -> f64 {
        self.particles
            .iter()
            .map(|p| p.weight * observation_likelihood(obs, p.position, center, cfg))
            .sum()
    }

    /// Reweights the cloud from the assignment probabilities `p_qj[q]` of
    /// this source. `P_j = Σ_q P_qj` (clamped to 1) mixes an uninformative
    /// term with the normalized observation likelihood.
    pub fn update_weights(
        &mut self,
        obs: &[Observation],
        p_qj: &[f64],
        center: Vec3,
        cfg: &TrackerConfig,
    ) -> WeightUpdate {
        let n = self.particles.len();
        let p_j = p_qj.iter().sum::<f64>().clamp(0.0, 1.0);
        let lik: Vec<f64> = self
            .particles
            .iter()
            .map(|p| {
                obs.iter()
                    .zip(p_qj)
                    .map(|(o, &pq)| pq * observation_likelihood(o, p.position, center, cfg))
                    .sum()
            })
            .collect();
        let total: f64 = lik.iter().sum();
        let uniform = (1.0 - p_j) / n as f64;
        let mut new_weights = Vec::with_capacity(n);
        for (p, l) in self.particles.iter().zip(&lik) {
            let posterior = if total > 0.0 && total.is_finite() {
                uniform + p_j * l / total
            } else {
                uniform
            };
            new_weights.push(posterior * p.weight);
        }
        let sum: f64 = new_weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return WeightUpdate::Degenerate;
        }
        for (p, w) in self.particles.iter_mut().zip(new_weights) {
            p.weight = w / sum;
        }
        WeightUpdate::Updated
    }

    /// Bayes update of activity and existence from the detection evidence
    /// `P_j`, plus the unobserved-frame counter.
    pub fn update_observability(&mut self, p_j: f64, cfg: &TrackerConfig) {
        let p_j = p_j.clamp(0.0, 1.0);
        self.activity_prob = activity_posterior(self.activity_prob, p_j);
        let e = p_j + (1.0 - p_j) * cfg.existence_keep_prior * self.existence_prob;
        self.existence_prob = e.clamp(0.0, 1.0);
        if p_j < 0.5 {
            self.frames_unobserved += 1;
        } else {
            self.frames_unobserved = 0;
        }
    }

    pub fn mean_position(&self) -> Vec3 {
        self.particles
            .iter()
            .fold(Vec3::ZERO, |acc, p| acc + p.position * p.weight)
    }

    pub fn estimate(&self, timestamp: f64) -> SourceEstimate {
        SourceEstimate {
            id: self.id,
            position: self.mean_position(),
            timestamp,
            existence: self.existence_prob,
        }
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(self.particles.iter().map(|p| p.weight))
    }

    /// Systematic resampling when `N_eff < N_min`. Returns whether it ran.
    pub fn resample_if_needed(&mut self, cfg: &TrackerConfig) -> bool {
        if self.effective_sample_size() >= cfg.n_min() {
            return false;
        }
        let u0: f64 = self.rng.random::<f64>();
        self.particles = systematic_resample(&self.particles, u0);
        true
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }
}

fn normalize(particles: &mut [Particle]) {
    let sum: f64 = particles.iter().map(|p| p.weight).sum();
    if sum > 0.0 && sum.is_finite() {
        particles.iter_mut().for_each(|p| p.weight /= sum);
    } else if !particles.is_empty() {
        let w = 1.0 / particles.len() as f64;
        particles.iter_mut().for_each(|p| p.weight = w);
    }
}

/// `(Σ w²)⁻¹`, with a compensated sum so that `N` uniform weights give `N`
/// to within a few ulps.
pub fn effective_sample_size(weights: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for w in weights {
        let x = w * w;
        let t = s + x;
        c += if s.abs() >= x {
            (s - t) + x
        } else {
            (x - t) + s
        };
        s = t;
    }
    let s = s + c;
    if s > 0.0 {
        1.0 / s
    } else {
        0.0
    }
}

/// Draws `N` equally weighted particles with a single offset `u0 ∈ [0, 1)`.
pub fn systematic_resample(particles: &[Particle], u0: f64) -> Vec<Particle> {
    let n = particles.len();
    let w = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cumulative = particles[0].weight;
    let mut i = 0;
    for m in 0..n {
        let target = (u0 + m as f64) * w;
        while cumulative < target && i + 1 < n {
            i += 1;
            cumulative += particles[i].weight;
        }
        out.push(Particle {
            weight: w,
            ..particles[i]
        });
    }
    out
}

/// One step of the activity chain.
pub fn propagate_activity(active: f64, cfg: &TrackerConfig) -> f64 {
    cfg.markov_stay_active * active + cfg.markov_become_active * (1.0 - active)
}

/// Activity posterior with evidence likelihoods `P_j` (active) and
/// `1 − P_j` (inactive).
pub fn activity_posterior(prior: f64, p_j: f64) -> f64 {
    let num = prior * p_j;
    let den = num + (1.0 - prior) * (1.0 - p_j);
    if den > 0.0 {
        num / den
    } else {
        prior
    }
}

/// Probability that a detection of energy `E` is real: with `ν = E/E_T`,
/// `ν²/2` below the threshold and `1 − ν⁻²/2` above.
pub fn observation_confidence(energy: f64, cfg: &TrackerConfig) -> f64 {
    let nu = energy.max(0.0) / cfg.energy_threshold;
    if nu <= 1.0 {
        nu * nu / 2.0
    } else {
        1.0 - 0.5 / (nu * nu)
    }
}

/// Confidence of the candidate of rank `q` (0 is the strongest): the
/// energy rule, capped for lower ranks.
pub fn candidate_confidence(q: usize, energy: f64, cfg: &TrackerConfig) -> f64 {
    let p = observation_confidence(energy, cfg);
    match q
        .checked_sub(1)
        .and_then(|r| cfg.rank_confidence_cap.get(r))
    {
        Some(&cap) => p.min(cap),
        None => p,
    }
}

/// Density of observing `obs` from a source at `particle`: a Gaussian on
/// the sphere around the observed direction times a distance density. The
/// latter is a Gaussian with spread proportional to the observed distance,
/// mixed with a uniform share over the distance range. Measured per
/// steradian per meter.
pub fn observation_likelihood(
    obs: &Observation,
    particle: Vec3,
    center: Vec3,
    cfg: &TrackerConfig,
) -> f64 {
    let rel = particle - center;
    let range = rel.norm();
    if range == 0.0 || !range.is_finite() {
        return 0.0;
    }
    let sigma = cfg.sigma_dir_rad();
    let theta = obs.direction.angle_to(rel);
    let angular = libm::exp(-theta * theta / (2.0 * sigma * sigma)) / (2.0 * PI * sigma * sigma);
    let sigma_r = cfg.sigma_dist_rel * obs.distance;
    let dr = range - obs.distance;
    let normal = libm::exp(-dr * dr / (2.0 * sigma_r * sigma_r)) / (libm::sqrt(2.0 * PI) * sigma_r);
    let eps = cfg.distance_outlier_prob;
    let radial = (1.0 - eps) * normal + eps / (cfg.max_distance - cfg.min_distance);
    angular * radial
}

/// Per-observation quantities entering the assignment posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentInputs {
    /// `P_q` per observation.
    pub confidence: Vec<f64>,
    /// `p(O_q | source j)` as `density[q][j]`.
    pub density: Vec<Vec<f64>>,
    /// `P(Obs_j)` per source.
    pub observability: Vec<f64>,
    /// False-alarm / new-source density.
    pub uniform_density: f64,
    pub p_new: f64,
    pub p_false: f64,
}

impl AssignmentInputs {
    pub fn observations(&self) -> usize {
        self.confidence.len()
    }

    pub fn sources(&self) -> usize {
        self.observability.len()
    }

    /// Prior times likelihood of observation `q` under hypothesis `h`
    /// (`-2` false alarm, `-1` new source, `j ≥ 0` tracked source).
    pub fn term(&self, q: usize, h: i64) -> f64 {
        let pq = self.confidence[q];
        match h {
            -2 => (1.0 - pq) * self.p_false * self.uniform_density,
            -1 => pq * self.p_new * self.uniform_density,
            j => pq * self.observability[j as usize] * self.density[q][j as usize],
        }
    }
}

/// Marginal assignment probabilities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssignmentPosterior {
    /// `p_qj[q][j]`.
    pub p_qj: Vec<Vec<f64>>,
    pub p_false: Vec<f64>,
    pub p_new: Vec<f64>,
}

impl AssignmentPosterior {
    /// `P_j = Σ_q P_qj`.
    pub fn source_probability(&self, j: usize) -> f64 {
        self.p_qj.iter().map(|row| row[j]).sum()
    }

    /// Column `j` of `p_qj`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.p_qj.iter().map(|row| row[j]).collect()
    }
}

/// Assignment marginals. Because the prior and the likelihood both factor
/// over observations, the posterior over assignment functions is a product
/// of per-observation terms and each marginal is a per-observation
/// normalization; this is exact, not an approximation.
pub fn assignment_probabilities(inputs: &AssignmentInputs) -> AssignmentPosterior {
    let ns = inputs.sources();
    let mut post = AssignmentPosterior::default();
    for q in 0..inputs.observations() {
        let f = inputs.term(q, -2);
        let n = inputs.term(q, -1);
        let row: Vec<f64> = (0..ns).map(|j| inputs.term(q, j as i64)).collect();
        let total = f + n + row.iter().sum::<f64>();
        if total > 0.0 && total.is_finite() {
            post.p_false.push(f / total);
            post.p_new.push(n / total);
            post.p_qj.push(row.iter().map(|t| t / total).collect());
        } else {
            post.p_false.push(1.0);
            post.p_new.push(0.0);
            post.p_qj.push(alloc::vec![0.0; ns]);
        }
    }
    post
}

/// Same marginals by enumerating all `(N_s + 2)^Q` assignment functions.
pub fn assignment_probabilities_exhaustive(inputs: &AssignmentInputs) -> AssignmentPosterior {
    let q_count = inputs.observations();
    let ns = inputs.sources();
    let choices = ns + 2;
    let mut p_qj = alloc::vec![alloc::vec![0.0; ns]; q_count];
    let mut p_false = alloc::vec![0.0; q_count];
    let mut p_new = alloc::vec![0.0; q_count];
    let mut total = 0.0;
    let combos = choices.pow(q_count as u32);
    let mut f = alloc::vec![0usize; q_count];
    for code in 0..combos {
        let mut c = code;
        for slot in f.iter_mut() {
            *slot = c % choices;
            c /= choices;
        }
        let prob: f64 = f
            .iter()
            .enumerate()
            .map(|(q, &h)| inputs.term(q, h as i64 - 2))
            .product();
        total += prob;
        for (q, &h) in f.iter().enumerate() {
            match h {
                0 => p_false[q] += prob,
                1 => p_new[q] += prob,
                j => p_qj[q][j - 2] += prob,
            }
        }
    }
    if total > 0.0 && total.is_finite() {
        for q in 0..q_count {
            p_false[q] /= total;
            p_new[q] /= total;
            p_qj[q].iter_mut().for_each(|p| *p /= total);
        }
    } else {
        p_false.iter_mut().for_each(|p| *p = 1.0);
    }
    AssignmentPosterior {
        p_qj,
        p_false,
        p_new,
    }
}

/// Counters for numerically degenerate events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrackerDiagnostics {
    pub degenerate_updates: u64,
    pub births: u64,
    pub deaths: u64,
    pub resamples: u64,
}

/// All tracked sources and the bookkeeping around them.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    center: Vec3,
    seed: u64,
    next_id: u64,
    sources: Vec<TrackedSource>,
    diagnostics: TrackerDiagnostics,
    last_posterior: AssignmentPosterior,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, center: Vec3, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            center,
            seed,
            next_id: 0,
            sources: Vec::new(),
            diagnostics: TrackerDiagnostics::default(),
            last_posterior: AssignmentPosterior::default(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn sources(&self) -> &[TrackedSource] {
        &self.sources
    }

    pub fn sources_mut(&mut self) -> &mut Vec<TrackedSource> {
        &mut self.sources
    }

    pub fn diagnostics(&self) -> TrackerDiagnostics {
        self.diagnostics
    }

    pub fn last_posterior(&self) -> &AssignmentPosterior {
        &self.last_posterior
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    /// Quantities feeding the assignment posterior for the current sources.
    pub fn assignment_inputs(&self, obs: &[Observation]) -> AssignmentInputs {
        AssignmentInputs {
            confidence: obs
                .iter()
                .enumerate()
                .map(|(q, o)| candidate_confidence(q, o.energy, &self.cfg))
                .collect(),
            density: obs
                .iter()
                .map(|o| {
                    self.sources
                        .iter()
                        .map(|s| s.observation_density(o, self.center, &self.cfg))
                        .collect()
                })
                .collect(),
            observability: self
                .sources
                .iter()
                .map(TrackedSource::observability)
                .collect(),
            uniform_density: self.cfg.uniform_density(),
            p_new: self.cfg.p_new,
            p_false: self.cfg.p_false,
        }
    }

    /// Spawns sources for confident new detections and drops stale ones.
    pub fn manage_sources(&mut self, obs: &[Observation], assign: &AssignmentPosterior) {
        for (q, o) in obs.iter().enumerate() {
            if assign.p_new[q] > self.cfg.birth_threshold {
                self.spawn(o);
            }
        }
        let limit = self.cfg.death_timeout_s;
        let dt = self.cfg.delta_t;
        let before = self.sources.len();
        self.sources
            .retain(|s| s.frames_unobserved as f64 * dt <= limit);
        self.diagnostics.deaths += (before - self.sources.len()) as u64;
    }

    fn spawn(&mut self, o: &Observation) {
        let id = self.next_id;
        self.next_id += 1;
        let rng = source_rng(self.seed, id);
        self.sources
            .push(TrackedSource::spawn(id, o, self.center, &self.cfg, rng));
        self.diagnostics.births += 1;
    }

    /// One full update. Returns estimates of the sources whose existence
    /// exceeds the report threshold.
    pub fn step(&mut self, output: &BeamformerOutput, timestamp: f64) -> Vec<SourceEstimate> {
        let cfg = self.cfg.clone();
        for s in &mut self.sources {
            s.predict(&cfg);
            s.predict_activity(&cfg);
        }
        let obs = &output.observations;
        let inputs = self.assignment_inputs(obs);
        let assign = assignment_probabilities(&inputs);
        for (j, s) in self.sources.iter_mut().enumerate() {
            let column = assign.column(j);
            if s.update_weights(obs, &column, self.center, &cfg) == WeightUpdate::Degenerate {
                self.diagnostics.degenerate_updates += 1;
            }
            s.update_observability(column.iter().sum(), &cfg);
        }
        self.manage_sources(obs, &assign);
        let estimates = self
            .sources
            .iter()
            .filter(|s| s.existence_prob > cfg.report_threshold)
            .map(|s| s.estimate(timestamp))
            .collect();
        for s in &mut self.sources {
            if s.resample_if_needed(&cfg) {
                self.diagnostics.resamples += 1;
            }
        }
        self.last_posterior = assign;
        estimates
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cfg() -> TrackerConfig {
        TrackerConfig::default()
    }

    fn obs_at(dir: Vec3, distance: f64, energy: f64) -> Observation {
        Observation {
            direction: dir.normalized().unwrap(),
            distance,
            energy,
            grid_index: 0,
        }
    }

    fn source_with(positions: &[Vec3], weights: &[f64]) -> TrackedSource {
        let particles = positions
            .iter()
            .zip(weights)
            .map(|(&p, &w)| Particle {
                position: p,
                velocity: Vec3::ZERO,
                weight: w,
            })
            .collect();
        TrackedSource::new(0, particles, 1.0, 1.0, source_rng(1, 0))
    }

    #[test]
    fn confidence_examples() {
        let c = TrackerConfig {
            energy_threshold: 4.0,
            ..cfg()
        };
        assert!((observation_confidence(4.0, &c) - 0.5).abs() < 1e-12);
        assert!((observation_confidence(2.0, &c) - 0.125).abs() < 1e-12);
        assert!((observation_confidence(8.0, &c) - 0.875).abs() < 1e-12);
        assert_eq!(observation_confidence(0.0, &c), 0.0);
    }

    #[test]
    fn lower_ranks_are_capped() {
        let c = TrackerConfig {
            energy_threshold: 1.0,
            ..cfg()
        };
        assert!((candidate_confidence(0, 2.0, &c) - 0.875).abs() < 1e-12);
        assert_eq!(candidate_confidence(1, 2.0, &c), 0.3);
        assert_eq!(candidate_confidence(2, 2.0, &c), 0.16);
        assert_eq!(candidate_confidence(3, 2.0, &c), 0.03);
        assert!((candidate_confidence(1, 0.5, &c) - 0.125).abs() < 1e-12);
        let uncapped = TrackerConfig {
            rank_confidence_cap: Vec::new(),
            ..c
        };
        assert!((candidate_confidence(3, 2.0, &uncapped) - 0.875).abs() < 1e-12);
    }

    #[test]
    fn damping_closed_form() {
        let c = TrackerConfig {
            alpha: 2.0,
            delta_t: 0.04,
            ..cfg()
        };
        assert!((c.damping() - libm::exp(-0.08)).abs() < 1e-15);
        assert!((c.damping() - 0.92312).abs() < 1e-5);
    }

    #[test]
    fn predict_without_excitation_scales_velocity() {
        let c = TrackerConfig { beta: 0.0, ..cfg() };
        let mut s = source_with(&[Vec3::new(1.0, 0.0, 0.5)], &[1.0]);
        s.particles[0].velocity = Vec3::new(0.3, -0.2, 0.1);
        let a = c.damping();
        for _ in 0..5 {
            let v0 = s.particles[0].velocity;
            let x0 = s.particles[0].position;
            s.predict(&c);
            assert_eq!(s.particles[0].velocity, v0 * a);
            assert_eq!(s.particles[0].position, x0 + v0 * a * c.delta_t);
        }
    }

    #[test]
    fn predict_with_infinite_damping_is_pure_noise() {
        let c = TrackerConfig {
            alpha: f64::INFINITY,
            beta: 0.5,
            ..cfg()
        };
        assert_eq!(c.damping(), 0.0);
        assert_eq!(c.excitation(), 0.5);
        let mut s = source_with(&[Vec3::new(1.0, 0.0, 0.5); 4000], &[1.0; 4000]);
        s.particles
            .iter_mut()
            .for_each(|p| p.velocity = Vec3::new(10.0, 10.0, 10.0));
        s.predict(&c);
        let n = s.particles.len() as f64;
        let mean = s.particles.iter().map(|p| p.velocity.x).sum::<f64>() / n;
        let var = s
            .particles
            .iter()
            .map(|p| (p.velocity.x - mean) * (p.velocity.x - mean))
            .sum::<f64>()
            / n;
        assert!(mean.abs() < 0.05);
        assert!((libm::sqrt(var) - 0.5).abs() < 0.03);
    }

    #[test]
    fn likelihood_shape() {
        let c = cfg();
        let dir = Vec3::new(1.0, 1.0, 0.4);
        let o = obs_at(dir, 1.5, 1.0);
        let mode = observation_likelihood(&o, o.position(Vec3::ZERO), Vec3::ZERO, &c);
        let az = o.direction.azimuth_deg().to_radians();
        let el = o.direction.elevation_deg().to_radians();
        let at = |daz: f64| {
            let a = az + daz.to_radians();
            Vec3::new(
                libm::cos(el) * libm::cos(a),
                libm::cos(el) * libm::sin(a),
                libm::sin(el),
            )
        };
        // Move 3° of arc around the observation axis.
        let off = |sign: f64| {
            let e1 = o
                .direction
                .cross(Vec3::new(0.0, 0.0, 1.0))
                .normalized()
                .unwrap();
            let t = 3.0f64.to_radians() * sign;
            (o.direction * libm::cos(t) + e1 * libm::sin(t)) * 1.5
        };
        let plus = observation_likelihood(&o, off(1.0), Vec3::ZERO, &c);
        let minus = observation_likelihood(&o, off(-1.0), Vec3::ZERO, &c);
        assert!((plus / mode - libm::exp(-0.5)).abs() < 1e-9);
        assert!((plus - minus).abs() <= 1e-12 * mode);
        for d in [-2.0, -0.5, 0.7, 4.0] {
            assert!(observation_likelihood(&o, at(d) * 1.5, Vec3::ZERO, &c) < mode);
            assert!(
                observation_likelihood(&o, o.direction * (1.5 + d * 0.1), Vec3::ZERO, &c) <= mode
            );
        }
        assert_eq!(observation_likelihood(&o, Vec3::ZERO, Vec3::ZERO, &c), 0.0);
    }

    fn empty_inputs(pq: f64) -> AssignmentInputs {
        let c = cfg();
        AssignmentInputs {
            confidence: vec![pq],
            density: vec![vec![]],
            observability: vec![],
            uniform_density: c.uniform_density(),
            p_new: c.p_new,
            p_false: c.p_false,
        }
    }

    #[test]
    fn assignment_without_sources() {
        let sure = assignment_probabilities(&empty_inputs(1.0));
        assert!((sure.p_new[0] - 1.0).abs() < 1e-12);
        assert_eq!(sure.p_false[0], 0.0);
        let never = assignment_probabilities(&empty_inputs(0.0));
        assert!((never.p_false[0] - 1.0).abs() < 1e-12);
        assert_eq!(never.p_new[0], 0.0);
    }

    #[test]
    fn unobserved_source_keeps_weights() {
        let c = cfg();
        let mut s = source_with(
            &[Vec3::new(1.0, 0.0, 0.2), Vec3::new(0.0, 1.0, 0.2)],
            &[0.3, 0.7],
        );
        let o = obs_at(Vec3::new(1.0, 0.0, 0.2), 1.0, 5.0);
        assert_eq!(
            s.update_weights(&[o], &[0.0], Vec3::ZERO, &c),
            WeightUpdate::Updated
        );
        assert!((s.particles[0].weight - 0.3).abs() < 1e-12);
        assert!((s.particles[1].weight - 0.7).abs() < 1e-12);
    }

    #[test]
    fn single_particle_weight_is_one() {
        let c = cfg();
        let mut s = source_with(&[Vec3::new(0.0, 2.0, 0.5)], &[1.0]);
        let o = obs_at(Vec3::new(1.0, 0.0, 0.2), 1.0, 5.0);
        s.update_weights(&[o], &[0.8], Vec3::ZERO, &c);
        assert_eq!(s.particles[0].weight, 1.0);
    }

    #[test]
    fn two_particle_weight_ratio_by_hand() {
        let c = cfg();
        let o = obs_at(Vec3::new(1.0, 0.0, 0.3), 1.2, 5.0);
        let p1 = o.position(Vec3::ZERO);
        let p2 = Vec3::new(1.0, 0.15, 0.3).normalized().unwrap() * 1.3;
        let (w1, w2) = (0.4, 0.6);
        let mut s = source_with(&[p1, p2], &[w1, w2]);
        s.update_weights(&[o], &[1.0], Vec3::ZERO, &c);
        let l1 = observation_likelihood(&o, p1, Vec3::ZERO, &c);
        let l2 = observation_likelihood(&o, p2, Vec3::ZERO, &c);
        let ratio = s.particles[0].weight / s.particles[1].weight;
        assert!((ratio - (l1 / l2) * (w1 / w2)).abs() < 1e-9 * ratio);
    }

    #[test]
    fn degenerate_update_keeps_weights() {
        let c = cfg();
        // A particle at the array center has zero likelihood.
        let mut s = source_with(&[Vec3::ZERO], &[1.0]);
        s.particles[0].weight = 0.0;
        let o = obs_at(Vec3::new(1.0, 0.0, 0.3), 1.2, 5.0);
        assert_eq!(
            s.update_weights(&[o], &[1.0], Vec3::ZERO, &c),
            WeightUpdate::Degenerate
        );
        assert_eq!(s.particles[0].weight, 0.0);
    }

    #[test]
    fn activity_chain_is_balanced() {
        let c = cfg();
        let mut a = 0.9;
        for _ in 0..2000 {
            a = propagate_activity(a, &c);
        }
        assert!((a - 0.5).abs() < 1e-12);
        assert!((propagate_activity(0.5, &c) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn existence_updates() {
        let c = cfg();
        let mut s = source_with(&[Vec3::new(1.0, 0.0, 0.0)], &[1.0]);
        s.existence_prob = 0.3;
        s.update_observability(1.0, &c);
        assert_eq!(s.existence_prob, 1.0);
        assert_eq!(s.frames_unobserved, 0);
        for n in 1..=10 {
            s.update_observability(0.0, &c);
            assert!((s.existence_prob - libm::pow(c.existence_keep_prior, n as f64)).abs() < 1e-12);
            assert_eq!(s.frames_unobserved, n);
        }
    }

    #[test]
    fn estimate_is_weighted_mean() {
        let p = Vec3::new(0.5, -1.0, 0.25);
        let s = source_with(&[p, -p], &[0.5, 0.5]);
        assert!(s.mean_position().norm() < 1e-15);
        let s = source_with(&[p, p, p], &[0.2, 0.3, 0.5]);
        assert!((s.mean_position() - p).norm() < 1e-15);
        let q = Vec3::new(2.0, 0.0, 1.0);
        let s = source_with(&[p, q], &[0.9, 0.1]);
        assert!((s.mean_position() - (p * 0.9 + q * 0.1)).norm() < 1e-15);
    }

    #[test]
    fn effective_sample_size_extremes() {
        for n in [3, 500, 1000, 4099] {
            let uniform = vec![1.0 / n as f64; n];
            let got = effective_sample_size(uniform.iter().copied());
            assert!((got - n as f64).abs() < 1e-12, "{n}: {got}");
        }
        let n = 500;
        let mut degenerate = vec![0.0; n];
        degenerate[17] = 1.0;
        assert_eq!(effective_sample_size(degenerate.iter().copied()), 1.0);
    }

    #[test]
    fn resampling_rules() {
        let c = cfg();
        let positions: Vec<Vec3> = (0..500).map(|i| Vec3::new(i as f64, 0.0, 1.0)).collect();
        let mut s = source_with(&positions, &[1.0; 500]);
        assert!(!s.resample_if_needed(&c));
        let mut weights = vec![0.0; 500];
        weights[42] = 1.0;
        let mut s = source_with(&positions, &weights);
        assert!(s.resample_if_needed(&c));
        assert!(s
            .particles
            .iter()
            .all(|p| p.position == positions[42] && p.weight == 1.0 / 500.0));
    }

    #[test]
    fn births_and_thresholds() {
        let c = TrackerConfig {
            particles: 50,
            ..cfg()
        };
        let mut t = Tracker::new(c.clone(), Vec3::ZERO, 3).unwrap();
        let o = obs_at(Vec3::new(1.0, 0.0, 0.3), 1.5, 1.0);
        let post = |p: f64| AssignmentPosterior {
            p_qj: vec![vec![]],
            p_false: vec![1.0 - p],
            p_new: vec![p],
        };
        t.manage_sources(&[o], &post(0.29));
        assert!(t.sources().is_empty());
        t.manage_sources(&[o], &post(0.31));
        assert_eq!(t.sources().len(), 1);
        let s = &t.sources()[0];
        assert_eq!(s.particles.len(), 50);
        assert!(s
            .particles
            .iter()
            .all(|p| (p.weight - 1.0 / 50.0).abs() < 1e-15));
    }

    #[test]
    fn stale_sources_are_dropped() {
        let c = TrackerConfig {
            particles: 10,
            death_timeout_s: 2.0,
            delta_t: 0.1,
            ..cfg()
        };
        let mut t = Tracker::new(c, Vec3::ZERO, 3).unwrap();
        let o = obs_at(Vec3::new(1.0, 0.0, 0.3), 1.5, 1.0);
        let birth = AssignmentPosterior {
            p_qj: vec![vec![]],
            p_false: vec![0.0],
            p_new: vec![1.0],
        };
        t.manage_sources(&[o], &birth);
        let none = AssignmentPosterior::default();
        t.sources_mut()[0].frames_unobserved = 20;
        t.manage_sources(&[], &none);
        assert_eq!(t.sources().len(), 1);
        t.sources_mut()[0].frames_unobserved = 21;
        t.manage_sources(&[], &none);
        assert!(t.sources().is_empty());
        assert_eq!(t.diagnostics().deaths, 1);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(TrackerConfig {
            p_new: 1.5,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(TrackerConfig {
            n_min: Some(600.0),
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(TrackerConfig {
            particles: 0,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(TrackerConfig {
            energy_threshold: 0.0,
            ..cfg()
        }
        .validate()
        .is_err());
    }
}
