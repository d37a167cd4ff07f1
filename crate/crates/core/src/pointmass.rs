//! Deterministic 2-D point-mass environment with a PD expert.
//!
//! State is `[px, py, vx, vy]`. Dynamics per step:
//! `v' = (1 - damping) * v + dt * clip(a)`, `x' = x + dt * v'`, with reward
//! `-pos_penalty * |x' - goal|^2 - act_penalty * |clip(a)|^2`. The expert is
//! `a = clip(-k_p * (x - goal) - k_d * v)`. Episodes start from a uniform
//! box with zero velocity; per-episode streams derive from the master seed
//! (see [`crate::rng`]).

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::dataset::{DatasetHeader, Trajectory, TrajectoryDataset, Transition, FORMAT_VERSION};
use crate::parallel;
use crate::rng;

pub const ENV_NAME: &str = "pointmass-v1";
pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),
    #[error("actor produced a non-finite action")]
    ActorNonFinite,
    #[error("bad environment parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvParams {
    pub dt: f64,
    pub damping: f64,
    pub horizon: usize,
    pub action_bound: f64,
    pub goal: [f64; 2],
    /// Start positions are uniform in `[-start_halfwidth, start_halfwidth]^2`.
    pub start_halfwidth: f64,
    pub position_penalty: f64,
    pub action_penalty: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            damping: 0.1,
            horizon: 100,
            action_bound: 1.0,
            goal: [0.0, 0.0],
            start_halfwidth: 1.0,
            position_penalty: 1.0,
            action_penalty: 0.01,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.dt > 0.0) {
            return Err(EnvError::BadParams(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon == 0 {
            return Err(EnvError::BadParams("horizon must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(EnvError::BadParams(format!(
                "damping must lie in [0, 1), got {}",
                self.damping
            )));
        }
        if !(self.action_bound > 0.0) {
            return Err(EnvError::BadParams("action_bound must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

impl EnvState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.position[0], self.position[1], self.velocity[0], self.velocity[1]]
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(&self.velocity).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertGains {
    pub k_p: f64,
    pub k_d: f64,
    pub noise_sigma: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        Self { k_p: 1.0, k_d: 0.5, noise_sigma: 0.05 }
    }
}

fn clip2(a: [f64; 2], bound: f64) -> [f64; 2] {
    [a[0].clamp(-bound, bound), a[1].clamp(-bound, bound)]
}

/// One dynamics step. Actions are clipped internally.
pub fn env_step(s: &EnvState, action: [f64; 2], p: &EnvParams) -> Result<(EnvState, f64), EnvError> {
    if !s.is_finite() {
        return Err(EnvError::NonFiniteInput("state"));
    }
    if !action.iter().all(|v| v.is_finite()) {
        return Err(EnvError::NonFiniteInput("action"));
    }
    let a = clip2(action, p.action_bound);
    let mut velocity = [0.0; 2];
    let mut position = [0.0; 2];
    for i in 0..2 {
        velocity[i] = (1.0 - p.damping) * s.velocity[i] + p.dt * a[i];
        position[i] = s.position[i] + p.dt * velocity[i];
    }
    let dx = [position[0] - p.goal[0], position[1] - p.goal[1]];
    let reward = -p.position_penalty * (dx[0] * dx[0] + dx[1] * dx[1])
        - p.action_penalty * (a[0] * a[0] + a[1] * a[1]);
    Ok((EnvState { position, velocity }, reward))
}

/// PD control toward the goal, clipped to the action bound. Deterministic;
/// dataset noise is applied by [`generate_dataset`], not here.
pub fn expert_action(s: &EnvState, g: &ExpertGains, p: &EnvParams) -> [f64; 2] {
    let raw = [
        -g.k_p * (s.position[0] - p.goal[0]) - g.k_d * s.velocity[0],
        -g.k_p * (s.position[1] - p.goal[1]) - g.k_d * s.velocity[1],
    ];
    clip2(raw, p.action_bound)
}

/// Start state for the episode keyed by `seed`.
pub fn start_state(p: &EnvParams, seed: u64) -> EnvState {
    let mut r = rng::stream(seed);
    let w = p.start_halfwidth;
    EnvState {
        position: [r.random_range(-w..=w), r.random_range(-w..=w)],
        velocity: [0.0, 0.0],
    }
}

/// Rolls one episode of exactly `p.horizon` transitions from a seeded start
/// state. `next_state` of step `t` equals `state` of step `t + 1`; terminal
/// is set only on the final transition. The returned trajectory has id 0.
pub fn rollout(
    actor: &mut dyn FnMut(&EnvState) -> [f64; 2],
    p: &EnvParams,
    seed: u64,
) -> Result<Trajectory, EnvError> {
    p.validate()?;
    let mut state = start_state(p, seed);
    let mut transitions = Vec::with_capacity(p.horizon);
    for t in 0..p.horizon {
        let action = actor(&state);
        if !action.iter().all(|v| v.is_finite()) {
            return Err(EnvError::ActorNonFinite);
        }
        let clipped = clip2(action, p.action_bound);
        let (next, reward) = env_step(&state, clipped, p)?;
        transitions.push(Transition {
            state: state.to_vec(),
            action: clipped.to_vec(),
            reward,
            next_state: next.to_vec(),
            terminal: t + 1 == p.horizon,
        });
        state = next;
    }
    Ok(Trajectory { id: 0, poison_flag: None, transitions })
}

/// Expert rollouts with per-step Gaussian action noise, per-episode seeds
/// `seed ^ episode_index`, ids `0..n_traj-1`.
pub fn generate_dataset(
    n_traj: usize,
    g: &ExpertGains,
    p: &EnvParams,
    seed: u64,
) -> Result<TrajectoryDataset, EnvError> {
    p.validate()?;
    let mut trajectories = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let episode_seed = seed ^ i as u64;
        let mut noise = rng::substream(episode_seed, rng::SALT_EXPERT_NOISE, 0);
        let mut actor = |s: &EnvState| {
            let mut a = expert_action(s, g, p);
            if g.noise_sigma > 0.0 {
                for v in &mut a {
                    let z: f64 = noise.sample(StandardNormal);
                    *v += g.noise_sigma * z;
                }
            }
            clip2(a, p.action_bound)
        };
        let mut traj = rollout(&mut actor, p, episode_seed)?;
        traj.id = i as u64;
        trajectories.push(traj);
    }
    Ok(TrajectoryDataset {
        header: DatasetHeader {
            format_version: FORMAT_VERSION,
            env_name: ENV_NAME.into(),
            state_dim: STATE_DIM,
            action_dim: ACTION_DIM,
            action_bound: p.action_bound,
            generator_seed: seed as i64,
        },
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_return: f64,
    pub std_return: f64,
    pub per_episode: Vec<f64>,
}

/// Evaluates a fixed policy over fresh seeded episodes. Episodes fan out
/// across workers; aggregation is by episode index, so reports are
/// bit-identical for any thread count.
pub fn evaluate_policy<F>(
    actor: &F,
    n_episodes: usize,
    p: &EnvParams,
    seed: u64,
) -> Result<EvalReport, EnvError>
where
    F: Fn(&EnvState) -> [f64; 2] + Sync,
{
    p.validate()?;
    if n_episodes == 0 {
        return Err(EnvError::BadParams("n_episodes must be >= 1".into()));
    }
    let results = parallel::map_indexed(n_episodes, |ep| {
        let episode_seed = seed ^ ep as u64;
        let mut shim = |s: &EnvState| actor(s);
        rollout(&mut shim, p, episode_seed)
            .map(|traj| traj.transitions.iter().map(|t| t.reward).sum::<f64>())
    });
    let mut per_episode = Vec::with_capacity(n_episodes);
    for r in results {
        per_episode.push(r?);
    }
    let mean = per_episode.iter().sum::<f64>() / n_episodes as f64;
    let var = per_episode.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n_episodes as f64;
    Ok(EvalReport { mean_return: mean, std_return: var.sqrt(), per_episode })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} != {b} (tol {tol})");
    }

    #[test]
    fn goal_is_a_fixed_point() {
        let p = EnvParams::default();
        let s = EnvState { position: [0.0, 0.0], velocity: [0.0, 0.0] };
        let (next, r) = env_step(&s, [0.0, 0.0], &p).unwrap();
        assert_eq!(next, s);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn step_matches_hand_evaluation() {
        // v' = 0 + 0.1 * (-1) = -0.1; x' = 1 + 0.1 * (-0.1) = 0.99;
        // r = -(0.99^2) - 0.01 * 1 = -0.9801 - 0.01 = -0.9901
        let p = EnvParams { damping: 0.0, ..EnvParams::default() };
        let s = EnvState { position: [1.0, 0.0], velocity: [0.0, 0.0] };
        let (next, r) = env_step(&s, [-1.0, 0.0], &p).unwrap();
        approx(next.velocity[0], -0.1, 1e-12);
        approx(next.position[0], 0.99, 1e-12);
        approx(r, -0.9901, 1e-12);
    }

    #[test]
    fn actions_clip_at_bound() {
        let p = EnvParams::default();
        let s = EnvState { position: [0.3, -0.2], velocity: [0.1, 0.0] };
        let a = env_step(&s, [5.0, 0.0], &p).unwrap();
        let b = env_step(&s, [1.0, 0.0], &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_rejects_non_finite() {
        let p = EnvParams::default();
        let s = EnvState { position: [f64::NAN, 0.0], velocity: [0.0, 0.0] };
        assert!(matches!(env_step(&s, [0.0, 0.0], &p), Err(EnvError::NonFiniteInput(_))));
    }

    #[test]
    fn expert_at_goal_is_zero() {
        let p = EnvParams::default();
        let g = ExpertGains::default();
        let s = EnvState { position: [0.0, 0.0], velocity: [0.0, 0.0] };
        assert_eq!(expert_action(&s, &g, &p), [0.0, 0.0]);
    }

    #[test]
    fn expert_matches_pd_law() {
        let p = EnvParams::default();
        let g = ExpertGains::default();
        let s = EnvState { position: [1.0, 0.0], velocity: [0.0, 0.0] };
        assert_eq!(expert_action(&s, &g, &p), [-1.0, 0.0]);
    }

    #[test]
    fn expert_is_odd_before_clipping() {
        let p = EnvParams::default();
        let g = ExpertGains { k_p: 0.4, k_d: 0.2, noise_sigma: 0.0 };
        let s = EnvState { position: [0.5, -0.3], velocity: [0.2, 0.1] };
        let neg = EnvState {
            position: [-s.position[0], -s.position[1]],
            velocity: [-s.velocity[0], -s.velocity[1]],
        };
        let a = expert_action(&s, &g, &p);
        let b = expert_action(&neg, &g, &p);
        approx(a[0], -b[0], 1e-15);
        approx(a[1], -b[1], 1e-15);
    }

    #[test]
    fn rollout_horizon_and_terminal() {
        let p = EnvParams { horizon: 1, ..EnvParams::default() };
        let mut actor = |_: &EnvState| [0.0, 0.0];
        let traj = rollout(&mut actor, &p, 5).unwrap();
        assert_eq!(traj.transitions.len(), 1);
        assert!(traj.transitions[0].terminal);
    }

    #[test]
    fn rollout_is_deterministic_per_seed() {
        let p = EnvParams::default();
        let g = ExpertGains::default();
        let mut a1 = |s: &EnvState| expert_action(s, &g, &p);
        let mut a2 = |s: &EnvState| expert_action(s, &g, &p);
        assert_eq!(rollout(&mut a1, &p, 9).unwrap(), rollout(&mut a2, &p, 9).unwrap());
    }

    #[test]
    fn rollout_rejects_non_finite_actor() {
        let p = EnvParams::default();
        let mut actor = |_: &EnvState| [f64::NAN, 0.0];
        assert!(matches!(rollout(&mut actor, &p, 1), Err(EnvError::ActorNonFinite)));
    }

    #[test]
    fn expert_beats_zero_action_from_same_start() {
        let p = EnvParams::default();
        let g = ExpertGains::default();
        // find a seed whose start is far from the goal, in the spirit of (1, 1)
        let seed = (0..)
            .find(|s| {
                let st = start_state(&p, *s);
                st.position[0].abs() > 0.8 && st.position[1].abs() > 0.8
            })
            .unwrap();
        let ret = |mut f: Box<dyn FnMut(&EnvState) -> [f64; 2]>| {
            rollout(&mut *f, &p, seed).unwrap().transitions.iter().map(|t| t.reward).sum::<f64>()
        };
        let expert_ret = ret(Box::new(|s: &EnvState| expert_action(s, &g, &p)));
        let zero_ret = ret(Box::new(|_: &EnvState| [0.0, 0.0]));
        assert!(expert_ret > zero_ret, "{expert_ret} vs {zero_ret}");
    }

    #[test]
    fn chaining_is_exact() {
        let p = EnvParams::default();
        let g = ExpertGains::default();
        let ds = generate_dataset(5, &g, &p, 3).unwrap();
        for traj in &ds.trajectories {
            for w in traj.transitions.windows(2) {
                assert_eq!(w[0].next_state, w[1].state);
            }
        }
    }

    #[test]
    fn zero_noise_reproduces_expert_exactly() {
        let p = EnvParams::default();
        let g = ExpertGains { noise_sigma: 0.0, ..ExpertGains::default() };
        let ds = generate_dataset(3, &g, &p, 11).unwrap();
        for traj in &ds.trajectories {
            for tr in &traj.transitions {
                let s = EnvState {
                    position: [tr.state[0], tr.state[1]],
                    velocity: [tr.state[2], tr.state[3]],
                };
                let a = expert_action(&s, &g, &p);
                assert_eq!(tr.action, vec![a[0], a[1]]);
            }
        }
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let p = EnvParams::default();
        let g = ExpertGains::default();
        let a = generate_dataset(6, &g, &p, 21).unwrap();
        let b = generate_dataset(6, &g, &p, 21).unwrap();
        let ea = crate::dataset::encode_canonical(&a).unwrap();
        let eb = crate::dataset::encode_canonical(&b).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn evaluate_single_episode_has_zero_std() {
        let p = EnvParams::default();
        let actor = |_: &EnvState| [0.0, 0.0];
        let rep = evaluate_policy(&actor, 1, &p, 17).unwrap();
        assert_eq!(rep.std_return, 0.0);
        assert_eq!(rep.per_episode.len(), 1);
    }

    #[test]
    fn evaluate_is_deterministic() {
        let p = EnvParams::default();
        let g = ExpertGains::default();
        let actor = |s: &EnvState| expert_action(s, &g, &p);
        let a = evaluate_policy(&actor, 20, &p, 30).unwrap();
        let b = evaluate_policy(&actor, 20, &p, 30).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn return_ordering_expert_noisy_random_inverted() {
        // expert > noisy expert > uniform random > inverted expert,
        // each over 100 shared seeded episodes
        let p = EnvParams::default();
        let g = ExpertGains::default();
        let n = 100;
        let seed = 77;

        let expert = |s: &EnvState| expert_action(s, &g, &p);
        let je = evaluate_policy(&expert, n, &p, seed).unwrap().mean_return;

        // noisy expert: per-episode noise streams mirror generate_dataset
        let noisy: Vec<f64> = (0..n as u64)
            .map(|ep| {
                let episode_seed = seed ^ ep;
                let mut noise = rng::substream(episode_seed, rng::SALT_EXPERT_NOISE, 0);
                let mut actor = |s: &EnvState| {
                    let mut a = expert_action(s, &g, &p);
                    for v in &mut a {
                        let z: f64 = noise.sample(StandardNormal);
                        *v += g.noise_sigma * z;
                    }
                    clip2(a, p.action_bound)
                };
                let t = rollout(&mut actor, &p, episode_seed).unwrap();
                t.transitions.iter().map(|tr| tr.reward).sum::<f64>()
            })
            .collect();
        let jn = noisy.iter().sum::<f64>() / n as f64;

        let random: Vec<f64> = (0..n as u64)
            .map(|ep| {
                let episode_seed = seed ^ ep;
                let mut r = rng::substream(episode_seed, rng::SALT_ATTACK_INJECT, 0);
                let mut actor =
                    |_: &EnvState| [r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0)];
                let t = rollout(&mut actor, &p, episode_seed).unwrap();
                t.transitions.iter().map(|tr| tr.reward).sum::<f64>()
            })
            .collect();
        let jr = random.iter().sum::<f64>() / n as f64;

        let inverted = |s: &EnvState| {
            let a = expert_action(s, &g, &p);
            [-a[0], -a[1]]
        };
        let ji = evaluate_policy(&inverted, n, &p, seed).unwrap().mean_return;

        assert!(je > jn, "expert {je} vs noisy {jn}");
        assert!(jn > jr, "noisy {jn} vs random {jr}");
        assert!(jr > ji, "random {jr} vs inverted {ji}");
    }

    #[test]
    fn expert_dataset_beats_random_policy_mean() {
        let p = EnvParams::default();
        let g = ExpertGains::default();
        let ds = generate_dataset(200, &g, &p, 1).unwrap();
        let mean_expert: f64 = ds
            .trajectories
            .iter()
            .map(|t| t.transitions.iter().map(|tr| tr.reward).sum::<f64>())
            .sum::<f64>()
            / ds.len() as f64;
        assert!(mean_expert.is_finite());
        let random_returns: Vec<f64> = (0..200u64)
            .map(|ep| {
                let episode_seed = 1 ^ ep;
                let mut r = rng::substream(episode_seed, rng::SALT_ATTACK_INJECT, 0);
                let mut actor =
                    |_: &EnvState| [r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0)];
                let t = rollout(&mut actor, &p, episode_seed).unwrap();
                t.transitions.iter().map(|tr| tr.reward).sum::<f64>()
            })
            .collect();
        let mean_random = random_returns.iter().sum::<f64>() / 200.0;
        assert!(mean_expert > mean_random, "{mean_expert} vs {mean_random}");
    }
}
