use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::behavior::BehaviorPolicy;
use super::rollout::Policy;
use super::user::random_unit;
use super::{
    reward_return_time, reward_session_length, user_rng, EnvConfig, EnvError, Event, RewardMode,
    UserProfile, UserSim,
};

pub const TRANSITIONS_FILE: &str = "transitions.jsonl";
pub const STATS_FILE: &str = "stats.json";

/// One logged request. The successor state of a non-terminal transition is
/// the next record of the same session, so it is not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub user_id: u64,
    pub session_id: u32,
    pub step: u32,
    pub s_h: Vec<f64>,
    pub s_l: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStats {
    pub user_id: u64,
    pub delta_avg: f64,
    pub eta_avg: f64,
    /// Hours after each session; the last entry is never observed by rewards.
    pub return_times: Vec<f64>,
    pub session_lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub seed: u64,
    pub config: EnvConfig,
    pub reward_mode: RewardMode,
    pub delta_p75: f64,
    pub n_transitions: usize,
    pub n_sessions: usize,
    pub mean_session_length: f64,
    pub mean_return_time: f64,
    pub mean_reward: f64,
    pub users: Vec<UserStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    pub stats: DatasetStats,
    pub transitions: Vec<Transition>,
    user_ranges: Vec<Range<usize>>,
}

/// Per-user log collected during generation.
#[derive(Debug, Clone)]
pub struct UserLog {
    pub profile: UserProfile,
    pub transitions: Vec<Transition>,
    pub return_times: Vec<f64>,
    pub session_lengths: Vec<usize>,
}

/// Systematic bias of the logging policy, shared by every user.
pub fn shared_bias(cfg: &EnvConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.behavior_seed);
    random_unit(cfg.action_dim, &mut rng)
        .into_iter()
        .map(|x| x * cfg.bias_scale)
        .collect()
}

/// Simulated users with the reward statistics attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub config: EnvConfig,
    pub profiles: Vec<UserProfile>,
    pub delta_p75: f64,
}

impl Population {
    /// Rebuilds the exact users behind a dataset, with its statistics.
    pub fn from_dataset(ds: &LoggedDataset) -> Self {
        let cfg = &ds.stats.config;
        let bias = shared_bias(cfg);
        let profiles = ds
            .stats
            .users
            .iter()
            .map(|u| {
                let mut rng = user_rng(ds.stats.seed, u.user_id);
                let mut p = UserProfile::sample(u.user_id, cfg, &bias, &mut rng);
                p.delta_avg = u.delta_avg;
                p.eta_avg = u.eta_avg;
                p
            })
            .collect();
        Population {
            config: cfg.clone(),
            profiles,
            delta_p75: ds.stats.delta_p75,
        }
    }
}

fn simulate_user(cfg: &EnvConfig, bias: &[f64], seed: u64, user_id: u64) -> UserLog {
    let mut rng = user_rng(seed, user_id);
    let profile = UserProfile::sample(user_id, cfg, bias, &mut rng);
    let mut sim = UserSim::new(profile.clone(), cfg);
    let mut policy = BehaviorPolicy::new(cfg.action_dim, cfg.behavior_noise, cfg.noise_persistence);
    let mut transitions = Vec::new();
    let mut return_times = Vec::with_capacity(cfg.sessions_per_user);
    let mut session_lengths = Vec::with_capacity(cfg.sessions_per_user);
    for session in 0..cfg.sessions_per_user {
        policy.begin_session(&mut rng);
        let mut step = 0u32;
        loop {
            let state = sim.state();
            let a = policy.act(&profile, &state, &mut rng);
            let out = sim.step(&a, &mut rng);
            let done = out.event == Event::SessionEnd;
            transitions.push(Transition {
                user_id,
                session_id: session as u32,
                step,
                s_h: state.s_h,
                s_l: state.s_l,
                a,
                r: 0.0,
                done,
            });
            step += 1;
            if done {
                return_times.push(out.return_time.expect("session end carries a return time"));
                session_lengths.push(out.session_length.expect("session end carries a length"));
                break;
            }
        }
    }
    UserLog {
        profile,
        transitions,
        return_times,
        session_lengths,
    }
}

/// Linear interpolation between closest ranks.
pub(crate) fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Logs `config.n_users` users served by the behavior policy.
pub fn generate_dataset(config: &EnvConfig, seed: u64) -> Result<LoggedDataset, EnvError> {
    config.validate()?;
    let bias = shared_bias(config);
    let logs: Vec<UserLog> = (0..config.n_users as u64)
        .map(|u| simulate_user(config, &bias, seed, u))
        .collect();

    // Only return times followed by another session are observed.
    let observed: Vec<f64> = logs
        .iter()
        .flat_map(|l| l.return_times[..l.return_times.len() - 1].iter().copied())
        .collect();
    let delta_p75 = if observed.is_empty() {
        config.delta_base
    } else {
        percentile(&observed, 0.75)
    };

    let mut users = Vec::with_capacity(logs.len());
    let mut transitions = Vec::new();
    for log in logs {
        let seen = &log.return_times[..log.return_times.len() - 1];
        let delta_avg = if seen.is_empty() {
            log.profile.delta_base
        } else {
            seen.iter().sum::<f64>() / seen.len() as f64
        };
        let eta_avg = log.session_lengths.iter().sum::<usize>() as f64
            / log.session_lengths.len() as f64;
        users.push(UserStats {
            user_id: log.profile.user_id,
            delta_avg,
            eta_avg,
            return_times: log.return_times,
            session_lengths: log.session_lengths,
        });
        transitions.extend(log.transitions);
    }

    let n_sessions: usize = users.iter().map(|u| u.session_lengths.len()).sum();
    let mean_session_length = transitions.len() as f64 / n_sessions as f64;
    let mean_return_time = users
        .iter()
        .flat_map(|u| u.return_times.iter())
        .sum::<f64>()
        / n_sessions as f64;
    let stats = DatasetStats {
        seed,
        config: config.clone(),
        reward_mode: config.reward_mode,
        delta_p75,
        n_transitions: transitions.len(),
        n_sessions,
        mean_session_length,
        mean_return_time,
        mean_reward: 0.0,
        users,
    };
    let mut ds = LoggedDataset::from_parts(stats, transitions)?;
    ds.relabel(config.reward_mode)?;
    Ok(ds)
}

impl LoggedDataset {
    pub fn from_parts(stats: DatasetStats, transitions: Vec<Transition>) -> Result<Self, EnvError> {
        let mut user_ranges = Vec::with_capacity(stats.users.len());
        let mut start = 0;
        for (k, user) in stats.users.iter().enumerate() {
            let mut end = start;
            while end < transitions.len() && transitions[end].user_id == user.user_id {
                end += 1;
            }
            if end == start {
                return Err(EnvError::Dataset(format!(
                    "user {} (record {k}) has no transitions",
                    user.user_id
                )));
            }
            let sessions = transitions[start..end].iter().filter(|t| t.done).count();
            if sessions != user.session_lengths.len() || !transitions[end - 1].done {
                return Err(EnvError::Dataset(format!(
                    "user {} session structure does not match its statistics",
                    user.user_id
                )));
            }
            user_ranges.push(start..end);
            start = end;
        }
        if start != transitions.len() {
            return Err(EnvError::Dataset("transitions for unknown users".into()));
        }
        Ok(LoggedDataset {
            stats,
            transitions,
            user_ranges,
        })
    }

    /// Reassigns session-end rewards under `mode`.
    pub fn relabel(&mut self, mode: RewardMode) -> Result<(), EnvError> {
        let p75 = self.stats.delta_p75;
        let mut total = 0.0;
        for (user, range) in self.stats.users.iter().zip(&self.user_ranges) {
            let n = user.session_lengths.len();
            let mut session = 0;
            for t in &mut self.transitions[range.clone()] {
                if !t.done {
                    t.r = 0.0;
                    continue;
                }
                let r_delta = if session + 1 < n {
                    reward_return_time(user.return_times[session], user.delta_avg, p75)?
                } else {
                    0
                };
                let r_eta = reward_session_length(user.session_lengths[session], user.eta_avg);
                t.r = mode.reward(r_delta, r_eta);
                total += t.r;
                session += 1;
            }
        }
        self.stats.reward_mode = mode;
        self.stats.mean_reward = total / self.transitions.len() as f64;
        Ok(())
    }

    pub fn relabeled(&self, mode: RewardMode) -> Result<Self, EnvError> {
        let mut ds = self.clone();
        ds.relabel(mode)?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.user_ranges.len()
    }

    /// Transitions of each user, one trajectory per user.
    pub fn trajectories(&self) -> impl Iterator<Item = &[Transition]> {
        self.user_ranges.iter().map(move |r| &self.transitions[r.clone()])
    }

    pub fn user_ranges(&self) -> &[Range<usize>] {
        &self.user_ranges
    }

    /// Successor of transition `i`, or `None` when it ends a session.
    pub fn next_of(&self, i: usize) -> Option<&Transition> {
        let t = &self.transitions[i];
        if t.done {
            None
        } else {
            self.transitions.get(i + 1)
        }
    }

    /// Keeps only the listed users, preserving statistics.
    pub fn subset_users(&self, keep: &[usize]) -> Result<Self, EnvError> {
        let mut users = Vec::with_capacity(keep.len());
        let mut transitions = Vec::new();
        for &k in keep {
            let range = self
                .user_ranges
                .get(k)
                .ok_or_else(|| EnvError::Dataset(format!("no user record {k}")))?;
            users.push(self.stats.users[k].clone());
            transitions.extend_from_slice(&self.transitions[range.clone()]);
        }
        let n_sessions: usize = users.iter().map(|u| u.session_lengths.len()).sum();
        let stats = DatasetStats {
            n_transitions: transitions.len(),
            n_sessions,
            mean_session_length: transitions.len() as f64 / n_sessions.max(1) as f64,
            mean_return_time: users.iter().flat_map(|u| u.return_times.iter()).sum::<f64>()
                / n_sessions.max(1) as f64,
            users,
            ..self.stats.clone()
        };
        let mut ds = LoggedDataset::from_parts(stats, transitions)?;
        ds.relabel(self.stats.reward_mode)?;
        Ok(ds)
    }

    pub fn save(&self, dir: &Path) -> Result<(), EnvError> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(TRANSITIONS_FILE))?);
        for t in &self.transitions {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join(STATS_FILE))?);
        serde_json::to_writer_pretty(&mut w, &self.stats)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, EnvError> {
        let stats: DatasetStats =
            serde_json::from_reader(BufReader::new(File::open(dir.join(STATS_FILE))?))?;
        let reader = BufReader::new(File::open(dir.join(TRANSITIONS_FILE))?);
        let mut transitions = Vec::with_capacity(stats.n_transitions);
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Transition = serde_json::from_str(&line)
                .map_err(|e| EnvError::Dataset(format!("line {}: {e}", n + 1)))?;
            let cfg = &stats.config;
            if t.s_h.len() != cfg.session_dim()
                || t.s_l.len() != cfg.request_dim()
                || t.a.len() != cfg.action_dim
            {
                return Err(EnvError::Dataset(format!("line {}: wrong field width", n + 1)));
            }
            transitions.push(t);
        }
        if transitions.len() != stats.n_transitions {
            return Err(EnvError::Dataset(format!(
                "expected {} transitions, found {}",
                stats.n_transitions,
                transitions.len()
            )));
        }
        LoggedDataset::from_parts(stats, transitions)
    }
}
