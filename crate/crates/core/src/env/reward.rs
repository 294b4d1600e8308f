use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    ReturnTime,
    SessionLength,
    Both,
}

impl RewardMode {
    pub const ALL: [RewardMode; 3] = [
        RewardMode::ReturnTime,
        RewardMode::SessionLength,
        RewardMode::Both,
    ];

    pub fn reward(self, r_delta: u8, r_eta: u8) -> f64 {
        match self {
            RewardMode::ReturnTime => r_delta as f64,
            RewardMode::SessionLength => r_eta as f64,
            RewardMode::Both => combined_reward(r_delta, r_eta),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::ReturnTime => "return_time",
            RewardMode::SessionLength => "session_length",
            RewardMode::Both => "both",
        }
    }
}

impl std::str::FromStr for RewardMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "return_time" => Ok(RewardMode::ReturnTime),
            "session_length" => Ok(RewardMode::SessionLength),
            "both" => Ok(RewardMode::Both),
            other => Err(format!("unknown reward mode `{other}`")),
        }
    }
}

/// `⌊min(δ_avg, δ_75%) / δ⌋` clipped to `0..=5`.
pub fn reward_return_time(delta: f64, delta_avg_user: f64, delta_p75: f64) -> Result<u8, EnvError> {
    if !(delta > 0.0) {
        return Err(EnvError::NonPositiveReturnTime(delta));
    }
    if !(delta_avg_user > 0.0 && delta_p75 > 0.0) {
        return Err(EnvError::InvalidConfig(format!(
            "return-time statistics must be positive (avg {delta_avg_user}, p75 {delta_p75})"
        )));
    }
    Ok(clip_floor(delta_avg_user.min(delta_p75) / delta))
}

/// `⌊η / (0.8·η_avg)⌋` clipped to `0..=5`.
pub fn reward_session_length(eta: usize, eta_avg_user: f64) -> u8 {
    debug_assert!(eta_avg_user > 0.0);
    clip_floor(eta as f64 / (eta_avg_user * 0.8))
}

/// Fixed 0.7 / 0.3 blend of the two engagement rewards.
pub fn combined_reward(r_delta: u8, r_eta: u8) -> f64 {
    0.7 * r_delta as f64 + 0.3 * r_eta as f64
}

fn clip_floor(x: f64) -> u8 {
    x.floor().clamp(0.0, 5.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn return_time_table() {
        assert_eq!(reward_return_time(2.0, 6.0, 11.2794).unwrap(), 3);
        assert_eq!(reward_return_time(1e6, 6.0, 11.2794).unwrap(), 0);
        // ⌊11.2794⌋ = 11 before clipping
        assert_eq!(reward_return_time(1.0, 100.0, 11.2794).unwrap(), 5);
        assert!(reward_return_time(0.0, 6.0, 11.2794).is_err());
        assert!(reward_return_time(-1.0, 6.0, 11.2794).is_err());
    }

    #[test]
    fn session_length_table() {
        assert_eq!(reward_session_length(10, 4.0449), 3);
        assert_eq!(reward_session_length(0, 4.0449), 0);
        assert_eq!(reward_session_length(4, 4.0), 1);
    }

    #[test]
    fn combined_table() {
        assert_eq!(combined_reward(0, 0), 0.0);
        assert_eq!(combined_reward(5, 5), 5.0);
        assert!((combined_reward(3, 1) - 2.4).abs() < 1e-12);
    }

    #[test]
    fn modes_parse() {
        for m in RewardMode::ALL {
            assert_eq!(m.as_str().parse::<RewardMode>().unwrap(), m);
        }
        assert!("clicks".parse::<RewardMode>().is_err());
    }

    proptest! {
        #[test]
        fn return_time_is_non_increasing(
            d1 in 0.01f64..200.0, d2 in 0.01f64..200.0, avg in 0.5f64..50.0, p75 in 0.5f64..50.0
        ) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let a = reward_return_time(lo, avg, p75).unwrap();
            let b = reward_return_time(hi, avg, p75).unwrap();
            prop_assert!(a >= b);
            prop_assert!(a <= 5);
        }

        #[test]
        fn session_length_is_non_decreasing(e1 in 0usize..60, e2 in 0usize..60, avg in 0.5f64..20.0) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let a = reward_session_length(lo, avg);
            let b = reward_session_length(hi, avg);
            prop_assert!(a <= b);
            prop_assert!(b <= 5);
        }

        #[test]
        fn combined_stays_in_range(rd in 0u8..=5, re in 0u8..=5) {
            let r = combined_reward(rd, re);
            prop_assert!((0.0..=5.0).contains(&r));
        }
    }
}
