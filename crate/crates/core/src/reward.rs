//! Piecewise delegation reward.

pub const GOAL_REWARD: f64 = 100.0;
pub const STEP_REWARD: f64 = -1.0;
pub const COLLISION_REWARD: f64 = -10.0;
pub const TIMEOUT_REWARD: f64 = -100.0;

/// Which branch of the reward applies. Precedence is goal, then timeout,
/// then collision, then a plain step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardCase {
    Goal,
    Timeout,
    Collision,
    Step,
}

impl RewardCase {
    pub fn classify(reached_goal: bool, collided: bool, timed_out: bool) -> Self {
        if reached_goal {
            RewardCase::Goal
        } else if timed_out {
            RewardCase::Timeout
        } else if collided {
            RewardCase::Collision
        } else {
            RewardCase::Step
        }
    }

    pub fn base(self) -> f64 {
        match self {
            RewardCase::Goal => GOAL_REWARD,
            RewardCase::Timeout => TIMEOUT_REWARD,
            RewardCase::Collision => COLLISION_REWARD,
            RewardCase::Step => STEP_REWARD,
        }
    }
}

/// Reward for one delegation to an agent of the given cost. Cost is charged
/// once per delegation regardless of how many atomic moves it made.
pub fn reward_fn(cost: f64, reached_goal: bool, collided: bool, timed_out: bool) -> f64 {
    RewardCase::classify(reached_goal, collided, timed_out).base() - cost
}
