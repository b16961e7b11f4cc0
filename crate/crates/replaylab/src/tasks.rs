//! Named tasks and their defaults.

use std::fmt;
use std::str::FromStr;

use replaylab_core::process::{EnvironmentSpec, OuParams, RatWalkParams};
use replaylab_core::rnn::Activation;
use replaylab_core::train::{stepped_curriculum, tmaze_curriculum, triangle_curriculum, Stage};
use replaylab_core::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskName {
    Ou1d,
    Tmaze,
    Triangle,
    RatBiased,
    RatUnbiased,
}

impl TaskName {
    pub const ALL: [TaskName; 5] = [TaskName::Ou1d, TaskName::Tmaze, TaskName::Triangle, TaskName::RatBiased, TaskName::RatUnbiased];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::Ou1d => "ou1d",
            TaskName::Tmaze => "tmaze",
            TaskName::Triangle => "triangle",
            TaskName::RatBiased => "rat_biased",
            TaskName::RatUnbiased => "rat_unbiased",
        }
    }

    pub fn is_maze(self) -> bool {
        matches!(self, TaskName::Tmaze | TaskName::Triangle)
    }

    pub fn is_rat(self) -> bool {
        matches!(self, TaskName::RatBiased | TaskName::RatUnbiased)
    }

    pub fn env(self) -> EnvironmentSpec {
        match self {
            TaskName::Ou1d => EnvironmentSpec::line(OuParams::reference_1d().mu[0]),
            TaskName::Tmaze => EnvironmentSpec::tmaze(),
            TaskName::Triangle => EnvironmentSpec::triangle(),
            TaskName::RatBiased | TaskName::RatUnbiased => EnvironmentSpec::rat_box(),
        }
    }

    /// OU parameters for the awake paths. Maze targets come from the waypoints, so `mu`
    /// is unused there.
    pub fn ou(self) -> Option<OuParams> {
        let maze = |theta| OuParams { theta, mu: DVector::zeros(2), sigma_s: 0.1, sigma_0: 0.05, dt: 0.02, horizon: 100 };
        match self {
            TaskName::Ou1d => Some(OuParams::reference_1d()),
            TaskName::Tmaze => Some(maze(4.0)),
            TaskName::Triangle => Some(maze(2.0)),
            _ => None,
        }
    }

    pub fn rat_walk(self) -> Option<RatWalkParams> {
        match self {
            TaskName::RatBiased => Some(RatWalkParams::biased()),
            TaskName::RatUnbiased => Some(RatWalkParams::unbiased()),
            _ => None,
        }
    }

    pub fn default_hidden(self) -> usize {
        match self {
            TaskName::Ou1d => 10,
            TaskName::Tmaze => 20,
            TaskName::Triangle => 40,
            TaskName::RatBiased | TaskName::RatUnbiased => 64,
        }
    }

    /// Per-step hidden noise std. The awake processes diffuse by `sigma_s * sqrt(dt)`
    /// per step, and the network noise is matched to that.
    pub fn default_sigma_r(self) -> f64 {
        0.1 * 0.02f64.sqrt()
    }

    pub fn default_activation(self) -> Activation {
        match self {
            TaskName::Tmaze | TaskName::Triangle => Activation::Tanh,
            _ => Activation::leaky(),
        }
    }

    pub fn default_mask_k(self) -> usize {
        match self {
            TaskName::RatUnbiased => 6,
            _ => 3,
        }
    }

    /// Epoch schedule at `scale` times the full counts, ending at mask period `k`.
    pub fn curriculum(self, scale: f64, k: Option<usize>) -> Vec<Stage> {
        match (self, k) {
            (TaskName::Triangle, None | Some(3)) => triangle_curriculum(scale),
            (TaskName::Tmaze, None | Some(3)) => tmaze_curriculum(scale),
            (_, k) => stepped_curriculum(k.unwrap_or(self.default_mask_k()), scale),
        }
    }

    /// Replay horizon for exploration runs.
    pub fn exploration_horizon(self) -> usize {
        if self.is_rat() {
            500
        } else {
            400
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}` (expected ou1d, tmaze, triangle, rat_biased or rat_unbiased)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in TaskName::ALL {
            assert_eq!(t.as_str().parse::<TaskName>().unwrap(), t);
        }
        assert!("maze".parse::<TaskName>().is_err());
    }

    #[test]
    fn unbiased_rat_masks_harder() {
        let c = TaskName::RatUnbiased.curriculum(1.0, None);
        assert_eq!(c.last().unwrap().k, 6);
        assert_eq!(TaskName::Triangle.curriculum(1.0, None).iter().map(|s| s.epochs).sum::<usize>(), 30_000);
    }
}
