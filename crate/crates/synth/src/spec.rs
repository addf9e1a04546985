use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario cannot be realized: {0}")]
    Infeasible(String),
    #[error("scenario file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VpDistribution {
    Uniform {
        min: f64,
        max: f64,
    },
    /// Pareto with unit scale and shape `alpha`.
    Pareto {
        alpha: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalPattern {
    Uniform,
    /// Arrival offsets drawn as the square of a uniform variate.
    EarlyRush,
    /// Uniform arrivals plus one oversized ballot in the last quarter.
    LateSpike,
    /// Ballots arrive in eight short bursts.
    Stairwise,
    /// Each proposal draws one of the other patterns.
    Mixed,
}

impl ArrivalPattern {
    pub const CONCRETE: [ArrivalPattern; 4] = [
        ArrivalPattern::Uniform,
        ArrivalPattern::EarlyRush,
        ArrivalPattern::LateSpike,
        ArrivalPattern::Stairwise,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallotMix {
    pub single: f64,
    pub approval: f64,
    pub weighted: f64,
}

impl Default for BallotMix {
    fn default() -> Self {
        BallotMix {
            single: 1.0,
            approval: 0.0,
            weighted: 0.0,
        }
    }
}

/// Everything that determines a synthetic dataset. Two equal specs produce
/// identical datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_proposals: usize,
    #[serde(default = "default_space")]
    pub space: String,
    /// Inclusive range of substantive options per proposal.
    pub options: [usize; 2],
    /// Size of the voter pool.
    pub n_voters: usize,
    /// Inclusive range of ballots per proposal.
    pub participants: [usize; 2],
    pub vp: VpDistribution,
    pub arrival: ArrivalPattern,
    #[serde(default)]
    pub contested_fraction: f64,
    #[serde(default)]
    pub ballot_mix: BallotMix,
    /// Share of proposals carrying an extra "Abstain" choice.
    #[serde(default)]
    pub abstain_fraction: f64,
    /// Share of proposals with a change label.
    #[serde(default)]
    pub label_fraction: f64,
    /// Share of proposals with a forum thread.
    #[serde(default)]
    pub forum_fraction: f64,
    #[serde(default = "yes")]
    pub market: bool,
    #[serde(default = "default_start")]
    pub start: i64,
    #[serde(default = "default_duration")]
    pub duration_days: u32,
    #[serde(default = "default_spacing")]
    pub spacing_days: u32,
}

fn default_space() -> String {
    "synth.eth".into()
}

fn yes() -> bool {
    true
}

fn default_start() -> i64 {
    1_700_006_400
}

fn default_duration() -> u32 {
    5
}

fn default_spacing() -> u32 {
    2
}

fn fraction(name: &str, v: f64) -> Result<(), SpecError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(SpecError::Invalid(format!(
            "{name} = {v} is outside [0, 1]"
        )))
    }
}

impl ScenarioSpec {
    /// A small valid scenario; tests adjust fields from here.
    pub fn small(seed: u64) -> Self {
        ScenarioSpec {
            seed,
            n_proposals: 12,
            space: default_space(),
            options: [2, 4],
            n_voters: 60,
            participants: [6, 40],
            vp: VpDistribution::Pareto { alpha: 1.5 },
            arrival: ArrivalPattern::Mixed,
            contested_fraction: 0.3,
            ballot_mix: BallotMix {
                single: 0.7,
                approval: 0.15,
                weighted: 0.15,
            },
            abstain_fraction: 0.25,
            label_fraction: 0.8,
            forum_fraction: 0.7,
            market: true,
            start: default_start(),
            duration_days: default_duration(),
            spacing_days: default_spacing(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let spec: ScenarioSpec =
            toml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let invalid = |m: String| Err(SpecError::Invalid(m));
        if self.n_proposals == 0 {
            return invalid("n_proposals must be positive".into());
        }
        let [lo, hi] = self.options;
        if lo < 2 || hi < lo || hi > 8 {
            return invalid(format!("options {lo}..={hi} must lie within 2..=8"));
        }
        let [pmin, pmax] = self.participants;
        if pmin == 0 || pmax < pmin {
            return invalid(format!("participants {pmin}..={pmax} is empty"));
        }
        if pmin > self.n_voters {
            return invalid(format!(
                "participants minimum {pmin} exceeds voter pool {}",
                self.n_voters
            ));
        }
        match self.vp {
            VpDistribution::Uniform { min, max }
                if !(min > 0.0 && max >= min && max.is_finite()) =>
            {
                return invalid(format!("uniform vp range [{min}, {max}] must be positive"))
            }
            VpDistribution::Pareto { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return invalid(format!("pareto alpha {alpha} must be positive"))
            }
            _ => {}
        }
        fraction("contested_fraction", self.contested_fraction)?;
        fraction("abstain_fraction", self.abstain_fraction)?;
        fraction("label_fraction", self.label_fraction)?;
        fraction("forum_fraction", self.forum_fraction)?;
        let mix = self.ballot_mix;
        fraction("ballot_mix.single", mix.single)?;
        fraction("ballot_mix.approval", mix.approval)?;
        fraction("ballot_mix.weighted", mix.weighted)?;
        if ((mix.single + mix.approval + mix.weighted) - 1.0).abs() > 1e-9 {
            return invalid("ballot_mix fractions must sum to 1".into());
        }
        if self.duration_days == 0 {
            return invalid("duration_days must be positive".into());
        }
        if self.contested_fraction > 0.0 && (pmin < 2 || self.n_voters < 2) {
            return Err(SpecError::Infeasible(format!(
                "contested proposals need at least two ballots, but participants start at {pmin} with {} voters",
                self.n_voters
            )));
        }
        Ok(())
    }

    pub fn n_contested(&self) -> usize {
        (self.contested_fraction * self.n_proposals as f64).round() as usize
    }
}
