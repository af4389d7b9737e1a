//! Output fission: places an interpreted act on the user's best output
//! channel, duplicating it on channels within `epsilon_red` of the best.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::UserProfile;
use crate::types::{Interpretation, OutputAct, OutputPlan};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FissionError {
    #[error("profile has no output channel with positive suitability")]
    NoOutputChannel,
    #[error("epsilon_red {0} is outside [0, 1]")]
    BadEpsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FissionConfig {
    pub epsilon_red: f64,
}

impl Default for FissionConfig {
    fn default() -> Self {
        FissionConfig { epsilon_red: 0.05 }
    }
}

impl FissionConfig {
    pub fn validate(&self) -> Result<(), FissionError> {
        if (0.0..=1.0).contains(&self.epsilon_red) {
            Ok(())
        } else {
            Err(FissionError::BadEpsilon(self.epsilon_red))
        }
    }
}

/// `act(k1=v1,k2=v2)` with slots in key order.
pub fn render(interp: &Interpretation) -> String {
    let slots: Vec<String> = interp.slots.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{}({})", interp.act, slots.join(","))
}

// Absorbs rounding in `best - epsilon` so the band edge is inclusive.
const BAND_SLACK: f64 = 1e-12;

pub fn plan(interp: &Interpretation, profile: &UserProfile, cfg: &FissionConfig) -> Result<OutputPlan, FissionError> {
    cfg.validate()?;
    // BTreeMap iteration is already channel-sorted, so listing order never matters.
    let usable: Vec<(&String, f64)> =
        profile.output_channels.iter().filter(|(_, &s)| s > 0.0).map(|(c, &s)| (c, s)).collect();
    let (primary, best) = usable
        .iter()
        .copied()
        .reduce(|acc, cur| if cur.1 > acc.1 { cur } else { acc })
        .ok_or(FissionError::NoOutputChannel)?;

    let content = render(interp);
    let mut acts = vec![OutputAct { channel: primary.clone(), content: content.clone(), redundant: false }];
    acts.extend(
        usable
            .iter()
            .filter(|(c, s)| *c != primary && *s + BAND_SLACK >= best - cfg.epsilon_red)
            .map(|(c, _)| OutputAct { channel: (*c).clone(), content: content.clone(), redundant: true }),
    );
    Ok(OutputPlan { acts })
}
