use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Severity;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationAction {
    NoMitigation,
    FoveatedDofBlur,
    DynamicGaussianBlur,
    DynamicFovReduction,
}

impl MitigationAction {
    pub const ALL: [MitigationAction; 4] = [
        MitigationAction::NoMitigation,
        MitigationAction::FoveatedDofBlur,
        MitigationAction::DynamicGaussianBlur,
        MitigationAction::DynamicFovReduction,
    ];

    pub fn for_level(level: Severity) -> Self {
        match level {
            Severity::None => MitigationAction::NoMitigation,
            Severity::Low => MitigationAction::FoveatedDofBlur,
            Severity::Medium => MitigationAction::DynamicGaussianBlur,
            Severity::High => MitigationAction::DynamicFovReduction,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MitigationAction::NoMitigation => "no_mitigation",
            MitigationAction::FoveatedDofBlur => "foveated_dof_blur",
            MitigationAction::DynamicGaussianBlur => "dynamic_gaussian_blur",
            MitigationAction::DynamicFovReduction => "dynamic_fov_reduction",
        }
    }
}

impl fmt::Display for MitigationAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Normal,
    Attack,
    DetectorDisabled,
}

/// Action for a decision plus the alert flag. An attack verdict discards the
/// sample: the previous action stays and an alert is raised.
pub fn mitigation_for(level: Severity, verdict: Verdict, previous: MitigationAction) -> (MitigationAction, bool) {
    match verdict {
        Verdict::Attack => (previous, true),
        Verdict::Normal | Verdict::DetectorDisabled => (MitigationAction::for_level(level), false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_table() {
        let prev = MitigationAction::DynamicGaussianBlur;
        assert_eq!(mitigation_for(Severity::Low, Verdict::Normal, prev), (MitigationAction::FoveatedDofBlur, false));
        assert_eq!(mitigation_for(Severity::None, Verdict::Normal, prev), (MitigationAction::NoMitigation, false));
        assert_eq!(mitigation_for(Severity::High, Verdict::Attack, prev), (MitigationAction::DynamicGaussianBlur, true));
        assert_eq!(
            mitigation_for(Severity::Medium, Verdict::DetectorDisabled, MitigationAction::NoMitigation),
            (MitigationAction::DynamicGaussianBlur, false)
        );
        assert_eq!(
            mitigation_for(Severity::High, Verdict::Normal, prev),
            (MitigationAction::DynamicFovReduction, false)
        );
    }
}
