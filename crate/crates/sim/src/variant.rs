use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Controller variants compared in an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Nominal model only.
    Baseline,
    /// Nominal model plus the exact GP.
    GpFull,
    /// Nominal model plus the dynamically re-centered sparse GP.
    GpSparse,
    /// True plant model, no learning.
    Reference,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::GpFull, Variant::GpSparse, Variant::Reference];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::GpFull => "gp-full",
            Variant::GpSparse => "gp-sparse",
            Variant::Reference => "reference",
        }
    }

    pub fn uses_gp(self) -> bool {
        matches!(self, Variant::GpFull | Variant::GpSparse)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| format!("unknown variant `{s}` (expected baseline, gp-full, gp-sparse or reference)"))
    }
}
