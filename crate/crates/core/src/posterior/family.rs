use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::IbugError;

/// Output distribution families, in default selection order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionFamily {
    Normal,
    Skewnormal,
    Lognormal,
    Laplace,
    StudentT,
    Logistic,
    Gumbel,
    Weibull,
    Kde,
}

impl DistributionFamily {
    pub const ALL: [DistributionFamily; 9] = [
        DistributionFamily::Normal,
        DistributionFamily::Skewnormal,
        DistributionFamily::Lognormal,
        DistributionFamily::Laplace,
        DistributionFamily::StudentT,
        DistributionFamily::Logistic,
        DistributionFamily::Gumbel,
        DistributionFamily::Weibull,
        DistributionFamily::Kde,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DistributionFamily::Normal => "normal",
            DistributionFamily::Skewnormal => "skewnormal",
            DistributionFamily::Lognormal => "lognormal",
            DistributionFamily::Laplace => "laplace",
            DistributionFamily::StudentT => "student-t",
            DistributionFamily::Logistic => "logistic",
            DistributionFamily::Gumbel => "gumbel",
            DistributionFamily::Weibull => "weibull",
            DistributionFamily::Kde => "kde",
        }
    }
}

impl fmt::Display for DistributionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistributionFamily {
    type Err = IbugError;

    fn from_str(s: &str) -> Result<Self, IbugError> {
        let s = s.to_ascii_lowercase();
        DistributionFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s || (s == "studentt" && *f == DistributionFamily::StudentT))
            .ok_or_else(|| IbugError::invalid(format!("unknown distribution family '{s}'")))
    }
}
