use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

use super::sweep::SweepRecord;

/// Numeric record column usable as a frontier axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKey {
    Nfe,
    TotalW1,
    ContractedW1,
    AdditionalW1,
    WallMs,
}

impl RecordKey {
    pub fn get(self, r: &SweepRecord) -> f64 {
        match self {
            RecordKey::Nfe => r.nfe as f64,
            RecordKey::TotalW1 => r.total_w1,
            RecordKey::ContractedW1 => r.contracted_w1,
            RecordKey::AdditionalW1 => r.additional_w1,
            RecordKey::WallMs => r.wall_ms as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RecordKey::Nfe => "nfe",
            RecordKey::TotalW1 => "total_w1",
            RecordKey::ContractedW1 => "contracted_w1",
            RecordKey::AdditionalW1 => "additional_w1",
            RecordKey::WallMs => "wall_ms",
        }
    }
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecordKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        [
            RecordKey::Nfe,
            RecordKey::TotalW1,
            RecordKey::ContractedW1,
            RecordKey::AdditionalW1,
            RecordKey::WallMs,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::config(format!("unknown record column `{s}`")))
    }
}

/// A frontier member; `frontier_rank` is its position in ascending `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRecord {
    #[serde(flatten)]
    pub record: SweepRecord,
    pub frontier_rank: usize,
}

/// Prefix-minimum frontier: sort by `x` (ties by `y`), keep each record whose
/// `y` is strictly below every `y` before it. Records with a non-finite key
/// are skipped.
pub fn pareto_frontier(records: &[SweepRecord], x: RecordKey, y: RecordKey) -> Vec<FrontierRecord> {
    let mut sorted: Vec<&SweepRecord> = records
        .iter()
        .filter(|r| x.get(r).is_finite() && y.get(r).is_finite())
        .collect();
    sorted.sort_by(|a, b| x.get(a).total_cmp(&x.get(b)).then(y.get(a).total_cmp(&y.get(b))));
    let mut best = f64::INFINITY;
    let mut out = Vec::new();
    for r in sorted {
        let v = y.get(r);
        if v < best {
            best = v;
            out.push(FrontierRecord {
                record: r.clone(),
                frontier_rank: out.len(),
            });
        }
    }
    out
}
