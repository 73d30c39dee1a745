//! Ranked retrieval results and the retrieval method vocabulary.

use crate::error::{Error, Result};
use crate::volume_retrieval::PoolingMethod;

/// One ranked volume.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedVolume {
    pub volume_id: String,
    pub score: f64,
}

/// Ordered retrieval result of volume ids with scores. Rank is the 1-based
/// position in `entries`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub method: String,
    pub entries: Vec<RankedVolume>,
}

impl RankedList {
    pub fn new(method: impl Into<String>, entries: Vec<RankedVolume>) -> Self {
        Self {
            method: method.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn volume_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.volume_id.as_str())
    }

    /// CSV serialization: header plus one `rank,volume_id,score,method`
    /// record per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,volume_id,score,method\n");
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{:.6},{}\n",
                i + 1,
                e.volume_id,
                e.score,
                self.method
            ));
        }
        out
    }

    /// Structured-text serialization: one `rank= volume_id= score=` record
    /// per line under a method header.
    pub fn to_text(&self) -> String {
        let mut out = format!("method={}\n", self.method);
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "rank={} volume_id={} score={:.6}\n",
                i + 1,
                e.volume_id,
                e.score
            ));
        }
        out
    }
}

/// Every retrieval method the engine can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MethodSpec {
    SliceFreq,
    SliceMax,
    SliceSum,
    Volume(PoolingMethod),
    Caption,
    Ensemble,
}

impl MethodSpec {
    pub const ALL: [MethodSpec; 9] = [
        MethodSpec::SliceFreq,
        MethodSpec::SliceMax,
        MethodSpec::SliceSum,
        MethodSpec::Volume(PoolingMethod::Median),
        MethodSpec::Volume(PoolingMethod::Max),
        MethodSpec::Volume(PoolingMethod::Average),
        MethodSpec::Volume(PoolingMethod::Std),
        MethodSpec::Caption,
        MethodSpec::Ensemble,
    ];

    pub fn name(self) -> String {
        match self {
            MethodSpec::SliceFreq => "slice-freq".into(),
            MethodSpec::SliceMax => "slice-max".into(),
            MethodSpec::SliceSum => "slice-sum".into(),
            MethodSpec::Volume(m) => format!("volume-{}", m.as_str()),
            MethodSpec::Caption => "caption".into(),
            MethodSpec::Ensemble => "ensemble".into(),
        }
    }
}

impl std::fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slice-freq" => Ok(MethodSpec::SliceFreq),
            "slice-max" => Ok(MethodSpec::SliceMax),
            "slice-sum" => Ok(MethodSpec::SliceSum),
            "caption" => Ok(MethodSpec::Caption),
            "ensemble" => Ok(MethodSpec::Ensemble),
            other => match other.strip_prefix("volume-") {
                Some(m) => Ok(MethodSpec::Volume(m.parse()?)),
                None => Err(Error::validation(format!("unknown method \"{s}\""))),
            },
        }
    }
}
