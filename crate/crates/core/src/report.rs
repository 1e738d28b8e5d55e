//! Machine-readable verification reports.

use serde::ser::{Serialize, SerializeStruct, Serializer};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::kernels::Kernel;
use crate::points::Points;

pub const SCHEMA_VERSION: u32 = 1;

/// A float written with 17 significant digits (`null` when not finite).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(format_number(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

pub fn serialize_nums<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| Num(*x)))
}

pub fn serialize_num<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    Num(*v).serialize(s)
}

/// One checked identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub case_id: String,
    pub inputs_digest: String,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Case {
    pub fn new(case_id: String, inputs_digest: String, lhs: f64, rhs: f64, gap: f64, tolerance: f64) -> Self {
        Self {
            case_id,
            inputs_digest,
            lhs,
            rhs,
            gap,
            tolerance,
            passed: gap <= tolerance,
        }
    }

    /// A case whose gap is `|lhs − rhs|`.
    pub fn compare(case_id: String, inputs_digest: String, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self::new(case_id, inputs_digest, lhs, rhs, (lhs - rhs).abs(), tolerance)
    }
}

impl Serialize for Case {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Case", 7)?;
        st.serialize_field("case_id", &self.case_id)?;
        st.serialize_field("inputs_digest", &self.inputs_digest)?;
        st.serialize_field("lhs", &Num(self.lhs))?;
        st.serialize_field("rhs", &Num(self.rhs))?;
        st.serialize_field("gap", &Num(self.gap))?;
        st.serialize_field("tolerance", &Num(self.tolerance))?;
        st.serialize_field("passed", &self.passed)?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub suite: String,
    pub seed: u64,
    pub trials: usize,
    pub cases: Vec<Case>,
    pub wall_time: f64,
}

impl Report {
    pub fn new(suite: impl Into<String>, seed: u64, trials: usize, mut cases: Vec<Case>) -> Self {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        Self {
            suite: suite.into(),
            seed,
            trials,
            cases,
            wall_time: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Case> {
        self.cases.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

impl Serialize for Report {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Report", 8)?;
        st.serialize_field("schema", &SCHEMA_VERSION)?;
        st.serialize_field("suite", &self.suite)?;
        st.serialize_field("seed", &self.seed)?;
        st.serialize_field("trials", &self.trials)?;
        st.serialize_field("passed", &self.passed())?;
        st.serialize_field("case_count", &self.cases.len())?;
        st.serialize_field("cases", &self.cases)?;
        st.serialize_field("wall_time", &Num(self.wall_time))?;
        st.end()
    }
}

/// Incremental SHA-256 over kernels, point sets and scalars.
#[derive(Debug, Clone, Default)]
pub struct InputDigest(Sha256);

impl InputDigest {
    pub fn new() -> Self {
        Self(Sha256::new())
    }

    pub fn tag(mut self, s: &str) -> Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    pub fn kernel(self, k: &Kernel) -> Self {
        self.tag(&k.to_string())
    }

    pub fn scalars(mut self, v: &[f64]) -> Self {
        self.0.update((v.len() as u64).to_le_bytes());
        for x in v {
            self.0.update(x.to_bits().to_le_bytes());
        }
        self
    }

    pub fn points(self, p: &Points) -> Self {
        let dim = p.dim() as f64;
        self.scalars(&[dim]).scalars(p.as_slice())
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}
