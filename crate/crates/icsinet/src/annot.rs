//! Annotation JSON schema shared by the synthetic data generator, the
//! dataset loader, and the operator-agreement tooling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Polygons {
    pub oolemma: Vec<[f64; 2]>,
    pub pipette: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub id: String,
    pub polygons: Polygons,
    pub needle_tip: [f64; 2],
    /// Set on operator-agreement files, absent on generated datasets.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub operator_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub round: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub frame_id: Option<String>,
}
