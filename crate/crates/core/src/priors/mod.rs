//! Class-specific descriptor weights derived from language-model responses.
//!
//! Each class gets one response holding spatial importances, temporal
//! importances and a global-vs-local preference `gamma`. These assemble into
//! `[gamma, (1-gamma) * spatial, (1-gamma) * temporal]`, normalized to unit
//! l1 norm. The l1 norm before normalization is always `2 - gamma`.

mod client;
mod prompt;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

pub use client::{fetch_priors, fixture_file_name, EndpointConfig, PriorSource};
pub use prompt::{build_prompt, default_prompt_slots, PromptSlot};

/// Largest deviation of a response's spatial/temporal sum from 1 that is
/// silently renormalized.
pub const SUM_TOLERANCE: f64 = 1e-3;
/// Tolerance on the l1 norm of stored weight rows.
pub const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResponseError {
    #[error("no JSON object found in response")]
    NotJson,
    #[error("missing key {0:?}")]
    MissingKey(&'static str),
    #[error("{key:?} must be a list of {expected} numbers, got {found}")]
    Arity {
        key: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{0:?} contains a non-numeric entry")]
    NotANumber(&'static str),
    #[error("{0:?} contains a negative weight")]
    Negative(&'static str),
    #[error("{key:?} sums to {sum}, expected 1")]
    BadSum { key: &'static str, sum: f64 },
    #[error("gamma {0} outside [0, 1]")]
    GammaRange(f64),
}

/// Parsed, validated response for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPrior {
    pub spatial: Vec<f64>,
    pub temporal: Vec<f64>,
    pub gamma: f64,
}

impl RawPrior {
    /// Unnormalized importance vector `[gamma, (1-gamma) w_spa, (1-gamma) w_tmp]`.
    pub fn importance_vector(&self) -> Vec<f64> {
        let local = 1.0 - self.gamma;
        std::iter::once(self.gamma)
            .chain(self.spatial.iter().map(|w| local * w))
            .chain(self.temporal.iter().map(|w| local * w))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("raw prior serializes")
    }
}

/// Non-negative descriptor weights with unit l1 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorWeights(Vec<f64>);

impl PriorWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::validation("empty weight row"));
        }
        if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::validation(
                "weight rows must be finite and non-negative",
            ));
        }
        let l1: f64 = weights.iter().sum();
        if (l1 - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::validation(format!(
                "weight row has l1 norm {l1}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    #[cfg(test)]
    pub(crate) fn unchecked(weights: Vec<f64>) -> Self {
        Self(weights)
    }

    /// Equal weight on each of `rows` descriptors.
    pub fn uniform(rows: usize) -> Self {
        Self(vec![1.0 / rows as f64; rows])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn assemble_weights(raw: &RawPrior) -> PriorWeights {
    let w = raw.importance_vector();
    let l1: f64 = w.iter().sum();
    PriorWeights(w.into_iter().map(|x| x / l1).collect())
}

fn extract_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

fn weight_list(
    obj: &serde_json::Map<String, Value>,
    key: &'static str,
    expected: usize,
) -> std::result::Result<Vec<f64>, ResponseError> {
    let list = obj.get(key).ok_or(ResponseError::MissingKey(key))?;
    let items = list.as_array().ok_or(ResponseError::NotANumber(key))?;
    if items.len() != expected {
        return Err(ResponseError::Arity {
            key,
            expected,
            found: items.len(),
        });
    }
    let values = items
        .iter()
        .map(|v| v.as_f64().ok_or(ResponseError::NotANumber(key)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.iter().any(|&v| v < 0.0) {
        return Err(ResponseError::Negative(key));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(ResponseError::BadSum { key, sum });
    }
    Ok(values.into_iter().map(|v| v / sum).collect())
}

/// Parses a response expecting `spatial` groups and `temporal` segments.
///
/// The first `{` through the last `}` is taken as the JSON object, so stray
/// prose or code fences around it are tolerated. Unknown keys are ignored.
pub fn parse_response(
    text: &str,
    spatial: usize,
    temporal: usize,
) -> std::result::Result<RawPrior, ResponseError> {
    let body = extract_object(text).ok_or(ResponseError::NotJson)?;
    let value: Value = serde_json::from_str(body).map_err(|_| ResponseError::NotJson)?;
    let obj = value.as_object().ok_or(ResponseError::NotJson)?;
    let spatial = weight_list(obj, "spatial", spatial)?;
    let temporal = weight_list(obj, "temporal", temporal)?;
    let gamma = obj
        .get("gamma")
        .ok_or(ResponseError::MissingKey("gamma"))?
        .as_f64()
        .ok_or(ResponseError::NotANumber("gamma"))?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(ResponseError::GammaRange(gamma));
    }
    Ok(RawPrior {
        spatial,
        temporal,
        gamma,
    })
}

/// One weight row per class, in class order.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMatrix {
    class_names: Vec<String>,
    spatial: usize,
    temporal: usize,
    rows: Vec<PriorWeights>,
}

#[derive(Serialize, Deserialize)]
struct PriorFile {
    class_names: Vec<String>,
    #[serde(rename = "P")]
    spatial: usize,
    #[serde(rename = "Z")]
    temporal: usize,
    weights: Vec<Vec<f64>>,
}

impl PriorMatrix {
    pub fn new(
        class_names: Vec<String>,
        spatial: usize,
        temporal: usize,
        rows: Vec<PriorWeights>,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::validation("prior matrix has no classes"));
        }
        if class_names.len() != rows.len() {
            return Err(Error::validation(format!(
                "{} class names for {} weight rows",
                class_names.len(),
                rows.len()
            )));
        }
        let mut unique = HashSet::new();
        if let Some(dup) = class_names.iter().find(|n| !unique.insert(n.as_str())) {
            return Err(Error::validation(format!(
                "duplicate class name {dup:?} in prior matrix"
            )));
        }
        let width = 1 + spatial + temporal;
        for (name, row) in class_names.iter().zip(&rows) {
            if row.len() != width {
                return Err(Error::validation(format!(
                    "prior row for {name:?} has {} weights, expected {width}",
                    row.len()
                )));
            }
        }
        Ok(Self {
            class_names,
            spatial,
            temporal,
            rows,
        })
    }

    pub fn uniform(class_names: Vec<String>, spatial: usize, temporal: usize) -> Result<Self> {
        let rows = vec![PriorWeights::uniform(1 + spatial + temporal); class_names.len()];
        Self::new(class_names, spatial, temporal, rows)
    }

    /// Seeded random rows: i.i.d. uniform draws, l1-normalized, drawn class by
    /// class from one ChaCha stream.
    pub fn random(
        class_names: Vec<String>,
        spatial: usize,
        temporal: usize,
        seed: u64,
    ) -> Result<Self> {
        let width = 1 + spatial + temporal;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..class_names.len())
            .map(|_| {
                let raw: Vec<f64> = (0..width)
                    .map(|_| rng.random::<f64>() + f64::EPSILON)
                    .collect();
                let l1: f64 = raw.iter().sum();
                PriorWeights(raw.into_iter().map(|x| x / l1).collect())
            })
            .collect();
        Self::new(class_names, spatial, temporal, rows)
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn spatial(&self) -> usize {
        self.spatial
    }

    pub fn temporal(&self) -> usize {
        self.temporal
    }

    pub fn row(&self, class: usize) -> &PriorWeights {
        &self.rows[class]
    }

    pub fn rows(&self) -> &[PriorWeights] {
        &self.rows
    }

    /// Keeps only the given classes, in the given order.
    pub fn select(&self, classes: &[usize]) -> Self {
        Self {
            class_names: classes
                .iter()
                .map(|&j| self.class_names[j].clone())
                .collect(),
            spatial: self.spatial,
            temporal: self.temporal,
            rows: classes.iter().map(|&j| self.rows[j].clone()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let file = PriorFile {
            class_names: self.class_names.clone(),
            spatial: self.spatial,
            temporal: self.temporal,
            weights: self.rows.iter().map(|r| r.0.clone()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("prior matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PriorFile = serde_json::from_str(text)?;
        let rows = file
            .weights
            .into_iter()
            .map(PriorWeights::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.class_names, file.spatial, file.temporal, rows)
    }
}

pub fn save_priors(path: impl AsRef<Path>, matrix: &PriorMatrix) -> Result<()> {
    fs::write(path, matrix.to_json())?;
    Ok(())
}

pub fn load_priors(path: impl AsRef<Path>) -> Result<PriorMatrix> {
    PriorMatrix::from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WAVING: &str = r#"{
  "spatial":  [0.05, 0.10, 0.70, 0.15],
  "temporal": [0.15, 0.60, 0.25],
  "gamma":    0.30
}"#;

    #[test]
    fn parses_waving_example() {
        let raw = parse_response(WAVING, 4, 3).unwrap();
        let expect_s = [0.05, 0.10, 0.70, 0.15];
        let expect_t = [0.15, 0.60, 0.25];
        for (a, b) in raw
            .spatial
            .iter()
            .zip(expect_s)
            .chain(raw.temporal.iter().zip(expect_t))
        {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(raw.gamma, 0.30);
    }

    #[test]
    fn waving_weights() {
        // w~ = [0.30, 0.035, 0.07, 0.49, 0.105, 0.105, 0.42, 0.175], |w~|_1 = 1.70
        let raw = parse_response(WAVING, 4, 3).unwrap();
        let tilde = raw.importance_vector();
        let expect_tilde = [0.30, 0.035, 0.07, 0.49, 0.105, 0.105, 0.42, 0.175];
        for (a, b) in tilde.iter().zip(expect_tilde) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((tilde.iter().sum::<f64>() - 1.70).abs() < 1e-9);
        let w = assemble_weights(&raw);
        let expect = [
            0.17647, 0.02059, 0.04118, 0.28824, 0.06176, 0.06176, 0.24706, 0.10294,
        ];
        for (a, b) in w.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn gamma_extremes() {
        let pure = RawPrior {
            spatial: vec![0.25; 4],
            temporal: vec![1.0 / 3.0; 3],
            gamma: 1.0,
        };
        assert_eq!(
            assemble_weights(&pure).as_slice(),
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        let local = RawPrior { gamma: 0.0, ..pure };
        let w = assemble_weights(&local);
        assert_eq!(w.as_slice()[0], 0.0);
        assert!(w.as_slice()[1..5]
            .iter()
            .all(|&x| (x - 1.0 / 8.0).abs() < 1e-12));
        assert!(w.as_slice()[5..]
            .iter()
            .all(|&x| (x - 1.0 / 6.0).abs() < 1e-12));
    }

    #[test]
    fn response_errors() {
        let cases = [
            ("not json at all", ResponseError::NotJson),
            (
                r#"{"temporal":[0.2,0.3,0.5],"gamma":0.1}"#,
                ResponseError::MissingKey("spatial"),
            ),
            (
                r#"{"spatial":[0.5,0.5,0.5,0.5],"temporal":[0.2,0.3,0.5],"gamma":0.1}"#,
                ResponseError::BadSum {
                    key: "spatial",
                    sum: 2.0,
                },
            ),
            (
                r#"{"spatial":[0.5,0.5],"temporal":[0.2,0.3,0.5],"gamma":0.1}"#,
                ResponseError::Arity {
                    key: "spatial",
                    expected: 4,
                    found: 2,
                },
            ),
            (
                r#"{"spatial":[1.2,-0.2,0,0],"temporal":[0.2,0.3,0.5],"gamma":0.1}"#,
                ResponseError::Negative("spatial"),
            ),
            (
                r#"{"spatial":[1,0,0,0],"temporal":[0.2,0.3,0.5],"gamma":1.2}"#,
                ResponseError::GammaRange(1.2),
            ),
            (
                r#"{"spatial":[1,0,0,0],"temporal":[0.2,0.3,0.5]}"#,
                ResponseError::MissingKey("gamma"),
            ),
            (
                r#"{"spatial":[1,0,0,"x"],"temporal":[0.2,0.3,0.5],"gamma":0.5}"#,
                ResponseError::NotANumber("spatial"),
            ),
        ];
        for (text, expected) in cases {
            assert_eq!(parse_response(text, 4, 3).unwrap_err(), expected, "{text}");
        }
    }

    #[test]
    fn tolerates_prose_extra_keys_and_near_sums() {
        let text = "Sure!\n```json\n{\"spatial\":[0.25,0.25,0.25,0.2505],\"temporal\":[0.3,0.3,0.4],\"gamma\":0.5,\"note\":\"x\"}\n```";
        let raw = parse_response(text, 4, 3).unwrap();
        assert!((raw.spatial.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_round_trip_and_errors() {
        let names = vec!["wave".to_string(), "salute".to_string()];
        let raw = parse_response(WAVING, 4, 3).unwrap();
        let m = PriorMatrix::new(
            names.clone(),
            4,
            3,
            vec![assemble_weights(&raw), PriorWeights::uniform(8)],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_priors(&path, &m).unwrap();
        let back = load_priors(&path).unwrap();
        for (a, b) in m.rows().iter().zip(back.rows()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
        assert_eq!(back.class_names(), &names[..]);

        let bad_arity = r#"{"class_names":["a"],"P":4,"Z":3,"weights":[[0.5,0.5]]}"#;
        assert!(PriorMatrix::from_json(bad_arity).is_err());
        let empty = r#"{"class_names":[],"P":4,"Z":3,"weights":[]}"#;
        assert!(PriorMatrix::from_json(empty).is_err());
        let unnormalized = r#"{"class_names":["a"],"P":1,"Z":1,"weights":[[0.5,0.5,0.5]]}"#;
        assert!(PriorMatrix::from_json(unnormalized).is_err());
    }

    #[test]
    fn uniform_row_sums_exactly_to_one() {
        let row = PriorWeights::uniform(8);
        assert_eq!(row.as_slice().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn random_rows_are_seeded() {
        let names: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let a = PriorMatrix::random(names.clone(), 4, 3, 7).unwrap();
        assert_eq!(a, PriorMatrix::random(names.clone(), 4, 3, 7).unwrap());
        assert_ne!(a, PriorMatrix::random(names, 4, 3, 8).unwrap());
        assert_ne!(a.row(0), a.row(1));
    }

    fn arb_simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn l1_of_importance_is_two_minus_gamma(s in arb_simplex(4), t in arb_simplex(3), gamma in 0.0f64..=1.0) {
            let raw = RawPrior { spatial: s, temporal: t, gamma };
            let l1: f64 = raw.importance_vector().iter().sum();
            prop_assert!((l1 - (2.0 - gamma)).abs() <= 1e-9);
            let w = assemble_weights(&raw);
            prop_assert!((w.as_slice()[0] - gamma / (2.0 - gamma)).abs() <= 1e-9);
            prop_assert!(PriorWeights::new(w.as_slice().to_vec()).is_ok());
        }

        #[test]
        fn parse_inverts_serialize(s in arb_simplex(4), t in arb_simplex(3), gamma in 0.0f64..=1.0) {
            let raw = RawPrior { spatial: s, temporal: t, gamma };
            let back = parse_response(&raw.to_json(), 4, 3).unwrap();
            prop_assert!((back.gamma - raw.gamma).abs() <= 1e-12);
            for (a, b) in back.spatial.iter().chain(&back.temporal).zip(raw.spatial.iter().chain(&raw.temporal)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
