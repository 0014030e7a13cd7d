//! JSON checkpoint layout: a metadata object plus a flat list of
//! `{ "name", "shape", "values" }` records.
//!
//! ```json
//! { "metadata": { ... }, "params": [ { "name": "cell.w_input", "shape": [64, 20], "values": [ ... ] } ] }
//! ```
//!
//! Values are written with shortest round-trip formatting and parsed with
//! correctly rounded conversion, so a save/load cycle is value-exact.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::array::RealArray;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamRecord {
    pub fn from_array(name: impl Into<String>, array: &RealArray) -> Self {
        Self {
            name: name.into(),
            shape: array.shape().to_vec(),
            values: array.data().to_vec(),
        }
    }

    pub fn to_array(&self) -> Result<RealArray> {
        RealArray::new(self.shape.clone(), self.values.clone())
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", self.name)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub metadata: M,
    pub params: Vec<ParamRecord>,
}

impl<M: Serialize + DeserializeOwned> Checkpoint<M> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Look up a record by name and check its shape.
    pub fn array(&self, name: &str, shape: &[usize]) -> Result<RealArray> {
        let rec = self
            .params
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        if rec.shape != shape {
            return Err(Error::Checkpoint(format!(
                "`{name}` has shape {:?}, expected {shape:?}",
                rec.shape
            )));
        }
        rec.to_array()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_round_trip_is_exact(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..40)) {
            let arr = RealArray::vector(values);
            let ck = Checkpoint { metadata: "m".to_string(), params: vec![ParamRecord::from_array("w", &arr)] };
            let back: Checkpoint<String> = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            let got = back.array("w", arr.shape()).unwrap();
            for (a, b) in got.data().iter().zip(arr.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let ck = Checkpoint {
            metadata: (),
            params: vec![ParamRecord::from_array("w", &RealArray::zeros(&[2, 3]))],
        };
        assert!(ck.array("w", &[3, 2]).is_err());
        assert!(ck.array("v", &[2, 3]).is_err());
    }
}
