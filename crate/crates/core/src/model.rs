//! Model-parameter file: the client's FC-16 affine map, the server's tiled
//! FC-16 bias and FC-1 weights, and the client's decision constants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::{DecisionParams, Fc16Params};
use crate::error::{Error, Result};
use crate::params::BLOCK;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Row-major n x 16; absent means the features are already 16-vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_matrix: Option<Vec<Vec<f64>>>,
    pub fc16_bias: Vec<f64>,
    pub fc1_weights: Vec<f64>,
    pub fc1_bias: f64,
    pub threshold: f64,
}

impl ModelParams {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: Self = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.fc16()?;
        self.server()?;
        self.decision()?;
        Ok(())
    }

    pub fn fc16(&self) -> Result<Fc16Params> {
        let bias = to_block(&self.fc16_bias, "fc16_bias")?;
        match &self.a_matrix {
            None => Ok(Fc16Params::identity_with_bias(bias)),
            Some(rows) => {
                let n = rows.len();
                let mut flat = Vec::with_capacity(n * BLOCK);
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != BLOCK {
                        return Err(Error::Shape(format!("a_matrix row {i} has {} entries, expected {BLOCK}", row.len())));
                    }
                    flat.extend_from_slice(row);
                }
                Fc16Params::new(flat, n, bias)
            }
        }
    }

    pub fn server(&self) -> Result<ServerModelParams> {
        Ok(ServerModelParams {
            fc16_bias: to_block(&self.fc16_bias, "fc16_bias")?,
            fc1_weights: to_block(&self.fc1_weights, "fc1_weights")?,
        })
    }

    pub fn decision(&self) -> Result<DecisionParams> {
        DecisionParams::new(self.fc1_bias, self.threshold)
    }
}

/// What the server knows of the model: FC-16 bias and FC-1 weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerModelParams {
    pub fc16_bias: [f64; BLOCK],
    pub fc1_weights: [f64; BLOCK],
}

impl ServerModelParams {
    pub fn bias_tiled(&self, slot_count: usize) -> Vec<f64> {
        tile(&self.fc16_bias, slot_count)
    }

    pub fn fc1_tiled(&self, slot_count: usize) -> Vec<f64> {
        tile(&self.fc1_weights, slot_count)
    }
}

pub(crate) fn tile(block: &[f64; BLOCK], slot_count: usize) -> Vec<f64> {
    (0..slot_count).map(|i| block[i % BLOCK]).collect()
}

fn to_block(v: &[f64], name: &str) -> Result<[f64; BLOCK]> {
    if v.len() != BLOCK {
        return Err(Error::Shape(format!("{name} has {} entries, expected {BLOCK}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Shape(format!("{name} has non-finite entries")));
    }
    Ok(v.try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelParams {
        ModelParams {
            a_matrix: None,
            fc16_bias: vec![0.1; 16],
            fc1_weights: vec![-1.0; 16],
            fc1_bias: 2.0,
            threshold: 0.2,
        }
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        sample().save(&path).unwrap();
        assert_eq!(ModelParams::load(&path).unwrap(), sample());

        let mut bad = sample();
        bad.fc1_weights.pop();
        assert!(matches!(bad.validate(), Err(Error::Shape(_))));
        let mut bad = sample();
        bad.threshold = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = sample();
        bad.a_matrix = Some(vec![vec![0.0; 15]]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tiling_has_period_sixteen() {
        let s = sample().server().unwrap();
        let mut w = s.fc1_weights;
        w[3] = 7.0;
        let tiled = tile(&w, 64);
        assert_eq!(tiled.len(), 64);
        assert!(tiled.iter().enumerate().all(|(i, &x)| x == w[i % 16]));
        assert_eq!(s.bias_tiled(32)[17], 0.1);
    }
}
