use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Catalogs, ModelState};
use crate::error::{Error, Result};
use crate::matrix::Index;

pub const CHECKPOINT_FORMAT: &str = "trajcf-ncf/1";

/// Serialized model: hyperparameters, catalogs and flattened parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub users: Vec<String>,
    pub pois: Vec<String>,
    pub types: Vec<String>,
    pub column_types: Vec<String>,
    pub state: ModelState,
}

impl Checkpoint {
    pub fn new(state: &ModelState, catalogs: &Catalogs, column_types: &[String]) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            users: catalogs.users.ids().to_vec(),
            pois: catalogs.pois.ids().to_vec(),
            types: catalogs.types.ids().to_vec(),
            column_types: column_types.to_vec(),
            state: state.clone(),
        }
    }

    pub fn catalogs(&self) -> Catalogs {
        Catalogs {
            users: Index::new(self.users.iter().cloned()),
            pois: Index::new(self.pois.iter().cloned()),
            types: Index::new(self.types.iter().cloned()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` (expected `{CHECKPOINT_FORMAT}`)",
                self.format
            )));
        }
        let s = &self.state;
        if (s.n_users, s.n_pois, s.n_types) != (self.users.len(), self.pois.len(), self.types.len())
            || self.column_types.len() != self.pois.len()
        {
            return Err(Error::Checkpoint("catalog sizes do not match the model".into()));
        }
        s.hp.validate()?;
        s.check_shapes()
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string_pretty(checkpoint)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)?;
    checkpoint.validate()?;
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ncf::{init_model, HyperParams};

    fn sample() -> Checkpoint {
        let hp = HyperParams {
            embed_dim: 3,
            mlp_layers: vec![4],
            seed: 5,
            ..HyperParams::default()
        };
        let state = init_model(&hp, 2, 3, 1).unwrap();
        let catalogs = Catalogs {
            users: Index::new(["a", "b"]),
            pois: Index::new(["p", "q", "r"]),
            types: Index::new(["t"]),
        };
        Checkpoint::new(&state, &catalogs, &vec!["t".to_string(); 3])
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let ckpt = sample();
        save_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn rejects_wrong_format_and_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");

        let mut ckpt = sample();
        ckpt.format = "other/9".into();
        save_checkpoint(&path, &ckpt).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        let mut ckpt = sample();
        ckpt.state.params.poi.pop();
        save_checkpoint(&path, &ckpt).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
