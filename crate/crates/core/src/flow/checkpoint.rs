//! Flow checkpoint files: a versioned JSON header plus the parameter vector
//! as base64-encoded little-endian 64-bit floats. Loading a saved model
//! reproduces every density bit-exactly.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{FlowLayout, FlowModel};
use crate::env::RobotKind;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Optional provenance carried alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub robot: Option<RobotKind>,
    pub epochs_trained: Option<usize>,
    pub best_val_nll: Option<f64>,
    pub train_seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    layout: FlowLayout,
    meta: CheckpointMeta,
    params_b64: String,
}

impl FlowModel {
    pub fn to_checkpoint_string(&self) -> String {
        let mut bytes = Vec::with_capacity(self.params().len() * 8);
        for p in self.params() {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            layout: self.layout().clone(),
            meta: self.meta.clone(),
            params_b64: BASE64.encode(bytes),
        };
        serde_json::to_string(&file).expect("checkpoint serialization cannot fail")
    }

    pub fn from_checkpoint_string(text: &str, origin: &Path) -> Result<FlowModel> {
        let corrupt = |reason: &str| Error::CorruptFile {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| corrupt(&format!("bad header: {e}")))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(corrupt(&format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        let bytes = BASE64
            .decode(file.params_b64.as_bytes())
            .map_err(|e| corrupt(&format!("bad parameter encoding: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(corrupt("parameter payload is not a whole number of floats"));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut model = FlowModel::new(file.layout, 0);
        if params.len() != model.param_count() {
            return Err(corrupt(&format!(
                "parameter count {} does not match layout ({})",
                params.len(),
                model.param_count()
            )));
        }
        model.params_mut().copy_from_slice(&params);
        model.meta = file.meta;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<FlowModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FlowModel::from_checkpoint_string(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Config;
    use crate::flow::ConditioningContext;

    #[test]
    fn round_trip_is_bit_exact() {
        let layout = FlowLayout {
            dim: 2,
            blocks: 4,
            hidden: vec![8],
            ctx_len: 9,
            scale_clamp: 2.0,
            boundary_eps: 1e-4,
        };
        let mut model = FlowModel::new(layout, 3);
        let mut rng = crate::seed::rng(17);
        use rand::Rng;
        for p in model.params_mut() {
            *p = rng.gen::<f64>() * 2.0 - 1.0;
        }
        model.meta.epochs_trained = Some(12);

        let text = model.to_checkpoint_string();
        let back = FlowModel::from_checkpoint_string(&text, Path::new("mem")).unwrap();
        assert_eq!(model, back);
        assert_eq!(text, back.to_checkpoint_string());

        let ctx = ConditioningContext::with_raw_omega(vec![0.1, 0.2, 0.3], None, None);
        let q = Config::new(vec![0.25, 0.75]);
        // Bit-exact parameters imply bit-exact densities.
        assert_eq!(
            model.log_prob(&q, &ctx).to_bits(),
            back.log_prob(&q, &ctx).to_bits()
        );
    }

    #[test]
    fn corrupt_payload_is_reported() {
        let err = FlowModel::from_checkpoint_string("{not json", Path::new("x.ckpt"));
        assert!(matches!(err, Err(Error::CorruptFile { .. })));
    }
}
