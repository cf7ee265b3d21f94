//! Network checkpoints: a JSON header next to a raw little-endian `f64` file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Affine, BayesianMdn, GruFrontEnd, MdnArchitecture};
use crate::error::{Error, Result};
use crate::features::GruFeaturizer;

const FORMAT: &str = "snpekit-mdn";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    architecture: MdnArchitecture,
    theta_scaling: Affine,
    input_scaling: Affine,
    /// `log`: the stored `phi_s` array holds `ln φ_s`.
    phi_s_encoding: String,
    gru: Option<GruFeaturizer>,
    binary: String,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    offset: usize,
    len: usize,
}

/// Write `<stem>.json` and `<stem>.bin` into `dir`; returns the header path.
pub fn save_checkpoint(mdn: &BayesianMdn, dir: &Path, stem: &str) -> Result<PathBuf> {
    let mut arrays = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    let mut push = |name: &str, v: &[f64]| {
        arrays.push(ArrayEntry { name: name.into(), offset: data.len(), len: v.len() });
        data.extend_from_slice(v);
    };
    push("phi_m", &mdn.mean);
    push("phi_s", &mdn.log_std);
    push("imputation", &mdn.imputation);
    if let Some(fe) = &mdn.front_end {
        push("gru", &fe.weights);
    }
    let bin_name = format!("{stem}.bin");
    let header = Header {
        format: FORMAT.into(),
        version: 1,
        architecture: mdn.arch.clone(),
        theta_scaling: mdn.theta_scaling.clone(),
        input_scaling: mdn.input_scaling.clone(),
        phi_s_encoding: "log".into(),
        gru: mdn.front_end.as_ref().map(|f| f.gru),
        binary: bin_name.clone(),
        arrays,
    };
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(&bin_name), bytes)?;
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&header)?)?;
    Ok(path)
}

pub fn load_checkpoint(header_path: &Path) -> Result<BayesianMdn> {
    let header: Header = serde_json::from_str(&fs::read_to_string(header_path)?)?;
    if header.format != FORMAT || header.version != 1 {
        return Err(Error::Parse(format!("unsupported checkpoint format {} v{}", header.format, header.version)));
    }
    if header.phi_s_encoding != "log" {
        return Err(Error::Parse(format!("unknown phi_s encoding '{}'", header.phi_s_encoding)));
    }
    header.architecture.validate()?;
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(dir.join(&header.binary))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse("binary checkpoint length is not a multiple of 8".into()));
    }
    let data: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    let get = |name: &str, expected: usize| -> Result<Vec<f64>> {
        let e = header.arrays.iter().find(|a| a.name == name).ok_or_else(|| Error::Parse(format!("checkpoint lacks array '{name}'")))?;
        if e.len != expected || e.offset + e.len > data.len() {
            return Err(Error::Parse(format!("array '{name}' has length {} (expected {expected})", e.len)));
        }
        Ok(data[e.offset..e.offset + e.len].to_vec())
    };
    let arch = header.architecture;
    let nw = arch.n_weights();
    let front_end = match header.gru {
        Some(gru) => Some(GruFrontEnd { gru, weights: get("gru", gru.n_params())? }),
        None => None,
    };
    Ok(BayesianMdn {
        mean: get("phi_m", nw)?,
        log_std: get("phi_s", nw)?,
        imputation: get("imputation", arch.input_dim)?,
        theta_scaling: header.theta_scaling,
        input_scaling: header.input_scaling,
        arch,
        front_end,
    })
}
