//! `modal-v1` text format: header, one line per node, then frequencies.
//!
//! ```text
//! modal-v1 <n_nodes> <n_modes> <normalised:0|1>
//! <x> <y> <mask:0|1> <phi_1> ... <phi_K>
//! ...
//! freqs <f_1> ... <f_K>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::ModalModel;
use crate::{Error, Result};

pub fn save(model: &ModalModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "modal-v1 {} {} {}",
        model.n_nodes(),
        model.n_modes(),
        if model.normalised { 1 } else { 0 }
    )
    .unwrap();
    for (i, &(x, y)) in model.node_coords.iter().enumerate() {
        write!(out, "{} {} {}", x, y, if model.placement_mask[i] { 1 } else { 0 }).unwrap();
        for k in 0..model.n_modes() {
            write!(out, " {}", model.mode_shapes[(i, k)]).unwrap();
        }
        out.push('\n');
    }
    out.push_str("freqs");
    for f in &model.frequencies {
        write!(out, " {}", f).unwrap();
    }
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_f64(tok: &str, what: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::MalformedModalData(format!("bad {what}: {tok:?}")))
}

pub fn load(path: &Path) -> Result<ModalModel> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedModalData("empty file".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "modal-v1" {
        return Err(Error::MalformedModalData(format!(
            "malformed header: {header:?}"
        )));
    }
    let n_nodes: usize = toks[1]
        .parse()
        .map_err(|_| Error::MalformedModalData(format!("bad node count {:?}", toks[1])))?;
    let n_modes: usize = toks[2]
        .parse()
        .map_err(|_| Error::MalformedModalData(format!("bad mode count {:?}", toks[2])))?;
    let normalised = match toks[3] {
        "0" => false,
        "1" => true,
        other => {
            return Err(Error::MalformedModalData(format!(
                "normalised flag must be 0 or 1, got {other:?}"
            )))
        }
    };

    let mut node_coords = Vec::with_capacity(n_nodes);
    let mut placement_mask = Vec::with_capacity(n_nodes);
    let mut shapes = DMatrix::zeros(n_nodes, n_modes);
    let mut frequencies = Vec::new();
    let mut row = 0usize;
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("freqs") {
            for tok in rest.split_whitespace() {
                frequencies.push(parse_f64(tok, "frequency")?);
            }
            continue;
        }
        if row >= n_nodes {
            return Err(Error::MalformedModalData(format!(
                "row-count mismatch: more than {n_nodes} node lines"
            )));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 + n_modes {
            return Err(Error::MalformedModalData(format!(
                "node line {} has {} fields, expected {}",
                row + 1,
                toks.len(),
                3 + n_modes
            )));
        }
        node_coords.push((parse_f64(toks[0], "x")?, parse_f64(toks[1], "y")?));
        placement_mask.push(match toks[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::MalformedModalData(format!(
                    "mask must be 0 or 1, got {other:?}"
                )))
            }
        });
        for k in 0..n_modes {
            shapes[(row, k)] = parse_f64(toks[3 + k], "mode shape")?;
        }
        row += 1;
    }
    if row != n_nodes {
        return Err(Error::MalformedModalData(format!(
            "row-count mismatch: {row} node lines, header says {n_nodes}"
        )));
    }
    if frequencies.len() != n_modes {
        return Err(Error::MalformedModalData(format!(
            "{} frequencies, header says {n_modes}",
            frequencies.len()
        )));
    }

    let mut model = ModalModel {
        node_coords,
        mode_shapes: shapes,
        frequencies,
        placement_mask,
        normalised,
    };
    if !normalised {
        model.normalise();
    }
    model.validate()?;
    Ok(model)
}
