//! Tensor files: the line `SATFORGE1`, one `name dims...` line per tensor,
//! a blank line, then every tensor's values as little-endian `f32` in
//! header order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use satforge_core::conditioning::ConditioningSpec;
use satforge_core::nn::{Mlp, MlpConfig};
use satforge_core::trainer::{AcousticModel, EmbeddingPrep};
use satforge_core::Matrix;

use crate::error::{Error, Result};

pub const MAGIC: &str = "SATFORGE1";
const PREP_MEAN: &str = "prep.mean";
const PREP_PROJECTION: &str = "prep.projection";

pub type Tensors = Vec<(String, Matrix<f32>)>;

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Matrix<f32>)]) -> std::io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    for (name, m) in tensors {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("tensor name `{name}` is empty or contains whitespace"),
            ));
        }
        writeln!(w, "{name} {} {}", m.rows(), m.cols())?;
    }
    writeln!(w)?;
    for (_, m) in tensors {
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_tensors<R: Read>(r: R, path: &Path) -> Result<Tensors> {
    let bad = |msg: String| Error::format(path, msg);
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line).map_err(Error::io(path))?;
    if line.trim_end_matches('\n') != MAGIC {
        return Err(bad(format!("missing `{MAGIC}` magic line")));
    }
    let mut shapes = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(Error::io(path))? == 0 {
            return Err(bad("header is not terminated by a blank line".into()));
        }
        let l = line.trim_end_matches('\n');
        if l.is_empty() {
            break;
        }
        let fields: Vec<&str> = l.split(' ').collect();
        let dims: Vec<usize> = fields[1..]
            .iter()
            .map(|d| d.parse().map_err(|_| bad(format!("bad dimension in `{l}`"))))
            .collect::<Result<_>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(bad(format!("expected 1 or 2 dimensions in `{l}`"))),
        };
        shapes.push((fields[0].to_string(), rows, cols));
    }
    let mut out = Vec::with_capacity(shapes.len());
    for (name, rows, cols) in shapes {
        let mut bytes = vec![0u8; rows * cols * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| bad(format!("truncated data for tensor `{name}`")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        out.push((name, Matrix::new(rows, cols, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(Error::io(path))? != 0 {
        return Err(bad("trailing bytes after the last tensor".into()));
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[(String, Matrix<f32>)]) -> Result<()> {
    let f = File::create(path).map_err(Error::io(path))?;
    write_tensors(BufWriter::new(f), tensors).map_err(Error::io(path))
}

pub fn load_tensors(path: &Path) -> Result<Tensors> {
    let f = File::open(path).map_err(Error::io(path))?;
    read_tensors(f, path)
}

/// Every tensor of `model`, in parameter-store order, then its embedding reduction.
pub fn model_tensors(model: &AcousticModel) -> Tensors {
    let mut out: Tensors = model
        .mlp
        .store()
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    if let Some(p) = &model.prep {
        out.push((PREP_MEAN.into(), Matrix::row_vector(&p.mean)));
        out.push((PREP_PROJECTION.into(), p.projection.clone()));
    }
    out
}

/// Everything besides the tensors needed to rebuild a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArch {
    pub mlp: MlpConfig,
    /// Conditioning and the embedding width it consumes.
    pub conditioning: Option<(ConditioningSpec, usize)>,
    pub config_fingerprint: u64,
}

pub fn restore_model(arch: &ModelArch, tensors: Tensors, path: &Path) -> Result<AcousticModel> {
    let mut mlp = Mlp::<f32>::new(arch.mlp.clone(), 0)?;
    if let Some((spec, dim)) = &arch.conditioning {
        mlp = mlp.with_conditioning(spec, *dim, 0)?;
    }
    let mut seen = vec![false; mlp.store().len()];
    let (mut mean, mut projection) = (None, None);
    for (name, value) in tensors {
        match name.as_str() {
            PREP_MEAN => mean = Some(value),
            PREP_PROJECTION => projection = Some(value),
            _ => {
                let id = mlp
                    .store()
                    .find(&name)
                    .ok_or_else(|| Error::format(path, format!("unexpected tensor `{name}`")))?;
                let slot = mlp.store_mut().get_mut(id);
                if (slot.rows(), slot.cols()) != (value.rows(), value.cols()) {
                    return Err(Error::format(
                        path,
                        format!(
                            "tensor `{name}` is {}x{}, model expects {}x{}",
                            value.rows(),
                            value.cols(),
                            slot.rows(),
                            slot.cols()
                        ),
                    ));
                }
                *slot = value;
                seen[id.index()] = true;
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let name = &mlp.store().iter().nth(i).expect("in range").name;
        return Err(Error::format(path, format!("tensor `{name}` is missing")));
    }
    let prep = match (mean, projection) {
        (Some(m), Some(p)) => Some(EmbeddingPrep {
            mean: m.data().to_vec(),
            projection: p,
        }),
        (None, None) => None,
        _ => return Err(Error::format(path, "embedding reduction is incomplete")),
    };
    Ok(AcousticModel {
        mlp,
        prep,
        config_fingerprint: arch.config_fingerprint,
    })
}

pub fn save_model(path: &Path, model: &AcousticModel) -> Result<()> {
    save_tensors(path, &model_tensors(model))
}

pub fn load_model(path: &Path, arch: &ModelArch) -> Result<AcousticModel> {
    restore_model(arch, load_tensors(path)?, path)
}
