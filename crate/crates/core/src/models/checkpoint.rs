//! Checkpoint files: `key=value` text header terminated by `end_header`,
//! followed by little-endian `f32` values of every parameter and then every
//! batch-norm buffer, in declaration order.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{EncoderConfig, EncoderKind, Model, ProjectionHeadConfig};
use crate::error::{Error, Result};

const MAGIC: &str = "hsissl-checkpoint 1";
const END: &str = "end_header";

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let enc = model.encoder_config();
    let mut header = format!(
        "{MAGIC}\nkind={}\ninput_bands={}\npatch_size={}\nwidths={}\nembedding_dim={}\nkernel_size={}\n",
        enc.kind.as_str(),
        enc.input_bands,
        enc.patch_size,
        join(&enc.widths),
        enc.embedding_dim,
        enc.kernel_size
    );
    if let Some(p) = model.projector_config() {
        header += &format!(
            "projector_hidden={}\nprojector_output={}\n",
            join(&p.hidden_dims),
            p.output_dim
        );
    }
    if let Some(g) = model.num_classes() {
        header += &format!("num_classes={g}\n");
    }
    let n_params: usize = model.params().iter().map(|p| p.value.len()).sum();
    let n_buffers: usize = model.buffers().iter().map(|b| b.value.len()).sum();
    header += &format!("param_values={n_params}\nbuffer_values={n_buffers}\n{END}\n");

    let mut bytes = header.into_bytes();
    bytes.reserve(4 * (n_params + n_buffers));
    let values = model
        .params()
        .iter()
        .map(|p| &p.value)
        .chain(model.buffers().iter().map(|b| &b.value));
    for v in values.flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn parse_list(path: &Path, key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::format(path, format!("bad value `{v}` for `{key}`")))
        })
        .collect()
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = format!("\n{END}\n");
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| Error::format(path, "missing end_header line"))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::format(path, "header is not UTF-8"))?;
    let payload = &bytes[split + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let mut kv = HashMap::new();
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("malformed header line `{line}`")))?;
        kv.insert(k.trim(), v.trim());
    }
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::format(path, format!("missing header key `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        let v = get(k)?;
        v.parse()
            .map_err(|_| Error::format(path, format!("bad value `{v}` for `{k}`")))
    };

    let kind = match get("kind")? {
        "conv1d" => EncoderKind::Conv1d,
        "conv2d" => EncoderKind::Conv2d,
        other => return Err(Error::format(path, format!("unknown encoder kind `{other}`"))),
    };
    let enc = EncoderConfig {
        kind,
        input_bands: num("input_bands")?,
        patch_size: num("patch_size")?,
        widths: parse_list(path, "widths", get("widths")?)?,
        embedding_dim: num("embedding_dim")?,
        kernel_size: num("kernel_size")?,
    };
    let mut model = Model::new(&enc, 0)?;
    if kv.contains_key("projector_hidden") {
        let p = ProjectionHeadConfig {
            hidden_dims: parse_list(path, "projector_hidden", get("projector_hidden")?)?,
            output_dim: num("projector_output")?,
        };
        model.attach_projector(&p, 0)?;
    }
    if kv.contains_key("num_classes") {
        model.attach_linear_head(num("num_classes")?)?;
    }

    let n_params: usize = model.params().iter().map(|p| p.value.len()).sum();
    let n_buffers: usize = model.buffers().iter().map(|b| b.value.len()).sum();
    if num("param_values")? != n_params || num("buffer_values")? != n_buffers {
        return Err(Error::format(
            path,
            "declared value counts do not match the architecture",
        ));
    }
    if payload.len() != 4 * (n_params + n_buffers) {
        return Err(Error::format(
            path,
            format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                4 * (n_params + n_buffers)
            ),
        ));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "payload contains non-finite values"));
    }
    let mut values = values.into_iter();
    for p in model.params_mut() {
        p.value.iter_mut().for_each(|v| *v = values.next().expect("length checked"));
    }
    for b in model.buffers_mut() {
        b.value.iter_mut().for_each(|v| *v = values.next().expect("length checked"));
    }
    Ok(model)
}
