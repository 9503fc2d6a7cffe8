use std::collections::BTreeMap;
use std::io::{Read, Write};

use hotspot_nn::Layer;
use sha2::{Digest, Sha256};

use super::{Architecture, BodyKind, Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 of the config's canonical JSON form.
pub fn config_digest(config: &ModelConfig) -> [u8; 32] {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).into()
}

fn arch_code(a: Architecture) -> u8 {
    Architecture::ALL.iter().position(|&x| x == a).expect("listed") as u8
}

fn body_code(b: BodyKind) -> u8 {
    BodyKind::ALL.iter().position(|&x| x == b).expect("listed") as u8
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| Error::data("checkpoint truncated"))?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(get::<4>(r)?))
}

/// Header (magic, version, architecture, body, config digest, count scale),
/// then every parameter and buffer as name, shape and little-endian `f32`s.
pub fn save_checkpoint(mut sink: impl Write, model: &mut Model) -> Result<()> {
    sink.write_all(&CHECKPOINT_MAGIC)?;
    put_u32(&mut sink, CHECKPOINT_VERSION)?;
    sink.write_all(&[arch_code(model.config.architecture), body_code(model.config.body)])?;
    sink.write_all(&config_digest(&model.config))?;
    sink.write_all(&model.count_scale.unwrap_or(f64::NAN).to_le_bytes())?;
    let mut params = Vec::new();
    model.net.visit_params(&mut |name, p| params.push((name.to_string(), p.value.shape().to_vec(), p.value.data().to_vec())));
    put_u32(&mut sink, params.len() as u32)?;
    for (name, shape, values) in params {
        put_u32(&mut sink, name.len() as u32)?;
        sink.write_all(name.as_bytes())?;
        put_u32(&mut sink, shape.len() as u32)?;
        for d in shape {
            put_u32(&mut sink, d as u32)?;
        }
        let mut buf = Vec::with_capacity(values.len() * 4);
        for v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        sink.write_all(&buf)?;
    }
    sink.flush()?;
    Ok(())
}

/// Rebuild a model for `config` and load its weights. Fails unless the file
/// was written for an identical config.
pub fn load_checkpoint(mut source: impl Read, config: ModelConfig) -> Result<Model> {
    if get::<4>(&mut source)? != CHECKPOINT_MAGIC {
        return Err(Error::data("not a model checkpoint (bad magic)"));
    }
    let version = get_u32(&mut source)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {version}")));
    }
    let [arch, body] = get::<2>(&mut source)?;
    if arch != arch_code(config.architecture) || body != body_code(config.body) {
        return Err(Error::config("checkpoint was written for a different architecture or body"));
    }
    if get::<32>(&mut source)? != config_digest(&config) {
        return Err(Error::config("checkpoint config digest does not match the supplied config"));
    }
    let scale = f64::from_le_bytes(get::<8>(&mut source)?);
    let n = get_u32(&mut source)? as usize;
    let mut blobs = BTreeMap::new();
    for _ in 0..n {
        let len = get_u32(&mut source)? as usize;
        let mut name = vec![0u8; len];
        source.read_exact(&mut name).map_err(|_| Error::data("checkpoint truncated"))?;
        let name = String::from_utf8(name).map_err(|_| Error::data("parameter name is not UTF-8"))?;
        let rank = get_u32(&mut source)? as usize;
        let shape = (0..rank).map(|_| get_u32(&mut source).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let values = (0..count).map(|_| get::<4>(&mut source).map(|b| f32::from_le_bytes(b) as f64)).collect::<Result<Vec<_>>>()?;
        blobs.insert(name, (shape, values));
    }
    let mut model = Model::build(config)?;
    model.count_scale = (!scale.is_nan()).then_some(scale);
    let mut problem = None;
    let mut used = 0;
    model.net.visit_params(&mut |name, p| {
        match blobs.get(name) {
            Some((shape, values)) if shape.as_slice() == p.value.shape() => {
                p.value.data_mut().copy_from_slice(values);
                used += 1;
            }
            Some((shape, _)) => {
                problem.get_or_insert(format!("`{name}` has shape {shape:?}, model expects {:?}", p.value.shape()));
            }
            None => {
                problem.get_or_insert(format!("checkpoint lacks `{name}`"));
            }
        }
    });
    if let Some(msg) = problem {
        return Err(Error::data(msg));
    }
    if used != blobs.len() {
        return Err(Error::data(format!("checkpoint holds {} parameters, model has {used}", blobs.len())));
    }
    Ok(model)
}
