//! Binary checkpoint container.
//!
//! Layout (little endian): magic `SSVAECKP`, format version `u32`, variant
//! byte, `pi_to_decoder` byte, `input_dim`, `latent_dim`, `num_classes`,
//! encoder and decoder width lists (length-prefixed `u32`s), then the
//! parameter count followed by each parameter as name (`u16` length + UTF-8),
//! rank byte, `u32` extents and raw `f32` values.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::Rng;

use super::{ModelSpec, SsVaeModel, Variant};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SSVAECKP";
pub const FORMAT_VERSION: u32 = 1;

fn variant_byte(v: Variant) -> u8 {
    match v {
        Variant::SemiSupervised => 0,
        Variant::Supervised => 1,
        Variant::Unsupervised => 2,
    }
}

fn byte_variant(b: u8) -> Result<Variant> {
    match b {
        0 => Ok(Variant::SemiSupervised),
        1 => Ok(Variant::Supervised),
        2 => Ok(Variant::Unsupervised),
        other => Err(Error::Checkpoint(format!("unknown variant tag {other}"))),
    }
}

pub fn encode(model: &SsVaeModel<f32>) -> Vec<u8> {
    let spec = model.spec();
    let mut buf = Vec::new();
    let w = &mut buf;
    // Writes into a Vec cannot fail.
    w.write_all(MAGIC).unwrap();
    w.write_u32::<LE>(FORMAT_VERSION).unwrap();
    w.write_u8(variant_byte(spec.variant)).unwrap();
    w.write_u8(spec.pi_to_decoder as u8).unwrap();
    for d in [spec.input_dim, spec.latent_dim, spec.num_classes] {
        w.write_u32::<LE>(d as u32).unwrap();
    }
    for widths in [&spec.encoder_widths, &spec.decoder_widths] {
        w.write_u32::<LE>(widths.len() as u32).unwrap();
        for &x in widths.iter() {
            w.write_u32::<LE>(x as u32).unwrap();
        }
    }
    let names = model.parameter_names();
    w.write_u32::<LE>(names.len() as u32).unwrap();
    for (name, p) in names.iter().zip(model.params()) {
        w.write_u16::<LE>(name.len() as u16).unwrap();
        w.write_all(name.as_bytes()).unwrap();
        w.write_u8(p.rank() as u8).unwrap();
        for &d in p.shape() {
            w.write_u32::<LE>(d as u32).unwrap();
        }
        for &v in p.data() {
            w.write_f32::<LE>(v).unwrap();
        }
    }
    buf
}

fn truncated(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated or unreadable checkpoint: {e}"))
}

/// The stored spec followed by named parameters in file order.
fn decode_parts(bytes: &[u8]) -> Result<(ModelSpec, Vec<(String, Tensor<f32>)>)> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LE>().map_err(truncated)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let variant = byte_variant(r.read_u8().map_err(truncated)?)?;
    let pi_to_decoder = r.read_u8().map_err(truncated)? != 0;
    let mut dim = || -> Result<usize> { Ok(r.read_u32::<LE>().map_err(truncated)? as usize) };
    let input_dim = dim()?;
    let latent_dim = dim()?;
    let num_classes = dim()?;
    let mut widths = || -> Result<Vec<usize>> {
        let n = r.read_u32::<LE>().map_err(truncated)? as usize;
        if n > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        (0..n)
            .map(|_| Ok(r.read_u32::<LE>().map_err(truncated)? as usize))
            .collect()
    };
    let encoder_widths = widths()?;
    let decoder_widths = widths()?;
    let spec = ModelSpec {
        variant,
        input_dim,
        encoder_widths,
        latent_dim,
        num_classes,
        decoder_widths,
        pi_to_decoder,
    };
    spec.validate()
        .map_err(|e| Error::Checkpoint(format!("stored spec invalid: {e}")))?;

    let count = r.read_u32::<LE>().map_err(truncated)? as usize;
    let mut params = Vec::with_capacity(count.min(256));
    for _ in 0..count {
        let len = r.read_u16::<LE>().map_err(truncated)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = r.read_u8().map_err(truncated)? as usize;
        let shape = (0..rank)
            .map(|_| Ok(r.read_u32::<LE>().map_err(truncated)? as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let remaining = bytes.len() - r.position() as usize;
        if numel.saturating_mul(4) > remaining {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {shape:?} needs {} bytes, {remaining} left",
                numel * 4
            )));
        }
        let mut data = vec![0f32; numel];
        r.read_f32_into::<LE>(&mut data).map_err(truncated)?;
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        params.push((name, tensor));
    }
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last parameter".into()));
    }
    Ok((spec, params))
}

/// Checks names and shapes against `spec`, listing every disagreement.
fn match_layout(spec: &ModelSpec, found: Vec<(String, Tensor<f32>)>) -> Result<SsVaeModel<f32>> {
    let expected = spec.parameter_layout();
    let mut problems = Vec::new();
    if expected.len() != found.len() {
        problems.push(format!(
            "expected {} parameters, found {}",
            expected.len(),
            found.len()
        ));
    }
    for ((name, shape), (got_name, got)) in expected.iter().zip(&found) {
        if name != got_name || shape.as_slice() != got.shape() {
            problems.push(format!(
                "expected {name} {shape:?}, found {got_name} {:?}",
                got.shape()
            ));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Checkpoint(problems.join("; ")));
    }
    SsVaeModel::from_parameters(spec.clone(), found.into_iter().map(|(_, t)| t).collect())
}

pub fn decode(bytes: &[u8]) -> Result<SsVaeModel<f32>> {
    let (spec, params) = decode_parts(bytes)?;
    match_layout(&spec, params)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save(model: &SsVaeModel<f32>, path: &Path) -> Result<()> {
    let bytes = encode(model);
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SsVaeModel<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint for use as `target`.
///
/// An identical spec loads as is. An EU checkpoint loads into the matching
/// SS spec via [`SsVaeModel::transfer_from_unsupervised`], with a fresh
/// class head drawn from `rng`. Anything else is a checkpoint error that
/// lists expected against found shapes.
pub fn load_as<R: Rng + ?Sized>(
    path: &Path,
    target: &ModelSpec,
    rng: &mut R,
) -> Result<SsVaeModel<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (spec, params) = decode_parts(&bytes)?;
    if &spec == target {
        return match_layout(&spec, params);
    }
    let eu_of_target = ModelSpec {
        variant: Variant::Unsupervised,
        ..target.clone()
    };
    if target.variant == Variant::SemiSupervised && spec == eu_of_target {
        let source = match_layout(&spec, params)?;
        return SsVaeModel::transfer_from_unsupervised(&source, target.clone(), rng);
    }
    match_layout(target, params)
}
