//! On-disk formats: the binary parameter container and CSV files tagged with a config hash.
//!
//! Container layout: 8-byte magic, u64 LE header length, UTF-8 JSON header, then the
//! arrays listed in `header.arrays` as row-major little-endian f64, back to back.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::network::{ActivationSpec, InnerLayer, NetworkParams};
use crate::training::TrainedModel;

const MAGIC: &[u8; 8] = b"QFEATBN1";
const HASH_PREFIX: &str = "# config_hash=";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

pub struct NamedArray<'a> {
    pub name: &'a str,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_container(path: &Path, mut header: Value, arrays: &[NamedArray<'_>]) -> Result<()> {
    let entries: Vec<ArrayEntry> =
        arrays.iter().map(|a| ArrayEntry { name: a.name.to_string(), shape: a.shape.clone() }).collect();
    header
        .as_object_mut()
        .ok_or_else(|| Error::InvalidArgument("container header must be a JSON object".into()))?
        .insert("arrays".into(), serde_json::to_value(&entries)?);
    let head = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(head.len() as u64).to_le_bytes())?;
    w.write_all(&head)?;
    for a in arrays {
        if a.data.len() != a.shape.iter().product::<usize>() {
            return Err(Error::InvalidArgument(format!("array {} does not match its shape", a.name)));
        }
        for v in &a.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(Value, Vec<(ArrayEntry, Vec<f64>)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidArgument("not a parameter container".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut head = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut head)?;
    let header: Value = serde_json::from_slice(&head)?;
    let entries: Vec<ArrayEntry> = serde_json::from_value(header["arrays"].clone())?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let n: usize = e.shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((e, data));
    }
    Ok((header, out))
}

fn params_header(p: &NetworkParams) -> Value {
    json!({
        "d": p.d(),
        "m1": p.m1(),
        "m2": p.m2(),
        "epsilon": p.epsilon,
        "seed": p.seed,
        "spec": p.spec(),
    })
}

fn params_arrays(p: &NetworkParams) -> Vec<NamedArray<'static>> {
    vec![
        NamedArray { name: "a", shape: vec![p.m1()], data: p.a.to_vec() },
        NamedArray { name: "W", shape: vec![p.m1(), p.m2()], data: p.w.iter().copied().collect() },
        NamedArray { name: "b", shape: vec![p.m1()], data: p.b.to_vec() },
        NamedArray { name: "V", shape: vec![p.m2(), p.d()], data: p.inner.v().iter().copied().collect() },
    ]
}

pub fn save_params(p: &NetworkParams, path: &Path) -> Result<()> {
    write_container(path, params_header(p), &params_arrays(p))
}

fn take(arrays: &[(ArrayEntry, Vec<f64>)], name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    arrays
        .iter()
        .find(|(e, _)| e.name == name)
        .map(|(e, d)| (e.shape.clone(), d.clone()))
        .ok_or_else(|| Error::InvalidArgument(format!("container lacks array {name}")))
}

fn to_2d(shape: Vec<usize>, data: Vec<f64>) -> Result<Array2<f64>> {
    if shape.len() != 2 {
        return Err(Error::InvalidArgument("expected a matrix".into()));
    }
    Array2::from_shape_vec((shape[0], shape[1]), data).map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn load_params(path: &Path) -> Result<NetworkParams> {
    let (header, arrays) = read_container(path)?;
    let spec: ActivationSpec = serde_json::from_value(header["spec"].clone())?;
    let (_, a) = take(&arrays, "a")?;
    let (_, b) = take(&arrays, "b")?;
    let (ws, w) = take(&arrays, "W")?;
    let (vs, v) = take(&arrays, "V")?;
    Ok(NetworkParams {
        a: Array1::from(a),
        w: to_2d(ws, w)?,
        b: Array1::from(b),
        inner: InnerLayer::new(to_2d(vs, v)?, spec)?,
        epsilon: header["epsilon"].as_f64().unwrap_or(0.0),
        seed: header["seed"].as_u64().unwrap_or(0),
    })
}

/// Parameters of a trained model: θ⁽⁰⁾ with the re-initialized biases and the trained a,
/// plus the calibrated η and the chosen λ₂ in the header.
pub fn save_model(theta0: &NetworkParams, model: &TrainedModel, path: &Path) -> Result<()> {
    let mut header = params_header(theta0);
    header["eta"] = json!(model.eta());
    header["lambda2"] = json!(model.lambda2);
    header["representation"] = serde_json::to_value(model.features.representation)?;
    let mut arrays = params_arrays(theta0);
    arrays[2].data = model.features.b.to_vec();
    arrays.push(NamedArray { name: "a_trained", shape: vec![model.a.len()], data: model.a.to_vec() });
    write_container(path, header, &arrays)
}

/// Writes rows as CSV under a leading `# config_hash=` comment line.
pub fn write_csv<T: Serialize>(path: &Path, config_hash: &str, rows: &[T]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{HASH_PREFIX}{config_hash}")?;
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with an explicit header even when there are no rows.
pub fn write_csv_with_header<T: Serialize>(path: &Path, config_hash: &str, header: &[&str], rows: &[T]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{HASH_PREFIX}{config_hash}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv_hash(path: &Path) -> Result<Option<String>> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    Ok(line.trim_end().strip_prefix(HASH_PREFIX).map(str::to_string))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Fails if `dir` holds outputs written under a different config hash.
pub fn check_dir_hash(dir: &Path, config_hash: &str) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    let manifest = dir.join("manifest.json");
    if manifest.exists() {
        let v: Value = serde_json::from_str(&fs::read_to_string(&manifest)?)?;
        if v["config_hash"].as_str() != Some(config_hash) {
            return Err(Error::Config(format!(
                "{} holds outputs of another config (hash {}); refusing to mix",
                dir.display(),
                v["config_hash"].as_str().unwrap_or("?")
            )));
        }
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            if let Some(h) = read_csv_hash(&path)? {
                if h != config_hash {
                    return Err(Error::Config(format!(
                        "{} was written by another config (hash {h}); refusing to mix",
                        path.display()
                    )));
                }
            }
        }
    }
    Ok(())
}
