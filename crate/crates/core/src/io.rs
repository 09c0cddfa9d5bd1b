//! File formats.
//!
//! JSON envelopes carry a schema version, a kind tag, shape information and
//! a provenance block; CSV files carry bulk numbers with a header row.
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact. Every file is written to a temporary sibling and renamed into
//! place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dynamics::ReachCloud;
use crate::error::{Error, Result};
use crate::geometry::{Direction, DirectionSet, PointCloud, SupportFunction, SupportSamples};
use crate::isnn::IsnnModel;
use crate::qp::MaxAffineModel;
use crate::sampling::InputPathEnsemble;

pub const SCHEMA_VERSION: u64 = 1;

/// Where an artifact came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Free-form parameters (model name, time, noise level, ...).
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
}

impl Provenance {
    pub fn new(generator: impl Into<String>, seed: Option<u64>) -> Self {
        Provenance { generator: generator.into(), seed, params: Map::new() }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.params.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty JSON, written atomically.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes a CSV with the given header; cells are preformatted strings.
pub fn write_csv_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("CSV buffer: {e}")))?;
    write_atomic(path, &bytes)
}

/// Writes a purely numeric CSV.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    write_csv_rows(path, header, rows.iter().map(|r| r.iter().map(|&v| fmt_f64(v)).collect()))
}

/// Reads a numeric CSV, returning the header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::invalid(format!("{}: line {}: not a number: {cell:?}", path.display(), line + 2))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(Error::invalid(format!(
                "{}: line {}: expected {} columns, found {}",
                path.display(),
                line + 2,
                header.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn envelope(kind: &str, dim: usize, count: usize, provenance: &Provenance, data: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "dim": dim,
        "count": count,
        "provenance": provenance,
        "data": data,
    })
}

fn check_header(v: &Value, kind: &str, path: &Path) -> Result<()> {
    match v.get("schema_version").and_then(Value::as_u64) {
        Some(SCHEMA_VERSION) => {}
        Some(other) => {
            return Err(Error::Schema(format!("{}: schema version {other} (supported: {SCHEMA_VERSION})", path.display())))
        }
        None => return Err(Error::Schema(format!("{}: missing schema_version", path.display()))),
    }
    match v.get("kind").and_then(Value::as_str) {
        Some(k) if k == kind => Ok(()),
        Some(k) => Err(Error::Schema(format!("{}: expected kind {kind:?}, found {k:?}", path.display()))),
        None => Err(Error::Schema(format!("{}: missing kind", path.display()))),
    }
}

fn take<T: DeserializeOwned>(v: &mut Value, key: &str, path: &Path) -> Result<T> {
    let field = v
        .get_mut(key)
        .map(Value::take)
        .ok_or_else(|| Error::Schema(format!("{}: missing field {key:?}", path.display())))?;
    Ok(serde_json::from_value(field)?)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Point cloud as JSON envelope, or CSV (`x1..xd`) when the extension is `.csv`.
pub fn save_point_cloud(path: &Path, cloud: &PointCloud, provenance: &Provenance) -> Result<()> {
    if is_csv(path) {
        return write_csv(path, &numbered("x", cloud.dim()), cloud.points());
    }
    let data = serde_json::to_value(cloud)?;
    write_json(path, &envelope("point_cloud", cloud.dim(), cloud.len(), provenance, data))
}

pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    if is_csv(path) {
        let (_, rows) = read_csv(path)?;
        return PointCloud::new(rows);
    }
    let mut v = read_json(path)?;
    if v.get("kind").and_then(Value::as_str) == Some("reach_cloud") {
        return Ok(load_reach_cloud(path)?.cloud);
    }
    check_header(&v, "point_cloud", path)?;
    take(&mut v, "data", path)
}

/// Reach cloud: a point cloud whose provenance records time, model and seed.
pub fn save_reach_cloud(path: &Path, rc: &ReachCloud, provenance: &Provenance) -> Result<()> {
    if is_csv(path) {
        return save_point_cloud(path, &rc.cloud, provenance);
    }
    let prov = provenance.clone().with("time", rc.time).with("model", &rc.model);
    let mut v = envelope("reach_cloud", rc.cloud.dim(), rc.cloud.len(), &prov, serde_json::to_value(&rc.cloud)?);
    v["time"] = json!(rc.time);
    v["model"] = json!(rc.model);
    v["seed"] = json!(rc.seed);
    write_json(path, &v)
}

pub fn load_reach_cloud(path: &Path) -> Result<ReachCloud> {
    let mut v = read_json(path)?;
    check_header(&v, "reach_cloud", path)?;
    Ok(ReachCloud {
        time: take(&mut v, "time", path)?,
        model: take(&mut v, "model", path)?,
        seed: take(&mut v, "seed", path)?,
        cloud: take(&mut v, "data", path)?,
    })
}

/// Support samples as JSON envelope, or CSV (`y1..yd,h`).
pub fn save_samples(path: &Path, s: &SupportSamples, provenance: &Provenance) -> Result<()> {
    if is_csv(path) {
        let mut header = numbered("y", s.dim());
        header.push("h".into());
        let rows: Vec<Vec<f64>> = s
            .directions()
            .iter()
            .zip(s.values())
            .map(|(y, &h)| y.coords().iter().copied().chain([h]).collect())
            .collect();
        return write_csv(path, &header, &rows);
    }
    let data = serde_json::to_value(s)?;
    write_json(path, &envelope("support_samples", s.dim(), s.len(), provenance, data))
}

pub fn load_samples(path: &Path) -> Result<SupportSamples> {
    if is_csv(path) {
        let (header, rows) = read_csv(path)?;
        if header.len() < 2 {
            return Err(Error::invalid(format!("{}: need direction columns and h", path.display())));
        }
        let d = header.len() - 1;
        let dirs = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                Direction::normalize(r[..d].to_vec())
                    .map_err(|e| Error::invalid(format!("{}: line {}: {e}", path.display(), i + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        return SupportSamples::new(DirectionSet::new(dirs)?, rows.iter().map(|r| r[d]).collect());
    }
    let mut v = read_json(path)?;
    check_header(&v, "support_samples", path)?;
    take(&mut v, "data", path)
}

/// Direction list from JSON (a `support_samples` envelope or a bare list)
/// or CSV (the leading columns are normalized).
pub fn load_directions(path: &Path) -> Result<DirectionSet> {
    if is_csv(path) {
        let (header, rows) = read_csv(path)?;
        let d = if header.last().is_some_and(|h| h == "h") { header.len() - 1 } else { header.len() };
        let dirs = rows
            .into_iter()
            .map(|r| Direction::normalize(r[..d].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        return DirectionSet::new(dirs);
    }
    let v = read_json(path)?;
    if v.get("kind").is_some() {
        return Ok(load_samples(path)?.directions().clone());
    }
    let raw: Vec<Vec<f64>> = serde_json::from_value(v)?;
    DirectionSet::new(raw.into_iter().map(Direction::normalize).collect::<Result<Vec<_>>>()?)
}

/// Ensemble as a JSON header at `path` plus a CSV body
/// (`path_id,t,u1..um`) next to it.
pub fn save_ensemble(path: &Path, e: &InputPathEnsemble, provenance: &Provenance) -> Result<PathBuf> {
    let body = path.with_extension("csv");
    let m = e.input_dim();
    let mut header = vec!["path_id".to_string(), "t".to_string()];
    header.extend(numbered("u", m));
    let rows = e.paths.iter().enumerate().flat_map(|(i, p)| {
        e.time_grid.iter().zip(p).map(move |(t, u)| {
            let mut row = vec![i.to_string(), fmt_f64(*t)];
            row.extend(u.iter().map(|&v| fmt_f64(v)));
            row
        })
    });
    write_csv_rows(&body, &header, rows)?;
    let v = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": "input_ensemble",
        "dim": m,
        "count": e.len(),
        "provenance": provenance,
        "bounds": e.bounds,
        "time_grid": e.time_grid,
        "length_scale": e.length_scale,
        "seed": e.seed,
        "body": body.file_name().map(|n| n.to_string_lossy().into_owned()),
    });
    write_json(path, &v)?;
    Ok(body)
}

pub fn load_ensemble(path: &Path) -> Result<InputPathEnsemble> {
    let mut v = read_json(path)?;
    check_header(&v, "input_ensemble", path)?;
    let count: usize = take(&mut v, "count", path)?;
    let time_grid: Vec<f64> = take(&mut v, "time_grid", path)?;
    let body_name: String = take(&mut v, "body", path)?;
    let body = path.with_file_name(body_name);
    let (header, rows) = read_csv(&body)?;
    let m = header.len().saturating_sub(2);
    let k = time_grid.len();
    if rows.len() != count * k {
        return Err(Error::invalid(format!("{}: expected {} rows, found {}", body.display(), count * k, rows.len())));
    }
    let mut paths = vec![Vec::with_capacity(k); count];
    for (r, row) in rows.iter().enumerate() {
        let (i, kk) = (r / k, r % k);
        if row[0] != i as f64 || row[1] != time_grid[kk] {
            return Err(Error::invalid(format!("{}: line {}: rows out of order", body.display(), r + 2)));
        }
        paths[i].push(row[2..2 + m].to_vec());
    }
    Ok(InputPathEnsemble {
        time_grid,
        bounds: take(&mut v, "bounds", path)?,
        length_scale: take(&mut v, "length_scale", path)?,
        seed: take(&mut v, "seed", path)?,
        paths,
    })
}

/// Either fitted regressor.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    MaxAffine(MaxAffineModel),
    Isnn(IsnnModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::MaxAffine(_) => "max_affine",
            Model::Isnn(_) => "isnn",
        }
    }

    /// Wall-clock fitting time recorded at training.
    pub fn seconds(&self) -> Option<f64> {
        match self {
            Model::MaxAffine(m) => m.diagnostics.as_ref().map(|d| d.seconds),
            Model::Isnn(m) => Some(m.training.seconds),
        }
    }
}

impl SupportFunction for Model {
    fn dim(&self) -> usize {
        match self {
            Model::MaxAffine(m) => m.dim(),
            Model::Isnn(m) => m.dim(),
        }
    }

    fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Model::MaxAffine(m) => m.eval(z),
            Model::Isnn(m) => m.eval(z),
        }
    }
}

pub fn save_model(path: &Path, model: &Model, provenance: &Provenance) -> Result<()> {
    let mut v = match model {
        Model::MaxAffine(m) => {
            let mut v = serde_json::to_value(m)?;
            v["d"] = json!(m.dim());
            v["n_y"] = json!(m.len());
            v
        }
        Model::Isnn(m) => serde_json::to_value(m)?,
    };
    v["schema_version"] = json!(SCHEMA_VERSION);
    v["kind"] = json!(model.kind());
    v["provenance"] = serde_json::to_value(provenance)?;
    write_json(path, &v)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut v = read_json(path)?;
    let kind = v.get("kind").and_then(Value::as_str).unwrap_or_default().to_string();
    match kind.as_str() {
        "max_affine" => {
            check_header(&v, "max_affine", path)?;
            let obj = v.as_object_mut().expect("checked object");
            for k in ["schema_version", "kind", "provenance", "d", "n_y"] {
                obj.remove(k);
            }
            let m: MaxAffineModel = serde_json::from_value(v)?;
            m.validate()?;
            Ok(Model::MaxAffine(m))
        }
        "isnn" => {
            check_header(&v, "isnn", path)?;
            let m = IsnnModel {
                arch: take(&mut v, "arch", path)?,
                params: take(&mut v, "params", path)?,
                training: take(&mut v, "training", path)?,
            };
            m.validate()?;
            Ok(Model::Isnn(m))
        }
        other => Err(Error::Schema(format!("{}: unknown model kind {other:?}", path.display()))),
    }
}
