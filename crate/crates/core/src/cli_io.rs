//! Station data ingestion, standardization, domain rescaling, the five-model
//! comparison on a real dataset, and table output.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh_fem::{assemble_fem, build_mesh, project, Rect, TriMesh};
use crate::mgrf_prior::Reformulation;
use crate::pc_prior::PcRhoPrior;
use crate::sampler::{run_chain, ChainOutput, McmcSettings, ModelConfig, ModelKind, Observations, SpatialDesign};
use crate::sparse_la::Ordering;

/// Which CSV columns hold which variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub station: Option<String>,
    pub x: String,
    pub y: String,
    /// Coordinates are longitude/latitude in degrees.
    pub lonlat: bool,
    pub response: String,
    pub covariates: Vec<String>,
    pub date: Option<String>,
    /// Keep only rows whose date column equals this value.
    pub date_filter: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            station: Some("station_id".into()),
            x: "longitude".into(),
            y: "latitude".into(),
            lonlat: true,
            response: "precipitation".into(),
            covariates: vec!["elevation".into(), "min_temperature".into()],
            date: Some("date".into()),
            date_filter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationDataset {
    pub station_ids: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub lonlat: bool,
    pub response_name: String,
    pub response: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// One column per covariate.
    pub covariates: Vec<Vec<f64>>,
    pub dates: Vec<Option<String>>,
    pub rows_read: usize,
    pub dropped: usize,
}

impl StationDataset {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "na" | "NaN" | "nan" | "null" | "-999")
}

pub fn ingest_csv(path: &Path, map: &ColumnMap) -> Result<StationDataset> {
    ingest_reader(std::fs::File::open(path)?, map)
}

/// Parse a delimited file. Rows with a missing value in a mapped column, or
/// with a non-matching date, are dropped and counted.
pub fn ingest_reader<R: Read>(reader: R, map: &ColumnMap) -> Result<StationDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| index.get(name).copied().ok_or_else(|| Error::MissingColumn(name.to_string()));
    let ix = col(&map.x)?;
    let iy = col(&map.y)?;
    let iresp = col(&map.response)?;
    let icov = map.covariates.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let istation = map.station.as_deref().map(col).transpose()?;
    let idate = map.date.as_deref().map(col).transpose()?;
    if map.date_filter.is_some() && idate.is_none() {
        return Err(Error::Config("date_filter needs a date column".into()));
    }

    let mut out = StationDataset {
        station_ids: vec![],
        coords: vec![],
        lonlat: map.lonlat,
        response_name: map.response.clone(),
        response: vec![],
        covariate_names: map.covariates.clone(),
        covariates: vec![Vec::new(); map.covariates.len()],
        dates: vec![],
        rows_read: 0,
        dropped: 0,
    };
    let (mut missing, mut filtered) = (0usize, 0usize);
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::UnparseableRow { line, reason: e.to_string() }
        })?;
        out.rows_read += 1;
        let line = record.position().map_or(out.rows_read + 1, |p| p.line() as usize);
        let date = idate.map(|i| record[i].to_string());
        if let (Some(want), Some(d)) = (&map.date_filter, &date) {
            if d != want {
                filtered += 1;
                continue;
            }
        }
        let numeric: Vec<(usize, &str)> =
            [(ix, map.x.as_str()), (iy, map.y.as_str()), (iresp, map.response.as_str())]
                .into_iter()
                .chain(icov.iter().zip(&map.covariates).map(|(&i, n)| (i, n.as_str())))
                .collect();
        if numeric.iter().any(|&(i, _)| is_missing(&record[i])) {
            missing += 1;
            continue;
        }
        let mut values = Vec::with_capacity(numeric.len());
        for (i, name) in numeric {
            let v: f64 = record[i].parse().map_err(|_| Error::UnparseableRow {
                line,
                reason: format!("column `{name}` has non-numeric value `{}`", &record[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::UnparseableRow { line, reason: format!("column `{name}` is not finite") });
            }
            values.push(v);
        }
        out.coords.push([values[0], values[1]]);
        out.response.push(values[2]);
        for (c, v) in out.covariates.iter_mut().zip(&values[3..]) {
            c.push(*v);
        }
        out.station_ids.push(istation.map_or_else(|| format!("{}", out.station_ids.len()), |i| record[i].to_string()));
        out.dates.push(date);
    }
    out.dropped = missing + filtered;
    if missing > 0 {
        log::info!("dropped {missing} rows with missing values");
    }
    if filtered > 0 {
        log::info!("dropped {filtered} rows outside the requested date");
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableTransform {
    pub mean: f64,
    pub sd: f64,
}

impl VariableTransform {
    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn back(&self, v: f64) -> f64 {
        v * self.sd + self.mean
    }
}

/// Recorded centring and scaling, response first, then covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub names: Vec<String>,
    pub transforms: Vec<VariableTransform>,
}

impl Standardization {
    pub fn get(&self, name: &str) -> Option<&VariableTransform> {
        self.names.iter().position(|n| n == name).map(|k| &self.transforms[k])
    }

    /// Undo the standardization of a dataset produced by [`standardize`].
    pub fn back_transform(&self, data: &StationDataset) -> StationDataset {
        let mut out = data.clone();
        let t = &self.transforms;
        out.response.iter_mut().for_each(|v| *v = t[0].back(*v));
        for (c, tr) in out.covariates.iter_mut().zip(&t[1..]) {
            c.iter_mut().for_each(|v| *v = tr.back(*v));
        }
        out
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Centre every variable and scale it to unit sample variance.
pub fn standardize(data: &StationDataset) -> Result<(StationDataset, Standardization)> {
    if data.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let mut out = data.clone();
    let mut names = vec![data.response_name.clone()];
    names.extend(data.covariate_names.iter().cloned());
    let mut transforms = Vec::with_capacity(names.len());
    let columns = std::iter::once(&mut out.response).chain(out.covariates.iter_mut());
    for (col, name) in columns.zip(&names) {
        let (mean, sd) = mean_sd(col);
        if !(sd > 1e-300) {
            return Err(Error::ZeroVariance(name.clone()));
        }
        let t = VariableTransform { mean, sd };
        col.iter_mut().for_each(|v| *v = t.forward(*v));
        transforms.push(t);
    }
    Ok((out, Standardization { names, transforms }))
}

const EARTH_RADIUS_KM: f64 = 6371.0;

/// Map from raw coordinates into the unit square: an optional
/// equirectangular projection followed by `(p − offset) · scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainMap {
    /// Projection centre `(lon, lat)` in degrees when the input is geographic.
    pub projection_centre: Option<[f64; 2]>,
    pub offset: [f64; 2],
    pub scale: f64,
}

impl DomainMap {
    pub fn identity() -> Self {
        Self { projection_centre: None, offset: [0.0, 0.0], scale: 1.0 }
    }

    fn project(&self, p: [f64; 2]) -> [f64; 2] {
        match self.projection_centre {
            None => p,
            Some([lon0, lat0]) => [
                EARTH_RADIUS_KM * (p[0] - lon0).to_radians() * lat0.to_radians().cos(),
                EARTH_RADIUS_KM * (p[1] - lat0).to_radians(),
            ],
        }
    }

    fn unproject(&self, q: [f64; 2]) -> [f64; 2] {
        match self.projection_centre {
            None => q,
            Some([lon0, lat0]) => [
                lon0 + (q[0] / (EARTH_RADIUS_KM * lat0.to_radians().cos())).to_degrees(),
                lat0 + (q[1] / EARTH_RADIUS_KM).to_degrees(),
            ],
        }
    }

    pub fn forward(&self, p: [f64; 2]) -> [f64; 2] {
        let q = self.project(p);
        [(q[0] - self.offset[0]) * self.scale, (q[1] - self.offset[1]) * self.scale]
    }

    pub fn inverse(&self, u: [f64; 2]) -> [f64; 2] {
        self.unproject([u[0] / self.scale + self.offset[0], u[1] / self.scale + self.offset[1]])
    }
}

/// Offset applied to the k-th repeat of a coordinate.
const TIE_JITTER: f64 = 1e-6;

/// Rescale coordinates isotropically into the unit square. Points already
/// inside it keep their coordinates. Coincident stations are separated by a
/// deterministic jitter.
pub fn rescale_domain(data: &StationDataset) -> Result<(StationDataset, DomainMap)> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut map = DomainMap::identity();
    if data.lonlat {
        let n = data.len() as f64;
        let lon0 = data.coords.iter().map(|p| p[0]).sum::<f64>() / n;
        let lat0 = data.coords.iter().map(|p| p[1]).sum::<f64>() / n;
        map.projection_centre = Some([lon0, lat0]);
    }
    let projected: Vec<[f64; 2]> = data.coords.iter().map(|&p| map.project(p)).collect();
    let bbox = bounding_box(&projected);
    let inside = !data.lonlat && bbox.x_min >= 0.0 && bbox.y_min >= 0.0 && bbox.x_max <= 1.0 && bbox.y_max <= 1.0;
    if !inside {
        let extent = bbox.width().max(bbox.height());
        if !(extent > 0.0) {
            return Err(Error::DegenerateDomain("all stations share one location".into()));
        }
        map.offset = [bbox.x_min, bbox.y_min];
        map.scale = 1.0 / extent;
    }
    let mut out = data.clone();
    out.coords = data.coords.iter().map(|&p| map.forward(p)).collect();
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    let mut ties = 0;
    for p in out.coords.iter_mut() {
        let key = (p[0].to_bits(), p[1].to_bits());
        let count = seen.entry(key).or_insert(0);
        if *count > 0 {
            // Move inwards so the point stays in the unit square.
            let k = *count as f64;
            p[0] += if p[0] > 0.5 { -TIE_JITTER * k } else { TIE_JITTER * k };
            p[1] += if p[1] > 0.5 { -TIE_JITTER * k } else { TIE_JITTER * k };
            ties += 1;
        }
        *count += 1;
    }
    if ties > 0 {
        log::warn!("jittered {ties} stations sharing coordinates");
    }
    Ok((out, map))
}

pub fn bounding_box(points: &[[f64; 2]]) -> Rect {
    let fold = |f: fn(f64, f64) -> f64, init: f64, k: usize| points.iter().fold(init, |m, p| f(m, p[k]));
    Rect::new(
        fold(f64::min, f64::INFINITY, 0),
        fold(f64::max, f64::NEG_INFINITY, 0),
        fold(f64::min, f64::INFINITY, 1),
        fold(f64::max, f64::NEG_INFINITY, 1),
    )
}

/// Inverse-distance-weighted interpolation of station values to mesh nodes.
pub fn idw_to_nodes(mesh: &TriMesh, stations: &[[f64; 2]], values: &[f64], power: f64) -> Result<Vec<f64>> {
    if stations.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: stations.len(), found: values.len() });
    }
    if stations.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(mesh
        .nodes()
        .iter()
        .map(|node| {
            let (mut num, mut den) = (0.0, 0.0);
            for (s, v) in stations.iter().zip(values) {
                let d = (node[0] - s[0]).hypot(node[1] - s[1]);
                if d < 1e-12 {
                    return *v;
                }
                let w = d.powf(-power);
                num += w * v;
                den += w;
            }
            num / den
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApplicationConfig {
    pub columns: ColumnMap,
    pub mesh_nodes: usize,
    pub mesh_extension: f64,
    pub idw_power: f64,
    pub models: Vec<ModelKind>,
    /// Template for every fitted model.
    pub fit: ModelConfig,
}

impl Default for ApplicationConfig {
    fn default() -> Self {
        let mut fit = ModelConfig::new(ModelKind::Mgrf);
        fit.reformulation = Reformulation::II;
        fit.priors.pc.u = 0.8;
        fit.priors.sigma2_mu_z = 1.0;
        fit.mcmc = McmcSettings { iterations: 100_000, burn_in: 50_000, thin: 20, seed: 1 };
        Self {
            columns: ColumnMap::default(),
            mesh_nodes: 278,
            mesh_extension: 0.2,
            idw_power: 2.0,
            models: ModelKind::ALL.to_vec(),
            fit,
        }
    }
}

/// Posterior mean and equal-tailed 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

impl Interval {
    fn from_output(out: &ChainOutput, name: &str) -> Option<Self> {
        out.summary.get(name).map(|s| Self { mean: s.mean, q025: s.q025, q975: s.q975 })
    }

    pub fn excludes_zero(&self) -> bool {
        self.q025 > 0.0 || self.q975 < 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: ModelKind,
    pub label: String,
    /// Slopes in covariate order.
    pub coefficients: Vec<Interval>,
    pub rho: Option<Interval>,
    pub range_z: Option<f64>,
    pub range_gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub covariate_names: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Everything needed to fit models to a prepared dataset.
pub struct PreparedApplication {
    pub data: StationDataset,
    pub standardization: Standardization,
    pub domain_map: DomainMap,
    pub mesh: TriMesh,
    pub design: SpatialDesign,
    pub observations: Observations,
}

/// Standardize, rescale, mesh, project and interpolate covariate fields.
pub fn prepare_application(cfg: &ApplicationConfig, raw: &StationDataset) -> Result<PreparedApplication> {
    let (std_data, standardization) = standardize(raw)?;
    let (data, domain_map) = rescale_domain(&std_data)?;
    let mesh = build_mesh(bounding_box(&data.coords), cfg.mesh_nodes, cfg.mesh_extension)?;
    let fem = assemble_fem(&mesh)?;
    let design = SpatialDesign::new(&fem, project(&mesh, &data.coords)?, Ordering::FillReducing)?;
    let z_fields = data
        .covariates
        .iter()
        .map(|c| idw_to_nodes(&mesh, &data.coords, c, cfg.idw_power))
        .collect::<Result<Vec<_>>>()?;
    let observations = Observations { y: data.response.clone(), covariates: data.covariates.clone(), z_fields };
    Ok(PreparedApplication { data, standardization, domain_map, mesh, design, observations })
}

pub fn fit_model(cfg: &ApplicationConfig, prepared: &PreparedApplication, model: ModelKind) -> Result<ChainOutput> {
    let model_cfg = ModelConfig { model, ..cfg.fit.clone() };
    let design = model.is_spatial().then_some(&prepared.design);
    run_chain(&model_cfg, design, &prepared.observations)
}

pub fn comparison_row(out: &ChainOutput, n_covariates: usize) -> ComparisonRow {
    let mean_of = |name: &str| out.summary.get(name).map(|s| s.mean);
    ComparisonRow {
        model: out.model,
        label: out.model.label().to_string(),
        coefficients: (1..=n_covariates)
            .map(|k| {
                Interval::from_output(out, &format!("beta{k}")).unwrap_or(Interval { mean: f64::NAN, q025: f64::NAN, q975: f64::NAN })
            })
            .collect(),
        rho: Interval::from_output(out, "rho"),
        range_z: mean_of("range_z"),
        range_gamma: mean_of("range_gamma"),
    }
}

/// Fit every configured model kind to the dataset, all with the same seed.
pub fn run_application(cfg: &ApplicationConfig, raw: &StationDataset) -> Result<(ComparisonTable, Vec<ChainOutput>)> {
    cfg.fit.validate()?;
    let prepared = prepare_application(cfg, raw)?;
    let mut rows = Vec::with_capacity(cfg.models.len());
    let mut outputs = Vec::with_capacity(cfg.models.len());
    for &model in &cfg.models {
        log::info!("fitting {}", model.label());
        let out = fit_model(cfg, &prepared, model)?;
        rows.push(comparison_row(&out, raw.covariates.len()));
        outputs.push(out);
    }
    Ok((ComparisonTable { covariate_names: raw.covariate_names.clone(), rows }, outputs))
}

/// Format with six significant digits.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let exponent = x.abs().log10().floor() as i32;
    if (-5..=9).contains(&exponent) {
        let decimals = (5 - exponent).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

impl ComparisonTable {
    /// Aligned plain-text table.
    pub fn render(&self) -> String {
        let mut header = vec!["Model".to_string()];
        for name in &self.covariate_names {
            header.push(format!("{name} mean"));
            header.push(format!("{name} 95% CI"));
        }
        header.extend(["rho mean", "rho 95% CI", "range_z", "range_gamma"].map(String::from));
        let ci = |i: &Interval| format!("[{}, {}]", sig6(i.q025), sig6(i.q975));
        let opt = |v: Option<f64>| v.map_or("-".to_string(), sig6);
        let mut lines = vec![header];
        for r in &self.rows {
            let mut line = vec![r.label.clone()];
            for c in &r.coefficients {
                line.push(sig6(c.mean));
                line.push(ci(c));
            }
            line.push(opt(r.rho.map(|i| i.mean)));
            line.push(r.rho.as_ref().map_or("-".into(), ci));
            line.push(opt(r.range_z));
            line.push(opt(r.range_gamma));
            lines.push(line);
        }
        let widths: Vec<usize> =
            (0..lines[0].len()).map(|k| lines.iter().map(|l| l[k].chars().count()).max().unwrap_or(0)).collect();
        let mut s = String::new();
        for l in &lines {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            s.push_str(cells.join("  ").trim_end());
            s.push('\n');
        }
        s
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "parameter", "mean", "q025", "q975"])?;
        for r in &self.rows {
            for (name, c) in self.covariate_names.iter().zip(&r.coefficients) {
                w.write_record([r.label.clone(), name.clone(), sig6(c.mean), sig6(c.q025), sig6(c.q975)])?;
            }
            if let Some(rho) = r.rho {
                w.write_record([r.label.clone(), "rho".into(), sig6(rho.mean), sig6(rho.q025), sig6(rho.q975)])?;
            }
            for (name, v) in [("range_z", r.range_z), ("range_gamma", r.range_gamma)] {
                if let Some(v) = v {
                    w.write_record([r.label.clone(), name.into(), sig6(v), String::new(), String::new()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Density of the correlation prior on a grid, for plotting and checks.
pub fn prior_density_table(prior: &PcRhoPrior, points: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = prior.support();
    (1..=points)
        .map(|k| lo + (hi - lo) * k as f64 / (points + 1) as f64)
        .filter(|r| r.abs() > 1e-9)
        .map(|r| (r, prior.log_density(r).map_or(0.0, f64::exp)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "station_id,longitude,latitude,precipitation,elevation,min_temperature,date\n\
        1,7.0,50.0,2.5,100,-3.0,2000-01-01\n\
        2,8.0,51.0,,200,-4.0,2000-01-01\n\
        3,9.0,52.0,1.0,300,-5.5,2000-01-01\n\
        4,10.0,53.5,0.0,50,-1.0,2000-03-01\n";

    #[test]
    fn ingestion_counts_drops() {
        let d = ingest_reader(SAMPLE.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.rows_read, d.len() + d.dropped);
        let only_jan = ColumnMap { date_filter: Some("2000-01-01".into()), ..ColumnMap::default() };
        let d = ingest_reader(SAMPLE.as_bytes(), &only_jan).unwrap();
        assert_eq!((d.len(), d.dropped), (2, 2));
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(sig6(0.644), "0.644000");
        assert_eq!(sig6(-0.1371234567), "-0.137123");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1.5e-9), "1.50000e-9");
    }

    #[test]
    fn domain_map_round_trip_lonlat() {
        let d = ingest_reader(SAMPLE.as_bytes(), &ColumnMap::default()).unwrap();
        let (scaled, map) = rescale_domain(&d).unwrap();
        let bb = bounding_box(&scaled.coords);
        assert!(bb.x_min.abs() < 1e-12 && bb.y_min.abs() < 1e-12);
        assert!((bb.width().max(bb.height()) - 1.0).abs() < 1e-12);
        for (p, q) in d.coords.iter().zip(&scaled.coords) {
            let back = map.inverse(*q);
            assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
        }
    }
}
