//! Bivariate stress-response datasets: ingestion, transforms and summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Per-axis transform applied at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Transform {
    #[default]
    Identity,
    Log10,
    /// `a + b * x`
    Affine { a: f64, b: f64 },
}

impl Transform {
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Transform::Identity => v,
            Transform::Log10 => v.log10(),
            Transform::Affine { a, b } => a + b * v,
        }
    }

    fn check(&self, row: usize, v: f64) -> Result<()> {
        if matches!(self, Transform::Log10) && v <= 0.0 {
            return Err(Error::NonPositiveLog { row, value: v });
        }
        Ok(())
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Identity => f.write_str("identity"),
            Transform::Log10 => f.write_str("log10"),
            Transform::Affine { a, b } => write!(f, "affine:{a},{b}"),
        }
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "identity" => return Ok(Transform::Identity),
            "log10" => return Ok(Transform::Log10),
            _ => {}
        }
        let bad = || Error::InvalidArgument(format!("unknown transform `{s}`"));
        let rest = s.strip_prefix("affine:").ok_or_else(bad)?;
        let (a, b) = rest.split_once(',').ok_or_else(bad)?;
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        if !a.is_finite() || !b.is_finite() {
            return Err(bad());
        }
        Ok(Transform::Affine { a, b })
    }
}

impl Serialize for Transform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Transform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Paired observations sorted by x. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateDataset {
    xs: Vec<f64>,
    ys: Vec<f64>,
    labels: Option<Vec<String>>,
    /// Position of each point in the original input.
    source_index: Vec<usize>,
    pub x_name: String,
    pub y_name: String,
    pub x_transform: Transform,
    pub y_transform: Transform,
}

impl BivariateDataset {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Self::with_labels(xs, ys, None)
    }

    pub fn with_labels(xs: Vec<f64>, ys: Vec<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::InvalidArgument(format!(
                "xs has {} values but ys has {}",
                xs.len(),
                ys.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != xs.len() {
                return Err(Error::InvalidArgument("labels length differs from xs".into()));
            }
        }
        if xs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite { row: i + 1, column: "x".into() });
            }
            if !y.is_finite() {
                return Err(Error::NonFinite { row: i + 1, column: "y".into() });
            }
        }

        let mut order: Vec<usize> = (0..xs.len()).collect();
        // sort_by is stable, so tied xs keep input order
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        Ok(Self {
            xs: order.iter().map(|&i| xs[i]).collect(),
            ys: order.iter().map(|&i| ys[i]).collect(),
            labels: labels.map(|l| order.iter().map(|&i| l[i].clone()).collect()),
            source_index: order,
            x_name: "x".into(),
            y_name: "y".into(),
            x_transform: Transform::Identity,
            y_transform: Transform::Identity,
        })
    }

    pub fn named(mut self, x_name: impl Into<String>, y_name: impl Into<String>) -> Self {
        self.x_name = x_name.into();
        self.y_name = y_name.into();
        self
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn source_index(&self) -> &[usize] {
        &self.source_index
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Same design, new responses. Used by resampling code.
    pub fn with_ys(&self, ys: Vec<f64>) -> Self {
        assert_eq!(ys.len(), self.ys.len());
        Self { ys, ..self.clone() }
    }

    pub fn distinct_x_count(&self) -> usize {
        1 + self.xs.windows(2).filter(|w| w[1] > w[0]).count()
    }

    /// Writes the (already transformed) points as CSV with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec![self.x_name.as_str(), self.y_name.as_str()];
        if self.labels.is_some() {
            header.push("label");
        }
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.xs[i].to_string(), self.ys[i].to_string()];
            if let Some(l) = &self.labels {
                rec.push(l[i].clone());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn echo(&self) -> DatasetEcho {
        DatasetEcho {
            x_name: self.x_name.clone(),
            y_name: self.y_name.clone(),
            transforms: TransformPair {
                x: self.x_transform,
                y: self.y_transform,
            },
            points: (0..self.len())
                .map(|i| EchoPoint {
                    x: self.xs[i],
                    y: self.ys[i],
                    label: self.labels.as_ref().map(|l| l[i].clone()),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransformPair {
    pub x: Transform,
    pub y: Transform,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EchoPoint {
    pub x: f64,
    pub y: f64,
    pub label: Option<String>,
}

/// JSON echo of an ingested dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetEcho {
    pub x_name: String,
    pub y_name: String,
    pub transforms: TransformPair,
    pub points: Vec<EchoPoint>,
}

/// Column selection and transforms for CSV ingestion.
#[derive(Debug, Clone)]
pub struct LoadSpec {
    pub x_column: String,
    pub y_column: String,
    pub label_column: Option<String>,
    pub x_transform: Transform,
    pub y_transform: Transform,
}

impl LoadSpec {
    pub fn new(x_column: impl Into<String>, y_column: impl Into<String>) -> Self {
        Self {
            x_column: x_column.into(),
            y_column: y_column.into(),
            label_column: None,
            x_transform: Transform::Identity,
            y_transform: Transform::Identity,
        }
    }
}

pub fn load_dataset(path: &Path, spec: &LoadSpec) -> Result<BivariateDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, spec)
}

/// Reads a comma-delimited, header-first UTF-8 CSV.
pub fn read_dataset<R: Read>(reader: R, spec: &LoadSpec) -> Result<BivariateDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let xi = find(&spec.x_column)?;
    let yi = find(&spec.y_column)?;
    let li = spec.label_column.as_deref().map(find).transpose()?;

    let parse = |row: usize, col: &str, raw: &str| -> Result<f64> {
        let v: f64 = raw.parse().map_err(|_| Error::NonNumeric {
            row,
            column: col.to_string(),
            value: raw.to_string(),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFinite { row, column: col.to_string() });
        }
        Ok(v)
    };

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut labels = li.map(|_| Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let x = parse(row, &spec.x_column, rec.get(xi).unwrap_or(""))?;
        let y = parse(row, &spec.y_column, rec.get(yi).unwrap_or(""))?;
        spec.x_transform.check(row, x)?;
        spec.y_transform.check(row, y)?;
        xs.push(spec.x_transform.apply(x));
        ys.push(spec.y_transform.apply(y));
        if let (Some(l), Some(li)) = (labels.as_mut(), li) {
            l.push(rec.get(li).unwrap_or("").to_string());
        }
    }
    let mut ds = BivariateDataset::with_labels(xs, ys, labels)?
        .named(spec.x_column.clone(), spec.y_column.clone());
    ds.x_transform = spec.x_transform;
    ds.y_transform = spec.y_transform;
    Ok(ds)
}

/// Mean with a t-based 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl MeanCi {
    pub fn of(v: &[f64]) -> Option<Self> {
        if v.len() < 2 {
            return None;
        }
        let n = v.len() as f64;
        let mean = stats::mean(v);
        let half = stats::t_quantile(0.975, n - 1.0) * (stats::sample_variance(v) / n).sqrt();
        Some(Self {
            mean,
            lower: mean - half,
            upper: mean + half,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub group: Option<String>,
    pub n: usize,
    /// `None` when the group has a single observation.
    pub x: Option<MeanCi>,
    pub y: Option<MeanCi>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub x_name: String,
    pub y_name: String,
    pub overall: GroupSummary,
    pub groups: Vec<GroupSummary>,
}

pub fn summarize(ds: &BivariateDataset) -> Result<Summary> {
    if ds.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: ds.len() });
    }
    let overall = GroupSummary {
        group: None,
        n: ds.len(),
        x: MeanCi::of(ds.xs()),
        y: MeanCi::of(ds.ys()),
    };
    let mut groups = Vec::new();
    if let Some(labels) = ds.labels() {
        let mut by: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            let e = by.entry(l.as_str()).or_default();
            e.0.push(ds.xs()[i]);
            e.1.push(ds.ys()[i]);
        }
        for (label, (gx, gy)) in by {
            groups.push(GroupSummary {
                group: Some(label.to_string()),
                n: gx.len(),
                x: MeanCi::of(&gx),
                y: MeanCi::of(&gy),
            });
        }
    }
    Ok(Summary {
        x_name: ds.x_name.clone(),
        y_name: ds.y_name.clone(),
        overall,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec() -> LoadSpec {
        LoadSpec::new("x", "y")
    }

    #[test]
    fn loads_and_sorts() {
        let csv = "x,y\n1.0,3.0\n0.0,2.0\n";
        let ds = read_dataset(csv.as_bytes(), &spec()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.xs(), &[0.0, 1.0]);
        assert_eq!(ds.ys(), &[2.0, 3.0]);
        assert_eq!(ds.source_index(), &[1, 0]);
    }

    #[test]
    fn ties_keep_input_order() {
        let ds = BivariateDataset::new(vec![1.0, 0.0, 1.0], vec![5.0, 1.0, 4.0]).unwrap();
        assert_eq!(ds.ys(), &[1.0, 5.0, 4.0]);
    }

    #[test]
    fn affine_rescaling_of_raw_minimum() {
        let t: Transform = "affine:0.341774,0.196037".parse().unwrap();
        // 0.341774 - 0.196037 * 1.5634, evaluated by hand
        assert_abs_diff_eq!(t.apply(-1.5634), 0.0352897542, epsilon = 1e-10);
    }

    #[test]
    fn log10_of_phosphorus_value() {
        assert_abs_diff_eq!(Transform::Log10.apply(16.293), 1.2120, epsilon = 5e-5);
    }

    #[test]
    fn transform_parse_roundtrip() {
        for s in ["identity", "log10", "affine:0.5,-2"] {
            let t: Transform = s.parse().unwrap();
            assert_eq!(t.to_string().parse::<Transform>().unwrap(), t);
        }
        assert!("affine:1".parse::<Transform>().is_err());
        assert!("sqrt".parse::<Transform>().is_err());
    }

    #[test]
    fn ingestion_errors() {
        let missing = read_dataset("a,y\n1,2\n".as_bytes(), &spec());
        assert!(matches!(missing, Err(Error::MissingColumn(c)) if c == "x"));

        let bad = read_dataset("x,y\n1,abc\n".as_bytes(), &spec());
        assert!(matches!(bad, Err(Error::NonNumeric { row: 1, .. })));

        let mut s = spec();
        s.x_transform = Transform::Log10;
        let neg = read_dataset("x,y\n0,1\n".as_bytes(), &s);
        assert!(matches!(neg, Err(Error::NonPositiveLog { .. })));

        let empty = read_dataset("x,y\n".as_bytes(), &spec());
        assert!(matches!(empty, Err(Error::EmptyDataset)));
    }

    #[test]
    fn labels_travel_with_points() {
        let mut s = spec();
        s.label_column = Some("site".into());
        let ds = read_dataset("x,y,site\n2,1,b\n1,0,a\n".as_bytes(), &s).unwrap();
        assert_eq!(ds.labels().unwrap(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn summary_zero_variance() {
        let ds = BivariateDataset::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0; 4]).unwrap();
        let s = summarize(&ds).unwrap();
        let y = s.overall.y.unwrap();
        assert_eq!((y.mean, y.lower, y.upper), (1.0, 1.0, 1.0));
    }

    #[test]
    fn summary_two_points_uses_t1() {
        let ds = BivariateDataset::new(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        let y = summarize(&ds).unwrap().overall.y.unwrap();
        assert_abs_diff_eq!(y.mean, 1.0);
        assert_abs_diff_eq!(y.lower, -11.7062, epsilon = 1e-4);
        assert_abs_diff_eq!(y.upper, 13.7062, epsilon = 1e-4);
    }

    #[test]
    fn summary_needs_two_points() {
        let ds = BivariateDataset::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(summarize(&ds), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn summary_groups() {
        let ds = BivariateDataset::with_labels(
            vec![0.0, 1.0, 2.0, 3.0, 4.0],
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            Some(vec!["a".into(), "a".into(), "b".into(), "b".into(), "c".into()]),
        )
        .unwrap();
        let s = summarize(&ds).unwrap();
        assert_eq!(s.groups.len(), 3);
        assert_eq!(s.groups[0].y.unwrap().mean, 1.5);
        assert!(s.groups[2].y.is_none());
    }
}
