//! Tabular datasets: CSV ingestion, log/centering transforms, train/test
//! tags, the bundled crime and heart tables, and a synthetic GP lattice.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::{gp_kernel, RegressionData};

const CRIME_CSV: &str = include_str!("../data/uscrime.csv");
const HEART_CSV: &str = include_str!("../data/heart.csv");

/// Which columns to read: predictors in order, then the response.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub predictors: Vec<String>,
    pub response: String,
}

impl Schema {
    pub fn new<S: Into<String>>(predictors: impl IntoIterator<Item = S>, response: impl Into<String>) -> Self {
        Self { predictors: predictors.into_iter().map(Into::into).collect(), response: response.into() }
    }
}

/// `stored = (log ? ln(raw) : raw) - offset`
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Transform {
    pub log: bool,
    pub offset: f64,
}

impl Transform {
    pub fn apply(&self, raw: f64) -> f64 {
        (if self.log { raw.ln() } else { raw }) - self.offset
    }

    pub fn invert(&self, stored: f64) -> f64 {
        let v = stored + self.offset;
        if self.log {
            v.exp()
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rows {
    All,
    Train,
    Test,
}

/// Named predictor columns plus a response, with per-column transform
/// metadata and per-row split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    transforms: Vec<Transform>,
    response_name: String,
    response: Vec<f64>,
    response_transform: Transform,
    tags: Vec<SplitTag>,
}

/// Columns to log-transform and to center. Names may include the response.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Preparation {
    pub log: Vec<String>,
    pub center: Vec<String>,
}

impl Dataset {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, response_name: impl Into<String>, response: Vec<f64>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Dimension { expected: names.len(), got: columns.len() });
        }
        let n = response.len();
        if let Some(c) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::Dimension { expected: n, got: c.len() });
        }
        Ok(Self {
            transforms: vec![Transform::default(); names.len()],
            names,
            columns,
            response_name: response_name.into(),
            response,
            response_transform: Transform::default(),
            tags: vec![SplitTag::Train; n],
        })
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn tags(&self) -> &[SplitTag] {
        &self.tags
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        if name == self.response_name {
            return Ok(&self.response);
        }
        self.column_index(name).map(|j| self.columns[j].as_slice())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::Lookup(format!("no column named `{name}`")))
    }

    pub fn transform(&self, name: &str) -> Result<Transform> {
        if name == self.response_name {
            return Ok(self.response_transform);
        }
        self.column_index(name).map(|j| self.transforms[j])
    }

    /// Keeps only the named predictors, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let idx = names.iter().map(|n| self.column_index(n)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: idx.iter().map(|&j| self.names[j].clone()).collect(),
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            transforms: idx.iter().map(|&j| self.transforms[j]).collect(),
            ..self.clone()
        })
    }

    fn row_indices(&self, rows: Rows) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| match rows {
                Rows::All => true,
                Rows::Train => self.tags[i] == SplitTag::Train,
                Rows::Test => self.tags[i] == SplitTag::Test,
            })
            .collect()
    }

    /// Row-major predictor values.
    pub fn rows(&self, rows: Rows) -> Vec<Vec<f64>> {
        self.row_indices(rows).into_iter().map(|i| self.columns.iter().map(|c| c[i]).collect()).collect()
    }

    pub fn responses(&self, rows: Rows) -> Vec<f64> {
        self.row_indices(rows).into_iter().map(|i| self.response[i]).collect()
    }

    pub fn regression_data(&self, rows: Rows) -> Result<RegressionData> {
        RegressionData::new(self.names.clone(), self.rows(rows), self.responses(rows))
    }

    /// Applies log transforms, then centers on the training rows.
    /// Columns are transformed from their current (stored) values.
    pub fn prepare(&self, prep: &Preparation) -> Result<Self> {
        let mut out = self.clone();
        let train = self.row_indices(Rows::Train);
        for name in prep.log.iter().chain(&prep.center) {
            self.column(name)?;
        }
        let apply = |name: &str, values: &mut Vec<f64>, t: &mut Transform| -> Result<()> {
            if prep.log.iter().any(|n| n == name) {
                if t.log || t.offset != 0.0 {
                    return Err(Error::Config(format!("column `{name}` is already transformed")));
                }
                if let Some(i) = values.iter().position(|v| !(*v > 0.0)) {
                    return Err(Error::Ingestion {
                        row: i + 1,
                        column: name.to_owned(),
                        message: format!("log transform of nonpositive value {}", values[i]),
                    });
                }
                values.iter_mut().for_each(|v| *v = v.ln());
                t.log = true;
            }
            if prep.center.iter().any(|n| n == name) && !train.is_empty() {
                let mean = train.iter().map(|&i| values[i]).sum::<f64>() / train.len() as f64;
                values.iter_mut().for_each(|v| *v -= mean);
                t.offset += mean;
            }
            Ok(())
        };
        for j in 0..out.names.len() {
            let name = out.names[j].clone();
            apply(&name, &mut out.columns[j], &mut out.transforms[j])?;
        }
        let name = out.response_name.clone();
        apply(&name, &mut out.response, &mut out.response_transform)?;
        Ok(out)
    }

    /// Undoes all transforms, giving back the raw table.
    pub fn invert(&self) -> Self {
        let mut out = self.clone();
        for (col, t) in out.columns.iter_mut().zip(&mut out.transforms) {
            col.iter_mut().for_each(|v| *v = t.invert(*v));
            *t = Transform::default();
        }
        out.response.iter_mut().for_each(|v| *v = self.response_transform.invert(*v));
        out.response_transform = Transform::default();
        out
    }

    /// Random train/test tags: `round(fraction · n)` training rows (halves
    /// round up), chosen by a seeded shuffle.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("train fraction must lie in (0, 1], got {fraction}")));
        }
        let n = self.n();
        let n_train = ((fraction * n as f64).round() as usize).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = self.clone();
        out.tags = vec![SplitTag::Test; n];
        for &i in &order[..n_train] {
            out.tags[i] = SplitTag::Train;
        }
        Ok(out)
    }

    pub fn with_tags(mut self, tags: Vec<SplitTag>) -> Result<Self> {
        if tags.len() != self.n() {
            return Err(Error::Dimension { expected: self.n(), got: tags.len() });
        }
        self.tags = tags;
        Ok(self)
    }

    /// CSV with the predictors, the response and a `split` column.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.push(&self.response_name);
        header.push("split");
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.columns.iter().map(|c| format!("{:?}", c[i])).collect();
            rec.push(format!("{:?}", self.response[i]));
            rec.push(match self.tags[i] {
                SplitTag::Train => "train".into(),
                SplitTag::Test => "test".into(),
            });
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Reads the schema's columns from a CSV file with a header row.
///
/// Lines starting with `#` are comments. An optional `split` column with
/// values `train`/`test` sets the split tags.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_csv(file, schema)
}

pub fn parse_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Ingestion {
            row: 0,
            column: name.to_owned(),
            message: "column missing from header".into(),
        })
    };
    let idx = schema.predictors.iter().map(|p| find(p)).collect::<Result<Vec<_>>>()?;
    let resp = find(&schema.response)?;
    let split = header.iter().position(|h| h == "split");
    let mut columns = vec![Vec::new(); idx.len()];
    let mut response = Vec::new();
    let mut tags = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let cell = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            let name = header.get(c).unwrap_or("").to_owned();
            if raw.is_empty() || raw == "NA" {
                return Err(Error::Ingestion { row, column: name, message: "missing value".into() });
            }
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Ingestion { row, column: name, message: format!("cannot parse `{raw}` as a number") })
        };
        for (col, &c) in columns.iter_mut().zip(&idx) {
            col.push(cell(c)?);
        }
        response.push(cell(resp)?);
        if let Some(s) = split {
            tags.push(match rec.get(s).unwrap_or("") {
                "train" => SplitTag::Train,
                "test" => SplitTag::Test,
                other => {
                    return Err(Error::Ingestion { row, column: "split".into(), message: format!("unknown split tag `{other}`") })
                }
            });
        }
    }
    if response.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ds = Dataset::new(schema.predictors.clone(), columns, schema.response.clone(), response)?;
    if split.is_some() {
        ds.with_tags(tags)
    } else {
        Ok(ds)
    }
}

/// Aggregate 1960 U.S. crime table: 47 states, 15 predictors, response `y`
/// (offences per 100 000 people).
pub fn crime() -> Dataset {
    let names = ["M", "So", "Ed", "Po1", "Po2", "LF", "M.F", "Pop", "NW", "U1", "U2", "GDP", "Ineq", "Prob", "Time"];
    parse_csv(CRIME_CSV.as_bytes(), &Schema::new(names, "y")).expect("bundled crime table parses")
}

/// Cleveland heart-disease subset: 303 patients, response `target`
/// (1 = angiographic disease present).
pub fn heart() -> Dataset {
    parse_csv(HEART_CSV.as_bytes(), &Schema::new(["age", "sex", "trestbps", "chol", "thalach"], "target"))
        .expect("bundled heart table parses")
}

/// Crime table reduced to `M`, `Prob`, `Ed`, every column (and the
/// response) log-transformed and centered.
pub fn crime_prepared(base: &Dataset) -> Result<Dataset> {
    let all = ["M", "Prob", "Ed", "y"].map(String::from).to_vec();
    base.select(&["M", "Prob", "Ed"])?.prepare(&Preparation { log: all.clone(), center: all })
}

/// Heart table as `chol`, `trestbps`, `sex`, `age`, `thalach`; the four
/// continuous predictors log-transformed and centered, `sex` left as 0/1.
pub fn heart_prepared(base: &Dataset) -> Result<Dataset> {
    let cont = ["chol", "trestbps", "age", "thalach"].map(String::from).to_vec();
    base.select(&["chol", "trestbps", "sex", "age", "thalach"])?
        .prepare(&Preparation { log: cont.clone(), center: cont })
}

/// Generating hyperparameters of the synthetic lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpTruth {
    pub beta: f64,
    pub eta: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub sigma: f64,
}

impl Default for GpTruth {
    fn default() -> Self {
        Self { beta: 0.0, eta: 1.0, nu1: 3.0, nu2: 3.0, sigma: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    /// Lattice is `side × side` at integer coordinates.
    pub side: usize,
    /// Columns with the largest first coordinate held out as test.
    pub test_columns: usize,
    pub truth: GpTruth,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self { side: 20, test_columns: 5, truth: GpTruth::default() }
    }
}

/// One draw of `y ~ N(β·1, K + σ² I)` on an integer lattice, with the
/// frontier columns tagged as test.
pub fn synth_gp_dataset(spec: &LatticeSpec, seed: u64) -> Result<Dataset> {
    let t = spec.truth;
    if !(t.eta > 0.0 && t.nu1 > 0.0 && t.nu2 > 0.0 && t.sigma >= 0.0) {
        return Err(Error::Domain("lattice hyperparameters must be positive".into()));
    }
    if spec.side == 0 || spec.test_columns >= spec.side {
        return Err(Error::Config(format!("{} test columns on a side of {}", spec.test_columns, spec.side)));
    }
    let pts: Vec<[f64; 2]> =
        (0..spec.side).flat_map(|i| (0..spec.side).map(move |j| [i as f64, j as f64])).collect();
    let n = pts.len();
    let cov = DMatrix::from_fn(n, n, |a, b| {
        gp_kernel(pts[a], pts[b], t.eta, t.nu1, t.nu2) + if a == b { t.sigma * t.sigma } else { 0.0 }
    });
    let mut jitter = 1e-10 * t.eta * t.eta;
    let l = loop {
        let mut c = cov.clone();
        for i in 0..n {
            c[(i, i)] += jitter;
        }
        if let Some(ch) = c.cholesky() {
            break ch.l();
        }
        jitter *= 10.0;
        if jitter > 1e-4 * t.eta * t.eta {
            return Err(Error::Conditioning { min_eigenvalue: cov.symmetric_eigenvalues().min() });
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = (l * z).iter().map(|v| v + t.beta).collect();
    let first = spec.side - spec.test_columns;
    let tags = pts.iter().map(|p| if p[0] as usize >= first { SplitTag::Test } else { SplitTag::Train }).collect();
    Dataset::new(
        vec!["x1".into(), "x2".into()],
        vec![pts.iter().map(|p| p[0]).collect(), pts.iter().map(|p| p[1]).collect()],
        "y",
        y,
    )?
    .with_tags(tags)
}
