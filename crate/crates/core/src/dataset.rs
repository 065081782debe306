//! The two-sample observation model.
//!
//! Unit records carry a group flag `g` (1 = observational, 0 = experimental),
//! an optional binary treatment `w`, an optional long-term outcome `y`, a
//! short-term vector `s` of length `d` and covariates `x` of length `q`.
//! Which fields are present is fixed by the identification model:
//!
//! | model                 | `w`                 | `y`          |
//! |-----------------------|---------------------|--------------|
//! | latent unconfounded   | every row           | iff `g = 1`  |
//! | surrogacy             | iff `g = 0`         | iff `g = 1`  |
//!
//! The table form used by [`Dataset::from_table`] and [`Dataset::to_table`] has
//! header `g,w,y,s_1..s_d,x_1..x_q` with empty cells standing for absent values.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(alias = "lut")]
    LatentUnconfounded,
    #[serde(alias = "sur")]
    Surrogacy,
}

impl ModelKind {
    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::LatentUnconfounded => "lut",
            ModelKind::Surrogacy => "surrogacy",
        }
    }
}

impl core::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lut" | "latent_unconfounded" => Ok(ModelKind::LatentUnconfounded),
            "sur" | "surrogacy" => Ok(ModelKind::Surrogacy),
            other => Err(format!("unknown model `{other}` (expected lut or surrogacy)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Which population the effect is averaged over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Observational population.
    Tau1,
    /// Experimental population.
    Tau0,
}

impl core::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tau1" => Ok(Target::Tau1),
            "tau0" => Ok(Target::Tau0),
            other => Err(format!("unknown target `{other}` (expected tau1 or tau0)")),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Tau1 => "tau1",
            Target::Tau0 => "tau0",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn is_treated(self) -> bool {
        self == Arm::Treated
    }

    pub fn from_flag(w: bool) -> Arm {
        if w {
            Arm::Treated
        } else {
            Arm::Control
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unexpected column `{0}`")]
    UnknownColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("row {row}: observability violation: {reason}")]
    ObservabilityViolation { row: usize, reason: String },
    #[error("row {row}: column `{column}` must be 0 or 1, found `{value}`")]
    NonBinaryFlag { row: usize, column: String, value: String },
    #[error("row {row}: column `{column}` is not a finite number: `{value}`")]
    NonFiniteValue { row: usize, column: String, value: String },
    #[error("no rows in {0}")]
    EmptyArm(&'static str),
    #[error("row {row}: expected s of length {d} and x of length {q}")]
    DimensionMismatch { row: usize, d: usize, q: usize },
    #[error("a dataset needs at least one short-term outcome column")]
    NoShortTermOutcome,
}

/// Owned unit record, used to build datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub g: bool,
    pub w: Option<bool>,
    pub y: Option<f64>,
    pub s: Vec<f64>,
    pub x: Vec<f64>,
}

/// Borrowed view of one unit inside a [`Dataset`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation<'a> {
    pub g: bool,
    pub w: Option<bool>,
    pub y: Option<f64>,
    pub s: &'a [f64],
    pub x: &'a [f64],
    /// `s` followed by `x`, the input of every `(s, x)` regression.
    pub sx: &'a [f64],
}

/// Overlap warnings from [`validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// Share of observational rows outside `[eps, 1 - eps]`.
    GroupShare { share: f64, eps: f64 },
    /// Treated share among experimental rows outside `[eps, 1 - eps]`.
    TreatedShare { share: f64, eps: f64 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::GroupShare { share, eps } => {
                write!(f, "observational share {share} outside [{eps}, {}]", 1.0 - eps)
            }
            Warning::TreatedShare { share, eps } => write!(
                f,
                "experimental treated share {share} outside [{eps}, {}]",
                1.0 - eps
            ),
        }
    }
}

/// Validated, immutable two-sample dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    model: ModelKind,
    d: usize,
    q: usize,
    g: Vec<bool>,
    w: Vec<Option<bool>>,
    y: Vec<Option<f64>>,
    sx: Matrix,
}

fn check_observability(model: ModelKind, row: usize, r: &Record) -> Result<(), DatasetError> {
    let violation = |reason: &str| DatasetError::ObservabilityViolation {
        row,
        reason: reason.to_string(),
    };
    match (r.g, r.y.is_some()) {
        (true, false) => return Err(violation("observational row without a long-term outcome")),
        (false, true) => return Err(violation("experimental row with a long-term outcome")),
        _ => {}
    }
    match model {
        ModelKind::LatentUnconfounded if r.w.is_none() => {
            Err(violation("treatment must be recorded on every row in the latent unconfounded model"))
        }
        ModelKind::Surrogacy if r.g && r.w.is_some() => {
            Err(violation("treatment must be absent on observational rows in the surrogacy model"))
        }
        ModelKind::Surrogacy if !r.g && r.w.is_none() => {
            Err(violation("experimental row without a treatment"))
        }
        _ => Ok(()),
    }
}

impl Dataset {
    /// Validates records against the observability pattern of `model`.
    pub fn new(model: ModelKind, d: usize, q: usize, records: Vec<Record>) -> Result<Self, DatasetError> {
        if d == 0 {
            return Err(DatasetError::NoShortTermOutcome);
        }
        let n = records.len();
        let mut g = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut sx = Vec::with_capacity(n * (d + q));
        for (row, r) in records.into_iter().enumerate() {
            if r.s.len() != d || r.x.len() != q {
                return Err(DatasetError::DimensionMismatch { row, d, q });
            }
            check_observability(model, row, &r)?;
            let bad = |column: String, v: f64| DatasetError::NonFiniteValue {
                row,
                column,
                value: format!("{v}"),
            };
            if let Some(v) = r.y {
                if !v.is_finite() {
                    return Err(bad("y".to_string(), v));
                }
            }
            for (j, v) in r.s.iter().enumerate() {
                if !v.is_finite() {
                    return Err(bad(format!("s_{}", j + 1), *v));
                }
            }
            for (j, v) in r.x.iter().enumerate() {
                if !v.is_finite() {
                    return Err(bad(format!("x_{}", j + 1), *v));
                }
            }
            g.push(r.g);
            w.push(r.w);
            y.push(r.y);
            sx.extend_from_slice(&r.s);
            sx.extend_from_slice(&r.x);
        }
        let ds = Dataset { model, d, q, g, w, y, sx: Matrix::from_vec(n, d + q, sx) };
        ds.check_strata()?;
        Ok(ds)
    }

    fn check_strata(&self) -> Result<(), DatasetError> {
        let mut counts = [0usize; 4];
        let mut n_obs = 0;
        for i in 0..self.n() {
            if self.g[i] {
                n_obs += 1;
            } else if let Some(w) = self.w[i] {
                counts[usize::from(w)] += 1;
            }
            if self.g[i] {
                if let Some(w) = self.w[i] {
                    counts[2 + usize::from(w)] += 1;
                }
            }
        }
        if n_obs == 0 {
            return Err(DatasetError::EmptyArm("the observational sample"));
        }
        if n_obs == self.n() {
            return Err(DatasetError::EmptyArm("the experimental sample"));
        }
        if counts[0] == 0 {
            return Err(DatasetError::EmptyArm("the experimental control arm"));
        }
        if counts[1] == 0 {
            return Err(DatasetError::EmptyArm("the experimental treated arm"));
        }
        Ok(())
    }

    /// Parses a string table (header plus rows). Column order is free; `d` and
    /// `q` come from the header alone.
    pub fn from_table<H, R, C>(model: ModelKind, header: &[H], rows: &[R]) -> Result<Self, DatasetError>
    where
        H: AsRef<str>,
        R: AsRef<[C]>,
        C: AsRef<str>,
    {
        let names: Vec<&str> = header.iter().map(|h| h.as_ref().trim()).collect();
        let find = |name: &str| names.iter().position(|n| *n == name);
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(DatasetError::DuplicateColumn(n.to_string()));
            }
        }
        let col = |name: &str| find(name).ok_or_else(|| DatasetError::MissingColumn(name.to_string()));
        let gi = col("g")?;
        let wi = col("w")?;
        let yi = col("y")?;
        let indexed = |prefix: &str| -> Result<Vec<usize>, DatasetError> {
            let count = names
                .iter()
                .filter(|n| n.strip_prefix(prefix).is_some_and(|r| r.parse::<usize>().is_ok()))
                .count();
            (1..=count).map(|j| col(&format!("{prefix}{j}"))).collect()
        };
        let si = indexed("s_")?;
        let xi = indexed("x_")?;
        if si.is_empty() {
            return Err(DatasetError::MissingColumn("s_1".to_string()));
        }
        let known = 3 + si.len() + xi.len();
        if known != names.len() {
            let extra = names
                .iter()
                .enumerate()
                .find(|(i, _)| *i != gi && *i != wi && *i != yi && !si.contains(i) && !xi.contains(i))
                .map(|(_, n)| n.to_string())
                .unwrap_or_default();
            return Err(DatasetError::UnknownColumn(extra));
        }

        let mut records = Vec::with_capacity(rows.len());
        for (row, fields) in rows.iter().enumerate() {
            let fields = fields.as_ref();
            if fields.len() != names.len() {
                return Err(DatasetError::RaggedRow { row, expected: names.len(), found: fields.len() });
            }
            let cell = |i: usize| fields[i].as_ref().trim();
            let flag = |i: usize| -> Result<Option<bool>, DatasetError> {
                match cell(i) {
                    "" => Ok(None),
                    v => match v.parse::<f64>() {
                        Ok(0.0) => Ok(Some(false)),
                        Ok(1.0) => Ok(Some(true)),
                        _ => Err(DatasetError::NonBinaryFlag {
                            row,
                            column: names[i].to_string(),
                            value: v.to_string(),
                        }),
                    },
                }
            };
            let number = |i: usize| -> Result<Option<f64>, DatasetError> {
                match cell(i) {
                    "" => Ok(None),
                    v => match v.parse::<f64>() {
                        Ok(f) if f.is_finite() => Ok(Some(f)),
                        _ => Err(DatasetError::NonFiniteValue {
                            row,
                            column: names[i].to_string(),
                            value: v.to_string(),
                        }),
                    },
                }
            };
            let required = |i: usize| -> Result<f64, DatasetError> {
                number(i)?.ok_or_else(|| DatasetError::NonFiniteValue {
                    row,
                    column: names[i].to_string(),
                    value: String::new(),
                })
            };
            let g = flag(gi)?.ok_or_else(|| DatasetError::NonBinaryFlag {
                row,
                column: "g".to_string(),
                value: String::new(),
            })?;
            records.push(Record {
                g,
                w: flag(wi)?,
                y: number(yi)?,
                s: si.iter().map(|&i| required(i)).collect::<Result<_, _>>()?,
                x: xi.iter().map(|&i| required(i)).collect::<Result<_, _>>()?,
            });
        }
        Dataset::new(model, si.len(), xi.len(), records)
    }

    /// Header and string rows in canonical column order. Numbers use the
    /// shortest representation that parses back to the same bits.
    pub fn to_table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = Vec::with_capacity(3 + self.d + self.q);
        header.push("g".to_string());
        header.push("w".to_string());
        header.push("y".to_string());
        header.extend((1..=self.d).map(|j| format!("s_{j}")));
        header.extend((1..=self.q).map(|j| format!("x_{j}")));
        let rows = (0..self.n())
            .map(|i| {
                let mut row = Vec::with_capacity(header.len());
                row.push(if self.g[i] { "1" } else { "0" }.to_string());
                row.push(match self.w[i] {
                    Some(true) => "1".to_string(),
                    Some(false) => "0".to_string(),
                    None => String::new(),
                });
                row.push(self.y[i].map(|v| format!("{v}")).unwrap_or_default());
                row.extend(self.sx.row(i).iter().map(|v| format!("{v}")));
                row
            })
            .collect();
        (header, rows)
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn obs(&self, i: usize) -> Observation<'_> {
        let sx = self.sx.row(i);
        Observation { g: self.g[i], w: self.w[i], y: self.y[i], s: &sx[..self.d], x: &sx[self.d..], sx }
    }

    pub fn iter(&self) -> impl Iterator<Item = Observation<'_>> + '_ {
        (0..self.n()).map(move |i| self.obs(i))
    }

    pub fn g(&self) -> &[bool] {
        &self.g
    }

    pub fn w(&self) -> &[Option<bool>] {
        &self.w
    }

    pub fn y(&self) -> &[Option<f64>] {
        &self.y
    }

    pub fn record(&self, i: usize) -> Record {
        let o = self.obs(i);
        Record { g: o.g, w: o.w, y: o.y, s: o.s.to_vec(), x: o.x.to_vec() }
    }

    pub fn records(&self) -> Vec<Record> {
        (0..self.n()).map(|i| self.record(i)).collect()
    }

    /// Copy with `f` applied to every record, revalidated.
    pub fn map_records(&self, mut f: impl FnMut(usize, &mut Record)) -> Result<Dataset, DatasetError> {
        let mut records = self.records();
        for (i, r) in records.iter_mut().enumerate() {
            f(i, r);
        }
        Dataset::new(self.model, self.d, self.q, records)
    }

    /// Share of observational rows.
    pub fn group_share(&self) -> f64 {
        self.g.iter().filter(|&&g| g).count() as f64 / self.n() as f64
    }
}

/// Checks the empirical overlap shares. Never fails; problems are reported as warnings.
pub fn validate(ds: &Dataset, eps: f64) -> Vec<Warning> {
    let mut out = Vec::new();
    let outside = |p: f64| p < eps || p > 1.0 - eps;
    let share = ds.group_share();
    if outside(share) {
        out.push(Warning::GroupShare { share, eps });
    }
    let (mut treated, mut total) = (0usize, 0usize);
    for i in 0..ds.n() {
        if !ds.g[i] {
            total += 1;
            if ds.w[i] == Some(true) {
                treated += 1;
            }
        }
    }
    let share = treated as f64 / total as f64;
    if outside(share) {
        out.push(Warning::TreatedShare { share, eps });
    }
    out
}
