//! JSON serialization of tensors, operators, metrics, and problem
//! descriptors.
//!
//! Every file is self-describing: a `format` tag and `version` guard the
//! payload, and matrix payloads declare their layout (dense row-major or
//! columnar sparse triplets). Values are written as JSON numbers, which
//! round-trip `f64` exactly; non-finite values are rejected at write time
//! because JSON cannot represent them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::operator::{Factor, LowRankOperator};
use crate::problems::ProblemSpec;
use crate::tensor::{CanonicalTensor, Gram, RankOneMetric};
use crate::{Error, Result};

pub const TENSOR_FORMAT: &str = "canonical-tensor";
pub const OPERATOR_FORMAT: &str = "kron-operator";
pub const METRIC_FORMAT: &str = "rank-one-metric";
pub const PROBLEM_FORMAT: &str = "problem-descriptor";
pub const FORMAT_VERSION: u32 = 1;

/// Dense matrix payload in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrixData {
    fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(finite(m[(i, j)])?);
            }
        }
        Ok(Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        })
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::InvalidConfig(format!(
                "dense payload has {} values for a {}x{} matrix",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Matrix payload with its storage layout declared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "kebab-case")]
pub enum MatrixData {
    DenseRowMajor(DenseMatrixData),
    /// Columnar triplets; duplicate entries sum on read.
    SparseTriplets {
        rows: usize,
        cols: usize,
        row_idx: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    },
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidConfig(format!(
            "non-finite value {v} cannot be serialized to JSON"
        )))
    }
}

fn factor_to_data(f: &Factor) -> Result<MatrixData> {
    match f {
        Factor::Dense(m) => Ok(MatrixData::DenseRowMajor(DenseMatrixData::from_matrix(m)?)),
        Factor::Sparse(m) => {
            let mut row_idx = Vec::with_capacity(m.nnz());
            let mut col_idx = Vec::with_capacity(m.nnz());
            let mut values = Vec::with_capacity(m.nnz());
            for (row, vec) in m.outer_iterator().enumerate() {
                for (col, &v) in vec.iter() {
                    row_idx.push(row);
                    col_idx.push(col);
                    values.push(finite(v)?);
                }
            }
            Ok(MatrixData::SparseTriplets {
                rows: m.rows(),
                cols: m.cols(),
                row_idx,
                col_idx,
                values,
            })
        }
    }
}

fn data_to_factor(d: &MatrixData) -> Result<Factor> {
    match d {
        MatrixData::DenseRowMajor(dense) => Ok(Factor::Dense(dense.to_matrix()?)),
        MatrixData::SparseTriplets {
            rows,
            cols,
            row_idx,
            col_idx,
            values,
        } => {
            if row_idx.len() != values.len() || col_idx.len() != values.len() {
                return Err(Error::InvalidConfig(format!(
                    "triplet arrays disagree in length: {} rows, {} cols, {} values",
                    row_idx.len(),
                    col_idx.len(),
                    values.len()
                )));
            }
            let mut tri = TriMat::new((*rows, *cols));
            for ((&r, &c), &v) in row_idx.iter().zip(col_idx).zip(values) {
                if r >= *rows || c >= *cols {
                    return Err(Error::InvalidConfig(format!(
                        "triplet ({r}, {c}) outside a {rows}x{cols} matrix"
                    )));
                }
                tri.add_triplet(r, c, v);
            }
            let csr: CsMat<f64> = tri.to_csr();
            Ok(Factor::Sparse(csr))
        }
    }
}

fn check_header(format: &str, expected: &'static str, version: u32) -> Result<()> {
    if format != expected {
        return Err(Error::InvalidConfig(format!(
            "expected format {expected:?}, found {format:?}"
        )));
    }
    if version != FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported {expected} version {version} (supported: {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

/// On-disk form of a [`CanonicalTensor`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorFile {
    pub format: String,
    pub version: u32,
    pub order: usize,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub factors: Vec<DenseMatrixData>,
}

impl TensorFile {
    pub fn from_tensor(t: &CanonicalTensor) -> Result<Self> {
        Ok(Self {
            format: TENSOR_FORMAT.into(),
            version: FORMAT_VERSION,
            order: t.order(),
            dims: t.dims(),
            rank: t.rank(),
            factors: t
                .factors()
                .iter()
                .map(DenseMatrixData::from_matrix)
                .collect::<Result<_>>()?,
        })
    }

    pub fn into_tensor(self) -> Result<CanonicalTensor> {
        check_header(&self.format, TENSOR_FORMAT, self.version)?;
        if self.factors.len() != self.order || self.dims.len() != self.order {
            return Err(Error::InvalidConfig(format!(
                "tensor header declares order {} but carries {} dims and {} factors",
                self.order,
                self.dims.len(),
                self.factors.len()
            )));
        }
        let factors = self
            .factors
            .iter()
            .map(DenseMatrixData::to_matrix)
            .collect::<Result<Vec<_>>>()?;
        for (mu, f) in factors.iter().enumerate() {
            if f.nrows() != self.dims[mu] || f.ncols() != self.rank {
                return Err(Error::InvalidConfig(format!(
                    "factor {mu} is {}x{}, expected {}x{}",
                    f.nrows(),
                    f.ncols(),
                    self.dims[mu],
                    self.rank
                )));
            }
        }
        if self.rank == 0 {
            return Ok(CanonicalTensor::zeros(&self.dims));
        }
        CanonicalTensor::from_factors(factors)
    }
}

/// On-disk form of a [`LowRankOperator`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorFile {
    pub format: String,
    pub version: u32,
    pub order: usize,
    pub row_dims: Vec<usize>,
    pub col_dims: Vec<usize>,
    pub num_terms: usize,
    pub terms: Vec<Vec<MatrixData>>,
}

impl OperatorFile {
    pub fn from_operator(a: &LowRankOperator) -> Result<Self> {
        Ok(Self {
            format: OPERATOR_FORMAT.into(),
            version: FORMAT_VERSION,
            order: a.order(),
            row_dims: a.row_dims().to_vec(),
            col_dims: a.col_dims().to_vec(),
            num_terms: a.num_terms(),
            terms: a
                .terms()
                .iter()
                .map(|term| term.iter().map(factor_to_data).collect())
                .collect::<Result<_>>()?,
        })
    }

    pub fn into_operator(self) -> Result<LowRankOperator> {
        check_header(&self.format, OPERATOR_FORMAT, self.version)?;
        if self.terms.len() != self.num_terms {
            return Err(Error::InvalidConfig(format!(
                "operator header declares {} terms but carries {}",
                self.num_terms,
                self.terms.len()
            )));
        }
        let terms = self
            .terms
            .iter()
            .map(|term| term.iter().map(data_to_factor).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let op = LowRankOperator::new(terms)?;
        if op.row_dims() != self.row_dims || op.col_dims() != self.col_dims {
            return Err(Error::InvalidConfig(format!(
                "operator payload has dims {:?} -> {:?}, header says {:?} -> {:?}",
                op.col_dims(),
                op.row_dims(),
                self.col_dims,
                self.row_dims
            )));
        }
        Ok(op)
    }
}

/// On-disk form of a Gram factor of a [`RankOneMetric`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GramData {
    Identity { n: usize },
    Diagonal { values: Vec<f64> },
    Dense { matrix: DenseMatrixData },
}

/// On-disk form of a [`RankOneMetric`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricFile {
    pub format: String,
    pub version: u32,
    pub dims: Vec<usize>,
    pub grams: Vec<GramData>,
}

impl MetricFile {
    pub fn from_metric(m: &RankOneMetric) -> Result<Self> {
        let grams = (0..m.order())
            .map(|mu| match m.gram(mu) {
                Gram::Identity(n) => Ok(GramData::Identity { n: *n }),
                Gram::Diagonal(d) => Ok(GramData::Diagonal {
                    values: d.iter().copied().map(finite).collect::<Result<_>>()?,
                }),
                Gram::Dense { matrix, .. } => Ok(GramData::Dense {
                    matrix: DenseMatrixData::from_matrix(matrix)?,
                }),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            format: METRIC_FORMAT.into(),
            version: FORMAT_VERSION,
            dims: m.dims(),
            grams,
        })
    }

    pub fn into_metric(self) -> Result<RankOneMetric> {
        check_header(&self.format, METRIC_FORMAT, self.version)?;
        let grams = self
            .grams
            .iter()
            .map(|g| match g {
                GramData::Identity { n } => Ok(Gram::Identity(*n)),
                GramData::Diagonal { values } => {
                    Ok(Gram::Diagonal(DVector::from_vec(values.clone())))
                }
                GramData::Dense { matrix } => RankOneMetric::dense_gram(matrix.to_matrix()?),
            })
            .collect::<Result<Vec<_>>>()?;
        let metric = RankOneMetric::new(grams)?;
        if metric.dims() != self.dims {
            return Err(Error::InvalidConfig(format!(
                "metric payload has dims {:?}, header says {:?}",
                metric.dims(),
                self.dims
            )));
        }
        Ok(metric)
    }
}

/// On-disk envelope of a [`ProblemSpec`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemFile {
    pub format: String,
    pub version: u32,
    pub problem: ProblemSpec,
}

impl ProblemFile {
    pub fn from_spec(spec: &ProblemSpec) -> Self {
        Self {
            format: PROBLEM_FORMAT.into(),
            version: FORMAT_VERSION,
            problem: spec.clone(),
        }
    }

    pub fn into_spec(self) -> Result<ProblemSpec> {
        check_header(&self.format, PROBLEM_FORMAT, self.version)?;
        Ok(self.problem)
    }
}

/// Writes any serializable value as pretty-printed JSON.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_tensor(path: &Path, t: &CanonicalTensor) -> Result<()> {
    save_json(path, &TensorFile::from_tensor(t)?)
}

pub fn read_tensor(path: &Path) -> Result<CanonicalTensor> {
    load_json::<TensorFile>(path)?.into_tensor()
}

pub fn write_operator(path: &Path, a: &LowRankOperator) -> Result<()> {
    save_json(path, &OperatorFile::from_operator(a)?)
}

pub fn read_operator(path: &Path) -> Result<LowRankOperator> {
    load_json::<OperatorFile>(path)?.into_operator()
}

pub fn write_metric(path: &Path, m: &RankOneMetric) -> Result<()> {
    save_json(path, &MetricFile::from_metric(m)?)
}

pub fn read_metric(path: &Path) -> Result<RankOneMetric> {
    load_json::<MetricFile>(path)?.into_metric()
}

pub fn write_problem(path: &Path, spec: &ProblemSpec) -> Result<()> {
    save_json(path, &ProblemFile::from_spec(spec))
}

pub fn read_problem(path: &Path) -> Result<ProblemSpec> {
    load_json::<ProblemFile>(path)?.into_spec()
}
