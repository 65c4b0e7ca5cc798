//! Datasets, the libsvm text format, synthetic tasks and minibatching.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Rows are kept dense up to this many features; wider data stays sparse.
pub const DENSE_DIM_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense {
        data: Vec<f64>,
    },
    /// CSR layout with zero-based column indices.
    Sparse {
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    },
}

/// Borrowed view of one example's features.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a> {
    Dense(&'a [f64]),
    Sparse {
        indices: &'a [usize],
        values: &'a [f64],
    },
}

impl Row<'_> {
    pub fn dot(&self, w: &[f64]) -> f64 {
        match self {
            Row::Dense(x) => x.iter().zip(w).map(|(a, b)| a * b).sum(),
            Row::Sparse { indices, values } => {
                indices.iter().zip(*values).map(|(&j, v)| v * w[j]).sum()
            }
        }
    }

    /// `out += alpha·row`
    pub fn axpy(&self, alpha: f64, out: &mut [f64]) {
        match self {
            Row::Dense(x) => out.iter_mut().zip(*x).for_each(|(o, v)| *o += alpha * v),
            Row::Sparse { indices, values } => {
                for (&j, v) in indices.iter().zip(*values) {
                    out[j] += alpha * v;
                }
            }
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.axpy(1.0, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Features,
    pub labels: Vec<f64>,
    pub dim: usize,
}

impl Dataset {
    pub fn empty() -> Self {
        Self {
            features: Features::Dense { data: Vec::new() },
            labels: Vec::new(),
            dim: 0,
        }
    }

    pub fn from_dense(data: Vec<f64>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if data.len() != labels.len() * dim {
            return Err(Error::Dimension {
                context: "dense feature matrix",
                expected: labels.len() * dim,
                got: data.len(),
            });
        }
        Ok(Self {
            features: Features::Dense { data },
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        match &self.features {
            Features::Dense { data } => Row::Dense(&data[i * self.dim..(i + 1) * self.dim]),
            Features::Sparse {
                indptr,
                indices,
                values,
            } => {
                let (a, b) = (indptr[i], indptr[i + 1]);
                Row::Sparse {
                    indices: &indices[a..b],
                    values: &values[a..b],
                }
            }
        }
    }

    /// Remaps labels to class indices `0..k` in ascending label order and
    /// returns `k`.
    pub fn to_class_indices(&mut self) -> usize {
        let mut distinct: Vec<f64> = self.labels.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for y in &mut self.labels {
            *y = distinct.partition_point(|d| d < y) as f64;
        }
        distinct.len()
    }

    /// Maps labels to `±1`: positive labels to `+1`, everything else to `−1`.
    pub fn to_signed_labels(&mut self) {
        for y in &mut self.labels {
            *y = if *y > 0.0 { 1.0 } else { -1.0 };
        }
    }

    pub fn full_batch(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Parses libsvm text: `label idx:val idx:val …` with 1-based ascending
/// indices. Blank lines and `#` comments are skipped. `dim_override` fixes the
/// feature dimension instead of using the largest index seen.
pub fn parse_libsvm(text: &str, dim_override: Option<usize>) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut indptr = vec![0usize];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut max_index = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid label '{label_tok}'"),
        })?;
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected index:value, got '{tok}'"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid feature index '{idx}'"),
            })?;
            if idx == 0 || idx <= prev {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "feature indices must be 1-based and ascending, got {idx} after {prev}"
                    ),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid feature value '{val}'"),
            })?;
            prev = idx;
            indices.push(idx - 1);
            values.push(val);
        }
        max_index = max_index.max(prev);
        labels.push(label);
        indptr.push(indices.len());
    }

    if labels.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no examples in input".into(),
        });
    }
    let dim = match dim_override {
        Some(d) if d < max_index => {
            return Err(Error::Parse {
                line: 0,
                message: format!("feature index {max_index} exceeds declared dimension {d}"),
            })
        }
        Some(d) => d,
        None => max_index,
    };

    let features = if dim <= DENSE_DIM_LIMIT {
        let mut data = vec![0.0; labels.len() * dim];
        for i in 0..labels.len() {
            for k in indptr[i]..indptr[i + 1] {
                data[i * dim + indices[k]] = values[k];
            }
        }
        Features::Dense { data }
    } else {
        Features::Sparse {
            indptr,
            indices,
            values,
        }
    };
    Ok(Dataset {
        features,
        labels,
        dim,
    })
}

pub fn load_libsvm(path: impl AsRef<Path>, dim_override: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(&text, dim_override)
}

/// Serializes non-zero features with shortest round-trip float formatting.
pub fn to_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..ds.len() {
        write!(out, "{}", ds.labels[i]).unwrap();
        let dense = ds.row(i).to_dense(ds.dim);
        for (j, v) in dense.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            write!(out, " {}:{}", j + 1, v).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_libsvm(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_libsvm(ds)).map_err(|e| Error::io(path, e))
}

/// Gaussian features with `±1` labels from a random hyperplane through the
/// origin; each label is flipped independently with probability `noise`.
pub fn synth_logistic(seed: u64, n_examples: usize, dim: usize, noise: f64) -> Result<Dataset> {
    if n_examples == 0 || dim == 0 {
        return Err(Error::Precondition(
            "synthetic dataset needs n >= 1 and dim >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Precondition(format!(
            "label noise {noise} outside [0, 1]"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let truth: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
    let mut data = Vec::with_capacity(n_examples * dim);
    let mut labels = Vec::with_capacity(n_examples);
    for _ in 0..n_examples {
        let start = data.len();
        data.extend((0..dim).map(|_| rng.gaussian()));
        let margin: f64 = data[start..].iter().zip(&truth).map(|(a, b)| a * b).sum();
        let clean = if margin >= 0.0 { 1.0 } else { -1.0 };
        let flip = rng.next_f64() < noise;
        labels.push(if flip { -clean } else { clean });
    }
    Dataset::from_dense(data, labels, dim)
}

/// The batches of one epoch: a seeded permutation of `0..n` cut into chunks of
/// `batch_size`, keeping the final partial chunk.
pub fn minibatch_iter(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::Precondition(format!(
            "batch size {batch_size} must be in 1..={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::stream(seed, epoch).shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
