//! Observed-data layout: baseline confounders `X`, treatment `A`, per-level
//! confounder blocks `Z_1..Z_K`, monotone mediators `M_1..M_K`, outcome `Y`.
//!
//! A unit's *level* is the length of its leading run of ones in
//! `(A, M_1, ..., M_K)`. A unit has history `1̄_j` exactly when its level is at
//! least `j`, and block `Z_j` is meaningful only for such units.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub treatment_column: String,
    /// Mediators in causal order.
    pub mediator_columns: Vec<String>,
    pub baseline_columns: Vec<String>,
    /// One list per mediator; block `k` holds the confounders of `M_k`.
    pub z_block_columns: Vec<Vec<String>>,
    pub outcome_column: String,
    #[serde(default)]
    pub weight_column: Option<String>,
}

impl ColumnSchema {
    /// Generic names for a dataset built from arrays.
    pub fn generic(p0: usize, block_sizes: &[usize]) -> Self {
        ColumnSchema {
            treatment_column: "a".into(),
            mediator_columns: (1..=block_sizes.len()).map(|k| format!("m{k}")).collect(),
            baseline_columns: (1..=p0).map(|j| format!("x{j}")).collect(),
            z_block_columns: block_sizes
                .iter()
                .enumerate()
                .map(|(k, &p)| (1..=p).map(|j| format!("z{}_{j}", k + 1)).collect())
                .collect(),
            outcome_column: "y".into(),
            weight_column: None,
        }
    }

    pub fn k(&self) -> usize {
        self.mediator_columns.len()
    }

    pub fn check(&self) -> Result<()> {
        if self.z_block_columns.len() != self.mediator_columns.len() {
            return Err(Error::Validation(format!(
                "schema lists {} mediators but {} z blocks",
                self.mediator_columns.len(),
                self.z_block_columns.len()
            )));
        }
        Ok(())
    }

    fn all_columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = vec![self.treatment_column.as_str()];
        cols.extend(self.mediator_columns.iter().map(String::as_str));
        cols.extend(self.baseline_columns.iter().map(String::as_str));
        for b in &self.z_block_columns {
            cols.extend(b.iter().map(String::as_str));
        }
        cols.push(self.outcome_column.as_str());
        if let Some(w) = &self.weight_column {
            cols.push(w.as_str());
        }
        cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialDataset {
    pub x: Array2<f64>,
    pub a: Vec<u8>,
    pub z_blocks: Vec<Array2<f64>>,
    pub m: Vec<Vec<u8>>,
    pub y: Vec<f64>,
    pub weights: Vec<f64>,
    pub schema: ColumnSchema,
}

impl SequentialDataset {
    /// Builds a dataset from arrays, checking shapes only. Use
    /// [`SequentialDataset::validate`] for the domain invariants.
    pub fn new(
        x: Array2<f64>,
        a: Vec<u8>,
        z_blocks: Vec<Array2<f64>>,
        m: Vec<Vec<u8>>,
        y: Vec<f64>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::Validation("dataset has no units".into()));
        }
        if x.nrows() != n || y.len() != n {
            return Err(Error::Validation(format!(
                "row mismatch: a has {n}, x has {}, y has {}",
                x.nrows(),
                y.len()
            )));
        }
        if z_blocks.len() != m.len() {
            return Err(Error::Validation(format!(
                "{} mediators but {} z blocks",
                m.len(),
                z_blocks.len()
            )));
        }
        for (k, (z, mk)) in z_blocks.iter().zip(&m).enumerate() {
            if z.nrows() != n || mk.len() != n {
                return Err(Error::Validation(format!("level {} has wrong row count", k + 1)));
            }
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n {
            return Err(Error::Validation("weights have wrong length".into()));
        }
        let sizes: Vec<usize> = z_blocks.iter().map(|z| z.ncols()).collect();
        let schema = ColumnSchema::generic(x.ncols(), &sizes);
        Ok(SequentialDataset {
            x,
            a,
            z_blocks,
            m,
            y,
            weights,
            schema,
        })
    }

    pub fn with_schema(mut self, schema: ColumnSchema) -> Result<Self> {
        schema.check()?;
        let sizes_ok = schema.baseline_columns.len() == self.x.ncols()
            && schema.k() == self.k()
            && schema
                .z_block_columns
                .iter()
                .zip(&self.z_blocks)
                .all(|(c, z)| c.len() == z.ncols());
        if !sizes_ok {
            return Err(Error::Validation("schema does not match dataset shape".into()));
        }
        self.schema = schema;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// Number of mediators.
    pub fn k(&self) -> usize {
        self.m.len()
    }

    /// `M_l` for unit `i`, with `M_0 = A`.
    pub fn indicator(&self, l: usize, i: usize) -> u8 {
        if l == 0 {
            self.a[i]
        } else {
            self.m[l - 1][i]
        }
    }

    /// Length of the leading run of ones in `(A, M_1, ..., M_K)`.
    pub fn level(&self, i: usize) -> usize {
        let mut l = 0;
        while l <= self.k() && self.indicator(l, i) == 1 {
            l += 1;
        }
        l
    }

    /// Whether unit `i` has history `1̄_j`, i.e. `A = M_1 = ... = M_{j-1} = 1`.
    pub fn reached(&self, i: usize, j: usize) -> bool {
        self.level(i) >= j
    }

    /// Number of feature columns at level `j`: `[X, Z_1, ..., Z_j]`.
    pub fn feature_width(&self, j: usize) -> usize {
        self.x.ncols() + self.z_blocks[..j].iter().map(|z| z.ncols()).sum::<usize>()
    }

    /// Feature matrix `[X, Z_1, ..., Z_j]` restricted to `rows`.
    pub fn features(&self, j: usize, rows: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), self.feature_width(j)));
        for (r, &i) in rows.iter().enumerate() {
            let mut c = 0;
            for v in self.x.row(i) {
                out[[r, c]] = *v;
                c += 1;
            }
            for z in &self.z_blocks[..j] {
                for v in z.row(i) {
                    out[[r, c]] = *v;
                    c += 1;
                }
            }
        }
        out
    }

    /// Dataset made of the given rows (repeats allowed).
    pub fn subset(&self, rows: &[usize]) -> SequentialDataset {
        let pick_u8 = |v: &Vec<u8>| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pick_f = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        SequentialDataset {
            x: self.x.select(Axis(0), rows),
            a: pick_u8(&self.a),
            z_blocks: self.z_blocks.iter().map(|z| z.select(Axis(0), rows)).collect(),
            m: self.m.iter().map(pick_u8).collect(),
            y: pick_f(&self.y),
            weights: pick_f(&self.weights),
            schema: self.schema.clone(),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let n = self.n();
        let mut report = ValidationReport::default();
        for i in 0..n {
            let binary = (0..=self.k()).all(|l| self.indicator(l, i) <= 1);
            if !binary {
                report.non_binary.push(i);
            }
            let finite = self.y[i].is_finite()
                && self.x.row(i).iter().all(|v| v.is_finite())
                && self.z_blocks.iter().all(|z| z.row(i).iter().all(|v| v.is_finite()));
            if !finite {
                report.non_finite.push(i);
            }
            if !(self.weights[i] >= 0.0 && self.weights[i].is_finite()) {
                report.bad_weight.push(i);
            }
        }
        for k in 1..=self.k() {
            let units: Vec<usize> = (0..n)
                .filter(|&i| self.indicator(k, i) > self.indicator(k - 1, i))
                .collect();
            if !units.is_empty() {
                report.monotone.push(MonotoneViolation { k, units });
            }
        }
        report
    }

    /// Writes the dataset with its schema's column names. Finite values
    /// round-trip bit-exactly through [`from_csv`].
    pub fn to_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.schema.all_columns())?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = Vec::new();
            rec.push(self.a[i].to_string());
            for mk in &self.m {
                rec.push(mk[i].to_string());
            }
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            for z in &self.z_blocks {
                rec.extend(z.row(i).iter().map(|v| v.to_string()));
            }
            rec.push(self.y[i].to_string());
            if self.schema.weight_column.is_some() {
                rec.push(self.weights[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotoneViolation {
    /// `k` such that `M_k > M_{k-1}` (with `M_0 = A`).
    pub k: usize,
    pub units: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub non_binary: Vec<usize>,
    pub non_finite: Vec<usize>,
    pub bad_weight: Vec<usize>,
    pub monotone: Vec<MonotoneViolation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.non_binary.is_empty()
            && self.non_finite.is_empty()
            && self.bad_weight.is_empty()
            && self.monotone.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(serde_json::to_string(&self)?))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotonePolicy {
    Reject,
    Backfill,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped: usize,
    pub backfilled: usize,
}

/// Unparsed CSV contents.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let headers = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(RawTable { headers, rows })
    }
}

/// Reads a CSV file. Rows missing a used value are dropped and counted; no
/// monotonicity policy is applied (see [`SequentialDataset::validate`]).
pub fn from_csv<P: AsRef<Path>>(
    path: P,
    schema: &ColumnSchema,
) -> Result<(SequentialDataset, LoadReport)> {
    let raw = RawTable::read(path)?;
    parse_table(&raw, schema, None)
}

/// Parses raw records and applies the monotone coding policy. `Backfill` sets
/// every transition preceding an observed `M_k = 1` to 1; `Reject` fails with
/// the offending row indices.
pub fn enforce_monotone_coding(
    raw: &RawTable,
    schema: &ColumnSchema,
    policy: MonotonePolicy,
) -> Result<(SequentialDataset, LoadReport)> {
    parse_table(raw, schema, Some(policy))
}

/// Backfill applied to indicator vectors in place. Returns the number of
/// units changed.
pub fn backfill(a: &mut [u8], m: &mut [Vec<u8>]) -> usize {
    let mut changed = 0;
    for i in 0..a.len() {
        let mut chain: Vec<u8> = std::iter::once(a[i]).chain(m.iter().map(|mk| mk[i])).collect();
        if backfill_chain(&mut chain) {
            changed += 1;
            a[i] = chain[0];
            for (mk, v) in m.iter_mut().zip(&chain[1..]) {
                mk[i] = *v;
            }
        }
    }
    changed
}

/// Sets every entry before the last 1 in `(A, M_1, ..., M_K)` to 1.
fn backfill_chain(chain: &mut [u8]) -> bool {
    let Some(last) = chain.iter().rposition(|&v| v == 1) else {
        return false;
    };
    let mut touched = false;
    for v in &mut chain[..last] {
        if *v != 1 {
            *v = 1;
            touched = true;
        }
    }
    touched
}

fn parse_table(
    raw: &RawTable,
    schema: &ColumnSchema,
    policy: Option<MonotonePolicy>,
) -> Result<(SequentialDataset, LoadReport)> {
    schema.check()?;
    let index: HashMap<&str, usize> = raw
        .headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let col = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let a_col = col(&schema.treatment_column)?;
    let m_cols = schema
        .mediator_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let x_cols = schema
        .baseline_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let z_cols = schema
        .z_block_columns
        .iter()
        .map(|b| b.iter().map(|c| col(c)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let y_col = col(&schema.outcome_column)?;
    let w_col = schema.weight_column.as_deref().map(col).transpose()?;

    let big_k = schema.k();
    let mut report = LoadReport {
        rows_read: raw.rows.len(),
        ..Default::default()
    };
    let mut violators = Vec::new();

    let mut a = Vec::new();
    let mut m: Vec<Vec<u8>> = vec![Vec::new(); big_k];
    let mut xs = Vec::new();
    let mut zs: Vec<Vec<f64>> = vec![Vec::new(); big_k];
    let mut y = Vec::new();
    let mut w = Vec::new();

    'rows: for (r, row) in raw.rows.iter().enumerate() {
        let cell = |c: usize| row.get(c).map(String::as_str).unwrap_or("");
        let mut ind = Vec::with_capacity(big_k + 1);
        for (c, name) in std::iter::once((a_col, &schema.treatment_column))
            .chain(m_cols.iter().copied().zip(&schema.mediator_columns))
        {
            match parse_indicator(cell(c), r, name)? {
                Some(v) => ind.push(v),
                None => {
                    report.dropped += 1;
                    continue 'rows;
                }
            }
        }
        let monotone = ind.windows(2).all(|p| p[1] <= p[0]);
        if !monotone {
            match policy {
                Some(MonotonePolicy::Reject) => {
                    violators.push(r);
                    continue;
                }
                Some(MonotonePolicy::Backfill) => {
                    backfill_chain(&mut ind);
                    report.backfilled += 1;
                }
                None => {}
            }
        }
        let mut xrow = Vec::with_capacity(x_cols.len());
        for (&c, name) in x_cols.iter().zip(&schema.baseline_columns) {
            match parse_number(cell(c), r, name)? {
                Some(v) => xrow.push(v),
                None => {
                    report.dropped += 1;
                    continue 'rows;
                }
            }
        }
        let mut zrow: Vec<Vec<f64>> = Vec::with_capacity(big_k);
        for (k, (cols, names)) in z_cols.iter().zip(&schema.z_block_columns).enumerate() {
            // Block k+1 is used only when M_k = 1 (M_0 = A).
            let eligible = ind[k] == 1 && ind[..k].iter().all(|&v| v == 1);
            let mut block = Vec::with_capacity(cols.len());
            for (&c, name) in cols.iter().zip(names) {
                match parse_number(cell(c), r, name)? {
                    Some(v) => block.push(v),
                    None if !eligible => block.push(0.0),
                    None => {
                        report.dropped += 1;
                        continue 'rows;
                    }
                }
            }
            zrow.push(block);
        }
        let yv = match parse_number(cell(y_col), r, &schema.outcome_column)? {
            Some(v) => v,
            None => {
                report.dropped += 1;
                continue 'rows;
            }
        };
        let wv = match w_col {
            Some(c) => match parse_number(cell(c), r, schema.weight_column.as_deref().unwrap())? {
                Some(v) => v,
                None => {
                    report.dropped += 1;
                    continue 'rows;
                }
            },
            None => 1.0,
        };
        a.push(ind[0]);
        for k in 0..big_k {
            m[k].push(ind[k + 1]);
            zs[k].extend_from_slice(&zrow[k]);
        }
        xs.extend_from_slice(&xrow);
        y.push(yv);
        w.push(wv);
    }
    if !violators.is_empty() {
        return Err(Error::Monotonicity { units: violators });
    }
    let n = a.len();
    report.rows_kept = n;
    let x = Array2::from_shape_vec((n, x_cols.len()), xs)
        .map_err(|e| Error::Validation(e.to_string()))?;
    let z_blocks = zs
        .into_iter()
        .zip(&z_cols)
        .map(|(v, c)| Array2::from_shape_vec((n, c.len()), v))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Validation(e.to_string()))?;
    let ds = SequentialDataset::new(x, a, z_blocks, m, y, Some(w))?.with_schema(schema.clone())?;
    Ok((ds, report))
}

fn parse_number(s: &str, row: usize, column: &str) -> Result<Option<f64>> {
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        value: s.to_string(),
    })
}

fn parse_indicator(s: &str, row: usize, column: &str) -> Result<Option<u8>> {
    match parse_number(s, row, column)? {
        None => Ok(None),
        Some(v) if v == 0.0 => Ok(Some(0)),
        Some(v) if v == 1.0 => Ok(Some(1)),
        Some(_) => Err(Error::Parse {
            row,
            column: column.to_string(),
            value: s.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn k3(a: u8, m: [u8; 3]) -> SequentialDataset {
        SequentialDataset::new(
            array![[0.0]],
            vec![a],
            vec![Array2::zeros((1, 0)); 3],
            m.iter().map(|&v| vec![v]).collect(),
            vec![0.0],
            None,
        )
        .unwrap()
    }

    #[test]
    fn validate_examples() {
        assert!(k3(1, [1, 0, 0]).validate().is_empty());
        let r = k3(0, [1, 0, 0]).validate();
        assert_eq!(r.monotone, vec![MonotoneViolation { k: 1, units: vec![0] }]);
        let r = k3(1, [0, 1, 0]).validate();
        assert_eq!(r.monotone, vec![MonotoneViolation { k: 2, units: vec![0] }]);
    }

    #[test]
    fn levels_and_reach() {
        let d = k3(1, [1, 0, 0]);
        assert_eq!(d.level(0), 2);
        assert!(d.reached(0, 2));
        assert!(!d.reached(0, 3));
        assert_eq!(k3(0, [0, 0, 0]).level(0), 0);
        assert_eq!(k3(1, [1, 1, 1]).level(0), 4);
    }

    #[test]
    fn backfill_examples() {
        let mut a = vec![0, 1];
        let mut m = vec![vec![1, 1], vec![1, 1], vec![0, 1]];
        assert_eq!(backfill(&mut a, &mut m), 1);
        assert_eq!(a, vec![1, 1]);
        assert_eq!(m, vec![vec![1, 1], vec![1, 1], vec![0, 1]]);
    }

    #[test]
    fn features_stack_blocks() {
        let d = SequentialDataset::new(
            array![[1.0], [2.0]],
            vec![1, 1],
            vec![array![[3.0, 4.0], [5.0, 6.0]], Array2::zeros((2, 0))],
            vec![vec![1, 0], vec![0, 0]],
            vec![0.0, 0.0],
            None,
        )
        .unwrap();
        assert_eq!(d.features(0, &[1]), array![[2.0]]);
        assert_eq!(d.features(2, &[1, 0]), array![[2.0, 5.0, 6.0], [1.0, 3.0, 4.0]]);
    }
}
