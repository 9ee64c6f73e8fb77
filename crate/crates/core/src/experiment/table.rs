use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version of the result-table columns.
pub const SCHEMA_VERSION: u32 = 1;

/// One (n, replicate, λ) point. Empty cells mean "not computed".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub scenario: String,
    pub family: String,
    pub n: usize,
    pub p: usize,
    pub replicate: usize,
    pub seed: u64,
    pub lambda: f64,
    pub budget: f64,
    pub noise_variance: f64,
    pub theta_norm_sq: f64,
    pub signal_energy: f64,
    pub std_bias: Option<f64>,
    pub std_variance: Option<f64>,
    pub std_total: Option<f64>,
    pub norm_bias: Option<f64>,
    pub norm_variance: Option<f64>,
    pub norm_total: Option<f64>,
    pub adv_lower: Option<f64>,
    pub adv_upper: Option<f64>,
    pub adv_exact_gaussian: Option<f64>,
    pub adv_exact_gaussian_se: Option<f64>,
    /// Minimum-norm interpolator (λ = 0) on the same design.
    pub std_total_ref: Option<f64>,
    pub norm_total_ref: Option<f64>,
    pub tradeoff_objective: Option<f64>,
    pub mc_std: Option<f64>,
    pub mc_std_se: Option<f64>,
    pub mc_adv: Option<f64>,
    pub mc_adv_se: Option<f64>,
    pub mc_norm: Option<f64>,
    pub mc_norm_se: Option<f64>,
    pub k_star: Option<usize>,
    pub w_star: Option<usize>,
    pub r_k_star: Option<f64>,
    pub big_r_k_star: Option<f64>,
    pub regime: Option<String>,
    pub srisk_upper: Option<f64>,
    pub srisk_lower: Option<f64>,
    pub norm_lower: Option<f64>,
    pub delta_lambda: Option<f64>,
    pub bound_note: Option<String>,
    pub ntk_width: Option<usize>,
    pub ntk_grad_norm_sq: Option<f64>,
    pub ntk_grad_norm_sq_se: Option<f64>,
    pub ntk_grad_norm_sq_init: Option<f64>,
    pub ntk_grad_norm_sq_init_se: Option<f64>,
    pub ntk_adv_proxy: Option<f64>,
    pub ntk_std_se: Option<f64>,
    pub ntk_param_distance: Option<f64>,
    pub ntk_solve_residual: Option<f64>,
    pub ntk_pga: Option<f64>,
    pub ntk_pga_se: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub schema_version: u32,
    pub rows: Vec<ResultRow>,
}

#[derive(Serialize)]
struct JsonOut<'a, S: Serialize> {
    schema_version: u32,
    rows: &'a [ResultRow],
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a S>,
}

impl ResultsTable {
    pub fn new(rows: Vec<ResultRow>) -> Self {
        ResultsTable {
            schema_version: SCHEMA_VERSION,
            rows,
        }
    }

    pub fn to_csv<W: Write>(&self, mut out: W) -> Result<()> {
        if self.rows.is_empty() {
            // Header only, so empty tables still carry the schema.
            let mut w = csv::Writer::from_writer(Vec::new());
            w.serialize(ResultRow::default()).map_err(csv_err)?;
            let buf = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
            let end = buf
                .iter()
                .position(|&b| b == b'\n')
                .map_or(buf.len(), |i| i + 1);
            out.write_all(&buf[..end])?;
            return Ok(());
        }
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.to_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ResultRow>, _>>()
            .map_err(csv_err)?;
        if let Some(v) = rows
            .iter()
            .map(|r| r.schema_version)
            .find(|&v| v != SCHEMA_VERSION)
        {
            return Err(Error::Parse(format!(
                "schema version {v}, expected {SCHEMA_VERSION}"
            )));
        }
        Ok(ResultsTable::new(rows))
    }

    pub fn to_json<S: Serialize>(&self, summary: Option<&S>) -> Result<String> {
        let out = JsonOut {
            schema_version: self.schema_version,
            rows: &self.rows,
            summary,
        };
        serde_json::to_string_pretty(&out).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Writes the CSV at `path` and the JSON at the `.json` sibling.
    pub fn write<S: Serialize>(&self, path: &Path, summary: Option<&S>) -> Result<()> {
        let csv = self.to_csv_string()?;
        write_atomic(path, csv.as_bytes())?;
        let json = self.to_json(summary)?;
        write_atomic(&json_sibling(path), json.as_bytes())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub(crate) fn json_sibling(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes through a temporary file in the target directory, then renames,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Median; the mean of the two middle values for even counts, NaN if empty.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 {
        s[k]
    } else {
        0.5 * (s[k - 1] + s[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let row = ResultRow {
            schema_version: SCHEMA_VERSION,
            scenario: "example1".into(),
            n: 4,
            lambda: 0.25,
            std_total: Some(1.5),
            k_star: Some(3),
            bound_note: Some("a, b".into()),
            ..ResultRow::default()
        };
        let t = ResultsTable::new(vec![row.clone(), row]);
        let s = t.to_csv_string().unwrap();
        assert!(s.starts_with("schema_version,scenario,family,n,p,replicate,seed,lambda,"));
        assert!(s.lines().next().unwrap().ends_with(",error"));
        let back = ResultsTable::from_csv(s.as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn empty_table_keeps_header() {
        let s = ResultsTable::new(vec![]).to_csv_string().unwrap();
        assert_eq!(s.lines().count(), 1);
        assert!(s.starts_with("schema_version,"));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn atomic_write_replaces() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("out.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(d.path()).unwrap().count(), 1);
    }
}
