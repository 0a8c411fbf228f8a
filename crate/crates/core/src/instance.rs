//! Problem data: the return panel, its centering, preference weights and
//! the on-disk panel formats.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MvskError, Result};
use crate::linalg::RowMatrix;

/// Raw returns `R` (T periods x n assets) together with the sample mean and
/// the centered matrix `A = R - 1 mu^T`.
///
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct ReturnPanel {
    raw: RowMatrix,
    mu: Vec<f64>,
    centered: RowMatrix,
    asset_ids: Option<Vec<String>>,
}

impl ReturnPanel {
    /// Number of periods `T`.
    pub fn periods(&self) -> usize {
        self.raw.rows()
    }

    /// Number of assets `n`.
    pub fn assets(&self) -> usize {
        self.raw.cols()
    }

    pub fn raw(&self) -> &RowMatrix {
        &self.raw
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn centered(&self) -> &RowMatrix {
        &self.centered
    }

    pub fn asset_ids(&self) -> Option<&[String]> {
        self.asset_ids.as_deref()
    }

    pub fn with_asset_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.assets() {
            return Err(MvskError::Dimension(format!(
                "{} asset ids for {} columns",
                ids.len(),
                self.assets()
            )));
        }
        self.asset_ids = Some(ids);
        Ok(self)
    }

    /// `max_i |sum_t A[t, i]|`.
    pub fn centering_defect(&self) -> f64 {
        let mut sums = vec![0.0; self.assets()];
        for row in self.centered.row_iter() {
            crate::linalg::axpy(1.0, row, &mut sums);
        }
        crate::linalg::norm_inf(&sums)
    }
}

/// Builds a [`ReturnPanel`] from raw returns.
pub fn center_panel(raw: RowMatrix) -> Result<ReturnPanel> {
    let (t, n) = (raw.rows(), raw.cols());
    if t < 2 {
        return Err(MvskError::Dimension(format!("need at least 2 periods, got {t}")));
    }
    if n < 1 {
        return Err(MvskError::Dimension("need at least one asset".into()));
    }
    if let Some(pos) = raw.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(MvskError::Data(format!(
            "non-finite return at period {}, asset {}",
            pos / n,
            pos % n
        )));
    }

    let mut mu = vec![0.0; n];
    for row in raw.row_iter() {
        crate::linalg::axpy(1.0, row, &mut mu);
    }
    mu.iter_mut().for_each(|m| *m /= t as f64);
    // Second pass: corrected mean, and exact means for constant columns.
    let mut resid = vec![0.0; n];
    let mut constant = vec![true; n];
    let first = raw.row(0).to_vec();
    for row in raw.row_iter() {
        for j in 0..n {
            resid[j] += row[j] - mu[j];
            constant[j] &= row[j] == first[j];
        }
    }
    for j in 0..n {
        mu[j] = if constant[j] { first[j] } else { mu[j] + resid[j] / t as f64 };
    }

    let mut centered = raw.clone();
    for s in 0..t {
        for (a, m) in centered.row_mut(s).iter_mut().zip(&mu) {
            *a -= m;
        }
    }
    Ok(ReturnPanel { raw, mu, centered, asset_ids: None })
}

/// Where a set of preference weights came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientOrigin {
    Crra { gamma: f64 },
    Profile { name: String },
    #[default]
    Custom,
}

/// Scalarization weights `(c1, c2, c3, c4)` on mean, variance, skewness and
/// kurtosis. The objective is `-c1 m1 + c2 m2 - c3 m3 + c4 m4`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceCoefficients {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    #[serde(default)]
    pub origin: CoefficientOrigin,
}

impl PreferenceCoefficients {
    pub fn new(c1: f64, c2: f64, c3: f64, c4: f64) -> Result<Self> {
        Self::with_origin([c1, c2, c3, c4], CoefficientOrigin::Custom)
    }

    pub fn with_origin(c: [f64; 4], origin: CoefficientOrigin) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(MvskError::Domain(format!("coefficients must be finite and nonnegative, got {c:?}")));
        }
        if c.iter().all(|v| *v == 0.0) {
            return Err(MvskError::Domain("coefficients are all zero".into()));
        }
        Ok(Self { c1: c[0], c2: c[1], c3: c[2], c4: c[3], origin })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.c1, self.c2, self.c3, self.c4]
    }

    /// Parses `"c1,c2,c3,c4"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(MvskError::Domain(format!("expected 4 comma-separated coefficients, got {s:?}")));
        }
        let mut c = [0.0; 4];
        for (slot, p) in c.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| MvskError::Domain(format!("coefficient {p:?} is not a number")))?;
        }
        Self::with_origin(c, CoefficientOrigin::Custom)
    }

    /// `8 c2 c4 - 3 c3^2`, the discriminant of the convexity certificate.
    pub fn convexity_discriminant(&self) -> f64 {
        8.0 * self.c2 * self.c4 - 3.0 * self.c3 * self.c3
    }
}

impl fmt::Display for PreferenceCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.c1, self.c2, self.c3, self.c4)
    }
}

/// CRRA calibration `(1, g/2, g(g+1)/6, g(g+1)(g+2)/24)`.
pub fn crra_coefficients(gamma: f64) -> Result<PreferenceCoefficients> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(MvskError::Domain(format!("CRRA gamma must be positive, got {gamma}")));
    }
    let c = [
        1.0,
        gamma / 2.0,
        gamma * (gamma + 1.0) / 6.0,
        gamma * (gamma + 1.0) * (gamma + 2.0) / 24.0,
    ];
    PreferenceCoefficients::with_origin(c, CoefficientOrigin::Crra { gamma })
}

/// On-disk panel encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PanelFormat {
    Csv,
    BinaryF64,
}

impl PanelFormat {
    /// `.bin` and `.mvsk` are binary; anything else is read as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("mvsk") => PanelFormat::BinaryF64,
            _ => PanelFormat::Csv,
        }
    }
}

const MAGIC: &[u8; 4] = b"MVSK";

pub fn load_returns(path: &Path, format: PanelFormat) -> Result<ReturnPanel> {
    match format {
        PanelFormat::Csv => read_csv(BufReader::new(File::open(path)?)),
        PanelFormat::BinaryF64 => read_binary(BufReader::new(File::open(path)?)),
    }
}

pub fn save_returns(panel: &ReturnPanel, path: &Path, format: PanelFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        PanelFormat::Csv => write_csv(panel, &mut w)?,
        PanelFormat::BinaryF64 => write_binary(panel.raw(), &mut w)?,
    }
    w.flush()?;
    Ok(())
}

/// Reads a comma-separated panel. A first line containing any non-numeric
/// cell is taken as the header of asset identifiers.
pub fn read_csv<R: Read>(reader: R) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;

    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 1;
        let rec = rec.map_err(|e| MvskError::Parse { row: line, col: None, msg: e.to_string() })?;
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        if let Some(w) = width {
            if rec.len() != w {
                return Err(MvskError::Parse {
                    row: line,
                    col: None,
                    msg: format!("expected {w} fields, found {}", rec.len()),
                });
            }
        } else {
            width = Some(rec.len());
        }

        let parsed: Vec<Option<f64>> = rec.iter().map(|c| c.parse::<f64>().ok()).collect();
        if idx == 0 && header.is_none() && parsed.iter().any(Option::is_none) {
            header = Some(rec.iter().map(str::to_owned).collect());
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (j, (cell, raw)) in parsed.into_iter().zip(rec.iter()).enumerate() {
            match cell {
                Some(v) => row.push(v),
                None => {
                    return Err(MvskError::Parse {
                        row: line,
                        col: Some(j + 1),
                        msg: if raw.is_empty() {
                            "missing cell".into()
                        } else {
                            format!("cannot parse {raw:?} as a number")
                        },
                    })
                }
            }
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(MvskError::Parse { row: 1, col: None, msg: "no data rows".into() });
    }
    let panel = center_panel(RowMatrix::from_rows(&rows))?;
    match header {
        Some(ids) => panel.with_asset_ids(ids),
        None => Ok(panel),
    }
}

pub fn write_csv<W: Write>(panel: &ReturnPanel, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let map_err = |e: csv::Error| MvskError::Io(std::io::Error::other(e));
    if let Some(ids) = panel.asset_ids() {
        wtr.write_record(ids).map_err(map_err)?;
    }
    for row in panel.raw().row_iter() {
        // `{:?}` prints the shortest representation that round-trips exactly.
        wtr.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(map_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Binary layout: `b"MVSK"`, `u32` T, `u32` n, then `T * n` little-endian
/// `f64` values in row-major order.
pub fn read_binary<R: Read>(mut r: R) -> Result<ReturnPanel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| MvskError::Parse { row: 0, col: None, msg: "file too short for header".into() })?;
    if &magic != MAGIC {
        return Err(MvskError::Parse { row: 0, col: None, msg: format!("bad magic {magic:?}") });
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let t = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let n = u32::from_le_bytes(word) as usize;
    if t == 0 || n == 0 {
        return Err(MvskError::Parse { row: 0, col: None, msg: format!("empty panel {t}x{n}") });
    }

    let mut data = vec![0.0; t * n];
    let mut buf = [0u8; 8];
    for (k, slot) in data.iter_mut().enumerate() {
        r.read_exact(&mut buf).map_err(|_| MvskError::Parse {
            row: k / n + 1,
            col: Some(k % n + 1),
            msg: "truncated payload".into(),
        })?;
        *slot = f64::from_le_bytes(buf);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(MvskError::Parse { row: t + 1, col: None, msg: "trailing bytes after payload".into() });
    }
    center_panel(RowMatrix::from_row_major(t, n, data))
}

pub fn write_binary<W: Write>(raw: &RowMatrix, mut w: W) -> Result<()> {
    let t = u32::try_from(raw.rows()).map_err(|_| MvskError::SizeCap("T exceeds u32".into()))?;
    let n = u32::try_from(raw.cols()).map_err(|_| MvskError::SizeCap("n exceeds u32".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&t.to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    for v in raw.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_mean() {
        let p = center_panel(RowMatrix::from_rows(&[vec![0.1], vec![0.3]])).unwrap();
        assert!((p.mu()[0] - 0.2).abs() < 1e-15);
        assert!((p.centered().get(0, 0) + 0.1).abs() < 1e-15);
        assert!((p.centered().get(1, 0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_column_centers_to_zero() {
        let rows: Vec<Vec<f64>> = (0..7).map(|t| vec![0.05, t as f64 * 0.01]).collect();
        let p = center_panel(RowMatrix::from_rows(&rows)).unwrap();
        assert!(p.centered().column(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn random_panel_columns_sum_to_zero() {
        let mut s = 0x1234_5678_u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let data: Vec<f64> = (0..50 * 8).map(|_| next()).collect();
        let p = center_panel(RowMatrix::from_row_major(50, 8, data)).unwrap();
        assert!(p.centering_defect() <= 1e-12);
    }

    #[test]
    fn rejects_short_and_non_finite_panels() {
        assert!(matches!(
            center_panel(RowMatrix::from_rows(&[vec![0.1, 0.2]])),
            Err(MvskError::Dimension(_))
        ));
        assert!(matches!(
            center_panel(RowMatrix::from_rows(&[vec![0.1], vec![f64::NAN]])),
            Err(MvskError::Data(_))
        ));
    }

    #[test]
    fn crra_reference_values() {
        let c = crra_coefficients(6.0).unwrap();
        assert_eq!(c.as_array(), [1.0, 3.0, 7.0, 14.0]);
        let c = crra_coefficients(1.0).unwrap();
        let expect = [1.0, 0.5, 1.0 / 3.0, 0.25];
        for (a, b) in c.as_array().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(crra_coefficients(2.0).unwrap().as_array(), [1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(crra_coefficients(0.0), Err(MvskError::Domain(_))));
        assert!(matches!(crra_coefficients(-1.0), Err(MvskError::Domain(_))));
    }

    proptest! {
        #[test]
        fn crra_discriminant_closed_form(gamma in 0.1f64..50.0) {
            let c = crra_coefficients(gamma).unwrap();
            let expect = gamma * gamma * (gamma + 1.0) * (gamma + 3.0) / 12.0;
            let got = c.convexity_discriminant();
            prop_assert!((got - expect).abs() <= 1e-12 * expect.abs());
        }
    }

    #[test]
    fn csv_plain() {
        let p = read_csv("0.1,0.2\n0.0,0.1\n0.2,0.0\n".as_bytes()).unwrap();
        assert_eq!((p.periods(), p.assets()), (3, 2));
        assert!(p.asset_ids().is_none());
    }

    #[test]
    fn csv_header_populates_ids() {
        let p = read_csv("AAA,BBB\n0.1,0.2\n0.0,0.1\n".as_bytes()).unwrap();
        assert_eq!(p.asset_ids().unwrap(), &["AAA".to_string(), "BBB".to_string()]);
        assert_eq!(p.periods(), 2);
    }

    #[test]
    fn csv_ragged_row_names_the_row() {
        let err = read_csv("0.1,0.2\n0.0,0.1,0.3\n".as_bytes()).unwrap_err();
        match err {
            MvskError::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_bad_cell_names_row_and_column() {
        let err = read_csv("0.1,0.2\n0.0,abc\n".as_bytes()).unwrap_err();
        match err {
            MvskError::Parse { row, col, .. } => assert_eq!((row, col), (2, Some(2))),
            other => panic!("unexpected {other:?}"),
        }
        let err = read_csv("0.1,0.2\n0.0,\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("missing cell"), "{err}");
    }

    #[test]
    fn csv_empty_is_an_error() {
        assert!(matches!(read_csv("".as_bytes()), Err(MvskError::Parse { .. })));
        assert!(matches!(read_csv("A,B\n".as_bytes()), Err(MvskError::Parse { .. })));
    }

    #[test]
    fn binary_rejects_bad_magic_and_truncation() {
        assert!(read_binary(&b"NOPE\x01\0\0\0\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_binary(&RowMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MVSK");
        assert_eq!(buf.len(), 12 + 32);
        assert!(read_binary(&buf[..buf.len() - 3]).is_err());
        let p = read_binary(&buf[..]).unwrap();
        assert_eq!(p.raw().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    proptest! {
        #[test]
        fn both_formats_round_trip_exactly(
            t in 2usize..8, n in 1usize..5,
            vals in proptest::collection::vec(-1.0f64..1.0, 64),
        ) {
            let data: Vec<f64> = vals.iter().cycle().take(t * n).cloned().collect();
            let p = center_panel(RowMatrix::from_row_major(t, n, data)).unwrap();

            let mut bin = Vec::new();
            write_binary(p.raw(), &mut bin).unwrap();
            let back = read_binary(&bin[..]).unwrap();
            prop_assert_eq!(back.raw(), p.raw());

            let mut txt = Vec::new();
            write_csv(&p, &mut txt).unwrap();
            let back = read_csv(&txt[..]).unwrap();
            prop_assert_eq!(back.raw(), p.raw());
        }
    }
}
