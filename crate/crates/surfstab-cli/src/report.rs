//! Machine-readable analysis report. The bound line is never stored: it
//! is recomputed from the report's own counts every time the report is
//! serialized, so the headline can not drift out of sync with the data.

use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct InputBlock {
    pub source: String,
    pub ambient: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct TopologyBlock {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub euler_characteristic: i64,
    pub genus: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometryBlock {
    pub area: f64,
    pub max_abs_h: f64,
    pub mean_a2: f64,
    pub source: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumBlock {
    pub constrained_mean_zero: bool,
    pub eigenvalues: Vec<f64>,
    pub index: usize,
    pub nullity: usize,
    pub tol_zero: f64,
    pub zero_band_margin: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HarmonicBlock {
    pub dimension: usize,
    pub residual_d: f64,
    pub residual_delta: f64,
    pub relative_residual: f64,
    pub gap_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaBlock {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub lemma2_rel_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateBlock {
    pub k: i64,
    pub rows: usize,
    pub cols: usize,
    pub singular_values: Vec<f64>,
    pub q_sum: f64,
    pub rhs: f64,
    pub slack: f64,
    pub verdict: String,
    pub bound: i64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundBlock {
    pub line: String,
    pub quantity: i64,
    pub threshold: i64,
    pub pass: bool,
    pub variant: String,
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub timestamp: Option<u64>,
    pub input: InputBlock,
    pub topology: TopologyBlock,
    pub geometry: GeometryBlock,
    pub spectrum: SpectrumBlock,
    pub harmonic: Option<HarmonicBlock>,
    pub lemmas: Option<LemmaBlock>,
    pub certificate: Option<CertificateBlock>,
    pub certificate_note: Option<String>,
    pub cmc: bool,
}

impl AnalysisReport {
    /// Headline inequality, rebuilt from the stored counts. Unconstrained
    /// surfaces check index + nullity against ceil(g/3); CMC surfaces
    /// check the constrained index against ceil(g/3 - 1).
    pub fn bound(&self) -> BoundBlock {
        let g = self.topology.genus as i64;
        if self.cmc {
            let n = self.spectrum.index as i64;
            let m = (g + 2).div_euclid(3) - 1;
            let pass = n >= m;
            BoundBlock {
                line: format!(
                    "Ind = {n} \u{2265} \u{2308}g/3-1\u{2309} = {m}: {}",
                    if pass { "PASS" } else { "FAIL" }
                ),
                quantity: n,
                threshold: m,
                pass,
                variant: "cmc_index".into(),
            }
        } else {
            let n = (self.spectrum.index + self.spectrum.nullity) as i64;
            let m = (g + 2).div_euclid(3);
            let pass = n >= m;
            BoundBlock {
                line: format!(
                    "Ind+Null = {n} \u{2265} \u{2308}g/3\u{2309} = {m}: {}",
                    if pass { "PASS" } else { "FAIL" }
                ),
                quantity: n,
                threshold: m,
                pass,
                variant: "index_plus_nullity".into(),
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

impl Serialize for AnalysisReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("AnalysisReport", 11)?;
        st.serialize_field("schema", "1")?;
        if let Some(t) = self.timestamp {
            st.serialize_field("timestamp", &t)?;
        }
        st.serialize_field("input", &self.input)?;
        st.serialize_field("topology", &self.topology)?;
        st.serialize_field("geometry", &self.geometry)?;
        st.serialize_field("spectrum", &self.spectrum)?;
        st.serialize_field("harmonic", &self.harmonic)?;
        st.serialize_field("lemmas", &self.lemmas)?;
        st.serialize_field("certificate", &self.certificate)?;
        if let Some(note) = &self.certificate_note {
            st.serialize_field("certificate_note", note)?;
        }
        st.serialize_field("bound", &self.bound())?;
        st.end()
    }
}

/// Eigenvalue table with fixed header and full-precision values.
pub fn spectrum_csv(block: &SpectrumBlock, residuals: &[f64]) -> String {
    let mut out = String::from("k,eigenvalue,residual\n");
    for (k, v) in block.eigenvalues.iter().enumerate() {
        let r = residuals.get(k).copied().unwrap_or(f64::NAN);
        out.push_str(&format!("{k},{v:.16e},{r:.3e}\n"));
    }
    out
}
