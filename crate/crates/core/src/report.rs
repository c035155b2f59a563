//! Report serialisation: JSON envelopes carrying the tool version, command,
//! and seed next to the payload, plus fixed-format CSV writers (LF line
//! endings, 17-significant-digit floats).

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Wrapper every run report is stored in. The payload carries its own
/// configuration echo; the envelope pins provenance.
#[derive(Clone, Debug, Serialize)]
pub struct Envelope<T: Serialize> {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub report: T,
}

pub fn envelope<T: Serialize>(command: &str, seed: u64, report: T) -> Envelope<T> {
    Envelope {
        version: TOOL_VERSION.to_string(),
        command: command.to_string(),
        seed,
        report,
    }
}

pub fn to_json<T: Serialize>(e: &Envelope<T>) -> Result<String> {
    let mut s = serde_json::to_string_pretty(e).map_err(|err| {
        Error::ModelFormat(format!("report serialisation failed: {err}"))
    })?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, e: &Envelope<T>) -> Result<()> {
    std::fs::write(path, to_json(e)?)?;
    Ok(())
}

/// 17 significant digits; round-trips every finite double.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// `model_id,adversarial_risk,regularised_risk` rows.
pub fn scatter_csv(rows: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("model_id,adversarial_risk,regularised_risk\n");
    for &(id, x, y) in rows {
        out.push_str(&format!("{id},{},{}\n", format_float(x), format_float(y)));
    }
    out
}

/// `j,lambda` rows for a sorted or indexed spectrum.
pub fn spectrum_csv(eigenvalues: &[f64]) -> String {
    let mut out = String::from("j,lambda\n");
    for (j, lam) in eigenvalues.iter().enumerate() {
        out.push_str(&format!("{j},{}\n", format_float(*lam)));
    }
    out
}

/// `n,median_error` rows for witness-count error curves.
pub fn curve_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("n,median_error\n");
    for &(n, err) in rows {
        out.push_str(&format!("{n},{}\n", format_float(err)));
    }
    out
}

/// `delta,accuracy` rows for attack sweeps.
pub fn accuracy_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("delta,accuracy\n");
    for &(d, a) in rows {
        out.push_str(&format!("{},{}\n", format_float(d), format_float(a)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_is_seventeen_digits_and_round_trips() {
        assert_eq!(format_float(1.0), "1.0000000000000000e0");
        assert_eq!(format_float(-0.5), "-5.0000000000000000e-1");
        for &x in &[std::f64::consts::PI, 1e-300, 6.02214076e23, -3.0 / 7.0] {
            let back: f64 = format_float(x).parse().unwrap();
            assert_eq!(back, x);
        }
    }

    #[test]
    fn csv_layouts_are_frozen() {
        let s = scatter_csv(&[(0, 1.0, 2.0)]);
        assert_eq!(
            s,
            "model_id,adversarial_risk,regularised_risk\n0,1.0000000000000000e0,2.0000000000000000e0\n"
        );
        assert!(!s.contains('\r'));
        assert_eq!(
            spectrum_csv(&[0.5, 0.25]),
            "j,lambda\n0,5.0000000000000000e-1\n1,2.5000000000000000e-1\n"
        );
        assert_eq!(
            curve_csv(&[(4, 0.125)]),
            "n,median_error\n4,1.2500000000000000e-1\n"
        );
        assert_eq!(
            accuracy_csv(&[(0.0, 1.0)]),
            "delta,accuracy\n0.0000000000000000e0,1.0000000000000000e0\n"
        );
    }

    #[test]
    fn envelope_embeds_version_and_seed() {
        #[derive(Serialize)]
        struct Payload {
            answer: u32,
        }
        let e = envelope("certify", 42, Payload { answer: 7 });
        let json = to_json(&e).unwrap();
        assert!(json.contains("\"version\""));
        assert!(json.contains("\"command\": \"certify\""));
        assert!(json.contains("\"seed\": 42"));
        assert!(json.contains("\"answer\": 7"));
        assert!(json.ends_with('\n'));
    }
}
