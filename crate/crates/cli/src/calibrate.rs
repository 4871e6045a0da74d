//! Channel calibration from measured `(path, length_cm, pt_mw)` rows.

use std::io::Read;

use anyhow::{bail, Context, Result};
use ibn_topology::channel::{anchors, fit_power_law};
use ibn_topology::{ChannelModel, PathKind, ScenarioConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Deserialize)]
struct Row {
    path: String,
    length_cm: f64,
    pt_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub ss: Vec<f64>,
    pub ms: Vec<f64>,
}

/// Fitted channel block plus log-power residuals per path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub channel: ChannelModel,
    pub residuals: Residuals,
}

/// Reads measurement rows; `path` accepts `ss`/`S-S` and `ms`/`M-S`.
pub fn read_rows(reader: impl Read) -> Result<Vec<(PathKind, f64, f64)>> {
    let mut out = Vec::new();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = rec.with_context(|| format!("line {line}"))?;
        let Some(kind) = PathKind::parse(&row.path) else {
            bail!("line {line}: unknown path `{}`", row.path);
        };
        out.push((kind, row.length_cm, row.pt_mw * 1e-3));
    }
    Ok(out)
}

/// Fits both paths. Either path with fewer than two distinct rows is an
/// underdetermined error.
pub fn calibrate(rows: &[(PathKind, f64, f64)], config: &ScenarioConfig) -> Result<Calibration> {
    let fit = |kind: PathKind| {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.0 == kind)
            .map(|r| (r.1, r.2))
            .collect();
        fit_power_law(&pts, config.noise_floor(), anchors::REFERENCE_LENGTH)
            .with_context(|| format!("path {}", if kind == PathKind::SkinToSkin { "ss" } else { "ms" }))
    };
    let ss = fit(PathKind::SkinToSkin)?;
    let mut ms = fit(PathKind::MuscleToSkin)?;
    ms.path.depth_bonus = config.channel.ms.depth_bonus;
    Ok(Calibration {
        channel: ChannelModel { ss: ss.path, ms: ms.path },
        residuals: Residuals {
            ss: ss.residuals,
            ms: ms.residuals,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ANCHORS: &str = "path,length_cm,pt_mw\nss,14,6.5\nss,5,0.8\nms,14,4.6\nms,5,0.2\n";

    #[test]
    fn anchors_reproduce_exponents() {
        let rows = read_rows(ANCHORS.as_bytes()).unwrap();
        let c = calibrate(&rows, &ScenarioConfig::default()).unwrap();
        assert!((c.channel.ss.exponent - (6.5f64 / 0.8).ln() / 2.8f64.ln()).abs() < 1e-9);
        assert!((c.channel.ms.exponent - (4.6f64 / 0.2).ln() / 2.8f64.ln()).abs() < 1e-9);
        assert!((c.channel.ss.exponent - 2.03).abs() < 0.01);
        assert!((c.channel.ms.exponent - 3.05).abs() < 0.01);
    }

    #[test]
    fn duplicates_do_not_change_the_fit() {
        let dup = format!("{ANCHORS}ss,14,6.5\nms,5,0.2\n");
        let a = calibrate(&read_rows(ANCHORS.as_bytes()).unwrap(), &ScenarioConfig::default()).unwrap();
        let b = calibrate(&read_rows(dup.as_bytes()).unwrap(), &ScenarioConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_row_is_underdetermined() {
        let rows = read_rows("path,length_cm,pt_mw\nss,14,6.5\nss,5,0.8\nms,14,4.6\n".as_bytes()).unwrap();
        let err = calibrate(&rows, &ScenarioConfig::default()).unwrap_err();
        assert!(format!("{err:#}").contains("underdetermined"));
    }

    #[test]
    fn bad_path_names_line() {
        let err = read_rows("path,length_cm,pt_mw\nss,14,6.5\nxx,5,0.8\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"));
    }
}
