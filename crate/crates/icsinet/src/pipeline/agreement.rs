//! Operator agreement reports: Table-style text output ("mean [stddev]"),
//! machine-readable CSV, and Welch t-test p-values comparing inter- and
//! intra-operator statistics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::annot::Annotation;
use crate::metrics::{
    pairwise_agreement, welch_t_test, AgreementReport, AnnotationRecord, Mode, Stat,
};

use super::{csv_row, io_err, write_atomic, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgreementMode {
    Inter,
    Intra,
    Both,
}

#[derive(Debug)]
pub struct AgreementOutcome {
    pub inter: Option<AgreementReport>,
    pub intra: Option<AgreementReport>,
    /// p-values per statistic (oolemma, pipette, tip) when both modes ran;
    /// Err text for degenerate comparisons.
    pub p_values: Option<[Result<f64, String>; 3]>,
    pub report_txt: PathBuf,
    pub report_csv: PathBuf,
}

pub fn load_annotation_records(dir: &Path) -> Result<Vec<AnnotationRecord>, PipelineError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()) == Some("json")
                && p.file_stem().and_then(|s| s.to_str()) != Some("manifest")
        })
        .collect();
    paths.sort();
    let mut records = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let ann: Annotation =
            serde_json::from_slice(&bytes).map_err(|source| PipelineError::Json {
                path: path.clone(),
                source,
            })?;
        records.push(AnnotationRecord::from_annotation(ann)?);
    }
    Ok(records)
}

fn fmt_stat(s: &Stat) -> String {
    format!("{:.3} [{:.3}]", s.mean, s.std)
}

fn stat_rows(rep: &AgreementReport) -> [(&'static str, Stat, &Vec<f64>); 3] {
    [
        ("Oolemma IoU", rep.oolemma_iou, &rep.oolemma_values),
        ("Pipette IoU", rep.pipette_iou, &rep.pipette_values),
        ("Needle tip distance (px)", rep.tip_px, &rep.tip_values),
    ]
}

pub fn cmd_agreement(
    annotations_dir: &Path,
    mode: AgreementMode,
    mask_size: usize,
    out_dir: &Path,
) -> Result<AgreementOutcome, PipelineError> {
    let records = load_annotation_records(annotations_dir)?;
    let inter = match mode {
        AgreementMode::Inter | AgreementMode::Both => {
            Some(pairwise_agreement(&records, Mode::Inter, mask_size)?)
        }
        AgreementMode::Intra => None,
    };
    let intra = match mode {
        AgreementMode::Intra | AgreementMode::Both => {
            Some(pairwise_agreement(&records, Mode::Intra, mask_size)?)
        }
        AgreementMode::Inter => None,
    };

    let p_values = match (&inter, &intra) {
        (Some(a), Some(b)) => {
            let pair = |x: &Vec<f64>, y: &Vec<f64>| -> Result<f64, String> {
                welch_t_test(x, y).map(|(_, _, p)| p).map_err(|e| e.to_string())
            };
            Some([
                pair(&a.oolemma_values, &b.oolemma_values),
                pair(&a.pipette_values, &b.pipette_values),
                pair(&a.tip_values, &b.tip_values),
            ])
        }
        _ => None,
    };

    let mut txt = String::new();
    writeln!(txt, "Mean operator performance (stddev in square brackets)").unwrap();
    writeln!(
        txt,
        "note: population stddev; significance via two-sided Welch t-test"
    )
    .unwrap();
    writeln!(txt).unwrap();
    let name_w = 26;
    write!(txt, "{:<name_w$}", "Statistic").unwrap();
    if inter.is_some() {
        write!(txt, "{:<18}", "Inter-operator").unwrap();
    }
    if intra.is_some() {
        write!(txt, "{:<18}", "Intra-operator").unwrap();
    }
    writeln!(txt).unwrap();
    for i in 0..3 {
        let label = inter
            .as_ref()
            .or(intra.as_ref())
            .map(|r| stat_rows(r)[i].0)
            .unwrap();
        write!(txt, "{label:<name_w$}").unwrap();
        if let Some(r) = &inter {
            write!(txt, "{:<18}", fmt_stat(&stat_rows(r)[i].1)).unwrap();
        }
        if let Some(r) = &intra {
            write!(txt, "{:<18}", fmt_stat(&stat_rows(r)[i].1)).unwrap();
        }
        writeln!(txt).unwrap();
    }
    if let Some(ps) = &p_values {
        writeln!(txt).unwrap();
        writeln!(txt, "Inter vs intra (Welch two-sided p):").unwrap();
        for (i, p) in ps.iter().enumerate() {
            let label = stat_rows(inter.as_ref().unwrap())[i].0;
            match p {
                Ok(v) => writeln!(txt, "  {label}: p = {v:.4}").unwrap(),
                Err(e) => writeln!(txt, "  {label}: undefined ({e})").unwrap(),
            }
        }
    }

    let mut csv = csv_row(&["statistic", "mode", "mean", "stddev", "n", "p_inter_vs_intra"]
        .map(String::from));
    for (rep, mode_name) in [(&inter, "inter"), (&intra, "intra")] {
        if let Some(r) = rep {
            for (i, (label, stat, _)) in stat_rows(r).iter().enumerate() {
                let p = match &p_values {
                    Some(ps) => match &ps[i] {
                        Ok(v) => format!("{v:.6}"),
                        Err(_) => "NA".to_string(),
                    },
                    None => String::new(),
                };
                csv.push_str(&csv_row(&[
                    label.to_string(),
                    mode_name.to_string(),
                    format!("{:.6}", stat.mean),
                    format!("{:.6}", stat.std),
                    stat.n.to_string(),
                    p,
                ]));
            }
        }
    }

    let report_txt = out_dir.join("agreement.txt");
    let report_csv = out_dir.join("agreement.csv");
    write_atomic(&report_txt, txt.as_bytes())?;
    write_atomic(&report_csv, csv.as_bytes())?;
    Ok(AgreementOutcome {
        inter,
        intra,
        p_values,
        report_txt,
        report_csv,
    })
}
