//! Evaluation metrics and operator-agreement statistics: polygon
//! rasterization, IoU, tip distances, pairwise inter/intra-operator
//! aggregation, Welch's t-test, and the error histogram.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::annot::Annotation;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("polygon needs >= 3 vertices, got {0}")]
    DegeneratePolygon(usize),
    #[error("mask shapes differ: {0} vs {1} elements")]
    ShapeMismatch(usize, usize),
    #[error("insufficient pairings: {0}")]
    Insufficient(String),
    #[error("degenerate t-test: both sample variances are zero, p undefined")]
    DegenerateTest,
    #[error("t-test needs >= 2 values per sample, got {0} and {1}")]
    TooFewSamples(usize, usize),
    #[error("annotation `{id}` lacks {field}, required for agreement analysis")]
    MissingField { id: String, field: &'static str },
}

/// Scanline even-odd fill; a pixel (x, y) is set iff its center
/// (x + 0.5, y + 0.5) lies inside the polygon.
pub fn polygon_to_mask(poly: &[[f64; 2]], size: usize) -> Result<Vec<u8>, MetricsError> {
    if poly.len() < 3 {
        return Err(MetricsError::DegeneratePolygon(poly.len()));
    }
    let mut mask = vec![0u8; size * size];
    let mut xs: Vec<f64> = Vec::with_capacity(poly.len());
    for y in 0..size {
        let yc = y as f64 + 0.5;
        xs.clear();
        for i in 0..poly.len() {
            let [x1, y1] = poly[i];
            let [x2, y2] = poly[(i + 1) % poly.len()];
            if (y1 > yc) != (y2 > yc) {
                xs.push(x1 + (yc - y1) * (x2 - x1) / (y2 - y1));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in xs.chunks_exact(2) {
            // pixel centers in [x0, x1)
            let lo = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let hi = ((pair[1] - 0.5).ceil().max(0.0) as usize).min(size);
            for x in lo..hi {
                mask[y * size + x] = 1;
            }
        }
    }
    Ok(mask)
}

/// Intersection over union of binary masks; both empty counts as full
/// agreement (1.0).
pub fn iou(a: &[u8], b: &[u8]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ShapeMismatch(a.len(), b.len()));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x != 0, y != 0);
        inter += u64::from(x && y);
        union += u64::from(x || y);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

pub fn tip_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// One annotation with the operator metadata required for agreement runs.
#[derive(Debug, Clone)]
pub struct AnnotationRecord {
    pub frame_id: String,
    pub operator_id: String,
    pub round: u32,
    pub annotation: Annotation,
}

impl AnnotationRecord {
    pub fn from_annotation(a: Annotation) -> Result<Self, MetricsError> {
        let operator_id = a.operator_id.clone().ok_or(MetricsError::MissingField {
            id: a.id.clone(),
            field: "operator_id",
        })?;
        let frame_id = a.frame_id.clone().unwrap_or_else(|| a.id.clone());
        Ok(AnnotationRecord {
            frame_id,
            operator_id,
            round: a.round.unwrap_or(0),
            annotation: a,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Inter,
    Intra,
}

/// Mean and population standard deviation over n pairings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn population_stat(values: &[f64]) -> Stat {
    let n = values.len();
    if n == 0 {
        return Stat {
            mean: f64::NAN,
            std: f64::NAN,
            n: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Stat {
        mean,
        std: var.sqrt(),
        n,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgreementReport {
    pub mode: Mode,
    pub oolemma_iou: Stat,
    pub pipette_iou: Stat,
    pub tip_px: Stat,
    /// Raw pairing values, kept for significance testing between reports.
    pub oolemma_values: Vec<f64>,
    pub pipette_values: Vec<f64>,
    pub tip_values: Vec<f64>,
}

fn pair_values(
    a: &AnnotationRecord,
    b: &AnnotationRecord,
    mask_size: usize,
) -> Result<(f64, f64, f64), MetricsError> {
    let am_oo = polygon_to_mask(&a.annotation.polygons.oolemma, mask_size)?;
    let bm_oo = polygon_to_mask(&b.annotation.polygons.oolemma, mask_size)?;
    let am_pi = polygon_to_mask(&a.annotation.polygons.pipette, mask_size)?;
    let bm_pi = polygon_to_mask(&b.annotation.polygons.pipette, mask_size)?;
    let ta = (a.annotation.needle_tip[0], a.annotation.needle_tip[1]);
    let tb = (b.annotation.needle_tip[0], b.annotation.needle_tip[1]);
    Ok((
        iou(&am_oo, &bm_oo)?,
        iou(&am_pi, &bm_pi)?,
        tip_distance(ta, tb),
    ))
}

/// Inter mode: per frame (and round), every unordered operator pair
/// contributes one value per statistic. Intra mode: per operator and frame,
/// every unordered round pair contributes likewise.
pub fn pairwise_agreement(
    records: &[AnnotationRecord],
    mode: Mode,
    mask_size: usize,
) -> Result<AgreementReport, MetricsError> {
    // sorted grouping keys keep aggregation order-independent
    let mut groups: BTreeMap<(String, String), Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        let key = match mode {
            Mode::Inter => (r.frame_id.clone(), r.round.to_string()),
            Mode::Intra => (r.operator_id.clone(), r.frame_id.clone()),
        };
        groups.entry(key).or_default().push(r);
    }
    let mut oolemma = Vec::new();
    let mut pipette = Vec::new();
    let mut tips = Vec::new();
    for members in groups.values_mut() {
        match mode {
            Mode::Inter => members.sort_by(|a, b| a.operator_id.cmp(&b.operator_id)),
            Mode::Intra => members.sort_by_key(|r| r.round),
        }
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                let (a, b) = (members[i], members[j]);
                let distinct = match mode {
                    Mode::Inter => a.operator_id != b.operator_id,
                    Mode::Intra => a.round != b.round,
                };
                if !distinct {
                    continue;
                }
                let (o, p, t) = pair_values(a, b, mask_size)?;
                oolemma.push(o);
                pipette.push(p);
                tips.push(t);
            }
        }
    }
    if oolemma.is_empty() {
        let need = match mode {
            Mode::Inter => "need >= 2 operators sharing a frame (same round)",
            Mode::Intra => "need >= 2 rounds for some operator and frame",
        };
        return Err(MetricsError::Insufficient(need.into()));
    }
    Ok(AgreementReport {
        mode,
        oolemma_iou: population_stat(&oolemma),
        pipette_iou: population_stat(&pipette),
        tip_px: population_stat(&tips),
        oolemma_values: oolemma,
        pipette_values: pipette,
        tip_values: tips,
    })
}

/// Two-sided Welch's t-test: unpooled variances, Welch-Satterthwaite degrees
/// of freedom, p from the t-distribution.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64), MetricsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricsError::TooFewSamples(a.len(), b.len()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let svar = |v: &[f64], m: f64| {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (svar(a, ma), svar(b, mb));
    if va == 0.0 && vb == 0.0 {
        return Err(MetricsError::DegenerateTest);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2)
        / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, df, p.clamp(0.0, 1.0)))
}

/// Counts per bin [k*w, (k+1)*w), from 0 to the max distance.
pub fn error_histogram(distances: &[f64], bin_width: f64) -> Vec<(f64, f64, usize)> {
    assert!(bin_width > 0.0, "bin_width must be > 0");
    if distances.is_empty() {
        return Vec::new();
    }
    let max = distances.iter().cloned().fold(0.0f64, f64::max);
    let nbins = (max / bin_width).floor() as usize + 1;
    let mut counts = vec![0usize; nbins];
    for &d in distances {
        counts[((d / bin_width).floor() as usize).min(nbins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as f64 * bin_width, (k + 1) as f64 * bin_width, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annot::Polygons;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(x0: f64, y0: f64, side: f64) -> Vec<[f64; 2]> {
        vec![
            [x0, y0],
            [x0 + side, y0],
            [x0 + side, y0 + side],
            [x0, y0 + side],
        ]
    }

    #[test]
    fn square_polygon_rasterizes_to_hand_count() {
        let mask = polygon_to_mask(&square(0.0, 0.0, 4.0), 8).unwrap();
        assert_eq!(mask.iter().filter(|&&v| v == 1).count(), 16);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(mask[y * 8 + x], 1);
            }
        }
    }

    #[test]
    fn degenerate_polygon_cases() {
        assert!(polygon_to_mask(&[[0.0, 0.0], [1.0, 1.0]], 8).is_err());
        // zero area
        let line = vec![[1.0, 1.0], [5.0, 1.0], [3.0, 1.0]];
        let mask = polygon_to_mask(&line, 8).unwrap();
        assert!(mask.iter().all(|&v| v == 0));
    }

    fn point_in_polygon(poly: &[[f64; 2]], px: f64, py: f64) -> bool {
        // even-odd ray casting, rightward ray
        let mut inside = false;
        for i in 0..poly.len() {
            let [x1, y1] = poly[i];
            let [x2, y2] = poly[(i + 1) % poly.len()];
            if (y1 > py) != (y2 > py) {
                let xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1);
                if px < xi {
                    inside = !inside;
                }
            }
        }
        inside
    }

    #[test]
    fn triangle_matches_brute_force_oracle() {
        let tri = vec![[1.2, 0.7], [14.3, 4.1], [3.9, 13.8]];
        let mask = polygon_to_mask(&tri, 16).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let expect = point_in_polygon(&tri, x as f64 + 0.5, y as f64 + 0.5);
                assert_eq!(mask[y * 16 + x] == 1, expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn random_convex_polygons_match_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            // convex polygon: random points on a random ellipse, angle-sorted
            let cx = rng.gen_range(8.0..24.0);
            let cy = rng.gen_range(8.0..24.0);
            let ra = rng.gen_range(2.0..7.5);
            let rb = rng.gen_range(2.0..7.5);
            let k = rng.gen_range(3..10);
            let mut angles: Vec<f64> =
                (0..k).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let poly: Vec<[f64; 2]> = angles
                .iter()
                .map(|t| [cx + ra * t.cos(), cy + rb * t.sin()])
                .collect();
            let mask = polygon_to_mask(&poly, 32).unwrap();
            for y in 0..32 {
                for x in 0..32 {
                    let expect = point_in_polygon(&poly, x as f64 + 0.5, y as f64 + 0.5);
                    assert_eq!(mask[y * 32 + x] == 1, expect, "trial {trial} ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn iou_hand_values() {
        let a = polygon_to_mask(&square(0.0, 0.0, 2.0), 4).unwrap();
        let b = polygon_to_mask(&square(1.0, 1.0, 2.0), 4).unwrap();
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou(&b, &a).unwrap(), iou(&a, &b).unwrap());
        let empty = vec![0u8; 16];
        assert_eq!(iou(&a, &empty).unwrap(), 0.0);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        assert!(iou(&a, &[0u8; 9]).is_err());
    }

    #[test]
    fn tip_distance_examples() {
        assert_eq!(tip_distance((2.0, 3.0), (2.0, 3.0)), 0.0);
        assert_eq!(tip_distance((0.0, 0.0), (3.0, 4.0)), 5.0);
    }

    fn record(op: &str, round: u32, frame: &str, sq: (f64, f64), tip: (f64, f64)) -> AnnotationRecord {
        AnnotationRecord {
            frame_id: frame.into(),
            operator_id: op.into(),
            round,
            annotation: Annotation {
                id: format!("{op}-{frame}-{round}"),
                polygons: Polygons {
                    oolemma: square(sq.0, sq.1, 2.0),
                    pipette: square(sq.0, sq.1, 2.0),
                },
                needle_tip: [tip.0, tip.1],
                operator_id: Some(op.into()),
                round: Some(round),
                frame_id: Some(frame.into()),
            },
        }
    }

    #[test]
    fn inter_agreement_hand_statistics() {
        // pairwise IoUs {1/7, 1/7, 1}, tip distances {5, 5, 0}
        let records = vec![
            record("A", 0, "f0", (0.0, 0.0), (0.0, 0.0)),
            record("B", 0, "f0", (1.0, 1.0), (3.0, 4.0)),
            record("C", 0, "f0", (1.0, 1.0), (3.0, 4.0)),
        ];
        let rep = pairwise_agreement(&records, Mode::Inter, 4).unwrap();
        assert_eq!(rep.oolemma_iou.n, 3);
        assert!((rep.oolemma_iou.mean - 0.428571).abs() < 1e-6);
        assert!((rep.oolemma_iou.std - 0.404061).abs() < 1e-6);
        assert!((rep.tip_px.mean - 10.0 / 3.0).abs() < 1e-12);
        assert!((rep.tip_px.std - 50.0f64.sqrt() / 3.0).abs() < 1e-12);
        // invariant to record order and operator relabeling
        let mut shuffled = vec![records[2].clone(), records[0].clone(), records[1].clone()];
        for (r, name) in shuffled.iter_mut().zip(["Z", "Y", "X"]) {
            r.operator_id = name.into();
        }
        let rep2 = pairwise_agreement(&shuffled, Mode::Inter, 4).unwrap();
        assert_eq!(rep.oolemma_iou.mean, rep2.oolemma_iou.mean);
        assert_eq!(rep.tip_px.std, rep2.tip_px.std);
    }

    #[test]
    fn intra_agreement_and_pair_counts() {
        // 2 operators x 3 rounds on one frame: 3 round-pairs each = 6 values
        let mut records = Vec::new();
        for op in ["A", "B"] {
            for round in 0..3 {
                records.push(record(op, round, "f0", (round as f64, 0.0), (0.0, 0.0)));
            }
        }
        let rep = pairwise_agreement(&records, Mode::Intra, 8).unwrap();
        assert_eq!(rep.oolemma_iou.n, 6);
        // inter mode on the same records: per round, 1 operator pair = 3
        let rep2 = pairwise_agreement(&records, Mode::Inter, 8).unwrap();
        assert_eq!(rep2.oolemma_iou.n, 3);
        // 5 operators x 14 frames -> 10 pairs x 14 = 140
        let mut big = Vec::new();
        for f in 0..14 {
            for op in ["A", "B", "C", "D", "E"] {
                big.push(record(op, 0, &format!("f{f}"), (1.0, 1.0), (0.0, 0.0)));
            }
        }
        let rep3 = pairwise_agreement(&big, Mode::Inter, 8).unwrap();
        assert_eq!(rep3.oolemma_iou.n, 140);
        assert_eq!(rep3.oolemma_iou.mean, 1.0);
        assert_eq!(rep3.tip_px.std, 0.0);
    }

    #[test]
    fn insufficient_pairings_is_explicit_error() {
        let records = vec![record("A", 0, "f0", (0.0, 0.0), (0.0, 0.0))];
        assert!(matches!(
            pairwise_agreement(&records, Mode::Inter, 4),
            Err(MetricsError::Insufficient(_))
        ));
        assert!(matches!(
            pairwise_agreement(&records, Mode::Intra, 4),
            Err(MetricsError::Insufficient(_))
        ));
    }

    #[test]
    fn welch_examples() {
        let (t, _, p) = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let (t, df, p) = welch_t_test(&[0.0, 1.0], &[10.0, 11.0]).unwrap();
        assert!((t - -14.142136).abs() < 1e-5);
        assert!((df - 2.0).abs() < 1e-9);
        // frozen reference value: 1 - t/sqrt(t^2 + 2) at df = 2
        assert!((p - 0.0049628).abs() < 1e-6);
        // symmetry up to the sign of t
        let (t2, _, p2) = welch_t_test(&[10.0, 11.0], &[0.0, 1.0]).unwrap();
        assert_eq!(t2, -t);
        assert_eq!(p2, p);
        // degenerate: both variances zero, p undefined
        assert!(matches!(
            welch_t_test(&[1.0, 1.0], &[2.0, 2.0]),
            Err(MetricsError::DegenerateTest)
        ));
        assert!(matches!(
            welch_t_test(&[3.0, 3.0], &[3.0, 3.0]),
            Err(MetricsError::DegenerateTest)
        ));
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn histogram_examples() {
        assert!(error_histogram(&[], 1.0).is_empty());
        let h = error_histogram(&[0.5, 1.5, 1.6], 1.0);
        assert_eq!(h, vec![(0.0, 1.0, 1), (1.0, 2.0, 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..rng.gen_range(1..50)).map(|_| rng.gen_range(0.0..30.0)).collect();
            let h = error_histogram(&vals, 2.5);
            assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), vals.len());
        }
    }
}
