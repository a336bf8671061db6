//! Per-point correlation maps, sector tables, measured-level binning and
//! test-retest coverage.

use serde::{Deserialize, Serialize};

use super::bootstrap::quantile_sorted;
use super::metrics::{baseline_mae, mae, pearson_r, r2};
use crate::error::MetricError;
use crate::vf::{RetestCiTable, Sector, SectorMap, VfGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointR {
    pub index: usize,
    pub x_deg: i32,
    pub y_deg: i32,
    /// `None` when either column is constant.
    pub r: Option<f64>,
}

fn check_rows(measured: &[Vec<f64>], predicted: &[Vec<f64>], width: usize, op: &'static str) -> Result<(), MetricError> {
    if measured.len() != predicted.len() {
        return Err(MetricError::LengthMismatch { op, measured: measured.len(), predicted: predicted.len() });
    }
    for (m, p) in measured.iter().zip(predicted) {
        if m.len() != width || p.len() != width {
            return Err(MetricError::LengthMismatch { op, measured: m.len(), predicted: p.len() });
        }
    }
    Ok(())
}

/// Pearson r of each active grid point across exams.
pub fn pointwise_r_map(measured: &[Vec<f64>], predicted: &[Vec<f64>], grid: &VfGrid) -> Result<Vec<PointR>, MetricError> {
    let pts = grid.active_points();
    check_rows(measured, predicted, pts.len(), "pointwise_r_map")?;
    if measured.len() < 2 {
        return Err(MetricError::TooFew { op: "pointwise_r_map", min: 2, got: measured.len() });
    }
    pts.iter()
        .enumerate()
        .map(|(k, p)| {
            let m: Vec<f64> = measured.iter().map(|r| r[k]).collect();
            let q: Vec<f64> = predicted.iter().map(|r| r[k]).collect();
            let r = match pearson_r(&m, &q) {
                Ok(v) => Some(v),
                Err(MetricError::ZeroVariance(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(PointR { index: k, x_deg: p.x_deg, y_deg: p.y_deg, r })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorRow {
    pub sector: Sector,
    pub points: usize,
    pub r2: f64,
    pub pearson_r: f64,
    pub mae: f64,
    pub mae_baseline: f64,
}

/// Metrics pooled over the (exam, point) pairs of each sector, in
/// [`Sector::ALL`] order.
pub fn sector_metrics(measured: &[Vec<f64>], predicted: &[Vec<f64>], map: &SectorMap) -> Result<Vec<SectorRow>, MetricError> {
    check_rows(measured, predicted, map.assignment().len(), "sector_metrics")?;
    Sector::ALL
        .iter()
        .map(|&s| {
            let idx = map.indices(s);
            let m: Vec<f64> = measured.iter().flat_map(|r| idx.iter().map(|&k| r[k])).collect();
            let p: Vec<f64> = predicted.iter().flat_map(|r| idx.iter().map(|&k| r[k])).collect();
            Ok(SectorRow {
                sector: s,
                points: idx.len(),
                r2: r2(&m, &p)?,
                pearson_r: pearson_r(&m, &p)?,
                mae: mae(&m, &p)?,
                mae_baseline: baseline_mae(&m)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Whiskers {
    pub p5: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub p95: f64,
}

impl Whiskers {
    pub fn of(values: &[f64]) -> Whiskers {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Whiskers {
            p5: quantile_sorted(&s, 0.05),
            q25: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q75: quantile_sorted(&s, 0.75),
            p95: quantile_sorted(&s, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub stats: Option<Whiskers>,
}

impl Bin {
    pub fn center(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedStats {
    pub step: f64,
    pub bins: Vec<Bin>,
}

pub const BIN_RANGE_DB: f64 = 40.0;

/// Groups predictions by measured level into `[k * step, (k + 1) * step)`
/// over [0, 40] dB. Measured values outside the range go to the nearest
/// edge bin (so 40 dB lands in the last bin).
pub fn bin_by_measured(measured: &[f64], predicted: &[f64], step: f64) -> Result<BinnedStats, MetricError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(MetricError::BinStep);
    }
    if measured.len() != predicted.len() {
        return Err(MetricError::LengthMismatch { op: "bin_by_measured", measured: measured.len(), predicted: predicted.len() });
    }
    let n_bins = ((BIN_RANGE_DB / step) - 1e-9).ceil().max(1.0) as usize;
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for (&m, &p) in measured.iter().zip(predicted) {
        let k = ((m / step).floor().max(0.0) as usize).min(n_bins - 1);
        groups[k].push(p);
    }
    let bins = groups
        .iter()
        .enumerate()
        .map(|(k, g)| Bin {
            low: k as f64 * step,
            high: ((k + 1) as f64 * step).min(BIN_RANGE_DB),
            count: g.len(),
            stats: (!g.is_empty()).then(|| Whiskers::of(g)),
        })
        .collect();
    Ok(BinnedStats { step, bins })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub inside: usize,
    pub total_whiskers: usize,
    /// `inside / total_whiskers`; 0 when no bin is populated.
    pub fraction: f64,
}

/// Counts the 5th/95th-percentile whisker ends of each populated bin that
/// fall inside the retest interval of the row nearest the bin center.
pub fn retest_coverage(binned: &BinnedStats, table: &RetestCiTable) -> Result<Coverage, MetricError> {
    let rows = table.rows();
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (f.measured_db, l.measured_db),
        _ => return Err(MetricError::EmptyRetestTable),
    };
    let (mut inside, mut total) = (0, 0);
    for bin in binned.bins.iter() {
        let Some(w) = bin.stats else { continue };
        let c = bin.center();
        if c < first || c > last {
            return Err(MetricError::OutsideRetestTable { center: c, low: first, high: last });
        }
        let row = table.nearest(c).ok_or(MetricError::EmptyRetestTable)?;
        for end in [w.p5, w.p95] {
            total += 1;
            if row.lower_db <= end && end <= row.upper_db {
                inside += 1;
            }
        }
    }
    let fraction = if total == 0 { 0.0 } else { inside as f64 / total as f64 };
    Ok(Coverage { inside, total_whiskers: total, fraction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vf::{grid_24_2, RetestRow};

    fn wide_table() -> RetestCiTable {
        RetestCiTable::new((0..=50).map(|l| RetestRow { measured_db: l as f64, lower_db: 0.0, upper_db: 50.0 }).collect())
            .unwrap()
    }

    fn zero_width_table() -> RetestCiTable {
        RetestCiTable::new((0..=50).map(|l| RetestRow { measured_db: l as f64, lower_db: l as f64, upper_db: l as f64 }).collect())
            .unwrap()
    }

    #[test]
    fn bins_count_and_partition() {
        let b = bin_by_measured(&[10.0, 10.5, 12.0], &[1.0, 2.0, 3.0], 2.0).unwrap();
        assert_eq!(b.bins.len(), 20);
        assert_eq!(b.bins[5].count, 2);
        assert_eq!(b.bins[6].count, 1);
        assert_eq!(b.bins.iter().map(|x| x.count).sum::<usize>(), 3);
        let edge = bin_by_measured(&[40.0, -0.5, 45.0], &[0.0; 3], 2.0).unwrap();
        assert_eq!(edge.bins[19].count, 2);
        assert_eq!(edge.bins[0].count, 1);
        assert!(bin_by_measured(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn constant_predictions_collapse_whiskers() {
        let m: Vec<f64> = (0..80).map(|i| i as f64 * 0.5).collect();
        let b = bin_by_measured(&m, &vec![7.0; 80], 2.0).unwrap();
        for bin in b.bins.iter().filter(|b| b.count > 0) {
            let w = bin.stats.unwrap();
            assert_eq!((w.p5, w.p95), (7.0, 7.0));
        }
    }

    #[test]
    fn order_statistics_match_sort() {
        let vals = [9.0, 1.0, 5.0, 3.0, 7.0];
        let w = Whiskers::of(&vals);
        // sorted [1,3,5,7,9]; type-7 positions 0.2, 1, 2, 3, 3.8
        assert!((w.p5 - 1.4).abs() < 1e-12);
        assert_eq!((w.q25, w.median, w.q75), (3.0, 5.0, 7.0));
        assert!((w.p95 - 8.6).abs() < 1e-12);
        assert!(w.p5 <= w.q25 && w.q25 <= w.median && w.median <= w.q75 && w.q75 <= w.p95);
    }

    #[test]
    fn coverage_cases() {
        let m: Vec<f64> = (0..200).map(|i| i as f64 * 0.2).collect();
        let p: Vec<f64> = m.iter().map(|v| v + 1.3).collect();
        let b = bin_by_measured(&m, &p, 2.0).unwrap();
        let c = retest_coverage(&b, &wide_table()).unwrap();
        assert_eq!(c.total_whiskers, 40);
        assert_eq!(c.fraction, 1.0);

        // bin [k*2, k*2+2) with predictions all equal to the bin center: exact hits
        let m: Vec<f64> = (0..20).map(|k| k as f64 * 2.0 + 0.5).collect();
        let mut p: Vec<f64> = (0..20).map(|k| k as f64 * 2.0 + 1.0).collect();
        p[3] += 0.25;
        let b = bin_by_measured(&m, &p, 2.0).unwrap();
        let c = retest_coverage(&b, &zero_width_table()).unwrap();
        assert_eq!(c.total_whiskers, 40);
        assert_eq!(c.inside, 38);
    }

    #[test]
    fn nineteen_bins_give_38_whiskers() {
        let m: Vec<f64> = (0..19).map(|k| k as f64 * 2.0 + 1.0).collect();
        let b = bin_by_measured(&m, &m, 2.0).unwrap();
        assert_eq!(retest_coverage(&b, &wide_table()).unwrap().total_whiskers, 38);
    }

    #[test]
    fn center_outside_table() {
        let t = RetestCiTable::new(vec![RetestRow { measured_db: 10.0, lower_db: 0.0, upper_db: 20.0 }]).unwrap();
        let b = bin_by_measured(&[1.0], &[1.0], 2.0).unwrap();
        assert!(matches!(retest_coverage(&b, &t), Err(MetricError::OutsideRetestTable { .. })));
    }

    #[test]
    fn pointwise_map_cases() {
        let grid = grid_24_2();
        let m: Vec<Vec<f64>> = (0..6).map(|e| (0..52).map(|k| ((e * 7 + k * 3) % 11) as f64).collect()).collect();
        let map = pointwise_r_map(&m, &m, &grid).unwrap();
        assert_eq!(map.len(), 52);
        assert!(map.iter().all(|p| (p.r.unwrap() - 1.0).abs() < 1e-12));

        let mut shuffled = m.clone();
        for row in shuffled.iter_mut() {
            row.rotate_left(1);
        }
        assert_ne!(pointwise_r_map(&m, &shuffled, &grid).unwrap(), map);

        let mut flat = m.clone();
        for row in flat.iter_mut() {
            row[4] = 2.0;
        }
        let map = pointwise_r_map(&flat, &m, &grid).unwrap();
        assert_eq!(map[4].r, None);
    }

    #[test]
    fn sector_table() {
        let sectors = SectorMap::bundled();
        let m: Vec<Vec<f64>> = (0..4).map(|e| (0..52).map(|k| (e * 5 + k) as f64 % 13.0).collect()).collect();
        let rows = sector_metrics(&m, &m, &sectors).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().map(|r| r.sector).collect::<Vec<_>>(), Sector::ALL.to_vec());
        assert!(rows.iter().all(|r| r.r2 == 1.0 && r.mae == 0.0));
        assert_eq!(rows.iter().map(|r| r.points).sum::<usize>(), 52);
    }

    #[test]
    fn sector_baseline_two_exams_by_hand() {
        let sectors = SectorMap::bundled();
        let central = sectors.indices(Sector::Central);
        let mut m = vec![vec![20.0; 52], vec![30.0; 52]];
        m[0][central[0]] = 10.0;
        let p = vec![vec![25.0; 52], vec![26.0; 52]];
        let rows = sector_metrics(&m, &p, &sectors).unwrap();
        let c = rows.iter().find(|r| r.sector == Sector::Central).unwrap();
        // 16 values: one 10, seven 20, eight 30; mean 24.375
        let n = 2.0 * central.len() as f64;
        let mean = (10.0 + 20.0 * (central.len() - 1) as f64 + 30.0 * central.len() as f64) / n;
        let expected = ((10.0f64 - mean).abs()
            + (central.len() - 1) as f64 * (20.0f64 - mean).abs()
            + central.len() as f64 * (30.0f64 - mean).abs())
            / n;
        assert!((c.mae_baseline - expected).abs() < 1e-12);
        assert_eq!(central.len(), 8);
        assert!((mean - 24.375).abs() < 1e-12);
    }
}
