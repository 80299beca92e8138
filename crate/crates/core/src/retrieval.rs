//! Gallery ranking and CMC / mAP evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{GpnetError, Result};

/// Ranks reported in every [`MetricReport`].
pub const CMC_RANKS: [usize; 3] = [1, 5, 20];

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryItem {
    pub feature: Vec<f64>,
    pub identity: u64,
    pub camera: Option<u64>,
}

/// Gallery searched by Euclidean distance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalIndex {
    items: Vec<GalleryItem>,
}

impl RetrievalIndex {
    pub fn new(items: Vec<GalleryItem>) -> Result<Self> {
        if let Some(first) = items.first() {
            let d = first.feature.len();
            if let Some(bad) = items.iter().find(|i| i.feature.len() != d) {
                return Err(GpnetError::Dimension {
                    op: "retrieval index",
                    left: (1, d),
                    right: (1, bad.feature.len()),
                });
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[GalleryItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Gallery indices by ascending distance to `query`; ties keep gallery order.
pub fn rank_gallery(query: &[f64], index: &RetrievalIndex) -> Result<Vec<usize>> {
    let first = index
        .items
        .first()
        .ok_or_else(|| GpnetError::Contract("cannot rank an empty gallery".into()))?;
    if first.feature.len() != query.len() {
        return Err(GpnetError::Dimension {
            op: "rank_gallery",
            left: (1, query.len()),
            right: (1, first.feature.len()),
        });
    }
    let dists: Vec<f64> = index
        .items
        .iter()
        .map(|g| distance(query, &g.feature))
        .collect();
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map: f64,
    pub cmc: BTreeMap<usize, f64>,
    pub num_queries: usize,
    /// Queries skipped because no valid gallery match remained.
    pub warnings: usize,
}

impl MetricReport {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc.get(&k).copied().unwrap_or(f64::NAN)
    }

    /// Averages several reports entry by entry.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        let n = reports.len();
        if n == 0 {
            return None;
        }
        let map = reports.iter().map(|r| r.map).sum::<f64>() / n as f64;
        let cmc = CMC_RANKS
            .iter()
            .map(|&k| (k, reports.iter().map(|r| r.rank(k)).sum::<f64>() / n as f64))
            .collect();
        Some(MetricReport {
            map,
            cmc,
            num_queries: reports.iter().map(|r| r.num_queries).sum(),
            warnings: reports.iter().map(|r| r.warnings).sum(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Skip gallery items sharing both identity and camera with the query.
    pub exclude_same_camera: bool,
}

/// Average precision and first-hit position (0-based) for one ranked list.
pub fn average_precision(relevant: &[bool]) -> Option<(f64, usize)> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    let mut first = None;
    for (pos, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
            first.get_or_insert(pos);
        }
    }
    first.map(|f| (sum / hits as f64, f))
}

fn report_from(aps: Vec<(f64, usize)>, warnings: usize) -> MetricReport {
    let q = aps.len();
    let map = if q == 0 {
        0.0
    } else {
        aps.iter().map(|a| a.0).sum::<f64>() / q as f64
    };
    let cmc = CMC_RANKS
        .iter()
        .map(|&k| {
            let hit = aps.iter().filter(|(_, first)| *first < k).count();
            (k, if q == 0 { 0.0 } else { hit as f64 / q as f64 })
        })
        .collect();
    MetricReport {
        map,
        cmc,
        num_queries: q,
        warnings,
    }
}

fn evaluate_with<F>(
    queries: &[GalleryItem],
    index: &RetrievalIndex,
    opts: EvalOptions,
    skip: F,
) -> Result<MetricReport>
where
    F: Fn(usize, usize) -> bool,
{
    let mut aps = Vec::with_capacity(queries.len());
    let mut warnings = 0;
    for (qi, q) in queries.iter().enumerate() {
        let order = rank_gallery(&q.feature, index)?;
        let relevant: Vec<bool> = order
            .into_iter()
            .filter(|&g| !skip(qi, g))
            .filter(|&g| {
                let item = &index.items[g];
                !(opts.exclude_same_camera
                    && item.identity == q.identity
                    && item.camera.is_some()
                    && item.camera == q.camera)
            })
            .map(|g| index.items[g].identity == q.identity)
            .collect();
        match average_precision(&relevant) {
            Some(ap) => aps.push(ap),
            None => {
                log::warn!(
                    "query {qi} (identity {}) has no valid gallery match",
                    q.identity
                );
                warnings += 1;
            }
        }
    }
    Ok(report_from(aps, warnings))
}

/// CMC and mAP of `queries` against `index`.
pub fn evaluate(
    queries: &[GalleryItem],
    index: &RetrievalIndex,
    opts: EvalOptions,
) -> Result<MetricReport> {
    evaluate_with(queries, index, opts, |_, _| false)
}

/// Every gallery item queried against all the others.
pub fn evaluate_leave_one_out(index: &RetrievalIndex, opts: EvalOptions) -> Result<MetricReport> {
    evaluate_with(&index.items, index, opts, |q, g| q == g)
}

/// One table row per method: `method,mAP,rank1,rank5,rank20`.
pub fn report_csv(rows: &[(String, MetricReport)]) -> String {
    let mut s = String::from("method,mAP,rank1,rank5,rank20\n");
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{name},{:.6},{:.6},{:.6},{:.6}",
            r.map,
            r.rank(1),
            r.rank(5),
            r.rank(20)
        );
    }
    s
}

/// Aligned plain-text table with percentages, one row per method.
pub fn report_table(rows: &[(String, MetricReport)]) -> String {
    let width = rows
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let mut s = format!(
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}\n",
        "Method", "mAP", "Rank1", "Rank5", "Rank20"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>6.1}  {:>6.1}  {:>6.1}  {:>6.1}",
            name,
            100.0 * r.map,
            100.0 * r.rank(1),
            100.0 * r.rank(5),
            100.0 * r.rank(20)
        );
    }
    s
}
