//! Quality-divergent pair mining over assessed segments.

use serde::{Deserialize, Serialize};

use super::{ManifestEntry, QualityLabel};

/// Maximum start-time separation (exclusive) between paired segments.
pub const PAIR_WINDOW_S: f64 = 300.0;

/// Two segments of one subject recorded within five minutes whose quality
/// labels differ; `high` holds the better label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityPair {
    pub subject_id: String,
    /// Segment index of the better-labelled segment.
    pub high: usize,
    /// Segment index of the worse-labelled segment.
    pub low: usize,
    pub t_high_s: f64,
    pub t_low_s: f64,
    pub label_high: QualityLabel,
    pub label_low: QualityLabel,
}

/// Emits every unordered pair of entries with the same subject, start times
/// less than 300 s apart and different labels, once, ordered by
/// (subject, t_high, t_low).
pub fn mine_pairs(entries: &[ManifestEntry]) -> Vec<QualityPair> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&entries[a], &entries[b]);
        ea.subject_id
            .cmp(&eb.subject_id)
            .then(ea.t_start_s.total_cmp(&eb.t_start_s))
            .then(a.cmp(&b))
    });
    let mut pairs = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        let a = &entries[i];
        for &j in &order[pos + 1..] {
            let b = &entries[j];
            if b.subject_id != a.subject_id || b.t_start_s - a.t_start_s >= PAIR_WINDOW_S {
                break;
            }
            if a.label == b.label {
                continue;
            }
            let (hi, lo) = if a.label > b.label { (a, b) } else { (b, a) };
            pairs.push(QualityPair {
                subject_id: a.subject_id.clone(),
                high: hi.index,
                low: lo.index,
                t_high_s: hi.t_start_s,
                t_low_s: lo.t_start_s,
                label_high: hi.label,
                label_low: lo.label,
            });
        }
    }
    pairs.sort_by(|p, q| {
        p.subject_id
            .cmp(&q.subject_id)
            .then(p.t_high_s.total_cmp(&q.t_high_s))
            .then(p.t_low_s.total_cmp(&q.t_low_s))
            .then(p.high.cmp(&q.high))
            .then(p.low.cmp(&q.low))
    });
    pairs
}
