//! Accuracy and ROC AUC over group-averaged scores, and wedge activation
//! reports.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::curvelet::CurveletGeometry;
use crate::error::{Error, Result};
use crate::scale_masks::band_of_scale;
use crate::wedge_gate::GateVector;

/// Scores of all frames of one group (a video, or a single image).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub group: String,
    pub scores: Vec<f64>,
    pub label: u8,
}

impl ScoredItem {
    pub fn single(group: impl Into<String>, score: f64, label: u8) -> Self {
        Self {
            group: group.into(),
            scores: vec![score],
            label,
        }
    }

    pub fn mean_score(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// Merges items sharing a group id, keeping first-seen order. The label of
/// the first item of a group wins.
pub fn group_items(items: &[ScoredItem]) -> Vec<ScoredItem> {
    let mut order: Vec<ScoredItem> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for it in items {
        match index.get(it.group.as_str()) {
            Some(&i) => order[i].scores.extend_from_slice(&it.scores),
            None => {
                index.insert(&it.group, order.len());
                order.push(it.clone());
            }
        }
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / (self.tp + self.tn + self.fp + self.fn_) as f64
    }
}

/// Confusion counts over groups; a group is predicted positive when its mean
/// score is at least `threshold`.
pub fn confusion(items: &[ScoredItem], threshold: f64) -> Result<Confusion> {
    if items.is_empty() || items.iter().any(|i| i.scores.is_empty()) {
        return Err(Error::EmptyInput);
    }
    let mut c = Confusion::default();
    for it in group_items(items) {
        match (it.mean_score() >= threshold, it.label == 1) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn accuracy(items: &[ScoredItem], threshold: f64) -> Result<f64> {
    confusion(items, threshold).map(|c| c.accuracy())
}

/// Trapezoidal area under the ROC curve of group-mean scores. Tied scores
/// move the curve diagonally, which counts a tie as half a win.
pub fn auc(items: &[ScoredItem]) -> Result<f64> {
    if items.is_empty() || items.iter().any(|i| i.scores.is_empty()) {
        return Err(Error::EmptyInput);
    }
    let mut pts: Vec<(f64, bool)> = group_items(items)
        .iter()
        .map(|i| (i.mean_score(), i.label == 1))
        .collect();
    let pos = pts.iter().filter(|p| p.1).count() as f64;
    let neg = pts.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::SingleClassInput);
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < pts.len() {
        let (prev_tp, prev_fp) = (tp, fp);
        let s = pts[i].0;
        while i < pts.len() && pts[i].0 == s {
            if pts[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - prev_fp) * (tp + prev_tp) / 2.0;
    }
    Ok(area / (pos * neg))
}

/// Activation statistics of one wedge.
#[derive(Debug, Clone, PartialEq)]
pub struct WedgeActivity {
    pub wedge: usize,
    pub scale: usize,
    pub angle: usize,
    pub band: usize,
    /// Fraction of (sample, channel) pairs with the gate open.
    pub activation: f64,
    pub mean_score: f64,
    /// Per colour channel activation fraction.
    pub per_channel: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatesReport {
    pub wedges: Vec<WedgeActivity>,
    /// Mean number of open gates per colour channel.
    pub mean_counts: Vec<f64>,
    /// Mean continuous score sum per colour channel.
    pub mean_score_sums: Vec<f64>,
    /// Gate values averaged over channels, wedges by samples.
    pub heatmap: Array2<f64>,
}

/// `gates[s][c]` is the gate vector of sample `s`, colour channel `c`.
pub fn gates_report(geometry: &CurveletGeometry, gates: &[Vec<GateVector>]) -> Result<GatesReport> {
    let n_samples = gates.len();
    if n_samples == 0 {
        return Err(Error::EmptyInput);
    }
    let n_channels = gates[0].len();
    let nw = geometry.num_wedges();
    if gates
        .iter()
        .any(|g| g.len() != n_channels || g.iter().any(|v| v.len() != nw))
    {
        return Err(Error::ShapeMismatch("gate vectors do not match the geometry".into()));
    }
    let mut heatmap = Array2::zeros((nw, n_samples));
    let mut open = vec![vec![0usize; n_channels]; nw];
    let mut score = vec![0.0; nw];
    for (s, per_sample) in gates.iter().enumerate() {
        for (c, g) in per_sample.iter().enumerate() {
            for w in 0..nw {
                open[w][c] += g.gates[w] as usize;
                score[w] += g.scores[w];
                heatmap[[w, s]] += g.gates[w] as f64 / n_channels as f64;
            }
        }
    }
    let total = (n_samples * n_channels) as f64;
    let wedges = geometry
        .wedges()
        .iter()
        .enumerate()
        .map(|(w, info)| WedgeActivity {
            wedge: info.index,
            scale: info.scale,
            angle: info.angle,
            band: band_of_scale(info.scale),
            activation: open[w].iter().sum::<usize>() as f64 / total,
            mean_score: score[w] / total,
            per_channel: open[w].iter().map(|&o| o as f64 / n_samples as f64).collect(),
        })
        .collect();
    let mean_counts = (0..n_channels)
        .map(|c| gates.iter().map(|g| g[c].active_count() as f64).sum::<f64>() / n_samples as f64)
        .collect();
    let mean_score_sums = (0..n_channels)
        .map(|c| gates.iter().map(|g| g[c].score_sum()).sum::<f64>() / n_samples as f64)
        .collect();
    Ok(GatesReport {
        wedges,
        mean_counts,
        mean_score_sums,
        heatmap,
    })
}

impl GatesReport {
    /// Mean activation over the wedges of each of bands 1..=3, `None` for an
    /// empty band.
    pub fn band_means(&self) -> [Option<f64>; 3] {
        std::array::from_fn(|b| {
            let v: Vec<f64> = self
                .wedges
                .iter()
                .filter(|w| w.band == b + 1)
                .map(|w| w.activation)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
    }

    /// Mean activation over every wedge outside `band`.
    pub fn mean_outside(&self, band: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .wedges
            .iter()
            .filter(|w| w.band != band)
            .map(|w| w.activation)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let channels = self.mean_counts.len();
        let mut s = String::from("wedge,scale,angle,band,activation,mean_score");
        for c in 0..channels {
            s.push_str(&format!(",activation_c{c}"));
        }
        s.push('\n');
        for w in &self.wedges {
            s.push_str(&format!(
                "{},{},{},{},{},{}",
                w.wedge, w.scale, w.angle, w.band, w.activation, w.mean_score
            ));
            for a in &w.per_channel {
                s.push_str(&format!(",{a}"));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(scores: &[f64], labels: &[u8]) -> Vec<ScoredItem> {
        scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&s, &l))| ScoredItem::single(i.to_string(), s, l))
            .collect()
    }

    #[test]
    fn accuracy_examples() {
        let mut v = Vec::new();
        for i in 0..9 {
            v.push(ScoredItem::single(format!("tp{i}"), 0.9, 1));
        }
        for i in 0..8 {
            v.push(ScoredItem::single(format!("tn{i}"), 0.1, 0));
        }
        v.push(ScoredItem::single("fp", 0.7, 0));
        v.push(ScoredItem::single("fn0", 0.2, 1));
        v.push(ScoredItem::single("fn1", 0.3, 1));
        let c = confusion(&v, 0.5).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (9, 8, 1, 2));
        assert_eq!(accuracy(&v, 0.5).unwrap(), 0.85);

        let video = ScoredItem {
            group: "v".into(),
            scores: vec![0.9, 0.2],
            label: 1,
        };
        assert_eq!(confusion(&[video], 0.5).unwrap().tp, 1);
        assert_eq!(accuracy(&[], 0.5), Err(Error::EmptyInput));
    }

    #[test]
    fn frames_of_one_group_are_averaged() {
        let v = vec![
            ScoredItem::single("a", 0.9, 1),
            ScoredItem::single("b", 0.4, 0),
            ScoredItem::single("a", 0.2, 1),
        ];
        let g = group_items(&v);
        assert_eq!(g.len(), 2);
        assert!((g[0].mean_score() - 0.55).abs() < 1e-15);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&items(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auc(&items(&[0.5; 4], &[1, 0, 1, 0])).unwrap(), 0.5);
        assert_eq!(auc(&items(&[0.9, 0.4, 0.6, 0.2], &[1, 1, 0, 0])).unwrap(), 0.75);
        assert_eq!(auc(&items(&[0.9, 0.4], &[1, 1])), Err(Error::SingleClassInput));
    }

    #[test]
    fn auc_label_flip_and_monotone_transform() {
        let s = [0.3, 0.7, 0.7, 0.1, 0.9, 0.5];
        let l = [0, 1, 0, 0, 1, 1];
        let a = auc(&items(&s, &l)).unwrap();
        let flipped: Vec<u8> = l.iter().map(|x| 1 - x).collect();
        assert!((auc(&items(&s, &flipped)).unwrap() - (1.0 - a)).abs() < 1e-15);
        let t: Vec<f64> = s.iter().map(|x| (5.0 * x).exp()).collect();
        assert_eq!(auc(&items(&t, &l)).unwrap(), a);
    }

    #[test]
    fn report_from_open_gates() {
        let geo = CurveletGeometry::new(16, 16, 3, 8).unwrap();
        let g = GateVector::from_scores(vec![0.5; 10]);
        let r = gates_report(&geo, &[vec![g.clone(), g.clone(), g]]).unwrap();
        assert!(r.wedges.iter().all(|w| w.activation == 1.0));
        assert_eq!(r.mean_counts, vec![10.0; 3]);
        assert_eq!(r.band_means(), [Some(1.0), Some(1.0), None]);
        assert!(r
            .to_csv()
            .starts_with("wedge,scale,angle,band,activation,mean_score,activation_c0"));
    }
}
