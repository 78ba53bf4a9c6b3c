//! Per-group topic activity statistics and their plot data.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::Array2;

use crate::merge::TopicModel;
use crate::sae::Activations;

/// Macro-averaged activity ratio above which a topic is flagged.
pub const OVER_ACTIVE_THRESHOLD: f64 = 0.30;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("E_GROUP: unknown group label {label:?} for document {doc}")]
    UnknownGroup { doc: usize, label: String },
    #[error("E_ALIGN: {rows} activation rows but {labels} group labels")]
    Misaligned { rows: usize, labels: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub groups: Vec<String>,
    pub group_sizes: Vec<usize>,
    /// `groups x topics`.
    pub activity_ratio: Array2<f64>,
    /// Population variance of the ratio across groups, per topic.
    pub variance: Vec<f64>,
    pub macro_ratio: Vec<f64>,
    pub over_active: Vec<bool>,
}

impl GroupStats {
    pub fn n_topics(&self) -> usize {
        self.variance.len()
    }

    /// Long-format CSV: `group,topic,activity_ratio`.
    pub fn activity_csv(&self) -> String {
        let mut s = String::from("group,topic,activity_ratio\n");
        for (g, name) in self.groups.iter().enumerate() {
            for t in 0..self.n_topics() {
                writeln!(s, "{},{},{}", csv_field(name), t, self.activity_ratio[[g, t]]).unwrap();
            }
        }
        s
    }

    /// `topic,variance,macro_ratio,over_active`.
    pub fn topic_csv(&self) -> String {
        let mut s = String::from("topic,variance,macro_ratio,over_active\n");
        for t in 0..self.n_topics() {
            writeln!(s, "{},{},{},{}", t, self.variance[t], self.macro_ratio[t], self.over_active[t]).unwrap();
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Activity ratio of every topic in every group.
///
/// A topic is active in a document when any of its member features has a
/// strictly positive activation. `groups` fixes the output order; a document
/// label outside it is rejected.
pub fn topic_activity(
    acts: &Activations,
    topics: &TopicModel,
    doc_groups: &[String],
    groups: &[String],
    threshold: f64,
) -> Result<GroupStats> {
    if acts.n_rows() != doc_groups.len() {
        return Err(StatsError::Misaligned { rows: acts.n_rows(), labels: doc_groups.len() });
    }
    if groups.is_empty() {
        return Err(StatsError::InvalidInput("no groups".into()));
    }
    let index: HashMap<&str, usize> = groups.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    if index.len() != groups.len() {
        return Err(StatsError::InvalidInput("duplicate group names".into()));
    }
    let n_topics = topics.topics.len();
    let mut topic_of = vec![Vec::new(); acts.n_features()];
    for (t, topic) in topics.topics.iter().enumerate() {
        for &f in &topic.members {
            if f >= acts.n_features() {
                return Err(StatsError::InvalidInput(format!("member feature {f} out of range")));
            }
            topic_of[f].push(t);
        }
    }

    let mut counts = Array2::<usize>::zeros((groups.len(), n_topics));
    let mut sizes = vec![0usize; groups.len()];
    let mut seen = vec![usize::MAX; n_topics];
    for (i, label) in doc_groups.iter().enumerate() {
        let g = *index
            .get(label.as_str())
            .ok_or_else(|| StatsError::UnknownGroup { doc: i, label: label.clone() })?;
        sizes[g] += 1;
        for &(f, v) in acts.row(i) {
            if v > 0.0 {
                for &t in &topic_of[f as usize] {
                    if seen[t] != i {
                        seen[t] = i;
                        counts[[g, t]] += 1;
                    }
                }
            }
        }
    }

    let ratio = Array2::from_shape_fn((groups.len(), n_topics), |(g, t)| {
        if sizes[g] == 0 { 0.0 } else { counts[[g, t]] as f64 / sizes[g] as f64 }
    });
    let ng = groups.len() as f64;
    let macro_ratio: Vec<f64> = (0..n_topics).map(|t| ratio.column(t).sum() / ng).collect();
    let variance = (0..n_topics)
        .map(|t| ratio.column(t).iter().map(|r| (r - macro_ratio[t]).powi(2)).sum::<f64>() / ng)
        .collect();
    let over_active = macro_ratio.iter().map(|&m| m > threshold).collect();
    Ok(GroupStats {
        groups: groups.to_vec(),
        group_sizes: sizes,
        activity_ratio: ratio,
        variance,
        macro_ratio,
        over_active,
    })
}

/// Up to `n` topic ids by descending variance, over-active topics excluded, ties to the lower id.
pub fn top_variance_topics(stats: &GroupStats, n: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..stats.n_topics()).filter(|&t| !stats.over_active[t]).collect();
    ids.sort_by(|&a, &b| stats.variance[b].total_cmp(&stats.variance[a]).then(a.cmp(&b)));
    ids.truncate(n);
    ids
}

/// Grouped bar chart of the activity ratios of `topics`, one bar per group.
pub fn activity_svg(stats: &GroupStats, topics: &[usize], labels: &[String]) -> String {
    const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f"];
    let ng = stats.groups.len().max(1);
    let bar = 14.0;
    let gap = 18.0;
    let slot = bar * ng as f64 + gap;
    let (left, top, height) = (50.0, 20.0, 220.0);
    let width = left + slot * topics.len().max(1) as f64 + 160.0;
    let total_h = top + height + 110.0;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" font-family="sans-serif" font-size="10">"#).unwrap();
    writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + height).unwrap();
    writeln!(s, r#"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#, width - 160.0, y = top + height).unwrap();
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = top + height * (1.0 - v);
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, left - 4.0, y + 3.0).unwrap();
    }
    for (i, &t) in topics.iter().enumerate() {
        let x0 = left + gap / 2.0 + slot * i as f64;
        for g in 0..stats.groups.len() {
            let r = stats.activity_ratio[[g, t]];
            let h = height * r;
            writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar}" height="{h:.1}" fill="{}"/>"#,
                x0 + bar * g as f64,
                top + height - h,
                PALETTE[g % PALETTE.len()]
            )
            .unwrap();
        }
        let label = labels.get(i).map(String::as_str).unwrap_or("");
        let cx = x0 + bar * ng as f64 / 2.0;
        let ly = top + height + 12.0;
        writeln!(
            s,
            r#"<text x="{cx:.1}" y="{ly}" transform="rotate(45 {cx:.1} {ly})">{}</text>"#,
            xml_escape(&format!("{t}: {label}"))
        )
        .unwrap();
    }
    let lx = width - 150.0;
    for (g, name) in stats.groups.iter().enumerate() {
        let y = top + 14.0 * g as f64;
        writeln!(s, r#"<rect x="{lx}" y="{y}" width="10" height="10" fill="{}"/>"#, PALETTE[g % PALETTE.len()]).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 14.0, y + 9.0, xml_escape(name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
