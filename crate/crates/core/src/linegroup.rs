//! Text line extraction as a min-cost flow over character candidates.
//!
//! Every candidate above the confidence floor becomes a node pair joined by
//! an edge whose cost rewards confident candidates. Transitions link a
//! candidate to compatible right neighbours. Each unit of flow from source
//! to sink traces one text line; candidates left without flow are treated as
//! false positives.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{read_jsonl, write_jsonl, CharCandidate};
use crate::error::Result;
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowGraphConfig {
    /// Candidates at or below this score are ignored.
    pub conf_floor: f64,
    pub entry_cost: f64,
    pub exit_cost: f64,
    pub data_cost_scale: f64,
    pub w_dist: f64,
    pub w_scale: f64,
    pub w_vert: f64,
    /// Largest horizontal gap between neighbours, in character heights.
    pub max_pair_gap: f64,
    pub max_height_ratio: f64,
    /// Largest vertical centre offset between neighbours, in character heights.
    pub max_vert_offset: f64,
}

impl Default for FlowGraphConfig {
    fn default() -> Self {
        Self {
            conf_floor: 0.05,
            entry_cost: 1.0,
            exit_cost: 1.0,
            data_cost_scale: 2.0,
            w_dist: 1.0,
            w_scale: 1.0,
            w_vert: 1.0,
            max_pair_gap: 2.0,
            max_height_ratio: 2.0,
            max_vert_offset: 0.5,
        }
    }
}

impl FlowGraphConfig {
    pub fn data_cost(&self, score: f64) -> f64 {
        self.data_cost_scale * (self.conf_floor - score)
    }

    /// Cost of linking `a` to its right neighbour `b`, or `None` when they
    /// are incompatible.
    pub fn transition_cost(&self, a: &BBox, b: &BBox) -> Option<f64> {
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        if bx <= ax {
            return None;
        }
        let (ha, hb) = (a.height(), b.height());
        let hmin = ha.min(hb);
        if ha.max(hb) / hmin > self.max_height_ratio {
            return None;
        }
        let gap = (b.x_min() - a.x_max()).max(0.0);
        if gap > self.max_pair_gap * hmin {
            return None;
        }
        let vert = (ay - by).abs();
        if vert > self.max_vert_offset * hmin {
            return None;
        }
        Some(
            self.w_dist * gap / hmin
                + self.w_scale * (ha / hb).ln().abs()
                + self.w_vert * vert / hmin,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextLine {
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Indices into the candidate list, left to right.
    #[serde(rename = "member_indices")]
    pub members: Vec<usize>,
    /// Mean member score.
    pub line_score: f64,
}

impl TextLine {
    fn from_members(candidates: &[CharCandidate], members: Vec<usize>) -> Self {
        let boxes: Vec<BBox> = members.iter().map(|&i| candidates[i].bbox).collect();
        let line_score =
            members.iter().map(|&i| candidates[i].score).sum::<f64>() / members.len() as f64;
        Self {
            bbox: BBox::union_all(&boxes).expect("lines have members"),
            members,
            line_score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Entry,
    Data,
    Exit,
    Transition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEdge {
    pub from: usize,
    pub to: usize,
    pub cost: f64,
    pub kind: EdgeKind,
    flow: bool,
}

/// Node 0 is the source, node 1 the sink; candidate `k` of `gated` owns
/// nodes `2 + 2k` (in) and `3 + 2k` (out).
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    /// Candidate indices that passed the confidence floor, in input order.
    pub gated: Vec<usize>,
    pub edges: Vec<FlowEdge>,
}

pub const SOURCE: usize = 0;
pub const SINK: usize = 1;

impl FlowNetwork {
    pub fn node_count(&self) -> usize {
        2 + 2 * self.gated.len()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &FlowEdge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Transition)
    }

    fn in_node(k: usize) -> usize {
        2 + 2 * k
    }

    fn out_node(k: usize) -> usize {
        3 + 2 * k
    }
}

pub fn build_flow_graph(candidates: &[CharCandidate], config: &FlowGraphConfig) -> FlowNetwork {
    let gated: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].score > config.conf_floor)
        .collect();
    let mut edges = Vec::new();
    let mut edge = |from, to, cost, kind| {
        edges.push(FlowEdge {
            from,
            to,
            cost,
            kind,
            flow: false,
        })
    };
    for (k, &i) in gated.iter().enumerate() {
        let (inn, out) = (FlowNetwork::in_node(k), FlowNetwork::out_node(k));
        edge(SOURCE, inn, config.entry_cost, EdgeKind::Entry);
        edge(inn, out, config.data_cost(candidates[i].score), EdgeKind::Data);
        edge(out, SINK, config.exit_cost, EdgeKind::Exit);
    }
    for (k, &i) in gated.iter().enumerate() {
        for (l, &j) in gated.iter().enumerate() {
            if let Some(c) = config.transition_cost(&candidates[i].bbox, &candidates[j].bbox) {
                edge(
                    FlowNetwork::out_node(k),
                    FlowNetwork::in_node(l),
                    c,
                    EdgeKind::Transition,
                );
            }
        }
    }
    FlowNetwork { gated, edges }
}

const EPS: f64 = 1e-12;

/// Bellman-Ford over the residual network. Returns the path as edge
/// indices with a direction flag (true = forward), and its cost.
fn shortest_path(net: &FlowNetwork) -> Option<(Vec<(usize, bool)>, f64)> {
    let n = net.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<(usize, bool)>> = vec![None; n];
    dist[SOURCE] = 0.0;
    for _ in 0..n {
        let mut changed = false;
        for (e, edge) in net.edges.iter().enumerate() {
            let (u, v, c, fwd) = if edge.flow {
                (edge.to, edge.from, -edge.cost, false)
            } else {
                (edge.from, edge.to, edge.cost, true)
            };
            if dist[u].is_finite() && dist[u] + c < dist[v] - EPS {
                dist[v] = dist[u] + c;
                pred[v] = Some((e, fwd));
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !dist[SINK].is_finite() {
        return None;
    }
    let mut path = Vec::new();
    let mut v = SINK;
    while v != SOURCE {
        let (e, fwd) = pred[v]?;
        path.push((e, fwd));
        v = if fwd { net.edges[e].from } else { net.edges[e].to };
        if path.len() > net.edges.len() {
            return None;
        }
    }
    path.reverse();
    Some((path, dist[SINK]))
}

/// Pushes unit flows along shortest paths while they lower the total cost.
fn solve(net: &mut FlowNetwork) {
    while let Some((path, cost)) = shortest_path(net) {
        if cost >= -EPS {
            break;
        }
        for (e, fwd) in path {
            net.edges[e].flow = fwd;
        }
    }
}

/// Groups candidates into horizontal text lines.
///
/// Lines are returned in order of their leftmost member's input index.
pub fn extract_lines(candidates: &[CharCandidate], config: &FlowGraphConfig) -> Vec<TextLine> {
    let mut net = build_flow_graph(candidates, config);
    solve(&mut net);
    let mut next = vec![None; net.node_count()];
    let mut starts = Vec::new();
    for e in net.edges.iter().filter(|e| e.flow) {
        match e.kind {
            EdgeKind::Entry => starts.push(e.to),
            EdgeKind::Transition => next[e.from] = Some(e.to),
            _ => {}
        }
    }
    starts.sort_unstable();
    starts
        .into_iter()
        .map(|first| {
            let mut members = Vec::new();
            let mut node = Some(first);
            while let Some(inn) = node {
                let k = (inn - 2) / 2;
                members.push(net.gated[k]);
                node = next[inn + 1];
            }
            TextLine::from_members(candidates, members)
        })
        .collect()
}

/// Objective value of a set of lines under the flow cost model; `None` when
/// a line uses an incompatible transition. Unused candidates cost nothing.
pub fn partition_cost(
    candidates: &[CharCandidate],
    lines: &[Vec<usize>],
    config: &FlowGraphConfig,
) -> Option<f64> {
    let mut total = 0.0;
    for line in lines {
        if line.is_empty() {
            return None;
        }
        total += config.entry_cost + config.exit_cost;
        for &i in line {
            if candidates[i].score <= config.conf_floor {
                return None;
            }
            total += config.data_cost(candidates[i].score);
        }
        for w in line.windows(2) {
            total += config.transition_cost(&candidates[w[0]].bbox, &candidates[w[1]].bbox)?;
        }
    }
    Some(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageLines {
    pub image_id: String,
    pub lines: Vec<TextLine>,
}

pub fn save_lines(path: impl AsRef<Path>, name: &str, lines: &[ImageLines]) -> Result<()> {
    write_jsonl(path.as_ref(), name, lines)
}

pub fn load_lines(path: impl AsRef<Path>) -> Result<Vec<ImageLines>> {
    Ok(read_jsonl(path.as_ref())?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(x: f64, y: f64, w: f64, h: f64, s: f64) -> CharCandidate {
        CharCandidate::new(BBox::new(x, y, x + w, y + h).unwrap(), s).unwrap()
    }

    /// Minimum over all chain covers, built by visiting candidates in
    /// x-centre order and either skipping, opening a chain, or extending a
    /// chain whose last member is compatible.
    fn brute_force(cands: &[CharCandidate], cfg: &FlowGraphConfig) -> f64 {
        let mut order: Vec<usize> = (0..cands.len())
            .filter(|&i| cands[i].score > cfg.conf_floor)
            .collect();
        order.sort_by(|&a, &b| cands[a].bbox.center().0.total_cmp(&cands[b].bbox.center().0));
        fn go(
            k: usize,
            order: &[usize],
            chains: &mut Vec<Vec<usize>>,
            cands: &[CharCandidate],
            cfg: &FlowGraphConfig,
            best: &mut f64,
        ) {
            if k == order.len() {
                if let Some(v) = partition_cost(cands, chains, cfg) {
                    *best = best.min(v);
                }
                return;
            }
            let i = order[k];
            go(k + 1, order, chains, cands, cfg, best);
            chains.push(vec![i]);
            go(k + 1, order, chains, cands, cfg, best);
            chains.pop();
            for ch in 0..chains.len() {
                let last = *chains[ch].last().unwrap();
                if cfg.transition_cost(&cands[last].bbox, &cands[i].bbox).is_some() {
                    chains[ch].push(i);
                    go(k + 1, order, chains, cands, cfg, best);
                    chains[ch].pop();
                }
            }
        }
        let mut best = 0.0;
        go(0, &order, &mut Vec::new(), cands, cfg, &mut best);
        best
    }

    fn members(lines: &[TextLine]) -> Vec<Vec<usize>> {
        lines.iter().map(|l| l.members.clone()).collect()
    }

    #[test]
    fn graph_examples() {
        let cfg = FlowGraphConfig::default();
        let net = build_flow_graph(&[], &cfg);
        assert_eq!(net.node_count(), 2);
        assert!(net.edges.is_empty());
        assert!(extract_lines(&[], &cfg).is_empty());

        let pair = [c(0., 0., 8., 10., 0.9), c(10., 0., 8., 10., 0.9)];
        assert_eq!(build_flow_graph(&pair, &cfg).transitions().count(), 1);

        let mismatched = [c(0., 0., 8., 10., 0.9), c(10., 0., 8., 25., 0.9)];
        assert_eq!(build_flow_graph(&mismatched, &cfg).transitions().count(), 0);
    }

    #[test]
    fn five_collinear_characters_form_one_line() {
        let cfg = FlowGraphConfig::default();
        let cands: Vec<_> = (0..5).map(|i| c(i as f64 * 12.0, 0., 10., 14., 0.9)).collect();
        let lines = extract_lines(&cands, &cfg);
        assert_eq!(members(&lines), vec![vec![0, 1, 2, 3, 4]]);
        assert_eq!(lines[0].bbox, BBox::new(0., 0., 58., 14.).unwrap());
        let got = partition_cost(&cands, &members(&lines), &cfg).unwrap();
        assert!((got - brute_force(&cands, &cfg)).abs() < 1e-9);
    }

    #[test]
    fn two_rows_form_two_lines() {
        let cfg = FlowGraphConfig::default();
        let mut cands = Vec::new();
        for i in 0..3 {
            cands.push(c(i as f64 * 12.0, 0., 10., 10., 0.8));
            cands.push(c(i as f64 * 12.0 + 3.0, 9., 10., 10., 0.8));
        }
        let lines = extract_lines(&cands, &cfg);
        assert_eq!(members(&lines), vec![vec![0, 2, 4], vec![1, 3, 5]]);
        let got = partition_cost(&cands, &members(&lines), &cfg).unwrap();
        assert!((got - brute_force(&cands, &cfg)).abs() < 1e-9);
    }

    #[test]
    fn low_scores_yield_nothing() {
        let cfg = FlowGraphConfig::default();
        let cands: Vec<_> = (0..4).map(|i| c(i as f64 * 12.0, 0., 10., 10., 0.05)).collect();
        assert!(extract_lines(&cands, &cfg).is_empty());
    }

    #[test]
    fn confident_singletons_when_costs_allow() {
        let cfg = FlowGraphConfig {
            entry_cost: 0.5,
            exit_cost: 0.5,
            ..FlowGraphConfig::default()
        };
        let lines = extract_lines(&[c(0., 0., 10., 10., 0.95)], &cfg);
        assert_eq!(members(&lines), vec![vec![0]]);
        assert!(extract_lines(&[c(0., 0., 10., 10., 0.95)], &FlowGraphConfig::default()).is_empty());
    }

    #[test]
    fn lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cands: Vec<_> = (0..3).map(|i| c(i as f64 * 12.0, 0., 10., 14., 0.9)).collect();
        let rec = vec![ImageLines {
            image_id: "a".into(),
            lines: extract_lines(&cands, &FlowGraphConfig::default()),
        }];
        let p = dir.path().join("lines.jsonl");
        save_lines(&p, "t", &rec).unwrap();
        assert_eq!(load_lines(&p).unwrap(), rec);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"member_indices\"") && text.contains("\"box\""));
    }

    fn arb_scene() -> impl Strategy<Value = Vec<CharCandidate>> {
        prop::collection::vec(
            (0.0..60.0f64, 0.0..20.0f64, 6.0..14.0f64, 8.0..16.0f64, 0.0..1.0f64),
            0..=7,
        )
        .prop_map(|v| v.into_iter().map(|(x, y, w, h, s)| c(x, y, w, h, s)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn optimal_on_small_scenes(cands in arb_scene()) {
            let cfg = FlowGraphConfig::default();
            let lines = extract_lines(&cands, &cfg);
            let got = partition_cost(&cands, &members(&lines), &cfg).unwrap();
            prop_assert!((got - brute_force(&cands, &cfg)).abs() < 1e-9);
        }

        #[test]
        fn members_disjoint_ordered_and_unioned(cands in arb_scene()) {
            let lines = extract_lines(&cands, &FlowGraphConfig::default());
            let mut seen = std::collections::HashSet::new();
            for l in &lines {
                for w in l.members.windows(2) {
                    prop_assert!(cands[w[0]].bbox.center().0 < cands[w[1]].bbox.center().0);
                }
                for &m in &l.members {
                    prop_assert!(seen.insert(m));
                }
                let boxes: Vec<BBox> = l.members.iter().map(|&m| cands[m].bbox).collect();
                prop_assert_eq!(l.bbox, BBox::union_all(&boxes).unwrap());
            }
        }

        #[test]
        fn raising_floor_never_adds(cands in arb_scene(), lo in 0.0..0.5f64, d in 0.0..0.5f64) {
            let used = |floor: f64| -> std::collections::HashSet<usize> {
                let cfg = FlowGraphConfig { conf_floor: floor, ..FlowGraphConfig::default() };
                extract_lines(&cands, &cfg).into_iter().flat_map(|l| l.members).collect()
            };
            let hi_used = used(lo + d);
            for m in hi_used {
                prop_assert!(cands[m].score > lo + d);
            }
        }
    }
}
