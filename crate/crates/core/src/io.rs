//! Text formats and run manifests.
//!
//! Node ids are 1-based in every file. Grid files hold `node` and `edge`
//! records, layer files hold `xi` and `edge` records; `#` starts a comment
//! and an optional `version <major>.<minor>` record pins the format.
//! CSV and JSON outputs embed a [`RunManifest`]. Floats are written with 17
//! significant digits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::dynamics::{Event, EventKind};
use crate::error::{Error, Result};
use crate::grid::{GridLine, GridNode, NodeKind, PowerGrid};
use crate::metrics::MetricsSample;
use crate::scenario::{CriticalScan, RunOutcome, SweepResult};
use crate::topology::{Adjacency, ControlLayer};

pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_VERSION: &str = "1.0";

pub const TIMESERIES_HEADER: &str = "t,r,phi,delta_omega,mean_omega,power_loss,n_failed,n_active_links";

const OUTCOME_COLUMNS: &str = "feasible,stable,n_c_during,n_c_after,n_active_final,\
mean_delta_omega_during,mean_delta_omega_after,final_r";

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetId {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl DatasetId {
    pub fn from_file(role: &str, path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(Self {
            role: role.into(),
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        })
    }
}

/// Provenance record written into every output file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: String,
    pub tool_version: String,
    pub preset: Option<String>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub datasets: Vec<DatasetId>,
    pub metadata: BTreeMap<String, String>,
}

impl RunManifest {
    /// Manifest whose `config_hash` is the SHA-256 of `config` as JSON.
    pub fn new<C: Serialize>(config: &C) -> Result<Self> {
        let bytes = serde_json::to_vec(config)?;
        Ok(Self {
            format_version: FORMAT_VERSION.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            preset: None,
            config_hash: sha256_hex(&bytes),
            seeds: Vec::new(),
            datasets: Vec::new(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_preset(mut self, preset: Option<&str>) -> Self {
        self.preset = preset.map(str::to_owned);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds.push(seed);
        self
    }

    pub fn with_dataset(mut self, id: DatasetId) -> Self {
        self.datasets.push(id);
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// `#` header lines identifying the file kind and carrying the manifest.
    pub fn comment_block(&self, kind: &str) -> String {
        let json = serde_json::to_string(self).expect("manifest serializes");
        format!("# swinggrid {kind} {FORMAT_VERSION}\n# manifest {json}\n")
    }
}

fn check_version(token: &str, line: usize) -> Result<()> {
    let major = token.split('.').next().and_then(|m| m.parse::<u32>().ok());
    match major {
        Some(FORMAT_MAJOR) => Ok(()),
        Some(_) => Err(Error::UnsupportedVersion(token.into())),
        None => Err(Error::Parse {
            line,
            msg: format!("bad version '{token}'"),
        }),
    }
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(k, raw)| {
        let body = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = body.split_whitespace().collect();
        (!tokens.is_empty()).then_some((k + 1, tokens))
    })
}

fn field<T: std::str::FromStr>(tokens: &[&str], k: usize, line: usize, what: &str) -> Result<T> {
    let tok = tokens.get(k).ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {what} '{tok}'"),
    })
}

fn expect_len(tokens: &[&str], n: usize, line: usize) -> Result<()> {
    if tokens.len() != n {
        return Err(Error::Parse {
            line,
            msg: format!(
                "'{}' record takes {} fields, got {}",
                tokens[0],
                n - 1,
                tokens.len() - 1
            ),
        });
    }
    Ok(())
}

fn node_id(tokens: &[&str], k: usize, line: usize) -> Result<usize> {
    let id: usize = field(tokens, k, line, "node id")?;
    if id == 0 {
        return Err(Error::Parse {
            line,
            msg: "node ids start at 1".into(),
        });
    }
    Ok(id - 1)
}

/// Nodes must be numbered 1..=N with no gaps; returns N.
fn check_ids(ids: &[(usize, usize)], what: &str) -> Result<usize> {
    let n = ids.len();
    let mut seen = vec![false; n];
    for &(id, line) in ids {
        if id >= n {
            return Err(Error::Parse {
                line,
                msg: format!("{what} id {} exceeds count {n}", id + 1),
            });
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(Error::Parse {
                line,
                msg: format!("{what} {} declared twice", id + 1),
            });
        }
    }
    Ok(n)
}

pub fn parse_grid(text: &str) -> Result<PowerGrid> {
    let mut nodes: Vec<(GridNode, usize)> = Vec::new();
    let mut edges: Vec<(GridLine, usize, usize, usize)> = Vec::new();
    for (line, tokens) in records(text) {
        match tokens[0] {
            "version" => {
                expect_len(&tokens, 2, line)?;
                check_version(tokens[1], line)?;
            }
            "node" => {
                expect_len(&tokens, 6, line)?;
                let id = node_id(&tokens, 1, line)?;
                let kind = match tokens[2].to_ascii_lowercase().as_str() {
                    "generator" | "gen" | "g" => NodeKind::Generator,
                    "load" | "l" => NodeKind::Load,
                    other => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("unknown node kind '{other}'"),
                        })
                    }
                };
                let node = GridNode {
                    id,
                    kind,
                    power: field(&tokens, 3, line, "power")?,
                    inertia: field(&tokens, 4, line, "inertia")?,
                    damping: field(&tokens, 5, line, "damping")?,
                };
                nodes.push((node, line));
            }
            "edge" => {
                expect_len(&tokens, 5, line)?;
                let a = node_id(&tokens, 1, line)?;
                let b = node_id(&tokens, 2, line)?;
                let l = GridLine::new(
                    a,
                    b,
                    field(&tokens, 3, line, "coupling")?,
                    field(&tokens, 4, line, "alpha")?,
                );
                edges.push((l, line, a, b));
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown record '{other}'"),
                })
            }
        }
    }
    let ids: Vec<(usize, usize)> = nodes.iter().map(|(n, l)| (n.id, *l)).collect();
    let n = check_ids(&ids, "node")?;
    for &(_, line, a, b) in &edges {
        for node in [a, b] {
            if node >= n {
                return Err(Error::IndexOutOfRange {
                    line,
                    node: node + 1,
                    n,
                });
            }
        }
    }
    nodes.sort_by_key(|(node, _)| node.id);
    let grid = PowerGrid::new(
        nodes.into_iter().map(|(node, _)| node).collect(),
        edges.into_iter().map(|(l, ..)| l).collect(),
    );
    let violations = grid.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations.iter().map(|v| v.to_string()).collect()));
    }
    Ok(grid)
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<PowerGrid> {
    parse_grid(&fs::read_to_string(path)?)
}

pub fn format_grid(grid: &PowerGrid) -> String {
    let mut s = format!("version {FORMAT_VERSION}\n");
    for n in &grid.nodes {
        let kind = match n.kind {
            NodeKind::Generator => "generator",
            NodeKind::Load => "load",
        };
        let _ = writeln!(
            s,
            "node {} {} {} {} {}",
            n.id + 1,
            kind,
            fmt_f64(n.power),
            fmt_f64(n.inertia),
            fmt_f64(n.damping)
        );
    }
    for l in &grid.lines {
        let _ = writeln!(
            s,
            "edge {} {} {} {}",
            l.a + 1,
            l.b + 1,
            fmt_f64(l.coupling),
            fmt_f64(l.capacity_fraction)
        );
    }
    s
}

pub fn save_grid(path: impl AsRef<Path>, grid: &PowerGrid) -> Result<()> {
    Ok(fs::write(path, format_grid(grid))?)
}

/// Parses a layer file. The gain is not stored in the file and is 0.
pub fn parse_layer(text: &str) -> Result<ControlLayer> {
    let mut xi: Vec<(usize, bool, usize)> = Vec::new();
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    for (line, tokens) in records(text) {
        match tokens[0] {
            "version" => {
                expect_len(&tokens, 2, line)?;
                check_version(tokens[1], line)?;
            }
            "xi" => {
                expect_len(&tokens, 3, line)?;
                let id = node_id(&tokens, 1, line)?;
                let pinned = match tokens[2] {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("pinning must be 0 or 1, got '{other}'"),
                        })
                    }
                };
                xi.push((id, pinned, line));
            }
            "edge" => {
                expect_len(&tokens, 3, line)?;
                edges.push((node_id(&tokens, 1, line)?, node_id(&tokens, 2, line)?, line));
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown record '{other}'"),
                })
            }
        }
    }
    let ids: Vec<(usize, usize)> = xi.iter().map(|&(id, _, l)| (id, l)).collect();
    let n = check_ids(&ids, "xi")?;
    let mut pinning = vec![false; n];
    for &(id, p, _) in &xi {
        pinning[id] = p;
    }
    let mut adjacency = Adjacency::empty(n);
    let mut seen = BTreeSet::new();
    for &(a, b, line) in &edges {
        for node in [a, b] {
            if node >= n {
                return Err(Error::IndexOutOfRange {
                    line,
                    node: node + 1,
                    n,
                });
            }
        }
        if a == b {
            return Err(Error::Parse {
                line,
                msg: format!("self-link on node {}", a + 1),
            });
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate edge {} {}", a + 1, b + 1),
            });
        }
        adjacency.insert(a, b);
    }
    Ok(ControlLayer::new(adjacency, pinning, 0.0))
}

pub fn load_layer(path: impl AsRef<Path>) -> Result<ControlLayer> {
    parse_layer(&fs::read_to_string(path)?)
}

pub fn format_layer(layer: &ControlLayer) -> String {
    let mut s = format!("version {FORMAT_VERSION}\n");
    for (i, &p) in layer.pinning.iter().enumerate() {
        let _ = writeln!(s, "xi {} {}", i + 1, u8::from(p));
    }
    for (a, b) in layer.adjacency.edges() {
        let _ = writeln!(s, "edge {} {}", a + 1, b + 1);
    }
    s
}

pub fn save_layer(path: impl AsRef<Path>, layer: &ControlLayer) -> Result<()> {
    Ok(fs::write(path, format_layer(layer))?)
}

pub fn format_timeseries(manifest: &RunManifest, samples: &[MetricsSample]) -> String {
    let mut s = manifest.comment_block("timeseries");
    s.push_str(TIMESERIES_HEADER);
    s.push('\n');
    for x in samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(x.t),
            fmt_f64(x.r),
            fmt_f64(x.phi),
            fmt_f64(x.delta_omega),
            fmt_f64(x.mean_omega),
            fmt_f64(x.power_loss),
            x.n_failed,
            x.n_active_links
        );
    }
    s
}

pub fn write_timeseries(path: impl AsRef<Path>, manifest: &RunManifest, samples: &[MetricsSample]) -> Result<()> {
    Ok(fs::write(path, format_timeseries(manifest, samples))?)
}

fn outcome_fields(o: &RunOutcome) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        u8::from(o.feasible),
        u8::from(o.stable),
        o.n_c_during,
        o.n_c_after,
        o.n_active_final,
        fmt_f64(o.mean_delta_omega_during),
        fmt_f64(o.mean_delta_omega_after),
        fmt_f64(o.final_r)
    )
}

/// One row per cell, G_I-major (all G_P values for the first G_I first).
pub fn format_sweep(manifest: &RunManifest, result: &SweepResult) -> String {
    let mut s = manifest.comment_block("sweep");
    let _ = writeln!(s, "gp,gi,{OUTCOME_COLUMNS}");
    for (gp, gi, o) in result.iter() {
        let _ = writeln!(s, "{},{},{}", fmt_f64(gp), fmt_f64(gi), outcome_fields(o));
    }
    s
}

pub fn write_sweep(path: impl AsRef<Path>, manifest: &RunManifest, result: &SweepResult) -> Result<()> {
    Ok(fs::write(path, format_sweep(manifest, result))?)
}

pub fn format_gp_curve(manifest: &RunManifest, curve: &[(f64, RunOutcome)]) -> String {
    let mut s = manifest.comment_block("gp-curve");
    let _ = writeln!(s, "gp,{OUTCOME_COLUMNS}");
    for (gp, o) in curve {
        let _ = writeln!(s, "{},{}", fmt_f64(*gp), outcome_fields(o));
    }
    s
}

pub fn format_critical_scan(manifest: &RunManifest, scan: &CriticalScan) -> String {
    let mut s = manifest.comment_block("critical-scan");
    let _ = writeln!(s, "node,n_c,critical,{OUTCOME_COLUMNS}");
    for x in &scan.nodes {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            x.node + 1,
            x.n_c,
            u8::from(x.n_c != 0),
            outcome_fields(&x.outcome)
        );
    }
    s
}

/// Event log as JSON; lines are identified by their 1-based endpoints.
pub fn format_events(manifest: &RunManifest, grid: &PowerGrid, events: &[Event]) -> String {
    let entries: Vec<serde_json::Value> = events
        .iter()
        .map(|e| match e.kind {
            EventKind::OverloadTrip => {
                let (a, b) = grid.lines[e.subject].endpoints();
                json!({ "t": e.t, "kind": e.kind, "line": [a + 1, b + 1] })
            }
            _ => json!({ "t": e.t, "kind": e.kind, "node": e.subject + 1 }),
        })
        .collect();
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "manifest": manifest,
        "events": entries,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("event log serializes");
    s.push('\n');
    s
}

pub fn write_events(path: impl AsRef<Path>, manifest: &RunManifest, grid: &PowerGrid, events: &[Event]) -> Result<()> {
    Ok(fs::write(path, format_events(manifest, grid, events))?)
}

/// Reads the `format_version` of an event log and rejects unknown majors.
pub fn check_events_version(text: &str) -> Result<()> {
    let doc: serde_json::Value = serde_json::from_str(text)?;
    let v = doc
        .get("format_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "missing format_version".into(),
        })?;
    check_version(v, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::gen_er;

    const T2: &str = "# two-node test grid\n\
        version 1.0\n\
        node 1 generator 1 10 1\n\
        node 2 load -1 10 1   # sink\n\
        edge 1 2 11 0.8\n";

    #[test]
    fn parses_t2() {
        let g = parse_grid(T2).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.line_count(), 1);
        assert_eq!(g.nodes[1].kind, NodeKind::Load);
        assert_eq!(g.lines[0].capacity(), 0.8 * 11.0);
    }

    #[test]
    fn out_of_range_edge_reports_line_number() {
        let mut text = String::new();
        for i in 1..=127 {
            let _ = writeln!(text, "node {i} load -1 1 1");
        }
        text.push_str("node 1 generator 1 1 1\n");
        assert!(matches!(parse_grid(&text), Err(Error::Parse { line: 128, .. })));

        let mut text = String::new();
        let _ = writeln!(text, "node 1 generator 126 1 1");
        for i in 2..=127 {
            let _ = writeln!(text, "node {i} load -1 1 1");
        }
        text.push_str("edge 1 999 11 0.8\n");
        match parse_grid(&text) {
            Err(Error::IndexOutOfRange {
                line: 128,
                node: 999,
                n: 127,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_failures_are_reported() {
        let text = "node 1 generator 1 10 1\nnode 2 load 1 10 1\nedge 1 2 11 0.8\n";
        match parse_grid(text) {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(
            parse_grid("node 1 generator x 1 1"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_grid("node 1 turbine 1 1 1"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(parse_grid("\nbus 1"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            parse_grid("node 0 load -1 1 1"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(parse_grid("version 2.0\n"), Err(Error::UnsupportedVersion(_))));
        assert!(matches!(
            parse_layer("version 3.1\n"),
            Err(Error::UnsupportedVersion(_))
        ));
    }

    #[test]
    fn grid_round_trip() {
        let g = parse_grid(T2).unwrap();
        assert_eq!(parse_grid(&format_grid(&g)).unwrap(), g);
    }

    #[test]
    fn layer_round_trip() {
        let adj = gen_er(127, 0.04, 1).unwrap();
        let pins = (0..127).map(|i| i % 3 == 0).collect();
        let layer = ControlLayer::new(adj, pins, 0.0);
        let back = parse_layer(&format_layer(&layer)).unwrap();
        assert_eq!(back, layer);
    }

    #[test]
    fn layer_errors() {
        assert!(matches!(parse_layer("xi 1 2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_layer("xi 1 1\nxi 2 1\nedge 1 3\n"),
            Err(Error::IndexOutOfRange { line: 3, node: 3, n: 2 })
        ));
        assert!(matches!(
            parse_layer("xi 1 1\nxi 2 1\nedge 1 1\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_layer("xi 1 1\nxi 2 1\nedge 1 2\nedge 2 1\n"),
            Err(Error::Parse { line: 4, .. })
        ));
        assert!(matches!(
            parse_layer("xi 1 1\nxi 1 0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn timeseries_header_is_fixed() {
        let m = RunManifest::new(&"cfg").unwrap();
        let s = format_timeseries(&m, &[]);
        let lines: Vec<&str> = s.lines().collect();
        assert!(lines[0].starts_with("# swinggrid timeseries 1.0"));
        assert!(lines[1].starts_with("# manifest {"));
        assert_eq!(
            lines[2],
            "t,r,phi,delta_omega,mean_omega,power_loss,n_failed,n_active_links"
        );
    }

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, 1.0 / 3.0, 93.0 / 34.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn manifest_hash_tracks_config() {
        let a = RunManifest::new(&[1, 2, 3]).unwrap();
        let b = RunManifest::new(&[1, 2, 3]).unwrap();
        let c = RunManifest::new(&[1, 2, 4]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.config_hash, c.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }

    #[test]
    fn event_log_version_is_checked() {
        let m = RunManifest::new(&0).unwrap();
        let g = parse_grid(T2).unwrap();
        let text = format_events(&m, &g, &[]);
        check_events_version(&text).unwrap();
        let bad = text.replace("\"format_version\": \"1.0\"", "\"format_version\": \"9.0\"");
        assert!(matches!(check_events_version(&bad), Err(Error::UnsupportedVersion(_))));
    }
}
