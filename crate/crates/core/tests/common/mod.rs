#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swinggrid::dynamics::EventKind;
use swinggrid::scenario::ScenarioRun;
use swinggrid::{GridLine, GridNode, ParameterPreset, PowerBalance, PowerGrid};

pub fn t2(coupling: f64, alpha: f64) -> PowerGrid {
    PowerGrid::new(
        vec![
            GridNode::generator(0, 1.0, 10.0, 1.0),
            GridNode::load(1, -1.0, 10.0, 1.0),
        ],
        vec![GridLine::new(0, 1, coupling, alpha)],
    )
}

pub fn t3() -> PowerGrid {
    PowerGrid::new(
        vec![
            GridNode::generator(0, 2.0, 10.0, 1.0),
            GridNode::load(1, -1.0, 10.0, 1.0),
            GridNode::load(2, -1.0, 10.0, 1.0),
        ],
        vec![GridLine::new(0, 1, 11.0, 0.8), GridLine::new(0, 2, 11.0, 0.8)],
    )
}

/// Connected random grid: a random spanning tree plus `extra` chords, with
/// `n_gen` generators drawn uniformly. `extra` is capped by the number of
/// free pairs.
pub fn random_grid(n: usize, extra: usize, n_gen: usize, seed: u64, preset: ParameterPreset) -> PowerGrid {
    let extra = extra.min(n * (n - 1) / 2 - (n - 1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.push((j, i));
    }
    while edges.len() < n - 1 + extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let e = (a.min(b), a.max(b));
        if a != b && !edges.contains(&e) {
            edges.push(e);
        }
    }
    let mut gens = Vec::new();
    while gens.len() < n_gen {
        let g = rng.gen_range(0..n);
        if !gens.contains(&g) {
            gens.push(g);
        }
    }
    preset.build(n, &edges, &gens, PowerBalance::Exact)
}

/// Synthetic stand-in with the Italian grid's counts: N = 127, E = 171,
/// 34 generators.
pub fn grid127(seed: u64, preset: ParameterPreset) -> PowerGrid {
    random_grid(127, 171 - 126, 34, seed, preset)
}

pub fn data_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

/// Brute-force replay of a run recorded with `record_states` and
/// `record_stride = 1`. Line status is rebuilt from the event log alone and
/// every flow is recomputed from the recorded phases. Returns the list of
/// discrepancies: trips without an overload at the trip sample, and
/// overloads on active lines that did not trip.
pub fn overload_oracle(grid: &PowerGrid, run: &ScenarioRun) -> Vec<String> {
    let mut problems = Vec::new();
    let mut active = vec![true; grid.line_count()];
    let mut removed = vec![false; grid.node_count()];
    let mut fault_removed = vec![false; grid.line_count()];
    let mut events = run.events.iter().peekable();
    let mut trips_seen = 0;

    for sample in &run.states {
        let due: Vec<_> = std::iter::from_fn(|| events.next_if(|e| e.t == sample.t)).collect();
        let tripping: Vec<usize> = due
            .iter()
            .filter(|e| e.kind == EventKind::OverloadTrip)
            .map(|e| e.subject)
            .collect();

        for (k, line) in grid.lines.iter().enumerate() {
            let (i, j) = if line.a < line.b {
                (line.a, line.b)
            } else {
                (line.b, line.a)
            };
            if !active[k] || removed[i] || removed[j] {
                continue;
            }
            let flow = line.coupling * (sample.theta[j] - sample.theta[i]).sin();
            let over = flow.abs() > line.capacity_fraction * line.coupling;
            let trips = tripping.contains(&k);
            if over && !trips {
                problems.push(format!(
                    "t = {}: line {k} overloaded (|F| = {}) without a trip",
                    sample.t,
                    flow.abs()
                ));
            }
            if trips && !over {
                problems.push(format!("t = {}: line {k} tripped with |F| = {}", sample.t, flow.abs()));
            }
        }
        for &k in &tripping {
            if !active[k] {
                problems.push(format!("t = {}: inactive line {k} tripped", sample.t));
            }
            active[k] = false;
            trips_seen += 1;
        }
        for e in &due {
            match e.kind {
                EventKind::OverloadTrip => {}
                EventKind::NodeRemoved => {
                    removed[e.subject] = true;
                    for (k, line) in grid.lines.iter().enumerate() {
                        if (line.a == e.subject || line.b == e.subject) && active[k] {
                            active[k] = false;
                            fault_removed[k] = true;
                        }
                    }
                }
                EventKind::NodeReconnected => {
                    removed[e.subject] = false;
                    for (k, line) in grid.lines.iter().enumerate() {
                        if (line.a == e.subject || line.b == e.subject) && fault_removed[k] {
                            active[k] = true;
                            fault_removed[k] = false;
                        }
                    }
                }
            }
        }
    }
    if let Some(e) = events.next() {
        problems.push(format!("event at t = {} has no recorded sample", e.t));
    }
    let logged = run.events.iter().filter(|e| e.kind == EventKind::OverloadTrip).count();
    if trips_seen != logged || logged != run.final_state.trip_count() {
        problems.push(format!("trip counts disagree: replay {trips_seen}, log {logged}"));
    }
    problems
}
