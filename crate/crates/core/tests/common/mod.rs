//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use drlte::nn::{grouped_softmax, HiddenActivation, Mlp, MlpShape, OutputMode};
use drlte::topology::{
    generate_random_topology, make_sessions_with_paths, DemandWindow, Link, NetworkGraph, NodeId, Path, SessionSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const SLOPE: f64 = 0.01;
pub const H: f64 = 1e-6;

/// Reference forward pass; also reports the smallest |pre-activation| of any
/// hidden unit so cases near the rectifier kink can be skipped.
pub fn reference_forward(net: &Mlp, x: &[f64]) -> (Vec<f64>, f64) {
    let mut a = x.to_vec();
    let mut closest = f64::INFINITY;
    let last = net.params.layers.len() - 1;
    for (l, layer) in net.params.layers.iter().enumerate() {
        let z: Vec<f64> = (0..layer.outputs)
            .map(|o| layer.bias[o] + (0..layer.inputs).map(|i| layer.weights[o * layer.inputs + i] * a[i]).sum::<f64>())
            .collect();
        if l < last {
            closest = z.iter().fold(closest, |m, v| m.min(v.abs()));
            a = z.iter().map(|&v| if v > 0.0 { v } else { SLOPE * v }).collect();
        } else {
            a = match &net.output {
                OutputMode::Identity => z,
                OutputMode::GroupedSoftmax(g) => grouped_softmax(&z, g),
            };
        }
    }
    (a, closest)
}

pub fn loss(net: &Mlp, x: &[f64], c: &[f64]) -> f64 {
    reference_forward(net, x).0.iter().zip(c).map(|(a, b)| a * b).sum()
}

pub fn random_case(rng: &mut ChaCha8Rng) -> (Mlp, Vec<f64>, Vec<f64>) {
    loop {
        let input = rng.random_range(1..6);
        let hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(1..8)).collect();
        let groups: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(1..4)).collect();
        let (output, mode) = if rng.random_bool(0.5) {
            (groups.iter().sum(), OutputMode::GroupedSoftmax(groups))
        } else {
            (rng.random_range(1..4), OutputMode::Identity)
        };
        let shape = MlpShape { input, hidden, output };
        let mut net = Mlp::init_with(&shape, mode, HiddenActivation::LeakyRelu { slope: SLOPE }, rng.random()).unwrap();
        for b in net.params.layers.iter_mut().flat_map(|l| l.bias.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c: Vec<f64> = (0..output).map(|_| rng.random_range(-1.0..1.0)).collect();
        // A parameter nudge of H moves a pre-activation by at most ~H·|input|.
        if reference_forward(&net, &x).1 <= 1e-3 {
            continue;
        }
        // Central differences carry ~1e-10 of rounding noise at this H, so
        // relative accuracy needs gradients well above it.
        let resolvable = numeric_input_grad(&net, &x, &c).iter().map(|g| g * g).sum::<f64>().sqrt() >= 1e-3;
        if resolvable {
            return (net, x, c);
        }
    }
}

pub fn numeric_input_grad(net: &Mlp, x: &[f64], c: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[i] += H;
            xm[i] -= H;
            (loss(net, &xp, c) - loss(net, &xm, c)) / (2.0 * H)
        })
        .collect()
}

pub fn numeric_param_grad(net: &Mlp, x: &[f64], c: &[f64]) -> Vec<f64> {
    (0..net.params.len())
        .map(|k| {
            let (mut plus, mut minus) = (net.clone(), net.clone());
            *plus.params.iter_mut().nth(k).unwrap() += H;
            *minus.params.iter_mut().nth(k).unwrap() -= H;
            (loss(&plus, x, c) - loss(&minus, x, c)) / (2.0 * H)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().zip(numeric).map(|(a, n)| a.abs().max(n.abs()).powi(2)).sum::<f64>().sqrt();
    if scale < 1e-9 {
        diff
    } else {
        diff / scale
    }
}

/// Chi-square goodness-of-fit p-value of `counts` against `probs`.
pub fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

/// `Σ log x_k` (Mbps) of a flow vector, or `None` when infeasible.
pub struct Instance {
    /// Per variable: session index and link list.
    pub vars: Vec<(usize, Vec<usize>)>,
    pub demand: Vec<f64>,
    pub capacity: Vec<f64>,
}

impl Instance {
    pub fn new(g: &NetworkGraph, sessions: &[SessionSpec]) -> Self {
        let vars = sessions
            .iter()
            .enumerate()
            .flat_map(|(k, s)| s.paths.iter().map(move |p| (k, p.links().iter().map(|l| l.0).collect())))
            .collect();
        Self {
            vars,
            demand: sessions.iter().map(|s| s.demand_mean / 1e6).collect(),
            capacity: g.links().iter().map(|l| l.capacity / 1e6).collect(),
        }
    }

    pub fn objective(&self, f: &[f64]) -> Option<f64> {
        let mut x = vec![0.0; self.demand.len()];
        let mut load = vec![0.0; self.capacity.len()];
        for ((k, links), &v) in self.vars.iter().zip(f) {
            if v < 0.0 {
                return None;
            }
            x[*k] += v;
            for &l in links {
                load[l] += v;
            }
        }
        if x.iter().zip(&self.demand).any(|(a, b)| a > b) || load.iter().zip(&self.capacity).any(|(a, c)| a > c) {
            return None;
        }
        x.iter().try_fold(0.0, |acc, &v| (v > 0.0).then(|| acc + v.ln()))
    }

    pub fn upper(&self, i: usize) -> f64 {
        let (k, links) = &self.vars[i];
        links.iter().map(|&l| self.capacity[l]).fold(self.demand[*k], f64::min)
    }

    /// Multi-resolution grid search: a 7-point grid per variable around each
    /// of the best few points found so far, shrinking the spacing per level.
    pub fn grid_optimum(&self) -> f64 {
        const BEAM: usize = 16;
        let n = self.vars.len();
        let upper: Vec<f64> = (0..n).map(|i| self.upper(i)).collect();
        // One spacing for every variable keeps moves along shared-capacity
        // faces (f_i + f_j = C) on the lattice.
        let mut step = vec![upper.iter().copied().fold(0.0, f64::max) / 6.0; n];
        let mut beam: Vec<(f64, Vec<f64>)> = vec![(f64::NEG_INFINITY, upper.iter().map(|u| u / 2.0).collect())];
        for _ in 0..60 {
            let mut scored: Vec<(f64, Vec<f64>)> = beam.clone();
            for (_, center) in &beam {
                let mut idx = vec![0usize; n];
                'grid: loop {
                    let f: Vec<f64> =
                        (0..n).map(|i| (center[i] + step[i] * (idx[i] as f64 - 3.0)).clamp(0.0, upper[i])).collect();
                    if let Some(v) = self.objective(&f) {
                        scored.push((v, f));
                    }
                    for d in 0..n {
                        idx[d] += 1;
                        if idx[d] <= 6 {
                            continue 'grid;
                        }
                        idx[d] = 0;
                    }
                    break;
                }
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            scored.dedup_by(|a, b| a.1 == b.1);
            scored.truncate(BEAM);
            beam = scored;
            step.iter_mut().for_each(|h| *h *= 0.6);
        }
        beam[0].0
    }
}

pub fn random_small_instance(seed: u64) -> Option<(NetworkGraph, Vec<SessionSpec>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = generate_random_topology(4, rng.random_range(4..9), seed).ok()?;
    let links = topo
        .links()
        .iter()
        .map(|l| Link { capacity: rng.random_range(1.0..5.0) * 1e6, ..l.clone() })
        .collect();
    let g = NetworkGraph::new(topo.nodes().to_vec(), links).ok()?;
    let sessions = make_sessions_with_paths(&g, 2, DemandWindow::from_mbps(0.5, 6.0), 2, seed).ok()?;
    Some((g, sessions))
}

pub fn shared_link() -> (NetworkGraph, Vec<SessionSpec>) {
    // Two sources feed one 100 Mbps bottleneck.
    let mk = |s: usize, d: usize, c: f64| Link { src: NodeId(s), dst: NodeId(d), capacity: c, prop_delay: 1e-3, buffer_limit: 100 };
    let g = NetworkGraph::new(
        ["a", "b", "m", "t"].map(String::from).to_vec(),
        vec![mk(0, 2, 1e9), mk(1, 2, 1e9), mk(2, 3, 100e6)],
    )
    .unwrap();
    let path = |names: &[&str]| Path::from_node_names(&g, names).unwrap();
    let s1 = SessionSpec { id: 1, src: NodeId(0), dst: NodeId(3), demand_mean: 80e6, paths: vec![path(&["a", "m", "t"])] };
    let s2 = SessionSpec { id: 2, src: NodeId(1), dst: NodeId(3), demand_mean: 95e6, paths: vec![path(&["b", "m", "t"])] };
    (g.clone(), vec![s1, s2])
}

