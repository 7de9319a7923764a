use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyModel, Equilibrium};
use crate::error::{shape_check, Error, Result};

/// Separation below which a spring's direction is treated as undefined.
pub const COINCIDENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spring {
    pub i: usize,
    pub j: usize,
}

/// Network of point nodes joined by springs, with
/// `E = sum 1/2 k_ij (|r_i - r_j| - l_ij)^2`.
///
/// Inputs clamp the positions of designated nodes. The cost is
/// `1/2 sum_out |r_k - y_k|^2`. Weights are the spring constants (in spring
/// order) followed by the rest lengths, all bounded below by zero.
/// States and inputs are flattened node-major: `[x0, y0, x1, y1, ...]`.
#[derive(Debug, Clone)]
pub struct ElasticNetwork {
    nodes: usize,
    dim: usize,
    springs: Vec<Spring>,
    clamped: Vec<usize>,
    outputs: Vec<usize>,
    tolerance: f64,
    max_iterations: usize,
}

struct Assembly {
    energy: f64,
    gradient: Vec<f64>,
    hessian: Option<DMatrix<f64>>,
    coincident: bool,
}

impl ElasticNetwork {
    pub fn new(nodes: usize, dim: usize, springs: Vec<Spring>, clamped: Vec<usize>, outputs: Vec<usize>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!("spatial dimension must be 1, 2 or 3, got {dim}")));
        }
        if nodes == 0 {
            return Err(Error::InvalidArgument("network needs at least one node".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &springs {
            let key = (s.i.min(s.j), s.i.max(s.j));
            if s.i == s.j || s.i >= nodes || s.j >= nodes || !seen.insert(key) {
                return Err(Error::InvalidArgument(format!(
                    "spring ({}, {}) is a self-loop, out of range or repeated",
                    s.i, s.j
                )));
            }
        }
        for (what, set) in [("clamped", &clamped), ("output", &outputs)] {
            let mut uniq = std::collections::BTreeSet::new();
            if let Some(i) = set.iter().find(|&&i| i >= nodes || !uniq.insert(i)) {
                return Err(Error::InvalidArgument(format!("{what} node {i} out of range or repeated")));
            }
        }
        if let Some(i) = clamped.iter().find(|i| outputs.contains(i)) {
            return Err(Error::InvalidArgument(format!("node {i} is both clamped and an output")));
        }
        if clamped.is_empty() {
            return Err(Error::Model("elastic network needs at least one clamped node".into()));
        }
        // Every node must be reachable from a clamped node.
        let mut reached = vec![false; nodes];
        let mut stack = clamped.clone();
        for &c in &clamped {
            reached[c] = true;
        }
        while let Some(a) = stack.pop() {
            for s in &springs {
                let b = if s.i == a { s.j } else if s.j == a { s.i } else { continue };
                if !reached[b] {
                    reached[b] = true;
                    stack.push(b);
                }
            }
        }
        if let Some(i) = reached.iter().position(|r| !r) {
            return Err(Error::Model(format!("node {i} is not connected to any clamped node")));
        }
        Ok(ElasticNetwork { nodes, dim, springs, clamped, outputs, tolerance: 1e-8, max_iterations: 10_000 })
    }

    /// Every pair of nodes joined by a spring.
    pub fn complete(nodes: usize, dim: usize, clamped: Vec<usize>, outputs: Vec<usize>) -> Result<Self> {
        let springs = (0..nodes)
            .flat_map(|i| (i + 1..nodes).map(move |j| Spring { i, j }))
            .collect();
        Self::new(nodes, dim, springs, clamped, outputs)
    }

    pub fn with_tolerance(mut self, tolerance: f64, max_iterations: usize) -> Self {
        self.tolerance = tolerance;
        self.max_iterations = max_iterations;
        self
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn springs(&self) -> &[Spring] {
        &self.springs
    }

    pub fn clamped(&self) -> &[usize] {
        &self.clamped
    }

    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    fn split<'a>(&self, w: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        shape_check("weights", self.weight_count(), w.len())?;
        Ok(w.split_at(self.springs.len()))
    }

    fn delta(&self, s: &[f64], sp: &Spring) -> ([f64; 3], f64) {
        let d = self.dim;
        let mut v = [0.0; 3];
        for a in 0..d {
            v[a] = s[sp.i * d + a] - s[sp.j * d + a];
        }
        let len = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        (v, len)
    }

    fn check_positions(&self, x: &[f64], s: &[f64]) -> Result<()> {
        shape_check("positions", self.nodes * self.dim, s.len())?;
        shape_check("input", self.clamped.len() * self.dim, x.len())?;
        if s.iter().chain(x).any(|v| !v.is_finite()) {
            return Err(Error::Domain("positions must be finite".into()));
        }
        for (c, &node) in self.clamped.iter().enumerate() {
            for a in 0..self.dim {
                if s[node * self.dim + a] != x[c * self.dim + a] {
                    return Err(Error::Domain(format!("clamped node {node} moved from its input position")));
                }
            }
        }
        Ok(())
    }

    /// Free coordinate indices into the flattened state.
    fn free_coords(&self) -> Vec<usize> {
        (0..self.nodes)
            .filter(|n| !self.clamped.contains(n))
            .flat_map(|n| (0..self.dim).map(move |a| n * self.dim + a))
            .collect()
    }

    /// True when some spring has coincident endpoints.
    pub fn has_coincident_springs(&self, s: &[f64]) -> bool {
        self.springs.iter().any(|sp| self.delta(s, sp).1 < COINCIDENT)
    }

    fn assemble(&self, k: &[f64], l: &[f64], s: &[f64], y: &[f64], beta: f64, want_hessian: bool) -> Assembly {
        let d = self.dim;
        let n = s.len();
        let mut energy = 0.0;
        let mut gradient = vec![0.0; n];
        let mut hessian = want_hessian.then(|| DMatrix::<f64>::zeros(n, n));
        let mut coincident = false;
        for ((sp, &kk), &ll) in self.springs.iter().zip(k).zip(l) {
            let (v, len) = self.delta(s, sp);
            energy += 0.5 * kk * (len - ll).powi(2);
            if len < COINCIDENT {
                coincident = true;
                if let Some(h) = hessian.as_mut() {
                    for a in 0..d {
                        let (p, q) = (sp.i * d + a, sp.j * d + a);
                        h[(p, p)] += kk;
                        h[(q, q)] += kk;
                        h[(p, q)] -= kk;
                        h[(q, p)] -= kk;
                    }
                }
                continue;
            }
            let u: Vec<f64> = v[..d].iter().map(|c| c / len).collect();
            let f = kk * (len - ll);
            for a in 0..d {
                gradient[sp.i * d + a] += f * u[a];
                gradient[sp.j * d + a] -= f * u[a];
            }
            if let Some(h) = hessian.as_mut() {
                let ratio = ll / len;
                for a in 0..d {
                    for b in 0..d {
                        let eye = if a == b { 1.0 } else { 0.0 };
                        let block = kk * (ratio * u[a] * u[b] + (1.0 - ratio) * eye);
                        let (pi, pj) = (sp.i * d + a, sp.j * d + a);
                        let (qi, qj) = (sp.i * d + b, sp.j * d + b);
                        h[(pi, qi)] += block;
                        h[(pj, qj)] += block;
                        h[(pi, qj)] -= block;
                        h[(pj, qi)] -= block;
                    }
                }
            }
        }
        if beta != 0.0 {
            for (o, &node) in self.outputs.iter().enumerate() {
                for a in 0..d {
                    let idx = node * d + a;
                    let diff = s[idx] - y[o * d + a];
                    energy += 0.5 * beta * diff * diff;
                    gradient[idx] += beta * diff;
                    if let Some(h) = hessian.as_mut() {
                        h[(idx, idx)] += beta;
                    }
                }
            }
        }
        Assembly { energy, gradient, hessian, coincident }
    }

    fn initial_state(&self, x: &[f64], warm_start: Option<&[f64]>) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut s = match warm_start {
            Some(w) => {
                shape_check("warm start", self.nodes * d, w.len())?;
                w.to_vec()
            }
            None => {
                // Deterministic spread-out start: free nodes on a small
                // helix around the centroid of the clamped nodes.
                let mut centroid = [0.0; 3];
                for (c, _) in self.clamped.iter().enumerate() {
                    for a in 0..d {
                        centroid[a] += x[c * d + a] / self.clamped.len() as f64;
                    }
                }
                let mut s = vec![0.0; self.nodes * d];
                for node in 0..self.nodes {
                    let t = node as f64 + 1.0;
                    let offs = [(0.7 * t).cos(), (0.7 * t).sin(), 0.1 * t];
                    for a in 0..d {
                        s[node * d + a] = centroid[a] + offs[a];
                    }
                }
                s
            }
        };
        for (c, &node) in self.clamped.iter().enumerate() {
            s[node * d..node * d + d].copy_from_slice(&x[c * d..c * d + d]);
        }
        Ok(s)
    }

    /// Damped Newton iteration on the free coordinates with an Armijo
    /// backtracking line search. Indefinite Hessians are shifted until a
    /// Cholesky factorisation succeeds, so every step is a descent step.
    fn minimise(&self, k: &[f64], l: &[f64], mut s: Vec<f64>, y: &[f64], beta: f64) -> Result<Equilibrium> {
        let free = self.free_coords();
        let resid = |g: &[f64]| free.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
        let mut asm = self.assemble(k, l, &s, y, beta, true);
        let mut iterations = 0;
        let mut polish = 0;
        loop {
            let r = resid(&asm.gradient);
            if r <= self.tolerance {
                // A few extra steps buy accuracy well below the tolerance.
                if polish >= 3 || r == 0.0 {
                    break;
                }
                polish += 1;
            }
            if iterations >= self.max_iterations {
                return Err(Error::Convergence { residual: r, iterations });
            }
            iterations += 1;

            let nf = free.len();
            let g = DVector::from_iterator(nf, free.iter().map(|&i| asm.gradient[i]));
            let h_full = asm.hessian.as_ref().expect("hessian requested");
            let h = DMatrix::from_fn(nf, nf, |a, b| h_full[(free[a], free[b])]);
            let scale = h.diagonal().iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
            let mut shift = 0.0;
            let dir = loop {
                let shifted = &h + DMatrix::identity(nf, nf) * shift;
                if let Some(ch) = shifted.cholesky() {
                    break -ch.solve(&g);
                }
                shift = if shift == 0.0 { 1e-8 * scale } else { shift * 10.0 };
                if shift > 1e12 * scale {
                    break -g.clone();
                }
            };
            let slope = g.dot(&dir);
            // Below this predicted decrease the energy cannot distinguish
            // trial points, so only the residual test below is meaningful.
            let resolvable = -slope > 16.0 * f64::EPSILON * asm.energy.abs().max(f64::MIN_POSITIVE);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..if resolvable { 60 } else { 0 } {
                let mut trial = s.clone();
                for (a, &i) in free.iter().enumerate() {
                    trial[i] += step * dir[a];
                }
                let t = self.assemble(k, l, &trial, y, beta, false);
                if t.energy <= asm.energy + 1e-4 * step * slope {
                    accepted = Some(trial);
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some(trial) => {
                    s = trial;
                    asm = self.assemble(k, l, &s, y, beta, true);
                }
                None => {
                    // No resolvable decrease: take the full step if it
                    // reduces the residual, else accept if stationary.
                    let trial: Vec<f64> = s
                        .iter()
                        .enumerate()
                        .map(|(i, v)| match free.iter().position(|&f| f == i) {
                            Some(a) => v + dir[a],
                            None => *v,
                        })
                        .collect();
                    let t = self.assemble(k, l, &trial, y, beta, true);
                    if resid(&t.gradient) < r {
                        s = trial;
                        asm = t;
                    } else if r <= self.tolerance {
                        break;
                    } else {
                        return Err(Error::Convergence { residual: r, iterations });
                    }
                }
            }
        }
        Ok(Equilibrium {
            residual: resid(&asm.gradient),
            state: s,
            iterations,
            degenerate: false,
            flagged: asm.coincident,
        })
    }
}

impl EnergyModel for ElasticNetwork {
    fn weight_count(&self) -> usize {
        2 * self.springs.len()
    }
    fn state_dim(&self) -> usize {
        self.nodes * self.dim
    }
    fn input_dim(&self) -> usize {
        self.clamped.len() * self.dim
    }
    fn target_dim(&self) -> usize {
        self.outputs.len() * self.dim
    }

    fn weight_names(&self) -> Vec<String> {
        let k = self.springs.iter().map(|s| format!("k[{},{}]", s.i, s.j));
        let l = self.springs.iter().map(|s| format!("l[{},{}]", s.i, s.j));
        k.chain(l).collect()
    }

    fn weight_bounds(&self) -> Option<Vec<(f64, f64)>> {
        Some(vec![(0.0, f64::INFINITY); self.weight_count()])
    }

    fn energy(&self, w: &[f64], x: &[f64], s: &[f64]) -> Result<f64> {
        let (k, l) = self.split(w)?;
        self.check_positions(x, s)?;
        Ok(self.assemble(k, l, s, &[], 0.0, false).energy)
    }

    fn energy_weight_gradient(&self, w: &[f64], x: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        let (k, l) = self.split(w)?;
        self.check_positions(x, s)?;
        let stretch: Vec<f64> = self.springs.iter().zip(l).map(|(sp, ll)| self.delta(s, sp).1 - ll).collect();
        let dk = stretch.iter().map(|e| 0.5 * e * e);
        let dl = stretch.iter().zip(k).map(|(e, kk)| -kk * e);
        Ok(dk.chain(dl).collect())
    }

    fn cost(&self, s: &[f64], y: &[f64]) -> Result<f64> {
        shape_check("positions", self.nodes * self.dim, s.len())?;
        shape_check("target", self.outputs.len() * self.dim, y.len())?;
        let d = self.dim;
        Ok(self
            .outputs
            .iter()
            .enumerate()
            .map(|(o, &node)| (0..d).map(|a| (s[node * d + a] - y[o * d + a]).powi(2)).sum::<f64>())
            .sum::<f64>()
            * 0.5)
    }

    fn cost_state_gradient(&self, s: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        shape_check("positions", self.nodes * self.dim, s.len())?;
        shape_check("target", self.outputs.len() * self.dim, y.len())?;
        let d = self.dim;
        let mut g = vec![0.0; s.len()];
        for (o, &node) in self.outputs.iter().enumerate() {
            for a in 0..d {
                g[node * d + a] = s[node * d + a] - y[o * d + a];
            }
        }
        Ok(g)
    }

    fn equilibrate(&self, w: &[f64], x: &[f64], y: &[f64], beta: f64, warm_start: Option<&[f64]>) -> Result<Equilibrium> {
        let (k, l) = self.split(w)?;
        shape_check("input", self.clamped.len() * self.dim, x.len())?;
        shape_check("target", self.outputs.len() * self.dim, y.len())?;
        if w.iter().chain(x).chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Domain("weights, inputs and targets must be finite".into()));
        }
        let s = self.initial_state(x, warm_start)?;
        self.minimise(k, l, s, y, beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use rand::Rng;

    fn chain_1d() -> ElasticNetwork {
        ElasticNetwork::new(3, 1, vec![Spring { i: 0, j: 1 }, Spring { i: 1, j: 2 }], vec![0, 2], vec![1]).unwrap()
    }

    fn random_instance(seed: u64) -> (ElasticNetwork, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = StreamKey::new(seed).rng();
        let net = ElasticNetwork::complete(5, 2, vec![0, 1], vec![4]).unwrap();
        let ns = net.springs().len();
        let w: Vec<f64> = (0..2 * ns).map(|_| rng.random_range(0.5..1.5)).collect();
        let x = vec![0.0, 0.0, 1.0, 0.0];
        let y = vec![rng.random_range(0.0..1.0), rng.random_range(0.5..1.5)];
        (net, w, x, y)
    }

    #[test]
    fn converges_when_energy_cannot_resolve_the_step() {
        // Stretched chains: E is in the thousands while the last Newton step
        // lowers it by about 1e-14, below its rounding resolution. Whether a
        // trial point rounds above or below depends on the exact numbers, so
        // sweep a range of offsets.
        let net = chain_1d().with_tolerance(1e-8, 50);
        let w = [1.0, 1.3, 1.0, 0.7];
        for a in 0..20 {
            let x = [0.0, 80.0 + a as f64 * 1.7];
            let mid = (1.0 * (1.0 + 0.0) + 1.3 * (x[1] - 0.7)) / 2.3;
            for b in 1..20 {
                let warm = [0.0, mid + b as f64 * 1e-8, x[1]];
                let eq = net.equilibrate(&w, &x, &[0.0], 0.0, Some(&warm)).unwrap();
                assert!(eq.residual <= 1e-8);
                assert!((eq.state[1] - mid).abs() < 1e-9, "{} vs {mid}", eq.state[1]);
            }
        }
    }

    #[test]
    fn closed_forms() {
        let net = ElasticNetwork::new(2, 1, vec![Spring { i: 0, j: 1 }], vec![0], vec![1]).unwrap();
        assert_eq!(net.energy(&[2.0, 1.0], &[0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(net.energy(&[2.0, 1.0], &[0.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(net.energy_weight_gradient(&[2.0, 1.0], &[0.0], &[0.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(net.energy_weight_gradient(&[2.0, 1.0], &[0.0], &[0.0, 2.0]).unwrap(), vec![0.5, -2.0]);
        // Coincident endpoints: energy 1/2 k l^2, flagged.
        assert_eq!(net.energy(&[2.0, 1.0], &[0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(net.has_coincident_springs(&[0.0, 0.0]));
    }

    #[test]
    fn energy_matches_resummation_and_fd() {
        for seed in 0..20 {
            let (net, w, x, _) = random_instance(seed);
            let mut rng = StreamKey::new(1000 + seed).rng();
            let mut s: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..2.0)).collect();
            s[..4].copy_from_slice(&x);
            let ns = net.springs().len();
            let mut direct = 0.0;
            for (idx, sp) in net.springs().iter().enumerate() {
                let dx = s[2 * sp.i] - s[2 * sp.j];
                let dy = s[2 * sp.i + 1] - s[2 * sp.j + 1];
                direct += 0.5 * w[idx] * ((dx * dx + dy * dy).sqrt() - w[ns + idx]).powi(2);
            }
            let e = net.energy(&w, &x, &s).unwrap();
            assert!((e - direct).abs() < 1e-13);
            assert!(e >= 0.0);
            let g = net.energy_weight_gradient(&w, &x, &s).unwrap();
            for i in 0..w.len() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += 1e-6;
                wm[i] -= 1e-6;
                let fd = (net.energy(&wp, &x, &s).unwrap() - net.energy(&wm, &x, &s).unwrap()) / 2e-6;
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "weight {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn symmetric_chain_relaxes_to_midpoint() {
        let net = chain_1d();
        let eq = net.equilibrate(&[1.0, 1.0, 0.3, 0.3], &[0.0, 2.0], &[0.0], 0.0, None).unwrap();
        assert!((eq.state[1] - 1.0).abs() < 1e-10);
        assert_eq!(eq.state[0], 0.0);
        assert_eq!(eq.state[2], 2.0);
    }

    #[test]
    fn rest_chain_relaxes_from_any_start() {
        let net = chain_1d();
        for start in [-5.0, 0.5, 7.0] {
            let eq = net
                .equilibrate(&[1.0, 3.0, 1.0, 1.0], &[0.0, 2.0], &[0.0], 0.0, Some(&[0.0, start, 2.0]))
                .unwrap();
            assert!(eq.residual <= 1e-8);
        }
    }

    #[test]
    fn nudge_pulls_output_towards_target() {
        let (net, w, x, y) = random_instance(4);
        let free = net.equilibrate(&w, &x, &y, 0.0, None).unwrap();
        let nudged = net.equilibrate(&w, &x, &y, 0.5, Some(&free.state)).unwrap();
        let dist = |s: &[f64]| ((s[8] - y[0]).powi(2) + (s[9] - y[1]).powi(2)).sqrt();
        assert!(dist(&nudged.state) < dist(&free.state));
        assert_eq!(&nudged.state[..4], &x[..]);
        assert!(nudged.residual <= 1e-8);
    }

    #[test]
    fn connectivity_is_required() {
        let err = ElasticNetwork::new(3, 2, vec![Spring { i: 0, j: 1 }], vec![0], vec![1]).unwrap_err();
        assert!(matches!(err, Error::Model(_)));
        assert!(ElasticNetwork::new(2, 4, vec![], vec![0], vec![1]).is_err());
    }

    #[test]
    fn three_dimensional_network_converges() {
        let net = ElasticNetwork::complete(4, 3, vec![0, 1, 2], vec![3]).unwrap();
        let w = vec![1.0; 12];
        let x = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let eq = net.equilibrate(&w, &x, &[0.0, 0.0, 1.0], 0.0, None).unwrap();
        assert!(eq.residual <= 1e-8);
    }
}
