//! Synthetic per-node observations standing in for street-level imagery.
//!
//! `feature = beta * signal + (1 - beta) * noise`. The signal holds one block
//! per destination class; block `c` encodes the straight-line distance to the
//! nearest class-`c` destination inside the node's arc, so at `beta = 1` the
//! distance labels are a linear function of the features. The noise is
//! Gaussian and seeded per node.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::citygraph::{CityGraph, DestinationSet, Heading, NodeId};
use crate::error::{NavError, Result};
use crate::labeling::arc_contains;
use crate::rng;
use crate::scalar::Scalar;

/// Distance scale of the proximity coordinate, meters.
const PROXIMITY_SCALE_M: f64 = 250.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    #[serde(default = "default_dims")]
    pub dims: usize,
    pub beta: f64,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    pub seed: u64,
}

fn default_dims() -> usize {
    64
}

fn default_sigma() -> f64 {
    1.0
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec { dims: 64, beta: 0.9, noise_sigma: 1.0, seed: 0 }
    }
}

impl FeatureSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.dims < 8 {
            return Err(NavError::InvalidConfig(format!("feature dims must be >= 8, got {}", self.dims)));
        }
        if self.dims < classes {
            return Err(NavError::InvalidConfig(format!("{} dims cannot hold {classes} class blocks", self.dims)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(NavError::InvalidConfig(format!("beta must be in [0,1], got {}", self.beta)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(NavError::InvalidConfig(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// One feature row per graph node, rows in ascending node order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable<T> {
    dims: usize,
    nodes: Vec<NodeId>,
    row_of: Vec<u32>,
    data: Vec<T>,
}

impl<T: Scalar> FeatureTable<T> {
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn row_index(&self, graph: &CityGraph, node: NodeId) -> Option<usize> {
        let r = *self.row_of.get(graph.node_index(node))?;
        (r != u32::MAX).then_some(r as usize)
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn get(&self, graph: &CityGraph, node: NodeId) -> Option<&[T]> {
        self.row_index(graph, node).map(|i| self.row(i))
    }

    /// Little-endian binary matrix. Layout: magic `CNFEAT01`, u32 rows, u32 dims,
    /// u32 scalar width in bytes, 16 ASCII bytes of config hash, then row-major values.
    pub fn to_bytes(&self, config_hash: &str) -> Vec<u8> {
        let width = std::mem::size_of::<T>();
        let mut out = Vec::with_capacity(36 + self.data.len() * width);
        out.extend_from_slice(b"CNFEAT01");
        out.extend_from_slice(&(self.nodes.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        out.extend_from_slice(&(width as u32).to_le_bytes());
        let mut hash = [b' '; 16];
        for (dst, src) in hash.iter_mut().zip(config_hash.bytes()) {
            *dst = src;
        }
        out.extend_from_slice(&hash);
        for v in &self.data {
            if width == 4 {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        out
    }

    /// Node-index sidecar: `row,x,y,heading`.
    pub fn sidecar_csv(&self, config_hash: &str) -> String {
        let mut s = artifact::hash_comment(config_hash);
        s.push_str("row,x,y,heading\n");
        for (i, n) in self.nodes.iter().enumerate() {
            s.push_str(&format!("{i},{},{},{}\n", n.x, n.y, n.heading));
        }
        s
    }

    pub fn from_bytes(graph: &CityGraph, bytes: &[u8], sidecar: &str) -> Result<(Self, String)> {
        let bad = |d: &str| NavError::malformed("feature file", d);
        if bytes.len() < 36 || &bytes[..8] != b"CNFEAT01" {
            return Err(bad("bad magic or truncated header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (rows, dims, width) = (u32_at(8), u32_at(12), u32_at(16));
        let hash = String::from_utf8_lossy(&bytes[20..36]).trim_end().to_string();
        if width != 4 && width != 8 {
            return Err(bad("scalar width must be 4 or 8"));
        }
        if bytes.len() != 36 + rows * dims * width {
            return Err(bad("payload length does not match header"));
        }
        let data: Vec<T> = bytes[36..]
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)
                } else {
                    T::lit(f64::from_le_bytes(c.try_into().unwrap()))
                }
            })
            .collect();
        let (side_hash, body) = artifact::split_hash_comment(sidecar)?;
        if side_hash != hash {
            return Err(bad("sidecar hash differs from matrix hash"));
        }
        let mut nodes = Vec::with_capacity(rows);
        for rec in csv::Reader::from_reader(body.as_bytes()).records() {
            let rec = rec?;
            let num = |i: usize| rec[i].trim().parse::<u32>().map_err(|e| NavError::malformed("feature sidecar", e));
            if num(0)? as usize != nodes.len() {
                return Err(bad("sidecar rows out of order"));
            }
            nodes.push(NodeId::new(num(1)?, num(2)?, Heading::parse(&rec[3])?));
        }
        if nodes.len() != rows {
            return Err(bad("sidecar row count differs from matrix"));
        }
        let mut row_of = vec![u32::MAX; graph.node_index_bound()];
        for (i, &n) in nodes.iter().enumerate() {
            if !graph.contains(n) {
                return Err(NavError::UnknownNode(n));
            }
            row_of[graph.node_index(n)] = i as u32;
        }
        Ok((FeatureTable { dims, nodes, row_of, data }, hash))
    }
}

/// Signal coordinates for one node: per class `[t, proximity, 0, ...]` where
/// `t = sqrt(in-arc meters) / sqrt(diagonal meters)` (1 when the arc is empty)
/// and `proximity = exp(-meters / 250)` (0 when empty).
pub fn signal<T: Scalar>(graph: &CityGraph, dests: &DestinationSet, node: NodeId, dims: usize) -> Vec<T> {
    let classes = dests.class_count();
    let block = dims / classes;
    let label_max = graph.diagonal_m().sqrt();
    let mut out = vec![T::zero(); dims];
    for c in 0..classes {
        let nearest = dests.locations(c).iter().filter(|&&d| arc_contains(node, d)).map(|&d| node.location().dist2(d)).min();
        let meters = nearest.map(|d2| (d2 as f64).sqrt() * graph.bin_size_m());
        let base = c * block;
        out[base] = T::lit(meters.map_or(1.0, |m| m.sqrt() / label_max));
        if block >= 2 {
            out[base + 1] = T::lit(meters.map_or(0.0, |m| (-m / PROXIMITY_SCALE_M).exp()));
        }
    }
    out
}

pub fn gen_features<T: Scalar>(graph: &CityGraph, dests: &DestinationSet, spec: &FeatureSpec) -> Result<FeatureTable<T>> {
    spec.validate(dests.class_count())?;
    let dims = spec.dims;
    let nodes: Vec<NodeId> = graph.nodes().collect();
    let beta = spec.beta;
    let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| NavError::InvalidConfig(e.to_string()))?;
    let mut data = vec![T::zero(); nodes.len() * dims];
    data.par_chunks_mut(dims).zip(nodes.par_iter()).for_each(|(row, &node)| {
        let sig: Vec<T> = signal(graph, dests, node, dims);
        let mut rng = rng::seeded(spec.seed, &[0x6665_6174, graph.node_index(node) as u64]);
        for (dst, s) in row.iter_mut().zip(sig) {
            let noise = normal.sample(&mut rng);
            *dst = T::lit(beta * s.as_f64() + (1.0 - beta) * noise);
        }
    });
    let mut row_of = vec![u32::MAX; graph.node_index_bound()];
    for (i, &n) in nodes.iter().enumerate() {
        row_of[graph.node_index(n)] = i as u32;
    }
    Ok(FeatureTable { dims, nodes, row_of, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::citygraph::{build_city, place_destinations, GridSpec, Location, DEFAULT_CLASSES};
    use crate::labeling::{distance_labels, DistanceLabelTable};

    fn city() -> (CityGraph, DestinationSet) {
        let g = build_city(&GridSpec { width_bins: 72, height_bins: 72, seed: 7, ..Default::default() }).unwrap();
        let classes: Vec<String> = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
        let d = place_destinations(&g, &classes, 4, 3).unwrap();
        (g, d)
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn beta_zero_is_uncorrelated_with_labels() {
        let (g, d) = city();
        assert!(g.node_count() >= 10_000);
        let spec = FeatureSpec { dims: 16, beta: 0.0, noise_sigma: 1.0, seed: 5 };
        let f: FeatureTable<f64> = gen_features(&g, &d, &spec).unwrap();
        let labels: DistanceLabelTable<f64> = distance_labels(&g, &d);
        for c in 0..5 {
            let pairs: Vec<(usize, f64)> =
                f.nodes().iter().enumerate().filter_map(|(i, &n)| labels.get(n, c).map(|l| (i, l))).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            for k in 0..16 {
                let xs: Vec<f64> = pairs.iter().map(|p| f.row(p.0)[k]).collect();
                assert!(pearson(&xs, &ys).abs() < 0.05, "class {c} coord {k}");
            }
        }
    }

    /// Normal-equation least squares on the class block plus bias.
    #[test]
    fn beta_one_recovers_labels_exactly() {
        let (g, d) = city();
        let spec = FeatureSpec { dims: 10, beta: 1.0, noise_sigma: 1.0, seed: 5 };
        let f: FeatureTable<f64> = gen_features(&g, &d, &spec).unwrap();
        let labels: DistanceLabelTable<f64> = distance_labels(&g, &d);
        for c in 0..5 {
            let cols = [c * 2, c * 2 + 1];
            let mut ata = [[0.0f64; 3]; 3];
            let mut aty = [0.0f64; 3];
            let mut rows = Vec::new();
            for (i, &n) in f.nodes().iter().enumerate() {
                if let Some(y) = labels.get(n, c) {
                    let x = [f.row(i)[cols[0]], f.row(i)[cols[1]], 1.0];
                    for a in 0..3 {
                        aty[a] += x[a] * y;
                        for b in 0..3 {
                            ata[a][b] += x[a] * x[b];
                        }
                    }
                    rows.push((x, y));
                }
            }
            let w = solve3(ata, aty);
            let worst = rows.iter().map(|(x, y)| (x[0] * w[0] + x[1] * w[1] + w[2] - y).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-6, "class {c}: residual {worst}");
        }
    }

    fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
        for i in 0..3 {
            let p = (i..3).max_by(|&r, &s| a[r][i].abs().partial_cmp(&a[s][i].abs()).unwrap()).unwrap();
            a.swap(i, p);
            b.swap(i, p);
            for r in i + 1..3 {
                let k = a[r][i] / a[i][i];
                for col in i..3 {
                    a[r][col] -= k * a[i][col];
                }
                b[r] -= k * b[i];
            }
        }
        let mut x = [0.0; 3];
        for i in (0..3).rev() {
            x[i] = (b[i] - (i + 1..3).map(|j| a[i][j] * x[j]).sum::<f64>()) / a[i][i];
        }
        x
    }

    #[test]
    fn deterministic_and_class_local() {
        let (g, d) = city();
        let spec = FeatureSpec { dims: 20, beta: 0.7, noise_sigma: 1.0, seed: 9 };
        let a: FeatureTable<f64> = gen_features(&g, &d, &spec).unwrap();
        let b: FeatureTable<f64> = gen_features(&g, &d, &spec).unwrap();
        assert_eq!(a.to_bytes("h"), b.to_bytes("h"));

        let mut locs = d.all().to_vec();
        locs[1] = vec![Location::new(30, 30)];
        locs[1].retain(|l| g.is_populated(*l));
        if locs[1].is_empty() {
            locs[1] = vec![g.populated_locations()[0]];
        }
        let d2 = DestinationSet::new(&g, d.classes().to_vec(), locs).unwrap();
        let c: FeatureTable<f64> = gen_features(&g, &d2, &spec).unwrap();
        for i in 0..a.len() {
            assert_eq!(&a.row(i)[0..4], &c.row(i)[0..4]);
            assert_eq!(&a.row(i)[8..20], &c.row(i)[8..20]);
        }
    }

    #[test]
    fn rejects_small_dims() {
        let (g, d) = city();
        let spec = FeatureSpec { dims: 7, ..Default::default() };
        assert!(gen_features::<f64>(&g, &d, &spec).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let g = build_city(&GridSpec { width_bins: 8, height_bins: 8, seed: 1, ..Default::default() }).unwrap();
        let d = place_destinations(&g, &["a".into(), "b".into()], 2, 1).unwrap();
        let spec = FeatureSpec { dims: 8, beta: 0.5, noise_sigma: 1.0, seed: 2 };
        let f: FeatureTable<f64> = gen_features(&g, &d, &spec).unwrap();
        let bytes = f.to_bytes("abc");
        let (back, hash) = FeatureTable::<f64>::from_bytes(&g, &bytes, &f.sidecar_csv("abc")).unwrap();
        assert_eq!(hash, "abc");
        assert_eq!(back, f);
        let f32s: FeatureTable<f32> = gen_features(&g, &d, &spec).unwrap();
        let (back, _) = FeatureTable::<f32>::from_bytes(&g, &f32s.to_bytes("abc"), &f32s.sidecar_csv("abc")).unwrap();
        assert_eq!(back, f32s);
    }
}
