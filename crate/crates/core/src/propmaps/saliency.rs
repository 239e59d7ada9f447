//! Saliency from boundary connectivity and a quadratic cost over regions.
//!
//! Each superpixel gets a background weight from how strongly it connects
//! to the image border along low-contrast geodesic paths, a foreground
//! weight from background-weighted colour contrast, and the final saliency
//! minimises
//!
//! ```text
//! sum_p w_bg(p) s_p^2 + sum_p w_fg(p) (s_p - 1)^2 + sum_(p,q) w_pq (s_p - s_q)^2
//! ```
//!
//! whose minimiser solves a symmetric positive-definite linear system.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::superpixel::SuperpixelGraph;
use super::color::lab_distance;
use crate::error::{PadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyParams {
    /// Colour scale (CIE-Lab units) of connectivity and smoothness weights.
    pub sigma_clr: f64,
    pub sigma_bnd: f64,
    /// Spatial scale of the contrast weighting, relative to the image diagonal.
    pub sigma_spa: f64,
    /// Constant added to every smoothness weight.
    pub mu: f64,
}

impl Default for SaliencyParams {
    fn default() -> Self {
        SaliencyParams {
            sigma_clr: 10.0,
            sigma_bnd: 1.0,
            sigma_spa: 0.25,
            mu: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMeasure {
    pub bndcon: Vec<f64>,
    pub w_bg: Vec<f64>,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All-pairs geodesic distances (Dijkstra from every region) over the
/// graph's edges. Errors if the graph is disconnected.
pub fn geodesic_distances(graph: &SuperpixelGraph) -> Result<Vec<Vec<f64>>> {
    let n = graph.len();
    let adj = graph.adjacency();
    let mut all = Vec::with_capacity(n);
    for src in 0..n {
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(Entry(0.0, src));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &adj[u] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Entry(nd, v));
                }
            }
        }
        if dist.iter().any(|d| d.is_infinite()) {
            return Err(PadError::Internal(format!(
                "superpixel graph is disconnected (from region {src})"
            )));
        }
        all.push(dist);
    }
    Ok(all)
}

pub fn boundary_connectivity(graph: &SuperpixelGraph, sigma_clr: f64, sigma_bnd: f64) -> Result<BackgroundMeasure> {
    let geo = geodesic_distances(graph)?;
    let two_s2 = 2.0 * sigma_clr * sigma_clr;
    let mut bndcon = Vec::with_capacity(graph.len());
    for row in &geo {
        let mut area = 0.0;
        let mut len_bnd = 0.0;
        for (q, d) in row.iter().enumerate() {
            let s = (-d * d / two_s2).exp();
            area += s;
            if graph.regions[q].touches_boundary {
                len_bnd += s;
            }
        }
        bndcon.push(len_bnd / area.sqrt());
    }
    let two_b2 = 2.0 * sigma_bnd * sigma_bnd;
    let w_bg = bndcon.iter().map(|b| 1.0 - (-b * b / two_b2).exp()).collect();
    Ok(BackgroundMeasure { bndcon, w_bg })
}

/// Background-weighted contrast, scaled by its maximum into [0,1].
/// `diagonal` normalises centroid distances.
pub fn foreground_weights(graph: &SuperpixelGraph, w_bg: &[f64], sigma_spa: f64, diagonal: f64) -> Vec<f64> {
    let n = graph.len();
    let two_s2 = 2.0 * sigma_spa * sigma_spa;
    let ctr: Vec<f64> = (0..n)
        .map(|p| {
            let rp = &graph.regions[p];
            (0..n)
                .filter(|&q| q != p)
                .map(|q| {
                    let rq = &graph.regions[q];
                    let dx = (rp.centroid.0 - rq.centroid.0) / diagonal;
                    let dy = (rp.centroid.1 - rq.centroid.1) / diagonal;
                    let w_spa = (-(dx * dx + dy * dy) / two_s2).exp();
                    lab_distance(&rp.mean_lab, &rq.mean_lab) * w_spa * w_bg[q]
                })
                .sum()
        })
        .collect();
    let max = ctr.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        ctr.iter().map(|c| c / max).collect()
    } else {
        vec![0.0; n]
    }
}

/// Smoothness weights `exp(-d_app^2 / 2 sigma_clr^2) + mu` on spatial edges.
pub fn smoothness_edges(graph: &SuperpixelGraph, sigma_clr: f64, mu: f64) -> Vec<(usize, usize, f64)> {
    let two_s2 = 2.0 * sigma_clr * sigma_clr;
    graph
        .spatial_edges()
        .map(|e| (e.a, e.b, (-e.weight * e.weight / two_s2).exp() + mu))
        .collect()
}

pub fn saliency_cost(s: &[f64], w_bg: &[f64], w_fg: &[f64], edges: &[(usize, usize, f64)]) -> f64 {
    let unary: f64 = s
        .iter()
        .zip(w_bg.iter().zip(w_fg))
        .map(|(&x, (&b, &f))| b * x * x + f * (x - 1.0) * (x - 1.0))
        .sum();
    let pair: f64 = edges.iter().map(|&(p, q, w)| w * (s[p] - s[q]).powi(2)).sum();
    unary + pair
}

/// Exact minimiser of [`saliency_cost`] (unclamped), via Cholesky on
/// `(diag(w_bg + w_fg) + L) s = w_fg` with `L` the weighted Laplacian.
pub fn solve_saliency(w_bg: &[f64], w_fg: &[f64], edges: &[(usize, usize, f64)]) -> Result<Vec<f64>> {
    let n = w_bg.len();
    if w_fg.len() != n {
        return Err(PadError::Internal("w_bg / w_fg length mismatch".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = w_bg[i] + w_fg[i];
    }
    for &(p, q, w) in edges {
        a[(p, p)] += w;
        a[(q, q)] += w;
        a[(p, q)] -= w;
        a[(q, p)] -= w;
    }
    let b = DVector::from_column_slice(w_fg);
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| PadError::Internal("saliency system is not positive definite".into()))?;
    let mut s = chol.solve(&b);
    // one step of iterative refinement if needed
    let residual = |s: &DVector<f64>| (&a * s - &b).amax();
    if residual(&s) > 1e-8 {
        let r = &b - &a * &s;
        s += chol.solve(&r);
    }
    let res = residual(&s);
    if res > 1e-8 {
        return Err(PadError::Internal(format!("saliency residual {res:e} > 1e-8")));
    }
    Ok(s.iter().copied().collect())
}

/// Per-region saliency in [0,1] for a segmented frame.
pub fn region_saliency(graph: &SuperpixelGraph, params: &SaliencyParams) -> Result<Vec<f64>> {
    let bg = boundary_connectivity(graph, params.sigma_clr, params.sigma_bnd)?;
    let diagonal = ((graph.width * graph.width + graph.height * graph.height) as f64).sqrt().max(1.0);
    let w_fg = foreground_weights(graph, &bg.w_bg, params.sigma_spa, diagonal);
    let edges = smoothness_edges(graph, params.sigma_clr, params.mu);
    assert!(
        params.mu > 0.0 || bg.w_bg.iter().zip(&w_fg).any(|(b, f)| b + f > 0.0),
        "saliency system would be singular"
    );
    let s = solve_saliency(&bg.w_bg, &w_fg, &edges)?;
    Ok(s.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}
