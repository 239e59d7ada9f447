//! SLIC superpixels and the region adjacency graph built on them.

use std::collections::{BTreeMap, BTreeSet};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::color::{lab_distance, srgb8_to_lab};
use crate::error::{PadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    pub target_count: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            target_count: 200,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub mean_lab: [f64; 3],
    pub centroid: (f64, f64),
    pub pixel_count: usize,
    pub touches_boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Lab distance between the two region means.
    pub weight: f64,
    /// Added by the boundary closure rather than spatial adjacency.
    pub closure: bool,
}

#[derive(Debug, Clone)]
pub struct SuperpixelGraph {
    pub width: usize,
    pub height: usize,
    /// Region index per pixel, row-major.
    pub labels: Vec<u32>,
    pub regions: Vec<Region>,
    pub edges: Vec<Edge>,
}

impl SuperpixelGraph {
    /// Builds a graph directly from regions and spatial edges (a pixel
    /// raster is not needed for the graph computations). Boundary regions
    /// are then mutually connected.
    pub fn from_parts(regions: Vec<Region>, spatial: &[(usize, usize)]) -> Self {
        let mut g = SuperpixelGraph {
            width: 0,
            height: 0,
            labels: Vec::new(),
            regions,
            edges: Vec::new(),
        };
        g.set_edges(spatial.iter().copied().collect());
        g
    }

    fn set_edges(&mut self, spatial: BTreeSet<(usize, usize)>) {
        let w = |a: usize, b: usize| lab_distance(&self.regions[a].mean_lab, &self.regions[b].mean_lab);
        let mut edges: Vec<Edge> = spatial
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| Edge {
                a,
                b,
                weight: w(a, b),
                closure: false,
            })
            .collect();
        let present: BTreeSet<(usize, usize)> = edges.iter().map(|e| (e.a, e.b)).collect();
        let boundary: Vec<usize> = (0..self.regions.len())
            .filter(|&i| self.regions[i].touches_boundary)
            .collect();
        for (i, &a) in boundary.iter().enumerate() {
            for &b in &boundary[i + 1..] {
                if !present.contains(&(a, b)) {
                    edges.push(Edge {
                        a,
                        b,
                        weight: w(a, b),
                        closure: true,
                    });
                }
            }
        }
        self.edges = edges;
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Neighbour lists over all edges (spatial and closure).
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.regions.len()];
        for e in &self.edges {
            adj[e.a].push((e.b, e.weight));
            adj[e.b].push((e.a, e.weight));
        }
        adj
    }

    pub fn spatial_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| !e.closure)
    }

    pub fn is_connected(&self) -> bool {
        if self.regions.is_empty() {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.regions.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Per-pixel raster of a per-region value.
    pub fn paint(&self, values: &[f64]) -> Vec<f64> {
        self.labels.iter().map(|&l| values[l as usize]).collect()
    }
}

/// Converts an image into a Lab plane.
pub fn lab_image(img: &RgbImage) -> Vec<[f64; 3]> {
    img.pixels().map(|p| srgb8_to_lab(p.0)).collect()
}

#[derive(Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// SLIC clustering in (L, a, b, x, y) with connectivity enforcement.
pub fn segment_superpixels(img: &RgbImage, params: &SlicParams) -> Result<SuperpixelGraph> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = w * h;
    if params.target_count < 4 {
        return Err(PadError::InvalidInput(format!(
            "target_count {} < 4",
            params.target_count
        )));
    }
    if n < params.target_count {
        return Err(PadError::InvalidInput(format!(
            "{w}x{h} frame has fewer pixels than {} superpixels",
            params.target_count
        )));
    }
    let lab = lab_image(img);
    let labels = slic_labels(&lab, w, h, params);
    Ok(graph_from_labels(&lab, w, h, labels))
}

fn slic_labels(lab: &[[f64; 3]], w: usize, h: usize, params: &SlicParams) -> Vec<u32> {
    let s = ((w * h) as f64 / params.target_count as f64).sqrt();
    let nx = ((w as f64 / s).round() as usize).max(1);
    let ny = ((h as f64 / s).round() as usize).max(1);
    let step_x = w as f64 / nx as f64;
    let step_y = h as f64 / ny as f64;
    let at = |x: usize, y: usize| lab[y * w + x];

    let grad = |x: usize, y: usize| -> f64 {
        let xl = x.saturating_sub(1);
        let xr = (x + 1).min(w - 1);
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(h - 1);
        let d = |p: [f64; 3], q: [f64; 3]| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>();
        d(at(xr, y), at(xl, y)) + d(at(x, yd), at(x, yu))
    };

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (i as f64 + 0.5) * step_x - 0.5;
            let cy = (j as f64 + 0.5) * step_y - 0.5;
            let (rx, ry) = (cx.round() as usize, cy.round() as usize);
            // move off edges: lowest gradient in the 3x3 neighbourhood, only
            // when strictly lower than the seed itself
            let mut best = (grad(rx, ry), cx, cy);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (xx, yy) = (rx as i64 + dx, ry as i64 + dy);
                    if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                        continue;
                    }
                    let g = grad(xx as usize, yy as usize);
                    if g < best.0 {
                        best = (g, xx as f64, yy as f64);
                    }
                }
            }
            let (x, y) = (best.1, best.2);
            centers.push(Center {
                lab: at(x.round() as usize, y.round() as usize),
                x,
                y,
            });
        }
    }

    let m2 = params.compactness * params.compactness;
    let inv_s2 = 1.0 / (s * s);
    let radius = step_x.max(step_y).ceil() as i64;
    let mut labels = vec![u32::MAX; w * h];
    let mut dist = vec![f64::INFINITY; w * h];
    for _ in 0..params.iterations {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let x0 = (c.x.round() as i64 - radius).max(0) as usize;
            let x1 = (c.x.round() as i64 + radius).min(w as i64 - 1) as usize;
            let y0 = (c.y.round() as i64 - radius).max(0) as usize;
            let y1 = (c.y.round() as i64 + radius).min(h as i64 - 1) as usize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = lab[y * w + x];
                    let dc = (p[0] - c.lab[0]).powi(2) + (p[1] - c.lab[1]).powi(2) + (p[2] - c.lab[2]).powi(2);
                    let ds = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let d = dc + ds * inv_s2 * m2;
                    let i = y * w + x;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for y in 0..h {
            for x in 0..w {
                let l = labels[y * w + x];
                if l == u32::MAX {
                    continue;
                }
                let a = &mut acc[l as usize];
                let p = lab[y * w + x];
                a[0] += p[0];
                a[1] += p[1];
                a[2] += p[2];
                a[3] += x as f64;
                a[4] += y as f64;
                a[5] += 1.0;
            }
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                c.lab = [a[0] / a[5], a[1] / a[5], a[2] / a[5]];
                c.x = a[3] / a[5];
                c.y = a[4] / a[5];
            }
        }
    }

    let min_size = ((s * s) / 4.0) as usize;
    enforce_connectivity(&labels, w, h, min_size.max(1))
}

/// Splits labels into 4-connected components; the largest component of each
/// label survives (if not tiny) and every other component is merged into
/// the adjacent surviving region with the most pixels. Returns labels
/// renumbered 0.. in raster order of first appearance.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: usize) -> Vec<u32> {
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_size.len();
        let lab = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == lab {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        comp_label.push(lab);
        comp_size.push(size);
    }
    let nc = comp_size.len();

    let mut neighbours: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nc];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w && comp[i] != comp[i + 1] {
                neighbours[comp[i]].insert(comp[i + 1]);
                neighbours[comp[i + 1]].insert(comp[i]);
            }
            if y + 1 < h && comp[i] != comp[i + w] {
                neighbours[comp[i]].insert(comp[i + w]);
                neighbours[comp[i + w]].insert(comp[i]);
            }
        }
    }

    let mut largest: BTreeMap<u32, usize> = BTreeMap::new();
    for c in 0..nc {
        if comp_label[c] == u32::MAX {
            continue;
        }
        let e = largest.entry(comp_label[c]).or_insert(c);
        if comp_size[c] > comp_size[*e] {
            *e = c;
        }
    }
    // owner[c] = surviving component that c merges into
    let mut owner: Vec<Option<usize>> = vec![None; nc];
    for &c in largest.values() {
        if comp_size[c] >= min_size {
            owner[c] = Some(c);
        }
    }
    if owner.iter().all(|o| o.is_none()) {
        let biggest = (0..nc).max_by_key(|&c| (comp_size[c], std::cmp::Reverse(c))).unwrap_or(0);
        owner[biggest] = Some(biggest);
    }
    let mut final_size: Vec<usize> = (0..nc)
        .map(|c| if owner[c] == Some(c) { comp_size[c] } else { 0 })
        .collect();
    loop {
        let mut changed = false;
        let mut pending = false;
        for c in 0..nc {
            if owner[c].is_some() {
                continue;
            }
            let best = neighbours[c]
                .iter()
                .filter_map(|&nb| owner[nb])
                .max_by_key(|&o| (final_size[o], std::cmp::Reverse(o)));
            match best {
                Some(o) => {
                    owner[c] = Some(o);
                    final_size[o] += comp_size[c];
                    changed = true;
                }
                None => pending = true,
            }
        }
        if !pending || !changed {
            break;
        }
    }

    let mut renumber: BTreeMap<usize, u32> = BTreeMap::new();
    let mut out = vec![0u32; n];
    for i in 0..n {
        let o = owner[comp[i]].unwrap_or(comp[i]);
        let next = renumber.len() as u32;
        out[i] = *renumber.entry(o).or_insert(next);
    }
    out
}

/// Region statistics and adjacency edges for a label raster.
pub fn graph_from_labels(lab: &[[f64; 3]], w: usize, h: usize, labels: Vec<u32>) -> SuperpixelGraph {
    let nr = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut acc = vec![[0.0f64; 5]; nr];
    let mut count = vec![0usize; nr];
    let mut boundary = vec![false; nr];
    let mut spatial = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let l = labels[i] as usize;
            let p = lab[i];
            let a = &mut acc[l];
            a[0] += p[0];
            a[1] += p[1];
            a[2] += p[2];
            a[3] += x as f64;
            a[4] += y as f64;
            count[l] += 1;
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                boundary[l] = true;
            }
            if x + 1 < w && labels[i + 1] as usize != l {
                let o = labels[i + 1] as usize;
                spatial.insert((l.min(o), l.max(o)));
            }
            if y + 1 < h && labels[i + w] as usize != l {
                let o = labels[i + w] as usize;
                spatial.insert((l.min(o), l.max(o)));
            }
        }
    }
    let regions = (0..nr)
        .map(|r| {
            let c = count[r].max(1) as f64;
            Region {
                mean_lab: [acc[r][0] / c, acc[r][1] / c, acc[r][2] / c],
                centroid: (acc[r][3] / c, acc[r][4] / c),
                pixel_count: count[r],
                touches_boundary: boundary[r],
            }
        })
        .collect();
    let mut g = SuperpixelGraph {
        width: w,
        height: h,
        labels,
        regions,
        edges: Vec::new(),
    };
    g.set_edges(spatial);
    g
}
