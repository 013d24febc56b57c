//! Single-edge adaptive-moment updates of the region parameters.

use serde::{Deserialize, Serialize};

use crate::mask::{project_params, RegionParams};

/// Adam state per region and edge (`l, r, t, b`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAdam {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<[f64; 4]>,
    v: Vec<[f64; 4]>,
    t: Vec<[u32; 4]>,
}

/// Index of the largest `|g|`; the earliest edge wins ties. `None` when all
/// four are zero.
pub fn select_edge(g: &[f64; 4]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in g.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        match best {
            Some(b) if g[b].abs() >= v.abs() => {}
            _ => best = Some(i),
        }
    }
    best
}

impl RegionAdam {
    pub fn new(regions: usize, step: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            step,
            beta1,
            beta2,
            eps,
            m: vec![[0.0; 4]; regions],
            v: vec![[0.0; 4]; regions],
            t: vec![[0; 4]; regions],
        }
    }

    /// Moves the steepest edge of each region, then projects onto the frame.
    /// Returns the edge moved per region.
    pub fn step(
        &mut self,
        regions: &mut [RegionParams],
        grads: &[[f64; 4]],
        w: usize,
        h: usize,
    ) -> Vec<Option<usize>> {
        let mut moved = Vec::with_capacity(regions.len());
        for (k, (theta, g)) in regions.iter_mut().zip(grads).enumerate() {
            let Some(e) = select_edge(g) else {
                moved.push(None);
                continue;
            };
            self.t[k][e] += 1;
            let t = self.t[k][e] as i32;
            self.m[k][e] = self.beta1 * self.m[k][e] + (1.0 - self.beta1) * g[e];
            self.v[k][e] = self.beta2 * self.v[k][e] + (1.0 - self.beta2) * g[e] * g[e];
            let mh = self.m[k][e] / (1.0 - self.beta1.powi(t));
            let vh = self.v[k][e] / (1.0 - self.beta2.powi(t));
            let mut a = theta.as_array();
            a[e] -= self.step * mh / (vh.sqrt() + self.eps);
            *theta = project_params(&RegionParams::from_array(a), w, h);
            moved.push(Some(e));
        }
        moved
    }
}
