use crate::coeff::CoefficientField;

use super::PdeError;

/// Uniform tensor grid on `[-r, r]^d` with `n + 1` nodes per axis.
///
/// Vectors are indexed over all nodes; boundary nodes carry the zero
/// Dirichlet value.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub d: usize,
    pub r: f64,
    pub h: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(d: usize, r: f64, h: f64) -> Result<Self, PdeError> {
        if !(2..=3).contains(&d) {
            return Err(PdeError::InvalidGrid(format!("dimension {d} unsupported, use 2 or 3")));
        }
        if !(h > 0.0 && r > 0.0 && h.is_finite() && r.is_finite()) {
            return Err(PdeError::InvalidGrid(format!("need r > 0 and h > 0, got r = {r}, h = {h}")));
        }
        let ratio = 2.0 * r / h;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) || n < 4.0 {
            return Err(PdeError::InvalidGrid(format!("2r/h = {ratio} must be an integer >= 4")));
        }
        Ok(Self { d, r, h, n: n as usize })
    }

    pub fn per_axis(&self) -> usize {
        self.n + 1
    }

    pub fn len(&self) -> usize {
        self.per_axis().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stride(&self, k: usize) -> usize {
        self.per_axis().pow(k as u32)
    }

    pub fn multi_index(&self, mut idx: usize, out: &mut [usize]) {
        let m = self.per_axis();
        for o in out.iter_mut().take(self.d) {
            *o = idx % m;
            idx /= m;
        }
    }

    pub fn coord_into(&self, idx: usize, out: &mut [f64]) {
        let m = self.per_axis();
        let mut i = idx;
        for o in out.iter_mut().take(self.d) {
            *o = -self.r + (i % m) as f64 * self.h;
            i /= m;
        }
    }

    pub fn coord(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        self.coord_into(idx, &mut x);
        x
    }

    /// Smallest index distance from the node to the boundary.
    pub fn boundary_distance(&self, idx: usize) -> usize {
        let m = self.per_axis();
        let mut i = idx;
        let mut best = usize::MAX;
        for _ in 0..self.d {
            let q = i % m;
            best = best.min(q.min(self.n - q));
            i /= m;
        }
        best
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.boundary_distance(idx) > 0
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_interior(i)).collect()
    }

    /// Node at `x` if `x` lies on the grid.
    pub fn node_at(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (k, xk) in x.iter().enumerate().take(self.d) {
            let t = (xk + self.r) / self.h;
            let q = t.round();
            if (t - q).abs() > 1e-9 || q < 0.0 || q > self.n as f64 {
                return None;
            }
            idx += q as usize * self.stride(k);
        }
        Some(idx)
    }

    /// `rho(x_i) h^d` at every node.
    pub fn mu_weights(&self, field: &CoefficientField) -> Result<Vec<f64>, PdeError> {
        let vol = self.h.powi(self.d as i32);
        let mut x = vec![0.0; self.d];
        (0..self.len())
            .map(|i| {
                self.coord_into(i, &mut x);
                let rho = field.rho_raw(&x);
                if rho > 0.0 && rho.is_finite() {
                    Ok(rho * vol)
                } else {
                    Err(PdeError::Assembly { location: x.clone(), detail: format!("density {rho} is not positive") })
                }
            })
            .collect()
    }

    /// Values of `f` at interior nodes, zero on the boundary.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        (0..self.len())
            .map(|i| {
                if self.is_interior(i) {
                    self.coord_into(i, &mut x);
                    f(&x)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trips() {
        let g = Grid::new(3, 2.0, 0.5).unwrap();
        assert_eq!(g.n, 8);
        assert_eq!(g.len(), 729);
        let i = g.node_at(&[0.0, -1.5, 2.0]).unwrap();
        assert_eq!(g.coord(i), vec![0.0, -1.5, 2.0]);
        assert!(!g.is_interior(i));
        assert_eq!(g.boundary_distance(g.node_at(&[0.0, 0.0, 0.0]).unwrap()), 4);
        assert!(g.node_at(&[0.1, 0.0, 0.0]).is_none());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(4, 1.0, 0.1).is_err());
        assert!(Grid::new(2, 1.0, 0.3).is_err());
        assert!(Grid::new(2, 1.0, -0.1).is_err());
    }
}
