use rayon::prelude::*;

use crate::coeff::CoefficientField;

use super::grid::Grid;
use super::linalg::{dot, LinearOperator, StencilMatrix};
use super::PdeError;

/// Generator and its dual on a grid, in mass-multiplied form.
///
/// `M L_h = K_sym + K_asym` and `M L'_h = K_sym - K_asym`, where `K_sym`
/// holds the `rho A` part and `K_asym` the `rho C` and drift parts.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub grid: Grid,
    pub mask: Vec<bool>,
    /// `mu_i = rho(x_i) h^d`.
    pub mu: Vec<f64>,
    pub k_sym: StencilMatrix,
    pub k_asym: Option<StencilMatrix>,
}

/// Per-node values: `rho`, `rho A`, `rho C`, `Bbar`.
struct NodeData {
    d: usize,
    stride: usize,
}

impl NodeData {
    fn new(d: usize) -> Self {
        Self { d, stride: 1 + 2 * d * d + d }
    }

    fn rho(&self, s: &[f64]) -> f64 {
        s[0]
    }

    fn a(&self, s: &[f64], k: usize, l: usize) -> f64 {
        s[1 + k * self.d + l]
    }

    fn c(&self, s: &[f64], k: usize, l: usize) -> f64 {
        s[1 + self.d * self.d + k * self.d + l]
    }

    fn b(&self, s: &[f64], k: usize) -> f64 {
        s[1 + 2 * self.d * self.d + k]
    }

    fn eval(&self, field: &CoefficientField, x: &[f64], out: &mut [f64]) -> Result<(), PdeError> {
        let d = self.d;
        let dd = d * d;
        let rho = field.rho_raw(x);
        out[0] = rho;
        field.diffusion_into(x, &mut out[1..1 + dd]);
        field.antisymmetric_into(x, &mut out[1 + dd..1 + 2 * dd]);
        field.bbar_into(x, &mut out[1 + 2 * dd..]);
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(PdeError::Assembly { location: x.to_vec(), detail: format!("density {rho} is not positive") });
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(PdeError::Assembly { location: x.to_vec(), detail: "non-finite coefficient".into() });
        }
        out[1..1 + 2 * dd].iter_mut().for_each(|v| *v *= rho);
        Ok(())
    }

    fn eval_slab(&self, field: &CoefficientField, grid: &Grid, s: usize, buf: &mut [f64]) -> Result<(), PdeError> {
        let sl = grid.stride(grid.d - 1);
        buf.par_chunks_mut(self.stride).enumerate().try_for_each(|(local, out)| {
            let mut x = vec![0.0; grid.d];
            grid.coord_into(s * sl + local, &mut x);
            self.eval(field, &x, out)
        })
    }
}

fn stencil_offsets(grid: &Grid, mixed: bool) -> Vec<isize> {
    let d = grid.d;
    let mut offs = vec![0isize];
    for k in 0..d {
        let s = grid.stride(k) as isize;
        offs.push(-s);
        offs.push(s);
    }
    if mixed {
        for k in 0..d {
            for l in k + 1..d {
                let (sk, sl) = (grid.stride(k) as isize, grid.stride(l) as isize);
                for (a, b) in [(-1, -1), (-1, 1), (1, -1), (1, 1)] {
                    offs.push(a * sk + b * sl);
                }
            }
        }
    }
    offs
}

/// Whether any off-diagonal `A` or `C` entry is nonzero on the grid, and
/// whether `C` or `Bbar` is nonzero anywhere.
fn scan(field: &CoefficientField, grid: &Grid) -> (bool, bool) {
    let d = grid.d;
    let skip_c = !field.has_antisymmetric();
    let skip_b = field.bbar_is_zero();
    let (mixed, asym) = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.coord(i);
            let mut a = vec![0.0; d * d];
            field.diffusion_into(&x, &mut a);
            let mut c = vec![0.0; d * d];
            if !skip_c {
                field.antisymmetric_into(&x, &mut c);
            }
            let mut mixed = false;
            let mut asym = false;
            for k in 0..d {
                for l in 0..d {
                    if k != l && (a[k * d + l] != 0.0 || c[k * d + l] != 0.0) {
                        mixed = true;
                    }
                    if c[k * d + l] != 0.0 {
                        asym = true;
                    }
                }
            }
            (mixed, asym)
        })
        .reduce(|| (false, false), |p, q| (p.0 || q.0, p.1 || q.1));
    (mixed, asym || !skip_b)
}

/// Flux-form assembly of the generator on the grid with zero Dirichlet data.
///
/// Axis couplings use edge averages of `rho a_kk`; mixed and skew couplings
/// use plaquette averages of `rho a_kl` and `rho c_kl` with the cross
/// stencil; the drift uses central differences.
pub fn assemble(field: &CoefficientField, grid: &Grid) -> Result<DiscreteOperator, PdeError> {
    if field.dim() != grid.d {
        return Err(PdeError::InvalidGrid(format!("field dimension {} vs grid dimension {}", field.dim(), grid.d)));
    }
    let d = grid.d;
    let n = grid.n;
    let h = grid.h;
    let nd = NodeData::new(d);
    let (mixed, has_asym) = scan(field, grid);
    let offsets = stencil_offsets(grid, mixed);
    let mut k_sym = StencilMatrix::zeros(offsets.clone(), grid.len());
    let mut k_asym = has_asym.then(|| StencilMatrix::zeros(offsets, grid.len()));
    let mask = grid.interior_mask();
    let mut mu = vec![0.0; grid.len()];
    let vol = h.powi(d as i32);
    let hw = h.powi(d as i32 - 2);
    let sl = grid.stride(d - 1);
    let mut cur = vec![0.0; sl * nd.stride];
    let mut next = vec![0.0; sl * nd.stride];
    nd.eval_slab(field, grid, 0, &mut cur)?;
    let mut q = vec![0usize; d];
    // corner weights of the plaquette differences along k and l
    const DK: [f64; 4] = [-0.5, 0.5, -0.5, 0.5];
    const DL: [f64; 4] = [-0.5, -0.5, 0.5, 0.5];
    for s in 0..=n {
        if s < n {
            nd.eval_slab(field, grid, s + 1, &mut next)?;
        }
        let data = |idx: usize| -> &[f64] {
            let local = idx % sl;
            let buf = if idx / sl == s { &cur } else { &next };
            &buf[local * nd.stride..(local + 1) * nd.stride]
        };
        for local in 0..sl {
            let p = s * sl + local;
            grid.multi_index(p, &mut q);
            let dp = data(p);
            mu[p] = nd.rho(dp) * vol;
            for k in 0..d {
                if q[k] == n {
                    continue;
                }
                let pn = p + grid.stride(k);
                let w = hw * 0.5 * (nd.a(dp, k, k) + nd.a(data(pn), k, k));
                if !(w > 0.0) {
                    let mut x = grid.coord(p);
                    x[k] += 0.5 * h;
                    return Err(PdeError::Assembly {
                        location: x,
                        detail: format!("face ellipticity {w} along axis {k} is not positive"),
                    });
                }
                for (row, col) in [(p, pn), (pn, p)] {
                    if mask[row] {
                        k_sym.add(row, 0, -0.5 * w);
                        k_sym.add(row, col as isize - row as isize, 0.5 * w);
                    }
                }
            }
            if mixed {
                for k in 0..d {
                    for l in k + 1..d {
                        if q[k] == n || q[l] == n {
                            continue;
                        }
                        let corners = [p, p + grid.stride(k), p + grid.stride(l), p + grid.stride(k) + grid.stride(l)];
                        let (mut wa, mut wc) = (0.0, 0.0);
                        for c in corners {
                            let dc = data(c);
                            wa += 0.25 * nd.a(dc, k, l);
                            wc += 0.25 * nd.c(dc, k, l);
                        }
                        wa *= hw;
                        wc *= hw;
                        for (i, &ci) in corners.iter().enumerate() {
                            if !mask[ci] {
                                continue;
                            }
                            for (j, &cj) in corners.iter().enumerate() {
                                let off = cj as isize - ci as isize;
                                let vs = -0.5 * wa * (DK[j] * DL[i] + DL[j] * DK[i]);
                                if vs != 0.0 {
                                    k_sym.add(ci, off, vs);
                                }
                                let va = -0.5 * wc * (DL[j] * DK[i] - DK[j] * DL[i]);
                                if va != 0.0 {
                                    if let Some(m) = k_asym.as_mut() {
                                        m.add(ci, off, va);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if mask[p] && !field.bbar_is_zero() {
                let m = k_asym.as_mut().expect("drift part allocated");
                for k in 0..d {
                    let v = nd.rho(dp) * vol * nd.b(dp, k) / (2.0 * h);
                    let st = grid.stride(k) as isize;
                    m.add(p, st, v);
                    m.add(p, -st, -v);
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(DiscreteOperator { grid: grid.clone(), mask, mu, k_sym, k_asym })
}

impl DiscreteOperator {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// True when the generator equals its dual (`C = 0`, `Bbar = 0`).
    pub fn is_symmetric(&self) -> bool {
        self.k_asym.is_none()
    }

    /// `y = m M x - k K x` on interior nodes and `y = x` on the boundary;
    /// `K` is replaced by the dual matrix when `dual` is set.
    pub fn apply_combined(&self, x: &[f64], y: &mut [f64], m: f64, k: f64, dual: bool) {
        let sym = &self.k_sym;
        let ss = sym.slots();
        let asym = self.k_asym.as_ref();
        let sign = if dual { -1.0 } else { 1.0 };
        y.par_chunks_mut(4096).enumerate().for_each(|(c, ys)| {
            let base = c * 4096;
            for (o, yi) in ys.iter_mut().enumerate() {
                let i = base + o;
                if !self.mask[i] {
                    *yi = x[i];
                    continue;
                }
                let mut acc = 0.0;
                for (v, off) in sym.vals[i * ss..(i + 1) * ss].iter().zip(&sym.offsets) {
                    acc += v * x[(i as isize + off) as usize];
                }
                if let Some(a) = asym {
                    let sa = a.slots();
                    let mut acc2 = 0.0;
                    for (v, off) in a.vals[i * sa..(i + 1) * sa].iter().zip(&a.offsets) {
                        acc2 += v * x[(i as isize + off) as usize];
                    }
                    acc += sign * acc2;
                }
                *yi = m * self.mu[i] * x[i] - k * acc;
            }
        });
    }

    /// `K f` (or the dual), zero on the boundary.
    pub fn apply_k(&self, f: &[f64], dual: bool) -> Vec<f64> {
        let mut y = vec![0.0; self.len()];
        self.apply_combined(f, &mut y, 0.0, -1.0, dual);
        for (yi, m) in y.iter_mut().zip(&self.mask) {
            if !m {
                *yi = 0.0;
            }
        }
        y
    }

    /// `L_h f` (or `L'_h f` when `dual`), zero on the boundary.
    pub fn apply(&self, f: &[f64], dual: bool) -> Vec<f64> {
        let mut y = self.apply_k(f, dual);
        y.iter_mut().zip(&self.mu).for_each(|(v, m)| *v /= m);
        y
    }

    /// `sum_i f_i g_i mu_i` over interior nodes.
    pub fn mu_inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let fm: Vec<f64> =
            f.iter().zip(&self.mu).zip(&self.mask).map(|((v, m), i)| if *i { v * m } else { 0.0 }).collect();
        dot(&fm, g)
    }

    /// The matrix `m M - k K` (or its dual) as a solver operator.
    pub fn system(&self, m: f64, k: f64, dual: bool) -> SystemOperator<'_> {
        SystemOperator { op: self, m, k, dual }
    }
}

pub struct SystemOperator<'a> {
    op: &'a DiscreteOperator,
    m: f64,
    k: f64,
    dual: bool,
}

impl LinearOperator for SystemOperator<'_> {
    fn len(&self) -> usize {
        self.op.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.op.apply_combined(x, y, self.m, self.k, self.dual);
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.op.len())
            .map(|i| {
                if self.op.mask[i] {
                    let kd = self.op.k_sym.diag(i)
                        + self.op.k_asym.as_ref().map_or(0.0, |a| if self.dual { -a.diag(i) } else { a.diag(i) });
                    self.m * self.op.mu[i] - self.k * kd
                } else {
                    1.0
                }
            })
            .collect()
    }
}
