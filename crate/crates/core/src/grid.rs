//! Uniform grids on `[−L, L)^d`, grid fields and linear (zero-padded)
//! convolution, either through the FFT or by direct summation.
//!
//! Nodes sit at `x_i = −L + i·h`, `i = 0..n`, `h = 2L/n`, so the origin is
//! the node `i = n/2`. A discrete kernel stores one value per node offset
//! `k ∈ [−(n−1), n−1]` per axis, which covers every pair of in-domain nodes.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tailprofiles::Kernel;

/// Cost guard for [`convolve_direct`]: at most `2^14` nodes.
pub const DIRECT_LIMIT: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: u32,
    n: usize,
    half_width: f64,
}

pub fn make_grid(dim: u32, half_width: f64, n: usize) -> Result<Grid> {
    Grid::new(dim, half_width, n)
}

impl Grid {
    pub fn new(dim: u32, half_width: f64, n: usize) -> Result<Grid> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidSize(format!("dimension {dim} not in {{1, 2}}")));
        }
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::InvalidSize(format!("n = {n} must be a power of two ≥ 16")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidSize(format!("half-width {half_width} must be positive")));
        }
        if n.checked_pow(dim).is_none_or(|p| p > 1 << 28) {
            return Err(Error::InvalidSize(format!("{n}^{dim} nodes is too many")));
        }
        Ok(Grid { dim, n, half_width })
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    /// `h^d`, the volume attached to one node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the node at the origin along each axis.
    pub fn center(&self) -> usize {
        self.n / 2
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Coordinates of the node with flat index `idx`.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.coord(idx), 0.0]
        } else {
            [self.coord(idx / self.n), self.coord(idx % self.n)]
        }
    }

    /// Fractional node index of coordinate `x`.
    pub fn locate(&self, x: f64) -> f64 {
        (x + self.half_width) / self.spacing()
    }
}

/// Values on the nodes of a grid, row-major with the first axis slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Field {
        Field::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, value: f64) -> Field {
        Field {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(Error::InvalidSize(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSize(format!("non-finite value at node {i}")));
        }
        Ok(Field { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        if self.grid.dim == 1 {
            self.values[i]
        } else {
            self.values[i * self.grid.n + j]
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `h^d Σ u`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// Maximum of `|u|` over the outermost two node layers.
    pub fn boundary_mass(&self) -> f64 {
        let n = self.grid.n;
        let edge = |i: usize| i < 2 || i + 2 >= n;
        match self.grid.dim {
            1 => self
                .values
                .iter()
                .enumerate()
                .filter(|(i, _)| edge(*i))
                .fold(0.0, |m, (_, v)| m.max(v.abs())),
            _ => self
                .values
                .iter()
                .enumerate()
                .filter(|(k, _)| edge(k / n) || edge(k % n))
                .fold(0.0, |m, (_, v)| m.max(v.abs())),
        }
    }

    /// Bilinear (or linear in 1D) interpolation at a point, zero outside.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let n = g.n as isize;
        let axis = |c: f64| {
            let p = g.locate(c);
            let i = p.floor();
            (i as isize, p - i)
        };
        let get1 = |i: isize| if (0..n).contains(&i) { self.values[i as usize] } else { 0.0 };
        if g.dim == 1 {
            let (i, f) = axis(x[0]);
            return (1.0 - f) * get1(i) + f * get1(i + 1);
        }
        let get2 = |i: isize, j: isize| {
            if (0..n).contains(&i) && (0..n).contains(&j) {
                self.values[(i * n + j) as usize]
            } else {
                0.0
            }
        };
        let (i, fx) = axis(x[0]);
        let (j, fy) = axis(x[1]);
        (1.0 - fx) * ((1.0 - fy) * get2(i, j) + fy * get2(i, j + 1))
            + fx * ((1.0 - fy) * get2(i + 1, j) + fy * get2(i + 1, j + 1))
    }

    /// CSV rows `x[,y],value` with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        if self.grid.dim == 1 {
            w.write_record(["x", "value"]).map_err(io)?;
        } else {
            w.write_record(["x", "y", "value"]).map_err(io)?;
        }
        for (k, v) in self.values.iter().enumerate() {
            let p = self.grid.point(k);
            if self.grid.dim == 1 {
                w.write_record([p[0].to_string(), v.to_string()]).map_err(io)?;
            } else {
                w.write_record([p[0].to_string(), p[1].to_string(), v.to_string()])
                    .map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluate a generator at every node.
pub fn sample_field<F: Fn(&[f64]) -> f64>(grid: &Grid, generator: F) -> Field {
    let values = (0..grid.len())
        .map(|k| {
            let p = grid.point(k);
            generator(&p[..grid.dim as usize])
        })
        .collect();
    Field { grid: *grid, values }
}

/// `u(x) = ∫_{y ≥ x} density(y) dy` (componentwise order), by cumulative
/// trapezoid sums from the far corner of the domain.
pub fn sample_orthant_integral<F: Fn(&[f64]) -> f64>(grid: &Grid, density: F) -> Field {
    let n = grid.n;
    let h = grid.spacing();
    let dens = sample_field(grid, density);
    let mut values = vec![0.0; grid.len()];
    if grid.dim == 1 {
        for i in (0..n - 1).rev() {
            values[i] = values[i + 1] + 0.5 * h * (dens.values[i] + dens.values[i + 1]);
        }
    } else {
        // Cumulate along the second axis, then along the first.
        let mut partial = vec![0.0; grid.len()];
        for i in 0..n {
            for j in (0..n - 1).rev() {
                partial[i * n + j] =
                    partial[i * n + j + 1] + 0.5 * h * (dens.values[i * n + j] + dens.values[i * n + j + 1]);
            }
        }
        for j in 0..n {
            for i in (0..n - 1).rev() {
                values[i * n + j] = values[(i + 1) * n + j] + 0.5 * h * (partial[i * n + j] + partial[(i + 1) * n + j]);
            }
        }
    }
    Field { grid: *grid, values }
}

/// A kernel on node offsets `[−(n−1), n−1]^d`, stored densely with side
/// `2n−1`; `value(k)` approximates the density, so cell masses are `h^d·value`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    grid: Grid,
    values: Vec<f64>,
}

impl DiscreteKernel {
    pub fn side(grid: &Grid) -> usize {
        2 * grid.n - 1
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let side = Self::side(&grid);
        if values.len() != side.pow(grid.dim) {
            return Err(Error::InvalidSize(format!(
                "kernel needs {} offsets, got {}",
                side.pow(grid.dim),
                values.len()
            )));
        }
        Ok(DiscreteKernel { grid, values })
    }

    /// Reads a kernel sampled on the grid nodes (offset = node − origin);
    /// offsets outside the domain are zero.
    pub fn from_field(field: &Field) -> Self {
        let grid = *field.grid();
        let (n, c, side) = (grid.n, grid.center(), Self::side(&grid));
        let mut values = vec![0.0; side.pow(grid.dim)];
        let off = |i: usize| i + (n - 1) - c;
        if grid.dim == 1 {
            for i in 0..n {
                values[off(i)] = field.values[i];
            }
        } else {
            for i in 0..n {
                for j in 0..n {
                    values[off(i) * side + off(j)] = field.values[i * n + j];
                }
            }
        }
        DiscreteKernel { grid, values }
    }

    /// Cell averages of a radial kernel: each offset holds `∫_cell a / h^d`.
    /// If quadrature error pushes the total above the analytic bound it is
    /// scaled back so the discrete operator never amplifies constants.
    pub fn from_kernel(kernel: &Kernel, grid: &Grid) -> Result<Self> {
        if kernel.dim() != grid.dim {
            return Err(Error::GridMismatch);
        }
        let n = grid.n;
        let h = grid.spacing();
        let side = Self::side(grid);
        let mut values = vec![0.0; side.pow(grid.dim)];
        let reach = (n as f64 - 0.5) * h;
        if grid.dim == 1 {
            for k in 0..n {
                let m = cell_mass_1d(kernel, k as f64 * h, h) / h;
                values[n - 1 + k] = m;
                values[n - 1 - k] = m;
            }
            let bound = 1.0 - 2.0 * kernel.tail_mass_1d(reach);
            rescale_to_bound(&mut values, h, bound);
        } else {
            for k1 in 0..n {
                for k2 in 0..=k1 {
                    let m = cell_mass_2d(kernel, k1 as f64 * h, k2 as f64 * h, h) / (h * h);
                    for (a, b) in [(k1, k2), (k2, k1)] {
                        for (sa, sb) in [(1i64, 1i64), (1, -1), (-1, 1), (-1, -1)] {
                            let ia = (n as i64 - 1 + sa * a as i64) as usize;
                            let ib = (n as i64 - 1 + sb * b as i64) as usize;
                            values[ia * side + ib] = m;
                        }
                    }
                }
            }
            let bound = 1.0 - kernel.radial_tail_mass(std::f64::consts::SQRT_2 * reach);
            rescale_to_bound(&mut values, h * h, bound);
        }
        Ok(DiscreteKernel { grid: *grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at signed offset `(k1, k2)`; `k2` ignored in 1D.
    pub fn at(&self, k1: i64, k2: i64) -> f64 {
        let n1 = self.grid.n as i64 - 1;
        if k1.abs() > n1 || k2.abs() > n1 {
            return 0.0;
        }
        if self.grid.dim == 1 {
            self.values[(k1 + n1) as usize]
        } else {
            self.values[(k1 + n1) as usize * Self::side(&self.grid) + (k2 + n1) as usize]
        }
    }

    /// `h^d Σ a`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }
}

fn rescale_to_bound(values: &mut [f64], volume: f64, bound: f64) {
    let mass = volume * values.iter().sum::<f64>();
    if mass > bound {
        let s = bound / mass;
        values.iter_mut().for_each(|v| *v *= s);
    }
}

/// `∫_{c−h/2}^{c+h/2} a(|s|) ds` for a one-dimensional kernel.
pub(crate) fn cell_mass_1d(kernel: &Kernel, c: f64, h: f64) -> f64 {
    let (lo, hi) = (c - 0.5 * h, c + 0.5 * h);
    let rho = kernel.profile().rho();
    let mut breaks = vec![lo];
    for b in [-rho, 0.0, rho] {
        if b > lo && b < hi {
            breaks.push(b);
        }
    }
    // Geometric breaks keep wide cells from stepping over the peak.
    let mut b = rho.max(0.25);
    while b < hi.abs().max(lo.abs()) {
        for v in [-b, b] {
            if v > lo && v < hi {
                breaks.push(v);
            }
        }
        b *= 2.0;
    }
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let scale = kernel.eval_radial(c.abs().max(0.0)) * h;
    crate::quad::integrate_panels(|s| kernel.eval_radial(s.abs()), &breaks, 1e-14 * scale.max(1e-300))
}

const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

fn gl5_square(kernel: &Kernel, cx: f64, cy: f64, h: f64) -> f64 {
    let mut s = 0.0;
    for (xi, wi) in GL5_X.iter().zip(GL5_W) {
        for (yj, wj) in GL5_X.iter().zip(GL5_W) {
            let x = cx + 0.5 * h * xi;
            let y = cy + 0.5 * h * yj;
            s += wi * wj * kernel.eval_radial((x * x + y * y).sqrt());
        }
    }
    s * 0.25 * h * h
}

fn square_adapt(kernel: &Kernel, cx: f64, cy: f64, h: f64, whole: f64, depth: u32) -> f64 {
    let q = 0.25 * h;
    let parts = [(-q, -q), (-q, q), (q, -q), (q, q)].map(|(dx, dy)| gl5_square(kernel, cx + dx, cy + dy, 0.5 * h));
    let refined: f64 = parts.iter().sum();
    if depth >= 7 || (refined - whole).abs() <= 1e-12 * refined.abs() {
        return refined;
    }
    [(-q, -q), (-q, q), (q, -q), (q, q)]
        .iter()
        .zip(parts)
        .map(|(&(dx, dy), p)| square_adapt(kernel, cx + dx, cy + dy, 0.5 * h, p, depth + 1))
        .sum()
}

/// Mass of a two-dimensional kernel over the square cell centred at `(cx, cy)`.
pub(crate) fn cell_mass_2d(kernel: &Kernel, cx: f64, cy: f64, h: f64) -> f64 {
    let whole = gl5_square(kernel, cx, cy, h);
    square_adapt(kernel, cx, cy, h, whole, 0)
}

/// Reusable FFT plans and kernel spectrum for repeated convolutions on one grid.
pub struct ConvolutionEngine {
    grid: Grid,
    plen: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Kernel spectrum: length `P` in 1D; `(n+1) × P` column-major halves in 2D.
    spectrum: Vec<Complex64>,
    rows: Vec<Complex64>,
    cols: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for ConvolutionEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvolutionEngine").field("grid", &self.grid).finish()
    }
}

impl Clone for ConvolutionEngine {
    fn clone(&self) -> Self {
        let mut planner = FftPlanner::new();
        ConvolutionEngine {
            grid: self.grid,
            plen: self.plen,
            fwd: planner.plan_fft_forward(self.plen),
            inv: planner.plan_fft_inverse(self.plen),
            spectrum: self.spectrum.clone(),
            rows: self.rows.clone(),
            cols: self.cols.clone(),
            scratch: self.scratch.clone(),
        }
    }
}

impl ConvolutionEngine {
    pub fn new(kernel: &DiscreteKernel) -> Self {
        let grid = kernel.grid;
        let n = grid.n;
        let plen = 2 * n;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(plen);
        let inv = planner.plan_fft_inverse(plen);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let side = DiscreteKernel::side(&grid);
        let wrap = |k: usize| (k + plen - (n - 1)) % plen;
        let mut engine = ConvolutionEngine {
            grid,
            plen,
            fwd,
            inv,
            spectrum: Vec::new(),
            rows: Vec::new(),
            cols: Vec::new(),
            scratch: vec![Complex64::default(); scratch_len],
        };
        if grid.dim == 1 {
            let mut buf = vec![Complex64::default(); plen];
            for k in 0..side {
                buf[wrap(k)] = Complex64::new(kernel.values[k], 0.0);
            }
            engine.fwd.process_with_scratch(&mut buf, &mut engine.scratch);
            engine.spectrum = buf;
            engine.rows = vec![Complex64::default(); plen];
        } else {
            // Full 2D transform of the wrapped kernel, keeping columns 0..=n.
            let mut full = vec![Complex64::default(); plen * plen];
            for a in 0..side {
                for b in 0..side {
                    full[wrap(a) * plen + wrap(b)] = Complex64::new(kernel.values[a * side + b], 0.0);
                }
            }
            engine.fwd.process_with_scratch(&mut full, &mut engine.scratch);
            let mut spec = vec![Complex64::default(); (n + 1) * plen];
            for r in 0..plen {
                for c in 0..=n {
                    spec[c * plen + r] = full[r * plen + c];
                }
            }
            engine.fwd.process_with_scratch(&mut spec, &mut engine.scratch);
            engine.spectrum = spec;
            engine.rows = vec![Complex64::default(); n * plen];
            engine.cols = vec![Complex64::default(); (n + 1) * plen];
        }
        engine
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn convolve(&mut self, field: &Field) -> Result<Field> {
        if field.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        let mut out = vec![0.0; field.values.len()];
        self.convolve_into(&field.values, &mut out);
        Ok(Field {
            grid: self.grid,
            values: out,
        })
    }

    /// `out = h^d Σ_j a(x_i − x_j) u_j` for raw node arrays.
    pub fn convolve_into(&mut self, input: &[f64], out: &mut [f64]) {
        if self.grid.dim == 1 {
            self.convolve_1d(input, out)
        } else {
            self.convolve_2d(input, out)
        }
    }

    fn convolve_1d(&mut self, input: &[f64], out: &mut [f64]) {
        let n = self.grid.n;
        let buf = &mut self.rows;
        for (b, &v) in buf.iter_mut().zip(input) {
            *b = Complex64::new(v, 0.0);
        }
        buf[n..].fill(Complex64::default());
        self.fwd.process_with_scratch(buf, &mut self.scratch);
        for (b, k) in buf.iter_mut().zip(&self.spectrum) {
            *b *= k;
        }
        self.inv.process_with_scratch(buf, &mut self.scratch);
        let scale = self.grid.spacing() / self.plen as f64;
        for (o, b) in out.iter_mut().zip(buf.iter()) {
            *o = b.re * scale;
        }
    }

    fn convolve_2d(&mut self, input: &[f64], out: &mut [f64]) {
        let n = self.grid.n;
        let p = self.plen;
        // Row transforms, two real rows packed per complex transform.
        let rows = &mut self.rows;
        for pair in 0..n / 2 {
            let (ra, rb) = (2 * pair, 2 * pair + 1);
            let buf = &mut rows[ra * p..(ra + 1) * p];
            for j in 0..n {
                buf[j] = Complex64::new(input[ra * n + j], input[rb * n + j]);
            }
            buf[n..].fill(Complex64::default());
        }
        for pair in 0..n / 2 {
            let ra = 2 * pair;
            self.fwd.process_with_scratch(&mut rows[ra * p..(ra + 1) * p], &mut self.scratch);
        }
        // Unpack into columns 0..=n of the half spectrum (column-major).
        let cols = &mut self.cols;
        cols.fill(Complex64::default());
        let half_i = Complex64::new(0.0, -0.5);
        for pair in 0..n / 2 {
            let (ra, rb) = (2 * pair, 2 * pair + 1);
            let z = &rows[ra * p..(ra + 1) * p];
            for c in 0..=n {
                let zk = z[c];
                let zc = z[(p - c) % p].conj();
                cols[c * p + ra] = (zk + zc) * 0.5;
                cols[c * p + rb] = (zk - zc) * half_i;
            }
        }
        self.fwd.process_with_scratch(cols, &mut self.scratch);
        for (v, k) in cols.iter_mut().zip(&self.spectrum) {
            *v *= k;
        }
        self.inv.process_with_scratch(cols, &mut self.scratch);
        // Rebuild full row spectra of the real output rows 0..n and invert in pairs.
        for pair in 0..n / 2 {
            let (ra, rb) = (2 * pair, 2 * pair + 1);
            let buf = &mut rows[ra * p..(ra + 1) * p];
            for c in 0..=n {
                let a = cols[c * p + ra];
                let b = cols[c * p + rb];
                buf[c] = a + Complex64::new(-b.im, b.re);
                if c > 0 && c < n {
                    let (ac, bc) = (a.conj(), b.conj());
                    buf[p - c] = ac + Complex64::new(-bc.im, bc.re);
                }
            }
        }
        for pair in 0..n / 2 {
            let ra = 2 * pair;
            self.inv.process_with_scratch(&mut rows[ra * p..(ra + 1) * p], &mut self.scratch);
        }
        let h = self.grid.spacing();
        let scale = h * h / (p * p) as f64;
        for pair in 0..n / 2 {
            let (ra, rb) = (2 * pair, 2 * pair + 1);
            let buf = &rows[ra * p..(ra + 1) * p];
            for j in 0..n {
                out[ra * n + j] = buf[j].re * scale;
                out[rb * n + j] = buf[j].im * scale;
            }
        }
    }
}

/// A batch of one-dimensional kernels `K_r`, `r = 0..n`, applied to one
/// line source: `out[r][i] = Σ_j e[j] K_r[i − j]` (no spacing factor).
/// Two sources are processed per pass by packing them as real and
/// imaginary parts.
pub struct LineBatchConvolver {
    n: usize,
    plen: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    spectra: Vec<Complex64>,
    source: Vec<Complex64>,
    work: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl LineBatchConvolver {
    /// `kernels[r]` has length `2n−1` and holds offsets `−(n−1)..=(n−1)`.
    pub fn new(n: usize, kernels: &[Vec<f64>]) -> Self {
        let plen = 2 * n;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(plen);
        let inv = planner.plan_fft_inverse(plen);
        let mut scratch = vec![Complex64::default(); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
        let mut spectra = vec![Complex64::default(); kernels.len() * plen];
        for (r, k) in kernels.iter().enumerate() {
            let buf = &mut spectra[r * plen..(r + 1) * plen];
            for (i, &v) in k.iter().enumerate() {
                buf[(i + plen - (n - 1)) % plen] = Complex64::new(v, 0.0);
            }
        }
        fwd.process_with_scratch(&mut spectra, &mut scratch);
        LineBatchConvolver {
            n,
            plen,
            fwd,
            inv,
            spectra,
            source: vec![Complex64::default(); plen],
            work: vec![Complex64::default(); kernels.len() * plen],
            scratch,
        }
    }

    /// Applies the batch to two sources at once; outputs are `rows × n`.
    pub fn apply_pair(&mut self, e1: &[f64], e2: &[f64], out1: &mut [f64], out2: &mut [f64]) {
        let (n, p) = (self.n, self.plen);
        for j in 0..p {
            self.source[j] = if j < n { Complex64::new(e1[j], e2[j]) } else { Complex64::default() };
        }
        self.fwd.process_with_scratch(&mut self.source, &mut self.scratch);
        let rows = self.spectra.len() / p;
        for r in 0..rows {
            for j in 0..p {
                self.work[r * p + j] = self.source[j] * self.spectra[r * p + j];
            }
        }
        self.inv.process_with_scratch(&mut self.work, &mut self.scratch);
        let scale = 1.0 / p as f64;
        for r in 0..rows {
            for i in 0..n {
                let v = self.work[r * p + i];
                out1[r * n + i] = v.re * scale;
                out2[r * n + i] = v.im * scale;
            }
        }
    }
}

/// How a field continues outside the computational domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Exterior {
    /// Zero outside the domain.
    Zero,
    /// A fixed constant outside the domain.
    Constant(f64),
    /// Monotone data: the low edges (left in 1D, left and bottom in 2D) are
    /// continued by their edge values, the high edges by zero.
    Plateau,
}

/// `a ∗ u` for a continuous kernel on a grid, including the contribution of
/// the exterior continuation of `u`.
pub struct KernelOperator {
    grid: Grid,
    exterior: Exterior,
    engine: ConvolutionEngine,
    window_mass: f64,
    /// Plateau only: `T_i` = kernel mass with first coordinate beyond `(i+½)h`.
    edge_tail: Vec<f64>,
    strips: Option<LineBatchConvolver>,
    /// 2D corner weights `Q[i1][i2]`.
    corner: Vec<f64>,
    shifted: Vec<f64>,
    strip_left: Vec<f64>,
    strip_bottom: Vec<f64>,
}

impl std::fmt::Debug for KernelOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelOperator")
            .field("grid", &self.grid)
            .field("exterior", &self.exterior)
            .finish()
    }
}

impl KernelOperator {
    pub fn new(kernel: &Kernel, grid: &Grid, exterior: Exterior) -> Result<Self> {
        let dk = DiscreteKernel::from_kernel(kernel, grid)?;
        let engine = ConvolutionEngine::new(&dk);
        let n = grid.n;
        let h = grid.spacing();
        let mut op = KernelOperator {
            grid: *grid,
            exterior,
            engine,
            window_mass: dk.mass(),
            edge_tail: Vec::new(),
            strips: None,
            corner: Vec::new(),
            shifted: vec![0.0; grid.len()],
            strip_left: Vec::new(),
            strip_bottom: Vec::new(),
        };
        if exterior != Exterior::Plateau {
            return Ok(op);
        }
        let reach = (n as f64 - 0.5) * h;
        if grid.dim == 1 {
            // T((i+½)h) = Σ_{m>i} cell masses + mass beyond the window.
            let mut tail = vec![0.0; n];
            let mut acc = kernel.tail_mass_1d(reach);
            for i in (0..n).rev() {
                tail[i] = acc;
                acc += h * dk.at(i as i64, 0);
            }
            op.edge_tail = tail;
            return Ok(op);
        }
        let side = DiscreteKernel::side(grid);
        let cell = |m: usize, k: usize| h * h * dk.values[(n - 1 + m) * side + k];
        // Mass beyond the window in the first offset, per cell of the second.
        let beyond = strip_beyond_window(kernel, reach, h, n);
        // Row i1 holds Σ_{m ≥ i1+1} over the first offset.
        let mut kernels = vec![vec![0.0; side]; n];
        for k in 0..side {
            let mut acc = beyond[k];
            for i1 in (0..n).rev() {
                kernels[i1][k] = acc;
                if i1 >= 1 {
                    acc += cell(i1, k);
                }
            }
        }
        let corner_far = corner_beyond_window(kernel, reach);
        // Suffix sums over m1 ≥ p, m2 ≥ q of cell masses, plus exterior parts.
        let mut suffix = vec![0.0; (n + 1) * (n + 1)];
        for p in (1..n).rev() {
            for q in (1..n).rev() {
                suffix[p * (n + 1) + q] = cell(p, n - 1 + q) + suffix[(p + 1) * (n + 1) + q]
                    + suffix[p * (n + 1) + q + 1]
                    - suffix[(p + 1) * (n + 1) + q + 1];
            }
        }
        let mut beyond_suffix = vec![0.0; n + 1];
        for q in (1..n).rev() {
            beyond_suffix[q] = beyond_suffix[q + 1] + beyond[n - 1 + q];
        }
        let mut corner = vec![0.0; n * n];
        for i1 in 0..n {
            for i2 in 0..n {
                let (p, q) = (i1 + 1, i2 + 1);
                corner[i1 * n + i2] = suffix[p * (n + 1) + q] + beyond_suffix[q] + beyond_suffix[p] + corner_far;
            }
        }
        op.edge_tail = kernels.iter().map(|row| row.iter().sum()).collect();
        op.strips = Some(LineBatchConvolver::new(n, &kernels));
        op.corner = corner;
        op.strip_left = vec![0.0; n * n];
        op.strip_bottom = vec![0.0; n * n];
        Ok(op)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn exterior(&self) -> Exterior {
        self.exterior
    }

    /// Discrete kernel mass inside the offset window.
    pub fn window_mass(&self) -> f64 {
        self.window_mass
    }

    /// For the plateau exterior, the kernel mass whose first coordinate
    /// exceeds `(i+½)h`, for `i = 0..n`; empty otherwise.
    pub fn edge_tail(&self) -> &[f64] {
        &self.edge_tail
    }

    pub fn apply(&mut self, u: &Field) -> Result<Field> {
        if u.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        let mut out = vec![0.0; u.values.len()];
        self.apply_into(&u.values, &mut out);
        Ok(Field { grid: self.grid, values: out })
    }

    pub fn apply_into(&mut self, u: &[f64], out: &mut [f64]) {
        match self.exterior {
            Exterior::Zero => self.engine.convolve_into(u, out),
            Exterior::Constant(c) => {
                for (s, v) in self.shifted.iter_mut().zip(u) {
                    *s = v - c;
                }
                self.engine.convolve_into(&self.shifted, out);
                out.iter_mut().for_each(|o| *o += c);
            }
            Exterior::Plateau => {
                self.engine.convolve_into(u, out);
                let n = self.grid.n;
                if self.grid.dim == 1 {
                    let edge = u[0];
                    for (o, t) in out.iter_mut().zip(&self.edge_tail) {
                        *o += edge * t;
                    }
                    return;
                }
                let left: Vec<f64> = u[..n].to_vec();
                let bottom: Vec<f64> = (0..n).map(|i| u[i * n]).collect();
                let strips = self.strips.as_mut().expect("plateau strips");
                strips.apply_pair(&left, &bottom, &mut self.strip_left, &mut self.strip_bottom);
                let c = u[0];
                for i1 in 0..n {
                    for i2 in 0..n {
                        out[i1 * n + i2] += self.strip_left[i1 * n + i2]
                            + self.strip_bottom[i2 * n + i1]
                            + c * self.corner[i1 * n + i2];
                    }
                }
            }
        }
    }
}

/// `∫_{s1 > A} ∫_{cell k} a(|s|) ds2 ds1` for offset cells `k = −(n−1)..=(n−1)`.
fn strip_beyond_window(kernel: &Kernel, a: f64, h: f64, n: usize) -> Vec<f64> {
    let g = |s2: f64| {
        crate::quad::integrate_to_infinity(|s1| kernel.eval_radial((s1 * s1 + s2 * s2).sqrt()), a, a.max(1.0), 1e-16)
    };
    let mut half = vec![0.0; n];
    for (k, slot) in half.iter_mut().enumerate() {
        let c = k as f64 * h;
        *slot = GL5_X
            .iter()
            .zip(GL5_W)
            .map(|(x, w)| w * g(c + 0.5 * h * x))
            .sum::<f64>()
            * 0.5
            * h;
    }
    let mut out = vec![0.0; 2 * n - 1];
    for k in 0..n {
        out[n - 1 + k] = half[k];
        out[n - 1 - k] = half[k];
    }
    out
}

/// `∫_{s1 > A, s2 > A} a(|s|) ds`.
fn corner_beyond_window(kernel: &Kernel, a: f64) -> f64 {
    let g = |s2: f64| {
        crate::quad::integrate_to_infinity(|s1| kernel.eval_radial((s1 * s1 + s2 * s2).sqrt()), a, a.max(1.0), 1e-17)
    };
    crate::quad::integrate_to_infinity(g, a, a.max(1.0), 1e-17)
}

/// Linear convolution through the FFT, `h^d`-scaled.
pub fn convolve(kernel: &DiscreteKernel, field: &Field) -> Result<Field> {
    if kernel.grid != field.grid {
        return Err(Error::GridMismatch);
    }
    ConvolutionEngine::new(kernel).convolve(field)
}

/// Nested-sum reference for [`convolve`]; refuses grids above [`DIRECT_LIMIT`] nodes.
pub fn convolve_direct(kernel: &DiscreteKernel, field: &Field) -> Result<Field> {
    if kernel.grid != field.grid {
        return Err(Error::GridMismatch);
    }
    let g = field.grid;
    if g.len() > DIRECT_LIMIT {
        return Err(Error::TooLarge {
            points: g.len(),
            limit: DIRECT_LIMIT,
        });
    }
    let n = g.n as i64;
    let vol = g.cell_volume();
    let u = &field.values;
    let values = if g.dim == 1 {
        (0..n)
            .map(|i| vol * (0..n).map(|j| kernel.at(i - j, 0) * u[j as usize]).sum::<f64>())
            .collect()
    } else {
        let mut out = vec![0.0; g.len()];
        for i1 in 0..n {
            for i2 in 0..n {
                let mut s = 0.0;
                for j1 in 0..n {
                    for j2 in 0..n {
                        s += kernel.at(i1 - j1, i2 - j2) * u[(j1 * n + j2) as usize];
                    }
                }
                out[(i1 * n + i2) as usize] = vol * s;
            }
        }
        out
    };
    Ok(Field { grid: g, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tailprofiles::{build_profile, normalize_kernel, Family};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_construction() {
        let g = make_grid(1, 100.0, 1024).unwrap();
        assert_eq!(g.spacing(), 0.1953125);
        assert_eq!(make_grid(2, 50.0, 256).unwrap().len(), 65536);
        assert!(matches!(make_grid(1, 10.0, 100), Err(Error::InvalidSize(_))));
        assert!(make_grid(1, 10.0, 8).is_err());
        assert!(make_grid(3, 10.0, 16).is_err());
        assert_eq!(g.coord(g.center()), 0.0);
    }

    fn delta(grid: Grid) -> DiscreteKernel {
        let mut f = Field::zeros(grid);
        let c = grid.center();
        let idx = if grid.dim() == 1 { c } else { c * grid.n() + c };
        f.values_mut()[idx] = 1.0 / grid.cell_volume();
        DiscreteKernel::from_field(&f)
    }

    #[test]
    fn delta_kernel_is_identity() {
        for dim in [1, 2] {
            let g = make_grid(dim, 8.0, 32).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let u = Field::from_values(g, (0..g.len()).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let out = convolve(&delta(g), &u).unwrap();
            for (a, b) in out.values().iter().zip(u.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_kernel_on_box_is_symmetric() {
        let g = make_grid(1, 10.0, 64).unwrap();
        let e = build_profile(Family::ExponentialControl { rate: 1.0 }).unwrap();
        let k = DiscreteKernel::from_kernel(&normalize_kernel(&e, 1).unwrap(), &g).unwrap();
        let u = sample_field(&g, |x| if x[0].abs() <= 2.0 { 1.0 } else { 0.0 });
        let out = convolve(&k, &u).unwrap();
        let c = g.center();
        for j in 1..c {
            assert!((out.values()[c + j] - out.values()[c - j]).abs() < 1e-14);
        }
        let peak = out.values().iter().cloned().fold(0.0, f64::max);
        assert_eq!(out.values()[c], peak);
    }

    #[test]
    fn fft_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in [1, 2] {
            let n = if dim == 1 { 64 } else { 32 };
            let g = make_grid(dim, 5.0, n).unwrap();
            let side = DiscreteKernel::side(&g).pow(dim);
            let k = DiscreteKernel::from_values(g, (0..side).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let u = Field::from_values(g, (0..g.len()).map(|_| rng.gen::<f64>() - 0.3).collect()).unwrap();
            let a = convolve(&k, &u).unwrap();
            let b = convolve_direct(&k, &u).unwrap();
            let scale = b.sup_norm();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn direct_guard_and_mismatch() {
        let g = make_grid(2, 5.0, 256).unwrap();
        let k = DiscreteKernel::from_values(g, vec![0.0; 511 * 511]).unwrap();
        assert!(matches!(convolve_direct(&k, &Field::zeros(g)), Err(Error::TooLarge { .. })));
        let g2 = make_grid(2, 6.0, 256).unwrap();
        assert_eq!(convolve(&k, &Field::zeros(g2)), Err(Error::GridMismatch));
    }

    #[test]
    fn cell_averaged_kernels_have_unit_mass() {
        let p = build_profile(Family::Polynomial { m: 1.0, mu: 1.0, d: 1 }).unwrap();
        let k = normalize_kernel(&p, 1).unwrap();
        let g = make_grid(1, 1000.0, 4096).unwrap();
        let dk = DiscreteKernel::from_kernel(&k, &g).unwrap();
        // Mass beyond the window is 2·∫_{R}^∞ (1+s)^{-2}/2 ds = 1/(1+R).
        let reach = 4095.5 * g.spacing();
        assert!((dk.mass() - (1.0 - 1.0 / (1.0 + reach))).abs() < 1e-10);
        let e = build_profile(Family::ExponentialControl { rate: 1.0 }).unwrap();
        let k2 = normalize_kernel(&e, 2).unwrap();
        let g2 = make_grid(2, 20.0, 64).unwrap();
        let dk2 = DiscreteKernel::from_kernel(&k2, &g2).unwrap();
        assert!((dk2.mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn orthant_integral_of_constant_density() {
        let g = make_grid(1, 8.0, 16).unwrap();
        let u = sample_orthant_integral(&g, |_| 1.0);
        assert!((u.values()[0] - 15.0).abs() < 1e-12);
        assert_eq!(u.values()[15], 0.0);
        let g2 = make_grid(2, 8.0, 16).unwrap();
        let u2 = sample_orthant_integral(&g2, |_| 1.0);
        assert!((u2.at(0, 0) - 225.0).abs() < 1e-12);
        assert!((u2.at(0, 14) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_and_csv() {
        let g = make_grid(2, 8.0, 16).unwrap();
        let u = sample_field(&g, |x| x[0] + 2.0 * x[1]);
        assert!((u.interpolate(&[0.3, -1.7]) - (0.3 - 3.4)).abs() < 1e-12);
        let mut buf = Vec::new();
        make_grid(1, 8.0, 16)
            .map(|g| sample_field(&g, |x| x[0]))
            .unwrap()
            .write_csv(&mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,value\n-8,-8\n"));
        assert_eq!(text.lines().count(), 17);
    }

    #[test]
    fn plateau_exterior_preserves_constants_near_low_edges() {
        let p = build_profile(Family::Polynomial { m: 1.0, mu: 1.0, d: 2 }).unwrap();
        let k = normalize_kernel(&p, 2).unwrap();
        let g = make_grid(2, 16.0, 32).unwrap();
        let mut op = KernelOperator::new(&k, &g, Exterior::Plateau).unwrap();
        let out = op.apply(&Field::constant(g, 1.0)).unwrap();
        assert!(out.max() <= 1.0 + 1e-12);
        // Only the mass beyond the high edges is missing at the low corner.
        let missing = 1.0 - out.at(0, 0);
        assert!(missing > 0.0 && missing < 0.05);
        assert!(out.at(0, 0) > out.at(31, 31));

        let p1 = build_profile(Family::Polynomial { m: 1.0, mu: 1.0, d: 1 }).unwrap();
        let k1 = normalize_kernel(&p1, 1).unwrap();
        let g1 = make_grid(1, 50.0, 64).unwrap();
        let mut op1 = KernelOperator::new(&k1, &g1, Exterior::Plateau).unwrap();
        let out = op1.apply(&Field::constant(g1, 1.0)).unwrap();
        // Missing mass from node x is the right tail beyond the edge: 1/(2(1+L−x+h/2)).
        let h = g1.spacing();
        for i in [0usize, 20, 63] {
            let gap = 50.0 - g1.coord(i) - 0.5 * h;
            assert!((out.values()[i] - (1.0 - 0.5 / (1.0 + gap))).abs() < 1e-10, "{i}");
        }
        let mut opc = KernelOperator::new(&k1, &g1, Exterior::Constant(0.7)).unwrap();
        let out = opc.apply(&Field::constant(g1, 0.7)).unwrap();
        assert!(out.values().iter().all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn plateau_exterior_matches_explicit_extension() {
        let e = build_profile(Family::ExponentialControl { rate: 0.7 }).unwrap();
        let k = normalize_kernel(&e, 2).unwrap();
        let small = make_grid(2, 8.0, 16).unwrap();
        let big = make_grid(2, 64.0, 128).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..small.len()).map(|_| rng.gen::<f64>()).collect();
        // Small node i sits at big node i + 56.
        let off = 56usize;
        let mut ub = vec![0.0; big.len()];
        for i in 0..128usize {
            for j in 0..128usize {
                if i >= off + 16 || j >= off + 16 {
                    continue;
                }
                let si = i.saturating_sub(off);
                let sj = j.saturating_sub(off);
                ub[i * 128 + j] = u[si * 16 + sj];
            }
        }
        let mut op = KernelOperator::new(&k, &small, Exterior::Plateau).unwrap();
        let a = op.apply(&Field::from_values(small, u).unwrap()).unwrap();
        let mut opb = KernelOperator::new(&k, &big, Exterior::Zero).unwrap();
        let b = opb.apply(&Field::from_values(big, ub).unwrap()).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert!((a.at(i, j) - b.at(i + off, j + off)).abs() < 1e-10, "{i} {j}");
            }
        }
    }
}
