//! Backstepping kernels on the triangle `0 <= y <= x <= L`.
//!
//! The kernel `k` solves `k_xx - k_yy = alpha k`, `k_y(x, 0) = 0`,
//! `k(x, x) = -alpha x / 2`. Writing `K = k + alpha x / 2` turns this into a
//! wave equation on the whole square with zero Cauchy data at `x = 0`,
//! Neumann edges and the source `-(alpha^2/2) x` restricted to the triangle.
//! `x` plays the role of time; the solver marches it with a leapfrog step on
//! the characteristic grid `h_x = h_y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleGrid {
    pub l: f64,
    pub n: usize,
}

impl TriangleGrid {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!("need N >= 3 nodes, got {n}")));
        }
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidParameter(format!("domain size {l} must be positive")));
        }
        Ok(Self { l, n })
    }

    /// Grid with a prescribed spacing; kernels solved with the same `h` agree
    /// bitwise on shared nodes.
    pub fn with_spacing(h: f64, n: usize) -> Result<Self> {
        Self::new(h * (n - 1) as f64, n)
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.l / (self.n - 1) as f64
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn node_count(&self) -> usize {
        self.n * (self.n + 1) / 2
    }
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Discrete kernel on a triangle grid together with the traces the feedback
/// and the growth diagnostics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSolution {
    grid: TriangleGrid,
    alpha: f64,
    /// Packed rows: `values[i(i+1)/2 + j] = k(x_i, y_j)`.
    values: Vec<f64>,
    diag_trace: Vec<f64>,
    top_dx: Vec<f64>,
    per_x_h1: Vec<f64>,
    /// Largest `|K|` found above the diagonal by the square solve.
    outside_max: f64,
}

impl KernelSolution {
    /// Wraps packed triangle values and derives the traces from them.
    pub fn from_values(grid: TriangleGrid, alpha: f64, values: Vec<f64>) -> Result<Self> {
        Self::from_values_with(grid, alpha, values, 0.0, Exec::default())
    }

    fn from_values_with(
        grid: TriangleGrid,
        alpha: f64,
        values: Vec<f64>,
        outside_max: f64,
        exec: Exec,
    ) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::DimensionMismatch {
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        let mut s = Self {
            grid,
            alpha,
            values,
            diag_trace: Vec::new(),
            top_dx: Vec::new(),
            per_x_h1: Vec::new(),
            outside_max,
        };
        s.diag_trace = (0..grid.n).map(|i| s.at(i, i)).collect();
        s.top_dx = (0..grid.n).map(|j| s.top_dx_at(j)).collect();
        s.per_x_h1 = exec.map(grid.n, |i| s.h1_slice(i));
        Ok(s)
    }

    pub fn grid(&self) -> TriangleGrid {
        self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i);
        self.values[tri(i, j)]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[tri(i, 0)..=tri(i, i)]
    }

    pub fn diag_trace(&self) -> &[f64] {
        &self.diag_trace
    }

    /// `d/dx k(L, y_j)`.
    pub fn top_slice_x_derivative(&self) -> &[f64] {
        &self.top_dx
    }

    /// `int_0^{x_i} (k^2 + |grad k|^2) dy` for every slice.
    pub fn per_x_h1_norms(&self) -> &[f64] {
        &self.per_x_h1
    }

    pub fn outside_max(&self) -> f64 {
        self.outside_max
    }

    pub fn inside_max(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `max_i |k(x_i, x_i) + alpha x_i / 2|`.
    pub fn diag_error(&self) -> f64 {
        self.diag_trace
            .iter()
            .enumerate()
            .map(|(i, v)| (v + 0.5 * self.alpha * self.grid.x(i)).abs())
            .fold(0.0, f64::max)
    }

    /// `||k||_{H^1(D_L)}` by iterated trapezoid.
    pub fn h1_norm(&self) -> f64 {
        quad::trapezoid(&self.per_x_h1, self.grid.h()).sqrt()
    }

    /// `||k||_{L^2(D_L)}` by iterated trapezoid; this is the quantity that
    /// bounds the discrete transform.
    pub fn l2_norm(&self) -> f64 {
        let h = self.grid.h();
        let rows: Vec<f64> = (0..self.grid.n)
            .map(|i| {
                let r = self.row(i);
                if r.len() < 2 {
                    0.0
                } else {
                    quad::inner(r, r, h)
                }
            })
            .collect();
        quad::trapezoid(&rows, h).sqrt()
    }

    pub fn negated(&self) -> Self {
        Self {
            grid: self.grid,
            alpha: -self.alpha,
            values: self.values.iter().map(|v| -v).collect(),
            diag_trace: self.diag_trace.iter().map(|v| -v).collect(),
            top_dx: self.top_dx.iter().map(|v| -v).collect(),
            per_x_h1: self.per_x_h1.clone(),
            outside_max: self.outside_max,
        }
    }

    fn ky(&self, i: usize, j: usize) -> f64 {
        let h = self.grid.h();
        if j == 0 || i == 0 {
            0.0
        } else if j < i {
            (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * h)
        } else if i >= 2 {
            (3.0 * self.at(i, i) - 4.0 * self.at(i, i - 1) + self.at(i, i - 2)) / (2.0 * h)
        } else {
            (self.at(1, 1) - self.at(1, 0)) / h
        }
    }

    fn kx(&self, i: usize, j: usize) -> f64 {
        let n = self.grid.n;
        if j == i {
            // Tangential derivative along the diagonal is -alpha/2.
            -0.5 * self.alpha - self.ky(i, i)
        } else if i + 1 < n {
            (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * self.grid.h())
        } else {
            self.top_dx_at(j)
        }
    }

    fn top_dx_at(&self, j: usize) -> f64 {
        let n = self.grid.n;
        let h = self.grid.h();
        let last = n - 1;
        let backward = |j: usize| {
            (3.0 * self.at(last, j) - 4.0 * self.at(last - 1, j) + self.at(last - 2, j)) / (2.0 * h)
        };
        if j + 2 <= last {
            backward(j)
        } else if last >= 4 {
            // Nodes j = N-2, N-1 lack two lower slices inside the triangle;
            // extrapolate quadratically in y.
            let b = |m: usize| backward(last - 2 - m);
            let s = (j + 2 - last) as f64;
            let (f0, f1, f2) = (b(0), b(1), b(2));
            f0 + s * (f0 - f1) + 0.5 * s * (s + 1.0) * (f0 - 2.0 * f1 + f2)
        } else {
            -0.5 * self.alpha
        }
    }

    fn h1_slice(&self, i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        let dens: Vec<f64> = (0..=i)
            .map(|j| {
                let k = self.at(i, j);
                let kx = self.kx(i, j);
                let ky = self.ky(i, j);
                k * k + kx * kx + ky * ky
            })
            .collect();
        quad::trapezoid(&dens, self.grid.h())
    }

    /// Interpolated `y -> k(x_i, y)` at the x-node `i`, cubic where four
    /// inside nodes exist (even reflection through `y = 0`).
    fn interp_y(&self, i: usize, y: f64) -> f64 {
        if i == 0 {
            return self.at(0, 0);
        }
        let h = self.grid.h();
        let s = y / h;
        let hi = i as isize;
        let base = (s.floor() as isize - 1).clamp(-hi, (hi - 3).max(-hi));
        let top = (base + 3).min(hi);
        let mut acc = 0.0;
        let nodes: Vec<isize> = (base..=top).collect();
        for (a, &ja) in nodes.iter().enumerate() {
            let mut w = 1.0;
            for (b, &jb) in nodes.iter().enumerate() {
                if a != b {
                    w *= (s - jb as f64) / (ja - jb) as f64;
                }
            }
            acc += w * self.at(i, ja.unsigned_abs());
        }
        acc
    }

    fn x_stencil(&self, x: f64) -> (Vec<usize>, f64) {
        let n = self.grid.n;
        let s = x / self.grid.h();
        let base = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
        ((base..base + 4).collect(), s)
    }

    /// `k(x, y)` at an arbitrary point of the triangle by tensor cubic
    /// Lagrange interpolation; exact on grid nodes.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (nodes, s) = self.x_stencil(x);
        let mut acc = 0.0;
        for (a, &ia) in nodes.iter().enumerate() {
            let mut w = 1.0;
            for (b, &ib) in nodes.iter().enumerate() {
                if a != b {
                    w *= (s - ib as f64) / (ia as f64 - ib as f64);
                }
            }
            if w != 0.0 {
                acc += w * self.interp_y(ia, y);
            }
        }
        acc
    }

    /// `d/dx k(x, y)` from the same interpolant.
    pub fn eval_dx(&self, x: f64, y: f64) -> f64 {
        let (nodes, s) = self.x_stencil(x);
        let h = self.grid.h();
        let mut acc = 0.0;
        for (a, &ia) in nodes.iter().enumerate() {
            let mut dw = 0.0;
            for (c, &ic) in nodes.iter().enumerate() {
                if c == a {
                    continue;
                }
                let mut term = 1.0 / (ia as f64 - ic as f64);
                for (b, &ib) in nodes.iter().enumerate() {
                    if b != a && b != c {
                        term *= (s - ib as f64) / (ia as f64 - ib as f64);
                    }
                }
                dw += term;
            }
            acc += dw * self.interp_y(ia, y);
        }
        acc / h
    }

    /// Samples this kernel on another triangle grid with `L' <= L`.
    pub fn resample(&self, grid: TriangleGrid) -> Result<Self> {
        if grid.l > self.grid.l * (1.0 + 1e-12) {
            return Err(Error::GridMismatch(format!(
                "cannot restrict a kernel on L = {} to L = {}",
                self.grid.l, grid.l
            )));
        }
        let h = grid.h();
        let mut values = Vec::with_capacity(grid.node_count());
        for i in 0..grid.n {
            let x = (i as f64 * h).min(self.grid.l);
            for j in 0..=i {
                values.push(self.eval(x, (j as f64 * h).min(x)));
            }
        }
        Self::from_values(grid, self.alpha, values)
    }

    /// Residual of the interior equation measured with the `2h` stencil on
    /// nodes whose stencil stays inside the triangle; returns the RMS.
    pub fn residual_rms(&self) -> f64 {
        let n = self.grid.n;
        let h = self.grid.h();
        let a = self.alpha;
        let big = |i: usize, j: isize| self.at(i, j.unsigned_abs()) + 0.5 * a * self.grid.x(i);
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 2..n.saturating_sub(2) {
            for j in 0..=(i - 2) {
                let jj = j as isize;
                let c = big(i, jj);
                let dxx = (big(i + 2, jj) - 2.0 * c + big(i - 2, jj)) / (4.0 * h * h);
                let dyy = (big(i, jj + 2) - 2.0 * c + big(i, jj - 2)) / (4.0 * h * h);
                let r = dxx - dyy - a * c + 0.5 * a * a * self.grid.x(i);
                sum += r * r;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            (sum / count as f64).sqrt()
        }
    }

    /// Discrete equation residual of the marching scheme itself (zero up to
    /// round-off away from the diagonal-centred stencils).
    pub fn scheme_residual_max(&self) -> f64 {
        let n = self.grid.n;
        let h = self.grid.h();
        let a = self.alpha;
        let big = |i: usize, j: isize| self.at(i, j.unsigned_abs()) + 0.5 * a * self.grid.x(i);
        let mut worst: f64 = 0.0;
        for i in 1..n - 1 {
            for j in 0..i {
                let jj = j as isize;
                let c = big(i, jj);
                let r = (big(i + 1, jj) - 2.0 * c + big(i - 1, jj)) / (h * h)
                    - (big(i, jj + 1) - 2.0 * c + big(i, jj - 1)) / (h * h)
                    - a * c
                    + 0.5 * a * a * self.grid.x(i);
                worst = worst.max(r.abs());
            }
        }
        worst
    }
}

/// Envelope of the slice norm from the square-domain energy estimate,
/// used only to detect a runaway march.
fn slice_envelope(alpha: f64, l: f64) -> f64 {
    let f_norm = 0.25 * alpha * alpha * l * l;
    let rate = (6.0 * alpha.max(0.0).sqrt()).max(4.0) * l;
    ((1.0 + l * l) * rate.exp()).sqrt() * f_norm
}

pub fn solve_kernel(alpha: f64, l: f64, n: usize) -> Result<KernelSolution> {
    solve_on(TriangleGrid::new(l, n)?, alpha, Exec::default())
}

pub fn solve_kernel_with(alpha: f64, l: f64, n: usize, exec: Exec) -> Result<KernelSolution> {
    solve_on(TriangleGrid::new(l, n)?, alpha, exec)
}

/// Marches the square problem for `K` and keeps `k` on the triangle.
pub fn solve_on(grid: TriangleGrid, alpha: f64, exec: Exec) -> Result<KernelSolution> {
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha = {alpha}")));
    }
    let n = grid.n;
    let h = grid.h();
    let h2 = h * h;
    let src = |x: f64| -0.5 * alpha * alpha * x;
    let envelope = slice_envelope(alpha, grid.l);

    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    // First step from zero Cauchy data: only the corner node sees the
    // source through the reflected cone, K(h, 0) = -alpha^2 h^3 / 16.
    cur[0] = -alpha * alpha * h * h2 / 16.0;

    let mut values = vec![0.0; grid.node_count()];
    values[tri(1, 0)] = cur[0] - 0.5 * alpha * h;
    values[tri(1, 1)] = cur[1] - 0.5 * alpha * h;
    let mut outside_max: f64 = cur[2..].iter().fold(0.0, |m, v| m.max(v.abs()));

    let mut next = vec![0.0; n];
    for i in 1..n - 1 {
        let x = grid.x(i);
        for j in 0..n {
            let up = if j + 1 < n { cur[j + 1] } else { cur[n - 2] };
            let down = if j > 0 { cur[j - 1] } else { cur[1] };
            next[j] = if j < i {
                up + down - prev[j] + h2 * (alpha * cur[j] + src(x))
            } else if j == i {
                // Only the lower half of the characteristic diamond lies in
                // the triangle. The source term is exact for the linear
                // source; K vanishes on the diagonal and is linear across the
                // half-diamond, so alpha*K integrates to the mean of the two
                // off-diagonal corners, one of which is the unknown.
                let c = alpha * h2 / 8.0;
                (up + down - prev[j] + c * cur[j - 1] + 0.5 * h2 * src(x + 0.25 * h)) / (1.0 - c)
            } else {
                up + down - prev[j] + h2 * alpha * cur[j]
            };
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);

        let row = i + 1;
        let xr = grid.x(row);
        let mut norm2 = 0.0;
        for j in 0..n {
            norm2 += cur[j] * cur[j];
            if j <= row {
                values[tri(row, j)] = cur[j] - 0.5 * alpha * xr;
            } else {
                outside_max = outside_max.max(cur[j].abs());
            }
        }
        let norm = (norm2 * h).sqrt();
        if !norm.is_finite() || norm > 1e3 * envelope + f64::MIN_POSITIVE {
            return Err(Error::Instability {
                slice: row,
                norm,
                envelope,
            });
        }
    }
    KernelSolution::from_values_with(grid, alpha, values, outside_max, exec)
}

/// `k_lambda^sigma`, the forward transform kernel.
pub fn forward_kernel(lambda: f64, sigma: f64, l: f64, n: usize) -> Result<KernelSolution> {
    check_gain(lambda, sigma)?;
    solve_kernel(lambda / sigma, l, n)
}

/// `l_lambda^sigma = -k_{-lambda}^sigma`, the inverse transform kernel.
pub fn inverse_kernel(lambda: f64, sigma: f64, l: f64, n: usize) -> Result<KernelSolution> {
    check_gain(lambda, sigma)?;
    Ok(solve_kernel(-lambda / sigma, l, n)?.negated())
}

fn check_gain(lambda: f64, sigma: f64) -> Result<()> {
    if !(lambda >= 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need lambda >= 0 and sigma > 0, got lambda = {lambda}, sigma = {sigma}"
        )));
    }
    Ok(())
}

/// Solves several kernels on one grid, fanned out by `exec`.
pub fn solve_many(alphas: &[f64], l: f64, n: usize, exec: Exec) -> Result<Vec<KernelSolution>> {
    let grid = TriangleGrid::new(l, n)?;
    exec.map_slice(alphas, |&a| solve_on(grid, a, Exec::Sequential))
        .into_iter()
        .collect()
}

/// Max `|K|` above the diagonal from the full-square solve.
pub fn localization_check(alpha: f64, l: f64, n: usize) -> Result<f64> {
    Ok(solve_kernel(alpha, l, n)?.outside_max())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub value: f64,
    pub last_increment: f64,
    pub converged: bool,
    /// Bound on the neglected tail `sum_{m >= terms} |T_m|`.
    pub truncation_bound: f64,
}

/// Successive approximations for `k` in characteristic variables
/// `xi = x + y`, `eta = x - y`, where the problem becomes
/// `G = -(alpha/4)(xi + eta) + (alpha/4) int_0^xi int_0^eta G`.
///
/// The iteration runs on bivariate polynomials `sum c[a][b] xi^a eta^b`;
/// nothing about the closed-form term structure is assumed. The majorant of
/// the m-th term is `(|alpha|/4)(xi+eta) r^m / (m!(m+1)!)` with
/// `r = |alpha| xi eta / 4`, so the tail after `terms` terms is bounded by
/// the first neglected term times `e^r`.
pub fn series_oracle(alpha: f64, x: f64, y: f64, terms: usize) -> Result<SeriesValue> {
    if !(0.0 <= y && y <= x) || terms == 0 {
        return Err(Error::InvalidParameter(format!(
            "series oracle needs 0 <= y <= x and terms >= 1, got ({x}, {y}, {terms})"
        )));
    }
    let xi = x + y;
    let eta = x - y;
    let q = 0.25 * alpha;
    let size = terms + 2;
    // term[a][b] multiplies xi^a eta^b
    let mut term = vec![vec![0.0; size]; size];
    term[1][0] = -q;
    term[0][1] = -q;
    let eval = |t: &Vec<Vec<f64>>| -> f64 {
        let mut acc = 0.0;
        for (a, row) in t.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                if *c != 0.0 {
                    acc += c * xi.powi(a as i32) * eta.powi(b as i32);
                }
            }
        }
        acc
    };
    let mut value = eval(&term);
    let mut last = value;
    for _ in 1..terms {
        let mut nt = vec![vec![0.0; size]; size];
        for a in 0..size - 1 {
            for b in 0..size - 1 {
                let c = term[a][b];
                if c != 0.0 {
                    nt[a + 1][b + 1] += q * c / ((a + 1) * (b + 1)) as f64;
                }
            }
        }
        term = nt;
        last = eval(&term);
        value += last;
    }
    let r = alpha.abs() * xi * eta / 4.0;
    let mut fact = 1.0;
    for m in 1..=terms {
        fact *= (m * (m + 1)) as f64;
    }
    let next = alpha.abs() / 4.0 * (xi + eta) * r.powi(terms as i32) / fact;
    Ok(SeriesValue {
        value,
        last_increment: last,
        converged: last.abs() <= 1e-12 * value.abs() || value == 0.0 && last == 0.0,
        truncation_bound: next * r.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `-alpha x I1(z)/z` with `z = sqrt(alpha (x^2 - y^2))`, summed directly;
    /// only valid for the boundary data used here.
    fn bessel_kernel(alpha: f64, x: f64, y: f64) -> f64 {
        let r = alpha * (x * x - y * y) / 4.0;
        let mut term = 0.5;
        let mut acc = term;
        for m in 1..60 {
            term *= r / (m * (m + 1)) as f64;
            acc += term;
        }
        -alpha * x * acc
    }

    #[test]
    fn zero_gain_gives_zero_kernel() {
        let k = solve_kernel(0.0, 1.0, 21).unwrap();
        assert!(k.values().iter().all(|v| *v == 0.0));
        assert_eq!(k.outside_max(), 0.0);
    }

    #[test]
    fn diagonal_trace_and_localization() {
        let k = solve_kernel(1.0, 1.0, 101).unwrap();
        assert!(k.diag_error() < 1e-14);
        assert_eq!(k.outside_max(), 0.0);
    }

    #[test]
    fn matches_closed_form_at_second_order() {
        let mut errs = Vec::new();
        for n in [41, 81, 161] {
            let k = solve_kernel(2.0, 1.0, n).unwrap();
            let g = k.grid();
            let mut e: f64 = 0.0;
            for i in 0..n {
                for j in 0..=i {
                    e = e.max((k.at(i, j) - bessel_kernel(2.0, g.x(i), g.x(j))).abs());
                }
            }
            errs.push(e);
        }
        let orders = crate::fit::observed_orders(&errs);
        assert!(orders.iter().all(|o| *o > 1.8), "{errs:?} {orders:?}");
    }

    #[test]
    fn series_oracle_matches_bessel_sum() {
        for &(a, x, y) in &[(1.0, 0.8, 0.4), (4.0, 1.0, 0.2), (-3.0, 1.2, 0.7)] {
            let s = series_oracle(a, x, y, 30).unwrap();
            assert!(s.converged);
            assert!((s.value - bessel_kernel(a, x, y)).abs() < 1e-13);
        }
    }

    #[test]
    fn series_first_term_and_monotone_increments() {
        let s = series_oracle(1.0, 0.8, 0.4, 1).unwrap();
        assert!((s.value + 0.4).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in 1..8 {
            let s = series_oracle(1.0, 0.9, 0.3, t).unwrap();
            assert!(s.last_increment.abs() < prev);
            prev = s.last_increment.abs();
            let exact = series_oracle(1.0, 0.9, 0.3, 40).unwrap().value;
            assert!((exact - s.value).abs() <= s.truncation_bound * (1.0 + 1e-12) + 1e-16);
        }
        assert!(!series_oracle(50.0, 3.0, 0.0, 2).unwrap().converged);
    }

    #[test]
    fn interpolation_is_exact_on_nodes_and_accurate_between() {
        let k = solve_kernel(3.0, 1.5, 151).unwrap();
        let g = k.grid();
        for &(i, j) in &[(10, 3), (150, 150), (77, 0), (100, 99)] {
            assert_eq!(k.eval(g.x(i), g.x(j)), k.at(i, j));
        }
        let (x, y) = (1.2345, 0.987);
        assert!((k.eval(x, y) - bessel_kernel(3.0, x, y)).abs() < 1e-4);
        let fd = (bessel_kernel(3.0, x + 1e-5, y) - bessel_kernel(3.0, x - 1e-5, y)) / 2e-5;
        assert!((k.eval_dx(x, y) - fd).abs() < 1e-3);
        let top = bessel_kernel(3.0, 1.5, 1.5 - 1e-5) - bessel_kernel(3.0, 1.5 - 1e-5, 1.5 - 1e-5);
        let _ = top;
        let fd_top = (bessel_kernel(3.0, 1.5, 0.7) - bessel_kernel(3.0, 1.5 - 1e-5, 0.7)) / 1e-5;
        let j = 70;
        assert!((k.top_slice_x_derivative()[j] - fd_top).abs() < 2e-3);
    }

    #[test]
    fn inverse_is_negated_reflection() {
        let l = inverse_kernel(4.0, 2.0, 1.0, 31).unwrap();
        let k = solve_kernel(-2.0, 1.0, 31).unwrap();
        for (a, b) in l.values().iter().zip(k.values()) {
            assert_eq!(a + b, 0.0);
        }
        let g = l.grid();
        for i in 0..g.n {
            assert!((l.diag_trace()[i] + g.x(i)).abs() < 1e-14);
        }
    }

    #[test]
    fn same_spacing_gives_bitwise_restrictions() {
        let h = 0.01;
        let small = solve_on(TriangleGrid::with_spacing(h, 51).unwrap(), 2.0, Exec::Sequential).unwrap();
        let large = solve_on(TriangleGrid::with_spacing(h, 121).unwrap(), 2.0, Exec::Sequential).unwrap();
        for i in 0..51 {
            assert_eq!(small.row(i), large.row(i));
        }
    }

    #[test]
    fn batch_policies_agree() {
        let a = solve_many(&[1.0, 4.0, 9.0], 1.0, 41, Exec::Sequential).unwrap();
        let b = solve_many(&[1.0, 4.0, 9.0], 1.0, 41, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_small_grids_and_bad_gains() {
        assert!(solve_kernel(1.0, 1.0, 2).is_err());
        assert!(forward_kernel(-1.0, 1.0, 1.0, 11).is_err());
        assert!(series_oracle(1.0, 0.2, 0.5, 3).is_err());
    }
}
