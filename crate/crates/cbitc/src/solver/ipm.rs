//! Primal-dual interior-point method for small second-order cone programs,
//! on the homogeneous self-dual embedding.
//!
//! Solves `min c^T x  s.t.  b - A x ∈ K` with `K` a product of a nonnegative
//! orthant and second-order cones. The embedding introduces the scaling pair
//! (tau, kappa); tau > 0 at convergence yields an optimal primal-dual pair,
//! kappa > 0 a certificate of infeasibility. Search directions come from the
//! Nesterov-Todd scaling of the central-path equations with a Mehrotra
//! predictor-corrector, the standard recipe for this problem class. Each
//! iteration factors the quasidefinite augmented KKT system once with a
//! statically regularized LDL^T, and every solve is polished by iterative
//! refinement against the unregularized matrix. Everything is dense;
//! problems here have at most a few hundred rows.

/// Dense row-major matrix.
#[derive(Debug, Clone)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// y = A^T x.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for (yc, a) in y.iter_mut().zip(self.row(r)) {
                *yc += a * xr;
            }
        }
        y
    }
}

/// Cone blocks in row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeSpec {
    /// Componentwise nonnegative block of the given length.
    NonNeg(usize),
    /// Second-order cone { (t, u) : t >= ||u|| } of total dimension >= 2.
    Soc(usize),
}

impl ConeSpec {
    pub fn len(&self) -> usize {
        match *self {
            ConeSpec::NonNeg(n) | ConeSpec::Soc(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Complementarity degree: orthant coordinates count 1 each, each SOC counts
/// 1 (the Jordan-algebra rank convention).
fn cone_degree(cones: &[ConeSpec]) -> f64 {
    cones
        .iter()
        .map(|c| match *c {
            ConeSpec::NonNeg(n) => n as f64,
            ConeSpec::Soc(_) => 1.0,
        })
        .sum()
}

/// Set v to the cone identity element e.
fn cone_identity(cones: &[ConeSpec], v: &mut [f64]) {
    let mut at = 0;
    for c in cones {
        match *c {
            ConeSpec::NonNeg(n) => v[at..at + n].fill(1.0),
            ConeSpec::Soc(n) => {
                v[at] = 1.0;
                v[at + 1..at + n].fill(0.0);
            }
        }
        at += c.len();
    }
}

/// Strict interiority check.
fn is_interior(cones: &[ConeSpec], v: &[f64]) -> bool {
    let mut at = 0;
    for c in cones {
        match *c {
            ConeSpec::NonNeg(n) => {
                if v[at..at + n].iter().any(|&x| !(x > 0.0)) {
                    return false;
                }
            }
            ConeSpec::Soc(n) => {
                let zeta = v[at] * v[at] - v[at + 1..at + n].iter().map(|x| x * x).sum::<f64>();
                if !(zeta > 0.0) || !(v[at] > 0.0) {
                    return false;
                }
            }
        }
        at += c.len();
    }
    true
}

/// Largest step alpha with v + alpha dv still in the cone (up to the exact
/// boundary); may be infinite.
fn step_to_boundary(cones: &[ConeSpec], v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    let mut at = 0;
    for c in cones {
        match *c {
            ConeSpec::NonNeg(n) => {
                for i in at..at + n {
                    if dv[i] < 0.0 {
                        alpha = alpha.min(-v[i] / dv[i]);
                    }
                }
            }
            ConeSpec::Soc(n) => {
                let vb = &v[at..at + n];
                let db = &dv[at..at + n];
                // Roots of (v0 + a d0)^2 - ||vr + a dr||^2 = 0.
                let a = db[0] * db[0] - db[1..].iter().map(|x| x * x).sum::<f64>();
                let b = 2.0
                    * (vb[0] * db[0]
                        - vb[1..].iter().zip(&db[1..]).map(|(x, y)| x * y).sum::<f64>());
                let cq = vb[0] * vb[0] - vb[1..].iter().map(|x| x * x).sum::<f64>();
                let disc = b * b - 4.0 * a * cq;
                if disc >= 0.0 && a.abs() > 1e-300 {
                    let sq = disc.sqrt();
                    for root in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                        if root > 0.0 {
                            alpha = alpha.min(root);
                        }
                    }
                } else if a.abs() <= 1e-300 && b < 0.0 {
                    alpha = alpha.min(-cq / b);
                }
                if db[0] < 0.0 {
                    alpha = alpha.min(-vb[0] / db[0]);
                }
            }
        }
        at += c.len();
    }
    alpha
}

/// Nesterov-Todd scaling state for one cone block: the symmetric W with
/// W z = W^{-1} s = lambda.
enum BlockScaling {
    /// w_i = sqrt(s_i / z_i) per coordinate.
    NonNeg { w: Vec<f64> },
    /// W = eta (2 wb wb^T - J), with wb hyperbolic-unit.
    Soc { eta: f64, wb: Vec<f64> },
}

struct Scaling {
    blocks: Vec<(usize, BlockScaling)>,
    /// lambda = W z, blockwise.
    lambda: Vec<f64>,
}

fn soc_residual(v: &[f64]) -> f64 {
    v[0] * v[0] - v[1..].iter().map(|x| x * x).sum::<f64>()
}

fn compute_scaling(cones: &[ConeSpec], s: &[f64], z: &[f64]) -> Option<Scaling> {
    let m = s.len();
    let mut lambda = vec![0.0; m];
    let mut blocks = Vec::with_capacity(cones.len());
    let mut at = 0;
    for c in cones {
        match *c {
            ConeSpec::NonNeg(n) => {
                let mut w = vec![0.0; n];
                for i in 0..n {
                    if !(s[at + i] > 0.0 && z[at + i] > 0.0) {
                        return None;
                    }
                    w[i] = (s[at + i] / z[at + i]).sqrt();
                    lambda[at + i] = (s[at + i] * z[at + i]).sqrt();
                }
                blocks.push((at, BlockScaling::NonNeg { w }));
            }
            ConeSpec::Soc(n) => {
                let sb = &s[at..at + n];
                let zb = &z[at..at + n];
                let res_s = soc_residual(sb);
                let res_z = soc_residual(zb);
                if !(res_s > 0.0 && res_z > 0.0) {
                    return None;
                }
                let ns = res_s.sqrt();
                let nz = res_z.sqrt();
                // Normalized points and the geometric mean scaling.
                let sbar: Vec<f64> = sb.iter().map(|v| v / ns).collect();
                let zbar: Vec<f64> = zb.iter().map(|v| v / nz).collect();
                let dot: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
                let gamma = ((1.0 + dot) / 2.0).sqrt();
                // wb = (sbar + J zbar) / (2 gamma); hyperbolic-unit.
                let mut wb = vec![0.0; n];
                wb[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
                for i in 1..n {
                    wb[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
                }
                let eta = (ns / nz).sqrt();
                // lambda = W z with W = eta [[w0, w1^T], [w1, I + w1 w1^T/(1+w0)]].
                let w1_dot_z1: f64 = wb[1..].iter().zip(&zb[1..]).map(|(a, b)| a * b).sum();
                lambda[at] = eta * (wb[0] * zb[0] + w1_dot_z1);
                let coef = zb[0] + w1_dot_z1 / (1.0 + wb[0]);
                for i in 1..n {
                    lambda[at + i] = eta * (zb[i] + coef * wb[i]);
                }
                blocks.push((at, BlockScaling::Soc { eta, wb }));
            }
        }
        at += c.len();
    }
    Some(Scaling { blocks, lambda })
}

impl Scaling {
    /// out = W u.
    fn w_apply(&self, cones: &[ConeSpec], u: &[f64], out: &mut [f64]) {
        for ((at, block), cone) in self.blocks.iter().zip(cones) {
            let n = cone.len();
            match block {
                BlockScaling::NonNeg { w } => {
                    for i in 0..n {
                        out[at + i] = w[i] * u[at + i];
                    }
                }
                BlockScaling::Soc { eta, wb } => {
                    // W = eta [[w0, w1^T], [w1, I + w1 w1^T/(1+w0)]].
                    let ub = &u[*at..*at + n];
                    let w1_dot_u1: f64 =
                        wb[1..].iter().zip(&ub[1..]).map(|(a, b)| a * b).sum();
                    out[*at] = eta * (wb[0] * ub[0] + w1_dot_u1);
                    let coef = ub[0] + w1_dot_u1 / (1.0 + wb[0]);
                    for i in 1..n {
                        out[*at + i] = eta * (ub[i] + coef * wb[i]);
                    }
                }
            }
        }
    }

    /// out = W^{-1} u.
    fn w_inv_apply(&self, cones: &[ConeSpec], u: &[f64], out: &mut [f64]) {
        for ((at, block), cone) in self.blocks.iter().zip(cones) {
            let n = cone.len();
            match block {
                BlockScaling::NonNeg { w } => {
                    for i in 0..n {
                        out[at + i] = u[at + i] / w[i];
                    }
                }
                BlockScaling::Soc { eta, wb } => {
                    // W^{-1} = (1/eta) [[w0, -w1^T], [-w1, I + w1 w1^T/(1+w0)]].
                    let ub = &u[*at..*at + n];
                    let w1_dot_u1: f64 =
                        wb[1..].iter().zip(&ub[1..]).map(|(a, b)| a * b).sum();
                    out[*at] = (wb[0] * ub[0] - w1_dot_u1) / eta;
                    let coef = -ub[0] + w1_dot_u1 / (1.0 + wb[0]);
                    for i in 1..n {
                        out[*at + i] = (ub[i] + coef * wb[i]) / eta;
                    }
                }
            }
        }
    }

    /// Dense H = W^2, block-diagonal, for the KKT assembly.
    fn h_dense(&self, cones: &[ConeSpec], m: usize) -> Vec<f64> {
        let mut h = vec![0.0; m * m];
        for ((at, block), cone) in self.blocks.iter().zip(cones) {
            let n = cone.len();
            match block {
                BlockScaling::NonNeg { w } => {
                    for i in 0..n {
                        h[(at + i) * m + (at + i)] = w[i] * w[i];
                    }
                }
                BlockScaling::Soc { eta, wb } => {
                    // W^2 = eta^2 (2 wb wb^T - J); wb is hyperbolic-unit.
                    let e2 = eta * eta;
                    for i in 0..n {
                        for j in 0..n {
                            let jdiag = if i != j {
                                0.0
                            } else if i == 0 {
                                1.0
                            } else {
                                -1.0
                            };
                            h[(at + i) * m + (at + j)] =
                                e2 * (2.0 * wb[i] * wb[j] - jdiag);
                        }
                    }
                }
            }
        }
        h
    }

    /// out = lambda o u (Jordan product).
    fn lambda_product(&self, cones: &[ConeSpec], u: &[f64], out: &mut [f64]) {
        for ((at, _), cone) in self.blocks.iter().zip(cones) {
            let n = cone.len();
            match cone {
                ConeSpec::NonNeg(_) => {
                    for i in 0..n {
                        out[at + i] = self.lambda[at + i] * u[at + i];
                    }
                }
                ConeSpec::Soc(_) => {
                    let lb = &self.lambda[*at..*at + n];
                    let ub = &u[*at..*at + n];
                    out[*at] = lb.iter().zip(ub).map(|(a, b)| a * b).sum();
                    for i in 1..n {
                        out[*at + i] = lb[0] * ub[i] + ub[0] * lb[i];
                    }
                }
            }
        }
    }

    /// out = lambda^{-1} o u: solve (lambda o out) = u.
    fn lambda_solve(&self, cones: &[ConeSpec], u: &[f64], out: &mut [f64]) {
        for ((at, _), cone) in self.blocks.iter().zip(cones) {
            let n = cone.len();
            match cone {
                ConeSpec::NonNeg(_) => {
                    for i in 0..n {
                        out[at + i] = u[at + i] / self.lambda[at + i];
                    }
                }
                ConeSpec::Soc(_) => {
                    let lb = &self.lambda[*at..*at + n];
                    let ub = &u[*at..*at + n];
                    let l1_sq: f64 = lb[1..].iter().map(|v| v * v).sum();
                    let l1_dot_u1: f64 =
                        lb[1..].iter().zip(&ub[1..]).map(|(a, b)| a * b).sum();
                    let det = lb[0] * lb[0] - l1_sq;
                    let u0 = (lb[0] * ub[0] - l1_dot_u1) / det;
                    out[*at] = u0;
                    for i in 1..n {
                        out[*at + i] = (ub[i] - u0 * lb[i]) / lb[0];
                    }
                }
            }
        }
    }

    /// Complementarity lambda o lambda, written into out.
    fn lambda_squared(&self, cones: &[ConeSpec], out: &mut [f64]) {
        let lambda = self.lambda.clone();
        self.lambda_product(cones, &lambda, out);
    }
}

/// LDL^T factorization of a symmetric quasidefinite matrix with known pivot
/// signs (+ for the first `pos` rows, - for the rest), static regularization,
/// and iterative refinement against the unregularized matrix.
struct LdlSolver {
    dim: usize,
    l: Vec<f64>,
    d: Vec<f64>,
    /// Unregularized matrix for refinement.
    k: Vec<f64>,
}

impl LdlSolver {
    fn factor(k: &[f64], dim: usize, pos: usize) -> Option<Self> {
        let mut l = vec![0.0; dim * dim];
        let mut d = vec![0.0; dim];
        for j in 0..dim {
            let sign = if j < pos { 1.0 } else { -1.0 };
            // Regularize relative to the row's own magnitude so well-scaled
            // small pivots are not drowned by the largest block.
            let row_scale = 1.0 + k[j * dim + j].abs();
            let mut dj = k[j * dim + j] + sign * 1e-13 * row_scale;
            for t in 0..j {
                dj -= l[j * dim + t] * l[j * dim + t] * d[t];
            }
            if dj.abs() < 1e-14 * row_scale {
                dj = sign * 1e-14 * row_scale;
            }
            if !dj.is_finite() {
                return None;
            }
            d[j] = dj;
            for i in j + 1..dim {
                let mut v = k[i * dim + j];
                for t in 0..j {
                    v -= l[i * dim + t] * l[j * dim + t] * d[t];
                }
                l[i * dim + j] = v / dj;
            }
        }
        Some(Self {
            dim,
            l,
            d,
            k: k.to_vec(),
        })
    }

    fn solve_factored(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut y = rhs.to_vec();
        for i in 0..n {
            for t in 0..i {
                y[i] -= self.l[i * n + t] * y[t];
            }
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            for t in i + 1..n {
                y[i] -= self.l[t * n + i] * y[t];
            }
        }
        y
    }

    /// Solve K y = rhs, keeping the best refined iterate.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let residual_norm = |y: &[f64]| -> f64 {
            let mut acc = 0.0;
            for i in 0..n {
                let row = &self.k[i * n..(i + 1) * n];
                let ri = rhs[i] - row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
                acc += ri * ri;
            }
            acc
        };
        let mut y = self.solve_factored(rhs);
        let mut best = y.clone();
        let mut best_norm = residual_norm(&y);
        for _ in 0..3 {
            if best_norm == 0.0 {
                break;
            }
            let mut r = rhs.to_vec();
            for i in 0..n {
                let row = &self.k[i * n..(i + 1) * n];
                r[i] -= row.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
            }
            let dy = self.solve_factored(&r);
            for i in 0..n {
                y[i] += dy[i];
            }
            let norm = residual_norm(&y);
            if norm < best_norm {
                best_norm = norm;
                best.copy_from_slice(&y);
            } else {
                break;
            }
        }
        best
    }
}

/// Conic problem data in standard form.
pub struct ConicData<'a> {
    pub c: &'a [f64],
    pub a: &'a Mat,
    pub b: &'a [f64],
    pub cones: &'a [ConeSpec],
}

/// Cone-blocked Ruiz equilibration: diagonal row and column scalings that
/// drive the matrix entries toward unit magnitude. Rows of a second-order
/// cone share one scaling factor, so cone membership is preserved; b and c
/// get scalar normalizations on top. Returns (row scaling, column scaling,
/// b scalar, scaled A, scaled b, scaled c); the unscaled primal solution is
/// `b_scalar * d_col * x_scaled`.
fn equilibrate(data: &ConicData) -> (Vec<f64>, Vec<f64>, f64, Mat, Vec<f64>, Vec<f64>) {
    let m = data.b.len();
    let n = data.c.len();
    let mut a = data.a.clone();
    let mut d_row = vec![1.0; m];
    let mut d_col = vec![1.0; n];

    for _ in 0..10 {
        // Per-row maxima, collapsed to one factor per SOC block.
        let mut row_max = vec![0.0f64; m];
        for i in 0..m {
            row_max[i] = a.row(i).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        }
        let mut at = 0;
        for cone in data.cones {
            let len = cone.len();
            if let ConeSpec::Soc(_) = cone {
                let block = row_max[at..at + len]
                    .iter()
                    .fold(0.0f64, |acc, v| acc.max(*v));
                row_max[at..at + len].fill(block);
            }
            at += len;
        }
        let mut col_max = vec![0.0f64; n];
        for i in 0..m {
            for (j, v) in a.row(i).iter().enumerate() {
                col_max[j] = col_max[j].max(v.abs());
            }
        }

        let mut spread = 1.0f64;
        let scale_of = |mx: f64| if mx > 1e-300 { 1.0 / mx.sqrt() } else { 1.0 };
        for i in 0..m {
            let f = scale_of(row_max[i]);
            d_row[i] *= f;
            spread = spread.max(f.max(1.0 / f));
            for j in 0..n {
                *a.at_mut(i, j) *= f;
            }
        }
        for j in 0..n {
            let f = scale_of(col_max[j]);
            d_col[j] *= f;
            spread = spread.max(f.max(1.0 / f));
            for i in 0..m {
                *a.at_mut(i, j) *= f;
            }
        }
        if spread < 1.0 + 1e-3 {
            break;
        }
    }

    let mut b: Vec<f64> = (0..m).map(|i| data.b[i] * d_row[i]).collect();
    let mut c: Vec<f64> = (0..n).map(|j| data.c[j] * d_col[j]).collect();
    // Scalar normalization; the caller undoes the b scalar on x.
    let b_scalar = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    let c_scalar = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    b.iter_mut().for_each(|v| *v /= b_scalar);
    c.iter_mut().for_each(|v| *v /= c_scalar);
    (d_row, d_col, b_scalar, a, b, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub status: IpmStatus,
    /// De-homogenized primal point x / tau.
    pub x: Vec<f64>,
    /// Complementarity gap s^T z / tau^2 relative to max(1, |obj|).
    pub gap_rel: f64,
    /// Worst de-homogenized primal/dual equation residual, relative.
    pub residual_rel: f64,
    pub iterations: usize,
}

struct Direction {
    dx: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

/// Solve a conic problem: equilibrate, run the interior-point iteration
/// until the relative gap and residuals (measured on the equilibrated
/// problem) drop below `tol`, and map the solution back.
pub fn solve_hsde(data: &ConicData, tol: f64, max_iter: usize) -> IpmResult {
    let (_d_row, d_col, b_scalar, a, b, c) = equilibrate(data);
    let scaled = ConicData {
        c: &c,
        a: &a,
        b: &b,
        cones: data.cones,
    };
    let mut result = solve_hsde_core(&scaled, tol, max_iter);
    for (x, d) in result.x.iter_mut().zip(&d_col) {
        *x *= b_scalar * d;
    }
    result
}

fn solve_hsde_core(data: &ConicData, tol: f64, max_iter: usize) -> IpmResult {
    let n = data.c.len();
    let m = data.b.len();
    debug_assert_eq!(data.a.rows(), m);
    debug_assert_eq!(data.a.cols(), n);
    debug_assert_eq!(data.cones.iter().map(|c| c.len()).sum::<usize>(), m);

    let nu = cone_degree(data.cones) + 1.0;
    let norm_b = 1.0 + data.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_c = 1.0 + data.c.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut x = vec![0.0; n];
    let mut s = vec![0.0; m];
    let mut z = vec![0.0; m];
    cone_identity(data.cones, &mut s);
    cone_identity(data.cones, &mut z);
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let dim = m + n;
    let trace = std::env::var("CBITC_IPM_TRACE").is_ok();
    let mut best = IpmResult {
        status: IpmStatus::MaxIter,
        x: x.clone(),
        gap_rel: f64::INFINITY,
        residual_rel: f64::INFINITY,
        iterations: 0,
    };

    for iter in 0..max_iter {
        // Residuals of the homogeneous model.
        let atz = data.a.t_matvec(&z);
        let r1: Vec<f64> = (0..n).map(|i| atz[i] + data.c[i] * tau).collect();
        let ax = data.a.matvec(&x);
        let r2: Vec<f64> = (0..m).map(|i| -ax[i] + data.b[i] * tau - s[i]).collect();
        let ctx: f64 = data.c.iter().zip(&x).map(|(a, b)| a * b).sum();
        let btz: f64 = data.b.iter().zip(&z).map(|(a, b)| a * b).sum();
        let r3 = -ctx - btz - kappa;

        let stz: f64 = s.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mu = (stz + tau * kappa) / nu;

        // Convergence metrics on the de-homogenized point.
        let pobj = ctx / tau;
        let pres = r2.iter().map(|v| v * v).sum::<f64>().sqrt() / (tau * norm_b);
        let dres = r1.iter().map(|v| v * v).sum::<f64>().sqrt() / (tau * norm_c);
        let gap_rel = (stz / (tau * tau)) / pobj.abs().max(1.0);
        let residual_rel = pres.max(dres);

        if trace {
            eprintln!(
                "iter {iter}: mu={mu:.3e} gap={gap_rel:.3e} res={residual_rel:.3e} tau={tau:.3e} kappa={kappa:.3e} pobj={pobj:.6e}"
            );
        }
        if gap_rel.max(residual_rel) < best.gap_rel.max(best.residual_rel) {
            best = IpmResult {
                status: IpmStatus::MaxIter,
                x: x.iter().map(|v| v / tau).collect(),
                gap_rel,
                residual_rel,
                iterations: iter,
            };
        }
        if gap_rel <= tol && residual_rel <= tol {
            return IpmResult {
                status: IpmStatus::Optimal,
                x: x.iter().map(|v| v / tau).collect(),
                gap_rel,
                residual_rel,
                iterations: iter,
            };
        }
        // Infeasibility certificate: A^T z ~ 0 with b^T z < 0 (primal), or
        // A x + s ~ 0 with c^T x < 0 (dual/unbounded).
        {
            let atz_norm = atz.iter().map(|v| v * v).sum::<f64>().sqrt();
            if btz < 0.0 && atz_norm <= 1e-10 * norm_c * (-btz) {
                best.status = IpmStatus::Infeasible;
                best.iterations = iter;
                return best;
            }
            let axs_norm = (0..m)
                .map(|i| (ax[i] + s[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            if ctx < 0.0 && axs_norm <= 1e-10 * norm_b * (-ctx) {
                best.status = IpmStatus::Infeasible;
                best.iterations = iter;
                return best;
            }
        }

        let Some(scaling) = compute_scaling(data.cones, &s, &z) else {
            best.iterations = iter;
            return best;
        };

        // Augmented KKT matrix [[W^2, -A], [-A^T, 0]], factored once per
        // iteration.
        let h = scaling.h_dense(data.cones, m);
        let mut kmat = vec![0.0; dim * dim];
        for i in 0..m {
            for j in 0..m {
                kmat[i * dim + j] = h[i * m + j];
            }
        }
        for i in 0..m {
            for j in 0..n {
                let v = -data.a.at(i, j);
                kmat[i * dim + (m + j)] = v;
                kmat[(m + j) * dim + i] = v;
            }
        }
        let Some(ldl) = LdlSolver::factor(&kmat, dim, m) else {
            best.iterations = iter;
            return best;
        };

        // Solve the reduced linearized system
        //   A^T dz + c dtau               = u1
        //   -A dx + W^2 dz + b dtau       = u2
        //   -c^T dx - b^T dz + (k/t) dtau = u3
        // via [dz; dx] = w1 + dtau * w2 with K w1 = [u2; -u1], K w2 = [-b; c].
        let mut w2_rhs = vec![0.0; dim];
        for i in 0..m {
            w2_rhs[i] = -data.b[i];
        }
        w2_rhs[m..].copy_from_slice(data.c);
        let w2 = ldl.solve(&w2_rhs);
        let ctw2x: f64 = data.c.iter().zip(&w2[m..]).map(|(a, b)| a * b).sum();
        let btw2z: f64 = data.b.iter().zip(&w2[..m]).map(|(a, b)| a * b).sum();
        let dtau_den = -ctw2x - btw2z + kappa / tau;

        let solve_linearized = |u1: &[f64], u2: &[f64], u3: f64| -> (Vec<f64>, Vec<f64>, f64) {
            let mut rhs = vec![0.0; dim];
            rhs[..m].copy_from_slice(u2);
            for (slot, v) in rhs[m..].iter_mut().zip(u1) {
                *slot = -v;
            }
            let w1 = ldl.solve(&rhs);
            let ctw1x: f64 = data.c.iter().zip(&w1[m..]).map(|(a, b)| a * b).sum();
            let btw1z: f64 = data.b.iter().zip(&w1[..m]).map(|(a, b)| a * b).sum();
            let dtau = (u3 + ctw1x + btw1z) / dtau_den;
            let dz: Vec<f64> = (0..m).map(|i| w1[i] + dtau * w2[i]).collect();
            let dx: Vec<f64> = (0..n).map(|i| w1[m + i] + dtau * w2[m + i]).collect();
            (dx, dz, dtau)
        };

        // dcomp is the target for the scaled complementarity equation
        // lambda o (W^{-1} ds + W dz) = dcomp; tk_target likewise for
        // tau*kappa. The combined pass adds the Mehrotra correction.
        let mut scratch_wz = vec![0.0; m];
        let mut scratch = vec![0.0; m];
        let mut compute_direction = |eta_r: f64, dcomp: &[f64], tk_target: f64| -> Direction {
            // Residual damping factor eta_r: affine uses 1, combined 1-sigma.
            let u1: Vec<f64> = r1.iter().map(|v| -eta_r * v).collect();
            // u2 = -eta_r r2 + W (lambda \ dcomp).
            scaling.lambda_solve(data.cones, dcomp, &mut scratch);
            scaling.w_apply(data.cones, &scratch, &mut scratch_wz);
            let u2: Vec<f64> = (0..m).map(|i| -eta_r * r2[i] + scratch_wz[i]).collect();
            let u3 = -eta_r * r3 + (tk_target - tau * kappa) / tau;

            let (dx, dz, dtau) = solve_linearized(&u1, &u2, u3);

            // ds from the primal equation: -A dx + b dtau - ds = -eta_r r2.
            let adx = data.a.matvec(&dx);
            let ds: Vec<f64> = (0..m)
                .map(|i| -adx[i] + data.b[i] * dtau + eta_r * r2[i])
                .collect();
            let dkappa = (tk_target - tau * kappa - kappa * dtau) / tau;
            Direction {
                dx,
                dz,
                ds,
                dtau,
                dkappa,
            }
        };

        let max_step = |d: &Direction| -> f64 {
            let mut alpha = step_to_boundary(data.cones, &s, &d.ds);
            alpha = alpha.min(step_to_boundary(data.cones, &z, &d.dz));
            if d.dtau < 0.0 {
                alpha = alpha.min(-tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                alpha = alpha.min(-kappa / d.dkappa);
            }
            alpha
        };

        // Affine predictor: drive lambda o lambda and tau*kappa to zero.
        let mut lam_sq = vec![0.0; m];
        scaling.lambda_squared(data.cones, &mut lam_sq);
        let dcomp_aff: Vec<f64> = lam_sq.iter().map(|v| -v).collect();
        let aff = compute_direction(1.0, &dcomp_aff, 0.0);

        let alpha_aff = max_step(&aff).min(1.0);
        let mu_aff = {
            let stz_a: f64 = (0..m)
                .map(|i| (s[i] + alpha_aff * aff.ds[i]) * (z[i] + alpha_aff * aff.dz[i]))
                .sum();
            let tk = (tau + alpha_aff * aff.dtau) * (kappa + alpha_aff * aff.dkappa);
            (stz_a + tk) / nu
        };
        let sigma = (mu_aff / mu).max(0.0).powi(3).clamp(1e-8, 0.999);

        // Combined corrector: center to sigma*mu and subtract the Mehrotra
        // second-order term (W^{-1} ds_aff) o (W dz_aff).
        let mut e_vec = vec![0.0; m];
        cone_identity(data.cones, &mut e_vec);
        let mut winv_ds = vec![0.0; m];
        scaling.w_inv_apply(data.cones, &aff.ds, &mut winv_ds);
        let mut w_dz = vec![0.0; m];
        scaling.w_apply(data.cones, &aff.dz, &mut w_dz);
        // Jordan product of the two scaled affine steps.
        let mut corr = vec![0.0; m];
        {
            let mut at = 0;
            for c in data.cones {
                let nlen = c.len();
                match c {
                    ConeSpec::NonNeg(_) => {
                        for i in at..at + nlen {
                            corr[i] = winv_ds[i] * w_dz[i];
                        }
                    }
                    ConeSpec::Soc(_) => {
                        let a_b = &winv_ds[at..at + nlen];
                        let b_b = &w_dz[at..at + nlen];
                        corr[at] = a_b.iter().zip(b_b).map(|(p, q)| p * q).sum();
                        for i in 1..nlen {
                            corr[at + i] = a_b[0] * b_b[i] + b_b[0] * a_b[i];
                        }
                    }
                }
                at += nlen;
            }
        }
        let dcomp_comb: Vec<f64> = (0..m)
            .map(|i| sigma * mu * e_vec[i] - lam_sq[i] - corr[i])
            .collect();
        let tk_comb = sigma * mu - aff.dtau * aff.dkappa;
        let dir = compute_direction(1.0 - sigma, &dcomp_comb, tk_comb);

        let mut alpha = (0.99 * max_step(&dir)).min(1.0);
        // Neighborhood safeguard: keep every complementarity pair within a
        // fixed factor of the average, otherwise later steps collapse.
        let min_pair_ratio = |alpha: f64| -> f64 {
            let mut min_pair = (tau + alpha * dir.dtau) * (kappa + alpha * dir.dkappa);
            let mut total = min_pair;
            let mut at = 0;
            for c in data.cones {
                let nlen = c.len();
                match c {
                    ConeSpec::NonNeg(_) => {
                        for i in at..at + nlen {
                            let pair =
                                (s[i] + alpha * dir.ds[i]) * (z[i] + alpha * dir.dz[i]);
                            min_pair = min_pair.min(pair);
                            total += pair;
                        }
                    }
                    ConeSpec::Soc(_) => {
                        let sv: Vec<f64> =
                            (at..at + nlen).map(|i| s[i] + alpha * dir.ds[i]).collect();
                        let zv: Vec<f64> =
                            (at..at + nlen).map(|i| z[i] + alpha * dir.dz[i]).collect();
                        let pair = (soc_residual(&sv) * soc_residual(&zv)).max(0.0).sqrt() / 2.0;
                        min_pair = min_pair.min(pair);
                        total += sv.iter().zip(&zv).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                at += nlen;
            }
            min_pair / (total / nu).max(1e-300)
        };
        let mut backtracks = 0;
        while alpha > 1e-14 && backtracks < 60 && min_pair_ratio(alpha) < 1e-4 {
            alpha *= 0.8;
            backtracks += 1;
        }
        if trace {
            eprintln!(
                "    alpha_aff={alpha_aff:.3e} sigma={sigma:.3e} alpha={alpha:.3e} backtracks={backtracks}"
            );
        }
        if !alpha.is_finite() || alpha <= 1e-14 {
            best.iterations = iter;
            return best;
        }

        let xn: Vec<f64> = (0..n).map(|i| x[i] + alpha * dir.dx[i]).collect();
        let sn: Vec<f64> = (0..m).map(|i| s[i] + alpha * dir.ds[i]).collect();
        let zn: Vec<f64> = (0..m).map(|i| z[i] + alpha * dir.dz[i]).collect();
        let taun = tau + alpha * dir.dtau;
        let kappan = kappa + alpha * dir.dkappa;
        // Stop on the last clean iterate once roundoff breaks interiority.
        if !taun.is_finite()
            || taun <= 0.0
            || kappan <= 0.0
            || !is_interior(data.cones, &sn)
            || !is_interior(data.cones, &zn)
        {
            best.iterations = iter;
            return best;
        }
        x = xn;
        s = sn;
        z = zn;
        tau = taun;
        kappa = kappan;

        // The embedding is scale invariant; renormalize to keep tau near 1.
        if !(0.1..=10.0).contains(&tau) {
            let rho = 1.0 / tau;
            x.iter_mut().for_each(|v| *v *= rho);
            s.iter_mut().for_each(|v| *v *= rho);
            z.iter_mut().for_each(|v| *v *= rho);
            kappa *= rho;
            tau = 1.0;
        }
    }

    best.iterations = max_iter;
    best
}
