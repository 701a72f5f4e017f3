//! Tail initialization and the globally convergent reconstruction loop.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diff::{axpby, constant_vector, divergence, dot, gradient, log_gradient, VectorField3, MODULUS_FLOOR};
use crate::error::{invalid, Error, Result};
use crate::forward::{solve_ls_with, ForwardSolution, GreenKernel, SolverSettings};
use crate::grid::{ComplexField3, Geometry, Grid3, RealField3, WavenumberPartition};
use crate::krylov::norm_real;
use crate::pde::{solve_drift, solve_laplace, DirichletProblem, SolveReport};
use crate::phantom::BACKGROUND_INDEX;
use crate::phase::{retrieve_phased, ComplexPlaneData, IntensityData};
use crate::propagate::{
    complement, propagate_to_boundary, top_face_trace, ComplementedBoundary, PropagatedBoundary, PropagationOptions,
};

type C64 = Complex64;

/// `k eps` for the default derivative step `eps = DEFAULT_K_EPSILON / k_top`.
pub const DEFAULT_K_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlgorithmSettings {
    pub inner_iterations: usize,
    pub c_max: f64,
    /// Step of the x3 difference at the top wavenumber; `None` uses `DEFAULT_K_EPSILON / k_top`.
    pub epsilon: Option<f64>,
    pub stop_window_start: usize,
    pub background_index: f64,
    pub ls_tol: f64,
    pub ls_max_iter: usize,
    pub memory_budget: u64,
    pub tail_drift: TailDrift,
    /// Node layers next to the faces where `c` is reset to 1 after each update.
    pub background_layers: usize,
    pub upwind: bool,
    #[serde(skip)]
    pub propagation: PropagationOptions,
}

impl Default for AlgorithmSettings {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            inner_iterations: 3,
            c_max: 6.0,
            epsilon: None,
            stop_window_start: 3,
            background_index: BACKGROUND_INDEX,
            ls_tol: s.tol,
            ls_max_iter: s.max_iter,
            memory_budget: s.memory_budget,
            tail_drift: TailDrift::Lagged,
            background_layers: 1,
            upwind: false,
            propagation: PropagationOptions::default(),
        }
    }
}

impl AlgorithmSettings {
    pub fn validate(&self) -> Result<()> {
        if self.inner_iterations == 0 {
            return invalid("inner iterations must be >= 1");
        }
        if !(self.c_max > 1.0) {
            return invalid(format!("c_max must be > 1, got {}", self.c_max));
        }
        if self.epsilon.is_some_and(|e| !(e > 0.0)) {
            return invalid("epsilon must be > 0");
        }
        if self.stop_window_start < 2 {
            return invalid("stopping window must start at n >= 2");
        }
        if self.background_layers == 0 {
            return invalid("the face nodes must be reset to background: background_layers >= 1");
        }
        if !(self.background_index >= 1.0) {
            return invalid("background index must be >= 1");
        }
        Ok(())
    }

    fn ls_settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.ls_tol,
            max_iter: self.ls_max_iter,
            points_per_wavelength: 2.0,
            memory_budget: self.memory_budget,
        }
    }
}

/// Boundary data for the tail: `(d1 p / p, d2 p / p, p1 / p)` on the open top
/// face, `(0, 0, i k_top)` on the other faces. Interior entries are zero.
pub fn boundary_vector(p: &[C64], p1: &[C64], grid: &Grid3, k_top: f64) -> Result<VectorField3> {
    let [n0, n1, n2] = grid.counts();
    if p.len() != n0 * n1 || p1.len() != n0 * n1 {
        return invalid("top-face data do not match the grid");
    }
    let h = grid.spacing();
    let floor = |v: C64| {
        if v.norm() < MODULUS_FLOOR {
            C64::new(MODULUS_FLOOR, 0.0)
        } else {
            v
        }
    };
    let mut out = constant_vector(grid, [C64::default(); 3]);
    let vac = [C64::default(), C64::default(), C64::new(0.0, k_top)];
    for k in 0..n2 {
        for j in 0..n1 {
            for i in 0..n0 {
                if !grid.is_boundary(i, j, k) {
                    continue;
                }
                let idx = grid.index(i, j, k);
                let on_gamma = k + 1 == n2 && i > 0 && j > 0 && i + 1 < n0 && j + 1 < n1;
                let v = if on_gamma {
                    let f = |a: usize, b: usize| p[a + n0 * b];
                    let pc = floor(f(i, j));
                    [
                        (f(i + 1, j) - f(i - 1, j)) / (2.0 * h[0]) / pc,
                        (f(i, j + 1) - f(i, j - 1)) / (2.0 * h[1]) / pc,
                        p1[i + n0 * j] / pc,
                    ]
                } else {
                    vac
                };
                for c in 0..3 {
                    out[c].values_mut()[idx] = v[c];
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TailGradient {
    pub grad_v: VectorField3,
    pub grad_q0: VectorField3,
    pub reports: [SolveReport; 3],
}

/// Three Laplace solves for the tail gradient; `grad q0 = grad V0 / k_top`.
pub fn init_tail(boundary: &VectorField3, k_top: f64) -> Result<TailGradient> {
    let mut reports = Vec::with_capacity(3);
    let mut comps = Vec::with_capacity(3);
    for c in boundary {
        let (f, r) = solve_laplace(c)?;
        if !r.converged {
            return Err(Error::NonConvergence {
                solver: "tail Laplace solve",
                residual: r.residual,
                iterations: r.iterations,
            });
        }
        comps.push(f);
        reports.push(r);
    }
    let grad_v: VectorField3 = [comps[0].clone(), comps[1].clone(), comps[2].clone()];
    let grad_q0 = grad_v.clone().map(|f| f.map(|v| v / k_top));
    Ok(TailGradient {
        grad_v,
        grad_q0,
        reports: [reports[0], reports[1], reports[2]],
    })
}

/// `d_k log p` on every face at `ks[n]`, by centered differences in k
/// (one-sided at the ends of the band).
pub fn q_boundary(p_tilde: &[ComplementedBoundary], n: usize) -> Result<ComplexField3> {
    let last = p_tilde
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::InvalidInput("no boundary data".into()))?;
    if last == 0 || n > last {
        return invalid("q boundary needs at least two wavenumbers and n within the band");
    }
    let (a, b) = if n == 0 {
        (0, 1)
    } else if n == last {
        (last - 1, last)
    } else {
        (n - 1, n + 1)
    };
    let (pa, pb) = (&p_tilde[a], &p_tilde[b]);
    let grid = pa.values.grid();
    let dk = pa.k - pb.k;
    let floor = |v: C64| {
        if v.norm() < MODULUS_FLOOR {
            C64::new(MODULUS_FLOOR, 0.0)
        } else {
            v
        }
    };
    let mut out = ComplexField3::filled(grid.clone(), C64::default());
    let [n0, n1, n2] = grid.counts();
    for k in 0..n2 {
        for j in 0..n1 {
            for i in 0..n0 {
                if !grid.is_boundary(i, j, k) {
                    continue;
                }
                let idx = grid.index(i, j, k);
                let z = grid.axis_coord(2, k);
                // divide out exp(i k x3) so the logarithm stays on its principal branch
                let wa = floor(pa.values.values()[idx] * C64::from_polar(1.0, -pa.k * z));
                let wb = floor(pb.values.values()[idx] * C64::from_polar(1.0, -pb.k * z));
                out.values_mut()[idx] = C64::new(0.0, z) + (wa / wb).ln() / dk;
            }
        }
    }
    Ok(out)
}

/// How the `k_n grad q . grad V` term of the q equation is discretized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailDrift {
    /// Part of the operator acting on `q_n`.
    Implicit,
    /// Evaluated at `q_{n-1}` and moved to the right-hand side.
    #[default]
    Lagged,
    /// Like `Lagged`, but the `q_{n-1}` slot is the high-frequency estimate
    /// `grad V / k_top` built from the current `V`. This cuts the feedback of
    /// `q_{n-1}` errors into `q_n`, which grows geometrically under `Lagged`.
    Frozen,
}

/// Accumulated state of the iteration.
#[derive(Clone, Debug)]
pub struct IterState {
    pub n: usize,
    pub i: usize,
    /// `grad q_{n-1}`, held fixed over the inner iterations.
    pub grad_q: VectorField3,
    /// `h sum_{1 <= j < n} grad q_j`.
    pub grad_big_q: VectorField3,
    pub grad_v: VectorField3,
    pub c: RealField3,
}

/// Solves the linearized equation for `q` at `k_n` and returns `q`, its gradient and the solve report.
///
/// With `W = grad Q_{n-1} + h grad q_{n-1}` the implicit form reads
/// `(k_n / 2) Lap q + k_n (grad V - W) . grad q = -div W + div grad V + (grad V - W)^2`.
/// The lagged form keeps only `-W` in the drift and moves `k_n grad q_{n-1} . grad V`
/// to the right-hand side. The frozen form is the lagged form with `grad q_{n-1}`
/// replaced by `grad V / k_top`, where `k_top = k_n + n h`.
pub fn assemble_and_solve_q(
    state: &IterState,
    k_n: f64,
    h: f64,
    q_bc: &ComplexField3,
    tail_drift: TailDrift,
    upwind: bool,
) -> Result<(ComplexField3, VectorField3, SolveReport)> {
    let one = C64::new(1.0, 0.0);
    let frozen_slot;
    let slot = if tail_drift == TailDrift::Frozen {
        let k_top = k_n + state.n as f64 * h;
        frozen_slot = state.grad_v.clone().map(|f| f.map(|v| v / k_top));
        &frozen_slot
    } else {
        &state.grad_q
    };
    let w = axpby(one, &state.grad_big_q, C64::new(h, 0.0), slot);
    let grid = q_bc.grid().clone();
    let div_w = divergence(&w);
    let div_v = divergence(&state.grad_v);
    let diff = axpby(-one, &w, one, &state.grad_v);
    let sq = dot(&diff, &diff);
    let lagged = tail_drift != TailDrift::Implicit;
    let cross = dot(slot, &state.grad_v);
    let rhs_values = (0..grid.len())
        .map(|p| {
            let r = -div_w.values()[p] + div_v.values()[p] + sq.values()[p];
            if lagged {
                r - k_n * cross.values()[p]
            } else {
                r
            }
        })
        .collect();
    let drift = if lagged { w.map(|f| f.map(|v| -v)) } else { diff };
    let problem = DirichletProblem {
        grid: grid.clone(),
        diffusion: 0.5 * k_n,
        drift_coefficient: k_n,
        drift: Some(drift),
        rhs: ComplexField3::from_values(grid, rhs_values)?,
        boundary: q_bc.clone(),
        upwind,
    };
    let (q, report) = solve_drift(&problem)?;
    let grad = gradient(&q);
    Ok((q, grad, report))
}

/// `grad v = -(h grad q + grad Q) + grad V`.
pub fn update_v_gradient(
    grad_q: &VectorField3,
    grad_big_q: &VectorField3,
    grad_v: &VectorField3,
    h: f64,
) -> VectorField3 {
    let one = C64::new(1.0, 0.0);
    let s = axpby(C64::new(h, 0.0), grad_q, one, grad_big_q);
    axpby(-one, &s, one, grad_v)
}

/// `grad Q_n = grad Q_{n-1} + h grad q_n`.
pub fn accumulate(grad_big_q: &VectorField3, grad_q: &VectorField3, h: f64) -> VectorField3 {
    axpby(C64::new(1.0, 0.0), grad_big_q, C64::new(h, 0.0), grad_q)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClampStats {
    pub imag_max: f64,
    pub below_one: f64,
    pub above_max: f64,
}

/// `c = clamp(Re(-(div grad v + grad v . grad v) / k^2), 1, c_max)`.
pub fn compute_c(grad_v: &VectorField3, k: f64, c_max: f64) -> (RealField3, ClampStats) {
    let div = divergence(grad_v);
    let sq = dot(grad_v, grad_v);
    let n = div.values().len();
    let mut stats = ClampStats::default();
    let mut low = 0usize;
    let mut high = 0usize;
    let values: Vec<f64> = div
        .values()
        .iter()
        .zip(sq.values())
        .map(|(d, s)| {
            let raw = -(d + s) / (k * k);
            stats.imag_max = stats.imag_max.max(raw.im.abs());
            if raw.re < 1.0 {
                low += 1;
            } else if raw.re > c_max {
                high += 1;
            }
            if raw.re.is_nan() {
                f64::NAN
            } else {
                raw.re.clamp(1.0, c_max)
            }
        })
        .collect();
    stats.below_one = low as f64 / n as f64;
    stats.above_max = high as f64 / n as f64;
    (
        RealField3::from_values(div.grid().clone(), values).expect("grid length"),
        stats,
    )
}

/// Sets `c = 1` on nodes fewer than `layers` steps from a face; the medium is
/// known to be background near the boundary of the domain.
pub fn reset_boundary_layer(c: &mut RealField3, layers: usize) {
    let g = c.grid().clone();
    let counts = g.counts();
    for (p, v) in c.values_mut().iter_mut().enumerate() {
        let idx = g.unravel(p);
        if (0..3).any(|a| idx[a] < layers || idx[a] + layers >= counts[a]) {
            *v = 1.0;
        }
    }
}

/// One line of the per-iterate log.
#[derive(Clone, Debug, Serialize)]
pub struct IterRecord {
    pub n: usize,
    pub i: usize,
    pub k_n: f64,
    pub q_solve: SolveReport,
    pub ls_iterations: usize,
    pub ls_residual: f64,
    pub ls_converged: bool,
    pub clamp: ClampStats,
    pub c_peak: f64,
    pub c_peak_location: [f64; 3],
    /// `||c_{n-1} - c_n|| / ||c_n||`, on the last inner iteration for `n >= 2`.
    pub relative_change: Option<f64>,
    pub n_comp_so_far: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HistoryEntry {
    pub n: usize,
    pub k_n: f64,
    pub relative_change: f64,
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    /// `c = n_rel^2` at the selected iterate.
    pub c: RealField3,
    pub n_rel: RealField3,
    /// `background_index * max n_rel`.
    pub n_comp: f64,
    pub n_star: usize,
    pub history: Vec<HistoryEntry>,
    /// Location of the maximum of `c`.
    pub peak_location: [f64; 3],
    /// `c_n` for every completed outer step.
    pub iterates: Vec<RealField3>,
    /// Outer step after which the loop stopped because a q or volume solve
    /// did not converge. Later steps would only feed on a diverged state.
    pub halted_at: Option<usize>,
    pub clamp_fraction: Option<f64>,
    pub tail_reports: [SolveReport; 3],
}

fn rel_change(prev: &RealField3, cur: &RealField3) -> f64 {
    let d: Vec<f64> = prev.values().iter().zip(cur.values()).map(|(a, b)| a - b).collect();
    norm_real(&d) / norm_real(cur.values())
}

fn check_domain(geometry: &Geometry, domain: &Grid3) -> Result<()> {
    let a = domain.bbox().as_array();
    let b = geometry.omega.as_array();
    if a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9 * (1.0 + y.abs())) {
        return invalid("domain grid does not cover the geometry's domain");
    }
    if domain.counts().iter().any(|&c| c < 4) {
        return invalid("domain grid needs at least 4 nodes per axis");
    }
    Ok(())
}

/// Retrieval, propagation and reconstruction from intensity data.
pub fn run(
    intensity: &IntensityData,
    geometry: &Geometry,
    domain: &Grid3,
    settings: &AlgorithmSettings,
    observer: &mut dyn FnMut(&IterRecord),
) -> Result<ReconstructionResult> {
    if intensity.plane() != &geometry.measurement {
        return Err(
            Error::InvalidInput("intensity plane differs from the measurement plane".into()).in_stage("retrieve"),
        );
    }
    let phased = retrieve_phased(intensity).map_err(|e| e.in_stage("retrieve"))?;
    log::info!("phase retrieval clamp fraction {:.4}", phased.clamp_fraction());
    let mut result = run_phased(&phased.data, geometry, domain, settings, observer)?;
    result.clamp_fraction = Some(phased.clamp_fraction());
    Ok(result)
}

/// Propagation and reconstruction from phased data on the measurement plane.
pub fn run_phased(
    phased: &ComplexPlaneData,
    geometry: &Geometry,
    domain: &Grid3,
    settings: &AlgorithmSettings,
    observer: &mut dyn FnMut(&IterRecord),
) -> Result<ReconstructionResult> {
    settings.validate()?;
    let k_top = phased.ks().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let eps = settings.epsilon.unwrap_or(DEFAULT_K_EPSILON / k_top);
    let boundary = propagate_to_boundary(phased, geometry.gamma_z(), eps, &settings.propagation)
        .map_err(|e| e.in_stage("propagate"))?;
    run_from_boundary(&boundary, geometry, domain, settings, observer)
}

/// The iteration proper, starting from data already on the plane of the data boundary.
pub fn run_from_boundary(
    boundary: &PropagatedBoundary,
    geometry: &Geometry,
    domain: &Grid3,
    settings: &AlgorithmSettings,
    observer: &mut dyn FnMut(&IterRecord),
) -> Result<ReconstructionResult> {
    settings.validate()?;
    check_domain(geometry, domain)?;
    let partition = WavenumberPartition::from_values(boundary.p.ks().to_vec())?;
    let ks = partition.values();
    let big_n = partition.intervals();
    if big_n < settings.stop_window_start {
        return invalid(format!(
            "need at least {} wavenumber intervals, got {big_n}",
            settings.stop_window_start
        ));
    }
    let k_top = partition.k_high();
    let needed = domain.ls_memory_bytes();
    if needed > settings.memory_budget {
        return Err(Error::ResourceRefused {
            what: format!("reconstruction on {:?} nodes", domain.counts()),
            needed_bytes: needed,
            budget_bytes: settings.memory_budget,
        });
    }
    let plane = boundary.p.plane();

    // complemented boundary data for every wavenumber
    let p_tilde: Vec<ComplementedBoundary> = ks
        .iter()
        .enumerate()
        .map(|(m, &k)| complement(&top_face_trace(boundary.p.slice(m), plane, domain), domain, k))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("complement"))?;

    let top = top_face_trace(boundary.p.slice(0), plane, domain);
    let top1 = top_face_trace(&boundary.p1, plane, domain);
    let tail = boundary_vector(&top, &top1, domain, k_top)
        .and_then(|r| init_tail(&r, k_top))
        .map_err(|e| e.in_stage("tail"))?;
    iterate(&p_tilde, &tail, &partition, domain, settings, observer)
}

/// The double loop over wavenumbers and inner iterations, from complemented
/// boundary data (one entry per wavenumber, descending) and an initial tail.
pub fn iterate(
    p_tilde: &[ComplementedBoundary],
    tail: &TailGradient,
    partition: &WavenumberPartition,
    domain: &Grid3,
    settings: &AlgorithmSettings,
    observer: &mut dyn FnMut(&IterRecord),
) -> Result<ReconstructionResult> {
    settings.validate()?;
    let ks = partition.values();
    let big_n = partition.intervals();
    if big_n < settings.stop_window_start || p_tilde.len() != ks.len() {
        return invalid(format!(
            "need at least {} wavenumber intervals and boundary data for each, got {big_n}",
            settings.stop_window_start
        ));
    }
    let h = partition.step();
    let k_top = partition.k_high();
    let kernel = GreenKernel::new(domain.counts(), domain.spacing(), k_top);
    let ls = settings.ls_settings();
    let zero = constant_vector(domain, [C64::default(); 3]);
    let mut state = IterState {
        n: 0,
        i: 0,
        grad_q: tail.grad_q0.clone(),
        grad_big_q: zero,
        grad_v: tail.grad_v.clone(),
        c: RealField3::filled(domain.clone(), 1.0),
    };
    let mut u_bar: Option<ForwardSolution> = None;
    let mut iterates: Vec<RealField3> = Vec::with_capacity(big_n);
    let mut history = Vec::new();
    let mut halted_at = None;

    for n in 1..=big_n {
        let k_n = ks[n];
        let q_bc = q_boundary(p_tilde, n).map_err(|e| e.in_stage("iterate"))?;
        state.n = n;
        let mut failed = false;
        let mut last_q = state.grad_q.clone();
        for i in 1..=settings.inner_iterations {
            state.i = i;
            let (_, grad_q, q_report) =
                assemble_and_solve_q(&state, k_n, h, &q_bc, settings.tail_drift, settings.upwind)
                    .map_err(|e| e.in_stage("iterate"))?;
            let grad_v_n = update_v_gradient(&grad_q, &state.grad_big_q, &state.grad_v, h);
            let (mut c, clamp) = compute_c(&grad_v_n, k_n, settings.c_max);
            reset_boundary_layer(&mut c, settings.background_layers);
            if !c.all_finite() {
                return Err(Error::NonFinite(format!("c at n = {n}, i = {i}")).in_stage("iterate"));
            }
            let sol =
                solve_ls_with(&c, &kernel, &ls, u_bar.as_ref().map(|s| &s.u)).map_err(|e| e.in_stage("iterate"))?;
            if !sol.converged {
                log::warn!("continuing with the best volume-solve iterate at n = {n}, i = {i}");
            }
            failed |= !sol.converged || !q_report.converged;
            state.grad_v = log_gradient(&sol.u, k_top);
            last_q = grad_q;
            let (peak_idx, peak) = c.argmax();
            let n_comp_so_far = settings.background_index * peak.sqrt();
            let relative_change = (i == settings.inner_iterations)
                .then(|| iterates.last().map(|prev| rel_change(prev, &c)))
                .flatten();
            observer(&IterRecord {
                n,
                i,
                k_n,
                q_solve: q_report,
                ls_iterations: sol.iterations,
                ls_residual: sol.residual,
                ls_converged: sol.converged,
                clamp,
                c_peak: peak,
                c_peak_location: c.grid().coord_of(peak_idx),
                relative_change,
                n_comp_so_far,
            });
            state.c = c;
            u_bar = Some(sol);
            if failed {
                break;
            }
        }
        state.grad_q = last_q;
        if let Some(prev) = iterates.last() {
            history.push(HistoryEntry {
                n,
                k_n,
                relative_change: rel_change(prev, &state.c),
            });
        }
        iterates.push(state.c.clone());
        state.grad_big_q = accumulate(&state.grad_big_q, &state.grad_q, h);
        if failed && n < big_n {
            log::warn!("stopping after n = {n}: an inner solve did not converge");
            halted_at = Some(n);
            break;
        }
    }

    let n_star = history
        .iter()
        .filter(|e| e.n >= settings.stop_window_start)
        .min_by(|a, b| a.relative_change.total_cmp(&b.relative_change))
        .map(|e| e.n)
        .unwrap_or(iterates.len());
    let c = iterates[n_star - 1].clone();
    let n_rel = c.map(|v| v.sqrt());
    let (arg, peak) = c.argmax();
    log::info!("selected iterate n* = {n_star}, peak c = {peak:.4}");
    Ok(ReconstructionResult {
        n_comp: settings.background_index * n_rel.max(),
        peak_location: c.grid().coord_of(arg),
        c,
        n_rel,
        n_star,
        history,
        iterates,
        halted_at,
        clamp_fraction: None,
        tail_reports: tail.reports,
    })
}
