//! Numerical linearization and modal analysis: eigenvalues, damping and
//! frequency, mode shapes, participation factors, modal controllability,
//! observability and residues.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use ndarray_linalg::Eig;
use thiserror::Error;

use crate::linalg::{inverse_with_cond, C64};
use crate::network::Topology;
use crate::simulate::{Algebraic, SystemModel};

#[derive(Debug, Error)]
pub enum SmallSignalError {
    #[error("not at equilibrium: |f(x0, u0)| = {residual:.3e} at {label}")]
    NotAtEquilibrium { residual: f64, label: String },
    #[error("finite-difference step underflows for {0}")]
    StepUnderflow(String),
    #[error("unknown label {0}")]
    UnknownLabel(String),
    #[error("eigenvector matrix is ill-conditioned (condition {0:.3e})")]
    DefectiveMatrix(f64),
    #[error("eigendecomposition failed: {0}")]
    Lapack(String),
    #[error("no state matches {0}")]
    EmptyFilter(String),
    #[error("mode index {0} out of range")]
    BadMode(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A system `dx/dt = f(x, u)`, `y = g(x, u)` that can be linearized.
pub trait DynamicSystem {
    fn state_labels(&self) -> Vec<String>;
    fn input_labels(&self) -> Vec<String>;
    fn output_labels(&self) -> Vec<String>;
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
    fn output(&self, x: &[f64], u: &[f64], y: &mut [f64]);
    /// Reference state index and a direction `r` with `f(x + e r) = f(x)`.
    fn angle_symmetry(&self) -> Option<(usize, Vec<f64>)> {
        None
    }
}

/// Closure-backed system; outputs are the states.
pub struct FnSystem<F> {
    pub f: F,
    pub n_states: usize,
    pub n_inputs: usize,
}

impl<F: Fn(&[f64], &[f64], &mut [f64])> DynamicSystem for FnSystem<F> {
    fn state_labels(&self) -> Vec<String> {
        (0..self.n_states).map(|k| format!("x{}", k + 1)).collect()
    }
    fn input_labels(&self) -> Vec<String> {
        (0..self.n_inputs).map(|k| format!("u{}", k + 1)).collect()
    }
    fn output_labels(&self) -> Vec<String> {
        self.state_labels()
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        (self.f)(x, u, dx)
    }
    fn output(&self, x: &[f64], _u: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x)
    }
}

impl DynamicSystem for SystemModel {
    fn state_labels(&self) -> Vec<String> {
        SystemModel::state_labels(self)
    }
    fn input_labels(&self) -> Vec<String> {
        SystemModel::input_labels(self)
    }
    fn output_labels(&self) -> Vec<String> {
        SystemModel::output_labels(self)
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let mut alg = Algebraic::default();
        self.eval(Topology::Pre, x, u, dx, &mut alg);
    }
    fn output(&self, x: &[f64], u: &[f64], y: &mut [f64]) {
        self.outputs(Topology::Pre, x, u, y);
    }
    fn angle_symmetry(&self) -> Option<(usize, Vec<f64>)> {
        SystemModel::angle_symmetry(self)
    }
}

#[derive(Debug, Clone)]
pub struct LinearizeOptions {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub relative_angles: bool,
    pub equilibrium_tol: f64,
    /// Multiplies every finite-difference step.
    pub step_scale: f64,
}

impl LinearizeOptions {
    pub fn new(inputs: Vec<String>, outputs: Vec<String>) -> Self {
        Self {
            inputs,
            outputs,
            relative_angles: false,
            equilibrium_tol: 1e-5,
            step_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
    pub d: Array2<f64>,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
    pub equilibrium: Vec<f64>,
    /// Index of the reference machine angle removed by the relative-angle
    /// reduction, if applied.
    pub reference_state: Option<usize>,
}

impl LinearModel {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_index(&self, label: &str) -> Result<usize, SmallSignalError> {
        self.input_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| SmallSignalError::UnknownLabel(label.to_string()))
    }

    pub fn output_index(&self, label: &str) -> Result<usize, SmallSignalError> {
        self.output_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| SmallSignalError::UnknownLabel(label.to_string()))
    }

    /// Single-input single-output slice `(b, c, d)`.
    pub fn siso(&self, input: &str, output: &str) -> Result<(Array1<f64>, Array1<f64>, f64), SmallSignalError> {
        let i = self.input_index(input)?;
        let o = self.output_index(output)?;
        Ok((self.b.column(i).to_owned(), self.c.row(o).to_owned(), self.d[[o, i]]))
    }

    /// Write A, B, C, D as dense labelled CSV files.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<String>, SmallSignalError> {
        let mats = [
            ("A.csv", &self.a, &self.state_labels, &self.state_labels),
            ("B.csv", &self.b, &self.state_labels, &self.input_labels),
            ("C.csv", &self.c, &self.output_labels, &self.state_labels),
            ("D.csv", &self.d, &self.output_labels, &self.input_labels),
        ];
        let mut names = Vec::new();
        for (name, m, rows, cols) in mats {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            write!(f, "row")?;
            for c in cols.iter() {
                write!(f, ",{c}")?;
            }
            writeln!(f)?;
            for (r, label) in rows.iter().enumerate() {
                write!(f, "{label}")?;
                for v in m.row(r) {
                    write!(f, ",{v}")?;
                }
                writeln!(f)?;
            }
            f.flush()?;
            names.push(name.to_string());
        }
        Ok(names)
    }
}

fn find(labels: &[String], wanted: &[String]) -> Result<Vec<usize>, SmallSignalError> {
    wanted
        .iter()
        .map(|w| {
            labels
                .iter()
                .position(|l| l == w)
                .ok_or_else(|| SmallSignalError::UnknownLabel(w.clone()))
        })
        .collect()
}

pub fn fd_step(x: f64, scale: f64) -> f64 {
    1e-6_f64.max(1e-6 * x.abs()) * scale
}

/// Central-difference linearization about `(x0, u0)`.
pub fn linearize<S: DynamicSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    u0: &[f64],
    opts: &LinearizeOptions,
) -> Result<LinearModel, SmallSignalError> {
    let n = x0.len();
    let state_labels = sys.state_labels();
    let all_outputs = sys.output_labels();
    let in_idx = find(&sys.input_labels(), &opts.inputs)?;
    let out_idx = find(&all_outputs, &opts.outputs)?;
    let ny = all_outputs.len();

    let mut f0 = vec![0.0; n];
    sys.rhs(x0, u0, &mut f0);
    if let Some((k, r)) = f0
        .iter()
        .enumerate()
        .map(|(k, v)| (k, v.abs()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
    {
        if !(r < opts.equilibrium_tol) {
            return Err(SmallSignalError::NotAtEquilibrium {
                residual: r,
                label: state_labels[k].clone(),
            });
        }
    }

    let mut a = Array2::<f64>::zeros((n, n));
    let mut c = Array2::<f64>::zeros((out_idx.len(), n));
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    let mut yp = vec![0.0; ny];
    let mut ym = vec![0.0; ny];
    let mut x = x0.to_vec();
    for j in 0..n {
        let h = fd_step(x0[j], opts.step_scale);
        if x0[j] + h == x0[j] {
            return Err(SmallSignalError::StepUnderflow(state_labels[j].clone()));
        }
        x[j] = x0[j] + h;
        sys.rhs(&x, u0, &mut fp);
        sys.output(&x, u0, &mut yp);
        x[j] = x0[j] - h;
        sys.rhs(&x, u0, &mut fm);
        sys.output(&x, u0, &mut ym);
        x[j] = x0[j];
        for i in 0..n {
            a[[i, j]] = (fp[i] - fm[i]) / (2.0 * h);
        }
        for (r, &o) in out_idx.iter().enumerate() {
            c[[r, j]] = (yp[o] - ym[o]) / (2.0 * h);
        }
    }
    let in_labels = sys.input_labels();
    let mut b = Array2::<f64>::zeros((n, in_idx.len()));
    let mut d = Array2::<f64>::zeros((out_idx.len(), in_idx.len()));
    let mut u = u0.to_vec();
    for (col, &j) in in_idx.iter().enumerate() {
        let h = fd_step(u0[j], opts.step_scale);
        if u0[j] + h == u0[j] {
            return Err(SmallSignalError::StepUnderflow(in_labels[j].clone()));
        }
        u[j] = u0[j] + h;
        sys.rhs(x0, &u, &mut fp);
        sys.output(x0, &u, &mut yp);
        u[j] = u0[j] - h;
        sys.rhs(x0, &u, &mut fm);
        sys.output(x0, &u, &mut ym);
        u[j] = u0[j];
        for i in 0..n {
            b[[i, col]] = (fp[i] - fm[i]) / (2.0 * h);
        }
        for (r, &o) in out_idx.iter().enumerate() {
            d[[r, col]] = (yp[o] - ym[o]) / (2.0 * h);
        }
    }
    let mut model = LinearModel {
        a,
        b,
        c,
        d,
        state_labels,
        input_labels: opts.inputs.clone(),
        output_labels: opts.outputs.clone(),
        equilibrium: x0.to_vec(),
        reference_state: None,
    };
    if opts.relative_angles {
        match sys.angle_symmetry() {
            Some((reference, r)) => model = reduce_reference(&model, reference, &r),
            None => log::warn!("relative angles requested but the model has no angle symmetry; keeping absolute angles"),
        }
    }
    Ok(model)
}

/// Remove the reference coordinate along symmetry direction `r`
/// (`r[reference] = 1`): new coordinates `z_k = x_k - r_k x_ref`.
pub fn reduce_reference(m: &LinearModel, reference: usize, r: &[f64]) -> LinearModel {
    let n = m.n_states();
    let keep: Vec<usize> = (0..n).filter(|&k| k != reference).collect();
    let nk = keep.len();
    let a = Array2::from_shape_fn((nk, nk), |(i, j)| {
        let (ki, kj) = (keep[i], keep[j]);
        m.a[[ki, kj]] - r[ki] * m.a[[reference, kj]]
    });
    let b = Array2::from_shape_fn((nk, m.b.ncols()), |(i, j)| {
        let ki = keep[i];
        m.b[[ki, j]] - r[ki] * m.b[[reference, j]]
    });
    let c = Array2::from_shape_fn((m.c.nrows(), nk), |(i, j)| m.c[[i, keep[j]]]);
    LinearModel {
        a,
        b,
        c,
        d: m.d.clone(),
        state_labels: keep.iter().map(|&k| m.state_labels[k].clone()).collect(),
        input_labels: m.input_labels.clone(),
        output_labels: m.output_labels.clone(),
        equilibrium: m.equilibrium.clone(),
        reference_state: Some(reference),
    }
}

#[derive(Debug, Clone)]
pub struct ModalReport {
    pub eigenvalues: Vec<C64>,
    pub freq_hz: Vec<f64>,
    pub damping_pct: Vec<f64>,
    /// Columns are right eigenvectors.
    pub right_vectors: Array2<C64>,
    /// Rows are left eigenvectors, `left * right = I`.
    pub left_vectors: Array2<C64>,
    /// `participation[[k, i]]`: state `k` in mode `i`.
    pub participation: Array2<f64>,
    pub participation_normalized: Array2<f64>,
    pub state_labels: Vec<String>,
}

pub fn damping_pct(l: C64) -> f64 {
    let mag = l.norm();
    if mag == 0.0 {
        100.0
    } else {
        -l.re / mag * 100.0
    }
}

pub fn freq_hz(l: C64) -> f64 {
    l.im.abs() / (2.0 * PI)
}

pub fn eigenanalysis(model: &LinearModel) -> Result<ModalReport, SmallSignalError> {
    eigen_decompose(&model.a, &model.state_labels)
}

pub fn eigen_decompose(a: &Array2<f64>, labels: &[String]) -> Result<ModalReport, SmallSignalError> {
    let n = a.nrows();
    if n == 0 {
        let e = Array2::<C64>::zeros((0, 0));
        return Ok(ModalReport {
            eigenvalues: vec![],
            freq_hz: vec![],
            damping_pct: vec![],
            right_vectors: e.clone(),
            left_vectors: e,
            participation: Array2::zeros((0, 0)),
            participation_normalized: Array2::zeros((0, 0)),
            state_labels: labels.to_vec(),
        });
    }
    let a = a.as_standard_layout().to_owned();
    let (vals, vecs) = a.eig().map_err(|e| SmallSignalError::Lapack(e.to_string()))?;
    let (vals, vecs) = pair_conjugates(vals.to_vec(), vecs);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        damping_pct(vals[i])
            .total_cmp(&damping_pct(vals[j]))
            .then(vals[j].im.total_cmp(&vals[i].im))
    });
    let eigenvalues: Vec<C64> = order.iter().map(|&i| vals[i]).collect();
    let right = Array2::from_shape_fn((n, n), |(r, c)| vecs[[r, order[c]]]);
    let (left, cond) = inverse_with_cond(&right).ok_or(SmallSignalError::DefectiveMatrix(f64::INFINITY))?;
    if cond > 1e12 {
        return Err(SmallSignalError::DefectiveMatrix(cond));
    }
    let (p, pn) = participation_from(&right, &left);
    Ok(ModalReport {
        freq_hz: eigenvalues.iter().map(|&l| freq_hz(l)).collect(),
        damping_pct: eigenvalues.iter().map(|&l| damping_pct(l)).collect(),
        eigenvalues,
        right_vectors: right,
        left_vectors: left,
        participation: p,
        participation_normalized: pn,
        state_labels: labels.to_vec(),
    })
}

/// Make complex eigenpairs exact conjugates of each other and real
/// eigenvalues exactly real.
fn pair_conjugates(mut vals: Vec<C64>, mut vecs: Array2<C64>) -> (Vec<C64>, Array2<C64>) {
    let n = vals.len();
    let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.norm()));
    let tol = 1e-10 * scale;
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        if vals[i].im.abs() <= tol {
            vals[i].im = 0.0;
            // Rotate the vector real: divide by the phase of its largest entry.
            let col = vecs.column(i);
            let big = col.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
            let ph = if big.norm() > 0.0 { big / big.norm() } else { C64::new(1.0, 0.0) };
            for r in 0..n {
                let v = vecs[[r, i]] / ph;
                vecs[[r, i]] = C64::new(v.re, 0.0);
            }
            continue;
        }
        let target = vals[i].conj();
        let partner = (0..n)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| (vals[a] - target).norm().total_cmp(&(vals[b] - target).norm()));
        if let Some(j) = partner {
            used[j] = true;
            let (pos, neg) = if vals[i].im > 0.0 { (i, j) } else { (j, i) };
            let l = if vals[i].im > 0.0 { vals[i] } else { vals[i].conj() };
            vals[pos] = l;
            vals[neg] = l.conj();
            for r in 0..n {
                let v = vecs[[r, pos]];
                vecs[[r, neg]] = v.conj();
            }
        }
    }
    (vals, vecs)
}

/// `p_ki = |v_ki||w_ik| / sum_k |v_ki||w_ik|`, and each column scaled by its
/// own maximum.
pub fn participation_from(right: &Array2<C64>, left: &Array2<C64>) -> (Array2<f64>, Array2<f64>) {
    let n = right.nrows();
    let mut p = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut sum = 0.0;
        for k in 0..n {
            let v = right[[k, i]].norm() * left[[i, k]].norm();
            p[[k, i]] = v;
            sum += v;
        }
        if sum > 0.0 {
            for k in 0..n {
                p[[k, i]] /= sum;
            }
        }
    }
    let mut pn = p.clone();
    for i in 0..n {
        let max = (0..n).map(|k| p[[k, i]]).fold(0.0, f64::max);
        if max > 0.0 {
            for k in 0..n {
                pn[[k, i]] /= max;
            }
        }
    }
    (p, pn)
}

pub fn participation(report: &ModalReport) -> (Array2<f64>, Array2<f64>) {
    participation_from(&report.right_vectors, &report.left_vectors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeShapeEntry {
    pub state: String,
    pub value: C64,
    pub magnitude: f64,
    pub angle_deg: f64,
}

/// Glob match supporting `*` and `?`.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let (mut star, mut mark) = (None, 0);
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some(pi);
            mark = ti;
            pi += 1;
        } else if let Some(s) = star {
            pi = s + 1;
            mark += 1;
            ti = mark;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

/// Right-eigenvector entries of `mode` for states matching `filter`, scaled
/// so the largest selected entry is `1∠0°`.
pub fn mode_shape(report: &ModalReport, mode: usize, filter: &str) -> Result<Vec<ModeShapeEntry>, SmallSignalError> {
    if mode >= report.eigenvalues.len() {
        return Err(SmallSignalError::BadMode(mode));
    }
    let picked: Vec<usize> = (0..report.state_labels.len())
        .filter(|&k| glob_match(filter, &report.state_labels[k]))
        .collect();
    if picked.is_empty() {
        return Err(SmallSignalError::EmptyFilter(filter.to_string()));
    }
    let col = report.right_vectors.column(mode);
    let big = picked
        .iter()
        .map(|&k| col[k])
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap();
    let scale = if big.norm() > 0.0 { big } else { C64::new(1.0, 0.0) };
    Ok(picked
        .iter()
        .map(|&k| {
            let v = col[k] / scale;
            ModeShapeEntry {
                state: report.state_labels[k].clone(),
                value: v,
                magnitude: v.norm(),
                angle_deg: v.arg().to_degrees(),
            }
        })
        .collect())
}

/// Oscillatory modes (one per conjugate pair, positive frequency) with
/// damping below `zeta_threshold_pct`, in ascending damping order.
pub fn lightly_damped_filter(report: &ModalReport, zeta_threshold_pct: f64) -> Vec<usize> {
    let scale = report.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.norm()));
    (0..report.eigenvalues.len())
        .filter(|&i| report.eigenvalues[i].im > 1e-9 * scale && report.damping_pct[i] < zeta_threshold_pct)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidueEntry {
    pub mode: usize,
    pub input: String,
    pub output: String,
    pub controllability: C64,
    pub observability: C64,
    pub residue: C64,
    /// Controllability magnitude over its per-mode maximum across inputs.
    pub ctrl_norm: f64,
    /// Observability magnitude over its per-mode maximum across outputs.
    pub obs_norm: f64,
    /// Residue magnitude over its per-mode, per-output maximum across inputs.
    pub res_norm: f64,
    pub res_phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidueReport {
    pub entries: Vec<ResidueEntry>,
    pub n_inputs: usize,
    pub n_outputs: usize,
}

impl ResidueReport {
    pub fn entry(&self, mode: usize, input: usize, output: usize) -> &ResidueEntry {
        &self.entries[(mode * self.n_outputs + output) * self.n_inputs + input]
    }

    pub fn n_modes(&self) -> usize {
        self.entries.len() / (self.n_inputs * self.n_outputs).max(1)
    }
}

pub fn residues(model: &LinearModel, report: &ModalReport) -> ResidueReport {
    let n = report.eigenvalues.len();
    let (p, q) = (model.b.ncols(), model.c.nrows());
    let mut entries = Vec::with_capacity(n * p * q);
    for i in 0..n {
        let ctrl: Vec<C64> = (0..p)
            .map(|j| (0..n).map(|k| report.left_vectors[[i, k]] * model.b[[k, j]]).sum())
            .collect();
        let obs: Vec<C64> = (0..q)
            .map(|o| (0..n).map(|k| report.right_vectors[[k, i]] * model.c[[o, k]]).sum())
            .collect();
        let cmax = ctrl.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let omax = obs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let ratio = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
        for (o, &ob) in obs.iter().enumerate() {
            let rmax = ctrl.iter().map(|c| (ob * c).norm()).fold(0.0, f64::max);
            for (j, &ct) in ctrl.iter().enumerate() {
                let r = ob * ct;
                entries.push(ResidueEntry {
                    mode: i,
                    input: model.input_labels[j].clone(),
                    output: model.output_labels[o].clone(),
                    controllability: ct,
                    observability: ob,
                    residue: r,
                    ctrl_norm: ratio(ct.norm(), cmax),
                    obs_norm: ratio(ob.norm(), omax),
                    res_norm: ratio(r.norm(), rmax),
                    res_phase_deg: r.arg().to_degrees(),
                });
            }
        }
    }
    ResidueReport {
        entries,
        n_inputs: p,
        n_outputs: q,
    }
}

/// `sum_i R_i / (s - lambda_i) + D` for one input/output pair.
pub fn residue_transfer(model: &LinearModel, report: &ModalReport, rr: &ResidueReport, input: usize, output: usize, s: C64) -> C64 {
    let mut g = C64::new(model.d[[output, input]], 0.0);
    for (i, &l) in report.eigenvalues.iter().enumerate() {
        g += rr.entry(i, input, output).residue / (s - l);
    }
    g
}

/// Machines ranked as damping-controller sites by the co-located residue
/// `G{k}.v_ref -> G{k}.omega`, summed over `modes` after per-mode
/// normalization. Highest first.
pub fn best_sites(model: &LinearModel, rr: &ResidueReport, modes: &[usize]) -> Vec<(String, f64)> {
    let mut pairs = Vec::new();
    for (j, inp) in model.input_labels.iter().enumerate() {
        if let Some(g) = inp.strip_suffix(".v_ref") {
            if let Some(o) = model.output_labels.iter().position(|l| *l == format!("{g}.omega")) {
                pairs.push((g.to_string(), j, o));
            }
        }
    }
    let mut score = vec![0.0; pairs.len()];
    for &m in modes {
        let mags: Vec<f64> = pairs.iter().map(|&(_, j, o)| rr.entry(m, j, o).residue.norm()).collect();
        let max = mags.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            for (s, v) in score.iter_mut().zip(&mags) {
                *s += v / max;
            }
        }
    }
    let mut out: Vec<(String, f64)> = pairs.into_iter().map(|p| p.0).zip(score).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

pub fn write_modes_csv(report: &ModalReport, threshold: f64, dir: &Path) -> Result<Vec<String>, SmallSignalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("modes.csv"))?);
    writeln!(f, "re,im,freq_hz,damping_pct")?;
    for (i, l) in report.eigenvalues.iter().enumerate() {
        writeln!(f, "{},{},{},{}", l.re, l.im, report.freq_hz[i], report.damping_pct[i])?;
    }
    f.flush()?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("lightly_damped.csv"))?);
    writeln!(f, "mode,re,im,freq_hz,damping_pct")?;
    for i in lightly_damped_filter(report, threshold) {
        let l = report.eigenvalues[i];
        writeln!(f, "{},{},{},{},{}", i + 1, l.re, l.im, report.freq_hz[i], report.damping_pct[i])?;
    }
    f.flush()?;
    Ok(vec!["modes.csv".into(), "lightly_damped.csv".into()])
}

pub fn write_mode_shapes_csv(report: &ModalReport, modes: &[usize], filter: &str, dir: &Path) -> Result<Vec<String>, SmallSignalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("mode_shapes.csv"))?);
    writeln!(f, "mode,state,magnitude,angle_deg")?;
    for &m in modes {
        for e in mode_shape(report, m, filter)? {
            writeln!(f, "{},{},{},{}", m + 1, e.state, e.magnitude, e.angle_deg)?;
        }
    }
    f.flush()?;
    Ok(vec!["mode_shapes.csv".into()])
}

pub fn write_participation_csv(report: &ModalReport, dir: &Path) -> Result<Vec<String>, SmallSignalError> {
    for (name, m) in [
        ("participation.csv", &report.participation),
        ("participation_normalized.csv", &report.participation_normalized),
    ] {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
        write!(f, "state")?;
        for i in 0..m.ncols() {
            write!(f, ",mode{}", i + 1)?;
        }
        writeln!(f)?;
        for (k, label) in report.state_labels.iter().enumerate() {
            write!(f, "{label}")?;
            for v in m.row(k) {
                write!(f, ",{v}")?;
            }
            writeln!(f)?;
        }
        f.flush()?;
    }
    Ok(vec!["participation.csv".into(), "participation_normalized.csv".into()])
}

pub fn write_residues_csv(rr: &ResidueReport, modes: &[usize], dir: &Path) -> Result<Vec<String>, SmallSignalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("residues.csv"))?);
    writeln!(f, "mode,input,output,ctrl_mag,obs_mag,res_mag,res_phase_deg")?;
    for e in rr.entries.iter().filter(|e| modes.contains(&e.mode)) {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            e.mode + 1,
            e.input,
            e.output,
            e.ctrl_norm,
            e.obs_norm,
            e.res_norm,
            e.res_phase_deg
        )?;
    }
    f.flush()?;
    Ok(vec!["residues.csv".into()])
}
