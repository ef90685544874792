//! Full Newton-Raphson AC power flow in polar coordinates.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use ndarray_linalg::Solve;
use thiserror::Error;

use crate::case_io::{BusKind, NetworkCase};
use crate::linalg::C64;
use crate::network::{build_ybus, AdmittanceMatrix, NetworkError};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("power flow diverged after {iterations} iterations (mismatch {mismatch:.3e})")]
    Diverged { iterations: usize, mismatch: f64 },
    #[error("power-flow Jacobian is singular")]
    SingularJacobian,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub bus_ids: Vec<u32>,
    pub v_mag: Vec<f64>,
    /// Radians.
    pub v_ang: Vec<f64>,
    /// Net injection (generation minus load) per bus.
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
    /// Max mismatch before each Newton update and after the last one.
    pub mismatch_history: Vec<f64>,
}

impl PowerFlowSolution {
    pub fn voltages(&self) -> Vec<C64> {
        self.v_mag
            .iter()
            .zip(&self.v_ang)
            .map(|(&m, &a)| C64::from_polar(m, a))
            .collect()
    }

    /// Net complex injection at bus position `k`.
    pub fn s_inj(&self, k: usize) -> C64 {
        C64::new(self.p_inj[k], self.q_inj[k])
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), PowerFlowError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "bus,v_mag,theta_deg,p_inj,q_inj")?;
        for k in 0..self.bus_ids.len() {
            writeln!(
                f,
                "{},{:.10},{:.10},{:.10},{:.10}",
                self.bus_ids[k],
                self.v_mag[k],
                self.v_ang[k].to_degrees(),
                self.p_inj[k],
                self.q_inj[k]
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// `S_i = V_i conj(sum_k Y_ik V_k)`.
pub fn compute_injections(y: &AdmittanceMatrix, v: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); v.len()];
    for (i, row) in y.y.outer_iter().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        out[i] = v[i] * acc.conj();
    }
    out
}

pub fn solve_powerflow(
    case: &NetworkCase,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let ybus = build_ybus(case)?;
    let n = case.n_buses();
    let mut vm: Vec<f64> = Vec::with_capacity(n);
    let mut va: Vec<f64> = Vec::with_capacity(n);
    for b in &case.buses {
        match b.kind {
            BusKind::Slack => {
                vm.push(b.v_set);
                va.push(b.theta_set.to_radians());
            }
            BusKind::Pv => {
                vm.push(b.v_set);
                va.push(0.0);
            }
            BusKind::Pq => {
                vm.push(1.0);
                va.push(0.0);
            }
        }
    }
    let p_spec: Vec<f64> = case.buses.iter().map(|b| b.p_gen - b.p_load).collect();
    let q_spec: Vec<f64> = case.buses.iter().map(|b| -b.q_load).collect();
    let ang_idx: Vec<usize> = (0..n).filter(|&k| case.buses[k].kind != BusKind::Slack).collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&k| case.buses[k].kind == BusKind::Pq).collect();
    let na = ang_idx.len();
    let nu = na + mag_idx.len();

    let mismatch = |vm: &[f64], va: &[f64]| -> (Vec<C64>, Array1<f64>, f64) {
        let v: Vec<C64> = vm.iter().zip(va).map(|(&m, &a)| C64::from_polar(m, a)).collect();
        let s = compute_injections(&ybus, &v);
        let mut f = Array1::<f64>::zeros(nu);
        for (r, &k) in ang_idx.iter().enumerate() {
            f[r] = s[k].re - p_spec[k];
        }
        for (r, &k) in mag_idx.iter().enumerate() {
            f[na + r] = s[k].im - q_spec[k];
        }
        let norm = f.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        (v, f, norm)
    };

    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let (v, f, norm) = mismatch(&vm, &va);
        history.push(norm);
        if !norm.is_finite() {
            return Err(PowerFlowError::Diverged { iterations, mismatch: norm });
        }
        if norm <= tol {
            let s = compute_injections(&ybus, &v);
            return Ok(PowerFlowSolution {
                bus_ids: case.buses.iter().map(|b| b.id).collect(),
                v_mag: vm,
                v_ang: va,
                p_inj: s.iter().map(|x| x.re).collect(),
                q_inj: s.iter().map(|x| x.im).collect(),
                iterations,
                max_mismatch: norm,
                mismatch_history: history,
            });
        }
        if iterations >= max_iter {
            return Err(PowerFlowError::Diverged { iterations, mismatch: norm });
        }
        let jac = jacobian(&ybus.y, &v, &ang_idx, &mag_idx);
        let dx = jac.solve(&f).map_err(|_| PowerFlowError::SingularJacobian)?;
        if dx.iter().any(|x| !x.is_finite()) {
            return Err(PowerFlowError::SingularJacobian);
        }
        for (r, &k) in ang_idx.iter().enumerate() {
            va[k] -= dx[r];
        }
        for (r, &k) in mag_idx.iter().enumerate() {
            vm[k] -= dx[na + r];
        }
        iterations += 1;
    }
}

/// Rows: P at `ang_idx`, Q at `mag_idx`. Columns: angles at `ang_idx`,
/// magnitudes at `mag_idx`.
fn jacobian(y: &Array2<C64>, v: &[C64], ang_idx: &[usize], mag_idx: &[usize]) -> Array2<f64> {
    let n = v.len();
    let ibus: Vec<C64> = (0..n).map(|i| (0..n).map(|k| y[[i, k]] * v[k]).sum()).collect();
    let vnorm: Vec<C64> = v.iter().map(|x| x / x.norm()).collect();
    let j = C64::new(0.0, 1.0);
    // dS_i/dVa_k and dS_i/dVm_k, dense.
    let ds_dva = |i: usize, k: usize| -> C64 {
        let diag = if i == k { ibus[i] } else { C64::new(0.0, 0.0) };
        j * v[i] * (diag - y[[i, k]] * v[k]).conj()
    };
    let ds_dvm = |i: usize, k: usize| -> C64 {
        let mut d = v[i] * (y[[i, k]] * vnorm[k]).conj();
        if i == k {
            d += ibus[i].conj() * vnorm[i];
        }
        d
    };
    let na = ang_idx.len();
    let nu = na + mag_idx.len();
    let mut jac = Array2::<f64>::zeros((nu, nu));
    for (r, &i) in ang_idx.iter().enumerate() {
        for (c, &k) in ang_idx.iter().enumerate() {
            jac[[r, c]] = ds_dva(i, k).re;
        }
        for (c, &k) in mag_idx.iter().enumerate() {
            jac[[r, na + c]] = ds_dvm(i, k).re;
        }
    }
    for (r, &i) in mag_idx.iter().enumerate() {
        for (c, &k) in ang_idx.iter().enumerate() {
            jac[[na + r, c]] = ds_dva(i, k).im;
        }
        for (c, &k) in mag_idx.iter().enumerate() {
            jac[[na + r, na + c]] = ds_dvm(i, k).im;
        }
    }
    jac
}
