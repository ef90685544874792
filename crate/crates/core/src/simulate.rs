//! Whole-system model: state layout, right-hand-side assembly through the
//! reduced network, and fixed-step RK4 integration across fault events.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::case_io::{NetworkCase, ResPlantRecord};
use crate::linalg::C64;
use crate::machine::{
    clamp_regulator, exciter_rhs, init_machine, machine_frame_rotation, machine_rhs,
    subtransient_emf, turbine_rhs, ExciterState, FrameDirection, MachineError, MachineSetpoints,
    MachineState, TurbineState,
};
use crate::network::{BoundarySolution, NetworkError, ReducedNetworkSet, Topology};
use crate::powerflow::{solve_powerflow, PowerFlowError, PowerFlowSolution};
use crate::res::{init_res, res_dynamics, ResError, ResSetpoints, ResState};

pub const MACHINE_STATES: [&str; 11] = [
    "delta", "omega", "e_q_p", "e_d_p", "psi_1d", "psi_2q", "e_fd", "r_f", "v_r", "t_m", "p_sv",
];
pub const RES_STATES: [&str; 3] = ["i_p", "i_q", "q_pi"];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("initial residual {residual:.3e} at {label} exceeds {limit:.1e}")]
    InitResidualTooLarge { residual: f64, label: String, limit: f64 },
    #[error("numerical blow-up at t = {t:.4} s in {label}")]
    NumericalBlowup { t: f64, label: String },
    #[error("machine {0} has no exciter or turbine record")]
    MissingController(usize),
    #[error("unknown input label {0}")]
    UnknownInput(String),
    #[error("unknown output label {0}")]
    UnknownOutput(String),
    #[error("invalid time grid: {0}")]
    BadGrid(String),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Res(#[from] ResError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Initialized system ready for simulation or linearization.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub case: NetworkCase,
    pub powerflow: PowerFlowSolution,
    pub network: ReducedNetworkSet,
    pub omega_s: f64,
    pub x0: Vec<f64>,
    /// Nominal input vector in [`SystemModel::input_labels`] order.
    pub u0: Vec<f64>,
    machine_bus: Vec<usize>,
}

/// Algebraic quantities recovered alongside a right-hand-side evaluation.
#[derive(Debug, Clone, Default)]
pub struct Algebraic {
    pub net: BoundarySolution,
}

impl SystemModel {
    pub fn initialize(case: &NetworkCase) -> Result<Self, SimError> {
        let pf = solve_powerflow(case, 1e-10, 30)?;
        Self::from_powerflow(case, pf)
    }

    pub fn from_powerflow(case: &NetworkCase, pf: PowerFlowSolution) -> Result<Self, SimError> {
        let omega_s = case.scenario.omega_s();
        let v = pf.voltages();
        let network = ReducedNetworkSet::build(case, &v)?;
        let m = case.machines.len();
        let mut x0 = Vec::with_capacity(11 * m + 3 * case.res_plants.len());
        let mut u0 = Vec::new();
        let mut machine_bus = Vec::new();
        for (k, mach) in case.machines.iter().enumerate() {
            let exc = case.exciter_of(k).ok_or(SimError::MissingController(k))?;
            let tur = case.turbine_of(k).ok_or(SimError::MissingController(k))?;
            let b = case.bus_index(mach.bus).ok_or(NetworkError::UnknownBus(mach.bus))?;
            let load = C64::new(case.buses[b].p_load, case.buses[b].q_load);
            let init = init_machine(v[b], pf.s_inj(b) + load, mach, exc, tur, omega_s)?;
            let s = init.machine;
            x0.extend([s.delta, s.omega, s.e_q_p, s.e_d_p, s.psi_1d, s.psi_2q]);
            x0.extend([init.exciter.e_fd, init.exciter.r_f, init.exciter.v_r]);
            x0.extend([init.turbine.t_m, init.turbine.p_sv]);
            u0.extend([init.setpoints.v_ref, init.setpoints.p_c]);
            machine_bus.push(b);
        }
        for r in &case.res_plants {
            let b = case.bus_index(r.bus).ok_or(NetworkError::UnknownBus(r.bus))?;
            let load = C64::new(case.buses[b].p_load, case.buses[b].q_load);
            let (s, sp) = init_res(v[b], pf.s_inj(b) + load, r)?;
            x0.extend([s.i_p, s.i_q, s.q_pi]);
            u0.extend([sp.p_ref, sp.q_ref]);
        }
        u0.push(omega_s);
        Ok(Self {
            case: case.clone(),
            powerflow: pf,
            network,
            omega_s,
            x0,
            u0,
            machine_bus,
        })
    }

    pub fn n_machines(&self) -> usize {
        self.case.machines.len()
    }

    pub fn n_res(&self) -> usize {
        self.case.res_plants.len()
    }

    pub fn n_states(&self) -> usize {
        self.x0.len()
    }

    pub fn machine_offset(&self, k: usize) -> usize {
        11 * k
    }

    pub fn res_offset(&self, k: usize) -> usize {
        11 * self.n_machines() + 3 * k
    }

    pub fn state_labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_states());
        for k in 0..self.n_machines() {
            out.extend(MACHINE_STATES.iter().map(|s| format!("G{}.{s}", k + 1)));
        }
        for k in 0..self.n_res() {
            out.extend(RES_STATES.iter().map(|s| format!("RES{}.{s}", k + 1)));
        }
        out
    }

    pub fn input_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in 0..self.n_machines() {
            out.push(format!("G{}.v_ref", k + 1));
            out.push(format!("G{}.p_c", k + 1));
        }
        for k in 0..self.n_res() {
            out.push(format!("RES{}.p_ref", k + 1));
            out.push(format!("RES{}.q_ref", k + 1));
        }
        out.push("omega_s".to_string());
        out
    }

    /// State labels followed by every bus voltage magnitude.
    pub fn output_labels(&self) -> Vec<String> {
        let mut out = self.state_labels();
        out.extend(self.case.buses.iter().map(|b| format!("bus{}.v_mag", b.id)));
        out
    }

    pub fn default_inputs(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..self.n_machines()).map(|k| format!("G{}.v_ref", k + 1)).collect();
        out.extend((0..self.n_res()).map(|k| format!("RES{}.q_ref", k + 1)));
        out
    }

    pub fn default_outputs(&self) -> Vec<String> {
        (0..self.n_machines()).map(|k| format!("G{}.omega", k + 1)).collect()
    }

    pub fn topology_at(&self, t: f64) -> Topology {
        let sc = &self.case.scenario;
        if sc.fault_bus.is_none() {
            Topology::Pre
        } else if t < sc.t_f1 {
            Topology::Pre
        } else if t < sc.t_f2 {
            Topology::Fault
        } else {
            Topology::Post
        }
    }

    /// Rotation symmetry of the absolute-angle model: shifting every rotor
    /// angle by `e` rotates every renewable current phasor by `e`.
    pub fn angle_symmetry(&self) -> Option<(usize, Vec<f64>)> {
        if !self.network.infinite_buses.is_empty() || self.n_machines() == 0 {
            return None;
        }
        let mut r = vec![0.0; self.n_states()];
        for k in 0..self.n_machines() {
            r[self.machine_offset(k)] = 1.0;
        }
        for k in 0..self.n_res() {
            let o = self.res_offset(k);
            r[o] = -self.x0[o + 1];
            r[o + 1] = self.x0[o];
        }
        Some((0, r))
    }

    /// Evaluate `dx/dt` for topology `topo` and input vector `u` (full input
    /// ordering). Network quantities are written to `alg`.
    pub fn eval(&self, topo: Topology, x: &[f64], u: &[f64], dx: &mut [f64], alg: &mut Algebraic) {
        let m = self.n_machines();
        let nr = self.n_res();
        let ws_in = u[u.len() - 1];
        let mut e_int = Vec::with_capacity(m);
        let mut states = Vec::with_capacity(m);
        for (k, mach) in self.case.machines.iter().enumerate() {
            let o = self.machine_offset(k);
            let s = MachineState {
                delta: x[o],
                omega: x[o + 1],
                e_q_p: x[o + 2],
                e_d_p: x[o + 3],
                psi_1d: x[o + 4],
                psi_2q: x[o + 5],
            };
            let (edpp, eqpp) = subtransient_emf(&s, mach);
            e_int.push(machine_frame_rotation(C64::new(edpp, eqpp), s.delta, FrameDirection::ToNetwork));
            states.push(s);
        }
        let i_res: Vec<C64> = (0..nr)
            .map(|k| {
                let o = self.res_offset(k);
                C64::new(x[o], x[o + 1])
            })
            .collect();
        self.network.solve_into(topo, &e_int, &i_res, &mut alg.net);

        for (k, mach) in self.case.machines.iter().enumerate() {
            let o = self.machine_offset(k);
            let s = &states[k];
            let i_dq = machine_frame_rotation(alg.net.i_machine[k], s.delta, FrameDirection::ToDq);
            let exc_rec = &self.case.exciters[k];
            let tur_rec = &self.case.turbines[k];
            let exc = ExciterState {
                e_fd: x[o + 6],
                r_f: x[o + 7],
                v_r: x[o + 8],
            };
            let tur = TurbineState {
                t_m: x[o + 9],
                p_sv: x[o + 10],
            };
            let sp = MachineSetpoints {
                v_ref: u[2 * k],
                p_c: u[2 * k + 1],
            };
            let dm = machine_rhs(s, i_dq.re, i_dq.im, exc.e_fd, tur.t_m, mach, self.omega_s);
            dx[o..o + 6].copy_from_slice(&dm);
            dx[o] -= ws_in - self.omega_s;
            let v_t = alg.net.v_bus[self.machine_bus[k]].norm();
            dx[o + 6..o + 9].copy_from_slice(&exciter_rhs(&exc, v_t, &sp, exc_rec));
            dx[o + 9..o + 11].copy_from_slice(&turbine_rhs(&tur, s.omega, &sp, tur_rec, ws_in));
        }
        for (k, r) in self.case.res_plants.iter().enumerate() {
            let o = self.res_offset(k);
            let s = ResState {
                i_p: x[o],
                i_q: x[o + 1],
                q_pi: x[o + 2],
            };
            let sp = ResSetpoints {
                p_ref: u[2 * m + 2 * k],
                q_ref: u[2 * m + 2 * k + 1],
            };
            dx[o..o + 3].copy_from_slice(&res_dynamics(&s, alg.net.v_res[k], &sp, r));
        }
    }

    /// `dx/dt` at time `t` with nominal inputs.
    pub fn system_rhs(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        let mut alg = Algebraic::default();
        self.eval(self.topology_at(t), x, &self.u0, &mut dx, &mut alg);
        dx
    }

    /// Full output vector in [`SystemModel::output_labels`] order.
    pub fn outputs(&self, topo: Topology, x: &[f64], u: &[f64], y: &mut [f64]) {
        let mut dx = vec![0.0; x.len()];
        let mut alg = Algebraic::default();
        self.eval(topo, x, u, &mut dx, &mut alg);
        y[..x.len()].copy_from_slice(x);
        for (k, v) in alg.net.v_bus.iter().enumerate() {
            y[x.len() + k] = v.norm();
        }
    }

    /// Infinity norm of `dx/dt` at the initial state and the offending label.
    pub fn init_residual(&self) -> (f64, String) {
        let dx = self.system_rhs(0.0, &self.x0);
        let labels = self.state_labels();
        let mut worst = (0.0, String::new());
        for (k, d) in dx.iter().enumerate() {
            if d.abs() > worst.0 || !d.is_finite() {
                worst = (d.abs(), labels[k].clone());
            }
        }
        worst
    }

    fn clamp_limits(&self, x: &mut [f64]) {
        for k in 0..self.n_machines() {
            let o = self.machine_offset(k) + 8;
            x[o] = clamp_regulator(x[o], &self.case.exciters[k]);
        }
    }

    pub fn res_record(&self, k: usize) -> &ResPlantRecord {
        &self.case.res_plants[k]
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Record every n-th step; event and end points are always recorded.
    pub record_every: usize,
    pub init_tolerance: f64,
}

impl SimOptions {
    pub fn from_case(case: &NetworkCase) -> Self {
        Self {
            dt: case.scenario.dt,
            t_end: case.scenario.t_end,
            record_every: 1,
            init_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub t: Vec<f64>,
    pub state_labels: Vec<String>,
    pub states: Vec<Vec<f64>>,
    pub bus_ids: Vec<u32>,
    pub bus_v_mag: Vec<Vec<f64>>,
    /// Hz, one column per machine.
    pub bus_freq: Vec<Vec<f64>>,
    pub event_log: Vec<(f64, String)>,
}

impl SimulationResult {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn write_csv(&self, dir: &Path) -> Result<Vec<String>, SimError> {
        let n_mach = self.bus_freq.first().map_or(0, |r| r.len());
        write_table(
            &dir.join("states.csv"),
            &self.state_labels,
            &self.t,
            &self.states,
        )?;
        let bus_cols: Vec<String> = self.bus_ids.iter().map(|b| format!("bus{b}")).collect();
        write_table(&dir.join("bus_voltages.csv"), &bus_cols, &self.t, &self.bus_v_mag)?;
        let f_cols: Vec<String> = (0..n_mach).map(|k| format!("G{}", k + 1)).collect();
        write_table(&dir.join("frequencies.csv"), &f_cols, &self.t, &self.bus_freq)?;
        Ok(vec![
            "states.csv".into(),
            "bus_voltages.csv".into(),
            "frequencies.csv".into(),
        ])
    }
}

fn write_table(path: &Path, cols: &[String], t: &[f64], rows: &[Vec<f64>]) -> Result<(), SimError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "t")?;
    for c in cols {
        write!(f, ",{c}")?;
    }
    writeln!(f)?;
    for (ti, row) in t.iter().zip(rows) {
        write!(f, "{ti}")?;
        for v in row {
            write!(f, ",{v}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Time grid with every event time as an exact grid point. Each interval
/// between events is split into equal steps no longer than `dt`.
pub fn build_grid(events: &[f64], t_end: f64, dt: f64) -> Result<Vec<f64>, SimError> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(SimError::BadGrid(format!("dt = {dt}, t_end = {t_end}")));
    }
    let mut marks = vec![0.0];
    for &e in events {
        if e > 0.0 && e < t_end && e > *marks.last().unwrap() {
            marks.push(e);
        }
    }
    marks.push(t_end);
    let mut grid = vec![0.0];
    for w in marks.windows(2) {
        let len = w[1] - w[0];
        let n = ((len / dt) - 1e-9).ceil().max(1.0) as usize;
        for s in 1..n {
            grid.push(w[0] + len * s as f64 / n as f64);
        }
        grid.push(w[1]);
    }
    Ok(grid)
}

pub fn run_simulation(model: &SystemModel, opts: &SimOptions) -> Result<SimulationResult, SimError> {
    let (res, label) = model.init_residual();
    if !(res < opts.init_tolerance) {
        return Err(SimError::InitResidualTooLarge {
            residual: res,
            label,
            limit: opts.init_tolerance,
        });
    }
    let sc = &model.case.scenario;
    let events: Vec<f64> = if sc.fault_bus.is_some() { vec![sc.t_f1, sc.t_f2] } else { vec![] };
    let grid = build_grid(&events, opts.t_end, opts.dt)?;
    integrate(model, &grid, opts.record_every.max(1))
}

fn integrate(model: &SystemModel, grid: &[f64], every: usize) -> Result<SimulationResult, SimError> {
    let n = model.n_states();
    let labels = model.state_labels();
    let sc = &model.case.scenario;
    let mut out = SimulationResult {
        t: Vec::new(),
        state_labels: labels.clone(),
        states: Vec::new(),
        bus_ids: model.case.buses.iter().map(|b| b.id).collect(),
        bus_v_mag: Vec::new(),
        bus_freq: Vec::new(),
        event_log: Vec::new(),
    };
    if let Some(b) = sc.fault_bus {
        out.event_log.push((sc.t_f1, format!("fault applied at bus {b}")));
        out.event_log.push((sc.t_f2, format!("fault cleared at bus {b}")));
    }
    let mut alg = Algebraic::default();
    let mut x = model.x0.clone();
    let u = &model.u0;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let is_event = |t: f64| sc.fault_bus.is_some() && (t == sc.t_f1 || t == sc.t_f2);

    let record = |t: f64, x: &[f64], out: &mut SimulationResult, alg: &mut Algebraic| {
        let mut dx = vec![0.0; n];
        model.eval(model.topology_at(t), x, u, &mut dx, alg);
        out.t.push(t);
        out.states.push(x.to_vec());
        out.bus_v_mag.push(alg.net.v_bus.iter().map(|v| v.norm()).collect());
        out.bus_freq.push(
            (0..model.n_machines())
                .map(|k| x[model.machine_offset(k) + 1] / (2.0 * PI))
                .collect(),
        );
    };
    record(grid[0], &x, &mut out, &mut alg);
    for (step, w) in grid.windows(2).enumerate() {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        let topo = model.topology_at(0.5 * (t0 + t1));
        model.eval(topo, &x, u, &mut k1, &mut alg);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        model.eval(topo, &tmp, u, &mut k2, &mut alg);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        model.eval(topo, &tmp, u, &mut k3, &mut alg);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        model.eval(topo, &tmp, u, &mut k4, &mut alg);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        model.clamp_limits(&mut x);
        if let Some(i) = x.iter().position(|v| !v.is_finite() || v.abs() > 1e6) {
            return Err(SimError::NumericalBlowup {
                t: t1,
                label: labels[i].clone(),
            });
        }
        let last = step + 2 == grid.len();
        if (step + 1) % every == 0 || last || is_event(t1) {
            record(t1, &x, &mut out, &mut alg);
        }
    }
    Ok(out)
}

/// Integrate over an explicit grid (for convergence studies).
pub fn run_on_grid(model: &SystemModel, grid: &[f64]) -> Result<SimulationResult, SimError> {
    integrate(model, grid, 1)
}
