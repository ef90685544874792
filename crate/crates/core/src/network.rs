//! Network algebra: admittance assembly, constant-impedance loads, machine
//! internal nodes, Kron reduction and the mixed voltage/current boundary
//! solve used by every right-hand-side evaluation.
//!
//! Retained-node ordering of a [`ReducedNetworkSet`] is
//! `[machine internal nodes | infinite buses | renewable buses]`. The first
//! two groups are voltage-specified ("sources"); renewable buses are
//! current-specified.

use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2};
use thiserror::Error;

use crate::case_io::{BranchStatus, NetworkCase};
use crate::linalg::{inverse_with_cond, matvec, matvec_add, C64, SINGULAR_COND};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("branch {from}-{to} has r = x = 0")]
    SingularBranch { from: u32, to: u32 },
    #[error("bus {0} has |V| below 1e-6 in the power-flow solution")]
    ZeroVoltageBus(u32),
    #[error("interior block is singular (isolated island?), condition {0:.3e}")]
    SingularInterior(f64),
    #[error("renewable-bus block is singular, condition {0:.3e}")]
    SingularResBlock(f64),
    #[error("unknown bus {0}")]
    UnknownBus(u32),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeLabel {
    Bus(u32),
    /// Internal node behind the subtransient reactance of machine `k` (0-based).
    Internal(usize),
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeLabel::Bus(id) => write!(f, "bus{id}"),
            NodeLabel::Internal(k) => write!(f, "G{}.int", k + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub y: Array2<C64>,
    pub labels: Vec<NodeLabel>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn position(&self, label: NodeLabel) -> Option<usize> {
        self.labels.iter().position(|l| *l == label)
    }

    /// Dump as `row,col,real,imag` (nonzero entries only).
    pub fn write_csv(&self, path: &Path) -> Result<(), NetworkError> {
        write_matrix_csv(&self.y, path)
    }
}

pub fn write_matrix_csv(m: &Array2<C64>, path: &Path) -> Result<(), NetworkError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "row,col,real,imag")?;
    for ((i, j), v) in m.indexed_iter() {
        if v.re != 0.0 || v.im != 0.0 {
            writeln!(f, "{i},{j},{},{}", v.re, v.im)?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Pi-model assembly of in-service branches plus bus shunts. Off-nominal taps
/// sit on the `from` side; a tap of 0 means nominal.
pub fn build_ybus(case: &NetworkCase) -> Result<AdmittanceMatrix, NetworkError> {
    let n = case.n_buses();
    let mut y = Array2::<C64>::zeros((n, n));
    for br in case.branches.iter().filter(|b| b.status == BranchStatus::In) {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(NetworkError::SingularBranch {
                from: br.from_bus,
                to: br.to_bus,
            });
        }
        let f = case
            .bus_index(br.from_bus)
            .ok_or(NetworkError::UnknownBus(br.from_bus))?;
        let t = case
            .bus_index(br.to_bus)
            .ok_or(NetworkError::UnknownBus(br.to_bus))?;
        let ys = C64::new(1.0, 0.0) / C64::new(br.r, br.x);
        let bc = C64::new(0.0, br.b_charging / 2.0);
        let ratio = if br.tap == 0.0 { 1.0 } else { br.tap };
        let tau = C64::from_polar(ratio, br.phase_shift.to_radians());
        y[[f, f]] += (ys + bc) / (ratio * ratio);
        y[[t, t]] += ys + bc;
        y[[f, t]] -= ys / tau.conj();
        y[[t, f]] -= ys / tau;
    }
    for (k, b) in case.buses.iter().enumerate() {
        y[[k, k]] += C64::new(b.g_shunt, b.b_shunt);
    }
    Ok(AdmittanceMatrix {
        y,
        labels: case.buses.iter().map(|b| NodeLabel::Bus(b.id)).collect(),
    })
}

/// Convert every bus load to the constant admittance `(p - jq) / |V|^2`
/// evaluated at the supplied voltage magnitudes.
pub fn absorb_loads(
    y: &AdmittanceMatrix,
    case: &NetworkCase,
    v_mag: &[f64],
) -> Result<AdmittanceMatrix, NetworkError> {
    let mut out = y.clone();
    for (k, b) in case.buses.iter().enumerate() {
        if b.p_load == 0.0 && b.q_load == 0.0 {
            continue;
        }
        let v = v_mag[k];
        if v.abs() < 1e-6 {
            return Err(NetworkError::ZeroVoltageBus(b.id));
        }
        let pos = out.position(NodeLabel::Bus(b.id)).ok_or(NetworkError::UnknownBus(b.id))?;
        out.y[[pos, pos]] += C64::new(b.p_load, -b.q_load) / (v * v);
    }
    Ok(out)
}

/// Admittance of the stamp between a machine's internal node and its terminal.
pub fn machine_admittance(r_s: f64, x_d_pp: f64) -> C64 {
    C64::new(1.0, 0.0) / C64::new(r_s, x_d_pp)
}

/// Append one internal node per machine, connected to its terminal bus
/// through `1 / (r_s + j x_d_pp)`.
pub fn extend_machine_nodes(
    y: &AdmittanceMatrix,
    case: &NetworkCase,
) -> Result<AdmittanceMatrix, NetworkError> {
    let n0 = y.n();
    let m = case.machines.len();
    let mut big = Array2::<C64>::zeros((n0 + m, n0 + m));
    big.slice_mut(s![..n0, ..n0]).assign(&y.y);
    let mut labels = y.labels.clone();
    for (k, mach) in case.machines.iter().enumerate() {
        let t = y
            .position(NodeLabel::Bus(mach.bus))
            .ok_or(NetworkError::UnknownBus(mach.bus))?;
        let g = n0 + k;
        let yg = machine_admittance(mach.r_s, mach.x_d_pp);
        big[[g, g]] += yg;
        big[[t, t]] += yg;
        big[[g, t]] -= yg;
        big[[t, g]] -= yg;
        labels.push(NodeLabel::Internal(k));
    }
    Ok(AdmittanceMatrix { y: big, labels })
}

/// Shunt conductance `y_fault` at `bus`.
pub fn apply_fault(
    y: &AdmittanceMatrix,
    bus: u32,
    y_fault: f64,
) -> Result<AdmittanceMatrix, NetworkError> {
    let pos = y.position(NodeLabel::Bus(bus)).ok_or(NetworkError::UnknownBus(bus))?;
    let mut out = y.clone();
    out.y[[pos, pos]] += C64::new(y_fault, 0.0);
    Ok(out)
}

/// Data for recovering eliminated-node voltages: `V_elim = map * V_retained`.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub retained: Vec<usize>,
    pub eliminated: Vec<usize>,
    /// `-Y22^{-1} Y21`, rows follow `eliminated`, columns follow `retained`.
    pub map: Array2<C64>,
}

impl Recovery {
    /// Full node-voltage vector (original ordering) from retained voltages.
    pub fn expand(&self, v_retained: &[C64]) -> Vec<C64> {
        let n = self.retained.len() + self.eliminated.len();
        let mut v = vec![C64::new(0.0, 0.0); n];
        for (k, &node) in self.retained.iter().enumerate() {
            v[node] = v_retained[k];
        }
        let mut tmp = vec![C64::new(0.0, 0.0); self.eliminated.len()];
        matvec(&self.map, v_retained, &mut tmp);
        for (k, &node) in self.eliminated.iter().enumerate() {
            v[node] = tmp[k];
        }
        v
    }
}

fn submatrix(y: &Array2<C64>, rows: &[usize], cols: &[usize]) -> Array2<C64> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| y[[rows[i], cols[j]]])
}

/// Schur complement onto `retained`: `Y_red = Y11 - Y12 Y22^{-1} Y21`.
pub fn kron_reduce(
    y: &Array2<C64>,
    retained: &[usize],
) -> Result<(Array2<C64>, Recovery), NetworkError> {
    let n = y.nrows();
    let eliminated: Vec<usize> = (0..n).filter(|k| !retained.contains(k)).collect();
    let y11 = submatrix(y, retained, retained);
    if eliminated.is_empty() {
        return Ok((
            y11,
            Recovery {
                retained: retained.to_vec(),
                eliminated,
                map: Array2::zeros((0, retained.len())),
            },
        ));
    }
    let y12 = submatrix(y, retained, &eliminated);
    let y21 = submatrix(y, &eliminated, retained);
    let y22 = submatrix(y, &eliminated, &eliminated);
    let (y22_inv, cond) =
        inverse_with_cond(&y22).ok_or(NetworkError::SingularInterior(f64::INFINITY))?;
    if cond > SINGULAR_COND {
        return Err(NetworkError::SingularInterior(cond));
    }
    let map = -y22_inv.dot(&y21);
    let y_red = &y11 + &y12.dot(&map);
    Ok((
        y_red,
        Recovery {
            retained: retained.to_vec(),
            eliminated,
            map,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Pre,
    Fault,
    Post,
}

/// One reduced topology, pre-factored for the mixed boundary solve.
#[derive(Debug, Clone)]
pub struct ReducedTopology {
    pub y_red: Array2<C64>,
    pub recovery: Recovery,
    /// `A - B D^{-1} C`: source currents per source voltage.
    k_ss: Array2<C64>,
    /// `B D^{-1}`: source currents per renewable injection.
    k_sr: Array2<C64>,
    /// `D^{-1}`.
    d_inv: Array2<C64>,
    /// `D^{-1} C`.
    d_inv_c: Array2<C64>,
    /// For each original bus, its row in the extended node vector.
    bus_nodes: Vec<usize>,
}

impl ReducedTopology {
    fn new(
        y_ext: &AdmittanceMatrix,
        retained: &[usize],
        n_src: usize,
        n_buses: usize,
    ) -> Result<Self, NetworkError> {
        let (y_red, recovery) = kron_reduce(&y_ext.y, retained)?;
        let n_res = retained.len() - n_src;
        let a = y_red.slice(s![..n_src, ..n_src]).to_owned();
        let b = y_red.slice(s![..n_src, n_src..]).to_owned();
        let c = y_red.slice(s![n_src.., ..n_src]).to_owned();
        let d = y_red.slice(s![n_src.., n_src..]).to_owned();
        let (d_inv, cond) =
            inverse_with_cond(&d).ok_or(NetworkError::SingularResBlock(f64::INFINITY))?;
        if n_res > 0 && cond > SINGULAR_COND {
            return Err(NetworkError::SingularResBlock(cond));
        }
        let d_inv_c = d_inv.dot(&c);
        let k_ss = &a - &b.dot(&d_inv_c);
        let k_sr = b.dot(&d_inv);
        let bus_nodes = (0..n_buses).collect();
        Ok(Self {
            y_red,
            recovery,
            k_ss,
            k_sr,
            d_inv,
            d_inv_c,
            bus_nodes,
        })
    }
}

/// Result of [`ReducedNetworkSet::mixed_boundary_solve`].
#[derive(Debug, Clone, Default)]
pub struct BoundarySolution {
    /// Current injected into the network at each machine internal node.
    pub i_machine: Vec<C64>,
    /// Current injected at each infinite bus.
    pub i_infinite: Vec<C64>,
    pub v_res: Vec<C64>,
    /// Voltage at every original bus, in case bus order.
    pub v_bus: Vec<C64>,
}

/// Pre-fault, fault-on and post-fault reduced networks over one retained set.
#[derive(Debug, Clone)]
pub struct ReducedNetworkSet {
    pub pre: ReducedTopology,
    pub fault: ReducedTopology,
    pub post: ReducedTopology,
    pub n_machines: usize,
    pub n_res: usize,
    /// Bus positions held at fixed voltage (generation without a dynamic device).
    pub infinite_buses: Vec<usize>,
    /// Fixed voltages of `infinite_buses`.
    pub infinite_v: Vec<C64>,
    /// Extended-matrix node index of every retained node.
    pub retained: Vec<usize>,
    pub labels: Vec<NodeLabel>,
    /// The load-absorbed, machine-extended pre-fault matrix.
    pub y_ext: AdmittanceMatrix,
}

impl ReducedNetworkSet {
    /// Build all three topologies from the load-absorbed bus matrix.
    ///
    /// `v_bus` is the power-flow voltage of every bus; it fixes the load
    /// admittances and the infinite-bus voltages.
    pub fn build(case: &NetworkCase, v_bus: &[C64]) -> Result<Self, NetworkError> {
        let ybus = build_ybus(case)?;
        let v_mag: Vec<f64> = v_bus.iter().map(|v| v.norm()).collect();
        let loaded = absorb_loads(&ybus, case, &v_mag)?;
        let y_ext = extend_machine_nodes(&loaded, case)?;
        let n_buses = case.n_buses();
        let infinite_buses = case.infinite_buses();
        let mut retained: Vec<usize> = (0..case.machines.len()).map(|k| n_buses + k).collect();
        retained.extend(infinite_buses.iter().copied());
        let n_src = retained.len();
        for r in &case.res_plants {
            retained.push(case.bus_index(r.bus).ok_or(NetworkError::UnknownBus(r.bus))?);
        }
        let pre = ReducedTopology::new(&y_ext, &retained, n_src, n_buses)?;
        let fault = match case.scenario.fault_bus {
            Some(bus) => {
                let faulted = apply_fault(&y_ext, bus, case.scenario.fault_admittance)?;
                ReducedTopology::new(&faulted, &retained, n_src, n_buses)?
            }
            None => pre.clone(),
        };
        let post = pre.clone();
        Ok(Self {
            pre,
            fault,
            post,
            n_machines: case.machines.len(),
            n_res: case.res_plants.len(),
            infinite_v: infinite_buses.iter().map(|&k| v_bus[k]).collect(),
            infinite_buses,
            labels: retained.iter().map(|&k| y_ext.labels[k]).collect(),
            retained,
            y_ext,
        })
    }

    pub fn topology(&self, t: Topology) -> &ReducedTopology {
        match t {
            Topology::Pre => &self.pre,
            Topology::Fault => &self.fault,
            Topology::Post => &self.post,
        }
    }

    fn n_src(&self) -> usize {
        self.n_machines + self.infinite_buses.len()
    }

    pub fn mixed_boundary_solve(
        &self,
        topology: Topology,
        e_internal: &[C64],
        i_res: &[C64],
    ) -> BoundarySolution {
        let mut out = BoundarySolution::default();
        self.solve_into(topology, e_internal, i_res, &mut out);
        out
    }

    /// Allocation-reusing form of [`Self::mixed_boundary_solve`].
    pub fn solve_into(
        &self,
        topology: Topology,
        e_internal: &[C64],
        i_res: &[C64],
        out: &mut BoundarySolution,
    ) {
        let topo = self.topology(topology);
        let n_src = self.n_src();
        let zero = C64::new(0.0, 0.0);
        let mut e = Vec::with_capacity(n_src);
        e.extend_from_slice(e_internal);
        e.extend_from_slice(&self.infinite_v);

        out.v_res.resize(self.n_res, zero);
        matvec(&topo.d_inv, i_res, &mut out.v_res);
        let mut tmp = vec![zero; self.n_res];
        matvec(&topo.d_inv_c, &e, &mut tmp);
        for (v, t) in out.v_res.iter_mut().zip(&tmp) {
            *v -= t;
        }

        let mut i_src = vec![zero; n_src];
        matvec(&topo.k_ss, &e, &mut i_src);
        matvec_add(&topo.k_sr, i_res, &mut i_src);
        out.i_machine.clear();
        out.i_machine.extend_from_slice(&i_src[..self.n_machines]);
        out.i_infinite.clear();
        out.i_infinite.extend_from_slice(&i_src[self.n_machines..]);

        let mut v_ret = e;
        v_ret.extend_from_slice(&out.v_res);
        let v_nodes = topo.recovery.expand(&v_ret);
        out.v_bus.clear();
        out.v_bus.extend(topo.bus_nodes.iter().map(|&k| v_nodes[k]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn bus(id: u32, kind: BusKind) -> BusRecord {
        BusRecord {
            id,
            kind,
            v_set: 1.0,
            theta_set: 0.0,
            p_load: 0.0,
            q_load: 0.0,
            g_shunt: 0.0,
            b_shunt: 0.0,
            p_gen: 0.0,
        }
    }

    fn branch(f: u32, t: u32, r: f64, x: f64, b: f64) -> BranchRecord {
        BranchRecord {
            from_bus: f,
            to_bus: t,
            r,
            x,
            b_charging: b,
            tap: 1.0,
            phase_shift: 0.0,
            status: BranchStatus::In,
        }
    }

    fn case(buses: Vec<BusRecord>, branches: Vec<BranchRecord>) -> NetworkCase {
        NetworkCase::new(buses, branches, vec![], vec![], vec![], vec![], ScenarioConfig::default())
            .unwrap()
    }

    /// Linear solve by Gaussian elimination with partial pivoting, written
    /// out longhand so the Kron tests do not share code with the LAPACK path.
    pub(crate) fn gauss_solve(mut a: Vec<Vec<C64>>, mut b: Vec<C64>) -> Vec<C64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].norm().partial_cmp(&a[j][col].norm()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    let v = a[col][k];
                    a[row][k] -= f * v;
                }
                let v = b[col];
                b[row] -= f * v;
            }
        }
        let mut x = vec![c(0.0, 0.0); n];
        for row in (0..n).rev() {
            let mut acc = b[row];
            for k in row + 1..n {
                acc -= a[row][k] * x[k];
            }
            x[row] = acc / a[row][row];
        }
        x
    }

    #[test]
    fn single_branch_two_node_identity() {
        let y = build_ybus(&case(vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)], vec![branch(1, 2, 0.0, 0.1, 0.0)]))
            .unwrap();
        assert_abs_diff_eq!(y.y[[0, 0]].im, -10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.y[[0, 1]].im, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.y[[1, 0]].im, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.y[[1, 1]].im, -10.0, epsilon = 1e-12);
        assert!(y.y.iter().all(|v| v.re.abs() < 1e-15));
    }

    #[test]
    fn charging_splits_evenly() {
        let y0 = build_ybus(&case(vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)], vec![branch(1, 2, 0.0, 0.1, 0.0)]))
            .unwrap();
        let y1 = build_ybus(&case(vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)], vec![branch(1, 2, 0.0, 0.1, 0.2)]))
            .unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!((y1.y[[k, k]] - y0.y[[k, k]]).im, 0.1, epsilon = 1e-12);
        }
        assert_eq!(y1.y[[0, 1]], y0.y[[0, 1]]);
    }

    #[test]
    fn triangle_matches_elementwise_accumulation() {
        let brs = vec![
            branch(1, 2, 0.01, 0.1, 0.0),
            branch(2, 3, 0.01, 0.1, 0.0),
            branch(1, 3, 0.01, 0.1, 0.0),
        ];
        let cs = case(vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq), bus(3, BusKind::Pq)], brs.clone());
        let y = build_ybus(&cs).unwrap();
        let mut oracle = [[c(0.0, 0.0); 3]; 3];
        for br in &brs {
            let (i, j) = (br.from_bus as usize - 1, br.to_bus as usize - 1);
            let z = c(br.r, br.x);
            let yy = c(1.0, 0.0) / z;
            oracle[i][i] += yy;
            oracle[j][j] += yy;
            oracle[i][j] -= yy;
            oracle[j][i] -= yy;
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((y.y[[i, j]] - oracle[i][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_branch_rejected() {
        let cs = case(vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)], vec![branch(1, 2, 0.0, 0.0, 0.0)]);
        assert!(matches!(build_ybus(&cs), Err(NetworkError::SingularBranch { .. })));
    }

    #[test]
    fn tap_and_shift_stamp() {
        let mut br = branch(1, 2, 0.0, 0.1, 0.0);
        br.tap = 1.05;
        br.phase_shift = 30.0;
        let y = build_ybus(&case(vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)], vec![br])).unwrap();
        let ys = c(0.0, -10.0);
        let tau = C64::from_polar(1.05, 30f64.to_radians());
        assert!((y.y[[0, 0]] - ys / (1.05 * 1.05)).norm() < 1e-12);
        assert!((y.y[[0, 1]] + ys / tau.conj()).norm() < 1e-12);
        assert!((y.y[[1, 0]] + ys / tau).norm() < 1e-12);
        // phase shifters break reciprocity
        assert!((y.y[[0, 1]] - y.y[[1, 0]]).norm() > 1e-3);
    }

    fn loaded_case(p: f64, q: f64) -> NetworkCase {
        let mut b2 = bus(2, BusKind::Pq);
        b2.p_load = p;
        b2.q_load = q;
        case(vec![bus(1, BusKind::Slack), b2], vec![branch(1, 2, 0.0, 0.1, 0.0)])
    }

    #[test]
    fn absorb_unit_load() {
        let cs = loaded_case(1.0, 0.0);
        let y = build_ybus(&cs).unwrap();
        let out = absorb_loads(&y, &cs, &[1.0, 1.0]).unwrap();
        assert!((out.y[[1, 1]] - y.y[[1, 1]] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn absorb_load_at_reduced_voltage() {
        let cs = loaded_case(0.5, 0.3);
        let y = build_ybus(&cs).unwrap();
        let out = absorb_loads(&y, &cs, &[1.0, 0.95]).unwrap();
        let expected = c(0.5 / 0.9025, -0.3 / 0.9025);
        assert!((out.y[[1, 1]] - y.y[[1, 1]] - expected).norm() < 1e-14);
    }

    #[test]
    fn zero_load_unchanged_and_zero_voltage_rejected() {
        let cs = loaded_case(0.0, 0.0);
        let y = build_ybus(&cs).unwrap();
        assert_eq!(absorb_loads(&y, &cs, &[1.0, 0.0]).unwrap(), y);
        let cs = loaded_case(0.2, 0.0);
        assert!(matches!(
            absorb_loads(&y, &cs, &[1.0, 1e-9]),
            Err(NetworkError::ZeroVoltageBus(2))
        ));
    }

    fn machine_on(bus: u32, r_s: f64, x_d_pp: f64) -> MachineRecord {
        MachineRecord {
            bus,
            r_s,
            x_ls: 0.1,
            x_d: 1.8,
            x_d_p: 0.3,
            x_d_pp,
            x_q: 1.7,
            x_q_p: 0.55,
            x_q_pp: x_d_pp,
            t_do_p: 8.0,
            t_do_pp: 0.03,
            t_qo_p: 0.4,
            t_qo_pp: 0.05,
            h: 3.5,
            t_fw: 0.0,
        }
    }

    #[test]
    fn machine_stamp_matches_direct_circuit() {
        let mut cs = case(vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)], vec![branch(1, 2, 0.0, 0.1, 0.0)]);
        cs.machines.push(machine_on(2, 0.0, 0.25));
        let y = build_ybus(&cs).unwrap();
        let ext = extend_machine_nodes(&y, &cs).unwrap();
        assert_eq!(ext.n(), 3);
        assert_eq!(ext.labels[2], NodeLabel::Internal(0));
        assert!((ext.y[[2, 2]] - c(0.0, -4.0)).norm() < 1e-12);
        assert!((ext.y[[2, 1]] - c(0.0, 4.0)).norm() < 1e-12);
        assert!((ext.y[[1, 2]] - c(0.0, 4.0)).norm() < 1e-12);
        // E = 1.1 behind j0.25 onto bus 2, bus 1 grounded: series j0.35 path.
        let e = c(1.1, 0.0);
        let i_direct = e / c(0.0, 0.35);
        // Solve the extended nodal equations with V1 = 0, V_int = E.
        let y22 = ext.y[[1, 1]];
        let v2 = -(ext.y[[1, 2]] * e) / y22;
        let i_int = ext.y[[2, 2]] * e + ext.y[[2, 1]] * v2;
        assert!((i_int - i_direct).norm() < 1e-12);
    }

    #[test]
    fn no_machines_leaves_matrix_unchanged() {
        let cs = loaded_case(0.1, 0.1);
        let y = build_ybus(&cs).unwrap();
        assert_eq!(extend_machine_nodes(&y, &cs).unwrap(), y);
    }

    #[test]
    fn fault_stamp() {
        let cs = loaded_case(0.0, 0.0);
        let y = build_ybus(&cs).unwrap();
        assert_eq!(apply_fault(&y, 2, 0.0).unwrap(), y);
        let f = apply_fault(&y, 2, 1e7).unwrap();
        assert_eq!(f.y[[1, 1]] - y.y[[1, 1]], c(1e7, 0.0));
        assert!(matches!(apply_fault(&y, 9, 1.0), Err(NetworkError::UnknownBus(9))));
    }

    #[test]
    fn decoupled_reduction_is_y11() {
        let mut y = Array2::<C64>::zeros((4, 4));
        y[[0, 0]] = c(1.0, -5.0);
        y[[1, 1]] = c(2.0, -3.0);
        y[[0, 1]] = c(-0.5, 1.0);
        y[[1, 0]] = c(-0.5, 1.0);
        y[[2, 2]] = c(1.0, -1.0);
        y[[3, 3]] = c(1.0, -2.0);
        let (yr, _) = kron_reduce(&y, &[0, 1]).unwrap();
        assert_eq!(yr, y.slice(s![..2, ..2]).to_owned());
        let (all, rec) = kron_reduce(&y, &[0, 1, 2, 3]).unwrap();
        assert_eq!(all, y);
        assert!(rec.eliminated.is_empty());
    }

    pub(crate) fn random_network(rng: &mut ChaCha8Rng, n: usize) -> Array2<C64> {
        // Spanning chain plus random extra edges keeps it connected; a small
        // shunt on every node keeps Y nonsingular.
        let mut y = Array2::<C64>::zeros((n, n));
        let stamp = |y: &mut Array2<C64>, i: usize, j: usize, v: C64| {
            y[[i, i]] += v;
            y[[j, j]] += v;
            y[[i, j]] -= v;
            y[[j, i]] -= v;
        };
        for k in 1..n {
            let v = c(0.0, 0.0) + c(1.0, 0.0) / c(rng.gen_range(0.001..0.05), rng.gen_range(0.01..0.5));
            stamp(&mut y, k - 1, k, v);
        }
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j {
                let v = c(1.0, 0.0) / c(rng.gen_range(0.001..0.05), rng.gen_range(0.01..0.5));
                stamp(&mut y, i, j, v);
            }
        }
        for k in 0..n {
            y[[k, k]] += c(rng.gen_range(0.0..0.5), rng.gen_range(-0.5..0.5));
        }
        y
    }

    #[test]
    fn random_reduction_matches_full_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = random_network(&mut rng, 4);
        let retained = [0, 2];
        let (yr, rec) = kron_reduce(&y, &retained).unwrap();
        let vg = [c(1.0, 0.1), c(0.95, -0.2)];
        // Oracle: V_L from Y22 V_L = -Y21 V_G, then I_G from the full rows.
        let elim = [1, 3];
        let a: Vec<Vec<C64>> = elim.iter().map(|&i| elim.iter().map(|&j| y[[i, j]]).collect()).collect();
        let b: Vec<C64> = elim
            .iter()
            .map(|&i| -(y[[i, 0]] * vg[0] + y[[i, 2]] * vg[1]))
            .collect();
        let vl = gauss_solve(a, b);
        let mut v = [c(0.0, 0.0); 4];
        v[0] = vg[0];
        v[2] = vg[1];
        v[1] = vl[0];
        v[3] = vl[1];
        for (k, &gi) in retained.iter().enumerate() {
            let full: C64 = (0..4).map(|j| y[[gi, j]] * v[j]).sum();
            let red: C64 = (0..2).map(|j| yr[[k, j]] * vg[j]).sum();
            assert!((full - red).norm() <= 1e-10 * full.norm());
        }
        let expanded = rec.expand(&vg);
        for k in 0..4 {
            assert!((expanded[k] - v[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn isolated_island_is_singular() {
        let mut y = Array2::<C64>::zeros((3, 3));
        y[[0, 0]] = c(0.0, -10.0);
        y[[0, 1]] = c(0.0, 10.0);
        y[[1, 0]] = c(0.0, 10.0);
        y[[1, 1]] = c(0.0, -10.0);
        // node 2 floats with no connection and no shunt
        assert!(matches!(kron_reduce(&y, &[0]), Err(NetworkError::SingularInterior(_))));
    }

    /// Five-bus network, one machine on bus 2, one renewable plant injecting
    /// at bus 4, bus 1 held as an infinite bus.
    fn five_bus() -> NetworkCase {
        let mut buses: Vec<BusRecord> = (1..=5).map(|k| bus(k, BusKind::Pq)).collect();
        buses[0].kind = BusKind::Slack;
        buses[1].kind = BusKind::Pv;
        buses[3].kind = BusKind::Pv;
        buses[2].p_load = 0.6;
        buses[2].q_load = 0.2;
        buses[4].p_load = 0.3;
        let brs = vec![
            branch(1, 2, 0.01, 0.08, 0.02),
            branch(2, 3, 0.02, 0.12, 0.03),
            branch(3, 4, 0.01, 0.10, 0.0),
            branch(4, 5, 0.02, 0.09, 0.01),
            branch(5, 1, 0.015, 0.11, 0.0),
            branch(2, 5, 0.03, 0.2, 0.0),
        ];
        let mut cs = case(buses, brs);
        cs.machines.push(machine_on(2, 0.003, 0.25));
        cs.res_plants.push(ResPlantRecord {
            bus: 4,
            t_g: 0.02,
            k_p: 0.0,
            k_i: 1.0,
            ip_max: None,
            iq_max: None,
            iq_min: None,
            v_freeze: 0.01,
        });
        NetworkCase::new(
            cs.buses,
            cs.branches,
            cs.machines,
            vec![],
            vec![],
            cs.res_plants,
            ScenarioConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn mixed_solve_matches_full_system() {
        let cs = five_bus();
        let v_pf: Vec<C64> = vec![c(1.0, 0.0), c(1.01, 0.05), c(0.97, -0.03), c(1.0, 0.02), c(0.98, -0.01)];
        let rns = ReducedNetworkSet::build(&cs, &v_pf).unwrap();
        assert_eq!(rns.infinite_buses, vec![0]);
        let e = [c(1.05, 0.3)];
        let i_res = [c(0.4, -0.1)];
        let sol = rns.mixed_boundary_solve(Topology::Pre, &e, &i_res);

        // Oracle: unknowns are V at buses 2..5 (nodes 1..4); node 0 = infinite
        // bus, node 5 = machine internal node, both voltage-specified.
        let y = &rns.y_ext.y;
        let known = [(0usize, c(1.0, 0.0)), (5usize, e[0])];
        let unknown = [1usize, 2, 3, 4];
        let inj = |node: usize| if node == 3 { i_res[0] } else { c(0.0, 0.0) };
        let a: Vec<Vec<C64>> = unknown.iter().map(|&i| unknown.iter().map(|&j| y[[i, j]]).collect()).collect();
        let b: Vec<C64> = unknown
            .iter()
            .map(|&i| inj(i) - known.iter().map(|&(j, v)| y[[i, j]] * v).sum::<C64>())
            .collect();
        let vu = gauss_solve(a, b);
        let mut v = vec![c(0.0, 0.0); 6];
        for &(j, val) in &known {
            v[j] = val;
        }
        for (k, &j) in unknown.iter().enumerate() {
            v[j] = vu[k];
        }
        let i_int: C64 = (0..6).map(|j| y[[5, j]] * v[j]).sum();
        assert!((sol.i_machine[0] - i_int).norm() < 1e-10 * i_int.norm());
        assert!((sol.v_res[0] - v[3]).norm() < 1e-10);
        for k in 0..5 {
            assert!((sol.v_bus[k] - v[k]).norm() < 1e-10, "bus {k}");
        }
        // Interior residuals when recovered voltages are plugged back in.
        for &i in &[1usize, 2, 4] {
            let r: C64 = (0..6).map(|j| y[[i, j]] * v[j]).sum();
            assert!(r.norm() < 1e-10);
        }
    }

    #[test]
    fn zero_res_injection_is_passive_response() {
        let cs = five_bus();
        let v_pf = vec![c(1.0, 0.0); 5];
        let rns = ReducedNetworkSet::build(&cs, &v_pf).unwrap();
        let e = [c(1.05, 0.3)];
        let sol = rns.mixed_boundary_solve(Topology::Pre, &e, &[c(0.0, 0.0)]);
        let yr = &rns.pre.y_red;
        // v_R = -D^{-1} C e, with D, C scalars/rows here (one RES at index 2).
        let src = [e[0], c(1.0, 0.0)];
        let ce: C64 = yr[[2, 0]] * src[0] + yr[[2, 1]] * src[1];
        let expected = -ce / yr[[2, 2]];
        assert!((sol.v_res[0] - expected).norm() < 1e-12);
    }

    #[test]
    fn no_res_reduces_to_plain_kron() {
        let mut cs = five_bus();
        cs.res_plants.clear();
        let cs = NetworkCase::new(cs.buses, cs.branches, cs.machines, vec![], vec![], vec![], ScenarioConfig::default())
            .unwrap();
        let v_pf = vec![c(1.0, 0.0); 5];
        let rns = ReducedNetworkSet::build(&cs, &v_pf).unwrap();
        // bus 4 is now pv without a device: another infinite bus.
        assert_eq!(rns.infinite_buses, vec![0, 3]);
        let e = [c(1.02, 0.2)];
        let sol = rns.mixed_boundary_solve(Topology::Pre, &e, &[]);
        let yr = &rns.pre.y_red;
        let src = [e[0], c(1.0, 0.0), c(1.0, 0.0)];
        let i0: C64 = (0..3).map(|j| yr[[0, j]] * src[j]).sum();
        assert!((sol.i_machine[0] - i0).norm() < 1e-12);
    }

    #[test]
    fn reduced_matrix_is_symmetric_without_shifters() {
        let cs = five_bus();
        let rns = ReducedNetworkSet::build(&cs, &vec![c(1.0, 0.0); 5]).unwrap();
        let yr = &rns.pre.y_red;
        for i in 0..yr.nrows() {
            for j in 0..yr.ncols() {
                assert!((yr[[i, j]] - yr[[j, i]]).norm() < 1e-10 * yr[[i, i]].norm());
            }
        }
    }
}
