//! Case directory format.
//!
//! A case is one directory holding comma-separated tables and a flat
//! `key = value` scenario file:
//!
//! | file             | columns                                                                  |
//! |------------------|--------------------------------------------------------------------------|
//! | `buses.csv`      | `id,kind,v_set,theta_deg,p_load,q_load,g_shunt,b_shunt[,p_gen]`          |
//! | `branches.csv`   | `from,to,r,x,b,tap,shift_deg,status`                                     |
//! | `machines.csv`   | `bus,r_s,x_ls,x_d,x_d_p,x_d_pp,x_q,x_q_p,x_q_pp,t_do_p,t_do_pp,t_qo_p,t_qo_pp,h[,t_fw]` |
//! | `exciters.csv`   | `machine,k_a,t_a,k_e,t_e,k_f,t_f[,sat_a,sat_b,vr_max,vr_min]`            |
//! | `turbines.csv`   | `machine,t_ch,t_sv,r_d`                                                  |
//! | `res_plants.csv` | `bus,t_g,k_p,k_i[,ip_max,iq_max,iq_min,v_freeze]`                        |
//!
//! The first non-comment line of every table is the header and must name the
//! columns in the order above. Lines starting with `#` and blank lines are
//! ignored. Optional trailing columns may be omitted or left empty. Machine
//! references in `exciters.csv` / `turbines.csv` are 1-based row numbers of
//! `machines.csv`. All electrical quantities are per-unit on `base_mva`;
//! angles in files are degrees.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("missing required file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {reason}")]
    MalformedRow {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{kind} references unknown {target} {id}")]
    DanglingReference {
        kind: &'static str,
        target: &'static str,
        id: u32,
    },
    #[error("duplicate {kind} {id}")]
    DuplicateId { kind: &'static str, id: u32 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

impl BusKind {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "slack" => Some(Self::Slack),
            "pv" => Some(Self::Pv),
            "pq" => Some(Self::Pq),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Slack => "slack",
            Self::Pv => "pv",
            Self::Pq => "pq",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusRecord {
    pub id: u32,
    pub kind: BusKind,
    pub v_set: f64,
    /// Degrees, as in the file.
    pub theta_set: f64,
    pub p_load: f64,
    pub q_load: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
    /// Scheduled active generation (power-flow input for pv buses).
    pub p_gen: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchStatus {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub from_bus: u32,
    pub to_bus: u32,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    pub tap: f64,
    /// Degrees.
    pub phase_shift: f64,
    pub status: BranchStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineRecord {
    pub bus: u32,
    pub r_s: f64,
    pub x_ls: f64,
    pub x_d: f64,
    pub x_d_p: f64,
    pub x_d_pp: f64,
    pub x_q: f64,
    pub x_q_p: f64,
    pub x_q_pp: f64,
    pub t_do_p: f64,
    pub t_do_pp: f64,
    pub t_qo_p: f64,
    pub t_qo_pp: f64,
    pub h: f64,
    pub t_fw: f64,
}

/// IEEE Type I exciter constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ExciterRecord {
    /// 0-based machine index (1-based in the file).
    pub machine: usize,
    pub k_a: f64,
    pub t_a: f64,
    pub k_e: f64,
    pub t_e: f64,
    pub k_f: f64,
    pub t_f: f64,
    pub sat_a: f64,
    pub sat_b: f64,
    pub vr_max: Option<f64>,
    pub vr_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurbineRecord {
    /// 0-based machine index (1-based in the file).
    pub machine: usize,
    pub t_ch: f64,
    pub t_sv: f64,
    pub r_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResPlantRecord {
    pub bus: u32,
    pub t_g: f64,
    pub k_p: f64,
    pub k_i: f64,
    pub ip_max: Option<f64>,
    pub iq_max: Option<f64>,
    pub iq_min: Option<f64>,
    pub v_freeze: f64,
}

pub const DEFAULT_T_G: f64 = 0.02;
pub const DEFAULT_V_FREEZE: f64 = 0.01;
pub const DEFAULT_FAULT_ADMITTANCE: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub base_mva: f64,
    pub freq_hz: f64,
    pub t_end: f64,
    pub dt: f64,
    pub fault_bus: Option<u32>,
    pub t_f1: f64,
    pub t_f2: f64,
    pub fault_admittance: f64,
    pub relative_angles: bool,
    pub input_selection: Vec<String>,
    pub output_selection: Vec<String>,
    /// Percent.
    pub zeta_threshold: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            base_mva: 100.0,
            freq_hz: 60.0,
            t_end: 10.0,
            dt: 1e-3,
            fault_bus: None,
            t_f1: 1.0,
            t_f2: 1.1,
            fault_admittance: DEFAULT_FAULT_ADMITTANCE,
            relative_angles: true,
            input_selection: Vec::new(),
            output_selection: Vec::new(),
            zeta_threshold: 10.0,
        }
    }
}

impl ScenarioConfig {
    /// Synchronous speed in rad/s.
    pub fn omega_s(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.freq_hz
    }
}

/// Parsed case. Records keep file identities (bus ids); the lookup tables
/// resolve them to positions.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub machines: Vec<MachineRecord>,
    pub exciters: Vec<ExciterRecord>,
    pub turbines: Vec<TurbineRecord>,
    pub res_plants: Vec<ResPlantRecord>,
    pub scenario: ScenarioConfig,
    bus_pos: BTreeMap<u32, usize>,
}

impl NetworkCase {
    /// Assemble a case from records, resolving and checking cross-references.
    pub fn new(
        buses: Vec<BusRecord>,
        branches: Vec<BranchRecord>,
        machines: Vec<MachineRecord>,
        mut exciters: Vec<ExciterRecord>,
        mut turbines: Vec<TurbineRecord>,
        res_plants: Vec<ResPlantRecord>,
        scenario: ScenarioConfig,
    ) -> Result<Self, CaseError> {
        let mut bus_pos = BTreeMap::new();
        for (k, b) in buses.iter().enumerate() {
            if bus_pos.insert(b.id, k).is_some() {
                return Err(CaseError::DuplicateId { kind: "bus", id: b.id });
            }
        }
        let known = |kind: &'static str, id: u32| {
            if bus_pos.contains_key(&id) {
                Ok(())
            } else {
                Err(CaseError::DanglingReference { kind, target: "bus", id })
            }
        };
        for br in &branches {
            known("branch", br.from_bus)?;
            known("branch", br.to_bus)?;
        }
        let mut seen = HashSet::new();
        for m in &machines {
            known("machine", m.bus)?;
            if !seen.insert(m.bus) {
                return Err(CaseError::DuplicateId { kind: "machine bus", id: m.bus });
            }
        }
        for r in &res_plants {
            known("res plant", r.bus)?;
            if !seen.insert(r.bus) {
                return Err(CaseError::DuplicateId { kind: "source bus", id: r.bus });
            }
        }
        if let Some(fb) = scenario.fault_bus {
            known("scenario fault", fb)?;
        }
        let check_machine = |kind: &'static str, idx: usize, seen: &mut HashSet<usize>| {
            if idx >= machines.len() {
                return Err(CaseError::DanglingReference {
                    kind,
                    target: "machine",
                    id: idx as u32 + 1,
                });
            }
            if !seen.insert(idx) {
                return Err(CaseError::DuplicateId { kind, id: idx as u32 + 1 });
            }
            Ok(())
        };
        let mut seen_exc = HashSet::new();
        for e in &exciters {
            check_machine("exciter", e.machine, &mut seen_exc)?;
        }
        let mut seen_tur = HashSet::new();
        for t in &turbines {
            check_machine("turbine", t.machine, &mut seen_tur)?;
        }
        exciters.sort_by_key(|e| e.machine);
        turbines.sort_by_key(|t| t.machine);
        Ok(Self {
            buses,
            branches,
            machines,
            exciters,
            turbines,
            res_plants,
            scenario,
            bus_pos,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.bus_pos.get(&id).copied()
    }

    pub fn exciter_of(&self, machine: usize) -> Option<&ExciterRecord> {
        self.exciters.iter().find(|e| e.machine == machine)
    }

    pub fn turbine_of(&self, machine: usize) -> Option<&TurbineRecord> {
        self.turbines.iter().find(|t| t.machine == machine)
    }

    /// Slack and pv buses that have neither a machine nor a renewable plant. The dynamic model holds them
    /// at their power-flow voltage.
    pub fn infinite_buses(&self) -> Vec<usize> {
        let sourced: HashSet<u32> = self
            .machines
            .iter()
            .map(|m| m.bus)
            .chain(self.res_plants.iter().map(|r| r.bus))
            .collect();
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| !sourced.contains(&b.id) && b.kind != BusKind::Pq)
            .map(|(k, _)| k)
            .collect()
    }
}

/// One invariant violation found by [`validate_case`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub subject: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, subject: impl Into<String>, rule: impl Into<String>) {
        self.violations.push(Violation {
            subject: subject.into(),
            rule: rule.into(),
        });
    }
}

/// Check every record invariant. An empty report means every downstream
/// module accepts the case.
pub fn validate_case(case: &NetworkCase) -> ValidationReport {
    let mut rep = ValidationReport::default();

    let slacks = case.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    if slacks != 1 {
        rep.push("case", format!("exactly one slack bus required, found {slacks}"));
    }
    for b in &case.buses {
        let subject = format!("bus {}", b.id);
        if b.kind != BusKind::Pq && !(b.v_set > 0.0) {
            rep.push(&subject, "v_set > 0 required for slack/pv");
        }
        if b.kind == BusKind::Pq && b.p_gen != 0.0 {
            rep.push(&subject, "pq bus cannot schedule p_gen");
        }
        let vals = [b.v_set, b.theta_set, b.p_load, b.q_load, b.g_shunt, b.b_shunt, b.p_gen];
        if vals.iter().any(|v| !v.is_finite()) {
            rep.push(&subject, "all values must be finite");
        }
    }

    for (k, br) in case.branches.iter().enumerate() {
        let subject = format!("branch {} ({}-{})", k + 1, br.from_bus, br.to_bus);
        if br.from_bus == br.to_bus {
            rep.push(&subject, "from_bus != to_bus required");
        }
        if br.r == 0.0 && br.x == 0.0 {
            rep.push(&subject, "r = x = 0 is not allowed");
        }
        if br.tap < 0.0 {
            rep.push(&subject, "tap must be positive (0 means nominal)");
        }
    }

    for (k, m) in case.machines.iter().enumerate() {
        let subject = format!("machine {}", k + 1);
        if !(m.x_d > m.x_d_p && m.x_d_p > m.x_d_pp && m.x_d_pp > m.x_ls && m.x_ls >= 0.0) {
            rep.push(&subject, "x_d > x_d_p > x_d_pp > x_ls >= 0 required");
        }
        if !(m.x_q > m.x_q_p && m.x_q_p > m.x_q_pp && m.x_q_pp > m.x_ls) {
            rep.push(&subject, "x_q > x_q_p > x_q_pp > x_ls required");
        }
        if [m.t_do_p, m.t_do_pp, m.t_qo_p, m.t_qo_pp].iter().any(|t| !(*t > 0.0)) {
            rep.push(&subject, "machine time constants must be > 0");
        }
        if !(m.h > 0.0) {
            rep.push(&subject, "h > 0 required");
        }
        if m.r_s < 0.0 {
            rep.push(&subject, "r_s >= 0 required");
        }
        if case.exciter_of(k).is_none() {
            rep.push(&subject, "no exciter attached");
        }
        if case.turbine_of(k).is_none() {
            rep.push(&subject, "no turbine attached");
        }
    }

    for e in &case.exciters {
        let subject = format!("exciter of machine {}", e.machine + 1);
        if !(e.t_a > 0.0 && e.t_e > 0.0 && e.t_f > 0.0) {
            rep.push(&subject, "t_a, t_e, t_f > 0 required");
        }
        if !(e.k_a > 0.0) {
            rep.push(&subject, "k_a > 0 required");
        }
        if let (Some(hi), Some(lo)) = (e.vr_max, e.vr_min) {
            if !(lo < hi) {
                rep.push(&subject, "vr_min < vr_max required");
            }
        }
    }

    for t in &case.turbines {
        let subject = format!("turbine of machine {}", t.machine + 1);
        if !(t.t_ch > 0.0 && t.t_sv > 0.0) {
            rep.push(&subject, "t_ch, t_sv > 0 required");
        }
        if !(t.r_d > 0.0) {
            rep.push(&subject, "r_d > 0 required");
        }
    }

    for (k, r) in case.res_plants.iter().enumerate() {
        let subject = format!("res plant {}", k + 1);
        if !(r.t_g > 0.0 && r.t_g <= 1.0) {
            rep.push(&subject, "t_g in (0, 1] required");
        }
        if !(r.k_i >= 0.0) {
            rep.push(&subject, "k_i >= 0 required");
        }
        if let Some(ip) = r.ip_max {
            if !(ip > 0.0) {
                rep.push(&subject, "ip_max > 0 required");
            }
        }
        if let (Some(hi), Some(lo)) = (r.iq_max, r.iq_min) {
            if !(lo < hi) {
                rep.push(&subject, "iq_min < iq_max required");
            }
        }
        if !(r.v_freeze >= 0.0) {
            rep.push(&subject, "v_freeze >= 0 required");
        }
    }

    let s = &case.scenario;
    if !(s.dt > 0.0) {
        rep.push("scenario", "dt > 0 required");
    }
    if !(s.base_mva > 0.0 && s.freq_hz > 0.0) {
        rep.push("scenario", "base_mva and freq_hz must be > 0");
    }
    if !(s.t_end > 0.0) {
        rep.push("scenario", "t_end > 0 required");
    }
    if s.fault_bus.is_some() && !(0.0 <= s.t_f1 && s.t_f1 < s.t_f2 && s.t_f2 <= s.t_end) {
        rep.push("scenario", "0 <= t_f1 < t_f2 <= t_end required with a fault");
    }
    if !(s.fault_admittance >= 0.0) {
        rep.push("scenario", "fault_admittance >= 0 required");
    }
    rep
}

const BUS_COLS: &[&str] = &[
    "id", "kind", "v_set", "theta_deg", "p_load", "q_load", "g_shunt", "b_shunt", "p_gen",
];
const BUS_REQUIRED: usize = 8;
const BRANCH_COLS: &[&str] = &["from", "to", "r", "x", "b", "tap", "shift_deg", "status"];
const MACHINE_COLS: &[&str] = &[
    "bus", "r_s", "x_ls", "x_d", "x_d_p", "x_d_pp", "x_q", "x_q_p", "x_q_pp", "t_do_p",
    "t_do_pp", "t_qo_p", "t_qo_pp", "h", "t_fw",
];
const MACHINE_REQUIRED: usize = 14;
const EXCITER_COLS: &[&str] = &[
    "machine", "k_a", "t_a", "k_e", "t_e", "k_f", "t_f", "sat_a", "sat_b", "vr_max", "vr_min",
];
const EXCITER_REQUIRED: usize = 7;
const TURBINE_COLS: &[&str] = &["machine", "t_ch", "t_sv", "r_d"];
const RES_COLS: &[&str] = &[
    "bus", "t_g", "k_p", "k_i", "ip_max", "iq_max", "iq_min", "v_freeze",
];
const RES_REQUIRED: usize = 4;

/// A data row of one table, with enough context for error messages.
struct Row<'a> {
    file: &'a str,
    line: usize,
    fields: Vec<&'a str>,
}

impl<'a> Row<'a> {
    fn err(&self, reason: impl Into<String>) -> CaseError {
        CaseError::MalformedRow {
            file: self.file.to_string(),
            line: self.line,
            reason: reason.into(),
        }
    }

    fn raw(&self, col: usize) -> Option<&'a str> {
        self.fields.get(col).copied().filter(|s| !s.is_empty())
    }

    fn f64(&self, col: usize, name: &str) -> Result<f64, CaseError> {
        let s = self.raw(col).ok_or_else(|| self.err(format!("missing {name}")))?;
        s.parse()
            .map_err(|_| self.err(format!("{name}: cannot parse '{s}' as a number")))
    }

    fn opt_f64(&self, col: usize, name: &str) -> Result<Option<f64>, CaseError> {
        match self.raw(col) {
            None => Ok(None),
            Some(_) => self.f64(col, name).map(Some),
        }
    }

    fn u32(&self, col: usize, name: &str) -> Result<u32, CaseError> {
        let s = self.raw(col).ok_or_else(|| self.err(format!("missing {name}")))?;
        s.parse()
            .map_err(|_| self.err(format!("{name}: cannot parse '{s}' as a positive integer")))
    }
}

fn read_file(dir: &Path, name: &str, required: bool) -> Result<Option<String>, CaseError> {
    let path = dir.join(name);
    if !path.is_file() {
        return if required {
            Err(CaseError::MissingFile(path))
        } else {
            Ok(None)
        };
    }
    fs::read_to_string(&path)
        .map(Some)
        .map_err(|source| CaseError::Io { path, source })
}

/// Split a table into data rows after checking the header.
fn table_rows<'a>(
    file: &'a str,
    text: &'a str,
    cols: &[&str],
    required: usize,
) -> Result<Vec<Row<'a>>, CaseError> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (k, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let row = Row {
            file,
            line: k + 1,
            fields,
        };
        if !header_seen {
            header_seen = true;
            let n = row.fields.len();
            if n < required || n > cols.len() || row.fields[..] != cols[..n] {
                return Err(row.err(format!("header must be '{}'", cols.join(","))));
            }
            continue;
        }
        if row.fields.len() < required || row.fields.len() > cols.len() {
            return Err(row.err(format!(
                "expected {} to {} fields, found {}",
                required,
                cols.len(),
                row.fields.len()
            )));
        }
        rows.push(row);
    }
    if !header_seen {
        return Err(CaseError::MalformedRow {
            file: file.to_string(),
            line: 0,
            reason: "missing header row".into(),
        });
    }
    Ok(rows)
}

fn parse_buses(text: &str) -> Result<Vec<BusRecord>, CaseError> {
    table_rows("buses.csv", text, BUS_COLS, BUS_REQUIRED)?
        .iter()
        .map(|r| {
            let kind_s = r.raw(1).unwrap_or("");
            let kind = BusKind::parse(kind_s)
                .ok_or_else(|| r.err(format!("kind must be slack, pv or pq, found '{kind_s}'")))?;
            Ok(BusRecord {
                id: r.u32(0, "id")?,
                kind,
                v_set: r.f64(2, "v_set")?,
                theta_set: r.f64(3, "theta_deg")?,
                p_load: r.f64(4, "p_load")?,
                q_load: r.f64(5, "q_load")?,
                g_shunt: r.f64(6, "g_shunt")?,
                b_shunt: r.f64(7, "b_shunt")?,
                p_gen: r.opt_f64(8, "p_gen")?.unwrap_or(0.0),
            })
        })
        .collect()
}

fn parse_branches(text: &str) -> Result<Vec<BranchRecord>, CaseError> {
    table_rows("branches.csv", text, BRANCH_COLS, BRANCH_COLS.len())?
        .iter()
        .map(|r| {
            let status = match r.raw(7).map(str::to_ascii_lowercase).as_deref() {
                Some("in") | Some("1") => BranchStatus::In,
                Some("out") | Some("0") => BranchStatus::Out,
                other => return Err(r.err(format!("status must be in/out, found {other:?}"))),
            };
            let tap = r.f64(5, "tap")?;
            Ok(BranchRecord {
                from_bus: r.u32(0, "from")?,
                to_bus: r.u32(1, "to")?,
                r: r.f64(2, "r")?,
                x: r.f64(3, "x")?,
                b_charging: r.f64(4, "b")?,
                tap,
                phase_shift: r.f64(6, "shift_deg")?,
                status,
            })
        })
        .collect()
}

fn parse_machines(text: &str) -> Result<Vec<MachineRecord>, CaseError> {
    table_rows("machines.csv", text, MACHINE_COLS, MACHINE_REQUIRED)?
        .iter()
        .map(|r| {
            let c = |i: usize| r.f64(i, MACHINE_COLS[i]);
            Ok(MachineRecord {
                bus: r.u32(0, "bus")?,
                r_s: c(1)?,
                x_ls: c(2)?,
                x_d: c(3)?,
                x_d_p: c(4)?,
                x_d_pp: c(5)?,
                x_q: c(6)?,
                x_q_p: c(7)?,
                x_q_pp: c(8)?,
                t_do_p: c(9)?,
                t_do_pp: c(10)?,
                t_qo_p: c(11)?,
                t_qo_pp: c(12)?,
                h: c(13)?,
                t_fw: r.opt_f64(14, "t_fw")?.unwrap_or(0.0),
            })
        })
        .collect()
}

fn machine_ref(r: &Row, kind: &'static str) -> Result<usize, CaseError> {
    let idx = r.u32(0, "machine")?;
    if idx == 0 {
        return Err(CaseError::DanglingReference {
            kind,
            target: "machine",
            id: 0,
        });
    }
    Ok(idx as usize - 1)
}

fn parse_exciters(text: &str) -> Result<Vec<ExciterRecord>, CaseError> {
    table_rows("exciters.csv", text, EXCITER_COLS, EXCITER_REQUIRED)?
        .iter()
        .map(|r| {
            let c = |i: usize| r.f64(i, EXCITER_COLS[i]);
            Ok(ExciterRecord {
                machine: machine_ref(r, "exciter")?,
                k_a: c(1)?,
                t_a: c(2)?,
                k_e: c(3)?,
                t_e: c(4)?,
                k_f: c(5)?,
                t_f: c(6)?,
                sat_a: r.opt_f64(7, "sat_a")?.unwrap_or(0.0),
                sat_b: r.opt_f64(8, "sat_b")?.unwrap_or(0.0),
                vr_max: r.opt_f64(9, "vr_max")?,
                vr_min: r.opt_f64(10, "vr_min")?,
            })
        })
        .collect()
}

fn parse_turbines(text: &str) -> Result<Vec<TurbineRecord>, CaseError> {
    table_rows("turbines.csv", text, TURBINE_COLS, TURBINE_COLS.len())?
        .iter()
        .map(|r| {
            Ok(TurbineRecord {
                machine: machine_ref(r, "turbine")?,
                t_ch: r.f64(1, "t_ch")?,
                t_sv: r.f64(2, "t_sv")?,
                r_d: r.f64(3, "r_d")?,
            })
        })
        .collect()
}

fn parse_res(text: &str) -> Result<Vec<ResPlantRecord>, CaseError> {
    table_rows("res_plants.csv", text, RES_COLS, RES_REQUIRED)?
        .iter()
        .map(|r| {
            Ok(ResPlantRecord {
                bus: r.u32(0, "bus")?,
                t_g: r.opt_f64(1, "t_g")?.unwrap_or(DEFAULT_T_G),
                k_p: r.f64(2, "k_p")?,
                k_i: r.f64(3, "k_i")?,
                ip_max: r.opt_f64(4, "ip_max")?,
                iq_max: r.opt_f64(5, "iq_max")?,
                iq_min: r.opt_f64(6, "iq_min")?,
                v_freeze: r.opt_f64(7, "v_freeze")?.unwrap_or(DEFAULT_V_FREEZE),
            })
        })
        .collect()
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

fn parse_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// Parse `scenario.cfg`. Keys absent from the file keep their defaults.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, CaseError> {
    let mut cfg = ScenarioConfig::default();
    for (k, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |reason: String| CaseError::MalformedRow {
            file: "scenario.cfg".into(),
            line: k + 1,
            reason,
        };
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| err("expected 'key = value'".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| err(format!("{key}: cannot parse '{value}' as a number")))
        };
        match key {
            "base_mva" => cfg.base_mva = num()?,
            "freq_hz" => cfg.freq_hz = num()?,
            "t_end" => cfg.t_end = num()?,
            "dt" => cfg.dt = num()?,
            "fault_bus" => {
                cfg.fault_bus = match value.to_ascii_lowercase().as_str() {
                    "" | "none" => None,
                    _ => Some(
                        value
                            .parse()
                            .map_err(|_| err(format!("fault_bus: bad bus id '{value}'")))?,
                    ),
                }
            }
            "t_f1" => cfg.t_f1 = num()?,
            "t_f2" => cfg.t_f2 = num()?,
            "fault_admittance" => cfg.fault_admittance = num()?,
            "relative_angles" => {
                cfg.relative_angles = parse_bool(value)
                    .ok_or_else(|| err(format!("relative_angles: expected true/false, found '{value}'")))?
            }
            "input_selection" => cfg.input_selection = parse_list(value),
            "output_selection" => cfg.output_selection = parse_list(value),
            "zeta_threshold" => cfg.zeta_threshold = num()?,
            _ => return Err(err(format!("unknown key '{key}'"))),
        }
    }
    Ok(cfg)
}

/// Load a case directory. Cross-references are resolved here; record-level
/// invariants are left to [`validate_case`].
pub fn load_case(dir: &Path) -> Result<NetworkCase, CaseError> {
    if !dir.is_dir() {
        return Err(CaseError::MissingFile(dir.to_path_buf()));
    }
    let buses = parse_buses(&read_file(dir, "buses.csv", true)?.unwrap_or_default())?;
    let branches = parse_branches(&read_file(dir, "branches.csv", true)?.unwrap_or_default())?;
    let scenario = parse_scenario(&read_file(dir, "scenario.cfg", true)?.unwrap_or_default())?;
    let machines = match read_file(dir, "machines.csv", false)? {
        Some(t) => parse_machines(&t)?,
        None => Vec::new(),
    };
    let exciters = match read_file(dir, "exciters.csv", false)? {
        Some(t) => parse_exciters(&t)?,
        None => Vec::new(),
    };
    let turbines = match read_file(dir, "turbines.csv", false)? {
        Some(t) => parse_turbines(&t)?,
        None => Vec::new(),
    };
    let res_plants = match read_file(dir, "res_plants.csv", false)? {
        Some(t) => parse_res(&t)?,
        None => Vec::new(),
    };
    NetworkCase::new(buses, branches, machines, exciters, turbines, res_plants, scenario)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render every table of a case in the on-disk format, keyed by file name.
pub fn serialize_case(case: &NetworkCase) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();

    let mut s = BUS_COLS.join(",") + "\n";
    for b in &case.buses {
        s += &format!(
            "{},{},{},{},{},{},{},{},{}\n",
            b.id,
            b.kind.as_str(),
            b.v_set,
            b.theta_set,
            b.p_load,
            b.q_load,
            b.g_shunt,
            b.b_shunt,
            b.p_gen
        );
    }
    out.push(("buses.csv", s));

    let mut s = BRANCH_COLS.join(",") + "\n";
    for br in &case.branches {
        let status = match br.status {
            BranchStatus::In => "in",
            BranchStatus::Out => "out",
        };
        s += &format!(
            "{},{},{},{},{},{},{},{}\n",
            br.from_bus, br.to_bus, br.r, br.x, br.b_charging, br.tap, br.phase_shift, status
        );
    }
    out.push(("branches.csv", s));

    if !case.machines.is_empty() {
        let mut s = MACHINE_COLS.join(",") + "\n";
        for m in &case.machines {
            s += &format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                m.bus,
                m.r_s,
                m.x_ls,
                m.x_d,
                m.x_d_p,
                m.x_d_pp,
                m.x_q,
                m.x_q_p,
                m.x_q_pp,
                m.t_do_p,
                m.t_do_pp,
                m.t_qo_p,
                m.t_qo_pp,
                m.h,
                m.t_fw
            );
        }
        out.push(("machines.csv", s));
    }
    if !case.exciters.is_empty() {
        let mut s = EXCITER_COLS.join(",") + "\n";
        for e in &case.exciters {
            s += &format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                e.machine + 1,
                e.k_a,
                e.t_a,
                e.k_e,
                e.t_e,
                e.k_f,
                e.t_f,
                e.sat_a,
                e.sat_b,
                opt(e.vr_max),
                opt(e.vr_min)
            );
        }
        out.push(("exciters.csv", s));
    }
    if !case.turbines.is_empty() {
        let mut s = TURBINE_COLS.join(",") + "\n";
        for t in &case.turbines {
            s += &format!("{},{},{},{}\n", t.machine + 1, t.t_ch, t.t_sv, t.r_d);
        }
        out.push(("turbines.csv", s));
    }
    if !case.res_plants.is_empty() {
        let mut s = RES_COLS.join(",") + "\n";
        for r in &case.res_plants {
            s += &format!(
                "{},{},{},{},{},{},{},{}\n",
                r.bus,
                r.t_g,
                r.k_p,
                r.k_i,
                opt(r.ip_max),
                opt(r.iq_max),
                opt(r.iq_min),
                r.v_freeze
            );
        }
        out.push(("res_plants.csv", s));
    }

    let sc = &case.scenario;
    let s = format!(
        "base_mva = {}\nfreq_hz = {}\nt_end = {}\ndt = {}\nfault_bus = {}\nt_f1 = {}\nt_f2 = {}\n\
         fault_admittance = {}\nrelative_angles = {}\ninput_selection = {}\noutput_selection = {}\n\
         zeta_threshold = {}\n",
        sc.base_mva,
        sc.freq_hz,
        sc.t_end,
        sc.dt,
        sc.fault_bus.map(|b| b.to_string()).unwrap_or_else(|| "none".into()),
        sc.t_f1,
        sc.t_f2,
        sc.fault_admittance,
        sc.relative_angles,
        sc.input_selection.join(","),
        sc.output_selection.join(","),
        sc.zeta_threshold
    );
    out.push(("scenario.cfg", s));
    out
}

/// Write a case directory (created if needed).
pub fn write_case(case: &NetworkCase, dir: &Path) -> Result<(), CaseError> {
    fs::create_dir_all(dir).map_err(|source| CaseError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (name, text) in serialize_case(case) {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| CaseError::Io { path, source })?;
    }
    Ok(())
}
