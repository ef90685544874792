use gridwave_core::case_io::{load_case, validate_case, write_case, NetworkCase, DEFAULT_FAULT_ADMITTANCE};
use gridwave_core::freqresp::{default_grid, margins, pole_zero};
use gridwave_core::simulate::{run_simulation, SimOptions, SystemModel};
use gridwave_core::smallsignal::{linearize, LinearizeOptions};
use std::path::Path;

fn case(name: &str) -> NetworkCase {
    load_case(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(name)).unwrap()
}

#[test]
fn bundled_cases_validate() {
    for name in ["two_bus", "smib", "ieee68"] {
        let rep = validate_case(&case(name));
        assert!(rep.is_empty(), "{name}: {:?}", rep.violations);
    }
}

#[test]
fn ieee68_survives_write_and_reload() {
    let c = case("ieee68");
    let dir = tempfile::tempdir().unwrap();
    write_case(&c, dir.path()).unwrap();
    assert_eq!(load_case(dir.path()).unwrap(), c);
}

#[test]
fn bolted_fault_collapses_faulted_bus() {
    let mut c = case("smib");
    c.scenario.fault_admittance = DEFAULT_FAULT_ADMITTANCE;
    let model = SystemModel::initialize(&c).unwrap();
    let res = run_simulation(&model, &SimOptions::from_case(&c)).unwrap();
    let k = c.bus_index(c.scenario.fault_bus.unwrap()).unwrap();
    let during: Vec<f64> = res
        .t
        .iter()
        .zip(&res.bus_v_mag)
        .filter(|(t, _)| **t > c.scenario.t_f1 && **t < c.scenario.t_f2)
        .map(|(_, v)| v[k])
        .collect();
    assert!(!during.is_empty());
    assert!(during.iter().all(|v| *v < 1e-3), "{during:?}");
}

#[test]
fn simulation_is_bit_identical_across_runs() {
    let c = case("smib");
    let model = SystemModel::initialize(&c).unwrap();
    let opts = SimOptions::from_case(&c);
    let a = run_simulation(&model, &opts).unwrap();
    let b = run_simulation(&model, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ieee68_absolute_angles_give_one_zero_pole() {
    let c = case("ieee68");
    let model = SystemModel::initialize(&c).unwrap();
    let opts = LinearizeOptions::new(vec!["omega_s".into()], vec!["G1.omega".into()]);
    let lin = linearize(&model, &model.x0, &model.u0, &opts).unwrap();
    let pz = pole_zero(&lin, "omega_s", "G1.omega").unwrap();
    assert_eq!(pz.poles.iter().filter(|p| p.norm() < 1e-6).count(), 1);
    assert!(pz.poles.iter().all(|p| p.re < 1e-6));
}

#[test]
fn ieee68_speed_channel_has_positive_margins() {
    let c = case("ieee68");
    let model = SystemModel::initialize(&c).unwrap();
    let mut opts = LinearizeOptions::new(vec!["omega_s".into()], vec!["G1.omega".into()]);
    opts.relative_angles = true;
    let lin = linearize(&model, &model.x0, &model.u0, &opts).unwrap();
    let m = margins(&lin, "omega_s", "G1.omega", &default_grid()).unwrap();
    assert!(m.gain_margin_db > 0.0 && m.phase_margin_deg > 0.0);
    assert!(m.stable_closed_loop);
}
