//! Sixth-order synchronous machine, IEEE Type I exciter and steam
//! turbine/governor right-hand sides, plus steady-state initialization.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

use crate::case_io::{ExciterRecord, MachineRecord, TurbineRecord};
use crate::linalg::C64;

#[derive(Debug, Error, PartialEq)]
pub enum MachineError {
    #[error("machine on bus {bus}: {reason}")]
    NonPhysicalInit { bus: u32, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineState {
    pub delta: f64,
    /// Rad/s.
    pub omega: f64,
    pub e_q_p: f64,
    pub e_d_p: f64,
    pub psi_1d: f64,
    pub psi_2q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExciterState {
    pub e_fd: f64,
    pub r_f: f64,
    pub v_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurbineState {
    pub t_m: f64,
    pub p_sv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineSetpoints {
    pub v_ref: f64,
    pub p_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameDirection {
    ToDq,
    ToNetwork,
}

/// `ToNetwork` multiplies by `e^{j(delta - pi/2)}`, `ToDq` by its conjugate.
pub fn machine_frame_rotation(phasor: C64, delta: f64, direction: FrameDirection) -> C64 {
    let r = C64::from_polar(1.0, delta - FRAC_PI_2);
    match direction {
        FrameDirection::ToNetwork => phasor * r,
        FrameDirection::ToDq => phasor * r.conj(),
    }
}

/// Interpolation weights `(c1, c2)` on the d-axis and q-axis.
pub fn emf_weights(m: &MachineRecord) -> ((f64, f64), (f64, f64)) {
    let dd = m.x_d_p - m.x_ls;
    let dq = m.x_q_p - m.x_ls;
    (
        ((m.x_d_pp - m.x_ls) / dd, (m.x_d_p - m.x_d_pp) / dd),
        ((m.x_q_pp - m.x_ls) / dq, (m.x_q_p - m.x_q_pp) / dq),
    )
}

/// Returns `(e_d_pp, e_q_pp)`.
pub fn subtransient_emf(s: &MachineState, m: &MachineRecord) -> (f64, f64) {
    let ((c1d, c2d), (c1q, c2q)) = emf_weights(m);
    (c1q * s.e_d_p - c2q * s.psi_2q, c1d * s.e_q_p + c2d * s.psi_1d)
}

pub fn electrical_torque(e_d_pp: f64, e_q_pp: f64, i_d: f64, i_q: f64, m: &MachineRecord) -> f64 {
    e_d_pp * i_d + e_q_pp * i_q + (m.x_q_pp - m.x_d_pp) * i_d * i_q
}

/// Derivatives in state order `[delta, omega, e_q_p, e_d_p, psi_1d, psi_2q]`.
pub fn machine_rhs(
    s: &MachineState,
    i_d: f64,
    i_q: f64,
    e_fd: f64,
    t_m: f64,
    m: &MachineRecord,
    omega_s: f64,
) -> [f64; 6] {
    let dd = m.x_d_p - m.x_ls;
    let dq = m.x_q_p - m.x_ls;
    let d_corr = (m.x_d_p - m.x_d_pp) / (dd * dd) * (s.psi_1d + dd * i_d - s.e_q_p);
    let q_corr = (m.x_q_p - m.x_q_pp) / (dq * dq) * (s.psi_2q + dq * i_q + s.e_d_p);
    let de_q_p = (-s.e_q_p - (m.x_d - m.x_d_p) * (i_d - d_corr) + e_fd) / m.t_do_p;
    let dpsi_1d = (-s.psi_1d + s.e_q_p - dd * i_d) / m.t_do_pp;
    let de_d_p = (-s.e_d_p + (m.x_q - m.x_q_p) * (i_q - q_corr)) / m.t_qo_p;
    let dpsi_2q = (-s.psi_2q - s.e_d_p - dq * i_q) / m.t_qo_pp;
    let (e_d_pp, e_q_pp) = subtransient_emf(s, m);
    let t_e = electrical_torque(e_d_pp, e_q_pp, i_d, i_q, m);
    let domega = (t_m - t_e - m.t_fw) * omega_s / (2.0 * m.h);
    [s.omega - omega_s, domega, de_q_p, de_d_p, dpsi_1d, dpsi_2q]
}

pub fn saturation(e: &ExciterRecord, e_fd: f64) -> f64 {
    if e.sat_a == 0.0 {
        0.0
    } else {
        e.sat_a * (e.sat_b * e_fd).exp()
    }
}

/// Derivatives `[e_fd, r_f, v_r]`. At an active regulator limit the `v_r`
/// derivative is zeroed when it points outward.
pub fn exciter_rhs(x: &ExciterState, v_terminal: f64, sp: &MachineSetpoints, e: &ExciterRecord) -> [f64; 3] {
    let de_fd = (-(e.k_e + saturation(e, x.e_fd)) * x.e_fd + x.v_r) / e.t_e;
    let dr_f = (-x.r_f + e.k_f / e.t_f * x.e_fd) / e.t_f;
    let mut dv_r = (-x.v_r + e.k_a * x.r_f - e.k_a * e.k_f / e.t_f * x.e_fd
        + e.k_a * (sp.v_ref - v_terminal))
        / e.t_a;
    if let Some(hi) = e.vr_max {
        if x.v_r >= hi && dv_r > 0.0 {
            dv_r = 0.0;
        }
    }
    if let Some(lo) = e.vr_min {
        if x.v_r <= lo && dv_r < 0.0 {
            dv_r = 0.0;
        }
    }
    [de_fd, dr_f, dv_r]
}

/// Clamp `v_r` into the regulator limits.
pub fn clamp_regulator(v_r: f64, e: &ExciterRecord) -> f64 {
    let mut v = v_r;
    if let Some(hi) = e.vr_max {
        v = v.min(hi);
    }
    if let Some(lo) = e.vr_min {
        v = v.max(lo);
    }
    v
}

pub fn governor_signal(omega: f64, omega_s: f64, r_d: f64) -> f64 {
    -(omega / omega_s - 1.0) / r_d
}

/// Derivatives `[t_m, p_sv]`.
pub fn turbine_rhs(
    x: &TurbineState,
    omega: f64,
    sp: &MachineSetpoints,
    t: &TurbineRecord,
    omega_s: f64,
) -> [f64; 2] {
    [
        (-x.t_m + x.p_sv) / t.t_ch,
        (-x.p_sv + sp.p_c + governor_signal(omega, omega_s, t.r_d)) / t.t_sv,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineInit {
    pub machine: MachineState,
    pub exciter: ExciterState,
    pub turbine: TurbineState,
    pub setpoints: MachineSetpoints,
    pub i_d: f64,
    pub i_q: f64,
}

/// Steady state for a machine delivering `s_gen` at terminal voltage `bus_v`.
///
/// The rotor axis is located with `x_q - x_q_pp + x_d_pp` so that the stator
/// interface (which uses `x_d_pp` on both axes) is in equilibrium for any
/// subtransient saliency.
pub fn init_machine(
    bus_v: C64,
    s_gen: C64,
    m: &MachineRecord,
    e: &ExciterRecord,
    _turbine: &TurbineRecord,
    omega_s: f64,
) -> Result<MachineInit, MachineError> {
    let fail = |reason| MachineError::NonPhysicalInit { bus: m.bus, reason };
    if (m.x_d_p - m.x_ls).abs() < 1e-12 || (m.x_q_p - m.x_ls).abs() < 1e-12 {
        return Err(fail("transient reactance equals leakage reactance"));
    }
    if bus_v.norm() < 1e-6 {
        return Err(fail("terminal voltage is zero"));
    }
    if e.k_a == 0.0 || e.t_f == 0.0 {
        return Err(fail("exciter gain or feedback time constant is zero"));
    }
    let i = (s_gen / bus_v).conj();
    let x_q_eff = m.x_q - m.x_q_pp + m.x_d_pp;
    let e_axis = bus_v + C64::new(m.r_s, x_q_eff) * i;
    let delta = e_axis.arg();
    let i_dq = machine_frame_rotation(i, delta, FrameDirection::ToDq);
    let v_dq = machine_frame_rotation(bus_v, delta, FrameDirection::ToDq);
    let (i_d, i_q) = (i_dq.re, i_dq.im);

    let e_d_p = (m.x_q - m.x_q_p) * i_q;
    let psi_2q = -e_d_p - (m.x_q_p - m.x_ls) * i_q;
    let e_q_p = v_dq.im + m.r_s * i_q + m.x_d_p * i_d;
    let psi_1d = e_q_p - (m.x_d_p - m.x_ls) * i_d;
    let machine = MachineState {
        delta,
        omega: omega_s,
        e_q_p,
        e_d_p,
        psi_1d,
        psi_2q,
    };
    let e_fd = e_q_p + (m.x_d - m.x_d_p) * i_d;
    let v_r = (e.k_e + saturation(e, e_fd)) * e_fd;
    if e.vr_max.is_some_and(|hi| v_r > hi) || e.vr_min.is_some_and(|lo| v_r < lo) {
        log::warn!("machine on bus {}: initial regulator output {v_r:.4} is outside its limits", m.bus);
    }
    let exciter = ExciterState {
        e_fd,
        r_f: e.k_f / e.t_f * e_fd,
        v_r,
    };
    let (e_d_pp, e_q_pp) = subtransient_emf(&machine, m);
    let t_m = electrical_torque(e_d_pp, e_q_pp, i_d, i_q, m) + m.t_fw;
    Ok(MachineInit {
        machine,
        exciter,
        turbine: TurbineState { t_m, p_sv: t_m },
        setpoints: MachineSetpoints {
            v_ref: bus_v.norm() + v_r / e.k_a,
            p_c: t_m,
        },
        i_d,
        i_q,
    })
}

/// Terminal voltage in the dq frame implied by the stator interface,
/// `V = E'' - (r_s + j x_d_pp) I`.
pub fn stator_voltage_dq(e_d_pp: f64, e_q_pp: f64, i_dq: C64, m: &MachineRecord) -> C64 {
    C64::new(e_d_pp, e_q_pp) - C64::new(m.r_s, m.x_d_pp) * i_dq
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const WS: f64 = 2.0 * PI * 60.0;

    pub(crate) fn textbook() -> (MachineRecord, ExciterRecord, TurbineRecord) {
        (
            MachineRecord {
                bus: 1,
                r_s: 0.0,
                x_ls: 0.1,
                x_d: 1.8,
                x_d_p: 0.3,
                x_d_pp: 0.25,
                x_q: 1.7,
                x_q_p: 0.55,
                x_q_pp: 0.25,
                t_do_p: 8.0,
                t_do_pp: 0.03,
                t_qo_p: 0.4,
                t_qo_pp: 0.05,
                h: 3.5,
                t_fw: 0.0,
            },
            ExciterRecord {
                machine: 0,
                k_a: 20.0,
                t_a: 0.2,
                k_e: 1.0,
                t_e: 0.314,
                k_f: 0.063,
                t_f: 0.35,
                sat_a: 0.0039,
                sat_b: 1.555,
                vr_max: None,
                vr_min: None,
            },
            TurbineRecord {
                machine: 0,
                t_ch: 0.5,
                t_sv: 0.2,
                r_d: 0.05,
            },
        )
    }

    fn all_rhs(init: &MachineInit, m: &MachineRecord, e: &ExciterRecord, t: &TurbineRecord, v: f64) -> Vec<f64> {
        let mut out = machine_rhs(
            &init.machine,
            init.i_d,
            init.i_q,
            init.exciter.e_fd,
            init.turbine.t_m,
            m,
            WS,
        )
        .to_vec();
        out.extend(exciter_rhs(&init.exciter, v, &init.setpoints, e));
        out.extend(turbine_rhs(&init.turbine, init.machine.omega, &init.setpoints, t, WS));
        out
    }

    #[test]
    fn rotation_conventions() {
        let p = C64::new(0.3, -0.7);
        assert_eq!(machine_frame_rotation(p, FRAC_PI_2, FrameDirection::ToNetwork), p);
        let img = machine_frame_rotation(C64::new(1.0, 0.0), 0.0, FrameDirection::ToNetwork);
        assert_abs_diff_eq!(img.re, 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(img.im, -1.0, epsilon = 1e-16);
    }

    #[test]
    fn rotation_round_trip() {
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let p = C64::new(next() * 4.0 - 2.0, next() * 4.0 - 2.0);
            let d = next() * 20.0 - 10.0;
            let back = machine_frame_rotation(
                machine_frame_rotation(p, d, FrameDirection::ToNetwork),
                d,
                FrameDirection::ToDq,
            );
            assert!((back - p).norm() <= 1e-15 * p.norm().max(1.0) * 4.0);
        }
    }

    #[test]
    fn emf_degenerate_and_unity() {
        let (mut m, _, _) = textbook();
        let s = MachineState {
            delta: 0.0,
            omega: WS,
            e_q_p: 1.1,
            e_d_p: 0.4,
            psi_1d: 0.9,
            psi_2q: -0.3,
        };
        let (_, eq) = subtransient_emf(&MachineState { psi_1d: 1.1, ..s }, &m);
        assert_abs_diff_eq!(eq, 1.1, epsilon = 1e-15);
        m.x_d_pp = m.x_d_p;
        let (_, eq) = subtransient_emf(&s, &m);
        assert_eq!(eq, 1.1);
    }

    proptest! {
        #[test]
        fn weights_partition_unity(
            x_ls in 0.0f64..0.2,
            a in 0.01f64..0.3,
            b in 0.01f64..0.5,
            c in 0.01f64..2.0,
        ) {
            let (mut m, _, _) = textbook();
            m.x_ls = x_ls;
            m.x_d_pp = x_ls + a;
            m.x_d_p = m.x_d_pp + b;
            m.x_d = m.x_d_p + c;
            m.x_q_pp = x_ls + a;
            m.x_q_p = m.x_q_pp + b * 1.3;
            m.x_q = m.x_q_p + c;
            let ((c1d, c2d), (c1q, c2q)) = emf_weights(&m);
            prop_assert!((c1d + c2d - 1.0).abs() < 1e-12);
            prop_assert!((c1q + c2q - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synchronism_and_zero_current_equilibrium() {
        let (m, _, _) = textbook();
        let s = MachineState {
            delta: 0.4,
            omega: WS,
            e_q_p: 1.05,
            e_d_p: 0.0,
            psi_1d: 1.05,
            psi_2q: 0.0,
        };
        let d = machine_rhs(&s, 0.0, 0.0, 1.05, 0.0, &m, WS);
        assert_eq!(d[0], 0.0);
        assert_abs_diff_eq!(d[2], 0.0, epsilon = 1e-15);
        let d = machine_rhs(&MachineState { omega: WS + 1.0, ..s }, 0.0, 0.0, 1.05, 0.0, &m, WS);
        assert_eq!(d[0], 1.0);
    }

    #[test]
    fn exciter_equilibria() {
        let (_, mut e, _) = textbook();
        e.sat_a = 0.0;
        let x = ExciterState {
            e_fd: 2.0,
            r_f: e.k_f / e.t_f * 2.0,
            v_r: e.k_e * 2.0,
        };
        let sp = MachineSetpoints { v_ref: 1.0 + x.v_r / e.k_a, p_c: 0.0 };
        let d = exciter_rhs(&x, 1.0, &sp, &e);
        assert_eq!(d[0], 0.0);
        assert_abs_diff_eq!(d[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[2], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn reference_step_drives_regulator() {
        let (_, e, _) = textbook();
        let x = ExciterState {
            e_fd: 2.0,
            r_f: e.k_f / e.t_f * 2.0,
            v_r: (e.k_e + saturation(&e, 2.0)) * 2.0,
        };
        let sp = MachineSetpoints { v_ref: 1.0 + x.v_r / e.k_a, p_c: 0.0 };
        let base = exciter_rhs(&x, 1.0, &sp, &e);
        let step = exciter_rhs(&x, 1.0, &MachineSetpoints { v_ref: sp.v_ref + 0.05, ..sp }, &e);
        assert_abs_diff_eq!(step[2] - base[2], e.k_a * 0.05 / e.t_a, epsilon = 1e-12);
        assert_eq!(step[0], base[0]);
    }

    #[test]
    fn regulator_limit_zeroes_outward_derivative() {
        let (_, mut e, _) = textbook();
        e.vr_max = Some(1.0);
        e.vr_min = Some(-1.0);
        let x = ExciterState { e_fd: 1.0, r_f: 0.18, v_r: 1.0 };
        let sp = MachineSetpoints { v_ref: 2.0, p_c: 0.0 };
        assert_eq!(exciter_rhs(&x, 1.0, &sp, &e)[2], 0.0);
        assert_eq!(clamp_regulator(3.0, &e), 1.0);
        assert_eq!(clamp_regulator(-3.0, &e), -1.0);
    }

    #[test]
    fn turbine_cases() {
        let (_, _, t) = textbook();
        let x = TurbineState { t_m: 0.7, p_sv: 0.7 };
        let sp = MachineSetpoints { v_ref: 1.0, p_c: 0.7 };
        assert_eq!(turbine_rhs(&x, WS, &sp, &t, WS), [0.0, 0.0]);
        assert_abs_diff_eq!(governor_signal(1.01 * WS, WS, 0.05), -0.2, epsilon = 1e-12);
        assert_eq!(governor_signal(1.01 * WS, WS, f64::INFINITY), 0.0);
    }

    #[test]
    fn no_load_init() {
        let (m, e, t) = textbook();
        let init = init_machine(C64::new(1.0, 0.0), C64::new(0.0, 0.0), &m, &e, &t, WS).unwrap();
        assert_eq!(init.i_d, 0.0);
        assert_eq!(init.i_q, 0.0);
        assert_eq!(init.machine.e_d_p, 0.0);
        assert_eq!(init.turbine.t_m, m.t_fw);
    }

    #[test]
    fn textbook_rotor_angle() {
        let (m, e, t) = textbook();
        let (mut m2, _, _) = textbook();
        m2.x_q_pp = m.x_d_pp;
        let init = init_machine(C64::new(1.0, 0.0), C64::new(0.8, 0.2), &m2, &e, &t, WS).unwrap();
        // I = 0.8 - j0.2; E = 1 + j1.7 (0.8 - j0.2) = 1.34 + j1.36.
        assert_abs_diff_eq!(init.machine.delta, 1.36f64.atan2(1.34), epsilon = 1e-14);
    }

    #[test]
    fn init_is_equilibrium() {
        let (mut m, e, t) = textbook();
        for (r_s, t_fw, x_q_pp) in [(0.0, 0.0, 0.25), (0.004, 0.01, 0.25), (0.003, 0.0, 0.35)] {
            m.r_s = r_s;
            m.t_fw = t_fw;
            m.x_q_pp = x_q_pp;
            let v = C64::from_polar(1.03, 0.2);
            let s = C64::new(0.9, 0.3);
            let init = init_machine(v, s, &m, &e, &t, WS).unwrap();
            let d = all_rhs(&init, &m, &e, &t, v.norm());
            assert!(d.iter().all(|x| x.abs() < 1e-8), "{d:?}");
            // Interface voltage rotated back reproduces the bus voltage.
            let (edp, eqp) = subtransient_emf(&init.machine, &m);
            let vdq = stator_voltage_dq(edp, eqp, C64::new(init.i_d, init.i_q), &m);
            let vn = machine_frame_rotation(vdq, init.machine.delta, FrameDirection::ToNetwork);
            assert!((vn - v).norm() < 1e-12);
        }
    }

    #[test]
    fn torque_equals_power_when_lossless() {
        let (m, e, t) = textbook();
        let init = init_machine(C64::from_polar(1.0, -0.1), C64::new(0.75, -0.1), &m, &e, &t, WS).unwrap();
        assert_abs_diff_eq!(init.turbine.t_m * (init.machine.omega / WS), 0.75, epsilon = 1e-8);
    }

    #[test]
    fn degenerate_reactance_rejected() {
        let (mut m, e, t) = textbook();
        m.x_d_p = m.x_ls;
        assert!(matches!(
            init_machine(C64::new(1.0, 0.0), C64::new(0.5, 0.0), &m, &e, &t, WS),
            Err(MachineError::NonPhysicalInit { .. })
        ));
    }
}
