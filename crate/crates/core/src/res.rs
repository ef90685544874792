//! Generic converter-interfaced plant: current-command algebra with limits,
//! first-order converter lags and a reactive-power PI loop.
//!
//! Currents are network-frame components: the injected phasor is
//! `i_p + j i_q`.

use thiserror::Error;

use crate::case_io::ResPlantRecord;
use crate::linalg::C64;

#[derive(Debug, Error, PartialEq)]
pub enum ResError {
    #[error("plant on bus {bus}: initial current {current:.4} exceeds its limit")]
    InitInfeasible { bus: u32, current: f64 },
    #[error("plant on bus {0}: terminal voltage is zero")]
    ZeroVoltage(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResState {
    pub i_p: f64,
    pub i_q: f64,
    pub q_pi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResSetpoints {
    pub p_ref: f64,
    pub q_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentCommands {
    pub i_pcmd: f64,
    pub i_qcmd: f64,
    /// The reactive command sits on a limit; the PI integrator is frozen.
    pub q_clamped: bool,
}

/// Unclamped inverse of `[[Vd, Vq], [Vq, -Vd]] [ip, iq] = [P, Q]`.
pub fn solve_command_currents(v: C64, p: f64, q: f64) -> (f64, f64) {
    let m2 = v.norm_sqr();
    ((v.re * p + v.im * q) / m2, (v.im * p - v.re * q) / m2)
}

/// Current commands for the requested powers. Below `v_freeze` the previous
/// commands `last` are held.
pub fn res_current_commands(
    v: C64,
    p_cmd: f64,
    q_cmd: f64,
    r: &ResPlantRecord,
    last: (f64, f64),
) -> CurrentCommands {
    if v.norm() < r.v_freeze {
        return CurrentCommands {
            i_pcmd: last.0,
            i_qcmd: last.1,
            q_clamped: true,
        };
    }
    let (mut ip, mut iq) = solve_command_currents(v, p_cmd, q_cmd);
    if let Some(max) = r.ip_max {
        ip = ip.clamp(-max, max);
    }
    let mut q_clamped = false;
    if let Some(max) = r.iq_max {
        if iq > max {
            iq = max;
            q_clamped = true;
        }
    }
    if let Some(min) = r.iq_min {
        if iq < min {
            iq = min;
            q_clamped = true;
        }
    }
    CurrentCommands {
        i_pcmd: ip,
        i_qcmd: iq,
        q_clamped,
    }
}

/// Reactive power delivered by injection `(i_p, i_q)` at terminal voltage `v`.
pub fn measured_q(v: C64, i_p: f64, i_q: f64) -> f64 {
    v.im * i_p - v.re * i_q
}

/// Plant-control outputs `(p_cmd, q_cmd)`.
pub fn power_commands(s: &ResState, q_meas: f64, sp: &ResSetpoints, r: &ResPlantRecord) -> (f64, f64) {
    (sp.p_ref, s.q_pi + r.k_p * (sp.q_ref - q_meas))
}

/// Derivatives `[i_p, i_q, q_pi]`.
pub fn res_rhs(
    s: &ResState,
    cmds: &CurrentCommands,
    q_meas: f64,
    sp: &ResSetpoints,
    r: &ResPlantRecord,
) -> [f64; 3] {
    let dq_pi = if cmds.q_clamped {
        0.0
    } else {
        r.k_i * (sp.q_ref - q_meas)
    };
    [
        (cmds.i_pcmd - s.i_p) / r.t_g,
        (cmds.i_qcmd - s.i_q) / r.t_g,
        dq_pi,
    ]
}

/// Full plant evaluation at terminal voltage `v`. The held commands used
/// under the voltage freeze are the filtered currents themselves.
pub fn res_dynamics(s: &ResState, v: C64, sp: &ResSetpoints, r: &ResPlantRecord) -> [f64; 3] {
    let q_meas = measured_q(v, s.i_p, s.i_q);
    let (p_cmd, q_cmd) = power_commands(s, q_meas, sp, r);
    let cmds = res_current_commands(v, p_cmd, q_cmd, r, (s.i_p, s.i_q));
    res_rhs(s, &cmds, q_meas, sp, r)
}

pub fn init_res(bus_v: C64, s_inj: C64, r: &ResPlantRecord) -> Result<(ResState, ResSetpoints), ResError> {
    if bus_v.norm() < 1e-6 {
        return Err(ResError::ZeroVoltage(r.bus));
    }
    let (i_p, i_q) = solve_command_currents(bus_v, s_inj.re, s_inj.im);
    let over = |x: f64, lim: Option<f64>, above: bool| match lim {
        Some(l) if (above && x > l + 1e-12) || (!above && x < l - 1e-12) => true,
        _ => false,
    };
    if r.ip_max.is_some_and(|m| i_p.abs() > m + 1e-12) {
        return Err(ResError::InitInfeasible { bus: r.bus, current: i_p });
    }
    if over(i_q, r.iq_max, true) || over(i_q, r.iq_min, false) {
        return Err(ResError::InitInfeasible { bus: r.bus, current: i_q });
    }
    Ok((
        ResState {
            i_p,
            i_q,
            q_pi: s_inj.im,
        },
        ResSetpoints {
            p_ref: s_inj.re,
            q_ref: s_inj.im,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn plant() -> ResPlantRecord {
        ResPlantRecord {
            bus: 5,
            t_g: 0.02,
            k_p: 0.5,
            k_i: 5.0,
            ip_max: None,
            iq_max: None,
            iq_min: None,
            v_freeze: 0.01,
        }
    }

    #[test]
    fn unit_voltage_commands() {
        let c = res_current_commands(C64::new(1.0, 0.0), 0.5, 0.2, &plant(), (0.0, 0.0));
        assert_eq!((c.i_pcmd, c.i_qcmd), (0.5, -0.2));
    }

    #[test]
    fn rotated_voltage_commands() {
        let v = C64::new(0.8, 0.6);
        let c = res_current_commands(v, 1.0, 0.0, &plant(), (0.0, 0.0));
        assert_abs_diff_eq!(c.i_pcmd, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(c.i_qcmd, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(v.re * c.i_pcmd + v.im * c.i_qcmd, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(measured_q(v, c.i_pcmd, c.i_qcmd), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn freeze_holds_last() {
        let c = res_current_commands(C64::new(0.005, 0.0), 1.0, 1.0, &plant(), (0.3, -0.4));
        assert_eq!((c.i_pcmd, c.i_qcmd), (0.3, -0.4));
    }

    #[test]
    fn limits_clamp_and_flag() {
        let mut r = plant();
        r.ip_max = Some(0.5);
        r.iq_max = Some(0.1);
        r.iq_min = Some(-0.1);
        let c = res_current_commands(C64::new(1.0, 0.0), 0.9, 0.5, &r, (0.0, 0.0));
        assert_eq!(c.i_pcmd, 0.5);
        assert_eq!(c.i_qcmd, -0.1);
        assert!(c.q_clamped);
        let s = ResState { i_p: 0.5, i_q: -0.1, q_pi: 0.5 };
        let sp = ResSetpoints { p_ref: 0.9, q_ref: 0.5 };
        assert_eq!(res_rhs(&s, &c, 0.1, &sp, &r)[2], 0.0);
    }

    proptest! {
        #[test]
        fn power_identity(mag in 0.05f64..2.0, ang in -3.2f64..3.2, p in -2.0f64..2.0, q in -2.0f64..2.0) {
            let v = C64::from_polar(mag, ang);
            let c = res_current_commands(v, p, q, &plant(), (0.0, 0.0));
            prop_assert!((v.re * c.i_pcmd + v.im * c.i_qcmd - p).abs() < 1e-12);
            prop_assert!((measured_q(v, c.i_pcmd, c.i_qcmd) - q).abs() < 1e-12);
        }
    }

    #[test]
    fn equilibrium_and_proportional_limit() {
        let r = plant();
        let s = ResState { i_p: 0.4, i_q: -0.1, q_pi: 0.1 };
        let cmds = CurrentCommands { i_pcmd: 0.4, i_qcmd: -0.1, q_clamped: false };
        let sp = ResSetpoints { p_ref: 0.4, q_ref: 0.1 };
        assert_eq!(res_rhs(&s, &cmds, 0.1, &sp, &r), [0.0, 0.0, 0.0]);
        let r0 = ResPlantRecord { k_i: 0.0, ..r };
        assert_eq!(res_rhs(&s, &cmds, 0.3, &sp, &r0)[2], 0.0);
    }

    #[test]
    fn converter_lag_time_constant() {
        // Integrate di/dt = (0.1 - i)/t_g with fine explicit steps for one t_g.
        let r = plant();
        let cmds = CurrentCommands { i_pcmd: 0.1, i_qcmd: 0.0, q_clamped: true };
        let sp = ResSetpoints { p_ref: 0.0, q_ref: 0.0 };
        let mut s = ResState { i_p: 0.0, i_q: 0.0, q_pi: 0.0 };
        let n = 20000;
        let h = r.t_g / n as f64;
        for _ in 0..n {
            let k1 = res_rhs(&s, &cmds, 0.0, &sp, &r)[0];
            let mid = ResState { i_p: s.i_p + 0.5 * h * k1, ..s };
            let k2 = res_rhs(&mid, &cmds, 0.0, &sp, &r)[0];
            s.i_p += h * k2;
        }
        assert_abs_diff_eq!(s.i_p / 0.1, 1.0 - (-1.0f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn init_cases() {
        let r = plant();
        let (s, sp) = init_res(C64::new(1.0, 0.0), C64::new(0.0, 0.0), &r).unwrap();
        assert_eq!((s.i_p, s.i_q, s.q_pi), (0.0, 0.0, 0.0));
        assert_eq!((sp.p_ref, sp.q_ref), (0.0, 0.0));
        let (s, sp) = init_res(C64::new(1.0, 0.0), C64::new(0.9, 0.1), &r).unwrap();
        assert_abs_diff_eq!(s.i_p, 0.9);
        assert_abs_diff_eq!(s.i_q, -0.1);
        assert_abs_diff_eq!(measured_q(C64::new(1.0, 0.0), s.i_p, s.i_q), 0.1);
        assert_eq!(res_dynamics(&s, C64::new(1.0, 0.0), &sp, &r), [0.0, 0.0, 0.0]);
        let tight = ResPlantRecord { ip_max: Some(0.5), ..r };
        assert!(matches!(
            init_res(C64::new(1.0, 0.0), C64::new(0.9, 0.1), &tight),
            Err(ResError::InitInfeasible { .. })
        ));
    }

    #[test]
    fn pi_loop_tracks_reactive_step_on_stiff_bus() {
        // Stiff bus: voltage fixed, so q_meas depends only on the filtered currents.
        let r = ResPlantRecord { k_i: 50.0, ..plant() };
        let v = C64::from_polar(1.0, 0.1);
        let (mut s, mut sp) = init_res(v, C64::new(0.6, 0.0), &r).unwrap();
        sp.q_ref = 0.2;
        let h = 1e-4;
        let f = |s: &ResState| res_dynamics(s, v, &sp, &r);
        let add = |s: &ResState, d: &[f64; 3], k: f64| ResState {
            i_p: s.i_p + k * d[0],
            i_q: s.i_q + k * d[1],
            q_pi: s.q_pi + k * d[2],
        };
        let steps = (50.0 * r.t_g / h).round() as usize;
        for _ in 0..steps {
            let k1 = f(&s);
            let k2 = f(&add(&s, &k1, h / 2.0));
            let k3 = f(&add(&s, &k2, h / 2.0));
            let k4 = f(&add(&s, &k3, h));
            for k in 0..3 {
                let d = (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]) * h / 6.0;
                match k {
                    0 => s.i_p += d,
                    1 => s.i_q += d,
                    _ => s.q_pi += d,
                }
            }
        }
        assert!((measured_q(v, s.i_p, s.i_q) - 0.2).abs() < 1e-6);
    }
}
