//! Frequency response, gain and phase margins, and pole-zero extraction for
//! a single input/output channel of a linear model.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, EigGeneralized, GeneralizedEigenvalue, Solve};
use thiserror::Error;

use crate::linalg::C64;
use crate::smallsignal::{LinearModel, SmallSignalError};

#[derive(Debug, Error)]
pub enum FreqRespError {
    #[error("frequency grid point {omega} rad/s lies on a pole")]
    GridHitsPole { omega: f64 },
    #[error("phase jumps {jump_deg:.1} deg between {w0} and {w1} rad/s; grid too coarse to unwrap")]
    AmbiguousPhaseUnwrap { w0: f64, w1: f64, jump_deg: f64 },
    #[error("invalid frequency grid: {0}")]
    BadGrid(String),
    #[error("linear algebra failure: {0}")]
    Lapack(String),
    #[error(transparent)]
    Model(#[from] SmallSignalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub omega: Vec<f64>,
    pub g: Vec<C64>,
    pub io: (String, String),
}

impl FrequencyResponse {
    pub fn mag_db(&self) -> Vec<f64> {
        self.g.iter().map(|g| 20.0 * g.norm().log10()).collect()
    }

    /// Continuous phase in degrees along the grid.
    pub fn phase_deg(&self) -> Result<Vec<f64>, FreqRespError> {
        unwrap_phase(&self.omega, &self.g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    /// `+inf` when the phase never crosses -180 deg.
    pub gain_margin_db: f64,
    pub omega_pc: Option<f64>,
    /// `+inf` when the gain never crosses 1.
    pub phase_margin_deg: f64,
    pub omega_gc: Option<f64>,
    pub stable_closed_loop: bool,
    pub io: (String, String),
}

/// `n` log-spaced points over `[w_min, w_max]`.
pub fn log_grid(w_min: f64, w_max: f64, n: usize) -> Result<Vec<f64>, FreqRespError> {
    if !(w_min > 0.0 && w_max > w_min && n >= 2) {
        return Err(FreqRespError::BadGrid(format!("[{w_min}, {w_max}] with {n} points")));
    }
    let (l0, l1) = (w_min.log10(), w_max.log10());
    Ok((0..n)
        .map(|k| 10f64.powf(l0 + (l1 - l0) * k as f64 / (n - 1) as f64))
        .collect())
}

pub fn default_grid() -> Vec<f64> {
    log_grid(1e-2, 1e3, 400).unwrap()
}

fn siso_parts(model: &LinearModel, input: usize, output: usize) -> (Array1<f64>, Array1<f64>, f64) {
    (
        model.b.column(input).to_owned(),
        model.c.row(output).to_owned(),
        model.d[[output, input]],
    )
}

fn eval_siso(a: &Array2<f64>, b: &Array1<f64>, c: &Array1<f64>, d: f64, s: C64) -> Result<C64, FreqRespError> {
    let n = a.nrows();
    if n == 0 {
        return Ok(C64::new(d, 0.0));
    }
    let m = Array2::from_shape_fn((n, n), |(i, j)| {
        let diag = if i == j { s } else { C64::new(0.0, 0.0) };
        diag - C64::new(a[[i, j]], 0.0)
    });
    let rhs = b.mapv(|v| C64::new(v, 0.0));
    let x = m.solve_into(rhs).map_err(|e| FreqRespError::Lapack(e.to_string()))?;
    let g = c.iter().zip(x.iter()).map(|(&ci, &xi)| xi * ci).sum::<C64>() + d;
    if !(g.re.is_finite() && g.im.is_finite()) {
        return Err(FreqRespError::Lapack("non-finite response".into()));
    }
    Ok(g)
}

/// `c (sI - A)^{-1} b + d` for input column `input` and output row `output`.
pub fn transfer_at(model: &LinearModel, input: usize, output: usize, s: C64) -> Result<C64, FreqRespError> {
    let (b, c, d) = siso_parts(model, input, output);
    eval_siso(&model.a, &b, &c, d, s)
}

fn eigenvalues(a: &Array2<f64>) -> Result<Vec<C64>, FreqRespError> {
    if a.nrows() == 0 {
        return Ok(vec![]);
    }
    let (vals, _) = a
        .as_standard_layout()
        .to_owned()
        .eig()
        .map_err(|e| FreqRespError::Lapack(e.to_string()))?;
    Ok(vals.to_vec())
}

pub fn evaluate_response(model: &LinearModel, input: &str, output: &str, omega: &[f64]) -> Result<FrequencyResponse, FreqRespError> {
    let i = model.input_index(input)?;
    let o = model.output_index(output)?;
    if omega.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FreqRespError::BadGrid("frequencies must be strictly increasing".into()));
    }
    let poles = eigenvalues(&model.a)?;
    let (b, c, d) = siso_parts(model, i, o);
    let mut g = Vec::with_capacity(omega.len());
    for &w in omega {
        let s = C64::new(0.0, w);
        if poles.iter().any(|p| (s - p).norm() < 1e-12) {
            return Err(FreqRespError::GridHitsPole { omega: w });
        }
        g.push(eval_siso(&model.a, &b, &c, d, s)?);
    }
    Ok(FrequencyResponse {
        omega: omega.to_vec(),
        g,
        io: (input.to_string(), output.to_string()),
    })
}

fn wrap180(x: f64) -> f64 {
    let mut y = (x + 180.0).rem_euclid(360.0) - 180.0;
    if y <= -180.0 {
        y += 360.0;
    }
    y
}

pub fn unwrap_phase(omega: &[f64], g: &[C64]) -> Result<Vec<f64>, FreqRespError> {
    let mut out: Vec<f64> = Vec::with_capacity(g.len());
    for (k, z) in g.iter().enumerate() {
        let raw = z.arg().to_degrees();
        match out.last() {
            None => out.push(raw),
            Some(&prev) => {
                let step = wrap180(raw - prev);
                if step.abs() > 170.0 {
                    return Err(FreqRespError::AmbiguousPhaseUnwrap {
                        w0: omega[k - 1],
                        w1: omega[k],
                        jump_deg: step,
                    });
                }
                out.push(prev + step);
            }
        }
    }
    Ok(out)
}

fn bisect<F: Fn(f64) -> Result<f64, FreqRespError>>(f: F, mut lo: f64, mut hi: f64) -> Result<f64, FreqRespError> {
    let mut flo = f(lo)?;
    while hi - lo > 1e-9 * hi.max(1.0) && hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Margins of the open loop `G` under unity negative feedback.
pub fn margins(model: &LinearModel, input: &str, output: &str, omega: &[f64]) -> Result<MarginReport, FreqRespError> {
    let resp = evaluate_response(model, input, output, omega)?;
    let phase = resp.phase_deg()?;
    let (i, o) = (model.input_index(input)?, model.output_index(output)?);
    let (b, c, d) = siso_parts(model, i, o);
    let g_at = |w: f64| eval_siso(&model.a, &b, &c, d, C64::new(0.0, w));

    let mut gm = f64::INFINITY;
    let mut w_pc = None;
    for k in 1..omega.len() {
        // Distance of the phase from the nearest odd multiple of 180 deg,
        // measured continuously from the left end of the interval.
        let base = ((phase[k - 1] + 180.0) / 360.0).round() * 360.0 - 180.0;
        let h0 = phase[k - 1] - base;
        let h1 = phase[k] - base;
        if h0 == 0.0 || (h0 < 0.0) != (h1 < 0.0) {
            let p0 = phase[k - 1];
            let z0 = resp.g[k - 1];
            let cross = |w: f64| -> Result<f64, FreqRespError> {
                let z = g_at(w)?;
                Ok(p0 + wrap180((z / z0).arg().to_degrees()) - base)
            };
            let w = bisect(cross, omega[k - 1], omega[k])?;
            let m = -20.0 * g_at(w)?.norm().log10();
            if m < gm {
                gm = m;
                w_pc = Some(w);
            }
        }
    }

    let mut pm = f64::INFINITY;
    let mut w_gc = None;
    for k in 1..omega.len() {
        let m0 = resp.g[k - 1].norm() - 1.0;
        let m1 = resp.g[k].norm() - 1.0;
        if m0 == 0.0 || (m0 < 0.0) != (m1 < 0.0) {
            let w = bisect(|w| Ok(g_at(w)?.norm() - 1.0), omega[k - 1], omega[k])?;
            let z = g_at(w)?;
            let p = wrap180(180.0 + z.arg().to_degrees());
            if p < pm {
                pm = p;
                w_gc = Some(w);
            }
        }
    }

    Ok(MarginReport {
        gain_margin_db: gm,
        omega_pc: w_pc,
        phase_margin_deg: pm,
        omega_gc: w_gc,
        stable_closed_loop: gm > 0.0 && pm > 0.0 && closed_loop_stable(model, i, o)?,
        io: resp.io,
    })
}

/// Eigenvalues of the unity negative-feedback loop `u = -y` all lie in the
/// closed left half plane (a structural zero mode is tolerated).
pub fn closed_loop_stable(model: &LinearModel, input: usize, output: usize) -> Result<bool, FreqRespError> {
    let (b, c, d) = siso_parts(model, input, output);
    if (1.0 + d).abs() < 1e-14 {
        return Ok(false);
    }
    let n = model.a.nrows();
    let acl = Array2::from_shape_fn((n, n), |(r, s)| model.a[[r, s]] - b[r] * c[s] / (1.0 + d));
    let scale = model.a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    Ok(eigenvalues(&acl)?.iter().all(|l| l.re < 1e-8 * scale))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoleZero {
    pub poles: Vec<C64>,
    pub zeros: Vec<C64>,
}

/// Poles are the eigenvalues of A; zeros are the finite generalized
/// eigenvalues of the system pencil.
pub fn pole_zero(model: &LinearModel, input: &str, output: &str) -> Result<PoleZero, FreqRespError> {
    let (i, o) = (model.input_index(input)?, model.output_index(output)?);
    let (b, c, d) = siso_parts(model, i, o);
    let n = model.a.nrows();
    let poles = eigenvalues(&model.a)?;
    let m = Array2::from_shape_fn((n + 1, n + 1), |(r, s)| match (r < n, s < n) {
        (true, true) => model.a[[r, s]],
        (true, false) => b[r],
        (false, true) => c[s],
        (false, false) => d,
    });
    let e = Array2::from_shape_fn((n + 1, n + 1), |(r, s)| if r == s && r < n { 1.0 } else { 0.0 });
    let (vals, _) = (m, e)
        .eig_generalized(None)
        .map_err(|e| FreqRespError::Lapack(e.to_string()))?;
    let mut zeros: Vec<C64> = vals
        .iter()
        .filter_map(|v| match v {
            GeneralizedEigenvalue::Finite(z, _) if z.re.is_finite() && z.im.is_finite() && z.norm() <= 1e10 => Some(*z),
            _ => None,
        })
        .collect();
    zeros.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(PoleZero { poles, zeros })
}

pub fn export_plots(resp: &FrequencyResponse, margins: Option<&MarginReport>, pz: Option<&PoleZero>, dir: &Path) -> Result<Vec<String>, FreqRespError> {
    let mag = resp.mag_db();
    let phase = resp.phase_deg()?;
    let create = |name: &str| -> std::io::Result<std::io::BufWriter<std::fs::File>> {
        Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
    };

    let mut f = create("bode.csv")?;
    writeln!(f, "omega,mag_db,phase_deg")?;
    for k in 0..resp.omega.len() {
        writeln!(f, "{},{},{}", resp.omega[k], mag[k], phase[k])?;
    }
    f.flush()?;

    let mut f = create("nyquist.csv")?;
    writeln!(f, "re,im")?;
    for g in &resp.g {
        writeln!(f, "{},{}", g.re, g.im)?;
    }
    f.flush()?;

    let mut f = create("nichols.csv")?;
    writeln!(f, "phase_deg,mag_db")?;
    for k in 0..resp.omega.len() {
        writeln!(f, "{},{}", phase[k], mag[k])?;
    }
    f.flush()?;

    let mut f = create("poles_zeros.csv")?;
    writeln!(f, "kind,re,im")?;
    if let Some(pz) = pz {
        for p in &pz.poles {
            writeln!(f, "pole,{},{}", p.re, p.im)?;
        }
        for z in &pz.zeros {
            writeln!(f, "zero,{},{}", z.re, z.im)?;
        }
    }
    f.flush()?;

    let mut f = create("margins.csv")?;
    writeln!(f, "input,output,gain_margin_db,omega_pc,phase_margin_deg,omega_gc,stable_closed_loop")?;
    if let Some(m) = margins {
        let opt = |w: Option<f64>| w.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            m.io.0,
            m.io.1,
            m.gain_margin_db,
            opt(m.omega_pc),
            m.phase_margin_deg,
            opt(m.omega_gc),
            m.stable_closed_loop
        )?;
    }
    f.flush()?;

    Ok(["bode.csv", "nyquist.csv", "nichols.csv", "poles_zeros.csv", "margins.csv"]
        .iter()
        .map(|s| s.to_string())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn model(a: Array2<f64>, b: Array1<f64>, c: Array1<f64>, d: f64) -> LinearModel {
        let n = a.nrows();
        LinearModel {
            b: b.into_shape_with_order((n, 1)).unwrap(),
            c: c.into_shape_with_order((1, n)).unwrap(),
            d: Array2::from_elem((1, 1), d),
            state_labels: (0..n).map(|k| format!("x{k}")).collect(),
            input_labels: vec!["u".into()],
            output_labels: vec!["y".into()],
            equilibrium: vec![0.0; n],
            reference_state: None,
            a,
        }
    }

    /// Controllable canonical form of 1 / (s (s+1) (s+2)).
    fn third_order() -> LinearModel {
        model(
            array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, -2.0, -3.0]],
            array![0.0, 0.0, 1.0],
            array![1.0, 0.0, 0.0],
            0.0,
        )
    }

    #[test]
    fn first_order_lag() {
        let m = model(array![[-1.0]], array![1.0], array![1.0], 0.0);
        let r = evaluate_response(&m, "u", "y", &[1e-9, 1.0]).unwrap();
        assert!((r.g[0] - C64::new(1.0, 0.0)).norm() < 1e-8);
        assert!((r.g[1] - C64::new(1.0, 0.0) / C64::new(1.0, 1.0)).norm() < 1e-14);
        assert_abs_diff_eq!(r.mag_db()[1], -3.0103, epsilon = 1e-4);
        let mg = margins(&m, "u", "y", &default_grid()).unwrap();
        assert!(mg.gain_margin_db.is_infinite() && mg.omega_pc.is_none());
        assert!(mg.phase_margin_deg > 90.0);
    }

    #[test]
    fn static_gain() {
        let m = LinearModel {
            a: Array2::zeros((0, 0)),
            b: Array2::zeros((0, 1)),
            c: Array2::zeros((1, 0)),
            d: Array2::from_elem((1, 1), 2.0),
            state_labels: vec![],
            input_labels: vec!["u".into()],
            output_labels: vec!["y".into()],
            equilibrium: vec![],
            reference_state: None,
        };
        let r = evaluate_response(&m, "u", "y", &default_grid()).unwrap();
        assert!(r.g.iter().all(|g| *g == C64::new(2.0, 0.0)));
    }

    #[test]
    fn third_order_matches_rational_form() {
        let m = third_order();
        let grid = log_grid(0.05, 50.0, 20).unwrap();
        let r = evaluate_response(&m, "u", "y", &grid).unwrap();
        for (w, g) in grid.iter().zip(&r.g) {
            let s = C64::new(0.0, *w);
            let exact = 1.0 / (s * (s + 1.0) * (s + 2.0));
            assert!((g - exact).norm() <= 1e-10 * exact.norm());
        }
        for (w, g) in grid.iter().zip(&r.g) {
            let neg = transfer_at(&m, 0, 0, C64::new(0.0, -w)).unwrap();
            assert!((neg - g.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn third_order_margins() {
        let m = third_order();
        let mg = margins(&m, "u", "y", &default_grid()).unwrap();
        assert_abs_diff_eq!(mg.omega_pc.unwrap(), 2f64.sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(mg.gain_margin_db, 20.0 * 6f64.log10(), epsilon = 1e-6);
        let wgc = mg.omega_gc.unwrap();
        assert_abs_diff_eq!(wgc, 0.446, epsilon = 1e-3);
        assert_abs_diff_eq!(mg.phase_margin_deg, 53.4, epsilon = 0.1);
        assert!(mg.stable_closed_loop);
        let zpc = transfer_at(&m, 0, 0, C64::new(0.0, mg.omega_pc.unwrap())).unwrap();
        assert!((zpc.arg().to_degrees().abs() - 180.0).abs() < 1e-3);
        let zgc = transfer_at(&m, 0, 0, C64::new(0.0, wgc)).unwrap();
        assert!((zgc.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unstable_closed_loop_detected() {
        // 10 / (s (s+1) (s+2)) has negative gain margin.
        let mut m = third_order();
        m.c *= 10.0;
        let mg = margins(&m, "u", "y", &default_grid()).unwrap();
        assert!(mg.gain_margin_db < 0.0);
        assert!(!mg.stable_closed_loop);
        assert!(!closed_loop_stable(&m, 0, 0).unwrap());
    }

    #[test]
    fn grid_on_pole_rejected() {
        let m = model(array![[0.0, 1.0], [-1.0, 0.0]], array![0.0, 1.0], array![1.0, 0.0], 0.0);
        assert!(matches!(
            evaluate_response(&m, "u", "y", &[0.5, 1.0, 2.0]),
            Err(FreqRespError::GridHitsPole { .. })
        ));
    }

    #[test]
    fn coarse_grid_flags_unwrap() {
        // Lightly damped resonance passes 180 deg of phase between two points.
        let m = model(array![[0.0, 1.0], [-1.0, -0.001]], array![0.0, 1.0], array![1.0, 0.0], 0.0);
        let r = evaluate_response(&m, "u", "y", &[0.5, 2.0]).unwrap();
        assert!(matches!(r.phase_deg(), Err(FreqRespError::AmbiguousPhaseUnwrap { .. })));
    }

    #[test]
    fn zeros_and_poles() {
        // (s+2)/((s+1)(s+3)) = (s+2)/(s^2+4s+3).
        let m = model(array![[0.0, 1.0], [-3.0, -4.0]], array![0.0, 1.0], array![2.0, 1.0], 0.0);
        let pz = pole_zero(&m, "u", "y").unwrap();
        assert_eq!(pz.zeros.len(), 1);
        assert!((pz.zeros[0] - C64::new(-2.0, 0.0)).norm() < 1e-9);
        let mut re: Vec<f64> = pz.poles.iter().map(|p| p.re).collect();
        re.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(re[0], -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(re[1], -1.0, epsilon = 1e-12);

        let di = model(array![[0.0, 1.0], [0.0, 0.0]], array![0.0, 1.0], array![1.0, 0.0], 0.0);
        assert!(pole_zero(&di, "u", "y").unwrap().zeros.is_empty());
    }

    #[test]
    fn export_empty_and_lag() {
        let dir = tempfile::tempdir().unwrap();
        let m = model(array![[-1.0]], array![1.0], array![1.0], 0.0);
        let empty = FrequencyResponse {
            omega: vec![],
            g: vec![],
            io: ("u".into(), "y".into()),
        };
        let files = export_plots(&empty, None, None, dir.path()).unwrap();
        for f in &files {
            let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert_eq!(text.lines().count(), 1, "{f}");
        }
        let r = evaluate_response(&m, "u", "y", &[0.5, 1.0]).unwrap();
        export_plots(&r, None, None, dir.path()).unwrap();
        let bode = std::fs::read_to_string(dir.path().join("bode.csv")).unwrap();
        let row: Vec<f64> = bode.lines().nth(2).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[0], 1.0);
        assert_abs_diff_eq!(row[1], -3.0103, epsilon = 1e-4);
        let nichols = std::fs::read_to_string(dir.path().join("nichols.csv")).unwrap();
        let nrow: Vec<f64> = nichols.lines().nth(2).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!((nrow[0], nrow[1]), (row[2], row[1]));
    }
}
