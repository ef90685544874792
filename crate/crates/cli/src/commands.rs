use crate::manifest::{case_checksum, now, RunManifest};
use crate::{Command, FreqArgs, LinArgs, ModalArgs, PfArgs, SimArgs};
use anyhow::{bail, Context, Result};
use gridwave_core::case_io::{load_case, validate_case, NetworkCase};
use gridwave_core::freqresp::{self, export_plots, FrequencyResponse, MarginReport};
use gridwave_core::network::{build_ybus, write_matrix_csv, ReducedNetworkSet, Topology};
use gridwave_core::powerflow::solve_powerflow;
use gridwave_core::simulate::{run_simulation, SimOptions, SimulationResult, SystemModel};
use gridwave_core::smallsignal::{self as ss, LinearModel, LinearizeOptions, ModalReport};
use gridwave_core::svg::{compass, heatmap, write_svg, LinePlot, Series};
use ndarray::Array2;
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Output directory plus the running list of files written into it.
struct Outputs {
    root: PathBuf,
    files: Vec<String>,
    params: BTreeMap<String, String>,
}

impl Outputs {
    fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
            params: BTreeMap::new(),
        })
    }

    fn dir(&self, sub: &str) -> Result<PathBuf> {
        let d = if sub.is_empty() { self.root.clone() } else { self.root.join(sub) };
        std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    fn add(&mut self, sub: &str, names: impl IntoIterator<Item = String>) {
        for n in names {
            self.files.push(if sub.is_empty() { n } else { format!("{sub}/{n}") });
        }
    }

    fn svg(&mut self, sub: &str, name: &str, body: &str) -> Result<()> {
        let path = self.dir(sub)?.join(name);
        write_svg(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.add(sub, [name.to_string()]);
        Ok(())
    }

    fn param(&mut self, key: &str, value: impl ToString) {
        self.params.insert(key.to_string(), value.to_string());
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    let started = now();
    let (name, io) = match &cmd {
        Command::Validate { case } => return validate(case),
        Command::Powerflow { io, .. } => ("powerflow", io.clone()),
        Command::Simulate { io, .. } => ("simulate", io.clone()),
        Command::Linearize { io, .. } => ("linearize", io.clone()),
        Command::Modes { io, .. } => ("modes", io.clone()),
        Command::Participation { io, .. } => ("participation", io.clone()),
        Command::Residues { io, .. } => ("residues", io.clone()),
        Command::Freqresp { io, .. } => ("freqresp", io.clone()),
        Command::Run { io, .. } => ("run", io.clone()),
    };
    let case = load_case(&io.case).context("stage load")?;
    let checksum = case_checksum(&io.case)?;
    let mut out = Outputs::new(&io.out)?;
    out.param("svg", io.svg);
    match &cmd {
        Command::Powerflow { pf, dump_ybus, .. } => powerflow(&case, pf, *dump_ybus, &mut out, "")?,
        Command::Simulate { sim, .. } => {
            let model = init_model(&case)?;
            simulate(&model, &case, sim, io.svg, &mut out, "")?;
        }
        Command::Linearize { lin, .. } => {
            let model = init_model(&case)?;
            let m = linearize(&model, &case, lin, &mut out)?;
            let files = m.write_csv(&out.dir("")?)?;
            out.add("", files);
        }
        Command::Modes { modal, .. } => {
            let (lin, rep) = modal_setup(&case, modal, &mut out)?;
            modes(&lin, &rep, &case, modal, io.svg, &mut out, "")?;
        }
        Command::Participation { modal, .. } => {
            let (_, rep) = modal_setup(&case, modal, &mut out)?;
            participation(&rep, threshold(&case, modal), io.svg, &mut out, "")?;
        }
        Command::Residues { modal, .. } => {
            let (lin, rep) = modal_setup(&case, modal, &mut out)?;
            residue_ranking(&lin, &rep, threshold(&case, modal), io.svg, &mut out, "")?;
        }
        Command::Freqresp { freq, .. } => {
            let model = init_model(&case)?;
            frequency_response(&model, &case, freq, io.svg, &mut out, "")?;
        }
        Command::Run { input, output, .. } => pipeline(&case, input, output, io.svg, &mut out)?,
        Command::Validate { .. } => unreachable!(),
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: name.to_string(),
        case: io.case.display().to_string(),
        case_sha256: checksum,
        parameters: out.params.clone(),
        started_unix: started,
        finished_unix: now(),
        outputs: out.files.clone(),
    };
    manifest.write_atomic(&io.out)?;
    Ok(())
}

fn validate(dir: &Path) -> Result<()> {
    let case = load_case(dir)?;
    let rep = validate_case(&case);
    if rep.is_empty() {
        println!(
            "ok: {} buses, {} branches, {} machines, {} renewable plants",
            case.buses.len(),
            case.branches.len(),
            case.machines.len(),
            case.res_plants.len()
        );
        return Ok(());
    }
    for v in &rep.violations {
        println!("{v}");
    }
    bail!("{} violation(s)", rep.violations.len())
}

fn init_model(case: &NetworkCase) -> Result<SystemModel> {
    SystemModel::initialize(case).context("stage initialize")
}

fn powerflow(case: &NetworkCase, pf: &PfArgs, dump: bool, out: &mut Outputs, sub: &str) -> Result<()> {
    let sol = solve_powerflow(case, pf.tol, pf.max_iter).context("stage powerflow")?;
    let dir = out.dir(sub)?;
    sol.write_csv(&dir.join("solution.csv"))?;
    out.add(sub, ["solution.csv".to_string()]);
    out.param("powerflow_iterations", sol.iterations);
    out.param("powerflow_max_mismatch", format!("{:e}", sol.max_mismatch));
    println!("power flow converged in {} iterations, max mismatch {:.2e}", sol.iterations, sol.max_mismatch);
    if dump {
        build_ybus(case)?.write_csv(&dir.join("ybus.csv"))?;
        let net = ReducedNetworkSet::build(case, &sol.voltages())?;
        for (name, t) in [
            ("yred_pre.csv", Topology::Pre),
            ("yred_fault.csv", Topology::Fault),
            ("yred_post.csv", Topology::Post),
        ] {
            write_matrix_csv(&net.topology(t).y_red, &dir.join(name))?;
        }
        out.add(sub, ["ybus.csv", "yred_pre.csv", "yred_fault.csv", "yred_post.csv"].map(String::from));
    }
    Ok(())
}

fn simulate(model: &SystemModel, case: &NetworkCase, sim: &SimArgs, svg: bool, out: &mut Outputs, sub: &str) -> Result<SimulationResult> {
    let mut opts = SimOptions::from_case(case);
    if let Some(dt) = sim.dt {
        opts.dt = dt;
    }
    if let Some(t) = sim.t_end {
        opts.t_end = t;
    }
    opts.record_every = sim.record_every;
    opts.init_tolerance = sim.init_tol;
    out.param("dt", opts.dt);
    out.param("t_end", opts.t_end);
    let res = run_simulation(model, &opts).context("stage simulate")?;
    let files = res.write_csv(&out.dir(sub)?)?;
    out.add(sub, files);
    if svg {
        let n_mach = res.bus_freq.first().map_or(0, |r| r.len());
        let freq = LinePlot {
            title: "Machine frequencies".into(),
            x_label: "t (s)".into(),
            y_label: "f (Hz)".into(),
            series: (0..n_mach)
                .map(|k| Series {
                    name: format!("G{}", k + 1),
                    x: res.t.clone(),
                    y: res.bus_freq.iter().map(|r| r[k]).collect(),
                })
                .collect(),
            ..Default::default()
        };
        out.svg(sub, "frequencies.svg", &freq.render())?;
        let volt = LinePlot {
            title: "Bus voltage magnitudes".into(),
            x_label: "t (s)".into(),
            y_label: "|V| (pu)".into(),
            series: res
                .bus_ids
                .iter()
                .enumerate()
                .map(|(k, id)| Series {
                    name: format!("bus{id}"),
                    x: res.t.clone(),
                    y: res.bus_v_mag.iter().map(|r| r[k]).collect(),
                })
                .collect(),
            ..Default::default()
        };
        out.svg(sub, "bus_voltages.svg", &volt.render())?;
    }
    Ok(res)
}

fn relative(case: &NetworkCase, absolute: bool, rel: bool) -> bool {
    if absolute {
        false
    } else {
        rel || case.scenario.relative_angles
    }
}

fn linearize(model: &SystemModel, case: &NetworkCase, lin: &LinArgs, out: &mut Outputs) -> Result<LinearModel> {
    let pick = |flag: &[String], scenario: &[String], default: Vec<String>| {
        if !flag.is_empty() {
            flag.to_vec()
        } else if !scenario.is_empty() {
            scenario.to_vec()
        } else {
            default
        }
    };
    let inputs = pick(&lin.inputs, &case.scenario.input_selection, model.default_inputs());
    let outputs = pick(&lin.outputs, &case.scenario.output_selection, model.default_outputs());
    let mut opts = LinearizeOptions::new(inputs, outputs);
    opts.relative_angles = relative(case, lin.absolute_angles, lin.relative_angles);
    opts.equilibrium_tol = lin.equilibrium_tol;
    opts.step_scale = lin.step_scale;
    out.param("relative_angles", opts.relative_angles);
    let m = ss::linearize(model, &model.x0, &model.u0, &opts).context("stage linearize")?;
    out.param("n_states", m.n_states());
    Ok(m)
}

fn threshold(case: &NetworkCase, modal: &ModalArgs) -> f64 {
    modal.zeta_threshold.unwrap_or(case.scenario.zeta_threshold)
}

fn modal_setup(case: &NetworkCase, modal: &ModalArgs, out: &mut Outputs) -> Result<(LinearModel, ModalReport)> {
    let model = init_model(case)?;
    let lin = linearize(&model, case, &modal.lin, out)?;
    let rep = ss::eigenanalysis(&lin).context("stage modes")?;
    out.param("zeta_threshold", threshold(case, modal));
    Ok((lin, rep))
}

fn modes(lin: &LinearModel, rep: &ModalReport, case: &NetworkCase, modal: &ModalArgs, svg: bool, out: &mut Outputs, sub: &str) -> Result<()> {
    let thr = threshold(case, modal);
    let dir = out.dir(sub)?;
    let files = ss::write_modes_csv(rep, thr, &dir)?;
    out.add(sub, files);
    let light = ss::lightly_damped_filter(rep, thr);
    let files = ss::write_mode_shapes_csv(rep, &light, &modal.filter, &dir)?;
    out.add(sub, files);
    out.param("lightly_damped_modes", light.len());
    println!("{} modes, {} with damping below {thr}%", lin.n_states(), light.len());
    for &i in &light {
        println!(
            "  mode {:>3}: {:.4} {:+.4}j, {:.3} Hz, {:.2}%",
            i + 1,
            rep.eigenvalues[i].re,
            rep.eigenvalues[i].im,
            rep.freq_hz[i],
            rep.damping_pct[i]
        );
        if svg {
            let entries: Vec<(String, f64, f64)> = ss::mode_shape(rep, i, &modal.filter)?
                .into_iter()
                .map(|e| (e.state, e.magnitude, e.angle_deg))
                .collect();
            let title = format!("Mode {} ({:.3} Hz, {:.2}%)", i + 1, rep.freq_hz[i], rep.damping_pct[i]);
            out.svg(sub, &format!("mode{}_shape.svg", i + 1), &compass(&title, &entries))?;
        }
    }
    Ok(())
}

fn participation(rep: &ModalReport, thr: f64, svg: bool, out: &mut Outputs, sub: &str) -> Result<()> {
    let files = ss::write_participation_csv(rep, &out.dir(sub)?)?;
    out.add(sub, files);
    if svg {
        let mut cols = ss::lightly_damped_filter(rep, thr);
        if cols.is_empty() {
            cols = (0..rep.eigenvalues.len()).collect();
        }
        let pn = &rep.participation_normalized;
        let m = Array2::from_shape_fn((pn.nrows(), cols.len()), |(r, c)| pn[[r, cols[c]]]);
        let labels: Vec<String> = cols.iter().map(|i| format!("mode{}", i + 1)).collect();
        out.svg(sub, "participation.svg", &heatmap("Normalized participation", &rep.state_labels, &labels, &m))?;
    }
    Ok(())
}

fn residue_ranking(lin: &LinearModel, rep: &ModalReport, thr: f64, svg: bool, out: &mut Outputs, sub: &str) -> Result<()> {
    let rr = ss::residues(lin, rep);
    let light = ss::lightly_damped_filter(rep, thr);
    let dir = out.dir(sub)?;
    let files = ss::write_residues_csv(&rr, &light, &dir)?;
    out.add(sub, files);
    let sites = ss::best_sites(lin, &rr, &light);
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("best_sites.csv"))?);
    writeln!(f, "site,score")?;
    for (site, score) in &sites {
        writeln!(f, "{site},{score}")?;
    }
    f.flush()?;
    out.add(sub, ["best_sites.csv".to_string()]);
    if let Some((site, score)) = sites.first() {
        println!("best controller site: {site} (score {score:.3})");
        out.param("best_site", site);
    }
    if svg {
        for &i in &light {
            let entries: Vec<(String, f64, f64)> = rr
                .entries
                .iter()
                .filter(|e| e.mode == i)
                .map(|e| (format!("{}>{}", e.input, e.output), e.residue.norm(), e.res_phase_deg))
                .collect();
            let title = format!("Residues, mode {} ({:.3} Hz)", i + 1, rep.freq_hz[i]);
            out.svg(sub, &format!("mode{}_residues.svg", i + 1), &compass(&title, &entries))?;
        }
    }
    Ok(())
}

fn frequency_response(model: &SystemModel, case: &NetworkCase, fr: &FreqArgs, svg: bool, out: &mut Outputs, sub: &str) -> Result<MarginReport> {
    let mut opts = LinearizeOptions::new(vec![fr.input.clone()], vec![fr.output.clone()]);
    opts.relative_angles = relative(case, fr.absolute_angles, fr.relative_angles);
    opts.equilibrium_tol = fr.equilibrium_tol;
    let lin = ss::linearize(model, &model.x0, &model.u0, &opts).context("stage linearize")?;
    let grid = freqresp::log_grid(fr.wmin, fr.wmax, fr.points).context("stage freqresp")?;
    let resp = freqresp::evaluate_response(&lin, &fr.input, &fr.output, &grid).context("stage freqresp")?;
    let mg = freqresp::margins(&lin, &fr.input, &fr.output, &grid).context("stage freqresp")?;
    let pz = freqresp::pole_zero(&lin, &fr.input, &fr.output).context("stage freqresp")?;
    let files = export_plots(&resp, Some(&mg), Some(&pz), &out.dir(sub)?)?;
    out.add(sub, files);
    out.param("freqresp_channel", format!("{} -> {}", fr.input, fr.output));
    out.param("gain_margin_db", mg.gain_margin_db);
    out.param("phase_margin_deg", mg.phase_margin_deg);
    println!(
        "{} -> {}: GM {:.2} dB, PM {:.2} deg, closed loop {}",
        fr.input,
        fr.output,
        mg.gain_margin_db,
        mg.phase_margin_deg,
        if mg.stable_closed_loop { "stable" } else { "unstable" }
    );
    if svg {
        response_svgs(&resp, out, sub)?;
    }
    Ok(mg)
}

fn response_svgs(resp: &FrequencyResponse, out: &mut Outputs, sub: &str) -> Result<()> {
    let mag = resp.mag_db();
    let phase = resp.phase_deg()?;
    let name = format!("{} -> {}", resp.io.0, resp.io.1);
    let one = |x: Vec<f64>, y: Vec<f64>| vec![Series { name: name.clone(), x, y }];
    let plots = [
        ("bode_mag.svg", "Bode magnitude", "omega (rad/s)", "|G| (dB)", true, one(resp.omega.clone(), mag.clone()), vec![]),
        ("bode_phase.svg", "Bode phase", "omega (rad/s)", "phase (deg)", true, one(resp.omega.clone(), phase.clone()), vec![]),
        (
            "nyquist.svg",
            "Nyquist",
            "Re G",
            "Im G",
            false,
            one(resp.g.iter().map(|g| g.re).collect(), resp.g.iter().map(|g| g.im).collect()),
            vec![(-1.0, 0.0, "(-1, 0)".to_string())],
        ),
        ("nichols.svg", "Nichols", "phase (deg)", "|G| (dB)", false, one(phase, mag), vec![(-180.0, 0.0, "(-180, 0 dB)".to_string())]),
    ];
    for (file, title, xl, yl, log_x, series, markers) in plots {
        let p = LinePlot {
            title: title.into(),
            x_label: xl.into(),
            y_label: yl.into(),
            log_x,
            series,
            markers,
        };
        out.svg(sub, file, &p.render())?;
    }
    Ok(())
}

fn pipeline(case: &NetworkCase, input: &str, output: &str, svg: bool, out: &mut Outputs) -> Result<()> {
    powerflow(case, &PfArgs { tol: 1e-10, max_iter: 30 }, false, out, "powerflow")?;

    let mut flat_case = case.clone();
    flat_case.scenario.fault_bus = None;
    let flat_model = init_model(&flat_case)?;
    let f0 = flat_model.system_rhs(0.0, &flat_model.x0);
    let rhs_inf = f0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let flat = run_simulation(&flat_model, &SimOptions::from_case(&flat_case)).context("stage flat-run")?;
    let dev = flat
        .states
        .iter()
        .flat_map(|x| x.iter().zip(&flat_model.x0).map(|(a, b)| (a - b).abs()))
        .fold(0.0f64, f64::max);
    let dir = out.dir("flat")?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("flat_check.csv"))?);
    writeln!(f, "rhs_inf_norm,max_state_deviation")?;
    writeln!(f, "{rhs_inf},{dev}")?;
    f.flush()?;
    out.add("flat", ["flat_check.csv".to_string()]);
    out.param("flat_run_max_deviation", format!("{dev:e}"));
    if !(rhs_inf < 1e-6 && dev < 1e-4) {
        bail!("stage flat-run: |f(x0)| = {rhs_inf:e}, max deviation = {dev:e}");
    }
    println!("flat run: |f(x0)| = {rhs_inf:.2e}, max deviation {dev:.2e}");

    let model = init_model(case)?;
    let sim = SimArgs { dt: None, t_end: None, record_every: 1, init_tol: 1e-6 };
    simulate(&model, case, &sim, svg, out, "simulate")?;

    let lin_args = LinArgs {
        inputs: Vec::new(),
        outputs: Vec::new(),
        absolute_angles: false,
        relative_angles: false,
        equilibrium_tol: 1e-5,
        step_scale: 1.0,
    };
    let lin = linearize(&model, case, &lin_args, out)?;
    let files = lin.write_csv(&out.dir("linearize")?)?;
    out.add("linearize", files);
    let rep = ss::eigenanalysis(&lin).context("stage modes")?;
    let modal = ModalArgs { lin: lin_args, zeta_threshold: None, filter: "*".into() };
    let thr = threshold(case, &modal);
    out.param("zeta_threshold", thr);
    modes(&lin, &rep, case, &modal, svg, out, "modes")?;
    participation(&rep, thr, svg, out, "modes")?;
    residue_ranking(&lin, &rep, thr, svg, out, "modes")?;

    let labels_ok = model.input_labels().iter().any(|l| l == input) && model.output_labels().iter().any(|l| l == output);
    if model.n_states() == 0 || !labels_ok {
        out.param("freqresp", format!("skipped: no channel {input} -> {output}"));
        println!("frequency response skipped: no channel {input} -> {output}");
        return Ok(());
    }
    let fr = FreqArgs {
        input: input.to_string(),
        output: output.to_string(),
        wmin: 1e-2,
        wmax: 1e3,
        points: 400,
        absolute_angles: false,
        relative_angles: false,
        equilibrium_tol: 1e-5,
    };
    frequency_response(&model, case, &fr, svg, out, "freqresp")?;
    Ok(())
}
