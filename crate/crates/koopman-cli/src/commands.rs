use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use koopman::dictionary::{make_kdv_dictionary, make_rbf_dictionary, Dictionary, RbfKind};
use koopman::dynamics::kdv::{collect_kdv_data, KdvSolver};
use koopman::dynamics::{collect_data, rk4_step, BilinearMotor, CampaignSpec, OdeSystem, VanDerPol};
use koopman::edmd::{delay_embed_dataset, fit_io_model, fit_model, DataSet, FitMethod, FitReport, LiftedModel};
use koopman::io::{load_dataset, load_model, save_dataset, save_model, DataFormat};
use koopman::mpc::{
    closed_loop, KdvPlant, KoopmanMpc, LiftInput, LocalLinMpc, LoopStatus, MpcController, OdePlant, Reference,
    TrackingScenario,
};
use koopman::predictor::{
    build_carleman, compare_predictors, rollout_lifted, rollout_lifted_from_z, vdp_polynomial, CarlemanModel,
    ComparisonSetup, DelayConfig as PredictorDelay, Forcing, PredictorSpec,
};
use koopman::qp::QpOptions;
use koopman::Error as CoreError;

use crate::config::*;

/// CLI failure classes, mapped onto exit codes in `main`.
pub enum CliError {
    /// exit code 2
    Usage(String),
    /// exit code 3
    Numerical(String),
    /// exit code 4
    Infeasible { step: usize },
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<String> for CliError {
    fn from(s: String) -> Self {
        CliError::Usage(s)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn ensure_parent(path: &Path) -> CliResult {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(CoreError::from)?;
        }
    }
    Ok(())
}

fn write_text(path: &Path, contents: &str) -> CliResult {
    ensure_parent(path)?;
    std::fs::write(path, contents).map_err(CoreError::from)?;
    Ok(())
}

enum System {
    Vdp(VanDerPol),
    Motor(BilinearMotor),
    Kdv,
}

fn parse_system(name: &str) -> CliResult<System> {
    match name {
        "vdp" => Ok(System::Vdp(VanDerPol)),
        "motor" => Ok(System::Motor(BilinearMotor)),
        "kdv" => Ok(System::Kdv),
        other => Err(usage(format!("unknown system {other:?} (expected vdp, motor or kdv)"))),
    }
}

fn ode_system(system: &System) -> Option<&dyn OdeSystem<f64>> {
    match system {
        System::Vdp(s) => Some(s),
        System::Motor(s) => Some(s),
        System::Kdv => None,
    }
}

fn parse_format(name: &str) -> CliResult<DataFormat> {
    match name {
        "csv" => Ok(DataFormat::Csv),
        "binary" => Ok(DataFormat::Binary),
        other => Err(usage(format!("unknown format {other:?} (expected csv or binary)"))),
    }
}

fn parse_method(name: &str) -> CliResult<FitMethod> {
    match name {
        "normal_equations" => Ok(FitMethod::NormalEquations),
        "pseudoinverse" => Ok(FitMethod::Pseudoinverse),
        other => Err(usage(format!("unknown fit method {other:?}"))),
    }
}

fn forcing_from_config(cfg: &ForcingConfig) -> CliResult<Forcing<f64>> {
    match cfg.kind.as_str() {
        "square" => Ok(Forcing::SquareWave {
            amplitude: cfg.amplitude.unwrap_or(1.0),
            period: cfg.period.ok_or_else(|| usage("square forcing needs a period"))?,
        }),
        "binary" => Ok(Forcing::Binary { amplitude: cfg.amplitude.unwrap_or(1.0) }),
        "uniform" => Ok(Forcing::Uniform { lo: cfg.lo.unwrap_or(-1.0), hi: cfg.hi.unwrap_or(1.0) }),
        "zero" => Ok(Forcing::Zero),
        other => Err(usage(format!("unknown forcing kind {other:?}"))),
    }
}

fn dictionary_from_config(cfg: &DictionaryConfig, input_dim: usize) -> CliResult<Dictionary<f64>> {
    match cfg.kind.as_str() {
        "identity" => Ok(Dictionary::identity(input_dim)?),
        "kdv" => Ok(make_kdv_dictionary(input_dim)?),
        "rbf" => {
            let sample_box: Vec<(f64, f64)> = match &cfg.sample_box {
                Some(b) => b.iter().map(|[lo, hi]| (*lo, *hi)).collect(),
                None => vec![(-1.0, 1.0); input_dim],
            };
            let kind = rbf_kind(cfg.rbf.as_deref(), cfg.width)?;
            Ok(make_rbf_dictionary(input_dim, cfg.count, &sample_box, cfg.seed, &kind)?)
        }
        other => Err(usage(format!("unknown dictionary kind {other:?}"))),
    }
}

fn rbf_kind(name: Option<&str>, width: Option<f64>) -> CliResult<RbfKind<f64>> {
    match name.unwrap_or("thin_plate") {
        "thin_plate" => Ok(RbfKind::ThinPlate),
        "gauss" => Ok(RbfKind::Gauss { width: width.unwrap_or(1.0) }),
        other => Err(usage(format!("unknown RBF kind {other:?}"))),
    }
}

pub fn datagen(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>, format: Option<String>) -> CliResult {
    let mut cfg: DatagenConfig = load(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    if let Some(f) = format {
        cfg.format = f;
    }
    let format = parse_format(&cfg.format)?;
    let data = match parse_system(&cfg.system)? {
        System::Kdv => {
            let solver = KdvSolver::new(128, cfg.ts)?;
            collect_kdv_data(&solver, cfg.trajectories, cfg.steps, cfg.seed)?
        }
        sys => {
            let spec = CampaignSpec::new(cfg.trajectories, cfg.steps, cfg.ts, cfg.seed)?;
            collect_data(ode_system(&sys).expect("ODE system"), &spec)?
        }
    };
    ensure_parent(&cfg.out)?;
    save_dataset(&cfg.out, &data, format)?;
    println!(
        "wrote {} samples ({} states, {} inputs) to {}",
        data.len(),
        data.state_dim(),
        data.input_dim(),
        cfg.out.display()
    );
    Ok(())
}

/// Rebuild per-trajectory state/input sequences from the provenance columns
/// of a data set (columns are ordered by trajectory and step).
fn trajectories_from_dataset(
    data: &DataSet<f64>,
) -> CliResult<Vec<(u32, Vec<DVector<f64>>, Vec<DVector<f64>>)>> {
    let mut out: Vec<(u32, Vec<DVector<f64>>, Vec<DVector<f64>>)> = Vec::new();
    for j in 0..data.len() {
        let (traj, step) = data.provenance()[j];
        let fresh = out.last().map_or(true, |(id, _, _)| *id != traj);
        if fresh {
            if step != 0 {
                return Err(usage("data set trajectories do not start at step 0"));
            }
            out.push((traj, vec![data.x().column(j).into_owned()], Vec::new()));
        }
        let (_, states, inputs) = out.last_mut().expect("nonempty");
        if step as usize != inputs.len() {
            return Err(usage("data set steps are not contiguous"));
        }
        states.push(data.y().column(j).into_owned());
        inputs.push(data.u().column(j).into_owned());
    }
    Ok(out)
}

fn embed_dataset(data: &DataSet<f64>, delay: &DelayConfig) -> CliResult<DataSet<f64>> {
    let trajectories = trajectories_from_dataset(data)?;
    for &row in &delay.output_rows {
        if row >= data.state_dim() {
            return Err(usage(format!("output row {row} out of range")));
        }
    }
    let io: Vec<(u32, Vec<DVector<f64>>, Vec<DVector<f64>>)> = trajectories
        .into_iter()
        .map(|(id, states, inputs)| {
            let outputs = states
                .iter()
                .map(|x| DVector::from_fn(delay.output_rows.len(), |i, _| x[delay.output_rows[i]]))
                .collect();
            (id, outputs, inputs)
        })
        .collect();
    Ok(delay_embed_dataset(&io, delay.n_delays)?)
}

fn print_report(report: &FitReport<f64>) {
    println!(
        "fit: residual_lift = {:.6e}, residual_proj = {:.6e}, rank_deficient = {}, ridge_used = {:.3e}, normal_eq_residual = {:.3e}",
        report.residual_lift,
        report.residual_proj,
        report.rank_deficient,
        report.regularization_used,
        report.normal_eq_residual
    );
}

pub fn fit(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> CliResult {
    let mut cfg: FitConfig = load(config_path)?;
    if let Some(o) = out {
        cfg.out = o;
    }
    if let Some(s) = seed {
        cfg.dictionary.seed = s;
    }
    let method = parse_method(&cfg.method)?;
    let raw = load_dataset::<f64>(&cfg.dataset)?;
    let (model, report) = match &cfg.delay {
        Some(delay) => {
            let io_data = embed_dataset(&raw, delay)?;
            let dict = dictionary_from_config(&cfg.dictionary, io_data.state_dim())?;
            fit_io_model(&dict, &io_data, delay.output_rows.len(), method, cfg.ridge)?
        }
        None => {
            let dict = dictionary_from_config(&cfg.dictionary, raw.state_dim())?;
            fit_model(&dict, &raw, method, cfg.ridge)?
        }
    };
    ensure_parent(&cfg.out)?;
    save_model(&cfg.out, &model)?;
    print_report(&report);
    println!(
        "wrote model (N = {}, m = {}) to {}",
        model.lifted_dim(),
        model.input_dim(),
        cfg.out.display()
    );
    Ok(())
}

pub fn predict(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> CliResult {
    let mut cfg: PredictConfig = load(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    let system = parse_system(&cfg.system)?;
    let sys = ode_system(&system).ok_or_else(|| usage("predict supports the ODE benchmarks (vdp, motor)"))?;
    if cfg.x0.len() != sys.state_dim() {
        return Err(usage(format!("x0 must have {} entries", sys.state_dim())));
    }
    let model: LiftedModel<f64> = load_model(&cfg.model)?;
    let forcing = forcing_from_config(&cfg.forcing)?;
    let mut rng = koopman::seeded_rng(cfg.seed);

    let n_d = cfg.delay.as_ref().map_or(0, |d| d.n_delays);
    let pre_inputs = forcing.sequence(sys.input_dim(), n_d, cfg.ts, &mut rng);
    let mut pre_states = vec![DVector::from_column_slice(&cfg.x0)];
    for u in &pre_inputs {
        pre_states.push(rk4_step(sys, pre_states.last().expect("nonempty"), u, cfg.ts)?);
    }
    let u_seq = forcing.sequence(sys.input_dim(), cfg.steps, cfg.ts, &mut rng);
    let mut truth = vec![pre_states.last().expect("nonempty").clone()];
    for u in &u_seq {
        truth.push(rk4_step(sys, truth.last().expect("nonempty"), u, cfg.ts)?);
    }
    let truth_outputs: Vec<DVector<f64>> = truth.iter().map(|x| sys.output(x.as_view())).collect();

    let predicted = match &cfg.delay {
        None => rollout_lifted(&model, &truth[0], &u_seq)?,
        Some(delay) => {
            let ys: Vec<DVector<f64>> = (0..=n_d)
                .map(|a| {
                    let x = &pre_states[n_d - a];
                    DVector::from_fn(delay.output_rows.len(), |i, _| x[delay.output_rows[i]])
                })
                .collect();
            let us: Vec<DVector<f64>> = (0..n_d).map(|a| pre_inputs[n_d - 1 - a].clone()).collect();
            let zeta = koopman::dictionary::make_delay_vector(&ys, &us)?;
            let z0 = model.dictionary.eval(zeta.values())?;
            rollout_lifted_from_z(&model, &z0, &u_seq)?
        }
    };

    let n_y = truth_outputs[0].len();
    let n_p = predicted[0].len();
    let mut csv = String::from("step,t");
    for i in 0..n_y {
        csv.push_str(&format!(",y_true{i}"));
    }
    for i in 0..n_p {
        csv.push_str(&format!(",y_pred{i}"));
    }
    csv.push('\n');
    for k in 0..truth_outputs.len() {
        csv.push_str(&format!("{},{}", k, k as f64 * cfg.ts));
        for v in truth_outputs[k].iter() {
            csv.push_str(&format!(",{v}"));
        }
        for v in predicted[k].iter() {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    write_text(&cfg.out, &csv)?;
    println!("wrote prediction log to {}", cfg.out.display());
    Ok(())
}

pub fn compare(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> CliResult {
    let mut cfg: CompareConfig = load(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    let system = parse_system(&cfg.system)?;
    let sys = ode_system(&system).ok_or_else(|| usage("compare supports the ODE benchmarks (vdp, motor)"))?;
    let forcing = forcing_from_config(&cfg.forcing)?;
    let delay = cfg.delay.as_ref().map(|d| PredictorDelay { n_delays: d.n_delays });

    if let Some(sweep) = &cfg.sweep {
        let data = load_dataset::<f64>(&sweep.dataset)?;
        let method = parse_method(&sweep.method)?;
        let kind = rbf_kind(sweep.rbf.as_deref(), sweep.width)?;
        let sample_box: Vec<(f64, f64)> = sweep.sample_box.iter().map(|[lo, hi]| (*lo, *hi)).collect();
        let mut rows = String::from("N,mean_rmse_percent\n");
        for &count in &sweep.rbf_counts {
            let dict = make_rbf_dictionary(data.state_dim(), count, &sample_box, sweep.dict_seed, &kind)?;
            let (model, _) = fit_model(&dict, &data, method, sweep.ridge)?;
            let setup = ComparisonSetup {
                system: sys,
                ts: cfg.ts,
                horizon_steps: cfg.horizon_steps,
                n_trials: cfg.trials,
                forcing: forcing.clone(),
                seed: cfg.seed,
                delay,
            };
            let result = compare_predictors(&setup, &[PredictorSpec::Lifted { name: "koopman", model: &model }])?;
            let mean = result
                .mean("koopman")
                .ok_or_else(|| CliError::Numerical("all sweep trials failed".into()))?;
            rows.push_str(&format!("{},{}\n", dict.output_dim(), mean));
            println!("N = {:>4}: mean RMSE {:.2}%", dict.output_dim(), mean);
        }
        write_text(&cfg.out, &rows)?;
        println!("wrote sweep table to {}", cfg.out.display());
        return Ok(());
    }

    if cfg.predictors.is_empty() {
        return Err(usage("no predictors requested"));
    }
    let model: Option<LiftedModel<f64>> =
        cfg.model.as_ref().map(|p| load_model(p)).transpose()?;
    let carleman: Option<CarlemanModel<f64>> = if cfg.predictors.iter().any(|p| p == "carleman") {
        if !matches!(system, System::Vdp(_)) {
            return Err(usage("the Carleman comparator is defined for the polynomial vdp benchmark"));
        }
        Some(build_carleman(&vdp_polynomial(), cfg.carleman_degree.unwrap_or(14))?)
    } else {
        None
    };
    let mut specs: Vec<PredictorSpec<'_, f64>> = Vec::new();
    for name in &cfg.predictors {
        match name.as_str() {
            "koopman" => specs.push(PredictorSpec::Lifted {
                name: "koopman",
                model: model.as_ref().ok_or_else(|| usage("koopman predictor needs a model file"))?,
            }),
            "loclin0" => specs.push(PredictorSpec::LocalLinAtOrigin { name: "loclin0" }),
            "loclin_x0" => specs.push(PredictorSpec::LocalLinAtInitial { name: "loclin_x0" }),
            "carleman" => specs.push(PredictorSpec::Carleman {
                name: "carleman",
                model: carleman.as_ref().expect("built above"),
            }),
            "truth" => specs.push(PredictorSpec::TruthSelf { name: "truth" }),
            other => return Err(usage(format!("unknown predictor {other:?}"))),
        }
    }
    let setup = ComparisonSetup {
        system: sys,
        ts: cfg.ts,
        horizon_steps: cfg.horizon_steps,
        n_trials: cfg.trials,
        forcing,
        seed: cfg.seed,
        delay,
    };
    let result = compare_predictors(&setup, &specs)?;
    write_text(&cfg.out, &result.to_csv())?;
    let summary_path = cfg
        .summary_out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.summary.csv", cfg.out.display())));
    write_text(&summary_path, &result.summary_csv())?;
    for (name, mean) in result.means() {
        let saturated = if result.any_saturated(&name) { " (saturated)" } else { "" };
        println!("{name}: mean RMSE {mean:.4e}%{saturated}");
    }
    println!("wrote {} and {}", cfg.out.display(), summary_path.display());
    Ok(())
}

fn reference_from_config(cfg: &ReferenceConfig, n_y: usize, ts: f64) -> CliResult<Reference<f64>> {
    let broadcast = |v: f64| DVector::from_element(n_y, v);
    match cfg.kind.as_str() {
        "constant" => Ok(Reference::Constant(broadcast(
            cfg.value.ok_or_else(|| usage("constant reference needs a value"))?,
        ))),
        "piecewise" => {
            let times = cfg.times.as_ref().ok_or_else(|| usage("piecewise reference needs times"))?;
            let values = cfg.values.as_ref().ok_or_else(|| usage("piecewise reference needs values"))?;
            if times.len() != values.len() || times.is_empty() {
                return Err(usage("piecewise reference times and values must match"));
            }
            Ok(Reference::Piecewise {
                starts: times.iter().map(|t| (t / ts).round() as usize).collect(),
                values: values.iter().map(|&v| broadcast(v)).collect(),
            })
        }
        "cosine" => {
            if n_y != 1 {
                return Err(usage("cosine reference is scalar"));
            }
            Ok(Reference::Cosine {
                amplitude: cfg.amplitude.ok_or_else(|| usage("cosine reference needs an amplitude"))?,
                period: cfg.period.ok_or_else(|| usage("cosine reference needs a period"))?,
            })
        }
        other => Err(usage(format!("unknown reference kind {other:?}"))),
    }
}

fn scenario_from_config(cfg: &MpcConfig, n_y: usize, m: usize) -> CliResult<TrackingScenario<f64>> {
    let reference = reference_from_config(&cfg.reference, n_y, cfg.ts)?;
    let u_max = cfg.u_max.unwrap_or(1.0);
    let u_min = cfg.u_min.unwrap_or(-u_max);
    Ok(TrackingScenario {
        horizon: cfg.horizon,
        reference,
        q: DMatrix::identity(n_y, n_y) * cfg.q,
        q_terminal: DMatrix::identity(n_y, n_y) * cfg.q_terminal.unwrap_or(cfg.q),
        r: DMatrix::identity(m, m) * cfg.r,
        u_min: DVector::from_element(m, u_min),
        u_max: DVector::from_element(m, u_max),
        y_min: cfg.y_min.map(|v| DVector::from_element(n_y, v)),
        y_max: cfg.y_max.map(|v| DVector::from_element(n_y, v)),
    })
}

pub fn mpc(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> CliResult {
    let mut cfg: MpcConfig = load(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    let mut qp_opts = QpOptions::<f64>::default();
    if let Some(iters) = cfg.qp_max_iters {
        qp_opts.max_iters = iters;
    }
    let system = parse_system(&cfg.system)?;

    let log = match (&system, cfg.controller.as_str()) {
        (System::Kdv, "koopman") => {
            let solver = KdvSolver::new(128, cfg.ts)?;
            let model: LiftedModel<f64> =
                load_model(cfg.model.as_ref().ok_or_else(|| usage("koopman controller needs a model"))?)?;
            let scenario = scenario_from_config(&cfg, model.output_dim(), model.input_dim())?;
            let mut controller = KoopmanMpc::new(model, &scenario, LiftInput::State, cfg.ts, qp_opts)?;
            let y0 = match cfg.kdv_profile {
                Some(i) if i < 3 => solver.initial_profiles()[i].clone(),
                Some(_) => return Err(usage("kdv_profile must be 0, 1 or 2")),
                None => match &cfg.x0 {
                    Some(x0) if x0.len() == 128 => DVector::from_column_slice(x0),
                    Some(_) => return Err(usage("KdV x0 must have 128 entries")),
                    None => DVector::zeros(128),
                },
            };
            let mut plant = KdvPlant { solver: &solver, y: y0 };
            closed_loop(&mut plant, &mut controller, cfg.steps, cfg.ts)?
        }
        (System::Kdv, other) => {
            return Err(usage(format!("controller {other:?} is not available for kdv")));
        }
        (sys, controller_name) => {
            let sys = ode_system(sys).expect("ODE system");
            let x0 = cfg
                .x0
                .as_ref()
                .ok_or_else(|| usage("x0 is required for ODE plants"))?;
            if x0.len() != sys.state_dim() {
                return Err(usage(format!("x0 must have {} entries", sys.state_dim())));
            }
            let x0 = DVector::from_column_slice(x0);
            match controller_name {
                "koopman" => {
                    let model: LiftedModel<f64> =
                        load_model(cfg.model.as_ref().ok_or_else(|| usage("koopman controller needs a model"))?)?;
                    let scenario = scenario_from_config(&cfg, model.output_dim(), model.input_dim())?;
                    let lift_input = match &cfg.delay {
                        Some(d) => LiftInput::DelayEmbedded { n_delays: d.n_delays },
                        None => LiftInput::State,
                    };
                    let mut controller = KoopmanMpc::new(model, &scenario, lift_input, cfg.ts, qp_opts)?;
                    let mut plant = OdePlant { sys, x: x0, ts: cfg.ts };
                    closed_loop(&mut plant, &mut controller, cfg.steps, cfg.ts)?
                }
                "loclin" => {
                    let output_rows: Vec<usize> = match &cfg.delay {
                        Some(d) => d.output_rows.clone(),
                        None => (0..sys.output_dim()).collect(),
                    };
                    // local linearization works on the full state; the output
                    // map selects the measured rows
                    let n = sys.state_dim();
                    let mut c_map = DMatrix::zeros(output_rows.len(), n);
                    for (i, &row) in output_rows.iter().enumerate() {
                        if row >= n {
                            return Err(usage(format!("output row {row} out of range")));
                        }
                        c_map[(i, row)] = 1.0;
                    }
                    let scenario = scenario_from_config(&cfg, output_rows.len(), sys.input_dim())?;
                    let mut controller = LocalLinMpc::new(sys, scenario, c_map, cfg.ts, qp_opts)?;
                    let mut plant = OdePlant { sys, x: x0, ts: cfg.ts };
                    closed_loop(&mut plant, &mut controller, cfg.steps, cfg.ts)?
                }
                other => return Err(usage(format!("unknown controller {other:?}"))),
            }
        }
    };

    write_text(&cfg.out, &log.to_csv())?;
    println!(
        "closed loop: {} steps, mean solve {:.3} ms, max solve {:.3} ms",
        log.records.len(),
        log.mean_solve_ms(),
        log.max_solve_ms()
    );
    match log.status {
        LoopStatus::Completed => {
            println!("status: completed; wrote {}", cfg.out.display());
            Ok(())
        }
        LoopStatus::Infeasible { step } => {
            println!("status: infeasible at step {step}; wrote {}", cfg.out.display());
            Err(CliError::Infeasible { step })
        }
    }
}

// keep the controller trait in scope for closed_loop's generic bound
#[allow(unused)]
fn _assert_controller_impls(c: &mut KoopmanMpc<f64>) -> &mut dyn MpcController<f64> {
    c
}
