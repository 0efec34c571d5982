use std::fs;
use std::path::{Path, PathBuf};

use rankdistill::analyzer::{curve_agreement, dominant_channel_histogram_labeled, normalize_map};
use rankdistill::gradcheck::{gradcheck as run_gradcheck, GradCheckConfig};
use rankdistill::harness::{alpha_preset, run_many, table2_preset, thread_count, TrainReport};
use rankdistill::losses::{
    mask_l1_loss, pearson_loss, response_loss, scene_relation_loss, spearman_loss,
    total_distill_loss, DistillConfig, LossSelection, SpatialMask,
};
use rankdistill::{skdt, Error, ErrorKind, FeatureMap, FeaturePyramid, HeadPredictionSet, Tensor};
use serde_json::{json, Value};

use crate::config::{parse_config, Preset};
use crate::{AnalyzeArgs, GradcheckArgs, LossArgs, LossKind, TrainArgs};

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DEGENERATE: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Degenerate => EXIT_DEGENERATE,
            ErrorKind::Divergence => EXIT_DIVERGED,
            ErrorKind::Io | ErrorKind::Format | ErrorKind::Shape | ErrorKind::Argument => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn emit(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json serializes"));
}

fn read_map(path: &Path) -> Result<FeatureMap, Failure> {
    let t = skdt::read_tensor(path).map_err(|e| with_path(e, path))?;
    FeatureMap::new(t).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Failure {
    let mut f = Failure::from(e);
    f.message = format!("{}: {}", path.display(), f.message);
    f
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn kind_name(kind: LossKind) -> &'static str {
    match kind {
        LossKind::Spearman => "spearman",
        LossKind::Pearson => "pearson",
        LossKind::MaskL1 => "mask-l1",
        LossKind::Scene => "scene",
        LossKind::Response => "response",
        LossKind::Total => "total",
    }
}

/// Single-level losses on two tensor files. For `response` and `total` the
/// tensors also serve as the (single) head prediction, so the gradient of
/// `total` adds the feature and head contributions.
pub fn loss(args: &LossArgs) -> Outcome {
    let student = read_map(&args.student)?;
    let teacher = read_map(&args.teacher)?;
    if student.dims() != teacher.dims() {
        return Err(Failure::usage(format!(
            "student {:?} and teacher {:?} differ in shape",
            student.dims(),
            teacher.dims()
        )));
    }
    let [_, _, h, w] = student.dims();
    let mask = match &args.mask {
        Some(p) => {
            let t = skdt::read_tensor(p).map_err(|e| with_path(e, p))?;
            SpatialMask::new(t).map_err(|e| with_path(e, p))?
        }
        None => SpatialMask::ones(h, w)?,
    };
    let s = FeaturePyramid::single(student.clone());
    let t = FeaturePyramid::single(teacher.clone());
    let heads = |f: &FeatureMap| HeadPredictionSet::new(vec![f.clone()]);

    let mut components = None;
    let (value, grad): (f64, Tensor) = match args.kind {
        LossKind::Spearman => one(spearman_loss(&s, &t, args.epsilon, args.pool)?),
        LossKind::Pearson => one(pearson_loss(&s, &t)?),
        LossKind::MaskL1 => one(mask_l1_loss(&s, &t, std::slice::from_ref(&mask))?),
        LossKind::Scene => one(scene_relation_loss(&s, &t, args.pool)?),
        LossKind::Response => one(response_loss(&heads(&student)?, &heads(&teacher)?, &mask)?),
        LossKind::Total => {
            let config = DistillConfig {
                epsilon: args.epsilon,
                pool: args.pool,
                selection: LossSelection::ALL,
            };
            let r = total_distill_loss(
                &s,
                &t,
                &heads(&student)?,
                &heads(&teacher)?,
                &mask,
                args.alpha,
                &config,
            )?;
            let mut g = r.pyramid_grads[0].clone();
            g.add_scaled(&r.head_grads[0], 1.0)?;
            components = Some(json!({ "od": r.od, "sd": r.sd, "scc": r.scc }));
            (r.value, g)
        }
    };
    if let Some(path) = &args.grad_out {
        skdt::write_tensor(&grad, path).map_err(|e| with_path(e, path))?;
    }
    let mut out = json!({
        "kind": kind_name(args.kind),
        "loss": value,
        "grad_norm": grad.norm(),
    });
    if let Some(c) = components {
        out["components"] = c;
    }
    emit(&out);
    Ok(0)
}

fn one(r: rankdistill::LossResult) -> (f64, Tensor) {
    let value = r.value;
    (value, r.grads.into_iter().next().expect("one level"))
}

pub fn gradcheck(args: &GradcheckArgs) -> Outcome {
    if !(args.tolerance >= 0.0) || !args.tolerance.is_finite() {
        return Err(Failure::usage(format!(
            "tolerance must be a nonnegative finite number, got {}",
            args.tolerance
        )));
    }
    let config = GradCheckConfig {
        seed: args.seed,
        cases: args.cases,
        size: args.size,
        ..GradCheckConfig::default()
    };
    let report = run_gradcheck(args.kind, &config)?;
    let passed = report.passes(args.tolerance);
    eprintln!(
        "gradcheck {}: worst relative error {:e} (case {}) against tolerance {:e}: {}",
        args.kind,
        report.max_rel_error,
        report.worst_case,
        args.tolerance,
        if passed { "ok" } else { "FAILED" }
    );
    emit(&json!({
        "kind": args.kind.name(),
        "seed": args.seed,
        "cases": report.cases,
        "coords_checked": report.coords_checked,
        "max_rel_error": report.max_rel_error,
        "worst_case": report.worst_case,
        "tolerance": args.tolerance,
        "passed": passed,
    }));
    Ok(if passed { 0 } else { EXIT_CHECK_FAILED })
}

/// Writes `curve_<i>.csv` per input and, for two or more inputs,
/// `agreement.csv` with every pair.
pub fn analyze(args: &AnalyzeArgs) -> Outcome {
    let mut curves = Vec::with_capacity(args.tensors.len());
    for path in &args.tensors {
        let map = read_map(path)?;
        let map = if args.normalize { normalize_map(&map) } else { map };
        curves.push(dominant_channel_histogram_labeled(&map, 0, &path.display().to_string()));
    }
    create_dir(&args.out_dir)?;

    let mut curve_json = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        let file = args.out_dir.join(format!("curve_{i}.csv"));
        write_file(&file, &c.to_csv())?;
        curve_json.push(json!({
            "source": c.source,
            "file": file.display().to_string(),
            "counts": c.counts,
        }));
    }

    let mut agreements = Vec::new();
    let mut csv = String::from("a,b,pearson,spearman\n");
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let a = curve_agreement(&curves[i], &curves[j])?;
            csv.push_str(&format!("{i},{j},{},{}\n", a.pearson, a.spearman));
            agreements.push(json!({ "a": i, "b": j, "pearson": a.pearson, "spearman": a.spearman }));
        }
    }
    let mut out = json!({ "normalized": args.normalize, "curves": curve_json });
    if curves.len() > 1 {
        let file = args.out_dir.join("agreement.csv");
        write_file(&file, &csv)?;
        out["agreement_file"] = json!(file.display().to_string());
        out["agreements"] = json!(agreements);
    }
    emit(&out);
    Ok(0)
}

fn write_report(dir: &Path, report: &TrainReport) -> Result<(PathBuf, PathBuf), Failure> {
    create_dir(dir)?;
    let json_path = dir.join("report.json");
    let csv_path = dir.join("trace.csv");
    write_file(&json_path, &report.to_json())?;
    write_file(&csv_path, &report.trace_csv())?;
    Ok((json_path, csv_path))
}

/// Runs one config or a preset batch. Preset runs go to one subdirectory
/// each; completed runs are written even when another run diverges.
pub fn train(args: &TrainArgs) -> Outcome {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::usage(format!("{}: {e}", args.config.display())))?;
    let exp = parse_config(&text)
        .map_err(|e| Failure::usage(format!("{}: {e}", args.config.display())))?;

    let runs: Vec<(Option<String>, _)> = match exp.preset {
        Preset::Single => vec![(None, exp.train.clone())],
        Preset::Table2 => table2_preset(&exp.train).into_iter().map(|(n, c)| (Some(n), c)).collect(),
        Preset::Alpha => alpha_preset(&exp.train).into_iter().map(|(n, c)| (Some(n), c)).collect(),
    };
    let configs: Vec<_> = runs.iter().map(|(_, c)| c.clone()).collect();
    let results = run_many(&configs, thread_count());

    let mut code = 0;
    let mut summary = Vec::new();
    for ((name, _), result) in runs.iter().zip(results) {
        let dir = match name {
            Some(n) => exp.out_dir.join(n),
            None => exp.out_dir.clone(),
        };
        let label = name.clone().unwrap_or_else(|| "run".into());
        match result {
            Ok(report) => {
                let (json_path, csv_path) = write_report(&dir, &report)?;
                eprintln!(
                    "{label}: rank agreement {:.4} -> {:.4}",
                    report.initial.rank_agreement, report.final_metrics.rank_agreement
                );
                summary.push(json!({
                    "name": label,
                    "report": json_path.display().to_string(),
                    "trace": csv_path.display().to_string(),
                    "initial_rank_agreement": report.initial.rank_agreement,
                    "final_rank_agreement": report.final_metrics.rank_agreement,
                }));
            }
            Err(Error::Diverged { step }) => {
                eprintln!("{label}: diverged at step {step}");
                summary.push(json!({ "name": label, "diverged_at_step": step }));
                code = EXIT_DIVERGED;
            }
            Err(e) => return Err(e.into()),
        }
    }
    emit(&json!({ "runs": summary }));
    Ok(code)
}
