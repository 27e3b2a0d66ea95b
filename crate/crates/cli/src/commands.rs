use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use molcom::channel::{fit_channel, ObservedSeries};
use molcom::demod::{self, build_network, predict_rows, write_history, ThresholdBaseline};
use molcom::exec::ExecMode;
use molcom::metrics::{self, max_bit_error_rate_for, net_data_rate, CapacityQuery, ConfusionMatrix, Report};
use molcom::nn::Network;
use molcom::preprocess::{build_dataset, SegmentDataset, SegmentMode};
use molcom::testbed::{generate_corpus, read_jsonl, stream, write_jsonl, CorpusSpec, Transmission};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{svg, CliError, Command, Common};

/// Random stream of the master seed used for network initialization.
const INIT_STREAM: u64 = u64::MAX;

pub const TRANSMISSIONS_FILE: &str = "transmissions.jsonl";
pub const RUN_FILE: &str = "run.json";
pub const REPORT_FILE: &str = "report.json";

struct Run {
    config: RunConfig,
    out: PathBuf,
    exec: ExecMode,
}

impl Run {
    fn new(common: &Common) -> Result<Self, CliError> {
        let mut config = RunConfig::load(common.config.as_deref())?;
        if let Some(seed) = common.seed {
            config.seeds.master = seed;
        }
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
        let exec = if common.deterministic {
            ExecMode::Sequential
        } else {
            ExecMode::Parallel
        };
        Ok(Run { config, out, exec })
    }

    fn prepare_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| io_error(&self.out, e))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_run_json(&self, command: &str, args: Value) -> Result<(), CliError> {
        let doc = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "args": args,
            "config": self.config,
        });
        write_text(&self.path(RUN_FILE), &pretty(&doc))
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("in-memory values serialize") + "\n"
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

/// Plots are a convenience; failing to write one only warns.
fn write_plot(path: &Path, svg: &str) {
    if let Err(e) = fs::write(path, svg) {
        eprintln!("warning: could not write plot {}: {e}", path.display());
    }
}

fn with_path(path: &Path, e: molcom::Error) -> CliError {
    match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn load_dataset(dir: &Path) -> Result<SegmentDataset, CliError> {
    SegmentDataset::load(dir).map_err(|e| with_path(dir, e))
}

fn load_transmissions(path: &Path) -> Result<Vec<Transmission>, CliError> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let records = read_jsonl(BufReader::new(file)).map_err(|e| with_path(path, e))?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no transmissions", path.display())));
    }
    Ok(records)
}

fn path_arg(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

pub(crate) fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen {
            common,
            n,
            msg_len,
            alphabet,
            rate,
        } => gen(&common, n, msg_len, alphabet, rate),
        Command::Preprocess { common, input, mode } => preprocess(&common, &input, mode),
        Command::FitChannel { common, input } => fit(&common, &input),
        Command::Train {
            common,
            data,
            fc_width,
            max_epochs,
        } => train(&common, &data, fc_width, max_epochs),
        Command::Eval {
            common,
            data,
            model,
            pb,
            rate,
        } => eval(&common, &data, &model, pb, rate),
        Command::Capacity {
            common,
            rg,
            f,
            pb,
            target,
        } => capacity(&common, rg, f, pb, target),
        Command::Report { common, evals, trace } => report(&common, &evals, trace.as_deref()),
    }
}

fn gen(
    common: &Common,
    n: Option<u64>,
    msg_len: Option<u64>,
    alphabet: Option<usize>,
    rate: Option<f64>,
) -> Result<(), CliError> {
    let mut run = Run::new(common)?;
    let cfg = &mut run.config;
    if let Some(n) = n {
        cfg.corpus.n_transmissions = n as usize;
    }
    if let Some(l) = msg_len {
        cfg.corpus.msg_len = l as usize;
    }
    if let Some(c) = alphabet {
        cfg.modulation.alphabet_size = c;
    }
    if let Some(r) = rate {
        cfg.modulation.symbol_rate = r;
    }
    let spec = CorpusSpec {
        n_transmissions: cfg.corpus.n_transmissions,
        msg_len: cfg.corpus.msg_len,
        modulation: cfg.modulation()?,
        channel: cfg.channel,
        noise: cfg.noise,
        master_seed: cfg.seeds.master,
    };
    let corpus = generate_corpus(&spec, run.exec)?;
    run.prepare_out()?;
    let path = run.path(TRANSMISSIONS_FILE);
    let mut w = create(&path)?;
    write_jsonl(&mut w, &corpus).map_err(|e| with_path(&path, e))?;
    w.flush().map_err(|e| io_error(&path, e))?;
    run.write_run_json("gen", json!({}))?;
    eprintln!(
        "wrote {} transmissions of {} symbols to {}",
        corpus.len(),
        spec.msg_len,
        path.display()
    );
    Ok(())
}

fn preprocess(common: &Common, input: &Path, mode: SegmentMode) -> Result<(), CliError> {
    let run = Run::new(common)?;
    let corpus = load_transmissions(input)?;
    let built = build_dataset(&corpus, mode, &run.config.preprocess, run.config.seeds.split)?;
    run.prepare_out()?;
    built.dataset.save(&run.out).map_err(|e| with_path(&run.out, e))?;

    let path = run.path("boundaries.csv");
    let mut w = create(&path)?;
    let mut lines = String::from("transmission,symbol,start,true_start,delta\n");
    for (t, (chosen, truth)) in built.starts.iter().zip(&built.true_starts).enumerate() {
        for (j, (&a, &b)) in chosen.iter().zip(truth).enumerate() {
            lines.push_str(&format!("{t},{j},{a},{b},{}\n", a as i64 - b as i64));
        }
    }
    w.write_all(lines.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io_error(&path, e))?;

    run.write_run_json("preprocess", json!({"in": path_arg(input), "mode": mode}))?;
    let ds = &built.dataset;
    eprintln!(
        "{} segments ({} train / {} val / {} test), mode {:?}, max boundary delta {} samples, {} fallback transmissions",
        ds.len(),
        ds.split.train.len(),
        ds.split.val.len(),
        ds.split.test.len(),
        mode,
        built.max_boundary_error(),
        built.fallbacks
    );
    Ok(())
}

fn fit(common: &Common, input: &Path) -> Result<(), CliError> {
    let run = Run::new(common)?;
    let file = File::open(input).map_err(|e| io_error(input, e))?;
    let obs = ObservedSeries::from_csv(BufReader::new(file)).map_err(|e| with_path(input, e))?;
    let report = fit_channel(&run.config.channel, &obs)?;
    run.prepare_out()?;
    let p = report.params;
    write_text(
        &run.path("fit.json"),
        &pretty(&json!({
            "b1": p.b1,
            "b2": p.b2,
            "b3": p.b3,
            "rss": report.rss,
            "evaluations": report.evaluations,
        })),
    )?;
    run.write_run_json("fit-channel", json!({"in": path_arg(input)}))?;
    println!("b1 = {} b2 = {} b3 = {} rss = {:e}", p.b1, p.b2, p.b3, report.rss);
    Ok(())
}

fn train(common: &Common, data: &Path, fc_width: Option<usize>, max_epochs: Option<usize>) -> Result<(), CliError> {
    let mut run = Run::new(common)?;
    if let Some(w) = fc_width {
        run.config.cnn.fc_width = w;
    }
    if let Some(e) = max_epochs {
        run.config.training.max_epochs = e;
    }
    let ds = load_dataset(data)?;
    let cnn = run.config.cnn(ds.alphabet_size);
    let tcfg = run.config.train_config(run.exec);
    tcfg.validate()?;
    let net = build_network::<f32, _>(&cnn, &mut stream(run.config.seeds.master, INIT_STREAM))?;
    eprintln!(
        "training {} ({} parameters) on {} rows",
        ds.scenario(),
        net.param_count(),
        ds.split.train.len()
    );
    let outcome = demod::train(net, &ds, &tcfg)?;
    run.prepare_out()?;
    outcome.network.save(&run.out).map_err(|e| with_path(&run.out, e))?;
    let path = run.path("history.csv");
    let mut w = create(&path)?;
    write_history(&mut w, &outcome.history).map_err(|e| with_path(&path, e))?;
    run.write_run_json("train", json!({"data": path_arg(data)}))?;
    eprintln!(
        "{} epochs, best validation loss {:.5} at epoch {}",
        outcome.history.len(),
        outcome.best_val_loss,
        outcome.best_epoch
    );
    Ok(())
}

fn eval(common: &Common, data: &Path, model: &Path, pb: f64, rate: Option<f64>) -> Result<(), CliError> {
    if !(pb > 0.0 && pb < 0.5) {
        return Err(CliError::Usage(format!("--pb must lie in (0, 0.5), got {pb}")));
    }
    let run = Run::new(common)?;
    let ds = load_dataset(data)?;
    let net = Network::<f32>::load(model).map_err(|e| with_path(model, e))?;
    let symbol_rate = rate
        .or_else(|| ds.symbol_rate())
        .ok_or_else(|| CliError::Data(format!("{} does not record a symbol rate; pass --rate", data.display())))?;
    if ds.split.test.is_empty() {
        return Err(CliError::Data(format!("{}: empty test split", data.display())));
    }
    let scenario = ds.scenario();
    let truth: Vec<u8> = ds.split.test.iter().map(|&i| ds.y[i]).collect();

    let pred = predict_rows(&net, &ds, &ds.split.test, run.exec)?;
    let cm = ConfusionMatrix::from_labels(&truth, &pred, ds.alphabet_size)?;
    let cnn = Report::new(&scenario, &cm, symbol_rate, pb)?;

    let baseline = ThresholdBaseline::fit(&ds)?;
    let base_pred = baseline.predict_rows(&ds, &ds.split.test);
    let base_cm = ConfusionMatrix::from_labels(&truth, &base_pred, ds.alphabet_size)?;
    let base = Report::new(&format!("{scenario}_baseline"), &base_cm, symbol_rate, pb)?;

    run.prepare_out()?;
    let p = run.path("confusion.csv");
    metrics::write_confusion_csv(create(&p)?, &cnn).map_err(|e| with_path(&p, e))?;
    let p = run.path("offsets.csv");
    metrics::write_offsets_csv(create(&p)?, std::slice::from_ref(&cnn)).map_err(|e| with_path(&p, e))?;
    let p = run.path("summary.csv");
    metrics::write_summary_csv(create(&p)?, &[cnn.clone(), base.clone()]).map_err(|e| with_path(&p, e))?;
    write_text(&run.path(REPORT_FILE), &pretty(&json!({"cnn": cnn, "baseline": base})))?;
    run.write_run_json(
        "eval",
        json!({"data": path_arg(data), "model": path_arg(model), "pb": pb, "rate": symbol_rate}),
    )?;
    if !cnn.empty_rows.is_empty() {
        eprintln!("warning: no test samples for symbols {:?}", cnn.empty_rows);
    }
    println!(
        "{scenario}: accuracy {:.4} (baseline {:.4}), f {:.4} natural / {:.4} gray, R = {:.3} bit/s at pb = {pb}",
        cnn.accuracy, base.accuracy, cnn.f_natural, cnn.f_gray, cnn.net_rate
    );
    Ok(())
}

fn capacity(common: &Common, rg: f64, f: Option<f64>, pb: f64, target: Option<f64>) -> Result<(), CliError> {
    let usage = |e: molcom::Error| CliError::Usage(e.to_string());
    let rate = match f {
        Some(f) => {
            let q = CapacityQuery {
                gross_rate: rg,
                bit_error_rate: f,
                residual_error: pb,
            };
            let r = net_data_rate(&q).map_err(usage)?;
            println!("R = {r:.3} bit/s");
            Some(r)
        }
        None => None,
    };
    let limit = match target {
        Some(t) => {
            let f_max = max_bit_error_rate_for(t, rg, pb).map_err(usage)?;
            println!("R >= {t} bit/s holds for f <= {f_max:.6}");
            Some(f_max)
        }
        None => None,
    };
    if common.out.is_some() {
        let run = Run::new(common)?;
        run.prepare_out()?;
        write_text(
            &run.path("capacity.json"),
            &pretty(&json!({"rg": rg, "f": f, "pb": pb, "rate": rate, "target": target, "f_max": limit})),
        )?;
        run.write_run_json("capacity", json!({"rg": rg, "f": f, "pb": pb, "target": target}))?;
    }
    Ok(())
}

fn report(common: &Common, evals: &[PathBuf], trace: Option<&Path>) -> Result<(), CliError> {
    let run = Run::new(common)?;
    let mut cnn = Vec::new();
    let mut all = Vec::new();
    for dir in evals {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let parse = |key: &str| -> Result<Report, CliError> {
            serde_json::from_value(doc[key].clone())
                .map_err(|e| CliError::Data(format!("{}: {key}: {e}", path.display())))
        };
        let r = parse("cnn")?;
        all.push(r.clone());
        all.push(parse("baseline")?);
        cnn.push(r);
    }
    run.prepare_out()?;
    let p = run.path("summary.csv");
    metrics::write_summary_csv(create(&p)?, &all).map_err(|e| with_path(&p, e))?;
    let p = run.path("offsets.csv");
    metrics::write_offsets_csv(create(&p)?, &cnn).map_err(|e| with_path(&p, e))?;
    for r in &cnn {
        let title = format!("{}: accuracy {:.2}", r.scenario, r.accuracy);
        write_plot(
            &run.path(&format!("confusion_{}.svg", r.scenario)),
            &svg::confusion_heatmap(&title, &r.confusion),
        );
    }
    if let Some(trace) = trace {
        let corpus = load_transmissions(trace)?;
        let t = &corpus[0];
        let title = format!(
            "C = {}, {} Hz, symbols {:?}",
            t.config.modulation.alphabet_size, t.config.modulation.symbol_rate, t.symbols
        );
        write_plot(
            &run.path("trace.svg"),
            &svg::line_plot(&title, "time [s]", &[("signal", &t.times, &t.values)]),
        );
    }
    let mut args = json!({"eval": evals.iter().map(|p| path_arg(p)).collect::<Vec<_>>()});
    if let Some(t) = trace {
        args["trace"] = path_arg(t);
    }
    run.write_run_json("report", args)?;
    eprintln!("summarized {} scenarios into {}", cnn.len(), run.out.display());
    Ok(())
}
