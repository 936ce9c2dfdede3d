use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use logicvae::eval::{self, AccuracyConfig, CvaeConfig, EvalReport, PriorConfig, SlerpConfig};
use logicvae::kernel::{
    gram_matrix_with, kernel_distance_csv, kernel_distance_pairs, kernel_pca_fit, load_gram, save_gram, ContextVector,
    KernelMode, PcaModel, SemanticSignature,
};
use logicvae::logic::{
    generate_dataset_with_stats, parse, read_dataset, size_stats, write_dataset, DatasetHeader, Formula,
};
use logicvae::model::{Autoencoder, DecodeMode, LogicVae, ModelConfig, ModelMode};
use logicvae::par::{self, Execution};
use logicvae::train::{self, index_recovery_train, HierConfig};
use logicvae::{Error, Result};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{Cli, Command, EvalCmd, GenArgs, KernelCmd, KernelOpts, ModelArgs, RoundtripArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.paper_scale)?;
    let out = Output { json: cli.json };
    match &cli.command {
        Command::GenDataset(a) => gen_dataset(&out, cfg, a),
        Command::Kernel(k) => kernel(&out, cfg, k),
        Command::Train(a) => train_cmd(&out, cfg, a, cli.paper_scale),
        Command::Eval(e) => eval_cmd(&out, e),
        Command::Roundtrip(a) => roundtrip(&out, a),
    }
}

struct Output {
    json: bool,
}

impl Output {
    fn emit(&self, human: &str, value: Value) -> Result<()> {
        if self.json {
            println!("{}", serde_json::to_string_pretty(&value)?);
        } else {
            print!("{human}");
        }
        Ok(())
    }
}

fn read_formulas(path: &Path) -> Result<(DatasetHeader, Vec<Formula>)> {
    let file = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_dataset(BufReader::new(file), None)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_pca(path: &Path) -> Result<PcaModel> {
    PcaModel::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Data(format!("PCA model {}: {io}", path.display())),
        other => other,
    })
}

fn load_model(path: &Path, mode: Option<ModelMode>) -> Result<LogicVae> {
    let r = match mode {
        Some(m) => LogicVae::load_expecting(path, m),
        None => LogicVae::load(path),
    };
    r.map_err(|e| match e {
        Error::Io(io) => Error::Data(format!("checkpoint {}: {io}", path.display())),
        other => other,
    })
}

fn gen_dataset(out: &Output, mut cfg: RunConfig, a: &GenArgs) -> Result<()> {
    let g = &mut cfg.generator;
    if let Some(n) = a.n {
        g.n = n;
    }
    if let Some(p) = a.p_leaf {
        g.p_leaf = p;
    }
    if let Some(m) = a.max_nodes {
        g.max_nodes = m;
    }
    if let Some(s) = a.seed {
        g.seed = s;
    }
    let (formulas, stats) = generate_dataset_with_stats(g, a.count, Execution::default())?;
    if let Some(dir) = a.out.parent() {
        fs::create_dir_all(dir)?;
    }
    write_dataset(File::create(&a.out)?, &DatasetHeader::from_generator(g, formulas.len()), &formulas)?;
    let (nodes, depth) = size_stats(&formulas);
    let human = format!(
        "wrote {} formulae to {}\nmean nodes {nodes:.4}, mean depth {depth:.4}, leaf fraction {:.4} over {} slots, {} oversized trees redrawn\n",
        formulas.len(),
        a.out.display(),
        stats.leaf_fraction(),
        stats.slots,
        stats.rejected_trees
    );
    out.emit(
        &human,
        json!({
            "out": a.out, "count": formulas.len(), "generator": g,
            "mean_nodes": nodes, "mean_depth": depth,
            "leaf_fraction": stats.leaf_fraction(), "slots": stats.slots, "rejected_trees": stats.rejected_trees,
        }),
    )
}

fn kernel_mode(cfg: &mut RunConfig, opts: &KernelOpts) -> Result<KernelMode> {
    let k = &mut cfg.kernel;
    if let Some(m) = &opts.mode {
        k.monte_carlo = match m.as_str() {
            "exact" => false,
            "mc" => true,
            other => return Err(Error::Config(format!("unknown kernel mode {other:?}; use exact or mc"))),
        };
    }
    if let Some(s) = opts.samples {
        k.samples = s;
    }
    if let Some(s) = opts.seed {
        k.seed = s;
    }
    Ok(k.mode())
}

fn anchors_from(path: &Path, limit: usize) -> Result<(usize, Vec<Formula>)> {
    let (header, mut formulas) = read_formulas(path)?;
    formulas.truncate(limit);
    Ok((header.n, formulas))
}

fn kernel(out: &Output, mut cfg: RunConfig, cmd: &KernelCmd) -> Result<()> {
    match cmd {
        KernelCmd::Gram { dataset, anchors, kernel, out: dir } => {
            let mode = kernel_mode(&mut cfg, kernel)?;
            if let Some(a) = anchors {
                cfg.kernel.anchors = *a;
            }
            let (n, formulas) = anchors_from(dataset, cfg.kernel.anchors)?;
            let gram = gram_matrix_with(&formulas, n, mode, Execution::default())?;
            save_gram(&gram, dir)?;
            write_json(&dir.join("run_config.json"), &json!({ "kernel": cfg.kernel, "dataset": dataset }))?;
            out.emit(
                &format!("wrote {}x{} Gram matrix to {}\n", gram.size(), gram.size(), dir.display()),
                json!({ "out": dir, "size": gram.size(), "n": n, "mode": mode }),
            )
        }
        KernelCmd::Pca { dataset, gram, anchors, components, kernel, out: dir } => {
            let mode = kernel_mode(&mut cfg, kernel)?;
            if let Some(a) = anchors {
                cfg.kernel.anchors = *a;
            }
            if let Some(c) = components {
                cfg.kernel.components = *c;
            }
            let gram = match (dataset, gram) {
                (_, Some(g)) => load_gram(g)?,
                (Some(d), None) => {
                    let (n, formulas) = anchors_from(d, cfg.kernel.anchors)?;
                    gram_matrix_with(&formulas, n, mode, Execution::default())?
                }
                (None, None) => return Err(Error::Config("kernel pca needs --dataset or --gram".into())),
            };
            let pca = kernel_pca_fit(&gram, cfg.kernel.components)?;
            pca.save(dir)?;
            write_json(
                &dir.join("run_config.json"),
                &json!({ "kernel": cfg.kernel, "dataset": dataset, "gram": gram_path(gram_arg(cmd)) }),
            )?;
            let explained = pca.cumulative_explained(pca.k);
            out.emit(
                &format!(
                    "fitted {} components over {} anchors; cumulative explained variance {explained:.6}\nfingerprint {}\n",
                    pca.k,
                    pca.anchor_count(),
                    pca.fingerprint()
                ),
                json!({ "out": dir, "components": pca.k, "anchors": pca.anchor_count(),
                        "cumulative_explained": explained, "fingerprint": pca.fingerprint() }),
            )
        }
        KernelCmd::Embed { pca, formula, dataset, valuations, out: file } => {
            let pca = load_pca(pca)?;
            let mut rows: Vec<(String, ContextVector)> = Vec::new();
            for text in formula {
                let f = parse(text, pca.n)?;
                rows.push((f.to_canonical(), pca.embed(&f)?));
            }
            if let Some(d) = dataset {
                for f in read_formulas(d)?.1 {
                    rows.push((f.to_canonical(), pca.embed(&f)?));
                }
            }
            if let Some(v) = valuations {
                let sig = read_valuations(v, &pca)?;
                rows.push((v.display().to_string(), pca.embed_signature(&sig)?));
            }
            if rows.is_empty() {
                return Err(Error::Config("nothing to embed: pass --formula, --dataset or --valuations".into()));
            }
            let mut csv = String::from("input");
            for j in 0..pca.k {
                csv.push_str(&format!(",y{}", j + 1));
            }
            csv.push('\n');
            for (name, y) in &rows {
                csv.push_str(&format!("\"{name}\""));
                for v in y {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push('\n');
            }
            if let Some(f) = file {
                if let Some(dir) = f.parent() {
                    fs::create_dir_all(dir)?;
                }
                fs::write(f, &csv)?;
            }
            let value: Vec<Value> = rows.iter().map(|(n, y)| json!({ "input": n, "y": y })).collect();
            out.emit(&csv, json!(value))
        }
        KernelCmd::Pairs { pca, dataset, out: file } => {
            let pca = load_pca(pca)?;
            let formulas = read_formulas(dataset)?.1;
            let pairs = kernel_distance_pairs(&formulas, &pca)?;
            if let Some(dir) = file.parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(file, kernel_distance_csv(&pairs))?;
            out.emit(&format!("wrote {} pairs to {}\n", pairs.len(), file.display()), json!({ "pairs": pairs.len() }))
        }
    }
}

fn gram_arg(cmd: &KernelCmd) -> Option<&Path> {
    match cmd {
        KernelCmd::Pca { gram, .. } => gram.as_deref(),
        _ => None,
    }
}

fn gram_path(p: Option<&Path>) -> Value {
    p.map(|p| json!(p)).unwrap_or(Value::Null)
}

/// Reads `bits,value` rows and orders them like the PCA model's
/// assignments.
fn read_valuations(path: &Path, pca: &PcaModel) -> Result<SemanticSignature> {
    let text = fs::read_to_string(path)?;
    let mut table: HashMap<u64, i8> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::Data(format!("{}:{}: {m}", path.display(), lineno + 1));
        let (bits, value) = line.split_once(',').ok_or_else(|| bad("expected `bits,value`"))?;
        let bits = bits.trim();
        if bits.len() != pca.n || !bits.chars().all(|c| c == '0' || c == '1') {
            return Err(bad(&format!("expected {} binary digits", pca.n)));
        }
        let key = bits.chars().enumerate().fold(0u64, |acc, (j, c)| acc | (((c == '1') as u64) << j));
        let v: i8 = match value.trim() {
            "1" | "+1" => 1,
            "-1" => -1,
            other => return Err(bad(&format!("value {other:?} is not 1 or -1"))),
        };
        if table.insert(key, v).is_some_and(|old| old != v) {
            return Err(bad("conflicting values for one assignment"));
        }
    }
    let values = pca
        .mode
        .assignments(pca.n)?
        .iter()
        .map(|a| {
            table.get(&a.bits()).copied().ok_or_else(|| {
                let bits: String = a.to_bools().iter().map(|&b| if b { '1' } else { '0' }).collect();
                Error::Data(format!("{}: no value for assignment {bits}", path.display()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SemanticSignature::from_values(values, pca.n, pca.mode)
}

fn train_cmd(out: &Output, mut cfg: RunConfig, a: &TrainArgs, paper_scale: bool) -> Result<()> {
    if let Some(c) = a.encoder {
        cfg.model.cell = c;
        if let Some(e) = &mut cfg.model.encoder {
            e.cell = c;
        }
    }
    if let Some(b) = a.bidirectional {
        cfg.model.bidirectional = b;
        if let Some(e) = &mut cfg.model.encoder {
            e.bidirectional = b;
        }
    }
    if a.unconstrained {
        cfg.model.constrained = false;
    }
    if let Some(m) = a.mode {
        cfg.train.mode = m;
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
        cfg.hier.seed = s;
    }
    cfg.train.hierarchical |= a.hierarchical;
    cfg.train.validate()?;

    let (header, formulas) = read_formulas(&a.dataset)?;
    let n = header.n;
    let pca = match &a.pca {
        Some(p) => Some(load_pca(p)?),
        None => None,
    };
    if cfg.train.mode == ModelMode::Cvae && pca.is_none() {
        return Err(Error::Config("CVAE training needs a PCA model: pass --pca <dir> from `kernel pca`".into()));
    }
    if cfg.train.hierarchical && pca.is_none() {
        return Err(Error::Config("hierarchical training needs a PCA model: pass --pca <dir>".into()));
    }
    if let Some(p) = &pca {
        if p.n != n {
            return Err(Error::Mismatch(format!("PCA over {} variables, dataset over {n}", p.n)));
        }
    }
    let enc = cfg.model.encoder_config(n, paper_scale);
    let mut model_cfg = match (cfg.train.mode, &pca) {
        (ModelMode::Cvae, Some(p)) => ModelConfig::cvae(enc, p.k, Some(p.fingerprint())),
        _ => ModelConfig::vae(enc),
    };
    model_cfg.constrained = cfg.model.constrained;
    model_cfg.max_v = cfg.model.max_v;
    model_cfg.encoder_uses_context = cfg.model.encoder_uses_context;
    model_cfg.validate()?;

    let contexts: Option<Vec<ContextVector>> = match (cfg.train.mode, &pca) {
        (ModelMode::Cvae, Some(p)) => {
            Some(par::try_map_range(Execution::default(), formulas.len(), |i| p.embed(&formulas[i]))?)
        }
        _ => None,
    };
    fs::create_dir_all(&a.out)?;
    LogicVae::new(model_cfg.clone(), cfg.train.seed)?.save(&a.out.join("initial"))?;
    let outcome = train::train(model_cfg, &formulas, contexts.as_deref(), &cfg.train, Execution::default())?;
    let resolved = json!({ "run": cfg, "dataset": a.dataset, "pca": a.pca, "paper_scale": paper_scale });
    train::save_run(&a.out, &outcome, &cfg.train, resolved.clone())?;
    write_json(&a.out.join("run_config.json"), &resolved)?;

    let first = outcome.history.first();
    let last = outcome.history.last();
    let mut human = format!(
        "trained {} epochs{}; best validation loss {:.6} at epoch {}\n",
        outcome.epochs_run,
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.best_val_loss,
        outcome.best_epoch
    );
    if let (Some(f), Some(l)) = (first, last) {
        human.push_str(&format!("training NLL {:.4} -> {:.4}\n", f.nll, l.nll));
    }
    let mut summary = json!({
        "out": a.out, "epochs_run": outcome.epochs_run, "stopped_early": outcome.stopped_early,
        "best_val_loss": outcome.best_val_loss, "best_epoch": outcome.best_epoch,
        "first_nll": first.map(|r| r.nll), "last_nll": last.map(|r| r.nll),
        "fingerprint": outcome.model.fingerprint(),
    });
    if cfg.train.hierarchical {
        let pca = pca.as_ref().expect("checked above");
        let hcfg = HierConfig { lambda: cfg.train.lambda, ..cfg.hier.clone() };
        let (_, report) = index_recovery_train(&formulas, pca, &hcfg, Execution::default())?;
        write_json(&a.out.join("hier.json"), &json!({ "config": hcfg, "report": report }))?;
        human.push_str(&format!(
            "index recovery disagreement: untrained {:.4}, random {:.4}, trained {:.4}\n",
            report.disagreement_untrained, report.disagreement_random, report.disagreement_trained
        ));
        summary["hier"] = serde_json::to_value(&report)?;
    }
    out.emit(&human, summary)
}

fn contexts_for(
    model: &LogicVae,
    pca: Option<&Path>,
    formulas: &[Formula],
) -> Result<(Option<PcaModel>, Option<Vec<ContextVector>>)> {
    if model.config.mode == ModelMode::Vae {
        return Ok((None, None));
    }
    let path = pca.ok_or_else(|| Error::Config("a CVAE checkpoint needs --pca <dir>".into()))?;
    let pca = load_pca(path)?;
    if let Some(fp) = &model.config.pca_fingerprint {
        if *fp != pca.fingerprint() {
            return Err(Error::Mismatch("the PCA model differs from the one the checkpoint was trained with".into()));
        }
    }
    let ys = par::try_map_range(Execution::default(), formulas.len(), |i| pca.embed(&formulas[i]))?;
    Ok((Some(pca), Some(ys)))
}

fn with_origin(mut report: EvalReport, m: &ModelArgs, model: &LogicVae) -> EvalReport {
    if let Value::Object(map) = &mut report.parameters {
        map.insert("checkpoint".into(), json!(m.model));
        map.insert("fingerprint".into(), json!(model.fingerprint()));
    }
    report
}

fn finish(out: &Output, report: &EvalReport, dir: Option<&Path>) -> Result<()> {
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
        fs::write(d.join("report.json"), report.to_json()?)?;
        fs::write(d.join("report.csv"), report.to_csv())?;
    }
    let mut human = format!("{}\n", report.protocol);
    for (k, v) in &report.metrics {
        human.push_str(&format!("  {k}: {v:.6}\n"));
    }
    for (k, v) in &report.counts {
        human.push_str(&format!("  {k}: {v}\n"));
    }
    out.emit(&human, serde_json::to_value(report)?)
}

fn limited(path: &Path, limit: Option<usize>) -> Result<Vec<Formula>> {
    let mut f = read_formulas(path)?.1;
    if let Some(l) = limit {
        f.truncate(l);
    }
    Ok(f)
}

fn eval_cmd(out: &Output, cmd: &EvalCmd) -> Result<()> {
    let exec = Execution::default();
    match cmd {
        EvalCmd::Accuracy { model: m, dataset, limit, z_samples, decodes } => {
            let model = load_model(&m.model, None)?;
            let test = limited(dataset, *limit)?;
            let (_, ys) = contexts_for(&model, m.pca.as_deref(), &test)?;
            let cfg = AccuracyConfig { z_samples: *z_samples, decodes_per_z: *decodes, seed: m.seed };
            let r = eval::reconstruction_accuracy(&model, &test, ys.as_deref(), &cfg, exec)?;
            finish(out, &with_origin(r.report(&cfg), m, &model), m.out.as_deref())
        }
        EvalCmd::Prior { model: m, dataset, samples, decodes } => {
            let model = load_model(&m.model, Some(ModelMode::Vae))?;
            let train_set = read_formulas(dataset)?.1;
            let cfg = PriorConfig { prior_samples: *samples, decodes_per_z: *decodes, seed: m.seed };
            let r = eval::prior_generation_metrics(&model, &train_set, &cfg, exec)?;
            finish(out, &with_origin(r.report(&cfg), m, &model), m.out.as_deref())
        }
        EvalCmd::CvaeMetrics { model: m, dataset, limit, z_per_y, decodes } => {
            let model = load_model(&m.model, Some(ModelMode::Cvae))?;
            let conds = limited(dataset, *limit)?;
            let (pca, ys) = contexts_for(&model, m.pca.as_deref(), &conds)?;
            let (pca, ys) = (pca.expect("CVAE model"), ys.expect("CVAE model"));
            let cfg = CvaeConfig { z_per_y: *z_per_y, decodes_per_z: *decodes, seed: m.seed };
            let r = eval::cvae_semantic_metrics(&model, &pca, &ys, &cfg, exec)?;
            finish(out, &with_origin(r.report(&cfg), m, &model), m.out.as_deref())
        }
        EvalCmd::Baseline { pca, pool_size, p_leaf, seed, out: dir } => {
            let pca = load_pca(pca)?;
            let mut generator = logicvae::logic::GeneratorConfig { n: pca.n, seed: *seed, ..Default::default() };
            if let Some(p) = p_leaf {
                generator.p_leaf = *p;
            }
            let r = eval::baseline_pool_stats(*pool_size, &generator, &pca, exec)?;
            finish(out, &r.report(&generator), dir.as_deref())
        }
        EvalCmd::Slerp { model: m, formula, points, decodes } => {
            let model = load_model(&m.model, None)?;
            let anchor = parse(formula, model.n())?;
            let (_, ys) = contexts_for(&model, m.pca.as_deref(), std::slice::from_ref(&anchor))?;
            let y = ys.as_ref().map(|v| v[0].as_slice());
            let cfg = SlerpConfig { num_points: *points, decodes_per_point: *decodes, seed: m.seed };
            let r = eval::slerp_interpolate(&model, &anchor, y, &cfg, exec)?;
            let report = with_origin(
                EvalReport::new("slerp", serde_json::to_value(cfg)?)
                    .metric("mean_edit_distance", r.mean_edit_distance())
                    .metric("omega", r.omega)
                    .count("points", r.points.len()),
                m,
                &model,
            );
            if let Some(d) = &m.out {
                fs::create_dir_all(d)?;
                fs::write(d.join("slerp.json"), serde_json::to_string_pretty(&r)?)?;
                fs::write(d.join("edits.csv"), r.edits_csv())?;
                fs::write(d.join("strip.dot"), r.to_dot())?;
            }
            finish(out, &report, m.out.as_deref())
        }
    }
}

fn roundtrip(out: &Output, a: &RoundtripArgs) -> Result<()> {
    let model = load_model(&a.model, None)?;
    let f = parse(&a.formula, model.n())?;
    let (_, ys) = contexts_for(&model, a.pca.as_deref(), std::slice::from_ref(&f))?;
    let y = ys.as_ref().map(|v| v[0].as_slice());
    let q = model.posterior(&f, y)?;
    let decoded = model.decode(&q.mu, y, DecodeMode::Greedy)?;
    let text = decoded.formula.as_ref().map(Formula::to_canonical);
    let matched = decoded.formula.as_ref() == Some(&f);
    let mu: Vec<String> = q.mu.iter().map(|v| format!("{v:.4}")).collect();
    let human = format!(
        "input    {}\nmu       [{}]\ndecoded  {}\nresult   {}\nconfig   {}\n",
        f.to_canonical(),
        mu.join(", "),
        text.as_deref().unwrap_or("<truncated>"),
        if matched { "match" } else { "mismatch" },
        model.fingerprint()
    );
    out.emit(
        &human,
        json!({ "input": f.to_canonical(), "mu": q.mu, "decoded": text, "match": matched, "fingerprint": model.fingerprint() }),
    )
}
