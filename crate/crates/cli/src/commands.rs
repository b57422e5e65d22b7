use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use hdpid::baselines::{label_propagation, nn_classify, nn_unknown_score, LabelledGallery, PropagationSettings};
use hdpid::data::Dataset;
use hdpid::eval::MetricSummary;
use hdpid::experiments::{
    encounter_data, evaluate_clustering, evaluate_labelling, evaluate_unknown_detection, label_noise_data,
    labelling_data, unknown_detection_data, FitConfig, GroupAccuracy,
};
use hdpid::predict::{pooled_map_is_unknown, pooled_predict_context, pooled_predict_name, pooled_unknown_score};
use hdpid::predict::{ContextQuery, MapPooling};
use hdpid::sampler::{run_chains_with_progress, FitProtocol, ModelConfig, ProtocolMode};
use serde::{Deserialize, Serialize};

use crate::config::ConfigFile;
use crate::manifest::Manifest;
use crate::snapshots::{FitFile, FitHeader, SNAPSHOT_SCHEMA, SNAPSHOT_VERSION};
use crate::{FitArgs, OutputError, Scenario};

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    Manifest::read(BufReader::new(file)).with_context(|| format!("reading dataset {}", path.display()))
}

pub fn read_fit(path: &Path) -> Result<FitFile> {
    let file = File::open(path).with_context(|| format!("opening snapshots {}", path.display()))?;
    FitFile::read(BufReader::new(file)).with_context(|| format!("reading snapshots {}", path.display()))
}

/// Writes to `path`, or stdout when absent. Failures here are not the
/// caller's fault and are tagged as such.
fn write_output(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let result = match path {
        Some(p) => File::create(p)
            .map_err(anyhow::Error::from)
            .and_then(|f| {
                let mut w = BufWriter::new(f);
                body(&mut w)?;
                w.flush()?;
                Ok(())
            })
            .with_context(|| format!("writing {}", p.display())),
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            match body(&mut w) {
                // a closed reader downstream is not a failure
                Err(e) if is_broken_pipe(&e) => Ok(()),
                other => other,
            }
        }
    };
    result.map_err(|e| anyhow::Error::new(OutputError(format!("{e:#}"))))
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let kind = match (
            c.downcast_ref::<std::io::Error>(),
            c.downcast_ref::<serde_json::Error>(),
        ) {
            (Some(io), _) => Some(io.kind()),
            (_, Some(json)) => json.io_error_kind(),
            _ => None,
        };
        kind == Some(std::io::ErrorKind::BrokenPipe)
    })
}

fn write_lines<T: Serialize>(out: &mut dyn Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        writeln!(out)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

pub fn simulate(
    config: &ConfigFile,
    seed: Option<u64>,
    scenario: Scenario,
    out: Option<&Path>,
    test_out: Option<&Path>,
) -> Result<()> {
    let (train, test) = match scenario {
        Scenario::Encounters => {
            let c = config.encounters(seed);
            let names = (0..c.sim.n_contexts).map(|k| c.sim.context_name(k)).collect();
            (Manifest::new(encounter_data(&c)?, names), None)
        }
        Scenario::Unknown => {
            let (a, b) = unknown_detection_data(&config.unknown_detection(seed))?;
            (Manifest::new(a, Vec::new()), Some(Manifest::new(b, Vec::new())))
        }
        Scenario::Labelling => {
            let (a, b) = labelling_data(&config.labelling(seed))?;
            (Manifest::new(a, Vec::new()), Some(Manifest::new(b, Vec::new())))
        }
        Scenario::Noise => (
            Manifest::new(label_noise_data(&config.label_noise(seed))?, Vec::new()),
            None,
        ),
    };
    match (&test, test_out) {
        (Some(_), None) => bail!("this scenario also produces a test set; pass --test-out"),
        (None, Some(_)) => bail!("this scenario has no test set"),
        _ => {}
    }
    write_output(out, |w| train.write(w))?;
    if let (Some(t), Some(p)) = (test, test_out) {
        write_output(Some(p), |w| t.write(w))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fit

pub fn fit(config: &ConfigFile, seed: Option<u64>, data_path: &Path, args: &FitArgs, out: Option<&Path>) -> Result<()> {
    let manifest = read_manifest(data_path)?;
    let data = &manifest.data;

    let mut model = ModelConfig {
        contexts: manifest.context_names.len().max(1),
        ..ModelConfig::default()
    };
    config.apply_model(&mut model);
    if args.no_context {
        model.context_model = false;
    }
    let hyper = model.build(data)?;

    let mut schedule = FitConfig::default();
    config.apply_fit(&mut schedule);
    if let Some(s) = seed {
        schedule.seed = s;
    }
    for (target, flag) in [
        (&mut schedule.chains, args.chains),
        (&mut schedule.sweeps, args.sweeps),
        (&mut schedule.burn_in, args.burn_in),
        (&mut schedule.thinning, args.thin),
    ] {
        if let Some(v) = flag {
            *target = v;
        }
    }
    let mode = match args.protocol {
        Some(p) => p.into(),
        None => config.protocol()?.unwrap_or(ProtocolMode::Offline),
    };
    let mut protocol = FitProtocol::for_mode(mode);
    if let Some(s) = config.sweeps_per_step {
        protocol.sweeps_per_step = s;
    }
    if let Some(b) = config.batch_frames {
        protocol.batch_frames = b;
    }

    let total = schedule.sweeps;
    let report = |chain: usize, sweep: usize| eprintln!("chain {chain}: sweep {sweep}/{total}");
    let quiet = |_: usize, _: usize| {};
    let progress: &(dyn Fn(usize, usize) + Sync) = if args.quiet { &quiet } else { &report };
    let samples = run_chains_with_progress(
        schedule.chains,
        data,
        &hyper,
        &protocol,
        &schedule.settings()?,
        schedule.parallel,
        Some(progress),
    )?;
    let file = FitFile {
        header: FitHeader {
            schema: SNAPSHOT_SCHEMA.into(),
            version: SNAPSHOT_VERSION,
            protocol: mode,
            model,
            face: hyper.face.clone(),
            observations: data.len(),
            dim: data.dim(),
            chains: schedule.chains,
            sweeps: schedule.sweeps,
            burn_in: schedule.burn_in,
            thin: schedule.thinning,
            seed: schedule.seed,
        },
        samples,
    };
    if !args.quiet {
        eprintln!("{} snapshots from {} chains", file.samples.len(), schedule.chains);
    }
    write_output(out, |w| file.write(w))
}

// ---------------------------------------------------------------------------
// predict and baselines

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationPrediction {
    pub id: String,
    pub frame: usize,
    /// Posterior probability of a person never met in training.
    pub unknown: f64,
    pub is_unknown: bool,
    /// Predicted name; `None` means unknown.
    pub name: Option<String>,
    pub name_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub frame: usize,
    pub contexts: BTreeMap<String, f64>,
}

fn context_name(names: &[String], c: usize) -> String {
    names.get(c).cloned().unwrap_or_else(|| format!("context{}", c + 1))
}

pub fn predict(data_path: &Path, fit_path: &Path, query_path: &Path, out: Option<&Path>) -> Result<()> {
    let train = read_manifest(data_path)?;
    let fit = read_fit(fit_path)?;
    let query = read_manifest(query_path)?;
    let hyper = fit.hyper(&train.data)?;
    fit.check_query(&query.data)?;
    let states = fit.samples.states();
    if states.is_empty() {
        bail!("snapshot file holds no samples past burn-in");
    }
    let q = &query.data;

    // query contexts are matched to training contexts by name
    let mut frame_query = Vec::with_capacity(q.frames());
    for m in 0..q.frames() {
        let cq = match q.frame_context(m) {
            Some(c) if hyper.context_model && hyper.contexts() > 1 => {
                let name = &query.context_names[c];
                let k = train
                    .context_names
                    .iter()
                    .position(|t| t == name)
                    .with_context(|| format!("query context {name:?} unknown to the training set"))?;
                if k >= hyper.contexts() {
                    bail!("query context {name:?} outside the fitted contexts");
                }
                ContextQuery::Known(k)
            }
            _ => ContextQuery::Marginal,
        };
        frame_query.push(cq);
    }

    let mut observations = Vec::with_capacity(q.len());
    for (n, o) in q.observations().iter().enumerate() {
        let x = q.embedding(n);
        let cq = frame_query[o.frame];
        let dist = pooled_predict_name(x, cq, &states, &hyper)?;
        let name = dist.argmax().map(str::to_string);
        let name_prob = name.as_deref().map_or(dist.unknown, |s| dist.prob(s));
        observations.push(ObservationPrediction {
            id: o.id.clone(),
            frame: o.frame + 1,
            unknown: pooled_unknown_score(x, cq, &states, &hyper)?,
            is_unknown: pooled_map_is_unknown(x, cq, &states, &hyper, MapPooling::PooledProbability)?,
            name,
            name_prob,
        });
    }
    let mut frames = Vec::new();
    if hyper.context_model && hyper.contexts() > 1 {
        for m in 0..q.frames() {
            let members: Vec<Vec<f64>> = q.frame_members(m).iter().map(|n| q.embedding(*n).to_vec()).collect();
            if members.is_empty() {
                continue;
            }
            let probs = pooled_predict_context(&members, &states, &hyper)?;
            frames.push(FramePrediction {
                frame: m + 1,
                contexts: probs
                    .as_slice()
                    .iter()
                    .enumerate()
                    .map(|(c, p)| (context_name(&train.context_names, c), *p))
                    .collect(),
            });
        }
    }
    write_output(out, |w| {
        write_lines(w, &observations)?;
        write_lines(w, &frames)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePrediction {
    pub id: String,
    pub method: String,
    pub prediction: Option<String>,
    /// Distance to the nearest training embedding (nearest neighbour only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unknown_score: Option<f64>,
}

pub fn baseline(data_path: &Path, query_path: &Path, method: crate::Baseline, out: Option<&Path>) -> Result<()> {
    let train = read_manifest(data_path)?.data;
    let query = read_manifest(query_path)?.data;
    if train.is_empty() {
        bail!("training set is empty");
    }
    if !query.is_empty() && query.dim() != train.dim() {
        bail!(
            "query dimension {} differs from training dimension {}",
            query.dim(),
            train.dim()
        );
    }
    let labelled: Vec<usize> = (0..train.len())
        .filter(|n| train.observation(*n).label.is_some())
        .collect();
    let label_of = |n: usize| train.observation(n).label.clone().expect("labelled");
    let mut rows = Vec::with_capacity(query.len());
    match method {
        crate::Baseline::Nn => {
            let everyone = LabelledGallery::new(
                train.embeddings(),
                train.observations().iter().map(|o| o.id.clone()).collect(),
            )?;
            let named = if labelled.is_empty() {
                None
            } else {
                Some(LabelledGallery::new(
                    labelled.iter().map(|n| train.embedding(*n).to_vec()).collect(),
                    labelled.iter().map(|n| label_of(*n)).collect(),
                )?)
            };
            for (n, o) in query.observations().iter().enumerate() {
                let x = query.embedding(n);
                let prediction = match &named {
                    Some(g) => Some(nn_classify(x, g)?.to_string()),
                    None => None,
                };
                rows.push(BaselinePrediction {
                    id: o.id.clone(),
                    method: "nn".into(),
                    prediction,
                    unknown_score: Some(nn_unknown_score(x, &everyone)?),
                });
            }
        }
        crate::Baseline::Lp => {
            if labelled.is_empty() {
                bail!("label propagation needs at least one labelled training observation");
            }
            let mut vectors = train.embeddings();
            vectors.extend(query.embeddings());
            let seeds: Vec<(usize, String)> = labelled.iter().map(|n| (*n, label_of(*n))).collect();
            let prop = label_propagation(&vectors, &seeds, &PropagationSettings::default())?;
            for (n, o) in query.observations().iter().enumerate() {
                rows.push(BaselinePrediction {
                    id: o.id.clone(),
                    method: "lp".into(),
                    prediction: Some(prop.predicted(train.len() + n).to_string()),
                    unknown_score: None,
                });
            }
        }
    }
    write_output(out, |w| write_lines(w, &rows))
}

// ---------------------------------------------------------------------------
// evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub protocol: String,
    pub value: Option<f64>,
    pub hpd_low: Option<f64>,
    pub hpd_high: Option<f64>,
    pub median: Option<f64>,
}

impl MetricRecord {
    fn scalar(metric: &str, protocol: ProtocolMode, value: f64) -> Self {
        Self {
            metric: metric.into(),
            protocol: protocol.to_string(),
            value: value.is_finite().then_some(value),
            hpd_low: None,
            hpd_high: None,
            median: None,
        }
    }

    /// `value` is the median of the per-snapshot values.
    fn summary(metric: &str, protocol: ProtocolMode, s: &MetricSummary) -> Self {
        Self {
            metric: metric.into(),
            protocol: protocol.to_string(),
            value: Some(s.median),
            hpd_low: Some(s.hpd.lower),
            hpd_high: Some(s.hpd.upper),
            median: Some(s.median),
        }
    }
}

/// One point of a ROC (`x` false-positive rate, `y` true-positive rate) or
/// ARI trace (`x` sweep, `y` ARI, with the number of revealed frames).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub curve: String,
    pub series: String,
    pub protocol: String,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
}

fn roc_points(series: &str, protocol: ProtocolMode, roc: &[(f64, f64)]) -> Vec<CurvePoint> {
    roc.iter()
        .map(|(x, y)| CurvePoint {
            curve: "roc".into(),
            series: series.into(),
            protocol: protocol.to_string(),
            x: *x,
            y: *y,
            frames: None,
        })
        .collect()
}

pub fn eval_unknown(train_path: &Path, test_path: &Path, fit_path: &Path, out: Option<&Path>) -> Result<()> {
    let train = read_manifest(train_path)?.data;
    let test = read_manifest(test_path)?.data;
    let fit = read_fit(fit_path)?;
    let hyper = fit.hyper(&train)?;
    fit.check_query(&test)?;
    let p = fit.header.protocol;
    let r = evaluate_unknown_detection(&train, &test, &hyper, &fit.samples.states())?;
    let metrics = vec![
        MetricRecord::summary("auc", p, &r.auc),
        MetricRecord::scalar("pooled_auc", p, r.pooled_auc),
        MetricRecord::scalar("nn_auc", p, r.nn_auc),
        MetricRecord::summary("accuracy", p, &r.accuracy),
        MetricRecord::scalar("pooled_accuracy", p, r.pooled_accuracy),
        MetricRecord::scalar("voting_accuracy", p, r.voting_accuracy),
        MetricRecord::scalar("snapshots", p, r.snapshots as f64),
    ];
    let mut curves = roc_points("model", p, &r.roc);
    curves.extend(roc_points("nn", p, &r.nn_roc));
    write_output(out, |w| {
        write_lines(w, &metrics)?;
        write_lines(w, &curves)
    })
}

pub fn eval_cluster(data_path: &Path, fit_path: &Path, out: Option<&Path>) -> Result<()> {
    let data = read_manifest(data_path)?.data;
    let fit = read_fit(fit_path)?;
    fit.hyper(&data)?;
    let p = fit.header.protocol;
    let r = evaluate_clustering(&data, &fit.samples, p, fit.header.model.context_model)?;
    let mut metrics = vec![
        MetricRecord::scalar("final_ari", p, r.median_final_ari),
        MetricRecord::scalar("final_ari_variance", p, r.final_ari_variance),
        MetricRecord::summary("snapshot_ari", p, &r.snapshot_ari),
    ];
    for (k, a) in r.final_ari.iter().enumerate() {
        metrics.push(MetricRecord::scalar(&format!("final_ari_chain{k}"), p, *a));
    }
    let curves: Vec<CurvePoint> = r
        .traces
        .iter()
        .enumerate()
        .flat_map(|(k, trace)| {
            trace.iter().map(move |t| CurvePoint {
                curve: "ari".into(),
                series: format!("chain{k}"),
                protocol: p.to_string(),
                x: t.sweep as f64,
                y: t.ari,
                frames: Some(t.frames),
            })
        })
        .collect();
    write_output(out, |w| {
        write_lines(w, &metrics)?;
        write_lines(w, &curves)
    })
}

fn group_records(method: &str, p: ProtocolMode, g: &GroupAccuracy) -> Vec<MetricRecord> {
    [
        ("acquainted", g.acquainted),
        ("familiar", g.familiar),
        ("strangers", g.strangers),
        ("unknown_groups", g.unknown_groups),
    ]
    .iter()
    .map(|(group, v)| MetricRecord::scalar(&format!("{method}_accuracy_{group}"), p, *v))
    .collect()
}

pub fn eval_label(train_path: &Path, test_path: &Path, fit_path: &Path, out: Option<&Path>) -> Result<()> {
    let train = read_manifest(train_path)?.data;
    let test = read_manifest(test_path)?.data;
    let fit = read_fit(fit_path)?;
    let hyper = fit.hyper(&train)?;
    fit.check_query(&test)?;
    let p = fit.header.protocol;
    let r = evaluate_labelling(&train, &test, &hyper, &fit.samples.states())?;
    let mut metrics = group_records("model", p, &r.model);
    metrics.extend(group_records("nn", p, &r.nn));
    metrics.extend(group_records("lp", p, &r.lp));
    metrics.push(MetricRecord::scalar(
        "labelled_observations",
        p,
        labelled_count(&train) as f64,
    ));
    write_output(out, |w| write_lines(w, &metrics))
}

fn labelled_count(data: &Dataset) -> usize {
    data.observations().iter().filter(|o| o.label.is_some()).count()
}
