//! Subcommand implementations. All artifacts are written atomically
//! (temp file + rename).

use crate::config::RunConfig;
use crate::data::{dataset_classes, load_dataset};
use binet_core::bitpack::{benchmark_conv, export_model, BenchReport, PackedModel};
use binet_core::dte::updatable_fraction;
use binet_core::error::{BinetError, Result};
use binet_core::imb::binary_entropy;
use binet_core::model::{
    evaluate, load_checkpoint, save_checkpoint, train, zoo_model, Dataset, MetricsRecord,
    Network,
};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub epochs: usize,
    pub final_test_accuracy: f64,
    pub records: Vec<MetricsRecord>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, test_set) = load_dataset(
        &cfg.dataset,
        cfg.data_path.as_deref(),
        cfg.synth_train,
        cfg.synth_test,
        cfg.seed,
        cfg.noise,
    )?;
    let classes = dataset_classes(&cfg.dataset);
    let spec = zoo_model(&cfg.model, train_set.sample_shape(), classes)?;
    let mut net = Network::new(spec, cfg.binarizer, cfg.seed)?;

    fs::create_dir_all(cfg.out_dir.join("checkpoints"))?;
    fs::create_dir_all(cfg.out_dir.join("report"))?;
    write_atomic(&cfg.out_dir.join("config.snapshot"), cfg.snapshot().as_bytes())?;

    let csv_tmp = cfg.out_dir.join("metrics.csv.tmp");
    let jsonl_tmp = cfg.out_dir.join("metrics.jsonl.tmp");
    let mut csv = fs::File::create(&csv_tmp)?;
    let mut jsonl = fs::File::create(&jsonl_tmp)?;

    let train_cfg = cfg.to_train_config();
    let every = cfg.checkpoint_every;
    let out_dir = cfg.out_dir.clone();
    let records = train(
        &mut net,
        &train_set,
        &test_set,
        &train_cfg,
        |epoch, net, opt, record| {
            if epoch == 0 {
                writeln!(csv, "{}", record.csv_header())?;
            }
            writeln!(csv, "{}", record.csv_row())?;
            let line = serde_json::to_string(record).map_err(|e| {
                BinetError::InvalidArgument(format!("metrics serialization: {e}"))
            })?;
            writeln!(jsonl, "{line}")?;
            if every > 0 && (epoch + 1) % every == 0 {
                let path = out_dir.join(format!("checkpoints/epoch_{}.bin", epoch + 1));
                save_checkpoint(&path, net, opt, epoch + 1)?;
            }
            Ok(())
        },
    )?;
    csv.flush()?;
    jsonl.flush()?;
    drop(csv);
    drop(jsonl);
    fs::rename(&csv_tmp, cfg.out_dir.join("metrics.csv"))?;
    fs::rename(&jsonl_tmp, cfg.out_dir.join("metrics.jsonl"))?;

    // final checkpoint always; rebuild the optimizer state via a fresh save
    // from the last callback is not possible here, so save with a zeroed
    // optimizer only if no per-epoch checkpoint captured it
    let final_path = cfg.out_dir.join(format!("checkpoints/epoch_{}.bin", cfg.epochs));
    if !final_path.exists() {
        let opt = binet_core::optim::SgdMomentum::new(
            cfg.momentum,
            cfg.weight_decay,
            &net.param_sizes(),
        );
        save_checkpoint(&final_path, &net, &opt, cfg.epochs)?;
    }

    let final_test_accuracy = records.last().map(|r| r.test_accuracy).unwrap_or(0.0);
    Ok(TrainOutcome {
        out_dir: cfg.out_dir.clone(),
        final_checkpoint: final_path,
        epochs: cfg.epochs,
        final_test_accuracy,
        records,
    })
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub accuracy: f64,
    pub loss: f64,
    pub samples: usize,
}

/// Evaluate either a training checkpoint (BCKP) or a packed model (BNET);
/// the file is dispatched on its magic.
pub fn cmd_eval(model_file: &Path, test_set: &Dataset, batch_size: usize) -> Result<EvalOutcome> {
    let bytes = fs::read(model_file)?;
    if bytes.len() < 4 {
        return Err(BinetError::FormatTruncated("model file shorter than magic".into()));
    }
    let (accuracy, loss) = match &bytes[..4] {
        b"BCKP" => {
            let ck = binet_core::model::deserialize_checkpoint(&bytes)?;
            let mut net = ck.network;
            evaluate(&mut net, test_set, batch_size)?
        }
        b"BNET" => {
            let packed = PackedModel::from_bytes(&bytes)?;
            packed.evaluate(test_set, batch_size)?
        }
        other => {
            return Err(BinetError::FormatMagic {
                expected: "BCKP|BNET".into(),
                found: String::from_utf8_lossy(other).into_owned(),
            })
        }
    };
    Ok(EvalOutcome { accuracy, loss, samples: test_set.len() })
}

/// Per-layer inspection CSV: entropy, p_plus, t, k, updatable fraction.
pub fn cmd_inspect(checkpoint: &Path, delta: f64) -> Result<String> {
    let ck = load_checkpoint(checkpoint)?;
    let net = ck.network;
    let mut out = String::from("layer,entropy,p_plus,t,k,updatable_fraction\n");
    for i in 0..net.bin_states.len() {
        let q = net.quantize_layer(i)?;
        let entropy = binary_entropy(&q.signs)?;
        let p_plus = q.signs.data().iter().filter(|&&x| x > 0.0).count() as f64
            / q.signs.numel() as f64;
        let basis = net.estimator_basis(i)?;
        let state = net.bin_states[i].estimator;
        let frac = updatable_fraction(&basis, &state, delta)?;
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            net.bin_states[i].name, entropy, p_plus, state.t, state.k, frac
        ));
    }
    Ok(out)
}

#[derive(Debug)]
pub struct ExportOutcome {
    pub packed_path: PathBuf,
    pub packed_bytes: usize,
    pub checkpoint_bytes: usize,
    pub size_ratio: f64,
}

pub fn cmd_export(checkpoint: &Path, out: &Path) -> Result<ExportOutcome> {
    let ck = load_checkpoint(checkpoint)?;
    let packed = export_model(&ck.network)?;
    packed.save(out)?;
    let packed_bytes = fs::metadata(out)?.len() as usize;
    let checkpoint_bytes = fs::metadata(checkpoint)?.len() as usize;
    Ok(ExportOutcome {
        packed_path: out.to_path_buf(),
        packed_bytes,
        checkpoint_bytes,
        size_ratio: packed_bytes as f64 / checkpoint_bytes as f64,
    })
}

/// Kernel benchmark over a geometry list; "in,out,k,h,w" per entry.
pub fn parse_geometry(s: &str) -> Result<(usize, usize, usize, usize, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 5 {
        return Err(BinetError::InvalidArgument(format!(
            "geometry {s:?}: expected in,out,kernel,h,w"
        )));
    }
    let parse = |p: &str| -> Result<usize> {
        p.trim()
            .parse()
            .map_err(|_| BinetError::InvalidArgument(format!("geometry part {p:?}")))
    };
    Ok((
        parse(parts[0])?,
        parse(parts[1])?,
        parse(parts[2])?,
        parse(parts[3])?,
        parse(parts[4])?,
    ))
}

pub fn cmd_bench(geometries: &[String], reps: usize) -> Result<Vec<BenchReport>> {
    if reps == 0 {
        return Err(BinetError::InvalidArgument("reps must be > 0".into()));
    }
    let mut reports = Vec::new();
    for g in geometries {
        let (in_ch, out_ch, k, h, w) = parse_geometry(g)?;
        reports.push(benchmark_conv(in_ch, out_ch, k, h, w, reps)?);
    }
    Ok(reports)
}
