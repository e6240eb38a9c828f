//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails or runs over its time budget.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use tuneplan_core::emit::{read_args, write_args};
use tuneplan_core::hardware::parse_layout;
use tuneplan_core::memory::{min_layouts, GpuLayout, MethodKind};
use tuneplan_core::planner::{recommend, validate, Priority, Requirements};
use tuneplan_core::registry::{resolve_model, SizeBucket};
use tuneplan_core::rope::{base_thetas, frequencies, score, RopeKind, RopeScalingSpec};
use tuneplan_core::telemetry::{read_since, summary_path, telemetry_path, JsonlSink, TelemetryRecord, TelemetrySink};
use tuneplan_core::traincore::{
    dequantize, grad_slices, lion_step, lomo_sgd_run, lora_forward, lora_merge, quantize_rtn, sgd_reference,
    AdamState, Batch, LionState, Optimizer, QuantBits, ToyModel, Trainable,
};

type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Expected cells, transcribed by hand as (device count, GiB) lists in
/// ascending device count. Columns: full16, lomo16, lora16, lora8, lora4.
fn table_oracle() -> Vec<(SizeBucket, [Vec<(u32, u64)>; 5])> {
    let one = |g| vec![(1, g)];
    let big = || vec![(2, 80), (4, 48), (8, 24)];
    vec![
        (SizeBucket::B1, [one(8), one(4), one(4), one(6), one(6)]),
        (SizeBucket::B7, [one(8), one(6), one(6), one(8), one(8)]),
        (SizeBucket::B13, [one(16), one(10), one(10), one(12), one(10)]),
        (SizeBucket::B33, [vec![(2, 48)], one(24), one(24), one(32), one(32)]),
        (
            SizeBucket::B70,
            [big(), vec![(1, 48), (2, 24)], vec![(1, 48), (2, 24)], vec![(1, 80), (2, 32)], vec![(1, 48), (2, 24)]],
        ),
        (SizeBucket::B130, [vec![(4, 80), (8, 48)], big(), big(), big(), big()]),
    ]
}

fn layout_pairs(ls: &[GpuLayout]) -> Vec<(u32, u64)> {
    ls.iter().map(|l| (l.count, l.per_device_mem / (1 << 30))).collect()
}

fn table_fidelity() -> Outcome {
    let mut cells = 0;
    for (bucket, row) in table_oracle() {
        for (method, want) in MethodKind::ALL.iter().zip(row) {
            let got = layout_pairs(&min_layouts(bucket, *method));
            ensure!(got == want, "{bucket} {method}: got {got:?}, want {want:?}");
            cells += 1;
        }
    }
    ensure!(cells == 30, "checked {cells} cells");
    Ok(())
}

fn running_case_req(train_here: bool) -> Requirements {
    Requirements {
        domain: "medical".into(),
        language: "en".into(),
        quality_vs_memory: Priority::QualityFirst,
        train_here,
        ..Requirements::default()
    }
}

fn running_case() -> Outcome {
    let plan = recommend(&running_case_req(true), &parse_layout("2x48 GB").unwrap()).map_err(|e| e.to_string())?;
    let model = resolve_model(&plan.config.model).map_err(|e| e.to_string())?;
    ensure!(model.bucket() == SizeBucket::B7, "picked {} in bucket {}", model.name, model.bucket());
    ensure!(model.family.starts_with("llama"), "picked family {}", model.family);
    ensure!(plan.verdict.feasible, "verdict infeasible for {}", plan.config.method);
    let report = validate(&plan.config);
    ensure!(report.is_empty(), "validate: {report}");
    Ok(())
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let d = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), normal_vec(rng, rows * cols)).unwrap()
}

fn rope_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for draw in 0..200 {
        let kind = RopeKind::ALL[draw % RopeKind::ALL.len()];
        let dim = 2 * rng.random_range(2..=64);
        let q = normal_vec(&mut rng, dim);
        let k = normal_vec(&mut rng, dim);
        let n = rng.random_range(0..2048);
        let m = n + rng.random_range(0..512);
        let shift = rng.random_range(0..4096);
        let seq_len = rng.random_range(1..8192);
        let spec = RopeScalingSpec::new(kind, dim, rng.random_range(1.0..8.0));
        let a = score(&q, &k, m, n, &spec, seq_len).map_err(|e| e.to_string())?;
        let b = score(&q, &k, m + shift, n + shift, &spec, seq_len).map_err(|e| e.to_string())?;
        ensure!((a - b).abs() <= 1e-9, "draw {draw} {kind}: {a} vs {b}");
    }

    for h in 2..=64 {
        let dim = 2 * h;
        for s in [1.5, 2.0, 4.0, 8.0, 16.0, 64.0] {
            let t = frequencies(&RopeScalingSpec::new(RopeKind::NtkV1, dim, s), 1)
                .map_err(|e| e.to_string())?
                .thetas;
            let plain = base_thetas(10_000.0, dim);
            ensure!(t[0] == plain[0], "theta_0 moved at dim {dim} scale {s}");
            let want = plain[h - 1] / s;
            ensure!((t[h - 1] - want).abs() <= 1e-12 * want, "last theta at dim {dim} scale {s}");
        }
    }

    let plain = RopeScalingSpec::new(RopeKind::None, 128, 1.0);
    let q = normal_vec(&mut rng, 128);
    let k = normal_vec(&mut rng, 128);
    for seq_len in (1..=2048).step_by(31).chain([2048]) {
        let base = frequencies(&plain, seq_len).map_err(|e| e.to_string())?;
        for kind in [RopeKind::DynamicLinear, RopeKind::DynamicNtk] {
            let spec = RopeScalingSpec::new(kind, 128, 4.0);
            let t = frequencies(&spec, seq_len).map_err(|e| e.to_string())?;
            let same = t.thetas.iter().zip(&base.thetas).all(|(x, y)| x.to_bits() == y.to_bits())
                && t.position_divisor.to_bits() == base.position_divisor.to_bits();
            ensure!(same, "{kind} table differs at seq_len {seq_len}");
            let (m, n) = (seq_len - 1, seq_len / 3);
            let a = score(&q, &k, m, n, &spec, seq_len).map_err(|e| e.to_string())?;
            let b = score(&q, &k, m, n, &plain, seq_len).map_err(|e| e.to_string())?;
            ensure!(a.to_bits() == b.to_bits(), "{kind} score differs at seq_len {seq_len}");
        }
    }
    Ok(())
}

fn rank(m: &Array2<f64>) -> usize {
    let (r, c) = m.dim();
    let dm = DMatrix::from_row_iterator(r, c, m.iter().copied());
    dm.singular_values().iter().filter(|&&s| s > 1e-9).count()
}

fn lora() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut base = ToyModel::new(&[10, 12, 6], &mut rng);
    let x = matrix(&mut rng, 4, 10);
    let before = base.forward(&x);
    base.add_adapters(&[0, 1], 4, 8.0, &mut rng);
    let after = base.forward(&x);
    ensure!(
        before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()),
        "zero-initialized adapters changed the forward pass"
    );

    for draw in 0..100 {
        let out = rng.random_range(2..32);
        let inp = rng.random_range(2..32);
        let r = rng.random_range(1..8);
        let alpha = rng.random_range(0.5..64.0);
        let w = matrix(&mut rng, out, inp);
        let a = matrix(&mut rng, r, inp);
        let b = matrix(&mut rng, out, r);
        let x = Array1::from_vec(normal_vec(&mut rng, inp));
        let zero = lora_forward(&w, &a, &Array2::zeros((out, r)), alpha, r, &x).map_err(|e| e.to_string())?;
        ensure!(zero == w.dot(&x), "draw {draw}: zero B is not exact");
        let y = lora_forward(&w, &a, &b, alpha, r, &x).map_err(|e| e.to_string())?;
        let merged = lora_merge(&w, &a, &b, alpha, r).map_err(|e| e.to_string())?.dot(&x);
        let worst = y.iter().zip(&merged).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        ensure!(worst <= 1e-10, "draw {draw}: merge differs by {worst:e}");
        let delta = lora_merge(&Array2::zeros((out, inp)), &a, &b, alpha, r).map_err(|e| e.to_string())?;
        let got = rank(&delta);
        ensure!(got <= r, "draw {draw}: rank {got} > {r}");
    }
    Ok(())
}

fn lomo() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let start = ToyModel::new(&[12, 16, 10, 6], &mut rng);
    ensure!(start.layers.len() == 3, "model has {} layers", start.layers.len());
    let batch = Batch {
        x: matrix(&mut rng, 5, 12),
        targets: vec![0, 5, 2, 2, 4],
    };
    let (mut fused, mut plain) = (start.clone(), start);
    for step in 0..100 {
        let f = lomo_sgd_run(&fused, &batch, 0.05).map_err(|e| e.to_string())?;
        let p = sgd_reference(&plain, &batch, 0.05).map_err(|e| e.to_string())?;
        ensure!(f.peak_live_grads == 1, "step {step}: fused peak {}", f.peak_live_grads);
        fused = f.model;
        plain = p.model;
    }
    for (i, (a, b)) in fused.layers.iter().zip(&plain.layers).enumerate() {
        let worst = (&a.w - &b.w).iter().chain((&a.b - &b.b).iter()).map(|d| d.abs()).fold(0.0, f64::max);
        ensure!(worst <= 1e-12, "layer {i} drifted by {worst:e}");
    }
    Ok(())
}

fn quantization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for t in 0..1000 {
        let len = rng.random_range(1..400);
        let group = rng.random_range(1..=128);
        let spread = 10f64.powi(rng.random_range(-3..4));
        let values: Vec<f64> = normal_vec(&mut rng, len).iter().map(|v| v * spread).collect();
        for bits in [QuantBits::Four, QuantBits::Eight] {
            let qt = quantize_rtn(&values, bits, group).map_err(|e| e.to_string())?;
            let scales = qt.scales();
            for (i, (v, d)) in values.iter().zip(dequantize(&qt)).enumerate() {
                let bound = scales[i / group] / 2.0;
                ensure!((v - d).abs() <= bound, "tensor {t} {bits:?} index {i}: |{v} - {d}| > {bound}");
            }
        }
    }
    let mut special = vec![0.0; 64];
    special.extend(vec![-3.75; 64]);
    special.extend(vec![1e-7; 64]);
    special.extend(vec![42.0; 7]);
    for bits in [QuantBits::Four, QuantBits::Eight] {
        let qt = quantize_rtn(&special, bits, 64).map_err(|e| e.to_string())?;
        ensure!(dequantize(&qt) == special, "{bits:?}: constant groups not exact");
    }
    Ok(())
}

fn optimizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for draw in 0..200 {
        let n = rng.random_range(1..40);
        let p = normal_vec(&mut rng, n);
        let g = normal_vec(&mut rng, n);
        let k = 10f64.powf(rng.random_range(-6.0..6.0));
        let scaled: Vec<f64> = g.iter().map(|v| v * k).collect();
        let st = LionState::new(&[n]);
        let (a, _) = lion_step(&[p.clone()], &[g], &st, 1e-3).map_err(|e| e.to_string())?;
        let (b, _) = lion_step(&[p], &[scaled], &st, 1e-3).map_err(|e| e.to_string())?;
        ensure!(a == b, "draw {draw}: update changed under scale {k}");
    }

    let sizes = [12, 7, 30];
    let lion = LionState::new(&sizes).state_buffers();
    let adam = AdamState::new(&sizes).state_buffers();
    ensure!(lion == 3 && adam == 6, "buffers lion {lion}, adam {adam} for 3 tensors");

    let mut model = ToyModel::new(&[6, 5, 4], &mut rng);
    model.add_adapters(&[0, 1], 2, 4.0, &mut rng);
    for p in model.adapters.values_mut() {
        p.b = matrix(&mut rng, p.b.nrows(), p.b.ncols()) * 0.3;
    }
    let batch = Batch {
        x: matrix(&mut rng, 3, 6),
        targets: vec![1, 3, 0],
    };
    let (_, grads) = model.gradients(&batch).map_err(|e| e.to_string())?;
    let h = 1e-5;
    for which in [Trainable::All, Trainable::Adapters] {
        let analytic: Vec<Vec<f64>> = grad_slices(&grads, which).iter().map(|g| g.to_vec()).collect();
        for (t, g) in analytic.iter().enumerate() {
            for (i, &a) in g.iter().enumerate() {
                let mut plus = model.clone();
                plus.tensors_mut(which)[t][i] += h;
                let mut minus = model.clone();
                minus.tensors_mut(which)[t][i] -= h;
                let numeric = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * h);
                let err = (numeric - a).abs();
                ensure!(
                    err <= 1e-5 * numeric.abs().max(a.abs()) || err <= 1e-10,
                    "{which:?} tensor {t}[{i}]: analytic {a} numeric {numeric}"
                );
            }
        }
    }
    Ok(())
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tuneplan"))
}

fn run_ok(cmd: &mut Command) -> Result<String, String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{cmd:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn dry_run(args: &Path, runs: &Path, id: &str) -> Result<(), String> {
    run_ok(bin().args(["train", "dry-run", "--steps", "200", "--run-id", id]).arg("--args").arg(args).arg("--runs-dir").arg(runs))
        .map(drop)
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("facts.jsonl");
    let lines: Vec<String> = (0..10)
        .map(|i| json!({"input": format!("Human: fact {i}?"), "output": format!(" Assistant: fact {i} is {}.", i * 7 + 3)}).to_string())
        .collect();
    fs::write(&data, lines.join("\n") + "\n").map_err(|e| e.to_string())?;

    let answers = [
        "medical",
        "en",
        "auto",
        "yes",
        data.to_str().unwrap(),
        "none",
        "auto",
        "auto",
        "20, 3e-3",
        "no",
    ];
    let out_dir = dir.path().join("out");
    let mut child = bin()
        .args(["wizard", "--gpus", "2x48 GB", "--out-dir"])
        .arg(&out_dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    {
        use std::io::Write;
        let mut stdin = child.stdin.take().unwrap();
        stdin.write_all((answers.join("\n") + "\n").as_bytes()).map_err(|e| e.to_string())?;
    }
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "wizard failed: {}", String::from_utf8_lossy(&out.stderr));
    let args = out_dir.join("ARGS.json");
    let cfg = read_args(&fs::read(&args).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(cfg.seed == 1234, "seed {}", cfg.seed);

    let runs = dir.path().join("runs");
    dry_run(&args, &runs, "a")?;
    dry_run(&args, &runs, "b")?;

    let summary: Value =
        serde_json::from_slice(&fs::read(summary_path(&runs, "a")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let ratio = summary["final_loss"].as_f64().unwrap() / summary["initial_loss"].as_f64().unwrap();
    ensure!(ratio < 0.2, "final/initial loss {ratio:.3}");

    let records = read_since(&telemetry_path(&runs, "a"), 0).map_err(|e| e.to_string())?;
    let steps: Vec<u64> = records.iter().map(|r| r.step).collect();
    ensure!(steps == (1..=200).collect::<Vec<_>>(), "telemetry steps are not 1..=200 without gaps");

    let a = fs::read(telemetry_path(&runs, "a")).map_err(|e| e.to_string())?;
    let b = fs::read(telemetry_path(&runs, "b")).map_err(|e| e.to_string())?;
    ensure!(a == b, "seed 1234 reruns differ");
    println!("      loss ratio {ratio:.3}, {} telemetry lines", records.len());
    Ok(())
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

fn golden(name: &str, actual: &str) -> Outcome {
    let expected = fs::read_to_string(golden_dir().join(name)).map_err(|e| format!("{name}: {e}"))?;
    ensure!(actual == expected, "{name} differs from its golden file");
    Ok(())
}

fn emission_goldens() -> Outcome {
    let inv = parse_layout("2x48 GB").unwrap();
    let plan = recommend(&running_case_req(true), &inv).map_err(|e| e.to_string())?;
    let text = write_args(&plan.config);
    golden("ARGS.json", &text)?;
    ensure!(read_args(text.as_bytes()).map_err(|e| e.to_string())? == plan.config, "ARGS.json round trip");
    let cmd = plan.launch.ok_or("no launch command")?;
    ensure!(cmd.starts_with("python -u -m deepspeed.launcher.launch --world_info="), "launch prefix");
    ensure!(cmd.contains("--seed 1234"), "launch lacks --seed 1234");
    golden("launch.txt", &format!("{cmd}\n"))?;

    let plan = recommend(&running_case_req(false), &inv).map_err(|e| e.to_string())?;
    let md = plan.readme.ok_or("no readme")?;
    for section in ["## Environment Configuration", "## Model Processing", "## Training"] {
        ensure!(md.contains(section), "readme lacks {section}");
    }
    golden("README.plan.md", &md)
}

mod service {
    use super::*;
    use axum::body::Body;
    use axum::http::{Request, StatusCode};
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    use tuneplan_serve::{router, GpuSource, ServeConfig};

    async fn send(cfg: &ServeConfig, req: Request<Body>) -> Result<(StatusCode, Vec<u8>), String> {
        let resp = router(cfg.clone()).oneshot(req).await.map_err(|e| e.to_string())?;
        let status = resp.status();
        let body = resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes();
        Ok((status, body.to_vec()))
    }

    fn sse_data(text: &str) -> Vec<(String, String)> {
        text.split("\n\n")
            .filter_map(|block| {
                let mut event = "message".to_string();
                let mut data = String::new();
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        event = v.trim().into();
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim());
                    }
                }
                (!data.is_empty()).then_some((event, data))
            })
            .collect()
    }

    async fn checks(dir: &Path) -> Outcome {
        let mut cfg = ServeConfig::new(GpuSource::Fixed(parse_layout("2x48 GB").unwrap()), dir);
        cfg.poll_interval = Duration::from_millis(5);

        let (status, body) = send(&cfg, Request::get("/feasibility").body(Body::empty()).unwrap()).await?;
        ensure!(status == StatusCode::OK, "/feasibility {status}");
        let m: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        for (r, (_, row)) in table_oracle().into_iter().enumerate() {
            for (c, want) in row.into_iter().enumerate() {
                let got: Vec<(u32, u64)> = m["rows"][r]["cells"][c]
                    .as_array()
                    .ok_or("missing cell")?
                    .iter()
                    .map(|l| (l["count"].as_u64().unwrap() as u32, l["per_device_mem"].as_u64().unwrap() >> 30))
                    .collect();
                ensure!(got == want, "/feasibility row {r} col {c}: {got:?}");
            }
        }

        let body = json!({
            "base": {"model": "Llama-33B", "method": "full16"},
            "gpus": "2x48 GB",
            "overrides": {"gpus": "24 GB"}
        });
        let req = Request::post("/whatif")
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        let (status, body) = send(&cfg, req).await?;
        ensure!(status == StatusCode::OK, "/whatif {status}: {}", String::from_utf8_lossy(&body));
        let v: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        ensure!(
            v["baseline"]["feasible"] == true && v["verdict"]["feasible"] == false && v["flipped"] == true,
            "/whatif did not flip: {v}"
        );

        let path = telemetry_path(dir, "live");
        let mut sink = JsonlSink::create(&path).map_err(|e| e.to_string())?;
        let runs = dir.to_path_buf();
        let writer = std::thread::spawn(move || {
            for step in 1..=400u64 {
                let r = TelemetryRecord { step, loss: 1.0 / step as f64, lr: 1e-3, tokens: step * 9 };
                sink.record(&r).unwrap();
                if step % 40 == 0 {
                    std::thread::sleep(Duration::from_millis(2));
                }
            }
            fs::write(summary_path(&runs, "live"), "{}").unwrap();
        });
        let stream = send(&cfg, Request::get("/runs/live/stream").body(Body::empty()).unwrap());
        let (status, body) = tokio::time::timeout(Duration::from_secs(8), stream)
            .await
            .map_err(|_| "stream did not end".to_string())??;
        writer.join().map_err(|_| "writer panicked".to_string())?;
        ensure!(status == StatusCode::OK, "/stream {status}");
        let events = sse_data(std::str::from_utf8(&body).map_err(|e| e.to_string())?);
        ensure!(events.last().map(|e| e.0.as_str()) == Some("end"), "stream lacks end event");
        let streamed: Vec<TelemetryRecord> = events[..events.len() - 1]
            .iter()
            .map(|(_, d)| serde_json::from_str(d).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let tail = read_since(&path, 0).map_err(|e| e.to_string())?;
        ensure!(streamed == tail, "streamed {} records, file tail has {}", streamed.len(), tail.len());
        Ok(())
    }

    pub fn run() -> Outcome {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        tokio::runtime::Runtime::new().map_err(|e| e.to_string())?.block_on(checks(dir.path()))
    }
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 10] = [
        ("table fidelity", 1, table_fidelity),
        ("running case", 1, running_case),
        ("rope suite", 5, rope_suite),
        ("lora", 5, lora),
        ("lomo", 5, lomo),
        ("quantization", 5, quantization),
        ("optimizer", 5, optimizer),
        ("end-to-end dry run", 60, end_to_end),
        ("emission goldens", 1, emission_goldens),
        ("service", 10, service::run),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let result = result.and_then(|()| {
            if took > Duration::from_secs(budget) {
                Err(format!("over the {budget} s budget"))
            } else {
                Ok(())
            }
        });
        match result {
            Ok(()) => println!("PASS  {name:<20} {:>8.1} ms  (budget {budget} s)", took.as_secs_f64() * 1e3),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<20} {:>8.1} ms  (budget {budget} s): {why}", took.as_secs_f64() * 1e3);
            }
        }
    }
    println!("{} of {} criteria passed", 10 - failed, 10);
    if failed > 0 {
        std::process::exit(1);
    }
}
