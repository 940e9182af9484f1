//! The release acceptance checks. Each prints one PASS or FAIL line with
//! its measurement and wall time; the process fails if any check does.

mod common;

use std::collections::BTreeSet;
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use chrono::{NaiveDate, NaiveDateTime};
use foamfed::acquisition::{
    poll_latest, verify_and_backfill, AcquisitionConfig, ImageRecord, Processor, Registry, Status, StoreEntry,
};
use foamfed::dataset::{partition, simulation_corpus, synth_generate, PartitionMode};
use foamfed::federation::{aggregate_fit, read_frame, ClientUpdate, Frame, Message, MessageType, ProtocolError, HEADER_LEN};
use foamfed::imaging::{component_areas, BinaryMask};
use foamfed::inference::InferenceConfig;
use foamfed::maskgen::{generate_mask, Branch, MaskGenConfig};
use foamfed::metrics::{dice, iou, pixel_accuracy, RoundMetrics};
use foamfed::model::{ModelParams, NamedTensor};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn metric_identity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        // Every tenth pair uses sparse masks so empty ones show up.
        let p = if i % 10 == 0 { 0.02 } else { rng.random_range(0.05..0.95) };
        let a = BinaryMask::from_fn(16, 16, |_, _| rng.random_bool(p));
        let b = BinaryMask::from_fn(16, 16, |_, _| rng.random_bool(p));
        let (d, j, acc) = (dice(&a, &b).unwrap(), iou(&a, &b).unwrap(), pixel_accuracy(&a, &b).unwrap());
        ensure([d, j, acc].iter().all(|v| (0.0..=1.0).contains(v)), || format!("pair {i}: metric outside [0, 1]"))?;
        worst = worst.max((d - 2.0 * j / (1.0 + j)).abs());
    }
    ensure(worst < 1e-12, || format!("max |Δ| = {worst:e}"))?;
    Ok(format!("1000 pairs, max |dice - 2iou/(1+iou)| = {worst:.1e}"))
}

fn gradient_check() -> Result<String, String> {
    let worst = (0..100u64)
        .map(|s| common::GradInstance::random(1000 + s).max_relative_error(1e-3))
        .fold(0.0, f64::max);
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("100 instances, max relative error {worst:.2e}"))
}

fn aggregation_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n_tensors = rng.random_range(1..5);
        let shapes: Vec<Vec<usize>> = (0..n_tensors)
            .map(|_| (0..rng.random_range(1..4)).map(|_| rng.random_range(1..6)).collect())
            .collect();
        let k = rng.random_range(1..=8);
        let updates: Vec<ClientUpdate> = (0..k)
            .map(|_| {
                let tensors = shapes
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let data = (0..s.iter().product()).map(|_| rng.random_range(-10.0f32..10.0)).collect();
                        NamedTensor::new(format!("layer{i}"), s.clone(), data).unwrap()
                    })
                    .collect();
                ClientUpdate {
                    params: ModelParams::new(tensors).unwrap(),
                    num_samples: rng.random_range(1..2000),
                    metrics: RoundMetrics::default(),
                }
            })
            .collect();
        let (agg, _) = aggregate_fit(1, &updates).map_err(|e| e.to_string())?.ok_or("no result")?;
        if k == 1 {
            let same = agg.tensors().iter().zip(updates[0].params.tensors()).all(|(a, b)| {
                a.name() == b.name() && a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            });
            ensure(same, || format!("case {case}: single client not bit-identical"))?;
        }
        // Oracle: the plain mean of every client's values repeated n_k times.
        let total: u64 = updates.iter().map(|u| u.num_samples).sum();
        for (ti, t) in agg.tensors().iter().enumerate() {
            for (j, &got) in t.data().iter().enumerate() {
                let mut acc = 0.0f64;
                for u in &updates {
                    let v = u.params.tensors()[ti].data()[j] as f64;
                    for _ in 0..u.num_samples {
                        acc += v;
                    }
                }
                worst = worst.max((got as f64 - acc / total as f64).abs());
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max |Δ| = {worst:e}"))?;
    Ok(format!("200 cases, max |Δ| = {worst:.1e}, single client bit-identical"))
}

fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

fn fl_equals_local() -> Result<String, String> {
    let dir = tempdir();
    let sim_dir = dir.path().join("sim");
    let local = dir.path().join("local.fp");
    let sim = common::foamfed(["--seed", "3", "simulate", "--clients", "1", "--rounds", "1", "--save-dir", &path_arg(&sim_dir)]);
    ensure(sim.status.success(), || format!("simulate failed: {}", String::from_utf8_lossy(&sim.stderr)))?;
    let train = common::foamfed(["--seed", "3", "train", "--output", &path_arg(&local)]);
    ensure(train.status.success(), || format!("train failed: {}", String::from_utf8_lossy(&train.stderr)))?;
    let a = std::fs::read(sim_dir.join("federated_round_1.fp")).map_err(|e| e.to_string())?;
    let b = std::fs::read(&local).map_err(|e| e.to_string())?;
    ensure(a == b, || "checkpoints differ".into())?;
    Ok(format!("{} checkpoint bytes identical", a.len()))
}

fn federated_trend() -> Result<String, String> {
    // Client A must hold only the low-noise source and client B only the
    // high-noise one.
    let (train, holdout) = simulation_corpus(200, 50, (64, 64), 0).map_err(|e| e.to_string())?;
    let sources: Vec<String> = train.iter().map(|s| s.source_id.clone()).collect();
    let parts = partition(train.len(), &sources, PartitionMode::BySource, 2, 0).map_err(|e| e.to_string())?;
    let client_sources: Vec<BTreeSet<&str>> = parts
        .assignments
        .values()
        .map(|idx| idx.iter().map(|&i| sources[i].as_str()).collect())
        .collect();
    ensure(
        client_sources == [BTreeSet::from(["synth-low"]), BTreeSet::from(["synth-high"])],
        || format!("client sources {client_sources:?}"),
    )?;
    ensure(holdout.len() == 50, || "held-out set is not 50 samples".into())?;

    let dir = tempdir();
    let out = common::foamfed(["simulate", "--clients", "2", "--rounds", "5", "--partition", "by-source", "--save-dir", &path_arg(dir.path())]);
    ensure(out.status.success(), || format!("simulate failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    let text = common::stdout(&out);
    let losses: Vec<f64> = text
        .lines()
        .skip_while(|l| !l.starts_with("round,"))
        .skip(1)
        .take_while(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    ensure(losses.len() == 5, || format!("{} rounds reported", losses.len()))?;
    let rises: Vec<f64> = losses.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    ensure(rises.len() <= 1 && rises.iter().all(|&d| d < 0.01), || format!("loss {losses:?}"))?;
    let holdout_dice: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("holdout "))
        .and_then(|l| l.split_whitespace().find_map(|kv| kv.strip_prefix("dice=")))
        .ok_or("no held-out metrics")?
        .parse()
        .map_err(|e| format!("{e}"))?;
    ensure(holdout_dice >= 0.80, || format!("held-out dice {holdout_dice:.4}"))?;
    let trail: Vec<String> = losses.iter().map(|l| format!("{l:.4}")).collect();
    Ok(format!("loss {}, held-out dice {holdout_dice:.4}", trail.join(" > ")))
}

fn maskgen_goldens() -> Result<String, String> {
    let cfg = MaskGenConfig::default();
    let fixtures = common::maskgen_fixtures();
    let (mut day, mut night, mut min_area) = (0, 0, usize::MAX);
    for ((name, img), &(_, is_night, pixels, _)) in fixtures.iter().zip(&common::MASKGEN_GOLDEN) {
        let r = generate_mask(img, &cfg).map_err(|e| e.to_string())?;
        ensure((r.branch == Branch::Night) == is_night, || format!("{name}: wrong branch"))?;
        ensure(common::fnv1a(r.mask.data()) == pixels, || format!("{name}: mask differs from golden"))?;
        match r.branch {
            Branch::Day => day += 1,
            Branch::Night => night += 1,
        }
        min_area = component_areas(&r.mask).into_iter().fold(min_area, usize::min);
    }
    ensure((day, night) == (5, 5), || format!("{day} day / {night} night fixtures"))?;
    ensure(min_area >= cfg.min_area, || format!("component of {min_area} px"))?;
    let (a, b) = (tempdir(), tempdir());
    let first = common::maskgen_pngs(a.path());
    ensure(first == common::maskgen_pngs(b.path()), || "PNG bytes differ between runs".into())?;
    for ((name, bytes), &(_, _, _, png)) in first.iter().zip(&common::MASKGEN_GOLDEN) {
        ensure(common::fnv1a(bytes) == png, || format!("{name}: PNG differs from golden"))?;
    }
    Ok(format!("10 fixtures (5 day, 5 night) match goldens, smallest component {min_area} px"))
}

fn inference_contract() -> Result<String, String> {
    let dir = tempdir();
    let params = common::trained_params(8);
    let cfg = InferenceConfig::default();
    let fixtures = common::inference_fixtures();
    for (stem, img) in &fixtures {
        common::check_inference_contract(img, &params, &cfg, dir.path(), stem)?;
    }
    Ok(format!("{} fixtures", fixtures.len()))
}

fn protocol_robustness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let max = 1u64 << 24;
    for i in 0..1000 {
        let msg = common::random_message(&mut rng);
        let bytes = msg.encode().map_err(|e| e.to_string())?;
        let (frame, used) = Frame::decode(&bytes, max).map_err(|e| format!("frame {i}: {e}"))?;
        ensure(used == bytes.len() && Message::from_frame(&frame).ok() == Some(msg), || format!("frame {i} did not round-trip"))?;
        let raw = Frame {
            msg_type: *MessageType::ALL.choose(&mut rng).unwrap(),
            payload: (0..rng.random_range(0..64)).map(|_| rng.random()).collect(),
        };
        ensure(Frame::decode(&raw.encode(), max).ok().map(|f| f.0) == Some(raw), || format!("raw frame {i} did not round-trip"))?;

        let cut = rng.random_range(0..bytes.len());
        let mut bad_magic = bytes.clone();
        bad_magic[rng.random_range(0..4)] ^= 0x20;
        let mut oversized = bytes.clone();
        oversized[5..HEADER_LEN].copy_from_slice(&(max + 1 + rng.random_range(0..1u64 << 40)).to_be_bytes());
        let cases: [(&[u8], fn(&ProtocolError) -> bool); 3] = [
            (&bytes[..cut], |e| matches!(e, ProtocolError::Truncated { .. } | ProtocolError::Closed)),
            (&bad_magic, |e| matches!(e, ProtocolError::BadMagic(_))),
            (&oversized, |e| matches!(e, ProtocolError::PayloadTooLarge { .. })),
        ];
        for (k, (input, expected)) in cases.iter().enumerate() {
            let decoded = catch_unwind(|| Frame::decode(input, max).map(|_| ()));
            let streamed = catch_unwind(|| read_frame(&mut Cursor::new(input), max).map(|_| ()));
            for r in [decoded, streamed] {
                match r {
                    Err(_) => return Err(format!("frame {i} case {k}: panic")),
                    Ok(Ok(())) => return Err(format!("frame {i} case {k}: accepted")),
                    Ok(Err(e)) if !expected(&e) => return Err(format!("frame {i} case {k}: unexpected {e}")),
                    Ok(Err(_)) => {}
                }
            }
        }
    }
    let dir = tempdir();
    let run = common::run_with_dropout(dir.path(), 2);
    for r in &run.log.rounds {
        ensure(r.clients == run.stayed, || format!("round {} aggregated {:?}", r.round, r.clients))?;
    }
    Ok("1000 frames round-trip, 3000 malformed frames rejected, 2 rounds completed without the dropped client".into())
}

fn registry_recovery() -> Result<String, String> {
    let dir = tempdir();
    let root = dir.path().join("store");
    let pairs = synth_generate(50, (64, 64), 21).map_err(|e| e.to_string())?;
    let times = common::minute_series("2024-05-10 06:00:00", 50);
    let names = common::write_store(&root, &pairs, &times);
    let model = common::write_checkpoint(dir.path(), 4);
    let cfg = AcquisitionConfig::new(&root, dir.path().join("registry.csv"), model);
    let store = cfg.store();
    let proc = Processor::load(&cfg).map_err(|e| e.to_string())?;
    {
        let mut reg = Registry::open(&cfg.registry_path).map_err(|e| e.to_string())?;
        let first = verify_and_backfill(&store, &mut reg, &proc).map_err(|e| e.to_string())?;
        ensure(first == names, || format!("initial sweep recovered {} of 50", first.len()))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ks = Vec::new();
    for _ in 0..3 {
        let k = rng.random_range(1..=12);
        let mut gone: Vec<String> = names.choose_multiple(&mut rng, k).cloned().collect();
        common::delete_registry_rows(&cfg.registry_path, &gone);
        let mut reg = Registry::open(&cfg.registry_path).map_err(|e| e.to_string())?;
        let recovered = verify_and_backfill(&store, &mut reg, &proc).map_err(|e| e.to_string())?;
        gone.sort();
        ensure(recovered == gone, || format!("deleted {gone:?}, recovered {recovered:?}"))?;
        ensure(reg.len() == 50, || format!("{} rows after recovery", reg.len()))?;
        ks.push(k.to_string());
    }

    let day = NaiveDate::from_ymd_opt(2024, 5, 10).unwrap();
    for trial in 0..100 {
        let n = rng.random_range(0..30);
        let mut seen = BTreeSet::new();
        let entries: Vec<StoreEntry> = (0..n)
            .filter_map(|i| {
                // Coarse times and two days so ties and other-day files occur.
                let d = if rng.random_bool(0.8) { day } else { day.succ_opt().unwrap() };
                let t = d.and_hms_opt(rng.random_range(0..3), rng.random_range(0..2) * 30, 0).unwrap();
                let name = format!("{}_{i}.png", ["north", "south", "east"][rng.random_range(0..3)]);
                seen.insert(name.clone()).then_some(StoreEntry { captured_at: t, name })
            })
            .collect();
        let reg_path = dir.path().join(format!("poll_{trial}.csv"));
        let mut reg = Registry::open(&reg_path).map_err(|e| e.to_string())?;
        for e in entries.iter().filter(|_| rng.random_bool(0.4)) {
            reg.append(registered(e)).map_err(|e| e.to_string())?;
        }
        let expected = entries
            .iter()
            .filter(|e| e.captured_at.date() == day && !reg.contains(&e.name))
            .max_by(|a, b| a.captured_at.cmp(&b.captured_at).then(a.name.cmp(&b.name)))
            .map(|e| e.name.clone());
        let got = poll_latest(&common::MemStore(entries), &reg, day).map_err(|e| e.to_string())?;
        ensure(got == expected, || format!("listing {trial}: got {got:?}, expected {expected:?}"))?;
    }
    Ok(format!("deleted k = {} rows, each recovered exactly; 100 listings polled correctly", ks.join(", ")))
}

fn registered(e: &StoreEntry) -> ImageRecord {
    ImageRecord {
        name: e.name.clone(),
        captured_at: e.captured_at,
        processed_at: NaiveDateTime::default(),
        foam_pct: Some(1.0),
        mask_path: None,
        status: Status::Ok,
        error: None,
    }
}

fn monitor_end_to_end() -> Result<String, String> {
    let dir = tempdir();
    let root = dir.path().join("store");
    let pairs = synth_generate(20, (96, 96), 33).map_err(|e| e.to_string())?;
    let mut times = common::minute_series("2024-07-01 23:50:00", 20);
    times.rotate_left(7);
    common::write_store(&root, &pairs, &times);
    let model = common::write_checkpoint(dir.path(), 6);
    let registry = dir.path().join("site/registry.csv");
    let args = [
        "monitor".to_string(),
        "--store".into(),
        path_arg(&root),
        "--registry".into(),
        path_arg(&registry),
        "--model".into(),
        path_arg(&model),
        "--verify".into(),
    ];
    let out = common::foamfed(args.clone());
    ensure(out.status.success(), || format!("monitor failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    let rows = |path: &Path| std::fs::read_to_string(path).map(|t| t.lines().count() - 1).unwrap_or(0);
    let reg = Registry::open(&registry).map_err(|e| e.to_string())?;
    let ok = reg.records().iter().filter(|r| r.status == Status::Ok).count();
    ensure(ok == 20 && reg.len() == 20, || format!("{ok} OK rows of {}", reg.len()))?;
    let masks = std::fs::read_dir(dir.path().join("site/masks")).map_err(|e| e.to_string())?.count();
    ensure(masks == 20, || format!("{masks} mask files"))?;
    drop(reg);
    let before = rows(&registry);
    let again = common::foamfed(args);
    ensure(again.status.success(), || "second run failed".into())?;
    let added = rows(&registry) - before;
    ensure(added == 0, || format!("re-run added {added} rows"))?;
    Ok("20 OK rows, 20 masks, re-run added 0 rows".into())
}

fn main() {
    let checks: [(&str, Duration, Check); 10] = [
        ("metric identity", Duration::from_secs(5), metric_identity),
        ("gradient check", Duration::from_secs(30), gradient_check),
        ("aggregation oracle", Duration::from_secs(10), aggregation_oracle),
        ("federated equals local", Duration::from_secs(120), fl_equals_local),
        ("federated trend", Duration::from_secs(600), federated_trend),
        ("mask generator goldens", Duration::from_secs(10), maskgen_goldens),
        ("inference contract", Duration::from_secs(30), inference_contract),
        ("protocol robustness", Duration::from_secs(60), protocol_robustness),
        ("registry recovery", Duration::from_secs(30), registry_recovery),
        ("monitor end to end", Duration::from_secs(120), monitor_end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took longer than {budget:?}"))
            }
        });
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} [{:.2}s]", i + 1, elapsed.as_secs_f64());
    }
    println!("acceptance: {} of 10 passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
