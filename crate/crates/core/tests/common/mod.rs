#![allow(dead_code)]

use std::path::Path;

use chrono::NaiveDateTime;
use foamfed::dataset::{synth_generate, SamplePair};
use foamfed::imaging::{save_png, Image};
use foamfed::model::{save_checkpoint, train_local, ModelParams, ReferenceModel, SegmentationModel, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Water with a gentle ripple, pixel noise and a few bright dome-shaped
/// patches. `level` sets the water brightness.
pub fn foam_frame(w: usize, h: usize, level: u8, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(4..8);
    let domes = random_domes(&mut rng, w, h, count);
    let noise: Vec<f64> = (0..w * h).map(|_| rng.random_range(-6.0..=6.0)).collect();
    let amp = (245.0 - level as f64).min(110.0);
    Image::from_fn_rgb(w, h, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let ripple = 5.0 * (fx / 9.0).sin() * (fy / 13.0).cos();
        let v = level as f64 + ripple + noise[y * w + x] + amp * dome_height(&domes, fx, fy);
        let v = v.round().clamp(0.0, 255.0) as u8;
        [v.saturating_sub(8), v, v.saturating_add(6)]
    })
}

/// `(cx, cy, rx, ry)` for `n` patches.
fn random_domes(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> Vec<(f64, f64, f64, f64)> {
    (0..n)
        .map(|_| {
            (
                rng.random_range(0.1..0.9) * w as f64,
                rng.random_range(0.1..0.9) * h as f64,
                rng.random_range(3.5..7.0),
                rng.random_range(3.5..7.0),
            )
        })
        .collect()
}

fn dome_height(domes: &[(f64, f64, f64, f64)], x: f64, y: f64) -> f64 {
    domes
        .iter()
        .map(|&(cx, cy, rx, ry)| {
            let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
            (-(dx * dx + dy * dy) / 2.0).exp()
        })
        .fold(0.0, f64::max)
}

/// Gray frame whose mean brightness is exactly `mean`: every offset at
/// raster index `i` is mirrored by the negated offset at `n - 1 - i`.
pub fn exact_mean_frame(w: usize, h: usize, mean: u8, seed: u64) -> Image {
    assert!((w * h) % 2 == 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = w * h;
    let domes: Vec<_> = random_domes(&mut rng, w, h / 2, 5);
    let mut offset = vec![0i32; n];
    for i in 0..n / 2 {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let o = (90.0 * dome_height(&domes, x, y)).round() as i32 + rng.random_range(-5..=5);
        offset[i] = o;
        offset[n - 1 - i] = -o;
    }
    let data = offset
        .iter()
        .flat_map(|&o| {
            let v = (mean as i32 + o) as u8;
            [v, v, v]
        })
        .collect();
    Image::new(w, h, 3, data).unwrap()
}

/// Ten mask-generator fixtures: four bright, four dark, and a pair whose
/// brightness sits exactly at 99 and 100.
pub fn maskgen_fixtures() -> Vec<(String, Image)> {
    let mut out = Vec::new();
    for (i, level) in [120u8, 135, 150, 170].into_iter().enumerate() {
        out.push((format!("day_{i}"), foam_frame(96, 80, level, 100 + i as u64)));
    }
    for (i, level) in [25u8, 40, 55, 70].into_iter().enumerate() {
        out.push((format!("night_{i}"), foam_frame(96, 80, level, 200 + i as u64)));
    }
    out.push(("edge_b99".into(), exact_mean_frame(96, 80, 99, 7)));
    out.push(("edge_b100".into(), exact_mean_frame(96, 80, 100, 7)));
    out
}

/// Reference-model parameters trained briefly on generated data.
pub fn trained_params(seed: u64) -> ModelParams {
    let data = synth_generate(48, (64, 64), seed).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        steps_per_epoch: 5,
        batch_size: 16,
        lr: 0.05,
        seed,
        ..TrainConfig::default()
    };
    train_local(&ReferenceModel, &ReferenceModel.init_params(), &data, &cfg).unwrap().0
}

pub fn write_checkpoint(dir: &Path, seed: u64) -> std::path::PathBuf {
    let path = dir.join("model.fp");
    save_checkpoint(&trained_params(seed), &path).unwrap();
    path
}

pub fn frame_name(t: NaiveDateTime) -> String {
    format!("cam_{}.png", t.format("%Y%m%d_%H%M%S"))
}

/// Writes `pairs` as frames captured at `times` into `root/YYYYMMDD/`.
pub fn write_store(root: &Path, pairs: &[SamplePair], times: &[NaiveDateTime]) -> Vec<String> {
    pairs
        .iter()
        .zip(times)
        .map(|(p, &t)| {
            let name = frame_name(t);
            let dir = root.join(t.format("%Y%m%d").to_string());
            std::fs::create_dir_all(&dir).unwrap();
            save_png(&p.image, &dir.join(&name)).unwrap();
            name
        })
        .collect()
}

/// `n` capture times one minute apart starting at `start`.
pub fn minute_series(start: &str, n: usize) -> Vec<NaiveDateTime> {
    let t0 = NaiveDateTime::parse_from_str(start, "%Y-%m-%d %H:%M:%S").unwrap();
    (0..n).map(|i| t0 + chrono::Duration::minutes(i as i64)).collect()
}

pub const REL_FLOOR: f64 = 1e-4;

/// A small random batch for gradient checks.
pub struct GradInstance {
    pub params: ModelParams,
    pub features: Vec<foamfed::model::FeatureStack>,
    pub masks: Vec<foamfed::imaging::BinaryMask>,
    pub targets: Vec<f64>,
    pub loss: foamfed::metrics::LossConfig,
}

impl GradInstance {
    pub fn random(seed: u64) -> Self {
        use foamfed::model::{reference_params, FeatureStack, NUM_FEATURES};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arr = |rng: &mut ChaCha8Rng| std::array::from_fn::<f32, NUM_FEATURES, _>(|_| rng.random_range(-1.0..1.0));
        let w = arr(&mut rng);
        let ws = arr(&mut rng);
        let params = reference_params(w, rng.random_range(-1.0..1.0), ws, rng.random_range(-1.0..1.0));
        let (fw, fh) = (rng.random_range(2..6), rng.random_range(2..6));
        let m = rng.random_range(1..4);
        let features = (0..m)
            .map(|_| FeatureStack {
                width: fw,
                height: fh,
                data: (0..fw * fh * NUM_FEATURES).map(|_| rng.random::<f32>()).collect(),
            })
            .collect();
        let masks = (0..m)
            .map(|_| foamfed::imaging::BinaryMask::from_fn(fw, fh, |_, _| rng.random_bool(0.4)))
            .collect();
        let targets = (0..m).map(|_| rng.random::<f64>()).collect();
        let loss = foamfed::metrics::LossConfig {
            alpha: rng.random(),
            score_weight: rng.random(),
        };
        Self { params, features, masks, targets, loss }
    }

    pub fn batch(&self) -> Vec<foamfed::model::TrainExample<'_>> {
        self.features
            .iter()
            .zip(&self.masks)
            .zip(&self.targets)
            .map(|((features, gt), &iou_target)| foamfed::model::TrainExample { features, gt, iou_target })
            .collect()
    }

    /// Largest relative gap between the analytic gradient and central
    /// differences with step `h`. The step actually taken in f32 is used as
    /// the denominator, and gaps are measured relative to at least
    /// `REL_FLOOR` so that O(h²) truncation on near-zero components does
    /// not dominate.
    pub fn max_relative_error(&self, h: f32) -> f64 {
        let model = ReferenceModel;
        let batch = self.batch();
        let grad = foamfed::model::gradient(&self.params, &batch, &self.loss).unwrap();
        let mut worst = 0.0f64;
        for (ti, t) in self.params.tensors().iter().enumerate() {
            for k in 0..t.len() {
                let theta = t.data()[k];
                let eval = |v: f32| {
                    let mut p = self.params.clone();
                    p.tensors_mut()[ti].data_mut()[k] = v;
                    model.loss(&p, &batch, &self.loss).unwrap()
                };
                let (up, down) = (theta + h, theta - h);
                let fd = (eval(up) - eval(down)) / (up as f64 - down as f64);
                let a = grad.tensors()[ti].data()[k] as f64;
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR);
                worst = worst.max(rel);
            }
        }
        worst
    }
}

/// A client that joins, receives its first fit instruction and hangs up.
pub fn deserter(addr: std::net::SocketAddr, name: &str) {
    use foamfed::federation::{recv_message, send_message, Message, DEFAULT_MAX_PAYLOAD};
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    send_message(&mut s, &Message::JoinRequest { name: name.into() }).unwrap();
    assert!(matches!(recv_message(&mut s, DEFAULT_MAX_PAYLOAD).unwrap(), Message::JoinAck { .. }));
    assert!(matches!(
        recv_message(&mut s, DEFAULT_MAX_PAYLOAD).unwrap(),
        Message::FitInstruction { round: 1, .. }
    ));
}

pub struct DropoutRun {
    pub log: foamfed::federation::TrainingLog,
    /// Join ids of the clients that stayed.
    pub stayed: Vec<u32>,
    pub outcomes: Vec<foamfed::federation::ClientOutcome>,
}

/// Three clients join; the second one disconnects during round 1. The
/// server needs two updates per round.
pub fn run_with_dropout(save_dir: &Path, rounds: u32) -> DropoutRun {
    use foamfed::federation::{client_run, ClientConfig, Server, ServerConfig};
    let server = Server::bind(ServerConfig {
        rounds,
        min_fit: 2,
        min_eval: 2,
        min_available: 3,
        save_dir: save_dir.to_path_buf(),
        listen: "127.0.0.1:0".into(),
        train: TrainConfig {
            epochs: 1,
            steps_per_epoch: 2,
            batch_size: 4,
            lr: 0.05,
            ..TrainConfig::default()
        },
        eval_samples: 4,
        round_timeout: std::time::Duration::from_secs(60),
        join_timeout: Some(std::time::Duration::from_secs(60)),
        ..ServerConfig::default()
    })
    .unwrap();
    let handle = server.handle();
    let addr = handle.local_addr();
    let wait_joined = |n: u32| {
        while handle.joined() < n {
            std::thread::sleep(std::time::Duration::from_millis(5));
        }
    };
    std::thread::scope(|s| {
        let srv = s.spawn(move || server.run());
        let data_a = synth_generate(8, (32, 32), 1).unwrap();
        let data_c = synth_generate(6, (32, 32), 2).unwrap();
        let a = s.spawn(move || client_run(&ReferenceModel, &ClientConfig::new(addr.to_string(), "a"), &data_a));
        wait_joined(1);
        let b = s.spawn(move || deserter(addr, "b"));
        wait_joined(2);
        let c = s.spawn(move || client_run(&ReferenceModel, &ClientConfig::new(addr.to_string(), "c"), &data_c));
        b.join().unwrap();
        let log = srv.join().unwrap().unwrap();
        let outcomes = vec![a.join().unwrap().unwrap(), c.join().unwrap().unwrap()];
        DropoutRun {
            log,
            stayed: vec![0, 2],
            outcomes,
        }
    })
}

/// Rewrites a registry file without the rows for `names`.
pub fn delete_registry_rows(path: &Path, names: &[String]) {
    let text = std::fs::read_to_string(path).unwrap();
    let kept: String = text
        .lines()
        .filter(|l| !names.iter().any(|n| l.split(',').next() == Some(n.as_str())))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(path, kept).unwrap();
}

/// In-memory store for listing tests; fetching is not supported.
pub struct MemStore(pub Vec<foamfed::acquisition::StoreEntry>);

impl foamfed::acquisition::ImageStore for MemStore {
    fn list(&self, day: chrono::NaiveDate) -> foamfed::Result<Vec<foamfed::acquisition::StoreEntry>> {
        Ok(self.0.iter().filter(|e| e.captured_at.date() == day).cloned().collect())
    }

    fn list_all(&self) -> foamfed::Result<Vec<foamfed::acquisition::StoreEntry>> {
        Ok(self.0.clone())
    }

    fn fetch(&self, name: &str) -> foamfed::Result<Vec<u8>> {
        Err(foamfed::Error::InvalidArgument(format!("{name}: not fetchable")))
    }

    fn timestamp(&self, name: &str) -> Option<NaiveDateTime> {
        self.0.iter().find(|e| e.name == name).map(|e| e.captured_at)
    }
}

/// Expected `(fixture, branch is night, FNV-1a of mask pixels, FNV-1a of
/// mask PNG bytes)` under the default mask-generator settings.
pub const MASKGEN_GOLDEN: [(&str, bool, u64, u64); 10] = [
    ("day_0", false, 0x4f62318474e49d4a, 0x021feed0d0ebe519),
    ("day_1", false, 0xaf77fa6d85bff55c, 0x5654ee2581c84831),
    ("day_2", false, 0x2482734bfb36de29, 0x4187e2a8f6d9cce6),
    ("day_3", false, 0x1f0d9abb90aade6a, 0x09159c003f22e597),
    ("night_0", true, 0x961f2dd8855b76db, 0xa196b79f5c1009e8),
    ("night_1", true, 0x3df4ccc164dbbb5c, 0x5f177ef3ebe54410),
    ("night_2", true, 0xc5c86966fe15e299, 0xf9bd396f0ee46922),
    ("night_3", true, 0x9bc920073975fb7a, 0x340c19df06b67e06),
    ("edge_b99", true, 0x8d5a6670d3493647, 0x7990817e071ea996),
    ("edge_b100", false, 0x17656565f9ebfbf4, 0xbf44876e62ea473b),
];

/// Mask PNG bytes for every fixture, via the directory pipeline.
pub fn maskgen_pngs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    use foamfed::maskgen::{process_directory, MaskGenConfig};
    let input = dir.join("in");
    let output = dir.join("out");
    std::fs::create_dir_all(&input).unwrap();
    for (name, img) in maskgen_fixtures() {
        save_png(&img, &input.join(format!("{name}.png"))).unwrap();
    }
    process_directory(&input, &output, &MaskGenConfig::default()).unwrap();
    maskgen_fixtures()
        .into_iter()
        .map(|(name, _)| {
            let bytes = std::fs::read(output.join(format!("{name}_mask.png"))).unwrap();
            (name, bytes)
        })
        .collect()
}

/// Checks one frame against the inference output contract and returns the
/// reported foam percentage.
pub fn check_inference_contract(
    img: &Image,
    params: &ModelParams,
    cfg: &foamfed::inference::InferenceConfig,
    dir: &Path,
    stem: &str,
) -> std::result::Result<f64, String> {
    use foamfed::imaging::{bilateral_filter, component_areas, denoise_nlmeans, load_mask, resize, to_grayscale, BinaryMask, ResizeTarget};
    use foamfed::inference::{foam_percentage, generate_grid_points, infer_file, predict_candidates, refine_masks, segment_foam};
    use foamfed::model::BaseFeatures;

    let working = resize(img, ResizeTarget::MaxDim(cfg.max_dim));
    let (w, h) = (working.width(), working.height());
    let gray = to_grayscale(&working).unwrap();
    let smooth = bilateral_filter(&gray, cfg.bilateral_diameter, cfg.bilateral_sigma_color, cfg.bilateral_sigma_space).unwrap();
    let clean = denoise_nlmeans(&smooth, cfg.nlmeans_h, cfg.nlmeans_template, cfg.nlmeans_search).unwrap();
    let base = BaseFeatures::from_gray(&clean);
    let cands = predict_candidates(&ReferenceModel, params, &base, &generate_grid_points(w, h, cfg.n_points)).unwrap();
    let mut union = BinaryMask::zeros(w, h);
    for c in &cands {
        union.union_in_place(&c.mask);
    }
    let refined = refine_masks(&cands, cfg.overlap_threshold).unwrap().unwrap_or_else(|| BinaryMask::zeros(w, h));
    if !refined.is_subset_of(&union) {
        return Err(format!("{stem}: refined mask leaves the candidate union"));
    }

    let seg = segment_foam(img, params, cfg).unwrap();
    if seg.accepted_area != refined.count() {
        return Err(format!("{stem}: pipeline stages disagree"));
    }
    let min_area = cfg.min_area(w, h);
    if let Some(a) = component_areas(&seg.mask).into_iter().find(|&a| a < min_area) {
        return Err(format!("{stem}: component of {a} px below {min_area}"));
    }

    let path = dir.join(format!("{stem}.png"));
    save_png(img, &path).unwrap();
    let rec = infer_file(&path, params, cfg, dir).unwrap();
    let reread = foam_percentage(&load_mask(&rec.mask_path).unwrap()).unwrap();
    if reread != rec.foam_pct || rec.foam_pct != seg.foam_pct {
        return Err(format!("{stem}: reported {} but saved mask gives {reread}", rec.foam_pct));
    }
    Ok(rec.foam_pct)
}

/// Frames for inference checks: the mask-generator fixtures plus generated
/// frames from both noise levels.
pub fn inference_fixtures() -> Vec<(String, Image)> {
    use foamfed::dataset::{synth_generate_with, SynthConfig};
    let mut out = maskgen_fixtures();
    for (tag, cfg) in [("low", SynthConfig::low_noise()), ("high", SynthConfig::high_noise())] {
        for (i, p) in synth_generate_with(2, (112, 84), 31, &cfg).unwrap().into_iter().enumerate() {
            out.push((format!("synth_{tag}_{i}"), p.image));
        }
    }
    out
}

/// Runs the command-line tool quietly.
pub fn foamfed<I, S>(args: I) -> std::process::Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    std::process::Command::new(env!("CARGO_BIN_EXE_foamfed"))
        .arg("--log-level")
        .arg("error")
        .args(args)
        .output()
        .unwrap()
}

pub fn stdout(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    use foamfed::model::NamedTensor;
    let n = rng.random_range(0..4);
    let tensors = (0..n)
        .map(|i| {
            let rank = rng.random_range(0..3);
            let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..5)).collect();
            let len = shape.iter().product();
            let data = (0..len).map(|_| f32::from_bits(rng.random::<u32>() & 0xbfff_ffff)).collect();
            NamedTensor::new(format!("t{i}_{}", "é".repeat(rng.random_range(0..3))), shape, data).unwrap()
        })
        .collect();
    ModelParams::new(tensors).unwrap()
}

/// Any message with random contents. Floats avoid NaN so that equality
/// comparisons are meaningful.
pub fn random_message(rng: &mut ChaCha8Rng) -> foamfed::federation::Message {
    use foamfed::federation::{ClientUpdate, Message};
    use foamfed::metrics::{LossConfig, RoundMetrics};
    let metrics = |rng: &mut ChaCha8Rng| RoundMetrics {
        loss: rng.random(),
        iou: rng.random(),
        pixel_accuracy: rng.random(),
        dice: rng.random(),
    };
    let text = |rng: &mut ChaCha8Rng| (0..rng.random_range(0..20)).map(|_| rng.random_range('a'..='ω')).collect::<String>();
    match rng.random_range(0..8) {
        0 => Message::JoinRequest { name: text(rng) },
        1 => Message::JoinAck { client_id: rng.random() },
        2 => Message::FitInstruction {
            round: rng.random(),
            config: TrainConfig {
                epochs: rng.random(),
                steps_per_epoch: rng.random(),
                batch_size: rng.random(),
                lr: rng.random(),
                weight_decay: rng.random(),
                loss: LossConfig {
                    alpha: rng.random(),
                    score_weight: rng.random(),
                },
                seed: rng.random(),
            },
            params: random_params(rng),
        },
        3 => Message::FitResult(ClientUpdate {
            params: random_params(rng),
            num_samples: rng.random(),
            metrics: metrics(rng),
        }),
        4 => Message::EvaluateInstruction {
            round: rng.random(),
            n_samples: rng.random(),
            params: random_params(rng),
        },
        5 => Message::EvaluateResult {
            metrics: metrics(rng),
            n_samples: rng.random(),
        },
        6 => Message::Shutdown { params: random_params(rng) },
        _ => Message::Error(text(rng)),
    }
}
