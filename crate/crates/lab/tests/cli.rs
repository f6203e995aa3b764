//! End-to-end runs of the `ugan` binary on a tiny digit-shaped data set.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ugan_lab::idx::{self, IdxImages};
use ugan_lab::pgm::parse_pgm;

fn ugan(args: &[&str], data_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ugan"))
        .args(args)
        .env("UGAN_DATA_DIR", data_dir)
        .output()
        .expect("spawn ugan")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Class `c` lights up column band `c` of a 28×28 image, plus noise.
fn write_digits(dir: &Path, name_images: &str, name_labels: &str, count: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(count * 784);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let c = (i % 10) as u8;
        labels.push(c);
        for _r in 0..28 {
            for col in 0..28 {
                let on = col / 3 == c as usize;
                pixels.push(if on { rng.random_range(180..=255) } else { rng.random_range(0..40) });
            }
        }
    }
    let images = IdxImages { rows: 28, cols: 28, pixels };
    fs::write(dir.join(name_images), idx::encode_images(&images)).unwrap();
    fs::write(dir.join(name_labels), idx::encode_labels(&labels)).unwrap();
}

const TINY: &[&str] = &[
    "--set", "data.kind=\"mnist\"",
    "--set", "data.n_labeled=20",
    "--set", "data.n_valid=20",
    "--set", "model.latent_dim=8",
    "--set", "model.generator_hidden=[16]",
    "--set", "model.classifier_hidden=[16, 8]",
    "--set", "model.discriminator_hidden=[16]",
    "--set", "train.epochs=3",
    "--set", "train.gate_epoch=1",
    "--set", "train.batch_bg=10",
    "--set", "train.batch_gg=10",
    "--set", "train.batch_labeled=10",
    "--set", "train.batch_unlabeled=10",
    "--set", "run.name=\"tiny\"",
];

fn with_tiny<'a>(cmd: &[&'a str], out: &'a str) -> Vec<&'a str> {
    let mut v = cmd.to_vec();
    v.extend_from_slice(TINY);
    v.extend_from_slice(&["--out-dir", out]);
    v
}

#[test]
fn train_eval_grid_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("digits");
    fs::create_dir_all(&data).unwrap();
    write_digits(&data, idx::TRAIN_IMAGES, idx::TRAIN_LABELS, 120, 1);
    write_digits(&data, idx::TEST_IMAGES, idx::TEST_LABELS, 40, 2);
    let out = tmp.path().join("runs");
    let out_s = out.to_str().unwrap();

    let o = ugan(&with_tiny(&["train", "--quiet"], out_s), &data);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = out.join("tiny");
    for f in ["config.echo", "metrics.csv", "final.txt", "ckpt/last.ckpt", "ckpt/best.ckpt", "ckpt/final.ckpt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let o = ugan(&with_tiny(&["eval"], out_s), &data);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let acc: f64 = stdout(&o).trim().strip_prefix("test_acc=").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let o = ugan(&with_tiny(&["gen-grid", "--rows", "3", "--seed", "4"], out_s), &data);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let grid = parse_pgm(&fs::read(run.join("grids/class-grid.pgm")).unwrap()).unwrap();
    assert_eq!((grid.width, grid.height), (280, 84));
    // Same latent row, neighbouring classes: the good generator must react to y.
    let tile = |row: usize, col: usize| -> Vec<f64> {
        (0..28)
            .flat_map(|r| {
                let start = (row * 28 + r) * grid.width + col * 28;
                grid.pixels[start..start + 28].iter().map(|&p| p as f64)
            })
            .collect()
    };
    let l2: f64 = tile(0, 0).iter().zip(tile(0, 1)).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(l2 > 0.0);

    let walk = tmp.path().join("walk.pgm");
    let o = ugan(
        &with_tiny(&["gen-grid", "--interpolate", "--rows", "5", "--out", walk.to_str().unwrap()], out_s),
        &data,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let walk = parse_pgm(&fs::read(&walk).unwrap()).unwrap();
    assert_eq!(walk.height, 5 * 28);

    let o = ugan(&with_tiny(&["aggregate"], out_s), &data);
    assert_eq!(o.status.code(), Some(1));

    let pair = ["--set", "train.seeds=[0, 1]", "--set", "run.name=\"pair\""];
    let mut args = with_tiny(&["train", "--quiet"], out_s);
    args.extend_from_slice(&pair);
    let o = ugan(&args, &data);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("pair/seed-0/final.txt").is_file() && out.join("pair/seed-1/final.txt").is_file());
    assert!(stdout(&o).contains("aggregate over 2 seeds: "), "{}", stdout(&o));
    let mut args = with_tiny(&["aggregate"], out_s);
    args.extend_from_slice(&pair);
    let o = ugan(&args, &data);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).ends_with("% over 2 runs\n"), "{}", stdout(&o));
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("absent.toml");
    let o = ugan(&["train", "--config", path.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(path.to_str().unwrap()));
}

#[test]
fn verify_theory_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ugan(&["verify-theory", "--trials", "100", "--seed", "7"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).ends_with("10 of 10 checks passed\n"));
}
