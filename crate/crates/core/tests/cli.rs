use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = "nc=32\nnt=4\nnc_crop=8\nseed=3\ncodeword_len=8\nbits=3\nbatch_size=4\nlr=0.001\nsnr_db_list=0,10\nsymbols_per_subcarrier=2\n";

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csiquant")).args(args).output().expect("spawn csiquant")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Setup {
    _dir: tempfile::TempDir,
    cfg: PathBuf,
    data: PathBuf,
    root: PathBuf,
}

fn setup(count: usize) -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cfg = root.join("run.cfg");
    std::fs::write(&cfg, CONFIG).unwrap();
    let data = root.join("train.csid");
    ok(&["generate", "--config", s(&cfg), "--out", s(&data), "--count", &count.to_string()]);
    Setup { _dir: dir, cfg, data, root }
}

#[test]
fn generate_writes_expected_length_and_is_seeded() {
    let st = setup(6);
    assert_eq!(std::fs::metadata(&st.data).unwrap().len(), 20 + 6 * 32 * 4 * 8);
    let again = st.root.join("again.csid");
    let text = ok(&["generate", "--config", s(&st.cfg), "--out", s(&again), "--count", "6"]);
    assert!(text.contains("energy_in_crop mean=1.0"), "{text}");
    assert_eq!(std::fs::read(&st.data).unwrap(), std::fs::read(&again).unwrap());
    let other = st.root.join("other.csid");
    ok(&["generate", "--config", s(&st.cfg), "--out", s(&other), "--count", "6", "--seed", "4"]);
    assert_ne!(std::fs::read(&st.data).unwrap(), std::fs::read(&other).unwrap());
}

#[test]
fn train_eval_ber_resume() {
    let st = setup(12);
    let ckpt = st.root.join("m.ckpt");
    let text = ok(&["train", "--config", s(&st.cfg), "--data", s(&st.data), "--out", s(&ckpt), "--steps", "3"]);
    assert!(text.contains("bits=3"), "{text}");
    assert!(text.contains("feedback_bits=24"), "{text}");
    let rows: Vec<&str> = text.lines().skip_while(|l| *l != "step,loss").skip(1).filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("1,") && rows[2].starts_with("3,"));

    let dump = st.root.join("codes.bin");
    let eval = ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&st.data), "--dump-codewords", s(&dump)]);
    assert!(eval.contains("24 bits/sample"), "{eval}");
    assert!(eval.contains("nmse="));
    assert_eq!(std::fs::metadata(&dump).unwrap().len(), 12 * 3);
    assert_eq!(eval, ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&st.data)]));

    let ber = ok(&["ber", "--ckpt", s(&ckpt), "--data", s(&st.data), "--config", s(&st.cfg), "--snr", "0,5,20"]);
    let data_rows: Vec<&str> = ber.lines().filter(|l| l.split(',').count() == 3 && !l.starts_with("snr")).collect();
    assert_eq!(data_rows.len(), 6, "{ber}");
    assert!(data_rows[0].starts_with("0,") && data_rows[2].starts_with("20,"));
    assert!(data_rows.iter().all(|r| r.ends_with(&format!(",{}", 12 * 32 * 2 * 2))), "{ber}");

    let resumed = st.root.join("r.ckpt");
    let more = ok(&["train", "--config", s(&st.cfg), "--data", s(&st.data), "--out", s(&resumed), "--steps", "2", "--resume", s(&ckpt)]);
    let rows: Vec<&str> = more.lines().skip_while(|l| *l != "step,loss").skip(1).filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("4,") && rows[1].starts_with("5,"), "{more}");
}

#[test]
fn zero_steps_saves_the_initial_model() {
    let st = setup(4);
    let ckpt = st.root.join("init.ckpt");
    let text = ok(&["train", "--config", s(&st.cfg), "--data", s(&st.data), "--out", s(&ckpt), "--steps", "0"]);
    assert!(!text.contains("step,loss"));
    assert!(ckpt.exists());
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&st.data)]);
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let st = setup(4);
    let bad = st.root.join("bad.cfg");
    std::fs::write(&bad, "nc=32\nwidth=3\n").unwrap();
    let out = bin(&["generate", "--config", s(&bad), "--out", s(&st.root.join("x")), "--count", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));

    let junk = st.root.join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = bin(&["eval", "--ckpt", s(&junk), "--data", s(&st.data)]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let ckpt = st.root.join("m.ckpt");
    ok(&["train", "--config", s(&st.cfg), "--data", s(&st.data), "--out", s(&ckpt), "--steps", "0"]);
    let out = bin(&["ber", "--ckpt", s(&ckpt), "--data", s(&st.data), "--snr", "0,x"]);
    assert!(!out.status.success());
}
