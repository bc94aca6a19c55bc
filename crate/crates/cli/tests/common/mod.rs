#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Seconds-scale configuration: small corpus, one-layer model, one epoch.
pub const TINY: &str = r#"
run_name = "tiny"

[toy]
pairs = 400
test_pairs = 40
lexicon_size = 16
names = 2
max_words = 6

[[tasks]]
kind = "uppercase"
samples = 30

[[tasks]]
kind = "add_hashtag"
samples = 30

[[tasks]]
kind = "insert_x_begin"
samples = 30

[[tasks]]
kind = "empty_instruction"
samples = 30

[tokenizer]
vocab_size = 320

[model]
d_model = 16
heads = 2
d_ff = 32
enc_layers = 1
dec_layers = 1
max_len = 40

[expansion]
pca_rank = 4

[base_train]
epochs = 1

[finetune]
epochs = 1

[interpolation]
grid = [0.0, 1.0]
eval_pairs = 10

[composition]
items = 10
"#;

pub struct Sandbox {
    pub dir: tempfile::TempDir,
}

impl Sandbox {
    pub fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.toml"), config).unwrap();
        Self { dir }
    }

    pub fn tiny() -> Self {
        Self::new(TINY)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn run_dir(&self, name: &str) -> PathBuf {
        self.path("out").join(name)
    }

    /// Runs the binary with this sandbox's config and output root.
    pub fn run(&self, args: &[&str]) -> Output {
        run_in(self.dir.path(), args)
    }
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_instruct-nmt"))
        .arg("--config")
        .arg(dir.join("config.toml"))
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .env_remove("INSTRUCT_NMT_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}
