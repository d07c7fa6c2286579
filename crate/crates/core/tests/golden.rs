//! Committed stack and checkpoint files must decode to the recorded contents
//! and re-encode to the same bytes.

use std::fmt::Write;
use std::path::PathBuf;

use roigan::data::{
    decode_stack, encode_stack, gen_phantom_stack, load_stack, save_stack, MaskStack, PhantomConfig, SliceStack,
};
use roigan::train::{Checkpoint, TrainConfig, Trainer, Variant};

const STACK: &str = "phantom.rvs";
const CHECKPOINT: &str = "tiny.ckpt";
const EXPECTED: &str = "expected.txt";

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn golden_phantom() -> PhantomConfig {
    PhantomConfig {
        n_stacks: 1,
        slices: 8,
        seed: 7,
        spacing: (1.5, 1.25),
        ..PhantomConfig::default()
    }
}

fn golden_config() -> TrainConfig {
    TrainConfig {
        variant: Variant::RoiganC,
        widths: [2, 2, 2, 2, 2, 2],
        disc_widths: vec![2, 2, 2, 2, 2],
        seed: 5,
        ..TrainConfig::default()
    }
}

/// Decoder-independent description: dimensions, spacing bits, the exact sum
/// of the pixel values and the foreground count; for checkpoints, every
/// entry name with its dtype, shape and payload checksum.
fn describe(stack: &SliceStack, mask: &MaskStack, ck: &Checkpoint) -> String {
    let mut out = String::new();
    let sum: f64 = stack.images.data().iter().map(|&v| f64::from(v)).sum();
    let area: usize = mask.data.iter().map(|&v| usize::from(v)).sum();
    let _ = writeln!(
        out,
        "stack {} {:?} spacing {:08x} {:08x} sum {:016x} area {area}",
        stack.id,
        stack.images.shape(),
        stack.spacing.0.to_bits(),
        stack.spacing.1.to_bits(),
        sum.to_bits()
    );
    for (table, entries) in [("param", &ck.params), ("optim", &ck.optimizer), ("state", &ck.state)] {
        for e in entries {
            let check = e.bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
                (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
            });
            let _ = writeln!(out, "{table} {} {} {:?} {check:016x}", e.name, e.dtype, e.shape);
        }
    }
    out
}

#[test]
fn golden_files_decode_to_the_recorded_contents() {
    let stack_bytes = std::fs::read(dir().join(STACK)).unwrap();
    let ck_bytes = std::fs::read(dir().join(CHECKPOINT)).unwrap();
    let expected = std::fs::read_to_string(dir().join(EXPECTED)).unwrap();
    let (stack, mask) = decode_stack(&stack_bytes, "phantom").unwrap();
    let ck = Checkpoint::decode(&ck_bytes).unwrap();
    assert_eq!(describe(&stack, &mask, &ck), expected);
    assert_eq!(encode_stack(&stack, &mask).unwrap(), stack_bytes);
    assert_eq!(ck.encode(), ck_bytes);
    let trainer = Trainer::<f32>::from_checkpoint(&ck).unwrap();
    assert_eq!(trainer.cfg, golden_config());
}

#[test]
fn files_round_trip_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let (stack, mask) = gen_phantom_stack(&golden_phantom(), 0);
    let path = tmp.path().join(STACK);
    save_stack(&path, &stack, &mask).unwrap();
    let (s2, m2) = load_stack(&path).unwrap();
    assert_eq!(
        (&s2.images, s2.spacing, &m2.data),
        (&stack.images, stack.spacing, &mask.data)
    );

    let trainer = Trainer::<f32>::new(golden_config()).unwrap();
    let path = tmp.path().join(CHECKPOINT);
    trainer.save(&path).unwrap();
    let back = Trainer::<f32>::load(&path).unwrap();
    assert_eq!(back.to_checkpoint(), trainer.to_checkpoint());
    assert_eq!(std::fs::read(&path).unwrap(), trainer.to_checkpoint().encode());
}

/// Rewrites the committed files; run with `--ignored` after a deliberate
/// format change.
#[test]
#[ignore]
fn regenerate_golden_files() {
    std::fs::create_dir_all(dir()).unwrap();
    let (stack, mask) = gen_phantom_stack(&golden_phantom(), 0);
    save_stack(&dir().join(STACK), &stack, &mask).unwrap();
    let ck = Trainer::<f32>::new(golden_config()).unwrap().to_checkpoint();
    ck.save(&dir().join(CHECKPOINT)).unwrap();
    let (stack, mask) = load_stack(&dir().join(STACK)).unwrap();
    std::fs::write(dir().join(EXPECTED), describe(&stack, &mask, &ck)).unwrap();
}
