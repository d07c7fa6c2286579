use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{MaskStack, SliceStack, StackPair};
use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::nn::RunningStats;
use crate::tensor::{Element, Graph, Mode, Tensor};

use super::adam::Adam;
use super::batch::Batch;
use super::checkpoint::{Checkpoint, Entry};
use super::config::{TrainConfig, Variant};
use super::steps::{train_step_gan, train_step_plain, train_step_roigan, Networks, Optimizers, StepLosses};

pub const HISTORY_FILE: &str = "history.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const HISTORY_HEADER: &str = "epoch,train_mse,train_gan_g,train_gan_d,train_l1,val_dice_mean";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: StepLosses,
    pub val_dice: f64,
}

/// Networks, optimizers, RNG and progress of one training run.
#[derive(Debug)]
pub struct Trainer<T> {
    pub cfg: TrainConfig,
    pub nets: Networks<T>,
    pub opts: Optimizers<T>,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub best_val: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9}",
            r.epoch, r.train.g_mse, r.train.g_gan, r.train.d_loss, r.train.g_l1, r.val_dice
        );
    }
    out
}

fn parse_history(text: &str) -> Result<Vec<EpochRecord>> {
    let bad = || Error::Config("malformed history in checkpoint".into());
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train: StepLosses {
                    g_mse: num(1)?,
                    g_gan: num(2)?,
                    d_loss: num(3)?,
                    g_l1: num(4)?,
                },
                val_dice: num(5)?,
            })
        })
        .collect()
}

fn pairs<'a>(stacks: &[&'a StackPair]) -> Vec<(&'a SliceStack, &'a MaskStack)> {
    stacks.iter().map(|p| (&p.0, &p.1)).collect()
}

impl<T: Element> Trainer<T> {
    /// Fresh run: every parameter is drawn from the config seed.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let nets = Networks::build(&cfg, &mut rng)?;
        let opts = Optimizers::new(&nets, &cfg);
        Ok(Self {
            cfg,
            nets,
            opts,
            rng,
            epoch: 0,
            history: Vec::new(),
            best_val: None,
        })
    }

    fn check_stack(&self, s: &SliceStack) -> Result<()> {
        if (s.height(), s.width()) != self.cfg.input_size {
            return Err(Error::Config(format!(
                "stack `{}` is {}x{} but the networks expect {}x{}",
                s.id,
                s.height(),
                s.width(),
                self.cfg.input_size.0,
                self.cfg.input_size.1
            )));
        }
        Ok(())
    }

    /// One optimizer step on the given whole stacks.
    pub fn step(&mut self, stacks: &[&StackPair]) -> Result<StepLosses> {
        for (s, _) in stacks {
            self.check_stack(s)?;
        }
        let p = pairs(stacks);
        let full = Batch::from_stacks(&p)?;
        let cfg = &self.cfg;
        let nets = &self.nets;
        let opts = &mut self.opts;
        let rng = &mut self.rng;
        let losses = match cfg.variant {
            Variant::Plain => train_step_plain(&nets.global, &full, cfg, &mut opts.global, rng)?,
            Variant::Gan => train_step_gan(
                &nets.global,
                &nets.discs[0],
                &full,
                cfg,
                &mut opts.global,
                &mut opts.discs[0],
                rng,
            )?,
            _ => {
                let roi = if cfg.roi_stream {
                    Batch::roi_from_stacks(&p, cfg.roi_size, cfg.roi_margin)?
                } else {
                    None
                };
                train_step_roigan(nets, opts, &full, roi.as_ref(), cfg, rng)?
            }
        };
        if !losses.is_finite() {
            return Err(Error::NonFinite {
                op: "training loss",
                index: 0,
            });
        }
        Ok(losses)
    }

    /// Global-generator probabilities `[S, 1, H, W]` in eval mode.
    pub fn predict(&self, stack: &SliceStack) -> Result<Tensor<T>> {
        predict(&self.nets, stack)
    }

    /// Mean Dice over every slice of `stacks`.
    pub fn validate(&self, stacks: &[&StackPair]) -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (s, m) in stacks {
            let pred = MaskStack::from_probabilities(&s.id, &self.predict(s)?)?;
            for i in 0..m.len() {
                sum += dice(pred.slice(i), m.slice(i))?;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Config("validation split is empty".into()));
        }
        Ok(sum / n as f64)
    }

    /// Runs one epoch: shuffles the training stacks, steps through them in
    /// groups of `batch_stacks`, then scores the validation stacks.
    pub fn run_epoch(&mut self, train: &[&StackPair], val: &[&StackPair]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        if val.is_empty() {
            return Err(Error::Config("validation split is empty".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = StepLosses::default();
        let mut steps = 0;
        for chunk in order.chunks(self.cfg.batch_stacks) {
            let group: Vec<&StackPair> = chunk.iter().map(|&i| train[i]).collect();
            sum = sum + self.step(&group)?;
            steps += 1;
        }
        self.epoch += 1;
        let record = EpochRecord {
            epoch: self.epoch,
            train: sum / steps as f64,
            val_dice: self.validate(val)?,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Trains until `cfg.epochs` epochs are complete. With `out`, writes the
    /// history CSV and the last and best-validation checkpoints after every
    /// epoch.
    pub fn fit(
        &mut self,
        train: &[&StackPair],
        val: &[&StackPair],
        out: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<&[EpochRecord]> {
        for (s, _) in train.iter().chain(val) {
            self.check_stack(s)?;
        }
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.epoch < self.cfg.epochs {
            let rec = self.run_epoch(train, val)?;
            let improved = self.best_val.is_none_or(|b| rec.val_dice > b);
            if improved {
                self.best_val = Some(rec.val_dice);
            }
            if let Some(dir) = out {
                let ck = self.to_checkpoint();
                if improved {
                    ck.save(&dir.join(BEST_CHECKPOINT))?;
                }
                ck.save(&dir.join(LAST_CHECKPOINT))?;
                let path = dir.join(HISTORY_FILE);
                std::fs::write(&path, history_csv(&self.history)).map_err(|e| Error::io(&path, e))?;
            }
            on_epoch(&rec);
        }
        Ok(&self.history)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for m in self.nets.modules() {
            m.visit(&mut |p| ck.params.push(Entry::tensor(p.name(), &p.value())));
            m.visit_norms(&mut |bn| {
                let st = bn.running_stats();
                let n = vec![st.mean.len()];
                ck.params
                    .push(Entry::slice(format!("{}.running_mean", bn.name()), n.clone(), &st.mean));
                ck.params
                    .push(Entry::slice(format!("{}.running_var", bn.name()), n, &st.var));
            });
        }
        for (name, opt) in optimizer_names(&self.nets).into_iter().zip(self.opts.all()) {
            ck.optimizer.push(Entry::u64s(format!("{name}.step"), &[opt.step]));
            for s in &opt.state {
                ck.optimizer
                    .push(Entry::slice(format!("{name}/{}.m", s.name), vec![s.m.len()], &s.m));
                ck.optimizer
                    .push(Entry::slice(format!("{name}/{}.v", s.name), vec![s.v.len()], &s.v));
            }
        }
        let word_pos = self.rng.get_word_pos();
        ck.state.push(Entry::u8s("config", self.cfg.to_text().as_bytes()));
        ck.state.push(Entry::u8s("rng.seed", &self.rng.get_seed()));
        ck.state.push(Entry::u64s("rng.stream", &[self.rng.get_stream()]));
        ck.state
            .push(Entry::u64s("rng.word_pos", &[word_pos as u64, (word_pos >> 64) as u64]));
        ck.state.push(Entry::u64s("epoch", &[self.epoch as u64]));
        let best: Vec<f64> = self.best_val.into_iter().collect();
        ck.state.push(Entry::slice("best_val", vec![best.len()], &best));
        ck.state
            .push(Entry::u8s("history", history_csv(&self.history).as_bytes()));
        ck
    }

    /// Rebuilds the run stored in `ck`; continuing it matches an
    /// uninterrupted run bit for bit.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let text = String::from_utf8(ck.state("config")?.as_u8()?.to_vec())
            .map_err(|_| Error::Config("checkpoint config is not UTF-8".into()))?;
        let cfg = TrainConfig::from_text(&text)?;
        let mut trainer = Self::new(cfg)?;
        trainer.load_parameters(ck)?;
        let names = optimizer_names(&trainer.nets);
        for (name, opt) in names.into_iter().zip(trainer.opts.all_mut()) {
            load_optimizer(ck, &name, opt)?;
        }
        let seed: [u8; 32] = ck
            .state("rng.seed")?
            .as_u8()?
            .try_into()
            .map_err(|_| Error::CheckpointMismatch {
                name: "rng.seed".into(),
                msg: "expected 32 bytes".into(),
            })?;
        let stream = ck.state("rng.stream")?.as_u64()?;
        let pos = ck.state("rng.word_pos")?.as_u64()?;
        if stream.len() != 1 || pos.len() != 2 {
            return Err(Error::CheckpointMismatch {
                name: "rng".into(),
                msg: "malformed RNG state".into(),
            });
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream[0]);
        rng.set_word_pos(pos[0] as u128 | (pos[1] as u128) << 64);
        trainer.rng = rng;
        trainer.epoch = ck.state("epoch")?.as_u64()?.first().copied().unwrap_or(0) as usize;
        let best = ck.state("best_val")?;
        trainer.best_val = best
            .to_vec::<f64>(best.shape.first().copied().unwrap_or(0))?
            .first()
            .copied();
        let hist = String::from_utf8(ck.state("history")?.as_u8()?.to_vec())
            .map_err(|_| Error::Config("checkpoint history is not UTF-8".into()))?;
        trainer.history = parse_history(&hist)?;
        Ok(trainer)
    }

    /// Overwrites every parameter and running statistic from `ck`.
    pub fn load_parameters(&mut self, ck: &Checkpoint) -> Result<()> {
        load_networks(&self.nets, ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn optimizer_names<T: Element>(nets: &Networks<T>) -> Vec<String> {
    let mut v = vec![format!("opt.{}", nets.global.name())];
    if let Some(l) = &nets.local {
        v.push(format!("opt.{}", l.name()));
    }
    v.extend(nets.discs.iter().map(|d| format!("opt.{}", d.name())));
    v
}

fn load_optimizer<T: Element>(ck: &Checkpoint, name: &str, opt: &mut Adam<T>) -> Result<()> {
    let step = ck.optim(&format!("{name}.step"))?.as_u64()?;
    opt.step = step.first().copied().unwrap_or(0);
    for s in &mut opt.state {
        let n = s.m.len();
        s.m = ck.optim(&format!("{name}/{}.m", s.name))?.to_vec(n)?;
        s.v = ck.optim(&format!("{name}/{}.v", s.name))?.to_vec(n)?;
    }
    Ok(())
}

/// Copies parameters and batch-norm statistics from `ck` into `nets`.
pub fn load_networks<T: Element>(nets: &Networks<T>, ck: &Checkpoint) -> Result<()> {
    for m in nets.modules() {
        let mut params = Vec::new();
        m.visit(&mut |p| params.push(p.clone()));
        for p in params {
            p.set_value(ck.param(p.name())?.to_tensor(&p.shape())?);
        }
        let mut result = Ok(());
        m.visit_norms(&mut |bn| {
            if result.is_err() {
                return;
            }
            let c = bn.running_stats().mean.len();
            result = (|| {
                let mean = ck.param(&format!("{}.running_mean", bn.name()))?.to_vec(c)?;
                let var = ck.param(&format!("{}.running_var", bn.name()))?.to_vec(c)?;
                bn.set_running_stats(RunningStats { mean, var });
                Ok(())
            })();
        });
        result?;
    }
    Ok(())
}

/// Global-generator probabilities for one stack in eval mode.
pub fn predict<T: Element>(nets: &Networks<T>, stack: &SliceStack) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(stack.images_as());
    // Eval mode draws no noise; the RNG is only there to satisfy the signature.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let y = nets
        .global
        .forward(&mut g, x, &[stack.len()], Mode::Eval, &mut unused)?;
    Ok(g.value(y).clone())
}
