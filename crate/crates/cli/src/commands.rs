use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use kae_core::data::{
    generate_linear_oracle, generate_vortex_street, load_dataset, save_dataset, TrajectoryDataset,
};
use kae_core::model::KoopmanAutoencoder;
use kae_core::trainer::{
    check_integrators, evaluate, gradcheck, init_model, load_checkpoint, save_checkpoint,
    write_epoch_csv, write_eval_csv, Trainer,
};
use kae_core::{KaeError, Result};

use crate::config::{GeneratorConfig, RunConfig};

fn generate_with(gen: &GeneratorConfig) -> Result<TrajectoryDataset> {
    match gen {
        GeneratorConfig::LinearOracle(c) => generate_linear_oracle(c),
        GeneratorConfig::VortexStreet(c) => generate_vortex_street(c),
    }
}

/// The same system, continued with fresh initial conditions.
fn test_split(gen: &GeneratorConfig, count: usize, steps: Option<usize>) -> GeneratorConfig {
    let mut gen = gen.clone();
    match &mut gen {
        GeneratorConfig::LinearOracle(c) => {
            c.first_trajectory += c.trajectories;
            c.trajectories = count;
            c.steps = steps.unwrap_or(c.steps);
        }
        GeneratorConfig::VortexStreet(c) => {
            c.first_trajectory += c.trajectories;
            c.trajectories = count;
            c.steps = steps.unwrap_or(c.steps);
        }
    }
    gen
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out)?;
    Ok(out)
}

/// Prints the resolved configuration and stores it next to the outputs.
pub fn dump_config(cfg: &RunConfig, command: &str) -> Result<()> {
    let text = cfg.to_toml()?;
    println!("# resolved configuration\n{text}");
    let out = prepare_out(cfg)?;
    fs::write(out.join(format!("{command}.resolved.toml")), text)?;
    Ok(())
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let gen = cfg.require_generator()?;
    let ds = generate_with(gen)?;
    let path = cfg.resolve(&cfg.data.train);
    save_dataset(&ds, &path)?;
    println!(
        "wrote {} ({} trajectories of {} frames, fields {:?})",
        path.display(),
        ds.len(),
        ds.trajectories[0].len(),
        ds.shape()
    );
    if cfg.data.test_trajectories > 0 {
        let test = generate_with(&test_split(
            gen,
            cfg.data.test_trajectories,
            cfg.data.test_steps,
        ))?;
        let path = cfg.resolve(&cfg.data.test);
        save_dataset(&test, &path)?;
        println!("wrote {} ({} trajectories)", path.display(), test.len());
    }
    Ok(())
}

fn load(cfg: &RunConfig, path: &Path) -> Result<TrajectoryDataset> {
    let p = cfg.resolve(path);
    if !p.exists() {
        return Err(KaeError::Config(format!(
            "dataset {} does not exist",
            p.display()
        )));
    }
    load_dataset(p)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let ds = load(cfg, &cfg.data.train)?;
    let mut trainer = match &cfg.resume {
        Some(path) => {
            let (t, model_cfg) = load_checkpoint(cfg.resolve(path))?;
            if model_cfg != cfg.model {
                return Err(KaeError::Config(
                    "[model] differs from the resumed checkpoint".into(),
                ));
            }
            if t.cfg != cfg.train {
                return Err(KaeError::Config(
                    "[train] differs from the resumed checkpoint".into(),
                ));
            }
            println!("resuming at epoch {}", t.epoch);
            t
        }
        None => Trainer::new(
            init_model(&cfg.model, &ds, cfg.train.seed)?,
            cfg.train.clone(),
        )?,
    };
    let every = cfg.checkpoint_every;
    if every > 0 {
        fs::create_dir_all(out.join("checkpoints"))?;
    }
    let epochs = trainer.train(&ds, |t, m| {
        println!(
            "epoch {:>4}  lr {:.3e}  loss {:.6e}  recon {:.3e}  pred {:.3e}  {:.1} s",
            m.epoch, m.lr, m.loss.total, m.loss.recon, m.loss.pred, m.seconds
        );
        if every > 0 && t.epoch % every == 0 {
            let p = out
                .join("checkpoints")
                .join(format!("epoch_{:04}.kaew", t.epoch));
            save_checkpoint(p, t, &cfg.model)?;
        }
        Ok(())
    })?;
    write_epoch_csv(
        &epochs,
        BufWriter::new(File::create(out.join("train_metrics.csv"))?),
    )?;
    let path = out.join("checkpoint.kaew");
    save_checkpoint(&path, &trainer, &cfg.model)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let (t, _) = load_checkpoint(cfg.require_checkpoint()?)?;
    let ds = load(cfg, &cfg.data.test)?;
    let evals = cfg
        .eval
        .schemes
        .iter()
        .map(|&s| evaluate(&ds, &t.model, cfg.eval.horizon, s))
        .collect::<Result<Vec<_>>>()?;
    print!("{:>4}", "step");
    for e in &evals {
        print!("  {:>12}", e.scheme.name());
    }
    println!("  {:>12}", "persistence");
    for j in 0..cfg.eval.horizon {
        print!("{:>4}", j + 1);
        for e in &evals {
            print!("  {:>12.5e}", e.step_mse[j]);
        }
        println!("  {:>12.5e}", evals[0].persistence_mse[j]);
    }
    for e in &evals {
        println!(
            "{}: {} windows, exp/rk4 latent gap {:.2e}, rollout time exp {:.3} s, rk4 {:.3} s",
            e.scheme, e.windows, e.exp_rk4_discrepancy, e.exp_seconds, e.rk4_seconds
        );
    }
    write_eval_csv(
        &evals,
        BufWriter::new(File::create(out.join("eval_metrics.csv"))?),
    )?;
    Ok(())
}

pub fn check(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let test = cfg.resolve(&cfg.data.test);
    let ds = if test.exists() {
        load_dataset(test)?
    } else {
        load(cfg, &cfg.data.train)?
    };
    let model: KoopmanAutoencoder = match &cfg.checkpoint {
        Some(p) => load_checkpoint(cfg.resolve(p))?.0.model,
        None => {
            println!("no checkpoint configured; checking untrained weights");
            init_model(&cfg.model, &ds, cfg.train.seed)?
        }
    };
    let report = check_integrators(&ds, &model, &cfg.integrators)?;
    write_rows(&out.join("scheme_gap.csv"), &report.scheme_gap)?;
    write_rows(&out.join("alignment.csv"), &report.alignment)?;
    println!(
        "rk4 vs exp over {} steps: max latent rel. L2 {:.3e}",
        cfg.integrators.steps,
        report.max_scheme_gap()
    );
    if report.rk4_mse > 0.0 {
        println!(
            "decoded MSE: rk4 {:.6e}, exp {:.6e}",
            report.rk4_mse, report.exp_mse
        );
    }
    println!(
        "step sizes {:?} to t = {}: max pairwise decoded rel. L2 {:.3e}",
        cfg.integrators.dts,
        cfg.integrators.t_end,
        report.max_misalignment()
    );
    Ok(())
}

pub fn grad(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let report = gradcheck(&cfg.gradcheck)?;
    for r in &report.rows {
        println!(
            "{:<28} {:>6}  rel. error {:.3e}  {}",
            r.param,
            r.numel,
            r.relative_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    write_rows(&out.join("gradcheck.csv"), &report.rows)?;
    report.ensure()?;
    println!(
        "all {} tensors within {:.1e}",
        report.rows.len(),
        report.tolerance
    );
    Ok(())
}
