use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use agb_core::compositing::{load_series, median_composite, temporal_mean, ManifestEntry, SceneSeries};
use agb_core::cube::{
    assemble, match_footprints, normalize, read_cube, split, write_cube, Datacube, FootprintSet, ModalitySubset,
    Split, SplitSpec,
};
use agb_core::evaluation::{ablation, climate_zone_summary, evaluate, write_runs_csv, EvalSplit};
use agb_core::models::{
    clamp_for_export, extract_pixel_table, masked_rmse, predict_dense, ModelArtifact, TabularModel,
    TabularSpec,
};
use agb_core::pipeline::{build_site, validation_params};
use agb_core::raster::{bilinear_resample, read_raster, write_raster, Raster};
use agb_core::seeds;
use agb_core::synth::{generate_burn_scene, generate_scene, generate_zone_map, sample_footprints, BurnParams};
use agb_core::training::{
    fit_tabular, kfold_partition, random_search, train_unet, write_trials, SearchSpace, TrainConfig,
};
use agb_core::wildfire::{agb_delta, dnbr, impact_report, nbr, write_panel, BurnIndex};
use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use crate::config::{write_snapshot, RunConfig};
use crate::{Cli, Command, CompositeMethod};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.workers == 0 {
        bail!("--workers must be >= 1");
    }
    let workers = cli.workers;
    match cli.command {
        Command::Synth {
            out,
            size,
            seed,
            validation,
            burn,
        } => {
            if let Some(s) = size {
                cfg.scene.size = s;
            }
            if let Some(s) = seed {
                cfg.scene.seed = s;
            }
            cfg.validate()?;
            synth(&cfg, &out, validation, burn)?;
            let args = arguments([("out", disp(&out)), ("validation", validation.to_string()), ("burn", burn.to_string())]);
            write_snapshot(&out, "synth", &args, &cfg)
        }
        Command::Composite {
            manifest,
            method,
            window,
            out,
        } => {
            if let Some(w) = window {
                cfg.window = w;
            }
            cfg.validate()?;
            let series = load_series(&manifest)?;
            let composite = match method {
                CompositeMethod::Median => median_composite(&series)?,
                CompositeMethod::Mean => temporal_mean(&series, cfg.window())?,
            };
            write_output(&out, |p| Ok(write_raster(p, &composite)?))?;
            let method = match method {
                CompositeMethod::Median => "median",
                CompositeMethod::Mean => "mean",
            };
            let args = arguments([("manifest", disp(&manifest)), ("method", method.into()), ("out", disp(&out))]);
            write_snapshot(&parent(&out), "composite", &args, &cfg)
        }
        Command::Resample { src, like, out } => {
            let source = read_raster(&src)?;
            let reference = read_raster(&like)?;
            let resampled = bilinear_resample(&source, reference.grid())?;
            write_output(&out, |p| Ok(write_raster(p, &resampled)?))?;
            let args = arguments([("src", disp(&src)), ("like", disp(&like)), ("out", disp(&out))]);
            write_snapshot(&parent(&out), "resample", &args, &cfg)
        }
        Command::Match { footprints, like, out } => {
            let reference = read_raster(&like)?;
            let grid = reference.grid();
            let fps = FootprintSet::read_csv(&footprints, &grid.crs_id)?;
            let matched = match_footprints(&fps, grid)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_raster(&out.join("target.tif"), &matched.target)?;
            write_json(&out.join("match.json"), &matched.stats)?;
            println!(
                "{} footprints: {} assigned, {} out of bounds, {} rejected; {} supervised cells",
                matched.stats.total,
                matched.stats.assigned,
                matched.stats.out_of_bounds,
                matched.stats.rejected,
                matched.mask.iter().filter(|m| **m).count()
            );
            let args = arguments([("footprints", disp(&footprints)), ("like", disp(&like)), ("out", disp(&out))]);
            write_snapshot(&out, "match", &args, &cfg)
        }
        Command::Cube {
            site,
            s2,
            s1,
            gpp,
            target,
            subset,
            stats_from,
            raw,
            out,
        } => {
            if let Some(s) = subset {
                cfg.modality_subset = s;
            }
            let full = match &site {
                Some(dir) => site_cube(&cfg, dir)?,
                None => files_cube(&cfg, s2.as_deref(), s1.as_deref(), gpp.as_deref(), target.as_deref())?,
            };
            let restricted = full.restrict(cfg.modality_subset)?;
            let mut cube = if raw {
                restricted
            } else {
                match &stats_from {
                    Some(p) => {
                        let other = read_cube(p)?;
                        let stats = other
                            .norm_stats()
                            .ok_or_else(|| anyhow!("{} is not normalized", p.display()))?;
                        normalize(&restricted, Some(stats))?
                    }
                    None => normalize(&restricted, None)?,
                }
            };
            cube.set_split_seed(Some(cfg.seeds.split));
            write_output(&out, |p| Ok(write_cube(p, &cube)?))?;
            println!(
                "{} cube {}x{}: {} channels, {} supervised pixels",
                cube.subset(),
                cube.grid().width,
                cube.grid().height,
                cube.inputs().n_channels(),
                cube.n_supervised()
            );
            let mut args = arguments([("out", disp(&out)), ("raw", raw.to_string())]);
            for (k, v) in [("site", &site), ("s2", &s2), ("s1", &s1), ("gpp", &gpp), ("target", &target), ("stats_from", &stats_from)] {
                if let Some(p) = v {
                    args.insert(k.into(), disp(p));
                }
            }
            write_snapshot(&parent(&out), "cube", &args, &cfg)
        }
        Command::Train { cube, model, run, out } => {
            if let Some(m) = model {
                cfg.model = m;
            }
            let artifact = train(&cfg, &cube, run)?;
            write_output(&out, |p| Ok(artifact.save(p)?))?;
            match artifact.best_epoch {
                Some(e) => println!("trained {} (seed {}), best epoch {e}", cfg.model.label(), artifact.train_seed),
                None => println!("trained {} (seed {})", cfg.model.label(), artifact.train_seed),
            }
            let args = arguments([("cube", disp(&cube)), ("run", run.to_string()), ("out", disp(&out))]);
            write_snapshot(&parent(&out), "train", &args, &cfg)
        }
        Command::Search {
            cube,
            model,
            space,
            n,
            k,
            out,
        } => {
            let space = match (&space, &cfg.search) {
                (Some(p), _) => SearchSpace::from_toml_file(p)?,
                (None, Some(s)) => s.clone(),
                (None, None) => SearchSpace::default_for(model.unwrap_or(cfg.model)),
            };
            if let Some(m) = model {
                if m != space.model {
                    bail!("--model {m} disagrees with the search space model {}", space.model);
                }
            }
            cfg.model = space.model;
            if let Some(k) = k {
                cfg.cv.k = k;
            }
            let n = n.unwrap_or(space.n_samples);
            cfg.search = Some(SearchSpace { n_samples: n, ..space });
            cfg.validate()?;
            search(&cfg, &cube, workers, &out)?;
            let args = arguments([("cube", disp(&cube)), ("out", disp(&out)), ("workers", workers.to_string())]);
            write_snapshot(&out, "search", &args, &cfg)
        }
        Command::Evaluate {
            artifact,
            cube,
            split: which,
            out,
        } => {
            let model = ModelArtifact::load(&artifact).with_context(|| format!("loading artifact {}", artifact.display()))?;
            let data = read_cube(&cube)?;
            let mask = match which {
                EvalSplit::Validation => vec![true; data.grid().len()],
                EvalSplit::Testing => {
                    let seed = model.split_seed.unwrap_or(cfg.seeds.split);
                    let sp = split(&data, &SplitSpec::tiles(seed, cfg.train.tile_size))?;
                    sp.masks(&data).1
                }
            };
            let result = evaluate(&model, &data, &mask)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let record = json!({
                "model": model.kind(),
                "modality_subset": model.modality_subset,
                "split": which,
                "rmse": result.rmse,
                "n_pixels": result.n_pixels,
            });
            write_json(&out.join("evaluation.json"), &record)?;
            println!("{} {} {which} RMSE {:.4} Mg C/ha over {} pixels", model.kind().label(), model.modality_subset, result.rmse, result.n_pixels);
            let args = arguments([("artifact", disp(&artifact)), ("cube", disp(&cube)), ("split", which.to_string()), ("out", disp(&out))]);
            write_snapshot(&out, "evaluate", &args, &cfg)
        }
        Command::Ablate { n_runs, out } => {
            if let Some(n) = n_runs {
                cfg.ablation.n_runs = n;
            }
            cfg.validate()?;
            let window = Some(cfg.window());
            let train_site = build_site(&cfg.scene, window)?;
            let validation_site = build_site(&validation_params(&cfg.scene), window)?;
            let outcome = ablation(&train_site.cube, &validation_site.cube, &cfg.ablation_config(), workers)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            outcome.report.write_csv(&out.join("report.csv"))?;
            write_runs_csv(&out.join("runs.csv"), &outcome.runs)?;
            let table = outcome.report.format_table();
            fs::write(out.join("report.txt"), &table).with_context(|| format!("writing {}", out.join("report.txt").display()))?;
            print!("{table}");
            let args = arguments([("out", disp(&out)), ("workers", workers.to_string())]);
            write_snapshot(&out, "ablate", &args, &cfg)
        }
        Command::Predict { artifact, cube, out } => {
            let model = ModelArtifact::load(&artifact).with_context(|| format!("loading artifact {}", artifact.display()))?;
            let data = read_cube(&cube)?;
            let pred = clamp_for_export(&predict_dense(&model, &data)?)?;
            write_output(&out, |p| Ok(write_raster(p, &pred)?))?;
            let args = arguments([("artifact", disp(&artifact)), ("cube", disp(&cube)), ("out", disp(&out))]);
            write_snapshot(&parent(&out), "predict", &args, &cfg)
        }
        Command::Zones {
            prediction,
            zones,
            top_n,
            out,
        } => {
            let pred = read_raster(&prediction)?;
            let zone_map = read_raster(&zones)?;
            let summary = climate_zone_summary(&pred, &zone_map, top_n)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            summary.write_csv(&out.join("zones.csv"))?;
            summary.write_boxplot(&out.join("zones.png"))?;
            write_json(&out.join("zones.json"), &summary)?;
            for r in &summary.rows {
                println!("{:<4} {:>8} px  median {:8.2}  p5-p95 {:.2}-{:.2}", r.zone, r.count, r.p50, r.p5, r.p95);
            }
            let args = arguments([
                ("prediction", disp(&prediction)),
                ("zones", disp(&zones)),
                ("top_n", top_n.to_string()),
                ("out", disp(&out)),
            ]);
            write_snapshot(&out, "zones", &args, &cfg)
        }
        Command::Wildfire {
            before,
            after,
            b08,
            b12,
            b08_before,
            b12_before,
            index,
            out,
        } => {
            let delta = agb_delta(&read_raster(&after)?, &read_raster(&before)?)?;
            let nbr_after = nbr(&read_raster(&b08)?, &read_raster(&b12)?)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let burn = match index {
                BurnIndex::Nbr => nbr_after.clone(),
                BurnIndex::Dnbr => {
                    let (Some(pre8), Some(pre12)) = (&b08_before, &b12_before) else {
                        bail!("--index dnbr needs --b08-before and --b12-before");
                    };
                    let nbr_before = nbr(&read_raster(pre8)?, &read_raster(pre12)?)?;
                    let d = dnbr(&nbr_before, &nbr_after)?;
                    write_raster(&out.join("dnbr.tif"), &d)?;
                    d
                }
            };
            let report = impact_report(&delta, &burn, delta.grid().cell_area_ha(), index)?;
            write_raster(&out.join("delta.tif"), &delta)?;
            write_raster(&out.join("nbr.tif"), &nbr_after)?;
            write_json(&out.join("report.json"), &report)?;
            write_panel(&out.join("panel.png"), &delta, &burn)?;
            match report.correlation {
                Some(r) => println!("total loss {:.1} Mg C, r(dAGB, {index}) = {r:.3}", report.total_loss),
                None => println!("total loss {:.1} Mg C, correlation undefined", report.total_loss),
            }
            let mut args = arguments([
                ("before", disp(&before)),
                ("after", disp(&after)),
                ("b08", disp(&b08)),
                ("b12", disp(&b12)),
                ("index", index.to_string()),
                ("out", disp(&out)),
            ]);
            for (k, v) in [("b08_before", &b08_before), ("b12_before", &b12_before)] {
                if let Some(p) = v {
                    args.insert(k.into(), disp(p));
                }
            }
            write_snapshot(&out, "wildfire", &args, &cfg)
        }
    }
}

fn arguments<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn disp(p: &Path) -> String {
    p.display().to_string()
}

/// Directory that receives the snapshot for a file output.
fn parent(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_output(out: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let dir = parent(out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write(out).with_context(|| format!("writing {}", out.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_series(dir: &Path, series: &SceneSeries) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut entries = Vec::with_capacity(series.len());
    for (t, scene) in series.scenes().iter().enumerate() {
        let path = dir.join(format!("scene_{t:02}.tif"));
        write_raster(&path, scene)?;
        let scl = match series.scl() {
            Some(layers) => {
                let p = dir.join(format!("scl_{t:02}.tif"));
                write_raster(&p, &layers[t])?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            path,
            date: series.timestamps()[t],
            scl,
        });
    }
    agb_core::compositing::write_manifest(&dir.join("manifest.txt"), &entries)?;
    Ok(())
}

fn synth(cfg: &RunConfig, out: &Path, validation: bool, burn: bool) -> Result<()> {
    let params = if validation {
        validation_params(&cfg.scene)
    } else {
        cfg.scene.clone()
    };
    let scene = generate_scene(&params)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_raster(&out.join("true_agb.tif"), &scene.truth)?;
    write_series(&out.join("s2"), &scene.s2)?;
    write_series(&out.join("s1"), &scene.s1)?;
    write_series(&out.join("gpp"), &scene.gpp)?;
    let footprints = sample_footprints(&scene.truth, &params)?;
    footprints.write_csv(&out.join("footprints.csv"))?;
    write_raster(&out.join("zones.tif"), &generate_zone_map(&params)?)?;
    write_json(&out.join("scene.json"), &params)?;
    if burn {
        let b = generate_burn_scene(&params, &BurnParams::default())?;
        let dir = out.join("burn");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, r) in [
            ("agb_before", &b.before),
            ("agb_after", &b.after),
            ("b08_before", &b.b08_before),
            ("b12_before", &b.b12_before),
            ("b08_after", &b.b08_after),
            ("b12_after", &b.b12_after),
        ] {
            write_raster(&dir.join(format!("{name}.tif")), r)?;
        }
        write_json(&dir.join("burn.json"), &json!({ "true_loss": b.true_loss }))?;
    }
    println!(
        "site {}x{} (seed {}): {} footprints",
        params.size,
        params.size,
        params.seed,
        footprints.len()
    );
    Ok(())
}

/// Full-subset raw cube from a `synth` directory, prepared exactly as the ablation does.
fn site_cube(cfg: &RunConfig, dir: &Path) -> Result<Datacube> {
    let window = cfg.window();
    let s2 = median_composite(&load_series(&dir.join("s2").join("manifest.txt"))?)?;
    let grid = s2.grid().clone();
    let s1 = bilinear_resample(&temporal_mean(&load_series(&dir.join("s1").join("manifest.txt"))?, window)?, &grid)?;
    let gpp = bilinear_resample(&temporal_mean(&load_series(&dir.join("gpp").join("manifest.txt"))?, window)?, &grid)?;
    let fps = FootprintSet::read_csv(&dir.join("footprints.csv"), &grid.crs_id)?;
    let matched = match_footprints(&fps, &grid)?;
    Ok(assemble(&[&s2, &s1, &gpp], &matched.target, &matched.mask, ModalitySubset::Full)?)
}

/// Cube from composited layers; layers off the target grid are resampled onto it.
fn files_cube(cfg: &RunConfig, s2: Option<&Path>, s1: Option<&Path>, gpp: Option<&Path>, target: Option<&Path>) -> Result<Datacube> {
    let target_path = target.ok_or_else(|| anyhow!("--target is required without --site"))?;
    let target = read_raster(target_path)?;
    let mut layers: Vec<Raster> = Vec::new();
    for p in [s2, s1, gpp].into_iter().flatten() {
        let r = read_raster(p)?;
        layers.push(if r.grid() == target.grid() {
            r
        } else {
            bilinear_resample(&r, target.grid())?
        });
    }
    if layers.is_empty() {
        bail!("no input layers given (--s2, --s1, --gpp)");
    }
    let refs: Vec<&Raster> = layers.iter().collect();
    let mask = target.valid_mask().to_vec();
    let subset = if s2.is_some() && s1.is_some() && gpp.is_some() {
        ModalitySubset::Full
    } else {
        cfg.modality_subset
    };
    Ok(assemble(&refs, &target, &mask, subset)?)
}

fn train(cfg: &RunConfig, cube_path: &Path, run: usize) -> Result<ModelArtifact> {
    cfg.validate()?;
    let mut cube = read_cube(cube_path)?;
    cube.set_split_seed(Some(cfg.seeds.split));
    let seed = seeds::derive(cfg.seeds.model, &[run as u64]);
    let sp = split(&cube, &cfg.split_spec())?;
    let artifact = match cfg.model.tabular() {
        Some(kind) => {
            let (train_mask, _) = sp.masks(&cube);
            fit_tabular(&cfg.tabular.spec(kind), &cube, &train_mask, seed)?
        }
        None => train_unet(&cube, &sp, &TrainConfig { seed, ..cfg.train.clone() })?,
    };
    Ok(artifact)
}

fn search(cfg: &RunConfig, cube_path: &Path, workers: usize, out: &Path) -> Result<()> {
    let space = cfg.search.clone().expect("search space resolved");
    let cube = read_cube(cube_path)?;
    let sp = split(&cube, &cfg.split_spec())?;
    let k = cfg.cv.k;
    let base = cfg.seeds.search;
    let result = match space.model.tabular() {
        Some(kind) => {
            let (train_mask, _) = sp.masks(&cube);
            let table = extract_pixel_table(&cube)?.filter_pixels(&train_mask);
            let units: Vec<usize> = (0..table.len()).collect();
            let folds = kfold_partition(&units, k, base)?;
            random_search(&space, space.n_samples, k, base, workers, |params, f, seed| {
                let spec = TabularSpec {
                    kind,
                    hyperparams: params.clone(),
                };
                spec.validate()?;
                let model = TabularModel::fit(&spec, &table.subset(&folds[f].train), seed)?;
                let held = table.subset(&folds[f].held_out);
                masked_rmse(&model.predict_table(&held), &held.target, &vec![true; held.len()])
            })?
        }
        None => {
            let folds = kfold_partition(&sp.train, k, base)?;
            random_search(&space, space.n_samples, k, base, workers, |params, f, seed| {
                let tcfg = TrainConfig {
                    seed,
                    ..cfg.train.with_overrides(params)?
                };
                let inner = Split {
                    spec: sp.spec,
                    train: folds[f].train.clone(),
                    test: folds[f].held_out.clone(),
                    tiles: sp.tiles.clone(),
                };
                let artifact = train_unet(&cube, &inner, &tcfg)?;
                let (_, held_mask) = inner.masks(&cube);
                let pred = predict_dense(&artifact, &cube)?;
                let target: Vec<f64> = (0..cube.grid().len()).map(|i| cube.target_at(i).unwrap_or(0.0)).collect();
                masked_rmse(pred.band(0), &target, &held_mask)
            })?
        }
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_trials(&out.join("trials.csv"), &result.trials)?;
    let best = result.best_trial();
    write_json(
        &out.join("best.json"),
        &json!({
            "model": space.model,
            "trial": best.trial,
            "hyperparams": best.params,
            "mean": best.mean,
            "std": best.std,
        }),
    )?;
    println!(
        "{} trials x {k} folds; best trial {} mean RMSE {:.4} ± {:.4}: {}",
        result.trials.len(),
        best.trial,
        best.mean,
        best.std,
        serde_json::to_string(&best.params)?
    );
    Ok(())
}
