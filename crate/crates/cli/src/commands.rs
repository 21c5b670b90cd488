// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::Read;

use sea_core::demo::{measure, synthetic_task, DemoConfig, DemoReport};
use sea_core::editing::edit_set;
use sea_core::features::{DEFAULT_ALPHA, DEFAULT_EPSILON};
use sea_core::fit::{fit_bundle, layer_covariances, layer_signatures};
use sea_core::io::{
    read_activation_set, read_projection_bundle, write_activation_set, write_projection_bundle, ActivationSet,
    ProjectionBundle, MAGIC_ACTIVATIONS, MAGIC_PROJECTIONS,
};
use sea_core::spectral::{explained_variance_ratios, svd};
use sea_core::{EditConfig, FeatureSpec, LayerSelection, Normalization, Result, SeaError};

use crate::output::{open, with_k_suffix, write_atomic};
use crate::{ConfigArgs, DemoArgs, EditArgs, Failure, FitArgs, Format, InspectArgs, Preset, Side, SignatureArgs};

const TOP_RATIOS: usize = 10;

fn read_set(path: &std::path::Path) -> Result<ActivationSet> {
    read_activation_set(&mut open(path)?)
}

fn read_bundle(path: &std::path::Path) -> Result<ProjectionBundle> {
    read_projection_bundle(&mut open(path)?)
}

impl ConfigArgs {
    /// Applies the flags on top of `base`.
    fn apply(&self, base: EditConfig) -> Result<EditConfig> {
        let mut config = base.clone();
        if let Some(preset) = self.preset {
            let p = match preset {
                Preset::Truthfulness => EditConfig::truthfulness(),
                Preset::Fairness => EditConfig::fairness(),
            };
            config.threshold = p.threshold;
            config.layers = p.layers;
        }
        if let Some(layers) = &self.layers {
            config.layers = layers.clone();
        }
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        if let Some(merge) = self.merge {
            config.merge = merge;
        }
        let kind = self.feature.unwrap_or(config.feature.kind());
        if self.feature.is_some() || self.alpha.is_some() || self.epsilon.is_some() {
            let keep = self.feature.is_none() || self.feature == Some(base.feature.kind());
            let (alpha, epsilon) = if keep {
                (config.feature.alpha(), config.feature.epsilon())
            } else {
                (DEFAULT_ALPHA, DEFAULT_EPSILON)
            };
            config.feature = FeatureSpec::new(kind, self.alpha.unwrap_or(alpha), self.epsilon.unwrap_or(epsilon))?;
        }
        config.center |= self.center;
        config.validate()?;
        Ok(config)
    }
}

fn ratios_line(sigma: &[f32]) -> Result<String> {
    let sigma: Vec<f64> = sigma.iter().map(|&s| f64::from(s)).collect();
    let ratios = explained_variance_ratios(&sigma)?;
    Ok(ratios
        .iter()
        .take(TOP_RATIOS)
        .map(|r| format!("{r:.6}"))
        .collect::<Vec<_>>()
        .join(" "))
}

pub fn fit(args: FitArgs) -> std::result::Result<(), Failure> {
    let base = args.config.apply(EditConfig::truthfulness())?;
    let ks = if args.k.is_empty() { vec![base.threshold] } else { args.k.clone() };
    let set = read_set(&args.input)?;
    // Fit everything before writing anything.
    let bundles = ks
        .iter()
        .map(|&k| {
            let config = EditConfig { threshold: k, ..base.clone() };
            config.validate()?;
            fit_bundle(&set, &config)
        })
        .collect::<Result<Vec<_>>>()?;
    for (k, bundle) in ks.iter().zip(&bundles) {
        let path = if ks.len() == 1 { args.output.clone() } else { with_k_suffix(&args.output, *k) };
        println!(
            "K={k} layers={} mode={} feature={} -> {}",
            base.layers,
            mode_name(base.mode),
            bundle.feature().kind(),
            path.display()
        );
        for layer in bundle.layers() {
            println!("  layer {}: k+={} k-={}", layer.layer_id, layer.k_plus, layer.k_minus);
            println!("    sigma^2 ratios +: {}", ratios_line(&layer.sigma_plus)?);
            println!("    sigma^2 ratios -: {}", ratios_line(&layer.sigma_minus)?);
        }
        write_atomic(&path, |w| write_projection_bundle(bundle, w))?;
    }
    Ok(())
}

fn mode_name(mode: sea_core::EditMode) -> &'static str {
    match mode {
        sea_core::EditMode::Both => "both",
        sea_core::EditMode::PositiveOnly => "positive-only",
        sea_core::EditMode::NegativeOnly => "negative-only",
        sea_core::EditMode::Reverse => "reverse",
    }
}

fn merge_name(merge: sea_core::MergeMode) -> &'static str {
    match merge {
        sea_core::MergeMode::NormRescale => "norm-rescale",
        sea_core::MergeMode::Average => "average",
    }
}

pub fn edit(args: EditArgs) -> std::result::Result<(), Failure> {
    let bundle = read_bundle(&args.bundle)?;
    let base = EditConfig {
        layers: LayerSelection::Explicit(bundle.layer_ids()),
        feature: *bundle.feature(),
        ..bundle.fit_config.clone()
    };
    let mut config = args.config.apply(base)?;
    config.normalization = Normalization::Batch;
    let set = read_set(&args.input)?;
    let (edited, reports) = edit_set(&set, &bundle, &config)?;
    write_atomic(&args.output, |w| write_activation_set(&edited, w))?;
    println!("layer,edited,neutral,positive,negative");
    let mut total = 0.0;
    let mut count = 0usize;
    for r in &reports {
        let [n, p, m] = r.mean_edit_magnitude;
        println!("{},{},{n:e},{p:e},{m:e}", r.layer_id, r.edited);
        if r.edited {
            total += n;
            count += 1;
        }
    }
    let overall = if count == 0 { 0.0 } else { total / count as f64 };
    println!("mean neutral edit magnitude over edited layers: {overall:e}");
    Ok(())
}

pub fn signature(args: SignatureArgs) -> std::result::Result<(), Failure> {
    let set = read_set(&args.input)?;
    let sig = layer_signatures(&set)?;
    match args.format {
        Format::Csv => {
            match &sig.normalized {
                Some(_) => println!("layer,raw,normalized"),
                None => println!("layer,raw"),
            }
            for (i, (layer, raw)) in sig.layer_ids.iter().zip(&sig.raw).enumerate() {
                match &sig.normalized {
                    Some(n) => println!("{layer},{raw:?},{:?}", n[i]),
                    None => println!("{layer},{raw:?}"),
                }
            }
        }
        Format::Text => {
            println!("label matrix: {}x{}", sig.label_shape.0, sig.label_shape.1);
            match &sig.normalized {
                Some(n) => {
                    println!("{:>6}  {:>14}  {:>10}", "layer", "raw", "normalized");
                    for ((layer, raw), norm) in sig.layer_ids.iter().zip(&sig.raw).zip(n) {
                        println!("{layer:>6}  {raw:>14.6}  {norm:>10.6}");
                    }
                }
                None => {
                    println!("{:>6}  {:>14}", "layer", "raw");
                    for (layer, raw) in sig.layer_ids.iter().zip(&sig.raw) {
                        println!("{layer:>6}  {raw:>14.6}");
                    }
                    println!("normalization: undefined (all raw signatures are zero)");
                }
            }
        }
    }
    Ok(())
}

pub fn inspect(args: InspectArgs) -> std::result::Result<(), Failure> {
    let mut file = open(&args.input)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(SeaError::from)?;
    drop(file);
    let rows: Vec<(usize, Vec<f64>)> = if &magic == MAGIC_ACTIVATIONS {
        let set = read_set(&args.input)?;
        set.layers()
            .iter()
            .map(|layer| {
                let (plus, minus) = layer_covariances(layer, &FeatureSpec::identity(), args.center)?;
                let omega = match args.side {
                    Side::Positive => plus,
                    Side::Negative => minus,
                };
                Ok((layer.layer_id, svd(&omega)?.explained_variance_ratios()?))
            })
            .collect::<Result<_>>()?
    } else if &magic == MAGIC_PROJECTIONS {
        let bundle = read_bundle(&args.input)?;
        bundle
            .layers()
            .iter()
            .map(|layer| {
                let sigma = match args.side {
                    Side::Positive => &layer.sigma_plus,
                    Side::Negative => &layer.sigma_minus,
                };
                let sigma: Vec<f64> = sigma.iter().map(|&s| f64::from(s)).collect();
                Ok((layer.layer_id, explained_variance_ratios(&sigma)?))
            })
            .collect::<Result<_>>()?
    } else {
        return Err(SeaError::BadMagic {
            expected: "SEAD or SEAP".into(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        }
        .into());
    };
    for (layer, ratios) in rows {
        let cells: Vec<String> = ratios.iter().map(|r| format!("{r:?}")).collect();
        println!("{layer},{}", cells.join(","));
    }
    Ok(())
}

fn print_report(report: &DemoReport) {
    let c = &report.config;
    println!(
        "demo seed={} mode={} merge={} feature={} d={} layers={} n={} K={} edit_layers={}",
        c.seed,
        mode_name(c.mode),
        merge_name(c.merge),
        c.feature.kind(),
        c.d_model,
        c.layers,
        c.samples,
        c.threshold,
        c.edit_layers
    );
    println!("injection layer {}: k+={} k-={}", c.injection_layer, report.k_plus, report.k_minus);
    let direction = if report.negative_after > report.negative_before { "increased" } else { "decreased" };
    println!(
        "b- component: {:.4} -> {:.4} ({direction}, reduction {:.1}%, need >= {:.0}%)",
        report.negative_before,
        report.negative_after,
        100.0 * report.negative_reduction,
        100.0 * sea_core::demo::MIN_NEGATIVE_REDUCTION
    );
    println!(
        "b+ component: {:.4} -> {:.4} (retention {:.1}%, need >= {:.0}%)",
        report.positive_before,
        report.positive_after,
        100.0 * report.positive_retention,
        100.0 * sea_core::demo::MIN_POSITIVE_RETENTION
    );
    for (layer, mag) in &report.edit_magnitude {
        println!("layer {layer}: mean edit magnitude {mag:.6}");
    }
}

pub fn demo(args: DemoArgs) -> std::result::Result<(), Failure> {
    let feature = FeatureSpec::new(
        args.feature,
        args.alpha.unwrap_or(DEFAULT_ALPHA),
        args.epsilon.unwrap_or(DEFAULT_EPSILON),
    )?;
    let cfg = DemoConfig {
        seed: args.seed,
        mode: args.mode,
        merge: args.merge,
        feature,
        ..DemoConfig::default()
    };
    let task = synthetic_task(&cfg)?;
    let bundle = fit_bundle(&task.set, &cfg.edit_config())?;
    let report = measure(&cfg, &task, &bundle)?;
    if let Some(path) = &args.save_set {
        write_atomic(path, |w| write_activation_set(&task.set, w))?;
    }
    if let Some(path) = &args.save_bundle {
        write_atomic(path, |w| write_projection_bundle(&bundle, w))?;
    }
    print_report(&report);
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure::DemoFailed)
    }
}
