//! Train and predict over whole scenes; the commands are thin wrappers.

use std::collections::BTreeMap;

use rayon::prelude::*;

use owhsi::data_io::{
    extract_patch, normalize, sample_split, HyperCube, LabelRaster, SampleSet, SplitSpec,
};
use owhsi::evt::{
    decide, fit_classwise, fit_gpd, softmax_threshold_baseline, tail_size, EvtMode, EvtModels,
};
use owhsi::network::{
    argmax_label, build_network, instance_l1, train, Mdl4owNet, TrainConfig, TrainReport,
};
use owhsi::tensor::Tensor;
use owhsi::{Error, Result, PATCH_SIZE};

/// Pixels per inference batch.
pub const TILE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PredictMode {
    Closed,
    Softmax,
    Mdl4ow,
    #[value(name = "mdl4ow-c")]
    Mdl4owC,
}

pub struct TrainOutcome {
    pub net: Mdl4owNet,
    pub evt: EvtModels,
    pub report: TrainReport,
    pub split: SplitSpec,
    pub warnings: Vec<String>,
}

/// Normalizes the cube, draws (or checks) the split, trains, and fits the
/// tail models on the infer-mode losses of the augmented training samples.
pub fn train_scene(
    cube: &HyperCube,
    labels: &LabelRaster,
    num_classes: usize,
    split: Option<SplitSpec>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    labels.matches(cube)?;
    labels.validate(num_classes)?;
    let (norm, _) = normalize(cube);
    let split = match split {
        Some(s) => {
            s.check_against(labels)?;
            s
        }
        None => sample_split(labels, num_classes, config.nos, config.seed)?,
    };
    let mut warnings = split.warnings.clone();
    let samples = SampleSet::from_pixels(&norm, &split.train_pixels())?.augmented();
    let mut net = build_network(cube.bands(), num_classes, config.seed)?;
    let report = train(&mut net, &samples, config)?;

    let mut losses = Vec::with_capacity(samples.len());
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(TILE) {
        let batch = samples.batch(chunk)?;
        let out = net.infer(&batch)?;
        losses.extend(instance_l1(&batch, &out.recon)?);
    }
    let mut groups: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
    for (s, &l) in samples.samples.iter().zip(&losses) {
        groups.entry(s.label).or_default().push(l);
    }
    let mut tau = tail_size(split.nos, num_classes, EvtMode::Global);
    if tau > losses.len() {
        warnings.push(format!(
            "global tail size {tau} exceeds {} training losses, using all",
            losses.len()
        ));
        tau = losses.len();
    }
    let global = fit_gpd(&losses, tau)?;
    let classwise = fit_classwise(&groups, split.nos, num_classes as u16)?;
    for c in &classwise.fallbacks {
        warnings.push(format!(
            "class {c}: too few losses, class-wise model falls back to global"
        ));
    }
    Ok(TrainOutcome {
        net,
        evt: EvtModels { global, classwise },
        report,
        split,
        warnings,
    })
}

/// Per-pixel outputs; unclassified pixels hold 0 everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRaster {
    pub height: usize,
    pub width: usize,
    pub closed: Vec<u16>,
    pub open: Vec<u16>,
    pub loss: Vec<f32>,
    pub score: Vec<f32>,
}

impl PredictionRaster {
    fn empty(height: usize, width: usize) -> Self {
        let n = height * width;
        PredictionRaster {
            height,
            width,
            closed: vec![0; n],
            open: vec![0; n],
            loss: vec![0.0; n],
            score: vec![0.0; n],
        }
    }
}

/// Where the tail models used for scoring come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TailSource {
    /// The models fitted on training losses.
    #[default]
    Training,
    /// Refitted on the losses of the pixels being predicted, with the
    /// training tail sizes.
    Prediction,
}

struct PixelOut {
    closed: u16,
    top: f32,
    softmax_open: u16,
    loss: f64,
}

/// Classifies `pixels` of the raw cube. Tiles run in parallel on the current
/// rayon pool; every pixel's result is independent of the tiling.
pub fn predict_scene(
    net: &Mdl4owNet,
    evt: Option<&EvtModels>,
    cube: &HyperCube,
    pixels: &[(usize, usize)],
    mode: PredictMode,
    z: f64,
) -> Result<PredictionRaster> {
    predict_scene_with(net, evt, cube, pixels, mode, z, TailSource::Training)
}

/// [`predict_scene`] with a choice of tail models.
pub fn predict_scene_with(
    net: &Mdl4owNet,
    evt: Option<&EvtModels>,
    cube: &HyperCube,
    pixels: &[(usize, usize)],
    mode: PredictMode,
    z: f64,
    tails: TailSource,
) -> Result<PredictionRaster> {
    if cube.bands() != net.bands() {
        return Err(Error::Shape(format!(
            "cube has {} bands, network expects {}",
            cube.bands(),
            net.bands()
        )));
    }
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::InvalidInput(format!(
            "z must lie in (0, 1), got {z}"
        )));
    }
    let evt_mode = match mode {
        PredictMode::Mdl4ow => Some(EvtMode::Global),
        PredictMode::Mdl4owC => Some(EvtMode::Classwise),
        _ => None,
    };
    if evt_mode.is_some() && evt.is_none() {
        return Err(Error::InvalidInput(
            "this mode needs fitted tail models".into(),
        ));
    }
    let (norm, _) = normalize(cube);
    let c = net.num_classes() as u16;
    let tiles: Vec<Vec<PixelOut>> = pixels
        .par_chunks(TILE)
        .map(|tile| -> Result<Vec<PixelOut>> {
            let patches = tile
                .iter()
                .map(|&(r, col)| extract_patch(&norm, r, col, PATCH_SIZE))
                .collect::<Result<Vec<Tensor>>>()?;
            let batch = Tensor::stack(&patches)?;
            let out = net.infer(&batch)?;
            let losses = instance_l1(&batch, &out.recon)?;
            Ok(out
                .probs
                .data()
                .chunks_exact(c as usize)
                .zip(losses)
                .map(|(probs, loss)| {
                    let closed = argmax_label(probs);
                    PixelOut {
                        closed,
                        top: probs[closed as usize - 1],
                        softmax_open: softmax_threshold_baseline(probs, z as f32).code(c),
                        loss,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let outs: Vec<PixelOut> = tiles.into_iter().flatten().collect();

    let refitted;
    let evt = match (evt, tails) {
        (Some(e), TailSource::Prediction) if evt_mode.is_some() => {
            let pairs: Vec<(u16, f64)> = outs.iter().map(|p| (p.closed, p.loss)).collect();
            refitted = e.refit(&pairs)?;
            Some(&refitted)
        }
        (e, _) => e,
    };
    let mut raster = PredictionRaster::empty(cube.height(), cube.width());
    for (&(r, col), px) in pixels.iter().zip(&outs) {
        let (score, open) = match (mode, evt_mode) {
            (PredictMode::Closed, _) => (0.0, px.closed),
            (PredictMode::Softmax, _) => (px.top as f64, px.softmax_open),
            (_, Some(m)) => {
                let s = evt.expect("checked above").score(m, px.closed, px.loss);
                (s, decide(px.closed, s, z).code(c))
            }
            (_, None) => unreachable!("evt modes carry a tail mode"),
        };
        let i = r * cube.width() + col;
        raster.closed[i] = px.closed;
        raster.open[i] = open;
        raster.loss[i] = px.loss as f32;
        raster.score[i] = score as f32;
    }
    Ok(raster)
}

/// Every pixel in raster order.
pub fn all_pixels(height: usize, width: usize) -> Vec<(usize, usize)> {
    (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .collect()
}

/// Labeled pixels in raster order, minus any training pixels.
pub fn labeled_pixels(labels: &LabelRaster, exclude: Option<&SplitSpec>) -> Vec<(usize, usize)> {
    match exclude {
        Some(split) => split
            .test_pixels(labels)
            .into_iter()
            .map(|(_, r, c)| (r, c))
            .collect(),
        None => all_pixels(labels.height(), labels.width())
            .into_iter()
            .filter(|&(r, c)| labels.get(r, c) != 0)
            .collect(),
    }
}
