use pmace::driver::{run_bm_pmace, AlgoConfig};
use pmace::grid::overlap_ratio;
use pmace::io::array_file::{read_complex, read_complex_stack};
use pmace::io::config::{load_toml, save_toml};
use pmace::io::dataset::{load_dataset, save_dataset, Dataset, DatasetManifest};
use pmace::io::output::{emit_plots, read_trace, save_result, TRACE_FILE};
use pmace::io::preprocess::{preprocess_dataset, suggest_outliers, PreprocessConfig};
use pmace::metrics::{forward_nrmse, nrmse};
use pmace::synthetic::{crop, SyntheticSpec};
use pmace::{ComplexImage, ProbeSet, PtychoError, Result};

use crate::args::{EvaluateArgs, InfoArgs, PreprocessArgs, ReconstructArgs, SimulateArgs};

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(p) => load_toml(p)?,
        None => SyntheticSpec::default(),
    };
    args.apply(&mut spec);
    let case = spec.generate()?;
    let mut manifest = DatasetManifest::for_grid(&case.grid);
    manifest.ground_truth_image = Some("truth_image.bin".into());
    manifest.ground_truth_probes = Some("truth_probes.bin".into());
    manifest.wavelength = Some(spec.fresnel.wavelength);
    manifest.distance = Some(spec.fresnel.distance);
    manifest.pixel_pitch = Some(spec.fresnel.sample_spacing);
    let (frames, grid) = case.measurements.into_parts();
    let dataset = Dataset {
        manifest,
        frames,
        grid,
        darks: None,
        truth_image: Some(case.truth),
        truth_probes: Some(case.probes.into_modes()),
    };
    let path = save_dataset(&args.out, &dataset)?;
    save_toml(&args.out.join("spec.toml"), &spec)?;
    println!("wrote {} ({} scan positions)", path.display(), dataset.frames.len());
    Ok(())
}

pub fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => load_toml(p)?,
        None => AlgoConfig::default(),
    };
    args.algo.apply(&mut cfg);
    cfg.validate()?;
    let data = load_dataset(&args.data)?;
    let fresnel = data
        .fresnel()
        .ok_or_else(|| PtychoError::Config("manifest needs wavelength, distance and pixel_pitch".into()))?;
    let measurements = data.measurements()?;
    log::info!(
        "{} scan positions, {}x{} image, {}x{} patches",
        measurements.len(),
        data.manifest.image_dims[0],
        data.manifest.image_dims[1],
        data.manifest.patch_size,
        data.manifest.patch_size
    );
    let result = run_bm_pmace(&measurements, &cfg, &fresnel, data.truth_image.as_ref())?;
    save_result(&result, &args.out)?;
    save_toml(&args.out.join("config.toml"), &cfg)?;
    if !args.no_plots {
        emit_plots(&result, &args.out)?;
    }
    let probes = ProbeSet::new(result.probes.clone())?;
    let f = forward_nrmse(&result.image, &probes, &measurements)?;
    if let Some(last) = result.records.last() {
        println!("{last}");
    }
    println!("forward_nrmse {f:.6e}");
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn preprocess(args: PreprocessArgs) -> Result<()> {
    let raw = load_dataset(&args.data)?;
    let mut cfg = match &args.config {
        Some(p) => load_toml(p)?,
        None => PreprocessConfig {
            dark_frame_count: raw.darks.as_ref().map_or(0, Vec::len),
            outlier_indices: Vec::new(),
            crop_size: raw.manifest.patch_size,
            tukey_shape: 0.5,
        },
    };
    args.apply(&mut cfg);
    let suggested = suggest_outliers(&raw.frames);
    if !suggested.is_empty() {
        log::info!("frames with unusual total counts (review for outlier_indices): {suggested:?}");
    }
    let prepared = preprocess_dataset(&raw, &cfg)?;
    let path = save_dataset(&args.out, &prepared)?;
    save_toml(&args.out.join("preprocess.toml"), &cfg)?;
    let (r, c) = prepared.frames.first().map(|f| f.dim()).unwrap_or((0, 0));
    println!("wrote {} ({} frames of {r}x{c})", path.display(), prepared.frames.len());
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let trace = read_trace(&args.result.join(TRACE_FILE))?;
    match trace.last() {
        Some(last) => {
            println!("iterations {}", trace.len());
            println!("modes {}", last.modes);
            println!("final_ec {:.6e}", last.ec);
        }
        None => println!("iterations 0"),
    }
    let Some(data_path) = &args.data else {
        return Ok(());
    };
    let data = load_dataset(data_path)?;
    let image = ComplexImage::new(read_complex(&args.result.join("image.bin"))?)?;
    let probes = ProbeSet::new(read_complex_stack(&args.result.join("probes.bin"))?)?;
    let measurements = data.measurements()?;
    println!("forward_nrmse {:.6e}", forward_nrmse(&image, &probes, &measurements)?);
    if let Some(truth) = &data.truth_image {
        if truth.dim() != image.dim() {
            return Err(PtychoError::Shape("reconstruction and ground truth differ in size".into()));
        }
        let (rows, cols) = image.dim();
        let m = args.margin;
        if 2 * m >= rows || 2 * m >= cols {
            return Err(PtychoError::InvalidParam(format!("margin {m} leaves no pixels")));
        }
        let e = crop(image.as_array(), m..rows - m, m..cols - m);
        let t = crop(truth.as_array(), m..rows - m, m..cols - m);
        println!("nrmse {:.6e}", nrmse(&e, &t)?);
    }
    Ok(())
}

pub fn info(args: InfoArgs) -> Result<()> {
    let data = load_dataset(&args.data)?;
    let m = &data.manifest;
    let (r, c) = data.frames.first().map(|f| f.dim()).unwrap_or((0, 0));
    println!("version {}", m.version);
    println!("image {}x{}", m.image_dims[0], m.image_dims[1]);
    println!("patch {}", m.patch_size);
    println!("frames {} of {r}x{c} ({:?}, dc_centered={})", data.frames.len(), m.kind, m.dc_centered);
    println!("dark_frames {}", data.darks.as_ref().map_or(0, Vec::len));
    println!("overlap {:.3}", overlap_ratio(&data.grid)?);
    match data.fresnel() {
        Some(f) => {
            println!("wavelength {:e} distance {:e} pixel_pitch {:e}", f.wavelength, f.distance, f.sample_spacing)
        }
        None => println!("propagation metadata missing"),
    }
    println!(
        "ground_truth image={} probes={}",
        data.truth_image.is_some(),
        data.truth_probes.as_ref().map_or(0, Vec::len)
    );
    Ok(())
}
