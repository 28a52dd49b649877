//! Scratch study of the hexagon DDS/error relationship. Run explicitly:
//! cargo test --release --test hexstudy -- --ignored --nocapture

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use diffeo_core::darcy::{generate_sample, DarcyConfig, PolygonFamily};
use diffeo_core::dds::{dds, dds_with_mode, GeometryImage, NccMode};
use diffeo_core::fno::{
    evaluate, load_checkpoint, save_checkpoint, train, training_pair, FnoConfig, TrainSample,
};

#[test]
#[ignore]
fn dump_hexagon_study() {
    let base = DarcyConfig {
        n: 125,
        resolution: 64,
        seed: 906,
        ..DarcyConfig::default()
    };
    let train_samples: Vec<_> = (0..100usize)
        .into_par_iter()
        .map(|i| {
            let scale = [1.0, 1.5, 2.0][i % 3];
            generate_sample(&DarcyConfig { scale, ..base.clone() }, i).unwrap()
        })
        .collect();
    let target_epochs = 400;
    let ckpt = Path::new("/root/scratch/hex_model.ckpt");
    let pairs: Vec<TrainSample> =
        train_samples.iter().map(|s| training_pair(&s.grid).unwrap()).collect();
    let cfg = FnoConfig {
        n_layers: 3,
        width: 16,
        modes: (8, 8),
        hidden: 32,
        lr: 2e-3,
        batch_size: 10,
        epochs: target_epochs,
        seed: 906,
        ..FnoConfig::default()
    };
    let resume = if ckpt.exists() {
        Some(load_checkpoint(ckpt).unwrap())
    } else {
        None
    };
    let model = match &resume {
        Some((_, _, e)) if *e >= target_epochs => resume.unwrap().0,
        _ => {
            let (model, adam, log) = train(&cfg, &pairs, &[], resume).unwrap();
            std::fs::create_dir_all("/root/scratch").unwrap();
            save_checkpoint(ckpt, &model, &adam, target_epochs).unwrap();
            eprintln!("final train loss {:.4e}", log.last().unwrap().train_loss);
            model
        }
    };

    let hex_cfg = DarcyConfig {
        n: 50,
        family: PolygonFamily::Hexagon,
        ..base.clone()
    };
    let hexes: Vec<_> = (0..50usize)
        .into_par_iter()
        .map(|i| generate_sample(&hex_cfg, i).unwrap())
        .collect();
    let grids: Vec<_> = hexes.iter().map(|s| s.grid.clone()).collect();
    let errs = evaluate(&model, &grids).unwrap();
    let train_images: Vec<GeometryImage> = train_samples
        .iter()
        .map(|s| GeometryImage::from_grid(&s.grid).unwrap())
        .collect();

    // Fixed-coefficient variant: same polygons, c1 = c2 = 0.5.
    let fixed_cfg = DarcyConfig { c_range: (0.5, 0.5), ..hex_cfg.clone() };
    let fixed: Vec<_> = (0..50usize)
        .into_par_iter()
        .map(|i| generate_sample(&fixed_cfg, i).unwrap())
        .collect();
    let fixed_grids: Vec<_> = fixed.iter().map(|s| s.grid.clone()).collect();
    let fixed_errs = evaluate(&model, &fixed_grids).unwrap();
    let mut g = std::fs::File::create("/root/scratch/hexstudy_fixedc.csv").unwrap();
    writeln!(g, "i,dds,dds_pc,err").unwrap();
    for (i, s) in fixed.iter().enumerate() {
        let img = GeometryImage::from_grid(&s.grid).unwrap();
        let d = dds(&img, &train_images).unwrap();
        let dpc = dds_with_mode(&img, &train_images, NccMode::PerChannel).unwrap();
        writeln!(g, "{i},{d},{dpc},{}", fixed_errs[i]).unwrap();
    }

    let mut f = std::fs::File::create("/root/scratch/hexstudy.csv").unwrap();
    writeln!(f, "i,dds,err,c1,c2,x1,y1,x2,y2,x3,x4").unwrap();
    for (i, s) in hexes.iter().enumerate() {
        let d = dds(&GeometryImage::from_grid(&s.grid).unwrap(), &train_images).unwrap();
        let p = s.polygon;
        writeln!(
            f,
            "{i},{d},{},{},{},{},{},{},{},{},{}",
            errs[i],
            s.coeff.c1,
            s.coeff.c2,
            p.x1,
            p.y1,
            p.x2,
            p.y2,
            p.x3,
            p.x4.unwrap()
        )
        .unwrap();
    }
}
