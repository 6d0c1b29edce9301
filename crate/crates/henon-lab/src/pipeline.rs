//! Fields → mollified fields → measure, with an on-disk field cache.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::field::{build_field, mollify, sublevel_thresholds, GreenField, Thresholds, DEFAULT_NODE_LIMIT};
use crate::green::{GreenEngine, GreenKind};
use crate::grid::Grid4;
use crate::io;
use crate::map::HenonMap;
use crate::measure::{build_measure, default_kappa, DiscreteMeasure, MeasureOptions};
use crate::observable::{ObsSpec, Observable};
use crate::Result;

/// Everything downstream experiments need from one configuration.
pub struct Lab {
    pub map: HenonMap,
    pub grid: Grid4,
    /// Raw max(G⁺, G⁻) at the nodes.
    pub raw: GreenField,
    /// Mollified G⁺ and G⁻.
    pub plus: GreenField,
    pub minus: GreenField,
    /// G_λ = max of the mollified fields.
    pub lambda: Arc<GreenField>,
    pub measure: DiscreteMeasure,
    pub delta: f64,
}

#[derive(Serialize)]
struct CacheKey<'a> {
    format: u32,
    map: &'a HenonMap,
    grid: &'a Grid4,
    tol: f64,
    n_max: usize,
    kind: u8,
}

fn cache_path(dir: &Path, key: &CacheKey) -> PathBuf {
    let json = serde_json::to_vec(key).expect("cache key serializes");
    let digest = Sha256::digest(&json);
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("field-{hex}.bin"))
}

/// Raw G⁺ or G⁻ on the configured grid, read from `cache` when present.
pub fn raw_field(cfg: &ExperimentConfig, kind: GreenKind, cache: Option<&Path>) -> Result<GreenField> {
    let map = cfg.map.build()?;
    let grid = Grid4::cube(cfg.grid.resolution, cfg.grid.radius)?;
    let key = CacheKey {
        format: io::FORMAT_VERSION,
        map: &map,
        grid: &grid,
        tol: cfg.green.tol,
        n_max: cfg.green.n_max,
        kind: kind.code(),
    };
    let path = cache.map(|d| cache_path(d, &key));
    if let Some(p) = path.as_deref().filter(|p| p.exists()) {
        let f = io::load_field(p)?;
        if f.geom.same_as(&grid) && f.kind == kind {
            return Ok(f);
        }
    }
    let engine = GreenEngine::new(&map);
    let (f, _) = build_field(&engine, grid, kind, cfg.green.tol, cfg.green.n_max, DEFAULT_NODE_LIMIT)?;
    if let Some(p) = path {
        std::fs::create_dir_all(p.parent().expect("cache path has a parent"))?;
        io::save_field(&p, &f)?;
    }
    Ok(f)
}

pub fn build_lab(cfg: &ExperimentConfig, cache: Option<&Path>) -> Result<Lab> {
    let map = cfg.map.build()?;
    let grid = Grid4::cube(cfg.grid.resolution, cfg.grid.radius)?;
    let gp = raw_field(cfg, GreenKind::Forward, cache)?;
    let gm = raw_field(cfg, GreenKind::Backward, cache)?;
    let rho = cfg.mollify_cells * grid.h();
    let plus = mollify(&gp, rho)?;
    let minus = mollify(&gm, rho)?;
    let raw = GreenField::combine(&gp, &gm)?;
    let lambda = Arc::new(GreenField::combine(&plus, &minus)?);
    let opts = MeasureOptions {
        kappa: default_kappa(),
        clip_ceiling: cfg.measure.clip_ceiling,
        margin: cfg.measure.margin,
    };
    let measure = build_measure(&plus, &minus, &opts)?;
    Ok(Lab {
        map,
        grid,
        raw,
        plus,
        minus,
        lambda,
        measure,
        delta: cfg.thresholds.delta,
    })
}

impl Lab {
    pub fn thresholds(&self) -> Result<Thresholds> {
        sublevel_thresholds(&self.lambda, &self.raw, self.delta)
    }

    /// Builds a catalog observable; `ext:` and `loc:` use G_λ and the thresholds.
    pub fn observable(&self, label: &str) -> Result<Observable> {
        let spec = ObsSpec::parse(label)?;
        if spec.needs_field() {
            let th = self.thresholds()?;
            spec.build(Some((&self.lambda, &th)))
        } else {
            spec.build(None)
        }
    }

    /// Mass-weighted mean of the raw G over the measure.
    pub fn mean_green(&self) -> f64 {
        let raw = &self.raw.values;
        self.measure.integrate_fn_indexed(|idx| raw[idx])
    }
}
