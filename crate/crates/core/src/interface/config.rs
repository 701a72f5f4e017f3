//! JSON run configuration.
//!
//! Five blocks are required: `geometry`, `band`, `phantom`, `solver` and
//! `pipeline`. Inside a block every key is optional and defaults to the
//! reference configuration. Unknown keys are rejected, and validation reports
//! every violation at once rather than stopping at the first.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::forward::SolverSettings;
use crate::grid::{grid_counts, BoundingBox, Geometry, Grid3, PlaneGrid, WavenumberPartition, DEFAULT_MEMORY_BUDGET};
use crate::phantom::{
    MicrosphereSpec, PhantomSpec, BACKGROUND_INDEX, BAND, DEFAULT_CONTRAST, DEFAULT_DOMAIN_PPW, DEFAULT_INTERVALS,
    HALF_WIDTH, MEASUREMENT_Z, OMEGA_Z, PLANE_COUNTS, SPHERE_RADIUS,
};
use crate::reconstruct::{AlgorithmSettings, TailDrift};

pub const BLOCKS: [&str; 5] = ["geometry", "band", "phantom", "solver", "pipeline"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeometryBlock {
    /// Lower corner of the domain.
    pub omega_min: [f64; 3],
    /// Upper corner; its x3 value is the level of the data boundary.
    pub omega_max: [f64; 3],
    pub plane_z: f64,
    pub half_width: f64,
    pub plane_counts: [usize; 2],
}

impl Default for GeometryBlock {
    fn default() -> Self {
        Self {
            omega_min: [-HALF_WIDTH, -HALF_WIDTH, OMEGA_Z[0]],
            omega_max: [HALF_WIDTH, HALF_WIDTH, OMEGA_Z[1]],
            plane_z: MEASUREMENT_Z,
            half_width: HALF_WIDTH,
            plane_counts: PLANE_COUNTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandBlock {
    pub k_low: f64,
    pub k_high: f64,
    pub intervals: usize,
    /// Multiplies both ends of the band.
    pub k_scale: f64,
}

impl Default for BandBlock {
    fn default() -> Self {
        Self {
            k_low: BAND[0],
            k_high: BAND[1],
            intervals: DEFAULT_INTERVALS,
            k_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverBlock {
    pub tol: f64,
    pub max_iter: usize,
    /// Resolution of the volume solves that synthesize data.
    pub points_per_wavelength: f64,
    /// Resolution of the reconstruction grid over the domain.
    pub domain_points_per_wavelength: f64,
    pub memory_budget: u64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            tol: s.tol,
            max_iter: s.max_iter,
            points_per_wavelength: s.points_per_wavelength,
            domain_points_per_wavelength: DEFAULT_DOMAIN_PPW,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineBlock {
    /// Relative amplitude of uniform multiplicative noise on the intensity.
    pub noise: f64,
    pub seed: u64,
    pub epsilon: Option<f64>,
    pub inner_iterations: usize,
    pub c_max: f64,
    pub stop_window_start: usize,
    pub background_index: f64,
    pub tail_drift: TailDrift,
    pub background_layers: usize,
    pub upwind: bool,
}

impl Default for PipelineBlock {
    fn default() -> Self {
        let a = AlgorithmSettings::default();
        Self {
            noise: 0.0,
            seed: 0,
            epsilon: a.epsilon,
            inner_iterations: a.inner_iterations,
            c_max: a.c_max,
            stop_window_start: a.stop_window_start,
            background_index: BACKGROUND_INDEX,
            tail_drift: a.tail_drift,
            background_layers: a.background_layers,
            upwind: a.upwind,
        }
    }
}

/// A validated configuration document.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigDoc {
    pub geometry: GeometryBlock,
    pub band: BandBlock,
    pub phantom: PhantomSpec,
    pub solver: SolverBlock,
    pub pipeline: PipelineBlock,
}

impl Default for ConfigDoc {
    fn default() -> Self {
        Self {
            geometry: GeometryBlock::default(),
            band: BandBlock::default(),
            phantom: PhantomSpec {
                spheres: vec![MicrosphereSpec {
                    center: [0.0; 3],
                    radius: SPHERE_RADIUS,
                    amplitude: DEFAULT_CONTRAST,
                }],
            },
            solver: SolverBlock::default(),
            pipeline: PipelineBlock::default(),
        }
    }
}

/// Collects per-key errors while reading one block.
struct BlockReader<'a> {
    name: &'static str,
    obj: &'a Map<String, Value>,
    errors: &'a mut Vec<String>,
}

impl BlockReader<'_> {
    fn take<T: DeserializeOwned>(&mut self, key: &str, default: T) -> T {
        match self.obj.get(key) {
            None => default,
            Some(v) => match serde_json::from_value(v.clone()) {
                Ok(t) => t,
                Err(e) => {
                    self.errors.push(format!("{}.{key}: {e}", self.name));
                    default
                }
            },
        }
    }

    fn reject_unknown(&mut self, known: &[&str]) {
        for key in self.obj.keys() {
            if !known.contains(&key.as_str()) {
                self.errors.push(format!("{}: unknown key `{key}`", self.name));
            }
        }
    }
}

impl ConfigDoc {
    /// Parses and validates a configuration from JSON text.
    pub fn from_json_str(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Config(
                BLOCKS.iter().map(|b| format!("missing required block `{b}`")).collect(),
            ));
        }
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("parse error: {e}")]))?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self> {
        let Some(root) = value.as_object() else {
            return Err(Error::Config(vec!["top level must be a JSON object".into()]));
        };
        let mut errors = Vec::new();
        for key in root.keys() {
            if !BLOCKS.contains(&key.as_str()) {
                errors.push(format!("unknown top-level key `{key}`"));
            }
        }
        let empty = Map::new();
        let block = |name: &'static str, errors: &mut Vec<String>| -> Option<Map<String, Value>> {
            match root.get(name) {
                None => {
                    errors.push(format!("missing required block `{name}`"));
                    None
                }
                Some(Value::Object(m)) => Some(m.clone()),
                Some(_) => {
                    errors.push(format!("block `{name}` must be an object"));
                    None
                }
            }
        };
        let g = block("geometry", &mut errors);
        let b = block("band", &mut errors);
        let p = block("phantom", &mut errors);
        let s = block("solver", &mut errors);
        let pl = block("pipeline", &mut errors);

        let mut doc = ConfigDoc::default();
        {
            let d = GeometryBlock::default();
            let mut r = BlockReader {
                name: "geometry",
                obj: g.as_ref().unwrap_or(&empty),
                errors: &mut errors,
            };
            r.reject_unknown(&["omega_min", "omega_max", "plane_z", "half_width", "plane_counts"]);
            doc.geometry = GeometryBlock {
                omega_min: r.take("omega_min", d.omega_min),
                omega_max: r.take("omega_max", d.omega_max),
                plane_z: r.take("plane_z", d.plane_z),
                half_width: r.take("half_width", d.half_width),
                plane_counts: r.take("plane_counts", d.plane_counts),
            };
        }
        {
            let d = BandBlock::default();
            let mut r = BlockReader {
                name: "band",
                obj: b.as_ref().unwrap_or(&empty),
                errors: &mut errors,
            };
            r.reject_unknown(&["k_low", "k_high", "intervals", "k_scale"]);
            doc.band = BandBlock {
                k_low: r.take("k_low", d.k_low),
                k_high: r.take("k_high", d.k_high),
                intervals: r.take("intervals", d.intervals),
                k_scale: r.take("k_scale", d.k_scale),
            };
        }
        {
            let d = ConfigDoc::default().phantom;
            let mut r = BlockReader {
                name: "phantom",
                obj: p.as_ref().unwrap_or(&empty),
                errors: &mut errors,
            };
            r.reject_unknown(&["spheres"]);
            doc.phantom = PhantomSpec {
                spheres: r.take("spheres", d.spheres),
            };
        }
        {
            let d = SolverBlock::default();
            let mut r = BlockReader {
                name: "solver",
                obj: s.as_ref().unwrap_or(&empty),
                errors: &mut errors,
            };
            r.reject_unknown(&[
                "tol",
                "max_iter",
                "points_per_wavelength",
                "domain_points_per_wavelength",
                "memory_budget",
            ]);
            doc.solver = SolverBlock {
                tol: r.take("tol", d.tol),
                max_iter: r.take("max_iter", d.max_iter),
                points_per_wavelength: r.take("points_per_wavelength", d.points_per_wavelength),
                domain_points_per_wavelength: r.take("domain_points_per_wavelength", d.domain_points_per_wavelength),
                memory_budget: r.take("memory_budget", d.memory_budget),
            };
        }
        {
            let d = PipelineBlock::default();
            let mut r = BlockReader {
                name: "pipeline",
                obj: pl.as_ref().unwrap_or(&empty),
                errors: &mut errors,
            };
            r.reject_unknown(&[
                "noise",
                "seed",
                "epsilon",
                "inner_iterations",
                "c_max",
                "stop_window_start",
                "background_index",
                "tail_drift",
                "background_layers",
                "upwind",
            ]);
            doc.pipeline = PipelineBlock {
                noise: r.take("noise", d.noise),
                seed: r.take("seed", d.seed),
                epsilon: r.take("epsilon", d.epsilon),
                inner_iterations: r.take("inner_iterations", d.inner_iterations),
                c_max: r.take("c_max", d.c_max),
                stop_window_start: r.take("stop_window_start", d.stop_window_start),
                background_index: r.take("background_index", d.background_index),
                tail_drift: r.take("tail_drift", d.tail_drift),
                background_layers: r.take("background_layers", d.background_layers),
                upwind: r.take("upwind", d.upwind),
            };
        }
        errors.extend(doc.semantic_errors());
        if errors.is_empty() {
            Ok(doc)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Consistency checks across and within blocks.
    pub fn semantic_errors(&self) -> Vec<String> {
        let mut e = Vec::new();
        let g = &self.geometry;
        if let Err(err) = BoundingBox::new(g.omega_min, g.omega_max) {
            e.push(format!("geometry: {err}"));
        }
        if !(g.half_width > 0.0) {
            e.push(format!("geometry.half_width must be > 0, got {}", g.half_width));
        }
        if g.plane_counts.iter().any(|&c| c < 2) {
            e.push("geometry.plane_counts must be >= 2 on each axis".into());
        }
        if !(g.plane_z > g.omega_max[2]) {
            e.push(format!(
                "geometry.plane_z = {} must lie above omega_max[2] = {}",
                g.plane_z, g.omega_max[2]
            ));
        }
        let b = &self.band;
        if !(b.k_low > 0.0) {
            e.push(format!("band.k_low must be > 0, got {}", b.k_low));
        }
        if !(b.k_high > b.k_low) {
            e.push(format!(
                "band.k_low = {} must be below band.k_high = {}",
                b.k_low, b.k_high
            ));
        }
        if b.intervals == 0 {
            e.push("band.intervals must be >= 1".into());
        }
        if !(b.k_scale > 0.0 && b.k_scale <= 1.0) {
            e.push(format!("band.k_scale must lie in (0, 1], got {}", b.k_scale));
        }
        for (i, s) in self.phantom.spheres.iter().enumerate() {
            if let Err(err) = s.validate() {
                e.push(format!("phantom.spheres[{i}]: {err}"));
            } else if BoundingBox::new(g.omega_min, g.omega_max).is_ok_and(|bb| !bb.contains_ball(s.center, s.radius)) {
                e.push(format!("phantom.spheres[{i}]: support leaves the domain"));
            }
        }
        let s = &self.solver;
        if let Err(err) = self.solver_settings().validate() {
            e.push(format!("solver: {err}"));
        }
        if !(s.domain_points_per_wavelength >= 2.0) {
            e.push("solver.domain_points_per_wavelength must be >= 2".into());
        }
        let p = &self.pipeline;
        if !(p.noise >= 0.0 && p.noise.is_finite()) {
            e.push(format!("pipeline.noise must be >= 0, got {}", p.noise));
        }
        if let Err(err) = self.algorithm_settings().validate() {
            e.push(format!("pipeline: {err}"));
        }
        if b.intervals > 0 && b.intervals < p.stop_window_start {
            e.push(format!(
                "band.intervals = {} is below pipeline.stop_window_start = {}",
                b.intervals, p.stop_window_start
            ));
        }
        e
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let g = &self.geometry;
        Geometry::new(
            BoundingBox::new(g.omega_min, g.omega_max)?,
            PlaneGrid::new(g.plane_z, g.half_width, g.plane_counts)?,
        )
    }

    /// Wavenumber partition after applying `k_scale`, descending.
    pub fn partition(&self) -> Result<WavenumberPartition> {
        let b = &self.band;
        WavenumberPartition::new(b.k_scale * b.k_low, b.k_scale * b.k_high, b.intervals)
    }

    pub fn domain_grid(&self) -> Result<Grid3> {
        let geometry = self.geometry()?;
        let k = self.partition()?.k_high();
        Grid3::new(
            grid_counts(&geometry.omega, self.solver.domain_points_per_wavelength, k),
            geometry.omega,
        )
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            points_per_wavelength: self.solver.points_per_wavelength,
            memory_budget: self.solver.memory_budget,
        }
    }

    pub fn algorithm_settings(&self) -> AlgorithmSettings {
        let p = &self.pipeline;
        AlgorithmSettings {
            inner_iterations: p.inner_iterations,
            c_max: p.c_max,
            epsilon: p.epsilon,
            stop_window_start: p.stop_window_start,
            background_index: p.background_index,
            ls_tol: self.solver.tol,
            ls_max_iter: self.solver.max_iter,
            memory_budget: self.solver.memory_budget,
            tail_drift: p.tail_drift,
            background_layers: p.background_layers,
            upwind: p.upwind,
            ..AlgorithmSettings::default()
        }
    }

    /// The document as a JSON value with every key present.
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// The raw JSON text and the validated document.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub raw: Value,
    pub doc: ConfigDoc,
}

pub fn read_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)?;
    let doc = ConfigDoc::from_json_str(&text)?;
    let raw = serde_json::from_str(&text).expect("validated text parses");
    Ok(LoadedConfig { raw, doc })
}
