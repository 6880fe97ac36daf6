//! Forward sensor model generating labeled synthetic scans with known
//! reflectivity, incidence angle, and near-range efficiency, plus a
//! simulated factory-preprocessed channel. This is the ground-truth oracle
//! behind every calibration and transfer property test.
//!
//! Per ray the model intersects the nearest surface and emits
//!
//! ```text
//! intensity = eta(R) * E * rho * cos(alpha) / R^2 * (1 + noise)
//! ```
//!
//! with `eta(R) = 1` beyond the near-range threshold and a continuous
//! exponential ramp below it, and multiplicative Gaussian noise truncated
//! at ±3σ. Generation is deterministic: each ray draws from its own
//! seeded stream, so the same config yields bit-identical scans under any
//! parallel schedule.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::UnitVector3;
use crate::scan::{Point, Scan, SensorKind, TerrainClass};
use crate::util::atomic_write;

/// Default emitted-power constant. Arbitrary scale chosen so synthetic
/// calibrated intensities land in a plottable range; every property the
/// tests check is scale-invariant.
pub const DEFAULT_EMITTED_POWER: f64 = 1.0e4;

/// Surface geometry: infinite plane or sphere.
#[derive(Debug, Clone, Copy)]
pub enum SurfaceGeometry {
    Plane {
        point: Vector3<f64>,
        normal: UnitVector3,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
}

/// One scene surface with its reflectivity, class, and relative intensity
/// noise.
#[derive(Debug, Clone, Copy)]
pub struct SceneSurface {
    pub geometry: SurfaceGeometry,
    pub rho: f64,
    pub class: TerrainClass,
    pub noise_sigma: f64,
}

impl SceneSurface {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!(
                "surface reflectivity must be positive, got {}",
                self.rho
            )));
        }
        if !(0.0..=0.2).contains(&self.noise_sigma) {
            return Err(Error::Config(format!(
                "noise sigma must lie in [0, 0.2], got {}",
                self.noise_sigma
            )));
        }
        if let SurfaceGeometry::Sphere { radius, .. } = self.geometry {
            if radius <= 0.0 {
                return Err(Error::Config(format!(
                    "sphere radius must be positive, got {radius}"
                )));
            }
        }
        Ok(())
    }
}

/// Optical efficiency below the near-range threshold: 1 for `R >= threshold`
/// and `exp(-shape_k * (threshold - R))` below it (continuous at the
/// threshold).
///
/// The defaults put the intensity maximum of a constant-reflectivity
/// surface at the threshold itself: raw intensity rises across the whole
/// observable near zone (ranges past the self-return cutoff) and rolls off
/// as 1/R² beyond. That needs `shape_k > 2 / R` down to the cutoff, hence
/// 4/m for a 0.5 m cutoff.
#[derive(Debug, Clone, Copy)]
pub struct NearRangeModel {
    pub threshold: f64,
    pub shape_k: f64,
}

impl Default for NearRangeModel {
    fn default() -> Self {
        NearRangeModel {
            threshold: 6.0,
            shape_k: 4.0,
        }
    }
}

impl NearRangeModel {
    pub fn eta(&self, range: f64) -> f64 {
        if range >= self.threshold {
            1.0
        } else {
            (-self.shape_k * (self.threshold - range)).exp()
        }
    }
}

/// Hidden factory range compensation `g(r) = coeff * r^power` applied by the
/// simulated Velodyne channel. The true transfer ratio is `Q(r) = 1/g(r)`.
#[derive(Debug, Clone, Copy)]
pub struct VelodyneCompensation {
    pub coeff: f64,
    pub power: f64,
}

impl VelodyneCompensation {
    pub fn g(&self, range: f64) -> f64 {
        self.coeff * range.powf(self.power)
    }

    /// Hidden truth for transfer-recovery tests.
    pub fn true_q(&self, range: f64) -> f64 {
        1.0 / self.g(range)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SensorMode {
    RawOuster,
    SimulatedVelodyne(VelodyneCompensation),
}

/// Regular azimuth × elevation ray grid (angles in radians). Azimuth
/// rotates about +z from the +x axis; elevation tilts toward +z.
#[derive(Debug, Clone, Copy)]
pub struct RayGrid {
    pub az_start: f64,
    pub az_end: f64,
    pub az_count: usize,
    pub el_start: f64,
    pub el_end: f64,
    pub el_count: usize,
}

impl RayGrid {
    pub fn ray_count(&self) -> usize {
        self.az_count * self.el_count
    }

    pub fn direction(&self, ray_index: usize) -> UnitVector3 {
        let iaz = ray_index % self.az_count;
        let iel = ray_index / self.az_count;
        let frac = |i: usize, n: usize, lo: f64, hi: f64| {
            if n <= 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let az = frac(iaz, self.az_count, self.az_start, self.az_end);
        let el = frac(iel, self.el_count, self.el_start, self.el_end);
        UnitVector3::normalized(Vector3::new(
            el.cos() * az.cos(),
            el.cos() * az.sin(),
            el.sin(),
        ))
        .expect("grid direction is always unit")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SensorSimConfig {
    pub grid: RayGrid,
    pub seed: u64,
    pub mode: SensorMode,
    pub emitted_power: f64,
    pub near_range: NearRangeModel,
}

impl SensorSimConfig {
    pub fn raw(grid: RayGrid, seed: u64) -> SensorSimConfig {
        SensorSimConfig {
            grid,
            seed,
            mode: SensorMode::RawOuster,
            emitted_power: DEFAULT_EMITTED_POWER,
            near_range: NearRangeModel::default(),
        }
    }
}

/// Per-point ground truth attached to a generated scan.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthPoint {
    pub rho: f64,
    pub alpha: f64,
    pub eta: f64,
    pub class: TerrainClass,
    /// Sensor-facing analytic surface normal at the hit.
    pub normal: UnitVector3,
}

fn intersect(geometry: &SurfaceGeometry, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    match *geometry {
        SurfaceGeometry::Plane { point, normal } => {
            let n = normal.as_vector();
            let denom = n.dot(dir);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = n.dot(&point) / denom;
            (t > 1e-9).then_some((t, *n))
        }
        SurfaceGeometry::Sphere { center, radius } => {
            // |t d - c|^2 = r^2 with unit d.
            let b = dir.dot(&center);
            let disc = b * b - (center.norm_squared() - radius * radius);
            if disc < 0.0 {
                return None;
            }
            let sqrt_disc = disc.sqrt();
            let t = if b - sqrt_disc > 1e-9 {
                b - sqrt_disc
            } else if b + sqrt_disc > 1e-9 {
                b + sqrt_disc
            } else {
                return None;
            };
            let hit = dir * t;
            let n = (hit - center) / radius;
            Some((t, n))
        }
    }
}

/// Cast the configured ray grid into the scene. Rays that miss every
/// surface emit nothing. Returns the scan (labeled, sensor tag per mode)
/// and per-point ground truth.
pub fn generate_scan(
    scene: &[SceneSurface],
    config: &SensorSimConfig,
) -> Result<(Scan, Vec<GroundTruthPoint>)> {
    if scene.is_empty() {
        return Err(Error::Config("scene has no surfaces".into()));
    }
    for s in scene {
        s.validate()?;
    }

    let n_rays = config.grid.ray_count();
    let hits = exec::map_indices(n_rays, |ray_index| {
        cast_ray(scene, config, ray_index)
    });

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut truth = Vec::new();
    for hit in hits.into_iter().flatten() {
        let (point, gt) = hit;
        points.push(point);
        labels.push(gt.class);
        truth.push(gt);
    }

    let mut scan = Scan::new(points, SensorKind::OusterRaw).with_labels(labels)?;
    if let SensorMode::SimulatedVelodyne(comp) = config.mode {
        scan = simulate_velodyne_channel(&scan, &comp);
    }
    Ok((scan, truth))
}

fn cast_ray(
    scene: &[SceneSurface],
    config: &SensorSimConfig,
    ray_index: usize,
) -> Option<(Point, GroundTruthPoint)> {
    let beam = config.grid.direction(ray_index);
    let dir = beam.as_vector();

    let mut best: Option<(f64, Vector3<f64>, &SceneSurface)> = None;
    for surface in scene {
        if let Some((t, n)) = intersect(&surface.geometry, dir) {
            if best.as_ref().is_none_or(|(bt, _, _)| t < *bt) {
                best = Some((t, n, surface));
            }
        }
    }
    let (range, raw_normal, surface) = best?;

    // Sensor-facing normal and incidence angle.
    let mut n = raw_normal;
    if n.dot(dir) > 0.0 {
        n = -n;
    }
    let cos_alpha = dir.dot(&n).abs().min(1.0);
    let alpha = cos_alpha.acos();

    let eta = config.near_range.eta(range);
    let mut intensity =
        eta * config.emitted_power * surface.rho * cos_alpha / (range * range);
    if surface.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(ray_index as u64);
        let normal = Normal::new(0.0, surface.noise_sigma).expect("sigma validated");
        let draw: f64 = normal.sample(&mut rng);
        let bound = 3.0 * surface.noise_sigma;
        intensity *= 1.0 + draw.clamp(-bound, bound);
    }

    let hit = dir * range;
    let point = Point::new(hit.x, hit.y, hit.z, intensity);
    let gt = GroundTruthPoint {
        rho: surface.rho,
        alpha,
        eta,
        class: surface.class,
        normal: UnitVector3::checked(n).expect("surface normal is unit"),
    };
    Some((point, gt))
}

/// Apply the hidden factory compensation to a raw scan: intensity becomes
/// `clamp(raw * g(r), 0, 255)` and the sensor tag flips to Velodyne.
/// Geometry and labels are unchanged.
pub fn simulate_velodyne_channel(scan: &Scan, comp: &VelodyneCompensation) -> Scan {
    let points = scan
        .points
        .iter()
        .map(|p| {
            let r = p.range();
            Point::new(p.x, p.y, p.z, (p.intensity * comp.g(r)).clamp(0.0, 255.0))
        })
        .collect();
    Scan {
        points,
        labels: scan.labels.clone(),
        sensor: SensorKind::VelodynePreprocessed,
    }
}

/// Write the ground-truth sidecar: one `<idx> <rho> <alpha> <eta> <class>`
/// line per point.
pub fn write_ground_truth(truth: &[GroundTruthPoint], path: &std::path::Path) -> Result<()> {
    let mut out = String::new();
    for (idx, gt) in truth.iter().enumerate() {
        out.push_str(&format!(
            "{idx} {} {} {} {}\n",
            gt.rho,
            gt.alpha,
            gt.eta,
            gt.class.name()
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// Parse a ground-truth sidecar written by [`write_ground_truth`]. Normals
/// are not stored in the sidecar and come back as +z placeholders.
pub fn read_ground_truth(path: &std::path::Path) -> Result<Vec<GroundTruthPoint>> {
    let text = crate::util::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: {detail}", lineno + 1),
        };
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", tok.len())));
        }
        let idx: usize = tok[0].parse().map_err(|_| err("bad index".into()))?;
        if idx != out.len() {
            return Err(err(format!("expected index {}, got {idx}", out.len())));
        }
        let parse_f = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| err(format!("bad {what} `{s}`")))
        };
        out.push(GroundTruthPoint {
            rho: parse_f(tok[1], "rho")?,
            alpha: parse_f(tok[2], "alpha")?,
            eta: parse_f(tok[3], "eta")?,
            class: TerrainClass::from_name(tok[4])
                .ok_or_else(|| err(format!("unknown class `{}`", tok[4])))?,
            normal: UnitVector3::from_components(0.0, 0.0, 1.0).unwrap(),
        });
    }
    Ok(out)
}

/// A parsed scene spec: surfaces plus the simulator config.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub surfaces: Vec<SceneSurface>,
    pub config: SensorSimConfig,
}

/// Parse a plain-text scene spec. One directive per line, `#` comments:
///
/// ```text
/// rays <az0_deg> <az1_deg> <n_az> <el0_deg> <el1_deg> <n_el>
/// seed <u64>
/// power <f64>
/// near_range <threshold_m> <shape_k>
/// velodyne <coeff> <power>
/// plane <px> <py> <pz> <nx> <ny> <nz> <rho> <class> <sigma>
/// sphere <cx> <cy> <cz> <radius> <rho> <class> <sigma>
/// ```
///
/// A `rays` line and at least one surface are required. Errors carry the
/// offending line number.
pub fn parse_scene_spec(text: &str) -> Result<SceneSpec> {
    let mut grid: Option<RayGrid> = None;
    let mut seed = 0u64;
    let mut emitted_power = DEFAULT_EMITTED_POWER;
    let mut near_range = NearRangeModel::default();
    let mut mode = SensorMode::RawOuster;
    let mut surfaces = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = lineno + 1;
        let err = |detail: String| Error::SceneSpec {
            line: lineno,
            detail,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let expect = |n: usize| -> Result<()> {
            if tokens.len() != n + 1 {
                Err(err(format!(
                    "`{}` takes {n} argument(s), got {}",
                    tokens[0],
                    tokens.len() - 1
                )))
            } else {
                Ok(())
            }
        };
        let num = |i: usize| -> Result<f64> {
            tokens[i]
                .parse()
                .map_err(|_| err(format!("bad number `{}`", tokens[i])))
        };
        match tokens[0] {
            "rays" => {
                expect(6)?;
                let counts: Result<Vec<usize>> = [3, 6].iter()
                    .map(|&i| {
                        tokens[i]
                            .parse::<usize>()
                            .map_err(|_| err(format!("bad count `{}`", tokens[i])))
                    })
                    .collect();
                let counts = counts?;
                if counts.contains(&0) {
                    return Err(err("ray counts must be positive".into()));
                }
                grid = Some(RayGrid {
                    az_start: num(1)?.to_radians(),
                    az_end: num(2)?.to_radians(),
                    az_count: counts[0],
                    el_start: num(4)?.to_radians(),
                    el_end: num(5)?.to_radians(),
                    el_count: counts[1],
                });
            }
            "seed" => {
                expect(1)?;
                seed = tokens[1]
                    .parse()
                    .map_err(|_| err(format!("bad seed `{}`", tokens[1])))?;
            }
            "power" => {
                expect(1)?;
                emitted_power = num(1)?;
                if emitted_power <= 0.0 {
                    return Err(err("power must be positive".into()));
                }
            }
            "near_range" => {
                expect(2)?;
                near_range = NearRangeModel {
                    threshold: num(1)?,
                    shape_k: num(2)?,
                };
            }
            "velodyne" => {
                expect(2)?;
                mode = SensorMode::SimulatedVelodyne(VelodyneCompensation {
                    coeff: num(1)?,
                    power: num(2)?,
                });
            }
            "plane" | "sphere" => {
                let is_plane = tokens[0] == "plane";
                expect(if is_plane { 9 } else { 7 })?;
                let class_tok = tokens[tokens.len() - 2];
                let class = TerrainClass::from_name(class_tok)
                    .ok_or_else(|| err(format!("unknown class `{class_tok}`")))?;
                let sigma = num(tokens.len() - 1)?;
                let geometry = if is_plane {
                    SurfaceGeometry::Plane {
                        point: Vector3::new(num(1)?, num(2)?, num(3)?),
                        normal: UnitVector3::from_components(num(4)?, num(5)?, num(6)?)
                            .map_err(|e| err(e.to_string()))?,
                    }
                } else {
                    SurfaceGeometry::Sphere {
                        center: Vector3::new(num(1)?, num(2)?, num(3)?),
                        radius: num(4)?,
                    }
                };
                let rho = num(if is_plane { 7 } else { 5 })?;
                let surface = SceneSurface {
                    geometry,
                    rho,
                    class,
                    noise_sigma: sigma,
                };
                surface.validate().map_err(|e| err(e.to_string()))?;
                surfaces.push(surface);
            }
            other => return Err(err(format!("unknown directive `{other}`"))),
        }
    }

    let grid = grid.ok_or(Error::SceneSpec {
        line: 0,
        detail: "scene spec needs a `rays` line".into(),
    })?;
    if surfaces.is_empty() {
        return Err(Error::SceneSpec {
            line: 0,
            detail: "scene spec needs at least one surface".into(),
        });
    }
    Ok(SceneSpec {
        surfaces,
        config: SensorSimConfig {
            grid,
            seed,
            mode,
            emitted_power,
            near_range,
        },
    })
}

pub mod scenes {
    //! Scene presets used by tests, benches, and the demo pipeline.

    use super::*;

    /// A wall facing the sensor at `distance` along +x. Points on it span
    /// the full incidence-angle sweep `arccos(distance / range)`.
    pub fn facing_plane(
        distance: f64,
        rho: f64,
        class: TerrainClass,
        noise_sigma: f64,
    ) -> SceneSurface {
        SceneSurface {
            geometry: SurfaceGeometry::Plane {
                point: Vector3::new(distance, 0.0, 0.0),
                normal: UnitVector3::from_components(-1.0, 0.0, 0.0).unwrap(),
            },
            rho,
            class,
            noise_sigma,
        }
    }

    /// A field of spheres staggered in range so that every range bin
    /// contains near-zero incidence angles somewhere — the premise the
    /// max-intensity-per-range extraction relies on (terrain at many
    /// distances and orientations does the same in real data).
    ///
    /// Sphere fronts sit `front_spacing` apart from `first_front` through
    /// `last_front`; each sphere's radius is `radius_factor` of its center
    /// distance, which keeps every sphere the same angular size. Spheres
    /// occupy disjoint cells of an azimuth × elevation lattice spanning
    /// roughly ±0.6 × ±0.45 rad, so none occludes another as long as
    /// `radius_factor` stays below ~0.055.
    pub fn sphere_field(
        first_front: f64,
        last_front: f64,
        front_spacing: f64,
        radius_factor: f64,
        rho: f64,
        class: TerrainClass,
        noise_sigma: f64,
    ) -> Vec<SceneSurface> {
        assert!(radius_factor > 0.0 && radius_factor < 0.06);
        let count = ((last_front - first_front) / front_spacing).floor() as usize + 1;
        // Field aspect is 1.2 rad az by 0.9 rad el; split cells accordingly.
        let cols = ((count as f64 * 4.0 / 3.0).sqrt().ceil() as usize).max(1);
        let rows = count.div_ceil(cols);
        let mut scene = Vec::with_capacity(count);
        for k in 0..count {
            let front = first_front + k as f64 * front_spacing;
            let dist = front / (1.0 - radius_factor);
            let radius = dist * radius_factor;
            let col = k % cols;
            let row = k / cols;
            let az = -0.6 + 1.2 * (col as f64 + 0.5) / cols as f64;
            let el = -0.45 + 0.9 * (row as f64 + 0.5) / rows as f64;
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            scene.push(SceneSurface {
                geometry: SurfaceGeometry::Sphere {
                    center: dir * dist,
                    radius,
                },
                rho,
                class,
                noise_sigma,
            });
        }
        scene
    }

    /// Dense grid covering the whole sphere-field lattice.
    pub fn sphere_field_grid(rays_per_axis: usize) -> RayGrid {
        RayGrid {
            az_start: -0.7,
            az_end: 0.7,
            az_count: rays_per_axis,
            el_start: -0.55,
            el_end: 0.55,
            el_count: rays_per_axis,
        }
    }

    /// Grid that sweeps a facing plane at `distance` out to `max_range`.
    pub fn plane_sweep_grid(distance: f64, max_range: f64, az_count: usize, el_count: usize) -> RayGrid {
        let max_off_axis = (distance / max_range).acos();
        RayGrid {
            az_start: -max_off_axis,
            az_end: max_off_axis,
            az_count,
            el_start: -max_off_axis * 0.25,
            el_end: max_off_axis * 0.25,
            el_count,
        }
    }
}
