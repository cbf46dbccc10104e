//! Microphone array geometry, the azimuth/elevation grid and far-field steering vectors.
//!
//! Coordinates are right-handed with x pointing forward, y to the left and z up.
//! Angles are given in degrees at the API surface.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound in air, m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Default number of azimuth samples over [-90°, 90°].
pub const DEFAULT_AZIMUTHS: usize = 91;
/// Default number of elevation samples over [-90°, 90°].
pub const DEFAULT_ELEVATIONS: usize = 41;

/// Default inter-microphone spacing (linear) or radius (hexagonal) of the builtin arrays, meters.
pub const DEFAULT_SPACING_M: f64 = 0.05;

pub type Vec3 = [f64; 3];

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// A look direction on the front hemisphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    azimuth_deg: f64,
    elevation_deg: f64,
}

impl Direction {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        for (what, v) in [("azimuth", azimuth_deg), ("elevation", elevation_deg)] {
            if !v.is_finite() || !(-90.0..=90.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "{what} {v} outside [-90, 90] degrees"
                )));
            }
        }
        Ok(Self {
            azimuth_deg,
            elevation_deg,
        })
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }

    /// Unit vector `[cos β cos α, cos β sin α, sin β]`.
    pub fn unit_vector(&self) -> Vec3 {
        let az = self.azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    }
}

/// Convenience free-function form of [`Direction::unit_vector`].
pub fn unit_direction(d: Direction) -> Vec3 {
    d.unit_vector()
}

/// Far-field propagation delay of a microphone at `position` for a wave with direction `u`, seconds.
///
/// This is the single place the delay sign is defined: the steering vectors use
/// `exp(-j ω τ)` and the simulator delays channel `i` by `τ_i`, so a simulated
/// source from `u` is matched by the steering vector for `u`.
pub fn propagation_delay(position: &Vec3, u: &Vec3) -> f64 {
    dot(position, u) / SPEED_OF_SOUND
}

/// Rectangular azimuth × elevation grid of look directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularGrid {
    azimuths: Vec<f64>,
    elevations: Vec<f64>,
}

fn check_axis(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidInput(format!("{name} axis is empty")));
    }
    for v in values {
        if !v.is_finite() || !(-90.0..=90.0).contains(v) {
            return Err(Error::InvalidInput(format!(
                "{name} angle {v} outside [-90, 90] degrees"
            )));
        }
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(format!(
            "{name} angles must be strictly increasing"
        )));
    }
    Ok(())
}

fn uniform_axis(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -90.0 + 180.0 * i as f64 / (n - 1) as f64)
        .collect()
}

impl AngularGrid {
    pub fn new(azimuths: Vec<f64>, elevations: Vec<f64>) -> Result<Self> {
        check_axis("azimuth", &azimuths)?;
        check_axis("elevation", &elevations)?;
        Ok(Self {
            azimuths,
            elevations,
        })
    }

    /// `n_az` × `n_el` angles spread uniformly over [-90°, 90°] inclusive.
    /// A single-sample axis sits at 0°.
    pub fn uniform(n_az: usize, n_el: usize) -> Result<Self> {
        Self::new(uniform_axis(n_az), uniform_axis(n_el))
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    pub fn n_azimuths(&self) -> usize {
        self.azimuths.len()
    }

    pub fn n_elevations(&self) -> usize {
        self.elevations.len()
    }

    pub fn len(&self) -> usize {
        self.azimuths.len() * self.elevations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn direction(&self, az_index: usize, el_index: usize) -> Direction {
        Direction {
            azimuth_deg: self.azimuths[az_index],
            elevation_deg: self.elevations[el_index],
        }
    }

    /// Grid indices of an exact on-grid direction.
    pub fn index_of(&self, d: Direction) -> Option<(usize, usize)> {
        let a = self.azimuths.iter().position(|&v| v == d.azimuth_deg)?;
        let e = self.elevations.iter().position(|&v| v == d.elevation_deg)?;
        Some((a, e))
    }
}

impl Default for AngularGrid {
    fn default() -> Self {
        Self {
            azimuths: uniform_axis(DEFAULT_AZIMUTHS),
            elevations: uniform_axis(DEFAULT_ELEVATIONS),
        }
    }
}

/// Named set of microphone positions in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicArrayGeometry {
    name: String,
    positions: Vec<Vec3>,
}

#[derive(Serialize, Deserialize)]
struct GeometryFile {
    name: String,
    positions_m: Vec<Vec3>,
}

impl MicArrayGeometry {
    pub fn new(name: impl Into<String>, positions: Vec<Vec3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidInput("geometry has no microphones".into()));
        }
        if positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(
                "microphone coordinates must be finite".into(),
            ));
        }
        if positions.len() >= 2 && positions.iter().all(|p| *p == positions[0]) {
            return Err(Error::InvalidInput(
                "all microphone positions coincide".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            positions,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn channel_count(&self) -> usize {
        self.positions.len()
    }

    /// Same shape shifted by a common offset.
    pub fn translated(&self, offset: Vec3) -> Self {
        let positions = self
            .positions
            .iter()
            .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
            .collect();
        Self {
            name: self.name.clone(),
            positions,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GeometryFile = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("geometry file: {e}")))?;
        Self::new(file.name, file.positions_m)
    }

    pub fn to_json(&self) -> String {
        let file = GeometryFile {
            name: self.name.clone(),
            positions_m: self.positions.clone(),
        };
        serde_json::to_string_pretty(&file).expect("geometry serializes")
    }
}

/// Reads a `{ "name": ..., "positions_m": [[x, y, z], ...] }` document.
pub fn load_geometry(path: impl AsRef<Path>) -> Result<MicArrayGeometry> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MicArrayGeometry::from_json(&text)
}

pub fn save_geometry(g: &MicArrayGeometry, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, g.to_json()).map_err(|e| Error::io(path, e))
}

pub const BUILTIN_IDS: [&str; 4] = ["linear-2", "linear-4", "hex-6", "hex-7"];

/// Builtin layouts.
///
/// Linear arrays lie on the y axis, centered at the origin, with `spacing` between
/// neighbours. Hexagonal arrays lie in the y-z plane (facing +x) with `spacing` as the
/// circumradius; `hex-7` adds a microphone at the origin.
pub fn builtin_geometry(id: &str, spacing: f64) -> Result<MicArrayGeometry> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidInput(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    let linear = |n: usize| -> Vec<Vec3> {
        (0..n)
            .map(|i| [0.0, (i as f64 - (n - 1) as f64 / 2.0) * spacing, 0.0])
            .collect()
    };
    let hex = || -> Vec<Vec3> {
        (0..6)
            .map(|k| {
                let phi = PI / 3.0 * k as f64;
                [0.0, spacing * phi.cos(), spacing * phi.sin()]
            })
            .collect()
    };
    let positions = match id {
        "linear-2" => linear(2),
        "linear-4" => linear(4),
        "hex-6" => hex(),
        "hex-7" => {
            let mut p = hex();
            p.push([0.0, 0.0, 0.0]);
            p
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown builtin geometry '{other}' (expected one of {})",
                BUILTIN_IDS.join(", ")
            )))
        }
    };
    MicArrayGeometry::new(id, positions)
}

/// Builtin id or path to a geometry file.
pub fn resolve_geometry(spec: &str, spacing: f64) -> Result<MicArrayGeometry> {
    if BUILTIN_IDS.contains(&spec) {
        builtin_geometry(spec, spacing)
    } else {
        load_geometry(spec)
    }
}

fn fill_steering(positions: &[Vec3], f_hz: f64, u: &Vec3, out: &mut [Complex64]) {
    let omega = 2.0 * PI * f_hz;
    for (slot, p) in out.iter_mut().zip(positions) {
        *slot = Complex64::cis(-omega * propagation_delay(p, u));
    }
}

/// Plane-wave steering vector `a_i = exp(-j ω τ_i)` with `τ_i = <p_i, u>/c`.
pub fn steering_vector(g: &MicArrayGeometry, f_hz: f64, d: Direction) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); g.channel_count()];
    fill_steering(&g.positions, f_hz, &d.unit_vector(), &mut out);
    out
}

/// Precomputed steering vectors over frequencies × grid, laid out `[f][az][el][mic]`.
#[derive(Debug, Clone)]
pub struct SteeringField {
    geometry: MicArrayGeometry,
    grid: AngularGrid,
    frequencies: Vec<f64>,
    values: Vec<Complex64>,
}

impl SteeringField {
    pub fn build(g: &MicArrayGeometry, grid: &AngularGrid, frequencies: &[f64]) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::InvalidInput("steering field needs at least one frequency".into()));
        }
        if frequencies.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::InvalidInput("frequencies must be finite and nonnegative".into()));
        }
        if frequencies.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("frequencies must be sorted".into()));
        }
        let n = g.channel_count();
        let units: Vec<Vec3> = (0..grid.n_azimuths())
            .flat_map(|a| (0..grid.n_elevations()).map(move |e| (a, e)))
            .map(|(a, e)| grid.direction(a, e).unit_vector())
            .collect();
        let mut values = vec![Complex64::new(0.0, 0.0); frequencies.len() * units.len() * n];
        for (chunk_f, &f) in values.chunks_mut(units.len() * n).zip(frequencies) {
            for (slot, u) in chunk_f.chunks_mut(n).zip(&units) {
                fill_steering(&g.positions, f, u, slot);
            }
        }
        Ok(Self {
            geometry: g.clone(),
            grid: grid.clone(),
            frequencies: frequencies.to_vec(),
            values,
        })
    }

    pub fn geometry(&self) -> &MicArrayGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &AngularGrid {
        &self.grid
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn channel_count(&self) -> usize {
        self.geometry.channel_count()
    }

    /// `(F_sel, A, E, N)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (
            self.frequencies.len(),
            self.grid.n_azimuths(),
            self.grid.n_elevations(),
            self.geometry.channel_count(),
        )
    }

    pub fn vector(&self, f_index: usize, az_index: usize, el_index: usize) -> &[Complex64] {
        let (_, na, ne, n) = self.shape();
        let start = ((f_index * na + az_index) * ne + el_index) * n;
        &self.values[start..start + n]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn axis_unit_vectors() {
        let cases = [
            ((0.0, 0.0), [1.0, 0.0, 0.0]),
            ((90.0, 0.0), [0.0, 1.0, 0.0]),
            ((0.0, 90.0), [0.0, 0.0, 1.0]),
        ];
        for ((az, el), want) in cases {
            let u = unit_direction(Direction::new(az, el).unwrap());
            for k in 0..3 {
                assert!(close(u[k], want[k], 1e-15), "{az},{el}: {u:?}");
            }
        }
    }

    #[test]
    fn direction_rejects_out_of_range() {
        assert!(Direction::new(91.0, 0.0).is_err());
        assert!(Direction::new(0.0, -90.5).is_err());
        assert!(Direction::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn single_mic_at_origin_is_one() {
        let g = MicArrayGeometry::new("one", vec![[0.0; 3]]).unwrap();
        let a = steering_vector(&g, 1234.0, Direction::new(37.0, -12.0).unwrap());
        assert_eq!(a, vec![Complex64::new(1.0, 0.0)]);
    }

    #[test]
    fn zero_frequency_is_all_ones() {
        let g = builtin_geometry("hex-7", 0.04).unwrap();
        let a = steering_vector(&g, 0.0, Direction::new(10.0, 20.0).unwrap());
        assert!(a.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn two_mic_phases_match_scalar_evaluation() {
        let g = MicArrayGeometry::new("pair", vec![[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0]]).unwrap();
        let a = steering_vector(&g, 343.0, Direction::new(0.0, 0.0).unwrap());
        // exp(-j 2π f/c <p, u>) with f = c: phase = -2π·(±0.1)
        let want = [
            Complex64::new(0.0, 2.0 * PI * 0.1).exp(),
            Complex64::new(0.0, -2.0 * PI * 0.1).exp(),
        ];
        for (got, want) in a.iter().zip(want) {
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn default_grid_shape_and_steps() {
        let grid = AngularGrid::default();
        assert_eq!(grid.n_azimuths(), 91);
        assert_eq!(grid.n_elevations(), 41);
        assert_eq!(grid.azimuths()[1] - grid.azimuths()[0], 2.0);
        assert_eq!(grid.elevations()[1] - grid.elevations()[0], 4.5);
        assert_eq!(grid.azimuths()[45], 0.0);
        assert_eq!(grid.elevations()[40], 90.0);
    }

    #[test]
    fn grid_validation() {
        assert!(AngularGrid::new(vec![0.0, 0.0], vec![0.0]).is_err());
        assert!(AngularGrid::new(vec![-100.0, 0.0], vec![0.0]).is_err());
        assert!(AngularGrid::new(vec![], vec![0.0]).is_err());
    }

    #[test]
    fn small_field_of_ones() {
        let g = MicArrayGeometry::new("one", vec![[0.0; 3]]).unwrap();
        let grid = AngularGrid::uniform(2, 2).unwrap();
        let s = SteeringField::build(&g, &grid, &[500.0]).unwrap();
        assert_eq!(s.shape(), (1, 2, 2, 1));
        assert!(s.values().iter().all(|z| *z == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn default_field_shape() {
        let g = builtin_geometry("hex-6", 0.05).unwrap();
        let s = SteeringField::build(&g, &AngularGrid::default(), &[250.0, 500.0]).unwrap();
        assert_eq!(s.shape(), (2, 91, 41, 6));
    }

    #[test]
    fn field_rejects_empty_frequencies() {
        let g = builtin_geometry("linear-2", 0.1).unwrap();
        assert!(SteeringField::build(&g, &AngularGrid::default(), &[]).is_err());
    }

    #[test]
    fn builtin_layouts() {
        let g = builtin_geometry("linear-2", 0.1).unwrap();
        assert_eq!(g.positions(), &[[0.0, -0.05, 0.0], [0.0, 0.05, 0.0]]);

        let r = 0.04;
        let h = builtin_geometry("hex-7", r).unwrap();
        assert_eq!(h.channel_count(), 7);
        assert_eq!(h.positions()[6], [0.0, 0.0, 0.0]);
        for (k, p) in h.positions()[..6].iter().enumerate() {
            let radius = (p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!(close(radius, r, 1e-15));
            let angle = p[2].atan2(p[1]);
            let want = PI / 3.0 * k as f64;
            let diff = (angle - want).rem_euclid(2.0 * PI);
            assert!(diff < 1e-12 || 2.0 * PI - diff < 1e-12);
        }
        assert_eq!(builtin_geometry("linear-4", 0.05).unwrap().channel_count(), 4);
        assert_eq!(builtin_geometry("hex-6", 0.05).unwrap().channel_count(), 6);
        assert!(builtin_geometry("triangle", 0.05).is_err());
    }

    #[test]
    fn geometry_invariants() {
        assert!(MicArrayGeometry::new("empty", vec![]).is_err());
        assert!(MicArrayGeometry::new("dup", vec![[0.1, 0.0, 0.0]; 3]).is_err());
        assert!(MicArrayGeometry::new("nan", vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn geometry_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let g = builtin_geometry("hex-7", 0.05).unwrap();
        save_geometry(&g, &path).unwrap();
        assert_eq!(load_geometry(&path).unwrap(), g);

        std::fs::write(&path, "{ \"name\": \"x\", \"positions_m\": [[0, 0]] }").unwrap();
        assert!(matches!(load_geometry(&path), Err(Error::Parse(_))));
        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(load_geometry(&path), Err(Error::Parse(_))));
        std::fs::write(&path, "{ \"name\": \"x\", \"positions_m\": [] }").unwrap();
        assert!(matches!(load_geometry(&path), Err(Error::InvalidInput(_))));
    }
}
