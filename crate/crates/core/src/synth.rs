//! Synthetic ground-truth scenes, dense and sparse correspondence sets,
//! and Gaussian noise injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    apply_distortion, project_ideal, remove_distortion, CameraIntrinsics, CorrespondenceSet, Point2, PoseParams,
    RadialDistortion, SensorSpec,
};
use crate::homography::Homography;

/// Pitch of the sparse calibration grid, mm.
pub const SPARSE_PITCH_MM: f64 = 5.28;
/// Points per axis of the sparse calibration grid.
pub const SPARSE_GRID: (usize, usize) = (13, 10);
/// Ideal-grid spacing that puts 126505 points on the sensor for pose #1, px.
pub const POSE1_DENSE_SPACING_PX: f64 = 8.317;
/// Pose #1 rotation in the row-vector convention, degrees.
pub const POSE1_ANGLES_DEG: [f64; 3] = [8.0, 16.0, -26.0];
/// Pose #1 translation, mm.
pub const POSE1_TRANSLATION_MM: [f64; 3] = [5.0, 8.0, 300.0];

/// Seed used to draw the stand-in poses 2..20 of the sparse pose set.
pub const POSE_SET_SEED: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthScene {
    pub intrinsics: CameraIntrinsics,
    pub pose: PoseParams,
    pub distortion: RadialDistortion,
    pub sensor: SensorSpec,
    pub target_pitch: f64,
    pub grid_shape: (usize, usize),
}

impl GroundTruthScene {
    /// The illustrative pose used throughout: tilted target, decentered distortion center.
    ///
    /// Its angles are quoted in the row-vector convention (`x_c = x_w R + t`),
    /// i.e. the world-to-camera rotation is the transpose of the one built from
    /// [`POSE1_ANGLES_DEG`]. See [`row_convention_degrees`].
    pub fn pose1() -> Self {
        Self {
            intrinsics: CameraIntrinsics {
                fx: 9285.7,
                fy: 9278.6,
                u0: 1609.0,
                v0: 1353.0,
            },
            pose: PoseParams::from_degrees(POSE1_ANGLES_DEG.map(|a| -a), POSE1_TRANSLATION_MM),
            distortion: RadialDistortion::new(-1.3, 8.8, -163.0),
            sensor: SensorSpec {
                width: 3264.0,
                height: 2448.0,
            },
            target_pitch: SPARSE_PITCH_MM,
            grid_shape: SPARSE_GRID,
        }
    }

    pub fn with_pose(mut self, pose: PoseParams) -> Self {
        self.pose = pose;
        self
    }

    pub fn with_distortion(mut self, distortion: RadialDistortion) -> Self {
        self.distortion = distortion;
        self
    }

    pub fn homography(&self) -> Result<Homography> {
        Homography::from_matrix(self.intrinsics.matrix() * self.pose.plane_matrix())
    }

    /// Normalized radius beyond which the distortion polynomial stops being monotone.
    pub fn fold_radius(&self) -> f64 {
        fold_radius(&self.distortion)
    }

    /// Projects and distorts one target point.
    pub fn image_of(&self, pw: &Point2) -> Result<(Point2, Point2)> {
        let p = project_ideal(pw, &self.intrinsics, &self.pose)?;
        Ok((p, apply_distortion(&p, &self.intrinsics, &self.distortion)))
    }

    fn normalized_radius(&self, p: &Point2) -> f64 {
        let a = &self.intrinsics;
        ((p.x - a.u0) / a.fx).hypot((p.y - a.v0) / a.fy)
    }
}

/// Rotation vector of `pose` in the row-vector convention, degrees.
pub fn row_convention_degrees(pose: &PoseParams) -> [f64; 3] {
    pose.theta_degrees().map(|a| -a)
}

/// The pose #1 dense set: 126505 ideal-grid points.
pub fn pose1_dense() -> Result<CorrespondenceSet> {
    generate_dense(
        &GroundTruthScene::pose1(),
        GridDomain::IdealImage {
            spacing_px: POSE1_DENSE_SPACING_PX,
        },
    )
}

/// Smallest positive normalized radius where `d/dr [r (1 + D(r^2))]` vanishes.
pub fn fold_radius(k: &RadialDistortion) -> f64 {
    let slope = |r: f64| {
        let r2 = r * r;
        1.0 + r2 * (3.0 * k.k1 + r2 * (5.0 * k.k2 + 7.0 * k.k3 * r2))
    };
    let (mut a, step) = (0.0, 1e-3);
    while a < 5.0 {
        let b = a + step;
        if slope(b) <= 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..60 {
                let m = 0.5 * (lo + hi);
                if slope(m) > 0.0 {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            return lo;
        }
        a = b;
    }
    f64::INFINITY
}

/// Where the regular grid of a dense synthetic set is laid out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridDomain {
    /// Regular grid of target points with the given pitch in mm.
    TargetPlane { pitch_mm: f64 },
    /// Regular grid of ideal image points with the given spacing in px.
    IdealImage { spacing_px: f64 },
    /// Regular grid of detected (distorted) image points, as a DIC point grid.
    DistortedImage { spacing_px: f64 },
}

/// Dense single-pose correspondences covering the whole sensor.
///
/// Points whose distorted image leaves the sensor, or that lie beyond the
/// fold of the distortion polynomial, are dropped. The returned set carries
/// the ideal image points.
pub fn generate_dense(scene: &GroundTruthScene, domain: GridDomain) -> Result<CorrespondenceSet> {
    let h = scene.homography()?;
    let h_inv = h.inverse()?;
    let fold = scene.fold_radius();
    let sensor = scene.sensor;
    let margin = 0.15 * sensor.width.max(sensor.height);

    let mut target = Vec::new();
    let mut image = Vec::new();
    let mut ideal = Vec::new();
    let mut push = |pw: Point2, p: Point2| {
        if scene.normalized_radius(&p) >= fold {
            return;
        }
        let pd = apply_distortion(&p, &scene.intrinsics, &scene.distortion);
        if sensor.contains(&pd) {
            target.push(pw);
            image.push(pd);
            ideal.push(p);
        }
    };

    match domain {
        GridDomain::IdealImage { spacing_px } => {
            if !(spacing_px >= 1.0) {
                return Err(Error::InvalidParameter(format!("spacing {spacing_px} < 1 px")));
            }
            let i0 = (-margin / spacing_px).floor() as i64;
            let i1 = ((sensor.width + margin) / spacing_px).ceil() as i64;
            let j0 = (-margin / spacing_px).floor() as i64;
            let j1 = ((sensor.height + margin) / spacing_px).ceil() as i64;
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let p = Point2::new(i as f64 * spacing_px, j as f64 * spacing_px);
                    let Ok(pw) = h_inv.apply(&p) else { continue };
                    // make sure the plane point is in front of the camera
                    let Ok(p_check) = project_ideal(&pw, &scene.intrinsics, &scene.pose) else {
                        continue;
                    };
                    push(pw, p_check);
                }
            }
        }
        GridDomain::DistortedImage { spacing_px } => {
            if !(spacing_px >= 1.0) {
                return Err(Error::InvalidParameter(format!("spacing {spacing_px} < 1 px")));
            }
            let nx = (sensor.width / spacing_px).floor() as i64;
            let ny = (sensor.height / spacing_px).floor() as i64;
            let x0 = 0.5 * (sensor.width - nx as f64 * spacing_px);
            let y0 = 0.5 * (sensor.height - ny as f64 * spacing_px);
            for j in 0..=ny {
                for i in 0..=nx {
                    let pd = Point2::new(x0 + i as f64 * spacing_px, y0 + j as f64 * spacing_px);
                    let Some(p) = remove_distortion(&pd, &scene.intrinsics, &scene.distortion) else {
                        continue;
                    };
                    let Ok(pw) = h_inv.apply(&p) else { continue };
                    if project_ideal(&pw, &scene.intrinsics, &scene.pose).is_err() {
                        continue;
                    }
                    push(pw, p);
                }
            }
        }
        GridDomain::TargetPlane { pitch_mm } => {
            if !(pitch_mm > 0.0) {
                return Err(Error::InvalidParameter(format!("pitch {pitch_mm} <= 0 mm")));
            }
            let corners = [
                Point2::new(-margin, -margin),
                Point2::new(sensor.width + margin, -margin),
                Point2::new(sensor.width + margin, sensor.height + margin),
                Point2::new(-margin, sensor.height + margin),
            ];
            let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
            let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
            for c in &corners {
                let q = h_inv.apply(c)?;
                lo.x = lo.x.min(q.x);
                lo.y = lo.y.min(q.y);
                hi.x = hi.x.max(q.x);
                hi.y = hi.y.max(q.y);
            }
            let i0 = (lo.x / pitch_mm).floor() as i64;
            let i1 = (hi.x / pitch_mm).ceil() as i64;
            let j0 = (lo.y / pitch_mm).floor() as i64;
            let j1 = (hi.y / pitch_mm).ceil() as i64;
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let pw = Point2::new(i as f64 * pitch_mm, j as f64 * pitch_mm);
                    let Ok(p) = project_ideal(&pw, &scene.intrinsics, &scene.pose) else {
                        continue;
                    };
                    push(pw, p);
                }
            }
        }
    }

    if target.is_empty() {
        return Err(Error::EmptyGrid);
    }
    CorrespondenceSet::new(target, image)?.with_ideal(ideal)
}

/// Sparse grid of `grid_shape` points with `target_pitch`, centered on the
/// target point that is imaged at the sensor center.
pub fn sparse_target_grid(scene: &GroundTruthScene) -> Result<Vec<Point2>> {
    let center = scene.homography()?.inverse()?.apply(&scene.sensor.center())?;
    let (nx, ny) = scene.grid_shape;
    let pitch = scene.target_pitch;
    let (cx, cy) = ((nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0);
    let mut pts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            pts.push(Point2::new(
                center.x + (i as f64 - cx) * pitch,
                center.y + (j as f64 - cy) * pitch,
            ));
        }
    }
    Ok(pts)
}

/// Sparse multi-pose correspondence sets, one per scene.
pub fn generate_pose_set(scenes: &[GroundTruthScene]) -> Result<Vec<CorrespondenceSet>> {
    scenes
        .iter()
        .enumerate()
        .map(|(pose, scene)| {
            let target = sparse_target_grid(scene)?;
            let mut image = Vec::with_capacity(target.len());
            let mut ideal = Vec::with_capacity(target.len());
            for (point, pw) in target.iter().enumerate() {
                let (p, pd) = scene
                    .image_of(pw)
                    .map_err(|_| Error::PointOutsideSensor { pose, point })?;
                if !scene.sensor.contains(&pd) {
                    return Err(Error::PointOutsideSensor { pose, point });
                }
                ideal.push(p);
                image.push(pd);
            }
            CorrespondenceSet::new(target, image)?.with_ideal(ideal)
        })
        .collect()
}

/// Pose #1 followed by 19 seeded stand-in poses with general orientations.
pub fn pose_set_scenes() -> Vec<GroundTruthScene> {
    let base = GroundTruthScene::pose1();
    let mut rng = ChaCha8Rng::seed_from_u64(POSE_SET_SEED);
    let mut scenes = vec![base];
    while scenes.len() < 20 {
        let ang = [
            rng.random_range(-25.0..25.0),
            rng.random_range(-25.0..25.0),
            rng.random_range(-40.0..40.0),
        ];
        let t = [
            rng.random_range(-25.0..25.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(260.0..360.0),
        ];
        let scene = base.with_pose(PoseParams::from_degrees(ang, t));
        let r = scene.pose.rotation();
        // keep away from the h31*h32 = 0 configurations
        if (r[(2, 0)] * r[(2, 1)]).abs() < 1e-3 {
            continue;
        }
        if generate_pose_set(std::slice::from_ref(&scene)).is_ok() {
            scenes.push(scene);
        }
    }
    scenes
}

/// The versioned 20-pose fixture shipped with the crate.
pub const POSE_SET_FIXTURE: &str = include_str!("../fixtures/poses20_v1.csv");

/// Scenes of the shipped 20-pose fixture.
pub fn shipped_pose_set() -> Result<Vec<GroundTruthScene>> {
    let base = GroundTruthScene::pose1();
    Ok(crate::io::parse_poses(POSE_SET_FIXTURE.as_bytes())?
        .into_iter()
        .map(|p| base.with_pose(p))
        .collect())
}

/// Standard deviation and seed of i.i.d. Gaussian image noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { sigma, seed })
    }

    /// Whether sigma lies outside the [0, 1] px range of the reference sweep.
    pub fn out_of_sweep_range(&self) -> bool {
        self.sigma > 1.0
    }
}

/// Box-Muller standard normal stream over a ChaCha8 generator.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

/// Adds zero-mean Gaussian offsets to the image points only.
pub fn add_noise(set: &CorrespondenceSet, noise: &NoiseSpec) -> CorrespondenceSet {
    if noise.sigma == 0.0 {
        return set.clone();
    }
    let mut g = GaussianStream::new(noise.seed);
    let image = set
        .image
        .iter()
        .map(|p| {
            let dx = g.next_standard() * noise.sigma;
            let dy = g.next_standard() * noise.sigma;
            Point2::new(p.x + dx, p.y + dy)
        })
        .collect();
    CorrespondenceSet {
        target: set.target.clone(),
        image,
        ideal: set.ideal.clone(),
    }
}
