//! CSV data files, the pose-set fixture and the calibration report.
//!
//! Data CSVs use the shortest round-trip decimal form of every number, so a
//! read followed by a write reproduces the file byte for byte.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::RadialCurve;
use crate::error::{Error, Result, Stage};
use crate::geometry::{CorrespondenceSet, Point2, PoseParams, SensorSpec};
use crate::pipeline::{CalibrationResult, DistortionPayload, Mode, PipelineConfig, PipelineRun, ScaleVariant};
use crate::synth::row_convention_degrees;

pub const CORRESPONDENCE_HEADER: [&str; 4] = ["x_d", "y_d", "X", "Y"];
pub const IDEAL_COLUMNS: [&str; 2] = ["x", "y"];
pub const CURVE_HEADER: [&str; 2] = ["r_d", "r_u"];
pub const DISPARITY_HEADER: [&str; 3] = ["x_d", "y_d", "d_tot"];
pub const POSE_HEADER: [&str; 7] = ["pose", "theta_x", "theta_y", "theta_z", "t_x", "t_y", "t_z"];
pub const MIN_CORRESPONDENCE_ROWS: usize = 4;
pub const TOOL_NAME: &str = "sic";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of raw input bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    Ok(digest_bytes(&fs::read(path)?))
}

fn parse_field(s: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {row}, column {col}: '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("row {row}, column {col}: non-finite value")));
    }
    Ok(v)
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(r)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = found.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse(format!(
            "expected header '{}', found '{}'",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

/// Reads every numeric row, requiring exactly `width` fields.
fn read_rows<R: Read>(rdr: &mut csv::Reader<R>, names: &[String]) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != names.len() {
            return Err(Error::Parse(format!(
                "row {row}: expected {} fields, found {}",
                names.len(),
                rec.len()
            )));
        }
        rows.push(
            rec.iter()
                .zip(names)
                .map(|(s, n)| parse_field(s, row, n))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(rows)
}

fn header_names<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>> {
    Ok(rdr.headers()?.iter().map(|s| s.trim().to_string()).collect())
}

pub fn parse_correspondences<R: Read>(r: R) -> Result<CorrespondenceSet> {
    let mut rdr = reader(r);
    let names = header_names(&mut rdr)?;
    let with_ideal = names.len() == 6;
    let mut expected: Vec<&str> = CORRESPONDENCE_HEADER.to_vec();
    if with_ideal {
        expected.extend(IDEAL_COLUMNS);
    }
    check_header(rdr.headers()?, &expected)?;
    let rows = read_rows(&mut rdr, &names)?;
    if rows.len() < MIN_CORRESPONDENCE_ROWS {
        return Err(Error::Parse(format!(
            "need at least {MIN_CORRESPONDENCE_ROWS} rows, found {}",
            rows.len()
        )));
    }
    let image = rows.iter().map(|r| Point2::new(r[0], r[1])).collect();
    let target = rows.iter().map(|r| Point2::new(r[2], r[3])).collect();
    let set = CorrespondenceSet::new(target, image)?;
    if with_ideal {
        set.with_ideal(rows.iter().map(|r| Point2::new(r[4], r[5])).collect())
    } else {
        Ok(set)
    }
}

pub fn write_correspondences<W: Write>(w: W, set: &CorrespondenceSet) -> Result<()> {
    let mut wtr = writer(w);
    let mut header: Vec<&str> = CORRESPONDENCE_HEADER.to_vec();
    if set.ideal.is_some() {
        header.extend(IDEAL_COLUMNS);
    }
    wtr.write_record(&header)?;
    for i in 0..set.len() {
        let (pd, pw) = (set.image[i], set.target[i]);
        let mut rec = vec![pd.x.to_string(), pd.y.to_string(), pw.x.to_string(), pw.y.to_string()];
        if let Some(ideal) = &set.ideal {
            rec.push(ideal[i].x.to_string());
            rec.push(ideal[i].y.to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_correspondences(path: &Path) -> Result<CorrespondenceSet> {
    parse_correspondences(fs::File::open(path)?)
}

pub fn save_correspondences(path: &Path, set: &CorrespondenceSet) -> Result<()> {
    write_correspondences(fs::File::create(path)?, set)
}

const COD_PREFIX: &str = "# cod=";

/// Curve file: a `# cod=x,y` comment line, then `r_d,r_u` rows.
pub fn write_curve<W: Write>(mut w: W, curve: &RadialCurve) -> Result<()> {
    writeln!(w, "{COD_PREFIX}{},{}", curve.cod.x, curve.cod.y)?;
    let mut wtr = writer(w);
    wtr.write_record(CURVE_HEADER)?;
    for (rd, ru) in &curve.samples {
        wtr.write_record([rd.to_string(), ru.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a curve file; `cod` overrides (or supplies) the center of distortion.
pub fn parse_curve<R: Read>(mut r: R, cod: Option<Point2>) -> Result<RadialCurve> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut found = None;
    if let Some(line) = text.lines().find(|l| l.starts_with(COD_PREFIX)) {
        let parts: Vec<&str> = line[COD_PREFIX.len()..].split(',').collect();
        if parts.len() != 2 {
            return Err(Error::Parse(format!("malformed center line '{line}'")));
        }
        found = Some(Point2::new(parse_field(parts[0], 1, "cod")?, parse_field(parts[1], 1, "cod")?));
    }
    let cod = cod
        .or(found)
        .ok_or_else(|| Error::Parse("curve file has no '# cod=x,y' line and no center was given".into()))?;
    let mut rdr = reader(text.as_bytes());
    check_header(rdr.headers()?, &CURVE_HEADER)?;
    let names = header_names(&mut rdr)?;
    let rows = read_rows(&mut rdr, &names)?;
    // kept in file order so monotonicity is checked on what was written
    Ok(RadialCurve {
        samples: rows.iter().map(|r| (r[0], r[1])).collect(),
        cod,
    })
}

pub fn read_curve(path: &Path, cod: Option<Point2>) -> Result<RadialCurve> {
    parse_curve(fs::File::open(path)?, cod)
}

pub fn save_curve(path: &Path, curve: &RadialCurve) -> Result<()> {
    write_curve(fs::File::create(path)?, curve)
}

pub fn write_disparity<W: Write>(w: W, points: &[Point2], d_tot: &[f64]) -> Result<()> {
    if points.len() != d_tot.len() {
        return Err(Error::LengthMismatch {
            left: points.len(),
            right: d_tot.len(),
        });
    }
    let mut wtr = writer(w);
    wtr.write_record(DISPARITY_HEADER)?;
    for (p, d) in points.iter().zip(d_tot) {
        wtr.write_record([p.x.to_string(), p.y.to_string(), d.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn parse_disparity<R: Read>(r: R) -> Result<(Vec<Point2>, Vec<f64>)> {
    let mut rdr = reader(r);
    check_header(rdr.headers()?, &DISPARITY_HEADER)?;
    let names = header_names(&mut rdr)?;
    let rows = read_rows(&mut rdr, &names)?;
    Ok((
        rows.iter().map(|r| Point2::new(r[0], r[1])).collect(),
        rows.iter().map(|r| r[2]).collect(),
    ))
}

/// Reads the `x_d,y_d` columns of any CSV that has them.
pub fn parse_points<R: Read>(r: R) -> Result<Vec<Point2>> {
    let mut rdr = reader(r);
    let names = header_names(&mut rdr)?;
    let col = |n: &str| {
        names
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| Error::Parse(format!("missing column '{n}'")))
    };
    let (ix, iy) = (col("x_d")?, col("y_d")?);
    let rows = read_rows(&mut rdr, &names)?;
    Ok(rows.iter().map(|r| Point2::new(r[ix], r[iy])).collect())
}

/// Undistorted points with their inputs and a range flag.
pub fn write_undistorted<W: Write>(w: W, input: &[Point2], out: &[crate::curve::UndistortedPoint]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["x_d", "y_d", "x_u", "y_u", "extrapolated"])?;
    for (p, u) in input.iter().zip(out) {
        wtr.write_record([
            p.x.to_string(),
            p.y.to_string(),
            u.point.x.to_string(),
            u.point.y.to_string(),
            u8::from(u.extrapolated).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Pose-set fixture: one row per pose, rotation vector in radians, translation in mm.
pub fn write_poses<W: Write>(mut w: W, version: &str, poses: &[PoseParams]) -> Result<()> {
    writeln!(w, "# pose set {version}")?;
    let mut wtr = writer(w);
    wtr.write_record(POSE_HEADER)?;
    for (i, p) in poses.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(p.theta.iter().chain(p.t.iter()).map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn parse_poses<R: Read>(r: R) -> Result<Vec<PoseParams>> {
    let mut rdr = reader(r);
    check_header(rdr.headers()?, &POSE_HEADER)?;
    let names = header_names(&mut rdr)?;
    let rows = read_rows(&mut rdr, &names)?;
    Ok(rows
        .iter()
        .map(|r| PoseParams::new(Vector3::new(r[1], r[2], r[3]), Vector3::new(r[4], r[5], r[6])))
        .collect())
}

// ---------------------------------------------------------------------------
// Calibration report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub path: String,
    pub sha256: String,
    pub points: usize,
    pub sensor: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub mode: String,
    pub step1_init: String,
    pub step1_tol: f64,
    pub scale_variant: String,
    pub epsilon: f64,
    pub n_prime: usize,
    pub model_based_tol: f64,
    pub model_free_tol: f64,
}

/// Center-of-distortion search diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Block {
    pub cod: [f64; 2],
    pub scale: [f64; 2],
    pub aspect_ratio: f64,
    pub collinearity_cost: f64,
    pub converged: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBlock {
    pub stage: String,
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    /// Rotation vector, degrees.
    pub theta_deg: [f64; 3],
    /// Same rotation with the transposed (row-vector) convention, degrees.
    pub theta_row_deg: [f64; 3],
    pub t_mm: [f64; 3],
    /// `none`, `polynomial` or `curve`.
    pub distortion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_path: Option<String>,
    pub rpe_mean: f64,
    pub rpe_std: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFreeBlock {
    pub scale: f64,
    pub fy_ratio: f64,
    pub objective_initial: f64,
    pub objective_final: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureBlock {
    pub stage: String,
    pub message: String,
}

/// Key-value calibration report (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub tool: ToolInfo,
    pub input: InputInfo,
    pub config: ConfigEcho,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step1: Option<Step1Block>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_free: Option<ModelFreeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureBlock>,
    #[serde(default)]
    pub stages: Vec<StageBlock>,
}

impl StageBlock {
    pub fn from_result(r: &CalibrationResult, curve_path: Option<&str>) -> StageBlock {
        let (distortion, k, curve_samples) = match &r.distortion {
            DistortionPayload::None => ("none", None, None),
            DistortionPayload::Polynomial(d) => ("polynomial", Some([d.k1, d.k2, d.k3]), None),
            DistortionPayload::Curve(c) => ("curve", None, Some(c.len())),
        };
        StageBlock {
            stage: r.stage.as_str().into(),
            fx: r.intrinsics.fx,
            fy: r.intrinsics.fy,
            u0: r.intrinsics.u0,
            v0: r.intrinsics.v0,
            theta_deg: r.pose.theta_degrees(),
            theta_row_deg: row_convention_degrees(&r.pose),
            t_mm: [r.pose.t.x, r.pose.t.y, r.pose.t.z],
            distortion: distortion.into(),
            k,
            curve_samples,
            curve_path: curve_samples.and(curve_path.map(String::from)),
            rpe_mean: r.rpe_mean,
            rpe_std: r.rpe_std,
            warnings: r.warnings.clone(),
        }
    }
}

impl ConfigEcho {
    pub fn new(mode: Mode, config: &PipelineConfig) -> ConfigEcho {
        let mf = &config.model_free;
        ConfigEcho {
            mode: mode.as_str().into(),
            step1_init: format!("{:?}", config.step1.init),
            step1_tol: config.step1.tol,
            scale_variant: match mf.variant {
                ScaleVariant::EpsilonConstraint => "epsilon".into(),
                ScaleVariant::MedianConstraint => "median".into(),
            },
            epsilon: mf.epsilon,
            n_prime: mf.n_prime_p,
            model_based_tol: config.model_based.tol,
            model_free_tol: mf.tol,
        }
    }
}

impl CalibrationReport {
    /// Builds the report of a (possibly failed) pipeline run.
    pub fn from_run(
        run: &PipelineRun,
        input: InputInfo,
        config: &PipelineConfig,
        failure: Option<&Error>,
        curve_path: Option<&str>,
    ) -> CalibrationReport {
        let step1 = run.step1.as_ref().map(|s| Step1Block {
            cod: [s.params.u0, s.params.v0],
            scale: [s.params.sx, s.params.sy],
            aspect_ratio: s.params.aspect_ratio(),
            collinearity_cost: s.params.cc,
            converged: s.converged,
            evaluations: s.evaluations,
        });
        let model_free = run.step3b.as_ref().map(|b| ModelFreeBlock {
            scale: b.scale,
            fy_ratio: b.fy_ratio,
            objective_initial: b.objective.0,
            objective_final: b.objective.1,
            evaluations: b.evaluations,
        });
        let failure = failure.or(run.failure.as_ref()).map(|e| FailureBlock {
            stage: e.stage().map_or("input", |s| s.as_str()).into(),
            message: e.root().to_string(),
        });
        let stages = run
            .stages()
            .into_iter()
            .map(|r| {
                let final_stage = matches!(r.stage, Stage::Step3A | Stage::Step3B);
                StageBlock::from_result(r, curve_path.filter(|_| final_stage))
            })
            .collect();
        CalibrationReport {
            tool: ToolInfo {
                name: TOOL_NAME.into(),
                version: TOOL_VERSION.into(),
            },
            input,
            config: ConfigEcho::new(run.mode, config),
            step1,
            model_free,
            failure,
            stages,
        }
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageBlock> {
        self.stages.iter().find(|s| s.stage == stage.as_str())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn parse(text: &str) -> Result<CalibrationReport> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CalibrationReport> {
        CalibrationReport::parse(&fs::read_to_string(path)?)
    }
}

impl InputInfo {
    pub fn new(path: &str, bytes: &[u8], points: usize, sensor: &SensorSpec) -> InputInfo {
        InputInfo {
            path: path.into(),
            sha256: digest_bytes(bytes),
            points,
            sensor: [sensor.width, sensor.height],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_mismatch_rejected() {
        let text = "x,y,X,Y\n0,0,0,0\n1,0,1,0\n0,1,0,1\n1,1,1,1\n";
        assert!(matches!(parse_correspondences(text.as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn too_few_rows_rejected() {
        let text = "x_d,y_d,X,Y\n0,0,0,0\n1,0,1,0\n";
        assert!(parse_correspondences(text.as_bytes()).is_err());
    }

    #[test]
    fn non_numeric_rejected() {
        let text = "x_d,y_d,X,Y\n0,0,0,0\n1,0,1,0\n0,1,0,1\n1,a,1,1\n";
        let err = parse_correspondences(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 5"), "{err}");
    }

    #[test]
    fn ragged_rejected() {
        let text = "x_d,y_d,X,Y\n0,0,0,0\n1,0,1\n0,1,0,1\n1,1,1,1\n";
        assert!(parse_correspondences(text.as_bytes()).is_err());
    }

    #[test]
    fn curve_needs_a_center() {
        assert!(parse_curve("r_d,r_u\n0,0\n1,1\n".as_bytes(), None).is_err());
        let c = parse_curve("r_d,r_u\n0,0\n1,1\n".as_bytes(), Some(Point2::new(1.0, 2.0))).unwrap();
        assert_eq!(c.cod, Point2::new(1.0, 2.0));
    }

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(
            digest_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
