//! Boundary scattering data of a compact surface of revolution |t| ≤ b: classification of
//! boundary vectors, travel length l_g, exit vector s_g and trapping at a cutoff.
//!
//! Angles of incoming vectors are measured from the inward normal, angles of outgoing vectors
//! from the outward normal; in both cases the sine of the angle is C/w(±b) with C the Clairaut
//! constant. θ is not reduced mod 2π, so the exit θ carries the full angular advance.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{integrate_geodesic, FlowGeometry, GeodesicStart, TrackEnd, TrackOptions};
use crate::error::{Error, Result};

/// Distance from ±b within which a base point counts as on the boundary.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;
/// |g(v, ν)| below this is tangent.
pub const TANGENT_TOLERANCE: f64 = 1e-12;
/// Relative distance of |C| from the waist radius that counts as asymptotic to the waist.
pub const CLAIRAUT_TRAPPED_TOLERANCE: f64 = 1e-12;

/// Boundary component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// t = b
    Upper,
    /// t = −b
    Lower,
}

impl Side {
    pub fn sign(&self) -> f64 {
        match self {
            Side::Upper => 1.0,
            Side::Lower => -1.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Side::Upper => "upper",
            Side::Lower => "lower",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Incoming,
    Outgoing,
    Tangent,
}

/// Sign of g(v, ν) for a vector with radial speed `v` at height `t`; ν is the outward normal.
pub fn classify(b: f64, t: f64, v: f64) -> Result<Direction> {
    let side = if (t - b).abs() <= BOUNDARY_TOLERANCE {
        Side::Upper
    } else if (t + b).abs() <= BOUNDARY_TOLERANCE {
        Side::Lower
    } else {
        return Err(Error::Boundary(format!("t = {t} is not on |t| = {b}")));
    };
    let normal = side.sign() * v;
    Ok(if normal.abs() < TANGENT_TOLERANCE {
        Direction::Tangent
    } else if normal > 0.0 {
        Direction::Outgoing
    } else {
        Direction::Incoming
    })
}

/// A unit vector on the boundary: side, θ and angle from the normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundaryVector {
    pub side: Side,
    pub theta: f64,
    pub angle: f64,
}

/// Travel length in Σ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TravelLength {
    Finite(f64),
    Trapped { cutoff: f64 },
}

impl TravelLength {
    pub fn finite(&self) -> Option<f64> {
        match self {
            TravelLength::Finite(l) => Some(*l),
            TravelLength::Trapped { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LensRecord {
    pub entry: BoundaryVector,
    pub clairaut: f64,
    pub length: TravelLength,
    /// exit vector, angle from the outward normal
    pub exit: Option<BoundaryVector>,
    /// |C| equals the waist radius
    pub clairaut_trapped: bool,
    /// still inside at the cutoff
    pub cutoff_trapped: bool,
}

/// Scattering setup on |t| ≤ b of a rotationally symmetric surface.
#[derive(Clone, Debug)]
pub struct Lens<G: FlowGeometry> {
    pub geometry: G,
    pub b: f64,
    /// t of a closed geodesic, if any
    pub waist: Option<f64>,
    pub cutoff: f64,
    pub options: TrackOptions,
}

impl<G: FlowGeometry> Lens<G> {
    pub fn new(
        geometry: G,
        b: f64,
        waist: Option<f64>,
        cutoff: f64,
        base: &TrackOptions,
    ) -> Result<Self> {
        if !(b > 0.0) || !(cutoff > 0.0) {
            return Err(Error::ParameterDomain(
                "lens needs b > 0 and a positive cutoff".into(),
            ));
        }
        let options = TrackOptions {
            horizon: cutoff,
            stop_levels: vec![b, -b],
            regions: None,
            marks: Vec::new(),
            ..base.clone()
        };
        Ok(Self {
            geometry,
            b,
            waist,
            cutoff,
            options,
        })
    }

    fn radius(&self, t: f64) -> f64 {
        1.0 / self.geometry.radial(t).inv_c.sqrt()
    }

    /// Geodesic start of an incoming boundary vector.
    pub fn entry_start(&self, entry: &BoundaryVector) -> Result<GeodesicStart> {
        if !(entry.angle.abs() < PI / 2.0) {
            return Err(Error::Boundary(format!(
                "angle {} is not incoming",
                entry.angle
            )));
        }
        let t = entry.side.sign() * self.b;
        let (s, c) = entry.angle.sin_cos();
        let v = -entry.side.sign() * c;
        if classify(self.b, t, v)? != Direction::Incoming {
            return Err(Error::Boundary(format!(
                "angle {} is tangent to the boundary",
                entry.angle
            )));
        }
        Ok(GeodesicStart {
            t,
            theta: entry.theta,
            v,
            c: self.radius(t) * s,
        })
    }

    fn waist_trapped(&self, c: f64) -> bool {
        self.waist.map_or(false, |t| {
            let w = self.radius(t);
            (c.abs() - w).abs() <= CLAIRAUT_TRAPPED_TOLERANCE * w
        })
    }

    /// Trace the geodesic of an incoming vector until it leaves Σ or reaches the cutoff.
    pub fn scatter(&self, entry: &BoundaryVector) -> Result<LensRecord> {
        let start = self.entry_start(entry)?;
        let clairaut_trapped = self.waist_trapped(start.c);
        if clairaut_trapped {
            return Ok(LensRecord {
                entry: *entry,
                clairaut: start.c,
                length: TravelLength::Trapped {
                    cutoff: self.cutoff,
                },
                exit: None,
                clairaut_trapped,
                cutoff_trapped: false,
            });
        }
        let tr = integrate_geodesic(&self.geometry, start, &self.options)?;
        let (length, exit, cutoff_trapped) = match tr.end {
            TrackEnd::StopLevel(level) => {
                let side = if level > 0.0 {
                    Side::Upper
                } else {
                    Side::Lower
                };
                let w = self.radius(level);
                let angle = (start.c / w).atan2(tr.last.v.abs());
                (
                    TravelLength::Finite(tr.last.s),
                    Some(BoundaryVector {
                        side,
                        theta: tr.last.theta,
                        angle,
                    }),
                    false,
                )
            }
            _ => (
                TravelLength::Trapped {
                    cutoff: self.cutoff,
                },
                None,
                true,
            ),
        };
        Ok(LensRecord {
            entry: *entry,
            clairaut: start.c,
            length,
            exit,
            clairaut_trapped,
            cutoff_trapped,
        })
    }

    /// Retrace the reversed exit vector; the error is the largest deviation of θ, angle and
    /// length from the reversed entry. None for trapped records.
    pub fn reciprocity_error(&self, rec: &LensRecord) -> Result<Option<f64>> {
        let (Some(exit), Some(l)) = (rec.exit, rec.length.finite()) else {
            return Ok(None);
        };
        let back = self.scatter(&BoundaryVector {
            side: exit.side,
            theta: exit.theta,
            angle: -exit.angle,
        })?;
        let (Some(ret), Some(l2)) = (back.exit, back.length.finite()) else {
            return Ok(Some(f64::INFINITY));
        };
        if ret.side != rec.entry.side {
            return Ok(Some(f64::INFINITY));
        }
        let err = (ret.theta - rec.entry.theta)
            .abs()
            .max((ret.angle + rec.entry.angle).abs())
            .max((l2 - l).abs());
        Ok(Some(err))
    }

    /// Scatter every vector of the fan in parallel; rows come back in fan order.
    pub fn lens_table(&self, fan: &FanSpec) -> Result<LensTable> {
        let entries = fan.entries()?;
        let rows: Result<Vec<LensRow>> = entries
            .par_iter()
            .map(|e| {
                let record = self.scatter(e)?;
                let reciprocity = if fan.reciprocity {
                    self.reciprocity_error(&record)?
                } else {
                    None
                };
                Ok(LensRow {
                    record,
                    reciprocity,
                })
            })
            .collect();
        let rows = rows?;
        let trapped = rows
            .iter()
            .filter(|r| r.record.length.finite().is_none())
            .count();
        let symmetry = symmetry_defects(fan, &rows);
        let max_reciprocity_error = rows
            .iter()
            .filter_map(|r| r.reciprocity)
            .fold(0.0, f64::max);
        Ok(LensTable {
            trapped_fraction: trapped as f64 / rows.len() as f64,
            rows,
            symmetry,
            max_reciprocity_error,
        })
    }

    /// Trapped fraction of a single-θ fan at each angular resolution.
    pub fn trapped_fraction_trend(
        &self,
        side: Side,
        resolutions: &[usize],
    ) -> Result<Vec<(usize, f64)>> {
        resolutions
            .iter()
            .map(|&n| {
                let fan = FanSpec {
                    sides: vec![side],
                    thetas: 1,
                    angles: n,
                    reciprocity: false,
                };
                Ok((n, self.lens_table(&fan)?.trapped_fraction))
            })
            .collect()
    }
}

/// Boundary grid × angle grid. Angles are midpoints of `angles` equal cells of (−π/2, π/2);
/// θ are multiples of 2π/`thetas`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FanSpec {
    pub sides: Vec<Side>,
    pub thetas: usize,
    pub angles: usize,
    /// also retrace every exit
    pub reciprocity: bool,
}

impl FanSpec {
    pub fn angle(&self, k: usize) -> f64 {
        -PI / 2.0 + PI * (k as f64 + 0.5) / self.angles as f64
    }

    pub fn entries(&self) -> Result<Vec<BoundaryVector>> {
        if self.sides.is_empty() || self.thetas == 0 || self.angles == 0 {
            return Err(Error::ParameterDomain("empty lens fan".into()));
        }
        let mut out = Vec::with_capacity(self.sides.len() * self.thetas * self.angles);
        for side in &self.sides {
            for i in 0..self.thetas {
                let theta = 2.0 * PI * i as f64 / self.thetas as f64;
                for k in 0..self.angles {
                    out.push(BoundaryVector {
                        side: *side,
                        theta,
                        angle: self.angle(k),
                    });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LensRow {
    pub record: LensRecord,
    pub reciprocity: Option<f64>,
}

/// Symmetry defects of a table: rotation compares rows with the same angle across θ
/// (length and angular advance), reflection compares the two sides at the same angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SymmetryDefects {
    pub rotation: f64,
    pub reflection: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LensTable {
    pub rows: Vec<LensRow>,
    pub trapped_fraction: f64,
    pub symmetry: SymmetryDefects,
    pub max_reciprocity_error: f64,
}

fn row_signature(r: &LensRow) -> Option<(f64, f64)> {
    let l = r.record.length.finite()?;
    let exit = r.record.exit?;
    Some((l, exit.theta - r.record.entry.theta))
}

fn defect(a: Option<(f64, f64)>, b: Option<(f64, f64)>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => (a.0 - b.0).abs().max((a.1 - b.1).abs()),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    }
}

fn symmetry_defects(fan: &FanSpec, rows: &[LensRow]) -> SymmetryDefects {
    let per_side = fan.thetas * fan.angles;
    let mut rotation: f64 = 0.0;
    for s in 0..fan.sides.len() {
        for i in 1..fan.thetas {
            for k in 0..fan.angles {
                let a = &rows[s * per_side + k];
                let b = &rows[s * per_side + i * fan.angles + k];
                rotation = rotation.max(defect(row_signature(a), row_signature(b)));
            }
        }
    }
    let reflection = match (
        fan.sides.iter().position(|s| *s == Side::Upper),
        fan.sides.iter().position(|s| *s == Side::Lower),
    ) {
        (Some(u), Some(l)) => Some(
            (0..per_side)
                .map(|k| {
                    // mirrored entries: same angle, lengths equal
                    let a = rows[u * per_side + k].record.length.finite();
                    let b = rows[l * per_side + k].record.length.finite();
                    match (a, b) {
                        (Some(a), Some(b)) => (a - b).abs(),
                        (None, None) => 0.0,
                        _ => f64::INFINITY,
                    }
                })
                .fold(0.0, f64::max),
        ),
        _ => None,
    };
    SymmetryDefects {
        rotation,
        reflection,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ScaleGeometry;
    use crate::metrics::WarpScale;
    use crate::profiles::CoshWarp;
    use std::sync::Arc;

    fn cylinder() -> Lens<ScaleGeometry> {
        let geo = ScaleGeometry::surface(Arc::new(WarpScale {
            warp: Arc::new(CoshWarp::UNIT),
        }));
        Lens::new(geo, 1.0, Some(0.0), 1e3, &TrackOptions::default()).unwrap()
    }

    #[test]
    fn classification_signs() {
        assert_eq!(classify(1.0, 1.0, -1.0).unwrap(), Direction::Incoming);
        assert_eq!(classify(1.0, 1.0, 1.0).unwrap(), Direction::Outgoing);
        assert_eq!(classify(1.0, -1.0, 0.0).unwrap(), Direction::Tangent);
        assert_eq!(classify(1.0, -1.0, 1.0).unwrap(), Direction::Incoming);
        assert!(classify(1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn meridian_crosses_in_length_two() {
        let lens = cylinder();
        let rec = lens
            .scatter(&BoundaryVector {
                side: Side::Upper,
                theta: 0.4,
                angle: 0.0,
            })
            .unwrap();
        assert!((rec.length.finite().unwrap() - 2.0).abs() < 1e-8);
        let exit = rec.exit.unwrap();
        assert_eq!(exit.side, Side::Lower);
        assert!((exit.theta - 0.4).abs() < 1e-12);
    }

    #[test]
    fn waist_speed_is_trapped() {
        let lens = cylinder();
        let angle = (1.0 / 1f64.cosh()).asin();
        let rec = lens
            .scatter(&BoundaryVector {
                side: Side::Upper,
                theta: 0.0,
                angle,
            })
            .unwrap();
        assert!(rec.clairaut_trapped);
        assert!(rec.length.finite().is_none());
    }
}
