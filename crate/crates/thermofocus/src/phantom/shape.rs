use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis of a cylindrical or annular prism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn plane(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

/// Geometric primitive; coordinates and radii in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeKind {
    Cylinder {
        center: [f64; 2],
        radius: f64,
        #[serde(default = "default_axis")]
        axis: Axis,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Annulus {
        center: [f64; 2],
        r_in: f64,
        r_out: f64,
        #[serde(default = "default_axis")]
        axis: Axis,
    },
    PolygonPrism {
        vertices: Vec<[f64; 2]>,
        #[serde(default = "default_axis")]
        axis: Axis,
    },
}

fn default_axis() -> Axis {
    Axis::Z
}

/// A primitive painted with a tissue at a given paint priority; higher
/// priorities overwrite lower ones during rasterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    #[serde(flatten)]
    pub kind: ShapeKind,
    pub tissue: String,
    pub priority: i32,
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ShapeKind::Cylinder { radius, .. } | ShapeKind::Sphere { radius, .. } => {
                if *radius <= 0.0 {
                    return Err(Error::Config(format!(
                        "shape `{}` has non-positive radius {radius}",
                        self.tissue
                    )));
                }
            }
            ShapeKind::Annulus { r_in, r_out, .. } => {
                if !(*r_in >= 0.0 && r_out > r_in) {
                    return Err(Error::Config(format!(
                        "annulus `{}` requires 0 <= r_in < r_out (got {r_in}, {r_out})",
                        self.tissue
                    )));
                }
            }
            ShapeKind::PolygonPrism { vertices, .. } => {
                if vertices.len() < 3 {
                    return Err(Error::Config(format!(
                        "polygon prism `{}` needs >= 3 vertices",
                        self.tissue
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        match &self.kind {
            ShapeKind::Cylinder {
                center,
                radius,
                axis,
            } => {
                let (u, v) = axis.plane();
                let du = p[u] - center[0];
                let dv = p[v] - center[1];
                du * du + dv * dv <= radius * radius
            }
            ShapeKind::Sphere { center, radius } => {
                let d2 = (p[0] - center[0]).powi(2)
                    + (p[1] - center[1]).powi(2)
                    + (p[2] - center[2]).powi(2);
                d2 <= radius * radius
            }
            ShapeKind::Annulus {
                center,
                r_in,
                r_out,
                axis,
            } => {
                let (u, v) = axis.plane();
                let du = p[u] - center[0];
                let dv = p[v] - center[1];
                let d2 = du * du + dv * dv;
                d2 >= r_in * r_in && d2 <= r_out * r_out
            }
            ShapeKind::PolygonPrism { vertices, axis } => {
                let (u, v) = axis.plane();
                point_in_polygon(p[u], p[v], vertices)
            }
        }
    }

    /// Bounding box (min, max corners) for rasterization pruning; infinite
    /// along a prism axis.
    pub fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        let inf = f64::INFINITY;
        match &self.kind {
            ShapeKind::Cylinder {
                center,
                radius,
                axis,
            } => prism_bbox(*center, *radius, *axis),
            ShapeKind::Annulus {
                center,
                r_out,
                axis,
                ..
            } => prism_bbox(*center, *r_out, *axis),
            ShapeKind::Sphere { center, radius } => (
                [center[0] - radius, center[1] - radius, center[2] - radius],
                [center[0] + radius, center[1] + radius, center[2] + radius],
            ),
            ShapeKind::PolygonPrism { vertices, axis } => {
                let (u, v) = axis.plane();
                let mut lo = [-inf; 3];
                let mut hi = [inf; 3];
                lo[u] = vertices.iter().map(|p| p[0]).fold(inf, f64::min);
                hi[u] = vertices.iter().map(|p| p[0]).fold(-inf, f64::max);
                lo[v] = vertices.iter().map(|p| p[1]).fold(inf, f64::min);
                hi[v] = vertices.iter().map(|p| p[1]).fold(-inf, f64::max);
                let a = axis.plane();
                let w = 3 - a.0 - a.1;
                lo[w] = -inf;
                hi[w] = inf;
                (lo, hi)
            }
        }
    }
}

fn prism_bbox(center: [f64; 2], radius: f64, axis: Axis) -> ([f64; 3], [f64; 3]) {
    let inf = f64::INFINITY;
    let (u, v) = axis.plane();
    let w = 3 - u - v;
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    lo[u] = center[0] - radius;
    hi[u] = center[0] + radius;
    lo[v] = center[1] - radius;
    hi[v] = center[1] + radius;
    lo[w] = -inf;
    hi[w] = inf;
    (lo, hi)
}

/// Even-odd rule point-in-polygon test.
fn point_in_polygon(x: f64, y: f64, verts: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = verts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (verts[i][0], verts[i][1]);
        let (xj, yj) = (verts[j][0], verts[j][1]);
        if ((yi > y) != (yj > y)) && (x < (xj - xi) * (y - yi) / (yj - yi) + xi) {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Defaults for the simplified cylindrical neck phantom. The paper does not
/// state outer dimensions or organ offsets; these values are estimates and
/// are plain config, not ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeckConfig {
    pub outer_radius_mm: f64,
    pub skin_inner_mm: f64,
    pub fat_inner_mm: f64,
    pub bone_center_mm: [f64; 2],
    pub bone_radius_mm: f64,
    pub cord_radius_mm: f64,
    pub trachea_center_mm: [f64; 2],
    pub trachea_radius_mm: f64,
    pub include_trachea: bool,
    /// Disable to paint a custom tumor via an explicit shape list.
    pub include_tumor: bool,
    pub tumor_center_mm: [f64; 3],
    pub tumor_diameter_mm: f64,
}

impl Default for NeckConfig {
    fn default() -> Self {
        Self {
            outer_radius_mm: 55.0,
            skin_inner_mm: 53.0,
            fat_inner_mm: 48.0,
            bone_center_mm: [0.0, -15.0],
            bone_radius_mm: 12.0,
            cord_radius_mm: 5.0,
            trachea_center_mm: [0.0, 25.0],
            trachea_radius_mm: 8.0,
            include_trachea: true,
            include_tumor: true,
            tumor_center_mm: [18.0, -25.0, 0.0],
            tumor_diameter_mm: 12.0,
        }
    }
}

/// Cylindrical neck cross-section: muscle body, skin and fat layers, bone
/// with spinal cord, laryngotracheal air canal, and the tumor sphere.
pub fn build_simple_neck(cfg: &NeckConfig) -> Result<Vec<Shape>> {
    const MM: f64 = 1e-3;
    if cfg.include_tumor && cfg.tumor_diameter_mm <= 0.0 {
        return Err(Error::Config(format!(
            "tumor diameter must be positive (got {} mm)",
            cfg.tumor_diameter_mm
        )));
    }
    if !(0.0 < cfg.fat_inner_mm && cfg.fat_inner_mm < cfg.skin_inner_mm
        && cfg.skin_inner_mm < cfg.outer_radius_mm)
    {
        return Err(Error::Config(
            "neck layers require 0 < fat_inner < skin_inner < outer_radius".into(),
        ));
    }

    let mut shapes = vec![
        Shape {
            kind: ShapeKind::Cylinder {
                center: [0.0, 0.0],
                radius: cfg.outer_radius_mm * MM,
                axis: Axis::Z,
            },
            tissue: "muscle".into(),
            priority: 0,
        },
        Shape {
            kind: ShapeKind::Annulus {
                center: [0.0, 0.0],
                r_in: cfg.skin_inner_mm * MM,
                r_out: cfg.outer_radius_mm * MM,
                axis: Axis::Z,
            },
            tissue: "skin".into(),
            priority: 1,
        },
        Shape {
            kind: ShapeKind::Annulus {
                center: [0.0, 0.0],
                r_in: cfg.fat_inner_mm * MM,
                r_out: cfg.skin_inner_mm * MM,
                axis: Axis::Z,
            },
            tissue: "fat".into(),
            priority: 2,
        },
        Shape {
            kind: ShapeKind::Cylinder {
                center: [cfg.bone_center_mm[0] * MM, cfg.bone_center_mm[1] * MM],
                radius: cfg.bone_radius_mm * MM,
                axis: Axis::Z,
            },
            tissue: "bone".into(),
            priority: 3,
        },
        Shape {
            kind: ShapeKind::Cylinder {
                center: [cfg.bone_center_mm[0] * MM, cfg.bone_center_mm[1] * MM],
                radius: cfg.cord_radius_mm * MM,
                axis: Axis::Z,
            },
            tissue: "spinal_cord".into(),
            priority: 4,
        },
    ];
    if cfg.include_trachea {
        shapes.push(Shape {
            kind: ShapeKind::Cylinder {
                center: [cfg.trachea_center_mm[0] * MM, cfg.trachea_center_mm[1] * MM],
                radius: cfg.trachea_radius_mm * MM,
                axis: Axis::Z,
            },
            tissue: super::INTERNAL_AIR.into(),
            priority: 5,
        });
    }
    if cfg.include_tumor {
        shapes.push(Shape {
            kind: ShapeKind::Sphere {
                center: [
                    cfg.tumor_center_mm[0] * MM,
                    cfg.tumor_center_mm[1] * MM,
                    cfg.tumor_center_mm[2] * MM,
                ],
                radius: cfg.tumor_diameter_mm / 2.0 * MM,
            },
            tissue: "tumor".into(),
            priority: 6,
        });
    }
    for s in &shapes {
        s.validate()?;
    }
    Ok(shapes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_neck_places_tumor_at_reference_position() {
        let shapes = build_simple_neck(&NeckConfig::default()).unwrap();
        let tumor = shapes.iter().find(|s| s.tissue == "tumor").unwrap();
        match tumor.kind {
            ShapeKind::Sphere { center, radius } => {
                let expect = [18.0e-3, -25.0e-3, 0.0];
                for a in 0..3 {
                    assert!((center[a] - expect[a]).abs() < 1e-12);
                }
                assert!((radius - 6.0e-3).abs() < 1e-12);
            }
            _ => panic!("tumor must be a sphere"),
        }
    }

    #[test]
    fn zero_diameter_tumor_rejected() {
        let cfg = NeckConfig {
            tumor_diameter_mm: 0.0,
            ..NeckConfig::default()
        };
        assert!(build_simple_neck(&cfg).is_err());
    }

    #[test]
    fn polygon_membership() {
        let square = ShapeKind::PolygonPrism {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            axis: Axis::Z,
        };
        let s = Shape {
            kind: square,
            tissue: "muscle".into(),
            priority: 0,
        };
        assert!(s.contains([0.5, 0.5, 3.0]));
        assert!(!s.contains([1.5, 0.5, 0.0]));
    }
}
