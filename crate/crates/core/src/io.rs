//! JSON interchange for spaces.
//!
//! ```json
//! {"ids": [0, 1], "base": 0, "masses": [1.0, 1.0],
//!  "distance": {"kind": "matrix", "rows": [[0.0, 1.0], [1.0, 0.0]]}}
//! ```
//!
//! `"distance"` may instead be `{"kind": "euclidean", "coords": [[x, ...], ...]}`;
//! the matrix is then computed once at load. Writers always emit the matrix
//! form. Optional `"flags"` carry the truncation/puncture roles and deformed
//! spaces add a `"transform"` block.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SpaceError;
use crate::space::{PointId, Space, SpaceFlags};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistanceSpec {
    Matrix { rows: Vec<Vec<f64>> },
    Euclidean { coords: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceFile {
    pub ids: Vec<PointId>,
    pub base: PointId,
    pub masses: Vec<f64>,
    pub distance: DistanceSpec,
    #[serde(default, skip_serializing_if = "is_default_flags")]
    pub flags: SpaceFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<serde_json::Value>,
}

fn is_default_flags(f: &SpaceFlags) -> bool {
    *f == SpaceFlags::default()
}

impl SpaceFile {
    pub fn from_space(space: &Space) -> Self {
        let n = space.len();
        SpaceFile {
            ids: space.ids().to_vec(),
            base: space.ids()[space.base()].clone(),
            masses: space.masses().to_vec(),
            distance: DistanceSpec::Matrix { rows: (0..n).map(|i| space.row(i).to_vec()).collect() },
            flags: space.flags(),
            transform: None,
        }
    }

    pub fn into_space(self) -> Result<Space, SpaceError> {
        let base = self
            .ids
            .iter()
            .position(|id| *id == self.base)
            .ok_or_else(|| SpaceError::Format(format!("base id {} not among ids", self.base)))?;
        match self.distance {
            DistanceSpec::Matrix { rows } => {
                let n = self.ids.len();
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(SpaceError::Shape(format!("distance matrix is not {n}x{n}")));
                }
                Space::build(self.ids, rows.concat(), self.masses, base, self.flags)
            }
            DistanceSpec::Euclidean { coords } => {
                if coords.len() != self.ids.len() {
                    return Err(SpaceError::Shape(format!(
                        "{} coordinate rows for {} ids",
                        coords.len(),
                        self.ids.len()
                    )));
                }
                Space::from_coords(self.ids, &coords, self.masses, base, self.flags)
            }
        }
    }
}

pub fn space_to_json(space: &Space) -> String {
    serde_json::to_string(&SpaceFile::from_space(space)).expect("space serializes")
}

pub fn space_from_json(text: &str) -> Result<Space, SpaceError> {
    let file: SpaceFile = serde_json::from_str(text).map_err(|e| SpaceError::Format(e.to_string()))?;
    file.into_space()
}

pub fn read_space(path: &Path) -> Result<Space, SpaceError> {
    let text = std::fs::read_to_string(path).map_err(|e| SpaceError::Format(format!("{}: {e}", path.display())))?;
    space_from_json(&text)
}

pub fn read_space_file(path: &Path) -> Result<SpaceFile, SpaceError> {
    let text = std::fs::read_to_string(path).map_err(|e| SpaceError::Format(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| SpaceError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_kind_computes_matrix() {
        let text = r#"{"ids":["a","b","c"],"base":"a","masses":[1,2,3],
            "distance":{"kind":"euclidean","coords":[[0,0],[3,4],[0,1]]}}"#;
        let s = space_from_json(text).unwrap();
        assert_eq!(s.dist(0, 1), 5.0);
        assert_eq!(s.ids()[1], PointId::Str("b".into()));
        assert_eq!(s.mass(2), 3.0);
    }

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let coords: Vec<Vec<f64>> = (0..7).map(|k| vec![(k as f64).sqrt() / 3.0, 0.1 * k as f64]).collect();
        let s = Space::from_coords(
            (0..7).map(PointId::from).collect(),
            &coords,
            (0..7).map(|k| 1.0 / (k as f64 + 3.0)).collect(),
            2,
            SpaceFlags { unbounded: true, punctured: false },
        )
        .unwrap();
        let back = space_from_json(&space_to_json(&s)).unwrap();
        assert_eq!(back, s);
        assert_eq!(space_to_json(&back), space_to_json(&s));
    }

    #[test]
    fn unknown_base_is_rejected() {
        let text = r#"{"ids":[0,1],"base":7,"masses":[1,1],
            "distance":{"kind":"matrix","rows":[[0,1],[1,0]]}}"#;
        assert!(matches!(space_from_json(text), Err(SpaceError::Format(_))));
    }
}
