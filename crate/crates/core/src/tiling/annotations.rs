//! Annotation polygons and their JSON form.
//!
//! Wire format: `{"regions":[{"class":"Invasive","polygon":[[x,y],...]},...]}`.
//! Unannotated area is implicitly Normal, so regions only ever carry cancer
//! classes.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::PatchLabel;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    pub class: PatchLabel,
    /// Vertices in slide pixel coordinates.
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub regions: Vec<Region>,
}

impl AnnotationSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Checks polygon arity, class validity, and slide bounds.
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        for (i, region) in self.regions.iter().enumerate() {
            if region.class == PatchLabel::Normal {
                return Err(Error::invalid_input(format!(
                    "region {i}: Normal is implicit and cannot be annotated"
                )));
            }
            if region.polygon.len() < 3 {
                return Err(Error::invalid_input(format!(
                    "region {i}: polygon needs at least 3 vertices"
                )));
            }
            for &[x, y] in &region.polygon {
                if !(0.0..=f64::from(width)).contains(&x) || !(0.0..=f64::from(height)).contains(&y)
                {
                    return Err(Error::invalid_input(format!(
                        "region {i}: vertex ({x}, {y}) outside slide bounds {width}x{height}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}
