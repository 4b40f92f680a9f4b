//! Named KTAR artifacts inside an output directory.

use std::path::{Path, PathBuf};

use exprec_core::ktcore::{frames_to_pqt, pqt_to_frames, read_array, write_array, ArrayData, ArrayHeader, Dtype};
use exprec_core::simulate::{CoilSet, MaskSpec, SamplingMask};
use exprec_core::{Complex64, Grid, ImageSeries, KtVolume};

use crate::{CliError, CliResult};

pub const PHANTOM: &str = "phantom.ktar";
pub const T2_TRUE: &str = "t2_true.ktar";
pub const COILS: &str = "coils.ktar";
pub const MASK: &str = "mask.ktar";
pub const MEAS: &str = "meas.ktar";
pub const METRICS: &str = "metrics.csv";

/// Handle on an output directory, stamping `hash` into everything written.
#[derive(Debug, Clone)]
pub struct OutDir {
    pub root: PathBuf,
    pub hash: String,
}

impl OutDir {
    pub fn create(root: &Path, hash: &str) -> CliResult<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::internal(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            hash: hash.to_string(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
    }

    fn write(&self, name: &str, dtype: Dtype, shape: Vec<usize>, data: ArrayData) -> CliResult<()> {
        let header = ArrayHeader::new(dtype, shape).with_config_hash(self.hash.clone());
        write_array(self.path(name), &header, &data).map_err(|e| CliError::internal(e.to_string()))
    }

    fn read(&self, name: &str, shape: &[usize]) -> CliResult<(ArrayHeader, ArrayData)> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(CliError::data(format!("missing input {}", path.display())));
        }
        let (header, data) = read_array(&path)?;
        if header.shape != shape {
            return Err(CliError::data(format!(
                "{} has shape {:?}, config implies {:?}",
                path.display(),
                header.shape,
                shape
            )));
        }
        if header.config_hash.as_deref() != Some(self.hash.as_str()) {
            return Err(CliError::data(format!(
                "{} was produced by a different config (hash {})",
                path.display(),
                header.config_hash.as_deref().unwrap_or("none")
            )));
        }
        Ok((header, data))
    }

    pub fn write_series(&self, name: &str, series: &ImageSeries) -> CliResult<()> {
        let g = series.grid();
        self.write(name, Dtype::C128, vec![g.p, g.q, g.t], ArrayData::C128(series.to_pqt()))
    }

    pub fn read_series(&self, name: &str, grid: Grid) -> CliResult<ImageSeries> {
        let (_, data) = self.read(name, &[grid.p, grid.q, grid.t])?;
        Ok(ImageSeries::from_pqt(grid, &data.into_c128()?)?)
    }

    pub fn write_volume(&self, name: &str, vol: &KtVolume) -> CliResult<()> {
        let g = vol.grid();
        self.write(name, Dtype::C128, vec![g.p, g.q, g.t], ArrayData::C128(vol.to_pqt()))
    }

    pub fn read_volume(&self, name: &str, grid: Grid) -> CliResult<KtVolume> {
        let (_, data) = self.read(name, &[grid.p, grid.q, grid.t])?;
        let vol = KtVolume::from_pqt(grid, &data.into_c128()?)?;
        if let Some(at) = vol.first_non_finite() {
            return Err(CliError::data(format!("{name} holds a non-finite sample at {at:?}")));
        }
        Ok(vol)
    }

    /// `maps` are `[L][P·Q]`; stored as f64 `[L, P, Q]`.
    pub fn write_maps(&self, name: &str, grid: Grid, maps: &[Vec<f64>]) -> CliResult<()> {
        let data: Vec<f64> = maps.iter().flatten().copied().collect();
        self.write(name, Dtype::F64, vec![maps.len(), grid.p, grid.q], ArrayData::F64(data))
    }

    pub fn read_maps(&self, name: &str, grid: Grid) -> CliResult<Vec<Vec<f64>>> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(CliError::data(format!("missing input {}", path.display())));
        }
        let (header, _) = read_array(&path)?;
        let l = header.shape.first().copied().unwrap_or(0);
        let (_, data) = self.read(name, &[l, grid.p, grid.q])?;
        let data = data.into_f64()?;
        Ok(data.chunks(grid.frame_len()).map(<[f64]>::to_vec).collect())
    }

    pub fn write_coils(&self, name: &str, coils: &CoilSet) -> CliResult<()> {
        let g = coils.grid;
        let data: Vec<Complex64> = coils.maps.iter().flatten().copied().collect();
        self.write(name, Dtype::C128, vec![coils.count(), g.p, g.q], ArrayData::C128(data))
    }

    pub fn read_coils(&self, name: &str, grid: Grid, count: usize) -> CliResult<CoilSet> {
        let (_, data) = self.read(name, &[count, grid.p, grid.q])?;
        let data = data.into_c128()?;
        Ok(CoilSet {
            grid,
            maps: data.chunks(grid.frame_len()).map(<[Complex64]>::to_vec).collect(),
        })
    }

    pub fn write_mask(&self, name: &str, mask: &SamplingMask) -> CliResult<()> {
        let g = mask.grid;
        let values: Vec<f32> = mask.as_slice().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let data = frames_to_pqt(&g, &values);
        self.write(name, Dtype::F32, vec![g.p, g.q, g.t], ArrayData::F32(data))
    }

    pub fn read_mask(&self, name: &str, grid: Grid, spec: MaskSpec, seed: u64) -> CliResult<SamplingMask> {
        let (_, data) = self.read(name, &[grid.p, grid.q, grid.t])?;
        let ArrayData::F32(values) = data else {
            return Err(CliError::data(format!("{name} must hold f32 samples")));
        };
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(CliError::data(format!("{name} must hold only 0 and 1")));
        }
        let bits: Vec<bool> = values.iter().map(|&v| v == 1.0).collect();
        Ok(SamplingMask::from_data(grid, spec, seed, pqt_to_frames(&grid, &bits))?)
    }

    /// Per-coil k-t samples as `[C, P, Q, T]`.
    pub fn write_meas(&self, name: &str, grid: Grid, coils: usize, b: &[Complex64]) -> CliResult<()> {
        let data: Vec<Complex64> = b.chunks(grid.len()).flat_map(|c| frames_to_pqt(&grid, c)).collect();
        self.write(name, Dtype::C128, vec![coils, grid.p, grid.q, grid.t], ArrayData::C128(data))
    }

    pub fn read_meas(&self, name: &str, grid: Grid, coils: usize) -> CliResult<Vec<Complex64>> {
        let (_, data) = self.read(name, &[coils, grid.p, grid.q, grid.t])?;
        let data = data.into_c128()?;
        Ok(data.chunks(grid.len()).flat_map(|c| pqt_to_frames(&grid, c)).collect())
    }
}
