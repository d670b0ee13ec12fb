//! Voxel grid primitives shared by phantoms, dose maps, and masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index, z-major layout (z slowest, x fastest).
    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    /// Inverse of `idx`.
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.nx;
        let y = (idx / self.nx) % self.ny;
        let z = idx / (self.nx * self.ny);
        (x, y, z)
    }
}

/// Voxel edge lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Spacing {
    pub fn isotropic(mm: f64) -> Self {
        Spacing {
            dx: mm,
            dy: mm,
            dz: mm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dx <= 0.0 || self.dy <= 0.0 || self.dz <= 0.0 {
            return Err(Error::Config(format!(
                "spacing must be positive, got ({}, {}, {})",
                self.dx, self.dy, self.dz
            )));
        }
        Ok(())
    }

    /// Voxel volume in cm^3 (spacing is in mm).
    pub fn voxel_volume_cm3(&self) -> f64 {
        self.dx * self.dy * self.dz * 1e-3
    }
}

/// Dense 3D grid in z-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Clone> Grid3<T> {
    pub fn filled(dims: Dims, value: T) -> Self {
        Grid3 {
            dims,
            data: vec![value; dims.len()],
        }
    }
}

impl<T> Grid3<T> {
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "grid data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Grid3 { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[self.dims.idx(x, y, z)]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize, z: usize) -> &mut T {
        &mut self.data[self.dims.idx(x, y, z)]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_dims<U>(&self, other: &Grid3<U>) -> bool {
        self.dims == other.dims()
    }
}
