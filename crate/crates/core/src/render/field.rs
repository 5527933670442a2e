use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{Real, Vec3};
use crate::voxel::{Aabb, DensityActivation, VoxelGrid};

use super::net::{ColorNet, NetScratch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorMode {
    /// Three-channel color grid passed through a sigmoid.
    Explicit,
    /// Feature grid decoded by the shallow color network.
    Feature,
}

/// Density grid plus color (or feature) grid sharing one lattice.
///
/// Densities are expressed per `distance_unit` of world length: the renderer
/// divides world sample spacing by it before computing opacities.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField<T> {
    pub density: VoxelGrid<T>,
    pub color: VoxelGrid<T>,
    pub net: Option<ColorNet<T>>,
    pub activation: DensityActivation<T>,
    pub distance_unit: T,
}

impl<T: Real> RadianceField<T> {
    pub fn new(
        density: VoxelGrid<T>,
        color: VoxelGrid<T>,
        net: Option<ColorNet<T>>,
        activation: DensityActivation<T>,
        distance_unit: T,
    ) -> Result<Self> {
        let field = Self {
            density,
            color,
            net,
            activation,
            distance_unit,
        };
        field.validate()?;
        Ok(field)
    }

    /// Zero-initialized explicit-color field whose distance unit is the
    /// mean voxel edge.
    pub fn explicit(resolution: [usize; 3], bounds: Aabb<T>, alpha_init: T) -> Result<Self> {
        let density = VoxelGrid::zeros(1, resolution, bounds)?;
        let color = VoxelGrid::zeros(3, resolution, bounds)?;
        let unit = mean_voxel_size(&density);
        Self::new(density, color, None, DensityActivation::new(alpha_init, T::one())?, unit)
    }

    pub fn mode(&self) -> ColorMode {
        if self.net.is_some() {
            ColorMode::Feature
        } else {
            ColorMode::Explicit
        }
    }

    pub fn bounds(&self) -> &Aabb<T> {
        self.density.bounds()
    }

    pub fn validate(&self) -> Result<()> {
        if self.density.channels() != 1 {
            return Err(Error::Config("density grid must have one channel".into()));
        }
        if self.density.resolution() != self.color.resolution()
            || self.density.bounds() != self.color.bounds()
        {
            return Err(Error::Config(
                "density and color grids must share resolution and bounds".into(),
            ));
        }
        match &self.net {
            None if self.color.channels() != 3 => Err(Error::Config(format!(
                "explicit color mode needs a 3-channel grid, got {}",
                self.color.channels()
            ))),
            Some(net) if net.config().feature_dim != self.color.channels() => {
                Err(Error::Config(format!(
                    "feature grid has {} channels but the color network reads {}",
                    self.color.channels(),
                    net.config().feature_dim
                )))
            }
            _ if !(self.distance_unit > T::zero()) => {
                Err(Error::Config("distance unit must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Number of optimizable scalars across grids and network.
    pub fn num_params(&self) -> usize {
        self.density.values().len()
            + self.color.values().len()
            + self.net.as_ref().map_or(0, |n| n.params().len())
    }

    pub fn cast<U: Real>(&self) -> RadianceField<U> {
        RadianceField {
            density: self.density.cast(),
            color: self.color.cast(),
            net: self.net.as_ref().map(|n| n.cast()),
            activation: self.activation.cast(),
            distance_unit: U::of(self.distance_unit.as_f64()),
        }
    }
}

pub(crate) fn mean_voxel_size<T: Real>(g: &VoxelGrid<T>) -> T {
    let s = g.shape().voxel_size();
    (s[0] + s[1] + s[2]) / T::of(3.0)
}

/// Density and color at each position seen from each direction.
pub fn query_field<T: Real>(
    field: &RadianceField<T>,
    positions: &[Vec3<T>],
    view_dirs: &[Vec3<T>],
) -> Result<(Vec<T>, Vec<[T; 3]>)> {
    field.validate()?;
    if positions.len() != view_dirs.len() {
        return Err(Error::InvalidParameter(format!(
            "{} positions but {} view directions",
            positions.len(),
            view_dirs.len()
        )));
    }
    if positions.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("positions must be finite".into()));
    }
    let mut q = FieldQuery::new(field);
    let mut sigma = Vec::with_capacity(positions.len());
    let mut color = Vec::with_capacity(positions.len());
    for (p, d) in positions.iter().zip(view_dirs) {
        let s = q.eval(field, *p, *d);
        sigma.push(s.sigma);
        color.push(s.color);
    }
    Ok((sigma, color))
}

/// One evaluated sample.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SampleEval<T> {
    pub raw_density: T,
    pub sigma: T,
    pub color: [T; 3],
}

/// Reusable buffers for evaluating a field at many points.
pub(crate) struct FieldQuery<T> {
    pub stencil: crate::voxel::Stencil<T>,
    pub feature: Vec<T>,
    pub net: Option<NetScratch<T>>,
}

impl<T: Real> FieldQuery<T> {
    pub fn new(field: &RadianceField<T>) -> Self {
        Self {
            stencil: field.density.shape().stencil(field.density.shape().bounds.min),
            feature: vec![T::zero(); field.color.channels()],
            net: field.net.as_ref().map(|n| n.scratch()),
        }
    }

    /// Evaluates the field at `p`. Leaves the stencil, the interpolated
    /// color/feature vector and the network activations in `self`.
    #[inline]
    pub fn eval(&mut self, field: &RadianceField<T>, p: Vec3<T>, d: Vec3<T>) -> SampleEval<T> {
        self.stencil = field.density.shape().stencil(p);
        let mut raw = [T::zero()];
        field.density.sample_with(&self.stencil, &mut raw);
        field.color.sample_with(&self.stencil, &mut self.feature);
        let logits = match (&field.net, &mut self.net) {
            (Some(net), Some(scratch)) => net.forward(&self.feature, p, d, scratch),
            _ => [self.feature[0], self.feature[1], self.feature[2]],
        };
        SampleEval {
            raw_density: raw[0],
            sigma: field.activation.activate(raw[0]),
            color: logits.map(|l| l.sigmoid()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::net::ColorNetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_color_grid_is_mid_gray() {
        let f = RadianceField::explicit([4, 4, 4], Aabb::cube(1.0f64), 1e-3).unwrap();
        let (_, c) = query_field(&f, &[[0.1, -0.3, 0.7]], &[[0.0, 0.0, -1.0]]).unwrap();
        assert_eq!(c[0], [0.5; 3]);
    }

    #[test]
    fn density_query_composes_interp_and_activation() {
        let mut f = RadianceField::explicit([5, 5, 5], Aabb::cube(1.0f64), 1e-3).unwrap();
        f.density.set(0, 2, 2, 2, 3.0);
        let p = [0.1, 0.0, -0.05];
        let raw = f.density.sample(p)[0];
        let (s, _) = query_field(&f, &[p], &[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(s[0], f.activation.activate(raw));
        let (s, _) = query_field(&f, &[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap();
        assert!((s[0] - f.activation.activate(3.0)).abs() < 1e-12);
    }

    #[test]
    fn mode_mismatch_is_a_config_error() {
        let b = Aabb::cube(1.0f64);
        let d = VoxelGrid::zeros(1, [3, 3, 3], b).unwrap();
        let c4 = VoxelGrid::zeros(4, [3, 3, 3], b).unwrap();
        let act = DensityActivation::new(0.1, 1.0).unwrap();
        assert!(matches!(
            RadianceField::new(d.clone(), c4.clone(), None, act, 1.0),
            Err(Error::Config(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ColorNet::init(ColorNetConfig { feature_dim: 5, ..Default::default() }, &mut rng).unwrap();
        assert!(RadianceField::new(d.clone(), c4, Some(net), act, 1.0).is_err());
        let c3 = VoxelGrid::zeros(3, [3, 3, 4], b).unwrap();
        assert!(RadianceField::new(d, c3, None, act, 1.0).is_err());
    }

    #[test]
    fn feature_mode_without_direction_weights_is_view_independent() {
        let b = Aabb::cube(1.0f64);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = ColorNetConfig { feature_dim: 4, hidden: 8, ..Default::default() };
        let mut net = ColorNet::init(cfg, &mut rng).unwrap();
        net.zero_direction_weights();
        let d = VoxelGrid::zeros(1, [3, 3, 3], b).unwrap();
        let vals = (0..4 * 27).map(|i| (i as f64 * 0.37).sin()).collect();
        let c = VoxelGrid::from_values(4, [3, 3, 3], b, vals).unwrap();
        let act = DensityActivation::new(0.1, 1.0).unwrap();
        let f = RadianceField::new(d, c, Some(net), act, 1.0).unwrap();
        let p = [[0.2, 0.1, -0.4]; 2];
        let (_, col) = query_field(&f, &p, &[[0.0, 0.0, -1.0], [0.0, 0.6, 0.8]]).unwrap();
        assert_eq!(col[0], col[1]);
    }
}
