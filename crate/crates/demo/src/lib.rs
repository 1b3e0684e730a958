//! Browser front end for `tbir`: build a phantom, take a few noisy projections,
//! and compare filtered back-projection with template-based reconstruction.
//!
//! [`Session`] holds the state and is plain Rust; [`Demo`] is its JavaScript face.

use tbir::distance::DistanceKind;
use tbir::grid::ScalarField;
use tbir::harness::{add_noise, make_phantom, ssim, PhantomKind};
use tbir::optimizer::{multilevel_reconstruct, OptimizerConfig, Problem};
use tbir::radon::{equally_spaced_angles, fbp, geometry_for_level, radon_forward, Sinogram};
use tbir::regularizer::{RegConfig, RegKind};
use tbir::solution_map::PdeKind;
use wasm_bindgen::prelude::*;

/// Greyscale image as RGBA bytes, second axis pointing up, plus its score against the target.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Image {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    score: f64,
}

#[wasm_bindgen]
impl Image {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// SSIM against the target; NaN where it does not apply.
    #[wasm_bindgen(getter)]
    pub fn score(&self) -> f64 {
        self.score
    }
}

impl Image {
    pub fn from_values(width: usize, height: usize, values: &[f64], score: f64) -> Self {
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut rgba = Vec::with_capacity(width * height * 4);
        for y in (0..height).rev() {
            for x in 0..width {
                let g = ((values[y * width + x] - lo) / span * 255.0).round() as u8;
                rgba.extend_from_slice(&[g, g, g, 255]);
            }
        }
        Self { width, height, rgba, score }
    }

    fn field(f: &ScalarField, score: f64) -> Self {
        let m = f.grid().m();
        Self::from_values(m, m, f.samples(), score)
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub template: ScalarField,
    pub target: ScalarField,
    pub data: Option<Sinogram>,
}

impl Session {
    pub fn new(kind: &str, m: usize) -> tbir::Result<Self> {
        let kind: PhantomKind = kind.parse()?;
        let (template, target) = make_phantom(kind, m)?;
        Ok(Self {
            template,
            target,
            data: None,
        })
    }

    pub fn project(&mut self, count: usize, span_deg: f64, noise: f64, seed: u64) -> tbir::Result<&Sinogram> {
        let angles = equally_spaced_angles(count, 0.0, span_deg);
        let geom = geometry_for_level(&angles, self.target.grid().level())?;
        let data = add_noise(&radon_forward(&self.target, &geom), noise, seed)?;
        Ok(self.data.insert(data))
    }

    fn data(&self) -> tbir::Result<&Sinogram> {
        self.data
            .as_ref()
            .ok_or_else(|| tbir::Error::InvalidInput("project the target first".into()))
    }

    pub fn fbp(&self) -> tbir::Result<ScalarField> {
        fbp(self.data()?, self.target.grid())
    }

    pub fn reconstruct(&self, pde: &str, distance: &str, reg: &str, gamma: f64, k_min: u32, max_iters: usize) -> tbir::Result<ScalarField> {
        let pde: PdeKind = pde.parse()?;
        let distance: DistanceKind = distance.parse()?;
        let reg: RegKind = reg.parse()?;
        let grid = *self.template.grid();
        let rc = RegConfig::new(reg, gamma, 1e2, 1e-6, grid, 1)?;
        let problem = Problem::new(pde, distance, self.template.clone(), self.data()?.clone(), rc, 5)?;
        let cfg = OptimizerConfig {
            max_gn_iters: max_iters,
            ..OptimizerConfig::default()
        };
        Ok(multilevel_reconstruct(&problem, &cfg, k_min.min(grid.level()), grid.level())?.field)
    }

    pub fn score(&self, f: &ScalarField) -> f64 {
        ssim(f, &self.target).unwrap_or(f64::NAN)
    }
}

fn js(e: tbir::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    session: Session,
}

#[wasm_bindgen]
impl Demo {
    /// `kind` is one of `disk_pair`, `blob_warp`, `affine_warp`, `contrast_rotation`.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, m: usize) -> Result<Demo, JsError> {
        Ok(Demo {
            session: Session::new(kind, m).map_err(js)?,
        })
    }

    pub fn template(&self) -> Image {
        let s = &self.session;
        Image::field(&s.template, s.score(&s.template))
    }

    pub fn target(&self) -> Image {
        Image::field(&self.session.target, 1.0)
    }

    /// Noisy projections at `count` angles from `[0, span_deg]`; returns the sinogram (angles along x).
    pub fn project(&mut self, count: usize, span_deg: f64, noise: f64, seed: u64) -> Result<Image, JsError> {
        let s = self.session.project(count, span_deg, noise, seed).map_err(js)?;
        let (p, q) = (s.geometry().num_angles(), s.geometry().q());
        let mut img = vec![0.0; p * q];
        for a in 0..p {
            for (j, &x) in s.row(0, a).iter().enumerate() {
                img[j * p + a] = x;
            }
        }
        Ok(Image::from_values(p, q, &img, f64::NAN))
    }

    pub fn fbp(&self) -> Result<Image, JsError> {
        let f = self.session.fbp().map_err(js)?;
        Ok(Image::field(&f, self.session.score(&f)))
    }

    pub fn reconstruct(&self, pde: &str, distance: &str, reg: &str, gamma: f64, k_min: u32, max_iters: usize) -> Result<Image, JsError> {
        let f = self.session.reconstruct(pde, distance, reg, gamma, k_min, max_iters).map_err(js)?;
        Ok(Image::field(&f, self.session.score(&f)))
    }
}
