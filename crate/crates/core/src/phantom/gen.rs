//! Phantom generation: ellipsoid geometry, per-label intensity rendering,
//! style application.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeds::{child_rng, derive_seed, rng_from_seed};

use super::{label_base_intensity, MaskVolume, PatientStyle, PhantomSpec, Volume, BACKGROUND};

/// Axis-aligned ellipsoid in voxel coordinates (y, x, z).
#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    cy: f32,
    cx: f32,
    cz: f32,
    ry: f32,
    rx: f32,
    rz: f32,
}

impl Ellipsoid {
    fn contains(&self, y: f32, x: f32, z: f32) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        let dz = (z - self.cz) / self.rz;
        dy * dy + dx * dx + dz * dz <= 1.0
    }
}

/// Draw a patient style: gain uniform in [0.6, 1.4], small trilinear bias
/// coefficients, independent texture seed.
pub fn sample_style(rng: &mut ChaCha8Rng) -> PatientStyle {
    let gain = rng.random_range(0.6..=1.4);
    let mut bias = [0.0f32; 6];
    for c in &mut bias {
        *c = rng.random_range(-0.015..=0.015);
    }
    PatientStyle {
        gain,
        bias,
        texture_seed: rng.random(),
    }
}

/// Generate a phantom with a freshly sampled style. Deterministic in
/// (spec, seed).
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<(Volume, MaskVolume, PatientStyle)> {
    let style = sample_style(&mut child_rng(seed, 1));
    let (vol, mask) = generate_phantom_styled(spec, derive_seed(seed, 0), &style)?;
    Ok((vol, mask, style))
}

/// Generate a phantom with caller-supplied style. Two calls sharing
/// `geometry_seed` produce identical geometry (mask), so style effects can be
/// compared voxel-for-voxel.
pub fn generate_phantom_styled(
    spec: &PhantomSpec,
    geometry_seed: u64,
    style: &PatientStyle,
) -> Result<(Volume, MaskVolume)> {
    spec.validate()?;
    style.validate()?;
    let mut rng = rng_from_seed(geometry_seed);

    let h = spec.height;
    let w = spec.width;
    let z_len = rng.random_range(spec.depth_range[0]..=spec.depth_range[1]);

    // Body: a large ellipsoid spanning most of the grid, jittered so phantoms
    // differ in placement as well as size.
    let body = Ellipsoid {
        cy: h as f32 * rng.random_range(0.45..=0.55),
        cx: w as f32 * rng.random_range(0.45..=0.55),
        cz: z_len as f32 * rng.random_range(0.45..=0.55),
        ry: h as f32 * rng.random_range(0.30..=0.42),
        rx: w as f32 * rng.random_range(0.30..=0.42),
        rz: z_len as f32 * rng.random_range(0.40..=0.48),
    };

    // Organs and lesion sit inside the body: centers offset by at most a
    // fraction of the body semi-axes, semi-axes a fraction of the body's.
    // offset + semi stays below 1.0, so the shapes are contained analytically;
    // painting additionally intersects with the body to be safe at voxel
    // resolution.
    let mut inner: Vec<(Ellipsoid, u16)> = Vec::new();
    for j in 0..spec.organ_count {
        let e = sample_inner(&mut rng, &body, 0.5, 0.15, 0.35, 1.2);
        inner.push((e, spec.organ_label(j)));
    }
    let has_lesion = rng.random_bool(spec.lesion_probability);
    if has_lesion {
        let e = sample_inner(&mut rng, &body, 0.6, 0.08, 0.18, 1.0);
        inner.push((e, spec.lesion_label()));
    }

    // Band-limited texture: white noise on a 4x-coarse grid, trilinearly
    // upsampled. Keyed by the style's texture seed, not the geometry seed.
    let noise = CoarseNoise::new(h, w, z_len, style.texture_seed);

    let mut labels = Array3::<u16>::zeros((z_len, h, w));
    let mut image = Array3::<f32>::from_elem((z_len, h, w), BACKGROUND);
    for z in 0..z_len {
        let wz = 2.0 * z as f32 / (z_len - 1).max(1) as f32 - 1.0;
        for y in 0..h {
            let v = 2.0 * y as f32 / (h - 1) as f32 - 1.0;
            for x in 0..w {
                let (yf, xf, zf) = (y as f32, x as f32, z as f32);
                if !body.contains(yf, xf, zf) {
                    continue;
                }
                let mut label = 1u16;
                for (e, l) in &inner {
                    if e.contains(yf, xf, zf) {
                        label = *l;
                    }
                }
                labels[[z, y, x]] = label;
                let u = 2.0 * x as f32 / (w - 1) as f32 - 1.0;
                let val = label_base_intensity(label, spec.organ_count) * style.gain
                    + style.bias_at(u, v, wz)
                    + noise.at(y, x, z) * spec.noise_amplitude;
                image[[z, y, x]] = val.clamp(-1.0, 1.0);
            }
        }
    }

    Ok((Volume::new(image)?, MaskVolume::new(labels)?))
}

fn sample_inner(
    rng: &mut ChaCha8Rng,
    body: &Ellipsoid,
    max_offset: f32,
    semi_lo: f32,
    semi_hi: f32,
    semi_min: f32,
) -> Ellipsoid {
    Ellipsoid {
        cy: body.cy + body.ry * rng.random_range(-max_offset..=max_offset),
        cx: body.cx + body.rx * rng.random_range(-max_offset..=max_offset),
        cz: body.cz + body.rz * rng.random_range(-max_offset..=max_offset),
        ry: (body.ry * rng.random_range(semi_lo..=semi_hi)).max(semi_min),
        rx: (body.rx * rng.random_range(semi_lo..=semi_hi)).max(semi_min),
        rz: (body.rz * rng.random_range(semi_lo..=semi_hi)).max(semi_min),
    }
}

/// White noise on a 4x-downsampled grid with trilinear interpolation back to
/// voxel resolution.
struct CoarseNoise {
    grid: Array3<f32>,
}

const NOISE_STRIDE: f32 = 4.0;

impl CoarseNoise {
    fn new(h: usize, w: usize, z: usize, seed: u64) -> Self {
        let gz = (z as f32 / NOISE_STRIDE).ceil() as usize + 2;
        let gy = (h as f32 / NOISE_STRIDE).ceil() as usize + 2;
        let gx = (w as f32 / NOISE_STRIDE).ceil() as usize + 2;
        let mut rng = rng_from_seed(seed);
        let grid = Array3::from_shape_simple_fn((gz, gy, gx), || rng.random_range(-1.0..=1.0));
        CoarseNoise { grid }
    }

    fn at(&self, y: usize, x: usize, z: usize) -> f32 {
        let sample = |p: usize| {
            let g = p as f32 / NOISE_STRIDE;
            let i = g.floor() as usize;
            (i, g - i as f32)
        };
        let (zi, zt) = sample(z);
        let (yi, yt) = sample(y);
        let (xi, xt) = sample(x);
        let mut acc = 0.0;
        for (dz, wz) in [(0, 1.0 - zt), (1, zt)] {
            for (dy, wy) in [(0, 1.0 - yt), (1, yt)] {
                for (dx, wx) in [(0, 1.0 - xt), (1, xt)] {
                    acc += wz * wy * wx * self.grid[[zi + dz, yi + dy, xi + dx]];
                }
            }
        }
        acc
    }
}

/// Mean image intensity over voxels with any nonzero label. This is the
/// statistic that tracks the style gain, so enhancement effects are measured
/// with it.
pub fn mean_body_intensity(vol: &Volume, mask: &MaskVolume) -> f32 {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (v, l) in vol.data().iter().zip(mask.data().iter()) {
        if *l > 0 {
            sum += *v as f64;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64) as f32
    }
}

/// Recover a label volume from image intensities by banding: every voxel is
/// assigned the label whose base intensity is nearest. To factor out the
/// per-volume affine style, gain and offset are first fitted by least squares
/// of intensity against the base implied by `mask` over in-body voxels; the
/// fit uses the mask only through that single (gain, offset) pair, so a
/// volume that ignores its mask still calibrates poorly and scores low
/// adherence. The background band stays at the fixed out-of-body intensity.
pub fn recover_labels(vol: &Volume, mask: &MaskVolume, organ_count: usize) -> Result<MaskVolume> {
    if vol.dims() != mask.dims() {
        return Err(Error::shape(
            "label recovery",
            format!("{:?}", mask.dims()),
            format!("{:?}", vol.dims()),
        ));
    }
    // Least squares of v ≈ gain·base(label) + offset over in-body voxels.
    let mut n = 0.0f64;
    let (mut sv, mut sb, mut svb, mut sbb) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&v, &l) in vol.data().iter().zip(mask.data().iter()) {
        if l == 0 {
            continue;
        }
        let b = f64::from(label_base_intensity(l, organ_count));
        let v = f64::from(v);
        n += 1.0;
        sv += v;
        sb += b;
        svb += v * b;
        sbb += b * b;
    }
    let var_b = sbb / n.max(1.0) - (sb / n.max(1.0)).powi(2);
    let (gain, offset) = if n < 2.0 || var_b < 1e-12 {
        (1.0, 0.0)
    } else {
        let g = (svb / n - sv / n * sb / n) / var_b;
        (g, sv / n - g * sb / n)
    };

    let max_label = 2 + organ_count as u16;
    let bands: Vec<f64> = (0..=max_label)
        .map(|l| {
            if l == 0 {
                f64::from(BACKGROUND)
            } else {
                gain * f64::from(label_base_intensity(l, organ_count)) + offset
            }
        })
        .collect();
    let recovered = vol.data().mapv(|v| {
        let v = f64::from(v);
        let mut best = 0u16;
        let mut best_d = f64::INFINITY;
        for (l, &b) in bands.iter().enumerate() {
            let d = (v - b).abs();
            if d < best_d {
                best_d = d;
                best = l as u16;
            }
        }
        best
    });
    MaskVolume::new(recovered)
}
