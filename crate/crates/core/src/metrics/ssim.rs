use super::MetricsError;
use crate::dataset::{DepthMap, RgbImage};

pub const DEFAULT_DEPTH_RANGE_M: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Side length of the Gaussian window (odd).
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 255.0 }
    }
}

impl SsimParams {
    pub fn with_range(dynamic_range: f64) -> Self {
        Self { dynamic_range, ..Self::default() }
    }

    fn validate(&self) -> Result<(), MetricsError> {
        let ok = self.window % 2 == 1
            && self.sigma > 0.0
            && self.dynamic_range > 0.0
            && self.dynamic_range.is_finite()
            && self.k1 >= 0.0
            && self.k2 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(MetricsError::InvalidParams(format!("{self:?}")))
        }
    }

    /// Normalized 1D Gaussian taps; the 2D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let x = i as f64 - r;
                (-(x * x) / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }
}

/// Mirror index with the edge sample repeated: `d c b a | a b c d | d c b a`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn filter(img: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, tap) in taps.iter().enumerate() {
                acc += tap * row[reflect(x as isize + t as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, tap) in taps.iter().enumerate() {
                acc += tap * tmp[reflect(y as isize + t as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Per-pixel SSIM of two single-channel images.
pub fn ssim_map(a: &[f64], b: &[f64], width: u32, height: u32, params: &SsimParams) -> Result<Vec<f64>, MetricsError> {
    params.validate()?;
    let (w, h) = (width as usize, height as usize);
    if a.len() != w * h || b.len() != w * h {
        return Err(MetricsError::DimensionMismatch(format!("{} and {} samples for {w}x{h}", a.len(), b.len())));
    }
    if w == 0 || h == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let taps = params.kernel();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter(a, w, h, &taps);
    let mu_b = filter(b, w, h, &taps);
    let e_aa = filter(&sq(a), w, h, &taps);
    let e_bb = filter(&sq(b), w, h, &taps);
    let e_ab = filter(&ab, w, h, &taps);
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    Ok((0..w * h)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect())
}

/// Mean SSIM over pixels whose window center is set in `mask` (all pixels when `None`).
pub fn ssim(
    a: &[f64],
    b: &[f64],
    width: u32,
    height: u32,
    mask: Option<&[bool]>,
    params: &SsimParams,
) -> Result<f64, MetricsError> {
    let map = ssim_map(a, b, width, height, params)?;
    masked_mean(&map, mask)
}

fn masked_mean(map: &[f64], mask: Option<&[bool]>) -> Result<f64, MetricsError> {
    match mask {
        None => Ok(map.iter().sum::<f64>() / map.len() as f64),
        Some(m) => {
            if m.len() != map.len() {
                return Err(MetricsError::DimensionMismatch(format!("mask has {} entries, image {}", m.len(), map.len())));
            }
            let (sum, n) = map.iter().zip(m).filter(|(_, k)| **k).fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
            if n == 0 {
                Err(MetricsError::EmptyMask)
            } else {
                Ok(sum / n as f64)
            }
        }
    }
}

/// SSIM of two RGB images on their luma channel, `L = 255`.
pub fn ssim_rgb(a: &RgbImage, b: &RgbImage, mask: Option<&[bool]>) -> Result<f64, MetricsError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(MetricsError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    ssim(&a.luma(), &b.luma(), a.width(), a.height(), mask, &SsimParams::default())
}

/// SSIM of two depth maps clamped to `[0, range_m]` and scaled to `[0, 1]`.
pub fn ssim_depth(a: &DepthMap, b: &DepthMap, mask: Option<&[bool]>, range_m: f64) -> Result<f64, MetricsError> {
    if !(range_m > 0.0 && range_m.is_finite()) {
        return Err(MetricsError::InvalidParams(format!("depth range {range_m}")));
    }
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(MetricsError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let norm = |d: &DepthMap| d.values().iter().map(|v| v.clamp(0.0, range_m) / range_m).collect::<Vec<_>>();
    ssim(&norm(a), &norm(b), a.width(), a.height(), mask, &SsimParams::with_range(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize, seed: u64) -> Vec<f64> {
        (0..w * h)
            .map(|i| {
                let mut v = (i as u64 + seed * 1_000_003).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                v ^= v >> 31;
                (v.wrapping_mul(0xBF58_476D_1CE4_E5B9) >> 56) as f64
            })
            .collect()
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = SsimParams::default().kernel();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(k[i], k[10 - i]);
        }
    }

    #[test]
    fn reflect_repeats_edge() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect(-9, 2), 0);
    }

    #[test]
    fn self_similarity_is_exactly_one() {
        let a = pattern(23, 17, 5);
        assert_eq!(ssim(&a, &a, 23, 17, None, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn constant_images_follow_luminance_term() {
        let (c1v, c2v) = (40.0, 90.0);
        let a = vec![c1v; 30 * 20];
        let b = vec![c2v; 30 * 20];
        let c1 = (0.01f64 * 255.0).powi(2);
        let expect = (2.0 * c1v * c2v + c1) / (c1v * c1v + c2v * c2v + c1);
        let got = ssim(&a, &b, 30, 20, None, &SsimParams::default()).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn symmetric() {
        let a = pattern(19, 13, 1);
        let b = pattern(19, 13, 2);
        let p = SsimParams::default();
        let ab = ssim(&a, &b, 19, 13, None, &p).unwrap();
        let ba = ssim(&b, &a, 19, 13, None, &p).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
        assert!(ab < 1.0);
    }

    #[test]
    fn empty_and_mismatched_masks() {
        let a = pattern(8, 8, 1);
        let p = SsimParams::default();
        assert!(matches!(ssim(&a, &a, 8, 8, Some(&[false; 64]), &p), Err(MetricsError::EmptyMask)));
        assert!(matches!(ssim(&a, &a, 8, 8, Some(&[true; 10]), &p), Err(MetricsError::DimensionMismatch(_))));
        assert!(matches!(ssim(&a, &a[..60], 8, 8, None, &p), Err(MetricsError::DimensionMismatch(_))));
    }

    #[test]
    fn depth_offset_closed_form() {
        let a = DepthMap::filled(16, 16, 2.0).unwrap();
        let b = DepthMap::filled(16, 16, 2.1).unwrap();
        let (x, y) = (0.2, 0.21);
        let c1 = 0.01f64.powi(2);
        let expect = (2.0 * x * y + c1) / (x * x + y * y + c1);
        let got = ssim_depth(&a, &b, None, 10.0).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert_eq!(ssim_depth(&a, &a, None, 10.0).unwrap(), 1.0);
    }

    #[test]
    fn depth_clamps_to_range() {
        let a = DepthMap::filled(12, 12, 12.0).unwrap();
        let b = DepthMap::filled(12, 12, 15.0).unwrap();
        assert_eq!(ssim_depth(&a, &b, None, 10.0).unwrap(), 1.0);
    }
}
