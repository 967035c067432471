//! Image-quality metrics on the unit dynamic range.

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};

/// Side of the square SSIM window.
pub const SSIM_WINDOW: usize = 7;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Mean squared error over the unknown pixels of `mask`.
pub fn masked_mse(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    a.check_shape(b, "masked_mse")?;
    mask.check_matches(a, "masked_mse")?;
    let n = mask.unknown_count();
    if n == 0 {
        return Err(Error::contract("masked_mse needs at least one unknown pixel"));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .zip(mask.known())
        .filter(|(_, &k)| !k)
        .map(|((x, y), _)| (x - y) * (x - y))
        .sum();
    Ok(sum / n as f64)
}

/// `10 log10(1 / mse)`; infinite when `mse == 0`.
pub fn psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn masked_psnr(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    masked_mse(a, b, mask).map(psnr)
}

/// Render a PSNR for reports: `inf` for the zero-error sentinel.
pub fn format_psnr(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_string()
    } else {
        format!("{db:.6}")
    }
}

/// Local SSIM of every valid 7x7 window, keyed by the window centre.
/// Statistics use population (biased) variances with uniform weights.
fn local_ssim(a: &Image, b: &Image) -> Result<Vec<(usize, usize, f64)>> {
    a.check_shape(b, "ssim")?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::contract(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let half = SSIM_WINDOW / 2;
    let mut out = Vec::with_capacity((w - SSIM_WINDOW + 1) * (h - SSIM_WINDOW + 1));
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    let (p, q) = (a.get(x, y), b.get(x, y));
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            let s = ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            out.push((x0 + half, y0 + half, s));
        }
    }
    Ok(out)
}

/// Mean local SSIM over all valid 7x7 windows, `C1 = 0.01^2`, `C2 = 0.03^2`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    let local = local_ssim(a, b)?;
    if a == b {
        return Ok(1.0);
    }
    Ok(local.iter().map(|l| l.2).sum::<f64>() / local.len() as f64)
}

/// Mean local SSIM over windows centred on unknown pixels. When no window
/// centre is unknown, windows touching any unknown pixel are used instead.
pub fn masked_ssim(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    mask.check_matches(a, "masked_ssim")?;
    if mask.unknown_count() == 0 {
        return Err(Error::contract("masked_ssim needs at least one unknown pixel"));
    }
    let local = local_ssim(a, b)?;
    let centred: Vec<f64> = local
        .iter()
        .filter(|(x, y, _)| !mask.is_known(*x, *y))
        .map(|l| l.2)
        .collect();
    let picked = if centred.is_empty() {
        let half = SSIM_WINDOW / 2;
        local
            .iter()
            .filter(|(cx, cy, _)| {
                (cy - half..=cy + half).any(|y| (cx - half..=cx + half).any(|x| !mask.is_known(x, y)))
            })
            .map(|l| l.2)
            .collect()
    } else {
        centred
    };
    if picked.is_empty() {
        return Err(Error::contract("no SSIM window covers the unknown region"));
    }
    Ok(picked.iter().sum::<f64>() / picked.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(seed: u64) -> Image {
        Image::from_fn(12, 10, |x, y| {
            (((x as u64 * 31 + y as u64 * 17 + seed * 7) % 23) as f64) / 22.0
        })
    }

    #[test]
    fn identical_images_score_one() {
        let a = img(1);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(masked_mse(&a, &a, &Mask::all_unknown(12, 10)).unwrap(), 0.0);
        assert_eq!(format_psnr(masked_psnr(&a, &a, &Mask::all_unknown(12, 10)).unwrap()), "inf");
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let (a, b) = (img(1), img(2));
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert_eq!(ab, ba);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn ssim_rejects_small_or_mismatched() {
        assert!(ssim(&Image::zeros(6, 9), &Image::zeros(6, 9)).is_err());
        assert!(matches!(
            ssim(&Image::zeros(8, 9), &Image::zeros(9, 8)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn constant_offset_psnr() {
        let mask = Mask::from_fn(8, 8, |x, _| x < 4);
        let a = Image::filled(8, 8, 0.25);
        let b = Image::from_fn(8, 8, |x, _| if x < 4 { 0.25 } else { 0.75 });
        let mse = masked_mse(&a, &b, &mask).unwrap();
        assert_eq!(mse, 0.25);
        assert!((psnr(mse) - 6.020_599_913_279_624).abs() < 1e-9);
        assert!(masked_mse(&a, &b, &Mask::all_known(8, 8)).is_err());
    }

    #[test]
    fn masked_ssim_uses_unknown_centres() {
        let mask = Mask::from_fn(16, 16, |x, _| x >= 8);
        let a = Image::from_fn(16, 16, |x, y| ((x + y) % 3) as f64 / 2.0);
        let mut b = a.clone();
        // Changes far inside the known half do not reach windows centred on
        // unknown pixels.
        b.set(15, 8, 1.0 - b.get(15, 8));
        assert_eq!(masked_ssim(&a, &b, &mask).unwrap(), 1.0);
        b.set(1, 8, 1.0 - b.get(1, 8));
        assert!(masked_ssim(&a, &b, &mask).unwrap() < 1.0);
    }

    proptest! {
        #[test]
        fn masked_mse_ignores_known_pixels(seed in 0u64..500, flip in 0usize..64) {
            let mask = Mask::from_fn(8, 8, |x, y| (x * 3 + y + seed as usize) % 4 == 0);
            prop_assume!(mask.unknown_count() > 0);
            let a = Image::from_fn(8, 8, |x, y| ((x * 7 + y * 3 + seed as usize) % 11) as f64 / 10.0);
            let b = Image::from_fn(8, 8, |x, y| ((x + y * 5) % 13) as f64 / 12.0);
            let before = masked_mse(&a, &b, &mask).unwrap();
            let mut a2 = a.clone();
            let (fx, fy) = (flip % 8, flip / 8);
            a2.set(fx, fy, 1.0 - a2.get(fx, fy));
            let after = masked_mse(&a2, &b, &mask).unwrap();
            if mask.is_known(fx, fy) {
                prop_assert_eq!(before, after);
            }
        }
    }
}
