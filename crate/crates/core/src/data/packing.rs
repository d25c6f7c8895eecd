use crate::error::{Error, Result};

pub const DEFAULT_TARGET_AREA: u64 = 518_400;
pub const DEFAULT_ROUNDING: u32 = 4;

const TIE_EPS: f64 = 1e-9;

fn candidates(x: f64, m: f64) -> Vec<u64> {
    let lo = (x / m).floor() * m;
    let hi = lo + m;
    let (dlo, dhi) = (x - lo, hi - x);
    let mut out = Vec::with_capacity(2);
    if lo >= m && dlo <= dhi + TIE_EPS {
        out.push(lo as u64);
    }
    if dhi <= dlo + TIE_EPS || lo < m {
        out.push(hi as u64);
    }
    out
}

/// Rescales to `target_area` keeping the aspect ratio, then rounds each side
/// to the nearest multiple of `rounding`.
pub fn pack_dims(width: u32, height: u32, target_area: u64, rounding: u32) -> Result<(u32, u32)> {
    if width == 0 || height == 0 || target_area == 0 {
        return Err(Error::Config(format!(
            "pack_dims needs positive dimensions, got {width}x{height} to area {target_area}"
        )));
    }
    if rounding == 0 {
        return Err(Error::Config("rounding multiple must be positive".into()));
    }
    let s = (target_area as f64 / (width as f64 * height as f64)).sqrt();
    let m = rounding as f64;
    let ws = candidates(width as f64 * s, m);
    let hs = candidates(height as f64 * s, m);
    let target = target_area as f64;
    let mut best = (ws[0], hs[0]);
    let mut best_gap = f64::INFINITY;
    for &w in &ws {
        for &h in &hs {
            let gap = ((w * h) as f64 - target).abs();
            if gap < best_gap {
                best = (w, h);
                best_gap = gap;
            }
        }
    }
    let fit = |v: u64| u32::try_from(v).map_err(|_| Error::Config(format!("packed side {v} overflows")));
    Ok((fit(best.0)?, fit(best.1)?))
}
