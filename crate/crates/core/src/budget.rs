//! Image token-budget arithmetic.
//!
//! Pages are never rendered; only their nominal pixel dimensions are used to
//! work out how many vision tokens a page would cost under a pixel budget.
//! An image larger than the budget is scaled by `beta = sqrt(h * w / max_pixels)`
//! and each side is floored to a multiple of the 28 pixel patch, so every
//! downscaled image costs exactly `out_h * out_w / 784` tokens.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of one vision patch in pixels.
pub const PATCH: u64 = 28;
/// Pixels covered by one token (`PATCH * PATCH`).
pub const PIXELS_PER_TOKEN: u64 = PATCH * PATCH;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BudgetError {
    #[error("image dimensions must be positive, got {h}x{w}")]
    EmptyImage { h: u64, w: u64 },
    #[error("max_pixels must be positive")]
    ZeroBudget,
    #[error("{h}x{w} collapses to a zero-sized side under a budget of {max_pixels} pixels")]
    Degenerate { h: u64, w: u64, max_pixels: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub max_pixels: u64,
}

impl BudgetSpec {
    pub fn new(max_pixels: u64) -> Result<Self, BudgetError> {
        if max_pixels == 0 {
            return Err(BudgetError::ZeroBudget);
        }
        Ok(Self { max_pixels })
    }

    pub fn patch(&self) -> u64 {
        PATCH
    }

    pub fn pixels_per_token(&self) -> u64 {
        PIXELS_PER_TOKEN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizeResult {
    pub in_h: u64,
    pub in_w: u64,
    pub max_pixels: u64,
    /// Scaling factor; 1.0 when the image already fits.
    pub beta: f64,
    pub out_h: u64,
    pub out_w: u64,
    pub out_pixels: u64,
    pub tokens: u64,
    pub downscaled: bool,
}

/// Resize `h x w` so that it fits within `spec.max_pixels`.
///
/// The floor of `(dim / beta) / 28` is computed in exact integer arithmetic:
/// `dim / beta = sqrt(dim^2 * max / (h * w))`, and `floor(sqrt(x)) == isqrt(floor(x))`,
/// so the multiple of 28 never drifts at exact boundaries and
/// `out_h * out_w <= max_pixels` always holds.
pub fn resize_for_budget(h: u64, w: u64, spec: BudgetSpec) -> Result<ResizeResult, BudgetError> {
    if h == 0 || w == 0 {
        return Err(BudgetError::EmptyImage { h, w });
    }
    if spec.max_pixels == 0 {
        return Err(BudgetError::ZeroBudget);
    }
    let pixels = h as u128 * w as u128;
    let max = spec.max_pixels as u128;
    if pixels <= max {
        return Ok(ResizeResult {
            in_h: h,
            in_w: w,
            max_pixels: spec.max_pixels,
            beta: 1.0,
            out_h: h,
            out_w: w,
            out_pixels: pixels as u64,
            tokens: (pixels / PIXELS_PER_TOKEN as u128) as u64,
            downscaled: false,
        });
    }
    let beta = (pixels as f64 / max as f64).sqrt();
    let ppt = PIXELS_PER_TOKEN as u128;
    // (h / beta / 28)^2 = h * max / (784 * w)
    let k_h = isqrt((h as u128 * max) / (ppt * w as u128));
    let k_w = isqrt((w as u128 * max) / (ppt * h as u128));
    if k_h == 0 || k_w == 0 {
        return Err(BudgetError::Degenerate { h, w, max_pixels: spec.max_pixels });
    }
    let out_h = (k_h * PATCH as u128) as u64;
    let out_w = (k_w * PATCH as u128) as u64;
    let out_pixels = out_h * out_w;
    Ok(ResizeResult {
        in_h: h,
        in_w: w,
        max_pixels: spec.max_pixels,
        beta,
        out_h,
        out_w,
        out_pixels,
        tokens: out_pixels / PIXELS_PER_TOKEN,
        downscaled: true,
    })
}

fn isqrt(n: u128) -> u128 {
    if n < 2 {
        return n;
    }
    let mut x = (n as f64).sqrt() as u128;
    while x * x > n {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= n {
        x += 1;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// All images of a step share one pixel budget.
    MultiImage,
    /// One page per step, each page gets the whole budget.
    Cos,
}

/// Per-image pixel limit for a step showing `n_images` images.
pub fn step_budget_split(n_images: u64, step_max_pixels: u64, mode: BudgetMode) -> u64 {
    let n = n_images.max(1);
    match mode {
        BudgetMode::MultiImage => step_max_pixels / n,
        BudgetMode::Cos => step_max_pixels,
    }
}
