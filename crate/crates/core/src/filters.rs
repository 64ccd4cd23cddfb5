//! Slice filters (Sobel magnitude, windowed variance) and a separable 3D
//! Gaussian. All filters use replicate (edge-clamp) padding.

/// Row-major 2D map of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "plane data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Self {
        Self::new(rows, cols, data.iter().map(|&v| v as f64).collect())
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Value at signed coordinates, clamped to the nearest edge pixel.
    #[inline]
    fn clamped(&self, r: isize, c: isize) -> f64 {
        let r = r.clamp(0, self.rows as isize - 1) as usize;
        let c = c.clamp(0, self.cols as isize - 1) as usize;
        self.data[r * self.cols + c]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Min-max normalization to [0, 1]; a constant map becomes all zeros.
    pub fn normalized(&self) -> Plane {
        let (lo, hi) = self.min_max();
        normalize_with(self, lo, hi)
    }
}

/// Relative spread below which a map counts as constant.
pub const FLAT_RTOL: f64 = 1e-9;

/// Maps `[lo, hi]` onto `[0, 1]`. When the range is zero, or only rounding
/// noise relative to the magnitude, the result is all zeros.
pub fn normalize_with(p: &Plane, lo: f64, hi: f64) -> Plane {
    let range = hi - lo;
    let data = if range > FLAT_RTOL * lo.abs().max(hi.abs()) {
        p.data.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; p.data.len()]
    };
    Plane::new(p.rows, p.cols, data)
}

/// Sobel gradient magnitude `sqrt((I*Sx)^2 + (I*Sy)^2)`.
pub fn slice_gradient(slice: &Plane) -> Plane {
    let mut out = Plane::zeros(slice.rows, slice.cols);
    for r in 0..slice.rows {
        for c in 0..slice.cols {
            let (ri, ci) = (r as isize, c as isize);
            let p = |dr: isize, dc: isize| slice.clamped(ri + dr, ci + dc);
            let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            out.data[r * slice.cols + c] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Local variance `E[x^2] - E[x]^2` over a `w x w` window, evaluated in the
/// centred form `E[(x - E[x])^2]` so flat regions give exactly zero.
pub fn slice_variance(slice: &Plane, w: usize) -> Plane {
    assert!(w >= 1 && w % 2 == 1, "variance window must be odd, got {w}");
    let half = (w / 2) as isize;
    let n = (w * w) as f64;
    let mut out = Plane::zeros(slice.rows, slice.cols);
    let mut window = Vec::with_capacity(w * w);
    for r in 0..slice.rows {
        for c in 0..slice.cols {
            window.clear();
            for dr in -half..=half {
                for dc in -half..=half {
                    window.push(slice.clamped(r as isize + dr, c as isize + dc));
                }
            }
            let x0 = window[0];
            let mean = window.iter().map(|&x| x - x0).sum::<f64>() / n;
            let var = window.iter().map(|&x| (x - x0 - mean) * (x - x0 - mean)).sum::<f64>() / n;
            out.data[r * slice.cols + c] = var.max(0.0);
        }
    }
    out
}

/// Normalized 1D Gaussian weights for offsets `-radius..=radius`,
/// `radius = ceil(3 sigma)`. Empty for `sigma <= 0`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return Vec::new();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (-radius..=radius).map(|k| (-((k * k) as f64) / denom).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let strides = [dims[1] * dims[2], dims[2], 1];
    let len = dims[axis] as isize;
    let stride = strides[axis];
    let mut out = vec![0.0; data.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let pos = ((idx / stride) % dims[axis]) as isize;
        let base = idx - pos as usize * stride;
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let q = (pos + k as isize - radius).clamp(0, len - 1) as usize;
            acc += w * data[base + q * stride];
        }
        *o = acc;
    }
    out
}

/// Separable 3D Gaussian blur; `sigma == 0` returns the input unchanged.
pub fn gaussian_blur_3d(data: &[f64], dims: [usize; 3], sigma: f64) -> Vec<f64> {
    assert_eq!(data.len(), dims.iter().product::<usize>(), "blur data length");
    let kernel = gaussian_kernel(sigma);
    if kernel.is_empty() {
        return data.to_vec();
    }
    let pass = convolve_axis(data, dims, 2, &kernel);
    let pass = convolve_axis(&pass, dims, 1, &kernel);
    convolve_axis(&pass, dims, 0, &kernel)
}
