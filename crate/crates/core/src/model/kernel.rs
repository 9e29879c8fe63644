use serde::{Deserialize, Serialize};

use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    /// `(15/16)(1 - x²)²` on `[-1, 1]`; C¹ with unit mass.
    Quartic,
    /// `1 - |x|`; not differentiable at 0.
    Triangular,
    /// `(3/4)(1 - x²)`; derivative jumps at ±1.
    Epanechnikov,
}

/// A smoothing kernel supported on `[-1, 1]`, optionally rescaled by a
/// positive factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub shape: KernelShape,
    pub scale: f64,
}

impl Kernel {
    pub const QUARTIC: Kernel = Kernel {
        shape: KernelShape::Quartic,
        scale: 1.0,
    };

    pub fn new(shape: KernelShape) -> Self {
        Self { shape, scale: 1.0 }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self {
            scale: self.scale * c,
            ..self
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "quartic" => Some(Self::new(KernelShape::Quartic)),
            "triangular" => Some(Self::new(KernelShape::Triangular)),
            "epanechnikov" => Some(Self::new(KernelShape::Epanechnikov)),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.shape {
            KernelShape::Quartic => "quartic",
            KernelShape::Triangular => "triangular",
            KernelShape::Epanechnikov => "epanechnikov",
        }
    }

    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        if !(x.abs() < 1.0) {
            return 0.0;
        }
        let v = match self.shape {
            KernelShape::Quartic => {
                let u = 1.0 - x * x;
                0.9375 * u * u
            }
            KernelShape::Triangular => 1.0 - x.abs(),
            KernelShape::Epanechnikov => 0.75 * (1.0 - x * x),
        };
        self.scale * v
    }

    /// Derivative, with the one-sided convention `φ'(0) = 0` for the
    /// triangular kernel and the interior limit at ±1 for Epanechnikov.
    #[inline]
    pub fn phi_prime(&self, x: f64) -> f64 {
        if x.abs() > 1.0 {
            return 0.0;
        }
        let v = match self.shape {
            KernelShape::Quartic => -3.75 * x * (1.0 - x * x),
            KernelShape::Triangular => {
                if x.abs() == 1.0 || x == 0.0 {
                    0.0
                } else {
                    -x.signum()
                }
            }
            KernelShape::Epanechnikov => -1.5 * x,
        };
        self.scale * v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCheck {
    pub name: &'static str,
    pub passed: bool,
    pub residual: f64,
    /// Points where the check failed (empty when it passed).
    pub failing_points: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub kernel: &'static str,
    pub checks: Vec<KernelCheck>,
}

impl KernelReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&KernelCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const GRID: usize = 401;
const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;

fn check(name: &'static str, residual: f64, tol: f64, failing_points: Vec<f64>) -> KernelCheck {
    KernelCheck {
        name,
        passed: residual <= tol && failing_points.is_empty(),
        residual,
        failing_points,
    }
}

/// Checks nonnegativity, support, unit mass, vanishing endpoint derivative
/// and consistency of `φ'` with one-sided finite differences of `φ`.
pub fn kernel_validate(kernel: &Kernel) -> KernelReport {
    let grid: Vec<f64> = (0..GRID).map(|i| -1.0 + 2.0 * i as f64 / (GRID - 1) as f64).collect();
    let mut checks = Vec::new();

    let negative: Vec<f64> = grid.iter().copied().filter(|&x| kernel.phi(x) < 0.0).collect();
    let worst = grid.iter().map(|&x| (-kernel.phi(x)).max(0.0)).fold(0.0, f64::max);
    checks.push(check("nonnegative", worst, 0.0, negative));

    let outside: Vec<f64> = (0..=100)
        .flat_map(|i| {
            let x = 1.0 + i as f64 * 0.05;
            [x, -x]
        })
        .filter(|&x| kernel.phi(x) != 0.0)
        .collect();
    let leak = outside.iter().map(|&x| kernel.phi(x).abs()).fold(0.0, f64::max);
    checks.push(check("support", leak, 0.0, outside));

    // split at 0 so kinks there do not hurt convergence
    let mass = quad::simpson(|x| kernel.phi(x), -1.0, 0.0).unwrap_or(f64::NAN)
        + quad::simpson(|x| kernel.phi(x), 0.0, 1.0).unwrap_or(f64::NAN);
    let residual = (mass - 1.0).abs();
    checks.push(check("unit_integral", residual, 1e-10, Vec::new()));

    let ends = [-1.0, 1.0];
    let end_residual = ends.iter().map(|&x| kernel.phi_prime(x).abs()).fold(0.0, f64::max);
    let bad_ends: Vec<f64> = ends
        .iter()
        .copied()
        .filter(|&x| kernel.phi_prime(x).abs() > FD_TOL)
        .collect();
    checks.push(check("endpoint_derivative", end_residual, FD_TOL, bad_ends));

    let mut worst = 0.0_f64;
    let mut bad = Vec::new();
    for &x in &grid {
        let d = kernel.phi_prime(x);
        let fwd = (kernel.phi(x + FD_STEP) - kernel.phi(x)) / FD_STEP;
        let bwd = (kernel.phi(x) - kernel.phi(x - FD_STEP)) / FD_STEP;
        let r = (fwd - d).abs().max((bwd - d).abs());
        worst = worst.max(r);
        if r > FD_TOL {
            bad.push(x);
        }
    }
    checks.push(check("derivative_consistency", worst, FD_TOL, bad));

    KernelReport {
        kernel: kernel.name(),
        checks,
    }
}
