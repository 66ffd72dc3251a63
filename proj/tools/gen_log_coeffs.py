#!/usr/bin/env python3
"""Regenerate the degree-5 ln(m) coefficients used by log_approx.

The fit is a least-squares polynomial in t = m - 1 over t in [0, 1],
sampled on Chebyshev nodes with ln evaluated by mpmath at 50 digits.
Paste the printed array into include/fastcaps/fxp.hpp (kLogCoeffs).
"""
import mpmath
import numpy as np

mpmath.mp.dps = 50
DEGREE = 5
NODES = 2000

k = np.arange(NODES)
t = 0.5 - 0.5 * np.cos((2 * k + 1) * np.pi / (2 * NODES))
y = np.array([float(mpmath.log(1 + mpmath.mpf(float(v)))) for v in t])
coeffs = np.polynomial.polynomial.polyfit(t, y, DEGREE)

grid = np.linspace(0.0, 1.0, 100001)
fit = np.polynomial.polynomial.polyval(grid, coeffs)
exact = np.array([float(mpmath.log(1 + mpmath.mpf(float(v)))) for v in grid[::100]])
err = np.abs(fit[::100] - exact).max()

print("// max abs error on [1, 2): %.3e" % err)
print("inline constexpr std::array<double, 6> kLogCoeffs = {")
for c in coeffs:
    print("    %.17g," % c)
print("};")
