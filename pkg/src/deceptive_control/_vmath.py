"""Branch-free elementary functions that LLVM can auto-vectorise.

Numba lowers ``math.sin`` and friends to scalar libm calls, which blocks SIMD
code generation in the rollout loops.  These replacements use the classic
fdlibm kernels with select-based quadrant/range handling; they agree with
libm to a few ulp (checked in ``tests/test_vmath.py``).
"""

import numpy as np
from numba import njit
from numba.cpython.unsafe.numbers import leading_zeros

_TWO_OVER_PI = 6.36619772367581382433e-01
_PIO2_1 = 1.57079632673412561417e+00
_PIO2_2 = 6.07710050630396597660e-11
_PIO2_3 = 2.02226624871116645580e-21

_S1 = -1.66666666666666324348e-01
_S2 = 8.33333333332248946124e-03
_S3 = -1.98412698298579493134e-04
_S4 = 2.75573137070700676789e-06
_S5 = -2.50507602534068634195e-08
_S6 = 1.58969099521155010221e-10

_C1 = 4.16666666666666019037e-02
_C2 = -1.38888888888741095749e-03
_C3 = 2.48015872894767294178e-05
_C4 = -2.75573143513906633035e-07
_C5 = 2.08757232129817482790e-09
_C6 = -1.13596475577881948265e-11


@njit(inline="always", error_model="numpy")
def sincos(x):
    """``(sin x, cos x)`` for ``|x| < 2**20``."""
    n = np.floor(x * _TWO_OVER_PI + 0.5)
    y = ((x - n * _PIO2_1) - n * _PIO2_2) - n * _PIO2_3
    z = y * y
    s = y + y * z * (_S1 + z * (_S2 + z * (_S3 + z * (_S4 + z * (_S5 + z * _S6)))))
    hz = 0.5 * z
    w = 1.0 - hz
    c = w + (((1.0 - w) - hz) + z * z * (_C1 + z * (_C2 + z * (_C3 + z * (_C4 + z * (_C5 + z * _C6))))))
    # quadrant n mod 4, kept in floating point so the selects vectorise
    q = n - 4.0 * np.floor(n * 0.25)
    swap = (q == 1.0) | (q == 3.0)
    sn = c if swap else s
    cs = s if swap else c
    sn = -sn if q >= 2.0 else sn
    cs = -cs if (q == 1.0) | (q == 2.0) else cs
    return sn, cs


_AT0 = 3.33333333333329318027e-01
_AT1 = -1.99999999998764832476e-01
_AT2 = 1.42857142725034663711e-01
_AT3 = -1.11111104054623557880e-01
_AT4 = 9.09088713343650656196e-02
_AT5 = -7.69187620504482999495e-02
_AT6 = 6.66107313738753120669e-02
_AT7 = -5.83357013379057348645e-02
_AT8 = 4.97687799461593236017e-02
_AT9 = -3.65315727442169155270e-02
_AT10 = 1.62858201153657823623e-02
_TAN_PI_8 = 0.41421356237309503
_PIO4 = 7.85398163397448278999e-01
_PIO2 = 1.57079632679489655800e+00
_PI = 3.14159265358979311600e+00


@njit(inline="always", error_model="numpy")
def _atan_unit(a):
    # atan(a) for a in [0, 1]
    big = a > _TAN_PI_8
    t = (a - 1.0) / (a + 1.0) if big else a
    z = t * t
    w = z * z
    s1 = z * (_AT0 + w * (_AT2 + w * (_AT4 + w * (_AT6 + w * (_AT8 + w * _AT10)))))
    s2 = w * (_AT1 + w * (_AT3 + w * (_AT5 + w * (_AT7 + w * _AT9))))
    r = t - t * (s1 + s2)
    return r + _PIO4 if big else r


@njit(inline="always", error_model="numpy")
def atan2(y, x):
    """Full-quadrant arctangent; ``atan2(0, 0)`` is 0."""
    ax = abs(x)
    ay = abs(y)
    hi = max(ax, ay)
    lo = min(ax, ay)
    a = lo / hi if hi > 0.0 else 0.0
    r = _atan_unit(a)
    r = _PIO2 - r if ay > ax else r
    r = _PI - r if x < 0.0 else r
    return -r if y < 0.0 else r


_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_LG1 = 6.666666666666735130e-01
_LG2 = 3.999999999940941908e-01
_LG3 = 2.857142874366239149e-01
_LG4 = 2.222219843214978396e-01
_LG5 = 1.818357216161805012e-01
_LG6 = 1.531383769920937332e-01
_LG7 = 1.479819860511658591e-01
_SQRT2 = 1.4142135623730951


@njit(inline="always", error_model="numpy")
def log_uint(m, shift):
    """``log(m * 2**-shift)`` for a positive integer ``m < 2**53`` given as uint64."""
    e = np.int64(63) - np.int64(leading_zeros(m))
    f = np.float64(m) / np.float64(np.uint64(1) << np.uint64(e))
    up = f > _SQRT2
    f = 0.5 * f if up else f
    k = np.float64(e + 1 - shift) if up else np.float64(e - shift)
    f = f - 1.0
    s = f / (2.0 + f)
    z = s * s
    w = z * z
    t1 = w * (_LG2 + w * (_LG4 + w * _LG6))
    t2 = z * (_LG1 + w * (_LG3 + w * (_LG5 + w * _LG7)))
    R = t2 + t1
    hfsq = 0.5 * f * f
    return k * _LN2_HI - ((hfsq - (s * (hfsq + R) + k * _LN2_LO)) - f)
