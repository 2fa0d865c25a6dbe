"""High-precision reference values for the geometry and head tests.

Run with `python3 geometry_oracle.py`; the printed numbers are frozen into
the Rust unit tests.
"""
from mpmath import mp, mpf, sqrt, tanh, atanh, asinh

mp.dps = 50


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def mobius(u, v, c):
    uv, uu, vv = dot(u, v), dot(u, u), dot(v, v)
    den = 1 + 2 * c * uv + c * c * uu * vv
    return [((1 + 2 * c * uv + c * vv) * a + (1 - c * uu) * b) / den for a, b in zip(u, v)]


def dist(u, v, c):
    w = mobius([-x for x in u], v, c)
    return 2 / sqrt(c) * atanh(sqrt(c) * sqrt(dot(w, w)))


def lam(x, c):
    return 2 / (1 - c * dot(x, x))


def gyro(x, p, a, c):
    w = mobius([-t for t in p], x, c)
    na = sqrt(dot(a, a))
    return 1 / sqrt(c) * asinh(2 * sqrt(c) * abs(dot(w, a)) / ((1 - c * dot(w, w)) * na))


c = mpf("0.1")
print("conformal (0.3,0.4)", lam([mpf("0.3"), mpf("0.4")], c))
print("mobius (0.3,0)+(0,0.4)", mobius([mpf("0.3"), 0], [0, mpf("0.4")], c))
print("exp origin (1,0)", tanh(sqrt(c)) / sqrt(c))
print("dist (0.5,0),(-0.5,0)", dist([mpf("0.5"), 0], [mpf("-0.5"), 0], c))
x = [mpf("0.3"), mpf("0.4")]
g = gyro(x, [0, 0], [1, 0], c)
print("gyro dist", g)
print("logit", lam([0, 0], c) * 1 * g)
S = [[mpf("0.1"), mpf("0.2")], [mpf("-0.3"), mpf("0.05")], [mpf("0.4"), mpf("-0.2")], [mpf("0.0"), mpf("0.6")]]
print("hyp_pc n=4", (dist(S[0], S[2], c) + dist(S[1], S[3], c)) / 4)
