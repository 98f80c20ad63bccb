"""Draw rotations from a Bingham distribution and compare with the theory.

Prints the acceptance rate of the rejection sampler next to its predicted
value, and the sample second moments next to the gradient of log N(Z),
which is what they should converge to.
"""
import numpy as np

from rlcalib.bingham import (
    BinghamParams,
    bingham_sample,
    log_norm_const,
    mode,
    solve_envelope_b,
    theoretical_acceptance_rate,
)
from rlcalib.geometry import geodesic_rotation_error

rng = np.random.default_rng(0)
M, _ = np.linalg.qr(rng.standard_normal((4, 4)))

for Z in ([0, 0, 0, 0], [-30, -4, -4, 0], [-400, -400, -100, 0], [-1e5, -1e5, -1e5, 0]):
    p = BinghamParams(M, np.array(Z, dtype=float))
    x, st = bingham_sample(p, rng, 50_000, return_stats=True)
    _, grad = log_norm_const(p.Z)
    moments = ((x @ M) ** 2).mean(axis=0)
    spread = np.degrees(geodesic_rotation_error(x, mode(p).quaternion))
    print(f"Z = {Z}")
    print(f"  envelope b = {solve_envelope_b(p.Z):.4f}")
    print(f"  acceptance {st.rate:.3f} (predicted {theoretical_acceptance_rate(p):.3f})")
    print(f"  E[(M^T x)^2] = {np.round(moments, 4)}")
    print(f"  d log N / dZ = {np.round(grad, 4)}")
    print(f"  median angle to the mode: {np.median(spread):.2f} deg")
