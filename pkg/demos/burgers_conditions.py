"""
Checking a Galerkin Burgers drift before simulating with it.

The convection term is energy neutral but only locally monotone, so the
sample-based checks report a state-dependent monotonicity rate. We run them,
then simulate a small ensemble and watch how the sup-norm moments behave as
the noise shrinks.
"""
import numpy as np

from levyldp import check_conditions, run_ensemble
from levyldp.spde import monitor_moments
from levyldp.harness.config import parse_config
from levyldp.harness.models import build_model
from levyldp.noise import check_h5_h6

b = build_model(parse_config("[model]\nkind = burgers\ndim = 16\n"))
for r in check_conditions(b.op, b.spec, samples=300, seed=0, noise=b.noise).results:
    print(f"{r.condition:20s} {'pass' if r.passed else 'FAIL'}  margin {r.margin:.3f}")
print("noise conditions pass:", check_h5_h6(b.noise, b.spec, samples=300).passed)

v = np.random.default_rng(0).standard_normal(16)
print("energy neutrality <B(v), v> =", float(v @ b.op.convection(v)))

for eps in (0.4, 0.2, 0.1):
    res = run_ensemble(b.spec, b.op, b.noise, b.x0, eps, 1e-2, 300, seed=0, ps=(2, 4))
    m2, m4 = monitor_moments(res, 2), monitor_moments(res, 4)
    print(f"eps={eps}: E sup|X|^2 = {m2.sup_moment:.4f}, E sup|X|^4 = {m4.sup_moment:.4f}")
