"""
Estimating a small probability three ways.

For the scalar jump model we estimate P(X_T >= 1.5) by plain Monte Carlo and
by importance sampling under the optimal control, then compare -eps log P
with the rate function as eps shrinks.
"""
import numpy as np

from levyldp import Control, RateProblem, TerminalTarget, minimize_rate, run_ensemble
from levyldp.harness.config import parse_config
from levyldp.harness.models import build_model

b = build_model(parse_config("[model]\nkind = scalar-linear\n"))
target = TerminalTarget.parse("XT>=1.5")
rate = minimize_rate(RateProblem(b.spec, b.op, b.noise, b.x0, b.T, target))
print(f"I(A) = {rate.cost:.4f}")

n = 20_000
for eps in (0.4, 0.2, 0.1):
    plain = run_ensemble(b.spec, b.op, b.noise, b.x0, eps, 1e-2, n, seed=1)
    p_naive = target.contains(plain.x_T).mean()
    tilted = run_ensemble(b.spec, b.op, b.noise, b.x0, eps, 1e-2, n, seed=1, g=rate.control,
                          start=n)
    w = target.contains(tilted.x_T) * np.exp(tilted.log_weight)
    p_is, se = w.mean(), w.std() / np.sqrt(n)
    naive_txt = f"{p_naive:.2e}" if p_naive > 0 else "no hits"
    print(f"eps={eps:4}: naive {naive_txt:>9}, importance {p_is:.3e} +- {se:.1e}, "
          f"-eps log P = {-eps * np.log(p_is):.4f}")

# a control that is too timid gives the same mean with a much larger error bar
timid = Control.constant(b.noise.marks, b.T, 1.2)
tilted = run_ensemble(b.spec, b.op, b.noise, b.x0, 0.1, 1e-2, n, seed=2, g=timid)
w = target.contains(tilted.x_T) * np.exp(tilted.log_weight)
print(f"timid control at eps=0.1: {w.mean():.3e} +- {w.std() / np.sqrt(n):.1e}")
