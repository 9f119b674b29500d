# scratch experiment: AL behavior vs scheme / memory / defect scaling
import sys
import time

import numpy as np
from scipy.optimize import Bounds, minimize

from windtakeoff import dynamics as dyn
from windtakeoff import ocp
from windtakeoff.ocp import _estimate_multipliers
from windtakeoff.windfield import ConstantWind

scheme = sys.argv[1] if len(sys.argv) > 1 else "hermite-simpson"
maxcor = int(sys.argv[2]) if len(sys.argv) > 2 else 30
scale_defects = bool(int(sys.argv[3])) if len(sys.argv) > 3 else False
wind_value = float(sys.argv[4]) if len(sys.argv) > 4 else 0.0

params = dyn.VehicleParams.default()
boundary = ocp.BoundarySpec(
    dyn.QuadState(5.0, 0.0, 0, 0, 0, 0), (15.0, -5.0), t_init=5.0, t_final_bounds=(5.0, 30.0)
)
pb = ocp.PathBounds.default(params.max_thrust)
cfg = ocp.TranscriptionConfig(num_segments=60, ref_length=40.0, scheme=scheme)
prob = ocp.transcribe(boundary, pb, ConstantWind(wind_value), params, cfg)

k = prob.num_segments
row_scale = np.ones(prob.n_eq)
if scale_defects:
    # defect rows scaled by K / horizon_guess ~ 1/h
    row_scale[: prob.n_defects] = k / (2.0 * prob.kinematic_bound / prob.scaling.time)


class Scaled:
    def constraints(self, z):
        return row_scale * prob.constraints(z)

    def lagrangian(self, z, lam, mu):
        c, blocks = prob._eval(z, need_jac=True)
        cs = row_scale * c
        v = row_scale * (lam + mu * cs)
        val = float(z[-1]) + float(lam @ cs) + 0.5 * mu * float(cs @ cs)
        g = prob._jac_t_vec(blocks, v)
        g[-1] += 1.0
        return val, g

    def kkt(self, z, lam):
        _, blocks = prob._eval(z, need_jac=True)
        g = prob._jac_t_vec(blocks, row_scale * lam)
        g[-1] += 1.0
        at_lo = z <= prob.lower + 1e-12
        at_hi = z >= prob.upper - 1e-12
        g = np.where(at_lo, np.minimum(g, 0.0), g)
        g = np.where(at_hi, np.maximum(g, 0.0), g)
        return float(np.max(np.abs(g)))


sp = Scaled()
z = prob.initial_guess()
lam = _estimate_multipliers(prob, z) / row_scale
mu = 100.0
bounds = Bounds(prob.lower, prob.upper)
prev_cn = np.inf
total = 0
t0 = time.time()
for outer in range(20):
    maxiter = 5000 if outer == 0 else 2000
    res = minimize(
        sp.lagrangian, z, args=(lam, mu), jac=True, method="L-BFGS-B", bounds=bounds,
        options=dict(maxiter=maxiter, maxcor=maxcor, maxls=40, ftol=1e-16, gtol=3e-5),
    )
    z = res.x
    total += res.nit
    cs = sp.constraints(z)
    cn = float(np.max(np.abs(cs)))
    raw = float(np.max(np.abs(prob.constraints(z))))
    trial = lam + mu * cs
    kkt = sp.kkt(z, trial)
    print(
        f"outer {outer}: mu={mu:.0e} nit={res.nit} cn_scaled={cn:.3e} cn_raw={raw:.3e} "
        f"kkt={kkt:.3e} cost={z[-1]*prob.scaling.time:.5f} [{time.time()-t0:.1f}s]"
    )
    if raw <= 1e-6 and kkt <= 1e-4:
        print(f"CONVERGED total={total} time={time.time()-t0:.1f}s")
        break
    if cn <= 0.25 * prev_cn or raw <= 1e-6:
        lam = trial
    else:
        mu = min(mu * 10, 1e8)
        lam = trial
    prev_cn = cn
else:
    print(f"NOT CONVERGED total={total} time={time.time()-t0:.1f}s")
