"""Recover the scatterer strength from level velocities and test their distribution."""

from localfid import BilliardConfig, build_level_ensemble
from localfid.calibrate import alpha_from_variance, shift_distribution_test, shift_variance

cfg = BilliardConfig()
# 1200 positions give 400 pairs per step, enough shift samples for the KS test
ens = build_level_ensemble(cfg, 1200, seed=0)
print(f"generating alpha = {cfg.alpha:.5f}")
for dr in cfg.shifts:
    st = shift_variance(ens, dr)
    est = alpha_from_variance(st, ens.area, ens.k)
    ks = shift_distribution_test(ens, dr, cfg.alpha)
    print(f"{dr * 1e3:g} mm: var = {st.variance:.3e}  alpha = {est.value:.5f} +- {est.stderr:.5f}  "
          f"lambda = {st.lambda_hat.value:.4f}  KS p = {ks.pvalue:.3f}")
