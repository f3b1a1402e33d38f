# Every analytic quantity in this package can be checked by simulation:
# draw blocks of normals, divide by the block absmax, and compare.  The
# sampler is counter-based (Philox keyed per block), so any sub-range of a
# run reproduces exactly, no matter how it is chunked.

import numpy as np

from quantlab import (
    McConfig,
    balanced_code,
    ci_halfwidth,
    empirical_cdf,
    estimate_usage,
    feasible_seed_interval,
    fx_cdf,
    nf4_code,
    sample_blocks,
    uniform_bins,
    usage_statistics,
)

# --- the generative process ---------------------------------------------------
cfg = McConfig(seed=2024, block_size=32, num_blocks=1 << 16)
batch = sample_blocks(cfg)
v = batch.values
print(f"{cfg.num_blocks} blocks of {cfg.block_size}")
print(f"  exactly one |x| = 1 per block: {bool((np.abs(v) == 1.0).sum(1).all())}")
print(f"  share of entries at -1: {np.mean(v == -1.0):.5f}  (expect {1/64:.5f})")

# Determinism: the same config always produces identical bits.
again = sample_blocks(cfg)
print(f"  re-draw identical: {np.array_equal(v, again.values)}")

# --- empirical CDF vs the exact mixed CDF --------------------------------------
# One retained sample per block keeps the binomial error bar honest.
print("\nempirical vs exact CDF (B=32):")
for x in (-0.5, 0.0, 0.5, 0.9):
    p, se = empirical_cdf(batch, x, independent_only=True)
    exact = fx_cdf(x, 32)
    print(f"  x={x:+.1f}: {p:.5f} +- {se:.5f}   exact {exact:.5f}   "
          f"z = {(p - exact) / se:+.2f}")

# The 95% interval halfwidth the estimates above carry:
print(f"\nci_halfwidth(0.8728, 2^30) = {ci_halfwidth(0.8728, 2**30):.1e}")

# --- usage histograms -----------------------------------------------------------
# NF4 does NOT use its 16 values equally; a balanced code does.
nf4_hist = estimate_usage(nf4_code(), 64, 1 << 15, seed=7)
print("\nNF4 usage at B=64 (%):")
print("  " + " ".join(f"{100 * p:.1f}" for p in nf4_hist.proportions))

B = 4096
bins = uniform_bins(B)
lo, hi = feasible_seed_interval(bins)
balanced = balanced_code(0.5 * (lo + hi), bins, block_size=B)
stats = usage_statistics(balanced, B, 1 << 9, seed=7)
dev = np.abs(stats.proportions - 1 / 16)
print(f"\nbalanced code at B={B}: max |usage - 6.25%| = {dev.max():.2e} "
      f"(4 sigma = {4 * stats.stderr.max():.2e})")

# The CLI wraps these comparisons with an assertion gate:
#   quantlab validate usage --kind nf4 --block-size 64 --n 65536 --csv --assert
