"""Construction and analysis of 16-value quantization codes on [-1, 1].

Four families are provided:

* ``nf4_code`` -- Gaussian-quantile codes built from two asymmetric evenly
  spaced probability grids, in both of the circulating variants (quantile of
  averaged probabilities vs. average of quantiles).
* ``af4_code`` -- the expected-L1-optimal code for a given block size,
  constrained to contain -1, 0 and 1, found by a shooting method on the
  median/stationarity recurrence.
* ``balanced_code`` -- codes whose sixteen values each receive exactly 1/16
  of the probability mass, built by reflecting an initial value through the
  1/16-quantile bin edges.
* ``balanced_code_with_endpoints`` -- a balanced code with the values
  nearest to -1, 0 and 1 snapped onto those points.

``expected_l1`` scores any code by its expected absolute reconstruction
error under the block-size-dependent law of the normalized inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .distributions import scaled_max_distribution
from .errors import ConstructionError, DomainError, FormatError

KIND_NF4_QUANTILE_OF_AVERAGE = "nf4_quantile_of_average"
KIND_NF4_AVERAGE_OF_QUANTILE = "nf4_average_of_quantile"
KIND_AF4 = "af4"
KIND_BALANCED = "balanced"
KIND_BALANCED_WITH_ENDPOINTS = "balanced_with_endpoints"
KIND_CUSTOM = "custom"

VALID_KINDS = frozenset({
    KIND_NF4_QUANTILE_OF_AVERAGE,
    KIND_NF4_AVERAGE_OF_QUANTILE,
    KIND_AF4,
    KIND_BALANCED,
    KIND_BALANCED_WITH_ENDPOINTS,
    KIND_CUSTOM,
})

# Kinds whose definition is tied to a particular block size.
_BLOCK_SIZE_REQUIRED = frozenset({
    KIND_AF4,
    KIND_BALANCED,
    KIND_BALANCED_WITH_ENDPOINTS,
})

# Kinds that must contain -1, 0, 1 exactly (at positions 1, 8, 16).
_ANCHORED_KINDS = frozenset({
    KIND_NF4_QUANTILE_OF_AVERAGE,
    KIND_NF4_AVERAGE_OF_QUANTILE,
    KIND_AF4,
})

DEFAULT_SHOOTING_TOL = 1e-9
DEFAULT_MASS_TOL = 1e-6
SEED_SCAN_POINTS = 64
BALANCED_SCAN_POINTS = 1024


@dataclass(frozen=True, eq=False)
class Code16:
    """An ordered 16-value codebook in [-1, 1] plus provenance metadata."""

    values: np.ndarray
    kind: str = KIND_CUSTOM
    block_size: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (16,):
            raise DomainError(f"expected 16 code values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("code values must be finite")
        if np.any(np.diff(vals) <= 0):
            bad = int(np.flatnonzero(np.diff(vals) <= 0)[0]) + 1
            raise DomainError(
                f"code values must be strictly increasing; "
                f"value {bad} >= value {bad + 1}"
            )
        if vals[0] < -1.0 or vals[-1] > 1.0:
            raise DomainError("code values must lie within [-1, 1]")
        if self.kind not in VALID_KINDS:
            raise DomainError(f"unknown code kind {self.kind!r}")
        if self.kind in _BLOCK_SIZE_REQUIRED and self.block_size is None:
            raise DomainError(f"kind {self.kind!r} requires a block_size")
        if self.kind in _ANCHORED_KINDS:
            if vals[0] != -1.0 or vals[7] != 0.0 or vals[15] != 1.0:
                raise DomainError(
                    f"kind {self.kind!r} must contain -1, 0, 1 at positions 1, 8, 16"
                )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "params", dict(self.params))

    def bin_edges(self):
        """Nearest-value region boundaries: midpoints, padded to [-1, 1]."""
        v = self.values
        return np.concatenate(([-1.0], 0.5 * (v[:-1] + v[1:]), [1.0]))


@dataclass(frozen=True, eq=False)
class BinEdges:
    """17 bin edges partitioning [-1, 1]."""

    edges: np.ndarray

    def __post_init__(self):
        e = np.array(self.edges, dtype=float)
        if e.shape != (17,):
            raise DomainError(f"expected 17 bin edges, got shape {e.shape}")
        if e[0] != -1.0 or e[-1] != 1.0:
            raise DomainError("bin edges must start at -1 and end at 1")
        if np.any(np.diff(e) < 0):
            raise DomainError("bin edges must be nondecreasing")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)


# ---------------------------------------------------------------------------
# NF4
# ---------------------------------------------------------------------------

def nf4_code(variant="quantile_of_average"):
    """The 16-value Gaussian-quantile code.

    Probabilities run over two evenly spaced grids: 8 points from delta to
    1/2 for the non-positive half, 9 points from 1/2 to 1-delta for the
    non-negative half (1/2 shared, mapping to the code value 0), with
    delta = (1/32 + 1/30) / 2.  Each grid probability is the midpoint of a
    narrow pair spanning 1/32..1/30; the two variants differ in whether the
    quantile is taken at the midpoint (``quantile_of_average``) or the two
    pair quantiles are averaged (``average_of_quantile``).  The result is
    normalized so the largest magnitude is exactly 1.
    """
    if variant not in ("quantile_of_average", "average_of_quantile"):
        raise DomainError(
            f"variant must be 'quantile_of_average' or 'average_of_quantile', "
            f"got {variant!r}"
        )
    delta = 0.5 * (1.0 / 32.0 + 1.0 / 30.0)
    neg_probs = np.linspace(delta, 0.5, 8)[:-1]       # strictly below 1/2
    pos_probs = np.linspace(0.5, 1.0 - delta, 9)[1:]  # strictly above 1/2

    if variant == "quantile_of_average":
        quantile = ndtri
    else:
        halfgap = 0.5 * (1.0 / 30.0 - 1.0 / 32.0)

        def quantile(p):
            return 0.5 * (ndtri(p - halfgap) + ndtri(p + halfgap))

    # Mirror the negative half off the positive quantiles so the symmetry
    # (and hence the -1 endpoint after normalization) is exact in floats.
    neg = -quantile(1.0 - neg_probs)
    pos = quantile(pos_probs)
    raw = np.concatenate([neg, [0.0], pos])
    values = raw / raw[-1]
    return Code16(values, kind=f"nf4_{variant}", params={"variant": variant})


# ---------------------------------------------------------------------------
# AF4 (expected-L1 stationarity shooting)
# ---------------------------------------------------------------------------

class EscapedSupportError(ConstructionError):
    """A stationarity step demanded a quantile inside the +1 atom.

    Raised when the target bin mass cannot fit below the upper endpoint,
    which signals a shooting seed that was too aggressive.
    """


def stationarity_step(a_prev, a_cur, block_size, settings=None):
    """Advance the median-condition recurrence by one code value.

    Given consecutive code values a_prev < a_cur, returns the unique a_next
    such that a_cur carries equal probability mass on both sides of its
    nearest-value bin:

        F(a_cur) - F((a_prev + a_cur)/2) = F((a_cur + a_next)/2) - F(a_cur)

    solved as a_next = 2 * F^-1(rho) - a_cur with
    rho = 2 F(a_cur) - F((a_prev + a_cur)/2).
    """
    a_prev = float(a_prev)
    a_cur = float(a_cur)
    if not a_prev < a_cur:
        raise DomainError(f"need a_prev < a_cur, got {a_prev} >= {a_cur}")
    mid = 0.5 * (a_prev + a_cur)
    if not mid > -1.0:
        raise DomainError(f"midpoint {mid} must lie above the support point -1")
    dist = scaled_max_distribution(block_size, settings)
    rho = 2.0 * dist.fx_cdf(a_cur) - dist.fx_cdf(mid)
    if rho >= 1.0 - dist.atom_mass:
        raise EscapedSupportError(
            f"stationarity step escaped the support: rho={rho:.6g} >= "
            f"1 - 1/(2B) = {1.0 - dist.atom_mass:.6g} (seed too large or small)"
        )
    return 2.0 * dist.fx_quantile(rho) - a_cur


def _run_trajectory(left, seed, num_steps, block_size, settings):
    """Iterate the recurrence from (left, seed); returns the full value list."""
    vals = [left, seed]
    for _ in range(num_steps):
        vals.append(stationarity_step(vals[-2], vals[-1], block_size, settings))
    return vals


def _shoot_side(left, lo, hi, num_steps, target, block_size, settings,
                shooting_tol):
    """Find the seed in (lo, hi) whose trajectory endpoint hits target.

    Coarse scan to bracket a sign change of endpoint - target, then
    bisection until the endpoint residual is below shooting_tol.  Seeds
    whose trajectory escapes the support count as overshoots.
    """

    def residual(seed):
        try:
            vals = _run_trajectory(left, seed, num_steps, block_size, settings)
        except EscapedSupportError:
            return None, None  # overshoot
        return vals[-1] - target, vals

    seeds = np.linspace(lo, hi, SEED_SCAN_POINTS + 2)[1:-1]
    results = [residual(s)[0] for s in seeds]

    brackets = []
    for i in range(len(seeds) - 1):
        r0, r1 = results[i], results[i + 1]
        if r0 is None:
            continue
        if r0 < 0.0 and (r1 is None or r1 >= 0.0):
            brackets.append((seeds[i], seeds[i + 1]))
    if not brackets:
        raise ConstructionError(
            f"no sign change of the shooting residual over seeds in "
            f"({lo:.6g}, {hi:.6g}) for block size {block_size}; "
            f"scanned {SEED_SCAN_POINTS} seeds"
        )
    if len(brackets) > 1:
        raise ConstructionError(
            f"multiple shooting brackets found for block size {block_size}: "
            f"{brackets}; refusing to pick one silently"
        )

    s_lo, s_hi = brackets[0]
    for _ in range(200):
        s_mid = 0.5 * (s_lo + s_hi)
        r_mid, vals = residual(s_mid)
        if r_mid is not None and abs(r_mid) < shooting_tol:
            return s_mid, vals
        if r_mid is None or r_mid > 0.0:
            s_hi = s_mid
        else:
            s_lo = s_mid
        if s_hi - s_lo < 1e-16:
            break
    raise ConstructionError(
        f"shooting bisection stalled in [{s_lo!r}, {s_hi!r}] without reaching "
        f"|residual| < {shooting_tol:g}"
    )


def af4_code(block_size, settings=None, *, shooting_tol=DEFAULT_SHOOTING_TOL,
             mass_tol=DEFAULT_MASS_TOL):
    """Expected-L1 stationary code containing -1, 0 and 1, for one block size.

    The values between the fixed points are pinned down by requiring every
    interior value to be the median of its nearest-value bin.  Two shooting
    problems solve for the free values: the seed next to -1 must make the
    recurrence land exactly on 0 six steps later, and the seed next to 0
    must land on 1 seven steps later.

    Runs in pure Python and is interruptible at any iteration.
    """
    if block_size < 2:
        raise DomainError("af4 requires block size >= 2")
    seed_neg, neg_vals = _shoot_side(
        -1.0, -1.0, 0.0, 6, 0.0, block_size, settings, shooting_tol)
    seed_pos, pos_vals = _shoot_side(
        0.0, 0.0, 1.0, 7, 1.0, block_size, settings, shooting_tol)
    values = np.concatenate([
        [-1.0], neg_vals[1:7], [0.0], pos_vals[1:8], [1.0],
    ])
    code = Code16(
        values,
        kind=KIND_AF4,
        block_size=int(block_size),
        params={
            "seed_negative": seed_neg,
            "seed_positive": seed_pos,
            "shooting_tol": shooting_tol,
            "mass_tol": mass_tol,
        },
    )
    residuals = median_condition_residuals(code, block_size, settings)
    if np.max(residuals) >= mass_tol:
        raise ConstructionError(
            f"af4 construction left a median-condition residual of "
            f"{np.max(residuals):.3g} >= {mass_tol:g} for block size {block_size}"
        )
    return code


def median_condition_residuals(code, block_size, settings=None):
    """|left bin mass - right bin mass| for each of the 13 interior values.

    Interior means positions 2..7 and 9..15; the fixed values -1, 0, 1 carry
    no stationarity condition.
    """
    dist = scaled_max_distribution(block_size, settings)
    v = np.asarray(code.values if isinstance(code, Code16) else code, dtype=float)
    residuals = []
    for j in list(range(1, 7)) + list(range(8, 15)):
        f_cur = dist.fx_cdf(v[j])
        left = f_cur - dist.fx_cdf(0.5 * (v[j - 1] + v[j]))
        right = dist.fx_cdf(0.5 * (v[j] + v[j + 1])) - f_cur
        residuals.append(abs(left - right))
    return np.array(residuals)


# ---------------------------------------------------------------------------
# Balanced (uniform-usage) codes
# ---------------------------------------------------------------------------

def uniform_bins(block_size, settings=None):
    """Bin edges holding exactly 1/16 of the mixed law's mass each.

    The outer edges are pinned to +/-1 so the atoms fall inside the
    outermost bins; this needs the atom mass 1/(2B) to be below 1/16,
    i.e. block size >= 9.
    """
    if block_size < 9:
        raise DomainError(
            f"uniform bins require block size >= 9 so the atoms fit inside "
            f"the outer bins; got {block_size}"
        )
    dist = scaled_max_distribution(block_size, settings)
    edges = np.empty(17)
    edges[0], edges[16] = -1.0, 1.0
    for k in range(1, 16):
        edges[k] = dist.fx_quantile(k / 16.0)
    return BinEdges(edges)


def _reflect(seed, edges):
    """q_k = 2 b_k - q_{k-1}: each edge becomes the midpoint of a code pair."""
    q = np.empty(16)
    q[0] = seed
    for k in range(1, 16):
        q[k] = 2.0 * edges[k] - q[k - 1]
    return q


def _first_violation(q, edges):
    """Index (1-based) of the first value outside its bin, or None."""
    for k in range(16):
        if not (edges[k] <= q[k] <= edges[k + 1]):
            return k + 1
        if k and q[k] <= q[k - 1]:
            return k + 1
    return None


def balanced_code(q1_seed, bins, *, block_size=None):
    """Uniform-usage code from a seed value in the first bin.

    The reflection recurrence makes every interior bin edge the midpoint of
    two consecutive code values, so each value receives exactly 1/16 of the
    mass.  Only a sub-interval of seeds is feasible; infeasible seeds raise
    ConstructionError naming the first value that escapes its bin.

    block_size records which distribution the bins came from; without it
    the result is labeled "custom", since "balanced" only means something
    relative to a block size.
    """
    q1_seed = float(q1_seed)
    edges = bins.edges
    if not (edges[0] <= q1_seed <= edges[1]):
        raise DomainError(
            f"q1 seed {q1_seed:.6g} must lie in the first bin "
            f"[{edges[0]:.6g}, {edges[1]:.6g}]"
        )
    q = _reflect(q1_seed, edges)
    bad = _first_violation(q, edges)
    if bad is not None:
        raise ConstructionError(
            f"infeasible q1 seed {q1_seed:.6g}: code value {bad} "
            f"({q[bad - 1]:.6g}) escapes its bin "
            f"[{edges[bad - 1]:.6g}, {edges[bad]:.6g}]"
        )
    return Code16(
        q,
        kind=KIND_BALANCED if block_size is not None else KIND_CUSTOM,
        block_size=block_size,
        params={"q1_seed": q1_seed, "construction": "balanced_reflection"},
    )


def feasible_seed_interval(bins, num_scan=BALANCED_SCAN_POINTS):
    """Scan the first bin for seeds that produce a feasible balanced code.

    Returns (lo, hi), the extremes of the feasible seeds found.
    """
    edges = bins.edges
    seeds = np.linspace(edges[0], edges[1], num_scan)
    feasible = []
    for s in seeds:
        q = _reflect(s, edges)
        if _first_violation(q, edges) is None:
            feasible.append(s)
    if not feasible:
        raise ConstructionError(
            f"no feasible balanced-code seed among {num_scan} scanned values "
            f"in [{edges[0]:.6g}, {edges[1]:.6g}]"
        )
    return float(feasible[0]), float(feasible[-1])


def balanced_code_with_endpoints(block_size, settings=None):
    """Balanced code with the values nearest -1, 0, +1 snapped onto them.

    Uses the midpoint of the feasible seed interval, then replaces three
    values.  The replacement trades away exact uniformity of usage for the
    presence of the endpoints in the code.
    """
    bins = uniform_bins(block_size, settings)
    lo, hi = feasible_seed_interval(bins)
    seed = 0.5 * (lo + hi)
    base = balanced_code(seed, bins, block_size=block_size)
    values = np.array(base.values)
    replaced = {}
    for target in (-1.0, 0.0, 1.0):
        idx = int(np.argmin(np.abs(values - target)))
        replaced[str(target)] = idx + 1
        values[idx] = target
    return Code16(
        values,
        kind=KIND_BALANCED_WITH_ENDPOINTS,
        block_size=int(block_size),
        params={"q1_seed": seed, "replaced_positions": replaced},
    )


# ---------------------------------------------------------------------------
# Scoring and analytic usage
# ---------------------------------------------------------------------------

def expected_l1(code, block_size, settings=None):
    """E[min_j |X - q_j|] under the mixed law for the given block size."""
    values = code.values if isinstance(code, Code16) else np.asarray(code, float)
    dist = scaled_max_distribution(block_size, settings)
    return dist.expected_min_abs_distance(values)


def code_bin_masses(code, block_size, settings=None):
    """Probability of each code value being selected, under the mixed law."""
    dist = scaled_max_distribution(block_size, settings)
    edges = code.bin_edges()
    cdf_at = np.array([dist.fx_cdf(e) for e in edges[1:-1]])
    return np.diff(np.concatenate(([0.0], cdf_at, [1.0])))


# ---------------------------------------------------------------------------
# File format: code16/v1
# ---------------------------------------------------------------------------

def code_write(code, path):
    """Write a code to a code16/v1 JSON document.

    Values are serialized with 17 significant digits, which round-trips
    IEEE doubles exactly.
    """
    vals = ",\n    ".join(format(float(v), ".17g") for v in code.values)
    bs = "null" if code.block_size is None else str(int(code.block_size))
    text = (
        "{\n"
        '  "format": "code16/v1",\n'
        f'  "kind": {json.dumps(code.kind)},\n'
        f'  "block_size": {bs},\n'
        f'  "values": [\n    {vals}\n  ],\n'
        f'  "params": {json.dumps(code.params, sort_keys=True, default=str)}\n'
        "}\n"
    )
    Path(path).write_text(text, encoding="utf-8")


def code_read(path):
    """Read a code16/v1 JSON document; validates structure and monotonicity."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a valid code16/v1 document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "code16/v1":
        raise FormatError(f"{path}: missing or wrong format marker 'code16/v1'")
    values = doc.get("values")
    if not isinstance(values, list) or len(values) != 16:
        n = len(values) if isinstance(values, list) else "none"
        raise FormatError(f"{path}: expected 16 code values, got {n}")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise FormatError(f"{path}: code values must be numbers")
    arr = np.array(values, dtype=float)
    bad = np.flatnonzero(np.diff(arr) <= 0)
    if bad.size:
        raise FormatError(
            f"{path}: values are not strictly increasing; first inversion at "
            f"index {int(bad[0]) + 1}"
        )
    kind = doc.get("kind")
    if kind not in VALID_KINDS:
        raise FormatError(
            f"{path}: unknown kind {kind!r}; expected one of {sorted(VALID_KINDS)}"
        )
    block_size = doc.get("block_size")
    if block_size is not None and (
        isinstance(block_size, bool) or not isinstance(block_size, int)
    ):
        raise FormatError(f"{path}: block_size must be an integer or null")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise FormatError(f"{path}: params must be an object")
    try:
        return Code16(arr, kind=kind, block_size=block_size, params=params)
    except DomainError as exc:
        raise FormatError(f"{path}: {exc}") from exc
