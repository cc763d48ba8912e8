"""Finite-volume Gibbs measures: exact enumeration, 1D transfer matrix,
heat-bath Monte Carlo, and boundary-sensitivity probes.

Probabilities are Boltzmann weights exp(-H) normalized over the states of the
volume.  Exact enumeration is the reference implementation at small volumes;
the transfer matrix is an independent oracle for 1D range-1 systems; the
sampler takes over beyond the enumeration cap.

Monte Carlo conventions (all documented for reproducibility):
  * heat-bath (Gibbs sampler) single-site updates -- detailed balance holds
    exactly per update, no acceptance tuning;
  * systematic sweeps in row-major site order; nearest-neighbor interactions
    use an equivalent two-color checkerboard order (even parity first);
  * replica r of a run seeded with ``seed`` draws its stream from
    ``numpy.random.default_rng(numpy.random.SeedSequence((seed, r)))``;
  * standard errors by batch means with 32 batches, replicas combined in
    quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interactions import (
    Interaction,
    boundary_lookup,
    compiled_terms,
    config_bits,
    energy_delta,
    state_bits,
    term_energy,
)
from .lattice import Box, Configuration, Site

EXACT_CAP = 20  # sites; 2^20 states is the largest exact enumeration


@dataclass(frozen=True)
class GibbsSpec:
    """A finite-volume Gibbs measure: interaction + volume + boundary.

    ``volume`` is an ordered list of sites (None means the whole box, in
    row-major order).  ``boundary`` is None for free boundary, or any form
    accepted by boundary_lookup (constant ±1, mapping, Configuration,
    callable); it must cover a collar of width >= the interaction range and
    also supplies spins for box sites outside the volume.
    """

    interaction: Interaction
    box: Box
    volume: tuple | None = None
    boundary: object = None

    def volume_sites(self) -> list[Site]:
        if self.volume is None:
            return self.box.site_list()
        return [tuple(s) for s in self.volume]


@dataclass(frozen=True)
class MCParams:
    """Monte Carlo run parameters."""

    sweeps: int
    burn_in: int
    replicas: int
    seed: int
    thinning: int = 1

    def __post_init__(self):
        if self.sweeps < 1 or self.replicas < 1 or self.thinning < 1:
            raise ValueError("sweeps, replicas and thinning must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")


class ExactMeasure:
    """Probability table over the states of a small volume."""

    def __init__(self, volume_sites, energies: np.ndarray):
        self.volume_sites = [tuple(s) for s in volume_sites]
        self.energies = energies
        shifted = energies - energies.min()
        weights = np.exp(-shifted)
        self.probs = weights / weights.sum()
        self.log_z = float(np.log(weights.sum()) - energies.min())

    @property
    def n_sites(self) -> int:
        return len(self.volume_sites)

    def spins_matrix(self) -> np.ndarray:
        """(2^n, n) matrix of ±1 spins, state index bit j = site j."""
        return (2 * state_bits(self.n_sites) - 1).astype(np.int8)

    def expectation(self, values: np.ndarray) -> float:
        return float(self.probs @ np.asarray(values, dtype=float))

    def spin_expectation(self, site: Site) -> float:
        j = self.volume_sites.index(tuple(site))
        spins = 2.0 * ((np.arange(self.probs.size) >> j) & 1) - 1.0
        return float(self.probs @ spins)

    def state_index(self, config: Configuration) -> int:
        bits = config_bits(config, self.volume_sites)
        return int((bits.astype(np.int64) << np.arange(len(bits))).sum())

    def prob(self, config: Configuration) -> float:
        return float(self.probs[self.state_index(config)])


def exact_energies(spec: GibbsSpec) -> tuple[list[Site], np.ndarray]:
    sites = spec.volume_sites()
    scope = "free" if spec.boundary is None else "touching"
    terms, const = compiled_terms(
        spec.interaction, spec.box, sites, spec.boundary, scope
    )
    bits = state_bits(len(sites))
    return sites, term_energy(terms, const, bits)


def exact_measure(spec: GibbsSpec, cap: int = EXACT_CAP) -> ExactMeasure:
    """Exact Boltzmann table exp(-H)/Z over the volume's states.

    Refuses volumes above the cap (default 20 sites); use glauber_sample
    there instead.
    """
    sites = spec.volume_sites()
    if len(sites) > cap:
        raise ValueError(
            f"volume has {len(sites)} sites, above the exact enumeration cap "
            f"{cap}; use glauber_sample for larger volumes"
        )
    sites, energies = exact_energies(spec)
    return ExactMeasure(sites, energies)


def conditional_prob(spec: GibbsSpec, x: Site, context) -> float:
    """P(spin at x = +1) given every other spin of the volume.

    ``context`` maps each volume site except x (raw boundary sites may be
    included too) to its spin.  For a finite-range interaction this is the
    single-site Boltzmann formula and is exact; it depends only on the
    context within the interaction range of x.
    """
    x = tuple(x)
    ctx = {tuple(k): int(v) for k, v in dict(context).items()}
    base = boundary_lookup(spec.boundary)

    def lookup(site):
        site = tuple(site)
        if site in ctx:
            return ctx[site]
        if base is None:
            raise KeyError(site)
        return base(site)

    # Fill the box with the context; only sites within the interaction range
    # of x can influence the answer, so those are the ones that must be given.
    need = spec.interaction.range
    arr = np.ones(spec.box.extents, dtype=np.int8)
    for s in spec.box.sites():
        if s == x:
            continue
        try:
            arr[s] = lookup(s)
        except KeyError:
            if spec.box.distance(s, x) <= need:
                raise ValueError(
                    f"context must cover every site within range {need} of {x}; "
                    f"missing {s}"
                ) from None
    config = Configuration(spec.box, arr)
    boundary = None if (spec.box.torus or base is None) else lookup
    d = energy_delta(spec.interaction, config, x, boundary)
    # d = E(x=-1) - E(x=+1); P(+) = 1 / (1 + exp(-d))
    return float(1.0 / (1.0 + np.exp(-d)))


# ---------------------------------------------------------------------------
# 1D transfer matrix (independent oracle for the exact engine)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransferResult:
    log_z: float
    marginals: np.ndarray  # P(spin=+1) per site

    @property
    def z(self) -> float:
        return float(np.exp(self.log_z))


def transfer_matrix_1d(u: Interaction, n: int, boundary: str = "free") -> TransferResult:
    """Partition function and single-site marginals of a 1D range-1 chain.

    boundary: "free", "periodic", or a pair (left_spin, right_spin) of fixed
    spins just outside the chain.
    """
    if u.dimension != 1:
        raise ValueError("transfer_matrix_1d needs a one-dimensional interaction")
    if u.range > 1:
        raise ValueError("transfer_matrix_1d supports range-1 interactions only")
    pair = np.zeros((2, 2))
    site = np.zeros(2)
    for cl in u.classes:
        if cl.size == 1:
            site = site + cl.table
        elif cl.offsets in (((0,), (1,)),):
            pair = pair + cl.table
        elif cl.offsets == ((0,), (-1,)):
            pair = pair + cl.table.T
        else:
            raise ValueError(f"unsupported 1D class offsets {cl.offsets}")
    site_energy = np.zeros((n, 2)) + site
    for i in range(n):
        f = u.site_fields.get((i,), 0.0)
        site_energy[i] += np.array([f, -f])
    t_bond = np.exp(-pair)  # T[s, s'] over (left, right), index 0 = spin -1
    v_site = np.exp(-site_energy)  # (n, 2)

    if boundary == "periodic":
        # attach each site factor to the left endpoint of its outgoing bond
        mats = [np.diag(v_site[i]) @ t_bond for i in range(n)]
        prods = [None] * n
        acc = np.eye(2)
        for i in range(n):
            prods[i] = acc.copy()
            acc = acc @ mats[i]
        z = float(np.trace(acc))
        marginals = np.zeros(n)
        for i in range(n):
            suffix = np.eye(2)
            for j in range(i + 1, n):
                suffix = suffix @ mats[j]
            for s in (0, 1):
                pick = np.zeros((2, 2))
                pick[s, s] = v_site[i, s]
                m = prods[i] @ pick @ t_bond @ suffix
                if s == 1:
                    marginals[i] = np.trace(m) / z
        return TransferResult(float(np.log(z)), marginals)

    if boundary == "free":
        left = np.ones(2)
        right = np.ones(2)
    else:
        zl, zr = boundary
        left = t_bond[(int(zl) + 1) // 2, :].copy()
        right = t_bond[:, (int(zr) + 1) // 2].copy()

    forward = [None] * n  # forward[i][s]: weight of chain up to i with spin s at i
    f = left * v_site[0]
    for i in range(n):
        if i > 0:
            f = (f @ t_bond) * v_site[i]
        forward[i] = f.copy()
    backward = [None] * n
    b = right.copy()
    for i in range(n - 1, -1, -1):
        backward[i] = b.copy()
        if i > 0:
            b = t_bond @ (b * v_site[i])
    z = float(forward[n - 1] @ right)
    marginals = np.array(
        [float(forward[i][1] * backward[i][1]) / z for i in range(n)]
    )
    return TransferResult(float(np.log(z)), marginals)


# ---------------------------------------------------------------------------
# Heat-bath Monte Carlo
# ---------------------------------------------------------------------------


@dataclass
class Estimate:
    """Monte Carlo estimate with replica detail."""

    mean: float
    stderr: float
    replica_means: np.ndarray
    replica_stderrs: np.ndarray
    samples: list  # one ndarray of recorded observable values per replica

    def csv_row(self, volume, boundary, observable, sweeps, seed):
        return [volume, boundary, observable, self.mean, self.stderr, sweeps, seed]


def batch_means_stderr(x: np.ndarray, n_batches: int = 32) -> float:
    x = np.asarray(x, dtype=float)
    nb = min(n_batches, len(x))
    if nb < 2:
        return float("inf")
    m = len(x) // nb
    trimmed = x[: nb * m].reshape(nb, m)
    bm = trimmed.mean(axis=1)
    return float(bm.std(ddof=1) / np.sqrt(nb))


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    """The documented seed-splitting rule: stream (seed, replica index)."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(replica))))


def _combine_replicas(per_replica: list[np.ndarray]) -> Estimate:
    means = np.array([s.mean() for s in per_replica])
    errs = np.array([batch_means_stderr(s) for s in per_replica])
    k = len(per_replica)
    mean = float(means.mean())
    stderr = float(np.sqrt(np.sum(errs**2)) / k)
    return Estimate(mean, stderr, means, errs, per_replica)


def _nn_field_form(u: Interaction, box: Box):
    """Recognize nearest-neighbor pair + field interactions.

    Returns (J per axis, field array over the box) when every class is either
    a single-site field or an axis-aligned pair with energy -J*s*s'; None
    otherwise.  This is what the vectorized checkerboard sweep handles.
    """
    d = u.dimension
    zero = (0,) * d
    pm = np.array([-1.0, 1.0])
    j_axis = [0.0] * d
    h_base = 0.0
    for cl in u.classes:
        if cl.size == 1:
            # energy e(s) must be -h*s
            if abs(cl.table[0] + cl.table[1]) > 1e-15:
                return None
            h_base += float(cl.table[0])  # e(-1) = +h
            continue
        if cl.size != 2:
            return None
        offs = cl.offsets
        other = offs[1] if offs[0] == zero else offs[0]
        if offs[0] != zero and offs[1] != zero:
            return None
        axes = [i for i, c in enumerate(other) if c != 0]
        if len(axes) != 1 or other[axes[0]] not in (1, -1):
            return None
        j = -float(cl.table[1, 1])
        if not np.allclose(cl.table, -j * np.outer(pm, pm), atol=1e-15):
            return None
        j_axis[axes[0]] += j
    fields = np.full(box.extents, h_base, dtype=float)
    for site, f in u.site_fields.items():
        if box.contains(site):
            fields[site] += f
    return tuple(j_axis), fields


def _checkerboard_replica(
    j_axis, fields, box: Box, boundary_spin: int, params: MCParams,
    probe: Site, rng: np.random.Generator, init_spin: int,
) -> np.ndarray:
    """One replica of the checkerboard heat-bath on an open box with a
    constant boundary collar.  Returns the recorded probe-spin samples."""
    ext = box.extents
    pad = np.full(tuple(e + 2 for e in ext), init_spin, dtype=np.int8)
    core = tuple(slice(1, e + 1) for e in ext)
    collar = np.ones_like(pad, dtype=bool)
    collar[core] = False
    pad[collar] = boundary_spin
    parity = np.indices(ext).sum(axis=0) % 2
    masks = (parity == 0, parity == 1)
    probe_idx = tuple(c + 1 for c in probe)

    n_rec = (params.sweeps + params.thinning - 1) // params.thinning
    out = np.empty(n_rec, dtype=float)
    rec = 0
    for sweep in range(params.burn_in + params.sweeps):
        for mask in masks:
            u_rand = rng.random(ext)
            local = fields.copy()
            for axis, j in enumerate(j_axis):
                if j == 0.0:
                    continue
                lo = tuple(
                    slice(0, e) if a == axis else core_s
                    for a, (e, core_s) in enumerate(zip(ext, core))
                )
                hi = tuple(
                    slice(2, e + 2) if a == axis else core_s
                    for a, (e, core_s) in enumerate(zip(ext, core))
                )
                local += j * (pad[lo] + pad[hi])
            p_plus = 1.0 / (1.0 + np.exp(-2.0 * local))
            new = np.where(u_rand < p_plus, 1, -1).astype(np.int8)
            pad[core] = np.where(mask, new, pad[core])
        if sweep >= params.burn_in and (sweep - params.burn_in) % params.thinning == 0:
            out[rec] = pad[probe_idx]
            rec += 1
    return out[:rec]


def _generic_replica(
    spec: GibbsSpec, params: MCParams, probe: Site, rng: np.random.Generator,
    init: Configuration,
) -> np.ndarray:
    """Sequential heat-bath sweeps for arbitrary finite-range interactions."""
    sites = spec.volume_sites()
    col = {s: i for i, s in enumerate(sites)}
    scope = "free" if spec.boundary is None else "touching"
    terms, _ = compiled_terms(spec.interaction, spec.box, sites, spec.boundary, scope)
    # per-site update tables: energy difference E(x=-1)-E(x=+1) given the rest
    per_site = [[] for _ in sites]
    for cols, table in terms:
        for pos, c in enumerate(cols):
            moved = np.moveaxis(table, pos, 0)
            diff = moved[0] - moved[1]  # E(spin -1) - E(spin +1)
            others = cols[:pos] + cols[pos + 1 :]
            per_site[c].append((others, np.ascontiguousarray(diff)))

    bits = config_bits(init, sites).astype(np.int64)
    probe_col = col[tuple(probe)]
    n_rec = (params.sweeps + params.thinning - 1) // params.thinning
    out = np.empty(n_rec, dtype=float)
    rec = 0
    for sweep in range(params.burn_in + params.sweeps):
        for j, entries in enumerate(per_site):
            d = 0.0
            for others, diff in entries:
                if others:
                    d += diff[tuple(bits[c] for c in others)]
                else:
                    d += diff
            # d = E(-1)-E(+1); heat-bath draw
            p_plus = 1.0 / (1.0 + np.exp(-d))
            bits[j] = 1 if rng.random() < p_plus else 0
        if sweep >= params.burn_in and (sweep - params.burn_in) % params.thinning == 0:
            out[rec] = 2 * bits[probe_col] - 1
            rec += 1
    return out[:rec]


def glauber_sample(
    spec: GibbsSpec,
    params: MCParams,
    probe: Site | None = None,
    init: object = "boundary",
) -> Estimate:
    """Heat-bath estimate of the probe-site spin expectation.

    ``init``: "boundary" starts every replica in the boundary spin (or all
    +1 under a free boundary) --- the documented choice for boundary-phase
    probes; or pass a Configuration.

    Single-site volumes bypass Monte Carlo: the closed-form Boltzmann mean is
    returned with zero error.
    """
    sites = spec.volume_sites()
    probe = tuple(probe) if probe is not None else spec.box.center()
    if probe not in sites:
        raise ValueError(f"probe site {probe} not in the volume")

    if len(sites) == 1:
        m = exact_measure(spec)
        mean = m.spin_expectation(probe)
        one = np.array([mean])
        return Estimate(mean, 0.0, one, np.array([0.0]), [one])

    boundary_spin = spec.boundary if isinstance(spec.boundary, (int, np.integer)) else None
    nn = _nn_field_form(spec.interaction, spec.box)
    fast = (
        nn is not None
        and not spec.box.torus
        and spec.volume is None
        and boundary_spin is not None
    )
    per_replica = []
    for r in range(params.replicas):
        rng = replica_rng(params.seed, r)
        if fast:
            j_axis, fields = nn
            init_spin = int(boundary_spin) if init == "boundary" else 1
            samples = _checkerboard_replica(
                j_axis, fields, spec.box, int(boundary_spin), params, probe, rng, init_spin
            )
        else:
            if isinstance(init, Configuration):
                start = init
            else:
                s0 = int(boundary_spin) if (init == "boundary" and boundary_spin) else 1
                start = Configuration.uniform(spec.box, s0)
            samples = _generic_replica(spec, params, probe, rng, start)
        per_replica.append(samples)
    return _combine_replicas(per_replica)


@dataclass(frozen=True)
class BoundaryGap:
    """Probe-spin means under two opposite boundary conditions."""

    box_extents: tuple
    plus: Estimate
    minus: Estimate

    @property
    def gap(self) -> float:
        return self.plus.mean - self.minus.mean

    @property
    def gap_stderr(self) -> float:
        return float(np.sqrt(self.plus.stderr**2 + self.minus.stderr**2))


def two_bc_gap(
    u: Interaction,
    box: Box,
    params: MCParams,
    probe: Site | None = None,
    boundaries: tuple = (1, -1),
) -> BoundaryGap:
    """Probe-spin expectation under all-plus vs all-minus boundary collars.

    Each boundary run starts in its own boundary phase (documented protocol:
    the scan measures which phase each boundary selects, not nucleation
    times).  The gap plus - minus and its combined standard error summarize
    the boundary sensitivity of the volume.
    """
    probe = tuple(probe) if probe is not None else box.center()
    plus_spec = GibbsSpec(u, box, None, boundaries[0])
    minus_spec = GibbsSpec(u, box, None, boundaries[1])
    plus = glauber_sample(plus_spec, params, probe)
    minus = glauber_sample(minus_spec, params, probe)
    return BoundaryGap(box.extents, plus, minus)


def exact_two_bc_gap(u: Interaction, box: Box, probe: Site | None = None) -> float:
    """Exact-enumeration version of the boundary gap (small volumes only)."""
    probe = tuple(probe) if probe is not None else box.center()
    plus = exact_measure(GibbsSpec(u, box, None, 1))
    minus = exact_measure(GibbsSpec(u, box, None, -1))
    return plus.spin_expectation(probe) - minus.spin_expectation(probe)
