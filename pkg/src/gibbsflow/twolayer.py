"""The joint system of initial and evolved configurations under independent
single-site (product) dynamics.

Conditioning the pair (sigma_0, sigma_t) on its second layer turns the
evolved measure's conditional probabilities into a *constrained* spin system
at time zero.  For product dynamics the constraint enters through three
closed-form single-site fields:

    h1(t)  pulls the time-zero spin,
    h2(t)  pulls the time-t spin (constant once the second layer is fixed,
           so it drops from the constrained Hamiltonian),
    h12(t) couples the layers and tends to align them; it is positive for
           every t > 0, diverges as t -> 0+ and decays to 0 as t -> oo.

All fields use the kernel time convention (single-site relaxation rate 1,
see dynamics.TIME_SCALE) and are parameterized by the stationary odds ratio
delta = P(-)/P(+) = (1 - eps)/(1 + eps) in (0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import SingleSiteKernel, single_site_kernel
from .interactions import Interaction, compiled_terms, state_bits, term_energy
from .lattice import Box, Configuration

__all__ = [
    "DynamicalFields",
    "fields",
    "fields_from_kernel",
    "epsilon_from_delta",
    "joint_hamiltonian",
    "constrained_hamiltonian",
    "joint_table_from_hamiltonian",
    "joint_table_direct",
    "joint_consistency",
    "compensation_time",
]


@dataclass(frozen=True)
class DynamicalFields:
    """The field triple of the two-layer Hamiltonian at one (t, delta)."""

    t: float
    delta: float
    h1: float
    h2: float
    h12: float


def epsilon_from_delta(delta: float) -> float:
    """Bias eps of the single-site chain with stationary odds delta."""
    if not (0.0 < delta <= 1.0):
        raise ValueError("delta must lie in (0, 1]")
    return (1.0 - delta) / (1.0 + delta)


def fields(t: float, delta: float = 1.0) -> DynamicalFields:
    """Closed-form two-layer fields.

        h1  = (1/4) log[(1 + delta e^{-t}) / (1 + e^{-t}/delta)]
        h2  = -(1/2) log delta + h1
        h12 = (1/4) log[(1 + delta e^{-t})(1 + e^{-t}/delta) / (1 - e^{-t})^2]

    Requires t > 0 (the coupling diverges at t = 0) and delta in (0, 1].
    For delta = 1 the single-site fields vanish identically and
    h12 = (1/2) log[(1 + e^{-t}) / (1 - e^{-t})].
    """
    if t <= 0:
        raise ValueError("fields need t > 0 (the layer coupling diverges at 0)")
    if not (0.0 < delta <= 1.0):
        raise ValueError("delta must lie in (0, 1]")
    u = np.exp(-t)
    a = 1.0 + delta * u
    b = 1.0 + u / delta
    h1 = 0.25 * np.log(a / b)
    h2 = -0.5 * np.log(delta) + h1
    h12 = 0.25 * np.log(a * b / (1.0 - u) ** 2)
    return DynamicalFields(float(t), float(delta), float(h1), float(h2), float(h12))


def fields_from_kernel(t: float, delta: float = 1.0) -> DynamicalFields:
    """The same fields read off the single-site kernel entries:

        h1  = (1/4) log[p(+,+) p(+,-) / (p(-,+) p(-,-))]
        h2  = (1/4) log[p(+,+) p(-,+) / (p(+,-) p(-,-))]
        h12 = (1/4) log[p(+,+) p(-,-) / (p(+,-) p(-,+))]

    This is the cross-validation route for ``fields``.
    """
    if t <= 0:
        raise ValueError("fields need t > 0")
    k: SingleSiteKernel = single_site_kernel(t, epsilon_from_delta(delta))
    pp, pm = k.p(1, 1), k.p(1, -1)
    mp, mm = k.p(-1, 1), k.p(-1, -1)
    h1 = 0.25 * np.log(pp * pm / (mp * mm))
    h2 = 0.25 * np.log(pp * mp / (pm * mm))
    h12 = 0.25 * np.log(pp * mm / (pm * mp))
    return DynamicalFields(float(t), float(delta), float(h1), float(h2), float(h12))


def compensation_time(h: float, delta: float = 1.0, tol: float = 1e-10) -> float:
    """The time at which the layer coupling h12(t) equals a given field h > 0.

    h12 is strictly decreasing from +oo to 0, so the root is unique; it is
    located by bisection to within ``tol``.
    """
    if h <= 0:
        raise ValueError("compensation_time needs h > 0")
    lo = 1e-12
    hi = 1.0
    while fields(hi, delta).h12 > h:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("field too small to compensate at reachable times")
    while fields(lo, delta).h12 < h:
        lo /= 2.0
    while hi - lo > tol and abs(fields(0.5 * (lo + hi), delta).h12 - h) > tol:
        mid = 0.5 * (lo + hi)
        if fields(mid, delta).h12 > h:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Joint and constrained Hamiltonians
# ---------------------------------------------------------------------------


def joint_hamiltonian(
    u_nu: Interaction, flds: DynamicalFields, sigma: Configuration, eta: Configuration
) -> float:
    """Energy of the layer pair (sigma at time 0, eta at time t):

        H(sigma, eta) = H_nu(sigma) - sum_x [ h1 s(x) + h2 e(x) + h12 s(x)e(x) ]

    with H_nu the free-boundary Hamiltonian of the initial interaction.
    Normalizing exp(-H) over pairs reproduces the joint law of the evolved
    product dynamics exactly (see joint_consistency).
    """
    if sigma.box != eta.box:
        raise ValueError("layers must live on the same box")
    from .interactions import hamiltonian_free

    s = sigma.spins.astype(float)
    e = eta.spins.astype(float)
    cross = flds.h1 * s.sum() + flds.h2 * e.sum() + flds.h12 * (s * e).sum()
    return float(hamiltonian_free(u_nu, sigma) - cross)


def constrained_hamiltonian(
    u_nu: Interaction, h: float, t: float, delta: float, eta: Configuration
) -> Interaction:
    """The time-zero system conditioned on the evolved layer eta.

    Returns ``u_nu`` with the single-site field at each site x augmented by

        (h + h1(t)) + h12(t) * eta(x)

    so the site energy is -[(h + h1) + h12*eta(x)] * s(x).  The eta-only
    field h2 is constant once eta is fixed and is dropped.  Pass the pair
    part of the initial interaction as ``u_nu`` and its homogeneous field as
    ``h``; for delta = 1 and h = 0 the extra term is exactly the aligning
    coupling -h12(t) * eta(x) * s(x).
    """
    flds = fields(t, delta)
    site_fields = {
        tuple(x): (h + flds.h1) + flds.h12 * eta.spin(x) for x in eta.box.sites()
    }
    return u_nu.with_site_fields(site_fields)


# ---------------------------------------------------------------------------
# Exact joint tables (small volumes)
# ---------------------------------------------------------------------------


def _nu_table(u_nu: Interaction, box: Box, boundary) -> np.ndarray:
    sites = box.site_list()
    scope = "free" if boundary is None else "touching"
    terms, const = compiled_terms(u_nu, box, sites, boundary, scope)
    energies = term_energy(terms, const, state_bits(len(sites)))
    w = np.exp(-(energies - energies.min()))
    return w / w.sum()


def joint_table_from_hamiltonian(
    u_nu: Interaction, t: float, delta: float, box: Box, boundary=None
) -> np.ndarray:
    """Joint law of (initial, evolved) built from the two-layer Hamiltonian.

    Entry [i, j] is the probability of initial state i and evolved state j
    (states indexed as in the exact engine: bit b = site b).
    """
    flds = fields(t, delta)
    sites = box.site_list()
    n = len(sites)
    scope = "free" if boundary is None else "touching"
    terms, const = compiled_terms(u_nu, box, sites, boundary, scope)
    spins = (2.0 * state_bits(n) - 1.0)
    h_nu = term_energy(terms, const, state_bits(n))
    msum = spins.sum(axis=1)
    overlap = spins @ spins.T
    log_w = (
        -h_nu[:, None]
        + flds.h1 * msum[:, None]
        + flds.h2 * msum[None, :]
        + flds.h12 * overlap
    )
    log_w -= log_w.max()
    w = np.exp(log_w)
    return w / w.sum()


def joint_table_direct(
    u_nu: Interaction, t: float, delta: float, box: Box, boundary=None
) -> np.ndarray:
    """Joint law built directly: nu(sigma) times the product over sites of
    single-site kernel entries.  Independent of the field formulas; the
    kernel entries enter through spin-pair counts only."""
    nu = _nu_table(u_nu, box, boundary)
    k = single_site_kernel(t, epsilon_from_delta(delta)).matrix
    sites = box.site_list()
    n = len(sites)
    spins = 2.0 * state_bits(n) - 1.0
    msum = spins.sum(axis=1)
    overlap = spins @ spins.T
    # pair counts from (sum sigma, sum eta, sum sigma*eta)
    n_pp = (n + msum[:, None] + msum[None, :] + overlap) / 4.0
    n_mm = (n - msum[:, None] - msum[None, :] + overlap) / 4.0
    n_pm = (n + msum[:, None] - msum[None, :] - overlap) / 4.0
    n_mp = (n - msum[:, None] + msum[None, :] - overlap) / 4.0
    log_kernel = (
        n_pp * np.log(k[1, 1])
        + n_pm * np.log(k[1, 0])
        + n_mp * np.log(k[0, 1])
        + n_mm * np.log(k[0, 0])
    )
    joint = nu[:, None] * np.exp(log_kernel)
    return joint / joint.sum()


def joint_consistency(
    u_nu: Interaction, t: float, delta: float, box: Box, boundary=None
) -> float:
    """Max absolute entry discrepancy between the two joint constructions.

    Valid for product dynamics only (the closed-form fields assume it).
    """
    a = joint_table_from_hamiltonian(u_nu, t, delta, box, boundary)
    b = joint_table_direct(u_nu, t, delta, box, boundary)
    return float(np.abs(a - b).max())


def joint_total_variation(
    u_nu: Interaction, t: float, delta: float, box: Box, boundary=None
) -> float:
    a = joint_table_from_hamiltonian(u_nu, t, delta, box, boundary)
    b = joint_table_direct(u_nu, t, delta, box, boundary)
    return float(0.5 * np.abs(a - b).sum())
