"""Spin-flip dynamics on finite volumes.

Closed-form single-site kernels for independent-flip (product) dynamics,
rates derived from an interaction, exact transient evolution by
uniformization, continuous-time event simulation, path-weight (change of
measure) evaluation, a probabilistic-cellular-automaton discretization, and
the backwards (time-reversed, endpoint-conditioned) transition operator.

Two time conventions coexist in the literature and both are exposed here:

  * kernel convention -- the single-site generator has total relaxation rate
    1 (eigenvalue -1), i.e. flip rates (1 -/+ eps)/2 out of the +/- states.
    ``single_site_kernel`` and the two-layer field formulas use this clock.
  * unit-rate convention -- the unbiased baseline flips each spin at rate 1
    (relaxation rate 2).  Rates built from an interaction reduce to this
    baseline when the interaction vanishes.

``TIME_SCALE = 2``: running the unit-rate baseline for time t equals the
kernel-convention kernel at time 2t.  Pick one clock per experiment and
convert explicitly; nothing in this module converts silently.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product as iter_product

import numpy as np

from .interactions import (
    Interaction,
    boundary_lookup,
    compiled_terms,
    config_bits,
    state_bits,
    term_energy,
)
from .lattice import Box, Configuration, Site

TIME_SCALE = 2.0

EVOLVE_CAP = 12  # sites; exact transient evolution handles up to 2^12 states
POISSON_TAIL = 1e-13  # uniformization truncation: neglected Poisson mass


# ---------------------------------------------------------------------------
# Single-site kernel (kernel convention)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SingleSiteKernel:
    """Exact 2x2 transition kernel of the biased single-site flip chain.

    Matrix index 0 means spin -1 and index 1 means spin +1.  With the
    stationary weights pi(+) = (1+eps)/2, pi(-) = (1-eps)/2 the entries are

        p_t(a, a)  = pi(a) + pi(-a) e^{-t}
        p_t(a, -a) = pi(-a) (1 - e^{-t})

    so the determinant is exactly e^{-t} >= 0.
    """

    t: float
    epsilon: float
    matrix: np.ndarray

    def p(self, a: int, b: int) -> float:
        return float(self.matrix[(a + 1) // 2, (b + 1) // 2])

    @property
    def stationary(self) -> np.ndarray:
        """Stationary law as (P(-1), P(+1))."""
        return np.array([(1 - self.epsilon) / 2.0, (1 + self.epsilon) / 2.0])

    def det(self) -> float:
        return float(np.linalg.det(self.matrix))


def single_site_kernel(t: float, epsilon: float = 0.0) -> SingleSiteKernel:
    if t < 0:
        raise ValueError("time must be >= 0")
    if not (0.0 <= epsilon < 1.0):
        raise ValueError("bias must satisfy 0 <= eps < 1")
    pi_plus = (1.0 + epsilon) / 2.0
    pi_minus = (1.0 - epsilon) / 2.0
    u = np.exp(-t)
    matrix = np.array(
        [
            [pi_minus + pi_plus * u, pi_plus * (1.0 - u)],
            [pi_minus * (1.0 - u), pi_plus + pi_minus * u],
        ]
    )
    return SingleSiteKernel(float(t), float(epsilon), matrix)


# ---------------------------------------------------------------------------
# Rate specifications
# ---------------------------------------------------------------------------


class RateSpec:
    """Flip rates c(x, sigma) for spin-flip dynamics on a finite volume.

    Subclasses provide ``rate_table`` (all states of a small volume at once),
    ``local_rate`` (one site of one configuration, used by the event-driven
    simulator), the a-priori bounds 0 < eps_min <= c <= M, and the dependence
    range R of c(x, .) around x.
    """

    range: int = 0
    is_product: bool = False

    def bounds(self) -> tuple[float, float]:
        raise NotImplementedError

    def rate_table(self, box: Box, volume_sites, boundary) -> np.ndarray:
        raise NotImplementedError

    def local_rate(self, x: Site, config: Configuration, boundary=None) -> float:
        raise NotImplementedError

    def reversible_energies(self, box, volume_sites, boundary):
        """State energies E with stationary law exp(-E)/Z, or None."""
        return None


@dataclass(frozen=True)
class ProductRates(RateSpec):
    """Independent single-site flips: c(x, sigma) = rate * (1 - eps*sigma(x)).

    ``rate=0.5`` is the kernel convention (total single-site relaxation 1);
    ``rate=1, eps=0`` is the unit-rate unbiased baseline.
    """

    epsilon: float = 0.0
    rate: float = 1.0

    range = 0
    is_product = True

    def __post_init__(self):
        if not (0.0 <= self.epsilon < 1.0):
            raise ValueError("bias must satisfy 0 <= eps < 1")
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    def bounds(self):
        return (self.rate * (1 - self.epsilon), self.rate * (1 + self.epsilon))

    def rate_table(self, box, volume_sites, boundary):
        spins = 2.0 * state_bits(len(volume_sites)) - 1.0
        return self.rate * (1.0 - self.epsilon * spins)

    def local_rate(self, x, config, boundary=None):
        return self.rate * (1.0 - self.epsilon * config.spin(x))

    def kernel(self, t: float) -> SingleSiteKernel:
        """Single-site kernel after time t under these rates."""
        return single_site_kernel(2.0 * self.rate * t, self.epsilon)

    def reversible_energies(self, box, volume_sites, boundary):
        # stationary product law with P(+)/P(-) = (1+eps)/(1-eps)
        spins = 2.0 * state_bits(len(volume_sites)) - 1.0
        if self.epsilon == 0.0:
            return np.zeros(spins.shape[0])
        b = 0.5 * np.log((1 + self.epsilon) / (1 - self.epsilon))
        return -b * spins.sum(axis=1)


def unbiased_product_rates() -> ProductRates:
    """The unit-rate unbiased baseline c == 1."""
    return ProductRates(0.0, 1.0)


@dataclass(frozen=True)
class InteractionRates(RateSpec):
    """Rates derived from an interaction U:

        c(x, sigma) = exp( -1/2 * [H(sigma^x) - H(sigma)] )

    computed from the terms containing x.  Detailed balance with respect to
    exp(-H) holds exactly per update; U = 0 gives the unit-rate baseline.
    """

    u: Interaction

    is_product = False

    def __post_init__(self):
        object.__setattr__(self, "_bounds_cache", None)

    @property
    def range(self):  # type: ignore[override]
        return self.u.range

    def bounds(self):
        if self._bounds_cache is None:
            sup = self._sup_abs_delta()
            object.__setattr__(
                self, "_bounds_cache", (float(np.exp(-sup / 2)), float(np.exp(sup / 2)))
            )
        return self._bounds_cache

    def _sup_abs_delta(self) -> float:
        """sup over local spin patterns of |H(sigma^x) - H(sigma)|, exactly."""
        d = self.u.dimension
        nbhd = set()
        for cl in self.u.classes:
            for o in cl.offsets:
                for o2 in cl.offsets:
                    nbhd.add(tuple(b - a for a, b in zip(o, o2)))
        nbhd.add((0,) * d)
        nbhd = sorted(nbhd)
        col = {s: i for i, s in enumerate(nbhd)}
        worst = 0.0
        for bits in iter_product((0, 1), repeat=len(nbhd)):
            delta = 0.0
            for cl in self.u.classes:
                for o in cl.offsets:
                    # anchor so that offset o lands on the origin
                    support = [tuple(b - a for a, b in zip(o, off)) for off in cl.offsets]
                    idx = tuple(bits[col[s]] for s in support)
                    flipped = tuple(
                        1 - i if s == (0,) * d else i for i, s in zip(idx, support)
                    )
                    delta += float(cl.table[flipped]) - float(cl.table[idx])
            worst = max(worst, abs(delta))
        if self.u.site_fields:
            worst += 2.0 * max(abs(v) for v in self.u.site_fields.values())
        return worst

    def _energies(self, box, volume_sites, boundary):
        scope = "free" if boundary is None else "touching"
        terms, const = compiled_terms(self.u, box, volume_sites, boundary, scope)
        return term_energy(terms, const, state_bits(len(volume_sites)))

    def rate_table(self, box, volume_sites, boundary):
        n = len(volume_sites)
        energies = self._energies(box, volume_sites, boundary)
        idx = np.arange(1 << n)
        table = np.empty((1 << n, n))
        for j in range(n):
            table[:, j] = np.exp(-0.5 * (energies[idx ^ (1 << j)] - energies))
        return table

    def local_rate(self, x, config, boundary=None):
        from .interactions import energy_delta

        return float(np.exp(-0.5 * energy_delta(self.u, config, x, boundary)))

    def reversible_energies(self, box, volume_sites, boundary):
        return self._energies(box, volume_sites, boundary)


@dataclass(frozen=True)
class PerturbationRates(RateSpec):
    """Explicit perturbation of the unbiased baseline: c = 1 + eps(x, sigma).

    ``eps_fn(x, config)`` must satisfy |eps| <= delta < 1 and the unbiasedness
    symmetry eps(x, sigma) = eps(x, -sigma); ``dependence_range`` bounds the
    dependence set of c(x, .) around x.
    """

    eps_fn: object
    delta: float
    dependence_range: int = 1

    is_product = False

    def __post_init__(self):
        if not (0.0 <= self.delta < 1.0):
            raise ValueError("perturbation bound must satisfy 0 <= delta < 1")

    @property
    def range(self):  # type: ignore[override]
        return self.dependence_range

    def bounds(self):
        return (1.0 - self.delta, 1.0 + self.delta)

    def rate_table(self, box, volume_sites, boundary):
        n = len(volume_sites)
        spins = 2 * state_bits(n) - 1
        table = np.empty((1 << n, n))
        for i in range(1 << n):
            arr = np.zeros(box.extents, dtype=np.int8) + 1
            for j, s in enumerate(volume_sites):
                arr[tuple(s)] = spins[i, j]
            cfg = Configuration(box, arr)
            for j, s in enumerate(volume_sites):
                table[i, j] = self.local_rate(tuple(s), cfg, boundary)
        if table.min() <= 0 or np.abs(table - 1.0).max() > self.delta + 1e-12:
            raise ValueError("eps_fn violates its declared bound")
        return table

    def local_rate(self, x, config, boundary=None):
        return 1.0 + float(self.eps_fn(tuple(x), config))


def rates_from_interaction(u: Interaction) -> InteractionRates:
    """Reversible rates for the Gibbs measure of U (see InteractionRates)."""
    return InteractionRates(u)


# ---------------------------------------------------------------------------
# Exact transient evolution (uniformization)
# ---------------------------------------------------------------------------


class FiniteDynamics:
    """Compiled spin-flip dynamics on the states of a small volume.

    States are integers whose bit j is the spin at volume site j (bit 1 means
    spin +1).  Evolution applies exp(tL) to laws (rows) or observables
    (columns) by uniformization: the Poisson series is truncated when the
    neglected tail mass drops below ``tail`` (default 1e-13), which makes the
    result deterministic with a reproducible error bound.
    """

    def __init__(self, rates: RateSpec, box: Box, volume_sites=None, boundary=None,
                 cap: int = EVOLVE_CAP):
        sites = [tuple(s) for s in (volume_sites if volume_sites is not None else box.site_list())]
        if len(sites) > cap:
            raise ValueError(
                f"volume has {len(sites)} sites, above the exact evolution cap "
                f"{cap}; use gillespie_simulate for larger volumes"
            )
        self.rates = rates
        self.box = box
        self.volume_sites = sites
        self.boundary = boundary
        self.n = len(sites)
        self.n_states = 1 << self.n
        self.rate_table = rates.rate_table(box, sites, boundary)
        if self.rate_table.shape != (self.n_states, self.n):
            raise ValueError("rate table has the wrong shape")
        if self.rate_table.min() <= 0:
            raise ValueError("rates must be strictly positive")
        self.total_rates = self.rate_table.sum(axis=1)
        self.unif_rate = float(self.total_rates.max())
        self._flip_idx = [
            np.arange(self.n_states) ^ (1 << j) for j in range(self.n)
        ]

    def state_of(self, config: Configuration) -> int:
        bits = config_bits(config, self.volume_sites)
        return int((bits.astype(np.int64) << np.arange(self.n)).sum())

    def delta_law(self, config: Configuration) -> np.ndarray:
        v = np.zeros(self.n_states)
        v[self.state_of(config)] = 1.0
        return v

    def spins_matrix(self) -> np.ndarray:
        return (2 * state_bits(self.n) - 1).astype(np.int8)

    def _apply_to_law(self, v: np.ndarray) -> np.ndarray:
        """One uniformized step on a law: v P with P = I + Q/unif_rate."""
        lam = self.unif_rate
        out = v * (1.0 - self.total_rates / lam)
        for j in range(self.n):
            w = v * (self.rate_table[:, j] / lam)
            out += w[self._flip_idx[j]]
        return out

    def _apply_to_function(self, f: np.ndarray) -> np.ndarray:
        """One uniformized step on an observable: P f."""
        lam = self.unif_rate
        out = f * (1.0 - self.total_rates / lam)
        for j in range(self.n):
            out += (self.rate_table[:, j] / lam) * f[self._flip_idx[j]]
        return out

    def _uniformized(self, v: np.ndarray, t: float, apply_step, tail: float) -> np.ndarray:
        if t < 0:
            raise ValueError("time must be >= 0")
        lam_t = self.unif_rate * t
        if lam_t == 0.0:
            return v.copy()
        if lam_t > 500.0:
            # split to keep the Poisson weights in floating range
            half = self._uniformized(v, t / 2, apply_step, tail / 2)
            return self._uniformized(half, t / 2, apply_step, tail / 2)
        out = np.zeros_like(v, dtype=float)
        term = v.astype(float)
        weight = np.exp(-lam_t)
        cum = weight
        out += weight * term
        k = 0
        while cum < 1.0 - tail:
            k += 1
            term = apply_step(term)
            weight *= lam_t / k
            cum += weight
            out += weight * term
        return out

    def evolve_law(self, law: np.ndarray, t: float, tail: float = POISSON_TAIL) -> np.ndarray:
        law = np.asarray(law, dtype=float)
        if law.shape != (self.n_states,):
            raise ValueError("law has the wrong length")
        return self._uniformized(law, t, self._apply_to_law, tail)

    def evolve_function(self, f: np.ndarray, t: float, tail: float = POISSON_TAIL) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != (self.n_states,):
            raise ValueError("observable has the wrong length")
        return self._uniformized(f, t, self._apply_to_function, tail)

    def stationary_law(self) -> np.ndarray:
        energies = self.rates.reversible_energies(self.box, self.volume_sites, self.boundary)
        if energies is None:
            raise ValueError("no closed-form reversible law for these rates")
        w = np.exp(-(energies - energies.min()))
        return w / w.sum()

    def kernel_tensor_product(self, t: float) -> np.ndarray | None:
        """For product rates: the exact evolved-law map as a closed form.

        Returns the transition matrix P_t[s, s'] built from the tensor power
        of the single-site kernel (None for non-product rates).
        """
        if not isinstance(self.rates, ProductRates):
            return None
        k = self.rates.kernel(t).matrix
        p = np.array([[1.0]])
        for _ in range(self.n):
            p = np.kron(k, p)  # site j varies with bit j
        return p

    def pca_step_matrix(self, n_disc: int) -> np.ndarray:
        """One parallel-update step of the discrete-time approximation.

        Every site flips independently with probability c(x, sigma)/n_disc.
        Requires n_disc > the maximum rate so probabilities stay in [0, 1].
        """
        m = float(self.rate_table.max())
        if n_disc <= m:
            raise ValueError(
                f"discretization n={n_disc} must exceed the maximum rate M={m:.6g}"
            )
        p = np.empty((self.n_states, self.n_states))
        targets = np.arange(self.n_states)
        for s in range(self.n_states):
            row = np.ones(self.n_states)
            for j in range(self.n):
                q = self.rate_table[s, j] / n_disc
                flips = ((targets ^ s) >> j) & 1
                row *= np.where(flips == 1, q, 1.0 - q)
            p[s] = row
        return p


def evolve_exact(
    initial_law: np.ndarray,
    rates: RateSpec,
    t: float,
    box: Box,
    volume_sites=None,
    boundary=None,
    cap: int = EVOLVE_CAP,
) -> np.ndarray:
    """Apply exp(tL) to a probability table on a small volume."""
    dyn = FiniteDynamics(rates, box, volume_sites, boundary, cap)
    return dyn.evolve_law(initial_law, t)


def pca_kernel(
    rates: RateSpec,
    box: Box,
    n_disc: int,
    steps: int,
    volume_sites=None,
    boundary=None,
) -> tuple[np.ndarray, np.ndarray]:
    """One-step and ``steps``-step transition matrices of the parallel
    (cellular-automaton) discretization of the dynamics."""
    dyn = FiniteDynamics(rates, box, volume_sites, boundary)
    one = dyn.pca_step_matrix(n_disc)
    multi = np.linalg.matrix_power(one, steps)
    return one, multi


# ---------------------------------------------------------------------------
# Continuous-time event simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """A piecewise-constant spin-flip path: initial state plus flip events."""

    initial: Configuration
    horizon: float
    events: tuple  # ((time, site), ...) strictly increasing times in (0, horizon]

    def state_at(self, s: float) -> Configuration:
        cfg = self.initial
        flips = [site for (tm, site) in self.events if tm <= s]
        return cfg.flip_set(flips) if flips else cfg

    def flip_count(self, site: Site | None = None) -> int:
        if site is None:
            return len(self.events)
        site = tuple(site)
        return sum(1 for (_, y) in self.events if y == site)

    def flip_count_near(self, x: Site, radius: int) -> int:
        x = tuple(x)
        box = self.initial.box
        return sum(1 for (_, y) in self.events if box.distance(x, y) <= radius)

    def to_jsonl(self) -> str:
        import json

        lines = [json.dumps({"t": tm, "site": list(site)}) for tm, site in self.events]
        return "\n".join(lines) + ("\n" if lines else "")


def gillespie_simulate(
    initial: Configuration,
    rates: RateSpec,
    horizon: float,
    seed,
    boundary=None,
) -> Trajectory:
    """Exact-in-law event-driven simulation up to the time horizon.

    Next-event scheme: exponential waiting time at the total rate, then a
    site chosen proportionally to its rate.  Deterministic under a fixed
    seed.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rng = np.random.default_rng(seed)
    box = initial.box
    sites = box.site_list()
    cfg = initial
    t = 0.0
    events = []
    local = np.array([rates.local_rate(s, cfg, boundary) for s in sites])
    reach = rates.range
    while True:
        total = float(local.sum())
        t += rng.exponential(1.0 / total)
        if t > horizon:
            break
        u = rng.random() * total
        j = int(np.searchsorted(np.cumsum(local), u, side="right"))
        j = min(j, len(sites) - 1)
        site = sites[j]
        cfg = cfg.flip(site)
        events.append((float(t), site))
        for k, s in enumerate(sites):
            if box.distance(s, site) <= reach:
                local[k] = rates.local_rate(s, cfg, boundary)
    return Trajectory(initial, float(horizon), tuple(events))


# ---------------------------------------------------------------------------
# Path weight for the change of measure around one site
# ---------------------------------------------------------------------------


def girsanov_weight(traj: Trajectory, rates: RateSpec, x: Site, boundary=None) -> float:
    """Relative path weight of the trajectory with the x-spin line flipped.

    With N^y the flip counts and c the rates, the log-weight is

        sum_{|y-x| <= R} [ integral log(c(y, flipped)/c(y, path)) dN^y
                           + integral (c(y, path) - c(y, flipped)) ds ]

    evaluated exactly over the piecewise-constant path (rate factors at jump
    times use the pre-jump state).  For the unbiased baseline c == 1 the
    weight is exactly 1.
    """
    x = tuple(x)
    box = traj.initial.box
    reach = rates.range
    near = [s for s in box.site_list() if box.distance(s, x) <= reach]

    log_w = 0.0
    integral = 0.0
    cfg = traj.initial
    t_prev = 0.0

    def both_rates(y, c):
        plain = rates.local_rate(y, c, boundary)
        flipped = rates.local_rate(y, c.flip(x), boundary)
        return plain, flipped

    for tm, site in traj.events:
        dt = tm - t_prev
        for y in near:
            plain, flipped = both_rates(y, cfg)
            integral += (plain - flipped) * dt
        if box.distance(site, x) <= reach:
            plain, flipped = both_rates(site, cfg)
            log_w += np.log(flipped / plain)
        cfg = cfg.flip(site)
        t_prev = tm
    dt = traj.horizon - t_prev
    for y in near:
        plain, flipped = both_rates(y, cfg)
        integral += (plain - flipped) * dt
    return float(np.exp(log_w + integral))


def girsanov_bound(traj: Trajectory, rates: RateSpec, x: Site, boundary=None) -> float:
    """A-priori bound on |girsanov_weight|:  exp(C_x t) (M/eps)^N  with
    C_x = sum over the neighborhood of sup |c(y,.) - c(y, .^x)| and N the
    number of flips within range R of x."""
    eps_min, m = rates.bounds()
    box = traj.initial.box
    reach = rates.range
    near = [s for s in box.site_list() if box.distance(s, x) <= reach]
    c_x = len(near) * (m - eps_min)
    n_flips = traj.flip_count_near(x, reach)
    return float(np.exp(c_x * traj.horizon) * (m / eps_min) ** n_flips)


# ---------------------------------------------------------------------------
# Backwards (endpoint-conditioned) transition operator
# ---------------------------------------------------------------------------


def backwards_operator(
    initial_law: np.ndarray,
    rates: RateSpec,
    s: float,
    t: float,
    f: np.ndarray,
    box: Box,
    volume_sites=None,
    boundary=None,
) -> np.ndarray:
    """The operator  f -> E[ f(path at time s) | state at time t ].

    Computed through reversibility of the dynamics: with h the density of the
    initial law against the stationary law,

        (T f)(state) = P_{t-s}[ f * P_s h ](state) / P_t h (state),

    two observable-evolution passes.  At s = t it returns f itself; for an
    initial law equal to the stationary law it reduces to the forward
    semigroup over the remaining time t - s.
    """
    if not (0 <= s <= t):
        raise ValueError("need 0 <= s <= t")
    dyn = FiniteDynamics(rates, box, volume_sites, boundary)
    law = np.asarray(initial_law, dtype=float)
    if law.shape != (dyn.n_states,):
        raise ValueError("initial law has the wrong length")
    f = np.asarray(f, dtype=float)
    stationary = dyn.stationary_law()
    h = law / stationary
    u = dyn.evolve_function(h, s)
    num = dyn.evolve_function(f * u, t - s)
    den = dyn.evolve_function(u, t - s)
    return num / den


def backwards_operator_bruteforce(
    initial_law: np.ndarray,
    rates: RateSpec,
    s: float,
    t: float,
    f: np.ndarray,
    box: Box,
    volume_sites=None,
    boundary=None,
) -> np.ndarray:
    """Independent oracle: condition the joint law of (state_s, state_t)
    built column by column from delta evolutions."""
    if not (0 <= s <= t):
        raise ValueError("need 0 <= s <= t")
    dyn = FiniteDynamics(rates, box, volume_sites, boundary)
    law_s = dyn.evolve_law(np.asarray(initial_law, dtype=float), s)
    n = dyn.n_states
    joint = np.zeros((n, n))  # joint[a, b] = P(state_s = a, state_t = b)
    for a in range(n):
        delta = np.zeros(n)
        delta[a] = 1.0
        joint[a] = law_s[a] * dyn.evolve_law(delta, t - s)
    f = np.asarray(f, dtype=float)
    return (f @ joint) / joint.sum(axis=0)
