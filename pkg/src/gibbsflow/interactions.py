"""Finite-range interactions, Hamiltonians, norms, and the Dobrushin certificate.

An interaction is stored as a list of translation classes plus optional
site-dependent single-site fields.  A translation class is an offset pattern
``A0`` containing the zero vector together with an explicit coupling table
over the spins on ``A0``; anchoring the pattern at every lattice site
generates all interaction terms.  The probability weight convention is
``exp(-H)`` throughout: inverse temperature is absorbed into the coupling
tables and is never a separate parameter.

Coupling tables are ndarrays of shape ``(2,)*|A0|``; axis ``i`` follows
``offsets[i]`` and index 0 means spin -1, index 1 means spin +1.  Keeping the
tables explicit makes every supremum in the norm computations a finite
enumeration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .lattice import Box, Configuration, Site

_MAX_SUPPORT = 6  # tables are dense over {-1,+1}^support


def _chebyshev_diameter(offsets) -> int:
    d = 0
    for a in offsets:
        for b in offsets:
            d = max(d, max(abs(x - y) for x, y in zip(a, b)))
    return d


@dataclass(frozen=True)
class TranslationClass:
    """One translation class of interaction terms.

    ``offsets`` is the support pattern (must contain the zero vector);
    ``table`` gives the energy for every spin assignment on the support.
    """

    offsets: tuple[Site, ...]
    table: np.ndarray

    def __post_init__(self):
        offsets = tuple(tuple(int(c) for c in o) for o in self.offsets)
        if not offsets:
            raise ValueError("translation class needs at least one offset")
        dims = {len(o) for o in offsets}
        if len(dims) != 1:
            raise ValueError("offsets must share one dimension")
        if (0,) * len(offsets[0]) not in offsets:
            raise ValueError("offset pattern must contain the zero vector")
        if len(set(offsets)) != len(offsets):
            raise ValueError("offsets must be distinct")
        if len(offsets) > _MAX_SUPPORT:
            raise ValueError(f"support size {len(offsets)} exceeds cap {_MAX_SUPPORT}")
        table = np.asarray(self.table, dtype=float)
        if table.shape != (2,) * len(offsets):
            raise ValueError(
                f"table shape {table.shape} does not match support size {len(offsets)}"
            )
        table = table.copy()
        table.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "table", table)

    @property
    def size(self) -> int:
        return len(self.offsets)

    @property
    def diameter(self) -> int:
        return _chebyshev_diameter(self.offsets)

    def oscillation(self) -> float:
        """sup over spin pairs of the energy difference on this support."""
        return float(self.table.max() - self.table.min())

    def sup_abs(self) -> float:
        return float(np.abs(self.table).max())

    def __eq__(self, other):
        return (
            isinstance(other, TranslationClass)
            and self.offsets == other.offsets
            and np.array_equal(self.table, other.table)
        )

    def __hash__(self):
        return hash((self.offsets, self.table.tobytes()))


@dataclass(frozen=True)
class Interaction:
    """A finite-range interaction: translation classes plus site fields.

    ``site_fields`` maps a site x to a field coefficient f(x); the associated
    energy term is ``-f(x) * spin(x)``.  Site fields carry the constrained,
    non-translation-invariant part of a Hamiltonian; everything else lives in
    translation classes.
    """

    dimension: int
    classes: tuple[TranslationClass, ...] = ()
    site_fields: dict = field(default_factory=dict)

    def __post_init__(self):
        classes = tuple(self.classes)
        for cl in classes:
            if len(cl.offsets[0]) != self.dimension:
                raise ValueError("class dimension does not match interaction dimension")
        fields = {tuple(k): float(v) for k, v in dict(self.site_fields).items()}
        for s in fields:
            if len(s) != self.dimension:
                raise ValueError("site field dimension mismatch")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "site_fields", fields)

    @property
    def range(self) -> int:
        """Max Chebyshev diameter over class supports."""
        return max((cl.diameter for cl in self.classes), default=0)

    def translation_invariant(self) -> bool:
        """True when the site-field part is empty or constant."""
        vals = set(self.site_fields.values())
        return len(vals) <= 1

    def with_site_fields(self, fields: dict) -> "Interaction":
        merged = dict(self.site_fields)
        for k, v in fields.items():
            merged[tuple(k)] = merged.get(tuple(k), 0.0) + float(v)
        return Interaction(self.dimension, self.classes, merged)

    def field_at(self, site: Site) -> float:
        return self.site_fields.get(tuple(site), 0.0)

    def __eq__(self, other):
        return (
            isinstance(other, Interaction)
            and self.dimension == other.dimension
            and self.classes == other.classes
            and self.site_fields == other.site_fields
        )

    def __hash__(self):
        return hash((self.dimension, self.classes, tuple(sorted(self.site_fields.items()))))


def zero_interaction(d: int) -> Interaction:
    return Interaction(d)


def ising_interaction(beta: float, h: float, d: int) -> Interaction:
    """Nearest-neighbor Ising interaction.

    Pair energy -beta * s(x) s(y) on each nearest-neighbor bond (one
    translation class per axis, anchored at the lesser endpoint) and a
    single-site energy -h * s(x).
    """
    pm = np.array([-1.0, 1.0])
    classes = []
    zero = (0,) * d
    for axis in range(d):
        e = tuple(1 if i == axis else 0 for i in range(d))
        table = -beta * np.outer(pm, pm)
        classes.append(TranslationClass((zero, e), table))
    if h != 0.0:
        classes.append(TranslationClass((zero,), -h * pm))
    return Interaction(d, tuple(classes))


def single_site_interaction(h: float, d: int) -> Interaction:
    """Pure field interaction with energy -h * s(x) at every site."""
    pm = np.array([-1.0, 1.0])
    return Interaction(d, (TranslationClass(((0,) * d,), -h * pm),))


def difference_interaction(u_a: Interaction, u_b: Interaction) -> Interaction:
    """Termwise difference u_a - u_b, merging classes by offset pattern."""
    if u_a.dimension != u_b.dimension:
        raise ValueError("interactions live in different dimensions")
    tables: dict[tuple, np.ndarray] = {}
    for cl in u_a.classes:
        tables[cl.offsets] = tables.get(cl.offsets, 0.0) + cl.table
    for cl in u_b.classes:
        tables[cl.offsets] = tables.get(cl.offsets, 0.0) - cl.table
    classes = tuple(
        TranslationClass(offs, tab) for offs, tab in tables.items() if np.any(tab != 0.0)
    )
    fields = dict(u_a.site_fields)
    for k, v in u_b.site_fields.items():
        fields[k] = fields.get(k, 0.0) - v
    fields = {k: v for k, v in fields.items() if v != 0.0}
    return Interaction(u_a.dimension, classes, fields)


def scale_interaction(u: Interaction, factor: float) -> Interaction:
    classes = tuple(TranslationClass(cl.offsets, factor * cl.table) for cl in u.classes)
    fields = {k: factor * v for k, v in u.site_fields.items()}
    return Interaction(u.dimension, classes, fields)


def interaction_norm(u: Interaction) -> float:
    """Uniform summability norm: sum over terms containing a fixed site of the
    sup-absolute coupling, plus the worst single site field."""
    total = sum(cl.size * cl.sup_abs() for cl in u.classes)
    if u.site_fields:
        total += max(abs(v) for v in u.site_fields.values())
    return float(total)


@dataclass(frozen=True)
class DobrushinReport:
    """Result of the high-temperature (Dobrushin uniqueness) norm check.

    ``norm`` is  sum over terms A containing a fixed site of
    ``(|A|-1) * osc(A)``  where osc is the total oscillation of the coupling;
    the condition is satisfied when the norm is < 2.  Single-site terms
    contribute nothing, so the certificate is blind to any field.
    """

    norm: float
    satisfied: bool
    per_class_contributions: tuple

    def __str__(self):
        status = "satisfied" if self.satisfied else "not satisfied"
        return f"norm {self.norm:.3f} {status}"


def dobrushin_norm(u: Interaction) -> DobrushinReport:
    """Evaluate the uniqueness norm exactly by enumerating coupling tables.

    Requires a translation-invariant interaction: site fields would make the
    supremum over sites site-dependent, and they carry no weight anyway.
    """
    if not u.translation_invariant():
        raise ValueError(
            "dobrushin_norm needs a translation-invariant interaction "
            "(site_fields must be empty or constant); single-site terms do "
            "not contribute, so strip them instead"
        )
    contributions = []
    total = 0.0
    for cl in u.classes:
        # The pattern anchored at each of the |A0| positions covers a fixed
        # site once, so the per-site weight is |A0| * (|A0|-1) * oscillation.
        contrib = cl.size * (cl.size - 1) * cl.oscillation()
        contributions.append((cl.offsets, contrib))
        total += contrib
    return DobrushinReport(float(total), total < 2.0, tuple(contributions))


# ---------------------------------------------------------------------------
# Boundary conditions and term compilation
# ---------------------------------------------------------------------------

FREE = None  # free boundary marker


def boundary_lookup(boundary):
    """Normalize a boundary condition to a callable site -> ±1, or None.

    Accepted forms: None (free), an integer ±1 (constant boundary), a mapping
    from raw site tuples to spins, a Configuration (spins inside its own box),
    or any callable.
    """
    if boundary is None:
        return None
    if isinstance(boundary, (int, np.integer)):
        if boundary not in (-1, 1):
            raise ValueError("constant boundary must be +1 or -1")
        s = int(boundary)
        return lambda site: s
    if isinstance(boundary, Configuration):
        cfg = boundary

        def from_config(site):
            if not cfg.box.contains(site):
                raise KeyError(site)
            return cfg.spin(site)

        return from_config
    if callable(boundary):
        return boundary
    mapping = {tuple(k): int(v) for k, v in dict(boundary).items()}

    def from_mapping(site):
        return mapping[tuple(site)]

    return from_mapping


class CollarError(ValueError):
    """Boundary data does not cover the collar an evaluation needs."""


def compiled_terms(
    u: Interaction,
    box: Box,
    volume_sites,
    boundary,
    scope: str,
):
    """Flatten an interaction into concrete terms over an ordered volume.

    scope "free": keep terms whose support lies inside the volume.
    scope "touching": keep terms whose support intersects the volume; support
    sites outside it take their spin from the boundary condition.  On a torus
    supports wrap before the test.

    Returns ``(terms, const)`` where each term is ``(cols, table)`` --- the
    in-volume column indices and the coupling table reduced over all fixed
    (boundary) sites --- and ``const`` collects fully fixed terms.
    """
    if scope not in ("free", "touching"):
        raise ValueError(f"unknown scope {scope!r}")
    volume_sites = [tuple(s) for s in volume_sites]
    col_of = {s: i for i, s in enumerate(volume_sites)}
    lookup = boundary_lookup(boundary)
    need = u.range
    terms = []
    const = 0.0

    def fixed_spin(raw_site):
        if lookup is None:
            raise CollarError(
                f"term support reaches site {raw_site} outside the volume; a "
                f"boundary condition covering a collar of width {need} is required"
            )
        try:
            return int(lookup(raw_site))
        except KeyError:
            raise CollarError(
                f"boundary condition does not cover site {raw_site}; a collar "
                f"of width {need} around the volume is required"
            ) from None

    for cl in u.classes:
        anchors = set()
        if scope == "free" and not box.torus:
            # anchors with the whole support inside the box
            for a in box.sites():
                if all(box.contains(box.shift(a, o)) for o in cl.offsets):
                    anchors.add(a)
        else:
            for v in volume_sites:
                for o in cl.offsets:
                    raw = tuple(c - q for c, q in zip(v, o))
                    a = box.wrap(raw) if box.torus else raw
                    if a is not None:
                        anchors.add(a)
            if box.torus:
                anchors = {a for a in anchors if box.contains(a)}
        for a in sorted(anchors):
            support = []
            for o in cl.offsets:
                raw = box.shift(a, o)
                wrapped = box.wrap(raw)
                support.append((raw, wrapped))
            in_vol = [
                wrapped in col_of if wrapped is not None else False
                for raw, wrapped in support
            ]
            if scope == "free":
                if not all(in_vol):
                    continue
            else:
                if not any(in_vol):
                    continue
            # reduce the table over fixed axes
            index = []
            cols = []
            for (raw, wrapped), free in zip(support, in_vol):
                if free:
                    index.append(slice(None))
                    cols.append(col_of[wrapped])
                else:
                    spin = fixed_spin(wrapped if wrapped is not None else raw)
                    index.append((spin + 1) // 2)
            reduced = cl.table[tuple(index)]
            if cols:
                terms.append((tuple(cols), np.ascontiguousarray(reduced)))
            else:
                const += float(reduced)

    pm = np.array([1.0, -1.0])  # energy -f*s at spin (-1, +1)
    for site, f in sorted(u.site_fields.items()):
        wrapped = box.wrap(site) if box.torus else site
        if wrapped in col_of:
            terms.append(((col_of[wrapped],), f * pm))
        # site fields outside the volume belong to terms not touching it
    return terms, const


def term_energy(terms, const, bits) -> np.ndarray | float:
    """Energy of one or many states.

    ``bits`` has shape (n_states, n_cols) or (n_cols,), entries 0 (spin -1)
    or 1 (spin +1).
    """
    single = bits.ndim == 1
    b = bits[None, :] if single else bits
    energy = np.full(b.shape[0], const, dtype=float)
    for cols, table in terms:
        idx = tuple(b[:, c] for c in cols)
        energy += table[idx]
    return float(energy[0]) if single else energy


def state_bits(n: int) -> np.ndarray:
    """All 2^n states as a (2^n, n) array of bits; bit j is site j."""
    states = np.arange(1 << n, dtype=np.int64)
    return ((states[:, None] >> np.arange(n)) & 1).astype(np.int8)


def config_bits(config: Configuration, volume_sites) -> np.ndarray:
    return np.array(
        [(config.spin(s) + 1) // 2 for s in volume_sites], dtype=np.int8
    )


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------


def hamiltonian_free(u: Interaction, config: Configuration) -> float:
    """Free-boundary Hamiltonian: sum over terms supported inside the box.

    On a torus every anchored term is inside, so this is the full wrapped
    Hamiltonian.
    """
    sites = config.box.site_list()
    terms, const = compiled_terms(u, config.box, sites, None, "free")
    return term_energy(terms, const, config_bits(config, sites))


def hamiltonian_bc(u: Interaction, config: Configuration, boundary) -> float:
    """Hamiltonian with boundary condition: sum over terms touching the box,
    with off-box spins read from the boundary condition.

    The boundary must cover a collar of width >= the interaction range; a
    thinner collar raises CollarError naming the required width.
    """
    if config.box.torus:
        return hamiltonian_free(u, config)
    sites = config.box.site_list()
    terms, const = compiled_terms(u, config.box, sites, boundary, "touching")
    return term_energy(terms, const, config_bits(config, sites))


def energy_delta(u: Interaction, config: Configuration, x: Site, boundary=None) -> float:
    """H(config with x flipped) - H(config), from the terms containing x only.

    With ``boundary`` None the free-boundary Hamiltonian is differenced;
    otherwise the boundary-condition Hamiltonian.
    """
    x = tuple(x)
    if not config.box.contains(x):
        raise ValueError(f"site {x} not in box {config.box.extents}")
    box = config.box
    lookup = boundary_lookup(boundary)
    need = u.range

    def spin_at(raw):
        wrapped = box.wrap(raw)
        if wrapped is not None:
            return config.spin(wrapped)
        if lookup is None:
            raise CollarError(
                f"energy difference at {x} reaches off-box site {raw}; a boundary "
                f"condition covering a collar of width {need} is required"
            )
        try:
            return int(lookup(raw))
        except KeyError:
            raise CollarError(
                f"boundary condition does not cover site {raw}; a collar of "
                f"width {need} is required"
            ) from None

    delta = 0.0
    for cl in u.classes:
        for o in cl.offsets:
            a = tuple(c - q for c, q in zip(x, o))
            support_raw = [box.shift(a, off) for off in cl.offsets]
            if box.torus:
                support = [box.wrap(r) for r in support_raw]
            else:
                support = support_raw
                if boundary is None and not all(box.contains(r) for r in support_raw):
                    continue  # free boundary: term not inside the box
            spins = [spin_at(r) for r in support_raw]
            idx = tuple((s + 1) // 2 for s in spins)
            flipped = tuple(
                (1 - i if (site if box.torus else raw) == x else i)
                for i, site, raw in zip(idx, support, support_raw)
            )
            delta += float(cl.table[flipped]) - float(cl.table[idx])
    f = u.field_at(x)
    if f != 0.0:
        delta += 2.0 * f * config.spin(x)
    return delta


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def interaction_to_json(u: Interaction) -> str:
    """Serialize with a fixed key order: dimension, range, classes, site_fields.

    Class tables are flattened row-major (axis order = offset order, index 0
    is spin -1); site fields are sorted by site for reproducible bytes.
    """
    doc = {
        "dimension": u.dimension,
        "range": u.range,
        "classes": [
            {
                "offsets": [list(o) for o in cl.offsets],
                "table": [float(v) for v in cl.table.reshape(-1)],
            }
            for cl in u.classes
        ],
        "site_fields": [
            [list(site), value] for site, value in sorted(u.site_fields.items())
        ],
    }
    return json.dumps(doc, indent=2)


def interaction_from_json(text: str) -> Interaction:
    doc = json.loads(text)
    d = int(doc["dimension"])
    classes = []
    for entry in doc["classes"]:
        offsets = tuple(tuple(int(c) for c in o) for o in entry["offsets"])
        k = len(offsets)
        table = np.array(entry["table"], dtype=float).reshape((2,) * k)
        classes.append(TranslationClass(offsets, table))
    fields = {tuple(int(c) for c in site): float(v) for site, v in doc["site_fields"]}
    return Interaction(d, tuple(classes), fields)
