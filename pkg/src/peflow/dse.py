"""Exhaustive design-space exploration over static array shapes (R, C).

Every grid point is evaluated with the closed-form model only, so a
sweep over thousands of configurations and a hundred layers finishes in
seconds.  Points where some layer cannot map (its elastic group exceeds
the core count) are kept with a feasibility flag rather than dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import perfmodel as pm
from .tiling import UnmappableLayerError
from .workload import Network, count_macs


@dataclass(frozen=True)
class _GridCfg:
    rows: int
    cores: int


@dataclass(frozen=True)
class DseQuery:
    networks: tuple[Network, ...]
    r_range: tuple[int, int]           # inclusive
    c_range: tuple[int, int]           # inclusive
    c_multiple_of: int = 1
    max_bytes_per_clock: float | None = None
    max_wsram_depth: int | None = None

    def __post_init__(self):
        if not self.networks:
            raise ValueError("query needs at least one network")
        if self.r_range[0] > self.r_range[1] or self.c_range[0] > self.c_range[1]:
            raise ValueError("empty parameter range")


@dataclass(frozen=True)
class DsePoint:
    rows: int
    cores: int
    feasible: bool
    efficiency: float                  # cycle-weighted over every layer
    conv_efficiency: dict[str, float]  # per network, conv layers only
    net_efficiency: dict[str, float]   # per network, all layers
    total_words: int
    reason: str = ""

    @property
    def pe_count(self) -> int:
        return self.rows * self.cores


def evaluate_point(rows: int, cores: int, networks,
                   max_bytes_per_clock=None, max_wsram_depth=None) -> DsePoint:
    cfg = _GridCfg(rows, cores)
    total_q = total_macs = total_words = 0
    conv_eff = {}
    net_eff = {}
    try:
        for net in networks:
            q_all = macs_all = q_conv = macs_conv = 0
            for layer in net.layers:
                q = pm.clocks(layer, cfg)
                macs = count_macs(layer).macs_valid
                words = sum(pm.memory_accesses(layer, cfg))
                if max_bytes_per_clock is not None:
                    if sum(pm.bandwidth(layer, cfg, 1.0)) > max_bytes_per_clock:
                        raise UnmappableLayerError(
                            f"{net.name}/{layer.name}: bandwidth over cap")
                if max_wsram_depth is not None and layer.is_conv \
                        and layer.sw * layer.ci * layer.kh > max_wsram_depth:
                    raise UnmappableLayerError(
                        f"{net.name}/{layer.name}: rotator depth over cap")
                q_all += q
                macs_all += macs
                total_words += words
                if layer.is_conv:
                    q_conv += q
                    macs_conv += macs
            pes = rows * cores
            net_eff[net.name] = macs_all / (pes * q_all)
            if q_conv:
                conv_eff[net.name] = macs_conv / (pes * q_conv)
            total_q += q_all
            total_macs += macs_all
    except UnmappableLayerError as exc:
        return DsePoint(rows, cores, False, 0.0, {}, {}, 0, reason=str(exc))
    eff = total_macs / (rows * cores * total_q)
    return DsePoint(rows, cores, True, eff, conv_eff, net_eff, total_words)


def sweep(query: DseQuery) -> list[DsePoint]:
    """Evaluate the full grid; deterministic order by (rows, cores)."""
    points = []
    for r in range(query.r_range[0], query.r_range[1] + 1):
        for c in range(query.c_range[0], query.c_range[1] + 1):
            if c % query.c_multiple_of:
                continue
            points.append(evaluate_point(
                r, c, query.networks,
                max_bytes_per_clock=query.max_bytes_per_clock,
                max_wsram_depth=query.max_wsram_depth))
    return points


def pareto(points) -> list[DsePoint]:
    """Non-dominated feasible points on (max efficiency, min words).

    Exact ties survive (none dominates the other); output is ordered by
    (rows, cores).
    """
    feasible = [p for p in points if p.feasible]
    front = []
    for p in feasible:
        dominated = any(
            q.efficiency >= p.efficiency and q.total_words <= p.total_words
            and (q.efficiency > p.efficiency or q.total_words < p.total_words)
            for q in feasible if q is not p)
        if not dominated:
            front.append(p)
    front.sort(key=lambda p: (p.rows, p.cores))
    return front


def choose(front) -> DsePoint:
    """Preferred configuration from a front: the point whose efficiency
    is within one percentage point of the best while moving the fewest
    words; ties fall to fewer PEs, then fewer cores."""
    if not front:
        raise ValueError("empty front")
    best = max(p.efficiency for p in front)
    near = [p for p in front if best - p.efficiency <= 0.01]
    return min(near, key=lambda p: (p.total_words, p.pe_count, p.cores))
