"""Small explicit topologies used by regression tests and examples."""

from __future__ import annotations

from .scenario import AttackerProfile, ScenarioConfig, TrafficFlow

# Attacker 0 sits on the shortest path between source 1 and destination 5:
#
#     1 - 2 - 0 - 3 - 4 - 5      direct line, 200 m spacing
#     |       |       |
#     6       11      10         11 neighbors only the attacker
#      \              |
#       7 - 8 - 9 ----+          detour outside the attacker's range
#
# Node 0 has exactly three neighbors (2, 3, 11). The detour 1-6-7-8-9-10-4-5
# is two hops longer than the direct line.
FIGURE_POSITIONS = (
    (1000.0, 1000.0),  # 0 attacker
    (600.0, 1000.0),   # 1 source
    (800.0, 1000.0),   # 2
    (1200.0, 1000.0),  # 3
    (1400.0, 1000.0),  # 4
    (1600.0, 1000.0),  # 5 destination
    (600.0, 800.0),    # 6
    (800.0, 700.0),    # 7
    (1000.0, 700.0),   # 8
    (1200.0, 700.0),   # 9
    (1400.0, 800.0),   # 10
    (1000.0, 1200.0),  # 11
)


def figure_fixture(defense_enabled: bool = True, flood_rate: float = 20.0,
                   seed: int = 1) -> ScenarioConfig:
    return ScenarioConfig(
        node_count=len(FIGURE_POSITIONS),
        placement=FIGURE_POSITIONS,
        sim_duration=10.0,
        seed=seed,
        defense_enabled=defense_enabled,
        flows=(TrafficFlow(1, 5, 2.0, 9.0),),
        attackers=(AttackerProfile(node=0, flood_rate=flood_rate, start=1.0, end=9.0),),
    )


def line_fixture(n: int = 3, spacing: float = 200.0, **overrides) -> ScenarioConfig:
    """``n`` nodes on a straight line; only consecutive nodes are neighbors."""
    positions = tuple((100.0 + i * spacing, 100.0) for i in range(n))
    kw = dict(
        node_count=n,
        placement=positions,
        field_size=(200.0 + (n - 1) * spacing, 200.0),
        flows=(),
        attackers=(),
    )
    kw.update(overrides)
    return ScenarioConfig(**kw)
