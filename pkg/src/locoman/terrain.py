"""Random block terrain for robustness studies.

Twenty rectangular blocks per terrain, heights 1-3 cm, widths 10-20 cm along
the travel direction, lengths 1-7 m transverse (long strips across the
corridor). Placement is stratified over a 12 m corridor so blocks never
overlap; generation is deterministic per seed. The controller never sees any
of this.
"""

from dataclasses import dataclass, field

import numpy as np

N_BLOCKS = 20
CORRIDOR = 12.0
HEIGHT_RANGE = (0.01, 0.03)
WIDTH_RANGE = (0.10, 0.20)
LENGTH_RANGE = (1.0, 7.0)


@dataclass(frozen=True)
class Block:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    height: float


@dataclass(frozen=True)
class Terrain:
    blocks: tuple = ()
    mu: float = 0.6

    def height(self, x, y):
        """Ground height at (x, y); base plane is z = 0."""
        z = 0.0
        for b in self.blocks:
            if b.x_min <= x <= b.x_max and b.y_min <= y <= b.y_max:
                if b.height > z:
                    z = b.height
        return z

    def summary(self):
        return [
            {"x": [b.x_min, b.x_max], "y": [b.y_min, b.y_max], "h": b.height}
            for b in self.blocks
        ]


def flat(mu=0.6) -> Terrain:
    return Terrain(blocks=(), mu=mu)


def generate_terrain(seed, mu=0.6, start=0.5) -> Terrain:
    """Deterministic random terrain; one block per corridor slot."""
    rng = np.random.default_rng(int(seed))
    slot = (CORRIDOR - start - WIDTH_RANGE[1]) / N_BLOCKS
    blocks = []
    for i in range(N_BLOCKS):
        height = rng.uniform(*HEIGHT_RANGE)
        width = rng.uniform(*WIDTH_RANGE)
        length = rng.uniform(*LENGTH_RANGE)
        x0 = start + i * slot + rng.uniform(0.0, slot - width)
        y_c = rng.uniform(-0.3, 0.3)
        blocks.append(Block(
            x_min=float(x0), x_max=float(x0 + width),
            y_min=float(y_c - length / 2), y_max=float(y_c + length / 2),
            height=float(height),
        ))
    return Terrain(blocks=tuple(blocks), mu=mu)


def preset(name, seed=0, mu=0.6) -> Terrain:
    """Scenario presets: flat, blocks (1-3 cm), tall_blocks (5 cm demo)."""
    if name == "flat":
        return flat(mu)
    if name == "blocks":
        return generate_terrain(seed, mu=mu)
    if name == "tall_blocks":
        base = generate_terrain(seed, mu=mu)
        blocks = tuple(
            Block(b.x_min, b.x_max, b.y_min, b.y_max, 0.05) for b in base.blocks
        )
        return Terrain(blocks=blocks, mu=mu)
    raise ValueError(f"unknown terrain preset {name!r}")
