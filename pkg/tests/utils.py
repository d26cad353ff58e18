import os

import numpy as np


def write_config(directory: str, text: str, name: str = "run.toml") -> str:
    path = os.path.join(str(directory), name)
    with open(path, "w", encoding="utf-8") as stream:
        stream.write(text)
    return path


def disk_points(n: int = 7, radius: float = 0.9) -> np.ndarray:
    """A small cloud of points inside the disk of the given radius."""
    r = radius * np.sqrt(np.linspace(0.0, 1.0, n))
    angle = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    rr, aa = np.meshgrid(r, angle, indexing="ij")
    return np.stack([rr * np.cos(aa), rr * np.sin(aa)], axis=-1).reshape(-1, 2)
