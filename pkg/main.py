import numpy as np

from simpleray import InflowGrid, RayTable, invert_xray, triple_from_ids, xray
from simpleray.xray import pixel_grid

if __name__ == "__main__":
    t = triple_from_ids("gauss1", "rot-bump:0.1,0.2,0.5,0.3")
    grid = InflowGrid(n_alpha=48, n_beta=48)
    table = RayTable.trace(t.g, grid)

    sinogram = xray(t.g, t.b, grid, table, order=1)
    result = invert_xray(t.g, sinogram, order=1, grid=pixel_grid(41), table=table)
    print("iterations:", result.iterations, "residual:", float(np.min(result.residuals)))
