"""Grids, distance maps, and exponential-decay covariates.

Builds a raster grid over a planar window, computes distance maps to point
and polyline features, and turns them into bounded covariates with the
standard decay coefficients.
"""

import numpy as np

from geocausal import (
    DECAY_DEFAULTS,
    Region,
    SpatialWindow,
    build_grid,
    decay_transform,
    distance_map,
    integrate_raster,
    normalize_raster,
)

window = SpatialWindow(bounds=(0.0, 0.0, 100.0, 80.0))
grid = build_grid(window, 100, 80)
print("window area %.0f km^2, %d cells of %.2f km^2"
      % (window.area, grid.n_cells, grid.cell_area))

# distance to "cities" (points) and a "road" (polyline), in km
cities = np.array([[20.0, 30.0], [65.0, 55.0], [80.0, 20.0]])
road = [np.array([[0.0, 10.0], [40.0, 35.0], [100.0, 45.0]])]

d_cities = distance_map(grid, cities)
d_road = distance_map(grid, road)
print("max distance to a city: %.1f km" % d_cities.values.max())
print("max distance to the road: %.1f km" % d_road.values.max())

# exponential decay turns distances into (0, 1] covariates; larger-magnitude
# coefficients localize the influence of smaller objects
city_cov = decay_transform(d_cities, DECAY_DEFAULTS["cities"][1])  # -4 per km
road_cov = decay_transform(d_road, DECAY_DEFAULTS["roads"])        # -3 per km
print("city covariate range: (%.3g, %.3g]"
      % (city_cov.values.min(), city_cov.values.max()))

# any raster can be normalized into a density and integrated over regions
density = normalize_raster(city_cov)
print("density integrates to %.12f" % integrate_raster(density))

box = Region(polygon=np.array([[10, 20], [35, 20], [35, 45], [10, 45]], float),
             label="around city 1")
print("mass within the box: %.3f" % integrate_raster(density, box))
