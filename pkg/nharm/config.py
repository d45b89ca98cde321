import math

VERSION = "0.3.0"

SCHEMA_VERSION = 1          # "schema" field every RunConfig JSON must carry

# Tolerances
ON_MANIFOLD_TOL = 1e-12     # |  |u_i| - 1  | for sphere-valued fields
BASE_POINT_TOL = 1e-8       # base points / tangent inputs accepted by target ops
DEGREE_RESIDUAL_MAX = 0.2   # distance from an integer above which a degree is degenerate

# Inequality kernel
P0_OFFSET = 0.5             # P0 = n + P0_OFFSET unless a caller overrides it
DEFAULT_SAMPLES = 100_000
DEFAULT_SEED = 20240229

# Bubbling diagnostics
BUBBLE_ENERGY_S2 = 4 * math.pi  # Dirichlet energy of the stereographic bubble
CONCENTRATION_FRACTION = 0.3    # default threshold = fraction * BUBBLE_ENERGY_S2
CHART_MULTIPLE_K = 8            # rescaled chart covers B_{K r}
NECK_OUTER_RADIUS = 0.25        # outer edge of the neck annulus ladder
CHART_RESOLUTION = 64           # cells per side of the rescaled chart grid
SHELL_MIN_CELLS = 16            # cells a Hopf shell needs before it counts as resolved

# Solver defaults
MAX_ITERS = 5000
GRAD_TOL = 1e-6
ARMIJO_C = 1e-4
BACKTRACK = 0.5
INITIAL_STEP = 1e-2
MIN_STEP = 1e-14
MAX_STEP = 1e3
CHECKERBOARD_TOL = 1e-6     # nodal checkerboard amplitude reported at convergence

# Runtime
THREADS_ENV = "NHARM_THREADS"
CELL_BLOCK = 4096           # cells per work unit when threads > 1
CSV_DIGITS = 17             # significant digits for every float written to CSV
