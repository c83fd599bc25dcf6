# Environment variables
FUSEPATH_THREADS = "FUSEPATH_THREADS"
FUSEPATH_MAX_ITER = "FUSEPATH_MAX_ITER"
LOADING_MODE_FOR_FUSEPATH_ENV_VARS = "LOADING_MODE_FOR_FUSEPATH_ENV_VARS"

DEFAULT_ENV_FILE = ".env"
DEFAULT_THREADS = 1

# Command-line defaults
DEFAULT_Q = 2
DEFAULT_GRID_COUNT = 100
DEFAULT_GRID_MIN_FRAC = 1e-3
DEFAULT_GAMMA_EBIC = 1.0
DEFAULT_REPS = 10
DEFAULT_SEED = 0
DEFAULT_FORMAT = "csv"

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
