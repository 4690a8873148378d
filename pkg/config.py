import os

# Grabs the folder where the script runs.
basedir = os.path.abspath(os.path.dirname(__file__))

# Enable debug mode (logs go to stderr only, no log file).
DEBUG = False
LOG_FILE = os.path.join(basedir, 'error.log')

# Worker count for Monte Carlo replications and optimizer restarts.
# The --threads flag overrides the environment variable.
THREADS_ENV_VAR = 'SELLAB_THREADS'
THREADS = 1

#----------------------------------------------------------------------------#
# Gradient descent.
#----------------------------------------------------------------------------#

LEARNING_RATE = 1.0
MAX_ITERATIONS = 10**6
TOLERANCE = 1e-6

# Matching termination: running max/min unchanged for T rounds.
STABILITY_ROUNDS = 50
NEIGHBORS = 1

# Trace is kept for every iteration up to this point, then every 100th.
TRACE_FULL_UNTIL = 10**4
TRACE_THIN_EVERY = 100

#----------------------------------------------------------------------------#
# Sieve.
#----------------------------------------------------------------------------#

RIDGE = 1e-10
SIEVE_ORDER = 'auto'
AIC_FLOOR = 1e-12
FIRST_STAGE_ORDERS = (1, 2, 3, 4, 5, 6, 7, 8)
SECOND_STAGE_ORDERS = (1, 2, 3, 4, 5)

#----------------------------------------------------------------------------#
# Parametric baselines.
#----------------------------------------------------------------------------#

RESTARTS = 5
RHO_BOUND = 0.99
PROB_FLOOR = 1e-12
OPTIMIZER_MAX_ITERATIONS = 500
OPTIMIZER_GTOL = 1e-6

#----------------------------------------------------------------------------#
# Simulation.
#----------------------------------------------------------------------------#

SEED = 0
N = 1000
P_Z = 2
P_X = 2
ERROR_LAW = 'normal'
REPLICATIONS = 10
METHODS = ('mle', 'nls', 'matching', 'sieve')
# total: sum of |bias| and root of summed MSE; mean: averages over components.
AGGREGATE_MODE = 'total'
DISPLAY_COEFFICIENTS = 10
