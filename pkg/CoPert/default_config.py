"""Module that defines the default settings used throughout CoPert.

Every tunable constant lives here so that the library modules, the
:class:`~CoPert.estimators.EstimatorConfig` and the command-line script share
a single source of defaults.

"""
# ==================
# Simplex tolerances
# ==================
# Sums within this distance of 1 are renormalized silently
SUM_TOL_SILENT = 1e-9
# Sums within this distance of 1 are renormalized with a warning flag; beyond
# it the composition is rejected
SUM_TOL_REJECT = 1e-6
# Coordinates with an absolute value below this are exactly zero for the
# binary indicators
ZERO_TOL = 1e-12
# Slack allowed outside [0, 1] when applying a perturbation
DOMAIN_TOL = 1e-9
# ||omega||_1 below this marks a zero-speed point
ZERO_SPEED_TOL = 1e-12

# ================================
# Generic reparametrization tools
# ================================
# t_w(REPARAM_ANCHOR) = 0 for the reparametrizations built from a speed
REPARAM_ANCHOR = 1.0
QUAD_EPSABS = 1e-9
QUAD_LIMIT = 2 ** 16
# Speeds at or below this value stop the quadrature
MIN_SPEED = 1e-12
# Relative step of the central difference used for the implied speed
FD_REL_STEP = 1e-6

# =======
# Forests
# =======
forest_defaults = {
    "n_trees": 250,
    "max_depth": None,
    "min_leaf": 5,
    "max_features": "sqrt",
}
# Learner menu: name -> keyword arguments of the learner
learner_menu = {
    "mean": {},
    "ridge": {"penalty": 1.0},
    "forest_shallow": {"max_depth": 2},
    "forest": {"max_depth": None},
    "cv": {"candidates": ["mean", "forest_shallow", "forest"]},
}
CV_FOLDS = 5
PROPENSITY_CLIP = (0.01, 0.99)

# =========
# Smoothing
# =========
LOCPOL_MAX_COND = 1e12
LOCPOL_RIDGE = 1e-8

# =====
# Score
# =====
SCORE_METHODS = ["gaussian_kernel", "penalized_spline"]
SCORE_NUISANCE_MODES = ["resplit", "crossfit"]
VARIANCE_FLOOR = 1e-6
# Fraction of floored variance predictions above which the location-scale
# model is rejected
MAX_FLOORED_FRACTION = 0.5
DENSITY_FLOOR = 1e-4
MIN_SCORE_SAMPLES = 20
spline_defaults = {
    "n_knots": 20,
    "degree": 3,
    "penalty": 0.1,
}

# ==========
# Estimators
# ==========
METHODS = ["npm", "npm_no_crossfit", "plm", "plm_no_crossfit", "plugin",
           "plugin_no_crossfit", "ols_marginal"]
# Number of folds per estimator family
default_folds = {
    "npm": 2,
    "plm": 2,
    "plugin": 2,
}
TOY_FOLDS = 10
ALPHA = 0.05
DEGENERATE_J = 1e-10
DEFAULT_SEED = 20240101

# ==========
# Simulation
# ==========
SETTINGS = ["binary_plm", "binary_np", "cont_plm", "cont_np", "microbe_toy",
            "diversity_toy"]
DEFAULT_N = 1000
DEFAULT_D = 3
DEFAULT_REPS = 100

# Environment variable holding the number of joblib workers
THREADS_ENV_VAR = "COPERT_THREADS"
