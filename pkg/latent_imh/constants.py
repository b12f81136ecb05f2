"""Global constants for the Latent-IMH toolkit"""

# Linear algebra
# Singular values below SINGULAR_TOL * largest are treated as zero
SINGULAR_TOL = 1e-12
# Dense maps up to this size are solved by LU, larger ones iteratively
DIRECT_SOLVE_MAX_DIM = 2000
DEFAULT_SOLVE_TOL = 1e-10
DEFAULT_MAX_ITERS = 10_000

# Priors
DEFAULT_TV_EPS = 1e-2
DEFAULT_MIXTURE_SPREAD = 3.0
DEFAULT_PRIOR_CONDITION = 1000.0

# Problems
DEFAULT_EXACT_TOL = 1e-12
GRAPH_REGULARIZATION = 1e-6
HELMHOLTZ_EVENT_SHIFT = 0.15
HELMHOLTZ_OBSERVATION_RATIO = 0.2
HELMHOLTZ_RESONANCE_TOL = 1e-6
SPECTRAL_ERROR_RTOL = 0.05

# Samplers
NUTS_MAX_DEPTH = 10
NUTS_DIVERGENCE = 1000.0
NUTS_TARGET_ACCEPT = 0.45
MALA_TARGET_ACCEPT = 0.5
DUAL_AVERAGING_GAMMA = 0.05
DUAL_AVERAGING_T0 = 10.0
DUAL_AVERAGING_KAPPA = 0.75
ROBBINS_MONRO_EXPONENT = 0.6
INNER_STEPS = 16
INNER_WARMUP = 500
DEFAULT_WARMUP = 500
DEFAULT_MALA_STEP = 0.1

# Metrics
MMD_MAX_POINTS = 10_000
MATCHING_VALID_THRESHOLD = 0.5
KL_NEGATIVE_SLACK = 1e-6

# Experiment output
CONFIG_SCHEMA_VERSION = 1
FLOAT_FORMAT = ".17g"
CSV_COLUMNS = [
    "step",
    "forward_solves",
    "inverse_solves",
    "acceptance_rate",
    "rel_mean_err",
    "sq_bias_2nd",
    "mmd",
]
SWEEP_COLUMNS = ["sampler", "parameter", "value", "acceptance_rate", "D_a", "D_l"]
MANIFEST_FILE = "manifest.json"
KL_REPORT_FILE = "kl_report.json"
SWEEP_FILE = "sweep.csv"
REFERENCE_RUNS = 10
