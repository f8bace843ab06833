# src/workflows/iist_constants.py
# Constants shared by the transform / detect workflows and the config layer

# --------------------------------------------
# IIST DEFAULTS
# --------------------------------------------
DEFAULT_LAMBDA_C = 0.01          # weight of the relative content term
DEFAULT_ALPHA = 1.0              # broadcast to all 16 conv layers
DEFAULT_MAX_OUTER_ITERS = 100
DEFAULT_EPSILON = 0.01           # mean absolute pixel difference on [0, 1]
DEFAULT_REFINE_INNER_ITERS = 40  # L-BFGS iterations per stage k >= 1
DEFAULT_SEED = 0
DEFAULT_PRECISION = "float32"

PRECISIONS = ["float32", "float64"]

# --------------------------------------------
# STOP REASONS (recorded on the run trace)
# --------------------------------------------
STOP_CONVERGED = "converged"      # consecutive outputs closer than epsilon
STOP_MAX_ITERS = "max_iters"      # stage N finished
STOP_SINGLE_STAGE = "single_stage"  # N = 0

# --------------------------------------------
# TRACE RECORD FIELDS (JSON lines export)
# --------------------------------------------
TRACE_FIELDS = [
    "k",
    "inner_iterations",
    "loss",
    "content_term",
    "style_term",
    "diff_to_prev",
]

# --------------------------------------------
# DETECTORS
# --------------------------------------------
DETECTOR_OTSU = "otsu"
DETECTOR_OCSVM = "ocsvm"
DETECTORS = [DETECTOR_OTSU, DETECTOR_OCSVM]

DEFAULT_NU = 0.1
DEFAULT_RADIUS = 1
DEFAULT_MAX_TRAIN_SAMPLES = 2000
SELF_TRAINING_FRACTION = 0.5

# --------------------------------------------
# COMPARISON HARNESS
# --------------------------------------------
LAMBDA_SWEEP = [0.001, 0.005, 0.01, 0.05, 0.1, 0.2, 0.5]

APPENDIX_POOLINGS = ["max", "average"]
APPENDIX_CONTENT_LAYERS = ["conv3_4", "conv4_4", "conv5_4"]

COMPARISON_COLUMNS = [
    "variant",
    "pooling",
    "content_layer",
    "lambda_c",
    "Ra",
    "Rp",
    "Rr",
    "Ka",
    "stages",
]

# Baseline variants in the comparison table
VARIANT_HFF = "HFF"            # single IST stage (N = 0)
VARIANT_DHFF = "DHFF"          # full iterative transfer
VARIANT_OCSVM_O = "OCSVM_O"    # OCSVM straight on optical vs prepared SAR
VARIANT_OTSU_O = "OTSU_O"      # Otsu straight on optical vs prepared SAR
VARIANT_APPENDIX = "appendix"
VARIANT_SWEEP = "lambda_sweep"
