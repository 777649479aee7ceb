STRIDE = 4
DRIFT_R = 16.0
THRESHOLD = 0.3
BRANCH_LOW = 88.0
BRANCH_HIGH = 92.0

# Loss weights
ALPHA_FOCAL = 2.0
ALPHA = 1.0
BETA = 1.0
GAMMA = 0.5
PROB_EPS = 1e-7
SMOOTH_L1_KINK = 1.0

MERGE_IOU = 0.7
EVAL_IOU = 0.5
MIN_AREA = 1e-9

TILE_WINDOW = 800
TILE_OVERLAP = 0.25

# sqrt(0.5) is the farthest a half-up rounded centre cell can sit from the true centre
MIN_DRIFT_RADIUS = 0.75

GRAD_STEP = 1e-4
GRAD_TOLERANCE = 1e-4
GRAD_REL_FLOOR = 1e-2

ROUNDTRIP_IOU = 0.99
ROUNDTRIP_BAR = 0.99
MIN_RESOLVED_SIDE = 16.0

DOTA_CLASSES = [
    "plane",
    "baseball-diamond",
    "bridge",
    "ground-track-field",
    "small-vehicle",
    "large-vehicle",
    "ship",
    "tennis-court",
    "basketball-court",
    "storage-tank",
    "soccer-ball-field",
    "roundabout",
    "harbor",
    "swimming-pool",
    "helicopter",
]
TEXT_CLASSES = ["text"]
ICDAR_DIFFICULT = "###"

HEATMAP_TENSORS = ("hm_b1", "hm_b2")
REGRESSION_TENSORS = ("reg_b1", "reg_b2")
MASK_TENSORS = ("mask_b1", "mask_b2")
TENSOR_NAMES = HEATMAP_TENSORS + REGRESSION_TENSORS + MASK_TENSORS
MANIFEST_FILE = "manifest.json"
REGRESSION_CHANNELS = 8

SEED_ENV = "O2_SEED"
LOG_DIR_ENV = "MIDLINES_LOG_DIR"
