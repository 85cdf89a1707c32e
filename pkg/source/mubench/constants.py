"""Constants for the MUBench backend. Literature defaults live here so every config can override them."""

from .config import ScenarioKind

# training
DEFAULT_EPOCHS = 30
DEFAULT_BATCH_SIZE = 128
DEFAULT_LR = 0.1
DEFAULT_MOMENTUM = 0.9
DEFAULT_WEIGHT_DECAY = 5e-4
DEFAULT_CNN_WIDTHS = (16, 32, 64)
DEFAULT_HIDDEN_UNITS = 64
AUGMENT_CROP_PADDING = 4

# scenarios
DEFAULT_TARGET_CLASS = 0
BUDGET_SWEEP_PERCENTS = (2.0, 5.0, 10.0, 20.0)

# attacks
LABEL_FLIP_PAIRS = ((0, 9), (1, 8), (2, 7), (3, 6), (4, 5))
TRIGGER_SIZE = 4
TRIGGER_VALUE = 1.0
BACKDOOR_TARGET_CLASS = 0

# unlearners
SUB_RETAIN_FRACTION = 0.1
FINETUNE_LR = 0.01
UNROLLING_FINETUNE_EPOCHS = 5
AMNESIAC_FINETUNE_EPOCHS = 20
L1_SPARSE_EPOCHS = 20
SALUN_EPOCHS = 20
SISA_SHARDS = 5
SISA_SLICES = 1
CG_DAMPING = 0.01
CG_MAX_ITERATIONS = 100
CG_TOLERANCE = 1e-10
FISHER_FLOOR = 1e-8
FISHER_ALPHA = 1e-7
SSD_ALPHA = 10.0
SSD_LAMBDA = 1.0
SALUN_FRACTION = 0.5
L1_GAMMA = 5e-4
BOUNDARY_EPSILON = 8.0 / 255.0
PGU_ENERGY_THRESHOLD = 0.97
SCRUB_DIVERGENCE_FACTOR = 10.0
SCRUB_EPOCHS = 5
SCRUB_MAX_EPOCHS = 2
BAD_TEACHER_EPOCHS = 1
BAD_TEACHER_TEMPERATURE = 1.0
BOUNDARY_EPOCHS = 5
PGU_EPOCHS = 2
PGU_REPRESENTATION_SAMPLES = 500
NOISE_STEPS = 50
NOISE_LR = 0.1
NOISE_REGULARIZATION = 0.1
NOISE_SAMPLES = 64
MSG_FRACTION = 0.1
NIU_NOISE_SCALE = 0.01
SHORT_FINETUNE_EPOCHS = 2

FIRST_ORDER_TAU = {
    ScenarioKind.ONE_CLASS: 0.04,
    ScenarioKind.WORST_CASE: 0.04,
    ScenarioKind.BEST_CASE: 0.04,
    ScenarioKind.ALL_CLASSES: 0.08,
    ScenarioKind.CLASS_WISE: 0.08,
    ScenarioKind.DEPOISON: 0.00003,
}

# metrics
PROB_CLAMP = 1e-12
MIA_MAX_PER_SIDE = 5000
MIA_TOLERANCE = 1e-6
