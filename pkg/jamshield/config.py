from pathlib import Path

BASE_DIR = Path(__file__).parent.parent
PACKAGE_DIR = Path(__file__).parent

DEFAULT_MANIFEST_FILE = PACKAGE_DIR / "default_manifest.json"
OUTPUT_DIR = BASE_DIR / "output"
OUTPUT_DATASET_FILE = OUTPUT_DIR / "dataset.csv"
OUTPUT_MASK_FILE = OUTPUT_DIR / "mask.json"
OUTPUT_REPORT_FILE = OUTPUT_DIR / "report" / "report.json"

DEFAULT_SEED = 42

LOG_ENV_VAR = "JAMSHIELD_LOG"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_LEVELS = {
    "error": "ERROR",
    "warn": "WARNING",
    "info": "INFO",
    "debug": "DEBUG",
}

# Schema
FEATURE_COUNT = 40
LAYERS = ("physical", "link", "application")
CSV_PRECISION = 9  # significant digits
TIMESTAMP_COLUMN = "timestamp"
LABEL_COLUMNS = ["kind", "variant"]
PSEUDO_LABEL_COLUMNS = ["pseudo_label", "confidence"]

BENIGN = "benign"
JAMMER_KINDS = ("constant", "reactive", "random")

# Jammer variants per kind
CLASS_TAXONOMY = {
    "constant": [
        "gaussian_10db",
        "gaussian_20db",
        "gaussian_25db",
        "gaussian_dynamic_gain",
        "pulse_20db",
        "triangle_20db",
    ],
    "reactive": [
        "cos_nlos",
        "gaussian_additional_devices",
        "gaussian_los",
        "gaussian_nlos",
        "square_nlos",
        "triangle_nlos",
    ],
    "random": [
        "cos_dynamic_gain",
        "pulse_dynamic_gain",
        "sawtooth_dynamic_gain",
        "triangle_dynamic_gain",
    ],
}

# Reference dataset row counts per class
REFERENCE_CLASS_COUNTS = {
    "benign": 29896,
    "constant/gaussian_10db": 624,
    "constant/gaussian_20db": 625,
    "constant/gaussian_25db": 624,
    "constant/gaussian_dynamic_gain": 455,
    "constant/pulse_20db": 232,
    "constant/triangle_20db": 493,
    "reactive/cos_nlos": 509,
    "reactive/gaussian_additional_devices": 537,
    "reactive/gaussian_los": 1151,
    "reactive/gaussian_nlos": 524,
    "reactive/square_nlos": 752,
    "reactive/triangle_nlos": 531,
    "random/cos_dynamic_gain": 559,
    "random/pulse_dynamic_gain": 680,
    "random/sawtooth_dynamic_gain": 1128,
    "random/triangle_dynamic_gain": 541,
}

# Simulator waveform name -> taxonomy waveform tag
WAVEFORM_TAGS = {
    "awgn": "gaussian",
    "cos": "cos",
    "sine": "cos",
    "triangle": "triangle",
    "pulse": "pulse",
    "sawtooth": "sawtooth",
    "square": "square",
}

# Protocol
TRAIN_RATIO = 0.7
CV_FOLDS = 10
STD_FLOOR = 1e-12

# Feature selection
SELECTED_FEATURES = 20
VOTE_WEIGHT_PCA = 0.5
VOTE_WEIGHT_MI = 0.5
PCA_VARIANCE_TARGET = 0.95
MI_MAX_BINS = 64

# Learners and comparison models
ALGORITHMS = ("knn", "dt", "lstm", "svm", "mlp", "rf")
BASELINES = ("comp1", "comp2", "comp3")

DEFAULT_HYPERPARAMETERS = {
    "knn": {"k": 10, "weight": "distance", "metric": "euclidean"},
    "dt": {"max_depth": 15, "min_samples_split": 10, "criterion": "entropy"},
    "lstm": {
        "layers": 2,
        "hidden": 50,
        "lr": 0.001,
        "batch": 128,
        "loss": "cross-entropy",
        "window": 10,
        "epochs": 50,
    },
    "svm": {"kernel": "rbf", "C": 1.0, "gamma": "scale", "tol": 1e-3, "max_passes": 10000},
    "mlp": {
        "hidden": [100, 50, 25],
        "activation": "relu",
        "output": "softmax",
        "lr": 0.01,
        "batch": 128,
        "loss": "cross-entropy",
        "epochs": 50,
    },
    "rf": {
        "trees": 150,
        "max_depth": 20,
        "min_samples_split": 5,
        "criterion": "gini",
        "max_features": "sqrt",
        "n_jobs": 1,
    },
    "comp1": {"hidden": [453, 207, 374], "activation": "relu", "output": "softmax",
              "lr": 0.001, "batch": 128, "dropout": 0.0, "epochs": 50},
    "comp2": {"hidden": [128, 128], "activation": "relu", "output": "softmax",
              "lr": 0.001, "batch": 128, "dropout": 0.0, "epochs": 50,
              "svm_C": 1.0, "svm_gamma": "scale"},
    "comp3": {"hidden": [1000, 1000, 1000, 1000, 1000], "activation": "relu", "output": "softmax",
              "lr": 0.01, "batch": 64, "dropout": 0.3, "epochs": 50},
}

EARLY_STOP_DELTA = 1e-5
EARLY_STOP_PATIENCE = 5
ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8
LSTM_FORGET_BIAS = 1.0
GRADIENT_CHECK_STEP = 1e-5
DECISION_THRESHOLD = 0.5  # score >= threshold -> attack
INFERENCE_REPETITIONS = 3
MODEL_FORMAT_VERSION = 1

# Labeling
KMEANS_MAX_ITER = 300
EM_MAX_ITER = 200
EM_TOLERANCE = 1e-6
VARIANCE_FLOOR = 1e-6
# Features that rise under jamming; the labeler calls the component higher on them the attack
DISTRESS_FEATURES = [
    "channel_energy_dbm",
    "channel_busy_fraction",
    "tx_retries",
    "tx_failed",
    "rx_fcs_errors",
    "retry_ratio",
    "fcs_error_ratio",
    "loss_fraction",
    "probe_loss_fraction",
]

# AutoCM
DEFAULT_THRESHOLDS = {
    "knn": 0.91,
    "dt": 0.925,
    "lstm": 0.905,
    "svm": 0.90,
    "mlp": 0.915,
    "rf": 0.91,
}
WINDOW_SIZE = 200  # ticks (100 s)
MIN_BUFFER = 2000  # ticks
BUFFER_CAPACITY = 4000
SELECTION_TIE_TOLERANCE = 1e-9
DEFAULT_SELECTION_RULE = "f1_latency"
REPORT_SCHEMA_VERSION = 1
REPORT_METRICS = ["precision", "recall", "f1", "detection_rate", "far", "mdr"]

# Simulator: every generative coefficient lives here so it can be re-fit
# against recorded telemetry without touching simulator code.
SIMULATOR_PARAMS = {
    "tick_s": 0.5,
    "ambient_noise_dbm": -95.0,
    "legitimate_signal_dbm": -55.0,
    "shadowing_sigma_db": 1.5,
    "distance_m": 6.0,
    "reference_loss_db": 40.0,  # free space at 1 m, 2.4 GHz
    "path_loss_exponent": {"los": 2.0, "nlos": 3.0},
    "nlos_penalty_db": 10.0,
    "waveform_offset_db": {
        "awgn": 0.0,
        "cos": -3.0,
        "sine": -3.0,
        "triangle": -4.8,
        "sawtooth": -4.8,
        "square": -1.0,
    },
    "pulse_duty": 0.25,
    "random_mean_on_s": 2.0,
    "random_mean_off_s": 5.0,
    "reactive_threshold_dbm": -65.0,
    "traffic_duty": 0.8,
    "per_midpoint_db": 12.0,
    "per_slope_db": 2.0,
    "offered_load_mbps": 1.0,
    "packet_bytes": 1000,
    "retry_limit": 7,
    "base_rtt_ms": 3.0,
    "slot_rtt_ms": 2.5,
    "max_phy_rate_mbps": 144.4,
    "cca_threshold_dbm": -62.0,  # energy detect for non-802.11 signals
    "beacons_per_tick": 5,
    "tx_power_dbm": 20.0,
}

# Per-feature Gaussian measurement noise (standard deviation, feature units)
FEATURE_NOISE = {
    "rssi_dbm": 1.0,
    "snr_db": 1.0,
    "noise_floor_dbm": 1.0,
    "channel_busy_fraction": 0.02,
    "tx_phy_rate_mbps": 3.0,
    "rx_phy_rate_mbps": 3.0,
    "signal_avg_dbm": 0.8,
    "beacon_rssi_dbm": 1.2,
    "channel_energy_dbm": 1.0,
    "cca_busy_ms": 10.0,
    "tx_power_dbm": 0.2,
    "mcs_index": 0.3,
    "tx_packets": 2.0,
    "rx_packets": 2.0,
    "tx_bytes": 2000.0,
    "rx_bytes": 2000.0,
    "tx_retries": 1.5,
    "tx_failed": 0.5,
    "rx_fcs_errors": 1.5,
    "rx_dropped": 0.5,
    "beacon_loss": 0.3,
    "ack_timeouts": 1.0,
    "retry_ratio": 0.02,
    "fcs_error_ratio": 0.02,
    "rts_failures": 0.5,
    "tx_airtime_ms": 5.0,
    "rx_airtime_ms": 5.0,
    "inactive_time_ms": 10.0,
    "udp_throughput_up_mbps": 0.02,
    "udp_throughput_down_mbps": 0.02,
    "probe_rtt_mean_ms": 0.5,
    "probe_rtt_p95_ms": 0.8,
    "probe_rtt_min_ms": 0.3,
    "jitter_ms": 0.3,
    "loss_fraction": 0.01,
    "offered_load_mbps": 0.01,
    "reorder_rate": 0.005,
    "probe_loss_fraction": 0.02,
    "goodput_ratio": 0.01,
    "out_of_order_packets": 0.5,
}
