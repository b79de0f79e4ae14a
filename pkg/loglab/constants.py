#!/usr/bin/env python3

#
# Created: Oct 2026
# License: Apache license
#


# Parsing constants/defaults
class ParserDefaults:
    # the tokenizer splits on these symbols plus any whitespace
    SEPARATORS = ".,:/"
    # same as the drain3 parameter string (mask_prefix + "*" + mask_suffix)
    WILDCARD = "<*>"
    HEX_PLACEHOLDER = "[HEX]"
    NUM_PLACEHOLDER = "[NUM]"
    # decimal integers >= this value become NUM_PLACEHOLDER
    NUM_MIN_VALUE = 10
    # a bare hex literal needs at least this many chars (and one letter) to become HEX_PLACEHOLDER
    HEX_MIN_LENGTH = 4

    # drain3 miner
    SIMILARITY_THRESHOLD = 0.5
    # drain3 depth: root -> token count -> first token -> leaf
    TREE_DEPTH = 4
    MAX_CHILDREN = 100


# Taxonomy constants/defaults
class TaxonomyDefaults:
    CONTEXT_BEFORE = 10
    CONTEXT_AFTER = 0
    THRESHOLDS = [0.6, 0.7, 0.8, 0.9, 1.0]
    ATTRIBUTE_SCOPE = "corpus"
    ALLOWED_ATTRIBUTE_SCOPES = ["corpus", "slot"]
    TYPES = ["template", "attribute", "contextual"]


# Weak labeling constants/defaults
class WeakLabelDefaults:
    DELTAS_MS = [1000, 5000, 15000]
    ALLOWED_WINDOW_SIDES = ["symmetric", "before"]


# PU-learning encoder constants/defaults
class ModelDefaults:
    MAX_LEN = 12
    EMBED_DIM = 128
    HIDDEN_DIM = 256
    N_LAYERS = 1
    N_HEADS = 2
    DROPOUT_RATE = 0.1
    BATCH_SIZE = 1024
    EPOCHS = 8
    LEARNING_RATE = 1e-4
    WEIGHT_DECAY = 5e-5
    DECISION_THRESHOLD_MODE = "crossover"

    # clamp of the norm inside q^2/||z||
    EPSILON = 1e-6

    CLS_TOKEN = "[CLS]"
    PAD_TOKEN = "[PAD]"
    UNK_TOKEN = "[UNK]"
    # order defines the ids 0..4 of the special tokens
    SPECIAL_TOKENS = [PAD_TOKEN, CLS_TOKEN, UNK_TOKEN, ParserDefaults.HEX_PLACEHOLDER, ParserDefaults.NUM_PLACEHOLDER]

    CHECKPOINT_FORMAT_VERSION = 1


# Root-cause analysis constants/defaults
class RcaDefaults:
    DELTA_MS = 1000
    WINDOW_SIDE = "before"
    DISTANCE_THRESHOLD = 0.5
    BINARY_VECTORS = False
    TOP_N = 3


# Synthetic corpus constants/defaults
class SyntheticDefaults:
    N_LINES = 10000
    ANOMALY_RATE = 0.05
    MIX = {"template": 0.5, "attribute": 0.5, "contextual": 0.0}
    BASE_PERIOD_MS = 200.0
    START_MS = 1117838570000
    N_CAUSES = 0
    INCIDENTS_PER_CAUSE = 10
    BURST_LEN = 12
    # burst lines arrive this many times faster than the background traffic
    BURST_SPEEDUP = 10.0
    MIX_TOLERANCE = 1e-9

    NORMAL_SOURCES = ["svc-api", "svc-db", "svc-cache", "svc-auth", "svc-web"]

    # normal workflow: traffic cycles through these skeletons in order; '*' marks a slot
    NORMAL_VOCAB = [
        {
            "skeleton": "Start * service at node *",
            "slots": [["mail", "printer", "dns", "ntp", "ldap"], ["wally001", "wally002", "wally003", "wally005"]],
            "abnormal_values": ["quarantined", "zombie"],
        },
        {
            "skeleton": "Receive package * from *",
            "slots": [["alpha", "beta", "gamma", "delta"], ["wally001", "wally002", "wally003", "wally005"]],
            "abnormal_values": ["truncated", "garbled"],
        },
        {
            "skeleton": "Send package * to *",
            "slots": [["alpha", "beta", "gamma", "delta"], ["wally001", "wally002", "wally003", "wally005"]],
            "abnormal_values": ["blackhole", "loopback"],
        },
        {
            "skeleton": "User * logged in from *",
            "slots": [["alice", "bob", "carol", "dave"], ["console", "ssh", "web"]],
            "abnormal_values": ["intruder", "unknownuser"],
        },
        {
            "skeleton": "Job * completed on *",
            "slots": [["backup", "report", "rotate", "sync"], ["wally001", "wally002", "wally003", "wally005"]],
            "abnormal_values": ["aborted", "orphaned"],
        },
        {
            "skeleton": "Heartbeat ok from *",
            "slots": [["wally001", "wally002", "wally003", "wally005"]],
            "abnormal_values": ["wally666"],
        },
        {
            "skeleton": "Cache flush on * took * ms",
            "slots": [["wally001", "wally002", "wally003", "wally005"], ["12", "35", "48", "77"]],
            "abnormal_values": ["forever", "timeout"],
        },
        {
            "skeleton": "End * service at node *",
            "slots": [["mail", "printer", "dns", "ntp", "ldap"], ["wally001", "wally002", "wally003", "wally005"]],
            "abnormal_values": ["crashed", "hung"],
        },
    ]

    # template anomalies use skeletons absent from the normal workflow
    ANOMALY_VOCAB = [
        {"skeleton": "FATAL kernel panic on node *", "slots": [["wally001", "wally002", "wally003"]]},
        {"skeleton": "Machine check interrupt on core *", "slots": [["cpu0", "cpu1", "cpu2"]]},
        {"skeleton": "ciod failed to read message prefix on control stream", "slots": []},
        {"skeleton": "Uncorrectable ECC error in bank *", "slots": [["bankA", "bankB", "bankC"]]},
    ]

    # root-cause signatures: disjoint service sets, one cause-line skeleton each
    CAUSES = [
        {
            "name": "disk",
            "services": ["storage-a", "storage-b", "raid-ctl"],
            "skeleton": "Disk array degraded on controller *",
            "slots": [["ctl0", "ctl1"]],
        },
        {
            "name": "network",
            "services": ["switch-core", "router-edge", "dns-relay"],
            "skeleton": "Link flap detected on uplink *",
            "slots": [["eth0", "eth1"]],
        },
        {
            "name": "memory",
            "services": ["mem-ctl", "numa-mgr", "oom-killer"],
            "skeleton": "Out of memory killed process *",
            "slots": [["httpd", "postgres"]],
        },
    ]


# Exit codes of the command-line tool
class ExitCodes:
    SUCCESS = 0
    CONFIG_ERROR = 2
    DATA_ERROR = 3
    NUMERIC_ERROR = 4


# Generic app constants/defaults
class MiscAppDefaults:
    THIS_APP_NAME = "loglab-toolkit"

    # File paths constants
    CONFIG_FILE = "loglab.yaml"
    OUTPUT_DIR = "loglab-output"

    # Misc constants
    SEED = 42
    THREADS = 1
    LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
