"""Sleep-stage vocabulary shared by every module."""

CLASSES = ("W", "N1", "N2", "N3", "REM")
N_CLASSES = len(CLASSES)
MASK = -1
MASK_TOKEN = "MASK"

# raw hypnogram tokens; N4 and the non-sleep-stage tokens are resolved by harmonize_labels
RAW_STAGES = ("W", "N1", "N2", "N3", "N4", "REM", "MOVEMENT", "UNKNOWN")
RAW_ALIASES = {"R": "REM", "WAKE": "W", "MT": "MOVEMENT", "?": "UNKNOWN"}


def class_index(token):
    if token == MASK_TOKEN:
        return MASK
    return CLASSES.index(token)


def class_token(index):
    return MASK_TOKEN if index == MASK else CLASSES[index]
