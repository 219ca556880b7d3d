"""Category vocabularies shared across the pipeline.

Orders here are load-bearing: they fix column order in every output file and
act as the tie-break order for argmax labels.
"""

SOUND_CATEGORIES = ("transport", "mechanical", "human", "music", "nature", "indoor")

EMOTIONS = (
    "anger",
    "fear",
    "anticipation",
    "trust",
    "surprise",
    "sadness",
    "joy",
    "disgust",
)

# OSM highway values of the eight most frequent street types
STREET_TYPES = (
    "footway",
    "residential",
    "pedestrian",
    "track",
    "primary",
    "secondary",
    "tertiary",
    "construction",
)
OTHER_STREET_TYPE = "other"

SOUNDWALK_SOUNDS = ("traffic", "individuals", "crowds", "nature", "other")

PERCEPTIONS = (
    "pleasant",
    "chaotic",
    "vibrant",
    "uneventful",
    "calm",
    "annoying",
    "eventful",
    "monotonous",
)

INSUFFICIENT = "insufficient"
UNCLASSIFIED = "unclassified"

DEFAULT_BUFFER_M = 22.5
DEFAULT_MIN_TAGS = 5
DEFAULT_MIN_COUNT = 100
DEFAULT_SIZE_THRESHOLD = 50
