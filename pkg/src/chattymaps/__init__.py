"""Urban sound, emotion, diversity and perception maps from geo-tagged photo tags."""

__version__ = "0.1.0"

from chattymaps.constants import (
    EMOTIONS,
    PERCEPTIONS,
    SOUND_CATEGORIES,
    SOUNDWALK_SOUNDS,
    STREET_TYPES,
)

__all__ = [
    "__version__",
    "EMOTIONS",
    "PERCEPTIONS",
    "SOUND_CATEGORIES",
    "SOUNDWALK_SOUNDS",
    "STREET_TYPES",
]
